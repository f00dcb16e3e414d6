use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Element-wise mean of per-camera embeddings of one observation.
pub fn average_views<V: AsRef<[f64]>>(views: &[V]) -> Result<Vec<f64>> {
    let first = views.first().ok_or_else(|| Error::Argument("average_views needs at least one view".into()))?;
    let dim = first.as_ref().len();
    let mut sum = vec![0.0f64; dim];
    for (i, v) in views.iter().enumerate() {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::Argument(format!("view {i} has length {}, expected {dim}", v.len())));
        }
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let k = views.len() as f64;
    sum.iter_mut().for_each(|s| *s /= k);
    Ok(sum)
}

/// Frame-wise [`average_views`] over whole per-view embedding matrices.
pub fn average_view_matrices(views: &[Matrix<f32>]) -> Result<Matrix<f32>> {
    let first = views.first().ok_or_else(|| Error::Argument("average_view_matrices needs at least one view".into()))?;
    if views.iter().any(|v| v.rows() != first.rows() || v.cols() != first.cols()) {
        return Err(Error::Argument("views differ in shape".into()));
    }
    let mut out = Matrix::zeros(first.rows(), first.cols());
    let mut buf: Vec<Vec<f64>> = vec![Vec::new(); views.len()];
    for i in 0..first.rows() {
        for (b, v) in buf.iter_mut().zip(views) {
            b.clear();
            b.extend(v.row(i).iter().map(|&x| x as f64));
        }
        let mean = average_views(&buf)?;
        for (o, m) in out.row_mut(i).iter_mut().zip(mean) {
            *o = m as f32;
        }
    }
    Ok(out)
}
