use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Per-frame distance between embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    L2,
    SquaredL2,
}

impl Metric {
    #[inline]
    pub fn from_squared(self, sq: f64) -> f64 {
        match self {
            Metric::L2 => sq.sqrt(),
            Metric::SquaredL2 => sq,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Metric::L2),
            "squared_l2" | "squared-l2" | "sql2" => Ok(Metric::SquaredL2),
            other => Err(Error::Argument(format!("unknown metric `{other}` (expected l2 or squared_l2)"))),
        }
    }
}

/// Pairwise costs between a query (rows) and a reference sequence (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(pub(crate) Matrix<f64>);

impl CostMatrix {
    pub fn from_matrix(values: Matrix<f64>) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::Argument("cost matrix must be non-empty".into()));
        }
        if values.as_slice().iter().any(|v| !(*v >= 0.0) || v.is_infinite()) {
            return Err(Error::Argument("cost matrix entries must be finite and non-negative".into()));
        }
        Ok(Self(values))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::from_matrix(Matrix::from_rows(rows)?)
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix<f64> {
        &self.0
    }

    /// Columns `start..end` as a new cost matrix.
    pub fn columns(&self, start: usize, end: usize) -> CostMatrix {
        let mut m = Matrix::zeros(self.rows(), end - start);
        for i in 0..self.rows() {
            m.row_mut(i).copy_from_slice(&self.0.row(i)[start..end]);
        }
        CostMatrix(m)
    }
}

#[inline]
pub(crate) fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            let d = x[k] as f64 - y[k] as f64;
            acc[k] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        let d = *x as f64 - *y as f64;
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Fills `out` (n x m, row-major) with costs between rows of `query` and `reference`.
pub(crate) fn fill_costs(query: &[f32], reference: &[f32], dim: usize, metric: Metric, out: &mut Vec<f64>) {
    out.clear();
    for q in query.chunks_exact(dim) {
        out.extend(reference.chunks_exact(dim).map(|r| metric.from_squared(squared_distance(q, r))));
    }
}

pub fn cost_matrix(target: &Matrix<f32>, prior: &Matrix<f32>, metric: Metric) -> Result<CostMatrix> {
    if target.cols() != prior.cols() {
        return Err(Error::Argument(format!("embedding dimensions differ: {} vs {}", target.cols(), prior.cols())));
    }
    if target.rows() == 0 || prior.rows() == 0 {
        return Err(Error::Argument("cost matrix inputs must be non-empty".into()));
    }
    let mut values = Vec::with_capacity(target.rows() * prior.rows());
    fill_costs(target.as_slice(), prior.as_slice(), target.cols(), metric, &mut values);
    Ok(CostMatrix(Matrix::from_vec(target.rows(), prior.rows(), values)?))
}

/// Copy of `m` with every row scaled to unit L2 norm; zero rows stay zero.
pub fn normalize_rows(m: &Matrix<f32>) -> Matrix<f32> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
        }
    }
    out
}
