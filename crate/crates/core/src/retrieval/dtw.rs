//! Full and subsequence dynamic time warping over a precomputed cost matrix.
//!
//! Both use `D(i, j) = C(i, j) + min(D(i-1, j), D(i, j-1), D(i-1, j-1))`.
//! Full DTW accumulates along the first row; the subsequence variant sets
//! `D(0, j) = C(0, j)` so an alignment may start at any reference frame, and
//! takes its value as the minimum of the last row. Backtracking prefers the
//! diagonal, then the vertical, then the horizontal predecessor.

use super::cost::CostMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub value: f64,
    /// Warping path from `(0, 0)` to `(n-1, m-1)`.
    pub path: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsequenceAlignment {
    pub value: f64,
    /// Half-open span `[start, end)` of matched reference frames.
    pub span: (usize, usize),
    /// Warping path from `(0, start)` to `(n-1, end-1)`.
    pub path: Vec<(usize, usize)>,
}

/// Turns a row-major cost buffer into the cumulative cost matrix in place.
pub(crate) fn accumulate(d: &mut [f64], rows: usize, cols: usize, free_start: bool) {
    debug_assert_eq!(d.len(), rows * cols);
    if !free_start {
        for j in 1..cols {
            d[j] += d[j - 1];
        }
    }
    for i in 1..rows {
        let (prev, cur) = d[(i - 1) * cols..(i + 1) * cols].split_at_mut(cols);
        cur[0] += prev[0];
        for j in 1..cols {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] += best;
        }
    }
}

/// Leftmost minimum of the last row.
pub(crate) fn best_end(d: &[f64], rows: usize, cols: usize) -> (usize, f64) {
    let last = &d[(rows - 1) * cols..rows * cols];
    let mut best = (0, last[0]);
    for (j, &v) in last.iter().enumerate().skip(1) {
        if v < best.1 {
            best = (j, v);
        }
    }
    best
}

/// Walks back from `(rows-1, end)`. Stops at `(0, 0)` for full DTW and at row 0
/// for the subsequence variant. Calls `visit` on each cell, last cell first.
pub(crate) fn backtrack(
    d: &[f64],
    cols: usize,
    rows: usize,
    end: usize,
    free_start: bool,
    mut visit: impl FnMut(usize, usize),
) {
    let (mut i, mut j) = (rows - 1, end);
    visit(i, j);
    loop {
        if i == 0 && (free_start || j == 0) {
            break;
        }
        if i == 0 {
            j -= 1;
        } else if j == 0 {
            i -= 1;
        } else {
            let diag = d[(i - 1) * cols + j - 1];
            let up = d[(i - 1) * cols + j];
            let left = d[i * cols + j - 1];
            if diag <= up && diag <= left {
                i -= 1;
                j -= 1;
            } else if up <= left {
                i -= 1;
            } else {
                j -= 1;
            }
        }
        visit(i, j);
    }
}

pub fn dtw(cost: &CostMatrix) -> Alignment {
    let (n, m) = (cost.rows(), cost.cols());
    let mut d = cost.as_matrix().as_slice().to_vec();
    accumulate(&mut d, n, m, false);
    let mut path = Vec::with_capacity(n + m);
    backtrack(&d, m, n, m - 1, false, |i, j| path.push((i, j)));
    path.reverse();
    Alignment { value: d[n * m - 1], path }
}

pub fn sdtw(cost: &CostMatrix) -> SubsequenceAlignment {
    let (n, m) = (cost.rows(), cost.cols());
    let mut d = cost.as_matrix().as_slice().to_vec();
    accumulate(&mut d, n, m, true);
    let (end, value) = best_end(&d, n, m);
    let mut path = Vec::with_capacity(n + m);
    backtrack(&d, m, n, end, true, |i, j| path.push((i, j)));
    path.reverse();
    SubsequenceAlignment { value, span: (path[0].1, end + 1), path }
}

/// Value and span only, reusing `buffer` (which must already hold the costs).
pub(crate) fn sdtw_span_in_place(buffer: &mut [f64], rows: usize, cols: usize) -> (f64, usize, usize) {
    accumulate(buffer, rows, cols, true);
    let (end, value) = best_end(buffer, rows, cols);
    let mut start = end;
    backtrack(buffer, cols, rows, end, true, |_, j| start = j);
    (value, start, end + 1)
}
