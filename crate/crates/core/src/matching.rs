//! Optimal one-to-one assignment and the per-keyframe box alignment score.

use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{box_iou, BBox};
use crate::{Error, Result};

/// Dense row-major cost matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix);
        }
        if entries.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                found: entries.len(),
            });
        }
        if let Some(i) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCost {
                row: i / cols,
                col: i % cols,
            });
        }
        Ok(CostMatrix { rows, cols, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::LengthMismatch {
                expected: cols,
                found: rows.iter().map(Vec::len).find(|&l| l != cols).unwrap_or(0),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.cols + col]
    }

    pub fn negated(&self) -> CostMatrix {
        CostMatrix {
            entries: self.entries.iter().map(|v| -v).collect(),
            ..*self
        }
    }
}

/// Matched `(row, col)` pairs, sorted by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

/// Minimum-cost matching of size `min(rows, cols)`.
///
/// Among equally cheap matchings the result is canonical: the lowest row is
/// given the lowest column that still admits an optimal completion, then the
/// next row, and so on. Canonicalization re-solves `O(rows * cols)`
/// sub-problems, which is cheap for the handful of boxes a keyframe carries.
pub fn hungarian(costs: &CostMatrix) -> Result<Assignment> {
    let (rows, cols) = (costs.rows, costs.cols);
    let all_rows: Vec<usize> = (0..rows).collect();
    let all_cols: Vec<usize> = (0..cols).collect();
    let optimum = sub_optimum(costs, &all_rows, &all_cols);
    let tol = 1e-9 * optimum.abs().max(1.0);

    let mut pairs = Vec::new();
    let mut fixed_cost = 0.0;
    let mut free_cols = all_cols;
    for r in 0..rows {
        let later_rows: Vec<usize> = (r + 1..rows).collect();
        let need = rows.min(cols) - pairs.len();
        if need == 0 {
            break;
        }
        let mut chosen = None;
        for (k, &c) in free_cols.iter().enumerate() {
            let mut rest_cols = free_cols.clone();
            rest_cols.remove(k);
            let candidate = fixed_cost + costs.get(r, c) + sub_optimum(costs, &later_rows, &rest_cols);
            if (candidate - optimum).abs() <= tol {
                chosen = Some(k);
                break;
            }
        }
        // No column works only when leaving this row unmatched is optimal,
        // which requires enough rows below it.
        if let Some(k) = chosen {
            let c = free_cols.remove(k);
            fixed_cost += costs.get(r, c);
            pairs.push((r, c));
        }
    }
    let total_cost = pairs.iter().map(|&(r, c)| costs.get(r, c)).sum();
    Ok(Assignment { pairs, total_cost })
}

/// Optimal cost of matching `min(|rows|, |cols|)` pairs within the given
/// sub-matrix.
fn sub_optimum(costs: &CostMatrix, rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    let (n, m, transposed) = if rows.len() <= cols.len() {
        (rows.len(), cols.len(), false)
    } else {
        (cols.len(), rows.len(), true)
    };
    let at = |i: usize, j: usize| {
        if transposed {
            costs.get(rows[j], cols[i])
        } else {
            costs.get(rows[i], cols[j])
        }
    };
    let assigned = solve_potentials(n, m, at);
    assigned.iter().enumerate().map(|(i, &j)| at(i, j)).sum()
}

/// Shortest augmenting path Hungarian algorithm with row/column potentials
/// for an `n x m` problem, `n <= m`. Returns the column of each row.
fn solve_potentials(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based internally; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            col_of[owner[j] - 1] = j - 1;
        }
    }
    col_of
}

/// Pairwise IoU between predicted (rows) and ground-truth (cols) boxes.
pub fn iou_matrix(pred: &[BBox], gt: &[BBox]) -> Result<CostMatrix> {
    let entries = pred
        .iter()
        .flat_map(|p| gt.iter().map(move |g| box_iou(p, g)))
        .collect();
    CostMatrix::new(pred.len(), gt.len(), entries)
}

/// One minus the Hungarian matching loss for a single keyframe: the IoU
/// of the optimal matching divided by `max(|pred|, |gt|)`, so both missed
/// targets and spurious boxes cost score.
pub fn frame_alignment_score(pred: &[BBox], gt: &[BBox]) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let ious = iou_matrix(pred, gt)?;
    let assignment = hungarian(&ious.negated())?;
    let matched: f64 = assignment.pairs.iter().map(|&(r, c)| ious.get(r, c)).sum();
    Ok((matched / pred.len().max(gt.len()) as f64).clamp(0.0, 1.0))
}

/// Mean alignment score over the `K` keyframes.
pub fn alignment_reward(detections: &[Vec<BBox>], gt: &[Vec<BBox>]) -> Result<f64> {
    if detections.is_empty() {
        return Err(Error::NoKeyframes);
    }
    if detections.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            found: detections.len(),
        });
    }
    let mut sum = 0.0;
    for (p, g) in detections.iter().zip(gt) {
        sum += frame_alignment_score(p, g)?;
    }
    Ok(sum / detections.len() as f64)
}
