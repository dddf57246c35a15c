//! Minimum-cost rectangular assignment (Hungarian method with potentials).

use crate::error::{Error, Result};

/// Assigns each row of the `rows × cols` cost matrix (`rows ≤ cols`, row-major)
/// to a distinct column minimizing the total cost. Returns the column of each row.
pub fn min_cost_assignment(cost: &[f64], rows: usize, cols: usize) -> Result<Vec<usize>> {
    if cost.len() != rows * cols {
        return Err(Error::DimensionMismatch { context: "assignment cost", expected: rows * cols, got: cost.len() });
    }
    if rows > cols {
        return Err(Error::InvalidInput(format!("assignment needs rows <= cols, got {rows} x {cols}")));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("assignment costs must be finite".into()));
    }
    if rows == 0 {
        return Ok(Vec::new());
    }
    // 1-based potentials; p[j] is the row matched to column j
    let c = |i: usize, j: usize| cost[(i - 1) * cols + (j - 1)];
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = c(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; rows];
    for j in 1..=cols {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    Ok(out)
}

/// Maximum-score assignment, via costs `max − score`.
pub fn max_score_assignment(score: &[f64], rows: usize, cols: usize) -> Result<Vec<usize>> {
    let top = score.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cost: Vec<f64> = score.iter().map(|s| top - s).collect();
    min_cost_assignment(&cost, rows, cols)
}

pub fn assignment_cost(cost: &[f64], cols: usize, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &j)| cost[i * cols + j]).sum()
}
