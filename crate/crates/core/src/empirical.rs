//! Equal-weight empirical measures and exact optimal transport between them.
//!
//! Both measures carry `N` atoms of mass `1/N`, so an optimal coupling can be
//! taken to be a permutation and the transport problem is a linear
//! assignment problem.

use serde::Serialize;

use crate::{Error, Result};

/// Default cap on the support size handed to the assignment solver.
pub const DEFAULT_ASSIGNMENT_CAP: usize = 2048;

/// `(1/N) Σ_j δ_{x_j}` stored as a flat row-major point array.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dim", "must be at least 1"));
        }
        if points.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        if !points.len().is_multiple_of(dim) {
            return Err(Error::param(
                "points",
                format!(
                    "{} coordinates do not split into dimension {dim}",
                    points.len()
                ),
            ));
        }
        Ok(EmpiricalMeasure { dim, points })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().ok_or(Error::EmptySampleSet)?.len();
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            flat.extend_from_slice(p);
        }
        Self::new(dim, flat)
    }

    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(1, values.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    /// Mean of `f` over the atoms, summed in sorted order so the value is
    /// exactly invariant under relabelling of the points.
    pub fn sorted_mean(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        let mut vals: Vec<f64> = self.points().map(f).collect();
        vals.sort_by(f64::total_cmp);
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

fn check_pair(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim,
            got: b.dim,
        });
    }
    if a.len() != b.len() {
        return Err(Error::UnequalSupport(a.len(), b.len()));
    }
    Ok(())
}

fn check_exponent(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::param(
            "p",
            format!("Wasserstein exponent must be >= 1, got {p}"),
        ))
    }
}

fn distance(x: &[f64], y: &[f64]) -> f64 {
    if x.len() == 1 {
        return (x[0] - y[0]).abs();
    }
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Minimal `(1/N) Σ |a_(k) - b_(k)|^p` in one dimension, by sorted matching.
pub fn transport_cost_1d(p: f64, a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    check_pair(a, b)?;
    if a.dim != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: a.dim,
        });
    }
    let mut xs = a.points.clone();
    let mut ys = b.points.clone();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let total: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - y).abs().powf(p)).sum();
    Ok(total / xs.len() as f64)
}

pub fn wasserstein_1d(p: f64, a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    check_exponent(p)?;
    Ok(transport_cost_1d(p, a, b)?.powf(1.0 / p))
}

/// Optimal `(1/N) min_σ Σ_j |a_j - b_σ(j)|^p` for any `p > 0`.
///
/// For `p < 1` this is a transport cost, not the p-th power of a metric.
pub fn transport_cost(
    p: f64,
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    cap: usize,
) -> Result<f64> {
    check_pair(a, b)?;
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::param("p", format!("must be positive, got {p}")));
    }
    let n = a.len();
    if n > cap {
        return Err(Error::AssignmentTooLarge { size: n, cap });
    }
    let mut cost = Vec::with_capacity(n * n);
    for x in a.points() {
        for y in b.points() {
            cost.push(distance(x, y).powf(p));
        }
    }
    let assignment = solve_assignment(&cost, n);
    // Sorted summation keeps the result independent of point order.
    let mut matched: Vec<f64> = assignment
        .iter()
        .enumerate()
        .map(|(row, &col)| cost[row * n + col])
        .collect();
    matched.sort_by(f64::total_cmp);
    Ok(matched.iter().sum::<f64>() / n as f64)
}

pub fn wasserstein_exact(p: f64, a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    wasserstein_exact_capped(p, a, b, DEFAULT_ASSIGNMENT_CAP)
}

pub fn wasserstein_exact_capped(
    p: f64,
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    cap: usize,
) -> Result<f64> {
    check_exponent(p)?;
    Ok(transport_cost(p, a, b, cap)?.powf(1.0 / p))
}

/// Cost of the index-aligned coupling `(1/N) Σ δ_{(a_j, b_j)}`, an upper
/// bound for the Wasserstein distance.
pub fn coupling_upper_bound(p: f64, a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    check_pair(a, b)?;
    check_exponent(p)?;
    let total: f64 = a
        .points()
        .zip(b.points())
        .map(|(x, y)| distance(x, y).powf(p))
        .sum();
    Ok((total / a.len() as f64).powf(1.0 / p))
}

/// Minimum-cost perfect matching on a dense `n x n` cost matrix by
/// shortest augmenting paths with dual potentials, `O(n^3)`.
///
/// Returns `assignment[row] = col`. Ties are broken towards the lowest
/// column index.
pub fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Vec::new();
    }
    // 1-based indexing; column 0 is the virtual root of each search.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_slack = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];

    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0usize;
        min_slack.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|f| *f = false);
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if reduced < min_slack[j] {
                    min_slack[j] = reduced;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[col_owner[j] - 1] = j - 1;
    }
    assignment
}
