//! Reference linear-programming solver used to cross-check the transport
//! code. Dense tableau, two phases, Bland's rule. Slow but simple enough to
//! trust; only meant for small instances.

use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;

const EPS: f64 = 1e-11;

/// Minimizes `c.x` subject to `a x = b`, `x >= 0`. `a` is row-major with
/// `b.len()` rows. Returns the optimal value, or `None` if infeasible.
/// The problem is assumed bounded (true for transport problems).
pub fn simplex_min(c: &[f64], a: &[f64], b: &[f64]) -> Option<f64> {
    let m = b.len();
    let n = c.len();
    assert_eq!(a.len(), m * n);
    // tableau columns: n structural, m artificial, rhs
    let width = n + m + 1;
    let mut t = vec![0.0; m * width];
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i * width + j] = sign * a[i * n + j];
        }
        t[i * width + n + i] = 1.0;
        t[i * width + n + m] = sign * b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    // phase 1: minimize the sum of artificials
    let mut cost1 = vec![0.0; n + m];
    cost1[n..].iter_mut().for_each(|v| *v = 1.0);
    run_phase(&mut t, &mut basis, &cost1, m, width, n + m);
    let infeas: f64 = basis
        .iter()
        .enumerate()
        .filter(|(_, &j)| j >= n)
        .map(|(i, _)| t[i * width + n + m])
        .sum();
    if infeas > 1e-9 {
        return None;
    }
    // drive remaining (zero-level) artificials out of the basis where possible
    for i in 0..m {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[i * width + j].abs() > EPS) {
                pivot(&mut t, &mut basis, i, j, m, width);
            }
        }
    }

    // phase 2, artificial columns frozen
    let mut cost2 = vec![0.0; n + m];
    cost2[..n].copy_from_slice(c);
    run_phase(&mut t, &mut basis, &cost2, m, width, n);
    let value = basis
        .iter()
        .enumerate()
        .map(|(i, &j)| if j < n { c[j] * t[i * width + n + m] } else { 0.0 })
        .sum();
    Some(value)
}

fn run_phase(t: &mut [f64], basis: &mut [usize], cost: &[f64], m: usize, width: usize, allowed: usize) {
    let rhs = width - 1;
    for _ in 0..100_000 {
        // Bland: lowest-index column with negative reduced cost
        let mut enter = None;
        for j in 0..allowed {
            if basis.contains(&j) {
                continue;
            }
            let mut rc = cost[j];
            for i in 0..m {
                rc -= cost[basis[i]] * t[i * width + j];
            }
            if rc < -EPS {
                enter = Some(j);
                break;
            }
        }
        let Some(j) = enter else { return };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let aij = t[i * width + j];
            if aij > EPS {
                let ratio = t[i * width + rhs] / aij;
                match leave {
                    Some((_, r)) if ratio > r + EPS => {}
                    Some((l, r)) if (ratio - r).abs() <= EPS && basis[i] > basis[l] => {}
                    _ => leave = Some((i, ratio)),
                }
            }
        }
        let Some((i, _)) = leave else { return };
        pivot(t, basis, i, j, m, width);
    }
}

fn pivot(t: &mut [f64], basis: &mut [usize], row: usize, col: usize, m: usize, width: usize) {
    let pv = t[row * width + col];
    for k in 0..width {
        t[row * width + k] /= pv;
    }
    for i in 0..m {
        if i == row {
            continue;
        }
        let f = t[i * width + col];
        if f != 0.0 {
            for k in 0..width {
                t[i * width + k] -= f * t[row * width + k];
            }
        }
    }
    basis[row] = col;
}

/// Optimal transport cost between weight vectors by the simplex method.
pub fn transport_lp(supply: &[f64], demand: &[f64], cost: &[f64]) -> Option<f64> {
    let m = supply.len();
    let n = demand.len();
    let vars = m * n;
    // all row constraints plus all but the last column constraint (one is redundant)
    let rows = m + n - 1;
    let mut a = vec![0.0; rows * vars];
    let mut b = Vec::with_capacity(rows);
    for i in 0..m {
        for j in 0..n {
            a[i * vars + i * n + j] = 1.0;
        }
        b.push(supply[i]);
    }
    for j in 0..n - 1 {
        for i in 0..m {
            a[(m + j) * vars + i * n + j] = 1.0;
        }
        b.push(demand[j]);
    }
    simplex_min(cost, &a, &b)
}

/// p-Wasserstein distance via [`transport_lp`]; any dimension.
pub fn wasserstein_lp(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
    }
    let cost = crate::measures::transport::cost_matrix(mu, nu, p);
    let v = transport_lp(mu.weights(), nu.weights(), &cost)
        .ok_or_else(|| Error::InvalidMeasure("transport problem infeasible".into()))?;
    Ok(v.max(0.0).powf(1.0 / p))
}
