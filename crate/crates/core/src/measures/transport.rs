//! p-Wasserstein distances between finitely supported measures.
//!
//! * d = 1: exact, by coupling quantile functions.
//! * both supports <= [`EXACT_LP_MAX_ATOMS`]: exact, by solving the
//!   transportation problem with successive shortest paths.
//! * otherwise: sliced approximation over [`SLICED_PROJECTIONS`] fixed random
//!   directions. The sliced distance is a lower bound of the true one.

use rand::Rng;
use rand_distr::StandardNormal;

use super::empirical::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::rng;

pub const EXACT_LP_MAX_ATOMS: usize = 64;
pub const SLICED_PROJECTIONS: usize = 64;
const SLICED_SEED: u64 = 0x5EED_5EED;

/// Which algorithm [`wasserstein_p`] used for a given pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportMethod {
    Quantile,
    ExactLp,
    Sliced,
}

pub fn method_for(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> TransportMethod {
    if mu.dim() == 1 {
        TransportMethod::Quantile
    } else if mu.len() <= EXACT_LP_MAX_ATOMS && nu.len() <= EXACT_LP_MAX_ATOMS {
        TransportMethod::ExactLp
    } else {
        TransportMethod::Sliced
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::OutOfRange { name: "p", detail: format!("{p} must be finite and >= 1") });
    }
    Ok(())
}

pub fn wasserstein_p(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<f64> {
    check_p(p)?;
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
    }
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::EmptySupport);
    }
    let cost = match method_for(mu, nu) {
        TransportMethod::Quantile => quantile_cost(mu.sorted_atoms(), nu.sorted_atoms(), p),
        TransportMethod::ExactLp => {
            let c = cost_matrix(mu, nu, p);
            transport_cost(mu.weights(), nu.weights(), &c)
        }
        TransportMethod::Sliced => sliced_cost(mu, nu, p),
    };
    Ok(cost.max(0.0).powf(1.0 / p))
}

/// Exact p-th power of the Wasserstein distance, regardless of dimension or
/// support size. Cost grows cubically with the support.
pub fn exact_wasserstein_pow(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<f64> {
    check_p(p)?;
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
    }
    if mu.dim() == 1 {
        return Ok(quantile_cost(mu.sorted_atoms(), nu.sorted_atoms(), p));
    }
    let c = cost_matrix(mu, nu, p);
    Ok(transport_cost(mu.weights(), nu.weights(), &c))
}

pub(crate) fn cost_matrix(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Vec<f64> {
    let mut c = Vec::with_capacity(mu.len() * nu.len());
    for (x, _) in mu.iter() {
        for (y, _) in nu.iter() {
            let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            c.push(d2.sqrt().powf(p));
        }
    }
    c
}

/// `int_0^1 |F^-1(u) - G^-1(u)|^p du` for sorted weighted atoms.
pub(crate) fn quantile_cost(a: &[(f64, f64)], b: &[(f64, f64)], p: f64) -> f64 {
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut total = 0.0;
    loop {
        let step = ra.min(rb);
        if step > 0.0 {
            total += step * (a[i].0 - b[j].0).abs().powf(p);
        }
        ra -= step;
        rb -= step;
        if ra <= 0.0 {
            i += 1;
            if i == a.len() {
                break;
            }
            ra = a[i].1;
        }
        if rb <= 0.0 {
            j += 1;
            if j == b.len() {
                break;
            }
            rb = b[j].1;
        }
    }
    total
}

fn sliced_cost(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> f64 {
    let d = mu.dim();
    let mut rng = rng::stream(SLICED_SEED, rng::TAG_SLICED, d as u64, 0);
    let mut total = 0.0;
    for _ in 0..SLICED_PROJECTIONS {
        let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= n);
        let project = |m: &EmpiricalMeasure| {
            let mut atoms: Vec<(f64, f64)> =
                m.iter().map(|(x, w)| (x.iter().zip(&dir).map(|(a, b)| a * b).sum(), w)).collect();
            atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
            atoms
        };
        total += quantile_cost(&project(mu), &project(nu), p);
    }
    total / SLICED_PROJECTIONS as f64
}

const FLOW_EPS: f64 = 1e-15;

/// Minimum cost of a coupling between `supply` and `demand` (both summing to
/// the same total) under the row-major cost matrix, by successive shortest
/// augmenting paths with Dijkstra on reduced costs.
pub fn transport_cost(supply: &[f64], demand: &[f64], cost: &[f64]) -> f64 {
    let plan = transport_plan(supply, demand, cost);
    plan.iter().zip(cost).map(|(f, c)| f * c).sum()
}

/// Optimal coupling matrix (row-major, `supply.len() x demand.len()`).
pub fn transport_plan(supply: &[f64], demand: &[f64], cost: &[f64]) -> Vec<f64> {
    let m = supply.len();
    let n = demand.len();
    assert_eq!(cost.len(), m * n, "cost matrix shape");
    let mut flow = vec![0.0; m * n];
    let mut rs: Vec<f64> = supply.to_vec();
    let mut rd: Vec<f64> = demand.to_vec();
    // potentials: sources 0..m, sinks m..m+n
    let mut pot = vec![0.0; m + n];
    let mut dist = vec![f64::INFINITY; m + n];
    let mut done = vec![false; m + n];
    let mut pred = vec![usize::MAX; m + n];
    let total: f64 = supply.iter().sum::<f64>().min(demand.iter().sum::<f64>());
    let stop = total * 1e-14;
    let mut guard = 0usize;
    loop {
        let remaining: f64 = rs.iter().sum();
        if remaining <= stop || !rs.iter().any(|&s| s > FLOW_EPS) || !rd.iter().any(|&d| d > FLOW_EPS) {
            break;
        }
        guard += 1;
        if guard > 50 * (m + n) * (m + n) + 100 {
            log::warn!("transport solver stopped after {guard} augmentations");
            break;
        }
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        done.iter_mut().for_each(|d| *d = false);
        pred.iter_mut().for_each(|p| *p = usize::MAX);
        for i in 0..m {
            if rs[i] > FLOW_EPS {
                dist[i] = 0.0;
            }
        }
        // dense Dijkstra over the bipartite residual graph
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..m + n {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < m {
                for j in 0..n {
                    let v = m + j;
                    if done[v] {
                        continue;
                    }
                    let rc = (cost[u * n + j] + pot[u] - pot[v]).max(0.0);
                    if best + rc < dist[v] {
                        dist[v] = best + rc;
                        pred[v] = u;
                    }
                }
            } else {
                let j = u - m;
                for i in 0..m {
                    if done[i] || flow[i * n + j] <= FLOW_EPS {
                        continue;
                    }
                    let rc = (-cost[i * n + j] + pot[u] - pot[i]).max(0.0);
                    if best + rc < dist[i] {
                        dist[i] = best + rc;
                        pred[i] = u;
                    }
                }
            }
        }
        let mut sink = usize::MAX;
        let mut best = f64::INFINITY;
        for j in 0..n {
            if rd[j] > FLOW_EPS && dist[m + j] < best {
                best = dist[m + j];
                sink = m + j;
            }
        }
        if sink == usize::MAX {
            break;
        }
        for v in 0..m + n {
            pot[v] += dist[v].min(best);
        }
        // bottleneck along the path
        let mut amount = rd[sink - m];
        let mut v = sink;
        while pred[v] != usize::MAX {
            let u = pred[v];
            if u >= m {
                // backward edge sink u -> source v
                amount = amount.min(flow[v * n + (u - m)]);
            }
            v = u;
        }
        amount = amount.min(rs[v]);
        let source = v;
        let mut v = sink;
        while pred[v] != usize::MAX {
            let u = pred[v];
            if u < m {
                flow[u * n + (v - m)] += amount;
            } else {
                flow[v * n + (u - m)] -= amount;
            }
            v = u;
        }
        rs[source] -= amount;
        rd[sink - m] -= amount;
    }
    flow
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(points: &[f64], weights: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::new(1, points.to_vec(), weights.to_vec()).unwrap()
    }

    #[test]
    fn point_masses() {
        let d0 = EmpiricalMeasure::dirac(&[0.0]);
        let d1 = EmpiricalMeasure::dirac(&[1.0]);
        assert_eq!(wasserstein_p(&d0, &d0, 2.0).unwrap(), 0.0);
        assert_eq!(wasserstein_p(&d0, &d1, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn dirac_against_two_atoms() {
        // only one coupling exists: all mass of 0 split onto 1 and 3
        let d0 = EmpiricalMeasure::dirac(&[0.0]);
        let nu = m1(&[1.0, 3.0], &[0.5, 0.5]);
        assert!((wasserstein_p(&d0, &nu, 1.0).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let a = EmpiricalMeasure::dirac(&[0.0]);
        let b = EmpiricalMeasure::dirac(&[0.0, 1.0]);
        assert!(matches!(wasserstein_p(&a, &b, 1.0), Err(Error::DimensionMismatch { .. })));
        assert!(wasserstein_p(&a, &a, 0.5).is_err());
    }

    #[test]
    fn lp_matches_quantile_on_line_embedded_in_plane() {
        let a = m1(&[0.0, 1.0, 4.0], &[0.2, 0.5, 0.3]);
        let b = m1(&[-1.0, 2.0], &[0.6, 0.4]);
        let lift = |m: &EmpiricalMeasure| {
            let pts: Vec<f64> = m.points().iter().flat_map(|x| [*x, 0.0]).collect();
            EmpiricalMeasure::new(2, pts, m.weights().to_vec()).unwrap()
        };
        for p in [1.0, 2.0, 3.5] {
            let q = wasserstein_p(&a, &b, p).unwrap();
            let l = wasserstein_p(&lift(&a), &lift(&b), p).unwrap();
            assert!((q - l).abs() < 1e-12, "p={p}: {q} vs {l}");
        }
    }

    #[test]
    fn plan_marginals() {
        let s = [0.1, 0.4, 0.5];
        let d = [0.3, 0.3, 0.2, 0.2];
        let cost: Vec<f64> = (0..12).map(|k| ((k * 7) % 5) as f64).collect();
        let plan = transport_plan(&s, &d, &cost);
        for i in 0..3 {
            let r: f64 = plan[i * 4..i * 4 + 4].iter().sum();
            assert!((r - s[i]).abs() < 1e-14);
        }
        for j in 0..4 {
            let c: f64 = (0..3).map(|i| plan[i * 4 + j]).sum();
            assert!((c - d[j]).abs() < 1e-14);
        }
        assert!(plan.iter().all(|&f| f >= -1e-15));
    }

    #[test]
    fn sliced_used_for_large_supports() {
        let pts: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = EmpiricalMeasure::uniform(2, pts.clone()).unwrap();
        assert_eq!(method_for(&a, &a), TransportMethod::Sliced);
        assert!(wasserstein_p(&a, &a, 2.0).unwrap() < 1e-12);
    }
}
