use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;

use mfg_core::control::{FeedbackPolicy, SolverOptions, StateGrid};
use mfg_core::equilibrium::{conditional_law, iterate, IterateConfig};
use mfg_core::grid::ScenarioGrid;
use mfg_core::measures::{flow_distance, wasserstein_p, EmpiricalMeasure, MeasureFlow};
use mfg_core::model::{builtin, builtin_with};
use mfg_core::relaxed::{relaxed_distance, ActionGrid, RelaxedControl, StrictControl};
use mfg_core::simulate::simulate_tree;

fn measure(dim: usize) -> impl Strategy<Value = EmpiricalMeasure> {
    (1usize..=7).prop_flat_map(move |k| {
        (prop::collection::vec(-5.0f64..5.0, k * dim), prop::collection::vec(0.05f64..1.0, k)).prop_map(move |(pts, w)| {
            let total: f64 = w.iter().sum();
            EmpiricalMeasure::new(dim, pts, w.iter().map(|v| v / total).collect()).unwrap()
        })
    })
}

fn relaxed(steps: usize, k: usize) -> impl Strategy<Value = RelaxedControl> {
    prop::collection::vec(0.0f64..1.0, steps * k).prop_map(move |raw| {
        let mut w = raw;
        for row in w.chunks_exact_mut(k) {
            row[0] += 1e-3;
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
        }
        RelaxedControl::new(1.0, Arc::new(ActionGrid::uniform(-1.0, 1.0, k).unwrap()), w).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wasserstein_is_a_metric(a in measure(1), b in measure(1), c in measure(1), p in 1.0f64..3.0) {
        let ab = wasserstein_p(&a, &b, p).unwrap();
        prop_assert!((ab - wasserstein_p(&b, &a, p).unwrap()).abs() <= 1e-9);
        prop_assert!(wasserstein_p(&a, &a, p).unwrap() <= 1e-12);
        prop_assert!(wasserstein_p(&a, &c, p).unwrap() <= ab + wasserstein_p(&b, &c, p).unwrap() + 1e-9);
    }

    #[test]
    fn wasserstein_grows_with_p(a in measure(2), b in measure(2), p in 1.0f64..2.5, dq in 0.0f64..1.5) {
        prop_assert!(wasserstein_p(&a, &b, p).unwrap() <= wasserstein_p(&a, &b, p + dq).unwrap() + 1e-9);
    }

    #[test]
    fn mixture_contracts(a in measure(1), b in measure(1), theta in 0.0f64..=1.0, p in 1.0f64..3.0) {
        let mix = a.mix(&b, theta).unwrap();
        let total: f64 = mix.weights().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        let lhs = wasserstein_p(&mix, &a, p).unwrap().powf(p);
        prop_assert!(lhs <= theta * wasserstein_p(&a, &b, p).unwrap().powf(p) + 1e-9);
    }

    #[test]
    fn compression_keeps_mass_and_mean(a in measure(1), cap in 1usize..4) {
        let c = a.compress(Some(cap));
        prop_assert!(c.len() <= cap.max(1));
        prop_assert!((c.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!((c.mean_scalar() - a.mean_scalar()).abs() <= 1e-9);
    }

    #[test]
    fn relaxed_distance_is_a_metric(q1 in relaxed(4, 5), q2 in relaxed(4, 5), q3 in relaxed(4, 5)) {
        let d = |x: &RelaxedControl, y: &RelaxedControl| relaxed_distance(x, y, 1.5).unwrap();
        prop_assert!(d(&q1, &q1) <= 1e-12);
        prop_assert!((d(&q1, &q2) - d(&q2, &q1)).abs() <= 1e-9);
        prop_assert!(d(&q1, &q3) <= d(&q1, &q2) + d(&q2, &q3) + 1e-9);
        prop_assert!(q1.check_time_marginal());
    }

    #[test]
    fn barycenter_of_strict_is_identity(indices in prop::collection::vec(0usize..7, 1..10)) {
        let actions = Arc::new(ActionGrid::uniform(-2.0, 2.0, 7).unwrap());
        let strict = StrictControl { horizon: 1.0, actions, indices };
        let (back, snaps) = strict.to_relaxed().barycenter(true).unwrap();
        prop_assert_eq!(back, strict);
        prop_assert!(snaps.iter().all(|&s| s <= 1e-12));
    }

    #[test]
    fn doubled_grids_refine(n in 1usize..5, k in 1usize..4, s in 1usize..4, m in 1usize..3, r in 1usize..3) {
        let coarse = ScenarioGrid::new(1.0, n, k, 1, s).unwrap();
        let fine = ScenarioGrid::new(1.0, n * m, k * r, 1, s).unwrap();
        prop_assert!(fine.refines(&coarse));
        let total: f64 = (0..fine.n_leaves()).map(|l| fine.node_prob(fine.n_steps(), l)).sum();
        // up to millions of leaves, so allow for summation error
        prop_assert!((total - 1.0).abs() <= 1e-9);
        for j in 0..=fine.n_fine() {
            prop_assert!(fine.depth_at(j) <= fine.n_steps());
        }
    }
}

fn small_opts(particles: usize) -> SolverOptions {
    SolverOptions { particles, state_points: 101, quad_nodes: 3, ..SolverOptions::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn simulation_is_seed_deterministic(seed in 0u64..1000) {
        let model = builtin("bounded_demo").unwrap();
        let grid = Arc::new(ScenarioGrid::new(1.0, 2, 2, 1, 3).unwrap());
        let flow = MeasureFlow::constant(grid.clone(), EmpiricalMeasure::dirac(&[0.1]));
        let state = StateGrid::cube(&[-5.0], &[5.0], 21).unwrap();
        let pol = FeedbackPolicy::constant(grid, state, model.actions.clone(), 4).unwrap();
        let a = simulate_tree(&model, &flow, &pol, 64, seed).unwrap().particle_values();
        let b = simulate_tree(&model, &flow, &pol, 64, seed).unwrap().particle_values();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn converged_iff_last_residual_below_tol(tol in 1e-3f64..0.2, max_iter in 1usize..5, theta in 0.2f64..=1.0) {
        let model = builtin("bounded_demo").unwrap();
        let grid = Arc::new(ScenarioGrid::new(1.0, 2, 2, 1, 2).unwrap());
        let cfg = IterateConfig { theta, tol, max_iter, solver: small_opts(200), eval_seed: None, ..IterateConfig::default() };
        let rep = iterate(&model, grid, &cfg).unwrap();
        prop_assert!(rep.iterations <= max_iter);
        prop_assert_eq!(rep.residuals.len(), rep.iterations);
        prop_assert_eq!(rep.converged, rep.final_residual() < tol);
        prop_assert!(rep.residuals[..rep.iterations - 1].iter().all(|&r| r >= tol));
    }
}

#[test]
fn iteration_is_deterministic() {
    let model = builtin("monotone_demo").unwrap();
    let grid = Arc::new(ScenarioGrid::new(1.0, 2, 2, 1, 2).unwrap());
    let cfg = IterateConfig { max_iter: 3, solver: small_opts(300), ..IterateConfig::default() };
    let a = iterate(&model, grid.clone(), &cfg).unwrap();
    let b = iterate(&model, grid, &cfg).unwrap();
    assert_eq!(a.residuals, b.residuals);
    assert_eq!(a.rewards, b.rewards);
    assert_eq!(a.exploitability, b.exploitability);
    assert_eq!(flow_distance(&a.flow, &b.flow, 1.0).unwrap(), 0.0);
}

#[test]
fn single_action_converges_at_once() {
    // no decision to make and no mean field in the dynamics: the first
    // response reproduces the initial flow
    let mut o = BTreeMap::new();
    o.insert("a_points".to_string(), 1.0);
    let model = builtin_with("lq_tracking", &o).unwrap();
    let grid = Arc::new(ScenarioGrid::new(1.0, 2, 2, 1, 2).unwrap());
    let cfg = IterateConfig { solver: small_opts(300), eval_seed: None, ..IterateConfig::default() };
    let rep = iterate(&model, grid, &cfg).unwrap();
    assert!(rep.converged);
    assert_eq!(rep.iterations, 1);
    assert!(rep.final_residual() <= 1e-12, "{}", rep.final_residual());
}

#[test]
fn fixed_point_certificate_on_fresh_seed() {
    let model = builtin("bounded_demo").unwrap();
    let grid = Arc::new(ScenarioGrid::new(1.0, 4, 2, 1, 8).unwrap());
    let tol = 0.05;
    let cfg = IterateConfig { tol, eval_seed: None, ..IterateConfig::default() };
    let rep = iterate(&model, grid, &cfg).unwrap();
    assert!(rep.converged);
    let fresh = simulate_tree(&model, &rep.flow, &rep.policy, cfg.solver.particles, 987_654).unwrap();
    let dist = flow_distance(&rep.flow, &conditional_law(&fresh).unwrap(), model.p).unwrap();
    assert!(dist <= 2.0 * tol, "flow moved by {dist} on a fresh seed");
}
