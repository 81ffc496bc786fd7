use std::collections::BTreeMap;
use std::sync::Arc;

use super::{ActionGrid, Constants, Flags, InitialLaw, ModelSpec, RewardSplit};
use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;

pub const BUILTIN_NAMES: [&str; 4] = ["bounded_demo", "lq_tracking", "lq_counterexample", "monotone_demo"];

/// Keys accepted as overrides by [`builtin_with`].
pub const OVERRIDE_KEYS: [&str; 12] = [
    "horizon",
    "p",
    "p_prime",
    "lambda_mean",
    "lambda_std",
    "sigma",
    "sigma0",
    "a_min",
    "a_max",
    "a_points",
    "coupling",
    "c",
];

pub fn builtin(name: &str) -> Result<ModelSpec> {
    builtin_with(name, &BTreeMap::new())
}

/// Builtin model with scalar overrides (see [`OVERRIDE_KEYS`]).
pub fn builtin_with(name: &str, overrides: &BTreeMap<String, f64>) -> Result<ModelSpec> {
    if let Some(k) = overrides.keys().find(|k| !OVERRIDE_KEYS.contains(&k.as_str())) {
        return Err(Error::Config { key: k.clone(), detail: "not a model parameter".into() });
    }
    let get = |k: &str, default: f64| overrides.get(k).copied().unwrap_or(default);
    let actions = |lo: f64, hi: f64, n: f64| -> Result<ActionGrid> {
        let lo = get("a_min", lo);
        let hi = get("a_max", hi);
        let n = get("a_points", n);
        if n < 1.0 || n.fract() != 0.0 {
            return Err(Error::Config { key: "a_points".into(), detail: format!("{n} is not a positive integer") });
        }
        ActionGrid::uniform(lo, hi, n as usize)
    };
    let normal = |mean: f64, std: f64| InitialLaw::Normal {
        mean: vec![get("lambda_mean", mean)],
        std: vec![get("lambda_std", std)],
    };
    let mut model = match name {
        "bounded_demo" => bounded_demo(actions(-1.0, 1.0, 21.0)?, get("sigma", 0.5), get("sigma0", 0.3)),
        "lq_tracking" => lq_tracking(actions(-1.5, 1.5, 61.0)?, get("sigma", 1.0), get("sigma0", 0.5)),
        "lq_counterexample" => {
            let t = get("horizon", 2.0);
            let c = get("c", (1.0 - t) / t);
            lq_counterexample(actions(-3.0, 3.0, 61.0)?, c, get("sigma", 0.5), get("sigma0", 0.3))
        }
        "monotone_demo" => {
            monotone_demo(actions(-2.0, 2.0, 41.0)?, get("coupling", 1.0), get("sigma", 0.7), get("sigma0", 0.4))
        }
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    model.initial = match name {
        "bounded_demo" | "monotone_demo" => normal(0.5, 0.5),
        _ => normal(1.0, 0.5),
    };
    if let Some(t) = overrides.get("horizon") {
        model.horizon = *t;
    }
    if let Some(p) = overrides.get("p") {
        model.p = *p;
    }
    if let Some(p) = overrides.get("p_prime") {
        model.p_prime = *p;
    }
    if let InitialLaw::Normal { std, .. } = &model.initial {
        if std[0] < 0.0 {
            return Err(Error::Config { key: "lambda_std".into(), detail: "must be nonnegative".into() });
        }
    }
    for (k, v) in overrides {
        model.params.insert(k.clone(), *v);
    }
    model.validate()?;
    Ok(model)
}

fn scalar_vol(s: f64) -> super::VolFn {
    Arc::new(move |_, _, _, out: &mut [f64]| out[0] = s)
}

/// `sqrt(1 + z^2) - 1`: convex, 1-Lipschitz, quadratic near zero.
fn soft_abs(z: f64) -> f64 {
    z.hypot(1.0) - 1.0
}

/// Bounded drift and volatilities, compact control set.
fn bounded_demo(actions: ActionGrid, sigma: f64, sigma0: f64) -> ModelSpec {
    let mut m = ModelSpec::blank("bounded_demo", 1, 1, 1, 1.0, actions);
    m.p = 1.0;
    m.p_prime = 2.0;
    m.drift = Arc::new(|_, x, mu: &EmpiricalMeasure, a, out: &mut [f64]| {
        out[0] = a[0] + 0.5 * (mu.mean_scalar() - x[0]).tanh();
    });
    m.running = Arc::new(|_, x, mu: &EmpiricalMeasure, a| -0.5 * a[0] * a[0] - soft_abs(x[0] - 0.5 * mu.mean_scalar()));
    m.terminal = Arc::new(|x, mu: &EmpiricalMeasure| -soft_abs(x[0] - 0.5 * mu.mean_scalar()));
    m.sigma = scalar_vol(sigma);
    m.sigma0 = scalar_vol(sigma0);
    let amax = m.actions.max_norm();
    m.flags = Flags { a_holds: true, b_holds: true, c_convexity: true, d_linear_convex: true, u_monotone: false };
    m.constants = Constants {
        c1: Some((amax + 0.5).max(1.5).max(sigma.max(sigma0)).max(sigma * sigma + sigma0 * sigma0)),
        c2: Some(2f64.max(0.5 * amax * amax + 1.0)),
        c3: Some(0.5),
        drift_offset: Some(0.5),
        vol_bound: Some(sigma.abs()),
        vol0_bound: Some(sigma0.abs()),
    };
    m
}

/// `b = a`, `f = a tanh(mean) - a^2/2`, `g = 0`: the optimal control is
/// `tanh` of the population mean.
fn lq_tracking(actions: ActionGrid, sigma: f64, sigma0: f64) -> ModelSpec {
    let mut m = ModelSpec::blank("lq_tracking", 1, 1, 1, 1.0, actions);
    m.p = 1.0;
    m.p_prime = 2.0;
    m.drift = Arc::new(|_, _, _, a, out: &mut [f64]| out[0] = a[0]);
    m.running = Arc::new(|_, _, mu: &EmpiricalMeasure, a| a[0] * mu.mean_scalar().tanh() - 0.5 * a[0] * a[0]);
    m.terminal = Arc::new(|_, _| 0.0);
    m.sigma = scalar_vol(sigma);
    m.sigma0 = scalar_vol(sigma0);
    m.flags = Flags { a_holds: true, b_holds: false, c_convexity: true, d_linear_convex: true, u_monotone: false };
    m.constants = Constants {
        c1: Some(2f64.max(sigma * sigma + sigma0 * sigma0)),
        c2: Some(1.0),
        c3: Some(0.25),
        drift_offset: Some(0.0),
        vol_bound: Some(sigma.abs()),
        vol0_bound: Some(sigma0.abs()),
    };
    m.params.insert("sigma0".into(), sigma0);
    m
}

/// `b = a`, `f = -a^2`, `g = -(x + c mean)^2` with `p = p' = 2`.
fn lq_counterexample(actions: ActionGrid, c: f64, sigma: f64, sigma0: f64) -> ModelSpec {
    let mut m = ModelSpec::blank("lq_counterexample", 1, 1, 1, 2.0, actions);
    m.p = 2.0;
    m.p_prime = 2.0;
    m.drift = Arc::new(|_, _, _, a, out: &mut [f64]| out[0] = a[0]);
    m.running = Arc::new(|_, _, _, a| -a[0] * a[0]);
    m.terminal = Arc::new(move |x, mu: &EmpiricalMeasure| {
        let z = x[0] + c * mu.mean_scalar();
        -z * z
    });
    m.sigma = scalar_vol(sigma);
    m.sigma0 = scalar_vol(sigma0);
    m.flags = Flags { a_holds: false, b_holds: false, c_convexity: true, d_linear_convex: true, u_monotone: false };
    m.constants = Constants {
        c1: Some(1f64.max(sigma * sigma + sigma0 * sigma0)),
        c2: Some(2f64.max(2.0 * c * c)),
        c3: Some(1.0),
        drift_offset: Some(0.0),
        vol_bound: Some(sigma.abs()),
        vol0_bound: Some(sigma0.abs()),
    };
    m.params.insert("c".into(), c);
    m
}

/// No mean field term in the state equation, `f1 = -a^2 - x^2/4`,
/// `f2 = g = -k x mean`. Monotone for `k >= 0`.
fn monotone_demo(actions: ActionGrid, coupling: f64, sigma: f64, sigma0: f64) -> ModelSpec {
    let mut m = ModelSpec::blank("monotone_demo", 1, 1, 1, 1.0, actions);
    m.p = 2.0;
    m.p_prime = 3.0;
    let f1 = Arc::new(|_: f64, x: &[f64], a: &[f64]| -a[0] * a[0] - 0.25 * x[0] * x[0]);
    let f2 = Arc::new(move |_: f64, x: &[f64], mu: &EmpiricalMeasure| -coupling * x[0] * mu.mean_scalar());
    let (g1, g2) = (f1.clone(), f2.clone());
    m.drift = Arc::new(|_, _, _, a, out: &mut [f64]| out[0] = a[0]);
    m.running = Arc::new(move |t, x, mu: &EmpiricalMeasure, a| g1(t, x, a) + g2(t, x, mu));
    m.terminal = Arc::new(move |x, mu: &EmpiricalMeasure| -coupling * x[0] * mu.mean_scalar());
    m.split = Some(RewardSplit { f1, f2 });
    m.sigma = scalar_vol(sigma);
    m.sigma0 = scalar_vol(sigma0);
    let amax = m.actions.max_norm();
    m.flags = Flags {
        a_holds: true,
        b_holds: true,
        c_convexity: true,
        d_linear_convex: true,
        u_monotone: coupling >= 0.0,
    };
    m.constants = Constants {
        c1: Some(amax.max(1.0).max(sigma * sigma + sigma0 * sigma0).max(sigma.max(sigma0))),
        c2: Some(4f64.max(amax * amax).max(1.0 + coupling.abs())),
        c3: Some(0.5),
        drift_offset: Some(0.0),
        vol_bound: Some(sigma.abs()),
        vol0_bound: Some(sigma0.abs()),
    };
    m.params.insert("coupling".into(), coupling);
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counterexample_constant() {
        let m = builtin("lq_counterexample").unwrap();
        assert_eq!(m.param("c"), Some(-0.5));
        assert_eq!(m.horizon, 2.0);
        assert!(!m.exponents_ok());
    }

    #[test]
    fn tracking_has_zero_terminal_reward() {
        let m = builtin("lq_tracking").unwrap();
        let mu = EmpiricalMeasure::new(1, vec![3.0, -1.0], vec![0.5, 0.5]).unwrap();
        for x in [-5.0, 0.0, 2.5] {
            assert_eq!((m.terminal)(&[x], &mu), 0.0);
        }
        assert_eq!(m.actions.len(), 61);
    }

    #[test]
    fn unknown_and_overrides() {
        assert!(matches!(builtin("nope"), Err(Error::UnknownModel(_))));
        let mut o = BTreeMap::new();
        o.insert("coupling".to_string(), -1.0);
        let m = builtin_with("monotone_demo", &o).unwrap();
        assert!(!m.flags.u_monotone);
        o.insert("bogus".to_string(), 1.0);
        assert!(builtin_with("monotone_demo", &o).is_err());
    }

    #[test]
    fn pure_functions() {
        for name in BUILTIN_NAMES {
            let m = builtin(name).unwrap();
            let mu = EmpiricalMeasure::new(1, vec![0.3, 1.7], vec![0.4, 0.6]).unwrap();
            let a = m.actions.get(m.actions.len() / 3).to_vec();
            let f1 = (m.running)(0.2, &[0.9], &mu, &a);
            let f2 = (m.running)(0.2, &[0.9], &mu, &a);
            assert_eq!(f1.to_bits(), f2.to_bits());
        }
    }
}
