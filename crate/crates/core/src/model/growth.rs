//! Pointwise sampling checks of the Lipschitz and growth inequalities.

use rand::Rng;
use rand_distr::{Distribution, StudentT};

use super::ModelSpec;
use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::rng;

/// Which assumption an inequality belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    A2,
    A4,
    A5,
    B1,
    B5,
}

#[derive(Debug, Clone)]
pub struct GrowthCheck {
    pub assumption: Assumption,
    pub name: &'static str,
    /// worst observed `lhs / rhs`, clamped at zero; `<= 1` means the
    /// inequality held at every sample
    pub worst_ratio: f64,
}

impl GrowthCheck {
    pub fn passed(&self) -> bool {
        self.worst_ratio <= 1.0 + 1e-12
    }
}

#[derive(Debug, Clone)]
pub struct GrowthReport {
    pub model: String,
    pub samples: usize,
    pub checks: Vec<GrowthCheck>,
    pub a_flagged: bool,
    pub b_flagged: bool,
}

impl GrowthReport {
    pub fn passed(&self, which: Assumption) -> bool {
        self.checks.iter().filter(|c| c.assumption == which).all(GrowthCheck::passed)
    }

    pub fn check(&self, name: &str) -> Option<&GrowthCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// All inequalities of the assumptions the model claims.
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| {
            let claimed = match c.assumption {
                Assumption::A2 | Assumption::A4 | Assumption::A5 => self.a_flagged,
                Assumption::B1 | Assumption::B5 => self.b_flagged,
            };
            !claimed || c.passed()
        })
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Samples `(t, x, y, mu, a)` with heavy-tailed states and checks (A.4),
/// (A.5), (B.1), (B.5) pointwise against the model's constants, plus the
/// exponent ordering (A.2).
pub fn validate_growth(model: &ModelSpec, sample_count: usize, seed: u64) -> Result<GrowthReport> {
    let c1 = model.constants.c1.ok_or(Error::MissingConstant("c1"))?;
    let c2 = model.constants.c2.ok_or(Error::MissingConstant("c2"))?;
    let c3 = model.constants.c3.ok_or(Error::MissingConstant("c3"))?;
    let (d, m, m0) = (model.d, model.m, model.m0);
    let (p, pp, ps) = (model.p, model.p_prime, model.p_sigma);
    let heavy = StudentT::new(2.5).expect("valid degrees of freedom");
    let mut r = rng::stream(seed, rng::TAG_GROWTH, 0, 0);

    let names: [(Assumption, &'static str); 9] = [
        (Assumption::A4, "lipschitz"),
        (Assumption::A4, "drift_growth"),
        (Assumption::A4, "vol_growth"),
        (Assumption::A5, "g_bounds"),
        (Assumption::A5, "f_upper"),
        (Assumption::A5, "f_lower"),
        (Assumption::B1, "bounded_coefficients"),
        (Assumption::B5, "reward_bound"),
        (Assumption::B1, "lipschitz_b"),
    ];
    let mut worst = [0.0f64; 9];

    let mut bx = vec![0.0; d];
    let mut by = vec![0.0; d];
    let mut sx = vec![0.0; d * m];
    let mut sy = vec![0.0; d * m];
    let mut s0x = vec![0.0; d * m0];
    let mut s0y = vec![0.0; d * m0];
    for _ in 0..sample_count {
        let t = r.gen::<f64>() * model.horizon;
        let scale = if r.gen_bool(0.5) { 1.0 } else { 10.0 };
        let x: Vec<f64> = (0..d).map(|_| scale * heavy.sample(&mut r)).collect();
        let y: Vec<f64> = if r.gen_bool(0.3) {
            x.iter().map(|v| v + 1e-3 * heavy.sample(&mut r)).collect()
        } else {
            (0..d).map(|_| scale * heavy.sample(&mut r)).collect()
        };
        let atoms = r.gen_range(1..=5);
        let pts: Vec<f64> = (0..atoms * d).map(|_| scale * heavy.sample(&mut r)).collect();
        let wts: Vec<f64> = (0..atoms).map(|_| r.gen::<f64>() + 0.05).collect();
        let mu = EmpiricalMeasure::from_masses(d, pts, wts)?;
        let a = model.actions.get(r.gen_range(0..model.actions.len())).to_vec();
        let mp = mu.moment(p);
        let an = norm(&a);

        (model.drift)(t, &x, &mu, &a, &mut bx);
        (model.drift)(t, &y, &mu, &a, &mut by);
        (model.sigma)(t, &x, &mu, &mut sx);
        (model.sigma)(t, &y, &mu, &mut sy);
        (model.sigma0)(t, &x, &mu, &mut s0x);
        (model.sigma0)(t, &y, &mu, &mut s0y);
        let dxy = dist(&x, &y);
        if dxy > 0.0 {
            let vol_diff = (sx.iter().zip(&sy).chain(s0x.iter().zip(&s0y)))
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt();
            worst[0] = worst[0].max((dist(&bx, &by) + vol_diff) / (c1 * dxy));
            worst[8] = worst[8].max(dist(&bx, &by) / (c1 * dxy));
        }

        let zero = vec![0.0; d];
        let mut b0 = vec![0.0; d];
        (model.drift)(t, &zero, &mu, &a, &mut b0);
        worst[1] = worst[1].max(norm(&b0) / (c1 * (1.0 + mp.powf(1.0 / p) + an)));

        let vol2 = sx.iter().chain(&s0x).map(|v| v * v).sum::<f64>();
        worst[2] = worst[2].max(vol2 / (c1 * (1.0 + norm(&x).powf(ps) + mp.powf(ps / p))));

        let base = 1.0 + norm(&x).powf(p) + mp;
        let g = (model.terminal)(&x, &mu);
        let f = (model.running)(t, &x, &mu, &a);
        worst[3] = worst[3].max(g.abs() / (c2 * base));
        worst[4] = worst[4].max((f + c3 * an.powf(pp)) / (c2 * base));
        worst[5] = worst[5].max(-f / (c2 * (base + an.powf(pp))));
        let sup = norm(&bx).max(norm(&sx)).max(norm(&s0x));
        worst[6] = worst[6].max(sup / c1);
        worst[7] = worst[7].max((f.abs() + g.abs()) / (c2 * base));
    }

    let mut checks = vec![GrowthCheck {
        assumption: Assumption::A2,
        name: "exponents",
        worst_ratio: if model.exponents_ok() { 0.0 } else { f64::INFINITY },
    }];
    for (i, (assumption, name)) in names.iter().enumerate() {
        checks.push(GrowthCheck { assumption: *assumption, name, worst_ratio: worst[i].max(0.0) });
    }
    Ok(GrowthReport {
        model: model.name.clone(),
        samples: sample_count,
        checks,
        a_flagged: model.flags.a_holds,
        b_flagged: model.flags.b_holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, ActionGrid};
    use std::sync::Arc;

    #[test]
    fn builtins_pass_their_claims() {
        for name in crate::model::BUILTIN_NAMES {
            let m = builtin(name).unwrap();
            let rep = validate_growth(&m, 2000, 11).unwrap();
            assert!(rep.all_pass(), "{name}: {:?}", rep.checks);
        }
    }

    #[test]
    fn quadratic_drift_is_not_lipschitz() {
        let mut m = builtin("bounded_demo").unwrap();
        m.drift = Arc::new(|_, x, _, _, out: &mut [f64]| out[0] = x[0] * x[0]);
        let rep = validate_growth(&m, 2000, 3).unwrap();
        assert!(!rep.check("lipschitz").unwrap().passed());
    }

    #[test]
    fn missing_constants() {
        let m = ModelSpec::blank("z", 1, 1, 1, 1.0, ActionGrid::uniform(0.0, 1.0, 2).unwrap());
        assert!(matches!(validate_growth(&m, 10, 0), Err(Error::MissingConstant("c1"))));
    }
}
