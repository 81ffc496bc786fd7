use std::sync::Arc;

use rayon::prelude::*;

use super::quadrature::{cell_rule, standard_normal_rule, tensor_rule};
use super::{check_flow, FeedbackPolicy, PolicyMode, SolverOptions, StateGrid, ValueFunction};
use crate::error::{Error, Result};
use crate::measures::MeasureFlow;
use crate::model::ModelSpec;

/// Fraction of transition mass clamped at the box (inside the flow's
/// support) above which a warning is logged.
pub const CLAMP_WARN: f64 = 0.01;
/// Fraction above which the state grid is rejected.
pub const CLAMP_ERROR: f64 = 0.10;

#[derive(Debug, Clone)]
pub struct DpSolution {
    pub policy: FeedbackPolicy,
    pub value: ValueFunction,
    /// clamped fraction of transition mass over grid points inside the
    /// support hull of the flow
    pub clamp_fraction: f64,
}

struct NodeOut {
    values: Vec<f64>,
    rows: Vec<Vec<(u32, f64)>>,
    clamped: f64,
    mass: f64,
}

/// Backward induction on the scenario tree.
///
/// Inside a mesh interval the expectation runs over the idiosyncratic
/// increment only (Gauss-Hermite). On the last fine step of an interval it
/// also branches over the next cell, adding the whole interval's common-noise
/// increment drawn from a per-cell quantile rule; the information node
/// changes only at that point.
pub fn solve_dp(model: &ModelSpec, flow: &MeasureFlow, state: &StateGrid, opts: &SolverOptions) -> Result<DpSolution> {
    check_flow(model, flow)?;
    if state.dim() != model.d {
        return Err(Error::DimensionMismatch { expected: model.d, got: state.dim() });
    }
    let grid = flow.grid().clone();
    let (d, m, m0) = (model.d, model.m, model.m0);
    let n_fine = grid.n_fine();
    let s = grid.substeps();
    let dt = grid.fine_dt();
    let h = grid.mesh_dt();
    let cells = state.len();
    let n_act = model.actions.len();

    let gh = standard_normal_rule(opts.quad_nodes);
    let (w_nodes, w_weights) = tensor_rule(&gh, m);
    let n_w = w_weights.len();
    let cell_rules: Vec<(Vec<f64>, Vec<f64>)> =
        (0..grid.n_cells()).map(|c| cell_rule(&grid, c, opts.quad_nodes)).collect();
    let sqdt = dt.sqrt();
    let sqh = h.sqrt();

    let mut values = vec![0.0; grid.n_slots() * cells];
    // terminal values
    {
        let j = n_fine;
        let mut x = vec![0.0; d];
        for code in 0..grid.n_leaves() {
            let mu = flow.at(j, code);
            let base = grid.slot(j, code) * cells;
            for c in 0..cells {
                state.point_into(c, &mut x);
                let v = (model.terminal)(&x, mu);
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue { step: j, node: grid.node_id(grid.n_steps(), code).to_string(), state: x });
                }
                values[base + c] = v;
            }
        }
    }

    let mut rows_by_slot: Vec<Vec<Vec<(u32, f64)>>> = vec![Vec::new(); grid.slot(n_fine, 0)];
    let mut clamped_total = 0.0;
    let mut mass_total = 0.0;

    for j in (0..n_fine).rev() {
        let depth = grid.depth_at(j);
        let boundary = (j + 1) % s == 0;
        let t = grid.fine_time(j);
        let next_base = grid.slot(j + 1, 0) * cells;
        let next_count = grid.nodes_at_depth(grid.depth_at(j + 1)) * cells;
        let next_vals = values[next_base..next_base + next_count].to_vec();

        let outs: Vec<Result<NodeOut>> = (0..grid.nodes_at_depth(depth))
            .into_par_iter()
            .map(|code| {
                let mu = flow.at(j, code);
                // support hull of the flow for clamping diagnostics
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for (x, _) in mu.iter() {
                    for k in 0..d {
                        lo[k] = lo[k].min(x[k]);
                        hi[k] = hi[k].max(x[k]);
                    }
                }
                let mut out = NodeOut { values: vec![0.0; cells], rows: Vec::with_capacity(cells), clamped: 0.0, mass: 0.0 };
                let mut x = vec![0.0; d];
                let mut b = vec![0.0; d];
                let mut sig = vec![0.0; d * m];
                let mut sig0 = vec![0.0; d * m0];
                let mut xn = vec![0.0; d];
                let mut q = vec![0.0; n_act];
                let mut clamp_q = vec![0.0; n_act];
                // per-cell shift sigma0 * sqrt(h) * zeta, precomputed per state
                let mut common: Vec<Vec<f64>> = vec![Vec::new(); grid.n_cells()];
                for c in 0..cells {
                    state.point_into(c, &mut x);
                    (model.sigma)(t, &x, mu, &mut sig);
                    if boundary {
                        (model.sigma0)(t, &x, mu, &mut sig0);
                        for (cell, (zn, _)) in cell_rules.iter().enumerate() {
                            let npts = zn.len() / m0;
                            let shifts = &mut common[cell];
                            shifts.clear();
                            for r in 0..npts {
                                for k in 0..d {
                                    let mut acc = 0.0;
                                    for l in 0..m0 {
                                        acc += sig0[k * m0 + l] * sqh * zn[r * m0 + l];
                                    }
                                    shifts.push(acc);
                                }
                            }
                        }
                    }
                    let inside = (0..d).all(|k| x[k] >= lo[k] && x[k] <= hi[k]);
                    for a in 0..n_act {
                        let act = model.actions.get(a);
                        (model.drift)(t, &x, mu, act, &mut b);
                        let f = (model.running)(t, &x, mu, act);
                        let mut ev = 0.0;
                        let mut clamped_mass = 0.0;
                        for qi in 0..n_w {
                            let z = &w_nodes[qi * m..(qi + 1) * m];
                            for k in 0..d {
                                let mut acc = x[k] + b[k] * dt;
                                for l in 0..m {
                                    acc += sig[k * m + l] * sqdt * z[l];
                                }
                                xn[k] = acc;
                            }
                            if !boundary {
                                let (v, cl) = state.interpolate(&next_vals[code * cells..(code + 1) * cells], &xn);
                                ev += w_weights[qi] * v;
                                if cl {
                                    clamped_mass += w_weights[qi];
                                }
                            } else {
                                let mut xc = vec![0.0; d];
                                for (cell, (_, cw)) in cell_rules.iter().enumerate() {
                                    let child = code * grid.n_cells() + cell;
                                    let pc = grid.cell_probs()[cell];
                                    let vals = &next_vals[child * cells..(child + 1) * cells];
                                    let shifts = &common[cell];
                                    for (r, wr) in cw.iter().enumerate() {
                                        for k in 0..d {
                                            xc[k] = xn[k] + shifts[r * d + k];
                                        }
                                        let (v, cl) = state.interpolate(vals, &xc);
                                        let w = w_weights[qi] * pc * wr;
                                        ev += w * v;
                                        if cl {
                                            clamped_mass += w;
                                        }
                                    }
                                }
                            }
                        }
                        q[a] = f * dt + ev;
                        clamp_q[a] = clamped_mass;
                    }
                    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    if !best.is_finite() {
                        return Err(Error::NonFiniteValue {
                            step: j,
                            node: grid.node_id(depth, code).to_string(),
                            state: x.clone(),
                        });
                    }
                    let ties: Vec<u32> = (0..n_act).filter(|&a| q[a] >= best - opts.tie_tol).map(|a| a as u32).collect();
                    let row = match opts.mode {
                        PolicyMode::Strict => vec![(ties[0], 1.0)],
                        PolicyMode::Relaxed => {
                            let w = 1.0 / ties.len() as f64;
                            ties.iter().map(|&a| (a, w)).collect()
                        }
                    };
                    if inside {
                        out.clamped += clamp_q[ties[0] as usize];
                        out.mass += 1.0;
                    }
                    out.values[c] = best;
                    out.rows.push(row);
                }
                Ok(out)
            })
            .collect();

        let base = grid.slot(j, 0);
        for (code, out) in outs.into_iter().enumerate() {
            let out = out?;
            let vb = (base + code) * cells;
            values[vb..vb + cells].copy_from_slice(&out.values);
            clamped_total += out.clamped;
            mass_total += out.mass;
            rows_by_slot[base + code] = out.rows;
        }
    }

    let clamp_fraction = if mass_total > 0.0 { clamped_total / mass_total } else { 0.0 };
    if clamp_fraction >= CLAMP_ERROR {
        return Err(Error::StateGridTooSmall { fraction: clamp_fraction });
    }
    if clamp_fraction >= CLAMP_WARN {
        log::warn!("{:.1}% of transition mass clamped at the state box", 100.0 * clamp_fraction);
    }
    let policy = FeedbackPolicy::from_rows(
        grid.clone(),
        state.clone(),
        model.actions.clone(),
        opts.mode,
        rows_by_slot.into_iter().flatten(),
    )?;
    Ok(DpSolution { policy, value: ValueFunction { grid: Arc::clone(&grid), cells, values }, clamp_fraction })
}
