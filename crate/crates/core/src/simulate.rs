//! Euler-Maruyama particle simulation on the scenario tree.
//!
//! Every particle is followed down every branch of the tree: for a node `v`
//! with parent `u`, particle `i` restarts from its state at the end of `u`'s
//! interval, draws its own common-noise increment conditioned on `v`'s cell
//! and fills in the fine steps by a Brownian bridge. Idiosyncratic noise is
//! drawn once per particle and reused on every branch and every call with
//! the same seed.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::control::FeedbackPolicy;
use crate::error::{Error, Result};
use crate::grid::{LeafId, ScenarioGrid};
use crate::measures::flow::same_grid;
use crate::measures::{EmpiricalMeasure, MeasureFlow};
use crate::model::ModelSpec;
use crate::rng::{stream, TAG_BINNED, TAG_COMMON, TAG_IDIOSYNCRATIC, TAG_INITIAL};

/// States, rewards and applied policy rows of all particles over one mesh
/// interval, on the branch leading to one node.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// `N x S x d`, particle-major; step `s` holds the state after `s + 1` fine steps
    pub states: Vec<f64>,
    /// running reward accumulated over the interval
    pub reward: Vec<f64>,
    /// policy row used at each fine step, `N x S`
    pub rows: Vec<u32>,
    /// terminal reward, leaves only
    pub terminal: Option<Vec<f64>>,
}

/// Particles simulated on every branch of the tree.
#[derive(Debug, Clone)]
pub struct TreeBatch {
    grid: Arc<ScenarioGrid>,
    d: usize,
    n: usize,
    x0: Vec<f64>,
    /// indexed by `global_index(depth, code) - 1`, depth >= 1
    segments: Vec<Segment>,
}

/// Particles on the single branch leading to one leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleBatch {
    pub leaf: LeafId,
    pub n: usize,
    pub d: usize,
    /// `N x (n_fine + 1) x d`
    pub states: Vec<f64>,
    pub reward: Vec<f64>,
    pub terminal: Vec<f64>,
    /// `N x n_fine`
    pub rows: Vec<u32>,
}

impl ParticleBatch {
    pub fn steps(&self) -> usize {
        self.states.len() / (self.n * self.d)
    }

    pub fn state(&self, i: usize, j: usize) -> &[f64] {
        let st = self.steps();
        &self.states[(i * st + j) * self.d..(i * st + j + 1) * self.d]
    }

    /// CSV trace `particle,time_index,x1..xd` of the first `count` particles.
    pub fn write_paths_csv<W: Write>(&self, out: W, count: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["particle".to_string(), "time_index".to_string()];
        header.extend((1..=self.d).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        for i in 0..count.min(self.n) {
            for j in 0..self.steps() {
                let mut rec = vec![i.to_string(), j.to_string()];
                rec.extend(self.state(i, j).iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

struct Ctx<'a> {
    model: &'a ModelSpec,
    flow: &'a MeasureFlow,
    policy: &'a FeedbackPolicy,
    grid: &'a ScenarioGrid,
    n: usize,
    seed: u64,
    /// `N x n_fine x m` idiosyncratic increments
    noise: Vec<f64>,
}

impl<'a> Ctx<'a> {
    fn new(model: &'a ModelSpec, flow: &'a MeasureFlow, policy: &'a FeedbackPolicy, n: usize, seed: u64) -> Result<Self> {
        crate::control::check_flow(model, flow)?;
        let grid = flow.grid().as_ref();
        if !same_grid(grid, policy.grid()) {
            return Err(Error::GridMismatch("flow and policy live on different grids".into()));
        }
        if policy.actions().len() != model.actions.len() || policy.state_grid().dim() != model.d {
            return Err(Error::GridMismatch("policy does not match the model's action or state space".into()));
        }
        if n == 0 {
            return Err(Error::OutOfRange { name: "particles", detail: "must be >= 1".into() });
        }
        let nf = grid.n_fine();
        let m = model.m;
        let sq = grid.fine_dt().sqrt();
        let mut noise = vec![0.0; n * nf * m];
        noise.par_chunks_mut(nf * m).enumerate().for_each(|(i, chunk)| {
            let mut rng = stream(seed, TAG_IDIOSYNCRATIC, i as u64, 0);
            for v in chunk.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = sq * z;
            }
        });
        Ok(Ctx { model, flow, policy, grid, n, seed, noise })
    }

    fn initial_states(&self) -> Vec<f64> {
        let d = self.model.d;
        let mut x0 = vec![0.0; self.n * d];
        x0.par_chunks_mut(d).enumerate().for_each(|(i, x)| {
            let mut rng = stream(self.seed, TAG_INITIAL, i as u64, 0);
            self.model.initial.sample_into(&mut rng, x);
        });
        x0
    }

    /// One fine Euler step from `x` at fine index `j` under information node
    /// `code`, writing the new state into `out`; returns the reward rate and
    /// the policy row used.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &self,
        j: usize,
        code: usize,
        x: &[f64],
        dw: &[f64],
        db: &[f64],
        buf: &mut StepBuf,
        out: &mut [f64],
    ) -> Result<(f64, u32)> {
        let model = self.model;
        let (d, m, m0) = (model.d, model.m, model.m0);
        let t = self.grid.fine_time(j);
        let dt = self.grid.fine_dt();
        let mu = self.flow.at(j, code);
        let row = self.policy.lookup_row(j, code, x);
        buf.drift.iter_mut().for_each(|v| *v = 0.0);
        let mut f = 0.0;
        for &(a, w) in self.policy.row(row) {
            let act = model.actions.get(a as usize);
            (model.drift)(t, x, mu, act, &mut buf.b);
            for k in 0..d {
                buf.drift[k] += w * buf.b[k];
            }
            f += w * (model.running)(t, x, mu, act);
        }
        (model.sigma)(t, x, mu, &mut buf.sig);
        (model.sigma0)(t, x, mu, &mut buf.sig0);
        for k in 0..d {
            let mut acc = x[k] + buf.drift[k] * dt;
            for l in 0..m {
                acc += buf.sig[k * m + l] * dw[l];
            }
            for l in 0..m0 {
                acc += buf.sig0[k * m0 + l] * db[l];
            }
            out[k] = acc;
        }
        if out.iter().any(|v| !v.is_finite()) || !f.is_finite() {
            return Err(Error::NonFiniteState { step: j + 1, time: self.grid.fine_time(j + 1), state: x.to_vec() });
        }
        Ok((f, row as u32))
    }

    /// Simulates the interval leading from node `u` at depth `k` into its
    /// child `v`, starting from `start` (`N x d`).
    fn segment(&self, k: usize, u: usize, v: usize, start: &[f64]) -> Result<Segment> {
        let model = self.model;
        let grid = self.grid;
        let (d, m, m0) = (model.d, model.m, model.m0);
        let s_len = grid.substeps();
        let nf = grid.n_fine();
        let h = grid.mesh_dt();
        let sq = grid.fine_dt().sqrt();
        let cell = v % grid.n_cells();
        let node = grid.global_index(k + 1, v) as u64;
        let leaf = k + 1 == grid.n_steps();
        let n = self.n;
        let mut seg = Segment {
            states: vec![0.0; n * s_len * d],
            reward: vec![0.0; n],
            rows: vec![0; n * s_len],
            terminal: leaf.then(|| vec![0.0; n]),
        };
        let mut term = seg.terminal.take().unwrap_or_default();
        let dt = grid.fine_dt();
        seg.states
            .par_chunks_mut(s_len * d)
            .zip(seg.reward.par_iter_mut())
            .zip(seg.rows.par_chunks_mut(s_len))
            .enumerate()
            .try_for_each(|(i, ((states, reward), rows))| -> Result<()> {
                let mut rng = stream(self.seed, TAG_COMMON, node, i as u64);
                let mut big = vec![0.0; m0];
                grid.sample_conditional_into(cell, h, &mut rng, &mut big);
                // Brownian bridge through the conditioned increment
                let mut eps = vec![0.0; s_len * m0];
                for e in eps.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *e = sq * z;
                }
                let mut bar = vec![0.0; m0];
                for s in 0..s_len {
                    for l in 0..m0 {
                        bar[l] += eps[s * m0 + l] / s_len as f64;
                    }
                }
                let mut buf = StepBuf::new(d, m, m0);
                let mut x = start[i * d..(i + 1) * d].to_vec();
                let mut db = vec![0.0; m0];
                let mut acc = 0.0;
                for s in 0..s_len {
                    let j = k * s_len + s;
                    for l in 0..m0 {
                        db[l] = big[l] / s_len as f64 + eps[s * m0 + l] - bar[l];
                    }
                    let dw = &self.noise[(i * nf + j) * m..(i * nf + j + 1) * m];
                    let out = &mut states[s * d..(s + 1) * d];
                    let (f, row) = self.step(j, u, &x, dw, &db, &mut buf, out)?;
                    acc += f * dt;
                    rows[s] = row;
                    x.copy_from_slice(out);
                }
                *reward = acc;
                Ok(())
            })?;
        if leaf {
            let mu = self.flow.at(nf, v);
            term.par_iter_mut().enumerate().try_for_each(|(i, g)| -> Result<()> {
                let x = &seg.states[(i * s_len + s_len - 1) * d..(i * s_len + s_len) * d];
                *g = (model.terminal)(x, mu);
                if !g.is_finite() {
                    return Err(Error::NonFiniteState { step: nf, time: grid.horizon(), state: x.to_vec() });
                }
                Ok(())
            })?;
            seg.terminal = Some(term);
        }
        Ok(seg)
    }
}

struct StepBuf {
    b: Vec<f64>,
    drift: Vec<f64>,
    sig: Vec<f64>,
    sig0: Vec<f64>,
}

impl StepBuf {
    fn new(d: usize, m: usize, m0: usize) -> Self {
        StepBuf { b: vec![0.0; d], drift: vec![0.0; d], sig: vec![0.0; d * m], sig0: vec![0.0; d * m0] }
    }
}

fn end_states(seg: &Segment, n: usize, s_len: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        out.extend_from_slice(&seg.states[(i * s_len + s_len - 1) * d..(i * s_len + s_len) * d]);
    }
    out
}

/// Simulates `n` particles on every branch of the tree under `policy`
/// against the environment `flow`. Deterministic given `seed`.
pub fn simulate_tree(
    model: &ModelSpec,
    flow: &MeasureFlow,
    policy: &FeedbackPolicy,
    n: usize,
    seed: u64,
) -> Result<TreeBatch> {
    let ctx = Ctx::new(model, flow, policy, n, seed)?;
    let grid = flow.grid().clone();
    let d = model.d;
    let s_len = grid.substeps();
    let x0 = ctx.initial_states();
    let mut segments: Vec<Segment> = Vec::with_capacity(grid.n_nodes() - 1);
    for k in 0..grid.n_steps() {
        for v in 0..grid.nodes_at_depth(k + 1) {
            let u = v / grid.n_cells();
            let start = if k == 0 {
                x0.clone()
            } else {
                end_states(&segments[grid.global_index(k, u) - 1], n, s_len, d)
            };
            let seg = ctx.segment(k, u, v, &start)?;
            segments.push(seg);
        }
    }
    Ok(TreeBatch { grid, d, n, x0, segments })
}

/// Simulates the particles of a single leaf. Bit-identical to the segments
/// of [`simulate_tree`] along that leaf's branch.
pub fn simulate_node_particles(
    model: &ModelSpec,
    flow: &MeasureFlow,
    policy: &FeedbackPolicy,
    leaf: &LeafId,
    n: usize,
    seed: u64,
) -> Result<ParticleBatch> {
    let ctx = Ctx::new(model, flow, policy, n, seed)?;
    let grid = ctx.grid;
    if leaf.depth() != grid.n_steps() {
        return Err(Error::GridMismatch(format!("{leaf} is not a leaf")));
    }
    let leaf_code = grid.node_code(leaf)?;
    let d = model.d;
    let s_len = grid.substeps();
    let nf = grid.n_fine();
    let x0 = ctx.initial_states();
    let mut states = vec![0.0; n * (nf + 1) * d];
    let mut reward = vec![0.0; n];
    let mut rows = vec![0u32; n * nf];
    let mut terminal = vec![0.0; n];
    for i in 0..n {
        states[i * (nf + 1) * d..i * (nf + 1) * d + d].copy_from_slice(&x0[i * d..(i + 1) * d]);
    }
    let mut start = x0;
    for k in 0..grid.n_steps() {
        let v = grid.ancestor(grid.n_steps(), leaf_code, k + 1);
        let u = v / grid.n_cells();
        let seg = ctx.segment(k, u, v, &start)?;
        for i in 0..n {
            let dst = (i * (nf + 1) + k * s_len + 1) * d;
            states[dst..dst + s_len * d].copy_from_slice(&seg.states[i * s_len * d..(i + 1) * s_len * d]);
            rows[i * nf + k * s_len..i * nf + (k + 1) * s_len].copy_from_slice(&seg.rows[i * s_len..(i + 1) * s_len]);
            reward[i] += seg.reward[i];
        }
        if let Some(t) = &seg.terminal {
            terminal.copy_from_slice(t);
        }
        start = end_states(&seg, n, s_len, d);
    }
    Ok(ParticleBatch { leaf: leaf.clone(), n, d, states, reward, terminal, rows })
}

impl TreeBatch {
    pub fn grid(&self) -> &Arc<ScenarioGrid> {
        &self.grid
    }

    pub fn particles(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn initial_states(&self) -> &[f64] {
        &self.x0
    }

    pub fn segment(&self, depth: usize, code: usize) -> &Segment {
        &self.segments[self.grid.global_index(depth, code) - 1]
    }

    fn s_len(&self) -> usize {
        self.grid.substeps()
    }

    /// State of particle `i` at fine index `j` on the branch through the
    /// node `code` at depth `depth_at(j)` (for `j` strictly inside a mesh
    /// interval, `child` picks the branch).
    fn state_in(&self, j: usize, child_depth: usize, child: usize, i: usize) -> &[f64] {
        let s_len = self.s_len();
        let d = self.d;
        let s = j - (child_depth - 1) * s_len;
        let seg = self.segment(child_depth, child);
        &seg.states[(i * s_len + s - 1) * d..(i * s_len + s) * d]
    }

    /// Particle states of the leaf's branch, `(n_fine + 1) x d` for particle `i`.
    pub fn leaf_path(&self, leaf: usize, i: usize) -> Vec<f64> {
        let g = &self.grid;
        let d = self.d;
        let s_len = self.s_len();
        let mut out = Vec::with_capacity((g.n_fine() + 1) * d);
        out.extend_from_slice(&self.x0[i * d..(i + 1) * d]);
        for k in 1..=g.n_steps() {
            let v = g.ancestor(g.n_steps(), leaf, k);
            let seg = self.segment(k, v);
            out.extend_from_slice(&seg.states[i * s_len * d..(i + 1) * s_len * d]);
        }
        out
    }

    /// Per-particle realized reward, integrated over the tree: the value of
    /// a node is its interval's running reward plus the cell-weighted value
    /// of its children (or the terminal reward at a leaf).
    pub fn particle_values(&self) -> Vec<f64> {
        let g = &self.grid;
        let n = self.n;
        let probs = g.cell_probs();
        let nc = g.n_cells();
        let ns = g.n_steps();
        let mut below: Vec<Vec<f64>> = (0..g.nodes_at_depth(ns))
            .map(|v| {
                let seg = self.segment(ns, v);
                let term = seg.terminal.as_ref().expect("leaf segment has terminal values");
                (0..n).map(|i| seg.reward[i] + term[i]).collect()
            })
            .collect();
        for k in (0..ns).rev() {
            below = (0..g.nodes_at_depth(k))
                .map(|u| {
                    (0..n)
                        .map(|i| {
                            let own = if k == 0 { 0.0 } else { self.segment(k, u).reward[i] };
                            own + (0..nc).map(|c| probs[c] * below[u * nc + c][i]).sum::<f64>()
                        })
                        .collect()
                })
                .collect();
        }
        below.pop().expect("root")
    }

    /// `Law(X_t | node)` per slot: the particles of the node at mesh times,
    /// the cell-weighted mixture of the children's branches in between.
    /// Every slot is compressed to at most `N` atoms.
    pub fn conditional_law(&self) -> Result<MeasureFlow> {
        let g = self.grid.clone();
        let d = self.d;
        let n = self.n;
        let s_len = self.s_len();
        let nc = g.n_cells();
        let probs = g.cell_probs();
        let mut index = Vec::with_capacity(g.n_slots());
        for j in 0..=g.n_fine() {
            for code in 0..g.nodes_at_depth(g.depth_at(j)) {
                index.push((j, code));
            }
        }
        let slots: Vec<Result<EmpiricalMeasure>> = index
            .par_iter()
            .map(|&(j, code)| {
                let k = g.depth_at(j);
                let s = j - k * s_len;
                if s == 0 {
                    let pts = if k == 0 {
                        self.x0.clone()
                    } else {
                        end_states(self.segment(k, code), n, s_len, d)
                    };
                    EmpiricalMeasure::uniform(d, pts).map(|m| m.compress(Some(n)))
                } else {
                    let mut pts = Vec::with_capacity(nc * n * d);
                    let mut w = Vec::with_capacity(nc * n);
                    for c in 0..nc {
                        let v = code * nc + c;
                        for i in 0..n {
                            pts.extend_from_slice(self.state_in(j, k + 1, v, i));
                            w.push(probs[c] / n as f64);
                        }
                    }
                    EmpiricalMeasure::from_masses(d, pts, w).map(|m| m.compress(Some(n)))
                }
            })
            .collect();
        MeasureFlow::new(g, slots.into_iter().collect::<Result<Vec<_>>>()?)
    }
}

/// Unconditioned particles with their own common-noise paths, binned into
/// leaves afterwards. Cross-check for [`TreeBatch::conditional_law`].
#[derive(Debug, Clone)]
pub struct BinnedBatch {
    grid: Arc<ScenarioGrid>,
    d: usize,
    n: usize,
    /// leaf code per particle
    pub leaves: Vec<usize>,
    /// `N x (n_fine + 1) x d`
    pub states: Vec<f64>,
}

pub fn simulate_binned(
    model: &ModelSpec,
    flow: &MeasureFlow,
    policy: &FeedbackPolicy,
    n: usize,
    seed: u64,
) -> Result<BinnedBatch> {
    let ctx = Ctx::new(model, flow, policy, n, seed)?;
    let grid = ctx.grid;
    let (d, m, m0) = (model.d, model.m, model.m0);
    let nf = grid.n_fine();
    let s_len = grid.substeps();
    let sq = grid.fine_dt().sqrt();
    let h = grid.mesh_dt();
    let x0 = ctx.initial_states();
    let mut states = vec![0.0; n * (nf + 1) * d];
    let mut leaves = vec![0usize; n];
    states.par_chunks_mut((nf + 1) * d).zip(leaves.par_iter_mut()).enumerate().try_for_each(
        |(i, (path, leaf))| -> Result<()> {
            let mut rng = stream(ctx.seed, TAG_BINNED, i as u64, 0);
            let mut buf = StepBuf::new(d, m, m0);
            path[..d].copy_from_slice(&x0[i * d..(i + 1) * d]);
            let mut code = 0;
            let mut db = vec![0.0; s_len * m0];
            let mut big = vec![0.0; m0];
            for k in 0..grid.n_steps() {
                for v in db.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = sq * z;
                }
                big.iter_mut().for_each(|b| *b = 0.0);
                for s in 0..s_len {
                    let j = k * s_len + s;
                    let (head, tail) = path.split_at_mut((j + 1) * d);
                    let x = &head[j * d..];
                    let dw = &ctx.noise[(i * nf + j) * m..(i * nf + j + 1) * m];
                    ctx.step(j, code, x, dw, &db[s * m0..(s + 1) * m0], &mut buf, &mut tail[..d])?;
                    for l in 0..m0 {
                        big[l] += db[s * m0 + l];
                    }
                }
                code = code * grid.n_cells() + grid.classify_increment(&big, h)?;
            }
            *leaf = code;
            Ok(())
        },
    )?;
    Ok(BinnedBatch { grid: flow.grid().clone(), d, n, leaves, states })
}

impl BinnedBatch {
    /// Empirical law of the particles whose common-noise path falls in each
    /// node. A node without particles is an error.
    pub fn conditional_law(&self) -> Result<MeasureFlow> {
        let g = &self.grid;
        let d = self.d;
        let nf = g.n_fine();
        let mut slots = Vec::with_capacity(g.n_slots());
        for j in 0..=nf {
            let k = g.depth_at(j);
            for code in 0..g.nodes_at_depth(k) {
                let mut pts = Vec::new();
                for i in 0..self.n {
                    if g.ancestor(g.n_steps(), self.leaves[i], k) == code {
                        let off = (i * (nf + 1) + j) * d;
                        pts.extend_from_slice(&self.states[off..off + d]);
                    }
                }
                if pts.is_empty() {
                    return Err(Error::EmptyNode(g.node_id(k, code).to_string()));
                }
                slots.push(EmpiricalMeasure::uniform(d, pts)?.compress(Some(self.n)));
            }
        }
        MeasureFlow::new(g.clone(), slots)
    }
}

/// Outcome of [`moment_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub gamma: f64,
    /// `E sup_t |X_t|^gamma`
    pub lhs: f64,
    /// `c4 (1 + E sup_t int |z|^gamma mu_t + E int |a_t|^gamma dt)`
    pub rhs: f64,
    pub passed: bool,
}

/// Checks the state moment estimate on a simulated batch, with the
/// environment flow and the applied controls plugged into the right side.
/// Expectations over the common noise weight each branch by its probability.
pub fn moment_check(
    batch: &TreeBatch,
    flow: &MeasureFlow,
    policy: &FeedbackPolicy,
    gamma: f64,
    c4: f64,
) -> Result<MomentReport> {
    let g = batch.grid.clone();
    if !same_grid(&g, flow.grid()) || !same_grid(&g, policy.grid()) {
        return Err(Error::GridMismatch("batch, flow and policy grids differ".into()));
    }
    let n = batch.n;
    let d = batch.d;
    let ns = g.n_steps();
    let nf = g.n_fine();
    let dt = g.fine_dt();
    let norm_pow = |x: &[f64]| crate::measures::empirical::norm(x).powf(gamma);

    let slot_moment: Vec<f64> = flow.slots().par_iter().map(|mu| mu.moment(gamma)).collect();
    let actions = policy.actions();
    let row_cost = |r: u32| -> f64 {
        policy.row(r as usize).iter().map(|&(a, w)| w * norm_pow(actions.get(a as usize))).sum::<f64>()
    };

    let mut lhs = 0.0;
    let mut flow_term = 0.0;
    for leaf in 0..g.n_leaves() {
        let p = g.node_prob(ns, leaf);
        let mut sup_flow: f64 = 0.0;
        for j in 0..=nf {
            let code = g.ancestor(ns, leaf, g.depth_at(j));
            sup_flow = sup_flow.max(slot_moment[g.slot(j, code)]);
        }
        flow_term += p * sup_flow;
        let total: f64 = (0..n)
            .into_par_iter()
            .map(|i| batch.leaf_path(leaf, i).chunks_exact(d).map(norm_pow).fold(0.0, f64::max))
            .sum();
        lhs += p * total / n as f64;
    }
    let mut control_term = 0.0;
    for k in 1..=ns {
        for v in 0..g.nodes_at_depth(k) {
            let seg = batch.segment(k, v);
            let total: f64 = seg.rows.iter().map(|&r| row_cost(r)).sum();
            control_term += g.node_prob(k, v) * total * dt / n as f64;
        }
    }
    let rhs = c4 * (1.0 + flow_term + control_term);
    Ok(MomentReport { gamma, lhs, rhs, passed: lhs <= rhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::StateGrid;
    use crate::model::InitialLaw;
    use crate::relaxed::ActionGrid;

    fn setup(model: &ModelSpec, n_steps: usize, n_cells: usize, s: usize) -> (MeasureFlow, FeedbackPolicy) {
        let grid = Arc::new(ScenarioGrid::new(model.horizon, n_steps, n_cells, 1, s).unwrap());
        let flow = MeasureFlow::constant(grid.clone(), EmpiricalMeasure::dirac(&[0.0]));
        let state = StateGrid::cube(&[-5.0], &[5.0], 11).unwrap();
        let pol = FeedbackPolicy::constant(grid, state, model.actions.clone(), 0).unwrap();
        (flow, pol)
    }

    #[test]
    fn deterministic_drift() {
        let mut model = ModelSpec::blank("ode", 1, 1, 1, 2.0, ActionGrid::new(1, vec![0.75]).unwrap());
        model.drift = Arc::new(|_, _, _, a, out| out[0] = a[0]);
        model.initial = InitialLaw::Normal { mean: vec![0.0], std: vec![1.0] };
        let (flow, pol) = setup(&model, 2, 2, 3);
        let b = simulate_tree(&model, &flow, &pol, 50, 3).unwrap();
        for leaf in 0..4 {
            for i in 0..50 {
                let path = b.leaf_path(leaf, i);
                assert!((path[6] - path[0] - 1.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn brownian_variance() {
        let mut model = ModelSpec::blank("bm", 1, 1, 1, 1.5, ActionGrid::new(1, vec![0.0]).unwrap());
        model.sigma = Arc::new(|_, _, _, out| out[0] = 1.0);
        let (flow, pol) = setup(&model, 1, 1, 4);
        let n = 20_000;
        let b = simulate_tree(&model, &flow, &pol, n, 9).unwrap();
        let xs: Vec<f64> = (0..n).map(|i| b.leaf_path(0, i)[4]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // sd of the sample variance of a normal is T sqrt(2 / (n - 1))
        assert!((var - 1.5).abs() < 4.0 * 1.5 * (2.0 / n as f64).sqrt(), "var {var}");
    }

    #[test]
    fn leaf_mode_matches_tree_and_is_deterministic() {
        let model = crate::model::builtin("bounded_demo").unwrap();
        let grid = Arc::new(ScenarioGrid::new(model.horizon, 2, 2, 1, 3).unwrap());
        let flow = MeasureFlow::constant(grid.clone(), EmpiricalMeasure::dirac(&[0.2]));
        let state = StateGrid::cube(&[-5.0], &[5.0], 21).unwrap();
        let pol = FeedbackPolicy::constant(grid.clone(), state, model.actions.clone(), 3).unwrap();
        let tree = simulate_tree(&model, &flow, &pol, 40, 5).unwrap();
        let tree2 = simulate_tree(&model, &flow, &pol, 40, 5).unwrap();
        assert_eq!(tree.segments, tree2.segments);
        let leaf = grid.node_id(2, 2);
        let b = simulate_node_particles(&model, &flow, &pol, &leaf, 40, 5).unwrap();
        for i in 0..40 {
            let path = tree.leaf_path(2, i);
            assert_eq!(&b.states[i * 7..(i + 1) * 7], &path[..]);
        }
        // branches sharing the first cell share the first interval
        assert_eq!(tree.segment(1, 1).states, b.states.chunks(7).flat_map(|c| c[1..4].to_vec()).collect::<Vec<_>>());
    }

    #[test]
    fn zero_dynamics_moment_check() {
        let model = ModelSpec::blank("zero", 1, 1, 1, 1.0, ActionGrid::new(1, vec![0.0]).unwrap());
        let (flow, pol) = setup(&model, 2, 2, 2);
        let b = simulate_tree(&model, &flow, &pol, 10, 1).unwrap();
        assert!(moment_check(&b, &flow, &pol, 2.0, 1.0).unwrap().passed);
        let values = b.particle_values();
        assert!(values.iter().all(|v| *v == 0.0));
    }
}
