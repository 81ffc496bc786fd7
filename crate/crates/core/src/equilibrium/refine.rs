use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{iterate, IterateConfig};
use crate::error::{Error, Result};
use crate::grid::ScenarioGrid;
use crate::measures::{wasserstein_p, MeasureFlow};
use crate::model::ModelSpec;
use crate::rng::{stream, TAG_PATHS};

#[derive(Debug, Clone, PartialEq)]
pub struct RefineRow {
    /// `(n_steps, n_cells)` of the two grids compared
    pub coarse: (usize, usize),
    pub fine: (usize, usize),
    /// mean over sampled common-noise paths of the largest distance along the path
    pub mean_distance: f64,
    pub max_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineStudy {
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
    pub rows: Vec<RefineRow>,
}

impl RefineStudy {
    /// Whether the mean distances decrease strictly along the sequence.
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].mean_distance < w[0].mean_distance)
    }
}

/// Leaf code of a path (fine increments of the finest grid, `m0` each) on `grid`.
fn leaf_on(grid: &ScenarioGrid, incs: &[f64], finest_fine: usize) -> Result<usize> {
    let m0 = grid.m0();
    let per_step = finest_fine / grid.n_steps();
    let mut code = 0;
    let mut big = vec![0.0; m0];
    for k in 0..grid.n_steps() {
        big.iter_mut().for_each(|b| *b = 0.0);
        for s in 0..per_step {
            let off = (k * per_step + s) * m0;
            for l in 0..m0 {
                big[l] += incs[off + l];
            }
        }
        code = code * grid.n_cells() + grid.classify_increment(&big, grid.mesh_dt())?;
    }
    Ok(code)
}

/// Solves on each grid (coarse to fine) and compares consecutive equilibria
/// along `paths` sampled common-noise paths: for each path, the largest
/// `W_p` distance over the coarse grid's fine times between the measures of
/// the nodes the path visits on each grid.
pub fn refine_study(
    model: &ModelSpec,
    grids: &[Arc<ScenarioGrid>],
    cfg: &IterateConfig,
    paths: usize,
    seed: u64,
) -> Result<RefineStudy> {
    if grids.len() < 2 {
        return Err(Error::NotNested("need at least two grids".into()));
    }
    for w in grids.windows(2) {
        if !w[1].refines(&w[0]) {
            return Err(Error::NotNested(format!(
                "({}, {}) does not refine ({}, {})",
                w[1].n_steps(),
                w[1].n_cells(),
                w[0].n_steps(),
                w[0].n_cells()
            )));
        }
    }
    let run_cfg = IterateConfig { eval_seed: None, ..cfg.clone() };
    let mut flows = Vec::with_capacity(grids.len());
    let mut converged = Vec::with_capacity(grids.len());
    let mut iterations = Vec::with_capacity(grids.len());
    for g in grids {
        let rep = iterate(model, g.clone(), &run_cfg)?;
        if !rep.converged {
            log::warn!("refinement grid ({}, {}) did not converge", g.n_steps(), g.n_cells());
        }
        converged.push(rep.converged);
        iterations.push(rep.iterations);
        flows.push(rep.flow);
    }

    let finest = grids.last().expect("non-empty");
    let nf = finest.n_fine();
    let m0 = finest.m0();
    let sq = finest.fine_dt().sqrt();
    let samples: Vec<Vec<f64>> = (0..paths)
        .map(|i| {
            let mut rng = stream(seed, TAG_PATHS, i as u64, 1);
            (0..nf * m0).map(|_| sq * rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    let leaves: Vec<Vec<usize>> =
        grids.iter().map(|g| samples.iter().map(|s| leaf_on(g, s, nf)).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for w in 0..grids.len() - 1 {
        let (ga, gb) = (&grids[w], &grids[w + 1]);
        let (fa, fb): (&MeasureFlow, &MeasureFlow) = (&flows[w], &flows[w + 1]);
        let ratio = gb.n_fine() / ga.n_fine();
        let mut cache: HashMap<(usize, usize), f64> = HashMap::new();
        let mut total = 0.0;
        let mut worst: f64 = 0.0;
        for i in 0..paths {
            let mut path_max: f64 = 0.0;
            for ja in 0..=ga.n_fine() {
                let jb = ja * ratio;
                let ca = ga.ancestor(ga.n_steps(), leaves[w][i], ga.depth_at(ja));
                let cb = gb.ancestor(gb.n_steps(), leaves[w + 1][i], gb.depth_at(jb));
                let key = (ga.slot(ja, ca), gb.slot(jb, cb));
                let dist = match cache.get(&key) {
                    Some(v) => *v,
                    None => {
                        let v = wasserstein_p(fa.at(ja, ca), fb.at(jb, cb), model.p)?;
                        cache.insert(key, v);
                        v
                    }
                };
                path_max = path_max.max(dist);
            }
            total += path_max;
            worst = worst.max(path_max);
        }
        rows.push(RefineRow {
            coarse: (ga.n_steps(), ga.n_cells()),
            fine: (gb.n_steps(), gb.n_cells()),
            mean_distance: total / paths.max(1) as f64,
            max_distance: worst,
        });
    }
    Ok(RefineStudy { converged, iterations, rows })
}
