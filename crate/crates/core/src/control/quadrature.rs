use std::num::NonZeroUsize;

use gauss_quad::hermite::GaussHermite;

use crate::grid::ScenarioGrid;

/// Gauss-Hermite rule for a standard normal variable: nodes `sqrt(2) x_i`,
/// weights `w_i / sqrt(pi)` renormalized to sum to one.
pub fn standard_normal_rule(n: usize) -> Vec<(f64, f64)> {
    let n = NonZeroUsize::new(n.max(1)).expect("nonzero");
    let rule = GaussHermite::new(n);
    let mut pairs: Vec<(f64, f64)> =
        rule.as_node_weight_pairs().iter().map(|&(x, w)| (std::f64::consts::SQRT_2 * x, w)).collect();
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.iter_mut().for_each(|p| p.1 /= total);
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs
}

/// Tensor product of a 1-D rule over `dim` coordinates; nodes row-major.
pub fn tensor_rule(rule: &[(f64, f64)], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let k = rule.len();
    let total = k.pow(dim as u32);
    let mut nodes = Vec::with_capacity(total * dim);
    let mut weights = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut w = 1.0;
        for _ in 0..dim {
            let (z, wz) = rule[idx % k];
            nodes.push(z);
            w *= wz;
            idx /= k;
        }
        weights.push(w);
    }
    (nodes, weights)
}

/// Equal-weight representative points of a standard normal coordinate
/// restricted to one cell: quantile midpoints inside the cell, shifted so
/// their mean equals the exact conditional mean. Returns standardized
/// `m0`-vectors (row-major) and weights summing to one.
pub fn cell_rule(grid: &ScenarioGrid, cell: usize, points: usize) -> (Vec<f64>, Vec<f64>) {
    let m0 = grid.m0();
    let per = points.max(1);
    let exact = grid.standardized_cell_mean(cell);
    // per-coordinate cell indices
    let mut coords = Vec::with_capacity(m0);
    let per_coord = (grid.n_cells() as f64).powf(1.0 / m0 as f64).round() as usize;
    let mut rest = cell;
    for _ in 0..m0 {
        coords.push(rest % per_coord);
        rest /= per_coord;
    }
    let one_dim: Vec<Vec<f64>> = coords
        .iter()
        .zip(&exact)
        .map(|(&c, &mean)| {
            let mut zs: Vec<f64> = (0..per)
                .map(|q| {
                    let v = (q as f64 + 0.5) / per as f64;
                    if per_coord == 1 {
                        crate::grid::std_quantile(1.0 - v)
                    } else {
                        grid.coord_quantile(c, v)
                    }
                })
                .collect();
            let shift = mean - zs.iter().sum::<f64>() / per as f64;
            zs.iter_mut().for_each(|z| *z += shift);
            zs
        })
        .collect();
    let total = per.pow(m0 as u32);
    let mut nodes = Vec::with_capacity(total * m0);
    for mut idx in 0..total {
        for zs in &one_dim {
            nodes.push(zs[idx % per]);
            idx /= per;
        }
    }
    (nodes, vec![1.0 / total as f64; total])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        let r = standard_normal_rule(5);
        let m2: f64 = r.iter().map(|(z, w)| w * z * z).sum();
        let m4: f64 = r.iter().map(|(z, w)| w * z.powi(4)).sum();
        assert!((m2 - 1.0).abs() < 1e-13);
        assert!((m4 - 3.0).abs() < 1e-12);
        let (nodes, w) = tensor_rule(&r, 2);
        assert_eq!(nodes.len(), 50);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cell_rule_matches_conditional_mean() {
        let g = ScenarioGrid::new(1.0, 1, 3, 1, 1).unwrap();
        for c in 0..3 {
            let (z, _) = cell_rule(&g, c, 7);
            let mean = z.iter().sum::<f64>() / 7.0;
            assert!((mean - g.standardized_cell_mean(c)[0]).abs() < 1e-12);
        }
    }
}
