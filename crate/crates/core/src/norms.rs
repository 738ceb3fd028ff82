//! Weighted solution norms on the tree. The sup-style norm takes the
//! expectation of the pathwise maximum of `exp(beta * A) * Y^2`; on a finite
//! tree the essential supremum over stopping rules coincides with the
//! pathwise maximum over grid nodes, so this is the exact value.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::tree::{NodeField, ScenarioTree};

/// Accumulated clock `A_t = sum alpha^2_k dt_k` from per-step weights.
/// Rejects non-positive weights: the aggregate weight must stay above a
/// positive floor.
pub fn weight_process(grid: &TimeGrid, alpha_sq: &[f64]) -> Result<Vec<f64>> {
    if alpha_sq.len() != grid.steps() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} per-step weights, got {}",
            grid.steps(),
            alpha_sq.len()
        )));
    }
    if let Some(&bad) = alpha_sq.iter().find(|&&a| !(a > 0.0) || !a.is_finite()) {
        return Err(Error::InvalidDriver(format!(
            "squared weight {bad} must be strictly positive and finite"
        )));
    }
    let mut a = Vec::with_capacity(grid.steps() + 1);
    a.push(0.0);
    for (k, &w) in alpha_sq.iter().enumerate() {
        a.push(a[k] + w * grid.dt(k));
    }
    Ok(a)
}

/// Exact `E[max over the path of field]` for a per-node field, computed with
/// one forward survival sweep per distinct field value.
pub fn expectation_path_max(tree: &ScenarioTree, field: &NodeField) -> Result<f64> {
    check_field(tree, field, tree.layers().len())?;
    let mut values: Vec<f64> = field.iter().flatten().copied().collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    if values.is_empty() {
        return Ok(0.0);
    }
    let mut total = values[0];
    for w in values.windows(2) {
        let threshold = w[1];
        // P(every node on the path stays strictly below the threshold).
        let mut mass: Vec<f64> = tree
            .layer(0)
            .iter()
            .enumerate()
            .map(|(i, n)| if field[0][i] < threshold { n.prob } else { 0.0 })
            .collect();
        for k in 0..tree.grid().steps() {
            let mut next = vec![0.0; tree.layer(k + 1).len()];
            for (i, node) in tree.layer(k).iter().enumerate() {
                if mass[i] == 0.0 {
                    continue;
                }
                for b in &node.branches {
                    let c = b.child as usize;
                    if field[k + 1][c] < threshold {
                        next[c] += mass[i] * b.prob;
                    }
                }
            }
            mass = next;
        }
        let below: f64 = mass.iter().sum();
        total += (w[1] - w[0]) * (1.0 - below);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedNorms {
    /// `E[pathwise max of exp(beta A) Y^2]`.
    pub s2_beta: f64,
    /// `E[integral of exp(beta A) alpha^2 Y^2 dt]`.
    pub s2_alpha_beta: f64,
    /// `E[integral of exp(beta A) Z^2 dt]`.
    pub h2_beta: f64,
    /// `E[integral of exp(beta A) U^2 gamma dt]`; only alive nodes count.
    pub m2_gamma_beta: f64,
}

/// All four norms of a `(Y, Z, U)` triple. `y` is defined on every layer,
/// `z` and `u` on the non-terminal layers.
pub fn weighted_norms(
    tree: &ScenarioTree,
    beta: f64,
    a: &[f64],
    alpha_sq: &[f64],
    y: &NodeField,
    z: &NodeField,
    u: &NodeField,
) -> Result<WeightedNorms> {
    let layers = tree.layers().len();
    check_field(tree, y, layers)?;
    check_field(tree, z, layers - 1)?;
    check_field(tree, u, layers - 1)?;
    if a.len() != layers {
        return Err(Error::ShapeMismatch("clock length must match grid".into()));
    }
    if alpha_sq.len() != layers - 1 {
        return Err(Error::ShapeMismatch("need one squared weight per step".into()));
    }

    let weighted_sq: NodeField = y
        .iter()
        .enumerate()
        .map(|(k, layer)| layer.iter().map(|v| (beta * a[k]).exp() * v * v).collect())
        .collect();
    let s2_beta = expectation_path_max(tree, &weighted_sq)?;

    let mut s2_alpha_beta = 0.0;
    let mut h2_beta = 0.0;
    let mut m2_gamma_beta = 0.0;
    for k in 0..layers - 1 {
        let w = (beta * a[k]).exp();
        let dt = tree.grid().dt(k);
        for (i, node) in tree.layer(k).iter().enumerate() {
            s2_alpha_beta += node.prob * w * alpha_sq[k] * y[k][i] * y[k][i] * dt;
            h2_beta += node.prob * w * z[k][i] * z[k][i] * dt;
            m2_gamma_beta += node.prob * w * u[k][i] * u[k][i] * tree.gamma_at(k, node) * dt;
        }
    }
    Ok(WeightedNorms { s2_beta, s2_alpha_beta, h2_beta, m2_gamma_beta })
}

/// Discrete `H^2_beta`-style integral of a single per-step field.
pub fn h2_norm(tree: &ScenarioTree, beta: f64, a: &[f64], field: &NodeField) -> Result<f64> {
    check_field(tree, field, tree.layers().len() - 1)?;
    let mut acc = 0.0;
    for k in 0..tree.layers().len() - 1 {
        let w = (beta * a[k]).exp();
        let dt = tree.grid().dt(k);
        for (i, node) in tree.layer(k).iter().enumerate() {
            acc += node.prob * w * field[k][i] * field[k][i] * dt;
        }
    }
    Ok(acc)
}

fn check_field(tree: &ScenarioTree, field: &NodeField, layers: usize) -> Result<()> {
    if field.len() < layers {
        return Err(Error::ShapeMismatch(format!(
            "field has {} layers, need {layers}",
            field.len()
        )));
    }
    for k in 0..layers {
        if field[k].len() != tree.layer(k).len() {
            return Err(Error::ShapeMismatch(format!(
                "layer {k}: field has {} entries, tree has {}",
                field[k].len(),
                tree.layer(k).len()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::IntensityCurve;
    use crate::tree::field_from_fn;

    fn tree(n: usize, rate: f64) -> ScenarioTree {
        let grid = TimeGrid::build(1.0, n, &[]).unwrap();
        ScenarioTree::build(grid, IntensityCurve::constant(rate).unwrap()).unwrap()
    }

    #[test]
    fn clock_accumulates() {
        let grid = TimeGrid::build(1.0, 4, &[]).unwrap();
        let a = weight_process(&grid, &[1.0; 4]).unwrap();
        assert!((a[4] - 1.0).abs() < 1e-15);
        assert!(weight_process(&grid, &[0.0; 4]).is_err());
        let grid2 = TimeGrid::from_times(vec![0.0, 0.5, 1.0]).unwrap();
        let a2 = weight_process(&grid2, &[1.0, 4.0]).unwrap();
        assert!((a2[2] - 2.5).abs() < 1e-15);
        let mut inc = a2.clone();
        inc.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(inc, a2);
    }

    #[test]
    fn clock_is_additive_over_concatenation() {
        let g1 = TimeGrid::build(0.5, 3, &[]).unwrap();
        let g2 = TimeGrid::build(0.5, 2, &[]).unwrap();
        let joined = g1.concat(&g2).unwrap();
        let w = vec![2.0; joined.steps()];
        let a = weight_process(&joined, &w).unwrap();
        let a1 = weight_process(&g1, &w[..3]).unwrap();
        assert!((a[3] - a1[3]).abs() < 1e-15);
        assert!((a[5] - (a1[3] + 2.0 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn zero_process_has_zero_norms() {
        let t = tree(6, 0.2);
        let a = weight_process(t.grid(), &[1.0; 6]).unwrap();
        let y = field_from_fn(&t, |_, _| 0.0);
        let z = field_from_fn(&t, |_, _| 0.0);
        let norms = weighted_norms(&t, 3.0, &a, &[1.0; 6], &y, &z, &z).unwrap();
        assert_eq!(norms.s2_beta, 0.0);
        assert_eq!(norms.h2_beta, 0.0);
        assert_eq!(norms.m2_gamma_beta, 0.0);
    }

    #[test]
    fn unit_process_beta_zero() {
        let t = tree(5, 0.0);
        let a = weight_process(t.grid(), &[1.0; 5]).unwrap();
        let ones = field_from_fn(&t, |_, _| 1.0);
        let norms = weighted_norms(&t, 0.0, &a, &[1.0; 5], &ones, &ones, &ones).unwrap();
        assert!((norms.h2_beta - 1.0).abs() < 1e-12);
        assert!((norms.s2_beta - 1.0).abs() < 1e-12);
        // No intensity: the gamma-weighted norm is identically zero.
        assert_eq!(norms.m2_gamma_beta, 0.0);
    }

    #[test]
    fn path_max_matches_enumeration() {
        let t = tree(6, 0.25);
        let field = field_from_fn(&t, |k, n| (n.w * 1.7).sin() + 0.3 * k as f64 * n.w.cos());
        let fast = expectation_path_max(&t, &field).unwrap();
        let mut slow = 0.0;
        t.for_each_path(|path, p| {
            let m = path
                .iter()
                .enumerate()
                .map(|(k, &i)| field[k][i])
                .fold(f64::NEG_INFINITY, f64::max);
            slow += p * m;
        });
        assert!((fast - slow).abs() < 1e-12, "fast={fast} slow={slow}");
    }

    #[test]
    fn path_max_constant_field() {
        let t = tree(4, 0.1);
        let field = field_from_fn(&t, |_, _| -2.5);
        assert!((expectation_path_max(&t, &field).unwrap() + 2.5).abs() < 1e-15);
    }
}
