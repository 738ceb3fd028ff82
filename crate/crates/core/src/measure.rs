//! Discrete exponential martingale and change of measure on the tree.
//!
//! The one-step density kernel at an alive node is
//! `(1 + delta dt) * (1 + (phi dB + psi dM) / (1 - q))` with
//! `q = gamma dt`; after default it is `(1 + delta dt) * (1 + phi dB)`.
//! The survival normalisation `1/(1-q)` makes the kernel exact: its
//! conditional mean is `1 + delta dt` at every node, the defaulting branch
//! carries the factor `(1 + delta dt)(1 + psi)` — so the density dies on
//! default exactly when `psi = -1` and stays non-negative for `psi >= -1` —
//! and for `delta = 0` the reweighted branch probabilities reproduce the
//! drifted increment means `phi dt` and `psi gamma dt` without discretisation
//! error.

use crate::driver::Curve;
use crate::error::{Error, Result};
use crate::tree::{NodeField, ScenarioTree};

#[derive(Debug, Clone)]
pub struct MeasureChange {
    pub phi: Curve,
    pub psi: Curve,
    pub delta: Curve,
    /// Density at each node: expectation of the path product over the paths
    /// reaching the node.
    pub lambda: NodeField,
    /// Per layer, node and branch: the one-step density kernel.
    pub kernels: Vec<Vec<Vec<f64>>>,
    /// Per-node closed product form; available when the coefficients are
    /// constant in time, the grid is uniform and there is no default channel
    /// (otherwise the product is genuinely path-dependent).
    pub closed_form: Option<NodeField>,
}

impl MeasureChange {
    /// `E[Lambda_T]`, exhaustively over the terminal layer.
    pub fn terminal_mean(&self, tree: &ScenarioTree) -> f64 {
        let last = tree.layers().len() - 1;
        tree.layer(last)
            .iter()
            .zip(&self.lambda[last])
            .map(|(n, l)| n.prob * l)
            .sum()
    }

    pub fn min_lambda(&self) -> f64 {
        self.lambda.iter().flatten().fold(f64::INFINITY, |a, &b| a.min(b))
    }

    /// Largest defect of the per-node kernel-mean identity
    /// `sum_b p_b kernel_b = 1 + delta dt`.
    pub fn kernel_mean_residual(&self, tree: &ScenarioTree) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..tree.grid().steps() {
            let dt = tree.grid().dt(k);
            let target = 1.0 + self.delta.value_at(tree.grid().t(k)) * dt;
            for (node, kern) in tree.layer(k).iter().zip(&self.kernels[k]) {
                let mean: f64 = node.branches.iter().zip(kern).map(|(b, l)| b.prob * l).sum();
                worst = worst.max((mean - target).abs());
            }
        }
        worst
    }
}

/// Builds the discrete exponential for coefficient curves `(phi, psi, delta)`.
/// Requires `psi >= -1` wherever the default channel is open and rejects
/// steps so coarse that a branch kernel would turn negative.
pub fn doleans_exponential(
    tree: &ScenarioTree,
    phi: Curve,
    psi: Curve,
    delta: Curve,
) -> Result<MeasureChange> {
    let steps = tree.grid().steps();
    let mut kernels: Vec<Vec<Vec<f64>>> = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = tree.grid().t(k);
        let dt = tree.grid().dt(k);
        let (p, s, d) = (phi.value_at(t), psi.value_at(t), delta.value_at(t));
        let q = tree.step_default_prob(k);
        if q > 0.0 && s < -1.0 {
            return Err(Error::Precondition(format!(
                "psi = {s} < -1 at t = {t}: the density would change sign on default"
            )));
        }
        let growth = 1.0 + d * dt;
        let mut layer_kernels = Vec::with_capacity(tree.layer(k).len());
        for node in tree.layer(k) {
            let alive = node.status.is_alive();
            let kern: Vec<f64> = node
                .branches
                .iter()
                .map(|b| {
                    let base = if alive && q > 0.0 {
                        1.0 + (p * b.db + s * b.dm) / (1.0 - q)
                    } else {
                        1.0 + p * b.db
                    };
                    growth * base
                })
                .collect();
            if let Some(&bad) = kern.iter().find(|&&v| v < 0.0) {
                return Err(Error::Precondition(format!(
                    "branch kernel {bad} negative at t = {t}: refine the grid or shrink (phi, psi)"
                )));
            }
            layer_kernels.push(kern);
        }
        kernels.push(layer_kernels);
    }

    // Forward propagation of mass * density; node density is the
    // probability-weighted average of path products.
    let mut lambda: NodeField = tree.layers().iter().map(|l| vec![0.0; l.len()]).collect();
    let mut mass: Vec<f64> = vec![1.0];
    lambda[0][0] = 1.0;
    for k in 0..steps {
        let mut next = vec![0.0; tree.layer(k + 1).len()];
        for (i, node) in tree.layer(k).iter().enumerate() {
            for (b, kern) in node.branches.iter().zip(&kernels[k][i]) {
                next[b.child as usize] += mass[i] * b.prob * kern;
            }
        }
        for (i, node) in tree.layer(k + 1).iter().enumerate() {
            lambda[k + 1][i] = if node.prob > 0.0 { next[i] / node.prob } else { 0.0 };
        }
        mass = next;
    }

    let closed_form = closed_product_form(tree, &phi, &psi, &delta);
    Ok(MeasureChange { phi, psi, delta, lambda, kernels, closed_form })
}

/// Closed per-node product: up/down kernel powers counted from the node
/// index. Only well-defined without a default channel, with constant
/// coefficients on a uniform grid.
fn closed_product_form(
    tree: &ScenarioTree,
    phi: &Curve,
    psi: &Curve,
    delta: &Curve,
) -> Option<NodeField> {
    if !tree.grid().is_uniform() {
        return None;
    }
    if (0..tree.grid().steps()).any(|k| tree.step_default_prob(k) > 0.0) {
        return None;
    }
    let t0 = 0.0;
    for k in 0..tree.grid().steps() {
        let t = tree.grid().t(k);
        if phi.value_at(t) != phi.value_at(t0)
            || psi.value_at(t) != psi.value_at(t0)
            || delta.value_at(t) != delta.value_at(t0)
        {
            return None;
        }
    }
    let dt = tree.grid().dt(0);
    let s = dt.sqrt();
    let growth = 1.0 + delta.value_at(t0) * dt;
    let up = growth * (1.0 + phi.value_at(t0) * s);
    let down = growth * (1.0 - phi.value_at(t0) * s);
    let field = tree
        .layers()
        .iter()
        .enumerate()
        .map(|(k, layer)| {
            layer
                .iter()
                .map(|n| {
                    let ups = ((k as i32 + n.j) / 2) as i32;
                    let downs = k as i32 - ups;
                    up.powi(ups) * down.powi(downs)
                })
                .collect()
        })
        .collect();
    Some(field)
}

#[derive(Debug, Clone, Copy)]
pub struct GirsanovResiduals {
    /// Max over nodes of `|E_Q[dB] - phi dt|`.
    pub db: f64,
    /// Max over nodes of `|E_Q[dM] - psi gamma dt|`.
    pub dm: f64,
}

/// Checks that the reweighted branch probabilities produce the drifted
/// increment means. Requires `delta = 0` on the grid.
pub fn girsanov_check(tree: &ScenarioTree, mc: &MeasureChange) -> Result<GirsanovResiduals> {
    for k in 0..tree.grid().steps() {
        if mc.delta.value_at(tree.grid().t(k)) != 0.0 {
            return Err(Error::Precondition("drift must vanish for the increment check".into()));
        }
    }
    let mut worst_db = 0.0f64;
    let mut worst_dm = 0.0f64;
    for k in 0..tree.grid().steps() {
        let t = tree.grid().t(k);
        let dt = tree.grid().dt(k);
        let phi = mc.phi.value_at(t);
        let psi = mc.psi.value_at(t);
        for (node, kern) in tree.layer(k).iter().zip(&mc.kernels[k]) {
            let total: f64 = node.branches.iter().zip(kern).map(|(b, l)| b.prob * l).sum();
            if total <= 0.0 {
                // A killed branch family carries no mass to reweight.
                continue;
            }
            let gamma = tree.gamma_at(k, node);
            let mut e_db = 0.0;
            let mut e_dm = 0.0;
            for (b, l) in node.branches.iter().zip(kern) {
                let q = b.prob * l / total;
                e_db += q * b.db;
                e_dm += q * b.dm;
            }
            worst_db = worst_db.max((e_db - phi * dt).abs());
            worst_dm = worst_dm.max((e_dm - psi * gamma * dt).abs());
        }
    }
    Ok(GirsanovResiduals { db: worst_db, dm: worst_dm })
}
