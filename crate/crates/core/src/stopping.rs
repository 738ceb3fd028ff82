//! Optimal stopping on the tree: linear Snell envelope with running cost,
//! exhaustive brute-force stopping values as oracles, epsilon-optimal times
//! and the strong supermartingale property of reflected solutions under the
//! nonlinear expectation.

use crate::bsde::{continuation, f_expectation, implicit_y, rule_boundary};
use crate::driver::Driver;
use crate::error::{Error, Result};
use crate::reflected::{Barrier, ReflectedSolution};
use crate::rules::StoppingRule;
use crate::tree::{NodeField, ScenarioTree};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Gain of a stopping problem: a per-node payoff (barrier value before the
/// horizon, terminal value at it) and a per-step running cost accrued while
/// continuing.
#[derive(Debug, Clone)]
pub struct GainProcess {
    pub payoff: NodeField,
    pub running_cost: NodeField,
}

impl GainProcess {
    /// Pure stopping payoff without running cost.
    pub fn from_payoff(tree: &ScenarioTree, barrier: &Barrier, terminal: &[f64]) -> Self {
        let last = tree.layers().len() - 1;
        let payoff = tree
            .layers()
            .iter()
            .enumerate()
            .map(|(k, layer)| {
                if k == last {
                    terminal.to_vec()
                } else {
                    layer
                        .iter()
                        .map(|n| barrier.triple(tree, k, n).value)
                        .collect()
                }
            })
            .collect();
        let running_cost = (0..last).map(|k| vec![0.0; tree.layer(k).len()]).collect();
        Self { payoff, running_cost }
    }

    /// Gain whose running cost is the coefficient evaluated along a reflected
    /// solution's own components.
    pub fn from_reflected(
        tree: &ScenarioTree,
        driver: &Driver,
        sol: &ReflectedSolution,
        barrier: &Barrier,
        terminal: &[f64],
    ) -> Self {
        let mut gain = Self::from_payoff(tree, barrier, terminal);
        for k in 0..tree.grid().steps() {
            let t = tree.grid().t(k);
            let dt = tree.grid().dt(k);
            for (i, node) in tree.layer(k).iter().enumerate() {
                let gamma = tree.gamma_at(k, node);
                gain.running_cost[k][i] =
                    driver.evaluate(t, node, gamma, sol.y_right[k][i], sol.z[k][i], sol.u[k][i]) * dt;
            }
        }
        gain
    }
}

#[derive(Debug, Clone)]
pub struct SnellEnvelope {
    pub value: NodeField,
    pub rule: StoppingRule,
    /// Largest per-node defect of the supermartingale inequality
    /// `E[S_next] + cost <= S`.
    pub supermartingale_defect: f64,
}

/// Backward dynamic programming value of stopping against the gain:
/// `S = max(payoff, E[S_next] + cost)`, with the first-hit optimal rule.
pub fn snell_envelope(tree: &ScenarioTree, gain: &GainProcess) -> Result<SnellEnvelope> {
    let layers = tree.layers().len();
    let last = layers - 1;
    if gain.payoff.len() != layers {
        return Err(Error::ShapeMismatch("payoff must cover every layer".into()));
    }
    let mut value: NodeField = vec![Vec::new(); layers];
    let mut mask: Vec<Vec<bool>> = vec![Vec::new(); layers];
    value[last] = gain.payoff[last].clone();
    mask[last] = vec![true; value[last].len()];
    let mut defect = 0.0f64;
    for k in (0..last).rev() {
        let next = &value[k + 1];
        let layer = tree.layer(k);
        let mut vals = Vec::with_capacity(layer.len());
        let mut stops = Vec::with_capacity(layer.len());
        for (i, node) in layer.iter().enumerate() {
            let cont: f64 = node.branches.iter().map(|b| b.prob * next[b.child as usize]).sum::<f64>()
                + gain.running_cost[k][i];
            let pay = gain.payoff[k][i];
            let v = cont.max(pay);
            defect = defect.max(cont - v);
            vals.push(v);
            stops.push(pay >= cont);
        }
        value[k] = vals;
        mask[k] = stops;
    }
    let rule = StoppingRule::from_mask(tree, mask)?;
    Ok(SnellEnvelope { value, rule, supermartingale_defect: defect.max(0.0) })
}

/// Expected gain of a fixed rule under linear expectation (zero driver):
/// used as the enumeration oracle for the Snell recursion.
pub fn stopped_expectation(tree: &ScenarioTree, gain: &GainProcess, rule: &StoppingRule) -> f64 {
    let layers = tree.layers().len();
    let mut value = gain.payoff[layers - 1].clone();
    for k in (0..layers - 1).rev() {
        let layer = tree.layer(k);
        let mut vals = Vec::with_capacity(layer.len());
        for (i, node) in layer.iter().enumerate() {
            if rule.stops_at(k, i) {
                vals.push(gain.payoff[k][i]);
            } else {
                let cont: f64 =
                    node.branches.iter().map(|b| b.prob * value[b.child as usize]).sum();
                vals.push(cont + gain.running_cost[k][i]);
            }
        }
        value = vals;
    }
    value[0]
}

const MAX_DECISION_BITS: usize = 22;
const MAX_EXHAUSTIVE_STEPS: usize = 6;

/// Decision coordinates for exhaustive enumeration: every non-terminal node
/// from layer `sigma_layer` on.
fn decision_nodes(tree: &ScenarioTree, sigma_layer: usize) -> Result<Vec<(usize, usize)>> {
    if tree.grid().steps() > MAX_EXHAUSTIVE_STEPS {
        return Err(Error::TooLarge(format!(
            "{} steps exceed the exhaustive-enumeration cap of {MAX_EXHAUSTIVE_STEPS}",
            tree.grid().steps()
        )));
    }
    let mut coords = Vec::new();
    for k in sigma_layer..tree.grid().steps() {
        for i in 0..tree.layer(k).len() {
            coords.push((k, i));
        }
    }
    if coords.len() > MAX_DECISION_BITS {
        return Err(Error::TooLarge(format!(
            "{} decision nodes exceed the enumeration cap of {MAX_DECISION_BITS}",
            coords.len()
        )));
    }
    Ok(coords)
}

#[derive(Debug, Clone)]
pub struct BruteForceValue {
    /// Node-wise maximum over all enumerated rules, per node of the sigma
    /// layer.
    pub values: Vec<f64>,
    pub sigma_layer: usize,
    pub rules_evaluated: usize,
}

/// Exhaustive nonlinear stopping value from a deterministic start layer:
/// for every stopping rule at or after the layer, the coefficient is run
/// backward from the rule's boundary with the barrier value as payoff
/// (terminal value at the horizon), and the node-wise maximum is taken.
/// Exact by enumeration; only small trees are admitted.
pub fn brute_force_stopping_value(
    tree: &ScenarioTree,
    driver: &Driver,
    barrier: &Barrier,
    terminal: &[f64],
    sigma_layer: usize,
) -> Result<BruteForceValue> {
    let coords = decision_nodes(tree, sigma_layer)?;
    let last = tree.layers().len() - 1;
    let payoff: NodeField = tree
        .layers()
        .iter()
        .enumerate()
        .map(|(k, layer)| {
            if k == last {
                terminal.to_vec()
            } else {
                layer.iter().map(|n| barrier.triple(tree, k, n).value).collect()
            }
        })
        .collect();

    let sigma_len = tree.layer(sigma_layer).len();
    let mut best = vec![f64::NEG_INFINITY; sigma_len];
    let total = 1usize << coords.len();
    for mask_bits in 0..total {
        // Backward evaluation of this rule from the horizon to sigma.
        let mut value = payoff[last].clone();
        for k in (sigma_layer..last).rev() {
            let t = tree.grid().t(k);
            let dt = tree.grid().dt(k);
            let layer = tree.layer(k);
            let mut vals = Vec::with_capacity(layer.len());
            for (i, node) in layer.iter().enumerate() {
                let bit = coords
                    .binary_search(&(k, i))
                    .map(|pos| mask_bits >> pos & 1 == 1)
                    .unwrap_or(false);
                if bit {
                    vals.push(payoff[k][i]);
                } else {
                    let step = continuation(node, &value, dt);
                    let gamma = tree.gamma_at(k, node);
                    let (y, _) = implicit_y(driver, t, node, gamma, dt, step.mean, step.z, step.u);
                    vals.push(y);
                }
            }
            value = vals;
        }
        for (b, v) in best.iter_mut().zip(&value) {
            *b = b.max(*v);
        }
    }
    Ok(BruteForceValue { values: best, sigma_layer, rules_evaluated: total })
}

#[derive(Debug, Clone)]
pub struct NonlinearStoppingValue {
    /// Reflected state at the sigma layer.
    pub reflected: Vec<f64>,
    /// Exhaustive oracle values when the tree admits enumeration.
    pub oracle: Option<BruteForceValue>,
    pub rusc: bool,
    /// Node-wise `reflected - oracle` (only meaningful with an oracle).
    pub max_gap: f64,
}

/// The reflected lower-barrier state as the value of the stopping problem.
/// Requires the terminal value to coincide with the barrier's terminal
/// value. Equality against the oracle is asserted by callers only when the
/// barrier is right-upper semi-continuous; otherwise the gap is informative.
pub fn nonlinear_stopping_value(
    tree: &ScenarioTree,
    driver: &Driver,
    barrier: &Barrier,
    terminal: &[f64],
    sigma_layer: usize,
) -> Result<NonlinearStoppingValue> {
    let last = tree.layers().len() - 1;
    for (i, node) in tree.layer(last).iter().enumerate() {
        let tr = barrier.triple(tree, last, node);
        if (terminal[i] - tr.value).abs() > 1e-12 {
            return Err(Error::Precondition(format!(
                "terminal value {} must equal the barrier's terminal value {} (node {i})",
                terminal[i], tr.value
            )));
        }
    }
    let sol = crate::reflected::solve_reflected_lower(tree, driver, terminal, barrier)?;
    let reflected = sol.y[sigma_layer].clone();
    let oracle = match brute_force_stopping_value(tree, driver, barrier, terminal, sigma_layer) {
        Ok(v) => Some(v),
        Err(Error::TooLarge(_)) => None,
        Err(e) => return Err(e),
    };
    let max_gap = oracle
        .as_ref()
        .map(|o| {
            reflected
                .iter()
                .zip(&o.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
        })
        .unwrap_or(0.0);
    Ok(NonlinearStoppingValue { reflected, oracle, rusc: barrier.is_rusc_on(tree), max_gap })
}

#[derive(Debug, Clone)]
pub struct EpsilonOptimal {
    pub rule: StoppingRule,
    /// Worst `Y - barrier - eps` over first-hit nodes (<= 0 required).
    pub threshold_excess: f64,
    /// Largest reflection increment strictly before the hit.
    pub max_interior_k_increment: f64,
    /// Worst `|Y_sigma - plain backward value from the hit boundary|`.
    pub martingale_gap: f64,
    /// Per sigma-node `Y_sigma - value of stopping at the hit with the
    /// barrier payoff` (the epsilon-optimality gap, >= 0).
    pub optimality_gap: f64,
}

/// First grid time at or after the (deterministic) start layer where the
/// state comes within `eps` of the barrier. On that interval the reflection
/// process is flat, so the state solves the plain equation; both facts are
/// verified on the output.
pub fn epsilon_optimal_time(
    tree: &ScenarioTree,
    driver: &Driver,
    sol: &ReflectedSolution,
    barrier: &Barrier,
    sigma_layer: usize,
    eps: f64,
) -> Result<EpsilonOptimal> {
    if !(eps > 0.0) {
        return Err(Error::Precondition("eps must be positive".into()));
    }
    let mask: Vec<Vec<bool>> = tree
        .layers()
        .iter()
        .enumerate()
        .map(|(k, layer)| {
            layer
                .iter()
                .enumerate()
                .map(|(i, node)| {
                    k >= sigma_layer
                        && sol.y[k][i] <= barrier.triple(tree, k, node).value + eps
                })
                .collect()
        })
        .collect();
    let rule = StoppingRule::from_mask(tree, mask)?;
    let sigma = StoppingRule::at_layer(tree, sigma_layer);

    let boundary = rule_boundary(tree, &rule);
    let mut threshold_excess = f64::NEG_INFINITY;
    for &(k, i, _) in &boundary {
        let tr = barrier.triple(tree, k, tree.node(k, i));
        threshold_excess = threshold_excess.max(sol.y[k][i] - tr.value - eps);
    }

    // Reflection increments strictly before the hit, over reachable nodes.
    let mut max_interior = 0.0f64;
    let mut running: Vec<f64> = tree.layer(sigma_layer).iter().map(|n| n.prob).collect();
    for k in sigma_layer..tree.grid().steps() {
        let mut next = vec![0.0; tree.layer(k + 1).len()];
        for (i, node) in tree.layer(k).iter().enumerate() {
            if running[i] == 0.0 || rule.stops_at(k, i) {
                continue;
            }
            max_interior = max_interior.max(sol.dk_star[k][i] + sol.dk_plus[k][i]);
            for b in &node.branches {
                next[b.child as usize] += running[i] * b.prob;
            }
        }
        running = next;
    }

    // Plain solve from the hit boundary with the state itself as payoff.
    let restarted = f_expectation(tree, driver, &sigma, &rule, &sol.y)?;
    let mut martingale_gap = 0.0f64;
    for (i, _) in tree.layer(sigma_layer).iter().enumerate() {
        martingale_gap = martingale_gap.max((restarted.y[sigma_layer][i] - sol.y[sigma_layer][i]).abs());
    }

    // Stopping at the hit with the barrier payoff.
    let last = tree.layers().len() - 1;
    let barrier_payoff: NodeField = tree
        .layers()
        .iter()
        .enumerate()
        .map(|(k, layer)| {
            if k == last {
                sol.y[last].clone()
            } else {
                layer.iter().map(|n| barrier.triple(tree, k, n).value).collect()
            }
        })
        .collect();
    let stopped = f_expectation(tree, driver, &sigma, &rule, &barrier_payoff)?;
    let mut optimality_gap = f64::NEG_INFINITY;
    for (i, _) in tree.layer(sigma_layer).iter().enumerate() {
        optimality_gap = optimality_gap.max(sol.y[sigma_layer][i] - stopped.y[sigma_layer][i]);
    }

    Ok(EpsilonOptimal {
        rule,
        threshold_excess,
        max_interior_k_increment: max_interior,
        martingale_gap,
        optimality_gap,
    })
}

#[derive(Debug, Clone)]
pub struct SupermartingaleCheck {
    pub trials: usize,
    pub violations: usize,
    pub max_excess: f64,
}

/// Randomized strong supermartingale property: for random rule pairs
/// `sigma <= eta`, the nonlinear expectation of the state at `eta` must not
/// exceed the state at `sigma`, node-wise on the sigma boundary.
pub fn ef_supermartingale_check(
    tree: &ScenarioTree,
    driver: &Driver,
    sol: &ReflectedSolution,
    trials: usize,
    seed: u64,
) -> Result<SupermartingaleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    let mut max_excess = f64::NEG_INFINITY;
    for _ in 0..trials {
        let eta = StoppingRule::random(tree, &mut rng, 0.2);
        let sigma = eta.union(&StoppingRule::random(tree, &mut rng, 0.2));
        let back = f_expectation(tree, driver, &sigma, &eta, &sol.y)?;
        for (k, i, _) in rule_boundary(tree, &sigma) {
            let excess = back.y[k][i] - sol.y[k][i];
            max_excess = max_excess.max(excess);
            if excess > 1e-10 {
                violations += 1;
            }
        }
    }
    Ok(SupermartingaleCheck { trials, violations, max_excess })
}
