//! Direct solvers for the reflected equation with a regulated lower or upper
//! barrier.
//!
//! Each backward step applies two projection phases. First the barrier's
//! right limit, which is the effective constraint on the open interval
//! `(t_k, t_{k+1})`, lifts the continuation value; the lift accrues to the
//! right-continuous part of the reflection process (booked as interval
//! accrual, indistinguishable from left jumps at grid resolution). Then the
//! barrier's value at the grid point lifts the result; that lift is a genuine
//! right jump of `K` at `t_k`, so `Y` right-jumps down by the same amount and
//! the jump occurs only where `Y` sits on the barrier and the barrier
//! right-jumps down. The upper-barrier solver is the sign-flipped lower
//! solver.

use crate::bsde::{check_contraction, continuation, implicit_y};
use crate::driver::Driver;
use crate::error::{Error, Result};
use crate::parallel::map_nodes;
use crate::regulated::{PathTriple, RegulatedPath};
use crate::tree::{Node, NodeField, ScenarioTree};
use std::sync::Arc;

/// Barrier specification: a deterministic regulated path sampled on the
/// grid, or a triple-valued function of the node state.
#[derive(Clone)]
pub enum Barrier {
    Deterministic(RegulatedPath),
    NodeDependent(Arc<dyn Fn(f64, &Node) -> PathTriple + Send + Sync>),
}

impl std::fmt::Debug for Barrier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Barrier::Deterministic(_) => f.write_str("Barrier::Deterministic"),
            Barrier::NodeDependent(_) => f.write_str("Barrier::NodeDependent"),
        }
    }
}

impl Barrier {
    pub fn constant(tree: &ScenarioTree, level: f64) -> Self {
        Barrier::Deterministic(RegulatedPath::constant(tree.grid().clone(), level).unwrap())
    }

    pub fn from_node_fn(f: impl Fn(f64, &Node) -> PathTriple + Send + Sync + 'static) -> Self {
        Barrier::NodeDependent(Arc::new(f))
    }

    pub fn triple(&self, tree: &ScenarioTree, k: usize, node: &Node) -> PathTriple {
        match self {
            Barrier::Deterministic(path) => path.triple(k),
            Barrier::NodeDependent(f) => f(tree.grid().t(k), node),
        }
    }

    fn check_grid(&self, tree: &ScenarioTree) -> Result<()> {
        if let Barrier::Deterministic(p) = self {
            if p.len() != tree.layers().len() {
                return Err(Error::ShapeMismatch(format!(
                    "barrier has {} triples, grid has {} points",
                    p.len(),
                    tree.layers().len()
                )));
            }
        }
        Ok(())
    }

    /// Negated barrier (for the upper/lower duality).
    pub fn negate(&self, tree: &ScenarioTree) -> Barrier {
        match self {
            Barrier::Deterministic(p) => {
                let triples = p
                    .triples()
                    .iter()
                    .map(|t| PathTriple { left: -t.left, value: -t.value, right: -t.right })
                    .collect();
                Barrier::Deterministic(
                    RegulatedPath::from_triples(tree.grid().clone(), triples).unwrap(),
                )
            }
            Barrier::NodeDependent(f) => {
                let f = f.clone();
                Barrier::from_node_fn(move |t, n| {
                    let tr = f(t, n);
                    PathTriple { left: -tr.left, value: -tr.value, right: -tr.right }
                })
            }
        }
    }

    /// No upward right jump at any node of the tree.
    pub fn is_rusc_on(&self, tree: &ScenarioTree) -> bool {
        tree.layers().iter().enumerate().all(|(k, layer)| {
            layer. iter().all(|n| {
                let tr = self.triple(tree, k, n);
                tr.value >= tr.right
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct ReflectedSolution {
    pub side: BarrierSide,
    pub y: NodeField,
    /// Right limit of the state at each node (`Y` just after the grid time).
    pub y_right: NodeField,
    pub z: NodeField,
    pub u: NodeField,
    /// Interval accrual of the reflection process per node (right-continuous
    /// part, booked over `(t_k, t_{k+1}]`).
    pub dk_star: NodeField,
    /// Right jump of the reflection process at each node.
    pub dk_plus: NodeField,
    /// Backward-equation defect per node, with the coefficient evaluated at
    /// the post-interval right limit.
    pub residuals: NodeField,
    /// Expectation of the Skorokhod complementarity sum.
    pub skorokhod_residual: f64,
    pub k_mean: f64,
    pub k_second_moment: f64,
    /// Second moment of the accumulated right jumps of `Y`.
    pub right_jump_second_moment: f64,
}

impl ReflectedSolution {
    pub fn y0(&self) -> f64 {
        self.y[0][0]
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().flatten().fold(0.0f64, |a, &b| a.max(b))
    }

    /// Total reflection increment at a node.
    pub fn dk_total(&self, k: usize, i: usize) -> f64 {
        self.dk_star[k][i] + self.dk_plus[k][i]
    }

    /// Cumulative `K` along an explicit path (for small-tree inspection).
    pub fn k_along_path(&self, path: &[usize]) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(path.len());
        for (k, &i) in path.iter().enumerate() {
            out.push(acc);
            if k < self.dk_star.len() {
                acc += self.dk_star[k][i] + self.dk_plus[k][i];
            }
        }
        out
    }
}

/// Lower-barrier reflected solve: `Y >= L` with minimal upward push.
pub fn solve_reflected_lower(
    tree: &ScenarioTree,
    driver: &Driver,
    terminal: &[f64],
    barrier: &Barrier,
) -> Result<ReflectedSolution> {
    solve_reflected(tree, driver, terminal, barrier, BarrierSide::Lower)
}

/// Upper-barrier reflected solve via duality: flip the data, solve against
/// the lower barrier, flip the solution back. The reflection process is
/// invariant under the flip.
pub fn solve_reflected_upper(
    tree: &ScenarioTree,
    driver: &Driver,
    terminal: &[f64],
    barrier: &Barrier,
) -> Result<ReflectedSolution> {
    let dual = dual_driver(driver);
    let neg_terminal: Vec<f64> = terminal.iter().map(|v| -v).collect();
    let neg_barrier = barrier.negate(tree);
    let mut sol = solve_reflected(tree, &dual, &neg_terminal, &neg_barrier, BarrierSide::Lower)?;
    for field in [&mut sol.y, &mut sol.y_right, &mut sol.z, &mut sol.u] {
        for layer in field.iter_mut() {
            for v in layer.iter_mut() {
                *v = -*v;
            }
        }
    }
    sol.side = BarrierSide::Upper;
    Ok(sol)
}

/// The coefficient of the sign-flipped equation: `g(y,z,u) = -f(-y,-z,-u)`.
/// It inherits the Lipschitz weights of `f`.
pub fn dual_driver(driver: &Driver) -> Driver {
    let inner = driver.clone();
    Driver::new(
        format!("dual({})", driver.name()),
        driver.mu_curve(),
        driver.theta_curve(),
        driver.nu_curve(),
        driver.lambda_floor(),
        driver.eps_floor(),
        Arc::new(move |t, node, gamma, y, z, u| -inner.evaluate(t, node, gamma, -y, -z, -u)),
    )
    .expect("dual driver keeps the original structure")
}

fn solve_reflected(
    tree: &ScenarioTree,
    driver: &Driver,
    terminal: &[f64],
    barrier: &Barrier,
    side: BarrierSide,
) -> Result<ReflectedSolution> {
    debug_assert_eq!(side, BarrierSide::Lower);
    check_contraction(tree, driver)?;
    barrier.check_grid(tree)?;
    let layers = tree.layers().len();
    let last = layers - 1;
    if terminal.len() != tree.layer(last).len() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} terminal values, got {}",
            tree.layer(last).len(),
            terminal.len()
        )));
    }
    for (i, node) in tree.layer(last).iter().enumerate() {
        let tr = barrier.triple(tree, last, node);
        if terminal[i] < tr.value - 1e-12 {
            return Err(Error::Precondition(format!(
                "terminal value {} below the barrier {} at node {i}",
                terminal[i], tr.value
            )));
        }
        if !terminal[i].is_finite() {
            return Err(Error::Precondition("terminal values must be finite".into()));
        }
    }

    let mut y: NodeField = vec![Vec::new(); layers];
    let mut y_right: NodeField = vec![Vec::new(); layers];
    let mut z: NodeField = vec![Vec::new(); last];
    let mut u: NodeField = vec![Vec::new(); last];
    let mut dk_star: NodeField = vec![Vec::new(); last];
    let mut dk_plus: NodeField = vec![Vec::new(); last];
    let mut residuals: NodeField = vec![Vec::new(); last];

    y[last] = terminal.to_vec();
    y_right[last] = terminal.to_vec();

    for k in (0..last).rev() {
        let t = tree.grid().t(k);
        let dt = tree.grid().dt(k);
        let next = &y[k + 1];
        let layer = tree.layer(k);
        let solved = map_nodes(layer.len(), |i| {
            let node = &layer[i];
            let gamma = tree.gamma_at(k, node);
            let step = continuation(node, next, dt);
            let tr = barrier.triple(tree, k, node);
            let (unconstrained, _) = implicit_y(driver, t, node, gamma, dt, step.mean, step.z, step.u);
            // Phase one: the right limit binds on the open interval.
            let (tilde, lump_star) = if unconstrained >= tr.right {
                (unconstrained, 0.0)
            } else {
                let lift = tr.right
                    - step.mean
                    - driver.evaluate(t, node, gamma, tr.right, step.z, step.u) * dt;
                (tr.right, lift)
            };
            // Phase two: the grid value binds at the point itself.
            let lump_plus = (tr.value - tilde).max(0.0);
            let yk = tilde + lump_plus;
            let defect = (yk
                - step.mean
                - driver.evaluate(t, node, gamma, tilde, step.z, step.u) * dt
                - lump_star
                - lump_plus)
                .abs();
            (yk, tilde, step.z, step.u, lump_star, lump_plus, defect)
        });
        let n = layer.len();
        let mut yl = Vec::with_capacity(n);
        let mut yrl = Vec::with_capacity(n);
        let mut zl = Vec::with_capacity(n);
        let mut ul = Vec::with_capacity(n);
        let mut ksl = Vec::with_capacity(n);
        let mut kpl = Vec::with_capacity(n);
        let mut rl = Vec::with_capacity(n);
        for (yk, tilde, zv, uv, ks, kp, res) in solved {
            yl.push(yk);
            yrl.push(tilde);
            zl.push(zv);
            ul.push(uv);
            ksl.push(ks);
            kpl.push(kp);
            rl.push(res);
        }
        y[k] = yl;
        y_right[k] = yrl;
        z[k] = zl;
        u[k] = ul;
        dk_star[k] = ksl;
        dk_plus[k] = kpl;
        residuals[k] = rl;
    }

    let mut sol = ReflectedSolution {
        side,
        y,
        y_right,
        z,
        u,
        dk_star,
        dk_plus,
        residuals,
        skorokhod_residual: 0.0,
        k_mean: 0.0,
        k_second_moment: 0.0,
        right_jump_second_moment: 0.0,
    };
    sol.skorokhod_residual = skorokhod_residual(tree, &sol, barrier);
    let (m1, m2) = accumulated_moments(tree, |k, i| sol.dk_total(k, i));
    sol.k_mean = m1;
    sol.k_second_moment = m2;
    let (_, rj2) = accumulated_moments(tree, |k, i| sol.dk_plus[k][i]);
    sol.right_jump_second_moment = rj2;
    Ok(sol)
}

/// First and second moments of a per-node increment accumulated along paths,
/// propagated forward exactly through the recombining tree.
fn accumulated_moments(tree: &ScenarioTree, lump: impl Fn(usize, usize) -> f64) -> (f64, f64) {
    let steps = tree.grid().steps();
    let mut mass: Vec<f64> = tree.layer(0).iter().map(|n| n.prob).collect();
    let mut m1: Vec<f64> = vec![0.0; mass.len()];
    let mut m2: Vec<f64> = vec![0.0; mass.len()];
    for k in 0..steps {
        let next_len = tree.layer(k + 1).len();
        let mut nmass = vec![0.0; next_len];
        let mut nm1 = vec![0.0; next_len];
        let mut nm2 = vec![0.0; next_len];
        for (i, node) in tree.layer(k).iter().enumerate() {
            if mass[i] == 0.0 {
                continue;
            }
            let d = lump(k, i);
            let a1 = m1[i] / mass[i];
            let a2 = m2[i] / mass[i];
            let b1 = a1 + d;
            let b2 = a2 + 2.0 * a1 * d + d * d;
            for b in &node.branches {
                let c = b.child as usize;
                let w = mass[i] * b.prob;
                nmass[c] += w;
                nm1[c] += w * b1;
                nm2[c] += w * b2;
            }
        }
        mass = nmass;
        m1 = nm1;
        m2 = nm2;
    }
    (m1.iter().sum(), m2.iter().sum())
}

/// Expected complementarity sum. The right-continuous accrual is paired with
/// the pinning level on the open interval (the state's right limit against
/// the barrier's right limit); the right jumps of `K` are paired with the
/// grid values. For a solution of the reflected equation both sums vanish;
/// any off-barrier increment makes the result strictly positive.
pub fn skorokhod_residual(tree: &ScenarioTree, sol: &ReflectedSolution, barrier: &Barrier) -> f64 {
    let sign = match sol.side {
        BarrierSide::Lower => 1.0,
        BarrierSide::Upper => -1.0,
    };
    let mut acc = 0.0;
    for k in 0..tree.grid().steps() {
        for (i, node) in tree.layer(k).iter().enumerate() {
            let tr = barrier.triple(tree, k, node);
            let gap_star = sign * (sol.y_right[k][i] - tr.right);
            let gap_plus = sign * (sol.y[k][i] - tr.value);
            acc += node.prob * (gap_star * sol.dk_star[k][i] + gap_plus * sol.dk_plus[k][i]);
        }
    }
    acc
}

/// Worst violation of the barrier constraint over all nodes, including the
/// right limits against the barrier's right limits. Non-positive values mean
/// the constraint holds.
pub fn constraint_violation(tree: &ScenarioTree, sol: &ReflectedSolution, barrier: &Barrier) -> f64 {
    let sign = match sol.side {
        BarrierSide::Lower => 1.0,
        BarrierSide::Upper => -1.0,
    };
    let mut worst = f64::NEG_INFINITY;
    for (k, layer) in tree.layers().iter().enumerate() {
        let terminal = k == tree.grid().steps();
        for (i, node) in layer.iter().enumerate() {
            let tr = barrier.triple(tree, k, node);
            worst = worst.max(sign * (tr.value - sol.y[k][i]));
            if !terminal {
                worst = worst.max(sign * (tr.right - sol.y_right[k][i]));
            }
        }
    }
    worst
}

/// Max defect of the right-jump formula on a solution: the jump of `K` at a
/// node must equal the positive part of the constraint's right-side excess,
/// and must vanish off the barrier.
pub fn jump_formula_residual(tree: &ScenarioTree, sol: &ReflectedSolution, barrier: &Barrier) -> f64 {
    let sign = match sol.side {
        BarrierSide::Lower => 1.0,
        BarrierSide::Upper => -1.0,
    };
    let mut worst = 0.0f64;
    for k in 0..tree.grid().steps() {
        for (i, node) in tree.layer(k).iter().enumerate() {
            let tr = barrier.triple(tree, k, node);
            let on_barrier = (sol.y[k][i] - tr.value).abs() <= 1e-12;
            let expected = if on_barrier {
                (sign * (tr.value - sol.y_right[k][i])).max(0.0)
            } else {
                0.0
            };
            worst = worst.max((sol.dk_plus[k][i] - expected).abs());
            // The state's right jump mirrors the reflection jump.
            let dy_plus = sol.y_right[k][i] - sol.y[k][i];
            worst = worst.max((dy_plus + sign * sol.dk_plus[k][i]).abs());
        }
    }
    worst
}

/// Dominance evidence for reflected comparison: terminal, driver along the
/// second solution, and barrier including right limits.
#[derive(Debug, Clone, Copy)]
pub struct ReflectedDominance {
    pub max_terminal_excess: f64,
    pub max_driver_excess: f64,
    pub max_barrier_excess: f64,
}

impl ReflectedDominance {
    pub fn holds(&self, tol: f64) -> bool {
        self.max_terminal_excess <= tol
            && self.max_driver_excess <= tol
            && self.max_barrier_excess <= tol
    }
}

pub fn certify_reflected_dominance(
    tree: &ScenarioTree,
    d1: &Driver,
    d2: &Driver,
    xi1: &[f64],
    xi2: &[f64],
    b1: &Barrier,
    b2: &Barrier,
    sol2: &ReflectedSolution,
) -> ReflectedDominance {
    let mut terminal = f64::NEG_INFINITY;
    for (a, b) in xi1.iter().zip(xi2) {
        terminal = terminal.max(a - b);
    }
    let mut driver_excess = f64::NEG_INFINITY;
    let mut barrier_excess = f64::NEG_INFINITY;
    for (k, layer) in tree.layers().iter().enumerate() {
        let t = tree.grid().t(k);
        for (i, node) in layer.iter().enumerate() {
            let t1 = b1.triple(tree, k, node);
            let t2 = b2.triple(tree, k, node);
            barrier_excess = barrier_excess.max(t1.value - t2.value).max(t1.right - t2.right);
            if k < tree.grid().steps() {
                let gamma = tree.gamma_at(k, node);
                let (yv, zv, uv) = (sol2.y[k][i], sol2.z[k][i], sol2.u[k][i]);
                let gap =
                    d1.evaluate(t, node, gamma, yv, zv, uv) - d2.evaluate(t, node, gamma, yv, zv, uv);
                driver_excess = driver_excess.max(gap);
            }
        }
    }
    ReflectedDominance {
        max_terminal_excess: terminal,
        max_driver_excess: driver_excess,
        max_barrier_excess: barrier_excess,
    }
}

#[derive(Debug, Clone)]
pub struct ReflectedComparison {
    pub max_excess: f64,
    pub violations: usize,
}

/// Node-wise `Y1 <= Y2` for two lower-barrier solutions under a certificate.
pub fn compare_reflected(
    sol1: &ReflectedSolution,
    sol2: &ReflectedSolution,
    certificate: &ReflectedDominance,
    tol: f64,
) -> Result<ReflectedComparison> {
    if !certificate.holds(1e-12) {
        return Err(Error::Precondition(format!(
            "dominance certificate does not hold: {certificate:?}"
        )));
    }
    let mut max_excess = f64::NEG_INFINITY;
    let mut violations = 0usize;
    for (l1, l2) in sol1.y.iter().zip(&sol2.y).chain(sol1.y_right.iter().zip(&sol2.y_right)) {
        for (a, b) in l1.iter().zip(l2) {
            let gap = a - b;
            max_excess = max_excess.max(gap);
            if gap > tol {
                violations += 1;
            }
        }
    }
    Ok(ReflectedComparison { max_excess, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::solve_bsde;
    use crate::driver::{linear_driver, zero_driver};
    use crate::grid::TimeGrid;
    use crate::intensity::IntensityCurve;
    use crate::tree::terminal_from_fn;

    fn tree(n: usize, rate: f64) -> ScenarioTree {
        let grid = TimeGrid::build(1.0, n, &[]).unwrap();
        ScenarioTree::build(grid, IntensityCurve::constant(rate).unwrap()).unwrap()
    }

    #[test]
    fn inactive_barrier_reduces_to_plain_solve() {
        let t = tree(25, 0.15);
        let d = linear_driver(0.3, 0.2, -0.4, Curve::constant(0.1)).unwrap();
        let xi = terminal_from_fn(&t, |n| n.w.max(-0.5));
        let plain = solve_bsde(&t, &d, &xi).unwrap();
        let low = Barrier::constant(&t, -1e6);
        let refl = solve_reflected_lower(&t, &d, &xi, &low).unwrap();
        for (a, b) in plain.y.iter().flatten().zip(refl.y.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(refl.k_mean, 0.0);
        assert_eq!(refl.skorokhod_residual, 0.0);
    }

    #[test]
    fn flat_barrier_with_flat_terminal_pins() {
        let t = tree(12, 0.0);
        let xi = vec![2.0; t.layers().last().unwrap().len()];
        let b = Barrier::constant(&t, 2.0);
        let sol = solve_reflected_lower(&t, &zero_driver(), &xi, &b).unwrap();
        for layer in &sol.y {
            assert!(layer.iter().all(|&v| (v - 2.0).abs() < 1e-14));
        }
        assert!(sol.k_mean.abs() < 1e-14);
        assert!(sol.skorokhod_residual.abs() < 1e-14);
    }

    #[test]
    fn binding_barrier_respects_constraint_and_complementarity() {
        let t = tree(40, 0.1);
        let d = linear_driver(0.2, 0.1, -0.3, Curve::constant(0.0)).unwrap();
        let xi = terminal_from_fn(&t, |n| (1.0 - n.w).max(0.0));
        let b = Barrier::from_node_fn(|_, n| PathTriple::flat((1.0 - n.w).max(0.0)));
        let sol = solve_reflected_lower(&t, &d, &xi, &b).unwrap();
        assert!(constraint_violation(&t, &sol, &b) <= 1e-12);
        assert!(sol.skorokhod_residual.abs() <= 1e-10);
        assert!(sol.k_mean > 0.0);
        assert!(sol.max_residual() < 1e-12);
        assert!(jump_formula_residual(&t, &sol, &b) < 1e-12);
        assert!(sol.right_jump_second_moment <= sol.k_second_moment + 1e-15);
    }

    #[test]
    fn terminal_below_barrier_rejected() {
        let t = tree(4, 0.0);
        let xi = vec![0.0; t.layers().last().unwrap().len()];
        let b = Barrier::constant(&t, 1.0);
        assert!(solve_reflected_lower(&t, &zero_driver(), &xi, &b).is_err());
    }

    #[test]
    fn upper_solver_mirrors_lower() {
        let t = tree(20, 0.2);
        let d = linear_driver(0.3, 0.15, 0.25, Curve::constant(-0.05)).unwrap();
        let xi = terminal_from_fn(&t, |n| n.w.min(0.8));
        let low = Barrier::from_node_fn(|_, n| PathTriple::flat(n.w.min(0.8) - 0.2));
        let lower_sol = solve_reflected_lower(&t, &d, &xi, &low).unwrap();

        let dual = dual_driver(&d);
        let neg_xi: Vec<f64> = xi.iter().map(|v| -v).collect();
        let upper_sol = solve_reflected_upper(&t, &dual, &neg_xi, &low.negate(&t)).unwrap();
        for (a, b) in lower_sol.y.iter().flatten().zip(upper_sol.y.iter().flatten()) {
            assert!((a + b).abs() < 1e-12);
        }
        for (a, b) in lower_sol.dk_plus.iter().flatten().zip(upper_sol.dk_plus.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(upper_sol.skorokhod_residual.abs() < 1e-10);
    }

    #[test]
    fn downward_right_jump_creates_k_jump_on_pinned_nodes() {
        let n = 10;
        let t = tree(n, 0.0);
        let g = t.grid().clone();
        // Barrier sits high, then right-jumps down at t = 0.5.
        let hi = 0.8;
        let lo = -0.6;
        let triples: Vec<PathTriple> = g
            .times()
            .iter()
            .map(|&s| {
                if s < 0.5 {
                    PathTriple::flat(hi)
                } else if s == 0.5 {
                    PathTriple { left: hi, value: hi, right: lo }
                } else {
                    PathTriple::flat(lo)
                }
            })
            .collect();
        let b = Barrier::Deterministic(RegulatedPath::from_triples(g, triples).unwrap());
        let xi = terminal_from_fn(&t, |n| n.w.abs().max(-0.6));
        let sol = solve_reflected_lower(&t, &zero_driver(), &xi, &b).unwrap();
        let k5 = t.grid().index_of(0.5).unwrap();
        let mut saw_jump = false;
        for (i, _) in t.layer(k5).iter().enumerate() {
            let lump = sol.dk_plus[k5][i];
            if lump > 0.0 {
                saw_jump = true;
                assert!((sol.y[k5][i] - hi).abs() < 1e-12, "jump only on pinned nodes");
                assert!((lump - (hi - sol.y_right[k5][i])).abs() < 1e-12);
            }
        }
        assert!(saw_jump);
        assert!(sol.skorokhod_residual.abs() < 1e-10);
        assert!(jump_formula_residual(&t, &sol, &b) < 1e-12);
    }

    #[test]
    fn spurious_k_increment_is_flagged() {
        let t = tree(15, 0.0);
        let d = zero_driver();
        let xi = terminal_from_fn(&t, |n| (0.5 - n.w).max(0.0));
        let b = Barrier::from_node_fn(|_, n| PathTriple::flat((0.5 - n.w).max(0.0) - 0.2));
        let mut sol = solve_reflected_lower(&t, &d, &xi, &b).unwrap();
        let clean = skorokhod_residual(&t, &sol, &b);
        assert!(clean.abs() < 1e-10);
        // Inject an increment at a node strictly above the barrier.
        sol.dk_star[3][1] += 0.1;
        let tainted = skorokhod_residual(&t, &sol, &b);
        assert!(tainted > 1e-3, "tainted residual {tainted}");
    }

    #[test]
    fn reflected_comparison_in_barrier() {
        let t = tree(18, 0.1);
        let d = linear_driver(0.25, 0.1, -0.2, Curve::constant(0.0)).unwrap();
        let xi = terminal_from_fn(&t, |n| n.w.abs() + 0.5);
        let b1 = Barrier::from_node_fn(|_, n| PathTriple::flat(n.w.abs() - 0.3));
        let b2 = Barrier::from_node_fn(|_, n| PathTriple::flat(n.w.abs() + 0.2));
        let s1 = solve_reflected_lower(&t, &d, &xi, &b1).unwrap();
        let s2 = solve_reflected_lower(&t, &d, &xi, &b2).unwrap();
        let cert = certify_reflected_dominance(&t, &d, &d, &xi, &xi, &b1, &b2, &s2);
        let rep = compare_reflected(&s1, &s2, &cert, 1e-10).unwrap();
        assert_eq!(rep.violations, 0);
    }
}
