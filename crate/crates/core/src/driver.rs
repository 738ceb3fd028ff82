//! BSDE coefficients `f(t, node, y, z, u)` together with the parameter curves
//! that certify their structure: time-varying Lipschitz weights
//! `(mu, theta, nu)`, the aggregate weight `alpha^2 = mu + theta^2 + nu^2 *
//! gamma` with its positive floor, and the declared lower bound of the
//! monotonicity slope in the `u` direction.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::intensity::IntensityCurve;
use crate::tree::{Node, ScenarioTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::sync::Arc;

/// Deterministic piecewise-constant parameter curve (any finite values).
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pieces: Vec<(f64, f64)>,
}

impl Curve {
    pub fn constant(v: f64) -> Self {
        Self { pieces: vec![(0.0, v)] }
    }

    pub fn piecewise(pieces: Vec<(f64, f64)>) -> Result<Self> {
        if pieces.is_empty() || pieces[0].0 != 0.0 {
            return Err(Error::InvalidDriver("curve must have a piece starting at 0".into()));
        }
        for w in pieces.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidDriver("curve pieces must be strictly increasing in time".into()));
            }
        }
        if pieces.iter().any(|&(_, v)| !v.is_finite()) {
            return Err(Error::InvalidDriver("curve values must be finite".into()));
        }
        Ok(Self { pieces })
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let mut v = self.pieces[0].1;
        for &(start, val) in &self.pieces {
            if t >= start {
                v = val;
            } else {
                break;
            }
        }
        v
    }

    pub fn max_abs_on(&self, grid: &TimeGrid) -> f64 {
        grid.times().iter().map(|&t| self.value_at(t).abs()).fold(0.0, f64::max)
    }
}

type DriverFn = dyn Fn(f64, &Node, f64, f64, f64, f64) -> f64 + Send + Sync;

/// A coefficient together with its declared structure. `eval` receives
/// `(t, node, gamma_at_node, y, z, u)` and must be a pure function of its
/// arguments.
#[derive(Clone)]
pub struct Driver {
    name: String,
    eval: Arc<DriverFn>,
    mu: Curve,
    theta: Curve,
    nu: Curve,
    /// Declared lower bound of the monotonicity slope in `u`; must be >= -1.
    lambda_floor: f64,
    /// Positive lower bound for `alpha^2`.
    eps_floor: f64,
}

impl fmt::Debug for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Driver")
            .field("name", &self.name)
            .field("lambda_floor", &self.lambda_floor)
            .field("eps_floor", &self.eps_floor)
            .finish()
    }
}

impl Driver {
    pub fn new(
        name: impl Into<String>,
        mu: Curve,
        theta: Curve,
        nu: Curve,
        lambda_floor: f64,
        eps_floor: f64,
        eval: Arc<DriverFn>,
    ) -> Result<Self> {
        if lambda_floor < -1.0 {
            return Err(Error::InvalidDriver(format!("lambda floor {lambda_floor} must be >= -1")));
        }
        if !(eps_floor > 0.0) {
            return Err(Error::InvalidDriver("eps floor must be positive".into()));
        }
        for c in [&mu, &theta, &nu] {
            if c.pieces.iter().any(|&(_, v)| v < 0.0) {
                return Err(Error::InvalidDriver("Lipschitz parameter curves must be non-negative".into()));
            }
        }
        Ok(Self { name: name.into(), eval, mu, theta, nu, lambda_floor, eps_floor })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lambda_floor(&self) -> f64 {
        self.lambda_floor
    }

    pub fn eps_floor(&self) -> f64 {
        self.eps_floor
    }

    pub fn mu_at(&self, t: f64) -> f64 {
        self.mu.value_at(t)
    }

    pub fn theta_at(&self, t: f64) -> f64 {
        self.theta.value_at(t)
    }

    pub fn nu_at(&self, t: f64) -> f64 {
        self.nu.value_at(t)
    }

    pub fn mu_curve(&self) -> Curve {
        self.mu.clone()
    }

    pub fn theta_curve(&self) -> Curve {
        self.theta.clone()
    }

    pub fn nu_curve(&self) -> Curve {
        self.nu.clone()
    }

    pub fn evaluate(&self, t: f64, node: &Node, gamma: f64, y: f64, z: f64, u: f64) -> f64 {
        (self.eval)(t, node, gamma, y, z, u)
    }

    /// `alpha^2(t) = mu + theta^2 + nu^2 * gamma(t)` with the pre-default
    /// intensity; this is the integrand of the deterministic clock.
    pub fn alpha_sq_at(&self, t: f64, intensity: &IntensityCurve) -> f64 {
        let th = self.theta.value_at(t);
        let nv = self.nu.value_at(t);
        self.mu.value_at(t) + th * th + nv * nv * intensity.rate_at(t)
    }

    /// Per-step `alpha^2` samples on a grid.
    pub fn alpha_sq_profile(&self, grid: &TimeGrid, intensity: &IntensityCurve) -> Vec<f64> {
        (0..grid.steps()).map(|k| self.alpha_sq_at(grid.t(k), intensity)).collect()
    }

    /// Asserts `alpha^2 >= eps_floor` at every grid time.
    pub fn check_eps_floor(&self, grid: &TimeGrid, intensity: &IntensityCurve) -> Result<()> {
        for k in 0..grid.steps() {
            let a2 = self.alpha_sq_at(grid.t(k), intensity);
            if a2 < self.eps_floor {
                return Err(Error::InvalidDriver(format!(
                    "alpha^2 = {a2} below declared floor {} at t = {}",
                    self.eps_floor,
                    grid.t(k)
                )));
            }
        }
        Ok(())
    }

    /// Largest `mu * dt` over the grid; the implicit backward step contracts
    /// only when this is below one.
    pub fn contraction_modulus(&self, grid: &TimeGrid) -> f64 {
        (0..grid.steps())
            .map(|k| self.mu.value_at(grid.t(k)) * grid.dt(k))
            .fold(0.0, f64::max)
    }

    /// Randomized check of the declared Lipschitz bound. Returns the largest
    /// observed `|f(x1) - f(x2)| - bound(x1, x2)` over the samples; a value
    /// `<= 0` means no violation was found, a positive value is a finding
    /// with the witnessing arguments.
    pub fn check_lipschitz(&self, tree: &ScenarioTree, samples: usize, seed: u64) -> LipschitzReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::NEG_INFINITY;
        let mut witness = None;
        let n = tree.grid().steps();
        for _ in 0..samples.max(1) {
            let k = rng.random_range(0..n);
            let layer = tree.layer(k);
            let node = &layer[rng.random_range(0..layer.len())];
            let t = tree.grid().t(k);
            let gamma = tree.gamma_at(k, node);
            let mut draw = || rng.random_range(-5.0..5.0);
            let (y1, z1, u1) = (draw(), draw(), draw());
            let (y2, z2, u2) = (draw(), draw(), draw());
            let df = (self.evaluate(t, node, gamma, y1, z1, u1)
                - self.evaluate(t, node, gamma, y2, z2, u2))
                .abs();
            let bound = self.mu.value_at(t) * (y1 - y2).abs()
                + self.theta.value_at(t) * (z1 - z2).abs()
                + self.nu.value_at(t) * gamma * (u1 - u2).abs();
            let gap = df - bound;
            if gap > worst {
                worst = gap;
                witness = Some(LipschitzWitness { t, y1, z1, u1, y2, z2, u2, df, bound });
            }
        }
        LipschitzReport { max_violation: worst.max(0.0), worst_gap: worst, witness }
    }

    /// Finite-difference slope of `f` in the `u` direction, normalized by the
    /// intensity: `(f(u1) - f(u2)) / ((u1 - u2) * gamma)`.
    pub fn estimate_lambda(
        &self,
        t: f64,
        node: &Node,
        gamma: f64,
        y: f64,
        z: f64,
        u1: f64,
        u2: f64,
    ) -> Result<f64> {
        if gamma <= 0.0 {
            return Err(Error::Precondition(
                "lambda is undefined where the intensity vanishes".into(),
            ));
        }
        if u1 == u2 {
            return Err(Error::Precondition("need two distinct u arguments".into()));
        }
        let df = self.evaluate(t, node, gamma, y, z, u1) - self.evaluate(t, node, gamma, y, z, u2);
        Ok(df / ((u1 - u2) * gamma))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LipschitzWitness {
    pub t: f64,
    pub y1: f64,
    pub z1: f64,
    pub u1: f64,
    pub y2: f64,
    pub z2: f64,
    pub u2: f64,
    pub df: f64,
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct LipschitzReport {
    /// `max(0, worst observed |df| - bound)`.
    pub max_violation: f64,
    /// Worst observed `|df| - bound`, possibly negative.
    pub worst_gap: f64,
    pub witness: Option<LipschitzWitness>,
}

/// Two drivers with the caller's claim that the first is dominated by the
/// second along the relevant solution.
#[derive(Debug, Clone)]
pub struct DriverPair {
    pub lower: Driver,
    pub upper: Driver,
    pub dominance_certified: bool,
}

// --- shipped drivers -------------------------------------------------------

/// `f = 0`.
pub fn zero_driver() -> Driver {
    Driver::new(
        "zero",
        Curve::constant(0.0),
        Curve::constant(0.0),
        Curve::constant(0.0),
        0.0,
        1.0,
        Arc::new(|_, _, _, _, _, _| 0.0),
    )
    .unwrap()
}

/// Affine coefficient `f = a*y + b*z + c*gamma*u + source(t)` with tight
/// declared parameters. Requires `c >= -1` and `|c| <= 1` so that the slope
/// map in the `u` direction stays admissible.
pub fn linear_driver(a: f64, b: f64, c: f64, source: Curve) -> Result<Driver> {
    if c < -1.0 || c.abs() > 1.0 {
        return Err(Error::InvalidDriver(format!("u-coefficient {c} must lie in [-1, 1]")));
    }
    let eps = (a.abs() + b.abs() * b.abs()).max(1e-6);
    Driver::new(
        format!("linear(a={a},b={b},c={c})"),
        Curve::constant(a.abs()),
        Curve::constant(b.abs()),
        Curve::constant(c.abs()),
        if c < 0.0 { c } else { 0.0 },
        eps,
        Arc::new(move |t, _node, gamma, y, z, u| a * y + b * z + c * gamma * u + source.value_at(t)),
    )
}

/// Replication coefficient of the default-free part of the reference market:
/// `f(t, y, z) = -r_t * y - ((mu1_t - r_t) / sigma1_t) * z`.
pub fn market_driver(r: Curve, mu1: Curve, sigma1: Curve) -> Result<Driver> {
    let starts: Vec<f64> = r
        .pieces
        .iter()
        .chain(mu1.pieces.iter())
        .chain(sigma1.pieces.iter())
        .map(|&(s, _)| s)
        .collect();
    for &s in &starts {
        if sigma1.value_at(s) == 0.0 {
            return Err(Error::InvalidDriver(format!("sigma must not vanish (t = {s})")));
        }
    }
    let mu_curve = {
        let mut pieces: Vec<(f64, f64)> = starts.iter().map(|&s| (s, r.value_at(s).abs())).collect();
        pieces.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        pieces.dedup_by(|a, b| a.0 == b.0);
        Curve::piecewise(pieces)?
    };
    let theta_curve = {
        let mut pieces: Vec<(f64, f64)> = starts
            .iter()
            .map(|&s| (s, ((mu1.value_at(s) - r.value_at(s)) / sigma1.value_at(s)).abs()))
            .collect();
        pieces.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        pieces.dedup_by(|a, b| a.0 == b.0);
        Curve::piecewise(pieces)?
    };
    Driver::new(
        "market",
        mu_curve,
        theta_curve,
        Curve::constant(0.0),
        0.0,
        1e-6,
        Arc::new(move |t, _node, _gamma, y, z, _u| {
            let rt = r.value_at(t);
            -rt * y - (mu1.value_at(t) - rt) / sigma1.value_at(t) * z
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;

    fn small_tree() -> ScenarioTree {
        let grid = TimeGrid::build(1.0, 8, &[]).unwrap();
        ScenarioTree::build(grid, IntensityCurve::constant(0.2).unwrap()).unwrap()
    }

    #[test]
    fn zero_driver_has_no_violation() {
        let tree = small_tree();
        let rep = zero_driver().check_lipschitz(&tree, 2000, 7);
        assert!(rep.worst_gap <= 0.0);
    }

    #[test]
    fn tight_linear_bound_holds() {
        let tree = small_tree();
        let d = linear_driver(0.7, 0.3, -0.5, Curve::constant(0.0)).unwrap();
        let rep = d.check_lipschitz(&tree, 5000, 11);
        assert!(rep.worst_gap <= 1e-12, "gap {}", rep.worst_gap);
    }

    #[test]
    fn understated_bound_is_detected() {
        let tree = small_tree();
        // f = 2*mu*y while declaring mu.
        let d = Driver::new(
            "cheat",
            Curve::constant(0.5),
            Curve::constant(0.0),
            Curve::constant(0.0),
            0.0,
            0.5,
            Arc::new(|_, _, _, y, _, _| 1.0 * y),
        )
        .unwrap();
        let rep = d.check_lipschitz(&tree, 5000, 13);
        assert!(rep.worst_gap > 0.0);
        assert!(rep.witness.is_some());
    }

    #[test]
    fn lambda_estimates() {
        let tree = small_tree();
        let node = &tree.layer(0)[0];
        let d = linear_driver(0.0, 0.0, -1.0, Curve::constant(0.0)).unwrap();
        let l = d.estimate_lambda(0.0, node, 0.2, 0.0, 0.0, 1.0, -1.0).unwrap();
        assert!((l + 1.0).abs() < 1e-14);
        let d0 = zero_driver();
        assert_eq!(d0.estimate_lambda(0.0, node, 0.2, 0.0, 0.0, 1.0, 2.0).unwrap(), 0.0);
        assert!(d0.estimate_lambda(0.0, node, 0.0, 0.0, 0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn market_driver_shape() {
        let tree = small_tree();
        let node = &tree.layer(0)[0];
        let f = market_driver(Curve::constant(0.0), Curve::constant(0.0), Curve::constant(0.2)).unwrap();
        assert_eq!(f.evaluate(0.3, node, 0.0, 1.7, -0.4, 0.0), 0.0);
        let f = market_driver(Curve::constant(0.05), Curve::constant(0.05), Curve::constant(0.2)).unwrap();
        let v = f.evaluate(0.3, node, 0.0, 2.0, 5.0, 0.0);
        assert!((v + 0.1).abs() < 1e-15);
        assert_eq!(f.theta_at(0.1), 0.0);
        assert!(market_driver(Curve::constant(0.05), Curve::constant(0.1), Curve::constant(0.0)).is_err());
    }

    #[test]
    fn eps_floor_scan() {
        let grid = TimeGrid::build(1.0, 4, &[]).unwrap();
        let gamma = IntensityCurve::constant(0.1).unwrap();
        let d = linear_driver(0.5, 0.2, 0.0, Curve::constant(0.0)).unwrap();
        d.check_eps_floor(&grid, &gamma).unwrap();
        let bad = Driver::new(
            "hollow",
            Curve::constant(0.0),
            Curve::constant(0.0),
            Curve::constant(0.0),
            0.0,
            0.5,
            Arc::new(|_, _, _, _, _, _| 0.0),
        )
        .unwrap();
        assert!(bad.check_eps_floor(&grid, &gamma).is_err());
    }
}
