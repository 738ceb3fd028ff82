//! Regulated (làdlàg) paths on a time grid: left/right limits at every grid
//! time, jump extraction, decomposition of finite-variation paths into
//! continuous / RCLL-jump / LCRL-jump parts, and discrete pathwise identity
//! checkers (integration by parts, weighted-square change of variable,
//! convex change of variable).
//!
//! A path is stored as a triple `(left, value, right)` per grid time. Right
//! limits are stored explicitly rather than inferred from the next grid
//! value: a genuine right jump at `t_k` takes effect on the open interval
//! `(t_k, t_{k+1}]`, while sampling alone would silently convert it into a
//! left jump at `t_{k+1}`. Between grid points the path moves continuously
//! from `right[k]` to `left[k+1]`.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathTriple {
    pub left: f64,
    pub value: f64,
    pub right: f64,
}

impl PathTriple {
    pub fn flat(v: f64) -> Self {
        Self { left: v, value: v, right: v }
    }

    /// Right jump `value_{t+} - value_t`.
    pub fn jump_right(&self) -> f64 {
        self.right - self.value
    }

    /// Left jump `value_t - value_{t-}`.
    pub fn jump_left(&self) -> f64 {
        self.value - self.left
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegulatedPath {
    grid: TimeGrid,
    triples: Vec<PathTriple>,
}

impl RegulatedPath {
    /// Builds a path from explicit triples. Enforces the boundary
    /// conventions: no left jump at `t_0` and no right jump at `t_N`.
    pub fn from_triples(grid: TimeGrid, triples: Vec<PathTriple>) -> Result<Self> {
        if triples.len() != grid.times().len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} triples, got {}",
                grid.times().len(),
                triples.len()
            )));
        }
        for (k, tr) in triples.iter().enumerate() {
            if !(tr.left.is_finite() && tr.value.is_finite() && tr.right.is_finite()) {
                return Err(Error::InvalidPath(format!("non-finite triple at index {k}")));
            }
        }
        if triples[0].left != triples[0].value {
            return Err(Error::InvalidPath("left limit at t_0 must equal the value".into()));
        }
        let last = triples.len() - 1;
        if triples[last].right != triples[last].value {
            return Err(Error::InvalidPath("right limit at t_N must equal the value".into()));
        }
        Ok(Self { grid, triples })
    }

    /// Continuous path sampled from a function: every triple collapses.
    pub fn continuous(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let triples = grid.times().iter().map(|&t| PathTriple::flat(f(t))).collect();
        Self::from_triples(grid, triples)
    }

    pub fn constant(grid: TimeGrid, c: f64) -> Result<Self> {
        Self::continuous(grid, |_| c)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn triples(&self) -> &[PathTriple] {
        &self.triples
    }

    pub fn triple(&self, k: usize) -> PathTriple {
        self.triples[k]
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Stored triple at grid time `t`.
    pub fn limits_at(&self, t: f64) -> Result<PathTriple> {
        Ok(self.triples[self.grid.index_of(t)?])
    }

    /// Grid times whose right jump exceeds `threshold`.
    pub fn right_jump_times(&self, threshold: f64) -> Vec<f64> {
        self.triples
            .iter()
            .enumerate()
            .filter(|(_, tr)| tr.jump_right() > threshold)
            .map(|(k, _)| self.grid.t(k))
            .collect()
    }

    /// Right-upper semi-continuity: no upward right jump anywhere.
    pub fn is_rusc(&self) -> bool {
        self.triples.iter().all(|tr| tr.value >= tr.right)
    }
}

/// Sorted stopping-time lists exhausting the path's right jumps level by
/// level: level `n` holds `{0} ∪ {t : jump_right(t) > 1/n} ∪ {T}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoArray {
    pub levels: Vec<Vec<f64>>,
}

impl RhoArray {
    /// Level `n` list (1-based); level sets are nested by construction.
    pub fn level(&self, n: usize) -> &[f64] {
        &self.levels[n - 1]
    }

    pub fn is_nested(&self) -> bool {
        self.levels.windows(2).all(|w| w[0].iter().all(|t| w[1].contains(t)))
    }
}

pub fn build_rho_arrays(path: &RegulatedPath, n_max: usize) -> RhoArray {
    let horizon = path.grid().horizon();
    let levels = (1..=n_max)
        .map(|n| {
            let mut times = vec![0.0];
            for t in path.right_jump_times(1.0 / n as f64) {
                if t != 0.0 && t != horizon {
                    times.push(t);
                }
            }
            times.push(horizon);
            times
        })
        .collect();
    RhoArray { levels }
}

/// Decomposition of a non-decreasing finite-variation regulated path into a
/// continuous part, an RCLL (left-) jump part and an LCRL (right-) jump part,
/// all started at zero, each given by its values at the grid times.
#[derive(Debug, Clone, PartialEq)]
pub struct FVDecomposition {
    pub continuous: Vec<f64>,
    pub rcll_jumps: Vec<f64>,
    pub lcrl_jumps: Vec<f64>,
}

impl FVDecomposition {
    /// Right-continuous part `continuous + rcll_jumps` at each grid time.
    pub fn right_continuous(&self) -> Vec<f64> {
        self.continuous.iter().zip(&self.rcll_jumps).map(|(c, d)| c + d).collect()
    }
}

/// Splits a non-decreasing regulated `K` with `K_0 = 0` into its three parts.
///
/// Monotonicity is required in the regulated sense: within each triple
/// `left <= value <= right`, and across steps `left[k+1] >= right[k]`.
pub fn decompose_fv(path: &RegulatedPath) -> Result<FVDecomposition> {
    let triples = path.triples();
    if triples[0].value != 0.0 {
        return Err(Error::InvalidPath("finite-variation path must start at 0".into()));
    }
    for (k, tr) in triples.iter().enumerate() {
        if tr.left > tr.value || tr.value > tr.right {
            return Err(Error::DecreasingInput { index: k });
        }
        if k + 1 < triples.len() && triples[k + 1].left < tr.right {
            return Err(Error::DecreasingInput { index: k + 1 });
        }
    }
    let n = triples.len();
    let mut continuous = vec![0.0; n];
    let mut rcll = vec![0.0; n];
    let mut lcrl = vec![0.0; n];
    for k in 1..n {
        // Continuous motion inside (t_{k-1}, t_k), then the left jump at t_k.
        continuous[k] = continuous[k - 1] + (triples[k].left - triples[k - 1].right);
        rcll[k] = rcll[k - 1] + triples[k].jump_left();
        lcrl[k] = lcrl[k - 1] + triples[k - 1].jump_right();
    }
    Ok(FVDecomposition { continuous, rcll_jumps: rcll, lcrl_jumps: lcrl })
}

/// Max over grid times of the reconstruction defect
/// `|K_t - (K*_t + sum_{s<t} right jumps)|` for a decomposition of `path`.
pub fn reconstruction_residual(path: &RegulatedPath, dec: &FVDecomposition) -> f64 {
    let star = dec.right_continuous();
    path.triples()
        .iter()
        .enumerate()
        .map(|(k, tr)| (tr.value - (star[k] + dec.lcrl_jumps[k])).abs())
        .fold(0.0, f64::max)
}

/// Per-step pieces of a regulated path seen as an optional semimartingale on
/// the grid: the right jump at `t_k` and the RCLL increment over
/// `(t_k, t_{k+1}]` (continuous motion plus the left jump at `t_{k+1}`),
/// whose pre-jump value is `right[k]`.
fn rcll_increment(path: &RegulatedPath, k: usize) -> f64 {
    path.triple(k + 1).value - path.triple(k).right
}

/// Discrete integration-by-parts identity for two regulated paths on one
/// grid. Returns the max over grid times of `|lhs - rhs|`; the identity is
/// algebraic, so the residual is rounding noise only.
pub fn integration_by_parts_check(x1: &RegulatedPath, x2: &RegulatedPath) -> Result<f64> {
    if x1.grid() != x2.grid() {
        return Err(Error::ShapeMismatch("paths live on different grids".into()));
    }
    let n = x1.len() - 1;
    let mut acc = x1.triple(0).value * x2.triple(0).value;
    let mut worst = 0.0f64;
    for k in 0..n {
        let (a, b) = (x1.triple(k), x2.triple(k));
        // Right jumps at t_k transport the product.
        acc += a.right * b.right - a.value * b.value;
        // RCLL step with integrands at the pre-jump values plus the bracket.
        let d1 = rcll_increment(x1, k);
        let d2 = rcll_increment(x2, k);
        acc += a.right * d2 + b.right * d1 + d1 * d2;
        let lhs = x1.triple(k + 1).value * x2.triple(k + 1).value;
        worst = worst.max((lhs - acc).abs());
    }
    Ok(worst)
}

/// Discrete change-of-variable identity for `F(a, y) = exp(beta * a) * y^2`
/// along a regulated path `y` and a continuous non-decreasing clock `a`
/// (given by its grid values). Returns the max defect over grid times.
pub fn weighted_square_identity_check(
    path: &RegulatedPath,
    clock: &[f64],
    beta: f64,
) -> Result<f64> {
    if clock.len() != path.len() {
        return Err(Error::ShapeMismatch("clock length does not match path".into()));
    }
    let n = path.len() - 1;
    let f = |a: f64, y: f64| (beta * a).exp() * y * y;
    let mut acc = f(clock[0], path.triple(0).value);
    let mut worst = 0.0f64;
    for k in 0..n {
        let tr = path.triple(k);
        // Right jump at t_k: full transport of F (no integrator contribution).
        acc += f(clock[k], tr.right) - f(clock[k], tr.value);
        // Clock moves continuously over the step with y held at its pre-jump
        // value, then the RCLL jump of y at the step end.
        acc += f(clock[k + 1], tr.right) - f(clock[k], tr.right);
        let d = rcll_increment(path, k);
        let e = (beta * clock[k + 1]).exp();
        acc += e * (2.0 * tr.right * d + d * d);
        let lhs = f(clock[k + 1], path.triple(k + 1).value);
        worst = worst.max((lhs - acc).abs());
    }
    Ok(worst)
}

/// Output of [`tanaka_check`]: the reconstructed correction path, its
/// convexity component, and whether that component is non-decreasing.
#[derive(Debug, Clone)]
pub struct TanakaReport {
    /// Full correction at each grid time:
    /// `F(Y_t) - F(Y_0) - sum of F'(pre-jump) * rcll increments`.
    pub correction: Vec<f64>,
    /// Convexity component: Bregman gaps of the RCLL steps only. For convex
    /// `F` every increment is non-negative; right-jump transport is excluded
    /// because its sign is not controlled by convexity.
    pub convexity_part: Vec<f64>,
    /// Right jumps of the correction, equal to `F(Y_{t+}) - F(Y_t)` exactly.
    pub right_jumps: Vec<f64>,
    pub convexity_part_nondecreasing: bool,
}

/// Reconstructs the convex change-of-variable correction for `F(Y)` along a
/// regulated path, with `dphi` the left-hand derivative of `F`.
pub fn tanaka_check(
    path: &RegulatedPath,
    phi: impl Fn(f64) -> f64,
    dphi: impl Fn(f64) -> f64,
) -> TanakaReport {
    let n = path.len() - 1;
    let mut correction = vec![0.0; n + 1];
    let mut convexity = vec![0.0; n + 1];
    let mut right_jumps = vec![0.0; n + 1];
    let y0 = path.triple(0).value;
    let mut integral = 0.0;
    for k in 0..n {
        let tr = path.triple(k);
        right_jumps[k] = phi(tr.right) - phi(tr.value);
        let d = rcll_increment(path, k);
        integral += dphi(tr.right) * d;
        correction[k + 1] = phi(path.triple(k + 1).value) - phi(y0) - integral;
        let bregman = phi(path.triple(k + 1).value) - phi(tr.right) - dphi(tr.right) * d;
        convexity[k + 1] = convexity[k] + bregman;
    }
    let monotone = convexity.windows(2).all(|w| w[1] >= w[0] - 1e-12);
    TanakaReport {
        correction,
        convexity_part: convexity,
        right_jumps,
        convexity_part_nondecreasing: monotone,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::build(1.0, n, &[]).unwrap()
    }

    fn path_with_right_jump(n: usize, at: f64, size: f64) -> RegulatedPath {
        let g = grid(n);
        let triples = g
            .times()
            .iter()
            .map(|&t| {
                let base = if t > at { size } else { 0.0 };
                let right = if t >= at { size } else { 0.0 };
                PathTriple { left: base, value: base, right }
            })
            .collect();
        RegulatedPath::from_triples(g, triples).unwrap()
    }

    #[test]
    fn limits_and_jumps() {
        let p = path_with_right_jump(10, 0.5, 1.0);
        let tr = p.limits_at(0.5).unwrap();
        assert_eq!(tr.jump_right(), 1.0);
        assert_eq!(tr.jump_left(), 0.0);
        let c = RegulatedPath::constant(grid(4), 2.0).unwrap();
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let tr = c.limits_at(t).unwrap();
            assert_eq!(tr.jump_right(), 0.0);
            assert_eq!(tr.jump_left(), 0.0);
        }
        // No right jump at the horizon by convention.
        assert_eq!(p.limits_at(1.0).unwrap().jump_right(), 0.0);
    }

    #[test]
    fn right_jump_thresholding() {
        let p = path_with_right_jump(10, 0.5, 0.6);
        assert!(p.right_jump_times(1.0).is_empty());
        assert_eq!(p.right_jump_times(0.5), vec![0.5]);
        let g = grid(10);
        let mut triples: Vec<PathTriple> = g.times().iter().map(|_| PathTriple::flat(0.0)).collect();
        triples[3].right = 0.6; // at t = 0.3
        triples[7].right = 0.2; // at t = 0.7
        for k in 4..=10 {
            triples[k].left += 0.6;
            triples[k].value += 0.6;
            triples[k].right += 0.6;
        }
        triples[3] = PathTriple { left: 0.0, value: 0.0, right: 0.6 };
        triples[7] = PathTriple { left: 0.6, value: 0.6, right: 0.8 };
        for k in 8..=10 {
            triples[k] = PathTriple::flat(0.8);
        }
        let p = RegulatedPath::from_triples(g, triples).unwrap();
        assert_eq!(p.right_jump_times(0.25), vec![0.3]);
        assert_eq!(p.right_jump_times(1.0 / 6.0), vec![0.3, 0.7]);
    }

    #[test]
    fn rho_levels_nest_and_exhaust() {
        let g = grid(10);
        let mut triples: Vec<PathTriple> = g.times().iter().map(|_| PathTriple::flat(0.0)).collect();
        triples[2].right = 1.5; // jump 1.5 at t=0.2
        for tr in triples.iter_mut().skip(3) {
            *tr = PathTriple::flat(1.5);
        }
        triples[6] = PathTriple { left: 1.5, value: 1.5, right: 1.9 }; // jump 0.4 at t=0.6
        for tr in triples.iter_mut().skip(7) {
            *tr = PathTriple::flat(1.9);
        }
        let p = RegulatedPath::from_triples(g, triples).unwrap();
        let rho = build_rho_arrays(&p, 5);
        assert_eq!(rho.level(1), &[0.0, 0.2, 1.0]);
        assert_eq!(rho.level(3), &[0.0, 0.2, 0.6, 1.0]);
        assert!(rho.is_nested());
        // Once 1/n is below the smallest jump, every level is complete.
        assert_eq!(rho.level(4), rho.level(5));

        let flat = RegulatedPath::constant(grid(6), 3.0).unwrap();
        let rho = build_rho_arrays(&flat, 4);
        for n in 1..=4 {
            assert_eq!(rho.level(n), &[0.0, 1.0]);
        }

        let single = path_with_right_jump(10, 0.5, 0.6);
        let rho = build_rho_arrays(&single, 3);
        assert_eq!(rho.level(1), &[0.0, 1.0]);
        assert_eq!(rho.level(2), &[0.0, 0.5, 1.0]);
        assert_eq!(rho.level(3), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn decompose_linear_is_continuous() {
        let g = grid(5);
        let p = RegulatedPath::continuous(g, |t| t).unwrap();
        let d = decompose_fv(&p).unwrap();
        for (k, &t) in p.grid().times().iter().enumerate() {
            assert!((d.continuous[k] - t).abs() < 1e-15);
            assert_eq!(d.rcll_jumps[k], 0.0);
            assert_eq!(d.lcrl_jumps[k], 0.0);
        }
        assert!(reconstruction_residual(&p, &d) < 1e-12);
    }

    #[test]
    fn decompose_pure_right_jump() {
        let p = path_with_right_jump(10, 0.4, 2.0);
        let d = decompose_fv(&p).unwrap();
        for (k, &t) in p.grid().times().iter().enumerate() {
            let expected = if t > 0.4 { 2.0 } else { 0.0 };
            assert_eq!(d.lcrl_jumps[k], expected);
            assert_eq!(d.continuous[k], 0.0);
            assert_eq!(d.rcll_jumps[k], 0.0);
        }
        assert!(reconstruction_residual(&p, &d) < 1e-12);
    }

    #[test]
    fn decompose_mixed_parts() {
        // K = t + left jump of 1 at 0.3 + right jump of 1 at 0.6.
        let g = grid(10);
        let triples: Vec<PathTriple> = g
            .times()
            .iter()
            .map(|&t| {
                let lj = if t >= 0.3 { 1.0 } else { 0.0 };
                let rj = if t > 0.6 { 1.0 } else { 0.0 };
                let v = t + lj + rj;
                PathTriple {
                    left: if t == 0.3 { v - 1.0 } else { v },
                    value: v,
                    right: if t == 0.6 { v + 1.0 } else { v },
                }
            })
            .collect();
        let p = RegulatedPath::from_triples(g, triples).unwrap();
        let d = decompose_fv(&p).unwrap();
        for (k, &t) in p.grid().times().iter().enumerate() {
            assert!((d.continuous[k] - t).abs() < 1e-12);
            assert_eq!(d.rcll_jumps[k], if t >= 0.3 { 1.0 } else { 0.0 });
            assert_eq!(d.lcrl_jumps[k], if t > 0.6 { 1.0 } else { 0.0 });
        }
        assert!(reconstruction_residual(&p, &d) < 1e-12);
    }

    #[test]
    fn decompose_rejects_decreasing() {
        let g = grid(4);
        let mut triples: Vec<PathTriple> = g.times().iter().map(|&t| PathTriple::flat(t)).collect();
        triples[2].value = -0.1;
        triples[2].left = -0.1;
        triples[2].right = -0.1;
        let p = RegulatedPath::from_triples(g, triples).unwrap();
        assert!(matches!(decompose_fv(&p), Err(Error::DecreasingInput { .. })));
    }

    #[test]
    fn rusc_classification() {
        assert!(RegulatedPath::continuous(grid(6), |t| t.sin()).unwrap().is_rusc());
        assert!(!path_with_right_jump(10, 0.5, 0.6).is_rusc());
        assert!(path_with_right_jump(10, 0.5, -0.6).is_rusc());
    }

    #[test]
    fn ibp_constant_and_rcll() {
        let c1 = RegulatedPath::constant(grid(8), 3.0).unwrap();
        let c2 = RegulatedPath::constant(grid(8), -2.0).unwrap();
        assert!(integration_by_parts_check(&c1, &c2).unwrap() < 1e-15);

        let g = grid(8);
        let a = RegulatedPath::continuous(g.clone(), |t| 1.0 + t * t).unwrap();
        let b = RegulatedPath::continuous(g, |t| (3.0 * t).cos()).unwrap();
        assert!(integration_by_parts_check(&a, &b).unwrap() < 1e-12);
    }

    #[test]
    fn ibp_with_right_jumps_is_exact() {
        let a = path_with_right_jump(10, 0.3, 1.7);
        let b = path_with_right_jump(10, 0.6, -0.9);
        assert!(integration_by_parts_check(&a, &b).unwrap() < 1e-12);
    }

    #[test]
    fn weighted_square_identity() {
        let g = grid(10);
        let clock: Vec<f64> = g.times().iter().map(|&t| 2.0 * t).collect();
        let p = path_with_right_jump(10, 0.5, 1.3);
        assert!(weighted_square_identity_check(&p, &clock, 3.0).unwrap() < 1e-12);
    }

    #[test]
    fn tanaka_identity_function() {
        let p = path_with_right_jump(10, 0.5, 1.0);
        let rep = tanaka_check(&p, |x| x, |_| 1.0);
        assert!(rep.convexity_part.iter().all(|&v| v.abs() < 1e-15));
        assert!(rep.convexity_part_nondecreasing);
    }

    #[test]
    fn tanaka_square_increments() {
        let g = grid(10);
        let p = RegulatedPath::continuous(g, |t| (5.0 * t).sin()).unwrap();
        let rep = tanaka_check(&p, |x| x * x, |x| 2.0 * x);
        assert!(rep.convexity_part_nondecreasing);
        // Increments of the convexity part are the squared step moves.
        for k in 0..p.len() - 1 {
            let d = p.triple(k + 1).value - p.triple(k).right;
            let inc = rep.convexity_part[k + 1] - rep.convexity_part[k];
            assert!((inc - d * d).abs() < 1e-12);
        }
    }

    #[test]
    fn tanaka_positive_part_single_crossing() {
        let g = grid(10);
        let p = RegulatedPath::continuous(g, |t| t - 0.45).unwrap();
        let rep = tanaka_check(&p, |x| x.max(0.0), |x| if x > 0.0 { 1.0 } else { 0.0 });
        assert!(rep.convexity_part_nondecreasing);
        let increments: Vec<f64> = rep
            .convexity_part
            .windows(2)
            .map(|w| w[1] - w[0])
            .collect();
        let positive = increments.iter().filter(|&&v| v > 1e-15).count();
        assert_eq!(positive, 1);
    }

    #[test]
    fn tanaka_flags_nonconvex() {
        let g = grid(10);
        let p = RegulatedPath::continuous(g, |t| 2.0 * t - 1.0).unwrap();
        let rep = tanaka_check(&p, |x| -x * x, |x| -2.0 * x);
        assert!(!rep.convexity_part_nondecreasing);
    }
}
