//! Time grid on `[0, T]`: a uniform base grid refined with user-supplied
//! mandatory times (e.g. barrier jump times), deduplicated and sorted.

use crate::error::{Error, Result};

/// Relative tolerance used to merge mandatory times with existing grid points.
const MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with `n` steps on `[0, horizon]`, refined so that every
    /// mandatory time is a grid point. Mandatory times that coincide with an
    /// existing point (within tolerance) are merged, not duplicated.
    pub fn build(horizon: f64, n: usize, mandatory: &[f64]) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::InvalidGrid(format!("horizon must be finite and positive, got {horizon}")));
        }
        if n == 0 {
            return Err(Error::InvalidGrid("need at least one step".into()));
        }
        let mut times: Vec<f64> = (0..=n).map(|k| horizon * k as f64 / n as f64).collect();
        times[n] = horizon;
        let scale = horizon.max(1.0);
        for &m in mandatory {
            if !m.is_finite() {
                return Err(Error::InvalidGrid(format!("mandatory time {m} is not finite")));
            }
            if m < -MERGE_TOL * scale || m > horizon + MERGE_TOL * scale {
                return Err(Error::InvalidGrid(format!("mandatory time {m} outside [0, {horizon}]")));
            }
            if !times.iter().any(|&t| (t - m).abs() <= MERGE_TOL * scale) {
                times.push(m);
            }
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup_by(|a, b| (*a - *b).abs() <= MERGE_TOL * scale);
        Ok(Self { times })
    }

    /// Grid from explicit strictly increasing times starting at 0.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidGrid("need at least two points".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidGrid("first point must be 0".into()));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::InvalidGrid("times must be finite and strictly increasing".into()));
            }
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Number of steps (one less than the number of grid points).
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn t(&self, k: usize) -> f64 {
        self.times[k]
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    /// True when every step has (numerically) the same length.
    pub fn is_uniform(&self) -> bool {
        let h = self.dt(0);
        (0..self.steps()).all(|k| (self.dt(k) - h).abs() <= 1e-12 * self.horizon().max(1.0))
    }

    /// Index of the grid point equal to `t`, or an error when `t` is off-grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let scale = self.horizon().max(1.0);
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= MERGE_TOL * scale)
            .ok_or(Error::OffGrid { t })
    }

    /// Concatenate `other` (a grid on `[0, T']`) after this grid's horizon.
    pub fn concat(&self, other: &TimeGrid) -> Result<TimeGrid> {
        let t0 = self.horizon();
        let mut times = self.times.clone();
        times.extend(other.times().iter().skip(1).map(|&s| t0 + s));
        TimeGrid::from_times(times)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid() {
        let g = TimeGrid::build(1.0, 4, &[]).unwrap();
        assert_eq!(g.times(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(g.is_uniform());
    }

    #[test]
    fn mandatory_insertion_preserves_order() {
        let g = TimeGrid::build(1.0, 4, &[0.3]).unwrap();
        assert_eq!(g.times(), &[0.0, 0.25, 0.3, 0.5, 0.75, 1.0]);
        assert!(!g.is_uniform());
    }

    #[test]
    fn mandatory_dedup() {
        let g = TimeGrid::build(1.0, 2, &[0.5]).unwrap();
        assert_eq!(g.times(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TimeGrid::build(f64::NAN, 4, &[]).is_err());
        assert!(TimeGrid::build(-1.0, 4, &[]).is_err());
        assert!(TimeGrid::build(1.0, 4, &[1.5]).is_err());
        assert!(TimeGrid::build(1.0, 4, &[-0.1]).is_err());
    }

    #[test]
    fn index_of_roundtrip() {
        let g = TimeGrid::build(2.0, 5, &[0.37]).unwrap();
        for (k, &t) in g.times().iter().enumerate() {
            assert_eq!(g.index_of(t).unwrap(), k);
        }
        assert!(g.index_of(0.123).is_err());
    }
}
