//! Deterministic piecewise-constant default intensity.

use crate::error::{Error, Result};

/// Piecewise-constant non-negative hazard rate `t -> gamma(t)`.
///
/// Pieces are given as `(start_time, rate)`; the rate applies on
/// `[start_time, next_start)` and the last piece extends to infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityCurve {
    pieces: Vec<(f64, f64)>,
}

impl IntensityCurve {
    pub fn constant(rate: f64) -> Result<Self> {
        Self::piecewise(vec![(0.0, rate)])
    }

    pub fn zero() -> Self {
        Self { pieces: vec![(0.0, 0.0)] }
    }

    pub fn piecewise(pieces: Vec<(f64, f64)>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidIntensity("need at least one piece".into()));
        }
        if pieces[0].0 != 0.0 {
            return Err(Error::InvalidIntensity("first piece must start at 0".into()));
        }
        for w in pieces.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidIntensity("piece starts must be strictly increasing".into()));
            }
        }
        for &(start, rate) in &pieces {
            if !rate.is_finite() || rate < 0.0 {
                return Err(Error::InvalidIntensity(format!("rate {rate} at {start} must be finite and >= 0")));
            }
        }
        Ok(Self { pieces })
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        let mut r = self.pieces[0].1;
        for &(start, rate) in &self.pieces {
            if t >= start {
                r = rate;
            } else {
                break;
            }
        }
        r
    }

    /// Exact integral of the rate over `[0, t]` (the hazard accumulated by `t`).
    pub fn integral(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for (i, &(start, rate)) in self.pieces.iter().enumerate() {
            if t <= start {
                break;
            }
            let end = self.pieces.get(i + 1).map_or(t, |&(s, _)| s.min(t));
            acc += rate * (end - start);
        }
        acc
    }
}
