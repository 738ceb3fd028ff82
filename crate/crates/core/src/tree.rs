//! Layered scenario tree for the filtration generated by a binomial Brownian
//! motion and a default indicator with deterministic intensity.
//!
//! A node is identified by `(layer, brownian index, default status)`. From an
//! alive node the walk branches up/down with probability `(1 - q)/2` each and
//! into the default state with probability `q = gamma(t_k) * dt_k`; the
//! Brownian increment is `+-sqrt(dt_k)` on the up/down branches and `0` on the
//! defaulting transition. Defaulted nodes keep branching up/down with
//! probability `1/2` and carry the step index at which default occurred, so
//! payoffs may depend on when default happened. After default the intensity
//! weight is zero and the compensated increment `dM` vanishes identically.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::intensity::IntensityCurve;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Alive,
    /// Defaulted during grid step `bucket` (between `t_bucket` and `t_bucket+1`).
    Defaulted { bucket: u32 },
}

impl Status {
    pub fn is_alive(&self) -> bool {
        matches!(self, Status::Alive)
    }

    fn sort_key(&self) -> i64 {
        match self {
            Status::Alive => -1,
            Status::Defaulted { bucket } => *bucket as i64,
        }
    }
}

/// One outgoing branch: child index in the next layer, transition
/// probability, Brownian increment and compensated default increment.
#[derive(Debug, Clone, Copy)]
pub struct Branch {
    pub child: u32,
    pub prob: f64,
    pub db: f64,
    pub dm: f64,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub j: i32,
    pub status: Status,
    /// Brownian level at the node (exact cumulative sum on uniform grids).
    pub w: f64,
    /// Unconditional probability of reaching the node.
    pub prob: f64,
    pub branches: Vec<Branch>,
}

#[derive(Debug, Clone)]
pub struct ScenarioTree {
    grid: TimeGrid,
    intensity: IntensityCurve,
    layers: Vec<Vec<Node>>,
    /// One-step default probability per grid step.
    step_default_prob: Vec<f64>,
}

impl ScenarioTree {
    pub fn build(grid: TimeGrid, intensity: IntensityCurve) -> Result<Self> {
        let n = grid.steps();
        let mut step_default_prob = Vec::with_capacity(n);
        for k in 0..n {
            let q = intensity.rate_at(grid.t(k)) * grid.dt(k);
            if q >= 1.0 {
                return Err(Error::IntensityTooLarge { step: k, prob: q });
            }
            step_default_prob.push(q);
        }

        // Ladder units: on a uniform grid the Brownian level at (k, j) is the
        // exact path sum j*sqrt(dt); on refined grids it is j times the
        // average step size, which is the closest single-ladder assignment.
        let mut units = Vec::with_capacity(n + 1);
        units.push(0.0);
        let mut sum_sqrt = 0.0;
        for k in 0..n {
            sum_sqrt += grid.dt(k).sqrt();
            units.push(sum_sqrt / (k + 1) as f64);
        }

        let mut layers: Vec<Vec<Node>> = Vec::with_capacity(n + 1);
        layers.push(vec![Node {
            j: 0,
            status: Status::Alive,
            w: 0.0,
            prob: 1.0,
            branches: Vec::new(),
        }]);

        for k in 0..n {
            let dt = grid.dt(k);
            let s = dt.sqrt();
            let q = step_default_prob[k];
            let unit = units[k + 1];

            let mut index: BTreeMap<(i64, i32), usize> = BTreeMap::new();
            let mut next: Vec<Node> = Vec::new();
            {
                // First pass fixes the child set so indices are stable.
                let parents = &layers[k];
                for p in parents {
                    let mut touch = |j: i32, status: Status, next: &mut Vec<Node>| -> u32 {
                        let key = (status.sort_key(), j);
                        let idx = *index.entry(key).or_insert_with(|| {
                            next.push(Node {
                                j,
                                status,
                                w: j as f64 * unit,
                                prob: 0.0,
                                branches: Vec::new(),
                            });
                            next.len() - 1
                        });
                        idx as u32
                    };
                    match p.status {
                        Status::Alive => {
                            let up = touch(p.j + 1, Status::Alive, &mut next);
                            let down = touch(p.j - 1, Status::Alive, &mut next);
                            let _ = (up, down);
                            if q > 0.0 {
                                touch(p.j, Status::Defaulted { bucket: k as u32 }, &mut next);
                            }
                        }
                        Status::Defaulted { bucket } => {
                            touch(p.j + 1, Status::Defaulted { bucket }, &mut next);
                            touch(p.j - 1, Status::Defaulted { bucket }, &mut next);
                        }
                    }
                }
            }
            // Second pass wires branches and accumulates probabilities.
            let lookup = |j: i32, status: Status| -> u32 {
                index[&(status.sort_key(), j)] as u32
            };
            let parents = &mut layers[k];
            for p in parents.iter_mut() {
                match p.status {
                    Status::Alive => {
                        let pu = (1.0 - q) / 2.0;
                        p.branches.push(Branch { child: lookup(p.j + 1, Status::Alive), prob: pu, db: s, dm: -q });
                        p.branches.push(Branch { child: lookup(p.j - 1, Status::Alive), prob: pu, db: -s, dm: -q });
                        if q > 0.0 {
                            p.branches.push(Branch {
                                child: lookup(p.j, Status::Defaulted { bucket: k as u32 }),
                                prob: q,
                                db: 0.0,
                                dm: 1.0 - q,
                            });
                        }
                    }
                    Status::Defaulted { bucket } => {
                        p.branches.push(Branch { child: lookup(p.j + 1, Status::Defaulted { bucket }), prob: 0.5, db: s, dm: 0.0 });
                        p.branches.push(Branch { child: lookup(p.j - 1, Status::Defaulted { bucket }), prob: 0.5, db: -s, dm: 0.0 });
                    }
                }
                for b in &p.branches {
                    next[b.child as usize].prob += p.prob * b.prob;
                }
            }
            layers.push(next);
        }

        Ok(Self { grid, intensity, layers, step_default_prob })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn intensity(&self) -> &IntensityCurve {
        &self.intensity
    }

    pub fn layers(&self) -> &[Vec<Node>] {
        &self.layers
    }

    pub fn layer(&self, k: usize) -> &[Node] {
        &self.layers[k]
    }

    pub fn node(&self, k: usize, i: usize) -> &Node {
        &self.layers[k][i]
    }

    pub fn node_count(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    /// One-step default probability `gamma(t_k) * dt_k`.
    pub fn step_default_prob(&self, k: usize) -> f64 {
        self.step_default_prob[k]
    }

    /// Intensity as seen from a node: the curve's rate while alive, zero after
    /// default.
    pub fn gamma_at(&self, k: usize, node: &Node) -> f64 {
        match node.status {
            Status::Alive => self.intensity.rate_at(self.grid.t(k)),
            Status::Defaulted { .. } => 0.0,
        }
    }

    /// Exact conditional expectation: maps values on layer `k + 1` to values
    /// on layer `k` by probability-weighted averaging per node.
    pub fn conditional_expectation(&self, k: usize, values: &[f64]) -> Result<Vec<f64>> {
        if k + 1 >= self.layers.len() {
            return Err(Error::ShapeMismatch(format!("no layer {} in tree", k + 1)));
        }
        if values.len() != self.layers[k + 1].len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values on layer {}, got {}",
                self.layers[k + 1].len(),
                k + 1,
                values.len()
            )));
        }
        Ok(self.layers[k]
            .iter()
            .map(|node| node.branches.iter().map(|b| b.prob * values[b.child as usize]).sum())
            .collect())
    }

    /// `P(tau <= t)` for a grid time `t`, by exhaustive summation of defaulted
    /// node probabilities.
    pub fn default_probability(&self, t: f64) -> Result<f64> {
        let k = self.grid.index_of(t)?;
        Ok(self.layers[k]
            .iter()
            .filter(|n| !n.status.is_alive())
            .map(|n| n.prob)
            .sum())
    }

    /// Walks every path of the tree, calling `f` with the per-layer node
    /// indices and the path probability. Only sensible on small trees.
    pub fn for_each_path<F: FnMut(&[usize], f64)>(&self, mut f: F) {
        let mut stack: Vec<usize> = vec![0];
        self.walk(0, 0, 1.0, &mut stack, &mut f);
    }

    fn walk<F: FnMut(&[usize], f64)>(&self, k: usize, i: usize, p: f64, stack: &mut Vec<usize>, f: &mut F) {
        if k == self.grid.steps() {
            f(stack, p);
            return;
        }
        let branches = self.layers[k][i].branches.clone();
        for b in branches {
            stack.push(b.child as usize);
            self.walk(k + 1, b.child as usize, p * b.prob, stack, f);
            stack.pop();
        }
    }
}

/// Values indexed like the tree's layers.
pub type NodeField = Vec<Vec<f64>>;

/// Builds a field by evaluating `f` on every node.
pub fn field_from_fn(tree: &ScenarioTree, mut f: impl FnMut(usize, &Node) -> f64) -> NodeField {
    tree.layers()
        .iter()
        .enumerate()
        .map(|(k, layer)| layer.iter().map(|n| f(k, n)).collect())
        .collect()
}

/// Builds terminal values on the last layer only.
pub fn terminal_from_fn(tree: &ScenarioTree, mut f: impl FnMut(&Node) -> f64) -> Vec<f64> {
    tree.layers().last().unwrap().iter().map(|n| f(n)).collect()
}

/// Expectation of a field at a fixed layer.
pub fn layer_expectation(tree: &ScenarioTree, k: usize, values: &[f64]) -> f64 {
    tree.layer(k).iter().zip(values).map(|(n, v)| n.prob * v).sum()
}
