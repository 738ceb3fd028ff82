//! Node-indexed stopping rules. A rule marks each node stop/continue; a path
//! stops at the first marked node it visits, and every path stops at the
//! horizon at the latest. Measurability is automatic: the decision at a node
//! depends only on the node identity.

use crate::error::{Error, Result};
use crate::tree::{Node, ScenarioTree};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct StoppingRule {
    stop: Vec<Vec<bool>>,
}

impl StoppingRule {
    /// Rule that never stops before the horizon.
    pub fn at_horizon(tree: &ScenarioTree) -> Self {
        Self::from_node_fn(tree, |_, _| false)
    }

    /// Stop immediately at layer zero.
    pub fn immediately(tree: &ScenarioTree) -> Self {
        Self::from_node_fn(tree, |k, _| k == 0)
    }

    /// Stop at the fixed grid layer `k`.
    pub fn at_layer(tree: &ScenarioTree, k: usize) -> Self {
        Self::from_node_fn(tree, move |layer, _| layer == k)
    }

    /// Marks stop nodes by predicate; the terminal layer is always marked.
    pub fn from_node_fn(tree: &ScenarioTree, mut f: impl FnMut(usize, &Node) -> bool) -> Self {
        let last = tree.layers().len() - 1;
        let stop = tree
            .layers()
            .iter()
            .enumerate()
            .map(|(k, layer)| layer.iter().map(|n| k == last || f(k, n)).collect())
            .collect();
        Self { stop }
    }

    pub fn from_mask(tree: &ScenarioTree, mask: Vec<Vec<bool>>) -> Result<Self> {
        if mask.len() != tree.layers().len() {
            return Err(Error::StoppingRule("mask layer count mismatch".into()));
        }
        for (k, layer) in mask.iter().enumerate() {
            if layer.len() != tree.layer(k).len() {
                return Err(Error::StoppingRule(format!("mask size mismatch at layer {k}")));
            }
        }
        let mut rule = Self { stop: mask };
        for s in rule.stop.last_mut().unwrap() {
            *s = true;
        }
        Ok(rule)
    }

    /// Random stop set with the given marking density (terminal layer always
    /// stops).
    pub fn random(tree: &ScenarioTree, rng: &mut impl Rng, density: f64) -> Self {
        Self::from_node_fn(tree, |_, _| rng.random_bool(density.clamp(0.0, 1.0)))
    }

    pub fn stops_at(&self, k: usize, i: usize) -> bool {
        self.stop[k][i]
    }

    pub fn mask(&self) -> &[Vec<bool>] {
        &self.stop
    }

    /// Refines `self` so that it also stops wherever `earlier` stops; the
    /// result precedes `self` path-wise.
    pub fn union(&self, other: &StoppingRule) -> StoppingRule {
        let stop = self
            .stop
            .iter()
            .zip(&other.stop)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| *x || *y).collect())
            .collect();
        StoppingRule { stop }
    }

    /// Path-wise `self <= other`: on every path, the first stop of `self`
    /// does not come after the first stop of `other`. Checked with a forward
    /// sweep over the product state (reached without stopping for each rule).
    pub fn precedes(&self, tree: &ScenarioTree, other: &StoppingRule) -> bool {
        // State per node: reachable with (self not stopped, other stopped)?
        // If such a state exists the ordering is violated at that node's past.
        let mut bad = false;
        // reach[i] = (self still running, other still running) reachable flags
        let mut reach: Vec<(bool, bool, bool)> = tree
            .layer(0)
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let s = self.stops_at(0, i);
                let o = other.stops_at(0, i);
                if !s && o {
                    bad = true;
                }
                // (both running, self stopped & other running, reachable at all)
                (!s && !o, s && !o, true)
            })
            .collect();
        for k in 0..tree.grid().steps() {
            let mut next = vec![(false, false, false); tree.layer(k + 1).len()];
            for (i, node) in tree.layer(k).iter().enumerate() {
                let (both, self_only, _) = reach[i];
                if !both && !self_only {
                    continue;
                }
                for b in &node.branches {
                    let c = b.child as usize;
                    let s = self.stops_at(k + 1, c);
                    let o = other.stops_at(k + 1, c);
                    if both {
                        if !s && o {
                            bad = true;
                        }
                        if !s && !o {
                            next[c].0 = true;
                        }
                        if s && !o {
                            next[c].1 = true;
                        }
                    }
                    if self_only && !o {
                        next[c].1 = true;
                    }
                }
            }
            reach = next;
            if bad {
                return false;
            }
        }
        !bad
    }

    /// First-hit layer per path for small trees; used by test oracles.
    pub fn hit_layer_on_path(&self, path: &[usize]) -> usize {
        for (k, &i) in path.iter().enumerate() {
            if self.stop[k][i] {
                return k;
            }
        }
        path.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::intensity::IntensityCurve;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tree(n: usize, rate: f64) -> ScenarioTree {
        let grid = TimeGrid::build(1.0, n, &[]).unwrap();
        ScenarioTree::build(grid, IntensityCurve::constant(rate).unwrap()).unwrap()
    }

    #[test]
    fn horizon_rule_stops_last() {
        let t = tree(4, 0.1);
        let r = StoppingRule::at_horizon(&t);
        for k in 0..4 {
            assert!((0..t.layer(k).len()).all(|i| !r.stops_at(k, i)));
        }
        assert!((0..t.layer(4).len()).all(|i| r.stops_at(4, i)));
    }

    #[test]
    fn union_precedes_both() {
        let t = tree(6, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let a = StoppingRule::random(&t, &mut rng, 0.25);
            let b = StoppingRule::random(&t, &mut rng, 0.25);
            let u = a.union(&b);
            assert!(u.precedes(&t, &a));
            assert!(u.precedes(&t, &b));
        }
    }

    #[test]
    fn precedes_matches_pathwise_oracle() {
        let t = tree(5, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let a = StoppingRule::random(&t, &mut rng, 0.3);
            let b = StoppingRule::random(&t, &mut rng, 0.3);
            let fast = a.precedes(&t, &b);
            let mut slow = true;
            t.for_each_path(|path, _| {
                if a.hit_layer_on_path(path) > b.hit_layer_on_path(path) {
                    slow = false;
                }
            });
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn layer_rules_are_ordered() {
        let t = tree(6, 0.0);
        let early = StoppingRule::at_layer(&t, 2);
        let late = StoppingRule::at_layer(&t, 4);
        assert!(early.precedes(&t, &late));
        assert!(!late.precedes(&t, &early));
        assert!(StoppingRule::immediately(&t).precedes(&t, &early));
    }
}
