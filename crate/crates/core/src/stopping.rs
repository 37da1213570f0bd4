//! Node-measurable stopping rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{NodeId, Tree};

/// A stopping time on the tree: stop at the first node on the path whose
/// flag is set. Terminal nodes always stop.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StoppingRule {
    stop: Vec<bool>,
}

impl StoppingRule {
    /// Wraps per-node flags; terminal flags are forced on.
    pub fn from_flags(tree: &Tree, mut stop: Vec<bool>) -> Result<Self> {
        if stop.len() != tree.len() {
            return Err(Error::SizeMismatch {
                what: "stopping rule",
                expected: tree.len(),
                got: stop.len(),
            });
        }
        for id in tree.step_range(tree.n_steps()) {
            stop[id] = true;
        }
        Ok(StoppingRule { stop })
    }

    pub fn from_predicate(tree: &Tree, mut f: impl FnMut(NodeId) -> bool) -> Self {
        let stop = (0..tree.len())
            .map(|id| tree.is_terminal(NodeId(id)) || f(NodeId(id)))
            .collect();
        StoppingRule { stop }
    }

    /// `tau = T`.
    pub fn at_maturity(tree: &Tree) -> Self {
        StoppingRule::from_predicate(tree, |_| false)
    }

    /// `tau = 0`.
    pub fn immediately(tree: &Tree) -> Self {
        StoppingRule::from_predicate(tree, |id| id == tree.root())
    }

    pub fn stops_at(&self, id: NodeId) -> bool {
        self.stop[id.0]
    }

    pub fn flags(&self) -> &[bool] {
        &self.stop
    }

    pub fn len(&self) -> usize {
        self.stop.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stop.is_empty()
    }

    /// Nodes reached with positive probability before the rule has stopped,
    /// including the nodes where it stops.
    pub fn reached(&self, tree: &Tree) -> Vec<bool> {
        let mut reached = vec![false; tree.len()];
        reached[0] = true;
        for i in 0..tree.n_steps() {
            for id in tree.step_range(i) {
                if !reached[id] || self.stop[id] {
                    continue;
                }
                for b in tree.branches(NodeId(id)) {
                    if b.prob > 0.0 {
                        reached[b.child.0] = true;
                    }
                }
            }
        }
        reached
    }

    /// Nodes at which the rule actually stops on some path.
    pub fn stopping_nodes(&self, tree: &Tree) -> Vec<NodeId> {
        self.reached(tree)
            .into_iter()
            .enumerate()
            .filter(|&(id, r)| r && self.stop[id])
            .map(|(id, _)| NodeId(id))
            .collect()
    }

    /// Canonical form: flags cleared at nodes the rule never reaches.
    pub fn canonical(&self, tree: &Tree) -> Self {
        let reached = self.reached(tree);
        let mut stop = self.stop.clone();
        for (id, s) in stop.iter_mut().enumerate() {
            if !reached[id] && !tree.is_terminal(NodeId(id)) {
                *s = false;
            }
        }
        StoppingRule { stop }
    }

    pub(crate) fn check_tree(&self, tree: &Tree) -> Result<()> {
        if self.stop.len() != tree.len() {
            return Err(Error::SizeMismatch {
                what: "stopping rule",
                expected: tree.len(),
                got: self.stop.len(),
            });
        }
        Ok(())
    }
}
