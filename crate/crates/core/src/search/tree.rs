//! Arena-backed search tree with subtask nodes under the root.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::TrajectoryStep;

pub type NodeId = usize;

pub const ROOT: NodeId = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "subtask", rename_all = "snake_case")]
pub enum NodeKind {
    Root,
    Subtask(String),
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Mean of the rewards backpropagated through this node (the prior until the first visit).
    pub value: f64,
    pub visits: u64,
    pub pruned: bool,
    pub completed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<TrajectoryStep>,
}

/// One node's statistics before and after a backpropagation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackpropDelta {
    pub node: NodeId,
    pub value_before: f64,
    pub visits_before: u64,
    pub value_after: f64,
    pub visits_after: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectError {
    #[error("every subtask is pruned or completed")]
    AllSubtasksResolved,
}

/// Exploration-biased score of a child:
/// `V / (N_child + 1) + c * sqrt(ln(N_parent + 1) / (N_child + 1))`.
///
/// The `+1` terms keep the score finite for unvisited children, so with all
/// counts at zero it reduces to the child's prior value.
pub fn uct(value: f64, child_visits: u64, parent_visits: u64, c: f64) -> f64 {
    let nc = child_visits as f64 + 1.0;
    let np = parent_visits as f64 + 1.0;
    value / nc + c * (np.ln() / nc).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
}

impl SearchTree {
    /// Root plus one subtask child per key, each valued at its prior.
    pub fn new<S: AsRef<str>>(subtasks: &[S], priors: &[f64]) -> Self {
        assert_eq!(subtasks.len(), priors.len(), "one prior per subtask");
        let mut tree = Self {
            nodes: vec![SearchNode {
                id: ROOT,
                kind: NodeKind::Root,
                parent: None,
                children: Vec::new(),
                value: 0.0,
                visits: 0,
                pruned: false,
                completed: false,
                step: None,
            }],
        };
        for (s, p) in subtasks.iter().zip(priors) {
            let id = tree.add_child(ROOT, NodeKind::Subtask(s.as_ref().to_string()), None);
            tree.nodes[id].value = *p;
        }
        tree
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn subtask_nodes(&self) -> impl Iterator<Item = &SearchNode> {
        self.nodes[ROOT]
            .children
            .iter()
            .map(move |&c| &self.nodes[c])
    }

    pub fn subtask_node(&self, key: &str) -> Option<NodeId> {
        self.subtask_nodes()
            .find(|n| matches!(&n.kind, NodeKind::Subtask(k) if k == key))
            .map(|n| n.id)
    }

    pub fn add_child(
        &mut self,
        parent: NodeId,
        kind: NodeKind,
        step: Option<TrajectoryStep>,
    ) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(SearchNode {
            id,
            kind,
            parent: Some(parent),
            children: Vec::new(),
            value: 0.0,
            visits: 0,
            pruned: false,
            completed: false,
            step,
        });
        self.nodes[parent].children.push(id);
        id
    }

    /// Score of every open subtask, in configured order.
    pub fn uct_scores(&self, c: f64) -> Vec<(NodeId, f64)> {
        let parent_visits = self.nodes[ROOT].visits;
        self.subtask_nodes()
            .filter(|n| !n.pruned && !n.completed)
            .map(|n| (n.id, uct(n.value, n.visits, parent_visits, c)))
            .collect()
    }

    /// The open subtask with the highest score; the earliest configured wins ties.
    pub fn select(&self, c: f64) -> Result<NodeId, SelectError> {
        let mut best: Option<(NodeId, f64)> = None;
        for (id, score) in self.uct_scores(c) {
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((id, score));
            }
        }
        best.map(|(id, _)| id)
            .ok_or(SelectError::AllSubtasksResolved)
    }

    /// Path from `id` up to and including the root.
    pub fn ancestry(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out
    }

    /// Folds `reward` into the running mean of `leaf` and every ancestor.
    pub fn backpropagate(&mut self, leaf: NodeId, reward: f64) -> Vec<BackpropDelta> {
        self.ancestry(leaf)
            .into_iter()
            .map(|id| {
                let n = &mut self.nodes[id];
                let (value_before, visits_before) = (n.value, n.visits);
                n.value = if n.visits == 0 {
                    reward
                } else {
                    (n.value * n.visits as f64 + reward) / (n.visits as f64 + 1.0)
                };
                n.visits += 1;
                BackpropDelta {
                    node: id,
                    value_before,
                    visits_before,
                    value_after: n.value,
                    visits_after: n.visits,
                }
            })
            .collect()
    }

    pub fn set_step(&mut self, id: NodeId, step: TrajectoryStep) {
        self.nodes[id].step = Some(step);
    }

    /// Retires a subtask from selection.
    pub fn prune(&mut self, subtask: NodeId) {
        let n = &mut self.nodes[subtask];
        n.pruned = true;
        n.completed = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uct_examples() {
        assert_eq!(uct(0.0, 0, 0, 2.0), 0.0);
        let expect = 0.4 + 2.0 * (3f64.ln() / 2.0).sqrt();
        assert!((uct(0.8, 1, 2, 2.0) - expect).abs() < 1e-9);
        assert!((uct(0.8, 1, 2, 2.0) - 1.8823038073675114).abs() < 1e-9);
        assert!((uct(0.0, 0, 4, 2.0) - 2.0 * 5f64.ln().sqrt()).abs() < 1e-9);
        assert!((uct(0.0, 0, 4, 2.0) - 2.537272482359039).abs() < 1e-9);
    }

    #[test]
    fn cold_start_selects_highest_prior() {
        let t = SearchTree::new(&["text", "image", "match"], &[0.2, 0.1, 0.7]);
        assert_eq!(
            t.node(t.select(2.0).unwrap()).kind,
            NodeKind::Subtask("match".into())
        );
        let t = SearchTree::new(&["a", "b"], &[0.5, 0.5]);
        assert_eq!(t.select(2.0).unwrap(), t.subtask_node("a").unwrap());
    }

    #[test]
    fn pruned_subtasks_are_skipped() {
        let mut t = SearchTree::new(&["text", "match"], &[0.9, 0.1]);
        let text = t.subtask_node("text").unwrap();
        t.prune(text);
        assert_eq!(t.select(2.0).unwrap(), t.subtask_node("match").unwrap());
        let m = t.subtask_node("match").unwrap();
        t.prune(m);
        assert_eq!(t.select(2.0), Err(SelectError::AllSubtasksResolved));
    }

    #[test]
    fn backprop_running_mean() {
        let mut t = SearchTree::new(&["text"], &[0.3]);
        let s = t.subtask_node("text").unwrap();
        let leaf = t.add_child(s, NodeKind::Step, None);
        let d = t.backpropagate(leaf, 0.5);
        assert_eq!(d.len(), 3);
        assert_eq!((t.node(s).value, t.node(s).visits), (0.5, 1));
        let leaf2 = t.add_child(s, NodeKind::Step, None);
        t.backpropagate(leaf2, 0.9);
        assert!((t.node(s).value - 0.7).abs() < 1e-12);
        assert_eq!(t.node(ROOT).visits, 2);
        assert_eq!((t.node(leaf).value, t.node(leaf).visits), (0.5, 1));
    }
}
