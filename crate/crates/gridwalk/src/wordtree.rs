//! Circulating word and the spanning tree derived from it.
//!
//! The word is the token's visit history. The derived tree is rooted at the
//! current holder: for every other visited node v, its parent is the node
//! visited immediately after v's most recent visit. Instead of the unbounded
//! raw history we store the equivalent parent map and update it in O(1) per
//! hop: on a move u -> v set parent(u) = v, delete parent(v), root = v. A
//! canonical reduced word of length 2k-1 (k distinct ids) can be rebuilt on
//! demand as a depth-first tour of the tree.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use crate::error::{Result, SimError};
use crate::graph::{NodeId, Topology};

/// Token-carried visit history, stored in reduced (parent map) form.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CirculatingWord {
    root: Option<NodeId>,
    parent: BTreeMap<NodeId, NodeId>,
}

impl CirculatingWord {
    pub fn new() -> CirculatingWord {
        CirculatingWord::default()
    }

    pub fn is_empty(&self) -> bool {
        self.root.is_none()
    }

    /// Current token holder, i.e. the last element of the word.
    pub fn holder(&self) -> Option<NodeId> {
        self.root
    }

    /// Number of distinct visited nodes.
    pub fn covered_count(&self) -> usize {
        self.parent.len() + usize::from(self.root.is_some())
    }

    /// Records a token move onto node `i`. `i` must be a neighbor of the
    /// current holder unless the word is still empty; anything else is a
    /// simulator bug, not a modeled fault.
    pub fn append_visit(&mut self, topo: &Topology, i: NodeId) -> Result<()> {
        match self.root {
            None => {
                self.root = Some(i);
            }
            Some(holder) => {
                if !topo.are_neighbors(holder, i) {
                    return Err(SimError::ProtocolViolation(format!(
                        "append of {i} but holder {holder} has no such neighbor"
                    )));
                }
                self.parent.insert(holder, i);
                self.parent.remove(&i);
                self.root = Some(i);
            }
        }
        Ok(())
    }

    /// Canonical reduced visit sequence equivalent to this word: a
    /// depth-first tour of the derived tree ending at the holder. Length is
    /// `2 * covered - 1`, and re-deriving a tree from it yields the same tree.
    pub fn reduced_word(&self) -> Vec<NodeId> {
        let Some(root) = self.root else { return Vec::new() };
        let tree = SpanTree::from_parent_map(root, self.parent.clone());
        let mut out = Vec::with_capacity(2 * self.covered_count() - 1);
        // Tour emits each node on entry and again after each child's subtree,
        // so the successor of every node's last occurrence is its parent.
        fn tour(tree: &SpanTree, v: NodeId, out: &mut Vec<NodeId>) {
            out.push(v);
            for &c in tree.children_of(v) {
                tour(tree, c, out);
                out.push(v);
            }
        }
        tour(&tree, root, &mut out);
        debug_assert_eq!(out.last().copied(), Some(root));
        out
    }

    /// Derives the diffusion tree rooted at the current holder.
    pub fn extract_tree(&self) -> Result<SpanTree> {
        let root = self
            .root
            .ok_or_else(|| SimError::InvalidState("cannot extract a tree from an empty word".into()))?;
        Ok(SpanTree::from_parent_map(root, self.parent.clone()))
    }
}

/// Immutable spanning-tree snapshot over the word's covered nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanTree {
    root: NodeId,
    parent: BTreeMap<NodeId, NodeId>,
    children: BTreeMap<NodeId, Vec<NodeId>>,
}

impl SpanTree {
    pub fn from_parent_map(root: NodeId, parent: BTreeMap<NodeId, NodeId>) -> SpanTree {
        let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for (&child, &father) in &parent {
            children.entry(father).or_default().push(child);
        }
        // BTreeMap iteration already yields children ascending per father.
        SpanTree { root, parent, children }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn parent_of(&self, v: NodeId) -> Option<NodeId> {
        self.parent.get(&v).copied()
    }

    pub fn children_of(&self, v: NodeId) -> &[NodeId] {
        self.children.get(&v).map(|c| c.as_slice()).unwrap_or(&[])
    }

    pub fn covers(&self, v: NodeId) -> bool {
        v == self.root || self.parent.contains_key(&v)
    }

    /// Covered nodes in ascending id order.
    pub fn covered(&self) -> Vec<NodeId> {
        let mut nodes: BTreeSet<NodeId> = self.parent.keys().copied().collect();
        nodes.insert(self.root);
        nodes.into_iter().collect()
    }

    pub fn len(&self) -> usize {
        self.parent.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Subtree rooted at `v`; used to shrink diffusion message payloads.
    pub fn subtree(&self, v: NodeId) -> Result<SpanTree> {
        if !self.covers(v) {
            return Err(SimError::InvalidParameter(format!(
                "node {v} is not covered by the tree"
            )));
        }
        let mut parent = BTreeMap::new();
        let mut queue = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            for &c in self.children_of(u) {
                parent.insert(c, u);
                queue.push_back(c);
            }
        }
        Ok(SpanTree::from_parent_map(v, parent))
    }

    /// Removes dead nodes and everything whose parent path traverses one.
    /// Applied only by the simulator's omniscient checker; protocol nodes
    /// learn of failures solely through feedback timeouts.
    pub fn prune_crashed(&self, dead: &BTreeSet<NodeId>) -> Result<SpanTree> {
        if dead.contains(&self.root) {
            return Err(SimError::InvalidState(
                "cannot prune a tree whose root is crashed".into(),
            ));
        }
        let mut parent = BTreeMap::new();
        let mut queue = VecDeque::from([self.root]);
        while let Some(u) = queue.pop_front() {
            for &c in self.children_of(u) {
                if dead.contains(&c) {
                    continue;
                }
                parent.insert(c, u);
                queue.push_back(c);
            }
        }
        Ok(SpanTree::from_parent_map(self.root, parent))
    }

    /// Indented dump, one node per line, children ascending.
    pub fn dump(&self) -> String {
        fn rec(tree: &SpanTree, v: NodeId, depth: usize, out: &mut String) {
            let _ = writeln!(out, "{}{v}", "  ".repeat(depth));
            for &c in tree.children_of(v) {
                rec(tree, c, depth + 1, out);
            }
        }
        let mut out = String::new();
        rec(self, self.root, 0, &mut out);
        out
    }

    /// Verifies acyclicity, root reachability and edge validity against a
    /// topology. Test/checker helper.
    pub fn check_invariants(&self, topo: &Topology) -> Result<()> {
        let bound = self.len();
        for (&child, &father) in &self.parent {
            if !topo.are_neighbors(child, father) {
                return Err(SimError::InvalidState(format!(
                    "tree edge ({child},{father}) is not a topology edge"
                )));
            }
            let mut v = child;
            let mut steps = 0;
            while v != self.root {
                v = self.parent_of(v).ok_or_else(|| {
                    SimError::InvalidState(format!("node {v} has no path to root"))
                })?;
                steps += 1;
                if steps >= bound {
                    return Err(SimError::InvalidState("cycle in parent pointers".into()));
                }
            }
        }
        Ok(())
    }
}
