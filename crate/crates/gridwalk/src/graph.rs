//! Grid communication topology.
//!
//! Links are symmetric: every protocol exchanges messages both down
//! (parent to child) and up (child to parent) along tree edges, and tree
//! edges are walked token edges, so a usable link must exist in both
//! directions. Neighbor sets are kept in ascending id order so seeded
//! uniform choices are reproducible.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SimError};

/// Node identity; ids are dense `0..n-1` within one simulation.
pub type NodeId = usize;

/// Generator model for random instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TopologyModel {
    Ring,
    Complete,
    /// Each undirected edge drawn with probability `p`, plus a random
    /// Hamiltonian-path backbone so the result is always connected.
    Random { p: f64 },
}

/// Undirected, connected communication graph with n nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    adj: Vec<Vec<NodeId>>,
}

impl Topology {
    /// Builds a topology from an undirected edge list, validating all
    /// invariants (no self-loops, no duplicates, connectivity).
    pub fn from_edges(n: usize, edges: &[(NodeId, NodeId)]) -> Result<Topology> {
        if n == 0 {
            return Err(SimError::InvalidParameter("node count must be >= 1".into()));
        }
        let mut sets: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); n];
        for &(i, j) in edges {
            if i == j {
                return Err(SimError::InvalidParameter(format!("self-loop at node {i}")));
            }
            if i >= n || j >= n {
                return Err(SimError::InvalidParameter(format!(
                    "edge ({i},{j}) out of range for n={n}"
                )));
            }
            sets[i].insert(j);
            sets[j].insert(i);
        }
        let topo = Topology {
            n,
            adj: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        };
        if !topo.is_connected() {
            return Err(SimError::InvalidParameter("topology is not connected".into()));
        }
        Ok(topo)
    }

    /// Generates a reproducible random instance. Identical `(n, model, seed)`
    /// yields a byte-identical adjacency.
    pub fn generate(n: usize, model: TopologyModel, seed: u64) -> Result<Topology> {
        if n < 2 {
            return Err(SimError::InvalidParameter(format!(
                "node count must be >= 2, got {n}"
            )));
        }
        let mut edges: Vec<(NodeId, NodeId)> = Vec::new();
        match model {
            TopologyModel::Ring => {
                for i in 0..n {
                    edges.push((i, (i + 1) % n));
                }
            }
            TopologyModel::Complete => {
                for i in 0..n {
                    for j in (i + 1)..n {
                        edges.push((i, j));
                    }
                }
            }
            TopologyModel::Random { p } => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(SimError::InvalidParameter(format!(
                        "edge probability must be in (0, 1], got {p}"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                // Backbone first so the rng consumption order is fixed.
                let mut perm: Vec<NodeId> = (0..n).collect();
                perm.shuffle(&mut rng);
                for w in perm.windows(2) {
                    edges.push((w[0], w[1]));
                }
                for i in 0..n {
                    for j in (i + 1)..n {
                        if rng.gen_bool(p) {
                            edges.push((i, j));
                        }
                    }
                }
            }
        }
        Topology::from_edges(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Neighbor set `N_i`, in ascending id order, stable across calls.
    pub fn neighbors(&self, i: NodeId) -> Result<&[NodeId]> {
        self.adj
            .get(i)
            .map(|v| v.as_slice())
            .ok_or_else(|| SimError::InvalidParameter(format!("unknown node {i}")))
    }

    pub fn are_neighbors(&self, i: NodeId, j: NodeId) -> bool {
        self.adj
            .get(i)
            .map(|v| v.binary_search(&j).is_ok())
            .unwrap_or(false)
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(|v| v.len()).sum::<usize>() / 2
    }

    /// Breadth-first reachability from node 0.
    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }

    /// Edge-list dump: header line `n=<count>`, then one line `i j` per
    /// undirected edge, ascending.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n={}\n", self.n);
        for i in 0..self.n {
            for &j in &self.adj[i] {
                if i < j {
                    let _ = writeln!(out, "{i} {j}");
                }
            }
        }
        out
    }

    /// Parses the format produced by [`Topology::to_edge_list`].
    pub fn parse_edge_list(s: &str) -> Result<Topology> {
        let mut lines = s.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| SimError::Parse { line: 1, msg: "empty input".into() })?;
        let n: usize = header
            .strip_prefix("n=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| SimError::Parse {
                line: 1,
                msg: format!("expected header `n=<count>`, got `{header}`"),
            })?;
        let mut edges = Vec::new();
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse = |part: Option<&str>| -> Result<NodeId> {
                part.and_then(|v| v.parse().ok()).ok_or_else(|| SimError::Parse {
                    line: idx + 1,
                    msg: format!("expected `i j`, got `{line}`"),
                })
            };
            let i = parse(parts.next())?;
            let j = parse(parts.next())?;
            edges.push((i, j));
        }
        Topology::from_edges(n, &edges)
    }
}
