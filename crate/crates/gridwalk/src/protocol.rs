//! Per-node and token state machines for the four task-management methods.
//!
//! - `Active`: baseline; the token alone synchronizes views, nodes select
//!   tasks locally without waiting for it.
//! - `Ds`: when the token's hop counter exceeds the bound b, the holder
//!   extracts a tree from the circulating word and broadcasts its set down
//!   it, accumulating node sets along each root-to-leaf path.
//! - `Df`: adds a feedback wave; each node forwards its merged set to its
//!   tree father once all sons responded or a timeout fired, so the
//!   initiator ends with a global view.
//! - `Dm`: after the feedback closes, re-diffuses the initiator's merged set
//!   down the same tree so every covered node shares the view.
//!
//! Handlers are pure synchronous state machines: they never block, all
//! waiting is expressed through the [`Outgoing`] values the engine turns
//! into scheduled events, and they are deterministic given (state, input).

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::error::{Result, SimError};
use crate::graph::{NodeId, Topology};
use crate::tasks::{merge_shared, TaskStateSet};
use crate::wordtree::{CirculatingWord, SpanTree};

/// Task assignment method under simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Active,
    Ds,
    Df,
    Dm,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Active => "active",
            Method::Ds => "ds",
            Method::Df => "df",
            Method::Dm => "dm",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s.trim().to_ascii_lowercase().as_str() {
            "active" => Ok(Method::Active),
            "ds" => Ok(Method::Ds),
            "df" => Ok(Method::Df),
            "dm" => Ok(Method::Dm),
            other => Err(SimError::InvalidParameter(format!(
                "unknown method `{other}` (expected active, ds, df or dm)"
            ))),
        }
    }

    pub fn uses_feedback(&self) -> bool {
        matches!(self, Method::Df | Method::Dm)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MethodConfig {
    pub method: Method,
    /// Refresh coefficient c_r.
    pub c_r: f64,
    /// Minimum refresh value m_r; caps the bound so diffusions keep a
    /// minimum frequency.
    pub m_r: f64,
    /// Per-node feedback timeout, reset at each diffusion.
    pub timeout_feedback: f64,
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_r <= 0.0 || self.m_r <= 0.0 || self.timeout_feedback <= 0.0 {
            return Err(SimError::InvalidParameter(
                "c_r, m_r and timeout_feedback must all be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Diffusion trigger bound: `b = min(nbT / n * c_r, m_r)`, evaluated by the
/// token holder against its local view's uncomputed count.
pub fn compute_bound(nb_uncomputed: usize, n: usize, cfg: &MethodConfig) -> f64 {
    (nb_uncomputed as f64 / n as f64 * cfg.c_r).min(cfg.m_r)
}

pub type TokenId = u64;
pub type DiffusionId = u64;

/// The mobile record: `{id_T, E_T, W, C_T}` plus the diffusion counter.
#[derive(Debug, Clone)]
pub struct Token {
    pub id: TokenId,
    pub eset: TaskStateSet,
    pub word: CirculatingWord,
    /// Hop counter C_T, reset to zero whenever a diffusion launches.
    pub hop_counter: u64,
    /// Diffusion counter, incremented at each diffusion; tags messages so
    /// concurrent diffusions stay distinguishable.
    pub diffusion_counter: DiffusionId,
}

impl Token {
    pub fn new(id: TokenId, eset: TaskStateSet) -> Token {
        Token { id, eset, word: CirculatingWord::new(), hop_counter: 0, diffusion_counter: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Down,
    /// The Dm re-diffusion of the initiator's merged set.
    FinalDown,
}

/// Tree-scoped update message `{id_T, E_M, T_D}`. The full diffusion tree
/// is shared by reference; every receiver reads its own sons from it, which
/// is equivalent to shipping per-receiver subtrees but far cheaper.
#[derive(Debug, Clone)]
pub struct DiffusionMsg {
    pub token_id: TokenId,
    pub diff_id: DiffusionId,
    pub phase: Phase,
    pub eset: Arc<TaskStateSet>,
    pub tree: Arc<SpanTree>,
}

/// Convergecast message: a node's merged set sent to its tree father.
#[derive(Debug, Clone)]
pub struct FeedbackMsg {
    pub token_id: TokenId,
    pub diff_id: DiffusionId,
    pub eset: Arc<TaskStateSet>,
}

/// Per-(token, diffusion) wave bookkeeping kept while sons are pending.
#[derive(Debug, Clone)]
pub struct DiffusionRecord {
    /// `None` at the initiator.
    pub father: Option<NodeId>,
    pub pending_sons: BTreeSet<NodeId>,
    /// Responses merged so far.
    pub acc: TaskStateSet,
    pub deadline: f64,
    pub is_initiator: bool,
    pub method: Method,
    /// Full diffusion tree, kept only at the initiator for the Dm re-diffusion.
    pub tree: Option<Arc<SpanTree>>,
}

/// What a handler asks the engine to do.
#[derive(Debug, Clone)]
pub enum Outgoing {
    Down { dst: NodeId, msg: DiffusionMsg },
    Feedback { dst: NodeId, msg: FeedbackMsg },
    ArmTimeout { token_id: TokenId, diff_id: DiffusionId, deadline: f64 },
}

/// One grid node's protocol state. Liveness is tracked by the engine.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub eset: TaskStateSet,
    pub records: BTreeMap<(TokenId, DiffusionId), DiffusionRecord>,
    /// Newest diffusion id seen per token; older Down messages are treated
    /// as stale under Df/Dm (merge only, no forwarding, no record).
    newest_diff: BTreeMap<TokenId, DiffusionId>,
    /// Task currently being computed locally, if any.
    pub computing: Option<crate::tasks::TaskId>,
    pub invalid_msgs: u64,
}

impl NodeState {
    pub fn new(id: NodeId, eset: TaskStateSet) -> NodeState {
        NodeState {
            id,
            eset,
            records: BTreeMap::new(),
            newest_diff: BTreeMap::new(),
            computing: None,
            invalid_msgs: 0,
        }
    }

    /// Token reception: bidirectional sync, hop accounting, word update and,
    /// past the bound, a diffusion launch. The walk's next hop is chosen by
    /// the engine, which knows node liveness.
    pub fn on_token_arrival(
        &mut self,
        token: &mut Token,
        topo: &Topology,
        cfg: &MethodConfig,
        now: f64,
    ) -> Result<Vec<Outgoing>> {
        self.eset.merge(&token.eset);
        token.eset.merge(&self.eset);
        token.hop_counter += 1;
        token.word.append_visit(topo, self.id)?;

        let mut out = Vec::new();
        if cfg.method == Method::Active {
            return Ok(out);
        }
        let bound = compute_bound(self.eset.uncomputed_count(), topo.n(), cfg);
        if (token.hop_counter as f64) <= bound {
            return Ok(out);
        }
        token.hop_counter = 0;
        token.diffusion_counter += 1;
        let diff_id = token.diffusion_counter;
        let tree = Arc::new(token.word.extract_tree()?);
        debug_assert_eq!(tree.root(), self.id);
        self.note_diffusion(token.id, diff_id);

        let payload = Arc::new(token.eset.clone());
        let sons: Vec<NodeId> = tree.children_of(self.id).to_vec();
        for &son in &sons {
            out.push(Outgoing::Down {
                dst: son,
                msg: DiffusionMsg {
                    token_id: token.id,
                    diff_id,
                    phase: Phase::Down,
                    eset: payload.clone(),
                    tree: tree.clone(),
                },
            });
        }
        if cfg.method.uses_feedback() && !sons.is_empty() {
            let deadline = now + cfg.timeout_feedback;
            self.records.insert(
                (token.id, diff_id),
                DiffusionRecord {
                    father: None,
                    pending_sons: sons.into_iter().collect(),
                    acc: TaskStateSet::new(),
                    deadline,
                    is_initiator: true,
                    method: cfg.method,
                    tree: Some(tree),
                },
            );
            out.push(Outgoing::ArmTimeout { token_id: token.id, diff_id, deadline });
        }
        Ok(out)
    }

    fn note_diffusion(&mut self, token_id: TokenId, diff_id: DiffusionId) {
        let newest = self.newest_diff.entry(token_id).or_insert(0);
        *newest = (*newest).max(diff_id);
    }

    /// Down-phase reception: merge, accumulate, forward to tree sons; under
    /// Df/Dm also open the wave record (or answer immediately at a leaf).
    pub fn on_down_msg(
        &mut self,
        src: NodeId,
        msg: DiffusionMsg,
        expected_token: TokenId,
        cfg: &MethodConfig,
        now: f64,
    ) -> Result<Vec<Outgoing>> {
        if msg.token_id != expected_token {
            self.invalid_msgs += 1;
            return Ok(Vec::new());
        }
        debug_assert!(msg.tree.covers(self.id));
        self.eset.merge(&msg.eset);
        let mut out = Vec::new();
        match msg.phase {
            Phase::FinalDown => {
                for &son in msg.tree.children_of(self.id) {
                    out.push(Outgoing::Down {
                        dst: son,
                        msg: DiffusionMsg {
                            token_id: msg.token_id,
                            diff_id: msg.diff_id,
                            phase: Phase::FinalDown,
                            eset: msg.eset.clone(),
                            tree: msg.tree.clone(),
                        },
                    });
                }
            }
            Phase::Down => {
                if cfg.method.uses_feedback() {
                    if let Some(&newest) = self.newest_diff.get(&msg.token_id) {
                        if msg.diff_id < newest {
                            // Stale wave: the local record slot has moved on.
                            return Ok(out);
                        }
                    }
                    self.note_diffusion(msg.token_id, msg.diff_id);
                }
                // Sets accumulate along the path down the tree.
                let forward = merge_shared(&msg.eset, &self.eset);
                let sons: Vec<NodeId> = msg.tree.children_of(self.id).to_vec();
                for &son in &sons {
                    out.push(Outgoing::Down {
                        dst: son,
                        msg: DiffusionMsg {
                            token_id: msg.token_id,
                            diff_id: msg.diff_id,
                            phase: Phase::Down,
                            eset: forward.clone(),
                            tree: msg.tree.clone(),
                        },
                    });
                }
                if cfg.method.uses_feedback() {
                    if sons.is_empty() {
                        out.push(Outgoing::Feedback {
                            dst: src,
                            msg: FeedbackMsg {
                                token_id: msg.token_id,
                                diff_id: msg.diff_id,
                                eset: Arc::new(self.eset.clone()),
                            },
                        });
                    } else {
                        let deadline = now + cfg.timeout_feedback;
                        self.records.insert(
                            (msg.token_id, msg.diff_id),
                            DiffusionRecord {
                                father: Some(src),
                                pending_sons: sons.into_iter().collect(),
                                acc: TaskStateSet::new(),
                                deadline,
                                is_initiator: false,
                                method: cfg.method,
                                tree: None,
                            },
                        );
                        out.push(Outgoing::ArmTimeout {
                            token_id: msg.token_id,
                            diff_id: msg.diff_id,
                            deadline,
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    /// Feedback reception. Late responses (record already closed) still
    /// update the node, but emit nothing.
    pub fn on_feedback_msg(
        &mut self,
        src: NodeId,
        msg: FeedbackMsg,
        expected_token: TokenId,
    ) -> Result<Vec<Outgoing>> {
        if msg.token_id != expected_token {
            self.invalid_msgs += 1;
            return Ok(Vec::new());
        }
        self.eset.merge(&msg.eset);
        let key = (msg.token_id, msg.diff_id);
        if let Some(record) = self.records.get_mut(&key) {
            record.acc.merge(&msg.eset);
            record.pending_sons.remove(&src);
            if record.pending_sons.is_empty() {
                return self.close_record(key);
            }
        }
        Ok(Vec::new())
    }

    /// Deadline expiry: close the wave with whatever accumulated. A no-op if
    /// all sons already responded (the record is gone).
    pub fn on_feedback_timeout(
        &mut self,
        token_id: TokenId,
        diff_id: DiffusionId,
    ) -> Result<Vec<Outgoing>> {
        let key = (token_id, diff_id);
        if self.records.contains_key(&key) {
            self.close_record(key)
        } else {
            Ok(Vec::new())
        }
    }

    pub fn has_record(&self, token_id: TokenId, diff_id: DiffusionId) -> bool {
        self.records.contains_key(&(token_id, diff_id))
    }

    fn close_record(&mut self, key: (TokenId, DiffusionId)) -> Result<Vec<Outgoing>> {
        let record = self.records.remove(&key).expect("record exists");
        self.eset.merge(&record.acc);
        let mut out = Vec::new();
        if let Some(father) = record.father {
            out.push(Outgoing::Feedback {
                dst: father,
                msg: FeedbackMsg {
                    token_id: key.0,
                    diff_id: key.1,
                    eset: Arc::new(self.eset.clone()),
                },
            });
        } else if record.method == Method::Dm {
            // Re-diffuse the merged view down the same tree.
            let tree = record.tree.expect("initiator record keeps the tree");
            let payload = Arc::new(self.eset.clone());
            for &son in tree.children_of(self.id) {
                out.push(Outgoing::Down {
                    dst: son,
                    msg: DiffusionMsg {
                        token_id: key.0,
                        diff_id: key.1,
                        phase: Phase::FinalDown,
                        eset: payload.clone(),
                        tree: tree.clone(),
                    },
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TopologyModel;
    use crate::tasks::{Task, TaskState};

    fn cfg(method: Method) -> MethodConfig {
        MethodConfig { method, c_r: 1000.0, m_r: 1500.0, timeout_feedback: 40.0 }
    }

    fn uncomputed_set(count: usize) -> TaskStateSet {
        TaskStateSet::generate(count, 0, 1.0, 0.0, 1).unwrap()
    }

    fn marked(count: usize, in_progress: &[usize]) -> TaskStateSet {
        let mut set = uncomputed_set(count);
        for &id in in_progress {
            set.insert(Task {
                id,
                emitter: 0,
                length: 1.0f64.exp(),
                state: TaskState::InProgress,
                result: None,
            });
        }
        set
    }

    #[test]
    fn bound_formula() {
        let c = cfg(Method::Ds);
        assert_eq!(compute_bound(20_000, 1000, &c), 1500.0);
        assert_eq!(compute_bound(0, 1000, &c), 0.0);
        assert_eq!(compute_bound(1, 1000, &c), 1.0);
    }

    #[test]
    fn active_method_never_diffuses() {
        let topo = Topology::generate(4, TopologyModel::Complete, 0).unwrap();
        let mut node = NodeState::new(0, uncomputed_set(2));
        let mut token = Token::new(0, uncomputed_set(2));
        token.hop_counter = 10_000; // far past any bound
        let out = node.on_token_arrival(&mut token, &topo, &cfg(Method::Active), 0.0).unwrap();
        assert!(out.is_empty());
        assert_eq!(token.diffusion_counter, 0);
    }

    #[test]
    fn ds_diffusion_sends_subtrees_to_sons() {
        let topo = Topology::generate(4, TopologyModel::Complete, 0).unwrap();
        let c = cfg(Method::Ds);
        let mut token = Token::new(0, uncomputed_set(2));
        // Walk 1 -> 2 -> 3 -> 0 builds a path tree under node 0.
        for v in [1, 2, 3] {
            token.word.append_visit(&topo, v).unwrap();
        }
        let mut node = NodeState::new(0, marked(2, &[0, 1])); // nbT = 0 => b = 0
        let out = node.on_token_arrival(&mut token, &topo, &c, 5.0).unwrap();
        assert_eq!(token.hop_counter, 0);
        assert_eq!(token.diffusion_counter, 1);
        let downs: Vec<_> = out
            .iter()
            .filter_map(|o| match o {
                Outgoing::Down { dst, msg } => Some((*dst, msg)),
                _ => None,
            })
            .collect();
        assert_eq!(downs.len(), 1);
        let (dst, msg) = downs[0];
        assert_eq!(dst, 3);
        assert_eq!(msg.tree.root(), 0);
        assert_eq!(msg.tree.covered(), vec![0, 1, 2, 3]);
        assert_eq!(msg.phase, Phase::Down);
        // E_M carries the token set, which absorbed the in-progress marks.
        assert_eq!(msg.eset.get(0).unwrap().state, TaskState::InProgress);
        // Ds never opens records.
        assert!(node.records.is_empty());
    }

    #[test]
    fn leaf_down_under_ds_merges_without_output() {
        let _topo = Topology::generate(3, TopologyModel::Ring, 0).unwrap();
        let mut leaf = NodeState::new(2, uncomputed_set(3));
        let tree = Arc::new(SpanTree::from_parent_map(2, BTreeMap::new()));
        let msg = DiffusionMsg {
            token_id: 0,
            diff_id: 1,
            phase: Phase::Down,
            eset: Arc::new(marked(3, &[1])),
            tree,
        };
        let out = leaf.on_down_msg(1, msg, 0, &cfg(Method::Ds), 1.0).unwrap();
        assert!(out.is_empty());
        assert_eq!(leaf.eset.get(1).unwrap().state, TaskState::InProgress);
    }

    #[test]
    fn interior_node_forwards_to_each_son() {
        // Tree rooted at 0: sons 1 and 2, grandson 3 under 1.
        let parent = BTreeMap::from([(1, 0), (2, 0), (3, 1)]);
        let tree = Arc::new(SpanTree::from_parent_map(0, parent));
        let mut node = NodeState::new(0, uncomputed_set(2));
        let msg = DiffusionMsg {
            token_id: 0,
            diff_id: 1,
            phase: Phase::Down,
            eset: Arc::new(uncomputed_set(2)),
            tree: tree.clone(),
        };
        let out = node.on_down_msg(9, msg, 0, &cfg(Method::Ds), 1.0).unwrap();
        let downs: Vec<_> = out
            .iter()
            .filter_map(|o| match o {
                Outgoing::Down { dst, msg } => Some((*dst, msg.tree.clone())),
                _ => None,
            })
            .collect();
        assert_eq!(downs.len(), 2);
        assert_eq!(downs[0].0, 1);
        assert_eq!(downs[1].0, 2);
        // The tree itself travels by reference, never copied.
        assert!(downs.iter().all(|(_, t)| Arc::ptr_eq(t, &tree)));
    }

    #[test]
    fn down_sets_accumulate_along_the_path() {
        // Chain 0 -> 2 -> 3 -> 4 -> 5 as in a word over those nodes; node 5
        // must end up with the marks of 0, 2, 3 and 4.
        let topo = Topology::generate(6, TopologyModel::Complete, 0).unwrap();
        let c = cfg(Method::Ds);
        let chain = [0, 2, 3, 4, 5];
        let mut nodes: Vec<NodeState> = (0..6)
            .map(|i| NodeState::new(i, marked(6, &[i])))
            .collect();
        let mut parent = BTreeMap::new();
        for w in chain.windows(2) {
            parent.insert(w[1], w[0]);
        }
        let tree = Arc::new(SpanTree::from_parent_map(0, parent));
        let mut inbox = vec![(
            0usize,
            9usize,
            DiffusionMsg {
                token_id: 0,
                diff_id: 1,
                phase: Phase::Down,
                eset: Arc::new(nodes[0].eset.clone()),
                tree,
            },
        )];
        while let Some((dst, src, msg)) = inbox.pop() {
            let out = nodes[dst].on_down_msg(src, msg, 0, &c, 0.0).unwrap();
            for o in out {
                if let Outgoing::Down { dst: next, msg } = o {
                    inbox.push((next, dst, msg));
                }
            }
        }
        let five = &nodes[5].eset;
        for marked_by in [0, 2, 3, 4] {
            assert_eq!(
                five.get(marked_by).unwrap().state,
                TaskState::InProgress,
                "node 5 missing the mark of node {marked_by}"
            );
        }
        assert!(topo.is_connected());
    }

    #[test]
    fn feedback_closes_record_and_propagates_up() {
        let mut node = NodeState::new(1, uncomputed_set(4));
        node.records.insert(
            (0, 1),
            DiffusionRecord {
                father: Some(0),
                pending_sons: BTreeSet::from([2]),
                acc: TaskStateSet::new(),
                deadline: 40.0,
                is_initiator: false,
                method: Method::Df,
                tree: None,
            },
        );
        let fb = FeedbackMsg { token_id: 0, diff_id: 1, eset: Arc::new(marked(4, &[3])) };
        let out = node.on_feedback_msg(2, fb, 0).unwrap();
        assert!(!node.has_record(0, 1));
        match &out[..] {
            [Outgoing::Feedback { dst: 0, msg }] => {
                assert_eq!(msg.eset.get(3).unwrap().state, TaskState::InProgress);
            }
            other => panic!("expected one upward feedback, got {other:?}"),
        }
    }

    #[test]
    fn dm_initiator_launches_final_down_on_last_feedback() {
        let parent = BTreeMap::from([(1, 0), (2, 0)]);
        let tree = Arc::new(SpanTree::from_parent_map(0, parent));
        let mut node = NodeState::new(0, uncomputed_set(4));
        node.records.insert(
            (0, 7),
            DiffusionRecord {
                father: None,
                pending_sons: BTreeSet::from([1, 2]),
                acc: TaskStateSet::new(),
                deadline: 40.0,
                is_initiator: true,
                method: Method::Dm,
                tree: Some(tree),
            },
        );
        let fb1 = FeedbackMsg { token_id: 0, diff_id: 7, eset: Arc::new(marked(4, &[1])) };
        assert!(node.on_feedback_msg(1, fb1, 0).unwrap().is_empty());
        let fb2 = FeedbackMsg { token_id: 0, diff_id: 7, eset: Arc::new(marked(4, &[2])) };
        let out = node.on_feedback_msg(2, fb2, 0).unwrap();
        let finals: Vec<_> = out
            .iter()
            .filter_map(|o| match o {
                Outgoing::Down { dst, msg } if msg.phase == Phase::FinalDown => Some(*dst),
                _ => None,
            })
            .collect();
        assert_eq!(finals, vec![1, 2]);
        // Payload is the fully merged view.
        if let Outgoing::Down { msg, .. } = &out[0] {
            assert_eq!(msg.eset.get(1).unwrap().state, TaskState::InProgress);
            assert_eq!(msg.eset.get(2).unwrap().state, TaskState::InProgress);
        }
    }

    #[test]
    fn late_feedback_only_updates_the_node() {
        let mut node = NodeState::new(1, uncomputed_set(4));
        let fb = FeedbackMsg { token_id: 0, diff_id: 3, eset: Arc::new(marked(4, &[2])) };
        let out = node.on_feedback_msg(2, fb, 0).unwrap();
        assert!(out.is_empty());
        assert_eq!(node.eset.get(2).unwrap().state, TaskState::InProgress);
    }

    #[test]
    fn timeout_closes_with_partial_accumulation() {
        let mut node = NodeState::new(1, uncomputed_set(4));
        node.records.insert(
            (0, 1),
            DiffusionRecord {
                father: Some(0),
                pending_sons: BTreeSet::from([2, 3]),
                acc: TaskStateSet::new(),
                deadline: 40.0,
                is_initiator: false,
                method: Method::Df,
                tree: None,
            },
        );
        let fb = FeedbackMsg { token_id: 0, diff_id: 1, eset: Arc::new(marked(4, &[2])) };
        assert!(node.on_feedback_msg(2, fb, 0).unwrap().is_empty());
        let out = node.on_feedback_timeout(0, 1).unwrap();
        assert!(matches!(&out[..], [Outgoing::Feedback { dst: 0, .. }]));
        // A second fire is a no-op: the record is gone.
        assert!(node.on_feedback_timeout(0, 1).unwrap().is_empty());
    }

    #[test]
    fn stale_down_merges_without_forwarding() {
        let parent = BTreeMap::from([(2, 1)]);
        let tree = Arc::new(SpanTree::from_parent_map(1, parent));
        let mut node = NodeState::new(1, uncomputed_set(4));
        node.note_diffusion(0, 5);
        let msg = DiffusionMsg {
            token_id: 0,
            diff_id: 3,
            phase: Phase::Down,
            eset: Arc::new(marked(4, &[0])),
            tree,
        };
        let out = node.on_down_msg(0, msg, 0, &cfg(Method::Df), 1.0).unwrap();
        assert!(out.is_empty());
        assert!(!node.has_record(0, 3));
        assert_eq!(node.eset.get(0).unwrap().state, TaskState::InProgress);
    }

    #[test]
    fn foreign_token_messages_are_dropped_and_counted() {
        let tree = Arc::new(SpanTree::from_parent_map(1, BTreeMap::new()));
        let mut node = NodeState::new(1, uncomputed_set(2));
        let msg = DiffusionMsg {
            token_id: 99,
            diff_id: 1,
            phase: Phase::Down,
            eset: Arc::new(marked(2, &[0])),
            tree,
        };
        assert!(node.on_down_msg(0, msg, 0, &cfg(Method::Ds), 1.0).unwrap().is_empty());
        let fb = FeedbackMsg { token_id: 99, diff_id: 1, eset: Arc::new(marked(2, &[1])) };
        assert!(node.on_feedback_msg(0, fb, 0).unwrap().is_empty());
        assert_eq!(node.invalid_msgs, 2);
        // Neither payload was merged.
        assert_eq!(node.eset.uncomputed_count(), 2);
    }

    /// Hand-simulated oracle for the 2-node, b=1 case: the token alternates
    /// nodes and a diffusion fires every second hop; after each diffusion
    /// both nodes hold equal sets.
    #[test]
    fn two_node_b1_diffusion_every_second_hop() {
        let topo = Topology::generate(2, TopologyModel::Complete, 0).unwrap();
        // Each node marked one of 4 tasks; once views sync, nbT = 2 on both
        // sides and b = min(2/2 * 1, m_r) = 1 for the rest of the walk.
        let c = MethodConfig { method: Method::Ds, c_r: 1.0, m_r: 1500.0, timeout_feedback: 4.0 };
        let mut nodes = vec![
            NodeState::new(0, marked(4, &[0])),
            NodeState::new(1, marked(4, &[1])),
        ];
        let mut token = Token::new(0, uncomputed_set(4));
        let mut fired_at = Vec::new();
        let mut holder = 0usize;
        for step in 0..6 {
            let out = nodes[holder]
                .on_token_arrival(&mut token, &topo, &c, step as f64)
                .unwrap();
            let fired = token.hop_counter == 0;
            fired_at.push(fired);
            for o in out {
                if let Outgoing::Down { dst, msg } = o {
                    nodes[dst].on_down_msg(holder, msg, 0, &c, step as f64).unwrap();
                }
            }
            if fired {
                assert_eq!(nodes[0].eset, nodes[1].eset, "views differ after diffusion");
            }
            holder = 1 - holder;
        }
        assert_eq!(fired_at, vec![false, true, false, true, false, true]);
    }
}
