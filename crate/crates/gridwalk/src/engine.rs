//! Deterministic discrete-event simulation core.
//!
//! Time model: one token hop and one message hop each cost `hop_cost`
//! (default 1 time unit); computation runs concurrently with circulation.
//! The event loop is strictly sequential; parallelism is only permitted
//! across independent runs of a sweep.
//!
//! The run ends when every task has been computed at least once somewhere
//! (`t_distributed` = time of the last first-completion). Fault-free runs
//! keep going until every node knows every result, which is reported as
//! `t_propagate`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Result, SimError};
use crate::graph::{NodeId, Topology};
use crate::protocol::{
    DiffusionId, DiffusionMsg, FeedbackMsg, MethodConfig, NodeState, Outgoing, Phase,
    Token, TokenId,
};
use crate::tasks::{TaskId, TaskState, TaskStateSet};

/// Workload parameters; lengths are log-normal(mu, sigma) and deterministic
/// per seed.
#[derive(Debug, Clone, Copy)]
pub struct TaskParams {
    pub count: usize,
    pub mu: f64,
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub topology: Topology,
    pub tasks: TaskParams,
    pub method: MethodConfig,
    /// Time per token hop and per message hop.
    pub hop_cost: f64,
    /// `(time, node)` pairs; crashing the holder is deferred to its next
    /// hop departure, and a crash of the initial holder at t=0 is rejected.
    pub crash_plan: Vec<(f64, NodeId)>,
    pub master_seed: u64,
    /// Safety cap; a run that reaches it without finishing the workload is
    /// flagged incomplete.
    pub max_time: f64,
    pub capture_trace: bool,
    pub capture_final_sets: bool,
}

impl SimConfig {
    pub fn new(topology: Topology, tasks: TaskParams, method: MethodConfig, seed: u64) -> SimConfig {
        SimConfig {
            topology,
            tasks,
            method,
            hop_cost: 1.0,
            crash_plan: Vec::new(),
            master_seed: seed,
            max_time: 1e9,
            capture_trace: false,
            capture_final_sets: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        if !self.topology.is_connected() {
            return Err(SimError::InvalidParameter("topology is not connected".into()));
        }
        if self.hop_cost <= 0.0 {
            return Err(SimError::InvalidParameter("hop_cost must be positive".into()));
        }
        if self.max_time <= 0.0 {
            return Err(SimError::InvalidParameter("max_time must be positive".into()));
        }
        for &(time, node) in &self.crash_plan {
            if node >= self.topology.n() {
                return Err(SimError::InvalidParameter(format!("crash of unknown node {node}")));
            }
            if time <= 0.0 && node == 0 {
                return Err(SimError::InvalidParameter(
                    "cannot crash the initial token holder at start".into(),
                ));
            }
            if time < 0.0 {
                return Err(SimError::InvalidParameter("crash times must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Per-class message tallies over the whole run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MessageCounts {
    pub token_hops: u64,
    pub down: u64,
    pub feedback: u64,
    pub final_down: u64,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub invalid: u64,
}

impl MessageCounts {
    pub fn total_sent(&self) -> u64 {
        self.token_hops + self.down + self.feedback + self.final_down
    }
}

/// Per-diffusion accounting, used by the wave-bound and convergence checks.
#[derive(Debug, Clone)]
pub struct DiffusionStat {
    pub diff_id: DiffusionId,
    pub initiator: NodeId,
    pub launched_at: f64,
    pub tree_size: usize,
    pub down_sent: u64,
    pub feedback_sent: u64,
    pub final_sent: u64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub n: usize,
    pub task_count: usize,
    /// Sum of task lengths; the analytic sequential baseline.
    pub t_sequential: f64,
    /// Time of the last first-completion; `None` when max_time was hit first.
    pub t_distributed: Option<f64>,
    /// Time every node knew every result; measured on fault-free runs only.
    pub t_propagate: Option<f64>,
    pub completed: bool,
    pub msgs: MessageCounts,
    /// Finished computations per task id, live nodes only.
    pub completions: Vec<u64>,
    /// Total completions beyond the first, per task, summed.
    pub replicated: u64,
    pub divergence: u64,
    pub diffusions: Vec<DiffusionStat>,
    pub event_count: u64,
    pub timeout_closures_total: u64,
    /// Highest number of timeout closures observed for one (node, diffusion).
    pub timeout_closures_max: u64,
    pub end_time: f64,
    pub trace_hash: String,
    pub trace: Option<Vec<String>>,
    pub final_sets: Option<Vec<TaskStateSet>>,
}

enum Message {
    Down(DiffusionMsg),
    Feedback(FeedbackMsg),
}

enum EventKind {
    TokenArrive(NodeId),
    Deliver { src: NodeId, dst: NodeId, msg: Message },
    TaskDone { node: NodeId, task: TaskId },
    TimeoutFire { node: NodeId, token_id: TokenId, diff_id: DiffusionId },
    Crash(NodeId),
}

struct QueuedEvent {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        self.time.total_cmp(&other.time) == Ordering::Equal && self.seq == other.seq
    }
}
impl Eq for QueuedEvent {}
impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueuedEvent {
    // Reversed so the max-heap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Stream derivation for the per-run master seed (splitmix64 step).
fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(stream.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Uniform choice among candidates; factored out so the walk's transition
/// rule is directly testable.
pub fn uniform_pick<R: Rng>(candidates: &[NodeId], rng: &mut R) -> Option<NodeId> {
    if candidates.is_empty() {
        None
    } else {
        Some(candidates[rng.gen_range(0..candidates.len())])
    }
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    nodes: Vec<NodeState>,
    alive: Vec<bool>,
    live_count: usize,
    token: Token,
    holder: Option<NodeId>,
    token_dest: Option<NodeId>,
    queue: BinaryHeap<QueuedEvent>,
    seq: u64,
    now: f64,
    walk_rng: ChaCha8Rng,
    node_rngs: Vec<ChaCha8Rng>,
    msgs: MessageCounts,
    completions: Vec<u64>,
    computed_once: Vec<bool>,
    computed_once_count: usize,
    replicated: u64,
    t_distributed: Option<f64>,
    t_propagate: Option<f64>,
    diffusions: Vec<DiffusionStat>,
    timeout_closures: HashMap<(NodeId, DiffusionId), u64>,
    known_all: Vec<bool>,
    known_all_count: usize,
    task_count: usize,
    crashes_scheduled: bool,
    event_count: u64,
    hasher: Sha256,
    trace: Option<Vec<String>>,
}

/// Executes one simulation to completion. Fully deterministic per
/// `(config, master_seed)`.
pub fn run(cfg: &SimConfig) -> Result<RunResult> {
    cfg.validate()?;
    let n = cfg.topology.n();
    let initial =
        TaskStateSet::generate(cfg.tasks.count, 0, cfg.tasks.mu, cfg.tasks.sigma, cfg.tasks.seed)?;
    let t_sequential = initial.total_length();
    let task_count = cfg.tasks.count;

    let mut sim = Sim {
        cfg,
        nodes: (0..n).map(|i| NodeState::new(i, initial.clone())).collect(),
        alive: vec![true; n],
        live_count: n,
        token: Token::new(0, initial.clone()),
        holder: None,
        token_dest: Some(0),
        queue: BinaryHeap::new(),
        seq: 0,
        now: 0.0,
        walk_rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, 0)),
        node_rngs: (0..n)
            .map(|i| ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, 1 + i as u64)))
            .collect(),
        msgs: MessageCounts::default(),
        completions: vec![0; task_count],
        computed_once: vec![false; task_count],
        computed_once_count: 0,
        replicated: 0,
        t_distributed: None,
        t_propagate: None,
        diffusions: Vec::new(),
        timeout_closures: HashMap::new(),
        known_all: vec![false; n],
        known_all_count: 0,
        task_count,
        crashes_scheduled: !cfg.crash_plan.is_empty(),
        event_count: 0,
        hasher: Sha256::new(),
        trace: cfg.capture_trace.then(Vec::new),
    };
    sim.init();
    sim.event_loop()?;
    Ok(sim.finish(t_sequential))
}

impl<'a> Sim<'a> {
    fn init(&mut self) {
        for &(time, node) in &self.cfg.crash_plan {
            self.schedule(time, EventKind::Crash(node));
        }
        // Active assignment: every node selects a task before ever seeing
        // the token.
        for i in 0..self.nodes.len() {
            self.maybe_start_task(i);
        }
        self.schedule(0.0, EventKind::TokenArrive(0));
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(QueuedEvent { time, seq, kind });
    }

    fn trace_line(&mut self, kind: &str, src: impl ToString, dst: impl ToString, diff: impl ToString, payload: usize) {
        let line = format!(
            "{:.6}\t{kind}\t{}\t{}\t{}\t{payload}",
            self.now,
            src.to_string(),
            dst.to_string(),
            diff.to_string()
        );
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        if let Some(trace) = &mut self.trace {
            trace.push(line);
        }
    }

    fn send(&mut self, src: NodeId, dst: NodeId, msg: Message) {
        match &msg {
            Message::Down(m) => {
                // diff_ids are assigned 1, 2, ... in launch order, so the
                // stat for diffusion d sits at index d-1.
                let stat = &mut self.diffusions[m.diff_id as usize - 1];
                debug_assert_eq!(stat.diff_id, m.diff_id);
                match m.phase {
                    Phase::Down => {
                        self.msgs.down += 1;
                        stat.down_sent += 1;
                    }
                    Phase::FinalDown => {
                        self.msgs.final_down += 1;
                        stat.final_sent += 1;
                    }
                }
            }
            Message::Feedback(m) => {
                self.msgs.feedback += 1;
                if let Some(stat) = self.diffusions.get_mut(m.diff_id as usize - 1) {
                    debug_assert_eq!(stat.diff_id, m.diff_id);
                    stat.feedback_sent += 1;
                }
            }
        }
        self.msgs.sent += 1;
        self.schedule(self.now + self.cfg.hop_cost, EventKind::Deliver { src, dst, msg });
    }

    fn process_outgoing(&mut self, src: NodeId, outgoing: Vec<Outgoing>) {
        for item in outgoing {
            match item {
                Outgoing::Down { dst, msg } => self.send(src, dst, Message::Down(msg)),
                Outgoing::Feedback { dst, msg } => self.send(src, dst, Message::Feedback(msg)),
                Outgoing::ArmTimeout { token_id, diff_id, deadline } => {
                    self.schedule(deadline, EventKind::TimeoutFire { node: src, token_id, diff_id });
                }
            }
        }
    }

    fn maybe_start_task(&mut self, node: NodeId) {
        if !self.alive[node] || self.nodes[node].computing.is_some() {
            return;
        }
        if self.crashes_scheduled && self.nodes[node].eset.uncomputed_count() == 0 {
            self.recover_lost_tasks(node);
        }
        if let Some(task) = self.nodes[node].eset.select_task(&mut self.node_rngs[node]) {
            let length = self.nodes[node].eset.get(task).unwrap().length;
            self.nodes[node].computing = Some(task);
            self.schedule(self.now + length, EventKind::TaskDone { node, task });
        }
    }

    /// A crash can strand a task in the in-progress state forever: no live
    /// node will select it again, yet it was never computed. When a node
    /// runs out of selectable work, revert such orphaned entries in its
    /// local view so the workload still finishes. The check uses simulator
    /// omniscience (global completion counts and who is computing what);
    /// in fault-free runs it never fires because every in-progress entry
    /// either completed already or has a live computer.
    fn recover_lost_tasks(&mut self, node: NodeId) {
        for task in 0..self.task_count {
            if self.completions[task] > 0 {
                continue;
            }
            let being_computed = self
                .nodes
                .iter()
                .zip(&self.alive)
                .any(|(n, &alive)| alive && n.computing == Some(task));
            if !being_computed {
                self.nodes[node].eset.reset_to_uncomputed(task);
            }
        }
    }

    fn after_eset_change(&mut self, node: NodeId) {
        if !self.known_all[node] && self.nodes[node].eset.computed_count() == self.task_count {
            self.known_all[node] = true;
            if self.alive[node] {
                self.known_all_count += 1;
            }
        }
    }

    fn event_loop(&mut self) -> Result<()> {
        while let Some(ev) = self.queue.pop() {
            if ev.time > self.cfg.max_time {
                break;
            }
            debug_assert!(ev.time >= self.now, "time went backwards");
            self.now = ev.time;
            self.event_count += 1;
            match ev.kind {
                EventKind::TokenArrive(node) => self.handle_token_arrival(node)?,
                EventKind::Deliver { src, dst, msg } => self.handle_deliver(src, dst, msg)?,
                EventKind::TaskDone { node, task } => self.handle_task_done(node, task)?,
                EventKind::TimeoutFire { node, token_id, diff_id } => {
                    self.handle_timeout(node, token_id, diff_id)?
                }
                EventKind::Crash(node) => self.handle_crash(node),
            }
            if self.t_distributed.is_some() {
                if !self.cfg.crash_plan.is_empty() {
                    break;
                }
                if self.known_all_count == self.live_count {
                    self.t_propagate = Some(self.now);
                    break;
                }
            }
        }
        // Conservation: every sent message was delivered, dropped, or is
        // still in flight in the remaining queue.
        let in_flight = self
            .queue
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Deliver { .. }))
            .count() as u64;
        assert_eq!(
            self.msgs.sent,
            self.msgs.delivered + self.msgs.dropped + in_flight,
            "message conservation violated"
        );
        Ok(())
    }

    fn handle_token_arrival(&mut self, node: NodeId) -> Result<()> {
        debug_assert!(self.alive[node], "token delivered to a crashed node");
        // Hops are counted on arrival so a hop still in flight when the run
        // stops is not charged; the initial placement is not a hop.
        if self.holder.is_some() {
            self.msgs.token_hops += 1;
        }
        self.holder = Some(node);
        self.token_dest = None;
        self.trace_line("token_arrive", node, "-", "-", 0);

        let diff_before = self.token.diffusion_counter;
        let out = self.nodes[node].on_token_arrival(
            &mut self.token,
            &self.cfg.topology,
            &self.cfg.method,
            self.now,
        )?;
        if self.token.diffusion_counter > diff_before {
            self.diffusions.push(DiffusionStat {
                diff_id: self.token.diffusion_counter,
                initiator: node,
                launched_at: self.now,
                tree_size: self.token.word.covered_count(),
                down_sent: 0,
                feedback_sent: 0,
                final_sent: 0,
            });
        }
        self.process_outgoing(node, out);
        self.after_eset_change(node);
        self.maybe_start_task(node);

        // Next hop: uniform over live neighbors. With none left the token
        // parks; crashed nodes never come back, so waiting cannot help.
        let live: Vec<NodeId> = self.cfg.topology.neighbors(node)?
            .iter()
            .copied()
            .filter(|&v| self.alive[v])
            .collect();
        if let Some(next) = uniform_pick(&live, &mut self.walk_rng) {
            self.token_dest = Some(next);
            self.schedule(self.now + self.cfg.hop_cost, EventKind::TokenArrive(next));
        }
        Ok(())
    }

    fn handle_deliver(&mut self, src: NodeId, dst: NodeId, msg: Message) -> Result<()> {
        if !self.alive[dst] {
            self.msgs.dropped += 1;
            self.trace_line("dropped", src, dst, "-", 0);
            return Ok(());
        }
        self.msgs.delivered += 1;
        let out = match msg {
            Message::Down(m) => {
                let kind = match m.phase {
                    Phase::Down => "down",
                    Phase::FinalDown => "final_down",
                };
                self.trace_line(kind, src, dst, m.diff_id, m.eset.len());
                self.nodes[dst].on_down_msg(src, m, self.token.id, &self.cfg.method, self.now)?
            }
            Message::Feedback(m) => {
                self.trace_line("feedback", src, dst, m.diff_id, m.eset.len());
                self.nodes[dst].on_feedback_msg(src, m, self.token.id)?
            }
        };
        self.process_outgoing(dst, out);
        self.after_eset_change(dst);
        self.maybe_start_task(dst);
        Ok(())
    }

    fn handle_task_done(&mut self, node: NodeId, task: TaskId) -> Result<()> {
        if !self.alive[node] {
            self.trace_line("task_lost", node, task, "-", 0);
            return Ok(());
        }
        debug_assert_eq!(self.nodes[node].computing, Some(task));
        self.nodes[node].computing = None;
        self.trace_line("task_done", node, task, "-", 0);
        self.completions[task] += 1;
        if self.computed_once[task] {
            self.replicated += 1;
        } else {
            self.computed_once[task] = true;
            self.computed_once_count += 1;
            if self.computed_once_count == self.task_count {
                self.t_distributed = Some(self.now);
            }
        }
        // The local entry may already be computed through an earlier merge;
        // nodes never abort, so the finished work only counts as waste.
        if self.nodes[node].eset.get(task).map(|t| t.state) != Some(TaskState::Computed) {
            self.nodes[node].eset.complete_task(task, node, self.now)?;
        }
        self.after_eset_change(node);
        self.maybe_start_task(node);
        Ok(())
    }

    fn handle_timeout(&mut self, node: NodeId, token_id: TokenId, diff_id: DiffusionId) -> Result<()> {
        if !self.alive[node] {
            return Ok(());
        }
        if !self.nodes[node].has_record(token_id, diff_id) {
            return Ok(()); // all sons answered in time
        }
        self.trace_line("timeout_fire", node, "-", diff_id, 0);
        *self.timeout_closures.entry((node, diff_id)).or_insert(0) += 1;
        let out = self.nodes[node].on_feedback_timeout(token_id, diff_id)?;
        self.process_outgoing(node, out);
        self.after_eset_change(node);
        self.maybe_start_task(node);
        Ok(())
    }

    fn handle_crash(&mut self, node: NodeId) {
        if !self.alive[node] {
            return;
        }
        // Never crash the holder (or the hop in flight): defer to the next
        // hop departure.
        if self.holder == Some(node) && self.token_dest.is_none() || self.token_dest == Some(node) {
            self.schedule(self.now + self.cfg.hop_cost, EventKind::Crash(node));
            return;
        }
        self.trace_line("crash", node, "-", "-", 0);
        self.alive[node] = false;
        self.live_count -= 1;
        if self.known_all[node] {
            self.known_all_count -= 1;
        }
    }

    fn finish(mut self, t_sequential: f64) -> RunResult {
        self.msgs.invalid = self.nodes.iter().map(|n| n.invalid_msgs).sum();
        let trace_hash = format!("{:x}", self.hasher.finalize());
        RunResult {
            n: self.cfg.topology.n(),
            task_count: self.task_count,
            t_sequential,
            t_distributed: self.t_distributed,
            t_propagate: self.t_propagate,
            completed: self.t_distributed.is_some(),
            msgs: self.msgs,
            completions: self.completions,
            replicated: self.replicated,
            divergence: self.nodes.iter().map(|n| n.eset.divergence()).sum(),
            diffusions: self.diffusions,
            event_count: self.event_count,
            timeout_closures_total: self.timeout_closures.values().sum(),
            timeout_closures_max: self.timeout_closures.values().copied().max().unwrap_or(0),
            end_time: self.now,
            trace_hash,
            trace: self.trace,
            final_sets: self
                .cfg
                .capture_final_sets
                .then(|| self.nodes.into_iter().map(|n| n.eset).collect()),
        }
    }
}
