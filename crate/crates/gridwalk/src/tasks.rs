//! Task model and per-node local task-state sets.
//!
//! States form the total order uncomputed < in-progress < computed; merges
//! take the per-task maximum, so local views only ever move up the lattice.
//! Task ids are dense within a run, so sets are stored as indexable slots;
//! this keeps the merge a linear scan, which matters because every diffusion
//! message delivery performs one.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;

use crate::error::{Result, SimError};
use crate::graph::NodeId;

pub type TaskId = usize;

/// The merge lattice: `Uncomputed < InProgress < Computed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TaskState {
    Uncomputed,
    InProgress,
    Computed,
}

impl TaskState {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskState::Uncomputed => "uncomputed",
            TaskState::InProgress => "in_progress",
            TaskState::Computed => "computed",
        }
    }
}

/// Present iff the task is `Computed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskResult {
    pub node: NodeId,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: TaskId,
    pub emitter: NodeId,
    /// Computation length in time units; stands in for the task parameters.
    pub length: f64,
    pub state: TaskState,
    pub result: Option<TaskResult>,
}

/// A node-local view of task states (the set carried by nodes, the token and
/// diffusion messages alike).
#[derive(Debug, Clone, Default)]
pub struct TaskStateSet {
    slots: Vec<Option<Task>>,
    present: usize,
    uncomputed: usize,
    computed: usize,
    divergence: u64,
}

impl PartialEq for TaskStateSet {
    /// Element-wise equality; the divergence counter is bookkeeping, not state.
    fn eq(&self, other: &Self) -> bool {
        let len = self.slots.len().max(other.slots.len());
        (0..len).all(|id| self.get(id) == other.get(id))
    }
}

impl TaskStateSet {
    pub fn new() -> TaskStateSet {
        TaskStateSet::default()
    }

    /// Generates `count` fresh tasks with ids `0..count-1`, all uncomputed,
    /// lengths drawn i.i.d. log-normal(mu, sigma). Deterministic per seed.
    pub fn generate(
        count: usize,
        emitter: NodeId,
        mu: f64,
        sigma: f64,
        seed: u64,
    ) -> Result<TaskStateSet> {
        if count < 1 {
            return Err(SimError::InvalidParameter("task count must be >= 1".into()));
        }
        if sigma < 0.0 {
            return Err(SimError::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
        }
        let dist = LogNormal::new(mu, sigma)
            .map_err(|e| SimError::InvalidParameter(format!("log-normal({mu},{sigma}): {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = TaskStateSet::new();
        for id in 0..count {
            set.insert(Task {
                id,
                emitter,
                length: dist.sample(&mut rng),
                state: TaskState::Uncomputed,
                result: None,
            });
        }
        Ok(set)
    }

    pub fn insert(&mut self, task: Task) {
        if task.id >= self.slots.len() {
            self.slots.resize(task.id + 1, None);
        }
        if let Some(old) = self.slots[task.id].take() {
            self.forget_counts(&old);
        } else {
            self.present += 1;
        }
        self.track_counts(&task);
        let id = task.id;
        self.slots[id] = Some(task);
    }

    fn track_counts(&mut self, task: &Task) {
        match task.state {
            TaskState::Uncomputed => self.uncomputed += 1,
            TaskState::Computed => self.computed += 1,
            TaskState::InProgress => {}
        }
    }

    fn forget_counts(&mut self, task: &Task) {
        match task.state {
            TaskState::Uncomputed => self.uncomputed -= 1,
            TaskState::Computed => self.computed -= 1,
            TaskState::InProgress => {}
        }
    }

    pub fn get(&self, id: TaskId) -> Option<&Task> {
        self.slots.get(id).and_then(|s| s.as_ref())
    }

    pub fn len(&self) -> usize {
        self.present
    }

    pub fn is_empty(&self) -> bool {
        self.present == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Task> {
        self.slots.iter().filter_map(|s| s.as_ref())
    }

    pub fn uncomputed_count(&self) -> usize {
        self.uncomputed
    }

    pub fn computed_count(&self) -> usize {
        self.computed
    }

    /// Replicated computations observed during merges: two computed entries
    /// for one task with different results.
    pub fn divergence(&self) -> u64 {
        self.divergence
    }

    pub fn total_length(&self) -> f64 {
        self.iter().map(|t| t.length).sum()
    }

    /// Per-task maximum under the state lattice; ties keep the destination
    /// entry, so a computed result is never overwritten.
    pub fn merge(&mut self, src: &TaskStateSet) -> bool {
        // Computed is the lattice top and ties keep the destination, so a
        // saturated set can never change; skip the scan. Divergence is no
        // longer counted past this point, which is acceptable for a purely
        // diagnostic counter.
        if self.is_saturated() && src.slots.len() <= self.slots.len() {
            return false;
        }
        let mut changed = false;
        if src.slots.len() > self.slots.len() {
            self.slots.resize(src.slots.len(), None);
        }
        for task in src.iter() {
            match &mut self.slots[task.id] {
                slot @ None => {
                    *slot = Some(task.clone());
                    self.present += 1;
                    match task.state {
                        TaskState::Uncomputed => self.uncomputed += 1,
                        TaskState::Computed => self.computed += 1,
                        TaskState::InProgress => {}
                    }
                    changed = true;
                }
                Some(mine) => {
                    if mine.state < task.state {
                        match mine.state {
                            TaskState::Uncomputed => self.uncomputed -= 1,
                            TaskState::InProgress => {}
                            TaskState::Computed => unreachable!(),
                        }
                        if task.state == TaskState::Computed {
                            self.computed += 1;
                        }
                        *mine = task.clone();
                        changed = true;
                    } else if mine.state == TaskState::Computed
                        && task.state == TaskState::Computed
                        && mine.result != task.result
                    {
                        self.divergence += 1;
                    }
                }
            }
        }
        changed
    }

    /// Every slot is occupied and Computed: no merge can alter this set.
    fn is_saturated(&self) -> bool {
        self.present == self.slots.len() && self.computed == self.present
    }

    /// Dry run of [`TaskStateSet::merge`]: would any entry change state?
    pub fn merge_would_change(&self, src: &TaskStateSet) -> bool {
        if self.is_saturated() && src.slots.len() <= self.slots.len() {
            return false;
        }
        src.iter().any(|task| match self.get(task.id) {
            None => true,
            Some(mine) => mine.state < task.state,
        })
    }

    /// Picks a uniformly random uncomputed task, tags it in-progress and
    /// returns its id; `None` when nothing is left to pick.
    pub fn select_task<R: Rng>(&mut self, rng: &mut R) -> Option<TaskId> {
        if self.uncomputed == 0 {
            return None;
        }
        let pick = rng.gen_range(0..self.uncomputed);
        let id = self
            .iter()
            .filter(|t| t.state == TaskState::Uncomputed)
            .nth(pick)
            .map(|t| t.id)?;
        let task = self.slots[id].as_mut().unwrap();
        task.state = TaskState::InProgress;
        self.uncomputed -= 1;
        Some(id)
    }

    /// Reverts an in-progress entry to uncomputed so it can be selected
    /// again; used when the simulator knows its computation was lost to a
    /// crash. Entries in any other state are left alone.
    pub fn reset_to_uncomputed(&mut self, id: TaskId) -> bool {
        match self.slots.get_mut(id).and_then(|s| s.as_mut()) {
            Some(task) if task.state == TaskState::InProgress => {
                task.state = TaskState::Uncomputed;
                self.uncomputed += 1;
                true
            }
            _ => false,
        }
    }

    /// Marks a locally in-progress task computed with result `{node, now}`.
    pub fn complete_task(&mut self, id: TaskId, node: NodeId, now: f64) -> Result<()> {
        let task = self
            .slots
            .get_mut(id)
            .and_then(|s| s.as_mut())
            .ok_or_else(|| SimError::InvalidState(format!("no entry for task {id}")))?;
        if task.state != TaskState::InProgress {
            return Err(SimError::InvalidState(format!(
                "task {id} is {} and cannot be completed",
                task.state.as_str()
            )));
        }
        task.state = TaskState::Computed;
        task.result = Some(TaskResult { node, time: now });
        self.computed += 1;
        Ok(())
    }

    /// CSV dump: `id,emitter,length,state,computed_by,completed_at`, with
    /// empty trailing fields when not computed.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,emitter,length,state,computed_by,completed_at\n");
        for task in self.iter() {
            match task.result {
                Some(r) => {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        task.id, task.emitter, task.length, task.state.as_str(), r.node, r.time
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},,",
                        task.id, task.emitter, task.length, task.state.as_str()
                    );
                }
            }
        }
        out
    }
}

/// Copy-on-write merge for shared message payloads: returns the same `Arc`
/// when merging `src` would not raise any state.
pub fn merge_shared(base: &Arc<TaskStateSet>, src: &TaskStateSet) -> Arc<TaskStateSet> {
    if base.merge_would_change(src) {
        let mut merged = (**base).clone();
        merged.merge(src);
        Arc::new(merged)
    } else {
        base.clone()
    }
}
