//! Step-based quorum steering for a Libpaxos-style proposer.
//!
//! Each step starts with a probe window in which Phase 2A goes to every
//! acceptor and first-quorum membership is counted. The `f+1` acceptors seen
//! most often are then selected, and the rest of the step sends Phase 2A to
//! them only. A step ends after a fixed number of instances or when a selected
//! acceptor is suspected.

use std::collections::BTreeMap;

use crate::sim::{NodeId, VirtualTime};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteeringParams {
    pub probe_len: u64,
    pub steer_len: u64,
    pub suspicion_timeout: VirtualTime,
}

impl Default for SteeringParams {
    fn default() -> Self {
        SteeringParams {
            probe_len: 100,
            steer_len: 900,
            suspicion_timeout: VirtualTime::from_secs(1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepEvent {
    InstanceDone,
    Suspect(NodeId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    NewStep,
}

#[derive(Clone, Debug)]
pub struct StepState {
    pub step_no: u64,
    pub probe_len: u64,
    pub steer_len: u64,
    /// Instances started (Phase 2A issued) in this step.
    pub instances_in_step: u64,
    /// Instances completed in this step.
    pub done_in_step: u64,
    pub counters: BTreeMap<NodeId, u64>,
    pub selected: Option<Vec<NodeId>>,
    /// Number of selections made from all-zero counters.
    pub degenerate_selections: u64,
    acceptors: Vec<NodeId>,
    f: usize,
}

impl StepState {
    pub fn new(acceptors: Vec<NodeId>, f: usize, params: &SteeringParams) -> Self {
        assert_eq!(acceptors.len(), 2 * f + 1);
        let mut s = StepState {
            step_no: 0,
            probe_len: params.probe_len,
            steer_len: params.steer_len,
            instances_in_step: 0,
            done_in_step: 0,
            counters: BTreeMap::new(),
            selected: None,
            degenerate_selections: 0,
            acceptors,
            f,
        };
        s.reset();
        s
    }

    fn reset(&mut self) {
        self.instances_in_step = 0;
        self.done_in_step = 0;
        self.counters = self.acceptors.iter().map(|a| (*a, 0)).collect();
        self.selected = None;
    }

    pub fn acceptors(&self) -> &[NodeId] {
        &self.acceptors
    }

    pub fn in_probe(&self) -> bool {
        self.selected.is_none()
    }

    /// Counts one instance's first quorum. Only meaningful during the probe.
    pub fn record_first_quorum(&mut self, q: &[NodeId]) {
        assert!(self.in_probe(), "first quorum recorded during steering");
        assert_eq!(q.len(), self.f + 1);
        for a in q {
            *self.counters.get_mut(a).expect("known acceptor") += 1;
        }
    }

    /// The `f+1` acceptors with the highest counters, ties to the lower id.
    pub fn select_quorum(&mut self) -> Vec<NodeId> {
        if self.counters.values().all(|c| *c == 0) {
            self.degenerate_selections += 1;
        }
        let mut ranked: Vec<(NodeId, u64)> =
            self.counters.iter().map(|(a, c)| (*a, *c)).collect();
        ranked.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
        let mut q: Vec<NodeId> = ranked[..self.f + 1].iter().map(|(a, _)| *a).collect();
        q.sort_unstable();
        q
    }

    /// Phase 2A targets for the next instance of this step. Switches to
    /// steering once the probe window has been issued and fully completed.
    pub fn phase2a_targets(&mut self) -> Vec<NodeId> {
        if self.selected.is_none()
            && self.instances_in_step >= self.probe_len
            && self.done_in_step >= self.probe_len
        {
            let q = self.select_quorum();
            self.selected = Some(q);
        }
        self.instances_in_step += 1;
        match &self.selected {
            Some(q) => q.clone(),
            None => self.acceptors.clone(),
        }
    }

    /// True once every instance of the step has been issued; the proposer
    /// waits for completions before issuing more.
    pub fn step_exhausted(&self) -> bool {
        self.instances_in_step >= self.probe_len + self.steer_len
            || (self.selected.is_none()
                && self.instances_in_step >= self.probe_len
                && self.done_in_step < self.probe_len)
    }

    pub fn step_advance(&mut self, ev: StepEvent) -> StepOutcome {
        match ev {
            StepEvent::InstanceDone => {
                self.done_in_step += 1;
                if self.done_in_step >= self.probe_len + self.steer_len {
                    self.new_step();
                    return StepOutcome::NewStep;
                }
                StepOutcome::Continue
            }
            StepEvent::Suspect(a) => {
                if self.selected.as_ref().is_some_and(|q| q.contains(&a)) {
                    self.new_step();
                    StepOutcome::NewStep
                } else {
                    StepOutcome::Continue
                }
            }
        }
    }

    fn new_step(&mut self) {
        self.step_no += 1;
        self.reset();
    }

    /// Removes a crashed acceptor from future probes.
    pub fn forget(&mut self, a: NodeId) {
        self.acceptors.retain(|x| *x != a);
        self.counters.remove(&a);
    }
}
