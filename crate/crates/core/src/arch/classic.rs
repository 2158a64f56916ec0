//! Single-proposer Paxos with a separate acceptor tier: the Libpaxos and
//! OpenReplica wirings.
//!
//! Libpaxos: clients submit to the proposer, acceptors send Phase 2B with the
//! full value to the proposer and to every learner, the first learner answers
//! clients. All connections are non-blocking with unbounded buffering.
//! Optional quorum steering restricts Phase 2A fan-out.
//!
//! OpenReplica: client proxies submit to the leader-replica, acceptors answer
//! with value-reference 2Bs, and the leader decides, executes, and answers.
//! Leader-to-acceptor connections are non-blocking with retry.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::rc::Rc;

use super::{ArchConfig, ArchError, Variant};
use crate::message::Msg;
use crate::net::{Discipline, ModeledMessage, Network};
use crate::paxos::{
    choose_value, AcceptorLog, Ballot, Collect, DecisionCollector, Learner, Phase2Reply,
    Proposer, Value, ValueRef, PHASE1_WINDOW,
};
use crate::sim::{NodeId, VirtualTime};
use crate::steering::{SteeringParams, StepEvent, StepOutcome, StepState};
use crate::world::{Ctx, Protocol, SteeringWindow, Timer};

const TICK: VirtualTime = VirtualTime::from_millis(100);
/// Decided instances kept at acceptors behind the slowest learner.
const LOG_MARGIN: u64 = 4096;

struct Pending {
    value: ValueRef,
    targets: Vec<NodeId>,
    step: u64,
    probe: bool,
    issued: VirtualTime,
}

struct LearnerState {
    collector: DecisionCollector,
    learner: Learner,
    quorums: HashMap<u64, Vec<NodeId>>,
}

struct OpenWindow {
    start: VirtualTime,
    excluded: Vec<NodeId>,
    held_at_start: Vec<u64>,
}

pub struct Classic {
    variant: Variant,
    leader: NodeId,
    acceptors: Vec<NodeId>,
    learners: Vec<NodeId>,
    responder: NodeId,
    twob_full: bool,
    prop: Proposer,
    collector: DecisionCollector,
    next_instance: u64,
    /// Cap on undecided instances; `None` is unbounded.
    window: Option<usize>,
    pending: BTreeMap<u64, Pending>,
    queue: VecDeque<ValueRef>,
    last_2b: BTreeMap<NodeId, VirtualTime>,
    steering: Option<(StepState, SteeringParams)>,
    open_window: Option<OpenWindow>,
    windows: Vec<SteeringWindow>,
    steered: HashSet<u64>,
    logs: BTreeMap<NodeId, AcceptorLog>,
    learner_state: BTreeMap<NodeId, LearnerState>,
}

pub fn wire_libpaxos(cfg: &ArchConfig, net: &mut Network) -> Result<Classic, ArchError> {
    let leader = cfg.leader()?;
    let learners = cfg.learners();
    for (n, _) in &cfg.nodes {
        net.set_node_discipline(*n, Discipline::NonblockAppbuf);
    }
    let responder = learners[0];
    Ok(Classic::new(cfg, leader, learners, responder, true))
}

pub fn wire_openreplica(cfg: &ArchConfig, net: &mut Network) -> Result<Classic, ArchError> {
    if cfg.params.steering.is_some() {
        return Err(ArchError::BadConfig(
            "quorum steering applies to libpaxos only".into(),
        ));
    }
    let leader = cfg.leader()?;
    net.set_node_discipline(leader, Discipline::NonblockAppbuf);
    for a in cfg.acceptors() {
        net.set_discipline(leader, a, Discipline::NonblockRetry);
        net.set_node_discipline(a, Discipline::NonblockAppbuf);
    }
    net.set_cpu_factor(leader, cfg.params.openreplica_cpu_factor);
    Ok(Classic::new(cfg, leader, vec![leader], leader, false))
}

impl Classic {
    fn new(
        cfg: &ArchConfig,
        leader: NodeId,
        learners: Vec<NodeId>,
        responder: NodeId,
        twob_full: bool,
    ) -> Self {
        let acceptors = cfg.acceptors();
        let steering = match (cfg.variant, &cfg.params.steering) {
            (Variant::Libpaxos, Some(p)) => Some((StepState::new(acceptors.clone(), cfg.f, p), *p)),
            _ => None,
        };
        Classic {
            variant: cfg.variant,
            leader,
            learner_state: learners
                .iter()
                .map(|l| {
                    (
                        *l,
                        LearnerState {
                            collector: DecisionCollector::new(cfg.f),
                            learner: Learner::new(),
                            quorums: HashMap::new(),
                        },
                    )
                })
                .collect(),
            logs: acceptors.iter().map(|a| (*a, AcceptorLog::new())).collect(),
            acceptors,
            learners,
            responder,
            twob_full,
            prop: Proposer::new(leader, cfg.f),
            collector: DecisionCollector::new(cfg.f),
            next_instance: 0,
            window: (cfg.variant == Variant::OpenReplica).then_some(cfg.params.openreplica_window),
            pending: BTreeMap::new(),
            queue: VecDeque::new(),
            last_2b: BTreeMap::new(),
            steering,
            open_window: None,
            windows: Vec::new(),
            steered: HashSet::new(),
        }
    }

    fn start_phase1(&mut self, ctx: &mut Ctx, b: Ballot) {
        let from = self.pending.keys().next().copied().unwrap_or(self.next_instance);
        let m = self
            .prop
            .phase1a(b, from, from + PHASE1_WINDOW)
            .expect("ballots only increase");
        for a in self.acceptors.clone() {
            ctx.send(
                self.leader,
                a,
                Msg::Phase1A {
                    ballot: m.ballot,
                    from: m.from,
                    to: m.to,
                },
            );
        }
    }

    /// After Phase 1: re-propose every instance constrained by a promise, and
    /// re-issue pending instances at the new ballot.
    fn on_phase1_complete(&mut self, ctx: &mut Ctx) {
        let mut redo: BTreeMap<u64, ValueRef> = self
            .pending
            .iter()
            .map(|(i, p)| (*i, p.value.clone()))
            .collect();
        for i in self.prop.constrained_instances() {
            if self.collector.is_decided(i) {
                continue;
            }
            let fallback = redo.get(&i).cloned().unwrap_or_else(|| noop(ctx));
            redo.insert(i, choose_value(&self.prop.promises_for(i), fallback));
        }
        for (i, v) in redo {
            self.next_instance = self.next_instance.max(i + 1);
            let targets = self.acceptors.clone();
            self.send_2a(ctx, i, v.clone(), &targets, false);
            let step = self.step_no();
            self.pending.insert(
                i,
                Pending {
                    value: v,
                    targets,
                    step,
                    probe: false,
                    issued: ctx.now(),
                },
            );
        }
        self.pump(ctx);
    }

    fn step_no(&self) -> u64 {
        self.steering.as_ref().map_or(0, |(s, _)| s.step_no)
    }

    fn send_2a(&mut self, ctx: &mut Ctx, instance: u64, value: ValueRef, targets: &[NodeId], steered: bool) {
        self.collector.set_value(instance, value.clone());
        if let Some(ls) = self.learner_state.get_mut(&self.leader) {
            ls.collector.set_value(instance, value.clone());
        }
        for &a in targets {
            ctx.send(
                self.leader,
                a,
                Msg::Phase2A {
                    ballot: self.prop.ballot(),
                    instance,
                    value: value.clone(),
                    steered,
                },
            );
        }
    }

    /// Issues queued values while Phase 1 is done and steering allows.
    fn pump(&mut self, ctx: &mut Ctx) {
        if !self.prop.phase1_done() || !ctx.alive(self.leader) {
            return;
        }
        while let Some(v) = self.queue.front().cloned() {
            if self.window.is_some_and(|w| self.pending.len() >= w) {
                break;
            }
            let (targets, probe, steered) = match self.steering.as_mut() {
                Some((s, _)) => {
                    if s.step_exhausted() {
                        break;
                    }
                    let was_probe = s.in_probe();
                    let t = s.phase2a_targets();
                    let now_probe = s.in_probe();
                    if was_probe && !now_probe {
                        self.open_steering_window(ctx);
                    }
                    (t, now_probe, !now_probe)
                }
                None => (self.acceptors.clone(), false, false),
            };
            self.queue.pop_front();
            let i = self.next_instance;
            self.next_instance += 1;
            if self.next_instance >= self.prop.window().1 {
                let m = self.prop.extend_window(self.prop.window().1 + PHASE1_WINDOW);
                for a in self.acceptors.clone() {
                    ctx.send(
                        self.leader,
                        a,
                        Msg::Phase1A {
                            ballot: m.ballot,
                            from: m.from,
                            to: m.to,
                        },
                    );
                }
            }
            if steered {
                self.steered.insert(i);
            }
            self.send_2a(ctx, i, v.clone(), &targets, steered);
            let step = self.step_no();
            self.pending.insert(
                i,
                Pending {
                    value: v,
                    targets,
                    step,
                    probe,
                    issued: ctx.now(),
                },
            );
        }
    }

    fn held_at(ctx: &Ctx, node: NodeId) -> u64 {
        if !ctx.alive(node) {
            return 0;
        }
        ctx.net.buffer_occupancy(node).values().map(|(_, a)| a).sum()
    }

    fn open_steering_window(&mut self, ctx: &mut Ctx) {
        let Some((s, _)) = &self.steering else { return };
        let sel = s.selected.clone().unwrap_or_default();
        let excluded: Vec<NodeId> = self
            .acceptors
            .iter()
            .copied()
            .filter(|a| !sel.contains(a))
            .collect();
        let held_at_start = excluded.iter().map(|e| Self::held_at(ctx, *e)).collect();
        self.open_window = Some(OpenWindow {
            start: ctx.now(),
            excluded,
            held_at_start,
        });
    }

    fn close_steering_window(&mut self, ctx: &mut Ctx) {
        if let Some(w) = self.open_window.take() {
            let held_at_end = w.excluded.iter().map(|e| Self::held_at(ctx, *e)).collect();
            self.windows.push(SteeringWindow {
                start: w.start,
                end: ctx.now(),
                excluded: w.excluded,
                held_at_start: w.held_at_start,
                held_at_end,
            });
        }
    }

    /// New step after a suspicion: pending instances are re-sent to every
    /// acceptor they were not sent to.
    fn gap_fill(&mut self, ctx: &mut Ctx) {
        let ballot = self.prop.ballot();
        let all = self.acceptors.clone();
        for (i, p) in self.pending.iter_mut() {
            for &a in &all {
                if !p.targets.contains(&a) {
                    p.targets.push(a);
                    ctx.send(
                        self.leader,
                        a,
                        Msg::Phase2A {
                            ballot,
                            instance: *i,
                            value: p.value.clone(),
                            steered: false,
                        },
                    );
                }
            }
        }
    }

    fn on_leader_2b(&mut self, ctx: &mut Ctx, instance: u64, acc: NodeId, b: Ballot, value: Option<ValueRef>) {
        self.last_2b.insert(acc, ctx.now());
        let Collect::Decided { value, first_quorum } =
            self.collector.on_phase2b(instance, acc, b, value)
        else {
            return;
        };
        ctx.decided(self.leader, instance, value.id);
        let Some(p) = self.pending.remove(&instance) else {
            return;
        };
        let current = self.step_no();
        if let Some((s, _)) = self.steering.as_mut() {
            if p.step == current {
                if p.probe && s.in_probe() {
                    s.record_first_quorum(&first_quorum);
                }
                if s.step_advance(StepEvent::InstanceDone) == StepOutcome::NewStep {
                    self.close_steering_window(ctx);
                }
            }
        }
        self.pump(ctx);
    }

    fn on_learner_2b(&mut self, ctx: &mut Ctx, node: NodeId, instance: u64, acc: NodeId, b: Ballot, value: Option<ValueRef>) {
        let ls = self.learner_state.get_mut(&node).expect("learner");
        if let Collect::Decided { value, first_quorum } =
            ls.collector.on_phase2b(instance, acc, b, value)
        {
            if node != self.leader {
                ctx.decided(node, instance, value.id);
            }
            ls.quorums.insert(instance, first_quorum);
            ls.learner.on_decided(instance, value);
        }
        let delivered = ls.learner.deliver();
        for (i, v) in delivered {
            let ls = self.learner_state.get_mut(&node).expect("learner");
            let fq = ls.quorums.remove(&i).unwrap_or_default();
            ctx.delivered(node, v.id, v.payload_size, &fq);
            if node == ctx.reference_learner && self.steered.remove(&i) {
                ctx.metrics.on_steered_decision(&fq);
            }
            if node == self.responder {
                ctx.reply(node, v.requests.iter().copied());
            }
        }
    }

    fn on_tick(&mut self, ctx: &mut Ctx) {
        let now = ctx.now();
        if let Some((s, params)) = self.steering.as_mut() {
            if let Some(sel) = s.selected.clone() {
                let deadline = now.saturating_sub(params.suspicion_timeout);
                let suspect = sel.into_iter().find(|a| {
                    let waiting = self
                        .pending
                        .values()
                        .any(|p| p.issued <= deadline && p.targets.contains(a));
                    let last = self.last_2b.get(a).copied().unwrap_or(VirtualTime::ZERO);
                    waiting && last <= deadline
                });
                if let Some(a) = suspect {
                    if s.step_advance(StepEvent::Suspect(a)) == StepOutcome::NewStep {
                        self.close_steering_window(ctx);
                        self.gap_fill(ctx);
                        self.pump(ctx);
                    }
                }
            }
        }
        // Bounded memory: forget what every learner has delivered.
        let delivered = self
            .learner_state
            .values()
            .map(|l| l.learner.next_instance())
            .min()
            .unwrap_or(0);
        let floor = delivered.saturating_sub(LOG_MARGIN);
        for log in self.logs.values_mut() {
            log.trim_below(floor);
        }
        for ls in self.learner_state.values_mut() {
            let next = ls.learner.next_instance();
            ls.collector.prune_below(next);
        }
        let first_pending = self.pending.keys().next().copied().unwrap_or(self.next_instance);
        self.collector.prune_below(first_pending.min(floor));
        ctx.timer(self.leader, TICK, Timer::Tick);
    }
}

fn noop(ctx: &mut Ctx) -> ValueRef {
    Rc::new(Value {
        id: ctx.ids.value(),
        payload_size: 0,
        wire_bytes: 0,
        requests: vec![],
        batches: vec![],
    })
}

impl Protocol for Classic {
    fn start(&mut self, ctx: &mut Ctx) {
        for a in &self.acceptors {
            ctx.metrics.track_acceptor(*a);
        }
        self.start_phase1(ctx, Ballot::new(1, self.leader));
        ctx.timer(self.leader, TICK, Timer::Tick);
    }

    fn on_message(&mut self, ctx: &mut Ctx, node: NodeId, msg: ModeledMessage) {
        let from = msg.src;
        match msg.body {
            Msg::Request(batch) if node == self.leader => {
                let bytes = batch.bytes();
                let v = Rc::new(Value {
                    id: ctx.ids.value(),
                    payload_size: bytes,
                    wire_bytes: bytes,
                    requests: batch.requests.iter().map(|r| r.id()).collect(),
                    batches: vec![],
                });
                self.queue.push_back(v);
                self.pump(ctx);
            }
            Msg::Phase1A { ballot, from: lo, to } => {
                let Some(log) = self.logs.get_mut(&node) else { return };
                let reply = match log.on_phase1a_range(ballot, lo, to) {
                    Ok(accepted) => Msg::Phase1B {
                        ballot,
                        acceptor: node,
                        accepted,
                    },
                    Err(c_rnd) => Msg::Reject { c_rnd },
                };
                ctx.send(node, from, reply);
            }
            Msg::Phase1B {
                ballot,
                acceptor,
                accepted,
            } if node == self.leader => {
                if self.prop.on_phase1b(acceptor, ballot, accepted) {
                    self.on_phase1_complete(ctx);
                }
            }
            Msg::Reject { c_rnd } if node == self.leader => {
                if c_rnd > self.prop.ballot() {
                    let b = Ballot::above(c_rnd, self.leader);
                    self.start_phase1(ctx, b);
                }
            }
            Msg::Phase2A {
                ballot,
                instance,
                value,
                ..
            } => {
                let Some(log) = self.logs.get_mut(&node) else { return };
                match log.on_phase2a(instance, ballot, value.clone()) {
                    Phase2Reply::Accepted { ballot } => {
                        let carried = self.twob_full.then_some(value);
                        let mut dests = vec![self.leader];
                        if self.variant == Variant::Libpaxos {
                            dests.extend(self.learners.iter().copied().filter(|l| *l != self.leader));
                        }
                        for d in dests {
                            ctx.send(
                                node,
                                d,
                                Msg::Phase2B {
                                    ballot,
                                    instance,
                                    acceptor: node,
                                    value: carried.clone(),
                                },
                            );
                        }
                    }
                    Phase2Reply::Reject { c_rnd } => {
                        ctx.send(node, from, Msg::Reject { c_rnd });
                    }
                }
            }
            Msg::Phase2B {
                ballot,
                instance,
                acceptor,
                value,
            } => {
                if node == self.leader {
                    self.on_leader_2b(ctx, instance, acceptor, ballot, value.clone());
                }
                if self.learner_state.contains_key(&node) {
                    self.on_learner_2b(ctx, node, instance, acceptor, ballot, value);
                }
            }
            _ => {}
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx, node: NodeId, timer: Timer) {
        if node == self.leader && timer == Timer::Tick && ctx.alive(node) {
            self.on_tick(ctx);
        }
    }

    fn steering_windows(&self) -> Vec<SteeringWindow> {
        self.windows.clone()
    }
}
