//! Node, link, and socket-buffer model.
//!
//! Each directed channel is a pipeline:
//!
//! ```text
//! held queue ─▶ kernel buffer ─▶ egress NIC + link ─▶ latency ─▶ receiver queue ─▶ CPU
//! ```
//!
//! The held queue is where the three I/O disciplines differ. With
//! [`Discipline::NonblockAppbuf`] it is an unbounded application buffer. With
//! [`Discipline::Blocking`] a non-empty held queue marks the sender as blocked.
//! With [`Discipline::NonblockRetry`] the sender spins on the head message,
//! re-attempting it every [`RETRY_BACKOFF`] and paying CPU for each failed
//! attempt; its protocol loop is stalled until the held queue empties.
//!
//! A node's egress NIC serialises messages from all of its channels in the
//! order they entered their kernel buffers. A message only starts
//! transmission when the receiver has window space, so a slow receiver
//! backs data up into the sender's kernel buffer and from there into the
//! held queue.

mod topology;

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::message::Msg;
use crate::sim::{NodeId, RngStream, RngStreams, Scheduler, VirtualTime};

pub use topology::{
    region_rtt_ms, LinkSpec, NodeClass, NodeSpec, Region, REFERENCE_BANDWIDTH,
    REFERENCE_CPU_RATE, WAN_BANDWIDTH,
};

pub use crate::message::HEADER_BYTES;

/// Kernel send buffer per channel direction.
pub const KERNEL_BUFFER_BYTES: u64 = 16 << 20;
/// Receive window per channel (bytes in flight plus queued at the receiver).
pub const RECEIVE_WINDOW_BYTES: u64 = 16 << 20;
/// Delay between retry attempts on a non-blocking-with-retry channel.
pub const RETRY_BACKOFF: VirtualTime = VirtualTime::from_millis(1);
/// Width of the CPU and retry accounting windows.
pub const ACCOUNTING_WINDOW: VirtualTime = VirtualTime::from_secs(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Discipline {
    Blocking,
    NonblockRetry,
    NonblockAppbuf,
}

/// What a blocked node keeps doing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StallPolicy {
    /// Stop handling every inbound message until unblocked.
    #[default]
    Full,
    /// Keep handling peer messages; only defer messages that originate new
    /// work (client requests).
    Origination,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SendOutcome {
    Accepted,
    WouldBlock,
    SenderBlocked,
    AppBuffered,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetError {
    #[error("destination {dst} is down (send from {src})")]
    DestDown { src: NodeId, dst: NodeId },
    #[error("node {0} is already dead")]
    AlreadyDead(NodeId),
    #[error("source {0} is down")]
    SourceDown(NodeId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeledMessage {
    pub msg_id: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub size: u64,
    pub sent_at: VirtualTime,
    pub body: Msg,
}

impl ModeledMessage {
    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }
}

/// Per-channel byte accounting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChannelStats {
    pub enqueued_bytes: u64,
    pub delivered_bytes: u64,
    pub discarded_bytes: u64,
    pub messages_delivered: u64,
    pub failed_retries: u64,
}

/// One direction of a connection.
#[derive(Debug)]
pub struct ChannelState {
    pub src: NodeId,
    pub dst: NodeId,
    pub discipline: Discipline,
    pub link: LinkSpec,
    pub kernel_buf_capacity: u64,
    /// Bytes in the kernel buffer, including the message being transmitted.
    pub kernel_buf_used: u64,
    /// Bytes in the application buffer (non-blocking buffered channels only).
    pub app_buf_used: u64,
    /// True while the sender's loop is stalled on this channel: a blocking
    /// channel holding unwritten messages, or a retry channel being spun on.
    pub sender_blocked: bool,
    pub stats: ChannelStats,
    held: VecDeque<ModeledMessage>,
    held_bytes: u64,
    kernel: VecDeque<(u64, ModeledMessage)>,
    transmitting: bool,
    in_flight: VecDeque<ModeledMessage>,
    in_flight_bytes: u64,
    /// In flight plus queued at the receiver, bounded by the receive window.
    rx_used: u64,
    unwritable: bool,
    retry_armed: bool,
}

impl ChannelState {
    fn new(link: LinkSpec, discipline: Discipline) -> Self {
        ChannelState {
            src: link.src,
            dst: link.dst,
            discipline,
            link,
            kernel_buf_capacity: KERNEL_BUFFER_BYTES,
            kernel_buf_used: 0,
            app_buf_used: 0,
            sender_blocked: false,
            stats: ChannelStats::default(),
            held: VecDeque::new(),
            held_bytes: 0,
            kernel: VecDeque::new(),
            transmitting: false,
            in_flight: VecDeque::new(),
            in_flight_bytes: 0,
            rx_used: 0,
            unwritable: false,
            retry_armed: false,
        }
    }

    /// Bytes queued above the kernel buffer, whatever the discipline.
    pub fn held_bytes(&self) -> u64 {
        self.held_bytes
    }

    pub fn held_messages(&self) -> usize {
        self.held.len()
    }

    /// Bytes sent but not yet arrived.
    pub fn in_flight_bytes(&self) -> u64 {
        self.in_flight_bytes
    }

    fn fits(&self, size: u64) -> bool {
        self.kernel_buf_used == 0 || self.kernel_buf_used + size <= self.kernel_buf_capacity
    }

    fn set_held(&mut self, bytes: u64) {
        self.held_bytes = bytes;
        if self.discipline == Discipline::NonblockAppbuf {
            self.app_buf_used = bytes;
        }
    }
}

/// Network-layer events. Architectures never see these directly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NetEvent {
    NicReady,
    TxDone(u32),
    Arrive(u32),
    CpuDone,
    RetryTick(u32),
}

/// Side effects the caller must react to after a network operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Notice {
    /// The node's last blocked channel drained; it may resume originating work.
    Unblocked(NodeId),
}

/// A message whose receive-side processing just completed.
#[derive(Debug)]
pub struct Delivery {
    pub node: NodeId,
    pub msg: ModeledMessage,
}

struct NodeRt {
    spec: NodeSpec,
    stall: StallPolicy,
    default_discipline: Discipline,
    out: Vec<u32>,
    rx: VecDeque<(u32, ModeledMessage)>,
    in_service: Option<(u32, ModeledMessage)>,
    cpu_free_at: VirtualTime,
    nic_free_at: VirtualTime,
    nic_wakeup: bool,
    blocked_channels: usize,
    jitter: RngStream,
    busy: Vec<f64>,
    retry_tax: Vec<f64>,
}

/// All nodes and channels of one simulation run.
pub struct Network {
    nodes: Vec<NodeRt>,
    chans: Vec<ChannelState>,
    index: Vec<u32>,
    link_overrides: BTreeMap<(NodeId, NodeId), LinkSpec>,
    discipline_overrides: BTreeMap<(NodeId, NodeId), Discipline>,
    next_msg_id: u64,
    next_enq: u64,
    jitter_amplitude: f64,
    notices: Vec<Notice>,
}

const NO_CHAN: u32 = u32::MAX;

impl Network {
    /// `specs[i].id` must equal `i`.
    pub fn new(specs: Vec<NodeSpec>, streams: &RngStreams) -> Self {
        let n = specs.len();
        let nodes = specs
            .into_iter()
            .enumerate()
            .map(|(i, spec)| {
                assert_eq!(spec.id, i, "node ids must be dense and ordered");
                NodeRt {
                    jitter: streams.stream(&format!("cpu/{}", spec.name)),
                    spec,
                    stall: StallPolicy::Full,
                    default_discipline: Discipline::NonblockAppbuf,
                    out: Vec::new(),
                    rx: VecDeque::new(),
                    in_service: None,
                    cpu_free_at: VirtualTime::ZERO,
                    nic_free_at: VirtualTime::ZERO,
                    nic_wakeup: false,
                    blocked_channels: 0,
                    busy: Vec::new(),
                    retry_tax: Vec::new(),
                }
            })
            .collect();
        Network {
            nodes,
            chans: Vec::new(),
            index: vec![NO_CHAN; n * n],
            link_overrides: BTreeMap::new(),
            discipline_overrides: BTreeMap::new(),
            next_msg_id: 0,
            next_enq: 0,
            jitter_amplitude: 0.1,
            notices: Vec::new(),
        }
    }

    /// Relative CPU jitter amplitude; each handled message costs
    /// `cost × (1 ± amplitude)`.
    pub fn set_jitter(&mut self, amplitude: f64) {
        self.jitter_amplitude = amplitude;
    }

    pub fn set_link(&mut self, link: LinkSpec) {
        self.link_overrides.insert((link.src, link.dst), link);
        let c = self.index[link.src * self.nodes.len() + link.dst];
        if c != NO_CHAN {
            self.chans[c as usize].link = link;
        }
    }

    /// Discipline for every outgoing channel of `node` without an explicit
    /// per-channel setting.
    pub fn set_node_discipline(&mut self, node: NodeId, d: Discipline) {
        self.nodes[node].default_discipline = d;
    }

    pub fn set_discipline(&mut self, src: NodeId, dst: NodeId, d: Discipline) {
        self.discipline_overrides.insert((src, dst), d);
    }

    pub fn set_stall_policy(&mut self, node: NodeId, p: StallPolicy) {
        self.nodes[node].stall = p;
    }

    pub fn set_cpu_factor(&mut self, node: NodeId, factor: f64) {
        self.nodes[node].spec.cpu_factor = factor;
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn spec(&self, node: NodeId) -> &NodeSpec {
        &self.nodes[node].spec
    }

    pub fn is_alive(&self, node: NodeId) -> bool {
        self.nodes[node].spec.alive
    }

    pub fn is_blocked(&self, node: NodeId) -> bool {
        self.nodes[node].blocked_channels > 0
    }

    pub fn link(&self, src: NodeId, dst: NodeId) -> LinkSpec {
        self.link_overrides
            .get(&(src, dst))
            .copied()
            .unwrap_or_else(|| LinkSpec::between(&self.nodes[src].spec, &self.nodes[dst].spec))
    }

    pub fn channel(&self, src: NodeId, dst: NodeId) -> Option<&ChannelState> {
        let c = self.index[src * self.nodes.len() + dst];
        (c != NO_CHAN).then(|| &self.chans[c as usize])
    }

    pub fn channels(&self) -> impl Iterator<Item = &ChannelState> {
        self.chans.iter()
    }

    /// Number of messages waiting for (or in) CPU service at `node`.
    pub fn rx_backlog(&self, node: NodeId) -> usize {
        let n = &self.nodes[node];
        n.rx.len() + usize::from(n.in_service.is_some())
    }

    /// Per outgoing peer: `(kernel bytes, bytes held above the kernel)`.
    pub fn buffer_occupancy(&self, node: NodeId) -> BTreeMap<NodeId, (u64, u64)> {
        self.nodes[node]
            .out
            .iter()
            .map(|&c| {
                let ch = &self.chans[c as usize];
                (ch.dst, (ch.kernel_buf_used, ch.held_bytes))
            })
            .collect()
    }

    /// Total bytes a node has queued for transmission (kernel plus held).
    pub fn outbound_backlog(&self, node: NodeId) -> u64 {
        self.nodes[node]
            .out
            .iter()
            .map(|&c| {
                let ch = &self.chans[c as usize];
                ch.kernel_buf_used + ch.held_bytes
            })
            .sum()
    }

    /// CPU-busy seconds of `node` in accounting window `k`.
    pub fn busy_in_window(&self, node: NodeId, k: usize) -> f64 {
        self.nodes[node].busy.get(k).copied().unwrap_or(0.0)
    }

    /// CPU seconds spent on failed retries by `node` in window `k`.
    pub fn retry_tax_in_window(&self, node: NodeId, k: usize) -> f64 {
        self.nodes[node].retry_tax.get(k).copied().unwrap_or(0.0)
    }

    pub fn take_notices(&mut self) -> Vec<Notice> {
        std::mem::take(&mut self.notices)
    }

    fn chan_id(&mut self, src: NodeId, dst: NodeId) -> u32 {
        let slot = src * self.nodes.len() + dst;
        if self.index[slot] == NO_CHAN {
            let d = self
                .discipline_overrides
                .get(&(src, dst))
                .copied()
                .unwrap_or(self.nodes[src].default_discipline);
            let id = self.chans.len() as u32;
            self.chans.push(ChannelState::new(self.link(src, dst), d));
            self.index[slot] = id;
            self.nodes[src].out.push(id);
        }
        self.index[slot]
    }

    /// Queues `body` from `src` to `dst` and charges the sender the CPU cost
    /// of copying it out.
    pub fn send<E: From<NetEvent>>(
        &mut self,
        sched: &mut Scheduler<E>,
        src: NodeId,
        dst: NodeId,
        body: Msg,
    ) -> Result<SendOutcome, NetError> {
        if !self.nodes[src].spec.alive {
            return Err(NetError::SourceDown(src));
        }
        if !self.nodes[dst].spec.alive {
            return Err(NetError::DestDown { src, dst });
        }
        let now = sched.now();
        let cost = self.nodes[src].spec.send_cost(body.wire_size());
        self.charge_cpu(src, now, cost, false);

        let msg = ModeledMessage {
            msg_id: self.next_msg_id,
            src,
            dst,
            size: body.wire_size(),
            sent_at: now,
            body,
        };
        self.next_msg_id += 1;
        let c = self.chan_id(src, dst);
        let ch = &mut self.chans[c as usize];
        ch.stats.enqueued_bytes += msg.size;

        if ch.held.is_empty() && !ch.unwritable && ch.fits(msg.size) {
            self.push_kernel(c, msg);
            self.try_transmit(sched, src);
            return Ok(SendOutcome::Accepted);
        }
        let size = msg.size;
        ch.held.push_back(msg);
        ch.set_held(ch.held_bytes + size);
        Ok(match ch.discipline {
            Discipline::NonblockAppbuf => SendOutcome::AppBuffered,
            Discipline::Blocking => {
                if !ch.sender_blocked {
                    ch.sender_blocked = true;
                    self.nodes[src].blocked_channels += 1;
                }
                SendOutcome::SenderBlocked
            }
            Discipline::NonblockRetry => {
                ch.unwritable = true;
                if !ch.sender_blocked {
                    ch.sender_blocked = true;
                    self.nodes[src].blocked_channels += 1;
                }
                let ch = &mut self.chans[c as usize];
                if !ch.retry_armed {
                    ch.retry_armed = true;
                    let at = now.max(self.nodes[src].cpu_free_at) + RETRY_BACKOFF;
                    sched
                        .schedule(at, src, NetEvent::RetryTick(c).into())
                        .expect("future");
                }
                SendOutcome::WouldBlock
            }
        })
    }

    fn push_kernel(&mut self, c: u32, msg: ModeledMessage) {
        let ch = &mut self.chans[c as usize];
        ch.kernel_buf_used += msg.size;
        debug_assert!(ch.kernel_buf_used <= ch.kernel_buf_capacity.max(msg.size));
        ch.kernel.push_back((self.next_enq, msg));
        self.next_enq += 1;
    }

    /// Moves held messages into the kernel buffer while they fit. Returns the
    /// number moved.
    fn refill(&mut self, c: u32) -> usize {
        let mut moved = 0;
        loop {
            let ch = &mut self.chans[c as usize];
            let Some(head) = ch.held.front() else { break };
            if !ch.fits(head.size) {
                break;
            }
            let m = ch.held.pop_front().expect("front");
            ch.set_held(ch.held_bytes - m.size);
            self.push_kernel(c, m);
            moved += 1;
        }
        moved
    }

    fn charge_cpu(&mut self, node: NodeId, now: VirtualTime, secs: f64, retry: bool) {
        if secs <= 0.0 {
            return;
        }
        let n = &mut self.nodes[node];
        let start = now.max(n.cpu_free_at);
        let end = start + VirtualTime::from_secs_f64(secs);
        n.cpu_free_at = end;
        account(&mut n.busy, start, end);
        if retry {
            account(&mut n.retry_tax, start, end);
        }
    }

    fn pick_channel(&self, node: NodeId) -> Option<u32> {
        let mut best: Option<(u64, u32)> = None;
        for &c in &self.nodes[node].out {
            let ch = &self.chans[c as usize];
            if ch.transmitting {
                continue;
            }
            let Some((seq, m)) = ch.kernel.front() else {
                continue;
            };
            if ch.rx_used > 0 && ch.rx_used + m.size > RECEIVE_WINDOW_BYTES {
                continue;
            }
            if best.is_none_or(|(s, _)| *seq < s) {
                best = Some((*seq, c));
            }
        }
        best.map(|(_, c)| c)
    }

    fn try_transmit<E: From<NetEvent>>(&mut self, sched: &mut Scheduler<E>, node: NodeId) {
        let now = sched.now();
        loop {
            if !self.nodes[node].spec.alive {
                return;
            }
            let Some(c) = self.pick_channel(node) else {
                return;
            };
            let n = &mut self.nodes[node];
            if now < n.nic_free_at {
                if !n.nic_wakeup {
                    n.nic_wakeup = true;
                    sched
                        .schedule(n.nic_free_at, node, NetEvent::NicReady.into())
                        .expect("future");
                }
                return;
            }
            let nic_bw = n.spec.bandwidth;
            let ch = &mut self.chans[c as usize];
            let size = ch.kernel.front().expect("picked").1.size as f64;
            ch.transmitting = true;
            ch.rx_used += size as u64;
            let link_time = VirtualTime::from_secs_f64(size / ch.link.bandwidth);
            let nic_time = VirtualTime::from_secs_f64(size / nic_bw);
            self.nodes[node].nic_free_at = now + nic_time;
            sched
                .schedule(now + link_time.max(nic_time), node, NetEvent::TxDone(c).into())
                .expect("future");
        }
    }

    /// Starts CPU service of the next eligible received message, if idle.
    pub fn resume<E: From<NetEvent>>(&mut self, sched: &mut Scheduler<E>, node: NodeId) {
        let amp = self.jitter_amplitude;
        let n = &mut self.nodes[node];
        if !n.spec.alive || n.in_service.is_some() || n.rx.is_empty() {
            return;
        }
        let pos = if n.blocked_channels == 0 {
            Some(0)
        } else {
            match n.stall {
                StallPolicy::Full => None,
                StallPolicy::Origination => n.rx.iter().position(|(_, m)| !m.body.is_origination()),
            }
        };
        let Some(pos) = pos else { return };
        let (c, msg) = n.rx.remove(pos).expect("position is valid");
        let mut cost = n.spec.receive_cost(msg.size);
        if cost > 0.0 && amp > 0.0 {
            cost *= 1.0 + amp * (2.0 * n.jitter.uniform() - 1.0);
        }
        let now = sched.now();
        let start = now.max(n.cpu_free_at);
        let end = start + VirtualTime::from_secs_f64(cost);
        n.cpu_free_at = end;
        account(&mut n.busy, start, end);
        n.in_service = Some((c, msg));
        sched
            .schedule(end, node, NetEvent::CpuDone.into())
            .expect("future");
    }

    /// Advances the network for one of its own events. Returns a delivery when
    /// a message finished receive-side processing; the caller must run the
    /// protocol handler and then call [`resume`](Self::resume) for that node.
    pub fn handle<E: From<NetEvent>>(
        &mut self,
        sched: &mut Scheduler<E>,
        node: NodeId,
        ev: NetEvent,
    ) -> Option<Delivery> {
        match ev {
            NetEvent::NicReady => {
                self.nodes[node].nic_wakeup = false;
                self.try_transmit(sched, node);
                None
            }
            NetEvent::TxDone(c) => {
                self.on_tx_done(sched, c);
                None
            }
            NetEvent::Arrive(c) => {
                self.on_arrive(sched, c);
                None
            }
            NetEvent::CpuDone => {
                let n = &mut self.nodes[node];
                if !n.spec.alive {
                    return None;
                }
                let (c, msg) = n.in_service.take()?;
                let ch = &mut self.chans[c as usize];
                ch.rx_used -= msg.size;
                let src = ch.src;
                self.try_transmit(sched, src);
                Some(Delivery { node, msg })
            }
            NetEvent::RetryTick(c) => {
                self.on_retry(sched, c);
                None
            }
        }
    }

    fn on_tx_done<E: From<NetEvent>>(&mut self, sched: &mut Scheduler<E>, c: u32) {
        let ch = &mut self.chans[c as usize];
        let src = ch.src;
        ch.transmitting = false;
        let Some((_, msg)) = ch.kernel.pop_front() else {
            // Buffers were discarded by a crash while transmitting.
            return;
        };
        ch.kernel_buf_used -= msg.size;
        ch.in_flight_bytes += msg.size;
        ch.in_flight.push_back(msg);
        let latency = ch.link.one_way_latency;
        sched.schedule_in(latency, ch.dst, NetEvent::Arrive(c).into());

        match ch.discipline {
            Discipline::NonblockAppbuf => {
                self.refill(c);
            }
            Discipline::Blocking => {
                self.refill(c);
                let ch = &mut self.chans[c as usize];
                if ch.sender_blocked && ch.held.is_empty() {
                    ch.sender_blocked = false;
                    self.unblock_one(sched, src);
                }
            }
            Discipline::NonblockRetry => {
                if ch.kernel_buf_used <= ch.kernel_buf_capacity / 2 {
                    ch.unwritable = false;
                }
            }
        }
        self.try_transmit(sched, src);
    }

    fn unblock_one<E: From<NetEvent>>(&mut self, sched: &mut Scheduler<E>, node: NodeId) {
        let n = &mut self.nodes[node];
        n.blocked_channels -= 1;
        if n.blocked_channels == 0 {
            self.notices.push(Notice::Unblocked(node));
            self.resume(sched, node);
        }
    }

    fn on_arrive<E: From<NetEvent>>(&mut self, sched: &mut Scheduler<E>, c: u32) {
        let ch = &mut self.chans[c as usize];
        let Some(msg) = ch.in_flight.pop_front() else {
            return;
        };
        ch.in_flight_bytes -= msg.size;
        let dst = ch.dst;
        if !self.nodes[dst].spec.alive {
            ch.stats.discarded_bytes += msg.size;
            ch.rx_used -= msg.size;
            let src = ch.src;
            self.try_transmit(sched, src);
            return;
        }
        ch.stats.delivered_bytes += msg.size;
        ch.stats.messages_delivered += 1;
        self.nodes[dst].rx.push_back((c, msg));
        self.resume(sched, dst);
    }

    fn on_retry<E: From<NetEvent>>(&mut self, sched: &mut Scheduler<E>, c: u32) {
        let now = sched.now();
        let ch = &mut self.chans[c as usize];
        ch.retry_armed = false;
        let src = ch.src;
        if !self.nodes[src].spec.alive || ch.held.is_empty() {
            return;
        }
        if ch.unwritable && ch.kernel_buf_used <= ch.kernel_buf_capacity / 2 {
            ch.unwritable = false;
        }
        let mut moved = 0;
        if !ch.unwritable {
            moved = self.refill(c);
        }
        let call = self.nodes[src].spec.syscall_cost();
        self.charge_cpu(src, now, call * moved as f64, false);
        let ch = &mut self.chans[c as usize];
        if ch.held.is_empty() {
            if ch.sender_blocked {
                ch.sender_blocked = false;
                self.unblock_one(sched, src);
            }
        } else {
            ch.unwritable = true;
            ch.stats.failed_retries += 1;
            self.charge_cpu(src, now, call, true);
            let ch = &mut self.chans[c as usize];
            ch.retry_armed = true;
            let at = now.max(self.nodes[src].cpu_free_at) + RETRY_BACKOFF;
            sched
                .schedule(at, src, NetEvent::RetryTick(c).into())
                .expect("future");
        }
        if moved > 0 {
            self.try_transmit(sched, src);
        }
    }

    /// Fail-stop crash of `node` at the current time.
    pub fn crash<E: From<NetEvent>>(
        &mut self,
        sched: &mut Scheduler<E>,
        node: NodeId,
    ) -> Result<(), NetError> {
        if !self.nodes[node].spec.alive {
            return Err(NetError::AlreadyDead(node));
        }
        let n = &mut self.nodes[node];
        n.spec.alive = false;
        n.blocked_channels = 0;
        let rx: Vec<(u32, ModeledMessage)> = n.rx.drain(..).chain(n.in_service.take()).collect();
        for (c, m) in rx {
            self.chans[c as usize].rx_used -= m.size;
        }
        let touching: Vec<u32> = (0..self.chans.len() as u32)
            .filter(|&c| {
                let ch = &self.chans[c as usize];
                ch.src == node || ch.dst == node
            })
            .collect();
        let mut senders = Vec::new();
        for c in touching {
            let ch = &mut self.chans[c as usize];
            let mut discarded = ch.held_bytes;
            ch.held.clear();
            ch.set_held(0);
            // The message on the wire completes; everything behind it is lost.
            let keep = usize::from(ch.transmitting);
            while ch.kernel.len() > keep {
                let (_, m) = ch.kernel.pop_back().expect("len checked");
                ch.kernel_buf_used -= m.size;
                discarded += m.size;
            }
            ch.stats.discarded_bytes += discarded;
            ch.unwritable = false;
            if ch.sender_blocked {
                ch.sender_blocked = false;
                if ch.src != node {
                    senders.push(ch.src);
                }
            }
            if ch.dst == node && ch.src != node {
                senders.push(ch.src);
            }
        }
        senders.sort_unstable();
        senders.dedup();
        for s in senders {
            if self.nodes[s].spec.alive {
                // Recount: the sender may still be blocked on other channels.
                let blocked = self.nodes[s]
                    .out
                    .iter()
                    .filter(|&&c| self.chans[c as usize].sender_blocked)
                    .count();
                let was = self.nodes[s].blocked_channels;
                self.nodes[s].blocked_channels = blocked;
                if was > 0 && blocked == 0 {
                    self.notices.push(Notice::Unblocked(s));
                }
                self.resume(sched, s);
                self.try_transmit(sched, s);
            }
        }
        Ok(())
    }
}

fn account(windows: &mut Vec<f64>, start: VirtualTime, end: VirtualTime) {
    let w = ACCOUNTING_WINDOW.as_nanos();
    let (mut s, e) = (start.as_nanos(), end.as_nanos());
    while s < e {
        let k = (s / w) as usize;
        let boundary = (k as u64 + 1) * w;
        let upto = e.min(boundary);
        if windows.len() <= k {
            windows.resize(k + 1, 0.0);
        }
        windows[k] += (upto - s) as f64 / 1e9;
        s = upto;
    }
}

#[cfg(test)]
mod tests;
