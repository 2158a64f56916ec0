//! Network-only micro-scenarios used to check the flow-control model against
//! closed-form oracles.

use crate::message::{Msg, HEADER_BYTES};
use crate::net::{Discipline, LinkSpec, NetEvent, Network, NodeSpec, Notice, StallPolicy};
use crate::sim::{NodeId, RngStreams, Scheduler, VirtualTime};

#[derive(Clone, Debug, PartialEq)]
pub struct ChainReport {
    /// Messages delivered at the sink after warm-up.
    pub delivered: u64,
    pub msgs_per_s: f64,
    /// Wire bytes per second at the sink.
    pub bytes_per_s: f64,
}

fn data(wire: u64, seq: u64) -> Msg {
    Msg::Data {
        seq,
        bytes: wire - HEADER_BYTES,
    }
}

/// Source → relay → sink over blocking channels. The source keeps its channel
/// full; the relay forwards each message it receives. Measures the sink rate
/// over `[warmup, horizon)`.
pub fn blocking_chain(
    specs: [NodeSpec; 3],
    wire_bytes: u64,
    warmup: VirtualTime,
    horizon: VirtualTime,
    seed: u64,
) -> ChainReport {
    assert!(wire_bytes > HEADER_BYTES);
    let mut net = Network::new(specs.to_vec(), &RngStreams::new(seed));
    for n in 0..3 {
        net.set_node_discipline(n, Discipline::Blocking);
        net.set_stall_policy(n, StallPolicy::Full);
    }
    let mut s: Scheduler<NetEvent> = Scheduler::new();
    let mut seq = 0;
    let mut fill = |net: &mut Network, s: &mut Scheduler<NetEvent>| {
        while !net.is_blocked(0) {
            seq += 1;
            net.send(s, 0, 1, data(wire_bytes, seq)).expect("alive");
        }
    };
    fill(&mut net, &mut s);
    let mut delivered = 0;
    while let Some(ev) = s.pop_until(horizon) {
        if let Some(d) = net.handle(&mut s, ev.target, ev.payload) {
            match d.node {
                1 => {
                    net.send(&mut s, 1, 2, d.msg.body).expect("alive");
                }
                2 if s.now() >= warmup => delivered += 1,
                _ => {}
            }
            net.resume(&mut s, d.node);
        }
        for n in net.take_notices() {
            let Notice::Unblocked(node) = n;
            if node == 0 {
                fill(&mut net, &mut s);
            }
            net.resume(&mut s, node);
        }
    }
    let secs = (horizon - warmup).as_secs_f64();
    ChainReport {
        delivered,
        msgs_per_s: delivered as f64 / secs,
        bytes_per_s: delivered as f64 * wire_bytes as f64 / secs,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OverloadReport {
    /// `(t, kernel bytes, app-buffer bytes)` sampled once per `sample_every`.
    pub samples: Vec<(VirtualTime, u64, u64)>,
    pub wire_bytes: u64,
    pub offered_bytes_per_s: f64,
}

/// A sender offering `offered_bytes_per_s` to a receiver over a link of
/// `link_bytes_per_s` with app-level buffering. The first message is sent one
/// inter-send interval after time zero.
pub fn appbuf_overload(
    sender: NodeSpec,
    receiver: NodeSpec,
    link_bytes_per_s: f64,
    wire_bytes: u64,
    offered_bytes_per_s: f64,
    horizon: VirtualTime,
    sample_every: VirtualTime,
) -> OverloadReport {
    let (a, b): (NodeId, NodeId) = (sender.id, receiver.id);
    let mut net = Network::new(vec![sender, receiver], &RngStreams::new(0));
    net.set_link(LinkSpec {
        src: a,
        dst: b,
        one_way_latency: VirtualTime::from_micros(500),
        bandwidth: link_bytes_per_s,
    });
    net.set_discipline(a, b, Discipline::NonblockAppbuf);
    let mut s: Scheduler<NetEvent> = Scheduler::new();
    let interval = VirtualTime::from_secs_f64(wire_bytes as f64 / offered_bytes_per_s);
    let mut next_send = interval;
    let mut next_sample = sample_every;
    let mut samples = vec![];
    let mut seq = 0;
    loop {
        let until = next_send.min(next_sample).min(horizon);
        while let Some(ev) = s.pop_until(until) {
            if let Some(d) = net.handle(&mut s, ev.target, ev.payload) {
                net.resume(&mut s, d.node);
            }
        }
        s.advance_to(until);
        if until == horizon {
            break;
        }
        if until == next_send {
            seq += 1;
            net.send(&mut s, a, b, data(wire_bytes, seq)).expect("alive");
            next_send += interval;
        }
        if until == next_sample {
            let ch = net.channel(a, b).expect("used channel");
            samples.push((until, ch.kernel_buf_used, ch.app_buf_used));
            next_sample += sample_every;
        }
    }
    OverloadReport {
        samples,
        wire_bytes,
        offered_bytes_per_s,
    }
}
