use super::*;
use proptest::prelude::*;

fn node(id: NodeId, class: NodeClass) -> NodeSpec {
    NodeSpec::new(id, format!("n{id}"), class, Region::UsWest2c)
}

fn data(bytes: u64) -> Msg {
    Msg::Data { seq: 0, bytes }
}

/// Runs network events until `until`, collecting `(time, node, msg_id)` for
/// every completed delivery.
fn pump(
    net: &mut Network,
    s: &mut Scheduler<NetEvent>,
    until: VirtualTime,
) -> Vec<(VirtualTime, NodeId, u64)> {
    let mut out = vec![];
    while let Some(ev) = s.pop_until(until) {
        if let Some(d) = net.handle(s, ev.target, ev.payload) {
            out.push((s.now(), d.node, d.msg.msg_id));
            net.resume(s, d.node);
        }
    }
    s.advance_to(until);
    out
}

fn conserved(net: &Network) {
    for ch in net.channels() {
        let buffered = ch.kernel_buf_used + ch.held_bytes() + ch.in_flight_bytes();
        assert_eq!(
            ch.stats.enqueued_bytes,
            ch.stats.delivered_bytes + buffered + ch.stats.discarded_bytes,
            "channel {}->{}",
            ch.src,
            ch.dst
        );
        assert!(ch.kernel_buf_used <= ch.kernel_buf_capacity);
        assert!(!ch.sender_blocked || ch.discipline == Discipline::Blocking);
    }
}

#[test]
fn empty_buffer_accepts() {
    let mut net = Network::new(
        vec![node(0, NodeClass::Small), node(1, NodeClass::Small)],
        &RngStreams::new(1),
    );
    let mut s: Scheduler<NetEvent> = Scheduler::new();
    let r = net.send(&mut s, 0, 1, data(4096)).unwrap();
    assert_eq!(r, SendOutcome::Accepted);
    assert_eq!(net.channel(0, 1).unwrap().kernel_buf_used, 4096 + HEADER_BYTES);
}

/// Sends enough 100 KB messages at t=0 to fill the kernel buffer.
fn fill(net: &mut Network, s: &mut Scheduler<NetEvent>) -> usize {
    let per = 102_400 + HEADER_BYTES;
    let n = (KERNEL_BUFFER_BYTES / per) as usize;
    for _ in 0..n {
        assert_eq!(
            net.send(s, 0, 1, data(102_400)).unwrap(),
            SendOutcome::Accepted
        );
    }
    n
}

#[test]
fn appbuf_absorbs_overflow_without_loss() {
    let mut net = Network::new(
        vec![node(0, NodeClass::Small), node(1, NodeClass::Small)],
        &RngStreams::new(1),
    );
    let mut s: Scheduler<NetEvent> = Scheduler::new();
    fill(&mut net, &mut s);
    for _ in 0..100 {
        assert_eq!(
            net.send(&mut s, 0, 1, data(102_400)).unwrap(),
            SendOutcome::AppBuffered
        );
    }
    let ch = net.channel(0, 1).unwrap();
    assert_eq!(ch.app_buf_used, 100 * (102_400 + HEADER_BYTES));
    conserved(&net);
    let total = pump(&mut net, &mut s, VirtualTime::from_secs(60));
    assert_eq!(total.len(), 163 + 100);
    assert_eq!(net.channel(0, 1).unwrap().app_buf_used, 0);
    conserved(&net);
}

#[test]
fn blocking_sender_stalls_until_space_frees() {
    let mut net = Network::new(
        vec![
            node(0, NodeClass::Small),
            node(1, NodeClass::Small),
            node(2, NodeClass::Small),
        ],
        &RngStreams::new(1),
    );
    net.set_node_discipline(0, Discipline::Blocking);
    let mut s: Scheduler<NetEvent> = Scheduler::new();
    fill(&mut net, &mut s);
    assert_eq!(
        net.send(&mut s, 0, 1, data(102_400)).unwrap(),
        SendOutcome::SenderBlocked
    );
    assert!(net.is_blocked(0));
    assert!(net.channel(0, 1).unwrap().sender_blocked);
    // Work arriving at the blocked node is not processed while blocked.
    net.send(&mut s, 2, 0, data(10)).unwrap();
    let got = pump(&mut net, &mut s, VirtualTime::from_millis(5));
    assert!(got.iter().all(|(_, n, _)| *n != 0));
    assert_eq!(net.rx_backlog(0), 1);
    // Once the buffer drains, the node resumes.
    let got = pump(&mut net, &mut s, VirtualTime::from_secs(10));
    assert!(!net.is_blocked(0));
    assert!(got.iter().any(|(_, n, _)| *n == 0));
    assert!(net.take_notices().contains(&Notice::Unblocked(0)));
    conserved(&net);
}

#[test]
fn origination_stall_keeps_peer_traffic_flowing() {
    let mut net = Network::new(
        vec![
            NodeSpec {
                cpu_factor: 0.01,
                ..node(0, NodeClass::Large)
            },
            node(1, NodeClass::Small),
            node(2, NodeClass::Small),
        ],
        &RngStreams::new(1),
    );
    net.set_node_discipline(0, Discipline::Blocking);
    net.set_stall_policy(0, StallPolicy::Origination);
    let mut s: Scheduler<NetEvent> = Scheduler::new();
    fill(&mut net, &mut s);
    net.send(&mut s, 0, 1, data(102_400)).unwrap();
    assert!(net.is_blocked(0));
    let req = Msg::Request(std::rc::Rc::new(crate::message::Batch {
        id: 0,
        origin: 2,
        requests: vec![],
    }));
    net.send(&mut s, 2, 0, req).unwrap();
    net.send(&mut s, 2, 0, data(10)).unwrap();
    let got = pump(&mut net, &mut s, VirtualTime::from_millis(5));
    let at0: Vec<_> = got.iter().filter(|(_, n, _)| *n == 0).collect();
    assert!(net.is_blocked(0), "{at0:?}");
    assert_eq!(at0.len(), 1, "only the peer message is handled");
    assert_eq!(net.rx_backlog(0), 1);
}

#[test]
fn retry_channel_charges_cpu_for_failed_attempts() {
    let mut net = Network::new(
        vec![node(0, NodeClass::Small), node(1, NodeClass::Micro)],
        &RngStreams::new(1),
    );
    net.set_node_discipline(0, Discipline::NonblockRetry);
    let mut s: Scheduler<NetEvent> = Scheduler::new();
    fill(&mut net, &mut s);
    assert_eq!(
        net.send(&mut s, 0, 1, data(102_400)).unwrap(),
        SendOutcome::WouldBlock
    );
    let first = pump(&mut net, &mut s, VirtualTime::from_secs(1));
    assert!(net.retry_tax_in_window(0, 0) > 0.0);
    assert!(net.channel(0, 1).unwrap().stats.failed_retries > 0);
    let rest = pump(&mut net, &mut s, VirtualTime::from_secs(30));
    assert_eq!(first.len() + rest.len(), 164);
    conserved(&net);
}

#[test]
fn drain_timing_matches_serialisation_plus_latency() {
    let mut net = Network::new(
        vec![node(0, NodeClass::Small), node(1, NodeClass::Client)],
        &RngStreams::new(1),
    );
    net.set_link(LinkSpec {
        src: 0,
        dst: 1,
        one_way_latency: VirtualTime::from_micros(750),
        bandwidth: 100e6 / 8.0,
    });
    let mut s: Scheduler<NetEvent> = Scheduler::new();
    net.send(&mut s, 0, 1, data(4096 - HEADER_BYTES)).unwrap();
    let got = pump(&mut net, &mut s, VirtualTime::from_secs(1));
    // 4096 bytes at 100 Mb/s is 327.68 us; plus 750 us propagation.
    assert_eq!(got, vec![(VirtualTime::from_nanos(1_077_680), 1, 0)]);
}

#[test]
fn ideal_link_arrives_at_departure() {
    let mut a = node(0, NodeClass::Client);
    a.bandwidth = f64::INFINITY;
    let mut net = Network::new(vec![a, node(1, NodeClass::Client)], &RngStreams::new(1));
    net.set_link(LinkSpec {
        src: 0,
        dst: 1,
        one_way_latency: VirtualTime::ZERO,
        bandwidth: f64::INFINITY,
    });
    let mut s: Scheduler<NetEvent> = Scheduler::new();
    s.advance_to(VirtualTime::from_millis(3));
    net.send(&mut s, 0, 1, data(4096)).unwrap();
    let got = pump(&mut net, &mut s, VirtualTime::from_secs(1));
    assert_eq!(got[0].0, VirtualTime::from_millis(3));
}

#[test]
fn channel_is_fifo() {
    let mut net = Network::new(
        vec![node(0, NodeClass::Small), node(1, NodeClass::Small)],
        &RngStreams::new(3),
    );
    let mut s: Scheduler<NetEvent> = Scheduler::new();
    for k in 0..50 {
        net.send(&mut s, 0, 1, data(100 + 97 * (k % 7))).unwrap();
    }
    let got = pump(&mut net, &mut s, VirtualTime::from_secs(1));
    let ids: Vec<u64> = got.iter().map(|g| g.2).collect();
    assert_eq!(ids, (0..50).collect::<Vec<_>>());
    assert!(got.windows(2).all(|w| w[0].0 <= w[1].0));
}

#[test]
fn crash_semantics() {
    let mut net = Network::new(
        vec![
            node(0, NodeClass::Small),
            node(1, NodeClass::Small),
            node(2, NodeClass::Small),
        ],
        &RngStreams::new(1),
    );
    net.set_node_discipline(0, Discipline::Blocking);
    let mut s: Scheduler<NetEvent> = Scheduler::new();
    fill(&mut net, &mut s);
    net.send(&mut s, 0, 1, data(102_400)).unwrap();
    net.send(&mut s, 1, 2, data(5_000)).unwrap();
    assert!(net.is_blocked(0));
    net.crash(&mut s, 1).unwrap();
    assert!(!net.is_blocked(0), "blocked sender toward the dead node is released");
    assert_eq!(net.take_notices(), vec![Notice::Unblocked(0)]);
    assert_eq!(net.crash(&mut s, 1), Err(NetError::AlreadyDead(1)));
    assert_eq!(
        net.send(&mut s, 0, 1, data(1)),
        Err(NetError::DestDown { src: 0, dst: 1 })
    );
    assert_eq!(net.send(&mut s, 1, 2, data(1)), Err(NetError::SourceDown(1)));
    pump(&mut net, &mut s, VirtualTime::from_secs(5));
    assert!(net
        .buffer_occupancy(1)
        .values()
        .all(|&(k, a)| k == 0 && a == 0));
    assert!(net
        .buffer_occupancy(0)
        .values()
        .all(|&(k, a)| k == 0 && a == 0));
    conserved(&net);
}

#[test]
fn idle_node_has_empty_buffers() {
    let net = Network::new(vec![node(0, NodeClass::Small)], &RngStreams::new(1));
    assert!(net.buffer_occupancy(0).is_empty());
    assert_eq!(net.busy_in_window(0, 0), 0.0);
}

/// Open-loop overload into a buffered channel: the application buffer grows
/// by the difference between offered and drained bytes.
#[test]
fn appbuf_growth_matches_rate_integral() {
    let mut net = Network::new(
        vec![node(0, NodeClass::Client), node(1, NodeClass::Client)],
        &RngStreams::new(1),
    );
    let link_bw = 1e6;
    net.set_link(LinkSpec {
        src: 0,
        dst: 1,
        one_way_latency: VirtualTime::from_micros(500),
        bandwidth: link_bw,
    });
    let mut s: Scheduler<NetEvent> = Scheduler::new();
    let size = 10_000u64;
    let msg = size - HEADER_BYTES;
    let offered = 3e6;
    let interval = VirtualTime::from_secs_f64(size as f64 / offered);
    let horizon = 20.0;
    let mut t = VirtualTime::ZERO;
    while t.as_secs_f64() < horizon {
        pump(&mut net, &mut s, t);
        net.send(&mut s, 0, 1, data(msg)).unwrap();
        t += interval;
    }
    pump(&mut net, &mut s, VirtualTime::from_secs_f64(horizon));
    let ch = net.channel(0, 1).unwrap();
    let queued = (ch.kernel_buf_used + ch.app_buf_used) as f64;
    let oracle = (offered - link_bw) * horizon;
    assert!(
        (queued - oracle).abs() <= size as f64,
        "queued {queued} vs oracle {oracle}"
    );
    conserved(&net);
}

#[test]
fn cpu_accounting_splits_windows() {
    let mut w = vec![];
    account(&mut w, VirtualTime::from_millis(900), VirtualTime::from_millis(1200));
    assert_eq!(w.len(), 2);
    assert!((w[0] - 0.1).abs() < 1e-12 && (w[1] - 0.2).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn bytes_are_conserved(
        ops in proptest::collection::vec((0usize..3, 0usize..3, 1u64..100_000, 0u64..50), 1..200),
        disc in 0usize..3,
        crash_at in proptest::option::of((0usize..3, 0u64..2_000)),
    ) {
        let mut net = Network::new(
            vec![node(0, NodeClass::Small), node(1, NodeClass::Micro), node(2, NodeClass::Large)],
            &RngStreams::new(9),
        );
        let d = [Discipline::Blocking, Discipline::NonblockRetry, Discipline::NonblockAppbuf][disc];
        for n in 0..3 {
            net.set_node_discipline(n, d);
        }
        let mut s: Scheduler<NetEvent> = Scheduler::new();
        let mut t = VirtualTime::ZERO;
        let mut crashed = false;
        for (src, dst, bytes, gap_ms) in ops {
            t += VirtualTime::from_millis(gap_ms);
            pump(&mut net, &mut s, t);
            if let Some((victim, at)) = crash_at {
                if !crashed && t >= VirtualTime::from_millis(at) {
                    net.crash(&mut s, victim).unwrap();
                    crashed = true;
                }
            }
            if src != dst {
                let _ = net.send(&mut s, src, dst, data(bytes));
            }
            conserved(&net);
        }
        pump(&mut net, &mut s, t + VirtualTime::from_secs(600));
        conserved(&net);
        for ch in net.channels() {
            prop_assert_eq!(ch.kernel_buf_used + ch.held_bytes() + ch.in_flight_bytes(), 0);
        }
    }
}
