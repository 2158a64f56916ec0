//! Executes scenarios and writes their CSV bundles.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::arch::{self, ArchError};
use crate::audit::{Audit, Violation};
use crate::message::Msg;
use crate::metrics::{self, downtime, latency_stats, utilization, MetricSeries, MIN_GAP, WINDOW};
use crate::net::{LinkSpec, Network, NodeClass, NodeSpec, Notice};
use crate::scenario::{FailureEntry, Scenario, ScenarioError};
use crate::sim::{NodeId, RngStreams, Scheduler, VirtualTime};
use crate::workload::{ClientSpec, Clients, LoadCap, WorkloadError};
use crate::world::{Ctx, Event, Ids, SteeringWindow, Timer};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub peak_mbps: f64,
    pub mean_mbps: f64,
    pub p99_latency_ms: f64,
    pub max_gap_s: f64,
    pub decisions_total: u64,
}

/// Everything a run produced.
#[derive(Debug)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub metrics: MetricSeries,
    pub summary: Summary,
    pub violations: Vec<Violation>,
    pub steering_windows: Vec<SteeringWindow>,
    /// Server names by node id.
    pub names: Vec<String>,
    pub leader: NodeId,
    /// `[warmup, duration - cooldown)`.
    pub measured: (VirtualTime, VirtualTime),
    pub replies: u64,
    pub admitted_bytes: u64,
    pub events: u64,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.names.iter().position(|n| n == name)
    }

    /// Measured windows as `(k, mbps)`.
    pub fn measured_throughput(&self) -> Vec<(usize, f64)> {
        let (a, b) = self.measured_windows();
        let tp = self.metrics.throughput_mbps();
        (a..b).map(|k| (k, tp[k])).collect()
    }

    pub fn measured_windows(&self) -> (usize, usize) {
        let w = WINDOW.as_nanos();
        let a = self.measured.0.as_nanos().div_ceil(w) as usize;
        let b = (self.measured.1.as_nanos() / w) as usize;
        (a, b.min(self.metrics.windows()).max(a))
    }

    /// Mean throughput over windows `[from_s, to_s)`.
    pub fn mean_mbps(&self, from_s: usize, to_s: usize) -> f64 {
        let tp = self.metrics.throughput_mbps();
        let to = to_s.min(tp.len());
        if to <= from_s {
            return 0.0;
        }
        tp[from_s..to].iter().sum::<f64>() / (to - from_s) as f64
    }

    /// Longest decision-free interval inside `[from, to]`.
    pub fn max_gap(&self, from: VirtualTime, to: VirtualTime) -> f64 {
        downtime(self.metrics.decision_times(), from, to, MIN_GAP).max_gap_s
    }
}

fn server_specs(s: &Scenario) -> Vec<NodeSpec> {
    s.nodes
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let mut spec = NodeSpec::new(i, n.name.clone(), n.class, n.region);
            spec.cpu_factor = n.cpu_factor;
            spec
        })
        .collect()
}

/// Runs one scenario to completion.
pub fn run(s: &Scenario) -> Result<RunOutput, RunError> {
    s.validate()?;
    if s.has_sweep_placeholder() {
        return Err(ScenarioError::Semantic {
            field: "failure".into(),
            reason: "the sweep placeholder needs a kill time".into(),
        }
        .into());
    }
    let streams = RngStreams::new(s.seed);
    let mut specs = server_specs(s);
    let n_servers = specs.len();
    for k in 0..s.clients {
        let id = n_servers + k;
        specs.push(NodeSpec::new(id, format!("client{k}"), NodeClass::Client, s.client_region));
    }
    let names: Vec<String> = s.nodes.iter().map(|n| n.name.clone()).collect();
    let mut net = Network::new(specs.clone(), &streams);
    net.set_jitter(s.jitter);
    for l in &s.links {
        let a = s.node_index(&l.a).expect("validated");
        let b = s.node_index(&l.b).expect("validated");
        for (x, y) in [(a, b), (b, a)] {
            let mut link = LinkSpec::between(&specs[x], &specs[y]);
            if let Some(rtt) = l.rtt_ms {
                link.one_way_latency = VirtualTime::from_secs_f64(rtt / 2.0 / 1e3);
            }
            if let Some(bw) = l.bandwidth_mbps {
                link.bandwidth = bw * 1e6 / 8.0;
            }
            net.set_link(link);
        }
    }
    let cfg = s.arch_config();
    let leader = cfg.leader()?;
    let reference = cfg.reference_learner()?;
    let mut protocol = arch::build(&cfg, &mut net)?;
    let measured = (s.warmup, s.duration - s.cooldown);
    let mut attach_rng = streams.stream("attach");
    let mut clients = Clients::spawn(
        ClientSpec {
            count: s.clients,
            attach_policy: s.attach,
            request_size: s.request_size,
            think_time: s.think_time,
            outstanding: s.outstanding,
        },
        &cfg,
        n_servers,
        LoadCap {
            target_mbps: s.load_cap_mbps,
        },
        measured,
        &mut attach_rng,
    )?;

    let mut sched: Scheduler<Event> = Scheduler::new();
    let mut metrics = MetricSeries::new();
    let mut audit = Audit::new();
    let mut ids = Ids::default();
    for f in &s.failures {
        if let FailureEntry::At { node, at } = f {
            let n = s.node_index(node).expect("validated");
            sched.schedule(*at, n, Event::Crash).expect("future");
        }
    }
    sched.schedule(WINDOW, 0, Event::Sample).expect("future");

    macro_rules! ctx {
        () => {
            Ctx {
                sched: &mut sched,
                net: &mut net,
                metrics: &mut metrics,
                audit: &mut audit,
                ids: &mut ids,
                reference_learner: reference,
                measure_from: measured.0,
            }
        };
    }

    protocol.start(&mut ctx!());
    let mut start_rng = streams.stream("client-start");
    clients.start(&mut ctx!(), &mut start_rng);

    while let Some(ev) = sched.pop_until(s.duration) {
        let node = ev.target;
        match ev.payload {
            Event::Net(ne) => {
                if let Some(d) = net.handle(&mut sched, node, ne) {
                    if clients.owns(node) {
                        if let Msg::Reply(ids_) = &d.msg.body {
                            clients.on_reply(&mut ctx!(), node, ids_);
                        }
                    } else {
                        protocol.on_message(&mut ctx!(), node, d.msg);
                    }
                    net.resume(&mut sched, node);
                }
            }
            Event::Timer(t) => {
                if clients.owns(node) {
                    if t == Timer::Issue {
                        clients.on_issue(&mut ctx!(), node);
                    }
                } else if net.is_alive(node) {
                    protocol.on_timer(&mut ctx!(), node, t);
                }
            }
            Event::Crash => {
                if net.crash(&mut sched, node).is_ok() {
                    protocol.on_crash(&mut ctx!(), node);
                }
            }
            Event::Sample => {
                let t_s = sched.now().as_nanos() / WINDOW.as_nanos();
                for a in 0..n_servers {
                    for (peer, (kernel, held)) in net.buffer_occupancy(a) {
                        if peer < n_servers {
                            metrics.buffer_series.push(metrics::BufferSample {
                                t_s,
                                node: a,
                                peer,
                                kernel_bytes: kernel,
                                app_bytes: held,
                            });
                        }
                    }
                }
                sched.schedule_in(WINDOW, 0, Event::Sample);
            }
        }
        loop {
            let notices = net.take_notices();
            if notices.is_empty() {
                break;
            }
            for Notice::Unblocked(n) in notices {
                if net.is_alive(n) {
                    protocol.on_unblocked(&mut ctx!(), n);
                    net.resume(&mut sched, n);
                }
            }
        }
    }
    sched.advance_to(s.duration);
    let events = sched.dispatched();

    let windows = (s.duration.as_nanos().div_ceil(WINDOW.as_nanos())) as usize;
    metrics.finalize(windows);
    for k in 0..metrics.windows() {
        metrics.leader_cpu_util[k] = utilization(net.busy_in_window(leader, k), WINDOW);
        metrics.leader_retry_tax[k] = net.retry_tax_in_window(leader, k);
    }
    let steering_windows = protocol.steering_windows();

    let mut out = RunOutput {
        scenario: s.clone(),
        metrics,
        summary: Summary {
            peak_mbps: 0.0,
            mean_mbps: 0.0,
            p99_latency_ms: 0.0,
            max_gap_s: 0.0,
            decisions_total: 0,
        },
        violations: audit.violations().to_vec(),
        steering_windows,
        names,
        leader,
        measured,
        replies: clients.replies,
        admitted_bytes: clients.admitted_bytes(),
        events,
    };
    out.summary = summarize(&out);
    Ok(out)
}

fn summarize(o: &RunOutput) -> Summary {
    let tp: Vec<f64> = o.measured_throughput().into_iter().map(|(_, m)| m).collect();
    let lat: Vec<f64> = o
        .metrics
        .latency_samples
        .iter()
        .map(|l| l.latency.as_millis_f64())
        .collect();
    Summary {
        peak_mbps: tp.iter().copied().fold(0.0, f64::max),
        mean_mbps: if tp.is_empty() {
            0.0
        } else {
            tp.iter().sum::<f64>() / tp.len() as f64
        },
        p99_latency_ms: latency_stats(&lat).map_or(0.0, |s| s.p99),
        max_gap_s: o.max_gap(o.measured.0, o.measured.1),
        decisions_total: o.metrics.decisions_total(),
    }
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

pub fn throughput_csv(o: &RunOutput) -> String {
    let mut s = String::from("t_s,mbps,instances_per_s\n");
    let ips = o.metrics.instances_per_s();
    for (k, m) in o.measured_throughput() {
        let _ = writeln!(s, "{k},{},{}", f6(m), f6(ips[k]));
    }
    s
}

pub fn latency_csv(o: &RunOutput) -> String {
    let mut s = String::from("t_s,latency_ms,client_id\n");
    let first_client = o.names.len();
    for l in &o.metrics.latency_samples {
        let _ = writeln!(
            s,
            "{},{},{}",
            f6(l.t.as_secs_f64()),
            f6(l.latency.as_millis_f64()),
            l.client - first_client
        );
    }
    s
}

pub fn quorum_csv(o: &RunOutput) -> String {
    let mut s = String::from("t_s,acceptor,first_quorum_count\n");
    let (a, b) = o.measured_windows();
    for k in a..b {
        for (acc, counts) in o.metrics.quorum_counts() {
            let _ = writeln!(s, "{k},{},{}", o.names[*acc], counts.get(k).copied().unwrap_or(0));
        }
    }
    s
}

pub fn buffers_csv(o: &RunOutput) -> String {
    let mut s = String::from("t_s,node,peer,kernel_bytes,app_bytes\n");
    for b in &o.metrics.buffer_series {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            b.t_s, o.names[b.node], o.names[b.peer], b.kernel_bytes, b.app_bytes
        );
    }
    s
}

pub fn summary_csv(o: &RunOutput) -> String {
    let m = &o.summary;
    format!(
        "peak_mbps,mean_mbps,p99_latency_ms,max_gap_s,decisions_total\n{},{},{},{},{}\n",
        f6(m.peak_mbps),
        f6(m.mean_mbps),
        f6(m.p99_latency_ms),
        f6(m.max_gap_s),
        m.decisions_total
    )
}

/// Writes the five CSV files into `dir`.
pub fn write_bundle(o: &RunOutput, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("throughput.csv"), throughput_csv(o))?;
    fs::write(dir.join("latency.csv"), latency_csv(o))?;
    fs::write(dir.join("quorum.csv"), quorum_csv(o))?;
    fs::write(dir.join("buffers.csv"), buffers_csv(o))?;
    fs::write(dir.join("summary.csv"), summary_csv(o))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub kill_time_s: f64,
    pub steering: bool,
    pub downtime_s: f64,
    pub passed: bool,
}

/// Simulated time after the kill that a sweep run keeps going, as a multiple
/// of the kill time plus a constant, so that long stalls end inside the run.
pub fn sweep_duration(base: &Scenario, kill: VirtualTime) -> VirtualTime {
    let needed = kill + kill + VirtualTime::from_secs(40) + base.cooldown;
    needed.max(base.duration)
}

/// One run per kill time; downtime is the longest decision-free interval
/// after the kill.
pub fn sweep_kill_times(
    base: &Scenario,
    kill_times: &[f64],
    steering: bool,
) -> Result<Vec<SweepRow>, RunError> {
    kill_times
        .iter()
        .map(|&k| {
            let kill = VirtualTime::from_secs_f64(k);
            let mut s = base.with_kill_time(kill)?;
            s.steering = steering;
            s.duration = sweep_duration(base, kill);
            let o = run(&s)?;
            Ok(SweepRow {
                kill_time_s: k,
                steering,
                downtime_s: o.max_gap(kill, o.measured.1),
                passed: o.passed(),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("kill_time_s,steering,downtime_s\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{}",
            r.kill_time_s,
            if r.steering { "on" } else { "off" },
            f6(r.downtime_s)
        );
    }
    s
}

/// Outstanding requests per client used to saturate a configuration.
pub const PEAK_OUTSTANDING: usize = 8;

/// The scenario used to measure peak throughput: no cap, no failures,
/// saturating clients.
pub fn peak_scenario(base: &Scenario) -> Scenario {
    let mut s = base.clone();
    s.load_cap_mbps = None;
    s.failures.clear();
    s.outstanding = PEAK_OUTSTANDING;
    s
}

/// Mean post-warmup throughput of the saturated configuration.
pub fn measure_peak(base: &Scenario) -> Result<f64, RunError> {
    Ok(run(&peak_scenario(base))?.summary.mean_mbps)
}
