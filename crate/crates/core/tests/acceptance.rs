//! End-to-end acceptance suite. Runs every criterion in parallel and prints
//! one `[PASS]`/`[FAIL]` line each. Pass criterion ids (`C3`, `C7`, ...) as
//! arguments to run a subset.

use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use paxsim::arch::pipeline::{appbuf_overload, blocking_chain};
use paxsim::message::HEADER_BYTES;
use paxsim::metrics::{downtime, two_means, MIN_GAP};
use paxsim::net::{NodeClass, NodeSpec, Region};
use paxsim::runner::{self, RunOutput};
use paxsim::scenario::{preset, FailureEntry, Scenario, PRESET_SIZES, PRESET_VARIANTS};
use paxsim::sim::VirtualTime;

type Outcome = Result<String, String>;

fn secs(s: f64) -> VirtualTime {
    VirtualTime::from_secs_f64(s)
}

fn load(name: &str) -> Scenario {
    preset(name).unwrap_or_else(|| panic!("preset {name}"))
}

fn run(s: &Scenario) -> Result<RunOutput, String> {
    let o = runner::run(s).map_err(|e| e.to_string())?;
    if !o.passed() {
        return Err(format!("audit: {:?}", o.violations.first()));
    }
    Ok(o)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn kill(mut s: Scenario, node: &str, at: f64) -> Scenario {
    s.failures = vec![FailureEntry::At {
        node: node.into(),
        at: secs(at),
    }];
    s
}

fn safety() -> Outcome {
    const RUNS: u64 = 200;
    let configs = ["a", "b", "c", "d"];
    let classes = [NodeClass::Micro, NodeClass::Small, NodeClass::Large];
    let scenario = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let variant = PRESET_VARIANTS[rng.random_range(0..PRESET_VARIANTS.len())];
        let size = PRESET_SIZES[rng.random_range(0..PRESET_SIZES.len())].0;
        let config = configs[rng.random_range(0..configs.len())];
        let mut s = load(&format!("config_{config}_{size}_{variant}"));
        s.seed = seed;
        s.duration = secs(12.0);
        s.warmup = secs(1.0);
        s.cooldown = secs(1.0);
        s.outstanding = rng.random_range(1..=4);
        for n in &mut s.nodes {
            n.class = classes[rng.random_range(0..classes.len())];
        }
        let victims: Vec<String> = s
            .nodes
            .iter()
            .filter(|n| n.roles.acceptor && !n.roles.leader)
            .map(|n| n.name.clone())
            .collect();
        let victim = victims[rng.random_range(0..victims.len())].clone();
        let at = rng.random_range(1.0..6.0);
        kill(s, &victim, at)
    };
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()) as u64;
    let failures: Vec<String> = std::thread::scope(|sc| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                sc.spawn(move || {
                    let mut bad = vec![];
                    let mut seed = t;
                    while seed < RUNS {
                        let s = scenario(seed);
                        match runner::run(&s) {
                            Ok(o) if o.passed() && o.summary.decisions_total > 0 => {}
                            Ok(o) if o.passed() => bad.push(format!("seed {seed}: no decisions")),
                            Ok(o) => bad.push(format!("seed {seed}: {:?}", o.violations[0])),
                            Err(e) => bad.push(format!("seed {seed}: {e}")),
                        }
                        seed += threads;
                    }
                    bad
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    match failures.first() {
        None => Ok(format!("{RUNS} randomized scenarios, no conflicting decisions or order divergence")),
        Some(first) => Err(format!("{} of {RUNS} scenarios failed, first: {first}", failures.len())),
    }
}

const KILLS: [f64; 4] = [50.0, 100.0, 150.0, 200.0];

/// Config (b) Libpaxos, 4 KB, capped at 70% of peak, fast acceptor A2 killed.
fn capped_b(steering: bool) -> Result<Scenario, String> {
    let mut s = load("config_b_4k_libpaxos");
    let peak = runner::measure_peak(&s).map_err(|e| e.to_string())?;
    s.load_cap_mbps = Some(0.7 * peak);
    s.steering = steering;
    Ok(s)
}

fn sweep_run(base: &Scenario, at: f64) -> Result<RunOutput, String> {
    let mut s = kill(base.clone(), "A2", at);
    s.duration = runner::sweep_duration(base, secs(at));
    run(&s)
}

fn downtime_after(o: &RunOutput, at: f64) -> f64 {
    o.max_gap(secs(at), o.measured.1)
}

/// Time at which the backlog on the slow acceptor's channels started to grow:
/// the zero crossing of a least-squares line through the pre-kill samples.
fn stall_onset(o: &RunOutput, slow: &str, kill: f64) -> Option<f64> {
    let a3 = o.node(slow)?;
    let mut by_t = std::collections::BTreeMap::<u64, f64>::new();
    for b in &o.metrics.buffer_series {
        if (b.node == a3 || b.peer == a3) && (b.t_s as f64) < kill {
            *by_t.entry(b.t_s).or_default() += (b.kernel_bytes + b.app_bytes) as f64;
        }
    }
    let pts: Vec<(f64, f64)> = by_t.into_iter().map(|(t, v)| (t as f64, v)).collect();
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let rate = sxy / sxx;
    (rate > 0.0).then(|| (mx - my / rate).max(0.0))
}

fn downtime_monotone() -> Outcome {
    let base = capped_b(false)?;
    let mut xs = vec![];
    let mut ys = vec![];
    for at in KILLS {
        let o = sweep_run(&base, at)?;
        let onset = stall_onset(&o, "A3", at).ok_or("slow acceptor never backlogged")?;
        xs.push(at - onset);
        ys.push(downtime_after(&o, at));
    }
    let increasing = ys.windows(2).all(|w| w[1] > w[0]);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let k = sxy / sxx;
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - k * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    check(
        increasing && r2 >= 0.9,
        format!("downtimes {ys:.1?} s, x {xs:.1?}, slope {k:.3}, R2 {r2:.4}"),
    )
}

fn steering_failover() -> Outcome {
    let steered = capped_b(true)?;
    let classic = capped_b(false)?;
    let mut ys = vec![];
    for at in KILLS {
        ys.push(downtime_after(&sweep_run(&steered, at)?, at));
    }
    let classic200 = downtime_after(&sweep_run(&classic, 200.0)?, 200.0);
    let worst = ys.iter().copied().fold(0.0, f64::max);
    check(
        worst <= 2.0 && ys[3] <= 0.05 * classic200,
        format!("steered downtimes {ys:.2?} s, classic at 200 s {classic200:.1} s"),
    )
}

fn stall_shape() -> Outcome {
    let at = 50.0;
    let mut d = vec![];
    for name in ["config_b_4k_libpaxos", "config_d_4k_libpaxos"] {
        let mut s = load(name);
        let peak = runner::measure_peak(&s).map_err(|e| e.to_string())?;
        s.load_cap_mbps = Some(0.7 * peak);
        d.push(downtime_after(&sweep_run(&s, at)?, at));
    }
    check(
        d[1] > d[0] && d[0] > 0.0,
        format!("LAN {:.1} s, WAN {:.1} s", d[0], d[1]),
    )
}

fn pacing() -> Outcome {
    let peak = |c: &str, v: &str| {
        runner::measure_peak(&load(&format!("config_{c}_4k_{v}"))).map_err(|e| e.to_string())
    };
    let mut ok = true;
    let mut detail = vec![];
    for v in ["spaxos", "ringpaxos"] {
        let (a, b) = (peak("a", v)?, peak("b", v)?);
        ok &= b <= 0.9 * a;
        detail.push(format!("{v} {a:.1}/{b:.1}"));
    }
    for v in ["libpaxos", "openreplica"] {
        let (a, b) = (peak("a", v)?, peak("b", v)?);
        ok &= (a - b).abs() <= 0.1 * a.max(b);
        detail.push(format!("{v} {a:.1}/{b:.1}"));
    }
    check(ok, format!("peaks (a)/(b) Mb/s: {}", detail.join(", ")))
}

fn slow_member_gain() -> Outcome {
    let at = 40.0;
    let mut ok = true;
    let mut detail = vec![];
    for v in ["spaxos", "ringpaxos"] {
        let s = kill(runner::peak_scenario(&load(&format!("config_b_4k_{v}"))), "A3", at);
        let o = run(&s)?;
        let gap = downtime(o.metrics.decision_times(), secs(at), o.measured.1, MIN_GAP);
        let resumed = gap
            .gaps
            .iter()
            .map(|g| g.1.as_secs_f64())
            .fold(at, f64::max);
        let (w0, w1) = o.measured_windows();
        let pre = o.mean_mbps(w0, at as usize);
        let post = o.mean_mbps(resumed.ceil() as usize, w1);
        ok &= post >= 1.1 * pre;
        let mut line = format!("{v} {pre:.1} -> {post:.1} Mb/s");
        if v == "ringpaxos" {
            let end = resumed - at;
            ok &= (3.0..=4.0).contains(&end) && gap.max_gap_s > 0.0;
            line += &format!(", gap ends {end:.2} s after kill");
        }
        detail.push(line);
    }
    check(ok, detail.join("; "))
}

fn bimodality() -> Outcome {
    let o = run(&runner::peak_scenario(&load("config_c_100k_openreplica")))?;
    let tp = o.measured_throughput();
    let values: Vec<f64> = tp.iter().map(|t| t.1).collect();
    let (lo, hi, labels) = two_means(&values).ok_or("too few windows")?;
    let low: Vec<usize> = tp
        .iter()
        .zip(&labels)
        .filter(|(_, high)| !**high)
        .map(|(t, _)| t.0)
        .collect();
    let tax = low
        .iter()
        .map(|&k| o.metrics.leader_retry_tax[k])
        .sum::<f64>()
        / low.len().max(1) as f64;
    let spread = (hi - lo) / hi;
    check(
        spread >= 0.2 && tax > 0.0,
        format!(
            "modes {lo:.1}/{hi:.1} Mb/s ({:.0}% apart, {} low windows), low-mode retry tax {:.3} s/s",
            spread * 100.0,
            low.len(),
            tax
        ),
    )
}

fn steering_neutral() -> Outcome {
    // Both at the constant load used by the failover sweeps: 70% of the
    // classic peak.
    let cap = 0.7 * runner::measure_peak(&load("config_a_4k_libpaxos")).map_err(|e| e.to_string())?;
    let at_cap = |name: &str| {
        let mut s = runner::peak_scenario(&load(name));
        s.load_cap_mbps = Some(cap);
        run(&s)
    };
    let classic = at_cap("config_a_4k_libpaxos")?;
    let steered = at_cap("config_a_4k_libpaxosplus")?;
    let (a, b) = (classic.summary.mean_mbps, steered.summary.mean_mbps);
    let growth: u64 = steered
        .steering_windows
        .iter()
        .flat_map(|w| w.held_at_end.iter().zip(&w.held_at_start))
        .map(|(e, s)| e.saturating_sub(*s))
        .sum();
    check(
        (a - b).abs() <= 0.05 * a.max(b) && growth == 0 && !steered.steering_windows.is_empty(),
        format!(
            "classic {a:.2} vs steered {b:.2} Mb/s, {} steering windows, excluded growth {growth} B",
            steered.steering_windows.len()
        ),
    )
}

fn quorum_counters() -> Outcome {
    let share = |o: &RunOutput| {
        let a3 = o.node("A3").expect("A3");
        let (_, w1) = o.measured_windows();
        let counts = &o.metrics.quorum_counts()[&a3];
        let inst = o.metrics.instances_per_s();
        let member: u64 = counts[30..w1].iter().sum();
        let total: f64 = inst[30..w1].iter().sum();
        member as f64 / total
    };
    let classic = run(&runner::peak_scenario(&load("config_b_4k_libpaxos")))?;
    let steered = run(&runner::peak_scenario(&load("config_b_4k_libpaxosplus")))?;
    let a3 = steered.node("A3").expect("A3");
    let in_steered = steered.metrics.steered_quorum.get(&a3).copied().unwrap_or(0);
    let sc = share(&classic);
    check(
        sc < 0.1 && in_steered == 0 && steered.metrics.steered_decisions > 0,
        format!(
            "micro share after 30 s {:.2}%, in {} steered quorums: {in_steered}",
            sc * 100.0,
            steered.metrics.steered_decisions
        ),
    )
}

fn bundle(o: &RunOutput) -> [String; 5] {
    [
        runner::throughput_csv(o),
        runner::latency_csv(o),
        runner::quorum_csv(o),
        runner::buffers_csv(o),
        runner::summary_csv(o),
    ]
}

fn determinism() -> Outcome {
    let mut names = vec![];
    for v in PRESET_VARIANTS {
        let mut s = kill(load(&format!("config_b_4k_{v}")), "A2", 12.0);
        s.duration = secs(30.0);
        s.seed = 7;
        let first = bundle(&runner::run(&s).map_err(|e| e.to_string())?);
        let second = bundle(&runner::run(&s).map_err(|e| e.to_string())?);
        if first != second {
            return Err(format!("{v}: bundles differ"));
        }
        names.push(v);
    }
    Ok(format!("identical bundles for {}", names.join(", ")))
}

/// Per-stage service time from the class tables: CPU to copy or handle a
/// message, and wire time on the slower NIC of each hop.
fn stage_times(classes: [NodeClass; 3], wire: f64) -> Vec<f64> {
    // (CPU bytes/s, NIC bytes/s, fixed seconds per message)
    let table = |c: NodeClass| match c {
        NodeClass::Micro => (12.5e6, 12.5e6 / 4.0, 40e-6),
        NodeClass::Small => (25e6, 12.5e6, 20e-6),
        NodeClass::Large => (100e6, 25e6, 5e-6),
        NodeClass::Client => unreachable!("not a server class"),
    };
    let [a, b, c] = classes.map(table);
    let cpu = |n: (f64, f64, f64)| n.2 + wire / n.0;
    vec![
        cpu(a),
        wire / a.1.min(b.1),
        2.0 * cpu(b),
        wire / b.1.min(c.1),
        cpu(c),
    ]
}

fn oracles() -> Outcome {
    let cases = [
        [NodeClass::Small, NodeClass::Micro, NodeClass::Small],
        [NodeClass::Large, NodeClass::Small, NodeClass::Large],
        [NodeClass::Small, NodeClass::Small, NodeClass::Micro],
        [NodeClass::Large, NodeClass::Large, NodeClass::Small],
    ];
    let wire = 4096 + HEADER_BYTES;
    let mut worst: f64 = 0.0;
    for classes in cases {
        let specs = [0, 1, 2].map(|i| NodeSpec::new(i, format!("n{i}"), classes[i], Region::UsWest2c));
        let r = blocking_chain(specs, wire, secs(5.0), secs(20.0), 3);
        let bound = 1.0 / stage_times(classes, wire as f64).into_iter().fold(0.0, f64::max);
        worst = worst.max((r.msgs_per_s - bound).abs() / bound);
    }
    let (msg, link, offered) = (10_000u64, 1e6, 3e6);
    let node = |i| NodeSpec::new(i, format!("n{i}"), NodeClass::Client, Region::UsWest2c);
    let r = appbuf_overload(node(0), node(1), link, msg, offered, secs(30.0), secs(1.0));
    // Growth of the app buffer between consecutive samples once the kernel
    // buffer is full, against the integral of the rate difference.
    let full: Vec<_> = r.samples.iter().filter(|s| s.2 > 0).collect();
    if full.len() < 10 {
        return Err(format!("app buffer used in only {} samples", full.len()));
    }
    let mut app_err: f64 = 0.0;
    for w in full.windows(2).chain([[full[0], full[full.len() - 1]].as_slice()]) {
        let dt = (w[1].0 - w[0].0).as_secs_f64();
        let growth = w[1].2 as f64 - w[0].2 as f64;
        app_err = app_err.max((growth - (offered - link) * dt).abs());
    }
    check(
        worst <= 0.05 && app_err <= msg as f64,
        format!(
            "chain worst error {:.2}%, app-buffer max deviation {app_err:.0} B (message {msg} B)",
            worst * 100.0
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, fn() -> Outcome); 11] = [
        ("C1", "safety", safety),
        ("C2", "downtime grows with kill time", downtime_monotone),
        ("C3", "steered failover", steering_failover),
        ("C4", "WAN stall longer than LAN", stall_shape),
        ("C5", "slowest-member pacing", pacing),
        ("C6", "killing the slow member", slow_member_gain),
        ("C7", "OpenReplica bimodality", bimodality),
        ("C8", "steering neutrality", steering_neutral),
        ("C9", "quorum counters", quorum_counters),
        ("C10", "determinism", determinism),
        ("C11", "analytic oracles", oracles),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<_> = criteria
        .iter()
        .filter(|c| filter.is_empty() || filter.iter().any(|f| f == c.0))
        .collect();
    // Criteria run on a small worker pool; on one core they run in order, so
    // each reported time is that criterion's own.
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let next = AtomicUsize::new(0);
    let results: Vec<bool> = std::thread::scope(|sc| {
        let handles: Vec<_> = (0..workers.min(selected.len()))
            .map(|_| {
                sc.spawn(|| {
                    let mut out = vec![];
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some((id, name, f)) = selected.get(i) else { break };
                        let t = Instant::now();
                        let r = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
                        let dt = t.elapsed().as_secs_f64();
                        let (ok, detail) = match r {
                            Ok(d) => (true, d),
                            Err(d) => (false, d),
                        };
                        let tag = if ok { "PASS" } else { "FAIL" };
                        println!("[{tag}] {id} {name}: {detail} ({dt:.1} s)");
                        out.push(ok);
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("\n{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
