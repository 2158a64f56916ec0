//! Scenario files: a flat sectioned `key = value` format.
//!
//! ```text
//! [scenario]
//! variant = libpaxos
//! duration_s = 100
//!
//! [node.leader]
//! class = small
//! roles = leader
//!
//! [link.leader.A3]
//! rtt_ms = 2.5
//!
//! [failure]
//! A2 = 50
//! ```
//!
//! Every `[scenario]` key has a default; rendering writes all of them so a
//! rendered file documents the full experiment.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::arch::{ArchConfig, ArchParams, Roles, Variant};
use crate::net::{NodeClass, Region};
use crate::steering::SteeringParams;
use crate::sim::VirtualTime;
use crate::workload::{check_policy, AttachPolicy};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{field}: {reason}")]
    Semantic { field: String, reason: String },
}

fn semantic(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Semantic {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeEntry {
    pub name: String,
    pub class: NodeClass,
    pub roles: Roles,
    pub region: Region,
    pub cpu_factor: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkEntry {
    pub a: String,
    pub b: String,
    pub rtt_ms: Option<f64>,
    pub bandwidth_mbps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FailureEntry {
    At { node: String, at: VirtualTime },
    /// Kill time filled in by the sweep runner.
    Sweep { node: String },
}

impl FailureEntry {
    pub fn node(&self) -> &str {
        match self {
            FailureEntry::At { node, .. } | FailureEntry::Sweep { node } => node,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub duration: VirtualTime,
    pub warmup: VirtualTime,
    pub cooldown: VirtualTime,
    pub variant: Variant,
    pub steering: bool,
    pub f: usize,
    pub request_size: u64,
    pub clients: usize,
    pub outstanding: usize,
    pub attach: AttachPolicy,
    pub think_time: VirtualTime,
    pub load_cap_mbps: Option<f64>,
    /// Relative amplitude of CPU service-time jitter.
    pub jitter: f64,
    pub client_region: Region,
    pub steering_params: SteeringParams,
    pub params: ArchParams,
    pub nodes: Vec<NodeEntry>,
    pub links: Vec<LinkEntry>,
    pub failures: Vec<FailureEntry>,
    pub out: Option<String>,
}

impl Scenario {
    /// A scenario with default settings and no nodes.
    pub fn new(variant: Variant) -> Scenario {
        Scenario {
            seed: 1,
            duration: VirtualTime::from_secs(100),
            warmup: VirtualTime::from_secs(10),
            cooldown: VirtualTime::from_secs(10),
            variant,
            steering: false,
            f: 1,
            request_size: 4096,
            clients: 50,
            outstanding: 1,
            attach: AttachPolicy::native(variant),
            think_time: VirtualTime::ZERO,
            load_cap_mbps: None,
            jitter: 0.1,
            client_region: Region::UsWest2c,
            steering_params: SteeringParams::default(),
            params: ArchParams::default(),
            nodes: vec![],
            links: vec![],
            failures: vec![],
            out: None,
        }
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Protocol wiring with node ids equal to positions in `nodes`.
    pub fn arch_config(&self) -> ArchConfig {
        let mut params = self.params.clone();
        params.steering = self.steering.then_some(self.steering_params);
        ArchConfig {
            variant: self.variant,
            f: self.f,
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| (i, n.roles))
                .collect(),
            params,
        }
    }

    pub fn has_sweep_placeholder(&self) -> bool {
        self.failures
            .iter()
            .any(|f| matches!(f, FailureEntry::Sweep { .. }))
    }

    /// Internal consistency: roles, acceptor count, references, times.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut names = BTreeSet::new();
        for n in &self.nodes {
            if !names.insert(n.name.as_str()) {
                return Err(semantic(format!("node.{}", n.name), "duplicate node"));
            }
            if n.roles.is_empty() {
                return Err(semantic(format!("node.{}", n.name), "no roles"));
            }
            if !(n.cpu_factor > 0.0) {
                return Err(semantic(format!("node.{}.cpu_factor", n.name), "must be positive"));
            }
        }
        if self.duration <= self.warmup + self.cooldown {
            return Err(semantic("duration_s", "shorter than warmup plus cooldown"));
        }
        if self.outstanding == 0 {
            return Err(semantic("outstanding", "must be at least 1"));
        }
        if self.clients == 0 {
            return Err(semantic("clients", "must be at least 1"));
        }
        if self.request_size == 0 {
            return Err(semantic("request_size", "must be positive"));
        }
        if self.params.openreplica_window == 0 || self.params.spaxos_window == 0 {
            return Err(semantic("window", "must be at least 1"));
        }
        if let Some(c) = self.load_cap_mbps {
            if !(c > 0.0) {
                return Err(semantic("load_cap_mbps", "must be positive or none"));
            }
        }
        if self.steering && self.variant != Variant::Libpaxos {
            return Err(semantic("steering", "quorum steering applies to libpaxos only"));
        }
        check_policy(self.variant, self.attach).map_err(|e| semantic("attach", e.to_string()))?;
        self.arch_config()
            .validate()
            .map_err(|e| semantic("nodes", e.to_string()))?;
        for l in &self.links {
            for end in [&l.a, &l.b] {
                if self.node_index(end).is_none() {
                    return Err(semantic(format!("link.{}.{}", l.a, l.b), format!("unknown node `{end}`")));
                }
            }
        }
        let mut killed = BTreeSet::new();
        for fe in &self.failures {
            let node = fe.node();
            let field = format!("failure.{node}");
            if self.node_index(node).is_none() {
                return Err(semantic(field, "unknown node"));
            }
            if !killed.insert(node) {
                return Err(semantic(field, "node listed twice"));
            }
            if let FailureEntry::At { at, .. } = fe {
                if *at >= self.duration {
                    return Err(semantic(field, "failure time is not before the end of the run"));
                }
            }
        }
        Ok(())
    }

    /// Replaces the sweep placeholder with a concrete kill time.
    pub fn with_kill_time(&self, at: VirtualTime) -> Result<Scenario, ScenarioError> {
        let n = self
            .failures
            .iter()
            .filter(|f| matches!(f, FailureEntry::Sweep { .. }))
            .count();
        if n != 1 {
            return Err(semantic("failure", format!("expected one sweep placeholder, found {n}")));
        }
        let mut s = self.clone();
        for f in &mut s.failures {
            if let FailureEntry::Sweep { node } = f {
                *f = FailureEntry::At {
                    node: node.clone(),
                    at,
                };
            }
        }
        Ok(s)
    }
}

fn secs(t: VirtualTime) -> String {
    format!("{}", t.as_secs_f64())
}

fn millis(t: VirtualTime) -> String {
    format!("{}", t.as_millis_f64())
}

pub fn render(s: &Scenario) -> String {
    let mut o = String::new();
    let p = &s.params;
    let sp = &s.steering_params;
    let onoff = |b: bool| if b { "on" } else { "off" };
    let _ = writeln!(o, "[scenario]");
    let kv: Vec<(&str, String)> = vec![
        ("seed", s.seed.to_string()),
        ("duration_s", secs(s.duration)),
        ("warmup_s", secs(s.warmup)),
        ("cooldown_s", secs(s.cooldown)),
        ("variant", s.variant.name().to_string()),
        ("steering", onoff(s.steering).to_string()),
        ("f", s.f.to_string()),
        ("request_size", s.request_size.to_string()),
        ("clients", s.clients.to_string()),
        ("outstanding", s.outstanding.to_string()),
        ("attach", s.attach.name().to_string()),
        ("think_time_s", secs(s.think_time)),
        (
            "load_cap_mbps",
            s.load_cap_mbps.map_or("none".to_string(), |c| format!("{c}")),
        ),
        ("jitter", format!("{}", s.jitter)),
        ("client_region", s.client_region.name().to_string()),
        ("probe_len", sp.probe_len.to_string()),
        ("steer_len", sp.steer_len.to_string()),
        ("suspicion_ms", millis(sp.suspicion_timeout)),
        ("openreplica_cpu_factor", format!("{}", p.openreplica_cpu_factor)),
        ("openreplica_window", p.openreplica_window.to_string()),
        ("spaxos_batch_bytes", p.spaxos_batch_bytes.to_string()),
        ("spaxos_flush_ms", millis(p.spaxos_flush)),
        ("spaxos_window", p.spaxos_window.to_string()),
        ("ring_session_timeout_s", secs(p.ring_session_timeout)),
        ("ring_reconfig_delay_ms", millis(p.ring_reconfig_delay)),
    ];
    for (k, v) in kv {
        let _ = writeln!(o, "{k} = {v}");
    }
    if let Some(out) = &s.out {
        let _ = writeln!(o, "out = {out}");
    }
    for n in &s.nodes {
        let _ = writeln!(o, "\n[node.{}]", n.name);
        let _ = writeln!(o, "class = {}", n.class.name());
        let _ = writeln!(o, "roles = {}", n.roles);
        let _ = writeln!(o, "region = {}", n.region.name());
        if n.cpu_factor != 1.0 {
            let _ = writeln!(o, "cpu_factor = {}", n.cpu_factor);
        }
    }
    for l in &s.links {
        let _ = writeln!(o, "\n[link.{}.{}]", l.a, l.b);
        if let Some(r) = l.rtt_ms {
            let _ = writeln!(o, "rtt_ms = {r}");
        }
        if let Some(b) = l.bandwidth_mbps {
            let _ = writeln!(o, "bandwidth_mbps = {b}");
        }
    }
    if !s.failures.is_empty() {
        let _ = writeln!(o, "\n[failure]");
        for f in &s.failures {
            match f {
                FailureEntry::At { node, at } => {
                    let _ = writeln!(o, "{node} = {}", secs(*at));
                }
                FailureEntry::Sweep { node } => {
                    let _ = writeln!(o, "{node} = sweep");
                }
            }
        }
    }
    o
}

enum Section {
    None,
    Scenario,
    Node(usize),
    Link(usize),
    Failure,
}

fn value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, ScenarioError> {
    v.parse().map_err(|_| ScenarioError::Syntax {
        line,
        msg: format!("bad value `{v}` for `{key}`"),
    })
}

fn parse_secs(line: usize, key: &str, v: &str) -> Result<VirtualTime, ScenarioError> {
    let x: f64 = value(line, key, v)?;
    if !(x >= 0.0) || !x.is_finite() {
        return Err(ScenarioError::Syntax {
            line,
            msg: format!("`{key}` must be a non-negative number"),
        });
    }
    Ok(VirtualTime::from_secs_f64(x))
}

fn parse_millis(line: usize, key: &str, v: &str) -> Result<VirtualTime, ScenarioError> {
    let t = parse_secs(line, key, v)?;
    Ok(VirtualTime::from_secs_f64(t.as_secs_f64() / 1e3))
}

fn parse_with<T>(line: usize, v: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<T, ScenarioError> {
    f(v).map_err(|msg| ScenarioError::Syntax { line, msg })
}

/// Parses and validates a scenario.
pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
    let s = parse_unchecked(text)?;
    s.validate()?;
    Ok(s)
}

fn parse_unchecked(text: &str) -> Result<Scenario, ScenarioError> {
    let mut s = Scenario::new(Variant::Libpaxos);
    let mut attach: Option<AttachPolicy> = None;
    let mut section = Section::None;
    let mut seen_keys = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.split('#').next().unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        let syn = |msg: String| ScenarioError::Syntax { line, msg };
        if let Some(h) = t.strip_prefix('[') {
            let h = h
                .strip_suffix(']')
                .ok_or_else(|| syn("unterminated section header".into()))?;
            let parts: Vec<&str> = h.split('.').collect();
            section = match parts.as_slice() {
                ["scenario"] => Section::Scenario,
                ["failure"] => Section::Failure,
                ["node", name] if !name.is_empty() => {
                    s.nodes.push(NodeEntry {
                        name: name.to_string(),
                        class: NodeClass::Small,
                        roles: Roles::default(),
                        region: Region::UsWest2c,
                        cpu_factor: 1.0,
                    });
                    Section::Node(s.nodes.len() - 1)
                }
                ["link", a, b] if !a.is_empty() && !b.is_empty() => {
                    s.links.push(LinkEntry {
                        a: a.to_string(),
                        b: b.to_string(),
                        rtt_ms: None,
                        bandwidth_mbps: None,
                    });
                    Section::Link(s.links.len() - 1)
                }
                _ => return Err(syn(format!("unknown section `[{h}]`"))),
            };
            continue;
        }
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| syn(format!("expected `key = value`, got `{t}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(syn("empty key".into()));
        }
        let scope = match section {
            Section::None => return Err(syn("key outside of a section".into())),
            Section::Scenario => "scenario".to_string(),
            Section::Node(n) => format!("node{n}"),
            Section::Link(n) => format!("link{n}"),
            Section::Failure => "failure".to_string(),
        };
        if !seen_keys.insert(format!("{scope}.{k}")) {
            return Err(syn(format!("duplicate key `{k}`")));
        }
        match section {
            Section::None => unreachable!(),
            Section::Scenario => match k {
                "seed" => s.seed = value(line, k, v)?,
                "duration_s" => s.duration = parse_secs(line, k, v)?,
                "warmup_s" => s.warmup = parse_secs(line, k, v)?,
                "cooldown_s" => s.cooldown = parse_secs(line, k, v)?,
                "variant" => {
                    let name = v.to_ascii_lowercase().replace(['-', '_'], "");
                    if name == "libpaxosplus" || name == "libpaxos+" {
                        s.variant = Variant::Libpaxos;
                        s.steering = true;
                    } else {
                        s.variant = parse_with(line, v, |x| x.parse())?;
                    }
                }
                "steering" => {
                    s.steering = match v {
                        "on" | "true" => true,
                        "off" | "false" => false,
                        _ => return Err(syn(format!("`steering` is on or off, got `{v}`"))),
                    }
                }
                "f" => s.f = value(line, k, v)?,
                "request_size" => s.request_size = value(line, k, v)?,
                "clients" => s.clients = value(line, k, v)?,
                "outstanding" => s.outstanding = value(line, k, v)?,
                "attach" => attach = Some(parse_with(line, v, |x| x.parse())?),
                "think_time_s" => s.think_time = parse_secs(line, k, v)?,
                "load_cap_mbps" => {
                    s.load_cap_mbps = if v == "none" {
                        None
                    } else {
                        Some(value(line, k, v)?)
                    }
                }
                "jitter" => s.jitter = value(line, k, v)?,
                "client_region" => s.client_region = parse_with(line, v, |x| x.parse())?,
                "probe_len" => s.steering_params.probe_len = value(line, k, v)?,
                "steer_len" => s.steering_params.steer_len = value(line, k, v)?,
                "suspicion_ms" => s.steering_params.suspicion_timeout = parse_millis(line, k, v)?,
                "openreplica_cpu_factor" => s.params.openreplica_cpu_factor = value(line, k, v)?,
                "openreplica_window" => s.params.openreplica_window = value(line, k, v)?,
                "spaxos_batch_bytes" => s.params.spaxos_batch_bytes = value(line, k, v)?,
                "spaxos_flush_ms" => s.params.spaxos_flush = parse_millis(line, k, v)?,
                "spaxos_window" => s.params.spaxos_window = value(line, k, v)?,
                "ring_session_timeout_s" => s.params.ring_session_timeout = parse_secs(line, k, v)?,
                "ring_reconfig_delay_ms" => s.params.ring_reconfig_delay = parse_millis(line, k, v)?,
                "out" => s.out = Some(v.to_string()),
                _ => return Err(syn(format!("unknown key `{k}` in [scenario]"))),
            },
            Section::Node(n) => {
                let node = &mut s.nodes[n];
                match k {
                    "class" => node.class = parse_with(line, v, |x| x.parse())?,
                    "roles" => node.roles = parse_with(line, v, Roles::parse)?,
                    "region" => node.region = parse_with(line, v, |x| x.parse())?,
                    "cpu_factor" => node.cpu_factor = value(line, k, v)?,
                    _ => return Err(syn(format!("unknown key `{k}` in a node section"))),
                }
            }
            Section::Link(n) => {
                let l = &mut s.links[n];
                match k {
                    "rtt_ms" => l.rtt_ms = Some(value(line, k, v)?),
                    "bandwidth_mbps" => l.bandwidth_mbps = Some(value(line, k, v)?),
                    _ => return Err(syn(format!("unknown key `{k}` in a link section"))),
                }
            }
            Section::Failure => {
                let node = k.to_string();
                s.failures.push(if v == "sweep" {
                    FailureEntry::Sweep { node }
                } else {
                    FailureEntry::At {
                        node,
                        at: parse_secs(line, k, v)?,
                    }
                });
            }
        }
    }
    s.attach = attach.unwrap_or_else(|| AttachPolicy::native(s.variant));
    Ok(s)
}

/// Table-1 configuration letter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Config {
    A,
    B,
    C,
    D,
}

pub const PRESET_SIZES: [(&str, u64); 3] = [("200", 200), ("4k", 4096), ("100k", 102_400)];
pub const PRESET_VARIANTS: [&str; 5] = ["libpaxos", "libpaxosplus", "openreplica", "spaxos", "ringpaxos"];

/// All preset names, `config_<a-d>_<size>_<variant>`.
pub fn preset_names() -> Vec<String> {
    let mut v = vec![];
    for c in ["a", "b", "c", "d"] {
        for (size, _) in PRESET_SIZES {
            for var in PRESET_VARIANTS {
                v.push(format!("config_{c}_{size}_{var}"));
            }
        }
    }
    v
}

/// Builds one of the shipped presets.
pub fn preset(name: &str) -> Option<Scenario> {
    let rest = name.strip_prefix("config_")?;
    let mut it = rest.splitn(3, '_');
    let config = match it.next()? {
        "a" => Config::A,
        "b" => Config::B,
        "c" => Config::C,
        "d" => Config::D,
        _ => return None,
    };
    let size = PRESET_SIZES.iter().find(|(n, _)| Some(*n) == it.clone().next())?.1;
    it.next();
    let var = it.next()?;
    let (variant, steering) = match var {
        "libpaxos" => (Variant::Libpaxos, false),
        "libpaxosplus" => (Variant::Libpaxos, true),
        "openreplica" => (Variant::OpenReplica, false),
        "spaxos" => (Variant::SPaxos, false),
        "ringpaxos" => (Variant::RingPaxos, false),
        _ => return None,
    };
    Some(build_preset(config, size, variant, steering))
}

pub fn build_preset(config: Config, size: u64, variant: Variant, steering: bool) -> Scenario {
    use NodeClass::*;
    use Region::*;
    let mut s = Scenario::new(variant);
    s.steering = steering;
    s.request_size = size;
    let r = |x: &str| Roles::parse(x).expect("static roles");
    // Classes of (leader, A1, A2, A3, learner) per Table 1.
    let classes = match config {
        Config::A | Config::D => [Small; 5],
        Config::B => [Small, Small, Small, Micro, Small],
        Config::C => [Large, Small, Small, Micro, Small],
    };
    let wan = config == Config::D;
    let separate_leader = matches!(variant, Variant::Libpaxos | Variant::OpenReplica);
    // WAN placement: the region of A1 and A2 depends on the library.
    let (a1_region, a2_region) = if separate_leader {
        (UsWest2b, UsWest2c)
    } else {
        (UsWest2c, UsWest2b)
    };
    let region = |default: Region| if wan { default } else { UsWest2c };
    let node = |name: &str, class, roles, reg| NodeEntry {
        name: name.into(),
        class,
        roles,
        region: reg,
        cpu_factor: 1.0,
    };
    match variant {
        Variant::Libpaxos | Variant::OpenReplica => {
            let leader_roles = if variant == Variant::Libpaxos {
                r("leader")
            } else {
                r("leader,learner")
            };
            s.nodes.push(node("leader", classes[0], leader_roles, UsWest2c));
            s.nodes.push(node("A1", classes[1], r("acceptor"), region(a1_region)));
            s.nodes.push(node("A2", classes[2], r("acceptor"), region(a2_region)));
            s.nodes.push(node("A3", classes[3], r("acceptor"), region(UsEast1b)));
            if variant == Variant::Libpaxos {
                s.nodes.push(node("learner", classes[4], r("learner"), UsWest2c));
            }
        }
        Variant::SPaxos | Variant::RingPaxos => {
            let extra = if variant == Variant::SPaxos { ",learner" } else { "" };
            s.nodes.push(node("A1", classes[0], r(&format!("leader,acceptor{extra}")), UsWest2c));
            s.nodes.push(node("A2", classes[2], r(&format!("acceptor{extra}")), region(a2_region)));
            s.nodes.push(node("A3", classes[3], r(&format!("acceptor{extra}")), region(UsEast1b)));
            if variant == Variant::RingPaxos {
                s.nodes.push(node("learner", classes[4], r("learner"), UsWest2c));
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_round_trips() {
        let names = preset_names();
        assert_eq!(names.len(), 60);
        for n in names {
            let s = preset(&n).unwrap_or_else(|| panic!("{n}"));
            s.validate().unwrap_or_else(|e| panic!("{n}: {e}"));
            let text = render(&s);
            assert_eq!(parse(&text).unwrap(), s, "{n}");
        }
    }

    #[test]
    fn config_b_libpaxos_classes() {
        let s = preset("config_b_4k_libpaxos").unwrap();
        assert_eq!(s.variant, Variant::Libpaxos);
        assert_eq!(s.request_size, 4096);
        let class = |n: &str| s.nodes[s.node_index(n).unwrap()].class;
        assert_eq!(class("leader"), NodeClass::Small);
        assert_eq!(class("A1"), NodeClass::Small);
        assert_eq!(class("A2"), NodeClass::Small);
        assert_eq!(class("A3"), NodeClass::Micro);
    }

    #[test]
    fn wan_placement_follows_library() {
        let lp = preset("config_d_4k_libpaxos").unwrap();
        let reg = |s: &Scenario, n: &str| s.nodes[s.node_index(n).unwrap()].region;
        assert_eq!(reg(&lp, "A1"), Region::UsWest2b);
        assert_eq!(reg(&lp, "A2"), Region::UsWest2c);
        assert_eq!(reg(&lp, "A3"), Region::UsEast1b);
        let sp = preset("config_d_4k_spaxos").unwrap();
        assert_eq!(reg(&sp, "A1"), Region::UsWest2c);
        assert_eq!(reg(&sp, "A2"), Region::UsWest2b);
    }

    #[test]
    fn two_acceptors_rejected() {
        let mut s = preset("config_a_4k_libpaxos").unwrap();
        s.nodes.retain(|n| n.name != "A3");
        let err = parse(&render(&s)).unwrap_err();
        assert!(matches!(err, ScenarioError::Semantic { .. }), "{err}");
    }

    #[test]
    fn late_failure_rejected() {
        let mut s = preset("config_b_4k_libpaxos").unwrap();
        s.duration = VirtualTime::from_secs(150);
        s.failures.push(FailureEntry::At {
            node: "A2".into(),
            at: VirtualTime::from_secs(200),
        });
        match parse(&render(&s)) {
            Err(ScenarioError::Semantic { field, .. }) => assert_eq!(field, "failure.A2"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let text = "[scenario]\nseed = 3\nthis is not a pair\n";
        assert_eq!(
            parse(text),
            Err(ScenarioError::Syntax {
                line: 3,
                msg: "expected `key = value`, got `this is not a pair`".into()
            })
        );
        assert!(matches!(
            parse("[scenario]\nseed = x\n"),
            Err(ScenarioError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            parse("[bogus]\n"),
            Err(ScenarioError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn sweep_placeholder() {
        let mut s = preset("config_b_4k_libpaxos").unwrap();
        s.failures.push(FailureEntry::Sweep { node: "A2".into() });
        let text = render(&s);
        assert!(text.contains("A2 = sweep"));
        let p = parse(&text).unwrap();
        assert!(p.has_sweep_placeholder());
        let k = p.with_kill_time(VirtualTime::from_secs(50)).unwrap();
        assert_eq!(
            k.failures,
            vec![FailureEntry::At {
                node: "A2".into(),
                at: VirtualTime::from_secs(50)
            }]
        );
        assert!(preset("config_b_4k_libpaxos")
            .unwrap()
            .with_kill_time(VirtualTime::from_secs(5))
            .is_err());
    }

    #[test]
    fn bad_policy_is_semantic() {
        let mut s = preset("config_a_4k_libpaxos").unwrap();
        s.attach = AttachPolicy::RandomReplica;
        assert!(matches!(s.validate(), Err(ScenarioError::Semantic { .. })));
    }
}
