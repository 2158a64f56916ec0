//! The four library models: who plays which role, who talks to whom, where
//! batching happens, and which I/O discipline each connection uses.

mod classic;
pub mod pipeline;
mod ring;
mod spaxos;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::net::Network;
use crate::sim::{NodeId, VirtualTime};
use crate::steering::SteeringParams;
use crate::world::Protocol;

pub use ring::{ring_reconfigure, RingState};
pub use spaxos::StableTracker;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Libpaxos,
    OpenReplica,
    SPaxos,
    RingPaxos,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Libpaxos,
        Variant::OpenReplica,
        Variant::SPaxos,
        Variant::RingPaxos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Libpaxos => "libpaxos",
            Variant::OpenReplica => "openreplica",
            Variant::SPaxos => "spaxos",
            Variant::RingPaxos => "ringpaxos",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "libpaxos" => Ok(Variant::Libpaxos),
            "openreplica" => Ok(Variant::OpenReplica),
            "spaxos" => Ok(Variant::SPaxos),
            "ringpaxos" | "ring" => Ok(Variant::RingPaxos),
            _ => Err(format!("unknown variant `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Roles {
    pub leader: bool,
    pub acceptor: bool,
    pub learner: bool,
}

impl Roles {
    pub fn parse(s: &str) -> Result<Roles, String> {
        let mut r = Roles::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "leader" | "proposer" | "coordinator" => r.leader = true,
                "acceptor" => r.acceptor = true,
                "learner" | "replica" => r.learner = true,
                other => return Err(format!("unknown role `{other}`")),
            }
        }
        Ok(r)
    }

    pub fn is_empty(&self) -> bool {
        !(self.leader || self.acceptor || self.learner)
    }
}

impl fmt::Display for Roles {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = vec![];
        if self.leader {
            parts.push("leader");
        }
        if self.acceptor {
            parts.push("acceptor");
        }
        if self.learner {
            parts.push("learner");
        }
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArchError {
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("node {0} is not in the ring")]
    NodeNotInRing(NodeId),
}

/// Tunables that only some variants read.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchParams {
    pub steering: Option<SteeringParams>,
    /// CPU cost multiplier of the OpenReplica leader-replica.
    pub openreplica_cpu_factor: f64,
    /// Maximum undecided instances at the OpenReplica leader.
    pub openreplica_window: usize,
    pub spaxos_batch_bytes: u64,
    pub spaxos_flush: VirtualTime,
    /// Maximum ordered-but-undecided S-Paxos instances at the leader.
    pub spaxos_window: usize,
    pub ring_session_timeout: VirtualTime,
    pub ring_reconfig_delay: VirtualTime,
}

impl Default for ArchParams {
    fn default() -> Self {
        ArchParams {
            steering: None,
            openreplica_cpu_factor: 5.0,
            openreplica_window: 16,
            spaxos_batch_bytes: 1024,
            spaxos_flush: VirtualTime::from_millis(5),
            spaxos_window: 64,
            ring_session_timeout: VirtualTime::from_secs(3),
            ring_reconfig_delay: VirtualTime::from_millis(500),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    pub variant: Variant,
    pub f: usize,
    /// Server nodes with their roles, in configuration order.
    pub nodes: Vec<(NodeId, Roles)>,
    pub params: ArchParams,
}

impl ArchConfig {
    pub fn leader(&self) -> Result<NodeId, ArchError> {
        let leaders: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|(_, r)| r.leader)
            .map(|(n, _)| *n)
            .collect();
        match leaders.as_slice() {
            [l] => Ok(*l),
            _ => Err(ArchError::BadConfig(format!(
                "exactly one leader required, found {}",
                leaders.len()
            ))),
        }
    }

    pub fn acceptors(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, r)| r.acceptor)
            .map(|(n, _)| *n)
            .collect()
    }

    pub fn learners(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, r)| r.learner)
            .map(|(n, _)| *n)
            .collect()
    }

    fn roles(&self, n: NodeId) -> Roles {
        self.nodes
            .iter()
            .find(|(m, _)| *m == n)
            .map(|(_, r)| *r)
            .unwrap_or_default()
    }

    /// Checks the role constraints of the variant.
    pub fn validate(&self) -> Result<(), ArchError> {
        let bad = |m: String| Err(ArchError::BadConfig(m));
        let leader = self.leader()?;
        let acc = self.acceptors();
        if acc.len() != 2 * self.f + 1 {
            return bad(format!(
                "{} acceptors configured, 2f+1 = {} required",
                acc.len(),
                2 * self.f + 1
            ));
        }
        let lr = self.roles(leader);
        let learners = self.learners();
        match self.variant {
            Variant::Libpaxos => {
                if lr.acceptor {
                    return bad("the libpaxos proposer is not an acceptor".into());
                }
                if learners.is_empty() {
                    return bad("libpaxos needs at least one learner".into());
                }
            }
            Variant::OpenReplica => {
                if lr.acceptor {
                    return bad("the openreplica leader-replica is not an acceptor".into());
                }
            }
            Variant::SPaxos => {
                for (n, r) in &self.nodes {
                    if !(r.acceptor && r.learner) {
                        return bad(format!(
                            "node {n}: every s-paxos replica is proposer, acceptor and learner"
                        ));
                    }
                }
                if acc.first() != Some(&leader) {
                    return bad("the s-paxos leader must be the first replica".into());
                }
            }
            Variant::RingPaxos => {
                if acc.first() != Some(&leader) {
                    return bad("the ring coordinator must be the first acceptor".into());
                }
                if !learners.iter().any(|l| !acc.contains(l)) {
                    return bad("ring paxos needs a learner outside the acceptor set".into());
                }
            }
        }
        Ok(())
    }

    /// The learner whose deliveries define system throughput.
    pub fn reference_learner(&self) -> Result<NodeId, ArchError> {
        Ok(match self.variant {
            Variant::Libpaxos | Variant::RingPaxos => {
                let acc = self.acceptors();
                *self
                    .learners()
                    .iter()
                    .find(|l| !acc.contains(l))
                    .ok_or_else(|| ArchError::BadConfig("no learner".into()))?
            }
            Variant::OpenReplica | Variant::SPaxos => self.leader()?,
        })
    }

    /// Nodes clients (or client proxies) submit to.
    pub fn entry_points(&self) -> Result<Vec<NodeId>, ArchError> {
        Ok(match self.variant {
            Variant::Libpaxos | Variant::OpenReplica => vec![self.leader()?],
            Variant::SPaxos => self.acceptors(),
            Variant::RingPaxos => vec![self.reference_learner()?],
        })
    }
}

/// Wires `cfg` over `net`: sets disciplines, stall policies and CPU factors,
/// and returns the protocol state machine.
pub fn build(cfg: &ArchConfig, net: &mut Network) -> Result<Box<dyn Protocol>, ArchError> {
    cfg.validate()?;
    Ok(match cfg.variant {
        Variant::Libpaxos => Box::new(classic::wire_libpaxos(cfg, net)?),
        Variant::OpenReplica => Box::new(classic::wire_openreplica(cfg, net)?),
        Variant::SPaxos => Box::new(spaxos::wire_spaxos(cfg, net)?),
        Variant::RingPaxos => Box::new(ring::wire_ring(cfg, net)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(s: &str) -> Roles {
        Roles::parse(s).unwrap()
    }

    fn libpaxos() -> ArchConfig {
        ArchConfig {
            variant: Variant::Libpaxos,
            f: 1,
            nodes: vec![
                (0, r("leader")),
                (1, r("acceptor")),
                (2, r("acceptor")),
                (3, r("acceptor")),
                (4, r("learner")),
            ],
            params: ArchParams::default(),
        }
    }

    #[test]
    fn role_validation() {
        assert!(libpaxos().validate().is_ok());
        let mut c = libpaxos();
        c.nodes.remove(3);
        assert!(matches!(c.validate(), Err(ArchError::BadConfig(_))));
        let mut c = libpaxos();
        c.nodes[0].1.acceptor = true;
        assert!(c.validate().is_err());
        let mut c = libpaxos();
        c.variant = Variant::SPaxos;
        assert!(c.validate().is_err());
    }

    #[test]
    fn roles_round_trip() {
        let x = r("leader, acceptor,learner");
        assert_eq!(r(&x.to_string()), x);
        assert!(Roles::parse("janitor").is_err());
    }

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("Ring-Paxos".parse::<Variant>().unwrap(), Variant::RingPaxos);
    }
}
