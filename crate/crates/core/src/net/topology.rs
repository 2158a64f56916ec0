use std::fmt;
use std::str::FromStr;

use crate::sim::{NodeId, VirtualTime};

/// CPU capacity of a SMALL node, in bytes of message processing per second.
pub const REFERENCE_CPU_RATE: f64 = 25e6;
/// Egress bandwidth of a SMALL node (100 Mb/s), in bytes per second.
pub const REFERENCE_BANDWIDTH: f64 = 100e6 / 8.0;
/// Bandwidth of links that cross between the west and east regions.
pub const WAN_BANDWIDTH: f64 = 10e6 / 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeClass {
    Micro,
    Small,
    Large,
    /// Load generators and proxies: no CPU cost, unconstrained egress.
    Client,
}

impl NodeClass {
    pub fn cpu_rate(self) -> f64 {
        match self {
            NodeClass::Micro => 0.5 * REFERENCE_CPU_RATE,
            NodeClass::Small => REFERENCE_CPU_RATE,
            NodeClass::Large => 4.0 * REFERENCE_CPU_RATE,
            NodeClass::Client => f64::INFINITY,
        }
    }

    pub fn bandwidth(self) -> f64 {
        match self {
            NodeClass::Micro => 0.25 * REFERENCE_BANDWIDTH,
            NodeClass::Small => REFERENCE_BANDWIDTH,
            NodeClass::Large => 2.0 * REFERENCE_BANDWIDTH,
            NodeClass::Client => f64::INFINITY,
        }
    }

    /// Seconds of CPU per message handled or sent.
    pub fn fixed_msg_cost(self) -> f64 {
        match self {
            NodeClass::Micro => 40e-6,
            NodeClass::Small => 20e-6,
            NodeClass::Large => 5e-6,
            NodeClass::Client => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeClass::Micro => "micro",
            NodeClass::Small => "small",
            NodeClass::Large => "large",
            NodeClass::Client => "client",
        }
    }
}

impl fmt::Display for NodeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NodeClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "micro" => Ok(NodeClass::Micro),
            "small" => Ok(NodeClass::Small),
            "large" => Ok(NodeClass::Large),
            "client" => Ok(NodeClass::Client),
            _ => Err(format!("unknown node class `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Region {
    #[default]
    UsWest2c,
    UsWest2b,
    UsEast1b,
}

impl Region {
    pub fn name(self) -> &'static str {
        match self {
            Region::UsWest2c => "us-west-2c",
            Region::UsWest2b => "us-west-2b",
            Region::UsEast1b => "us-east-1b",
        }
    }

    fn is_east(self) -> bool {
        matches!(self, Region::UsEast1b)
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Region {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "us-west-2c" => Ok(Region::UsWest2c),
            "us-west-2b" => Ok(Region::UsWest2b),
            "us-east-1b" => Ok(Region::UsEast1b),
            _ => Err(format!("unknown region `{s}`")),
        }
    }
}

/// Round-trip time between two regions, in milliseconds.
pub fn region_rtt_ms(a: Region, b: Region) -> f64 {
    use Region::*;
    match (a.min(b), a.max(b)) {
        (x, y) if x == y => 1.5,
        (UsWest2c, UsWest2b) => 3.9,
        (UsWest2c, UsEast1b) => 82.0,
        (UsWest2b, UsEast1b) => 90.0,
        _ => unreachable!("pairs are normalised"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub name: String,
    pub class: NodeClass,
    /// Bytes per second of message processing.
    pub cpu_rate: f64,
    /// Seconds of CPU charged per message handled or sent.
    pub fixed_msg_cost: f64,
    /// Egress NIC bandwidth in bytes per second.
    pub bandwidth: f64,
    pub region: Region,
    /// Multiplier on every CPU cost (models interpreter overhead).
    pub cpu_factor: f64,
    pub alive: bool,
}

impl NodeSpec {
    pub fn new(id: NodeId, name: impl Into<String>, class: NodeClass, region: Region) -> Self {
        NodeSpec {
            id,
            name: name.into(),
            class,
            cpu_rate: class.cpu_rate(),
            fixed_msg_cost: class.fixed_msg_cost(),
            bandwidth: class.bandwidth(),
            region,
            cpu_factor: 1.0,
            alive: true,
        }
    }

    /// CPU seconds to handle a message of `size` bytes (before jitter).
    pub fn receive_cost(&self, size: u64) -> f64 {
        if self.class == NodeClass::Client {
            return 0.0;
        }
        (self.fixed_msg_cost + size as f64 / self.cpu_rate) * self.cpu_factor
    }

    /// CPU seconds to copy a message of `size` bytes out of the application.
    pub fn send_cost(&self, size: u64) -> f64 {
        self.receive_cost(size)
    }

    /// CPU seconds of one write call that moves already-copied data.
    pub fn syscall_cost(&self) -> f64 {
        self.fixed_msg_cost * self.cpu_factor
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkSpec {
    pub src: NodeId,
    pub dst: NodeId,
    pub one_way_latency: VirtualTime,
    /// Bytes per second.
    pub bandwidth: f64,
}

impl LinkSpec {
    /// Link derived from the endpoints' regions and classes: half the region
    /// RTT, and the smaller endpoint bandwidth (capped on west-east paths).
    pub fn between(src: &NodeSpec, dst: &NodeSpec) -> LinkSpec {
        let mut bandwidth = src.bandwidth.min(dst.bandwidth);
        if src.region.is_east() != dst.region.is_east() {
            bandwidth = bandwidth.min(WAN_BANDWIDTH);
        }
        LinkSpec {
            src: src.id,
            dst: dst.id,
            one_way_latency: VirtualTime::from_secs_f64(
                region_rtt_ms(src.region, dst.region) / 2.0 / 1e3,
            ),
            bandwidth,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_ordering() {
        use NodeClass::*;
        assert!(Micro.cpu_rate() < Small.cpu_rate() && Small.cpu_rate() < Large.cpu_rate());
        assert!(Micro.bandwidth() < Small.bandwidth() && Small.bandwidth() < Large.bandwidth());
        assert_eq!(Large.cpu_rate(), 4.0 * Small.cpu_rate());
        assert_eq!(Micro.bandwidth(), 0.25 * Small.bandwidth());
    }

    #[test]
    fn rtts_are_symmetric() {
        use Region::*;
        for a in [UsWest2c, UsWest2b, UsEast1b] {
            for b in [UsWest2c, UsWest2b, UsEast1b] {
                assert_eq!(region_rtt_ms(a, b), region_rtt_ms(b, a));
            }
        }
        assert_eq!(region_rtt_ms(UsWest2c, UsWest2c), 1.5);
        assert_eq!(region_rtt_ms(UsWest2b, UsWest2c), 3.9);
        assert_eq!(region_rtt_ms(UsEast1b, UsWest2c), 82.0);
        assert_eq!(region_rtt_ms(UsWest2b, UsEast1b), 90.0);
    }

    #[test]
    fn derived_links() {
        let a = NodeSpec::new(0, "A", NodeClass::Small, Region::UsWest2c);
        let m = NodeSpec::new(1, "M", NodeClass::Micro, Region::UsWest2c);
        let e = NodeSpec::new(2, "E", NodeClass::Small, Region::UsEast1b);
        let l = LinkSpec::between(&a, &m);
        assert_eq!(l.bandwidth, NodeClass::Micro.bandwidth());
        assert_eq!(l.one_way_latency, VirtualTime::from_micros(750));
        let w = LinkSpec::between(&a, &e);
        assert_eq!(w.bandwidth, WAN_BANDWIDTH);
        assert_eq!(w.one_way_latency, VirtualTime::from_millis(41));
    }

    #[test]
    fn parse_names() {
        assert_eq!("MICRO".parse::<NodeClass>().unwrap(), NodeClass::Micro);
        assert_eq!("us-east-1b".parse::<Region>().unwrap(), Region::UsEast1b);
        assert!("mars".parse::<Region>().is_err());
    }
}
