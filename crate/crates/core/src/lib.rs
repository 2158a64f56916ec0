pub mod arch;
pub mod audit;
pub mod message;
pub mod metrics;
pub mod net;
pub mod paxos;
pub mod sim;
pub mod steering;
pub mod world;
pub mod scenario;
pub mod workload;
pub mod runner;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/engine.md")]
    mod engine {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/architectures.md")]
    mod architectures {}
    #[doc = include_str!("../../../book/src/steering.md")]
    mod steering {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
}
