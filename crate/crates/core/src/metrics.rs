//! Windowed measurements of a run and their summaries.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::sim::{NodeId, VirtualTime};

pub const WINDOW: VirtualTime = VirtualTime::from_secs(1);
pub const MIN_GAP: VirtualTime = VirtualTime::from_secs(1);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no samples")]
    EmptySamples,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencySample {
    pub t: VirtualTime,
    pub latency: VirtualTime,
    pub client: NodeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BufferSample {
    pub t_s: u64,
    pub node: NodeId,
    pub peer: NodeId,
    pub kernel_bytes: u64,
    pub app_bytes: u64,
}

/// All series of one run. Windows are half-open `[k, k+1)` seconds.
#[derive(Clone, Debug, Default)]
pub struct MetricSeries {
    payload_bytes: Vec<u64>,
    instances: Vec<u64>,
    quorum_counts: BTreeMap<NodeId, Vec<u64>>,
    decision_times: Vec<VirtualTime>,
    pub latency_samples: Vec<LatencySample>,
    pub buffer_series: Vec<BufferSample>,
    /// Leader busy fraction per window, filled in at the end of the run.
    pub leader_cpu_util: Vec<f64>,
    /// Leader CPU seconds spent on failed retries per window.
    pub leader_retry_tax: Vec<f64>,
    pub warnings: Vec<String>,
    /// First-quorum memberships over instances issued while steering.
    pub steered_quorum: BTreeMap<NodeId, u64>,
    pub steered_decisions: u64,
}

fn bump(v: &mut Vec<u64>, k: usize, by: u64) {
    if v.len() <= k {
        v.resize(k + 1, 0);
    }
    v[k] += by;
}

fn window_of(t: VirtualTime) -> usize {
    (t.as_nanos() / WINDOW.as_nanos()) as usize
}

impl MetricSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on_decision(&mut self, t: VirtualTime, payload_size: u64, first_quorum: &[NodeId]) {
        let k = window_of(t);
        bump(&mut self.payload_bytes, k, payload_size);
        bump(&mut self.instances, k, 1);
        for a in first_quorum {
            bump(self.quorum_counts.entry(*a).or_default(), k, 1);
        }
        self.decision_times.push(t);
    }

    pub fn on_steered_decision(&mut self, first_quorum: &[NodeId]) {
        self.steered_decisions += 1;
        for a in first_quorum {
            *self.steered_quorum.entry(*a).or_default() += 1;
        }
    }

    /// Registers an acceptor so that it gets a (possibly all-zero) series.
    pub fn track_acceptor(&mut self, a: NodeId) {
        self.quorum_counts.entry(a).or_default();
    }

    pub fn on_latency(&mut self, t: VirtualTime, client: NodeId, latency: VirtualTime) {
        self.latency_samples.push(LatencySample { t, latency, client });
    }

    /// Pads every per-window series to `windows` entries.
    pub fn finalize(&mut self, windows: usize) {
        self.payload_bytes.resize(windows.max(self.payload_bytes.len()), 0);
        self.instances.resize(windows.max(self.instances.len()), 0);
        let n = self.payload_bytes.len().max(self.instances.len());
        self.payload_bytes.resize(n, 0);
        self.instances.resize(n, 0);
        for v in self.quorum_counts.values_mut() {
            v.resize(n.max(v.len()), 0);
        }
        self.leader_cpu_util.resize(n, 0.0);
        self.leader_retry_tax.resize(n, 0.0);
    }

    pub fn windows(&self) -> usize {
        self.payload_bytes.len()
    }

    pub fn throughput_mbps(&self) -> Vec<f64> {
        self.payload_bytes
            .iter()
            .map(|b| *b as f64 * 8.0 / 1e6 / WINDOW.as_secs_f64())
            .collect()
    }

    pub fn instances_per_s(&self) -> Vec<f64> {
        self.instances
            .iter()
            .map(|n| *n as f64 / WINDOW.as_secs_f64())
            .collect()
    }

    pub fn quorum_counts(&self) -> &BTreeMap<NodeId, Vec<u64>> {
        &self.quorum_counts
    }

    pub fn decision_times(&self) -> &[VirtualTime] {
        &self.decision_times
    }

    pub fn decisions_total(&self) -> u64 {
        self.decision_times.len() as u64
    }

    pub fn total_payload_bytes(&self) -> u64 {
        self.payload_bytes.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DowntimeReport {
    pub gaps: Vec<(VirtualTime, VirtualTime)>,
    pub max_gap_s: f64,
}

/// Maximal zero-decision intervals of at least `min_gap` inside
/// `[from, to]`, given sorted decision timestamps.
pub fn downtime(
    decisions: &[VirtualTime],
    from: VirtualTime,
    to: VirtualTime,
    min_gap: VirtualTime,
) -> DowntimeReport {
    let mut gaps = Vec::new();
    let mut prev = from;
    let inside = decisions.iter().copied().filter(|t| *t >= from && *t <= to);
    for t in inside.chain(std::iter::once(to)) {
        if t.saturating_sub(prev) >= min_gap {
            gaps.push((prev, t));
        }
        prev = t;
    }
    let max_gap_s = gaps
        .iter()
        .map(|(a, b)| (*b - *a).as_secs_f64())
        .fold(0.0, f64::max);
    DowntimeReport { gaps, max_gap_s }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

/// Nearest-rank order statistics over `samples` (any unit).
pub fn latency_stats(samples: &[f64]) -> Result<LatencyStats, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = |p: f64| {
        let r = (p / 100.0 * s.len() as f64).ceil() as usize;
        s[r.clamp(1, s.len()) - 1]
    };
    Ok(LatencyStats {
        mean: s.iter().sum::<f64>() / s.len() as f64,
        p50: rank(50.0),
        p95: rank(95.0),
        p99: rank(99.0),
        max: *s.last().expect("non-empty"),
    })
}

/// Busy fraction of one window, clamped to `[0, 1]`.
pub fn utilization(busy_secs: f64, window: VirtualTime) -> f64 {
    (busy_secs / window.as_secs_f64()).clamp(0.0, 1.0)
}

/// One-dimensional 2-means. Returns `(low mean, high mean, labels)` where a
/// label is `true` for members of the high cluster.
pub fn two_means(values: &[f64]) -> Option<(f64, f64, Vec<bool>)> {
    if values.len() < 2 {
        return None;
    }
    let lo0 = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi0 = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (lo0, hi0);
    let mut labels = vec![false; values.len()];
    for _ in 0..100 {
        for (l, v) in labels.iter_mut().zip(values) {
            *l = (v - hi).abs() < (v - lo).abs();
        }
        let mean = |want: bool| {
            let (s, n) = values
                .iter()
                .zip(&labels)
                .filter(|(_, l)| **l == want)
                .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
            (n > 0).then(|| s / n as f64)
        };
        let (nlo, nhi) = (mean(false).unwrap_or(lo), mean(true).unwrap_or(hi));
        if nlo == lo && nhi == hi {
            break;
        }
        lo = nlo;
        hi = nhi;
    }
    Some((lo, hi, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: f64) -> VirtualTime {
        VirtualTime::from_secs_f64(x)
    }

    #[test]
    fn one_decision_in_a_window() {
        let mut m = MetricSeries::new();
        m.on_decision(s(0.5), 4096, &[1, 3]);
        m.finalize(3);
        let tp = m.throughput_mbps();
        assert!((tp[0] - 0.032768).abs() < 1e-12);
        assert_eq!(tp[1], 0.0);
        assert_eq!(tp.len(), 3);
        assert_eq!(m.quorum_counts()[&1][0], 1);
        assert_eq!(m.quorum_counts()[&3][0], 1);
        assert!(!m.quorum_counts().contains_key(&2));
    }

    #[test]
    fn throughput_conserves_bytes() {
        let mut m = MetricSeries::new();
        let mut total = 0;
        for i in 0..1000u64 {
            let size = 100 + (i * 37) % 5000;
            total += size;
            m.on_decision(s(i as f64 * 0.0137), size, &[1, 2]);
        }
        m.finalize(0);
        let bits: f64 = m.throughput_mbps().iter().sum::<f64>() * 1e6;
        assert!((bits - total as f64 * 8.0).abs() < 1e-3);
        let per_window: u64 = m.quorum_counts().values().map(|v| v.iter().sum::<u64>()).sum();
        assert_eq!(per_window, 2 * m.decisions_total());
    }

    #[test]
    fn downtime_examples() {
        let cont: Vec<VirtualTime> = (0..1000).map(|i| s(i as f64 * 0.1)).collect();
        let r = downtime(&cont, s(0.0), s(99.9), MIN_GAP);
        assert!(r.gaps.is_empty());
        assert_eq!(r.max_gap_s, 0.0);

        let mut d: Vec<VirtualTime> = (0..500).map(|i| s(i as f64 * 0.1)).collect();
        d.extend((540..1000).map(|i| s(i as f64 * 0.1)));
        let r = downtime(&d, s(0.0), s(99.9), MIN_GAP);
        assert_eq!(r.gaps.len(), 1);
        assert!((r.max_gap_s - 4.1).abs() < 1e-9);

        let mut d: Vec<VirtualTime> = (0..100).map(|i| s(i as f64 * 0.1)).collect();
        d.extend((130..300).map(|i| s(i as f64 * 0.1)));
        d.extend((480..600).map(|i| s(i as f64 * 0.1)));
        let r = downtime(&d, s(0.0), s(59.9), MIN_GAP);
        assert_eq!(r.gaps.len(), 2);
        assert!((r.max_gap_s - 18.1).abs() < 1e-9);
    }

    #[test]
    fn trailing_silence_counts() {
        let d = vec![s(1.0), s(1.5), s(2.0)];
        let r = downtime(&d, s(0.5), s(10.0), MIN_GAP);
        assert_eq!(r.gaps, vec![(s(2.0), s(10.0))]);
    }

    #[test]
    fn latency_examples() {
        let one = latency_stats(&[10.0]).unwrap();
        assert_eq!((one.mean, one.p50, one.p99, one.max), (10.0, 10.0, 10.0, 10.0));
        let v: Vec<f64> = (1..=100).rev().map(|x| x as f64).collect();
        let st = latency_stats(&v).unwrap();
        assert_eq!(st.p50, 50.0);
        assert_eq!(st.p95, 95.0);
        assert_eq!(st.p99, 99.0);
        assert_eq!(st.max, 100.0);
        assert_eq!(latency_stats(&[]), Err(MetricsError::EmptySamples));
    }

    #[test]
    fn utilization_is_clamped() {
        assert_eq!(utilization(0.0, WINDOW), 0.0);
        assert_eq!(utilization(1.0 + 1e-12, WINDOW), 1.0);
    }

    #[test]
    fn two_means_separates_plateaus() {
        let v = [10.0, 11.0, 30.0, 9.5, 31.0, 29.0];
        let (lo, hi, labels) = two_means(&v).unwrap();
        assert!((lo - 10.166_666).abs() < 1e-3);
        assert!((hi - 30.0).abs() < 1e-9);
        assert_eq!(labels, vec![false, false, true, false, true, true]);
    }
}
