use std::fmt;
use std::ops::{Add, AddAssign, Sub};

/// Simulated time in integer nanoseconds since the start of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VirtualTime(u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);
    pub const MAX: VirtualTime = VirtualTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        VirtualTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        VirtualTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        VirtualTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        VirtualTime(s * 1_000_000_000)
    }

    /// Rounds to the nearest nanosecond. Negative or NaN inputs clamp to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if !(s > 0.0) {
            return VirtualTime::ZERO;
        }
        let ns = (s * 1e9).round();
        if ns >= u64::MAX as f64 {
            VirtualTime::MAX
        } else {
            VirtualTime(ns as u64)
        }
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, rhs: VirtualTime) -> VirtualTime {
        VirtualTime(self.0.saturating_sub(rhs.0))
    }

    pub fn checked_sub(self, rhs: VirtualTime) -> Option<VirtualTime> {
        self.0.checked_sub(rhs.0).map(VirtualTime)
    }
}

impl Add for VirtualTime {
    type Output = VirtualTime;
    fn add(self, rhs: VirtualTime) -> VirtualTime {
        VirtualTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for VirtualTime {
    fn add_assign(&mut self, rhs: VirtualTime) {
        *self = *self + rhs;
    }
}

impl Sub for VirtualTime {
    type Output = VirtualTime;
    fn sub(self, rhs: VirtualTime) -> VirtualTime {
        VirtualTime(self.0 - rhs.0)
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions() {
        assert_eq!(VirtualTime::from_secs(2).as_nanos(), 2_000_000_000);
        assert_eq!(VirtualTime::from_millis(3), VirtualTime::from_micros(3_000));
        assert_eq!(VirtualTime::from_secs_f64(0.75e-3).as_nanos(), 750_000);
        assert_eq!(VirtualTime::from_secs_f64(-1.0), VirtualTime::ZERO);
        assert_eq!(VirtualTime::from_secs_f64(f64::INFINITY), VirtualTime::MAX);
    }

    #[test]
    fn ordering_and_arithmetic() {
        let a = VirtualTime::from_secs(1);
        let b = VirtualTime::from_millis(1500);
        assert!(a < b);
        assert_eq!(b - a, VirtualTime::from_millis(500));
        assert_eq!(a.saturating_sub(b), VirtualTime::ZERO);
        assert_eq!(VirtualTime::MAX + a, VirtualTime::MAX);
    }
}
