//! Monotonic time points, durations and the clocks that produce them.
//!
//! Every timestamp in a run is an integer count of nanoseconds since the run
//! epoch. Arithmetic is checked: an overflow or a negative duration panics
//! instead of wrapping.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Nanoseconds since the run epoch.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct TimePoint(u64);

/// A non-negative span of nanoseconds.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct DurationNs(u64);

impl TimePoint {
    pub const ZERO: TimePoint = TimePoint(0);

    pub const fn from_nanos(ns: u64) -> Self {
        TimePoint(ns)
    }

    pub const fn from_millis(ms: u64) -> Self {
        TimePoint(ms * 1_000_000)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn checked_add(self, d: DurationNs) -> Option<TimePoint> {
        self.0.checked_add(d.0).map(TimePoint)
    }

    /// `self - earlier`, or `None` if `earlier` is later than `self`.
    pub fn checked_duration_since(self, earlier: TimePoint) -> Option<DurationNs> {
        self.0.checked_sub(earlier.0).map(DurationNs)
    }

    pub fn saturating_duration_since(self, earlier: TimePoint) -> DurationNs {
        DurationNs(self.0.saturating_sub(earlier.0))
    }
}

impl DurationNs {
    pub const ZERO: DurationNs = DurationNs(0);

    pub const fn from_nanos(ns: u64) -> Self {
        DurationNs(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        DurationNs(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        DurationNs(ms * 1_000_000)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, other: DurationNs) -> Option<DurationNs> {
        self.0.checked_add(other.0).map(DurationNs)
    }

    pub fn checked_sub(self, other: DurationNs) -> Option<DurationNs> {
        self.0.checked_sub(other.0).map(DurationNs)
    }

    pub fn checked_mul(self, factor: u64) -> Option<DurationNs> {
        self.0.checked_mul(factor).map(DurationNs)
    }

    pub fn to_std(self) -> Duration {
        Duration::from_nanos(self.0)
    }
}

impl From<Duration> for DurationNs {
    fn from(d: Duration) -> Self {
        DurationNs(u64::try_from(d.as_nanos()).expect("duration exceeds u64 nanoseconds"))
    }
}

impl Add<DurationNs> for TimePoint {
    type Output = TimePoint;

    fn add(self, d: DurationNs) -> TimePoint {
        self.checked_add(d).expect("time point overflow")
    }
}

impl AddAssign<DurationNs> for TimePoint {
    fn add_assign(&mut self, d: DurationNs) {
        *self = *self + d;
    }
}

impl Sub for TimePoint {
    type Output = DurationNs;

    fn sub(self, earlier: TimePoint) -> DurationNs {
        self.checked_duration_since(earlier)
            .expect("negative duration between time points")
    }
}

impl Add for DurationNs {
    type Output = DurationNs;

    fn add(self, other: DurationNs) -> DurationNs {
        self.checked_add(other).expect("duration overflow")
    }
}

impl Sub for DurationNs {
    type Output = DurationNs;

    fn sub(self, other: DurationNs) -> DurationNs {
        self.checked_sub(other).expect("negative duration")
    }
}

impl Mul<u64> for DurationNs {
    type Output = DurationNs;

    fn mul(self, factor: u64) -> DurationNs {
        self.checked_mul(factor).expect("duration overflow")
    }
}

impl fmt::Display for TimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

impl fmt::Display for DurationNs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Source of the current time for a run.
pub trait Clock: Send + Sync {
    fn now(&self) -> TimePoint;
}

/// How a run measures time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    /// Simulated time advanced by declared execution durations.
    #[default]
    Virtual,
    /// Host monotonic clock; bodies busy-spin for their declared duration.
    Wall,
}

/// Monotonic host clock measured from the instant it was created.
#[derive(Clone, Debug)]
pub struct WallClock {
    epoch: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        WallClock {
            epoch: Instant::now(),
        }
    }

    pub fn epoch(&self) -> Instant {
        self.epoch
    }

    /// Host instant corresponding to a time point of this clock.
    pub fn instant_at(&self, t: TimePoint) -> Instant {
        self.epoch + Duration::from_nanos(t.as_nanos())
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> TimePoint {
        let ns = self.epoch.elapsed().as_nanos();
        TimePoint(u64::try_from(ns).expect("wall clock exceeds u64 nanoseconds"))
    }
}

/// Simulated clock. Only moves when the owner advances it.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: AtomicU64,
}

impl VirtualClock {
    pub fn new() -> Self {
        VirtualClock {
            now: AtomicU64::new(0),
        }
    }

    /// Moves the clock forward to `t`.
    ///
    /// Panics if `t` is earlier than the current time.
    pub fn advance_to(&self, t: TimePoint) {
        let prev = self.now.fetch_max(t.0, Ordering::AcqRel);
        assert!(prev <= t.0, "virtual clock moved backwards: {prev} -> {}", t.0);
    }

    pub fn advance(&self, d: DurationNs) {
        let t = self.now() + d;
        self.advance_to(t);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> TimePoint {
        TimePoint(self.now.load(Ordering::Acquire))
    }
}

/// Spins until `clock` reaches `deadline`.
pub(crate) fn spin_until(clock: &WallClock, deadline: TimePoint) {
    let target = clock.instant_at(deadline);
    while Instant::now() < target {
        std::hint::spin_loop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let t = TimePoint::from_millis(25);
        assert_eq!(t + DurationNs::from_millis(5), TimePoint::from_millis(30));
        assert_eq!(
            TimePoint::from_millis(30) - TimePoint::from_millis(25),
            DurationNs::from_millis(5)
        );
        assert_eq!(DurationNs::from_millis(25) * 4, DurationNs::from_millis(100));
        assert_eq!(
            TimePoint::from_millis(1).checked_duration_since(TimePoint::from_millis(2)),
            None
        );
    }

    #[test]
    #[should_panic(expected = "negative duration")]
    fn subtraction_never_wraps() {
        let _ = TimePoint::from_nanos(1) - TimePoint::from_nanos(2);
    }

    #[test]
    #[should_panic(expected = "overflow")]
    fn addition_never_wraps() {
        let _ = TimePoint::from_nanos(u64::MAX) + DurationNs::from_nanos(1);
    }

    #[test]
    fn virtual_clock_advances() {
        let clock = VirtualClock::new();
        assert_eq!(clock.now(), TimePoint::ZERO);
        clock.advance(DurationNs::from_millis(3));
        clock.advance_to(TimePoint::from_millis(10));
        assert_eq!(clock.now(), TimePoint::from_millis(10));
    }

    #[test]
    #[should_panic(expected = "backwards")]
    fn virtual_clock_is_monotonic() {
        let clock = VirtualClock::new();
        clock.advance_to(TimePoint::from_millis(10));
        clock.advance_to(TimePoint::from_millis(9));
    }

    #[test]
    fn wall_clock_is_monotonic() {
        let clock = WallClock::new();
        let a = clock.now();
        let b = clock.now();
        assert!(b >= a);
    }
}
