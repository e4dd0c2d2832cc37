//! Virtual clock with fixed 1 ms resolution.
//!
//! All simulation timestamps are integer millisecond counts wrapped in
//! [`VirtualTime`]. Using a fixed-point representation keeps event ordering
//! exact and makes serialized timestamps byte-stable across runs.

use serde::{Deserialize, Serialize};
use std::fmt;

/// A point in virtual time, counted in whole milliseconds since run start.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VirtualTime(u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);

    pub fn from_millis(ms: u64) -> Self {
        VirtualTime(ms)
    }

    /// Converts seconds to virtual time, rounding to the nearest millisecond.
    pub fn from_secs_f64(secs: f64) -> Self {
        assert!(
            secs.is_finite() && secs >= 0.0,
            "virtual time must be finite and non-negative, got {secs}"
        );
        VirtualTime((secs * 1000.0).round() as u64)
    }

    pub fn millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn plus_millis(self, ms: u64) -> Self {
        VirtualTime(self.0 + ms)
    }

    pub fn plus_secs_f64(self, secs: f64) -> Self {
        self.plus_millis(VirtualTime::from_secs_f64(secs).0)
    }

    pub fn saturating_sub(self, other: VirtualTime) -> u64 {
        self.0.saturating_sub(other.0)
    }

    /// Elapsed seconds since `earlier`; zero if `earlier` is in the future.
    pub fn secs_since(self, earlier: VirtualTime) -> f64 {
        self.saturating_sub(earlier) as f64 / 1000.0
    }
}

impl fmt::Display for VirtualTime {
    /// Renders as seconds with exactly three decimals, e.g. `5.000`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}", self.0 / 1000, self.0 % 1000)
    }
}

impl fmt::Debug for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={self}")
    }
}
