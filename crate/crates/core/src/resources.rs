//! Resource quantities and exact utilization shares.

use std::fmt;
use std::ops::Add;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::ClusterError;

/// Resource quantities tracked per node and per request.
///
/// All three dimensions are unsigned integers so that capacity accounting
/// never drifts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResourceVector {
    pub cpu_millis: u64,
    pub memory_bytes: u64,
    pub disk_bytes: u64,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector::new(0, 0, 0);

    pub const fn new(cpu_millis: u64, memory_bytes: u64, disk_bytes: u64) -> Self {
        Self {
            cpu_millis,
            memory_bytes,
            disk_bytes,
        }
    }

    pub fn components(&self) -> [u64; 3] {
        [self.cpu_millis, self.memory_bytes, self.disk_bytes]
    }

    pub fn is_zero(&self) -> bool {
        self.components().iter().all(|c| *c == 0)
    }

    /// Component-wise `self >= other`.
    pub fn covers(&self, other: &ResourceVector) -> bool {
        self.cpu_millis >= other.cpu_millis
            && self.memory_bytes >= other.memory_bytes
            && self.disk_bytes >= other.disk_bytes
    }

    /// Component-wise subtraction; fails if any component would go negative.
    pub fn checked_sub(&self, other: &ResourceVector) -> Result<ResourceVector, ClusterError> {
        match (
            self.cpu_millis.checked_sub(other.cpu_millis),
            self.memory_bytes.checked_sub(other.memory_bytes),
            self.disk_bytes.checked_sub(other.disk_bytes),
        ) {
            (Some(c), Some(m), Some(d)) => Ok(ResourceVector::new(c, m, d)),
            _ => Err(ClusterError::NegativeResources {
                lhs: *self,
                rhs: *other,
            }),
        }
    }

    /// Component-wise subtraction clamped at zero.
    pub fn saturating_sub(&self, other: &ResourceVector) -> ResourceVector {
        ResourceVector::new(
            self.cpu_millis.saturating_sub(other.cpu_millis),
            self.memory_bytes.saturating_sub(other.memory_bytes),
            self.disk_bytes.saturating_sub(other.disk_bytes),
        )
    }

    /// Dominant share of `self` relative to `capacity`: the largest
    /// per-dimension ratio. Dimensions with zero capacity and zero demand are
    /// ignored; zero capacity with nonzero demand is an error.
    pub fn dominant_share(&self, capacity: &ResourceVector) -> Result<Share, ClusterError> {
        let mut best = Share::ZERO;
        for (used, cap) in self.components().into_iter().zip(capacity.components()) {
            if cap == 0 {
                if used != 0 {
                    return Err(ClusterError::ZeroCapacity);
                }
                continue;
            }
            let share = Share::new(used, cap);
            if share > best {
                best = share;
            }
        }
        Ok(best)
    }
}

impl Add for ResourceVector {
    type Output = ResourceVector;

    fn add(self, rhs: ResourceVector) -> ResourceVector {
        ResourceVector::new(
            self.cpu_millis + rhs.cpu_millis,
            self.memory_bytes + rhs.memory_bytes,
            self.disk_bytes + rhs.disk_bytes,
        )
    }
}

impl std::iter::Sum for ResourceVector {
    fn sum<I: Iterator<Item = ResourceVector>>(iter: I) -> Self {
        iter.fold(ResourceVector::ZERO, Add::add)
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(cpu={}m, mem={}B, disk={}B)",
            self.cpu_millis, self.memory_bytes, self.disk_bytes
        )
    }
}

/// An exact non-negative fraction, used for utilization and spread so that
/// tie-breaks never depend on floating-point rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Share(Ratio<i128>);

impl Share {
    pub const ZERO: Share = Share(Ratio::new_raw(0, 1));
    pub const ONE: Share = Share(Ratio::new_raw(1, 1));

    pub fn new(numer: u64, denom: u64) -> Share {
        Share(Ratio::new(numer as i128, denom as i128))
    }

    /// `self - other`, clamped at zero.
    pub fn minus(self, other: Share) -> Share {
        if other >= self {
            Share::ZERO
        } else {
            Share(self.0 - other.0)
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn to_f64(self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }
}

impl fmt::Display for Share {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}", self.to_f64())
    }
}
