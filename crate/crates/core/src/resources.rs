//! CPU/memory request vectors.

use std::fmt;
use std::ops::{Add, AddAssign};

/// A (CPU millicores, memory MiB) pair. Every request, capacity and
/// availability figure in the simulator is one of these.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResourceVector {
    pub cpu_millicores: u64,
    pub memory_mib: u64,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector {
        cpu_millicores: 0,
        memory_mib: 0,
    };

    pub const fn new(cpu_millicores: u64, memory_mib: u64) -> Self {
        Self {
            cpu_millicores,
            memory_mib,
        }
    }

    /// Componentwise `self <= other`.
    pub fn fits_within(&self, other: &ResourceVector) -> bool {
        self.cpu_millicores <= other.cpu_millicores && self.memory_mib <= other.memory_mib
    }

    /// Componentwise subtraction, `None` if either component would go negative.
    pub fn checked_sub(&self, other: &ResourceVector) -> Option<ResourceVector> {
        Some(ResourceVector {
            cpu_millicores: self.cpu_millicores.checked_sub(other.cpu_millicores)?,
            memory_mib: self.memory_mib.checked_sub(other.memory_mib)?,
        })
    }

    pub fn saturating_sub(&self, other: &ResourceVector) -> ResourceVector {
        ResourceVector {
            cpu_millicores: self.cpu_millicores.saturating_sub(other.cpu_millicores),
            memory_mib: self.memory_mib.saturating_sub(other.memory_mib),
        }
    }
}

impl Add for ResourceVector {
    type Output = ResourceVector;

    fn add(self, rhs: ResourceVector) -> ResourceVector {
        ResourceVector {
            cpu_millicores: self.cpu_millicores + rhs.cpu_millicores,
            memory_mib: self.memory_mib + rhs.memory_mib,
        }
    }
}

impl AddAssign for ResourceVector {
    fn add_assign(&mut self, rhs: ResourceVector) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for ResourceVector {
    fn sum<I: Iterator<Item = ResourceVector>>(iter: I) -> Self {
        iter.fold(ResourceVector::ZERO, Add::add)
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}m/{}Mi", self.cpu_millicores, self.memory_mib)
    }
}

/// Converts a GiB figure to whole MiB, rounding to the nearest integer.
pub fn gib_to_mib(gib: f64) -> u64 {
    (gib * 1024.0).round() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gib_conversion_matches_catalog_values() {
        assert_eq!(gib_to_mib(0.3), 307);
        assert_eq!(gib_to_mib(0.6), 614);
        assert_eq!(gib_to_mib(0.9), 922);
        assert_eq!(gib_to_mib(1.0), 1024);
        assert_eq!(gib_to_mib(1.4), 1434);
        assert_eq!(gib_to_mib(2.359), 2416);
    }

    #[test]
    fn fits_within_is_componentwise() {
        let cap = ResourceVector::new(1000, 4096);
        assert!(ResourceVector::new(1000, 4096).fits_within(&cap));
        assert!(!ResourceVector::new(1001, 1).fits_within(&cap));
        assert!(!ResourceVector::new(1, 4097).fits_within(&cap));
    }

    #[test]
    fn checked_sub_rejects_negative() {
        let a = ResourceVector::new(100, 200);
        assert_eq!(a.checked_sub(&ResourceVector::new(50, 200)), Some(ResourceVector::new(50, 0)));
        assert_eq!(a.checked_sub(&ResourceVector::new(101, 0)), None);
    }
}
