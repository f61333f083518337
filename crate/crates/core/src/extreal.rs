//! Extended reals with a single `+∞` point.
//!
//! Partial sums over order statistics use `+∞` for ranks that do not exist
//! (e.g. the third positive LLR when only two are positive). A real sentinel
//! keeps that arithmetic exact: any sum touching it is `+∞` and every
//! threshold comparison against it succeeds.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::Add;

use serde::{Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExtReal<T> {
    Finite(T),
    PosInf,
}

impl<T> ExtReal<T> {
    pub fn is_infinite(&self) -> bool {
        matches!(self, ExtReal::PosInf)
    }

    pub fn finite(&self) -> Option<&T> {
        match self {
            ExtReal::Finite(x) => Some(x),
            ExtReal::PosInf => None,
        }
    }

    pub fn into_finite(self) -> Option<T> {
        match self {
            ExtReal::Finite(x) => Some(x),
            ExtReal::PosInf => None,
        }
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> ExtReal<U> {
        match self {
            ExtReal::Finite(x) => ExtReal::Finite(f(x)),
            ExtReal::PosInf => ExtReal::PosInf,
        }
    }
}

impl<T: PartialOrd> ExtReal<T> {
    /// `self >= bound`, with `+∞` dominating every finite bound.
    pub fn ge(&self, bound: &T) -> bool {
        match self {
            ExtReal::Finite(x) => x >= bound,
            ExtReal::PosInf => true,
        }
    }
}

impl ExtReal<f64> {
    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::Finite(x) => x,
            ExtReal::PosInf => f64::INFINITY,
        }
    }
}

impl<T> From<T> for ExtReal<T> {
    fn from(x: T) -> Self {
        ExtReal::Finite(x)
    }
}

impl<T: Add<Output = T>> Add for ExtReal<T> {
    type Output = ExtReal<T>;

    fn add(self, rhs: Self) -> Self::Output {
        match (self, rhs) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(a + b),
            _ => ExtReal::PosInf,
        }
    }
}

impl<T: Add<Output = T> + num_traits::Zero> Sum for ExtReal<T> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ExtReal::Finite(T::zero()), |acc, x| acc + x)
    }
}

impl<T: PartialOrd> PartialOrd for ExtReal<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => a.partial_cmp(b),
            (ExtReal::Finite(_), ExtReal::PosInf) => Some(Ordering::Less),
            (ExtReal::PosInf, ExtReal::Finite(_)) => Some(Ordering::Greater),
            (ExtReal::PosInf, ExtReal::PosInf) => Some(Ordering::Equal),
        }
    }
}

impl<T: fmt::Display> fmt::Display for ExtReal<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(x) => x.fmt(f),
            ExtReal::PosInf => f.write_str("inf"),
        }
    }
}

/// JSON has no infinity; `+∞` is written as the string `"inf"`.
impl<T: Serialize> Serialize for ExtReal<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtReal::Finite(x) => x.serialize(serializer),
            ExtReal::PosInf => serializer.serialize_str("inf"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinity_absorbs_sums() {
        let s: ExtReal<f64> = [ExtReal::Finite(1.0), ExtReal::PosInf, ExtReal::Finite(2.0)]
            .into_iter()
            .sum();
        assert!(s.is_infinite());
        let t: ExtReal<f64> = [ExtReal::Finite(1.0), ExtReal::Finite(2.0)].into_iter().sum();
        assert_eq!(t, ExtReal::Finite(3.0));
    }

    #[test]
    fn ordering_is_total_with_infinity_on_top() {
        assert!(ExtReal::Finite(1e300) < ExtReal::PosInf);
        assert!(ExtReal::<f64>::PosInf.ge(&f64::MAX));
        assert!(!ExtReal::Finite(0.5).ge(&1.0));
        assert_eq!(
            ExtReal::<f64>::PosInf.partial_cmp(&ExtReal::PosInf),
            Some(Ordering::Equal)
        );
    }
}
