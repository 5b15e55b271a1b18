use std::ops::{Add, Div, Mul, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

/// Number type for transition probabilities: `f64` or exact `BigRational`.
pub trait Field:
    Clone
    + Send
    + Sync
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + PartialOrd
{
    fn from_ratio(num: u128, den: u128) -> Self;
    fn to_f64(&self) -> f64;
    /// Absolute value, used for pivot selection.
    fn magnitude(&self) -> Self;
}

impl Field for f64 {
    fn from_ratio(num: u128, den: u128) -> Self {
        num as f64 / den as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn magnitude(&self) -> Self {
        self.abs()
    }
}

impl Field for BigRational {
    fn from_ratio(num: u128, den: u128) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn magnitude(&self) -> Self {
        num_traits::Signed::abs(self)
    }
}
