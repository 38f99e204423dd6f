//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All tensor math is written against [`Scalar`], so the same code runs in
//! 64-bit precision (gradient checks, oracles) and 32-bit precision
//! (training).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Name used in checkpoints and config snapshots.
    const NAME: &'static str;

    /// Lossy conversion from `f64`; exact for every value representable in `Self`.
    #[inline]
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 converts to every float scalar")
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("float scalar converts to f64")
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}
