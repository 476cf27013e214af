//! Floating-point element type used by tensors and models.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

/// Element type of a [`Tensor`](crate::tensor::Tensor).
///
/// Kernels are written once against this trait. Reductions and matmul
/// inner loops widen to `f64` through [`Scalar::widen`] and narrow the
/// result back, so the `f32` instantiation accumulates in double precision.
pub trait Scalar:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Short tag written into checkpoints.
    const DTYPE: &'static str;
    /// Size of one little-endian encoded element.
    const BYTES: usize;

    fn widen(self) -> f64;
    fn narrow(v: f64) -> Self;

    fn write_le(self, out: &mut Vec<u8>);
    /// `bytes` must hold exactly [`Scalar::BYTES`] bytes.
    fn read_le(bytes: &[u8]) -> Self;

    /// Bit pattern, for exact comparisons and hashing.
    fn bits(self) -> u64;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    #[inline(always)]
    fn widen(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn narrow(v: f64) -> Self {
        v as f32
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
    fn bits(self) -> u64 {
        self.to_bits() as u64
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    #[inline(always)]
    fn widen(self) -> f64 {
        self
    }
    #[inline(always)]
    fn narrow(v: f64) -> Self {
        v
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
    fn bits(self) -> u64 {
        self.to_bits()
    }
}

/// Shorthand for literal constants inside generic code.
#[inline(always)]
pub(crate) fn lit<T: Scalar>(v: f64) -> T {
    T::narrow(v)
}
