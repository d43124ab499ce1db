//! Wrapping ring arithmetic modulo a power of two.
//!
//! Protocol code is generic over the ring width. The 3-party engine runs
//! over `u64` (modulo 2^64); the cleartext emulator additionally supports
//! `u128` so that higher precision (f = 32, k = 63) is available for
//! gradient checks without touching the protocol layer.

use rand::RngCore;

/// A residue ring Z_{2^BITS} with wrapping arithmetic.
///
/// Signed interpretation is two's complement: values in [2^(BITS-1), 2^BITS)
/// map to negatives.
pub trait Ring:
    Copy + Clone + Eq + PartialEq + std::fmt::Debug + std::hash::Hash + Send + Sync + 'static
{
    const BITS: u32;
    /// Number of bytes on the wire (little endian).
    const BYTES: usize;
    const ZERO: Self;
    const ONE: Self;

    fn wrapping_add(self, other: Self) -> Self;
    fn wrapping_sub(self, other: Self) -> Self;
    fn wrapping_mul(self, other: Self) -> Self;
    fn wrapping_neg(self) -> Self;
    /// Logical left shift; shifts >= BITS yield zero.
    fn shl(self, amount: u32) -> Self;
    /// Logical right shift; shifts >= BITS yield zero.
    fn shr(self, amount: u32) -> Self;
    fn bitand(self, other: Self) -> Self;
    fn bit(self, index: u32) -> bool;

    fn from_u64(value: u64) -> Self;
    fn from_u128(value: u128) -> Self;
    fn to_u128(self) -> u128;
    /// Embed a signed integer via two's complement.
    fn from_i64(value: i64) -> Self;
    /// Two's-complement signed value as f64 (lossy for very wide rings).
    fn to_f64_signed(self) -> f64;
    /// Two's-complement signed value, exact, as i128 (valid for BITS <= 128).
    fn to_i128_signed(self) -> i128;

    fn sample(rng: &mut impl RngCore) -> Self;
    /// Uniform sample over [0, 2^bits).
    fn sample_bits(rng: &mut impl RngCore, bits: u32) -> Self;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// Mask keeping the `bits` least significant bits.
    fn mask_low(bits: u32) -> Self;
}

impl Ring for u64 {
    const BITS: u32 = 64;
    const BYTES: usize = 8;
    const ZERO: Self = 0;
    const ONE: Self = 1;

    #[inline(always)]
    fn wrapping_add(self, other: Self) -> Self {
        u64::wrapping_add(self, other)
    }
    #[inline(always)]
    fn wrapping_sub(self, other: Self) -> Self {
        u64::wrapping_sub(self, other)
    }
    #[inline(always)]
    fn wrapping_mul(self, other: Self) -> Self {
        u64::wrapping_mul(self, other)
    }
    #[inline(always)]
    fn wrapping_neg(self) -> Self {
        u64::wrapping_neg(self)
    }
    #[inline(always)]
    fn shl(self, amount: u32) -> Self {
        if amount >= 64 {
            0
        } else {
            self << amount
        }
    }
    #[inline(always)]
    fn shr(self, amount: u32) -> Self {
        if amount >= 64 {
            0
        } else {
            self >> amount
        }
    }
    #[inline(always)]
    fn bitand(self, other: Self) -> Self {
        self & other
    }
    #[inline(always)]
    fn bit(self, index: u32) -> bool {
        (self >> index) & 1 == 1
    }

    #[inline(always)]
    fn from_u64(value: u64) -> Self {
        value
    }
    #[inline(always)]
    fn from_u128(value: u128) -> Self {
        value as u64
    }
    #[inline(always)]
    fn to_u128(self) -> u128 {
        self as u128
    }
    #[inline(always)]
    fn from_i64(value: i64) -> Self {
        value as u64
    }
    #[inline(always)]
    fn to_f64_signed(self) -> f64 {
        self as i64 as f64
    }
    #[inline(always)]
    fn to_i128_signed(self) -> i128 {
        self as i64 as i128
    }

    fn sample(rng: &mut impl RngCore) -> Self {
        rng.next_u64()
    }
    fn sample_bits(rng: &mut impl RngCore, bits: u32) -> Self {
        rng.next_u64() & <u64 as Ring>::mask_low(bits)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        u64::from_le_bytes(bytes[..8].try_into().unwrap())
    }

    fn mask_low(bits: u32) -> Self {
        if bits >= 64 {
            u64::MAX
        } else {
            (1u64 << bits) - 1
        }
    }
}

impl Ring for u128 {
    const BITS: u32 = 128;
    const BYTES: usize = 16;
    const ZERO: Self = 0;
    const ONE: Self = 1;

    #[inline(always)]
    fn wrapping_add(self, other: Self) -> Self {
        u128::wrapping_add(self, other)
    }
    #[inline(always)]
    fn wrapping_sub(self, other: Self) -> Self {
        u128::wrapping_sub(self, other)
    }
    #[inline(always)]
    fn wrapping_mul(self, other: Self) -> Self {
        u128::wrapping_mul(self, other)
    }
    #[inline(always)]
    fn wrapping_neg(self) -> Self {
        u128::wrapping_neg(self)
    }
    #[inline(always)]
    fn shl(self, amount: u32) -> Self {
        if amount >= 128 {
            0
        } else {
            self << amount
        }
    }
    #[inline(always)]
    fn shr(self, amount: u32) -> Self {
        if amount >= 128 {
            0
        } else {
            self >> amount
        }
    }
    #[inline(always)]
    fn bitand(self, other: Self) -> Self {
        self & other
    }
    #[inline(always)]
    fn bit(self, index: u32) -> bool {
        (self >> index) & 1 == 1
    }

    #[inline(always)]
    fn from_u64(value: u64) -> Self {
        value as u128
    }
    #[inline(always)]
    fn from_u128(value: u128) -> Self {
        value
    }
    #[inline(always)]
    fn to_u128(self) -> u128 {
        self
    }
    #[inline(always)]
    fn from_i64(value: i64) -> Self {
        value as i128 as u128
    }
    #[inline(always)]
    fn to_f64_signed(self) -> f64 {
        self as i128 as f64
    }
    #[inline(always)]
    fn to_i128_signed(self) -> i128 {
        self as i128
    }

    fn sample(rng: &mut impl RngCore) -> Self {
        let lo = rng.next_u64() as u128;
        let hi = rng.next_u64() as u128;
        lo | (hi << 64)
    }
    fn sample_bits(rng: &mut impl RngCore, bits: u32) -> Self {
        Self::sample(rng) & <u128 as Ring>::mask_low(bits)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        u128::from_le_bytes(bytes[..16].try_into().unwrap())
    }

    fn mask_low(bits: u32) -> Self {
        if bits >= 128 {
            u128::MAX
        } else {
            (1u128 << bits) - 1
        }
    }
}

/// Ring operation selector for the element-level helper below.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RingOp {
    Add,
    Sub,
    Mul,
    Neg,
}

/// Element-level wrapping arithmetic. All four operations are total.
pub fn ring_arith<R: Ring>(op: RingOp, a: R, b: R) -> R {
    match op {
        RingOp::Add => a.wrapping_add(b),
        RingOp::Sub => a.wrapping_sub(b),
        RingOp::Mul => a.wrapping_mul(b),
        RingOp::Neg => a.wrapping_neg(),
    }
}
