//! The abstract operation surface shared by the 3-party MPC engine and the
//! cleartext emulator.
//!
//! Everything above this trait (secure math, layers, training) is written
//! once against it. Both engines provide identical quantized numeric
//! contracts: with nearest rounding and the same inputs, composed pipelines
//! produce bit-identical opened results; with probabilistic rounding the
//! output distributions agree.
//!
//! Arithmetic shares travel in flat vectors (`AVec`), binary shares as
//! bit planes (`BPlane`): plane j of a width-w decomposition holds bit j of
//! every element, packed 64 per word. Binary circuits are therefore
//! bit-sliced and batch across elements for free.

use crate::fixed::{FixedConfig, Rounding};
use crate::ring::Ring;
use crate::transport::{CommStats, PartyId};
use crate::Result;

/// Call counters for structural assertions (e.g. ReLU backward reuses the
/// forward comparisons, exponentiation never divides). `ltz` counts batched
/// comparison invocations (tree levels), the others count elements.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounters {
    pub ltz: u64,
    pub div: u64,
    pub mul: u64,
    pub trunc: u64,
}

pub trait Engine {
    type R: Ring;
    type AVec: Clone + Send;
    type BPlane: Clone + Send;

    fn cfg(&self) -> FixedConfig;
    fn rounding(&self) -> Rounding;
    fn set_rounding(&mut self, mode: Rounding);

    fn alen(x: &Self::AVec) -> usize;
    fn bit_count(p: &Self::BPlane) -> usize;

    /// Share a public constant vector (no communication, deterministic).
    fn constant(&self, vals: &[Self::R]) -> Self::AVec;
    /// Input sharing: exactly the owner supplies values. The owner transmits
    /// one ring element per value; nobody else sends anything.
    fn input(&mut self, owner: PartyId, vals: Option<&[Self::R]>, n: usize)
        -> Result<Self::AVec>;
    /// Open to all parties.
    fn open(&mut self, x: &Self::AVec) -> Result<Vec<Self::R>>;

    // Local linear algebra (zero communication).
    fn add(&self, x: &Self::AVec, y: &Self::AVec) -> Self::AVec;
    fn sub(&self, x: &Self::AVec, y: &Self::AVec) -> Self::AVec;
    fn neg(&self, x: &Self::AVec) -> Self::AVec;
    /// x + c, with c broadcast when it has length 1.
    fn add_public(&self, x: &Self::AVec, c: &[Self::R]) -> Self::AVec;
    /// c * x elementwise, with c broadcast when it has length 1.
    fn scale_public(&self, x: &Self::AVec, c: &[Self::R]) -> Self::AVec;
    fn gather(&self, x: &Self::AVec, idx: &[u32]) -> Self::AVec;
    fn scatter_add(&self, acc: &mut Self::AVec, idx: &[u32], vals: &Self::AVec);
    fn slice(&self, x: &Self::AVec, start: usize, len: usize) -> Self::AVec;
    fn concat(&self, parts: &[&Self::AVec]) -> Self::AVec;

    /// Elementwise product of shares. One communicated element per entry.
    fn mul(&mut self, x: &Self::AVec, y: &Self::AVec) -> Result<Self::AVec>;
    /// Row-major (m x n) * (n x p) with deferred truncation: every output
    /// entry is the exact 2f-precision sum, and costs exactly one
    /// communicated element regardless of n. One round for the whole matrix.
    fn matmul(
        &mut self,
        x: &Self::AVec,
        y: &Self::AVec,
        m: usize,
        n: usize,
        p: usize,
    ) -> Result<Self::AVec>;
    /// Inner product; identical cost to a single multiplication.
    fn dot(&mut self, x: &Self::AVec, y: &Self::AVec) -> Result<Self::AVec>;

    /// Truncation by `m` bits of values known to fit in `k_bits` bits
    /// (signed). Probabilistic mode rounds exactly as Eq.-style stochastic
    /// rounding; nearest mode is deterministic round-half-up.
    fn trunc(&mut self, x: &Self::AVec, k_bits: u32, m: u32, mode: Rounding)
        -> Result<Self::AVec>;

    /// Binary sharings of the `bits` least significant bits.
    fn a2b(&mut self, x: &Self::AVec, bits: u32) -> Result<Vec<Self::BPlane>>;
    /// Most significant bit of the full ring value (the sign).
    fn msb(&mut self, x: &Self::AVec) -> Result<Self::BPlane>;

    fn bit_xor(&self, a: &Self::BPlane, b: &Self::BPlane) -> Self::BPlane;
    fn bit_not(&self, a: &Self::BPlane) -> Self::BPlane;
    fn bit_and(&mut self, a: &Self::BPlane, b: &Self::BPlane) -> Result<Self::BPlane>;
    /// Many independent ANDs flushed in a single round.
    fn bit_and_many(
        &mut self,
        pairs: &[(&Self::BPlane, &Self::BPlane)],
    ) -> Result<Vec<Self::BPlane>>;
    fn bit_const(&self, bits: &[bool]) -> Self::BPlane;
    /// Concatenate planes end to end (bit granularity).
    fn bit_concat(&self, parts: &[&Self::BPlane]) -> Self::BPlane;
    /// Extract `len` bits starting at `start`.
    fn bit_slice(&self, p: &Self::BPlane, start: usize, len: usize) -> Self::BPlane;
    fn open_bits(&mut self, p: &Self::BPlane) -> Result<Vec<bool>>;

    /// Arithmetic sharing in {0,1} of each bit in the plane. Consumes one
    /// daBit per bit.
    fn bit2a(&mut self, p: &Self::BPlane) -> Result<Self::AVec>;
    /// Compose binary planes into arithmetic shares of sum(b_i * 2^i).
    fn b2a_unsigned(&mut self, planes: &[Self::BPlane]) -> Result<Self::AVec>;

    /// `w` planes of `n` fresh secret random bits (binary domain only; no
    /// communication in the replicated engine).
    fn rand_bit_planes(&mut self, n: usize, w: usize) -> Result<Vec<Self::BPlane>>;
    /// n daBits: uniform random bits shared in both domains simultaneously.
    fn dabits(&mut self, n: usize) -> Result<(Self::AVec, Self::BPlane)>;

    /// Per-party communication counters; the emulator reads all zeros.
    fn comm(&self) -> CommStats;
    fn counters(&self) -> OpCounters;
    fn counters_mut(&mut self) -> &mut OpCounters;
}

/// Decode an opened vector into f64 via the engine's fixed-point config.
pub fn decode_opened<R: Ring>(vals: &[R], cfg: FixedConfig) -> Vec<f64> {
    vals.iter()
        .map(|&v| crate::fixed::fx_decode_raw(v, cfg))
        .collect()
}
