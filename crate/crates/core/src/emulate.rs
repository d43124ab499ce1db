//! Cleartext emulator: executes the exact computation in the clear that the
//! 3-party engine performs on shares, with the same quantized semantics.
//!
//! "Shares" are plain ring values, communication counters stay at zero, and
//! probabilistic rounding consumes randomness from a single seeded stream
//! in deterministic element order (one draw per element whose discarded
//! fraction is nonzero). Deterministic (nearest-mode) pipelines produce
//! results bit-identical to the MPC engine.

use crate::engine::{Engine, OpCounters};
use crate::fixed::{shift_round_clear, FixedConfig, Rounding};
use crate::ring::Ring;
use crate::transport::{CommStats, PartyId};
use crate::{Error, Result};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// A plain plane of packed bits.
#[derive(Clone, Debug)]
pub struct PlainPlane {
    pub words: Vec<u64>,
    pub n: usize,
}

impl PlainPlane {
    fn zeros(n: usize) -> Self {
        PlainPlane {
            words: vec![0; n.div_ceil(64)],
            n,
        }
    }
    fn mask_tail(&mut self) {
        let t = self.n % 64;
        if t != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << t) - 1;
            }
        }
    }
    pub fn get(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }
    fn set(&mut self, i: usize, v: bool) {
        if v {
            self.words[i / 64] |= 1 << (i % 64);
        }
    }
}

pub struct EmuEngine<R: Ring> {
    cfg: FixedConfig,
    rounding: Rounding,
    rng: ChaCha12Rng,
    counters: OpCounters,
    _marker: std::marker::PhantomData<R>,
}

impl<R: Ring> EmuEngine<R> {
    pub fn new(cfg: FixedConfig, rounding: Rounding, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if cfg.ring_bits != R::BITS {
            return Err(Error::Config(format!(
                "config ring width {} does not match engine ring {}",
                cfg.ring_bits,
                R::BITS
            )));
        }
        Ok(EmuEngine {
            cfg,
            rounding,
            rng: ChaCha12Rng::seed_from_u64(seed),
            counters: OpCounters::default(),
            _marker: std::marker::PhantomData,
        })
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha12Rng {
        &mut self.rng
    }

    /// Reset the randomness stream; finite-difference checks use this to
    /// pin stochastic layers (dropout masks) across loss evaluations.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha12Rng::seed_from_u64(seed);
    }
}

impl<R: Ring> Engine for EmuEngine<R> {
    type R = R;
    type AVec = Vec<R>;
    type BPlane = PlainPlane;

    fn cfg(&self) -> FixedConfig {
        self.cfg
    }
    fn rounding(&self) -> Rounding {
        self.rounding
    }
    fn set_rounding(&mut self, mode: Rounding) {
        self.rounding = mode;
    }

    fn alen(x: &Vec<R>) -> usize {
        x.len()
    }
    fn bit_count(p: &PlainPlane) -> usize {
        p.n
    }

    fn constant(&self, vals: &[R]) -> Vec<R> {
        vals.to_vec()
    }

    fn input(&mut self, _owner: PartyId, vals: Option<&[R]>, n: usize) -> Result<Vec<R>> {
        let vals =
            vals.ok_or_else(|| Error::Protocol("emulator input requires values".into()))?;
        if vals.len() != n {
            return Err(Error::Shape(format!("input length {} != {n}", vals.len())));
        }
        Ok(vals.to_vec())
    }

    fn open(&mut self, x: &Vec<R>) -> Result<Vec<R>> {
        Ok(x.clone())
    }

    fn add(&self, x: &Vec<R>, y: &Vec<R>) -> Vec<R> {
        x.iter().zip(y).map(|(&u, &v)| u.wrapping_add(v)).collect()
    }
    fn sub(&self, x: &Vec<R>, y: &Vec<R>) -> Vec<R> {
        x.iter().zip(y).map(|(&u, &v)| u.wrapping_sub(v)).collect()
    }
    fn neg(&self, x: &Vec<R>) -> Vec<R> {
        x.iter().map(|v| v.wrapping_neg()).collect()
    }
    fn add_public(&self, x: &Vec<R>, c: &[R]) -> Vec<R> {
        let pick = |i: usize| if c.len() == 1 { c[0] } else { c[i] };
        x.iter()
            .enumerate()
            .map(|(i, &v)| v.wrapping_add(pick(i)))
            .collect()
    }
    fn scale_public(&self, x: &Vec<R>, c: &[R]) -> Vec<R> {
        let pick = |i: usize| if c.len() == 1 { c[0] } else { c[i] };
        x.iter()
            .enumerate()
            .map(|(i, &v)| v.wrapping_mul(pick(i)))
            .collect()
    }
    fn gather(&self, x: &Vec<R>, idx: &[u32]) -> Vec<R> {
        idx.iter().map(|&i| x[i as usize]).collect()
    }
    fn scatter_add(&self, acc: &mut Vec<R>, idx: &[u32], vals: &Vec<R>) {
        for (j, &i) in idx.iter().enumerate() {
            let i = i as usize;
            acc[i] = acc[i].wrapping_add(vals[j]);
        }
    }
    fn slice(&self, x: &Vec<R>, start: usize, len: usize) -> Vec<R> {
        x[start..start + len].to_vec()
    }
    fn concat(&self, parts: &[&Vec<R>]) -> Vec<R> {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(p);
        }
        out
    }

    fn mul(&mut self, x: &Vec<R>, y: &Vec<R>) -> Result<Vec<R>> {
        if x.len() != y.len() {
            return Err(Error::Shape(format!("mul: {} vs {}", x.len(), y.len())));
        }
        self.counters.mul += x.len() as u64;
        Ok(x.iter().zip(y).map(|(&u, &v)| u.wrapping_mul(v)).collect())
    }

    fn matmul(&mut self, x: &Vec<R>, y: &Vec<R>, m: usize, n: usize, p: usize) -> Result<Vec<R>> {
        if x.len() != m * n || y.len() != n * p {
            return Err(Error::Shape(format!(
                "matmul {}x{}x{} with lengths {} and {}",
                m,
                n,
                p,
                x.len(),
                y.len()
            )));
        }
        self.counters.mul += (m * p) as u64;
        let mut yt = vec![R::ZERO; n * p];
        for l in 0..n {
            for j in 0..p {
                yt[j * n + l] = y[l * p + j];
            }
        }
        let mut out = Vec::with_capacity(m * p);
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            for j in 0..p {
                let col = &yt[j * n..(j + 1) * n];
                let mut acc = R::ZERO;
                for l in 0..n {
                    acc = acc.wrapping_add(row[l].wrapping_mul(col[l]));
                }
                out.push(acc);
            }
        }
        Ok(out)
    }

    fn dot(&mut self, x: &Vec<R>, y: &Vec<R>) -> Result<Vec<R>> {
        if x.len() != y.len() {
            return Err(Error::Shape(format!("dot: {} vs {}", x.len(), y.len())));
        }
        if x.is_empty() {
            return Ok(vec![R::ZERO]);
        }
        self.matmul(x, y, 1, x.len(), 1)
    }

    fn trunc(&mut self, x: &Vec<R>, _k_bits: u32, m: u32, mode: Rounding) -> Result<Vec<R>> {
        self.counters.trunc += x.len() as u64;
        Ok(x.iter()
            .map(|&v| shift_round_clear(v, m, mode, &mut self.rng))
            .collect())
    }

    fn a2b(&mut self, x: &Vec<R>, bits: u32) -> Result<Vec<PlainPlane>> {
        let n = x.len();
        let mut planes: Vec<PlainPlane> = (0..bits).map(|_| PlainPlane::zeros(n)).collect();
        for (i, &v) in x.iter().enumerate() {
            for (j, plane) in planes.iter_mut().enumerate() {
                plane.set(i, v.bit(j as u32));
            }
        }
        Ok(planes)
    }

    fn msb(&mut self, x: &Vec<R>) -> Result<PlainPlane> {
        self.counters.ltz += 1;
        let mut plane = PlainPlane::zeros(x.len());
        for (i, &v) in x.iter().enumerate() {
            plane.set(i, v.bit(R::BITS - 1));
        }
        Ok(plane)
    }

    fn bit_xor(&self, a: &PlainPlane, b: &PlainPlane) -> PlainPlane {
        debug_assert_eq!(a.n, b.n);
        PlainPlane {
            words: a.words.iter().zip(&b.words).map(|(u, v)| u ^ v).collect(),
            n: a.n,
        }
    }
    fn bit_not(&self, a: &PlainPlane) -> PlainPlane {
        let mut out = PlainPlane {
            words: a.words.iter().map(|w| !w).collect(),
            n: a.n,
        };
        out.mask_tail();
        out
    }
    fn bit_and(&mut self, a: &PlainPlane, b: &PlainPlane) -> Result<PlainPlane> {
        Ok(PlainPlane {
            words: a.words.iter().zip(&b.words).map(|(u, v)| u & v).collect(),
            n: a.n,
        })
    }
    fn bit_and_many(
        &mut self,
        pairs: &[(&PlainPlane, &PlainPlane)],
    ) -> Result<Vec<PlainPlane>> {
        pairs.iter().map(|&(a, b)| self.bit_and(a, b)).collect()
    }
    fn bit_const(&self, bits: &[bool]) -> PlainPlane {
        let mut plane = PlainPlane::zeros(bits.len());
        for (i, &v) in bits.iter().enumerate() {
            plane.set(i, v);
        }
        plane
    }
    fn bit_concat(&self, parts: &[&PlainPlane]) -> PlainPlane {
        let total: usize = parts.iter().map(|p| p.n).sum();
        let mut out = PlainPlane::zeros(total);
        let mut off = 0;
        for p in parts {
            for i in 0..p.n {
                out.set(off + i, p.get(i));
            }
            off += p.n;
        }
        out
    }
    fn bit_slice(&self, p: &PlainPlane, start: usize, len: usize) -> PlainPlane {
        let mut out = PlainPlane::zeros(len);
        for i in 0..len {
            out.set(i, p.get(start + i));
        }
        out
    }
    fn open_bits(&mut self, p: &PlainPlane) -> Result<Vec<bool>> {
        Ok((0..p.n).map(|i| p.get(i)).collect())
    }

    fn bit2a(&mut self, p: &PlainPlane) -> Result<Vec<R>> {
        Ok((0..p.n)
            .map(|i| if p.get(i) { R::ONE } else { R::ZERO })
            .collect())
    }

    fn b2a_unsigned(&mut self, planes: &[PlainPlane]) -> Result<Vec<R>> {
        assert!(!planes.is_empty());
        let n = planes[0].n;
        let mut out = vec![R::ZERO; n];
        for (j, plane) in planes.iter().enumerate() {
            for (i, o) in out.iter_mut().enumerate() {
                if plane.get(i) {
                    *o = o.wrapping_add(R::ONE.shl(j as u32));
                }
            }
        }
        Ok(out)
    }

    fn rand_bit_planes(&mut self, n: usize, w: usize) -> Result<Vec<PlainPlane>> {
        Ok((0..w)
            .map(|_| {
                let mut plane = PlainPlane {
                    words: (0..n.div_ceil(64)).map(|_| self.rng.next_u64()).collect(),
                    n,
                };
                plane.mask_tail();
                plane
            })
            .collect())
    }

    fn dabits(&mut self, n: usize) -> Result<(Vec<R>, PlainPlane)> {
        let plane = self.rand_bit_planes(n, 1)?.pop().unwrap();
        let arith = self.bit2a(&plane)?;
        Ok((arith, plane))
    }

    fn comm(&self) -> CommStats {
        CommStats::default()
    }
    fn counters(&self) -> OpCounters {
        self.counters
    }
    fn counters_mut(&mut self) -> &mut OpCounters {
        &mut self.counters
    }
}
