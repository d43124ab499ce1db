//! The 3-party semi-honest replicated secret-sharing engine.
//!
//! A secret x is a random sum x = x_0 + x_1 + x_2 (mod 2^64) and party P_i
//! holds the pair (x_{i-1}, x_{i+1}), indices modulo three. We store the
//! pair as (a, b) = (x_{i-1}, x_{i+1}); component j is held by P_{j+1} in
//! slot a and by P_{j-1} in slot b. Public constants live in component 0.

pub mod bits;

use crate::circuits;
use crate::engine::{Engine, OpCounters};
use crate::fixed::{FixedConfig, Rounding};
use crate::transport::{bytes_to_elems, elems_to_bytes, CommStats, PartyId, Session};
use crate::{Error, Result};
use rand::RngCore;

/// Replicated arithmetic share vector (structure of arrays).
#[derive(Clone, Debug)]
pub struct RepVec {
    /// Component x_{i-1} per element.
    pub a: Vec<u64>,
    /// Component x_{i+1} per element.
    pub b: Vec<u64>,
}

impl RepVec {
    pub fn zeros(n: usize) -> Self {
        RepVec {
            a: vec![0; n],
            b: vec![0; n],
        }
    }
    pub fn len(&self) -> usize {
        self.a.len()
    }
    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

/// Replicated binary share of n packed bits (one plane).
#[derive(Clone, Debug)]
pub struct RepPlane {
    pub a: Vec<u64>,
    pub b: Vec<u64>,
    pub n: usize,
}

impl RepPlane {
    pub fn zeros(n: usize) -> Self {
        let words = n.div_ceil(64);
        RepPlane {
            a: vec![0; words],
            b: vec![0; words],
            n,
        }
    }
}

/// Statistical slack for the mask-and-open probabilistic truncation:
/// 24 bits when the width allows, never below this floor.
const SLACK_TARGET: u32 = 24;
const SLACK_MIN: u32 = 8;

pub struct PartyEngine {
    pub session: Session,
    cfg: FixedConfig,
    rounding: Rounding,
    counters: OpCounters,
}

impl PartyEngine {
    pub fn new(session: Session, cfg: FixedConfig, rounding: Rounding) -> Result<Self> {
        cfg.validate()?;
        if cfg.ring_bits != 64 {
            return Err(Error::Config(
                "the 3-party engine runs over the 64-bit ring".into(),
            ));
        }
        Ok(PartyEngine {
            session,
            cfg,
            rounding,
            counters: OpCounters::default(),
        })
    }

    pub fn me(&self) -> PartyId {
        self.session.me
    }

    fn draw_next(&mut self, n: usize) -> Vec<u64> {
        (0..n).map(|_| self.session.prgs.next_arith.next_u64()).collect()
    }
    fn draw_prev(&mut self, n: usize) -> Vec<u64> {
        (0..n).map(|_| self.session.prgs.prev_arith.next_u64()).collect()
    }

    /// Rerandomize an additive component and convert back to replicated form:
    /// each party sends one masked element per entry to its next neighbor.
    fn reshare_additive(&mut self, z: Vec<u64>) -> Result<RepVec> {
        let n = z.len();
        let r_next = self.draw_next(n);
        let r_prev = self.draw_prev(n);
        let mut zp = z;
        for i in 0..n {
            zp[i] = zp[i]
                .wrapping_add(r_next[i])
                .wrapping_sub(r_prev[i]);
        }
        let got = self
            .session
            .exchange(&elems_to_bytes(&zp), n * 8)?;
        let w: Vec<u64> = bytes_to_elems(&got);
        Ok(RepVec { a: zp, b: w })
    }
}

impl Engine for PartyEngine {
    type R = u64;
    type AVec = RepVec;
    type BPlane = RepPlane;

    fn cfg(&self) -> FixedConfig {
        self.cfg
    }
    fn rounding(&self) -> Rounding {
        self.rounding
    }
    fn set_rounding(&mut self, mode: Rounding) {
        self.rounding = mode;
    }

    fn alen(x: &RepVec) -> usize {
        x.len()
    }
    fn bit_count(p: &RepPlane) -> usize {
        p.n
    }

    fn constant(&self, vals: &[u64]) -> RepVec {
        let n = vals.len();
        let mut out = RepVec::zeros(n);
        match self.session.me.0 {
            1 => out.a.copy_from_slice(vals),
            2 => out.b.copy_from_slice(vals),
            _ => {}
        }
        out
    }

    fn input(&mut self, owner: PartyId, vals: Option<&[u64]>, n: usize) -> Result<RepVec> {
        let me = self.session.me;
        if me == owner {
            let vals = vals.ok_or_else(|| {
                Error::Protocol(format!("{me} owns this input but supplied no values"))
            })?;
            if vals.len() != n {
                return Err(Error::Shape(format!(
                    "input length {} != {n}",
                    vals.len()
                )));
            }
            // x_{o-1} from the PRG shared with the next party; x_{o+1} goes
            // to the previous party; x_o stays zero.
            let r = self.draw_next(n);
            let mut to_prev = Vec::with_capacity(n);
            for i in 0..n {
                to_prev.push(vals[i].wrapping_sub(r[i]));
            }
            self.session
                .send_to(me.prev(), &elems_to_bytes(&to_prev))?;
            self.session.bump_round();
            Ok(RepVec { a: r, b: to_prev })
        } else if vals.is_some() {
            Err(Error::Protocol(format!(
                "{me} supplied values for {owner}'s input"
            )))
        } else if me == owner.next() {
            // Holds (x_o = 0, x_{o-1} = shared PRG draw).
            let r = self.draw_prev(n);
            self.session.bump_round();
            Ok(RepVec {
                a: vec![0; n],
                b: r,
            })
        } else {
            // me == owner.prev(): holds (x_{o+1} received, x_o = 0).
            let got = self.session.recv_from(owner, n * 8)?;
            self.session.bump_round();
            Ok(RepVec {
                a: bytes_to_elems(&got),
                b: vec![0; n],
            })
        }
    }

    fn open(&mut self, x: &RepVec) -> Result<Vec<u64>> {
        let n = x.len();
        // P_{i+1} holds my missing component x_i in its slot a.
        let got = self.session.exchange_prev(&elems_to_bytes(&x.a), n * 8)?;
        let missing: Vec<u64> = bytes_to_elems(&got);
        Ok((0..n)
            .map(|i| x.a[i].wrapping_add(x.b[i]).wrapping_add(missing[i]))
            .collect())
    }

    fn add(&self, x: &RepVec, y: &RepVec) -> RepVec {
        RepVec {
            a: zip_wrap(&x.a, &y.a, u64::wrapping_add),
            b: zip_wrap(&x.b, &y.b, u64::wrapping_add),
        }
    }
    fn sub(&self, x: &RepVec, y: &RepVec) -> RepVec {
        RepVec {
            a: zip_wrap(&x.a, &y.a, u64::wrapping_sub),
            b: zip_wrap(&x.b, &y.b, u64::wrapping_sub),
        }
    }
    fn neg(&self, x: &RepVec) -> RepVec {
        RepVec {
            a: x.a.iter().map(|v| v.wrapping_neg()).collect(),
            b: x.b.iter().map(|v| v.wrapping_neg()).collect(),
        }
    }

    fn add_public(&self, x: &RepVec, c: &[u64]) -> RepVec {
        let mut out = x.clone();
        let pick = |i: usize| if c.len() == 1 { c[0] } else { c[i] };
        match self.session.me.0 {
            1 => {
                for (i, v) in out.a.iter_mut().enumerate() {
                    *v = v.wrapping_add(pick(i));
                }
            }
            2 => {
                for (i, v) in out.b.iter_mut().enumerate() {
                    *v = v.wrapping_add(pick(i));
                }
            }
            _ => {}
        }
        out
    }

    fn scale_public(&self, x: &RepVec, c: &[u64]) -> RepVec {
        let pick = |i: usize| if c.len() == 1 { c[0] } else { c[i] };
        RepVec {
            a: x.a
                .iter()
                .enumerate()
                .map(|(i, v)| v.wrapping_mul(pick(i)))
                .collect(),
            b: x.b
                .iter()
                .enumerate()
                .map(|(i, v)| v.wrapping_mul(pick(i)))
                .collect(),
        }
    }

    fn gather(&self, x: &RepVec, idx: &[u32]) -> RepVec {
        RepVec {
            a: idx.iter().map(|&i| x.a[i as usize]).collect(),
            b: idx.iter().map(|&i| x.b[i as usize]).collect(),
        }
    }

    fn scatter_add(&self, acc: &mut RepVec, idx: &[u32], vals: &RepVec) {
        for (j, &i) in idx.iter().enumerate() {
            let i = i as usize;
            acc.a[i] = acc.a[i].wrapping_add(vals.a[j]);
            acc.b[i] = acc.b[i].wrapping_add(vals.b[j]);
        }
    }

    fn slice(&self, x: &RepVec, start: usize, len: usize) -> RepVec {
        RepVec {
            a: x.a[start..start + len].to_vec(),
            b: x.b[start..start + len].to_vec(),
        }
    }

    fn concat(&self, parts: &[&RepVec]) -> RepVec {
        let mut out = RepVec {
            a: Vec::new(),
            b: Vec::new(),
        };
        for p in parts {
            out.a.extend_from_slice(&p.a);
            out.b.extend_from_slice(&p.b);
        }
        out
    }

    fn mul(&mut self, x: &RepVec, y: &RepVec) -> Result<RepVec> {
        if x.len() != y.len() {
            return Err(Error::Shape(format!("mul: {} vs {}", x.len(), y.len())));
        }
        self.counters.mul += x.len() as u64;
        let n = x.len();
        let mut z = Vec::with_capacity(n);
        for i in 0..n {
            // x_{i-1}y_{i-1} + x_{i-1}y_{i+1} + x_{i+1}y_{i-1}
            let t = x.a[i]
                .wrapping_mul(y.a[i])
                .wrapping_add(x.a[i].wrapping_mul(y.b[i]))
                .wrapping_add(x.b[i].wrapping_mul(y.a[i]));
            z.push(t);
        }
        self.reshare_additive(z)
    }

    fn matmul(
        &mut self,
        x: &RepVec,
        y: &RepVec,
        m: usize,
        n: usize,
        p: usize,
    ) -> Result<RepVec> {
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
        // Transpose y so both operands stream contiguously.
        let mut ya_t = vec![0u64; n * p];
        let mut yb_t = vec![0u64; n * p];
        for l in 0..n {
            for j in 0..p {
                ya_t[j * n + l] = y.a[l * p + j];
                yb_t[j * n + l] = y.b[l * p + j];
            }
        }
        let mut z = Vec::with_capacity(m * p);
        for i in 0..m {
            let xa = &x.a[i * n..(i + 1) * n];
            let xb = &x.b[i * n..(i + 1) * n];
            for j in 0..p {
                let ya = &ya_t[j * n..(j + 1) * n];
                let yb = &yb_t[j * n..(j + 1) * n];
                let mut t = 0u64;
                for l in 0..n {
                    t = t
                        .wrapping_add(xa[l].wrapping_mul(ya[l]))
                        .wrapping_add(xa[l].wrapping_mul(yb[l]))
                        .wrapping_add(xb[l].wrapping_mul(ya[l]));
                }
                z.push(t);
            }
        }
        self.reshare_additive(z)
    }

    fn dot(&mut self, x: &RepVec, y: &RepVec) -> Result<RepVec> {
        if x.len() != y.len() {
            return Err(Error::Shape(format!("dot: {} vs {}", x.len(), y.len())));
        }
        if x.is_empty() {
            return Ok(self.constant(&[0]));
        }
        self.matmul(x, y, 1, x.len(), 1)
    }

    fn trunc(&mut self, x: &RepVec, k_bits: u32, m: u32, mode: Rounding) -> Result<RepVec> {
        self.counters.trunc += x.len() as u64;
        if m == 0 {
            return Ok(x.clone());
        }
        match mode {
            Rounding::Prob => self.trunc_prob(x, k_bits, m),
            Rounding::Nearest => self.trunc_nearest(x, k_bits, m),
        }
    }

    fn a2b(&mut self, x: &RepVec, bits: u32) -> Result<Vec<RepPlane>> {
        bits::a2b(self, x, bits)
    }
    fn msb(&mut self, x: &RepVec) -> Result<RepPlane> {
        bits::msb(self, x)
    }
    fn bit_xor(&self, a: &RepPlane, b: &RepPlane) -> RepPlane {
        bits::xor(a, b)
    }
    fn bit_not(&self, a: &RepPlane) -> RepPlane {
        bits::not_plane(self.session.me, a)
    }
    fn bit_and(&mut self, a: &RepPlane, b: &RepPlane) -> Result<RepPlane> {
        Ok(bits::and_many(self, &[(a, b)])?.pop().unwrap())
    }
    fn bit_and_many(&mut self, pairs: &[(&RepPlane, &RepPlane)]) -> Result<Vec<RepPlane>> {
        bits::and_many(self, pairs)
    }
    fn bit_const(&self, values: &[bool]) -> RepPlane {
        bits::const_plane(self.session.me, values)
    }
    fn bit_concat(&self, parts: &[&RepPlane]) -> RepPlane {
        let total: usize = parts.iter().map(|p| p.n).sum();
        let mut out = RepPlane::zeros(total);
        let mut off = 0;
        for p in parts {
            bits::copy_bits(&mut out.a, off, &p.a, p.n);
            bits::copy_bits(&mut out.b, off, &p.b, p.n);
            off += p.n;
        }
        out
    }
    fn bit_slice(&self, p: &RepPlane, start: usize, len: usize) -> RepPlane {
        let mut out = RepPlane::zeros(len);
        bits::copy_bits_from(&mut out.a, &p.a, start, len);
        bits::copy_bits_from(&mut out.b, &p.b, start, len);
        out
    }
    fn open_bits(&mut self, p: &RepPlane) -> Result<Vec<bool>> {
        bits::open_bits(self, p)
    }
    fn bit2a(&mut self, p: &RepPlane) -> Result<RepVec> {
        bits::bit2a(self, p)
    }
    fn b2a_unsigned(&mut self, planes: &[RepPlane]) -> Result<RepVec> {
        bits::b2a_unsigned(self, planes)
    }
    fn rand_bit_planes(&mut self, n: usize, w: usize) -> Result<Vec<RepPlane>> {
        Ok(bits::rand_planes(self, n, w))
    }
    fn dabits(&mut self, n: usize) -> Result<(RepVec, RepPlane)> {
        bits::dabits(self, n)
    }

    fn comm(&self) -> CommStats {
        self.session.comm_snapshot()
    }
    fn counters(&self) -> OpCounters {
        self.counters
    }
    fn counters_mut(&mut self) -> &mut OpCounters {
        &mut self.counters
    }
}

impl PartyEngine {
    /// Probabilistic truncation by mask-and-open: the pair (P0, P1) holds a
    /// random mask rho of k_bits + s bits; the shifted, masked value opens
    /// to P2 alone, which truncates in the clear and re-shares. The carry
    /// into the kept bits is exactly Bernoulli(discarded fraction).
    fn trunc_prob(&mut self, x: &RepVec, k_bits: u32, m: u32) -> Result<RepVec> {
        let n = x.len();
        if k_bits + SLACK_MIN + 1 > 64 {
            return Err(Error::Config(format!(
                "trunc_prob: k_bits = {k_bits} leaves less than {SLACK_MIN} bits of slack"
            )));
        }
        if m >= k_bits {
            return Err(Error::Config(format!("trunc_prob: m = {m} >= k' = {k_bits}")));
        }
        let s = SLACK_TARGET.min(63 - k_bits);
        let mask_bits = k_bits + s;
        let me = self.session.me;

        // Shift into [0, 2^k'): x_s = x + 2^(k'-1).
        let x_s = self.add_public(x, &[1u64 << (k_bits - 1)]);

        // rho known to P0 and P1 (pair key 0), shared as component 2.
        let rho: Option<Vec<u64>> = match me.0 {
            0 => Some(
                (0..n)
                    .map(|_| self.session.prgs.next_arith.next_u64() & ((1u64 << mask_bits) - 1))
                    .collect(),
            ),
            1 => Some(
                (0..n)
                    .map(|_| self.session.prgs.prev_arith.next_u64() & ((1u64 << mask_bits) - 1))
                    .collect(),
            ),
            _ => None,
        };
        let mut c = x_s;
        if let Some(rho) = &rho {
            match me.0 {
                0 => {
                    for i in 0..n {
                        c.a[i] = c.a[i].wrapping_add(rho[i]);
                    }
                }
                1 => {
                    for i in 0..n {
                        c.b[i] = c.b[i].wrapping_add(rho[i]);
                    }
                }
                _ => unreachable!(),
            }
        }

        // Open c to P2: its missing component 2 sits in P0's slot a.
        let shifted_pub: Option<Vec<u64>> = match me.0 {
            0 => {
                self.session.send_to(PartyId(2), &elems_to_bytes(&c.a))?;
                self.session.bump_round();
                None
            }
            2 => {
                let got = self.session.recv_from(PartyId(0), n * 8)?;
                self.session.bump_round();
                let comp2: Vec<u64> = bytes_to_elems(&got);
                Some(
                    (0..n)
                        .map(|i| {
                            let full = c.a[i].wrapping_add(c.b[i]).wrapping_add(comp2[i]);
                            full >> m
                        })
                        .collect(),
                )
            }
            _ => {
                self.session.bump_round();
                None
            }
        };

        // P2 re-shares the truncated public value.
        let y = self.input(PartyId(2), shifted_pub.as_deref(), n)?;

        // Remove the mask's high part and the range shift.
        let mut out = y;
        if let Some(rho) = &rho {
            match me.0 {
                0 => {
                    for i in 0..n {
                        out.a[i] = out.a[i].wrapping_sub(rho[i] >> m);
                    }
                }
                1 => {
                    for i in 0..n {
                        out.b[i] = out.b[i].wrapping_sub(rho[i] >> m);
                    }
                }
                _ => unreachable!(),
            }
        }
        let unshift = (1u64 << (k_bits - 1 - m)).wrapping_neg();
        Ok(self.add_public(&out, &[unshift]))
    }

    /// Deterministic nearest truncation through the binary domain:
    /// a2b of x + 2^(m-1), drop the low m planes, compose back with sign.
    fn trunc_nearest(&mut self, x: &RepVec, k_bits: u32, m: u32) -> Result<RepVec> {
        let w = k_bits + 1;
        if w > 64 {
            return Err(Error::Config(format!(
                "trunc_nearest: k_bits = {k_bits} too wide"
            )));
        }
        let y = self.add_public(x, &[1u64 << (m - 1)]);
        let planes = bits::a2b(self, &y, w)?;
        let kept = &planes[m as usize..w as usize];
        circuits::compose_signed(self, kept)
    }
}

#[inline]
fn zip_wrap(x: &[u64], y: &[u64], f: fn(u64, u64) -> u64) -> Vec<u64> {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(&u, &v)| f(u, v)).collect()
}
