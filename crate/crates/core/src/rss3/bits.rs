//! Binary-domain protocols for the replicated engine: packed bit planes,
//! AND with rerandomization, domain conversion, and daBits.
//!
//! Conversions follow the local-share-decomposition route: each arithmetic
//! share component is bit-decomposed locally (a valid, non-random binary
//! sharing), and the three bit-vectors are summed with binary adders.

use super::{PartyEngine, RepPlane, RepVec};
use crate::circuits;
use crate::engine::Engine;
use crate::transport::{pack_bits, unpack_bits, PartyId};
use crate::{Error, Result};
use rand::RngCore;

fn words(n: usize) -> usize {
    n.div_ceil(64)
}

fn tail_mask(n: usize) -> u64 {
    let t = n % 64;
    if t == 0 {
        u64::MAX
    } else {
        (1u64 << t) - 1
    }
}

fn mask_tail(buf: &mut [u64], n: usize) {
    if let Some(last) = buf.last_mut() {
        *last &= tail_mask(n);
    }
}

/// Copy `n` bits from the start of `src` into `dst` at bit offset `dst_off`.
pub fn copy_bits(dst: &mut [u64], dst_off: usize, src: &[u64], n: usize) {
    for i in 0..n {
        let bit = (src[i / 64] >> (i % 64)) & 1;
        dst[(dst_off + i) / 64] |= bit << ((dst_off + i) % 64);
    }
}

/// Copy `len` bits from `src` starting at `src_off` into the start of `dst`.
pub fn copy_bits_from(dst: &mut [u64], src: &[u64], src_off: usize, len: usize) {
    for i in 0..len {
        let bit = (src[(src_off + i) / 64] >> ((src_off + i) % 64)) & 1;
        dst[i / 64] |= bit << (i % 64);
    }
}

pub fn xor(x: &RepPlane, y: &RepPlane) -> RepPlane {
    debug_assert_eq!(x.n, y.n);
    RepPlane {
        a: x.a.iter().zip(&y.a).map(|(u, v)| u ^ v).collect(),
        b: x.b.iter().zip(&y.b).map(|(u, v)| u ^ v).collect(),
        n: x.n,
    }
}

/// NOT is XOR with the public all-ones plane (component 0).
pub fn not_plane(me: PartyId, x: &RepPlane) -> RepPlane {
    let mut out = x.clone();
    match me.0 {
        1 => {
            for w in out.a.iter_mut() {
                *w = !*w;
            }
            mask_tail(&mut out.a, out.n);
        }
        2 => {
            for w in out.b.iter_mut() {
                *w = !*w;
            }
            mask_tail(&mut out.b, out.n);
        }
        _ => {}
    }
    out
}

pub fn const_plane(me: PartyId, values: &[bool]) -> RepPlane {
    let n = values.len();
    let mut packed = vec![0u64; words(n)];
    for (i, &v) in values.iter().enumerate() {
        if v {
            packed[i / 64] |= 1u64 << (i % 64);
        }
    }
    let mut out = RepPlane::zeros(n);
    match me.0 {
        1 => out.a = packed,
        2 => out.b = packed,
        _ => {}
    }
    out
}

/// Batched binary AND: one message per party for the whole batch.
pub fn and_many(e: &mut PartyEngine, pairs: &[(&RepPlane, &RepPlane)]) -> Result<Vec<RepPlane>> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let mut masked: Vec<Vec<u64>> = Vec::with_capacity(pairs.len());
    let mut payload = Vec::new();
    for &(x, y) in pairs {
        if x.n != y.n {
            return Err(Error::Shape(format!("and: {} vs {} bits", x.n, y.n)));
        }
        let nw = words(x.n);
        let mut z = Vec::with_capacity(nw);
        for i in 0..nw {
            // x_{i-1}y_{i-1} ^ x_{i-1}y_{i+1} ^ x_{i+1}y_{i-1}
            let t = (x.a[i] & y.a[i]) ^ (x.a[i] & y.b[i]) ^ (x.b[i] & y.a[i]);
            let r_next = e.session.prgs.next_bits.next_u64();
            let r_prev = e.session.prgs.prev_bits.next_u64();
            z.push(t ^ r_next ^ r_prev);
        }
        mask_tail(&mut z, x.n);
        payload.extend_from_slice(&pack_bits(&z, x.n));
        masked.push(z);
    }
    let expect = payload.len();
    let got = e.session.exchange(&payload, expect)?;
    let mut out = Vec::with_capacity(pairs.len());
    let mut off = 0usize;
    for (idx, &(x, _)) in pairs.iter().enumerate() {
        let nb = x.n.div_ceil(8);
        let w = unpack_bits(&got[off..off + nb], x.n);
        off += nb;
        out.push(RepPlane {
            a: std::mem::take(&mut masked[idx]),
            b: w,
            n: x.n,
        });
    }
    Ok(out)
}

pub fn open_bits(e: &mut PartyEngine, p: &RepPlane) -> Result<Vec<bool>> {
    let payload = pack_bits(&p.a, p.n);
    let got = e.session.exchange_prev(&payload, payload.len())?;
    let missing = unpack_bits(&got, p.n);
    let mut out = Vec::with_capacity(p.n);
    for i in 0..p.n {
        let w = i / 64;
        let bit = ((p.a[w] ^ p.b[w] ^ missing[w]) >> (i % 64)) & 1;
        out.push(bit == 1);
    }
    Ok(out)
}

/// Fresh replicated random bits, zero communication: component j comes from
/// the PRG of the pair that excludes P_j, so both holders derive it alike.
pub fn rand_plane(e: &mut PartyEngine, n: usize) -> RepPlane {
    let nw = words(n);
    let mut a = Vec::with_capacity(nw);
    let mut b = Vec::with_capacity(nw);
    for _ in 0..nw {
        a.push(e.session.prgs.next_bits.next_u64());
    }
    for _ in 0..nw {
        b.push(e.session.prgs.prev_bits.next_u64());
    }
    mask_tail(&mut a, n);
    mask_tail(&mut b, n);
    RepPlane { a, b, n }
}

pub fn rand_planes(e: &mut PartyEngine, n: usize, w: usize) -> Vec<RepPlane> {
    (0..w).map(|_| rand_plane(e, n)).collect()
}

/// daBits: a random bit shared in both domains. The binary sharing costs
/// nothing; the arithmetic value is assembled through the XOR identity
/// x ^ y = x + y - 2xy, two multiplications per bit.
pub fn dabits(e: &mut PartyEngine, n: usize) -> Result<(RepVec, RepPlane)> {
    let plane = rand_plane(e, n);
    // Arithmetic sharings of the three binary components, ordered by
    // component index. My slot a holds component me-1, slot b me+1.
    let unpack01 = |packed: &[u64]| -> Vec<u64> {
        (0..n).map(|i| (packed[i / 64] >> (i % 64)) & 1).collect()
    };
    let from_a = RepVec {
        a: unpack01(&plane.a),
        b: vec![0; n],
    };
    let from_b = RepVec {
        a: vec![0; n],
        b: unpack01(&plane.b),
    };
    let zero = RepVec::zeros(n);
    let me = e.session.me.0 as usize;
    let comp_share = |j: usize| -> &RepVec {
        if j == (me + 2) % 3 {
            &from_a
        } else if j == (me + 1) % 3 {
            &from_b
        } else {
            &zero
        }
    };
    let (c0, c1, c2) = (
        comp_share(0).clone(),
        comp_share(1).clone(),
        comp_share(2).clone(),
    );
    let t = xor_arith(e, &c0, &c1)?;
    let arith = xor_arith(e, &t, &c2)?;
    Ok((arith, plane))
}

fn xor_arith(e: &mut PartyEngine, x: &RepVec, y: &RepVec) -> Result<RepVec> {
    let prod = e.mul(x, y)?;
    let sum = e.add(x, y);
    let twice = e.scale_public(&prod, &[2]);
    Ok(e.sub(&sum, &twice))
}

/// Arithmetic sharing in {0,1} of every bit in the plane: mask with a
/// daBit, open the masked bit, unmask in the arithmetic domain.
pub fn bit2a(e: &mut PartyEngine, p: &RepPlane) -> Result<RepVec> {
    let n = p.n;
    let (ra, rb) = dabits(e, n)?;
    let masked = xor(p, &rb);
    let c = open_bits(e, &masked)?;
    // out = c + (1 - 2c) * ra, elementwise with public c.
    let mut out = ra;
    for (i, &ci) in c.iter().enumerate() {
        if ci {
            out.a[i] = out.a[i].wrapping_neg();
            out.b[i] = out.b[i].wrapping_neg();
        }
    }
    let c_pub: Vec<u64> = c.iter().map(|&ci| ci as u64).collect();
    Ok(e.add_public(&out, &c_pub))
}

/// Compose w binary planes into arithmetic shares of sum(2^i b_i).
///
/// Mask-and-open route: the pair (P0, P1) knows a random w-bit rho per
/// element; d = x - rho mod 2^w is computed in the binary domain and opened
/// to P2, which re-shares it arithmetically. x = d + rho - 2^w [x < rho].
pub fn b2a_unsigned(e: &mut PartyEngine, planes: &[RepPlane]) -> Result<RepVec> {
    let w = planes.len();
    assert!(w >= 1 && w <= 64, "b2a width {w}");
    let n = planes[0].n;
    let me = e.session.me;

    // rho: bits drawn from pair key 0 by P0/P1, both as cleartext values and
    // as component-2 sharings in each domain.
    let mut rho_bits_local: Option<Vec<Vec<u64>>> = None; // w planes of packed bits
    if me.0 == 0 || me.0 == 1 {
        let mut planes_local = Vec::with_capacity(w);
        for _ in 0..w {
            let mut buf = Vec::with_capacity(words(n));
            for _ in 0..words(n) {
                let word = if me.0 == 0 {
                    e.session.prgs.next_bits.next_u64()
                } else {
                    e.session.prgs.prev_bits.next_u64()
                };
                buf.push(word);
            }
            mask_tail(&mut buf, n);
            planes_local.push(buf);
        }
        rho_bits_local = Some(planes_local);
    }
    // Shared binary planes of rho (component 2: P0 slot a, P1 slot b).
    let rho_planes: Vec<RepPlane> = (0..w)
        .map(|j| {
            let mut pl = RepPlane::zeros(n);
            if let Some(local) = &rho_bits_local {
                match me.0 {
                    0 => pl.a = local[j].clone(),
                    1 => pl.b = local[j].clone(),
                    _ => unreachable!(),
                }
            }
            pl
        })
        .collect();

    let (d_planes, borrow) = circuits::sub_with_borrow::<PartyEngine>(e, planes, &rho_planes)?;

    // Open d to P2 (missing component 2: P0's slot a).
    let d_pub: Option<Vec<u64>> = match me.0 {
        0 => {
            let mut payload = Vec::new();
            for pl in &d_planes {
                payload.extend_from_slice(&pack_bits(&pl.a, n));
            }
            e.session.send_to(PartyId(2), &payload)?;
            e.session.bump_round();
            None
        }
        2 => {
            let nb = n.div_ceil(8);
            let got = e.session.recv_from(PartyId(0), nb * w)?;
            e.session.bump_round();
            let mut vals = vec![0u64; n];
            for (j, pl) in d_planes.iter().enumerate() {
                let miss = unpack_bits(&got[j * nb..(j + 1) * nb], n);
                for (i, val) in vals.iter_mut().enumerate() {
                    let word = i / 64;
                    let bit = ((pl.a[word] ^ pl.b[word] ^ miss[word]) >> (i % 64)) & 1;
                    *val |= bit << j;
                }
            }
            Some(vals)
        }
        _ => {
            e.session.bump_round();
            None
        }
    };
    let d_sh = e.input(PartyId(2), d_pub.as_deref(), n)?;

    // [rho] as arithmetic component 2.
    let mut out = d_sh;
    if let Some(local) = &rho_bits_local {
        let mut rho_int = vec![0u64; n];
        for (j, plane) in local.iter().enumerate() {
            for (i, val) in rho_int.iter_mut().enumerate() {
                *val |= ((plane[i / 64] >> (i % 64)) & 1) << j;
            }
        }
        match me.0 {
            0 => {
                for i in 0..n {
                    out.a[i] = out.a[i].wrapping_add(rho_int[i]);
                }
            }
            1 => {
                for i in 0..n {
                    out.b[i] = out.b[i].wrapping_add(rho_int[i]);
                }
            }
            _ => unreachable!(),
        }
    }

    if w < 64 {
        let ba = bit2a(e, &borrow)?;
        let corr = e.scale_public(&ba, &[1u64 << w]);
        out = e.sub(&out, &corr);
    }
    Ok(out)
}

/// Arithmetic-to-binary conversion of the `bits` least significant bits:
/// local share decomposition plus one carry-save stage and one prefix adder.
pub fn a2b(e: &mut PartyEngine, x: &RepVec, bits: u32) -> Result<Vec<RepPlane>> {
    assert!(bits >= 1 && bits <= 64, "a2b width {bits}");
    let (d0, d1, d2) = decompose_components(e, x, bits);
    let (sums, carries) = circuits::csa3::<PartyEngine>(e, &d0, &d1, &d2)?;
    let shifted = shift_up(e, &carries);
    circuits::add2_mod::<PartyEngine>(e, &sums, &shifted)
}

/// Most significant bit of the full-width value (the sign under the
/// two's-complement convention). Runs the carry-save stage plus a
/// generate-only tree for the carry into bit 63.
pub fn msb(e: &mut PartyEngine, x: &RepVec) -> Result<RepPlane> {
    e.counters_mut().ltz += 1;
    let w = 64u32;
    let (d0, d1, d2) = decompose_components(e, x, w);
    let (sums, carries) = circuits::csa3::<PartyEngine>(e, &d0, &d1, &d2)?;
    let shifted = shift_up(e, &carries);
    let top = (w - 1) as usize;
    // carry into bit 63 of sums + shifted
    let pairs: Vec<(&RepPlane, &RepPlane)> = sums[..top]
        .iter()
        .zip(shifted[..top].iter())
        .collect();
    let g = and_many(e, &pairs)?;
    let p: Vec<RepPlane> = sums[..top]
        .iter()
        .zip(shifted[..top].iter())
        .map(|(u, v)| xor(u, v))
        .collect();
    let carry = circuits::generate_out::<PartyEngine>(e, &g, &p)?;
    Ok(xor(&xor(&sums[top], &shifted[top]), &carry))
}

fn shift_up(e: &PartyEngine, planes: &[RepPlane]) -> Vec<RepPlane> {
    let n = planes[0].n;
    let mut out = Vec::with_capacity(planes.len());
    out.push(const_plane(e.session.me, &vec![false; n]));
    out.extend_from_slice(&planes[..planes.len() - 1]);
    out
}

/// The three component-wise bit decompositions, ordered by component index.
fn decompose_components(
    e: &PartyEngine,
    x: &RepVec,
    bits: u32,
) -> (Vec<RepPlane>, Vec<RepPlane>, Vec<RepPlane>) {
    let n = x.len();
    let me = e.session.me.0 as usize;
    let plane_of = |vals: &[u64], j: u32, slot_a: bool| -> RepPlane {
        let mut pl = RepPlane::zeros(n);
        let dst = if slot_a { &mut pl.a } else { &mut pl.b };
        for (i, &v) in vals.iter().enumerate() {
            dst[i / 64] |= ((v >> j) & 1) << (i % 64);
        }
        pl
    };
    let mut from_a = Vec::with_capacity(bits as usize);
    let mut from_b = Vec::with_capacity(bits as usize);
    let mut zeros = Vec::with_capacity(bits as usize);
    for j in 0..bits {
        from_a.push(plane_of(&x.a, j, true));
        from_b.push(plane_of(&x.b, j, false));
        zeros.push(RepPlane::zeros(n));
    }
    // Component me-1 lives in my slot a, component me+1 in slot b.
    let mut by_comp: [Option<Vec<RepPlane>>; 3] = [None, None, None];
    by_comp[(me + 2) % 3] = Some(from_a);
    by_comp[(me + 1) % 3] = Some(from_b);
    by_comp[me] = Some(zeros);
    let [c0, c1, c2] = by_comp;
    (c0.unwrap(), c1.unwrap(), c2.unwrap())
}
