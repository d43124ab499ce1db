//! Secure fixed-point primitives over shares: truncation wrappers,
//! comparison, oblivious selection, division, base-two exponentiation,
//! inverse square root, logarithm, and secure randomness.
//!
//! Everything here is generic over the engine, so the same circuits drive
//! both the 3-party protocol and the cleartext emulator.

use crate::circuits;
use crate::engine::Engine;
use crate::ring::Ring;
use crate::{Error, Result};

/// Goldschmidt iteration count. Frozen against the cleartext oracle sweep in
/// the division tests: three iterations bring the relative error under
/// 2^-14 across [2^-13, 2^13] for f = 16 (two fall just short of the target
/// once truncation noise is added).
pub const DIV_ITERS: usize = 3;

/// Taylor degree for 2^x on [0, 1), expanded at 0. The degree-8 remainder
/// (ln 2)^9 / 9! is below 2^-17, under half a representation step at f = 16.
pub const EXP2_TAYLOR_DEGREE: usize = 8;

fn qf<R: Ring>(x: f64, f: u32) -> R {
    R::from_i64((x * (2.0f64).powi(f as i32)).round() as i64)
}

/// Encode a real constant at the engine's precision.
pub fn encode_const<E: Engine>(e: &E, x: f64) -> E::R {
    qf::<E::R>(x, e.cfg().f)
}

/// Fixed-point product: multiply at 2f precision, one truncation back to f.
pub fn fixed_mul<E: Engine>(e: &mut E, x: &E::AVec, y: &E::AVec) -> Result<E::AVec> {
    let cfg = e.cfg();
    let prod = e.mul(x, y)?;
    e.trunc(&prod, cfg.k + cfg.f, cfg.f, e.rounding())
}

/// Fixed-point product with a public constant.
pub fn fixed_mul_public<E: Engine>(e: &mut E, x: &E::AVec, c_raw: E::R) -> Result<E::AVec> {
    let cfg = e.cfg();
    let prod = e.scale_public(x, &[c_raw]);
    e.trunc(&prod, cfg.k + cfg.f, cfg.f, e.rounding())
}

/// Sign extraction: binary sharing of [x < 0].
pub fn ltz<E: Engine>(e: &mut E, x: &E::AVec) -> Result<E::BPlane> {
    e.msb(x)
}

/// Oblivious selection: returns x where b = 0 and y where b = 1, via
/// x + b * (y - x) after lifting b into the arithmetic domain.
pub fn mux<E: Engine>(
    e: &mut E,
    b: &E::BPlane,
    x: &E::AVec,
    y: &E::AVec,
) -> Result<E::AVec> {
    let ba = e.bit2a(b)?;
    mux_arith(e, &ba, x, y)
}

/// Oblivious selection with the selector already in the arithmetic domain.
pub fn mux_arith<E: Engine>(
    e: &mut E,
    b_arith: &E::AVec,
    x: &E::AVec,
    y: &E::AVec,
) -> Result<E::AVec> {
    let diff = e.sub(y, x);
    let picked = e.mul(b_arith, &diff)?;
    Ok(e.add(x, &picked))
}

/// Elementwise maximum, returning the selector bits for gradient routing.
pub fn max_pairwise<E: Engine>(
    e: &mut E,
    x: &E::AVec,
    y: &E::AVec,
) -> Result<(E::AVec, E::AVec)> {
    let diff = e.sub(x, y);
    let lt = ltz(e, &diff)?; // [x < y]
    let sel = e.bit2a(&lt)?;
    let max = mux_arith(e, &sel, x, y)?;
    Ok((max, sel))
}

/// Next power of two as a one-hot bit vector over the k value bits: the
/// single 1 sits at index e + f where 2^(e-1) <= x <= 2^e, ties resolved
/// toward the smaller exponent.
///
/// Subtracting one first turns the search into a highest-set-bit scan:
/// suffix-OR the bits of x - 1, then difference adjacent planes.
pub fn np2<E: Engine>(e: &mut E, x: &E::AVec) -> Result<Vec<E::BPlane>> {
    let k = e.cfg().k;
    let minus_one = E::R::ZERO.wrapping_sub(E::R::ONE);
    let y = e.add_public(x, &[minus_one]);
    let planes = e.a2b(&y, k)?;
    let p = circuits::suffix_or(e, &planes)?;
    let mut out = Vec::with_capacity(k as usize);
    out.push(e.bit_not(&p[0]));
    for i in 1..k as usize {
        out.push(e.bit_xor(&p[i - 1], &p[i]));
    }
    Ok(out)
}

/// Normalization stage shared by division, logarithm, and inverse square
/// root: returns (u, v, z) with u = x * 2^(-e-1) in [0.25, 0.5],
/// v = shares of 2^(-e-1), and z the one-hot exponent indicator.
pub fn sep<E: Engine>(
    e: &mut E,
    x: &E::AVec,
) -> Result<(E::AVec, E::AVec, Vec<E::BPlane>)> {
    let cfg = e.cfg();
    let (f, k) = (cfg.f, cfg.k);
    let n = E::alen(x);
    let z = np2(e, x)?;
    // v = sum_i z_i * 2^(2f-1-i): the reversed composition maps the one-hot
    // index e+f to the raw value 2^(f-1-e), i.e. the fixed value 2^(-e-1).
    let zero = e.bit_const(&vec![false; n]);
    let rev: Vec<&E::BPlane> = (0..2 * f as usize)
        .map(|j| {
            let idx = 2 * f as usize - 1 - j;
            if idx < k as usize {
                &z[idx]
            } else {
                &zero
            }
        })
        .collect();
    let rev_owned: Vec<E::BPlane> = rev.into_iter().cloned().collect();
    let v = e.b2a_unsigned(&rev_owned)?;
    let u = fixed_mul(e, x, &v)?;
    Ok((u, v, z))
}

/// Goldschmidt division a / b for strictly positive divisors. Behavior on
/// b <= 0 is undefined by contract.
pub fn div<E: Engine>(e: &mut E, a: &E::AVec, b: &E::AVec) -> Result<E::AVec> {
    let n = E::alen(a);
    if n != E::alen(b) {
        return Err(Error::Shape(format!("div: {} vs {}", n, E::alen(b))));
    }
    e.counters_mut().div += n as u64;
    let cfg = e.cfg();
    let (u, v, _z) = sep(e, b)?;
    // Initial reciprocal estimate of b~ = 2u in [0.5, 1]: w = 2.9142 - 2 b~.
    let four = E::R::from_u64(4);
    let w0 = {
        let t = e.scale_public(&u, &[four.wrapping_neg()]);
        e.add_public(&t, &[qf::<E::R>(2.9142, cfg.f)])
    };
    // q = (a * 2^-e) * w, r = b~ * w; then refine both by 2 - r. Scaling a
    // first keeps the intermediate near the final quotient's magnitude, so
    // the truncation noise stays at the output scale even for tiny divisors.
    let v2 = e.scale_public(&v, &[E::R::from_u64(2)]); // 2^-e
    let av = fixed_mul(e, a, &v2)?;
    let mut q = fixed_mul(e, &av, &w0)?;
    let b_norm = e.scale_public(&u, &[E::R::from_u64(2)]); // in [0.5, 1]
    let mut r = fixed_mul(e, &b_norm, &w0)?;
    let two = qf::<E::R>(2.0, cfg.f);
    for _ in 0..DIV_ITERS {
        let fct = {
            let nr = e.neg(&r);
            e.add_public(&nr, &[two])
        };
        q = fixed_mul(e, &q, &fct)?;
        r = fixed_mul(e, &r, &fct)?;
    }
    Ok(q)
}

/// Base-two exponentiation of a fixed-point share.
///
/// Mixed-circuit pipeline: bit-decompose, flag inputs below -(k-f-1) for an
/// exact zero output, exponentiate the integer bits with an oblivious
/// product, approximate 2^frac with a Taylor polynomial, and divide by
/// 2^(2^l) through a cheap truncation for negative inputs instead of a full
/// division.
pub fn exp2<E: Engine>(e: &mut E, x: &E::AVec) -> Result<E::AVec> {
    let cfg = e.cfg();
    let (f, k) = (cfg.f, cfg.k);
    // l = ceil(log2(k - f))
    let ell = (k - f).next_power_of_two().trailing_zeros().max(1);
    let n = E::alen(x);

    let planes = e.a2b(x, k)?;

    // Underflow flag z = [x < -(k-f-1)], a signed comparison on the k-bit
    // two's complement representation (the comparison reads only the low k
    // bits of the constant).
    let threshold = (-(((k - f - 1) as i64) << f)) as u64;
    let z = circuits::lt_const_signed(e, &planes, threshold)?;

    // Lift the integer-part bits, the sign bit, and the underflow flag in
    // one batched conversion.
    let mut to_lift: Vec<&E::BPlane> = Vec::new();
    for j in 0..ell as usize {
        to_lift.push(&planes[f as usize + j]);
    }
    to_lift.push(&planes[(k - 1) as usize]);
    to_lift.push(&z);
    let lifted_plane = e.bit_concat(&to_lift);
    let lifted = e.bit2a(&lifted_plane)?;
    let int_bits: Vec<E::AVec> = (0..ell as usize)
        .map(|j| e.slice(&lifted, j * n, n))
        .collect();
    let sign_a = e.slice(&lifted, ell as usize * n, n);
    let z_a = e.slice(&lifted, (ell as usize + 1) * n, n);

    // d = prod_j (x_{f+j} * (2^(2^j) - 1) + 1): 2^(integer part).
    let mut d: Option<E::AVec> = None;
    for (j, bit) in int_bits.iter().enumerate() {
        let weight = E::R::ONE.shl(1 << j).wrapping_sub(E::R::ONE);
        let factor = {
            let t = e.scale_public(bit, &[weight]);
            e.add_public(&t, &[E::R::ONE])
        };
        d = Some(match d {
            None => factor,
            Some(prev) => e.mul(&prev, &factor)?,
        });
    }
    let d = d.unwrap();

    // Fractional part r = B2A of the low f bits, then u ~= 2^r by Taylor.
    let r = e.b2a_unsigned(&planes[..f as usize])?;
    let u = exp2_frac(e, &r)?;

    // g ~= 2^(y + r) at precision f; g' = g / 2^(2^l) for negative inputs.
    let g = e.mul(&u, &d)?;
    let two_ell = 1u32 << ell;
    let gp = e.trunc(&g, (f + two_ell + 1).min(E::R::BITS - 9), two_ell, e.rounding())?;
    let shifted_diff = e.sub(&gp, &g);
    let corr = e.mul(&sign_a, &shifted_diff)?;
    let h = e.add(&g, &corr);

    // Zero out underflowed entries: (1 - z) * h.
    let zh = e.mul(&z_a, &h)?;
    Ok(e.sub(&h, &zh))
}

/// Taylor approximation of 2^r for r in [0, 1), Horner form.
fn exp2_frac<E: Engine>(e: &mut E, r: &E::AVec) -> Result<E::AVec> {
    let cfg = e.cfg();
    let f = cfg.f;
    let ln2 = std::f64::consts::LN_2;
    let coeff = |j: usize| -> f64 {
        let mut c = 1.0;
        for i in 1..=j {
            c *= ln2 / i as f64;
        }
        c
    };
    let n = E::alen(r);
    let mut acc = e.constant(&vec![qf::<E::R>(coeff(EXP2_TAYLOR_DEGREE), f); n]);
    for j in (0..EXP2_TAYLOR_DEGREE).rev() {
        let prod = e.mul(&acc, r)?;
        // Values stay within [0, 2): 2f+2 bits cover the product.
        let trunced = e.trunc(&prod, 2 * f + 2, f, e.rounding())?;
        acc = e.add_public(&trunced, &[qf::<E::R>(coeff(j), f)]);
    }
    Ok(acc)
}

/// Natural exponentiation via the base change a^x = 2^(x log2 a).
pub fn exp_e<E: Engine>(e: &mut E, x: &E::AVec) -> Result<E::AVec> {
    let c = encode_const(e, std::f64::consts::LOG2_E);
    let scaled = fixed_mul_public(e, x, c)?;
    exp2(e, &scaled)
}

/// Inverse square root constants: the value 2^(f/2) when e + f is odd and
/// 2^((f+1)/2) when even, encoded at precision f.
fn sqrt_comp_consts<R: Ring>(f: u32) -> (R, R) {
    let c0 = R::ONE.shl(f / 2 + f);
    let c1 = R::from_u128((2.0f64.powf((f as f64 + 1.0) / 2.0 + f as f64)).round() as u128);
    (c0, c1)
}

/// Intermediate values of the inverse-square-root pipeline, kept around by
/// callers (batch normalization) that differentiate through it.
pub struct InvSqrtParts<E: Engine> {
    pub out: E::AVec,
    /// Normalized mantissa u = x * 2^(-e-1) in [0.25, 0.5].
    pub u: E::AVec,
    /// Shares of 2^(-e-1).
    pub v: E::AVec,
    /// Shares of the power-of-two compensation 2^(-(e+1)/2).
    pub comp: E::AVec,
}

/// 1 / sqrt(x) for x in [2^(-f+1), 2^(f-1)].
pub fn invert_sqrt<E: Engine>(e: &mut E, x: &E::AVec) -> Result<E::AVec> {
    Ok(invert_sqrt_parts(e, x)?.out)
}

/// Full pipeline with intermediates.
///
/// Sep normalizes to u in [0.25, 0.5], a quadratic approximates 1/sqrt(u),
/// and the power-of-two compensation rebuilds 2^(-(e+1)/2) from the one-hot
/// exponent, using the parity shortcut b = XOR of even-indexed z bits.
pub fn invert_sqrt_parts<E: Engine>(e: &mut E, x: &E::AVec) -> Result<InvSqrtParts<E>> {
    let cfg = e.cfg();
    let f = cfg.f;
    let (u, v, z) = sep(e, x)?;

    // c(u) = 3.14736 + u (4.63887 u - 5.77789)
    let t = fixed_mul_public(e, &u, qf::<E::R>(4.63887, f))?;
    let t = e.add_public(&t, &[qf::<E::R>(-5.77789, f)]);
    let cu = fixed_mul(e, &u, &t)?;
    let cu = e.add_public(&cu, &[qf::<E::R>(3.14736, f)]);

    // a_i = z_{2i} | z_{2i+1}: one-hot at e' = floor((e+f)/2).
    let a = circuits::or_adjacent(e, &z)?;
    // w = 2^(-e'-1) by reversed composition over f planes.
    let n = E::alen(x);
    let zero = e.bit_const(&vec![false; n]);
    let rev: Vec<E::BPlane> = (0..f as usize)
        .map(|j| {
            let idx = f as usize - 1 - j;
            if idx < a.len() {
                a[idx].clone()
            } else {
                zero.clone()
            }
        })
        .collect();
    let w = e.b2a_unsigned(&rev)?;

    // Parity bit b = XOR of even-indexed z planes = [e + f even].
    let mut parity = z[0].clone();
    let mut i = 2;
    while i < z.len() {
        parity = e.bit_xor(&parity, &z[i]);
        i += 2;
    }
    let ba = e.bit2a(&parity)?;
    let (c0, c1) = sqrt_comp_consts::<E::R>(f);
    let sel = {
        let t = e.scale_public(&ba, &[c1.wrapping_sub(c0)]);
        e.add_public(&t, &[c0])
    };
    let comp = fixed_mul(e, &sel, &w)?;
    let out = fixed_mul(e, &cu, &comp)?;
    Ok(InvSqrtParts { out, u, v, comp })
}

/// Derivative of the inverse-square-root quadratic: c'(u) = 9.27774 u - 5.77789.
pub fn invert_sqrt_quad_derivative<E: Engine>(e: &mut E, u: &E::AVec) -> Result<E::AVec> {
    let f = e.cfg().f;
    let t = fixed_mul_public(e, u, qf::<E::R>(2.0 * 4.63887, f))?;
    Ok(e.add_public(&t, &[qf::<E::R>(-5.77789, f)]))
}

/// log2(x) for x > 0: normalize to a = 2u in [0.5, 1], evaluate
/// ln a = 2 atanh((a-1)/(a+1)) by series, change base, add the exponent.
pub fn log2<E: Engine>(e: &mut E, x: &E::AVec) -> Result<E::AVec> {
    let cfg = e.cfg();
    let f = cfg.f;
    let n = E::alen(x);
    let (u, _v, z) = sep(e, x)?;
    let a = e.scale_public(&u, &[E::R::from_u64(2)]);
    let one = qf::<E::R>(1.0, f);
    let num = e.add_public(&a, &[one.wrapping_neg()]);
    let den = e.add_public(&a, &[one]);
    let t = div(e, &num, &den)?;
    let t2 = fixed_mul(e, &t, &t)?;
    // 1 + t2/3 + t2^2/5 + t2^3/7
    let mut poly = e.constant(&vec![qf::<E::R>(1.0 / 7.0, f); n]);
    for c in [1.0 / 5.0, 1.0 / 3.0, 1.0] {
        let p = fixed_mul(e, &poly, &t2)?;
        poly = e.add_public(&p, &[qf::<E::R>(c, f)]);
    }
    let atanh = fixed_mul(e, &t, &poly)?;
    let ln_a = e.scale_public(&atanh, &[E::R::from_u64(2)]);
    let log2_a = fixed_mul_public(e, &ln_a, encode_const(e, std::f64::consts::LOG2_E))?;

    // Exponent e = (one-hot index) - f, composed from lifted z bits.
    let zcat = e.bit_concat(&z.iter().collect::<Vec<_>>());
    let za = e.bit2a(&zcat)?;
    let mut exp_acc = e.constant(&vec![E::R::ZERO; n]);
    for (i, _) in z.iter().enumerate() {
        let part = e.slice(&za, i * n, n);
        let weight = E::R::from_i64(((i as i64) - (f as i64)) << f);
        let scaled = e.scale_public(&part, &[weight]);
        exp_acc = e.add(&exp_acc, &scaled);
    }
    Ok(e.add(&log2_a, &exp_acc))
}

/// Uniform random fixed-point value on [0, 2^exp), built from f + exp
/// secure random bits composed into the arithmetic domain.
pub fn rand_fraction<E: Engine>(e: &mut E, n: usize, exp: i32) -> Result<E::AVec> {
    let f = e.cfg().f as i32;
    if f + exp > e.cfg().k as i32 {
        return Err(Error::Config(format!(
            "rand_fraction: f + e = {} exceeds k = {}",
            f + exp,
            e.cfg().k
        )));
    }
    let nbits = f + exp;
    if nbits <= 0 {
        return Ok(e.constant(&vec![E::R::ZERO; n]));
    }
    let planes = e.rand_bit_planes(n, nbits as usize)?;
    e.b2a_unsigned(&planes)
}

/// Secret Bernoulli draws with public probability p: floor(p + r) for
/// uniform r, computed as the carry out of the f-bit addition of Q(p) and
/// fresh random bits.
pub fn bernoulli<E: Engine>(e: &mut E, n: usize, p: f64) -> Result<E::AVec> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Range(format!("bernoulli probability {p}")));
    }
    let f = e.cfg().f;
    let praw = (p * (2.0f64).powi(f as i32)).round() as u64;
    if praw == 0 {
        return Ok(e.constant(&vec![E::R::ZERO; n]));
    }
    if praw >= 1u64 << f {
        return Ok(e.constant(&vec![E::R::ONE; n]));
    }
    let planes = e.rand_bit_planes(n, f as usize)?;
    let carry = circuits::carry_out_add_const(e, &planes, praw)?;
    e.bit2a(&carry)
}
