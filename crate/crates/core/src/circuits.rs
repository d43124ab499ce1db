//! Binary circuits over bit planes, generic over the engine.
//!
//! Adders are parallel-prefix (Sklansky) to keep round depth logarithmic;
//! summing three bit-vectors uses one carry-save reduction followed by one
//! prefix adder. Every level's AND gates flush in a single round.

use crate::engine::Engine;
use crate::Result;

type Planes<E> = Vec<<E as Engine>::BPlane>;

/// Carry-save reduction of three addends into (sum, carry); the carry is
/// NOT yet shifted left. sum_i = x^y^z, carry_i = majority(x,y,z).
pub fn csa3<E: Engine>(
    e: &mut E,
    x: &[E::BPlane],
    y: &[E::BPlane],
    z: &[E::BPlane],
) -> Result<(Planes<E>, Planes<E>)> {
    let w = x.len();
    let mut sums = Vec::with_capacity(w);
    let mut lhs = Vec::with_capacity(w);
    let mut rhs = Vec::with_capacity(w);
    for i in 0..w {
        let xz = e.bit_xor(&x[i], &z[i]);
        let yz = e.bit_xor(&y[i], &z[i]);
        sums.push(e.bit_xor(&xz, &y[i]));
        lhs.push(xz);
        rhs.push(yz);
    }
    // majority(x,y,z) = ((x^z) & (y^z)) ^ z
    let pairs: Vec<(&E::BPlane, &E::BPlane)> = lhs.iter().zip(rhs.iter()).collect();
    let ands = e.bit_and_many(&pairs)?;
    let carries = ands
        .iter()
        .zip(z.iter())
        .map(|(a, zi)| e.bit_xor(a, zi))
        .collect();
    Ok((sums, carries))
}

/// Sklansky prefix computation over (generate, propagate) pairs.
/// Returns prefix generates: out[i] = G(0..=i).
fn sklansky<E: Engine>(
    e: &mut E,
    mut g: Planes<E>,
    mut p: Planes<E>,
) -> Result<Planes<E>> {
    let w = g.len();
    let mut level = 0u32;
    while (1usize << level) < w {
        let mut idx = Vec::new();
        let mut pairs: Vec<(E::BPlane, E::BPlane)> = Vec::new();
        for i in 0..w {
            if (i >> level) & 1 == 1 {
                let pivot = ((i >> level) << level) - 1;
                // (G_i ^ (P_i & G_pivot), P_i & P_pivot)
                pairs.push((p[i].clone(), g[pivot].clone()));
                pairs.push((p[i].clone(), p[pivot].clone()));
                idx.push(i);
            }
        }
        let refs: Vec<(&E::BPlane, &E::BPlane)> =
            pairs.iter().map(|(a, b)| (a, b)).collect();
        let ands = e.bit_and_many(&refs)?;
        for (j, &i) in idx.iter().enumerate() {
            g[i] = e.bit_xor(&g[i], &ands[2 * j]);
            p[i] = ands[2 * j + 1].clone();
        }
        level += 1;
    }
    Ok(g)
}

/// Two-addend prefix adder modulo 2^w. Both inputs have w planes.
pub fn add2_mod<E: Engine>(e: &mut E, x: &[E::BPlane], y: &[E::BPlane]) -> Result<Planes<E>> {
    let w = x.len();
    let pairs: Vec<(&E::BPlane, &E::BPlane)> = x.iter().zip(y.iter()).collect();
    let g = e.bit_and_many(&pairs)?;
    let p: Planes<E> = x
        .iter()
        .zip(y.iter())
        .map(|(a, b)| e.bit_xor(a, b))
        .collect();
    let prefix_g = sklansky(e, g, p.clone())?;
    let mut out = Vec::with_capacity(w);
    out.push(p[0].clone());
    for i in 1..w {
        out.push(e.bit_xor(&p[i], &prefix_g[i - 1]));
    }
    Ok(out)
}

/// x - y over w planes via x + NOT(y) + 1. Also returns the borrow bit
/// ([x < y] as unsigned values).
pub fn sub_with_borrow<E: Engine>(
    e: &mut E,
    x: &[E::BPlane],
    y: &[E::BPlane],
) -> Result<(Planes<E>, E::BPlane)> {
    let w = x.len();
    let ny: Planes<E> = y.iter().map(|b| e.bit_not(b)).collect();
    let pairs: Vec<(&E::BPlane, &E::BPlane)> = x.iter().zip(ny.iter()).collect();
    let mut g = e.bit_and_many(&pairs)?;
    let p: Planes<E> = x
        .iter()
        .zip(ny.iter())
        .map(|(a, b)| e.bit_xor(a, b))
        .collect();
    // Carry-in of 1 folds into position 0: g and p are disjoint there.
    g[0] = e.bit_xor(&g[0], &p[0]);
    let prefix_g = sklansky(e, g, p.clone())?;
    let mut out = Vec::with_capacity(w);
    out.push(e.bit_not(&p[0]));
    for i in 1..w {
        out.push(e.bit_xor(&p[i], &prefix_g[i - 1]));
    }
    let borrow = e.bit_not(&prefix_g[w - 1]);
    Ok((out, borrow))
}

/// Reduce (g, p) pairs to the total generate G(0..w-1) with a balanced
/// binary tree; cheaper than a full prefix when only the carry-out matters.
pub fn generate_out<E: Engine>(
    e: &mut E,
    g: &[E::BPlane],
    p: &[E::BPlane],
) -> Result<E::BPlane> {
    assert!(!g.is_empty(), "generate_out needs at least one position");
    let mut g: Planes<E> = g.to_vec();
    let mut p: Planes<E> = p.to_vec();
    while g.len() > 1 {
        let pairs_n = g.len() / 2;
        let mut pairs: Vec<(E::BPlane, E::BPlane)> = Vec::new();
        for j in 0..pairs_n {
            // combine (g[2j], p[2j]) <- (g[2j+1], p[2j+1]) over it
            pairs.push((p[2 * j + 1].clone(), g[2 * j].clone()));
            pairs.push((p[2 * j + 1].clone(), p[2 * j].clone()));
        }
        let refs: Vec<(&E::BPlane, &E::BPlane)> = pairs.iter().map(|(a, b)| (a, b)).collect();
        let ands = e.bit_and_many(&refs)?;
        let mut ng = Vec::with_capacity(pairs_n + 1);
        let mut np = Vec::with_capacity(pairs_n + 1);
        for j in 0..pairs_n {
            ng.push(e.bit_xor(&g[2 * j + 1], &ands[2 * j]));
            np.push(ands[2 * j + 1].clone());
        }
        if g.len() % 2 == 1 {
            ng.push(g[g.len() - 1].clone());
            np.push(p[p.len() - 1].clone());
        }
        g = ng;
        p = np;
    }
    Ok(g.pop().unwrap())
}

/// Carry out of (x + c) over w planes, c public. Local generate/propagate
/// against the constant, then a generate tree.
pub fn carry_out_add_const<E: Engine>(
    e: &mut E,
    x: &[E::BPlane],
    c: u64,
) -> Result<E::BPlane> {
    let n = E::bit_count(&x[0]);
    let zero = e.bit_const(&vec![false; n]);
    let mut g = Vec::with_capacity(x.len());
    let mut p = Vec::with_capacity(x.len());
    for (i, plane) in x.iter().enumerate() {
        if (c >> i) & 1 == 1 {
            g.push(plane.clone());
            p.push(e.bit_not(plane));
        } else {
            g.push(zero.clone());
            p.push(plane.clone());
        }
    }
    generate_out(e, &g, &p)
}

/// [x < c] for a signed w-plane value x and signed constant c, both assumed
/// to fit without overflow in w bits after subtraction: the sign of x - c.
pub fn lt_const_signed<E: Engine>(e: &mut E, x: &[E::BPlane], c: u64) -> Result<E::BPlane> {
    let w = x.len();
    let n = E::bit_count(&x[0]);
    let zero = e.bit_const(&vec![false; n]);
    // x + NOT(c) + 1, g/p local against the public complement.
    let nc = !c;
    let mut g = Vec::with_capacity(w);
    let mut p = Vec::with_capacity(w);
    for (i, plane) in x.iter().enumerate() {
        if (nc >> i) & 1 == 1 {
            g.push(plane.clone());
            p.push(e.bit_not(plane));
        } else {
            g.push(zero.clone());
            p.push(plane.clone());
        }
    }
    // Fold the +1 carry-in into position 0 (disjoint g/p).
    g[0] = e.bit_xor(&g[0], &p[0]);
    let carry_into_top = generate_out(e, &g[..w - 1], &p[..w - 1])?;
    Ok(e.bit_xor(&p[w - 1], &carry_into_top))
}

/// Suffix OR: out[i] = planes[i] | planes[i+1] | ... (log-depth scan).
pub fn suffix_or<E: Engine>(e: &mut E, planes: &[E::BPlane]) -> Result<Planes<E>> {
    let w = planes.len();
    let mut q: Planes<E> = planes.to_vec();
    let mut step = 1usize;
    while step < w {
        // OR(a, b) = NOT(NOT a AND NOT b)
        let mut pairs: Vec<(E::BPlane, E::BPlane)> = Vec::new();
        for i in 0..w.saturating_sub(step) {
            pairs.push((e.bit_not(&q[i]), e.bit_not(&q[i + step])));
        }
        let refs: Vec<(&E::BPlane, &E::BPlane)> = pairs.iter().map(|(a, b)| (a, b)).collect();
        let ands = e.bit_and_many(&refs)?;
        for (i, and) in ands.into_iter().enumerate() {
            q[i] = e.bit_not(&and);
        }
        step <<= 1;
    }
    Ok(q)
}

/// Pairwise OR of adjacent planes: out[i] = planes[2i] | planes[2i+1]
/// (odd tail passes through).
pub fn or_adjacent<E: Engine>(e: &mut E, planes: &[E::BPlane]) -> Result<Planes<E>> {
    let pairs_n = planes.len() / 2;
    let mut pairs: Vec<(E::BPlane, E::BPlane)> = Vec::new();
    for j in 0..pairs_n {
        pairs.push((e.bit_not(&planes[2 * j]), e.bit_not(&planes[2 * j + 1])));
    }
    let refs: Vec<(&E::BPlane, &E::BPlane)> = pairs.iter().map(|(a, b)| (a, b)).collect();
    let ands = e.bit_and_many(&refs)?;
    let mut out: Planes<E> = ands.iter().map(|a| e.bit_not(a)).collect();
    if planes.len() % 2 == 1 {
        out.push(planes[planes.len() - 1].clone());
    }
    Ok(out)
}

/// Compose planes into arithmetic shares of the two's-complement value:
/// sum(2^i b_i) - 2^w b_{w-1} sign correction (exact when w equals the ring
/// width, where the correction vanishes).
pub fn compose_signed<E: Engine>(e: &mut E, planes: &[E::BPlane]) -> Result<E::AVec> {
    use crate::ring::Ring;
    let w = planes.len() as u32;
    let unsigned = e.b2a_unsigned(planes)?;
    if w >= E::R::BITS {
        return Ok(unsigned);
    }
    let top = e.bit2a(&planes[planes.len() - 1])?;
    let weight = <E::R as Ring>::ONE.shl(w);
    let corr = e.scale_public(&top, &[weight]);
    Ok(e.sub(&unsigned, &corr))
}
