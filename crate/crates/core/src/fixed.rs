//! Fixed-point quantization over the wrapping ring and the cleartext
//! rounding semantics that the secure protocols must match.
//!
//! A real x is stored as the integer round(x * 2^f) embedded in the ring.
//! Products carry 2f fractional bits and are brought back to f bits either
//! by probabilistic rounding (round up with probability equal to the
//! discarded fraction) or by deterministic round-half-up.

use crate::ring::Ring;
use crate::Error;
use rand::RngCore;

/// Rounding mode used when dropping fractional bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rounding {
    /// Round up with probability equal to the discarded fraction.
    Prob,
    /// Deterministic round to nearest, ties up.
    Nearest,
}

impl std::str::FromStr for Rounding {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "prob" => Ok(Rounding::Prob),
            "nearest" => Ok(Rounding::Nearest),
            other => Err(format!("unknown rounding mode `{other}`")),
        }
    }
}

/// Quantization parameters: f fractional bits, k total value bits.
///
/// k bounds the signed magnitude of any represented value to (-2^(k-1), 2^(k-1))
/// in representation units, so real magnitudes stay below 2^(k-f-1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedConfig {
    pub f: u32,
    pub k: u32,
    pub ring_bits: u32,
}

impl FixedConfig {
    pub fn new<R: Ring>(f: u32, k: u32) -> Result<Self, Error> {
        let cfg = FixedConfig {
            f,
            k,
            ring_bits: R::BITS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The default configuration for the 64-bit ring: f = 16, k = 31.
    pub fn default64() -> Self {
        FixedConfig {
            f: 16,
            k: 31,
            ring_bits: 64,
        }
    }

    /// f = 32, k = 63 over the 128-bit ring, used for high-precision checks.
    pub fn high128() -> Self {
        FixedConfig {
            f: 32,
            k: 63,
            ring_bits: 128,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.k >= self.ring_bits / 2 {
            return Err(Error::Config(format!(
                "k = {} must be strictly less than half the ring width {}",
                self.k, self.ring_bits
            )));
        }
        if self.k + 1 < 2 * self.f {
            return Err(Error::Config(format!(
                "k = {} too small for f = {} (need k >= 2f - 1)",
                self.k, self.f
            )));
        }
        if self.f < 2 || self.f % 2 != 0 {
            return Err(Error::Config(format!(
                "f = {} must be even and >= 2",
                self.f
            )));
        }
        Ok(())
    }

    /// Smallest representable positive step, 2^-f.
    pub fn step(&self) -> f64 {
        (2.0f64).powi(-(self.f as i32))
    }

    /// Largest representable real magnitude, 2^(k-f-1).
    pub fn max_magnitude(&self) -> f64 {
        (2.0f64).powi(self.k as i32 - self.f as i32 - 1)
    }
}

/// A cleartext fixed-point value: a ring residue plus its quantization config.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClearFixed<R: Ring> {
    pub raw: R,
    pub cfg: FixedConfig,
}

/// Encode a real number as round(x * 2^f) in the ring.
pub fn fx_encode<R: Ring>(x: f64, cfg: FixedConfig) -> Result<ClearFixed<R>, Error> {
    if !x.is_finite() || x.abs() >= cfg.max_magnitude() {
        return Err(Error::Range(format!(
            "{x} out of range for f={} k={}",
            cfg.f, cfg.k
        )));
    }
    let scaled = x * (2.0f64).powi(cfg.f as i32);
    let rounded = scaled.round() as i64;
    Ok(ClearFixed {
        raw: R::from_i64(rounded),
        cfg,
    })
}

/// Encode without the range check, saturating into the valid band. Used by
/// loaders where inputs are already normalized.
pub fn fx_encode_clamped<R: Ring>(x: f64, cfg: FixedConfig) -> ClearFixed<R> {
    let lim = cfg.max_magnitude();
    let x = x.clamp(-lim + cfg.step(), lim - cfg.step());
    fx_encode(x, cfg).expect("clamped value must encode")
}

/// Signed interpretation of the raw residue divided by 2^f.
pub fn fx_decode<R: Ring>(v: ClearFixed<R>) -> f64 {
    fx_decode_raw(v.raw, v.cfg)
}

pub fn fx_decode_raw<R: Ring>(raw: R, cfg: FixedConfig) -> f64 {
    raw.to_f64_signed() * (2.0f64).powi(-(cfg.f as i32))
}

/// Split into floor and the f-bit discarded fraction: prod = floor * 2^f + frac.
///
/// Uses an arithmetic shift, so the floor matches real floor(prod / 2^f) for
/// signed products.
#[inline]
fn split_floor_frac<R: Ring>(prod: R, f: u32) -> (R, R) {
    let frac = prod.bitand(R::mask_low(f));
    let floor = prod.wrapping_sub(frac); // multiple of 2^f
    (arithmetic_shr(floor, f), frac)
}

/// Probabilistic rounding of a 2f-precision product down to f bits.
///
/// Returns floor(mu) + b with mu = prod * 2^-f and b ~ Bernoulli(frac(mu)).
/// The Bernoulli draw compares f fresh pseudorandom bits against the f-bit
/// fraction, so it is exact and never touches floating point.
pub fn round_prob_clear<R: Ring>(prod: R, cfg: FixedConfig, rng: &mut impl RngCore) -> R {
    let (floor, frac) = split_floor_frac(prod, cfg.f);
    if frac == R::ZERO {
        return floor;
    }
    let draw = R::sample_bits(rng, cfg.f);
    let up = draw.to_u128() < frac.to_u128();
    if up {
        floor.wrapping_add(R::ONE)
    } else {
        floor
    }
}

/// Deterministic nearest rounding of a 2f-precision product, ties up:
/// floor(2^-f * (prod + 2^(f-1))).
pub fn round_nearest_clear<R: Ring>(prod: R, cfg: FixedConfig) -> R {
    let shifted = prod.wrapping_add(R::ONE.shl(cfg.f - 1));
    let (floor, _) = split_floor_frac(shifted, cfg.f);
    floor
}

/// Generic truncation by an arbitrary shift, same semantics as the two
/// rounding helpers but for m bits instead of f.
pub fn shift_round_clear<R: Ring>(
    value: R,
    m: u32,
    mode: Rounding,
    rng: &mut impl RngCore,
) -> R {
    if m == 0 {
        return value;
    }
    match mode {
        Rounding::Nearest => {
            let shifted = value.wrapping_add(R::ONE.shl(m - 1));
            let frac = shifted.bitand(R::mask_low(m));
            arithmetic_shr(shifted.wrapping_sub(frac), m)
        }
        Rounding::Prob => {
            let frac = value.bitand(R::mask_low(m));
            let floor = arithmetic_shr(value.wrapping_sub(frac), m);
            if frac == R::ZERO {
                return floor;
            }
            let draw = R::sample_bits(rng, m);
            if draw.to_u128() < frac.to_u128() {
                floor.wrapping_add(R::ONE)
            } else {
                floor
            }
        }
    }
}

/// Arithmetic shift right of a multiple of 2^m (sign-extended).
#[inline]
fn arithmetic_shr<R: Ring>(value: R, m: u32) -> R {
    let logical = value.shr(m);
    if m == 0 || !value.bit(R::BITS - 1) {
        return logical;
    }
    // Set the top m bits.
    let high = R::mask_low(m).shl(R::BITS - m);
    logical.wrapping_add(high)
}

/// Quantized matrix product with deferred truncation: every output entry is
/// the exact 2f-precision dot product rounded once.
///
/// `a` is m x n, `b` is n x p, both row-major raw representations.
pub fn clear_matmul_quantized<R: Ring>(
    a: &[R],
    b: &[R],
    m: usize,
    n: usize,
    p: usize,
    cfg: FixedConfig,
    mode: Rounding,
    rng: &mut impl RngCore,
) -> Result<Vec<R>, Error> {
    if a.len() != m * n || b.len() != n * p {
        return Err(Error::Shape(format!(
            "matmul shape mismatch: a {} != {}x{} or b {} != {}x{}",
            a.len(),
            m,
            n,
            b.len(),
            n,
            p
        )));
    }
    let mut out = Vec::with_capacity(m * p);
    for i in 0..m {
        let row = &a[i * n..(i + 1) * n];
        for j in 0..p {
            let mut acc = R::ZERO;
            for (l, &al) in row.iter().enumerate() {
                acc = acc.wrapping_add(al.wrapping_mul(b[l * p + j]));
            }
            let rounded = match mode {
                Rounding::Prob => round_prob_clear(acc, cfg, rng),
                Rounding::Nearest => round_nearest_clear(acc, cfg),
            };
            out.push(rounded);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn cfg() -> FixedConfig {
        FixedConfig::default64()
    }

    #[test]
    fn encode_half() {
        let v = fx_encode::<u64>(0.5, cfg()).unwrap();
        assert_eq!(v.raw, 32768);
    }

    #[test]
    fn encode_minus_one() {
        let v = fx_encode::<u64>(-1.0, cfg()).unwrap();
        assert_eq!(v.raw, u64::MAX - 65536 + 1);
    }

    #[test]
    fn encode_pi() {
        // Independent oracle: round(pi * 65536) in double precision.
        let expect = (std::f64::consts::PI * 65536.0).round() as u64;
        assert_eq!(expect, 205887);
        let v = fx_encode::<u64>(std::f64::consts::PI, cfg()).unwrap();
        assert_eq!(v.raw, 205887);
        assert!((fx_decode(v) - std::f64::consts::PI).abs() < 2.0f64.powi(-17));
    }

    #[test]
    fn encode_range_error() {
        assert!(fx_encode::<u64>(20000.0, cfg()).is_err());
        assert!(fx_encode::<u64>(f64::NAN, cfg()).is_err());
    }

    #[test]
    fn decode_roundtrip() {
        let v = fx_encode::<u64>(0.5, cfg()).unwrap();
        assert_eq!(fx_decode(v), 0.5);
        let v = fx_encode::<u64>(-1.0, cfg()).unwrap();
        assert_eq!(fx_decode(v), -1.0);
    }

    #[test]
    fn nearest_tie_rounds_up() {
        // 98304 = 1.5 * 2^16 -> 2, the tie goes up.
        assert_eq!(round_nearest_clear(98304u64, cfg()), 2);
        assert_eq!(round_nearest_clear(98303u64, cfg()), 1);
        // Exact multiples of 2^f are unchanged.
        assert_eq!(round_nearest_clear(3u64 << 16, cfg()), 3);
    }

    #[test]
    fn nearest_negative_half_up() {
        // -1.5 in representation units rounds to -1 (toward +inf).
        let raw = (-98304i64) as u64;
        assert_eq!(round_nearest_clear(raw, cfg()) as i64, -1);
    }

    #[test]
    fn prob_rounding_exact_product() {
        // Q(0.5)^2 * 2^-16 = 16384 is exact, so the rounding is deterministic.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let prod = 32768u64 * 32768u64;
        for _ in 0..32 {
            assert_eq!(round_prob_clear(prod, cfg(), &mut rng), 16384);
        }
    }

    #[test]
    fn prob_rounding_mean_matches_fraction() {
        // mu = 1.5: outcomes 1 and 2, empirical mean -> 1.5.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let prod = 98304u64;
        let trials = 200_000u64;
        let mut sum = 0u64;
        for _ in 0..trials {
            let r = round_prob_clear(prod, cfg(), &mut rng);
            assert!(r == 1 || r == 2);
            sum += r;
        }
        let mean = sum as f64 / trials as f64;
        // 4 sigma for Bernoulli(0.5): 4 * 0.5 / sqrt(trials)
        assert!((mean - 1.5).abs() < 4.0 * 0.5 / (trials as f64).sqrt());
    }

    #[test]
    fn prob_rounding_negative_mean() {
        // mu = -0.5 (raw -32768): outcomes -1 and 0 with equal probability.
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let prod = (-32768i64) as u64;
        let mut sum = 0i64;
        let trials = 200_000;
        for _ in 0..trials {
            let r = round_prob_clear(prod, cfg(), &mut rng) as i64;
            assert!(r == -1 || r == 0);
            sum += r;
        }
        let mean = sum as f64 / trials as f64;
        assert!((mean + 0.5).abs() < 4.0 * 0.5 / (trials as f64).sqrt());
    }

    #[test]
    fn matmul_identity() {
        let cfg = cfg();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let one = fx_encode::<u64>(1.0, cfg).unwrap().raw;
        let n = 4;
        let mut ident = vec![0u64; n * n];
        for i in 0..n {
            ident[i * n + i] = one;
        }
        let b: Vec<u64> = (0..n * n)
            .map(|i| fx_encode::<u64>((i as f64) * 0.25 - 1.5, cfg).unwrap().raw)
            .collect();
        let out =
            clear_matmul_quantized(&ident, &b, n, n, n, cfg, Rounding::Nearest, &mut rng).unwrap();
        assert_eq!(out, b);
    }

    #[test]
    fn matmul_1x1_reduces_to_round_prob() {
        let cfg = cfg();
        let a = fx_encode::<u64>(0.5, cfg).unwrap().raw;
        let b = fx_encode::<u64>(0.5, cfg).unwrap().raw;
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let out = clear_matmul_quantized(&[a], &[b], 1, 1, 1, cfg, Rounding::Prob, &mut rng)
            .unwrap();
        assert_eq!(out[0], 16384);
    }

    #[test]
    fn matmul_matches_bruteforce_oracle() {
        // Brute-force reference: exact i128 integer products summed, then one
        // nearest rounding per entry, computed without the ring type.
        let cfg = cfg();
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let dim = 8;
        let sample = |rng: &mut ChaCha12Rng| -> Vec<u64> {
            (0..dim * dim)
                .map(|_| {
                    let x = (rng.next_u32() as f64 / u32::MAX as f64) * 8.0 - 4.0;
                    fx_encode::<u64>(x, cfg).unwrap().raw
                })
                .collect()
        };
        let a = sample(&mut rng);
        let b = sample(&mut rng);
        let got =
            clear_matmul_quantized(&a, &b, dim, dim, dim, cfg, Rounding::Nearest, &mut rng)
                .unwrap();
        for i in 0..dim {
            for j in 0..dim {
                let mut acc: i128 = 0;
                for l in 0..dim {
                    acc += (a[i * dim + l] as i64 as i128) * (b[l * dim + j] as i64 as i128);
                }
                let rounded = (acc + (1 << 15)).div_euclid(1 << 16);
                assert_eq!(got[i * dim + j] as i64 as i128, rounded, "entry {i},{j}");
            }
        }
    }

    #[test]
    fn matmul_shape_error() {
        let cfg = cfg();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert!(
            clear_matmul_quantized(&[0u64; 4], &[0u64; 5], 2, 2, 2, cfg, Rounding::Prob, &mut rng)
                .is_err()
        );
    }

    #[test]
    fn config_invariants() {
        assert!(FixedConfig::new::<u64>(16, 31).is_ok());
        assert!(FixedConfig::new::<u64>(16, 32).is_err()); // k >= ring/2
        assert!(FixedConfig::new::<u64>(16, 30).is_err()); // k < 2f - 1
        assert!(FixedConfig::new::<u128>(32, 63).is_ok());
    }
}
