//! Weight initialization and epoch shuffling.

use super::layers::{Layer, LayerSpec, Param};
use super::models::ModelKind;
use super::tensor::ShareTensor;
use crate::engine::Engine;
use crate::ring::Ring;
use crate::secmath;
use crate::{Error, Result};
use rand::{Rng, RngCore, SeedableRng};

/// Glorot uniform bound sqrt(6 / (d_in + d_out)).
pub fn glorot_bound(d_in: usize, d_out: usize) -> f64 {
    (6.0 / (d_in + d_out) as f64).sqrt()
}

/// Where initial weights come from.
pub enum InitMode {
    /// Secure joint randomness (rand_fraction over secret bits).
    Secure,
    /// Deterministic public initialization from a seed; all parties derive
    /// identical values, enabling bit-exact cross-backend comparisons.
    SeededPublic(u64),
}

/// Sample a secret-shared Glorot-uniform weight tensor.
pub fn glorot_init<E: Engine>(
    e: &mut E,
    d_in: usize,
    d_out: usize,
    shape: Vec<usize>,
) -> Result<ShareTensor<E>> {
    if d_in + d_out == 0 {
        return Err(Error::Config("glorot fan must be positive".into()));
    }
    let n: usize = shape.iter().product();
    let cfg = e.cfg();
    let bound_raw = (glorot_bound(d_in, d_out) * (2.0f64).powi(cfg.f as i32)).floor() as u64;
    // u uniform on [0, 2^nb); w = round(u * 2B / 2^nb) - B stays inside
    // [-B, B] because u * 2B / 2^nb < 2B.
    let spread = 2 * bound_raw;
    let spread_bits = 64 - u64::leading_zeros(spread.max(1));
    let extra = 12u32.min(cfg.k.saturating_sub(spread_bits + 1));
    let nb = (spread_bits + extra).min(cfg.k) as i32;
    let u = secmath::rand_fraction(e, n, nb - cfg.f as i32)?;
    let prod = e.scale_public(&u, &[E::R::from_u64(spread)]);
    let scaled = e.trunc(
        &prod,
        (nb as u32 + spread_bits + 1).min(E::R::BITS - 9),
        nb as u32,
        crate::fixed::Rounding::Nearest,
    )?;
    let w = e.add_public(&scaled, &[E::R::from_u64(bound_raw).wrapping_neg()]);
    ShareTensor::new(w, shape)
}

/// Public deterministic Glorot sample (same stream at every party).
fn glorot_public<E: Engine>(
    e: &E,
    rng: &mut impl RngCore,
    d_in: usize,
    d_out: usize,
    shape: Vec<usize>,
) -> Result<ShareTensor<E>> {
    let bound = glorot_bound(d_in, d_out);
    let n: usize = shape.iter().product();
    let f = e.cfg().f;
    let vals: Vec<E::R> = (0..n)
        .map(|_| {
            let x: f64 = rng.gen_range(-bound..bound);
            E::R::from_i64((x * (2.0f64).powi(f as i32)).round() as i64)
        })
        .collect();
    ShareTensor::new(e.constant(&vals), shape)
}

/// Instantiate the layer stack with initialized parameters.
pub fn build_model<E: Engine>(
    e: &mut E,
    kind: ModelKind,
    dropout: bool,
    mode: &InitMode,
) -> Result<Vec<Layer<E>>> {
    let mut rng = match mode {
        InitMode::SeededPublic(seed) => {
            Some(rand_chacha::ChaCha12Rng::seed_from_u64(*seed))
        }
        InitMode::Secure => None,
    };
    let mut shape: Vec<usize> = kind.input_shape().to_vec();
    let mut layers = Vec::new();
    for spec in kind.layers(dropout) {
        let out_shape = spec.out_shape(&shape)?;
        let layer = match &spec {
            LayerSpec::Dense { units } => {
                let d_in: usize = shape.iter().product();
                let w_shape = vec![*units, d_in];
                let w = match &mut rng {
                    Some(r) => glorot_public(e, r, d_in, *units, w_shape)?,
                    None => glorot_init(e, d_in, *units, w_shape)?,
                };
                let b = ShareTensor::zeros(e, vec![*units]);
                Layer::Dense {
                    w: Param::new(w),
                    b: Param::new(b),
                    saved_x: None,
                }
            }
            LayerSpec::Conv2d { filters, kernel, stride, padding } => {
                let [ic, h, _w] = [shape[0], shape[1], shape[2]];
                let pad = padding.resolve(*kernel, *stride, h);
                let area = kernel * kernel;
                let (d_in, d_out) = (ic * area, *filters * area);
                let k_shape = vec![*filters, ic, *kernel, *kernel];
                let k = match &mut rng {
                    Some(r) => glorot_public(e, r, d_in, d_out, k_shape)?,
                    None => glorot_init(e, d_in, d_out, k_shape)?,
                };
                let b = ShareTensor::zeros(e, vec![*filters]);
                Layer::Conv2d {
                    k: Param::new(k),
                    b: Param::new(b),
                    stride: *stride,
                    pad,
                    in_shape: [ic, shape[1], shape[2]],
                    saved_patches: None,
                }
            }
            LayerSpec::Relu => Layer::Relu { saved_mask: None },
            LayerSpec::MaxPool { window, stride } => Layer::MaxPool {
                window: *window,
                stride: *stride,
                saved: None,
            },
            LayerSpec::Dropout { rate } => {
                let inv = 1.0 / *rate;
                if *rate != 0.0 && (inv.fract() != 0.0 || !(inv as u64).is_power_of_two()) {
                    return Err(Error::Config(format!(
                        "dropout rate {rate} must be a power of two"
                    )));
                }
                Layer::Dropout {
                    rate: *rate,
                    saved_mask: None,
                }
            }
            LayerSpec::BatchNorm => {
                let c = shape[0];
                let f = e.cfg().f;
                let one = E::R::from_u64(1u64 << f);
                let gamma = ShareTensor::new(e.constant(&vec![one; c]), vec![c])?;
                let beta = ShareTensor::zeros(e, vec![c]);
                // 2^-12 is representable at f = 16; the plain 1e-8 underflows
                // there and is used only at higher precision.
                let eps = if f >= 32 {
                    E::R::from_i64((1e-8 * (2.0f64).powi(f as i32)).round() as i64)
                } else {
                    E::R::ONE.shl(f - 12)
                };
                Layer::BatchNorm {
                    gamma: Param::new(gamma),
                    beta: Param::new(beta),
                    eps_raw: eps,
                    saved: None,
                }
            }
            LayerSpec::Flatten => Layer::Flatten {
                in_shape: shape.clone(),
            },
        };
        layers.push(layer);
        shape = out_shape;
    }
    Ok(layers)
}

/// Fisher-Yates shuffle: a uniformly random permutation of [0, n).
pub fn shuffle_epoch(rng: &mut impl RngCore, n: usize) -> Vec<u32> {
    let mut perm: Vec<u32> = (0..n as u32).collect();
    for i in (1..n).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        perm.swap(i, j);
    }
    perm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn glorot_bound_reference() {
        // Double-precision formula evaluation for d_in = d_out = 128.
        let b = glorot_bound(128, 128);
        assert!((b - 0.15309310892394862).abs() < 1e-15);
    }

    #[test]
    fn shuffle_degenerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert_eq!(shuffle_epoch(&mut rng, 0), Vec::<u32>::new());
        assert_eq!(shuffle_epoch(&mut rng, 1), vec![0]);
    }

    #[test]
    fn shuffle_uniform_over_permutations() {
        // n = 4: each of the 24 permutations within 4 sigma of 1/24.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let trials = 24_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..trials {
            let p = shuffle_epoch(&mut rng, 4);
            *counts.entry(p).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 24);
        let expect = trials as f64 / 24.0;
        let sigma = (trials as f64 * (1.0 / 24.0) * (23.0 / 24.0)).sqrt();
        for (perm, count) in counts {
            assert!(
                (count as f64 - expect).abs() < 4.0 * sigma,
                "{perm:?}: {count}"
            );
        }
    }
}
