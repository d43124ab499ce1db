//! Gradient checks: analytic backward passes against central finite
//! differences of the quantized loss, per layer kind, on the high-precision
//! (f = 32) emulator for headroom. Tolerance: max(1e-3, 20 * 2^-f)
//! elementwise on a 2-layer toy net over 8 samples.

use deepmpc::emulate::EmuEngine;
use deepmpc::engine::Engine;
use deepmpc::fixed::{fx_decode_raw, FixedConfig, Rounding};
use deepmpc::nn::layers::{Layer, Param};
use deepmpc::nn::loss::{onehot_raw, softmax_xent_grad};
use deepmpc::nn::tensor::ShareTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

type E128 = EmuEngine<u128>;

const F: u32 = 32;
const BATCH: usize = 8;
const CLASSES: usize = 3;
const TOL: f64 = 1e-3; // max(1e-3, 20 * 2^-32)
const H: f64 = 0.00048828125; // 2^-11, representable exactly

fn engine() -> E128 {
    EmuEngine::new(FixedConfig::high128(), Rounding::Nearest, 99).unwrap()
}

fn enc(vals: &[f64]) -> Vec<u128> {
    vals.iter()
        .map(|&x| ((x * (2.0f64).powi(F as i32)).round() as i64) as u128)
        .collect()
}

fn tensor(e: &E128, vals: &[f64], shape: Vec<usize>) -> ShareTensor<E128> {
    ShareTensor::new(e.constant(&enc(vals)), shape).unwrap()
}

fn rand_tensor(
    e: &E128,
    rng: &mut ChaCha12Rng,
    shape: Vec<usize>,
    scale: f64,
) -> ShareTensor<E128> {
    let n: usize = shape.iter().product();
    let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    tensor(e, &vals, shape)
}

/// Sum of per-sample losses for the current parameters.
fn loss_of(
    e: &mut E128,
    layers: &mut [Layer<E128>],
    x: &ShareTensor<E128>,
    onehot: &<E128 as Engine>::AVec,
) -> f64 {
    e.reseed(4242); // pin stochastic layers across evaluations
    let mut cur = x.clone();
    for layer in layers.iter_mut() {
        cur = layer.forward(e, &cur, true).unwrap();
    }
    let (_, loss) = softmax_xent_grad(e, &cur.data, onehot, BATCH, CLASSES).unwrap();
    let opened = e.open(&loss).unwrap();
    fx_decode_raw(opened[0], e.cfg())
}

/// Run analytic backprop once and compare every parameter gradient against
/// central finite differences.
fn check_layers(mut layers: Vec<Layer<E128>>, input_shape: Vec<usize>, data_seed: u64) {
    let mut e = engine();
    let mut rng = ChaCha12Rng::seed_from_u64(data_seed);
    let n_in: usize = input_shape.iter().product();
    let x = rand_tensor(&e, &mut rng, input_shape, 1.0);
    let labels: Vec<u8> = (0..BATCH).map(|_| rng.gen_range(0..CLASSES as u8)).collect();
    let onehot = e.constant(&onehot_raw::<u128>(&labels, CLASSES, F));
    let _ = n_in;

    // Analytic pass.
    e.reseed(4242);
    let mut cur = x.clone();
    for layer in layers.iter_mut() {
        cur = layer.forward(&mut e, &cur, true).unwrap();
    }
    let (grad, _) = softmax_xent_grad(&mut e, &cur.data, &onehot, BATCH, CLASSES).unwrap();
    let gt = ShareTensor::new(grad, vec![BATCH, CLASSES]).unwrap();
    let mut g = gt;
    for layer in layers.iter_mut().rev() {
        g = layer.backward(&mut e, &g).unwrap();
    }
    let analytic: Vec<Vec<f64>> = layers
        .iter_mut()
        .flat_map(|l| {
            l.params_mut()
                .into_iter()
                .map(|p| {
                    let t = p.grad.take().expect("gradient");
                    let opened = t.data;
                    opened
                        .iter()
                        .map(|&v| fx_decode_raw(v, FixedConfig::high128()))
                        .collect::<Vec<f64>>()
                })
                .collect::<Vec<_>>()
        })
        .collect();

    // Finite differences per parameter element.
    let h_raw = (H * (2.0f64).powi(F as i32)).round() as u64 as u128;
    let mut flat_idx = 0usize;
    let n_params = analytic.len();
    for pi in 0..n_params {
        for i in 0..analytic[pi].len() {
            // theta_i += h
            bump_param(&mut layers, pi, i, h_raw, false);
            let plus = loss_of(&mut e, &mut layers, &x, &onehot);
            bump_param(&mut layers, pi, i, 2 * h_raw, true);
            let minus = loss_of(&mut e, &mut layers, &x, &onehot);
            bump_param(&mut layers, pi, i, h_raw, false);
            let numeric = (plus - minus) / (2.0 * H);
            let got = analytic[pi][i];
            assert!(
                (got - numeric).abs() <= TOL,
                "param {pi} elem {i}: analytic {got} vs numeric {numeric}"
            );
            flat_idx += 1;
        }
    }
    assert!(flat_idx > 0, "no parameters checked");
}

fn bump_param(layers: &mut [Layer<E128>], target: usize, elem: usize, delta: u128, down: bool) {
    let mut seen = 0usize;
    for layer in layers.iter_mut() {
        for p in layer.params_mut() {
            if seen == target {
                let n = p.value.len();
                let mut c = vec![0u128; n];
                c[elem] = if down { delta.wrapping_neg() } else { delta };
                let e_tmp: E128 = engine();
                p.value.data = e_tmp.add_public(&p.value.data, &c);
                return;
            }
            seen += 1;
        }
    }
    panic!("param index {target} out of range");
}

fn dense(e: &E128, rng: &mut ChaCha12Rng, d_in: usize, units: usize) -> Layer<E128> {
    Layer::Dense {
        w: Param::new(rand_tensor(e, rng, vec![units, d_in], 0.6)),
        b: Param::new(rand_tensor(e, rng, vec![units], 0.2)),
        saved_x: None,
    }
}

#[test]
fn grad_check_dense() {
    let e = engine();
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let layers = vec![dense(&e, &mut rng, 6, 5), dense(&e, &mut rng, 5, CLASSES)];
    check_layers(layers, vec![BATCH, 6], 101);
}

#[test]
fn grad_check_relu() {
    let e = engine();
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let layers = vec![
        dense(&e, &mut rng, 6, 5),
        Layer::Relu { saved_mask: None },
        dense(&e, &mut rng, 5, CLASSES),
    ];
    check_layers(layers, vec![BATCH, 6], 102);
}

#[test]
fn grad_check_conv2d() {
    let e = engine();
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let layers = vec![
        Layer::Conv2d {
            k: Param::new(rand_tensor(&e, &mut rng, vec![2, 1, 3, 3], 0.5)),
            b: Param::new(rand_tensor(&e, &mut rng, vec![2], 0.2)),
            stride: 1,
            pad: 0,
            in_shape: [1, 5, 5],
            saved_patches: None,
        },
        Layer::Flatten { in_shape: vec![] },
        dense(&e, &mut rng, 2 * 3 * 3, CLASSES),
    ];
    check_layers(layers, vec![BATCH, 1, 5, 5], 103);
}

#[test]
fn grad_check_maxpool() {
    let e = engine();
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let layers = vec![
        Layer::Conv2d {
            k: Param::new(rand_tensor(&e, &mut rng, vec![2, 1, 3, 3], 0.5)),
            b: Param::new(rand_tensor(&e, &mut rng, vec![2], 0.2)),
            stride: 1,
            pad: 1,
            in_shape: [1, 4, 4],
            saved_patches: None,
        },
        Layer::MaxPool { window: 2, stride: 2, saved: None },
        Layer::Flatten { in_shape: vec![] },
        dense(&e, &mut rng, 2 * 2 * 2, CLASSES),
    ];
    check_layers(layers, vec![BATCH, 1, 4, 4], 104);
}

#[test]
fn grad_check_dropout() {
    let e = engine();
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let layers = vec![
        dense(&e, &mut rng, 6, 6),
        Layer::Dropout { rate: 0.5, saved_mask: None },
        dense(&e, &mut rng, 6, CLASSES),
    ];
    check_layers(layers, vec![BATCH, 6], 105);
}

#[test]
fn grad_check_batchnorm() {
    // The analytic backward uses the saved approximate inverse-std (the
    // standard formula); the toy net keeps gradient magnitudes moderate so
    // the inverse-sqrt quadratic's sub-percent error stays inside the
    // absolute tolerance.
    let e = engine();
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let eps_raw = (1e-8 * (2.0f64).powi(F as i32)).round() as u128;
    let layers = vec![
        Layer::Dense {
            w: Param::new(rand_tensor(&e, &mut rng, vec![4, 6], 1.2)),
            b: Param::new(rand_tensor(&e, &mut rng, vec![4], 0.2)),
            saved_x: None,
        },
        Layer::BatchNorm {
            gamma: Param::new(tensor(&e, &[1.1, 0.9, 1.25, 0.8], vec![4])),
            beta: Param::new(rand_tensor(&e, &mut rng, vec![4], 0.1)),
            eps_raw,
            saved: None,
        },
        Layer::Dense {
            w: Param::new(rand_tensor(&e, &mut rng, vec![CLASSES, 4], 0.04)),
            b: Param::new(rand_tensor(&e, &mut rng, vec![CLASSES], 0.05)),
            saved_x: None,
        },
    ];
    check_layers(layers, vec![BATCH, 6], 106);
}
