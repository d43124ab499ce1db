//! Layer-level oracle tests on the emulator: brute-force convolution and
//! pooling references, softmax against double precision, optimizer
//! single-step oracles, and the structural reuse assertions.

use deepmpc::emulate::EmuEngine;
use deepmpc::engine::Engine;
use deepmpc::fixed::{fx_decode_raw, fx_encode, FixedConfig, Rounding};
use deepmpc::nn::layers::{Layer, Param};
use deepmpc::nn::loss::{onehot_raw, softmax_xent_grad};
use deepmpc::nn::optim::{Optimizer, OptimizerKind};
use deepmpc::nn::tensor::ShareTensor;
use deepmpc::secmath;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn emu(mode: Rounding) -> EmuEngine<u64> {
    EmuEngine::new(FixedConfig::default64(), mode, 777).unwrap()
}

fn enc(e: &EmuEngine<u64>, xs: &[f64]) -> Vec<u64> {
    xs.iter()
        .map(|&x| fx_encode::<u64>(x, e.cfg()).unwrap().raw)
        .collect()
}

fn dec(e: &EmuEngine<u64>, xs: &[u64]) -> Vec<f64> {
    xs.iter().map(|&x| fx_decode_raw(x, e.cfg())).collect()
}

fn tensor(e: &EmuEngine<u64>, vals: &[f64], shape: Vec<usize>) -> ShareTensor<EmuEngine<u64>> {
    let data = e.constant(&enc(e, vals));
    ShareTensor::new(data, shape).unwrap()
}

#[test]
fn dense_zero_weights_broadcast_bias() {
    let mut e = emu(Rounding::Nearest);
    let mut layer = Layer::Dense {
        w: Param::new(tensor(&e, &[0.0; 6], vec![2, 3])),
        b: Param::new(tensor(&e, &[0.5, -1.25], vec![2])),
        saved_x: None,
    };
    let x = tensor(&e, &[1.0, 2.0, 3.0, -1.0, 0.0, 4.0], vec![2, 3]);
    let y = layer.forward(&mut e, &x, false).unwrap();
    assert_eq!(dec(&e, &y.data), vec![0.5, -1.25, 0.5, -1.25]);
}

#[test]
fn dense_matches_quantized_matmul_oracle() {
    // The forward pass must equal the cleartext deferred-truncation matmul.
    let mut e = emu(Rounding::Nearest);
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let (batch, d_in, units) = (8usize, 8usize, 8usize);
    let xs: Vec<f64> = (0..batch * d_in).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let ws: Vec<f64> = (0..units * d_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut layer = Layer::Dense {
        w: Param::new(tensor(&e, &ws, vec![units, d_in])),
        b: Param::new(tensor(&e, &vec![0.0; units], vec![units])),
        saved_x: None,
    };
    let x = tensor(&e, &xs, vec![batch, d_in]);
    let y = layer.forward(&mut e, &x, false).unwrap();
    // Oracle: exact integer dot products rounded once per entry.
    let qx = enc(&e, &xs);
    let qw = enc(&e, &ws);
    for i in 0..batch {
        for j in 0..units {
            let mut acc: i128 = 0;
            for l in 0..d_in {
                acc += (qx[i * d_in + l] as i64 as i128) * (qw[j * d_in + l] as i64 as i128);
            }
            let rounded = (acc + (1 << 15)).div_euclid(1 << 16) as i64;
            let got = e.open(&y.data).unwrap()[i * units + j] as i64;
            assert_eq!(got, rounded, "entry {i},{j}");
        }
    }
}

#[test]
fn conv_identity_kernel() {
    let mut e = emu(Rounding::Nearest);
    let x_vals: Vec<f64> = (0..16).map(|i| i as f64 * 0.25 - 2.0).collect();
    let mut layer = Layer::Conv2d {
        k: Param::new(tensor(&e, &[1.0], vec![1, 1, 1, 1])),
        b: Param::new(tensor(&e, &[0.0], vec![1])),
        stride: 1,
        pad: 0,
        in_shape: [1, 4, 4],
        saved_patches: None,
    };
    let x = tensor(&e, &x_vals, vec![1, 1, 4, 4]);
    let y = layer.forward(&mut e, &x, false).unwrap();
    assert_eq!(y.shape, vec![1, 1, 4, 4]);
    assert_eq!(dec(&e, &y.data), x_vals);
}

#[test]
fn conv_matches_nested_loop_oracle() {
    let mut e = emu(Rounding::Nearest);
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let (h, w, kk) = (6usize, 6usize, 3usize);
    let xs: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ks: Vec<f64> = (0..kk * kk).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let bias = 0.375;
    let mut layer = Layer::Conv2d {
        k: Param::new(tensor(&e, &ks, vec![1, 1, kk, kk])),
        b: Param::new(tensor(&e, &[bias], vec![1])),
        stride: 1,
        pad: 0,
        in_shape: [1, h, w],
        saved_patches: None,
    };
    let x = tensor(&e, &xs, vec![1, 1, h, w]);
    let y = layer.forward(&mut e, &x, false).unwrap();
    assert_eq!(y.shape, vec![1, 1, 4, 4]);
    let qx = enc(&e, &xs);
    let qk = enc(&e, &ks);
    let qb = fx_encode::<u64>(bias, e.cfg()).unwrap().raw as i64;
    let opened = e.open(&y.data).unwrap();
    for oy in 0..4 {
        for ox in 0..4 {
            let mut acc: i128 = (qb as i128) << 16;
            for ky in 0..kk {
                for kx in 0..kk {
                    acc += (qx[(oy + ky) * w + ox + kx] as i64 as i128)
                        * (qk[ky * kk + kx] as i64 as i128);
                }
            }
            let rounded = (acc + (1 << 15)).div_euclid(1 << 16) as i64;
            assert_eq!(opened[oy * 4 + ox] as i64, rounded, "cell {oy},{ox}");
        }
    }
}

#[test]
fn conv_network_d_output_shape() {
    // 5 filters, 5x5 kernel, stride 2, same padding on 28x28 -> 5x14x14.
    use deepmpc::nn::layers::{LayerSpec, Padding};
    let spec = LayerSpec::Conv2d {
        filters: 5,
        kernel: 5,
        stride: 2,
        padding: Padding::Same,
    };
    assert_eq!(spec.out_shape(&[1, 28, 28]).unwrap(), vec![5, 14, 14]);
}

#[test]
fn relu_values_and_backward_mask_reuse() {
    let mut e = emu(Rounding::Nearest);
    let mut layer = Layer::Relu { saved_mask: None };
    let x = tensor(&e, &[-2.0, 3.0, 0.0, -0.5], vec![1, 4]);
    let y = layer.forward(&mut e, &x, true).unwrap();
    assert_eq!(dec(&e, &y.data), vec![0.0, 3.0, 0.0, 0.0]);
    // Backward reuses the saved mask: no new comparisons.
    let before = e.counters().ltz;
    let grad = tensor(&e, &[1.0, 1.0, 1.0, 1.0], vec![1, 4]);
    let dx = layer.backward(&mut e, &grad).unwrap();
    assert_eq!(e.counters().ltz, before, "relu backward must not compare");
    assert_eq!(dec(&e, &dx.data), vec![0.0, 1.0, 1.0, 0.0]);
}

#[test]
fn maxpool_2x2_and_gradient_routing() {
    let mut e = emu(Rounding::Nearest);
    let mut layer = Layer::MaxPool {
        window: 2,
        stride: 2,
        saved: None,
    };
    let x = tensor(&e, &[1.0, 2.0, 3.0, 4.0], vec![1, 1, 2, 2]);
    let before = e.counters().ltz;
    let y = layer.forward(&mut e, &x, true).unwrap();
    // Balanced tree: two levels of comparisons for a 2x2 window.
    assert_eq!(e.counters().ltz - before, 2, "tree depth for 2x2");
    assert_eq!(dec(&e, &y.data), vec![4.0]);
    let grad = tensor(&e, &[1.0], vec![1, 1, 1, 1]);
    let dx = layer.backward(&mut e, &grad).unwrap();
    assert_eq!(dec(&e, &dx.data), vec![0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn maxpool_matches_elementwise_oracle() {
    let mut e = emu(Rounding::Nearest);
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    let xs: Vec<f64> = (0..2 * 4 * 4).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let mut layer = Layer::MaxPool {
        window: 2,
        stride: 2,
        saved: None,
    };
    let x = tensor(&e, &xs, vec![1, 2, 4, 4]);
    let y = layer.forward(&mut e, &x, false).unwrap();
    let opened = dec(&e, &y.data);
    let q: Vec<f64> = dec(&e, &enc(&e, &xs)); // quantized reference values
    for c in 0..2 {
        for oy in 0..2 {
            for ox in 0..2 {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        best = best.max(q[c * 16 + (2 * oy + dy) * 4 + 2 * ox + dx]);
                    }
                }
                assert_eq!(opened[c * 4 + oy * 2 + ox], best);
            }
        }
    }
}

#[test]
fn dropout_identity_and_mask_statistics() {
    let mut e = emu(Rounding::Nearest);
    // rate 0 is the identity.
    let mut id_layer = Layer::Dropout { rate: 0.0, saved_mask: None };
    let x = tensor(&e, &[1.0, -2.0], vec![1, 2]);
    let y = id_layer.forward(&mut e, &x, true).unwrap();
    assert_eq!(dec(&e, &y.data), vec![1.0, -2.0]);
    // rate 0.5: kept fraction within 4 sigma, kept values doubled, backward
    // zero exactly where forward zeroed.
    let n = 10_000usize;
    let mut layer = Layer::Dropout { rate: 0.5, saved_mask: None };
    let xv = vec![1.0; n];
    let x = tensor(&e, &xv, vec![1, n]);
    let y = layer.forward(&mut e, &x, true).unwrap();
    let yv = dec(&e, &y.data);
    let kept = yv.iter().filter(|&&v| v != 0.0).count();
    assert!(yv.iter().all(|&v| v == 0.0 || v == 2.0));
    let margin = 4.0 * 0.5 * (n as f64).sqrt();
    assert!((kept as f64 - n as f64 / 2.0).abs() < margin);
    let g = tensor(&e, &vec![1.0; n], vec![1, n]);
    let dx = layer.backward(&mut e, &g).unwrap();
    for (yi, di) in yv.iter().zip(dec(&e, &dx.data)) {
        assert_eq!(*yi == 0.0, di == 0.0);
    }
    // Inference mode is the identity.
    let mut layer = Layer::Dropout { rate: 0.5, saved_mask: None };
    let x = tensor(&e, &[3.0, 4.0], vec![1, 2]);
    let y = layer.forward(&mut e, &x, false).unwrap();
    assert_eq!(dec(&e, &y.data), vec![3.0, 4.0]);
}

fn bn_layer(e: &EmuEngine<u64>, c: usize) -> Layer<EmuEngine<u64>> {
    Layer::BatchNorm {
        gamma: Param::new(tensor(e, &vec![1.0; c], vec![c])),
        beta: Param::new(tensor(e, &vec![0.0; c], vec![c])),
        eps_raw: 1u64 << (16 - 12),
        saved: None,
    }
}

#[test]
fn batchnorm_constant_column_gives_beta() {
    let mut e = emu(Rounding::Nearest);
    let mut layer = match bn_layer(&e, 2) {
        Layer::BatchNorm { gamma, eps_raw, saved, .. } => Layer::BatchNorm {
            gamma,
            beta: Param::new(tensor(&e, &[0.25, -0.5], vec![2])),
            eps_raw,
            saved,
        },
        _ => unreachable!(),
    };
    // Both features constant across the batch: output = beta.
    let x = tensor(&e, &[3.0, -1.0, 3.0, -1.0, 3.0, -1.0, 3.0, -1.0], vec![4, 2]);
    let y = layer.forward(&mut e, &x, false).unwrap();
    let vals = dec(&e, &y.data);
    for row in 0..4 {
        assert!((vals[row * 2] - 0.25).abs() < 0.01, "{vals:?}");
        assert!((vals[row * 2 + 1] + 0.5).abs() < 0.01, "{vals:?}");
    }
}

#[test]
fn batchnorm_normalizes_random_batch() {
    let mut e = emu(Rounding::Nearest);
    let mut rng = ChaCha12Rng::seed_from_u64(10);
    let (batch, c) = (64usize, 3usize);
    let xs: Vec<f64> = (0..batch * c)
        .map(|i| rng.gen_range(-1.0..1.0) * (1.0 + (i % c) as f64) + (i % c) as f64)
        .collect();
    let mut layer = bn_layer(&e, c);
    let x = tensor(&e, &xs, vec![batch, c]);
    let y = layer.forward(&mut e, &x, false).unwrap();
    let vals = dec(&e, &y.data);
    for feature in 0..c {
        let col: Vec<f64> = (0..batch).map(|r| vals[r * c + feature]).collect();
        let mean: f64 = col.iter().sum::<f64>() / batch as f64;
        let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / batch as f64;
        assert!(mean.abs() <= 8.0 * e.cfg().step() + 0.003, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }
}

#[test]
fn softmax_uniform_logits_and_row_sums() {
    let mut e = emu(Rounding::Nearest);
    let (batch, classes) = (4usize, 10usize);
    let logits = tensor(&e, &vec![0.7; batch * classes], vec![batch, classes]);
    let labels: Vec<u8> = (0..batch as u8).collect();
    let onehot = e.constant(&onehot_raw::<u64>(&labels, classes, 16));
    let (grad, _loss) =
        softmax_xent_grad(&mut e, &logits.data, &onehot, batch, classes).unwrap();
    let g = dec(&e, &grad);
    let tol = 4.0 * e.cfg().step() + 2e-3;
    for b in 0..batch {
        let mut row_sum = 0.0;
        for j in 0..classes {
            let expect = 0.1 - if j == labels[b] as usize { 1.0 } else { 0.0 };
            assert!((g[b * classes + j] - expect).abs() < tol, "{b},{j}: {}", g[b * classes + j]);
            row_sum += g[b * classes + j];
        }
        assert!(row_sum.abs() <= classes as f64 * e.cfg().step() + 1e-3);
    }
}

#[test]
fn softmax_matches_double_precision_oracle() {
    let mut e = emu(Rounding::Nearest);
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let (batch, classes) = (8usize, 10usize);
    let xs: Vec<f64> = (0..batch * classes).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let labels: Vec<u8> = (0..batch).map(|_| rng.gen_range(0..classes as u8)).collect();
    let logits = tensor(&e, &xs, vec![batch, classes]);
    let onehot = e.constant(&onehot_raw::<u64>(&labels, classes, 16));
    let (grad, loss) =
        softmax_xent_grad(&mut e, &logits.data, &onehot, batch, classes).unwrap();
    let g = dec(&e, &grad);
    let q = dec(&e, &enc(&e, &xs));
    let mut loss_expect = 0.0;
    for b in 0..batch {
        let row = &q[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for j in 0..classes {
            let expect = exps[j] / sum - if j == labels[b] as usize { 1.0 } else { 0.0 };
            let got = g[b * classes + j];
            assert!(
                (got - expect).abs() <= 1e-3,
                "batch {b} class {j}: got {got}, want {expect}"
            );
        }
        loss_expect += sum.ln() - (row[labels[b] as usize] - max);
    }
    let loss_opened = e.open(&loss).unwrap();
    let loss_got = dec(&e, &loss_opened)[0];
    assert!(
        (loss_got - loss_expect).abs() / loss_expect < 0.01,
        "loss {loss_got} vs {loss_expect}"
    );
}

#[test]
fn sgd_zero_gradient_keeps_params() {
    let mut e = emu(Rounding::Prob);
    let mut layers = vec![Layer::Dense {
        w: Param::new(tensor(&e, &[0.5, -0.25], vec![1, 2])),
        b: Param::new(tensor(&e, &[0.125], vec![1])),
        saved_x: None,
    }];
    // Zero gradients.
    for layer in layers.iter_mut() {
        for p in layer.params_mut() {
            let shape = p.value.shape.clone();
            p.grad = Some(ShareTensor::zeros(&e, shape));
        }
    }
    let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.01, 128).unwrap();
    opt.step(&mut e, &mut layers).unwrap();
    match &layers[0] {
        Layer::Dense { w, b, .. } => {
            assert_eq!(dec(&e, &w.value.data), vec![0.5, -0.25]);
            assert_eq!(dec(&e, &b.value.data), vec![0.125]);
        }
        _ => unreachable!(),
    }
}

#[test]
fn sgd_scalar_update_arithmetic() {
    // gamma = 0.01, B = 128, summed gradient 128 -> delta = -0.01.
    let mut e = emu(Rounding::Prob);
    let mut layers = vec![Layer::Dense {
        w: Param::new(tensor(&e, &[1.0], vec![1, 1])),
        b: Param::new(tensor(&e, &[0.0], vec![1])),
        saved_x: None,
    }];
    for layer in layers.iter_mut() {
        let mut it = layer.params_mut().into_iter();
        let w = it.next().unwrap();
        w.grad = Some(tensor(&e, &[128.0], vec![1, 1]));
        let b = it.next().unwrap();
        b.grad = Some(tensor(&e, &[0.0], vec![1]));
    }
    let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.01, 128).unwrap();
    opt.step(&mut e, &mut layers).unwrap();
    match &layers[0] {
        Layer::Dense { w, .. } => {
            let got = dec(&e, &w.value.data)[0];
            assert!((got - 0.99).abs() <= 2.0 * e.cfg().step(), "got {got}");
        }
        _ => unreachable!(),
    }
}

#[test]
fn sgd_rejects_non_power_of_two_batch() {
    assert!(Optimizer::<EmuEngine<u64>>::new(OptimizerKind::Sgd, 0.01, 100).is_err());
    assert!(Optimizer::<EmuEngine<u64>>::new(OptimizerKind::Adam, 0.01, 100).is_ok());
}

#[test]
fn adam_single_step_matches_oracle() {
    let mut e = emu(Rounding::Nearest);
    let grads = [0.5f64, -1.25, 2.0, 0.0625];
    let mut layers = vec![Layer::Dense {
        w: Param::new(tensor(&e, &[1.0, 1.0, 1.0, 1.0], vec![1, 4])),
        b: Param::new(tensor(&e, &[0.0], vec![1])),
        saved_x: None,
    }];
    for layer in layers.iter_mut() {
        let mut it = layer.params_mut().into_iter();
        it.next().unwrap().grad = Some(tensor(&e, &grads, vec![1, 4]));
        it.next().unwrap().grad = Some(tensor(&e, &[0.0], vec![1]));
    }
    let mut opt = Optimizer::new(OptimizerKind::Adam, 0.001, 128).unwrap();
    opt.step(&mut e, &mut layers).unwrap();
    // Double-precision oracle with identical (zero-initialized) moments and
    // epsilon = one representation step inside the root.
    match &layers[0] {
        Layer::Dense { w, .. } => {
            let got = dec(&e, &w.value.data);
            for (i, &g) in grads.iter().enumerate() {
                let m = 0.1 * g;
                let v = 0.001 * g * g;
                let expect = 1.0 - 0.001 * m / (v + 2.0f64.powi(-16)).sqrt();
                assert!(
                    (got[i] - expect).abs() <= 1e-3,
                    "param {i}: got {}, want {expect}",
                    got[i]
                );
            }
        }
        _ => unreachable!(),
    }
}

#[test]
fn amsgrad_vhat_never_decreases() {
    let mut e = emu(Rounding::Prob);
    let mut layers = vec![Layer::Dense {
        w: Param::new(tensor(&e, &[1.0], vec![1, 1])),
        b: Param::new(tensor(&e, &[0.0], vec![1])),
        saved_x: None,
    }];
    let mut opt = Optimizer::new(OptimizerKind::AmsGrad, 0.001, 128).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(12);
    let mut prev = f64::NEG_INFINITY;
    for step in 0..100 {
        let g = rng.gen_range(-4.0..4.0);
        for layer in layers.iter_mut() {
            let mut it = layer.params_mut().into_iter();
            it.next().unwrap().grad = Some(tensor(&e, &[g], vec![1, 1]));
            it.next().unwrap().grad = Some(tensor(&e, &[0.0], vec![1]));
        }
        opt.step(&mut e, &mut layers).unwrap();
        let vh = opt.debug_vhat(&mut e).expect("amsgrad state");
        assert!(
            vh + 1e-9 >= prev,
            "v_hat decreased at step {step}: {vh} < {prev}"
        );
        prev = vh;
    }
}
