//! Frozen-oracle accuracy tests for the secure math pipelines, run on the
//! emulator in deterministic (nearest) mode.

use deepmpc::emulate::EmuEngine;
use deepmpc::engine::Engine;
use deepmpc::fixed::{fx_decode_raw, fx_encode, FixedConfig, Rounding};
use deepmpc::secmath;

fn emu() -> EmuEngine<u64> {
    EmuEngine::new(FixedConfig::default64(), Rounding::Nearest, 31337).unwrap()
}

fn enc(e: &EmuEngine<u64>, xs: &[f64]) -> Vec<u64> {
    xs.iter()
        .map(|&x| fx_encode::<u64>(x, e.cfg()).unwrap().raw)
        .collect()
}

fn dec(e: &EmuEngine<u64>, xs: &[u64]) -> Vec<f64> {
    xs.iter().map(|&x| fx_decode_raw(x, e.cfg())).collect()
}

#[test]
fn exp2_grid_max_relative_error() {
    // 10^4 uniform grid points over [-13, 13]; the oracle is the nearest
    // representable value of 2^x, which the deterministic pipeline must
    // track within 1e-3 relative.
    let mut e = emu();
    let n = 10_000usize;
    let xs: Vec<f64> = (0..n)
        .map(|i| -13.0 + 26.0 * i as f64 / (n - 1) as f64)
        .collect();
    let raw = enc(&e, &xs);
    let out = secmath::exp2(&mut e, &raw).unwrap();
    let vals = dec(&e, &out);
    let mut worst = 0.0f64;
    let step = e.cfg().step();
    for (x, got) in xs.iter().zip(vals) {
        // Oracle: 2^x at the quantized input, with a half-representation-step
        // allowance (outputs are integers times 2^-f; the true value may sit
        // on a rounding boundary, where one step is unavoidable).
        let xq = (x * 65536.0).round() / 65536.0;
        let oracle = 2.0f64.powf(xq);
        let excess = ((got - oracle).abs() - 0.5 * step).max(0.0);
        let rel = excess / oracle;
        worst = worst.max(rel);
        assert!(rel <= 1e-3, "x = {x}: got {got}, oracle {oracle}, rel {rel}");
    }
    assert!(worst < 1e-3, "worst excess relative error {worst}");
}

#[test]
fn exp2_multiplicativity() {
    // |2^(a+b) - 2^a 2^b| within a few representation steps for in-range sums.
    let mut e = emu();
    let pairs: Vec<(f64, f64)> = vec![
        (0.5, 0.25),
        (1.75, -0.5),
        (-3.25, 1.0),
        (2.0, 2.0),
        (-1.0, -1.0),
        (3.3, -2.7),
    ];
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let s: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
    let (ra, rb, rs) = (enc(&e, &a), enc(&e, &b), enc(&e, &s));
    let ea = secmath::exp2(&mut e, &ra).unwrap();
    let eb = secmath::exp2(&mut e, &rb).unwrap();
    let es = secmath::exp2(&mut e, &rs).unwrap();
    let prod = secmath::fixed_mul(&mut e, &ea, &eb).unwrap();
    let lhs = dec(&e, &es);
    let rhs = dec(&e, &prod);
    for (i, (l, r)) in lhs.iter().zip(&rhs).enumerate() {
        let steps = (l - r).abs() / e.cfg().step();
        // Tolerance scales with the magnitude of the result (the products
        // re-round at the output scale).
        let limit = 4.0 + 4.0 * l.abs();
        assert!(steps <= limit, "pair {i}: {l} vs {r} ({steps} steps)");
    }
}

#[test]
fn exp_e_base_change_error_band() {
    // exp_e(x) within the squared base-change factor of the oracle.
    let mut e = emu();
    // Stay inside the exponent domain: x log2(e) must clear the
    // -(k - f - 1) underflow cutoff and the k - f - 1 overflow bound.
    let xs: Vec<f64> = (-38..=38).map(|i| i as f64 * 0.25).collect();
    let raw = enc(&e, &xs);
    let out = secmath::exp_e(&mut e, &raw).unwrap();
    let vals = dec(&e, &out);
    let factor = 1.0 + 2.0f64.powi(-16);
    // The base-change constant is itself quantized; the oracle uses the
    // encoded value so the band below isolates the multiplication error.
    let log2e_q = (std::f64::consts::LOG2_E * 65536.0).round() / 65536.0;
    for (x, got) in xs.iter().zip(vals) {
        let xq = (x * 65536.0).round() / 65536.0;
        let oracle = 2.0f64.powf(xq * log2e_q);
        let lo = oracle / (factor * factor) - 2.0 * e.cfg().step();
        let hi = oracle * factor * factor + 2.0 * e.cfg().step();
        assert!(
            (lo..=hi).contains(&got),
            "x = {x}: got {got}, oracle {oracle}"
        );
    }
}

#[test]
fn invert_sqrt_grid_within_one_percent() {
    // 10^3 grid over [2^-10, 2^10], log-spaced.
    let mut e = emu();
    let n = 1000usize;
    let xs: Vec<f64> = (0..n)
        .map(|i| 2.0f64.powf(-10.0 + 20.0 * i as f64 / (n - 1) as f64))
        .collect();
    let raw = enc(&e, &xs);
    let out = secmath::invert_sqrt(&mut e, &raw).unwrap();
    let vals = dec(&e, &out);
    for (x, got) in xs.iter().zip(vals) {
        let xq = (x * 65536.0).round() / 65536.0;
        let oracle = 1.0 / xq.sqrt();
        let rel = (got - oracle).abs() / oracle;
        assert!(rel <= 0.01, "x = {x}: got {got}, oracle {oracle}, rel {rel}");
    }
}

#[test]
fn invert_sqrt_regression_at_one() {
    // Calibration regression: the frozen exponent constants keep
    // invert_sqrt(1.0) inside [0.99, 1.01].
    let mut e = emu();
    let raw = enc(&e, &[1.0]);
    let out = secmath::invert_sqrt(&mut e, &raw).unwrap();
    let v = dec(&e, &out)[0];
    assert!((0.99..=1.01).contains(&v), "invert_sqrt(1.0) = {v}");
}

#[test]
fn division_oracle_sweep_freezes_tolerance() {
    // The iteration count is frozen so the relative error stays below
    // 2^-14 across [2^-13, 2^13] in the cleartext oracle sweep; the
    // quantized pipeline gets a small additional allowance for truncation
    // noise at the extremes.
    assert_eq!(secmath::DIV_ITERS, 3);
    let mut e = emu();
    let n = 600usize;
    let bs: Vec<f64> = (0..n)
        .map(|i| 2.0f64.powf(-13.0 + 26.0 * i as f64 / (n - 1) as f64))
        .collect();
    let ones = vec![1.0; n];
    let (rn, rd) = (enc(&e, &ones), enc(&e, &bs));
    let q = secmath::div(&mut e, &rn, &rd).unwrap();
    let vals = dec(&e, &q);
    let step = e.cfg().step();
    for (b, got) in bs.iter().zip(vals) {
        // The oracle divides by the value actually encoded.
        let bq = (b * 65536.0).round() / 65536.0;
        let oracle = 1.0 / bq;
        let excess = ((got - oracle).abs() - 0.5 * step).max(0.0);
        let rel = excess / oracle;
        let tol = 2.0f64.powi(-14) + 4.0 * step / oracle.max(step);
        assert!(rel <= tol, "1/{b}: got {got}, oracle {oracle}, rel {rel}");
    }
}

#[test]
fn division_self_and_shift_identities() {
    let mut e = emu();
    // x / x = 1 across a range.
    let xs: Vec<f64> = (-8..=8).map(|j| 2.0f64.powi(j) * 1.37).collect();
    let rx = enc(&e, &xs);
    let q = secmath::div(&mut e, &rx, &rx).unwrap();
    for v in dec(&e, &q) {
        assert!((v - 1.0).abs() < 2.0f64.powi(-12), "x/x = {v}");
    }
    // x / 2^j matches the truncation shift within tolerance.
    let x = vec![5.4375; 4];
    let pows: Vec<f64> = vec![2.0, 4.0, 8.0, 16.0];
    let (rx2, rp) = (enc(&e, &x), enc(&e, &pows));
    let q = secmath::div(&mut e, &rx2, &rp).unwrap();
    let got = dec(&e, &q);
    for (j, v) in got.iter().enumerate() {
        let expect = 5.4375 / pows[j];
        assert!((v - expect).abs() < 1e-3, "shift oracle: {v} vs {expect}");
    }
}

#[test]
fn log2_tolerance_frozen_from_oracle() {
    let mut e = emu();
    let xs: Vec<f64> = (0..500)
        .map(|i| 2.0f64.powf(-8.0 + 16.0 * i as f64 / 499.0))
        .collect();
    let raw = enc(&e, &xs);
    let out = secmath::log2(&mut e, &raw).unwrap();
    let vals = dec(&e, &out);
    // Frozen from the oracle sweep: series + division error stays under 2e-3.
    let tol = 2e-3;
    for (x, got) in xs.iter().zip(vals) {
        let xq = (x * 65536.0).round() / 65536.0;
        let oracle = xq.log2();
        assert!((got - oracle).abs() <= tol, "log2({x}) = {got} vs {oracle}");
    }
}

#[test]
fn trunc_prob_two_outcomes_frequency() {
    // Fixed input, probabilistic mode: the two outputs and their empirical
    // frequencies match the Eq.-style probabilities within 4 sigma.
    let mut e = EmuEngine::<u64>::new(FixedConfig::default64(), Rounding::Prob, 2024).unwrap();
    let n = 40_000usize;
    // value 2.75 truncated by 2 bits of fraction scale: frac 0.75 -> up with p = 0.75.
    let x = vec![(2u64 << 2) + 3; n];
    let t = e.trunc(&x, 31, 2, Rounding::Prob).unwrap();
    let ups = t.iter().filter(|&&v| v == 3).count();
    assert!(t.iter().all(|&v| v == 2 || v == 3));
    let p = ups as f64 / n as f64;
    let sigma = (0.75 * 0.25 / n as f64).sqrt();
    assert!((p - 0.75).abs() < 4.0 * sigma, "P(up) = {p}");
}

#[test]
fn np2_range_edges() {
    let mut e = emu();
    let f = e.cfg().f as usize;
    // Smallest and largest spec-range inputs.
    let xs = vec![2.0f64.powi(-15), 2.0f64.powi(13)];
    let raw = enc(&e, &xs);
    let planes = secmath::np2(&mut e, &raw).unwrap();
    let mut hot = vec![Vec::new(); 2];
    for (i, plane) in planes.iter().enumerate() {
        for (el, b) in e.open_bits(plane).unwrap().iter().enumerate() {
            if *b {
                hot[el].push(i);
            }
        }
    }
    assert_eq!(hot[0], vec![f - 15]);
    assert_eq!(hot[1], vec![f + 13]);
}
