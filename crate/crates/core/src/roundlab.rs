//! Empirical validation harness for the probabilistic-rounding analysis:
//! unbiasedness, the worst-case bound, and the probabilistic bound.
//!
//! The experiments use the per-product rounding model the propositions are
//! stated for: every scalar product is rounded independently and the
//! rounded products are summed per output entry. (The production matrix
//! path defers the single rounding to after the summation, which only
//! tightens these bounds; its own property tests live with the fixed-point
//! module.)

use crate::fixed::{round_nearest_clear, round_prob_clear, FixedConfig, Rounding};
use crate::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[derive(Clone, Copy, Debug)]
pub struct RoundingExperiment {
    pub m: usize,
    pub n: usize,
    pub p: usize,
    /// Entry magnitudes are sampled below 2^k_bound.
    pub k_bound: u32,
    /// Deviation parameter for the probabilistic bound.
    pub iota: f64,
    pub trials: usize,
    pub seed: u64,
}

impl RoundingExperiment {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.p == 0 {
            return Err(crate::Error::Config("matrix dims must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Prop1,
    Prop2,
    Prop3,
}

impl std::str::FromStr for Which {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "prop1" => Ok(Which::Prop1),
            "prop2" => Ok(Which::Prop2),
            "prop3" => Ok(Which::Prop3),
            other => Err(format!("unknown experiment `{other}`")),
        }
    }
}

pub struct Report {
    pub which: Which,
    pub pass: bool,
    pub summary: String,
    /// (trial index, observed deviation norm) rows for the CSV artifact.
    pub rows: Vec<(usize, f64)>,
}

impl Report {
    /// One row per trial, then a summary row.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "trial,deviation")?;
        for (t, d) in &self.rows {
            writeln!(out, "{t},{d}")?;
        }
        writeln!(
            out,
            "summary,{},{}",
            if self.pass { "pass" } else { "fail" },
            self.summary.replace(',', ";")
        )
    }
}

fn sample_matrix(rng: &mut ChaCha12Rng, len: usize, bound: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

fn quantize(vals: &[f64], cfg: FixedConfig) -> Vec<u64> {
    vals.iter()
        .map(|&x| {
            let scaled = (x * (2.0f64).powi(cfg.f as i32)).round() as i64;
            scaled as u64
        })
        .collect()
}

/// Per-product rounded matrix product: R(AB)_ij = sum_l round(QA_il QB_lj 2^-f).
pub fn matmul_per_product(
    qa: &[u64],
    qb: &[u64],
    m: usize,
    n: usize,
    p: usize,
    cfg: FixedConfig,
    mode: Rounding,
    rng: &mut ChaCha12Rng,
) -> Vec<i64> {
    let mut out = vec![0i64; m * p];
    for i in 0..m {
        for j in 0..p {
            let mut acc = 0i64;
            for l in 0..n {
                let prod = qa[i * n + l].wrapping_mul(qb[l * p + j]);
                let rounded = match mode {
                    Rounding::Prob => round_prob_clear(prod, cfg, rng),
                    Rounding::Nearest => round_nearest_clear(prod, cfg),
                };
                acc += rounded as i64;
            }
            out[i * p + j] = acc;
        }
    }
    out
}

/// Exact expectation 2^-f Q(A) Q(B) as f64 (entries fit comfortably in the
/// 53-bit mantissa for the experiment sizes here).
fn expectation(qa: &[u64], qb: &[u64], m: usize, n: usize, p: usize, f: u32) -> Vec<f64> {
    let mut out = vec![0.0f64; m * p];
    for i in 0..m {
        for j in 0..p {
            let mut acc: i128 = 0;
            for l in 0..n {
                acc += (qa[i * n + l] as i64 as i128) * (qb[l * p + j] as i64 as i128);
            }
            out[i * p + j] = acc as f64 / (2.0f64).powi(f as i32);
        }
    }
    out
}

fn frobenius(diff: impl Iterator<Item = f64>) -> f64 {
    diff.map(|d| d * d).sum::<f64>().sqrt()
}

pub fn run_rounding_experiment(spec: &RoundingExperiment, which: Which) -> Result<Report> {
    spec.validate()?;
    let cfg = FixedConfig::default64();
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let bound = (2.0f64).powi(spec.k_bound as i32);
    let (m, n, p) = (spec.m, spec.n, spec.p);
    match which {
        Which::Prop1 => {
            // One fixed instance; accumulate per-entry means over the trials.
            let a = sample_matrix(&mut rng, m * n, bound.min(cfg.max_magnitude() / 2.0));
            let b = sample_matrix(&mut rng, n * p, bound.min(cfg.max_magnitude() / 2.0));
            let qa = quantize(&a, cfg);
            let qb = quantize(&b, cfg);
            let mu = expectation(&qa, &qb, m, n, p, cfg.f);
            let mut sum = vec![0.0f64; m * p];
            let mut sumsq = vec![0.0f64; m * p];
            let mut rows = Vec::new();
            for t in 0..spec.trials {
                let r = matmul_per_product(&qa, &qb, m, n, p, cfg, Rounding::Prob, &mut rng);
                let mut dev2 = 0.0;
                for (idx, &v) in r.iter().enumerate() {
                    let v = v as f64;
                    sum[idx] += v;
                    sumsq[idx] += v * v;
                    let d = v - mu[idx];
                    dev2 += d * d;
                }
                if t < 1000 {
                    rows.push((t, dev2.sqrt()));
                }
            }
            let t = spec.trials as f64;
            let mut worst_z = 0.0f64;
            let mut exact_mismatch = false;
            for idx in 0..m * p {
                let mean = sum[idx] / t;
                let var = (sumsq[idx] / t - mean * mean).max(0.0);
                let se = (var / t).sqrt();
                if se == 0.0 {
                    if mean != mu[idx] {
                        exact_mismatch = true;
                    }
                    continue;
                }
                worst_z = worst_z.max((mean - mu[idx]).abs() / se);
            }
            let pass = !exact_mismatch && worst_z <= 4.0;
            Ok(Report {
                which,
                pass,
                summary: format!("max |mean - mu| = {worst_z:.3} standard errors (limit 4)"),
                rows,
            })
        }
        Which::Prop2 => {
            let eps = cfg.step();
            let limit = (m as f64 * p as f64).sqrt() * n as f64 * (bound + 1.0 + eps / 4.0);
            let mut violations = 0usize;
            let mut max_norm = 0.0f64;
            let mut rows = Vec::new();
            for t in 0..spec.trials {
                let a = sample_matrix(&mut rng, m * n, bound);
                let b = sample_matrix(&mut rng, n * p, bound);
                let qa = quantize(&a, cfg);
                let qb = quantize(&b, cfg);
                let r = matmul_per_product(&qa, &qb, m, n, p, cfg, Rounding::Prob, &mut rng);
                // || R - 2^f A B ||
                let scale = (2.0f64).powi(cfg.f as i32);
                let mut dev2 = 0.0;
                for i in 0..m {
                    for j in 0..p {
                        let mut exact = 0.0f64;
                        for l in 0..n {
                            exact += a[i * n + l] * b[l * p + j];
                        }
                        let d = r[i * p + j] as f64 - scale * exact;
                        dev2 += d * d;
                    }
                }
                let norm = dev2.sqrt();
                max_norm = max_norm.max(norm);
                if norm >= limit {
                    violations += 1;
                }
                rows.push((t, norm));
            }
            Ok(Report {
                which,
                pass: violations == 0,
                summary: format!(
                    "{violations} violations in {} trials; max norm {max_norm:.2} vs bound {limit:.2} (margin {:.3})",
                    spec.trials,
                    max_norm / limit
                ),
                rows,
            })
        }
        Which::Prop3 => {
            let limit = spec.iota * ((m * n * p) as f64).sqrt();
            let ceiling = 1.0 / (4.0 * spec.iota * spec.iota);
            let mut violations = 0usize;
            let mut rows = Vec::new();
            for t in 0..spec.trials {
                let a = sample_matrix(&mut rng, m * n, bound);
                let b = sample_matrix(&mut rng, n * p, bound);
                let qa = quantize(&a, cfg);
                let qb = quantize(&b, cfg);
                let r = matmul_per_product(&qa, &qb, m, n, p, cfg, Rounding::Prob, &mut rng);
                let mu = expectation(&qa, &qb, m, n, p, cfg.f);
                let norm = frobenius(
                    r.iter()
                        .zip(mu.iter())
                        .map(|(&ri, &mi)| ri as f64 - mi),
                );
                if norm > limit {
                    violations += 1;
                }
                rows.push((t, norm));
            }
            let frac = violations as f64 / spec.trials as f64;
            // Binomial 3-sigma confidence margin on top of the 1/(4 iota^2)
            // ceiling.
            let margin =
                3.0 * (ceiling.min(1.0) * (1.0 - ceiling.min(1.0)).max(0.0) / spec.trials as f64)
                    .sqrt()
                    .max((0.25 * 0.75 / spec.trials as f64).sqrt() * 3.0);
            let pass = frac <= ceiling + margin;
            Ok(Report {
                which,
                pass,
                summary: format!(
                    "violation fraction {frac:.4} vs ceiling {ceiling:.4} + margin {margin:.4}"
                ),
                rows,
            })
        }
    }
}

/// The constructed nearest-rounding bias witness: every scalar product has
/// fractional part 0.25, so nearest rounding loses 0.25 per product while
/// probabilistic rounding stays unbiased.
///
/// Returns (nearest bias in standard errors, probabilistic bias in standard
/// errors), measured per entry against the exact expectation.
pub fn nearest_bias_witness(dim: usize, trials: usize, seed: u64) -> (f64, f64) {
    let cfg = FixedConfig::default64();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // Q(A) entries = 1 raw, Q(B) entries = 2^(f-2) raw: every product is
    // 2^(f-2), i.e. mu = 0.25 exactly.
    let qa = vec![1u64; dim * dim];
    let qb = vec![1u64 << (cfg.f - 2); dim * dim];
    let mu = expectation(&qa, &qb, dim, dim, dim, cfg.f);
    // Probabilistic: estimate the empirical mean over the trials.
    let mut sum = vec![0.0f64; dim * dim];
    let mut sumsq = vec![0.0f64; dim * dim];
    for _ in 0..trials {
        let r = matmul_per_product(&qa, &qb, dim, dim, dim, cfg, Rounding::Prob, &mut rng);
        for (idx, &v) in r.iter().enumerate() {
            sum[idx] += v as f64;
            sumsq[idx] += (v as f64) * (v as f64);
        }
    }
    let t = trials as f64;
    // Per-entry standard error of the probabilistic mean; the same scale
    // judges the deterministic nearest bias.
    let mut max_prob_z = 0.0f64;
    let mut min_nearest_z = f64::INFINITY;
    let nearest = matmul_per_product(
        &qa,
        &qb,
        dim,
        dim,
        dim,
        cfg,
        Rounding::Nearest,
        &mut rng,
    );
    for idx in 0..dim * dim {
        let mean = sum[idx] / t;
        let var = (sumsq[idx] / t - mean * mean).max(0.0);
        let se = (var / t).sqrt().max(f64::MIN_POSITIVE);
        max_prob_z = max_prob_z.max((mean - mu[idx]).abs() / se);
        min_nearest_z = min_nearest_z.min((nearest[idx] as f64 - mu[idx]).abs() / se);
    }
    (min_nearest_z, max_prob_z)
}
