//! Softmax cross-entropy gradient with max-stabilization, plus the opened
//! scalar loss used for reporting only.

use crate::engine::Engine;
use crate::ring::Ring;
use crate::secmath;
use crate::{Error, Result};

/// Gradient of the softmax cross-entropy for a batch of logits [B, L] and
/// one-hot labels [B, L] (both shared).
///
/// grad_i = exp(x_i - x_max) / sum_j exp(x_j - x_max) - y_i; the shifted
/// divisor lies in [1, L], so nothing overflows in the quantized domain.
/// Also returns the shared sum of per-sample losses (log-based, reporting
/// only).
pub fn softmax_xent_grad<E: Engine>(
    e: &mut E,
    logits: &E::AVec,
    onehot: &E::AVec,
    batch: usize,
    classes: usize,
) -> Result<(E::AVec, E::AVec)> {
    if classes == 0 {
        return Err(Error::Shape("softmax over zero classes".into()));
    }
    if E::alen(logits) != batch * classes || E::alen(onehot) != batch * classes {
        return Err(Error::Shape(format!(
            "softmax shapes: {} and {} vs {batch}x{classes}",
            E::alen(logits),
            E::alen(onehot)
        )));
    }
    // Row maxima by a balanced comparison tree over the class dimension.
    let mut cols: Vec<E::AVec> = (0..classes)
        .map(|j| {
            let idx: Vec<u32> = (0..batch).map(|b| (b * classes + j) as u32).collect();
            e.gather(logits, &idx)
        })
        .collect();
    while cols.len() > 1 {
        let pairs = cols.len() / 2;
        let odd = cols.len() % 2 == 1;
        let lefts: Vec<&E::AVec> = cols.iter().take(2 * pairs).step_by(2).collect();
        let rights: Vec<&E::AVec> = cols.iter().skip(1).take(2 * pairs).step_by(2).collect();
        let l = e.concat(&lefts);
        let r = e.concat(&rights);
        let (max, _sel) = secmath::max_pairwise(e, &l, &r)?;
        let mut next = Vec::with_capacity(pairs + odd as usize);
        for i in 0..pairs {
            next.push(e.slice(&max, i * batch, batch));
        }
        if odd {
            next.push(cols.pop().unwrap());
        }
        cols = next;
    }
    let row_max = cols.pop().unwrap(); // [B]

    // Shift, exponentiate, normalize.
    let bcast: Vec<u32> = (0..batch * classes).map(|i| (i / classes) as u32).collect();
    let max_full = e.gather(&row_max, &bcast);
    let shifted = e.sub(logits, &max_full);
    let exps = secmath::exp_e(e, &shifted)?;
    let sums = super::layers::sum_rows_rowmajor(e, &transpose_to_rows(e, &exps, batch, classes), classes, batch);
    // sums is [B]; divide each row.
    let sums_full = e.gather(&sums, &bcast);
    let probs = secmath::div(e, &exps, &sums_full)?;
    let grad = e.sub(&probs, onehot);

    // loss_i = ln(sum_i) - (x_true - x_max); summed over the batch.
    let log2_sums = secmath::log2(e, &sums)?;
    let ln_sums = secmath::fixed_mul_public(
        e,
        &log2_sums,
        secmath::encode_const(e, std::f64::consts::LN_2),
    )?;
    // x_true - x_max = sum_j y_j (x_j - x_max), one dot per row.
    let picked_raw = e.mul(onehot, &shifted)?;
    let cfg = e.cfg();
    let picked = e.trunc(&picked_raw, cfg.k + cfg.f, cfg.f, e.rounding())?;
    let picked_rows =
        super::layers::sum_rows_rowmajor(e, &transpose_to_rows(e, &picked, batch, classes), classes, batch);
    let per_sample = e.sub(&ln_sums, &picked_rows);
    let loss_sum = sum_all(e, &per_sample);
    Ok((grad, loss_sum))
}

/// Transpose [batch, classes] to [classes, batch] so row sums reduce the
/// class dimension.
fn transpose_to_rows<E: Engine>(
    e: &E,
    x: &E::AVec,
    batch: usize,
    classes: usize,
) -> E::AVec {
    super::layers::transpose(e, x, batch, classes)
}

fn sum_all<E: Engine>(e: &E, x: &E::AVec) -> E::AVec {
    let n = E::alen(x);
    let mut acc = e.slice(x, 0, 1);
    for i in 1..n {
        let v = e.slice(x, i, 1);
        acc = e.add(&acc, &v);
    }
    acc
}

/// One-hot encode labels at fixed-point precision (Q(1) per hot entry).
pub fn onehot_raw<R: Ring>(labels: &[u8], classes: usize, f: u32) -> Vec<R> {
    let one = R::ONE.shl(f);
    let mut out = vec![R::ZERO; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        out[i * classes + l as usize] = one;
    }
    out
}
