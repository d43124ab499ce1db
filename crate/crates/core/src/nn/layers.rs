//! Layer forward/backward passes over share tensors.
//!
//! Linear layers ride the deferred-truncation matrix product: sums run at
//! 2f precision and every output entry is rounded exactly once. Comparison
//! results from forward passes are stored in shared form and reused by the
//! backward passes, which therefore perform no comparisons at all.

use super::tensor::ShareTensor;
use crate::engine::Engine;
use crate::ring::Ring;
use crate::secmath;
use crate::{Error, Result};

/// Layer shape/hyperparameter description, engine-independent.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Dense { units: usize },
    Conv2d { filters: usize, kernel: usize, stride: usize, padding: Padding },
    Relu,
    MaxPool { window: usize, stride: usize },
    Dropout { rate: f64 },
    BatchNorm,
    Flatten,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Padding {
    Same,
    Explicit(usize),
}

impl LayerSpec {
    /// Output shape for a given input shape (without the batch dimension).
    pub fn out_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            LayerSpec::Dense { units } => Ok(vec![*units]),
            LayerSpec::Conv2d { filters, kernel, stride, padding } => {
                let [_, h, w]: [usize; 3] = input
                    .try_into()
                    .map_err(|_| Error::Shape(format!("conv2d input {input:?}")))?;
                let pad = padding.resolve(*kernel, *stride, h);
                let oh = conv_out(h, *kernel, *stride, pad)?;
                let ow = conv_out(w, *kernel, *stride, pad)?;
                Ok(vec![*filters, oh, ow])
            }
            LayerSpec::Relu | LayerSpec::Dropout { .. } | LayerSpec::BatchNorm => {
                Ok(input.to_vec())
            }
            LayerSpec::MaxPool { window, stride } => {
                let [c, h, w]: [usize; 3] = input
                    .try_into()
                    .map_err(|_| Error::Shape(format!("maxpool input {input:?}")))?;
                if *stride == *window && (h % window != 0 || w % window != 0) {
                    return Err(Error::Shape(format!(
                        "maxpool window {window} does not divide {h}x{w}"
                    )));
                }
                Ok(vec![c, pool_out(h, *window, *stride), pool_out(w, *window, *stride)])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

impl Padding {
    /// Keras-style "same" padding for the strided case used here, or the
    /// explicit value (any non-negative integer is allowed).
    pub fn resolve(&self, kernel: usize, stride: usize, extent: usize) -> usize {
        match self {
            Padding::Explicit(p) => *p,
            Padding::Same => {
                // Output size ceil(extent / stride).
                let out = extent.div_ceil(stride);
                let needed = ((out - 1) * stride + kernel).saturating_sub(extent);
                needed / 2 + needed % 2
            }
        }
    }
}

fn conv_out(extent: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = extent + 2 * pad;
    if padded < kernel {
        return Err(Error::Shape(format!(
            "kernel {kernel} larger than padded extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn pool_out(extent: usize, window: usize, stride: usize) -> usize {
    (extent - window) / stride + 1
}

/// Trainable parameter with its accumulated (batch-summed) gradient.
pub struct Param<E: Engine> {
    pub value: ShareTensor<E>,
    pub grad: Option<ShareTensor<E>>,
}

impl<E: Engine> Param<E> {
    pub fn new(value: ShareTensor<E>) -> Self {
        Param { value, grad: None }
    }
}

/// A layer instance: parameters plus saved forward context.
pub enum Layer<E: Engine> {
    Dense {
        w: Param<E>, // units x in
        b: Param<E>, // units
        saved_x: Option<ShareTensor<E>>,
    },
    Conv2d {
        k: Param<E>, // filters x in_c x kh x kw
        b: Param<E>, // filters
        stride: usize,
        pad: usize,
        in_shape: [usize; 3],
        saved_patches: Option<(E::AVec, Vec<u32>, usize)>, // patches, gather idx, batch
    },
    Relu {
        saved_mask: Option<E::AVec>, // arithmetic [x < 0] indicator
    },
    MaxPool {
        window: usize,
        stride: usize,
        saved: Option<PoolContext<E>>,
    },
    Dropout {
        rate: f64,
        saved_mask: Option<E::AVec>,
    },
    BatchNorm {
        gamma: Param<E>, // features
        beta: Param<E>,  // features
        eps_raw: E::R,
        saved: Option<BnContext<E>>,
    },
    Flatten {
        in_shape: Vec<usize>,
    },
}

pub struct PoolContext<E: Engine> {
    /// Per tree level: selector shares (1 = right operand won) and the
    /// number of pairs at that level.
    levels: Vec<(E::AVec, usize, bool)>, // (sel, pairs, had_odd_tail)
    gather_idx: Vec<Vec<u32>>,
    in_len: usize,
    out_shape: Vec<usize>,
}

pub struct BnContext<E: Engine> {
    xc: E::AVec,      // centered input, row-major [N, C]
    xhat: E::AVec,    // normalized input, row-major [N, C]
    inv_std: E::AVec, // per feature
    // Inverse-sqrt internals, so the backward pass differentiates the
    // quadratic actually computed rather than an ideal x^(-1/2).
    cprime: E::AVec, // c'(u) per feature
    vnorm: E::AVec,  // 2^(-e-1) per feature
    comp: E::AVec,   // 2^(-(e+1)/2) per feature
    rows: usize,     // N = batch * spatial
    to_rows: Vec<u32>,
    from_rows: Vec<u32>,
}

impl<E: Engine> Layer<E> {
    pub fn forward(
        &mut self,
        e: &mut E,
        x: &ShareTensor<E>,
        train: bool,
    ) -> Result<ShareTensor<E>> {
        match self {
            Layer::Dense { w, b, saved_x } => {
                let batch = x.shape[0];
                let d_in = x.len() / batch;
                let units = w.value.shape[0];
                if w.value.shape[1] != d_in {
                    return Err(Error::Shape(format!(
                        "dense expects {} inputs, got {d_in}",
                        w.value.shape[1]
                    )));
                }
                // y = x W^T + b, one rounding per output.
                let wt = transpose(e, &w.value.data, units, d_in);
                let mut raw = e.matmul(&x.data, &wt, batch, d_in, units)?;
                let bias2f = e.scale_public(
                    &b.value.data,
                    &[E::R::ONE.shl(e.cfg().f)],
                );
                let bcast: Vec<u32> = (0..batch * units).map(|i| (i % units) as u32).collect();
                let bias_full = e.gather(&bias2f, &bcast);
                raw = e.add(&raw, &bias_full);
                let cfg = e.cfg();
                let y = e.trunc(&raw, cfg.k + cfg.f, cfg.f, e.rounding())?;
                if train {
                    *saved_x = Some(x.clone());
                }
                ShareTensor::new(y, vec![batch, units])
            }
            Layer::Conv2d { k, b, stride, pad, in_shape, saved_patches } => {
                let batch = x.shape[0];
                let [ic, h, w_in] = *in_shape;
                let filters = k.value.shape[0];
                let kh = k.value.shape[2];
                let patch = ic * kh * kh;
                let oh = conv_out(h, kh, *stride, *pad)?;
                let ow = conv_out(w_in, kh, *stride, *pad)?;
                let idx = im2col_indices(batch, ic, h, w_in, kh, *stride, *pad, oh, ow, x.len());
                // Zero slot at index x.len() absorbs padding reads.
                let zero = e.constant(&[E::R::ZERO]);
                let padded = e.concat(&[&x.data, &zero]);
                let patches = e.gather(&padded, &idx);
                let kt = transpose(e, &k.value.data, filters, patch);
                let rows = batch * oh * ow;
                let mut raw = e.matmul(&patches, &kt, rows, patch, filters)?;
                let bias2f = e.scale_public(&b.value.data, &[E::R::ONE.shl(e.cfg().f)]);
                let bcast: Vec<u32> = (0..rows * filters).map(|i| (i % filters) as u32).collect();
                raw = e.add(&raw, &e.gather(&bias2f, &bcast));
                let cfg = e.cfg();
                let y_rows = e.trunc(&raw, cfg.k + cfg.f, cfg.f, e.rounding())?;
                // [b, oh, ow, oc] -> [b, oc, oh, ow]
                let perm = nhwc_to_nchw(batch, oh, ow, filters);
                let y = e.gather(&y_rows, &perm);
                if train {
                    *saved_patches = Some((patches, idx, batch));
                }
                ShareTensor::new(y, vec![batch, filters, oh, ow])
            }
            Layer::Relu { saved_mask } => {
                let neg = secmath::ltz(e, &x.data)?;
                let mask = e.bit2a(&neg)?;
                let masked = e.mul(&mask, &x.data)?;
                let y = e.sub(&x.data, &masked);
                if train {
                    *saved_mask = Some(mask);
                }
                ShareTensor::new(y, x.shape.clone())
            }
            Layer::MaxPool { window, stride, saved } => {
                let batch = x.shape[0];
                let [c, h, w_in]: [usize; 3] = x.shape[1..]
                    .try_into()
                    .map_err(|_| Error::Shape(format!("maxpool input {:?}", x.shape)))?;
                let oh = pool_out(h, *window, *stride);
                let ow = pool_out(w_in, *window, *stride);
                let n_out = batch * c * oh * ow;
                // Candidate j of every window, gathered as one vector.
                let mut gather_idx = Vec::with_capacity(window.pow(2));
                for dy in 0..*window {
                    for dx in 0..*window {
                        let mut idx = Vec::with_capacity(n_out);
                        for bi in 0..batch {
                            for ci in 0..c {
                                for oy in 0..oh {
                                    for ox in 0..ow {
                                        let iy = oy * *stride + dy;
                                        let ix = ox * *stride + dx;
                                        idx.push(
                                            (((bi * c + ci) * h + iy) * w_in + ix) as u32,
                                        );
                                    }
                                }
                            }
                        }
                        gather_idx.push(idx);
                    }
                }
                let mut work: Vec<E::AVec> = gather_idx
                    .iter()
                    .map(|idx| e.gather(&x.data, idx))
                    .collect();
                let mut levels = Vec::new();
                while work.len() > 1 {
                    let pairs = work.len() / 2;
                    let odd = work.len() % 2 == 1;
                    let lefts: Vec<&E::AVec> = work.iter().take(2 * pairs).step_by(2).collect();
                    let rights: Vec<&E::AVec> =
                        work.iter().skip(1).take(2 * pairs).step_by(2).collect();
                    let l = e.concat(&lefts);
                    let r = e.concat(&rights);
                    let (max, sel) = secmath::max_pairwise(e, &l, &r)?;
                    let mut next = Vec::with_capacity(pairs + odd as usize);
                    for i in 0..pairs {
                        next.push(e.slice(&max, i * n_out, n_out));
                    }
                    if odd {
                        next.push(work.pop().unwrap());
                    }
                    levels.push((sel, pairs, odd));
                    work = next;
                }
                let y = work.pop().unwrap();
                if train {
                    *saved = Some(PoolContext {
                        levels,
                        gather_idx,
                        in_len: x.len(),
                        out_shape: vec![batch, c, oh, ow],
                    });
                }
                ShareTensor::new(y, vec![batch, c, oh, ow])
            }
            Layer::Dropout { rate, saved_mask } => {
                if !train || *rate == 0.0 {
                    return Ok(x.clone());
                }
                let keep = 1.0 - *rate;
                let mask = secmath::bernoulli(e, x.len(), keep)?;
                let kept = e.mul(&mask, &x.data)?;
                let y = scale_by_inverse(e, &kept, keep)?;
                *saved_mask = Some(mask);
                ShareTensor::new(y, x.shape.clone())
            }
            Layer::BatchNorm { gamma, beta, eps_raw, saved } => {
                let batch = x.shape[0];
                let c = x.shape[1];
                let spatial: usize = x.shape[2..].iter().product();
                let rows = batch * spatial;
                if rows < 2 {
                    return Err(Error::Shape("batchnorm needs batch >= 2".into()));
                }
                // Row-major statistics layout: [rows, c].
                let (to_rows, from_rows) = rows_major_indices(batch, c, spatial);
                let xf = e.gather(&x.data, &to_rows);
                let sums = sum_rows_rowmajor(e, &xf, rows, c);
                let mean = divide_by_count(e, &sums, rows)?;
                let mean_b = tile_features(e, &mean, c, rows);
                let xc = e.sub(&xf, &mean_b);
                // Per-feature variance, one rounding per feature.
                let sq = e.mul(&xc, &xc)?;
                let sqsum = sum_rows_rowmajor(e, &sq, rows, c);
                let var = divide_2f_by_count(e, &sqsum, rows)?;
                let var_eps = e.add_public(&var, &[*eps_raw]);
                let parts = secmath::invert_sqrt_parts(e, &var_eps)?;
                let inv_std = parts.out;
                let inv_b = tile_features(e, &inv_std, c, rows);
                let xhat = secmath::fixed_mul(e, &xc, &inv_b)?;
                let gamma_b = tile_features(e, &gamma.value.data, c, rows);
                let scaled = secmath::fixed_mul(e, &xhat, &gamma_b)?;
                let beta_b = tile_features(e, &beta.value.data, c, rows);
                let yf = e.add(&scaled, &beta_b);
                let y = e.gather(&yf, &from_rows);
                if train {
                    let cprime = secmath::invert_sqrt_quad_derivative(e, &parts.u)?;
                    *saved = Some(BnContext {
                        xc: xc.clone(),
                        xhat: xhat.clone(),
                        inv_std,
                        cprime,
                        vnorm: parts.v,
                        comp: parts.comp,
                        rows,
                        to_rows,
                        from_rows,
                    });
                }
                ShareTensor::new(y, x.shape.clone())
            }
            Layer::Flatten { in_shape } => {
                *in_shape = x.shape[1..].to_vec();
                let batch = x.shape[0];
                ShareTensor::new(x.data.clone(), vec![batch, x.len() / batch])
            }
        }
    }

    pub fn backward(&mut self, e: &mut E, grad: &ShareTensor<E>) -> Result<ShareTensor<E>> {
        match self {
            Layer::Dense { w, b, saved_x } => {
                let x = saved_x
                    .take()
                    .ok_or_else(|| Error::Protocol("dense backward before forward".into()))?;
                let batch = grad.shape[0];
                let units = grad.shape[1];
                let d_in = x.len() / batch;
                let cfg = e.cfg();
                // dW = grad^T x, summed over the batch; one rounding per entry.
                let gt = transpose(e, &grad.data, batch, units);
                let dw_raw = e.matmul(&gt, &x.data, units, batch, d_in)?;
                let dw = e.trunc(&dw_raw, cfg.k + cfg.f, cfg.f, e.rounding())?;
                w.grad = Some(ShareTensor::new(dw, w.value.shape.clone())?);
                // db = column sums of grad (already at precision f).
                let db = sum_rows_rowmajor(e, &grad.data, batch, units);
                b.grad = Some(ShareTensor::new(db, vec![units])?);
                // dx = grad W
                let dx_raw = e.matmul(&grad.data, &w.value.data, batch, units, d_in)?;
                let dx = e.trunc(&dx_raw, cfg.k + cfg.f, cfg.f, e.rounding())?;
                ShareTensor::new(dx, x.shape.clone())
            }
            Layer::Conv2d { k, b, in_shape, saved_patches, .. } => {
                let (patches, idx, batch) = saved_patches
                    .take()
                    .ok_or_else(|| Error::Protocol("conv backward before forward".into()))?;
                let filters = k.value.shape[0];
                let patch = k.value.shape[1] * k.value.shape[2] * k.value.shape[3];
                let rows = idx.len() / patch;
                let cfg = e.cfg();
                let [ic, h, w_in] = *in_shape;
                let (oh, ow) = {
                    let per = rows / batch;
                    // rows = batch * oh * ow with square outputs not implied:
                    // recover from the gather layout of the forward pass.
                    let _ = per;
                    (grad.shape[2], grad.shape[3])
                };
                // grad arrives as [b, oc, oh, ow]; flatten to [rows, oc].
                let perm = nchw_to_nhwc(batch, filters, oh, ow);
                let gmat = e.gather(&grad.data, &perm);
                // dK = gmat^T patches
                let gt = transpose(e, &gmat, rows, filters);
                let dk_raw = e.matmul(&gt, &patches, filters, rows, patch)?;
                let dk = e.trunc(&dk_raw, cfg.k + cfg.f, cfg.f, e.rounding())?;
                k.grad = Some(ShareTensor::new(dk, k.value.shape.clone())?);
                let db = sum_rows_rowmajor(e, &gmat, rows, filters);
                b.grad = Some(ShareTensor::new(db, vec![filters])?);
                // dx: scatter the raw 2f column gradients back through the
                // im2col map, then one rounding per input element.
                let dcols_raw = e.matmul(&gmat, &k.value.data, rows, filters, patch)?;
                let in_len = batch * ic * h * w_in;
                let mut dx_raw = e.constant(&vec![E::R::ZERO; in_len + 1]);
                e.scatter_add(&mut dx_raw, &idx, &dcols_raw);
                let dx_raw = e.slice(&dx_raw, 0, in_len);
                let dx = e.trunc(&dx_raw, cfg.k + cfg.f, cfg.f, e.rounding())?;
                ShareTensor::new(dx, vec![batch, ic, h, w_in])
            }
            Layer::Relu { saved_mask } => {
                let mask = saved_mask
                    .take()
                    .ok_or_else(|| Error::Protocol("relu backward before forward".into()))?;
                let masked = e.mul(&mask, &grad.data)?;
                let dx = e.sub(&grad.data, &masked);
                ShareTensor::new(dx, grad.shape.clone())
            }
            Layer::MaxPool { saved, .. } => {
                let ctx = saved
                    .take()
                    .ok_or_else(|| Error::Protocol("maxpool backward before forward".into()))?;
                let n_out: usize = ctx.out_shape.iter().product();
                // Walk the tree top-down, splitting the route at each level.
                let mut routes: Vec<E::AVec> = vec![grad.data.clone()];
                for (sel, pairs, odd) in ctx.levels.iter().rev() {
                    let tail = if *odd {
                        Some(routes.pop().unwrap())
                    } else {
                        None
                    };
                    let joined: Vec<&E::AVec> = routes.iter().collect();
                    let routed = e.concat(&joined);
                    let right = e.mul(&routed, sel)?;
                    let left = e.sub(&routed, &right);
                    let mut next = Vec::with_capacity(pairs * 2 + 1);
                    for i in 0..*pairs {
                        next.push(e.slice(&left, i * n_out, n_out));
                        next.push(e.slice(&right, i * n_out, n_out));
                    }
                    if let Some(t) = tail {
                        next.push(t);
                    }
                    routes = next;
                }
                let mut dx = e.constant(&vec![E::R::ZERO; ctx.in_len]);
                for (route, idx) in routes.iter().zip(ctx.gather_idx.iter()) {
                    e.scatter_add(&mut dx, idx, route);
                }
                ShareTensor::new(dx, infer_pool_input_shape(&ctx, grad)?)
            }
            Layer::Dropout { rate, saved_mask } => {
                if *rate == 0.0 {
                    return Ok(grad.clone());
                }
                let mask = saved_mask
                    .take()
                    .ok_or_else(|| Error::Protocol("dropout backward before forward".into()))?;
                let kept = e.mul(&mask, &grad.data)?;
                let dx = scale_by_inverse(e, &kept, 1.0 - *rate)?;
                ShareTensor::new(dx, grad.shape.clone())
            }
            Layer::BatchNorm { gamma, beta, saved, .. } => {
                let ctx = saved
                    .take()
                    .ok_or_else(|| Error::Protocol("batchnorm backward before forward".into()))?;
                let c = gamma.value.shape[0];
                let rows = ctx.rows;
                let gf = e.gather(&grad.data, &ctx.to_rows);
                // dbeta, dgamma.
                let dbeta = sum_rows_rowmajor(e, &gf, rows, c);
                let gx = e.mul(&gf, &ctx.xhat)?;
                let dgamma_raw = sum_rows_rowmajor(e, &gx, rows, c);
                let cfg = e.cfg();
                let dgamma = e.trunc(&dgamma_raw, cfg.k + cfg.f, cfg.f, e.rounding())?;
                beta.grad = Some(ShareTensor::new(dbeta, vec![c])?);
                gamma.grad = Some(ShareTensor::new(dgamma, vec![c])?);
                // dxhat = grad * gamma
                let gamma_b = tile_features(e, &gamma.value.data, c, rows);
                let dxhat = secmath::fixed_mul(e, &gf, &gamma_b)?;
                // dx = inv_std (dxhat - mean(dxhat))
                //      + 2 c'(u) v comp * xc * mean(dxhat * xc),
                // the variance path differentiated through the quadratic the
                // forward pass evaluated (an ideal -inv^3/2 there would
                // disagree with the computed function by several percent).
                let mean_dxhat = {
                    let s = sum_rows_rowmajor(e, &dxhat, rows, c);
                    divide_by_count(e, &s, rows)?
                };
                let prod = e.mul(&dxhat, &ctx.xc)?;
                let mean_prod = {
                    let s = sum_rows_rowmajor(e, &prod, rows, c);
                    divide_2f_by_count(e, &s, rows)?
                };
                let mean_dxhat_b = tile_features(e, &mean_dxhat, c, rows);
                let centered = e.sub(&dxhat, &mean_dxhat_b);
                let inv_b = tile_features(e, &ctx.inv_std, c, rows);
                let term1 = secmath::fixed_mul(e, &centered, &inv_b)?;
                // Grouped smallest-first so no intermediate leaves the
                // representable range even for tiny variances.
                let t = secmath::fixed_mul(e, &ctx.xc, &tile_features(e, &ctx.vnorm, c, rows))?;
                let t = secmath::fixed_mul(e, &t, &tile_features(e, &ctx.comp, c, rows))?;
                let t = secmath::fixed_mul(e, &t, &tile_features(e, &ctx.cprime, c, rows))?;
                let t = secmath::fixed_mul(e, &t, &tile_features(e, &mean_prod, c, rows))?;
                let term2 = e.scale_public(&t, &[E::R::from_u64(2)]);
                let dxf = e.add(&term1, &term2);
                let dx = e.gather(&dxf, &ctx.from_rows);
                ShareTensor::new(dx, grad.shape.clone())
            }
            Layer::Flatten { in_shape } => {
                let batch = grad.shape[0];
                let mut shape = vec![batch];
                shape.extend_from_slice(in_shape);
                ShareTensor::new(grad.data.clone(), shape)
            }
        }
    }

    /// Trainable parameters with their gradients, in a stable order.
    pub fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        match self {
            Layer::Dense { w, b, .. } => vec![w, b],
            Layer::Conv2d { k, b, .. } => vec![k, b],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            _ => Vec::new(),
        }
    }
}

fn infer_pool_input_shape<E: Engine>(
    ctx: &PoolContext<E>,
    grad: &ShareTensor<E>,
) -> Result<Vec<usize>> {
    // in_len = batch * c * h * w with batch and c shared with the output.
    let batch = ctx.out_shape[0];
    let c = ctx.out_shape[1];
    let spatial = ctx.in_len / (batch * c);
    // Pooling inputs are square throughout the model zoo here.
    let side = (spatial as f64).sqrt().round() as usize;
    if side * side != spatial {
        return Err(Error::Shape("non-square pool input".into()));
    }
    let _ = grad;
    Ok(vec![batch, c, side, side])
}

/// Transpose a row-major (rows x cols) share matrix (local data movement).
pub fn transpose<E: Engine>(e: &E, x: &E::AVec, rows: usize, cols: usize) -> E::AVec {
    let mut idx = Vec::with_capacity(rows * cols);
    for j in 0..cols {
        for i in 0..rows {
            idx.push((i * cols + j) as u32);
        }
    }
    e.gather(x, &idx)
}

/// Column sums of a row-major [rows, cols] matrix -> [cols].
pub fn sum_rows_rowmajor<E: Engine>(
    e: &E,
    x: &E::AVec,
    rows: usize,
    cols: usize,
) -> E::AVec {
    let mut acc = e.slice(x, 0, cols);
    for r in 1..rows {
        let row = e.slice(x, r * cols, cols);
        acc = e.add(&acc, &row);
    }
    acc
}

/// Tile a per-feature vector across rows of a row-major [rows, c] matrix.
fn tile_features<E: Engine>(e: &E, per_feature: &E::AVec, c: usize, rows: usize) -> E::AVec {
    let mut idx = Vec::with_capacity(c * rows);
    for _ in 0..rows {
        for ci in 0..c {
            idx.push(ci as u32);
        }
    }
    e.gather(per_feature, &idx)
}

/// Divide a precision-f sum by a count: exact shift for powers of two,
/// otherwise a fixed multiplication by the encoded reciprocal.
fn divide_by_count<E: Engine>(e: &mut E, x: &E::AVec, count: usize) -> Result<E::AVec> {
    let cfg = e.cfg();
    if count.is_power_of_two() {
        let shift = count.trailing_zeros();
        e.trunc(x, cfg.k + shift + 1, shift, e.rounding())
    } else {
        secmath::fixed_mul_public(e, x, secmath::encode_const(e, 1.0 / count as f64))
    }
}

/// Divide a 2f-precision sum by a count and rescale to f in one rounding.
fn divide_2f_by_count<E: Engine>(e: &mut E, x: &E::AVec, count: usize) -> Result<E::AVec> {
    let cfg = e.cfg();
    if count.is_power_of_two() {
        let shift = cfg.f + count.trailing_zeros();
        e.trunc(x, (cfg.k + cfg.f + 1).min(E::R::BITS - 9), shift, e.rounding())
    } else {
        let t = e.trunc(x, cfg.k + cfg.f, cfg.f, e.rounding())?;
        secmath::fixed_mul_public(e, &t, secmath::encode_const(e, 1.0 / count as f64))
    }
}

fn scale_by_inverse<E: Engine>(e: &mut E, x: &E::AVec, keep: f64) -> Result<E::AVec> {
    let inv = 1.0 / keep;
    if inv.fract() == 0.0 && (inv as u64).is_power_of_two() {
        Ok(e.scale_public(x, &[E::R::from_u64(inv as u64)]))
    } else {
        secmath::fixed_mul_public(e, x, secmath::encode_const(e, inv))
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col_indices(
    batch: usize,
    ic: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    zero_slot: usize,
) -> Vec<u32> {
    let mut idx = Vec::with_capacity(batch * oh * ow * ic * kernel * kernel);
    for b in 0..batch {
        for oy in 0..oh {
            for ox in 0..ow {
                for c in 0..ic {
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                idx.push(zero_slot as u32);
                            } else {
                                idx.push(
                                    (((b * ic + c) * h + iy as usize) * w + ix as usize)
                                        as u32,
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    idx
}

fn nhwc_to_nchw(batch: usize, oh: usize, ow: usize, c: usize) -> Vec<u32> {
    let mut idx = Vec::with_capacity(batch * c * oh * ow);
    for b in 0..batch {
        for ci in 0..c {
            for y in 0..oh {
                for x in 0..ow {
                    idx.push((((b * oh + y) * ow + x) * c + ci) as u32);
                }
            }
        }
    }
    idx
}

fn nchw_to_nhwc(batch: usize, c: usize, oh: usize, ow: usize) -> Vec<u32> {
    let mut idx = Vec::with_capacity(batch * c * oh * ow);
    for b in 0..batch {
        for y in 0..oh {
            for x in 0..ow {
                for ci in 0..c {
                    idx.push((((b * c + ci) * oh + y) * ow + x) as u32);
                }
            }
        }
    }
    idx
}

fn rows_major_indices(batch: usize, c: usize, spatial: usize) -> (Vec<u32>, Vec<u32>) {
    // x layout: [batch, c, spatial]; statistics layout: [batch * spatial, c].
    let mut to = Vec::with_capacity(batch * c * spatial);
    for b in 0..batch {
        for s in 0..spatial {
            for ci in 0..c {
                to.push(((b * c + ci) * spatial + s) as u32);
            }
        }
    }
    let mut from = vec![0u32; batch * c * spatial];
    for (pos, &orig) in to.iter().enumerate() {
        from[orig as usize] = pos as u32;
    }
    (to, from)
}
