//! The training loop: per-epoch Fisher-Yates reshuffle, batched forward and
//! backward passes, optimizer steps, and test-set evaluation by opened
//! argmax.

use super::init::{build_model, shuffle_epoch, InitMode};
use super::layers::Layer;
use super::loss::{onehot_raw, softmax_xent_grad};
use super::models::ModelKind;
use super::optim::{Optimizer, OptimizerKind};
use super::tensor::ShareTensor;
use crate::data::Split;
use crate::engine::Engine;
use crate::fixed::fx_decode_raw;
use crate::ring::Ring;
use crate::transport::PartyId;
use crate::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[derive(Clone, Debug)]
pub struct TrainSettings {
    pub model: ModelKind,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: bool,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub test_error: f64,
}

/// Encode a batch of images/labels into raw ring vectors at precision f.
fn encode_batch<R: Ring>(
    split: &Split,
    idx: &[u32],
    classes: usize,
    f: u32,
) -> (Vec<R>, Vec<R>) {
    let size = split.sample_size();
    let mut images = Vec::with_capacity(idx.len() * size);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        let i = i as usize;
        for &px in &split.images[i * size..(i + 1) * size] {
            images.push(R::from_i64((px as f64 * (2.0f64).powi(f as i32)).round() as i64));
        }
        labels.push(split.labels[i]);
    }
    let onehot = onehot_raw::<R>(&labels, classes, f);
    (images, onehot)
}

pub struct Trainer<E: Engine> {
    pub layers: Vec<Layer<E>>,
    pub optimizer: Optimizer<E>,
    pub settings: TrainSettings,
    shuffle_rng: ChaCha12Rng,
    input_shape: [usize; 3],
    classes: usize,
}

impl<E: Engine> Trainer<E> {
    /// Build a model with deterministic public initialization derived from
    /// the seed, so every party (and the emulator) starts identically.
    pub fn new(e: &mut E, settings: TrainSettings) -> Result<Self> {
        let layers = build_model(
            e,
            settings.model,
            settings.dropout,
            &InitMode::SeededPublic(settings.seed),
        )?;
        let optimizer = Optimizer::new(settings.optimizer, settings.lr, settings.batch_size)?;
        Ok(Trainer {
            shuffle_rng: ChaCha12Rng::seed_from_u64(settings.seed.wrapping_add(0x5u64 << 32)),
            input_shape: settings.model.input_shape(),
            classes: settings.model.classes(),
            layers,
            optimizer,
            settings,
        })
    }

    pub fn forward(
        &mut self,
        e: &mut E,
        x: ShareTensor<E>,
        train: bool,
    ) -> Result<ShareTensor<E>> {
        let mut cur = x;
        for layer in self.layers.iter_mut() {
            cur = layer.forward(e, &cur, train)?;
        }
        Ok(cur)
    }

    pub fn backward(&mut self, e: &mut E, grad: ShareTensor<E>) -> Result<()> {
        let mut cur = grad;
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(e, &cur)?;
        }
        Ok(())
    }

    /// One optimization step over an input-shared batch. Returns the opened
    /// mean per-sample loss.
    pub fn train_batch(
        &mut self,
        e: &mut E,
        images: &ShareTensor<E>,
        onehot: &E::AVec,
    ) -> Result<f64> {
        let batch = images.shape[0];
        let logits = self.forward(e, images.clone(), true)?;
        let (grad, loss_sum) =
            softmax_xent_grad(e, &logits.data, onehot, batch, self.classes)?;
        let grad_t = ShareTensor::new(grad, vec![batch, self.classes])?;
        self.backward(e, grad_t)?;
        self.optimizer.step(e, &mut self.layers)?;
        let opened = e.open(&loss_sum)?;
        Ok(fx_decode_raw(opened[0], e.cfg()) / batch as f64)
    }

    /// Misclassification rate over a split, evaluated in inference mode
    /// with opened logits.
    pub fn evaluate(
        &mut self,
        e: &mut E,
        split: &Split,
        owner: PartyId,
        have_data: bool,
        batch_size: usize,
    ) -> Result<f64> {
        let n = split.len();
        let mut wrong = 0usize;
        let mut done = 0usize;
        while done < n {
            let take = batch_size.min(n - done);
            let idx: Vec<u32> = (done..done + take).map(|i| i as u32).collect();
            let sample = split.sample_size();
            let imgs = if have_data {
                Some(encode_batch::<E::R>(split, &idx, self.classes, e.cfg().f).0)
            } else {
                None
            };
            let x = e.input(owner, imgs.as_deref(), take * sample)?;
            let xt = ShareTensor::new(
                x,
                vec![take, self.input_shape[0], self.input_shape[1], self.input_shape[2]],
            )?;
            let logits = self.forward(e, xt, false)?;
            let opened = e.open(&logits.data)?;
            for (row, &label) in opened.chunks(self.classes).zip(&split.labels[done..done + take])
            {
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by_key(|(_, &v)| v.to_i128_signed())
                    .map(|(j, _)| j)
                    .unwrap();
                if pred != label as usize {
                    wrong += 1;
                }
            }
            done += take;
        }
        Ok(wrong as f64 / n as f64)
    }

    /// Full training run. `have_data` marks the party that feeds plaintext
    /// batches (always true for the emulator).
    pub fn run(
        &mut self,
        e: &mut E,
        train: &Split,
        test: &Split,
        owner: PartyId,
        have_data: bool,
        mut on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<Vec<EpochMetrics>> {
        let n = train.len();
        let bs = self.settings.batch_size;
        let mut metrics = Vec::new();
        for epoch in 1..=self.settings.epochs {
            let perm = shuffle_epoch(&mut self.shuffle_rng, n);
            let mut loss_acc = 0.0;
            let mut batches = 0usize;
            for chunk in perm.chunks_exact(bs) {
                let (imgs, hot) = if have_data {
                    let (i, h) = encode_batch::<E::R>(train, chunk, self.classes, e.cfg().f);
                    (Some(i), Some(h))
                } else {
                    (None, None)
                };
                let sample = train.sample_size();
                let x = e.input(owner, imgs.as_deref(), bs * sample)?;
                let y = e.input(owner, hot.as_deref(), bs * self.classes)?;
                let xt = ShareTensor::new(
                    x,
                    vec![bs, self.input_shape[0], self.input_shape[1], self.input_shape[2]],
                )?;
                loss_acc += self.train_batch(e, &xt, &y)?;
                batches += 1;
            }
            let test_error = self.evaluate(e, test, owner, have_data, bs)?;
            let m = EpochMetrics {
                epoch,
                loss: loss_acc / batches.max(1) as f64,
                test_error,
            };
            on_epoch(&m);
            metrics.push(m);
        }
        Ok(metrics)
    }
}
