use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::Model;
use super::tensor::Mat;
use crate::artic::FeatureMatrix;
use crate::{Error, Result, Scalar};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

/// One training utterance: normalized features and its phone targets
/// (inventory indices, no sos / eos).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample<S> {
    pub id: String,
    pub features: Mat<S>,
    pub phones: Vec<usize>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stochastic parts of one utterance at one step.
pub fn utterance_seed(seed: u64, step: u64, id: &str) -> u64 {
    // FNV-1a over the id
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(splitmix(splitmix(seed) ^ step) ^ h)
}

/// Adam optimizer state around a model.
#[derive(Debug, Clone)]
pub struct Trainer<S: Scalar> {
    pub model: Model<S>,
    matrix: FeatureMatrix,
    first: Vec<Mat<S>>,
    second: Vec<Mat<S>>,
    step: u64,
    seed: u64,
}

impl<S: Scalar> Trainer<S> {
    /// `matrix` is the feature matrix of the training inventory; the eos row
    /// and column are added here when missing.
    pub fn new(model: Model<S>, matrix: &FeatureMatrix, seed: u64) -> Result<Self> {
        let matrix = matrix.with_eos();
        if model.config.tasks.has_features() {
            model.check_matrix(&matrix)?;
        }
        let zeros: Vec<Mat<S>> = model.params.tensors().iter().map(|t| Mat::zeros(t.rows, t.cols)).collect();
        Ok(Self {
            model,
            matrix,
            first: zeros.clone(),
            second: zeros,
            step: 0,
            seed,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &FeatureMatrix {
        &self.matrix
    }

    /// Mean training-mode loss and mean gradient over `batch` for step
    /// `step`. Per-utterance work runs in parallel; results are reduced in
    /// sorted id order so the outcome does not depend on batch order or
    /// thread count.
    pub fn batch_gradients(&self, batch: &[TrainExample<S>], step: u64) -> Result<(S, Vec<Mat<S>>)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty training batch".into()));
        }
        let mut results: Vec<(&str, S, Vec<Mat<S>>)> = batch
            .par_iter()
            .map(|ex| {
                let mut rng = ChaCha8Rng::seed_from_u64(utterance_seed(self.seed, step, &ex.id));
                let (out, grads) =
                    self.model
                        .loss_and_grads(&ex.features, &ex.phones, &self.matrix, Some(&mut rng))?;
                Ok((ex.id.as_str(), out.loss, grads))
            })
            .collect::<Result<_>>()?;
        results.sort_by(|a, b| a.0.cmp(b.0));
        let scale = S::of(1.0 / batch.len() as f64);
        let mut iter = results.into_iter();
        let (_, mut loss, mut total) = iter.next().expect("non-empty");
        for (_, l, grads) in iter {
            loss += l;
            for (t, g) in total.iter_mut().zip(&grads) {
                t.add_assign(g);
            }
        }
        for t in &mut total {
            t.scale_assign(scale);
        }
        Ok((loss * scale, total))
    }

    /// One optimizer update; returns the mean batch loss before the update.
    pub fn train_step(&mut self, batch: &[TrainExample<S>]) -> Result<S> {
        let (loss, mut grads) = self.batch_gradients(batch, self.step)?;
        if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
            return Err(Error::Numeric(format!(
                "gradient of `{}` is not finite",
                self.model.params.name(i)
            )));
        }
        let cfg = &self.model.config;
        let norm = grads.iter().map(|g| g.sum_squares().as_f64()).sum::<f64>().sqrt();
        if norm > cfg.grad_clip && norm > 0.0 {
            let k = S::of(cfg.grad_clip / norm);
            grads.iter_mut().for_each(|g| g.scale_assign(k));
        }
        self.step += 1;
        let t = self.step as i32;
        let lr = cfg.learning_rate * (1.0 - BETA2.powi(t)).sqrt() / (1.0 - BETA1.powi(t));
        let (lr, l2) = (S::of(lr), S::of(cfg.l2_decay));
        let (b1, b2, eps) = (S::of(BETA1), S::of(BETA2), S::of(ADAM_EPSILON));
        let one = S::one();
        for (((p, g), m), v) in self
            .model
            .params
            .tensors_mut()
            .iter_mut()
            .zip(&grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((w, &gw), mw), vw) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
                let gw = gw + l2 * *w;
                *mw = b1 * *mw + (one - b1) * gw;
                *vw = b2 * *vw + (one - b2) * gw * gw;
                *w -= lr * *mw / (vw.sqrt() + eps);
            }
        }
        self.model.params.check_finite()?;
        Ok(loss)
    }

    /// Mean inference-mode loss (no dropout, no scheduled sampling).
    pub fn evaluate_loss(&self, batch: &[TrainExample<S>]) -> Result<S> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        let mut losses: Vec<(&str, S)> = batch
            .par_iter()
            .map(|ex| {
                let out = self.model.forward(&ex.features, &ex.phones, &self.matrix, None)?;
                Ok((ex.id.as_str(), out.loss))
            })
            .collect::<Result<_>>()?;
        losses.sort_by(|a, b| a.0.cmp(b.0));
        let total: S = losses.iter().map(|x| x.1).sum();
        Ok(total / S::of(batch.len() as f64))
    }
}
