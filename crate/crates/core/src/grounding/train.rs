use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backprop::{batch_nce, gradients, JointLoss};
use super::dataset::{check_unpaired, ClipDataset, NarratedClip};
use super::model::{AdaptInit, GroundingModel, Language};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundTrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    /// Weight λ of the AdaptLayer orthogonality penalty.
    pub ortho_weight: f64,
    pub freeze_word_embeddings: bool,
    pub validation_fraction: f64,
    /// Validation loss is evaluated every this many steps (and after the
    /// last step).
    pub eval_every: usize,
    pub seed: u64,
    pub hidden_dim: usize,
    pub joint_dim: usize,
    pub adapt_init: AdaptInit,
    pub normalize_outputs: bool,
    /// See [`GroundingModel::score_scale`].
    pub score_scale: f64,
}

impl Default for GroundTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 1e-3,
            steps: 2_000,
            ortho_weight: 1.0,
            freeze_word_embeddings: false,
            validation_fraction: 0.05,
            eval_every: 250,
            seed: 1,
            hidden_dim: 512,
            joint_dim: 256,
            adapt_init: AdaptInit::Identity,
            normalize_outputs: true,
            score_scale: 1.0,
        }
    }
}

impl GroundTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size", "must be at least 2"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if !(self.ortho_weight >= 0.0) {
            return Err(Error::invalid("ortho_weight", "must be nonnegative"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation_fraction", "must lie in [0, 1)"));
        }
        if !(self.score_scale > 0.0 && self.score_scale.is_finite()) {
            return Err(Error::invalid("score_scale", "must be positive and finite"));
        }
        Ok(())
    }

    /// Fresh model whose word tables start from the given embeddings.
    pub fn init_model(
        &self,
        emb_x: &EmbeddingMatrix,
        emb_y: &EmbeddingMatrix,
        feature_dim: usize,
    ) -> Result<GroundingModel> {
        let mut m = GroundingModel::new(
            emb_x,
            emb_y,
            self.hidden_dim,
            self.joint_dim,
            feature_dim,
            self.adapt_init,
            mix_seed(self.seed, 100),
        )?;
        m.normalize_outputs = self.normalize_outputs;
        m.score_scale = self.score_scale;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Parameters at the step with the lowest validation loss (the final
    /// parameters when no validation split is used).
    pub model: GroundingModel,
    pub trace: Vec<JointLoss>,
    pub validation: Vec<ValidationPoint>,
    pub selected_step: usize,
}

/// Adam with the usual defaults (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(indices: Vec<usize>, seed: u64) -> Self {
        let mut s = Self {
            order: indices,
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.cursor + size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + size].to_vec();
        self.cursor += size;
        batch
    }
}

fn split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_val = (n as f64 * fraction).floor() as usize;
    if fraction > 0.0 && n_val < 2 && n >= 6 {
        n_val = 2;
    }
    let val = idx.split_off(n - n_val);
    (idx, val)
}

fn validation_loss(
    model: &GroundingModel,
    lang: Language,
    clips: &[NarratedClip],
    val: &[usize],
    batch_size: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0;
    for chunk in val.chunks(batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let batch: Vec<&NarratedClip> = chunk.iter().map(|&i| &clips[i]).collect();
        total += batch_nce(model, lang, &batch)?;
        n += 1;
    }
    Ok(if n > 0 { total / n as f64 } else { 0.0 })
}

/// Trains with Adam on one X batch and one Y batch per step (each batch is
/// single-language, X before Y). A held-out fraction of each dataset scores
/// checkpoints; the lowest validation loss wins.
pub fn train(
    model: &GroundingModel,
    clips_x: &ClipDataset,
    clips_y: &ClipDataset,
    config: &GroundTrainConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    if clips_x.is_empty() || clips_y.is_empty() {
        return Err(Error::invalid("datasets", "both clip datasets must be nonempty"));
    }
    check_unpaired(clips_x, clips_y)?;
    let dv = model.dims().feature;
    for ds in [clips_x, clips_y] {
        if ds.feature_dim() != dv {
            return Err(Error::dims("clip feature width", dv, ds.feature_dim()));
        }
    }

    let usable = |ds: &ClipDataset| -> Vec<NarratedClip> {
        ds.clips()
            .iter()
            .filter(|c| c.caption.true_length > 0)
            .cloned()
            .collect()
    };
    let xs = usable(clips_x);
    let ys = usable(clips_y);
    let dropped = clips_x.len() + clips_y.len() - xs.len() - ys.len();
    if dropped > 0 {
        log::warn!("dropping {dropped} clip(s) with empty captions");
    }

    let mut model = model.clone();
    if config.steps == 0 {
        return Ok(TrainOutput {
            model,
            trace: Vec::new(),
            validation: Vec::new(),
            selected_step: 0,
        });
    }

    let (train_x, val_x) = split(xs.len(), config.validation_fraction, mix_seed(config.seed, 1));
    let (train_y, val_y) = split(ys.len(), config.validation_fraction, mix_seed(config.seed, 2));
    if train_x.len() < 2 || train_y.len() < 2 {
        return Err(Error::invalid("datasets", "each language needs at least 2 training clips"));
    }
    let mut sampler_x = BatchSampler::new(train_x, mix_seed(config.seed, 3));
    let mut sampler_y = BatchSampler::new(train_y, mix_seed(config.seed, 4));
    let use_validation = !val_x.is_empty() || !val_y.is_empty();

    let sizes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
    let mut adam = Adam::new(config.learning_rate, &sizes);
    let mut trace = Vec::with_capacity(config.steps);
    let mut validation = Vec::new();
    let mut best: Option<(f64, usize, GroundingModel)> = None;
    let eval_every = config.eval_every.max(1);

    for step in 1..=config.steps {
        let bx: Vec<&NarratedClip> = sampler_x.next(config.batch_size).into_iter().map(|i| &xs[i]).collect();
        let by: Vec<&NarratedClip> = sampler_y.next(config.batch_size).into_iter().map(|i| &ys[i]).collect();
        let (loss, grads) = gradients(&model, &bx, &by, config.ortho_weight, config.freeze_word_embeddings)?;
        trace.push(loss);
        let g = grads.slices();
        adam.step(&mut model.param_slices_mut(), &g);

        if use_validation && (step % eval_every == 0 || step == config.steps) {
            let loss = validation_loss(&model, Language::X, &xs, &val_x, config.batch_size)?
                + validation_loss(&model, Language::Y, &ys, &val_y, config.batch_size)?;
            validation.push(ValidationPoint { step, loss });
            log::debug!("step {step}: train {:.4} validation {loss:.4}", trace[step - 1].total);
            if best.as_ref().is_none_or(|b| loss < b.0) {
                best = Some((loss, step, model.clone()));
            }
        }
    }

    let (model, selected_step) = match best {
        Some((_, step, m)) => (m, step),
        None => (model, config.steps),
    };
    Ok(TrainOutput {
        model,
        trace,
        validation,
        selected_step,
    })
}
