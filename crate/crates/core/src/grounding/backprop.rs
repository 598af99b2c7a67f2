//! Exact reverse-mode gradients of the joint objective for the fixed
//! encoder architecture.

use nalgebra::{DMatrix, DVector};

use super::dataset::NarratedClip;
use super::loss::{nce_with_grad, ortho_penalty, ortho_penalty_grad};
use super::model::{FeatureCache, GroundingModel, Language, TextCache};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointLoss {
    pub nce_x: f64,
    pub nce_y: f64,
    pub penalty: f64,
    pub total: f64,
}

/// Gradients laid out like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub word_x: DMatrix<f64>,
    pub word_y: DMatrix<f64>,
    pub adapt: DMatrix<f64>,
    pub ff_w: DMatrix<f64>,
    pub ff_b: DVector<f64>,
    pub out_w: DMatrix<f64>,
    pub out_b: DVector<f64>,
    pub feat_w: DMatrix<f64>,
    pub feat_b: DVector<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &GroundingModel) -> Self {
        let z = |m: &DMatrix<f64>| DMatrix::zeros(m.nrows(), m.ncols());
        Self {
            word_x: z(&model.word_x),
            word_y: z(&model.word_y),
            adapt: z(&model.adapt),
            ff_w: z(&model.ff_w),
            ff_b: DVector::zeros(model.ff_b.len()),
            out_w: z(&model.out_w),
            out_b: DVector::zeros(model.out_b.len()),
            feat_w: z(&model.feat_w),
            feat_b: DVector::zeros(model.feat_b.len()),
        }
    }

    pub(crate) fn slices(&self) -> [&[f64]; 9] {
        [
            self.word_x.as_slice(),
            self.word_y.as_slice(),
            self.adapt.as_slice(),
            self.ff_w.as_slice(),
            self.ff_b.as_slice(),
            self.out_w.as_slice(),
            self.out_b.as_slice(),
            self.feat_w.as_slice(),
            self.feat_b.as_slice(),
        ]
    }
}

fn check_batch(batch: &[&NarratedClip]) -> Result<()> {
    if batch.len() < 2 {
        return Err(Error::invalid("batch", "needs at least 2 clips for in-batch negatives"));
    }
    Ok(())
}

/// Mean NCE of one single-language batch.
pub fn batch_nce(model: &GroundingModel, lang: Language, batch: &[&NarratedClip]) -> Result<f64> {
    check_batch(batch)?;
    let captions: Vec<_> = batch.iter().map(|c| &c.caption).collect();
    let feats: Vec<&[f64]> = batch.iter().map(|c| c.features.as_slice()).collect();
    let t = model.encode_texts(lang, &captions)?;
    let c = model.encode_feature_batch(&feats)?;
    Ok(nce_with_grad(&(t * c.transpose() * model.score_scale), false)?.0)
}

/// `nce(X batch) + nce(Y batch) + λ·‖WWᵀ − I‖²_F`.
pub fn joint_loss(
    model: &GroundingModel,
    batch_x: &[&NarratedClip],
    batch_y: &[&NarratedClip],
    ortho_weight: f64,
) -> Result<JointLoss> {
    let nce_x = batch_nce(model, Language::X, batch_x)?;
    let nce_y = batch_nce(model, Language::Y, batch_y)?;
    let penalty = ortho_penalty(&model.adapt);
    Ok(JointLoss {
        nce_x,
        nce_y,
        penalty,
        total: nce_x + nce_y + ortho_weight * penalty,
    })
}

/// Loss and exact gradients of [`joint_loss`]. Max-pooling routes its
/// gradient to the first maximal position. With `freeze_words` the word
/// tables receive exactly zero gradient.
pub fn gradients(
    model: &GroundingModel,
    batch_x: &[&NarratedClip],
    batch_y: &[&NarratedClip],
    ortho_weight: f64,
    freeze_words: bool,
) -> Result<(JointLoss, Gradients)> {
    check_batch(batch_x)?;
    check_batch(batch_y)?;
    let mut grads = Gradients::zeros_like(model);
    let nce_x = language_grad(model, Language::X, batch_x, freeze_words, &mut grads)?;
    let nce_y = language_grad(model, Language::Y, batch_y, freeze_words, &mut grads)?;
    let penalty = ortho_penalty(&model.adapt);
    if ortho_weight != 0.0 {
        grads.adapt += ortho_penalty_grad(&model.adapt) * ortho_weight;
    }
    Ok((
        JointLoss {
            nce_x,
            nce_y,
            penalty,
            total: nce_x + nce_y + ortho_weight * penalty,
        },
        grads,
    ))
}

fn language_grad(
    model: &GroundingModel,
    lang: Language,
    batch: &[&NarratedClip],
    freeze_words: bool,
    grads: &mut Gradients,
) -> Result<f64> {
    let captions: Vec<_> = batch.iter().map(|c| &c.caption).collect();
    let feats: Vec<&[f64]> = batch.iter().map(|c| c.features.as_slice()).collect();
    let text = model.forward_text(lang, &captions)?;
    let clip = model.forward_features(&feats)?;
    let scores = &text.emb * clip.emb.transpose() * model.score_scale;
    let (loss, d_scores) = nce_with_grad(&scores, true)?;
    let d_scores = d_scores.expect("gradient requested") * model.score_scale;

    let d_text = &d_scores * &clip.emb;
    let d_clip = d_scores.transpose() * &text.emb;
    backward_text(model, &text, &d_text, freeze_words, grads);
    backward_features(model, &clip, &d_clip, grads);
    Ok(loss)
}

/// Backpropagates through row-wise L2 normalization.
fn unnormalize_grad(model: &GroundingModel, emb: &DMatrix<f64>, norms: &[f64], d_emb: &DMatrix<f64>) -> DMatrix<f64> {
    if !model.normalize_outputs {
        return d_emb.clone();
    }
    let mut d_out = d_emb.clone();
    for (i, mut row) in d_out.row_iter_mut().enumerate() {
        let y = emb.row(i);
        let proj = y.dot(&row);
        for (r, yv) in row.iter_mut().zip(y.iter()) {
            *r = (*r - proj * yv) / norms[i];
        }
    }
    d_out
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

fn backward_text(
    model: &GroundingModel,
    cache: &TextCache,
    d_emb: &DMatrix<f64>,
    freeze_words: bool,
    grads: &mut Gradients,
) {
    let d_out = unnormalize_grad(model, &cache.emb, &cache.norms, d_emb);
    grads.out_w += d_out.transpose() * &cache.pooled;
    grads.out_b += column_sums(&d_out);
    let d_pooled = &d_out * &model.out_w;

    let hidden = model.ff_w.nrows();
    let mut d_pre = DMatrix::zeros(cache.pre.nrows(), hidden);
    for s in 0..d_pooled.nrows() {
        for j in 0..hidden {
            let t = cache.argmax[s * hidden + j];
            if cache.pre[(t, j)] > 0.0 {
                d_pre[(t, j)] += d_pooled[(s, j)];
            }
        }
    }
    grads.ff_w += d_pre.transpose() * &cache.embedded;
    grads.ff_b += column_sums(&d_pre);
    let d_embedded = &d_pre * &model.ff_w;

    let d_raw = match cache.lang {
        Language::X => d_embedded,
        Language::Y => {
            grads.adapt += d_embedded.transpose() * &cache.raw;
            &d_embedded * &model.adapt
        }
    };
    if freeze_words {
        return;
    }
    let table = match cache.lang {
        Language::X => &mut grads.word_x,
        Language::Y => &mut grads.word_y,
    };
    for (t, &r) in cache.rows.iter().enumerate() {
        let mut row = table.row_mut(r);
        row += d_raw.row(t);
    }
}

fn backward_features(model: &GroundingModel, cache: &FeatureCache, d_emb: &DMatrix<f64>, grads: &mut Gradients) {
    let d_out = unnormalize_grad(model, &cache.emb, &cache.norms, d_emb);
    grads.feat_w += d_out.transpose() * &cache.input;
    grads.feat_b += column_sums(&d_out);
}
