use nalgebra::DMatrix;

use super::dataset::NarratedClip;
use super::model::{GroundingModel, Language};
use crate::corpus::EncodedSentence;
use crate::error::{Error, Result};
use crate::linalg::{normalize_rows, top_k_desc};

fn single_word(id: usize, pad: usize) -> EncodedSentence {
    EncodedSentence {
        ids: vec![id, pad],
        true_length: 1,
    }
}

/// Joint-space encodings of every vocabulary word of one language, each
/// encoded as a one-word sentence. Rows are unit-normalized.
pub fn encode_vocabulary(model: &GroundingModel, lang: Language) -> Result<DMatrix<f64>> {
    let vocab = model.vocab(lang);
    let sentences: Vec<EncodedSentence> = (0..vocab.len()).map(|id| single_word(id, vocab.pad_id())).collect();
    let refs: Vec<&EncodedSentence> = sentences.iter().collect();
    let d = model.dims().joint;
    let mut out = DMatrix::zeros(vocab.len(), d);
    const CHUNK: usize = 1024;
    for (c, chunk) in refs.chunks(CHUNK).enumerate() {
        let enc = model.encode_texts(lang, chunk)?;
        out.rows_mut(c * CHUNK, chunk.len()).copy_from(&enc);
    }
    normalize_rows(&mut out);
    Ok(out)
}

/// Precomputed Y-word encodings for repeated word translation queries.
pub struct TranslationIndex<'m> {
    model: &'m GroundingModel,
    targets: DMatrix<f64>,
}

impl<'m> TranslationIndex<'m> {
    pub fn new(model: &'m GroundingModel) -> Result<Self> {
        Ok(Self {
            model,
            targets: encode_vocabulary(model, Language::Y)?,
        })
    }

    /// Cosine scores of `word_x` against every Y word.
    pub fn scores(&self, word_x: &str) -> Result<Vec<f64>> {
        let id = self
            .model
            .vocab_x
            .id(word_x)
            .ok_or_else(|| Error::OutOfVocabulary(word_x.to_owned()))?;
        let q = self
            .model
            .encode_texts(Language::X, &[&single_word(id, self.model.vocab_x.pad_id())])?;
        let mut q = q.row(0).into_owned();
        let n = q.norm();
        if n > 0.0 {
            q /= n;
        }
        Ok((&self.targets * q.transpose()).iter().copied().collect())
    }

    pub fn translate(&self, word_x: &str, k: usize) -> Result<Vec<(String, f64)>> {
        let scores = self.scores(word_x)?;
        Ok(top_k_desc(&scores, k)
            .into_iter()
            .map(|i| (self.model.vocab_y.token(i).to_owned(), scores[i]))
            .collect())
    }
}

/// Ranks Y words by cosine between `g(y)` and `f(word_x)` in the joint
/// space; ties go to the better Y vocabulary rank. `k` is clamped to the Y
/// vocabulary size.
pub fn translate_word(model: &GroundingModel, word_x: &str, k: usize) -> Result<Vec<(String, f64)>> {
    if !model.vocab_x.contains(word_x) {
        return Err(Error::OutOfVocabulary(word_x.to_owned()));
    }
    TranslationIndex::new(model)?.translate(word_x, k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageResult {
    /// Index into the clip list of the retrieved clip.
    pub clip: usize,
    pub clip_score: f64,
    /// Candidate indices with their scores, best first.
    pub ranked: Vec<(usize, f64)>,
}

/// Retrieves the clip closest to `f(query)`, then ranks Y candidates by
/// their similarity to that clip's embedding.
pub fn two_stage_translate(
    model: &GroundingModel,
    query_x: &EncodedSentence,
    clips_y: &[NarratedClip],
    candidates_y: &[EncodedSentence],
    k: usize,
) -> Result<TwoStageResult> {
    if clips_y.is_empty() {
        return Err(Error::invalid("clips_y", "must be nonempty"));
    }
    if candidates_y.is_empty() {
        return Err(Error::invalid("candidates_y", "must be nonempty"));
    }
    let q = model.encode_texts(Language::X, &[query_x])?;
    let feats: Vec<&[f64]> = clips_y.iter().map(|c| c.features.as_slice()).collect();
    let clip_embs = model.encode_feature_batch(&feats)?;
    let clip_scores: Vec<f64> = (&clip_embs * q.transpose()).iter().copied().collect();
    let clip = top_k_desc(&clip_scores, 1)[0];

    let cands: Vec<&EncodedSentence> = candidates_y.iter().collect();
    let cand_embs = model.encode_texts(Language::Y, &cands)?;
    let scores: Vec<f64> = (&cand_embs * clip_embs.row(clip).transpose()).iter().copied().collect();
    let ranked = top_k_desc(&scores, k).into_iter().map(|i| (i, scores[i])).collect();
    Ok(TwoStageResult {
        clip,
        clip_score: clip_scores[clip],
        ranked,
    })
}
