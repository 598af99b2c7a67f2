use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{TensorReader, TensorWriter};
use crate::corpus::{EncodedSentence, Vocabulary};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::random_orthogonal;

const CHECKPOINT_KIND: &str = "grounding-model";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Language {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Word embedding width `d_w`.
    pub word: usize,
    /// Position-wise feed-forward width `d_i`.
    pub hidden: usize,
    /// Joint space width `d`.
    pub joint: usize,
    /// Clip feature width `D_v`.
    pub feature: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdaptInit {
    #[default]
    Identity,
    /// Identity with the first coordinate negated (determinant −1).
    Reflection,
    RandomOrthogonal,
}

/// Parameters of the two text encoders (shared trunk plus the AdaptLayer on
/// the Y side) and the clip feature head.
///
/// Word tables hold one row per vocabulary token plus a trailing UNK row.
/// Matrices act on row vectors from the right through their transpose,
/// i.e. a layer `(w, b)` maps `v` to `v·wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingModel {
    pub vocab_x: Vocabulary,
    pub vocab_y: Vocabulary,
    pub word_x: DMatrix<f64>,
    pub word_y: DMatrix<f64>,
    pub adapt: DMatrix<f64>,
    pub ff_w: DMatrix<f64>,
    pub ff_b: DVector<f64>,
    pub out_w: DMatrix<f64>,
    pub out_b: DVector<f64>,
    pub feat_w: DMatrix<f64>,
    pub feat_b: DVector<f64>,
    /// L2-normalize encoder outputs (dot product then equals cosine).
    pub normalize_outputs: bool,
    /// Multiplier applied to text-clip dot products inside the NCE loss
    /// (an inverse temperature). Inference rankings do not depend on it.
    pub score_scale: f64,
}

fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

fn word_table(emb: &EmbeddingMatrix) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(emb.len() + 1, emb.dim());
    for i in 0..emb.len() {
        for (j, &x) in emb.row(i).iter().enumerate() {
            m[(i, j)] = x;
        }
    }
    m
}

impl GroundingModel {
    /// Initializes word tables from pretrained embeddings (UNK rows zero)
    /// and the dense layers with Glorot-uniform weights and zero biases.
    pub fn new(
        emb_x: &EmbeddingMatrix,
        emb_y: &EmbeddingMatrix,
        hidden: usize,
        joint: usize,
        feature: usize,
        adapt_init: AdaptInit,
        seed: u64,
    ) -> Result<Self> {
        if emb_x.dim() != emb_y.dim() {
            return Err(Error::dims("word embedding width of Y", emb_x.dim(), emb_y.dim()));
        }
        if hidden == 0 || joint == 0 || feature == 0 {
            return Err(Error::invalid("dims", "all layer widths must be positive"));
        }
        let dw = emb_x.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adapt = match adapt_init {
            AdaptInit::Identity => DMatrix::identity(dw, dw),
            AdaptInit::Reflection => {
                let mut m = DMatrix::identity(dw, dw);
                m[(0, 0)] = -1.0;
                m
            }
            AdaptInit::RandomOrthogonal => random_orthogonal(dw, &mut rng),
        };
        Ok(Self {
            vocab_x: emb_x.vocab().clone(),
            vocab_y: emb_y.vocab().clone(),
            word_x: word_table(emb_x),
            word_y: word_table(emb_y),
            adapt,
            ff_w: glorot(hidden, dw, &mut rng),
            ff_b: DVector::zeros(hidden),
            out_w: glorot(joint, hidden, &mut rng),
            out_b: DVector::zeros(joint),
            feat_w: glorot(joint, feature, &mut rng),
            feat_b: DVector::zeros(joint),
            normalize_outputs: true,
            score_scale: 1.0,
        })
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            word: self.word_x.ncols(),
            hidden: self.ff_w.nrows(),
            joint: self.out_w.nrows(),
            feature: self.feat_w.ncols(),
        }
    }

    pub fn vocab(&self, lang: Language) -> &Vocabulary {
        match lang {
            Language::X => &self.vocab_x,
            Language::Y => &self.vocab_y,
        }
    }

    fn table(&self, lang: Language) -> &DMatrix<f64> {
        match lang {
            Language::X => &self.word_x,
            Language::Y => &self.word_y,
        }
    }

    /// Current word vectors of one language (UNK row dropped).
    pub fn embeddings(&self, lang: Language) -> EmbeddingMatrix {
        let table = self.table(lang);
        let vocab = self.vocab(lang).clone();
        let rows = vocab.len();
        EmbeddingMatrix::from_dmatrix(vocab, &table.rows(0, rows).into_owned())
            .expect("word table rows match vocabulary")
    }

    /// Every parameter is finite and the AdaptLayer is square.
    pub fn is_valid(&self) -> bool {
        let finite = |m: &[f64]| m.iter().all(|x| x.is_finite());
        self.adapt.is_square()
            && self.param_slices().iter().all(|s| finite(s))
    }

    pub(crate) fn param_slices(&self) -> [&[f64]; 9] {
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

    pub(crate) fn param_slices_mut(&mut self) -> [&mut [f64]; 9] {
        [
            self.word_x.as_mut_slice(),
            self.word_y.as_mut_slice(),
            self.adapt.as_mut_slice(),
            self.ff_w.as_mut_slice(),
            self.ff_b.as_mut_slice(),
            self.out_w.as_mut_slice(),
            self.out_b.as_mut_slice(),
            self.feat_w.as_mut_slice(),
            self.feat_b.as_mut_slice(),
        ]
    }

    /// Encodes a batch of sentences of one language; returns `B × d`.
    pub fn encode_texts(&self, lang: Language, sentences: &[&EncodedSentence]) -> Result<DMatrix<f64>> {
        Ok(self.forward_text(lang, sentences)?.emb)
    }

    /// Encodes a batch of feature vectors; returns `B × d`.
    pub fn encode_feature_batch(&self, features: &[&[f64]]) -> Result<DMatrix<f64>> {
        Ok(self.forward_features(features)?.emb)
    }

    pub(crate) fn forward_text(&self, lang: Language, sentences: &[&EncodedSentence]) -> Result<TextCache> {
        let vocab = self.vocab(lang);
        let table = self.table(lang);
        let dw = table.ncols();
        let hidden = self.ff_w.nrows();

        let mut rows = Vec::new();
        let mut offsets = Vec::with_capacity(sentences.len() + 1);
        for s in sentences {
            if s.true_length == 0 {
                return Err(Error::EmptySentence);
            }
            offsets.push(rows.len());
            for &id in s.tokens() {
                let r = if id < vocab.len() {
                    id
                } else if id == vocab.unk_id() {
                    vocab.len()
                } else {
                    return Err(Error::invalid(
                        "sentence",
                        format!("id {id} inside the true length is not a word or UNK"),
                    ));
                };
                rows.push(r);
            }
        }
        offsets.push(rows.len());

        let raw = DMatrix::from_fn(rows.len(), dw, |t, c| table[(rows[t], c)]);
        let embedded = match lang {
            Language::X => raw.clone(),
            Language::Y => &raw * self.adapt.transpose(),
        };
        let mut pre = &embedded * self.ff_w.transpose();
        for (j, mut col) in pre.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.ff_b[j]);
        }

        let b = sentences.len();
        let mut pooled = DMatrix::zeros(b, hidden);
        let mut argmax = vec![0usize; b * hidden];
        for s in 0..b {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            for j in 0..hidden {
                let mut best = lo;
                let mut best_v = pre[(lo, j)].max(0.0);
                for t in lo + 1..hi {
                    let v = pre[(t, j)].max(0.0);
                    if v > best_v {
                        best_v = v;
                        best = t;
                    }
                }
                pooled[(s, j)] = best_v;
                argmax[s * hidden + j] = best;
            }
        }

        let mut out = &pooled * self.out_w.transpose();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.out_b[j]);
        }
        let (emb, norms) = self.finish_output(&out, "text encoder output")?;
        Ok(TextCache {
            lang,
            rows,
            raw,
            embedded,
            pre,
            pooled,
            argmax,
            norms,
            emb,
        })
    }

    pub(crate) fn forward_features(&self, features: &[&[f64]]) -> Result<FeatureCache> {
        let dv = self.feat_w.ncols();
        for f in features {
            if f.len() != dv {
                return Err(Error::dims("clip features", dv, f.len()));
            }
        }
        let input = DMatrix::from_fn(features.len(), dv, |r, c| features[r][c]);
        let mut out = &input * self.feat_w.transpose();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.feat_b[j]);
        }
        let (emb, norms) = self.finish_output(&out, "feature encoder output")?;
        Ok(FeatureCache { input, norms, emb })
    }

    fn finish_output(&self, out: &DMatrix<f64>, what: &'static str) -> Result<(DMatrix<f64>, Vec<f64>)> {
        if !self.normalize_outputs {
            return Ok((out.clone(), vec![1.0; out.nrows()]));
        }
        let mut emb = out.clone();
        let mut norms = Vec::with_capacity(out.nrows());
        for mut row in emb.row_iter_mut() {
            let n = row.norm();
            if n == 0.0 {
                return Err(Error::ZeroNorm(what));
            }
            row /= n;
            norms.push(n);
        }
        Ok((emb, norms))
    }

    /// Saves the model as a tensor container plus `vocab_x.txt` and
    /// `vocab_y.txt`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let mut w = TensorWriter::create(dir, CHECKPOINT_KIND)?;
        let col = |v: &DVector<f64>| DMatrix::from_row_slice(1, v.len(), v.as_slice());
        w.add("word_x", &self.word_x)?;
        w.add("word_y", &self.word_y)?;
        w.add("adapt", &self.adapt)?;
        w.add("ff_w", &self.ff_w)?;
        w.add("ff_b", &col(&self.ff_b))?;
        w.add("out_w", &self.out_w)?;
        w.add("out_b", &col(&self.out_b))?;
        w.add("feat_w", &self.feat_w)?;
        w.add("feat_b", &col(&self.feat_b))?;
        self.vocab_x.save(w.dir().join("vocab_x.txt"))?;
        self.vocab_y.save(w.dir().join("vocab_y.txt"))?;
        w.finish(serde_json::json!({
            "dims": self.dims(),
            "normalize_outputs": self.normalize_outputs,
            "score_scale": self.score_scale,
            "vocab_x": "vocab_x.txt",
            "vocab_y": "vocab_y.txt",
        }))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let r = TensorReader::open(dir, CHECKPOINT_KIND)?;
        let vec = |m: DMatrix<f64>| DVector::from_column_slice(m.transpose().as_slice());
        let vocab_x = Vocabulary::load(r.dir().join("vocab_x.txt"))?;
        let vocab_y = Vocabulary::load(r.dir().join("vocab_y.txt"))?;
        let model = GroundingModel {
            word_x: r.get("word_x")?,
            word_y: r.get("word_y")?,
            adapt: r.get("adapt")?,
            ff_w: r.get("ff_w")?,
            ff_b: vec(r.get("ff_b")?),
            out_w: r.get("out_w")?,
            out_b: vec(r.get("out_b")?),
            feat_w: r.get("feat_w")?,
            feat_b: vec(r.get("feat_b")?),
            normalize_outputs: r.meta()["normalize_outputs"].as_bool().unwrap_or(true),
            score_scale: r.meta()["score_scale"].as_f64().unwrap_or(1.0),
            vocab_x,
            vocab_y,
        };
        let d = model.dims();
        let consistent = model.word_x.nrows() == model.vocab_x.len() + 1
            && model.word_y.nrows() == model.vocab_y.len() + 1
            && model.word_y.ncols() == d.word
            && model.adapt.shape() == (d.word, d.word)
            && model.ff_w.ncols() == d.word
            && model.ff_b.len() == d.hidden
            && model.out_w.ncols() == d.hidden
            && model.out_b.len() == d.joint
            && model.feat_w.nrows() == d.joint
            && model.feat_b.len() == d.joint;
        if !consistent {
            return Err(Error::Checkpoint("tensor shapes are inconsistent".into()));
        }
        Ok(model)
    }
}

pub(crate) struct TextCache {
    pub lang: Language,
    pub rows: Vec<usize>,
    pub raw: DMatrix<f64>,
    pub embedded: DMatrix<f64>,
    pub pre: DMatrix<f64>,
    pub pooled: DMatrix<f64>,
    pub argmax: Vec<usize>,
    pub norms: Vec<f64>,
    pub emb: DMatrix<f64>,
}

pub(crate) struct FeatureCache {
    pub input: DMatrix<f64>,
    pub norms: Vec<f64>,
    pub emb: DMatrix<f64>,
}

/// Encodes one X sentence: embed, position-wise affine + ReLU, max-pool over
/// non-pad positions, affine, L2-normalize.
pub fn encode_text_x(model: &GroundingModel, sentence: &EncodedSentence) -> Result<DVector<f64>> {
    let m = model.encode_texts(Language::X, &[sentence])?;
    Ok(m.row(0).transpose())
}

/// Encodes one Y sentence; word vectors pass through the AdaptLayer first.
pub fn encode_text_y(model: &GroundingModel, sentence: &EncodedSentence) -> Result<DVector<f64>> {
    let m = model.encode_texts(Language::Y, &[sentence])?;
    Ok(m.row(0).transpose())
}

pub fn encode_features(model: &GroundingModel, features: &[f64]) -> Result<DVector<f64>> {
    let m = model.encode_feature_batch(&[features])?;
    Ok(m.row(0).transpose())
}
