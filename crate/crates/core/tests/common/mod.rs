#![allow(dead_code)]

use groundalign::corpus::{EncodedSentence, Vocabulary};
use groundalign::embeddings::EmbeddingMatrix;
use groundalign::grounding::{AdaptInit, Gradients, GroundingModel, Language, NarratedClip};
use groundalign::linalg::gaussian_matrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOY_VOCAB: usize = 7;

pub fn vocab(prefix: &str, n: usize) -> Vocabulary {
    Vocabulary::from_ranked((0..n).map(|i| format!("{prefix}{i}")).collect(), (0..n as u64).rev().map(|c| c + 1).collect())
}

pub fn random_embeddings(prefix: &str, n: usize, dim: usize, rng: &mut ChaCha8Rng) -> EmbeddingMatrix {
    EmbeddingMatrix::from_dmatrix(vocab(prefix, n), &gaussian_matrix(n, dim, rng)).unwrap()
}

/// A small model with every parameter random, including biases and a
/// non-orthogonal AdaptLayer.
pub fn toy_model(seed: u64, dw: usize, di: usize, d: usize, dv: usize) -> GroundingModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ex = random_embeddings("x", TOY_VOCAB, dw, &mut rng);
    let ey = random_embeddings("y", TOY_VOCAB, dw, &mut rng);
    let mut m = GroundingModel::new(&ex, &ey, di, d, dv, AdaptInit::RandomOrthogonal, seed).unwrap();
    m.adapt += gaussian_matrix(dw, dw, &mut rng) * 0.3;
    let mut rv = |n: usize| DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    m.ff_b = rv(di);
    m.out_b = rv(d);
    m.feat_b = rv(d);
    m.score_scale = 2.5;
    let unk = DMatrix::from_fn(1, dw, |_, _| 0.3);
    m.word_x.row_mut(TOY_VOCAB).copy_from(&unk);
    m
}

/// Random clips whose captions mix words, UNK and padding.
pub fn random_batch(model: &GroundingModel, lang: Language, b: usize, max_len: usize, rng: &mut ChaCha8Rng) -> Vec<NarratedClip> {
    let vocab = model.vocab(lang);
    let dv = model.dims().feature;
    let tag = match lang {
        Language::X => "x",
        Language::Y => "y",
    };
    (0..b)
        .map(|i| {
            let len = rng.random_range(1..=max_len);
            let mut ids: Vec<usize> = (0..len)
                .map(|_| if rng.random::<f64>() < 0.1 { vocab.unk_id() } else { rng.random_range(0..vocab.len()) })
                .collect();
            ids.resize(max_len, vocab.pad_id());
            NarratedClip {
                clip_id: format!("{tag}{i}"),
                features: (0..dv).map(|_| rng.random_range(-1.0..1.0)).collect(),
                caption: EncodedSentence { ids, true_length: len },
            }
        })
        .collect()
}

fn fields(m: &GroundingModel) -> [&[f64]; 9] {
    [
        m.word_x.as_slice(),
        m.word_y.as_slice(),
        m.adapt.as_slice(),
        m.ff_w.as_slice(),
        m.ff_b.as_slice(),
        m.out_w.as_slice(),
        m.out_b.as_slice(),
        m.feat_w.as_slice(),
        m.feat_b.as_slice(),
    ]
}

pub fn param_values(m: &GroundingModel) -> Vec<f64> {
    fields(m).concat()
}

pub fn grad_values(g: &Gradients) -> Vec<f64> {
    [
        g.word_x.as_slice(),
        g.word_y.as_slice(),
        g.adapt.as_slice(),
        g.ff_w.as_slice(),
        g.ff_b.as_slice(),
        g.out_w.as_slice(),
        g.out_b.as_slice(),
        g.feat_w.as_slice(),
        g.feat_b.as_slice(),
    ]
    .concat()
}

pub fn set_param(m: &mut GroundingModel, mut index: usize, value: f64) {
    let slots: [&mut [f64]; 9] = [
        m.word_x.as_mut_slice(),
        m.word_y.as_mut_slice(),
        m.adapt.as_mut_slice(),
        m.ff_w.as_mut_slice(),
        m.ff_b.as_mut_slice(),
        m.out_w.as_mut_slice(),
        m.out_b.as_mut_slice(),
        m.feat_w.as_mut_slice(),
        m.feat_b.as_mut_slice(),
    ];
    for s in slots {
        if index < s.len() {
            s[index] = value;
            return;
        }
        index -= s.len();
    }
    panic!("parameter index out of range");
}
