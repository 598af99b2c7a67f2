use nalgebra::{DMatrix, DVector};

use super::*;
use crate::corpus::{EncodedSentence, Vocabulary};
use crate::embeddings::EmbeddingMatrix;

fn vocab(words: &[&str]) -> Vocabulary {
    Vocabulary::from_ranked(words.iter().map(|w| w.to_string()).collect(), vec![1; words.len()])
}

/// d_w = 2, d_i = 2, d = 2, D_v = 3 with hand-set weights.
fn toy_model() -> GroundingModel {
    let ex = EmbeddingMatrix::new(vocab(&["a", "b", "c"]), vec![1.0, 2.0, -1.0, 0.5, 3.0, -2.0], 2).unwrap();
    let ey = EmbeddingMatrix::new(vocab(&["p", "q"]), vec![2.0, 1.0, 0.0, -1.0], 2).unwrap();
    let mut m = GroundingModel::new(&ex, &ey, 2, 2, 3, AdaptInit::Identity, 0).unwrap();
    m.ff_w = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.5, 1.0]);
    m.ff_b = DVector::from_vec(vec![0.0, -0.5]);
    m.out_w = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]);
    m.out_b = DVector::from_vec(vec![0.1, -0.2]);
    m.feat_w = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, -1.0, 1.0]);
    m.feat_b = DVector::from_vec(vec![0.0, 0.5]);
    m
}

fn sentence(ids: &[usize], len: usize, pad: usize) -> EncodedSentence {
    let mut v = ids.to_vec();
    v.resize(len, pad);
    EncodedSentence {
        ids: v,
        true_length: ids.len(),
    }
}

fn normalize(v: [f64; 2]) -> [f64; 2] {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    [v[0] / n, v[1] / n]
}

#[test]
fn text_x_matches_hand_forward_pass() {
    let m = toy_model();
    // words a=(1,2), b=(-1,0.5), c=(3,-2)
    // hidden(v) = relu([v0 - v1, 0.5 v0 + v1 - 0.5])
    // a -> relu(-1, 2.0) = (0, 2); b -> relu(-1.5, -0.5) = (0, 0); c -> relu(5, -1) = (5, 0)
    // max-pool -> (5, 2); out = (2*5 + 0.1, 5 + 2 - 0.2) = (10.1, 6.8)
    let s = sentence(&[0, 1, 2], 5, m.vocab_x.pad_id());
    let got = encode_text_x(&m, &s).unwrap();
    let want = normalize([10.1, 6.8]);
    assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
}

#[test]
fn single_word_pools_to_itself() {
    let m = toy_model();
    // a -> hidden (0, 2) -> out (0.1, 1.8)
    let got = encode_text_x(&m, &sentence(&[0], 1, m.vocab_x.pad_id())).unwrap();
    let want = normalize([0.1, 1.8]);
    assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
}

#[test]
fn padding_is_bit_identical() {
    let m = toy_model();
    let pad = m.vocab_x.pad_id();
    let a = encode_text_x(&m, &sentence(&[2, 0], 2, pad)).unwrap();
    let b = encode_text_x(&m, &sentence(&[2, 0], 9, pad)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn empty_sentence_is_rejected() {
    let m = toy_model();
    let s = sentence(&[], 3, m.vocab_x.pad_id());
    assert!(matches!(encode_text_x(&m, &s), Err(crate::Error::EmptySentence)));
}

#[test]
fn text_y_with_hand_set_adapt_layer() {
    let mut m = toy_model();
    m.adapt = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
    // p=(2,1): v·Wᵀ = (1, 4); hidden = relu(-3, 4) = (0, 4); out = (0.1, 3.8)
    let got = encode_text_y(&m, &sentence(&[0], 2, m.vocab_y.pad_id())).unwrap();
    let want = normalize([0.1, 3.8]);
    assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
}

#[test]
fn identity_adapt_layer_matches_x_encoder_on_same_vectors() {
    let mut m = toy_model();
    m.word_x = m.word_y.clone();
    m.vocab_x = m.vocab_y.clone();
    for id in 0..2 {
        let s = sentence(&[id], 1, m.vocab_y.pad_id());
        assert_eq!(encode_text_x(&m, &s).unwrap(), encode_text_y(&m, &s).unwrap());
    }
}

#[test]
fn adapt_layer_mapping_a_word_onto_its_translation() {
    let mut m = toy_model();
    // map p=(2,1) onto c=(3,-2): W·(2,1) = (3,-2) with W = [[1,1],[-1,0]]
    m.adapt = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 0.0]);
    let fy = encode_text_y(&m, &sentence(&[0], 1, m.vocab_y.pad_id())).unwrap();
    let fx = encode_text_x(&m, &sentence(&[2], 1, m.vocab_x.pad_id())).unwrap();
    assert!((fx - fy).abs().max() < 1e-15);
}

#[test]
fn feature_encoder_cases() {
    let m = toy_model();
    // (1, 2, 3) -> (1 + 6, -2 + 3 + 0.5) = (7, 1.5)
    let got = encode_features(&m, &[1.0, 2.0, 3.0]).unwrap();
    let want = normalize([7.0, 1.5]);
    assert!((got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12);
    assert!(matches!(
        encode_features(&m, &[1.0]),
        Err(crate::Error::DimensionMismatch { .. })
    ));

    let mut z = toy_model();
    z.feat_b = DVector::zeros(2);
    assert!(matches!(encode_features(&z, &[0.0; 3]), Err(crate::Error::ZeroNorm(_))));

    let mut id = toy_model();
    id.feat_w = DMatrix::identity(2, 2);
    id.feat_b = DVector::zeros(2);
    let v = encode_features(&id, &[3.0, 4.0]).unwrap();
    assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
}

fn clip(id: &str, features: Vec<f64>, ids: &[usize], pad: usize) -> NarratedClip {
    NarratedClip {
        clip_id: id.into(),
        features,
        caption: sentence(ids, 4, pad),
    }
}

#[test]
fn joint_loss_is_additive() {
    let m = toy_model();
    let px = m.vocab_x.pad_id();
    let py = m.vocab_y.pad_id();
    let bx = [
        clip("x1", vec![1.0, 0.0, 0.0], &[0, 1], px),
        clip("x2", vec![0.0, 1.0, 0.5], &[2], px),
    ];
    let by = [
        clip("y1", vec![0.2, 0.0, 1.0], &[1], py),
        clip("y2", vec![1.0, -1.0, 0.0], &[0, 1], py),
    ];
    let rx: Vec<&NarratedClip> = bx.iter().collect();
    let ry: Vec<&NarratedClip> = by.iter().collect();

    let l = joint_loss(&m, &rx, &ry, 1.0).unwrap();
    let nx = batch_nce(&m, Language::X, &rx).unwrap();
    let ny = batch_nce(&m, Language::Y, &ry).unwrap();
    assert_eq!(l.total, nx + ny);

    // component-wise recomputation through the public encoders
    let t = DMatrix::from_rows(&[
        encode_text_x(&m, &bx[0].caption).unwrap().transpose(),
        encode_text_x(&m, &bx[1].caption).unwrap().transpose(),
    ]);
    let c = DMatrix::from_rows(&[
        encode_features(&m, &bx[0].features).unwrap().transpose(),
        encode_features(&m, &bx[1].features).unwrap().transpose(),
    ]);
    assert!((nce_loss(&t, &c).unwrap() - nx).abs() < 1e-14);

    // identical language batches with λ = 0 double one term
    let mut mm = toy_model();
    mm.word_y = mm.word_x.clone();
    mm.vocab_y = mm.vocab_x.clone();
    mm.adapt = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
    let l0 = joint_loss(&mm, &rx, &rx, 0.0).unwrap();
    mm.adapt = DMatrix::identity(2, 2);
    let single = batch_nce(&mm, Language::X, &rx).unwrap();
    let l1 = joint_loss(&mm, &rx, &rx, 0.0).unwrap();
    assert!((l1.total - 2.0 * single).abs() < 1e-14);
    assert!(l0.penalty > 0.0 && l0.total.is_finite());
}

#[test]
fn frozen_words_get_zero_gradient() {
    let m = toy_model();
    let px = m.vocab_x.pad_id();
    let py = m.vocab_y.pad_id();
    let bx = [clip("x1", vec![1.0, 0.0, 0.0], &[0, 1], px), clip("x2", vec![0.0, 1.0, 0.5], &[2], px)];
    let by = [clip("y1", vec![0.2, 0.0, 1.0], &[1], py), clip("y2", vec![1.0, -1.0, 0.0], &[0, 1], py)];
    let rx: Vec<&NarratedClip> = bx.iter().collect();
    let ry: Vec<&NarratedClip> = by.iter().collect();
    let (_, g) = gradients(&m, &rx, &ry, 1.0, true).unwrap();
    assert!(g.word_x.iter().all(|&x| x == 0.0));
    assert!(g.word_y.iter().all(|&x| x == 0.0));
    let (_, g) = gradients(&m, &rx, &ry, 1.0, false).unwrap();
    assert!(g.word_x.iter().any(|&x| x != 0.0));
}

#[test]
fn translate_word_constructed_model() {
    let mut m = toy_model();
    // make q's adapted vector identical to a's vector: W·(0,-1) = (1,2)
    m.adapt = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 0.0, -2.0]);
    let r = translate_word(&m, "a", 1).unwrap();
    assert_eq!(r[0].0, "q");
    assert!((r[0].1 - 1.0).abs() < 1e-12);

    let all = translate_word(&m, "a", 50).unwrap();
    assert_eq!(all.len(), 2);
    assert!(matches!(translate_word(&m, "zzz", 1), Err(crate::Error::OutOfVocabulary(_))));
}

#[test]
fn two_stage_single_pair_and_errors() {
    let m = toy_model();
    let px = m.vocab_x.pad_id();
    let py = m.vocab_y.pad_id();
    let clips = [clip("y1", vec![0.2, 0.0, 1.0], &[1], py)];
    let cands = [sentence(&[0], 3, py)];
    let q = sentence(&[0], 3, px);
    let r = two_stage_translate(&m, &q, &clips, &cands, 5).unwrap();
    assert_eq!(r.clip, 0);
    assert_eq!(r.ranked.len(), 1);
    assert_eq!(r.ranked[0].0, 0);
    assert!(two_stage_translate(&m, &q, &[], &cands, 5).is_err());
    assert!(two_stage_translate(&m, &q, &clips, &[], 5).is_err());
}

#[test]
fn zero_steps_leaves_model_unchanged() {
    let m = toy_model();
    let px = m.vocab_x.pad_id();
    let py = m.vocab_y.pad_id();
    let dx = ClipDataset::new(vec![clip("x1", vec![1.0, 0.0, 0.0], &[0], px), clip("x2", vec![0.0, 1.0, 0.0], &[1], px)]).unwrap();
    let dy = ClipDataset::new(vec![clip("y1", vec![1.0, 0.0, 0.0], &[0], py), clip("y2", vec![0.0, 1.0, 0.0], &[1], py)]).unwrap();
    let cfg = GroundTrainConfig { steps: 0, ..Default::default() };
    let out = train(&m, &dx, &dy, &cfg).unwrap();
    assert_eq!(out.model, m);
    assert!(out.trace.is_empty());

    let bad = GroundTrainConfig { batch_size: 1, ..Default::default() };
    assert!(train(&m, &dx, &dy, &bad).is_err());
    assert!(matches!(train(&m, &dx, &dx, &cfg), Err(crate::Error::PairedData { .. })));
}

#[test]
fn checkpoint_round_trip_at_f32_precision() {
    let m = toy_model();
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path()).unwrap();
    let back = GroundingModel::load(dir.path()).unwrap();
    assert_eq!(back.vocab_x, m.vocab_x);
    assert_eq!(back.dims(), m.dims());
    assert!((&back.ff_w - &m.ff_w).abs().max() < 1e-6);
    assert!((&back.feat_b - &m.feat_b).abs().max() < 1e-6);
    assert!(back.is_valid());
}
