mod common;

use groundalign::alignment::{muve_align, InductionPolicy, LinearMap, MuveConfig};
use groundalign::corpus::build_vocabulary_from_sentences;
use groundalign::embeddings::{train_skipgram_traced, SkipGramConfig};
use groundalign::grounding::{train, GroundTrainConfig, Language};
use groundalign::linalg::{gaussian_matrix, nearest_orthogonal, normalize_rows, random_orthogonal};
use groundalign::pipeline::{prepare, Condition, ExperimentConfig};
use groundalign::synthworld::SynthConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_experiment(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default().with_seed(seed);
    cfg.synth = SynthConfig {
        concepts: 20,
        function_words: 5,
        clips_per_language: 800,
        feature_dim: 8,
        text_captions_per_language: 2_000,
        ..cfg.synth
    };
    cfg.skipgram.dim = 12;
    cfg.skipgram.epochs = 3;
    cfg.ground.hidden_dim = 16;
    cfg.ground.joint_dim = 12;
    cfg.ground.steps = 300;
    cfg.ground.batch_size = 32;
    cfg.ground.eval_every = 50;
    cfg
}

#[test]
fn skipgram_loss_decreases() {
    let cfg = tiny_experiment(1);
    let world = groundalign::synthworld::generate(&cfg.synth).unwrap();
    let sents: Vec<Vec<String>> = world
        .corpus(Language::X)
        .map(groundalign::corpus::tokenize)
        .collect();
    let vocab = build_vocabulary_from_sentences(&sents, 1000).unwrap();
    let out = train_skipgram_traced(
        &sents,
        &vocab,
        &SkipGramConfig {
            dim: 12,
            epochs: 4,
            ..Default::default()
        },
    )
    .unwrap();
    let l = &out.epoch_losses;
    assert_eq!(l.len(), 4);
    assert!(l[3] < l[0], "epoch losses {l:?}");
}

#[test]
fn grounding_training_beats_uniform_scores() {
    let mut cfg = tiny_experiment(2);
    cfg.synth.relevance_prob = 1.0;
    cfg.synth.feature_noise_sigma = 0.0;
    cfg.ground.steps = 1_000;
    let world = prepare(&cfg, Condition::default()).unwrap();
    let model = cfg
        .ground
        .init_model(&world.emb_x, &world.emb_y, world.clips_x.feature_dim())
        .unwrap();
    let out = train(&model, &world.clips_x, &world.clips_y, &cfg.ground).unwrap();
    let ln_b = (cfg.ground.batch_size as f64).ln();
    let tail: Vec<f64> = out.trace[out.trace.len() - 20..].iter().map(|l| l.nce_x.max(l.nce_y)).collect();
    let worst = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(worst < ln_b - 0.3, "late NCE {worst} vs ln B {ln_b}");
    assert!(out.validation.iter().all(|v| v.loss.is_finite()));
}

#[test]
fn score_scale_does_not_change_encodings() {
    let mut a = common::toy_model(5, 6, 5, 4, 3);
    let mut b = a.clone();
    a.score_scale = 1.0;
    b.score_scale = 7.0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = common::random_batch(&a, Language::Y, 5, 3, &mut rng);
    let caps: Vec<_> = batch.iter().map(|c| &c.caption).collect();
    assert_eq!(
        a.encode_texts(Language::Y, &caps).unwrap(),
        b.encode_texts(Language::Y, &caps).unwrap()
    );
}

#[test]
fn ground_config_rejects_bad_scale() {
    let cfg = GroundTrainConfig {
        score_scale: 0.0,
        ..Default::default()
    };
    assert!(cfg.validate().is_err());
}

#[test]
fn muve_refinement_recovers_a_rotation_from_a_rough_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, d) = (300, 10);
    let mut x = gaussian_matrix(n, d, &mut rng);
    normalize_rows(&mut x);
    let r = random_orthogonal(d, &mut rng);
    let mut y = &x * &r + gaussian_matrix(n, d, &mut rng) * 0.02;
    normalize_rows(&mut y);
    let seed = nearest_orthogonal(&(&r + gaussian_matrix(d, d, &mut rng) * 0.15));
    for policy in [InductionPolicy::MutualCsls, InductionPolicy::MutualNn, InductionPolicy::CslsTopk] {
        let cfg = MuveConfig {
            policy,
            ..Default::default()
        };
        let map = muve_align(&LinearMap::from_adapt_layer(&seed), &x, &y, &cfg).unwrap();
        let err = (&map.matrix - &r).amax();
        assert!(err < 0.05, "{policy:?}: max error {err}");
    }
}
