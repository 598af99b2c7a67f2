use std::collections::HashMap;

use groundalign::grounding::Language;
use groundalign::synthworld::{generate, generate_world, ground_truth_dictionary, SynthConfig};

fn small(seed: u64) -> SynthConfig {
    SynthConfig {
        concepts: 20,
        function_words: 5,
        clips_per_language: 4_000,
        feature_dim: 8,
        seed,
        ..Default::default()
    }
}

/// Empirical mutual information (nats) between two label sequences.
fn mutual_information(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut pa: HashMap<usize, f64> = HashMap::new();
    let mut pb: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0 / n;
        *pa.entry(x).or_default() += 1.0 / n;
        *pb.entry(y).or_default() += 1.0 / n;
    }
    joint.iter().map(|(&(x, y), &p)| p * (p / (pa[&x] * pb[&y])).ln()).sum()
}

fn first_concepts(sets: &[Vec<usize>]) -> Vec<usize> {
    sets.iter().map(|s| *s.iter().min().unwrap()).collect()
}

#[test]
fn irrelevant_captions_carry_no_information_about_features() {
    let cfg = SynthConfig {
        relevance_prob: 0.0,
        concepts_per_clip: 1,
        ..small(3)
    };
    let world = generate_world(&cfg).unwrap();
    let ds = world.sample_dataset(Language::X, cfg.clips_per_language, 0).unwrap();
    let mi = mutual_information(&first_concepts(&ds.feature_concepts), &first_concepts(&ds.caption_concepts));

    let relevant = SynthConfig {
        relevance_prob: 1.0,
        ..cfg.clone()
    };
    let world = generate_world(&relevant).unwrap();
    let ds = world.sample_dataset(Language::X, cfg.clips_per_language, 0).unwrap();
    let mi_relevant = mutual_information(&first_concepts(&ds.feature_concepts), &first_concepts(&ds.caption_concepts));

    // the plug-in estimator's bias is about (K-1)^2 / 2n for K labels
    let bias = (19.0f64 * 19.0) / (2.0 * cfg.clips_per_language as f64);
    assert!(mi < 2.0 * bias, "MI {mi} with irrelevant captions");
    assert!(mi_relevant > 1.0, "MI {mi_relevant} with relevant captions");
}

#[test]
fn noiseless_features_are_means_of_visual_prototypes() {
    let cfg = SynthConfig {
        feature_noise_sigma: 0.0,
        visual_fraction: 0.5,
        ..small(5)
    };
    let world = generate_world(&cfg).unwrap();
    assert_eq!(world.visual.iter().filter(|&&v| v).count(), 10);
    let ds = world.sample_dataset(Language::Y, 500, 0).unwrap();
    let mut saw_background = false;
    for (rec, concepts) in ds.records.iter().zip(&ds.feature_concepts) {
        let shown: Vec<usize> = concepts.iter().copied().filter(|&c| world.visual[c]).collect();
        let want: Vec<f64> = if shown.is_empty() {
            saw_background = true;
            world.background.clone()
        } else {
            (0..cfg.feature_dim)
                .map(|d| shown.iter().map(|&c| world.prototypes[c][d]).sum::<f64>() / shown.len() as f64)
                .collect()
        };
        for (a, b) in rec.features.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert!(saw_background);
}

#[test]
fn prototypes_are_unit_and_distinct() {
    let world = generate_world(&small(7)).unwrap();
    for (i, p) in world.prototypes.iter().enumerate() {
        let norm: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        for q in &world.prototypes[i + 1..] {
            let d: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(d > 1e-3);
        }
    }
}

#[test]
fn caption_only_text_extends_the_corpus() {
    let cfg = SynthConfig {
        clips_per_language: 50,
        text_captions_per_language: 30,
        ..small(9)
    };
    let g = generate(&cfg).unwrap();
    assert_eq!(g.text_x.len(), 30);
    assert_eq!(g.corpus(Language::Y).count(), 80);
    let known: Vec<&String> = g.world.content_y.iter().chain(&g.world.function_y).collect();
    for line in &g.text_y {
        assert!(line.split(' ').all(|w| known.iter().any(|k| k.as_str() == w)));
    }
    assert_eq!(ground_truth_dictionary(&g.world).len(), cfg.concepts);
}
