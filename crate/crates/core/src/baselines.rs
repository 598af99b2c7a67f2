//! Non-grounded baselines: random chance and the video retrieval
//! pseudo-parallel corpus.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedSentence, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::BilingualDictionary;
use crate::grounding::ClipDataset;
use crate::linalg::top_k_desc;

pub const DEFAULT_NEIGHBOURS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChanceEstimate {
    pub monte_carlo: f64,
    /// Closed-form expectation averaged over queries.
    pub expectation: f64,
    /// Binomial standard error of the Monte-Carlo estimate.
    pub std_error: f64,
}

/// Probability that `n` draws without replacement from `v` items hit at
/// least one of `t` marked items: `1 − C(v−t, n)/C(v, n)`.
pub fn chance_hit_probability(v: usize, t: usize, n: usize) -> f64 {
    let t = t.min(v);
    if n + t > v {
        return 1.0;
    }
    let mut miss = 1.0;
    for i in 0..n {
        miss *= (v - t - i) as f64 / (v - i) as f64;
    }
    1.0 - miss
}

/// Recall@n of a translator that returns `n` distinct uniformly random
/// target words.
pub fn random_chance_recall(
    dict: &BilingualDictionary,
    vocab_y_size: usize,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<ChanceEstimate> {
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    if n == 0 || n > vocab_y_size {
        return Err(Error::invalid("n", format!("must lie in 1..={vocab_y_size}")));
    }
    if dict.is_empty() {
        return Err(Error::invalid("dictionary", "must be nonempty"));
    }
    let ts: Vec<usize> = dict.entries().values().map(|s| s.len().min(vocab_y_size)).collect();
    let expectation = ts.iter().map(|&t| chance_hit_probability(vocab_y_size, t, n)).sum::<f64>() / ts.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..trials {
        for &t in &ts {
            if sample(&mut rng, vocab_y_size, n).iter().any(|i| i < t) {
                hits += 1;
            }
        }
    }
    let draws = (trials * ts.len()) as f64;
    let var = ts
        .iter()
        .map(|&t| {
            let p = chance_hit_probability(vocab_y_size, t, n);
            p * (1.0 - p)
        })
        .sum::<f64>()
        / ts.len() as f64;
    Ok(ChanceEstimate {
        monte_carlo: hits as f64 / draws,
        expectation,
        std_error: (var / draws).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPair {
    pub x_clip: usize,
    pub y_clip: usize,
    pub caption_x: EncodedSentence,
    pub caption_y: EncodedSentence,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PseudoParallelCorpus {
    pub pairs: Vec<PseudoPair>,
}

impl PseudoParallelCorpus {
    /// Tab-separated `caption_x caption_y distance` lines.
    pub fn write_tsv(&self, path: impl AsRef<Path>, vocab_x: &Vocabulary, vocab_y: &Vocabulary) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for p in &self.pairs {
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                p.caption_x.decode(vocab_x).join(" "),
                p.caption_y.decode(vocab_y).join(" "),
                p.distance
            );
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pairs every X clip with its `k` nearest Y clips by Euclidean distance
/// over raw features (exact search; ties go to the earlier Y clip).
pub fn build_pseudo_parallel(clips_x: &ClipDataset, clips_y: &ClipDataset, k: usize) -> Result<PseudoParallelCorpus> {
    if clips_x.is_empty() || clips_y.is_empty() {
        return Err(Error::invalid("datasets", "both clip datasets must be nonempty"));
    }
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if clips_x.feature_dim() != clips_y.feature_dim() {
        return Err(Error::dims("clip feature width", clips_x.feature_dim(), clips_y.feature_dim()));
    }
    let mut pairs = Vec::with_capacity(clips_x.len() * k.min(clips_y.len()));
    for (i, cx) in clips_x.clips().iter().enumerate() {
        let neg: Vec<f64> = clips_y
            .clips()
            .iter()
            .map(|cy| -squared_distance(&cx.features, &cy.features))
            .collect();
        for j in top_k_desc(&neg, k) {
            let cy = &clips_y.clips()[j];
            pairs.push(PseudoPair {
                x_clip: i,
                y_clip: j,
                caption_x: cx.caption.clone(),
                caption_y: cy.caption.clone(),
                distance: (-neg[j]).sqrt(),
            });
        }
    }
    Ok(PseudoParallelCorpus { pairs })
}

#[derive(Debug, Clone, PartialEq)]
pub enum JointRanking {
    Ranked(Vec<(String, f64)>),
    /// The source word never occurs in a paired caption.
    Unobserved,
}

/// Joint probabilities `P(x, y)` of X and Y words co-occurring in a paired
/// caption. Every (x occurrence, y occurrence) pair counts once; the total
/// mass is the number of such token pairs over the corpus. Unknown and
/// padding tokens are ignored.
pub struct JointProbTable {
    counts: HashMap<usize, HashMap<usize, u64>>,
    total: u64,
}

impl JointProbTable {
    pub fn new(corpus: &PseudoParallelCorpus, vocab_x: &Vocabulary, vocab_y: &Vocabulary) -> Self {
        let mut counts: HashMap<usize, HashMap<usize, u64>> = HashMap::new();
        let mut total = 0;
        for p in &corpus.pairs {
            let xs: Vec<usize> = p.caption_x.tokens().iter().copied().filter(|&t| t < vocab_x.len()).collect();
            let ys: Vec<usize> = p.caption_y.tokens().iter().copied().filter(|&t| t < vocab_y.len()).collect();
            for &x in &xs {
                let row = counts.entry(x).or_default();
                for &y in &ys {
                    *row.entry(y).or_default() += 1;
                }
            }
            total += (xs.len() * ys.len()) as u64;
        }
        Self { counts, total }
    }

    pub fn probability(&self, x: usize, y: usize) -> f64 {
        let c = self.counts.get(&x).and_then(|r| r.get(&y)).copied().unwrap_or(0);
        if self.total == 0 {
            0.0
        } else {
            c as f64 / self.total as f64
        }
    }

    /// Y words ranked by joint probability with `x`; ties go to the more
    /// frequent (lower-ranked) Y word.
    pub fn rank(&self, x: usize, vocab_y: &Vocabulary, k: usize) -> JointRanking {
        let Some(row) = self.counts.get(&x).filter(|r| !r.is_empty()) else {
            return JointRanking::Unobserved;
        };
        let mut items: Vec<(usize, u64)> = row.iter().map(|(&y, &c)| (y, c)).collect();
        items.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        items.truncate(k);
        JointRanking::Ranked(
            items
                .into_iter()
                .map(|(y, c)| (vocab_y.token(y).to_owned(), c as f64 / self.total as f64))
                .collect(),
        )
    }
}

pub fn joint_prob_translate(
    corpus: &PseudoParallelCorpus,
    vocab_x: &Vocabulary,
    vocab_y: &Vocabulary,
    word_x: &str,
    k: usize,
) -> Result<JointRanking> {
    let x = vocab_x.id(word_x).ok_or_else(|| Error::OutOfVocabulary(word_x.to_owned()))?;
    Ok(JointProbTable::new(corpus, vocab_x, vocab_y).rank(x, vocab_y, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::encode_sentence;
    use crate::grounding::NarratedClip;

    fn vocab(words: &[&str]) -> Vocabulary {
        Vocabulary::from_ranked(words.iter().map(|s| s.to_string()).collect(), vec![1; words.len()])
    }

    fn pair(vx: &Vocabulary, vy: &Vocabulary, x: &[&str], y: &[&str]) -> PseudoPair {
        PseudoPair {
            x_clip: 0,
            y_clip: 0,
            caption_x: encode_sentence(vx, x, 10),
            caption_y: encode_sentence(vy, y, 10),
            distance: 0.0,
        }
    }

    #[test]
    fn chance_closed_form() {
        assert_eq!(chance_hit_probability(2, 1, 1), 0.5);
        assert!((chance_hit_probability(1000, 1, 10) - 0.01).abs() < 1e-12);
        assert_eq!(chance_hit_probability(5, 3, 3), 1.0);
        let d = BilingualDictionary::parse("a x\n").unwrap();
        assert!(random_chance_recall(&d, 5, 6, 10, 1).is_err());
        assert!(random_chance_recall(&d, 5, 1, 0, 1).is_err());
        let est = random_chance_recall(&d, 1000, 10, 20_000, 3).unwrap();
        assert!((est.monte_carlo - est.expectation).abs() < 3.0 * est.std_error);
    }

    #[test]
    fn single_y_clip_pairs_with_everything() {
        let vx = vocab(&["a"]);
        let clip = |id: &str, f: Vec<f64>| NarratedClip {
            clip_id: id.into(),
            features: f,
            caption: encode_sentence(&vx, &["a"], 4),
        };
        let xs = ClipDataset::new(vec![clip("x0", vec![0.0, 1.0]), clip("x1", vec![5.0, 5.0])]).unwrap();
        let ys = ClipDataset::new(vec![clip("y0", vec![3.0, 5.0])]).unwrap();
        let c = build_pseudo_parallel(&xs, &ys, DEFAULT_NEIGHBOURS).unwrap();
        assert_eq!(c.pairs.len(), 2);
        assert!(c.pairs.iter().all(|p| p.y_clip == 0));
        assert!((c.pairs[0].distance - 5.0).abs() < 1e-12);
        assert!((c.pairs[1].distance - 2.0).abs() < 1e-12);
        let bad = ClipDataset::new(vec![clip("y1", vec![1.0])]).unwrap();
        assert!(matches!(build_pseudo_parallel(&xs, &bad, 1), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn one_pair_corpus() {
        let vx = vocab(&["dog", "lonely"]);
        let vy = vocab(&["chien"]);
        let c = PseudoParallelCorpus {
            pairs: vec![pair(&vx, &vy, &["dog"], &["chien"])],
        };
        assert_eq!(
            joint_prob_translate(&c, &vx, &vy, "dog", 5).unwrap(),
            JointRanking::Ranked(vec![("chien".into(), 1.0)])
        );
        assert_eq!(joint_prob_translate(&c, &vx, &vy, "lonely", 5).unwrap(), JointRanking::Unobserved);
        assert!(matches!(joint_prob_translate(&c, &vx, &vy, "cat", 5), Err(Error::OutOfVocabulary(_))));
    }

    #[test]
    fn three_pair_hand_table() {
        let vx = vocab(&["the", "dog", "cat"]);
        let vy = vocab(&["le", "chien", "chat"]);
        let c = PseudoParallelCorpus {
            pairs: vec![
                pair(&vx, &vy, &["the", "dog"], &["le", "chien"]),
                pair(&vx, &vy, &["the", "cat"], &["le", "chat", "le"]),
                pair(&vx, &vy, &["dog", "dog"], &["chien", "oov"]),
            ],
        };
        // token-pair mass: 2·2 + 2·3 + 2·1 = 12
        // the: le 1+2=3, chien 1, chat 1; dog: le 1, chien 1+2=3; cat: le 2, chat 1
        let t = JointProbTable::new(&c, &vx, &vy);
        assert_eq!(t.probability(0, 0), 3.0 / 12.0);
        let want_the = vec![("le".to_string(), 3.0 / 12.0), ("chien".into(), 1.0 / 12.0), ("chat".into(), 1.0 / 12.0)];
        assert_eq!(t.rank(0, &vy, 10), JointRanking::Ranked(want_the));
        let want_dog = vec![("chien".to_string(), 3.0 / 12.0), ("le".into(), 1.0 / 12.0)];
        assert_eq!(t.rank(1, &vy, 10), JointRanking::Ranked(want_dog));
        let want_cat = vec![("le".to_string(), 2.0 / 12.0)];
        assert_eq!(t.rank(2, &vy, 1), JointRanking::Ranked(want_cat));
    }
}
