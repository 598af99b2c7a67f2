//! Synthetic grounded bilingual worlds with known ground truth.
//!
//! A world has `M` latent concepts, each with a unit-norm prototype feature
//! vector and one content word per language, plus `F` function words per
//! language. A clip draws a concept set, its features are the mean of the
//! prototypes plus Gaussian noise, and its caption mixes the content words
//! of the set with as many function words. Concept sets favour concepts
//! with nearby prototypes (`coherence`), so both languages' text statistics
//! reflect the same underlying world.
//!
//! Non-visual concepts still appear in captions but leave no trace in the
//! features; a clip showing none of its visual concepts shows a shared
//! background prototype instead. Extra caption-only text can be sampled from
//! the same process to enlarge the monolingual corpora.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::BilingualDictionary;
use crate::grounding::{write_clip_records, ClipRecord, Language};
use crate::linalg::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub concepts: usize,
    pub function_words: usize,
    pub clips_per_language: usize,
    pub concepts_per_clip: usize,
    pub feature_dim: usize,
    pub feature_noise_sigma: f64,
    /// Probability that a caption describes its clip; otherwise the caption
    /// is drawn from an independent concept set.
    pub relevance_prob: f64,
    /// Interpolation of language Y's topic distribution toward a permuted
    /// copy of language X's.
    pub topic_divergence: f64,
    pub zipf_exponent: f64,
    /// Strength of the preference for co-occurring concepts with similar
    /// prototypes; 0 draws concepts independently.
    pub coherence: f64,
    /// Fraction of concepts that contribute to clip features.
    pub visual_fraction: f64,
    /// Caption-only sentences per language added to the text corpora.
    pub text_captions_per_language: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            concepts: 100,
            function_words: 20,
            clips_per_language: 5_000,
            concepts_per_clip: 2,
            feature_dim: 64,
            feature_noise_sigma: 0.1,
            relevance_prob: 0.5,
            topic_divergence: 0.0,
            zipf_exponent: 1.0,
            coherence: 8.0,
            visual_fraction: 1.0,
            text_captions_per_language: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.concepts < 2 {
            return Err(Error::invalid("concepts", "a world needs at least 2 concepts"));
        }
        if self.concepts_per_clip == 0 || self.concepts_per_clip > self.concepts {
            return Err(Error::invalid("concepts_per_clip", format!("must lie in 1..={}", self.concepts)));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim", "must be positive"));
        }
        if !(self.feature_noise_sigma >= 0.0) {
            return Err(Error::invalid("feature_noise_sigma", "must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.relevance_prob) {
            return Err(Error::invalid("relevance_prob", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.topic_divergence) {
            return Err(Error::invalid("topic_divergence", "must lie in [0, 1]"));
        }
        if !(self.zipf_exponent >= 0.0) || !(self.coherence >= 0.0) {
            return Err(Error::invalid("zipf_exponent", "exponents must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.visual_fraction) {
            return Err(Error::invalid("visual_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptWorld {
    pub config: SynthConfig,
    pub prototypes: Vec<Vec<f64>>,
    pub visual: Vec<bool>,
    /// Features of a clip without visual concepts.
    pub background: Vec<f64>,
    pub content_x: Vec<String>,
    pub content_y: Vec<String>,
    pub function_x: Vec<String>,
    pub function_y: Vec<String>,
    pub topic_x: Vec<f64>,
    pub topic_y: Vec<f64>,
}

const SYLLABLES_X: [&str; 24] = [
    "ba", "ke", "ti", "mo", "ru", "sa", "le", "ni", "po", "da", "fe", "gu", "ha", "jo", "ki", "lu", "ma", "ne", "ro",
    "su", "te", "vi", "wo", "ya",
];
const SYLLABLES_Y: [&str; 24] = [
    "zor", "kel", "vin", "dra", "mul", "shi", "tep", "gor", "fla", "nix", "bru", "qua", "sel", "tor", "ulm", "yev",
    "pra", "dun", "kra", "lom", "zet", "vas", "hir", "gle",
];

fn pseudo_words<R: Rng>(n: usize, syllables: &[&str], taken: &mut HashSet<String>, rng: &mut R) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    let mut len = 2;
    let mut misses = 0;
    while out.len() < n {
        let w: String = (0..len).map(|_| syllables[rng.random_range(0..syllables.len())]).collect();
        if taken.insert(w.clone()) {
            out.push(w);
            misses = 0;
        } else {
            misses += 1;
            if misses > 50 {
                len += 1;
                misses = 0;
            }
        }
    }
    out
}

fn zipf_weights(n: usize, s: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-s)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Builds a world deterministically from `config.seed`.
pub fn generate_world(config: &SynthConfig) -> Result<ConceptWorld> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut unit = || {
        let mut v: Vec<f64> = (0..config.feature_dim).map(|_| normal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        v
    };
    let prototypes: Vec<Vec<f64>> = (0..config.concepts).map(|_| unit()).collect();
    let background = unit();
    let n_visual = (config.visual_fraction * config.concepts as f64).round() as usize;
    let mut visual = vec![false; config.concepts];
    for c in rand::seq::index::sample(&mut rng, config.concepts, n_visual) {
        visual[c] = true;
    }

    let mut taken_x = HashSet::new();
    let mut taken_y = HashSet::new();
    let function_x = pseudo_words(config.function_words, &SYLLABLES_X[..8], &mut taken_x, &mut rng);
    let content_x = pseudo_words(config.concepts, &SYLLABLES_X, &mut taken_x, &mut rng);
    let function_y = pseudo_words(config.function_words, &SYLLABLES_Y[..8], &mut taken_y, &mut rng);
    let content_y = pseudo_words(config.concepts, &SYLLABLES_Y, &mut taken_y, &mut rng);

    let topic_x = zipf_weights(config.concepts, config.zipf_exponent);
    let mut perm: Vec<usize> = (0..config.concepts).collect();
    perm.shuffle(&mut rng);
    let tau = config.topic_divergence;
    let topic_y = (0..config.concepts)
        .map(|c| (1.0 - tau) * topic_x[c] + tau * topic_x[perm[c]])
        .collect();

    Ok(ConceptWorld {
        config: config.clone(),
        prototypes,
        visual,
        background,
        content_x,
        content_y,
        function_x,
        function_y,
        topic_x,
        topic_y,
    })
}

/// Clip records for one language plus the concepts behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub records: Vec<ClipRecord>,
    /// Concepts that generated each clip's features.
    pub feature_concepts: Vec<Vec<usize>>,
    /// Concepts mentioned by each caption.
    pub caption_concepts: Vec<Vec<usize>>,
}

impl SynthDataset {
    pub fn captions(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.caption.as_str())
    }

    /// The first `n` clips; smaller prefixes are nested in larger ones.
    pub fn prefix(&self, n: usize) -> SynthDataset {
        let n = n.min(self.records.len());
        SynthDataset {
            records: self.records[..n].to_vec(),
            feature_concepts: self.feature_concepts[..n].to_vec(),
            caption_concepts: self.caption_concepts[..n].to_vec(),
        }
    }
}

impl ConceptWorld {
    pub fn content_words(&self, lang: Language) -> &[String] {
        match lang {
            Language::X => &self.content_x,
            Language::Y => &self.content_y,
        }
    }

    pub fn function_words(&self, lang: Language) -> &[String] {
        match lang {
            Language::X => &self.function_x,
            Language::Y => &self.function_y,
        }
    }

    pub fn topic_distribution(&self, lang: Language) -> &[f64] {
        match lang {
            Language::X => &self.topic_x,
            Language::Y => &self.topic_y,
        }
    }

    fn cosine(&self, a: usize, b: usize) -> f64 {
        self.prototypes[a].iter().zip(&self.prototypes[b]).map(|(x, y)| x * y).sum()
    }

    fn concept_set<R: Rng>(&self, topic: &[f64], rng: &mut R) -> Vec<usize> {
        let first = WeightedIndex::new(topic).expect("valid topic weights").sample(rng);
        let mut set = vec![first];
        while set.len() < self.config.concepts_per_clip {
            let w: Vec<f64> = (0..topic.len())
                .map(|c| {
                    if set.contains(&c) {
                        0.0
                    } else {
                        topic[c] * (self.config.coherence * self.cosine(first, c)).exp()
                    }
                })
                .collect();
            set.push(WeightedIndex::new(&w).expect("positive weights remain").sample(rng));
        }
        set
    }

    /// Samples `n_clips` clips for `lang` from the substream `stream`.
    pub fn sample_dataset(&self, lang: Language, n_clips: usize, stream: u64) -> Result<SynthDataset> {
        if n_clips == 0 {
            return Err(Error::invalid("n_clips", "must be at least 1"));
        }
        let cfg = &self.config;
        let lang_tag = match lang {
            Language::X => 1,
            Language::Y => 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(cfg.seed, lang_tag), stream));
        let topic = self.topic_distribution(lang);
        let content = self.content_words(lang);
        let function = self.function_words(lang);
        let function_dist = (!function.is_empty()).then(|| {
            WeightedIndex::new(zipf_weights(function.len(), cfg.zipf_exponent)).expect("valid function weights")
        });
        let noise = Normal::new(0.0, cfg.feature_noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
        let prefix = match lang {
            Language::X => "x",
            Language::Y => "y",
        };

        let mut out = SynthDataset {
            records: Vec::with_capacity(n_clips),
            feature_concepts: Vec::with_capacity(n_clips),
            caption_concepts: Vec::with_capacity(n_clips),
        };
        for i in 0..n_clips {
            let concepts = self.concept_set(topic, &mut rng);
            let shown: Vec<&[f64]> = concepts
                .iter()
                .filter(|&&c| self.visual[c])
                .map(|&c| self.prototypes[c].as_slice())
                .collect();
            let mut features = vec![0.0; cfg.feature_dim];
            if shown.is_empty() {
                features.copy_from_slice(&self.background);
            }
            for p in &shown {
                for (f, v) in features.iter_mut().zip(p.iter()) {
                    *f += v / shown.len() as f64;
                }
            }
            if cfg.feature_noise_sigma > 0.0 {
                for f in &mut features {
                    *f += noise.sample(&mut rng);
                }
            }
            let mentioned = if rng.random::<f64>() < cfg.relevance_prob {
                concepts.clone()
            } else {
                self.concept_set(topic, &mut rng)
            };
            let mut tokens: Vec<&str> = mentioned.iter().map(|&c| content[c].as_str()).collect();
            if let Some(fd) = &function_dist {
                for _ in 0..mentioned.len() {
                    tokens.push(&function[fd.sample(&mut rng)]);
                }
            }
            tokens.shuffle(&mut rng);
            out.records.push(ClipRecord {
                id: format!("{prefix}-{i:06}"),
                features,
                caption: tokens.join(" "),
            });
            out.feature_concepts.push(concepts);
            out.caption_concepts.push(mentioned);
        }
        Ok(out)
    }
}

/// One entry per concept: X content word → {Y content word}.
pub fn ground_truth_dictionary(world: &ConceptWorld) -> BilingualDictionary {
    let mut d = BilingualDictionary::new();
    for (x, y) in world.content_x.iter().zip(&world.content_y) {
        d.insert(x.clone(), y.clone());
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedWorld {
    pub world: ConceptWorld,
    pub x: SynthDataset,
    pub y: SynthDataset,
    /// Caption-only sentences of each language.
    pub text_x: Vec<String>,
    pub text_y: Vec<String>,
}

impl GeneratedWorld {
    /// Clip captions followed by the caption-only text.
    pub fn corpus(&self, lang: Language) -> impl Iterator<Item = &str> {
        let (ds, text) = match lang {
            Language::X => (&self.x, &self.text_x),
            Language::Y => (&self.y, &self.text_y),
        };
        ds.captions().chain(text.iter().map(String::as_str))
    }
}

/// Generates the world and both datasets of `config`.
pub fn generate(config: &SynthConfig) -> Result<GeneratedWorld> {
    let world = generate_world(config)?;
    let x = world.sample_dataset(Language::X, config.clips_per_language, 0)?;
    let y = world.sample_dataset(Language::Y, config.clips_per_language, 0)?;
    let text = |lang| -> Result<Vec<String>> {
        let n = config.text_captions_per_language;
        if n == 0 {
            return Ok(Vec::new());
        }
        Ok(world.sample_dataset(lang, n, 1)?.records.into_iter().map(|r| r.caption).collect())
    };
    let (text_x, text_y) = (text(Language::X)?, text(Language::Y)?);
    Ok(GeneratedWorld {
        world,
        x,
        y,
        text_x,
        text_y,
    })
}

pub const CLIPS_X_FILE: &str = "clips_x.jsonl";
pub const CLIPS_Y_FILE: &str = "clips_y.jsonl";
pub const CORPUS_X_FILE: &str = "corpus_x.txt";
pub const CORPUS_Y_FILE: &str = "corpus_y.txt";
pub const GT_DICT_FILE: &str = "gt_dict.txt";
pub const WORLD_FILE: &str = "world.json";

impl GeneratedWorld {
    /// Writes clip JSON-lines, caption corpora, the ground-truth dictionary
    /// and a world manifest into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (lang, clips, corpus) in [(Language::X, CLIPS_X_FILE, CORPUS_X_FILE), (Language::Y, CLIPS_Y_FILE, CORPUS_Y_FILE)] {
            let ds = match lang {
                Language::X => &self.x,
                Language::Y => &self.y,
            };
            write_clip_records(dir.join(clips), &ds.records)?;
            let mut text = self.corpus(lang).collect::<Vec<_>>().join("\n");
            text.push('\n');
            let path = dir.join(corpus);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        ground_truth_dictionary(&self.world).save(dir.join(GT_DICT_FILE))?;
        let path = dir.join(WORLD_FILE);
        let manifest = serde_json::json!({
            "config": self.world.config,
            "content_x": self.world.content_x,
            "content_y": self.world.content_y,
            "function_x": self.world.function_x,
            "function_y": self.world.function_y,
            "visual": self.world.visual,
            "topic_x": self.world.topic_x,
            "topic_y": self.world.topic_y,
        });
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }
}
