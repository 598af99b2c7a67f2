//! End-to-end experiments on synthetic worlds: embeddings, grounding,
//! every translation method and Recall@n on the ground-truth dictionary.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::alignment::{
    iterative_procrustes, muve_align, supervised_align, translate_with_map, IterativeConfig, LinearMap, MuveConfig,
    Retrieval,
};
use crate::baselines::{build_pseudo_parallel, random_chance_recall, JointProbTable, JointRanking, DEFAULT_NEIGHBOURS};
use crate::corpus::{build_vocabulary_from_sentences, tokenize, Vocabulary, DEFAULT_MAX_VOCAB, DEFAULT_SENTENCE_LEN};
use crate::embeddings::{train_skipgram, EmbeddingMatrix, SkipGramConfig};
use crate::error::Result;
use crate::eval::{recall_at_n, BilingualDictionary};
use crate::grounding::{train, ClipDataset, GroundTrainConfig, GroundingModel, Language, TranslationIndex};
use crate::linalg::mix_seed;
use crate::synthworld::{generate, ground_truth_dictionary, GeneratedWorld, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Chance,
    VideoRetrieval,
    BaseModel,
    Muve,
    IterativeProcrustes,
    Supervised,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Chance,
        Method::VideoRetrieval,
        Method::BaseModel,
        Method::Muve,
        Method::IterativeProcrustes,
        Method::Supervised,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Chance => "chance",
            Method::VideoRetrieval => "video_retrieval",
            Method::BaseModel => "base_model",
            Method::Muve => "muve",
            Method::IterativeProcrustes => "iterative_procrustes",
            Method::Supervised => "supervised",
        }
    }
}

/// Target-side reductions applied before any training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    /// Fraction of language-Y clips (and therefore captions) kept.
    pub y_data_fraction: f64,
    /// Fraction of the language-Y content vocabulary kept, most frequent
    /// first; function words are always kept.
    pub y_vocab_fraction: f64,
}

impl Default for Condition {
    fn default() -> Self {
        Self {
            y_data_fraction: 1.0,
            y_vocab_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub skipgram: SkipGramConfig,
    pub ground: GroundTrainConfig,
    pub muve: MuveConfig,
    pub iterative: IterativeConfig,
    /// Center and unit-normalize embeddings before grounding and alignment.
    pub normalize_embeddings: bool,
    pub csls_k: usize,
    pub chance_trials: usize,
    pub methods: Vec<Method>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig {
                coherence: 20.0,
                zipf_exponent: 0.5,
                visual_fraction: 0.8,
                text_captions_per_language: 100_000,
                ..Default::default()
            },
            skipgram: SkipGramConfig {
                dim: 64,
                window: 5,
                negatives: 5,
                epochs: 8,
                ..Default::default()
            },
            ground: GroundTrainConfig {
                hidden_dim: 48,
                joint_dim: 64,
                steps: 4_000,
                learning_rate: 0.01,
                score_scale: 5.0,
                ortho_weight: 0.01,
                freeze_word_embeddings: true,
                ..Default::default()
            },
            muve: MuveConfig::default(),
            iterative: IterativeConfig::default(),
            normalize_embeddings: true,
            csls_k: 10,
            chance_trials: 1_000,
            methods: Method::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    /// The same experiment on the world generated from `seed`, with all
    /// training seeds derived from it.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.synth.seed = seed;
        c.skipgram.seed = mix_seed(seed, 11);
        c.ground.seed = mix_seed(seed, 12);
        c.iterative.seed = mix_seed(seed, 13);
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: Method,
    pub recall_at_1: f64,
    pub recall_at_10: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub seed: u64,
    pub condition: Condition,
    pub scores: Vec<MethodScore>,
    /// Ground-truth entries evaluable under the condition.
    pub queries: usize,
}

impl ExperimentResult {
    pub fn score(&self, method: Method) -> Option<&MethodScore> {
        self.scores.iter().find(|s| s.method == method)
    }
}

/// Everything the methods need, built once per world and condition.
pub struct PreparedWorld {
    pub generated: GeneratedWorld,
    pub vocab_x: Vocabulary,
    pub vocab_y: Vocabulary,
    pub emb_x: EmbeddingMatrix,
    pub emb_y: EmbeddingMatrix,
    pub clips_x: ClipDataset,
    pub clips_y: ClipDataset,
    /// Ground-truth entries whose source and target are both in vocabulary.
    pub dictionary: BilingualDictionary,
}

fn tokenized<'a>(captions: impl Iterator<Item = &'a str>) -> Vec<Vec<String>> {
    captions.map(tokenize).collect()
}

/// Keeps every function word plus the most frequent `fraction` of the
/// remaining words (at least one), preserving rank order.
pub fn truncate_content(vocab: &Vocabulary, function_words: &[String], fraction: f64) -> Vocabulary {
    let function: HashSet<&str> = function_words.iter().map(String::as_str).collect();
    let content = vocab.tokens().iter().filter(|t| !function.contains(t.as_str())).count();
    let mut quota = ((content as f64 * fraction).ceil() as usize).clamp(1, content.max(1));
    let (mut tokens, mut counts) = (Vec::new(), Vec::new());
    for (t, &c) in vocab.tokens().iter().zip(vocab.counts()) {
        let is_function = function.contains(t.as_str());
        if is_function || quota > 0 {
            if !is_function {
                quota -= 1;
            }
            tokens.push(t.clone());
            counts.push(c);
        }
    }
    Vocabulary::from_ranked(tokens, counts)
}

pub fn prepare(config: &ExperimentConfig, condition: Condition) -> Result<PreparedWorld> {
    let mut generated = generate(&config.synth)?;
    let n_y = ((generated.y.records.len() as f64 * condition.y_data_fraction).ceil() as usize).max(1);
    generated.y = generated.y.prefix(n_y);
    let n_text = (generated.text_y.len() as f64 * condition.y_data_fraction).ceil() as usize;
    generated.text_y.truncate(n_text);

    let sent_x = tokenized(generated.corpus(Language::X));
    let sent_y = tokenized(generated.corpus(Language::Y));
    let vocab_x = build_vocabulary_from_sentences(&sent_x, DEFAULT_MAX_VOCAB)?;
    let full_y = build_vocabulary_from_sentences(&sent_y, DEFAULT_MAX_VOCAB)?;
    let vocab_y = truncate_content(&full_y, &generated.world.function_y, condition.y_vocab_fraction);

    let sg_x = SkipGramConfig {
        seed: mix_seed(config.skipgram.seed, 1),
        ..config.skipgram.clone()
    };
    let sg_y = SkipGramConfig {
        seed: mix_seed(config.skipgram.seed, 2),
        ..config.skipgram.clone()
    };
    let mut emb_x = train_skipgram(&sent_x, &vocab_x, &sg_x)?;
    let mut emb_y = train_skipgram(&sent_y, &vocab_y, &sg_y)?;
    if config.normalize_embeddings {
        emb_x = emb_x.normalized(true);
        emb_y = emb_y.normalized(true);
    }

    let clips_x = ClipDataset::from_records(&generated.x.records, &vocab_x, DEFAULT_SENTENCE_LEN)?;
    let clips_y = ClipDataset::from_records(&generated.y.records, &vocab_y, DEFAULT_SENTENCE_LEN)?;

    let mut dictionary = BilingualDictionary::new();
    for (s, ts) in ground_truth_dictionary(&generated.world).entries() {
        if vocab_x.contains(s) {
            for t in ts.iter().filter(|t| vocab_y.contains(t)) {
                dictionary.insert(s.clone(), t.clone());
            }
        }
    }

    Ok(PreparedWorld {
        generated,
        vocab_x,
        vocab_y,
        emb_x,
        emb_y,
        clips_x,
        clips_y,
        dictionary,
    })
}

pub type Predictions = BTreeMap<String, Vec<String>>;

const TOP: usize = 10;

pub fn train_grounding(config: &ExperimentConfig, world: &PreparedWorld) -> Result<GroundingModel> {
    let model = config
        .ground
        .init_model(&world.emb_x, &world.emb_y, world.clips_x.feature_dim())?;
    let out = train(&model, &world.clips_x, &world.clips_y, &config.ground)?;
    for v in &out.validation {
        log::debug!("grounding step {}: validation {:.4}", v.step, v.loss);
    }
    Ok(out.model)
}

pub fn base_model_predictions(model: &GroundingModel, dict: &BilingualDictionary) -> Result<Predictions> {
    let index = TranslationIndex::new(model)?;
    let mut out = Predictions::new();
    for q in dict.sources() {
        let ranked = index.translate(q, TOP)?;
        out.insert(q.to_owned(), ranked.into_iter().map(|(w, _)| w).collect());
    }
    Ok(out)
}

pub fn map_predictions(config: &ExperimentConfig, world: &PreparedWorld, map: &LinearMap) -> Result<Predictions> {
    let queries: Vec<String> = world.dictionary.sources().map(str::to_owned).collect();
    translate_with_map(
        map,
        &world.emb_x,
        &world.emb_y,
        &queries,
        TOP,
        Retrieval::Csls { k: config.csls_k },
    )
}

pub fn muve_map(config: &ExperimentConfig, world: &PreparedWorld, model: &GroundingModel) -> Result<LinearMap> {
    muve_align(
        &LinearMap::from_adapt_layer(&model.adapt),
        &world.emb_x.to_dmatrix(),
        &world.emb_y.to_dmatrix(),
        &config.muve,
    )
}

pub fn iterative_map(config: &ExperimentConfig, world: &PreparedWorld) -> Result<LinearMap> {
    Ok(iterative_procrustes(&world.emb_x.to_dmatrix(), &world.emb_y.to_dmatrix(), &config.iterative)?.map)
}

pub fn video_retrieval_predictions(world: &PreparedWorld) -> Result<Predictions> {
    let corpus = build_pseudo_parallel(&world.clips_x, &world.clips_y, DEFAULT_NEIGHBOURS)?;
    let table = JointProbTable::new(&corpus, &world.vocab_x, &world.vocab_y);
    let mut out = Predictions::new();
    for q in world.dictionary.sources() {
        let id = world.vocab_x.id(q).expect("dictionary filtered to vocabulary");
        let ranked = match table.rank(id, &world.vocab_y, TOP) {
            JointRanking::Ranked(r) => r.into_iter().map(|(w, _)| w).collect(),
            JointRanking::Unobserved => Vec::new(),
        };
        out.insert(q.to_owned(), ranked);
    }
    Ok(out)
}

fn score(method: Method, preds: &Predictions, dict: &BilingualDictionary) -> Result<MethodScore> {
    let r1 = recall_at_n(preds, dict, 1)?;
    let r10 = recall_at_n(preds, dict, 10)?;
    Ok(MethodScore {
        method,
        recall_at_1: r1.recall,
        recall_at_10: r10.recall,
        coverage: r1.coverage(),
    })
}

/// Runs the configured methods on one world under one condition.
pub fn run_experiment(config: &ExperimentConfig, condition: Condition) -> Result<ExperimentResult> {
    let world = prepare(config, condition)?;
    let dict = &world.dictionary;
    let mut scores = Vec::new();
    let mut model = None;
    for &method in &config.methods {
        let s = match method {
            Method::Chance => {
                let v = world.vocab_y.len();
                let est1 = random_chance_recall(dict, v, 1, config.chance_trials, mix_seed(config.synth.seed, 21))?;
                let est10 =
                    random_chance_recall(dict, v, TOP.min(v), config.chance_trials, mix_seed(config.synth.seed, 22))?;
                MethodScore {
                    method,
                    recall_at_1: est1.expectation,
                    recall_at_10: est10.expectation,
                    coverage: 1.0,
                }
            }
            Method::VideoRetrieval => score(method, &video_retrieval_predictions(&world)?, dict)?,
            Method::BaseModel => {
                let m = model.get_or_insert(train_grounding(config, &world)?);
                score(method, &base_model_predictions(m, dict)?, dict)?
            }
            Method::Muve => {
                if model.is_none() {
                    model = Some(train_grounding(config, &world)?);
                }
                let map = muve_map(config, &world, model.as_ref().expect("trained"))?;
                score(method, &map_predictions(config, &world, &map)?, dict)?
            }
            Method::IterativeProcrustes => {
                let map = iterative_map(config, &world)?;
                score(method, &map_predictions(config, &world, &map)?, dict)?
            }
            Method::Supervised => {
                let sup = supervised_align(&world.emb_x, &world.emb_y, &dict.pairs())?;
                score(method, &map_predictions(config, &world, &sup.map)?, dict)?
            }
        };
        log::info!(
            "seed {} {:?}: {} R@1={:.3} R@10={:.3}",
            config.synth.seed,
            condition,
            method.name(),
            s.recall_at_1,
            s.recall_at_10
        );
        scores.push(s);
    }
    Ok(ExperimentResult {
        seed: config.synth.seed,
        condition,
        scores,
        queries: dict.len(),
    })
}
