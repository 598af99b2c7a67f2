//! Word embedding matrices: skip-gram training with negative sampling,
//! the plain-text vector format, and cosine nearest neighbours.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::linalg::{mix_seed, top_k_desc};

/// Dense per-word vectors bound to a vocabulary; row `i` belongs to token
/// id `i`. Special tokens have no rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    vocab: Vocabulary,
    vectors: Vec<f64>,
    dim: usize,
}

impl EmbeddingMatrix {
    pub fn new(vocab: Vocabulary, vectors: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        if vectors.len() != vocab.len() * dim {
            return Err(Error::dims(
                "embedding rows",
                vocab.len(),
                vectors.len() / dim,
            ));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("vectors", "entries must be finite"));
        }
        Ok(Self { vocab, vectors, dim })
    }

    pub fn from_dmatrix(vocab: Vocabulary, m: &DMatrix<f64>) -> Result<Self> {
        let mut vectors = Vec::with_capacity(m.len());
        for row in m.row_iter() {
            vectors.extend(row.iter());
        }
        Self::new(vocab, vectors, m.ncols())
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.vectors[id * self.dim..(id + 1) * self.dim]
    }

    pub fn vector(&self, word: &str) -> Option<&[f64]> {
        self.vocab.id(word).map(|id| self.row(id))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vectors
    }

    /// Rows as a `len × dim` matrix.
    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.vectors)
    }

    /// Mean-centers the rows (optional) and scales each row to unit norm.
    pub fn normalized(&self, center: bool) -> EmbeddingMatrix {
        let mut v = self.vectors.clone();
        let n = self.len();
        if center && n > 0 {
            let mut mean = vec![0.0; self.dim];
            for row in v.chunks(self.dim) {
                for (m, x) in mean.iter_mut().zip(row) {
                    *m += x;
                }
            }
            for m in &mut mean {
                *m /= n as f64;
            }
            for row in v.chunks_mut(self.dim) {
                for (x, m) in row.iter_mut().zip(&mean) {
                    *x -= m;
                }
            }
        }
        for row in v.chunks_mut(self.dim) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        EmbeddingMatrix {
            vocab: self.vocab.clone(),
            vectors: v,
            dim: self.dim,
        }
    }

    /// Keeps the first `n` rows (the `n` most frequent words).
    pub fn truncated(&self, n: usize) -> EmbeddingMatrix {
        let n = n.min(self.len());
        EmbeddingMatrix {
            vocab: self.vocab.truncated(n),
            vectors: self.vectors[..n * self.dim].to_vec(),
            dim: self.dim,
        }
    }

    /// Writes the text format: a `V d` header, then `token v1 .. vd` per row
    /// using shortest round-trip float formatting.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{} {}", self.len(), self.dim).map_err(io)?;
        for (id, token) in self.vocab.tokens().iter().enumerate() {
            w.write_all(token.as_bytes()).map_err(io)?;
            for x in self.row(id) {
                write!(w, " {x}").map_err(io)?;
            }
            w.write_all(b"\n").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Reads the text format written by [`EmbeddingMatrix::save`]. File
    /// order is taken as rank order.
    pub fn load(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::MalformedHeader {
            path: path.into(),
            reason: "file is empty".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let parse = |s: &str| s.parse::<usize>().ok();
        let (rows, dim) = match fields.as_slice() {
            [r, d] => match (parse(r), parse(d)) {
                (Some(r), Some(d)) if d > 0 => (r, d),
                _ => {
                    return Err(Error::MalformedHeader {
                        path: path.into(),
                        reason: format!("expected `V d` with positive d, got `{header}`"),
                    })
                }
            },
            _ => {
                return Err(Error::MalformedHeader {
                    path: path.into(),
                    reason: format!("expected two fields, got `{header}`"),
                })
            }
        };
        let mut tokens = Vec::with_capacity(rows);
        let mut vectors = Vec::with_capacity(rows * dim);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let token = parts.next().unwrap_or_default();
            let before = vectors.len();
            for p in parts {
                let x: f64 = p.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    reason: format!("bad float `{p}`"),
                })?;
                if !x.is_finite() {
                    return Err(Error::NonFinite {
                        path: path.into(),
                        line: lineno,
                    });
                }
                vectors.push(x);
            }
            let found = vectors.len() - before;
            if found != dim {
                return Err(Error::dims(format!("row at line {lineno}"), dim, found));
            }
            tokens.push(token.to_owned());
        }
        if tokens.len() != rows {
            return Err(Error::dims("row count vs header", rows, tokens.len()));
        }
        let counts = vec![0; tokens.len()];
        EmbeddingMatrix::new(Vocabulary::from_ranked(tokens, counts), vectors, dim)
    }
}

/// Cosine similarity; zero vectors score 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// The `k` rows most cosine-similar to `query`, descending, ties broken by
/// vocabulary rank.
pub fn cosine_knn(emb: &EmbeddingMatrix, query: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
    if query.len() != emb.dim() {
        return Err(Error::dims("cosine_knn query", emb.dim(), query.len()));
    }
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if query.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroNorm("cosine_knn query"));
    }
    let scores: Vec<f64> = (0..emb.len()).map(|i| cosine(emb.row(i), query)).collect();
    Ok(top_k_desc(&scores, k)
        .into_iter()
        .map(|i| (emb.vocab().token(i).to_owned(), scores[i]))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Worker count. One worker gives deterministic results; more workers
    /// race on row updates and are not reproducible.
    pub threads: usize,
    /// Frequent-word subsampling threshold; disabled when `None`.
    pub subsample: Option<f64>,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 1,
            threads: 1,
            subsample: None,
        }
    }
}

impl SkipGramConfig {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("dim", "must be at least 1"));
        }
        if self.window == 0 {
            return Err(Error::invalid("window", "must be at least 1"));
        }
        if self.negatives == 0 {
            return Err(Error::invalid("negatives", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        Ok(())
    }
}

/// Trained vectors plus the mean negative-sampling loss of every epoch.
pub struct SkipGramOutput {
    pub embeddings: EmbeddingMatrix,
    pub epoch_losses: Vec<f64>,
}

pub fn train_skipgram(
    sentences: &[Vec<String>],
    vocab: &Vocabulary,
    config: &SkipGramConfig,
) -> Result<EmbeddingMatrix> {
    train_skipgram_traced(sentences, vocab, config).map(|o| o.embeddings)
}

pub fn train_skipgram_traced(
    sentences: &[Vec<String>],
    vocab: &Vocabulary,
    config: &SkipGramConfig,
) -> Result<SkipGramOutput> {
    config.validate()?;
    if vocab.is_empty() {
        return Err(Error::invalid("vocab", "must not be empty"));
    }
    let encoded: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.iter().filter_map(|t| vocab.id(t)).collect::<Vec<_>>())
        .filter(|s| s.len() > 0)
        .collect();
    let n_tokens: usize = encoded.iter().map(Vec::len).sum();
    if n_tokens == 0 {
        return Err(Error::EmptyCorpus);
    }

    let dim = config.dim;
    let n_words = vocab.len();
    let mut init_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0));
    let input: Vec<AtomicU64> = (0..n_words * dim)
        .map(|_| {
            let x = (init_rng.random::<f64>() - 0.5) / dim as f64;
            AtomicU64::new(x.to_bits())
        })
        .collect();
    let output: Vec<AtomicU64> = (0..n_words * dim).map(|_| AtomicU64::new(0)).collect();

    let noise = NoiseTable::new(vocab.counts(), n_words);
    let keep_prob = keep_probabilities(vocab.counts(), config.subsample);

    let threads = config.threads.max(1);
    let total = (config.epochs * n_tokens).max(1);
    let processed = AtomicUsize::new(0);
    let shared = SharedParams {
        input: &input,
        output: &output,
        dim,
    };

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let chunk = encoded.len().div_ceil(threads);
        let results: Vec<(f64, usize)> = std::thread::scope(|scope| {
            let handles: Vec<_> = encoded
                .chunks(chunk.max(1))
                .enumerate()
                .map(|(worker, part)| {
                    let shared = &shared;
                    let noise = &noise;
                    let keep_prob = &keep_prob;
                    let processed = &processed;
                    let seed = mix_seed(config.seed, 1 + (epoch * threads + worker) as u64);
                    let run = move || {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        run_worker(
                            part, shared, noise, keep_prob, config, total, processed, &mut rng,
                        )
                    };
                    if threads == 1 {
                        // keep the deterministic path on the calling thread
                        Err(run)
                    } else {
                        Ok(scope.spawn(run))
                    }
                })
                .collect();
            handles
                .into_iter()
                .map(|h| match h {
                    Ok(handle) => handle.join().expect("skip-gram worker panicked"),
                    Err(run) => run(),
                })
                .collect()
        });
        let (loss, pairs) = results
            .iter()
            .fold((0.0, 0usize), |acc, r| (acc.0 + r.0, acc.1 + r.1));
        epoch_losses.push(if pairs > 0 { loss / pairs as f64 } else { 0.0 });
    }

    let vectors = input
        .iter()
        .map(|a| f64::from_bits(a.load(Ordering::Relaxed)))
        .collect();
    Ok(SkipGramOutput {
        embeddings: EmbeddingMatrix::new(vocab.clone(), vectors, dim)?,
        epoch_losses,
    })
}

struct SharedParams<'a> {
    input: &'a [AtomicU64],
    output: &'a [AtomicU64],
    dim: usize,
}

#[inline]
fn load(a: &AtomicU64) -> f64 {
    f64::from_bits(a.load(Ordering::Relaxed))
}

#[inline]
fn store(a: &AtomicU64, x: f64) {
    a.store(x.to_bits(), Ordering::Relaxed)
}

#[allow(clippy::too_many_arguments)]
fn run_worker(
    sentences: &[Vec<usize>],
    params: &SharedParams<'_>,
    noise: &NoiseTable,
    keep_prob: &Option<Vec<f64>>,
    config: &SkipGramConfig,
    total: usize,
    processed: &AtomicUsize,
    rng: &mut ChaCha8Rng,
) -> (f64, usize) {
    let dim = params.dim;
    let min_lr = config.learning_rate * 1e-4;
    let mut center = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut kept = Vec::new();
    let mut loss_sum = 0.0;
    let mut pairs = 0usize;

    for sentence in sentences {
        let done = processed.fetch_add(sentence.len(), Ordering::Relaxed);
        let lr = (config.learning_rate * (1.0 - done as f64 / total as f64)).max(min_lr);

        kept.clear();
        match keep_prob {
            Some(p) => kept.extend(sentence.iter().copied().filter(|&w| rng.random::<f64>() < p[w])),
            None => kept.extend_from_slice(sentence),
        }

        for pos in 0..kept.len() {
            let w = kept[pos];
            let reduced = rng.random_range(0..config.window);
            let span = config.window - reduced;
            let lo = pos.saturating_sub(span);
            let hi = (pos + span + 1).min(kept.len());
            for ctx_pos in lo..hi {
                if ctx_pos == pos {
                    continue;
                }
                let ctx = kept[ctx_pos];
                let in_row = &params.input[w * dim..(w + 1) * dim];
                for (c, a) in center.iter_mut().zip(in_row) {
                    *c = load(a);
                }
                grad.iter_mut().for_each(|g| *g = 0.0);

                for d in 0..=config.negatives {
                    let (target, label) = if d == 0 {
                        (ctx, 1.0)
                    } else {
                        let t = noise.sample(rng);
                        if t == ctx {
                            continue;
                        }
                        (t, 0.0)
                    };
                    let out_row = &params.output[target * dim..(target + 1) * dim];
                    let mut f = 0.0;
                    for (c, o) in center.iter().zip(out_row) {
                        f += c * load(o);
                    }
                    let sig = sigmoid(f);
                    loss_sum -= if label > 0.0 {
                        sig.max(1e-12).ln()
                    } else {
                        (1.0 - sig).max(1e-12).ln()
                    };
                    let g = (label - sig) * lr;
                    for ((gr, c), o) in grad.iter_mut().zip(&center).zip(out_row) {
                        let ov = load(o);
                        *gr += g * ov;
                        store(o, ov + g * c);
                    }
                }
                for (a, gr) in in_row.iter().zip(&grad) {
                    store(a, load(a) + gr);
                }
                pairs += 1;
            }
        }
    }
    (loss_sum, pairs)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Negative-sampling distribution proportional to `count^0.75`. Words with
/// no recorded count are treated as count 1.
struct NoiseTable {
    cumulative: Vec<f64>,
}

impl NoiseTable {
    fn new(counts: &[u64], n_words: usize) -> Self {
        let mut acc = 0.0;
        let cumulative = (0..n_words)
            .map(|i| {
                let c = counts.get(i).copied().unwrap_or(0).max(1) as f64;
                acc += c.powf(0.75);
                acc
            })
            .collect();
        Self { cumulative }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty vocabulary");
        let u = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

fn keep_probabilities(counts: &[u64], threshold: Option<f64>) -> Option<Vec<f64>> {
    let t = threshold?;
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return None;
    }
    Some(
        counts
            .iter()
            .map(|&c| {
                let f = c.max(1) as f64 / total as f64;
                ((f / t).sqrt() + 1.0) * t / f
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary_from_sentences;

    fn toy_vocab(words: &[&str]) -> Vocabulary {
        Vocabulary::from_ranked(
            words.iter().map(|w| w.to_string()).collect(),
            vec![1; words.len()],
        )
    }

    #[test]
    fn knn_self_similarity_and_ties() {
        let emb = EmbeddingMatrix::new(
            toy_vocab(&["a", "b", "c"]),
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 2.0],
            2,
        )
        .unwrap();
        let r = cosine_knn(&emb, &[0.0, 1.0], 3).unwrap();
        assert_eq!(r[0].0, "b");
        assert!((r[0].1 - 1.0).abs() < 1e-15);
        // b and c tie at 1.0; b has the better rank
        assert_eq!(r[1].0, "c");

        let emb = EmbeddingMatrix::new(toy_vocab(&["a", "b"]), vec![1.0, 0.0, 2.0, 0.0], 2).unwrap();
        let r = cosine_knn(&emb, &[0.0, 3.0], 2).unwrap();
        assert_eq!(r, vec![("a".to_string(), 0.0), ("b".to_string(), 0.0)]);
    }

    #[test]
    fn knn_errors() {
        let emb = EmbeddingMatrix::new(toy_vocab(&["a"]), vec![1.0, 0.0], 2).unwrap();
        assert!(matches!(cosine_knn(&emb, &[0.0, 0.0], 1), Err(Error::ZeroNorm(_))));
        assert!(matches!(
            cosine_knn(&emb, &[1.0], 1),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(cosine_knn(&emb, &[1.0, 0.0], 0).is_err());
    }

    #[test]
    fn knn_matches_exhaustive_oracle() {
        let vectors = vec![
            0.3, -1.0, 2.0, //
            1.0, 1.0, 1.0, //
            -2.0, 0.5, 0.0, //
            0.0, 0.0, 4.0, //
            1.5, -0.5, 0.2,
        ];
        let emb = EmbeddingMatrix::new(toy_vocab(&["a", "b", "c", "d", "e"]), vectors.clone(), 3).unwrap();
        let q = [0.5, 0.25, 1.0];
        // independent oracle: explicit formula, selection by repeated argmax
        let mut remaining: Vec<(usize, f64)> = vectors
            .chunks(3)
            .enumerate()
            .map(|(i, r)| {
                let dot: f64 = r.iter().zip(&q).map(|(a, b)| a * b).sum();
                let nr: f64 = r.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nq: f64 = q.iter().map(|a| a * a).sum::<f64>().sqrt();
                (i, dot / (nr * nq))
            })
            .collect();
        let mut oracle = Vec::new();
        while !remaining.is_empty() {
            let best = (0..remaining.len())
                .max_by(|&a, &b| remaining[a].1.partial_cmp(&remaining[b].1).unwrap().then(b.cmp(&a)))
                .unwrap();
            oracle.push(remaining.remove(best));
        }
        let got = cosine_knn(&emb, &q, 5).unwrap();
        for ((word, score), (i, s)) in got.iter().zip(&oracle) {
            assert_eq!(word, &["a", "b", "c", "d", "e"][*i]);
            assert!((score - s).abs() < 1e-12);
        }
    }

    #[test]
    fn text_format_header_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.vec");
        let emb = EmbeddingMatrix::new(
            toy_vocab(&["dog", "chat"]),
            vec![0.1, -2.5e-7, 3.0, 1.0 / 3.0, 0.0, -1e300],
            3,
        )
        .unwrap();
        emb.save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("2 3"));
        assert!(lines.next().unwrap().starts_with("dog "));
        assert!(text.ends_with('\n'));
        let back = EmbeddingMatrix::load(&path).unwrap();
        assert_eq!(back.as_slice(), emb.as_slice());
        assert_eq!(back.vocab().tokens(), emb.vocab().tokens());
    }

    #[test]
    fn load_error_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.vec");

        fs::write(&path, "two 3\n").unwrap();
        assert!(matches!(EmbeddingMatrix::load(&path), Err(Error::MalformedHeader { .. })));

        let row: Vec<String> = (0..299).map(|i| format!("{i}")).collect();
        fs::write(&path, format!("1 300\nw {}\n", row.join(" "))).unwrap();
        assert!(matches!(
            EmbeddingMatrix::load(&path),
            Err(Error::DimensionMismatch { expected: 300, found: 299, .. })
        ));

        fs::write(&path, "1 2\nw 1.0 NaN\n").unwrap();
        assert!(matches!(EmbeddingMatrix::load(&path), Err(Error::NonFinite { line: 2, .. })));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let sentences = vec![vec!["a".to_string(), "b".to_string()]];
        let vocab = build_vocabulary_from_sentences(&sentences, 10).unwrap();
        let cfg = SkipGramConfig {
            dim: 4,
            epochs: 0,
            seed: 5,
            ..Default::default()
        };
        let a = train_skipgram(&sentences, &vocab, &cfg).unwrap();
        let b = train_skipgram(&sentences, &vocab, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.as_slice().iter().all(|x| x.abs() <= 0.5 / 4.0));
        let trained = train_skipgram(&sentences, &vocab, &SkipGramConfig { epochs: 1, ..cfg }).unwrap();
        assert_ne!(trained.as_slice(), a.as_slice());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let vocab = toy_vocab(&["a"]);
        let cfg = SkipGramConfig { dim: 2, ..Default::default() };
        assert!(matches!(train_skipgram(&[], &vocab, &cfg), Err(Error::EmptyCorpus)));
        let oov = vec![vec!["zzz".to_string()]];
        assert!(matches!(train_skipgram(&oov, &vocab, &cfg), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn normalized_rows_are_centered_and_unit() {
        let emb = EmbeddingMatrix::new(toy_vocab(&["a", "b", "c"]), vec![1.0, 2.0, 3.0, 5.0, -1.0, 0.5], 2).unwrap();
        let n = emb.normalized(true);
        for i in 0..3 {
            let r = n.row(i);
            assert!(((r[0] * r[0] + r[1] * r[1]).sqrt() - 1.0).abs() < 1e-12);
        }
    }
}
