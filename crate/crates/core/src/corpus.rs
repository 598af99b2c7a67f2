//! Tokenization, vocabularies, fixed-length sentence encoding and
//! same-sentence co-occurrence counts.
//!
//! Vocabulary ids are laid out in rank order: the `len()` corpus tokens
//! occupy `0..len()`, followed by the UNK id and the PAD id.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Default vocabulary cap per language.
pub const DEFAULT_MAX_VOCAB: usize = 65_536;
/// Default encoded sentence length.
pub const DEFAULT_SENTENCE_LEN: usize = 10;

pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";

/// Lowercases `text`, splits it on Unicode whitespace and strips
/// non-alphanumeric characters from both ends of every token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

/// Reads a corpus with one sentence per line, tokenizing each line.
/// Lines that produce no tokens are dropped.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut sentences = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let tokens = tokenize(&line);
        if !tokens.is_empty() {
            sentences.push(tokens);
        }
    }
    Ok(sentences)
}

/// Token frequency counts; shards can be counted independently and merged.
#[derive(Debug, Clone, Default)]
pub struct TokenCounts {
    counts: HashMap<String, u64>,
}

impl TokenCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<S: AsRef<str>>(&mut self, token: S) {
        let token = token.as_ref();
        if let Some(c) = self.counts.get_mut(token) {
            *c += 1;
        } else {
            self.counts.insert(token.to_owned(), 1);
        }
    }

    pub fn extend<I, S>(&mut self, tokens: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        for t in tokens {
            self.add(t);
        }
    }

    pub fn merge(&mut self, other: TokenCounts) {
        for (token, c) in other.counts {
            *self.counts.entry(token).or_insert(0) += c;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn into_vocabulary(self, max_size: usize) -> Result<Vocabulary> {
        if max_size == 0 {
            return Err(Error::invalid("max_size", "must be at least 1"));
        }
        if self.counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut entries: Vec<(String, u64)> = self.counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(max_size);
        let (tokens, counts) = entries.into_iter().unzip();
        Ok(Vocabulary::from_ranked(tokens, counts))
    }
}

/// Frequency-ranked token-to-id map with UNK and PAD ids after the corpus
/// tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from tokens already in rank order.
    pub fn from_ranked(tokens: Vec<String>, counts: Vec<u64>) -> Self {
        debug_assert_eq!(tokens.len(), counts.len());
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            counts,
            index,
        }
    }

    /// Number of corpus tokens (special tokens excluded).
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Size of the id space, including UNK and PAD.
    pub fn id_space(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn unk_id(&self) -> usize {
        self.tokens.len()
    }

    pub fn pad_id(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or_else(|| self.unk_id())
    }

    pub fn token(&self, id: usize) -> &str {
        if id < self.tokens.len() {
            &self.tokens[id]
        } else if id == self.unk_id() {
            UNK_TOKEN
        } else {
            PAD_TOKEN
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Keeps the `max_size` highest-ranked tokens.
    pub fn truncated(&self, max_size: usize) -> Vocabulary {
        let n = max_size.min(self.len());
        Vocabulary::from_ranked(self.tokens[..n].to_vec(), self.counts[..n].to_vec())
    }

    /// Writes one token per line in rank order, with a tab-separated count.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            writeln!(w, "{t}\t{c}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a vocabulary file. The count column is optional; missing
    /// counts load as zero and file order is taken as rank order.
    pub fn load(path: impl AsRef<Path>) -> Result<Vocabulary> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let token = parts.next().unwrap_or_default();
            let count = match parts.next() {
                Some(c) => c.trim().parse::<u64>().map_err(|e| Error::Parse {
                    line: lineno + 1,
                    reason: format!("bad count `{c}`: {e}"),
                })?,
                None => 0,
            };
            tokens.push(token.to_owned());
            counts.push(count);
        }
        Ok(Vocabulary::from_ranked(tokens, counts))
    }
}

/// Builds a vocabulary of the `max_size` most frequent tokens, ties broken
/// by ascending lexicographic order.
pub fn build_vocabulary<I, S>(corpus: I, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts = TokenCounts::new();
    counts.extend(corpus);
    counts.into_vocabulary(max_size)
}

/// Convenience wrapper over sentence-structured corpora.
pub fn build_vocabulary_from_sentences(
    sentences: &[Vec<String>],
    max_size: usize,
) -> Result<Vocabulary> {
    build_vocabulary(sentences.iter().flatten(), max_size)
}

/// A sentence as a fixed-length id sequence; positions at or beyond
/// `true_length` hold the PAD id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSentence {
    pub ids: Vec<usize>,
    pub true_length: usize,
}

impl EncodedSentence {
    /// The non-pad prefix.
    pub fn tokens(&self) -> &[usize] {
        &self.ids[..self.true_length]
    }

    pub fn decode<'v>(&self, vocab: &'v Vocabulary) -> Vec<&'v str> {
        self.tokens().iter().map(|&id| vocab.token(id)).collect()
    }
}

pub fn encode_sentence<S: AsRef<str>>(
    vocab: &Vocabulary,
    tokens: &[S],
    max_len: usize,
) -> EncodedSentence {
    let true_length = tokens.len().min(max_len);
    let mut ids = Vec::with_capacity(max_len);
    ids.extend(
        tokens[..true_length]
            .iter()
            .map(|t| vocab.id_or_unk(t.as_ref())),
    );
    ids.resize(max_len, vocab.pad_id());
    EncodedSentence { ids, true_length }
}

/// Symmetric same-sentence co-occurrence counts indexed by vocabulary id.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceTable {
    rows: Vec<HashMap<usize, u64>>,
}

impl CooccurrenceTable {
    pub fn new(vocab_len: usize) -> Self {
        Self {
            rows: vec![HashMap::new(); vocab_len],
        }
    }

    /// Counts every unordered pair of positions holding distinct
    /// in-vocabulary words.
    pub fn add_sentence(&mut self, ids: &[usize]) {
        let n_words = self.rows.len();
        for (i, &a) in ids.iter().enumerate() {
            if a >= n_words {
                continue;
            }
            for &b in &ids[i + 1..] {
                if b >= n_words || a == b {
                    continue;
                }
                *self.rows[a].entry(b).or_insert(0) += 1;
                *self.rows[b].entry(a).or_insert(0) += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &CooccurrenceTable) {
        if other.rows.len() > self.rows.len() {
            self.rows.resize(other.rows.len(), HashMap::new());
        }
        for (row, other_row) in self.rows.iter_mut().zip(&other.rows) {
            for (&k, &v) in other_row {
                *row.entry(k).or_insert(0) += v;
            }
        }
    }

    pub fn get(&self, a: usize, b: usize) -> u64 {
        self.rows
            .get(a)
            .and_then(|r| r.get(&b))
            .copied()
            .unwrap_or(0)
    }

    pub fn row(&self, a: usize) -> &HashMap<usize, u64> {
        &self.rows[a]
    }

    pub fn n_words(&self) -> usize {
        self.rows.len()
    }
}

pub fn cooccurrence(sentences: &[Vec<String>], vocab: &Vocabulary) -> CooccurrenceTable {
    let mut table = CooccurrenceTable::new(vocab.len());
    let mut ids = Vec::new();
    for sentence in sentences {
        ids.clear();
        ids.extend(sentence.iter().filter_map(|t| vocab.id(t)));
        table.add_sentence(&ids);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(str::to_owned).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The Dog eats."), vec!["the", "dog", "eats"]);
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("Faire un bonhomme de neige"),
            vec!["faire", "un", "bonhomme", "de", "neige"]
        );
        assert_eq!(tokenize("  «Bonjour», l'ami!  "), vec!["bonjour", "l'ami"]);
        assert!(tokenize("... --- !!!").is_empty());
    }

    #[test]
    fn vocabulary_frequency_order_and_ties() {
        let v = build_vocabulary(toks("c b a a b a"), 2).unwrap();
        assert_eq!(v.tokens(), &["a", "b"]);
        assert_eq!(v.counts(), &[3, 2]);

        let v = build_vocabulary(toks("b a b a"), 2).unwrap();
        assert_eq!(v.tokens(), &["a", "b"]);
    }

    #[test]
    fn vocabulary_special_ids() {
        let v = build_vocabulary(toks("a b"), 10).unwrap();
        assert_eq!(v.unk_id(), 2);
        assert_eq!(v.pad_id(), 3);
        assert_eq!(v.token(2), UNK_TOKEN);
        assert_eq!(v.id_or_unk("zzz"), 2);
    }

    #[test]
    fn vocabulary_errors() {
        assert!(matches!(
            build_vocabulary(Vec::<String>::new(), 5),
            Err(Error::EmptyCorpus)
        ));
        assert!(build_vocabulary(toks("a"), 0).is_err());
    }

    #[test]
    fn vocabulary_cap_on_large_corpus() {
        let mut counts = TokenCounts::new();
        for i in 0..100_000u32 {
            counts.add(format!("w{i}"));
            if i % 3 == 0 {
                counts.add(format!("w{i}"));
            }
        }
        let v = counts.into_vocabulary(DEFAULT_MAX_VOCAB).unwrap();
        assert_eq!(v.len(), 65_536);
        assert_eq!(v.id_space(), 65_538);
    }

    #[test]
    fn shard_merge_matches_single_pass() {
        let corpus = toks("x y z x y x q");
        let mut a = TokenCounts::new();
        a.extend(&corpus[..3]);
        let mut b = TokenCounts::new();
        b.extend(&corpus[3..]);
        a.merge(b);
        assert_eq!(
            a.into_vocabulary(10).unwrap(),
            build_vocabulary(&corpus, 10).unwrap()
        );
    }

    #[test]
    fn encode_examples() {
        let v = build_vocabulary(toks("dog cat dog"), 10).unwrap();
        let e = encode_sentence(&v, &["dog"], 4);
        assert_eq!(e.ids, vec![0, v.pad_id(), v.pad_id(), v.pad_id()]);
        assert_eq!(e.true_length, 1);

        let e = encode_sentence(&v, &["wolf"], 3);
        assert_eq!(e.ids, vec![v.unk_id(), v.pad_id(), v.pad_id()]);

        let long: Vec<&str> = ["dog", "cat"].iter().cycle().take(12).copied().collect();
        let e = encode_sentence(&v, &long, 10);
        assert_eq!(e.ids.len(), 10);
        assert_eq!(e.true_length, 10);
        assert_eq!(e.decode(&v), long[..10].to_vec());
    }

    #[test]
    fn cooccurrence_examples() {
        let v = build_vocabulary(toks("a b c"), 10).unwrap();
        let (a, b) = (v.id("a").unwrap(), v.id("b").unwrap());

        let t = cooccurrence(&[toks("a b")], &v);
        assert_eq!(t.get(a, b), 1);

        let t = cooccurrence(&[toks("a a b")], &v);
        assert_eq!(t.get(a, b), 2);
        assert_eq!(t.get(b, a), 2);
        assert_eq!(t.get(a, a), 0);

        let t = cooccurrence(&[toks("a"), toks("b")], &v);
        assert_eq!(t.get(a, b), 0);
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = build_vocabulary(toks("a b b c c c"), 10).unwrap();
        v.save(&path).unwrap();
        assert_eq!(Vocabulary::load(&path).unwrap(), v);

        fs::write(&path, "x\ny\n").unwrap();
        let v = Vocabulary::load(&path).unwrap();
        assert_eq!(v.tokens(), &["x", "y"]);
        assert_eq!(v.counts(), &[0, 0]);
    }
}
