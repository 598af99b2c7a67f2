//! Bilingual dictionaries, Recall@n and the Jensen–Shannon corpus
//! dissimilarity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CooccurrenceTable;
use crate::error::{Error, Result};

/// Source word → accepted target words.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BilingualDictionary {
    entries: BTreeMap<String, BTreeSet<String>>,
}

impl BilingualDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, source: impl Into<String>, target: impl Into<String>) {
        self.entries.entry(source.into()).or_default().insert(target.into());
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, source: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(source)
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.entries
    }

    /// Every (source, target) pair, sources in lexical order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        self.entries
            .iter()
            .flat_map(|(s, ts)| ts.iter().map(move |t| (s.clone(), t.clone())))
            .collect()
    }

    /// The inverse relation, target → sources.
    pub fn inverted(&self) -> BilingualDictionary {
        let mut out = BilingualDictionary::new();
        for (s, t) in self.pairs() {
            out.insert(t, s);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut dict = Self::new();
        let mut bad = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.split_whitespace().collect();
            match cols.as_slice() {
                [] => {}
                [s, t] => dict.insert(*s, *t),
                _ => bad.push(i + 1),
            }
        }
        if !bad.is_empty() {
            return Err(Error::DictionaryFormat { lines: bad });
        }
        Ok(dict)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for (s, t) in self.pairs() {
            let _ = writeln!(out, "{s} {t}");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<BilingualDictionary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    BilingualDictionary::parse(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query: String,
    /// 1-based position of the first accepted translation in the full
    /// prediction list.
    pub rank: Option<usize>,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub recall: f64,
    pub queries_total: usize,
    pub queries_covered: usize,
    pub outcomes: Vec<QueryOutcome>,
}

impl EvalReport {
    pub fn hits(&self) -> usize {
        self.outcomes.iter().filter(|o| o.hit).count()
    }

    pub fn coverage(&self) -> f64 {
        if self.queries_total == 0 {
            0.0
        } else {
            self.queries_covered as f64 / self.queries_total as f64
        }
    }

    pub fn summary_line(&self) -> String {
        format!(
            "recall@{}={:.4} hits={} covered={}/{}",
            self.n,
            self.recall,
            self.hits(),
            self.queries_covered,
            self.queries_total
        )
    }

    /// `query,rank,hit` rows; the rank is -1 when no accepted word appears.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut body = String::from("query,rank,hit\n");
        for o in &self.outcomes {
            let rank = o.rank.map_or(-1, |r| r as i64);
            let _ = writeln!(body, "{},{},{}", o.query, rank, u8::from(o.hit));
        }
        w.write_all(body.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn markdown(&self) -> String {
        format!(
            "| n | recall | hits | covered | total |\n|---|---|---|---|---|\n| {} | {:.4} | {} | {} | {} |\n",
            self.n,
            self.recall,
            self.hits(),
            self.queries_covered,
            self.queries_total
        )
    }
}

/// Scores ranked predictions against the dictionary. Dictionary sources with
/// no prediction list are uncovered and left out of the recall denominator.
pub fn recall_at_n(predictions: &BTreeMap<String, Vec<String>>, dict: &BilingualDictionary, n: usize) -> Result<EvalReport> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let mut outcomes = Vec::new();
    for (query, accepted) in dict.entries() {
        let Some(preds) = predictions.get(query) else { continue };
        let rank = preds.iter().position(|p| accepted.contains(p)).map(|i| i + 1);
        outcomes.push(QueryOutcome {
            query: query.clone(),
            rank,
            hit: rank.is_some_and(|r| r <= n),
        });
    }
    let covered = outcomes.len();
    let hits = outcomes.iter().filter(|o| o.hit).count();
    Ok(EvalReport {
        n,
        recall: if covered == 0 { 0.0 } else { hits as f64 / covered as f64 },
        queries_total: dict.len(),
        queries_covered: covered,
        outcomes,
    })
}

/// Jensen–Shannon divergence with base-2 logarithms of two distributions on
/// the same support. Inputs are normalized here.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dims("distribution support", p.len(), q.len()));
    }
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    if !(sp > 0.0 && sq > 0.0) {
        return Err(Error::invalid("distribution", "needs positive total mass"));
    }
    let kl_term = |a: f64, m: f64| if a > 0.0 { a * (a / m).log2() } else { 0.0 };
    let mut js = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let (a, b) = (a / sp, b / sq);
        let m = 0.5 * (a + b);
        js += 0.5 * kl_term(a, m) + 0.5 * kl_term(b, m);
    }
    Ok(js.clamp(0.0, 1.0))
}

pub fn js_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    js_divergence(p, q).map(f64::sqrt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dissimilarity {
    /// Mean Jensen–Shannon distance over compared pairs.
    pub distance: f64,
    pub compared: usize,
    pub skipped: usize,
}

/// Compares per-word co-occurrence distributions of two corpora. Each
/// aligned pair `(a, b)` names a word id in corpus A and its counterpart in
/// corpus B; the context support is the aligned pair list itself. Pairs with
/// no mass on either side are skipped unless `smoothing` adds ε to every
/// count.
pub fn corpus_dissimilarity(
    cooc_a: &CooccurrenceTable,
    cooc_b: &CooccurrenceTable,
    aligned_pairs: &[(usize, usize)],
    smoothing: Option<f64>,
) -> Result<Dissimilarity> {
    if aligned_pairs.is_empty() {
        return Err(Error::invalid("aligned_pairs", "must be nonempty"));
    }
    if let Some(eps) = smoothing {
        if !(eps > 0.0) {
            return Err(Error::invalid("smoothing", "must be positive"));
        }
    }
    let eps = smoothing.unwrap_or(0.0);
    let (mut total, mut compared, mut skipped) = (0.0, 0, 0);
    for &(wa, wb) in aligned_pairs {
        let p: Vec<f64> = aligned_pairs.iter().map(|&(ca, _)| cooc_a.get(wa, ca) as f64 + eps).collect();
        let q: Vec<f64> = aligned_pairs.iter().map(|&(_, cb)| cooc_b.get(wb, cb) as f64 + eps).collect();
        if p.iter().sum::<f64>() <= 0.0 || q.iter().sum::<f64>() <= 0.0 {
            skipped += 1;
            continue;
        }
        total += js_distance(&p, &q)?;
        compared += 1;
    }
    if compared == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(Dissimilarity {
        distance: total / compared as f64,
        compared,
        skipped,
    })
}
