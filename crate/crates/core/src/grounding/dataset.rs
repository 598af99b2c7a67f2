use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{encode_sentence, tokenize, EncodedSentence, Vocabulary};
use crate::error::{Error, Result};

/// One line of the clip JSON-lines format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub id: String,
    pub features: Vec<f64>,
    pub caption: String,
}

/// A grounding feature vector paired with its encoded caption.
#[derive(Debug, Clone, PartialEq)]
pub struct NarratedClip {
    pub clip_id: String,
    pub features: Vec<f64>,
    pub caption: EncodedSentence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipDataset {
    clips: Vec<NarratedClip>,
    feature_dim: usize,
}

impl ClipDataset {
    pub fn new(clips: Vec<NarratedClip>) -> Result<Self> {
        let feature_dim = clips.first().map_or(0, |c| c.features.len());
        for c in &clips {
            if c.features.len() != feature_dim {
                return Err(Error::dims(
                    format!("features of clip `{}`", c.clip_id),
                    feature_dim,
                    c.features.len(),
                ));
            }
            if c.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(
                    "features",
                    format!("clip `{}` has non-finite features", c.clip_id),
                ));
            }
        }
        Ok(Self { clips, feature_dim })
    }

    /// Encodes caption records with `vocab`, padding to `max_len`.
    pub fn from_records(records: &[ClipRecord], vocab: &Vocabulary, max_len: usize) -> Result<Self> {
        let clips = records
            .iter()
            .map(|r| NarratedClip {
                clip_id: r.id.clone(),
                features: r.features.clone(),
                caption: encode_sentence(vocab, &tokenize(&r.caption), max_len),
            })
            .collect();
        Self::new(clips)
    }

    pub fn clips(&self) -> &[NarratedClip] {
        &self.clips
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Subset by index, preserving order of `indices`.
    pub fn select(&self, indices: &[usize]) -> ClipDataset {
        ClipDataset {
            clips: indices.iter().map(|&i| self.clips[i].clone()).collect(),
            feature_dim: self.feature_dim,
        }
    }
}

/// Fails when the two datasets share any clip id.
pub fn check_unpaired(a: &ClipDataset, b: &ClipDataset) -> Result<()> {
    let ids: HashSet<&str> = a.clips.iter().map(|c| c.clip_id.as_str()).collect();
    let shared: Vec<&str> = b
        .clips
        .iter()
        .map(|c| c.clip_id.as_str())
        .filter(|id| ids.contains(id))
        .collect();
    match shared.first() {
        None => Ok(()),
        Some(first) => Err(Error::PairedData {
            count: shared.len(),
            example: first.to_string(),
        }),
    }
}

pub fn read_clip_records(path: impl AsRef<Path>) -> Result<Vec<ClipRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ClipRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_clip_records(path: impl AsRef<Path>, records: &[ClipRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, caption: &str) -> ClipRecord {
        ClipRecord {
            id: id.into(),
            features: vec![1.0, 2.0],
            caption: caption.into(),
        }
    }

    #[test]
    fn overlapping_ids_are_rejected() {
        let vocab = Vocabulary::from_ranked(vec!["dog".into()], vec![1]);
        let a = ClipDataset::from_records(&[rec("c1", "dog"), rec("c2", "dog")], &vocab, 4).unwrap();
        let b = ClipDataset::from_records(&[rec("c3", "dog")], &vocab, 4).unwrap();
        let c = ClipDataset::from_records(&[rec("c2", "Dog")], &vocab, 4).unwrap();
        assert!(check_unpaired(&a, &b).is_ok());
        assert!(matches!(
            check_unpaired(&a, &c),
            Err(Error::PairedData { count: 1, .. })
        ));
    }

    #[test]
    fn jsonl_round_trip_and_dimension_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clips.jsonl");
        let records = vec![rec("a", "The dog."), rec("b", "")];
        write_clip_records(&path, &records).unwrap();
        assert_eq!(read_clip_records(&path).unwrap(), records);

        let vocab = Vocabulary::from_ranked(vec!["dog".into()], vec![1]);
        let mut bad = records.clone();
        bad[1].features.push(0.0);
        assert!(matches!(
            ClipDataset::from_records(&bad, &vocab, 4),
            Err(Error::DimensionMismatch { .. })
        ));

        fs::write(&path, "{\"id\": \"x\"}\n").unwrap();
        assert!(matches!(read_clip_records(&path), Err(Error::Parse { line: 1, .. })));
    }
}
