use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub type Predictions = BTreeMap<String, Vec<String>>;

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    source: String,
    rank: usize,
    target: String,
}

/// `source,rank,target` rows, ranks starting at 1. A query with no
/// candidates is kept as a single row of rank 0 with an empty target.
pub fn write(path: &Path, preds: &Predictions) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for (source, targets) in preds {
        if targets.is_empty() {
            w.serialize(Row {
                source: source.clone(),
                rank: 0,
                target: String::new(),
            })?;
        }
        for (i, target) in targets.iter().enumerate() {
            w.serialize(Row {
                source: source.clone(),
                rank: i + 1,
                target: target.clone(),
            })?;
        }
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn read(path: &Path) -> Result<Predictions> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut ranked: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
    for (line, row) in r.deserialize::<Row>().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), line + 2))?;
        let list = ranked.entry(row.source).or_default();
        if row.rank > 0 {
            list.push((row.rank, row.target));
        }
    }
    let mut out = Predictions::new();
    for (source, mut list) in ranked {
        list.sort_by_key(|p| p.0);
        if list.windows(2).any(|w| w[0].0 == w[1].0) {
            bail!("{}: duplicate rank for `{source}`", path.display());
        }
        out.insert(source, list.into_iter().map(|p| p.1).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_rank_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let mut p = Predictions::new();
        p.insert("a".into(), vec!["x".into(), "y,z".into()]);
        p.insert("b".into(), vec![]);
        p.insert("c".into(), vec!["q".into()]);
        write(&path, &p).unwrap();
        let back = read(&path).unwrap();
        assert_eq!(back["a"], p["a"]);
        assert_eq!(back["c"], p["c"]);
        assert!(back["b"].is_empty());
    }
}
