//! Tensor container: a directory holding `manifest.json` and one raw
//! little-endian row-major `f32` file per tensor.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub tensors: Vec<TensorEntry>,
    /// Kind-specific metadata (dimensions, provenance, vocabulary files).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub struct TensorWriter {
    dir: PathBuf,
    manifest: Manifest,
}

impl TensorWriter {
    pub fn create(dir: impl AsRef<Path>, kind: &str) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            manifest: Manifest {
                kind: kind.to_owned(),
                tensors: Vec::new(),
                meta: serde_json::Value::Null,
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn add(&mut self, name: &str, m: &DMatrix<f64>) -> Result<()> {
        let file = format!("{name}.f32");
        let mut bytes = Vec::with_capacity(m.len() * 4);
        for row in m.row_iter() {
            for &x in row.iter() {
                bytes.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let path = self.dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.tensors.push(TensorEntry {
            name: name.to_owned(),
            shape: [m.nrows(), m.ncols()],
            dtype: "f32".into(),
            file,
        });
        Ok(())
    }

    pub fn finish(mut self, meta: serde_json::Value) -> Result<()> {
        self.manifest.meta = meta;
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

pub struct TensorReader {
    dir: PathBuf,
    manifest: Manifest,
}

impl TensorReader {
    pub fn open(dir: impl AsRef<Path>, kind: &str) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a `{kind}` container, found `{}`",
                manifest.kind
            )));
        }
        Ok(Self { dir, manifest })
    }

    pub fn meta(&self) -> &serde_json::Value {
        &self.manifest.meta
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn get(&self, name: &str) -> Result<DMatrix<f64>> {
        let entry = self
            .manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        if entry.dtype != "f32" {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has unsupported dtype `{}`",
                entry.dtype
            )));
        }
        let path = self.dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let [rows, cols] = entry.shape;
        if bytes.len() != rows * cols * 4 {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` holds {} bytes, shape {rows}x{cols} needs {}",
                bytes.len(),
                rows * cols * 4
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("tensor `{name}` has non-finite values")));
        }
        Ok(DMatrix::from_row_slice(rows, cols, &values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_layout_is_row_major_le_f32() {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.5]);
        let mut w = TensorWriter::create(dir.path(), "test").unwrap();
        w.add("m", &m).unwrap();
        w.finish(serde_json::json!({"k": 1})).unwrap();

        let bytes = fs::read(dir.path().join("m.f32")).unwrap();
        assert_eq!(&bytes[..4], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[4..8], &2.0f32.to_le_bytes());
        assert_eq!(&bytes[20..24], &6.5f32.to_le_bytes());

        let r = TensorReader::open(dir.path(), "test").unwrap();
        assert_eq!(r.get("m").unwrap(), m);
        assert_eq!(r.meta()["k"], 1);
        assert!(r.get("nope").is_err());
        assert!(TensorReader::open(dir.path(), "other").is_err());
    }
}
