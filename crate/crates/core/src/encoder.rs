//! Sources of clip embeddings used by the gate, the gap evaluation and the
//! diarisation benchmark.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Clip;
use crate::error::{Error, Result};
use crate::model::{embed_pooled, mean_pool, Embedding, ModelConfig, ModelParams};

/// Anything that maps clips to embeddings deterministically.
pub trait Encoder {
    fn name(&self) -> &str;

    fn embed_clips(&self, clips: &[&Clip]) -> Result<Vec<Embedding>>;

    fn embed_clip(&self, clip: &Clip) -> Result<Embedding> {
        Ok(self.embed_clips(&[clip])?.remove(0))
    }
}

/// Normalized mean-pooled raw frame features; the untrained baseline.
#[derive(Clone, Debug, Default)]
pub struct PassThrough;

impl Encoder for PassThrough {
    fn name(&self) -> &str {
        "pass-through"
    }

    fn embed_clips(&self, clips: &[&Clip]) -> Result<Vec<Embedding>> {
        clips
            .iter()
            .map(|c| Ok(Embedding::from_raw(&mean_pool(&c.frames)?)))
            .collect()
    }
}

/// The projection head in evaluation mode.
#[derive(Clone, Debug)]
pub struct Trained {
    pub name: String,
    pub params: ModelParams,
    pub config: ModelConfig,
}

impl Encoder for Trained {
    fn name(&self) -> &str {
        &self.name
    }

    fn embed_clips(&self, clips: &[&Clip]) -> Result<Vec<Embedding>> {
        let pooled = clips
            .iter()
            .map(|c| mean_pool(&c.frames))
            .collect::<Result<Vec<_>>>()?;
        embed_pooled(&self.params, &self.config, &pooled)
    }
}

/// One row of an external embedding table file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableRow {
    pub clip_id: String,
    pub vector: Vec<f64>,
}

/// Precomputed embeddings keyed by clip id, e.g. exported from another encoder.
#[derive(Clone, Debug)]
pub struct Table {
    name: String,
    dim: usize,
    rows: HashMap<String, Vec<f64>>,
}

impl Table {
    pub fn new(name: impl Into<String>, rows: Vec<TableRow>, expected_dim: Option<usize>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Insufficient("embedding table is empty".into()))?;
        let dim = expected_dim.unwrap_or(first.vector.len());
        let mut map = HashMap::with_capacity(rows.len());
        for r in rows {
            if r.vector.len() != dim {
                return Err(Error::shape(
                    "embedding table",
                    format!("{} has dim {}, expected {dim}", r.clip_id, r.vector.len()),
                ));
            }
            if r.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("embedding of {}", r.clip_id)));
            }
            if map.insert(r.clip_id.clone(), r.vector).is_some() {
                return Err(Error::invalid(format!("duplicate clip id {} in embedding table", r.clip_id)));
            }
        }
        Ok(Self {
            name: name.into(),
            dim,
            rows: map,
        })
    }

    /// Reads newline-delimited `{"clip_id": .., "vector": [..]}` records.
    pub fn read(path: &Path, name: impl Into<String>, expected_dim: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: TableRow = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            rows.push(row);
        }
        Self::new(name, rows, expected_dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Encoder for Table {
    fn name(&self) -> &str {
        &self.name
    }

    fn embed_clips(&self, clips: &[&Clip]) -> Result<Vec<Embedding>> {
        clips
            .iter()
            .map(|c| {
                self.rows
                    .get(&c.clip_id)
                    .map(|v| Embedding::from_raw(v))
                    .ok_or_else(|| Error::Insufficient(format!("no embedding for clip {}", c.clip_id)))
            })
            .collect()
    }
}

/// One-hot vector per voice: a perfectly separable reference encoder.
#[derive(Clone, Debug)]
pub struct OneHotVoice {
    voices: Vec<String>,
}

impl OneHotVoice {
    pub fn new(voices: Vec<String>) -> Self {
        Self { voices }
    }
}

impl Encoder for OneHotVoice {
    fn name(&self) -> &str {
        "oracle-one-hot"
    }

    fn embed_clips(&self, clips: &[&Clip]) -> Result<Vec<Embedding>> {
        clips
            .iter()
            .map(|c| {
                let k = self
                    .voices
                    .iter()
                    .position(|v| *v == c.voice)
                    .ok_or_else(|| Error::invalid(format!("unknown voice {}", c.voice)))?;
                let mut v = vec![0.0; self.voices.len()];
                v[k] = 1.0;
                Ok(Embedding::from_raw(&v))
            })
            .collect()
    }
}
