//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "LASE1" u32 version
//! u64 input_dim, hidden_dim, embed_dim, classifier_hidden, num_languages
//! f64 dropout_rate
//! 8 × f64[numel]            parameters in declaration order
//! [ "OPT1" u64 step_count 8 × f64[numel] first moments 8 × f64[numel] second moments ]
//! [ "TRN1" u64 step  rng sampler  rng dropout ]   rng = u64 seed, u64 stream, u128 word_pos
//! ```
//!
//! Both optional sections may be absent; nothing may follow them. Floats are
//! stored bit-exactly, so a round trip reproduces every value.

use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::{RngState, Tensor};
use crate::optimizer::OptimState;

const MAGIC: &[u8; 5] = b"LASE1";
const VERSION: u32 = 1;
const OPT_TAG: &[u8; 4] = b"OPT1";
const TRN_TAG: &[u8; 4] = b"TRN1";

/// Trainer position needed to resume bit-identically.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainerSnapshot {
    pub step: u64,
    pub sampler: RngState,
    pub dropout: RngState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub optim: Option<OptimState>,
    pub trainer: Option<TrainerSnapshot>,
}

impl Checkpoint {
    pub fn weights_only(config: ModelConfig, params: ModelParams) -> Self {
        Self {
            config,
            params,
            optim: None,
            trainer: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * 3 * self.params.count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let c = &self.config;
        for d in [c.input_dim, c.hidden_dim, c.embed_dim, c.classifier_hidden, c.num_languages] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&c.dropout_rate.to_le_bytes());
        put_tensors(&mut out, self.params.tensors());
        if let Some(opt) = &self.optim {
            out.extend_from_slice(OPT_TAG);
            out.extend_from_slice(&opt.step_count.to_le_bytes());
            put_tensors(&mut out, &opt.first_moment);
            put_tensors(&mut out, &opt.second_moment);
        }
        if let Some(t) = &self.trainer {
            out.extend_from_slice(TRN_TAG);
            out.extend_from_slice(&t.step.to_le_bytes());
            for s in [t.sampler, t.dropout] {
                out.extend_from_slice(&s.seed.to_le_bytes());
                out.extend_from_slice(&s.stream.to_le_bytes());
                out.extend_from_slice(&s.word_pos.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(5)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("dimension overflow".into()))?;
        }
        let config = ModelConfig {
            input_dim: dims[0],
            hidden_dim: dims[1],
            embed_dim: dims[2],
            classifier_hidden: dims[3],
            num_languages: dims[4],
            dropout_rate: r.f64()?,
        };
        config
            .validate()
            .map_err(|e| Error::Checkpoint(format!("stored config invalid: {e}")))?;
        let shapes = config.param_shapes();
        let params = ModelParams::from_tensors(&config, r.tensors(&shapes)?)?;

        let mut optim = None;
        let mut trainer = None;
        if r.remaining() > 0 && r.peek(4) == Some(OPT_TAG.as_slice()) {
            r.take(4)?;
            let step_count = r.u64()?;
            let first_moment = r.tensors(&shapes)?;
            let second_moment = r.tensors(&shapes)?;
            optim = Some(OptimState {
                first_moment,
                second_moment,
                step_count,
            });
        }
        if r.remaining() > 0 && r.peek(4) == Some(TRN_TAG.as_slice()) {
            r.take(4)?;
            let step = r.u64()?;
            let sampler = r.rng_state()?;
            let dropout = r.rng_state()?;
            trainer = Some(TrainerSnapshot { step, sampler, dropout });
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self {
            config,
            params,
            optim,
            trainer,
        })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_tensors(out: &mut Vec<u8>, tensors: &[Tensor]) {
    for t in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn peek(&self, n: usize) -> Option<&'a [u8]> {
        self.bytes.get(self.pos..self.pos + n)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .peek(n)
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn rng_state(&mut self) -> Result<RngState> {
        Ok(RngState {
            seed: self.u64()?,
            stream: self.u64()?,
            word_pos: u128::from_le_bytes(self.array()?),
        })
    }

    fn tensors(&mut self, shapes: &[Vec<usize>]) -> Result<Vec<Tensor>> {
        shapes
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                let raw = self.take(n * 8)?;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                    .collect();
                Tensor::new(s.clone(), data)
            })
            .collect()
    }
}
