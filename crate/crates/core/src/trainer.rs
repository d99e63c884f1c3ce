//! The training loop: balanced batches, contrastive speaker loss, the
//! reversed language loss, clipping and AdamW, with a per-step loss history.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{BatchSampler, Corpus};
use crate::encoder::{Encoder, Trained};
use crate::error::{Error, Result};
use crate::model::checkpoint::{Checkpoint, TrainerSnapshot};
use crate::model::{
    classify_language, embed_batch, grl_forward, is_weight, mean_pool, Embedding, ModelConfig, ModelParams,
    CLASSIFIER_PARAMS,
};
use crate::numerics::{rng::streams, Graph, Rng, Tensor};
use crate::objective::{language_ce, lambda_at, supcon_loss, total_loss, LossConfig};
use crate::optimizer::{clip_global_norm, step as adamw_step, OptimConfig, OptimState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub voices_per_batch: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    /// Hold the language classifier fixed: its gradients are zeroed before
    /// clipping and its parameters are never updated.
    pub freeze_classifier: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 16,
            voices_per_batch: 4,
            seed: 1337,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            freeze_classifier: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::invalid("steps must be >= 1"));
        }
        self.model.validate()?;
        self.loss.validate()?;
        self.optim.validate()
    }
}

/// One line of the loss history. `l_lang` is the raw cross-entropy, before
/// any weighting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub l_spk: f64,
    pub l_lang: f64,
    pub lambda: f64,
    pub clip_scale: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ModelParams,
    pub optim: OptimState,
    pub step: u64,
    pub history: Vec<StepRecord>,
    pub sampler_rng: Rng,
    pub dropout_rng: Rng,
}

impl TrainState {
    /// Fresh state: He-initialized parameters from the `INIT` substream.
    pub fn init(config: &TrainConfig) -> Result<Self> {
        let params = ModelParams::init(&config.model, &mut Rng::with_stream(config.seed, streams::INIT))?;
        let optim = OptimState::new(params.tensors());
        Ok(Self {
            params,
            optim,
            step: 0,
            history: Vec::new(),
            sampler_rng: Rng::with_stream(config.seed, streams::SAMPLER),
            dropout_rng: Rng::with_stream(config.seed, streams::DROPOUT),
        })
    }

    pub fn to_checkpoint(&self, config: &ModelConfig) -> Checkpoint {
        Checkpoint {
            config: *config,
            params: self.params.clone(),
            optim: Some(self.optim.clone()),
            trainer: Some(TrainerSnapshot {
                step: self.step,
                sampler: self.sampler_rng.state(),
                dropout: self.dropout_rng.state(),
            }),
        }
    }

    /// Rebuilds a resumable state from a full checkpoint and the history
    /// written alongside it.
    pub fn from_checkpoint(ck: Checkpoint, history: Vec<StepRecord>) -> Result<Self> {
        let (optim, snap) = match (ck.optim, ck.trainer) {
            (Some(o), Some(t)) => (o, t),
            _ => return Err(Error::Checkpoint("checkpoint has no optimizer or trainer state".into())),
        };
        if history.len() as u64 != snap.step {
            return Err(Error::invalid(format!(
                "history has {} records but the checkpoint is at step {}",
                history.len(),
                snap.step
            )));
        }
        Ok(Self {
            params: ck.params,
            optim,
            step: snap.step,
            history,
            sampler_rng: Rng::from_state(snap.sampler),
            dropout_rng: Rng::from_state(snap.dropout),
        })
    }
}

/// Runs `config.steps` steps from a fresh initialization.
pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<TrainState> {
    let state = TrainState::init(config)?;
    train_from(corpus, config, state)
}

/// Continues `state` until `config.steps` steps have been taken in total.
pub fn train_from(corpus: &Corpus, config: &TrainConfig, mut state: TrainState) -> Result<TrainState> {
    config.validate()?;
    if corpus.feature_dim() != config.model.input_dim {
        return Err(Error::shape(
            "train",
            format!(
                "corpus feature_dim {} vs model input_dim {}",
                corpus.feature_dim(),
                config.model.input_dim
            ),
        ));
    }
    if state.step > config.steps {
        return Err(Error::invalid(format!(
            "state is at step {}, beyond the configured {} steps",
            state.step, config.steps
        )));
    }
    let sampler = BatchSampler::new(corpus, config.batch_size, config.voices_per_batch)?;
    let pooled = corpus
        .clips
        .iter()
        .map(|c| mean_pool(&c.frames))
        .collect::<Result<Vec<_>>>()?;
    let decay: Vec<bool> = (0..8).map(is_weight).collect();

    while state.step < config.steps {
        let record = train_step(&sampler, &pooled, config, &decay, &mut state)?;
        state.history.push(record);
        state.step += 1;
    }
    Ok(state)
}

fn train_step(
    sampler: &BatchSampler,
    pooled: &[Vec<f64>],
    config: &TrainConfig,
    decay: &[bool],
    state: &mut TrainState,
) -> Result<StepRecord> {
    let step = state.step;
    let (idx, labels) = sampler.sample(&mut state.sampler_rng);
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| pooled[i].clone()).collect();
    let lambda = lambda_at(step, &config.loss);

    let mut g = Graph::new();
    let vars = state.params.bind(&mut g);
    let x = g.constant(Tensor::from_rows(&rows)?);
    let forward = |g: &mut Graph, dropout: &mut Rng| -> Result<_> {
        let z = embed_batch(g, &vars, &config.model, x, Some(dropout))?;
        let spk = supcon_loss(g, z, &labels.voice_ids, config.loss.temperature)?.loss;
        let reversed = grl_forward(g, z, lambda)?;
        let logits = classify_language(g, &vars, &config.model, reversed)?;
        let lang = language_ce(g, logits, &labels.language_ids)?;
        let total = total_loss(g, spk, lang, config.loss.language_weight(lambda))?;
        Ok((spk, lang, total))
    };
    let (spk, lang, total) = forward(&mut g, &mut state.dropout_rng).map_err(|e| at_step(e, step))?;
    let l_spk = g.value(spk).item();
    let l_lang = g.value(lang).item();
    if !g.value(total).item().is_finite() {
        return Err(Error::NonFinite(format!("loss at step {step}")));
    }
    g.backward(total).map_err(|e| at_step(e, step))?;

    let mut grads = vars.grads(&g);
    if config.freeze_classifier {
        for i in CLASSIFIER_PARAMS {
            grads[i] = Tensor::zeros(grads[i].shape());
        }
    }
    let clip_scale = clip_global_norm(&mut grads, config.optim.clip_norm).map_err(|e| at_step(e, step))?;
    let frozen: Vec<Tensor> = if config.freeze_classifier {
        CLASSIFIER_PARAMS.map(|i| state.params.tensors()[i].clone()).collect()
    } else {
        Vec::new()
    };
    adamw_step(state.params.tensors_mut(), &grads, decay, &mut state.optim, &config.optim)
        .map_err(|e| at_step(e, step))?;
    for (i, t) in CLASSIFIER_PARAMS.zip(frozen) {
        state.params.tensors_mut()[i] = t;
    }
    Ok(StepRecord {
        step,
        l_spk,
        l_lang,
        lambda,
        clip_scale,
    })
}

fn at_step(e: Error, step: u64) -> Error {
    match e {
        Error::NonFinite(what) => Error::NonFinite(format!("{what} at step {step}")),
        other => other,
    }
}

/// Evaluation-mode embeddings of every clip, ordered by clip id.
pub fn evaluate_embeddings(
    params: &ModelParams,
    config: &ModelConfig,
    corpus: &Corpus,
) -> Result<Vec<(String, Embedding)>> {
    if corpus.feature_dim() != config.input_dim {
        return Err(Error::shape(
            "evaluate_embeddings",
            format!("corpus feature_dim {} vs model input_dim {}", corpus.feature_dim(), config.input_dim),
        ));
    }
    let enc = Trained {
        name: "trained".into(),
        params: params.clone(),
        config: *config,
    };
    let mut clips: Vec<_> = corpus.clips.iter().collect();
    clips.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    let emb = enc.embed_clips(&clips)?;
    Ok(clips.into_iter().map(|c| c.clip_id.clone()).zip(emb).collect())
}

pub fn write_history(path: &Path, history: &[StepRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in history {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<StepRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}
