//! Training objectives: the supervised contrastive speaker loss, the
//! language cross-entropy, their combination, and the gradient-reversal
//! strength schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub temperature: f64,
    pub warmup_steps: u64,
    pub ramp_steps: u64,
    pub lambda_max: f64,
    /// Also weight the language loss by `lambda_t` in the total (so the head
    /// sees `-lambda_t²`). Off by default: the reversal strength acts only
    /// inside the gradient-reversal layer and the language loss enters the
    /// total with weight 1.
    pub lambda_in_loss: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            warmup_steps: 200,
            ramp_steps: 500,
            lambda_max: 0.1,
            lambda_in_loss: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || self.ramp_steps < 1 || !(self.lambda_max >= 0.0) {
            return Err(Error::invalid(format!("loss config out of range: {self:?}")));
        }
        Ok(())
    }

    /// Weight of the language loss in the total at reversal strength `lambda_t`.
    pub fn language_weight(&self, lambda_t: f64) -> f64 {
        if self.lambda_in_loss {
            lambda_t
        } else {
            1.0
        }
    }
}

/// Voice and language labels of one batch, aligned with its rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchLabels {
    pub voice_ids: Vec<usize>,
    pub language_ids: Vec<usize>,
}

impl BatchLabels {
    pub fn new(voice_ids: Vec<usize>, language_ids: Vec<usize>) -> Result<Self> {
        if voice_ids.len() != language_ids.len() {
            return Err(Error::shape("batch labels", "voice and language label counts differ"));
        }
        Ok(Self {
            voice_ids,
            language_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.voice_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voice_ids.is_empty()
    }

    /// At least one same-voice pair and at least two distinct voices.
    pub fn has_positive_and_negative(&self) -> bool {
        let v = &self.voice_ids;
        let positive = (0..v.len()).any(|i| (i + 1..v.len()).any(|j| v[i] == v[j]));
        let negative = v.iter().any(|&x| x != v[0]);
        positive && negative
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SupConOutput {
    pub loss: Var,
    /// Items left out of the average because no other item shares their voice.
    pub dropped: usize,
}

/// Supervised contrastive loss over unit-norm rows `z[B, E]`:
///
/// `L = (1/B') Σ_i -log( Σ_{j∈P(i)} exp(z_i·z_j/τ) / Σ_{j≠i} exp(z_i·z_j/τ) )`
///
/// where `P(i)` are the other items with the same voice and `B'` counts the
/// items with a non-empty `P(i)`.
pub fn supcon_loss(g: &mut Graph, z: Var, voice_ids: &[usize], temperature: f64) -> Result<SupConOutput> {
    let (b, _) = g
        .value(z)
        .dims2()
        .ok_or_else(|| Error::shape("supcon", "embeddings must be a matrix"))?;
    if b < 2 {
        return Err(Error::invalid(format!("supcon needs at least 2 items, got {b}")));
    }
    if voice_ids.len() != b {
        return Err(Error::shape("supcon", format!("{b} rows, {} labels", voice_ids.len())));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let anchors: Vec<usize> = (0..b)
        .filter(|&i| (0..b).any(|j| j != i && voice_ids[j] == voice_ids[i]))
        .collect();
    if anchors.is_empty() {
        return Err(Error::invalid("no item in the batch has a same-voice positive"));
    }

    let zt = g.transpose(z)?;
    let sim = g.matmul(z, zt)?;
    let logits = g.scale(sim, 1.0 / temperature)?;
    let rows = g.select_rows(logits, &anchors)?;

    let mut denom = Vec::with_capacity(anchors.len() * b);
    let mut pos = Vec::with_capacity(anchors.len() * b);
    for &i in &anchors {
        for j in 0..b {
            denom.push(j != i);
            pos.push(j != i && voice_ids[j] == voice_ids[i]);
        }
    }
    let log_denom = g.masked_logsumexp_rows(rows, &denom)?;
    let log_pos = g.masked_logsumexp_rows(rows, &pos)?;
    let per_item = g.sub(log_denom, log_pos)?;
    let loss = g.mean(per_item)?;
    Ok(SupConOutput {
        loss,
        dropped: b - anchors.len(),
    })
}

/// Mean cross-entropy of `logits[B, C]` against class indices.
pub fn language_ce(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let (b, c) = g
        .value(logits)
        .dims2()
        .ok_or_else(|| Error::shape("language_ce", "logits must be a matrix"))?;
    if labels.len() != b {
        return Err(Error::shape("language_ce", format!("{b} rows, {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::invalid(format!("language label {bad} outside 0..{c}")));
    }
    let all = vec![true; b * c];
    let picked: Vec<bool> = (0..b * c).map(|k| labels[k / c] == k % c).collect();
    let lse = g.masked_logsumexp_rows(logits, &all)?;
    let target = g.masked_row_sum(logits, &picked)?;
    let nll = g.sub(lse, target)?;
    g.mean(nll)
}

/// Reversal strength at `step` (counted from 0): zero through warmup, a
/// linear ramp reaching `lambda_max` at `warmup + ramp`, then constant.
pub fn lambda_at(step: u64, config: &LossConfig) -> f64 {
    if step < config.warmup_steps {
        0.0
    } else if step < config.warmup_steps + config.ramp_steps {
        config.lambda_max * (step - config.warmup_steps) as f64 / config.ramp_steps as f64
    } else {
        config.lambda_max
    }
}

/// `L_spk + weight · L_lang`.
pub fn total_loss(g: &mut Graph, speaker: Var, language: Var, weight: f64) -> Result<Var> {
    for (name, v) in [("speaker loss", speaker), ("language loss", language)] {
        let t = g.value(v);
        if !t.is_scalar() {
            return Err(Error::shape("total_loss", format!("{name} is not scalar")));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
    }
    if !(weight >= 0.0) || !weight.is_finite() {
        return Err(Error::invalid(format!("language weight {weight}")));
    }
    let weighted = g.scale(language, weight)?;
    g.add(speaker, weighted)
}
