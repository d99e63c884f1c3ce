//! Finite-difference check of the full training graph: projection head,
//! gradient reversal, language classifier, and the combined loss.
//!
//! The reversal layer is the identity going forward, so a finite difference
//! of the training loss cannot see it. Each parameter group is therefore
//! checked against the loss whose plain gradient the reversed graph should
//! produce for that group:
//!
//! * projection head: `L_spk − λ·w·L_lang`;
//! * language classifier: `L_spk + w·L_lang`.

use crate::error::Result;
use crate::model::{classify_language, embed_batch, grl_forward, ModelConfig, ModelParams, CLASSIFIER_PARAMS, HEAD_PARAMS};
use crate::numerics::{grad_check_piecewise, rng::streams, Coverage, GradCheckReport, Graph, Rng, Tensor};
use crate::numerics::tensor::dot;
use crate::objective::{language_ce, supcon_loss, total_loss, LossConfig};

#[derive(Clone, Debug)]
pub struct CompositeCheck {
    pub head: GradCheckReport,
    pub classifier: GradCheckReport,
    pub lambda: f64,
}

impl CompositeCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.head.max_relative_error.max(self.classifier.max_relative_error)
    }

    pub fn coordinates_checked(&self) -> usize {
        self.head.coordinates_checked + self.classifier.coordinates_checked
    }

    pub fn kinks_skipped(&self) -> usize {
        self.head.kinks_skipped + self.classifier.kinks_skipped
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CheckSettings {
    pub epsilon: f64,
    pub lambda: f64,
    pub voices: usize,
    pub per_voice: usize,
    pub coverage: Coverage,
    pub seed: u64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            epsilon: crate::numerics::gradcheck::DEFAULT_EPSILON,
            lambda: 0.1,
            voices: 4,
            per_voice: 4,
            coverage: Coverage::Sample {
                per_tensor: 24,
                seed: 1337,
            },
            seed: 1337,
        }
    }
}

/// Random batch with weak voice structure (`0.5·centre + noise`, so items of
/// one voice have cosine near 0.2) to keep the contrastive loss away from
/// saturation. Languages cycle through the available classes.
fn batch(config: &ModelConfig, s: &CheckSettings) -> (Tensor, Vec<usize>, Vec<usize>) {
    let mut rng = Rng::with_stream(s.seed, streams::GRAD_CHECK);
    let d = config.input_dim;
    let mut rows = Vec::new();
    let mut voices = Vec::new();
    let mut langs = Vec::new();
    for v in 0..s.voices {
        let centre: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        for k in 0..s.per_voice {
            rows.push(centre.iter().map(|c| 0.5 * c + rng.normal()).collect::<Vec<_>>());
            voices.push(v);
            langs.push((v + k) % config.num_languages);
        }
    }
    (Tensor::from_rows(&rows).expect("rectangular"), voices, langs)
}

/// Signs of `x · Wᵀ + b`, row-major.
fn relu_pattern(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<bool> {
    let (rows, _) = x.dims2().expect("matrix");
    let (outs, _) = w.dims2().expect("matrix");
    let mut out = Vec::with_capacity(rows * outs);
    for i in 0..rows {
        for o in 0..outs {
            out.push(dot(x.row(i), w.row(o)) + b.data()[o] > 0.0);
        }
    }
    out
}

/// Losses `(L_spk, L_lang)` in evaluation mode, without reversal, plus the
/// activation pattern of both hidden ReLU layers.
fn plain_losses(
    params: &ModelParams,
    config: &ModelConfig,
    loss: &LossConfig,
    x: &Tensor,
    voices: &[usize],
    langs: &[usize],
) -> Result<(f64, f64, Vec<bool>)> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let xv = g.constant(x.clone());
    let z = embed_batch(&mut g, &vars, config, xv, None)?;
    let spk = supcon_loss(&mut g, z, voices, loss.temperature)?.loss;
    let logits = classify_language(&mut g, &vars, config, z)?;
    let lang = language_ce(&mut g, logits, langs)?;
    let t = params.tensors();
    let mut pattern = relu_pattern(x, &t[0], &t[1]);
    pattern.extend(relu_pattern(g.value(z), &t[4], &t[5]));
    Ok((g.value(spk).item(), g.value(lang).item(), pattern))
}

pub fn composite_grad_check(
    params: &ModelParams,
    config: &ModelConfig,
    loss: &LossConfig,
    settings: &CheckSettings,
) -> Result<CompositeCheck> {
    let (x, voices, langs) = batch(config, settings);
    let lambda = settings.lambda;
    let w = loss.language_weight(lambda);

    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let xv = g.constant(x.clone());
    let z = embed_batch(&mut g, &vars, config, xv, None)?;
    let spk = supcon_loss(&mut g, z, &voices, loss.temperature)?.loss;
    let r = grl_forward(&mut g, z, lambda)?;
    let logits = classify_language(&mut g, &vars, config, r)?;
    let lang = language_ce(&mut g, logits, &langs)?;
    let total = total_loss(&mut g, spk, lang, w)?;
    g.backward(total)?;
    let grads = vars.grads(&g);

    let all = params.tensors();
    let with = |group: std::ops::Range<usize>, p: &[Tensor]| {
        let mut t = all.to_vec();
        for (i, v) in group.zip(p) {
            t[i] = v.clone();
        }
        ModelParams::from_tensors(config, t)
    };

    let head = grad_check_piecewise(
        |p| {
            let (s, l, pattern) = plain_losses(&with(HEAD_PARAMS, p)?, config, loss, &x, &voices, &langs)?;
            Ok((s - lambda * w * l, pattern))
        },
        &all[HEAD_PARAMS],
        &grads[HEAD_PARAMS],
        settings.epsilon,
        settings.coverage,
    )?;
    let classifier = grad_check_piecewise(
        |p| {
            let (s, l, pattern) = plain_losses(&with(CLASSIFIER_PARAMS, p)?, config, loss, &x, &voices, &langs)?;
            Ok((s + w * l, pattern))
        },
        &all[CLASSIFIER_PARAMS],
        &grads[CLASSIFIER_PARAMS],
        settings.epsilon,
        settings.coverage,
    )?;
    Ok(CompositeCheck {
        head,
        classifier,
        lambda,
    })
}
