//! Three-distribution cross-script measurement.
//!
//! For one encoder on one corpus, cosine similarities are collected over
//! three pair buckets:
//!
//! * within-script: same voice, same language, different clips;
//! * cross-script: same voice, different language;
//! * across-speaker: different voice, same language (the noise floor).
//!
//! The gap `Δ = median(within) − median(cross)` measures how far a change of
//! script moves a speaker; the margin `M = median(cross) − median(floor)`
//! measures how far that still sits above a different speaker. Both are
//! computed from unrounded medians, and both get percentile-bootstrap
//! confidence intervals with the two buckets resampled independently.

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Language};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::numerics::tensor::{dot, norm, NORM_FLOOR};
use crate::numerics::{rng::streams, Rng};

pub const DEFAULT_PAIRS: usize = 200;
pub const DEFAULT_BOOTSTRAP: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;

/// `a·b / (max(‖a‖,1e-12)·max(‖b‖,1e-12))`, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine", format!("{} vs {}", a.len(), b.len())));
    }
    let c = dot(a, b) / (norm(a).max(NORM_FLOOR) * norm(b).max(NORM_FLOOR));
    Ok(c.clamp(-1.0, 1.0))
}

/// Embedding of one clip together with the labels the pair predicates need.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledEmbedding {
    pub clip_id: String,
    pub voice: String,
    pub lang: Language,
    pub vector: Vec<f64>,
}

/// Embeds every clip of `corpus`, ordered by clip id.
pub fn embed_corpus(corpus: &Corpus, encoder: &dyn Encoder) -> Result<Vec<LabeledEmbedding>> {
    let mut clips: Vec<_> = corpus.clips.iter().collect();
    clips.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    let emb = encoder.embed_clips(&clips)?;
    Ok(clips
        .into_iter()
        .zip(emb)
        .map(|(c, e)| LabeledEmbedding {
            clip_id: c.clip_id.clone(),
            voice: c.voice.clone(),
            lang: c.lang,
            vector: e.vector,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPredicate {
    WithinScript,
    CrossScript,
    AcrossSpeaker,
}

impl PairPredicate {
    pub const ALL: [PairPredicate; 3] = [
        PairPredicate::WithinScript,
        PairPredicate::CrossScript,
        PairPredicate::AcrossSpeaker,
    ];

    pub fn holds(self, a: &LabeledEmbedding, b: &LabeledEmbedding) -> bool {
        let same_voice = a.voice == b.voice;
        let same_lang = a.lang == b.lang;
        match self {
            PairPredicate::WithinScript => same_voice && same_lang && a.clip_id != b.clip_id,
            PairPredicate::CrossScript => same_voice && !same_lang,
            PairPredicate::AcrossSpeaker => !same_voice && same_lang,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    /// Unordered pairs `(i, j)` with `i < j`, ascending.
    pub pairs: Vec<(usize, usize)>,
    pub cosines: Vec<f64>,
    /// Number of qualifying pairs in the whole table.
    pub available: usize,
    /// Fewer qualifying pairs than requested; all of them were returned.
    pub shortfall: bool,
}

/// Uniformly samples `n` distinct unordered pairs satisfying `predicate`.
pub fn sample_pairs(
    items: &[LabeledEmbedding],
    predicate: PairPredicate,
    n: usize,
    rng: &mut Rng,
) -> Result<PairSample> {
    if n == 0 {
        return Err(Error::invalid("pair count must be >= 1"));
    }
    let mut all = Vec::new();
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            if predicate.holds(&items[i], &items[j]) {
                all.push((i, j));
            }
        }
    }
    if all.is_empty() {
        return Err(Error::Insufficient(format!("no {predicate:?} pairs in the table")));
    }
    let available = all.len();
    let mut pairs = if available <= n {
        all
    } else {
        let mut idx = rng.sample_indices(available, n);
        idx.sort_unstable();
        idx.into_iter().map(|k| all[k]).collect()
    };
    pairs.sort_unstable();
    let cosines = pairs
        .iter()
        .map(|&(i, j)| cosine(&items[i].vector, &items[j].vector))
        .collect::<Result<_>>()?;
    Ok(PairSample {
        pairs,
        cosines,
        available,
        shortfall: available < n,
    })
}

/// Middle element for odd lengths, mean of the two middle elements otherwise.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("median of an empty list"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Linear interpolation between order statistics at position `(N-1)·q`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap CI of `median(a) − median(b)`, resampling each
/// bucket independently with replacement at its original size.
pub fn bootstrap_ci(a: &[f64], b: &[f64], iterations: usize, level: f64, rng: &mut Rng) -> Result<[f64; 2]> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("bootstrap needs two non-empty buckets"));
    }
    if iterations == 0 {
        return Err(Error::invalid("bootstrap needs at least one iteration"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level {level} outside (0, 1)")));
    }
    let mut stats = Vec::with_capacity(iterations);
    let mut ra = vec![0.0; a.len()];
    let mut rb = vec![0.0; b.len()];
    for _ in 0..iterations {
        ra.iter_mut().for_each(|x| *x = a[rng.index(a.len())]);
        rb.iter_mut().for_each(|x| *x = b[rng.index(b.len())]);
        stats.push(median(&ra)? - median(&rb)?);
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok([percentile_sorted(&stats, tail), percentile_sorted(&stats, 1.0 - tail)])
}

/// Gap and margin from the three bucket medians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapSummary {
    pub within: f64,
    pub cross: f64,
    pub floor: f64,
    pub delta: f64,
    pub margin: f64,
}

impl GapSummary {
    pub fn from_medians(within: f64, cross: f64, floor: f64) -> Self {
        Self {
            within,
            cross,
            floor,
            delta: within - cross,
            margin: cross - floor,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketInfo {
    pub sampled: usize,
    pub available: usize,
    pub shortfall: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub encoder_name: String,
    pub within: f64,
    pub cross: f64,
    pub floor: f64,
    pub delta: f64,
    pub margin: f64,
    pub ci_delta: [f64; 2],
    pub ci_margin: [f64; 2],
    pub n_pairs_per_bucket: usize,
    pub buckets: [BucketInfo; 3],
    pub bootstrap_iterations: usize,
    pub level: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapSettings {
    pub n_pairs: usize,
    pub bootstrap_iterations: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for GapSettings {
    fn default() -> Self {
        Self {
            n_pairs: DEFAULT_PAIRS,
            bootstrap_iterations: DEFAULT_BOOTSTRAP,
            level: DEFAULT_LEVEL,
            seed: 1337,
        }
    }
}

/// Full three-bucket report for one encoder. Pure in
/// `(items, settings)`: pair sampling and bootstrap use fixed substreams of
/// `settings.seed`.
pub fn gap_report(encoder_name: &str, items: &[LabeledEmbedding], settings: &GapSettings) -> Result<GapReport> {
    let mut pair_rng = Rng::with_stream(settings.seed, streams::PAIRS);
    let mut samples = Vec::with_capacity(3);
    for p in PairPredicate::ALL {
        samples.push(sample_pairs(items, p, settings.n_pairs, &mut pair_rng)?);
    }
    let [within, cross, floor] = [&samples[0], &samples[1], &samples[2]];
    let summary = GapSummary::from_medians(median(&within.cosines)?, median(&cross.cosines)?, median(&floor.cosines)?);

    let mut boot_rng = Rng::with_stream(settings.seed, streams::BOOTSTRAP);
    let ci_delta = bootstrap_ci(
        &within.cosines,
        &cross.cosines,
        settings.bootstrap_iterations,
        settings.level,
        &mut boot_rng,
    )?;
    let ci_margin = bootstrap_ci(
        &cross.cosines,
        &floor.cosines,
        settings.bootstrap_iterations,
        settings.level,
        &mut boot_rng,
    )?;
    let info = |s: &PairSample| BucketInfo {
        sampled: s.pairs.len(),
        available: s.available,
        shortfall: s.shortfall,
    };
    Ok(GapReport {
        encoder_name: encoder_name.to_string(),
        within: summary.within,
        cross: summary.cross,
        floor: summary.floor,
        delta: summary.delta,
        margin: summary.margin,
        ci_delta,
        ci_margin,
        n_pairs_per_bucket: settings.n_pairs,
        buckets: [info(within), info(cross), info(floor)],
        bootstrap_iterations: settings.bootstrap_iterations,
        level: settings.level,
        seed: settings.seed,
    })
}

pub const TABLE_HEADER: &str = "encoder  within  cross  floor  Δ [lo,hi]  M";

impl GapReport {
    /// One table row: `encoder  within  cross  floor  Δ [lo,hi]  M`.
    pub fn table_row(&self) -> String {
        format!(
            "{}  {:.3}  {:.3}  {:.3}  {:.3} [{:.3},{:.3}]  {:.3}",
            self.encoder_name,
            self.within,
            self.cross,
            self.floor,
            self.delta,
            self.ci_delta[0],
            self.ci_delta[1],
            self.margin
        )
    }
}
