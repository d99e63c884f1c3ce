//! Clips, corpus files, the synthetic entangled-feature generator, the batch
//! sampler and the cosine quality gate.
//!
//! A corpus file is newline-delimited JSON: one manifest object, then one
//! object per clip with the fields `clip_id`, `voice`, `lang`, `duration_s`
//! and `frames` (an array of frame vectors). Unknown clip fields survive a
//! read/write cycle.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::numerics::tensor::{dot, l2_normalize};
use crate::numerics::{rng::streams, Rng, Tensor};
use crate::objective::BatchLabels;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Hi,
    Te,
    Ta,
}

impl Language {
    pub const ALL: [Language; 4] = [Language::En, Language::Hi, Language::Te, Language::Ta];

    /// Class index used by the language classifier.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Hi => "hi",
            Language::Te => "te",
            Language::Ta => "ta",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Language::ALL
            .into_iter()
            .find(|l| l.symbol() == s)
            .ok_or_else(|| Error::invalid(format!("unknown language {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub clip_id: String,
    pub voice: String,
    pub lang: Language,
    pub frames: Tensor,
    pub duration_s: f64,
    /// Fields of the source record this crate does not interpret.
    pub extra: Map<String, Value>,
}

impl Clip {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.frames.shape()[1]
    }
}

#[derive(Serialize, Deserialize)]
struct ClipRecord {
    clip_id: String,
    voice: String,
    lang: Language,
    duration_s: f64,
    frames: Vec<Vec<f64>>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub feature_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SynthConfig>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub manifest: Manifest,
    pub clips: Vec<Clip>,
}

impl Corpus {
    pub fn new(manifest: Manifest, clips: Vec<Clip>) -> Result<Self> {
        let c = Self { manifest, clips };
        c.validate()?;
        Ok(c)
    }

    pub fn feature_dim(&self) -> usize {
        self.manifest.feature_dim
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.clips.len());
        for c in &self.clips {
            if !seen.insert(c.clip_id.as_str()) {
                return Err(Error::invalid(format!("duplicate clip id {}", c.clip_id)));
            }
            if c.frames.dims2().map(|(_, d)| d) != Some(self.manifest.feature_dim) {
                return Err(Error::shape(
                    "corpus",
                    format!("clip {} frames {:?}, corpus dim {}", c.clip_id, c.frames.shape(), self.manifest.feature_dim),
                ));
            }
            if !(c.duration_s > 0.0) || !c.duration_s.is_finite() {
                return Err(Error::invalid(format!("clip {} duration {}", c.clip_id, c.duration_s)));
            }
            if !c.frames.is_finite() {
                return Err(Error::NonFinite(format!("frames of clip {}", c.clip_id)));
            }
        }
        Ok(())
    }

    /// Sorted distinct voice labels; a voice's position is its label index.
    pub fn voices(&self) -> Vec<String> {
        self.clips
            .iter()
            .map(|c| c.voice.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn find(&self, clip_id: &str) -> Option<&Clip> {
        self.clips.iter().find(|c| c.clip_id == clip_id)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        serde_json::to_writer(&mut *w, &self.manifest)?;
        w.write_all(b"\n")?;
        for c in &self.clips {
            let (t, d) = c.frames.dims2().expect("validated clip");
            let rec = ClipRecord {
                clip_id: c.clip_id.clone(),
                voice: c.voice.clone(),
                lang: c.lang,
                duration_s: c.duration_s,
                frames: (0..t).map(|i| c.frames.data()[i * d..(i + 1) * d].to_vec()).collect(),
                extra: c.extra.clone(),
            };
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut manifest: Option<Manifest> = None;
        let mut clips = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            if manifest.is_none() {
                manifest = Some(serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?);
                continue;
            }
            let rec: ClipRecord = serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
            let frames = Tensor::from_rows(&rec.frames)
                .map_err(|e| parse_err(i + 1, format!("clip {}: {e}", rec.clip_id)))?;
            clips.push(Clip {
                clip_id: rec.clip_id,
                voice: rec.voice,
                lang: rec.lang,
                frames,
                duration_s: rec.duration_s,
                extra: rec.extra,
            });
        }
        let manifest = manifest.ok_or_else(|| parse_err(1, "missing manifest line".into()))?;
        Corpus::new(manifest, clips)
    }
}

/// Parameters of the synthetic corpus generator.
///
/// Each voice `v` and language `l` gets a unit direction (`s_v`, `u_l`), all
/// mutually orthonormal. Every frame of a clip is
/// `speaker_scale·s_v + language_scale·u_l + noise_scale·η`, with `η` drawn
/// fresh per frame from `N(0, I/D)` so that `noise_scale` is the expected
/// per-frame noise norm regardless of the feature dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_voices: usize,
    pub langs: Vec<Language>,
    pub clips_per_voice_per_lang: usize,
    pub feature_dim: usize,
    pub frames_range: [usize; 2],
    pub speaker_scale: f64,
    pub language_scale: f64,
    pub noise_scale: f64,
    pub duration_range_s: [f64; 2],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_voices: 8,
            langs: Language::ALL.to_vec(),
            clips_per_voice_per_lang: 50,
            feature_dim: 768,
            frames_range: [4, 8],
            speaker_scale: 1.0,
            language_scale: 0.3,
            noise_scale: 0.1,
            duration_range_s: [2.0, 8.0],
            seed: 1337,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let [t0, t1] = self.frames_range;
        let [d0, d1] = self.duration_range_s;
        let ok = self.num_voices >= 1
            && !self.langs.is_empty()
            && self.clips_per_voice_per_lang >= 1
            && self.feature_dim >= 1
            && t0 >= 1
            && t0 <= t1
            && self.speaker_scale > 0.0
            && self.language_scale >= 0.0
            && self.noise_scale >= 0.0
            && d0 > 0.0
            && d0 <= d1;
        if !ok {
            return Err(Error::invalid(format!("synthetic corpus config out of range: {self:?}")));
        }
        let distinct: BTreeSet<_> = self.langs.iter().collect();
        if distinct.len() != self.langs.len() {
            return Err(Error::invalid("duplicate language in synthetic config"));
        }
        let needed = self.num_voices + Language::ALL.len();
        if self.feature_dim < needed {
            return Err(Error::invalid(format!(
                "feature_dim {} too small to orthogonalize {} voice and {} language directions",
                self.feature_dim,
                self.num_voices,
                Language::ALL.len()
            )));
        }
        Ok(())
    }
}

pub fn voice_name(k: usize) -> String {
    format!("voice{k:02}")
}

/// `count` orthonormal vectors in `dim` dimensions by Gram-Schmidt on
/// Gaussian draws.
fn orthonormal_directions(count: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        // Two passes keep the basis orthogonal to roundoff.
        for _ in 0..2 {
            for u in &basis {
                let p = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
        }
        if crate::numerics::tensor::norm(&v) > 1e-6 {
            basis.push(l2_normalize(&v));
        }
    }
    basis
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = Rng::with_stream(config.seed, streams::SYNTH);
    let d = config.feature_dim;
    let dirs = orthonormal_directions(config.num_voices + Language::ALL.len(), d, &mut rng);
    let (speaker_dirs, lang_dirs) = dirs.split_at(config.num_voices);
    let noise_std = config.noise_scale / (d as f64).sqrt();
    let [t0, t1] = config.frames_range;
    let [d0, d1] = config.duration_range_s;

    let mut clips = Vec::with_capacity(config.num_voices * config.langs.len() * config.clips_per_voice_per_lang);
    for (v, s) in speaker_dirs.iter().enumerate() {
        let voice = voice_name(v);
        for &lang in &config.langs {
            let u = &lang_dirs[lang.index()];
            let clean: Vec<f64> = s
                .iter()
                .zip(u)
                .map(|(a, b)| config.speaker_scale * a + config.language_scale * b)
                .collect();
            for k in 0..config.clips_per_voice_per_lang {
                let t = rng.range_inclusive(t0, t1);
                let mut data = Vec::with_capacity(t * d);
                for _ in 0..t {
                    data.extend(clean.iter().map(|c| c + noise_std * rng.normal()));
                }
                let duration = ((d0 + (d1 - d0) * rng.uniform()) * 1000.0).round() / 1000.0;
                clips.push(Clip {
                    clip_id: format!("{voice}_{lang}_{k:03}"),
                    voice: voice.clone(),
                    lang,
                    frames: Tensor::matrix(t, d, data)?,
                    duration_s: duration.max(0.001),
                    extra: Map::new(),
                });
            }
        }
    }
    let manifest = Manifest {
        name: format!("synthetic-{}", config.seed),
        feature_dim: d,
        seed: Some(config.seed),
        generator: Some(config.clone()),
        extra: Map::new(),
    };
    Corpus::new(manifest, clips)
}

/// Draws balanced batches: `voices_per_batch` distinct voices, then
/// `batch_size / voices_per_batch` distinct clips from each.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    batch_size: usize,
    voices_per_batch: usize,
    /// Clip indices grouped by voice label index, for voices with enough clips.
    eligible: Vec<(usize, Vec<usize>)>,
    languages: Vec<usize>,
}

impl BatchSampler {
    pub fn new(corpus: &Corpus, batch_size: usize, voices_per_batch: usize) -> Result<Self> {
        if voices_per_batch < 2 {
            return Err(Error::invalid("voices_per_batch must be >= 2 so every batch has a negative"));
        }
        if batch_size == 0 || !batch_size.is_multiple_of(voices_per_batch) {
            return Err(Error::invalid(format!(
                "batch_size {batch_size} not divisible by voices_per_batch {voices_per_batch}"
            )));
        }
        let per_voice = batch_size / voices_per_batch;
        if per_voice < 2 {
            return Err(Error::invalid("each voice needs >= 2 clips per batch to form a positive"));
        }
        let voices = corpus.voices();
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); voices.len()];
        for (i, c) in corpus.clips.iter().enumerate() {
            let v = voices.binary_search(&c.voice).expect("voice listed");
            groups[v].push(i);
        }
        let eligible: Vec<(usize, Vec<usize>)> = groups
            .into_iter()
            .enumerate()
            .filter(|(_, g)| g.len() >= per_voice)
            .collect();
        if eligible.len() < voices_per_batch {
            return Err(Error::Insufficient(format!(
                "need {voices_per_batch} voices with >= {per_voice} clips, corpus has {}",
                eligible.len()
            )));
        }
        Ok(Self {
            batch_size,
            voices_per_batch,
            eligible,
            languages: corpus.clips.iter().map(|c| c.lang.index()).collect(),
        })
    }

    pub fn sample(&self, rng: &mut Rng) -> (Vec<usize>, BatchLabels) {
        let per_voice = self.batch_size / self.voices_per_batch;
        let picked = rng.sample_indices(self.eligible.len(), self.voices_per_batch);
        let mut clips = Vec::with_capacity(self.batch_size);
        let mut voice_ids = Vec::with_capacity(self.batch_size);
        for p in picked {
            let (voice, pool) = &self.eligible[p];
            for k in rng.sample_indices(pool.len(), per_voice) {
                clips.push(pool[k]);
                voice_ids.push(*voice);
            }
        }
        let language_ids = clips.iter().map(|&i| self.languages[i]).collect();
        let labels = BatchLabels::new(voice_ids, language_ids).expect("aligned labels");
        (clips, labels)
    }
}

pub fn sample_batch(
    corpus: &Corpus,
    batch_size: usize,
    voices_per_batch: usize,
    rng: &mut Rng,
) -> Result<(Vec<usize>, BatchLabels)> {
    Ok(BatchSampler::new(corpus, batch_size, voices_per_batch)?.sample(rng))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateCell {
    pub voice: String,
    pub lang: Language,
    pub passed: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub encoder: String,
    pub threshold: f64,
    pub cells: Vec<GateCell>,
    pub passed: usize,
    pub total: usize,
    pub pass_rate: f64,
}

impl GateReport {
    /// Pass rate to two decimals, e.g. `0.70` for 1118 of 1600.
    pub fn pass_rate_display(&self) -> String {
        format_pass_rate(self.passed, self.total)
    }

    /// Pass rate as a percentage with two decimals, e.g. `69.88%`.
    pub fn pass_rate_percent(&self) -> String {
        format!("{:.2}%", 100.0 * self.pass_rate)
    }
}

pub fn format_pass_rate(passed: usize, total: usize) -> String {
    let rate = if total == 0 { 0.0 } else { passed as f64 / total as f64 };
    format!("{rate:.2}")
}

/// Keeps clips whose embedding has cosine `>= threshold` with the embedding
/// of their voice's reference clip, the first English clip by clip id. The
/// reference itself always passes.
pub fn quality_gate(corpus: &Corpus, encoder: &dyn Encoder, threshold: f64) -> Result<(Corpus, GateReport)> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!("gate threshold {threshold} outside [-1, 1]")));
    }
    let mut references: BTreeMap<&str, &Clip> = BTreeMap::new();
    for c in corpus.clips.iter().filter(|c| c.lang == Language::En) {
        let slot = references.entry(c.voice.as_str()).or_insert(c);
        if c.clip_id < slot.clip_id {
            *slot = c;
        }
    }
    for v in corpus.voices() {
        if !references.contains_key(v.as_str()) {
            return Err(Error::Insufficient(format!("voice {v} has no English reference clip")));
        }
    }

    let all: Vec<&Clip> = corpus.clips.iter().collect();
    let embeddings = encoder.embed_clips(&all)?;
    let index_of: BTreeMap<&str, usize> = corpus
        .clips
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clip_id.as_str(), i))
        .collect();

    let mut cells: BTreeMap<(String, Language), (usize, usize)> = BTreeMap::new();
    let mut kept = Vec::new();
    for (i, c) in corpus.clips.iter().enumerate() {
        let r = references[c.voice.as_str()];
        let pass = if r.clip_id == c.clip_id {
            true
        } else {
            let ref_emb = &embeddings[index_of[r.clip_id.as_str()]];
            crate::gap::cosine(&embeddings[i].vector, &ref_emb.vector)? >= threshold
        };
        let cell = cells.entry((c.voice.clone(), c.lang)).or_default();
        cell.1 += 1;
        if pass {
            cell.0 += 1;
            kept.push(c.clone());
        }
    }
    let passed = kept.len();
    let total = corpus.len();
    let report = GateReport {
        encoder: encoder.name().to_string(),
        threshold,
        cells: cells
            .into_iter()
            .map(|((voice, lang), (passed, total))| GateCell {
                voice,
                lang,
                passed,
                total,
            })
            .collect(),
        passed,
        total,
        pass_rate: if total == 0 { 0.0 } else { passed as f64 / total as f64 },
    };
    let gated = Corpus::new(corpus.manifest.clone(), kept)?;
    Ok((gated, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::PassThrough;
    use crate::model::mean_pool;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            num_voices: 4,
            clips_per_voice_per_lang: 3,
            feature_dim: 12,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generator_counts_and_ids() {
        let c = generate_synthetic(&small(1)).unwrap();
        assert_eq!(c.len(), 4 * 4 * 3);
        assert_eq!(c.voices().len(), 4);
        assert_eq!(c.clips[0].clip_id, "voice00_en_000");
        for clip in &c.clips {
            let t = clip.num_frames();
            assert!((4..=8).contains(&t));
            assert!((2.0..=8.0).contains(&clip.duration_s));
        }
    }

    #[test]
    fn generator_rejects_small_dim() {
        let cfg = SynthConfig {
            feature_dim: 7,
            ..small(1)
        };
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn generator_is_deterministic() {
        let a = generate_synthetic(&small(1337)).unwrap();
        let b = generate_synthetic(&small(1337)).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_to(&mut x).unwrap();
        b.write_to(&mut y).unwrap();
        assert_eq!(x, y);
        assert_ne!(generate_synthetic(&small(1)).unwrap(), a);
    }

    fn pooled_cos(c: &Corpus, a: usize, b: usize) -> f64 {
        let pa = mean_pool(&c.clips[a].frames).unwrap();
        let pb = mean_pool(&c.clips[b].frames).unwrap();
        dot(&pa, &pb) / (dot(&pa, &pa).sqrt() * dot(&pb, &pb).sqrt())
    }

    #[test]
    fn noiseless_same_voice_is_collinear() {
        let cfg = SynthConfig {
            noise_scale: 0.0,
            language_scale: 0.0,
            ..small(2)
        };
        let c = generate_synthetic(&cfg).unwrap();
        for i in 0..c.len() {
            for j in 0..c.len() {
                if c.clips[i].voice == c.clips[j].voice {
                    assert!((pooled_cos(&c, i, j) - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn closed_form_cross_script_cosine() {
        // s + u vs s + u' with orthonormal directions: cos = s²/(s² + α²).
        let cfg = SynthConfig {
            noise_scale: 0.0,
            language_scale: 1.0,
            ..small(3)
        };
        let c = generate_synthetic(&cfg).unwrap();
        let en = c.clips.iter().position(|x| x.clip_id == "voice01_en_000").unwrap();
        let hi = c.clips.iter().position(|x| x.clip_id == "voice01_hi_000").unwrap();
        assert!((pooled_cos(&c, en, hi) - 0.5).abs() < 1e-12);
        let other = c.clips.iter().position(|x| x.clip_id == "voice02_en_000").unwrap();
        assert!((pooled_cos(&c, en, other) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn file_round_trip_is_exact() {
        let mut c = generate_synthetic(&small(5)).unwrap();
        c.clips[0].extra.insert("transcript".into(), Value::String("namaste".into()));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        c.write(&p).unwrap();
        let back = Corpus::read(&p).unwrap();
        assert_eq!(back, c);
        for (a, b) in back.clips.iter().zip(&c.clips) {
            let ab: Vec<u64> = a.frames.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.frames.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn read_reports_line_of_bad_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(
            &p,
            "{\"name\":\"x\",\"feature_dim\":2}\n{\"clip_id\":\"a\",\"voice\":\"v\",\"lang\":\"xx\",\"duration_s\":1.0,\"frames\":[[1,2]]}\n",
        )
        .unwrap();
        match Corpus::read(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn batches_have_positives_and_negatives() {
        let cfg = SynthConfig {
            num_voices: 8,
            clips_per_voice_per_lang: 5,
            feature_dim: 16,
            ..SynthConfig::default()
        };
        let c = generate_synthetic(&cfg).unwrap();
        let s = BatchSampler::new(&c, 16, 4).unwrap();
        let mut rng = Rng::new(1337);
        for _ in 0..1000 {
            let (idx, labels) = s.sample(&mut rng);
            assert_eq!(idx.len(), 16);
            assert!(labels.has_positive_and_negative());
            let distinct: BTreeSet<_> = labels.voice_ids.iter().collect();
            assert_eq!(distinct.len(), 4);
            let clips: BTreeSet<_> = idx.iter().collect();
            assert_eq!(clips.len(), 16);
        }
    }

    #[test]
    fn sampler_rejects_bad_shapes() {
        let c = generate_synthetic(&small(1)).unwrap();
        assert!(BatchSampler::new(&c, 16, 1).is_err());
        assert!(BatchSampler::new(&c, 15, 4).is_err());
        assert!(BatchSampler::new(&c, 16, 5).is_err());
        assert!(BatchSampler::new(&c, 64, 4).is_err());
    }

    #[test]
    fn sampler_is_deterministic() {
        let c = generate_synthetic(&small(1)).unwrap();
        let a = sample_batch(&c, 8, 2, &mut Rng::new(3)).unwrap();
        let b = sample_batch(&c, 8, 2, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gate_threshold_minus_one_keeps_all() {
        let c = generate_synthetic(&small(1)).unwrap();
        let (kept, report) = quality_gate(&c, &PassThrough, -1.0).unwrap();
        assert_eq!(kept.len(), c.len());
        assert_eq!(report.pass_rate, 1.0);
        assert_eq!(report.pass_rate_display(), "1.00");
    }

    #[test]
    fn gate_is_monotone_and_keeps_references() {
        let cfg = SynthConfig {
            language_scale: 0.5,
            noise_scale: 0.5,
            ..small(9)
        };
        let c = generate_synthetic(&cfg).unwrap();
        let mut prev: Option<BTreeSet<String>> = None;
        for th in [-1.0, 0.0, 0.5, 0.7, 0.8, 0.9, 0.95, 1.0] {
            let (kept, _) = quality_gate(&c, &PassThrough, th).unwrap();
            let ids: BTreeSet<String> = kept.clips.iter().map(|c| c.clip_id.clone()).collect();
            for v in 0..4 {
                assert!(ids.contains(&format!("voice{v:02}_en_000")));
            }
            if let Some(p) = &prev {
                assert!(ids.is_subset(p));
            }
            prev = Some(ids);
        }
    }

    #[test]
    fn gate_requires_english_reference() {
        let mut c = generate_synthetic(&small(1)).unwrap();
        c.clips.retain(|x| !(x.voice == "voice01" && x.lang == Language::En));
        assert!(quality_gate(&c, &PassThrough, 0.9).is_err());
    }

    #[test]
    fn pass_rate_formatting() {
        assert_eq!(format_pass_rate(1118, 1600), "0.70");
        assert_eq!(format_pass_rate(1043, 1600), "0.65");
    }
}
