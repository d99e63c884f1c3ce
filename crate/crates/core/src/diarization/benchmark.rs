use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Language};
use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const GAP_S: f64 = 0.3;
pub const DEFAULT_CONVERSATIONS: usize = 50;
pub const SPEAKERS_RANGE: [usize; 2] = [2, 4];
pub const SEGMENTS_RANGE: [usize; 2] = [6, 10];
pub const SWITCH_PROBABILITY: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub conversation_id: String,
    pub onset_s: f64,
    pub duration_s: f64,
    pub clip_id: String,
    pub voice: String,
    pub lang: Language,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub segments: Vec<Segment>,
    pub num_speakers: usize,
}

impl Conversation {
    /// Ground-truth labels: voices numbered in order of first appearance.
    pub fn true_labels(&self) -> Vec<usize> {
        let mut seen: Vec<&str> = Vec::new();
        self.segments
            .iter()
            .map(|s| match seen.iter().position(|v| *v == s.voice) {
                Some(k) => k,
                None => {
                    seen.push(&s.voice);
                    seen.len() - 1
                }
            })
            .collect()
    }

    pub fn total_duration_s(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.onset_s + s.duration_s)
    }
}

pub fn conversation_id(k: usize) -> String {
    format!("conv{k:03}")
}

/// Clip indices per voice and language.
type Pools = BTreeMap<String, BTreeMap<Language, Vec<usize>>>;

/// Builds `num_conversations` synthetic multi-speaker conversations.
///
/// Per conversation: `K ~ U{2,3,4}` distinct voices, `U{6..10}` segments,
/// every voice speaking at least once in a shuffled turn order, a base
/// language shared by all speakers, and with probability 0.5 one speaker
/// with at least two turns who switches to a second language for the later
/// half of their turns. Clips are not reused within a conversation. Onsets
/// chain with 0.3 s gaps.
pub fn build_benchmark(corpus: &Corpus, num_conversations: usize, rng: &mut Rng) -> Result<Vec<Conversation>> {
    if num_conversations == 0 {
        return Err(Error::invalid("need at least one conversation"));
    }
    let mut pools: Pools = BTreeMap::new();
    for (i, c) in corpus.clips.iter().enumerate() {
        pools
            .entry(c.voice.clone())
            .or_default()
            .entry(c.lang)
            .or_default()
            .push(i);
    }
    let eligible: Vec<&String> = pools
        .iter()
        .filter(|(_, by_lang)| by_lang.values().map(Vec::len).sum::<usize>() >= SEGMENTS_RANGE[1])
        .map(|(v, _)| v)
        .collect();
    if eligible.len() < SPEAKERS_RANGE[1] {
        return Err(Error::Insufficient(format!(
            "benchmark needs {} voices with >= {} clips, corpus has {}",
            SPEAKERS_RANGE[1],
            SEGMENTS_RANGE[1],
            eligible.len()
        )));
    }
    (0..num_conversations)
        .map(|k| build_one(corpus, &pools, &eligible, conversation_id(k), rng))
        .collect()
}

fn build_one(corpus: &Corpus, pools: &Pools, eligible: &[&String], id: String, rng: &mut Rng) -> Result<Conversation> {
    let k = rng.range_inclusive(SPEAKERS_RANGE[0], SPEAKERS_RANGE[1]);
    let n = rng.range_inclusive(SEGMENTS_RANGE[0], SEGMENTS_RANGE[1]);
    let voices: Vec<&str> = rng
        .sample_indices(eligible.len(), k)
        .into_iter()
        .map(|i| eligible[i].as_str())
        .collect();

    let mut turns: Vec<usize> = (0..k).collect();
    turns.extend((k..n).map(|_| rng.index(k)));
    rng.shuffle(&mut turns);
    let mut counts = vec![0usize; k];
    turns.iter().for_each(|&t| counts[t] += 1);

    let switch = rng.bernoulli(SWITCH_PROBABILITY);
    let switcher = if switch {
        let candidates: Vec<usize> = (0..k).filter(|&v| counts[v] >= 2).collect();
        Some(candidates[rng.index(candidates.len())])
    } else {
        None
    };
    // Turns spoken in the base language: all of them, except the later half
    // of the switching speaker's.
    let base_need = |v: usize| match switcher {
        Some(s) if s == v => counts[v].div_ceil(2),
        _ => counts[v],
    };
    let pool = |v: usize, l: Language| pools[voices[v]].get(&l).map_or(0, Vec::len);

    let langs: BTreeSet<Language> = voices.iter().flat_map(|v| pools[*v].keys().copied()).collect();
    let base_options: Vec<Language> = langs
        .iter()
        .copied()
        .filter(|&l| (0..k).all(|v| pool(v, l) >= base_need(v)))
        .collect();
    if base_options.is_empty() {
        return Err(Error::Insufficient(format!("{id}: no language covers every chosen voice")));
    }
    let base = base_options[rng.index(base_options.len())];
    let second = match switcher {
        Some(s) => {
            let need = counts[s] / 2;
            let options: Vec<Language> = langs
                .iter()
                .copied()
                .filter(|&l| l != base && pool(s, l) >= need)
                .collect();
            if options.is_empty() {
                return Err(Error::Insufficient(format!("{id}: {} has no second language", voices[s])));
            }
            Some(options[rng.index(options.len())])
        }
        None => None,
    };

    // Draw each voice's clips for each language without replacement.
    let mut draws: BTreeMap<(usize, Language), Vec<usize>> = BTreeMap::new();
    for v in 0..k {
        let b = base_need(v);
        let p = &pools[voices[v]][&base];
        draws.insert((v, base), rng.sample_indices(p.len(), b).into_iter().map(|i| p[i]).collect());
        if let (Some(s), Some(l)) = (switcher, second) {
            if s == v {
                let p = &pools[voices[v]][&l];
                let m = counts[v] - b;
                draws.insert((v, l), rng.sample_indices(p.len(), m).into_iter().map(|i| p[i]).collect());
            }
        }
    }

    let mut spoken = vec![0usize; k];
    let mut onset = 0.0;
    let mut segments = Vec::with_capacity(n);
    for &v in &turns {
        let lang = match (switcher, second) {
            (Some(s), Some(l)) if s == v && spoken[v] >= base_need(v) => l,
            _ => base,
        };
        spoken[v] += 1;
        let clip = &corpus.clips[draws.get_mut(&(v, lang)).expect("drawn").remove(0)];
        segments.push(Segment {
            conversation_id: id.clone(),
            onset_s: onset,
            duration_s: clip.duration_s,
            clip_id: clip.clip_id.clone(),
            voice: clip.voice.clone(),
            lang: clip.lang,
        });
        onset += clip.duration_s + GAP_S;
    }
    Ok(Conversation {
        id,
        segments,
        num_speakers: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};

    fn corpus() -> Corpus {
        generate_synthetic(&SynthConfig {
            num_voices: 6,
            clips_per_voice_per_lang: 10,
            feature_dim: 16,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn construction_invariants() {
        let c = corpus();
        let convs = build_benchmark(&c, 50, &mut Rng::new(1337)).unwrap();
        assert_eq!(convs.len(), 50);
        let mut switched = 0;
        for conv in &convs {
            let voices: BTreeSet<_> = conv.segments.iter().map(|s| &s.voice).collect();
            assert_eq!(voices.len(), conv.num_speakers);
            assert!((2..=4).contains(&conv.num_speakers));
            assert!((6..=10).contains(&conv.segments.len()));
            let clips: BTreeSet<_> = conv.segments.iter().map(|s| &s.clip_id).collect();
            assert_eq!(clips.len(), conv.segments.len());
            assert_eq!(conv.segments[0].onset_s, 0.0);
            for w in conv.segments.windows(2) {
                assert!((w[1].onset_s - (w[0].onset_s + w[0].duration_s + GAP_S)).abs() < 1e-9);
            }
            let multilingual = voices
                .iter()
                .filter(|v| {
                    conv.segments
                        .iter()
                        .filter(|s| &&s.voice == *v)
                        .map(|s| s.lang)
                        .collect::<BTreeSet<_>>()
                        .len()
                        > 1
                })
                .count();
            assert!(multilingual <= 1);
            switched += multilingual;
        }
        assert!(switched > 10 && switched < 40, "{switched}");
    }

    #[test]
    fn deterministic() {
        let c = corpus();
        assert_eq!(
            build_benchmark(&c, 5, &mut Rng::new(3)).unwrap(),
            build_benchmark(&c, 5, &mut Rng::new(3)).unwrap()
        );
    }

    #[test]
    fn small_pool_rejected() {
        let c = generate_synthetic(&SynthConfig {
            num_voices: 3,
            clips_per_voice_per_lang: 10,
            feature_dim: 16,
            ..SynthConfig::default()
        })
        .unwrap();
        assert!(build_benchmark(&c, 1, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn true_labels_first_appearance() {
        let mk = |v: &str| Segment {
            conversation_id: "c".into(),
            onset_s: 0.0,
            duration_s: 1.0,
            clip_id: String::new(),
            voice: v.into(),
            lang: Language::En,
        };
        let conv = Conversation {
            id: "c".into(),
            segments: vec![mk("b"), mk("a"), mk("b"), mk("c")],
            num_speakers: 3,
        };
        assert_eq!(conv.true_labels(), vec![0, 1, 0, 2]);
    }
}
