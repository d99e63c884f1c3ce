use std::collections::BTreeMap;

use super::benchmark::Conversation;
use crate::corpus::Language;
use crate::error::{Error, Result};

fn choose2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand Index from the contingency table. Two identical trivial
/// partitions (all one cluster, or all singletons) make the formula 0/0;
/// that case is defined as 1.0.
pub fn adjusted_rand_index(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape("ari", format!("{} vs {} labels", pred.len(), truth.len())));
    }
    if pred.len() < 2 {
        return Err(Error::invalid("ARI needs at least two items"));
    }
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *table.entry((p, t)).or_default() += 1;
        *rows.entry(p).or_default() += 1;
        *cols.entry(t).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    // Scaled by C(n, 2) so every term is an integer until the final division.
    let pairs = choose2(pred.len());
    let num = index * pairs - sum_a * sum_b;
    let den = 0.5 * (sum_a + sum_b) * pairs - sum_a * sum_b;
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok(num / den)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsRecall {
    pub recall: f64,
    pub hits: usize,
    pub cross_segments: usize,
    pub qualifying_speakers: usize,
    /// No speaker appeared in two or more languages; `recall` is 1.0 by definition.
    pub vacuous: bool,
}

/// Micro-averaged cross-script recall: for every speaker seen in two or more
/// languages within a conversation, the fraction of their minority-language
/// segments that land in the cluster holding most of their majority-language
/// segments.
pub fn cross_script_recall(conversations: &[Conversation], predicted: &[Vec<usize>]) -> Result<CsRecall> {
    if conversations.len() != predicted.len() {
        return Err(Error::shape(
            "cs_recall",
            format!("{} conversations, {} label lists", conversations.len(), predicted.len()),
        ));
    }
    let (mut hits, mut cross, mut speakers) = (0, 0, 0);
    for (conv, labels) in conversations.iter().zip(predicted) {
        if conv.segments.len() != labels.len() {
            return Err(Error::shape(
                "cs_recall",
                format!("{}: {} segments, {} labels", conv.id, conv.segments.len(), labels.len()),
            ));
        }
        let mut by_voice: BTreeMap<&str, Vec<(Language, usize)>> = BTreeMap::new();
        for (s, &l) in conv.segments.iter().zip(labels) {
            by_voice.entry(s.voice.as_str()).or_default().push((s.lang, l));
        }
        for segs in by_voice.values() {
            let mut lang_counts: BTreeMap<&str, usize> = BTreeMap::new();
            for (lang, _) in segs {
                *lang_counts.entry(lang.symbol()).or_default() += 1;
            }
            if lang_counts.len() < 2 {
                continue;
            }
            speakers += 1;
            // Ascending iteration and keeping the earlier entry on ties picks the
            // smallest symbol.
            let majority = lang_counts
                .iter()
                .fold(None::<(&str, usize)>, |best, (&sym, &n)| match best {
                    Some((_, b)) if b >= n => best,
                    _ => Some((sym, n)),
                })
                .expect("non-empty")
                .0;
            let mut cluster_counts: BTreeMap<usize, usize> = BTreeMap::new();
            for (lang, l) in segs {
                if lang.symbol() == majority {
                    *cluster_counts.entry(*l).or_default() += 1;
                }
            }
            let anchor = cluster_counts
                .iter()
                .fold(None::<(usize, usize)>, |best, (&c, &n)| match best {
                    Some((_, b)) if b >= n => best,
                    _ => Some((c, n)),
                })
                .expect("non-empty")
                .0;
            for (lang, l) in segs {
                if lang.symbol() != majority {
                    cross += 1;
                    if *l == anchor {
                        hits += 1;
                    }
                }
            }
        }
    }
    Ok(CsRecall {
        recall: if cross == 0 { 1.0 } else { hits as f64 / cross as f64 },
        hits,
        cross_segments: cross,
        qualifying_speakers: speakers,
        vacuous: speakers == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diarization::benchmark::Segment;

    #[test]
    fn ari_hand_cases() {
        assert_eq!(adjusted_rand_index(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap(), -0.5);
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 7, 7]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 1, 2], &[2, 0, 1]).unwrap(), 1.0);
        // All singletons against one cluster: no agreement beyond chance.
        assert_eq!(adjusted_rand_index(&[0, 1, 2, 3], &[0, 0, 0, 0]).unwrap(), 0.0);
        assert!(adjusted_rand_index(&[0], &[0]).is_err());
        assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn ari_symmetric() {
        let a = [0, 0, 1, 2, 2, 2, 1];
        let b = [1, 0, 0, 2, 2, 1, 1];
        assert_eq!(adjusted_rand_index(&a, &b).unwrap(), adjusted_rand_index(&b, &a).unwrap());
    }

    fn seg(conv: &str, voice: &str, lang: Language) -> Segment {
        Segment {
            conversation_id: conv.into(),
            onset_s: 0.0,
            duration_s: 1.0,
            clip_id: String::new(),
            voice: voice.into(),
            lang,
        }
    }

    fn conv(id: &str, segs: &[(&str, Language)]) -> Conversation {
        let segments: Vec<Segment> = segs.iter().map(|(v, l)| seg(id, v, *l)).collect();
        let k = segments.iter().map(|s| &s.voice).collect::<std::collections::BTreeSet<_>>().len();
        Conversation {
            id: id.into(),
            segments,
            num_speakers: k,
        }
    }

    #[test]
    fn single_miss_counts_zero_of_one() {
        use Language::*;
        let c = conv("c", &[("a", En), ("a", En), ("a", En), ("a", Hi), ("b", En)]);
        let r = cross_script_recall(&[c], &[vec![0, 0, 0, 1, 1]]).unwrap();
        assert_eq!((r.hits, r.cross_segments, r.qualifying_speakers), (0, 1, 1));
        assert_eq!(r.recall, 0.0);
    }

    #[test]
    fn mixed_two_conversation_hand_count() {
        use Language::*;
        // c1: speaker a has en×3 (clusters 0,0,1) and te×2 (clusters 0,1) → anchor 0, 1 of 2.
        //     speaker b is English only and does not qualify.
        // c2: speaker x has hi×1 (cluster 2), ta×1 (cluster 0): tie, majority "hi"
        //     (smaller symbol), anchor 2, ta segment in 0 → 0 of 1.
        //     speaker y has en×2 (clusters 1,1) and hi×2 (clusters 1,0):
        //     majority "en", anchor 1, hi in {1,0} → 1 of 2.
        let c1 = conv("c1", &[("a", En), ("a", Te), ("a", En), ("b", En), ("a", En), ("a", Te)]);
        let p1 = vec![0, 0, 0, 1, 1, 1];
        let c2 = conv("c2", &[("x", Hi), ("y", En), ("y", Hi), ("x", Ta), ("y", En), ("y", Hi)]);
        let p2 = vec![2, 1, 1, 0, 1, 0];
        let r = cross_script_recall(&[c1, c2], &[p1, p2]).unwrap();
        assert_eq!(r.qualifying_speakers, 3);
        assert_eq!(r.cross_segments, 5);
        assert_eq!(r.hits, 2);
        assert!((r.recall - 0.4).abs() < 1e-15);
    }

    #[test]
    fn vacuous_when_nobody_switches() {
        use Language::*;
        let c = conv("c", &[("a", En), ("b", Hi)]);
        let r = cross_script_recall(&[c], &[vec![0, 1]]).unwrap();
        assert!(r.vacuous);
        assert_eq!(r.recall, 1.0);
    }
}
