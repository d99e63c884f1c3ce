//! Code-switching diarisation benchmark: synthetic conversations with known
//! segment boundaries, clustering with the true speaker count, and scoring by
//! Adjusted Rand Index and cross-script recall.

pub mod benchmark;
pub mod cluster;
pub mod metrics;
pub mod rttm;

use serde::{Deserialize, Serialize};

pub use benchmark::{build_benchmark, Conversation, Segment};
pub use cluster::agglomerative_cluster;
pub use metrics::{adjusted_rand_index, cross_script_recall, CsRecall};
pub use rttm::{rttm_read, rttm_write, RttmTurn};

use crate::corpus::Corpus;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::gap::median;
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversationScore {
    pub conversation_id: String,
    pub ari: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiarReport {
    pub encoder_name: String,
    pub per_conversation: Vec<ConversationScore>,
    pub ari_mean: f64,
    pub ari_median: f64,
    pub cs_recall: f64,
    pub cs_recall_vacuous: bool,
    pub cross_segments: usize,
    pub conversations: usize,
    pub segments: usize,
    pub total_minutes: f64,
}

pub const TABLE_HEADER: &str = "encoder  ari_mean  ari_median  cs_recall";

impl DiarReport {
    pub fn table_row(&self) -> String {
        format!(
            "{}  {:.3}  {:.3}  {:.3}",
            self.encoder_name, self.ari_mean, self.ari_median, self.cs_recall
        )
    }
}

/// One predicted label per segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedLabel {
    pub conversation_id: String,
    pub segment: usize,
    pub label: usize,
}

/// Clusters every conversation with its true speaker count and scores it.
pub fn evaluate_conversations(
    corpus: &Corpus,
    encoder: &dyn Encoder,
    conversations: &[Conversation],
) -> Result<(DiarReport, Vec<Vec<usize>>)> {
    if conversations.is_empty() {
        return Err(Error::invalid("no conversations to evaluate"));
    }
    let mut order: Vec<&Conversation> = conversations.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));

    let mut scores = Vec::with_capacity(order.len());
    let mut predicted = Vec::with_capacity(order.len());
    for conv in &order {
        let clips = conv
            .segments
            .iter()
            .map(|s| {
                corpus
                    .find(&s.clip_id)
                    .ok_or_else(|| Error::Insufficient(format!("clip {} not in corpus", s.clip_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let emb: Vec<Vec<f64>> = encoder.embed_clips(&clips)?.into_iter().map(|e| e.vector).collect();
        let labels = agglomerative_cluster(&emb, conv.num_speakers)?;
        scores.push(ConversationScore {
            conversation_id: conv.id.clone(),
            ari: adjusted_rand_index(&labels, &conv.true_labels())?,
        });
        predicted.push(labels);
    }
    let owned: Vec<Conversation> = order.iter().map(|c| (*c).clone()).collect();
    let cs = cross_script_recall(&owned, &predicted)?;
    let aris: Vec<f64> = scores.iter().map(|s| s.ari).collect();
    let segments: usize = order.iter().map(|c| c.segments.len()).sum();
    let seconds: f64 = order
        .iter()
        .flat_map(|c| &c.segments)
        .map(|s| s.duration_s)
        .sum();
    let report = DiarReport {
        encoder_name: encoder.name().to_string(),
        ari_mean: aris.iter().sum::<f64>() / aris.len() as f64,
        ari_median: median(&aris)?,
        per_conversation: scores,
        cs_recall: cs.recall,
        cs_recall_vacuous: cs.vacuous,
        cross_segments: cs.cross_segments,
        conversations: order.len(),
        segments,
        total_minutes: seconds / 60.0,
    };
    Ok((report, predicted))
}

/// Builds the benchmark from `rng` and evaluates `encoder` on it.
pub fn run_diar_eval(
    corpus: &Corpus,
    encoder: &dyn Encoder,
    num_conversations: usize,
    rng: &mut Rng,
) -> Result<DiarReport> {
    let conversations = build_benchmark(corpus, num_conversations, rng)?;
    Ok(evaluate_conversations(corpus, encoder, &conversations)?.0)
}

/// Flattens per-conversation labels into records, conversations sorted by id.
pub fn label_records(conversations: &[Conversation], predicted: &[Vec<usize>]) -> Vec<PredictedLabel> {
    let mut order: Vec<&Conversation> = conversations.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    order
        .iter()
        .zip(predicted)
        .flat_map(|(c, labels)| {
            labels.iter().enumerate().map(|(k, &label)| PredictedLabel {
                conversation_id: c.id.clone(),
                segment: k,
                label,
            })
        })
        .collect()
}
