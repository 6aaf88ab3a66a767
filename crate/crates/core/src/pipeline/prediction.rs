//! Document-level predictions and the window merge.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::pipeline::document::{read_jsonl, span_from_disk, span_to_disk, write_jsonl, Document};
use crate::pipeline::window::Window;
use crate::reader::{Span, WindowPrediction};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedMention {
    pub span: Span,
    /// `None` for span-only output (relation extraction).
    pub entity: Option<String>,
    pub probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedTriplet {
    pub subject: Span,
    pub object: Span,
    pub relation: String,
    pub probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictedDocument {
    pub doc_id: String,
    pub words: Vec<String>,
    pub mentions: Vec<PredictedMention>,
    pub triplets: Vec<PredictedTriplet>,
}

impl PredictedDocument {
    pub fn entity_at(&self, span: Span) -> Option<&str> {
        self.mentions.iter().find(|m| m.span == span).and_then(|m| m.entity.as_deref())
    }
}

impl From<&Document> for PredictedDocument {
    fn from(d: &Document) -> Self {
        Self {
            doc_id: d.doc_id.clone(),
            words: d.words.clone(),
            mentions: d
                .mentions
                .iter()
                .map(|m| PredictedMention { span: m.span, entity: Some(m.entity.clone()), probability: None })
                .collect(),
            triplets: d
                .triplets
                .iter()
                .map(|t| PredictedTriplet {
                    subject: t.subject,
                    object: t.object,
                    relation: t.relation.clone(),
                    probability: None,
                })
                .collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MentionRecord {
    start: usize,
    end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probability: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct TripletRecord {
    subj: [usize; 2],
    obj: [usize; 2],
    relation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probability: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord {
    doc_id: String,
    #[serde(default)]
    words: Vec<String>,
    #[serde(default)]
    mentions: Vec<MentionRecord>,
    #[serde(default)]
    triplets: Vec<TripletRecord>,
}

impl From<&PredictedDocument> for PredictionRecord {
    fn from(d: &PredictedDocument) -> Self {
        Self {
            doc_id: d.doc_id.clone(),
            words: d.words.clone(),
            mentions: d
                .mentions
                .iter()
                .map(|m| {
                    let [start, end] = span_to_disk(m.span);
                    MentionRecord { start, end, entity: m.entity.clone(), probability: m.probability }
                })
                .collect(),
            triplets: d
                .triplets
                .iter()
                .map(|t| TripletRecord {
                    subj: span_to_disk(t.subject),
                    obj: span_to_disk(t.object),
                    relation: t.relation.clone(),
                    probability: t.probability,
                })
                .collect(),
        }
    }
}

impl TryFrom<PredictionRecord> for PredictedDocument {
    type Error = CoreError;

    fn try_from(r: PredictionRecord) -> Result<Self> {
        Ok(Self {
            doc_id: r.doc_id,
            words: r.words,
            mentions: r
                .mentions
                .into_iter()
                .map(|m| {
                    Ok(PredictedMention { span: span_from_disk(m.start, m.end)?, entity: m.entity, probability: m.probability })
                })
                .collect::<Result<_>>()?,
            triplets: r
                .triplets
                .into_iter()
                .map(|t| {
                    Ok(PredictedTriplet {
                        subject: span_from_disk(t.subj[0], t.subj[1])?,
                        object: span_from_disk(t.obj[0], t.obj[1])?,
                        relation: t.relation,
                        probability: t.probability,
                    })
                })
                .collect::<Result<_>>()?,
        })
    }
}

/// Reads predictions; a gold document file is also a valid prediction file.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictedDocument>> {
    read_jsonl::<PredictionRecord>(path)?.into_iter().map(PredictedDocument::try_from).collect()
}

pub fn write_predictions(path: &Path, docs: &[PredictedDocument]) -> Result<()> {
    let recs: Vec<PredictionRecord> = docs.iter().map(PredictionRecord::from).collect();
    write_jsonl(path, &recs)
}

/// Merges per-window predictions of one document into document coordinates.
///
/// Identical decisions collapse; for one span with different entity labels
/// the more probable label wins, earlier windows winning exact ties.
/// Triplets are deduplicated on (subject, object, relation), keeping the
/// highest probability.
pub fn merge_predictions(doc_id: &str, words: &[String], parts: &[(&Window, &WindowPrediction)]) -> PredictedDocument {
    let mut mentions: BTreeMap<Span, (Option<String>, Option<f64>)> = BTreeMap::new();
    let mut triplets: BTreeMap<(Span, Span, String), Option<f64>> = BTreeMap::new();
    let better = |new: Option<f64>, old: Option<f64>| new.unwrap_or(f64::NEG_INFINITY) > old.unwrap_or(f64::NEG_INFINITY);
    for (w, p) in parts {
        debug_assert_eq!(w.doc_id, doc_id);
        if p.links.is_empty() {
            for s in &p.spans {
                if let Some(d) = w.to_document(*s) {
                    mentions.entry(d).or_insert((None, None));
                }
            }
        }
        for l in &p.links {
            let Some(d) = w.to_document(l.span) else { continue };
            let cand = (Some(l.entity.clone()), Some(l.probability));
            match mentions.get(&d) {
                Some((None, _)) | None => {
                    mentions.insert(d, cand);
                }
                Some((_, old)) if better(cand.1, *old) => {
                    mentions.insert(d, cand);
                }
                Some(_) => {}
            }
        }
        for t in &p.triplets {
            let (Some(s), Some(o)) = (w.to_document(t.subject), w.to_document(t.object)) else { continue };
            let prob = Some(t.probability);
            let slot = triplets.entry((s, o, t.relation.clone())).or_insert(None);
            if better(prob, *slot) {
                *slot = prob;
            }
            for span in [s, o] {
                mentions.entry(span).or_insert((None, None));
            }
        }
    }
    PredictedDocument {
        doc_id: doc_id.to_string(),
        words: words.to_vec(),
        mentions: mentions
            .into_iter()
            .map(|(span, (entity, probability))| PredictedMention { span, entity, probability })
            .collect(),
        triplets: triplets
            .into_iter()
            .map(|((subject, object, relation), probability)| PredictedTriplet { subject, object, relation, probability })
            .collect(),
    }
}
