//! Micro-averaged strong-matching metrics with set semantics.
//!
//! Entity linking is scored InKB: NME mentions are removed from gold and
//! predictions before counting. Relation triplets match on exact subject and
//! object boundaries plus relation; closed IE also requires both endpoint
//! entities.

use std::collections::{BTreeMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::pipeline::document::{Document, NME};
use crate::pipeline::prediction::PredictedDocument;
use crate::reader::{Span, Task};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl EvalReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { precision, recall, f1, tp, fp, fn_ }
    }

    fn from_sets<T: Eq + Hash>(gold: &HashSet<T>, pred: &HashSet<T>) -> Self {
        let tp = pred.intersection(gold).count();
        Self::from_counts(tp, pred.len() - tp, gold.len() - tp)
    }
}

/// Reports for one task; `el` under cIE is restricted to triplet entities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub el: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub re: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cie: Option<EvalReport>,
}

impl TaskReport {
    /// The headline metric of the task.
    pub fn main(&self) -> EvalReport {
        self.cie.or(self.re).or(self.el).unwrap_or_default()
    }
}

type LinkKey = (String, Span, String);
type TripletKey = (String, Span, Span, String);
type FullKey = (String, Span, String, Span, String, String);

fn by_id(pred: &[PredictedDocument]) -> BTreeMap<&str, Vec<&PredictedDocument>> {
    let mut map: BTreeMap<&str, Vec<&PredictedDocument>> = BTreeMap::new();
    for p in pred {
        map.entry(p.doc_id.as_str()).or_default().push(p);
    }
    map
}

fn gold_links(gold: &[Document], only_triplet_spans: bool) -> HashSet<LinkKey> {
    let mut out = HashSet::new();
    for d in gold {
        let keep: HashSet<Span> = d.triplets.iter().flat_map(|t| [t.subject, t.object]).collect();
        for m in &d.mentions {
            if m.entity != NME && (!only_triplet_spans || keep.contains(&m.span)) {
                out.insert((d.doc_id.clone(), m.span, m.entity.clone()));
            }
        }
    }
    out
}

fn pred_links(pred: &[PredictedDocument], only_triplet_spans: bool) -> HashSet<LinkKey> {
    let mut out = HashSet::new();
    for d in pred {
        let keep: HashSet<Span> = d.triplets.iter().flat_map(|t| [t.subject, t.object]).collect();
        for m in &d.mentions {
            let Some(e) = &m.entity else { continue };
            if e != NME && (!only_triplet_spans || keep.contains(&m.span)) {
                out.insert((d.doc_id.clone(), m.span, e.clone()));
            }
        }
    }
    out
}

/// InKB strong-matching entity linking.
pub fn eval_el(gold: &[Document], pred: &[PredictedDocument]) -> EvalReport {
    EvalReport::from_sets(&gold_links(gold, false), &pred_links(pred, false))
}

/// Boundaries evaluation of relation triplets.
pub fn eval_re(gold: &[Document], pred: &[PredictedDocument]) -> EvalReport {
    let g: HashSet<TripletKey> = gold
        .iter()
        .flat_map(|d| d.triplets.iter().map(move |t| (d.doc_id.clone(), t.subject, t.object, t.relation.clone())))
        .collect();
    let p: HashSet<TripletKey> = pred
        .iter()
        .flat_map(|d| d.triplets.iter().map(move |t| (d.doc_id.clone(), t.subject, t.object, t.relation.clone())))
        .collect();
    EvalReport::from_sets(&g, &p)
}

/// Triplets with both endpoint spans, their entities and the relation.
pub fn eval_cie(gold: &[Document], pred: &[PredictedDocument]) -> EvalReport {
    let mut g: HashSet<FullKey> = HashSet::new();
    for d in gold {
        for t in &d.triplets {
            let (Some(se), Some(oe)) = (d.entity_at(t.subject), d.entity_at(t.object)) else { continue };
            g.insert((d.doc_id.clone(), t.subject, se.into(), t.object, oe.into(), t.relation.clone()));
        }
    }
    let mut p: HashSet<FullKey> = HashSet::new();
    let preds = by_id(pred);
    for docs in preds.values() {
        for d in docs {
            for t in &d.triplets {
                let label = |s: Span| d.entity_at(s).unwrap_or("").to_string();
                p.insert((d.doc_id.clone(), t.subject, label(t.subject), t.object, label(t.object), t.relation.clone()));
            }
        }
    }
    EvalReport::from_sets(&g, &p)
}

/// Entity linking restricted to mentions that take part in triplets.
pub fn eval_cie_links(gold: &[Document], pred: &[PredictedDocument]) -> EvalReport {
    EvalReport::from_sets(&gold_links(gold, true), &pred_links(pred, true))
}

pub fn evaluate(task: Task, gold: &[Document], pred: &[PredictedDocument]) -> TaskReport {
    match task {
        Task::El => TaskReport { el: Some(eval_el(gold, pred)), re: None, cie: None },
        Task::Re => TaskReport { el: None, re: Some(eval_re(gold, pred)), cie: None },
        Task::Cie => TaskReport {
            el: Some(eval_cie_links(gold, pred)),
            re: Some(eval_re(gold, pred)),
            cie: Some(eval_cie(gold, pred)),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::document::{GoldMention, GoldTriplet};
    use crate::pipeline::prediction::{PredictedMention, PredictedTriplet};
    use proptest::prelude::*;

    fn gm(s: usize, e: usize, ent: &str) -> GoldMention {
        GoldMention { span: Span::new(s, e), entity: ent.into() }
    }

    fn pm(s: usize, e: usize, ent: &str) -> PredictedMention {
        PredictedMention { span: Span::new(s, e), entity: Some(ent.into()), probability: Some(0.9) }
    }

    fn doc(mentions: Vec<GoldMention>, triplets: Vec<GoldTriplet>) -> Document {
        Document { doc_id: "d".into(), words: vec!["w".into(); 10], mentions, triplets }
    }

    fn pred(mentions: Vec<PredictedMention>, triplets: Vec<PredictedTriplet>) -> PredictedDocument {
        PredictedDocument { doc_id: "d".into(), words: vec![], mentions, triplets }
    }

    fn gt(s: (usize, usize), o: (usize, usize), r: &str) -> GoldTriplet {
        GoldTriplet { subject: Span::new(s.0, s.1), object: Span::new(o.0, o.1), relation: r.into() }
    }

    fn pt(s: (usize, usize), o: (usize, usize), r: &str) -> PredictedTriplet {
        PredictedTriplet { subject: Span::new(s.0, s.1), object: Span::new(o.0, o.1), relation: r.into(), probability: None }
    }

    #[test]
    fn f1_identity() {
        let r = EvalReport::from_counts(3, 1, 2);
        assert_eq!(r.f1, 2.0 * r.precision * r.recall / (r.precision + r.recall));
        assert_eq!(EvalReport::from_counts(0, 0, 0).f1, 0.0);
    }

    #[test]
    fn el_hand_counts() {
        let g = [doc(vec![gm(1, 2, "E5")], vec![])];
        let r = eval_el(&g, &[pred(vec![pm(1, 2, "E5"), pm(4, 4, "E7")], vec![])]);
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 0));
        assert_eq!(r.precision, 0.5);
        assert_eq!(r.recall, 1.0);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);

        let r = eval_el(&g, &[pred(vec![pm(1, 2, "E6")], vec![])]);
        assert_eq!((r.tp, r.fp, r.fn_), (0, 1, 1));
        let r = eval_el(&g, &[pred(vec![pm(1, 3, "E5")], vec![])]);
        assert_eq!((r.tp, r.fp, r.fn_), (0, 1, 1));
    }

    #[test]
    fn nme_excluded_on_both_sides() {
        let g = [doc(vec![gm(1, 2, "E5"), gm(4, 4, NME)], vec![])];
        let r = eval_el(&g, &[pred(vec![pm(1, 2, "E5"), pm(6, 6, NME)], vec![])]);
        assert_eq!((r.tp, r.fp, r.fn_), (1, 0, 0));
    }

    #[test]
    fn re_order_sensitive_and_set_semantics() {
        let g = [doc(vec![], vec![gt((1, 1), (3, 3), "R")])];
        let r = eval_re(&g, &[pred(vec![], vec![pt((3, 3), (1, 1), "R")])]);
        assert_eq!((r.tp, r.fp, r.fn_), (0, 1, 1));
        let r = eval_re(&g, &[pred(vec![], vec![pt((1, 1), (3, 3), "R"), pt((1, 1), (3, 3), "R")])]);
        assert_eq!((r.tp, r.fp, r.fn_), (1, 0, 0));
    }

    #[test]
    fn cie_needs_both_entities() {
        let g = [doc(vec![gm(1, 1, "E1"), gm(3, 3, "E2"), gm(5, 5, "E3")], vec![gt((1, 1), (3, 3), "R")])];
        let p = [pred(vec![pm(1, 1, "E1"), pm(3, 3, "E9")], vec![pt((1, 1), (3, 3), "R")])];
        assert_eq!(eval_re(&g, &p).tp, 1);
        let c = eval_cie(&g, &p);
        assert_eq!((c.tp, c.fp, c.fn_), (0, 1, 1));
        // E3 is outside every triplet and is ignored by the restricted link score.
        let l = eval_cie_links(&g, &p);
        assert_eq!((l.tp, l.fp, l.fn_), (1, 1, 1));
        let p = [pred(vec![pm(1, 1, "E1"), pm(3, 3, "E2")], vec![pt((1, 1), (3, 3), "R")])];
        assert_eq!(eval_cie(&g, &p).f1, 1.0);
    }

    #[test]
    fn gold_as_prediction_scores_one() {
        let g = doc(vec![gm(1, 1, "E1"), gm(3, 3, "E2"), gm(5, 5, NME)], vec![gt((1, 1), (3, 3), "R")]);
        let p = [PredictedDocument::from(&g)];
        let rep = evaluate(Task::Cie, &[g], &p);
        assert_eq!(rep.el.unwrap().f1, 1.0);
        assert_eq!(rep.re.unwrap().f1, 1.0);
        assert_eq!(rep.cie.unwrap().f1, 1.0);
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_idempotent(
            gold in prop::collection::vec((1usize..6, 0usize..3, 0usize..4), 0..8),
            guess in prop::collection::vec((1usize..6, 0usize..3, 0usize..4), 0..8),
            rot in 0usize..8,
        ) {
            let ent = |e: usize| if e == 0 { NME.to_string() } else { format!("E{e}") };
            let mut seen = HashSet::new();
            let gm_: Vec<GoldMention> = gold.iter()
                .filter(|(s, l, _)| seen.insert((*s, *l)))
                .map(|&(s, l, e)| GoldMention { span: Span::new(s, s + l), entity: ent(e) })
                .collect();
            let pm_: Vec<PredictedMention> = guess.iter()
                .map(|&(s, l, e)| PredictedMention { span: Span::new(s, s + l), entity: Some(ent(e)), probability: None })
                .collect();
            let g = [doc(gm_, vec![])];
            let base = eval_el(&g, &[pred(pm_.clone(), vec![])]);
            let mut rotated = pm_.clone();
            if !rotated.is_empty() {
                let k = rot % rotated.len();
                rotated.rotate_left(k);
            }
            prop_assert_eq!(base, eval_el(&g, &[pred(rotated, vec![])]));
            let mut doubled = pm_.clone();
            doubled.extend(pm_);
            prop_assert_eq!(base, eval_el(&g, &[pred(doubled, vec![])]));
        }
    }
}
