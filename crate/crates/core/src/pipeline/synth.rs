//! Deterministic synthetic corpora with exact gold annotations.
//!
//! Every entity owns a unique key word; its title is the key, optionally led
//! by a shared "family" word. Distractor entities never occur in text and
//! are assigned to KB entities round-robin as confusable twins. Relation
//! types own trigger words, and a relation sentence reads
//! `filler SUBJECT trigger OBJECT filler`. Relation types are distinct within
//! a document.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::passage::{Passage, PassageKind};
use crate::pipeline::document::{Document, GoldMention, GoldTriplet, NME};
use crate::reader::Span;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Entities that occur in documents.
    pub entities: usize,
    /// Extra KB entities that never occur, one per mentioned entity at most.
    pub distractors: usize,
    pub relations: usize,
    pub documents: usize,
    /// Out-of-KB names used for NME mentions.
    pub nme_entities: usize,
    pub nme_rate: f64,
    /// Probability that a title starts with a shared family word.
    pub ambiguity_rate: f64,
    /// Distractors copy their twin's text except for the key word.
    pub adversarial: bool,
    pub topics: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Probability that a sentence expresses a relation.
    pub relation_rate: f64,
    pub description_len: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            entities: 50,
            distractors: 50,
            relations: 5,
            documents: 500,
            nme_entities: 10,
            nme_rate: 0.1,
            ambiguity_rate: 0.3,
            adversarial: false,
            topics: 5,
            min_sentences: 3,
            max_sentences: 5,
            relation_rate: 0.5,
            description_len: 6,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Validation(format!("synthetic spec: {m}")));
        if self.entities < 2 {
            return bad("need at least two entities");
        }
        if self.topics == 0 || self.documents == 0 {
            return bad("topics and documents must be positive");
        }
        if self.min_sentences == 0 || self.min_sentences > self.max_sentences {
            return bad("sentence range must satisfy 1 <= min <= max");
        }
        for (name, p) in [("nme_rate", self.nme_rate), ("ambiguity_rate", self.ambiguity_rate), ("relation_rate", self.relation_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.nme_rate > 0.0 && self.nme_entities == 0 {
            return bad("nme_rate > 0 needs NME names");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub entities: Vec<Passage>,
    pub relations: Vec<Passage>,
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "st", "tr"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

struct Words {
    used: HashSet<String>,
}

impl Words {
    fn fresh(&mut self, rng: &mut ChaCha8Rng, syllables: usize) -> String {
        loop {
            let w: String = (0..syllables)
                .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
                .collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn many(&mut self, rng: &mut ChaCha8Rng, n: usize, syllables: usize) -> Vec<String> {
        (0..n).map(|_| self.fresh(rng, syllables)).collect()
    }
}

struct Entity {
    id: String,
    title: Vec<String>,
    topic: usize,
}

pub fn generate(spec: &SynthSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words = Words { used: HashSet::new() };
    let fillers = words.many(&mut rng, 60, 1);
    let topics = words.many(&mut rng, spec.topics, 2);
    let families = words.many(&mut rng, 6, 2);
    let descr = words.many(&mut rng, 40, 2);

    let make_title = |rng: &mut ChaCha8Rng, key: String| {
        if rng.gen_bool(spec.ambiguity_rate) {
            vec![families.choose(rng).unwrap().clone(), key]
        } else {
            vec![key]
        }
    };

    let mut entities = Vec::with_capacity(spec.entities);
    let mut passages = Vec::with_capacity(spec.entities + spec.distractors);
    for i in 0..spec.entities {
        let key = words.fresh(&mut rng, 3);
        let title = make_title(&mut rng, key);
        let desc: Vec<String> = (0..spec.description_len).map(|_| descr.choose(&mut rng).unwrap().clone()).collect();
        let e = Entity { id: format!("E{i:04}"), title, topic: i % spec.topics };
        passages.push(Passage {
            id: e.id.clone(),
            kind: PassageKind::Entity,
            text: format!("{} {}", e.title.join(" "), desc.join(" ")),
            title: Some(e.title.join(" ")),
            is_nme: false,
        });
        entities.push(e);
    }
    for j in 0..spec.distractors {
        let twin = &entities[j % spec.entities];
        let key = words.fresh(&mut rng, 3);
        let (title, text) = if spec.adversarial {
            let mut t = twin.title.clone();
            *t.last_mut().unwrap() = key.clone();
            let twin_text = &passages[j % spec.entities].text;
            let rest: Vec<&str> = twin_text.split(' ').skip(twin.title.len()).collect();
            (t.clone(), format!("{} {}", t.join(" "), rest.join(" ")))
        } else {
            let t = make_title(&mut rng, key);
            let desc: Vec<String> = (0..spec.description_len).map(|_| descr.choose(&mut rng).unwrap().clone()).collect();
            (t.clone(), format!("{} {}", t.join(" "), desc.join(" ")))
        };
        passages.push(Passage {
            id: format!("E{:04}", spec.entities + j),
            kind: PassageKind::Entity,
            text,
            title: Some(title.join(" ")),
            is_nme: false,
        });
    }

    let nme_names = words.many(&mut rng, spec.nme_entities, 3);
    let mut relations = Vec::with_capacity(spec.relations);
    let mut triggers: Vec<Vec<Vec<String>>> = Vec::with_capacity(spec.relations);
    for r in 0..spec.relations {
        let name = words.fresh(&mut rng, 2);
        let trig: Vec<Vec<String>> = (0..2).map(|t| words.many(&mut rng, 1 + t, 1)).collect();
        let definition: Vec<String> = (0..spec.description_len / 2).map(|_| descr.choose(&mut rng).unwrap().clone()).collect();
        relations.push(Passage {
            id: format!("R{r:02}"),
            kind: PassageKind::Relation,
            text: format!("{name} {} {}", trig.iter().map(|t| t.join(" ")).collect::<Vec<_>>().join(" "), definition.join(" ")),
            title: Some(name),
            is_nme: false,
        });
        triggers.push(trig);
    }

    let mut documents = Vec::with_capacity(spec.documents);
    for d in 0..spec.documents {
        let topic = rng.gen_range(0..spec.topics);
        let mut doc = Document {
            doc_id: format!("d{d:05}"),
            words: vec![topics[topic].clone()],
            mentions: Vec::new(),
            triplets: Vec::new(),
        };
        let mut rel_pool: Vec<usize> = (0..spec.relations).collect();
        rel_pool.shuffle(&mut rng);
        let n_sent = rng.gen_range(spec.min_sentences..=spec.max_sentences);
        for _ in 0..n_sent {
            let pick_entity = |rng: &mut ChaCha8Rng, allow_nme: bool| -> (Vec<String>, String) {
                if allow_nme && rng.gen_bool(spec.nme_rate) {
                    return (vec![nme_names.choose(rng).unwrap().clone()], NME.to_string());
                }
                let e = if rng.gen_bool(0.8) {
                    let same: Vec<&Entity> = entities.iter().filter(|e| e.topic == topic).collect();
                    same.choose(rng).copied().unwrap_or_else(|| entities.choose(rng).unwrap())
                } else {
                    entities.choose(rng).unwrap()
                };
                (e.title.clone(), e.id.clone())
            };
            let filler = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| -> Vec<String> {
                let n = rng.gen_range(lo..=hi);
                (0..n).map(|_| fillers.choose(rng).unwrap().clone()).collect()
            };
            let push_mention = |doc: &mut Document, title: Vec<String>, entity: String| -> Span {
                let start = doc.words.len() + 1;
                doc.words.extend(title);
                let span = Span::new(start, doc.words.len());
                doc.mentions.push(GoldMention { span, entity });
                span
            };
            let relational = !rel_pool.is_empty() && rng.gen_bool(spec.relation_rate);
            let lead = filler(&mut rng, 2, 3);
            doc.words.extend(lead);
            if relational {
                let r = rel_pool.pop().unwrap();
                let (mut s, mut s_id) = pick_entity(&mut rng, false);
                let (mut o, mut o_id) = pick_entity(&mut rng, false);
                while o_id == s_id {
                    (o, o_id) = pick_entity(&mut rng, false);
                    if o_id == s_id {
                        (s, s_id) = pick_entity(&mut rng, false);
                    }
                }
                let subject = push_mention(&mut doc, s, s_id);
                doc.words.extend(triggers[r].choose(&mut rng).unwrap().iter().cloned());
                let object = push_mention(&mut doc, o, o_id);
                doc.triplets.push(GoldTriplet { subject, object, relation: relations[r].id.clone() });
                let tail = filler(&mut rng, 1, 2);
                doc.words.extend(tail);
            } else {
                let (m, id) = pick_entity(&mut rng, true);
                push_mention(&mut doc, m, id);
                let tail = filler(&mut rng, 1, 3);
                doc.words.extend(tail);
            }
        }
        documents.push(doc);
    }
    passages.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Corpus { documents, entities: passages, relations })
}

/// Splits documents into consecutive train/dev/test parts.
pub fn split(docs: &[Document], dev_fraction: f64, test_fraction: f64) -> (Vec<Document>, Vec<Document>, Vec<Document>) {
    let n = docs.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    let n_dev = (n as f64 * dev_fraction).round() as usize;
    let n_train = n.saturating_sub(n_test + n_dev);
    (
        docs[..n_train].to_vec(),
        docs[n_train..(n_train + n_dev).min(n)].to_vec(),
        docs[(n_train + n_dev).min(n)..].to_vec(),
    )
}
