//! Glue between documents, candidate caches, the retriever and the reader.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rrx_numerics::Exec;

use crate::error::{CoreError, Result};
use crate::passage::Passage;
use crate::pipeline::cache::CandidateCache;
use crate::pipeline::document::{Document, NME};
use crate::pipeline::prediction::{merge_predictions, PredictedDocument};
use crate::pipeline::window::{make_windows, Window};
use crate::reader::train::ReaderExample;
use crate::reader::{Reader, Span, Task, WindowGold, WindowPrediction};
use crate::retriever::train::RetrieverExample;
use crate::retriever::Retriever;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub window: usize,
    pub stride: usize,
    pub prefix_first_word: bool,
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.window < self.stride {
            return Err(CoreError::Config(format!("need window >= stride >= 1, got {} / {}", self.window, self.stride)));
        }
        Ok(())
    }
}

/// Windows of every document, in document order.
pub fn windows_for(docs: &[Document], spec: WindowSpec, exec: Exec) -> Result<Vec<Window>> {
    spec.validate()?;
    let per_doc = exec.map(docs, |d| make_windows(d, spec.window, spec.stride, spec.prefix_first_word));
    Ok(per_doc.into_iter().flatten().collect())
}

/// Entity retrieval examples: windows with at least one in-KB gold mention.
pub fn entity_retrieval_examples(r: &Retriever, windows: &[Window]) -> Vec<RetrieverExample> {
    windows
        .iter()
        .filter_map(|w| {
            let gold: BTreeSet<String> = w.mentions.iter().filter(|m| m.entity != NME).map(|m| m.entity.clone()).collect();
            (!gold.is_empty()).then(|| RetrieverExample { id: w.id(), query: r.query_tokens(&w.words), gold: gold.into_iter().collect() })
        })
        .collect()
}

/// Relation retrieval examples: windows with at least one gold triplet.
pub fn relation_retrieval_examples(r: &Retriever, windows: &[Window]) -> Vec<RetrieverExample> {
    windows
        .iter()
        .filter_map(|w| {
            let gold: BTreeSet<String> = w.triplets.iter().map(|t| t.relation.clone()).collect();
            (!gold.is_empty()).then(|| RetrieverExample { id: w.id(), query: r.query_tokens(&w.words), gold: gold.into_iter().collect() })
        })
        .collect()
}

/// Where a window's entity and relation candidates come from.
#[derive(Debug, Clone, Copy)]
pub struct CandidateSources<'a> {
    pub entities: Option<&'a CandidateCache>,
    pub relations: Option<&'a CandidateCache>,
    pub top_k: usize,
    pub top_k_relations: usize,
}

impl CandidateSources<'_> {
    fn lists(&self, reader: &Reader, window_id: &str) -> Result<(Vec<String>, Vec<String>)> {
        let task = reader.task();
        let pick = |cache: Option<&CandidateCache>, k: usize, what: &str| -> Result<Vec<String>> {
            match cache {
                Some(c) => c.top(window_id, k),
                None => Err(CoreError::Validation(format!("task {task} needs {what} candidates"))),
            }
        };
        let ents = if task.links() { pick(self.entities, self.top_k, "entity")? } else { Vec::new() };
        let rels = if task.relates() { pick(self.relations, self.top_k_relations, "relation")? } else { Vec::new() };
        Ok((ents, rels))
    }
}

/// Puts each missing gold id into the list, replacing the lowest-ranked
/// non-gold candidate (or appending while the list is short of `k`).
fn inject(list: &mut Vec<String>, gold: &[String], k: usize) {
    let wanted: HashSet<&String> = gold.iter().collect();
    for g in gold {
        if list.contains(g) || k == 0 {
            continue;
        }
        if list.len() < k {
            list.push(g.clone());
        } else if let Some(pos) = list.iter().rposition(|c| !wanted.contains(c)) {
            list[pos] = g.clone();
        }
    }
}

fn window_gold(w: &Window, entities: &[String], relations: &[String]) -> WindowGold {
    let spans: Vec<Span> = gold_spans(w).into_iter().collect();
    let entity_slots = spans
        .iter()
        .map(|&s| {
            w.mentions
                .iter()
                .find(|m| m.span == s && m.entity != NME)
                .and_then(|m| entities.iter().position(|e| *e == m.entity))
                .map_or(0, |p| p + 1)
        })
        .collect();
    let index = |s: Span| spans.iter().position(|&x| x == s).expect("span collected above");
    let triplets = w
        .triplets
        .iter()
        .filter_map(|t| relations.iter().position(|r| *r == t.relation).map(|k| (index(t.subject), index(t.object), k)))
        .collect();
    WindowGold { spans, entity_slots, triplets }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExampleOptions {
    /// Swap gold passages missing from the retrieved lists into them.
    pub inject_gold: bool,
    /// Emit this many copies of each window, each with its entity candidates
    /// shuffled; 0 keeps one copy in retrieval order. Relation lists keep
    /// their order.
    pub permutations: usize,
    /// RE only: in every copy after the first, replace each non-overlapping
    /// gold mention with a random gold mention surface of the same length
    /// drawn from all windows.
    pub swap_mentions: bool,
    pub seed: u64,
}

fn gold_spans(w: &Window) -> BTreeSet<Span> {
    w.mentions.iter().map(|m| m.span).chain(w.triplets.iter().flat_map(|t| [t.subject, t.object])).collect()
}

fn surface(words: &[String], s: Span) -> Vec<String> {
    words[s.start - 1..s.end].to_vec()
}

/// Distinct gold mention surfaces by length, in sorted order.
fn mention_pool(windows: &[Window]) -> BTreeMap<usize, Vec<Vec<String>>> {
    let mut pool: BTreeMap<usize, BTreeSet<Vec<String>>> = BTreeMap::new();
    for w in windows {
        for s in gold_spans(w) {
            pool.entry(s.end - s.start + 1).or_default().insert(surface(&w.words, s));
        }
    }
    pool.into_iter().map(|(n, set)| (n, set.into_iter().collect())).collect()
}

fn swap_mentions(w: &Window, pool: &BTreeMap<usize, Vec<Vec<String>>>, rng: &mut ChaCha8Rng) -> Vec<String> {
    let spans: Vec<Span> = gold_spans(w).into_iter().collect();
    let mut words = w.words.clone();
    for (i, s) in spans.iter().enumerate() {
        let overlaps = spans.iter().enumerate().any(|(j, o)| j != i && o.start <= s.end && s.start <= o.end);
        if overlaps {
            continue;
        }
        if let Some(choice) = pool.get(&(s.end - s.start + 1)).and_then(|c| c.choose(rng)) {
            words[s.start - 1..s.end].clone_from_slice(choice);
        }
    }
    words
}

/// Reader inputs and supervision for every window. Copies of a window are
/// adjacent in the output.
pub fn reader_examples(
    reader: &Reader,
    windows: &[Window],
    sources: &CandidateSources,
    passages: &HashMap<String, Passage>,
    opts: ExampleOptions,
    exec: Exec,
) -> Result<Vec<ReaderExample>> {
    let copies = opts.permutations.max(1);
    let pool = if opts.swap_mentions && reader.task() == Task::Re { mention_pool(windows) } else { BTreeMap::new() };
    let per_window = exec.map_range(windows.len(), |i| -> Result<Vec<ReaderExample>> {
        let w = &windows[i];
        let id = w.id();
        let (mut ents, mut rels) = sources.lists(reader, &id)?;
        if opts.inject_gold {
            if reader.task().links() {
                let gold: Vec<String> = w.mentions.iter().filter(|m| m.entity != NME).map(|m| m.entity.clone()).collect::<BTreeSet<_>>().into_iter().collect();
                inject(&mut ents, &gold, sources.top_k);
            }
            if reader.task().relates() {
                let gold: Vec<String> = w.triplets.iter().map(|t| t.relation.clone()).collect::<BTreeSet<_>>().into_iter().collect();
                inject(&mut rels, &gold, sources.top_k_relations);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut out = Vec::with_capacity(copies);
        for c in 0..copies {
            if opts.permutations > 0 {
                ents.shuffle(&mut rng);
            }
            let words = if c > 0 && !pool.is_empty() { swap_mentions(w, &pool, &mut rng) } else { w.words.clone() };
            let input = reader.assemble(&words, &reader.candidates(&ents, passages)?, &reader.candidates(&rels, passages)?)?;
            let gold = window_gold(w, &input.entities, &input.relations);
            out.push(ReaderExample { window_id: id.clone(), input, gold });
        }
        Ok(out)
    });
    let mut all = Vec::with_capacity(windows.len() * copies);
    for r in per_window {
        all.extend(r?);
    }
    Ok(all)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotateStats {
    pub windows: usize,
    pub reader_forwards: usize,
    pub seconds: f64,
}

/// Annotates documents: one reader forward per window, then a merge per
/// document. Output order follows `docs`.
pub fn annotate(
    reader: &Reader,
    docs: &[Document],
    spec: WindowSpec,
    sources: &CandidateSources,
    passages: &HashMap<String, Passage>,
    exec: Exec,
) -> Result<(Vec<PredictedDocument>, AnnotateStats)> {
    let windows = windows_for(docs, spec, exec)?;
    annotate_windows(reader, docs, &windows, sources, passages, exec)
}

/// As [`annotate`] with precomputed windows of `docs`.
pub fn annotate_windows(
    reader: &Reader,
    docs: &[Document],
    windows: &[Window],
    sources: &CandidateSources,
    passages: &HashMap<String, Passage>,
    exec: Exec,
) -> Result<(Vec<PredictedDocument>, AnnotateStats)> {
    let before = reader.encoder.forward_count();
    let clock = Instant::now();
    let preds: Vec<WindowPrediction> = exec
        .map(windows, |w| -> Result<WindowPrediction> {
            let (ents, rels) = sources.lists(reader, &w.id())?;
            let input = reader.assemble(&w.words, &reader.candidates(&ents, passages)?, &reader.candidates(&rels, passages)?)?;
            reader.predict(&input)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let mut by_doc: HashMap<&str, Vec<(&Window, &WindowPrediction)>> = HashMap::new();
    for (w, p) in windows.iter().zip(&preds) {
        by_doc.entry(w.doc_id.as_str()).or_default().push((w, p));
    }
    let out = docs
        .iter()
        .map(|d| merge_predictions(&d.doc_id, &d.words, by_doc.get(d.doc_id.as_str()).map_or(&[][..], |v| v.as_slice())))
        .collect();
    let stats = AnnotateStats {
        windows: windows.len(),
        reader_forwards: reader.encoder.forward_count() - before,
        seconds: clock.elapsed().as_secs_f64(),
    };
    Ok((out, stats))
}

pub fn passage_map(passages: &[Passage]) -> HashMap<String, Passage> {
    passages.iter().map(|p| (p.id.clone(), p.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::eval::{eval_el, eval_re};
    use crate::pipeline::synth::{generate, SynthSpec};
    use crate::reader::el::LinkedMention;
    use crate::reader::re::Triplet;
    use crate::reader::tests::tiny_reader;
    use crate::reader::Task;

    #[test]
    fn inject_replaces_lowest_non_gold() {
        let mut l: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        inject(&mut l, &["c".into(), "x".into(), "y".into()], 3);
        assert_eq!(l, ["y", "x", "c"].map(String::from).to_vec());
        let mut l = vec!["a".to_string()];
        inject(&mut l, &["z".into()], 3);
        assert_eq!(l, ["a", "z"].map(String::from).to_vec());
    }

    fn corpus() -> (Vec<Document>, Vec<Passage>, Vec<Passage>) {
        let spec = SynthSpec { entities: 6, distractors: 2, relations: 3, documents: 6, nme_entities: 2, ..Default::default() };
        let c = generate(&spec, 5).unwrap();
        (c.documents, c.entities, c.relations)
    }

    /// Perfect per-window predictions built from the window gold.
    fn oracle(w: &Window) -> WindowPrediction {
        WindowPrediction {
            spans: w.mentions.iter().map(|m| m.span).collect(),
            links: w.mentions.iter().map(|m| LinkedMention { span: m.span, entity: m.entity.clone(), probability: 1.0 }).collect(),
            triplets: w
                .triplets
                .iter()
                .map(|t| Triplet { subject: t.subject, object: t.object, relation: t.relation.clone(), probability: 1.0 })
                .collect(),
        }
    }

    #[test]
    fn merged_window_gold_scores_one() {
        let (docs, _, _) = corpus();
        // Every synthetic triplet spans at most 6 words, within W - S + 1.
        let spec = WindowSpec { window: 16, stride: 8, prefix_first_word: true };
        let mut preds = Vec::new();
        for d in &docs {
            let ws = make_windows(d, spec.window, spec.stride, spec.prefix_first_word);
            let ps: Vec<WindowPrediction> = ws.iter().map(oracle).collect();
            let parts: Vec<(&Window, &WindowPrediction)> = ws.iter().zip(&ps).collect();
            preds.push(merge_predictions(&d.doc_id, &d.words, &parts));
        }
        assert_eq!(eval_el(&docs, &preds).f1, 1.0);
        assert_eq!(eval_re(&docs, &preds).f1, 1.0);
    }

    #[test]
    fn examples_have_gold_slots_after_injection() {
        let (docs, ents, _) = corpus();
        let reader = tiny_reader(Task::El, 1);
        let spec = WindowSpec { window: 8, stride: 4, prefix_first_word: false };
        let windows = windows_for(&docs, spec, Exec::Sequential).unwrap();
        let ids: Vec<String> = ents.iter().take(3).map(|p| p.id.clone()).collect();
        let cache = CandidateCache::fixed(&ids, &windows);
        let sources = CandidateSources { entities: Some(&cache), relations: None, top_k: 3, top_k_relations: 0 };
        let map = passage_map(&ents);
        let opts = ExampleOptions { inject_gold: true, ..Default::default() };
        let ex = reader_examples(&reader, &windows, &sources, &map, opts, Exec::Parallel).unwrap();
        for (w, e) in windows.iter().zip(&ex) {
            assert_eq!(e.window_id, w.id());
            for (s, slot) in e.gold.spans.iter().zip(&e.gold.entity_slots) {
                let gold = w.mentions.iter().find(|m| m.span == *s).unwrap();
                if gold.entity == NME {
                    assert_eq!(*slot, 0);
                } else {
                    assert_eq!(e.input.entities[*slot - 1], gold.entity);
                }
            }
        }
        let plain = reader_examples(&reader, &windows, &sources, &map, ExampleOptions::default(), Exec::Sequential).unwrap();
        assert!(plain.iter().all(|e| e.input.entities == ids));
        let opts = ExampleOptions { inject_gold: false, permutations: 3, seed: 4, ..Default::default() };
        let shuffled = reader_examples(&reader, &windows, &sources, &map, opts, Exec::Sequential).unwrap();
        assert_eq!(shuffled.len(), 3 * windows.len());
        assert_eq!(shuffled[1].window_id, windows[0].id());
        assert!(shuffled.iter().any(|e| e.input.entities != ids));
        let again = reader_examples(&reader, &windows, &sources, &map, opts, Exec::Parallel).unwrap();
        assert!(again.iter().zip(&shuffled).all(|(a, b)| a.input == b.input));
        for e in &shuffled {
            let mut sorted = e.input.entities.clone();
            sorted.sort();
            assert_eq!(sorted, ids);
        }
    }

    #[test]
    fn mention_swaps_keep_layout_and_gold() {
        let (docs, _, rels) = corpus();
        let spec = WindowSpec { window: 16, stride: 8, prefix_first_word: false };
        let windows = windows_for(&docs, spec, Exec::Sequential).unwrap();
        let pool = mention_pool(&windows);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut changed = 0;
        for w in &windows {
            let spans = gold_spans(w);
            let swapped = swap_mentions(w, &pool, &mut rng);
            assert_eq!(swapped.len(), w.words.len());
            for (i, (a, b)) in w.words.iter().zip(&swapped).enumerate() {
                if !spans.iter().any(|s| s.start <= i + 1 && i < s.end) {
                    assert_eq!(a, b);
                }
            }
            for &s in &spans {
                assert!(pool[&(s.end - s.start + 1)].contains(&surface(&swapped, s)));
            }
            changed += usize::from(swapped != w.words);
        }
        assert!(changed > 0);

        let reader = tiny_reader(Task::Re, 1);
        let rids: Vec<String> = rels.iter().map(|p| p.id.clone()).collect();
        let cache = CandidateCache::fixed(&rids, &windows);
        let sources = CandidateSources { entities: None, relations: Some(&cache), top_k: 0, top_k_relations: 3 };
        let opts = ExampleOptions { inject_gold: true, permutations: 2, swap_mentions: true, seed: 1 };
        let ex = reader_examples(&reader, &windows, &sources, &passage_map(&rels), opts, Exec::Sequential).unwrap();
        let plain = reader_examples(&reader, &windows, &sources, &passage_map(&rels), ExampleOptions::default(), Exec::Sequential).unwrap();
        for (i, p) in plain.iter().enumerate() {
            assert_eq!(ex[2 * i].input, p.input);
            assert_eq!(ex[2 * i + 1].gold, p.gold);
        }
    }

    #[test]
    fn annotate_one_forward_per_window() {
        let (docs, ents, rels) = corpus();
        let reader = tiny_reader(Task::Cie, 2);
        let spec = WindowSpec { window: 8, stride: 4, prefix_first_word: true };
        let windows = windows_for(&docs, spec, Exec::Sequential).unwrap();
        let eids: Vec<String> = ents.iter().take(3).map(|p| p.id.clone()).collect();
        let rids: Vec<String> = rels.iter().map(|p| p.id.clone()).collect();
        let (ec, rc) = (CandidateCache::fixed(&eids, &windows), CandidateCache::fixed(&rids, &windows));
        let sources = CandidateSources { entities: Some(&ec), relations: Some(&rc), top_k: 3, top_k_relations: 3 };
        let mut all = ents.clone();
        all.extend(rels);
        let (out, stats) = annotate(&reader, &docs, spec, &sources, &passage_map(&all), Exec::Parallel).unwrap();
        assert_eq!(out.len(), docs.len());
        assert_eq!(stats.windows, windows.len());
        assert_eq!(stats.reader_forwards, windows.len());
    }

    #[test]
    fn missing_sources_rejected() {
        let (docs, ents, _) = corpus();
        let reader = tiny_reader(Task::Re, 1);
        let spec = WindowSpec { window: 8, stride: 4, prefix_first_word: false };
        let sources = CandidateSources { entities: None, relations: None, top_k: 0, top_k_relations: 2 };
        assert!(annotate(&reader, &docs, spec, &sources, &passage_map(&ents), Exec::Sequential).is_err());
    }
}
