//! Training and annotation steps shared by the command line and the
//! acceptance runs.

use std::collections::HashMap;
use std::time::Instant;

use crate::config::Config;
use crate::error::{CoreError, Result};
use crate::passage::{Passage, PassageKind};
use crate::pipeline::cache::CandidateCache;
use crate::pipeline::document::Document;
use crate::pipeline::eval::{evaluate, TaskReport};
use crate::pipeline::prediction::PredictedDocument;
use crate::pipeline::run::{
    annotate_windows, entity_retrieval_examples, reader_examples, relation_retrieval_examples, windows_for,
    AnnotateStats, CandidateSources,
};
use crate::pipeline::window::Window;
use crate::reader::train::{train_reader, ReaderTrainReport};
use crate::reader::{Reader, Task};
use crate::retriever::train::{train_retriever, RetrieverTrainReport};
use crate::retriever::Retriever;
use crate::vocab::Vocabulary;

/// Document words plus the retriever text of every passage.
pub fn retriever_vocab(docs: &[Document], passages: &[Passage]) -> Vocabulary {
    let words = docs
        .iter()
        .flat_map(|d| d.words.iter().map(String::as_str))
        .chain(passages.iter().flat_map(|p| p.text.split_whitespace()));
    Vocabulary::build(words, 0)
}

/// Document words plus the reader text of every passage, with enough
/// special tokens for the configured candidate counts of `task`.
pub fn reader_vocab(cfg: &Config, task: Task, docs: &[Document], passages: &[Passage]) -> Vocabulary {
    let (k, k_rel) = cfg.k_for(task);
    let words = docs
        .iter()
        .flat_map(|d| d.words.iter().map(String::as_str))
        .chain(passages.iter().flat_map(|p| p.reader_text().split_whitespace()));
    Vocabulary::build(words, 1 + k + k_rel)
}

fn of_kind(passages: &[Passage], kind: PassageKind) -> Vec<Passage> {
    passages.iter().filter(|p| p.kind == kind).cloned().collect()
}

#[derive(Debug)]
pub struct RetrieverRun {
    pub retriever: Retriever,
    pub report: RetrieverTrainReport,
    pub seconds: f64,
}

/// Trains a retriever over the passages of `kind`, validating on `dev`.
pub fn fit_retriever(
    cfg: &Config,
    kind: PassageKind,
    train: &[Document],
    dev: &[Document],
    passages: &[Passage],
) -> Result<RetrieverRun> {
    let pool = of_kind(passages, kind);
    if pool.is_empty() {
        return Err(CoreError::Validation(format!("no {kind:?} passages to retrieve")));
    }
    let exec = cfg.exec();
    let spec = cfg.window_spec();
    let (tw, dw) = (windows_for(train, spec, exec)?, windows_for(dev, spec, exec)?);
    let mut r = Retriever::new(cfg.retriever(), retriever_vocab(train, &pool), cfg.seed)?;
    let examples = |r: &Retriever, w: &[Window]| match kind {
        PassageKind::Entity => entity_retrieval_examples(r, w),
        PassageKind::Relation => relation_retrieval_examples(r, w),
    };
    let (te, de) = (examples(&r, &tw), examples(&r, &dw));
    let clock = Instant::now();
    let report = train_retriever(&mut r, &pool, &te, &de, &cfg.retriever_train())?;
    Ok(RetrieverRun { retriever: r, report, seconds: clock.elapsed().as_secs_f64() })
}

/// Entity and relation candidate caches for `windows`. Entities always come
/// from a retriever; relations from a retriever when one is given, otherwise
/// the full inventory in id order.
pub fn build_caches(
    cfg: &Config,
    task: Task,
    windows: &[Window],
    passages: &[Passage],
    entity_retriever: Option<&Retriever>,
    relation_retriever: Option<&Retriever>,
) -> Result<(Option<CandidateCache>, Option<CandidateCache>)> {
    let exec = cfg.exec();
    let (k, k_rel) = cfg.k_for(task);
    let retrieve = |r: &Retriever, kind: PassageKind, k: usize| -> Result<CandidateCache> {
        let index = r.build_index(&of_kind(passages, kind), exec)?;
        CandidateCache::build(r, &index, windows, k, exec)
    };
    let entities = match (task.links(), entity_retriever) {
        (false, _) => None,
        (true, Some(r)) => Some(retrieve(r, PassageKind::Entity, k)?),
        (true, None) => return Err(CoreError::Validation(format!("task {task} needs an entity retriever"))),
    };
    let relations = match (task.relates(), relation_retriever) {
        (false, _) => None,
        (true, Some(r)) => Some(retrieve(r, PassageKind::Relation, k_rel)?),
        (true, None) => {
            let mut ids: Vec<String> = of_kind(passages, PassageKind::Relation).into_iter().map(|p| p.id).collect();
            ids.sort();
            if ids.len() < k_rel {
                return Err(CoreError::Validation(format!(
                    "{} relation types cannot fill {k_rel} candidate slots",
                    ids.len()
                )));
            }
            ids.truncate(k_rel);
            Some(CandidateCache::fixed(&ids, windows))
        }
    };
    Ok((entities, relations))
}

#[derive(Debug)]
pub struct ReaderRun {
    pub reader: Reader,
    pub report: ReaderTrainReport,
    pub examples: usize,
    pub seconds: f64,
}

/// Trains a reader on the windows of `train`, selecting the best step by the
/// task's main F1 on `dev` when `dev` is non-empty. The caches must cover
/// the windows of both.
pub fn fit_reader(
    cfg: &Config,
    task: Task,
    train: &[Document],
    dev: &[Document],
    sources: &CandidateSources,
    passages: &HashMap<String, Passage>,
) -> Result<ReaderRun> {
    let exec = cfg.exec();
    let spec = cfg.window_spec();
    let tw = windows_for(train, spec, exec)?;
    let dw = windows_for(dev, spec, exec)?;
    let mut all: Vec<Passage> = passages.values().cloned().collect();
    all.sort_by(|a, b| a.id.cmp(&b.id));
    let mut reader = Reader::new(cfg.reader(task), reader_vocab(cfg, task, train, &all), cfg.seed)?;
    let examples = reader_examples(&reader, &tw, sources, passages, cfg.training_examples(), exec)?;
    let mut tc = cfg.reader_train();
    if dev.is_empty() {
        tc.eval_interval = 0;
    }
    let clock = Instant::now();
    let mut eval = |r: &Reader| -> Result<f64> {
        let (pred, _) = annotate_windows(r, dev, &dw, sources, passages, exec)?;
        Ok(evaluate(task, dev, &pred).main().f1)
    };
    let report = train_reader(&mut reader, &examples, &tc, Some(&mut eval))?;
    Ok(ReaderRun { reader, report, examples: examples.len(), seconds: clock.elapsed().as_secs_f64() })
}

/// Annotates and scores `docs` in one go.
pub fn annotate_and_score(
    reader: &Reader,
    docs: &[Document],
    windows: &[Window],
    sources: &CandidateSources,
    passages: &HashMap<String, Passage>,
    cfg: &Config,
) -> Result<(Vec<PredictedDocument>, TaskReport, AnnotateStats)> {
    let (pred, stats) = annotate_windows(reader, docs, windows, sources, passages, cfg.exec())?;
    let report = evaluate(reader.task(), docs, &pred);
    Ok((pred, report, stats))
}
