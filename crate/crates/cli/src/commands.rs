use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::Args;
use rrx_core::config::Config;
use rrx_core::passage::{read_passages, write_passages, Passage, PassageKind};
use rrx_core::pipeline::cache::CandidateCache;
use rrx_core::pipeline::document::{read_documents, write_documents, Document};
use rrx_core::pipeline::eval::evaluate;
use rrx_core::pipeline::prediction::{read_predictions, write_predictions};
use rrx_core::pipeline::run::{annotate_windows, passage_map, windows_for, CandidateSources};
use rrx_core::pipeline::synth::{generate, split};
use rrx_core::pipeline::window::Window;
use rrx_core::pipeline::workflow::{annotate_and_score, fit_reader, fit_retriever};
use rrx_core::reader::{Reader, Task};
use rrx_core::retriever::{FlatIndex, Retriever};
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::{Global, KindArg};

fn kind_name(kind: PassageKind) -> &'static str {
    match kind {
        PassageKind::Entity => "entity",
        PassageKind::Relation => "relation",
    }
}

fn default_passages(g: &Global, kind: PassageKind) -> PathBuf {
    g.path(match kind {
        PassageKind::Entity => "data/entities.jsonl",
        PassageKind::Relation => "data/relations.jsonl",
    })
}

fn docs(path: &Path, m: &mut RunManifest) -> Result<Vec<Document>> {
    let d = read_documents(path).with_context(|| format!("reading {}", path.display()))?;
    m.input(path)?;
    Ok(d)
}

fn passages(path: &Path, m: &mut RunManifest) -> Result<Vec<Passage>> {
    let p = read_passages(path).with_context(|| format!("reading {}", path.display()))?;
    m.input(path)?;
    Ok(p)
}

fn finish(m: &mut RunManifest, artifact: &Path) -> Result<()> {
    m.output(artifact)?;
    let path = m.write_next_to(artifact)?;
    println!("wrote {} ({})", artifact.display(), path.display());
    Ok(())
}

pub fn synth(g: &Global, cfg: &Config) -> Result<()> {
    let mut m = RunManifest::new("synth", cfg);
    let corpus = m.time("generate", || Ok(generate(&cfg.synth(), cfg.seed)?))?;
    let (train, dev, test) = split(&corpus.documents, cfg.synth_dev_fraction, cfg.synth_test_fraction);
    let dir = g.path("data");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, part) in [("train", &train), ("dev", &dev), ("test", &test)] {
        let p = dir.join(format!("{name}.jsonl"));
        write_documents(&p, part)?;
        m.output(&p)?;
    }
    for (name, ps) in [("entities", &corpus.entities), ("relations", &corpus.relations)] {
        let p = dir.join(format!("{name}.jsonl"));
        write_passages(&p, ps)?;
        m.output(&p)?;
    }
    m.results = serde_json::json!({
        "documents": { "train": train.len(), "dev": dev.len(), "test": test.len() },
        "entities": corpus.entities.len(),
        "relations": corpus.relations.len(),
    });
    let path = m.write_next_to(&dir)?;
    println!(
        "wrote {} train / {} dev / {} test documents to {} ({})",
        train.len(),
        dev.len(),
        test.len(),
        dir.display(),
        path.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainRetrieverArgs {
    #[arg(long, value_enum, default_value = "entity")]
    kind: KindArg,
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation documents; recall is tracked after every re-index.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    passages: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn train_retriever(g: &Global, cfg: &Config, a: &TrainRetrieverArgs) -> Result<()> {
    let kind = PassageKind::from(a.kind);
    let mut m = RunManifest::new("train-retriever", cfg);
    let train = docs(&a.train.clone().unwrap_or_else(|| g.path("data/train.jsonl")), &mut m)?;
    let dev = match &a.dev {
        Some(p) => docs(p, &mut m)?,
        None => Vec::new(),
    };
    let pool = passages(&a.passages.clone().unwrap_or_else(|| default_passages(g, kind)), &mut m)?;
    let out = a.out.clone().unwrap_or_else(|| g.path(&format!("retriever.{}.snap", kind_name(kind))));
    let run = fit_retriever(cfg, kind, &train, &dev, &pool)?;
    let hash = run.retriever.save(&out)?;
    m.timings.insert("train".into(), run.seconds);
    m.snapshot_hashes.insert("retriever".into(), hash);
    m.results = serde_json::json!({
        "steps": run.report.losses.len(),
        "final_loss": run.report.losses.last(),
        "recall": run.report.recall,
        "recall_k": cfg.retriever_eval_k,
    });
    if let Some((_, r)) = run.report.recall.last() {
        println!("validation recall@{} {r:.4}", cfg.retriever_eval_k);
    }
    finish(&mut m, &out)
}

#[derive(Debug, Args)]
pub struct BuildIndexArgs {
    #[arg(long, value_enum, default_value = "entity")]
    kind: KindArg,
    #[arg(long)]
    retriever: Option<PathBuf>,
    #[arg(long)]
    passages: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn build_index(g: &Global, cfg: &Config, a: &BuildIndexArgs) -> Result<()> {
    let kind = PassageKind::from(a.kind);
    let name = kind_name(kind);
    let mut m = RunManifest::new("build-index", cfg);
    let rpath = a.retriever.clone().unwrap_or_else(|| g.path(&format!("retriever.{name}.snap")));
    let r = Retriever::load(&rpath).with_context(|| format!("loading {}", rpath.display()))?;
    m.input(&rpath)?;
    let pool: Vec<Passage> = passages(&a.passages.clone().unwrap_or_else(|| default_passages(g, kind)), &mut m)?
        .into_iter()
        .filter(|p| p.kind == kind)
        .collect();
    ensure!(!pool.is_empty(), "no {name} passages to index");
    let out = a.out.clone().unwrap_or_else(|| g.path(&format!("index.{name}.idx")));
    let index = m.time("encode", || Ok(r.build_index(&pool, cfg.exec())?))?;
    index.save(&out)?;
    m.snapshot_hashes.insert("retriever".into(), index.encoder_hash().to_string());
    m.forward_passes.insert("retriever".into(), index.len());
    m.results = serde_json::json!({ "passages": index.len(), "dim": index.dim() });
    finish(&mut m, &out)
}

#[derive(Debug, Args)]
pub struct CandidatesArgs {
    #[arg(long, value_enum, default_value = "entity")]
    kind: KindArg,
    /// Documents whose windows are retrieved for; defaults to train, dev and test.
    #[arg(long = "docs")]
    docs: Vec<PathBuf>,
    #[arg(long)]
    retriever: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    /// Give every window the whole relation inventory instead of retrieving.
    #[arg(long)]
    fixed: bool,
    #[arg(long)]
    passages: Option<PathBuf>,
    /// Candidates kept per window; defaults to the largest configured count.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn doc_paths(g: &Global, given: &[PathBuf]) -> Vec<PathBuf> {
    if given.is_empty() {
        ["train", "dev", "test"].iter().map(|n| g.path(&format!("data/{n}.jsonl"))).collect()
    } else {
        given.to_vec()
    }
}

pub fn candidates(g: &Global, cfg: &Config, a: &CandidatesArgs) -> Result<()> {
    let kind = PassageKind::from(a.kind);
    let name = kind_name(kind);
    let mut m = RunManifest::new("candidates", cfg);
    let mut all = Vec::new();
    for p in doc_paths(g, &a.docs) {
        all.extend(docs(&p, &mut m)?);
    }
    let out = a.out.clone().unwrap_or_else(|| g.path(&format!("candidates.{name}.jsonl")));
    let cache = if a.fixed {
        ensure!(kind == PassageKind::Relation, "--fixed applies to relation candidates only");
        let mut ids: Vec<String> = passages(&a.passages.clone().unwrap_or_else(|| default_passages(g, kind)), &mut m)?
            .into_iter()
            .filter(|p| p.kind == kind)
            .map(|p| p.id)
            .collect();
        ids.sort();
        let windows = windows_for(&all, cfg.window_spec(), cfg.exec())?;
        CandidateCache::fixed(&ids, &windows)
    } else {
        let rpath = a.retriever.clone().unwrap_or_else(|| g.path(&format!("retriever.{name}.snap")));
        let ipath = a.index.clone().unwrap_or_else(|| g.path(&format!("index.{name}.idx")));
        let r = Retriever::load(&rpath).with_context(|| format!("loading {}", rpath.display()))?;
        let index = FlatIndex::load(&ipath).with_context(|| format!("loading {}", ipath.display()))?;
        let hash = r.hash()?;
        if index.encoder_hash() != hash {
            bail!(
                "{} was built by retriever {} but {} has hash {hash}",
                ipath.display(),
                index.encoder_hash(),
                rpath.display()
            );
        }
        m.input(&rpath)?;
        m.input(&ipath)?;
        m.snapshot_hashes.insert("retriever".into(), hash);
        let depth = a.depth.unwrap_or(match kind {
            PassageKind::Entity => cfg.top_k.max(cfg.cie_top_k),
            PassageKind::Relation => cfg.top_k_relations.max(cfg.cie_top_k_relations),
        });
        let windows = windows_for(&all, cfg.window_spec(), cfg.exec())?;
        let cache = m.time("retrieve", || Ok(CandidateCache::build(&r, &index, &windows, depth, cfg.exec())?))?;
        m.forward_passes.insert("retriever".into(), windows.len());
        cache
    };
    cache.save(&out)?;
    m.results = serde_json::json!({ "windows": cache.len(), "depth": cache.k });
    finish(&mut m, &out)
}

/// Candidate cache locations and the retrievers they must come from.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    #[arg(long)]
    entity_cache: Option<PathBuf>,
    #[arg(long)]
    relation_cache: Option<PathBuf>,
    /// When given, the entity cache must have been built by this snapshot.
    #[arg(long)]
    entity_retriever: Option<PathBuf>,
    /// When given, the relation cache must have been built by this snapshot.
    #[arg(long)]
    relation_retriever: Option<PathBuf>,
    /// Passage files; defaults to the synthetic entity and relation files.
    #[arg(long = "passages")]
    passages: Vec<PathBuf>,
}

struct Loaded {
    entities: Option<CandidateCache>,
    relations: Option<CandidateCache>,
    passages: HashMap<String, Passage>,
}

impl Loaded {
    fn sources(&self, k: usize, k_rel: usize) -> CandidateSources<'_> {
        CandidateSources {
            entities: self.entities.as_ref(),
            relations: self.relations.as_ref(),
            top_k: k,
            top_k_relations: k_rel,
        }
    }
}

fn load_cache(
    g: &Global,
    given: &Option<PathBuf>,
    retriever: &Option<PathBuf>,
    name: &str,
    need: usize,
    m: &mut RunManifest,
) -> Result<CandidateCache> {
    let path = given.clone().unwrap_or_else(|| g.path(&format!("candidates.{name}.jsonl")));
    let cache = CandidateCache::load(&path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(rp) = retriever {
        let r = Retriever::load(rp).with_context(|| format!("loading {}", rp.display()))?;
        cache.require_hash(&r.hash()?).with_context(|| format!("checking {}", path.display()))?;
        m.input(rp)?;
    }
    ensure!(
        cache.k >= need,
        "{} holds {} candidates per window but {need} are needed",
        path.display(),
        cache.k
    );
    m.input(&path)?;
    m.snapshot_hashes.insert(format!("{name}_candidates"), cache.snapshot_hash.clone());
    Ok(cache)
}

/// Loads caches and passages and checks that they cover `windows` with
/// enough candidates, before any model work starts.
fn load_sources(
    g: &Global,
    a: &SourceArgs,
    task: Task,
    k: usize,
    k_rel: usize,
    windows: &[Window],
    m: &mut RunManifest,
) -> Result<Loaded> {
    let entities = if task.links() {
        Some(load_cache(g, &a.entity_cache, &a.entity_retriever, "entity", k, m)?)
    } else {
        None
    };
    let relations = if task.relates() {
        Some(load_cache(g, &a.relation_cache, &a.relation_retriever, "relation", k_rel, m)?)
    } else {
        None
    };
    let files = if a.passages.is_empty() {
        vec![default_passages(g, PassageKind::Entity), default_passages(g, PassageKind::Relation)]
    } else {
        a.passages.clone()
    };
    let mut all = Vec::new();
    for f in files.iter().filter(|f| !a.passages.is_empty() || f.exists()) {
        all.extend(passages(f, m)?);
    }
    let passages = passage_map(&all);
    for w in windows {
        let id = w.id();
        for (cache, n) in [(&entities, k), (&relations, k_rel)] {
            if let Some(c) = cache {
                for p in c.top(&id, n)? {
                    ensure!(passages.contains_key(&p), "candidate `{p}` of window `{id}` has no passage");
                }
            }
        }
    }
    Ok(Loaded { entities, relations, passages })
}

#[derive(Debug, Args)]
pub struct TrainReaderArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation documents for best-step selection; `--dev none` disables it.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[command(flatten)]
    sources: SourceArgs,
    /// Also store optimizer moments so training can be inspected or resumed.
    #[arg(long)]
    with_optimizer: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn train_reader(g: &Global, cfg: &Config, a: &TrainReaderArgs) -> Result<()> {
    let task = g.require_task()?;
    let (k, k_rel) = cfg.k_for(task);
    let mut m = RunManifest::new("train-reader", cfg);
    let train = docs(&a.train.clone().unwrap_or_else(|| g.path("data/train.jsonl")), &mut m)?;
    let dev = match &a.dev {
        Some(p) if p.as_os_str() == "none" => Vec::new(),
        Some(p) => docs(p, &mut m)?,
        None => docs(&g.path("data/dev.jsonl"), &mut m)?,
    };
    let mut windows = windows_for(&train, cfg.window_spec(), cfg.exec())?;
    windows.extend(windows_for(&dev, cfg.window_spec(), cfg.exec())?);
    let loaded = load_sources(g, &a.sources, task, k, k_rel, &windows, &mut m)?;
    let out = a.out.clone().unwrap_or_else(|| g.path(&format!("reader.{task}.snap")));
    let run = fit_reader(cfg, task, &train, &dev, &loaded.sources(k, k_rel), &loaded.passages)?;
    let hash = run.reader.save(&out, a.with_optimizer)?;
    m.timings.insert("train".into(), run.seconds);
    m.snapshot_hashes.insert("reader".into(), hash);
    m.results = serde_json::json!({
        "task": task,
        "examples": run.examples,
        "steps": run.report.losses.len(),
        "final_loss": run.report.losses.last(),
        "evals": run.report.evals,
        "best": run.report.best,
    });
    if let Some((step, f1)) = run.report.best {
        println!("best validation F1 {f1:.4} at step {step}");
    }
    finish(&mut m, &out)
}

fn load_reader(path: &Path, task: Task, k: usize, k_rel: usize, m: &mut RunManifest) -> Result<Reader> {
    let reader = Reader::load(path).with_context(|| format!("loading {}", path.display()))?;
    ensure!(reader.task() == task, "{} is a {} reader, not {task}", path.display(), reader.task());
    let slots = reader.vocab.num_st();
    ensure!(
        1 + k + k_rel <= slots,
        "{} was built for at most {} candidates but {k} + {k_rel} were requested",
        path.display(),
        slots - 1
    );
    m.input(path)?;
    m.snapshot_hashes.insert("reader".into(), rrx_numerics::snapshot::file_hash(path)?);
    Ok(reader)
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    reader: Option<PathBuf>,
    #[arg(long)]
    docs: Option<PathBuf>,
    #[command(flatten)]
    sources: SourceArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn annotate(g: &Global, cfg: &Config, a: &AnnotateArgs) -> Result<()> {
    let task = g.require_task()?;
    let (k, k_rel) = cfg.k_for(task);
    let mut m = RunManifest::new("annotate", cfg);
    let rpath = a.reader.clone().unwrap_or_else(|| g.path(&format!("reader.{task}.snap")));
    let reader = load_reader(&rpath, task, k, k_rel, &mut m)?;
    let docs = docs(&a.docs.clone().unwrap_or_else(|| g.path("data/test.jsonl")), &mut m)?;
    let windows = windows_for(&docs, cfg.window_spec(), cfg.exec())?;
    let loaded = load_sources(g, &a.sources, task, k, k_rel, &windows, &mut m)?;
    let out = a.out.clone().unwrap_or_else(|| g.path(&format!("predictions.{task}.jsonl")));
    let sources = loaded.sources(k, k_rel);
    let (pred, stats) = annotate_windows(&reader, &docs, &windows, &sources, &loaded.passages, cfg.exec())?;
    write_predictions(&out, &pred)?;
    m.timings.insert("annotate".into(), stats.seconds);
    m.forward_passes.insert("reader".into(), stats.reader_forwards);
    m.results = serde_json::json!({
        "task": task,
        "documents": docs.len(),
        "windows": stats.windows,
        "top_k": k,
        "top_k_relations": k_rel,
    });
    println!("{} windows, {} reader forward passes, {:.3}s", stats.windows, stats.reader_forwards, stats.seconds);
    finish(&mut m, &out)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(g: &Global, cfg: &Config, a: &EvalArgs) -> Result<()> {
    let task = g.require_task()?;
    let mut m = RunManifest::new("eval", cfg);
    let gold = docs(&a.gold.clone().unwrap_or_else(|| g.path("data/test.jsonl")), &mut m)?;
    let ppath = a.pred.clone().unwrap_or_else(|| g.path(&format!("predictions.{task}.jsonl")));
    let pred = read_predictions(&ppath).with_context(|| format!("reading {}", ppath.display()))?;
    m.input(&ppath)?;
    let report = evaluate(task, &gold, &pred);
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    let out = a.out.clone().unwrap_or_else(|| g.path(&format!("eval.{task}.json")));
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&out, text + "\n")?;
    m.results = serde_json::to_value(report)?;
    finish(&mut m, &out)
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    reader: Option<PathBuf>,
    #[arg(long)]
    docs: Option<PathBuf>,
    #[command(flatten)]
    sources: SourceArgs,
    /// Candidate counts to time: entity candidates for el and cie, relation
    /// candidates for re.
    #[arg(long, value_delimiter = ',', default_values_t = vec![4, 8, 16, 24])]
    ks: Vec<usize>,
    /// Timed passes per K; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub k: usize,
    pub f1: f64,
    pub seconds: f64,
    pub windows_per_second: f64,
    pub reader_forwards: usize,
}

pub fn bench(g: &Global, cfg: &Config, a: &BenchArgs) -> Result<()> {
    let task = g.require_task()?;
    ensure!(!a.ks.is_empty() && a.repeats > 0, "bench needs at least one K and one repeat");
    let (_, k_rel) = cfg.k_for(task);
    let widest = *a.ks.iter().max().expect("non-empty");
    let (k_need, rel_need) = if task == Task::Re { (0, widest) } else { (widest, k_rel) };
    let mut m = RunManifest::new("bench", cfg);
    let load_clock = Instant::now();
    let rpath = a.reader.clone().unwrap_or_else(|| g.path(&format!("reader.{task}.snap")));
    let reader = load_reader(&rpath, task, k_need, rel_need, &mut m)?;
    let docs = docs(&a.docs.clone().unwrap_or_else(|| g.path("data/test.jsonl")), &mut m)?;
    let windows = windows_for(&docs, cfg.window_spec(), cfg.exec())?;
    let loaded = load_sources(g, &a.sources, task, k_need, rel_need, &windows, &mut m)?;
    m.timings.insert("load".into(), load_clock.elapsed().as_secs_f64());
    let mut rows = Vec::new();
    for &kk in &a.ks {
        let sources = if task == Task::Re { loaded.sources(0, kk) } else { loaded.sources(kk, k_rel) };
        let mut best: Option<BenchRow> = None;
        for _ in 0..a.repeats {
            let (_, report, stats) = annotate_and_score(&reader, &docs, &windows, &sources, &loaded.passages, cfg)?;
            let row = BenchRow {
                k: kk,
                f1: report.main().f1,
                seconds: stats.seconds,
                windows_per_second: stats.windows as f64 / stats.seconds.max(1e-12),
                reader_forwards: stats.reader_forwards,
            };
            if best.as_ref().is_none_or(|b| row.seconds < b.seconds) {
                best = Some(row);
            }
        }
        rows.push(best.expect("repeats > 0"));
    }
    println!("{:>5}  {:>8}  {:>10}  {:>12}  {:>8}", "K", "F1", "seconds", "windows/s", "forwards");
    for r in &rows {
        println!(
            "{:>5}  {:>8.4}  {:>10.4}  {:>12.1}  {:>8}",
            r.k, r.f1, r.seconds, r.windows_per_second, r.reader_forwards
        );
    }
    println!("index and snapshot load {:.3}s (excluded)", m.timings["load"]);
    for r in &rows {
        m.timings.insert(format!("annotate_k{}", r.k), r.seconds);
        m.forward_passes.insert(format!("reader_k{}", r.k), r.reader_forwards);
    }
    m.results = serde_json::json!({ "task": task, "windows": windows.len(), "repeats": a.repeats, "rows": rows });
    let out = a.out.clone().unwrap_or_else(|| g.path(&format!("bench.{task}.json")));
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&out, serde_json::to_string_pretty(&rows)? + "\n")?;
    finish(&mut m, &out)
}
