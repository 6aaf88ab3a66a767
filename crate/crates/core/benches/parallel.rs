//! Sequential versus rayon execution of the data-parallel stages.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rrx_core::config::{Config, Preset};
use rrx_core::passage::Passage;
use rrx_core::pipeline::cache::CandidateCache;
use rrx_core::pipeline::run::{annotate_windows, passage_map, reader_examples, windows_for, CandidateSources};
use rrx_core::pipeline::synth::generate;
use rrx_core::pipeline::workflow::{reader_vocab, retriever_vocab};
use rrx_core::reader::train::train_step;
use rrx_core::reader::{Reader, Task};
use rrx_core::retriever::Retriever;
use rrx_numerics::Exec;

const EXECS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn stages(c: &mut Criterion) {
    let mut cfg = Config::preset(Preset::Tiny);
    cfg.synth_documents = 60;
    let corpus = generate(&cfg.synth(), 1).unwrap();
    let docs = &corpus.documents;
    let windows = windows_for(docs, cfg.window_spec(), Exec::Sequential).unwrap();
    let retriever = Retriever::new(cfg.retriever(), retriever_vocab(docs, &corpus.entities), 1).unwrap();
    let index = retriever.build_index(&corpus.entities, Exec::Sequential).unwrap();
    let queries: Vec<Vec<f64>> = windows.iter().map(|w| retriever.embed(&retriever.query_tokens(&w.words)).unwrap()).collect();

    let mut passages: Vec<Passage> = corpus.entities.clone();
    passages.extend(corpus.relations.clone());
    let map = passage_map(&passages);
    let ents = CandidateCache::build(&retriever, &index, &windows, cfg.cie_top_k, Exec::Sequential).unwrap();
    let rel_ids: Vec<String> = corpus.relations.iter().map(|p| p.id.clone()).collect();
    let rels = CandidateCache::fixed(&rel_ids, &windows);
    let sources = CandidateSources {
        entities: Some(&ents),
        relations: Some(&rels),
        top_k: cfg.cie_top_k,
        top_k_relations: cfg.cie_top_k_relations,
    };
    let vocab = reader_vocab(&cfg, Task::Cie, docs, &passages);
    let reader = Reader::new(cfg.reader(Task::Cie), vocab.clone(), 1).unwrap();
    let examples = reader_examples(&reader, &windows, &sources, &map, cfg.training_examples(), Exec::Sequential).unwrap();
    let batch: Vec<usize> = (0..16.min(examples.len())).collect();

    let mut group = c.benchmark_group("stages");
    group.sample_size(10);
    for (name, exec) in EXECS {
        group.bench_with_input(BenchmarkId::new("build_index", name), &exec, |b, &e| {
            b.iter(|| retriever.build_index(&corpus.entities, e).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("search_batch", name), &exec, |b, &e| {
            b.iter(|| index.search_batch(&queries, 10, e).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("annotate", name), &exec, |b, &e| {
            b.iter(|| annotate_windows(&reader, docs, &windows, &sources, &map, e).unwrap())
        });
        let mut train = cfg.reader_train();
        train.exec = exec;
        let mut trainee = Reader::new(cfg.reader(Task::Cie), vocab.clone(), 1).unwrap();
        group.bench_function(BenchmarkId::new("gradient_batch", name), |b| {
            b.iter(|| train_step(&mut trainee, &examples, &batch, &train).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, stages);
criterion_main!(benches);
