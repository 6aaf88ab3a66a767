//! Retrieved candidates per window, keyed by retriever snapshot and window id.
//!
//! File layout: a JSONL header line `{snapshot_hash, k}` followed by one
//! `{window_id, candidates: [[id, score], …]}` line per window.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rrx_numerics::Exec;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, CoreError, Result};
use crate::pipeline::window::Window;
use crate::retriever::{FlatIndex, Retriever};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    snapshot_hash: String,
    k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    window_id: String,
    candidates: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateCache {
    pub snapshot_hash: String,
    pub k: usize,
    entries: HashMap<String, Vec<(String, f64)>>,
    order: Vec<String>,
}

impl CandidateCache {
    /// Retrieves the top `k` passages for every window.
    pub fn build(retriever: &Retriever, index: &FlatIndex, windows: &[Window], k: usize, exec: Exec) -> Result<Self> {
        let hash = retriever.hash()?;
        if index.encoder_hash() != hash {
            return Err(CoreError::Validation(format!(
                "index was built by retriever {} but the retriever snapshot is {hash}",
                index.encoder_hash()
            )));
        }
        let queries: Vec<_> = windows.iter().map(|w| retriever.query_tokens(&w.words)).collect();
        let embs = retriever.embed_many(&queries, exec)?;
        let hits = index.search_batch(&embs, k, exec)?;
        let mut cache = Self { snapshot_hash: hash, k, entries: HashMap::new(), order: Vec::new() };
        for (w, top) in windows.iter().zip(hits) {
            cache.insert(w.id(), top);
        }
        Ok(cache)
    }

    /// A cache holding the same fixed list for every window, for small
    /// inventories that are passed to the reader whole.
    pub fn fixed(ids: &[String], windows: &[Window]) -> Self {
        let list: Vec<(String, f64)> = ids.iter().map(|id| (id.clone(), 0.0)).collect();
        let mut cache = Self { snapshot_hash: "fixed".into(), k: ids.len(), entries: HashMap::new(), order: Vec::new() };
        for w in windows {
            cache.insert(w.id(), list.clone());
        }
        cache
    }

    fn insert(&mut self, id: String, list: Vec<(String, f64)>) {
        if self.entries.insert(id.clone(), list).is_none() {
            self.order.push(id);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The best `k` candidate ids of a window; `k` may not exceed the cached depth.
    pub fn top(&self, window_id: &str, k: usize) -> Result<Vec<String>> {
        if k > self.k {
            return Err(CoreError::Validation(format!("requested {k} candidates but the cache holds {}", self.k)));
        }
        let list = self
            .entries
            .get(window_id)
            .ok_or_else(|| CoreError::Validation(format!("window `{window_id}` is not in the candidate cache")))?;
        Ok(list.iter().take(k).map(|(id, _)| id.clone()).collect())
    }

    /// Fails unless the cache was produced by the given retriever snapshot.
    pub fn require_hash(&self, hash: &str) -> Result<()> {
        if self.snapshot_hash != hash {
            return Err(CoreError::Validation(format!(
                "candidate cache belongs to retriever {} but {hash} was given",
                self.snapshot_hash
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let mut f = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
        let header = Header { snapshot_hash: self.snapshot_hash.clone(), k: self.k };
        let mut write = |s: String| writeln!(f, "{s}").map_err(io_err(path));
        write(serde_json::to_string(&header).map_err(json_err("cache header"))?)?;
        for id in &self.order {
            let e = Entry { window_id: id.clone(), candidates: self.entries[id].clone() };
            write(serde_json::to_string(&e).map_err(json_err("cache entry"))?)?;
        }
        f.flush().map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(io_err(path))?;
        let mut lines = BufReader::new(f).lines();
        let first = lines
            .next()
            .ok_or_else(|| CoreError::Validation(format!("{}: empty candidate cache", path.display())))?
            .map_err(io_err(path))?;
        let header: Header = serde_json::from_str(&first).map_err(json_err(path.display().to_string()))?;
        let mut cache = Self { snapshot_hash: header.snapshot_hash, k: header.k, entries: HashMap::new(), order: Vec::new() };
        for line in lines {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: Entry = serde_json::from_str(&line).map_err(json_err(path.display().to_string()))?;
            cache.insert(e.window_id, e.candidates);
        }
        Ok(cache)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::passage::{Passage, PassageKind};
    use crate::pipeline::document::Document;
    use crate::pipeline::window::make_windows;
    use crate::retriever::tests::tiny_retriever;

    fn setup() -> (Retriever, FlatIndex, Vec<Window>) {
        let r = tiny_retriever(3);
        let passages: Vec<Passage> = (0..6)
            .map(|i| Passage { id: format!("P{i}"), kind: PassageKind::Entity, text: format!("alpha w{i}"), title: None, is_nme: false })
            .collect();
        let index = r.build_index(&passages, Exec::Sequential).unwrap();
        let doc = Document { doc_id: "d".into(), words: (0..12).map(|i| format!("w{}", i % 6)).collect(), mentions: vec![], triplets: vec![] };
        (r, index, make_windows(&doc, 6, 3, true))
    }

    #[test]
    fn build_matches_direct_search_and_round_trips() {
        let (r, index, windows) = setup();
        let cache = CandidateCache::build(&r, &index, &windows, 4, Exec::Parallel).unwrap();
        assert_eq!(cache.len(), windows.len());
        for w in &windows {
            let direct = index.search(&r.embed(&r.query_tokens(&w.words)).unwrap(), 2).unwrap();
            let ids: Vec<String> = direct.into_iter().map(|(id, _)| id).collect();
            assert_eq!(cache.top(&w.id(), 2).unwrap(), ids);
        }
        assert!(cache.top(&windows[0].id(), 5).is_err());
        assert!(cache.top("missing#0", 1).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        cache.save(&path).unwrap();
        let back = CandidateCache::load(&path).unwrap();
        assert_eq!(back, cache);
        back.require_hash(&r.hash().unwrap()).unwrap();
        assert!(back.require_hash("other").is_err());
    }

    #[test]
    fn foreign_index_rejected() {
        let (_, index, windows) = setup();
        let other = tiny_retriever(4);
        assert!(CandidateCache::build(&other, &index, &windows, 2, Exec::Sequential).is_err());
    }
}
