//! Exact dot-product search over a flat embedding matrix.
//!
//! File layout: the magic `RRXIDX01`, a little-endian `u32` header length, a
//! JSON header `{count, dim, dtype, encoder_hash, ids}`, then the row-major
//! matrix as little-endian `f64`.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rrx_numerics::Exec;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, CoreError, Result};

const MAGIC: &[u8; 8] = b"RRXIDX01";

#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
    encoder_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    count: usize,
    dim: usize,
    dtype: String,
    encoder_hash: String,
    ids: Vec<String>,
}

/// Descending score, then ascending id.
fn rank_order(a: &(usize, f64), b: &(usize, f64), ids: &[String]) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0]))
}

impl FlatIndex {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>, encoder_hash: String) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(CoreError::Contract("one id per embedding row required".into()));
        }
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(CoreError::Contract("embedding rows differ in width".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(CoreError::Validation(format!("duplicate index id `{dup}`")));
        }
        Ok(Self { ids, dim, data: rows.concat(), encoder_hash })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn encoder_hash(&self) -> &str {
        &self.encoder_hash
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Top `min(k, len)` `(id, score)` pairs, score descending with ties
    /// broken by ascending id.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
        if self.is_empty() {
            return Err(CoreError::Contract("search over an empty index".into()));
        }
        if k == 0 {
            return Err(CoreError::Contract("search needs k >= 1".into()));
        }
        if query.len() != self.dim {
            return Err(CoreError::Contract(format!("query of width {} against index of width {}", query.len(), self.dim)));
        }
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .map(|i| (i, self.row(i).iter().zip(query).map(|(a, b)| a * b).sum()))
            .collect();
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, |a, b| rank_order(a, b, &self.ids));
            scored.truncate(k);
        }
        scored.sort_unstable_by(|a, b| rank_order(a, b, &self.ids));
        Ok(scored.into_iter().map(|(i, s)| (self.ids[i].clone(), s)).collect())
    }

    pub fn search_batch(&self, queries: &[Vec<f64>], k: usize, exec: Exec) -> Result<Vec<Vec<(String, f64)>>> {
        exec.map(queries, |q| self.search(q, k)).into_iter().collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            count: self.len(),
            dim: self.dim,
            dtype: "f64".into(),
            encoder_hash: self.encoder_hash.clone(),
            ids: self.ids.clone(),
        };
        let h = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + h.len() + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(h.len() as u32).to_le_bytes());
        out.extend_from_slice(&h);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| CoreError::Validation(format!("index file: {m}"));
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let hbytes = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let h: Header = serde_json::from_slice(hbytes).map_err(json_err("index header"))?;
        if h.dtype != "f64" || h.ids.len() != h.count {
            return Err(bad("inconsistent header"));
        }
        let body = &bytes[12 + hlen..];
        if body.len() != 8 * h.count * h.dim {
            return Err(bad("matrix size does not match header"));
        }
        let data: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let rows = data.chunks(h.dim.max(1)).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let rows = if h.dim == 0 { vec![vec![]; h.count] } else { rows };
        Self::new(h.ids, rows, h.encoder_hash)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(io_err(path))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(idx: &FlatIndex, q: &[f64], k: usize) -> Vec<(String, f64)> {
        let mut all: Vec<(String, f64)> = (0..idx.len())
            .map(|i| (idx.ids()[i].clone(), idx.row(i).iter().zip(q).map(|(a, b)| a * b).sum()))
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    fn three() -> FlatIndex {
        FlatIndex::new(
            vec!["c".into(), "a".into(), "b".into()],
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]],
            "h".into(),
        )
        .unwrap()
    }

    #[test]
    fn order_ties_and_saturation() {
        let idx = three();
        let got = idx.search(&[2.0, 1.0], 3).unwrap();
        assert_eq!(got, vec![("b".into(), 2.0), ("c".into(), 2.0), ("a".into(), 1.0)]);
        assert_eq!(idx.search(&[2.0, 1.0], 10).unwrap().len(), 3);
        assert!(idx.search(&[1.0], 1).is_err());
        let empty = FlatIndex::new(vec![], vec![], "h".into()).unwrap();
        assert!(empty.search(&[], 1).is_err());
    }

    #[test]
    fn bytes_round_trip() {
        let idx = three();
        assert_eq!(FlatIndex::from_bytes(&idx.to_bytes()).unwrap(), idx);
        let mut b = idx.to_bytes();
        b.pop();
        assert!(FlatIndex::from_bytes(&b).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn search_equals_brute_force(n in 1usize..10_000, k in 1usize..40, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = 4;
            // coarse values so that ties occur
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-3..=3) as f64).collect()).collect();
            let ids: Vec<String> = (0..n).map(|i| format!("p{:05}", (i * 7919) % 100_000)).collect();
            let idx = FlatIndex::new(ids, rows, "h".into()).unwrap();
            let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3..=3) as f64).collect();
            prop_assert_eq!(idx.search(&q, k).unwrap(), brute(&idx, &q, k));
        }
    }
}
