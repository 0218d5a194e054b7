//! Exact cosine top-k index for hard-negative retrieval.
//!
//! The index is built once from fixed sentence vectors and never updated.
//! Rows are L2-normalized at build time, so cosine similarity is a dot
//! product (accumulated in f64). Queries scan fixed-size row blocks in
//! parallel, each block keeping a bounded heap, and merge the per-block
//! winners. Ordering is by descending cosine, ties by ascending id.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::VectorSet;
use crate::error::{Error, Result};

const INDEX_MAGIC: &[u8; 8] = b"CARDSIDX";
const INDEX_VERSION: u32 = 1;
const BLOCK_ROWS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// `s` uniformly from the top `k`.
    RUniform,
    /// The `s` hardest of the top `k`.
    RTop,
    /// `s` uniformly from the whole corpus.
    DUniform,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "r_uniform" | "runiform" => Ok(Strategy::RUniform),
            "r_top" | "rtop" => Ok(Strategy::RTop),
            "d_uniform" | "duniform" => Ok(Strategy::DUniform),
            other => Err(Error::invalid(format!("unknown strategy {other:?}"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::RUniform => "r_uniform",
            Strategy::RTop => "r_top",
            Strategy::DUniform => "d_uniform",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k: usize,
    pub s: usize,
    pub strategy: Strategy,
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.s == 0 {
            return Err(Error::invalid("k and s must both be at least 1"));
        }
        if self.strategy != Strategy::DUniform && self.s > self.k {
            return Err(Error::invalid(format!("s = {} exceeds k = {}", self.s, self.k)));
        }
        Ok(())
    }
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 8,
            s: 1,
            strategy: Strategy::RUniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    pub cosine: f64,
}

/// Orders neighbors so that "greater" means ranked earlier.
#[derive(Debug, Clone, Copy)]
struct Ranked(Neighbor);

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .cosine
            .total_cmp(&other.0.cosine)
            .then_with(|| other.0.id.cmp(&self.0.id))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

fn dot(a: ArrayView1<'_, f32>, b: ArrayView1<'_, f32>) -> f64 {
    a.iter().zip(b.iter()).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Static exact-search index over unit-normalized sentence vectors.
#[derive(Debug, Clone)]
pub struct NegativeIndex {
    ids: Vec<u64>,
    vectors: Array2<f32>,
    provenance: [u8; 32],
    rows: HashMap<u64, usize>,
}

/// SHA-256 over the ids and raw f32 bits of the input vectors.
pub fn provenance_hash(ids: &[u64], matrix: ArrayView2<'_, f32>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((ids.len() as u64).to_le_bytes());
    h.update((matrix.ncols() as u64).to_le_bytes());
    for id in ids {
        h.update(id.to_le_bytes());
    }
    for v in matrix.iter() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().into()
}

impl NegativeIndex {
    /// Normalizes every row and freezes the index.
    pub fn build(ids: &[u64], matrix: ArrayView2<'_, f32>) -> Result<Self> {
        let n = ids.len();
        if n != matrix.nrows() {
            return Err(Error::invalid(format!("{n} ids for {} vectors", matrix.nrows())));
        }
        if n < 2 {
            return Err(Error::invalid("an index needs at least two vectors"));
        }
        if matrix.ncols() == 0 {
            return Err(Error::invalid("vectors must have dimension >= 1"));
        }
        let mut rows = HashMap::with_capacity(n);
        for (row, &id) in ids.iter().enumerate() {
            if rows.insert(id, row).is_some() {
                return Err(Error::invalid(format!("duplicate id {id}")));
            }
        }
        let mut vectors = matrix.to_owned();
        for (mut row, &id) in vectors.rows_mut().into_iter().zip(ids) {
            if !row.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("vector {id} has non-finite entries")));
            }
            let norm = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::invalid(format!("vector {id} has zero norm")));
            }
            row.map_inplace(|v| *v = (*v as f64 / norm) as f32);
        }
        Ok(Self {
            ids: ids.to_vec(),
            vectors,
            provenance: provenance_hash(ids, matrix),
            rows,
        })
    }

    pub fn from_vectors(set: &VectorSet) -> Result<Self> {
        Self::build(&set.ids, set.matrix.view())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn contains(&self, id: u64) -> bool {
        self.rows.contains_key(&id)
    }

    /// Normalized stored vector for `id`.
    pub fn vector(&self, id: u64) -> Option<ArrayView1<'_, f32>> {
        self.rows.get(&id).map(|&r| self.vectors.row(r))
    }

    pub fn vectors(&self) -> ArrayView2<'_, f32> {
        self.vectors.view()
    }

    pub fn provenance(&self) -> &[u8; 32] {
        &self.provenance
    }

    pub fn provenance_hex(&self) -> String {
        hex::encode(self.provenance)
    }

    fn row_of(&self, id: u64) -> Result<usize> {
        self.rows
            .get(&id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("id {id} is not in the index")))
    }

    /// Cosine between two indexed vectors.
    pub fn cosine(&self, a: u64, b: u64) -> Result<f64> {
        Ok(dot(self.vectors.row(self.row_of(a)?), self.vectors.row(self.row_of(b)?)))
    }

    /// The `k` nearest neighbors of an indexed sentence, excluding itself.
    pub fn top_k(&self, query_id: u64, k: usize) -> Result<Vec<Neighbor>> {
        let row = self.row_of(query_id)?;
        if k == 0 || k > self.len() - 1 {
            return Err(Error::invalid(format!(
                "k = {k} must be in 1..={} for this index",
                self.len() - 1
            )));
        }
        Ok(self.scan(self.vectors.row(row), k, Some(row)))
    }

    /// The `k` nearest neighbors of an arbitrary (unnormalized) query vector.
    pub fn search(&self, query: ArrayView1<'_, f32>, k: usize) -> Result<Vec<Neighbor>> {
        if query.len() != self.dim() {
            return Err(Error::invalid(format!(
                "query has dimension {}, index has {}",
                query.len(),
                self.dim()
            )));
        }
        let norm = dot(query, query).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::invalid("query vector must be finite and non-zero"));
        }
        let q = query.mapv(|v| (v as f64 / norm) as f32);
        Ok(self.scan(q.view(), k.min(self.len()), None))
    }

    fn scan(&self, query: ArrayView1<'_, f32>, k: usize, skip_row: Option<usize>) -> Vec<Neighbor> {
        let block_best = |start: usize| {
            let end = (start + BLOCK_ROWS).min(self.len());
            let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
            for row in start..end {
                if Some(row) == skip_row {
                    continue;
                }
                let cand = Ranked(Neighbor {
                    id: self.ids[row],
                    cosine: dot(self.vectors.row(row), query),
                });
                if heap.len() < k {
                    heap.push(Reverse(cand));
                } else if heap.peek().is_some_and(|worst| cand > worst.0) {
                    heap.pop();
                    heap.push(Reverse(cand));
                }
            }
            heap.into_vec()
        };
        let starts: Vec<usize> = (0..self.len()).step_by(BLOCK_ROWS).collect();
        let mut merged: Vec<Ranked> = if starts.len() > 1 {
            starts.into_par_iter().flat_map_iter(block_best).map(|r| r.0).collect()
        } else {
            starts.into_iter().flat_map(block_best).map(|r| r.0).collect()
        };
        merged.sort_unstable_by(|a, b| b.cmp(a));
        merged.truncate(k);
        merged.into_iter().map(|r| r.0).collect()
    }

    /// Draws `cfg.s` negatives for `query_id` with the configured strategy.
    pub fn sample_negatives<R: Rng + ?Sized>(
        &self,
        query_id: u64,
        cfg: &RetrievalConfig,
        rng: &mut R,
    ) -> Result<Vec<u64>> {
        cfg.validate()?;
        let row = self.row_of(query_id)?;
        match cfg.strategy {
            Strategy::RTop => Ok(self.top_k(query_id, cfg.k)?.into_iter().take(cfg.s).map(|n| n.id).collect()),
            Strategy::RUniform => {
                let pool = self.top_k(query_id, cfg.k)?;
                Ok(rand::seq::index::sample(rng, pool.len(), cfg.s)
                    .into_iter()
                    .map(|i| pool[i].id)
                    .collect())
            }
            Strategy::DUniform => {
                let others = self.len() - 1;
                if cfg.s > others {
                    return Err(Error::invalid(format!(
                        "s = {} exceeds the {others} other sentences in the index",
                        cfg.s
                    )));
                }
                Ok(rand::seq::index::sample(rng, others, cfg.s)
                    .into_iter()
                    .map(|i| self.ids[if i >= row { i + 1 } else { i }])
                    .collect())
            }
        }
    }

    /// Negatives for every query of a batch. Negatives are not deduplicated
    /// against other batch members.
    pub fn attach_negatives<R: Rng + ?Sized>(
        &self,
        batch: &[u64],
        cfg: &RetrievalConfig,
        rng: &mut R,
    ) -> Result<Vec<Vec<u64>>> {
        batch.iter().map(|&id| self.sample_negatives(id, cfg, rng)).collect()
    }

    /// Binary layout: `CARDSIDX`, version u32, n u64, d u32, 32-byte
    /// provenance hash, n u64 ids, then n·d normalized f32 row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(56 + self.len() * (8 + 4 * self.dim()));
        buf.extend_from_slice(INDEX_MAGIC);
        buf.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        buf.extend_from_slice(&self.provenance);
        for id in &self.ids {
            buf.extend_from_slice(&id.to_le_bytes());
        }
        for v in self.vectors.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::parse(path, 0, msg.to_string());
        if bytes.len() < 56 || &bytes[..8] != INDEX_MAGIC {
            return Err(bad("not an index file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != INDEX_VERSION {
            return Err(bad(&format!("unsupported index version {version}")));
        }
        let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as usize;
        let provenance: [u8; 32] = bytes[24..56].try_into().unwrap();
        let ids_end = 56 + 8 * n;
        if bytes.len() != ids_end + 4 * n * d {
            return Err(bad("index file size does not match its header"));
        }
        let ids: Vec<u64> = bytes[56..ids_end]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let data = bytes[ids_end..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let vectors = Array2::from_shape_vec((n, d), data).expect("size checked");
        let mut rows = HashMap::with_capacity(n);
        for (row, &id) in ids.iter().enumerate() {
            if rows.insert(id, row).is_some() {
                return Err(bad(&format!("duplicate id {id}")));
            }
        }
        Ok(Self {
            ids,
            vectors,
            provenance,
            rows,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_force(index: &NegativeIndex, query: u64, k: usize) -> Vec<(u64, f64)> {
        let q = index.vector(query).unwrap();
        let mut all: Vec<(u64, f64)> = index
            .ids()
            .iter()
            .filter(|&&id| id != query)
            .map(|&id| {
                let v = index.vector(id).unwrap();
                let mut s = 0.0f64;
                for i in 0..v.len() {
                    s += v[i] as f64 * q[i] as f64;
                }
                (id, s)
            })
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn orthogonal_pair() {
        let idx = NegativeIndex::build(&[0, 1], array![[1.0f32, 0.0], [0.0, 3.0]].view()).unwrap();
        assert_eq!(idx.cosine(0, 1).unwrap(), 0.0);
        assert_eq!(idx.top_k(0, 1).unwrap()[0].id, 1);
    }

    #[test]
    fn scaling_does_not_change_rows() {
        let a = NegativeIndex::build(&[0, 1], array![[1.0f32, 2.0], [3.0, -1.0]].view()).unwrap();
        let b = NegativeIndex::build(&[0, 1], array![[10.0f32, 20.0], [3.0, -1.0]].view()).unwrap();
        for (x, y) in a.vectors().iter().zip(b.vectors().iter()) {
            assert!((x - y).abs() < 1e-7);
        }
        assert_ne!(a.provenance(), b.provenance());
    }

    #[test]
    fn nearest_mixture() {
        let s = (0.9f32 * 0.9 + 0.1 * 0.1).sqrt();
        let m = array![[1.0f32, 0.0], [0.0, 1.0], [0.9 / s, 0.1 / s]];
        let idx = NegativeIndex::build(&[1, 2, 3], m.view()).unwrap();
        assert_eq!(idx.top_k(1, 1).unwrap()[0].id, 3);
        let all: Vec<u64> = idx.top_k(1, 2).unwrap().iter().map(|n| n.id).collect();
        assert_eq!(all, vec![3, 2]);
    }

    #[test]
    fn duplicate_vector_ranks_first() {
        let m = array![[0.3f32, 0.4, 0.5], [0.3, 0.4, 0.5], [0.5, 0.4, 0.3], [0.3, 0.5, 0.4]];
        let idx = NegativeIndex::build(&[10, 20, 30, 40], m.view()).unwrap();
        let top = idx.top_k(10, 3).unwrap();
        assert_eq!(top[0].id, 20);
        assert!((top[0].cosine - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ties_break_by_id() {
        let m = array![[1.0f32, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]];
        let idx = NegativeIndex::build(&[0, 9, 3, 5], m.view()).unwrap();
        let ids: Vec<u64> = idx.top_k(0, 3).unwrap().iter().map(|n| n.id).collect();
        assert_eq!(ids, vec![3, 5, 9]);
    }

    #[test]
    fn build_errors() {
        assert!(NegativeIndex::build(&[0], array![[1.0f32]].view()).is_err());
        let err = NegativeIndex::build(&[4, 7], array![[1.0f32, 0.0], [0.0, 0.0]].view()).unwrap_err();
        assert!(err.to_string().contains('7'));
        assert!(NegativeIndex::build(&[1, 1], array![[1.0f32], [2.0]].view()).is_err());
    }

    #[test]
    fn query_errors() {
        let idx = NegativeIndex::build(&[0, 1, 2], array![[1.0f32, 0.0], [0.0, 1.0], [1.0, 1.0]].view()).unwrap();
        assert!(idx.top_k(5, 1).is_err());
        assert!(idx.top_k(0, 3).is_err());
        assert_eq!(idx.top_k(0, 2).unwrap().len(), 2);
    }

    #[test]
    fn blocked_scan_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 1300;
        let m = Array2::from_shape_simple_fn((n, 6), || rng.gen_range(-1.0f32..1.0));
        let ids: Vec<u64> = (0..n as u64).map(|i| i * 7 % 1301).collect();
        let idx = NegativeIndex::build(&ids, m.view()).unwrap();
        for &q in ids.iter().step_by(97) {
            let got: Vec<(u64, f64)> = idx.top_k(q, 25).unwrap().iter().map(|n| (n.id, n.cosine)).collect();
            assert_eq!(got, brute_force(&idx, q, 25));
        }
    }

    #[test]
    fn strategies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Array2::from_shape_simple_fn((30, 5), || rng.gen_range(-1.0f32..1.0));
        let ids: Vec<u64> = (0..30).collect();
        let idx = NegativeIndex::build(&ids, m.view()).unwrap();
        let top: Vec<u64> = idx.top_k(3, 8).unwrap().iter().map(|n| n.id).collect();

        let rtop = RetrievalConfig { k: 8, s: 2, strategy: Strategy::RTop };
        assert_eq!(idx.sample_negatives(3, &rtop, &mut rng).unwrap(), top[..2].to_vec());

        let one = RetrievalConfig { k: 1, s: 1, strategy: Strategy::RUniform };
        for seed in 0..5 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(idx.sample_negatives(3, &one, &mut r).unwrap(), vec![top[0]]);
        }

        let uni = RetrievalConfig { k: 8, s: 3, strategy: Strategy::RUniform };
        let got = idx.sample_negatives(3, &uni, &mut rng).unwrap();
        assert_eq!(got.len(), 3);
        assert!(got.iter().all(|id| top.contains(id)));

        let bad = RetrievalConfig { k: 2, s: 3, strategy: Strategy::RUniform };
        assert!(idx.sample_negatives(3, &bad, &mut rng).is_err());
        let too_many = RetrievalConfig { k: 2, s: 30, strategy: Strategy::DUniform };
        assert!(idx.sample_negatives(3, &too_many, &mut rng).is_err());
    }

    #[test]
    fn attach_per_query() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Array2::from_shape_simple_fn((10, 3), || rng.gen_range(-1.0f32..1.0));
        let ids: Vec<u64> = (0..10).collect();
        let idx = NegativeIndex::build(&ids, m.view()).unwrap();
        let cfg = RetrievalConfig::default();
        let negs = idx.attach_negatives(&[0, 1, 2, 3], &cfg, &mut rng).unwrap();
        assert_eq!(negs.len(), 4);
        assert!(negs.iter().all(|n| n.len() == 1));
        assert_eq!(idx.attach_negatives(&[5], &cfg, &mut rng).unwrap().len(), 1);
    }

    #[test]
    fn persistence_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Array2::from_shape_simple_fn((10, 3), || rng.gen_range(-1.0f32..1.0));
        let ids: Vec<u64> = (100..110).collect();
        let idx = NegativeIndex::build(&ids, m.view()).unwrap();
        let back = NegativeIndex::from_bytes(&idx.to_bytes(), Path::new("i")).unwrap();
        assert_eq!(back.ids(), idx.ids());
        assert_eq!(back.vectors(), idx.vectors());
        assert_eq!(back.provenance(), idx.provenance());
        let again = NegativeIndex::build(&ids, m.view()).unwrap();
        assert_eq!(again.provenance_hex(), idx.provenance_hex());
    }
}
