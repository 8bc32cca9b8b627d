//! Exact flat top-k search over an [`EmbeddingTable`].
//!
//! Scores are computed in f64 from the stored f32 rows. Neighbors are ordered
//! by descending score with ties going to the smaller node index, and the query
//! never appears in its own neighbor list.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rayon::prelude::*;

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub query: usize,
    /// `(node, score)`, best first. `entries[i - 1]` is the i-th neighbor.
    pub entries: Vec<(usize, f64)>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|&(n, _)| n)
    }

    /// 1-based rank of `node`, if present.
    pub fn rank_of(&self, node: usize) -> Option<usize> {
        self.entries.iter().position(|&(n, _)| n == node).map(|p| p + 1)
    }

    pub fn truncated(&self, k: usize) -> NeighborList {
        NeighborList {
            query: self.query,
            entries: self.entries[..k.min(self.entries.len())].to_vec(),
        }
    }
}

/// Heap entry ordered so that the *worst* neighbor is the maximum.
#[derive(PartialEq)]
struct Worst(f64, usize);

impl Eq for Worst {}

impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Immutable search view over a table, optionally restricted to a candidate
/// subset of rows (the sampling corpus).
#[derive(Debug, Clone)]
pub struct FlatIndex<'a> {
    table: &'a EmbeddingTable,
    candidates: Option<Vec<usize>>,
}

impl<'a> FlatIndex<'a> {
    pub fn new(table: &'a EmbeddingTable) -> Self {
        FlatIndex {
            table,
            candidates: None,
        }
    }

    pub fn with_candidates(table: &'a EmbeddingTable, mut candidates: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = candidates.iter().find(|&&c| c >= table.rows()) {
            return Err(Error::Argument(format!("candidate row {bad} out of range")));
        }
        candidates.sort_unstable();
        candidates.dedup();
        Ok(FlatIndex {
            table,
            candidates: Some(candidates),
        })
    }

    pub fn table(&self) -> &EmbeddingTable {
        self.table
    }

    pub fn candidate_count(&self) -> usize {
        self.candidates.as_ref().map_or(self.table.rows(), Vec::len)
    }

    pub fn top_k(&self, query: usize, k: usize, exclude: &HashSet<usize>) -> Result<NeighborList> {
        if k == 0 {
            return Err(Error::Argument("top_k requires k >= 1".into()));
        }
        if query >= self.table.rows() {
            return Err(Error::Argument(format!("query row {query} out of range")));
        }
        let measure = self.table.measure();
        let q = self.table.row(query);
        let mut heap = BinaryHeap::with_capacity(k + 1);
        let mut visit = |node: usize| {
            if node == query || exclude.contains(&node) {
                return;
            }
            // `+ 0.0` folds -0.0 into 0.0 so signed zeros tie
            let score = measure.score(q, self.table.row(node)) + 0.0;
            let entry = Worst(score, node);
            if heap.len() < k {
                heap.push(entry);
            } else if let Some(top) = heap.peek() {
                if entry < *top {
                    heap.pop();
                    heap.push(entry);
                }
            }
        };
        match &self.candidates {
            Some(c) => c.iter().copied().for_each(&mut visit),
            None => (0..self.table.rows()).for_each(&mut visit),
        }
        let entries = heap.into_sorted_vec().into_iter().map(|Worst(s, n)| (n, s)).collect();
        Ok(NeighborList { query, entries })
    }

    /// One `top_k(q, k_max)` per query, positionally aligned with `queries`.
    pub fn batch_neighbors(&self, queries: &[usize], k_max: usize) -> Result<Vec<NeighborList>> {
        let empty = HashSet::new();
        queries
            .par_iter()
            .map(|&q| {
                self.top_k(q, k_max, &empty).map_err(|e| Error::Mining {
                    query: q.to_string(),
                    message: e.to_string(),
                })
            })
            .collect()
    }
}

/// Nodes at ranks `k - c + 1 ..= k` (1-based): the `c` neighbors descending
/// from the k-th.
pub fn range_by_rank(n: &NeighborList, k: usize, c: usize) -> Result<Vec<usize>> {
    if c < 1 || k < c {
        return Err(Error::Argument(format!("invalid rank band k={k}, c={c}")));
    }
    if n.len() < k {
        return Err(Error::InsufficientNeighbors {
            query: n.query.to_string(),
            k,
            available: n.len(),
        });
    }
    Ok(n.entries[k - c..k].iter().map(|&(node, _)| node).collect())
}
