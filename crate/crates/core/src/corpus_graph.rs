//! Citation graph and document ingestion.
//!
//! Nodes get dense 0-based indices in first-appearance order; external ids live
//! only in the id table. Duplicate edges and self-loops are dropped on ingest and
//! counted in [`IngestStats`].

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// A paper reference: opaque external id plus its dense row index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PaperId {
    pub external_id: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub abstract_text: String,
}

#[derive(Deserialize)]
struct DocumentLine {
    id: String,
    title: String,
    #[serde(default, rename = "abstract")]
    abstract_text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, title: impl Into<String>, abstract_text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            title: title.into(),
            abstract_text: abstract_text.into(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::json!({
            "id": self.id,
            "title": self.title,
            "abstract": self.abstract_text,
        })
        .to_string()
    }
}

/// Reads a JSON-lines document file (`id`, `title`, `abstract`).
pub fn read_documents(path: &Path) -> Result<Vec<Document>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DocumentLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if parsed.title.trim().is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("document {} has an empty title", parsed.id),
            });
        }
        if !seen.insert(parsed.id.clone()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("duplicate document id {}", parsed.id),
            });
        }
        docs.push(Document {
            id: parsed.id,
            title: parsed.title,
            abstract_text: parsed.abstract_text,
        });
    }
    Ok(docs)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub lines: usize,
    pub duplicates: usize,
    pub self_loops: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub removed_nodes: usize,
    pub removed_edges: usize,
    /// Excluded ids that were not present in the graph.
    pub unknown_ids: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "GraphRepr", into = "GraphRepr")]
pub struct CitationGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    directed: bool,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    directed: bool,
    ids: Vec<String>,
    edges: Vec<(usize, usize)>,
}

impl From<GraphRepr> for CitationGraph {
    fn from(r: GraphRepr) -> Self {
        let index = r.ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        CitationGraph {
            ids: r.ids,
            index,
            edges: r.edges,
            directed: r.directed,
        }
    }
}

impl From<CitationGraph> for GraphRepr {
    fn from(g: CitationGraph) -> Self {
        GraphRepr {
            directed: g.directed,
            ids: g.ids,
            edges: g.edges,
        }
    }
}

impl CitationGraph {
    /// Builds a graph from external ids and index edges. Edges are validated
    /// and deduplicated; self-loops are rejected.
    pub fn from_parts(ids: Vec<String>, edges: Vec<(usize, usize)>, directed: bool) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate node id {id}")));
            }
        }
        let n = ids.len();
        let mut seen = HashSet::with_capacity(edges.len());
        let mut kept = Vec::with_capacity(edges.len());
        for (s, d) in edges {
            if s >= n || d >= n {
                return Err(Error::Data(format!("edge ({s},{d}) out of range for {n} nodes")));
            }
            if s == d {
                return Err(Error::Data(format!("self-loop on node {s}")));
            }
            if seen.insert((s, d)) {
                kept.push((s, d));
            }
        }
        Ok(CitationGraph {
            ids,
            index,
            edges: kept,
            directed,
        })
    }

    pub fn ingest_edges(path: &Path) -> Result<(Self, IngestStats)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::ingest_reader(file, path)
    }

    /// Parses `src<TAB>dst` lines. Blank lines are skipped.
    pub fn ingest_reader<R: Read>(reader: R, path: &Path) -> Result<(Self, IngestStats)> {
        let mut ids: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut seen = HashSet::new();
        let mut stats = IngestStats::default();

        let mut intern = |id: &str, ids: &mut Vec<String>| -> usize {
            if let Some(&i) = index.get(id) {
                return i;
            }
            let i = ids.len();
            ids.push(id.to_string());
            index.insert(id.to_string(), i);
            i
        };

        for (lineno, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (src, dst) = match (fields.next(), fields.next(), fields.next()) {
                (Some(s), Some(d), None) if !s.is_empty() && !d.is_empty() => (s, d),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno + 1,
                        message: "expected exactly two tab-separated ids".into(),
                    })
                }
            };
            stats.lines += 1;
            let s = intern(src, &mut ids);
            let d = intern(dst, &mut ids);
            if s == d {
                stats.self_loops += 1;
            } else if seen.insert((s, d)) {
                edges.push((s, d));
            } else {
                stats.duplicates += 1;
            }
        }
        if stats.lines == 0 {
            return Err(Error::EmptyGraph(path.to_path_buf()));
        }
        let graph = CitationGraph::from_parts(ids, edges, true)?;
        Ok((graph, stats))
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn index_of(&self, external_id: &str) -> Option<usize> {
        self.index.get(external_id).copied()
    }

    pub fn external_id(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn paper_id(&self, index: usize) -> Option<PaperId> {
        self.external_id(index).map(|id| PaperId {
            external_id: id.to_string(),
            index,
        })
    }

    /// Removes the excluded nodes and every incident edge. Surviving nodes keep
    /// their relative order and are re-indexed densely.
    pub fn filter_nodes(&self, exclude: &HashSet<String>) -> (CitationGraph, FilterStats) {
        let unknown_ids = exclude.iter().filter(|id| !self.index.contains_key(*id)).count();
        let mut remap = vec![None; self.ids.len()];
        let mut ids = Vec::new();
        for (i, id) in self.ids.iter().enumerate() {
            if !exclude.contains(id) {
                remap[i] = Some(ids.len());
                ids.push(id.clone());
            }
        }
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter_map(|&(s, d)| Some((remap[s]?, remap[d]?)))
            .collect();
        let stats = FilterStats {
            removed_nodes: self.ids.len() - ids.len(),
            removed_edges: self.edges.len() - edges.len(),
            unknown_ids,
        };
        let graph = CitationGraph::from_parts(ids, edges, self.directed).expect("filtering preserves graph invariants");
        (graph, stats)
    }

    /// Adds the reverse of every edge. Output edges are sorted, so the
    /// conversion is idempotent.
    pub fn to_undirected(&self) -> CitationGraph {
        let mut edges: Vec<(usize, usize)> = self.edges.iter().flat_map(|&(s, d)| [(s, d), (d, s)]).collect();
        edges.sort_unstable();
        edges.dedup();
        CitationGraph {
            ids: self.ids.clone(),
            index: self.index.clone(),
            edges,
            directed: false,
        }
    }

    /// Seeded uniform edge-level holdout. The train graph keeps every node.
    pub fn split_edges(&self, holdout_fraction: f64, seed: u64) -> Result<EdgeSplit> {
        if !(0.0..1.0).contains(&holdout_fraction) {
            return Err(Error::Argument(format!(
                "holdout fraction {holdout_fraction} outside [0, 1)"
            )));
        }
        let m = self.edges.len();
        let target = holdout_fraction * m as f64;
        if holdout_fraction > 0.0 && target < 1.0 - 1e-9 {
            return Err(Error::Argument(format!(
                "holdout fraction {holdout_fraction} of {m} edges selects no edge"
            )));
        }
        let n_holdout = (target + 1e-9).floor() as usize;
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut seed::rng_for(seed, "split_edges"));
        let mut is_holdout = vec![false; m];
        for &i in &order[..n_holdout] {
            is_holdout[i] = true;
        }
        let mut train_edges = Vec::with_capacity(m - n_holdout);
        let mut holdout = Vec::with_capacity(n_holdout);
        for (i, &e) in self.edges.iter().enumerate() {
            if is_holdout[i] {
                holdout.push(e);
            } else {
                train_edges.push(e);
            }
        }
        let train = CitationGraph {
            ids: self.ids.clone(),
            index: self.index.clone(),
            edges: train_edges,
            directed: self.directed,
        };
        Ok(EdgeSplit { train, holdout })
    }
}

#[derive(Debug, Clone)]
pub struct EdgeSplit {
    pub train: CitationGraph,
    pub holdout: Vec<(usize, usize)>,
}
