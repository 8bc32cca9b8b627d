//! Bundled synthetic corpus: a planted-partition citation graph whose blocks
//! double as document topics with disjoint vocabularies.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;

use crate::corpus_graph::{CitationGraph, Document};
use crate::eval_harness::{LabeledItem, RankingQuery, Split};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedPartition {
    pub nodes: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
}

impl Default for PlantedPartition {
    fn default() -> Self {
        PlantedPartition {
            nodes: 200,
            blocks: 2,
            p_in: 0.10,
            p_out: 0.01,
        }
    }
}

pub fn node_id(i: usize) -> String {
    format!("p{i:05}")
}

impl PlantedPartition {
    /// Block of node `i`; nodes are assigned round-robin.
    pub fn block_of(&self, i: usize) -> usize {
        i % self.blocks
    }

    /// Directed graph: each ordered pair `(i, j)`, `i != j`, is an edge with
    /// probability `p_in` inside a block and `p_out` across blocks.
    pub fn generate(&self, seed: u64) -> CitationGraph {
        let mut rng = seed::rng_for(seed, "planted_partition");
        let mut edges = Vec::new();
        for i in 0..self.nodes {
            for j in 0..self.nodes {
                if i == j {
                    continue;
                }
                let p = if self.block_of(i) == self.block_of(j) {
                    self.p_in
                } else {
                    self.p_out
                };
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let ids = (0..self.nodes).map(node_id).collect();
        CitationGraph::from_parts(ids, edges, true).expect("generated graph is valid")
    }

    pub fn labels(&self) -> Vec<(String, String)> {
        (0..self.nodes)
            .map(|i| (node_id(i), format!("topic{}", self.block_of(i))))
            .collect()
    }
}

fn topic_word(topic: usize, i: usize) -> String {
    format!("t{topic}w{i:02}")
}

/// One document per node. Titles and abstracts draw from the node's topic
/// vocabulary with a sprinkling of shared filler words.
pub fn topic_documents(partition: &PlantedPartition, words_per_topic: usize, seed: u64) -> Vec<Document> {
    let mut rng = seed::rng_for(seed, "topic_documents");
    let shared: Vec<String> = (0..10).map(|i| format!("common{i}")).collect();
    (0..partition.nodes)
        .map(|i| {
            let topic = partition.block_of(i);
            let vocab: Vec<String> = (0..words_per_topic).map(|w| topic_word(topic, w)).collect();
            let draw = |len: usize, rng: &mut seed::Rng| -> String {
                (0..len)
                    .map(|_| {
                        if rng.random::<f64>() < 0.2 {
                            shared.choose(rng).unwrap().clone()
                        } else {
                            vocab.choose(rng).unwrap().clone()
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let title_len = rng.random_range(3..7);
            let title = draw(title_len, &mut rng);
            let abstract_len = rng.random_range(15..35);
            let abstract_text = draw(abstract_len, &mut rng);
            Document::new(node_id(i), title, abstract_text)
        })
        .collect()
}

/// Ranking task where same-topic candidates are relevant.
pub fn topic_ranking_task(
    partition: &PlantedPartition,
    queries: usize,
    candidates: usize,
    seed: u64,
) -> Vec<RankingQuery> {
    let mut rng = seed::rng_for(seed, "topic_ranking");
    let mut order: Vec<usize> = (0..partition.nodes).collect();
    order.shuffle(&mut rng);
    order
        .iter()
        .take(queries)
        .map(|&q| {
            let mut pool: Vec<usize> = (0..partition.nodes).filter(|&c| c != q).collect();
            pool.shuffle(&mut rng);
            pool.truncate(candidates);
            pool.sort_unstable();
            RankingQuery {
                query: node_id(q),
                relevant: pool
                    .iter()
                    .filter(|&&c| partition.block_of(c) == partition.block_of(q))
                    .map(|&c| node_id(c))
                    .collect(),
                candidates: pool.iter().map(|&c| node_id(c)).collect(),
            }
        })
        .collect()
}

/// Topic labels with a seeded 70/30 train/test assignment.
pub fn topic_labels(partition: &PlantedPartition, seed: u64) -> Vec<LabeledItem> {
    let mut rng = seed::rng_for(seed, "topic_labels");
    partition
        .labels()
        .into_iter()
        .map(|(id, label)| LabeledItem {
            id,
            label,
            split: if rng.random::<f64>() < 0.7 {
                Split::Train
            } else {
                Split::Test
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_partition_density() {
        let partition = PlantedPartition::default();
        let g = partition.generate(1);
        let (mut intra, mut inter) = (0, 0);
        for &(s, d) in g.edges() {
            if partition.block_of(s) == partition.block_of(d) {
                intra += 1;
            } else {
                inter += 1;
            }
        }
        // expectations: 2 * 100 * 99 * 0.1 = 1980 and 2 * 100 * 100 * 0.01 = 200
        assert!((1780..2180).contains(&intra), "intra {intra}");
        assert!((140..260).contains(&inter), "inter {inter}");
        assert_eq!(g, partition.generate(1));
    }

    #[test]
    fn documents_use_topic_vocabulary() {
        let partition = PlantedPartition::default();
        let docs = topic_documents(&partition, 30, 4);
        assert_eq!(docs.len(), 200);
        assert!(docs[0]
            .title
            .split(' ')
            .all(|w| w.starts_with("t0") || w.starts_with("common")));
        assert!(docs[1]
            .abstract_text
            .split(' ')
            .all(|w| w.starts_with("t1") || w.starts_with("common")));
    }
}
