//! Shallow citation-graph embeddings trained with a margin ranking loss.
//!
//! Every positive edge `(s, d)` is contrasted with `B` corrupted edges
//! `(s, d')` whose destination is drawn uniformly from the nodes other than
//! `s` and `d`. The per-pair loss is `max(0, m - score(s, d) + score(s, d'))`
//! and the summed loss of an edge is applied as one plain SGD step.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus_graph::CitationGraph;
use crate::embedding::{EmbeddingTable, Measure};
use crate::error::{Error, Result};
use crate::eval_harness::pooled_auc;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphTrainConfig {
    pub epochs: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub negatives_per_edge: usize,
    pub dim: usize,
    pub measure: Measure,
    pub seed: u64,
}

impl Default for GraphTrainConfig {
    fn default() -> Self {
        GraphTrainConfig {
            epochs: 20,
            margin: 0.15,
            learning_rate: 0.1,
            negatives_per_edge: 10,
            dim: 128,
            measure: Measure::Dot,
            seed: 0,
        }
    }
}

impl GraphTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs < 1 {
            problems.push("epochs must be >= 1".to_string());
        }
        if self.margin.is_nan() || self.margin <= 0.0 {
            problems.push(format!("margin {} must be > 0", self.margin));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            problems.push(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if self.negatives_per_edge < 1 {
            problems.push("negatives_per_edge must be >= 1".to_string());
        }
        if self.dim < 1 {
            problems.push("dim must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("graph: {}", problems.join("; "))))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkPredMetrics {
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_10: f64,
    pub auc: f64,
}

/// Gradient of a similarity score with respect to its first argument.
fn score_grad(measure: Measure, a: &[f64], b: &[f64], out: &mut [f64], sign: f64) {
    match measure {
        Measure::Dot => {
            for (o, &bv) in out.iter_mut().zip(b) {
                *o += sign * bv;
            }
        }
        Measure::Cosine => {
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return;
            }
            let cos = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
            for ((o, &av), &bv) in out.iter_mut().zip(a).zip(b) {
                *o += sign * (bv / (na * nb) - cos * av / (na * na));
            }
        }
    }
}

fn score64(measure: Measure, a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    match measure {
        Measure::Dot => d,
        Measure::Cosine => {
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                d / (na * nb)
            }
        }
    }
}

/// Summed hinge loss of one positive edge against its corrupted destinations,
/// with gradients for the source, destination and each negative row.
#[derive(Debug, Clone)]
pub struct EdgeGrad {
    pub loss: f64,
    pub src: Vec<f64>,
    pub dst: Vec<f64>,
    pub negs: Vec<Vec<f64>>,
}

pub fn edge_loss_grad(measure: Measure, margin: f64, src: &[f64], dst: &[f64], negs: &[&[f64]]) -> EdgeGrad {
    let dim = src.len();
    let pos = score64(measure, src, dst);
    let mut g = EdgeGrad {
        loss: 0.0,
        src: vec![0.0; dim],
        dst: vec![0.0; dim],
        negs: vec![vec![0.0; dim]; negs.len()],
    };
    for (j, neg) in negs.iter().enumerate() {
        let hinge = margin - pos + score64(measure, src, neg);
        if hinge <= 0.0 {
            continue;
        }
        g.loss += hinge;
        // d/d(pos) = -1, d/d(neg score) = +1
        score_grad(measure, src, dst, &mut g.src, -1.0);
        score_grad(measure, dst, src, &mut g.dst, -1.0);
        score_grad(measure, src, neg, &mut g.src, 1.0);
        score_grad(measure, neg, src, &mut g.negs[j], 1.0);
    }
    g
}

fn widen(row: &[f32]) -> Vec<f64> {
    row.iter().map(|&v| v as f64).collect()
}

fn sample_corrupt<R: rand::Rng>(rng: &mut R, n: usize, src: usize, dst: usize) -> usize {
    let (lo, hi) = if src < dst { (src, dst) } else { (dst, src) };
    let mut x = rng.random_range(0..n - 2);
    if x >= lo {
        x += 1;
    }
    if x >= hi {
        x += 1;
    }
    x
}

/// Applies one SGD step for edge `(src, dst)` against the given corrupted
/// destinations and returns the summed hinge loss.
pub fn sgd_edge_step(
    table: &mut EmbeddingTable,
    src: usize,
    dst: usize,
    negs: &[usize],
    margin: f64,
    learning_rate: f64,
) -> f64 {
    let measure = table.measure();
    let s = widen(table.row(src));
    let d = widen(table.row(dst));
    let neg_rows: Vec<Vec<f64>> = negs.iter().map(|&n| widen(table.row(n))).collect();
    let neg_refs: Vec<&[f64]> = neg_rows.iter().map(Vec::as_slice).collect();
    let g = edge_loss_grad(measure, margin, &s, &d, &neg_refs);
    if g.loss == 0.0 || learning_rate == 0.0 {
        return g.loss;
    }
    let step = learning_rate / negs.len() as f64;
    let mut apply = |row: usize, grad: &[f64]| {
        for (v, gr) in table.row_mut(row).iter_mut().zip(grad) {
            *v = (*v as f64 - step * gr) as f32;
        }
    };
    apply(src, &g.src);
    apply(dst, &g.dst);
    for (&n, gr) in negs.iter().zip(&g.negs) {
        apply(n, gr);
    }
    g.loss
}

/// One pass over every edge in a seeded shuffled order. Returns the mean
/// per-pair hinge loss.
pub fn train_epoch(
    table: &mut EmbeddingTable,
    graph: &CitationGraph,
    cfg: &GraphTrainConfig,
    epoch: usize,
) -> Result<f64> {
    if graph.edge_count() == 0 {
        return Err(Error::Argument("cannot train on a graph without edges".into()));
    }
    let n = graph.node_count();
    if n < 3 {
        return Err(Error::Argument(format!(
            "corrupting edges needs at least 3 nodes, graph has {n}"
        )));
    }
    if table.rows() != n {
        return Err(Error::Argument(format!(
            "table has {} rows but graph has {n} nodes",
            table.rows()
        )));
    }
    let mut rng = seed::rng_for(cfg.seed, &format!("graph_epoch_{epoch}"));
    let mut order: Vec<usize> = (0..graph.edge_count()).collect();
    order.shuffle(&mut rng);
    let mut total = 0.0;
    let mut negs = vec![0usize; cfg.negatives_per_edge];
    for &e in &order {
        let (s, d) = graph.edges()[e];
        for slot in negs.iter_mut() {
            *slot = sample_corrupt(&mut rng, n, s, d);
        }
        total += sgd_edge_step(table, s, d, &negs, cfg.margin, cfg.learning_rate);
    }
    Ok(total / (graph.edge_count() * cfg.negatives_per_edge) as f64)
}

/// Initialises a table and trains it for `cfg.epochs` epochs. Returns the
/// table and the per-epoch mean loss.
pub fn train(graph: &CitationGraph, cfg: &GraphTrainConfig) -> Result<(EmbeddingTable, Vec<f64>)> {
    cfg.validate()?;
    let mut table = EmbeddingTable::init(graph.node_count(), cfg.dim, cfg.measure, cfg.seed)?;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        losses.push(train_epoch(&mut table, graph, cfg, epoch)?);
    }
    Ok((table, losses))
}

/// Raw (unfiltered) link-prediction ranking of held-out edges.
///
/// Each edge `(s, d)` is ranked against `negatives_per_edge` uniform
/// destinations `d' != d` drawn with a per-edge seed. Ties rank the smaller
/// node index first. AUC pools every (positive, corrupted) score pair.
pub fn eval_link_prediction(
    table: &EmbeddingTable,
    holdout: &[(usize, usize)],
    negatives_per_edge: usize,
    seed: u64,
) -> Result<LinkPredMetrics> {
    if holdout.is_empty() {
        return Err(Error::Argument("empty holdout edge list".into()));
    }
    if negatives_per_edge < 1 {
        return Err(Error::Argument("negatives_per_edge must be >= 1".into()));
    }
    let n = table.rows();
    if n < 2 {
        return Err(Error::Argument("link prediction needs at least 2 nodes".into()));
    }
    for &(s, d) in holdout {
        if s >= n || d >= n {
            return Err(Error::Argument(format!("holdout edge ({s},{d}) out of range")));
        }
    }
    let per_edge: Vec<(usize, f64, Vec<f64>)> = holdout
        .par_iter()
        .enumerate()
        .map(|(i, &(s, d))| {
            let mut rng = seed::rng_for(seed, &format!("link_eval_{i}"));
            let pos = table.measure().score(table.row(s), table.row(d));
            let mut rank = 1;
            let negs: Vec<f64> = (0..negatives_per_edge)
                .map(|_| {
                    let mut x = rng.random_range(0..n - 1);
                    if x >= d {
                        x += 1;
                    }
                    let sc = table.measure().score(table.row(s), table.row(x));
                    if sc > pos || (sc == pos && x < d) {
                        rank += 1;
                    }
                    sc
                })
                .collect();
            (rank, pos, negs)
        })
        .collect();

    let m = per_edge.len() as f64;
    let mrr = per_edge.iter().map(|(r, _, _)| 1.0 / *r as f64).sum::<f64>() / m;
    let hits = |k: usize| per_edge.iter().filter(|(r, _, _)| *r <= k).count() as f64 / m;
    let pos: Vec<f64> = per_edge.iter().map(|(_, p, _)| *p).collect();
    let neg: Vec<f64> = per_edge.iter().flat_map(|(_, _, ns)| ns.iter().copied()).collect();
    Ok(LinkPredMetrics {
        mrr,
        hits_at_1: hits(1),
        hits_at_10: hits(10),
        auc: pooled_auc(&pos, &neg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: Vec<(usize, usize)>) -> CitationGraph {
        CitationGraph::from_parts((0..n).map(|i| format!("n{i}")).collect(), edges, true).unwrap()
    }

    #[test]
    fn satisfied_margin_has_zero_loss_and_no_update() {
        let mut t =
            EmbeddingTable::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]], Measure::Dot).unwrap();
        let before = t.clone();
        let g = graph(3, vec![(0, 1)]);
        let cfg = GraphTrainConfig {
            negatives_per_edge: 1,
            ..Default::default()
        };
        let loss = train_epoch(&mut t, &g, &cfg, 0).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(t, before);
    }

    #[test]
    fn single_edge_hinge_and_sgd_step_by_hand() {
        // e0=(1,0), e1=(0.5,0.5), e2=(0.2,1.0); s+ = 0.5, s- = 0.2
        let rows = [vec![1.0, 0.0], vec![0.5, 0.5], vec![0.2, 1.0]];
        let mut t = EmbeddingTable::from_rows(&rows, Measure::Dot).unwrap();
        let g = graph(3, vec![(0, 1)]);
        let cfg = GraphTrainConfig {
            negatives_per_edge: 1,
            learning_rate: 0.1,
            margin: 0.5,
            ..Default::default()
        };
        // With 3 nodes the only admissible corruption of 0->1 is node 2.
        let loss = train_epoch(&mut t, &g, &cfg, 0).unwrap();
        assert!((loss - (0.5 - 0.5 + 0.2)).abs() < 1e-7);
        // grad src = e2 - e1 = (-0.3, 0.5); grad dst = -e0; grad neg = e0
        let expect = [[1.03, -0.05], [0.6, 0.5], [0.1, 1.0]];
        for (i, row) in expect.iter().enumerate() {
            for (a, b) in t.row(i).iter().zip(row) {
                assert!((*a as f64 - b).abs() < 1e-6, "row {i}: {:?}", t.row(i));
            }
        }
    }

    #[test]
    fn frozen_epochs_repeat_exactly() {
        let g = graph(5, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]);
        let cfg = GraphTrainConfig {
            learning_rate: 0.0,
            dim: 4,
            ..Default::default()
        };
        let mut t = EmbeddingTable::init(5, 4, Measure::Dot, 1).unwrap();
        let a = train_epoch(&mut t, &g, &cfg, 3).unwrap();
        let b = train_epoch(&mut t, &g, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert!(a >= 0.0);
    }

    #[test]
    fn empty_graph_rejected() {
        let g = graph(3, vec![]);
        let mut t = EmbeddingTable::init(3, 2, Measure::Dot, 1).unwrap();
        assert!(matches!(
            train_epoch(&mut t, &g, &GraphTrainConfig::default(), 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(GraphTrainConfig::default().validate().is_ok());
        let bad = GraphTrainConfig {
            margin: 0.0,
            epochs: 0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn perfect_model_metrics() {
        // node 1 outscores every other destination, node 0 included
        let t = EmbeddingTable::from_rows(
            &[vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]],
            Measure::Dot,
        )
        .unwrap();
        let m = eval_link_prediction(&t, &[(0, 1)], 5, 3).unwrap();
        assert_eq!(m.mrr, 1.0);
        assert_eq!(m.hits_at_1, 1.0);
        assert_eq!(m.auc, 1.0);
    }

    #[test]
    fn tie_convention() {
        // all scores zero: the positive ties with its single negative
        let t = EmbeddingTable::from_rows(&[vec![0.0], vec![0.0], vec![0.0]], Measure::Dot).unwrap();
        let m = eval_link_prediction(&t, &[(0, 2)], 1, 0).unwrap();
        assert_eq!(m.auc, 0.5);
        // any negative here has index < 2, so it wins the tie
        assert_eq!(m.mrr, 0.5);
        let m = eval_link_prediction(&t, &[(2, 0)], 1, 0).unwrap();
        assert_eq!(m.mrr, 1.0);
    }

    #[test]
    fn eval_is_deterministic_and_checks_input() {
        let t = EmbeddingTable::init(20, 4, Measure::Dot, 2).unwrap();
        let holdout = vec![(0, 1), (3, 4), (5, 19)];
        let a = eval_link_prediction(&t, &holdout, 7, 9).unwrap();
        let b = eval_link_prediction(&t, &holdout, 7, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.hits_at_1 <= a.hits_at_10);
        assert!(eval_link_prediction(&t, &[], 7, 9).is_err());
        assert!(eval_link_prediction(&t, &holdout, 0, 9).is_err());
    }

    fn numeric_grad(measure: Measure, margin: f64, rows: &[Vec<f64>], which: usize, k: usize) -> f64 {
        let eps = 1e-6;
        let eval = |delta: f64| {
            let mut r = rows.to_vec();
            r[which][k] += delta;
            let negs: Vec<&[f64]> = r[2..].iter().map(Vec::as_slice).collect();
            edge_loss_grad(measure, margin, &r[0], &r[1], &negs).loss
        };
        (eval(eps) - eval(-eps)) / (2.0 * eps)
    }

    #[test]
    fn hinge_gradients_match_finite_differences() {
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = seed::rng(42);
        let mut checked = 0;
        for trial in 0..200 {
            let measure = if trial % 2 == 0 { Measure::Dot } else { Measure::Cosine };
            let dim = 1 + trial % 4;
            let nodes = 3 + trial % 3;
            let rows: Vec<Vec<f64>> = (0..nodes)
                .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
                .collect();
            let margin = 0.5;
            let negs: Vec<&[f64]> = rows[2..].iter().map(Vec::as_slice).collect();
            let pos = score64(measure, &rows[0], &rows[1]);
            let away_from_kink = negs
                .iter()
                .all(|n| (margin - pos + score64(measure, &rows[0], n)).abs() > 1e-3);
            if !away_from_kink {
                continue;
            }
            let g = edge_loss_grad(measure, margin, &rows[0], &rows[1], &negs);
            for which in 0..nodes {
                let analytic = match which {
                    0 => &g.src,
                    1 => &g.dst,
                    j => &g.negs[j - 2],
                };
                for (k, &a) in analytic.iter().enumerate() {
                    let num = numeric_grad(measure, margin, &rows, which, k);
                    let err = (a - num).abs() / a.abs().max(num.abs()).max(1e-3);
                    assert!(err < 1e-4, "trial {trial} row {which} k {k}: {a} vs {num}");
                }
            }
            checked += 1;
        }
        assert!(checked > 100);
    }
}
