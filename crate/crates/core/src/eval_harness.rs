//! Embedding evaluation: L2 ranking metrics (MAP, nDCG, P@1), pooled AUC,
//! a logistic-regression linear probe scored by macro-F1, and the
//! train/eval overlap report used for leakage audits.
//!
//! Relevance is binary and DCG uses the `1 / log2(i + 1)` discount over the
//! full candidate list. Queries without any relevant candidate are excluded
//! from MAP and nDCG and counted in [`MetricValue::excluded`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingQuery {
    pub query: String,
    pub candidates: Vec<String>,
    pub relevant: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RankingTask {
    pub queries: Vec<RankingQuery>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub id: String,
    pub label: String,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabeledSet {
    pub items: Vec<LabeledItem>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

impl RankingTask {
    pub fn read(path: &Path) -> Result<Self> {
        let task = RankingTask {
            queries: read_jsonl(path)?,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        for q in &self.queries {
            if q.candidates.is_empty() {
                return Err(Error::Data(format!("query {} has no candidates", q.query)));
            }
            let cands: HashSet<&String> = q.candidates.iter().collect();
            if let Some(r) = q.relevant.iter().find(|r| !cands.contains(r)) {
                return Err(Error::Data(format!(
                    "query {}: relevant {r} is not a candidate",
                    q.query
                )));
            }
        }
        Ok(())
    }
}

impl LabeledSet {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(LabeledSet {
            items: read_jsonl(path)?,
        })
    }
}

/// Candidates of one query sorted by ascending L2 distance to the query.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedQuery {
    pub query: String,
    pub ranked: Vec<String>,
    pub relevance: Vec<bool>,
}

fn l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Ranks every query's candidates by L2 distance; ties go to the smaller row index.
pub fn rank_by_l2(
    vectors: &EmbeddingTable,
    ids: &HashMap<String, usize>,
    task: &RankingTask,
) -> Result<Vec<RankedQuery>> {
    let lookup = |id: &str| {
        ids.get(id)
            .copied()
            .filter(|&r| r < vectors.rows())
            .ok_or_else(|| Error::Data(format!("no vector for paper {id}")))
    };
    task.queries
        .iter()
        .map(|q| {
            let qv = vectors.row(lookup(&q.query)?);
            let mut scored = q
                .candidates
                .iter()
                .map(|c| {
                    let row = lookup(c)?;
                    Ok((l2(qv, vectors.row(row)), row, c))
                })
                .collect::<Result<Vec<_>>>()?;
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let relevant: HashSet<&String> = q.relevant.iter().collect();
            Ok(RankedQuery {
                query: q.query.clone(),
                relevance: scored.iter().map(|(_, _, c)| relevant.contains(c)).collect(),
                ranked: scored.into_iter().map(|(_, _, c)| c.clone()).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub evaluated: usize,
    /// Queries skipped because they have no relevant candidate.
    pub excluded: usize,
}

fn average_over<F>(relevance: &[Vec<bool>], per_query: F) -> Result<MetricValue>
where
    F: Fn(&[bool]) -> f64,
{
    let mut sum = 0.0;
    let mut evaluated = 0;
    for rel in relevance {
        if rel.iter().any(|&r| r) {
            sum += per_query(rel);
            evaluated += 1;
        }
    }
    if evaluated == 0 {
        return Err(Error::Data("no query has a relevant candidate".into()));
    }
    Ok(MetricValue {
        value: sum / evaluated as f64,
        evaluated,
        excluded: relevance.len() - evaluated,
    })
}

pub fn average_precision(rel: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in rel.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

pub fn ndcg_single(rel: &[bool]) -> f64 {
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = rel
        .iter()
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(i, _)| discount(i))
        .sum();
    let n_rel = rel.iter().filter(|&&r| r).count();
    let idcg: f64 = (0..n_rel).map(discount).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Relevance flags of every query, in ranked order.
pub fn relevance_lists(ranked: &[RankedQuery]) -> Vec<Vec<bool>> {
    ranked.iter().map(|q| q.relevance.clone()).collect()
}

pub fn mean_average_precision(relevance: &[Vec<bool>]) -> Result<MetricValue> {
    average_over(relevance, average_precision)
}

pub fn ndcg(relevance: &[Vec<bool>]) -> Result<MetricValue> {
    average_over(relevance, ndcg_single)
}

pub fn precision_at_1(relevance: &[Vec<bool>]) -> Result<f64> {
    if relevance.is_empty() || relevance.iter().any(Vec::is_empty) {
        return Err(Error::Argument("precision@1 needs nonempty rankings".into()));
    }
    let hits = relevance.iter().filter(|r| r[0]).count();
    Ok(hits as f64 / relevance.len() as f64)
}

/// Fraction of (positive, negative) pairs where the positive scores higher,
/// counting ties as one half.
pub fn pooled_auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Argument("AUC needs positive and negative scores".into()));
    }
    let mut sorted_neg = neg.to_vec();
    sorted_neg.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &p in pos {
        let below = sorted_neg.partition_point(|&n| n < p);
        let not_above = sorted_neg.partition_point(|&n| n <= p);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(wins / (pos.len() as f64 * neg.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 300,
            learning_rate: 0.5,
            l2: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub macro_f1: f64,
    pub classes: Vec<String>,
    pub predictions: Vec<String>,
}

/// Macro-averaged F1 over `classes`; a class whose F1 denominator is zero scores 0.
pub fn macro_f1(truth: &[&str], predicted: &[&str], classes: &[String]) -> f64 {
    if classes.is_empty() {
        return 0.0;
    }
    let total: f64 = classes
        .iter()
        .map(|c| {
            let c = c.as_str();
            let tp = truth
                .iter()
                .zip(predicted)
                .filter(|(t, p)| **t == c && **p == c)
                .count();
            let fp = truth
                .iter()
                .zip(predicted)
                .filter(|(t, p)| **t != c && **p == c)
                .count();
            let fn_ = truth
                .iter()
                .zip(predicted)
                .filter(|(t, p)| **t == c && **p != c)
                .count();
            let denom = 2 * tp + fp + fn_;
            if denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        })
        .sum();
    total / classes.len() as f64
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Fits multinomial logistic regression on the frozen train vectors by
/// full-batch gradient descent and scores test predictions by macro-F1.
/// Features are standardised with train statistics.
pub fn linear_probe_f1(
    vectors: &EmbeddingTable,
    ids: &HashMap<String, usize>,
    data: &LabeledSet,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let fetch = |id: &str| -> Result<Vec<f64>> {
        let row = ids
            .get(id)
            .copied()
            .filter(|&r| r < vectors.rows())
            .ok_or_else(|| Error::Data(format!("no vector for paper {id}")))?;
        Ok(vectors.row(row).iter().map(|&v| v as f64).collect())
    };
    let train: Vec<&LabeledItem> = data.items.iter().filter(|i| i.split == Split::Train).collect();
    let test: Vec<&LabeledItem> = data.items.iter().filter(|i| i.split == Split::Test).collect();
    let classes: Vec<String> = train
        .iter()
        .map(|i| i.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.len() < 2 {
        return Err(Error::Argument("linear probe needs at least two train labels".into()));
    }
    if test.is_empty() {
        return Err(Error::Argument("linear probe needs a nonempty test split".into()));
    }
    let class_of: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    if let Some(t) = test.iter().find(|t| !class_of.contains_key(t.label.as_str())) {
        return Err(Error::Data(format!("test label {} never appears in train", t.label)));
    }

    let x_train = train.iter().map(|i| fetch(&i.id)).collect::<Result<Vec<_>>>()?;
    let y_train: Vec<usize> = train.iter().map(|i| class_of[i.label.as_str()]).collect();
    let x_test = test.iter().map(|i| fetch(&i.id)).collect::<Result<Vec<_>>>()?;

    let dim = vectors.dim();
    let n = x_train.len() as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|j| x_train.iter().map(|x| x[j]).sum::<f64>() / n)
        .collect();
    let std: Vec<f64> = (0..dim)
        .map(|j| {
            let var = x_train.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let standardise = |x: &[f64]| -> Vec<f64> { (0..dim).map(|j| (x[j] - mean[j]) / std[j]).collect() };
    let x_train: Vec<Vec<f64>> = x_train.iter().map(|x| standardise(x)).collect();
    let x_test: Vec<Vec<f64>> = x_test.iter().map(|x| standardise(x)).collect();

    let k = classes.len();
    let normal = Normal::new(0.0, 0.01).expect("valid std");
    let mut rng = seed::rng_for(cfg.seed, "linear_probe");
    let mut weights: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    let mut bias = vec![0.0; k];

    let logits = |w: &[Vec<f64>], b: &[f64], x: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|c| b[c] + w[c].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    };

    for _ in 0..cfg.epochs {
        let mut gw = vec![vec![0.0; dim]; k];
        let mut gb = vec![0.0; k];
        for (x, &y) in x_train.iter().zip(&y_train) {
            let mut p = logits(&weights, &bias, x);
            softmax_in_place(&mut p);
            for c in 0..k {
                let err = p[c] - if c == y { 1.0 } else { 0.0 };
                gb[c] += err;
                for (g, xv) in gw[c].iter_mut().zip(x) {
                    *g += err * xv;
                }
            }
        }
        for c in 0..k {
            bias[c] -= cfg.learning_rate * gb[c] / n;
            for (w, g) in weights[c].iter_mut().zip(&gw[c]) {
                *w -= cfg.learning_rate * (g / n + cfg.l2 * *w);
            }
        }
    }

    let predictions: Vec<String> = x_test
        .iter()
        .map(|x| {
            let z = logits(&weights, &bias, x);
            let best = (0..k).fold(0, |best, c| if z[c] > z[best] { c } else { best });
            classes[best].clone()
        })
        .collect();
    let truth: Vec<&str> = test.iter().map(|t| t.label.as_str()).collect();
    let pred: Vec<&str> = predictions.iter().map(String::as_str).collect();
    Ok(ProbeResult {
        macro_f1: macro_f1(&truth, &pred, &classes),
        classes,
        predictions,
    })
}

/// Mean pairwise L2 distance within and across labels, over every
/// unordered pair of labelled papers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Separation {
    pub intra: f64,
    pub inter: f64,
}

pub fn label_separation(
    vectors: &EmbeddingTable,
    ids: &HashMap<String, usize>,
    labels: &[(String, String)],
) -> Result<Separation> {
    let rows: Vec<(usize, &str)> = labels
        .iter()
        .map(|(id, label)| {
            ids.get(id)
                .copied()
                .filter(|&r| r < vectors.rows())
                .map(|r| (r, label.as_str()))
                .ok_or_else(|| Error::Data(format!("no vector for paper {id}")))
        })
        .collect::<Result<_>>()?;
    let (mut intra, mut inter) = ((0.0, 0usize), (0.0, 0usize));
    for (i, &(a, la)) in rows.iter().enumerate() {
        for &(b, lb) in &rows[i + 1..] {
            let d = l2(vectors.row(a), vectors.row(b));
            let acc = if la == lb { &mut intra } else { &mut inter };
            acc.0 += d;
            acc.1 += 1;
        }
    }
    if intra.1 == 0 || inter.1 == 0 {
        return Err(Error::Data("separation needs two labels and a repeated label".into()));
    }
    Ok(Separation {
        intra: intra.0 / intra.1 as f64,
        inter: inter.0 / inter.1 as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapRow {
    pub split: String,
    pub overlap: usize,
    /// Percentage of the train set, rounded to one decimal.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub train_size: usize,
    pub splits: Vec<OverlapRow>,
    pub combined: OverlapRow,
}

fn percent_of(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        return 0.0;
    }
    (part as f64 * 1000.0 / whole as f64).round() / 10.0
}

pub fn overlap_report(train_ids: &HashSet<String>, eval_ids: &BTreeMap<String, HashSet<String>>) -> OverlapReport {
    let mut combined = HashSet::new();
    let splits = eval_ids
        .iter()
        .map(|(split, ids)| {
            let shared: Vec<&String> = ids.iter().filter(|id| train_ids.contains(*id)).collect();
            combined.extend(shared.iter().cloned());
            OverlapRow {
                split: split.clone(),
                overlap: shared.len(),
                percent: percent_of(shared.len(), train_ids.len()),
            }
        })
        .collect();
    OverlapReport {
        train_size: train_ids.len(),
        splits,
        combined: OverlapRow {
            split: "combined".into(),
            overlap: combined.len(),
            percent: percent_of(combined.len(), train_ids.len()),
        },
    }
}

impl OverlapReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("train papers: {}\n", self.train_size);
        for row in self.splits.iter().chain(std::iter::once(&self.combined)) {
            let _ = writeln!(out, "{:<12} {:>10} ({:.1}%)", row.split, row.overlap, row.percent);
        }
        out
    }
}

/// Flat metric report keyed `task.subtask.metric`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metrics: BTreeMap<String, f64>,
}

impl Report {
    pub fn insert(&mut self, task: &str, subtask: &str, metric: &str, value: f64) {
        self.metrics.insert(format!("{task}.{subtask}.{metric}"), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.metrics).expect("metrics serialise");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let width = self.metrics.keys().map(String::len).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}  value\n", "metric");
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "{k:<width$}  {v:.4}");
        }
        out
    }
}
