//! Contrastive triple mining from citation-embedding neighborhoods.
//!
//! For each query paper the exact neighbor list `N = [n1, n2, ...]` is fetched
//! once at the deepest rank any strategy needs. Positives come from the rank
//! band `(k_pos - c_pos, k_pos]` (or a cosine threshold), hard negatives from
//! `(k_hard - c_hard, k_hard]` (or below a threshold) and easy negatives from
//! random draws. When both bands come from kNN, `k_hard - c_hard >= k_pos`
//! keeps an unsampled gap of ranks between them, so positives and hard
//! negatives never collide.
//!
//! The `c_hard + c_easy` negatives are shuffled with a per-query seed and
//! zipped with the `c_pos` positives.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ann_index::{range_by_rank, FlatIndex, NeighborList};
use crate::corpus_graph::PaperId;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborStrategy {
    Knn,
    Sim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EasyStrategy {
    Random,
    FilteredRandom,
    SortedRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortDirection {
    Closest,
    Furthest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub k_pos: usize,
    pub k_hard: usize,
    pub c_pos: usize,
    pub c_hard: usize,
    pub c_easy: usize,
    pub t_pos: f64,
    pub t_neg: f64,
    pub pos_strategy: NeighborStrategy,
    pub hard_strategy: NeighborStrategy,
    pub easy_strategy: EasyStrategy,
    /// Neighbor depth excluded by filtered-random sampling; defaults to
    /// `max(k_pos, k_hard)`.
    pub k_filter: Option<usize>,
    /// Candidate pool drawn by sorted-random sampling.
    pub sorted_candidates: usize,
    pub sorted_direction: SortDirection,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            k_pos: 25,
            k_hard: 4000,
            c_pos: 5,
            c_hard: 2,
            c_easy: 3,
            t_pos: 0.9,
            t_neg: 0.5,
            pos_strategy: NeighborStrategy::Knn,
            hard_strategy: NeighborStrategy::Knn,
            easy_strategy: EasyStrategy::Random,
            k_filter: None,
            sorted_candidates: 100,
            sorted_direction: SortDirection::Furthest,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.k_pos < self.c_pos {
            problems.push(format!("k_pos ({}) < c_pos ({})", self.k_pos, self.c_pos));
        }
        if self.k_hard < self.c_hard {
            problems.push(format!("k_hard ({}) < c_hard ({})", self.k_hard, self.c_hard));
        }
        let both_knn = self.pos_strategy == NeighborStrategy::Knn && self.hard_strategy == NeighborStrategy::Knn;
        if both_knn && self.c_hard > 0 && self.k_hard < self.c_hard + self.k_pos {
            problems.push(format!(
                "sampling margin violated: k_hard - c_hard = {} < k_pos = {}",
                self.k_hard as i64 - self.c_hard as i64,
                self.k_pos
            ));
        }
        if self.c_hard + self.c_easy != self.c_pos {
            problems.push(format!(
                "c_hard + c_easy ({}) must equal c_pos ({}) to pair every positive",
                self.c_hard + self.c_easy,
                self.c_pos
            ));
        }
        for (name, t) in [("t_pos", self.t_pos), ("t_neg", self.t_neg)] {
            if !(-1.0..=1.0).contains(&t) {
                problems.push(format!("{name} {t} outside [-1, 1]"));
            }
        }
        let both_sim = self.pos_strategy == NeighborStrategy::Sim && self.hard_strategy == NeighborStrategy::Sim;
        if both_sim && self.t_neg > self.t_pos {
            problems.push(format!("t_neg ({}) > t_pos ({})", self.t_neg, self.t_pos));
        }
        if self.easy_strategy == EasyStrategy::SortedRandom && self.sorted_candidates < self.c_easy {
            problems.push(format!(
                "sorted_candidates ({}) < c_easy ({})",
                self.sorted_candidates, self.c_easy
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("sampling: {}", problems.join("; "))))
        }
    }

    pub fn filter_depth(&self) -> usize {
        self.k_filter.unwrap_or(self.k_pos.max(self.k_hard))
    }

    /// Depth of the single neighbor lookup per query.
    pub fn neighbor_depth(&self) -> usize {
        let mut depth = 0;
        if self.pos_strategy == NeighborStrategy::Knn {
            depth = depth.max(self.k_pos);
        }
        if self.hard_strategy == NeighborStrategy::Knn && self.c_hard > 0 {
            depth = depth.max(self.k_hard);
        }
        if self.easy_strategy == EasyStrategy::FilteredRandom && self.c_easy > 0 {
            depth = depth.max(self.filter_depth());
        }
        depth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    Hard,
    Easy,
}

/// Which sampler produced a triple's negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Knn,
    Sim,
    Random,
    FilteredRandom,
    SortedRandom,
    Oracle,
}

impl NegativeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NegativeKind::Hard => "hard",
            NegativeKind::Easy => "easy",
        }
    }
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Knn => "knn",
            Provenance::Sim => "sim",
            Provenance::Random => "random",
            Provenance::FilteredRandom => "filtered_random",
            Provenance::SortedRandom => "sorted_random",
            Provenance::Oracle => "oracle",
        }
    }
}

impl fmt::Display for NegativeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NegativeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hard" => Ok(NegativeKind::Hard),
            "easy" => Ok(NegativeKind::Easy),
            other => Err(format!("unknown negative kind {other:?}")),
        }
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [
            Provenance::Knn,
            Provenance::Sim,
            Provenance::Random,
            Provenance::FilteredRandom,
            Provenance::SortedRandom,
            Provenance::Oracle,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

impl From<NeighborStrategy> for Provenance {
    fn from(s: NeighborStrategy) -> Self {
        match s {
            NeighborStrategy::Knn => Provenance::Knn,
            NeighborStrategy::Sim => Provenance::Sim,
        }
    }
}

impl From<EasyStrategy> for Provenance {
    fn from(s: EasyStrategy) -> Self {
        match s {
            EasyStrategy::Random => Provenance::Random,
            EasyStrategy::FilteredRandom => Provenance::FilteredRandom,
            EasyStrategy::SortedRandom => Provenance::SortedRandom,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub query: PaperId,
    pub positive: PaperId,
    pub negative: PaperId,
    pub negative_kind: NegativeKind,
    pub strategy: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripleSet {
    pub triples: Vec<Triple>,
    pub config: SamplingConfig,
}

pub const TSV_HEADER: &str = "query_id\tpositive_id\tnegative_id\tnegative_kind\tstrategy";

impl TripleSet {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TSV_HEADER}")?;
        for t in &self.triples {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                t.query.external_id, t.positive.external_id, t.negative.external_id, t.negative_kind, t.strategy
            )?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_tsv(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a triple TSV, resolving external ids to row indices through `ids`.
pub fn read_triples(path: &Path, ids: &HashMap<String, usize>) -> Result<Vec<Triple>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut triples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 {
            if line != TSV_HEADER {
                return Err(parse_err(1, "missing triple header".into()));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(parse_err(i + 1, format!("expected 5 columns, got {}", fields.len())));
        }
        let resolve = |id: &str| -> Result<PaperId> {
            let index = ids
                .get(id)
                .copied()
                .ok_or_else(|| Error::Data(format!("triple references unknown paper {id}")))?;
            Ok(PaperId {
                external_id: id.to_string(),
                index,
            })
        };
        triples.push(Triple {
            query: resolve(fields[0])?,
            positive: resolve(fields[1])?,
            negative: resolve(fields[2])?,
            negative_kind: fields[3].parse().map_err(|m| parse_err(i + 1, m))?,
            strategy: fields[4].parse().map_err(|m| parse_err(i + 1, m))?,
        });
    }
    Ok(triples)
}

/// Why a sampler could not serve a query.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SampleError {
    #[error("need {needed} candidates, only {available} available")]
    Insufficient { needed: usize, available: usize },
    #[error("no candidate passes the similarity threshold")]
    NoQualifying,
    #[error("positive and hard negative collide on node {0}")]
    Collision(usize),
}

type SampleResult<T> = std::result::Result<T, SampleError>;

fn band(n: &NeighborList, k: usize, c: usize) -> SampleResult<Vec<usize>> {
    if c == 0 {
        return Ok(Vec::new());
    }
    range_by_rank(n, k, c).map_err(|_| SampleError::Insufficient {
        needed: k,
        available: n.len(),
    })
}

pub fn sample_positives_knn(n: &NeighborList, cfg: &SamplingConfig) -> SampleResult<Vec<usize>> {
    band(n, cfg.k_pos, cfg.c_pos)
}

pub fn sample_hard_negatives_knn(n: &NeighborList, cfg: &SamplingConfig) -> SampleResult<Vec<usize>> {
    band(n, cfg.k_hard, cfg.c_hard)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    /// Keep scores strictly above the threshold.
    Above,
    /// Keep scores strictly below the threshold.
    Below,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSample {
    pub nodes: Vec<usize>,
    /// Fewer than the requested number of candidates qualified.
    pub partial: bool,
}

/// Threshold sampling over precomputed cosine scores (query self-match
/// already removed). Returns the `c` highest-scoring qualifying candidates,
/// ordered by score descending then index ascending.
pub fn sample_by_similarity(scores: &[(usize, f64)], c: usize, t: f64, mode: ThresholdMode) -> SampleResult<SimSample> {
    let mut qualifying: Vec<(usize, f64)> = scores
        .iter()
        .copied()
        .filter(|&(_, s)| match mode {
            ThresholdMode::Above => s > t,
            ThresholdMode::Below => s < t,
        })
        .collect();
    if qualifying.is_empty() {
        return Err(SampleError::NoQualifying);
    }
    qualifying.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let partial = qualifying.len() < c;
    qualifying.truncate(c);
    Ok(SimSample {
        nodes: qualifying.into_iter().map(|(n, _)| n).collect(),
        partial,
    })
}

/// Uniform draw without replacement from `corpus` minus `exclude`.
pub fn sample_random(corpus: &[usize], c: usize, exclude: &HashSet<usize>, rng: &mut Rng) -> SampleResult<Vec<usize>> {
    let pool: Vec<usize> = corpus.iter().copied().filter(|x| !exclude.contains(x)).collect();
    if pool.len() < c {
        return Err(SampleError::Insufficient {
            needed: c,
            available: pool.len(),
        });
    }
    Ok(index::sample(rng, pool.len(), c).into_iter().map(|i| pool[i]).collect())
}

/// Random draw that also skips the query's first `k_filter` neighbors.
pub fn sample_filtered_random(
    corpus: &[usize],
    c: usize,
    n: &NeighborList,
    k_filter: usize,
    exclude: &HashSet<usize>,
    rng: &mut Rng,
) -> SampleResult<Vec<usize>> {
    let mut blocked = exclude.clone();
    blocked.insert(n.query);
    blocked.extend(n.nodes().take(k_filter));
    sample_random(corpus, c, &blocked, rng)
}

/// Draws `n_candidates` at random, then keeps the `c` closest or furthest by
/// the table's measure (ties to the smaller index).
#[allow(clippy::too_many_arguments)]
pub fn sample_sorted_random(
    table: &EmbeddingTable,
    query: usize,
    corpus: &[usize],
    n_candidates: usize,
    c: usize,
    direction: SortDirection,
    exclude: &HashSet<usize>,
    rng: &mut Rng,
) -> SampleResult<Vec<usize>> {
    if n_candidates < c {
        return Err(SampleError::Insufficient {
            needed: c,
            available: n_candidates,
        });
    }
    let mut blocked = exclude.clone();
    blocked.insert(query);
    let drawn = sample_random(corpus, n_candidates, &blocked, rng)?;
    let q = table.row(query);
    let mut scored: Vec<(usize, f64)> = drawn
        .into_iter()
        .map(|x| (x, table.measure().score(q, table.row(x)) + 0.0))
        .collect();
    match direction {
        SortDirection::Closest => scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))),
        SortDirection::Furthest => scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))),
    }
    Ok(scored.into_iter().take(c).map(|(x, _)| x).collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MiningReport {
    pub queries: usize,
    pub mined: usize,
    pub triples: usize,
    /// Queries whose similarity sampler returned fewer than requested.
    pub partial: Vec<String>,
    /// `(query, reason)` for every skipped query.
    pub skipped: Vec<(String, String)>,
}

enum Outcome {
    Mined { triples: Vec<Triple>, partial: bool },
    Skipped(String),
}

struct MiningContext<'a> {
    index: FlatIndex<'a>,
    table: &'a EmbeddingTable,
    ids: &'a [String],
    corpus: &'a [usize],
    cfg: &'a SamplingConfig,
}

impl MiningContext<'_> {
    fn paper(&self, i: usize) -> PaperId {
        PaperId {
            external_id: self.ids[i].clone(),
            index: i,
        }
    }

    fn cosine_scores(&self, query: usize) -> Vec<(usize, f64)> {
        self.corpus
            .iter()
            .filter(|&&x| x != query)
            .map(|&x| (x, self.table.cosine(query, x)))
            .collect()
    }

    fn mine_query(&self, query: usize) -> SampleResult<(Vec<Triple>, bool)> {
        let cfg = self.cfg;
        let mut rng = seed::rng_for(cfg.seed, &format!("query:{}", self.ids[query]));
        let depth = cfg.neighbor_depth();
        let neighbors = if depth > 0 {
            self.index
                .top_k(query, depth, &HashSet::new())
                .expect("query and depth validated")
        } else {
            NeighborList {
                query,
                entries: Vec::new(),
            }
        };
        let sim_scores = if cfg.pos_strategy == NeighborStrategy::Sim || cfg.hard_strategy == NeighborStrategy::Sim {
            self.cosine_scores(query)
        } else {
            Vec::new()
        };
        let mut partial = false;

        let positives = match cfg.pos_strategy {
            NeighborStrategy::Knn => sample_positives_knn(&neighbors, cfg)?,
            NeighborStrategy::Sim => {
                let s = sample_by_similarity(&sim_scores, cfg.c_pos, cfg.t_pos, ThresholdMode::Above)?;
                partial |= s.partial;
                s.nodes
            }
        };
        let hard = match cfg.hard_strategy {
            _ if cfg.c_hard == 0 => Vec::new(),
            NeighborStrategy::Knn => sample_hard_negatives_knn(&neighbors, cfg)?,
            NeighborStrategy::Sim => {
                let s = sample_by_similarity(&sim_scores, cfg.c_hard, cfg.t_neg, ThresholdMode::Below)?;
                partial |= s.partial;
                s.nodes
            }
        };
        if let Some(&clash) = hard.iter().find(|h| positives.contains(h)) {
            return Err(SampleError::Collision(clash));
        }

        let mut taken: HashSet<usize> = positives.iter().chain(&hard).copied().collect();
        taken.insert(query);
        let easy = match cfg.easy_strategy {
            _ if cfg.c_easy == 0 => Vec::new(),
            EasyStrategy::Random => sample_random(self.corpus, cfg.c_easy, &taken, &mut rng)?,
            EasyStrategy::FilteredRandom => sample_filtered_random(
                self.corpus,
                cfg.c_easy,
                &neighbors,
                cfg.filter_depth(),
                &taken,
                &mut rng,
            )?,
            EasyStrategy::SortedRandom => sample_sorted_random(
                self.table,
                query,
                self.corpus,
                cfg.sorted_candidates,
                cfg.c_easy,
                cfg.sorted_direction,
                &taken,
                &mut rng,
            )?,
        };

        let mut negatives: Vec<(usize, NegativeKind, Provenance)> = hard
            .into_iter()
            .map(|h| (h, NegativeKind::Hard, cfg.hard_strategy.into()))
            .chain(
                easy.into_iter()
                    .map(|e| (e, NegativeKind::Easy, cfg.easy_strategy.into())),
            )
            .collect();
        negatives.shuffle(&mut rng);

        let q = self.paper(query);
        let triples = positives
            .iter()
            .zip(negatives)
            .map(|(&p, (n, kind, strategy))| Triple {
                query: q.clone(),
                positive: self.paper(p),
                negative: self.paper(n),
                negative_kind: kind,
                strategy,
            })
            .collect();
        Ok((triples, partial))
    }
}

/// Mines triples for every query. `ids[i]` is the external id of table row
/// `i`; `corpus` lists the rows positives and negatives may come from.
/// Output order follows `queries` regardless of scheduling.
pub fn mine_triples(
    queries: &[usize],
    table: &EmbeddingTable,
    ids: &[String],
    corpus: &[usize],
    cfg: &SamplingConfig,
) -> Result<(TripleSet, MiningReport)> {
    cfg.validate()?;
    if ids.len() != table.rows() {
        return Err(Error::Argument(format!(
            "{} ids for a table with {} rows",
            ids.len(),
            table.rows()
        )));
    }
    if let Some(&q) = queries.iter().find(|&&q| q >= table.rows()) {
        return Err(Error::Argument(format!("query row {q} not in table")));
    }
    let ctx = MiningContext {
        index: FlatIndex::with_candidates(table, corpus.to_vec())?,
        table,
        ids,
        corpus,
        cfg,
    };
    let outcomes: Vec<Outcome> = queries
        .par_iter()
        .map(|&q| match ctx.mine_query(q) {
            Ok((triples, partial)) => Outcome::Mined { triples, partial },
            Err(e) => Outcome::Skipped(e.to_string()),
        })
        .collect();

    let mut report = MiningReport {
        queries: queries.len(),
        ..Default::default()
    };
    let mut triples = Vec::new();
    for (&q, outcome) in queries.iter().zip(outcomes) {
        match outcome {
            Outcome::Mined { triples: t, partial } => {
                report.mined += 1;
                if partial {
                    report.partial.push(ids[q].clone());
                }
                triples.extend(t);
            }
            Outcome::Skipped(reason) => report.skipped.push((ids[q].clone(), reason)),
        }
    }
    report.triples = triples.len();
    Ok((
        TripleSet {
            triples,
            config: cfg.clone(),
        },
        report,
    ))
}

/// Triples from class labels: same-label papers are positives, other-label
/// papers negatives. Each label contributes at most `per_label_cap` triples.
pub fn oracle_triples(
    labels: &[(PaperId, String)],
    per_label_cap: usize,
    cfg: &SamplingConfig,
) -> Result<(TripleSet, MiningReport)> {
    let mut members: BTreeMap<&str, Vec<&PaperId>> = BTreeMap::new();
    for (p, l) in labels {
        members.entry(l.as_str()).or_default().push(p);
    }
    if members.len() < 2 {
        return Err(Error::Argument("oracle triples need at least two labels".into()));
    }
    let n_neg = cfg.c_hard + cfg.c_easy;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut seed::rng_for(cfg.seed, "oracle_order"));

    let mut produced: HashMap<&str, usize> = HashMap::new();
    let mut report = MiningReport {
        queries: labels.len(),
        ..Default::default()
    };
    let mut triples = Vec::new();
    for i in order {
        let (query, label) = (&labels[i].0, labels[i].1.as_str());
        let count = produced.entry(label).or_default();
        let room = per_label_cap.saturating_sub(*count);
        if room == 0 {
            report
                .skipped
                .push((query.external_id.clone(), "label cap reached".into()));
            continue;
        }
        let mut rng = seed::rng_for(cfg.seed, &format!("oracle:{}", query.external_id));
        let same: Vec<&PaperId> = members[label].iter().copied().filter(|p| *p != query).collect();
        let other: Vec<&PaperId> = labels.iter().filter(|(_, l)| l != label).map(|(p, _)| p).collect();
        if same.len() < cfg.c_pos || other.len() < n_neg {
            report
                .skipped
                .push((query.external_id.clone(), "not enough labelled papers".into()));
            continue;
        }
        let positives = index::sample(&mut rng, same.len(), cfg.c_pos);
        let negatives = index::sample(&mut rng, other.len(), n_neg);
        let take = cfg.c_pos.min(room);
        let before = triples.len();
        triples.extend(positives.into_iter().zip(negatives).take(take).map(|(p, n)| Triple {
            query: query.clone(),
            positive: same[p].clone(),
            negative: other[n].clone(),
            negative_kind: NegativeKind::Easy,
            strategy: Provenance::Oracle,
        }));
        *count += triples.len() - before;
        report.mined += 1;
    }
    report.triples = triples.len();
    Ok((
        TripleSet {
            triples,
            config: cfg.clone(),
        },
        report,
    ))
}

fn keep_count(fraction: f64, total: usize) -> usize {
    ((fraction * total as f64) + 1e-9).floor() as usize
}

/// Seeded subsample keeping input order. `by_query` keeps or drops whole
/// queries; otherwise individual triples. Counts are floored.
pub fn subsample_triples(ts: &TripleSet, fraction: f64, by_query: bool, seed: u64) -> Result<TripleSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Argument(format!("subsample fraction {fraction} outside (0, 1]")));
    }
    let mut rng = seed::rng_for(seed, "subsample");
    let triples = if by_query {
        let mut queries: Vec<&str> = Vec::new();
        let mut seen = HashSet::new();
        for t in &ts.triples {
            if seen.insert(t.query.external_id.as_str()) {
                queries.push(&t.query.external_id);
            }
        }
        let keep: HashSet<&str> = index::sample(&mut rng, queries.len(), keep_count(fraction, queries.len()))
            .into_iter()
            .map(|i| queries[i])
            .collect();
        ts.triples
            .iter()
            .filter(|t| keep.contains(t.query.external_id.as_str()))
            .cloned()
            .collect()
    } else {
        let mut keep = index::sample(&mut rng, ts.len(), keep_count(fraction, ts.len())).into_vec();
        keep.sort_unstable();
        keep.into_iter().map(|i| ts.triples[i].clone()).collect()
    };
    Ok(TripleSet {
        triples,
        config: ts.config.clone(),
    })
}
