//! Stage orchestration driven by a TOML configuration.
//!
//! Stages read and write fixed artifact names inside the work directory.
//! Every artifact gets a `<name>.prov.json` sidecar with the config hash, the
//! global seed and the sha256 of each input, so reruns can be verified
//! byte for byte.
//!
//! Stage seeds are derived from the global `seed`; `seed` keys inside the
//! stage sections are overwritten.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus_graph::{read_documents, CitationGraph, Document};
use crate::embedding::{EmbeddingTable, Measure};
use crate::encoder::{self, EncoderParams, EncoderTrainConfig, Vocab};
use crate::error::{Error, Result};
use crate::eval_harness::{self, LabeledSet, ProbeConfig, RankingTask, Report};
use crate::fixture::{self, PlantedPartition};
use crate::graph_embed::{self, GraphTrainConfig, LinkPredMetrics};
use crate::seed;
use crate::triple_miner::{self, EasyStrategy, SamplingConfig};

pub const GRAPH: &str = "graph.json";
pub const GRAPH_EMBEDDINGS: &str = "graph_embeddings.nbe";
pub const GRAPH_METRICS: &str = "graph_metrics.json";
pub const TRIPLES: &str = "triples.tsv";
pub const MINING_REPORT: &str = "mining_report.json";
pub const ENCODER: &str = "encoder.ckpt";
pub const ENCODER_LOSSES: &str = "encoder_losses.json";
pub const DOC_VECTORS: &str = "doc_vectors.nbe";
pub const DOC_IDS: &str = "doc_vectors.ids";
pub const REPORT: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Tab-separated `citing<TAB>cited` edge list.
    pub edges: PathBuf,
    /// JSON lines with `id`, `title`, `abstract`.
    pub documents: PathBuf,
    #[serde(default = "default_work_dir")]
    pub work_dir: PathBuf,
    /// Ranking task JSON lines (`query`, `candidates`, `relevant`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<PathBuf>,
    /// Labelled papers JSON lines (`id`, `label`, `split`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Paper ids (one per line) removed from the graph at ingest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclude_ids: Option<PathBuf>,
}

fn default_work_dir() -> PathBuf {
    PathBuf::from("work")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Fraction of edges held out of graph training for link prediction.
    pub holdout_fraction: f64,
    /// Corrupted destinations ranked against each held-out edge.
    pub link_negatives: usize,
    pub probe: ProbeConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            holdout_fraction: 0.1,
            link_negatives: 100,
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default)]
    pub graph: GraphTrainConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub encoder: EncoderTrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Copy with every stage seed derived from the global seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.graph.seed = seed::derive(self.seed, "graph");
        c.sampling.seed = seed::derive(self.seed, "sampling");
        c.encoder.seed = seed::derive(self.seed, "encoder");
        c.eval.probe.seed = seed::derive(self.seed, "probe");
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        self.sampling.validate()?;
        self.encoder.validate()?;
        let e = &self.eval;
        if !(0.0..1.0).contains(&e.holdout_fraction) {
            return Err(Error::Config(format!(
                "eval: holdout_fraction {} outside [0, 1)",
                e.holdout_fraction
            )));
        }
        if e.link_negatives == 0 {
            return Err(Error::Config("eval: link_negatives must be >= 1".into()));
        }
        Ok(())
    }

    /// sha256 of the resolved configuration's canonical JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.resolved()).expect("config serialises");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    GraphTrain,
    Mine,
    EncodeTrain,
    Eval,
    All,
}

impl Stage {
    pub const CHAIN: [Stage; 5] = [
        Stage::Ingest,
        Stage::GraphTrain,
        Stage::Mine,
        Stage::EncodeTrain,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::GraphTrain => "graph-train",
            Stage::Mine => "mine",
            Stage::EncodeTrain => "encode-train",
            Stage::Eval => "eval",
            Stage::All => "all",
        }
    }
}

#[derive(Serialize)]
struct ProvenanceRecord<'a> {
    stage: &'a str,
    artifact: &'a str,
    config_sha256: String,
    seed: u64,
    inputs: BTreeMap<String, String>,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMetrics {
    pub epoch_losses: Vec<f64>,
    pub holdout_edges: usize,
    pub link_prediction: Option<LinkPredMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLosses {
    pub epoch_losses: Vec<f64>,
    pub triples: usize,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    base_dir: PathBuf,
    work_dir: PathBuf,
    verbose: bool,
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("value serialises");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

impl Pipeline {
    /// Validates the configuration. `base_dir` anchors relative paths;
    /// `stage_dir` replaces the configured work directory.
    pub fn new(cfg: PipelineConfig, base_dir: &Path, stage_dir: Option<&Path>) -> Result<Self> {
        let cfg = cfg.resolved();
        cfg.validate()?;
        let work_dir = match stage_dir {
            Some(d) => d.to_path_buf(),
            None => base_dir.join(&cfg.paths.work_dir),
        };
        Ok(Pipeline {
            cfg,
            base_dir: base_dir.to_path_buf(),
            work_dir,
            verbose: true,
        })
    }

    /// Suppresses per-stage progress lines on stderr.
    pub fn quiet(mut self) -> Self {
        self.verbose = false;
        self
    }

    fn log(&self, msg: std::fmt::Arguments<'_>) {
        if self.verbose {
            eprintln!("{msg}");
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn work_dir(&self) -> &Path {
        &self.work_dir
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.work_dir.join(name)
    }

    fn input(&self, p: &Path) -> Result<PathBuf> {
        let path = self.base_dir.join(p);
        if path.is_file() {
            Ok(path)
        } else {
            Err(Error::Config(format!("input file {} does not exist", path.display())))
        }
    }

    fn upstream(&self, stage: Stage, name: &str) -> Result<PathBuf> {
        let path = self.artifact(name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(Error::Dependency {
                stage: stage.name().into(),
                path,
            })
        }
    }

    fn raw_inputs(&self, stage: Stage) -> Result<()> {
        let p = &self.cfg.paths;
        let needs_docs = matches!(stage, Stage::Mine | Stage::EncodeTrain | Stage::All);
        if matches!(stage, Stage::Ingest | Stage::All) {
            self.input(&p.edges)?;
            if let Some(x) = &p.exclude_ids {
                self.input(x)?;
            }
        }
        if needs_docs {
            self.input(&p.documents)?;
        }
        if matches!(stage, Stage::Eval | Stage::All) {
            for x in p.ranking.iter().chain(&p.labels) {
                self.input(x)?;
            }
        }
        Ok(())
    }

    fn provenance(&self, stage: Stage, artifact: &Path, inputs: &[&Path]) -> Result<()> {
        let mut hashes = BTreeMap::new();
        for p in inputs {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            hashes.insert(name, file_sha256(p)?);
        }
        let name = artifact.file_name().expect("artifact has a name").to_string_lossy();
        let record = ProvenanceRecord {
            stage: stage.name(),
            artifact: &name,
            config_sha256: self.cfg.hash(),
            seed: self.cfg.seed,
            inputs: hashes,
        };
        write_json(&self.work_dir.join(format!("{name}.prov.json")), &record)
    }

    /// Runs a stage (or the whole chain) and returns the artifacts written.
    pub fn run(&self, stage: Stage) -> Result<Vec<PathBuf>> {
        self.raw_inputs(stage)?;
        fs::create_dir_all(&self.work_dir).map_err(|e| Error::io(&self.work_dir, e))?;
        match stage {
            Stage::All => {
                let mut out = Vec::new();
                for s in Stage::CHAIN {
                    out.extend(self.run(s)?);
                }
                Ok(out)
            }
            Stage::Ingest => self.ingest(),
            Stage::GraphTrain => self.graph_train(),
            Stage::Mine => self.mine(),
            Stage::EncodeTrain => self.encode_train(),
            Stage::Eval => self.eval(),
        }
    }

    fn ingest(&self) -> Result<Vec<PathBuf>> {
        let edges = self.input(&self.cfg.paths.edges)?;
        let (mut graph, stats) = CitationGraph::ingest_edges(&edges)?;
        let mut inputs = vec![edges.clone()];
        if let Some(x) = &self.cfg.paths.exclude_ids {
            let path = self.input(x)?;
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let exclude: HashSet<String> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect();
            let (filtered, fstats) = graph.filter_nodes(&exclude);
            self.log(format_args!(
                "ingest: excluded {} nodes, {} edges ({} ids not in graph)",
                fstats.removed_nodes, fstats.removed_edges, fstats.unknown_ids
            ));
            graph = filtered;
            inputs.push(path);
        }
        self.log(format_args!(
            "ingest: {} nodes, {} edges ({} duplicate lines, {} self-loops dropped)",
            graph.node_count(),
            graph.edge_count(),
            stats.duplicates,
            stats.self_loops
        ));
        let out = self.artifact(GRAPH);
        write_json(&out, &graph)?;
        let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
        self.provenance(Stage::Ingest, &out, &refs)?;
        Ok(vec![out])
    }

    fn load_graph(&self, stage: Stage) -> Result<(PathBuf, CitationGraph)> {
        let path = self.upstream(stage, GRAPH)?;
        let graph = read_json(&path)?;
        Ok((path, graph))
    }

    fn graph_train(&self) -> Result<Vec<PathBuf>> {
        let (graph_path, graph) = self.load_graph(Stage::GraphTrain)?;
        let cfg = &self.cfg.graph;
        let frac = self.cfg.eval.holdout_fraction;
        let split = graph.split_edges(frac, seed::derive(self.cfg.seed, "holdout"))?;
        let (table, losses) = graph_embed::train(&split.train, cfg)?;
        let link_prediction = if split.holdout.is_empty() {
            None
        } else {
            Some(graph_embed::eval_link_prediction(
                &table,
                &split.holdout,
                self.cfg.eval.link_negatives,
                seed::derive(self.cfg.seed, "link_eval"),
            )?)
        };
        let emb = self.artifact(GRAPH_EMBEDDINGS);
        table.save(&emb)?;
        let metrics = self.artifact(GRAPH_METRICS);
        write_json(
            &metrics,
            &GraphMetrics {
                epoch_losses: losses,
                holdout_edges: split.holdout.len(),
                link_prediction,
            },
        )?;
        for out in [&emb, &metrics] {
            self.provenance(Stage::GraphTrain, out, &[&graph_path])?;
        }
        Ok(vec![emb, metrics])
    }

    fn documents(&self) -> Result<(PathBuf, Vec<Document>)> {
        let path = self.input(&self.cfg.paths.documents)?;
        let docs = read_documents(&path)?;
        Ok((path, docs))
    }

    fn mine(&self) -> Result<Vec<PathBuf>> {
        let (graph_path, graph) = self.load_graph(Stage::Mine)?;
        let emb_path = self.upstream(Stage::Mine, GRAPH_EMBEDDINGS)?;
        let table = EmbeddingTable::load(&emb_path)?;
        if table.rows() != graph.node_count() {
            return Err(Error::Data(format!(
                "{} has {} rows for {} graph nodes",
                GRAPH_EMBEDDINGS,
                table.rows(),
                graph.node_count()
            )));
        }
        let (doc_path, docs) = self.documents()?;
        let corpus: Vec<usize> = docs.iter().filter_map(|d| graph.index_of(&d.id)).collect();
        let mut queries = corpus.clone();
        queries.sort_unstable();
        let (ts, report) = triple_miner::mine_triples(&queries, &table, graph.ids(), &corpus, &self.cfg.sampling)?;
        self.log(format_args!(
            "mine: {} of {} queries mined, {} triples, {} skipped, {} partial",
            report.mined,
            report.queries,
            report.triples,
            report.skipped.len(),
            report.partial.len()
        ));
        if ts.is_empty() {
            return Err(Error::Data("no query produced triples".into()));
        }
        let triples = self.artifact(TRIPLES);
        ts.save(&triples)?;
        let rep = self.artifact(MINING_REPORT);
        write_json(&rep, &report)?;
        for out in [&triples, &rep] {
            self.provenance(Stage::Mine, out, &[&graph_path, &emb_path, &doc_path])?;
        }
        Ok(vec![triples, rep])
    }

    fn encode_train(&self) -> Result<Vec<PathBuf>> {
        let triples_path = self.upstream(Stage::EncodeTrain, TRIPLES)?;
        let (doc_path, docs) = self.documents()?;
        let index: HashMap<String, usize> = docs.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        let triples = triple_miner::read_triples(&triples_path, &index)?;
        let by_id: HashMap<String, Document> = docs.iter().map(|d| (d.id.clone(), d.clone())).collect();
        let cfg = &self.cfg.encoder;
        let p0 = EncoderParams::init(Vocab::build(&docs), cfg.hidden_dim, cfg.out_dim, cfg.seed)?;
        let (params, losses) = encoder::train(&triples, &by_id, &p0, cfg)?;
        self.log(format_args!("encode-train: epoch losses {losses:?}"));

        let ckpt = self.artifact(ENCODER);
        params.save(&ckpt)?;
        let loss_path = self.artifact(ENCODER_LOSSES);
        write_json(
            &loss_path,
            &EncoderLosses {
                epoch_losses: losses,
                triples: triples.len(),
            },
        )?;
        let vectors = self.artifact(DOC_VECTORS);
        encoder::encode_corpus(&docs, &params)?.save(&vectors)?;
        let ids = self.artifact(DOC_IDS);
        let mut id_text = String::new();
        for d in &docs {
            id_text.push_str(&d.id);
            id_text.push('\n');
        }
        write_bytes(&ids, id_text.as_bytes())?;
        for out in [&ckpt, &loss_path, &vectors, &ids] {
            self.provenance(Stage::EncodeTrain, out, &[&triples_path, &doc_path])?;
        }
        Ok(vec![ckpt, loss_path, vectors, ids])
    }

    /// Document vectors and their id-to-row map.
    pub fn load_doc_vectors(&self) -> Result<(EmbeddingTable, HashMap<String, usize>)> {
        let vec_path = self.upstream(Stage::Eval, DOC_VECTORS)?;
        let ids_path = self.upstream(Stage::Eval, DOC_IDS)?;
        let table = EmbeddingTable::load(&vec_path)?;
        let text = fs::read_to_string(&ids_path).map_err(|e| Error::io(&ids_path, e))?;
        let ids: HashMap<String, usize> = text.lines().enumerate().map(|(i, id)| (id.to_string(), i)).collect();
        if ids.len() != table.rows() {
            return Err(Error::Data(format!(
                "{DOC_IDS} lists {} ids for {} vectors",
                ids.len(),
                table.rows()
            )));
        }
        Ok((table, ids))
    }

    fn eval(&self) -> Result<Vec<PathBuf>> {
        let (table, ids) = self.load_doc_vectors()?;
        let mut inputs = vec![self.artifact(DOC_VECTORS), self.artifact(DOC_IDS)];
        let mut report = Report::default();

        let gm = self.artifact(GRAPH_METRICS);
        if gm.is_file() {
            let m: GraphMetrics = read_json(&gm)?;
            if let Some(l) = m.link_prediction {
                for (k, v) in [
                    ("mrr", l.mrr),
                    ("hits_at_1", l.hits_at_1),
                    ("hits_at_10", l.hits_at_10),
                    ("auc", l.auc),
                ] {
                    report.insert("link_prediction", "holdout", k, v);
                }
            }
            if let Some(&last) = m.epoch_losses.last() {
                report.insert("graph", "train", "final_epoch_loss", last);
            }
            inputs.push(gm);
        }
        let el = self.artifact(ENCODER_LOSSES);
        if el.is_file() {
            let l: EncoderLosses = read_json(&el)?;
            if let (Some(&first), Some(&last)) = (l.epoch_losses.first(), l.epoch_losses.last()) {
                report.insert("encoder", "train", "first_epoch_loss", first);
                report.insert("encoder", "train", "final_epoch_loss", last);
            }
            inputs.push(el);
        }
        if let Some(p) = &self.cfg.paths.ranking {
            let path = self.input(p)?;
            let task = RankingTask::read(&path)?;
            let ranked = eval_harness::rank_by_l2(&table, &ids, &task)?;
            let rel = eval_harness::relevance_lists(&ranked);
            report.insert(
                "ranking",
                "task",
                "map",
                eval_harness::mean_average_precision(&rel)?.value,
            );
            report.insert("ranking", "task", "ndcg", eval_harness::ndcg(&rel)?.value);
            report.insert("ranking", "task", "p_at_1", eval_harness::precision_at_1(&rel)?);
            inputs.push(path);
        }
        if let Some(p) = &self.cfg.paths.labels {
            let path = self.input(p)?;
            let labels = LabeledSet::read(&path)?;
            let probe = eval_harness::linear_probe_f1(&table, &ids, &labels, &self.cfg.eval.probe)?;
            report.insert("classification", "labels", "macro_f1", probe.macro_f1);
            let pairs: Vec<(String, String)> = labels.items.iter().map(|i| (i.id.clone(), i.label.clone())).collect();
            let sep = eval_harness::label_separation(&table, &ids, &pairs)?;
            report.insert("separation", "labels", "intra_l2", sep.intra);
            report.insert("separation", "labels", "inter_l2", sep.inter);
            inputs.push(path);
        }
        let out = self.artifact(REPORT);
        write_bytes(&out, report.to_json().as_bytes())?;
        let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
        self.provenance(Stage::Eval, &out, &refs)?;
        Ok(vec![out])
    }
}

/// Pipeline settings used for the bundled fixture.
pub fn fixture_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        seed,
        paths: PathsConfig {
            edges: "edges.tsv".into(),
            documents: "documents.jsonl".into(),
            work_dir: default_work_dir(),
            ranking: Some("ranking.jsonl".into()),
            labels: Some("labels.jsonl".into()),
            exclude_ids: None,
        },
        graph: GraphTrainConfig {
            dim: 32,
            measure: Measure::Dot,
            ..Default::default()
        },
        sampling: SamplingConfig {
            k_pos: 10,
            c_pos: 5,
            k_hard: 150,
            c_hard: 2,
            c_easy: 3,
            easy_strategy: EasyStrategy::FilteredRandom,
            ..Default::default()
        },
        encoder: EncoderTrainConfig::default(),
        eval: EvalConfig::default(),
    }
}

/// Writes the synthetic two-topic corpus and a matching `config.toml` into
/// `dir`; returns the config path.
pub fn write_fixture(dir: &Path, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let partition = PlantedPartition::default();
    let graph = partition.generate(seed);

    let create = |name: &str| -> Result<(PathBuf, BufWriter<fs::File>)> {
        let path = dir.join(name);
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok((path, BufWriter::new(f)))
    };
    let finish = |(path, mut w): (PathBuf, BufWriter<fs::File>), text: String| -> Result<()> {
        w.write_all(text.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))
    };

    let mut edges = String::new();
    for &(s, d) in graph.edges() {
        edges.push_str(&format!("{}\t{}\n", graph.ids()[s], graph.ids()[d]));
    }
    finish(create("edges.tsv")?, edges)?;

    let docs: String = fixture::topic_documents(&partition, 30, seed)
        .iter()
        .map(|d| d.to_json_line() + "\n")
        .collect();
    finish(create("documents.jsonl")?, docs)?;

    let ranking: String = fixture::topic_ranking_task(&partition, 40, 30, seed)
        .iter()
        .map(|q| serde_json::to_string(q).expect("query serialises") + "\n")
        .collect();
    finish(create("ranking.jsonl")?, ranking)?;

    let labels: String = fixture::topic_labels(&partition, seed)
        .iter()
        .map(|l| serde_json::to_string(l).expect("label serialises") + "\n")
        .collect();
    finish(create("labels.jsonl")?, labels)?;

    let config = dir.join("config.toml");
    write_bytes(&config, fixture_config(seed).to_toml().as_bytes())?;
    Ok(config)
}
