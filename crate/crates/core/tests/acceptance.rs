//! Acceptance checks. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng as _;

use citecontrast::ann_index::{FlatIndex, NeighborList};
use citecontrast::corpus_graph::Document;
use citecontrast::embedding::{EmbeddingTable, Measure};
use citecontrast::encoder::{self, EncoderParams, Vocab};
use citecontrast::eval_harness::{self, LabeledSet};
use citecontrast::fixture::PlantedPartition;
use citecontrast::graph_embed::{self, GraphTrainConfig};
use citecontrast::pipeline::{self, file_sha256, Pipeline, PipelineConfig, Stage};
use citecontrast::seed;
use citecontrast::triple_miner::{self, NegativeKind, SamplingConfig, ThresholdMode};
use citecontrast::Error;

type Check<'a> = Box<dyn FnOnce() -> Outcome + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

fn naive_top_k(t: &EmbeddingTable, q: usize, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = (0..t.rows())
        .filter(|&j| j != q)
        .map(|j| (j, t.measure().score(t.row(q), t.row(j)) + 0.0))
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn exact_knn() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng_for(1, "acceptance_knn");
    let mut queries = 0;
    for table_no in 0..50 {
        let rows = rng.random_range(2..=1000);
        let dim = rng.random_range(1..=16);
        // half the tables draw from a tiny value set to force score ties
        let coarse = table_no % 2 == 0;
        let values: Vec<f32> = (0..rows * dim)
            .map(|_| {
                if coarse {
                    rng.random_range(-2i32..=2) as f32
                } else {
                    rng.random_range(-1.0f32..1.0)
                }
            })
            .collect();
        let measure = if table_no % 4 < 2 {
            Measure::Dot
        } else {
            Measure::Cosine
        };
        let t = EmbeddingTable::from_values(rows, dim, values, measure).unwrap();
        let index = FlatIndex::new(&t);
        for _ in 0..10 {
            let q = rng.random_range(0..rows);
            let k = rng.random_range(1..rows.max(2));
            let got = index.top_k(q, k, &HashSet::new()).unwrap();
            if got.entries != naive_top_k(&t, q, k) {
                return outcome(
                    false,
                    format!("table {table_no} query {q} k {k} differs from full sort"),
                );
            }
            queries += 1;
        }
    }
    let el = start.elapsed();
    outcome(
        within(el, Duration::from_secs(30)),
        format!("{queries} queries on 50 tables match the full-sort oracle in {el:.2?}"),
    )
}

struct Mined {
    table: EmbeddingTable,
    ids: Vec<String>,
    triples: triple_miner::TripleSet,
    report: triple_miner::MiningReport,
}

fn mine_paper_config() -> Mined {
    let table = EmbeddingTable::init(5000, 16, Measure::Dot, 7).unwrap();
    let ids: Vec<String> = (0..5000).map(|i| format!("s{i:05}")).collect();
    let corpus: Vec<usize> = (0..5000).collect();
    let queries: Vec<usize> = (0..1000).collect();
    let cfg = SamplingConfig {
        seed: 11,
        ..Default::default()
    };
    let (triples, report) = triple_miner::mine_triples(&queries, &table, &ids, &corpus, &cfg).unwrap();
    Mined {
        table,
        ids,
        triples,
        report,
    }
}

fn band_arithmetic(m: &Mined) -> Outcome {
    let index = FlatIndex::new(&m.table);
    let mut collisions = 0;
    let mut gaps = HashSet::new();
    let mut per_query: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for t in &m.triples.triples {
        let entry = per_query.entry(t.query.index).or_default();
        entry.0.push(t.positive.index);
        if t.negative_kind == NegativeKind::Hard {
            entry.1.push(t.negative.index);
        }
    }
    if per_query.len() != 1000 || m.report.mined != 1000 {
        return outcome(false, format!("only {} of 1000 queries mined", per_query.len()));
    }
    for (&q, (pos, hard)) in &per_query {
        let n: NeighborList = index.top_k(q, 4000, &HashSet::new()).unwrap();
        let mut pos_ranks: Vec<usize> = pos.iter().map(|&p| n.rank_of(p).unwrap_or(0)).collect();
        let mut hard_ranks: Vec<usize> = hard.iter().map(|&h| n.rank_of(h).unwrap_or(0)).collect();
        pos_ranks.sort_unstable();
        hard_ranks.sort_unstable();
        if pos_ranks != [21, 22, 23, 24, 25] || hard_ranks != [3999, 4000] {
            return outcome(
                false,
                format!(
                    "query {}: positive ranks {pos_ranks:?}, hard ranks {hard_ranks:?}",
                    m.ids[q]
                ),
            );
        }
        let pos_set: HashSet<usize> = pos.iter().copied().collect();
        collisions += hard.iter().filter(|h| pos_set.contains(h)).count();
        gaps.insert(hard_ranks[0] - pos_ranks[4]);
    }
    let gap_ok = gaps.len() == 1 && gaps.contains(&3974);
    outcome(
        gap_ok && collisions == 0,
        format!("ranks 21-25 / 3999-4000 on 1000 queries, gap {gaps:?}, {collisions} collisions"),
    )
}

fn triple_composition(m: &Mined) -> Outcome {
    let mut kinds: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for t in &m.triples.triples {
        let e = kinds.entry(t.query.external_id.as_str()).or_default();
        match t.negative_kind {
            NegativeKind::Hard => e.0 += 1,
            NegativeKind::Easy => e.1 += 1,
        }
    }
    let composition_ok = kinds.values().all(|&k| k == (2, 3));
    let sub = triple_miner::subsample_triples(&m.triples, 0.01, true, 5).unwrap();
    let sub_queries: HashSet<&str> = sub.triples.iter().map(|t| t.query.external_id.as_str()).collect();
    let pass =
        m.triples.len() == 5000 && kinds.len() == 1000 && composition_ok && sub.len() == 50 && sub_queries.len() == 10;
    outcome(
        pass,
        format!(
            "{} triples over {} queries, hard/easy 2/3 everywhere: {composition_ok}, 1% by query: {} triples",
            m.triples.len(),
            kinds.len(),
            sub.len()
        ),
    )
}

fn worked_examples() -> Outcome {
    let n = NeighborList {
        query: 0,
        entries: (1..=12).map(|i| (i, 1.0 - i as f64 / 100.0)).collect(),
    };
    let cfg = SamplingConfig {
        k_pos: 10,
        c_pos: 3,
        ..Default::default()
    };
    let knn = triple_miner::sample_positives_knn(&n, &cfg).unwrap();
    let sim =
        triple_miner::sample_by_similarity(&[(1, 0.8), (2, 0.7), (3, 0.1)], 2, 0.5, ThresholdMode::Above).unwrap();
    outcome(
        knn == [8, 9, 10] && sim.nodes == [1, 2] && !sim.partial,
        format!("kNN band {knn:?}, Sim above 0.5 picks candidates {:?}", sim.nodes),
    )
}

fn graph_quality() -> Outcome {
    let start = Instant::now();
    let partition = PlantedPartition::default();
    let graph = partition.generate(2024);
    let split = graph.split_edges(0.1, 99).unwrap();
    let base = GraphTrainConfig {
        dim: 32,
        seed: 5,
        ..Default::default()
    };
    let auc = |measure: Measure| -> f64 {
        let cfg = GraphTrainConfig {
            measure,
            ..base.clone()
        };
        let (t, _) = graph_embed::train(&split.train, &cfg).unwrap();
        graph_embed::eval_link_prediction(&t, &split.holdout, 10, 77)
            .unwrap()
            .auc
    };
    let dot = auc(Measure::Dot);
    let cos = auc(Measure::Cosine);
    // score every pair by the true block indicator on the same held-out edges
    let blocks: Vec<Vec<f32>> = (0..partition.nodes)
        .map(|i| {
            (0..partition.blocks)
                .map(|b| (partition.block_of(i) == b) as u8 as f32)
                .collect()
        })
        .collect();
    let oracle = EmbeddingTable::from_rows(&blocks, Measure::Dot).unwrap();
    let bound = graph_embed::eval_link_prediction(&oracle, &split.holdout, 10, 77)
        .unwrap()
        .auc;
    let el = start.elapsed();
    outcome(
        dot >= 0.90 && dot >= cos - 0.02 && within(el, Duration::from_secs(120)),
        format!(
            "held-out AUC dot {dot:.4} (need >= 0.90), cosine {cos:.4}; block-indicator oracle reaches {bound:.4}; {el:.2?}"
        ),
    )
}

fn loss_and_gradients() -> Outcome {
    let start = Instant::now();
    let l0 = encoder::triplet_loss(&[0.0, 0.0], &[0.0, 0.0], &[2.0, 0.0], 1.0).unwrap();
    let l1 = encoder::triplet_loss(&[0.4, -0.2], &[1.0, 2.0], &[1.0, 2.0], 1.0).unwrap();
    let l5 = encoder::triplet_loss(&[0.0, 0.0], &[3.0, 4.0], &[1.0, 0.0], 1.0).unwrap();
    let fixtures_ok = l0 == 0.0 && l1 == 1.0 && l5 == 5.0;

    let mut rng = seed::rng_for(3, "acceptance_grad");
    let words: Vec<String> = (0..8).map(|i| format!("w{i}")).collect();
    let mut worst: (f64, f64) = (0.0, 0.0);
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 20 && attempts < 1000 {
        attempts += 1;
        let mut doc = |i: usize| {
            let mut pick = || words[rng.random_range(0..words.len() - 2)].clone();
            Document::new(format!("g{i}"), format!("{} {}", pick(), pick()), pick())
        };
        let docs = [doc(0), doc(1), doc(2)];
        let vocab = Vocab::build(&docs);
        let mut p = EncoderParams::init(vocab, 3, 2, attempts).unwrap();
        p.projection_bias = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        match encoder::grad_check(&p, [&docs[0], &docs[1], &docs[2]], 1.0, 1e-5, false) {
            Ok(full) => {
                let bias = encoder::grad_check(&p, [&docs[0], &docs[1], &docs[2]], 1.0, 1e-5, true).unwrap();
                worst = (worst.0.max(full), worst.1.max(bias));
                checked += 1;
            }
            Err(Error::RejectedFixture(_)) => {}
            Err(e) => return outcome(false, e.to_string()),
        }
    }
    let el = start.elapsed();
    outcome(
        fixtures_ok && checked == 20 && worst.0 < 1e-4 && worst.1 < 1e-4 && within(el, Duration::from_secs(60)),
        format!(
            "losses {l0}, {l1}, {l5}; max relative gradient error {:.2e} full, {:.2e} bias-only over {checked} fixtures",
            worst.0, worst.1
        ),
    )
}

fn run_fixture(dir: &Path) -> Pipeline {
    let config = pipeline::write_fixture(dir, 0).unwrap();
    let p = Pipeline::new(PipelineConfig::load(&config).unwrap(), dir, None)
        .unwrap()
        .quiet();
    p.run(Stage::All).unwrap();
    p
}

fn end_to_end(dir: &Path) -> Outcome {
    let start = Instant::now();
    let p = run_fixture(dir);
    let el = start.elapsed();
    let (vectors, ids) = p.load_doc_vectors().unwrap();
    let labels = LabeledSet::read(&dir.join("labels.jsonl")).unwrap();
    let pairs: Vec<(String, String)> = labels.items.iter().map(|i| (i.id.clone(), i.label.clone())).collect();
    let sep = eval_harness::label_separation(&vectors, &ids, &pairs).unwrap();
    let losses: pipeline::EncoderLosses =
        serde_json::from_str(&std::fs::read_to_string(p.artifact(pipeline::ENCODER_LOSSES)).unwrap()).unwrap();
    let first = losses.epoch_losses[0];
    let last = *losses.epoch_losses.last().unwrap();
    outcome(
        sep.intra < sep.inter && last < first && within(el, Duration::from_secs(300)),
        format!(
            "intra-topic L2 {:.4} < inter-topic L2 {:.4}; epoch loss {first:.4} -> {last:.4}; {el:.2?}",
            sep.intra, sep.inter
        ),
    )
}

fn brute_ap(rel: &[bool]) -> f64 {
    let positions: Vec<usize> = (0..rel.len()).filter(|&i| rel[i]).collect();
    positions
        .iter()
        .map(|&i| rel[..=i].iter().filter(|&&r| r).count() as f64 / (i + 1) as f64)
        .sum::<f64>()
        / positions.len() as f64
}

fn brute_dcg(rel: &[bool]) -> f64 {
    rel.iter()
        .enumerate()
        .map(|(i, &r)| if r { 1.0 / ((i + 1) as f64 + 1.0).log2() } else { 0.0 })
        .sum()
}

fn brute_ndcg(rel: &[bool]) -> f64 {
    let mut ideal = rel.to_vec();
    ideal.sort_by(|a, b| b.cmp(a));
    brute_dcg(rel) / brute_dcg(&ideal)
}

fn brute_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for n in neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn metric_oracles() -> Outcome {
    let mut rng = seed::rng_for(4, "acceptance_metrics");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let queries = rng.random_range(1..6);
        let rel: Vec<Vec<bool>> = (0..queries)
            .map(|_| {
                let n = rng.random_range(1..=10);
                let mut r: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
                let i = rng.random_range(0..n);
                r[i] = true;
                r
            })
            .collect();
        let map = eval_harness::mean_average_precision(&rel).unwrap().value;
        let ndcg = eval_harness::ndcg(&rel).unwrap().value;
        let p1 = eval_harness::precision_at_1(&rel).unwrap();
        let q = rel.len() as f64;
        worst = worst
            .max((map - rel.iter().map(|r| brute_ap(r)).sum::<f64>() / q).abs())
            .max((ndcg - rel.iter().map(|r| brute_ndcg(r)).sum::<f64>() / q).abs())
            .max((p1 - rel.iter().filter(|r| r[0]).count() as f64 / q).abs());

        let pos: Vec<f64> = (0..rng.random_range(1..8))
            .map(|_| rng.random_range(0..5) as f64 / 4.0)
            .collect();
        let neg: Vec<f64> = (0..rng.random_range(1..8))
            .map(|_| rng.random_range(0..5) as f64 / 4.0)
            .collect();
        worst = worst.max((eval_harness::pooled_auc(&pos, &neg).unwrap() - brute_auc(&pos, &neg)).abs());
    }
    let map = eval_harness::average_precision(&[true, false, true]);
    let ndcg = eval_harness::ndcg_single(&[true, false, true]);
    let auc = eval_harness::pooled_auc(&[0.9, 0.7], &[0.8, 0.1]).unwrap();
    let worked = format!("{map:.4} {ndcg:.4} {auc:.4}");
    outcome(
        worst <= 1e-9 && worked == "0.8333 0.9197 0.7500",
        format!("max deviation {worst:.1e} over 100 random tasks; worked values {worked}"),
    )
}

fn leakage_report() -> Outcome {
    let train: HashSet<String> = (0..311_860).map(|i| format!("t{i}")).collect();
    // test and validation share 32,634 train papers
    let test: HashSet<String> = (0..79_201)
        .map(|i| format!("t{i}"))
        .chain((0..5_000).map(|i| format!("x{i}")))
        .collect();
    let shared_start = 79_201 - 32_634;
    let validation: HashSet<String> = (shared_start..shared_start + 79_609)
        .map(|i| format!("t{i}"))
        .chain((0..7_000).map(|i| format!("y{i}")))
        .collect();
    let splits = BTreeMap::from([("test".to_string(), test), ("validation".to_string(), validation)]);
    let r = eval_harness::overlap_report(&train, &splits);
    let text = r.to_text();
    let line = text
        .lines()
        .find(|l| l.starts_with("combined"))
        .unwrap_or_default()
        .to_string();
    outcome(
        r.combined.overlap == 126_176 && line.ends_with("(40.5%)"),
        format!(
            "combined overlap {} of {}: {:?}",
            r.combined.overlap,
            r.train_size,
            line.split_whitespace().collect::<Vec<_>>().join(" ")
        ),
    )
}

fn checksums(dir: &Path) -> BTreeMap<String, String> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                file_sha256(&p).unwrap(),
            )
        })
        .collect()
}

fn determinism(first: &Path) -> Outcome {
    let work = first.join("work");
    let before = checksums(&work);
    let second = tempfile::tempdir().unwrap();
    run_fixture(second.path());
    let other = checksums(&second.path().join("work"));

    let config = PipelineConfig::load(&first.join("config.toml")).unwrap();
    let p = Pipeline::new(config, first, None).unwrap().quiet();
    for stage in Stage::CHAIN {
        p.run(stage).unwrap();
    }
    let rerun = checksums(&work);
    outcome(
        before == other && before == rerun && before.len() == 20,
        format!(
            "{} artifacts identical across a fresh run and per-stage reruns: {}",
            before.len(),
            before == other && before == rerun
        ),
    )
}

fn main() {
    let mined = mine_paper_config();
    let fixture_dir = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Check)> = vec![
        ("exact kNN oracle", Box::new(exact_knn)),
        ("band arithmetic", Box::new(|| band_arithmetic(&mined))),
        ("triple composition", Box::new(|| triple_composition(&mined))),
        ("worked sampling examples", Box::new(worked_examples)),
        ("graph embedding quality", Box::new(graph_quality)),
        ("loss and gradients", Box::new(loss_and_gradients)),
        ("end-to-end separation", Box::new(|| end_to_end(fixture_dir.path()))),
        ("metric oracles", Box::new(metric_oracles)),
        ("leakage report", Box::new(leakage_report)),
        ("determinism", Box::new(|| determinism(fixture_dir.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<26} {}  {}",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
