use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn citecontrast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_citecontrast"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture(dir: &Path) -> String {
    let out = citecontrast(&["fixture", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("config.toml").to_string_lossy().into_owned()
}

#[test]
fn all_stages_produce_artifacts_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let out = citecontrast(&["--config", &config, "all"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("ranking.task.map"));
    for name in [
        "graph.json",
        "graph_embeddings.nbe",
        "triples.tsv",
        "encoder.ckpt",
        "report.json",
    ] {
        assert!(dir.path().join("work").join(name).is_file(), "{name}");
        assert!(
            dir.path().join("work").join(format!("{name}.prov.json")).is_file(),
            "{name} sidecar"
        );
    }
}

#[test]
fn stage_dir_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (stage_dir, seed) in [(&a, "1"), (&b, "2")] {
        for stage in ["ingest", "graph-train", "mine"] {
            let out = citecontrast(&[
                "--config",
                &config,
                "--stage-dir",
                stage_dir.to_str().unwrap(),
                "--seed",
                seed,
                stage,
            ]);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        }
    }
    let ta = fs::read(a.join("triples.tsv")).unwrap();
    let tb = fs::read(b.join("triples.tsv")).unwrap();
    assert_ne!(ta, tb);
    assert!(!dir.path().join("work").exists());
}

#[test]
fn margin_violation_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let text = fs::read_to_string(&config)
        .unwrap()
        .replace("k_hard = 150", "k_hard = 11");
    fs::write(&config, text).unwrap();
    let out = citecontrast(&["--config", &config, "mine"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("margin"));
    assert!(!dir.path().join("work").exists());
}

#[test]
fn missing_upstream_exits_with_dependency_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    let out = citecontrast(&["--config", &config, "encode-train"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("triples.tsv"));
}

#[test]
fn malformed_edges_exit_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture(dir.path());
    fs::write(dir.path().join("edges.tsv"), "a\tb\nc\n").unwrap();
    let out = citecontrast(&["--config", &config, "ingest"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("edges.tsv:2"));
}

#[test]
fn stages_require_a_config() {
    let out = citecontrast(&["mine"]);
    assert_eq!(out.status.code(), Some(2));
}
