//! End-to-end runs of the `invfold` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use invfold::geometry::read_features;
use invfold::rng::CounterRng;
use invfold::structure::synthetic::random_backbone;
use invfold::structure::{apply_rigid_transform, to_pdb};
use nalgebra::Matrix3;
use serde_json::Value;
use tempfile::TempDir;

/// Small model so that training and inference take well under a second.
const SMALL_CONFIG: &str = r#"{
  "seed": 5,
  "features": {"k": 8},
  "model": {"hidden_dim": 16, "heads": 2, "depth": 2, "stages": 3, "dropout": 0.0,
            "structure_dim": 8, "sequence_dim": 8},
  "train": {"max_steps": 3, "batch_size": 2, "warmup_steps": 1, "val_fraction": 0.0,
            "early_stop_patience": 0}
}"#;

fn invfold(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invfold"))
        .args(args)
        .env_remove("RIGA_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_pdb(dir: &Path, name: &str, len: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    fs::write(
        &path,
        to_pdb(&random_backbone(len, &mut CounterRng::new(seed))),
    )
    .unwrap();
    path
}

struct Trained {
    dir: TempDir,
    config: PathBuf,
    checkpoint: PathBuf,
    pdb: PathBuf,
}

fn trained() -> Trained {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("small.json");
    fs::write(&config, SMALL_CONFIG).unwrap();
    let run = dir.path().join("run");
    let o = invfold(&["train", "--config", s(&config), "--out", s(&run)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = stdout_json(&o);
    assert_eq!(summary["steps"], 3);
    assert!(run.join("metrics.csv").exists() && run.join("config.json").exists());
    let pdb = write_pdb(dir.path(), "target.pdb", 20, 77);
    Trained {
        checkpoint: run.join("model.ckpt"),
        dir,
        config,
        pdb,
    }
}

#[test]
fn help_lists_every_subcommand() {
    let o = invfold(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["featurize", "train", "infer", "eval", "theory"] {
        assert!(text.contains(sub), "{sub} missing from help");
        assert_eq!(code(&invfold(&[sub, "--help"])), 0);
    }
    assert_eq!(code(&invfold(&["frobnicate"])), 1);
}

#[test]
fn featurize_two_residue_fixture() {
    let dir = TempDir::new().unwrap();
    let pdb = write_pdb(dir.path(), "two.pdb", 2, 1);
    let out = dir.path().join("two.feat");
    let o = invfold(&["featurize", s(&pdb), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let j = stdout_json(&o);
    assert_eq!((j["n"].as_u64(), j["k"].as_u64()), (Some(2), Some(1)));
    let g = read_features(&fs::read(&out).unwrap()[..]).unwrap();
    assert_eq!((g.n, g.k), (2, 1));
    assert_eq!(Some(g.node_dim as u64), j["node_dim"].as_u64());
    assert_eq!(Some(g.edge_dim as u64), j["edge_dim"].as_u64());
}

#[test]
fn featurize_missing_file_exits_1() {
    let o = invfold(&["featurize", "/no/such/file.pdb", "--out", "/tmp/never.feat"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("/no/such/file.pdb"));
}

#[test]
fn featurize_malformed_pdb_exits_2() {
    let dir = TempDir::new().unwrap();
    let pdb = write_pdb(dir.path(), "bad.pdb", 5, 2);
    let mut lines: Vec<String> = fs::read_to_string(&pdb)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    let first = lines.iter().position(|l| l.starts_with("ATOM")).unwrap();
    lines[first].replace_range(30..38, " abc.def");
    fs::write(&pdb, lines.join("\n")).unwrap();
    let line = format!("line {}", first + 1);
    let o = invfold(&["featurize", s(&pdb), "--out", s(&dir.path().join("x.feat"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains(&line), "{}", stderr(&o));
}

#[test]
fn featurize_rotated_copy_matches() {
    let dir = TempDir::new().unwrap();
    let b = random_backbone(25, &mut CounterRng::new(9));
    // A cyclic axis permutation with an integer shift keeps the 3-decimal
    // PDB coordinates exact.
    let rot = Matrix3::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    let moved = apply_rigid_transform(&b, &rot, &nalgebra::Vector3::new(-12.0, 40.0, 7.0)).unwrap();
    let (a, c) = (dir.path().join("a.pdb"), dir.path().join("b.pdb"));
    fs::write(&a, to_pdb(&b)).unwrap();
    fs::write(&c, to_pdb(&moved)).unwrap();
    let feats = |pdb: &Path, name: &str| {
        let out = dir.path().join(name);
        assert_eq!(code(&invfold(&["featurize", s(pdb), "--out", s(&out)])), 0);
        read_features(&fs::read(&out).unwrap()[..]).unwrap()
    };
    let (fa, fb) = (feats(&a, "a.feat"), feats(&c, "b.feat"));
    assert_eq!(fa.neighbors, fb.neighbors);
    let worst = fa
        .node_feats
        .iter()
        .chain(&fa.edge_feats)
        .zip(fb.node_feats.iter().chain(&fb.edge_feats))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-5, "{worst}");
}

#[test]
fn infer_recycles_and_repeats() {
    let t = trained();
    let run = |recycles: &str, out: &str| {
        let out = t.dir.path().join(out);
        let o = invfold(&[
            "infer",
            "--checkpoint",
            s(&t.checkpoint),
            "--pdb",
            s(&t.pdb),
            "--recycles",
            recycles,
            "--config",
            s(&t.config),
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (stdout_json(&o), out)
    };
    let (full, a) = run("3", "a");
    let (_, b) = run("3", "b");
    let (one, c) = run("1", "c");
    assert_eq!(full["stages"], 3);
    assert_eq!(one["stages"], 1);
    assert_eq!(
        fs::read(a.join("target.fasta")).unwrap(),
        fs::read(b.join("target.fasta")).unwrap()
    );
    assert!(a.join("target.metrics.json").exists());

    // Stage 1 of a three-stage run is the single-stage run.
    let csv = fs::read_to_string(a.join("target.distributions.csv")).unwrap();
    let single = fs::read_to_string(c.join("target.distributions.csv")).unwrap();
    let stage_one: Vec<&str> = csv
        .lines()
        .filter(|l| l.starts_with("stage") || l.starts_with("1,"))
        .collect();
    assert_eq!(stage_one, single.lines().collect::<Vec<_>>());
    assert_eq!(csv.lines().count(), 1 + 3 * 20);
}

#[test]
fn attention_dumps_feed_the_return_mass_suite() {
    let t = trained();
    let out = t.dir.path().join("attn");
    let o = invfold(&[
        "infer",
        "--checkpoint",
        s(&t.checkpoint),
        "--pdb",
        s(&t.pdb),
        "--dump-attention",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout_json(&o)["attention"].as_array().unwrap().len(), 3);
    let dump = out.join("target.stage3.attn");
    let o = invfold(&["theory", "--suite", "return-mass", "--graph", s(&dump)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let j = stdout_json(&o);
    let layers = j["per_layer"].as_array().unwrap();
    assert_eq!(layers.len(), 2);
    assert!(layers
        .iter()
        .all(|r| (0.0..=1.0).contains(&r.as_f64().unwrap())));
    assert_eq!(
        code(&invfold(&[
            "theory",
            "--suite",
            "return-mass",
            "--graph",
            "/missing.attn"
        ])),
        1
    );
}

#[test]
fn infer_with_mismatched_features_exits_3() {
    let t = trained();
    let feat = t.dir.path().join("narrow.feat");
    let cfg = t.dir.path().join("narrow.json");
    fs::write(&cfg, r#"{"features": {"k": 8, "orientation": false}}"#).unwrap();
    assert_eq!(
        code(&invfold(&[
            "featurize",
            s(&t.pdb),
            "--config",
            s(&cfg),
            "--out",
            s(&feat)
        ])),
        0
    );
    let o = invfold(&[
        "infer",
        "--checkpoint",
        s(&t.checkpoint),
        "--features",
        s(&feat),
        "--out",
        s(t.dir.path()),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn eval_scores_reference_and_reports_bad_rows() {
    let t = trained();
    let data = t.dir.path().join("data");
    fs::create_dir(&data).unwrap();
    fs::copy(&t.pdb, data.join("good.pdb")).unwrap();
    write_pdb(&data, "broken.pdb", 15, 3);
    fs::write(data.join("broken.fasta"), "no header here\n").unwrap();

    // The model's own design as the reference gives 100% recovery.
    let out = t.dir.path().join("design");
    let o = invfold(&[
        "infer",
        "--checkpoint",
        s(&t.checkpoint),
        "--pdb",
        s(&t.pdb),
        "--config",
        s(&t.config),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    fs::copy(out.join("target.fasta"), data.join("good.fasta")).unwrap();

    let csv_path = t.dir.path().join("eval.csv");
    let o = invfold(&[
        "eval",
        "--checkpoint",
        s(&t.checkpoint),
        "--data",
        s(&data),
        "--config",
        s(&t.config),
        "--out",
        s(&csv_path),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(&csv_path).unwrap();
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 3);
    let broken = rows.iter().find(|r| r[0] == "broken").unwrap();
    assert!(!broken[5].is_empty());
    let good = rows.iter().find(|r| r[0] == "good").unwrap();
    assert_eq!(good[4].parse::<f64>().unwrap(), 100.0);
    let all = rows.iter().find(|r| r[0] == "ALL").unwrap();
    assert_eq!(all[1], good[1]);

    let jobs = invfold(&[
        "eval",
        "--checkpoint",
        s(&t.checkpoint),
        "--data",
        s(&data),
        "--config",
        s(&t.config),
        "--jobs",
        "2",
    ]);
    assert_eq!(String::from_utf8_lossy(&jobs.stdout), csv);
}

#[test]
fn eval_empty_dataset_exits_1() {
    let t = trained();
    let empty = t.dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = invfold(&[
        "eval",
        "--checkpoint",
        s(&t.checkpoint),
        "--data",
        s(&empty),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no structure files"));
}

#[test]
fn theory_resistance_passes() {
    let dir = TempDir::new().unwrap();
    let o = invfold(&["theory", "--suite", "resistance", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let j = stdout_json(&o);
    assert_eq!(j["violations"], 0);
    assert_eq!(j["graphs"], 200);
    assert!(dir.path().join("resistance.csv").exists());
}

#[test]
fn theory_return_mass_of_star() {
    let j = stdout_json(&invfold(&[
        "theory",
        "--suite",
        "return-mass",
        "--graph",
        "star3",
    ]));
    assert_eq!(j["mean"], 0.5);
    let j = stdout_json(&invfold(&[
        "theory",
        "--suite",
        "return-mass",
        "--graph",
        "two-cycle",
    ]));
    assert_eq!(j["mean"], 1.0);
    assert_eq!(
        code(&invfold(&[
            "theory",
            "--suite",
            "return-mass",
            "--graph",
            "wheel"
        ])),
        1
    );
    assert_eq!(code(&invfold(&["theory", "--suite", "bogus"])), 1);
}

#[test]
fn theory_contraction_is_diagnostic() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("small.json");
    fs::write(&cfg, SMALL_CONFIG).unwrap();
    let o = invfold(&["theory", "--suite", "contraction", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let j = stdout_json(&o);
    assert_eq!(j["directional"]["series"].as_array().unwrap().len(), 2);
    assert_eq!(j["symmetric"]["series"].as_array().unwrap().len(), 2);
}

#[test]
fn config_schema_errors_name_the_key() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("typo.json");
    fs::write(&cfg, r#"{"model": {"hiden_dim": 32}}"#).unwrap();
    let o = invfold(&["theory", "--suite", "return-mass", "--config", s(&cfg)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("hiden_dim"), "{}", stderr(&o));
}

#[test]
fn seed_flag_overrides_environment() {
    let dir = TempDir::new().unwrap();
    let run = |seed: Option<&str>, env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_invfold"));
        cmd.args(["theory", "--suite", "sensitivity", "--fixtures", "20"]);
        cmd.env_remove("RIGA_SEED");
        if let Some(sd) = seed {
            cmd.args(["--seed", sd]);
        }
        if let Some(e) = env {
            cmd.env("RIGA_SEED", e);
        }
        let o = cmd.current_dir(dir.path()).output().unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        stdout_json(&o)["worst_margin"].as_f64().unwrap()
    };
    assert_eq!(run(Some("4"), None), run(None, Some("4")));
    assert_eq!(run(Some("4"), Some("9")), run(Some("4"), None));
    assert_ne!(run(Some("4"), None), run(Some("9"), None));
}
