use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use matchpick::stats::load_stats;

const LIGHT_CONFIG: &str = r#"{"pipeline":{"walk":{"walk_length":10,"walks_per_vertex":3},"sgns":{"emb_dim":8,"epochs":1},"gbdt":{"rounds":8}}}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matchpick"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth_small(dir: &Path) {
    let o = run(&[
        "synth",
        "--models",
        "5",
        "--datasets",
        "8",
        "--clusters",
        "2",
        "--emb-dim",
        "4",
        "--seed",
        "3",
        "--out",
        p(dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn light_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.json");
    fs::write(&path, LIGHT_CONFIG).unwrap();
    path
}

#[test]
fn synth_writes_a_benchmark() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = tmp.path().join("bench");
    synth_small(&bench);
    assert_eq!(fs::read_dir(bench.join("models")).unwrap().count(), 5);
    assert_eq!(fs::read_dir(bench.join("datasets")).unwrap().count(), 8);
    let perf = fs::read_to_string(bench.join("perf.csv")).unwrap();
    assert_eq!(perf.lines().count(), 1 + 5 * 8);
    assert!(bench.join("initial.csv").exists());
}

#[test]
fn train_then_predict() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = tmp.path().join("bench");
    synth_small(&bench);
    let cfg = light_config(tmp.path());
    let out = tmp.path().join("model");
    let o = run(&[
        "train",
        "--config",
        p(&cfg),
        "--bench",
        p(&bench),
        "--seed",
        "1",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["graph.json", "schema.json", "ranker.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }

    // Reuse one dataset's stats under a fresh name as the query.
    let query = tmp.path().join("q-new");
    fs::create_dir(&query).unwrap();
    for entry in fs::read_dir(bench.join("datasets/d00")).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), query.join(entry.file_name())).unwrap();
    }
    let o = run(&[
        "predict",
        "--graph",
        p(&out.join("graph.json")),
        "--ranker",
        p(&out.join("ranker.json")),
        "--query",
        p(&query),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "rank,model_id,expected_rank");
    assert_eq!(lines.len(), 6);
    let mut ids: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap()).collect();
    for (i, l) in lines[1..].iter().enumerate() {
        assert!(l.starts_with(&format!("{},", i + 1)));
    }
    ids.sort();
    assert_eq!(ids, ["m00", "m01", "m02", "m03", "m04"]);

    // Naming the query after an existing dataset is a data error.
    let o = run(&[
        "predict",
        "--graph",
        p(&out.join("graph.json")),
        "--ranker",
        p(&out.join("ranker.json")),
        "--query",
        p(&query),
        "--query-id",
        "d01",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error_code=duplicate_id"), "{}", stderr(&o));
}

#[test]
fn eval_loo_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = tmp.path().join("bench");
    synth_small(&bench);
    let cfg = light_config(tmp.path());
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        fs::create_dir(&out).unwrap();
        let o = run(&[
            "eval",
            "loo",
            "--config",
            p(&cfg),
            "--bench",
            p(&bench),
            "--seed",
            "9",
            "--out",
            p(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        reports.push((
            fs::read(out.join("loo_match_and_choose.json")).unwrap(),
            fs::read(out.join("loo_match_and_choose.csv")).unwrap(),
        ));
    }
    assert_eq!(reports[0], reports[1]);
    let csv = String::from_utf8(reports[0].1.clone()).unwrap();
    assert!(csv.starts_with("dataset,selected,true_best,tau_w\n"));
    assert!(csv.contains("\nmetric,value\n"));
}

#[test]
fn eval_sparsity_and_ablation_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = tmp.path().join("bench");
    synth_small(&bench);
    let cfg = light_config(tmp.path());
    let out = tmp.path().join("out");
    fs::create_dir(&out).unwrap();
    let o = run(&[
        "eval",
        "sparsity",
        "--config",
        p(&cfg),
        "--bench",
        p(&bench),
        "--seed",
        "2",
        "--fractions",
        "0,0.5",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let tsv = fs::read_to_string(out.join("sparsity.tsv")).unwrap();
    assert_eq!(tsv.lines().next(), Some("fraction\tmean_osr\tstddev"));
    assert_eq!(tsv.lines().count(), 3);

    let o = run(&[
        "eval",
        "ablation",
        "--config",
        p(&cfg),
        "--bench",
        p(&bench),
        "--seed",
        "2",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for mode in ["both", "features_only", "graph_only"] {
        assert!(out.join(format!("ablation_{mode}.json")).exists());
    }
}

#[test]
fn flags_override_config_values() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("synth.json");
    fs::write(
        &cfg,
        r#"{"seed": 4, "synth": {"n_models": 4, "n_datasets": 6, "n_clusters": 2, "emb_dim": 3}}"#,
    )
    .unwrap();
    let bench = tmp.path().join("bench");
    let o = run(&["synth", "--config", p(&cfg), "--models", "6", "--out", p(&bench)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_dir(bench.join("models")).unwrap().count(), 6);
    assert_eq!(fs::read_dir(bench.join("datasets")).unwrap().count(), 6);

    let eval_cfg = tmp.path().join("eval.json");
    fs::write(&eval_cfg, r#"{"seed": 1, "method": "overall"}"#).unwrap();
    let out = tmp.path().join("out");
    fs::create_dir(&out).unwrap();
    let o = run(&[
        "eval",
        "loo",
        "--config",
        p(&eval_cfg),
        "--bench",
        p(&bench),
        "--method",
        "initial",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("loo_initial.json").exists());
    assert!(!out.join("loo_overall.json").exists());
}

#[test]
fn stats_from_raw_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let rows = tmp.path().join("rows");
    fs::create_dir(&rows).unwrap();
    let values: [[f32; 2]; 4] = [[1.0, 2.0], [3.0, 2.5], [2.0, 4.0], [0.0, 1.5]];
    let bytes: Vec<u8> = values.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(rows.join("rows.f32"), bytes).unwrap();
    fs::write(
        rows.join("rows_meta.json"),
        r#"{"n": 4, "dim": 2, "probe_id": "probe-a", "source_hash": "abc"}"#,
    )
    .unwrap();
    let out = tmp.path().join("stats");
    let o = run(&["stats", "--rows", p(&rows), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = load_stats(&out).unwrap();
    assert_eq!(s.count, 4);
    assert_eq!(s.probe_id, "probe-a");
    assert!((s.mean[0] - 1.5).abs() < 1e-5);
    assert!((s.mean[1] - 2.5).abs() < 1e-5);
    // Sample variance of [1, 3, 2, 0].
    assert!((s.cov[(0, 0)] - 5.0 / 3.0).abs() < 1e-5);
}

#[test]
fn duplicate_rows_give_near_zero_covariance() {
    let tmp = tempfile::tempdir().unwrap();
    let rows = tmp.path().join("rows");
    fs::create_dir(&rows).unwrap();
    let row = [0.25f32, -1.0, 3.0];
    let bytes: Vec<u8> = (0..3).flat_map(|_| row.iter().flat_map(|v| v.to_le_bytes())).collect();
    fs::write(rows.join("rows.f32"), bytes).unwrap();
    fs::write(rows.join("rows_meta.json"), r#"{"n": 3, "dim": 3, "probe_id": "p"}"#).unwrap();
    let out = tmp.path().join("stats");
    let o = run(&["stats", "--rows", p(&rows), "--out", p(&out), "--no-shrinkage"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = load_stats(&out).unwrap();
    assert!(s.cov.iter().all(|v| v.abs() < 1e-9));
    assert!((s.mean[2] - 3.0).abs() < 1e-6);
}

#[test]
fn help_on_every_subcommand() {
    for args in [
        vec!["--help"],
        vec!["synth", "--help"],
        vec!["graph", "--help"],
        vec!["train", "--help"],
        vec!["predict", "--help"],
        vec!["eval", "--help"],
        vec!["eval", "loo", "--help"],
        vec!["eval", "sparsity", "--help"],
        vec!["eval", "ablation", "--help"],
        vec!["stats", "--help"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(0), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"), "{args:?}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let o = run(&["synth", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error_code=usage"));

    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["synth", "--out", p(&tmp.path().join("b"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error_code="), "{}", stderr(&o));

    let o = run(&["eval", "loo", "--bench", p(&tmp.path().join("missing")), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn malformed_data_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = tmp.path().join("bench");
    synth_small(&bench);
    fs::write(
        bench.join("perf.csv"),
        "model_id,dataset_id,score\nm00,d00,not-a-number\n",
    )
    .unwrap();
    let o = run(&[
        "eval",
        "loo",
        "--bench",
        p(&bench),
        "--seed",
        "1",
        "--method",
        "overall",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error_code="));
}
