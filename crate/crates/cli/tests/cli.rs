use std::path::Path;
use std::process::{Command, Output};

use graphcnnpred::synth::{synthetic_tables, write_tables, SynthOptions};

const BIN: &str = env!("CARGO_BIN_EXE_graphcnnpred");

const CONFIG: &str = r#"
[data]
window = 20
[model]
presets = ["gat-cnn", "cnnpred-3d"]
labeling = "012"
pool = "max"
[train]
batch_size = 16
max_epochs = 3
patience = 1
learning_rate = 0.005
[run]
seeds = [1]
"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        write_tables(&dir.path().join("data"), &synthetic_tables(SynthOptions::default())).unwrap();
        std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .args(args)
            .arg("--config")
            .arg(self.path().join("run.toml"))
            .arg("--out")
            .arg(self.path().join("out"))
            .env("GRAPHCNNPRED_DATA_DIR", self.path().join("data"))
            .output()
            .unwrap()
    }
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn prepare_is_idempotent_and_logs_graph_stats() {
    let fx = Fixture::new();
    let first = fx.run(&["prepare"]);
    ok(&first);
    let bytes = std::fs::read(fx.path().join("out/prepared.gcp")).unwrap();
    let stderr = String::from_utf8_lossy(&first.stderr);
    assert!(stderr.contains("edges"), "{stderr}");
    ok(&fx.run(&["prepare"]));
    assert_eq!(std::fs::read(fx.path().join("out/prepared.gcp")).unwrap(), bytes);
    let edges = std::fs::read_to_string(fx.path().join("out/graph_edges.txt")).unwrap();
    assert!(edges.starts_with("# nodes"));
}

#[test]
fn missing_market_file_names_the_market() {
    let fx = Fixture::new();
    std::fs::remove_file(fx.path().join("data/Processed_NYSE.csv")).unwrap();
    let o = fx.run(&["prepare"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("NYSE"));
}

#[test]
fn config_errors_exit_with_code_two() {
    let fx = Fixture::new();
    let o = fx.run(&["prepare", "--tau", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = fx.run(&["train", "--labeling", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_backtest_report_pipeline() {
    let fx = Fixture::new();
    ok(&fx.run(&["prepare"]));
    ok(&fx.run(&["train"]));
    let out = fx.path().join("out");
    assert!(out.join("weights/gat-cnn_seed1.gcw").is_file());
    assert!(out.join("predictions/cnnpred-3d_seed1.csv").is_file());
    let mean = std::fs::read_to_string(out.join("results/f_mean.csv")).unwrap();
    let rows: Vec<&str> = mean.lines().collect();
    assert_eq!(rows.len(), 3, "{mean}");
    assert!(rows[1].starts_with("3D-CNNpred"));
    assert!(rows[2].starts_with("GAT-CNNpred (GAT-CNN)"));

    ok(&fx.run(&["backtest"]));
    let from_preds = std::fs::read(out.join("backtest/records.csv")).unwrap();
    let sharpe = std::fs::read_to_string(out.join("backtest/sharpe.csv")).unwrap();
    assert!(sharpe.lines().nth(1).unwrap().starts_with("Always long"));
    assert!(sharpe.lines().next().unwrap().ends_with("Combination"));

    ok(&fx.run(&["backtest", "--from-weights"]));
    assert_eq!(std::fs::read(out.join("backtest/records.csv")).unwrap(), from_preds);

    ok(&fx.run(&["backtest", "--always-long-only"]));
    let only = std::fs::read_to_string(out.join("backtest/sharpe.csv")).unwrap();
    assert_eq!(only.lines().count(), 2);

    let report = fx.run(&["report"]);
    ok(&report);
    assert!(out.join("report/f_best.txt").is_file());
    assert!(out.join("report/ceq.csv").is_file());
    assert!(String::from_utf8_lossy(&report.stdout).contains("Mean F-measure"));
}

#[test]
fn train_refuses_stale_dataset() {
    let fx = Fixture::new();
    ok(&fx.run(&["prepare"]));
    let o = fx.run(&["train", "--tau", "0.5"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stale"));
}

#[test]
fn misaligned_predictions_fail_the_backtest() {
    let fx = Fixture::new();
    ok(&fx.run(&["prepare"]));
    let preds = fx.path().join("preds");
    std::fs::create_dir_all(&preds).unwrap();
    std::fs::write(
        preds.join("gat_seed1.csv"),
        "date,SP500,DJI,NASDAQ,NYSE,RUSSELL,SP500_p0,DJI_p0,NASDAQ_p0,NYSE_p0,RUSSELL_p0\n\
         2001-01-02,1,0,1,0,1,0.9,0.1,0.8,0.2,0.7\n",
    )
    .unwrap();
    let o = fx.run(&["backtest", "--predictions", preds.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alignment"));
}

#[test]
fn report_merges_run_directories() {
    let fx = Fixture::new();
    ok(&fx.run(&["prepare"]));
    ok(&fx.run(&["train", "--preset", "cnnpred-3d"]));
    let a = fx.path().join("out");
    let b = fx.path().join("out_b");
    let copy = Command::new("cp").arg("-r").arg(&a).arg(&b).status().unwrap();
    assert!(copy.success());
    let runs = std::fs::read_to_string(b.join("results/runs.csv")).unwrap();
    std::fs::write(b.join("results/runs.csv"), runs.replace(",1,", ",2,")).unwrap();
    let o = fx.run(&["report", "--results", a.to_str().unwrap(), "--results", b.to_str().unwrap()]);
    ok(&o);
    let best = std::fs::read_to_string(a.join("report/f_mean.csv")).unwrap();
    let single = std::fs::read_to_string(a.join("results/f_mean.csv")).unwrap();
    // two identical seeds: mean equals the single run
    assert_eq!(best, single);
}

#[test]
fn report_without_results_is_a_data_error() {
    let fx = Fixture::new();
    let o = fx.run(&["report"]);
    assert_eq!(o.status.code(), Some(3));
}
