//! The four pipeline stages. Output layout under the run directory:
//!
//! ```text
//! prepared.gcp                 prepared dataset
//! graph_edges.txt              feature graph edge list and degrees
//! weights/<preset>_seed<k>.gcw trained parameters
//! predictions/<preset>_seed<k>.csv
//! results/runs.csv             per-seed test F-measures
//! results/f_mean.{csv,txt}, results/f_best.{csv,txt}
//! backtest/records.csv         per-strategy, per-column metrics
//! backtest/{sharpe,annual_sharpe,ceq}.{csv,txt}
//! report/*.{csv,txt}           merged tables
//! ```

use std::path::{Path, PathBuf};

use gradcore::store::{Container, KIND_WEIGHTS};
use graphcnnpred::backtest::{
    always_long, evaluate_strategy, positions_from_binary, positions_from_ternary,
};
use graphcnnpred::dataprep::load_market_csv;
use graphcnnpred::dataset::PreparedDataset;
use graphcnnpred::graphbuild::graph_stats;
use graphcnnpred::model::{HeadKind, Network, PredictionSeries, Preset};
use graphcnnpred::report::{
    f_measure_table, read_records, row_label, trading_table, write_records, Aggregate,
    BacktestRecord, RunRecord, TradingMetric,
};
use graphcnnpred::trainer::run_experiments;
use graphcnnpred::{Market, NUM_MARKETS};

use crate::config::{hex, Resolved};
use crate::error::CliError;

pub const PREPARED_FILE: &str = "prepared.gcp";
pub const GRAPH_FILE: &str = "graph_edges.txt";
const DECIMALS: usize = 4;

fn job_stem(preset: Preset, seed: u64) -> String {
    format!("{}_seed{seed}", preset.name())
}

fn parse_stem(stem: &str) -> Option<(Preset, u64)> {
    let (p, s) = stem.rsplit_once("_seed")?;
    Some((p.parse().ok()?, s.parse().ok()?))
}

/// Files in `dir` with extension `ext`, sorted by name.
fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    Ok(out)
}

fn reset_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn prepare(res: &Resolved) -> Result<PreparedDataset, CliError> {
    let mut tables = Vec::with_capacity(NUM_MARKETS);
    for (m, path) in Market::ALL.iter().zip(&res.files) {
        if !path.is_file() {
            return Err(CliError::Data(format!("{m}: market file {} not found", path.display())));
        }
        tables.push(load_market_csv(path, *m).map_err(CliError::data)?);
    }
    let ds = PreparedDataset::prepare(&tables, res.prepare, res.prepare_hash()).map_err(CliError::data)?;
    std::fs::create_dir_all(&res.out)?;
    ds.save(res.out.join(PREPARED_FILE)).map_err(CliError::data)?;
    std::fs::write(res.out.join(GRAPH_FILE), ds.graph.to_edge_list())?;
    let (a, b, c) = ds.split_sizes;
    eprintln!(
        "prepared {} dates x {} features; windows train {a} / validation {b} / test {c}",
        ds.dates.len(),
        ds.num_features()
    );
    eprintln!("{}", graph_stats(&ds.graph));
    Ok(ds)
}

/// Load the prepared dataset and refuse it when the config has drifted.
pub fn load_prepared(res: &Resolved) -> Result<PreparedDataset, CliError> {
    let path = res.out.join(PREPARED_FILE);
    if !path.is_file() {
        return Err(CliError::Data(format!(
            "{} not found; run `prepare` first",
            path.display()
        )));
    }
    let ds = PreparedDataset::load(&path).map_err(CliError::data)?;
    let expect = res.prepare_hash();
    if ds.config_hash != expect {
        return Err(CliError::Data(format!(
            "stale prepared dataset {}: built for config {}, current config is {}; rerun `prepare`",
            path.display(),
            hex(&ds.config_hash),
            hex(&expect)
        )));
    }
    Ok(ds)
}

pub fn train(res: &Resolved) -> Result<Vec<RunRecord>, CliError> {
    let ds = load_prepared(res)?;
    let splits = ds.splits(res.labeling).map_err(CliError::data)?;
    let result = run_experiments(&res.plan(), &splits, &ds.graph).map_err(CliError::training)?;

    let weights_dir = res.out.join("weights");
    let pred_dir = res.out.join("predictions");
    let results_dir = res.out.join("results");
    reset_dir(&weights_dir)?;
    reset_dir(&pred_dir)?;
    std::fs::create_dir_all(&results_dir)?;
    let dates = ds.test_dates();
    for run in &result.runs {
        let stem = job_stem(run.preset, run.seed);
        match &run.outcome {
            Ok(out) => {
                let hash = res.weights_hash(&ds.config_hash, run.preset, run.seed);
                Container::from_params(KIND_WEIGHTS, hash, out.network.params())
                    .save(weights_dir.join(format!("{stem}.gcw")))
                    .map_err(|e| CliError::Io(e.to_string()))?;
                let mut series = PredictionSeries::new(res.head);
                for (d, o) in dates.iter().zip(&out.test.outputs) {
                    series.push(*d, o).map_err(CliError::training)?;
                }
                series
                    .save_csv(pred_dir.join(format!("{stem}.csv")))
                    .map_err(CliError::training)?;
                eprintln!(
                    "{stem}: best epoch {} of {}, test mean F {:.4}",
                    out.best_epoch + 1,
                    out.history.len(),
                    out.test.mean_f()
                );
            }
            Err(e) => eprintln!("{stem}: failed: {e}"),
        }
    }
    let records = RunRecord::from_result(&result);
    write_records(&records, std::fs::File::create(results_dir.join("runs.csv"))?).map_err(CliError::training)?;
    let mean = f_measure_table(&records, Aggregate::Mean);
    f_measure_table(&records, Aggregate::Best)
        .save(&results_dir, "f_best", DECIMALS)
        .map_err(CliError::training)?;
    mean.save(&results_dir, "f_mean", DECIMALS).map_err(CliError::training)?;
    println!("{}", mean.render_text(DECIMALS));
    if records.iter().all(|r| r.error.is_some()) {
        let first = records.first().and_then(|r| r.error.clone()).unwrap_or_default();
        return Err(CliError::Training(format!("every training job failed; first: {first}")));
    }
    Ok(records)
}

/// Where model positions come from.
#[derive(Debug, Clone)]
pub enum Signals {
    /// Prediction CSVs in this directory.
    Predictions(PathBuf),
    /// Run inference from weight files in this directory.
    Weights(PathBuf),
    /// Always-long calibration row only.
    None,
}

fn positions(series: &PredictionSeries) -> Result<Vec<[i8; NUM_MARKETS]>, CliError> {
    let mut cols = Vec::with_capacity(NUM_MARKETS);
    for m in Market::ALL {
        let classes = series.column(m);
        let p = match series.head {
            HeadKind::Binary5 => positions_from_binary(&classes),
            HeadKind::Ternary15 => positions_from_ternary(&classes),
        }
        .map_err(CliError::backtest)?;
        cols.push(p);
    }
    Ok((0..series.len()).map(|t| std::array::from_fn(|k| cols[k][t])).collect())
}

fn infer(res: &Resolved, ds: &PreparedDataset, path: &Path, preset: Preset, seed: u64) -> Result<PredictionSeries, CliError> {
    let c = Container::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if c.hash != res.weights_hash(&ds.config_hash, preset, seed) {
        return Err(CliError::Data(format!(
            "stale weights {}: trained under a different config",
            path.display()
        )));
    }
    let config = res.plan().network_config(preset, ds.window(), ds.num_features());
    let net = Network::from_params(config, Some(&ds.graph), &c.to_params()).map_err(CliError::data)?;
    let test = ds.splits(res.labeling).map_err(CliError::data)?.test;
    let mut series = PredictionSeries::new(res.head);
    for s in &test {
        let out = net.predict(&s.input).map_err(CliError::backtest)?;
        series.push(ds.dates[s.anchor], &out).map_err(CliError::backtest)?;
    }
    Ok(series)
}

pub fn backtest(res: &Resolved, signals: &Signals) -> Result<Vec<BacktestRecord>, CliError> {
    let ds = load_prepared(res)?;
    let returns = ds.test_daily_returns();
    let dates = ds.test_dates();
    let mut records = BacktestRecord::from_row(&always_long(&returns, res.ceq).map_err(CliError::backtest)?, None, None);

    let mut jobs: Vec<(Preset, u64, PredictionSeries)> = Vec::new();
    match signals {
        Signals::None => {}
        Signals::Predictions(dir) => {
            for path in list_files(dir, "csv")? {
                let Some((preset, seed)) = path.file_stem().and_then(|s| s.to_str()).and_then(parse_stem) else {
                    eprintln!("skipping {}: not a <preset>_seed<k> file", path.display());
                    continue;
                };
                let series = PredictionSeries::load_csv(&path).map_err(CliError::backtest)?;
                jobs.push((preset, seed, series));
            }
        }
        Signals::Weights(dir) => {
            for path in list_files(dir, "gcw")? {
                let Some((preset, seed)) = path.file_stem().and_then(|s| s.to_str()).and_then(parse_stem) else {
                    continue;
                };
                let series = infer(res, &ds, &path, preset, seed)?;
                jobs.push((preset, seed, series));
            }
        }
    }
    for (preset, seed, series) in &jobs {
        if series.dates != dates {
            return Err(CliError::Backtest(format!(
                "alignment: {} seed {seed} predicts {} dates starting {:?}, the test segment has {} starting {:?}",
                preset.name(),
                series.len(),
                series.dates.first(),
                dates.len(),
                dates.first()
            )));
        }
        let row = evaluate_strategy(row_label(*preset), &positions(series)?, &returns, res.ceq)
            .map_err(CliError::backtest)?;
        records.extend(BacktestRecord::from_row(&row, Some(*preset), Some(*seed)));
    }

    let dir = res.out.join("backtest");
    std::fs::create_dir_all(&dir)?;
    write_records(&records, std::fs::File::create(dir.join("records.csv"))?).map_err(CliError::backtest)?;
    for (metric, stem) in [
        (TradingMetric::Sharpe, "sharpe"),
        (TradingMetric::AnnualSharpe, "annual_sharpe"),
        (TradingMetric::Ceq, "ceq"),
    ] {
        let t = trading_table(&records, metric);
        t.save(&dir, stem, DECIMALS).map_err(CliError::backtest)?;
        if metric == TradingMetric::Sharpe {
            println!("{}", t.render_text(DECIMALS));
        }
    }
    Ok(records)
}

/// Merge run and backtest records from one or more run directories into
/// `<out>/report`.
pub fn report(run_dirs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut runs: Vec<RunRecord> = Vec::new();
    let mut trades: Vec<BacktestRecord> = Vec::new();
    let mut found = 0;
    for dir in run_dirs {
        let r = dir.join("results").join("runs.csv");
        if r.is_file() {
            runs.extend(read_records::<RunRecord>(std::fs::File::open(&r)?).map_err(CliError::data)?);
            found += 1;
        }
        let b = dir.join("backtest").join("records.csv");
        if b.is_file() {
            trades.extend(read_records::<BacktestRecord>(std::fs::File::open(&b)?).map_err(CliError::data)?);
            found += 1;
        }
    }
    if found == 0 {
        return Err(CliError::Data("no results/runs.csv or backtest/records.csv found".into()));
    }
    // always-long rows repeat per directory; keep one copy of each
    let mut seen = std::collections::HashSet::new();
    trades.retain(|r| r.preset.is_some() || seen.insert((r.strategy.clone(), r.column.clone())));

    let dir = out.join("report");
    std::fs::create_dir_all(&dir)?;
    let mut tables = Vec::new();
    if !runs.is_empty() {
        tables.push((f_measure_table(&runs, Aggregate::Mean), "f_mean"));
        tables.push((f_measure_table(&runs, Aggregate::Best), "f_best"));
    }
    if !trades.is_empty() {
        tables.push((trading_table(&trades, TradingMetric::Sharpe), "sharpe"));
        tables.push((trading_table(&trades, TradingMetric::AnnualSharpe), "annual_sharpe"));
        tables.push((trading_table(&trades, TradingMetric::Ceq), "ceq"));
    }
    for (t, stem) in &tables {
        t.save(&dir, stem, DECIMALS).map_err(CliError::data)?;
        println!("{}", t.render_text(DECIMALS));
    }
    Ok(())
}
