//! Result tables: per-seed records on disk, aggregated F-measure tables and
//! Sharpe / CEQ tables, rendered as CSV and monospace text.
//!
//! Rows follow the strategy order 2D-CNNpred, 3D-CNNpred, GAT, GCN,
//! GAT-CNNpred, GCN-CNNpred; columns follow S&P 500, DJI, NASDAQ, NYSE,
//! RUSSELL, with Combination appended for trading tables. Absent cells are
//! empty in CSV and `—` in text.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backtest::{Metrics, StrategyRow, ALWAYS_LONG};
use crate::error::{Error, Result};
use crate::market::{Market, NUM_MARKETS};
use crate::model::Preset;
use crate::trainer::{aggregate_best, aggregate_mean, ExperimentResult};

pub const COMBINATION: &str = "Combination";
const ABSENT_TEXT: &str = "—";

/// Row label of a preset: the family, plus the layout for hybrids.
pub fn row_label(preset: Preset) -> String {
    let family = preset.family().label();
    if Preset::HYBRIDS.contains(&preset) {
        format!("{family} ({})", preset.label())
    } else {
        family.to_string()
    }
}

fn preset_order(a: &Preset, b: &Preset) -> std::cmp::Ordering {
    (a.family(), *a).cmp(&(b.family(), *b))
}

/// A titled grid of optional numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl Table {
    pub fn new(title: impl Into<String>, columns: Vec<String>) -> Self {
        Self {
            title: title.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn index_columns(with_combination: bool) -> Vec<String> {
        let mut cols: Vec<String> = Market::ALL.iter().map(|m| m.label().to_string()).collect();
        if with_combination {
            cols.push(COMBINATION.to_string());
        }
        cols
    }

    pub fn push_row(&mut self, label: impl Into<String>, cells: Vec<Option<f64>>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push((label.into(), cells));
    }

    pub fn row(&self, label: &str) -> Option<&[Option<f64>]> {
        self.rows.iter().find(|(l, _)| l == label).map(|(_, c)| c.as_slice())
    }

    /// Shortest round-trip formatting, so reading the file back is exact.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["strategy".to_string()];
        header.extend(self.columns.iter().cloned());
        wtr.write_record(&header).map_err(csv_err)?;
        for (label, cells) in &self.rows {
            let mut rec = vec![label.clone()];
            rec.extend(cells.iter().map(|c| c.map_or(String::new(), |v| v.to_string())));
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv(r: impl Read, title: impl Into<String>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        if headers.is_empty() {
            return Err(Error::Schema("table file has no header".into()));
        }
        let mut table = Table::new(title, headers.iter().skip(1).map(str::to_string).collect());
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let cells = rec
                .iter()
                .skip(1)
                .map(|s| {
                    if s.is_empty() {
                        Ok(None)
                    } else {
                        s.parse::<f64>()
                            .map(Some)
                            .map_err(|_| Error::Schema(format!("bad table cell `{s}`")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            table.push_row(&rec[0], cells);
        }
        Ok(table)
    }

    pub fn render_text(&self, decimals: usize) -> String {
        let cell = |c: &Option<f64>| c.map_or(ABSENT_TEXT.to_string(), |v| format!("{v:.decimals$}"));
        let body: Vec<(String, Vec<String>)> = self
            .rows
            .iter()
            .map(|(l, cs)| (l.clone(), cs.iter().map(cell).collect()))
            .collect();
        let width = |s: &str| s.chars().count();
        let first = body
            .iter()
            .map(|(l, _)| width(l))
            .chain([width("Strategy")])
            .max()
            .unwrap_or(0);
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(k, c)| body.iter().map(|(_, cs)| width(&cs[k])).chain([width(c)]).max().unwrap_or(0))
            .collect();
        let pad = |s: &str, w: usize, right: bool| {
            let fill = " ".repeat(w.saturating_sub(width(s)));
            if right {
                format!("{fill}{s}")
            } else {
                format!("{s}{fill}")
            }
        };
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title);
        let mut line = pad("Strategy", first, false);
        for (c, w) in self.columns.iter().zip(&widths) {
            line.push_str("  ");
            line.push_str(&pad(c, *w, true));
        }
        let rule = "-".repeat(width(&line));
        let _ = writeln!(out, "{line}\n{rule}");
        for (l, cs) in &body {
            let mut line = pad(l, first, false);
            for (c, w) in cs.iter().zip(&widths) {
                line.push_str("  ");
                line.push_str(&pad(c, *w, true));
            }
            let _ = writeln!(out, "{}", line.trim_end());
        }
        out
    }

    pub fn save(&self, dir: impl AsRef<Path>, stem: &str, decimals: usize) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        std::fs::write(dir.join(format!("{stem}.txt")), self.render_text(decimals))?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Schema(format!("csv: {e}"))
}

/// Test F-measures of one (preset, seed) job; `f_measure` is absent when
/// the job failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub preset: Preset,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub sp500: Option<f64>,
    pub dji: Option<f64>,
    pub nasdaq: Option<f64>,
    pub nyse: Option<f64>,
    pub russell: Option<f64>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn f_measure(&self) -> Option<[f64; NUM_MARKETS]> {
        Some([self.sp500?, self.dji?, self.nasdaq?, self.nyse?, self.russell?])
    }

    pub fn from_result(result: &ExperimentResult) -> Vec<Self> {
        result
            .runs
            .iter()
            .map(|r| {
                let f = r.outcome.as_ref().ok().map(|o| o.test.f_measure);
                let cell = |k: usize| f.map(|f| f[k]);
                RunRecord {
                    preset: r.preset,
                    seed: r.seed,
                    best_epoch: r.outcome.as_ref().ok().map(|o| o.best_epoch),
                    sp500: cell(0),
                    dji: cell(1),
                    nasdaq: cell(2),
                    nyse: cell(3),
                    russell: cell(4),
                    error: r.outcome.as_ref().err().cloned(),
                }
            })
            .collect()
    }
}

pub fn write_records<T: Serialize>(records: &[T], w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_records<T: for<'de> Deserialize<'de>>(r: impl Read) -> Result<Vec<T>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    Mean,
    Best,
}

/// One row per preset present in `records`, in table order, aggregating the
/// successful seeds. A preset with no successful seed renders as absent.
pub fn f_measure_table(records: &[RunRecord], how: Aggregate) -> Table {
    let title = match how {
        Aggregate::Mean => "Mean F-measure",
        Aggregate::Best => "Best F-measure",
    };
    let mut table = Table::new(title, Table::index_columns(false));
    let mut presets: Vec<Preset> = Vec::new();
    for r in records {
        if !presets.contains(&r.preset) {
            presets.push(r.preset);
        }
    }
    presets.sort_by(preset_order);
    for p in presets {
        let scores: Vec<[f64; NUM_MARKETS]> = records
            .iter()
            .filter(|r| r.preset == p)
            .filter_map(RunRecord::f_measure)
            .collect();
        let agg = match how {
            Aggregate::Mean => aggregate_mean(&scores),
            Aggregate::Best => aggregate_best(&scores),
        };
        let cells = match agg {
            Some(a) => a.iter().map(|&v| Some(v)).collect(),
            None => vec![None; NUM_MARKETS],
        };
        table.push_row(row_label(p), cells);
    }
    table
}

/// Trading metrics of one strategy on one index or the combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestRecord {
    pub strategy: String,
    /// Absent for the always-long row.
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    /// Index code or `Combination`.
    pub column: String,
    pub sharpe: Option<f64>,
    pub annual_sharpe: Option<f64>,
    pub ceq: f64,
}

impl BacktestRecord {
    pub fn from_row(row: &StrategyRow, preset: Option<Preset>, seed: Option<u64>) -> Vec<Self> {
        let make = |column: &str, m: &Metrics| BacktestRecord {
            strategy: row.name.clone(),
            preset,
            seed,
            column: column.to_string(),
            sharpe: m.sharpe,
            annual_sharpe: m.annual_sharpe,
            ceq: m.ceq,
        };
        let mut out: Vec<Self> = Market::ALL
            .iter()
            .zip(&row.per_index)
            .map(|(mk, m)| make(mk.code(), m))
            .collect();
        out.push(make(COMBINATION, &row.combination));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TradingMetric {
    Sharpe,
    AnnualSharpe,
    Ceq,
}

impl TradingMetric {
    pub fn title(self) -> &'static str {
        match self {
            TradingMetric::Sharpe => "Sharpe ratio",
            TradingMetric::AnnualSharpe => "Annualized Sharpe ratio",
            TradingMetric::Ceq => "CEQ return",
        }
    }

    fn pick(self, r: &BacktestRecord) -> Option<f64> {
        match self {
            TradingMetric::Sharpe => r.sharpe,
            TradingMetric::AnnualSharpe => r.annual_sharpe,
            TradingMetric::Ceq => Some(r.ceq),
        }
    }
}

/// Row order key: rank, then preset in table order, then strategy name.
type GroupKey = (u8, Option<(crate::model::Family, Preset)>, String);

/// Always-long first, then one row per preset in table order. Seeds of one
/// preset are averaged over the seeds whose metric is defined.
pub fn trading_table(records: &[BacktestRecord], metric: TradingMetric) -> Table {
    let mut table = Table::new(metric.title(), Table::index_columns(true));
    let codes: Vec<&str> = Market::ALL.iter().map(|m| m.code()).chain([COMBINATION]).collect();
    let mut groups: BTreeMap<GroupKey, Vec<&BacktestRecord>> = BTreeMap::new();
    for r in records {
        let key = match r.preset {
            None if r.strategy == ALWAYS_LONG => (0, None, r.strategy.clone()),
            None => (2, None, r.strategy.clone()),
            Some(p) => (1, Some((p.family(), p)), row_label(p)),
        };
        groups.entry(key).or_default().push(r);
    }
    for ((_, _, label), rs) in groups {
        let cells = codes
            .iter()
            .map(|code| {
                let vals: Vec<f64> = rs
                    .iter()
                    .filter(|r| r.column == *code)
                    .filter_map(|r| metric.pick(r))
                    .collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect();
        table.push_row(label, cells);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(preset: Preset, seed: u64, f: Option<[f64; 5]>) -> RunRecord {
        let c = |k: usize| f.map(|f| f[k]);
        RunRecord {
            preset,
            seed,
            best_epoch: f.map(|_| 3),
            sp500: c(0),
            dji: c(1),
            nasdaq: c(2),
            nyse: c(3),
            russell: c(4),
            error: f.is_none().then(|| "boom".to_string()),
        }
    }

    #[test]
    fn labels() {
        assert_eq!(row_label(Preset::Cnnpred2d), "2D-CNNpred");
        assert_eq!(row_label(Preset::Gat), "GAT");
        assert_eq!(row_label(Preset::CnnGcnCnn), "GCN-CNNpred (CNN-GCN-CNN)");
    }

    #[test]
    fn f_table_order_and_aggregation() {
        let recs = vec![
            rec(Preset::GcnCnn, 1, Some([0.5; 5])),
            rec(Preset::Cnnpred2d, 1, Some([0.4, 0.5, 0.6, 0.4, 0.5])),
            rec(Preset::Cnnpred2d, 2, Some([0.6, 0.3, 0.6, 0.5, 0.5])),
            rec(Preset::Gat, 1, None),
        ];
        let mean = f_measure_table(&recs, Aggregate::Mean);
        let labels: Vec<&str> = mean.rows.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(labels, ["2D-CNNpred", "GAT", "GCN-CNNpred (GCN-CNN)"]);
        let row = mean.row("2D-CNNpred").unwrap();
        assert!((row[0].unwrap() - 0.5).abs() < 1e-15);
        assert!((row[1].unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(mean.row("GAT").unwrap(), &[None; 5]);
        let best = f_measure_table(&recs, Aggregate::Best);
        assert_eq!(best.row("2D-CNNpred").unwrap()[0], Some(0.6));
        assert_eq!(best.row("2D-CNNpred").unwrap()[1], Some(0.5));
        let text = mean.render_text(4);
        assert!(text.contains("—"));
        assert!(text.contains("0.5000"));
    }

    #[test]
    fn table_csv_round_trip() {
        let mut t = Table::new("x", Table::index_columns(true));
        t.push_row("a", vec![Some(0.1), None, Some(1.0 / 3.0), Some(-2.5), Some(0.0), None]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(Table::read_csv(buf.as_slice(), "x").unwrap(), t);
    }

    #[test]
    fn records_round_trip() {
        let recs = vec![rec(Preset::CnnGat, 7, Some([0.1, 0.2, 0.3, 0.4, 0.5])), rec(Preset::Gcn, 1, None)];
        let mut buf = Vec::new();
        write_records(&recs, &mut buf).unwrap();
        assert_eq!(read_records::<RunRecord>(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn trading_table_puts_always_long_first() {
        let m = Metrics {
            sharpe: Some(0.1),
            annual_sharpe: Some(1.5),
            ceq: 0.001,
        };
        let row = |name: &str| StrategyRow {
            name: name.into(),
            per_index: [m; 5],
            combination: Metrics { sharpe: None, ..m },
            pnl: Vec::new(),
        };
        let mut recs = BacktestRecord::from_row(&row("x"), Some(Preset::GatCnn), Some(1));
        recs.extend(BacktestRecord::from_row(&row(ALWAYS_LONG), None, None));
        let t = trading_table(&recs, TradingMetric::Sharpe);
        assert_eq!(t.rows[0].0, ALWAYS_LONG);
        assert_eq!(t.rows[1].0, "GAT-CNNpred (GAT-CNN)");
        assert_eq!(t.rows[1].1[5], None);
        assert_eq!(t.rows[1].1[0], Some(0.1));
        assert_eq!(t.columns.last().unwrap(), COMBINATION);
    }
}
