//! Market CSV ingestion, panel alignment, labelling, normalisation,
//! windowing and chronological splitting.
//!
//! Row position `t` of an aligned panel is a trading date. The return and
//! label attached to position `t` look forward (`Close[t+n] / Close[t] - 1`),
//! so a window anchored at `t` holds feature rows `t-d+1 ..= t` and is
//! labelled with the return realised after `t`.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use gradcore::Array;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{
    is_market_specific, Market, CANONICAL_FEATURES, CLOSE_COLUMN, COMBINED_WIDTH, DATE_COLUMN,
    NAME_COLUMN, NUM_MARKETS,
};

pub const DEFAULT_WINDOW: usize = 60;
pub const TERNARY_LOW_PERCENTILE: f64 = 0.35;
pub const TERNARY_HIGH_PERCENTILE: f64 = 0.65;
pub const MAX_HORIZON: usize = 10;

const DATE_FORMAT: &str = "%Y-%m-%d";

/// One market file: date-sorted rows of feature values. Missing cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMarketTable {
    pub market: Market,
    pub dates: Vec<NaiveDate>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl RawMarketTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Whether the feature columns are exactly the canonical 82.
    pub fn is_canonical(&self) -> bool {
        self.columns.len() == CANONICAL_FEATURES.len()
            && CANONICAL_FEATURES
                .iter()
                .all(|c| self.columns.iter().any(|x| x == c))
    }
}

pub fn load_market_csv(path: impl AsRef<Path>, market: Market) -> Result<RawMarketTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Schema(format!("{market}: cannot open {}: {e}", path.display()))
    })?;
    read_market_csv(file, &path.display().to_string(), market)
}

/// Parse a market table from any reader; `source` names it in errors.
pub fn read_market_csv(reader: impl Read, source: &str, market: Market) -> Result<RawMarketTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let date_idx = headers
        .iter()
        .position(|h| h.trim() == DATE_COLUMN)
        .ok_or_else(|| Error::Schema(format!("{source}: missing required column `{DATE_COLUMN}`")))?;
    let feature_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| i != date_idx && headers[i].trim() != NAME_COLUMN)
        .collect();
    let columns: Vec<String> = feature_idx
        .iter()
        .map(|&i| headers[i].trim().to_string())
        .collect();
    if !columns.iter().any(|c| c == CLOSE_COLUMN) {
        return Err(Error::Schema(format!(
            "{source}: missing required column `{CLOSE_COLUMN}`"
        )));
    }

    let mut dated: Vec<(NaiveDate, u64, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let date = NaiveDate::parse_from_str(rec[date_idx].trim(), DATE_FORMAT)
            .map_err(|e| parse_err(line, format!("bad date `{}`: {e}", &rec[date_idx])))?;
        let mut row = Vec::with_capacity(feature_idx.len());
        for (&i, name) in feature_idx.iter().zip(&columns) {
            row.push(parse_cell(&rec[i]).ok_or_else(|| {
                parse_err(line, format!("column `{name}`: bad value `{}`", &rec[i]))
            })?);
        }
        dated.push((date, line, row));
    }
    dated.sort_by_key(|(d, _, _)| *d);
    for w in dated.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(parse_err(w[1].1, format!("duplicate date {}", w[1].0)));
        }
    }
    let (dates, rows) = dated.into_iter().map(|(d, _, r)| (d, r)).unzip();
    Ok(RawMarketTable {
        market,
        dates,
        columns,
        rows,
    })
}

/// Write a table in the format [`read_market_csv`] accepts; NaN cells are
/// left empty.
pub fn write_market_csv(table: &RawMarketTable, w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec![DATE_COLUMN.to_string()];
    header.extend(table.columns.iter().cloned());
    wtr.write_record(&header)
        .map_err(|e| Error::Schema(format!("csv: {e}")))?;
    for (d, row) in table.dates.iter().zip(&table.rows) {
        let mut rec = vec![d.format(DATE_FORMAT).to_string()];
        rec.extend(row.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
        wtr.write_record(&rec)
            .map_err(|e| Error::Schema(format!("csv: {e}")))?;
    }
    wtr.flush()?;
    Ok(())
}

fn parse_cell(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") {
        return Some(f64::NAN);
    }
    s.parse().ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PanelMode {
    Single(Market),
    Combined,
}

impl fmt::Display for PanelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PanelMode::Single(m) => write!(f, "single:{m}"),
            PanelMode::Combined => f.write_str("combined"),
        }
    }
}

impl FromStr for PanelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("combined") {
            return Ok(PanelMode::Combined);
        }
        match s.split_once(':') {
            Some((kind, m)) if kind.eq_ignore_ascii_case("single") => {
                Ok(PanelMode::Single(m.parse()?))
            }
            _ => Err(Error::Config(format!(
                "mode must be `combined` or `single:<MARKET>`, got `{s}`"
            ))),
        }
    }
}

/// Five markets restricted to their common dates.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPanel {
    pub mode: PanelMode,
    pub dates: Vec<NaiveDate>,
    pub feature_names: Vec<String>,
    /// `[dates, features]` model input columns for the active mode.
    pub features: Array,
    /// `[dates, 5]` closing prices in [`Market::ALL`] order.
    pub closes: Array,
    /// Per-market `[dates, columns]` matrices after filling.
    pub per_market: Vec<Array>,
}

impl AlignedPanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn close_series(&self, market: Market) -> Vec<f64> {
        (0..self.len())
            .map(|t| self.closes.at(&[t, market.index()]))
            .collect()
    }
}

/// Restrict the five tables to their common dates, forward-fill interior
/// gaps, drop leading rows that are still incomplete and assemble the model
/// columns for `mode`.
///
/// Combined mode lists each market's [`crate::market::MARKET_SPECIFIC`]
/// columns as `MARKET:column` blocks in [`Market::ALL`] order, followed by
/// every other column once, taken from the first market that has it.
pub fn align_panel(tables: &[RawMarketTable], mode: PanelMode) -> Result<AlignedPanel> {
    let mut ordered = Vec::with_capacity(NUM_MARKETS);
    for m in Market::ALL {
        let mut hits = tables.iter().filter(|t| t.market == m);
        let t = hits
            .next()
            .ok_or_else(|| Error::Alignment(format!("missing market {m}")))?;
        if hits.next().is_some() {
            return Err(Error::Alignment(format!("market {m} supplied twice")));
        }
        ordered.push(t);
    }

    let mut common: Vec<NaiveDate> = ordered[0].dates.clone();
    for t in &ordered[1..] {
        let set: HashSet<&NaiveDate> = t.dates.iter().collect();
        common.retain(|d| set.contains(d));
    }
    if common.is_empty() {
        return Err(Error::Alignment("markets share no dates".into()));
    }

    let filled: Vec<Vec<Vec<f64>>> = ordered
        .iter()
        .map(|t| {
            let mut pos = 0;
            let mut rows: Vec<Vec<f64>> = Vec::with_capacity(common.len());
            for d in &common {
                while t.dates[pos] != *d {
                    pos += 1;
                }
                rows.push(t.rows[pos].clone());
            }
            forward_fill(&mut rows);
            rows
        })
        .collect();

    // (market slot, column index, output name)
    let mut picks: Vec<(usize, usize, String)> = Vec::new();
    match mode {
        PanelMode::Single(m) => {
            let t = ordered[m.index()];
            for (j, c) in t.columns.iter().enumerate() {
                picks.push((m.index(), j, c.clone()));
            }
        }
        PanelMode::Combined => {
            for (k, t) in ordered.iter().enumerate() {
                for (j, c) in t.columns.iter().enumerate() {
                    if is_market_specific(c) {
                        picks.push((k, j, format!("{}:{c}", t.market.code())));
                    }
                }
            }
            let mut seen: HashSet<&str> = HashSet::new();
            for (k, t) in ordered.iter().enumerate() {
                for (j, c) in t.columns.iter().enumerate() {
                    if !is_market_specific(c) && seen.insert(c.as_str()) {
                        picks.push((k, j, c.clone()));
                    }
                }
            }
            if ordered.iter().all(|t| t.is_canonical()) && picks.len() != COMBINED_WIDTH {
                return Err(Error::Schema(format!(
                    "combined width {} != {COMBINED_WIDTH}",
                    picks.len()
                )));
            }
        }
    }

    let close_idx: Vec<usize> = ordered
        .iter()
        .map(|t| t.column_index(CLOSE_COLUMN).expect("loader requires Close"))
        .collect();

    // after forward fill, gaps can only remain as a leading run
    let mut start = 0;
    let mut track = |rows: &Vec<Vec<f64>>, j: usize| {
        let first = rows.iter().position(|r| !r[j].is_nan()).unwrap_or(rows.len());
        start = start.max(first);
    };
    for &(k, j, _) in &picks {
        track(&filled[k], j);
    }
    for (k, &j) in close_idx.iter().enumerate() {
        track(&filled[k], j);
    }
    let n = common.len() - start.min(common.len());
    if n == 0 {
        return Err(Error::Alignment(
            "no complete rows remain after filling gaps".into(),
        ));
    }

    let mut features = Vec::with_capacity(n * picks.len());
    let mut closes = Vec::with_capacity(n * NUM_MARKETS);
    for t in start..common.len() {
        features.extend(picks.iter().map(|&(k, j, _)| filled[k][t][j]));
        closes.extend(close_idx.iter().enumerate().map(|(k, &j)| filled[k][t][j]));
    }
    let per_market = filled
        .iter()
        .zip(&ordered)
        .map(|(rows, tab)| {
            let data = rows[start..].iter().flatten().copied().collect();
            Array::new([n, tab.columns.len()], data)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;

    Ok(AlignedPanel {
        mode,
        dates: common[start..].to_vec(),
        feature_names: picks.into_iter().map(|(_, _, name)| name).collect(),
        features: Array::new([n, per_row(&features, n)], features)?,
        closes: Array::new([n, NUM_MARKETS], closes)?,
        per_market,
    })
}

fn per_row(data: &[f64], rows: usize) -> usize {
    data.len().checked_div(rows).unwrap_or(0)
}

fn forward_fill(rows: &mut [Vec<f64>]) {
    for t in 1..rows.len() {
        let (prev, cur) = rows.split_at_mut(t);
        let prev = &prev[t - 1];
        for (c, p) in cur[0].iter_mut().zip(prev) {
            if c.is_nan() {
                *c = *p;
            }
        }
    }
}

/// `ret[t] = close[t+1] / close[t] - 1`.
pub fn daily_returns(close: &[f64]) -> Result<Vec<f64>> {
    nday_returns(close, 1)
}

/// `ret[t] = close[t+n] / close[t] - 1` for `n` in `1..=10`.
pub fn nday_returns(close: &[f64], n: usize) -> Result<Vec<f64>> {
    if !(1..=MAX_HORIZON).contains(&n) {
        return Err(Error::Config(format!(
            "return horizon must be in 1..={MAX_HORIZON}, got {n}"
        )));
    }
    if let Some(bad) = close.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
        return Err(Error::Domain(format!("closing price must be positive, got {bad}")));
    }
    if close.len() <= n {
        return Err(Error::InsufficientData(format!(
            "{} closes for a {n}-day return",
            close.len()
        )));
    }
    Ok((0..close.len() - n)
        .map(|t| close[t + n] / close[t] - 1.0)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelScheme {
    /// 1 when the return is positive, else 0.
    #[serde(rename = "01")]
    Binary01,
    /// 0 below the low percentile, 2 above the high one, 1 otherwise.
    #[serde(rename = "012")]
    Ternary012,
}

impl LabelScheme {
    pub fn num_classes(self) -> usize {
        match self {
            LabelScheme::Binary01 => 2,
            LabelScheme::Ternary012 => 3,
        }
    }
}

impl FromStr for LabelScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "01" => Ok(LabelScheme::Binary01),
            "012" => Ok(LabelScheme::Ternary012),
            _ => Err(Error::Config(format!(
                "labeling must be `01` or `012`, got `{s}`"
            ))),
        }
    }
}

pub fn label_binary(returns: &[f64]) -> Vec<u8> {
    returns.iter().map(|&r| u8::from(r > 0.0)).collect()
}

/// Linear interpolation between order statistics at position `p·(n-1)`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TernaryThresholds {
    pub low: f64,
    pub high: f64,
}

impl TernaryThresholds {
    pub fn label(&self, r: f64) -> u8 {
        if r > self.high {
            2
        } else if r < self.low {
            0
        } else {
            1
        }
    }
}

/// Thresholds from the 35th/65th percentiles of the first `train_len`
/// returns, applied to the whole series.
pub fn label_ternary(returns: &[f64], train_len: usize) -> Result<(Vec<u8>, TernaryThresholds)> {
    if train_len < 3 || train_len > returns.len() {
        return Err(Error::InsufficientData(format!(
            "ternary thresholds need at least 3 training returns, got {train_len} of {}",
            returns.len()
        )));
    }
    let mut train = returns[..train_len].to_vec();
    train.sort_by(f64::total_cmp);
    let thr = TernaryThresholds {
        low: percentile(&train, TERNARY_LOW_PERCENTILE),
        high: percentile(&train, TERNARY_HIGH_PERCENTILE),
    };
    Ok((returns.iter().map(|&r| thr.label(r)).collect(), thr))
}

/// Per-date, per-index labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    pub scheme: LabelScheme,
    pub labels: Vec<[u8; NUM_MARKETS]>,
    /// Per-index thresholds for the ternary scheme.
    pub thresholds: Option<[TernaryThresholds; NUM_MARKETS]>,
}

/// Per-feature training statistics (population standard deviation).
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn from_rows(features: &Array, train_rows: usize) -> Result<Self> {
        let (n, f) = matrix_dims(features)?;
        if train_rows == 0 || train_rows > n {
            return Err(Error::InsufficientData(format!(
                "normalisation needs 1..={n} training rows, got {train_rows}"
            )));
        }
        let mut mean = vec![0.0; f];
        for t in 0..train_rows {
            for (m, x) in mean.iter_mut().zip(features.row(t)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= train_rows as f64);
        let mut var = vec![0.0; f];
        for t in 0..train_rows {
            for ((v, x), m) in var.iter_mut().zip(features.row(t)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.iter().map(|v| (v / train_rows as f64).sqrt()).collect();
        Ok(Self { mean, std })
    }

    /// Z-score every row; zero-variance features map to 0.
    pub fn apply(&self, features: &Array) -> Result<Array> {
        let (n, f) = matrix_dims(features)?;
        if f != self.mean.len() {
            return Err(Error::Schema(format!(
                "normalisation stats cover {} features, panel has {f}",
                self.mean.len()
            )));
        }
        let mut out = Vec::with_capacity(n * f);
        for t in 0..n {
            for ((x, m), s) in features.row(t).iter().zip(&self.mean).zip(&self.std) {
                out.push(if *s > 0.0 { (x - m) / s } else { 0.0 });
            }
        }
        Ok(Array::new([n, f], out)?)
    }
}

/// Normalise all rows with statistics from the first `train_rows`.
pub fn normalize(features: &Array, train_rows: usize) -> Result<(Array, NormStats)> {
    let stats = NormStats::from_rows(features, train_rows)?;
    Ok((stats.apply(features)?, stats))
}

fn matrix_dims(a: &Array) -> Result<(usize, usize)> {
    match *a.shape() {
        [n, f] => Ok((n, f)),
        _ => Err(Error::Schema(format!("expected a matrix, got {:?}", a.shape()))),
    }
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// Panel row of the window's last day.
    pub anchor: usize,
    /// `[d, features]`, rows `anchor-d+1 ..= anchor`.
    pub input: Array,
    /// Labels of the return realised after the anchor, one per index.
    pub targets: [u8; NUM_MARKETS],
}

/// Stride-1 windows of `d` rows for every anchor that has a label.
/// `labels[t]` belongs to anchor `t`.
pub fn make_windows(
    features: &Array,
    labels: &[[u8; NUM_MARKETS]],
    d: usize,
) -> Result<Vec<WindowSample>> {
    let (n, f) = matrix_dims(features)?;
    if d == 0 || n < d + 1 || labels.len() < d {
        return Err(Error::InsufficientData(format!(
            "{n} rows ({} labelled) cannot form a {d}-day window with a next-day label",
            labels.len()
        )));
    }
    let last = labels.len().min(n);
    Ok((d - 1..last)
        .map(|a| WindowSample {
            anchor: a,
            input: features.rows(a + 1 - d, a + 1),
            targets: labels[a],
        })
        .inspect(|s| debug_assert_eq!(s.input.shape(), &[d, f]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitSpec {
    pub const SPLIT_65_15_20: SplitSpec = SplitSpec {
        train: 0.65,
        validation: 0.15,
        test: 0.20,
    };
    pub const SPLIT_42_8_50: SplitSpec = SplitSpec {
        train: 0.42,
        validation: 0.08,
        test: 0.50,
    };

    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let s = Self {
            train,
            validation,
            test,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| p.is_nan() || *p <= 0.0) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must be positive and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// Segment sizes for `n` samples: train and validation rounded down,
    /// remainder to test.
    pub fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        // tolerance absorbs binary representation error, e.g. 0.15 * 100
        let floor = |f: f64| (f * n as f64 + 1e-9).floor() as usize;
        let train = floor(self.train);
        let val = floor(self.validation);
        let test = n.saturating_sub(train + val);
        if train == 0 || val == 0 || test == 0 {
            return Err(Error::Split(format!(
                "{n} samples give an empty segment ({train}/{val}/{test})"
            )));
        }
        Ok((train, val, test))
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |x: f64| (x * 100.0).round() as u32;
        write!(
            f,
            "{}-{}-{}",
            pct(self.train),
            pct(self.validation),
            pct(self.test)
        )
    }
}

impl FromStr for SplitSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "65-15-20" => Ok(Self::SPLIT_65_15_20),
            "42-8-50" => Ok(Self::SPLIT_42_8_50),
            _ => {
                let parts: Vec<f64> = s
                    .split('-')
                    .map(|p| p.trim().parse::<f64>().map(|v| v / 100.0))
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("bad split `{s}`")))?;
                match parts[..] {
                    [a, b, c] => Self::new(a, b, c),
                    _ => Err(Error::Config(format!("bad split `{s}`"))),
                }
            }
        }
    }
}

/// Contiguous chronological train/validation/test segments.
pub fn chrono_split<T>(mut samples: Vec<T>, spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (train, val, _) = spec.sizes(samples.len())?;
    let test = samples.split_off(train + val);
    let val_part = samples.split_off(train);
    Ok((samples, val_part, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close_enough(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn daily_return_cases() {
        assert!(close_enough(daily_returns(&[100.0, 101.0]).unwrap()[0], 0.01, 1e-15));
        assert_eq!(daily_returns(&[5.0; 4]).unwrap(), vec![0.0; 3]);
        let r = daily_returns(&[100.0, 101.0, 99.99]).unwrap();
        assert!(close_enough(r[0], 0.01, 1e-15));
        // 99.99 / 101 = 0.99 exactly in decimal
        assert!(close_enough(r[1], -0.01, 1e-15));
        assert!(matches!(daily_returns(&[1.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(daily_returns(&[-1.0, 2.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn nday_return_cases() {
        let c = [100.0, 110.0, 121.0];
        assert_eq!(nday_returns(&c, 1).unwrap(), daily_returns(&c).unwrap());
        assert!(close_enough(nday_returns(&c, 2).unwrap()[0], 0.21, 1e-12));
        for n in 1..=10 {
            assert!(nday_returns(&[3.0; 12], n).unwrap().iter().all(|&r| r == 0.0));
        }
        assert!(matches!(nday_returns(&c, 0), Err(Error::Config(_))));
        assert!(matches!(nday_returns(&[1.0; 20], 11), Err(Error::Config(_))));
    }

    #[test]
    fn binary_labels() {
        assert_eq!(label_binary(&[0.01, -0.01, 0.0]), vec![1, 0, 0]);
        assert_eq!(label_binary(&[0.5, 0.1]), vec![1, 1]);
        assert!(label_binary(&[]).is_empty());
    }

    #[test]
    fn ternary_thresholds_hand_case() {
        let r = [-0.02, -0.01, 0.0, 0.01, 0.02];
        let (labels, thr) = label_ternary(&r, 5).unwrap();
        // positions 0.35*4 = 1.4 and 0.65*4 = 2.6
        assert!(close_enough(thr.low, -0.006, 1e-15));
        assert!(close_enough(thr.high, 0.006, 1e-15));
        assert_eq!(labels, vec![0, 0, 1, 2, 2]);
    }

    #[test]
    fn ternary_degenerate_thresholds() {
        let r = [0.003; 6];
        let (labels, thr) = label_ternary(&r, 4).unwrap();
        assert_eq!(thr.low, 0.003);
        assert_eq!(thr.high, 0.003);
        assert!(labels.iter().all(|&l| l == 1));
        assert!(matches!(
            label_ternary(&r, 2),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn ternary_symmetric_training_sample_balances_tails() {
        // symmetric sample: ±k·0.001 for k = 1..=50
        let train: Vec<f64> = (1..=50)
            .flat_map(|k| [k as f64 * 1e-3, -(k as f64) * 1e-3])
            .collect();
        let (labels, thr) = label_ternary(&train, train.len()).unwrap();
        assert!(close_enough(thr.low, -thr.high, 1e-15));
        let count = |c: u8| labels.iter().filter(|&&l| l == c).count();
        // brute-force count straight from the thresholds
        let below = train.iter().filter(|&&r| r < thr.low).count();
        let above = train.iter().filter(|&&r| r > thr.high).count();
        assert_eq!(count(0), below);
        assert_eq!(count(2), above);
        assert_eq!(count(0), count(2));
    }

    #[test]
    fn normalize_population_std() {
        let x = Array::from_rows(&[vec![1.0, 7.0], vec![2.0, 7.0], vec![3.0, 7.0], vec![10.0, 9.0]])
            .unwrap();
        let (z, stats) = normalize(&x, 3).unwrap();
        assert_eq!(stats.mean[0], 2.0);
        assert!(close_enough(stats.std[0], (2.0f64 / 3.0).sqrt(), 1e-15));
        assert!(close_enough(z.at(&[0, 0]), -1.224744871391589, 1e-12));
        assert_eq!(z.at(&[1, 0]), 0.0);
        assert!(close_enough(z.at(&[2, 0]), 1.224744871391589, 1e-12));
        // test row uses training statistics
        assert!(close_enough(z.at(&[3, 0]), 8.0 / (2.0f64 / 3.0).sqrt(), 1e-12));
        // constant training column maps to zero everywhere
        assert!((0..4).all(|t| z.at(&[t, 1]) == 0.0));
    }

    fn ramp(n: usize, f: usize) -> Array {
        Array::new([n, f], (0..n * f).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn window_counts() {
        // windows end at the anchor inclusive; the final row has no label
        let labels = vec![[0u8; 5]; 61];
        assert_eq!(make_windows(&ramp(62, 2), &labels, 60).unwrap().len(), 2);
        assert_eq!(make_windows(&ramp(61, 2), &labels[..60], 60).unwrap().len(), 1);
        assert_eq!(make_windows(&ramp(3, 1), &[[0; 5]; 2], 1).unwrap().len(), 2);
        assert!(matches!(
            make_windows(&ramp(60, 2), &labels[..59], 60),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn windows_never_see_the_future() {
        let x = ramp(20, 3);
        let labels: Vec<[u8; 5]> = (0..19).map(|t| [t as u8; 5]).collect();
        for s in make_windows(&x, &labels, 5).unwrap() {
            assert_eq!(s.input.shape(), &[5, 3]);
            // ramp encodes the row index in every value
            let max_row = s.input.data().iter().fold(0.0f64, |m, &v| m.max(v)) as usize / 3;
            assert_eq!(max_row, s.anchor);
            assert_eq!(s.targets, [s.anchor as u8; 5]);
        }
    }

    #[test]
    fn split_sizes() {
        let s = SplitSpec::SPLIT_65_15_20;
        assert_eq!(s.sizes(100).unwrap(), (65, 15, 20));
        assert_eq!(SplitSpec::SPLIT_42_8_50.sizes(100).unwrap(), (42, 8, 50));
        assert_eq!(s.sizes(10).unwrap(), (6, 1, 3));
        assert!(matches!(s.sizes(3), Err(Error::Split(_))));
        let (a, b, c) = chrono_split((0..10).collect(), &s).unwrap();
        assert_eq!((a, b, c), ((0..6).collect(), vec![6], vec![7, 8, 9]));
    }

    #[test]
    fn split_spec_parsing() {
        assert_eq!("65-15-20".parse::<SplitSpec>().unwrap(), SplitSpec::SPLIT_65_15_20);
        assert_eq!("42-8-50".parse::<SplitSpec>().unwrap(), SplitSpec::SPLIT_42_8_50);
        assert!("50-50-10".parse::<SplitSpec>().is_err());
        assert!(SplitSpec::new(0.5, 0.0, 0.5).is_err());
        assert_eq!(SplitSpec::SPLIT_42_8_50.to_string(), "42-8-50");
    }

    const HEADER: &str = "Date,Name,Close,Volume,Oil";

    fn table(market: Market, body: &str) -> RawMarketTable {
        read_market_csv(format!("{HEADER}\n{body}").as_bytes(), "fixture", market).unwrap()
    }

    #[test]
    fn loader_sorts_and_reads_missing_cells() {
        let t = table(
            Market::Dji,
            "2010-01-05,DJI,11,2,\n2010-01-04,DJI,10,1,70\n2010-01-06,DJI,12,NaN,72",
        );
        assert_eq!(t.columns, vec!["Close", "Volume", "Oil"]);
        assert_eq!(t.dates[0].to_string(), "2010-01-04");
        assert_eq!(t.rows[0], vec![10.0, 1.0, 70.0]);
        assert!(t.rows[1][2].is_nan());
        assert!(t.rows[2][1].is_nan());
    }

    #[test]
    fn loader_errors() {
        let no_close = read_market_csv("Date,Oil\n2010-01-04,1".as_bytes(), "f", Market::Dji);
        assert!(matches!(no_close, Err(Error::Schema(_))));
        let bad = read_market_csv(
            format!("{HEADER}\n2010-01-04,x,1,2,3\n2010-01-05,x,1,abc,3").as_bytes(),
            "f",
            Market::Dji,
        );
        assert!(matches!(bad, Err(Error::Parse { line: 3, .. })));
        let dup = read_market_csv(
            format!("{HEADER}\n2010-01-04,x,1,2,3\n2010-01-04,x,1,2,3").as_bytes(),
            "f",
            Market::Dji,
        );
        assert!(matches!(dup, Err(Error::Parse { .. })));
    }

    fn five(bodies: [&str; 5]) -> Vec<RawMarketTable> {
        Market::ALL.iter().zip(bodies).map(|(&m, b)| table(m, b)).collect()
    }

    #[test]
    fn alignment_intersects_fills_and_trims() {
        let full = "2010-01-01,x,1,1,1\n2010-01-02,x,2,2,2\n2010-01-03,x,3,3,3\n2010-01-04,x,4,4,4";
        let gappy = "2010-01-01,x,1,1,\n2010-01-02,x,2,2,5\n2010-01-03,x,3,3,\n2010-01-04,x,4,4,7\n2010-01-05,x,5,5,5";
        let p = align_panel(&five([gappy, full, full, full, full]), PanelMode::Single(Market::Sp500))
            .unwrap();
        // 2010-01-05 is missing elsewhere; 2010-01-01 stays incomplete after filling
        assert_eq!(p.len(), 3);
        assert_eq!(p.dates[0].to_string(), "2010-01-02");
        assert_eq!(p.features.row(1), &[3.0, 3.0, 5.0]);
        assert_eq!(p.closes.row(0), &[2.0; 5]);

        let c = align_panel(&five([full; 5]), PanelMode::Combined).unwrap();
        // Close and Volume per market, Oil once
        assert_eq!(c.width(), 11);
        assert_eq!(c.feature_names[0], "SP500:Close");
        assert_eq!(c.feature_names[10], "Oil");

        let disjoint = "2011-01-01,x,1,1,1";
        assert!(matches!(
            align_panel(&five([disjoint, full, full, full, full]), PanelMode::Combined),
            Err(Error::Alignment(_))
        ));
        assert!(matches!(
            align_panel(&five([full; 5])[..4], PanelMode::Combined),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn panel_mode_parsing() {
        assert_eq!("combined".parse::<PanelMode>().unwrap(), PanelMode::Combined);
        assert_eq!(
            "single:NASDAQ".parse::<PanelMode>().unwrap(),
            PanelMode::Single(Market::Nasdaq)
        );
        assert!("single".parse::<PanelMode>().is_err());
    }
}
