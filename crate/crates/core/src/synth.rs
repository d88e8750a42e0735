//! Deterministic synthetic market tables for tests, demos and smoke runs.
//!
//! Five correlated price paths share a common daily factor. Each table has
//! five market-specific columns and three shared macro columns, so the
//! combined panel is 28 features wide.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataprep::RawMarketTable;
use crate::market::{Market, NUM_MARKETS};

pub const SPECIFIC_COLUMNS: [&str; 5] = ["Close", "Volume", "mom1", "ROC_5", "EMA_10"];
pub const SHARED_COLUMNS: [&str; 3] = ["DTB3", "Oil", "Gold"];
pub const COMBINED_WIDTH: usize = NUM_MARKETS * SPECIFIC_COLUMNS.len() + SHARED_COLUMNS.len();

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub days: usize,
    pub seed: u64,
    /// Drop one interior date from the NASDAQ table and blank one shared
    /// cell, exercising alignment and forward fill.
    pub with_gaps: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            days: 160,
            seed: 7,
            with_gaps: true,
        }
    }
}

/// Consecutive weekdays from 2010-01-04.
pub fn business_days(n: usize) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

pub fn synthetic_tables(opts: SynthOptions) -> Vec<RawMarketTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = opts.days;
    let dates = business_days(n);
    let mut shared = vec![[0.0; 3]; n];
    let mut level = [1.5, 80.0, 1200.0];
    for row in shared.iter_mut() {
        for (k, l) in level.iter_mut().enumerate() {
            *l *= 1.0 + rng.gen_range(-0.01..0.01);
            row[k] = *l;
        }
    }
    let common: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.01..0.01)).collect();
    let mut tables = Vec::with_capacity(NUM_MARKETS);
    for (m, market) in Market::ALL.into_iter().enumerate() {
        let mut close = Vec::with_capacity(n);
        let mut c = 1000.0 * (m + 1) as f64;
        for (t, f) in common.iter().enumerate() {
            if t > 0 {
                c *= 1.0 + f + rng.gen_range(-0.006..0.006);
            }
            close.push(c);
        }
        let mut ema = close[0];
        let mut rows = Vec::with_capacity(n);
        for t in 0..n {
            ema += (close[t] - ema) * 2.0 / 11.0;
            let mom1 = if t >= 1 { close[t] - close[t - 1] } else { f64::NAN };
            let roc5 = if t >= 5 { 100.0 * (close[t] / close[t - 5] - 1.0) } else { f64::NAN };
            let volume = 1e6 * (1.0 + rng.gen_range(0.0..0.5));
            let mut row = vec![close[t], volume, mom1, roc5, ema];
            row.extend_from_slice(&shared[t]);
            rows.push(row);
        }
        let mut dates = dates.clone();
        if opts.with_gaps && n > 40 {
            if market == Market::Nasdaq {
                dates.remove(n / 2);
                rows.remove(n / 2);
            }
            if market == Market::Dji {
                rows[n / 3][SPECIFIC_COLUMNS.len() + 1] = f64::NAN;
            }
        }
        tables.push(RawMarketTable {
            market,
            dates,
            columns: SPECIFIC_COLUMNS.iter().chain(&SHARED_COLUMNS).map(|s| s.to_string()).collect(),
            rows,
        });
    }
    tables
}

/// Write the five tables as `<default file name>` CSVs under `dir`.
pub fn write_tables(dir: &std::path::Path, tables: &[RawMarketTable]) -> crate::Result<()> {
    std::fs::create_dir_all(dir)?;
    for t in tables {
        let f = std::fs::File::create(dir.join(t.market.default_file()))?;
        crate::dataprep::write_market_csv(t, f)?;
    }
    Ok(())
}
