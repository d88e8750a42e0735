//! The five predicted indices and the canonical 82-column feature manifest.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const NUM_MARKETS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Market {
    Sp500,
    Dji,
    Nasdaq,
    Nyse,
    Russell,
}

impl Market {
    /// Column order used in every report.
    pub const ALL: [Market; NUM_MARKETS] = [
        Market::Sp500,
        Market::Dji,
        Market::Nasdaq,
        Market::Nyse,
        Market::Russell,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        match self {
            Market::Sp500 => "SP500",
            Market::Dji => "DJI",
            Market::Nasdaq => "NASDAQ",
            Market::Nyse => "NYSE",
            Market::Russell => "RUSSELL",
        }
    }

    /// Report column header.
    pub fn label(self) -> &'static str {
        match self {
            Market::Sp500 => "S&P 500",
            other => other.code(),
        }
    }

    /// File name used by the public CNNpred dataset release.
    pub fn default_file(self) -> &'static str {
        match self {
            Market::Sp500 => "Processed_S&P.csv",
            Market::Dji => "Processed_DJI.csv",
            Market::Nasdaq => "Processed_NASDAQ.csv",
            Market::Nyse => "Processed_NYSE.csv",
            Market::Russell => "Processed_RUSSELL.csv",
        }
    }
}

impl fmt::Display for Market {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Market {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "SP500" | "S&P" | "S&P500" | "S&P 500" => Ok(Market::Sp500),
            "DJI" => Ok(Market::Dji),
            "NASDAQ" => Ok(Market::Nasdaq),
            "NYSE" => Ok(Market::Nyse),
            "RUSSELL" => Ok(Market::Russell),
            _ => Err(Error::Config(format!("unknown market `{s}`"))),
        }
    }
}

pub const DATE_COLUMN: &str = "Date";
pub const CLOSE_COLUMN: &str = "Close";
/// Text column present in the public files; not a feature.
pub const NAME_COLUMN: &str = "Name";

/// Primitive features and technical indicators: the only columns whose values
/// differ between the five market files.
pub const MARKET_SPECIFIC: [&str; 14] = [
    "Close", "Volume", "mom", "mom1", "mom2", "mom3", "ROC_5", "ROC_10", "ROC_15", "ROC_20",
    "EMA_10", "EMA_20", "EMA_50", "EMA_200",
];

/// The 82 feature columns of each market file, in file order.
pub const CANONICAL_FEATURES: [&str; 82] = [
    "Close", "Volume", "mom", "mom1", "mom2", "mom3", "ROC_5", "ROC_10", "ROC_15", "ROC_20",
    "EMA_10", "EMA_20", "EMA_50", "EMA_200", "DTB4WK", "DTB3", "DTB6", "DGS5", "DGS10", "Oil",
    "Gold", "DAAA", "DBAA", "GBP", "JPY", "CAD", "CNY", "AAPL", "AMZN", "GE", "JNJ", "JPM",
    "MSFT", "WFC", "XOM", "FCHI", "FTSE", "GDAXI", "GSPC", "HSI", "IXIC", "SSEC", "RUT", "NYSE",
    "TE1", "TE2", "TE3", "TE5", "TE6", "DE1", "DE2", "DE4", "DE5", "DE6", "CTB3M", "CTB6M",
    "CTB1Y", "AUD", "Brent", "CAC-F", "copper-F", "WIT-oil", "DAX-F", "DJI-F", "EUR", "FTSE-F",
    "gold-F", "HSI-F", "KOSPI-F", "NASDAQ-F", "GAS-F", "Nikkei-F", "NZD", "silver-F",
    "RUSSELL-F", "S&P-F", "CHF", "Dollar index-F", "Dollar index", "wheat-F", "XAG", "XAU",
];

/// Width of the combined panel built from five canonical files: shared
/// columns once plus the market-specific block per market.
pub const COMBINED_WIDTH: usize =
    CANONICAL_FEATURES.len() - MARKET_SPECIFIC.len() + NUM_MARKETS * MARKET_SPECIFIC.len();

pub fn is_market_specific(column: &str) -> bool {
    MARKET_SPECIFIC.contains(&column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_counts() {
        assert_eq!(CANONICAL_FEATURES.len(), 82);
        assert_eq!(COMBINED_WIDTH, 138);
        let mut names: Vec<_> = CANONICAL_FEATURES.to_vec();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 82);
        assert!(MARKET_SPECIFIC.iter().all(|c| CANONICAL_FEATURES.contains(c)));
    }

    #[test]
    fn market_round_trip() {
        for m in Market::ALL {
            assert_eq!(m.code().parse::<Market>().unwrap(), m);
        }
        assert!("FTSE".parse::<Market>().is_err());
    }
}
