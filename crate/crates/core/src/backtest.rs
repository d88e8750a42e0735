//! Position rules, PnL and risk-adjusted performance metrics.
//!
//! The prediction for anchor day `t` holds its position from the close of
//! `t` to the close of `t+1` and earns that day's return. Positions are one
//! unit of notional; there are no costs and no compounding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::NUM_MARKETS;

pub const TRADING_DAYS: f64 = 252.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeqParams {
    /// Risk aversion.
    pub gamma: f64,
}

impl Default for CeqParams {
    fn default() -> Self {
        Self { gamma: 1.0 }
    }
}

/// 2 (up) is long, 0 (down) is short, 1 (neutral) is flat.
pub fn positions_from_ternary(classes: &[u8]) -> Result<Vec<i8>> {
    classes
        .iter()
        .map(|&c| match c {
            2 => Ok(1),
            1 => Ok(0),
            0 => Ok(-1),
            other => Err(Error::Domain(format!("ternary class {other} outside {{0,1,2}}"))),
        })
        .collect()
}

/// 1 (up) is long, 0 is flat.
pub fn positions_from_binary(classes: &[u8]) -> Result<Vec<i8>> {
    classes
        .iter()
        .map(|&c| match c {
            1 => Ok(1),
            0 => Ok(0),
            other => Err(Error::Domain(format!("binary class {other} outside {{0,1}}"))),
        })
        .collect()
}

pub fn pnl(positions: &[i8], returns: &[f64]) -> Result<Vec<f64>> {
    if positions.len() != returns.len() {
        return Err(Error::Alignment(format!(
            "{} positions against {} returns",
            positions.len(),
            returns.len()
        )));
    }
    Ok(positions
        .iter()
        .zip(returns)
        .map(|(&p, &r)| f64::from(p) * r)
        .collect())
}

fn mean_var(r: &[f64]) -> Result<(f64, f64)> {
    if r.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "performance metrics need at least 2 observations, got {}",
            r.len()
        )));
    }
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok((mean, var))
}

/// Mean over population standard deviation.
pub fn sharpe(r: &[f64]) -> Result<f64> {
    let (mean, var) = mean_var(r)?;
    // a constant series can leave round-off in the variance
    if var == 0.0 || r.iter().all(|&x| x == r[0]) {
        return Err(Error::UndefinedSharpe);
    }
    Ok(mean / var.sqrt())
}

pub fn annualize(sharpe_daily: f64) -> f64 {
    sharpe_daily * TRADING_DAYS.sqrt()
}

/// Certainty-equivalent return: mean minus `γ/2` times population variance.
pub fn ceq(r: &[f64], params: CeqParams) -> Result<f64> {
    if !(params.gamma >= 0.0 && params.gamma.is_finite()) {
        return Err(Error::Config(format!("risk aversion must be non-negative, got {}", params.gamma)));
    }
    let (mean, var) = mean_var(r)?;
    Ok(mean - params.gamma * var / 2.0)
}

/// Elementwise sum of per-index PnL series.
pub fn combine(pnls: &[Vec<f64>]) -> Result<Vec<f64>> {
    let len = pnls.first().map_or(0, Vec::len);
    if let Some(bad) = pnls.iter().find(|p| p.len() != len) {
        return Err(Error::Alignment(format!(
            "cannot combine PnL series of lengths {len} and {}",
            bad.len()
        )));
    }
    Ok((0..len).map(|t| pnls.iter().map(|p| p[t]).sum()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Absent when the PnL has zero variance.
    pub sharpe: Option<f64>,
    pub annual_sharpe: Option<f64>,
    pub ceq: f64,
}

pub fn metrics(r: &[f64], params: CeqParams) -> Result<Metrics> {
    let sharpe = match sharpe(r) {
        Ok(s) => Some(s),
        Err(Error::UndefinedSharpe) => None,
        Err(e) => return Err(e),
    };
    Ok(Metrics {
        sharpe,
        annual_sharpe: sharpe.map(annualize),
        ceq: ceq(r, params)?,
    })
}

/// One strategy across the five indices and their combination.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRow {
    pub name: String,
    pub per_index: [Metrics; NUM_MARKETS],
    pub combination: Metrics,
    /// Per-index PnL series, index-major.
    pub pnl: Vec<Vec<f64>>,
}

/// Score per-date positions against per-date realised returns.
pub fn evaluate_strategy(
    name: impl Into<String>,
    positions: &[[i8; NUM_MARKETS]],
    returns: &[[f64; NUM_MARKETS]],
    params: CeqParams,
) -> Result<StrategyRow> {
    if positions.len() != returns.len() {
        return Err(Error::Alignment(format!(
            "{} position dates against {} return dates",
            positions.len(),
            returns.len()
        )));
    }
    let mut series = Vec::with_capacity(NUM_MARKETS);
    for k in 0..NUM_MARKETS {
        let pos: Vec<i8> = positions.iter().map(|p| p[k]).collect();
        let ret: Vec<f64> = returns.iter().map(|r| r[k]).collect();
        series.push(pnl(&pos, &ret)?);
    }
    let mut per_index = Vec::with_capacity(NUM_MARKETS);
    for s in &series {
        per_index.push(metrics(s, params)?);
    }
    let combination = metrics(&combine(&series)?, params)?;
    Ok(StrategyRow {
        name: name.into(),
        per_index: per_index.try_into().expect("five indices"),
        combination,
        pnl: series,
    })
}

pub const ALWAYS_LONG: &str = "Always long";

/// Hold one unit of every index on every date.
pub fn always_long(returns: &[[f64; NUM_MARKETS]], params: CeqParams) -> Result<StrategyRow> {
    let positions = vec![[1i8; NUM_MARKETS]; returns.len()];
    evaluate_strategy(ALWAYS_LONG, &positions, returns, params)
}

/// Strategy rows in table order, always-long first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BacktestReport {
    pub rows: Vec<StrategyRow>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn position_rules() {
        assert_eq!(positions_from_ternary(&[2, 2, 0, 1]).unwrap(), vec![1, 1, -1, 0]);
        assert_eq!(positions_from_ternary(&[1; 4]).unwrap(), vec![0; 4]);
        assert!(matches!(positions_from_ternary(&[3]), Err(Error::Domain(_))));
        assert_eq!(positions_from_binary(&[1, 0]).unwrap(), vec![1, 0]);
        assert!(positions_from_binary(&[2]).is_err());
    }

    #[test]
    fn pnl_cases() {
        assert_eq!(pnl(&[1], &[0.01]).unwrap(), vec![0.01]);
        assert_eq!(pnl(&[-1], &[0.01]).unwrap(), vec![-0.01]);
        assert_eq!(pnl(&[1, 0, -1], &[0.02, 0.05, -0.01]).unwrap(), vec![0.02, 0.0, 0.01]);
        assert!(matches!(pnl(&[1], &[0.1, 0.2]), Err(Error::Alignment(_))));
    }

    #[test]
    fn sharpe_cases() {
        let s = sharpe(&[0.02, 0.0, 0.01]).unwrap();
        // mean 0.01 over population std sqrt(2/3)·0.01
        assert!(close(s, 1.224_744_871_391_589, 1e-10));
        assert!(close(s, (1.5f64).sqrt(), 1e-12));
        assert_eq!(sharpe(&[0.01, -0.01]).unwrap(), 0.0);
        assert!(matches!(sharpe(&[0.003; 4]), Err(Error::UndefinedSharpe)));
        assert!(matches!(sharpe(&[0.1]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn annualize_cases() {
        assert!(close(annualize(0.1143), 1.814_456_249_128_096, 1e-12));
        assert!(close(annualize(0.1143), 1.8145, 5e-5));
        assert_eq!(annualize(0.0), 0.0);
        assert!(close(annualize(0.043), 0.682_603_838_254_664, 1e-12));
    }

    #[test]
    fn ceq_cases() {
        let p = CeqParams::default();
        assert!(close(ceq(&[0.01, -0.01], p).unwrap(), -5e-5, 1e-18));
        assert!(close(ceq(&[0.004; 3], p).unwrap(), 0.004, 1e-15));
        let r = [0.03, -0.01, 0.02];
        assert!(close(ceq(&r, CeqParams { gamma: 0.0 }).unwrap(), 0.04 / 3.0, 1e-15));
    }

    #[test]
    fn combine_cases() {
        let r = vec![0.01, -0.02, 0.03];
        let five = combine(&vec![r.clone(); 5]).unwrap();
        assert!(close(sharpe(&five).unwrap(), sharpe(&r).unwrap(), 1e-12));
        let flat = vec![0.0; 3];
        let one_live = combine(&[r.clone(), flat.clone(), flat.clone(), flat.clone(), flat]).unwrap();
        assert_eq!(one_live, r);
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let zero = combine(&[r.clone(), neg]).unwrap();
        assert!(matches!(sharpe(&zero), Err(Error::UndefinedSharpe)));
        assert_eq!(ceq(&zero, CeqParams::default()).unwrap(), 0.0);
        assert!(matches!(combine(&[r, vec![0.0]]), Err(Error::Alignment(_))));
    }

    #[test]
    fn flat_strategy_has_no_sharpe() {
        let rets = vec![[0.01, -0.02, 0.0, 0.03, 0.01]; 4];
        let row = evaluate_strategy("flat", &[[0; 5]; 4], &rets, CeqParams::default()).unwrap();
        assert!(row.combination.sharpe.is_none());
        assert_eq!(row.combination.ceq, 0.0);
    }

    #[test]
    fn always_long_on_rising_prices() {
        let rets: Vec<[f64; 5]> = (0..6).map(|t| [0.001 * (t + 1) as f64; 5]).collect();
        let row = always_long(&rets, CeqParams::default()).unwrap();
        assert!(row.combination.sharpe.unwrap() > 0.0);
        assert!(row.per_index.iter().all(|m| m.sharpe.unwrap() > 0.0));
    }
}
