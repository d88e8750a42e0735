//! Discretisation of head outputs and per-date prediction series.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use gradcore::Array;

use super::config::HeadKind;
use crate::error::{Error, Result};
use crate::market::{Market, NUM_MARKETS};

/// Class per index: `p ≥ 0.5` is 1 for binary heads; per-group argmax with
/// ties to the lowest class for ternary heads.
pub fn discretize(output: &Array, head: HeadKind) -> Result<[u8; NUM_MARKETS]> {
    let mut classes = [0u8; NUM_MARKETS];
    match (head, output.shape()) {
        (HeadKind::Binary5, [NUM_MARKETS]) => {
            for (c, &p) in classes.iter_mut().zip(output.data()) {
                *c = u8::from(p >= 0.5);
            }
        }
        (HeadKind::Ternary15, [NUM_MARKETS, 3]) => {
            for (g, c) in classes.iter_mut().enumerate() {
                let row = output.row(g);
                let mut best = 0;
                for k in 1..3 {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                *c = best as u8;
            }
        }
        (_, shape) => {
            return Err(Error::Schema(format!(
                "{head:?} head output has shape {shape:?}"
            )))
        }
    }
    Ok(classes)
}

/// Head outputs and classes for consecutive anchor dates.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSeries {
    pub head: HeadKind,
    pub dates: Vec<NaiveDate>,
    /// Raw outputs, 5 or 15 per date.
    pub outputs: Vec<Vec<f64>>,
    pub classes: Vec<[u8; NUM_MARKETS]>,
}

impl PredictionSeries {
    pub fn new(head: HeadKind) -> Self {
        Self {
            head,
            dates: Vec::new(),
            outputs: Vec::new(),
            classes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn push(&mut self, date: NaiveDate, output: &Array) -> Result<()> {
        self.classes.push(discretize(output, self.head)?);
        self.outputs.push(output.data().to_vec());
        self.dates.push(date);
        Ok(())
    }

    /// Class sequence of one index.
    pub fn column(&self, market: Market) -> Vec<u8> {
        self.classes.iter().map(|c| c[market.index()]).collect()
    }

    /// CSV with a date column, one class column per index and the raw
    /// outputs.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["date".to_string()];
        header.extend(Market::ALL.iter().map(|m| m.code().to_string()));
        let per = self.head.outputs() / NUM_MARKETS;
        for m in Market::ALL {
            for k in 0..per {
                header.push(format!("{}_p{k}", m.code()));
            }
        }
        wtr.write_record(&header).map_err(csv_err)?;
        for ((d, c), o) in self.dates.iter().zip(&self.classes).zip(&self.outputs) {
            let mut rec = vec![d.format("%Y-%m-%d").to_string()];
            rec.extend(c.iter().map(ToString::to_string));
            rec.extend(o.iter().map(|v| format!("{v:.17e}")));
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Read a file written by [`Self::write_csv`]; the head kind is inferred
    /// from the number of output columns.
    pub fn read_csv(r: impl Read, source: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        let extra = headers.len().saturating_sub(1 + NUM_MARKETS);
        let head = match extra {
            NUM_MARKETS => HeadKind::Binary5,
            n if n == 3 * NUM_MARKETS => HeadKind::Ternary15,
            _ => {
                return Err(Error::Schema(format!(
                    "{source}: {} columns do not describe a prediction file",
                    headers.len()
                )))
            }
        };
        let mut out = Self::new(head);
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let line = rec.position().map_or(0, |p| p.line());
            let perr = |msg: String| Error::Parse {
                path: source.to_string(),
                line,
                msg,
            };
            let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
                .map_err(|e| perr(format!("bad date: {e}")))?;
            let mut classes = [0u8; NUM_MARKETS];
            for (k, c) in classes.iter_mut().enumerate() {
                *c = rec[1 + k]
                    .parse()
                    .map_err(|_| perr(format!("bad class `{}`", &rec[1 + k])))?;
                if usize::from(*c) >= head.num_classes() {
                    return Err(Error::Domain(format!("{source}:{line}: class {c} outside the label set")));
                }
            }
            let outputs = (1 + NUM_MARKETS..rec.len())
                .map(|k| rec[k].parse::<f64>().map_err(|_| perr(format!("bad output `{}`", &rec[k]))))
                .collect::<Result<Vec<_>>>()?;
            out.dates.push(date);
            out.classes.push(classes);
            out.outputs.push(outputs);
        }
        Ok(out)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_csv(std::fs::File::open(path)?, &path.display().to_string())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Schema(format!("csv: {e}"))
}
