//! The prepared dataset: aligned, normalised panel with labels, statistics,
//! split sizes and the frozen feature graph, stored as one container file.
//!
//! Training rows are the panel rows read by training windows, `0 .. d-1+n_train`.
//! Normalisation statistics and the correlation graph use exactly those
//! rows; ternary thresholds use the returns labelling the training windows.

use std::path::Path;

use chrono::NaiveDate;
use gradcore::store::{Container, Entry, KIND_DATASET};
use gradcore::Array;

use crate::dataprep::{
    align_panel, label_binary, make_windows, nday_returns, LabelScheme, NormStats, PanelMode,
    RawMarketTable, SplitSpec, TernaryThresholds,
};
use crate::error::{Context, Error, Result};
use crate::graphbuild::{pearson_matrix, threshold_graph, FeatureGraph};
use crate::market::{Market, NUM_MARKETS};
use crate::trainer::DataSplits;

/// Everything `prepare` needs besides the raw tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepareOptions {
    pub mode: PanelMode,
    pub split: SplitSpec,
    pub window: usize,
    /// Label horizon in days.
    pub horizon: usize,
    pub tau: f64,
    pub signed_threshold: bool,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            mode: PanelMode::Combined,
            split: SplitSpec::SPLIT_65_15_20,
            window: crate::dataprep::DEFAULT_WINDOW,
            horizon: 1,
            tau: crate::graphbuild::DEFAULT_TAU,
            signed_threshold: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub options: PrepareOptions,
    pub dates: Vec<NaiveDate>,
    pub feature_names: Vec<String>,
    /// Normalised `[n, F]` features.
    pub features: Array,
    /// `[n, 5]` closing prices.
    pub closes: Array,
    /// `[n-h, 5]` horizon returns; row `t` labels anchor `t`.
    pub returns: Array,
    /// `[n-1, 5]` next-day returns used for PnL.
    pub daily_returns: Array,
    pub labels_binary: Vec<[u8; NUM_MARKETS]>,
    pub labels_ternary: Vec<[u8; NUM_MARKETS]>,
    pub thresholds: [TernaryThresholds; NUM_MARKETS],
    pub norm: NormStats,
    /// Window counts of the train, validation and test segments.
    pub split_sizes: (usize, usize, usize),
    pub graph: FeatureGraph,
    pub config_hash: [u8; 32],
}

fn column(a: &Array, k: usize) -> Vec<f64> {
    (0..a.shape()[0]).map(|t| a.at(&[t, k])).collect()
}

/// Fitted training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingStats {
    pub norm: NormStats,
    pub thresholds: [TernaryThresholds; NUM_MARKETS],
    pub graph: FeatureGraph,
}

/// Fit normalisation, ternary thresholds and the feature graph from the
/// first `train_rows` panel rows and the returns of training anchors
/// `d-1 .. train_rows`. Rows past `train_rows + h - 1` are never read.
pub fn fit_training_stats(
    raw_features: &Array,
    returns: &Array,
    train_rows: usize,
    opts: &PrepareOptions,
    names: &[String],
) -> Result<TrainingStats> {
    let norm = NormStats::from_rows(raw_features, train_rows)?;
    let train_norm = norm.apply(&raw_features.rows(0, train_rows))?;
    let corr = pearson_matrix(&train_norm)?;
    let graph = threshold_graph(&corr, opts.tau, opts.signed_threshold)?.with_names(names.to_vec())?;
    let first = opts.window - 1;
    let mut thresholds = Vec::with_capacity(NUM_MARKETS);
    for k in 0..NUM_MARKETS {
        let r: Vec<f64> = (first..train_rows).map(|t| returns.at(&[t, k])).collect();
        let (_, thr) = crate::dataprep::label_ternary(&r, r.len())?;
        thresholds.push(thr);
    }
    Ok(TrainingStats {
        norm,
        thresholds: thresholds.try_into().expect("five indices"),
        graph,
    })
}

impl PreparedDataset {
    pub fn prepare(tables: &[RawMarketTable], opts: PrepareOptions, config_hash: [u8; 32]) -> Result<Self> {
        opts.split.validate()?;
        let panel = align_panel(tables, opts.mode)?;
        let n = panel.len();
        let (d, h) = (opts.window, opts.horizon);
        if d == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        let mut returns = Vec::with_capacity(NUM_MARKETS);
        let mut daily = Vec::with_capacity(NUM_MARKETS);
        for m in Market::ALL {
            let close = panel.close_series(m);
            returns.push(nday_returns(&close, h).map_err(|e| with_market(e, m))?);
            daily.push(nday_returns(&close, 1).map_err(|e| with_market(e, m))?);
        }
        let to_matrix = |cols: &[Vec<f64>]| -> Result<Array> {
            let rows = cols[0].len();
            let data = (0..rows).flat_map(|t| cols.iter().map(move |c| c[t])).collect();
            Ok(Array::new([rows, cols.len()], data)?)
        };
        let returns = to_matrix(&returns)?;
        let daily_returns = to_matrix(&daily)?;

        let anchors = (n - h).checked_sub(d - 1).filter(|&m| m > 0).ok_or_else(|| {
            Error::InsufficientData(format!("{n} aligned dates cannot form a {d}-day window with a {h}-day label"))
        })?;
        let split_sizes = opts.split.sizes(anchors)?;
        let train_rows = d - 1 + split_sizes.0;
        let stats = fit_training_stats(&panel.features, &returns, train_rows, &opts, &panel.feature_names)?;
        let features = stats.norm.apply(&panel.features)?;

        let mut labels_binary = vec![[0u8; NUM_MARKETS]; n - h];
        let mut labels_ternary = vec![[0u8; NUM_MARKETS]; n - h];
        for k in 0..NUM_MARKETS {
            let r = column(&returns, k);
            for (t, b) in label_binary(&r).into_iter().enumerate() {
                labels_binary[t][k] = b;
                labels_ternary[t][k] = stats.thresholds[k].label(r[t]);
            }
        }
        Ok(Self {
            options: opts,
            dates: panel.dates,
            feature_names: panel.feature_names,
            features,
            closes: panel.closes,
            returns,
            daily_returns,
            labels_binary,
            labels_ternary,
            thresholds: stats.thresholds,
            norm: stats.norm,
            split_sizes,
            graph: stats.graph,
            config_hash,
        })
    }

    pub fn window(&self) -> usize {
        self.options.window
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn train_rows(&self) -> usize {
        self.window() - 1 + self.split_sizes.0
    }

    pub fn labels(&self, scheme: LabelScheme) -> &[[u8; NUM_MARKETS]] {
        match scheme {
            LabelScheme::Binary01 => &self.labels_binary,
            LabelScheme::Ternary012 => &self.labels_ternary,
        }
    }

    /// Windows split into the stored train, validation and test segments.
    pub fn splits(&self, scheme: LabelScheme) -> Result<DataSplits> {
        let mut samples = make_windows(&self.features, self.labels(scheme), self.window())?;
        let (a, b, c) = self.split_sizes;
        if samples.len() != a + b + c {
            return Err(Error::Split(format!(
                "{} windows but stored split sizes sum to {}",
                samples.len(),
                a + b + c
            )));
        }
        let test = samples.split_off(a + b);
        let validation = samples.split_off(a);
        Ok(DataSplits {
            train: samples,
            validation,
            test,
        })
    }

    /// Panel rows of the test anchors.
    pub fn test_anchors(&self) -> std::ops::Range<usize> {
        let (a, b, c) = self.split_sizes;
        let start = self.window() - 1 + a + b;
        start..start + c
    }

    pub fn test_dates(&self) -> Vec<NaiveDate> {
        self.test_anchors().map(|t| self.dates[t]).collect()
    }

    /// Next-day returns earned by positions taken at each test anchor.
    pub fn test_daily_returns(&self) -> Vec<[f64; NUM_MARKETS]> {
        self.test_anchors()
            .map(|t| std::array::from_fn(|k| self.daily_returns.at(&[t, k])))
            .collect()
    }

    /// Recompute the graph from the stored normalised training rows.
    pub fn rebuild_graph(&self) -> Result<FeatureGraph> {
        let corr = pearson_matrix(&self.features.rows(0, self.train_rows()))?;
        threshold_graph(&corr, self.options.tau, self.options.signed_threshold)?
            .with_names(self.feature_names.clone())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(KIND_DATASET, self.config_hash);
        let o = &self.options;
        let (a, b, t) = self.split_sizes;
        c.push("mode", Entry::Text(vec![o.mode.to_string()]));
        c.push(
            "meta",
            ints(
                vec![7],
                [o.window, o.horizon, a, b, t, usize::from(o.signed_threshold), 0]
                    .iter()
                    .map(|&v| v as i64)
                    .collect(),
            ),
        );
        c.push("split", Entry::F64(Array::vector(vec![o.split.train, o.split.validation, o.split.test])));
        c.push("tau", Entry::F64(Array::vector(vec![o.tau])));
        c.push(
            "dates",
            Entry::Text(self.dates.iter().map(|d| d.format("%Y-%m-%d").to_string()).collect()),
        );
        c.push("feature_names", Entry::Text(self.feature_names.clone()));
        c.push("features", Entry::F64(self.features.clone()));
        c.push("closes", Entry::F64(self.closes.clone()));
        c.push("returns", Entry::F64(self.returns.clone()));
        c.push("daily_returns", Entry::F64(self.daily_returns.clone()));
        c.push("labels.binary", label_entry(&self.labels_binary));
        c.push("labels.ternary", label_entry(&self.labels_ternary));
        let thr: Vec<f64> = self.thresholds.iter().flat_map(|t| [t.low, t.high]).collect();
        c.push("thresholds", Entry::F64(Array::new([NUM_MARKETS, 2], thr).expect("5x2")));
        c.push("norm.mean", Entry::F64(Array::vector(self.norm.mean.clone())));
        c.push("norm.std", Entry::F64(Array::vector(self.norm.std.clone())));
        let edges: Vec<i64> = self.graph.edges().iter().flat_map(|&(u, v)| [u as i64, v as i64]).collect();
        c.push("graph.edges", ints(vec![self.graph.edges().len(), 2], edges));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != KIND_DATASET {
            return Err(Error::Schema(format!("container kind {} is not a prepared dataset", c.kind)));
        }
        let ctx = |what: &'static str| move || format!("prepared dataset `{what}`");
        let mode: PanelMode = c.text("mode").context(ctx("mode"))?.first().map_or("", String::as_str).parse()?;
        let (_, meta) = c.i64("meta").context(ctx("meta"))?;
        let meta: Vec<usize> = meta.iter().map(|&v| v as usize).collect();
        if meta.len() != 7 {
            return Err(Error::Schema("prepared dataset `meta` has the wrong length".into()));
        }
        let split = c.f64("split").context(ctx("split"))?.data().to_vec();
        let tau = c.f64("tau").context(ctx("tau"))?.data().first().copied().unwrap_or(f64::NAN);
        let options = PrepareOptions {
            mode,
            split: SplitSpec::new(split[0], split[1], split[2])?,
            window: meta[0],
            horizon: meta[1],
            tau,
            signed_threshold: meta[5] != 0,
        };
        let dates = c
            .text("dates")
            .context(ctx("dates"))?
            .iter()
            .map(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| Error::Schema(format!("bad stored date {s}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let feature_names = c.text("feature_names").context(ctx("feature_names"))?.to_vec();
        let thr = c.f64("thresholds").context(ctx("thresholds"))?;
        let thresholds = std::array::from_fn(|k| TernaryThresholds {
            low: thr.at(&[k, 0]),
            high: thr.at(&[k, 1]),
        });
        let (_, edges) = c.i64("graph.edges").context(ctx("graph.edges"))?;
        let pairs: Vec<(usize, usize)> = edges.chunks(2).map(|p| (p[0] as usize, p[1] as usize)).collect();
        let graph = FeatureGraph::from_edges(feature_names.len(), &pairs)?.with_names(feature_names.clone())?;
        Ok(Self {
            options,
            dates,
            feature_names,
            features: c.f64("features").context(ctx("features"))?.clone(),
            closes: c.f64("closes").context(ctx("closes"))?.clone(),
            returns: c.f64("returns").context(ctx("returns"))?.clone(),
            daily_returns: c.f64("daily_returns").context(ctx("daily_returns"))?.clone(),
            labels_binary: read_labels(c, "labels.binary")?,
            labels_ternary: read_labels(c, "labels.ternary")?,
            thresholds,
            norm: NormStats {
                mean: c.f64("norm.mean").context(ctx("norm.mean"))?.data().to_vec(),
                std: c.f64("norm.std").context(ctx("norm.std"))?.data().to_vec(),
            },
            split_sizes: (meta[2], meta[3], meta[4]),
            graph,
            config_hash: c.hash,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path).context(|| "write prepared dataset".into())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let c = Container::load(path).context(|| format!("read {}", path.display()))?;
        Self::from_container(&c)
    }
}

fn with_market(e: Error, m: Market) -> Error {
    match e {
        Error::Domain(msg) => Error::Domain(format!("{m}: {msg}")),
        Error::InsufficientData(msg) => Error::InsufficientData(format!("{m}: {msg}")),
        other => other,
    }
}

fn ints(shape: Vec<usize>, data: Vec<i64>) -> Entry {
    Entry::I64 { shape, data }
}

fn label_entry(labels: &[[u8; NUM_MARKETS]]) -> Entry {
    ints(
        vec![labels.len(), NUM_MARKETS],
        labels.iter().flatten().map(|&l| i64::from(l)).collect(),
    )
}

fn read_labels(c: &Container, name: &'static str) -> Result<Vec<[u8; NUM_MARKETS]>> {
    let (_, data) = c.i64(name).context(|| format!("prepared dataset `{name}`"))?;
    Ok(data
        .chunks(NUM_MARKETS)
        .map(|ch| std::array::from_fn(|k| ch[k] as u8))
        .collect())
}
