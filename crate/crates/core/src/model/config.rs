//! Declarative network layouts, named presets and static shape inference.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataprep::LabelScheme;
use crate::error::{Error, Result};
use crate::market::NUM_MARKETS;

pub const GAT_SLOPE: f64 = 0.2;
pub const GAT_CHANNELS: [usize; 2] = [30, 10];
pub const GAT_CHANNELS_SANDWICH: [usize; 2] = [20, 10];
pub const GCN_CHANNELS: [usize; 6] = [10, 7, 2, 3, 5, 5];
pub const CONV_FILTERS: usize = 8;
pub const CONV_KERNEL: usize = 5;
pub const CONV_POOL: usize = 2;
/// Kernel length of the durational layers in the CNN baselines.
pub const CNNPRED_KERNEL: usize = 3;
pub const BASELINE_HIDDEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Gcn,
    Gat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Mean,
    Max,
    /// Trainable weight per node.
    #[serde(rename = "fc")]
    FullyConnected,
}

impl PoolKind {
    pub const ALL: [PoolKind; 3] = [PoolKind::Mean, PoolKind::Max, PoolKind::FullyConnected];

    pub fn name(self) -> &'static str {
        match self {
            PoolKind::Mean => "mean",
            PoolKind::Max => "max",
            PoolKind::FullyConnected => "fc",
        }
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PoolKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("pooling must be mean, max or fc, got `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Five sigmoid probabilities of an up move.
    Binary5,
    /// Five groups of three softmax scores (down, neutral, up).
    Ternary15,
}

impl HeadKind {
    pub fn outputs(self) -> usize {
        match self {
            HeadKind::Binary5 => NUM_MARKETS,
            HeadKind::Ternary15 => 3 * NUM_MARKETS,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            HeadKind::Binary5 => 2,
            HeadKind::Ternary15 => 3,
        }
    }

    pub fn for_labels(scheme: LabelScheme) -> Self {
        match scheme {
            LabelScheme::Binary01 => HeadKind::Binary5,
            LabelScheme::Ternary012 => HeadKind::Ternary15,
        }
    }

    pub fn labels(self) -> LabelScheme {
        match self {
            HeadKind::Binary5 => LabelScheme::Binary01,
            HeadKind::Ternary15 => LabelScheme::Ternary012,
        }
    }
}

/// One stage of a layout.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Stage {
    /// Valid conv along time, ReLU, then max-pool. Applied per node while the
    /// node axis is present.
    Conv {
        filters: usize,
        kernel: usize,
        pool: usize,
    },
    /// Graph layers applied per time step with weights shared across steps.
    Graph { kind: GraphKind, channels: Vec<usize> },
    /// Collapse the node axis.
    Pool { kind: PoolKind },
    /// Dense map of each day's full feature vector to `filters` values,
    /// followed by ReLU.
    DailyMix { filters: usize },
}

/// Working tensor between stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TensorShape {
    Nodes { t: usize, n: usize, c: usize },
    Seq { t: usize, c: usize },
}

impl TensorShape {
    pub fn dims(self) -> Vec<usize> {
        match self {
            TensorShape::Nodes { t, n, c } => vec![t, n, c],
            TensorShape::Seq { t, c } => vec![t, c],
        }
    }

    pub fn len(self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn time(self) -> usize {
        match self {
            TensorShape::Nodes { t, .. } | TensorShape::Seq { t, .. } => t,
        }
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.dims();
        let parts: Vec<String> = d.iter().map(ToString::to_string).collect();
        write!(f, "({})", parts.join("×"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub layout: Vec<Stage>,
    pub head: HeadKind,
    /// Optional ReLU dense layer between the flattened tensor and the head.
    pub hidden: Option<usize>,
    pub window: usize,
    pub features: usize,
}

impl NetworkConfig {
    pub fn has_graph(&self) -> bool {
        self.layout.iter().any(|s| matches!(s, Stage::Graph { .. }))
    }

    pub fn graph_kind(&self) -> Option<GraphKind> {
        self.layout.iter().find_map(|s| match s {
            Stage::Graph { kind, .. } => Some(*kind),
            _ => None,
        })
    }

    /// Replace every conv kernel length, for small-window instances.
    pub fn with_conv_kernel(mut self, kernel: usize) -> Self {
        for s in &mut self.layout {
            if let Stage::Conv { kernel: k, .. } = s {
                *k = kernel;
            }
        }
        self
    }

    /// Input shape followed by the shape after every stage.
    pub fn infer_shapes(&self) -> Result<Vec<TensorShape>> {
        let bad = |i: usize, msg: String| Error::Config(format!("stage {i}: {msg}"));
        if self.window == 0 || self.features == 0 {
            return Err(Error::Config("window and feature count must be positive".into()));
        }
        let graphs = self
            .layout
            .iter()
            .filter(|s| matches!(s, Stage::Graph { .. }))
            .count();
        if graphs > 1 {
            return Err(Error::Config("at most one graph stack per layout".into()));
        }
        let mixes = self
            .layout
            .iter()
            .any(|s| matches!(s, Stage::DailyMix { .. }));
        if mixes && graphs > 0 {
            return Err(Error::Config(
                "daily mixing and graph stages cannot be combined".into(),
            ));
        }
        let mut shape = TensorShape::Nodes {
            t: self.window,
            n: self.features,
            c: 1,
        };
        let mut out = vec![shape];
        for (i, stage) in self.layout.iter().enumerate() {
            let after_graph = i > 0 && matches!(self.layout[i - 1], Stage::Graph { .. });
            if after_graph && !matches!(stage, Stage::Pool { .. }) {
                return Err(bad(i, "a graph stack must be followed by pooling".into()));
            }
            shape = match (stage, shape) {
                (Stage::Conv { filters, kernel, pool }, s) => {
                    if *filters == 0 || *kernel == 0 || *pool == 0 {
                        return Err(bad(i, "conv sizes must be positive".into()));
                    }
                    let t = s.time();
                    if t < kernel + pool - 1 {
                        return Err(bad(
                            i,
                            format!("time extent {t} too short for kernel {kernel} and pool {pool}"),
                        ));
                    }
                    let t = (t - kernel + 1) / pool;
                    match s {
                        TensorShape::Nodes { n, .. } => TensorShape::Nodes { t, n, c: *filters },
                        TensorShape::Seq { .. } => TensorShape::Seq { t, c: *filters },
                    }
                }
                (Stage::Graph { channels, .. }, TensorShape::Nodes { t, n, .. }) => {
                    if channels.is_empty() || channels.contains(&0) {
                        return Err(bad(i, "graph channels must be nonempty and positive".into()));
                    }
                    TensorShape::Nodes {
                        t,
                        n,
                        c: *channels.last().expect("nonempty"),
                    }
                }
                (Stage::Pool { .. }, TensorShape::Nodes { t, c, .. }) if after_graph => {
                    TensorShape::Seq { t, c }
                }
                (Stage::Pool { .. }, _) => {
                    return Err(bad(i, "pooling must directly follow the graph stack".into()));
                }
                (Stage::DailyMix { filters }, TensorShape::Nodes { t, .. }) if *filters > 0 => {
                    TensorShape::Seq { t, c: *filters }
                }
                (stage, s) => {
                    return Err(bad(i, format!("{stage:?} cannot take a {s} tensor")));
                }
            };
            out.push(shape);
        }
        if matches!(self.layout.last(), Some(Stage::Graph { .. })) {
            return Err(Error::Config("a graph stack must be followed by pooling".into()));
        }
        if self.hidden == Some(0) {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.infer_shapes().map(|_| ())
    }

    /// Length of the flattened vector fed to the dense head.
    pub fn flat_len(&self) -> Result<usize> {
        Ok(self.infer_shapes()?.last().expect("input shape").len())
    }
}

/// Named layouts: the two CNN baselines, the two pure-graph baselines and
/// the three hybrid orders for each graph kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "cnnpred-2d")]
    Cnnpred2d,
    #[serde(rename = "cnnpred-3d")]
    Cnnpred3d,
    #[serde(rename = "gat")]
    Gat,
    #[serde(rename = "gcn")]
    Gcn,
    #[serde(rename = "gat-cnn")]
    GatCnn,
    #[serde(rename = "cnn-gat")]
    CnnGat,
    #[serde(rename = "cnn-gat-cnn")]
    CnnGatCnn,
    #[serde(rename = "gcn-cnn")]
    GcnCnn,
    #[serde(rename = "cnn-gcn")]
    CnnGcn,
    #[serde(rename = "cnn-gcn-cnn")]
    CnnGcnCnn,
}

/// Report row groups, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Cnnpred2d,
    Cnnpred3d,
    Gat,
    Gcn,
    GatCnnpred,
    GcnCnnpred,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Cnnpred2d,
        Family::Cnnpred3d,
        Family::Gat,
        Family::Gcn,
        Family::GatCnnpred,
        Family::GcnCnnpred,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Family::Cnnpred2d => "2D-CNNpred",
            Family::Cnnpred3d => "3D-CNNpred",
            Family::Gat => "GAT",
            Family::Gcn => "GCN",
            Family::GatCnnpred => "GAT-CNNpred",
            Family::GcnCnnpred => "GCN-CNNpred",
        }
    }
}

impl Preset {
    pub const ALL: [Preset; 10] = [
        Preset::Cnnpred2d,
        Preset::Cnnpred3d,
        Preset::Gat,
        Preset::Gcn,
        Preset::GatCnn,
        Preset::CnnGat,
        Preset::CnnGatCnn,
        Preset::GcnCnn,
        Preset::CnnGcn,
        Preset::CnnGcnCnn,
    ];

    /// The six graph-CNN hybrids.
    pub const HYBRIDS: [Preset; 6] = [
        Preset::GatCnn,
        Preset::CnnGat,
        Preset::CnnGatCnn,
        Preset::GcnCnn,
        Preset::CnnGcn,
        Preset::CnnGcnCnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Cnnpred2d => "cnnpred-2d",
            Preset::Cnnpred3d => "cnnpred-3d",
            Preset::Gat => "gat",
            Preset::Gcn => "gcn",
            Preset::GatCnn => "gat-cnn",
            Preset::CnnGat => "cnn-gat",
            Preset::CnnGatCnn => "cnn-gat-cnn",
            Preset::GcnCnn => "gcn-cnn",
            Preset::CnnGcn => "cnn-gcn",
            Preset::CnnGcnCnn => "cnn-gcn-cnn",
        }
    }

    /// Layout label such as `GAT-CNN`.
    pub fn label(self) -> String {
        match self {
            Preset::Cnnpred2d | Preset::Cnnpred3d => self.family().label().to_string(),
            _ => self.name().to_ascii_uppercase(),
        }
    }

    pub fn family(self) -> Family {
        match self {
            Preset::Cnnpred2d => Family::Cnnpred2d,
            Preset::Cnnpred3d => Family::Cnnpred3d,
            Preset::Gat => Family::Gat,
            Preset::Gcn => Family::Gcn,
            Preset::GatCnn | Preset::CnnGat | Preset::CnnGatCnn => Family::GatCnnpred,
            Preset::GcnCnn | Preset::CnnGcn | Preset::CnnGcnCnn => Family::GcnCnnpred,
        }
    }

    pub fn is_cnn_baseline(self) -> bool {
        matches!(self, Preset::Cnnpred2d | Preset::Cnnpred3d)
    }

    pub fn config(self, pool: PoolKind, head: HeadKind, window: usize, features: usize) -> NetworkConfig {
        let conv = || Stage::Conv {
            filters: CONV_FILTERS,
            kernel: CONV_KERNEL,
            pool: CONV_POOL,
        };
        let cnnpred_conv = || Stage::Conv {
            filters: CONV_FILTERS,
            kernel: CNNPRED_KERNEL,
            pool: CONV_POOL,
        };
        let graph = |kind, channels: &[usize]| Stage::Graph {
            kind,
            channels: channels.to_vec(),
        };
        let pool_stage = || Stage::Pool { kind: pool };
        let gat = || graph(GraphKind::Gat, &GAT_CHANNELS);
        let gcn = || graph(GraphKind::Gcn, &GCN_CHANNELS);
        let (layout, hidden) = match self {
            Preset::Cnnpred2d => (
                vec![
                    Stage::DailyMix {
                        filters: CONV_FILTERS,
                    },
                    cnnpred_conv(),
                    cnnpred_conv(),
                ],
                None,
            ),
            Preset::Cnnpred3d => (vec![cnnpred_conv(), cnnpred_conv()], None),
            Preset::Gat => (vec![gat(), pool_stage()], Some(BASELINE_HIDDEN)),
            Preset::Gcn => (vec![gcn(), pool_stage()], Some(BASELINE_HIDDEN)),
            Preset::GatCnn => (vec![gat(), pool_stage(), conv(), conv()], None),
            Preset::CnnGat => (vec![conv(), conv(), gat(), pool_stage()], None),
            Preset::CnnGatCnn => (
                vec![
                    conv(),
                    graph(GraphKind::Gat, &GAT_CHANNELS_SANDWICH),
                    pool_stage(),
                    conv(),
                ],
                None,
            ),
            Preset::GcnCnn => (vec![gcn(), pool_stage(), conv(), conv()], None),
            Preset::CnnGcn => (vec![conv(), conv(), gcn(), pool_stage()], None),
            Preset::CnnGcnCnn => (vec![conv(), gcn(), pool_stage(), conv()], None),
        };
        NetworkConfig {
            layout,
            head,
            hidden,
            window,
            features,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::Config(format!("unknown preset `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn times(p: Preset) -> Vec<String> {
        p.config(PoolKind::Mean, HeadKind::Binary5, 60, 138)
            .infer_shapes()
            .unwrap()
            .iter()
            .map(ToString::to_string)
            .collect()
    }

    #[test]
    fn gat_cnn_shapes() {
        assert_eq!(
            times(Preset::GatCnn),
            ["(60×138×1)", "(60×138×10)", "(60×10)", "(28×8)", "(12×8)"]
        );
        let c = Preset::GatCnn.config(PoolKind::Mean, HeadKind::Binary5, 60, 138);
        assert_eq!(c.flat_len().unwrap(), 96);
    }

    #[test]
    fn cnn_gat_shapes() {
        assert_eq!(
            times(Preset::CnnGat),
            ["(60×138×1)", "(28×138×8)", "(12×138×8)", "(12×138×10)", "(12×10)"]
        );
        let c = Preset::CnnGat.config(PoolKind::Max, HeadKind::Ternary15, 60, 138);
        assert_eq!(c.flat_len().unwrap(), 120);
    }

    #[test]
    fn sandwich_shapes() {
        assert_eq!(
            times(Preset::CnnGcnCnn),
            ["(60×138×1)", "(28×138×8)", "(28×138×5)", "(28×5)", "(12×8)"]
        );
    }

    #[test]
    fn head_sizes() {
        assert_eq!(HeadKind::Binary5.outputs(), 5);
        assert_eq!(HeadKind::Ternary15.outputs(), 15);
    }

    #[test]
    fn rejects_inconsistent_layouts() {
        let base = Preset::GatCnn.config(PoolKind::Mean, HeadKind::Binary5, 60, 138);
        let mut no_pool = base.clone();
        no_pool.layout.remove(1);
        assert!(matches!(no_pool.validate(), Err(Error::Config(_))));
        let mut stray_pool = base.clone();
        stray_pool.layout.push(Stage::Pool {
            kind: PoolKind::Max,
        });
        assert!(stray_pool.validate().is_err());
        let mut two_graphs = base.clone();
        two_graphs.layout.extend(two_graphs.layout.clone());
        assert!(two_graphs.validate().is_err());
        let short = Preset::GatCnn.config(PoolKind::Mean, HeadKind::Binary5, 8, 6);
        assert!(short.validate().is_err());
        assert!(short.with_conv_kernel(2).validate().is_ok());
    }

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
            assert!(p.config(PoolKind::Mean, HeadKind::Binary5, 60, 138).validate().is_ok());
        }
        assert_eq!("GAT_CNN".parse::<Preset>().unwrap(), Preset::GatCnn);
        assert!("lstm".parse::<Preset>().is_err());
    }
}
