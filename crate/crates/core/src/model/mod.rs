//! Graph layers, conv blocks and configurable networks.
//!
//! Tensor protocol: a `[d, F]` window becomes a `[d, F, 1]` tensor. Conv
//! blocks run along time for each node with shared kernels; graph layers run
//! over the nodes of each day with weights shared across days; graph pooling
//! removes the node axis, after which conv blocks treat the channels as
//! input channels. The final tensor is flattened into the dense head.

mod config;
mod layers;
mod network;
mod predict;

pub use config::{
    Family, GraphKind, HeadKind, NetworkConfig, PoolKind, Preset, Stage, TensorShape,
    BASELINE_HIDDEN, CNNPRED_KERNEL, CONV_FILTERS, CONV_KERNEL, CONV_POOL, GAT_CHANNELS,
    GAT_CHANNELS_SANDWICH, GAT_SLOPE, GCN_CHANNELS,
};
pub use layers::{
    conv_block, conv_block_on_tape, gat_layer, gat_on_tape, gcn_layer, gcn_on_tape, graph_pool,
    node_linear, pool_on_tape, GatLayerParams, GcnLayerParams,
};
pub use network::Network;
pub use predict::{discretize, PredictionSeries};
