//! Graph layers, graph pooling and conv blocks.
//!
//! Each layer has a tape form (used by [`super::Network`] and the trainer)
//! and a plain array form for direct evaluation.

use std::sync::Arc;

use gradcore::{Array, SparseRows, Tape, Var};

use super::config::{PoolKind, GAT_SLOPE};
use crate::error::{Context, Error, Result};
use crate::graphbuild::FeatureGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayerParams {
    /// `[in_ch, out_ch]`.
    pub weight: Array,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatLayerParams {
    /// `[in_ch, out_ch]`.
    pub weight: Array,
    /// `[2·out_ch]`: destination half then source half.
    pub attention: Array,
}

/// Shared linear map applied to every node row of `[F, C]` or `[T, F, C]`.
pub fn node_linear(tape: &mut Tape, x: Var, weight: Var) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let c = *shape.last().expect("rank checked by caller");
    let rows = shape.iter().product::<usize>() / c.max(1);
    let flat = tape.reshape(x, [rows, c]).context(|| "node linear".into())?;
    let z = tape.matmul(flat, weight).context(|| "node linear".into())?;
    let out_c = tape.value(z).shape()[1];
    let mut out_shape = shape;
    *out_shape.last_mut().expect("nonempty") = out_c;
    tape.reshape(z, out_shape).context(|| "node linear".into())
}

fn check_nodes(op: &str, x: &Array, n: usize) -> Result<()> {
    let rank = x.rank();
    if !(rank == 2 || rank == 3) || x.shape()[rank - 2] != n {
        return Err(Error::Tensor {
            context: op.to_string(),
            source: gradcore::Error::Dimension {
                op: "graph layer",
                expected: format!("{n} node rows"),
                got: format!("{:?}", x.shape()),
            },
        });
    }
    Ok(())
}

/// `ReLU(P·(X W))` with the degree-normalised operator `P`.
pub fn gcn_on_tape(tape: &mut Tape, x: Var, weight: Var, op: &Arc<SparseRows>) -> Result<Var> {
    check_nodes("gcn layer", tape.value(x), op.n())?;
    let z = node_linear(tape, x, weight)?;
    let p = tape.propagate(z, Arc::clone(op)).context(|| "gcn layer".into())?;
    Ok(tape.relu(p))
}

/// `ReLU(Σ_u α_vu · W x_u)` with attention over closed neighbourhoods.
pub fn gat_on_tape(
    tape: &mut Tape,
    x: Var,
    weight: Var,
    attention: Var,
    pattern: &Arc<SparseRows>,
) -> Result<Var> {
    check_nodes("gat layer", tape.value(x), pattern.n())?;
    let z = node_linear(tape, x, weight)?;
    let h = tape
        .gat_aggregate(z, attention, Arc::clone(pattern), GAT_SLOPE)
        .context(|| "gat layer".into())?;
    Ok(tape.relu(h))
}

/// Collapse the node axis of `[F, C]` or `[T, F, C]`.
pub fn pool_on_tape(tape: &mut Tape, x: Var, kind: PoolKind, weight: Option<Var>) -> Result<Var> {
    let axis = tape.value(x).rank().saturating_sub(2);
    let out = match (kind, weight) {
        (PoolKind::Mean, None) => tape.reduce_mean(x, axis),
        (PoolKind::Max, None) => tape.reduce_max(x, axis),
        (PoolKind::FullyConnected, Some(w)) => tape.node_weighted_sum(x, w),
        _ => {
            return Err(Error::Config(
                "pooling weights are required for fc pooling and only for it".into(),
            ))
        }
    };
    out.context(|| "graph pool".into())
}

/// Valid conv along time, ReLU, then non-overlapping max-pool.
pub fn conv_block_on_tape(
    tape: &mut Tape,
    x: Var,
    kernels: Var,
    bias: Var,
    pool: usize,
) -> Result<Var> {
    let c = tape.conv1d(x, kernels, bias).context(|| "conv block".into())?;
    let r = tape.relu(c);
    tape.maxpool1d(r, pool).context(|| "conv block".into())
}

pub fn gcn_layer(x: &Array, graph: &FeatureGraph, params: &GcnLayerParams) -> Result<Array> {
    let mut tape = Tape::new();
    let (xv, wv) = (tape.leaf(x.clone()), tape.leaf(params.weight.clone()));
    let out = gcn_on_tape(&mut tape, xv, wv, &graph.gcn_operator())?;
    Ok(tape.value(out).clone())
}

pub fn gat_layer(x: &Array, graph: &FeatureGraph, params: &GatLayerParams) -> Result<Array> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let wv = tape.leaf(params.weight.clone());
    let av = tape.leaf(params.attention.clone());
    let out = gat_on_tape(&mut tape, xv, wv, av, &graph.closed_neighborhoods())?;
    Ok(tape.value(out).clone())
}

/// `weights` must be given exactly when `kind` is fully connected.
pub fn graph_pool(x: &Array, kind: PoolKind, weights: Option<&Array>) -> Result<Array> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let wv = weights.map(|w| tape.leaf(w.clone()));
    let out = pool_on_tape(&mut tape, xv, kind, wv)?;
    Ok(tape.value(out).clone())
}

pub fn conv_block(x: &Array, kernels: &Array, bias: &Array, pool: usize) -> Result<Array> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let kv = tape.leaf(kernels.clone());
    let bv = tape.leaf(bias.clone());
    let out = conv_block_on_tape(&mut tape, xv, kv, bv, pool)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Array {
        Array::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn gcn_two_node_example() {
        let g = FeatureGraph::from_edges(2, &[(0, 1)]).unwrap();
        let h = gcn_layer(&m(&[&[1.0], &[-2.0]]), &g, &GcnLayerParams { weight: Array::identity(1) })
            .unwrap();
        assert_eq!(h.data(), &[0.0, 0.0]);
    }

    #[test]
    fn gcn_isolated_node() {
        let g = FeatureGraph::empty(1);
        let h = gcn_layer(&m(&[&[3.0]]), &g, &GcnLayerParams { weight: Array::identity(1) }).unwrap();
        assert_eq!(h.data(), &[3.0]);
    }

    #[test]
    fn gat_isolated_and_zero_attention() {
        let w = m(&[&[1.0, -1.0], &[0.5, 2.0]]);
        let iso = gat_layer(
            &m(&[&[1.0, 2.0]]),
            &FeatureGraph::empty(1),
            &GatLayerParams {
                weight: w.clone(),
                attention: Array::vector(vec![0.3, -0.2, 0.7, 0.1]),
            },
        )
        .unwrap();
        // W·x = [2, 3]
        assert_eq!(iso.data(), &[2.0, 3.0]);

        let path = FeatureGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let x = m(&[&[1.0, 0.0], &[0.0, 1.0], &[2.0, 1.0]]);
        let h = gat_layer(
            &x,
            &path,
            &GatLayerParams {
                weight: w,
                attention: Array::zeros([4]),
            },
        )
        .unwrap();
        // rows of X W: [1,-1], [0.5,2], [2.5,0]; node 1 averages all three
        assert!((h.at(&[1, 0]) - 4.0 / 3.0).abs() < 1e-15);
        assert!((h.at(&[1, 1]) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(h.at(&[0, 1]), 0.5);
    }

    #[test]
    fn pool_cases() {
        let x = m(&[&[1.0, 3.0], &[5.0, 7.0]]);
        assert_eq!(graph_pool(&x, PoolKind::Mean, None).unwrap().data(), &[3.0, 5.0]);
        assert_eq!(graph_pool(&m(&[&[4.0, -1.0]]), PoolKind::Max, None).unwrap().data(), &[4.0, -1.0]);
        let sel = Array::vector(vec![1.0, 0.0]);
        assert_eq!(
            graph_pool(&x, PoolKind::FullyConnected, Some(&sel)).unwrap().data(),
            &[1.0, 3.0]
        );
        assert!(graph_pool(&x, PoolKind::FullyConnected, None).is_err());
        assert!(graph_pool(&x, PoolKind::Mean, Some(&sel)).is_err());
    }

    #[test]
    fn conv_block_extents() {
        let k = Array::full([5, 1, 8], 0.1);
        let b = Array::zeros([8]);
        assert_eq!(conv_block(&Array::full([60, 1], 1.0), &k, &b, 2).unwrap().shape(), &[28, 8]);
        let k8 = Array::full([5, 8, 8], 0.1);
        assert_eq!(conv_block(&Array::full([28, 8], 1.0), &k8, &b, 2).unwrap().shape(), &[12, 8]);
        let ident = Array::new([1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(conv_block(&x, &ident, &Array::zeros([2]), 1).unwrap(), x);
        assert!(conv_block(&Array::full([4, 1], 1.0), &k, &b, 2).is_err());
    }

    #[test]
    fn node_count_mismatch_is_a_dimension_error() {
        let g = FeatureGraph::empty(3);
        let err = gcn_layer(&Array::zeros([2, 1]), &g, &GcnLayerParams { weight: Array::identity(1) });
        assert!(matches!(
            err,
            Err(Error::Tensor {
                source: gradcore::Error::Dimension { .. },
                ..
            })
        ));
    }
}
