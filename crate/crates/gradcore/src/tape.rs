//! Reverse-mode tape.
//!
//! Every primitive appends a node holding its output value and whatever it
//! needs for the backward pass. Nodes only reference earlier nodes, so a
//! reverse sweep over insertion order is a reverse topological order.

use std::sync::Arc;

use crate::array::{axis_split, Array};
use crate::error::{dim_err, Error, Result};
use crate::sparse::SparseRows;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    AddBias { x: usize, bias: usize },
    Affine { x: usize, scale: f64 },
    Reshape { x: usize },
    Conv1d { x: usize, kernels: usize, bias: usize },
    MaxPool1d { x: usize, argmax: Vec<usize> },
    Relu { x: usize },
    LeakyRelu { x: usize, slope: f64 },
    Sigmoid { x: usize },
    Softmax { x: usize, axis: usize },
    ReduceMean { x: usize, axis: usize },
    ReduceMax { x: usize, argmax: Vec<usize> },
    LnClamped { x: usize, eps: f64 },
    WeightedSum { x: usize, weights: Array },
    Propagate { x: usize, op: Arc<SparseRows> },
    GatAggregate(Box<GatSaved>),
    NodeWeightedSum { x: usize, w: usize },
}

#[derive(Debug)]
struct GatSaved {
    z: usize,
    a: usize,
    pattern: Arc<SparseRows>,
    slope: f64,
    /// Attention weight per (step, edge), edges in pattern order.
    alpha: Vec<f64>,
    /// Pre-activation logit per (step, edge).
    pre: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
}

/// Ordered record of primitive applications.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    kink_margin: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Take ownership of a gradient; nodes the loss does not depend on
    /// yield `None`.
    pub fn take(&mut self, v: Var) -> Option<Array> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Shape of node-batched tensors: rank 2 `[nodes, ch]` or rank 3
/// `[steps, nodes, ch]`. Returns `(steps, nodes, ch)`.
fn node_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [f, c] => Ok((1, f, c)),
        [t, f, c] => Ok((t, f, c)),
        _ => Err(dim_err(op, "rank 2 or 3", format!("{shape:?}"))),
    }
}

/// Time-major tensors for the 1-D conv and pool: rank 2 `[time, ch]` or
/// rank 3 `[time, nodes, ch]`. Returns `(time, nodes, ch)`.
fn time_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [t, c] => Ok((t, 1, c)),
        [t, n, c] => Ok((t, n, c)),
        _ => Err(dim_err(op, "rank 2 or 3", format!("{shape:?}"))),
    }
}

/// Sparse entries of one row ordered by `(weight, source row)`. Summing in
/// this order makes node aggregation independent of node numbering.
fn canonical_entries<'a>(
    ks: std::ops::Range<usize>,
    weight: impl Fn(usize) -> f64,
    row: impl Fn(usize) -> &'a [f64],
) -> Vec<usize> {
    let mut ks: Vec<usize> = ks.collect();
    ks.sort_by(|&a, &b| {
        weight(a).total_cmp(&weight(b)).then_with(|| {
            row(a)
                .iter()
                .zip(row(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    ks
}

/// Gap between the maximum and the runner-up. A tie at exactly zero comes
/// from rectified inputs, whose kink the rectifier already reports.
fn max_margin(best: f64, second: f64) -> f64 {
    if best == 0.0 && second == 0.0 {
        f64::INFINITY
    } else {
        best - second
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            kink_margin: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    /// Smallest distance of any recorded input from a non-differentiable
    /// point: `|x|` for rectifiers, best-minus-runner-up for max selections.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    fn push(&mut self, value: Array, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    fn note_kink(&mut self, margin: f64) {
        if margin < self.kink_margin {
            self.kink_margin = margin;
        }
    }

    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf)
    }

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.val(a), self.val(b));
        let (m, k, n) = match (av.shape(), bv.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            (sa, sb) => {
                return Err(dim_err(
                    "matmul",
                    "[m×k]·[k×n]",
                    format!("{sa:?}·{sb:?}"),
                ))
            }
        };
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        let out = Array::new([m, n], out)?;
        Ok(self.push(out, Op::MatMul { a: a.0, b: b.0 }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.val(a), self.val(b));
        if av.shape() != bv.shape() {
            return Err(dim_err(
                "add",
                format!("{:?}", av.shape()),
                format!("{:?}", bv.shape()),
            ));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Array::new(av.shape(), data)?;
        Ok(self.push(out, Op::Add { a: a.0, b: b.0 }))
    }

    /// Adds a rank-1 `bias` along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.val(x), self.val(bias));
        let c = *xv.shape().last().unwrap_or(&1);
        if bv.shape() != [c] {
            return Err(dim_err(
                "add_bias",
                format!("[{c}]"),
                format!("{:?}", bv.shape()),
            ));
        }
        let b = bv.data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % c])
            .collect();
        let out = Array::new(xv.shape(), data)?;
        Ok(self.push(out, Op::AddBias { x: x.0, bias: bias.0 }))
    }

    /// Elementwise `scale·x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.val(x).map(|v| scale * v + shift);
        self.push(out, Op::Affine { x: x.0, scale })
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.val(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape { x: x.0 }))
    }

    /// Valid 1-D convolution along axis 0.
    ///
    /// `x` is `[time, in]` or `[time, nodes, in]` (each node convolved
    /// independently with the shared kernels); `kernels` is `[k, in, out]`
    /// and `bias` is `[out]`.
    pub fn conv1d(&mut self, x: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (xv, kv, bv) = (self.val(x), self.val(kernels), self.val(bias));
        let (t, n, cin) = time_dims("conv1d", xv.shape())?;
        let (k, cout) = match *kv.shape() {
            [k, c, o] if c == cin => (k, o),
            _ => {
                return Err(dim_err(
                    "conv1d",
                    format!("kernels [k, {cin}, out]"),
                    format!("{:?}", kv.shape()),
                ))
            }
        };
        if bv.shape() != [cout] {
            return Err(dim_err(
                "conv1d",
                format!("bias [{cout}]"),
                format!("{:?}", bv.shape()),
            ));
        }
        if k == 0 || t < k {
            return Err(Error::WindowTooShort {
                op: "conv1d",
                len: t,
                need: k.max(1),
            });
        }
        let to = t - k + 1;
        let (xd, kd, bd) = (xv.data(), kv.data(), bv.data());
        let mut out = vec![0.0; to * n * cout];
        for ti in 0..to {
            for ni in 0..n {
                let o_row = &mut out[(ti * n + ni) * cout..(ti * n + ni + 1) * cout];
                o_row.copy_from_slice(bd);
                for j in 0..k {
                    let x_row = &xd[((ti + j) * n + ni) * cin..((ti + j) * n + ni + 1) * cin];
                    for (c, &xval) in x_row.iter().enumerate() {
                        let w = &kd[(j * cin + c) * cout..(j * cin + c + 1) * cout];
                        for (o, &wv) in o_row.iter_mut().zip(w) {
                            *o += xval * wv;
                        }
                    }
                }
            }
        }
        let shape = if xv.rank() == 2 {
            vec![to, cout]
        } else {
            vec![to, n, cout]
        };
        let out = Array::new(shape, out)?;
        Ok(self.push(
            out,
            Op::Conv1d {
                x: x.0,
                kernels: kernels.0,
                bias: bias.0,
            },
        ))
    }

    /// Non-overlapping max pooling along axis 0 with `window == stride`.
    /// A trailing remainder shorter than `window` is dropped; ties go to the
    /// earliest element.
    pub fn maxpool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let xv = self.val(x);
        let (t, n, c) = time_dims("maxpool1d", xv.shape())?;
        if window == 0 || t < window {
            return Err(Error::WindowTooShort {
                op: "maxpool1d",
                len: t,
                need: window.max(1),
            });
        }
        let to = t / window;
        let inner = n * c;
        let xd = xv.data();
        let mut out = Vec::with_capacity(to * inner);
        let mut argmax = Vec::with_capacity(to * inner);
        let mut margin = f64::INFINITY;
        for ti in 0..to {
            for e in 0..inner {
                let mut best = (ti * window) * inner + e;
                let mut second = f64::NEG_INFINITY;
                for j in 1..window {
                    let idx = (ti * window + j) * inner + e;
                    if xd[idx] > xd[best] {
                        second = xd[best];
                        best = idx;
                    } else if xd[idx] > second {
                        second = xd[idx];
                    }
                }
                if window > 1 {
                    margin = margin.min(max_margin(xd[best], second));
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = to;
        let out = Array::new(shape, out)?;
        self.note_kink(margin);
        Ok(self.push(out, Op::MaxPool1d { x: x.0, argmax }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.val(x);
        let margin = xv.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let out = xv.map(|v| v.max(0.0));
        self.note_kink(margin);
        self.push(out, Op::Relu { x: x.0 })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let xv = self.val(x);
        let margin = xv.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let out = xv.map(|v| leaky(v, slope));
        self.note_kink(margin);
        self.push(out, Op::LeakyRelu { x: x.0, slope })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.val(x).map(stable_sigmoid);
        self.push(out, Op::Sigmoid { x: x.0 })
    }

    /// Softmax normalised along `axis`, max-shifted for stability.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.val(x);
        check_axis("softmax", xv, axis)?;
        let (outer, len, inner) = axis_split(xv.shape(), axis);
        if len == 0 {
            return Err(Error::EmptyReduction { op: "softmax", axis });
        }
        let xd = xv.data();
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let m = (0..len).map(|j| xd[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for j in 0..len {
                    let e = (xd[idx(j)] - m).exp();
                    out[idx(j)] = e;
                    s += e;
                }
                for j in 0..len {
                    out[idx(j)] /= s;
                }
            }
        }
        let out = Array::new(xv.shape(), out)?;
        Ok(self.push(out, Op::Softmax { x: x.0, axis }))
    }

    /// Mean along `axis`, summed in ascending order so the result does not
    /// depend on element order.
    pub fn reduce_mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.val(x);
        check_axis("reduce_mean", xv, axis)?;
        let (outer, len, inner) = axis_split(xv.shape(), axis);
        if len == 0 {
            return Err(Error::EmptyReduction {
                op: "reduce_mean",
                axis,
            });
        }
        let xd = xv.data();
        let mut out = vec![0.0; outer * inner];
        let mut lane = Vec::with_capacity(len);
        for o in 0..outer {
            for i in 0..inner {
                lane.clear();
                lane.extend((0..len).map(|j| xd[(o * len + j) * inner + i]));
                lane.sort_by(f64::total_cmp);
                out[o * inner + i] = lane.iter().sum::<f64>() / len as f64;
            }
        }
        let out = Array::new(reduced_shape(xv.shape(), axis), out)?;
        Ok(self.push(out, Op::ReduceMean { x: x.0, axis }))
    }

    /// Maximum along `axis`; the gradient goes to the earliest maximiser.
    pub fn reduce_max(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.val(x);
        check_axis("reduce_max", xv, axis)?;
        let (outer, len, inner) = axis_split(xv.shape(), axis);
        if len == 0 {
            return Err(Error::EmptyReduction {
                op: "reduce_max",
                axis,
            });
        }
        let xd = xv.data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        let mut margin = f64::INFINITY;
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * len * inner + i;
                let mut second = f64::NEG_INFINITY;
                for j in 1..len {
                    let idx = (o * len + j) * inner + i;
                    if xd[idx] > xd[best] {
                        second = xd[best];
                        best = idx;
                    } else if xd[idx] > second {
                        second = xd[idx];
                    }
                }
                if len > 1 {
                    margin = margin.min(max_margin(xd[best], second));
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
        let out = Array::new(reduced_shape(xv.shape(), axis), out)?;
        self.note_kink(margin);
        Ok(self.push(out, Op::ReduceMax { x: x.0, argmax }))
    }

    /// `ln(max(x, eps))`.
    pub fn ln_clamped(&mut self, x: Var, eps: f64) -> Var {
        let out = self.val(x).map(|v| v.max(eps).ln());
        self.push(out, Op::LnClamped { x: x.0, eps })
    }

    /// Scalar `Σ wᵢ·xᵢ` against constant weights of the same shape.
    pub fn weighted_sum(&mut self, x: Var, weights: Array) -> Result<Var> {
        let xv = self.val(x);
        if xv.shape() != weights.shape() {
            return Err(dim_err(
                "weighted_sum",
                format!("{:?}", xv.shape()),
                format!("{:?}", weights.shape()),
            ));
        }
        let s = xv.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        Ok(self.push(
            Array::scalar(s),
            Op::WeightedSum {
                x: x.0,
                weights,
            },
        ))
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, x: Var) -> Var {
        let w = Array::full(self.val(x).shape(), 1.0);
        self.weighted_sum(x, w).expect("shape matches by construction")
    }

    /// Fixed linear propagation over the node axis:
    /// `out[t, v, :] = Σ_u P[v, u]·x[t, u, :]`, summed in canonical entry
    /// order so relabelling nodes permutes the output exactly.
    pub fn propagate(&mut self, x: Var, op: Arc<SparseRows>) -> Result<Var> {
        let xv = self.val(x);
        let (t, f, c) = node_dims("propagate", xv.shape())?;
        if f != op.n() {
            return Err(dim_err(
                "propagate",
                format!("{} nodes", op.n()),
                format!("{f} nodes"),
            ));
        }
        let xd = xv.data();
        let mut out = vec![0.0; xd.len()];
        for ti in 0..t {
            for v in 0..f {
                let x_of = |u: usize| &xd[(ti * f + u) * c..(ti * f + u + 1) * c];
                let order = canonical_entries(op.range(v), |k| op.weight(k), |k| x_of(op.col(k)));
                let o_row = &mut out[(ti * f + v) * c..(ti * f + v + 1) * c];
                for k in order {
                    let (u, w) = (op.col(k), op.weight(k));
                    let x_row = x_of(u);
                    for (o, &xu) in o_row.iter_mut().zip(x_row) {
                        *o += w * xu;
                    }
                }
            }
        }
        let out = Array::new(xv.shape(), out)?;
        Ok(self.push(out, Op::Propagate { x: x.0, op }))
    }

    /// Attention-weighted neighbourhood aggregation.
    ///
    /// With `z` of shape `[nodes, ch]` or `[steps, nodes, ch]` and `a` of
    /// shape `[2·ch]`, for every step and node `v`:
    /// `e_vu = LeakyReLU(a[..ch]·z_v + a[ch..]·z_u)` over the columns `u` of
    /// `pattern` row `v`, `α_v = softmax(e_v)`, and `out_v = Σ_u α_vu·z_u`.
    pub fn gat_aggregate(
        &mut self,
        z: Var,
        a: Var,
        pattern: Arc<SparseRows>,
        slope: f64,
    ) -> Result<Var> {
        let (zv, av) = (self.val(z), self.val(a));
        let (t, f, c) = node_dims("gat_aggregate", zv.shape())?;
        if av.shape() != [2 * c] {
            return Err(dim_err(
                "gat_aggregate",
                format!("attention vector [{}]", 2 * c),
                format!("{:?}", av.shape()),
            ));
        }
        if f != pattern.n() {
            return Err(dim_err(
                "gat_aggregate",
                format!("{} nodes", pattern.n()),
                format!("{f} nodes"),
            ));
        }
        let (zd, ad) = (zv.data(), av.data());
        let (a_dst, a_src) = ad.split_at(c);
        let dot = |row: &[f64], w: &[f64]| row.iter().zip(w).map(|(p, q)| p * q).sum::<f64>();
        let nnz = pattern.nnz();
        let mut alpha = vec![0.0; t * nnz];
        let mut pre = vec![0.0; t * nnz];
        let mut out = vec![0.0; zd.len()];
        let mut margin = f64::INFINITY;
        for ti in 0..t {
            let zrow = |u: usize| &zd[(ti * f + u) * c..(ti * f + u + 1) * c];
            let s_src: Vec<f64> = (0..f).map(|u| dot(zrow(u), a_src)).collect();
            for v in 0..f {
                let range = pattern.range(v);
                if range.is_empty() {
                    continue;
                }
                let s_dst = dot(zrow(v), a_dst);
                let base = ti * nnz;
                let mut m = f64::NEG_INFINITY;
                for k in range.clone() {
                    let p = s_dst + s_src[pattern.col(k)];
                    margin = margin.min(p.abs());
                    pre[base + k] = p;
                    m = m.max(leaky(p, slope));
                }
                let order = canonical_entries(range, |_| 0.0, |k| zrow(pattern.col(k)));
                let mut s = 0.0;
                for &k in &order {
                    let e = (leaky(pre[base + k], slope) - m).exp();
                    alpha[base + k] = e;
                    s += e;
                }
                let o_row = &mut out[(ti * f + v) * c..(ti * f + v + 1) * c];
                for k in order {
                    alpha[base + k] /= s;
                    let w = alpha[base + k];
                    for (o, &zu) in o_row.iter_mut().zip(zrow(pattern.col(k))) {
                        *o += w * zu;
                    }
                }
            }
        }
        let out = Array::new(zv.shape(), out)?;
        self.note_kink(margin);
        Ok(self.push(
            out,
            Op::GatAggregate(Box::new(GatSaved {
                z: z.0,
                a: a.0,
                pattern,
                slope,
                alpha,
                pre,
            })),
        ))
    }

    /// Weighted sum over the node axis: `out[t, :] = Σ_v w[v]·x[t, v, :]`.
    /// Rank-2 `[nodes, ch]` input gives `[ch]`.
    pub fn node_weighted_sum(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.val(x), self.val(w));
        let (t, f, c) = node_dims("node_weighted_sum", xv.shape())?;
        if wv.shape() != [f] {
            return Err(dim_err(
                "node_weighted_sum",
                format!("weights [{f}]"),
                format!("{:?}", wv.shape()),
            ));
        }
        let (xd, wd) = (xv.data(), wv.data());
        let mut out = vec![0.0; t * c];
        for ti in 0..t {
            for (v, &wvv) in wd.iter().enumerate() {
                for ci in 0..c {
                    out[ti * c + ci] += wvv * xd[(ti * f + v) * c + ci];
                }
            }
        }
        let shape = if xv.rank() == 2 { vec![c] } else { vec![t, c] };
        let out = Array::new(shape, out)?;
        Ok(self.push(out, Op::NodeWeightedSum { x: x.0, w: w.0 }))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.val(loss);
        if lv.len() != 1 {
            return Err(dim_err(
                "backward",
                "single-element loss",
                format!("{:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::full(lv.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            self.backprop(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, node: &Node, g: &Array, grads: &mut [Option<Array>]) {
        let val = |i: usize| &self.nodes[i].value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                // dA = G·Bᵀ, dB = Aᵀ·G
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; k * n];
                let (ad, bd) = (av.data(), bv.data());
                for i in 0..m {
                    for j in 0..n {
                        let gij = gd[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            da[i * k + p] += gij * bd[p * n + j];
                            db[p * n + j] += ad[i * k + p] * gij;
                        }
                    }
                }
                accumulate(grads, *a, av.shape(), da);
                accumulate(grads, *b, bv.shape(), db);
            }
            Op::Add { a, b } => {
                accumulate(grads, *a, g.shape(), gd.to_vec());
                accumulate(grads, *b, g.shape(), gd.to_vec());
            }
            Op::AddBias { x, bias } => {
                let c = val(*bias).len();
                let mut db = vec![0.0; c];
                for (i, v) in gd.iter().enumerate() {
                    db[i % c] += v;
                }
                accumulate(grads, *x, g.shape(), gd.to_vec());
                accumulate(grads, *bias, &[c], db);
            }
            Op::Affine { x, scale } => {
                accumulate(grads, *x, g.shape(), gd.iter().map(|v| v * scale).collect());
            }
            Op::Reshape { x } => {
                accumulate(grads, *x, val(*x).shape(), gd.to_vec());
            }
            Op::Conv1d { x, kernels, bias } => {
                let (xv, kv) = (val(*x), val(*kernels));
                let (t, n, cin) = time_dims("conv1d", xv.shape()).expect("checked in forward");
                let (k, cout) = (kv.shape()[0], kv.shape()[2]);
                let to = t - k + 1;
                let (xd, kd) = (xv.data(), kv.data());
                let mut dx = vec![0.0; xd.len()];
                let mut dk = vec![0.0; kd.len()];
                let mut db = vec![0.0; cout];
                for ti in 0..to {
                    for ni in 0..n {
                        let g_row = &gd[(ti * n + ni) * cout..(ti * n + ni + 1) * cout];
                        for (d, &gv) in db.iter_mut().zip(g_row) {
                            *d += gv;
                        }
                        for j in 0..k {
                            let xo = ((ti + j) * n + ni) * cin;
                            for c in 0..cin {
                                let ko = (j * cin + c) * cout;
                                let w = &kd[ko..ko + cout];
                                let xval = xd[xo + c];
                                let mut acc = 0.0;
                                for o in 0..cout {
                                    acc += g_row[o] * w[o];
                                    dk[ko + o] += g_row[o] * xval;
                                }
                                dx[xo + c] += acc;
                            }
                        }
                    }
                }
                accumulate(grads, *x, xv.shape(), dx);
                accumulate(grads, *kernels, kv.shape(), dk);
                accumulate(grads, *bias, &[cout], db);
            }
            Op::MaxPool1d { x, argmax } | Op::ReduceMax { x, argmax } => {
                let xv = val(*x);
                let mut dx = vec![0.0; xv.len()];
                for (&src, &gv) in argmax.iter().zip(gd) {
                    dx[src] += gv;
                }
                accumulate(grads, *x, xv.shape(), dx);
            }
            Op::Relu { x } => {
                let xv = val(*x);
                let dx = xv
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&xi, &gi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect();
                accumulate(grads, *x, xv.shape(), dx);
            }
            Op::LeakyRelu { x, slope } => {
                let xv = val(*x);
                let dx = xv
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&xi, &gi)| if xi > 0.0 { gi } else { slope * gi })
                    .collect();
                accumulate(grads, *x, xv.shape(), dx);
            }
            Op::Sigmoid { x } => {
                let y = node.value.data();
                let dx = y.iter().zip(gd).map(|(&yi, &gi)| gi * yi * (1.0 - yi)).collect();
                accumulate(grads, *x, g.shape(), dx);
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(g.shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| gd[idx(j)] * y[idx(j)]).sum();
                        for j in 0..len {
                            dx[idx(j)] = y[idx(j)] * (gd[idx(j)] - dot);
                        }
                    }
                }
                accumulate(grads, *x, g.shape(), dx);
            }
            Op::ReduceMean { x, axis } => {
                let xv = val(*x);
                let (outer, len, inner) = axis_split(xv.shape(), *axis);
                let mut dx = vec![0.0; xv.len()];
                let scale = 1.0 / len as f64;
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            dx[(o * len + j) * inner + i] = gd[o * inner + i] * scale;
                        }
                    }
                }
                accumulate(grads, *x, xv.shape(), dx);
            }
            Op::LnClamped { x, eps } => {
                let xv = val(*x);
                let dx = xv
                    .data()
                    .iter()
                    .zip(gd)
                    .map(|(&xi, &gi)| if xi > *eps { gi / xi } else { 0.0 })
                    .collect();
                accumulate(grads, *x, xv.shape(), dx);
            }
            Op::WeightedSum { x, weights } => {
                let s = gd[0];
                let dx = weights.data().iter().map(|w| w * s).collect();
                accumulate(grads, *x, weights.shape(), dx);
            }
            Op::Propagate { x, op } => {
                let xv = val(*x);
                let (t, f, c) = node_dims("propagate", xv.shape()).expect("checked in forward");
                let mut dx = vec![0.0; xv.len()];
                for ti in 0..t {
                    for v in 0..f {
                        let g_row = &gd[(ti * f + v) * c..(ti * f + v + 1) * c];
                        for k in op.range(v) {
                            let (u, w) = (op.col(k), op.weight(k));
                            let d_row = &mut dx[(ti * f + u) * c..(ti * f + u + 1) * c];
                            for (d, &gv) in d_row.iter_mut().zip(g_row) {
                                *d += w * gv;
                            }
                        }
                    }
                }
                accumulate(grads, *x, xv.shape(), dx);
            }
            Op::GatAggregate(saved) => {
                let (dz, da) = gat_backward(saved, val(saved.z), val(saved.a), gd);
                accumulate(grads, saved.z, val(saved.z).shape(), dz);
                accumulate(grads, saved.a, val(saved.a).shape(), da);
            }
            Op::NodeWeightedSum { x, w } => {
                let (xv, wv) = (val(*x), val(*w));
                let (t, f, c) = node_dims("node_weighted_sum", xv.shape()).expect("checked");
                let (xd, wd) = (xv.data(), wv.data());
                let mut dx = vec![0.0; xd.len()];
                let mut dw = vec![0.0; f];
                for ti in 0..t {
                    for v in 0..f {
                        for ci in 0..c {
                            let gv = gd[ti * c + ci];
                            let xi = (ti * f + v) * c + ci;
                            dx[xi] += wd[v] * gv;
                            dw[v] += xd[xi] * gv;
                        }
                    }
                }
                accumulate(grads, *x, xv.shape(), dx);
                accumulate(grads, *w, &[f], dw);
            }
        }
    }
}

fn gat_backward(s: &GatSaved, zv: &Array, av: &Array, gd: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (t, f, c) = node_dims("gat_aggregate", zv.shape()).expect("checked in forward");
    let (zd, ad) = (zv.data(), av.data());
    let (a_dst, a_src) = ad.split_at(c);
    let nnz = s.pattern.nnz();
    let mut dz = vec![0.0; zd.len()];
    let mut da = vec![0.0; 2 * c];
    for ti in 0..t {
        let zrow = |u: usize| &zd[(ti * f + u) * c..(ti * f + u + 1) * c];
        let base = ti * nnz;
        // d(score) accumulators for the source and destination terms
        let mut ds_src = vec![0.0; f];
        let mut ds_dst = vec![0.0; f];
        for v in 0..f {
            let range = s.pattern.range(v);
            if range.is_empty() {
                continue;
            }
            let g_row = &gd[(ti * f + v) * c..(ti * f + v + 1) * c];
            let mut dalpha = Vec::with_capacity(range.len());
            for k in range.clone() {
                let u = s.pattern.col(k);
                let w = s.alpha[base + k];
                let zu = zrow(u);
                dalpha.push(g_row.iter().zip(zu).map(|(p, q)| p * q).sum::<f64>());
                let d_row = &mut dz[(ti * f + u) * c..(ti * f + u + 1) * c];
                for (d, &gv) in d_row.iter_mut().zip(g_row) {
                    *d += w * gv;
                }
            }
            let mean: f64 = range
                .clone()
                .zip(&dalpha)
                .map(|(k, d)| s.alpha[base + k] * d)
                .sum();
            for (k, d) in range.zip(&dalpha) {
                let de = s.alpha[base + k] * (d - mean);
                let dpre = if s.pre[base + k] > 0.0 { de } else { s.slope * de };
                ds_dst[v] += dpre;
                ds_src[s.pattern.col(k)] += dpre;
            }
        }
        for u in 0..f {
            let zu = zrow(u);
            for ci in 0..c {
                da[ci] += ds_dst[u] * zu[ci];
                da[c + ci] += ds_src[u] * zu[ci];
            }
            let d_row = &mut dz[(ti * f + u) * c..(ti * f + u + 1) * c];
            for ci in 0..c {
                d_row[ci] += ds_dst[u] * a_dst[ci] + ds_src[u] * a_src[ci];
            }
        }
    }
    (dz, da)
}

fn accumulate(grads: &mut [Option<Array>], id: usize, shape: &[usize], delta: Vec<f64>) {
    match &mut grads[id] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => {
            *slot = Some(Array::new(shape, delta).expect("gradient shape matches node"));
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let o_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in o_row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_axis(op: &'static str, x: &Array, axis: usize) -> Result<()> {
    if axis >= x.rank() {
        return Err(Error::Axis {
            op,
            axis,
            rank: x.rank(),
        });
    }
    Ok(())
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}
