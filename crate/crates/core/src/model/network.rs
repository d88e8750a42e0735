//! A configured network: parameters plus an execution plan.

use std::sync::Arc;

use gradcore::{Array, ParamSet, SparseRows, Tape, Var};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{GraphKind, HeadKind, NetworkConfig, PoolKind, Stage, TensorShape};
use super::layers::{conv_block_on_tape, gat_on_tape, gcn_on_tape, pool_on_tape};
use crate::error::{Context, Error, Result};
use crate::graphbuild::FeatureGraph;
use crate::market::NUM_MARKETS;

#[derive(Debug, Clone)]
enum Step {
    Conv { kernel: usize, bias: usize, pool: usize },
    Mix { weight: usize, bias: usize },
    Gcn { weights: Vec<usize> },
    Gat { layers: Vec<(usize, usize)> },
    Pool { kind: PoolKind, weight: Option<usize> },
}

#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    zero: bool,
}

#[derive(Debug, Clone)]
struct Plan {
    steps: Vec<Step>,
    hidden: Option<(usize, usize)>,
    out: (usize, usize),
    specs: Vec<ParamSpec>,
    shapes: Vec<TensorShape>,
}

impl Plan {
    fn build(config: &NetworkConfig) -> Result<Self> {
        let shapes = config.infer_shapes()?;
        let mut specs: Vec<ParamSpec> = Vec::new();
        let mut add = |name: String, shape: Vec<usize>, fan_in: usize, fan_out: usize, zero: bool| {
            specs.push(ParamSpec {
                name,
                shape,
                fan_in,
                fan_out,
                zero,
            });
            specs.len() - 1
        };
        let mut steps = Vec::with_capacity(config.layout.len());
        for (i, stage) in config.layout.iter().enumerate() {
            let input = shapes[i];
            let cin = *input.dims().last().expect("nonempty");
            let step = match stage {
                Stage::Conv { filters, kernel, pool } => {
                    let (k, f) = (*kernel, *filters);
                    Step::Conv {
                        kernel: add(format!("s{i}.conv.kernel"), vec![k, cin, f], k * cin, k * f, false),
                        bias: add(format!("s{i}.conv.bias"), vec![f], 0, 0, true),
                        pool: *pool,
                    }
                }
                Stage::DailyMix { filters } => {
                    let width = match input {
                        TensorShape::Nodes { n, c, .. } => n * c,
                        TensorShape::Seq { c, .. } => c,
                    };
                    Step::Mix {
                        weight: add(format!("s{i}.mix.weight"), vec![width, *filters], width, *filters, false),
                        bias: add(format!("s{i}.mix.bias"), vec![*filters], 0, 0, true),
                    }
                }
                Stage::Graph { kind, channels } => {
                    let mut c = cin;
                    match kind {
                        GraphKind::Gcn => {
                            let mut weights = Vec::new();
                            for (j, &o) in channels.iter().enumerate() {
                                weights.push(add(format!("s{i}.gcn{j}.weight"), vec![c, o], c, o, false));
                                c = o;
                            }
                            Step::Gcn { weights }
                        }
                        GraphKind::Gat => {
                            let mut layers = Vec::new();
                            for (j, &o) in channels.iter().enumerate() {
                                let w = add(format!("s{i}.gat{j}.weight"), vec![c, o], c, o, false);
                                let a = add(format!("s{i}.gat{j}.attn"), vec![2 * o], 2 * o, 1, false);
                                layers.push((w, a));
                                c = o;
                            }
                            Step::Gat { layers }
                        }
                    }
                }
                Stage::Pool { kind } => {
                    let weight = match (kind, input) {
                        (PoolKind::FullyConnected, TensorShape::Nodes { n, .. }) => {
                            Some(add(format!("s{i}.pool.weight"), vec![n], n, 1, false))
                        }
                        _ => None,
                    };
                    Step::Pool {
                        kind: *kind,
                        weight,
                    }
                }
            };
            steps.push(step);
        }
        let mut width = shapes.last().expect("input").len();
        let hidden = config.hidden.map(|h| {
            let w = add("head.hidden.weight".into(), vec![width, h], width, h, false);
            let b = add("head.hidden.bias".into(), vec![h], 0, 0, true);
            width = h;
            (w, b)
        });
        let o = config.head.outputs();
        let out = (
            add("head.out.weight".into(), vec![width, o], width, o, false),
            add("head.out.bias".into(), vec![o], 0, 0, true),
        );
        Ok(Self {
            steps,
            hidden,
            out,
            specs,
            shapes,
        })
    }
}

/// Network parameters bound to a layout and a frozen feature graph.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    params: ParamSet,
    plan: Plan,
    gcn_op: Option<Arc<SparseRows>>,
    gat_pattern: Option<Arc<SparseRows>>,
}

impl Network {
    /// Glorot-uniform weights and zero biases from a seeded generator.
    pub fn new(config: NetworkConfig, graph: Option<&FeatureGraph>, seed: u64) -> Result<Self> {
        let plan = Plan::build(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for s in &plan.specs {
            let len = s.shape.iter().product();
            let data = if s.zero {
                vec![0.0; len]
            } else {
                let limit = (6.0 / (s.fan_in + s.fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                (0..len).map(|_| dist.sample(&mut rng)).collect()
            };
            params.insert(s.name.clone(), Array::new(s.shape.clone(), data)?);
        }
        Self::assemble(config, plan, params, graph)
    }

    /// Rebuild from stored parameters; names and shapes must match the layout.
    pub fn from_params(config: NetworkConfig, graph: Option<&FeatureGraph>, stored: &ParamSet) -> Result<Self> {
        let plan = Plan::build(&config)?;
        let mut params = ParamSet::new();
        for s in &plan.specs {
            let value = stored
                .get(&s.name)
                .ok_or_else(|| Error::Config(format!("weights lack parameter `{}`", s.name)))?;
            if value.shape() != s.shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter `{}` has shape {:?}, layout needs {:?}",
                    s.name,
                    value.shape(),
                    s.shape
                )));
            }
            params.insert(s.name.clone(), value.clone());
        }
        if stored.len() != params.len() {
            return Err(Error::Config(format!(
                "weights carry {} parameters, layout needs {}",
                stored.len(),
                params.len()
            )));
        }
        Self::assemble(config, plan, params, graph)
    }

    fn assemble(
        config: NetworkConfig,
        plan: Plan,
        params: ParamSet,
        graph: Option<&FeatureGraph>,
    ) -> Result<Self> {
        let (mut gcn_op, mut gat_pattern) = (None, None);
        if let Some(kind) = config.graph_kind() {
            let g = graph.ok_or_else(|| Error::Config("graph layout needs a feature graph".into()))?;
            if g.n() != config.features {
                return Err(Error::Config(format!(
                    "feature graph has {} nodes, layout expects {}",
                    g.n(),
                    config.features
                )));
            }
            match kind {
                GraphKind::Gcn => gcn_op = Some(g.gcn_operator()),
                GraphKind::Gat => gat_pattern = Some(g.closed_neighborhoods()),
            }
        }
        Ok(Self {
            config,
            params,
            plan,
            gcn_op,
            gat_pattern,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Statically inferred shapes: input, then after each stage.
    pub fn shapes(&self) -> &[TensorShape] {
        &self.plan.shapes
    }

    /// Record every parameter as a tape leaf, in parameter order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|(_, a)| tape.leaf(a.clone())).collect()
    }

    /// Record the forward pass of one `[window, features]` sample. Returns
    /// the head output: `[5]` probabilities or `[5, 3]` group distributions.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], input: &Array) -> Result<Var> {
        self.forward_traced(tape, params, input, None)
    }

    /// Observed dims of the input and of every stage output.
    pub fn trace_shapes(&self, input: &Array) -> Result<Vec<Vec<usize>>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let mut trace = Vec::new();
        self.forward_traced(&mut tape, &vars, input, Some(&mut trace))?;
        Ok(trace)
    }

    fn forward_traced(
        &self,
        tape: &mut Tape,
        p: &[Var],
        input: &Array,
        mut trace: Option<&mut Vec<Vec<usize>>>,
    ) -> Result<Var> {
        let (d, f) = (self.config.window, self.config.features);
        if input.shape() != [d, f] {
            return Err(Error::Tensor {
                context: "network input".into(),
                source: gradcore::Error::Dimension {
                    op: "forward",
                    expected: format!("[{d}, {f}]"),
                    got: format!("{:?}", input.shape()),
                },
            });
        }
        let x0 = tape.leaf(input.clone());
        let mut x = tape.reshape(x0, [d, f, 1]).context(|| "network input".into())?;
        let mut record = |tape: &Tape, x: Var| {
            if let Some(t) = trace.as_deref_mut() {
                t.push(tape.value(x).shape().to_vec());
            }
        };
        record(tape, x);
        for (i, step) in self.plan.steps.iter().enumerate() {
            x = match step {
                Step::Conv { kernel, bias, pool } => {
                    conv_block_on_tape(tape, x, p[*kernel], p[*bias], *pool)
                        .map_err(|e| with_stage(e, i))?
                }
                Step::Mix { weight, bias } => {
                    let shape = tape.value(x).shape().to_vec();
                    let width: usize = shape[1..].iter().product();
                    let flat = tape.reshape(x, [shape[0], width]).context(|| format!("stage {i}"))?;
                    let z = tape.matmul(flat, p[*weight]).context(|| format!("stage {i}"))?;
                    let z = tape.add_bias(z, p[*bias]).context(|| format!("stage {i}"))?;
                    tape.relu(z)
                }
                Step::Gcn { weights } => {
                    let op = self.gcn_op.as_ref().expect("assembled with graph");
                    for &w in weights {
                        x = gcn_on_tape(tape, x, p[w], op).map_err(|e| with_stage(e, i))?;
                    }
                    x
                }
                Step::Gat { layers } => {
                    let pat = self.gat_pattern.as_ref().expect("assembled with graph");
                    for &(w, a) in layers {
                        x = gat_on_tape(tape, x, p[w], p[a], pat).map_err(|e| with_stage(e, i))?;
                    }
                    x
                }
                Step::Pool { kind, weight } => {
                    pool_on_tape(tape, x, *kind, weight.map(|w| p[w])).map_err(|e| with_stage(e, i))?
                }
            };
            record(tape, x);
        }
        let len = tape.value(x).len();
        let mut h = tape.reshape(x, [1, len]).context(|| "flatten".into())?;
        if let Some((w, b)) = self.plan.hidden {
            h = tape.matmul(h, p[w]).context(|| "hidden layer".into())?;
            h = tape.add_bias(h, p[b]).context(|| "hidden layer".into())?;
            h = tape.relu(h);
        }
        let (w, b) = self.plan.out;
        h = tape.matmul(h, p[w]).context(|| "head".into())?;
        h = tape.add_bias(h, p[b]).context(|| "head".into())?;
        match self.config.head {
            HeadKind::Binary5 => {
                let s = tape.sigmoid(h);
                tape.reshape(s, [NUM_MARKETS]).context(|| "head".into())
            }
            HeadKind::Ternary15 => {
                let g = tape.reshape(h, [NUM_MARKETS, 3]).context(|| "head".into())?;
                tape.softmax(g, 1).context(|| "head".into())
            }
        }
    }

    /// Head output for one sample.
    pub fn predict(&self, input: &Array) -> Result<Array> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let out = self.forward(&mut tape, &vars, input)?;
        Ok(tape.value(out).clone())
    }
}

fn with_stage(e: Error, stage: usize) -> Error {
    match e {
        Error::Tensor { context, source } => Error::Tensor {
            context: format!("stage {stage}: {context}"),
            source,
        },
        other => other,
    }
}
