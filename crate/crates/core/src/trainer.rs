//! Losses, the mini-batch training loop, macro-F scoring and the multi-seed
//! experiment runner.

use gradcore::{adam_step, AdamConfig, AdamState, Array, Tape, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataprep::WindowSample;
use crate::error::{Context, Error, Result};
use crate::graphbuild::FeatureGraph;
use crate::market::NUM_MARKETS;
use crate::model::{discretize, HeadKind, Network, NetworkConfig, PoolKind, Preset};

/// Log clamp for both cross-entropy losses.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
            learning_rate: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.max_epochs == 0 || self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "need 0 <= patience < max_epochs, got patience {} and max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Mean binary cross-entropy over the five indices.
pub fn loss_binary(probs: &[f64], labels: &[u8]) -> f64 {
    let n = probs.len() as f64;
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if y == 1 {
                -p.max(LOG_EPS).ln()
            } else {
                -(1.0 - p).max(LOG_EPS).ln()
            }
        })
        .sum::<f64>()
        / n
}

/// Mean over groups of `-ln(score of the true class)`; `groups` is `[5, 3]`.
pub fn loss_ternary(groups: &Array, labels: &[u8]) -> f64 {
    let n = labels.len() as f64;
    labels
        .iter()
        .enumerate()
        .map(|(g, &y)| -groups.at(&[g, usize::from(y)]).max(LOG_EPS).ln())
        .sum::<f64>()
        / n
}

/// Record the loss of one head output against its targets.
pub fn loss_on_tape(tape: &mut Tape, output: Var, targets: &[u8; NUM_MARKETS], head: HeadKind) -> Result<Var> {
    let k = NUM_MARKETS as f64;
    match head {
        HeadKind::Binary5 => {
            let pos = Array::vector(targets.iter().map(|&y| -f64::from(y) / k).collect());
            let neg = Array::vector(targets.iter().map(|&y| -(1.0 - f64::from(y)) / k).collect());
            let lp = tape.ln_clamped(output, LOG_EPS);
            let q = tape.affine(output, -1.0, 1.0);
            let lq = tape.ln_clamped(q, LOG_EPS);
            let a = tape.weighted_sum(lp, pos).context(|| "binary loss".into())?;
            let b = tape.weighted_sum(lq, neg).context(|| "binary loss".into())?;
            tape.add(a, b).context(|| "binary loss".into())
        }
        HeadKind::Ternary15 => {
            let mut w = Array::zeros([NUM_MARKETS, 3]);
            for (g, &y) in targets.iter().enumerate() {
                w.set(&[g, usize::from(y)], -1.0 / k);
            }
            let l = tape.ln_clamped(output, LOG_EPS);
            tape.weighted_sum(l, w).context(|| "ternary loss".into())
        }
    }
}

/// Unweighted mean of per-class F1 over `0..num_classes`; a class with no
/// predictions and no occurrences scores 0.
pub fn macro_f(preds: &[u8], labels: &[u8], num_classes: usize) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Metric("macro-F of an empty sequence".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if let Some(c) = preds.iter().chain(labels).find(|&&c| usize::from(c) >= num_classes) {
        return Err(Error::Metric(format!("class {c} outside 0..{num_classes}")));
    }
    let mut total = 0.0;
    for c in 0..num_classes as u8 {
        let tp = preds.iter().zip(labels).filter(|&(&p, &y)| p == c && y == c).count() as f64;
        let predicted = preds.iter().filter(|&&p| p == c).count() as f64;
        let actual = labels.iter().filter(|&&y| y == c).count() as f64;
        // F1 = 2TP / (predicted + actual), equal to 2PR/(P+R) whenever defined
        if predicted + actual > 0.0 {
            total += 2.0 * tp / (predicted + actual);
        }
    }
    Ok(total / num_classes as f64)
}

/// Scores of a network on a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub f_measure: [f64; NUM_MARKETS],
    pub accuracy: f64,
    pub predictions: Vec<[u8; NUM_MARKETS]>,
    pub outputs: Vec<Array>,
}

impl Evaluation {
    pub fn mean_f(&self) -> f64 {
        self.f_measure.iter().sum::<f64>() / NUM_MARKETS as f64
    }
}

pub fn evaluate(network: &Network, samples: &[WindowSample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Metric("evaluation on an empty split".into()));
    }
    let head = network.config().head;
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(samples.len());
    let mut outputs = Vec::with_capacity(samples.len());
    for s in samples {
        let out = network.predict(&s.input)?;
        loss += match head {
            HeadKind::Binary5 => loss_binary(out.data(), &s.targets),
            HeadKind::Ternary15 => loss_ternary(&out, &s.targets),
        };
        predictions.push(discretize(&out, head)?);
        outputs.push(out);
    }
    let mut f_measure = [0.0; NUM_MARKETS];
    let mut hits = 0usize;
    for (k, f) in f_measure.iter_mut().enumerate() {
        let p: Vec<u8> = predictions.iter().map(|c| c[k]).collect();
        let y: Vec<u8> = samples.iter().map(|s| s.targets[k]).collect();
        hits += p.iter().zip(&y).filter(|(a, b)| a == b).count();
        *f = macro_f(&p, &y, head.num_classes())?;
    }
    Ok(Evaluation {
        loss: loss / samples.len() as f64,
        f_measure,
        accuracy: hits as f64 / (samples.len() * NUM_MARKETS) as f64,
        predictions,
        outputs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Higher is better: mean macro-F for binary heads, negated loss for
    /// ternary heads.
    pub val_score: f64,
    pub val_loss: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights of the best validation epoch.
    pub network: Network,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

fn validation_score(head: HeadKind, eval: &Evaluation) -> f64 {
    match head {
        HeadKind::Binary5 => eval.mean_f(),
        HeadKind::Ternary15 => -eval.loss,
    }
}

/// Seeded mini-batch Adam with validation-based checkpointing and early
/// stopping. Batch gradients are the mean of per-sample gradients.
pub fn train(
    mut network: Network,
    train_set: &[WindowSample],
    val_set: &[WindowSample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InsufficientData("training needs nonempty train and validation splits".into()));
    }
    let head = network.config().head;
    let mut state = AdamState::new(AdamConfig::with_learning_rate(cfg.learning_rate), network.params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Network)> = None;
    let mut stale = 0usize;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let abort = |msg: String| Error::Training { epoch, batch: b, msg };
            let mut grads: Vec<Array> = network.params().iter().map(|(_, a)| Array::zeros(a.shape())).collect();
            for &i in batch {
                let s = &train_set[i];
                let mut tape = Tape::new();
                let vars = network.bind(&mut tape);
                let out = network.forward(&mut tape, &vars, &s.input)?;
                let loss = loss_on_tape(&mut tape, out, &s.targets, head)?;
                let lv = tape.value(loss).item();
                if !lv.is_finite() {
                    return Err(abort(format!("non-finite loss {lv} on sample {}", s.anchor)));
                }
                epoch_loss += lv;
                let mut g = tape.backward(loss).context(|| "backward".into())?;
                for (acc, v) in grads.iter_mut().zip(&vars) {
                    if let Some(gv) = g.take(*v) {
                        for (a, x) in acc.data_mut().iter_mut().zip(gv.data()) {
                            *a += x;
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
            adam_step(network.params_mut(), &grads, &mut state).map_err(|e| abort(e.to_string()))?;
        }
        let eval = evaluate(&network, val_set)?;
        let score = validation_score(head, &eval);
        let improved = best.as_ref().is_none_or(|(s, _, _)| score > *s);
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_score: score,
            val_loss: eval.loss,
            improved,
        });
        if improved {
            best = Some((score, epoch, network.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }
    let (_, best_epoch, network) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        network,
        history,
        best_epoch,
    })
}

/// Chronological sample splits.
#[derive(Debug, Clone, Default)]
pub struct DataSplits {
    pub train: Vec<WindowSample>,
    pub validation: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

/// What to run: every preset with every seed under one budget.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub presets: Vec<Preset>,
    pub seeds: Vec<u64>,
    pub pool: PoolKind,
    pub head: HeadKind,
    pub train: TrainConfig,
    /// Replaces every conv kernel length when set.
    pub conv_kernel: Option<usize>,
}

impl ExperimentPlan {
    pub fn network_config(&self, preset: Preset, window: usize, features: usize) -> NetworkConfig {
        let c = preset.config(self.pool, self.head, window, features);
        match self.conv_kernel {
            Some(k) => c.with_conv_kernel(k),
            None => c,
        }
    }
}

/// One (preset, seed) job.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub preset: Preset,
    pub seed: u64,
    pub outcome: std::result::Result<RunOutput, String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub network: Network,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub test: Evaluation,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<SeedRun>,
}

impl ExperimentResult {
    pub fn presets(&self) -> Vec<Preset> {
        let mut out: Vec<Preset> = Vec::new();
        for r in &self.runs {
            if !out.contains(&r.preset) {
                out.push(r.preset);
            }
        }
        out
    }

    /// Per-seed test F-measures of the successful runs of `preset`.
    pub fn scores(&self, preset: Preset) -> Vec<[f64; NUM_MARKETS]> {
        self.runs
            .iter()
            .filter(|r| r.preset == preset)
            .filter_map(|r| r.outcome.as_ref().ok().map(|o| o.test.f_measure))
            .collect()
    }

    pub fn mean(&self, preset: Preset) -> Option<[f64; NUM_MARKETS]> {
        aggregate_mean(&self.scores(preset))
    }

    pub fn best(&self, preset: Preset) -> Option<[f64; NUM_MARKETS]> {
        aggregate_best(&self.scores(preset))
    }
}

pub fn aggregate_mean(rows: &[[f64; NUM_MARKETS]]) -> Option<[f64; NUM_MARKETS]> {
    if rows.is_empty() {
        return None;
    }
    let mut out = [0.0; NUM_MARKETS];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= rows.len() as f64);
    Some(out)
}

pub fn aggregate_best(rows: &[[f64; NUM_MARKETS]]) -> Option<[f64; NUM_MARKETS]> {
    let first = *rows.first()?;
    Some(rows.iter().fold(first, |mut acc, r| {
        for (a, v) in acc.iter_mut().zip(r) {
            *a = a.max(*v);
        }
        acc
    }))
}

/// Train every (preset, seed) pair in parallel. A failed job is kept with
/// its error so its table cells render as absent.
pub fn run_experiments(plan: &ExperimentPlan, data: &DataSplits, graph: &FeatureGraph) -> Result<ExperimentResult> {
    if plan.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    if plan.presets.is_empty() {
        return Err(Error::Config("at least one preset is required".into()));
    }
    plan.train.validate()?;
    let first = data
        .train
        .first()
        .ok_or_else(|| Error::InsufficientData("empty training split".into()))?;
    let (window, features) = (first.input.shape()[0], first.input.shape()[1]);
    let jobs: Vec<(Preset, u64)> = plan
        .presets
        .iter()
        .flat_map(|&p| plan.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let runs = jobs
        .into_par_iter()
        .map(|(preset, seed)| {
            let outcome = (|| -> Result<RunOutput> {
                let config = plan.network_config(preset, window, features);
                let net = Network::new(config, Some(graph), seed)?;
                let trained = train(net, &data.train, &data.validation, &plan.train, seed)?;
                let test = evaluate(&trained.network, &data.test)?;
                Ok(RunOutput {
                    network: trained.network,
                    history: trained.history,
                    best_epoch: trained.best_epoch,
                    test,
                })
            })()
            .map_err(|e| e.to_string());
            SeedRun {
                preset,
                seed,
                outcome,
            }
        })
        .collect();
    Ok(ExperimentResult { runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_loss_cases() {
        let ln2 = 2f64.ln();
        assert!((loss_binary(&[0.5; 5], &[1, 0, 1, 0, 0]) - ln2).abs() < 1e-15);
        assert!(loss_binary(&[1.0, 0.0, 1.0, 0.0, 1.0], &[1, 0, 1, 0, 1]).abs() < 1e-15);
        let l = loss_binary(&[0.9, 0.5, 0.5, 0.5, 0.5], &[1, 0, 0, 0, 0]);
        let expect = (-(0.9f64.ln()) + 4.0 * ln2) / 5.0;
        assert!((l - expect).abs() < 1e-15);
        assert!((l - 0.575_58).abs() < 1e-5);
    }

    #[test]
    fn ternary_loss_cases() {
        let uniform = Array::full([5, 3], 1.0 / 3.0);
        assert!((loss_ternary(&uniform, &[0, 1, 2, 1, 0]) - 3f64.ln()).abs() < 1e-15);
        let mut g = uniform.clone();
        g.set(&[0, 0], 0.7);
        g.set(&[0, 1], 0.2);
        g.set(&[0, 2], 0.1);
        let l = loss_ternary(&g, &[0, 2, 2, 2, 2]);
        let expect = (-(0.7f64.ln()) + 4.0 * 3f64.ln()) / 5.0;
        assert!((l - expect).abs() < 1e-15);
        assert!((l - 0.950_224).abs() < 1e-6);
    }

    #[test]
    fn tape_losses_match_plain_losses() {
        let probs = Array::vector(vec![0.9, 0.2, 0.6, 0.5, 0.01]);
        let y = [1, 0, 0, 1, 1];
        let mut tape = Tape::new();
        let p = tape.leaf(probs.clone());
        let l = loss_on_tape(&mut tape, p, &y, HeadKind::Binary5).unwrap();
        assert!((tape.value(l).item() - loss_binary(probs.data(), &y)).abs() < 1e-15);

        let groups = Array::new([5, 3], (0..15).map(|i| [0.2, 0.3, 0.5][i % 3]).collect()).unwrap();
        let y = [0, 1, 2, 2, 1];
        let g = tape.leaf(groups.clone());
        let l = loss_on_tape(&mut tape, g, &y, HeadKind::Ternary15).unwrap();
        assert!((tape.value(l).item() - loss_ternary(&groups, &y)).abs() < 1e-15);
    }

    #[test]
    fn macro_f_cases() {
        let m = macro_f(&[1, 0, 0, 0], &[1, 1, 0, 0], 2).unwrap();
        assert!((m - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
        assert!((m - 0.733_333_333_333_333_3).abs() < 1e-15);
        assert_eq!(macro_f(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap(), 1.0);
        let all_one = macro_f(&[1, 1, 1, 1], &[1, 1, 0, 0], 2).unwrap();
        assert!((all_one - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(macro_f(&[], &[], 2), Err(Error::Metric(_))));
        assert!(macro_f(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn aggregates() {
        let rows = [[0.5, 0.6, 0.7, 0.8, 0.9], [0.7, 0.4, 0.7, 0.6, 1.0]];
        assert_eq!(aggregate_best(&rows).unwrap(), [0.7, 0.6, 0.7, 0.8, 1.0]);
        let m = aggregate_mean(&rows).unwrap();
        assert!((m[0] - 0.6).abs() < 1e-15);
        assert_eq!(aggregate_mean(&rows[..1]), aggregate_best(&rows[..1]));
        assert!(aggregate_mean(&[]).is_none());
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            patience: 5,
            max_epochs: 5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
