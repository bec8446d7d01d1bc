//! Linear logistic classifiers trained with ERM, frequency reweighting or Group DRO.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{PredictionRecord, PredictionSet};
use crate::error::{Error, Result};
use crate::prob::{sigmoid, softplus};
use crate::rng::{self, domain};
use crate::synth::{TrainingData, N_TRAIN_GROUPS};

pub const WEIGHT_CLIP: f64 = 50.0;
pub const DRO_ETA: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Erm,
    Reweighted,
    Dro,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Erm, Method::Reweighted, Method::Dro];

    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Reweighted => "reweighted",
            Method::Dro => "dro",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erm" => Ok(Method::Erm),
            "reweighted" => Ok(Method::Reweighted),
            "dro" => Ok(Method::Dro),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?} (expected erm, reweighted or dro)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn zeros(d: usize) -> Self {
        Self { weights: vec![0.0; d], bias: 0.0 }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::DimensionMismatch { expected: self.weights.len(), got: x.len() });
        }
        Ok(sigmoid(self.logit(x)))
    }

    /// Probabilities for row-major `features` with `self.weights.len()` columns.
    pub fn predict(&self, features: &[f64]) -> Result<Vec<f64>> {
        let d = self.weights.len();
        if d == 0 || features.len() % d != 0 {
            return Err(Error::DimensionMismatch { expected: d, got: features.len() });
        }
        Ok(features.chunks(d).map(|x| sigmoid(self.logit(x))).collect())
    }
}

/// Unclipped weight of each group as the exact ratio `(N, G * n_g)`.
pub fn weight_ratios(counts: &BTreeMap<usize, usize>) -> Result<BTreeMap<usize, (u64, u64)>> {
    if counts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total: usize = counts.values().sum();
    let g = counts.len() as u64;
    counts
        .iter()
        .map(|(&group, &n_g)| {
            if n_g == 0 {
                return Err(Error::InvalidArgument(format!("group {group} is empty")));
            }
            Ok((group, (total as u64, g * n_g as u64)))
        })
        .collect()
}

/// `min(N / (G * n_g), clip)` per group, given group sizes.
pub fn example_weights(counts: &BTreeMap<usize, usize>, clip: f64) -> Result<BTreeMap<usize, f64>> {
    Ok(weight_ratios(counts)?
        .into_iter()
        .map(|(group, (num, den))| (group, (num as f64 / den as f64).min(clip)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupWeightState {
    pub q: Vec<f64>,
    pub eta: f64,
}

impl GroupWeightState {
    pub fn uniform(groups: usize, eta: f64) -> Self {
        Self { q: vec![1.0 / groups as f64; groups], eta }
    }
}

/// `q_g <- q_g * exp(eta * L_g)` for the groups present in the batch, then renormalize.
///
/// `losses[g]` is `None` for groups absent from the batch.
pub fn dro_update(state: &GroupWeightState, losses: &[Option<f64>]) -> Result<GroupWeightState> {
    if losses.len() != state.q.len() {
        return Err(Error::DimensionMismatch { expected: state.q.len(), got: losses.len() });
    }
    if losses.iter().flatten().any(|l| !l.is_finite()) {
        return Err(Error::InvalidArgument("non-finite group loss".into()));
    }
    let mut q: Vec<f64> =
        state.q.iter().zip(losses).map(|(&q, l)| l.map_or(q, |l| q * (state.eta * l).exp())).collect();
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|x| *x /= total);
    Ok(GroupWeightState { q, eta: state.eta })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate; decays linearly to zero over the run.
    pub lr0: f64,
    pub seed: u64,
    pub weight_clip: f64,
    pub eta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Erm,
            epochs: 5,
            batch_size: 16,
            lr0: 0.05,
            seed: 42,
            weight_clip: WEIGHT_CLIP,
            eta: DRO_ETA,
        }
    }
}

impl TrainConfig {
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }
}

/// Weighted cross-entropy `sum_i c_i * loss_i` over `rows` and its gradient
/// with respect to `(weights, bias)`.
pub fn weighted_loss_and_grad(
    model: &LinearModel,
    data: &TrainingData,
    rows: &[usize],
    coeffs: &[f64],
) -> (f64, Vec<f64>, f64) {
    let mut grad_w = vec![0.0; model.weights.len()];
    let mut grad_b = 0.0;
    let mut loss = 0.0;
    for (&i, &c) in rows.iter().zip(coeffs) {
        let x = data.row(i);
        let z = model.logit(x);
        let y = f64::from(data.labels[i]);
        loss += c * (softplus(z) - y * z);
        let r = c * (sigmoid(z) - y);
        grad_w.iter_mut().zip(x).for_each(|(g, x)| *g += r * x);
        grad_b += r;
    }
    (loss, grad_w, grad_b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: LinearModel,
    /// Final DRO group weights; `None` for the other methods.
    pub dro_state: Option<GroupWeightState>,
    pub steps: usize,
}

fn group_counts(data: &TrainingData) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for i in 0..data.len() {
        *counts.entry(data.group(i)).or_insert(0) += 1;
    }
    counts
}

/// Minibatch gradient descent with a linear learning-rate decay.
///
/// The shuffle order of epoch `e` comes from its own random stream, so runs are
/// reproducible from the seed alone.
pub fn train(data: &TrainingData, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_hook(data, config, |_, _| {})
}

/// As [`train`], calling `hook(step, dro_state)` after each DRO update.
pub fn train_with_hook(
    data: &TrainingData,
    config: &TrainConfig,
    mut hook: impl FnMut(usize, &GroupWeightState),
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    if config.batch_size == 0 || config.epochs == 0 || !(config.lr0 > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid training config {config:?}")));
    }
    let weights = match config.method {
        Method::Reweighted => Some(example_weights(&group_counts(data), config.weight_clip)?),
        _ => None,
    };
    let mut dro = (config.method == Method::Dro).then(|| GroupWeightState::uniform(N_TRAIN_GROUPS, config.eta));

    let n = data.len();
    let batches_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = batches_per_epoch * config.epochs;
    let mut model = LinearModel::zeros(data.d);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(config.seed, domain::SHUFFLE, epoch as u64));
        for batch in order.chunks(config.batch_size) {
            let b = batch.len() as f64;
            let coeffs: Vec<f64> = match (config.method, &weights, &dro) {
                (Method::Reweighted, Some(w), _) => batch.iter().map(|&i| w[&data.group(i)] / b).collect(),
                (Method::Dro, _, Some(state)) => {
                    let mut count = [0usize; N_TRAIN_GROUPS];
                    batch.iter().for_each(|&i| count[data.group(i)] += 1);
                    batch
                        .iter()
                        .map(|&i| {
                            let g = data.group(i);
                            state.q[g] / count[g] as f64
                        })
                        .collect()
                }
                _ => vec![1.0 / b; batch.len()],
            };
            // Group losses come from the same forward pass as the gradient.
            let batch_losses = dro.as_ref().map(|_| {
                let mut sum = [0.0; N_TRAIN_GROUPS];
                let mut count = [0usize; N_TRAIN_GROUPS];
                for &i in batch {
                    let z = model.logit(data.row(i));
                    let y = f64::from(data.labels[i]);
                    sum[data.group(i)] += softplus(z) - y * z;
                    count[data.group(i)] += 1;
                }
                (0..N_TRAIN_GROUPS).map(|g| (count[g] > 0).then(|| sum[g] / count[g] as f64)).collect::<Vec<_>>()
            });
            let (loss, grad_w, grad_b) = weighted_loss_and_grad(&model, data, batch, &coeffs);
            if !loss.is_finite() {
                return Err(Error::Divergence { step });
            }
            let lr = config.lr0 * (1.0 - step as f64 / total_steps as f64);
            model.weights.iter_mut().zip(&grad_w).for_each(|(w, g)| *w -= lr * g);
            model.bias -= lr * grad_b;
            if model.weights.iter().any(|w| !w.is_finite()) || !model.bias.is_finite() {
                return Err(Error::Divergence { step });
            }

            if let (Some(state), Some(losses)) = (dro.as_mut(), batch_losses) {
                *state = dro_update(state, &losses).map_err(|_| Error::Divergence { step })?;
                hook(step, state);
            }
            step += 1;
        }
    }
    Ok(TrainOutcome { model, dro_state: dro, steps: step })
}

/// Error rate of the thresholded model on each `(identity, y)` group; `None` for empty groups.
pub fn group_errors(model: &LinearModel, data: &TrainingData, threshold: f64) -> Result<[Option<f64>; N_TRAIN_GROUPS]> {
    let p = model.predict(&data.features)?;
    let mut wrong = [0usize; N_TRAIN_GROUPS];
    let mut count = [0usize; N_TRAIN_GROUPS];
    for (i, &p) in p.iter().enumerate() {
        let g = data.group(i);
        count[g] += 1;
        wrong[g] += usize::from(u8::from(p >= threshold) != data.labels[i]);
    }
    Ok(std::array::from_fn(|g| (count[g] > 0).then(|| wrong[g] as f64 / count[g] as f64)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub average: f64,
    pub worst_group: f64,
}

pub fn error_summary(model: &LinearModel, data: &TrainingData) -> Result<ErrorSummary> {
    let groups = group_errors(model, data, 0.5)?;
    let p = model.predict(&data.features)?;
    let wrong = p.iter().zip(&data.labels).filter(|(&p, &y)| u8::from(p >= 0.5) != y).count();
    Ok(ErrorSummary {
        average: wrong as f64 / data.len() as f64,
        worst_group: groups.iter().flatten().copied().fold(0.0, f64::max),
    })
}

/// Scores `data` with `model` as a standard prediction set (ids `t000000`, ...).
pub fn predictions(model: &LinearModel, data: &TrainingData, name: impl Into<String>) -> Result<PredictionSet> {
    let p = model.predict(&data.features)?;
    let records = p
        .iter()
        .enumerate()
        .map(|(i, &p)| PredictionRecord {
            id: format!("t{i:06}"),
            p,
            y: data.labels[i],
            identity: data.identity_tag(i).to_string(),
            text: None,
        })
        .collect();
    PredictionSet::new(name, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_examples() {
        let w = example_weights(&BTreeMap::from([(0, 500), (1, 500)]), 50.0).unwrap();
        assert_eq!(w[&0], 1.0);
        let w = example_weights(&BTreeMap::from([(0, 990), (1, 10)]), 50.0).unwrap();
        assert_eq!(w[&1], 50.0);
        let w = example_weights(&BTreeMap::from([(0, 9990), (1, 10)]), 50.0).unwrap();
        assert_eq!(w[&1], 50.0);
        assert!(example_weights(&BTreeMap::new(), 50.0).is_err());
    }

    #[test]
    fn dro_update_closed_form() {
        let s = GroupWeightState::uniform(2, 0.001);
        let next = dro_update(&s, &[Some(1.0), Some(0.0)]).unwrap();
        let e = 0.001f64.exp();
        assert!((next.q[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((next.q[0] - 0.50025).abs() < 1e-6);
        let same = dro_update(&s, &[Some(0.7), Some(0.7)]).unwrap();
        assert_eq!(same.q, vec![0.5, 0.5]);
        assert!(dro_update(&s, &[Some(f64::NAN), None]).is_err());
    }

    #[test]
    fn absent_group_only_renormalizes() {
        let s = GroupWeightState { q: vec![0.2, 0.3, 0.5], eta: 0.1 };
        let next = dro_update(&s, &[Some(1.0), None, Some(1.0)]).unwrap();
        // Present groups scale by the same factor, so the absent group's share shrinks.
        let f = 0.1f64.exp();
        let total = 0.2 * f + 0.3 + 0.5 * f;
        assert!((next.q[1] - 0.3 / total).abs() < 1e-15);
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = LinearModel::zeros(3);
        assert_eq!(m.predict(&[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(m.predict_one(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }
}
