//! Paired percentile bootstrap.
//!
//! Each iteration draws one index vector over the whole evaluation set and
//! applies it to every method. Resamples are represented as per-record
//! multiplicities, which lets a slice metric touch only its own records.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::BinnedSlice;
use crate::data::{slice_indices, PairedPredictions, PredictionSet, SliceKind};
use crate::error::{Error, Result};
use crate::ranking::RankedSlice;
use crate::rng;

pub const DEFAULT_ITERATIONS: usize = 1000;
pub const DEFAULT_SEED: u64 = 42;
/// Share of skipped resamples above which an estimate is flagged as fragile.
pub const FRAGILE_SKIP_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub master_seed: u64,
    pub n_iterations: usize,
    /// Worker threads; `None` uses the global rayon pool. Never affects results.
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl Default for ResamplePlan {
    fn default() -> Self {
        Self { master_seed: DEFAULT_SEED, n_iterations: DEFAULT_ITERATIONS, workers: None }
    }
}

impl ResamplePlan {
    pub fn new(master_seed: u64, n_iterations: usize) -> Self {
        Self { master_seed, n_iterations, workers: None }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub point: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_iterations_used: usize,
    pub n_iterations_skipped: usize,
    pub significant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl MetricEstimate {
    fn from_samples(point: f64, mut samples: Vec<f64>, skipped: usize) -> Result<Self> {
        let m = samples.len();
        if m == 0 {
            return Err(Error::InvalidArgument("metric undefined on every bootstrap resample".into()));
        }
        samples.sort_by(f64::total_cmp);
        let (lo, hi) = percentile_ranks(m);
        let (ci_lo, ci_hi) = (samples[lo - 1], samples[hi - 1]);
        let total = m + skipped;
        let warning = (skipped as f64 > FRAGILE_SKIP_FRACTION * total as f64)
            .then(|| format!("fragile slice: metric undefined on {skipped} of {total} resamples"));
        Ok(Self {
            point,
            ci_lo,
            ci_hi,
            n_iterations_used: m,
            n_iterations_skipped: skipped,
            significant: ci_lo > 0.0 || ci_hi < 0.0,
            warning,
        })
    }
}

/// 1-based order statistics used as the 2.5th and 97.5th percentiles of `m`
/// sorted values; for `m = 1000` these are the 25th and 975th.
pub fn percentile_ranks(m: usize) -> (usize, usize) {
    let rank = |per_mille: usize| (per_mille * m).div_ceil(1000).clamp(1, m);
    (rank(25), rank(975))
}

/// The index vector of one bootstrap iteration: `n` draws with replacement from `[0, n)`.
pub fn resample_indices(plan: &ResamplePlan, iteration: usize, n: usize) -> Vec<usize> {
    let mut rng = rng::stream(plan.master_seed, rng::domain::BOOTSTRAP, iteration as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Per-record multiplicities of [`resample_indices`].
pub fn resample_counts(plan: &ResamplePlan, iteration: usize, n: usize) -> Vec<u32> {
    let mut counts = vec![0u32; n];
    for i in resample_indices(plan, iteration, n) {
        counts[i] += 1;
    }
    counts
}

/// A metric evaluated repeatedly under resampling multiplicities.
pub trait WeightedEval: Send + Sync {
    /// `counts[i]` is how many times record `i` appears; `None` when undefined.
    fn eval(&self, counts: &[u32]) -> Option<f64>;
}

impl<F> WeightedEval for F
where
    F: Fn(&[u32]) -> Option<f64> + Send + Sync,
{
    fn eval(&self, counts: &[u32]) -> Option<f64> {
        self(counts)
    }
}

/// A scalar statistic of a prediction set.
pub trait Metric: Send + Sync {
    fn name(&self) -> String;

    /// Builds the per-set evaluator. Errors when the metric cannot be defined
    /// for this set at all (for example a suppressed slice).
    fn prepare<'a>(&'a self, set: &'a PredictionSet) -> Result<Box<dyn WeightedEval + 'a>>;
}

/// The audit's built-in metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum SliceMetric {
    Auc {
        slice: SliceKind,
    },
    Ece {
        slice: SliceKind,
        bins: usize,
    },
    /// Subgroup ECE minus background ECE.
    CalibGap {
        identity: String,
        bins: usize,
    },
    ErrorRate {
        slice: SliceKind,
        threshold: f64,
    },
    /// Subgroup error minus background error.
    ErrorGap {
        identity: String,
        threshold: f64,
    },
}

fn columns(set: &PredictionSet) -> (Vec<f64>, Vec<u8>) {
    set.records().iter().map(|r| (r.p, r.y)).unzip()
}

struct ErrorSlice {
    wrong: Vec<(u32, bool)>,
}

impl ErrorSlice {
    fn new(set: &PredictionSet, indices: &[usize], threshold: f64) -> Self {
        let wrong = indices
            .iter()
            .map(|&i| {
                let r = &set.records()[i];
                (i as u32, u8::from(r.p >= threshold) != r.y)
            })
            .collect();
        Self { wrong }
    }

    fn rate(&self, counts: &[u32]) -> Option<f64> {
        let (mut n, mut k) = (0u64, 0u64);
        for &(i, wrong) in &self.wrong {
            let w = u64::from(counts[i as usize]);
            n += w;
            k += w * u64::from(wrong);
        }
        (n > 0).then(|| k as f64 / n as f64)
    }
}

impl Metric for SliceMetric {
    fn name(&self) -> String {
        match self {
            SliceMetric::Auc { slice } => format!("auc[{}]", slice.name()),
            SliceMetric::Ece { slice, .. } => format!("ece[{}]", slice.name()),
            SliceMetric::CalibGap { identity, .. } => format!("calib_gap[{identity}]"),
            SliceMetric::ErrorRate { slice, threshold } => format!("error@{threshold}[{}]", slice.name()),
            SliceMetric::ErrorGap { identity, threshold } => format!("error_gap@{threshold}[{identity}]"),
        }
    }

    fn prepare<'a>(&'a self, set: &'a PredictionSet) -> Result<Box<dyn WeightedEval + 'a>> {
        let (p, y) = columns(set);
        Ok(match self {
            SliceMetric::Auc { slice } => {
                let ranked = RankedSlice::new(&p, &y, &slice_indices(set, slice)?);
                Box::new(move |c: &[u32]| ranked.auc(Some(c)).ok().map(|a| a.value))
            }
            SliceMetric::Ece { slice, bins } => {
                let binned = BinnedSlice::new(&p, &y, &slice_indices(set, slice)?, *bins)?;
                Box::new(move |c: &[u32]| binned.ece(Some(c)))
            }
            SliceMetric::CalibGap { identity, bins } => {
                let sub =
                    BinnedSlice::new(&p, &y, &slice_indices(set, &SliceKind::Subgroup(identity.clone()))?, *bins)?;
                let bg = BinnedSlice::new(&p, &y, &slice_indices(set, &SliceKind::Background)?, *bins)?;
                Box::new(move |c: &[u32]| Some(sub.ece(Some(c))? - bg.ece(Some(c))?))
            }
            SliceMetric::ErrorRate { slice, threshold } => {
                let e = ErrorSlice::new(set, &slice_indices(set, slice)?, *threshold);
                Box::new(move |c: &[u32]| e.rate(c))
            }
            SliceMetric::ErrorGap { identity, threshold } => {
                let sub =
                    ErrorSlice::new(set, &slice_indices(set, &SliceKind::Subgroup(identity.clone()))?, *threshold);
                let bg = ErrorSlice::new(set, &slice_indices(set, &SliceKind::Background)?, *threshold);
                Box::new(move |c: &[u32]| Some(sub.rate(c)? - bg.rate(c)?))
            }
        })
    }
}

/// Bootstrap result for one metric across every method of a paired input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBootstrap {
    pub metric: String,
    /// In the input's method order.
    pub per_method: Vec<(String, MetricEstimate)>,
    /// `metric(a) - metric(b)` for each requested pair.
    pub differences: Vec<(String, String, MetricEstimate)>,
}

fn run_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Bootstraps several metrics at once, sharing each iteration's resample.
///
/// An iteration on which a metric is undefined for any method is skipped for
/// that metric on every method, and counted. Methods missing from `paired`
/// in `differences` are rejected up front.
pub fn bootstrap_many(
    paired: &PairedPredictions,
    metrics: &[&dyn Metric],
    differences: &[(String, String)],
    plan: &ResamplePlan,
) -> Result<Vec<MetricBootstrap>> {
    if plan.n_iterations == 0 {
        return Err(Error::InvalidArgument("n_iterations must be positive".into()));
    }
    let methods: Vec<&str> = paired.methods().collect();
    let diff_idx: Vec<(usize, usize)> = differences
        .iter()
        .map(|(a, b)| {
            let find =
                |m: &str| methods.iter().position(|x| *x == m).ok_or_else(|| Error::UnknownMethod(m.to_string()));
            Ok((find(a)?, find(b)?))
        })
        .collect::<Result<_>>()?;

    let n = paired.reference().len();
    let k = methods.len();
    // evaluators[metric * k + method]
    let mut evaluators: Vec<Box<dyn WeightedEval + '_>> = Vec::with_capacity(metrics.len() * k);
    let mut points = Vec::with_capacity(metrics.len() * k);
    let ones = vec![1u32; n];
    for metric in metrics {
        for (_, set) in paired.iter() {
            let eval = metric.prepare(set)?;
            let point = eval
                .eval(&ones)
                .ok_or_else(|| Error::InvalidArgument(format!("{} is undefined on the full data", metric.name())))?;
            points.push(point);
            evaluators.push(eval);
        }
    }

    let per_iteration: Vec<Vec<Option<f64>>> = run_pool(plan.workers, || {
        (0..plan.n_iterations)
            .into_par_iter()
            .map(|it| {
                let counts = resample_counts(plan, it, n);
                evaluators.iter().map(|e| e.eval(&counts)).collect()
            })
            .collect()
    })?;

    let mut out = Vec::with_capacity(metrics.len());
    for (mi, metric) in metrics.iter().enumerate() {
        let cell = |it: usize, j: usize| per_iteration[it][mi * k + j];
        let used: Vec<usize> = (0..plan.n_iterations).filter(|&it| (0..k).all(|j| cell(it, j).is_some())).collect();
        let skipped = plan.n_iterations - used.len();
        let value = |it: usize, j: usize| cell(it, j).expect("filtered");

        let per_method = (0..k)
            .map(|j| {
                let samples = used.iter().map(|&it| value(it, j)).collect();
                Ok((methods[j].to_string(), MetricEstimate::from_samples(points[mi * k + j], samples, skipped)?))
            })
            .collect::<Result<_>>()?;
        let diffs = diff_idx
            .iter()
            .zip(differences)
            .map(|(&(a, b), (na, nb))| {
                let samples = used.iter().map(|&it| value(it, a) - value(it, b)).collect();
                let point = points[mi * k + a] - points[mi * k + b];
                Ok((na.clone(), nb.clone(), MetricEstimate::from_samples(point, samples, skipped)?))
            })
            .collect::<Result<_>>()?;
        out.push(MetricBootstrap { metric: metric.name(), per_method, differences: diffs });
    }
    Ok(out)
}

/// Per-method bootstrap estimate of one metric, keyed by method name.
pub fn bootstrap_metric(
    paired: &PairedPredictions,
    metric: &dyn Metric,
    plan: &ResamplePlan,
) -> Result<BTreeMap<String, MetricEstimate>> {
    let mut res = bootstrap_many(paired, &[metric], &[], plan)?;
    Ok(res.remove(0).per_method.into_iter().collect())
}

/// Estimate of `metric(method_a) - metric(method_b)` under shared resamples.
pub fn bootstrap_difference(
    paired: &PairedPredictions,
    metric: &dyn Metric,
    method_a: &str,
    method_b: &str,
    plan: &ResamplePlan,
) -> Result<MetricEstimate> {
    let pair = [(method_a.to_string(), method_b.to_string())];
    let mut res = bootstrap_many(paired, &[metric], &pair, plan)?;
    Ok(res.remove(0).differences.remove(0).2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_ranks_for_1000() {
        assert_eq!(percentile_ranks(1000), (25, 975));
        assert_eq!(percentile_ranks(1), (1, 1));
        assert_eq!(percentile_ranks(40), (1, 39));
    }

    #[test]
    fn n_one_resamples_to_zero() {
        let plan = ResamplePlan::default();
        assert_eq!(resample_indices(&plan, 3, 1), vec![0]);
    }

    #[test]
    fn resamples_are_deterministic_per_iteration() {
        let plan = ResamplePlan::new(7, 10);
        assert_eq!(resample_indices(&plan, 4, 50), resample_indices(&plan, 4, 50));
        assert_ne!(resample_indices(&plan, 4, 50), resample_indices(&plan, 5, 50));
    }

    #[test]
    fn significance_follows_ci() {
        let e = MetricEstimate::from_samples(0.1, vec![0.05, 0.1, 0.2], 0).unwrap();
        assert!(e.significant);
        let e = MetricEstimate::from_samples(0.0, vec![-0.05, 0.1, 0.2], 0).unwrap();
        assert!(!e.significant);
        let e = MetricEstimate::from_samples(0.0, vec![1.0; 90], 10).unwrap();
        assert!(e.warning.is_some());
        let e = MetricEstimate::from_samples(0.0, vec![1.0; 95], 5).unwrap();
        assert!(e.warning.is_none());
    }
}
