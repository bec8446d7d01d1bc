//! Temperature scaling, per-identity thresholds and confidence-based abstention.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{PredictionRecord, PredictionSet, BACKGROUND};
use crate::error::{Error, Result};
use crate::prob::{logit, sigmoid, softplus};

pub const TEMPERATURE_GRID: (f64, f64) = (0.5, 5.0);
pub const THRESHOLD_GRID: (f64, f64) = (0.1, 0.9);
pub const DEFAULT_STEP: f64 = 0.01;
/// A retained identity slice smaller than this has its gap reported as insufficient.
pub const MIN_RETAINED: usize = 20;
pub const DEFAULT_COVERAGE_GRID: [f64; 6] = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub t_star: f64,
    pub nll_at_t: f64,
    pub grid_step: f64,
    /// Mean NLL of the unscaled probabilities, for reference.
    pub nll_at_one: f64,
}

/// Grid points `lo, lo + step, ..., hi`, built from integer multiples to avoid drift.
fn grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(hi >= lo) {
        return Err(Error::InvalidArgument(format!("bad grid [{lo}, {hi}] with step {step}")));
    }
    let k = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=k).map(|i| round_to_step(lo + i as f64 * step, step)).collect())
}

fn round_to_step(x: f64, step: f64) -> f64 {
    // Keeps 0.1 + 40 * 0.01 equal to 0.5 exactly.
    let scale = (1.0 / step).round();
    if (scale * step - 1.0).abs() < 1e-12 {
        (x * scale).round() / scale
    } else {
        x
    }
}

/// Mean negative log-likelihood of `sigmoid(z / t)` against the labels.
pub fn mean_nll(z: &[f64], y: &[u8], t: f64) -> f64 {
    let total: f64 = z
        .iter()
        .zip(y)
        .map(|(&z, &y)| {
            let u = z / t;
            softplus(u) - f64::from(y) * u
        })
        .sum();
    total / z.len() as f64
}

/// Picks the temperature in `[lo, hi]` minimizing validation NLL; exact ties go to the point nearest 1.0.
pub fn fit_temperature_grid(validation: &PredictionSet, lo: f64, hi: f64, step: f64) -> Result<TemperatureFit> {
    if validation.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (z, y): (Vec<f64>, Vec<u8>) = validation.records().iter().map(|r| (logit(r.p), r.y)).unzip();
    let ts = grid(lo, hi, step)?;
    let nll: Vec<f64> = ts.par_iter().map(|&t| mean_nll(&z, &y, t)).collect();
    let mut best = 0;
    for i in 1..ts.len() {
        let better = nll[i] < nll[best] || (nll[i] == nll[best] && (ts[i] - 1.0).abs() < (ts[best] - 1.0).abs());
        if better {
            best = i;
        }
    }
    Ok(TemperatureFit { t_star: ts[best], nll_at_t: nll[best], grid_step: step, nll_at_one: mean_nll(&z, &y, 1.0) })
}

pub fn fit_temperature(validation: &PredictionSet) -> Result<TemperatureFit> {
    fit_temperature_grid(validation, TEMPERATURE_GRID.0, TEMPERATURE_GRID.1, DEFAULT_STEP)
}

/// Returns a new set with `p -> sigmoid(logit(p) / t)`.
pub fn apply_temperature(set: &PredictionSet, t: f64) -> Result<PredictionSet> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {t}")));
    }
    let p: Vec<f64> = set.records().iter().map(|r| sigmoid(logit(r.p) / t)).collect();
    set.with_probabilities(set.name().to_string(), &p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub tau_star: f64,
    /// Signed gap at `tau_star`.
    pub residual_gap: f64,
    /// Signed gap at the default threshold 0.5.
    pub gap_at_default: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub background_tau: f64,
    pub background_error: f64,
    pub entries: BTreeMap<String, ThresholdEntry>,
}

fn slice_error(records: &[&PredictionRecord], tau: f64) -> f64 {
    let wrong = records.iter().filter(|r| u8::from(r.p >= tau) != r.y).count();
    wrong as f64 / records.len() as f64
}

fn identity_records<'a>(set: &'a PredictionSet, identity: &str) -> Vec<&'a PredictionRecord> {
    set.records().iter().filter(|r| r.identity == identity).collect()
}

/// For each identity, the threshold in `[0.1, 0.9]` whose subgroup error is
/// closest to the background error at 0.5. Ties prefer 0.5, then the smaller threshold.
pub fn optimize_thresholds(
    validation: &PredictionSet,
    identities: &[String],
    step: f64,
    min_n: usize,
) -> Result<ThresholdTable> {
    let background_tau = 0.5;
    let bg = identity_records(validation, BACKGROUND);
    if bg.is_empty() {
        return Err(Error::EmptySlice(BACKGROUND.into()));
    }
    let background_error = slice_error(&bg, background_tau);
    let taus = grid(THRESHOLD_GRID.0, THRESHOLD_GRID.1, step)?;
    let mut entries = BTreeMap::new();
    for identity in identities {
        let sub = identity_records(validation, identity);
        if sub.is_empty() {
            return Err(Error::EmptySlice(identity.clone()));
        }
        if sub.len() < min_n {
            return Err(Error::BelowFloor { identity: identity.clone(), n: sub.len(), min_n });
        }
        let key = |tau: f64| {
            let gap = slice_error(&sub, tau) - background_error;
            (gap.abs(), (tau - 0.5).abs(), tau, gap)
        };
        let mut best = key(taus[0]);
        for &tau in &taus[1..] {
            let k = key(tau);
            if (k.0, k.1, k.2).partial_cmp(&(best.0, best.1, best.2)) == Some(std::cmp::Ordering::Less) {
                best = k;
            }
        }
        entries.insert(
            identity.clone(),
            ThresholdEntry {
                tau_star: best.2,
                residual_gap: best.3,
                gap_at_default: slice_error(&sub, 0.5) - background_error,
            },
        );
    }
    Ok(ThresholdTable { background_tau, background_error, entries })
}

/// Signed error gap of `identity` thresholded at `tau` against the background at `background_tau`.
pub fn threshold_gap(set: &PredictionSet, identity: &str, tau: f64, background_tau: f64) -> Result<f64> {
    let sub = identity_records(set, identity);
    let bg = identity_records(set, BACKGROUND);
    if sub.is_empty() {
        return Err(Error::EmptySlice(identity.to_string()));
    }
    if bg.is_empty() {
        return Err(Error::EmptySlice(BACKGROUND.into()));
    }
    Ok(slice_error(&sub, tau) - slice_error(&bg, background_tau))
}

pub fn confidence(p: f64) -> f64 {
    p.max(1.0 - p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityGap {
    pub n_retained: usize,
    /// `None` when fewer than [`MIN_RETAINED`] identity records (or no background) remain.
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCoveragePoint {
    pub coverage: f64,
    pub n_retained: usize,
    pub risk: f64,
    pub per_identity_gap: BTreeMap<String, IdentityGap>,
}

/// Retained record count at coverage `c`: `ceil(c * n)`.
pub fn retained_count(coverage: f64, n: usize) -> usize {
    // The small offset keeps 0.7 * 1000 at 700 despite binary rounding.
    (((coverage * n as f64) - 1e-9).ceil() as usize).clamp(1, n)
}

/// Record positions ordered from most to least confident; ties by ascending id.
pub fn confidence_order(set: &PredictionSet) -> Vec<usize> {
    let records = set.records();
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        confidence(records[b].p).total_cmp(&confidence(records[a].p)).then_with(|| records[a].id.cmp(&records[b].id))
    });
    order
}

pub fn risk_coverage_curve(
    set: &PredictionSet,
    coverage_grid: &[f64],
    threshold: f64,
    identities: &[String],
) -> Result<Vec<RiskCoveragePoint>> {
    if set.is_empty() {
        return Err(Error::EmptyInput);
    }
    if coverage_grid.iter().any(|&c| !(c > 0.0 && c <= 1.0)) {
        return Err(Error::InvalidArgument("coverage values must lie in (0, 1]".into()));
    }
    if coverage_grid.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InvalidArgument("coverage grid must be strictly descending".into()));
    }
    if coverage_grid.first() != Some(&1.0) {
        return Err(Error::InvalidArgument("coverage grid must start at 1.0".into()));
    }
    let records = set.records();
    let order = confidence_order(set);
    let n = records.len();
    let mut points = Vec::with_capacity(coverage_grid.len());
    for &c in coverage_grid {
        let kept = &order[..retained_count(c, n)];
        // (count, wrong) per identity on the retained prefix
        let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        let mut wrong_total = 0;
        for &i in kept {
            let r = &records[i];
            let wrong = u8::from(r.p >= threshold) != r.y;
            let t = tally.entry(r.identity.as_str()).or_default();
            t.0 += 1;
            t.1 += usize::from(wrong);
            wrong_total += usize::from(wrong);
        }
        let bg_rate = tally.get(BACKGROUND).filter(|t| t.0 > 0).map(|&(n, w)| w as f64 / n as f64);
        let per_identity_gap = identities
            .iter()
            .map(|id| {
                let (n_id, w_id) = tally.get(id.as_str()).copied().unwrap_or_default();
                let gap = match bg_rate {
                    Some(bg) if n_id >= MIN_RETAINED => Some(w_id as f64 / n_id as f64 - bg),
                    _ => None,
                };
                (id.clone(), IdentityGap { n_retained: n_id, gap })
            })
            .collect();
        points.push(RiskCoveragePoint {
            coverage: c,
            n_retained: kept.len(),
            risk: wrong_total as f64 / kept.len() as f64,
            per_identity_gap,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[(&str, f64, u8, &str)]) -> PredictionSet {
        PredictionSet::new("t", rows.iter().map(|&(id, p, y, g)| PredictionRecord::new(id, p, y, g).unwrap()).collect())
            .unwrap()
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(confidence(0.5), 0.5);
        assert_eq!(confidence(0.9), 0.9);
        assert_eq!(confidence(0.2), 0.8);
    }

    #[test]
    fn temperature_closed_form() {
        let s = set(&[("a", 0.9, 1, BACKGROUND)]);
        let p = apply_temperature(&s, 2.0).unwrap().records()[0].p;
        assert!((p - 0.75).abs() < 1e-12);
        let p = apply_temperature(&s, 1e6).unwrap().records()[0].p;
        assert!(p > 0.5 && p < 0.5001);
        let p = apply_temperature(&s, 1.0).unwrap().records()[0].p;
        assert!((p - 0.9).abs() < 1e-12);
        assert!(apply_temperature(&s, 0.0).is_err());
    }

    #[test]
    fn single_confident_correct_record_sharpens_to_grid_edge() {
        // For one record with y = 1 and p > 0.5, NLL falls as T shrinks.
        let s = set(&[("a", 0.7, 1, BACKGROUND)]);
        let fit = fit_temperature(&s).unwrap();
        assert_eq!(fit.t_star, 0.5);
        assert!(fit.nll_at_t <= fit.nll_at_one);
    }

    #[test]
    fn grid_points_are_exact() {
        let g = grid(0.1, 0.9, 0.01).unwrap();
        assert_eq!(g.len(), 81);
        assert_eq!(g[40], 0.5);
        assert_eq!(*g.last().unwrap(), 0.9);
        assert_eq!(grid(0.5, 5.0, 0.01).unwrap().len(), 451);
    }

    #[test]
    fn retained_counts_round_up() {
        assert_eq!(retained_count(0.7, 1000), 700);
        assert_eq!(retained_count(0.7, 1001), 701);
        assert_eq!(retained_count(1.0, 3), 3);
        assert_eq!(retained_count(0.01, 3), 1);
    }

    #[test]
    fn coverage_one_matches_overall_error() {
        let s = set(&[
            ("a", 0.9, 0, BACKGROUND),
            ("b", 0.6, 1, BACKGROUND),
            ("c", 0.45, 1, BACKGROUND),
            ("d", 0.1, 0, BACKGROUND),
        ]);
        let curve = risk_coverage_curve(&s, &[1.0, 0.5], 0.5, &[]).unwrap();
        assert_eq!(curve[0].risk, 0.5);
        // Top half by confidence: a (0.9) and d (0.9 via 1 - 0.1); tie broken by id.
        assert_eq!(curve[1].n_retained, 2);
        assert_eq!(curve[1].risk, 0.5);
        assert!(risk_coverage_curve(&s, &[0.9, 0.5], 0.5, &[]).is_err());
        assert!(risk_coverage_curve(&s, &[1.0, 0.5, 0.7], 0.5, &[]).is_err());
    }

    #[test]
    fn small_retained_slices_are_insufficient() {
        let mut rows = vec![];
        let ids: Vec<String> = (0..40).map(|i| format!("r{i:02}")).collect();
        for (i, id) in ids.iter().enumerate() {
            let g = if i < 19 { "white" } else { BACKGROUND };
            rows.push((id.as_str(), 0.2, 0u8, g));
        }
        let curve = risk_coverage_curve(&set(&rows), &[1.0], 0.5, &["white".into()]).unwrap();
        assert_eq!(curve[0].per_identity_gap["white"], IdentityGap { n_retained: 19, gap: None });
    }

    #[test]
    fn identical_subgroup_keeps_default_threshold() {
        let mut rows = vec![];
        let ids: Vec<String> = (0..200).map(|i| i.to_string()).collect();
        for (i, id) in ids.iter().enumerate() {
            let g = if i % 2 == 0 { "white" } else { BACKGROUND };
            let k = i / 2;
            let p = (k % 10) as f64 / 10.0 + 0.05;
            let y = u8::from(k % 10 >= 5) ^ u8::from(k % 7 == 0);
            rows.push((id.as_str(), p, y, g));
        }
        let t = optimize_thresholds(&set(&rows), &["white".into()], 0.01, 50).unwrap();
        let e = t.entries["white"];
        assert_eq!(e.tau_star, 0.5);
        assert_eq!(e.residual_gap, 0.0);
        let err = optimize_thresholds(&set(&rows), &["white".into()], 0.01, 101).unwrap_err();
        assert!(matches!(err, Error::BelowFloor { n: 100, .. }));
    }
}
