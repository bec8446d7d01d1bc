//! Rank-based AUC over evaluation slices and threshold error rates.

use serde::{Deserialize, Serialize};

use crate::data::{slice_indices, PredictionSet, SliceKind};
use crate::error::{Error, Result};

/// Deployment threshold used for error gaps.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucResult {
    pub value: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorGapResult {
    pub subgroup_error: f64,
    pub background_error: f64,
    pub gap: f64,
    pub threshold: f64,
}

/// Records of one slice ordered by ascending score, ready for repeated
/// weighted AUC evaluation.
#[derive(Debug, Clone)]
pub struct RankedSlice {
    // (record position, label, starts a new run of tied scores)
    entries: Vec<(u32, bool, bool)>,
}

impl RankedSlice {
    pub fn new(p: &[f64], y: &[u8], indices: &[usize]) -> Self {
        let mut order: Vec<usize> = indices.to_vec();
        order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
        let mut entries = Vec::with_capacity(order.len());
        let mut prev = f64::NAN;
        for &i in &order {
            entries.push((i as u32, y[i] == 1, p[i] != prev));
            prev = p[i];
        }
        Self { entries }
    }

    /// AUC with each record counted `counts[position]` times (once when `None`).
    ///
    /// Works in doubled integer units so that tie credit of one half stays exact.
    pub fn auc(&self, counts: Option<&[u32]>) -> Result<AucResult> {
        let (mut pos, mut neg) = (0u64, 0u64);
        let (mut run_pos, mut run_neg) = (0u64, 0u64);
        let mut doubled = 0u128;
        let mut flush = |run_pos: &mut u64, run_neg: &mut u64, neg_below: u64| {
            doubled += u128::from(*run_pos) * u128::from(2 * neg_below + *run_neg);
            *run_pos = 0;
            *run_neg = 0;
        };
        for &(i, positive, new_run) in &self.entries {
            let w = counts.map_or(1, |c| u64::from(c[i as usize]));
            if new_run {
                let below = neg;
                neg += run_neg;
                pos += run_pos;
                flush(&mut run_pos, &mut run_neg, below);
            }
            if positive {
                run_pos += w;
            } else {
                run_neg += w;
            }
        }
        let below = neg;
        neg += run_neg;
        pos += run_pos;
        flush(&mut run_pos, &mut run_neg, below);

        if pos == 0 || neg == 0 {
            return Err(Error::UndefinedAuc { n_pos: pos as usize, n_neg: neg as usize });
        }
        let value = doubled as f64 / (2.0 * pos as f64 * neg as f64);
        Ok(AucResult { value, n_pos: pos as usize, n_neg: neg as usize })
    }
}

/// Mann-Whitney AUC with half credit for tied scores, in O(n log n).
pub fn auc(p: &[f64], y: &[u8]) -> Result<AucResult> {
    if p.len() != y.len() {
        return Err(Error::InvalidArgument(format!("{} scores but {} labels", p.len(), y.len())));
    }
    let all: Vec<usize> = (0..p.len()).collect();
    RankedSlice::new(p, y, &all).auc(None)
}

fn columns(set: &PredictionSet) -> (Vec<f64>, Vec<u8>) {
    set.records().iter().map(|r| (r.p, r.y)).unzip()
}

pub fn slice_auc(set: &PredictionSet, kind: &SliceKind) -> Result<AucResult> {
    let indices = slice_indices(set, kind)?;
    let (p, y) = columns(set);
    RankedSlice::new(&p, &y, &indices).auc(None)
}

pub fn overall_auc(set: &PredictionSet) -> Result<AucResult> {
    slice_auc(set, &SliceKind::Overall)
}

pub fn subgroup_auc(set: &PredictionSet, identity: &str) -> Result<AucResult> {
    slice_auc(set, &SliceKind::Subgroup(identity.to_string()))
}

pub fn bpsn_auc(set: &PredictionSet, identity: &str) -> Result<AucResult> {
    slice_auc(set, &SliceKind::Bpsn(identity.to_string()))
}

/// Fails with `NotReported` when the identity has fewer than 50 positives.
pub fn bnsp_auc(set: &PredictionSet, identity: &str) -> Result<AucResult> {
    slice_auc(set, &SliceKind::Bnsp(identity.to_string()))
}

/// Fraction of records whose thresholded prediction `p >= threshold` disagrees with `y`.
pub fn error_rate(p: &[f64], y: &[u8], threshold: f64) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::EmptySlice("error-rate input".into()));
    }
    if p.len() != y.len() {
        return Err(Error::InvalidArgument(format!("{} scores but {} labels", p.len(), y.len())));
    }
    let wrong = p.iter().zip(y).filter(|(&p, &y)| u8::from(p >= threshold) != y).count();
    Ok(wrong as f64 / p.len() as f64)
}

pub fn slice_error_rate(set: &PredictionSet, kind: &SliceKind, threshold: f64) -> Result<f64> {
    let indices = slice_indices(set, kind)?;
    let (p, y): (Vec<f64>, Vec<u8>) = indices.iter().map(|&i| (set.records()[i].p, set.records()[i].y)).unzip();
    error_rate(&p, &y, threshold)
}

pub fn error_gap(set: &PredictionSet, identity: &str, threshold: f64) -> Result<ErrorGapResult> {
    let subgroup_error = slice_error_rate(set, &SliceKind::Subgroup(identity.to_string()), threshold)?;
    let background_error = slice_error_rate(set, &SliceKind::Background, threshold)?;
    Ok(ErrorGapResult { subgroup_error, background_error, gap: subgroup_error - background_error, threshold })
}
