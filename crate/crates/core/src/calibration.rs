//! Equal-width reliability binning, ECE and the subgroup calibration gap.

use serde::{Deserialize, Serialize};

use crate::data::{slice_indices, PredictionSet, SliceKind};
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_p: Option<f64>,
    pub frac_positive: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub edges: Vec<f64>,
    pub bins: Vec<Bin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibGapResult {
    pub subgroup_ece: f64,
    pub background_ece: f64,
    pub gap: f64,
}

/// Bin of `p` among `n_bins` equal-width bins; `p = 1` lands in the last bin.
pub fn bin_index(p: f64, n_bins: usize) -> usize {
    ((p * n_bins as f64) as usize).min(n_bins - 1)
}

fn check_bins(n_bins: usize) -> Result<()> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {n_bins}")));
    }
    Ok(())
}

/// Records of one slice with precomputed bin membership, for repeated weighted ECE.
#[derive(Debug, Clone)]
pub struct BinnedSlice {
    n_bins: usize,
    entries: Vec<(u32, u16, f64, bool)>,
}

impl BinnedSlice {
    pub fn new(p: &[f64], y: &[u8], indices: &[usize], n_bins: usize) -> Result<Self> {
        check_bins(n_bins)?;
        let entries = indices.iter().map(|&i| (i as u32, bin_index(p[i], n_bins) as u16, p[i], y[i] == 1)).collect();
        Ok(Self { n_bins, entries })
    }

    /// ECE with each record counted `counts[position]` times (once when `None`).
    /// Returns `None` when the weighted slice is empty.
    pub fn ece(&self, counts: Option<&[u32]>) -> Option<f64> {
        let mut n = vec![0u64; self.n_bins];
        let mut sum_p = vec![0.0f64; self.n_bins];
        let mut pos = vec![0u64; self.n_bins];
        for &(i, b, p, y) in &self.entries {
            let w = counts.map_or(1, |c| u64::from(c[i as usize]));
            if w == 0 {
                continue;
            }
            let b = b as usize;
            n[b] += w;
            sum_p[b] += w as f64 * p;
            pos[b] += w * u64::from(y);
        }
        let total: u64 = n.iter().sum();
        if total == 0 {
            return None;
        }
        let ece = (0..self.n_bins).filter(|&b| n[b] > 0).map(|b| (sum_p[b] - pos[b] as f64).abs()).sum::<f64>()
            / total as f64;
        Some(ece)
    }
}

pub fn reliability_bins(p: &[f64], y: &[u8], n_bins: usize) -> Result<ReliabilityBins> {
    check_bins(n_bins)?;
    if p.is_empty() {
        return Err(Error::EmptySlice("reliability input".into()));
    }
    let edges: Vec<f64> = (0..=n_bins).map(|b| b as f64 / n_bins as f64).collect();
    let mut count = vec![0usize; n_bins];
    let mut sum_p = vec![0.0f64; n_bins];
    let mut pos = vec![0usize; n_bins];
    for (&p, &y) in p.iter().zip(y) {
        let b = bin_index(p, n_bins);
        count[b] += 1;
        sum_p[b] += p;
        pos[b] += usize::from(y);
    }
    let bins = (0..n_bins)
        .map(|b| Bin {
            lo: edges[b],
            hi: edges[b + 1],
            count: count[b],
            mean_p: (count[b] > 0).then(|| sum_p[b] / count[b] as f64),
            frac_positive: (count[b] > 0).then(|| pos[b] as f64 / count[b] as f64),
        })
        .collect();
    Ok(ReliabilityBins { edges, bins })
}

/// Positive-class expected calibration error over equal-width bins.
pub fn ece(p: &[f64], y: &[u8], n_bins: usize) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::EmptySlice("ece input".into()));
    }
    if p.len() != y.len() {
        return Err(Error::InvalidArgument(format!("{} scores but {} labels", p.len(), y.len())));
    }
    let all: Vec<usize> = (0..p.len()).collect();
    Ok(BinnedSlice::new(p, y, &all, n_bins)?.ece(None).expect("non-empty slice"))
}

pub fn slice_ece(set: &PredictionSet, kind: &SliceKind, n_bins: usize) -> Result<f64> {
    let indices = slice_indices(set, kind)?;
    let (p, y): (Vec<f64>, Vec<u8>) = indices.iter().map(|&i| (set.records()[i].p, set.records()[i].y)).unzip();
    ece(&p, &y, n_bins)
}

pub fn calib_gap(set: &PredictionSet, identity: &str, n_bins: usize) -> Result<CalibGapResult> {
    let background_ece = slice_ece(set, &SliceKind::Background, n_bins)?;
    let subgroup_ece = if identity == crate::data::BACKGROUND {
        background_ece
    } else {
        slice_ece(set, &SliceKind::Subgroup(identity.to_string()), n_bins)?
    };
    Ok(CalibGapResult { subgroup_ece, background_ece, gap: subgroup_ece - background_ece })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_values() {
        assert_eq!(ece(&[0.0; 4], &[0; 4], 15).unwrap(), 0.0);
        assert_eq!(ece(&[0.9, 0.9], &[0, 0], 15).unwrap(), 0.9);
        assert_eq!(ece(&[0.8; 5], &[1, 1, 1, 1, 0], 15).unwrap(), 0.0);
    }

    #[test]
    fn placement_and_boundaries() {
        let r = reliability_bins(&[0.05; 10], &[0, 1, 0, 1, 0, 0, 0, 0, 0, 1], 15).unwrap();
        assert_eq!(r.bins[0].count, 10);
        assert_eq!(r.bins[0].frac_positive, Some(0.3));
        let r = reliability_bins(&[1.0], &[1], 15).unwrap();
        assert_eq!(r.bins[14].count, 1);
        assert_eq!(r.edges.len(), 16);
        assert_eq!(bin_index(1.0 / 15.0 + 1e-12, 15), 1);
        assert!(reliability_bins(&[0.5], &[0], 1).is_err());
        assert!(reliability_bins(&[], &[], 15).is_err());
    }

    #[test]
    fn weighted_matches_expanded() {
        let p = [0.1, 0.55, 0.56, 0.95];
        let y = [0, 1, 0, 1];
        let b = BinnedSlice::new(&p, &y, &[0, 1, 2, 3], 15).unwrap();
        let w = b.ece(Some(&[3, 0, 2, 1])).unwrap();
        let direct = ece(&[0.1, 0.1, 0.1, 0.56, 0.56, 0.95], &[0, 0, 0, 0, 0, 1], 15).unwrap();
        assert!((w - direct).abs() < 1e-15);
        assert_eq!(b.ece(Some(&[0, 0, 0, 0])), None);
    }
}
