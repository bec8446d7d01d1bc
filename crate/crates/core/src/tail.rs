//! Score-tail statistics on benign identity records and the confident-error listing.

use serde::{Deserialize, Serialize};

use crate::data::{PairedPredictions, PredictionSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailStats {
    pub identity: String,
    pub n_benign: usize,
    pub mean_p: f64,
    pub frac_above_90: f64,
    pub frac_above_99: f64,
    /// Mean of `p_method - p_baseline` over the same benign records.
    pub mean_delta_vs_baseline: f64,
}

/// Tail statistics over the benign (`y = 0`) records of `identity`.
pub fn tail_stats(
    paired: &PairedPredictions,
    method: &str,
    baseline_method: &str,
    identity: &str,
) -> Result<TailStats> {
    let set = paired.get(method)?;
    let base = paired.get(baseline_method)?;
    // Pairing guarantees aligned positions, so position matches id.
    let rows: Vec<(f64, f64)> = set
        .records()
        .iter()
        .zip(base.records())
        .filter(|(r, _)| r.identity == identity && r.y == 0)
        .map(|(r, b)| (r.p, b.p))
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptySlice(format!("benign {identity}")));
    }
    let n = rows.len() as f64;
    let count = |f: &dyn Fn(f64) -> bool| rows.iter().filter(|(p, _)| f(*p)).count() as f64 / n;
    Ok(TailStats {
        identity: identity.to_string(),
        n_benign: rows.len(),
        mean_p: rows.iter().map(|(p, _)| p).sum::<f64>() / n,
        frac_above_90: count(&|p| p > 0.9),
        frac_above_99: count(&|p| p > 0.99),
        mean_delta_vs_baseline: rows.iter().map(|(p, b)| p - b).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidentError {
    pub id: String,
    pub p: f64,
    pub y: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

/// Up to `k` benign records of `identity` scored at or above `threshold`, highest `p` first.
///
/// Ties on `p` are ordered by id so the listing is deterministic.
pub fn top_confident_errors(
    set: &PredictionSet,
    identity: &str,
    k: usize,
    threshold: f64,
) -> Result<Vec<ConfidentError>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let mut hits: Vec<_> =
        set.records().iter().filter(|r| r.identity == identity && r.y == 0 && r.p >= threshold).collect();
    hits.sort_by(|a, b| b.p.total_cmp(&a.p).then_with(|| a.id.cmp(&b.id)));
    Ok(hits
        .into_iter()
        .take(k)
        .map(|r| ConfidentError { id: r.id.clone(), p: r.p, y: r.y, text: r.text.clone() })
        .collect())
}
