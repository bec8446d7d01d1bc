//! Audit orchestration and report rendering.
//!
//! [`run_audit`] evaluates every method of a paired input on all three axes and
//! collects the results in an [`AuditReport`]. JSON is the canonical form;
//! CSV and Markdown are renderings of it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bootstrap::{bootstrap_many, Metric, MetricEstimate, ResamplePlan, SliceMetric};
use crate::calibration::{reliability_bins, slice_ece, Bin};
use crate::data::{census, GroupCensus, PairedPredictions, PredictionSet, SliceKind, BACKGROUND};
use crate::error::{Error, Result};
use crate::posthoc::{
    apply_temperature, fit_temperature, optimize_thresholds, risk_coverage_curve, threshold_gap, RiskCoveragePoint,
    TemperatureFit, DEFAULT_COVERAGE_GRID, DEFAULT_STEP,
};
use crate::ranking::{error_gap, DEFAULT_THRESHOLD};
use crate::tail::{tail_stats, top_confident_errors};

/// Coverage at which abstention is judged.
pub const ABSTENTION_COVERAGE: f64 = 0.7;
/// Background ECE below this counts as globally calibrated.
pub const CALIBRATED_ECE: f64 = 0.02;
/// Background ECE above this counts as globally miscalibrated.
pub const MISCALIBRATED_ECE: f64 = 0.08;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSettings {
    pub seed: u64,
    pub n_iterations: usize,
    pub min_n: usize,
    pub bins: usize,
    pub threshold: f64,
    pub coverage_grid: Vec<f64>,
    /// Confident errors listed per identity.
    pub top_k: usize,
    /// Reference method for differences and tail deltas; defaults to the first input.
    pub baseline: Option<String>,
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl Default for AuditSettings {
    fn default() -> Self {
        Self {
            seed: crate::bootstrap::DEFAULT_SEED,
            n_iterations: crate::bootstrap::DEFAULT_ITERATIONS,
            min_n: crate::data::DEFAULT_MIN_N,
            bins: crate::calibration::DEFAULT_BINS,
            threshold: DEFAULT_THRESHOLD,
            coverage_grid: DEFAULT_COVERAGE_GRID.to_vec(),
            top_k: 5,
            baseline: None,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub method: String,
    pub sha256: String,
    pub n_records: usize,
}

/// Evaluation predictions plus optional held-out predictions for fitting
/// temperatures and thresholds.
#[derive(Debug, Clone)]
pub struct AuditInput {
    pub evaluation: PairedPredictions,
    pub validation: Option<PairedPredictions>,
    pub digests: Vec<InputDigest>,
    pub validation_digests: Vec<InputDigest>,
}

impl AuditInput {
    pub fn new(evaluation: PairedPredictions) -> Self {
        Self { evaluation, validation: None, digests: Vec::new(), validation_digests: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool_version: String,
    pub settings: AuditSettings,
    pub methods: Vec<String>,
    pub baseline: String,
    pub inputs: Vec<InputDigest>,
    pub validation_inputs: Vec<InputDigest>,
    /// `"validation"` or `"evaluation"`: where temperatures and thresholds were fitted.
    pub posthoc_fit_on: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedIdentity {
    pub identity: String,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub overall_auc: MetricEstimate,
    pub overall_ece: MetricEstimate,
    pub background_ece: MetricEstimate,
    pub overall_error: MetricEstimate,
}

/// One identity's ranking metrics; `None` cells are not reported (n/a).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub identity: String,
    pub n: usize,
    pub n_positive: usize,
    pub subgroup_auc: Option<MetricEstimate>,
    pub bpsn_auc: Option<MetricEstimate>,
    pub bnsp_auc: Option<MetricEstimate>,
    pub error_gap: MetricEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub identity: String,
    pub subgroup_ece: f64,
    pub gap: MetricEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub slice: String,
    pub bins: Vec<Bin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub identity: String,
    pub n_benign: usize,
    pub mean_p: f64,
    pub frac_above_90: f64,
    pub frac_above_99: f64,
    /// `None` for the baseline method itself.
    pub mean_delta_vs_baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureRow {
    pub fit: TemperatureFit,
    pub ece_before: f64,
    pub ece_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub identity: String,
    pub gap_at_default: f64,
    pub tau_star: f64,
    pub gap_at_tau_star: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub ranking: String,
    pub calibration: String,
    pub tail: String,
    pub t_scaling: String,
    pub abstention: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSection {
    pub method: String,
    pub aggregate: Aggregate,
    pub ranking: Vec<RankingRow>,
    pub calibration: Vec<CalibrationRow>,
    pub reliability: Vec<ReliabilityTable>,
    pub tail: Vec<TailRow>,
    pub temperature: TemperatureRow,
    pub thresholds: Vec<ThresholdRow>,
    pub risk_coverage: Vec<RiskCoveragePoint>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceRow {
    pub metric: String,
    pub method: String,
    pub baseline: String,
    pub estimate: MetricEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopErrorRow {
    pub identity: String,
    pub id: String,
    /// Each method's score for the record, in method order.
    pub p: Vec<(String, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub metadata: Metadata,
    pub census: GroupCensus,
    pub identities: Vec<String>,
    pub excluded: Vec<ExcludedIdentity>,
    pub methods: Vec<MethodSection>,
    pub differences: Vec<DifferenceRow>,
    pub top_errors: Vec<TopErrorRow>,
    pub warnings: Vec<String>,
}

impl AuditReport {
    pub fn method(&self, name: &str) -> Option<&MethodSection> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Metric slots gathered for one bootstrap pass, with their definedness.
struct Plan {
    metrics: Vec<SliceMetric>,
}

impl Plan {
    fn push(&mut self, m: SliceMetric) -> usize {
        self.metrics.push(m);
        self.metrics.len() - 1
    }
}

fn defined_everywhere(metric: &SliceMetric, paired: &PairedPredictions) -> bool {
    paired.iter().all(|(_, set)| metric.prepare(set).ok().and_then(|e| e.eval(&vec![1u32; set.len()])).is_some())
}

pub fn run_audit(input: &AuditInput, settings: &AuditSettings) -> Result<AuditReport> {
    let paired = &input.evaluation;
    let methods: Vec<String> = paired.methods().map(str::to_string).collect();
    let baseline = match &settings.baseline {
        Some(b) => {
            paired.get(b)?;
            b.clone()
        }
        None => methods[0].clone(),
    };
    if let Some(val) = &input.validation {
        for m in &methods {
            val.get(m)?;
        }
    }
    let reference = paired.reference();
    let census = census(reference)?;
    let identities = census.qualifying(settings.min_n);
    let excluded: Vec<ExcludedIdentity> = census
        .counts
        .iter()
        .filter(|(id, c)| id.as_str() != BACKGROUND && c.total < settings.min_n)
        .map(|(id, c)| ExcludedIdentity { identity: id.clone(), n: c.total })
        .collect();
    if identities.is_empty() {
        return Err(Error::InvalidArgument(format!("no identity has at least {} records", settings.min_n)));
    }
    if census.get(BACKGROUND).is_none() {
        return Err(Error::EmptySlice(BACKGROUND.into()));
    }
    let mut warnings = Vec::new();

    // One bootstrap pass over every metric; undefined metrics become n/a.
    let mut plan = Plan { metrics: Vec::new() };
    let auc_overall = plan.push(SliceMetric::Auc { slice: SliceKind::Overall });
    let ece_overall = plan.push(SliceMetric::Ece { slice: SliceKind::Overall, bins: settings.bins });
    let ece_background = plan.push(SliceMetric::Ece { slice: SliceKind::Background, bins: settings.bins });
    let err_overall = plan.push(SliceMetric::ErrorRate { slice: SliceKind::Overall, threshold: settings.threshold });
    let per_identity: Vec<[usize; 5]> = identities
        .iter()
        .map(|id| {
            [
                plan.push(SliceMetric::Auc { slice: SliceKind::Subgroup(id.clone()) }),
                plan.push(SliceMetric::Auc { slice: SliceKind::Bpsn(id.clone()) }),
                plan.push(SliceMetric::Auc { slice: SliceKind::Bnsp(id.clone()) }),
                plan.push(SliceMetric::ErrorGap { identity: id.clone(), threshold: settings.threshold }),
                plan.push(SliceMetric::CalibGap { identity: id.clone(), bins: settings.bins }),
            ]
        })
        .collect();
    let defined: Vec<bool> = plan.metrics.iter().map(|m| defined_everywhere(m, paired)).collect();
    for &required in &[auc_overall, ece_overall, ece_background, err_overall] {
        if !defined[required] {
            return Err(Error::InvalidArgument(format!(
                "{} is undefined on the evaluation data",
                plan.metrics[required].name()
            )));
        }
    }
    let active: Vec<usize> = (0..plan.metrics.len()).filter(|&i| defined[i]).collect();
    let metric_refs: Vec<&dyn Metric> = active.iter().map(|&i| &plan.metrics[i] as &dyn Metric).collect();
    let diff_pairs: Vec<(String, String)> =
        methods.iter().filter(|m| **m != baseline).map(|m| (m.clone(), baseline.clone())).collect();
    let resample =
        ResamplePlan { master_seed: settings.seed, n_iterations: settings.n_iterations, workers: settings.workers };
    log::info!(
        "bootstrapping {} metrics x {} methods, {} iterations",
        metric_refs.len(),
        methods.len(),
        settings.n_iterations
    );
    let boot = bootstrap_many(paired, &metric_refs, &diff_pairs, &resample)?;
    let mut results: Vec<Option<&crate::bootstrap::MetricBootstrap>> = vec![None; plan.metrics.len()];
    for (slot, b) in active.iter().zip(&boot) {
        results[*slot] = Some(b);
    }
    for b in &boot {
        for (m, e) in &b.per_method {
            if let Some(w) = &e.warning {
                warnings.push(format!("{m} {}: {w}", b.metric));
            }
        }
    }
    let estimate = |slot: usize, method: &str| -> Option<MetricEstimate> {
        results[slot]
            .map(|b| b.per_method.iter().find(|(m, _)| m == method).expect("every method is bootstrapped").1.clone())
    };

    let fit_source = input.validation.as_ref();
    let posthoc_fit_on = if fit_source.is_some() { "validation" } else { "evaluation" };
    if fit_source.is_none() {
        warnings.push(
            "temperatures and thresholds were fitted on the evaluation data; pass validation predictions for a held-out fit"
                .into(),
        );
    }

    let mut sections = Vec::with_capacity(methods.len());
    for method in &methods {
        let set = paired.get(method)?;
        let fit_set = match fit_source {
            Some(v) => v.get(method)?,
            None => set,
        };
        let aggregate = Aggregate {
            overall_auc: estimate(auc_overall, method).expect("required"),
            overall_ece: estimate(ece_overall, method).expect("required"),
            background_ece: estimate(ece_background, method).expect("required"),
            overall_error: estimate(err_overall, method).expect("required"),
        };
        let mut ranking = Vec::new();
        let mut calibration = Vec::new();
        for (id, slots) in identities.iter().zip(&per_identity) {
            let c = census.get(id).expect("qualifying identity");
            ranking.push(RankingRow {
                identity: id.clone(),
                n: c.total,
                n_positive: c.positive,
                subgroup_auc: estimate(slots[0], method),
                bpsn_auc: estimate(slots[1], method),
                bnsp_auc: estimate(slots[2], method),
                error_gap: estimate(slots[3], method).ok_or_else(|| Error::EmptySlice(id.clone()))?,
            });
            calibration.push(CalibrationRow {
                identity: id.clone(),
                subgroup_ece: slice_ece(set, &SliceKind::Subgroup(id.clone()), settings.bins)?,
                gap: estimate(slots[4], method).ok_or_else(|| Error::EmptySlice(id.clone()))?,
            });
        }
        let mut reliability = Vec::new();
        for kind in
            std::iter::once(SliceKind::Background).chain(identities.iter().map(|i| SliceKind::Subgroup(i.clone())))
        {
            let idx = crate::data::slice_indices(set, &kind)?;
            let (p, y): (Vec<f64>, Vec<u8>) = idx.iter().map(|&i| (set.records()[i].p, set.records()[i].y)).unzip();
            reliability
                .push(ReliabilityTable { slice: kind.name(), bins: reliability_bins(&p, &y, settings.bins)?.bins });
        }
        let tail = identities
            .iter()
            .filter_map(|id| {
                let t = tail_stats(paired, method, &baseline, id).ok()?;
                Some(TailRow {
                    identity: id.clone(),
                    n_benign: t.n_benign,
                    mean_p: t.mean_p,
                    frac_above_90: t.frac_above_90,
                    frac_above_99: t.frac_above_99,
                    mean_delta_vs_baseline: (method != &baseline).then_some(t.mean_delta_vs_baseline),
                })
            })
            .collect::<Vec<_>>();

        let fit = fit_temperature(fit_set)?;
        let scaled = apply_temperature(set, fit.t_star)?;
        let temperature = TemperatureRow {
            fit,
            ece_before: slice_ece(set, &SliceKind::Overall, settings.bins)?,
            ece_after: slice_ece(&scaled, &SliceKind::Overall, settings.bins)?,
        };

        let fit_identities: Vec<String> =
            identities.iter().filter(|id| fit_set.records().iter().any(|r| &r.identity == *id)).cloned().collect();
        let table = optimize_thresholds(fit_set, &fit_identities, DEFAULT_STEP, 1)?;
        let thresholds = table
            .entries
            .iter()
            .map(|(id, e)| {
                Ok(ThresholdRow {
                    identity: id.clone(),
                    gap_at_default: error_gap(set, id, settings.threshold)?.gap,
                    tau_star: e.tau_star,
                    gap_at_tau_star: threshold_gap(set, id, e.tau_star, table.background_tau)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let risk_coverage = risk_coverage_curve(set, &settings.coverage_grid, settings.threshold, &identities)?;

        sections.push(MethodSection {
            method: method.clone(),
            summary: Summary::default(),
            aggregate,
            ranking,
            calibration,
            reliability,
            tail,
            temperature,
            thresholds,
            risk_coverage,
        });
    }
    summarize(&mut sections);

    let differences = boot
        .iter()
        .flat_map(|b| {
            b.differences.iter().map(move |(m, base, e)| DifferenceRow {
                metric: b.metric.clone(),
                method: m.clone(),
                baseline: base.clone(),
                estimate: e.clone(),
            })
        })
        .collect();

    let base_set = paired.get(&baseline)?;
    let mut top_errors = Vec::new();
    for id in &identities {
        for e in top_confident_errors(base_set, id, settings.top_k.max(1), settings.threshold)? {
            let pos = base_set.records().iter().position(|r| r.id == e.id).expect("record came from this set");
            top_errors.push(TopErrorRow {
                identity: id.clone(),
                id: e.id,
                p: paired.iter().map(|(m, s)| (m.to_string(), s.records()[pos].p)).collect(),
                text: e.text,
            });
        }
    }

    Ok(AuditReport {
        metadata: Metadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            settings: settings.clone(),
            methods,
            baseline,
            inputs: input.digests.clone(),
            validation_inputs: input.validation_digests.clone(),
            posthoc_fit_on: posthoc_fit_on.into(),
        },
        census,
        identities,
        excluded,
        methods: sections,
        differences,
        top_errors,
        warnings,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Abstention verdict from the risk at full coverage and at `ABSTENTION_COVERAGE`.
pub fn abstention_verdict(risk_full: f64, risk_partial: f64) -> &'static str {
    if risk_partial < 0.5 * risk_full {
        "works"
    } else if risk_partial >= risk_full - 0.005 {
        "broken"
    } else {
        "partial"
    }
}

fn summarize(sections: &mut [MethodSection]) {
    let mean_bpsn: Vec<Option<f64>> =
        sections.iter().map(|s| mean(s.ranking.iter().filter_map(|r| r.bpsn_auc.as_ref().map(|e| e.point)))).collect();
    let mean_gap: Vec<Option<f64>> = sections.iter().map(|s| mean(s.calibration.iter().map(|r| r.gap.point))).collect();
    let rank_of = |values: &[Option<f64>], i: usize| -> Option<usize> {
        let v = values[i]?;
        Some(values.iter().flatten().filter(|&&o| o > v).count())
    };
    let k = sections.len();
    for i in 0..k {
        let s = &sections[i];
        let ranking = match (mean_bpsn[i], rank_of(&mean_bpsn, i)) {
            (Some(v), Some(r)) if k > 1 => {
                let label = match r {
                    0 => "best BPSN".to_string(),
                    r if r + 1 == k => "worst BPSN".to_string(),
                    r => format!("{} best BPSN", ordinal(r + 1)),
                };
                format!("{label} (mean {v:.3})")
            }
            (Some(v), _) => format!("mean BPSN {v:.3}"),
            _ => "BPSN n/a".into(),
        };

        let bg = s.aggregate.background_ece.point;
        let n = s.calibration.len();
        let sig_pos = s.calibration.iter().filter(|r| r.gap.ci_lo > 0.0).count();
        let sig_any = s.calibration.iter().filter(|r| r.gap.significant).count();
        let worst = k > 1 && rank_of(&mean_gap, i) == Some(0) && sig_pos > 0;
        let calibration = if bg > MISCALIBRATED_ECE && sig_any == 0 {
            format!("uniform miscalibration, no disparity (background ECE {bg:.3})")
        } else if sig_pos > 0 && bg < CALIBRATED_ECE {
            format!("hidden disparity ({sig_pos}/{n} gaps significant)")
        } else if worst {
            format!("worst disparity ({sig_pos}/{n} gaps significant)")
        } else if sig_any > 0 {
            format!("disparity ({sig_any}/{n} gaps significant)")
        } else {
            "no significant disparity".into()
        };

        let max99 = s.tail.iter().map(|t| t.frac_above_99).fold(0.0, f64::max);
        let tail = if max99 == 0.0 { "no p>0.99".to_string() } else { format!("<={:.1}% at p>0.99", 100.0 * max99) };

        let t = &s.temperature;
        let t_scaling = if t.ece_before < CALIBRATED_ECE {
            "not needed"
        } else if t.ece_after <= 0.5 * t.ece_before && t.ece_after < CALIBRATED_ECE {
            "fixes"
        } else {
            "cannot fix"
        }
        .to_string();

        let abstention = match abstention_points(&s.risk_coverage) {
            Some((full, partial)) => abstention_verdict(full.risk, partial.risk).to_string(),
            None => "n/a".into(),
        };
        sections[i].summary = Summary { ranking, calibration, tail, t_scaling, abstention };
    }
}

/// The full-coverage point and the grid point closest to `ABSTENTION_COVERAGE`.
pub fn abstention_points(curve: &[RiskCoveragePoint]) -> Option<(&RiskCoveragePoint, &RiskCoveragePoint)> {
    let full = curve.iter().find(|p| p.coverage == 1.0)?;
    let partial = curve
        .iter()
        .filter(|p| p.coverage < 1.0)
        .min_by(|a, b| (a.coverage - ABSTENTION_COVERAGE).abs().total_cmp(&(b.coverage - ABSTENTION_COVERAGE).abs()))?;
    Some((full, partial))
}

fn ordinal(n: usize) -> String {
    match n {
        2 => "2nd".into(),
        3 => "3rd".into(),
        n => format!("{n}th"),
    }
}

/// File-name-safe form of a slice or method name.
pub fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn est_fields(e: Option<&MetricEstimate>) -> [String; 4] {
    match e {
        Some(e) => [e.point.to_string(), e.ci_lo.to_string(), e.ci_hi.to_string(), e.significant.to_string()],
        None => Default::default(),
    }
}

fn csv_table(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

const EST: [&str; 4] = ["point", "ci_lo", "ci_hi", "significant"];

fn with_est(prefix: &[&str]) -> Vec<String> {
    prefix.iter().map(|s| s.to_string()).chain(EST.iter().map(|s| s.to_string())).collect()
}

/// CSV renderings as `(file name, contents)` pairs. Numbers are written at full precision.
pub fn render_csv(report: &AuditReport) -> Result<Vec<(String, String)>> {
    let mut files = Vec::new();
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();

    let mut rows = Vec::new();
    for s in &report.methods {
        for (name, e) in [
            ("overall_auc", &s.aggregate.overall_auc),
            ("overall_ece", &s.aggregate.overall_ece),
            ("background_ece", &s.aggregate.background_ece),
            ("overall_error", &s.aggregate.overall_error),
        ] {
            let mut r = vec![s.method.clone(), name.to_string()];
            r.extend(est_fields(Some(e)));
            rows.push(r);
        }
    }
    let header = with_est(&["method", "metric"]);
    files.push(("aggregate.csv".into(), csv_table(&header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?));

    let mut rows = Vec::new();
    for s in &report.methods {
        for r in &s.ranking {
            for (name, e) in [
                ("subgroup_auc", r.subgroup_auc.as_ref()),
                ("bpsn_auc", r.bpsn_auc.as_ref()),
                ("bnsp_auc", r.bnsp_auc.as_ref()),
                ("error_gap", Some(&r.error_gap)),
            ] {
                let mut row = vec![s.method.clone(), r.identity.clone(), r.n.to_string(), name.to_string()];
                row.extend(est_fields(e));
                rows.push(row);
            }
        }
    }
    let header = with_est(&["method", "identity", "n", "metric"]);
    files.push(("ranking.csv".into(), csv_table(&header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?));

    let mut rows = Vec::new();
    for s in &report.methods {
        for r in &s.calibration {
            let mut row = vec![s.method.clone(), r.identity.clone(), r.subgroup_ece.to_string()];
            row.extend(est_fields(Some(&r.gap)));
            rows.push(row);
        }
    }
    let header = with_est(&["method", "identity", "subgroup_ece"]);
    files.push(("calibration.csv".into(), csv_table(&header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?));

    let rows: Vec<Vec<String>> = report
        .methods
        .iter()
        .flat_map(|s| {
            s.tail.iter().map(|t| {
                vec![
                    s.method.clone(),
                    t.identity.clone(),
                    t.n_benign.to_string(),
                    t.mean_p.to_string(),
                    t.frac_above_90.to_string(),
                    t.frac_above_99.to_string(),
                    opt(t.mean_delta_vs_baseline),
                ]
            })
        })
        .collect();
    files.push((
        "tail.csv".into(),
        csv_table(
            &["method", "identity", "n_benign", "mean_p", "frac_above_90", "frac_above_99", "mean_delta"],
            &rows,
        )?,
    ));

    let rows: Vec<Vec<String>> = report
        .methods
        .iter()
        .map(|s| {
            let t = &s.temperature;
            vec![
                s.method.clone(),
                t.fit.t_star.to_string(),
                t.fit.nll_at_t.to_string(),
                t.fit.nll_at_one.to_string(),
                t.ece_before.to_string(),
                t.ece_after.to_string(),
            ]
        })
        .collect();
    files.push((
        "temperature.csv".into(),
        csv_table(&["method", "t_star", "nll_at_t", "nll_at_1", "ece_before", "ece_after"], &rows)?,
    ));

    let rows: Vec<Vec<String>> = report
        .methods
        .iter()
        .flat_map(|s| {
            s.thresholds.iter().map(|t| {
                vec![
                    s.method.clone(),
                    t.identity.clone(),
                    t.gap_at_default.to_string(),
                    t.tau_star.to_string(),
                    t.gap_at_tau_star.to_string(),
                ]
            })
        })
        .collect();
    files.push((
        "thresholds.csv".into(),
        csv_table(&["method", "identity", "gap_at_0.5", "tau_star", "gap_at_tau_star"], &rows)?,
    ));

    for s in &report.methods {
        let mut header = vec!["coverage".to_string(), "n_retained".into(), "risk".into()];
        header.extend(report.identities.iter().map(|i| format!("gap_{i}")));
        let rows: Vec<Vec<String>> = s
            .risk_coverage
            .iter()
            .map(|p| {
                let mut r = vec![p.coverage.to_string(), p.n_retained.to_string(), p.risk.to_string()];
                r.extend(report.identities.iter().map(|i| {
                    p.per_identity_gap.get(i).and_then(|g| g.gap).map_or("insufficient".into(), |g| g.to_string())
                }));
                r
            })
            .collect();
        files.push((
            format!("risk_coverage_{}.csv", sanitize(&s.method)),
            csv_table(&header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?,
        ));
        for t in &s.reliability {
            let rows: Vec<Vec<String>> = t
                .bins
                .iter()
                .map(|b| {
                    vec![b.lo.to_string(), b.hi.to_string(), b.count.to_string(), opt(b.mean_p), opt(b.frac_positive)]
                })
                .collect();
            files.push((
                format!("reliability_{}_{}.csv", sanitize(&s.method), sanitize(&t.slice)),
                csv_table(&["bin_lo", "bin_hi", "count", "mean_p", "frac_positive"], &rows)?,
            ));
        }
    }

    let rows: Vec<Vec<String>> = report
        .methods
        .iter()
        .map(|s| {
            let m = &s.summary;
            vec![
                s.method.clone(),
                m.ranking.clone(),
                m.calibration.clone(),
                m.tail.clone(),
                m.t_scaling.clone(),
                m.abstention.clone(),
            ]
        })
        .collect();
    files.push((
        "summary.csv".into(),
        csv_table(&["method", "ranking", "calibration", "tail", "t_scaling", "abstention"], &rows)?,
    ));

    if !report.differences.is_empty() {
        let rows: Vec<Vec<String>> = report
            .differences
            .iter()
            .map(|d| {
                let mut r = vec![d.metric.clone(), d.method.clone(), d.baseline.clone()];
                r.extend(est_fields(Some(&d.estimate)));
                r
            })
            .collect();
        let header = with_est(&["metric", "method", "baseline"]);
        files.push((
            "differences.csv".into(),
            csv_table(&header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?,
        ));
    }

    let mut header = vec!["identity".to_string(), "id".into()];
    header.extend(report.metadata.methods.iter().map(|m| format!("p_{m}")));
    header.push("text".into());
    let rows: Vec<Vec<String>> = report
        .top_errors
        .iter()
        .map(|e| {
            let mut r = vec![e.identity.clone(), e.id.clone()];
            r.extend(e.p.iter().map(|(_, p)| p.to_string()));
            r.push(e.text.clone().unwrap_or_default());
            r
        })
        .collect();
    files.push(("top_errors.csv".into(), csv_table(&header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?));
    Ok(files)
}

fn f3(x: f64) -> String {
    format!("{x:.3}")
}

fn signed(x: f64) -> String {
    format!("{x:+.3}")
}

fn md_est(e: Option<&MetricEstimate>, sign: bool) -> String {
    match e {
        None => "n/a".into(),
        Some(e) => {
            let f = if sign { signed } else { f3 };
            let cell = format!("{} [{}, {}]", f(e.point), f(e.ci_lo), f(e.ci_hi));
            if e.significant && sign {
                format!("**{cell}**")
            } else {
                cell
            }
        }
    }
}

fn truncate(text: &str, max: usize) -> String {
    let clean: String = text.chars().map(|c| if c == '|' || c == '\n' { ' ' } else { c }).collect();
    if clean.chars().count() <= max {
        clean
    } else {
        format!("{}...", clean.chars().take(max).collect::<String>())
    }
}

/// Markdown rendering with three decimals.
pub fn render_markdown(report: &AuditReport) -> String {
    let mut md = String::new();
    let meta = &report.metadata;
    let s = &meta.settings;
    let _ = writeln!(md, "# Fairness audit\n");
    let _ = writeln!(
        md,
        "Seed {}, {} bootstrap iterations, min n {}, {} bins, threshold {}. Post-hoc fits on the {} data. Baseline: {}.\n",
        s.seed, s.n_iterations, s.min_n, s.bins, s.threshold, meta.posthoc_fit_on, meta.baseline
    );
    let _ = writeln!(md, "| method | sha256 | records |\n|---|---|---|");
    for d in &meta.inputs {
        let _ = writeln!(md, "| {} | `{}` | {} |", d.method, d.sha256, d.n_records);
    }
    if !report.excluded.is_empty() {
        let list: Vec<String> = report.excluded.iter().map(|e| format!("{} (n={})", e.identity, e.n)).collect();
        let _ = writeln!(md, "\nExcluded below the support floor: {}.", list.join(", "));
    }

    let _ = writeln!(md, "\n## Aggregate metrics\n");
    let _ = writeln!(md, "| method | AUC | ECE | background ECE | error |\n|---|---|---|---|---|");
    for m in &report.methods {
        let a = &m.aggregate;
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} |",
            m.method,
            md_est(Some(&a.overall_auc), false),
            md_est(Some(&a.overall_ece), false),
            md_est(Some(&a.background_ece), false),
            md_est(Some(&a.overall_error), false)
        );
    }
    if !report.differences.is_empty() {
        let _ = writeln!(md, "\n## Differences from {}\n", meta.baseline);
        let _ = writeln!(md, "| metric | method | difference [95% CI] |\n|---|---|---|");
        for d in &report.differences {
            let _ = writeln!(md, "| {} | {} | {} |", d.metric, d.method, md_est(Some(&d.estimate), true));
        }
    }

    for m in &report.methods {
        let _ = writeln!(md, "\n## {}\n", m.method);
        let _ = writeln!(md, "### Ranking\n");
        let _ = writeln!(
            md,
            "| identity | n | subgroup AUC | BPSN AUC | BNSP AUC | error gap |\n|---|---|---|---|---|---|"
        );
        for r in &m.ranking {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} |",
                r.identity,
                r.n,
                md_est(r.subgroup_auc.as_ref(), false),
                md_est(r.bpsn_auc.as_ref(), false),
                md_est(r.bnsp_auc.as_ref(), false),
                md_est(Some(&r.error_gap), true)
            );
        }
        let _ = writeln!(md, "\n### Calibration gap (background ECE {})\n", f3(m.aggregate.background_ece.point));
        let _ = writeln!(md, "| identity | subgroup ECE | gap [95% CI] |\n|---|---|---|");
        for r in &m.calibration {
            let _ = writeln!(md, "| {} | {} | {} |", r.identity, f3(r.subgroup_ece), md_est(Some(&r.gap), true));
        }
        let _ = writeln!(md, "\n### Benign tail\n");
        let _ = writeln!(md, "| identity | mean p | p>0.9 | p>0.99 | mean delta |\n|---|---|---|---|---|");
        for t in &m.tail {
            let delta = t.mean_delta_vs_baseline.map_or("-".into(), signed);
            let _ = writeln!(
                md,
                "| {} | {} | {:.1}% | {:.1}% | {} |",
                t.identity,
                f3(t.mean_p),
                100.0 * t.frac_above_90,
                100.0 * t.frac_above_99,
                delta
            );
        }
        let t = &m.temperature;
        let _ = writeln!(
            md,
            "\n### Temperature scaling\n\nT* = {:.2}; ECE {} -> {}.",
            t.fit.t_star,
            f3(t.ece_before),
            f3(t.ece_after)
        );
        let _ = writeln!(md, "\n### Per-identity thresholds\n");
        let _ = writeln!(md, "| identity | gap at 0.5 | tau* | gap at tau* |\n|---|---|---|---|");
        for r in &m.thresholds {
            let _ = writeln!(
                md,
                "| {} | {} | {:.2} | {} |",
                r.identity,
                signed(r.gap_at_default),
                r.tau_star,
                signed(r.gap_at_tau_star)
            );
        }
        let _ = writeln!(md, "\n### Risk-coverage\n");
        let mut header = String::from("| coverage | risk |");
        let mut rule = String::from("|---|---|");
        for id in &report.identities {
            let _ = write!(header, " {id} |");
            rule.push_str("---|");
        }
        let _ = writeln!(md, "{header}\n{rule}");
        for p in &m.risk_coverage {
            let mut line = format!("| {:.2} | {:.2}% |", p.coverage, 100.0 * p.risk);
            for id in &report.identities {
                let cell = p.per_identity_gap.get(id).and_then(|g| g.gap).map_or("insufficient".into(), signed);
                let _ = write!(line, " {cell} |");
            }
            let _ = writeln!(md, "{line}");
        }
    }

    let _ = writeln!(md, "\n## Three-axis summary\n");
    let _ =
        writeln!(md, "| method | ranking | calibration | tail | T-scaling | abstention |\n|---|---|---|---|---|---|");
    for m in &report.methods {
        let s = &m.summary;
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} |",
            m.method, s.ranking, s.calibration, s.tail, s.t_scaling, s.abstention
        );
    }

    let _ = writeln!(md, "\n## Top confident errors ({})\n", meta.baseline);
    let with_text = report.top_errors.iter().any(|e| e.text.is_some());
    let mut header = String::from(if with_text { "| identity | id | text |" } else { "| identity | id |" });
    let mut rule = String::from(if with_text { "|---|---|---|" } else { "|---|---|" });
    for m in &meta.methods {
        let _ = write!(header, " p {m} |");
        rule.push_str("---|");
    }
    let _ = writeln!(md, "{header}\n{rule}");
    for e in &report.top_errors {
        let mut line = format!("| {} | {} |", e.identity, e.id);
        if with_text {
            let _ = write!(line, " {} |", e.text.as_deref().map_or(String::new(), |t| truncate(t, 80)));
        }
        for (_, p) in &e.p {
            let _ = write!(line, " {} |", f3(*p));
        }
        let _ = writeln!(md, "{line}");
    }
    if !report.warnings.is_empty() {
        let _ = writeln!(md, "\n## Warnings\n");
        for w in &report.warnings {
            let _ = writeln!(md, "- {w}");
        }
    }
    md
}

/// Writes `report.json`, `report.md` and a `csv/` directory under `dir`.
pub fn write_report(report: &AuditReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("csv"))?;
    fs::write(dir.join("report.json"), report.to_json()?)?;
    fs::write(dir.join("report.md"), render_markdown(report))?;
    for (name, body) in render_csv(report)? {
        fs::write(dir.join("csv").join(name), body)?;
    }
    Ok(())
}

/// Digest record for one loaded input.
pub fn digest(method: &str, bytes: &[u8], set: &PredictionSet) -> InputDigest {
    InputDigest { method: method.to_string(), sha256: sha256_hex(bytes), n_records: set.len() }
}

/// Maps each identity to its gap column, for callers that want a flat view.
pub fn gap_table(section: &MethodSection) -> BTreeMap<String, MetricEstimate> {
    section.calibration.iter().map(|r| (r.identity.clone(), r.gap.clone())).collect()
}
