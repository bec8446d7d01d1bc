use std::collections::BTreeMap;

use fairaudit_core::bootstrap::MetricEstimate;
use fairaudit_core::report::{render_csv, run_audit, write_report, AuditInput, AuditReport, AuditSettings};
use fairaudit_core::synth::{profile_set, Profile};
use fairaudit_core::{Error, PairedPredictions, PredictionRecord, PredictionSet, BACKGROUND};

fn settings(iterations: usize) -> AuditSettings {
    AuditSettings { n_iterations: iterations, ..AuditSettings::default() }
}

fn three_profiles(seed: u64) -> PairedPredictions {
    PairedPredictions::new(vec![
        ("erm".into(), profile_set(Profile::Erm, seed)),
        ("reweighted".into(), profile_set(Profile::Reweighted, seed)),
        ("dro".into(), profile_set(Profile::Dro, seed)),
    ])
    .unwrap()
}

/// `(point, ci_lo, ci_hi)` keyed by every column before them, read back from a rendered CSV.
fn csv_estimates(text: &str) -> BTreeMap<Vec<String>, (f64, f64, f64)> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().unwrap().clone();
    let at = header.iter().position(|h| h == "point").unwrap();
    let mut out = BTreeMap::new();
    for row in reader.records() {
        let row = row.unwrap();
        if row[at].is_empty() {
            continue;
        }
        let key: Vec<String> = row.iter().take(at).map(str::to_string).collect();
        let num = |i: usize| row[i].parse::<f64>().unwrap();
        out.insert(key, (num(at), num(at + 1), num(at + 2)));
    }
    out
}

fn triple(e: &MetricEstimate) -> (f64, f64, f64) {
    (e.point, e.ci_lo, e.ci_hi)
}

#[test]
fn csv_estimates_match_json_exactly() {
    let report = run_audit(&AuditInput::new(three_profiles(42)), &settings(60)).unwrap();
    let back = AuditReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
    let files: BTreeMap<String, String> = render_csv(&report).unwrap().into_iter().collect();

    let ranking = csv_estimates(&files["ranking.csv"]);
    let calibration = csv_estimates(&files["calibration.csv"]);
    let aggregate = csv_estimates(&files["aggregate.csv"]);
    let mut checked = 0;
    for s in &report.methods {
        let m = s.method.clone();
        assert_eq!(aggregate[&vec![m.clone(), "overall_auc".into()]], triple(&s.aggregate.overall_auc));
        assert_eq!(aggregate[&vec![m.clone(), "background_ece".into()]], triple(&s.aggregate.background_ece));
        for r in &s.ranking {
            let key = |name: &str| vec![m.clone(), r.identity.clone(), r.n.to_string(), name.to_string()];
            assert_eq!(ranking[&key("error_gap")], triple(&r.error_gap));
            match &r.bpsn_auc {
                Some(e) => assert_eq!(ranking[&key("bpsn_auc")], triple(e)),
                None => assert!(!ranking.contains_key(&key("bpsn_auc"))),
            }
            checked += 1;
        }
        for c in &s.calibration {
            let key = vec![m.clone(), c.identity.clone(), c.subgroup_ece.to_string()];
            assert_eq!(calibration[&key], triple(&c.gap));
        }
    }
    assert_eq!(checked, 24);

    let differences = csv_estimates(&files["differences.csv"]);
    assert_eq!(differences.len(), report.differences.len());
    for d in &report.differences {
        let key = vec![d.metric.clone(), d.method.clone(), d.baseline.clone()];
        assert_eq!(differences[&key], triple(&d.estimate));
    }
    // Every non-baseline method is compared with the baseline on overall AUC.
    for m in ["reweighted", "dro"] {
        assert!(report.differences.iter().any(|d| d.metric == "auc[overall]" && d.method == m && d.baseline == "erm"));
    }
}

#[test]
fn single_method_reports_no_differences() {
    let report =
        run_audit(&AuditInput::new(PairedPredictions::single(profile_set(Profile::Dro, 1))), &settings(30)).unwrap();
    assert!(report.differences.is_empty());
    assert_eq!(report.metadata.baseline, "dro");
    assert!(report.methods[0].tail.iter().all(|t| t.mean_delta_vs_baseline.is_none()));
    assert!(!render_csv(&report).unwrap().iter().any(|(name, _)| name == "differences.csv"));
}

#[test]
fn validation_inputs_drive_the_post_hoc_fit() {
    let mut input = AuditInput::new(three_profiles(42));
    let in_sample = run_audit(&input, &settings(20)).unwrap();
    assert_eq!(in_sample.metadata.posthoc_fit_on, "evaluation");
    assert!(!in_sample.warnings.is_empty());

    input.validation = Some(three_profiles(1042));
    let held_out = run_audit(&input, &settings(20)).unwrap();
    assert_eq!(held_out.metadata.posthoc_fit_on, "validation");
    // Resampled metrics do not depend on where post-hoc fits come from.
    assert_eq!(held_out.methods[0].ranking, in_sample.methods[0].ranking);
    assert_ne!(held_out.methods[2].temperature.fit, in_sample.methods[2].temperature.fit);

    let dir = tempfile::tempdir().unwrap();
    write_report(&held_out, dir.path()).unwrap();
    for name in ["report.json", "report.md", "csv/summary.csv", "csv/risk_coverage_dro.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn audits_without_a_qualifying_identity_fail() {
    let recs = (0..300)
        .map(|i| {
            let identity = if i < 280 { BACKGROUND } else { "rare" };
            PredictionRecord::new(format!("{i}"), 0.3 + 0.001 * i as f64, u8::from(i % 3 == 0), identity).unwrap()
        })
        .collect();
    let set = PredictionSet::new("m", recs).unwrap();
    let err = run_audit(&AuditInput::new(PairedPredictions::single(set)), &settings(20)).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(ref m) if m.contains("no identity")), "{err}");
}
