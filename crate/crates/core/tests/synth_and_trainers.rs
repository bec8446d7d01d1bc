use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use fairaudit_core::calibration::slice_ece;
use fairaudit_core::prob::logit;
use fairaudit_core::synth::{
    generate, generate_training_data, profile_set, GroupSpec, Profile, ScenarioSpec, ScoreModel, SliceSpec,
    TrainingData,
};
use fairaudit_core::tail::tail_stats;
use fairaudit_core::trainers::{
    dro_update, error_summary, example_weights, group_errors, predictions, train, weight_ratios, GroupWeightState,
    LinearModel, Method, TrainConfig,
};
use fairaudit_core::{census, PairedPredictions, SliceKind, BACKGROUND};

/// Bayes error of each `(identity, y)` group for the trainer generative model.
///
/// Given `y`, the core log-likelihood ratio is `N(+-D^2/2, D^2)` with `D` the
/// class separation; the spurious feature only informs the prior odds through
/// identity membership, so each group error is a one-dimensional integral over it.
fn bayes_group_errors(spec: &GroupSpec) -> [f64; 4] {
    let std = Normal::new(0.0, 1.0).unwrap();
    let d = spec.separation;
    let prior = [
        ((1.0 - spec.identity_frac) * spec.background_rate, (1.0 - spec.identity_frac) * (1.0 - spec.background_rate)),
        (spec.identity_frac * spec.identity_rate, spec.identity_frac * (1.0 - spec.identity_rate)),
    ];
    let density = |s: f64, ident: usize| {
        let mu = if ident == 1 { spec.spurious_shift } else { 0.0 };
        std.pdf((s - mu) / spec.spurious_sd) / spec.spurious_sd
    };
    let prior_log_odds = |s: f64| {
        let pos = prior[0].0 * density(s, 0) + prior[1].0 * density(s, 1);
        let neg = prior[0].1 * density(s, 0) + prior[1].1 * density(s, 1);
        (pos / neg).ln()
    };
    let mut out = [0.0; 4];
    for (ident, mu) in [(0usize, 0.0), (1, spec.spurious_shift)] {
        let (lo, hi, h) = (mu - 9.0 * spec.spurious_sd, mu + 9.0 * spec.spurious_sd, 1e-3);
        let steps = ((hi - lo) / h) as usize;
        let (mut e1, mut e0) = (0.0, 0.0);
        for k in 0..=steps {
            let s = lo + k as f64 * h;
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 } * h * density(s, ident);
            let l = prior_log_odds(s);
            e1 += w * std.cdf((-l - d * d / 2.0) / d);
            e0 += w * std.cdf((l - d * d / 2.0) / d);
        }
        out[2 * ident] = e0;
        out[2 * ident + 1] = e1;
    }
    out
}

fn group_shares(spec: &GroupSpec) -> [f64; 4] {
    let f = spec.identity_frac;
    [
        (1.0 - f) * (1.0 - spec.background_rate),
        (1.0 - f) * spec.background_rate,
        f * (1.0 - spec.identity_rate),
        f * spec.identity_rate,
    ]
}

#[test]
fn strong_spurious_signal_separates_worst_and_average_error() {
    let spec = GroupSpec::default();
    let bayes = bayes_group_errors(&spec);
    let shares = group_shares(&spec);
    let bayes_avg: f64 = bayes.iter().zip(&shares).map(|(e, s)| e * s).sum();
    let bayes_worst = bayes.iter().copied().fold(0.0, f64::max);
    assert!(bayes_worst > 3.0 * bayes_avg, "oracle {bayes:?}, average {bayes_avg}");

    let train_data = generate_training_data(42, 20_000, 5, &spec).unwrap();
    let test_data = generate_training_data(43, 20_000, 5, &spec).unwrap();
    let erm = train(&train_data, &TrainConfig::default()).unwrap();
    let s = error_summary(&erm.model, &test_data).unwrap();
    let groups = group_errors(&erm.model, &test_data, 0.5).unwrap();
    // No classifier beats the Bayes rate beyond sampling noise (sd about 0.0017 at n = 20000),
    // and a well-specified logistic fit should land close to it.
    assert!(s.average >= bayes_avg - 0.005, "erm {} vs bayes {bayes_avg}", s.average);
    assert!(s.average <= bayes_avg + 0.01, "erm {} vs bayes {bayes_avg}", s.average);
    assert!(s.worst_group > 3.0 * s.average);
    let argmax = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    let erm_groups: Vec<f64> = groups.iter().map(|g| g.unwrap()).collect();
    assert_eq!(argmax(&erm_groups), argmax(&bayes));
}

#[test]
fn balanced_groups_without_spurious_signal_train_alike() {
    let spec = GroupSpec::balanced();
    let train_data = generate_training_data(7, 8_000, 4, &spec).unwrap();
    let test_data = generate_training_data(8, 8_000, 4, &spec).unwrap();
    let worst: Vec<f64> = Method::ALL
        .iter()
        .map(|&m| {
            let out = train(&train_data, &TrainConfig::default().with_method(m)).unwrap();
            error_summary(&out.model, &test_data).unwrap().worst_group
        })
        .collect();
    let spread = worst.iter().copied().fold(f64::MIN, f64::max) - worst.iter().copied().fold(f64::MAX, f64::min);
    assert!(spread <= 0.02, "{worst:?}");
}

#[test]
fn equal_group_sizes_make_reweighting_a_no_op() {
    let train_data = generate_training_data(3, 4_000, 3, &GroupSpec::balanced()).unwrap();
    let counts = (0..4).map(|g| (g, (0..train_data.len()).filter(|&i| train_data.group(i) == g).count())).collect();
    assert!(example_weights(&counts, 50.0).unwrap().values().all(|&w| w == 1.0));
    let erm = train(&train_data, &TrainConfig::default()).unwrap();
    let rw = train(&train_data, &TrainConfig::default().with_method(Method::Reweighted)).unwrap();
    assert_eq!(erm.model, rw.model);
}

#[test]
fn separable_points_are_fit_by_every_method() {
    let data =
        TrainingData { d: 2, features: vec![-1.0, 0.0, 1.0, 0.0], labels: vec![0, 1], is_identity: vec![false, true] };
    for m in Method::ALL {
        let cfg = TrainConfig { epochs: 200, batch_size: 2, lr0: 1.0, ..TrainConfig::default().with_method(m) };
        let out = train(&data, &cfg).unwrap();
        assert_eq!(error_summary(&out.model, &data).unwrap().average, 0.0, "{m:?}");
    }
}

#[test]
fn prediction_shapes_are_checked() {
    let zero = LinearModel::zeros(3);
    assert_eq!(zero.predict(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(), vec![0.5, 0.5]);
    assert!(zero.predict(&[1.0, 2.0]).is_err());
    assert!(generate_training_data(1, 0, 3, &GroupSpec::default()).is_err());
    let data = generate_training_data(1, 100, 3, &GroupSpec::default()).unwrap();
    let set = predictions(&zero, &data, "zero").unwrap();
    assert_eq!(set.len(), 100);
    assert!(set.records().iter().all(|r| r.p == 0.5));
}

#[test]
fn calibrated_slices_have_small_ece_and_planted_rates() {
    let spec =
        ScenarioSpec { seed: 42, slices: vec![SliceSpec::new(BACKGROUND, 20_000, 0.08, ScoreModel::calibrated())] };
    let set = generate(&spec, "c").unwrap();
    assert!(slice_ece(&set, &SliceKind::Overall, 15).unwrap() < 0.01);
    let c = census(&set).unwrap().totals();
    let sd = (0.08f64 * 0.92 / 20_000.0).sqrt();
    assert!((c.positive as f64 / 20_000.0 - 0.08).abs() <= 3.0 * sd);
}

#[test]
fn planted_tail_fraction_is_recovered() {
    let slices = |score| {
        vec![SliceSpec::new(BACKGROUND, 1_000, 0.1, ScoreModel::calibrated()), SliceSpec::new("g", 20_000, 0.25, score)]
    };
    let base = generate(&ScenarioSpec { seed: 4, slices: slices(ScoreModel::calibrated()) }, "base").unwrap();
    let tail =
        generate(&ScenarioSpec { seed: 4, slices: slices(ScoreModel::bimodal_tail(0.04, 0.99)) }, "tail").unwrap();
    let paired = PairedPredictions::new(vec![("tail".into(), tail), ("base".into(), base)]).unwrap();
    let t = tail_stats(&paired, "tail", "base", "g").unwrap();
    let b = tail_stats(&paired, "base", "base", "g").unwrap();
    let planted = t.frac_above_99 - b.frac_above_99;
    let sd = (0.04f64 * 0.96 / t.n_benign as f64).sqrt();
    assert!((planted - 0.04).abs() <= 3.0 * sd, "recovered {planted}");
    assert!(t.mean_delta_vs_baseline > 0.0);
}

#[test]
fn logit_shift_is_planted_exactly() {
    let slices = |score| vec![SliceSpec::new(BACKGROUND, 5_000, 0.2, score)];
    let cal = generate(&ScenarioSpec { seed: 9, slices: slices(ScoreModel::calibrated()) }, "a").unwrap();
    let shifted =
        generate(&ScenarioSpec { seed: 9, slices: slices(ScoreModel::uniform_miscalibrated(1.5)) }, "b").unwrap();
    for (a, b) in cal.records().iter().zip(shifted.records()) {
        assert_eq!((&a.id, a.y), (&b.id, b.y));
        let delta = logit(b.p) - logit(a.p);
        // Logits beyond the probability clip cannot carry the full shift.
        if b.p < 1.0 - 1e-6 && a.p > 1e-6 {
            assert!((delta - 1.5).abs() < 1e-6, "{delta}");
        }
    }
}

#[test]
fn profiles_pair_and_follow_their_shapes() {
    let erm = profile_set(Profile::Erm, 42);
    let dro = profile_set(Profile::Dro, 42);
    assert_eq!(erm.len(), 18_217 + 276 + 247 + 129 + 146 + 83 + 474 + 566 + 506);
    assert!(slice_ece(&erm, &SliceKind::Background, 15).unwrap() < 0.02);
    assert!(slice_ece(&dro, &SliceKind::Background, 15).unwrap() > 0.08);
    let c = census(&erm).unwrap();
    assert_eq!(c.get("jewish").unwrap().total, 83);
}

#[test]
fn group_weights_follow_inverse_frequency_with_clip() {
    // N = 1000 over G = 2: a group of 10 sits exactly at the clip, a group of 1 is clipped.
    let counts = [(0, 990), (1, 10)].into_iter().collect();
    let w = example_weights(&counts, 50.0).unwrap();
    assert_eq!(w[&1], 50.0);
    assert_eq!(w[&0], 1000.0 / 1980.0);
    let counts = [(0, 999), (1, 1)].into_iter().collect();
    assert_eq!(weight_ratios(&counts).unwrap()[&1], (1000, 2));
    assert_eq!(example_weights(&counts, 50.0).unwrap()[&1], 50.0);
    assert!(example_weights(&[(0, 0)].into_iter().collect(), 50.0).is_err());
}

#[test]
fn dro_update_matches_closed_form() {
    let state = GroupWeightState::uniform(2, 0.001);
    let next = dro_update(&state, &[Some(1.0), Some(0.0)]).unwrap();
    // q_0 = e^eta / (e^eta + 1).
    let e = 0.001f64.exp();
    assert!((next.q[0] - e / (e + 1.0)).abs() < 1e-15);
    assert!((next.q[0] - 0.50025).abs() < 1e-7 && (next.q[1] - 0.49975).abs() < 1e-7);
    // Absent groups keep their unnormalized mass.
    let same = dro_update(&state, &[None, None]).unwrap();
    assert_eq!(same.q, state.q);
    assert!(dro_update(&state, &[Some(1.0)]).is_err());
}
