use proptest::prelude::*;

use fairaudit_core::data::{make_slices, slice_indices};
use fairaudit_core::{
    census, read_predictions, write_predictions, Error, Format, LoadOptions, PairedPredictions, PredictionRecord,
    PredictionSet, SliceKind, BACKGROUND,
};

fn records() -> impl Strategy<Value = Vec<PredictionRecord>> {
    let identity = prop::sample::select(vec!["white", "gay/lesbian", "muslim", BACKGROUND]);
    let text = prop::option::of("[a-z ,\"\n|]{0,20}");
    prop::collection::vec((0.0f64..=1.0, any::<bool>(), identity, text), 1..60).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (p, y, g, t))| {
                let r = PredictionRecord::new(format!("id-{i}"), p, u8::from(y), g).unwrap();
                match t {
                    Some(t) if !t.is_empty() => r.with_text(t),
                    _ => r,
                }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_and_jsonl_round_trip(recs in records()) {
        let set = PredictionSet::new("m", recs).unwrap();
        for format in [Format::Csv, Format::Jsonl] {
            let mut buf = Vec::new();
            write_predictions(&set, &mut buf, format).unwrap();
            let back = read_predictions(buf.as_slice(), format, "m", &LoadOptions::default()).unwrap();
            prop_assert_eq!(&back, &set);
        }
    }

    #[test]
    fn census_totals_match_record_count(recs in records()) {
        let set = PredictionSet::new("m", recs).unwrap();
        let c = census(&set).unwrap();
        let t = c.totals();
        prop_assert_eq!(t.total, set.len());
        prop_assert_eq!(t.positive + t.negative, t.total);
    }
}

#[test]
fn logits_and_soft_labels_are_accepted() {
    let jsonl = r#"{"id":"a","logit":0.0,"y":0.8,"identity":"white"}
{"id":"b","p":0.2,"y":0.3}
"#;
    let opts = LoadOptions { label_threshold: Some(0.5) };
    let set = read_predictions(jsonl.as_bytes(), Format::Jsonl, "m", &opts).unwrap();
    assert_eq!(set.records()[0].p, 0.5);
    assert_eq!(set.records()[0].y, 1);
    assert_eq!(set.records()[1].y, 0);
    assert_eq!(set.records()[1].identity, BACKGROUND);
    // Without a threshold soft labels are malformed.
    let err = read_predictions(jsonl.as_bytes(), Format::Jsonl, "m", &LoadOptions::default()).unwrap_err();
    assert!(matches!(err, Error::MalformedRow { line: 1, .. }));
}

#[test]
fn bad_rows_report_their_line() {
    let csv = "id,p,y,identity\na,0.5,1,white\nb,1.5,0,white\n";
    let err = read_predictions(csv.as_bytes(), Format::Csv, "m", &LoadOptions::default()).unwrap_err();
    assert!(matches!(err, Error::ProbabilityOutOfRange { .. }), "{err}");
    let csv = "id,p,y\na,0.5,1\na,0.4,0\n";
    let err = read_predictions(csv.as_bytes(), Format::Csv, "m", &LoadOptions::default()).unwrap_err();
    assert!(matches!(err, Error::DuplicateId(_)));
    let err = read_predictions("id,p,y\n".as_bytes(), Format::Csv, "m", &LoadOptions::default()).unwrap_err();
    assert!(matches!(err, Error::EmptyInput));
}

#[test]
fn pairing_reports_first_mismatch() {
    let mk = |ids: &[&str], name: &str| {
        let recs = ids.iter().map(|id| PredictionRecord::new(*id, 0.5, 0, BACKGROUND).unwrap()).collect();
        PredictionSet::new(name, recs).unwrap()
    };
    let err =
        PairedPredictions::new(vec![("a".into(), mk(&["1", "2", "3"], "a")), ("b".into(), mk(&["1", "x", "3"], "b"))])
            .unwrap_err();
    match err {
        Error::PairingMismatch { position, id, .. } => {
            assert_eq!(position, 1);
            assert_eq!(id, "x");
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn small_identities_are_excluded_and_bnsp_needs_positives() {
    let mut recs = Vec::new();
    for i in 0..400 {
        let (identity, y) = match i {
            0..=199 => (BACKGROUND, u8::from(i % 2 == 0)),
            200..=339 => ("big", u8::from(i % 4 == 0)),
            _ => ("tiny", 1),
        };
        recs.push(PredictionRecord::new(i.to_string(), 0.5, y, identity).unwrap());
    }
    let set = PredictionSet::new("m", recs).unwrap();
    let names: Vec<String> = make_slices(&set, 100).iter().map(|s| s.name()).collect();
    assert!(names.contains(&"big".to_string()));
    assert!(names.contains(&"bpsn(big)".to_string()));
    assert!(!names.iter().any(|n| n.contains("tiny")));
    // "big" has 35 positives, under the BNSP floor.
    assert!(!names.contains(&"bnsp(big)".to_string()));
    assert!(matches!(slice_indices(&set, &SliceKind::Bnsp("big".into())), Err(Error::NotReported(_))));
}
