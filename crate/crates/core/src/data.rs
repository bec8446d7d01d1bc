//! Prediction records, ingestion, group census and evaluation slices.
//!
//! A prediction file carries one scored example per row: `id`, a positive-class
//! probability `p` (or a raw `logit`), a binary label `y`, and an optional
//! `identity` tag. Rows without an identity belong to the reserved
//! [`BACKGROUND`] group. An optional `text` column is carried through untouched
//! for the qualitative report.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::sigmoid;

/// Identity tag for records that mention no identity group.
pub const BACKGROUND: &str = "background";

/// Default per-identity support floor.
pub const DEFAULT_MIN_N: usize = 50;

/// BNSP needs this many subgroup positives before it is reported.
pub const BNSP_MIN_POSITIVES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub p: f64,
    pub y: u8,
    pub identity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, p: f64, y: u8, identity: impl Into<String>) -> Result<Self> {
        let record = Self { id: id.into(), p, y, identity: identity.into(), text: None };
        record.validate()?;
        Ok(record)
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn is_positive(&self) -> bool {
        self.y == 1
    }

    pub fn is_background(&self) -> bool {
        self.identity == BACKGROUND
    }

    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::InvalidArgument("record id must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::ProbabilityOutOfRange { id: self.id.clone(), p: self.p });
        }
        if self.y > 1 {
            return Err(Error::InvalidArgument(format!("record {:?}: label {} is not binary", self.id, self.y)));
        }
        if self.identity.is_empty() {
            return Err(Error::InvalidArgument(format!("record {:?}: empty identity tag", self.id)));
        }
        Ok(())
    }
}

/// An ordered, validated collection of predictions from one model.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    name: String,
    records: Vec<PredictionRecord>,
}

impl PredictionSet {
    pub fn new(name: impl Into<String>, records: Vec<PredictionRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            r.validate()?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self { name: name.into(), records })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// A copy of this set with every probability replaced, in record order.
    pub fn with_probabilities(&self, name: impl Into<String>, p: &[f64]) -> Result<Self> {
        if p.len() != self.records.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} probabilities, got {}",
                self.records.len(),
                p.len()
            )));
        }
        let records = self.records.iter().zip(p).map(|(r, &p)| PredictionRecord { p, ..r.clone() }).collect();
        Self::new(name, records)
    }

    /// Positions of the records carrying `identity`, in record order.
    pub fn identity_indices(&self, identity: &str) -> Vec<usize> {
        self.records.iter().enumerate().filter(|(_, r)| r.identity == identity).map(|(i, _)| i).collect()
    }

    pub fn has_text(&self) -> bool {
        self.records.iter().any(|r| r.text.is_some())
    }
}

/// Label binarization for soft annotations; a score exactly at the threshold is positive.
pub fn binarize(raw_score: f64, threshold: f64) -> u8 {
    u8::from(raw_score >= threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// Infers the format from a file extension (`.csv`, `.jsonl`, `.json`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(Format::Csv),
            "jsonl" | "ndjson" | "json" => Some(Format::Jsonl),
            _ => None,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// When set, labels may be soft scores in [0, 1] and are binarized at this threshold.
    pub label_threshold: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct RawRow {
    id: String,
    #[serde(default)]
    p: Option<f64>,
    #[serde(default)]
    logit: Option<f64>,
    y: f64,
    #[serde(default)]
    identity: Option<String>,
    #[serde(default)]
    text: Option<String>,
}

impl RawRow {
    fn into_record(self, line: u64, options: &LoadOptions) -> Result<PredictionRecord> {
        let malformed = |message: String| Error::MalformedRow { line, message };
        let p = match (self.p, self.logit) {
            (Some(p), _) => p,
            (None, Some(z)) => sigmoid(z),
            (None, None) => return Err(malformed("missing both p and logit".into())),
        };
        if !p.is_finite() {
            return Err(malformed(format!("non-finite probability {p}")));
        }
        let y = match options.label_threshold {
            Some(t) if (0.0..=1.0).contains(&self.y) => binarize(self.y, t),
            _ if self.y == 0.0 => 0,
            _ if self.y == 1.0 => 1,
            _ => return Err(malformed(format!("label {} is not 0 or 1", self.y))),
        };
        let identity = match self.identity {
            Some(s) if !s.trim().is_empty() => s,
            _ => BACKGROUND.to_string(),
        };
        if self.id.is_empty() {
            return Err(malformed("empty id".into()));
        }
        Ok(PredictionRecord { id: self.id, p, y, identity, text: self.text.filter(|t| !t.is_empty()) })
    }
}

/// Loads a prediction file; the set is named after the file stem.
pub fn load_predictions(path: impl AsRef<Path>, format: Format) -> Result<PredictionSet> {
    let path = path.as_ref();
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("predictions").to_string();
    let file = File::open(path)?;
    read_predictions(file, format, name, &LoadOptions::default())
}

pub fn read_predictions<R: Read>(
    reader: R,
    format: Format,
    name: impl Into<String>,
    options: &LoadOptions,
) -> Result<PredictionSet> {
    let records = match format {
        Format::Csv => read_csv(reader, options)?,
        Format::Jsonl => read_jsonl(reader, options)?,
    };
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    PredictionSet::new(name, records)
}

fn read_csv<R: Read>(reader: R, options: &LoadOptions) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for required in ["id", "y"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::MalformedRow { line: 1, message: format!("missing required column {required:?}") });
        }
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let raw: RawRow =
            row.deserialize(Some(&headers)).map_err(|e| Error::MalformedRow { line, message: e.to_string() })?;
        out.push(raw.into_record(line, options)?);
    }
    Ok(out)
}

fn read_jsonl<R: Read>(reader: R, options: &LoadOptions) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line_no = i as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRow =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRow { line: line_no, message: e.to_string() })?;
        out.push(raw.into_record(line_no, options)?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    id: &'a str,
    p: f64,
    y: u8,
    identity: &'a str,
    text: Option<&'a str>,
}

pub fn write_predictions<W: Write>(set: &PredictionSet, writer: W, format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let mut wtr = csv::Writer::from_writer(writer);
            let with_text = set.has_text();
            if !with_text {
                wtr.write_record(["id", "p", "y", "identity"])?;
            }
            for r in set.records() {
                if with_text {
                    wtr.serialize(CsvRow {
                        id: &r.id,
                        p: r.p,
                        y: r.y,
                        identity: &r.identity,
                        text: r.text.as_deref(),
                    })?;
                } else {
                    wtr.write_record([r.id.as_str(), &r.p.to_string(), &r.y.to_string(), &r.identity])?;
                }
            }
            wtr.flush()?;
        }
        Format::Jsonl => {
            let mut w = std::io::BufWriter::new(writer);
            for r in set.records() {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Several models' predictions over the same examples, in insertion order.
///
/// Every member carries identical `(id, y, identity)` triples in identical
/// order; only `p` differs. This is what lets one bootstrap index vector be
/// applied to every method.
#[derive(Debug, Clone)]
pub struct PairedPredictions {
    sets: Vec<(String, PredictionSet)>,
}

impl PairedPredictions {
    pub fn new(sets: Vec<(String, PredictionSet)>) -> Result<Self> {
        let Some((ref_name, reference)) = sets.first() else {
            return Err(Error::EmptyInput);
        };
        let mut names = HashSet::new();
        for (name, set) in &sets {
            if !names.insert(name.as_str()) {
                return Err(Error::InvalidArgument(format!("method {name:?} given twice")));
            }
            if set.len() != reference.len() {
                let position = set.len().min(reference.len());
                let id = reference
                    .records()
                    .get(position)
                    .or_else(|| set.records().get(position))
                    .map(|r| r.id.clone())
                    .unwrap_or_default();
                return Err(Error::PairingMismatch { method: name.clone(), reference: ref_name.clone(), position, id });
            }
            for (position, (a, b)) in reference.records().iter().zip(set.records()).enumerate() {
                if a.id != b.id || a.y != b.y || a.identity != b.identity {
                    return Err(Error::PairingMismatch {
                        method: name.clone(),
                        reference: ref_name.clone(),
                        position,
                        id: b.id.clone(),
                    });
                }
            }
        }
        Ok(Self { sets })
    }

    pub fn single(set: PredictionSet) -> Self {
        let name = set.name().to_string();
        Self { sets: vec![(name, set)] }
    }

    pub fn methods(&self) -> impl Iterator<Item = &str> {
        self.sets.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &PredictionSet)> {
        self.sets.iter().map(|(n, s)| (n.as_str(), s))
    }

    pub fn get(&self, method: &str) -> Result<&PredictionSet> {
        self.sets
            .iter()
            .find(|(n, _)| n == method)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::UnknownMethod(method.to_string()))
    }

    /// The first set; all members share its ids, labels and identities.
    pub fn reference(&self) -> &PredictionSet {
        &self.sets[0].1
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCount {
    pub total: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCensus {
    pub counts: BTreeMap<String, GroupCount>,
}

impl GroupCensus {
    pub fn get(&self, identity: &str) -> Option<GroupCount> {
        self.counts.get(identity).copied()
    }

    pub fn totals(&self) -> GroupCount {
        self.counts.values().fold(GroupCount::default(), |acc, c| GroupCount {
            total: acc.total + c.total,
            positive: acc.positive + c.positive,
            negative: acc.negative + c.negative,
        })
    }

    /// Non-background identities with at least `min_n` records, in sorted order.
    pub fn qualifying(&self, min_n: usize) -> Vec<String> {
        self.counts
            .iter()
            .filter(|(id, c)| id.as_str() != BACKGROUND && c.total >= min_n)
            .map(|(id, _)| id.clone())
            .collect()
    }
}

pub fn census(set: &PredictionSet) -> Result<GroupCensus> {
    if set.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts: BTreeMap<String, GroupCount> = BTreeMap::new();
    for r in set.records() {
        let c = counts.entry(r.identity.clone()).or_default();
        c.total += 1;
        if r.is_positive() {
            c.positive += 1;
        } else {
            c.negative += 1;
        }
    }
    Ok(GroupCensus { counts })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "identity", rename_all = "lowercase")]
pub enum SliceKind {
    /// Every record in the set.
    Overall,
    Background,
    Subgroup(String),
    /// Background positives plus subgroup negatives.
    Bpsn(String),
    /// Background negatives plus subgroup positives.
    Bnsp(String),
}

impl SliceKind {
    pub fn name(&self) -> String {
        match self {
            SliceKind::Overall => "overall".to_string(),
            SliceKind::Background => BACKGROUND.to_string(),
            SliceKind::Subgroup(id) => id.clone(),
            SliceKind::Bpsn(id) => format!("bpsn({id})"),
            SliceKind::Bnsp(id) => format!("bnsp({id})"),
        }
    }
}

/// A named subset of a prediction set: strictly increasing record positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSlice {
    pub kind: SliceKind,
    pub indices: Vec<usize>,
}

impl EvalSlice {
    pub fn name(&self) -> String {
        self.kind.name()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Builds the background slice and, for each identity with at least `min_n`
/// records, its subgroup, BPSN and (with enough positives) BNSP slices.
pub fn make_slices(set: &PredictionSet, min_n: usize) -> Vec<EvalSlice> {
    let min_n = min_n.max(1);
    let mut by_identity: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in set.records().iter().enumerate() {
        by_identity.entry(r.identity.as_str()).or_default().push(i);
    }
    let background = by_identity.remove(BACKGROUND).unwrap_or_default();
    let records = set.records();
    let mut slices = vec![EvalSlice { kind: SliceKind::Background, indices: background.clone() }];
    for (identity, indices) in by_identity {
        if indices.len() < min_n {
            log::info!("excluding identity {identity:?}: {} records below floor {min_n}", indices.len());
            continue;
        }
        let positives = indices.iter().filter(|&&i| records[i].is_positive()).count();
        let merge = |bg_positive: bool| {
            let mut merged: Vec<usize> = background
                .iter()
                .copied()
                .filter(|&i| records[i].is_positive() == bg_positive)
                .chain(indices.iter().copied().filter(|&i| records[i].is_positive() != bg_positive))
                .collect();
            merged.sort_unstable();
            merged
        };
        slices.push(EvalSlice { kind: SliceKind::Bpsn(identity.to_string()), indices: merge(true) });
        if positives >= BNSP_MIN_POSITIVES {
            slices.push(EvalSlice { kind: SliceKind::Bnsp(identity.to_string()), indices: merge(false) });
        } else {
            log::info!("suppressing bnsp({identity}): {positives} positives");
        }
        slices.push(EvalSlice { kind: SliceKind::Subgroup(identity.to_string()), indices });
    }
    slices.sort_by(|a, b| slice_order(&a.kind).cmp(&slice_order(&b.kind)));
    slices
}

/// Resolves a slice on `set` without a support floor.
///
/// Fails with `NotReported` for a BNSP slice whose identity has fewer than
/// [`BNSP_MIN_POSITIVES`] positives, and with `EmptySlice` when nothing matches.
pub fn slice_indices(set: &PredictionSet, kind: &SliceKind) -> Result<Vec<usize>> {
    let records = set.records();
    let pick = |f: &dyn Fn(&PredictionRecord) -> bool| -> Vec<usize> {
        records.iter().enumerate().filter(|(_, r)| f(r)).map(|(i, _)| i).collect()
    };
    let indices = match kind {
        SliceKind::Overall => (0..records.len()).collect(),
        SliceKind::Background => pick(&|r| r.is_background()),
        SliceKind::Subgroup(id) => pick(&|r| &r.identity == id),
        SliceKind::Bpsn(id) => {
            pick(&|r| (r.is_background() && r.is_positive()) || (&r.identity == id && !r.is_positive()))
        }
        SliceKind::Bnsp(id) => {
            let positives = records.iter().filter(|r| &r.identity == id && r.is_positive()).count();
            if positives < BNSP_MIN_POSITIVES {
                return Err(Error::NotReported(kind.name()));
            }
            pick(&|r| (r.is_background() && !r.is_positive()) || (&r.identity == id && r.is_positive()))
        }
    };
    if indices.is_empty() {
        return Err(Error::EmptySlice(kind.name()));
    }
    Ok(indices)
}

fn slice_order(kind: &SliceKind) -> (u8, &str, u8) {
    match kind {
        SliceKind::Overall => (0, "", 0),
        SliceKind::Background => (0, "", 1),
        SliceKind::Subgroup(id) => (1, id, 0),
        SliceKind::Bpsn(id) => (1, id, 1),
        SliceKind::Bnsp(id) => (1, id, 2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, p: f64, y: u8, identity: &str) -> PredictionRecord {
        PredictionRecord::new(id, p, y, identity).unwrap()
    }

    fn load_str(s: &str, format: Format) -> Result<PredictionSet> {
        read_predictions(s.as_bytes(), format, "t", &LoadOptions::default())
    }

    #[test]
    fn csv_row_parses_identity() {
        let set = load_str("id,p,y,identity\na,0.3,0,muslim\n", Format::Csv).unwrap();
        assert_eq!(set.records()[0], rec("a", 0.3, 0, "muslim"));
    }

    #[test]
    fn logit_column_and_missing_identity() {
        let set = load_str("id,logit,y\nb,0,1\n", Format::Csv).unwrap();
        let r = &set.records()[0];
        assert_eq!(r.p, 0.5);
        assert_eq!(r.identity, BACKGROUND);

        let set = load_str("{\"id\":\"b\",\"logit\":0,\"y\":1}\n", Format::Jsonl).unwrap();
        assert_eq!(set.records()[0].p, 0.5);
        assert_eq!(set.records()[0].identity, BACKGROUND);
    }

    #[test]
    fn duplicate_id_is_named() {
        let err = load_str("id,p,y\na,0.1,0\na,0.2,1\n", Format::Csv).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(ref id) if id == "a"), "{err}");
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let err = load_str("id,p,y\na,0.1,0\nb,zzz,1\n", Format::Csv).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { line: 3, .. }), "{err}");

        let err = load_str("{\"id\":\"a\",\"p\":0.1,\"y\":0}\n{\"id\":\"b\",\"y\":1}\n", Format::Jsonl).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { line: 2, .. }), "{err}");

        let err = load_str("id,p,y\na,0.1,0.5\n", Format::Csv).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { line: 2, .. }), "{err}");
    }

    #[test]
    fn out_of_range_probability_and_empty_file() {
        let err = load_str("id,p,y\na,1.5,0\n", Format::Csv).unwrap_err();
        assert!(matches!(err, Error::ProbabilityOutOfRange { .. }), "{err}");
        assert!(matches!(load_str("id,p,y\n", Format::Csv), Err(Error::EmptyInput)));
        assert!(matches!(load_str("\n\n", Format::Jsonl), Err(Error::EmptyInput)));
    }

    #[test]
    fn soft_labels_binarize_when_enabled() {
        let opts = LoadOptions { label_threshold: Some(0.5) };
        let set = read_predictions("id,p,y\na,0.1,0.5\nb,0.1,0.49\n".as_bytes(), Format::Csv, "t", &opts).unwrap();
        assert_eq!(set.records()[0].y, 1);
        assert_eq!(set.records()[1].y, 0);
    }

    #[test]
    fn binarize_boundary_is_inclusive() {
        assert_eq!(binarize(0.5, 0.5), 1);
        assert_eq!(binarize(0.49, 0.5), 0);
        assert_eq!(binarize(0.8, 0.5), 1);
    }

    #[test]
    fn census_counts() {
        let set = PredictionSet::new(
            "t",
            vec![rec("1", 0.1, 1, BACKGROUND), rec("2", 0.1, 0, "white"), rec("3", 0.1, 1, "white")],
        )
        .unwrap();
        let c = census(&set).unwrap();
        assert_eq!(c.get("white"), Some(GroupCount { total: 2, positive: 1, negative: 1 }));
        assert_eq!(c.get(BACKGROUND), Some(GroupCount { total: 1, positive: 1, negative: 0 }));
        assert_eq!(c.totals().total, 3);
    }

    #[test]
    fn census_of_empty_set_errors() {
        let set = PredictionSet::new("t", vec![]).unwrap();
        assert!(matches!(census(&set), Err(Error::EmptyInput)));
    }

    fn synthetic(n_id: usize, n_pos: usize) -> PredictionSet {
        let mut records = Vec::new();
        for i in 0..200 {
            records.push(rec(&format!("b{i}"), 0.2, u8::from(i % 4 == 0), BACKGROUND));
        }
        for i in 0..n_id {
            records.push(rec(&format!("w{i}"), 0.4, u8::from(i < n_pos), "white"));
        }
        PredictionSet::new("t", records).unwrap()
    }

    #[test]
    fn identity_below_floor_is_excluded() {
        let slices = make_slices(&synthetic(49, 10), 50);
        assert_eq!(slices.len(), 1);
        assert_eq!(slices[0].kind, SliceKind::Background);
    }

    #[test]
    fn bnsp_suppressed_with_few_positives() {
        let kinds: Vec<SliceKind> = make_slices(&synthetic(80, 20), 50).into_iter().map(|s| s.kind).collect();
        assert_eq!(
            kinds,
            vec![SliceKind::Background, SliceKind::Subgroup("white".into()), SliceKind::Bpsn("white".into())]
        );
        let kinds: Vec<SliceKind> = make_slices(&synthetic(120, 60), 50).into_iter().map(|s| s.kind).collect();
        assert!(kinds.contains(&SliceKind::Bnsp("white".into())));
    }

    #[test]
    fn background_only_dataset() {
        let set = PredictionSet::new("t", vec![rec("a", 0.1, 0, BACKGROUND)]).unwrap();
        let slices = make_slices(&set, 50);
        assert_eq!(slices.len(), 1);
        assert_eq!(slices[0].indices, vec![0]);
    }

    #[test]
    fn pairing_mismatch_names_first_bad_id() {
        let a = synthetic(60, 10);
        let mut records = a.records().to_vec();
        records[5].y = 1 - records[5].y;
        let b = PredictionSet::new("b", records).unwrap();
        let err = PairedPredictions::new(vec![("a".into(), a), ("b".into(), b)]).unwrap_err();
        assert!(matches!(err, Error::PairingMismatch { ref id, position: 5, .. } if id == "b5"), "{err}");
    }

    #[test]
    fn text_is_passed_through() {
        let set = load_str("id,p,y,identity,text\na,0.9,0,white,\"hello, world\"\nb,0.1,0,,\n", Format::Csv).unwrap();
        assert_eq!(set.records()[0].text.as_deref(), Some("hello, world"));
        assert_eq!(set.records()[1].text, None);
        let mut buf = Vec::new();
        write_predictions(&set, &mut buf, Format::Csv).unwrap();
        assert_eq!(load_str(std::str::from_utf8(&buf).unwrap(), Format::Csv).unwrap(), set);
    }
}
