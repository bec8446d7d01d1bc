//! Three-axis fairness audit for binary classifiers: ranking, calibration and
//! abstention, with post-hoc interventions and paired-bootstrap inference.

// `!(x > 0.0)` is used deliberately so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod calibration;
pub mod data;
pub mod error;
pub mod posthoc;
pub mod prob;
pub mod ranking;
pub mod report;
pub mod rng;
pub mod synth;
pub mod tail;
pub mod trainers;

pub use data::{
    census, load_predictions, make_slices, read_predictions, write_predictions, EvalSlice, Format, GroupCensus,
    GroupCount, LoadOptions, PairedPredictions, PredictionRecord, PredictionSet, SliceKind, BACKGROUND,
};
pub use error::{Error, Result};
