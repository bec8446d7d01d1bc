//! Synthetic prediction sets with planted calibration, ranking and tail structure,
//! and feature datasets for the desk trainers.
//!
//! Every slice draws a latent toxicity probability `q` from a two-component Beta
//! mixture (a benign bulk near zero plus a contentious component), then `y ~
//! Bernoulli(q)`. The mixture weight is set so that `E[q]` equals the slice's
//! positive rate. A score model then maps `q` to the reported `p`; `p = q` is
//! exactly calibrated. Latent draws depend only on the seed and slice position,
//! so profiles that share a layout share ids, labels and identities and can be
//! audited as paired methods.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{PairedPredictions, PredictionRecord, PredictionSet, BACKGROUND};
use crate::error::{Error, Result};
use crate::prob::{logit, sigmoid};
use crate::rng::{self, domain};

/// Latent probabilities are kept this far from 0 and 1.
const Q_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub benign_mean: f64,
    pub benign_concentration: f64,
    pub contentious_mean: f64,
    pub contentious_concentration: f64,
}

impl Default for LatentSpec {
    fn default() -> Self {
        Self { benign_mean: 0.005, benign_concentration: 200.0, contentious_mean: 0.85, contentious_concentration: 4.0 }
    }
}

impl LatentSpec {
    /// Weight of the contentious component that makes `E[q] = rate`.
    pub fn contentious_weight(&self, rate: f64) -> f64 {
        (rate - self.benign_mean) / (self.contentious_mean - self.benign_mean)
    }

    fn validate(&self, rate: f64) -> Result<()> {
        let means_ok =
            0.0 < self.benign_mean && self.benign_mean < self.contentious_mean && self.contentious_mean < 1.0;
        if !means_ok || !(self.benign_concentration > 0.0 && self.contentious_concentration > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid latent spec {self:?}")));
        }
        if !(self.benign_mean..=self.contentious_mean).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "positive rate {rate} outside the latent range [{}, {}]",
                self.benign_mean, self.contentious_mean
            )));
        }
        Ok(())
    }

    fn beta(mean: f64, conc: f64) -> Beta<f64> {
        Beta::new(mean * conc, (1.0 - mean) * conc).expect("validated parameters")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenignTail {
    /// Probability that a benign record is moved into the tail.
    pub frac: f64,
    /// Tail scores are uniform on `[loc, 1)`.
    pub loc: f64,
}

/// `p = sigmoid(logit_scale * logit(q) + logit_shift)`, optionally followed by a
/// benign tail. The named constructors cover the usual profiles and compose
/// through the `with_*` methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub logit_scale: f64,
    pub logit_shift: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<BenignTail>,
}

impl Default for ScoreModel {
    fn default() -> Self {
        Self::calibrated()
    }
}

impl ScoreModel {
    pub fn calibrated() -> Self {
        Self { logit_scale: 1.0, logit_shift: 0.0, tail: None }
    }

    /// Pushes scores toward the extremes by scaling logits.
    pub fn overconfident(gap_strength: f64) -> Self {
        Self { logit_scale: gap_strength, ..Self::calibrated() }
    }

    /// Adds a constant to every logit.
    pub fn uniform_miscalibrated(shift: f64) -> Self {
        Self { logit_shift: shift, ..Self::calibrated() }
    }

    /// Calibrated bulk with a fraction of benign records sent to `[loc, 1)`.
    pub fn bimodal_tail(frac: f64, loc: f64) -> Self {
        Self::calibrated().with_tail(frac, loc)
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.logit_shift = shift;
        self
    }

    pub fn with_tail(mut self, frac: f64, loc: f64) -> Self {
        self.tail = Some(BenignTail { frac, loc });
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.logit_scale > 0.0) || !self.logit_shift.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid score model {self:?}")));
        }
        if let Some(t) = self.tail {
            if !(0.0..=1.0).contains(&t.frac) || !(0.0..1.0).contains(&t.loc) {
                return Err(Error::InvalidArgument(format!("invalid tail {t:?}")));
            }
        }
        Ok(())
    }

    /// Maps a latent to a score; `u_tail` and `u_loc` are uniform draws.
    fn score(&self, q: f64, y: u8, u_tail: f64, u_loc: f64) -> f64 {
        if let Some(t) = self.tail {
            if y == 0 && u_tail < t.frac {
                return t.loc + (1.0 - t.loc) * u_loc;
            }
        }
        sigmoid(self.logit_scale * logit(q) + self.logit_shift)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub identity: String,
    pub n: usize,
    pub rate: f64,
    #[serde(default)]
    pub latent: LatentSpec,
    #[serde(default)]
    pub score: ScoreModel,
}

impl SliceSpec {
    pub fn new(identity: impl Into<String>, n: usize, rate: f64, score: ScoreModel) -> Self {
        Self { identity: identity.into(), n, rate, latent: LatentSpec::default(), score }
    }

    pub fn with_latent(mut self, latent: LatentSpec) -> Self {
        self.latent = latent;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub slices: Vec<SliceSpec>,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        for s in &self.slices {
            s.latent.validate(s.rate)?;
            s.score.validate()?;
            if s.identity.is_empty() {
                return Err(Error::InvalidArgument("slice identity must be non-empty".into()));
            }
        }
        Ok(())
    }
}

/// Draws `(q, y)` for slice number `index` of a scenario.
fn latent_draws(seed: u64, index: usize, slice: &SliceSpec) -> Vec<(f64, u8)> {
    let mut rng = rng::stream(seed, domain::LATENT, index as u64);
    let w = slice.latent.contentious_weight(slice.rate);
    let l = &slice.latent;
    let benign = LatentSpec::beta(l.benign_mean, l.benign_concentration);
    let contentious = LatentSpec::beta(l.contentious_mean, l.contentious_concentration);
    (0..slice.n)
        .map(|_| {
            let q = if rng.random::<f64>() < w { contentious.sample(&mut rng) } else { benign.sample(&mut rng) };
            let q = q.clamp(Q_EPS, 1.0 - Q_EPS);
            let y = u8::from(rng.random::<f64>() < q);
            (q, y)
        })
        .collect()
}

/// Builds the prediction set described by `spec`; a pure function of its argument.
///
/// Ids are zero-padded global positions, so they sort in generation order.
pub fn generate(spec: &ScenarioSpec, name: impl Into<String>) -> Result<PredictionSet> {
    spec.validate()?;
    let mut records = Vec::with_capacity(spec.slices.iter().map(|s| s.n).sum());
    for (index, slice) in spec.slices.iter().enumerate() {
        let mut score_rng = rng::stream(spec.seed, domain::SCORE, index as u64);
        for (q, y) in latent_draws(spec.seed, index, slice) {
            let (u_tail, u_loc) = (score_rng.random::<f64>(), score_rng.random::<f64>());
            records.push(PredictionRecord {
                id: format!("{:06}", records.len()),
                p: slice.score.score(q, y, u_tail, u_loc),
                y,
                identity: slice.identity.clone(),
                text: None,
            });
        }
    }
    PredictionSet::new(name, records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Erm,
    Reweighted,
    Dro,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::Erm, Profile::Reweighted, Profile::Dro];

    pub fn name(self) -> &'static str {
        match self {
            Profile::Erm => "erm",
            Profile::Reweighted => "reweighted",
            Profile::Dro => "dro",
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erm" => Ok(Profile::Erm),
            "reweighted" => Ok(Profile::Reweighted),
            "dro" => Ok(Profile::Dro),
            other => {
                Err(Error::InvalidArgument(format!("unknown profile {other:?} (expected erm, reweighted or dro)")))
            }
        }
    }
}

/// Test-set sizes and positive rates for the eight audited identities.
pub const PROFILE_IDENTITIES: [(&str, usize, f64); 8] = [
    ("white", 276, 0.30),
    ("muslim", 247, 0.22),
    ("gay/lesbian", 129, 0.25),
    ("black", 146, 0.30),
    ("jewish", 83, 0.18),
    ("christian", 474, 0.12),
    ("female", 566, 0.12),
    ("male", 506, 0.13),
];
pub const PROFILE_BACKGROUND: (usize, f64) = (18217, 0.08);

impl ScenarioSpec {
    /// The fixed layout behind [`profile_set`].
    ///
    /// - erm: calibrated background, subgroup logits shifted up (overconfident on identity content).
    /// - reweighted: lightly shifted background; subgroups mostly pulled down but with a
    ///   benign tail above 0.99.
    /// - dro: one uniform logit shift on every slice.
    pub fn profile(profile: Profile, seed: u64) -> Self {
        let (background, subgroup) = match profile {
            Profile::Erm => (ScoreModel::calibrated(), ScoreModel::uniform_miscalibrated(2.5)),
            Profile::Reweighted => {
                (ScoreModel::uniform_miscalibrated(0.3), ScoreModel::uniform_miscalibrated(-1.0).with_tail(0.04, 0.99))
            }
            Profile::Dro => (ScoreModel::uniform_miscalibrated(3.5), ScoreModel::uniform_miscalibrated(3.5)),
        };
        let mut slices = vec![SliceSpec::new(BACKGROUND, PROFILE_BACKGROUND.0, PROFILE_BACKGROUND.1, background)];
        slices.extend(PROFILE_IDENTITIES.iter().map(|&(id, n, rate)| SliceSpec::new(id, n, rate, subgroup)));
        Self { seed, slices }
    }
}

pub fn profile_set(profile: Profile, seed: u64) -> PredictionSet {
    generate(&ScenarioSpec::profile(profile, seed), profile.name()).expect("built-in profile is valid")
}

/// All three profiles for one seed, paired in erm, reweighted, dro order.
pub fn profile_sets(seed: u64) -> PairedPredictions {
    let sets = Profile::ALL.iter().map(|&p| (p.name().to_string(), profile_set(p, seed))).collect();
    PairedPredictions::new(sets).expect("profiles share one latent draw")
}

/// Generative parameters of a trainer dataset.
///
/// Records are background or identity members. Labels depend on group through
/// the positive rates; core features carry class signal with Mahalanobis
/// separation `separation`; one extra feature is `spurious_shift * [identity] +
/// N(0, spurious_sd^2)` and carries no label signal beyond group membership.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub identity_frac: f64,
    pub background_rate: f64,
    pub identity_rate: f64,
    pub separation: f64,
    pub spurious_shift: f64,
    pub spurious_sd: f64,
}

impl Default for GroupSpec {
    fn default() -> Self {
        Self {
            identity_frac: 0.1,
            background_rate: 0.1,
            identity_rate: 0.5,
            separation: 2.5,
            spurious_shift: 3.0,
            spurious_sd: 1.0,
        }
    }
}

impl GroupSpec {
    /// Four equal groups and no spurious signal.
    pub fn balanced() -> Self {
        Self { identity_frac: 0.5, background_rate: 0.5, identity_rate: 0.5, spurious_shift: 0.0, ..Self::default() }
    }
}

/// Identity tag given to identity members in trainer datasets.
pub const TRAIN_IDENTITY: &str = "minority";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub d: usize,
    /// Row-major, `n * d`.
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
    pub is_identity: Vec<bool>,
}

impl TrainingData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    /// Training group `2 * identity + y`, i.e. the `(identity, y)` pair.
    pub fn group(&self, i: usize) -> usize {
        2 * usize::from(self.is_identity[i]) + usize::from(self.labels[i])
    }

    pub fn identity_tag(&self, i: usize) -> &'static str {
        if self.is_identity[i] {
            TRAIN_IDENTITY
        } else {
            BACKGROUND
        }
    }
}

pub const N_TRAIN_GROUPS: usize = 4;

pub fn train_group_name(g: usize) -> String {
    let id = if g >= 2 { TRAIN_IDENTITY } else { BACKGROUND };
    format!("({id}, y={})", g % 2)
}

/// Draws `n` examples with `d` features: `d - 1` core dimensions and the spurious one last.
///
/// Group membership is assigned by exact counts and then shuffled, so group sizes
/// match `spec` up to rounding.
pub fn generate_training_data(seed: u64, n: usize, d: usize, spec: &GroupSpec) -> Result<TrainingData> {
    if n == 0 || d < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 1 and d >= 2, got n={n}, d={d}")));
    }
    let in_unit = |x: f64| (0.0..=1.0).contains(&x);
    if !in_unit(spec.identity_frac) || !in_unit(spec.background_rate) || !in_unit(spec.identity_rate) {
        return Err(Error::InvalidArgument(format!("invalid group spec {spec:?}")));
    }
    if !(spec.separation >= 0.0) || !(spec.spurious_sd > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid group spec {spec:?}")));
    }
    let n_id = (spec.identity_frac * n as f64).round() as usize;
    let pos_id = (spec.identity_rate * n_id as f64).round() as usize;
    let n_bg = n - n_id;
    let pos_bg = (spec.background_rate * n_bg as f64).round() as usize;
    // (is_identity, y) in exact counts, then shuffled.
    let mut layout: Vec<(bool, u8)> = Vec::with_capacity(n);
    layout.extend(std::iter::repeat((false, 1)).take(pos_bg));
    layout.extend(std::iter::repeat((false, 0)).take(n_bg - pos_bg));
    layout.extend(std::iter::repeat((true, 1)).take(pos_id));
    layout.extend(std::iter::repeat((true, 0)).take(n_id - pos_id));
    layout.shuffle(&mut rng::stream(seed, domain::SHUFFLE, u64::MAX));

    let core = d - 1;
    let half = spec.separation / (2.0 * (core as f64).sqrt());
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = rng::stream(seed, domain::FEATURES, 0);
    let mut features = Vec::with_capacity(n * d);
    let (mut labels, mut is_identity) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (ident, y) in layout {
        let mean = if y == 1 { half } else { -half };
        for _ in 0..core {
            features.push(mean + std.sample(&mut rng));
        }
        let shift = if ident { spec.spurious_shift } else { 0.0 };
        features.push(shift + spec.spurious_sd * std.sample(&mut rng));
        labels.push(y);
        is_identity.push(ident);
    }
    Ok(TrainingData { d, features, labels, is_identity })
}
