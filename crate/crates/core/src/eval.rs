//! Evaluation protocols (leave-one-country-out and leave-one-subset-out),
//! demographic filters, agreement metrics, paired comparison, importance
//! aggregation by data category and per-country histograms.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::features::schema::{category_of, day_type_of};
use crate::forest::{self, ForestError, ForestParams, RfeParams};
use crate::matrix::{FeatureMatrix, MatrixError};
use crate::psychometrics::{score_traits, ScoringKey};
use crate::seed;
use crate::types::{
    trait_class_labels, AgeRange, Category, ClassLabel, Country, DayType, Gender, LabelError, Method, Participant,
    Trait, TraitScores, UnknownVariant,
};

/// Discordant-pair count below which McNemar uses the exact binomial test.
pub const EXACT_MCNEMAR_BELOW: u64 = 25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("truth contains a single class")]
    DegenerateTruth,
    #[error("truth and prediction lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("protocol needs at least 2 countries, got {0}")]
    TooFewCountries(usize),
    #[error("stratum `{0}` is empty")]
    EmptyStratum(String),
    #[error("population is empty")]
    EmptyPopulation,
    #[error("population has {0} participants, need at least 10")]
    TooSmall(usize),
    #[error("runs share no (participant, repeat) keys")]
    NoSharedKeys,
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("{0} rows but {1} participants")]
    RowCount(usize, usize),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Fraction of positions where prediction equals truth.
pub fn accuracy(truth: &[ClassLabel], pred: &[ClassLabel]) -> Result<f64, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch(truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(EvalError::EmptyPopulation);
    }
    let hits = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// 2x2 confusion counts with `high` as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_labels(truth: &[ClassLabel], pred: &[ClassLabel]) -> Result<Confusion, EvalError> {
        if truth.len() != pred.len() {
            return Err(EvalError::LengthMismatch(truth.len(), pred.len()));
        }
        let mut c = Confusion::default();
        for (t, p) in truth.iter().zip(pred) {
            match (t, p) {
                (ClassLabel::High, ClassLabel::High) => c.tp += 1,
                (ClassLabel::High, ClassLabel::Low) => c.fn_ += 1,
                (ClassLabel::Low, ClassLabel::High) => c.fp += 1,
                (ClassLabel::Low, ClassLabel::Low) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn kappa(&self) -> Result<f64, EvalError> {
        let n = self.total() as f64;
        let truth_high = (self.tp + self.fn_) as f64;
        let pred_high = (self.tp + self.fp) as f64;
        if self.tp + self.fn_ == 0 || self.fp + self.tn == 0 {
            return Err(EvalError::DegenerateTruth);
        }
        let po = (self.tp + self.tn) as f64 / n;
        let pe = (truth_high * pred_high + (n - truth_high) * (n - pred_high)) / (n * n);
        Ok((po - pe) / (1.0 - pe))
    }
}

/// Cohen's kappa of predictions against truth.
pub fn cohen_kappa(truth: &[ClassLabel], pred: &[ClassLabel]) -> Result<f64, EvalError> {
    Confusion::from_labels(truth, pred)?.kappa()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McNemar {
    /// Pairs where run A is right and run B wrong.
    pub b: u64,
    /// Pairs where run A is wrong and run B right.
    pub c: u64,
    /// Continuity-corrected chi-square statistic.
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
    pub no_discordant: bool,
}

fn binomial_coefficient(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Two-sided exact binomial p-value for `b` vs `c` discordant pairs
/// under p = 1/2.
pub fn mcnemar_exact_p(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    if n > 60 {
        // Beyond u64 range for the tail sum; use the log-space path.
        let lo = b.min(c);
        let ln_half_n = n as f64 * 0.5f64.ln();
        let tail: f64 = (0..=lo)
            .map(|k| (statrs::function::factorial::ln_binomial(n, k) + ln_half_n).exp())
            .sum();
        return (2.0 * tail).min(1.0);
    }
    let lo = b.min(c);
    let tail: u64 = (0..=lo).map(|k| binomial_coefficient(n, k)).sum();
    (2.0 * tail as f64 / 2f64.powi(n as i32)).min(1.0)
}

/// McNemar test from discordant counts.
pub fn mcnemar_counts(b: u64, c: u64) -> McNemar {
    let n = b + c;
    if n == 0 {
        return McNemar { b, c, statistic: 0.0, p_value: 1.0, exact: true, no_discordant: true };
    }
    let diff = (b.abs_diff(c) as f64 - 1.0).max(0.0);
    let statistic = diff * diff / n as f64;
    if n < EXACT_MCNEMAR_BELOW {
        McNemar { b, c, statistic, p_value: mcnemar_exact_p(b, c), exact: true, no_discordant: false }
    } else {
        let chi = ChiSquared::new(1.0).expect("one degree of freedom");
        McNemar { b, c, statistic, p_value: chi.sf(statistic), exact: false, no_discordant: false }
    }
}

/// Pairs two runs on (participant, repeat) and tests whether their error
/// rates differ. Keys present in only one run are ignored.
pub fn mcnemar(a: &EvalRun, b: &EvalRun) -> Result<McNemar, EvalError> {
    let keyed: HashMap<(&str, usize), &InstanceRecord> =
        b.records.iter().map(|r| ((r.participant.as_str(), r.repeat), r)).collect();
    let (mut nb, mut nc, mut shared) = (0, 0, 0);
    for ra in &a.records {
        let Some(rb) = keyed.get(&(ra.participant.as_str(), ra.repeat)) else {
            continue;
        };
        shared += 1;
        match (ra.correct(), rb.correct()) {
            (true, false) => nb += 1,
            (false, true) => nc += 1,
            _ => {}
        }
    }
    if shared == 0 {
        return Err(EvalError::NoSharedKeys);
    }
    Ok(mcnemar_counts(nb, nc))
}

/// Participants with their imputed features, trait scores and per-trait
/// median-split labels.
///
/// Labels are fixed when the cohort is built (or relabelled); selecting rows
/// keeps them, so protocol subsamples inherit the population's split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCohort {
    participants: Vec<Participant>,
    features: FeatureMatrix,
    scores: Vec<TraitScores>,
    labels: Vec<Vec<ClassLabel>>,
}

impl EvalCohort {
    pub fn new(participants: Vec<Participant>, features: FeatureMatrix, key: &ScoringKey) -> Result<Self, EvalError> {
        let scores = participants.iter().map(|p| score_traits(&p.responses, key)).collect();
        Self::from_scores(participants, features, scores)
    }

    pub fn from_scores(
        participants: Vec<Participant>,
        features: FeatureMatrix,
        scores: Vec<TraitScores>,
    ) -> Result<Self, EvalError> {
        if features.n_rows() != participants.len() {
            return Err(EvalError::RowCount(features.n_rows(), participants.len()));
        }
        if scores.len() != participants.len() {
            return Err(EvalError::RowCount(scores.len(), participants.len()));
        }
        if participants.is_empty() {
            return Err(EvalError::EmptyPopulation);
        }
        let labels = Trait::ALL
            .iter()
            .map(|&t| trait_class_labels(&scores, t).map(|s| s.labels))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EvalCohort { participants, features, scores, labels })
    }

    pub fn len(&self) -> usize {
        self.participants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.participants.is_empty()
    }

    pub fn participants(&self) -> &[Participant] {
        &self.participants
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn scores(&self) -> &[TraitScores] {
        &self.scores
    }

    pub fn labels(&self, t: Trait) -> &[ClassLabel] {
        &self.labels[t.index()]
    }

    /// Rows `idx`, keeping the current labels.
    pub fn select(&self, idx: &[usize]) -> EvalCohort {
        EvalCohort {
            participants: idx.iter().map(|&i| self.participants[i].clone()).collect(),
            features: self.features.select_rows(idx),
            scores: idx.iter().map(|&i| self.scores[i]).collect(),
            labels: self.labels.iter().map(|l| idx.iter().map(|&i| l[i]).collect()).collect(),
        }
    }

    /// Recomputes the median split within this cohort.
    pub fn relabel(self) -> Result<EvalCohort, EvalError> {
        Self::from_scores(self.participants, self.features, self.scores)
    }

    pub fn country_counts(&self) -> BTreeMap<Country, usize> {
        let mut out = BTreeMap::new();
        for p in &self.participants {
            *out.entry(p.country).or_insert(0) += 1;
        }
        out
    }
}

/// Evaluated population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Population {
    All,
    GenderBalanced,
    Female,
    Male,
    AgeBalanced,
    Student,
    NonStudent,
    Country(Country),
}

impl Population {
    pub fn as_str(self) -> &'static str {
        match self {
            Population::All => "all",
            Population::GenderBalanced => "gender_balanced",
            Population::Female => "female",
            Population::Male => "male",
            Population::AgeBalanced => "age_balanced",
            Population::Student => "student",
            Population::NonStudent => "non_student",
            Population::Country(c) => c.as_str(),
        }
    }

    /// Balancing axis for the balanced populations.
    pub fn balance_axis(self) -> Option<BalanceAxis> {
        match self {
            Population::GenderBalanced => Some(BalanceAxis::Gender),
            Population::AgeBalanced => Some(BalanceAxis::Age),
            _ => None,
        }
    }

    /// Membership predicate; balanced populations admit everyone before
    /// balancing.
    pub fn admits(self, p: &Participant) -> bool {
        match self {
            Population::All | Population::GenderBalanced | Population::AgeBalanced => true,
            Population::Female => p.gender == Gender::Female,
            Population::Male => p.gender == Gender::Male,
            Population::Student => p.employment.is_student(),
            Population::NonStudent => !p.employment.is_student(),
            Population::Country(c) => p.country == c,
        }
    }
}

impl fmt::Display for Population {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Population {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "all" => Population::All,
            "gender_balanced" => Population::GenderBalanced,
            "female" => Population::Female,
            "male" => Population::Male,
            "age_balanced" => Population::AgeBalanced,
            "student" => Population::Student,
            "non_student" => Population::NonStudent,
            other => Population::Country(other.parse().map_err(|_| UnknownVariant {
                kind: "population",
                value: other.to_string(),
            })?),
        })
    }
}

/// Keeps the participants matching `keep` and recomputes labels within them.
pub fn population_filter(cohort: &EvalCohort, keep: impl Fn(&Participant) -> bool) -> Result<EvalCohort, EvalError> {
    let idx: Vec<usize> = (0..cohort.len()).filter(|&i| keep(&cohort.participants[i])).collect();
    if idx.is_empty() {
        return Err(EvalError::EmptyPopulation);
    }
    cohort.select(&idx).relabel()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BalanceAxis {
    Gender,
    Age,
}

/// Per-repeat row indices of a balanced sub-cohort, ascending.
///
/// Gender: the larger stratum is downsampled to the smaller one's size. Age:
/// the 26-34 bracket is downsampled to the size of the smallest bracket.
pub fn balanced_filter(
    cohort: &EvalCohort,
    axis: BalanceAxis,
    repeats: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, EvalError> {
    let strata: Vec<(String, Vec<usize>)> = match axis {
        BalanceAxis::Gender => Gender::ALL
            .iter()
            .map(|&g| (g.to_string(), (0..cohort.len()).filter(|&i| cohort.participants[i].gender == g).collect()))
            .collect(),
        BalanceAxis::Age => AgeRange::ALL
            .iter()
            .map(|&a| (a.to_string(), (0..cohort.len()).filter(|&i| cohort.participants[i].age_range == a).collect()))
            .collect(),
    };
    if let Some((name, _)) = strata.iter().find(|(_, v)| v.is_empty()) {
        return Err(EvalError::EmptyStratum(name.clone()));
    }
    let target = strata.iter().map(|(_, v)| v.len()).min().expect("strata");
    let downsampled: Vec<usize> = match axis {
        BalanceAxis::Gender => {
            let largest = strata.iter().map(|(_, v)| v.len()).max().expect("strata");
            vec![strata.iter().position(|(_, v)| v.len() == largest).expect("present")]
        }
        BalanceAxis::Age => vec![AgeRange::From26To34.index()],
    };
    let axis_tag = match axis {
        BalanceAxis::Gender => seed::tag("gender"),
        BalanceAxis::Age => seed::tag("age"),
    };
    Ok((0..repeats)
        .map(|r| {
            let mut rng = seed::rng(seed, &[seed::tag("balance"), axis_tag, r as u64]);
            let mut rows = Vec::new();
            for (s, (_, members)) in strata.iter().enumerate() {
                if downsampled.contains(&s) && members.len() > target {
                    rows.extend(index::sample(&mut rng, members.len(), target).into_iter().map(|k| members[k]));
                } else {
                    rows.extend_from_slice(members);
                }
            }
            rows.sort_unstable();
            rows
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    pub forest: ForestParams,
    pub rfe: RfeParams,
    pub method1_repeats: usize,
    pub method2_repeats: usize,
    pub balance_repeats: usize,
    /// Spain subsample size; `None` uses the smallest other country's size.
    pub spain_subsample: Option<usize>,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            forest: ForestParams::default(),
            rfe: RfeParams::default(),
            method1_repeats: 10,
            method2_repeats: 15,
            balance_repeats: 10,
            spain_subsample: None,
        }
    }
}

impl ProtocolParams {
    pub fn repeats(&self, method: Method) -> usize {
        match method {
            Method::Method1 => self.method1_repeats,
            Method::Method2 => self.method2_repeats,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InstanceRecord {
    pub participant: String,
    pub repeat: usize,
    pub truth: ClassLabel,
    pub prediction: ClassLabel,
}

impl InstanceRecord {
    pub fn correct(&self) -> bool {
        self.truth == self.prediction
    }
}

/// Training and test participants of one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAudit {
    pub repeat: usize,
    /// Held-out country (Method 1) or subset number (Method 2).
    pub fold: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Which participants were tested at least once over a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coverage {
    pub covered: usize,
    pub total: usize,
    pub uncovered: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub method: Method,
    pub trait_name: Trait,
    pub population: String,
    pub records: Vec<InstanceRecord>,
    /// Instance-weighted over all repeats.
    pub accuracy: f64,
    pub kappa: f64,
    pub folds: Vec<FoldAudit>,
    pub coverage: Coverage,
}

impl EvalRun {
    fn from_records(
        method: Method,
        trait_name: Trait,
        population: &str,
        records: Vec<InstanceRecord>,
        folds: Vec<FoldAudit>,
        all_ids: &[String],
    ) -> Result<EvalRun, EvalError> {
        let truth: Vec<ClassLabel> = records.iter().map(|r| r.truth).collect();
        let pred: Vec<ClassLabel> = records.iter().map(|r| r.prediction).collect();
        let accuracy = accuracy(&truth, &pred)?;
        let kappa = cohen_kappa(&truth, &pred)?;
        let tested: BTreeSet<&str> = records.iter().map(|r| r.participant.as_str()).collect();
        let mut uncovered: Vec<String> =
            all_ids.iter().filter(|id| !tested.contains(id.as_str())).cloned().collect();
        uncovered.sort();
        uncovered.dedup();
        let total = all_ids.iter().collect::<BTreeSet<_>>().len();
        let coverage = Coverage { covered: total - uncovered.len(), total, uncovered };
        Ok(EvalRun { method, trait_name, population: population.to_string(), records, accuracy, kappa, folds, coverage })
    }

    /// Method 1 audit: no fold trains on a participant of its held-out
    /// country. Returns the offending (fold, participant) pairs.
    pub fn loco_violations(&self, cohort: &EvalCohort) -> Vec<(String, String)> {
        let country: HashMap<&str, Country> =
            cohort.participants.iter().map(|p| (p.id.as_str(), p.country)).collect();
        let mut out = Vec::new();
        for f in &self.folds {
            let Ok(held_out) = f.fold.parse::<Country>() else {
                out.push((f.fold.clone(), String::new()));
                continue;
            };
            for id in &f.train {
                if country.get(id.as_str()) == Some(&held_out) {
                    out.push((f.fold.clone(), id.clone()));
                }
            }
            for id in &f.test {
                if country.get(id.as_str()) != Some(&held_out) {
                    out.push((f.fold.clone(), id.clone()));
                }
            }
        }
        out
    }
}

/// Spain subsample size for a cohort: the smallest other country's size.
pub fn default_spain_subsample(cohort: &EvalCohort) -> Option<usize> {
    cohort.country_counts().into_iter().filter(|(c, _)| *c != Country::ES).map(|(_, n)| n).min()
}

/// Rows used in one repeat: every non-Spanish participant plus `n` Spanish
/// participants drawn from the repeat's stream. Ascending.
pub fn repeat_instances(cohort: &EvalCohort, n: Option<usize>, seed: u64, repeat: usize) -> Vec<usize> {
    let spain: Vec<usize> = (0..cohort.len()).filter(|&i| cohort.participants[i].country == Country::ES).collect();
    let mut rows: Vec<usize> = (0..cohort.len()).filter(|&i| cohort.participants[i].country != Country::ES).collect();
    match n {
        Some(n) if n < spain.len() => {
            let mut rng = seed::rng(seed, &[seed::tag("subsample"), repeat as u64]);
            rows.extend(index::sample(&mut rng, spain.len(), n).into_iter().map(|k| spain[k]));
        }
        _ => rows.extend(spain),
    }
    rows.sort_unstable();
    rows
}

/// Appends one 0/1 column per country.
pub fn with_country_flags(features: &FeatureMatrix, participants: &[Participant]) -> Result<FeatureMatrix, EvalError> {
    let names = Country::ALL.iter().map(|c| format!("country_flag.{c}")).collect();
    let cols = Country::ALL
        .iter()
        .map(|&c| participants.iter().map(|p| if p.country == c { 1.0 } else { 0.0 }).collect())
        .collect();
    Ok(features.with_columns(names, cols)?)
}

struct Fold {
    repeat: usize,
    name: String,
    train: Vec<usize>,
    test: Vec<usize>,
}

fn method_tag(method: Method) -> u64 {
    seed::tag(method.as_str())
}

fn folds_for(cohort: &EvalCohort, method: Method, rows: &[usize], seed: u64, repeat: usize) -> Vec<Fold> {
    let counts: Vec<(Country, Vec<usize>)> = Country::ALL
        .iter()
        .map(|&c| (c, rows.iter().copied().filter(|&i| cohort.participants[i].country == c).collect::<Vec<_>>()))
        .filter(|(_, v)| !v.is_empty())
        .collect();
    let complement = |test: &[usize]| -> Vec<usize> {
        let set: BTreeSet<usize> = test.iter().copied().collect();
        rows.iter().copied().filter(|i| !set.contains(i)).collect()
    };
    match method {
        Method::Method1 => counts
            .iter()
            .map(|(c, test)| Fold { repeat, name: c.to_string(), train: complement(test), test: test.clone() })
            .collect(),
        Method::Method2 => {
            let mut shuffled = rows.to_vec();
            shuffled.shuffle(&mut seed::rng(seed, &[seed::tag("subsets"), repeat as u64]));
            let mut out = Vec::new();
            let mut at = 0;
            for (k, (_, members)) in counts.iter().enumerate() {
                let mut test = shuffled[at..at + members.len()].to_vec();
                at += members.len();
                test.sort_unstable();
                out.push(Fold { repeat, name: format!("subset{}", k + 1), train: complement(&test), test });
            }
            out
        }
    }
}

/// Runs one protocol for repeats `first_repeat .. first_repeat + repeats`.
///
/// Method 1 holds out each country in turn (flags excluded); Method 2
/// holds out random subsets sized like the countries and appends country
/// flags. Both draw the same per-repeat Spain subsample. Every fold runs
/// RFE on the training rows and predicts the held-out rows.
#[allow(clippy::too_many_arguments)]
pub fn run_method(
    cohort: &EvalCohort,
    method: Method,
    trait_name: Trait,
    params: &ProtocolParams,
    first_repeat: usize,
    repeats: usize,
    seed: u64,
    population: &str,
) -> Result<EvalRun, EvalError> {
    let n_countries = cohort.country_counts().len();
    if n_countries < 2 {
        return Err(EvalError::TooFewCountries(n_countries));
    }
    let spain_n = params.spain_subsample.or_else(|| default_spain_subsample(cohort));
    let features = match method {
        Method::Method1 => cohort.features.clone(),
        Method::Method2 => with_country_flags(&cohort.features, &cohort.participants)?,
    };
    let labels = cohort.labels(trait_name);
    let folds: Vec<Fold> = (first_repeat..first_repeat + repeats)
        .flat_map(|r| {
            let rows = repeat_instances(cohort, spain_n, seed, r);
            folds_for(cohort, method, &rows, seed, r)
        })
        .collect();

    let predictions = folds
        .par_iter()
        .enumerate()
        .map(|(k, fold)| -> Result<Vec<ClassLabel>, EvalError> {
            let x = features.select_rows(&fold.train);
            let y: Vec<ClassLabel> = fold.train.iter().map(|&i| labels[i]).collect();
            let fold_seed = seed::derive(seed, &[method_tag(method), trait_name.index() as u64, fold.repeat as u64, k as u64]);
            let result = forest::rfe(&x, &y, &params.forest.with_seed(fold_seed), &params.rfe)?;
            Ok(result.model.predict(&features.select_rows(&fold.test))?.labels)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let ids = |rows: &[usize]| -> Vec<String> { rows.iter().map(|&i| cohort.participants[i].id.clone()).collect() };
    let mut records = Vec::new();
    let mut audit = Vec::with_capacity(folds.len());
    for (fold, pred) in folds.iter().zip(predictions) {
        for (&i, p) in fold.test.iter().zip(pred) {
            records.push(InstanceRecord {
                participant: cohort.participants[i].id.clone(),
                repeat: fold.repeat,
                truth: labels[i],
                prediction: p,
            });
        }
        audit.push(FoldAudit { repeat: fold.repeat, fold: fold.name.clone(), train: ids(&fold.train), test: ids(&fold.test) });
    }
    let all_ids: Vec<String> = cohort.participants.iter().map(|p| p.id.clone()).collect();
    EvalRun::from_records(method, trait_name, population, records, audit, &all_ids)
}

/// Method 1 (leave-one-country-out) with the configured repeats.
pub fn method1_loco(cohort: &EvalCohort, trait_name: Trait, params: &ProtocolParams, seed: u64) -> Result<EvalRun, EvalError> {
    run_method(cohort, Method::Method1, trait_name, params, 0, params.method1_repeats, seed, "all")
}

/// Method 2 (leave-one-subset-out with country flags) with the configured
/// repeats.
pub fn method2_loso(cohort: &EvalCohort, trait_name: Trait, params: &ProtocolParams, seed: u64) -> Result<EvalRun, EvalError> {
    run_method(cohort, Method::Method2, trait_name, params, 0, params.method2_repeats, seed, "all")
}

/// Evaluates one population. Filtered populations are relabelled within
/// themselves; balanced populations keep the full cohort's labels and run
/// one protocol repeat per balance repeat (repeat index = balance repeat).
pub fn evaluate_population(
    cohort: &EvalCohort,
    population: Population,
    method: Method,
    trait_name: Trait,
    params: &ProtocolParams,
    seed: u64,
) -> Result<EvalRun, EvalError> {
    let name = population.as_str();
    if let Some(axis) = population.balance_axis() {
        let subsets = balanced_filter(cohort, axis, params.balance_repeats, seed)?;
        let mut records = Vec::new();
        let mut folds = Vec::new();
        for (r, rows) in subsets.iter().enumerate() {
            let sub = cohort.select(rows);
            let run = run_method(&sub, method, trait_name, params, r, 1, seed, name)?;
            records.extend(run.records);
            folds.extend(run.folds);
        }
        let all_ids: Vec<String> = cohort.participants.iter().map(|p| p.id.clone()).collect();
        return EvalRun::from_records(method, trait_name, name, records, folds, &all_ids);
    }
    let sub = if population == Population::All {
        cohort.clone()
    } else {
        population_filter(cohort, |p| population.admits(p))?
    };
    run_method(&sub, method, trait_name, params, 0, params.repeats(method), seed, name)
}

/// Per-category importance of one (population, trait).
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceRow {
    pub population: String,
    pub trait_name: Trait,
    /// Indexed by `Category::index`; sums to 1.
    pub weights: Vec<f64>,
    pub dominant: Vec<DayType>,
}

impl ImportanceRow {
    pub fn weight(&self, c: Category) -> f64 {
        self.weights[c.index()]
    }

    pub fn argmax(&self) -> Category {
        let mut best = Category::ALL[0];
        for &c in Category::ALL {
            if self.weight(c) > self.weight(best) {
                best = c;
            }
        }
        best
    }
}

/// Leave-one-instance-out importance by data category.
///
/// Each fit runs RFE on all but one participant; surviving importances are
/// accumulated per feature. A category's raw weight is the mean accumulated
/// importance over its features, and raw weights are normalized to sum to 1.
/// The dominant day type is the one whose features carry more accumulated
/// importance (weekday on ties). Columns outside the eight categories are
/// ignored.
pub fn importance_by_category(
    cohort: &EvalCohort,
    population: Population,
    trait_name: Trait,
    params: &ProtocolParams,
    seed: u64,
) -> Result<ImportanceRow, EvalError> {
    let sub = if population == Population::All {
        cohort.clone()
    } else {
        population_filter(cohort, |p| population.admits(p))?
    };
    let n = sub.len();
    if n < 10 {
        return Err(EvalError::TooSmall(n));
    }
    let labels = sub.labels(trait_name);
    let d = sub.features.n_cols();
    let per_fit = (0..n)
        .into_par_iter()
        .map(|left_out| -> Result<Vec<f64>, EvalError> {
            let rows: Vec<usize> = (0..n).filter(|&i| i != left_out).collect();
            let x = sub.features.select_rows(&rows);
            let y: Vec<ClassLabel> = rows.iter().map(|&i| labels[i]).collect();
            let fit_seed = seed::derive(
                seed,
                &[seed::tag("importance"), seed::tag(population.as_str()), trait_name.index() as u64, left_out as u64],
            );
            let result = forest::rfe(&x, &y, &params.forest.with_seed(fit_seed), &params.rfe)?;
            Ok(result.full_importances(d))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut acc = vec![0.0; d];
    for imp in &per_fit {
        for (a, v) in acc.iter_mut().zip(imp) {
            *a += v;
        }
    }

    let mut raw = vec![0.0; Category::ALL.len()];
    let mut counts = vec![0usize; Category::ALL.len()];
    let mut by_day = vec![[0.0f64; 2]; Category::ALL.len()];
    for (name, a) in sub.features.names().iter().zip(&acc) {
        let Some(c) = category_of(name) else { continue };
        raw[c.index()] += a;
        counts[c.index()] += 1;
        if let Some(dt) = day_type_of(name) {
            by_day[c.index()][dt.index()] += a;
        }
    }
    let mut weights: Vec<f64> = raw.iter().zip(&counts).map(|(r, &k)| if k == 0 { 0.0 } else { r / k as f64 }).collect();
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter_mut().for_each(|w| *w /= total);
    } else {
        let present = counts.iter().filter(|&&k| k > 0).count().max(1) as f64;
        weights = counts.iter().map(|&k| if k > 0 { 1.0 / present } else { 0.0 }).collect();
    }
    let dominant = by_day
        .iter()
        .map(|[wd, we]| if we > wd { DayType::Weekend } else { DayType::Weekday })
        .collect();
    Ok(ImportanceRow { population: population.as_str().to_string(), trait_name, weights, dominant })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub country: Country,
    pub feature: String,
    pub bin_left: f64,
    pub bin_right: f64,
    pub mass: f64,
}

/// Per-country normalized histograms over bin edges shared by all
/// countries. The top edge is inclusive.
pub fn feature_distributions(cohort: &EvalCohort, features: &[String], bins: usize) -> Result<Vec<HistogramBin>, EvalError> {
    if bins == 0 {
        return Err(EvalError::InvalidParam("bins must be >= 1".into()));
    }
    let mut out = Vec::new();
    for name in features {
        let j = cohort.features.column_index(name).ok_or_else(|| EvalError::UnknownFeature(name.clone()))?;
        let col = cohort.features.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 / bins as f64 };
        let bin_of = |v: f64| (((v - lo) / width).floor() as usize).min(bins - 1);
        for (country, _) in cohort.country_counts() {
            let values: Vec<f64> =
                col.iter().zip(&cohort.participants).filter(|(_, p)| p.country == country).map(|(v, _)| *v).collect();
            let mut counts = vec![0usize; bins];
            for &v in &values {
                counts[bin_of(v)] += 1;
            }
            for (b, &k) in counts.iter().enumerate() {
                out.push(HistogramBin {
                    country,
                    feature: name.clone(),
                    bin_left: lo + b as f64 * width,
                    bin_right: lo + (b + 1) as f64 * width,
                    mass: k as f64 / values.len() as f64,
                });
            }
        }
    }
    Ok(out)
}

/// Accuracy and kappa of every trait for one (population, method).
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceRow {
    pub population: String,
    pub method: Method,
    /// (trait, accuracy in [0, 1], kappa).
    pub cells: Vec<(Trait, f64, f64)>,
}

impl PerformanceRow {
    pub fn from_runs(runs: &[EvalRun]) -> Option<PerformanceRow> {
        let first = runs.first()?;
        Some(PerformanceRow {
            population: first.population.clone(),
            method: first.method,
            cells: runs.iter().map(|r| (r.trait_name, r.accuracy, r.kappa)).collect(),
        })
    }
}

/// Table-shaped CSV: one row per (population, method), an accuracy (%) and
/// a kappa column per trait, both with 2 decimals.
pub fn performance_csv(rows: &[PerformanceRow]) -> String {
    let mut out = String::from("population,method");
    for t in Trait::ALL {
        let _ = write!(out, ",{t}_acc_pct,{t}_kappa");
    }
    out.push('\n');
    for row in rows {
        let _ = write!(out, "{},{}", row.population, row.method);
        for t in Trait::ALL {
            match row.cells.iter().find(|c| c.0 == *t) {
                Some((_, acc, kappa)) => {
                    let _ = write!(out, ",{:.2},{:.2}", 100.0 * acc, kappa);
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn mcnemar_csv(rows: &[(String, Trait, McNemar)]) -> String {
    let mut out = String::from("population,trait,b,c,statistic,p_value,exact,no_discordant\n");
    for (population, t, m) in rows {
        let _ = writeln!(
            out,
            "{population},{t},{},{},{:.6},{:.6e},{},{}",
            m.b, m.c, m.statistic, m.p_value, m.exact, m.no_discordant
        );
    }
    out
}

pub fn importance_csv(rows: &[ImportanceRow]) -> String {
    let mut out = String::from("population,trait,category,weight,dominant_daytype\n");
    for row in rows {
        for &c in Category::ALL {
            let _ = writeln!(
                out,
                "{},{},{c},{:.6},{}",
                row.population,
                row.trait_name,
                row.weight(c),
                row.dominant[c.index()]
            );
        }
    }
    out
}

pub fn distributions_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("country,feature,bin_left,bin_right,mass\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{:.6},{:.6},{:.6}", b.country, b.feature, b.bin_left, b.bin_right, b.mass);
    }
    out
}

/// Per-instance predictions as CSV (participant, repeat, truth, prediction).
pub fn records_csv(run: &EvalRun) -> String {
    let mut out = String::from("participant,repeat,truth,prediction\n");
    for r in &run.records {
        let _ = writeln!(out, "{},{},{},{}", r.participant, r.repeat, r.truth, r.prediction);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ClassLabel::{High, Low};

    #[test]
    fn kappa_from_confusion() {
        let c = Confusion { tp: 40, fn_: 20, fp: 10, tn: 30 };
        assert!((c.kappa().unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn kappa_constant_prediction_is_zero() {
        let truth = [High, Low, High, Low];
        let pred = [Low; 4];
        assert_eq!(accuracy(&truth, &pred).unwrap(), 0.5);
        assert_eq!(cohen_kappa(&truth, &pred).unwrap(), 0.0);
        assert_eq!(cohen_kappa(&[High, High], &[High, Low]), Err(EvalError::DegenerateTruth));
    }

    #[test]
    fn mcnemar_paths() {
        let m = mcnemar_counts(5, 5);
        assert_eq!((m.statistic, m.p_value, m.exact), (0.0, 1.0, true));
        let m = mcnemar_counts(10, 2);
        assert!((m.p_value - 2.0 * 79.0 / 4096.0).abs() < 1e-12);
        let m = mcnemar_counts(0, 0);
        assert!(m.no_discordant && m.p_value == 1.0);
        let m = mcnemar_counts(20, 10);
        assert!(!m.exact);
        assert!((m.statistic - 81.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn exact_p_log_path_matches_binomial_cdf() {
        use statrs::distribution::{Binomial, DiscreteCDF};
        let oracle = 2.0 * Binomial::new(0.5, 100).unwrap().cdf(30);
        assert!((mcnemar_exact_p(70, 30) - oracle).abs() < 1e-12);
    }

    #[test]
    fn population_names_round_trip() {
        for p in [
            Population::All,
            Population::GenderBalanced,
            Population::Female,
            Population::Male,
            Population::AgeBalanced,
            Population::Student,
            Population::NonStudent,
            Population::Country(Country::CL),
        ] {
            assert_eq!(p.as_str().parse::<Population>().unwrap(), p);
        }
        assert!("students".parse::<Population>().is_err());
    }

    #[test]
    fn performance_table_layout() {
        let row = PerformanceRow {
            population: "all".into(),
            method: Method::Method1,
            cells: Trait::ALL.iter().map(|&t| (t, 0.6949, 0.391)).collect(),
        };
        let csv = performance_csv(&[row]);
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("population,method,extraversion_acc_pct,extraversion_kappa"));
        assert!(lines.next().unwrap().starts_with("all,method1,69.49,0.39,"));
    }
}
