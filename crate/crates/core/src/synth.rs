//! Seeded synthetic cohorts: demographics, questionnaire responses and
//! sensor event logs with planted trait- and country-dependent behavior.
//!
//! Each behavior family has a per-participant latent value in units of the
//! between-person standard deviation:
//! `u = xi + sum(size * z_trait * (1 - m + m * country_factor))` with
//! `xi ~ N(0, 1)`. Families map their latent value onto daily generation
//! parameters (call rate, noise level, outing rate, ...).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveDate, Utc};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{extract, FeatureConfig, ParticipantStreams};
use crate::ingest::{self, CohortManifest, EventLog, ManifestEntry};
use crate::psychometrics::ScoringKey;
use crate::seed;
use crate::types::{
    AccelSample, AgeRange, CallDirection, Category, Country, DayPeriod, DayType, Education, Employment, Gender,
    Participant, Payload, Responses, SensorEvent, Trait, UnlockKind, ITEM_COUNT,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{0} must be finite")]
    NonFinite(String),
    #[error("{name} = {value} must lie in [0, 1]")]
    Probability { name: String, value: f64 },
    #[error("standard deviation of {trait_name} in {country} is negative")]
    NegativeStd { country: Country, trait_name: Trait },
    #[error("{country} lacks a score distribution for {trait_name}")]
    MissingTrait { country: Country, trait_name: Trait },
    #[error("study_days must be >= 1")]
    StudyDays,
    #[error("cohort has no participants")]
    EmptyCohort,
    #[error("exclusive opt-out rates sum to {0} > 1")]
    ExclusiveSum(f64),
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// Behavior family driven by a latent per-participant value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Calls,
    Unlocks,
    Noise,
    Light,
    Mobility,
    Activity,
    Battery,
}

impl Family {
    pub const ALL: [Family; 7] =
        [Family::Calls, Family::Unlocks, Family::Noise, Family::Light, Family::Mobility, Family::Activity, Family::Battery];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Calls => "calls",
            Family::Unlocks => "unlocks",
            Family::Noise => "noise",
            Family::Light => "light",
            Family::Mobility => "mobility",
            Family::Activity => "activity",
            Family::Battery => "battery",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountryConfig {
    pub count: usize,
    pub tz_offset_minutes: i32,
    /// (lat, lon) around which homes are placed.
    pub center: [f64; 2],
    /// Multiplier applied to modulated effects.
    pub factor: f64,
    /// Added to every noise level.
    pub noise_offset_db: f64,
    pub traits: BTreeMap<Trait, Gaussian>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Effect {
    pub family: Family,
    #[serde(rename = "trait")]
    pub trait_name: Trait,
    /// Latent shift per standard deviation of the trait.
    pub size: f64,
    /// 0: same effect in every country; 1: effect scaled by the country factor.
    #[serde(default)]
    pub modulation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropoutConfig {
    /// Participant-level probability of not sharing a category.
    pub opt_out: BTreeMap<Category, f64>,
    /// Categories whose opt-outs are assigned to disjoint participants.
    pub exclusive: Vec<Category>,
    /// Per-day probability that a shared category records nothing.
    pub gap: BTreeMap<Category, f64>,
    /// Technical gaps are redrawn while a participant's feature vector
    /// misses more than this fraction.
    pub max_missing_fraction: f64,
    pub max_redraws: usize,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        DropoutConfig {
            opt_out: BTreeMap::from([
                (Category::Location, 0.156),
                (Category::Noise, 0.094),
                (Category::Calls, 0.390),
                (Category::Pedometer, 0.469),
            ]),
            exclusive: vec![Category::Location, Category::Noise, Category::Calls],
            gap: BTreeMap::from([
                (Category::Accelerometer, 0.348),
                (Category::Unlocks, 0.3025),
                (Category::Light, 0.158),
            ]),
            max_missing_fraction: 0.30,
            max_redraws: 50,
        }
    }
}

impl DropoutConfig {
    /// No opt-outs and no gaps.
    pub fn none() -> DropoutConfig {
        DropoutConfig { opt_out: BTreeMap::new(), gap: BTreeMap::new(), ..DropoutConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub study_start: NaiveDate,
    pub study_days: u32,
    pub countries: BTreeMap<Country, CountryConfig>,
    pub effects: Vec<Effect>,
    pub dropout: DropoutConfig,
    /// Per-trait item noise (sd of an item around the participant's mean
    /// item value); smaller values raise Cronbach's alpha.
    pub item_noise: BTreeMap<Trait, f64>,
    /// Extra participants per country forced to opt out of location and
    /// noise, so the missingness filter drops them.
    pub planted_exclusions: BTreeMap<Country, usize>,
    pub burst_samples: usize,
    pub burst_rate_hz: f64,
}

const TABLE3: [[(f64, f64); 5]; 5] = [
    [(27.72, 9.58), (39.03, 7.26), (33.65, 6.16), (27.09, 8.23), (36.03, 6.15)],
    [(30.48, 7.37), (40.17, 5.43), (33.18, 5.45), (28.67, 7.83), (36.46, 4.79)],
    [(31.33, 5.91), (38.76, 4.67), (34.87, 5.67), (30.80, 6.36), (37.54, 4.26)],
    [(29.84, 6.75), (38.37, 4.58), (36.60, 5.00), (32.70, 7.51), (38.50, 4.62)],
    [(29.22, 6.83), (39.14, 5.58), (35.31, 4.71), (29.56, 8.23), (36.62, 5.31)],
];

/// Demographic counts per country (rows in `Country::ALL` order), columns in
/// each enum's `ALL` order.
const AGE: [[usize; 3]; 5] = [[6, 21, 0], [19, 48, 2], [1, 20, 4], [2, 13, 6], [2, 16, 6]];
const GENDER: [[usize; 2]; 5] = [[10, 17], [16, 53], [10, 15], [10, 11], [8, 16]];
const EDUCATION: [[usize; 8]; 5] = [
    [0, 0, 9, 3, 9, 3, 2, 1],
    [0, 0, 16, 18, 25, 6, 0, 4],
    [0, 0, 2, 14, 8, 0, 0, 1],
    [1, 0, 3, 13, 2, 2, 0, 0],
    [0, 0, 9, 12, 2, 1, 0, 0],
];
const EMPLOYMENT: [[usize; 8]; 5] = [
    [13, 3, 5, 4, 0, 0, 0, 2],
    // The Spanish employment counts sum to 67; one employed and one
    // homemaker participant complete it.
    [13, 9, 0, 39, 3, 0, 1, 4],
    [9, 3, 1, 6, 1, 1, 0, 4],
    [8, 2, 1, 5, 1, 1, 2, 1],
    [11, 1, 3, 7, 1, 0, 0, 1],
];
const COUNTS: [usize; 5] = [27, 69, 25, 21, 24];
const TZ: [i32; 5] = [0, 60, -300, -300, -180];
const CENTER: [[f64; 2]; 5] = [[51.507, -0.128], [40.417, -3.704], [-12.046, -77.043], [4.711, -74.072], [-33.449, -70.669]];

impl Default for GeneratorConfig {
    fn default() -> Self {
        let countries = Country::ALL
            .iter()
            .map(|&c| {
                let i = c.index();
                let european = matches!(c, Country::UK | Country::ES);
                let traits = Trait::ALL
                    .iter()
                    .map(|&t| (t, Gaussian { mean: TABLE3[i][t.index()].0, std: TABLE3[i][t.index()].1 }))
                    .collect();
                (
                    c,
                    CountryConfig {
                        count: COUNTS[i],
                        tz_offset_minutes: TZ[i],
                        center: CENTER[i],
                        factor: if european { 1.0 } else { -1.0 },
                        noise_offset_db: if european { -4.0 } else { 4.0 },
                        traits,
                    },
                )
            })
            .collect();
        GeneratorConfig {
            seed: 0,
            study_start: NaiveDate::from_ymd_opt(2018, 3, 5).expect("valid date"),
            study_days: 21,
            countries,
            effects: vec![
                Effect { family: Family::Noise, trait_name: Trait::Extraversion, size: 0.6, modulation: 0.0 },
                Effect { family: Family::Calls, trait_name: Trait::Extraversion, size: 0.6, modulation: 0.0 },
                Effect { family: Family::Mobility, trait_name: Trait::Openness, size: 0.6, modulation: 0.0 },
                Effect { family: Family::Unlocks, trait_name: Trait::Neuroticism, size: 0.6, modulation: 0.0 },
                Effect { family: Family::Activity, trait_name: Trait::Conscientiousness, size: 0.6, modulation: 0.0 },
                Effect { family: Family::Light, trait_name: Trait::Agreeableness, size: 0.6, modulation: 0.0 },
            ],
            dropout: DropoutConfig::default(),
            item_noise: Trait::ALL
                .iter()
                .map(|&t| {
                    let s = match t {
                        Trait::Extraversion => 0.76,
                        Trait::Agreeableness => 0.72,
                        Trait::Conscientiousness => 0.68,
                        Trait::Neuroticism => 0.72,
                        Trait::Openness => 0.62,
                    };
                    (t, s)
                })
                .collect(),
            planted_exclusions: BTreeMap::new(),
            burst_samples: 32,
            burst_rate_hz: 4.0,
        }
    }
}

fn check_probability(name: &str, value: f64) -> Result<(), ConfigError> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ConfigError::Probability { name: name.to_string(), value })
    }
}

impl GeneratorConfig {
    /// Default configuration with every effect removed.
    pub fn null() -> GeneratorConfig {
        GeneratorConfig { effects: Vec::new(), ..GeneratorConfig::default() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.study_days == 0 {
            return Err(ConfigError::StudyDays);
        }
        if self.countries.values().map(|c| c.count).sum::<usize>() == 0 {
            return Err(ConfigError::EmptyCohort);
        }
        for (&country, cc) in &self.countries {
            for &t in Trait::ALL {
                let g = cc.traits.get(&t).ok_or(ConfigError::MissingTrait { country, trait_name: t })?;
                if !g.mean.is_finite() || !g.std.is_finite() {
                    return Err(ConfigError::NonFinite(format!("{country} {t} score distribution")));
                }
                if g.std < 0.0 {
                    return Err(ConfigError::NegativeStd { country, trait_name: t });
                }
            }
            if !cc.factor.is_finite() || !cc.noise_offset_db.is_finite() {
                return Err(ConfigError::NonFinite(format!("{country} factor/noise offset")));
            }
            if !(cc.center[0].abs() <= 80.0 && cc.center[1].abs() <= 179.0) {
                return Err(ConfigError::Invalid(format!("{country} center out of range")));
            }
        }
        for e in &self.effects {
            if !e.size.is_finite() {
                return Err(ConfigError::NonFinite(format!("effect size of {} on {}", e.family.as_str(), e.trait_name)));
            }
            check_probability("effect modulation", e.modulation)?;
        }
        for (c, p) in &self.dropout.opt_out {
            check_probability(&format!("opt_out.{c}"), *p)?;
        }
        for (c, p) in &self.dropout.gap {
            check_probability(&format!("gap.{c}"), *p)?;
            if *c == Category::Battery && *p > 0.0 {
                return Err(ConfigError::Invalid("battery logs have no technical gaps".into()));
            }
        }
        check_probability("max_missing_fraction", self.dropout.max_missing_fraction)?;
        let exclusive: f64 = self.dropout.exclusive.iter().map(|c| self.dropout.opt_out.get(c).copied().unwrap_or(0.0)).sum();
        if exclusive > 1.0 + 1e-12 {
            return Err(ConfigError::ExclusiveSum(exclusive));
        }
        for (t, s) in &self.item_noise {
            if !s.is_finite() || *s < 0.0 {
                return Err(ConfigError::Invalid(format!("item_noise.{t} must be finite and >= 0")));
            }
        }
        if self.burst_samples < 2 || !(self.burst_rate_hz.is_finite() && self.burst_rate_hz > 0.0) {
            return Err(ConfigError::Invalid("burst_samples >= 2 and burst_rate_hz > 0 required".into()));
        }
        Ok(())
    }

    fn country(&self, c: Country) -> &CountryConfig {
        &self.countries[&c]
    }

    pub fn study_window(&self) -> (DateTime<Utc>, DateTime<Utc>) {
        let start = self.study_start.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
        (start, start + Duration::days(i64::from(self.study_days) + 2))
    }

    pub fn study_dates(&self) -> Vec<NaiveDate> {
        (0..self.study_days).map(|d| self.study_start + Duration::days(i64::from(d))).collect()
    }
}

/// Planted per-participant generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantedParams {
    pub call_rate: f64,
    pub unlock_rate: f64,
    pub noise_offset_db: f64,
    /// Expected night noise level while awake.
    pub noise_night_db: f64,
    pub lux_scale: f64,
    pub outing_rate: f64,
    pub bout_rate: f64,
    pub activity_scale: f64,
    pub topup_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub participant: String,
    pub country: Country,
    pub scores: [u8; 5],
    /// Trait scores standardized over the whole generated cohort.
    pub z: [f64; 5],
    /// Latent family values, in `Family::ALL` order.
    pub latent: [f64; 7],
    pub params: PlantedParams,
    pub opted_out: BTreeSet<Category>,
    pub gap_days: BTreeMap<Category, Vec<NaiveDate>>,
    pub planted_exclusion: bool,
    pub gap_redraws: usize,
    /// Missing fraction of the participant's feature vector.
    pub missing_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub manifest: CohortManifest,
    pub logs: Vec<EventLog>,
    pub truth: Vec<GroundTruth>,
}

impl SyntheticCohort {
    pub fn participants(&self) -> Vec<Participant> {
        self.manifest.participants()
    }

    /// Writes `manifest.csv`, `logs/<id>.jsonl` and `ground_truth.csv`.
    pub fn write_to_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir.join("logs"))?;
        let mut manifest = Vec::new();
        ingest::write_manifest(&mut manifest, &self.manifest)?;
        std::fs::write(dir.join("manifest.csv"), manifest)?;
        for (entry, log) in self.manifest.entries.iter().zip(&self.logs) {
            std::fs::write(dir.join(&entry.log_path), ingest::event_log_to_string(log))?;
        }
        std::fs::write(dir.join("ground_truth.csv"), ground_truth_csv(&self.truth))
    }
}

/// The planted-parameter table of a generated cohort.
pub fn ground_truth(cohort: &SyntheticCohort) -> &[GroundTruth] {
    &cohort.truth
}

pub fn ground_truth_csv(truth: &[GroundTruth]) -> String {
    let mut out = String::from("participant,country,planted_exclusion");
    for t in Trait::ALL {
        let _ = write!(out, ",{t}_score");
    }
    for t in Trait::ALL {
        let _ = write!(out, ",{t}_z");
    }
    for f in Family::ALL {
        let _ = write!(out, ",{}_latent", f.as_str());
    }
    out.push_str(
        ",call_rate,unlock_rate,noise_offset_db,noise_night_db,lux_scale,outing_rate,bout_rate,activity_scale,topup_prob",
    );
    out.push_str(",opted_out,gap_redraws,missing_fraction");
    for c in Category::ALL {
        let _ = write!(out, ",{c}_gap_days");
    }
    out.push('\n');
    for g in truth {
        let _ = write!(out, "{},{},{}", g.participant, g.country, g.planted_exclusion);
        for s in g.scores {
            let _ = write!(out, ",{s}");
        }
        for z in g.z {
            let _ = write!(out, ",{z:.6}");
        }
        for l in g.latent {
            let _ = write!(out, ",{l:.6}");
        }
        let p = &g.params;
        for v in [
            p.call_rate,
            p.unlock_rate,
            p.noise_offset_db,
            p.noise_night_db,
            p.lux_scale,
            p.outing_rate,
            p.bout_rate,
            p.activity_scale,
            p.topup_prob,
        ] {
            let _ = write!(out, ",{v:.6}");
        }
        let opted: Vec<&str> = g.opted_out.iter().map(|c| c.as_str()).collect();
        let _ = write!(out, ",{},{},{:.6}", opted.join(";"), g.gap_redraws, g.missing_fraction);
        for c in Category::ALL {
            let _ = write!(out, ",{}", g.gap_days.get(c).map_or(0, Vec::len));
        }
        out.push('\n');
    }
    out
}

/// Largest-remainder allocation of `n` items over `weights`.
fn allocate(weights: &[usize], n: usize) -> Vec<usize> {
    let total: usize = weights.iter().sum();
    if total == 0 {
        let mut out = vec![0; weights.len()];
        if let Some(first) = out.first_mut() {
            *first = n;
        }
        return out;
    }
    let exact: Vec<f64> = weights.iter().map(|&w| w as f64 * n as f64 / total as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = n - out.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        out[i] += 1;
    }
    out
}

/// A shuffled list holding `counts[i]` copies of `values[i]`.
fn shuffled_column<T: Copy>(values: &[T], counts: &[usize], rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut out: Vec<T> = values.iter().zip(counts).flat_map(|(&v, &k)| std::iter::repeat_n(v, k)).collect();
    out.shuffle(rng);
    out
}

struct Demographics {
    gender: Gender,
    age: AgeRange,
    education: Education,
    employment: Employment,
}

fn demographics(country: Country, n: usize, seed: u64) -> Vec<Demographics> {
    let i = country.index();
    let counts = |table: &[usize]| if table.iter().sum::<usize>() == n { table.to_vec() } else { allocate(table, n) };
    let mut rng = seed::rng(seed, &[seed::tag("demographics"), i as u64]);
    let gender = shuffled_column(Gender::ALL, &counts(&GENDER[i]), &mut rng);
    let age = shuffled_column(AgeRange::ALL, &counts(&AGE[i]), &mut rng);
    let education = shuffled_column(Education::ALL, &counts(&EDUCATION[i]), &mut rng);
    let employment = shuffled_column(Employment::ALL, &counts(&EMPLOYMENT[i]), &mut rng);
    (0..n)
        .map(|k| Demographics { gender: gender[k], age: age[k], education: education[k], employment: employment[k] })
        .collect()
}

/// `n` scores whose sample mean and standard deviation (before rounding
/// and clipping) equal the target exactly.
fn calibrated_scores(g: Gaussian, n: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let draws: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let m = draws.iter().sum::<f64>() / n.max(1) as f64;
    let sd = if n >= 2 { (draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    draws
        .iter()
        .map(|d| {
            let z = if sd > 0.0 { (d - m) / sd } else { 0.0 };
            (g.mean + g.std * z).round().clamp(10.0, 50.0) as u8
        })
        .collect()
}

/// Ten trait-direction item values in 1..=5 summing to `score`.
fn item_values(score: u8, noise: f64, rng: &mut ChaCha8Rng) -> [u8; 10] {
    let m = f64::from(score) / 10.0;
    let mut v = [0u8; 10];
    for x in v.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *x = (m + noise * e).round().clamp(1.0, 5.0) as u8;
    }
    loop {
        let sum: i32 = v.iter().map(|&x| i32::from(x)).sum();
        let diff = i32::from(score) - sum;
        if diff == 0 {
            return v;
        }
        let movable: Vec<usize> = (0..10).filter(|&i| if diff > 0 { v[i] < 5 } else { v[i] > 1 }).collect();
        let i = movable[rng.random_range(0..movable.len())];
        if diff > 0 {
            v[i] += 1;
        } else {
            v[i] -= 1;
        }
    }
}

fn responses_for(scores: [u8; 5], noise: &BTreeMap<Trait, f64>, key: &ScoringKey, rng: &mut ChaCha8Rng) -> Responses {
    let mut raw = [0i64; ITEM_COUNT];
    for &t in Trait::ALL {
        let values = item_values(scores[t.index()], noise.get(&t).copied().unwrap_or(0.9), rng);
        for (&item, &v) in key.items_of(t).iter().zip(&values) {
            raw[item] = i64::from(key.response_for(item, v));
        }
    }
    Responses::new(&raw).expect("responses in 1..=5")
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const NOISE_BASE_DB: [f64; 4] = [52.0, 56.0, 53.0, 44.0];
const LUX_BASE: [f64; 4] = [250.0, 500.0, 120.0, 20.0];
const H: i64 = 3600;

fn planted_params(latent: &[f64; 7], noise_offset: f64) -> PlantedParams {
    let u = |f: Family| latent[f as usize];
    let noise_offset_db = noise_offset + 3.0 * u(Family::Noise);
    PlantedParams {
        call_rate: 4.0 * (0.35 * u(Family::Calls)).exp(),
        unlock_rate: 35.0 * (0.3 * u(Family::Unlocks)).exp(),
        noise_offset_db,
        noise_night_db: NOISE_BASE_DB[3] + noise_offset_db,
        lux_scale: (0.4 * u(Family::Light)).exp(),
        outing_rate: 1.2 * (0.4 * u(Family::Mobility)).exp(),
        bout_rate: 1.5 * (0.35 * u(Family::Activity)).exp(),
        activity_scale: (0.25 * u(Family::Activity)).exp(),
        topup_prob: logistic((0.3f64 / 0.7).ln() + 0.6 * u(Family::Battery)),
    }
}

struct Person<'a> {
    participant: &'a Participant,
    params: &'a PlantedParams,
    home: (f64, f64),
    work: (f64, f64),
    others: Vec<(f64, f64)>,
    contacts: usize,
    has_work: bool,
}

fn offset_point(origin: (f64, f64), dist_m: f64, bearing: f64) -> (f64, f64) {
    let dlat = dist_m * bearing.cos() / 111_320.0;
    let dlon = dist_m * bearing.sin() / (111_320.0 * origin.0.to_radians().cos());
    (origin.0 + dlat, origin.1 + dlon)
}

fn round_to(v: f64, digits: i32) -> f64 {
    let s = 10f64.powi(digits);
    (v * s).round() / s
}

fn period_of(secs: i64) -> DayPeriod {
    DayPeriod::PARTS
        .into_iter()
        .find(|p| {
            let (lo, hi) = p.window_secs();
            secs >= lo && secs < hi
        })
        .expect("secs within [4h, 28h)")
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    mean + sd * rng.sample::<f64, _>(StandardNormal)
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng) as usize
}

/// Events of one local date, as (owning date, event).
fn simulate_day(
    person: &Person<'_>,
    date: NaiveDate,
    battery: &mut f64,
    burst: (usize, f64),
    rng: &mut ChaCha8Rng,
) -> Vec<SensorEvent> {
    let p = person.params;
    let tz = person.participant.tz_offset_minutes;
    let weekend = DayType::of_date(date) == DayType::Weekend;
    let midnight = date.and_hms_opt(0, 0, 0).expect("midnight").and_utc() - Duration::minutes(i64::from(tz));
    let at = |secs: i64| midnight + Duration::seconds(secs);
    let mut events = Vec::new();
    let mut push = |secs: i64, payload: Payload| events.push(SensorEvent { timestamp: at(secs), payload });

    let hours = |h: f64| (h * H as f64).round() as i64;
    let wake = if weekend { hours(normal(rng, 9.0, 0.75).clamp(5.0, 11.0)) } else { hours(normal(rng, 7.0, 0.5).clamp(5.0, 11.0)) };
    let sleep = if weekend {
        hours(normal(rng, 24.5, 0.75).clamp(22.5, 27.0))
    } else {
        hours(normal(rng, 23.5, 0.6).clamp(22.5, 27.0))
    };
    let awake = |s: i64| s >= wake && s < sleep;

    // Place schedule: (start, end, place).
    let mut intervals: Vec<(i64, i64, (f64, f64))> = Vec::new();
    if person.has_work && !weekend {
        let start = hours(normal(rng, 9.0, 0.3)).max(wake + H / 2);
        let end = hours(normal(rng, 17.0, 0.4)).min(sleep - H);
        if end > start {
            intervals.push((start, end, person.work));
        }
    }
    let n_out = poisson(rng, p.outing_rate * if weekend { 1.5 } else { 1.0 });
    for _ in 0..n_out {
        let dur = rng.random_range(45..=150) * 60;
        let lo = wake + H / 2;
        let hi = sleep - dur - H / 2;
        if hi <= lo {
            continue;
        }
        let start = rng.random_range(lo..hi);
        let place = person.others[rng.random_range(0..person.others.len())];
        let clash = intervals.iter().any(|&(s, e, _)| start < e + 900 && s < start + dur + 900);
        if !clash {
            intervals.push((start, start + dur, place));
        }
    }
    let where_at = |s: i64| intervals.iter().find(|&&(a, b, _)| s >= a && s < b).map_or(person.home, |iv| iv.2);

    let day_noise = normal(rng, 0.0, 2.0);
    let phase = rng.random_range(0..900);
    let mut s = 4 * H + phase;
    while s < 28 * H {
        let part = period_of(s).index();
        let (lat, lon) = where_at(s);
        let (lat, lon) = offset_point((lat, lon), normal(rng, 0.0, 8.0).abs(), rng.random_range(0.0..std::f64::consts::TAU));
        push(s, Payload::Location { lat: round_to(lat, 6), lon: round_to(lon, 6), accuracy_m: 10.0 });

        let asleep_drop = if awake(s) { 0.0 } else { 10.0 };
        let db = NOISE_BASE_DB[part] + p.noise_offset_db + day_noise + normal(rng, 0.0, 3.0) - asleep_drop;
        push(s + 1, Payload::Noise { level_db: round_to(db.max(20.0), 1) });

        let work_boost = if where_at(s) == person.work { 1.5 } else { 1.0 };
        let dark = if awake(s) { 1.0 } else { 0.01 };
        let lux = LUX_BASE[part] * p.lux_scale * work_boost * dark * normal(rng, 0.0, 0.5).exp();
        push(s + 2, Payload::Light { lux: round_to(lux, 1) });
        s += 900;
    }

    // Battery: a reading every 30 minutes; charges overnight and sometimes
    // during the day.
    let topup = rng.random_bool(p.topup_prob.clamp(0.0, 1.0)).then(|| {
        let start = rng.random_range((wake + H)..(sleep - 2 * H).max(wake + H + 1));
        (start, start + H)
    });
    let mut s = 4 * H;
    while s < 28 * H {
        let overnight = !awake(s);
        let charging = overnight || topup.is_some_and(|(a, b)| s >= a && s < b);
        if charging {
            *battery = (*battery + 20.0).min(100.0);
        } else {
            *battery = (*battery - normal(rng, 2.5, 0.5).max(0.5)).max(1.0);
        }
        push(s + 3, Payload::Battery { level: round_to(*battery, 1), charging });
        s += 1800;
    }

    let n_unlock = poisson(rng, p.unlock_rate * if weekend { 1.1 } else { 1.0 });
    for _ in 0..n_unlock {
        let t = rng.random_range(wake..sleep);
        let dur = (normal(rng, 90f64.ln(), 0.8).exp().round() as i64).max(5);
        push(t, Payload::Unlocks { kind: UnlockKind::Unlock });
        push((t + dur).min(28 * H - 1), Payload::Unlocks { kind: UnlockKind::Lock });
    }

    let n_calls = poisson(rng, p.call_rate);
    let call_lo = wake.max(8 * H);
    let call_hi = sleep.min(23 * H).max(call_lo + 1);
    for _ in 0..n_calls {
        let t = rng.random_range(call_lo..call_hi);
        let r: f64 = rng.random();
        let direction = match r {
            r if r < 0.45 => CallDirection::Incoming,
            r if r < 0.85 => CallDirection::Outgoing,
            r if r < 0.95 => CallDirection::Missed,
            _ => CallDirection::Rejected,
        };
        let duration_s = match direction {
            CallDirection::Incoming | CallDirection::Outgoing => normal(rng, 120f64.ln(), 0.9).exp().round(),
            _ => 0.0,
        };
        // Zipf-like preference for a few contacts.
        let weights: Vec<f64> = (0..person.contacts).map(|k| 1.0 / (k + 1) as f64).collect();
        let total: f64 = weights.iter().sum();
        let mut pick = rng.random::<f64>() * total;
        let mut contact = person.contacts - 1;
        for (k, w) in weights.iter().enumerate() {
            if pick < *w {
                contact = k;
                break;
            }
            pick -= w;
        }
        push(t, Payload::Calls { direction, duration_s, correspondent: format!("c{contact:02}") });
    }

    // Activity bouts: an accelerometer burst and a pedometer record each.
    let (n_samples, rate_hz) = burst;
    for part in DayPeriod::PARTS {
        let (lo, hi) = part.window_secs();
        let (lo, hi) = (lo.max(wake), hi.min(sleep));
        if hi - lo < 600 {
            continue;
        }
        let share = (hi - lo) as f64 / (6 * H) as f64;
        let n = 1 + poisson(rng, p.bout_rate * share);
        for _ in 0..n {
            let t = rng.random_range(lo..hi - 60);
            let f = normal(rng, 1.8, 0.15) * (0.8 + 0.2 * p.activity_scale);
            let amp = 1.2 * p.activity_scale * normal(rng, 0.0, 0.2).exp();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let samples = (0..n_samples)
                .map(|k| {
                    let dt_ms = (k as f64 * 1000.0 / rate_hz).round() as u32;
                    let tt = f64::from(dt_ms) / 1000.0;
                    AccelSample {
                        dt_ms,
                        x: round_to(normal(rng, 0.0, 0.2), 3),
                        y: round_to(normal(rng, 0.0, 0.2), 3),
                        z: round_to(9.81 + amp * (std::f64::consts::TAU * f * tt + phi).sin() + normal(rng, 0.0, 0.2), 3),
                    }
                })
                .collect();
            push(t, Payload::Accelerometer { samples });
            let steps = (normal(rng, 600f64.ln(), 0.5).exp() * p.activity_scale).round() as u32;
            push(t + 30, Payload::Pedometer { steps });
        }
    }
    events
}

struct Draft {
    participant: Participant,
    latent: [f64; 7],
    z: [f64; 5],
    scores: [u8; 5],
    params: PlantedParams,
    opted_out: BTreeSet<Category>,
    planted_exclusion: bool,
    global_index: usize,
}

fn finish_participant(draft: Draft, cfg: &GeneratorConfig, center: [f64; 2]) -> (Participant, EventLog, GroundTruth) {
    let seed = cfg.seed;
    let mut rng = seed::rng(seed, &[seed::tag("behavior"), draft.global_index as u64]);
    let home = offset_point((center[0], center[1]), rng.random_range(0.0..8000.0), rng.random_range(0.0..std::f64::consts::TAU));
    let work = offset_point(home, rng.random_range(2000.0..12000.0), rng.random_range(0.0..std::f64::consts::TAU));
    let others =
        (0..4).map(|_| offset_point(home, rng.random_range(600.0..6000.0), rng.random_range(0.0..std::f64::consts::TAU))).collect();
    let person = Person {
        participant: &draft.participant,
        params: &draft.params,
        home,
        work,
        others,
        contacts: 20,
        has_work: matches!(
            draft.participant.employment,
            Employment::Employed | Employment::BachelorStudent | Employment::MasterStudent
        ),
    };
    let mut battery = 80.0;
    let days: Vec<(NaiveDate, Vec<SensorEvent>)> = cfg
        .study_dates()
        .into_iter()
        .map(|d| (d, simulate_day(&person, d, &mut battery, (cfg.burst_samples, cfg.burst_rate_hz), &mut rng)))
        .collect();

    let streams: BTreeSet<Category> = Category::ALL.iter().copied().filter(|c| !draft.opted_out.contains(c)).collect();
    let feature_cfg = FeatureConfig::default();
    let mut redraws = 0;
    let (events, gap_days, missing_fraction) = loop {
        let mut grng = seed::rng(seed, &[seed::tag("gaps"), draft.global_index as u64, redraws as u64]);
        let mut gap_days: BTreeMap<Category, Vec<NaiveDate>> = BTreeMap::new();
        for (&c, &prob) in &cfg.dropout.gap {
            if !streams.contains(&c) {
                continue;
            }
            let days: Vec<NaiveDate> = days.iter().map(|d| d.0).filter(|_| grng.random_bool(prob)).collect();
            gap_days.insert(c, days);
        }
        let mut events: Vec<SensorEvent> = days
            .iter()
            .flat_map(|(d, evs)| {
                let (gap_days, streams) = (&gap_days, &streams);
                evs.iter().filter(move |e| {
                    let c = e.category();
                    streams.contains(&c) && !gap_days.get(&c).is_some_and(|g| g.contains(d))
                })
            })
            .cloned()
            .collect();
        ingest::sort_events(&mut events);
        let x = extract(
            ParticipantStreams { tz_offset_minutes: draft.participant.tz_offset_minutes, events: &events, streams: &streams },
            &feature_cfg,
        );
        let missing = x.vector.missing_fraction();
        if draft.planted_exclusion || missing <= cfg.dropout.max_missing_fraction || redraws >= cfg.dropout.max_redraws {
            break (events, gap_days, missing);
        }
        redraws += 1;
    };

    let log = EventLog { participant_id: draft.participant.id.clone(), events, streams, ..Default::default() };
    let truth = GroundTruth {
        participant: draft.participant.id.clone(),
        country: draft.participant.country,
        scores: draft.scores,
        z: draft.z,
        latent: draft.latent,
        params: draft.params,
        opted_out: draft.opted_out,
        gap_days,
        planted_exclusion: draft.planted_exclusion,
        gap_redraws: redraws,
        missing_fraction,
    };
    (draft.participant, log, truth)
}

/// Generates a cohort; identical configs give identical cohorts.
pub fn generate(cfg: &GeneratorConfig) -> Result<SyntheticCohort, ConfigError> {
    cfg.validate()?;
    let key = ScoringKey::ipip50();
    let seed = cfg.seed;

    // Demographics and trait scores per country.
    struct Base {
        participant: Participant,
        scores: [u8; 5],
        planted_exclusion: bool,
    }
    let mut bases: Vec<Base> = Vec::new();
    for (&country, cc) in &cfg.countries {
        let extra = cfg.planted_exclusions.get(&country).copied().unwrap_or(0);
        let n = cc.count;
        let demo = demographics(country, n + extra, seed);
        let mut per_trait: Vec<Vec<u8>> = Vec::new();
        for &t in Trait::ALL {
            let mut rng = seed::rng(seed, &[seed::tag("traits"), country.index() as u64, t.index() as u64]);
            let mut scores = calibrated_scores(cc.traits[&t], n, &mut rng);
            scores.extend(calibrated_scores(cc.traits[&t], extra, &mut rng));
            per_trait.push(scores);
        }
        for (k, d) in demo.into_iter().enumerate() {
            let scores: [u8; 5] = std::array::from_fn(|t| per_trait[t][k]);
            let planted = k >= n;
            let id = if planted { format!("{country}X{:02}", k - n + 1) } else { format!("{country}{:03}", k + 1) };
            let mut rng = seed::rng(seed, &[seed::tag("responses"), country.index() as u64, k as u64]);
            let responses = responses_for(scores, &cfg.item_noise, &key, &mut rng);
            bases.push(Base {
                participant: Participant {
                    id,
                    country,
                    gender: d.gender,
                    age_range: d.age,
                    education: d.education,
                    employment: d.employment,
                    responses,
                    tz_offset_minutes: cc.tz_offset_minutes,
                },
                scores,
                planted_exclusion: planted,
            });
        }
    }

    // Pooled standardization of the trait scores.
    let n_all = bases.len() as f64;
    let z_of: Vec<(f64, f64)> = Trait::ALL
        .iter()
        .map(|t| {
            let v: Vec<f64> = bases.iter().map(|b| f64::from(b.scores[t.index()])).collect();
            let m = v.iter().sum::<f64>() / n_all;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n_all - 1.0).max(1.0)).sqrt();
            (m, if sd > 0.0 { sd } else { 1.0 })
        })
        .collect();

    // Opt-outs: exact counts, exclusive categories on disjoint participants.
    let regular: Vec<usize> = (0..bases.len()).filter(|&i| !bases[i].planted_exclusion).collect();
    let mut opted: Vec<BTreeSet<Category>> = vec![BTreeSet::new(); bases.len()];
    let n_reg = regular.len();
    let mut orng = seed::rng(seed, &[seed::tag("opt_out")]);
    let mut order = regular.clone();
    order.shuffle(&mut orng);
    let mut at = 0;
    for c in &cfg.dropout.exclusive {
        let k = (cfg.dropout.opt_out.get(c).copied().unwrap_or(0.0) * n_reg as f64).round() as usize;
        let k = k.min(n_reg - at);
        for &i in &order[at..at + k] {
            opted[i].insert(*c);
        }
        at += k;
    }
    for (&c, &prob) in &cfg.dropout.opt_out {
        if cfg.dropout.exclusive.contains(&c) {
            continue;
        }
        let mut order = regular.clone();
        order.shuffle(&mut seed::rng(seed, &[seed::tag("opt_out"), seed::tag(c.as_str())]));
        let k = (prob * n_reg as f64).round() as usize;
        for &i in order.iter().take(k) {
            opted[i].insert(c);
        }
    }
    for (i, b) in bases.iter().enumerate() {
        if b.planted_exclusion {
            opted[i] = BTreeSet::from([Category::Location, Category::Noise]);
        }
    }

    let drafts: Vec<Draft> = bases
        .into_iter()
        .zip(opted)
        .enumerate()
        .map(|(gi, (b, opted_out))| {
            let cc = cfg.country(b.participant.country);
            let z: [f64; 5] = std::array::from_fn(|t| (f64::from(b.scores[t]) - z_of[t].0) / z_of[t].1);
            let mut rng = seed::rng(seed, &[seed::tag("latent"), gi as u64]);
            let latent: [f64; 7] = std::array::from_fn(|fi| {
                let xi: f64 = rng.sample(StandardNormal);
                let family = Family::ALL[fi];
                let shift: f64 = cfg
                    .effects
                    .iter()
                    .filter(|e| e.family == family)
                    .map(|e| e.size * z[e.trait_name.index()] * (1.0 - e.modulation + e.modulation * cc.factor))
                    .sum();
                xi + shift
            });
            let params = planted_params(&latent, cc.noise_offset_db);
            Draft {
                participant: b.participant,
                latent,
                z,
                scores: b.scores,
                params,
                opted_out,
                planted_exclusion: b.planted_exclusion,
                global_index: gi,
            }
        })
        .collect();

    let centers: Vec<[f64; 2]> = drafts.iter().map(|d| cfg.country(d.participant.country).center).collect();
    let finished: Vec<(Participant, EventLog, GroundTruth)> = drafts
        .into_par_iter()
        .zip(centers)
        .map(|(d, center)| finish_participant(d, cfg, center))
        .collect();

    let (study_start, study_end) = cfg.study_window();
    let mut entries = Vec::with_capacity(finished.len());
    let mut logs = Vec::with_capacity(finished.len());
    let mut truth = Vec::with_capacity(finished.len());
    for (participant, log, gt) in finished {
        let log_path = PathBuf::from("logs").join(format!("{}.jsonl", participant.id));
        entries.push(ManifestEntry { participant, log_path });
        logs.push(log);
        truth.push(gt);
    }
    let manifest = CohortManifest { study_start, study_end, entries, base_dir: PathBuf::from(".") };
    Ok(SyntheticCohort { manifest, logs, truth })
}
