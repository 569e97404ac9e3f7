//! Shared domain vocabulary: participants, sensor events, calendar buckets,
//! personality traits and the median split that turns trait scores into
//! binary class labels.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, NaiveDate, Timelike, Utc, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of questionnaire items.
pub const ITEM_COUNT: usize = 50;
/// Lowest and highest attainable trait score (10 items rated 1..=5).
pub const MIN_TRAIT_SCORE: u8 = 10;
pub const MAX_TRAIT_SCORE: u8 = 50;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid {kind} value `{value}`")]
pub struct UnknownVariant {
    pub kind: &'static str,
    pub value: String,
}

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident, $kind:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            /// Position of the variant in [`Self::ALL`].
            pub fn index(self) -> usize {
                self as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = UnknownVariant;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim() {
                    $($text => Ok($name::$variant),)+
                    other => Err(UnknownVariant { kind: $kind, value: other.to_string() }),
                }
            }
        }
    };
}

string_enum!(
    /// Country of residence of a participant.
    Country, "country", {
        UK => "UK",
        ES => "ES",
        PE => "PE",
        CO => "CO",
        CL => "CL",
    }
);

string_enum!(Gender, "gender", { Female => "female", Male => "male" });

string_enum!(
    AgeRange, "age_range", {
        From18To25 => "18-25",
        From26To34 => "26-34",
        From35To44 => "35-44",
    }
);

string_enum!(
    Education, "education", {
        NoEducation => "no_education",
        Primary => "primary",
        Secondary => "secondary",
        Technical => "technical",
        Bachelor => "bachelor",
        Master => "master",
        Phd => "phd",
        Other => "other",
    }
);

string_enum!(
    Employment, "employment", {
        Employed => "employed",
        UnemployedJobHunting => "unemployed_job_hunting",
        UnemployedNotJobHunting => "unemployed_not_job_hunting",
        BachelorStudent => "bachelor_student",
        MasterStudent => "master_student",
        Retired => "retired",
        Homemaker => "homemaker",
        Other => "other",
    }
);

impl Employment {
    pub fn is_student(self) -> bool {
        matches!(self, Employment::BachelorStudent | Employment::MasterStudent)
    }
}

string_enum!(
    /// The eight sensing data categories.
    Category, "category", {
        Accelerometer => "accelerometer",
        Battery => "battery",
        Calls => "calls",
        Unlocks => "unlocks",
        Light => "light",
        Location => "location",
        Noise => "noise",
        Pedometer => "pedometer",
    }
);

string_enum!(
    Trait, "trait", {
        Extraversion => "extraversion",
        Agreeableness => "agreeableness",
        Conscientiousness => "conscientiousness",
        Neuroticism => "neuroticism",
        Openness => "openness",
    }
);

string_enum!(
    DayPeriod, "day_period", {
        Morning => "morning",
        Afternoon => "afternoon",
        Evening => "evening",
        Night => "night",
        EntireDay => "entire_day",
    }
);

impl DayPeriod {
    /// The four periods that tile a day.
    pub const PARTS: [DayPeriod; 4] = [
        DayPeriod::Morning,
        DayPeriod::Afternoon,
        DayPeriod::Evening,
        DayPeriod::Night,
    ];

    /// Local-time window of the period as seconds after the owning date's
    /// midnight. Night runs past midnight into the next calendar date.
    pub fn window_secs(self) -> (i64, i64) {
        match self {
            DayPeriod::Morning => (4 * 3600, 12 * 3600),
            DayPeriod::Afternoon => (12 * 3600, 18 * 3600),
            DayPeriod::Evening => (18 * 3600, 22 * 3600),
            DayPeriod::Night => (22 * 3600, 28 * 3600),
            DayPeriod::EntireDay => (4 * 3600, 28 * 3600),
        }
    }
}

string_enum!(DayType, "day_type", { Weekday => "weekday", Weekend => "weekend" });

impl DayType {
    pub fn of_date(date: NaiveDate) -> DayType {
        match date.weekday() {
            Weekday::Sat | Weekday::Sun => DayType::Weekend,
            _ => DayType::Weekday,
        }
    }
}

string_enum!(ClassLabel, "label", { Low => "low", High => "high" });

string_enum!(
    /// Cross-validation protocol: leave-one-country-out or leave-one-subset-out.
    Method, "method", {
        Method1 => "method1",
        Method2 => "method2",
    }
);

/// The local day bucket an instant belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Bucket {
    pub date: NaiveDate,
    pub period: DayPeriod,
    pub day_type: DayType,
}

/// Local time as naive seconds since the Unix epoch (UTC + fixed offset).
pub fn local_seconds(ts: DateTime<Utc>, tz_offset_minutes: i32) -> i64 {
    ts.timestamp() + i64::from(tz_offset_minutes) * 60
}

/// Maps an instant to (owning local date, period, day type).
///
/// Instants in [00:00, 04:00) local time belong to the night of the previous
/// date, so one night is contiguous.
pub fn assign_bucket(ts: DateTime<Utc>, tz_offset_minutes: i32) -> Bucket {
    let local = ts.naive_utc() + Duration::minutes(i64::from(tz_offset_minutes));
    let secs = i64::from(local.time().num_seconds_from_midnight());
    let (date, secs) = if secs < 4 * 3600 {
        (local.date().pred_opt().expect("date in range"), secs + 24 * 3600)
    } else {
        (local.date(), secs)
    };
    let period = DayPeriod::PARTS
        .into_iter()
        .find(|p| {
            let (lo, hi) = p.window_secs();
            secs >= lo && secs < hi
        })
        .expect("periods tile the day");
    Bucket { date, period, day_type: DayType::of_date(date) }
}

/// Seconds since the owning date's local midnight, in [4h, 28h).
pub fn seconds_into_day(ts: DateTime<Utc>, tz_offset_minutes: i32) -> i64 {
    let local = ts.naive_utc() + Duration::minutes(i64::from(tz_offset_minutes));
    let secs = i64::from(local.time().num_seconds_from_midnight());
    if secs < 4 * 3600 {
        secs + 24 * 3600
    } else {
        secs
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParticipantError {
    #[error("expected {ITEM_COUNT} responses, got {0}")]
    ResponseCount(usize),
    #[error("response {item} is {value}, outside 1..=5")]
    ResponseRange { item: usize, value: i64 },
    #[error("timezone offset {0} min outside +/-14h")]
    Offset(i32),
    #[error("participant id is empty")]
    EmptyId,
}

/// Fifty Likert responses, each in 1..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Responses([u8; ITEM_COUNT]);

impl Responses {
    pub fn new(values: &[i64]) -> Result<Self, ParticipantError> {
        if values.len() != ITEM_COUNT {
            return Err(ParticipantError::ResponseCount(values.len()));
        }
        let mut out = [0u8; ITEM_COUNT];
        for (i, &v) in values.iter().enumerate() {
            if !(1..=5).contains(&v) {
                return Err(ParticipantError::ResponseRange { item: i + 1, value: v });
            }
            out[i] = v as u8;
        }
        Ok(Responses(out))
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Participant {
    pub id: String,
    pub country: Country,
    pub gender: Gender,
    pub age_range: AgeRange,
    pub education: Education,
    pub employment: Employment,
    pub responses: Responses,
    pub tz_offset_minutes: i32,
}

impl Participant {
    pub fn validate(&self) -> Result<(), ParticipantError> {
        if self.id.trim().is_empty() {
            return Err(ParticipantError::EmptyId);
        }
        if self.tz_offset_minutes.abs() > 14 * 60 {
            return Err(ParticipantError::Offset(self.tz_offset_minutes));
        }
        Ok(())
    }
}

/// One accelerometer sample; serialized as `[dt_ms, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(u32, f64, f64, f64)", into = "(u32, f64, f64, f64)")]
pub struct AccelSample {
    /// Offset from the burst timestamp.
    pub dt_ms: u32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<(u32, f64, f64, f64)> for AccelSample {
    fn from((dt_ms, x, y, z): (u32, f64, f64, f64)) -> Self {
        AccelSample { dt_ms, x, y, z }
    }
}

impl From<AccelSample> for (u32, f64, f64, f64) {
    fn from(s: AccelSample) -> Self {
        (s.dt_ms, s.x, s.y, s.z)
    }
}

impl AccelSample {
    pub fn magnitude(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

string_enum!(CallDirection, "call direction", {
    Incoming => "incoming",
    Outgoing => "outgoing",
    Missed => "missed",
    Rejected => "rejected",
});

string_enum!(UnlockKind, "unlock kind", {
    ScreenOn => "screen_on",
    ScreenOff => "screen_off",
    Unlock => "unlock",
    Lock => "lock",
});

/// Category-specific payload of a sensor record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "category", rename_all = "snake_case")]
pub enum Payload {
    Accelerometer {
        /// (dt_ms, x, y, z) in m/s^2.
        samples: Vec<AccelSample>,
    },
    Battery {
        level: f64,
        charging: bool,
    },
    Calls {
        direction: CallDirection,
        duration_s: f64,
        correspondent: String,
    },
    Unlocks {
        kind: UnlockKind,
    },
    Light {
        lux: f64,
    },
    Location {
        lat: f64,
        lon: f64,
        accuracy_m: f64,
    },
    Noise {
        level_db: f64,
    },
    Pedometer {
        steps: u32,
    },
}

impl Payload {
    pub fn category(&self) -> Category {
        match self {
            Payload::Accelerometer { .. } => Category::Accelerometer,
            Payload::Battery { .. } => Category::Battery,
            Payload::Calls { .. } => Category::Calls,
            Payload::Unlocks { .. } => Category::Unlocks,
            Payload::Light { .. } => Category::Light,
            Payload::Location { .. } => Category::Location,
            Payload::Noise { .. } => Category::Noise,
            Payload::Pedometer { .. } => Category::Pedometer,
        }
    }

    /// Checks value ranges that the type system does not enforce.
    pub fn validate(&self) -> Result<(), String> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(format!("{name} must be finite and >= 0, got {v}"))
            }
        };
        match self {
            Payload::Accelerometer { samples } => {
                if samples.is_empty() {
                    return Err("accelerometer burst has no samples".into());
                }
                if samples.iter().any(|s| !(s.x.is_finite() && s.y.is_finite() && s.z.is_finite())) {
                    return Err("non-finite acceleration".into());
                }
                Ok(())
            }
            Payload::Battery { level, .. } => {
                if level.is_finite() && (0.0..=100.0).contains(level) {
                    Ok(())
                } else {
                    Err(format!("battery level {level} outside 0..=100"))
                }
            }
            Payload::Calls { duration_s, .. } => finite_nonneg("call duration", *duration_s),
            Payload::Unlocks { .. } | Payload::Pedometer { .. } => Ok(()),
            Payload::Light { lux } => finite_nonneg("illuminance", *lux),
            Payload::Location { lat, lon, accuracy_m } => {
                if !(lat.is_finite() && (-90.0..=90.0).contains(lat)) {
                    return Err(format!("latitude {lat} out of range"));
                }
                if !(lon.is_finite() && (-180.0..=180.0).contains(lon)) {
                    return Err(format!("longitude {lon} out of range"));
                }
                finite_nonneg("accuracy", *accuracy_m)
            }
            Payload::Noise { level_db } => finite_nonneg("noise level", *level_db),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorEvent {
    pub timestamp: DateTime<Utc>,
    pub payload: Payload,
}

impl SensorEvent {
    pub fn category(&self) -> Category {
        self.payload.category()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("trait score {0} outside 10..=50")]
    ScoreRange(u8),
    #[error("median split needs at least 2 participants, got {0}")]
    TooFew(usize),
    #[error("median split of {trait_name} is degenerate: {low} low / {high} high")]
    DegenerateSplit { trait_name: Trait, low: usize, high: usize },
}

/// Per-trait integer scores, each in 10..=50.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraitScores([u8; 5]);

impl TraitScores {
    pub fn new(scores: [u8; 5]) -> Result<Self, LabelError> {
        for &s in &scores {
            if !(MIN_TRAIT_SCORE..=MAX_TRAIT_SCORE).contains(&s) {
                return Err(LabelError::ScoreRange(s));
            }
        }
        Ok(TraitScores(scores))
    }

    pub fn get(&self, t: Trait) -> u8 {
        self.0[t.index()]
    }

    pub fn as_array(&self) -> [u8; 5] {
        self.0
    }
}

/// Result of splitting one trait at its sample median.
#[derive(Debug, Clone, PartialEq)]
pub struct MedianSplit {
    pub median: f64,
    pub labels: Vec<ClassLabel>,
    pub n_low: usize,
    pub n_high: usize,
}

/// Standard sample median (mean of the two middle values for even n).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Labels every value `low` when it is at or below the median, else `high`.
pub fn median_split(values: &[f64], trait_name: Trait) -> Result<MedianSplit, LabelError> {
    if values.len() < 2 {
        return Err(LabelError::TooFew(values.len()));
    }
    let m = median(values).expect("non-empty");
    let labels: Vec<ClassLabel> = values
        .iter()
        .map(|&v| if v <= m { ClassLabel::Low } else { ClassLabel::High })
        .collect();
    let n_low = labels.iter().filter(|&&l| l == ClassLabel::Low).count();
    let n_high = labels.len() - n_low;
    if n_low == 0 || n_high == 0 {
        return Err(LabelError::DegenerateSplit { trait_name, low: n_low, high: n_high });
    }
    Ok(MedianSplit { median: m, labels, n_low, n_high })
}

/// Binary labels for one trait across a cohort.
pub fn trait_class_labels(scores: &[TraitScores], trait_name: Trait) -> Result<MedianSplit, LabelError> {
    let values: Vec<f64> = scores.iter().map(|s| f64::from(s.get(trait_name))).collect();
    median_split(&values, trait_name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn utc(y: i32, m: u32, d: u32, h: u32, min: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, m, d, h, min, 0).unwrap()
    }

    #[test]
    fn four_am_tuesday_is_weekday_morning() {
        // 2018-03-06 is a Tuesday.
        let b = assign_bucket(utc(2018, 3, 6, 4, 0), 0);
        assert_eq!(b.date, NaiveDate::from_ymd_opt(2018, 3, 6).unwrap());
        assert_eq!(b.period, DayPeriod::Morning);
        assert_eq!(b.day_type, DayType::Weekday);
    }

    #[test]
    fn noon_is_afternoon() {
        assert_eq!(assign_bucket(utc(2018, 3, 6, 12, 0), 0).period, DayPeriod::Afternoon);
        assert_eq!(assign_bucket(utc(2018, 3, 6, 11, 59), 0).period, DayPeriod::Morning);
        assert_eq!(assign_bucket(utc(2018, 3, 6, 18, 0), 0).period, DayPeriod::Evening);
        assert_eq!(assign_bucket(utc(2018, 3, 6, 22, 0), 0).period, DayPeriod::Night);
    }

    #[test]
    fn early_sunday_rolls_back_to_saturday_night() {
        // 2018-03-11 is a Sunday; 01:30 local in Spain (UTC+1) is 00:30 UTC.
        let b = assign_bucket(utc(2018, 3, 11, 0, 30), 60);
        assert_eq!(b.date, NaiveDate::from_ymd_opt(2018, 3, 10).unwrap());
        assert_eq!(b.period, DayPeriod::Night);
        assert_eq!(b.day_type, DayType::Weekend);
    }

    #[test]
    fn monday_small_hours_belong_to_sunday() {
        let b = assign_bucket(utc(2018, 3, 12, 3, 59), 0);
        assert_eq!(b.day_type, DayType::Weekend);
        assert_eq!(seconds_into_day(utc(2018, 3, 12, 3, 59), 0), 27 * 3600 + 59 * 60);
    }

    #[test]
    fn negative_offsets_shift_local_date() {
        // 02:00 UTC Tuesday is 21:00 Monday in Peru (UTC-5): Monday evening.
        let b = assign_bucket(utc(2018, 3, 6, 2, 0), -300);
        assert_eq!(b.date, NaiveDate::from_ymd_opt(2018, 3, 5).unwrap());
        assert_eq!(b.period, DayPeriod::Evening);
    }

    #[test]
    fn median_split_example() {
        let s = median_split(&[10.0, 20.0, 30.0, 40.0, 50.0], Trait::Extraversion).unwrap();
        assert_eq!(s.median, 30.0);
        use ClassLabel::*;
        assert_eq!(s.labels, vec![Low, Low, Low, High, High]);
        assert_eq!((s.n_low, s.n_high), (3, 2));
    }

    #[test]
    fn median_split_even_count() {
        let s = median_split(&[31.0, 30.0, 33.0, 28.0], Trait::Openness).unwrap();
        assert_eq!(s.median, 30.5);
    }

    #[test]
    fn constant_scores_are_degenerate() {
        let scores = vec![TraitScores::new([30; 5]).unwrap(); 6];
        let err = trait_class_labels(&scores, Trait::Neuroticism).unwrap_err();
        assert!(matches!(err, LabelError::DegenerateSplit { low: 6, high: 0, .. }));
    }

    #[test]
    fn too_few_participants() {
        assert_eq!(median_split(&[30.0], Trait::Openness).unwrap_err(), LabelError::TooFew(1));
    }

    #[test]
    fn trait_scores_reject_out_of_range() {
        assert!(TraitScores::new([9, 30, 30, 30, 30]).is_err());
        assert!(TraitScores::new([51, 30, 30, 30, 30]).is_err());
    }

    #[test]
    fn responses_validate_length_and_range() {
        assert_eq!(Responses::new(&[3; 49]).unwrap_err(), ParticipantError::ResponseCount(49));
        let mut v = vec![3i64; 50];
        v[7] = 6;
        assert_eq!(
            Responses::new(&v).unwrap_err(),
            ParticipantError::ResponseRange { item: 8, value: 6 }
        );
    }

    #[test]
    fn enum_round_trip_strings() {
        for c in Country::ALL {
            assert_eq!(c.as_str().parse::<Country>().unwrap(), *c);
        }
        assert_eq!("26-34".parse::<AgeRange>().unwrap(), AgeRange::From26To34);
        assert!("XX".parse::<Country>().is_err());
        assert_eq!(Country::ALL.len(), 5);
        assert_eq!(Trait::ALL.len(), 5);
        assert_eq!(Category::ALL.len(), 8);
    }

    proptest! {
        #[test]
        fn periods_tile_every_day(secs in 0i64..(400 * 86_400), offset in -840i32..=840) {
            let ts = DateTime::<Utc>::from_timestamp(1_500_000_000 + secs, 0).unwrap();
            let b = assign_bucket(ts, offset);
            let local_secs = seconds_into_day(ts, offset);
            let hits: Vec<_> = DayPeriod::PARTS
                .iter()
                .filter(|p| { let (lo, hi) = p.window_secs(); local_secs >= lo && local_secs < hi })
                .collect();
            prop_assert_eq!(hits.len(), 1);
            prop_assert_eq!(*hits[0], b.period);
            prop_assert_eq!(b.day_type, DayType::of_date(b.date));
        }

        #[test]
        fn median_split_invariant_under_monotone_transform(
            scores in prop::collection::vec(10u8..=50, 2..60),
        ) {
            let raw: Vec<f64> = scores.iter().map(|&s| f64::from(s)).collect();
            let transformed: Vec<f64> = raw.iter().map(|&s| (s / 7.0).exp() + 3.0 * s).collect();
            let a = median_split(&raw, Trait::Extraversion);
            let b = median_split(&transformed, Trait::Extraversion);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a.labels, b.labels),
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "mismatch {:?} vs {:?}", a, b),
            }
        }

        #[test]
        fn shuffling_participants_permutes_labels(
            scores in prop::collection::vec(10u8..=50, 2..40),
            rot in 0usize..40,
        ) {
            let raw: Vec<f64> = scores.iter().map(|&s| f64::from(s)).collect();
            let k = rot % raw.len();
            let mut rotated = raw.clone();
            rotated.rotate_left(k);
            if let (Ok(a), Ok(b)) = (median_split(&raw, Trait::Openness), median_split(&rotated, Trait::Openness)) {
                let mut expect = a.labels.clone();
                expect.rotate_left(k);
                prop_assert_eq!(expect, b.labels);
            }
        }
    }
}
