//! Daily behavioral features per data category and their aggregation into a
//! study-period feature vector.

pub mod accel;
pub mod battery;
pub mod calls;
pub mod light;
pub mod location;
pub mod noise;
pub mod pedometer;
pub mod schema;
pub mod unlocks;

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::types::{assign_bucket, median, seconds_into_day, Category, DayPeriod, DayType, Payload, SensorEvent};

pub use schema::{daily_bases, feature_names, DAILY_BASE_COUNT, FEATURE_COUNT};

/// The five reporting windows of per-period features, in canonical order.
pub const PERIODS5: [DayPeriod; 5] = [
    DayPeriod::Morning,
    DayPeriod::Afternoon,
    DayPeriod::Evening,
    DayPeriod::Night,
    DayPeriod::EntireDay,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub roam_radius_m: f64,
    pub min_dwell_s: i64,
    pub merge_radius_m: f64,
    pub silence_threshold_db: f64,
    pub work_start_hour: u32,
    pub work_end_hour: u32,
    pub max_speed_kmh: f64,
    /// Bursts shorter than this are skipped for spectral features.
    pub min_spectral_samples: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            roam_radius_m: 200.0,
            min_dwell_s: 20 * 60,
            merge_radius_m: 200.0,
            silence_threshold_db: 40.0,
            work_start_hour: 9,
            work_end_hour: 17,
            max_speed_kmh: 300.0,
            min_spectral_samples: 8,
        }
    }
}

/// Daily base-feature values of one participant-day, in [`daily_bases`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyRecord {
    pub date: NaiveDate,
    pub day_type: DayType,
    pub values: Vec<Option<f64>>,
}

/// Study-period features in [`feature_names`] order; `None` marks missing.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<Option<f64>>,
}

impl FeatureVector {
    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        self.missing_count() as f64 / self.values.len() as f64
    }
}

/// One participant's raw input to extraction.
#[derive(Debug, Clone, Copy)]
pub struct ParticipantStreams<'a> {
    pub tz_offset_minutes: i32,
    /// Time-sorted events.
    pub events: &'a [SensorEvent],
    /// Categories the participant shared.
    pub streams: &'a BTreeSet<Category>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub daily: Vec<DailyRecord>,
    pub routine: [Option<f64>; 2],
    pub vector: FeatureVector,
    pub places: Option<location::PlaceSet>,
    /// Per category: days with data / days observed.
    pub category_days: BTreeMap<Category, (usize, usize)>,
}

pub(crate) fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Standard deviation with the n-1 denominator; `None` below two values.
pub(crate) fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    Some((values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt())
}

/// Population standard deviation (n denominator); 0 for one value.
pub(crate) fn population_std(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    Some((values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt())
}

pub(crate) fn period_medians(samples: &[(DayPeriod, f64)]) -> Vec<Option<f64>> {
    PERIODS5
        .iter()
        .map(|&p| {
            let v: Vec<f64> =
                samples.iter().filter(|(sp, _)| p == DayPeriod::EntireDay || *sp == p).map(|s| s.1).collect();
            median(&v)
        })
        .collect()
}

/// Mean and std over present days, per base and day type, then the two
/// routine indices.
pub fn aggregate(daily: &[DailyRecord], routine: [Option<f64>; 2]) -> FeatureVector {
    let mut order: Vec<&DailyRecord> = daily.iter().collect();
    order.sort_by_key(|r| r.date);
    let mut values = Vec::with_capacity(FEATURE_COUNT);
    for base in 0..DAILY_BASE_COUNT {
        for dt in DayType::ALL {
            let v: Vec<f64> = order.iter().filter(|r| r.day_type == *dt).filter_map(|r| r.values[base]).collect();
            values.push(mean(&v));
            values.push(sample_std(&v));
        }
    }
    values.extend(routine);
    FeatureVector { values }
}

/// Computes daily records and the aggregated vector for one participant.
pub fn extract(input: ParticipantStreams<'_>, cfg: &FeatureConfig) -> Extraction {
    let tz = input.tz_offset_minutes;
    let mut by_date: BTreeMap<NaiveDate, Vec<(DayPeriod, i64, &SensorEvent)>> = BTreeMap::new();
    for ev in input.events {
        let b = assign_bucket(ev.timestamp, tz);
        by_date.entry(b.date).or_default().push((b.period, seconds_into_day(ev.timestamp, tz), ev));
    }

    let noise_range = noise::study_range(input.events.iter().filter_map(|e| match e.payload {
        Payload::Noise { level_db } => Some(level_db),
        _ => None,
    }));

    // Stay-points per day, then places over the whole study.
    let mut day_fixes: BTreeMap<NaiveDate, Vec<location::Fix>> = BTreeMap::new();
    for (date, evs) in &by_date {
        let fixes: Vec<location::Fix> = evs
            .iter()
            .filter_map(|(_, _, e)| match e.payload {
                Payload::Location { lat, lon, .. } => Some(location::Fix { t: e.timestamp.timestamp(), lat, lon }),
                _ => None,
            })
            .collect();
        if !fixes.is_empty() {
            day_fixes.insert(*date, fixes);
        }
    }
    let day_stays: BTreeMap<NaiveDate, Vec<location::StayPoint>> = day_fixes
        .iter()
        .map(|(d, f)| (*d, location::detect_stay_points(f, cfg.roam_radius_m, cfg.min_dwell_s)))
        .collect();
    let all_stays: Vec<location::StayPoint> = day_stays.values().flatten().cloned().collect();
    let mut stay_offset: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    let mut acc = 0;
    for (d, s) in &day_stays {
        stay_offset.insert(*d, acc);
        acc += s.len();
    }
    let places = location::build_places(&all_stays, tz, cfg).ok();

    let mut daily = Vec::with_capacity(by_date.len());
    let mut category_days: BTreeMap<Category, (usize, usize)> =
        Category::ALL.iter().map(|c| (*c, (0, 0))).collect();
    let mut visited: Vec<(DayType, BTreeSet<usize>)> = Vec::new();

    for (date, evs) in &by_date {
        let day_type = DayType::of_date(*date);
        let has = |c: Category| input.streams.contains(&c) && evs.iter().any(|(_, _, e)| e.category() == c);
        let mut values: Vec<Option<f64>> = Vec::with_capacity(DAILY_BASE_COUNT);
        let mut present: BTreeMap<Category, bool> = BTreeMap::new();

        // accelerometer
        let bursts: Vec<(DayPeriod, &[crate::types::AccelSample])> = evs
            .iter()
            .filter_map(|(p, _, e)| match &e.payload {
                Payload::Accelerometer { samples } => Some((*p, samples.as_slice())),
                _ => None,
            })
            .collect();
        present.insert(Category::Accelerometer, has(Category::Accelerometer));
        values.extend(if has(Category::Accelerometer) {
            accel::accel_daily(&bursts, cfg)
        } else {
            vec![None; accel::DAILY_COUNT]
        });

        // battery
        let levels: Vec<(f64, bool)> = evs
            .iter()
            .filter_map(|(_, _, e)| match e.payload {
                Payload::Battery { level, charging } => Some((level, charging)),
                _ => None,
            })
            .collect();
        present.insert(Category::Battery, has(Category::Battery));
        values.extend(if has(Category::Battery) { battery::battery_daily(&levels) } else { vec![None; 2] });

        // calls: zero-filled whenever the stream is shared
        let calls: Vec<(crate::types::CallDirection, f64, &str)> = evs
            .iter()
            .filter_map(|(_, _, e)| match &e.payload {
                Payload::Calls { direction, duration_s, correspondent } => {
                    Some((*direction, *duration_s, correspondent.as_str()))
                }
                _ => None,
            })
            .collect();
        let calls_on = input.streams.contains(&Category::Calls);
        present.insert(Category::Calls, calls_on);
        values.extend(if calls_on {
            calls::calls_daily(&calls).into_iter().map(Some).collect()
        } else {
            vec![None; calls::DAILY_COUNT]
        });

        // unlocks
        let unlock_events: Vec<(i64, crate::types::UnlockKind)> = evs
            .iter()
            .filter_map(|(_, s, e)| match e.payload {
                Payload::Unlocks { kind } => Some((*s, kind)),
                _ => None,
            })
            .collect();
        present.insert(Category::Unlocks, has(Category::Unlocks));
        values.extend(if has(Category::Unlocks) {
            unlocks::unlocks_daily(&unlock_events)
        } else {
            vec![None; unlocks::DAILY_COUNT]
        });

        // light
        let lux: Vec<(DayPeriod, f64)> = evs
            .iter()
            .filter_map(|(p, _, e)| match e.payload {
                Payload::Light { lux } => Some((*p, lux)),
                _ => None,
            })
            .collect();
        present.insert(Category::Light, has(Category::Light));
        values.extend(if has(Category::Light) { light::light_daily(&lux) } else { vec![None; 5] });

        // location
        let loc_on = has(Category::Location);
        present.insert(Category::Location, loc_on);
        match (loc_on, day_fixes.get(date), &places) {
            (true, Some(fixes), Some(ps)) => {
                let stays = &day_stays[date];
                let start = stay_offset[date];
                let ids = &ps.assignment[start..start + stays.len()];
                visited.push((day_type, ids.iter().copied().collect()));
                values.extend(location::location_daily(fixes, stays, ids, ps, *date, tz, cfg));
            }
            (true, Some(fixes), None) => {
                visited.push((day_type, BTreeSet::new()));
                values.extend(location::location_daily(fixes, &[], &[], &location::PlaceSet::empty(), *date, tz, cfg));
            }
            _ => values.extend(vec![None; location::DAILY_COUNT]),
        }

        // noise
        let db: Vec<(DayPeriod, f64)> = evs
            .iter()
            .filter_map(|(p, _, e)| match e.payload {
                Payload::Noise { level_db } => Some((*p, level_db)),
                _ => None,
            })
            .collect();
        present.insert(Category::Noise, has(Category::Noise));
        values.extend(match (has(Category::Noise), noise_range) {
            (true, Some(range)) => noise::noise_daily(&db, range, cfg.silence_threshold_db),
            _ => vec![None; noise::DAILY_COUNT],
        });

        // pedometer: zero-filled whenever the stream is shared
        let steps: Vec<(DayPeriod, u32)> = evs
            .iter()
            .filter_map(|(p, _, e)| match e.payload {
                Payload::Pedometer { steps } => Some((*p, steps)),
                _ => None,
            })
            .collect();
        let ped_on = input.streams.contains(&Category::Pedometer);
        present.insert(Category::Pedometer, ped_on);
        values.extend(if ped_on {
            pedometer::pedometer_daily(&steps).into_iter().map(Some).collect()
        } else {
            vec![None; 5]
        });

        debug_assert_eq!(values.len(), DAILY_BASE_COUNT);
        for (c, p) in present {
            let e = category_days.get_mut(&c).expect("all categories");
            e.1 += 1;
            if p {
                e.0 += 1;
            }
        }
        daily.push(DailyRecord { date: *date, day_type, values });
    }

    let routine = [DayType::Weekday, DayType::Weekend].map(|dt| {
        let sets: Vec<BTreeSet<usize>> =
            visited.iter().filter(|(t, _)| *t == dt).map(|(_, s)| s.clone()).collect();
        location::routine_index(&sets).ok()
    });
    let vector = aggregate(&daily, routine);
    Extraction { daily, routine, vector, places, category_days }
}
