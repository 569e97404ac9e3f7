//! Canonical feature names.
//!
//! Study-period names follow `category.base[.period].stat.daytype`, e.g.
//! `noise.median_scaled.night.mean.weekday`; the two routine indices are
//! `location.routine_index.weekday` and `location.routine_index.weekend`.

use std::sync::OnceLock;

use crate::types::{Category, DayPeriod, DayType};

use super::PERIODS5;

pub const DAILY_BASE_COUNT: usize = 70;
/// 70 daily bases x {mean, std} x {weekday, weekend} + 2 routine indices.
pub const FEATURE_COUNT: usize = DAILY_BASE_COUNT * 4 + 2;

pub const STATS: [&str; 2] = ["mean", "std"];

fn with_periods(out: &mut Vec<(Category, String)>, c: Category, base: &str, periods: &[DayPeriod]) {
    out.extend(periods.iter().map(|p| (c, format!("{base}.{p}"))));
}

fn build_bases() -> Vec<(Category, String)> {
    use Category::*;
    let mut out: Vec<(Category, String)> = Vec::with_capacity(DAILY_BASE_COUNT);
    let plain = |out: &mut Vec<(Category, String)>, c: Category, names: &[&str]| {
        out.extend(names.iter().map(|n| (c, n.to_string())));
    };
    plain(&mut out, Accelerometer, &["dominant_freq_avg", "dominant_freq_sd", "dominant_amp_avg", "dominant_amp_sd"]);
    with_periods(&mut out, Accelerometer, "energy_avg", &DayPeriod::PARTS);
    with_periods(&mut out, Accelerometer, "energy_sd", &DayPeriod::PARTS);
    plain(&mut out, Battery, &["level_avg", "charge_count"]);
    plain(
        &mut out,
        Calls,
        &[
            "incoming_count",
            "outgoing_count",
            "missed_count",
            "rejected_count",
            "incoming_duration",
            "outgoing_duration",
            "incoming_contacts",
            "outgoing_contacts",
            "missed_contacts",
        ],
    );
    with_periods(&mut out, Unlocks, "first_unlock", &PERIODS5);
    plain(&mut out, Unlocks, &["last_unlock", "session_duration", "unlock_interval", "unlock_count"]);
    with_periods(&mut out, Light, "median_lux", &PERIODS5);
    plain(&mut out, Location, &["place_entropy", "place_count", "place_dwell", "stop_count", "gyration_radius"]);
    with_periods(&mut out, Location, "home_time", &PERIODS5);
    plain(&mut out, Location, &["work_time", "distance", "travel_duration"]);
    with_periods(&mut out, Noise, "median_db", &PERIODS5);
    with_periods(&mut out, Noise, "median_scaled", &PERIODS5);
    with_periods(&mut out, Noise, "silence_ratio", &PERIODS5);
    with_periods(&mut out, Pedometer, "steps", &PERIODS5);
    out
}

/// Daily base features (category, base name) in canonical order.
pub fn daily_bases() -> &'static [(Category, String)] {
    static BASES: OnceLock<Vec<(Category, String)>> = OnceLock::new();
    BASES.get_or_init(build_bases)
}

fn build_names() -> Vec<String> {
    let mut names = Vec::with_capacity(FEATURE_COUNT);
    for (c, base) in daily_bases() {
        for dt in DayType::ALL {
            for stat in STATS {
                names.push(format!("{c}.{base}.{stat}.{dt}"));
            }
        }
    }
    for dt in DayType::ALL {
        names.push(format!("location.routine_index.{dt}"));
    }
    names
}

/// All study-period feature names in canonical order.
pub fn feature_names() -> &'static [String] {
    static NAMES: OnceLock<Vec<String>> = OnceLock::new();
    NAMES.get_or_init(build_names)
}

/// Category encoded in a feature name.
pub fn category_of(name: &str) -> Option<Category> {
    name.split('.').next()?.parse().ok()
}

/// Day type encoded in a feature name (its last component).
pub fn day_type_of(name: &str) -> Option<DayType> {
    name.rsplit('.').next()?.parse().ok()
}

/// Index of each canonical feature by category.
pub fn columns_of(category: Category) -> Vec<usize> {
    feature_names().iter().enumerate().filter(|(_, n)| category_of(n) == Some(category)).map(|(i, _)| i).collect()
}
