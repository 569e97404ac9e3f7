//! Stay-point detection, place building and daily mobility features.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, NaiveDate, Weekday};
use thiserror::Error;

use crate::types::DayPeriod;

use super::{FeatureConfig, PERIODS5};

pub const DAILY_COUNT: usize = 13;
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;
const DAY: i64 = 86_400;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LocationError {
    #[error("no stay-points to build places from")]
    NoPlaces,
    #[error("routine index needs at least two days, got {0}")]
    Insufficient(usize),
}

/// A location fix; `t` is UTC seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fix {
    pub t: i64,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StayPoint {
    pub lat: f64,
    pub lon: f64,
    pub arrival: i64,
    pub departure: i64,
}

impl StayPoint {
    pub fn dwell(&self) -> i64 {
        self.departure - self.arrival
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaceLabel {
    Home,
    Work,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Place {
    pub lat: f64,
    pub lon: f64,
    pub visits: Vec<(i64, i64)>,
    pub dwell_s: i64,
    pub label: PlaceLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceSet {
    pub places: Vec<Place>,
    /// Place index of every input stay-point, in input order.
    pub assignment: Vec<usize>,
    pub home: Option<usize>,
    pub work: Option<usize>,
}

impl PlaceSet {
    pub fn empty() -> PlaceSet {
        PlaceSet { places: Vec::new(), assignment: Vec::new(), home: None, work: None }
    }
}

pub fn haversine_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dp = p2 - p1;
    let dl = (b.1 - a.1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

fn centroid(points: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    // Offsets from the first point keep coincident points exact.
    let mut it = points.peekable();
    let Some(&(a0, b0)) = it.peek() else { return (f64::NAN, f64::NAN) };
    let (mut la, mut lo, mut n) = (0.0, 0.0, 0.0);
    for (a, b) in it {
        la += a - a0;
        lo += b - b0;
        n += 1.0;
    }
    (a0 + la / n, b0 + lo / n)
}

/// Maximal runs of consecutive fixes that all stay within `roam_radius_m` of
/// the run centroid for at least `min_dwell_s`.
pub fn detect_stay_points(fixes: &[Fix], roam_radius_m: f64, min_dwell_s: i64) -> Vec<StayPoint> {
    let mut out = Vec::new();
    let within = |run: &[Fix]| {
        let c = centroid(run.iter().map(|f| (f.lat, f.lon)));
        run.iter().all(|f| haversine_m((f.lat, f.lon), c) <= roam_radius_m).then_some(c)
    };
    let mut i = 0;
    while i < fixes.len() {
        let mut j = i;
        let mut c = (fixes[i].lat, fixes[i].lon);
        while j + 1 < fixes.len() {
            match within(&fixes[i..=j + 1]) {
                Some(nc) => {
                    c = nc;
                    j += 1;
                }
                None => break,
            }
        }
        if fixes[j].t - fixes[i].t >= min_dwell_s {
            out.push(StayPoint { lat: c.0, lon: c.1, arrival: fixes[i].t, departure: fixes[j].t });
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Seconds of `[start, end)` (UTC) falling in the local window
/// `[lo, hi)` seconds after each local midnight, restricted to owning dates
/// accepted by `keep_date`.
pub fn window_overlap(
    start: i64,
    end: i64,
    tz_offset_minutes: i32,
    (lo, hi): (i64, i64),
    keep_date: impl Fn(NaiveDate) -> bool,
) -> i64 {
    if end <= start {
        return 0;
    }
    let off = i64::from(tz_offset_minutes) * 60;
    let (ls, le) = (start + off, end + off);
    let first = (ls - hi).div_euclid(DAY);
    let last = le.div_euclid(DAY);
    let mut total = 0;
    for d in first..=last {
        let (ws, we) = (d * DAY + lo, d * DAY + hi);
        let ov = le.min(we) - ls.max(ws);
        if ov > 0 {
            let date = NaiveDate::from_num_days_from_ce_opt((d + 719_163) as i32).expect("date in range");
            if keep_date(date) {
                total += ov;
            }
        }
    }
    total
}

fn is_weekday(d: NaiveDate) -> bool {
    !matches!(d.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Greedily merges stay-points whose centroid lies within `merge_radius_m`
/// of an existing place (nearest first), then labels home (largest night
/// dwell, else largest dwell) and work (largest weekday working-hours dwell
/// outside home, if any).
pub fn build_places(stays: &[StayPoint], tz_offset_minutes: i32, cfg: &FeatureConfig) -> Result<PlaceSet, LocationError> {
    if stays.is_empty() {
        return Err(LocationError::NoPlaces);
    }
    let mut places: Vec<Place> = Vec::new();
    let mut members: Vec<usize> = Vec::new();
    let mut assignment = Vec::with_capacity(stays.len());
    for s in stays {
        let nearest = places
            .iter()
            .enumerate()
            .map(|(i, p)| (i, haversine_m((p.lat, p.lon), (s.lat, s.lon))))
            .filter(|(_, d)| *d <= cfg.merge_radius_m)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let idx = match nearest {
            Some((i, _)) => {
                let p = &mut places[i];
                let k = members[i] as f64;
                p.lat = (p.lat * k + s.lat) / (k + 1.0);
                p.lon = (p.lon * k + s.lon) / (k + 1.0);
                p.visits.push((s.arrival, s.departure));
                p.dwell_s += s.dwell();
                members[i] += 1;
                i
            }
            None => {
                places.push(Place {
                    lat: s.lat,
                    lon: s.lon,
                    visits: vec![(s.arrival, s.departure)],
                    dwell_s: s.dwell(),
                    label: PlaceLabel::Other,
                });
                members.push(1);
                places.len() - 1
            }
        };
        assignment.push(idx);
    }

    let dwell_in = |p: &Place, window: (i64, i64), keep: &dyn Fn(NaiveDate) -> bool| -> i64 {
        p.visits.iter().map(|&(a, d)| window_overlap(a, d, tz_offset_minutes, window, keep)).sum()
    };
    let argmax = |scores: Vec<i64>| -> Option<usize> {
        let mut best: Option<(usize, i64)> = None;
        for (i, s) in scores.into_iter().enumerate() {
            if s > 0 && best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best.map(|b| b.0)
    };
    let night = DayPeriod::Night.window_secs();
    let home = argmax(places.iter().map(|p| dwell_in(p, night, &|_| true)).collect())
        .or_else(|| argmax(places.iter().map(|p| p.dwell_s).collect()));
    let work_window = (i64::from(cfg.work_start_hour) * 3600, i64::from(cfg.work_end_hour) * 3600);
    let work = argmax(
        places
            .iter()
            .enumerate()
            .map(|(i, p)| if Some(i) == home { 0 } else { dwell_in(p, work_window, &is_weekday) })
            .collect(),
    );
    if let Some(h) = home {
        places[h].label = PlaceLabel::Home;
    }
    if let Some(w) = work {
        places[w].label = PlaceLabel::Work;
    }
    Ok(PlaceSet { places, assignment, home, work })
}

/// Shannon entropy (nats) of dwell shares.
pub fn entropy(dwells: &[f64]) -> f64 {
    let total: f64 = dwells.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    -dwells.iter().filter(|&&d| d > 0.0).map(|&d| d / total).map(|p| p * p.ln()).sum::<f64>()
}

/// Root-mean-square haversine distance (m) of points from their centroid.
pub fn radius_of_gyration(points: &[(f64, f64)]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let c = centroid(points.iter().copied());
    (points.iter().map(|&p| haversine_m(p, c).powi(2)).sum::<f64>() / points.len() as f64).sqrt()
}

/// Sum of leg distances, skipping legs faster than `max_speed_kmh`.
pub fn travelled_distance(fixes: &[Fix], max_speed_kmh: f64) -> f64 {
    let max_mps = max_speed_kmh / 3.6;
    fixes
        .windows(2)
        .map(|w| {
            let d = haversine_m((w[0].lat, w[0].lon), (w[1].lat, w[1].lon));
            let dt = (w[1].t - w[0].t) as f64;
            if d == 0.0 || (dt > 0.0 && d / dt <= max_mps) {
                d
            } else {
                0.0
            }
        })
        .sum()
}

/// Mean pairwise Jaccard similarity of daily visited-place sets. Two empty
/// sets count as identical.
pub fn routine_index(days: &[BTreeSet<usize>]) -> Result<f64, LocationError> {
    if days.len() < 2 {
        return Err(LocationError::Insufficient(days.len()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..days.len() {
        for j in i + 1..days.len() {
            let union = days[i].union(&days[j]).count();
            let inter = days[i].intersection(&days[j]).count();
            total += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Daily location features in canonical order: place entropy, place count,
/// place dwell (s), stop count, radius of gyration (m), home time (s) per
/// period and entire day, work time (s), distance (m), travel duration (s).
pub fn location_daily(
    fixes: &[Fix],
    stays: &[StayPoint],
    place_ids: &[usize],
    places: &PlaceSet,
    date: NaiveDate,
    tz_offset_minutes: i32,
    cfg: &FeatureConfig,
) -> Vec<Option<f64>> {
    if fixes.is_empty() {
        return vec![None; DAILY_COUNT];
    }
    let mut per_place: BTreeMap<usize, f64> = BTreeMap::new();
    for (s, &id) in stays.iter().zip(place_ids) {
        *per_place.entry(id).or_default() += s.dwell() as f64;
    }
    let dwells: Vec<f64> = per_place.values().copied().collect();
    let total_dwell: f64 = dwells.iter().sum();
    let mut out = vec![
        (!stays.is_empty()).then(|| entropy(&dwells)),
        Some(per_place.len() as f64),
        Some(total_dwell),
        Some(stays.len() as f64),
        Some(radius_of_gyration(&fixes.iter().map(|f| (f.lat, f.lon)).collect::<Vec<_>>())),
    ];
    let at = |label: Option<usize>, window: (i64, i64)| -> f64 {
        stays
            .iter()
            .zip(place_ids)
            .filter(|(_, &id)| Some(id) == label)
            .map(|(s, _)| window_overlap(s.arrival, s.departure, tz_offset_minutes, window, |d| d == date) as f64)
            .sum()
    };
    for p in PERIODS5 {
        out.push(Some(at(places.home, p.window_secs())));
    }
    out.push(Some(at(places.work, DayPeriod::EntireDay.window_secs())));
    out.push(Some(travelled_distance(fixes, cfg.max_speed_kmh)));
    let span = (fixes[fixes.len() - 1].t - fixes[0].t) as f64;
    out.push(Some((span - total_dwell).max(0.0)));
    out
}
