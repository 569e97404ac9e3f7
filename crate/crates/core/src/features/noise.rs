//! Ambient noise levels, participant-scaled levels and silence ratios.

use crate::types::{median, DayPeriod};

use super::PERIODS5;

pub const DAILY_COUNT: usize = 15;

/// (min, max) dB over the participant's whole study.
pub fn study_range(levels: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    levels.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

/// `(x - min) / (max - min)`, or 0 when the range is empty.
pub fn scale(x: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        (x - lo) / (hi - lo)
    } else {
        0.0
    }
}

/// Per period (four parts + entire day): median dB, median scaled level and
/// fraction of samples below `silence_db`.
pub fn noise_daily(samples: &[(DayPeriod, f64)], range: (f64, f64), silence_db: f64) -> Vec<Option<f64>> {
    let in_period = |p: DayPeriod| -> Vec<f64> {
        samples.iter().filter(|(sp, _)| p == DayPeriod::EntireDay || *sp == p).map(|s| s.1).collect()
    };
    let mut db = Vec::with_capacity(5);
    let mut scaled = Vec::with_capacity(5);
    let mut silence = Vec::with_capacity(5);
    for p in PERIODS5 {
        let v = in_period(p);
        db.push(median(&v));
        let s: Vec<f64> = v.iter().map(|&x| scale(x, range)).collect();
        scaled.push(median(&s));
        silence.push((!v.is_empty()).then(|| v.iter().filter(|&&x| x < silence_db).count() as f64 / v.len() as f64));
    }
    db.into_iter().chain(scaled).chain(silence).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use DayPeriod::*;

    #[test]
    fn quiet_day_is_all_silence() {
        let f = noise_daily(&[(Morning, 35.0), (Night, 35.0)], (35.0, 35.0), 40.0);
        assert_eq!(f[14], Some(1.0));
        assert_eq!(f[10], Some(1.0));
        assert_eq!(f[9], Some(0.0));
    }

    #[test]
    fn scaled_midpoint() {
        assert_eq!(scale(55.0, (30.0, 80.0)), 0.5);
    }

    #[test]
    fn night_median() {
        let f = noise_daily(&[(Night, 30.0), (Night, 50.0), (Night, 70.0)], (30.0, 70.0), 40.0);
        assert_eq!(f[3], Some(50.0));
        assert_eq!(f[0], None);
        assert_eq!(f[8], Some(0.5));
    }
}
