//! Step counts per period.

use crate::types::DayPeriod;

use super::PERIODS5;

/// Step sums for morning, afternoon, evening, night and the entire day.
pub fn pedometer_daily(bursts: &[(DayPeriod, u32)]) -> Vec<f64> {
    PERIODS5
        .iter()
        .map(|&p| {
            bursts.iter().filter(|(bp, _)| p == DayPeriod::EntireDay || *bp == p).map(|b| f64::from(b.1)).sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use DayPeriod::*;

    #[test]
    fn morning_bursts_sum() {
        assert_eq!(pedometer_daily(&[(Morning, 100), (Morning, 200)]), vec![300.0, 0.0, 0.0, 0.0, 300.0]);
    }

    #[test]
    fn night_only() {
        assert_eq!(pedometer_daily(&[(Night, 40)]), vec![0.0, 0.0, 0.0, 40.0, 40.0]);
    }
}
