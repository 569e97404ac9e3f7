//! Ambient light.

use crate::types::DayPeriod;

/// Median lux for morning, afternoon, evening, night and the entire day.
pub fn light_daily(samples: &[(DayPeriod, f64)]) -> Vec<Option<f64>> {
    super::period_medians(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use DayPeriod::*;

    #[test]
    fn morning_median() {
        let f = light_daily(&[(Morning, 10.0), (Morning, 20.0), (Morning, 1000.0)]);
        assert_eq!(f[0], Some(20.0));
        assert_eq!(f[1], None);
    }

    #[test]
    fn single_sample() {
        assert_eq!(light_daily(&[(Evening, 3.5)])[2], Some(3.5));
    }
}
