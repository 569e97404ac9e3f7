//! Battery level and charging sessions.

/// `[level_avg, charge_count]` over the day's (level, charging) samples.
/// A charge is a false-to-true transition of the charging flag.
pub fn battery_daily(samples: &[(f64, bool)]) -> Vec<Option<f64>> {
    if samples.is_empty() {
        return vec![None, None];
    }
    let level = samples.iter().map(|s| s.0).sum::<f64>() / samples.len() as f64;
    let charges = samples.windows(2).filter(|w| !w[0].1 && w[1].1).count();
    vec![Some(level), Some(charges as f64)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_level_and_one_charge() {
        assert_eq!(battery_daily(&[(50.0, false), (60.0, true), (70.0, true)]), vec![Some(60.0), Some(1.0)]);
    }

    #[test]
    fn charging_all_day_is_no_transition() {
        assert_eq!(battery_daily(&[(80.0, true), (90.0, true)])[1], Some(0.0));
    }

    #[test]
    fn alternating_flags_count_two_charges() {
        let s = [(1.0, false), (2.0, true), (3.0, false), (4.0, true)];
        assert_eq!(battery_daily(&s)[1], Some(2.0));
    }
}
