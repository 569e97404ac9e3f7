//! Call log counts, durations and distinct correspondents.

use std::collections::BTreeSet;

use crate::types::CallDirection;

pub const DAILY_COUNT: usize = 9;

/// Incoming/outgoing/missed/rejected counts, incoming/outgoing summed
/// durations (s), and distinct incoming/outgoing/missed correspondents.
/// All zero for a day without calls.
pub fn calls_daily(calls: &[(CallDirection, f64, &str)]) -> Vec<f64> {
    let count = |d: CallDirection| calls.iter().filter(|c| c.0 == d).count() as f64;
    let duration = |d: CallDirection| calls.iter().filter(|c| c.0 == d).map(|c| c.1).sum::<f64>();
    let contacts = |d: CallDirection| calls.iter().filter(|c| c.0 == d).map(|c| c.2).collect::<BTreeSet<_>>().len() as f64;
    use CallDirection::*;
    vec![
        count(Incoming),
        count(Outgoing),
        count(Missed),
        count(Rejected),
        duration(Incoming),
        duration(Outgoing),
        contacts(Incoming),
        contacts(Outgoing),
        contacts(Missed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use CallDirection::*;

    #[test]
    fn two_outgoing_to_one_contact() {
        let f = calls_daily(&[(Outgoing, 60.0, "h1"), (Outgoing, 120.0, "h1")]);
        assert_eq!((f[1], f[5], f[7]), (2.0, 180.0, 1.0));
    }

    #[test]
    fn missed_call_leaves_durations() {
        let f = calls_daily(&[(Missed, 0.0, "h9")]);
        assert_eq!(f, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn no_calls_all_zero() {
        assert_eq!(calls_daily(&[]), vec![0.0; DAILY_COUNT]);
    }
}
