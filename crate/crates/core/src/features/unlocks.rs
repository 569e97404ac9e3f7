//! Screen unlock timing, sessions and counts.

use crate::types::UnlockKind;

use super::{mean, PERIODS5};

pub const DAILY_COUNT: usize = 9;

const MIDNIGHT: i64 = 24 * 3600;
const DAY_END: i64 = 28 * 3600;

/// Features from one day's (seconds after the owning date's midnight, kind)
/// events, time-sorted:
/// first-unlock minute per period and for the entire day, last-unlock
/// minute, mean unlock-to-lock session (s), mean unlock-to-unlock interval
/// (s), unlock count.
///
/// Minutes count from the owning date's local midnight, so night unlocks
/// after midnight exceed 1440. An unlock followed by another unlock before
/// any lock opens no session; a trailing unlock without a lock is closed at
/// midnight, or at the end of the night if it happened after midnight.
pub fn unlocks_daily(events: &[(i64, UnlockKind)]) -> Vec<Option<f64>> {
    let unlock_secs: Vec<i64> = events.iter().filter(|e| e.1 == UnlockKind::Unlock).map(|e| e.0).collect();
    let mut out = Vec::with_capacity(DAILY_COUNT);
    for p in PERIODS5 {
        let (lo, hi) = p.window_secs();
        out.push(unlock_secs.iter().copied().filter(|&s| s >= lo && s < hi).min().map(|s| s as f64 / 60.0));
    }
    out.push(unlock_secs.iter().max().map(|&s| s as f64 / 60.0));

    let mut sessions = Vec::new();
    let mut open: Option<i64> = None;
    for &(s, kind) in events {
        match kind {
            UnlockKind::Unlock => open = Some(s),
            UnlockKind::Lock => {
                if let Some(start) = open.take() {
                    sessions.push((s - start) as f64);
                }
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        let close = if start < MIDNIGHT { MIDNIGHT } else { DAY_END };
        sessions.push((close - start) as f64);
    }
    out.push(mean(&sessions));

    let intervals: Vec<f64> = unlock_secs.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    out.push(mean(&intervals));
    out.push(Some(unlock_secs.len() as f64));
    debug_assert_eq!(out.len(), DAILY_COUNT);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use UnlockKind::*;

    const H: i64 = 3600;

    #[test]
    fn single_session() {
        let f = unlocks_daily(&[(9 * H, Unlock), (9 * H + 300, Lock)]);
        assert_eq!(f[8], Some(1.0));
        assert_eq!(f[6], Some(300.0));
        assert_eq!(f[4], Some(540.0));
        assert_eq!(f[0], Some(540.0));
        assert_eq!(f[1], None);
    }

    #[test]
    fn no_unlocks() {
        let f = unlocks_daily(&[(10 * H, ScreenOn), (10 * H + 5, ScreenOff)]);
        assert_eq!(f[8], Some(0.0));
        assert!(f[..8].iter().all(Option::is_none));
    }

    #[test]
    fn interval_between_morning_and_evening_unlocks() {
        let f = unlocks_daily(&[(8 * H, Unlock), (20 * H, Unlock)]);
        assert_eq!(f[7], Some(43200.0));
        // Only the trailing unlock opens a session, closed at midnight.
        assert_eq!(f[6], Some(4.0 * H as f64));
        assert_eq!(f[5], Some(1200.0));
    }

    #[test]
    fn after_midnight_unlock_closes_at_day_end() {
        let f = unlocks_daily(&[(25 * H, Unlock)]);
        assert_eq!(f[6], Some(3.0 * H as f64));
        assert_eq!(f[3], Some(1500.0));
    }
}
