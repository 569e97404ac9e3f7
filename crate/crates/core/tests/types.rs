use chrono::{Datelike, Duration, NaiveDate, TimeZone, Utc};
use persona_sense::types::*;
use proptest::prelude::*;

fn utc(y: i32, m: u32, d: u32, h: u32, min: u32) -> chrono::DateTime<Utc> {
    Utc.with_ymd_and_hms(y, m, d, h, min, 0).unwrap()
}

#[test]
fn early_hours_roll_back_to_previous_night() {
    // 02:30 local on a Monday belongs to Sunday's night, a weekend day.
    let b = assign_bucket(utc(2024, 3, 11, 2, 30), 0);
    assert_eq!(b.date, NaiveDate::from_ymd_opt(2024, 3, 10).unwrap());
    assert_eq!(b.period, DayPeriod::Night);
    assert_eq!(b.day_type, DayType::Weekend);
}

#[test]
fn period_boundaries() {
    let cases = [
        (4, 0, DayPeriod::Morning),
        (11, 59, DayPeriod::Morning),
        (12, 0, DayPeriod::Afternoon),
        (18, 0, DayPeriod::Evening),
        (22, 0, DayPeriod::Night),
        (3, 59, DayPeriod::Night),
    ];
    for (h, m, want) in cases {
        assert_eq!(assign_bucket(utc(2024, 3, 12, h, m), 0).period, want, "{h}:{m}");
    }
}

#[test]
fn offset_shifts_local_time() {
    // 03:00 UTC is 22:00 the previous evening at UTC-5.
    let b = assign_bucket(utc(2024, 3, 13, 3, 0), -300);
    assert_eq!(b.period, DayPeriod::Night);
    assert_eq!(b.date, NaiveDate::from_ymd_opt(2024, 3, 12).unwrap());
}

#[test]
fn weekend_is_saturday_and_sunday() {
    let mon = NaiveDate::from_ymd_opt(2024, 3, 11).unwrap();
    let types: Vec<DayType> = (0..7).map(|k| DayType::of_date(mon + Duration::days(k))).collect();
    assert_eq!(types.iter().filter(|&&t| t == DayType::Weekend).count(), 2);
    assert_eq!(types[5], DayType::Weekend);
    assert_eq!(types[6], DayType::Weekend);
}

#[test]
fn median_split_puts_ties_low() {
    let s = median_split(&[10.0, 20.0, 20.0, 30.0, 20.0], Trait::Openness).unwrap();
    assert_eq!(s.median, 20.0);
    assert_eq!(s.n_low, 4);
    assert_eq!(s.n_high, 1);
    assert_eq!(s.labels[3], ClassLabel::High);
}

#[test]
fn constant_trait_is_degenerate() {
    assert!(median_split(&[25.0; 6], Trait::Extraversion).is_err());
}

#[test]
fn trait_scores_range_checked() {
    assert!(TraitScores::new([10, 20, 30, 40, 50]).is_ok());
    assert!(TraitScores::new([9, 20, 30, 40, 50]).is_err());
    assert!(TraitScores::new([10, 20, 30, 40, 51]).is_err());
}

#[test]
fn responses_reject_out_of_range_items() {
    assert!(Responses::new(&[3; ITEM_COUNT]).is_ok());
    let mut bad = vec![3; ITEM_COUNT];
    bad[7] = 6;
    assert!(Responses::new(&bad).is_err());
    assert!(Responses::new(&[3; ITEM_COUNT - 1]).is_err());
}

#[test]
fn enums_round_trip_through_strings() {
    for &c in Country::ALL {
        assert_eq!(c.to_string().parse::<Country>().unwrap(), c);
    }
    for &c in Category::ALL {
        assert_eq!(c.to_string().parse::<Category>().unwrap(), c);
    }
    assert!("FR".parse::<Country>().is_err());
}

proptest! {
    #[test]
    fn periods_partition_the_day(secs in 0i64..(400 * 86_400), tz in -720i32..=840) {
        let ts = Utc.timestamp_opt(1_700_000_000 + secs, 0).unwrap();
        let b = assign_bucket(ts, tz);
        let s = seconds_into_day(ts, tz);
        prop_assert!((4 * 3600..28 * 3600).contains(&s));
        let hits: Vec<DayPeriod> = DayPeriod::PARTS
            .into_iter()
            .filter(|p| { let (lo, hi) = p.window_secs(); s >= lo && s < hi })
            .collect();
        prop_assert_eq!(hits, vec![b.period]);
        let weekend = matches!(b.date.weekday(), chrono::Weekday::Sat | chrono::Weekday::Sun);
        prop_assert_eq!(b.day_type == DayType::Weekend, weekend);
        // The owning date is the local date or the one before it.
        let local = (ts + Duration::minutes(tz as i64)).date_naive();
        prop_assert!(b.date == local || b.date + Duration::days(1) == local);
    }

    #[test]
    fn labels_invariant_under_monotone_transform(
        scores in prop::collection::vec(10u8..=50, 2..60),
        a in 0.1f64..5.0,
        b in -100.0f64..100.0,
    ) {
        let x: Vec<f64> = scores.iter().map(|&s| f64::from(s)).collect();
        prop_assume!(x.iter().any(|&v| v != x[0]));
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let cubed: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
        let base = median_split(&x, Trait::Agreeableness);
        match base {
            Ok(s) => {
                prop_assert_eq!(&s.labels, &median_split(&y, Trait::Agreeableness).unwrap().labels);
                prop_assert_eq!(&s.labels, &median_split(&cubed, Trait::Agreeableness).unwrap().labels);
                prop_assert_eq!(s.n_low + s.n_high, x.len());
                prop_assert!(s.n_low >= s.n_high);
            }
            Err(_) => {
                prop_assert!(median_split(&y, Trait::Agreeableness).is_err());
            }
        }
    }
}
