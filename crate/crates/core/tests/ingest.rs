use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use persona_sense::ingest::*;
use persona_sense::types::*;
use proptest::prelude::*;

fn window() -> (DateTime<Utc>, DateTime<Utc>) {
    let start = Utc.with_ymd_and_hms(2018, 3, 5, 0, 0, 0).unwrap();
    (start, start + Duration::days(21))
}

fn participant(id: &str, country: Country) -> Participant {
    Participant {
        id: id.into(),
        country,
        gender: Gender::Female,
        age_range: AgeRange::From26To34,
        education: Education::Master,
        employment: Employment::Employed,
        tz_offset_minutes: 60,
        responses: Responses::new(&[3; ITEM_COUNT]).unwrap(),
    }
}

fn manifest_text(parts: &[Participant]) -> String {
    let (start, end) = window();
    let m = CohortManifest {
        study_start: start,
        study_end: end,
        entries: parts
            .iter()
            .map(|p| ManifestEntry { participant: p.clone(), log_path: format!("logs/{}.jsonl", p.id).into() })
            .collect(),
        base_dir: ".".into(),
    };
    let mut buf = Vec::new();
    write_manifest(&mut buf, &m).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn manifest_with_table_one_counts_parses() {
    let counts = [(Country::UK, 27), (Country::ES, 69), (Country::PE, 25), (Country::CO, 21), (Country::CL, 24)];
    let parts: Vec<Participant> = counts
        .iter()
        .flat_map(|&(c, n)| (0..n).map(move |i| participant(&format!("{c}{i:03}"), c)))
        .collect();
    let m = parse_manifest_str(&manifest_text(&parts), Path::new("."), "manifest.csv").unwrap();
    assert_eq!(m.entries.len(), 166);
    for (c, n) in counts {
        assert_eq!(m.entries.iter().filter(|e| e.participant.country == c).count(), n);
    }
    assert_eq!(m.participants(), parts);
    assert_eq!(m.study_end - m.study_start, Duration::days(21));
}

#[test]
fn empty_manifest_is_a_parse_error() {
    assert!(matches!(parse_manifest_str("", Path::new("."), "m.csv"), Err(IngestError::Parse { .. })));
}

#[test]
fn duplicate_ids_are_rejected() {
    let parts = [participant("p1", Country::UK), participant("p1", Country::ES)];
    let err = parse_manifest_str(&manifest_text(&parts), Path::new("."), "m.csv").unwrap_err();
    assert!(matches!(err, IngestError::DuplicateId(ref id) if id == "p1"));
}

#[test]
fn bad_field_reports_line_and_column() {
    let text = manifest_text(&[participant("p1", Country::UK)]).replace(",UK,", ",FR,");
    match parse_manifest_str(&text, Path::new("."), "m.csv").unwrap_err() {
        IngestError::Parse { line, msg, .. } => {
            assert_eq!(line, 4);
            assert!(msg.contains("country"), "{msg}");
        }
        e => panic!("{e}"),
    }
}

#[test]
fn single_noise_record() {
    let log = parse_event_log_str(
        r#"{"t":"2018-03-06T10:00:00.000Z","category":"noise","level_db":41.5}"#,
        "p1",
        window(),
        DEFAULT_MALFORMED_TOLERANCE,
    )
    .unwrap();
    assert_eq!(log.events.len(), 1);
    assert_eq!(log.streams, [Category::Noise].into());
}

#[test]
fn records_are_sorted_and_out_of_window_dropped() {
    let text = [
        r#"{"t":"2018-03-07T10:00:00.000Z","category":"light","lux":5.0}"#,
        r#"{"t":"2018-03-06T10:00:00.000Z","category":"light","lux":7.0}"#,
        r#"{"t":"2018-03-01T10:00:00.000Z","category":"light","lux":9.0}"#,
    ]
    .join("\n");
    let log = parse_event_log_str(&text, "p1", window(), DEFAULT_MALFORMED_TOLERANCE).unwrap();
    assert_eq!(log.events.len(), 2);
    assert!(log.events[0].timestamp < log.events[1].timestamp);
    assert_eq!(log.dropped_outside_window, 1);
}

#[test]
fn malformed_lines_over_tolerance_fail() {
    let good = r#"{"t":"2018-03-06T10:00:00.000Z","category":"pedometer","steps":10}"#;
    let mut lines = vec![good; 199];
    lines.push("not json");
    let ok = parse_event_log_str(&lines.join("\n"), "p1", window(), 0.01).unwrap();
    assert_eq!(ok.malformed_lines, 1);
    lines.extend(["{}", r#"{"t":"2018-03-06T10:00:00.000Z","category":"battery","level":140.0,"charging":false}"#]);
    assert!(matches!(parse_event_log_str(&lines.join("\n"), "p1", window(), 0.01), Err(IngestError::Malformed { bad: 3, .. })));
}

fn payload() -> impl Strategy<Value = Payload> {
    prop_oneof![
        (0.0f64..120.0).prop_map(|level_db| Payload::Noise { level_db }),
        (0.0f64..1e4).prop_map(|lux| Payload::Light { lux }),
        (0u32..500).prop_map(|steps| Payload::Pedometer { steps }),
        (0.0f64..100.0, any::<bool>()).prop_map(|(level, charging)| Payload::Battery { level, charging }),
        (-80.0f64..80.0, -170.0f64..170.0).prop_map(|(lat, lon)| Payload::Location { lat, lon, accuracy_m: 10.0 }),
        prop::collection::vec((0u32..1000, -20.0f64..20.0, -20.0f64..20.0, -20.0f64..20.0), 1..6).prop_map(|s| {
            Payload::Accelerometer { samples: s.into_iter().map(AccelSample::from).collect() }
        }),
        prop_oneof![Just(UnlockKind::Unlock), Just(UnlockKind::Lock)].prop_map(|kind| Payload::Unlocks { kind }),
    ]
}

fn events() -> impl Strategy<Value = Vec<SensorEvent>> {
    prop::collection::vec((0i64..21 * 86_400_000, payload()), 0..30).prop_map(|v| {
        v.into_iter()
            .map(|(ms, payload)| SensorEvent { timestamp: window().0 + Duration::milliseconds(ms), payload })
            .collect()
    })
}

proptest! {
    #[test]
    fn serialize_then_parse_is_identity(mut evs in events()) {
        sort_events(&mut evs);
        let log = EventLog {
            participant_id: "p".into(),
            streams: evs.iter().map(SensorEvent::category).chain([Category::Calls]).collect(),
            events: evs,
            ..Default::default()
        };
        let back = parse_event_log_str(&event_log_to_string(&log), "p", window(), 0.0).unwrap();
        prop_assert_eq!(back, log);
    }

    #[test]
    fn line_order_does_not_matter(evs in events(), seed in any::<u64>()) {
        let lines: Vec<String> = evs.iter().map(event_to_line).collect();
        let mut shuffled = lines.clone();
        let n = shuffled.len().max(1);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, (seed.wrapping_mul(i as u64 + 7) % n as u64) as usize % (i + 1));
        }
        let a = parse_event_log_str(&lines.join("\n"), "p", window(), 0.0).unwrap();
        let b = parse_event_log_str(&shuffled.join("\n"), "p", window(), 0.0).unwrap();
        prop_assert_eq!(a, b);
    }
}
