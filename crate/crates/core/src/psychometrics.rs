//! Questionnaire scoring, internal-consistency reliability and descriptive
//! statistics of trait scores.

use std::path::Path;

use thiserror::Error;

use crate::types::{median, Responses, Trait, TraitScores, ITEM_COUNT};

const IPIP50_KEY: &str = include_str!("../data/ipip50_key.csv");

#[derive(Debug, Error)]
pub enum PsychometricsError {
    #[error("scoring key line {line}: {msg}")]
    KeyParse { line: usize, msg: String },
    #[error("scoring key: {0}")]
    KeyShape(String),
    #[error("bad response: {0}")]
    BadResponse(String),
    #[error("Cronbach's alpha needs >= 2 participants and >= 2 items")]
    TooFewForAlpha,
    #[error("total-score variance is zero")]
    ZeroVariance,
    #[error("population is empty")]
    EmptyPopulation,
    #[error("reading scoring key: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keying {
    Positive,
    Reversed,
}

/// Item → (trait, keying) assignment for the 50-item inventory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoringKey {
    items: Vec<(Trait, Keying)>,
}

impl ScoringKey {
    /// The bundled 50-item IPIP Big-Five marker key.
    pub fn ipip50() -> ScoringKey {
        ScoringKey::from_csv_str(IPIP50_KEY).expect("bundled key is valid")
    }

    pub fn from_path(path: &Path) -> Result<ScoringKey, PsychometricsError> {
        ScoringKey::from_csv_str(&std::fs::read_to_string(path)?)
    }

    /// Parses `item,trait,keying` rows (1-based item index, header optional).
    pub fn from_csv_str(text: &str) -> Result<ScoringKey, PsychometricsError> {
        let mut slots: Vec<Option<(Trait, Keying)>> = vec![None; ITEM_COUNT];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("item") || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| PsychometricsError::KeyParse { line: lineno + 1, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 fields, got {}", fields.len())));
            }
            let item: usize = fields[0].parse().map_err(|_| err(format!("bad item `{}`", fields[0])))?;
            if !(1..=ITEM_COUNT).contains(&item) {
                return Err(err(format!("item {item} outside 1..={ITEM_COUNT}")));
            }
            let t: Trait = fields[1].parse().map_err(|e| err(format!("{e}")))?;
            let keying = match fields[2] {
                "positive" | "+" => Keying::Positive,
                "reversed" | "-" => Keying::Reversed,
                other => return Err(err(format!("bad keying `{other}`"))),
            };
            if slots[item - 1].replace((t, keying)).is_some() {
                return Err(err(format!("item {item} listed twice")));
            }
        }
        let items: Vec<(Trait, Keying)> = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| PsychometricsError::KeyShape(format!("item {} missing", i + 1))))
            .collect::<Result<_, _>>()?;
        for t in Trait::ALL {
            let n = items.iter().filter(|(it, _)| it == t).count();
            if n != 10 {
                return Err(PsychometricsError::KeyShape(format!("{t} has {n} items, expected 10")));
            }
        }
        Ok(ScoringKey { items })
    }

    pub fn item(&self, index: usize) -> (Trait, Keying) {
        self.items[index]
    }

    /// Zero-based item indices of a trait, ascending.
    pub fn items_of(&self, t: Trait) -> Vec<usize> {
        (0..ITEM_COUNT).filter(|&i| self.items[i].0 == t).collect()
    }

    /// Turns a trait-direction item value back into the raw response.
    pub fn response_for(&self, index: usize, value: u8) -> u8 {
        match self.items[index].1 {
            Keying::Positive => value,
            Keying::Reversed => 6 - value,
        }
    }
}

/// Response expressed in the direction of its trait.
pub fn item_value(response: u8, keying: Keying) -> u8 {
    match keying {
        Keying::Positive => response,
        Keying::Reversed => 6 - response,
    }
}

/// Sums the ten keyed item values of every trait.
pub fn score_traits(responses: &Responses, key: &ScoringKey) -> TraitScores {
    let mut totals = [0u8; 5];
    for (i, &r) in responses.as_slice().iter().enumerate() {
        let (t, keying) = key.item(i);
        totals[t.index()] += item_value(r, keying);
    }
    TraitScores::new(totals).expect("ten items in 1..=5 sum into 10..=50")
}

/// Scores unvalidated integer responses.
pub fn score_raw(responses: &[i64], key: &ScoringKey) -> Result<TraitScores, PsychometricsError> {
    let r = Responses::new(responses).map_err(|e| PsychometricsError::BadResponse(e.to_string()))?;
    Ok(score_traits(&r, key))
}

/// Participants × items matrix of keyed item values for one trait.
pub fn trait_item_matrix(cohort: &[Responses], key: &ScoringKey, t: Trait) -> Vec<Vec<f64>> {
    let items = key.items_of(t);
    cohort
        .iter()
        .map(|r| items.iter().map(|&i| f64::from(item_value(r.as_slice()[i], key.item(i).1))).collect())
        .collect()
}

fn sample_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Cronbach's alpha of a participants × items matrix:
/// k/(k-1) * (1 - sum of item variances / variance of row sums).
pub fn cronbach_alpha(rows: &[Vec<f64>]) -> Result<f64, PsychometricsError> {
    let k = rows.first().map_or(0, Vec::len);
    if rows.len() < 2 || k < 2 {
        return Err(PsychometricsError::TooFewForAlpha);
    }
    let item_var: f64 = (0..k).map(|j| sample_variance(rows.iter().map(|r| r[j]))).sum();
    let total_var = sample_variance(rows.iter().map(|r| r.iter().sum::<f64>()));
    if total_var <= 0.0 {
        return Err(PsychometricsError::ZeroVariance);
    }
    let k = k as f64;
    Ok(k / (k - 1.0) * (1.0 - item_var / total_var))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraitStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; absent for a single participant.
    pub std: Option<f64>,
    pub median: f64,
    pub max: f64,
    pub min: f64,
}

/// Per-trait descriptive statistics of a population.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortTraitStats {
    pub per_trait: [TraitStats; 5],
}

impl CohortTraitStats {
    pub fn get(&self, t: Trait) -> &TraitStats {
        &self.per_trait[t.index()]
    }
}

pub fn describe(values: &[f64]) -> Option<TraitStats> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n >= 2).then(|| sample_variance(values.iter().copied()).sqrt());
    Some(TraitStats {
        n,
        mean,
        std,
        median: median(values).expect("non-empty"),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

pub fn trait_stats(scores: &[TraitScores]) -> Result<CohortTraitStats, PsychometricsError> {
    if scores.is_empty() {
        return Err(PsychometricsError::EmptyPopulation);
    }
    let per_trait = std::array::from_fn(|i| {
        let t = Trait::ALL[i];
        let v: Vec<f64> = scores.iter().map(|s| f64::from(s.get(t))).collect();
        describe(&v).expect("non-empty")
    });
    Ok(CohortTraitStats { per_trait })
}

/// Statistics over the participants selected by `keep`.
pub fn trait_stats_where<T>(
    items: &[T],
    scores: &[TraitScores],
    keep: impl Fn(&T) -> bool,
) -> Result<CohortTraitStats, PsychometricsError> {
    let selected: Vec<TraitScores> =
        items.iter().zip(scores).filter(|(it, _)| keep(it)).map(|(_, s)| *s).collect();
    trait_stats(&selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn responses(v: &[i64]) -> Responses {
        Responses::new(v).unwrap()
    }

    #[test]
    fn bundled_key_has_ten_items_per_trait_with_mixed_keying() {
        let key = ScoringKey::ipip50();
        for t in Trait::ALL {
            let items = key.items_of(*t);
            assert_eq!(items.len(), 10);
            assert!(items.iter().any(|&i| key.item(i).1 == Keying::Reversed), "{t}");
            assert!(items.iter().any(|&i| key.item(i).1 == Keying::Positive), "{t}");
        }
    }

    #[test]
    fn all_threes_score_thirty() {
        let s = score_traits(&responses(&[3; 50]), &ScoringKey::ipip50());
        assert_eq!(s.as_array(), [30; 5]);
    }

    #[test]
    fn maximal_extraversion() {
        let key = ScoringKey::ipip50();
        let v: Vec<i64> = (0..50)
            .map(|i| match key.item(i) {
                (Trait::Extraversion, Keying::Positive) => 5,
                (Trait::Extraversion, Keying::Reversed) => 1,
                _ => 3,
            })
            .collect();
        assert_eq!(score_traits(&responses(&v), &key).get(Trait::Extraversion), 50);
    }

    #[test]
    fn mixed_vector_matches_hand_scored_sheet() {
        // Responses 1,2,3,4,5 repeating: item i gets (i % 5) + 1, so each
        // trait's items all carry the same raw response.
        let v: Vec<i64> = (0..50).map(|i| (i % 5) as i64 + 1).collect();
        let key = ScoringKey::ipip50();
        let s = score_traits(&responses(&v), &key);
        // Hand-scored from the key: E items answered 1 (5 positive, 5
        // reversed): 5*1 + 5*5 = 30. A answered 2 (4 reversed → 4 each,
        // 6 positive → 2 each): 16 + 12 = 28. C answered 3: 30. N answered 4
        // (8 positive, 2 reversed → 2): 32 + 4 = 36. O answered 5 (7 positive,
        // 3 reversed → 1): 35 + 3 = 38.
        assert_eq!(s.as_array(), [30, 28, 30, 36, 38]);
    }

    #[test]
    fn out_of_range_response_is_rejected() {
        let mut v = vec![3i64; 50];
        v[0] = 0;
        assert!(matches!(score_raw(&v, &ScoringKey::ipip50()), Err(PsychometricsError::BadResponse(_))));
    }

    #[test]
    fn key_parse_errors() {
        assert!(ScoringKey::from_csv_str("item,trait,keying\n1,extraversion,positive\n").is_err());
        let dup = IPIP50_KEY.replace("2,agreeableness,reversed", "1,agreeableness,reversed");
        assert!(matches!(ScoringKey::from_csv_str(&dup), Err(PsychometricsError::KeyParse { .. })));
    }

    #[test]
    fn duplicated_items_give_alpha_one() {
        let rows: Vec<Vec<f64>> = [1.0, 3.0, 2.0, 5.0, 4.0].iter().map(|&v| vec![v; 10]).collect();
        assert!((cronbach_alpha(&rows).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn independent_items_give_alpha_near_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let rows: Vec<Vec<f64>> =
            (0..5000).map(|_| (0..10).map(|_| f64::from(rng.random_range(1u8..=5))).collect()).collect();
        let a = cronbach_alpha(&rows).unwrap();
        assert!(a.abs() < 0.1, "alpha {a}");
    }

    #[test]
    fn constant_totals_have_zero_variance() {
        let rows = vec![vec![3.0; 10]; 4];
        assert!(matches!(cronbach_alpha(&rows), Err(PsychometricsError::ZeroVariance)));
    }

    #[test]
    fn stats_of_two_scores() {
        let scores = [TraitScores::new([10; 5]).unwrap(), TraitScores::new([50; 5]).unwrap()];
        let st = trait_stats(&scores).unwrap();
        let e = st.get(Trait::Extraversion);
        assert_eq!(e.mean, 30.0);
        assert_eq!(e.median, 30.0);
        assert!((e.std.unwrap() - 28.284_271_247_461_9).abs() < 1e-9);
        assert_eq!((e.min, e.max), (10.0, 50.0));
    }

    #[test]
    fn single_participant_has_no_std() {
        let st = trait_stats(&[TraitScores::new([22; 5]).unwrap()]).unwrap();
        assert_eq!(st.get(Trait::Openness).std, None);
        assert!(matches!(trait_stats(&[]), Err(PsychometricsError::EmptyPopulation)));
    }

    proptest! {
        #[test]
        fn raising_a_positive_item_never_lowers_its_score(
            v in prop::collection::vec(1i64..=5, 50),
            item in 0usize..50,
        ) {
            let key = ScoringKey::ipip50();
            prop_assume!(key.item(item).1 == Keying::Positive && v[item] < 5);
            let t = key.item(item).0;
            let before = score_raw(&v, &key).unwrap().get(t);
            let mut up = v.clone();
            up[item] += 1;
            prop_assert!(score_raw(&up, &key).unwrap().get(t) >= before);
        }

        #[test]
        fn reversal_symmetry(v in prop::collection::vec(1i64..=5, 50)) {
            let key = ScoringKey::ipip50();
            let flipped_text: String = std::iter::once("item,trait,keying".to_string())
                .chain((0..50).map(|i| {
                    let (t, k) = key.item(i);
                    let k = if k == Keying::Positive { "reversed" } else { "positive" };
                    format!("{},{},{}", i + 1, t, k)
                }))
                .collect::<Vec<_>>()
                .join("\n");
            let flipped = ScoringKey::from_csv_str(&flipped_text).unwrap();
            let mirrored: Vec<i64> = v.iter().map(|r| 6 - r).collect();
            prop_assert_eq!(score_raw(&v, &key).unwrap(), score_raw(&mirrored, &flipped).unwrap());
        }

        #[test]
        fn alpha_invariant_under_constant_shift(
            rows in prop::collection::vec(prop::collection::vec(1u8..=5, 10), 3..30),
            shift in -5.0f64..5.0,
        ) {
            let a: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect();
            let b: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect();
            match (cronbach_alpha(&a), cronbach_alpha(&b)) {
                (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-9),
                (Err(_), Err(_)) => {}
                (x, y) => prop_assert!(false, "{:?} vs {:?}", x, y),
            }
        }
    }
}
