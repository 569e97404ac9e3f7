//! Stage glue: event logs to feature matrix, missingness filter,
//! imputation and an evaluation-ready cohort.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::eval::{EvalCohort, EvalError};
use crate::features::{extract, feature_names, FeatureConfig, ParticipantStreams};
use crate::impute::{filter_missingness, iterative_impute, CohortMatrix, ImputationReport, ImputeError, ImputeParams, RetentionReport};
use crate::ingest::EventLog;
use crate::psychometrics::ScoringKey;
use crate::types::{Category, Participant};

/// Participants with more than this fraction of missing features are dropped.
pub const DEFAULT_MISSING_THRESHOLD: f64 = 0.30;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0} participants but {1} logs")]
    LogCount(usize, usize),
    #[error("log order mismatch: participant `{participant}` got the log of `{log}`")]
    LogOrder { participant: String, log: String },
    #[error(transparent)]
    Impute(#[from] ImputeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Per-category participant-day coverage of a cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionReport {
    /// (days with data, days observed), summed over participants.
    pub category_days: BTreeMap<Category, (usize, usize)>,
}

impl ExtractionReport {
    /// Fraction of observed participant-days without data.
    pub fn missing_rate(&self, c: Category) -> f64 {
        let (present, observed) = self.category_days.get(&c).copied().unwrap_or((0, 0));
        if observed == 0 {
            1.0
        } else {
            1.0 - present as f64 / observed as f64
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,present_days,observed_days,missing_rate\n");
        for &c in Category::ALL {
            let (p, o) = self.category_days.get(&c).copied().unwrap_or((0, 0));
            let _ = writeln!(out, "{c},{p},{o},{:.6}", self.missing_rate(c));
        }
        out
    }
}

/// Extracts every participant's study-period feature vector; `logs[i]`
/// belongs to `participants[i]`.
pub fn extract_cohort(
    participants: &[Participant],
    logs: &[EventLog],
    cfg: &FeatureConfig,
) -> Result<(CohortMatrix, ExtractionReport), PipelineError> {
    if participants.len() != logs.len() {
        return Err(PipelineError::LogCount(participants.len(), logs.len()));
    }
    for (p, l) in participants.iter().zip(logs) {
        if p.id != l.participant_id {
            return Err(PipelineError::LogOrder { participant: p.id.clone(), log: l.participant_id.clone() });
        }
    }
    let extractions: Vec<_> = participants
        .par_iter()
        .zip(logs)
        .map(|(p, l)| {
            extract(ParticipantStreams { tz_offset_minutes: p.tz_offset_minutes, events: &l.events, streams: &l.streams }, cfg)
        })
        .collect();
    let mut category_days: BTreeMap<Category, (usize, usize)> = Category::ALL.iter().map(|c| (*c, (0, 0))).collect();
    let mut rows = Vec::with_capacity(extractions.len());
    for x in extractions {
        for (c, (p, o)) in &x.category_days {
            let e = category_days.get_mut(c).expect("all categories");
            e.0 += p;
            e.1 += o;
        }
        rows.push(x.vector.values);
    }
    let matrix = CohortMatrix::new(participants.to_vec(), feature_names().to_vec(), rows)?;
    Ok((matrix, ExtractionReport { category_days }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub cohort: EvalCohort,
    pub retention: RetentionReport,
    pub imputation: ImputationReport,
}

/// Missingness filter, imputation and scoring.
pub fn prepare(matrix: &CohortMatrix, threshold: f64, params: &ImputeParams, key: &ScoringKey) -> Result<Prepared, PipelineError> {
    let (kept, retention) = filter_missingness(matrix, threshold)?;
    let imputed = iterative_impute(&kept, params)?;
    let cohort = EvalCohort::new(imputed.participants, imputed.features, key)?;
    Ok(Prepared { cohort, retention, imputation: imputed.report })
}
