use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use persona_sense::eval::{
    distributions_csv, evaluate_population, feature_distributions, importance_by_category, importance_csv, mcnemar,
    mcnemar_csv, performance_csv, records_csv, EvalCohort, EvalRun, PerformanceRow, Population,
};
use persona_sense::impute::{filter_missingness, iterative_impute, CohortMatrix};
use persona_sense::ingest::{load_logs, CohortManifest, parse_manifest, DEFAULT_MALFORMED_TOLERANCE};
use persona_sense::matrix::FeatureMatrix;
use persona_sense::pipeline::extract_cohort;
use persona_sense::psychometrics::{score_traits, ScoringKey};
use persona_sense::synth::generate;
use persona_sense::types::{trait_class_labels, Method, Participant, Trait, TraitScores};

use crate::config::RunConfig;
use crate::UsageError;

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    std::fs::read_to_string(&path).with_context(|| format!("reading {} (run the earlier stage first)", path.display()))
}

fn manifest(cfg: &RunConfig) -> Result<CohortManifest> {
    let path = cfg.manifest_path();
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading manifest {}", path.display()))?;
    let rows = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).count();
    if rows <= 1 {
        return Err(UsageError(format!("{}: empty cohort", path.display())).into());
    }
    Ok(parse_manifest(&path)?)
}

fn participants(cfg: &RunConfig) -> Result<Vec<Participant>> {
    Ok(manifest(cfg)?.participants())
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let cohort = generate(&cfg.synth).map_err(|e| UsageError(format!("synth config: {e}")))?;
    cohort.write_to_dir(&cfg.out).with_context(|| format!("writing cohort to {}", cfg.out.display()))?;
    eprintln!("synth: {} participants -> {}", cohort.manifest.entries.len(), cfg.out.display());
    Ok(())
}

pub fn features(cfg: &RunConfig) -> Result<()> {
    let manifest = manifest(cfg)?;
    let logs = load_logs(&manifest, DEFAULT_MALFORMED_TOLERANCE)?;
    let (matrix, report) = extract_cohort(&manifest.participants(), &logs, &cfg.features)?;
    write(&cfg.out, "features.csv", &matrix.to_csv())?;
    write(&cfg.out, "extraction_report.csv", &report.to_csv())?;
    eprintln!("features: {} x {}", matrix.n_rows(), matrix.names.len());
    Ok(())
}

fn feature_table(cfg: &RunConfig, parts: &[Participant]) -> Result<CohortMatrix> {
    CohortMatrix::from_csv(&read(cfg.input_dir(), "features.csv")?, parts).context("parsing features.csv")
}

pub fn label(cfg: &RunConfig) -> Result<()> {
    let parts = participants(cfg)?;
    let matrix = feature_table(cfg, &parts)?;
    let (kept, retention) = filter_missingness(&matrix, cfg.missing_threshold)?;
    let key = ScoringKey::ipip50();
    let scores: Vec<TraitScores> = kept.participants.iter().map(|p| score_traits(&p.responses, &key)).collect();
    let splits = Trait::ALL.iter().map(|&t| trait_class_labels(&scores, t)).collect::<Result<Vec<_>, _>>()?;

    let mut labels = String::from("id,country");
    for t in Trait::ALL {
        let _ = write!(labels, ",{t}_score,{t}_label");
    }
    labels.push('\n');
    for (i, p) in kept.participants.iter().enumerate() {
        let _ = write!(labels, "{},{}", p.id, p.country);
        for (k, &t) in Trait::ALL.iter().enumerate() {
            let _ = write!(labels, ",{},{}", scores[i].get(t), splits[k].labels[i]);
        }
        labels.push('\n');
    }
    let mut medians = String::from("trait,median,n_low,n_high\n");
    for (s, t) in splits.iter().zip(Trait::ALL) {
        let _ = writeln!(medians, "{t},{},{},{}", s.median, s.n_low, s.n_high);
    }
    let mut kept_csv = String::from("country,retained,total\n");
    for (c, (r, n)) in &retention.per_country {
        let _ = writeln!(kept_csv, "{c},{r},{n}");
    }
    write(&cfg.out, "labels.csv", &labels)?;
    write(&cfg.out, "medians.csv", &medians)?;
    write(&cfg.out, "retention.csv", &kept_csv)?;
    eprintln!("label: kept {} of {}", kept.n_rows(), matrix.n_rows());
    Ok(())
}

/// Reads `labels.csv`: (id, scores) in file order.
fn read_labels(cfg: &RunConfig) -> Result<Vec<(String, TraitScores)>> {
    let text = read(cfg.input_dir(), "labels.csv")?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| anyhow!("labels.csv is empty"))?.split(',').collect();
    let col = |t: Trait| {
        let name = format!("{t}_score");
        header.iter().position(|h| *h == name).ok_or_else(|| anyhow!("labels.csv: missing column {name}"))
    };
    let cols = Trait::ALL.iter().map(|&t| col(t)).collect::<Result<Vec<_>>>()?;
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let mut s = [0u8; 5];
            for (k, &c) in cols.iter().enumerate() {
                s[k] = f.get(c).and_then(|v| v.parse().ok()).ok_or_else(|| anyhow!("labels.csv line {}: bad score", i + 2))?;
            }
            Ok((f[0].to_string(), TraitScores::new(s)?))
        })
        .collect()
}

fn labelled_participants(cfg: &RunConfig) -> Result<(Vec<Participant>, Vec<TraitScores>)> {
    let by_id: BTreeMap<String, Participant> = participants(cfg)?.into_iter().map(|p| (p.id.clone(), p)).collect();
    let mut parts = Vec::new();
    let mut scores = Vec::new();
    for (id, s) in read_labels(cfg)? {
        parts.push(by_id.get(&id).cloned().ok_or_else(|| anyhow!("labels.csv: participant `{id}` not in manifest"))?);
        scores.push(s);
    }
    Ok((parts, scores))
}

pub fn impute(cfg: &RunConfig) -> Result<()> {
    let (parts, _) = labelled_participants(cfg)?;
    let all = feature_table(cfg, &participants(cfg)?)?;
    let row_of: BTreeMap<&str, usize> = all.participants.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
    let rows = parts
        .iter()
        .map(|p| row_of.get(p.id.as_str()).copied().ok_or_else(|| anyhow!("features.csv: no row for `{}`", p.id)))
        .collect::<Result<Vec<_>>>()?;
    let matrix = all.select_rows(&rows);
    let out = iterative_impute(&matrix, &cfg.impute)?;
    let complete = CohortMatrix::new(
        out.participants.clone(),
        out.features.names().to_vec(),
        (0..out.features.n_rows())
            .map(|i| (0..out.features.n_cols()).map(|j| Some(out.features.value(i, j))).collect())
            .collect(),
    )?;
    let mut report = String::from("column,missing\n");
    for (c, n) in &out.report.missing_per_column {
        let _ = writeln!(report, "{c},{n}");
    }
    let mut sweeps = String::from("sweep,max_change\n");
    for (i, c) in out.report.max_changes.iter().enumerate() {
        let _ = writeln!(sweeps, "{},{c}", i + 1);
    }
    write(&cfg.out, "imputed.csv", &complete.to_csv())?;
    write(&cfg.out, "imputation_report.csv", &report)?;
    write(&cfg.out, "imputation_sweeps.csv", &sweeps)?;
    eprintln!("impute: {} sweeps, converged={}", out.report.sweeps, out.report.converged);
    Ok(())
}

fn eval_cohort(cfg: &RunConfig) -> Result<EvalCohort> {
    let (parts, scores) = labelled_participants(cfg)?;
    let imputed = CohortMatrix::from_csv(&read(cfg.input_dir(), "imputed.csv")?, &parts).context("parsing imputed.csv")?;
    let ids: Vec<&str> = imputed.participants.iter().map(|p| p.id.as_str()).collect();
    if ids != parts.iter().map(|p| p.id.as_str()).collect::<Vec<_>>() {
        bail!("imputed.csv and labels.csv list different participants; rerun impute");
    }
    let mut columns = vec![Vec::with_capacity(imputed.n_rows()); imputed.names.len()];
    for (i, row) in imputed.rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            columns[j].push(v.ok_or_else(|| anyhow!("imputed.csv: empty cell at row {}, {}", i + 1, imputed.names[j]))?);
        }
    }
    let features = FeatureMatrix::from_columns(imputed.names.clone(), columns)?;
    Ok(EvalCohort::from_scores(parts, features, scores)?)
}

fn table_of(p: Population) -> &'static str {
    match p {
        Population::All => "table4_complete.csv",
        Population::GenderBalanced | Population::Female | Population::Male => "table5_gender.csv",
        Population::AgeBalanced => "table6_age.csv",
        Population::Student | Population::NonStudent => "table7_students.csv",
        Population::Country(_) => "table_country.csv",
    }
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let pops = RunConfig::parsed_populations(&cfg.populations)?;
    if let Some(p) = pops.iter().find(|p| matches!(p, Population::Country(_))) {
        return Err(UsageError(format!("population `{p}` spans one country; cross-country protocols need several")).into());
    }
    let cohort = eval_cohort(cfg)?;
    let mut tables: BTreeMap<&str, Vec<PerformanceRow>> = BTreeMap::new();
    let mut comparisons = Vec::new();
    for &pop in &pops {
        let mut by_method: BTreeMap<Method, Vec<EvalRun>> = BTreeMap::new();
        for &method in &cfg.methods {
            for &t in &cfg.traits {
                let run = evaluate_population(&cohort, pop, method, t, &cfg.protocol, cfg.seed)
                    .with_context(|| format!("evaluating {pop} / {method} / {t}"))?;
                write(&cfg.out, &format!("predictions/{pop}.{method}.{t}.csv"), &records_csv(&run))?;
                eprintln!("evaluate: {pop} {method} {t}: acc {:.2}% kappa {:.2}", 100.0 * run.accuracy, run.kappa);
                by_method.entry(method).or_default().push(run);
            }
        }
        for runs in by_method.values() {
            tables.entry(table_of(pop)).or_default().extend(PerformanceRow::from_runs(runs));
        }
        if let (Some(a), Some(b)) = (by_method.get(&Method::Method1), by_method.get(&Method::Method2)) {
            for (r1, r2) in a.iter().zip(b) {
                comparisons.push((pop.to_string(), r1.trait_name, mcnemar(r1, r2)?));
            }
        }
    }
    for (name, rows) in &tables {
        write(&cfg.out, name, &performance_csv(rows))?;
    }
    if !comparisons.is_empty() {
        write(&cfg.out, "mcnemar.csv", &mcnemar_csv(&comparisons))?;
    }
    Ok(())
}

pub fn importance(cfg: &RunConfig) -> Result<()> {
    let pops = RunConfig::parsed_populations(&cfg.importance.populations)?;
    let cohort = eval_cohort(cfg)?;
    let mut rows = Vec::new();
    for &pop in &pops {
        for &t in &cfg.traits {
            let row = importance_by_category(&cohort, pop, t, &cfg.protocol, cfg.seed)
                .with_context(|| format!("importance for {pop} / {t}"))?;
            eprintln!("importance: {pop} {t}: {}", row.argmax());
            rows.push(row);
        }
    }
    write(&cfg.out, "importance.csv", &importance_csv(&rows))
}

pub fn distributions(cfg: &RunConfig) -> Result<()> {
    let cohort = eval_cohort(cfg)?;
    let bins = feature_distributions(&cohort, &cfg.distributions.features, cfg.distributions.bins)
        .map_err(|e| UsageError(format!("distributions: {e}")))?;
    write(&cfg.out, "distributions.csv", &distributions_csv(&bins))
}
