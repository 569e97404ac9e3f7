//! Run configuration: one TOML file covering every stage.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use persona_sense::eval::{Population, ProtocolParams};
use persona_sense::features::FeatureConfig;
use persona_sense::impute::ImputeParams;
use persona_sense::pipeline::DEFAULT_MISSING_THRESHOLD;
use persona_sense::synth::GeneratorConfig;
use persona_sense::types::{Method, Trait};
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream derives from it.
    pub seed: u64,
    /// Directory the stage writes into.
    pub out: PathBuf,
    /// Directory holding earlier-stage artifacts; defaults to `out`.
    pub input: Option<PathBuf>,
    /// Cohort manifest; defaults to `<input>/manifest.csv`.
    pub manifest: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub populations: Vec<String>,
    pub traits: Vec<Trait>,
    pub missing_threshold: f64,
    pub synth: GeneratorConfig,
    pub features: FeatureConfig,
    pub impute: ImputeParams,
    pub protocol: ProtocolParams,
    pub importance: ImportanceConfig,
    pub distributions: DistributionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportanceConfig {
    pub populations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistributionConfig {
    pub features: Vec<String>,
    pub bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            input: None,
            manifest: None,
            methods: vec![Method::Method1, Method::Method2],
            populations: ["all", "gender_balanced", "female", "male", "age_balanced", "student", "non_student"]
                .map(String::from)
                .to_vec(),
            traits: Trait::ALL.to_vec(),
            missing_threshold: DEFAULT_MISSING_THRESHOLD,
            synth: GeneratorConfig::default(),
            features: FeatureConfig::default(),
            impute: ImputeParams::default(),
            protocol: ProtocolParams::default(),
            importance: ImportanceConfig::default(),
            distributions: DistributionConfig::default(),
        }
    }
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig { populations: ["all", "UK", "ES", "PE", "CO", "CL"].map(String::from).to_vec() }
    }
}

impl Default for DistributionConfig {
    fn default() -> Self {
        DistributionConfig {
            features: [
                "noise.median_db.entire_day.mean.weekday",
                "location.gyration_radius.mean.weekday",
                "calls.outgoing_count.mean.weekday",
                "unlocks.unlock_count.mean.weekday",
                "pedometer.steps.entire_day.mean.weekday",
            ]
            .map(String::from)
            .to_vec(),
            bins: 20,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub populations: Option<String>,
    pub method: Option<String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, o: Overrides) -> Result<RunConfig> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str::<RunConfig>(&text)
                    .map_err(|e| UsageError(format!("{}: {}", p.display(), e.message())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = o.seed {
            cfg.seed = s;
        }
        if let Some(out) = o.out {
            cfg.out = out;
        }
        if let Some(list) = o.populations {
            cfg.populations = list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            cfg.importance.populations = cfg.populations.clone();
        }
        if let Some(m) = o.method {
            cfg.methods = match m.trim() {
                "both" => vec![Method::Method1, Method::Method2],
                one => vec![one.parse().map_err(|e| UsageError(format!("--method: {e}")))?],
            };
        }
        cfg.synth.seed = cfg.seed;
        if !(cfg.missing_threshold > 0.0 && cfg.missing_threshold < 1.0) {
            return Err(UsageError(format!("missing_threshold must be in (0, 1), got {}", cfg.missing_threshold)).into());
        }
        if cfg.methods.is_empty() || cfg.traits.is_empty() {
            return Err(UsageError("methods and traits must not be empty".into()).into());
        }
        Ok(cfg)
    }

    pub fn input_dir(&self) -> &Path {
        self.input.as_deref().unwrap_or(&self.out)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.input_dir().join("manifest.csv"))
    }

    pub fn parsed_populations(list: &[String]) -> Result<Vec<Population>> {
        list.iter()
            .map(|s| s.parse::<Population>().map_err(|e| UsageError(format!("population: {e}")).into()))
            .collect()
    }

    /// Writes the effective configuration next to the stage outputs.
    pub fn echo(&self, stage: &str) -> Result<()> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let text = toml::to_string(self).context("serializing effective config")?;
        let path = self.out.join(format!("config.{stage}.toml"));
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
