//! Pipeline configuration: one TOML file with `[generation]`, `[validation]`,
//! `[anomaly]`, `[diversity]`, `[scoring]` and `[load]` sections plus a
//! top-level `workers` bound. Every key is optional and defaults as shown by
//! `ehrsynth config`.
//!
//! Secrets never live here. Remote backends name the environment variable
//! that holds their token, and database passwords come from the environment.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::anomaly::AnomalyConfig;
use crate::catalog::{DrugClassMap, SeverityBands};
use crate::coherence::{DEFAULT_LEXICAL_THRESHOLD, DEFAULT_REMOTE_THRESHOLD};
use crate::consistency::{ConsistencyRule, DEFAULT_EPSILON};
use crate::diversity::DiversityConfig;
use crate::load::LoadConfig;
use crate::plausibility::{DEFAULT_K, DEFAULT_ORDER, DEFAULT_PERCENTILE};
use crate::scorers::RemoteScorerConfig;
use crate::scoring::ScoreWeights;
use crate::synth::{CountConfig, DiversityParams, GenerationConfig, RemoteLlmConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Grammar,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    #[default]
    Builtin,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrammarSettings {
    pub defect_rate: f64,
    pub malformed_rate: f64,
}

impl Default for GrammarSettings {
    fn default() -> Self {
        let g = crate::synth::GrammarBackend::default();
        Self {
            defect_rate: g.defect_rate,
            malformed_rate: g.malformed_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub patients: usize,
    pub seed: u64,
    pub backend: BackendKind,
    /// TOML template file; the built-in templates otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    /// TOML schema file; the built-in 22-table schema otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    pub retry_limit: u32,
    pub max_len: usize,
    pub reference_date: NaiveDate,
    pub grammar: GrammarSettings,
    pub remote: RemoteLlmConfig,
    pub counts: CountConfig,
    pub demographics: DiversityParams,
}

impl Default for GenerationSection {
    fn default() -> Self {
        let g = GenerationConfig::default();
        Self {
            patients: 42,
            seed: 1,
            backend: BackendKind::Grammar,
            templates: None,
            schema: None,
            retry_limit: g.retry_limit,
            max_len: g.max_len,
            reference_date: g.reference_date,
            grammar: GrammarSettings::default(),
            remote: RemoteLlmConfig::default(),
            counts: g.counts,
            demographics: g.diversity,
        }
    }
}

impl GenerationSection {
    pub fn generation_config(&self) -> GenerationConfig {
        GenerationConfig {
            retry_limit: self.retry_limit,
            max_len: self.max_len,
            reference_date: self.reference_date,
            counts: self.counts.clone(),
            diversity: self.demographics.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSection {
    pub scorers: ScorerKind,
    /// Flag threshold on the mean pair score of the built-in lexical scorer.
    pub coherence_threshold_builtin: f64,
    /// Flag threshold on the mean next-sentence probability of a remote scorer.
    pub coherence_threshold_remote: f64,
    pub perplexity_percentile: f64,
    pub ngram_order: usize,
    pub ngram_k: f64,
    /// Reference corpus, one narrative per line; the shipped corpus otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    pub nli_epsilon: f64,
    /// Replaces the built-in rules when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rules: Option<Vec<ConsistencyRule>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drug_classes: Option<DrugClassMap>,
    pub severity_bands: SeverityBands,
    pub remote: RemoteScorerConfig,
}

impl Default for ValidationSection {
    fn default() -> Self {
        Self {
            scorers: ScorerKind::Builtin,
            coherence_threshold_builtin: DEFAULT_LEXICAL_THRESHOLD,
            coherence_threshold_remote: DEFAULT_REMOTE_THRESHOLD,
            perplexity_percentile: DEFAULT_PERCENTILE,
            ngram_order: DEFAULT_ORDER,
            ngram_k: DEFAULT_K,
            corpus: None,
            nli_epsilon: DEFAULT_EPSILON,
            rules: None,
            drug_classes: None,
            severity_bands: SeverityBands::default(),
            remote: RemoteScorerConfig::default(),
        }
    }
}

impl ValidationSection {
    pub fn coherence_threshold(&self) -> f64 {
        match self.scorers {
            ScorerKind::Builtin => self.coherence_threshold_builtin,
            ScorerKind::Remote => self.coherence_threshold_remote,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringSection {
    pub weights: ScoreWeights,
    pub histogram_bins: usize,
    /// Write gate failures to a review file instead of only dropping them.
    pub quarantine: bool,
}

impl Default for ScoringSection {
    fn default() -> Self {
        Self {
            weights: ScoreWeights::default(),
            histogram_bins: 20,
            quarantine: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Upper bound on worker threads for every parallel stage.
    pub workers: usize,
    pub output_dir: PathBuf,
    pub generation: GenerationSection,
    pub validation: ValidationSection,
    pub anomaly: AnomalyConfig,
    pub diversity: DiversityConfig,
    pub scoring: ScoringSection,
    pub load: LoadConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            output_dir: PathBuf::from("out"),
            generation: GenerationSection::default(),
            validation: ValidationSection::default(),
            anomaly: AnomalyConfig::default(),
            diversity: DiversityConfig::default(),
            scoring: ScoringSection::default(),
            load: LoadConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.message().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// The full default configuration as TOML.
    pub fn default_toml() -> String {
        toml::to_string_pretty(&Self::default()).expect("default config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.generation.patients == 0 {
            return bad("generation.patients must be at least 1".into());
        }
        for (name, p) in [
            ("generation.grammar.defect_rate", self.generation.grammar.defect_rate),
            ("generation.grammar.malformed_rate", self.generation.grammar.malformed_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        self.generation
            .generation_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let v = &self.validation;
        if !(v.perplexity_percentile > 0.0 && v.perplexity_percentile <= 100.0) {
            return bad("validation.perplexity_percentile must lie in (0, 100]".into());
        }
        if v.ngram_order == 0 {
            return bad("validation.ngram_order must be at least 1".into());
        }
        if v.ngram_k.is_nan() || v.ngram_k <= 0.0 {
            return bad("validation.ngram_k must be positive".into());
        }
        if !(0.0..1.0 / 3.0).contains(&v.nli_epsilon) {
            return bad("validation.nli_epsilon must lie in [0, 1/3)".into());
        }
        if self.diversity.age_cuts.len() != 2 || self.diversity.age_cuts[0] >= self.diversity.age_cuts[1] {
            return bad("diversity.age_cuts must be two increasing ages".into());
        }
        if self.scoring.histogram_bins == 0 {
            return bad("scoring.histogram_bins must be at least 1".into());
        }
        if self.load.batch_size == 0 {
            return bad("load.batch_size must be at least 1".into());
        }
        if let Some(url) = &self.load.database_url {
            let parsed: postgres::Config = url.parse().map_err(|e| ConfigError::Invalid(format!("load.database_url: {e}")))?;
            if parsed.get_password().is_some() {
                return bad(format!(
                    "load.database_url must not contain a password; use {} or {}",
                    crate::load::PASSWORD_ENV,
                    crate::load::DATABASE_URL_ENV
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml("", "x").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn default_toml_round_trips() {
        let text = PipelineConfig::default_toml();
        for section in ["[generation]", "[validation]", "[anomaly]", "[diversity]", "[scoring]", "[load]"] {
            assert!(text.contains(section), "missing {section}");
        }
        assert_eq!(PipelineConfig::from_toml(&text, "x").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn documented_defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.scoring.weights, ScoreWeights { coherence: 0.5, contradiction: 0.5, anomaly: 0.5 });
        assert_eq!(c.validation.perplexity_percentile, 95.0);
        assert_eq!(c.validation.coherence_threshold_remote, 0.99);
        assert_eq!(c.diversity.coverage_floor, 0.8);
        assert_eq!(c.load.batch_size, 500);
        assert_eq!(c.anomaly.train.epochs, 200);
        assert_eq!(c.generation.patients, 42);
    }

    #[test]
    fn partial_sections_override() {
        let c = PipelineConfig::from_toml(
            "workers = 2\n[anomaly]\nepochs = 10\n[scoring.weights]\nanomaly = 0.0\n[validation]\nscorers = \"remote\"\n",
            "x",
        )
        .unwrap();
        assert_eq!(c.workers, 2);
        assert_eq!(c.anomaly.train.epochs, 10);
        assert_eq!(c.anomaly.train.learning_rate, 1e-3);
        assert_eq!(c.scoring.weights.anomaly, 0.0);
        assert_eq!(c.scoring.weights.coherence, 0.5);
        assert_eq!(c.validation.coherence_threshold(), 0.99);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        for text in [
            "bogus = 1",
            "[generation]\npatient = 3",
            "[anomaly]\nepoch = 3",
            "[load]\npassword = \"x\"",
            "workers = 0",
            "[validation]\nperplexity_percentile = 0.0",
        ] {
            assert!(PipelineConfig::from_toml(text, "x").is_err(), "{text}");
        }
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = PipelineConfig::load(Path::new("/nonexistent/ehrsynth.toml")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/ehrsynth.toml"));
    }
}
