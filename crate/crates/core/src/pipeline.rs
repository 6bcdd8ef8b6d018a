//! Stage orchestration shared by the CLI subcommands: generate, validate,
//! gate, report, emit SQL and load.
//!
//! Every stage takes its inputs explicitly, so any of them can start from a
//! persisted cohort file instead of regenerating.

use serde::Serialize;
use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::anomaly::{assess_anomalies, AnomalyRun};
use crate::catalog::{reference_corpus, DrugClassMap};
use crate::coherence::{assess_coherence, CoherenceScorer, LexicalScorer};
use crate::config::{BackendKind, ConfigError, PipelineConfig, ScorerKind};
use crate::consistency::{assess_consistency, ConsistencyRule, NliClassifier, RuleBasedNli, RuleSet};
use crate::diversity::{diversity_report, DiversityReport};
use crate::load::{emit_inserts, verify_referential_integrity, Violation};
use crate::plausibility::{assess_plausibility, build_narrative, NgramLm, PerplexityScorer};
use crate::record::{cohort_records, remove_visits, VisitRecord};
use crate::schema::{build_default_schema, check_value_ranges, emit_ddl, SchemaDef, Severity};
use crate::scorers::RemoteScorer;
use crate::scoring::{
    build_report, emit_histograms, metric_values, write_histogram_csv, Binning, CheckResults, Metric, ReportRow,
    ValidationReport,
};
use crate::synth::cohort_file;
use crate::synth::{generate_cohort, Cohort, GenerationBackend, Generator, GrammarBackend, RemoteLlmBackend, TemplateSet};
use crate::value::Record;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage} stage failed: {message}")]
    Stage { stage: &'static str, message: String },
}

fn stage<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        message: e.to_string(),
    }
}

pub const COHORT_FILE: &str = "cohort.jsonl";
pub const REPORT_FILE: &str = "validation_report.csv";
pub const SUMMARY_FILE: &str = "validation_summary.json";
pub const DIVERSITY_JSON_FILE: &str = "diversity_report.json";
pub const DIVERSITY_CSV_FILE: &str = "diversity_report.csv";
pub const DDL_FILE: &str = "schema.sql";
pub const SQL_FILE: &str = "gated_inserts.sql";
pub const QUARANTINE_FILE: &str = "quarantine.jsonl";

pub fn histogram_file(metric: Metric) -> String {
    format!("hist_{}.csv", metric.name())
}

pub fn resolve_schema(config: &PipelineConfig) -> Result<SchemaDef, PipelineError> {
    match &config.generation.schema {
        Some(path) => SchemaDef::load(path).map_err(stage("schema")),
        None => Ok(build_default_schema()),
    }
}

fn thread_pool(config: &PipelineConfig) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(stage("setup"))
}

pub fn generate(config: &PipelineConfig, schema: &SchemaDef) -> Result<Cohort, PipelineError> {
    let g = &config.generation;
    let templates = match &g.templates {
        Some(path) => TemplateSet::load(path).map_err(stage("generate"))?,
        None => TemplateSet::builtin(),
    };
    let backend: Box<dyn GenerationBackend> = match g.backend {
        BackendKind::Grammar => Box::new(GrammarBackend {
            defect_rate: g.grammar.defect_rate,
            malformed_rate: g.grammar.malformed_rate,
        }),
        BackendKind::Remote => Box::new(RemoteLlmBackend::from_env(g.remote.clone()).map_err(stage("generate"))?),
    };
    let gen_config = g.generation_config();
    let gen = Generator::new(schema, &templates, backend.as_ref(), &gen_config);
    generate_cohort(&gen, g.patients, g.seed, config.workers).map_err(stage("generate"))
}

struct Scorers {
    coherence: Box<dyn CoherenceScorer + Sync>,
    perplexity: Box<dyn PerplexityScorer + Sync>,
    nli: Box<dyn NliClassifier + Sync>,
}

fn rule_set(config: &PipelineConfig) -> Result<RuleSet, PipelineError> {
    let v = &config.validation;
    RuleSet::new(
        v.rules.clone().unwrap_or_else(ConsistencyRule::builtins),
        v.drug_classes.clone().unwrap_or_else(|| DrugClassMap::builtin().clone()),
        v.severity_bands.clone(),
    )
    .map_err(stage("validate"))
}

fn scorers(config: &PipelineConfig, rules: &RuleSet) -> Result<Scorers, PipelineError> {
    let v = &config.validation;
    Ok(match v.scorers {
        ScorerKind::Builtin => {
            let lm = match &v.corpus {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| stage("validate")(format!("{}: {e}", path.display())))?;
                    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
                    NgramLm::train(&lines, v.ngram_order, v.ngram_k)
                }
                None => NgramLm::train(&reference_corpus(), v.ngram_order, v.ngram_k),
            }
            .map_err(stage("validate"))?;
            Scorers {
                coherence: Box::new(LexicalScorer),
                perplexity: Box::new(lm),
                nli: Box::new(RuleBasedNli::new(rules.clone(), v.nli_epsilon).map_err(stage("validate"))?),
            }
        }
        ScorerKind::Remote => {
            let remote = std::sync::Arc::new(RemoteScorer::from_env(&v.remote).map_err(stage("validate"))?);
            Scorers {
                coherence: Box::new(SharedRemote(remote.clone())),
                perplexity: Box::new(SharedRemote(remote.clone())),
                nli: Box::new(SharedRemote(remote)),
            }
        }
    })
}

/// Lets one remote client serve all three scorer roles.
struct SharedRemote(std::sync::Arc<RemoteScorer>);

impl CoherenceScorer for SharedRemote {
    fn score_pairs(&self, pairs: &[crate::coherence::SentencePair]) -> Result<Vec<f64>, crate::scorers::ScorerError> {
        self.0.score_pairs(pairs)
    }
}

impl PerplexityScorer for SharedRemote {
    fn perplexities(&self, texts: &[String]) -> Result<Vec<f64>, crate::scorers::ScorerError> {
        self.0.perplexities(texts)
    }
}

impl NliClassifier for SharedRemote {
    fn classify(
        &self,
        pairs: &[crate::consistency::PremiseHypothesis],
    ) -> Result<Vec<crate::consistency::NliLabelDistribution>, crate::consistency::ConsistencyError> {
        self.0.classify(pairs)
    }
}

/// Output of the validation stage.
pub struct Validation {
    pub records: Vec<VisitRecord>,
    pub report: ValidationReport,
    pub anomaly: AnomalyRun,
}

/// Runs every check on every visit and assembles the report.
pub fn validate(config: &PipelineConfig, schema: &SchemaDef, cohort: &Cohort) -> Result<Validation, PipelineError> {
    let pool = thread_pool(config)?;
    pool.install(|| {
        let records = cohort_records(schema, cohort);
        let rules = rule_set(config)?;
        let s = scorers(config, &rules)?;
        let v = &config.validation;
        let coherence = assess_coherence(&records, s.coherence.as_ref(), v.coherence_threshold()).map_err(stage("coherence"))?;
        let narratives: Vec<_> = records.iter().map(build_narrative).collect();
        let (plausibility, perplexity_threshold) =
            assess_plausibility(&narratives, s.perplexity.as_ref(), v.perplexity_percentile).map_err(stage("plausibility"))?;
        let consistency = assess_consistency(&records, s.nli.as_ref(), &rules).map_err(stage("consistency"))?;
        let anomaly = assess_anomalies(&records, &config.anomaly).map_err(stage("anomaly"))?;
        for w in &anomaly.warnings {
            tracing::warn!("anomaly: {w}");
        }
        let checks = CheckResults {
            coherence: &coherence,
            plausibility: &plausibility,
            perplexity_threshold,
            consistency: &consistency,
            anomaly: &anomaly,
        };
        let report = build_report(schema, &records, &checks, &config.scoring.weights).map_err(stage("report"))?;
        Ok(Validation {
            records,
            report,
            anomaly,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuarantineEntry {
    pub record_id: i64,
    pub patient_id: i64,
    pub reasons: Vec<String>,
    pub hard_range_violations: Vec<String>,
    pub rows: serde_json::Map<String, serde_json::Value>,
}

fn rows_json(rows: &crate::synth::TableRows) -> serde_json::Map<String, serde_json::Value> {
    rows.iter()
        .map(|(t, rs)| (t.clone(), serde_json::Value::Array(rs.iter().map(Record::to_json).collect())))
        .collect()
}

fn has_hard_violation(schema: &SchemaDef, rows: &crate::synth::TableRows) -> bool {
    rows.iter().any(|(t, rs)| {
        schema.table(t).is_some_and(|def| {
            rs.iter().any(|r| {
                check_value_ranges(def, r).map_or(true, |v| v.iter().any(|v| v.severity == Severity::Hard))
            })
        })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gated {
    pub cohort: Cohort,
    pub quarantine: Vec<QuarantineEntry>,
    /// Patients removed whole because a patient-level row was out of range.
    pub dropped_patients: Vec<i64>,
}

/// Removes every failed visit with its dependent rows. A patient whose
/// remaining rows still hold a physiologically impossible value (which only
/// patient-level tables can, once failed visits are gone) is removed whole.
pub fn gate_cohort(schema: &SchemaDef, cohort: &Cohort, report: &[ReportRow]) -> Gated {
    let failed: BTreeSet<i64> = report.iter().filter(|r| !r.passed).map(|r| r.record_id).collect();
    let by_id: std::collections::HashMap<i64, &ReportRow> = report.iter().map(|r| (r.record_id, r)).collect();
    let quarantine = cohort_records(schema, cohort)
        .iter()
        .filter(|r| failed.contains(&r.visit_id))
        .map(|r| {
            let row = by_id[&r.visit_id];
            QuarantineEntry {
                record_id: r.visit_id,
                patient_id: r.patient_id,
                reasons: row.reasons.clone(),
                hard_range_violations: row.hard_range_violations.clone(),
                rows: rows_json(&r.rows),
            }
        })
        .collect();
    let mut gated = cohort.clone();
    let mut dropped_patients = Vec::new();
    gated.patients.retain_mut(|bundle| {
        remove_visits(schema, bundle, &failed);
        if has_hard_violation(schema, &bundle.rows) {
            dropped_patients.push(bundle.patient_id);
            false
        } else {
            true
        }
    });
    Gated {
        cohort: gated,
        quarantine,
        dropped_patients,
    }
}

/// Files written by [`run_pipeline`] and friends, relative to the output dir.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| stage("output")(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| stage("output")(format!("{}: {e}", path.display()))
}

pub fn write_cohort_file(dir: &Path, cohort: &Cohort, out: &mut Artifacts) -> Result<(), PipelineError> {
    let path = dir.join(COHORT_FILE);
    cohort_file::save(cohort, &path).map_err(stage("output"))?;
    out.files.push(path);
    Ok(())
}

/// Report CSV, summary, and one histogram per metric.
pub fn write_report_files(
    dir: &Path,
    report: &ValidationReport,
    bins: usize,
    out: &mut Artifacts,
) -> Result<(), PipelineError> {
    let path = dir.join(REPORT_FILE);
    report.write_csv(create(&path)?).map_err(stage("report"))?;
    out.files.push(path);

    let path = dir.join(SUMMARY_FILE);
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &report.summary()).map_err(stage("report"))?;
    w.write_all(b"\n").map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))?;
    out.files.push(path);
    write_histogram_files(dir, &report.rows, bins, out)
}

/// One `hist_<metric>.csv` per metric over the rows that have a value.
pub fn write_histogram_files(dir: &Path, rows: &[ReportRow], bins: usize, out: &mut Artifacts) -> Result<(), PipelineError> {
    for metric in Metric::ALL {
        let values = metric_values(rows, metric);
        let path = dir.join(histogram_file(metric));
        let hist = if values.is_empty() {
            Vec::new()
        } else {
            emit_histograms(&values, &Binning::Count(bins)).map_err(stage("report"))?
        };
        write_histogram_csv(&hist, create(&path)?).map_err(stage("report"))?;
        out.files.push(path);
    }
    Ok(())
}

pub fn write_diversity_files(dir: &Path, report: &DiversityReport, out: &mut Artifacts) -> Result<(), PipelineError> {
    let path = dir.join(DIVERSITY_JSON_FILE);
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, report).map_err(stage("diversity"))?;
    w.write_all(b"\n").map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))?;
    out.files.push(path);
    let path = dir.join(DIVERSITY_CSV_FILE);
    report.write_csv(create(&path)?).map_err(stage("diversity"))?;
    out.files.push(path);
    Ok(())
}

/// DDL plus the gated INSERTs; fails if the rows are not referentially closed.
pub fn write_sql_files(
    dir: &Path,
    schema: &SchemaDef,
    cohort: &Cohort,
    batch_size: usize,
    out: &mut Artifacts,
) -> Result<(), PipelineError> {
    let rows = cohort.merged(schema);
    let violations = verify_referential_integrity(&rows, schema);
    if !violations.is_empty() {
        return Err(integrity_error(&violations));
    }
    let path = dir.join(DDL_FILE);
    let ddl = emit_ddl(schema).map_err(stage("emit-sql"))?;
    std::fs::write(&path, ddl).map_err(io_err(&path))?;
    out.files.push(path);
    let path = dir.join(SQL_FILE);
    let sql = emit_inserts(&rows, schema, batch_size).map_err(stage("emit-sql"))?;
    std::fs::write(&path, sql).map_err(io_err(&path))?;
    out.files.push(path);
    Ok(())
}

pub fn integrity_error(violations: &[Violation]) -> PipelineError {
    let shown: Vec<String> = violations.iter().take(5).map(|v| v.to_string()).collect();
    stage("integrity")(format!(
        "{} referential-integrity violation(s): {}{}",
        violations.len(),
        shown.join("; "),
        if violations.len() > 5 { "; ..." } else { "" }
    ))
}

pub fn write_quarantine_file(dir: &Path, entries: &[QuarantineEntry], out: &mut Artifacts) -> Result<(), PipelineError> {
    let path = dir.join(QUARANTINE_FILE);
    let mut w = create(&path)?;
    for e in entries {
        serde_json::to_writer(&mut w, e).map_err(stage("output"))?;
        w.write_all(b"\n").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    out.files.push(path);
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub artifacts: Artifacts,
    pub records: usize,
    pub passed: usize,
    pub failed: usize,
    pub gated_patients: usize,
    /// The cohort that passed the gate, as written to the SQL file.
    pub gated: Cohort,
}

impl PipelineOutcome {
    pub fn has_failures(&self) -> bool {
        self.failed > 0
    }
}

/// Every stage: generate, validate, gate, report, diversity on the gated
/// cohort, SQL emission, and the quarantine file when enabled.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    config.validate()?;
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| stage("output")(format!("{}: {e}", dir.display())))?;
    let schema = resolve_schema(config)?;
    let cohort = generate(config, &schema)?;
    run_from_cohort(config, &schema, &cohort, true)
}

/// The stages after generation, for a cohort read from disk or just made.
pub fn run_from_cohort(
    config: &PipelineConfig,
    schema: &SchemaDef,
    cohort: &Cohort,
    write_cohort: bool,
) -> Result<PipelineOutcome, PipelineError> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| stage("output")(format!("{}: {e}", dir.display())))?;
    let mut artifacts = Artifacts::default();
    if write_cohort {
        write_cohort_file(dir, cohort, &mut artifacts)?;
    }
    let validation = validate(config, schema, cohort)?;
    write_report_files(dir, &validation.report, config.scoring.histogram_bins, &mut artifacts)?;
    let gated = gate_cohort(schema, cohort, &validation.report.rows);
    for p in &gated.dropped_patients {
        tracing::warn!("patient {p} removed: a patient-level value is physiologically impossible");
    }
    let diversity = diversity_report(
        &gated.cohort.merged(schema),
        schema,
        &config.diversity,
        config.generation.reference_date,
    )
    .map_err(stage("diversity"))?;
    write_diversity_files(dir, &diversity, &mut artifacts)?;
    write_sql_files(dir, schema, &gated.cohort, config.load.batch_size, &mut artifacts)?;
    if config.scoring.quarantine {
        write_quarantine_file(dir, &gated.quarantine, &mut artifacts)?;
    }
    let summary = validation.report.summary();
    Ok(PipelineOutcome {
        artifacts,
        records: summary.records,
        passed: summary.passed,
        failed: summary.failed,
        gated_patients: gated.cohort.patients.len(),
        gated: gated.cohort,
    })
}
