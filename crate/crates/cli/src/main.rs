//! `ehrsynth`: generate, validate, report on, and load synthetic EHR cohorts.
//!
//! Exit status: 0 on success, 1 when `--strict` is set and any record failed
//! the validation gate, 2 on configuration errors, 3 when a stage fails.

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ehrsynth_core::config::{BackendKind, ConfigError, PipelineConfig, ScorerKind};
use ehrsynth_core::diversity::diversity_report;
use ehrsynth_core::load;
use ehrsynth_core::pipeline::{self as pl, Artifacts, PipelineError};
use ehrsynth_core::plausibility::{reference_narratives, REFERENCE_CORPUS_PATIENTS, REFERENCE_CORPUS_SEED};
use ehrsynth_core::schema::SchemaDef;
use ehrsynth_core::scoring::read_report_rows;
use ehrsynth_core::synth::{cohort_file, Cohort};

#[derive(Parser)]
#[command(name = "ehrsynth", version, about = "Synthetic EHR generation, validation and loading")]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Grammar,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scorers {
    Builtin,
    Remote,
}

/// Flags that override config keys.
#[derive(Args, Default)]
struct Overrides {
    /// Output directory (`output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread bound (`workers`).
    #[arg(long)]
    workers: Option<usize>,
    /// Number of patients (`generation.patients`).
    #[arg(long)]
    patients: Option<usize>,
    /// Base seed (`generation.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Generation backend (`generation.backend`).
    #[arg(long, value_enum)]
    backend: Option<Backend>,
    /// Scorer backends (`validation.scorers`).
    #[arg(long, value_enum)]
    scorers: Option<Scorers>,
    /// Write gate failures to a review file (`scoring.quarantine`).
    #[arg(long)]
    quarantine: bool,
    /// Connection URL without password (`load.database_url`).
    #[arg(long)]
    database_url: Option<String>,
}

#[derive(Args)]
struct Inputs {
    /// Cohort file; `<out>/cohort.jsonl` by default.
    #[arg(long)]
    cohort: Option<PathBuf>,
    /// Validation report CSV; `<out>/validation_report.csv` by default.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a cohort file.
    Generate {
        #[command(flatten)]
        o: Overrides,
    },
    /// Validate a cohort file and write the report, summary and histograms.
    Validate {
        #[command(flatten)]
        o: Overrides,
        #[command(flatten)]
        i: Inputs,
        /// Exit 1 if any record fails the gate.
        #[arg(long)]
        strict: bool,
    },
    /// Histograms and the diversity report from a cohort and its report CSV.
    Report {
        #[command(flatten)]
        o: Overrides,
        #[command(flatten)]
        i: Inputs,
    },
    /// Gate a validated cohort and write DDL and INSERT files.
    EmitSql {
        #[command(flatten)]
        o: Overrides,
        #[command(flatten)]
        i: Inputs,
    },
    /// Load into PostgreSQL, from an SQL file or a gated cohort.
    Load {
        #[command(flatten)]
        o: Overrides,
        #[command(flatten)]
        i: Inputs,
        /// Emitted INSERT file to run instead of gating a cohort.
        #[arg(long, conflicts_with_all = ["cohort", "report"])]
        sql: Option<PathBuf>,
        /// Create the tables in the same transaction first.
        #[arg(long)]
        create_schema: bool,
    },
    /// Every stage: generate, validate, report, emit SQL, optionally load.
    Pipeline {
        #[command(flatten)]
        o: Overrides,
        /// Exit 1 if any record fails the gate.
        #[arg(long)]
        strict: bool,
        /// Also load the gated cohort into the configured database.
        #[arg(long)]
        load: bool,
        #[arg(long, requires = "load")]
        create_schema: bool,
    },
    /// Print the default configuration.
    Config,
    /// Regenerate the reference corpus for the built-in perplexity model.
    Corpus {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = REFERENCE_CORPUS_PATIENTS)]
        patients: usize,
        #[arg(long, default_value_t = REFERENCE_CORPUS_SEED)]
        seed: u64,
    },
}

enum Failure {
    Config(String),
    Stage(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Stage(other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn stage_failure(stage: &str) -> impl Fn(String) -> Failure + '_ {
    move |m| Failure::Stage(format!("{stage} stage failed: {m}"))
}

fn resolve_config(path: Option<&Path>, o: &Overrides) -> Result<PipelineConfig, Failure> {
    let mut c = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = &o.out {
        c.output_dir = v.clone();
    }
    if let Some(v) = o.workers {
        c.workers = v;
    }
    if let Some(v) = o.patients {
        c.generation.patients = v;
    }
    if let Some(v) = o.seed {
        c.generation.seed = v;
    }
    if let Some(v) = o.backend {
        c.generation.backend = match v {
            Backend::Grammar => BackendKind::Grammar,
            Backend::Remote => BackendKind::Remote,
        };
    }
    if let Some(v) = o.scorers {
        c.validation.scorers = match v {
            Scorers::Builtin => ScorerKind::Builtin,
            Scorers::Remote => ScorerKind::Remote,
        };
    }
    if o.quarantine {
        c.scoring.quarantine = true;
    }
    if let Some(v) = &o.database_url {
        c.load.database_url = Some(v.clone());
    }
    c.validate()?;
    Ok(c)
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Stage(format!("output stage failed: {}: {e}", dir.display())))
}

fn read_cohort(c: &PipelineConfig, schema: &SchemaDef, i: &Inputs) -> Result<Cohort, Failure> {
    let path = i.cohort.clone().unwrap_or_else(|| c.output_dir.join(pl::COHORT_FILE));
    cohort_file::load(schema, &path).map_err(|e| Failure::Stage(format!("input stage failed: {e}")))
}

fn read_report(c: &PipelineConfig, i: &Inputs) -> Result<Vec<ehrsynth_core::scoring::ReportRow>, Failure> {
    let path = i.report.clone().unwrap_or_else(|| c.output_dir.join(pl::REPORT_FILE));
    let file = std::fs::File::open(&path).map_err(|e| Failure::Stage(format!("input stage failed: {}: {e}", path.display())))?;
    read_report_rows(file).map_err(|e| Failure::Stage(format!("input stage failed: {}: {e}", path.display())))
}

fn print_artifacts(a: &Artifacts) {
    for f in &a.files {
        println!("wrote {}", f.display());
    }
}

fn print_gate(records: usize, passed: usize) {
    println!("{records} records validated: {passed} passed, {} failed", records - passed);
}

fn load_gated(c: &PipelineConfig, schema: &SchemaDef, cohort: &Cohort, create_schema: bool) -> Result<(), Failure> {
    let rows = cohort.merged(schema);
    let violations = load::verify_referential_integrity(&rows, schema);
    if !violations.is_empty() {
        return Err(pl::integrity_error(&violations).into());
    }
    let mut client = load::connect(&c.load).map_err(|e| Failure::Stage(format!("load stage failed: {e}")))?;
    let mut cfg = c.load.clone();
    cfg.create_schema |= create_schema;
    let summary = load::load_database(&mut client, &rows, schema, &cfg)
        .map_err(|e| stage_failure("load")(format!("{e}; transaction rolled back, 0 rows committed")))?;
    for (table, n) in &summary.rows_per_table {
        println!("loaded {n:>6} {table}");
    }
    println!("committed {} rows", summary.committed_rows);
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Config => {
            print!("{}", PipelineConfig::default_toml());
            Ok(true)
        }
        Command::Corpus { output, patients, seed } => {
            let schema = pl::resolve_schema(&PipelineConfig::default())?;
            let lines = reference_narratives(&schema, patients, seed).map_err(|e| stage_failure("corpus")(e.to_string()))?;
            std::fs::write(&output, lines.join("\n") + "\n")
                .map_err(|e| stage_failure("corpus")(format!("{}: {e}", output.display())))?;
            println!("wrote {} narratives to {}", lines.len(), output.display());
            Ok(true)
        }
        Command::Generate { o } => {
            let c = resolve_config(config_path, &o)?;
            ensure_dir(&c.output_dir)?;
            let schema = pl::resolve_schema(&c)?;
            let cohort = pl::generate(&c, &schema)?;
            let mut a = Artifacts::default();
            pl::write_cohort_file(&c.output_dir, &cohort, &mut a)?;
            print_artifacts(&a);
            Ok(true)
        }
        Command::Validate { o, i, strict } => {
            let c = resolve_config(config_path, &o)?;
            ensure_dir(&c.output_dir)?;
            let schema = pl::resolve_schema(&c)?;
            let cohort = read_cohort(&c, &schema, &i)?;
            let v = pl::validate(&c, &schema, &cohort)?;
            let mut a = Artifacts::default();
            pl::write_report_files(&c.output_dir, &v.report, c.scoring.histogram_bins, &mut a)?;
            print_artifacts(&a);
            let passed = v.report.passed().count();
            print_gate(v.report.rows.len(), passed);
            Ok(!strict || passed == v.report.rows.len())
        }
        Command::Report { o, i } => {
            let c = resolve_config(config_path, &o)?;
            ensure_dir(&c.output_dir)?;
            let schema = pl::resolve_schema(&c)?;
            let cohort = read_cohort(&c, &schema, &i)?;
            let rows = read_report(&c, &i)?;
            let mut a = Artifacts::default();
            pl::write_histogram_files(&c.output_dir, &rows, c.scoring.histogram_bins, &mut a)?;
            let gated = pl::gate_cohort(&schema, &cohort, &rows);
            let d = diversity_report(&gated.cohort.merged(&schema), &schema, &c.diversity, c.generation.reference_date)
                .map_err(|e| stage_failure("diversity")(e.to_string()))?;
            pl::write_diversity_files(&c.output_dir, &d, &mut a)?;
            print_artifacts(&a);
            Ok(true)
        }
        Command::EmitSql { o, i } => {
            let c = resolve_config(config_path, &o)?;
            ensure_dir(&c.output_dir)?;
            let schema = pl::resolve_schema(&c)?;
            let cohort = read_cohort(&c, &schema, &i)?;
            let rows = read_report(&c, &i)?;
            let gated = pl::gate_cohort(&schema, &cohort, &rows);
            let mut a = Artifacts::default();
            pl::write_sql_files(&c.output_dir, &schema, &gated.cohort, c.load.batch_size, &mut a)?;
            if c.scoring.quarantine {
                pl::write_quarantine_file(&c.output_dir, &gated.quarantine, &mut a)?;
            }
            print_artifacts(&a);
            Ok(true)
        }
        Command::Load { o, i, sql, create_schema } => {
            let c = resolve_config(config_path, &o)?;
            let schema = pl::resolve_schema(&c)?;
            match sql {
                Some(path) => {
                    let mut text = std::fs::read_to_string(&path)
                        .map_err(|e| Failure::Stage(format!("input stage failed: {}: {e}", path.display())))?;
                    if create_schema || c.load.create_schema {
                        let ddl = ehrsynth_core::schema::emit_ddl(&schema).map_err(|e| stage_failure("load")(e.to_string()))?;
                        text = format!("{ddl}\n{text}");
                    }
                    let mut client = load::connect(&c.load).map_err(|e| stage_failure("load")(e.to_string()))?;
                    let summary = load::load_sql(&mut client, &text, &schema)
                        .map_err(|e| stage_failure("load")(format!("{e}; transaction rolled back, 0 rows committed")))?;
                    println!("committed; {} rows now in the schema tables", summary.committed_rows);
                    Ok(true)
                }
                None => {
                    let cohort = read_cohort(&c, &schema, &i)?;
                    let rows = read_report(&c, &i)?;
                    let gated = pl::gate_cohort(&schema, &cohort, &rows);
                    load_gated(&c, &schema, &gated.cohort, create_schema)?;
                    Ok(true)
                }
            }
        }
        Command::Pipeline {
            o,
            strict,
            load,
            create_schema,
        } => {
            let c = resolve_config(config_path, &o)?;
            let outcome = pl::run_pipeline(&c)?;
            print_artifacts(&outcome.artifacts);
            print_gate(outcome.records, outcome.passed);
            if load {
                let schema = pl::resolve_schema(&c)?;
                load_gated(&c, &schema, &outcome.gated, create_schema)?;
            }
            Ok(!strict || !outcome.has_failures())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: records failed the validation gate (--strict)");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
