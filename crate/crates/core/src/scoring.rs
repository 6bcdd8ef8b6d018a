//! Per-record validation report: combined anomaly score, pass/fail gate, and
//! plot-ready histograms of the score distributions.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use thiserror::Error;

use crate::anomaly::AnomalyRun;
use crate::coherence::CoherenceResult;
use crate::consistency::ConsistencyResult;
use crate::plausibility::PlausibilityResult;
use crate::record::VisitRecord;
use crate::schema::{check_value_ranges, SchemaDef, SchemaError, Severity};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("missing {0} sub-score")]
    MissingSubscore(&'static str),
    #[error("checks not executed: {}", .0.join(", "))]
    IncompleteChecks(Vec<&'static str>),
    #[error("no values to bin")]
    EmptyScores,
    #[error("invalid histogram spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("failed to write report: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to write report: {0}")]
    Csv(#[from] csv::Error),
    #[error("failed to write report: {0}")]
    Json(#[from] serde_json::Error),
}

pub const CHECK_COHERENCE: &str = "coherence";
pub const CHECK_PLAUSIBILITY: &str = "plausibility";
pub const CHECK_CONSISTENCY: &str = "consistency";
pub const CHECK_ANOMALY: &str = "anomaly";
pub const CHECK_HARD_RANGE: &str = "hard-range";
/// Gate reason for a record whose checks could not all run.
pub const REASON_INCOMPLETE: &str = "incomplete";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreWeights {
    pub coherence: f64,
    pub contradiction: f64,
    pub anomaly: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            coherence: 0.5,
            contradiction: 0.5,
            anomaly: 0.5,
        }
    }
}

/// The four sub-scores the combined score is built from.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SubScores {
    pub perplexity: Option<f64>,
    pub coherence_avg: Option<f64>,
    pub max_contradiction: Option<f64>,
    pub reconstruction_error: Option<f64>,
}

/// `ppl + w_c·100(1 − coh) + w_n·100·P(contra)max + w_a·100·min(err/thr, 1)`.
///
/// A zero threshold counts any positive error as saturating.
pub fn combined_anomaly_score(s: &SubScores, anomaly_threshold: f64, w: &ScoreWeights) -> Result<f64, ScoringError> {
    let ppl = s.perplexity.ok_or(ScoringError::MissingSubscore(CHECK_PLAUSIBILITY))?;
    let coh = s.coherence_avg.ok_or(ScoringError::MissingSubscore(CHECK_COHERENCE))?;
    let contra = s.max_contradiction.ok_or(ScoringError::MissingSubscore(CHECK_CONSISTENCY))?;
    let err = s.reconstruction_error.ok_or(ScoringError::MissingSubscore(CHECK_ANOMALY))?;
    let ratio = if anomaly_threshold > 0.0 {
        (err / anomaly_threshold).min(1.0)
    } else if err > 0.0 {
        1.0
    } else {
        0.0
    };
    // skip zero-weight terms so that all-zero weights reproduce ppl bit for bit
    let mut score = ppl;
    for (weight, penalty) in [(w.coherence, 1.0 - coh), (w.contradiction, contra), (w.anomaly, ratio)] {
        if weight != 0.0 {
            score += weight * 100.0 * penalty;
        }
    }
    Ok(score)
}

/// Per-check flags; `None` means the check did not run for this record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckFlags {
    pub coherence: Option<bool>,
    pub plausibility: Option<bool>,
    pub consistency: Option<bool>,
    pub anomaly: Option<bool>,
    pub hard_range: Option<bool>,
}

impl CheckFlags {
    fn named(&self) -> [(&'static str, Option<bool>); 5] {
        [
            (CHECK_COHERENCE, self.coherence),
            (CHECK_PLAUSIBILITY, self.plausibility),
            (CHECK_CONSISTENCY, self.consistency),
            (CHECK_ANOMALY, self.anomaly),
            (CHECK_HARD_RANGE, self.hard_range),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateVerdict {
    pub passed: bool,
    pub reasons: Vec<String>,
}

/// Passes iff every check ran and none flagged; otherwise lists each
/// tripped check.
pub fn gate_record(flags: &CheckFlags) -> Result<GateVerdict, ScoringError> {
    let missing: Vec<&'static str> = flags.named().iter().filter(|(_, f)| f.is_none()).map(|(n, _)| *n).collect();
    if !missing.is_empty() {
        return Err(ScoringError::IncompleteChecks(missing));
    }
    let reasons: Vec<String> = flags
        .named()
        .iter()
        .filter(|(_, f)| *f == Some(true))
        .map(|(n, _)| n.to_string())
        .collect();
    Ok(GateVerdict {
        passed: reasons.is_empty(),
        reasons,
    })
}

/// Physiologically impossible values anywhere in the record's rows, as
/// `table.column=value` strings.
pub fn hard_range_violations(schema: &SchemaDef, record: &VisitRecord) -> Result<Vec<String>, ScoringError> {
    let mut out = Vec::new();
    for (table, rows) in &record.rows {
        let Some(def) = schema.table(table) else { continue };
        for row in rows {
            for v in check_value_ranges(def, row)? {
                if v.severity == Severity::Hard {
                    out.push(format!("{}.{}={}", v.table, v.column, v.value));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub record_id: i64,
    pub patient_id: i64,
    pub coherence_avg: Option<f64>,
    pub perplexity: Option<f64>,
    pub consistency_score: Option<f64>,
    pub max_contradiction: Option<f64>,
    pub reconstruction_error: Option<f64>,
    pub combined_score: Option<f64>,
    pub flags: CheckFlags,
    pub hard_range_violations: Vec<String>,
    pub passed: bool,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rows: Vec<ReportRow>,
    pub perplexity_threshold: f64,
    pub anomaly_threshold: f64,
    pub weights: ScoreWeights,
}

/// Per-check results for a batch, each in any order (joined by record id).
pub struct CheckResults<'a> {
    pub coherence: &'a [CoherenceResult],
    pub plausibility: &'a [PlausibilityResult],
    pub perplexity_threshold: f64,
    pub consistency: &'a [ConsistencyResult],
    pub anomaly: &'a AnomalyRun,
}

/// Joins the check outputs per record, scores and gates each one. A record
/// missing any check fails with reason [`REASON_INCOMPLETE`] plus whatever
/// did flag.
pub fn build_report(
    schema: &SchemaDef,
    records: &[VisitRecord],
    checks: &CheckResults<'_>,
    weights: &ScoreWeights,
) -> Result<ValidationReport, ScoringError> {
    let coh: HashMap<i64, &CoherenceResult> = checks.coherence.iter().map(|r| (r.record_id, r)).collect();
    let ppl: HashMap<i64, &PlausibilityResult> = checks.plausibility.iter().map(|r| (r.record_id, r)).collect();
    let con: HashMap<i64, &ConsistencyResult> = checks.consistency.iter().map(|r| (r.record_id, r)).collect();
    let ano: HashMap<i64, _> = checks.anomaly.results.iter().map(|r| (r.record_id, r)).collect();
    let threshold = checks.anomaly.threshold;
    let mut rows = Vec::with_capacity(records.len());
    for record in records {
        let id = record.id();
        let c = coh.get(&id);
        let p = ppl.get(&id);
        let n = con.get(&id);
        let a = ano.get(&id).filter(|a| a.reconstruction_error.is_some());
        let hard = hard_range_violations(schema, record)?;
        let subs = SubScores {
            perplexity: p.map(|p| p.perplexity),
            coherence_avg: c.map(|c| c.average_probability),
            max_contradiction: n.map(|n| n.max_contradiction),
            reconstruction_error: a.and_then(|a| a.reconstruction_error),
        };
        let flags = CheckFlags {
            coherence: c.map(|c| c.flagged),
            plausibility: p.map(|p| p.flagged),
            consistency: n.map(|n| n.flagged),
            anomaly: a.map(|a| a.flagged),
            hard_range: Some(!hard.is_empty()),
        };
        let verdict = match gate_record(&flags) {
            Ok(v) => v,
            Err(ScoringError::IncompleteChecks(_)) => {
                let mut reasons = vec![REASON_INCOMPLETE.to_string()];
                reasons.extend(flags.named().iter().filter(|(_, f)| *f == Some(true)).map(|(n, _)| n.to_string()));
                GateVerdict { passed: false, reasons }
            }
            Err(e) => return Err(e),
        };
        rows.push(ReportRow {
            record_id: id,
            patient_id: record.patient_id,
            coherence_avg: subs.coherence_avg,
            perplexity: subs.perplexity,
            consistency_score: n.map(|n| n.consistency_score),
            max_contradiction: subs.max_contradiction,
            reconstruction_error: subs.reconstruction_error,
            combined_score: combined_anomaly_score(&subs, threshold, weights).ok(),
            flags,
            hard_range_violations: hard,
            passed: verdict.passed,
            reasons: verdict.reasons,
        });
    }
    Ok(ValidationReport {
        rows,
        perplexity_threshold: checks.perplexity_threshold,
        anomaly_threshold: threshold,
        weights: *weights,
    })
}

/// Shortest text that parses back to the same value, so later stages
/// reading the CSV see exactly what this run computed.
fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn fmt_flag(f: Option<bool>) -> String {
    f.map(|f| f.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub count: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub records: usize,
    pub passed: usize,
    pub failed: usize,
    pub flagged_by_check: BTreeMap<String, usize>,
    pub perplexity_threshold: f64,
    pub anomaly_threshold: f64,
    pub weights: ScoreWeights,
    pub metrics: BTreeMap<String, MetricSummary>,
}

impl ValidationReport {
    pub fn passed(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| !r.passed)
    }

    /// Present values of one histogram metric, in record order.
    pub fn metric(&self, metric: Metric) -> Vec<f64> {
        metric_values(&self.rows, metric)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ScoringError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "record_id",
            "patient_id",
            "coherence_avg",
            "perplexity",
            "consistency_score",
            "max_contradiction",
            "reconstruction_error",
            "combined_score",
            "coherence_flag",
            "plausibility_flag",
            "consistency_flag",
            "anomaly_flag",
            "hard_range_flag",
            "passed",
            "reasons",
            "hard_range_violations",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.record_id.to_string(),
                r.patient_id.to_string(),
                fmt_opt(r.coherence_avg),
                fmt_opt(r.perplexity),
                fmt_opt(r.consistency_score),
                fmt_opt(r.max_contradiction),
                fmt_opt(r.reconstruction_error),
                fmt_opt(r.combined_score),
                fmt_flag(r.flags.coherence),
                fmt_flag(r.flags.plausibility),
                fmt_flag(r.flags.consistency),
                fmt_flag(r.flags.anomaly),
                fmt_flag(r.flags.hard_range),
                r.passed.to_string(),
                r.reasons.join(";"),
                r.hard_range_violations.join(";"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> ReportSummary {
        let mut flagged_by_check = BTreeMap::new();
        for r in &self.rows {
            for (name, f) in r.flags.named() {
                *flagged_by_check.entry(name.to_string()).or_insert(0) += usize::from(f == Some(true));
            }
        }
        let metrics = Metric::ALL
            .iter()
            .filter_map(|m| {
                let v = self.metric(*m);
                (!v.is_empty()).then(|| {
                    let summary = MetricSummary {
                        count: v.len(),
                        min: v.iter().copied().fold(f64::INFINITY, f64::min),
                        mean: v.iter().sum::<f64>() / v.len() as f64,
                        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    };
                    (m.name().to_string(), summary)
                })
            })
            .collect();
        let passed = self.passed().count();
        ReportSummary {
            records: self.rows.len(),
            passed,
            failed: self.rows.len() - passed,
            flagged_by_check,
            perplexity_threshold: self.perplexity_threshold,
            anomaly_threshold: self.anomaly_threshold,
            weights: self.weights,
            metrics,
        }
    }
}

pub fn metric_values(rows: &[ReportRow], metric: Metric) -> Vec<f64> {
    rows.iter()
        .filter_map(|r| match metric {
            Metric::NspAvg => r.coherence_avg,
            Metric::Perplexity => r.perplexity,
            Metric::ReconError => r.reconstruction_error,
            Metric::Consistency => r.consistency_score,
            Metric::Combined => r.combined_score,
        })
        .collect()
}

fn split_list(s: &str) -> Vec<String> {
    s.split(';').filter(|x| !x.is_empty()).map(String::from).collect()
}

/// Reads rows written by [`ValidationReport::write_csv`]. Scores come back
/// at the six decimals they were written with.
pub fn read_report_rows<R: std::io::Read>(input: R) -> Result<Vec<ReportRow>, ScoringError> {
    #[derive(Deserialize)]
    struct Line {
        record_id: i64,
        patient_id: i64,
        coherence_avg: Option<f64>,
        perplexity: Option<f64>,
        consistency_score: Option<f64>,
        max_contradiction: Option<f64>,
        reconstruction_error: Option<f64>,
        combined_score: Option<f64>,
        coherence_flag: Option<bool>,
        plausibility_flag: Option<bool>,
        consistency_flag: Option<bool>,
        anomaly_flag: Option<bool>,
        hard_range_flag: Option<bool>,
        passed: bool,
        reasons: String,
        hard_range_violations: String,
    }
    let mut reader = csv::Reader::from_reader(input);
    reader
        .deserialize::<Line>()
        .map(|line| {
            let l = line?;
            Ok(ReportRow {
                record_id: l.record_id,
                patient_id: l.patient_id,
                coherence_avg: l.coherence_avg,
                perplexity: l.perplexity,
                consistency_score: l.consistency_score,
                max_contradiction: l.max_contradiction,
                reconstruction_error: l.reconstruction_error,
                combined_score: l.combined_score,
                flags: CheckFlags {
                    coherence: l.coherence_flag,
                    plausibility: l.plausibility_flag,
                    consistency: l.consistency_flag,
                    anomaly: l.anomaly_flag,
                    hard_range: l.hard_range_flag,
                },
                hard_range_violations: split_list(&l.hard_range_violations),
                passed: l.passed,
                reasons: split_list(&l.reasons),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    NspAvg,
    Perplexity,
    ReconError,
    Consistency,
    Combined,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::NspAvg,
        Metric::Perplexity,
        Metric::ReconError,
        Metric::Consistency,
        Metric::Combined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::NspAvg => "nsp_avg",
            Metric::Perplexity => "perplexity",
            Metric::ReconError => "recon_error",
            Metric::Consistency => "consistency",
            Metric::Combined => "combined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// Equal-width bins over `[min, max]`.
    Count(usize),
    /// Explicit strictly increasing edges; values outside fall into the
    /// nearest end bin so counts still sum to n.
    Edges(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub metric: Metric,
    pub binning: Binning,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin_start: f64,
    pub bin_end: f64,
    pub count: u64,
}

/// Bins are `[start, end)` except the last, which is closed. An all-equal
/// sample spans a unit-width range starting at its value.
pub fn emit_histograms(values: &[f64], binning: &Binning) -> Result<Vec<HistogramRow>, ScoringError> {
    if values.is_empty() {
        return Err(ScoringError::EmptyScores);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ScoringError::InvalidSpec("values must be finite".into()));
    }
    let edges: Vec<f64> = match binning {
        Binning::Count(0) => return Err(ScoringError::InvalidSpec("at least one bin is required".into())),
        Binning::Count(n) => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi == lo {
                hi = lo + 1.0;
            }
            let width = (hi - lo) / *n as f64;
            (0..=*n).map(|i| if i == *n { hi } else { lo + width * i as f64 }).collect()
        }
        Binning::Edges(e) => {
            if e.len() < 2 || e.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
                return Err(ScoringError::InvalidSpec(format!("edges must be ≥ 2 strictly increasing values, got {e:?}")));
            }
            e.clone()
        }
    };
    let bins = edges.len() - 1;
    let mut counts = vec![0u64; bins];
    for v in values {
        let idx = edges.partition_point(|e| e <= v).saturating_sub(1).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(edges
        .windows(2)
        .zip(counts)
        .map(|(w, count)| HistogramRow {
            bin_start: w[0],
            bin_end: w[1],
            count,
        })
        .collect())
}

pub fn write_histogram_csv<W: Write>(rows: &[HistogramRow], out: W) -> Result<(), ScoringError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_start", "bin_end", "count"])?;
    for r in rows {
        w.write_record([format!("{:.6}", r.bin_start), format!("{:.6}", r.bin_end), r.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all(coh: f64, ppl: f64, contra: f64, err: f64) -> SubScores {
        SubScores {
            perplexity: Some(ppl),
            coherence_avg: Some(coh),
            max_contradiction: Some(contra),
            reconstruction_error: Some(err),
        }
    }

    #[test]
    fn combined_examples() {
        let w = ScoreWeights::default();
        assert_eq!(combined_anomaly_score(&all(1.0, 20.0, 0.0, 0.0), 0.5, &w).unwrap(), 20.0);
        let s = combined_anomaly_score(&all(0.9, 30.0, 0.0, 0.5), 0.5, &w).unwrap();
        assert!((s - 85.0).abs() < 1e-9, "{s}");
        // error beyond threshold saturates
        let s2 = combined_anomaly_score(&all(0.9, 30.0, 0.0, 5.0), 0.5, &w).unwrap();
        assert_eq!(s, s2);
    }

    #[test]
    fn missing_subscore_is_named() {
        let mut s = all(1.0, 20.0, 0.0, 0.0);
        s.reconstruction_error = None;
        assert!(matches!(
            combined_anomaly_score(&s, 1.0, &ScoreWeights::default()),
            Err(ScoringError::MissingSubscore("anomaly"))
        ));
    }

    fn clean_flags() -> CheckFlags {
        CheckFlags {
            coherence: Some(false),
            plausibility: Some(false),
            consistency: Some(false),
            anomaly: Some(false),
            hard_range: Some(false),
        }
    }

    #[test]
    fn gate_examples() {
        assert_eq!(
            gate_record(&clean_flags()).unwrap(),
            GateVerdict {
                passed: true,
                reasons: vec![]
            }
        );
        let only_anomaly = CheckFlags {
            anomaly: Some(true),
            ..clean_flags()
        };
        assert_eq!(gate_record(&only_anomaly).unwrap().reasons, vec!["anomaly"]);
        let incomplete = CheckFlags {
            consistency: None,
            ..clean_flags()
        };
        assert!(matches!(gate_record(&incomplete), Err(ScoringError::IncompleteChecks(v)) if v == vec!["consistency"]));
    }

    #[test]
    fn histogram_examples() {
        let h = emit_histograms(&[1.0, 2.0, 3.0, 4.0], &Binning::Count(2)).unwrap();
        assert_eq!(
            h,
            vec![
                HistogramRow {
                    bin_start: 1.0,
                    bin_end: 2.5,
                    count: 2
                },
                HistogramRow {
                    bin_start: 2.5,
                    bin_end: 4.0,
                    count: 2
                }
            ]
        );
        let flat = emit_histograms(&[3.0; 7], &Binning::Count(4)).unwrap();
        assert_eq!(flat.iter().filter(|r| r.count > 0).count(), 1);
        assert_eq!(flat[0].count, 7);
        assert!(matches!(emit_histograms(&[], &Binning::Count(3)), Err(ScoringError::EmptyScores)));
        assert!(matches!(emit_histograms(&[1.0], &Binning::Count(0)), Err(ScoringError::InvalidSpec(_))));
        assert!(matches!(emit_histograms(&[1.0], &Binning::Edges(vec![2.0, 1.0])), Err(ScoringError::InvalidSpec(_))));
        let e = emit_histograms(&[-5.0, 0.5, 1.0, 9.0], &Binning::Edges(vec![0.0, 1.0, 2.0])).unwrap();
        assert_eq!(e.iter().map(|r| r.count).collect::<Vec<_>>(), vec![2, 2]);
    }

    #[test]
    fn histogram_csv_header() {
        let h = emit_histograms(&[1.0, 2.0], &Binning::Count(1)).unwrap();
        let mut buf = Vec::new();
        write_histogram_csv(&h, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "bin_start,bin_end,count\n1.000000,2.000000,2\n");
    }

    #[test]
    fn report_csv_round_trips() {
        let row = ReportRow {
            record_id: 100003,
            patient_id: 1,
            coherence_avg: Some(0.25),
            perplexity: Some(4.5),
            consistency_score: Some(0.005),
            max_contradiction: Some(0.99),
            reconstruction_error: None,
            combined_score: None,
            flags: CheckFlags {
                consistency: Some(true),
                anomaly: None,
                hard_range: Some(true),
                ..clean_flags()
            },
            hard_range_violations: vec!["lab_results.potassium=15".into()],
            passed: false,
            reasons: vec!["incomplete".into(), "consistency".into(), "hard-range".into()],
        };
        let report = ValidationReport {
            rows: vec![row.clone()],
            perplexity_threshold: 1.0,
            anomaly_threshold: 1.0,
            weights: ScoreWeights::default(),
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(read_report_rows(buf.as_slice()).unwrap(), vec![row]);
    }

    proptest! {
        #[test]
        fn zero_weights_give_perplexity(ppl in 1.0f64..500.0, coh in 0.0f64..1.0, c in 0.0f64..1.0, e in 0.0f64..10.0, t in 0.0f64..5.0) {
            let w = ScoreWeights { coherence: 0.0, contradiction: 0.0, anomaly: 0.0 };
            prop_assert_eq!(combined_anomaly_score(&all(coh, ppl, c, e), t, &w).unwrap(), ppl);
        }

        #[test]
        fn penalties_are_monotone(ppl in 1.0f64..500.0, coh in 0.0f64..1.0, c in 0.0f64..1.0, e in 0.0f64..10.0, t in 0.01f64..5.0, d in 0.0f64..1.0) {
            let w = ScoreWeights::default();
            let base = combined_anomaly_score(&all(coh, ppl, c, e), t, &w).unwrap();
            for bumped in [
                all(coh, ppl + d, c, e),
                all((coh - d).max(0.0), ppl, c, e),
                all(coh, ppl, (c + d).min(1.0), e),
                all(coh, ppl, c, e + d),
            ] {
                prop_assert!(combined_anomaly_score(&bumped, t, &w).unwrap() >= base);
            }
        }

        #[test]
        fn gate_is_conjunction(bits in prop::collection::vec(any::<bool>(), 5)) {
            let f = CheckFlags {
                coherence: Some(bits[0]),
                plausibility: Some(bits[1]),
                consistency: Some(bits[2]),
                anomaly: Some(bits[3]),
                hard_range: Some(bits[4]),
            };
            let v = gate_record(&f).unwrap();
            prop_assert_eq!(v.passed, bits.iter().all(|b| !b));
            prop_assert_eq!(v.reasons.len(), bits.iter().filter(|b| **b).count());
        }

        #[test]
        fn histogram_counts_sum_to_n(values in prop::collection::vec(-1e3f64..1e3, 1..200), bins in 1usize..30) {
            let h = emit_histograms(&values, &Binning::Count(bins)).unwrap();
            prop_assert_eq!(h.len(), bins);
            prop_assert_eq!(h.iter().map(|r| r.count).sum::<u64>(), values.len() as u64);
            for w in h.windows(2) {
                prop_assert_eq!(w[0].bin_end, w[1].bin_start);
            }
        }
    }
}
