//! Tabular anomaly detection with a bottleneck autoencoder.
//!
//! Selected features are standardized (numeric) and one-hot encoded
//! (categorical), an autoencoder is trained to reproduce them under MSE, and
//! rows whose reconstruction error exceeds mean + 2·σ are flagged.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::record::VisitRecord;
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnomalyError {
    #[error("dimension mismatch: expected width {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no rows remain after removing incomplete entries ({dropped} dropped)")]
    NoRowsRemaining { dropped: usize },
    #[error("no reconstruction errors to threshold")]
    EmptyScores,
    #[error("invalid layer widths {0:?}: need an odd-length mirror-symmetric list with a shrinking encoder")]
    InvalidWidths(Vec<usize>),
    #[error("invalid feature plan: {0}")]
    InvalidPlan(String),
    #[error("invalid training parameter: {0}")]
    InvalidParameter(String),
}

/// One selected feature value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Num(f64),
    Cat(String),
}

/// A row of feature cells in plan order; `None` marks a missing value.
pub type FeatureRow = Vec<Option<Cell>>;

/// Which selected features are numeric and which categorical. Feature names
/// are `table.column`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FeaturePlan {
    pub numeric: Vec<String>,
    pub categorical: Vec<String>,
}

impl FeaturePlan {
    /// Sorts `features` into numeric (every present value is a number) and
    /// categorical (anything else), preserving order.
    pub fn infer(records: &[VisitRecord], features: &[String]) -> Self {
        let mut plan = Self::default();
        for f in features {
            let numeric = records
                .iter()
                .filter_map(|r| r.feature(f))
                .all(|v| matches!(v, Value::Integer(_) | Value::Decimal(_)));
            if numeric {
                plan.numeric.push(f.clone());
            } else {
                plan.categorical.push(f.clone());
            }
        }
        plan
    }

    pub fn features(&self) -> impl Iterator<Item = &str> {
        self.numeric.iter().chain(&self.categorical).map(String::as_str)
    }

    fn validate(&self) -> Result<(), AnomalyError> {
        if self.numeric.is_empty() && self.categorical.is_empty() {
            return Err(AnomalyError::InvalidPlan("no features selected".into()));
        }
        if let Some(dup) = self.numeric.iter().find(|n| self.categorical.contains(n)) {
            return Err(AnomalyError::InvalidPlan(format!("{dup} is both numeric and categorical")));
        }
        Ok(())
    }

    /// Reads one row per record, numeric features first.
    pub fn rows(&self, records: &[VisitRecord]) -> Vec<FeatureRow> {
        records
            .iter()
            .map(|r| {
                let num = self.numeric.iter().map(|f| r.feature(f).and_then(Value::as_f64).map(Cell::Num));
                let cat = self.categorical.iter().map(|f| {
                    r.feature(f).map(|v| match v {
                        Value::Text(s) => Cell::Cat(s.clone()),
                        other => Cell::Cat(other.to_json().to_string().trim_matches('"').to_string()),
                    })
                });
                num.chain(cat).collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    /// Population standard deviation.
    pub std: Vec<f64>,
}

/// Per categorical column: category → index, categories in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotMap {
    pub columns: Vec<BTreeMap<String, usize>>,
}

impl OneHotMap {
    pub fn width(&self) -> usize {
        self.columns.iter().map(BTreeMap::len).sum()
    }
}

/// Fitted preprocessing: apply to new rows with [`Preprocessor::transform`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub plan: FeaturePlan,
    pub scaler: ScalerParams,
    pub onehot: OneHotMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transformed {
    pub matrix: Array2<f64>,
    /// Index into the input rows of each matrix row.
    pub kept: Vec<usize>,
    pub dropped_rows: usize,
    pub warnings: Vec<String>,
}

fn complete(row: &FeatureRow, n_num: usize) -> bool {
    row.iter().enumerate().all(|(i, c)| match c {
        Some(Cell::Num(x)) => i < n_num && x.is_finite(),
        Some(Cell::Cat(_)) => i >= n_num,
        None => false,
    })
}

impl Preprocessor {
    /// Fits scaling and one-hot maps on the complete rows.
    pub fn fit(rows: &[FeatureRow], plan: &FeaturePlan) -> Result<Self, AnomalyError> {
        plan.validate()?;
        let n_num = plan.numeric.len();
        let width = n_num + plan.categorical.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != width) {
            return Err(AnomalyError::DimensionMismatch {
                expected: width,
                got: bad.len(),
            });
        }
        let complete_rows: Vec<&FeatureRow> = rows.iter().filter(|r| complete(r, n_num)).collect();
        if complete_rows.is_empty() {
            return Err(AnomalyError::NoRowsRemaining { dropped: rows.len() });
        }
        let n = complete_rows.len() as f64;
        let num = |r: &FeatureRow, j: usize| match &r[j] {
            Some(Cell::Num(x)) => *x,
            _ => unreachable!("complete rows hold numbers in numeric slots"),
        };
        let mut mean = vec![0.0; n_num];
        let mut std = vec![0.0; n_num];
        for j in 0..n_num {
            let m = complete_rows.iter().map(|r| num(r, j)).sum::<f64>() / n;
            let var = complete_rows.iter().map(|r| (num(r, j) - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = var.sqrt();
        }
        let mut columns = Vec::new();
        for j in n_num..width {
            let mut cats: Vec<&str> = complete_rows
                .iter()
                .map(|r| match &r[j] {
                    Some(Cell::Cat(s)) => s.as_str(),
                    _ => unreachable!("complete rows hold categories in categorical slots"),
                })
                .collect();
            cats.sort_unstable();
            cats.dedup();
            columns.push(cats.into_iter().enumerate().map(|(i, c)| (c.to_string(), i)).collect());
        }
        Ok(Self {
            plan: plan.clone(),
            scaler: ScalerParams { mean, std },
            onehot: OneHotMap { columns },
        })
    }

    pub fn output_width(&self) -> usize {
        self.scaler.mean.len() + self.onehot.width()
    }

    /// Drops incomplete rows, standardizes numbers (σ = 0 maps to 0) and
    /// one-hot encodes categories; an unseen category encodes as all zeros
    /// and adds a warning.
    pub fn transform(&self, rows: &[FeatureRow]) -> Result<Transformed, AnomalyError> {
        let n_num = self.scaler.mean.len();
        let width = n_num + self.onehot.columns.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != width) {
            return Err(AnomalyError::DimensionMismatch {
                expected: width,
                got: bad.len(),
            });
        }
        let kept: Vec<usize> = (0..rows.len()).filter(|&i| complete(&rows[i], n_num)).collect();
        let dropped_rows = rows.len() - kept.len();
        if kept.is_empty() {
            return Err(AnomalyError::NoRowsRemaining { dropped: dropped_rows });
        }
        let mut matrix = Array2::zeros((kept.len(), self.output_width()));
        let mut warnings = Vec::new();
        for (out_row, &i) in kept.iter().enumerate() {
            let mut offset = n_num;
            for (j, cell) in rows[i].iter().enumerate() {
                match cell {
                    Some(Cell::Num(x)) => {
                        let s = self.scaler.std[j];
                        matrix[[out_row, j]] = if s > 0.0 { (x - self.scaler.mean[j]) / s } else { 0.0 };
                    }
                    Some(Cell::Cat(c)) => {
                        let map = &self.onehot.columns[j - n_num];
                        match map.get(c) {
                            Some(&k) => matrix[[out_row, offset + k]] = 1.0,
                            None => warnings.push(format!(
                                "row {i}: unseen category {c:?} for {}",
                                self.plan.categorical[j - n_num]
                            )),
                        }
                        offset += map.len();
                    }
                    None => unreachable!("incomplete rows were dropped"),
                }
            }
        }
        for w in &warnings {
            tracing::warn!("{w}");
        }
        Ok(Transformed {
            matrix,
            kept,
            dropped_rows,
            warnings,
        })
    }
}

/// Fits on `rows` and transforms them.
pub fn preprocess(rows: &[FeatureRow], plan: &FeaturePlan) -> Result<(Preprocessor, Transformed), AnomalyError> {
    let pre = Preprocessor::fit(rows, plan)?;
    let t = pre.transform(rows)?;
    Ok((pre, t))
}

const INITIAL_BIAS: f64 = 0.1;

/// [d, ⌈d/2⌉, ⌈d/4⌉, ⌈d/2⌉, d].
pub fn default_widths(d: usize) -> Vec<usize> {
    let half = d.div_ceil(2);
    vec![d, half, d.div_ceil(4), half, d]
}

fn check_widths(widths: &[usize]) -> Result<(), AnomalyError> {
    let n = widths.len();
    let bad = || AnomalyError::InvalidWidths(widths.to_vec());
    if n < 3 || n.is_multiple_of(2) || widths.contains(&0) {
        return Err(bad());
    }
    if (0..n).any(|i| widths[i] != widths[n - 1 - i]) {
        return Err(bad());
    }
    let encoder = &widths[..=n / 2];
    if encoder.windows(2).any(|w| w[1] > w[0]) || encoder[n / 2] >= widths[0] {
        return Err(bad());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// fan_in × fan_out
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    pub widths: Vec<usize>,
    pub layers: Vec<Layer>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AnomalyError> {
        if self.batch_size == 0 {
            return Err(AnomalyError::InvalidParameter("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AnomalyError::InvalidParameter("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Per-layer gradients, same shapes as the layers.
pub type Gradients = Vec<Layer>;

impl Autoencoder {
    /// Glorot-uniform weights; biases start at a small positive value so
    /// ReLU units begin active.
    pub fn new(widths: &[usize], seed: u64) -> Result<Self, AnomalyError> {
        check_widths(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .map(|w| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_simple_fn((w[0], w[1]), || rng.gen_range(-limit..=limit)),
                    bias: Array1::from_elem(w[1], INITIAL_BIAS),
                }
            })
            .collect();
        Ok(Self {
            widths: widths.to_vec(),
            layers,
            seed,
        })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), AnomalyError> {
        if x.ncols() != self.input_width() {
            return Err(AnomalyError::DimensionMismatch {
                expected: self.input_width(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Pre-activations of every layer and the final output.
    fn forward_cached(&self, x: &ArrayView2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weights) + &layer.bias;
            h = if i == last { z.clone() } else { z.mapv(|v| v.max(0.0)) };
            pre.push(z);
        }
        (pre, h)
    }

    pub fn reconstruct(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, AnomalyError> {
        self.check_input(&x)?;
        Ok(self.forward_cached(&x).1)
    }

    /// Mean over rows of the per-row MSE, with its gradient per layer.
    pub fn loss_and_gradients(&self, x: ArrayView2<f64>) -> Result<(f64, Gradients), AnomalyError> {
        self.check_input(&x)?;
        let (pre, out) = self.forward_cached(&x);
        let diff = &out - &x;
        let scale = (x.nrows() * x.ncols()) as f64;
        let loss = diff.mapv(|v| v * v).sum() / scale;
        let mut delta = diff * (2.0 / scale);
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let input = if i == 0 {
                x.to_owned()
            } else {
                pre[i - 1].mapv(|v| v.max(0.0))
            };
            grads.push(Layer {
                weights: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if i > 0 {
                let back = delta.dot(&self.layers[i].weights.t());
                delta = back * pre[i - 1].mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            }
        }
        grads.reverse();
        Ok((loss, grads))
    }
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &Autoencoder) -> Self {
        let zeros = || {
            model
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect::<Vec<_>>()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Autoencoder, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for ((layer, g), (m, v)) in model.layers.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            };
            ndarray::Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(|p, g, m, v| update(p, *g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, g, m, v| update(p, *g, m, v));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: Autoencoder,
    /// Mean reconstruction error over the whole matrix after each epoch.
    pub loss_history: Vec<f64>,
}

/// Trains with Adam on seeded minibatch shuffles.
pub fn train_autoencoder(
    matrix: ArrayView2<f64>,
    widths: &[usize],
    config: &TrainConfig,
) -> Result<TrainedModel, AnomalyError> {
    config.validate()?;
    check_widths(widths)?;
    if widths[0] != matrix.ncols() {
        return Err(AnomalyError::DimensionMismatch {
            expected: widths[0],
            got: matrix.ncols(),
        });
    }
    if matrix.nrows() == 0 {
        return Err(AnomalyError::NoRowsRemaining { dropped: 0 });
    }
    let mut model = Autoencoder::new(widths, config.seed)?;
    let mut adam = Adam::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut order: Vec<usize> = (0..matrix.nrows()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let x = matrix.select(Axis(0), batch);
            let (_, grads) = model.loss_and_gradients(x.view())?;
            adam.step(&mut model, &grads, config.learning_rate);
        }
        loss_history.push(model.loss_and_gradients(matrix)?.0);
    }
    Ok(TrainedModel { model, loss_history })
}

/// Per-row mean squared error between input and reconstruction.
pub fn reconstruction_errors(model: &Autoencoder, matrix: ArrayView2<f64>) -> Result<Vec<f64>, AnomalyError> {
    use rayon::prelude::*;
    model.check_input(&matrix)?;
    let d = matrix.ncols() as f64;
    let rows: Vec<usize> = (0..matrix.nrows()).collect();
    Ok(rows
        .par_chunks(256)
        .flat_map_iter(|chunk| {
            let x = matrix.select(Axis(0), chunk);
            let out = model.forward_cached(&x.view()).1;
            (&out - &x)
                .rows()
                .into_iter()
                .map(|r| r.mapv(|v| v * v).sum() / d)
                .collect::<Vec<_>>()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub errors: Vec<f64>,
    pub threshold: f64,
    pub flags: Vec<bool>,
}

impl AnomalyReport {
    pub fn flagged_count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }
}

/// threshold = mean + 2·population σ; flagged ⇔ error > threshold.
pub fn threshold_and_flag(errors: &[f64]) -> Result<AnomalyReport, AnomalyError> {
    if errors.is_empty() {
        return Err(AnomalyError::EmptyScores);
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let std = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = mean + 2.0 * std;
    Ok(AnomalyReport {
        flags: errors.iter().map(|e| *e > threshold).collect(),
        errors: errors.to_vec(),
        threshold,
    })
}

/// Per-record outcome; records dropped for missing features have no error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyResult {
    pub record_id: i64,
    pub reconstruction_error: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyRun {
    pub results: Vec<AnomalyResult>,
    pub threshold: f64,
    pub dropped_rows: usize,
    pub warnings: Vec<String>,
    pub loss_history: Vec<f64>,
}

/// Features scored by default: vitals, labs, and a few categorical context
/// columns.
pub const DEFAULT_FEATURES: &[&str] = &[
    "vital_signs.systolic_bp",
    "vital_signs.diastolic_bp",
    "vital_signs.heart_rate",
    "vital_signs.respiratory_rate",
    "vital_signs.temperature_c",
    "vital_signs.oxygen_saturation",
    "vital_signs.height_cm",
    "vital_signs.weight_kg",
    "test_results.potassium_mmol_l",
    "test_results.sodium_mmol_l",
    "test_results.glucose_mg_dl",
    "test_results.creatinine_mg_dl",
    "test_results.hemoglobin_g_dl",
    "test_results.wbc_k_ul",
    "clinical_notes.patient_age",
    "patient_details.gender",
    "hospital_visits.visit_type",
    "vital_signs.severity_classification",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyConfig {
    /// `table.column` names; numeric vs categorical is inferred.
    pub features: Vec<String>,
    /// Full layer widths; `None` uses [`default_widths`] of the encoded width.
    pub widths: Option<Vec<usize>>,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            features: DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect(),
            widths: None,
            train: TrainConfig::default(),
        }
    }
}

/// Preprocesses, trains on, and scores a batch of visits.
pub fn assess_anomalies(records: &[VisitRecord], config: &AnomalyConfig) -> Result<AnomalyRun, AnomalyError> {
    let plan = FeaturePlan::infer(records, &config.features);
    let rows = plan.rows(records);
    let (_, t) = preprocess(&rows, &plan)?;
    let widths = config.widths.clone().unwrap_or_else(|| default_widths(t.matrix.ncols()));
    let trained = train_autoencoder(t.matrix.view(), &widths, &config.train)?;
    let errors = reconstruction_errors(&trained.model, t.matrix.view())?;
    let report = threshold_and_flag(&errors)?;
    let mut results: Vec<AnomalyResult> = records
        .iter()
        .map(|r| AnomalyResult {
            record_id: r.id(),
            reconstruction_error: None,
            flagged: false,
        })
        .collect();
    for (k, &i) in t.kept.iter().enumerate() {
        results[i].reconstruction_error = Some(report.errors[k]);
        results[i].flagged = report.flags[k];
    }
    Ok(AnomalyRun {
        results,
        threshold: report.threshold,
        dropped_rows: t.dropped_rows,
        warnings: t.warnings,
        loss_history: trained.loss_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn num_rows(cols: &[&[f64]]) -> Vec<FeatureRow> {
        (0..cols[0].len())
            .map(|i| cols.iter().map(|c| Some(Cell::Num(c[i]))).collect())
            .collect()
    }

    fn plan(numeric: &[&str], categorical: &[&str]) -> FeaturePlan {
        FeaturePlan {
            numeric: numeric.iter().map(|s| s.to_string()).collect(),
            categorical: categorical.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn standardizes_with_population_std() {
        let (_, t) = preprocess(&num_rows(&[&[2.0, 4.0, 6.0]]), &plan(&["x"], &[])).unwrap();
        let col: Vec<f64> = t.matrix.column(0).to_vec();
        assert_relative_eq!(col[0], -1.224744871391589, epsilon = 1e-12);
        assert_eq!(col[1], 0.0);
        assert_relative_eq!(col[2], 1.224744871391589, epsilon = 1e-12);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let (_, t) = preprocess(&num_rows(&[&[5.0, 5.0]]), &plan(&["x"], &[])).unwrap();
        assert!(t.matrix.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn one_hot_is_lexicographic_and_unseen_is_zero() {
        let rows: Vec<FeatureRow> = ["C", "A", "B"].iter().map(|c| vec![Some(Cell::Cat(c.to_string()))]).collect();
        let (pre, t) = preprocess(&rows, &plan(&[], &["c"])).unwrap();
        assert_eq!(t.matrix.row(2).to_vec(), vec![0.0, 1.0, 0.0]);
        assert_eq!(t.matrix.row(0).to_vec(), vec![0.0, 0.0, 1.0]);
        let t = pre.transform(&[vec![Some(Cell::Cat("Z".into()))]]).unwrap();
        assert_eq!(t.matrix.row(0).to_vec(), vec![0.0, 0.0, 0.0]);
        assert_eq!(t.warnings.len(), 1);
    }

    #[test]
    fn incomplete_rows_are_dropped() {
        let mut rows = num_rows(&[&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]]);
        rows[1][0] = None;
        let (_, t) = preprocess(&rows, &plan(&["x", "y"], &[])).unwrap();
        assert_eq!((t.dropped_rows, t.kept.clone()), (1, vec![0, 2]));
        rows.iter_mut().for_each(|r| r[1] = None);
        assert_eq!(
            preprocess(&rows, &plan(&["x", "y"], &[])).unwrap_err(),
            AnomalyError::NoRowsRemaining { dropped: 3 }
        );
    }

    #[test]
    fn widths_schedule() {
        assert_eq!(default_widths(49), vec![49, 25, 13, 25, 49]);
        assert_eq!(default_widths(8), vec![8, 4, 2, 4, 8]);
        assert!(Autoencoder::new(&[4, 5, 4], 0).is_err());
        assert!(Autoencoder::new(&[4, 2, 3], 0).is_err());
        assert!(Autoencoder::new(&[1, 1, 1], 0).is_err());
    }

    #[test]
    fn threshold_examples() {
        let r = threshold_and_flag(&[0.01, 0.02, 0.03]).unwrap();
        assert!((r.threshold - 0.0363299).abs() < 1e-7);
        let r = threshold_and_flag(&[0.5; 4]).unwrap();
        assert_eq!((r.threshold, r.flagged_count()), (0.5, 0));
        assert_eq!(threshold_and_flag(&[]).unwrap_err(), AnomalyError::EmptyScores);
    }

    #[test]
    fn hand_computed_forward_pass() {
        let mut m = Autoencoder::new(&[2, 1, 2], 0).unwrap();
        m.layers[0].weights = array![[1.0], [-1.0]];
        m.layers[0].bias = array![0.5];
        m.layers[1].weights = array![[2.0, -1.0]];
        m.layers[1].bias = array![0.0, 1.0];
        // h = relu(3 - 1 + 0.5) = 2.5; out = [5, -1.5]; err = ((5-3)^2 + (-1.5-1)^2)/2
        let e = reconstruction_errors(&m, array![[3.0, 1.0]].view()).unwrap();
        assert_relative_eq!(e[0], (4.0 + 6.25) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_epochs_keep_initial_weights() {
        let x = Array2::from_shape_fn((10, 4), |(i, j)| (i * j) as f64 / 10.0);
        let cfg = TrainConfig {
            epochs: 0,
            seed: 5,
            ..TrainConfig::default()
        };
        let t = train_autoencoder(x.view(), &default_widths(4), &cfg).unwrap();
        assert_eq!(t.model, Autoencoder::new(&default_widths(4), 5).unwrap());
        assert!(matches!(
            train_autoencoder(x.view(), &default_widths(5), &cfg),
            Err(AnomalyError::DimensionMismatch { expected: 5, got: 4 })
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let x = Array2::from_shape_fn((40, 6), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
        let cfg = TrainConfig {
            epochs: 5,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train_autoencoder(x.view(), &default_widths(6), &cfg).unwrap();
        let b = train_autoencoder(x.view(), &default_widths(6), &cfg).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn standardized_columns_have_unit_variance(col in prop::collection::vec(-1e3f64..1e3, 2..40)) {
            let (_, t) = preprocess(&num_rows(&[&col]), &plan(&["x"], &[])).unwrap();
            let c = t.matrix.column(0);
            let n = c.len() as f64;
            let mean = c.sum() / n;
            let var = c.mapv(|v| (v - mean).powi(2)).sum() / n;
            let spread = col.iter().cloned().fold(f64::MIN, f64::max) - col.iter().cloned().fold(f64::MAX, f64::min);
            prop_assert!(mean.abs() < 1e-9);
            if spread > 1e-6 {
                prop_assert!((var - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn threshold_at_least_mean(errors in prop::collection::vec(0.0f64..10.0, 1..50)) {
            let r = threshold_and_flag(&errors).unwrap();
            let mean = errors.iter().sum::<f64>() / errors.len() as f64;
            prop_assert!(r.threshold >= mean - 1e-12);
            for (e, f) in r.errors.iter().zip(&r.flags) {
                prop_assert_eq!(*f, *e > r.threshold);
            }
        }

        #[test]
        fn row_permutation_permutes_errors(seed in any::<u64>()) {
            let m = Autoencoder::new(&[3, 2, 3], seed).unwrap();
            let x = Array2::from_shape_fn((6, 3), |(i, j)| (i as f64 - j as f64) * 0.3);
            let e = reconstruction_errors(&m, x.view()).unwrap();
            let perm = [5, 2, 0, 4, 1, 3];
            let xp = x.select(Axis(0), &perm);
            let ep = reconstruction_errors(&m, xp.view()).unwrap();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(ep[k], e[i]);
            }
        }
    }
}
