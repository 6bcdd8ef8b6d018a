//! Reference computations written without the library's own helpers.

#![allow(clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};

use ehrsynth_core::anomaly::{default_widths, Autoencoder};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ehrsynth_core::record::VisitRecord;
use ehrsynth_core::synth::TableRows;
use ehrsynth_core::value::Record;

/// Lowercased maximal alphanumeric runs.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Add-k n-gram perplexity by scanning the whole corpus for every query
/// position. Words outside the corpus share one unknown slot that never
/// occurs in it; positions before the sentence start are padding.
pub fn brute_force_perplexity(corpus: &[Vec<String>], order: usize, k: f64, sentence: &[String]) -> f64 {
    let vocab: BTreeSet<&str> = corpus.iter().flatten().map(String::as_str).collect();
    let v = vocab.len() as f64 + 1.0;
    // the token `back` places before position i, None before the start
    fn at(toks: &[String], i: usize, back: usize) -> Option<&str> {
        (i >= back).then(|| toks[i - back].as_str())
    }
    let mut log_sum = 0.0;
    for i in 0..sentence.len() {
        let unknown_in_context = (1..order).any(|b| at(sentence, i, b).is_some_and(|w| !vocab.contains(w)));
        let mut ctx_count = 0u64;
        let mut joint = 0u64;
        if !unknown_in_context {
            for s in corpus {
                for p in 0..s.len() {
                    if (1..order).all(|b| at(s, p, b) == at(sentence, i, b)) {
                        ctx_count += 1;
                        if s[p] == sentence[i] {
                            joint += 1;
                        }
                    }
                }
            }
        }
        log_sum += ((joint as f64 + k) / (ctx_count as f64 + k * v)).ln();
    }
    (-log_sum / sentence.len() as f64).exp()
}

pub struct CoherenceFixture {
    pub first: String,
    pub second: String,
    pub common: usize,
    pub distinct_first: usize,
    pub distinct_second: usize,
}

impl CoherenceFixture {
    /// Overlap over the geometric mean of the set sizes; an empty side
    /// gives the neutral 0.5.
    pub fn expected(&self) -> f64 {
        if self.distinct_first == 0 || self.distinct_second == 0 {
            0.5
        } else {
            self.common as f64 / ((self.distinct_first * self.distinct_second) as f64).sqrt()
        }
    }
}

pub fn coherence_fixtures() -> Vec<CoherenceFixture> {
    include_str!("../fixtures/coherence_pairs.tsv")
        .lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            assert_eq!(f.len(), 5, "bad fixture line {line:?}");
            CoherenceFixture {
                first: f[0].into(),
                second: f[1].into(),
                common: f[2].parse().unwrap(),
                distinct_first: f[3].parse().unwrap(),
                distinct_second: f[4].parse().unwrap(),
            }
        })
        .collect()
}

/// drug -> class as listed in the shipped data file.
pub fn shipped_class_map() -> BTreeMap<String, String> {
    let mut reader = csv::Reader::from_reader(include_str!("../../data/drug_classes.csv").as_bytes());
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].trim().to_lowercase(), r[1].trim().to_lowercase())
        })
        .collect()
}

/// A visit holding one allergy and one medication and nothing else.
pub fn allergy_medication_visit(id: i64, allergen: &str, drug: &str) -> VisitRecord {
    let mut rows = TableRows::new();
    rows.insert("allergies".into(), vec![Record::new().with("allergen", allergen)]);
    rows.insert("medications".into(), vec![Record::new().with("drug_name", drug)]);
    VisitRecord {
        patient_id: 1,
        visit_id: id,
        rows,
    }
}

/// Loop-based forward pass and loss, written independently of the library.
fn oracle_loss(model: &Autoencoder, x: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for row in x.rows() {
        let mut h: Vec<f64> = row.to_vec();
        for (li, layer) in model.layers.iter().enumerate() {
            let (fan_in, fan_out) = layer.weights.dim();
            let mut z = vec![0.0; fan_out];
            for (o, zo) in z.iter_mut().enumerate() {
                *zo = layer.bias[o];
                for i in 0..fan_in {
                    *zo += h[i] * layer.weights[[i, o]];
                }
            }
            if li + 1 < model.layers.len() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = z;
        }
        total += row.iter().zip(&h).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / row.len() as f64;
    }
    total / x.nrows() as f64
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

/// Worst relative gap between the analytic gradient and a central finite
/// difference of the oracle loss, one entry per random network.
pub fn worst_gradient_errors(nets: u64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for net in 0..nets {
        let d = rng.gen_range(2..=7);
        let mut model = Autoencoder::new(&default_widths(d), net).unwrap();
        // random biases keep pre-activations off the ReLU kink at exactly 0
        for layer in &mut model.layers {
            layer.bias.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
        let x = Array2::from_shape_simple_fn((5, d), || rng.gen_range(-2.0..2.0));
        let (loss, grads) = model.loss_and_gradients(x.view()).unwrap();
        assert!((loss - oracle_loss(&model, &x)).abs() < 1e-12);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for l in 0..model.layers.len() {
            let (r, c) = model.layers[l].weights.dim();
            for i in 0..r {
                for j in 0..c {
                    let mut plus = model.clone();
                    plus.layers[l].weights[[i, j]] += h;
                    let mut minus = model.clone();
                    minus.layers[l].weights[[i, j]] -= h;
                    let numeric = (oracle_loss(&plus, &x) - oracle_loss(&minus, &x)) / (2.0 * h);
                    worst = worst.max(rel_err(grads[l].weights[[i, j]], numeric));
                }
            }
            for j in 0..model.layers[l].bias.len() {
                let mut plus = model.clone();
                plus.layers[l].bias[j] += h;
                let mut minus = model.clone();
                minus.layers[l].bias[j] -= h;
                let numeric = (oracle_loss(&plus, &x) - oracle_loss(&minus, &x)) / (2.0 * h);
                worst = worst.max(rel_err(grads[l].bias[j], numeric));
            }
        }
        out.push(worst);
    }
    out
}

