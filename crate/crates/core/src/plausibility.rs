//! Narrative plausibility by language-model perplexity.
//!
//! Each visit is rendered as a short narrative and scored; records whose
//! perplexity exceeds the batch's nearest-rank percentile are flagged. The
//! built-in model is an add-k smoothed n-gram model trained on the shipped
//! reference corpus; a remote model can be used through [`PerplexityScorer`].

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

use crate::record::{cohort_records, VisitRecord};
use crate::schema::SchemaDef;
use crate::scorers::ScorerError;
use crate::synth::{generate_cohort, GenerationConfig, GenerationError, Generator, GrammarBackend, TemplateSet};
use crate::text::tokenize;

pub const UNKNOWN_TOKEN: &str = "<unk>";
pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_K: f64 = 1.0;
pub const DEFAULT_PERCENTILE: f64 = 95.0;
pub const SENTENCE_SEPARATOR: &str = ". ";

/// Parameters the shipped reference corpus was built with.
pub const REFERENCE_CORPUS_PATIENTS: usize = 750;
pub const REFERENCE_CORPUS_SEED: u64 = 0x5EED_C0A9;

#[derive(Debug, Error)]
pub enum PlausibilityError {
    #[error("training corpus has no tokens")]
    EmptyCorpus,
    #[error("no scores to take a percentile of")]
    EmptyScores,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Narrative {
    pub record_id: i64,
    pub text: String,
}

fn sentence(s: &str) -> String {
    s.trim().trim_end_matches('.').trim().to_string()
}

/// Admission reason, diagnoses, chronic conditions and medications, in that
/// order, one sentence each; missing parts are skipped.
pub fn build_narrative(record: &VisitRecord) -> Narrative {
    let join = |v: Vec<&str>| {
        let parts: Vec<String> = v.into_iter().map(sentence).filter(|s| !s.is_empty()).collect();
        (!parts.is_empty()).then(|| parts.join(", "))
    };
    let parts: Vec<String> = [
        join(record.texts("admissions", "admission_reason")),
        join(record.texts("diagnoses", "description")),
        join(record.texts("medical_histories", "chronic_conditions")),
        join(record.texts("medications", "drug_name")),
    ]
    .into_iter()
    .flatten()
    .collect();
    Narrative {
        record_id: record.id(),
        text: parts.join(SENTENCE_SEPARATOR),
    }
}

/// Narratives of a defect-free grammar cohort, one per line: the reference
/// corpus the built-in model is trained on.
pub fn reference_narratives(schema: &SchemaDef, patients: usize, seed: u64) -> Result<Vec<String>, GenerationError> {
    let templates = TemplateSet::builtin();
    let backend = GrammarBackend::clean();
    let config = GenerationConfig::default();
    let gen = Generator::new(schema, &templates, &backend, &config);
    let cohort = generate_cohort(&gen, patients, seed, 1)?;
    Ok(cohort_records(schema, &cohort)
        .iter()
        .map(|r| build_narrative(r).text)
        .filter(|t| !t.is_empty())
        .collect())
}

/// Returns perplexities, one per text.
pub trait PerplexityScorer: Send + Sync {
    fn perplexities(&self, texts: &[String]) -> Result<Vec<f64>, ScorerError>;
}

/// Add-k smoothed n-gram model. Contexts are start-padded; the padding symbol
/// is never predicted and is not part of the vocabulary.
#[derive(Debug, Clone)]
pub struct NgramLm {
    order: usize,
    k: f64,
    vocab: BTreeMap<String, u32>,
    unk: u32,
    /// context -> (total continuations, per-word counts)
    counts: HashMap<Vec<u32>, (u64, HashMap<u32, u64>)>,
}

const PAD: u32 = u32::MAX;

impl NgramLm {
    pub fn train<S: AsRef<str>>(corpus: &[S], order: usize, k: f64) -> Result<Self, PlausibilityError> {
        if order == 0 {
            return Err(PlausibilityError::InvalidParameter("order must be at least 1".into()));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(PlausibilityError::InvalidParameter("k must be positive".into()));
        }
        let tokenized: Vec<Vec<String>> = corpus.iter().map(|t| tokenize(t.as_ref())).collect();
        if tokenized.iter().all(Vec::is_empty) {
            return Err(PlausibilityError::EmptyCorpus);
        }
        let mut words: Vec<&str> = tokenized.iter().flatten().map(String::as_str).collect();
        words.push(UNKNOWN_TOKEN);
        words.sort_unstable();
        words.dedup();
        let vocab: BTreeMap<String, u32> = words.iter().enumerate().map(|(i, w)| (w.to_string(), i as u32)).collect();
        let unk = vocab[UNKNOWN_TOKEN];
        let mut lm = Self {
            order,
            k,
            vocab,
            unk,
            counts: HashMap::new(),
        };
        for tokens in &tokenized {
            let ids = lm.ids(tokens);
            for i in 0..ids.len() {
                let ctx = lm.context(&ids, i);
                let entry = lm.counts.entry(ctx).or_default();
                entry.0 += 1;
                *entry.1.entry(ids[i]).or_default() += 1;
            }
        }
        Ok(lm)
    }

    /// A unigram model with no counts over `words` plus the unknown token:
    /// every token has probability 1/|V|.
    pub fn uniform<S: AsRef<str>>(words: &[S]) -> Self {
        let mut all: Vec<String> = words.iter().map(|w| w.as_ref().to_lowercase()).collect();
        all.push(UNKNOWN_TOKEN.to_string());
        all.sort_unstable();
        all.dedup();
        let vocab: BTreeMap<String, u32> = all.into_iter().enumerate().map(|(i, w)| (w, i as u32)).collect();
        let unk = vocab[UNKNOWN_TOKEN];
        Self {
            order: 1,
            k: 1.0,
            vocab,
            unk,
            counts: HashMap::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Vocabulary size including the unknown token.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.vocab.keys().map(String::as_str)
    }

    fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| *self.vocab.get(t.as_ref()).unwrap_or(&self.unk))
            .collect()
    }

    fn context(&self, ids: &[u32], i: usize) -> Vec<u32> {
        (0..self.order - 1)
            .map(|back| {
                let offset = self.order - 1 - back;
                if i >= offset {
                    ids[i - offset]
                } else {
                    PAD
                }
            })
            .collect()
    }

    /// (numerator, denominator) of P(word | context) = (c(ctx,w) + k) / (c(ctx) + k|V|).
    fn ratio(&self, ctx: &[u32], word: u32) -> (f64, f64) {
        let v = self.vocab.len() as f64;
        match self.counts.get(ctx) {
            Some((total, words)) => (
                *words.get(&word).unwrap_or(&0) as f64 + self.k,
                *total as f64 + self.k * v,
            ),
            None => (self.k, self.k * v),
        }
    }

    /// P(word | context). The context is the preceding tokens, most recent
    /// last; it is truncated or start-padded to `order - 1` tokens.
    pub fn prob(&self, context: &[&str], word: &str) -> f64 {
        let mut padded: Vec<u32> = self.ids(context);
        let want = self.order - 1;
        if padded.len() > want {
            padded.drain(..padded.len() - want);
        }
        while padded.len() < want {
            padded.insert(0, PAD);
        }
        let (num, den) = self.ratio(&padded, *self.vocab.get(word).unwrap_or(&self.unk));
        num / den
    }

    /// exp(-(1/N) Σ ln P(w_i | context_i)); 1.0 for text without tokens.
    pub fn perplexity(&self, text: &str) -> f64 {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return 1.0;
        }
        let ids = self.ids(&tokens);
        let ratios: Vec<(f64, f64)> = (0..ids.len()).map(|i| self.ratio(&self.context(&ids, i), ids[i])).collect();
        // when every token has the same probability the perplexity is exactly
        // den/num; skip the exp(ln) round trip so that case is not perturbed
        let first = ratios[0].1 / ratios[0].0;
        if ratios.iter().all(|(n, d)| d / n == first) {
            return first;
        }
        let sum: f64 = ratios.iter().map(|(n, d)| (n / d).ln()).sum();
        (-sum / ids.len() as f64).exp()
    }
}

impl PerplexityScorer for NgramLm {
    fn perplexities(&self, texts: &[String]) -> Result<Vec<f64>, ScorerError> {
        use rayon::prelude::*;
        Ok(texts.par_iter().map(|t| self.perplexity(t)).collect())
    }
}

/// Nearest-rank percentile: the element at rank ceil(q/100 · n) of the
/// ascending sort.
pub fn percentile_threshold(scores: &[f64], q: f64) -> Result<f64, PlausibilityError> {
    if scores.is_empty() {
        return Err(PlausibilityError::EmptyScores);
    }
    if !(q > 0.0 && q <= 100.0) {
        return Err(PlausibilityError::InvalidParameter(format!("percentile {q} outside (0, 100]")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((q * n as f64) / 100.0).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityResult {
    pub record_id: i64,
    pub perplexity: f64,
    pub flagged: bool,
}

/// Flags narratives whose perplexity is strictly above the batch's q-th
/// percentile. Empty narratives score 1 and are never flagged.
pub fn flag_by_percentile(
    ids_and_scores: &[(i64, f64, bool)],
    q: f64,
) -> Result<(Vec<PlausibilityResult>, f64), PlausibilityError> {
    let scores: Vec<f64> = ids_and_scores.iter().map(|(_, s, _)| *s).collect();
    let threshold = percentile_threshold(&scores, q)?;
    let results = ids_and_scores
        .iter()
        .map(|(id, s, empty)| PlausibilityResult {
            record_id: *id,
            perplexity: *s,
            flagged: !empty && *s > threshold,
        })
        .collect();
    Ok((results, threshold))
}

pub fn assess_plausibility(
    narratives: &[Narrative],
    scorer: &dyn PerplexityScorer,
    q: f64,
) -> Result<(Vec<PlausibilityResult>, f64), PlausibilityError> {
    if narratives.is_empty() {
        return Err(PlausibilityError::EmptyScores);
    }
    let nonempty: Vec<String> = narratives
        .iter()
        .filter(|n| !tokenize(&n.text).is_empty())
        .map(|n| n.text.clone())
        .collect();
    let mut scored = if nonempty.is_empty() { Vec::new() } else { scorer.perplexities(&nonempty)? }.into_iter();
    if scored.len() != nonempty.len() {
        return Err(ScorerError::LengthMismatch {
            endpoint: "perplexity scorer",
            expected: nonempty.len(),
            got: scored.len(),
        }
        .into());
    }
    let rows: Vec<(i64, f64, bool)> = narratives
        .iter()
        .map(|n| {
            if tokenize(&n.text).is_empty() {
                (n.record_id, 1.0, true)
            } else {
                (n.record_id, scored.next().expect("length checked"), false)
            }
        })
        .collect();
    flag_by_percentile(&rows, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn repeated_bigram_is_most_likely() {
        let lm = NgramLm::train(&["a b", "a b"], 2, 1.0).unwrap();
        // V = {a, b, <unk>}; c(a) = 2, c(a, b) = 2
        assert_eq!(lm.vocab_size(), 3);
        assert!((lm.prob(&["a"], "b") - 3.0 / 5.0).abs() < 1e-15);
        assert!((lm.prob(&["a"], "a") - 1.0 / 5.0).abs() < 1e-15);
        assert!(lm.prob(&["a"], "b") > lm.prob(&["a"], "a"));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(NgramLm::train::<&str>(&[], 3, 1.0), Err(PlausibilityError::EmptyCorpus)));
        assert!(matches!(NgramLm::train(&["", "..."], 3, 1.0), Err(PlausibilityError::EmptyCorpus)));
    }

    #[test]
    fn unseen_tokens_have_positive_probability() {
        let lm = NgramLm::train(&["the patient is stable"], 3, 1.0).unwrap();
        assert!(lm.prob(&["the", "patient"], "zebra") > 0.0);
        assert!(lm.perplexity("zebra zebra").is_finite());
    }

    #[test]
    fn uniform_model_perplexity_is_vocab_size() {
        let words: Vec<String> = (0..49).map(|i| format!("w{i}")).collect();
        let lm = NgramLm::uniform(&words);
        assert_eq!(lm.vocab_size(), 50);
        assert_eq!(lm.perplexity("w1 w2 w3 unseen words here"), 50.0);
        assert_eq!(lm.perplexity(""), 1.0);
    }

    #[test]
    fn percentile_examples() {
        let s: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile_threshold(&s, 95.0).unwrap(), 19.0);
        assert_eq!(percentile_threshold(&[10.0, 20.0, 30.0, 40.0], 95.0).unwrap(), 40.0);
        assert_eq!(percentile_threshold(&[3.5], 1.0).unwrap(), 3.5);
        assert!(matches!(percentile_threshold(&[], 95.0), Err(PlausibilityError::EmptyScores)));
    }

    #[test]
    fn hundred_distinct_flags_five() {
        let rows: Vec<(i64, f64, bool)> = (0..100).map(|i| (i, 10.0 + i as f64 * 0.37, false)).collect();
        let (results, _) = flag_by_percentile(&rows, 95.0).unwrap();
        assert_eq!(results.iter().filter(|r| r.flagged).count(), 5);
        let same: Vec<(i64, f64, bool)> = (0..10).map(|i| (i, 7.0, false)).collect();
        let (results, _) = flag_by_percentile(&same, 95.0).unwrap();
        assert!(results.iter().all(|r| !r.flagged));
    }

    #[test]
    fn empty_narratives_are_exempt() {
        let lm = NgramLm::train(&["a b c"], 3, 1.0).unwrap();
        let narratives = vec![
            Narrative { record_id: 1, text: String::new() },
            Narrative { record_id: 2, text: "a b c".into() },
        ];
        let (r, _) = assess_plausibility(&narratives, &lm, 1.0).unwrap();
        assert_eq!(r[0].perplexity, 1.0);
        assert!(!r[0].flagged);
    }

    proptest! {
        #[test]
        fn distributions_sum_to_one(ctx_a in 0usize..4, ctx_b in 0usize..4) {
            let corpus = ["a b c d", "b c a", "d d a b", "c"];
            let lm = NgramLm::train(&corpus, 3, 0.5).unwrap();
            let words = ["a", "b", "c", "d"];
            let ctx = [words[ctx_a], words[ctx_b]];
            let total: f64 = lm.vocabulary().map(|w| lm.prob(&ctx, w)).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn perplexity_at_least_one(text in "[a-e ]{0,30}") {
            let lm = NgramLm::train(&["a b c", "c d e a"], 3, 1.0).unwrap();
            prop_assert!(lm.perplexity(&text) >= 1.0);
        }

        #[test]
        fn percentile_monotone_in_q(mut scores in prop::collection::vec(0.0f64..100.0, 1..40), q1 in 1.0f64..100.0, q2 in 1.0f64..100.0) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            prop_assert!(percentile_threshold(&scores, lo).unwrap() <= percentile_threshold(&scores, hi).unwrap());
            let max = scores.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(percentile_threshold(&scores, 100.0).unwrap(), max);
            scores.reverse();
            prop_assert_eq!(percentile_threshold(&scores, 100.0).unwrap(), max);
        }
    }
}
