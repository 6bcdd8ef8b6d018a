//! Client for a remote scoring service exposing `/v1/coherence`,
//! `/v1/perplexity` and `/v1/nli`.
//!
//! Requests carry at most [`MAX_BATCH`] items; batches are sent concurrently
//! up to the configured in-flight bound and reassembled in input order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Duration;
use thiserror::Error;

use crate::coherence::{CoherenceScorer, SentencePair};
use crate::consistency::{ConsistencyError, NliClassifier, NliLabelDistribution, PremiseHypothesis};
use crate::plausibility::PerplexityScorer;
use crate::remote::{JsonClient, RemoteError};

pub const MAX_BATCH: usize = 128;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error("{endpoint} returned {got} results for {expected} inputs")]
    LengthMismatch {
        endpoint: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{endpoint} returned an invalid value: {detail}")]
    InvalidValue { endpoint: &'static str, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteScorerConfig {
    pub url: String,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    /// Environment variable holding an optional bearer token.
    pub token_env: String,
}

impl Default for RemoteScorerConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000".into(),
            timeout_secs: 120,
            max_in_flight: 4,
            token_env: "EHRSYNTH_SCORER_TOKEN".into(),
        }
    }
}

#[derive(Debug)]
pub struct RemoteScorer {
    client: JsonClient,
}

#[derive(Serialize)]
struct PairWire<'a> {
    first: &'a str,
    second: &'a str,
}

#[derive(Serialize)]
struct CoherenceRequest<'a> {
    pairs: Vec<PairWire<'a>>,
}

#[derive(Deserialize)]
struct CoherenceResponse {
    probabilities: Vec<f64>,
}

#[derive(Serialize)]
struct PerplexityRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct PerplexityResponse {
    perplexities: Vec<f64>,
}

#[derive(Serialize)]
struct NliItem<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Serialize)]
struct NliRequest<'a> {
    items: Vec<NliItem<'a>>,
}

#[derive(Deserialize)]
struct NliResponse {
    labels: Vec<NliLabelDistribution>,
}

impl RemoteScorer {
    pub fn new(config: &RemoteScorerConfig, token: Option<String>) -> Result<Self, ScorerError> {
        let client = JsonClient::new(
            &config.url,
            token,
            Duration::from_secs(config.timeout_secs.max(1)),
            config.max_in_flight,
        )?;
        Ok(Self { client })
    }

    pub fn from_env(config: &RemoteScorerConfig) -> Result<Self, ScorerError> {
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        Self::new(config, token)
    }

    fn batched<I: Sync, O: Send>(
        &self,
        endpoint: &'static str,
        items: &[I],
        call: impl Fn(&[I]) -> Result<Vec<O>, ScorerError> + Sync,
    ) -> Result<Vec<O>, ScorerError> {
        let chunks: Vec<Vec<O>> = items
            .par_chunks(MAX_BATCH)
            .map(|chunk| {
                let out = call(chunk)?;
                if out.len() != chunk.len() {
                    return Err(ScorerError::LengthMismatch {
                        endpoint,
                        expected: chunk.len(),
                        got: out.len(),
                    });
                }
                Ok(out)
            })
            .collect::<Result<_, _>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }
}

fn check_probability(endpoint: &'static str, p: f64) -> Result<f64, ScorerError> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(ScorerError::InvalidValue {
            endpoint,
            detail: format!("probability {p} outside [0, 1]"),
        })
    }
}

impl CoherenceScorer for RemoteScorer {
    fn score_pairs(&self, pairs: &[SentencePair]) -> Result<Vec<f64>, ScorerError> {
        const EP: &str = "/v1/coherence";
        self.batched(EP, pairs, |chunk| {
            let body = CoherenceRequest {
                pairs: chunk
                    .iter()
                    .map(|p| PairWire {
                        first: &p.first,
                        second: &p.second,
                    })
                    .collect(),
            };
            let resp: CoherenceResponse = self.client.post(EP, &body)?;
            resp.probabilities.into_iter().map(|p| check_probability(EP, p)).collect()
        })
    }
}

impl PerplexityScorer for RemoteScorer {
    fn perplexities(&self, texts: &[String]) -> Result<Vec<f64>, ScorerError> {
        const EP: &str = "/v1/perplexity";
        self.batched(EP, texts, |chunk| {
            let resp: PerplexityResponse = self.client.post(EP, &PerplexityRequest { texts: chunk })?;
            resp.perplexities
                .into_iter()
                .map(|x| {
                    if x.is_finite() && x >= 1.0 {
                        Ok(x)
                    } else {
                        Err(ScorerError::InvalidValue {
                            endpoint: EP,
                            detail: format!("perplexity {x} is not a finite value >= 1"),
                        })
                    }
                })
                .collect()
        })
    }
}

impl NliClassifier for RemoteScorer {
    fn classify(&self, pairs: &[PremiseHypothesis]) -> Result<Vec<NliLabelDistribution>, ConsistencyError> {
        const EP: &str = "/v1/nli";
        let labels = self.batched(EP, pairs, |chunk| {
            let body = NliRequest {
                items: chunk
                    .iter()
                    .map(|p| NliItem {
                        premise: &p.premise,
                        hypothesis: &p.hypothesis,
                    })
                    .collect(),
            };
            let resp: NliResponse = self.client.post(EP, &body)?;
            resp.labels
                .into_iter()
                .map(|d| {
                    if d.is_valid(1e-6) {
                        Ok(d)
                    } else {
                        Err(ScorerError::InvalidValue {
                            endpoint: EP,
                            detail: format!("label distribution {d:?} is not a probability triple"),
                        })
                    }
                })
                .collect()
        })?;
        Ok(labels)
    }
}
