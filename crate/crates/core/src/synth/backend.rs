//! Completion backends: the offline grammar generator and the remote LLM client.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Duration;
use thiserror::Error;

use super::grammar::Grammar;
use super::template::BLOCK_TAG;
use crate::remote::{JsonClient, RemoteError};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error("prompt not understood: {0}")]
    Prompt(String),
    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(String),
}

/// Anything that turns a prompt into text. Implementations must be safe to
/// call from several generation workers at once.
pub trait GenerationBackend: Send + Sync {
    /// Short identifier recorded in row provenance.
    fn id(&self) -> &str;
    fn complete(&self, prompt: &str, seed: u64, max_len: usize) -> Result<String, BackendError>;
}

/// 64-bit FNV-1a.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Deterministic weighted-choice generator: the output is a pure function of
/// `(prompt, seed)`. It reads the table name, context listing and requested
/// fields from the format section that rendered prompts carry, so it sees
/// exactly what a remote model would.
#[derive(Debug, Clone)]
pub struct GrammarBackend {
    /// Per-opportunity probability of injecting a clinical defect.
    pub defect_rate: f64,
    /// Probability of emitting a malformed completion, which exercises the
    /// caller's retry path.
    pub malformed_rate: f64,
}

impl Default for GrammarBackend {
    fn default() -> Self {
        Self {
            defect_rate: 0.02,
            malformed_rate: 0.01,
        }
    }
}

struct PromptSpec {
    table: String,
    context: BTreeMap<String, String>,
    fields: Vec<String>,
}

fn read_prompt(prompt: &str) -> Result<PromptSpec, BackendError> {
    let mut table = None;
    let mut context = BTreeMap::new();
    let mut fields = Vec::new();
    let mut in_context = false;
    let mut in_block = false;
    let open = format!("```{BLOCK_TAG}");
    for line in prompt.lines() {
        if in_block {
            if line.starts_with("```") {
                break;
            }
            if let Some((field, _)) = line.split_once(':') {
                fields.push(field.trim().to_string());
            }
        } else if line == open {
            in_block = true;
            in_context = false;
        } else if let Some(t) = line.strip_prefix("Table: ") {
            table = Some(t.trim().to_string());
        } else if line == "Context:" {
            in_context = true;
        } else if in_context {
            match line.strip_prefix("- ").and_then(|l| l.split_once(": ")) {
                Some((k, v)) => {
                    context.insert(k.to_string(), v.to_string());
                }
                None => in_context = false,
            }
        }
    }
    let table = table.ok_or_else(|| BackendError::Prompt("no 'Table:' line".into()))?;
    if fields.is_empty() {
        return Err(BackendError::Prompt("no output fields requested".into()));
    }
    Ok(PromptSpec { table, context, fields })
}

impl GrammarBackend {
    pub fn new(defect_rate: f64) -> Self {
        Self {
            defect_rate,
            ..Self::default()
        }
    }

    /// No defects and no malformed output.
    pub fn clean() -> Self {
        Self {
            defect_rate: 0.0,
            malformed_rate: 0.0,
        }
    }
}

impl GenerationBackend for GrammarBackend {
    fn id(&self) -> &str {
        "grammar"
    }

    fn complete(&self, prompt: &str, seed: u64, max_len: usize) -> Result<String, BackendError> {
        let spec = read_prompt(prompt)?;
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(prompt.as_bytes()) ^ seed);
        if self.malformed_rate > 0.0 && rng.gen::<f64>() < self.malformed_rate {
            return Ok("I'm sorry, could you clarify which record you need?".to_string());
        }
        let produced = Grammar {
            rng: &mut rng,
            ctx: &spec.context,
            defect_rate: self.defect_rate,
        }
        .produce(&spec.table);
        let mut text = format!("Here is the {} record.\n```{BLOCK_TAG}\n", spec.table);
        for field in &spec.fields {
            if let Some((_, value)) = produced.iter().find(|(k, _)| k == field) {
                text.push_str(&format!("{field}: {value}\n"));
            }
        }
        text.push_str("```\n");
        if max_len > 0 && text.len() > max_len {
            let mut cut = max_len;
            while !text.is_char_boundary(cut) {
                cut -= 1;
            }
            text.truncate(cut);
        }
        Ok(text)
    }
}

/// Request shape spoken by the remote endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiStyle {
    /// `POST /v1/complete` with `{prompt, max_tokens, temperature, seed}` -> `{text}`.
    #[default]
    Native,
    /// `POST /v1/chat/completions` in the common hosted chat-completions shape.
    OpenaiChat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteLlmConfig {
    pub url: String,
    pub api_style: ApiStyle,
    /// Model name sent in chat-style requests.
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
}

impl Default for RemoteLlmConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8080".into(),
            api_style: ApiStyle::Native,
            model: "gpt-4".into(),
            temperature: 0.7,
            timeout_secs: 60,
            max_in_flight: 4,
            token_env: "EHRSYNTH_LLM_TOKEN".into(),
        }
    }
}

#[derive(Serialize)]
struct CompleteRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    seed: u64,
}

#[derive(Deserialize)]
struct CompleteResponse {
    text: String,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    max_tokens: usize,
    temperature: f64,
    seed: u64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: String,
}

/// Wire client for a hosted completion model. Each `complete` call issues
/// exactly one request; retrying is the caller's job, so the number of
/// requests per row is bounded by the generator's retry limit.
#[derive(Debug)]
pub struct RemoteLlmBackend {
    client: JsonClient,
    config: RemoteLlmConfig,
}

impl RemoteLlmBackend {
    /// Reads the bearer token from `config.token_env` if that variable is set.
    pub fn from_env(config: RemoteLlmConfig) -> Result<Self, BackendError> {
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        Self::with_token(config, token)
    }

    pub fn with_token(config: RemoteLlmConfig, token: Option<String>) -> Result<Self, BackendError> {
        let client = JsonClient::new(
            &config.url,
            token,
            Duration::from_secs(config.timeout_secs.max(1)),
            config.max_in_flight,
        )?;
        Ok(Self { client, config })
    }
}

impl GenerationBackend for RemoteLlmBackend {
    fn id(&self) -> &str {
        match self.config.api_style {
            ApiStyle::Native => "remote",
            ApiStyle::OpenaiChat => "remote-chat",
        }
    }

    fn complete(&self, prompt: &str, seed: u64, max_len: usize) -> Result<String, BackendError> {
        match self.config.api_style {
            ApiStyle::Native => {
                let resp: CompleteResponse = self.client.post(
                    "/v1/complete",
                    &CompleteRequest {
                        prompt,
                        max_tokens: max_len,
                        temperature: self.config.temperature,
                        seed,
                    },
                )?;
                Ok(resp.text)
            }
            ApiStyle::OpenaiChat => {
                let resp: ChatResponse = self.client.post(
                    "/v1/chat/completions",
                    &ChatRequest {
                        model: &self.config.model,
                        messages: [ChatMessage {
                            role: "user",
                            content: prompt,
                        }],
                        max_tokens: max_len,
                        temperature: self.config.temperature,
                        seed,
                    },
                )?;
                resp.choices
                    .into_iter()
                    .next()
                    .map(|c| c.message.content)
                    .ok_or_else(|| RemoteError::Protocol("chat response has no choices".into()).into())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::build_default_schema;
    use crate::synth::{parse_structured_output, render_prompt, PromptContext, TemplateSet};

    fn allergy_prompt() -> String {
        let set = TemplateSet::builtin();
        let mut ctx = PromptContext::new();
        ctx.insert("age".into(), "40".into());
        ctx.insert("allergy_number".into(), "1".into());
        render_prompt(set.get("allergies").unwrap(), &ctx).unwrap()
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn grammar_is_pure_in_prompt_and_seed() {
        let b = GrammarBackend::default();
        let p = allergy_prompt();
        assert_eq!(b.complete(&p, 9, 1024).unwrap(), b.complete(&p, 9, 1024).unwrap());
        let outputs: std::collections::BTreeSet<String> =
            (0..20).map(|s| b.complete(&p, s, 1024).unwrap()).collect();
        assert!(outputs.len() > 1);
    }

    #[test]
    fn grammar_answers_the_requested_fields() {
        let schema = build_default_schema();
        let b = GrammarBackend::clean();
        let text = b.complete(&allergy_prompt(), 3, 1024).unwrap();
        let fields: Vec<String> = ["allergen", "reaction", "severity"].iter().map(|s| s.to_string()).collect();
        let rec = parse_structured_output(&text, schema.table("allergies").unwrap(), &fields).unwrap();
        assert_eq!(rec.len(), 3);
    }

    #[test]
    fn prompt_without_format_section_is_rejected() {
        let b = GrammarBackend::clean();
        assert!(matches!(b.complete("hello", 1, 100), Err(BackendError::Prompt(_))));
    }

    #[test]
    fn reads_context_lines() {
        let spec = read_prompt(&allergy_prompt()).unwrap();
        assert_eq!(spec.table, "allergies");
        assert_eq!(spec.context.get("age").map(String::as_str), Some("40"));
        assert_eq!(spec.fields, ["allergen", "reaction", "severity"]);
    }
}
