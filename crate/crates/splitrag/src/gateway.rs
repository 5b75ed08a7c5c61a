//! Chat-completion gateway with an offline stub.
//!
//! All network I/O in the crate lives here. The stub provider answers every
//! request deterministically so the pipeline runs reproducibly without a
//! model endpoint; the http provider speaks the common chat-completion JSON
//! shape (messages array in, choices[0].message.content out) with bounded
//! retries and a cap on concurrent requests.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Result, SplitRagError};

pub const ENV_ENDPOINT: &str = "SPLITRAG_LLM_ENDPOINT";
pub const ENV_MODEL_AGENT: &str = "SPLITRAG_LLM_MODEL_AGENT";
pub const ENV_MODEL_HEAD: &str = "SPLITRAG_LLM_MODEL_HEAD";
pub const ENV_TOKEN: &str = "SPLITRAG_LLM_TOKEN";

/// Placeholder names recognized inside template bodies, written `<name>`.
pub const PLACEHOLDERS: [&str; 7] = [
    "T_entity",
    "T_relations",
    "label",
    "Q_sub",
    "T_clean",
    "E_all",
    "q_new",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    SubgraphAgent,
    HeadAgent,
    Summarizer,
}

const SUBGRAPH_AGENT_BODY: &str = "\
Given Subgraph Context:
- Entity Types: {<T_entity>}
- Relation Types: {<T_relations>}
- Coverage: This subgraph focuses on <label> relationships
Given Current Subquestion: <Q_sub>

Task:
1. Analyze the subquestion's core information need
2. Generate {SPARQL/Cypher} query matching the subgraph schema

Critical Constraints:
- Use ONLY entities/relations from the subgraph context
- Query returns triples that directly answer the subquestion

Output Requirements:
{
  \"query\": \"<generated_query>\",
  \"reasoning\": \"<brief_explanation_of_strategy>\",
}";

const HEAD_AGENT_BODY: &str = "\
Given verified facts: <T_clean>
Supporting evidence: <E_all>
Original question: <q_new>
Generate final answer with explanations,
resolving any remaining ambiguities.";

const SUMMARIZER_BODY: &str = "\
Summarize the following facts into a short evidence paragraph.
Facts:
<E_all>";

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub role: Role,
    pub body: String,
}

impl PromptTemplate {
    pub fn for_role(role: Role) -> PromptTemplate {
        let body = match role {
            Role::SubgraphAgent => SUBGRAPH_AGENT_BODY,
            Role::HeadAgent => HEAD_AGENT_BODY,
            Role::Summarizer => SUMMARIZER_BODY,
        };
        PromptTemplate {
            role,
            body: body.to_string(),
        }
    }

    /// Placeholder names present in the body.
    pub fn placeholders(&self) -> Vec<&'static str> {
        PLACEHOLDERS
            .iter()
            .copied()
            .filter(|name| self.body.contains(&format!("<{name}>")))
            .collect()
    }

    /// Substitutes every `<name>` slot. Every placeholder in the body must be
    /// given a value and every given value must match a slot.
    pub fn fill(&self, values: &BTreeMap<&str, String>) -> Result<String> {
        let slots = self.placeholders();
        for name in values.keys() {
            if !slots.contains(name) {
                return Err(SplitRagError::Template(format!(
                    "value for unknown placeholder {name}"
                )));
            }
        }
        let mut out = self.body.clone();
        for name in &slots {
            let value = values.get(name).ok_or_else(|| {
                SplitRagError::Template(format!("placeholder {name} left unfilled"))
            })?;
            out = out.replace(&format!("<{name}>"), value);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    #[default]
    Stub,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub provider: Provider,
    /// Chat-completion URL; falls back to SPLITRAG_LLM_ENDPOINT.
    pub endpoint: Option<String>,
    pub model_agent: Option<String>,
    pub model_head: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub token_env: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            provider: Provider::Stub,
            endpoint: None,
            model_agent: None,
            model_head: None,
            token_env: None,
            timeout_ms: 30_000,
            max_retries: 2,
            backoff_ms: 250,
            max_in_flight: 4,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_in_flight == 0 {
            return Err(SplitRagError::InvalidConfig(
                "max_in_flight must be at least 1".to_string(),
            ));
        }
        if self.timeout_ms == 0 {
            return Err(SplitRagError::InvalidConfig(
                "timeout_ms must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug)]
struct Resolved {
    provider: Provider,
    endpoint: Option<String>,
    model_agent: Option<String>,
    model_head: Option<String>,
    token: Option<String>,
    timeout: Duration,
    max_retries: u32,
    backoff_ms: u64,
}

/// Counting semaphore bounding concurrent requests.
struct Limiter {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(cap: usize) -> Limiter {
        Limiter {
            slots: Mutex::new(cap),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut slots = self.slots.lock().expect("limiter poisoned");
        while *slots == 0 {
            slots = self.freed.wait(slots).expect("limiter poisoned");
        }
        *slots -= 1;
        LimiterGuard { limiter: self }
    }
}

struct LimiterGuard<'a> {
    limiter: &'a Limiter,
}

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        let mut slots = self.limiter.slots.lock().expect("limiter poisoned");
        *slots += 1;
        self.limiter.freed.notify_one();
    }
}

pub struct LlmGateway {
    cfg: Resolved,
    limiter: Limiter,
}

impl LlmGateway {
    /// Resolves config against the environment and validates it up front, so
    /// a missing endpoint or token fails at startup rather than per call.
    pub fn new(cfg: GatewayConfig) -> Result<LlmGateway> {
        cfg.validate()?;
        let env = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        let endpoint = cfg.endpoint.clone().or_else(|| env(ENV_ENDPOINT));
        let model_agent = cfg.model_agent.clone().or_else(|| env(ENV_MODEL_AGENT));
        let model_head = cfg.model_head.clone().or_else(|| env(ENV_MODEL_HEAD));
        let token = match &cfg.token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                SplitRagError::InvalidConfig(format!(
                    "token variable {var} is named in the config but not set"
                ))
            })?),
            None => env(ENV_TOKEN),
        };
        if cfg.provider == Provider::Http {
            if endpoint.is_none() {
                return Err(SplitRagError::InvalidConfig(
                    "http provider needs an endpoint (config or SPLITRAG_LLM_ENDPOINT)"
                        .to_string(),
                ));
            }
            if model_agent.is_none() || model_head.is_none() {
                return Err(SplitRagError::InvalidConfig(
                    "http provider needs model_agent and model_head (config or environment)"
                        .to_string(),
                ));
            }
        }
        Ok(LlmGateway {
            limiter: Limiter::new(cfg.max_in_flight),
            cfg: Resolved {
                provider: cfg.provider,
                endpoint,
                model_agent,
                model_head,
                token,
                timeout: Duration::from_millis(cfg.timeout_ms),
                max_retries: cfg.max_retries,
                backoff_ms: cfg.backoff_ms,
            },
        })
    }

    pub fn stub() -> LlmGateway {
        LlmGateway::new(GatewayConfig::default()).expect("stub config is valid")
    }

    pub fn provider(&self) -> Provider {
        self.cfg.provider
    }

    fn model_for(&self, role: Role) -> &str {
        match role {
            Role::HeadAgent => self.cfg.model_head.as_deref().unwrap_or("stub"),
            Role::SubgraphAgent | Role::Summarizer => {
                self.cfg.model_agent.as_deref().unwrap_or("stub")
            }
        }
    }

    /// Sends one filled prompt. Stub mode answers locally; http mode posts to
    /// the configured endpoint with `max_retries + 1` total attempts and
    /// doubling backoff between them.
    pub fn complete(&self, role: Role, prompt: &str) -> Result<String> {
        let _slot = self.limiter.acquire();
        match self.cfg.provider {
            Provider::Stub => Ok(stub_response(role, prompt)),
            Provider::Http => self.complete_http(role, prompt),
        }
    }

    fn complete_http(&self, role: Role, prompt: &str) -> Result<String> {
        let endpoint = self.cfg.endpoint.as_deref().expect("validated at startup");
        let body = json!({
            "model": self.model_for(role),
            "messages": [{"role": "user", "content": prompt}],
        });
        let attempts = self.cfg.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                let factor = 1u64 << (attempt - 2).min(16);
                std::thread::sleep(Duration::from_millis(self.cfg.backoff_ms * factor));
            }
            let mut request = ureq::post(endpoint).timeout(self.cfg.timeout);
            if let Some(token) = &self.cfg.token {
                request = request.set("Authorization", &format!("Bearer {token}"));
            }
            match request.send_json(body.clone()) {
                Ok(response) => {
                    let value: serde_json::Value = response
                        .into_json()
                        .map_err(|e| SplitRagError::Gateway {
                            attempts: attempt as usize,
                            reason: format!("malformed response body: {e}"),
                        })?;
                    let content = value
                        .pointer("/choices/0/message/content")
                        .and_then(|v| v.as_str());
                    match content {
                        Some(text) => return Ok(text.to_string()),
                        None => {
                            return Err(SplitRagError::Gateway {
                                attempts: attempt as usize,
                                reason: "response lacks choices[0].message.content".to_string(),
                            })
                        }
                    }
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(SplitRagError::Gateway {
            attempts: attempts as usize,
            reason: last_error,
        })
    }
}

/// Offline behavior: the fact lines of the prompt (the templated
/// "head — relation — tail" form), sorted. Identical input gives identical
/// output byte for byte.
fn stub_response(_role: Role, prompt: &str) -> String {
    let mut lines: Vec<&str> = prompt
        .lines()
        .map(str::trim)
        .filter(|l| l.contains(" — "))
        .collect();
    lines.sort_unstable();
    lines.join("\n")
}
