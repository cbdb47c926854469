//! Prompt construction, a chat-completions client with retry, tolerant
//! parsing of model replies, and a deterministic mock for offline runs.
//!
//! The three prompt templates are pinned resources; golden-file tests assert
//! byte equality against checked-in copies. Do not edit them.

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::http::{self, HttpError, RetryCounter, RetryPolicy};
use crate::ontology::OntoId;
use crate::retrieve::Candidate;
use crate::text::fold_key;

pub const PLAIN_TEMPLATE: &str = include_str!("../prompts/plain.txt");
pub const RAG_TEMPLATE: &str = include_str!("../prompts/rag.txt");
pub const EXTRACT_TEMPLATE: &str = include_str!("../prompts/extract.txt");
pub const PROMPT_VERSION: &str = "1";

const TERM_PLACEHOLDER: &str = "{term}";
const MATCHES_PLACEHOLDER: &str = "[match_1...match_20]";

/// Candidate lists longer than this are rejected.
pub const MAX_RAG_CANDIDATES: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("term is empty")]
    EmptyTerm,
    #[error("clinical text is empty")]
    EmptyText,
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("{0} candidates exceed the cap of {MAX_RAG_CANDIDATES}")]
    TooManyCandidates(usize),
    #[error("request must carry exactly one user message")]
    InvalidRequest,
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("chat reply carries no assistant content: {0}")]
    MalformedReply(String),
}

/// How candidates are rendered inside the retrieval-augmented prompt.
/// The default includes ids so the model can echo a correct one back;
/// `SurfaceOnly` exists for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CandidateRendering {
    #[default]
    SurfaceAndId,
    SurfaceOnly,
}

fn split_template(template: &'static str, placeholder: &str) -> (&'static str, &'static str) {
    template
        .split_once(placeholder)
        .expect("template resource carries its placeholder")
}

/// Instantiates the unaugmented normalization prompt.
pub fn build_plain_prompt(term: &str) -> Result<String, LlmError> {
    if term.trim().is_empty() {
        return Err(LlmError::EmptyTerm);
    }
    let (before, after) = split_template(PLAIN_TEMPLATE, TERM_PLACEHOLDER);
    Ok(format!("{before}{term}{after}"))
}

/// Instantiates the retrieval-augmented prompt: candidates are rendered in
/// rank order as a JSON-style list replacing the matches placeholder.
pub fn build_rag_prompt(
    term: &str,
    candidates: &[Candidate],
    rendering: CandidateRendering,
) -> Result<String, LlmError> {
    if term.trim().is_empty() {
        return Err(LlmError::EmptyTerm);
    }
    if candidates.is_empty() {
        return Err(LlmError::EmptyCandidates);
    }
    if candidates.len() > MAX_RAG_CANDIDATES {
        return Err(LlmError::TooManyCandidates(candidates.len()));
    }
    let rendered: Vec<String> = candidates
        .iter()
        .map(|c| match rendering {
            CandidateRendering::SurfaceAndId => format!("{} ({})", c.surface, c.id),
            CandidateRendering::SurfaceOnly => c.surface.clone(),
        })
        .collect();
    let list = serde_json::to_string(&rendered).expect("strings serialize");
    let (before, rest) = split_template(RAG_TEMPLATE, TERM_PLACEHOLDER);
    let (middle, after) = rest
        .split_once(MATCHES_PLACEHOLDER)
        .expect("template resource carries its placeholder");
    Ok(format!("{before}{term}{middle}{list}{after}"))
}

/// Instantiates the sign/symptom extraction prompt with the clinical-features
/// text attached as the input object.
pub fn build_extraction_prompt(clinical_text: &str) -> Result<String, LlmError> {
    if clinical_text.trim().is_empty() {
        return Err(LlmError::EmptyText);
    }
    let input = serde_json::json!({ "clinical Features": clinical_text });
    Ok(format!("{EXTRACT_TEMPLATE}{input}\n"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// A chat-completions request carrying exactly one user message.
#[derive(Debug, Clone, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn single_user(
        model: impl Into<String>,
        prompt: impl Into<String>,
        temperature: f64,
    ) -> Self {
        ChatRequest {
            model: model.into(),
            messages: vec![ChatMessage {
                role: "user".to_string(),
                content: prompt.into(),
            }],
            temperature,
        }
    }
}

/// Endpoint configuration for an OpenAI-compatible chat-completions server.
/// `base_url` includes the `/v1` segment; `/chat/completions` is appended.
#[derive(Debug, Clone)]
pub struct LlmEndpoint {
    pub base_url: String,
    pub model: String,
    pub token: Option<String>,
    pub temperature: f64,
    pub retry: RetryPolicy,
    pub timeout: Duration,
}

impl LlmEndpoint {
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        token: Option<String>,
    ) -> Self {
        LlmEndpoint {
            base_url: base_url.into(),
            model: model.into(),
            token,
            temperature: 0.0,
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(120),
        }
    }
}

/// Anything that can answer a single prompt with raw text. Implemented by the
/// HTTP client and by scripted test doubles.
pub trait ChatBackend: Send + Sync {
    fn backend_id(&self) -> String;
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

/// Stateless HTTP chat client; safe to share across threads.
pub struct ChatClient {
    endpoint: LlmEndpoint,
    agent: ureq::Agent,
    counter: RetryCounter,
}

impl ChatClient {
    pub fn new(endpoint: LlmEndpoint) -> Self {
        let agent = http::agent(endpoint.timeout);
        ChatClient {
            endpoint,
            agent,
            counter: RetryCounter::default(),
        }
    }

    pub fn endpoint(&self) -> &LlmEndpoint {
        &self.endpoint
    }

    pub fn retries(&self) -> u64 {
        self.counter.count()
    }

    /// Sends the request and returns the assistant message content. Transient
    /// failures (timeouts, 429, 5xx) are retried with exponential backoff up
    /// to the policy cap, honoring Retry-After; auth failures are immediate.
    pub fn chat_complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let user_messages = request.messages.iter().filter(|m| m.role == "user").count();
        if user_messages != 1 {
            return Err(LlmError::InvalidRequest);
        }
        let url = format!(
            "{}/chat/completions",
            self.endpoint.base_url.trim_end_matches('/')
        );
        let body = serde_json::to_value(request).expect("request serializes");
        let reply = http::post_json_with_retry(
            &self.agent,
            &url,
            self.endpoint.token.as_deref(),
            &body,
            &self.endpoint.retry,
            Some(&self.counter),
        )?;
        reply
            .get("choices")
            .and_then(|c| c.get(0))
            .and_then(|c| c.get("message"))
            .and_then(|m| m.get("content"))
            .and_then(|c| c.as_str())
            .map(|s| s.to_string())
            .ok_or_else(|| LlmError::MalformedReply(reply.to_string()))
    }
}

impl ChatBackend for ChatClient {
    fn backend_id(&self) -> String {
        format!("llm:{}@{}", self.endpoint.model, self.endpoint.base_url)
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        self.chat_complete(&ChatRequest::single_user(
            self.endpoint.model.clone(),
            prompt,
            self.endpoint.temperature,
        ))
    }
}

/// Scripted chat double: returns a fixed reply for every prompt.
pub struct ScriptedChat {
    reply: String,
}

impl ScriptedChat {
    pub fn fixed(reply: impl Into<String>) -> Self {
        ScriptedChat {
            reply: reply.into(),
        }
    }
}

impl ChatBackend for ScriptedChat {
    fn backend_id(&self) -> String {
        "mock:scripted".to_string()
    }

    fn complete(&self, _prompt: &str) -> Result<String, LlmError> {
        Ok(self.reply.clone())
    }
}

/// How a parsed reply relates to the expected shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    /// Canonical keys, valid id, non-empty best match.
    Clean,
    /// Understood via key aliases or with a missing/empty best match.
    RepairedKeys,
    /// An id was present but did not normalize (or was absent entirely).
    InvalidId,
    /// No usable JSON object in the reply.
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyId {
    Valid(OntoId),
    Invalid(String),
    Missing,
}

/// A parsed normalization reply. Parsing never fails: every input lands in
/// exactly one [`ParseStatus`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkReply {
    pub best_match: String,
    pub id: ReplyId,
    pub parse_status: ParseStatus,
    pub raw_text: String,
}

/// Scans for balanced `{...}` objects outside string literals and returns the
/// first slice that parses as a JSON object. Tolerates code fences and
/// surrounding prose; later objects are ignored.
pub(crate) fn extract_first_json_object(
    text: &str,
) -> Option<serde_json::Map<String, serde_json::Value>> {
    let bytes = text.as_bytes();
    let mut search_from = 0usize;
    while let Some(offset) = text[search_from..].find('{') {
        let start = search_from + offset;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        let mut end = None;
        for (i, &b) in bytes[start..].iter().enumerate() {
            if in_string {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == b'"' {
                    in_string = false;
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(start + i + 1);
                        break;
                    }
                }
                _ => {}
            }
        }
        let end = end?; // unbalanced to the end of input
        if let Ok(serde_json::Value::Object(map)) =
            serde_json::from_str::<serde_json::Value>(&text[start..end])
        {
            return Some(map);
        }
        search_from = start + 1;
    }
    None
}

fn normalize_key(key: &str) -> String {
    fold_key(key).replace([' ', '-'], "_")
}

const TERM_KEYS: [&str; 2] = ["best_match", "term"];
const ID_KEYS: [&str; 2] = ["hpo_id", "id"];

/// Parses a model reply into a [`LinkReply`]. Accepts the key aliases seen in
/// the wild (`hpo_id`, `HPO ID`, `HPO_ID`, `id`; `best_match`, `term`,
/// `best match`), normalizes the id, and encodes every failure in
/// `parse_status` instead of erroring.
pub fn parse_link_reply(raw: &str) -> LinkReply {
    let unparseable = || LinkReply {
        best_match: String::new(),
        id: ReplyId::Missing,
        parse_status: ParseStatus::Unparseable,
        raw_text: raw.to_string(),
    };
    let Some(object) = extract_first_json_object(raw) else {
        return unparseable();
    };

    let lookup = |aliases: &[&str]| -> Option<(String, String)> {
        for alias in aliases {
            for (key, value) in &object {
                if normalize_key(key) == *alias {
                    if let Some(s) = value.as_str() {
                        return Some((key.clone(), s.to_string()));
                    }
                }
            }
        }
        None
    };
    let term_entry = lookup(&TERM_KEYS);
    let id_entry = lookup(&ID_KEYS);
    if term_entry.is_none() && id_entry.is_none() {
        return unparseable();
    }

    let best_match = term_entry
        .as_ref()
        .map(|(_, v)| v.trim().to_string())
        .unwrap_or_default();
    let canonical_keys = term_entry
        .as_ref()
        .map(|(k, _)| k == "best_match")
        .unwrap_or(false)
        && id_entry
            .as_ref()
            .map(|(k, _)| k == "hpo_id")
            .unwrap_or(false);

    let (id, parse_status) = match id_entry {
        Some((_, raw_id)) => match OntoId::parse(&raw_id) {
            Ok(id) => {
                let status = if canonical_keys && !best_match.is_empty() {
                    ParseStatus::Clean
                } else {
                    ParseStatus::RepairedKeys
                };
                (ReplyId::Valid(id), status)
            }
            Err(_) => (ReplyId::Invalid(raw_id), ParseStatus::InvalidId),
        },
        None => (ReplyId::Missing, ParseStatus::InvalidId),
    };
    LinkReply {
        best_match,
        id,
        parse_status,
        raw_text: raw.to_string(),
    }
}

/// Fixed reply payload for the table-driven mock.
#[derive(Debug, Clone)]
pub struct MockReply {
    pub best_match: String,
    /// Raw id string so tests can stage invalid or off-list ids.
    pub id: String,
}

/// Deterministic offline stand-in for the candidate-selection model.
#[derive(Debug, Clone)]
pub enum MockPolicy {
    /// Echo the rank-1 candidate.
    FirstCandidate,
    /// Echo the candidate with the highest cosine (ties keep earlier rank).
    HighestCosine,
    /// Echo the candidate whose folded surface equals the folded term, else
    /// fall back to the highest cosine.
    ExactSurfaceElseHighestCosine,
    /// Look the folded term up in a fixed table; misses reply `{}`.
    FixedTable(HashMap<String, MockReply>),
}

impl MockPolicy {
    pub fn policy_id(&self) -> String {
        match self {
            MockPolicy::FirstCandidate => "mock:first-candidate".to_string(),
            MockPolicy::HighestCosine => "mock:highest-cosine".to_string(),
            MockPolicy::ExactSurfaceElseHighestCosine => "mock:exact-surface".to_string(),
            MockPolicy::FixedTable(_) => "mock:fixed-table".to_string(),
        }
    }

    /// Synthesizes the raw reply text, which flows through the same
    /// [`parse_link_reply`] path as a live model's output.
    pub fn reply(&self, term: &str, candidates: &[Candidate]) -> String {
        let echo = |c: &Candidate| {
            serde_json::json!({ "best_match": c.surface, "hpo_id": c.id.as_str() }).to_string()
        };
        fn highest(candidates: &[Candidate]) -> Option<&Candidate> {
            candidates
                .iter()
                .reduce(|best, c| if c.score > best.score { c } else { best })
        }
        match self {
            MockPolicy::FirstCandidate => candidates.first().map(echo),
            MockPolicy::HighestCosine => highest(candidates).map(echo),
            MockPolicy::ExactSurfaceElseHighestCosine => {
                let key = fold_key(term);
                candidates
                    .iter()
                    .find(|c| fold_key(&c.surface) == key)
                    .or_else(|| highest(candidates))
                    .map(echo)
            }
            MockPolicy::FixedTable(table) => table.get(&fold_key(term)).map(|r| {
                serde_json::json!({ "best_match": r.best_match, "hpo_id": r.id }).to_string()
            }),
        }
        .unwrap_or_else(|| "{}".to_string())
    }
}
