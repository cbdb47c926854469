//! Orchestrates the three normalization modes over single terms and batches.
//!
//! Batch results are an append-only JSON-lines file keyed by input index and
//! config hash, so interrupted runs resume by skipping completed inputs. The
//! result bytes are independent of the concurrency cap: workers may finish in
//! any order, lines are written in input order.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::embed::{embed_batch, EmbedError, EmbeddingProvider};
use crate::llm::{
    build_plain_prompt, build_rag_prompt, parse_link_reply, CandidateRendering, ChatBackend,
    ChatClient, ChatRequest, LinkReply, LlmEndpoint, LlmError, MockPolicy, ParseStatus, ReplyId,
};
use crate::ontology::OntoId;
use crate::retrieve::{Candidate, RetrieveError, TermIndex};
use crate::text::{collapse_ws, fold_key, surface_similarity};

/// Results-file schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// Default candidate-list size: accuracy plateaus at 20 candidates.
pub const DEFAULT_K: usize = 20;

pub const MIN_K: usize = 1;
pub const MAX_K: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("term is empty after trimming")]
    EmptyTerm,
    #[error("term list is empty")]
    EmptyBatch,
    #[error("k must be within {MIN_K}..={MAX_K}, got {0}")]
    InvalidK(usize),
    #[error("mode {0} needs an LLM backend or mock policy")]
    MissingLlmBackend(String),
    #[error("concurrency cap must be at least 1")]
    InvalidConcurrency,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("results line {line}: {message}")]
    BadResultsLine { line: usize, message: String },
    #[error("results file was produced with config {found}, current config is {expected}")]
    ResumeConfigMismatch { expected: String, found: String },
}

/// The three normalization modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    EmbedOnly,
    LlmPlain,
    LlmRag { k: usize },
}

impl NormalizationMode {
    pub fn label(&self) -> String {
        match self {
            NormalizationMode::EmbedOnly => "embed".to_string(),
            NormalizationMode::LlmPlain => "llm".to_string(),
            NormalizationMode::LlmRag { k } => format!("rag(k={k})"),
        }
    }

    fn needs_llm(&self) -> bool {
        !matches!(self, NormalizationMode::EmbedOnly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultFlag {
    /// The reply id was valid but not among the supplied candidates.
    OffList,
    /// The reply id did not normalize (or was absent).
    InvalidId,
    /// The model returned nothing usable; maps to a false negative downstream.
    NoOutput,
    /// Resolved by the exact-string fast path without consulting embeddings.
    ExactMatch,
}

/// Per-input outcome of a normalization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationResult {
    pub input: String,
    pub chosen_surface: Option<String>,
    pub chosen_id: Option<OntoId>,
    pub mode: NormalizationMode,
    pub candidates: Vec<Candidate>,
    pub cosine_of_choice: Option<f64>,
    pub flags: BTreeSet<ResultFlag>,
    pub raw_reply: Option<String>,
}

/// LLM selection backend: a live endpoint or a deterministic mock.
pub enum LlmBackend {
    Http(Box<ChatClient>),
    Mock(MockPolicy),
}

impl LlmBackend {
    pub fn http(endpoint: LlmEndpoint) -> Self {
        LlmBackend::Http(Box::new(ChatClient::new(endpoint)))
    }

    pub fn backend_id(&self) -> String {
        match self {
            LlmBackend::Http(client) => client.backend_id(),
            LlmBackend::Mock(policy) => policy.policy_id(),
        }
    }

    fn retries(&self) -> u64 {
        match self {
            LlmBackend::Http(client) => client.retries(),
            LlmBackend::Mock(_) => 0,
        }
    }
}

/// Full configuration of a normalization run. The default toggles are the
/// production preset; [`RunConfig::paper_faithful`] switches the fast path
/// off so every term goes through embeddings.
pub struct RunConfig {
    pub mode: NormalizationMode,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub llm: Option<LlmBackend>,
    pub concurrency: usize,
    pub exact_match_fast_path: bool,
    pub dedupe_by_id: bool,
    pub clamp_to_candidates: bool,
    pub rendering: CandidateRendering,
}

impl RunConfig {
    pub fn new(mode: NormalizationMode, embedder: Arc<dyn EmbeddingProvider>) -> Self {
        RunConfig {
            mode,
            embedder,
            llm: None,
            concurrency: 4,
            exact_match_fast_path: true,
            dedupe_by_id: false,
            clamp_to_candidates: false,
            rendering: CandidateRendering::SurfaceAndId,
        }
    }

    pub fn with_llm(mut self, llm: LlmBackend) -> Self {
        self.llm = Some(llm);
        self
    }

    pub fn with_concurrency(mut self, cap: usize) -> Self {
        self.concurrency = cap;
        self
    }

    /// Paper-faithful preset: no exact-string fast path, no per-concept
    /// dedupe, off-list replies recorded verbatim.
    pub fn paper_faithful(mut self) -> Self {
        self.exact_match_fast_path = false;
        self.dedupe_by_id = false;
        self.clamp_to_candidates = false;
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if let NormalizationMode::LlmRag { k } = self.mode {
            if !(MIN_K..=MAX_K).contains(&k) {
                return Err(PipelineError::InvalidK(k));
            }
        }
        if self.mode.needs_llm() && self.llm.is_none() {
            return Err(PipelineError::MissingLlmBackend(self.mode.label()));
        }
        if self.concurrency == 0 {
            return Err(PipelineError::InvalidConcurrency);
        }
        Ok(())
    }

    /// Stable hash over everything that affects result content; the resume
    /// key for results files.
    pub fn config_hash(&self) -> String {
        let description = format!(
            "v{};mode={};embed={};llm={};fast={};dedupe={};clamp={};render={:?}",
            SCHEMA_VERSION,
            self.mode.label(),
            self.embedder.provider_id(),
            self.llm
                .as_ref()
                .map(|l| l.backend_id())
                .unwrap_or_default(),
            self.exact_match_fast_path,
            self.dedupe_by_id,
            self.clamp_to_candidates,
            self.rendering,
        );
        let mut hash = 0xcbf29ce484222325u64; // FNV-1a
        for byte in description.bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{hash:016x}")
    }
}

fn complete_llm(
    backend: &LlmBackend,
    prompt: &str,
    term: &str,
    candidates: &[Candidate],
) -> Result<String, PipelineError> {
    match backend {
        LlmBackend::Http(client) => {
            let endpoint = client.endpoint();
            let request =
                ChatRequest::single_user(endpoint.model.clone(), prompt, endpoint.temperature);
            Ok(client.chat_complete(&request)?)
        }
        LlmBackend::Mock(policy) => Ok(policy.reply(term, candidates)),
    }
}

fn embed_one(config: &RunConfig, term: &str) -> Result<crate::embed::Vector, PipelineError> {
    let batch = embed_batch(config.embedder.as_ref(), &[term.to_string()])?;
    Ok(batch.vectors.into_iter().next().expect("one vector"))
}

fn assemble_llm_result(
    input: String,
    mode: NormalizationMode,
    reply: LinkReply,
    candidates: Vec<Candidate>,
    config: &RunConfig,
) -> NormalizationResult {
    let mut flags = BTreeSet::new();
    let raw_reply = Some(reply.raw_text.clone());
    if reply.parse_status == ParseStatus::Unparseable {
        return NormalizationResult {
            input,
            chosen_surface: None,
            chosen_id: None,
            mode,
            candidates,
            cosine_of_choice: None,
            flags: {
                flags.insert(ResultFlag::NoOutput);
                flags
            },
            raw_reply,
        };
    }

    let mut chosen_surface = (!reply.best_match.is_empty()).then(|| reply.best_match.clone());
    let is_rag = matches!(mode, NormalizationMode::LlmRag { .. });
    let mut chosen_id = None;
    match &reply.id {
        ReplyId::Valid(id) => {
            chosen_id = Some(id.clone());
            if is_rag && !candidates.iter().any(|c| &c.id == id) {
                flags.insert(ResultFlag::OffList);
            }
        }
        ReplyId::Invalid(_) | ReplyId::Missing => {
            flags.insert(ResultFlag::InvalidId);
        }
    }

    // Cosine of the choice, when the reply points back into the pool.
    let mut cosine_of_choice = chosen_id
        .as_ref()
        .and_then(|id| candidates.iter().find(|c| &c.id == id))
        .map(|c| c.score);
    if cosine_of_choice.is_none() {
        if let Some(surface) = &chosen_surface {
            let key = fold_key(surface);
            cosine_of_choice = candidates
                .iter()
                .find(|c| fold_key(&c.surface) == key)
                .map(|c| c.score);
        }
    }

    let off_track = flags.contains(&ResultFlag::OffList) || flags.contains(&ResultFlag::InvalidId);
    if config.clamp_to_candidates && is_rag && off_track && !candidates.is_empty() {
        let reference = chosen_surface.clone().unwrap_or_default();
        let clamped = candidates
            .iter()
            .max_by(|a, b| {
                surface_similarity(&reference, &a.surface)
                    .partial_cmp(&surface_similarity(&reference, &b.surface))
                    .expect("finite similarity")
                    .then_with(|| b.rank.cmp(&a.rank))
            })
            .expect("non-empty candidates");
        chosen_surface = Some(clamped.surface.clone());
        chosen_id = Some(clamped.id.clone());
        cosine_of_choice = Some(clamped.score);
    }

    NormalizationResult {
        input,
        chosen_surface,
        chosen_id,
        mode,
        candidates,
        cosine_of_choice,
        flags,
        raw_reply,
    }
}

/// Normalizes a single term under the configured mode.
pub fn normalize_one(
    term: &str,
    config: &RunConfig,
    index: &TermIndex,
) -> Result<NormalizationResult, PipelineError> {
    config.validate()?;
    let term = collapse_ws(term);
    if term.is_empty() {
        return Err(PipelineError::EmptyTerm);
    }

    if config.exact_match_fast_path {
        if let Some(hit) = index.exact_match(&term) {
            let mut flags = BTreeSet::new();
            flags.insert(ResultFlag::ExactMatch);
            return Ok(NormalizationResult {
                input: term,
                chosen_surface: Some(hit.surface.clone()),
                chosen_id: Some(hit.id.clone()),
                mode: config.mode,
                candidates: vec![hit],
                cosine_of_choice: Some(1.0),
                flags,
                raw_reply: None,
            });
        }
    }

    match config.mode {
        NormalizationMode::EmbedOnly => {
            let query = embed_one(config, &term)?;
            let candidates = index.top_k(&query, 1, config.dedupe_by_id)?;
            let top = candidates[0].clone();
            Ok(NormalizationResult {
                input: term,
                chosen_surface: Some(top.surface),
                chosen_id: Some(top.id),
                mode: config.mode,
                cosine_of_choice: Some(top.score),
                candidates,
                flags: BTreeSet::new(),
                raw_reply: None,
            })
        }
        NormalizationMode::LlmPlain => {
            let backend = config.llm.as_ref().expect("validated");
            let prompt = build_plain_prompt(&term)?;
            let raw = complete_llm(backend, &prompt, &term, &[])?;
            let reply = parse_link_reply(&raw);
            Ok(assemble_llm_result(
                term,
                config.mode,
                reply,
                Vec::new(),
                config,
            ))
        }
        NormalizationMode::LlmRag { k } => {
            let backend = config.llm.as_ref().expect("validated");
            let query = embed_one(config, &term)?;
            let candidates = index.top_k(&query, k, config.dedupe_by_id)?;
            let prompt = build_rag_prompt(&term, &candidates, config.rendering)?;
            let raw = complete_llm(backend, &prompt, &term, &candidates)?;
            let reply = parse_link_reply(&raw);
            Ok(assemble_llm_result(
                term,
                config.mode,
                reply,
                candidates,
                config,
            ))
        }
    }
}

/// A per-term infrastructure failure: distinct from a model returning
/// nothing, so it never counts as a false negative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub input: String,
    pub error: String,
}

/// One line of the results file. Exactly one of `result`/`error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    /// Schema version.
    pub v: u32,
    /// Input index within the batch.
    pub i: usize,
    /// Config hash; the resume key.
    pub config: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<NormalizationResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<LineError>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub mode: String,
    pub embed_provider: String,
    pub llm_backend: Option<String>,
    pub prompt_version: String,
    pub concurrency: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub n_inputs: usize,
    pub n_ok: usize,
    pub n_failed: usize,
    pub n_resumed: usize,
    pub llm_retries: u64,
}

pub struct BatchOutput {
    pub lines: Vec<ResultLine>,
    pub manifest: RunManifest,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Runs every term through `normalize_one` with a bounded worker pool.
/// Output order matches input order regardless of completion order; a failed
/// term is recorded on its line and never aborts the batch. `on_line` sees
/// lines strictly in input order as they complete, for streaming writers.
fn run_batch_inner(
    terms: &[String],
    config: &RunConfig,
    index: &TermIndex,
    skip: &BTreeSet<usize>,
    mut on_line: impl FnMut(&ResultLine) -> Result<(), PipelineError>,
) -> Result<BatchOutput, PipelineError> {
    config.validate()?;
    if terms.is_empty() {
        return Err(PipelineError::EmptyBatch);
    }
    let started_unix = now_unix();
    let config_hash = config.config_hash();

    let pending: Vec<usize> = (0..terms.len()).filter(|i| !skip.contains(i)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.concurrency.min(pending.len().max(1));
    let (sender, receiver) = mpsc::channel::<(usize, ResultLine)>();
    let sender = Mutex::new(sender);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let sender = sender.lock().expect("sender lock").clone();
            let pending = &pending;
            let next = &next;
            let config_hash = &config_hash;
            scope.spawn(move || loop {
                let slot = next.fetch_add(1, Ordering::Relaxed);
                let Some(&i) = pending.get(slot) else { break };
                let line = match normalize_one(&terms[i], config, index) {
                    Ok(result) => ResultLine {
                        v: SCHEMA_VERSION,
                        i,
                        config: config_hash.clone(),
                        result: Some(result),
                        error: None,
                    },
                    Err(e) => ResultLine {
                        v: SCHEMA_VERSION,
                        i,
                        config: config_hash.clone(),
                        result: None,
                        error: Some(LineError {
                            input: terms[i].clone(),
                            error: e.to_string(),
                        }),
                    },
                };
                if sender.send((i, line)).is_err() {
                    break;
                }
            });
        }
        drop(sender.into_inner().expect("sender lock"));

        // Reassemble in input order, flushing the contiguous prefix.
        // `pending` is ascending by construction.
        let mut buffer: BTreeMap<usize, ResultLine> = BTreeMap::new();
        let mut done: Vec<ResultLine> = Vec::with_capacity(pending.len());
        let mut emit_cursor = 0usize;
        for (i, line) in receiver {
            buffer.insert(i, line);
            while emit_cursor < pending.len() {
                let want = pending[emit_cursor];
                match buffer.remove(&want) {
                    Some(line) => {
                        on_line(&line)?;
                        done.push(line);
                        emit_cursor += 1;
                    }
                    None => break,
                }
            }
        }
        debug_assert!(buffer.is_empty());

        let n_ok = done.iter().filter(|l| l.result.is_some()).count();
        let n_failed = done.len() - n_ok;
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash.clone(),
            mode: config.mode.label(),
            embed_provider: config.embedder.provider_id(),
            llm_backend: config.llm.as_ref().map(|l| l.backend_id()),
            prompt_version: crate::llm::PROMPT_VERSION.to_string(),
            concurrency: config.concurrency,
            started_unix,
            finished_unix: now_unix(),
            n_inputs: terms.len(),
            n_ok,
            n_failed,
            n_resumed: skip.len(),
            llm_retries: config.llm.as_ref().map(|l| l.retries()).unwrap_or(0),
        };
        Ok(BatchOutput {
            lines: done,
            manifest,
        })
    })
}

/// In-memory batch run; one line per term, input order preserved.
pub fn run_batch(
    terms: &[String],
    config: &RunConfig,
    index: &TermIndex,
) -> Result<BatchOutput, PipelineError> {
    run_batch_inner(terms, config, index, &BTreeSet::new(), |_| Ok(()))
}

/// Batch run streaming to an append-only JSON-lines file, with resume: lines
/// already present for the same config hash are skipped, newly computed lines
/// are appended in input order. The manifest is written next to the results
/// file.
pub fn run_batch_to_file(
    terms: &[String],
    config: &RunConfig,
    index: &TermIndex,
    out_path: &Path,
) -> Result<BatchOutput, PipelineError> {
    config.validate()?;
    let config_hash = config.config_hash();
    let mut skip = BTreeSet::new();
    if out_path.exists() {
        for line in read_results(out_path)? {
            if line.config != config_hash {
                return Err(PipelineError::ResumeConfigMismatch {
                    expected: config_hash,
                    found: line.config,
                });
            }
            if line.i < terms.len() {
                skip.insert(line.i);
            }
        }
    }
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out_path)?;
    let mut writer = std::io::BufWriter::new(file);
    let output = run_batch_inner(terms, config, index, &skip, |line| {
        serde_json::to_writer(&mut writer, line).map_err(|e| PipelineError::BadResultsLine {
            line: line.i + 1,
            message: e.to_string(),
        })?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        Ok(())
    })?;
    write_manifest(&manifest_path(out_path), &output.manifest)?;
    Ok(output)
}

pub fn manifest_path(results_path: &Path) -> std::path::PathBuf {
    let mut name = results_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "results".to_string());
    name.push_str(".manifest.json");
    results_path.with_file_name(name)
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), PipelineError> {
    let json =
        serde_json::to_string_pretty(manifest).map_err(|e| PipelineError::BadResultsLine {
            line: 0,
            message: e.to_string(),
        })?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

/// Reads a results file back, in file order.
pub fn read_results(path: &Path) -> Result<Vec<ResultLine>, PipelineError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut lines = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ResultLine =
            serde_json::from_str(&line).map_err(|e| PipelineError::BadResultsLine {
                line: n + 1,
                message: e.to_string(),
            })?;
        lines.push(parsed);
    }
    Ok(lines)
}

/// Serializes result lines to the JSON-lines format (no resume semantics).
pub fn results_to_string(lines: &[ResultLine]) -> String {
    let mut out = String::new();
    for line in lines {
        out.push_str(&serde_json::to_string(line).expect("result lines serialize"));
        out.push('\n');
    }
    out
}

/// Reads an input terms file: one term per line, UTF-8, blank lines and lines
/// starting with `#` ignored.
pub fn read_terms_file(path: &Path) -> Result<Vec<String>, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_terms(&text))
}

pub fn parse_terms(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}
