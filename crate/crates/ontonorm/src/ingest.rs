//! Builds a terms-to-normalize file: fetches OMIM clinical-feature text for
//! licensed users, runs LLM sign/symptom extraction, and applies the curated
//! malformed-term exclusion list.
//!
//! OMIM responses are cached on disk one JSON file per MIM number, so re-runs
//! are offline and the API quota is spent once. Eviction is manual.

use std::collections::HashSet;
use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::http::{self, HttpError, RetryPolicy};
use crate::llm::{build_extraction_prompt, ChatBackend, LlmError};
use crate::text::fold_key;

/// Environment variable expected to carry the OMIM API key.
pub const OMIM_KEY_ENV: &str = "ONTONORM_OMIM_KEY";

/// The curated starter exclusion list shipped with the crate.
const STARTER_EXCLUSIONS: &str = include_str!("../data/malformed_exclusions.txt");

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("invalid MIM number {0:?}: must be exactly 6 digits")]
    InvalidMim(String),
    #[error("OMIM authentication failed; check {OMIM_KEY_ENV}: {0}")]
    Auth(String),
    #[error("OMIM transport: {0}")]
    Transport(HttpError),
    #[error("cannot parse OMIM reply for {mim}: {message}")]
    BadReply { mim: String, message: String },
    #[error("extraction failed for {mim}: {message}")]
    Extraction { mim: String, message: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<HttpError> for IngestError {
    fn from(e: HttpError) -> Self {
        if e.is_auth() {
            IngestError::Auth(e.to_string())
        } else {
            IngestError::Transport(e)
        }
    }
}

/// One fetched clinical-features section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalDocument {
    pub mim_number: String,
    pub title: String,
    pub clinical_features_text: String,
    pub fetched_unix: u64,
}

/// Signs extracted from one document: trimmed, non-empty, case-folded dedup.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedSigns {
    pub mim_number: String,
    pub signs: Vec<String>,
}

/// Curated list of malformed terms to drop, matched exactly after case
/// folding and whitespace collapse. The full expert list is not published;
/// the starter list ships the known examples.
#[derive(Debug, Clone)]
pub struct ExclusionList {
    patterns: HashSet<String>,
    originals: Vec<String>,
}

impl ExclusionList {
    pub fn from_lines(lines: impl IntoIterator<Item = String>) -> Self {
        let mut patterns = HashSet::new();
        let mut originals = Vec::new();
        for line in lines {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if patterns.insert(fold_key(trimmed)) {
                originals.push(trimmed.to_string());
            }
        }
        ExclusionList {
            patterns,
            originals,
        }
    }

    pub fn starter() -> Self {
        Self::from_lines(STARTER_EXCLUSIONS.lines().map(str::to_string))
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_lines(text.lines().map(str::to_string)))
    }

    pub fn empty() -> Self {
        ExclusionList {
            patterns: HashSet::new(),
            originals: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.patterns.contains(&fold_key(term))
    }
}

/// Partitions signs into (kept, dropped) by exclusion-list membership.
pub fn apply_exclusions(
    signs: &[String],
    exclusions: &ExclusionList,
) -> (Vec<String>, Vec<String>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for sign in signs {
        if exclusions.contains(sign) {
            dropped.push(sign.clone());
        } else {
            kept.push(sign.clone());
        }
    }
    (kept, dropped)
}

/// Transport abstraction over the OMIM entry endpoint, so fetching is
/// testable with a counting stub.
pub trait OmimTransport: Send + Sync {
    fn transport_id(&self) -> String;
    /// Returns the raw JSON reply for one MIM number.
    fn fetch_entry(&self, mim: &str) -> Result<String, IngestError>;
}

/// Live OMIM API transport: GET
/// `{base}/api/entry?mimNumber={mim}&include=text:clinicalFeatures&format=json`
/// with the key in the `ApiKey` header.
pub struct HttpOmimTransport {
    agent: ureq::Agent,
    base_url: String,
    api_key: String,
    retry: RetryPolicy,
}

impl HttpOmimTransport {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        HttpOmimTransport {
            agent: http::agent(Duration::from_secs(60)),
            base_url: base_url.into(),
            api_key: api_key.into(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl OmimTransport for HttpOmimTransport {
    fn transport_id(&self) -> String {
        format!("omim:{}", self.base_url)
    }

    fn fetch_entry(&self, mim: &str) -> Result<String, IngestError> {
        let url = format!(
            "{}/api/entry?mimNumber={mim}&include=text:clinicalFeatures&format=json",
            self.base_url.trim_end_matches('/')
        );
        Ok(http::get_with_retry(
            &self.agent,
            &url,
            &[("ApiKey", self.api_key.as_str())],
            &self.retry,
            None,
        )?)
    }
}

/// The result of asking for one MIM number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum FetchOutcome {
    Fetched(ClinicalDocument),
    Skipped { mim_number: String, reason: String },
}

fn validate_mim(mim: &str) -> Result<(), IngestError> {
    if mim.len() == 6 && mim.bytes().all(|b| b.is_ascii_digit()) {
        Ok(())
    } else {
        Err(IngestError::InvalidMim(mim.to_string()))
    }
}

fn parse_omim_reply(mim: &str, raw: &str) -> Result<FetchOutcome, IngestError> {
    let value: serde_json::Value =
        serde_json::from_str(raw).map_err(|e| IngestError::BadReply {
            mim: mim.to_string(),
            message: e.to_string(),
        })?;
    let entry = value
        .pointer("/omim/entryList/0/entry")
        .cloned()
        .unwrap_or(serde_json::Value::Null);
    if entry.is_null() {
        return Ok(FetchOutcome::Skipped {
            mim_number: mim.to_string(),
            reason: "no entry in reply".to_string(),
        });
    }
    let title = entry
        .pointer("/titles/preferredTitle")
        .and_then(|t| t.as_str())
        .unwrap_or("")
        .to_string();
    let sections = entry
        .pointer("/textSectionList")
        .and_then(|s| s.as_array())
        .cloned()
        .unwrap_or_default();
    let clinical = sections.iter().find_map(|s| {
        let section = s.pointer("/textSection")?;
        let name = section.pointer("/textSectionName")?.as_str()?;
        if name == "clinicalFeatures" {
            section
                .pointer("/textSectionContent")
                .and_then(|c| c.as_str())
                .map(str::to_string)
        } else {
            None
        }
    });
    match clinical {
        Some(text) if !text.trim().is_empty() => Ok(FetchOutcome::Fetched(ClinicalDocument {
            mim_number: mim.to_string(),
            title,
            clinical_features_text: text,
            fetched_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        })),
        _ => Ok(FetchOutcome::Skipped {
            mim_number: mim.to_string(),
            reason: "no clinicalFeatures section".to_string(),
        }),
    }
}

/// Fetches clinical-feature sections, one outcome per MIM number. Cache hits
/// bypass the transport entirely; missing sections yield skip records rather
/// than errors. Fetches run serially out of API politeness.
pub fn fetch_clinical_features(
    mim_numbers: &[String],
    transport: &dyn OmimTransport,
    cache_dir: &Path,
) -> Result<Vec<FetchOutcome>, IngestError> {
    std::fs::create_dir_all(cache_dir)?;
    let mut outcomes = Vec::with_capacity(mim_numbers.len());
    for mim in mim_numbers {
        validate_mim(mim)?;
        let cache_path = cache_dir.join(format!("{mim}.json"));
        let raw = if cache_path.exists() {
            std::fs::read_to_string(&cache_path)?
        } else {
            let raw = transport.fetch_entry(mim)?;
            std::fs::write(&cache_path, &raw)?;
            raw
        };
        outcomes.push(parse_omim_reply(mim, &raw)?);
    }
    Ok(outcomes)
}

/// Extracts the `Signs` list from a reply object, tolerating surrounding
/// prose, fences and key order.
fn parse_signs_reply(raw: &str) -> Option<Vec<String>> {
    let object = crate::llm::extract_first_json_object(raw)?;
    let signs = object.iter().find_map(|(key, value)| {
        if fold_key(key) == "signs" {
            value.as_array()
        } else {
            None
        }
    })?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for sign in signs {
        let Some(text) = sign.as_str() else { continue };
        let trimmed = text.trim();
        if trimmed.is_empty() {
            continue;
        }
        if seen.insert(fold_key(trimmed)) {
            out.push(trimmed.to_string());
        }
    }
    Some(out)
}

/// Runs the extraction prompt over one document and parses the sign list.
pub fn extract_signs(
    doc: &ClinicalDocument,
    chat: &dyn ChatBackend,
) -> Result<ExtractedSigns, IngestError> {
    let prompt = build_extraction_prompt(&doc.clinical_features_text)?;
    let raw = chat.complete(&prompt)?;
    let signs = parse_signs_reply(&raw).ok_or_else(|| IngestError::Extraction {
        mim: doc.mim_number.clone(),
        message: format!("no Signs list in reply: {raw:?}"),
    })?;
    Ok(ExtractedSigns {
        mim_number: doc.mim_number.clone(),
        signs,
    })
}

/// Extracts signs from many documents with a bounded worker pool. Output
/// order matches input order; one failed document does not stop the rest.
pub fn extract_signs_batch(
    docs: &[ClinicalDocument],
    chat: &dyn ChatBackend,
    concurrency: usize,
) -> Vec<Result<ExtractedSigns, IngestError>> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    let concurrency = concurrency.max(1).min(docs.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<ExtractedSigns, IngestError>>>> =
        docs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..concurrency {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= docs.len() {
                    break;
                }
                let outcome = extract_signs(&docs[i], chat);
                *slots[i].lock().expect("slot lock") = Some(outcome);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot lock").expect("slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedChat;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn doc(text: &str) -> ClinicalDocument {
        ClinicalDocument {
            mim_number: "123456".to_string(),
            title: "Test disease".to_string(),
            clinical_features_text: text.to_string(),
            fetched_unix: 0,
        }
    }

    #[test]
    fn starter_list_carries_the_published_examples() {
        let list = ExclusionList::starter();
        assert_eq!(list.len(), 9);
        assert!(list.contains("legs and arms"));
        assert!(list.contains("Jerky  Voice"));
        assert!(!list.contains("ataxia"));
    }

    #[test]
    fn apply_exclusions_partitions() {
        let list = ExclusionList::starter();
        let signs = vec![
            "ataxia".to_string(),
            "legs and arms".to_string(),
            "dysarthria".to_string(),
        ];
        let (kept, dropped) = apply_exclusions(&signs, &list);
        assert_eq!(kept, vec!["ataxia", "dysarthria"]);
        assert_eq!(dropped, vec!["legs and arms"]);
        // The partition covers the input.
        assert_eq!(kept.len() + dropped.len(), signs.len());

        let (kept, dropped) = apply_exclusions(&signs, &ExclusionList::empty());
        assert_eq!(kept, signs);
        assert!(dropped.is_empty());
    }

    #[test]
    fn extract_parses_mock_reply() {
        let chat = ScriptedChat::fixed(r#"{"Signs": ["ataxia", "dysarthria"]}"#);
        let extracted = extract_signs(&doc("Patients show ataxia."), &chat).unwrap();
        assert_eq!(extracted.signs, vec!["ataxia", "dysarthria"]);
    }

    #[test]
    fn extract_dedupes_case_folded() {
        let chat = ScriptedChat::fixed(r#"{"Signs": ["ataxia", "Ataxia ", "", "  "]}"#);
        let extracted = extract_signs(&doc("text"), &chat).unwrap();
        assert_eq!(extracted.signs, vec!["ataxia"]);
    }

    #[test]
    fn extract_tolerates_prose_and_key_order() {
        let chat = ScriptedChat::fixed(
            "Here you go:\n```json\n{\"notes\": \"n/a\", \"signs\": [\"tremor\"]}\n```",
        );
        let extracted = extract_signs(&doc("text"), &chat).unwrap();
        assert_eq!(extracted.signs, vec!["tremor"]);
    }

    #[test]
    fn extract_unparseable_reply_is_error() {
        let chat = ScriptedChat::fixed("I cannot help with that.");
        assert!(matches!(
            extract_signs(&doc("text"), &chat),
            Err(IngestError::Extraction { .. })
        ));
    }

    #[test]
    fn extract_batch_preserves_order_under_concurrency() {
        let chat = ScriptedChat::fixed(r#"{"Signs": ["ataxia"]}"#);
        let docs: Vec<ClinicalDocument> = (0..12)
            .map(|i| ClinicalDocument {
                mim_number: format!("{:06}", 100000 + i),
                title: String::new(),
                clinical_features_text: format!("doc {i}"),
                fetched_unix: 0,
            })
            .collect();
        let outcomes = extract_signs_batch(&docs, &chat, 4);
        assert_eq!(outcomes.len(), 12);
        for (doc, outcome) in docs.iter().zip(&outcomes) {
            assert_eq!(outcome.as_ref().unwrap().mim_number, doc.mim_number);
        }
    }

    struct CountingTransport {
        calls: AtomicUsize,
        reply: String,
    }

    impl OmimTransport for CountingTransport {
        fn transport_id(&self) -> String {
            "stub".to_string()
        }
        fn fetch_entry(&self, _mim: &str) -> Result<String, IngestError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.reply.clone())
        }
    }

    fn omim_reply(mim: &str, clinical: Option<&str>) -> String {
        let sections = match clinical {
            Some(text) => serde_json::json!([{
                "textSection": {
                    "textSectionName": "clinicalFeatures",
                    "textSectionContent": text,
                }
            }]),
            None => serde_json::json!([]),
        };
        serde_json::json!({
            "omim": { "entryList": [{ "entry": {
                "mimNumber": mim,
                "titles": { "preferredTitle": "Some disease" },
                "textSectionList": sections,
            }}]}
        })
        .to_string()
    }

    #[test]
    fn fetch_caches_and_skips_network_on_rerun() {
        let dir = tempfile::tempdir().unwrap();
        let transport = CountingTransport {
            calls: AtomicUsize::new(0),
            reply: omim_reply("123456", Some("Ataxia and tremor.")),
        };
        let mims = vec!["123456".to_string()];
        let first = fetch_clinical_features(&mims, &transport, dir.path()).unwrap();
        assert_eq!(transport.calls.load(Ordering::SeqCst), 1);
        assert!(matches!(first[0], FetchOutcome::Fetched(_)));

        let second = fetch_clinical_features(&mims, &transport, dir.path()).unwrap();
        assert_eq!(
            transport.calls.load(Ordering::SeqCst),
            1,
            "cache hit must not refetch"
        );
        assert_eq!(first, second);
    }

    #[test]
    fn fetch_unknown_mim_yields_skip_record() {
        let dir = tempfile::tempdir().unwrap();
        let transport = CountingTransport {
            calls: AtomicUsize::new(0),
            reply: serde_json::json!({"omim": {"entryList": []}}).to_string(),
        };
        let outcomes =
            fetch_clinical_features(&["654321".to_string()], &transport, dir.path()).unwrap();
        assert!(matches!(
            &outcomes[0],
            FetchOutcome::Skipped { reason, .. } if reason.contains("no entry")
        ));
    }

    #[test]
    fn fetch_missing_section_yields_skip_record() {
        let dir = tempfile::tempdir().unwrap();
        let transport = CountingTransport {
            calls: AtomicUsize::new(0),
            reply: omim_reply("222222", None),
        };
        let outcomes =
            fetch_clinical_features(&["222222".to_string()], &transport, dir.path()).unwrap();
        assert!(matches!(
            &outcomes[0],
            FetchOutcome::Skipped { reason, .. } if reason.contains("clinicalFeatures")
        ));
    }

    #[test]
    fn fetch_validates_mim_format() {
        let dir = tempfile::tempdir().unwrap();
        let transport = CountingTransport {
            calls: AtomicUsize::new(0),
            reply: String::new(),
        };
        for bad in ["12345", "1234567", "12a456", ""] {
            assert!(matches!(
                fetch_clinical_features(&[bad.to_string()], &transport, dir.path()),
                Err(IngestError::InvalidMim(_))
            ));
        }
        assert_eq!(transport.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn auth_errors_name_the_env_var() {
        let err = IngestError::from(HttpError::Auth {
            status: 401,
            body: "bad key".to_string(),
        });
        assert!(err.to_string().contains(OMIM_KEY_ENV));
    }
}
