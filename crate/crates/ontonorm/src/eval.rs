//! Scores normalization runs against a gold standard.
//!
//! A chosen term counts as a true positive only when it is semantically
//! equivalent to the input term AND carries the correct ontology id. A model
//! that returned nothing is a false negative; malformed gold terms are
//! excluded from every denominator and true negatives are fixed at zero.
//! Semantic equivalence is assessed by up to three tiers - cosine threshold,
//! LLM judge, human review - with the highest tier present giving the final
//! verdict.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::embed::{cosine, embed_batch, EmbedError, EmbeddingProvider};
use crate::llm::{ChatBackend, LlmError};
use crate::ontology::{OntoId, OntologyError};
use crate::pipeline::{
    run_batch, NormalizationMode, NormalizationResult, PipelineError, ResultFlag, ResultLine,
    RunConfig, MAX_K, MIN_K,
};
use crate::retrieve::TermIndex;
use crate::text::fold_key;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("gold csv row {row}: {message}")]
    GoldRow { row: usize, message: String },
    #[error("result term {result:?} does not match gold term {gold:?}")]
    TermMismatch { result: String, gold: String },
    #[error("no gold record for term {0:?}")]
    MissingGold(String),
    #[error("no equivalence tier configured")]
    NoTier,
    #[error("cosine threshold must be in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("judge returned an unparseable verdict: {0:?}")]
    UnparseableVerdict(String),
    #[error("review sheet row {row}: {message}")]
    SheetRow { row: usize, message: String },
    #[error("review sheet contains unknown pairs: {0}")]
    UnknownPairs(String),
    #[error("k values must be distinct, ascending and within {MIN_K}..={MAX_K}")]
    BadSweep,
    #[error("term sets differ: {0}")]
    MismatchedTermSets(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Expected normalization for one input term. Malformed records carry no
/// gold id and never enter scoring denominators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub term: String,
    pub gold_id: Option<OntoId>,
    pub gold_surface: String,
    pub malformed: bool,
}

/// Gold records keyed by exact term string. Duplicate terms must agree.
#[derive(Debug, Clone)]
pub struct GoldSet {
    records: Vec<GoldRecord>,
    by_term: HashMap<String, usize>,
}

impl GoldSet {
    pub fn new(records: Vec<GoldRecord>) -> Result<Self, EvalError> {
        let mut by_term = HashMap::new();
        for (i, record) in records.iter().enumerate() {
            if !record.malformed && record.gold_id.is_none() {
                return Err(EvalError::GoldRow {
                    row: i + 1,
                    message: format!("term {:?} has no gold id and is not malformed", record.term),
                });
            }
            if let Some(&previous) = by_term.get(&record.term) {
                if records[previous] != *record {
                    return Err(EvalError::GoldRow {
                        row: i + 1,
                        message: format!(
                            "term {:?} repeats with conflicting gold data",
                            record.term
                        ),
                    });
                }
                continue;
            }
            by_term.insert(record.term.clone(), i);
        }
        Ok(GoldSet { records, by_term })
    }

    /// Loads the gold CSV: `term,gold_id,gold_surface,malformed` with
    /// malformed in {0,1}; gold_id may be blank only on malformed rows.
    pub fn load_csv(input: impl Read) -> Result<Self, EvalError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(input);
        let mut records = Vec::new();
        for (n, record) in reader.records().enumerate() {
            let row = n + 2;
            let record = record.map_err(|e| EvalError::GoldRow {
                row,
                message: e.to_string(),
            })?;
            let field = |i: usize| record.get(i).unwrap_or("").trim().to_string();
            let malformed = match field(3).as_str() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(EvalError::GoldRow {
                        row,
                        message: format!("malformed column must be 0 or 1, got {other:?}"),
                    })
                }
            };
            let raw_id = field(1);
            let gold_id = if raw_id.is_empty() {
                None
            } else {
                Some(OntoId::parse(&raw_id).map_err(|e| EvalError::GoldRow {
                    row,
                    message: e.to_string(),
                })?)
            };
            records.push(GoldRecord {
                term: field(0),
                gold_id,
                gold_surface: field(2),
                malformed,
            });
        }
        GoldSet::new(records)
    }

    pub fn get(&self, term: &str) -> Option<&GoldRecord> {
        self.by_term.get(term).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[GoldRecord] {
        &self.records
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    CosineOnly,
    LlmJudge,
    Human,
}

/// The per-pair equivalence assessment. `final_verdict` is the highest tier
/// present: Human > LlmJudge > CosineOnly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceVerdict {
    pub cosine_score: Option<f64>,
    pub cosine_verdict: Option<bool>,
    pub llm_verdict: Option<bool>,
    pub human_verdict: Option<bool>,
    pub final_verdict: bool,
    pub tier_used: Tier,
}

impl EquivalenceVerdict {
    pub fn from_parts(
        cosine: Option<(f64, bool)>,
        llm: Option<bool>,
        human: Option<bool>,
    ) -> Result<Self, EvalError> {
        let (tier_used, final_verdict) = if let Some(h) = human {
            (Tier::Human, h)
        } else if let Some(l) = llm {
            (Tier::LlmJudge, l)
        } else if let Some((_, c)) = cosine {
            (Tier::CosineOnly, c)
        } else {
            return Err(EvalError::NoTier);
        };
        Ok(EquivalenceVerdict {
            cosine_score: cosine.map(|(s, _)| s),
            cosine_verdict: cosine.map(|(_, v)| v),
            llm_verdict: llm,
            human_verdict: human,
            final_verdict,
            tier_used,
        })
    }

    /// Placeholder for results that produced nothing to judge.
    pub fn negative() -> Self {
        EquivalenceVerdict {
            cosine_score: None,
            cosine_verdict: None,
            llm_verdict: None,
            human_verdict: None,
            final_verdict: false,
            tier_used: Tier::CosineOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    FalseNegative,
    Excluded,
}

/// Applies the confusion rules to one result. Total and deterministic:
/// malformed gold is excluded, no output is a false negative, a final
/// equivalence verdict plus the correct id is a true positive, everything
/// else is a false positive.
pub fn classify(
    result: &NormalizationResult,
    gold: &GoldRecord,
    verdict: &EquivalenceVerdict,
) -> Result<Outcome, EvalError> {
    if result.input != gold.term {
        return Err(EvalError::TermMismatch {
            result: result.input.clone(),
            gold: gold.term.clone(),
        });
    }
    if gold.malformed {
        return Ok(Outcome::Excluded);
    }
    if result.flags.contains(&ResultFlag::NoOutput) {
        return Ok(Outcome::FalseNegative);
    }
    if verdict.final_verdict && result.chosen_id.is_some() && result.chosen_id == gold.gold_id {
        return Ok(Outcome::TruePositive);
    }
    Ok(Outcome::FalsePositive)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub n_scored: u64,
}

impl ConfusionCounts {
    pub fn from_parts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionCounts {
            tp,
            fp,
            fn_,
            tn,
            n_scored: tp + fp + fn_,
        }
    }

    pub fn record(&mut self, outcome: Outcome, malformed_as_tn: bool) {
        match outcome {
            Outcome::TruePositive => self.tp += 1,
            Outcome::FalsePositive => self.fp += 1,
            Outcome::FalseNegative => self.fn_ += 1,
            Outcome::Excluded => {
                // Sensitivity-analysis escape hatch; off in faithful scoring.
                if malformed_as_tn {
                    self.tn += 1;
                }
                return;
            }
        }
        self.n_scored += 1;
    }
}

/// One metric carrying both the full-precision value and its two-decimal
/// report form; `undefined` marks 0/0 cases, which report as 0.0 instead of
/// erroring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: f64,
    pub rounded: f64,
    pub undefined: bool,
}

impl MetricValue {
    fn ratio(numerator: f64, denominator: f64) -> Self {
        if denominator == 0.0 {
            MetricValue {
                value: 0.0,
                rounded: 0.0,
                undefined: true,
            }
        } else {
            let value = numerator / denominator;
            MetricValue {
                value,
                rounded: round2(value),
                undefined: false,
            }
        }
    }
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub accuracy: MetricValue,
    pub precision: MetricValue,
    pub recall: MetricValue,
    pub f1: MetricValue,
}

/// The four standard formulas:
/// accuracy = (TP+TN)/(TP+TN+FP+FN), precision = TP/(TP+FP),
/// recall = TP/(TP+FN), F1 = 2PR/(P+R).
pub fn compute_metrics(counts: &ConfusionCounts) -> MetricsReport {
    let (tp, fp, fn_, tn) = (
        counts.tp as f64,
        counts.fp as f64,
        counts.fn_ as f64,
        counts.tn as f64,
    );
    let accuracy = MetricValue::ratio(tp + tn, tp + tn + fp + fn_);
    let precision = MetricValue::ratio(tp, tp + fp);
    let recall = MetricValue::ratio(tp, tp + fn_);
    let f1 = MetricValue::ratio(
        2.0 * precision.value * recall.value,
        precision.value + recall.value,
    );
    MetricsReport {
        counts: *counts,
        accuracy,
        precision,
        recall,
        f1,
    }
}

/// Cosine equivalence: embeds both strings and compares against a threshold
/// in (0, 1].
pub fn judge_cosine(
    term: &str,
    candidate_surface: &str,
    threshold: f64,
    provider: &dyn EmbeddingProvider,
) -> Result<(f64, bool), EvalError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(EvalError::BadThreshold(threshold));
    }
    let batch = embed_batch(provider, &[term.to_string(), candidate_surface.to_string()])?;
    let score = cosine(&batch.vectors[0], &batch.vectors[1])?;
    Ok((score, score >= threshold))
}

/// A binary semantic-equivalence judge. Implementations return raw text that
/// [`judge_llm`] parses; unparseable verdicts surface as errors rather than
/// silently counting as "not equivalent".
pub trait JudgeBackend: Send + Sync {
    fn judge_id(&self) -> String;
    fn judge_raw(&self, term: &str, candidate_surface: &str) -> Result<String, EvalError>;
}

// Written for this harness; the judge prompt wording is not pinned by any
// golden file.
const JUDGE_PROMPT: &str = "You are comparing two phenotype terms.\n\
Term A: {a}\n\
Term B: {b}\n\
Are they semantically equivalent? Answer with a single word: yes or no.\n";

/// Judge backed by any chat endpoint.
pub struct ChatJudge<'a> {
    backend: &'a dyn ChatBackend,
}

impl<'a> ChatJudge<'a> {
    pub fn new(backend: &'a dyn ChatBackend) -> Self {
        ChatJudge { backend }
    }
}

impl JudgeBackend for ChatJudge<'_> {
    fn judge_id(&self) -> String {
        format!("judge:{}", self.backend.backend_id())
    }

    fn judge_raw(&self, term: &str, candidate_surface: &str) -> Result<String, EvalError> {
        let prompt = JUDGE_PROMPT
            .replacen("{a}", term, 1)
            .replacen("{b}", candidate_surface, 1);
        Ok(self.backend.complete(&prompt)?)
    }
}

/// Table-driven judge double, keyed by folded (term, candidate) pairs.
pub struct MockJudge {
    table: HashMap<(String, String), String>,
    default_reply: Option<String>,
}

impl MockJudge {
    pub fn new(default_reply: Option<&str>) -> Self {
        MockJudge {
            table: HashMap::new(),
            default_reply: default_reply.map(str::to_string),
        }
    }

    pub fn insert(&mut self, term: &str, candidate: &str, reply: &str) {
        self.table
            .insert((fold_key(term), fold_key(candidate)), reply.to_string());
    }
}

impl JudgeBackend for MockJudge {
    fn judge_id(&self) -> String {
        "judge:mock-table".to_string()
    }

    fn judge_raw(&self, term: &str, candidate_surface: &str) -> Result<String, EvalError> {
        let key = (fold_key(term), fold_key(candidate_surface));
        self.table
            .get(&key)
            .cloned()
            .or_else(|| self.default_reply.clone())
            .ok_or_else(|| EvalError::UnparseableVerdict(format!("no scripted reply for {key:?}")))
    }
}

/// Judge double answering "yes" exactly when the folded surfaces are equal.
pub struct SurfaceEqualityJudge;

impl JudgeBackend for SurfaceEqualityJudge {
    fn judge_id(&self) -> String {
        "judge:surface-equality".to_string()
    }

    fn judge_raw(&self, term: &str, candidate_surface: &str) -> Result<String, EvalError> {
        Ok(if fold_key(term) == fold_key(candidate_surface) {
            "yes".to_string()
        } else {
            "no".to_string()
        })
    }
}

/// Asks the judge and parses its reply into a boolean.
pub fn judge_llm(
    term: &str,
    candidate_surface: &str,
    backend: &dyn JudgeBackend,
) -> Result<bool, EvalError> {
    let raw = backend.judge_raw(term, candidate_surface)?;
    let word: String = raw
        .trim()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" | "equivalent" | "true" => Ok(true),
        "no" | "different" | "false" => Ok(false),
        _ => Err(EvalError::UnparseableVerdict(raw)),
    }
}

pub struct CosineJudge<'a> {
    pub provider: &'a dyn EmbeddingProvider,
    pub threshold: f64,
}

/// Default cosine-equivalence threshold; accepted matches in the reference
/// data cluster at 0.91-0.96.
pub const DEFAULT_COSINE_THRESHOLD: f64 = 0.90;

/// The configured equivalence tiers. At least one must be present.
#[derive(Default)]
pub struct EquivalenceConfig<'a> {
    pub cosine: Option<CosineJudge<'a>>,
    pub llm: Option<&'a dyn JudgeBackend>,
    /// Imported human verdicts keyed by folded (term, candidate).
    pub human: Option<&'a HashMap<(String, String), bool>>,
}

impl EquivalenceConfig<'_> {
    /// Runs every configured tier for one (term, candidate) pair.
    pub fn assess(
        &self,
        term: &str,
        candidate_surface: &str,
    ) -> Result<EquivalenceVerdict, EvalError> {
        let cosine = match &self.cosine {
            Some(judge) => Some(judge_cosine(
                term,
                candidate_surface,
                judge.threshold,
                judge.provider,
            )?),
            None => None,
        };
        let llm = match self.llm {
            Some(backend) => Some(judge_llm(term, candidate_surface, backend)?),
            None => None,
        };
        let human = self
            .human
            .and_then(|map| map.get(&(fold_key(term), fold_key(candidate_surface))))
            .copied();
        EquivalenceVerdict::from_parts(cosine, llm, human)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ScoreOptions {
    /// Count excluded malformed terms as true negatives (sensitivity
    /// analysis only).
    pub malformed_as_tn: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoredRun {
    pub counts: ConfusionCounts,
    pub metrics: MetricsReport,
    pub n_excluded: u64,
    /// Per-term infrastructure failures, skipped from scoring entirely.
    pub n_infra_failed: u64,
    pub outcomes: Vec<(String, Outcome)>,
}

/// Scores a results file against the gold standard. Infrastructure failures
/// are reported separately, never as false negatives.
pub fn score_lines(
    lines: &[ResultLine],
    gold: &GoldSet,
    equivalence: &EquivalenceConfig,
    options: ScoreOptions,
) -> Result<ScoredRun, EvalError> {
    let mut counts = ConfusionCounts::default();
    let mut outcomes = Vec::new();
    let mut n_excluded = 0u64;
    let mut n_infra_failed = 0u64;
    for line in lines {
        let Some(result) = &line.result else {
            n_infra_failed += 1;
            continue;
        };
        let record = gold
            .get(&result.input)
            .ok_or_else(|| EvalError::MissingGold(result.input.clone()))?;
        let verdict = match (&result.chosen_surface, record.malformed) {
            (Some(surface), false) => equivalence.assess(&result.input, surface)?,
            _ => EquivalenceVerdict::negative(),
        };
        let outcome = classify(result, record, &verdict)?;
        if outcome == Outcome::Excluded {
            n_excluded += 1;
        }
        counts.record(outcome, options.malformed_as_tn);
        outcomes.push((result.input.clone(), outcome));
    }
    let metrics = compute_metrics(&counts);
    Ok(ScoredRun {
        counts,
        metrics,
        n_excluded,
        n_infra_failed,
        outcomes,
    })
}

/// One row of the pending-review export.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewRow {
    pub term: String,
    pub candidate: String,
    pub cosine: Option<f64>,
    pub llm_verdict: Option<bool>,
    pub human_verdict: Option<bool>,
}

/// Writes the review sheet CSV with a blank human_verdict column for experts
/// to fill in.
pub fn export_review_sheet(rows: &[ReviewRow], output: impl Write) -> Result<(), EvalError> {
    let mut writer = csv::Writer::from_writer(output);
    writer
        .write_record([
            "term",
            "candidate",
            "cosine",
            "llm_verdict",
            "human_verdict",
        ])
        .map_err(|e| EvalError::SheetRow {
            row: 1,
            message: e.to_string(),
        })?;
    for (n, row) in rows.iter().enumerate() {
        let record = [
            row.term.clone(),
            row.candidate.clone(),
            row.cosine.map(|c| c.to_string()).unwrap_or_default(),
            row.llm_verdict.map(|v| v.to_string()).unwrap_or_default(),
            row.human_verdict.map(render_verdict).unwrap_or_default(),
        ];
        writer
            .write_record(&record)
            .map_err(|e| EvalError::SheetRow {
                row: n + 2,
                message: e.to_string(),
            })?;
    }
    writer.flush()?;
    Ok(())
}

fn render_verdict(v: bool) -> String {
    if v { "yes" } else { "no" }.to_string()
}

fn parse_verdict(s: &str) -> Result<Option<bool>, String> {
    match s.trim().to_lowercase().as_str() {
        "" => Ok(None),
        "yes" | "y" | "true" | "1" => Ok(Some(true)),
        "no" | "n" | "false" | "0" => Ok(Some(false)),
        other => Err(format!("unreadable verdict {other:?}")),
    }
}

/// Reads back a filled review sheet. Rows left blank stay unjudged; pairs not
/// in `known_pairs` are an error listing the offenders.
pub fn import_review_sheet(
    input: impl Read,
    known_pairs: &HashSet<(String, String)>,
) -> Result<HashMap<(String, String), bool>, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let mut verdicts = HashMap::new();
    let mut unknown = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let row = n + 2;
        let record = record.map_err(|e| EvalError::SheetRow {
            row,
            message: e.to_string(),
        })?;
        let term = record.get(0).unwrap_or("").to_string();
        let candidate = record.get(1).unwrap_or("").to_string();
        let key = (fold_key(&term), fold_key(&candidate));
        if !known_pairs.contains(&key) {
            unknown.push(format!("({term:?}, {candidate:?})"));
            continue;
        }
        let verdict = parse_verdict(record.get(4).unwrap_or(""))
            .map_err(|message| EvalError::SheetRow { row, message })?;
        if let Some(verdict) = verdict {
            verdicts.insert(key, verdict);
        }
    }
    if !unknown.is_empty() {
        return Err(EvalError::UnknownPairs(unknown.join(", ")));
    }
    Ok(verdicts)
}

/// Folded pair keys for every judged (term, chosen surface) in a run.
pub fn known_pairs(lines: &[ResultLine]) -> HashSet<(String, String)> {
    lines
        .iter()
        .filter_map(|l| l.result.as_ref())
        .filter_map(|r| {
            r.chosen_surface
                .as_ref()
                .map(|s| (fold_key(&r.input), fold_key(s)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub k: usize,
    pub accuracy: f64,
    pub counts: ConfusionCounts,
}

/// Runs one full retrieval-augmented batch plus scoring per k and returns the
/// accuracy curve. `ks` must be distinct, ascending and within the candidate
/// cap.
pub fn run_k_sweep(
    terms: &[String],
    gold: &GoldSet,
    base: &RunConfig,
    index: &TermIndex,
    ks: &[usize],
    equivalence: &EquivalenceConfig,
    options: ScoreOptions,
) -> Result<Vec<SweepPoint>, EvalError> {
    if ks.is_empty()
        || ks.windows(2).any(|w| w[0] >= w[1])
        || ks.iter().any(|&k| !(MIN_K..=MAX_K).contains(&k))
    {
        return Err(EvalError::BadSweep);
    }
    let mut points = Vec::with_capacity(ks.len());
    for &k in ks {
        let config = RunConfig {
            mode: NormalizationMode::LlmRag { k },
            embedder: base.embedder.clone(),
            llm: base.llm.as_ref().map(|l| match l {
                crate::pipeline::LlmBackend::Mock(policy) => {
                    crate::pipeline::LlmBackend::Mock(policy.clone())
                }
                crate::pipeline::LlmBackend::Http(client) => {
                    crate::pipeline::LlmBackend::http(client.endpoint().clone())
                }
            }),
            concurrency: base.concurrency,
            exact_match_fast_path: base.exact_match_fast_path,
            dedupe_by_id: base.dedupe_by_id,
            clamp_to_candidates: base.clamp_to_candidates,
            rendering: base.rendering,
        };
        let output = run_batch(terms, &config, index)?;
        let scored = score_lines(&output.lines, gold, equivalence, options)?;
        points.push(SweepPoint {
            k,
            accuracy: scored.metrics.accuracy.value,
            counts: scored.counts,
        });
    }
    Ok(points)
}

/// Plot-ready sweep data: `k,accuracy,tp,fp,fn`.
pub fn write_sweep_csv(points: &[SweepPoint], mut output: impl Write) -> Result<(), EvalError> {
    writeln!(output, "k,accuracy,tp,fp,fn")?;
    for p in points {
        writeln!(
            output,
            "{},{},{},{},{}",
            p.k, p.accuracy, p.counts.tp, p.counts.fp, p.counts.fn_
        )?;
    }
    Ok(())
}

/// A case where the augmented model overrode the cosine argmax.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisagreementRow {
    pub term: String,
    pub embed_surface: String,
    pub embed_cosine: Option<f64>,
    pub rag_surface: String,
    pub rag_cosine: Option<f64>,
    /// CS(argmax) - CS(chosen), when both cosines are known.
    pub delta: Option<f64>,
}

/// Rows where the retrieval-augmented choice differs from the cosine-argmax
/// choice. Both runs must cover the same terms; rows where either run made
/// no choice are skipped.
pub fn report_disagreements(
    rag_lines: &[ResultLine],
    embed_lines: &[ResultLine],
    gold: &GoldSet,
) -> Result<Vec<DisagreementRow>, EvalError> {
    let collect = |lines: &[ResultLine]| -> HashMap<String, NormalizationResult> {
        lines
            .iter()
            .filter_map(|l| l.result.as_ref())
            .map(|r| (r.input.clone(), r.clone()))
            .collect()
    };
    let rag = collect(rag_lines);
    let embed = collect(embed_lines);
    let rag_terms: HashSet<&String> = rag.keys().collect();
    let embed_terms: HashSet<&String> = embed.keys().collect();
    if rag_terms != embed_terms {
        let diff: Vec<String> = rag_terms
            .symmetric_difference(&embed_terms)
            .take(5)
            .map(|t| format!("{t:?}"))
            .collect();
        return Err(EvalError::MismatchedTermSets(diff.join(", ")));
    }
    for term in &rag_terms {
        if gold.get(term).is_none() {
            return Err(EvalError::MissingGold((*term).clone()));
        }
    }

    let mut terms: Vec<&String> = rag_terms.into_iter().collect();
    terms.sort();
    let mut rows = Vec::new();
    for term in terms {
        let r = &rag[term];
        let e = &embed[term];
        let (Some(rag_surface), Some(embed_surface)) = (&r.chosen_surface, &e.chosen_surface)
        else {
            continue;
        };
        let same_choice =
            r.chosen_id == e.chosen_id && fold_key(rag_surface) == fold_key(embed_surface);
        if same_choice {
            continue;
        }
        let delta = match (e.cosine_of_choice, r.cosine_of_choice) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        };
        rows.push(DisagreementRow {
            term: term.clone(),
            embed_surface: embed_surface.clone(),
            embed_cosine: e.cosine_of_choice,
            rag_surface: rag_surface.clone(),
            rag_cosine: r.cosine_of_choice,
            delta,
        });
    }
    Ok(rows)
}

pub fn write_disagreements_csv(
    rows: &[DisagreementRow],
    mut output: impl Write,
) -> Result<(), EvalError> {
    writeln!(
        output,
        "term,embed_surface,embed_cosine,rag_surface,rag_cosine,delta"
    )?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    for row in rows {
        writeln!(
            output,
            "{},{},{},{},{},{}",
            csv_field(&row.term),
            csv_field(&row.embed_surface),
            fmt(row.embed_cosine),
            csv_field(&row.rag_surface),
            fmt(row.rag_cosine),
            fmt(row.delta),
        )?;
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodReport {
    pub method: String,
    pub metrics: MetricsReport,
}

/// Renders the human-readable metrics table:
/// Method | Accuracy | F1 | Recall | Precision | N.
pub fn render_metrics_table(rows: &[MethodReport]) -> String {
    let mut out = String::new();
    let header = format!(
        "{:<44} {:>8} {:>6} {:>6} {:>9} {:>7}\n",
        "Method", "Accuracy", "F1", "Recall", "Precision", "N"
    );
    out.push_str(&header);
    out.push_str(&"-".repeat(header.len() - 1));
    out.push('\n');
    for row in rows {
        let m = &row.metrics;
        out.push_str(&format!(
            "{:<44} {:>8.2} {:>6.2} {:>6.2} {:>9.2} {:>7}\n",
            row.method,
            m.accuracy.rounded,
            m.f1.rounded,
            m.recall.rounded,
            m.precision.rounded,
            m.counts.n_scored,
        ));
    }
    out
}
