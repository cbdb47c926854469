//! Command implementations. Diagnostics go to stderr, data to files or
//! stdout. Every output except the resumable results JSON-lines is written
//! to a temp file and renamed into place, so failures leave no partial
//! artifacts.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use ontonorm::embed::{
    embed_batch, load_embedding_file, save_embedding_file, EmbeddingMatrix, EmbeddingProvider,
    HttpEmbeddingProvider, ReplayProvider, Vector,
};
use ontonorm::eval::{
    export_review_sheet, import_review_sheet, judge_cosine, judge_llm, known_pairs,
    render_metrics_table, report_disagreements, run_k_sweep, score_lines, write_disagreements_csv,
    write_sweep_csv, ChatJudge, CosineJudge, EquivalenceConfig, GoldSet, JudgeBackend,
    MethodReport, ReviewRow, ScoreOptions, SurfaceEqualityJudge,
};
use ontonorm::ingest::{
    apply_exclusions, extract_signs_batch, fetch_clinical_features, ClinicalDocument,
    ExclusionList, FetchOutcome, HttpOmimTransport,
};
use ontonorm::llm::{CandidateRendering, ChatClient, LlmEndpoint, MockPolicy};
use ontonorm::ontology::{build_entry_table, parse_ontology_csv, EntryTable, ParseOptions};
use ontonorm::pipeline::{
    manifest_path, read_results, run_batch_to_file, LlmBackend, NormalizationMode, ResultLine,
    RunConfig, DEFAULT_K,
};
use ontonorm::retrieve::TermIndex;

use crate::args::*;
use crate::config::{env, Settings, EMBED_URL_ENV, LLM_TOKEN_ENV, OMIM_KEY_ENV};

/// A semantically invalid invocation: maps to exit code 2, like clap's own
/// parse errors.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "usage error: {}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(message.into()))
}

/// Write-to-temp, rename-on-success.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn load_table(index: &IndexSource) -> anyhow::Result<EntryTable> {
    match (&index.ontology, &index.table) {
        (Some(csv_path), None) => {
            let options = ParseOptions {
                synonym_delimiter: index.synonym_delimiter,
                include_obsolete: !index.skip_obsolete,
            };
            let file = std::fs::File::open(csv_path)
                .with_context(|| format!("opening {}", csv_path.display()))?;
            let parsed = parse_ontology_csv(file, &options)?;
            eprintln!(
                "parsed {} concepts ({} non-HP rows skipped, {} obsolete rows skipped)",
                parsed.concepts.len(),
                parsed.stats.skipped_non_hp,
                parsed.stats.skipped_obsolete
            );
            Ok(build_entry_table(&parsed.concepts)?)
        }
        (None, Some(tsv_path)) => Ok(EntryTable::read_tsv(tsv_path)?),
        (Some(_), Some(_)) => Err(usage("--ontology and --table are mutually exclusive")),
        (None, None) => Err(usage("one of --ontology or --table is required")),
    }
}

fn load_index(index: &IndexSource) -> anyhow::Result<TermIndex> {
    let table = load_table(index)?;
    let embeddings = index
        .embeddings
        .as_ref()
        .ok_or_else(|| usage("--embeddings is required to search"))?;
    let matrix = load_embedding_file(embeddings, &table)?;
    Ok(TermIndex::build(table, matrix)?)
}

fn resolve_provider(
    provider: &ProviderArgs,
    settings: &Settings,
) -> anyhow::Result<Arc<dyn EmbeddingProvider>> {
    if let Some(replay) = &provider.replay {
        return Ok(Arc::new(ReplayProvider::from_file(replay)?));
    }
    let url = settings.string(provider.embed_url.clone(), env(EMBED_URL_ENV), "embed_url");
    if let Some(url) = url {
        let model = settings
            .string(provider.embed_model.clone(), None, "embed_model")
            .unwrap_or_else(|| "biobert-base-cased-v1.1".to_string());
        return Ok(Arc::new(HttpEmbeddingProvider::new(
            url,
            model,
            env(LLM_TOKEN_ENV),
        )));
    }
    Err(usage(format!(
        "no embedding source: pass --replay, --embed-url, or set {EMBED_URL_ENV}"
    )))
}

fn resolve_endpoint(llm: &LlmArgs, settings: &Settings) -> anyhow::Result<LlmEndpoint> {
    let model = settings
        .string(llm.model.clone(), None, "model")
        .ok_or_else(|| usage("--model is required for a live endpoint"))?;
    let base_url = settings
        .string(llm.base_url.clone(), None, "base_url")
        .unwrap_or_else(|| "https://api.openai.com/v1".to_string());
    let mut endpoint = LlmEndpoint::new(base_url, model, env(LLM_TOKEN_ENV));
    if let Some(t) = llm.temperature {
        endpoint.temperature = t;
    }
    Ok(endpoint)
}

fn resolve_backend(llm: &LlmArgs, settings: &Settings) -> anyhow::Result<LlmBackend> {
    match llm.mock {
        Some(MockArg::FirstCandidate) => Ok(LlmBackend::Mock(MockPolicy::FirstCandidate)),
        Some(MockArg::HighestCosine) => Ok(LlmBackend::Mock(MockPolicy::HighestCosine)),
        Some(MockArg::ExactSurface) => {
            Ok(LlmBackend::Mock(MockPolicy::ExactSurfaceElseHighestCosine))
        }
        None => Ok(LlmBackend::http(resolve_endpoint(llm, settings)?)),
    }
}

pub fn build_index(args: BuildIndexArgs) -> anyhow::Result<()> {
    let settings = Settings::load(args.config.as_deref())?;
    let table = load_table(&args.index)?;
    write_atomic(&args.out, table.to_tsv()?.as_bytes())?;
    eprintln!(
        "wrote {} entries ({} concepts) to {}",
        table.len(),
        table.concept_count(),
        args.out.display()
    );

    if let Some(embeddings) = &args.index.embeddings {
        let matrix = load_embedding_file(embeddings, &table)?;
        eprintln!(
            "validated {} embedding rows (dim {}) against the table",
            matrix.len(),
            matrix.dim()
        );
    }

    if let Some(out_embeddings) = &args.out_embeddings {
        if args.batch_size == 0 {
            return Err(usage("--batch-size must be at least 1"));
        }
        let provider = resolve_provider(&args.provider, &settings)?;
        let surfaces: Vec<String> = table.entries().iter().map(|e| e.surface.clone()).collect();
        let mut rows: Vec<Vector> = Vec::with_capacity(surfaces.len());
        let mut provenance = String::new();
        for chunk in surfaces.chunks(args.batch_size) {
            let batch = embed_batch(provider.as_ref(), chunk)?;
            provenance = batch.provenance;
            rows.extend(batch.vectors);
        }
        let matrix = EmbeddingMatrix::from_rows(rows, provenance)?;
        // The embedding CSV is rebuilt in full on success; temp+rename keeps
        // interrupted runs from leaving a truncated file.
        let tmp = out_embeddings.with_extension("tmp");
        save_embedding_file(&tmp, &matrix, &table)?;
        std::fs::rename(&tmp, out_embeddings)?;
        eprintln!(
            "wrote {} embedding rows to {}",
            matrix.len(),
            out_embeddings.display()
        );
    }
    Ok(())
}

pub fn normalize(args: NormalizeArgs) -> anyhow::Result<()> {
    let settings = Settings::load(args.config.as_deref())?;
    let k = settings.integer(args.k.map(usize::from), "k", DEFAULT_K);
    let mode = match args.mode {
        ModeArg::Embed => NormalizationMode::EmbedOnly,
        ModeArg::Llm => NormalizationMode::LlmPlain,
        ModeArg::Rag => NormalizationMode::LlmRag { k },
    };
    let index = load_index(&args.index)?;
    let provider = resolve_provider(&args.provider, &settings)?;
    let mut config = RunConfig::new(mode, provider);
    if args.paper_faithful {
        config = config.paper_faithful();
    }
    config.dedupe_by_id = args.dedupe_by_id;
    config.clamp_to_candidates = args.clamp;
    if args.labels_only {
        config.rendering = CandidateRendering::SurfaceOnly;
    }
    config.concurrency = settings.integer(args.concurrency, "concurrency", 4);
    if !matches!(mode, NormalizationMode::EmbedOnly) {
        config = config.with_llm(resolve_backend(&args.llm, &settings)?);
    }

    let terms = ontonorm::pipeline::read_terms_file(&args.terms)?;
    if terms.is_empty() {
        return Err(usage(format!(
            "no terms in {} after dropping comments",
            args.terms.display()
        )));
    }
    let output = run_batch_to_file(&terms, &config, &index, &args.out)?;
    eprintln!(
        "normalized {} terms ({} ok, {} failed, {} resumed) -> {}",
        output.manifest.n_inputs,
        output.manifest.n_ok,
        output.manifest.n_failed,
        output.manifest.n_resumed,
        args.out.display()
    );
    eprintln!("manifest: {}", manifest_path(&args.out).display());
    Ok(())
}

struct EquivalenceParts {
    replay: Option<ReplayProvider>,
    chat: Option<ChatClient>,
    human: Option<HashMap<(String, String), bool>>,
    surface_equal: bool,
    threshold: f64,
}

impl EquivalenceParts {
    fn resolve(
        args: &EquivalenceArgs,
        llm: &LlmArgs,
        settings: &Settings,
        lines: &[ResultLine],
    ) -> anyhow::Result<Self> {
        let replay = args
            .judge_replay
            .as_ref()
            .map(|p| ReplayProvider::from_file(p))
            .transpose()?;
        let chat = if args.judge_llm {
            Some(ChatClient::new(resolve_endpoint(llm, settings)?))
        } else {
            None
        };
        let human = args
            .review
            .as_ref()
            .map(|path| -> anyhow::Result<_> {
                let file = std::fs::File::open(path)
                    .with_context(|| format!("opening {}", path.display()))?;
                Ok(import_review_sheet(file, &known_pairs(lines))?)
            })
            .transpose()?;
        if replay.is_none() && chat.is_none() && !args.judge_surface_equal && human.is_none() {
            return Err(usage(
                "no equivalence tier configured: pass --judge-replay, --judge-llm, \
                 --judge-surface-equal, or --review",
            ));
        }
        Ok(EquivalenceParts {
            replay,
            chat,
            human,
            surface_equal: args.judge_surface_equal,
            threshold: args.threshold,
        })
    }

    fn config<'a>(&'a self, chat_judge: &'a Option<ChatJudge<'a>>) -> EquivalenceConfig<'a> {
        EquivalenceConfig {
            cosine: self.replay.as_ref().map(|provider| CosineJudge {
                provider,
                threshold: self.threshold,
            }),
            llm: if let Some(judge) = chat_judge {
                Some(judge as &dyn JudgeBackend)
            } else if self.surface_equal {
                Some(&SurfaceEqualityJudge)
            } else {
                None
            },
            human: self.human.as_ref(),
        }
    }
}

pub fn evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let settings = Settings::load(args.config.as_deref())?;
    let lines = read_results(&args.results)?;
    let gold = GoldSet::load_csv(
        std::fs::File::open(&args.gold)
            .with_context(|| format!("opening {}", args.gold.display()))?,
    )?;
    let parts = EquivalenceParts::resolve(&args.equivalence, &args.llm, &settings, &lines)?;
    let chat_judge = parts.chat.as_ref().map(|c| ChatJudge::new(c));
    let equivalence = parts.config(&chat_judge);

    let scored = score_lines(
        &lines,
        &gold,
        &equivalence,
        ScoreOptions {
            malformed_as_tn: args.malformed_as_tn,
        },
    )?;
    let table = render_metrics_table(&[MethodReport {
        method: args.method.clone(),
        metrics: scored.metrics.clone(),
    }]);
    print!("{table}");
    if scored.n_excluded > 0 || scored.n_infra_failed > 0 {
        eprintln!(
            "excluded {} malformed terms; {} terms failed on infrastructure and were not scored",
            scored.n_excluded, scored.n_infra_failed
        );
    }
    if let Some(out) = &args.out {
        let json = serde_json::json!({
            "method": args.method,
            "counts": scored.counts,
            "metrics": scored.metrics,
            "n_excluded": scored.n_excluded,
            "n_infra_failed": scored.n_infra_failed,
        });
        write_atomic(out, serde_json::to_string_pretty(&json)?.as_bytes())?;
        eprintln!("report: {}", out.display());
    }
    Ok(())
}

pub fn sweep(args: SweepArgs) -> anyhow::Result<()> {
    let settings = Settings::load(args.config.as_deref())?;
    let index = load_index(&args.index)?;
    let provider = resolve_provider(&args.provider, &settings)?;
    let mut base = RunConfig::new(NormalizationMode::LlmRag { k: 1 }, provider)
        .with_llm(resolve_backend(&args.llm, &settings)?);
    if args.paper_faithful {
        base = base.paper_faithful();
    }
    base.concurrency = settings.integer(args.concurrency, "concurrency", 4);

    let terms = ontonorm::pipeline::read_terms_file(&args.terms)?;
    let gold = GoldSet::load_csv(std::fs::File::open(&args.gold)?)?;
    let parts = EquivalenceParts::resolve(&args.equivalence, &args.llm, &settings, &[])?;
    let chat_judge = parts.chat.as_ref().map(|c| ChatJudge::new(c));
    let equivalence = parts.config(&chat_judge);

    let points = run_k_sweep(
        &terms,
        &gold,
        &base,
        &index,
        &args.ks,
        &equivalence,
        ScoreOptions::default(),
    )?;
    let mut csv = Vec::new();
    write_sweep_csv(&points, &mut csv)?;
    write_atomic(&args.out, &csv)?;
    for point in &points {
        eprintln!("k={:<3} accuracy={:.4}", point.k, point.accuracy);
    }
    eprintln!("sweep data: {}", args.out.display());
    Ok(())
}

pub fn report(args: ReportArgs) -> anyhow::Result<()> {
    let rag = read_results(&args.rag)?;
    let embed = read_results(&args.embed)?;
    let gold = GoldSet::load_csv(std::fs::File::open(&args.gold)?)?;
    let rows = report_disagreements(&rag, &embed, &gold)?;
    let mut csv = Vec::new();
    write_disagreements_csv(&rows, &mut csv)?;
    write_atomic(&args.out, &csv)?;
    eprintln!("{} disagreement rows -> {}", rows.len(), args.out.display());
    Ok(())
}

pub fn judge_export(args: JudgeExportArgs) -> anyhow::Result<()> {
    let lines = read_results(&args.results)?;
    let replay = args
        .judge_replay
        .as_ref()
        .map(|p| ReplayProvider::from_file(p))
        .transpose()?;
    let mut rows = Vec::new();
    for line in &lines {
        let Some(result) = &line.result else { continue };
        let Some(surface) = &result.chosen_surface else {
            continue;
        };
        let cosine = match &replay {
            Some(provider) => {
                Some(judge_cosine(&result.input, surface, args.threshold, provider)?.0)
            }
            None => result.cosine_of_choice,
        };
        let llm_verdict = if args.judge_surface_equal {
            Some(judge_llm(&result.input, surface, &SurfaceEqualityJudge)?)
        } else {
            None
        };
        rows.push(ReviewRow {
            term: result.input.clone(),
            candidate: surface.clone(),
            cosine,
            llm_verdict,
            human_verdict: None,
        });
    }
    let mut csv = Vec::new();
    export_review_sheet(&rows, &mut csv)?;
    write_atomic(&args.out, &csv)?;
    eprintln!(
        "{} rows pending review -> {}",
        rows.len(),
        args.out.display()
    );
    Ok(())
}

pub fn judge_import(args: JudgeImportArgs) -> anyhow::Result<()> {
    let lines = read_results(&args.results)?;
    let file = std::fs::File::open(&args.sheet)
        .with_context(|| format!("opening {}", args.sheet.display()))?;
    let verdicts = import_review_sheet(file, &known_pairs(&lines))?;
    println!(
        "{} human verdicts attached ({} equivalent, {} not)",
        verdicts.len(),
        verdicts.values().filter(|v| **v).count(),
        verdicts.values().filter(|v| !**v).count(),
    );
    Ok(())
}

pub fn ingest_omim(args: IngestOmimArgs) -> anyhow::Result<()> {
    let mut mims: Vec<String> = args.mims.iter().map(|m| m.trim().to_string()).collect();
    if let Some(path) = &args.mims_file {
        let text = std::fs::read_to_string(path)?;
        mims.extend(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string),
        );
    }
    if mims.is_empty() {
        return Err(usage("no MIM numbers given: pass --mims or --mims-file"));
    }
    let api_key = env(OMIM_KEY_ENV)
        .ok_or_else(|| usage(format!("OMIM API key required: set {OMIM_KEY_ENV}")))?;
    let transport = HttpOmimTransport::new(args.base_url.clone(), api_key);
    let outcomes = fetch_clinical_features(&mims, &transport, &args.cache_dir)?;

    let mut out = String::new();
    let mut fetched = 0usize;
    for outcome in &outcomes {
        match outcome {
            FetchOutcome::Fetched(doc) => {
                out.push_str(&serde_json::to_string(doc)?);
                out.push('\n');
                fetched += 1;
            }
            FetchOutcome::Skipped { mim_number, reason } => {
                eprintln!("skipped {mim_number}: {reason}");
            }
        }
    }
    write_atomic(&args.out, out.as_bytes())?;
    eprintln!(
        "{fetched} documents written to {} ({} skipped)",
        args.out.display(),
        outcomes.len() - fetched
    );
    Ok(())
}

pub fn extract(args: ExtractArgs) -> anyhow::Result<()> {
    let settings = Settings::load(args.config.as_deref())?;
    if args.llm.mock.is_some() {
        return Err(usage(
            "extract needs a live chat endpoint; --mock applies to normalize",
        ));
    }
    let client = ChatClient::new(resolve_endpoint(&args.llm, &settings)?);
    let exclusions = match (&args.exclusions, args.starter_exclusions) {
        (Some(_), true) => {
            return Err(usage(
                "--exclusions and --starter-exclusions are mutually exclusive",
            ))
        }
        (Some(path), false) => ExclusionList::load(path)?,
        (None, true) => ExclusionList::starter(),
        (None, false) => ExclusionList::empty(),
    };

    let text = std::fs::read_to_string(&args.docs)
        .with_context(|| format!("reading {}", args.docs.display()))?;
    let mut docs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: ClinicalDocument = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", args.docs.display(), n + 1))?;
        docs.push(doc);
    }
    let concurrency = settings.integer(args.concurrency, "concurrency", 4);
    let outcomes = extract_signs_batch(&docs, &client, concurrency);
    let mut all_signs = Vec::new();
    let mut failures = 0usize;
    for (doc, outcome) in docs.iter().zip(outcomes) {
        match outcome {
            Ok(extracted) => {
                eprintln!("{}: {} signs", doc.mim_number, extracted.signs.len());
                all_signs.extend(extracted.signs);
            }
            Err(e) => {
                // One bad document must not sink the batch.
                eprintln!("extraction failed for {}: {e}", doc.mim_number);
                failures += 1;
            }
        }
    }
    let (kept, dropped) = apply_exclusions(&all_signs, &exclusions);
    let render = |terms: &[String]| {
        if terms.is_empty() {
            String::new()
        } else {
            terms.join("\n") + "\n"
        }
    };
    write_atomic(&args.out, render(&kept).as_bytes())?;
    if let Some(dropped_out) = &args.dropped_out {
        write_atomic(dropped_out, render(&dropped).as_bytes())?;
    }
    eprintln!(
        "kept {} terms, dropped {} as malformed, {} documents failed -> {}",
        kept.len(),
        dropped.len(),
        failures,
        args.out.display()
    );
    Ok(())
}
