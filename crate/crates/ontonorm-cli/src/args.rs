//! Command-line surface. Secrets are accepted only through the environment
//! (`ONTONORM_LLM_TOKEN`, `ONTONORM_OMIM_KEY`), never as flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "ontonorm",
    version,
    about = "Normalize free-text phenotype terms to Human Phenotype Ontology concepts",
    long_about = "Normalize free-text phenotype terms to Human Phenotype Ontology concepts \
                  by exact cosine retrieval over term embeddings, optionally letting a chat \
                  model pick among the top-k candidates, and evaluate runs against a gold \
                  standard.\n\nEnvironment: ONTONORM_LLM_TOKEN (chat auth), ONTONORM_OMIM_KEY \
                  (OMIM API), ONTONORM_EMBED_URL (default embedding endpoint)."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fetch OMIM clinical-feature sections into a local cache
    IngestOmim(IngestOmimArgs),
    /// Extract sign/symptom terms from fetched documents with a chat model
    Extract(ExtractArgs),
    /// Parse an ontology CSV and write the canonical entry-term table
    BuildIndex(BuildIndexArgs),
    /// Normalize a file of terms (embed | llm | rag)
    Normalize(NormalizeArgs),
    /// Score a results file against a gold standard
    Evaluate(EvaluateArgs),
    /// Run the candidate-count sweep over several k values
    Sweep(SweepArgs),
    /// Table the cases where the rag choice differs from the embed choice
    Report(ReportArgs),
    /// Export a review sheet with pending equivalence judgments
    JudgeExport(JudgeExportArgs),
    /// Validate a filled review sheet against a results file
    JudgeImport(JudgeImportArgs),
}

/// Where the searchable entry table comes from.
#[derive(Args, Debug)]
pub struct IndexSource {
    /// BioPortal ontology CSV (Class ID, Preferred Label, Synonyms)
    #[arg(long, value_name = "CSV")]
    pub ontology: Option<PathBuf>,
    /// Canonical entry-table TSV written by build-index
    #[arg(long, value_name = "TSV")]
    pub table: Option<PathBuf>,
    /// Entry-term embedding CSV aligned row-by-row with the table
    #[arg(long, value_name = "CSV")]
    pub embeddings: Option<PathBuf>,
    /// Separator between synonyms in the ontology CSV
    #[arg(long, default_value = "|", value_name = "CHAR")]
    pub synonym_delimiter: char,
    /// Drop concepts whose preferred label is marked obsolete
    #[arg(long)]
    pub skip_obsolete: bool,
}

/// Where query-term vectors come from.
#[derive(Args, Debug)]
pub struct ProviderArgs {
    /// Replay CSV with precomputed vectors keyed by surface
    #[arg(long, value_name = "CSV")]
    pub replay: Option<PathBuf>,
    /// HTTP embedding endpoint URL (env ONTONORM_EMBED_URL)
    #[arg(long, value_name = "URL")]
    pub embed_url: Option<String>,
    /// Model name sent to the embedding endpoint
    #[arg(long, value_name = "NAME")]
    pub embed_model: Option<String>,
}

#[derive(Args, Debug)]
pub struct LlmArgs {
    /// Chat model name
    #[arg(long, value_name = "NAME")]
    pub model: Option<String>,
    /// Chat endpoint base URL including /v1 (token via ONTONORM_LLM_TOKEN)
    #[arg(long, value_name = "URL")]
    pub base_url: Option<String>,
    /// Sampling temperature
    #[arg(long, value_name = "T")]
    pub temperature: Option<f64>,
    /// Offline deterministic stand-in instead of a live endpoint
    #[arg(long, value_enum, value_name = "POLICY")]
    pub mock: Option<MockArg>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum MockArg {
    /// Always pick the rank-1 candidate
    FirstCandidate,
    /// Pick the candidate with the highest cosine
    HighestCosine,
    /// Pick an exact surface match when pooled, else the highest cosine
    ExactSurface,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    /// Cosine argmax over the entry table
    Embed,
    /// Plain chat prompt without retrieval
    Llm,
    /// Chat prompt augmented with the top-k candidates
    Rag,
}

#[derive(Args, Debug)]
pub struct IngestOmimArgs {
    /// Comma-separated six-digit MIM numbers
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub mims: Vec<String>,
    /// File with one MIM number per line
    #[arg(long, value_name = "FILE")]
    pub mims_file: Option<PathBuf>,
    /// Cache directory, one JSON file per MIM number
    #[arg(long, value_name = "DIR")]
    pub cache_dir: PathBuf,
    /// OMIM API base URL
    #[arg(long, default_value = "https://api.omim.org", value_name = "URL")]
    pub base_url: String,
    /// Output JSON-lines file of fetched documents
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Documents JSON-lines file written by ingest-omim
    #[arg(long, value_name = "FILE")]
    pub docs: PathBuf,
    #[command(flatten)]
    pub llm: LlmArgs,
    /// Exclusion list file, one malformed term per line
    #[arg(long, value_name = "FILE")]
    pub exclusions: Option<PathBuf>,
    /// Use the built-in starter exclusion list
    #[arg(long)]
    pub starter_exclusions: bool,
    /// Output terms file, one kept term per line
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Also write the dropped terms here
    #[arg(long, value_name = "FILE")]
    pub dropped_out: Option<PathBuf>,
    /// Documents extracted in parallel
    #[arg(long, value_name = "N")]
    pub concurrency: Option<usize>,
    /// Config file with default values (TOML key/value)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BuildIndexArgs {
    #[command(flatten)]
    pub index: IndexSource,
    /// Output path for the canonical entry-table TSV
    #[arg(long, value_name = "TSV")]
    pub out: PathBuf,
    /// Compute entry-term embeddings over HTTP and write them here
    #[arg(long, value_name = "CSV")]
    pub out_embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub provider: ProviderArgs,
    /// Entry terms embedded per HTTP request
    #[arg(long, default_value_t = 64, value_name = "N")]
    pub batch_size: usize,
    /// Config file with default values (TOML key/value)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct NormalizeArgs {
    /// Input terms file: one term per line, # comments ignored
    #[arg(long, value_name = "FILE")]
    pub terms: PathBuf,
    /// Normalization mode
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Candidate-list size for rag mode
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=50), value_name = "1..50")]
    pub k: Option<u8>,
    #[command(flatten)]
    pub index: IndexSource,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
    /// Bounded worker-pool size
    #[arg(long, value_name = "N")]
    pub concurrency: Option<usize>,
    /// Results JSON-lines output (append-only; reruns resume)
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Reproduce the reference behavior: no exact-match fast path
    #[arg(long)]
    pub paper_faithful: bool,
    /// Keep only the best-ranked entry per concept in candidate lists
    #[arg(long)]
    pub dedupe_by_id: bool,
    /// Map off-list replies onto the closest pooled candidate
    #[arg(long)]
    pub clamp: bool,
    /// Render candidates without ids in the rag prompt
    #[arg(long)]
    pub labels_only: bool,
    /// Config file with default values (TOML key/value)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EquivalenceArgs {
    /// Replay CSV for the cosine tier (must cover terms and chosen surfaces)
    #[arg(long, value_name = "CSV")]
    pub judge_replay: Option<PathBuf>,
    /// Cosine-equivalence threshold
    #[arg(long, default_value_t = 0.90, value_name = "T")]
    pub threshold: f64,
    /// LLM-judge tier against the configured chat endpoint
    #[arg(long)]
    pub judge_llm: bool,
    /// Deterministic judge: equivalent iff folded surfaces are equal
    #[arg(long)]
    pub judge_surface_equal: bool,
    /// Filled review sheet supplying the human tier
    #[arg(long, value_name = "CSV")]
    pub review: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Results JSON-lines file from normalize
    #[arg(long, value_name = "FILE")]
    pub results: PathBuf,
    /// Gold CSV: term,gold_id,gold_surface,malformed
    #[arg(long, value_name = "CSV")]
    pub gold: PathBuf,
    #[command(flatten)]
    pub equivalence: EquivalenceArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
    /// Count excluded malformed terms as true negatives
    #[arg(long)]
    pub malformed_as_tn: bool,
    /// Row label in the metrics table
    #[arg(long, default_value = "run", value_name = "NAME")]
    pub method: String,
    /// Machine-readable report JSON output
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Config file with default values (TOML key/value)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Input terms file
    #[arg(long, value_name = "FILE")]
    pub terms: PathBuf,
    /// Gold CSV: term,gold_id,gold_surface,malformed
    #[arg(long, value_name = "CSV")]
    pub gold: PathBuf,
    /// Ascending candidate counts, e.g. 1,5,10,20,50
    #[arg(long, value_name = "LIST", value_delimiter = ',', required = true)]
    pub ks: Vec<usize>,
    #[command(flatten)]
    pub index: IndexSource,
    #[command(flatten)]
    pub provider: ProviderArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[command(flatten)]
    pub equivalence: EquivalenceArgs,
    /// Bounded worker-pool size
    #[arg(long, value_name = "N")]
    pub concurrency: Option<usize>,
    /// Sweep CSV output: k,accuracy,tp,fp,fn
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Reproduce the reference behavior: no exact-match fast path
    #[arg(long)]
    pub paper_faithful: bool,
    /// Config file with default values (TOML key/value)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Results of the retrieval-augmented run
    #[arg(long, value_name = "FILE")]
    pub rag: PathBuf,
    /// Results of the embed-only run over the same terms
    #[arg(long, value_name = "FILE")]
    pub embed: PathBuf,
    /// Gold CSV covering the same terms
    #[arg(long, value_name = "CSV")]
    pub gold: PathBuf,
    /// Disagreement table CSV output
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct JudgeExportArgs {
    /// Results JSON-lines file from normalize
    #[arg(long, value_name = "FILE")]
    pub results: PathBuf,
    /// Replay CSV to fill the cosine column
    #[arg(long, value_name = "CSV")]
    pub judge_replay: Option<PathBuf>,
    /// Cosine-equivalence threshold
    #[arg(long, default_value_t = 0.90, value_name = "T")]
    pub threshold: f64,
    /// Fill the llm_verdict column with the surface-equality judge
    #[arg(long)]
    pub judge_surface_equal: bool,
    /// Review sheet CSV output with a blank human_verdict column
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct JudgeImportArgs {
    /// Filled review sheet
    #[arg(long, value_name = "CSV")]
    pub sheet: PathBuf,
    /// Results file the sheet was exported from
    #[arg(long, value_name = "FILE")]
    pub results: PathBuf,
}
