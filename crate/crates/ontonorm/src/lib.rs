//! Normalization of free-text phenotype terms to Human Phenotype Ontology
//! concepts.
//!
//! Three modes are supported: cosine-similarity argmax over term embeddings,
//! a plain LLM prompt, and an LLM prompt augmented with the top-k retrieved
//! candidates. An evaluation harness scores runs against a gold standard
//! with three semantic-equivalence tiers and emits metric tables, candidate
//! sweeps and disagreement reports.
//!
//! Embedding inference stays out of process: entry-term vectors are loaded
//! from a CSV aligned with the entry table, and query vectors come from a
//! replay file or an HTTP embedding service.

pub mod embed;
pub mod eval;
pub mod http;
pub mod ingest;
pub mod llm;
pub mod ontology;
pub mod pipeline;
pub mod retrieve;
pub mod text;

pub use embed::{cosine, EmbeddingMatrix, EmbeddingProvider, ReplayProvider, Vector};
pub use ontology::{build_entry_table, parse_ontology_csv, EntryTable, OntoId};
pub use pipeline::{run_batch, NormalizationMode, NormalizationResult, RunConfig};
pub use retrieve::{brute_force_top_k, Candidate, TermIndex};
