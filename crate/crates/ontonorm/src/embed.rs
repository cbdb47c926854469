//! Embedding vectors aligned with the entry table, the provider contract for
//! producing them, and exact cosine similarity.
//!
//! Embedding computation is out of process: a provider is either a replay
//! file computed offline or an HTTP embedding service. Providers must embed a
//! term as the mean of its token embeddings, masking padding, with input
//! truncated at 128 tokens, and must be deterministic for a fixed
//! provider/model/string. Vectors are normalized once at ingest so retrieval
//! reduces to dot products; accumulation always happens in f64.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use crate::http::{self, HttpError, RetryCounter, RetryPolicy};
use crate::ontology::EntryTable;

/// Default dimension: the hidden size of the reference BioBERT base model.
/// The file format is self-describing, so any dimension is accepted.
pub const DEFAULT_DIM: usize = 768;

/// Stored vectors must satisfy `|norm - 1| <= NORM_TOLERANCE`.
pub const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector rejected{0}")]
    ZeroVector(String),
    #[error("non-finite component{0}")]
    NonFinite(String),
    #[error("embedding file row {row}: {message}")]
    FileRow { row: usize, message: String },
    #[error("embedding file: {0}")]
    FileFormat(String),
    #[error("embedding provider {provider}: {message}")]
    Provider { provider: String, message: String },
    #[error("embedding provider transport: {0}")]
    Transport(#[from] HttpError),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty term at position {0}")]
    EmptyTerm(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A dense vector with finite f32 components.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f32>);

impl Vector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbedError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite(format!(" at index {i}")));
        }
        Ok(Vector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    /// L2 norm, accumulated in f64.
    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|v| *v as f64 * *v as f64)
            .sum::<f64>()
            .sqrt()
    }

    /// Unit-normalizes the vector. Components already within
    /// [`NORM_TOLERANCE`] of unit norm are kept bit-for-bit, which makes
    /// load/serialize/load an identity on normalized data.
    pub fn normalized(&self) -> Result<Vector, EmbedError> {
        let norm = self.norm();
        if norm == 0.0 {
            return Err(EmbedError::ZeroVector(String::new()));
        }
        if (norm - 1.0).abs() <= NORM_TOLERANCE {
            return Ok(self.clone());
        }
        Ok(Vector(
            self.0.iter().map(|v| (*v as f64 / norm) as f32).collect(),
        ))
    }
}

fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| *x as f64 * *y as f64)
        .sum::<f64>()
}

/// Cosine similarity `dot(a,b) / (|a|*|b|)` in f64. For stored
/// (pre-normalized) vectors this equals the plain dot product within 1e-5.
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let norm_a = a.norm();
    let norm_b = b.norm();
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(EmbedError::ZeroVector(String::new()));
    }
    Ok(dot_f64(a.values(), b.values()) / (norm_a * norm_b))
}

/// Unit-normalized vectors aligned 1:1 with an entry table.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    dim: usize,
    rows: Vec<Vector>,
    provenance: String,
}

impl EmbeddingMatrix {
    /// Validates dimensions and normalizes every row.
    pub fn from_rows(rows: Vec<Vector>, provenance: impl Into<String>) -> Result<Self, EmbedError> {
        let dim = match rows.first() {
            Some(first) => first.dim(),
            None => return Err(EmbedError::FileFormat("no rows".to_string())),
        };
        let mut normalized = Vec::with_capacity(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            if row.dim() != dim {
                return Err(EmbedError::FileRow {
                    row: i + 1,
                    message: format!("dimension {} differs from {}", row.dim(), dim),
                });
            }
            let row = row.normalized().map_err(|e| EmbedError::FileRow {
                row: i + 1,
                message: e.to_string(),
            })?;
            normalized.push(row);
        }
        Ok(EmbeddingMatrix {
            dim,
            rows: normalized,
            provenance: provenance.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &Vector {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vector] {
        &self.rows
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }
}

/// Contract for out-of-process embedding computation. Implementations return
/// one raw vector per input string, in input order.
pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> String;
    fn embed(&self, terms: &[String]) -> Result<Vec<Vec<f32>>, EmbedError>;
}

pub struct EmbeddedBatch {
    pub vectors: Vec<Vector>,
    pub provenance: String,
}

/// Embeds a batch of terms: order preserved, every vector validated and
/// normalized, provenance recorded. Dimension drift across the batch is
/// fatal.
pub fn embed_batch(
    provider: &dyn EmbeddingProvider,
    terms: &[String],
) -> Result<EmbeddedBatch, EmbedError> {
    if terms.is_empty() {
        return Err(EmbedError::EmptyBatch);
    }
    if let Some(i) = terms.iter().position(|t| t.trim().is_empty()) {
        return Err(EmbedError::EmptyTerm(i));
    }
    let raw = provider.embed(terms)?;
    if raw.len() != terms.len() {
        return Err(EmbedError::Provider {
            provider: provider.provider_id(),
            message: format!("returned {} vectors for {} terms", raw.len(), terms.len()),
        });
    }
    let dim = raw[0].len();
    let mut vectors = Vec::with_capacity(raw.len());
    for (i, values) in raw.into_iter().enumerate() {
        if values.len() != dim {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                got: values.len(),
            });
        }
        let vector = Vector::new(values)
            .and_then(|v| v.normalized())
            .map_err(|e| EmbedError::Provider {
                provider: provider.provider_id(),
                message: format!("term {i} ({:?}): {e}", terms[i]),
            })?;
        vectors.push(vector);
    }
    Ok(EmbeddedBatch {
        vectors,
        provenance: provider.provider_id(),
    })
}

fn parse_header(header: &csv::StringRecord) -> Result<usize, EmbedError> {
    let fields: Vec<&str> = header.iter().collect();
    if fields.len() < 3 || fields[0] != "surface" || fields[1] != "id" {
        return Err(EmbedError::FileFormat(
            "header must be surface,id,v0,...".to_string(),
        ));
    }
    for (i, name) in fields[2..].iter().enumerate() {
        if *name != format!("v{i}") {
            return Err(EmbedError::FileFormat(format!(
                "expected column v{i}, found {name:?}"
            )));
        }
    }
    Ok(fields.len() - 2)
}

/// Loads an embedding CSV (`surface,id,v0,...,v{D-1}`) and verifies row-by-row
/// alignment against the entry table. Rows are normalized on load.
pub fn load_embedding_file(path: &Path, table: &EntryTable) -> Result<EmbeddingMatrix, EmbedError> {
    let file = std::fs::File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let dim = parse_header(
        &reader
            .headers()
            .map_err(|e| EmbedError::FileFormat(e.to_string()))?
            .clone(),
    )?;

    let mut rows = Vec::with_capacity(table.len());
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(|e| EmbedError::FileRow {
            row: row_no,
            message: e.to_string(),
        })?;
        if i >= table.len() {
            return Err(EmbedError::FileFormat(format!(
                "row count exceeds entry table length {}",
                table.len()
            )));
        }
        let entry = &table.entries()[i];
        let surface = record.get(0).unwrap_or("");
        let id = record.get(1).unwrap_or("");
        if surface != entry.surface || id != entry.id.as_str() {
            return Err(EmbedError::FileRow {
                row: row_no,
                message: format!(
                    "key ({surface:?}, {id:?}) does not match entry ({:?}, {:?})",
                    entry.surface,
                    entry.id.as_str()
                ),
            });
        }
        if record.len() != dim + 2 {
            return Err(EmbedError::FileRow {
                row: row_no,
                message: format!("expected {} value columns, got {}", dim, record.len() - 2),
            });
        }
        let mut values = Vec::with_capacity(dim);
        for field in record.iter().skip(2) {
            let value: f32 = field.trim().parse().map_err(|e| EmbedError::FileRow {
                row: row_no,
                message: format!("bad float {field:?}: {e}"),
            })?;
            values.push(value);
        }
        let vector = Vector::new(values)
            .and_then(|v| v.normalized())
            .map_err(|e| EmbedError::FileRow {
                row: row_no,
                message: e.to_string(),
            })?;
        if vector.dim() != dim {
            return Err(EmbedError::FileRow {
                row: row_no,
                message: format!("dimension {} differs from header {dim}", vector.dim()),
            });
        }
        rows.push(vector);
    }
    if rows.len() != table.len() {
        return Err(EmbedError::FileFormat(format!(
            "row count {} does not match entry table length {}",
            rows.len(),
            table.len()
        )));
    }
    let provenance = format!("file:{}", path.display());
    EmbeddingMatrix::from_rows(rows, provenance)
}

/// Writes the matrix in the embedding CSV format, aligned with the table.
pub fn save_embedding_file(
    path: &Path,
    matrix: &EmbeddingMatrix,
    table: &EntryTable,
) -> Result<(), EmbedError> {
    if matrix.len() != table.len() {
        return Err(EmbedError::FileFormat(format!(
            "matrix rows {} do not match entry table length {}",
            matrix.len(),
            table.len()
        )));
    }
    let file = std::fs::File::create(path)?;
    let mut writer = csv::Writer::from_writer(file);
    let mut header = vec!["surface".to_string(), "id".to_string()];
    header.extend((0..matrix.dim()).map(|i| format!("v{i}")));
    writer
        .write_record(&header)
        .map_err(|e| EmbedError::FileFormat(e.to_string()))?;
    for (entry, row) in table.entries().iter().zip(matrix.rows()) {
        let mut record = vec![entry.surface.clone(), entry.id.to_string()];
        record.extend(row.values().iter().map(|v| v.to_string()));
        writer
            .write_record(&record)
            .map_err(|e| EmbedError::FileFormat(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Provider backed by a lookup file in the embedding CSV format, keyed by
/// surface. The id column is not interpreted, so query terms can be stored
/// with a placeholder id.
pub struct ReplayProvider {
    map: HashMap<String, Vec<f32>>,
    id: String,
}

impl ReplayProvider {
    pub fn from_file(path: &Path) -> Result<Self, EmbedError> {
        let file = std::fs::File::open(path)?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(file);
        let dim = parse_header(
            &reader
                .headers()
                .map_err(|e| EmbedError::FileFormat(e.to_string()))?
                .clone(),
        )?;
        let mut map = HashMap::new();
        for (i, record) in reader.records().enumerate() {
            let row_no = i + 1;
            let record = record.map_err(|e| EmbedError::FileRow {
                row: row_no,
                message: e.to_string(),
            })?;
            let surface = record.get(0).unwrap_or("").to_string();
            let mut values = Vec::with_capacity(dim);
            for field in record.iter().skip(2) {
                let value: f32 = field.trim().parse().map_err(|e| EmbedError::FileRow {
                    row: row_no,
                    message: format!("bad float {field:?}: {e}"),
                })?;
                values.push(value);
            }
            if let Some(previous) = map.get(&surface) {
                if previous != &values {
                    return Err(EmbedError::FileRow {
                        row: row_no,
                        message: format!("surface {surface:?} repeats with a different vector"),
                    });
                }
            }
            map.insert(surface, values);
        }
        let id = format!("replay:{}", path.display());
        Ok(ReplayProvider { map, id })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl EmbeddingProvider for ReplayProvider {
    fn provider_id(&self) -> String {
        self.id.clone()
    }

    fn embed(&self, terms: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        terms
            .iter()
            .map(|term| {
                self.map
                    .get(term)
                    .cloned()
                    .ok_or_else(|| EmbedError::Provider {
                        provider: self.id.clone(),
                        message: format!("term {term:?} not present in replay file"),
                    })
            })
            .collect()
    }
}

/// HTTP embedding provider speaking the de-facto embeddings wire shape:
/// POST `{"model": ..., "input": [...]}`, reply
/// `{"data": [{"index": 0, "embedding": [...]}, ...]}`.
pub struct HttpEmbeddingProvider {
    agent: ureq::Agent,
    url: String,
    model: String,
    token: Option<String>,
    retry: RetryPolicy,
    counter: RetryCounter,
}

impl HttpEmbeddingProvider {
    pub fn new(url: impl Into<String>, model: impl Into<String>, token: Option<String>) -> Self {
        HttpEmbeddingProvider {
            agent: http::agent(Duration::from_secs(60)),
            url: url.into(),
            model: model.into(),
            token,
            retry: RetryPolicy::default(),
            counter: RetryCounter::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn retries(&self) -> u64 {
        self.counter.count()
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn provider_id(&self) -> String {
        format!("http:{}@{}", self.model, self.url)
    }

    fn embed(&self, terms: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let body = serde_json::json!({ "model": self.model, "input": terms });
        let reply = http::post_json_with_retry(
            &self.agent,
            &self.url,
            self.token.as_deref(),
            &body,
            &self.retry,
            Some(&self.counter),
        )?;
        let data = reply
            .get("data")
            .and_then(|d| d.as_array())
            .ok_or_else(|| EmbedError::Provider {
                provider: self.provider_id(),
                message: "reply has no data array".to_string(),
            })?;
        if data.len() != terms.len() {
            return Err(EmbedError::Provider {
                provider: self.provider_id(),
                message: format!("reply has {} items for {} terms", data.len(), terms.len()),
            });
        }
        let mut out: Vec<Option<Vec<f32>>> = vec![None; terms.len()];
        for item in data {
            let index =
                item.get("index")
                    .and_then(|i| i.as_u64())
                    .ok_or_else(|| EmbedError::Provider {
                        provider: self.provider_id(),
                        message: "data item missing index".to_string(),
                    })? as usize;
            let embedding = item
                .get("embedding")
                .and_then(|e| e.as_array())
                .ok_or_else(|| EmbedError::Provider {
                    provider: self.provider_id(),
                    message: format!("data item {index} missing embedding"),
                })?;
            let values: Vec<f32> = embedding
                .iter()
                .map(|v| v.as_f64().unwrap_or(f64::NAN) as f32)
                .collect();
            if index >= out.len() || out[index].is_some() {
                return Err(EmbedError::Provider {
                    provider: self.provider_id(),
                    message: format!("bad or duplicate index {index}"),
                });
            }
            out[index] = Some(values);
        }
        out.into_iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| EmbedError::Provider {
                    provider: self.provider_id(),
                    message: format!("missing vector for index {i}"),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::{build_entry_table, ConceptRecord, OntoId};

    fn vector(values: &[f32]) -> Vector {
        Vector::new(values.to_vec()).unwrap()
    }

    /// Independent scalar-loop oracle used to freeze expected cosine values.
    fn cosine_oracle(a: &[f32], b: &[f32]) -> f64 {
        let mut dot = 0.0f64;
        let mut na = 0.0f64;
        let mut nb = 0.0f64;
        for i in 0..a.len() {
            dot += a[i] as f64 * b[i] as f64;
            na += a[i] as f64 * a[i] as f64;
            nb += b[i] as f64 * b[i] as f64;
        }
        dot / (na.sqrt() * nb.sqrt())
    }

    #[test]
    fn cosine_self_similarity() {
        let a = vector(&[3.0, 4.0]);
        assert_eq!(cosine(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn cosine_orthogonal() {
        let a = vector(&[1.0, 0.0]);
        let b = vector(&[0.0, 1.0]);
        assert_eq!(cosine(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn cosine_hand_computed_value() {
        // 32 / (sqrt(14) * sqrt(77)) = 0.9746...
        let a = vector(&[1.0, 2.0, 3.0]);
        let b = vector(&[4.0, 5.0, 6.0]);
        let got = cosine(&a, &b).unwrap();
        assert!((got - 0.9746).abs() < 1e-4, "got {got}");
        assert!((got - cosine_oracle(a.values(), b.values())).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        let a = vector(&[1.0, 2.0]);
        let b = vector(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            cosine(&a, &b),
            Err(EmbedError::DimensionMismatch { .. })
        ));
        let zero = vector(&[0.0, 0.0]);
        assert!(matches!(cosine(&a, &zero), Err(EmbedError::ZeroVector(_))));
    }

    #[test]
    fn vector_rejects_non_finite() {
        assert!(matches!(
            Vector::new(vec![1.0, f32::NAN]),
            Err(EmbedError::NonFinite(_))
        ));
        assert!(Vector::new(vec![1.0, f32::INFINITY]).is_err());
    }

    #[test]
    fn normalized_is_stable_on_normalized_input() {
        let v = vector(&[0.6, 0.8]);
        let n = v.normalized().unwrap();
        assert_eq!(v.values(), n.values());
        let w = vector(&[3.0, 4.0]).normalized().unwrap();
        assert!((w.norm() - 1.0).abs() <= NORM_TOLERANCE);
    }

    fn tiny_table() -> EntryTable {
        let concepts = vec![
            ConceptRecord::new(
                OntoId::parse("HP:0000001").unwrap(),
                "Alpha",
                vec!["Alpha syn".to_string()],
            )
            .unwrap(),
            ConceptRecord::new(OntoId::parse("HP:0000002").unwrap(), "Beta", vec![]).unwrap(),
        ];
        build_entry_table(&concepts).unwrap()
    }

    #[test]
    fn load_validates_alignment_and_round_trips() {
        let table = tiny_table();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        std::fs::write(
            &path,
            "surface,id,v0,v1\nAlpha,HP:0000001,3,4\nAlpha syn,HP:0000001,1,0\nBeta,HP:0000002,0.6,0.8\n",
        )
        .unwrap();
        let matrix = load_embedding_file(&path, &table).unwrap();
        assert_eq!(matrix.len(), 3);
        for row in matrix.rows() {
            assert!((row.norm() - 1.0).abs() <= NORM_TOLERANCE);
        }

        let resaved = dir.path().join("resaved.csv");
        save_embedding_file(&resaved, &matrix, &table).unwrap();
        let reloaded = load_embedding_file(&resaved, &table).unwrap();
        for (a, b) in matrix.rows().iter().zip(reloaded.rows()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn load_rejects_nan_naming_row() {
        let table = tiny_table();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        std::fs::write(
            &path,
            "surface,id,v0,v1\nAlpha,HP:0000001,NaN,4\nAlpha syn,HP:0000001,1,0\nBeta,HP:0000002,0.6,0.8\n",
        )
        .unwrap();
        match load_embedding_file(&path, &table) {
            Err(EmbedError::FileRow { row: 1, .. }) => {}
            other => panic!("expected row 1 error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_key_mismatch_at_row() {
        let table = tiny_table();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        std::fs::write(
            &path,
            "surface,id,v0,v1\nAlpha,HP:0000001,3,4\nWrong,HP:0000001,1,0\nBeta,HP:0000002,0.6,0.8\n",
        )
        .unwrap();
        match load_embedding_file(&path, &table) {
            Err(EmbedError::FileRow { row: 2, .. }) => {}
            other => panic!("expected row 2 error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_row_count_mismatch() {
        let table = tiny_table();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        std::fs::write(&path, "surface,id,v0,v1\nAlpha,HP:0000001,3,4\n").unwrap();
        assert!(matches!(
            load_embedding_file(&path, &table),
            Err(EmbedError::FileFormat(_))
        ));
    }

    #[test]
    fn load_rejects_zero_vector() {
        let table = tiny_table();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        std::fs::write(
            &path,
            "surface,id,v0,v1\nAlpha,HP:0000001,0,0\nAlpha syn,HP:0000001,1,0\nBeta,HP:0000002,0.6,0.8\n",
        )
        .unwrap();
        assert!(matches!(
            load_embedding_file(&path, &table),
            Err(EmbedError::FileRow { row: 1, .. })
        ));
    }

    #[test]
    fn replay_provider_serves_stored_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.csv");
        std::fs::write(&path, "surface,id,v0,v1\nhyporeflexia,HP:0000000,0.6,0.8\n").unwrap();
        let provider = ReplayProvider::from_file(&path).unwrap();
        let batch = embed_batch(&provider, &["hyporeflexia".to_string()]).unwrap();
        assert_eq!(batch.vectors[0].values(), &[0.6, 0.8]);
        assert!(batch.provenance.starts_with("replay:"));

        // Determinism: duplicate inputs yield identical vectors.
        let duplicated = embed_batch(
            &provider,
            &["hyporeflexia".to_string(), "hyporeflexia".to_string()],
        )
        .unwrap();
        assert_eq!(
            duplicated.vectors[0].values(),
            duplicated.vectors[1].values()
        );

        assert!(embed_batch(&provider, &["unknown".to_string()]).is_err());
        assert!(matches!(
            embed_batch(&provider, &[]),
            Err(EmbedError::EmptyBatch)
        ));
        assert!(matches!(
            embed_batch(&provider, &["  ".to_string()]),
            Err(EmbedError::EmptyTerm(0))
        ));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_pair() -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
            (2usize..=24).prop_flat_map(|dim| {
                let one = proptest::collection::vec(-8.0f32..8.0, dim)
                    .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3));
                (one.clone(), one)
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]

            #[test]
            fn self_similarity_is_one((a, _) in arb_pair()) {
                let a = vector(&a);
                let got = cosine(&a, &a).unwrap();
                prop_assert!((got - 1.0).abs() <= 1e-5, "got {got}");
            }

            #[test]
            fn symmetry_is_exact((a, b) in arb_pair()) {
                let a = vector(&a);
                let b = vector(&b);
                prop_assert_eq!(cosine(&a, &b).unwrap(), cosine(&b, &a).unwrap());
            }

            #[test]
            fn scale_invariance((a, b) in arb_pair(), lambda in 0.01f32..100.0) {
                let scaled: Vec<f32> = a.iter().map(|x| x * lambda).collect();
                let a = vector(&a);
                let b = vector(&b);
                let scaled = vector(&scaled);
                let base = cosine(&a, &b).unwrap();
                let got = cosine(&scaled, &b).unwrap();
                prop_assert!((got - base).abs() <= 1e-5, "{got} vs {base}");
            }

            #[test]
            fn scores_stay_in_range((a, b) in arb_pair()) {
                let a = vector(&a);
                let b = vector(&b);
                let got = cosine(&a, &b).unwrap();
                prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&got));
            }
        }
    }

    struct DriftingProvider;

    impl EmbeddingProvider for DriftingProvider {
        fn provider_id(&self) -> String {
            "drift".to_string()
        }
        fn embed(&self, _terms: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
            Ok(vec![vec![1.0, 0.0], vec![1.0, 0.0, 0.0]])
        }
    }

    #[test]
    fn dimension_drift_is_fatal() {
        let terms = vec!["a".to_string(), "b".to_string()];
        assert!(matches!(
            embed_batch(&DriftingProvider, &terms),
            Err(EmbedError::DimensionMismatch { .. })
        ));
    }
}
