//! Exact top-k cosine retrieval over the entry table, with an exact-string
//! fast path and a brute-force oracle for testing.
//!
//! Both retrieval routes compute the same score, `dot(q,r) / (|q|*|r|)`
//! accumulated in f64 with in-order folds, so their outputs can be compared
//! candidate-for-candidate including tie order. Ties are broken by
//! (score desc, surface asc, id asc); the ordering has to be pinned because
//! a bare argmax leaves tie behavior unspecified and evaluation must be
//! reproducible.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddingMatrix, Vector};
use crate::ontology::{EntryTable, EntryTerm, OntoId, TermKind};
use crate::text::fold_key;

#[derive(Debug, thiserror::Error)]
pub enum RetrieveError {
    #[error("entry table is empty; nothing to search")]
    EmptyTable,
    #[error("matrix has {rows} rows but entry table has {entries} entries")]
    Alignment { rows: usize, entries: usize },
    #[error("query dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("query vector has zero norm")]
    ZeroQuery,
}

/// One retrieved entry term with its cosine score and 1-based rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub surface: String,
    pub id: OntoId,
    pub score: f64,
    pub rank: usize,
}

/// Immutable search index: entry table, aligned embedding matrix, cached row
/// norms and a case-folded surface lookup. Queries are pure functions.
pub struct TermIndex {
    table: EntryTable,
    matrix: EmbeddingMatrix,
    row_norms: Vec<f64>,
    surface_lookup: HashMap<String, Vec<usize>>,
}

impl TermIndex {
    pub fn build(table: EntryTable, matrix: EmbeddingMatrix) -> Result<Self, RetrieveError> {
        if table.is_empty() {
            return Err(RetrieveError::EmptyTable);
        }
        if matrix.len() != table.len() {
            return Err(RetrieveError::Alignment {
                rows: matrix.len(),
                entries: table.len(),
            });
        }
        let row_norms = matrix.rows().iter().map(norm_inorder).collect();
        let mut surface_lookup: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, entry) in table.entries().iter().enumerate() {
            surface_lookup
                .entry(fold_key(&entry.surface))
                .or_default()
                .push(i);
        }
        Ok(TermIndex {
            table,
            matrix,
            row_norms,
            surface_lookup,
        })
    }

    pub fn table(&self) -> &EntryTable {
        &self.table
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty tables
    }

    #[cfg(test)]
    fn surface_indices(&self, folded: &str) -> Option<&[usize]> {
        self.surface_lookup.get(folded).map(|v| v.as_slice())
    }

    /// The k entries with the largest cosine to the query, sorted by
    /// (score desc, surface asc, id asc). `k >= len` returns all entries
    /// fully sorted. With `dedupe_by_id` only the best-ranked entry per
    /// concept survives; off by default to match the flat search space.
    pub fn top_k(
        &self,
        query: &Vector,
        k: usize,
        dedupe_by_id: bool,
    ) -> Result<Vec<Candidate>, RetrieveError> {
        if k == 0 {
            return Err(RetrieveError::InvalidK);
        }
        if query.dim() != self.matrix.dim() {
            return Err(RetrieveError::DimensionMismatch {
                expected: self.matrix.dim(),
                got: query.dim(),
            });
        }
        let query_norm = norm_inorder(query);
        if query_norm == 0.0 {
            return Err(RetrieveError::ZeroQuery);
        }
        let entries = self.table.entries();
        let scores: Vec<f64> = self
            .matrix
            .rows()
            .iter()
            .zip(&self.row_norms)
            .map(|(row, row_norm)| dot_inorder(query, row) / (query_norm * row_norm))
            .collect();
        let mut order: Vec<usize> = (0..entries.len()).collect();
        let by_rank = |&a: &usize, &b: &usize| {
            candidate_order(scores[a], &entries[a], scores[b], &entries[b])
        };
        // Deduping may need to look past the first k entries, so it sorts
        // everything; the plain path selects first and sorts only the prefix.
        if dedupe_by_id || k >= order.len() {
            order.sort_unstable_by(by_rank);
        } else {
            order.select_nth_unstable_by(k - 1, by_rank);
            order.truncate(k);
            order.sort_unstable_by(by_rank);
        }

        let mut out = Vec::with_capacity(k.min(order.len()));
        let mut seen = std::collections::HashSet::new();
        for i in order {
            if dedupe_by_id && !seen.insert(entries[i].id.clone()) {
                continue;
            }
            out.push(Candidate {
                surface: entries[i].surface.clone(),
                id: entries[i].id.clone(),
                score: scores[i],
                rank: out.len() + 1,
            });
            if out.len() == k {
                break;
            }
        }
        Ok(out)
    }

    /// Exact-string lookup on the case-folded, whitespace-collapsed surface.
    /// When several entries collide, prefers a primary label, then the lowest
    /// id. Returns score 1.0 at rank 1.
    pub fn exact_match(&self, raw_term: &str) -> Option<Candidate> {
        let key = fold_key(raw_term);
        let indices = self.surface_lookup.get(&key)?;
        let entries = self.table.entries();
        let best = indices.iter().copied().min_by(|&a, &b| {
            let kind_rank = |e: &EntryTerm| match e.kind {
                TermKind::PrimaryLabel => 0u8,
                TermKind::Synonym => 1,
            };
            kind_rank(&entries[a])
                .cmp(&kind_rank(&entries[b]))
                .then_with(|| entries[a].id.cmp(&entries[b].id))
                .then_with(|| a.cmp(&b))
        })?;
        Some(Candidate {
            surface: entries[best].surface.clone(),
            id: entries[best].id.clone(),
            score: 1.0,
            rank: 1,
        })
    }
}

/// Shared tie rule: score desc, surface asc, id asc. Scores are finite by
/// construction.
fn candidate_order(
    score_a: f64,
    entry_a: &EntryTerm,
    score_b: f64,
    entry_b: &EntryTerm,
) -> std::cmp::Ordering {
    score_b
        .partial_cmp(&score_a)
        .expect("finite scores")
        .then_with(|| entry_a.surface.cmp(&entry_b.surface))
        .then_with(|| entry_a.id.cmp(&entry_b.id))
}

fn dot_inorder(a: &Vector, b: &Vector) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| *x as f64 * *y as f64)
        .sum::<f64>()
}

fn norm_inorder(v: &Vector) -> f64 {
    v.values()
        .iter()
        .map(|x| *x as f64 * *x as f64)
        .sum::<f64>()
        .sqrt()
}

/// Test oracle: computes every cosine with an explicit scalar loop, sorts the
/// whole table, truncates. Kept separate from [`TermIndex::top_k`] so the two
/// routes can be compared against each other.
#[allow(clippy::needless_range_loop)] // explicit index loops keep the oracle route independent
pub fn brute_force_top_k(
    table: &EntryTable,
    matrix: &EmbeddingMatrix,
    query: &Vector,
    k: usize,
) -> Result<Vec<Candidate>, RetrieveError> {
    if k == 0 {
        return Err(RetrieveError::InvalidK);
    }
    if table.is_empty() {
        return Err(RetrieveError::EmptyTable);
    }
    if matrix.len() != table.len() {
        return Err(RetrieveError::Alignment {
            rows: matrix.len(),
            entries: table.len(),
        });
    }
    if query.dim() != matrix.dim() {
        return Err(RetrieveError::DimensionMismatch {
            expected: matrix.dim(),
            got: query.dim(),
        });
    }
    let q = query.values();
    let mut qn = 0.0f64;
    for i in 0..q.len() {
        qn += q[i] as f64 * q[i] as f64;
    }
    let qn = qn.sqrt();
    if qn == 0.0 {
        return Err(RetrieveError::ZeroQuery);
    }

    let entries = table.entries();
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(entries.len());
    for (i, row) in matrix.rows().iter().enumerate() {
        let r = row.values();
        let mut dot = 0.0f64;
        let mut rn = 0.0f64;
        for j in 0..r.len() {
            dot += q[j] as f64 * r[j] as f64;
            rn += r[j] as f64 * r[j] as f64;
        }
        let score = dot / (qn * rn.sqrt());
        scored.push((score, i));
    }
    scored.sort_by(|(score_a, a), (score_b, b)| {
        score_b
            .partial_cmp(score_a)
            .expect("finite scores")
            .then_with(|| entries[*a].surface.cmp(&entries[*b].surface))
            .then_with(|| entries[*a].id.cmp(&entries[*b].id))
    });
    scored.truncate(k.min(entries.len()));
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(rank, (score, i))| Candidate {
            surface: entries[i].surface.clone(),
            id: entries[i].id.clone(),
            score,
            rank: rank + 1,
        })
        .collect())
}
