//! Ontology concepts and the flat entry-term table.
//!
//! Parses the BioPortal CSV distribution of the Human Phenotype Ontology,
//! expands synonyms into a flat table of searchable entry terms, and
//! validates `HP:nnnnnnn` identifiers. The entry table is the join key for
//! embedding files: embeddings are stored one row per entry, in table order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::text::fold_key;

#[derive(Debug, thiserror::Error)]
pub enum OntologyError {
    #[error("invalid ontology id {raw:?}: {reason}")]
    InvalidId { raw: String, reason: String },
    #[error("csv error at row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("missing required column {0:?}")]
    MissingColumn(&'static str),
    #[error("duplicate ontology id {id} at row {row}")]
    DuplicateId { id: OntoId, row: usize },
    #[error("concept list is empty")]
    NoConcepts,
    #[error("empty label for concept {0}")]
    EmptyLabel(String),
    #[error("entry table line {line}: {message}")]
    Tsv { line: usize, message: String },
    #[error("surface {0:?} contains a tab or newline and cannot be serialized")]
    UnserializableSurface(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Canonical ontology identifier: `HP:` followed by exactly seven digits.
///
/// Accepts the underscore form, lowercase prefixes and full IRIs whose
/// trailing path segment carries the identifier; always stores the canonical
/// colon form. Two ids are equal iff their canonical strings are equal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct OntoId(String);

impl OntoId {
    pub fn parse(raw: &str) -> Result<Self, OntologyError> {
        let invalid = |reason: &str| OntologyError::InvalidId {
            raw: raw.to_string(),
            reason: reason.to_string(),
        };
        let trimmed = raw.trim();
        // IRI forms keep the identifier in the trailing path segment.
        let segment = trimmed.rsplit(['/', '#']).next().unwrap_or(trimmed).trim();
        let (prefix, payload) = segment
            .split_once([':', '_'])
            .ok_or_else(|| invalid("expected a prefix separated by ':' or '_'"))?;
        if !prefix.trim().eq_ignore_ascii_case("HP") {
            return Err(invalid(&format!("unknown prefix {:?}", prefix.trim())));
        }
        let payload = payload.trim();
        if payload.len() != 7 {
            return Err(invalid(&format!(
                "expected 7 digits, got {}",
                payload.len()
            )));
        }
        if !payload.bytes().all(|b| b.is_ascii_digit()) {
            return Err(invalid("payload contains non-digit characters"));
        }
        Ok(OntoId(format!("HP:{payload}")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for OntoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for OntoId {
    type Err = OntologyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OntoId::parse(s)
    }
}

impl TryFrom<String> for OntoId {
    type Error = OntologyError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        OntoId::parse(&s)
    }
}

impl From<OntoId> for String {
    fn from(id: OntoId) -> String {
        id.0
    }
}

/// One ontology concept: preferred label plus its synonyms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptRecord {
    pub id: OntoId,
    pub label: String,
    pub synonyms: Vec<String>,
}

impl ConceptRecord {
    /// Trims the label and synonyms, drops empty and duplicate synonyms
    /// (case-sensitive comparison, first occurrence wins) and synonyms equal
    /// to the label.
    pub fn new(
        id: OntoId,
        label: &str,
        synonyms: impl IntoIterator<Item = String>,
    ) -> Result<Self, OntologyError> {
        let label = label.trim().to_string();
        if label.is_empty() {
            return Err(OntologyError::EmptyLabel(id.to_string()));
        }
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for syn in synonyms {
            let syn = syn.trim().to_string();
            if syn.is_empty() || syn == label {
                continue;
            }
            if seen.insert(syn.clone()) {
                out.push(syn);
            }
        }
        Ok(ConceptRecord {
            id,
            label,
            synonyms: out,
        })
    }
}

/// Whether an entry term is a concept's preferred label or one of its
/// synonyms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    PrimaryLabel,
    Synonym,
}

impl TermKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TermKind::PrimaryLabel => "label",
            TermKind::Synonym => "synonym",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "label" => Some(TermKind::PrimaryLabel),
            "synonym" => Some(TermKind::Synonym),
            _ => None,
        }
    }
}

/// One searchable surface string bound to an ontology id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryTerm {
    pub surface: String,
    pub id: OntoId,
    pub kind: TermKind,
}

/// The flat entry-term table: concepts in file order, each label followed by
/// its synonyms in file order. Immutable once built; safe to share across
/// threads.
#[derive(Debug, Clone)]
pub struct EntryTable {
    entries: Vec<EntryTerm>,
    by_id: BTreeMap<OntoId, ConceptRecord>,
}

impl EntryTable {
    pub fn entries(&self) -> &[EntryTerm] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn concept(&self, id: &OntoId) -> Option<&ConceptRecord> {
        self.by_id.get(id)
    }

    pub fn concept_count(&self) -> usize {
        self.by_id.len()
    }

    /// Canonical tab-separated serialization: `surface<TAB>id<TAB>kind`, one
    /// row per entry, table order, trailing newline. Deterministic, so equal
    /// tables serialize to identical bytes.
    pub fn to_tsv(&self) -> Result<String, OntologyError> {
        let mut out = String::new();
        for entry in &self.entries {
            if entry.surface.contains(['\t', '\n', '\r']) {
                return Err(OntologyError::UnserializableSurface(entry.surface.clone()));
            }
            out.push_str(&entry.surface);
            out.push('\t');
            out.push_str(entry.id.as_str());
            out.push('\t');
            out.push_str(entry.kind.as_str());
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_tsv(&self, path: &Path) -> Result<(), OntologyError> {
        std::fs::write(path, self.to_tsv()?)?;
        Ok(())
    }

    /// Reads back the canonical TSV form. Each `label` row opens a concept;
    /// `synonym` rows attach to the concept opened last, so a round trip
    /// through `to_tsv` reconstructs the same table.
    pub fn from_tsv(text: &str) -> Result<Self, OntologyError> {
        let mut concepts: Vec<ConceptRecord> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let err = |message: &str| OntologyError::Tsv {
                line: line_no,
                message: message.to_string(),
            };
            let mut fields = line.split('\t');
            let (surface, id, kind) = match (fields.next(), fields.next(), fields.next()) {
                (Some(s), Some(i), Some(k)) if fields.next().is_none() => (s, i, k),
                _ => return Err(err("expected exactly 3 tab-separated fields")),
            };
            let id = OntoId::parse(id)?;
            let kind = TermKind::parse(kind).ok_or_else(|| err("unknown kind"))?;
            match kind {
                TermKind::PrimaryLabel => {
                    concepts.push(ConceptRecord::new(id, surface, std::iter::empty())?);
                }
                TermKind::Synonym => {
                    let current = concepts
                        .last_mut()
                        .ok_or_else(|| err("synonym row before any label row"))?;
                    if current.id != id {
                        return Err(err("synonym id does not match the preceding label"));
                    }
                    current.synonyms.push(surface.to_string());
                }
            }
        }
        build_entry_table(&concepts)
    }

    pub fn read_tsv(path: &Path) -> Result<Self, OntologyError> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }
}

/// Builds the flat entry table. Entry count equals labels plus deduplicated
/// synonyms; every entry id is checked to resolve through the concept lookup.
pub fn build_entry_table(concepts: &[ConceptRecord]) -> Result<EntryTable, OntologyError> {
    if concepts.is_empty() {
        return Err(OntologyError::NoConcepts);
    }
    let mut by_id = BTreeMap::new();
    let mut entries = Vec::new();
    for (n, concept) in concepts.iter().enumerate() {
        // Re-validate: callers may hand-build records.
        let concept = ConceptRecord::new(
            concept.id.clone(),
            &concept.label,
            concept.synonyms.iter().cloned(),
        )?;
        if by_id.contains_key(&concept.id) {
            return Err(OntologyError::DuplicateId {
                id: concept.id.clone(),
                row: n + 1,
            });
        }
        entries.push(EntryTerm {
            surface: concept.label.clone(),
            id: concept.id.clone(),
            kind: TermKind::PrimaryLabel,
        });
        for syn in &concept.synonyms {
            entries.push(EntryTerm {
                surface: syn.clone(),
                id: concept.id.clone(),
                kind: TermKind::Synonym,
            });
        }
        by_id.insert(concept.id.clone(), concept);
    }
    let table = EntryTable { entries, by_id };
    for entry in &table.entries {
        if !table.by_id.contains_key(&entry.id) {
            return Err(OntologyError::Tsv {
                line: 0,
                message: format!("entry id {} does not resolve to a concept", entry.id),
            });
        }
    }
    Ok(table)
}

/// Parser options for the BioPortal CSV export.
#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Separator between synonyms inside the `Synonyms` cell.
    pub synonym_delimiter: char,
    /// Keep rows whose preferred label starts with `obsolete ` (matched
    /// case-insensitively). On by default.
    pub include_obsolete: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            synonym_delimiter: '|',
            include_obsolete: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseStats {
    pub data_rows: usize,
    pub skipped_non_hp: usize,
    pub skipped_obsolete: usize,
}

#[derive(Debug)]
pub struct ParsedOntology {
    pub concepts: Vec<ConceptRecord>,
    pub stats: ParseStats,
}

/// Parses the BioPortal CSV export. The header must contain at least
/// `Class ID`, `Preferred Label` and `Synonyms`; extra columns are ignored.
/// Rows whose class id is not an HP identifier (imported classes from other
/// ontologies) are skipped and counted, duplicates are an error.
pub fn parse_ontology_csv(
    input: impl Read,
    options: &ParseOptions,
) -> Result<ParsedOntology, OntologyError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);

    let headers = reader
        .headers()
        .map_err(|e| OntologyError::Csv {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &'static str| -> Result<usize, OntologyError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or(OntologyError::MissingColumn(name))
    };
    let id_col = column("Class ID")?;
    let label_col = column("Preferred Label")?;
    let syn_col = column("Synonyms")?;

    let mut concepts = Vec::new();
    let mut seen = HashMap::new();
    let mut stats = ParseStats::default();
    for (n, record) in reader.records().enumerate() {
        let row = n + 2; // header is row 1
        let record = record.map_err(|e| {
            let row = e.position().map(|p| p.line() as usize).unwrap_or(row);
            OntologyError::Csv {
                row,
                message: e.to_string(),
            }
        })?;
        stats.data_rows += 1;
        let raw_id = record.get(id_col).unwrap_or("");
        let id = match OntoId::parse(raw_id) {
            Ok(id) => id,
            Err(_) => {
                stats.skipped_non_hp += 1;
                continue;
            }
        };
        let label = record.get(label_col).unwrap_or("").trim();
        if label.is_empty() {
            return Err(OntologyError::Csv {
                row,
                message: format!("empty Preferred Label for {id}"),
            });
        }
        if !options.include_obsolete && label.to_lowercase().starts_with("obsolete ") {
            stats.skipped_obsolete += 1;
            continue;
        }
        if let Some(prev) = seen.insert(id.clone(), row) {
            let _ = prev;
            return Err(OntologyError::DuplicateId { id, row });
        }
        let synonyms = record
            .get(syn_col)
            .unwrap_or("")
            .split(options.synonym_delimiter)
            .map(|s| s.to_string());
        concepts.push(ConceptRecord::new(id, label, synonyms)?);
    }
    Ok(ParsedOntology { concepts, stats })
}

/// Case-folded surface key shared with the retriever's exact-match lookup.
pub fn surface_key(surface: &str) -> String {
    fold_key(surface)
}
