//! Simulated bibliographic database servers.
//!
//! A [`LibraryCorpus`] is loaded from a plain-text corpus file and evaluates
//! conjunctive queries unranked, in corpus order. [`server::SimServer`]
//! exposes it over the line protocol in [`crate::protocol`].

pub mod generate;
pub mod server;

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CorpusError, EvalError};
use crate::model::{tokenize, Attribute, BibRecord, ConjunctiveQuery, Stoplist, Term};
use crate::protocol::{record_fields, record_from_fields, split_field, valid_db_id, SearchHits};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalMode {
    /// A term matches only inside its own attribute.
    #[default]
    Exact,
    /// Title terms also match subject values, like servers that search
    /// related fields for title queries.
    BroadTitle,
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(EvalMode::Exact),
            "broad-title" => Ok(EvalMode::BroadTitle),
            other => Err(format!("unknown mode `{other}` (expected exact or broad-title)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IdPolicy {
    #[default]
    WithIds,
    /// System ids are stripped from returned records.
    WithoutIds,
}

#[derive(Debug, Clone)]
struct IndexedTerms {
    title: HashSet<Term>,
    author: HashSet<Term>,
    subject: HashSet<Term>,
}

impl IndexedTerms {
    fn of(record: &BibRecord) -> Self {
        let none = Stoplist::empty();
        IndexedTerms {
            title: tokenize(&record.title, &none).into_iter().collect(),
            author: record.authors.iter().flat_map(|a| tokenize(a, &none)).collect(),
            subject: record.subjects.iter().flat_map(|s| tokenize(s, &none)).collect(),
        }
    }

    fn matches(&self, attr: Attribute, term: &Term, mode: EvalMode) -> bool {
        match attr {
            Attribute::Title => {
                self.title.contains(term)
                    || (mode == EvalMode::BroadTitle && self.subject.contains(term))
            }
            Attribute::Author => self.author.contains(term),
            Attribute::Subject => self.subject.contains(term),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LibraryCorpus {
    db_id: String,
    records: Vec<BibRecord>,
    index: Vec<IndexedTerms>,
    pub mode: EvalMode,
    pub capabilities: BTreeSet<Attribute>,
    pub id_policy: IdPolicy,
}

impl LibraryCorpus {
    /// Builds a corpus, assigning `<db_id>-<n>` ids to records without one.
    pub fn new(db_id: impl Into<String>, records: Vec<BibRecord>) -> Result<Self, CorpusError> {
        let db_id = db_id.into();
        if !valid_db_id(&db_id) {
            return Err(CorpusError::InvalidDbId(db_id));
        }
        let mut seen = HashSet::new();
        let mut records = records;
        for (i, r) in records.iter_mut().enumerate() {
            let id = r
                .system_id
                .get_or_insert_with(|| format!("{db_id}-{:06}", i + 1))
                .clone();
            if !seen.insert(id.clone()) {
                return Err(CorpusError::DuplicateSystemId { id, line: 0 });
            }
        }
        let index = records.iter().map(IndexedTerms::of).collect();
        Ok(LibraryCorpus {
            db_id,
            records,
            index,
            mode: EvalMode::Exact,
            capabilities: Attribute::ALL.into_iter().collect(),
            id_policy: IdPolicy::WithIds,
        })
    }

    /// Loads a corpus file; the database id is the file stem.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("db")
            .to_string();
        Self::load_as(path, &stem)
    }

    pub fn load_as(path: &Path, db_id: &str) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|e| CorpusError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(db_id, &text)
    }

    /// Parses blank-line separated blocks of `field: value` lines.
    pub fn parse(db_id: &str, text: &str) -> Result<Self, CorpusError> {
        let mut records = Vec::new();
        let mut id_lines = Vec::new();
        let mut block: Vec<(usize, &str, &str)> = Vec::new();

        let mut flush = |block: &mut Vec<(usize, &str, &str)>| -> Result<(), CorpusError> {
            if block.is_empty() {
                return Ok(());
            }
            let start = block[0].0;
            let record = record_from_fields(block.iter().map(|(_, n, v)| (*n, *v)))
                .map_err(|message| CorpusError::Parse { line: start, message })?;
            let id_line = block.iter().find(|(_, n, _)| *n == "id").map(|(l, _, _)| *l);
            id_lines.push(id_line.unwrap_or(start));
            records.push(record);
            block.clear();
            Ok(())
        };

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                flush(&mut block)?;
                continue;
            }
            if line.trim_start().starts_with('#') {
                continue;
            }
            let (name, value) = split_field(line).ok_or_else(|| CorpusError::Parse {
                line: line_no,
                message: "expected `field: value`".into(),
            })?;
            block.push((line_no, name, value));
        }
        flush(&mut block)?;

        let mut seen = HashSet::new();
        for (r, line) in records.iter().zip(&id_lines) {
            if let Some(id) = &r.system_id {
                if !seen.insert(id.clone()) {
                    return Err(CorpusError::DuplicateSystemId { id: id.clone(), line: *line });
                }
            }
        }
        Self::new(db_id, records)
    }

    pub fn with_mode(mut self, mode: EvalMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_capabilities(mut self, caps: BTreeSet<Attribute>) -> Self {
        self.capabilities = caps;
        self
    }

    pub fn with_id_policy(mut self, policy: IdPolicy) -> Self {
        self.id_policy = policy;
        self
    }

    pub fn db_id(&self) -> &str {
        &self.db_id
    }

    pub fn records(&self) -> &[BibRecord] {
        &self.records
    }

    /// N: the true number of records.
    pub fn total_count(&self) -> usize {
        self.records.len()
    }

    fn matches(&self, i: usize, q: &ConjunctiveQuery) -> bool {
        q.pairs()
            .all(|(attr, term)| self.index[i].matches(attr, term, self.mode))
    }

    /// Unranked conjunctive evaluation: total hits plus the first `max` records.
    pub fn evaluate(&self, q: &ConjunctiveQuery, max: usize) -> Result<SearchHits, EvalError> {
        if let Some(attr) = q.attributes().find(|a| !self.capabilities.contains(a)) {
            return Err(EvalError::Unsupported(attr));
        }
        let mut total = 0;
        let mut records = Vec::new();
        for i in 0..self.records.len() {
            if self.matches(i, q) {
                total += 1;
                if records.len() < max {
                    records.push(self.presented(&self.records[i]));
                }
            }
        }
        Ok(SearchHits { total, records })
    }

    fn presented(&self, r: &BibRecord) -> BibRecord {
        let mut r = r.clone();
        if self.id_policy == IdPolicy::WithoutIds {
            r.system_id = None;
        }
        r
    }

    /// Serializes the corpus back to the file format.
    pub fn to_text(&self) -> String {
        corpus_text(&self.records)
    }
}

/// Renders records in the corpus file format.
pub fn corpus_text(records: &[BibRecord]) -> String {
    let mut out = String::new();
    for (i, r) in records.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (name, value) in record_fields(r) {
            out.push_str(name);
            out.push_str(": ");
            out.push_str(&value);
            out.push('\n');
        }
    }
    out
}
