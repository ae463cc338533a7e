//! Promotion of logged user queries to training queries.
//!
//! A query `q1` is predicate-subsumed by `q2` when every attribute of `q2`
//! also appears in `q1` and, per attribute, `q2`'s terms are a subset of
//! `q1`'s. Under conjunctive evaluation this guarantees
//! `results(q1) ⊆ results(q2)`, so `q1` cannot surface records `q2` misses.
//! Both subset tests are inclusive, which makes duplicates subsumed too.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::StorageError;
use crate::knowledge::write_atomic;
use crate::model::{Attribute, ConjunctiveQuery, Term};

/// Milliseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn now() -> Self {
        let ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        Timestamp(ms)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Predicates match when they constrain the same attribute.
pub fn predicates_match(
    p1: (Attribute, &BTreeSet<Term>),
    p2: (Attribute, &BTreeSet<Term>),
) -> bool {
    p1.0 == p2.0
}

/// Whether `q1` is predicate-subsumed by `q2`.
pub fn predicate_subsumed(q1: &ConjunctiveQuery, q2: &ConjunctiveQuery) -> bool {
    q2.predicates().iter().all(|(attr2, val2)| {
        q1.predicates()
            .iter()
            .find(|(attr1, val1)| predicates_match((**attr1, val1), (*attr2, val2)))
            .is_some_and(|(_, val1)| val2.is_subset(val1))
    })
}

/// Serializes predicates as tab-separated `attr=term,term` groups.
pub fn format_predicates(q: &ConjunctiveQuery) -> String {
    q.predicates()
        .iter()
        .map(|(attr, terms)| {
            let joined: Vec<&str> = terms.iter().map(Term::as_str).collect();
            format!("{attr}={}", joined.join(","))
        })
        .collect::<Vec<_>>()
        .join("\t")
}

/// Inverse of [`format_predicates`] over already-split groups.
pub fn parse_predicates<'a>(groups: impl IntoIterator<Item = &'a str>) -> Result<ConjunctiveQuery, String> {
    let mut predicates: BTreeMap<Attribute, BTreeSet<Term>> = BTreeMap::new();
    for group in groups {
        let (attr, terms) = group
            .split_once('=')
            .ok_or_else(|| format!("predicate `{group}` lacks `=`"))?;
        let attr: Attribute = attr.parse().map_err(|e| format!("{e}"))?;
        if predicates.contains_key(&attr) {
            return Err(format!("attribute {attr} repeated"));
        }
        let set = terms
            .split(',')
            .map(|t| Term::new(t).map_err(|e| format!("{e}")))
            .collect::<Result<BTreeSet<_>, _>>()?;
        predicates.insert(attr, set);
    }
    ConjunctiveQuery::new(predicates).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    UserDerived,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Synthetic => "synthetic",
            Provenance::UserDerived => "user",
        }
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "synthetic" => Ok(Provenance::Synthetic),
            "user" => Ok(Provenance::UserDerived),
            other => Err(format!("unknown provenance `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingQuery {
    pub query: ConjunctiveQuery,
    pub provenance: Provenance,
    pub created: Timestamp,
}

/// Ordered training queries. A query is only admitted when no current member
/// already subsumes it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrainingQueryLibrary {
    entries: Vec<TrainingQuery>,
}

impl TrainingQueryLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[TrainingQuery] {
        &self.entries
    }

    pub fn queries(&self) -> Vec<ConjunctiveQuery> {
        self.entries.iter().map(|e| e.query.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.entries.iter().filter(|e| e.provenance == provenance).count()
    }

    pub fn is_subsumed(&self, q: &ConjunctiveQuery) -> bool {
        self.entries.iter().any(|e| predicate_subsumed(q, &e.query))
    }

    /// Appends `query` unless a member subsumes it; returns whether it was added.
    pub fn insert(&mut self, query: ConjunctiveQuery, provenance: Provenance, created: Timestamp) -> bool {
        if self.is_subsumed(&query) {
            return false;
        }
        self.entries.push(TrainingQuery {
            query,
            provenance,
            created,
        });
        true
    }

    /// Appends `query` without the subsumption check. Used for generated
    /// training queries, which form the base set.
    pub fn push(&mut self, query: ConjunctiveQuery, provenance: Provenance, created: Timestamp) {
        self.entries.push(TrainingQuery {
            query,
            provenance,
            created,
        });
    }

    /// Appends every entry of `other` not already present verbatim; returns how many were added.
    pub fn merge(&mut self, other: &TrainingQueryLibrary) -> usize {
        let before = self.entries.len();
        for e in &other.entries {
            if !self.entries.iter().any(|x| x.query == e.query && x.provenance == e.provenance) {
                self.entries.push(e.clone());
            }
        }
        self.entries.len() - before
    }

    /// `timestamp\tprovenance\tattr=term,...` lines.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                format!(
                    "{}\t{}\t{}\n",
                    e.created,
                    e.provenance.as_str(),
                    format_predicates(&e.query)
                )
            })
            .collect()
    }

    /// Parses library text. Entries are taken verbatim, in file order.
    pub fn parse(text: &str) -> Result<Self, (usize, String)> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| (idx + 1, m);
            let mut fields = line.split('\t');
            let created = fields
                .next()
                .and_then(|f| f.parse().ok())
                .map(Timestamp)
                .ok_or_else(|| err("bad timestamp".into()))?;
            let provenance = fields
                .next()
                .ok_or_else(|| err("missing provenance".into()))?
                .parse()
                .map_err(err)?;
            let query = parse_predicates(fields).map_err(err)?;
            entries.push(TrainingQuery {
                query,
                provenance,
                created,
            });
        }
        Ok(TrainingQueryLibrary { entries })
    }

    pub fn load(path: &Path) -> Result<Self, StorageError> {
        let text = fs::read_to_string(path).map_err(|e| StorageError::io(path, e))?;
        Self::parse(&text).map_err(|(line, m)| StorageError::corrupt(path, line, m))
    }

    pub fn save(&self, path: &Path) -> Result<(), StorageError> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedQuery {
    pub query: ConjunctiveQuery,
    pub timestamp: Timestamp,
    pub session: String,
}

/// Append-only log of user queries. Timestamps are strictly increasing.
#[derive(Debug, Default)]
pub struct UserQueryLog {
    entries: Vec<LoggedQuery>,
    path: Option<PathBuf>,
}

fn clean_session(session: &str) -> String {
    let s: String = session
        .chars()
        .filter(|c| !c.is_whitespace() && !c.is_control())
        .collect();
    if s.is_empty() {
        "-".into()
    } else {
        s
    }
}

impl UserQueryLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens a file-backed log, loading existing lines.
    pub fn open(path: &Path) -> Result<Self, StorageError> {
        let mut entries: Vec<LoggedQuery> = Vec::new();
        if path.exists() {
            let text = fs::read_to_string(path).map_err(|e| StorageError::io(path, e))?;
            for (idx, line) in text.lines().enumerate() {
                if line.is_empty() {
                    continue;
                }
                let corrupt = |m: String| StorageError::corrupt(path, idx + 1, m);
                let mut fields = line.split('\t');
                let timestamp = fields
                    .next()
                    .and_then(|f| f.parse().ok())
                    .map(Timestamp)
                    .ok_or_else(|| corrupt("bad timestamp".into()))?;
                let session = fields
                    .next()
                    .ok_or_else(|| corrupt("missing session".into()))?
                    .to_string();
                let query = parse_predicates(fields).map_err(corrupt)?;
                if entries.last().is_some_and(|l| l.timestamp >= timestamp) {
                    return Err(corrupt("timestamps out of order".into()));
                }
                entries.push(LoggedQuery {
                    query,
                    timestamp,
                    session,
                });
            }
        }
        Ok(UserQueryLog {
            entries,
            path: Some(path.to_path_buf()),
        })
    }

    pub fn entries(&self) -> &[LoggedQuery] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_timestamp(&self) -> Option<Timestamp> {
        self.entries.last().map(|e| e.timestamp)
    }

    pub fn append(&mut self, query: ConjunctiveQuery, session: &str) -> Result<Timestamp, StorageError> {
        self.append_at(query, session, Timestamp::now())
    }

    /// Appends with a caller-supplied time, bumped forward if needed to keep
    /// timestamps strictly increasing.
    pub fn append_at(
        &mut self,
        query: ConjunctiveQuery,
        session: &str,
        at: Timestamp,
    ) -> Result<Timestamp, StorageError> {
        let timestamp = match self.last_timestamp() {
            Some(last) if last >= at => Timestamp(last.0 + 1),
            _ => at,
        };
        let entry = LoggedQuery {
            query,
            timestamp,
            session: clean_session(session),
        };
        if let Some(path) = &self.path {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| StorageError::io(parent, e))?;
            }
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| StorageError::io(path, e))?;
            writeln!(
                f,
                "{}\t{}\t{}",
                entry.timestamp,
                entry.session,
                format_predicates(&entry.query)
            )
            .map_err(|e| StorageError::io(path, e))?;
        }
        self.entries.push(entry);
        Ok(timestamp)
    }

    pub fn entries_since(&self, since: Option<Timestamp>) -> impl Iterator<Item = &LoggedQuery> {
        self.entries
            .iter()
            .filter(move |e| since.is_none_or(|s| e.timestamp > s))
    }
}

/// Scans log entries newer than `since` in order and promotes every query not
/// subsumed by the library (including queries promoted earlier in the scan).
pub fn filter_user_queries(
    log: &UserQueryLog,
    library: &mut TrainingQueryLibrary,
    since: Option<Timestamp>,
) -> Vec<ConjunctiveQuery> {
    let mut accepted = Vec::new();
    for entry in log.entries_since(since) {
        if library.insert(entry.query.clone(), Provenance::UserDerived, entry.timestamp) {
            accepted.push(entry.query.clone());
        }
    }
    accepted
}
