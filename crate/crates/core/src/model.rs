//! Records, attributes, terms and conjunctive queries shared by every other module.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// The three queryable (and sampled) bibliographic attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Title,
    Author,
    Subject,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Title, Attribute::Author, Attribute::Subject];

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Title => "title",
            Attribute::Author => "author",
            Attribute::Subject => "subject",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Attribute {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "title" => Ok(Attribute::Title),
            "author" => Ok(Attribute::Author),
            "subject" => Ok(Attribute::Subject),
            other => Err(ModelError::UnknownAttribute(other.to_string())),
        }
    }
}

/// Parses a comma separated attribute list such as `title,subject`.
pub fn parse_attribute_set(s: &str) -> Result<BTreeSet<Attribute>, ModelError> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::parse)
        .collect()
}

/// A single search term: lowercase, alphanumeric only, non-empty.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Term(String);

impl Term {
    pub fn new(text: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into();
        let valid = !text.is_empty()
            && text.chars().all(char::is_alphanumeric)
            && text.to_lowercase() == text;
        if valid {
            Ok(Term(text))
        } else {
            Err(ModelError::InvalidTerm(text))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Term {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Term::new(value)
    }
}

impl From<Term> for String {
    fn from(t: Term) -> Self {
        t.0
    }
}

impl AsRef<str> for Term {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

const DEFAULT_STOPLIST: &str = include_str!("../data/stoplist.txt");

/// Words never used as search terms.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stoplist {
    words: HashSet<String>,
}

impl Stoplist {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The embedded English list shipped with the crate.
    pub fn english() -> Self {
        Self::parse(DEFAULT_STOPLIST)
    }

    /// One term per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(str::to_lowercase)
            .collect();
        Stoplist { words }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Stoplist {
            words: words.into_iter().map(|w| w.as_ref().to_lowercase()).collect(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Lowercases `text`, splits it on every non-alphanumeric character and drops
/// empty fragments and stopwords. Order and duplicates are preserved.
pub fn tokenize(text: &str, stoplist: &Stoplist) -> Vec<Term> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|frag| !frag.is_empty() && !stoplist.contains(frag))
        .map(|frag| Term(frag.to_string()))
        .collect()
}

/// [`tokenize`] followed by first-occurrence deduplication.
pub fn distinct_terms(text: &str, stoplist: &Stoplist) -> Vec<Term> {
    let mut seen = HashSet::new();
    tokenize(text, stoplist)
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

/// One bibliographic entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BibRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_id: Option<String>,
    pub title: String,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default)]
    pub subjects: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isbn: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issn: Option<String>,
}

impl BibRecord {
    pub fn new(title: impl Into<String>) -> Result<Self, ModelError> {
        let title = title.into();
        if normalize(&title).is_empty() {
            return Err(ModelError::EmptyTitle);
        }
        Ok(BibRecord {
            system_id: None,
            title,
            authors: Vec::new(),
            subjects: Vec::new(),
            isbn: None,
            issn: None,
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.system_id = Some(id.into());
        self
    }

    pub fn with_author(mut self, author: impl Into<String>) -> Self {
        self.authors.push(author.into());
        self
    }

    /// Empty subject values are ignored.
    pub fn with_subject(mut self, subject: impl Into<String>) -> Self {
        let subject = subject.into();
        if !subject.trim().is_empty() {
            self.subjects.push(subject);
        }
        self
    }

    pub fn with_isbn(mut self, isbn: impl Into<String>) -> Self {
        self.isbn = Some(isbn.into());
        self
    }

    pub fn with_issn(mut self, issn: impl Into<String>) -> Self {
        self.issn = Some(issn.into());
        self
    }

    /// Checks the record invariants (non-empty title and subject values).
    pub fn validate(&self) -> Result<(), ModelError> {
        if normalize(&self.title).is_empty() {
            return Err(ModelError::EmptyTitle);
        }
        if self.subjects.iter().any(|s| s.trim().is_empty()) {
            return Err(ModelError::EmptySubject);
        }
        Ok(())
    }

    /// Distinct terms of one attribute. Authors and subject values are unioned.
    pub fn attribute_terms(&self, attr: Attribute, stoplist: &Stoplist) -> BTreeSet<Term> {
        match attr {
            Attribute::Title => tokenize(&self.title, stoplist).into_iter().collect(),
            Attribute::Author => self
                .authors
                .iter()
                .flat_map(|a| tokenize(a, stoplist))
                .collect(),
            Attribute::Subject => self
                .subjects
                .iter()
                .flat_map(|s| tokenize(s, stoplist))
                .collect(),
        }
    }
}

/// A conjunction of per-attribute term sets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<Attribute, BTreeSet<Term>>", into = "BTreeMap<Attribute, BTreeSet<Term>>")]
pub struct ConjunctiveQuery {
    predicates: BTreeMap<Attribute, BTreeSet<Term>>,
}

impl ConjunctiveQuery {
    pub fn new(predicates: BTreeMap<Attribute, BTreeSet<Term>>) -> Result<Self, ModelError> {
        if predicates.is_empty() {
            return Err(ModelError::EmptyQuery);
        }
        if let Some((attr, _)) = predicates.iter().find(|(_, terms)| terms.is_empty()) {
            return Err(ModelError::EmptyPredicate(*attr));
        }
        Ok(ConjunctiveQuery { predicates })
    }

    /// Convenience constructor from string slices; every string must be a valid term.
    pub fn from_pairs(pairs: &[(Attribute, &[&str])]) -> Result<Self, ModelError> {
        let mut predicates: BTreeMap<Attribute, BTreeSet<Term>> = BTreeMap::new();
        for (attr, terms) in pairs {
            let set = predicates.entry(*attr).or_default();
            for t in *terms {
                set.insert(Term::new(*t)?);
            }
        }
        Self::new(predicates)
    }

    pub fn predicates(&self) -> &BTreeMap<Attribute, BTreeSet<Term>> {
        &self.predicates
    }

    pub fn terms(&self, attr: Attribute) -> Option<&BTreeSet<Term>> {
        self.predicates.get(&attr)
    }

    pub fn attributes(&self) -> impl Iterator<Item = Attribute> + '_ {
        self.predicates.keys().copied()
    }

    /// Every (attribute, term) pair of the query.
    pub fn pairs(&self) -> impl Iterator<Item = (Attribute, &Term)> + '_ {
        self.predicates
            .iter()
            .flat_map(|(attr, terms)| terms.iter().map(move |t| (*attr, t)))
    }

    pub fn term_count(&self) -> usize {
        self.predicates.values().map(BTreeSet::len).sum()
    }

    /// Terms of `attr` joined by single spaces, or an empty string.
    pub fn field_text(&self, attr: Attribute) -> String {
        self.terms(attr)
            .map(|ts| ts.iter().map(Term::as_str).collect::<Vec<_>>().join(" "))
            .unwrap_or_default()
    }
}

impl TryFrom<BTreeMap<Attribute, BTreeSet<Term>>> for ConjunctiveQuery {
    type Error = ModelError;

    fn try_from(value: BTreeMap<Attribute, BTreeSet<Term>>) -> Result<Self, Self::Error> {
        ConjunctiveQuery::new(value)
    }
}

impl From<ConjunctiveQuery> for BTreeMap<Attribute, BTreeSet<Term>> {
    fn from(q: ConjunctiveQuery) -> Self {
        q.predicates
    }
}

impl fmt::Display for ConjunctiveQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (attr, terms) in &self.predicates {
            if !first {
                f.write_str(" AND ")?;
            }
            first = false;
            let joined: Vec<&str> = terms.iter().map(Term::as_str).collect();
            write!(f, "{}=({})", attr, joined.join(" "))?;
        }
        Ok(())
    }
}

/// Builds a query from the three raw input fields of the user interface.
pub fn build_query(
    title: &str,
    author: &str,
    subject: &str,
    stoplist: &Stoplist,
) -> Result<ConjunctiveQuery, ModelError> {
    let mut predicates = BTreeMap::new();
    for (attr, text) in [
        (Attribute::Title, title),
        (Attribute::Author, author),
        (Attribute::Subject, subject),
    ] {
        let terms: BTreeSet<Term> = tokenize(text, stoplist).into_iter().collect();
        if !terms.is_empty() {
            predicates.insert(attr, terms);
        }
    }
    ConjunctiveQuery::new(predicates)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentityKind {
    SystemId,
    Isbn,
    TitleAuthor,
}

impl IdentityKind {
    pub const ALL: [IdentityKind; 3] =
        [IdentityKind::SystemId, IdentityKind::Isbn, IdentityKind::TitleAuthor];

    pub fn as_str(self) -> &'static str {
        match self {
            IdentityKind::SystemId => "system_id",
            IdentityKind::Isbn => "isbn",
            IdentityKind::TitleAuthor => "title_author",
        }
    }
}

/// Separates title and first author inside a [`IdentityKind::TitleAuthor`] key.
pub const UNIT_SEPARATOR: char = '\u{1f}';

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordIdentity {
    pub kind: IdentityKind,
    pub key: String,
}

/// Lowercase, collapse internal whitespace, trim.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

fn non_blank(s: &Option<String>) -> Option<&str> {
    s.as_deref().map(str::trim).filter(|s| !s.is_empty())
}

/// Identity used by the record filter: system id, else ISBN, else title plus first author.
pub fn record_identity(record: &BibRecord) -> RecordIdentity {
    if let Some(id) = non_blank(&record.system_id) {
        return RecordIdentity {
            kind: IdentityKind::SystemId,
            key: id.to_string(),
        };
    }
    if let Some(isbn) = non_blank(&record.isbn) {
        return RecordIdentity {
            kind: IdentityKind::Isbn,
            key: isbn.to_string(),
        };
    }
    let author = record.authors.first().map(|a| normalize(a)).unwrap_or_default();
    RecordIdentity {
        kind: IdentityKind::TitleAuthor,
        key: format!("{}{}{}", normalize(&record.title), UNIT_SEPARATOR, author),
    }
}
