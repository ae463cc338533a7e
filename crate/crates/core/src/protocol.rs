//! Line-oriented search protocol spoken between the gateway and library servers.
//!
//! ```text
//! request:   SEARCH <db_id> MAX=<n>
//!            Q <attr>=<term>,<term>...      (one line per predicate)
//!            END
//! response:  HITS <total>
//!            REC <n-fields>                 (per returned record)
//!            <field>: <value>               (n-fields lines)
//!            ENDREC
//!            DONE
//! error:     ERR <code> <message>
//! ```
//!
//! Lines end with `\n`; a trailing `\r` is tolerated on input.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::ProtocolError;
use crate::model::{Attribute, BibRecord, ConjunctiveQuery, Term};

/// Longest accepted protocol line, in bytes.
pub const MAX_LINE: usize = 64 * 1024;

pub const ERR_BAD_REQUEST: &str = "BADREQ";
pub const ERR_UNSUPPORTED: &str = "UNSUPPORTED";
pub const ERR_NO_DATABASE: &str = "NODB";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchRequest {
    pub db_id: String,
    pub max: usize,
    pub query: ConjunctiveQuery,
}

/// Total hit count plus the first `max` records, in server order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHits {
    pub total: usize,
    pub records: Vec<BibRecord>,
}

/// Database ids travel as single protocol tokens and file-name stems.
pub fn valid_db_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !id.starts_with('.')
}

pub fn encode_request(req: &SearchRequest) -> String {
    let mut out = format!("SEARCH {} MAX={}\n", req.db_id, req.max);
    for (attr, terms) in req.query.predicates() {
        let joined: Vec<&str> = terms.iter().map(Term::as_str).collect();
        let _ = writeln!(out, "Q {}={}", attr, joined.join(","));
    }
    out.push_str("END\n");
    out
}

/// Parses a `SEARCH` header into (db_id, max).
pub fn parse_header(line: &str) -> Result<(String, usize), ProtocolError> {
    let mut parts = line.split(' ');
    let (Some("SEARCH"), Some(db), Some(max), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(ProtocolError::new(line, "expected `SEARCH <db_id> MAX=<n>`"));
    };
    if !valid_db_id(db) {
        return Err(ProtocolError::new(line, "invalid database id"));
    }
    let max = max
        .strip_prefix("MAX=")
        .and_then(|n| n.parse::<usize>().ok())
        .ok_or_else(|| ProtocolError::new(line, "expected MAX=<n>"))?;
    Ok((db.to_string(), max))
}

/// Parses one `Q attr=t,t` line.
pub fn parse_predicate_line(line: &str) -> Result<(Attribute, BTreeSet<Term>), ProtocolError> {
    let body = line
        .strip_prefix("Q ")
        .ok_or_else(|| ProtocolError::new(line, "expected `Q <attr>=<terms>` or END"))?;
    let (attr, terms) = body
        .split_once('=')
        .ok_or_else(|| ProtocolError::new(line, "predicate lacks `=`"))?;
    let attr: Attribute = attr
        .parse()
        .map_err(|e| ProtocolError::new(line, format!("{e}")))?;
    let terms = terms
        .split(',')
        .map(|t| Term::new(t).map_err(|e| ProtocolError::new(line, format!("{e}"))))
        .collect::<Result<BTreeSet<_>, _>>()?;
    Ok((attr, terms))
}

/// Incremental request parser fed one line at a time.
#[derive(Debug, Default)]
pub struct RequestParser {
    header: Option<(String, usize)>,
    predicates: BTreeMap<Attribute, BTreeSet<Term>>,
    error: Option<ProtocolError>,
    /// A header was rejected: body lines up to the next END belong to it.
    skipping: bool,
}

/// Outcome of feeding a line to [`RequestParser`].
#[derive(Debug, PartialEq, Eq)]
pub enum ParseStep {
    NeedMore,
    Request(SearchRequest),
    /// The request is malformed; the parser is ready for a new request.
    Invalid(ProtocolError),
}

impl RequestParser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn in_request(&self) -> bool {
        self.header.is_some()
    }

    pub fn feed(&mut self, line: &str) -> ParseStep {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if self.header.is_none() {
            if line.trim().is_empty() {
                return ParseStep::NeedMore;
            }
            if self.skipping && (line == "END" || line.starts_with("Q ")) {
                self.skipping = line != "END";
                return ParseStep::NeedMore;
            }
            return match parse_header(line) {
                Ok(h) => {
                    self.skipping = false;
                    self.header = Some(h);
                    ParseStep::NeedMore
                }
                Err(e) => {
                    self.skipping = true;
                    ParseStep::Invalid(e)
                }
            };
        }
        if line == "END" {
            let (db_id, max) = self.header.take().expect("header present");
            let predicates = std::mem::take(&mut self.predicates);
            if let Some(e) = self.error.take() {
                return ParseStep::Invalid(e);
            }
            return match ConjunctiveQuery::new(predicates) {
                Ok(query) => ParseStep::Request(SearchRequest { db_id, max, query }),
                Err(e) => ParseStep::Invalid(ProtocolError::new("END", e.to_string())),
            };
        }
        if self.error.is_none() {
            match parse_predicate_line(line) {
                Ok((attr, terms)) => {
                    if self.predicates.insert(attr, terms).is_some() {
                        self.error = Some(ProtocolError::new(line, "attribute repeated"));
                    }
                }
                Err(e) => self.error = Some(e),
            }
        }
        ParseStep::NeedMore
    }
}

/// Parses a complete request text (as produced by [`encode_request`]).
pub fn decode_request(text: &str) -> Result<SearchRequest, ProtocolError> {
    let mut parser = RequestParser::new();
    for line in text.lines() {
        match parser.feed(line) {
            ParseStep::NeedMore => {}
            ParseStep::Request(r) => return Ok(r),
            ParseStep::Invalid(e) => return Err(e),
        }
    }
    Err(ProtocolError::new("", "request not terminated by END"))
}

fn clean_value(v: &str) -> String {
    v.replace(['\r', '\n'], " ").trim().to_string()
}

/// `field: value` pairs in canonical order.
pub fn record_fields(r: &BibRecord) -> Vec<(&'static str, String)> {
    let mut fields = Vec::new();
    if let Some(id) = &r.system_id {
        fields.push(("id", clean_value(id)));
    }
    fields.push(("title", clean_value(&r.title)));
    fields.extend(r.authors.iter().map(|a| ("author", clean_value(a))));
    fields.extend(r.subjects.iter().map(|s| ("subject", clean_value(s))));
    if let Some(isbn) = &r.isbn {
        fields.push(("isbn", clean_value(isbn)));
    }
    if let Some(issn) = &r.issn {
        fields.push(("issn", clean_value(issn)));
    }
    fields
}

/// Splits a `field: value` line.
pub fn split_field(line: &str) -> Option<(&str, &str)> {
    let (name, value) = line.split_once(':')?;
    Some((name.trim(), value.trim()))
}

/// Builds a record from `field: value` pairs; single-valued fields may not repeat.
pub fn record_from_fields<'a>(
    fields: impl IntoIterator<Item = (&'a str, &'a str)>,
) -> Result<BibRecord, String> {
    let mut id = None;
    let mut title: Option<String> = None;
    let mut isbn = None;
    let mut issn = None;
    let mut authors = Vec::new();
    let mut subjects = Vec::new();
    fn set(slot: &mut Option<String>, name: &str, value: &str) -> Result<(), String> {
        if slot.is_some() {
            return Err(format!("field `{name}` repeated"));
        }
        *slot = Some(value.to_string());
        Ok(())
    }
    for (name, value) in fields {
        match name {
            "id" => set(&mut id, name, value)?,
            "title" => set(&mut title, name, value)?,
            "isbn" => set(&mut isbn, name, value)?,
            "issn" => set(&mut issn, name, value)?,
            "author" => authors.push(value.to_string()),
            "subject" => {
                if value.is_empty() {
                    return Err("empty subject value".into());
                }
                subjects.push(value.to_string())
            }
            other => return Err(format!("unknown field `{other}`")),
        }
    }
    let record = BibRecord {
        system_id: id.filter(|s| !s.is_empty()),
        title: title.ok_or("record has no title")?,
        authors,
        subjects,
        isbn: isbn.filter(|s| !s.is_empty()),
        issn: issn.filter(|s| !s.is_empty()),
    };
    record.validate().map_err(|e| e.to_string())?;
    Ok(record)
}

pub fn encode_hits(hits: &SearchHits) -> String {
    let mut out = format!("HITS {}\n", hits.total);
    for r in &hits.records {
        let fields = record_fields(r);
        let _ = writeln!(out, "REC {}", fields.len());
        for (name, value) in fields {
            let _ = writeln!(out, "{name}: {value}");
        }
        out.push_str("ENDREC\n");
    }
    out.push_str("DONE\n");
    out
}

pub fn encode_error(code: &str, message: &str) -> String {
    format!("ERR {} {}\n", code, clean_value(message))
}

/// A decoded server response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Hits(SearchHits),
    Error { code: String, message: String },
}

/// Incremental response decoder. Feed lines until it yields a [`Response`].
#[derive(Debug, Default)]
pub struct ResponseDecoder {
    state: DecodeState,
    hits: SearchHits,
    pending: Vec<(String, String)>,
}

#[derive(Debug, Default)]
enum DecodeState {
    #[default]
    Start,
    Between,
    Fields(usize),
    AwaitEndRec,
}

impl ResponseDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, line: &str) -> Result<Option<Response>, ProtocolError> {
        let line = line.strip_suffix('\r').unwrap_or(line);
        match self.state {
            DecodeState::Start => {
                if let Some(rest) = line.strip_prefix("ERR ") {
                    let (code, message) = rest.split_once(' ').unwrap_or((rest, ""));
                    if code.is_empty() {
                        return Err(ProtocolError::new(line, "ERR without code"));
                    }
                    return Ok(Some(Response::Error {
                        code: code.to_string(),
                        message: message.to_string(),
                    }));
                }
                let total = line
                    .strip_prefix("HITS ")
                    .and_then(|n| n.parse::<usize>().ok())
                    .ok_or_else(|| ProtocolError::new(line, "expected `HITS <total>` or ERR"))?;
                self.hits.total = total;
                self.state = DecodeState::Between;
                Ok(None)
            }
            DecodeState::Between => {
                if line == "DONE" {
                    if self.hits.records.len() > self.hits.total {
                        return Err(ProtocolError::new(line, "more records than hits"));
                    }
                    self.state = DecodeState::Start;
                    return Ok(Some(Response::Hits(std::mem::take(&mut self.hits))));
                }
                let n = line
                    .strip_prefix("REC ")
                    .and_then(|n| n.parse::<usize>().ok())
                    .ok_or_else(|| ProtocolError::new(line, "expected `REC <n>` or DONE"))?;
                self.state = if n == 0 {
                    DecodeState::AwaitEndRec
                } else {
                    DecodeState::Fields(n)
                };
                Ok(None)
            }
            DecodeState::Fields(remaining) => {
                let (name, value) =
                    split_field(line).ok_or_else(|| ProtocolError::new(line, "expected `field: value`"))?;
                self.pending.push((name.to_string(), value.to_string()));
                self.state = if remaining == 1 {
                    DecodeState::AwaitEndRec
                } else {
                    DecodeState::Fields(remaining - 1)
                };
                Ok(None)
            }
            DecodeState::AwaitEndRec => {
                if line != "ENDREC" {
                    return Err(ProtocolError::new(line, "expected ENDREC"));
                }
                let fields = std::mem::take(&mut self.pending);
                let record = record_from_fields(fields.iter().map(|(n, v)| (n.as_str(), v.as_str())))
                    .map_err(|m| ProtocolError::new(line, m))?;
                self.hits.records.push(record);
                self.state = DecodeState::Between;
                Ok(None)
            }
        }
    }
}

/// Decodes a complete response text.
pub fn decode_response(text: &str) -> Result<Response, ProtocolError> {
    let mut dec = ResponseDecoder::new();
    let mut last = "";
    for line in text.lines() {
        last = line;
        if let Some(resp) = dec.feed(line)? {
            return Ok(resp);
        }
    }
    Err(ProtocolError::new(last, "truncated response"))
}
