//! Reference implementations written against the definitions alone: no
//! tokenizer, dictionary or statistics store from the library is used here.

use std::collections::{BTreeMap, BTreeSet};

use catroute_core::model::{Attribute, BibRecord, ConjunctiveQuery, Term};
use rand::seq::SliceRandom;
use rand::Rng;

/// Lowercased alphanumeric runs of `text`.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn values(r: &BibRecord, attr: Attribute) -> Vec<&str> {
    match attr {
        Attribute::Title => vec![r.title.as_str()],
        Attribute::Author => r.authors.iter().map(String::as_str).collect(),
        Attribute::Subject => r.subjects.iter().map(String::as_str).collect(),
    }
}

pub fn has_term(r: &BibRecord, attr: Attribute, term: &str) -> bool {
    values(r, attr).iter().any(|v| words(v).iter().any(|w| w == term))
}

/// Records whose every (attribute, term) pair of `q` occurs in that attribute.
pub fn matching(records: &[BibRecord], q: &ConjunctiveQuery) -> Vec<usize> {
    (0..records.len())
        .filter(|&i| q.pairs().all(|(a, t)| has_term(&records[i], a, t.as_str())))
        .collect()
}

/// Number of records carrying `term` in `attr`, by scanning every record.
pub fn tuple_frequency(records: &[BibRecord], attr: Attribute, term: &str) -> u64 {
    records.iter().filter(|r| has_term(r, attr, term)).count() as u64
}

/// `N · Π tf/N`, with the tf loop run in ascending tf order.
pub fn brute_force_score(records: &[BibRecord], q: &ConjunctiveQuery) -> f64 {
    let n = records.len() as u64;
    let mut tfs = Vec::new();
    for (attr, term) in q.pairs() {
        tfs.push(tuple_frequency(records, attr, term.as_str()));
    }
    if n == 0 || tfs.contains(&0) {
        return 0.0;
    }
    tfs.sort();
    let mut s = n as f64;
    for tf in tfs {
        s = s * tf as f64 / n as f64;
    }
    s
}

/// The estimate as an exact fraction `Π tf / N^(k-1)`.
pub fn exact_score(records: &[BibRecord], q: &ConjunctiveQuery) -> (u128, u128) {
    let n = records.len() as u128;
    let mut num = 1u128;
    let mut den = 1u128;
    for (i, (attr, term)) in q.pairs().enumerate() {
        num *= tuple_frequency(records, attr, term.as_str()) as u128;
        if i > 0 {
            den *= n;
        }
    }
    if n == 0 {
        (0, 1)
    } else {
        (num, den)
    }
}

pub fn relative_error(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}

/// Small vocabulary so random queries hit often.
pub const VOCAB: &[&str] = &[
    "digital", "library", "system", "data", "retrieval", "design", "network", "theory", "history",
    "ocean", "music", "law",
];

const NAMES: &[&str] = &["Tan", "Lim", "Wong", "Smith", "Garcia", "Lee"];

fn phrase<R: Rng>(rng: &mut R, lo: usize, hi: usize) -> String {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn random_record<R: Rng>(rng: &mut R) -> BibRecord {
    let mut r = BibRecord::new(phrase(rng, 1, 5)).unwrap();
    for _ in 0..rng.gen_range(0..=2) {
        let name = NAMES.choose(rng).unwrap();
        let initial = (b'k' + rng.gen_range(0..3u8)) as char;
        r = r.with_author(format!("{name}, {}.", initial.to_ascii_uppercase()));
    }
    for _ in 0..rng.gen_range(0..=2) {
        r = r.with_subject(phrase(rng, 1, 3));
    }
    r
}

pub fn random_records<R: Rng>(rng: &mut R, lo: usize, hi: usize) -> Vec<BibRecord> {
    (0..rng.gen_range(lo..=hi)).map(|_| random_record(rng)).collect()
}

fn attr_pool(attr: Attribute) -> Vec<String> {
    match attr {
        Attribute::Author => NAMES
            .iter()
            .map(|n| n.to_lowercase())
            .chain(["k", "l", "m"].map(String::from))
            .collect(),
        _ => VOCAB.iter().map(|w| w.to_string()).collect(),
    }
}

/// A random query with 1..=`max_terms` terms spread over 1..=3 attributes.
pub fn random_query<R: Rng>(rng: &mut R, max_terms: usize) -> ConjunctiveQuery {
    let k = rng.gen_range(1..=max_terms);
    let mut preds: BTreeMap<Attribute, BTreeSet<Term>> = BTreeMap::new();
    for _ in 0..k {
        let attr = *Attribute::ALL.choose(rng).unwrap();
        let pool = attr_pool(attr);
        preds
            .entry(attr)
            .or_default()
            .insert(Term::new(pool.choose(rng).unwrap().clone()).unwrap());
    }
    ConjunctiveQuery::new(preds).unwrap()
}

/// A random query over a three-word vocabulary, so subsumption between two
/// independent draws is common.
pub fn tiny_query<R: Rng>(rng: &mut R) -> ConjunctiveQuery {
    let mut preds: BTreeMap<Attribute, BTreeSet<Term>> = BTreeMap::new();
    while preds.is_empty() {
        for attr in Attribute::ALL {
            if rng.gen_bool(0.5) {
                let terms: BTreeSet<Term> = ["x", "y", "z"]
                    .iter()
                    .filter(|_| rng.gen_bool(0.5))
                    .map(|t| Term::new(*t).unwrap())
                    .collect();
                if !terms.is_empty() {
                    preds.insert(attr, terms);
                }
            }
        }
    }
    ConjunctiveQuery::new(preds).unwrap()
}

/// `q` with extra predicates and terms added, hence predicate-subsumed by `q`.
pub fn extend_query<R: Rng>(rng: &mut R, q: &ConjunctiveQuery) -> ConjunctiveQuery {
    let mut preds: BTreeMap<Attribute, BTreeSet<Term>> = q.predicates().clone();
    for _ in 0..rng.gen_range(0..=3) {
        let attr = *Attribute::ALL.choose(rng).unwrap();
        let pool = attr_pool(attr);
        preds
            .entry(attr)
            .or_default()
            .insert(Term::new(pool.choose(rng).unwrap().clone()).unwrap());
    }
    ConjunctiveQuery::new(preds).unwrap()
}

/// A record whose title, author and subject carry every term `q` asks for.
pub fn record_with_all(q: &ConjunctiveQuery) -> BibRecord {
    let join = |a| q.terms(a).map(|ts| ts.iter().map(Term::as_str).collect::<Vec<_>>().join(" "));
    let mut r = BibRecord::new(format!("added {}", join(Attribute::Title).unwrap_or_default())).unwrap();
    if let Some(a) = join(Attribute::Author) {
        r = r.with_author(a);
    }
    if let Some(s) = join(Attribute::Subject) {
        r = r.with_subject(s);
    }
    r
}

/// A record sharing no word with the vocabularies above.
pub fn record_with_none() -> BibRecord {
    BibRecord::new("Unrelated volume").unwrap().with_author("Nobody, Q.").with_subject("Miscellany")
}
