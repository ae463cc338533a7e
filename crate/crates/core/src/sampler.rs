//! Content sampling: synthetic training-query generation and the
//! query → record filter → summarizer pipeline for one database.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use log::{info, warn};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::GlobalTermDictionary;
use crate::error::{GatewayError, SamplerError};
use crate::gateway::SearchTarget;
use crate::knowledge::{ContentKnowledge, RecordIdStore};
use crate::model::{distinct_terms, Attribute, BibRecord, ConjunctiveQuery, Stoplist, Term};
use crate::query_filter::Timestamp;

/// Records fetched per training query unless configured otherwise.
pub const DEFAULT_BATCH_LIMIT: usize = 100;

/// Most terms a synthetic predicate may carry.
pub const MAX_SYNTHETIC_TERMS: usize = 4;

/// Attempts allowed per requested query before giving up.
pub const RETRIES_PER_QUERY: usize = 100;

/// Which attributes a synthetic query draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryMode {
    Title,
    Subject,
    TitleAndSubject,
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    /// Relative weights of Title, Subject and TitleAndSubject.
    pub mode_weights: [u32; 3],
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            mode_weights: [1, 1, 1],
        }
    }
}

impl SyntheticConfig {
    fn pick_mode<R: Rng>(&self, rng: &mut R) -> QueryMode {
        let total: u32 = self.mode_weights.iter().sum();
        let mut x = rng.gen_range(0..total);
        for (mode, w) in [QueryMode::Title, QueryMode::Subject, QueryMode::TitleAndSubject]
            .into_iter()
            .zip(self.mode_weights)
        {
            if x < w {
                return mode;
            }
            x -= w;
        }
        unreachable!("weights sum to total")
    }
}

/// Uniform draw from `1..=min(4, available)`.
pub fn term_count_choice<R: Rng + ?Sized>(rng: &mut R, available: usize) -> usize {
    assert!(available >= 1, "at least one term must be available");
    rng.gen_range(1..=available.min(MAX_SYNTHETIC_TERMS))
}

fn draw_terms<R: Rng>(rng: &mut R, candidates: &[Term]) -> Option<BTreeSet<Term>> {
    if candidates.is_empty() {
        return None;
    }
    let n = term_count_choice(rng, candidates.len());
    Some(
        index::sample(rng, candidates.len(), n)
            .into_iter()
            .map(|i| candidates[i].clone())
            .collect(),
    )
}

/// Builds one query from `record`, or `None` when a chosen attribute has no usable terms.
pub fn query_from_record<R: Rng>(
    rng: &mut R,
    record: &BibRecord,
    mode: QueryMode,
    stoplist: &Stoplist,
) -> Option<ConjunctiveQuery> {
    let mut predicates = BTreeMap::new();
    if matches!(mode, QueryMode::Title | QueryMode::TitleAndSubject) {
        let terms = distinct_terms(&record.title, stoplist);
        predicates.insert(Attribute::Title, draw_terms(rng, &terms)?);
    }
    if matches!(mode, QueryMode::Subject | QueryMode::TitleAndSubject) {
        if record.subjects.is_empty() {
            return None;
        }
        // all subject terms come from one value
        let value = &record.subjects[rng.gen_range(0..record.subjects.len())];
        let terms = distinct_terms(value, stoplist);
        predicates.insert(Attribute::Subject, draw_terms(rng, &terms)?);
    }
    ConjunctiveQuery::new(predicates).ok()
}

pub fn generate_synthetic_queries(
    corpus: &[BibRecord],
    k: usize,
    seed: u64,
    stoplist: &Stoplist,
) -> Result<Vec<ConjunctiveQuery>, SamplerError> {
    generate_synthetic_queries_with(&SyntheticConfig::default(), corpus, k, seed, stoplist)
}

/// Draws `k` queries: pick a random record, a random attribute mode, then up
/// to four distinct non-stopword terms per chosen attribute. Deterministic in
/// `seed`.
pub fn generate_synthetic_queries_with(
    config: &SyntheticConfig,
    corpus: &[BibRecord],
    k: usize,
    seed: u64,
    stoplist: &Stoplist,
) -> Result<Vec<ConjunctiveQuery>, SamplerError> {
    if corpus.is_empty() {
        return Err(SamplerError::EmptyCorpus);
    }
    if k == 0 {
        return Err(SamplerError::ZeroCount);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k);
    let budget = k.saturating_mul(RETRIES_PER_QUERY);
    for _ in 0..budget {
        if out.len() == k {
            break;
        }
        let record = &corpus[rng.gen_range(0..corpus.len())];
        let mode = config.pick_mode(&mut rng);
        if let Some(q) = query_from_record(&mut rng, record, mode, stoplist) {
            out.push(q);
        }
    }
    if out.len() < k {
        return Err(SamplerError::InsufficientCorpus {
            requested: k,
            produced: out.len(),
        });
    }
    Ok(out)
}

/// Progress of one training query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingEntry {
    pub query_index: usize,
    pub returned: usize,
    pub new: usize,
    /// N′ after this query.
    pub cumulative: u64,
    pub timestamp: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SamplingReport {
    pub db_id: String,
    pub initial_count: u64,
    pub entries: Vec<SamplingEntry>,
}

impl SamplingReport {
    pub fn new(db_id: impl Into<String>, initial_count: u64) -> Self {
        SamplingReport {
            db_id: db_id.into(),
            initial_count,
            entries: Vec::new(),
        }
    }

    pub fn final_count(&self) -> u64 {
        self.entries
            .last()
            .map(|e| e.cumulative)
            .unwrap_or(self.initial_count)
    }

    pub fn total_returned(&self) -> usize {
        self.entries.iter().map(|e| e.returned).sum()
    }

    pub fn total_new(&self) -> usize {
        self.entries.iter().map(|e| e.new).sum()
    }

    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.error.is_some()).count()
    }

    /// New records summed over consecutive buckets of `bucket` queries.
    pub fn new_per_bucket(&self, bucket: usize) -> Vec<usize> {
        self.entries
            .chunks(bucket.max(1))
            .map(|c| c.iter().map(|e| e.new).sum())
            .collect()
    }

    /// `query\treturned\tnew\tcumulative\ttimestamp\terror` rows under a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("query\treturned\tnew\tcumulative\ttimestamp\terror\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.query_index,
                e.returned,
                e.new,
                e.cumulative,
                e.timestamp,
                e.error.as_deref().map(one_line).unwrap_or_else(|| "-".into())
            );
        }
        out
    }

    /// Parses [`to_tsv`](Self::to_tsv) output. The initial count is recovered
    /// from the first row (its cumulative count minus its new records).
    pub fn from_tsv(db_id: &str, text: &str) -> Result<Self, (usize, String)> {
        let mut report = SamplingReport::new(db_id, 0);
        for (idx, line) in text.lines().enumerate().skip(1) {
            let bad = |m: &str| (idx + 1, m.to_string());
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|_| bad("bad number"));
            report.entries.push(SamplingEntry {
                query_index: num(f[0])? as usize,
                returned: num(f[1])? as usize,
                new: num(f[2])? as usize,
                cumulative: num(f[3])?,
                timestamp: Timestamp(num(f[4])?),
                error: (f[5] != "-").then(|| f[5].to_string()),
            });
        }
        if let Some(first) = report.entries.first() {
            report.initial_count = first.cumulative.saturating_sub(first.new as u64);
        }
        Ok(report)
    }
}

fn one_line(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

/// Shared, read-only context for sampling runs.
#[derive(Debug, Clone, Copy)]
pub struct Sampler<'a> {
    pub dict: &'a GlobalTermDictionary,
    pub stoplist: &'a Stoplist,
    pub batch_limit: usize,
}

impl<'a> Sampler<'a> {
    pub fn new(dict: &'a GlobalTermDictionary, stoplist: &'a Stoplist) -> Self {
        Sampler {
            dict,
            stoplist,
            batch_limit: DEFAULT_BATCH_LIMIT,
        }
    }

    pub fn with_batch_limit(mut self, limit: usize) -> Self {
        self.batch_limit = limit;
        self
    }

    /// Submits every query in order, filtering and summarizing the results.
    /// Per-query failures are recorded and skipped. If the database refuses
    /// (or times out) before any query completes, the run stops with
    /// [`SamplerError::DatabaseUnreachable`] and leaves `ck`/`store` untouched.
    pub fn sample_database(
        &self,
        db: &dyn SearchTarget,
        queries: &[ConjunctiveQuery],
        ck: &mut ContentKnowledge,
        store: &mut RecordIdStore,
        on_entry: &mut dyn FnMut(&SamplingEntry),
    ) -> Result<SamplingReport, SamplerError> {
        let mut report = SamplingReport::new(db.db_id(), ck.sampled_count());
        let mut completed = 0usize;
        for (query_index, q) in queries.iter().enumerate() {
            let entry = match db.search(q, self.batch_limit) {
                Ok(hits) => {
                    completed += 1;
                    let returned = hits.records.len();
                    let fresh = store.filter_new(hits.records);
                    ck.summarize(self.dict, self.stoplist, &fresh)?;
                    SamplingEntry {
                        query_index,
                        returned,
                        new: fresh.len(),
                        cumulative: ck.sampled_count(),
                        timestamp: Timestamp::now(),
                        error: None,
                    }
                }
                Err(e @ (GatewayError::ConnectionRefused | GatewayError::Timeout)) if completed == 0 => {
                    warn!("{}: unreachable: {e}", db.db_id());
                    return Err(SamplerError::DatabaseUnreachable {
                        db_id: db.db_id().to_string(),
                        reason: e.to_string(),
                    });
                }
                Err(e) => {
                    warn!("{}: training query {query_index} failed: {e}", db.db_id());
                    SamplingEntry {
                        query_index,
                        returned: 0,
                        new: 0,
                        cumulative: ck.sampled_count(),
                        timestamp: Timestamp::now(),
                        error: Some(e.to_string()),
                    }
                }
            };
            on_entry(&entry);
            report.entries.push(entry);
        }
        info!(
            "{}: sampled {} queries, N' {} -> {}",
            db.db_id(),
            queries.len(),
            report.initial_count,
            report.final_count()
        );
        Ok(report)
    }
}
