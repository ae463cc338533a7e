//! Relevance estimation over sampled statistics and database ranking.
//!
//! The estimate for database `i` and query `q` is
//! `N′ · Π tf(a, t) / N′` over every (attribute, term) pair of `q`, where
//! `N′` is the number of sampled records and `tf` the sampled tuple
//! frequency. Evaluation folds `s ← s · tf / N′` from `s = N′` over the tf
//! values sorted ascending, so the first step is exact (a single-term query
//! scores exactly its tf) and the result does not depend on term order.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dictionary::GlobalTermDictionary;
use crate::error::RankError;
use crate::knowledge::ContentKnowledge;
use crate::model::{Attribute, ConjunctiveQuery};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DbStatus {
    Scored,
    Unsupported,
    Failed,
}

impl DbStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            DbStatus::Scored => "scored",
            DbStatus::Unsupported => "unsupported",
            DbStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDatabase {
    pub db_id: String,
    pub score: f64,
    pub status: DbStatus,
    /// Last maintenance run could not refresh this database's snapshot.
    #[serde(default)]
    pub stale: bool,
}

/// Estimate from raw statistics: `tfs` are the query's tuple frequencies.
pub fn estimate(sampled_count: u64, tfs: &mut [u64]) -> f64 {
    if sampled_count == 0 || tfs.contains(&0) {
        return 0.0;
    }
    tfs.sort_unstable();
    let n = sampled_count as f64;
    tfs.iter().fold(n, |s, &tf| s * tf as f64 / n)
}

/// Estimated number of records of the sampled database that satisfy `q`.
pub fn score(q: &ConjunctiveQuery, ck: &ContentKnowledge, dict: &GlobalTermDictionary) -> f64 {
    let mut tfs: Vec<u64> = q.pairs().map(|(attr, term)| ck.tf(attr, term, dict)).collect();
    estimate(ck.sampled_count(), &mut tfs)
}

/// One database as seen by [`rank`].
#[derive(Debug, Clone, Copy)]
pub struct RankCandidate<'a> {
    pub knowledge: &'a ContentKnowledge,
    /// Attributes the database accepts.
    pub capabilities: &'a BTreeSet<Attribute>,
    /// The most recent sampling or search attempt errored.
    pub failed: bool,
    pub stale: bool,
}

/// Scores every candidate and orders them: scored databases by descending
/// score (ties by ascending id), then unsupported or failed ones by id.
pub fn rank(
    q: &ConjunctiveQuery,
    candidates: &[RankCandidate<'_>],
    dict: &GlobalTermDictionary,
) -> Result<Vec<RankedDatabase>, RankError> {
    if candidates.is_empty() {
        return Err(RankError::NoDatabases);
    }
    let mut ranked: Vec<RankedDatabase> = candidates
        .iter()
        .map(|c| {
            let status = if !q.attributes().all(|a| c.capabilities.contains(&a)) {
                DbStatus::Unsupported
            } else if c.failed {
                DbStatus::Failed
            } else {
                DbStatus::Scored
            };
            let score = match status {
                DbStatus::Scored => score(q, c.knowledge, dict),
                _ => 0.0,
            };
            RankedDatabase {
                db_id: c.knowledge.db_id().to_string(),
                score,
                status,
                stale: c.stale,
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        let a_scored = a.status == DbStatus::Scored;
        let b_scored = b.status == DbStatus::Scored;
        b_scored
            .cmp(&a_scored)
            .then_with(|| b.score.total_cmp(&a.score))
            .then_with(|| a.db_id.cmp(&b.db_id))
    });
    Ok(ranked)
}
