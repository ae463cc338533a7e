//! The broker: registered databases with their published content-knowledge
//! snapshots, the training library, the user query log and the maintenance
//! coordinator, behind one thread-safe handle.
//!
//! Locking rules: each database has one working copy of its statistics,
//! guarded by a mutex held for a whole sampling run (single writer). Rankers
//! only read the published snapshot, an `Arc` swapped in after a run
//! completes, so they never see a half-built state.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use chrono::{Local, NaiveDateTime, TimeZone};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::dictionary::GlobalTermDictionary;
use crate::error::{GatewayError, SamplerError, ServiceError, StorageError};
use crate::gateway::SearchTarget;
use crate::knowledge::{write_atomic, ContentKnowledge, RecordIdStore};
use crate::maintenance::{
    DatabaseRun, Journal, MaintenancePolicy, MaintenanceState, RunKind, RunStatus, RunSummary,
};
use crate::model::{build_query, Attribute, BibRecord, ConjunctiveQuery, IdentityKind, Stoplist};
use crate::protocol::{SearchHits, ERR_UNSUPPORTED};
use crate::query_filter::{filter_user_queries, Provenance, Timestamp, TrainingQueryLibrary, UserQueryLog};
use crate::ranker::{rank, DbStatus, RankCandidate};
use crate::registry::{DatabaseEntry, Registry};
use crate::sampler::{Sampler, SamplingEntry, SamplingReport, DEFAULT_BATCH_LIMIT};

pub const DEFAULT_CACHE_TTL: Duration = Duration::from_secs(30 * 60);
pub const DEFAULT_CACHE_CAPACITY: usize = 10_000;

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    /// Persistent state directory; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub batch_limit: usize,
    pub cache_ttl: Duration,
    pub cache_capacity: usize,
    pub policy: MaintenancePolicy,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            data_dir: None,
            batch_limit: DEFAULT_BATCH_LIMIT,
            cache_ttl: DEFAULT_CACHE_TTL,
            cache_capacity: DEFAULT_CACHE_CAPACITY,
            policy: MaintenancePolicy::default(),
        }
    }
}

impl BrokerConfig {
    pub fn in_dir(data_dir: impl Into<PathBuf>) -> Self {
        BrokerConfig {
            data_dir: Some(data_dir.into()),
            ..Self::default()
        }
    }
}

/// File locations inside a data directory.
pub mod paths {
    use std::path::{Path, PathBuf};

    pub fn dictionary(dir: &Path) -> PathBuf {
        dir.join("dictionary.log")
    }
    pub fn library(dir: &Path) -> PathBuf {
        dir.join("library.tsv")
    }
    pub fn user_log(dir: &Path) -> PathBuf {
        dir.join("userlog.tsv")
    }
    pub fn journal(dir: &Path) -> PathBuf {
        dir.join("journal.tsv")
    }
    pub fn report(dir: &Path, db_id: &str) -> PathBuf {
        dir.join("reports").join(format!("{db_id}.tsv"))
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    /// The last direct contact (search or sampling) could not reach the server.
    pub failed: bool,
    /// The last maintenance run could not refresh the snapshot.
    pub stale: bool,
    /// Attributes the server rejected even though the registry declares them.
    pub rejected: BTreeSet<Attribute>,
    pub last_error: Option<String>,
}

struct Working {
    ck: ContentKnowledge,
    store: RecordIdStore,
}

struct Slot {
    entry: DatabaseEntry,
    target: Arc<dyn SearchTarget>,
    published: RwLock<Arc<ContentKnowledge>>,
    working: Mutex<Working>,
    health: Mutex<Health>,
    report: Mutex<Option<SamplingReport>>,
}

impl Slot {
    fn snapshot(&self) -> Arc<ContentKnowledge> {
        Arc::clone(&self.published.read().unwrap_or_else(|e| e.into_inner()))
    }

    fn publish(&self, ck: &ContentKnowledge) {
        *self.published.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(ck.clone());
    }

    fn capabilities(&self) -> BTreeSet<Attribute> {
        let health = lock(&self.health);
        self.entry
            .capabilities
            .difference(&health.rejected)
            .copied()
            .collect()
    }

    /// Remembers attributes the server reports as unsupported.
    fn note_error(&self, e: &GatewayError) {
        if let GatewayError::Server { code, message } = e {
            if code == ERR_UNSUPPORTED {
                if let Ok(attr) = message.split_whitespace().next().unwrap_or("").parse::<Attribute>() {
                    lock(&self.health).rejected.insert(attr);
                }
            }
        }
    }
}

fn is_transport(e: &GatewayError) -> bool {
    !matches!(e, GatewayError::Server { .. })
}

/// Wraps a slot's target to learn from errors and count transport failures.
struct Observed<'a> {
    slot: &'a Slot,
    transport_failures: AtomicUsize,
}

impl<'a> Observed<'a> {
    fn new(slot: &'a Slot) -> Self {
        Observed {
            slot,
            transport_failures: AtomicUsize::new(0),
        }
    }
}

impl SearchTarget for Observed<'_> {
    fn db_id(&self) -> &str {
        &self.slot.entry.db_id
    }

    fn search(&self, q: &ConjunctiveQuery, max: usize) -> Result<SearchHits, GatewayError> {
        let result = self.slot.target.search(q, max);
        if let Err(e) = &result {
            self.slot.note_error(e);
            if is_transport(e) {
                self.transport_failures.fetch_add(1, Ordering::Relaxed);
            }
        }
        result
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub db_id: String,
    pub name: String,
    pub score: f64,
    pub status: DbStatus,
    pub stale: bool,
    pub sampled_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResponse {
    pub query: ConjunctiveQuery,
    pub ranking: Vec<RankedEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub db_id: String,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocatedRecord {
    pub locator: String,
    pub record: BibRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchFailure {
    Timeout,
    Refused,
    Protocol,
    Server,
    Io,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchErrorInfo {
    pub kind: SearchFailure,
    /// Server error code for `kind = server`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    pub message: String,
}

impl From<&GatewayError> for SearchErrorInfo {
    fn from(e: &GatewayError) -> Self {
        let (kind, code) = match e {
            GatewayError::Timeout => (SearchFailure::Timeout, None),
            GatewayError::ConnectionRefused => (SearchFailure::Refused, None),
            GatewayError::Protocol(_) => (SearchFailure::Protocol, None),
            GatewayError::Server { code, .. } => (SearchFailure::Server, Some(code.clone())),
            GatewayError::Io(_) => (SearchFailure::Io, None),
        };
        SearchErrorInfo {
            kind,
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResult {
    pub db_id: String,
    pub name: String,
    /// Hits reported by the server, possibly more than `records.len()`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<usize>,
    pub records: Vec<LocatedRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<SearchErrorInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseInfo {
    pub db_id: String,
    pub name: String,
    pub address: String,
    pub capabilities: BTreeSet<Attribute>,
    pub sampled_count: u64,
    pub version: u64,
    pub health: Health,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseStats {
    pub db_id: String,
    pub sampled_count: u64,
    pub tf_entries: usize,
    pub record_ids: usize,
    pub record_ids_by_kind: BTreeMap<IdentityKind, usize>,
    /// Bytes of the snapshot and record-id files on disk (0 in memory).
    pub stored_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub dictionary: BTreeMap<Attribute, usize>,
    pub databases: Vec<DatabaseStats>,
    pub synthetic_queries: usize,
    pub user_derived_queries: usize,
    pub logged_user_queries: usize,
}

struct CachedRecord {
    db_id: String,
    record: BibRecord,
    expires: Instant,
}

/// Records returned by recent searches, addressable by locator until they expire.
struct RecordCache {
    ttl: Duration,
    capacity: usize,
    next: u64,
    entries: HashMap<String, CachedRecord>,
    order: VecDeque<String>,
}

impl RecordCache {
    fn new(ttl: Duration, capacity: usize) -> Self {
        RecordCache {
            ttl,
            capacity: capacity.max(1),
            next: 0,
            entries: HashMap::new(),
            order: VecDeque::new(),
        }
    }

    fn evict(&mut self, now: Instant) {
        while let Some(front) = self.order.front() {
            let expired = self.entries.get(front).is_none_or(|c| c.expires <= now);
            if expired || self.entries.len() >= self.capacity {
                let key = self.order.pop_front().expect("front exists");
                self.entries.remove(&key);
            } else {
                break;
            }
        }
    }

    fn insert(&mut self, db_id: &str, record: BibRecord) -> String {
        let now = Instant::now();
        self.evict(now);
        self.next += 1;
        let locator = format!("r{:x}", self.next);
        self.entries.insert(
            locator.clone(),
            CachedRecord {
                db_id: db_id.to_string(),
                record,
                expires: now + self.ttl,
            },
        );
        self.order.push_back(locator.clone());
        locator
    }

    fn get(&self, db_id: &str, locator: &str) -> Option<BibRecord> {
        self.entries
            .get(locator)
            .filter(|c| c.db_id == db_id && c.expires > Instant::now())
            .map(|c| c.record.clone())
    }
}

pub struct BrokerService {
    config: BrokerConfig,
    stoplist: Stoplist,
    dict: GlobalTermDictionary,
    slots: Vec<Slot>,
    library: Mutex<TrainingQueryLibrary>,
    log: Mutex<UserQueryLog>,
    /// Held for the duration of a maintenance run; also guards the state.
    coordinator: Mutex<MaintenanceState>,
    journal: Mutex<Journal>,
    cache: Mutex<RecordCache>,
    started: NaiveDateTime,
}

impl BrokerService {
    /// Connects to every database in `registry` over the network.
    pub fn open(config: BrokerConfig, registry: &Registry, stoplist: Stoplist) -> Result<Self, ServiceError> {
        let targets = registry
            .entries()
            .iter()
            .map(|e| (e.clone(), Arc::new(e.remote()) as Arc<dyn SearchTarget>))
            .collect();
        Self::with_targets(config, targets, stoplist)
    }

    /// Builds a broker over explicit search targets (in-process corpora in tests).
    pub fn with_targets(
        config: BrokerConfig,
        targets: Vec<(DatabaseEntry, Arc<dyn SearchTarget>)>,
        stoplist: Stoplist,
    ) -> Result<Self, ServiceError> {
        let dir = config.data_dir.clone();
        let dict = match &dir {
            Some(d) => GlobalTermDictionary::open(&paths::dictionary(d))?,
            None => GlobalTermDictionary::in_memory(),
        };
        let mut slots = Vec::with_capacity(targets.len());
        for (entry, target) in targets {
            let (ck, store) = match &dir {
                Some(d) => (
                    ContentKnowledge::load(d, &entry.db_id)?,
                    RecordIdStore::load(d, &entry.db_id)?,
                ),
                None => (ContentKnowledge::new(&entry.db_id), RecordIdStore::new(&entry.db_id)),
            };
            let report = match &dir {
                Some(d) => load_report(d, &entry.db_id)?,
                None => None,
            };
            slots.push(Slot {
                published: RwLock::new(Arc::new(ck.clone())),
                working: Mutex::new(Working { ck, store }),
                health: Mutex::new(Health::default()),
                report: Mutex::new(report),
                entry,
                target,
            });
        }
        let library = match &dir {
            Some(d) if paths::library(d).exists() => TrainingQueryLibrary::load(&paths::library(d))?,
            _ => TrainingQueryLibrary::new(),
        };
        let (log, journal, state) = match &dir {
            Some(d) => (
                UserQueryLog::open(&paths::user_log(d))?,
                Journal::open(&paths::journal(d))?,
                MaintenanceState::load(d)?,
            ),
            None => (UserQueryLog::in_memory(), Journal::in_memory(), MaintenanceState::default()),
        };
        let cache = RecordCache::new(config.cache_ttl, config.cache_capacity);
        Ok(BrokerService {
            config,
            stoplist,
            dict,
            slots,
            library: Mutex::new(library),
            log: Mutex::new(log),
            coordinator: Mutex::new(state),
            journal: Mutex::new(journal),
            cache: Mutex::new(cache),
            started: Local::now().naive_local(),
        })
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    pub fn stoplist(&self) -> &Stoplist {
        &self.stoplist
    }

    pub fn dictionary(&self) -> &GlobalTermDictionary {
        &self.dict
    }

    pub fn db_ids(&self) -> Vec<String> {
        self.slots.iter().map(|s| s.entry.db_id.clone()).collect()
    }

    fn slot(&self, db_id: &str) -> Result<&Slot, ServiceError> {
        self.slots
            .iter()
            .find(|s| s.entry.db_id == db_id)
            .ok_or_else(|| ServiceError::UnknownDatabase(db_id.to_string()))
    }

    /// The currently published snapshot of one database.
    pub fn snapshot(&self, db_id: &str) -> Result<Arc<ContentKnowledge>, ServiceError> {
        Ok(self.slot(db_id)?.snapshot())
    }

    pub fn health(&self, db_id: &str) -> Result<Health, ServiceError> {
        Ok(lock(&self.slot(db_id)?.health).clone())
    }

    pub fn databases(&self) -> Vec<DatabaseInfo> {
        self.slots
            .iter()
            .map(|s| {
                let ck = s.snapshot();
                DatabaseInfo {
                    db_id: s.entry.db_id.clone(),
                    name: s.entry.name.clone(),
                    address: s.entry.address(),
                    capabilities: s.capabilities(),
                    sampled_count: ck.sampled_count(),
                    version: ck.version(),
                    health: lock(&s.health).clone(),
                }
            })
            .collect()
    }

    /// Ranks all databases for `q` against the published snapshots. Does not
    /// log the query or contact any server.
    pub fn rank(&self, q: &ConjunctiveQuery) -> Result<Vec<RankedEntry>, ServiceError> {
        let snapshots: Vec<Arc<ContentKnowledge>> = self.slots.iter().map(Slot::snapshot).collect();
        let caps: Vec<BTreeSet<Attribute>> = self.slots.iter().map(Slot::capabilities).collect();
        let health: Vec<Health> = self.slots.iter().map(|s| lock(&s.health).clone()).collect();
        let candidates: Vec<RankCandidate<'_>> = snapshots
            .iter()
            .zip(&caps)
            .zip(&health)
            .map(|((ck, caps), h)| RankCandidate {
                knowledge: ck,
                capabilities: caps,
                failed: h.failed,
                stale: h.stale,
            })
            .collect();
        let ranked = rank(q, &candidates, &self.dict)?;
        Ok(ranked
            .into_iter()
            .map(|r| {
                let i = self
                    .slots
                    .iter()
                    .position(|s| s.entry.db_id == r.db_id)
                    .expect("ranked ids come from slots");
                RankedEntry {
                    name: self.slots[i].entry.name.clone(),
                    sampled_count: snapshots[i].sampled_count(),
                    db_id: r.db_id,
                    score: r.score,
                    status: r.status,
                    stale: r.stale,
                }
            })
            .collect())
    }

    /// Builds a query from raw field text, appends it to the user query log
    /// and ranks it.
    pub fn rank_query(
        &self,
        title: &str,
        author: &str,
        subject: &str,
        session: Option<&str>,
    ) -> Result<RankResponse, ServiceError> {
        let query = build_query(title, author, subject, &self.stoplist)?;
        if self.slots.is_empty() {
            return Err(crate::error::RankError::NoDatabases.into());
        }
        lock(&self.log).append(query.clone(), session.unwrap_or("-"))?;
        let ranking = self.rank(&query)?;
        Ok(RankResponse { query, ranking })
    }

    /// Sends `q` to each selected database concurrently. Results follow the
    /// order of `selections`; one database failing does not affect the others.
    pub fn submit_query(
        &self,
        q: &ConjunctiveQuery,
        selections: &[Selection],
    ) -> Result<Vec<SubmitResult>, ServiceError> {
        if selections.is_empty() {
            return Err(ServiceError::NoSelection);
        }
        let slots: Vec<&Slot> = selections
            .iter()
            .map(|s| self.slot(&s.db_id))
            .collect::<Result<_, _>>()?;
        let outcomes: Vec<Result<SearchHits, GatewayError>> = thread::scope(|scope| {
            let handles: Vec<_> = slots
                .iter()
                .zip(selections)
                .map(|(slot, sel)| scope.spawn(move || slot.target.search(q, sel.max)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join().unwrap_or_else(|_| {
                        Err(GatewayError::Io(std::io::Error::other("search worker panicked")))
                    })
                })
                .collect()
        });
        let mut cache = lock(&self.cache);
        Ok(slots
            .iter()
            .zip(outcomes)
            .map(|(slot, outcome)| {
                let db_id = slot.entry.db_id.clone();
                let name = slot.entry.name.clone();
                match outcome {
                    Ok(hits) => {
                        {
                            let mut h = lock(&slot.health);
                            h.failed = false;
                        }
                        let records = hits
                            .records
                            .into_iter()
                            .map(|record| LocatedRecord {
                                locator: cache.insert(&db_id, record.clone()),
                                record,
                            })
                            .collect();
                        SubmitResult {
                            db_id,
                            name,
                            total: Some(hits.total),
                            records,
                            error: None,
                        }
                    }
                    Err(e) => {
                        slot.note_error(&e);
                        if is_transport(&e) {
                            let mut h = lock(&slot.health);
                            h.failed = true;
                            h.last_error = Some(e.to_string());
                        }
                        warn!("{db_id}: search failed: {e}");
                        SubmitResult {
                            db_id,
                            name,
                            total: None,
                            records: Vec::new(),
                            error: Some(SearchErrorInfo::from(&e)),
                        }
                    }
                }
            })
            .collect())
    }

    /// A record returned by a recent [`submit_query`](Self::submit_query), if not yet expired.
    pub fn record(&self, db_id: &str, locator: &str) -> Option<BibRecord> {
        lock(&self.cache).get(db_id, locator)
    }

    pub fn library(&self) -> TrainingQueryLibrary {
        lock(&self.library).clone()
    }

    /// Adds the entries of `other` that the library does not already hold.
    pub fn import_library(&self, other: &TrainingQueryLibrary) -> Result<usize, ServiceError> {
        let mut lib = lock(&self.library);
        let added = lib.merge(other);
        if added > 0 {
            self.save_library(&lib)?;
        }
        Ok(added)
    }

    fn save_library(&self, lib: &TrainingQueryLibrary) -> Result<(), StorageError> {
        match &self.config.data_dir {
            Some(d) => lib.save(&paths::library(d)),
            None => Ok(()),
        }
    }

    pub fn user_log_len(&self) -> usize {
        lock(&self.log).len()
    }

    /// Latest sampling report of a database, including one still in progress.
    pub fn report(&self, db_id: &str) -> Result<Option<SamplingReport>, ServiceError> {
        Ok(lock(&self.slot(db_id)?.report).clone())
    }

    pub fn journal(&self) -> Vec<RunSummary> {
        lock(&self.journal).runs().to_vec()
    }

    fn persist(&self, w: &Working) -> Result<(), StorageError> {
        if let Some(d) = &self.config.data_dir {
            w.ck.save(d)?;
            w.store.save(d)?;
        }
        Ok(())
    }

    fn save_report(&self, report: &SamplingReport) {
        if let Some(d) = &self.config.data_dir {
            if let Err(e) = write_atomic(&paths::report(d, &report.db_id), report.to_tsv().as_bytes()) {
                warn!("{}: could not save sampling report: {e}", report.db_id);
            }
        }
    }

    /// Runs `queries` through the sampling pipeline of one slot, merging into
    /// its current statistics. The working lock is held throughout.
    fn sample_into(
        &self,
        slot: &Slot,
        w: &mut Working,
        queries: &[ConjunctiveQuery],
        on_entry: &mut dyn FnMut(&SamplingEntry),
    ) -> (Result<SamplingReport, SamplerError>, usize) {
        let caps = slot.capabilities();
        let answerable: Vec<ConjunctiveQuery> = queries
            .iter()
            .filter(|q| q.attributes().all(|a| caps.contains(&a)))
            .cloned()
            .collect();
        if answerable.len() < queries.len() {
            info!(
                "{}: skipping {} training queries with unsupported attributes",
                slot.entry.db_id,
                queries.len() - answerable.len()
            );
        }
        let observed = Observed::new(slot);
        let sampler = Sampler::new(&self.dict, &self.stoplist).with_batch_limit(self.config.batch_limit);
        let result = sampler.sample_database(&observed, &answerable, &mut w.ck, &mut w.store, on_entry);
        (result, observed.transport_failures.load(Ordering::Relaxed))
    }

    /// Samples one database with the whole training library, adding to what
    /// it already knows. Progress is visible through [`report`](Self::report)
    /// while the run is going.
    pub fn sample_database(&self, db_id: &str) -> Result<SamplingReport, ServiceError> {
        let queries = lock(&self.library).queries();
        self.sample_database_with(db_id, &queries)
    }

    pub fn sample_database_with(
        &self,
        db_id: &str,
        queries: &[ConjunctiveQuery],
    ) -> Result<SamplingReport, ServiceError> {
        let slot = self.slot(db_id)?;
        if queries.is_empty() {
            return Err(ServiceError::EmptyLibrary);
        }
        let mut w = lock(&slot.working);
        *lock(&slot.report) = Some(SamplingReport::new(db_id, w.ck.sampled_count()));
        let (result, _) = self.sample_into(slot, &mut w, queries, &mut |entry| {
            if let Some(r) = lock(&slot.report).as_mut() {
                r.entries.push(entry.clone());
            }
        });
        match result {
            Ok(report) => {
                slot.publish(&w.ck);
                self.persist(&w)?;
                if report.entries.iter().any(|e| e.error.is_none()) {
                    let mut h = lock(&slot.health);
                    h.failed = false;
                    h.last_error = None;
                }
                self.save_report(&report);
                *lock(&slot.report) = Some(report.clone());
                Ok(report)
            }
            Err(e) => {
                let mut h = lock(&slot.health);
                h.failed = true;
                h.last_error = Some(e.to_string());
                Err(e.into())
            }
        }
    }

    /// Samples several databases concurrently, one worker each.
    pub fn sample_many(&self, db_ids: &[String]) -> Vec<(String, Result<SamplingReport, ServiceError>)> {
        thread::scope(|scope| {
            let handles: Vec<_> = db_ids
                .iter()
                .map(|id| (id.clone(), scope.spawn(move || self.sample_database(id))))
                .collect();
            handles
                .into_iter()
                .map(|(id, h)| {
                    let r = h.join().unwrap_or_else(|_| {
                        Err(ServiceError::Sampler(SamplerError::DatabaseUnreachable {
                            db_id: id.clone(),
                            reason: "sampling worker panicked".into(),
                        }))
                    });
                    (id, r)
                })
                .collect()
        })
    }

    /// Promotes user queries logged since the last scan; returns the accepted ones.
    fn promote_user_queries(&self, state: &mut MaintenanceState) -> Result<Vec<ConjunctiveQuery>, ServiceError> {
        let log = lock(&self.log);
        let mut lib = lock(&self.library);
        let accepted = filter_user_queries(&log, &mut lib, state.log_cursor);
        state.log_cursor = log.last_timestamp().or(state.log_cursor);
        if !accepted.is_empty() {
            self.save_library(&lib)?;
        }
        Ok(accepted)
    }

    fn finish_run(&self, state: &MaintenanceState, summary: &RunSummary) -> Result<(), ServiceError> {
        if let Some(d) = &self.config.data_dir {
            state.save(d)?;
        }
        lock(&self.journal).append(summary.clone())?;
        info!(
            "{} update: {} queries, {} promoted, {} databases, {} failed",
            summary.kind.as_str(),
            summary.queries,
            summary.promoted,
            summary.databases.len(),
            summary.failed()
        );
        Ok(())
    }

    fn for_each_slot<F>(&self, f: F) -> Vec<DatabaseRun>
    where
        F: Fn(&Slot) -> DatabaseRun + Sync,
    {
        thread::scope(|scope| {
            let handles: Vec<_> = self.slots.iter().map(|s| scope.spawn(|| f(s))).collect();
            handles
                .into_iter()
                .zip(&self.slots)
                .map(|(h, s)| {
                    h.join().unwrap_or_else(|_| DatabaseRun {
                        db_id: s.entry.db_id.clone(),
                        status: RunStatus::Failed,
                        returned: 0,
                        new: 0,
                        sampled_count: s.snapshot().sampled_count(),
                        error: Some("worker panicked".into()),
                    })
                })
                .collect()
        })
    }

    /// Promotes new user queries and sends only those to every database,
    /// adding the new records to the existing statistics.
    pub fn daily_update(&self) -> Result<RunSummary, ServiceError> {
        let mut state = lock(&self.coordinator);
        let mut summary = RunSummary::new(RunKind::Daily, Timestamp::now());
        let accepted = self.promote_user_queries(&mut state)?;
        summary.promoted = accepted.len();
        summary.queries = accepted.len();
        if !accepted.is_empty() {
            summary.databases = self.for_each_slot(|slot| {
                let mut w = lock(&slot.working);
                let (result, _) = self.sample_into(slot, &mut w, &accepted, &mut |_| {});
                let run = match result {
                    Ok(report) => {
                        slot.publish(&w.ck);
                        let status = if report.failures() == 0 { RunStatus::Ok } else { RunStatus::Partial };
                        let error = self.persist(&w).err().map(|e| e.to_string());
                        DatabaseRun {
                            db_id: slot.entry.db_id.clone(),
                            status: if error.is_some() { RunStatus::Failed } else { status },
                            returned: report.total_returned(),
                            new: report.total_new(),
                            sampled_count: w.ck.sampled_count(),
                            error,
                        }
                    }
                    Err(e) => DatabaseRun {
                        db_id: slot.entry.db_id.clone(),
                        status: RunStatus::Failed,
                        returned: 0,
                        new: 0,
                        sampled_count: w.ck.sampled_count(),
                        error: Some(e.to_string()),
                    },
                };
                if run.status == RunStatus::Failed {
                    let mut h = lock(&slot.health);
                    h.stale = true;
                    h.last_error = run.error.clone();
                }
                run
            });
        }
        state.last_daily = Some(summary.started);
        self.finish_run(&state, &summary)?;
        Ok(summary)
    }

    /// Promotes pending user queries, then rebuilds every database from
    /// scratch with the full training library. A database whose rebuild hits
    /// any transport failure keeps its previous snapshot and is marked stale.
    pub fn monthly_update(&self) -> Result<RunSummary, ServiceError> {
        let mut state = lock(&self.coordinator);
        let mut summary = RunSummary::new(RunKind::Monthly, Timestamp::now());
        summary.promoted = self.promote_user_queries(&mut state)?.len();
        let queries = lock(&self.library).queries();
        summary.queries = queries.len();
        if !queries.is_empty() {
            summary.databases = self.for_each_slot(|slot| {
                let mut w = lock(&slot.working);
                let mut fresh = Working {
                    ck: w.ck.clone(),
                    store: w.store.clone(),
                };
                fresh.ck.reset();
                fresh.store.reset();
                let (result, transport_failures) = self.sample_into(slot, &mut fresh, &queries, &mut |_| {});
                let outcome = match result {
                    Ok(report) if transport_failures == 0 => Ok(report),
                    Ok(_) => Err(format!("{transport_failures} training queries could not reach the server")),
                    Err(e) => Err(e.to_string()),
                };
                let outcome = outcome.and_then(|report| {
                    self.persist(&fresh).map_err(|e| e.to_string())?;
                    Ok(report)
                });
                match outcome {
                    Ok(report) => {
                        *w = fresh;
                        slot.publish(&w.ck);
                        let mut h = lock(&slot.health);
                        h.stale = false;
                        h.failed = false;
                        h.last_error = None;
                        DatabaseRun {
                            db_id: slot.entry.db_id.clone(),
                            status: if report.failures() == 0 { RunStatus::Ok } else { RunStatus::Partial },
                            returned: report.total_returned(),
                            new: report.total_new(),
                            sampled_count: w.ck.sampled_count(),
                            error: None,
                        }
                    }
                    Err(error) => {
                        warn!("{}: rebuild failed, keeping previous snapshot: {error}", slot.entry.db_id);
                        let mut h = lock(&slot.health);
                        h.stale = true;
                        h.last_error = Some(error.clone());
                        DatabaseRun {
                            db_id: slot.entry.db_id.clone(),
                            status: RunStatus::Failed,
                            returned: 0,
                            new: 0,
                            sampled_count: w.ck.sampled_count(),
                            error: Some(error),
                        }
                    }
                }
            });
        }
        state.last_daily = Some(summary.started);
        state.last_monthly = Some(summary.started);
        self.finish_run(&state, &summary)?;
        Ok(summary)
    }

    pub fn maintenance_state(&self) -> MaintenanceState {
        lock(&self.coordinator).clone()
    }

    fn local_time(&self, t: Option<Timestamp>) -> NaiveDateTime {
        t.and_then(|t| Local.timestamp_millis_opt(t.0 as i64).single())
            .map(|d| d.naive_local())
            .unwrap_or(self.started)
    }

    /// Runs whichever scheduled update is due at `now`, if any.
    pub fn run_due(&self, now: NaiveDateTime) -> Result<Option<RunSummary>, ServiceError> {
        let due = {
            let state = lock(&self.coordinator);
            self.config.policy.due(
                self.local_time(state.last_daily),
                self.local_time(state.last_monthly),
                now,
            )
        };
        match due {
            Some(RunKind::Monthly) => self.monthly_update().map(Some),
            Some(RunKind::Daily) => self.daily_update().map(Some),
            None => Ok(None),
        }
    }

    /// [`run_due`](Self::run_due) at the current local time.
    pub fn run_due_now(&self) -> Result<Option<RunSummary>, ServiceError> {
        self.run_due(Local::now().naive_local())
    }

    pub fn stats(&self) -> Stats {
        let dictionary = Attribute::ALL.into_iter().map(|a| (a, self.dict.len(a))).collect();
        let databases = self
            .slots
            .iter()
            .map(|s| {
                let w = lock(&s.working);
                DatabaseStats {
                    db_id: s.entry.db_id.clone(),
                    sampled_count: w.ck.sampled_count(),
                    tf_entries: w.ck.entry_count(),
                    record_ids: w.store.len(),
                    record_ids_by_kind: IdentityKind::ALL.into_iter().map(|k| (k, w.store.len_of(k))).collect(),
                    stored_bytes: self.config.data_dir.as_deref().map_or(0, |d| stored_bytes(d, &s.entry.db_id)),
                }
            })
            .collect();
        let lib = lock(&self.library);
        Stats {
            dictionary,
            databases,
            synthetic_queries: lib.count(Provenance::Synthetic),
            user_derived_queries: lib.count(Provenance::UserDerived),
            logged_user_queries: lock(&self.log).len(),
        }
    }
}

fn load_report(dir: &Path, db_id: &str) -> Result<Option<SamplingReport>, StorageError> {
    let path = paths::report(dir, db_id);
    match fs::read_to_string(&path) {
        Ok(text) => SamplingReport::from_tsv(db_id, &text)
            .map(Some)
            .map_err(|(line, m)| StorageError::corrupt(&path, line, m)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(StorageError::io(&path, e)),
    }
}

fn stored_bytes(dir: &Path, db_id: &str) -> u64 {
    let ck = fs::metadata(ContentKnowledge::snapshot_path(dir, db_id)).map_or(0, |m| m.len());
    ck + RecordIdStore::stored_bytes(dir, db_id)
}
