//! Per-database sampled statistics and the record filter.
//!
//! [`ContentKnowledge`] holds the number of sampled records and, for every
//! (attribute, global term id), the number of sampled records containing that
//! term in that attribute. [`RecordIdStore`] remembers which records have
//! already been summarized so overlapping training-query results are counted
//! once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dictionary::{GlobalTermDictionary, TermId};
use crate::error::StorageError;
use crate::model::{record_identity, Attribute, BibRecord, IdentityKind, Stoplist, Term};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentKnowledge {
    db_id: String,
    sampled_count: u64,
    tf: BTreeMap<(Attribute, TermId), u64>,
    version: u64,
}

impl ContentKnowledge {
    pub fn new(db_id: impl Into<String>) -> Self {
        ContentKnowledge {
            db_id: db_id.into(),
            sampled_count: 0,
            tf: BTreeMap::new(),
            version: 0,
        }
    }

    pub fn db_id(&self) -> &str {
        &self.db_id
    }

    /// N′: number of distinct records summarized since the last reset.
    pub fn sampled_count(&self) -> u64 {
        self.sampled_count
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Number of stored (attribute, term) entries.
    pub fn entry_count(&self) -> usize {
        self.tf.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (Attribute, TermId, u64)> + '_ {
        self.tf.iter().map(|((a, id), n)| (*a, *id, *n))
    }

    /// Tuple frequency of `term` in `attr`; 0 when unknown.
    pub fn tf(&self, attr: Attribute, term: &Term, dict: &GlobalTermDictionary) -> u64 {
        dict.lookup(attr, term)
            .map(|id| self.tf_by_id(attr, id))
            .unwrap_or(0)
    }

    pub fn tf_by_id(&self, attr: Attribute, id: TermId) -> u64 {
        self.tf.get(&(attr, id)).copied().unwrap_or(0)
    }

    /// Adds already-filtered records: each record bumps N′ once and every
    /// distinct term it carries per attribute once.
    pub fn summarize(
        &mut self,
        dict: &GlobalTermDictionary,
        stoplist: &Stoplist,
        records: &[BibRecord],
    ) -> Result<(), StorageError> {
        for record in records {
            for attr in Attribute::ALL {
                for term in record.attribute_terms(attr, stoplist) {
                    let id = dict.get_or_assign(attr, &term)?;
                    *self.tf.entry((attr, id)).or_insert(0) += 1;
                }
            }
            self.sampled_count += 1;
        }
        self.version += 1;
        debug_assert!(self.tf.values().all(|&n| n <= self.sampled_count));
        Ok(())
    }

    /// Clears the statistics and bumps the version. The dictionary is untouched.
    pub fn reset(&mut self) {
        self.sampled_count = 0;
        self.tf.clear();
        self.version += 1;
    }

    /// Tab-separated snapshot: a `#ck` header with db id and N′, then one
    /// `attribute\tterm-id\ttf` line per entry in (attribute, id) order.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("#ck\t{}\t{}\n", self.db_id, self.sampled_count);
        for ((attr, id), n) in &self.tf {
            let _ = writeln!(out, "{attr}\t{id}\t{n}");
        }
        out
    }

    pub fn from_tsv(text: &str, version: u64) -> Result<Self, String> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or("missing header")?;
        let h: Vec<&str> = header.split('\t').collect();
        let [tag, db_id, count] = h.as_slice() else {
            return Err("malformed header".into());
        };
        if *tag != "#ck" {
            return Err("malformed header".into());
        }
        let sampled_count: u64 = count.parse().map_err(|_| "bad record count")?;
        let mut tf = BTreeMap::new();
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let [attr, id, n] = f.as_slice() else {
                return Err(format!("line {}: expected three fields", idx + 1));
            };
            let attr: Attribute = attr.parse().map_err(|e| format!("line {}: {e}", idx + 1))?;
            let id: u32 = id.parse().map_err(|_| format!("line {}: bad term id", idx + 1))?;
            let n: u64 = n.parse().map_err(|_| format!("line {}: bad count", idx + 1))?;
            if n > sampled_count {
                return Err(format!("line {}: frequency exceeds record count", idx + 1));
            }
            tf.insert((attr, TermId(id)), n);
        }
        Ok(ContentKnowledge {
            db_id: db_id.to_string(),
            sampled_count,
            tf,
            version,
        })
    }

    pub fn snapshot_path(data_dir: &Path, db_id: &str) -> PathBuf {
        data_dir.join("ck").join(format!("{db_id}.tsv"))
    }

    /// Writes `ck/<db_id>.tsv` and the `ck/<db_id>.version` sidecar.
    pub fn save(&self, data_dir: &Path) -> Result<(), StorageError> {
        let path = Self::snapshot_path(data_dir, &self.db_id);
        write_atomic(&path, self.to_tsv().as_bytes())?;
        write_atomic(&path.with_extension("version"), format!("{}\n", self.version).as_bytes())
    }

    /// Loads a saved snapshot, or returns an empty one when none exists.
    pub fn load(data_dir: &Path, db_id: &str) -> Result<Self, StorageError> {
        let path = Self::snapshot_path(data_dir, db_id);
        if !path.exists() {
            return Ok(Self::new(db_id));
        }
        let text = fs::read_to_string(&path).map_err(|e| StorageError::io(&path, e))?;
        let vpath = path.with_extension("version");
        let version = match fs::read_to_string(&vpath) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| StorageError::corrupt(&vpath, 1, "bad version"))?,
            Err(_) => 0,
        };
        let ck = Self::from_tsv(&text, version).map_err(|m| StorageError::corrupt(&path, 0, m))?;
        if ck.db_id != db_id {
            return Err(StorageError::corrupt(&path, 1, "database id mismatch"));
        }
        Ok(ck)
    }
}

/// Identities of every record already summarized for one database, kept as
/// one ordered set per identity kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordIdStore {
    db_id: String,
    keys: BTreeMap<IdentityKind, BTreeSet<String>>,
}

impl RecordIdStore {
    pub fn new(db_id: impl Into<String>) -> Self {
        RecordIdStore {
            db_id: db_id.into(),
            keys: IdentityKind::ALL.iter().map(|k| (*k, BTreeSet::new())).collect(),
        }
    }

    pub fn db_id(&self) -> &str {
        &self.db_id
    }

    pub fn contains(&self, record: &BibRecord) -> bool {
        let id = record_identity(record);
        self.keys[&id.kind].contains(&id.key)
    }

    pub fn len(&self) -> usize {
        self.keys.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn len_of(&self, kind: IdentityKind) -> usize {
        self.keys[&kind].len()
    }

    /// Keeps the records whose identities are unseen (first occurrence wins
    /// within the batch) and remembers them.
    pub fn filter_new(&mut self, records: Vec<BibRecord>) -> Vec<BibRecord> {
        records
            .into_iter()
            .filter(|r| {
                let id = record_identity(r);
                self.keys
                    .get_mut(&id.kind)
                    .expect("all kinds present")
                    .insert(id.key)
            })
            .collect()
    }

    pub fn reset(&mut self) {
        for set in self.keys.values_mut() {
            set.clear();
        }
    }

    pub fn key_path(data_dir: &Path, db_id: &str, kind: IdentityKind) -> PathBuf {
        data_dir.join("rid").join(format!("{db_id}.{}.txt", kind.as_str()))
    }

    /// One sorted key file per kind: `rid/<db_id>.<kind>.txt`.
    pub fn save(&self, data_dir: &Path) -> Result<(), StorageError> {
        for (kind, set) in &self.keys {
            let mut body = String::new();
            for key in set {
                body.push_str(key);
                body.push('\n');
            }
            write_atomic(&Self::key_path(data_dir, &self.db_id, *kind), body.as_bytes())?;
        }
        Ok(())
    }

    pub fn load(data_dir: &Path, db_id: &str) -> Result<Self, StorageError> {
        let mut store = Self::new(db_id);
        for kind in IdentityKind::ALL {
            let path = Self::key_path(data_dir, db_id, kind);
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| StorageError::io(&path, e))?;
            let set = store.keys.get_mut(&kind).expect("all kinds present");
            set.extend(text.lines().filter(|l| !l.is_empty()).map(str::to_string));
        }
        Ok(store)
    }

    /// Total size in bytes of the persisted key files.
    pub fn stored_bytes(data_dir: &Path, db_id: &str) -> u64 {
        IdentityKind::ALL
            .iter()
            .filter_map(|k| fs::metadata(Self::key_path(data_dir, db_id, *k)).ok())
            .map(|m| m.len())
            .sum()
    }
}

/// Writes through a temporary sibling and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| StorageError::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| StorageError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| StorageError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(title: &str) -> BibRecord {
        BibRecord::new(title).unwrap()
    }

    fn t(s: &str) -> Term {
        Term::new(s).unwrap()
    }

    #[test]
    fn filter_dedups_within_batch() {
        let mut store = RecordIdStore::new("db");
        let r1 = rec("one").with_id("1");
        let r2 = rec("two").with_id("2");
        let out = store.filter_new(vec![r1.clone(), r2.clone(), r1.clone()]);
        assert_eq!(out, vec![r1, r2]);
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn filter_dedups_across_batches() {
        let mut store = RecordIdStore::new("db");
        let r1 = rec("one").with_id("1");
        let r3 = rec("three").with_id("3");
        store.filter_new(vec![r1.clone()]);
        assert_eq!(store.filter_new(vec![r1, r3.clone()]), vec![r3]);
    }

    #[test]
    fn filter_uses_isbn_when_ids_missing() {
        let mut store = RecordIdStore::new("db");
        let a = rec("Digital Libraries").with_isbn("0131103628");
        let b = rec("Something Else Entirely").with_isbn("0131103628");
        assert_eq!(store.filter_new(vec![a.clone(), b]), vec![a]);
        assert_eq!(store.len_of(IdentityKind::Isbn), 1);
    }

    #[test]
    fn filter_uses_title_and_first_author_as_fallback() {
        let mut store = RecordIdStore::new("db");
        let a = rec("Digital  Library").with_author("Smith, A.");
        let same = rec("digital library").with_author("SMITH, A.").with_author("Jones");
        let other = rec("digital library").with_author("Jones");
        assert_eq!(store.filter_new(vec![a.clone(), same, other.clone()]), vec![a, other]);
    }

    #[test]
    fn summarize_counts_records_not_occurrences() {
        let dict = GlobalTermDictionary::in_memory();
        let mut ck = ContentKnowledge::new("db");
        ck.summarize(&dict, &Stoplist::empty(), &[rec("digital digital library")]).unwrap();
        assert_eq!(ck.tf(Attribute::Title, &t("digital"), &dict), 1);
        assert_eq!(ck.tf(Attribute::Title, &t("library"), &dict), 1);
        assert_eq!(ck.sampled_count(), 1);
    }

    #[test]
    fn summarize_counts_subject_terms_once_per_record() {
        let dict = GlobalTermDictionary::in_memory();
        let mut ck = ContentKnowledge::new("db");
        let r = rec("x").with_subject("database management").with_subject("database design");
        ck.summarize(&dict, &Stoplist::empty(), &[r]).unwrap();
        assert_eq!(ck.tf(Attribute::Subject, &t("database"), &dict), 1);
        assert_eq!(ck.tf(Attribute::Subject, &t("design"), &dict), 1);
    }

    #[test]
    fn summarize_hand_counted_batch() {
        let dict = GlobalTermDictionary::in_memory();
        let mut ck = ContentKnowledge::new("db");
        let batch = [rec("operating system"), rec("system design"), rec("compilers")];
        ck.summarize(&dict, &Stoplist::empty(), &batch).unwrap();
        assert_eq!(ck.tf(Attribute::Title, &t("system"), &dict), 2);
        assert_eq!(ck.sampled_count(), 3);
        assert_eq!(ck.tf(Attribute::Title, &t("unknown"), &dict), 0);
        assert_eq!(ck.tf(Attribute::Subject, &t("system"), &dict), 0);
        assert_eq!(ck.version(), 1);
    }

    #[test]
    fn author_terms_are_unioned() {
        let dict = GlobalTermDictionary::in_memory();
        let mut ck = ContentKnowledge::new("db");
        let r = rec("x").with_author("Lim, Ee-Peng").with_author("Ng, Wee-Keong").with_author("Lim, B.");
        ck.summarize(&dict, &Stoplist::empty(), &[r]).unwrap();
        assert_eq!(ck.tf(Attribute::Author, &t("lim"), &dict), 1);
        assert_eq!(ck.tf(Attribute::Author, &t("keong"), &dict), 1);
    }

    #[test]
    fn reset_clears_stats_but_not_dictionary() {
        let dict = GlobalTermDictionary::in_memory();
        let mut ck = ContentKnowledge::new("db");
        let mut store = RecordIdStore::new("db");
        let batch = store.filter_new(vec![rec("digital").with_id("1")]);
        ck.summarize(&dict, &Stoplist::empty(), &batch).unwrap();
        let id = dict.lookup(Attribute::Title, &t("digital"));
        let v = ck.version();

        ck.reset();
        store.reset();
        assert_eq!(ck.sampled_count(), 0);
        assert_eq!(ck.entry_count(), 0);
        assert!(store.is_empty());
        assert_eq!(ck.version(), v + 1);
        assert_eq!(dict.lookup(Attribute::Title, &t("digital")), id);

        let empty = ck.clone();
        ck.reset();
        assert_eq!(ck.to_tsv(), empty.to_tsv());
    }

    #[test]
    fn persistence_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let dict = GlobalTermDictionary::in_memory();
        let mut ck = ContentKnowledge::new("bell");
        let mut store = RecordIdStore::new("bell");
        let batch = store.filter_new(vec![
            rec("A").with_id("1").with_subject("s t"),
            rec("B c").with_isbn("99"),
            rec("D").with_author("E"),
        ]);
        ck.summarize(&dict, &Stoplist::empty(), &batch).unwrap();
        ck.save(dir.path()).unwrap();
        store.save(dir.path()).unwrap();

        assert_eq!(ContentKnowledge::load(dir.path(), "bell").unwrap(), ck);
        assert_eq!(RecordIdStore::load(dir.path(), "bell").unwrap(), store);
        assert!(dir.path().join("ck/bell.tsv").exists());
        assert!(dir.path().join("rid/bell.isbn.txt").exists());
        assert_eq!(
            ContentKnowledge::load(dir.path(), "missing").unwrap(),
            ContentKnowledge::new("missing")
        );
    }

    #[test]
    fn snapshot_rejects_overlarge_frequency() {
        assert!(ContentKnowledge::from_tsv("#ck\tdb\t1\ntitle\t0\t2\n", 0).is_err());
        assert!(ContentKnowledge::from_tsv("bogus\n", 0).is_err());
    }

    proptest! {
        #[test]
        fn tf_never_exceeds_sampled_count(
            titles in proptest::collection::vec("[a-e]{1,2}( [a-e]{1,2}){0,4}", 1..40)
        ) {
            let dict = GlobalTermDictionary::in_memory();
            let mut ck = ContentKnowledge::new("db");
            let mut store = RecordIdStore::new("db");
            for chunk in titles.chunks(5) {
                let batch: Vec<BibRecord> = chunk.iter().map(|t| rec(t)).collect();
                let fresh = store.filter_new(batch);
                ck.summarize(&dict, &Stoplist::empty(), &fresh).unwrap();
                prop_assert!(ck.entries().all(|(_, _, n)| n <= ck.sampled_count()));
                prop_assert_eq!(ck.sampled_count() as usize, store.len());
            }
        }
    }
}
