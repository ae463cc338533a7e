//! Global term ids shared by the content knowledge of every database.
//!
//! Each attribute has its own dense id space starting at 0. Assignment takes
//! the attribute's write lock, so at most one writer per attribute proceeds at
//! a time while lookups on other attributes (or between assignments) run
//! concurrently. When backed by a file, every assignment is appended to a
//! tab-separated log (`attribute\tterm\tid`) before the id is returned; the
//! in-memory maps are rebuilt from that log at startup.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::StorageError;
use crate::model::{Attribute, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TermId(pub u32);

impl fmt::Display for TermId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Default)]
struct AttributeDictionary {
    ids: HashMap<String, TermId>,
    terms: Vec<String>,
}

impl AttributeDictionary {
    fn next_id(&self) -> u32 {
        self.terms.len() as u32
    }
}

#[derive(Debug)]
struct LogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

#[derive(Debug)]
pub struct GlobalTermDictionary {
    attrs: [RwLock<AttributeDictionary>; 3],
    log: Option<Mutex<LogWriter>>,
}

fn slot(attr: Attribute) -> usize {
    match attr {
        Attribute::Title => 0,
        Attribute::Author => 1,
        Attribute::Subject => 2,
    }
}

impl Default for GlobalTermDictionary {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl GlobalTermDictionary {
    pub fn in_memory() -> Self {
        GlobalTermDictionary {
            attrs: Default::default(),
            log: None,
        }
    }

    /// Opens (or creates) a log-backed dictionary, replaying existing entries.
    pub fn open(path: &Path) -> Result<Self, StorageError> {
        let dict = Self::in_memory();
        if path.exists() {
            let file = File::open(path).map_err(|e| StorageError::io(path, e))?;
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| StorageError::io(path, e))?;
                if line.is_empty() {
                    continue;
                }
                dict.replay(&line)
                    .map_err(|msg| StorageError::corrupt(path, idx + 1, msg))?;
            }
        } else if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| StorageError::io(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| StorageError::io(path, e))?;
        Ok(GlobalTermDictionary {
            log: Some(Mutex::new(LogWriter {
                path: path.to_path_buf(),
                out: BufWriter::new(file),
            })),
            ..dict
        })
    }

    fn replay(&self, line: &str) -> Result<(), String> {
        let mut fields = line.split('\t');
        let (Some(attr), Some(term), Some(id), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err("expected three tab-separated fields".into());
        };
        let attr: Attribute = attr.parse().map_err(|e| format!("{e}"))?;
        let term = Term::new(term).map_err(|e| format!("{e}"))?;
        let id: u32 = id.parse().map_err(|_| format!("bad id `{id}`"))?;
        let mut d = self.attrs[slot(attr)].write().expect("dictionary lock poisoned");
        if id != d.next_id() {
            return Err(format!("id {id} out of sequence (expected {})", d.next_id()));
        }
        if d.ids.contains_key(term.as_str()) {
            return Err(format!("term `{term}` assigned twice"));
        }
        d.ids.insert(term.as_str().to_string(), TermId(id));
        d.terms.push(term.into());
        Ok(())
    }

    /// Returns the id of `term`, assigning the next free id on first sight.
    pub fn get_or_assign(&self, attr: Attribute, term: &Term) -> Result<TermId, StorageError> {
        if let Some(id) = self.lookup(attr, term) {
            return Ok(id);
        }
        let mut d = self.attrs[slot(attr)].write().expect("dictionary lock poisoned");
        if let Some(id) = d.ids.get(term.as_str()) {
            return Ok(*id);
        }
        let id = TermId(d.next_id());
        if let Some(log) = &self.log {
            let mut log = log.lock().expect("dictionary log lock poisoned");
            let LogWriter { path, out } = &mut *log;
            writeln!(out, "{}\t{}\t{}", attr, term, id)
                .and_then(|_| out.flush())
                .map_err(|e| StorageError::io(path.clone(), e))?;
        }
        d.ids.insert(term.as_str().to_string(), id);
        d.terms.push(term.as_str().to_string());
        Ok(id)
    }

    /// Never assigns.
    pub fn lookup(&self, attr: Attribute, term: &Term) -> Option<TermId> {
        self.attrs[slot(attr)]
            .read()
            .expect("dictionary lock poisoned")
            .ids
            .get(term.as_str())
            .copied()
    }

    pub fn term(&self, attr: Attribute, id: TermId) -> Option<Term> {
        self.attrs[slot(attr)]
            .read()
            .expect("dictionary lock poisoned")
            .terms
            .get(id.0 as usize)
            .map(|t| Term::new(t.clone()).expect("dictionary holds valid terms"))
    }

    /// Number of ids assigned for `attr` (equals its next id).
    pub fn len(&self, attr: Attribute) -> usize {
        self.attrs[slot(attr)]
            .read()
            .expect("dictionary lock poisoned")
            .terms
            .len()
    }

    pub fn is_empty(&self) -> bool {
        Attribute::ALL.iter().all(|a| self.len(*a) == 0)
    }

    pub fn log_path(&self) -> Option<PathBuf> {
        self.log
            .as_ref()
            .map(|l| l.lock().expect("dictionary log lock poisoned").path.clone())
    }
}
