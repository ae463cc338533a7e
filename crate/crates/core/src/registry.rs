//! Database registry file: one tab-separated line per database,
//!
//! ```text
//! db_id  host  port  capabilities  [name  [timeout_ms]]
//! ```
//!
//! `capabilities` is a comma list of attribute names. Blank lines and lines
//! starting with `#` are ignored.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::RegistryError;
use crate::gateway::{RemoteDatabase, DEFAULT_TIMEOUT};
use crate::model::{parse_attribute_set, Attribute};
use crate::protocol::valid_db_id;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseEntry {
    pub db_id: String,
    pub host: String,
    pub port: u16,
    pub capabilities: BTreeSet<Attribute>,
    /// Display name; defaults to the id.
    pub name: String,
    #[serde(with = "millis")]
    pub timeout: Duration,
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

impl DatabaseEntry {
    pub fn new(db_id: impl Into<String>, host: impl Into<String>, port: u16) -> Self {
        let db_id = db_id.into();
        DatabaseEntry {
            name: db_id.clone(),
            db_id,
            host: host.into(),
            port,
            capabilities: Attribute::ALL.into_iter().collect(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_capabilities(mut self, caps: BTreeSet<Attribute>) -> Self {
        self.capabilities = caps;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn address(&self) -> String {
        if self.host.contains(':') {
            format!("[{}]:{}", self.host, self.port)
        } else {
            format!("{}:{}", self.host, self.port)
        }
    }

    pub fn remote(&self) -> RemoteDatabase {
        RemoteDatabase::new(&self.db_id, self.address()).with_timeout(self.timeout)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    entries: Vec<DatabaseEntry>,
}

impl Registry {
    pub fn new(entries: Vec<DatabaseEntry>) -> Result<Self, RegistryError> {
        let mut reg = Registry::default();
        for (i, e) in entries.into_iter().enumerate() {
            reg.push(e).map_err(|message| RegistryError::Parse { line: i + 1, message })?;
        }
        Ok(reg)
    }

    fn push(&mut self, entry: DatabaseEntry) -> Result<(), String> {
        if !valid_db_id(&entry.db_id) {
            return Err(format!("invalid database id `{}`", entry.db_id));
        }
        if self.get(&entry.db_id).is_some() {
            return Err(format!("duplicate database id `{}`", entry.db_id));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, RegistryError> {
        let mut reg = Registry::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |message: String| RegistryError::Parse { line: idx + 1, message };
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            if !(4..=6).contains(&fields.len()) {
                return Err(err(format!("expected 4 to 6 tab-separated fields, found {}", fields.len())));
            }
            let port: u16 = fields[2]
                .parse()
                .map_err(|_| err(format!("bad port `{}`", fields[2])))?;
            let capabilities = parse_attribute_set(fields[3]).map_err(|e| err(e.to_string()))?;
            let mut entry = DatabaseEntry::new(fields[0], fields[1], port).with_capabilities(capabilities);
            if let Some(name) = fields.get(4).filter(|n| !n.is_empty()) {
                entry.name = name.to_string();
            }
            if let Some(ms) = fields.get(5) {
                let ms: u64 = ms.parse().map_err(|_| err(format!("bad timeout `{ms}`")))?;
                entry.timeout = Duration::from_millis(ms);
            }
            reg.push(entry).map_err(err)?;
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let text = fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let caps: Vec<&str> = e.capabilities.iter().map(|a| a.as_str()).collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.db_id,
                e.host,
                e.port,
                caps.join(","),
                e.name,
                e.timeout.as_millis()
            );
        }
        out
    }

    pub fn get(&self, db_id: &str) -> Option<&DatabaseEntry> {
        self.entries.iter().find(|e| e.db_id == db_id)
    }

    pub fn entries(&self) -> &[DatabaseEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
