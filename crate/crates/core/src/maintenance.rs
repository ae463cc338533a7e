//! Update schedules, the run journal and persisted maintenance state.
//!
//! The update procedures themselves live on [`crate::service::BrokerService`].

use std::fmt::{self, Write as _};
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Datelike, Days, Months, NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::error::{ScheduleError, StorageError};
use crate::knowledge::write_atomic;
use crate::query_filter::Timestamp;

/// Every day at `HH:MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DailySchedule {
    pub at: NaiveTime,
}

/// Every month on day `D` at `HH:MM`. Days past the end of a short month fall
/// on its last day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MonthlySchedule {
    pub day: u32,
    pub at: NaiveTime,
}

fn parse_hhmm(s: &str) -> Result<NaiveTime, ScheduleError> {
    NaiveTime::parse_from_str(s.trim(), "%H:%M").map_err(|_| ScheduleError::Invalid(s.to_string()))
}

impl FromStr for DailySchedule {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(DailySchedule { at: parse_hhmm(s)? })
    }
}

impl FromStr for MonthlySchedule {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = || ScheduleError::Invalid(s.to_string());
        let (day, time) = s.trim().split_once(' ').ok_or_else(invalid)?;
        let day: u32 = day.parse().map_err(|_| invalid())?;
        if !(1..=31).contains(&day) {
            return Err(invalid());
        }
        Ok(MonthlySchedule {
            day,
            at: parse_hhmm(time).map_err(|_| invalid())?,
        })
    }
}

impl fmt::Display for DailySchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.at.format("%H:%M"))
    }
}

impl fmt::Display for MonthlySchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.day, self.at.format("%H:%M"))
    }
}

macro_rules! string_conversions {
    ($t:ty) => {
        impl TryFrom<String> for $t {
            type Error = ScheduleError;
            fn try_from(s: String) -> Result<Self, Self::Error> {
                s.parse()
            }
        }

        impl From<$t> for String {
            fn from(s: $t) -> String {
                s.to_string()
            }
        }
    };
}

string_conversions!(DailySchedule);
string_conversions!(MonthlySchedule);

impl DailySchedule {
    /// First trigger strictly after `t`.
    pub fn next_after(&self, t: NaiveDateTime) -> NaiveDateTime {
        let today = t.date().and_time(self.at);
        if today > t {
            today
        } else {
            (t.date() + Days::new(1)).and_time(self.at)
        }
    }
}

fn days_in_month(year: i32, month: u32) -> u32 {
    let first = NaiveDate::from_ymd_opt(year, month, 1).expect("valid month");
    let next = first + Months::new(1);
    (next - first).num_days() as u32
}

impl MonthlySchedule {
    fn in_month(&self, year: i32, month: u32) -> NaiveDateTime {
        let day = self.day.min(days_in_month(year, month));
        NaiveDate::from_ymd_opt(year, month, day)
            .expect("clamped day")
            .and_time(self.at)
    }

    /// First trigger strictly after `t`.
    pub fn next_after(&self, t: NaiveDateTime) -> NaiveDateTime {
        let this = self.in_month(t.year(), t.month());
        if this > t {
            return this;
        }
        let next = t.date().with_day(1).expect("day 1") + Months::new(1);
        self.in_month(next.year(), next.month())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Daily,
    Monthly,
}

impl RunKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RunKind::Daily => "daily",
            RunKind::Monthly => "monthly",
        }
    }
}

impl FromStr for RunKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "daily" => Ok(RunKind::Daily),
            "monthly" => Ok(RunKind::Monthly),
            other => Err(format!("unknown run kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaintenancePolicy {
    pub daily: DailySchedule,
    pub monthly: MonthlySchedule,
    pub enabled: bool,
}

impl Default for MaintenancePolicy {
    fn default() -> Self {
        let midnight = NaiveTime::MIN;
        MaintenancePolicy {
            daily: DailySchedule { at: midnight },
            monthly: MonthlySchedule { day: 1, at: midnight },
            enabled: true,
        }
    }
}

impl MaintenancePolicy {
    /// Which run is due at `now` given the previous runs. When both are due
    /// only the monthly run is returned: it absorbs the daily work.
    pub fn due(
        &self,
        last_daily: NaiveDateTime,
        last_monthly: NaiveDateTime,
        now: NaiveDateTime,
    ) -> Option<RunKind> {
        if !self.enabled {
            return None;
        }
        if self.monthly.next_after(last_monthly) <= now {
            Some(RunKind::Monthly)
        } else if self.daily.next_after(last_daily) <= now {
            Some(RunKind::Daily)
        } else {
            None
        }
    }
}

/// Where the maintenance coordinator left off.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaintenanceState {
    /// Newest user-log timestamp already scanned for promotion.
    pub log_cursor: Option<Timestamp>,
    pub last_daily: Option<Timestamp>,
    pub last_monthly: Option<Timestamp>,
}

impl MaintenanceState {
    pub fn path(data_dir: &Path) -> PathBuf {
        data_dir.join("maintenance.state")
    }

    pub fn to_text(&self) -> String {
        let show = |t: Option<Timestamp>| t.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
        format!(
            "log_cursor\t{}\nlast_daily\t{}\nlast_monthly\t{}\n",
            show(self.log_cursor),
            show(self.last_daily),
            show(self.last_monthly)
        )
    }

    pub fn parse(text: &str) -> Result<Self, (usize, String)> {
        let mut state = MaintenanceState::default();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |m: &str| (idx + 1, m.to_string());
            let (key, value) = line.split_once('\t').ok_or_else(|| err("expected key<TAB>value"))?;
            let value = match value {
                "-" => None,
                v => Some(Timestamp(v.parse().map_err(|_| err("bad timestamp"))?)),
            };
            match key {
                "log_cursor" => state.log_cursor = value,
                "last_daily" => state.last_daily = value,
                "last_monthly" => state.last_monthly = value,
                _ => return Err(err("unknown key")),
            }
        }
        Ok(state)
    }

    pub fn load(data_dir: &Path) -> Result<Self, StorageError> {
        let path = Self::path(data_dir);
        match fs::read_to_string(&path) {
            Ok(text) => Self::parse(&text).map_err(|(l, m)| StorageError::corrupt(&path, l, m)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(StorageError::io(&path, e)),
        }
    }

    pub fn save(&self, data_dir: &Path) -> Result<(), StorageError> {
        write_atomic(&Self::path(data_dir), self.to_text().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Partial,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Partial => "partial",
            RunStatus::Failed => "failed",
        }
    }
}

impl FromStr for RunStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ok" => Ok(RunStatus::Ok),
            "partial" => Ok(RunStatus::Partial),
            "failed" => Ok(RunStatus::Failed),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

/// Outcome of one run for one database.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseRun {
    pub db_id: String,
    pub status: RunStatus,
    pub returned: usize,
    pub new: usize,
    /// N′ of the published snapshot after the run.
    pub sampled_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub kind: RunKind,
    pub started: Timestamp,
    /// Training queries submitted to each database.
    pub queries: usize,
    /// User queries promoted into the training library by this run.
    pub promoted: usize,
    pub databases: Vec<DatabaseRun>,
}

impl RunSummary {
    pub fn new(kind: RunKind, started: Timestamp) -> Self {
        RunSummary {
            kind,
            started,
            queries: 0,
            promoted: 0,
            databases: Vec::new(),
        }
    }

    pub fn failed(&self) -> usize {
        self.databases.iter().filter(|d| d.status == RunStatus::Failed).count()
    }
}

const JOURNAL_HEADER: &str = "# started\tkind\tqueries\tpromoted\tdb\tstatus\treturned\tnew\tsampled\terror";

/// Append-only record of maintenance runs, one line per database per run
/// (a run that touched no database writes a single line with db `-`).
#[derive(Debug, Default)]
pub struct Journal {
    path: Option<PathBuf>,
    runs: Vec<RunSummary>,
}

impl Journal {
    pub fn in_memory() -> Self {
        Journal::default()
    }

    pub fn open(path: &Path) -> Result<Self, StorageError> {
        let runs = match fs::read_to_string(path) {
            Ok(text) => Self::parse(&text).map_err(|(l, m)| StorageError::corrupt(path, l, m))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(StorageError::io(path, e)),
        };
        Ok(Journal {
            path: Some(path.to_path_buf()),
            runs,
        })
    }

    pub fn runs(&self) -> &[RunSummary] {
        &self.runs
    }

    pub fn lines(summary: &RunSummary) -> String {
        let mut out = String::new();
        let head = format!(
            "{}\t{}\t{}\t{}",
            summary.started,
            summary.kind.as_str(),
            summary.queries,
            summary.promoted
        );
        if summary.databases.is_empty() {
            let _ = writeln!(out, "{head}\t-\tok\t0\t0\t0\t-");
        }
        for d in &summary.databases {
            let error = d.error.as_deref().unwrap_or("-").replace(['\t', '\n'], " ");
            let _ = writeln!(
                out,
                "{head}\t{}\t{}\t{}\t{}\t{}\t{}",
                d.db_id,
                d.status.as_str(),
                d.returned,
                d.new,
                d.sampled_count,
                error
            );
        }
        out
    }

    pub fn append(&mut self, summary: RunSummary) -> Result<(), StorageError> {
        if let Some(path) = &self.path {
            let fresh = !path.exists();
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| StorageError::io(dir, e))?;
            }
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| StorageError::io(path, e))?;
            let mut text = String::new();
            if fresh {
                text.push_str(JOURNAL_HEADER);
                text.push('\n');
            }
            text.push_str(&Self::lines(&summary));
            f.write_all(text.as_bytes()).map_err(|e| StorageError::io(path, e))?;
        }
        self.runs.push(summary);
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{JOURNAL_HEADER}\n");
        for r in &self.runs {
            out.push_str(&Self::lines(r));
        }
        out
    }

    /// Regroups journal lines into runs by (started, kind).
    pub fn parse(text: &str) -> Result<Vec<RunSummary>, (usize, String)> {
        let mut runs: Vec<RunSummary> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| (idx + 1, m);
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 10 {
                return Err(err(format!("expected 10 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|_| err(format!("bad number `{s}`")));
            let started = Timestamp(num(f[0])?);
            let kind: RunKind = f[1].parse().map_err(err)?;
            let queries = num(f[2])? as usize;
            let promoted = num(f[3])? as usize;
            let same = runs.last().is_some_and(|r| r.started == started && r.kind == kind);
            if !same {
                let mut r = RunSummary::new(kind, started);
                r.queries = queries;
                r.promoted = promoted;
                runs.push(r);
            }
            if f[4] != "-" {
                let run = runs.last_mut().expect("pushed above");
                run.databases.push(DatabaseRun {
                    db_id: f[4].to_string(),
                    status: f[5].parse().map_err(err)?,
                    returned: num(f[6])? as usize,
                    new: num(f[7])? as usize,
                    sampled_count: num(f[8])?,
                    error: (f[9] != "-").then(|| f[9].to_string()),
                });
            }
        }
        Ok(runs)
    }
}
