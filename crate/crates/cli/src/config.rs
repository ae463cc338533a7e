//! Optional TOML configuration file. Command-line flags and environment
//! variables take precedence over values read here; relative paths are
//! resolved against the directory containing the file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use catroute_core::maintenance::{DailySchedule, MaintenancePolicy, MonthlySchedule};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub listen: Option<String>,
    pub registry: Option<PathBuf>,
    pub stoplist: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub admin: Option<bool>,
    pub cache_ttl_secs: Option<u64>,
    pub batch_limit: Option<usize>,
    pub static_dir: Option<PathBuf>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub daily: Option<DailySchedule>,
    pub monthly: Option<MonthlySchedule>,
    pub enabled: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.registry, &mut cfg.stoplist, &mut cfg.data_dir, &mut cfg.static_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn policy(&self) -> MaintenancePolicy {
        let mut p = MaintenancePolicy::default();
        if let Some(d) = self.schedule.daily {
            p.daily = d;
        }
        if let Some(m) = self.schedule.monthly {
            p.monthly = m;
        }
        if let Some(e) = self.schedule.enabled {
            p.enabled = e;
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broker.toml");
        fs::write(
            &path,
            "registry = \"fleet/registry.tsv\"\ndata_dir = \"/abs/data\"\n[schedule]\ndaily = \"02:15\"\nmonthly = \"15 03:00\"\n",
        )
        .unwrap();
        let cfg = FileConfig::load(&path).unwrap();
        assert_eq!(cfg.registry.unwrap(), dir.path().join("fleet/registry.tsv"));
        assert_eq!(cfg.data_dir.unwrap(), PathBuf::from("/abs/data"));
        let cfg = FileConfig::load(&path).unwrap();
        let p = cfg.policy();
        assert_eq!(p.daily.to_string(), "02:15");
        assert_eq!(p.monthly.to_string(), "15 03:00");
        assert!(p.enabled);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "listn = \"x\"\n").unwrap();
        assert!(FileConfig::load(&path).is_err());
    }
}
