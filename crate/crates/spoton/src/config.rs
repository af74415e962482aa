//! Coordinator configuration: a TOML file with `[workload]`, `[checkpoint]`,
//! `[eviction]` and `[pricing]` sections, then `section.key=value`
//! overrides, then the `SPOTON_ENDPOINT` environment variable.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use spoton_core::checkpoint::CheckpointerKind;
use spoton_core::eviction::MIN_NOTICE;
use spoton_core::spotsim::PricingModel;
use spoton_core::workload::{Stage, WorkloadSpec, DEFAULT_STAGE_NAMES};
use thiserror::Error;

pub const ENDPOINT_ENV: &str = "SPOTON_ENDPOINT";
pub const DEFAULT_ENDPOINT: &str = "http://127.0.0.1:8770/metadata/scheduledevents";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("override `{0}` is not of the form section.key=value")]
    Override(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSection {
    /// `NAME:STEPS,...`
    pub stages: String,
    pub seed: u64,
    /// Seconds of wall time per step.
    pub step_cost: f64,
    /// Program run as the workload. Empty means this executable.
    pub program: String,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        WorkloadSection {
            stages: DEFAULT_STAGE_NAMES.map(|n| format!("{n}:1000")).join(","),
            seed: 42,
            step_cost: 0.001,
            program: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointSection {
    /// `application`, `transparent` or `toy`.
    pub checkpointer: String,
    /// Periodic checkpointing on or off.
    pub enabled: bool,
    /// Seconds between periodic checkpoints.
    pub checkpoint_interval: f64,
    pub store_root: PathBuf,
    /// Seconds one snapshot is expected to take until one has been observed.
    pub snapshot_time_estimate: f64,
    /// Seconds the workload spends producing a snapshot (emulated cost).
    pub snapshot_cost: f64,
    /// Transparent checkpointer: shell template with `{pid}` and `{dir}`.
    pub snapshot_cmd: String,
    /// Transparent checkpointer: shell template with `{dir}`.
    pub restore_cmd: String,
}

impl Default for CheckpointSection {
    fn default() -> Self {
        CheckpointSection {
            checkpointer: "toy".into(),
            enabled: true,
            checkpoint_interval: 900.0,
            store_root: PathBuf::from("spoton-store"),
            snapshot_time_estimate: 20.0,
            snapshot_cost: 0.0,
            snapshot_cmd: String::new(),
            restore_cmd: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvictionSection {
    /// Polling of the scheduled-events endpoint on or off.
    pub enabled: bool,
    pub metadata_endpoint: String,
    pub api_version: String,
    /// Seconds between polls.
    pub poll_interval: f64,
    /// Seconds of notice the platform promises; shorter notices are flagged.
    pub min_notice_floor: f64,
}

impl Default for EvictionSection {
    fn default() -> Self {
        EvictionSection {
            enabled: true,
            metadata_endpoint: DEFAULT_ENDPOINT.into(),
            api_version: "2020-07-01".into(),
            poll_interval: 1.0,
            min_notice_floor: MIN_NOTICE.as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PricingSection {
    pub spot_rate: f64,
    pub on_demand_rate: f64,
    pub storage_rate: f64,
    pub provisioned_storage: f64,
}

impl Default for PricingSection {
    fn default() -> Self {
        let p = PricingModel::default();
        PricingSection {
            spot_rate: p.spot_rate,
            on_demand_rate: p.on_demand_rate,
            storage_rate: p.storage_rate,
            provisioned_storage: p.provisioned_storage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub workload: WorkloadSection,
    pub checkpoint: CheckpointSection,
    pub eviction: EvictionSection,
    pub pricing: PricingSection,
}

/// Validated, typed view the coordinator runs from.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinatorConfig {
    pub workload: WorkloadSpec,
    pub checkpointer: CheckpointerKind,
    /// `None` disables periodic checkpoints.
    pub checkpoint_interval: Option<Duration>,
    pub poll_interval: Duration,
    pub store_root: PathBuf,
    /// `None` disables polling.
    pub metadata_endpoint: Option<String>,
    pub api_version: String,
    pub snapshot_time_estimate: Duration,
    pub snapshot_cost: Duration,
    pub min_notice_floor: Duration,
    pub snapshot_cmd: String,
    pub restore_cmd: String,
    pub program: Option<PathBuf>,
}

fn seconds(key: &str, v: f64, positive: bool) -> Result<Duration, ConfigError> {
    if !v.is_finite() || v < 0.0 || (positive && v == 0.0) {
        let need = if positive { "a positive" } else { "a non-negative" };
        return Err(ConfigError::Invalid(format!("{key} must be {need} number of seconds, got {v}")));
    }
    Ok(Duration::from_secs_f64(v))
}

impl Config {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { origin: origin.into(), message: e.to_string() })
    }

    fn from_table(table: toml::Table, origin: &str) -> Result<Self, ConfigError> {
        Config::deserialize(toml::Value::Table(table))
            .map_err(|e| ConfigError::Parse { origin: origin.into(), message: e.to_string() })
    }

    /// File (if any), then overrides, then `endpoint_env`.
    pub fn load(
        path: Option<&Path>,
        overrides: &[String],
        endpoint_env: Option<String>,
    ) -> Result<Self, ConfigError> {
        let (text, origin) = match path {
            Some(p) => (
                std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.into(), source })?,
                p.display().to_string(),
            ),
            None => (String::new(), "defaults".to_string()),
        };
        // the file alone first, so its errors keep their line and column
        Self::from_toml(&text, &origin)?;
        let mut table: toml::Table =
            toml::from_str(&text).map_err(|e| ConfigError::Parse { origin: origin.clone(), message: e.to_string() })?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let overridden = if overrides.is_empty() { origin } else { format!("{origin} with --set overrides") };
        let mut config = Self::from_table(table, &overridden)?;
        if let Some(endpoint) = endpoint_env.filter(|e| !e.is_empty()) {
            config.eviction.metadata_endpoint = endpoint;
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn pricing(&self) -> PricingModel {
        PricingModel {
            spot_rate: self.pricing.spot_rate,
            on_demand_rate: self.pricing.on_demand_rate,
            storage_rate: self.pricing.storage_rate,
            provisioned_storage: self.pricing.provisioned_storage,
        }
    }

    pub fn workload_spec(&self) -> Result<WorkloadSpec, ConfigError> {
        let w = &self.workload;
        let stages: Vec<Stage> =
            WorkloadSpec::parse_stages(&w.stages).map_err(|e| ConfigError::Invalid(format!("workload.stages: {e}")))?;
        let spec = WorkloadSpec::new(stages, w.seed).map_err(|e| ConfigError::Invalid(format!("workload.stages: {e}")))?;
        let cost = seconds("workload.step_cost", w.step_cost, false)?;
        Ok(spec.with_step_cost((!cost.is_zero()).then_some(cost)))
    }

    pub fn coordinator(&self) -> Result<CoordinatorConfig, ConfigError> {
        let c = &self.checkpoint;
        let e = &self.eviction;
        let pricing = &self.pricing;
        for (k, v) in [
            ("pricing.spot_rate", pricing.spot_rate),
            ("pricing.on_demand_rate", pricing.on_demand_rate),
            ("pricing.storage_rate", pricing.storage_rate),
            ("pricing.provisioned_storage", pricing.provisioned_storage),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(ConfigError::Invalid(format!("{k} must be non-negative, got {v}")));
            }
        }
        let checkpointer: CheckpointerKind =
            c.checkpointer.parse().map_err(|m| ConfigError::Invalid(format!("checkpoint.checkpointer: {m}")))?;
        let interval = seconds("checkpoint.checkpoint_interval", c.checkpoint_interval, true)?;
        if checkpointer == CheckpointerKind::Transparent && (c.snapshot_cmd.is_empty() || c.restore_cmd.is_empty()) {
            return Err(ConfigError::Invalid(
                "the transparent checkpointer needs checkpoint.snapshot_cmd and checkpoint.restore_cmd".into(),
            ));
        }
        if e.enabled && e.metadata_endpoint.is_empty() {
            return Err(ConfigError::Invalid("eviction.metadata_endpoint is empty".into()));
        }
        Ok(CoordinatorConfig {
            workload: self.workload_spec()?,
            checkpointer,
            checkpoint_interval: c.enabled.then_some(interval),
            poll_interval: seconds("eviction.poll_interval", e.poll_interval, true)?,
            store_root: c.store_root.clone(),
            metadata_endpoint: e.enabled.then(|| e.metadata_endpoint.clone()),
            api_version: e.api_version.clone(),
            snapshot_time_estimate: seconds("checkpoint.snapshot_time_estimate", c.snapshot_time_estimate, false)?,
            snapshot_cost: seconds("checkpoint.snapshot_cost", c.snapshot_cost, false)?,
            min_notice_floor: seconds("eviction.min_notice_floor", e.min_notice_floor, false)?,
            snapshot_cmd: c.snapshot_cmd.clone(),
            restore_cmd: c.restore_cmd.clone(),
            program: (!self.workload.program.is_empty()).then(|| PathBuf::from(&self.workload.program)),
        })
    }
}

/// `section.key=value`. The value is read as a TOML value when it parses as
/// one, else as a bare string.
pub fn apply_override(table: &mut toml::Table, text: &str) -> Result<(), ConfigError> {
    let (key, raw) = text.split_once('=').ok_or_else(|| ConfigError::Override(text.into()))?;
    let (section, field) = key.trim().split_once('.').ok_or_else(|| ConfigError::Override(text.into()))?;
    if section.is_empty() || field.is_empty() || field.contains('.') {
        return Err(ConfigError::Override(text.into()));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => {
            t.insert(field.to_string(), value);
            Ok(())
        }
        _ => Err(ConfigError::Override(text.into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = Config::load(None, &[], None).unwrap().coordinator().unwrap();
        assert_eq!(c.checkpointer, CheckpointerKind::Toy);
        assert_eq!(c.min_notice_floor, Duration::from_secs(30));
        assert_eq!(c.poll_interval, Duration::from_secs(1));
        assert_eq!(c.workload.total_steps(), 5000);
    }

    #[test]
    fn unknown_key_rejected_with_position() {
        let err = Config::from_toml("[checkpoint]\ninterval = 3\n", "x.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown field"), "{msg}");
        let err = Config::from_toml("[workload]\nseed = = 1\n", "x.toml").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn precedence_is_env_over_overrides_over_file() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("c.toml");
        std::fs::write(
            &path,
            "[eviction]\nmetadata_endpoint = \"http://file\"\npoll_interval = 2.0\n[workload]\nseed = 7\n",
        )
        .unwrap();
        let c = Config::load(Some(&path), &["workload.seed=9".into(), "eviction.metadata_endpoint=http://flag".into()], None)
            .unwrap();
        assert_eq!(c.workload.seed, 9);
        assert_eq!(c.eviction.metadata_endpoint, "http://flag");
        assert_eq!(c.eviction.poll_interval, 2.0);
        let c = Config::load(Some(&path), &[], Some("http://env".into())).unwrap();
        assert_eq!(c.eviction.metadata_endpoint, "http://env");
    }

    #[test]
    fn dump_round_trips() {
        let mut c = Config::default();
        c.checkpoint.checkpointer = "application".into();
        c.workload.stages = "A:3,B:0".into();
        assert_eq!(Config::from_toml(&c.to_toml(), "dump").unwrap(), c);
    }

    #[test]
    fn invariants_enforced() {
        let bad = |o: &str| Config::load(None, &[o.into()], None).unwrap().coordinator().is_err();
        assert!(bad("checkpoint.checkpoint_interval=0"));
        assert!(bad("eviction.poll_interval=0"));
        assert!(bad("checkpoint.checkpointer=criu"));
        assert!(bad("checkpoint.checkpointer=transparent"));
        assert!(bad("workload.stages=\"A:1,A:2\""));
        assert!(bad("pricing.spot_rate=-1"));
        assert!(Config::load(None, &["nodot=1".into()], None).is_err());
        let c = Config::load(None, &["checkpoint.enabled=false".into()], None).unwrap().coordinator().unwrap();
        assert_eq!(c.checkpoint_interval, None);
    }
}
