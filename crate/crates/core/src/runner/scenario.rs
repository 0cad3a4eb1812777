use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::ApiConfig;
use crate::encryptor::EncryptorConfig;
use crate::kms::KmsConfig;
use crate::telemetry::AlarmThresholds;
use crate::topology::{load_topology_file, Topology, TopologyError};

/// Longest tick that still resolves a once-per-minute refresh.
pub const MAX_TICK_S: f64 = 60.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultAction {
    Down,
    Up,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fault {
    pub time_s: f64,
    pub link_id: String,
    pub action: FaultAction,
}

/// Output files; relative paths resolve against the scenario file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub report: Option<PathBuf>,
    pub timeseries: Option<PathBuf>,
    pub noc_log: Option<PathBuf>,
}

/// One encryptor pair. The master starts refreshing at `start_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSpec {
    pub master_sae: String,
    pub slave_sae: String,
    #[serde(default = "default_start")]
    pub start_s: f64,
}

/// Synthetic data-plane load per session and tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSpec {
    pub frames_per_tick: u32,
    pub payload_bytes: usize,
}

impl Default for TrafficSpec {
    fn default() -> Self {
        TrafficSpec {
            frames_per_tick: 1,
            payload_bytes: 256,
        }
    }
}

fn default_start() -> f64 {
    1.0
}

fn default_tick() -> f64 {
    1.0
}

fn default_sessions() -> Vec<SessionSpec> {
    vec![SessionSpec {
        master_sae: "sae-a".into(),
        slave_sae: "sae-b".into(),
        start_s: default_start(),
    }]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub topology_path: PathBuf,
    pub duration_s: u64,
    #[serde(default = "default_tick")]
    pub tick_s: f64,
    pub seed: u64,
    #[serde(default)]
    pub faults: Vec<Fault>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default = "default_sessions")]
    pub sessions: Vec<SessionSpec>,
    #[serde(default)]
    pub traffic: TrafficSpec,
    #[serde(default)]
    pub encryptor: EncryptorConfig,
    #[serde(default)]
    pub kms: KmsConfig,
    #[serde(default)]
    pub api: ApiConfig,
    #[serde(default)]
    pub thresholds: AlarmThresholds,
}

impl Scenario {
    /// Parses a scenario document, resolving relative paths against `base`.
    pub fn parse(document: &str, base: &Path) -> Result<Self, ScenarioError> {
        let mut s: Scenario = serde_json::from_str(document)?;
        s.topology_path = base.join(&s.topology_path);
        for p in [&mut s.outputs.report, &mut s.outputs.timeseries, &mut s.outputs.noc_log]
            .into_iter()
            .flatten()
        {
            *p = base.join(&*p);
        }
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let doc = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&doc, path.parent().unwrap_or(Path::new(".")))
    }

    /// Loads the topology and checks every invariant against it.
    pub fn validate(&self) -> Result<Topology, ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if self.duration_s == 0 {
            return invalid("duration_s must be positive".into());
        }
        if !(self.tick_s.is_finite() && self.tick_s > 0.0 && self.tick_s <= MAX_TICK_S) {
            return invalid(format!("tick_s must lie in (0, {MAX_TICK_S}], got {}", self.tick_s));
        }
        let duration = self.duration_s as f64;
        if !(self.encryptor.refresh_period_s.is_finite() && self.encryptor.refresh_period_s > 0.0) {
            return invalid("encryptor.refresh_period_s must be positive".into());
        }
        if self.kms.min_key_size_bits > self.kms.max_key_size_bits {
            return invalid("kms.min_key_size_bits exceeds kms.max_key_size_bits".into());
        }
        self.kms
            .check_size(self.encryptor.key_size_bits)
            .map_err(|e| ScenarioError::Invalid(format!("encryptor.key_size_bits: {e}")))?;
        if self.encryptor.key_size_bits < 256 {
            return invalid("encryptor.key_size_bits must be at least 256".into());
        }
        if self.traffic.payload_bytes == 0 {
            return invalid("traffic.payload_bytes must be positive".into());
        }
        let topology = load_topology_file(&self.topology_path).map_err(|e| match e {
            TopologyError::Io(_) => ScenarioError::Invalid(format!(
                "topology_path {}: {e}",
                self.topology_path.display()
            )),
            e => ScenarioError::Topology(e),
        })?;
        for f in &self.faults {
            if !(f.time_s.is_finite() && (0.0..=duration).contains(&f.time_s)) {
                return invalid(format!("fault time {} outside [0, {duration}]", f.time_s));
            }
            if topology.link(&f.link_id).is_none() {
                return invalid(format!("fault names unknown link {}", f.link_id));
            }
        }
        for s in &self.sessions {
            for sae in [&s.master_sae, &s.slave_sae] {
                if topology.sae(sae).is_none() {
                    return invalid(format!("session names unknown SAE {sae}"));
                }
            }
            if s.master_sae == s.slave_sae {
                return invalid(format!("session pairs {} with itself", s.master_sae));
            }
            if !(s.start_s.is_finite() && (0.0..=duration).contains(&s.start_s)) {
                return invalid(format!("session start {} outside [0, {duration}]", s.start_s));
            }
        }
        Ok(topology)
    }
}
