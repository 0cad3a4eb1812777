use std::collections::BTreeMap;
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use uuid::Uuid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Severity {
    Info,
    Warning,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    LinkDown,
    LinkUp,
    QberHigh,
    KeyBufferLow,
    KeyExhausted,
    KeyStarvation,
    RelayFailed,
    EpochAdvanced,
    QueueOverflow,
}

impl EventKind {
    pub fn default_severity(self) -> Severity {
        match self {
            EventKind::LinkDown | EventKind::KeyExhausted | EventKind::KeyStarvation => Severity::Critical,
            EventKind::QberHigh | EventKind::KeyBufferLow | EventKind::RelayFailed | EventKind::QueueOverflow => {
                Severity::Warning
            }
            EventKind::LinkUp | EventKind::EpochAdvanced => Severity::Info,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::LinkDown => "LINK_DOWN",
            EventKind::LinkUp => "LINK_UP",
            EventKind::QberHigh => "QBER_HIGH",
            EventKind::KeyBufferLow => "KEY_BUFFER_LOW",
            EventKind::KeyExhausted => "KEY_EXHAUSTED",
            EventKind::KeyStarvation => "KEY_STARVATION",
            EventKind::RelayFailed => "RELAY_FAILED",
            EventKind::EpochAdvanced => "EPOCH_ADVANCED",
            EventKind::QueueOverflow => "QUEUE_OVERFLOW",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One trap message. Field order matches the wire format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryEvent {
    pub event_id: Uuid,
    pub source: String,
    pub severity: Severity,
    pub kind: EventKind,
    pub at: f64,
    #[serde(default)]
    pub payload: BTreeMap<String, Value>,
}

impl TelemetryEvent {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("telemetry events always serialize")
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.payload.insert(key.to_string(), value.into());
        self
    }
}

/// An event not yet stamped with identity and time.
#[derive(Debug, Clone, PartialEq)]
pub struct Alarm {
    pub kind: EventKind,
    pub severity: Severity,
    pub payload: BTreeMap<String, Value>,
}

impl Alarm {
    pub fn new(kind: EventKind) -> Self {
        Alarm {
            kind,
            severity: kind.default_severity(),
            payload: BTreeMap::new(),
        }
    }

    pub fn severity(mut self, severity: Severity) -> Self {
        self.severity = severity;
        self
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.payload.insert(key.to_string(), value.into());
        self
    }
}

/// Deterministic UUID source so that seeded runs produce identical logs.
#[derive(Debug, Clone)]
pub struct EventIds {
    rng: ChaCha20Rng,
}

impl EventIds {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        EventIds {
            rng: ChaCha20Rng::from_seed(seed),
        }
    }

    pub fn next_id(&mut self) -> Uuid {
        let mut b = [0u8; 16];
        self.rng.fill_bytes(&mut b);
        uuid::Builder::from_random_bytes(b).into_uuid()
    }

    pub fn stamp(&mut self, source: &str, at: f64, alarm: Alarm) -> TelemetryEvent {
        TelemetryEvent {
            event_id: self.next_id(),
            source: source.to_string(),
            severity: alarm.severity,
            kind: alarm.kind,
            at,
            payload: alarm.payload,
        }
    }
}
