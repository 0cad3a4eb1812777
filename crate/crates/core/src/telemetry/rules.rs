//! Threshold alarms evaluated once per simulation tick.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::event::{Alarm, EventKind, Severity};
use crate::link_sim::QBER_ABORT_THRESHOLD;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlarmThresholds {
    /// Fixed low watermark. When unset the watermark tracks
    /// `watermark_minutes` worth of recent consumption.
    pub low_watermark_bytes: Option<u64>,
    pub watermark_minutes: f64,
    /// A low-buffer alarm clears once free key exceeds `hysteresis × watermark`.
    pub hysteresis: f64,
    pub qber_warning: f64,
    pub qber_sustain_ticks: u32,
}

impl Default for AlarmThresholds {
    fn default() -> Self {
        AlarmThresholds {
            low_watermark_bytes: None,
            watermark_minutes: 10.0,
            hysteresis: 1.2,
            qber_warning: 0.08,
            qber_sustain_ticks: 3,
        }
    }
}

/// What the rules look at on each tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkObservation {
    pub up: bool,
    pub free_bytes: u64,
    pub consumed_last_minute: u64,
    pub qber: f64,
}

/// Per-link alarm state machine with hysteresis and de-duplication.
#[derive(Debug, Clone, Default)]
pub struct LinkAlarmRules {
    thresholds: AlarmThresholds,
    low_active: bool,
    exhausted_active: bool,
    has_held_key: bool,
    qber_streak: u32,
    qber_level: Option<Severity>,
}

impl LinkAlarmRules {
    pub fn new(thresholds: AlarmThresholds) -> Self {
        LinkAlarmRules {
            thresholds,
            ..Default::default()
        }
    }

    pub fn watermark(&self, obs: &LinkObservation) -> u64 {
        self.thresholds.low_watermark_bytes.unwrap_or_else(|| {
            (self.thresholds.watermark_minutes * obs.consumed_last_minute as f64).ceil() as u64
        })
    }

    /// Alarms newly raised by this observation.
    pub fn evaluate(&mut self, obs: &LinkObservation) -> Vec<Alarm> {
        let mut out = Vec::new();

        if obs.free_bytes > 0 {
            self.has_held_key = true;
        }
        let wm = self.watermark(obs);
        if obs.free_bytes < wm {
            if !self.low_active {
                self.low_active = true;
                out.push(
                    Alarm::new(EventKind::KeyBufferLow)
                        .with("free_bytes", obs.free_bytes)
                        .with("watermark_bytes", wm),
                );
            }
        } else if self.low_active && obs.free_bytes as f64 >= self.thresholds.hysteresis * wm as f64 {
            self.low_active = false;
        }

        if obs.free_bytes == 0 {
            // a link that has never delivered key is warming up, not exhausted
            if self.has_held_key && !self.exhausted_active {
                self.exhausted_active = true;
                out.push(Alarm::new(EventKind::KeyExhausted));
            }
        } else {
            self.exhausted_active = false;
        }

        if !obs.up {
            self.qber_streak = 0;
            self.qber_level = None;
            return out;
        }
        if obs.qber >= QBER_ABORT_THRESHOLD {
            self.qber_streak += 1;
            if self.qber_level != Some(Severity::Critical) {
                self.qber_level = Some(Severity::Critical);
                out.push(
                    Alarm::new(EventKind::QberHigh)
                        .severity(Severity::Critical)
                        .with("qber", obs.qber)
                        .with("aborted", true),
                );
            }
        } else if obs.qber >= self.thresholds.qber_warning {
            self.qber_streak += 1;
            if self.qber_streak >= self.thresholds.qber_sustain_ticks && self.qber_level.is_none() {
                self.qber_level = Some(Severity::Warning);
                out.push(
                    Alarm::new(EventKind::QberHigh)
                        .with("qber", obs.qber)
                        .with("aborted", false),
                );
            }
        } else {
            self.qber_streak = 0;
            self.qber_level = None;
        }
        out
    }
}

/// Edge-triggered alarm latch keyed by `(source, kind)`: a raise passes
/// only when no identical alarm is outstanding.
#[derive(Debug, Clone, Default)]
pub struct AlarmGate {
    active: BTreeSet<(String, EventKind)>,
}

impl AlarmGate {
    pub fn raise(&mut self, source: &str, kind: EventKind) -> bool {
        self.active.insert((source.to_string(), kind))
    }

    pub fn clear(&mut self, source: &str, kind: EventKind) -> bool {
        self.active.remove(&(source.to_string(), kind))
    }

    pub fn is_active(&self, source: &str, kind: EventKind) -> bool {
        self.active.contains(&(source.to_string(), kind))
    }
}
