//! Run summary types. Every map is ordered so that serialized reports are
//! byte-identical for identical runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub duration_s: u64,
    pub tick_s: f64,
    pub seed: u64,
    pub ticks: u64,
    pub links: BTreeMap<String, LinkReport>,
    pub sessions: Vec<SessionReport>,
    pub kms: KmsReport,
    /// Logged events per kind.
    pub alarms: BTreeMap<String, u64>,
    pub telemetry_overflows: u64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports always serialize");
        s.push('\n');
        s
    }

    pub fn alarm_count(&self, kind: &str) -> u64 {
        self.alarms.get(kind).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkReport {
    pub system: String,
    pub length_km: f64,
    /// Modelled finite-size rate while up, before availability scaling.
    pub nominal_rate_bps: f64,
    pub integrated_bits: f64,
    pub blocks_emitted: u64,
    pub blocks_discarded: u64,
    pub consumed_bytes: [u64; 2],
    pub free_bytes: u64,
    pub min_free_bytes: u64,
    pub mean_qber: f64,
    pub down_s: f64,
    pub mirrors_identical: bool,
    /// SHA-256 over the blocks held at each endpoint.
    pub mirror_digests: [String; 2],
}

impl LinkReport {
    /// Blocks completed by the rate model, stored or not.
    pub fn blocks_completed(&self) -> u64 {
        self.blocks_emitted + self.blocks_discarded
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionReport {
    pub master_sae: String,
    pub slave_sae: String,
    pub route: Vec<String>,
    pub epochs_master: u32,
    pub epochs_slave: u32,
    pub epoch_times: Vec<f64>,
    pub keys_match: bool,
    pub key_mismatches: u64,
    pub refresh_attempts: u64,
    pub refresh_failures: u64,
    pub starved_at_end: bool,
    /// Longest interval between session start and successive installs.
    pub longest_gap_s: f64,
    pub frames_sent: u64,
    pub frames_delivered: u64,
    pub frames_rejected: u64,
    pub frames_unkeyed: u64,
    pub frames_halted: u64,
    pub payload_mismatches: u64,
    pub transit_frames: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairReport {
    pub delivered: u64,
    pub delivered_bytes: u64,
    pub consumed: u64,
    pub failed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KmsReport {
    pub keys_minted: u64,
    pub keys_delivered: u64,
    pub keys_failed: u64,
    /// Keyed by `master->slave`.
    pub per_pair: BTreeMap<String, PairReport>,
    pub envelopes: u64,
    pub envelope_bytes: u64,
    pub relay_failures: u64,
    pub pad_audit_clean: bool,
}

/// One CSV row: the state of one link at the end of one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeseriesRow {
    pub t: f64,
    pub link_id: String,
    pub up: bool,
    pub secure_rate_bps: f64,
    pub qber: f64,
    pub free_bytes: u64,
    pub blocks_emitted: u64,
    pub blocks_discarded: u64,
    pub consumed_bytes: u64,
}

pub fn write_timeseries<W: std::io::Write>(w: W, rows: &[TimeseriesRow]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_timeseries<R: std::io::Read>(r: R) -> Result<Vec<TimeseriesRow>, csv::Error> {
    csv::Reader::from_reader(r).deserialize().collect()
}
