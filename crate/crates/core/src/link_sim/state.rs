use std::collections::VecDeque;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use super::buffer::{BufferError, KeyBlock, KeyBuffer, PadRef, PadSlice};
use super::rate::{self, QkdSystemParams, QBER_ABORT_THRESHOLD};
use crate::seed::derive_seed;
use crate::telemetry::{Alarm, AlarmThresholds, EventIds, EventKind, LinkAlarmRules, LinkObservation, TelemetryEvent};
use crate::topology::{LinkId, LinkProfile, NodeId};

const CONSUMPTION_WINDOW_S: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkStatus {
    Up,
    Down,
}

/// Periodic or one-off reduction of link availability, standing in for
/// the receiver's stabilisation loops re-locking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvailabilityDip {
    pub start_s: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub period_s: Option<f64>,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvailabilityProfile {
    pub base: f64,
    pub dips: Vec<AvailabilityDip>,
    /// Amplitude of uniform per-tick QBER noise.
    pub qber_jitter: f64,
}

impl Default for AvailabilityProfile {
    fn default() -> Self {
        AvailabilityProfile {
            base: 1.0,
            dips: Vec::new(),
            qber_jitter: 0.0,
        }
    }
}

impl AvailabilityProfile {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.base) {
            return Err("availability base must be in [0, 1]".into());
        }
        if !(0.0..0.5).contains(&self.qber_jitter) {
            return Err("qber_jitter must be in [0, 0.5)".into());
        }
        for d in &self.dips {
            let period_ok = d.period_s.map_or(true, |p| p > d.duration_s);
            if !(0.0..=1.0).contains(&d.factor) || d.duration_s < 0.0 || d.start_s < 0.0 || !period_ok {
                return Err(format!("bad availability dip {d:?}"));
            }
        }
        Ok(())
    }

    pub fn factor_at(&self, t: f64) -> f64 {
        let dip = self
            .dips
            .iter()
            .filter(|d| {
                if t < d.start_s {
                    return false;
                }
                let since = t - d.start_s;
                let phase = d.period_s.map_or(since, |p| since.rem_euclid(p));
                phase < d.duration_s
            })
            .map(|d| d.factor)
            .fold(1.0, f64::min);
        self.base * dip
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("{node} is not an endpoint of link {link}")]
    UnknownEndpoint { link: LinkId, node: NodeId },
    #[error(transparent)]
    Buffer(#[from] BufferError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkStats {
    /// ∫ secure_rate · availability dt over the run, in bits.
    pub integrated_bits: f64,
    pub blocks_emitted: u64,
    /// Completed blocks dropped because the buffer was at capacity.
    pub blocks_discarded: u64,
}

/// Dynamic state of one endpoint of a QKD link.
#[derive(Debug, Clone)]
pub struct LinkState {
    pub link_id: LinkId,
    pub endpoint: NodeId,
    params: QkdSystemParams,
    availability: AvailabilityProfile,
    transmittance: f64,
    base_qber: f64,
    nominal_rate_bps: f64,
    forced_qber: Option<f64>,
    current_qber: f64,
    secure_rate_bps: f64,
    buffer: KeyBuffer,
    accumulated_bits: u64,
    carry_bits: f64,
    status: LinkStatus,
    reported_status: LinkStatus,
    now: f64,
    key_rng: ChaCha20Rng,
    jitter_rng: ChaCha20Rng,
    ids: EventIds,
    rules: LinkAlarmRules,
    consumption: VecDeque<(f64, u64)>,
    stats: LinkStats,
}

impl LinkState {
    /// Endpoint state seeded from `seed`; two states built from the same
    /// profile and seed evolve identically.
    pub fn new(profile: &LinkProfile, endpoint: &str, thresholds: AlarmThresholds, seed: [u8; 32]) -> Self {
        let params = profile.qkd_params.clone();
        let base_qber = rate::qber(profile, &params);
        LinkState {
            link_id: profile.link_id.clone(),
            endpoint: endpoint.to_string(),
            transmittance: rate::transmittance(profile, &params),
            base_qber,
            nominal_rate_bps: rate::finite_key_rate(profile, &params),
            forced_qber: None,
            current_qber: base_qber,
            secure_rate_bps: 0.0,
            buffer: KeyBuffer::default(),
            accumulated_bits: 0,
            carry_bits: 0.0,
            status: LinkStatus::Up,
            reported_status: LinkStatus::Up,
            now: 0.0,
            key_rng: ChaCha20Rng::from_seed(seed),
            jitter_rng: ChaCha20Rng::from_seed(derive_seed(0, &[&hex(&seed), "jitter"])),
            ids: EventIds::from_seed(derive_seed(0, &[&hex(&seed), "events"])),
            rules: LinkAlarmRules::new(thresholds),
            consumption: VecDeque::new(),
            stats: LinkStats::default(),
            availability: profile.availability.clone(),
            params,
        }
    }

    pub fn params(&self) -> &QkdSystemParams {
        &self.params
    }

    pub fn transmittance(&self) -> f64 {
        self.transmittance
    }

    pub fn current_qber(&self) -> f64 {
        self.current_qber
    }

    pub fn secure_rate_bps(&self) -> f64 {
        self.secure_rate_bps
    }

    pub fn accumulated_bits(&self) -> u64 {
        self.accumulated_bits
    }

    pub fn status(&self) -> LinkStatus {
        self.status
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    pub fn buffer(&self) -> &KeyBuffer {
        &self.buffer
    }

    pub fn free_bytes(&self) -> u64 {
        self.buffer.free_bytes()
    }

    pub fn set_status(&mut self, status: LinkStatus) {
        self.status = status;
    }

    /// Pins the QBER seen by the abort check and alarms, e.g. to model an
    /// intercept or a misaligned interferometer. `None` restores the model.
    pub fn force_qber(&mut self, qber: Option<f64>) {
        self.forced_qber = qber;
    }

    /// Moves simulated time forward by `dt` seconds.
    ///
    /// Returns the key blocks completed during the step (already appended to
    /// the buffer) and any telemetry raised.
    pub fn advance(&mut self, dt: f64) -> (Vec<KeyBlock>, Vec<TelemetryEvent>) {
        assert!(dt > 0.0, "advance requires dt > 0");
        let start = self.now;
        self.now += dt;
        let mut events = Vec::new();
        let mut blocks = Vec::new();

        if self.status != self.reported_status {
            let kind = match self.status {
                LinkStatus::Down => EventKind::LinkDown,
                LinkStatus::Up => EventKind::LinkUp,
            };
            events.push(self.ids.stamp(&self.link_id, start, Alarm::new(kind)));
            self.reported_status = self.status;
        }

        let jitter = self.availability.qber_jitter * (2.0 * self.jitter_rng.gen::<f64>() - 1.0);
        let model_qber = self.forced_qber.unwrap_or(self.base_qber);
        self.current_qber = (model_qber + jitter).clamp(0.0, 0.5);

        self.secure_rate_bps = match self.status {
            LinkStatus::Down => 0.0,
            LinkStatus::Up if self.current_qber >= QBER_ABORT_THRESHOLD => 0.0,
            LinkStatus::Up => self.nominal_rate_bps,
        };

        let bits = self.secure_rate_bps * dt * self.availability.factor_at(start);
        self.stats.integrated_bits += bits;
        self.carry_bits += bits;
        let whole = self.carry_bits.floor();
        self.carry_bits -= whole;
        self.accumulated_bits += whole as u64;

        let block_bits = self.params.block_size_bits;
        let block_bytes = self.params.block_size_bytes();
        while self.accumulated_bits >= block_bits {
            self.accumulated_bits -= block_bits;
            if self.buffer.free_bytes() + block_bytes as u64 > self.params.buffer_capacity_bytes {
                self.stats.blocks_discarded += 1;
                continue;
            }
            let mut id = [0u8; 16];
            self.key_rng.fill_bytes(&mut id);
            let mut bytes = vec![0u8; block_bytes];
            self.key_rng.fill_bytes(&mut bytes);
            let block = KeyBlock {
                key_id: uuid::Builder::from_random_bytes(id).into_uuid(),
                bytes,
                origin_link: self.link_id.clone(),
                created_at: self.now,
                consumed_ranges: Default::default(),
                reserved_ranges: Default::default(),
            };
            self.stats.blocks_emitted += 1;
            self.buffer.push(block.clone());
            blocks.push(block);
        }

        self.trim_consumption_window();
        let obs = LinkObservation {
            up: self.status == LinkStatus::Up,
            free_bytes: self.buffer.free_bytes(),
            consumed_last_minute: self.consumption.iter().map(|(_, b)| b).sum(),
            qber: self.current_qber,
        };
        for alarm in self.rules.evaluate(&obs) {
            events.push(self.ids.stamp(&self.link_id, self.now, alarm));
        }
        (blocks, events)
    }

    /// Takes the oldest `n` unconsumed bytes at this endpoint.
    pub fn consume_link_key(&mut self, n: usize) -> Result<Vec<PadSlice>, BufferError> {
        let out = self.buffer.consume(n)?;
        self.record_consumption(n as u64);
        Ok(out)
    }

    fn reserve(&mut self, refs: &[PadRef]) -> Result<(), BufferError> {
        self.buffer.reserve(refs)?;
        self.record_consumption(refs.iter().map(|r| r.len as u64).sum());
        Ok(())
    }

    fn take_reserved(&mut self, refs: &[PadRef]) -> Result<Vec<u8>, BufferError> {
        self.buffer.take_reserved(refs)
    }

    fn record_consumption(&mut self, bytes: u64) {
        self.consumption.push_back((self.now, bytes));
        self.trim_consumption_window();
    }

    fn trim_consumption_window(&mut self) {
        while self
            .consumption
            .front()
            .is_some_and(|(t, _)| *t <= self.now - CONSUMPTION_WINDOW_S)
        {
            self.consumption.pop_front();
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Both endpoints of one link, advanced in lockstep from the same seed so
/// their buffers are byte-identical mirrors.
#[derive(Debug, Clone)]
pub struct QkdLink {
    profile: LinkProfile,
    ends: [LinkState; 2],
}

impl QkdLink {
    pub fn new(profile: &LinkProfile, thresholds: AlarmThresholds, seed: [u8; 32]) -> Self {
        let ends = [
            LinkState::new(profile, &profile.endpoints.0, thresholds.clone(), seed),
            LinkState::new(profile, &profile.endpoints.1, thresholds, seed),
        ];
        QkdLink {
            profile: profile.clone(),
            ends,
        }
    }

    pub fn link_id(&self) -> &str {
        &self.profile.link_id
    }

    pub fn profile(&self) -> &LinkProfile {
        &self.profile
    }

    pub fn status(&self) -> LinkStatus {
        self.ends[0].status()
    }

    pub fn set_status(&mut self, status: LinkStatus) {
        for e in &mut self.ends {
            e.set_status(status);
        }
    }

    pub fn force_qber(&mut self, qber: Option<f64>) {
        for e in &mut self.ends {
            e.force_qber(qber);
        }
    }

    pub fn ends(&self) -> &[LinkState; 2] {
        &self.ends
    }

    /// Endpoint state held at `node`.
    pub fn end(&self, node: &str) -> Option<&LinkState> {
        self.ends.iter().find(|e| e.endpoint == node)
    }

    fn index_of(&self, node: &str) -> Result<usize, LinkError> {
        self.ends
            .iter()
            .position(|e| e.endpoint == node)
            .ok_or_else(|| LinkError::UnknownEndpoint {
                link: self.profile.link_id.clone(),
                node: node.to_string(),
            })
    }

    pub fn advance(&mut self, dt: f64) -> (Vec<KeyBlock>, Vec<TelemetryEvent>) {
        let (blocks, events) = self.ends[0].advance(dt);
        let (mirror_blocks, mirror_events) = self.ends[1].advance(dt);
        debug_assert_eq!(blocks, mirror_blocks);
        debug_assert_eq!(events, mirror_events);
        (blocks, events)
    }

    /// Consumes the oldest free bytes at `at` and marks the same bytes at the
    /// far endpoint as spoken for, in one step.
    pub fn consume_link_key(&mut self, at: &str, n: usize) -> Result<Vec<PadSlice>, LinkError> {
        let near = self.index_of(at)?;
        let slices = self.ends[near].consume_link_key(n)?;
        let refs: Vec<PadRef> = slices.iter().map(PadSlice::pad_ref).collect();
        self.ends[1 - near]
            .reserve(&refs)
            .expect("mirrored buffers diverged");
        Ok(slices)
    }

    /// Reads pad bytes the peer consumed, once, at endpoint `at`.
    pub fn take_pad(&mut self, at: &str, refs: &[PadRef]) -> Result<Vec<u8>, LinkError> {
        let i = self.index_of(at)?;
        Ok(self.ends[i].take_reserved(refs)?)
    }

    /// Whether both endpoints hold the same blocks, byte for byte.
    pub fn mirrors_identical(&self) -> bool {
        let a = self.ends[0].buffer();
        let b = self.ends[1].buffer();
        a.total_bytes_received() == b.total_bytes_received()
            && a.blocks()
                .zip(b.blocks())
                .all(|(x, y)| x.key_id == y.key_id && x.bytes == y.bytes)
    }

    /// Consumed bytes at each endpoint, retired blocks included.
    pub fn consumed_bytes(&self) -> [u64; 2] {
        [self.ends[0].buffer().consumed_bytes(), self.ends[1].buffer().consumed_bytes()]
    }

    pub fn block_ids(&self) -> Vec<Uuid> {
        self.ends[0].buffer().blocks().map(|b| b.key_id).collect()
    }
}
