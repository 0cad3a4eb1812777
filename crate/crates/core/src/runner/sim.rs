use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::report::{KmsReport, LinkReport, PairReport, RunReport, SessionReport, TimeseriesRow};
use super::scenario::{FaultAction, Scenario, SessionSpec};
use super::RunError;
use crate::api::{KeyDeliveryService, LocalKeyClient};
use crate::encryptor::{DhGroup, Encryptor, EncryptorError, Inbound, Role, TransitForwarder};
use crate::kms::{KeyState, KmsNetwork};
use crate::link_sim::{finite_key_rate, KeyBuffer, LinkStatus, QkdLink};
use crate::seed::derive_seed;
use crate::telemetry::{Collector, EventIds, EventKind, TelemetryEvent, TelemetryPlane};
use crate::topology::{NodeId, Topology};

/// Everything a finished run produced.
#[derive(Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub timeseries: Vec<TimeseriesRow>,
    pub events: Vec<TelemetryEvent>,
}

struct Session {
    spec: SessionSpec,
    master_node: NodeId,
    slave_node: NodeId,
    master: Encryptor<LocalKeyClient>,
    slave: Encryptor<LocalKeyClient>,
    // One forwarder per transit node, in travel order.
    downstream: Vec<TransitForwarder>,
    upstream: Vec<TransitForwarder>,
    traffic: ChaCha20Rng,
    report: SessionReport,
}

fn carry(hops: &mut [TransitForwarder], bytes: Vec<u8>) -> Result<Vec<u8>, EncryptorError> {
    hops.iter_mut().try_fold(bytes, |b, hop| Ok(hop.forward(&b)?))
}

impl Session {
    fn new(spec: &SessionSpec, topology: &Topology, service: &KeyDeliveryService, scenario: &Scenario) -> Result<Self, RunError> {
        let master_sae = topology.sae(&spec.master_sae).expect("validated");
        let slave_sae = topology.sae(&spec.slave_sae).expect("validated");
        let route = topology
            .route_between(&master_sae.node_id, &slave_sae.node_id)
            .map_err(|e| RunError::Session {
                sae: spec.master_sae.clone(),
                detail: e.to_string(),
            })?;
        let transit = route.nodes.len().saturating_sub(2);
        let group = DhGroup::modp2048();
        let seed = |role: &str| derive_seed(scenario.seed, &["encryptor", &spec.master_sae, &spec.slave_sae, role]);
        Ok(Session {
            master: Encryptor::new(
                Role::Master,
                &spec.master_sae,
                &spec.slave_sae,
                LocalKeyClient::new(service.clone(), &master_sae.token),
                scenario.encryptor.clone(),
                group.clone(),
                seed("master"),
            ),
            slave: Encryptor::new(
                Role::Slave,
                &spec.slave_sae,
                &spec.master_sae,
                LocalKeyClient::new(service.clone(), &slave_sae.token),
                scenario.encryptor.clone(),
                group,
                seed("slave"),
            ),
            downstream: vec![TransitForwarder::default(); transit],
            upstream: vec![TransitForwarder::default(); transit],
            traffic: ChaCha20Rng::from_seed(seed("traffic")),
            report: SessionReport {
                master_sae: spec.master_sae.clone(),
                slave_sae: spec.slave_sae.clone(),
                route: route.nodes.clone(),
                ..Default::default()
            },
            master_node: master_sae.node_id.clone(),
            slave_node: slave_sae.node_id.clone(),
            spec: spec.clone(),
        })
    }

    fn fail(&self, e: EncryptorError) -> RunError {
        RunError::Session {
            sae: self.spec.master_sae.clone(),
            detail: e.to_string(),
        }
    }

    fn refresh(&mut self, now: f64) -> Result<(), EncryptorError> {
        if now + 1e-9 < self.spec.start_s || !self.master.refresh_due(now) {
            return Ok(());
        }
        self.report.refresh_attempts += 1;
        let Some(offer) = self.master.begin_refresh(now)? else {
            self.report.refresh_failures += 1;
            return Ok(());
        };
        let offer = carry(&mut self.downstream, offer)?;
        let Inbound::Control { reply: Some(answer) } = self.slave.receive(now, &offer)? else {
            return Err(EncryptorError::UnexpectedFrame("slave did not answer the key offer".into()));
        };
        let answer = carry(&mut self.upstream, answer)?;
        self.master.receive(now, &answer)?;
        match (self.master.session_key(), self.slave.session_key()) {
            (Some(m), Some(s)) if m.key_bytes() == s.key_bytes() && m.epoch == s.epoch => {}
            _ => self.report.key_mismatches += 1,
        }
        Ok(())
    }

    fn send_traffic(&mut self, now: f64, frames: u32, payload_bytes: usize) -> Result<(), EncryptorError> {
        for i in 0..2 * frames {
            let mut payload = vec![0u8; payload_bytes];
            self.traffic.fill_bytes(&mut payload);
            let (tx, rx, hops) = if i % 2 == 0 {
                (&mut self.master, &mut self.slave, &mut self.downstream)
            } else {
                (&mut self.slave, &mut self.master, &mut self.upstream)
            };
            let frame = match tx.encrypt(&payload) {
                Ok(f) => f,
                Err(EncryptorError::NoSessionKey) => {
                    self.report.frames_unkeyed += 1;
                    continue;
                }
                Err(EncryptorError::Halted) => {
                    self.report.frames_halted += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            self.report.frames_sent += 1;
            let frame = carry(hops, frame)?;
            match rx.receive(now, &frame) {
                Ok(Inbound::Data(p)) if p == payload => self.report.frames_delivered += 1,
                Ok(_) => self.report.payload_mismatches += 1,
                Err(EncryptorError::Frame(_) | EncryptorError::Replay { .. }) => self.report.frames_rejected += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    fn finish(mut self) -> SessionReport {
        let r = &mut self.report;
        r.epochs_master = self.master.current_epoch();
        r.epochs_slave = self.slave.current_epoch();
        r.epoch_times = self.master.epoch_log().iter().map(|(_, t)| *t).collect();
        r.keys_match = r.key_mismatches == 0
            && match (self.master.session_key(), self.slave.session_key()) {
                (Some(m), Some(s)) => m.key_bytes() == s.key_bytes(),
                (None, None) => true,
                _ => false,
            };
        r.starved_at_end = self.master.is_starved();
        let mut marks = vec![self.spec.start_s];
        marks.extend(&r.epoch_times);
        r.longest_gap_s = marks.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        r.transit_frames = self.downstream.iter().chain(&self.upstream).map(|h| h.frames_forwarded).sum();
        self.report
    }
}

/// Digest of one endpoint's held blocks.
pub fn buffer_digest(buffer: &KeyBuffer) -> String {
    let mut h = Sha256::new();
    h.update(buffer.total_bytes_received().to_be_bytes());
    for b in buffer.blocks() {
        h.update(b.key_id.as_bytes());
        h.update((b.bytes.len() as u64).to_be_bytes());
        h.update(&b.bytes);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Default)]
struct LinkTrack {
    min_free: Option<u64>,
    qber_sum: f64,
    ticks: u64,
    down_s: f64,
}

fn sample(link: &QkdLink, at: f64, track: &mut LinkTrack, dt: f64, rows: &mut Vec<TimeseriesRow>) {
    let end = &link.ends()[0];
    let stats = end.stats();
    let up = link.status() == LinkStatus::Up;
    track.min_free = Some(track.min_free.map_or(end.free_bytes(), |m| m.min(end.free_bytes())));
    track.qber_sum += end.current_qber();
    track.ticks += 1;
    if !up {
        track.down_s += dt;
    }
    rows.push(TimeseriesRow {
        t: at,
        link_id: link.link_id().to_string(),
        up,
        secure_rate_bps: end.secure_rate_bps(),
        qber: end.current_qber(),
        free_bytes: end.free_bytes(),
        blocks_emitted: stats.blocks_emitted,
        blocks_discarded: stats.blocks_discarded,
        consumed_bytes: link.consumed_bytes()[0],
    });
}

/// Runs a scenario to completion without touching the filesystem beyond
/// the topology and, if configured, the NOC log.
pub fn run(scenario: &Scenario) -> Result<RunOutput, RunError> {
    let topology = scenario.validate()?;
    let collector = match &scenario.outputs.noc_log {
        Some(path) => {
            if path.exists() {
                std::fs::remove_file(path).map_err(|e| RunError::io(path, e))?;
            }
            Collector::with_log_file(path).map_err(|e| RunError::io(path, e))?
        }
        None => Collector::in_memory(),
    };
    let mut plane = TelemetryPlane::new(
        &topology,
        collector,
        EventIds::from_seed(derive_seed(scenario.seed, &["telemetry"])),
        EventIds::from_seed(derive_seed(scenario.seed, &["telemetry", "in-band"])),
    );
    let net = KmsNetwork::new(
        topology.clone(),
        scenario.kms.clone(),
        scenario.thresholds.clone(),
        scenario.seed,
    );
    let kms = Arc::new(Mutex::new(net));
    let service = KeyDeliveryService::new(Arc::clone(&kms), scenario.api.clone());
    let mut sessions = scenario
        .sessions
        .iter()
        .map(|s| Session::new(s, &topology, &service, scenario))
        .collect::<Result<Vec<_>, _>>()?;

    let mut faults = scenario.faults.clone();
    faults.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    let mut next_fault = 0;

    let duration = scenario.duration_s as f64;
    let ticks = (duration / scenario.tick_s - 1e-9).ceil() as u64;
    let mut timeseries = Vec::new();
    let mut tracks: BTreeMap<String, LinkTrack> = BTreeMap::new();
    let mut relay_failures = 0u64;

    for k in 0..ticks {
        let t0 = k as f64 * scenario.tick_s;
        let t1 = ((k + 1) as f64 * scenario.tick_s).min(duration);
        let dt = t1 - t0;

        while next_fault < faults.len() && faults[next_fault].time_s < t1 {
            let f = &faults[next_fault];
            let status = match f.action {
                FaultAction::Down => LinkStatus::Down,
                FaultAction::Up => LinkStatus::Up,
            };
            kms.lock().expect("kms lock").set_link_status(&f.link_id, status)?;
            plane.set_link_up(&f.link_id, status == LinkStatus::Up)?;
            next_fault += 1;
        }

        let events = kms.lock().expect("kms lock").advance(dt);
        for ev in events {
            plane.publish(ev)?;
        }

        for s in &mut sessions {
            s.refresh(t1).map_err(|e| s.fail(e))?;
            s.send_traffic(t1, scenario.traffic.frames_per_tick, scenario.traffic.payload_bytes)
                .map_err(|e| s.fail(e))?;
        }

        for (source, alarm) in kms.lock().expect("kms lock").drain_alarms() {
            if alarm.kind == EventKind::RelayFailed {
                relay_failures += 1;
            }
            plane.notify(&source, t1, alarm)?;
        }
        for s in &mut sessions {
            for (node, enc) in [(&s.master_node, &mut s.master), (&s.slave_node, &mut s.slave)] {
                for alarm in enc.drain_alarms() {
                    match alarm.kind {
                        EventKind::KeyStarvation => {
                            plane.raise(node, t1, alarm)?;
                        }
                        EventKind::EpochAdvanced => {
                            plane.clear(node, EventKind::KeyStarvation);
                            plane.notify(node, t1, alarm)?;
                        }
                        _ => plane.notify(node, t1, alarm)?,
                    }
                }
            }
        }

        let net = kms.lock().expect("kms lock");
        for link in net.links() {
            let track = tracks.entry(link.link_id().to_string()).or_default();
            sample(link, t1, track, dt, &mut timeseries);
        }
    }

    plane.flush()?;
    let net = kms.lock().expect("kms lock");
    let report = RunReport {
        duration_s: scenario.duration_s,
        tick_s: scenario.tick_s,
        seed: scenario.seed,
        ticks,
        links: link_reports(&net, &tracks),
        sessions: sessions.into_iter().map(Session::finish).collect(),
        kms: kms_report(&net, relay_failures),
        alarms: alarm_counts(plane.collector().events()),
        telemetry_overflows: plane.overflows(),
    };
    drop(net);
    Ok(RunOutput {
        report,
        timeseries,
        events: plane.into_collector().events().to_vec(),
    })
}

fn link_reports(net: &KmsNetwork, tracks: &BTreeMap<String, LinkTrack>) -> BTreeMap<String, LinkReport> {
    net.links()
        .map(|link| {
            let profile = link.profile();
            let end = &link.ends()[0];
            let stats = end.stats();
            let track = &tracks[link.link_id()];
            let report = LinkReport {
                system: format!("{:?}", profile.system),
                length_km: profile.length_km,
                nominal_rate_bps: finite_key_rate(profile, end.params()),
                integrated_bits: stats.integrated_bits,
                blocks_emitted: stats.blocks_emitted,
                blocks_discarded: stats.blocks_discarded,
                consumed_bytes: link.consumed_bytes(),
                free_bytes: end.free_bytes(),
                min_free_bytes: track.min_free.unwrap_or(0),
                mean_qber: if track.ticks == 0 { 0.0 } else { track.qber_sum / track.ticks as f64 },
                down_s: track.down_s,
                mirrors_identical: link.mirrors_identical(),
                mirror_digests: [buffer_digest(link.ends()[0].buffer()), buffer_digest(link.ends()[1].buffer())],
            };
            (link.link_id().to_string(), report)
        })
        .collect()
}

fn kms_report(net: &KmsNetwork, relay_failures: u64) -> KmsReport {
    let mut per_pair: BTreeMap<String, PairReport> = BTreeMap::new();
    let mut report = KmsReport::default();
    for (_, r) in net.key_records() {
        report.keys_minted += 1;
        let pair = per_pair.entry(format!("{}->{}", r.master_sae_id, r.slave_sae_id)).or_default();
        match r.state {
            KeyState::Delivered => {
                pair.delivered += 1;
                pair.delivered_bytes += r.size_bits as u64 / 8;
            }
            KeyState::Consumed => {
                pair.delivered += 1;
                pair.consumed += 1;
                pair.delivered_bytes += r.size_bits as u64 / 8;
            }
            KeyState::Failed => pair.failed += 1,
            KeyState::Minted | KeyState::InTransit => {}
        }
    }
    report.keys_delivered = per_pair.values().map(|p| p.delivered).sum();
    report.keys_failed = per_pair.values().map(|p| p.failed).sum();
    report.per_pair = per_pair;
    report.envelopes = net.envelopes().len() as u64;
    report.envelope_bytes = net.envelopes().iter().map(|e| e.ciphertext_len as u64).sum();
    report.relay_failures = relay_failures;
    report.pad_audit_clean = net.pad_audit().is_clean();
    report
}

fn alarm_counts(events: &[TelemetryEvent]) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for e in events {
        *out.entry(e.kind.as_str().to_string()).or_default() += 1;
    }
    out
}
