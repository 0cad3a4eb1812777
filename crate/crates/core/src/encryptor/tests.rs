use super::*;
use crate::api::{ApiConfig, KeyDeliveryService, LocalKeyClient};
use crate::kms::{KmsConfig, KmsNetwork};
use crate::link_sim::LinkStatus;
use crate::telemetry::AlarmThresholds;
use crate::topology::load_topology;
use std::sync::Mutex;

const LONDON: &str = include_str!("../../examples/london.json");

struct Pair {
    service: KeyDeliveryService,
    master: Encryptor<LocalKeyClient>,
    slave: Encryptor<LocalKeyClient>,
}

fn pair(warmup_s: u32, config: EncryptorConfig) -> Pair {
    let mut net = KmsNetwork::new(load_topology(LONDON).unwrap(), KmsConfig::default(), AlarmThresholds::default(), 9);
    for _ in 0..warmup_s {
        net.advance(1.0);
    }
    let service = KeyDeliveryService::new(Arc::new(Mutex::new(net)), ApiConfig::default());
    let group = DhGroup::modp2048();
    let master = Encryptor::new(
        Role::Master,
        "sae-a",
        "sae-b",
        LocalKeyClient::new(service.clone(), "token-sae-a"),
        config.clone(),
        group.clone(),
        [1; 32],
    );
    let slave = Encryptor::new(
        Role::Slave,
        "sae-b",
        "sae-a",
        LocalKeyClient::new(service.clone(), "token-sae-b"),
        config,
        group,
        [2; 32],
    );
    Pair { service, master, slave }
}

fn refresh(p: &mut Pair, now: f64) -> bool {
    let Some(offer) = p.master.begin_refresh(now).unwrap() else {
        return false;
    };
    let Inbound::Control { reply: Some(answer) } = p.slave.receive(now, &offer).unwrap() else {
        panic!("slave must answer an offer");
    };
    assert_eq!(p.master.receive(now, &answer).unwrap(), Inbound::Control { reply: None });
    true
}

#[test]
fn both_ends_derive_the_same_key_every_epoch() {
    let mut p = pair(30, EncryptorConfig::default());
    let mut last: Option<[u8; 32]> = None;
    for i in 0..10 {
        let now = 60.0 * i as f64;
        assert!(p.master.refresh_due(now));
        assert!(refresh(&mut p, now));
        let (m, s) = (p.master.session_key().unwrap(), p.slave.session_key().unwrap());
        assert_eq!(m.key_bytes(), s.key_bytes());
        assert_eq!(m.derived_from, s.derived_from);
        assert_eq!((m.epoch, s.epoch), (i + 1, i + 1));
        assert_ne!(Some(*m.key_bytes()), last);
        last = Some(*m.key_bytes());
        assert!(!p.master.refresh_due(now + 59.0));
    }
    assert_eq!(p.master.epoch_log().len(), 10);
    let advanced = p.master.drain_alarms();
    assert!(advanced.iter().all(|a| a.kind == EventKind::EpochAdvanced));
}

#[test]
fn data_flows_both_ways_and_replays_fail() {
    let mut p = pair(30, EncryptorConfig::default());
    assert_eq!(p.master.encrypt(b"x").unwrap_err(), EncryptorError::NoSessionKey);
    refresh(&mut p, 0.0);
    let f1 = p.master.encrypt(b"hello").unwrap();
    let f2 = p.master.encrypt(b"world").unwrap();
    assert_eq!(p.slave.receive(1.0, &f1).unwrap(), Inbound::Data(b"hello".to_vec()));
    assert_eq!(p.slave.receive(1.0, &f2).unwrap(), Inbound::Data(b"world".to_vec()));
    assert!(matches!(p.slave.receive(1.0, &f1), Err(EncryptorError::Replay { .. })));
    let back = p.slave.encrypt(b"ack").unwrap();
    assert_eq!(p.master.receive(1.0, &back).unwrap(), Inbound::Data(b"ack".to_vec()));
    // A frame sent back to its own sender fails: directions use separate keys.
    let own = p.master.encrypt(b"own").unwrap();
    assert_eq!(
        p.master.receive(1.0, &own).unwrap_err(),
        EncryptorError::Frame(FrameError::AuthFailure)
    );
    let mut tampered = p.master.encrypt(b"data").unwrap();
    let last = tampered.len() - 20;
    tampered[last] ^= 1;
    assert_eq!(
        p.slave.receive(1.0, &tampered).unwrap_err(),
        EncryptorError::Frame(FrameError::AuthFailure)
    );
}

#[test]
fn frames_in_flight_across_switchover_still_open() {
    let mut p = pair(30, EncryptorConfig::default());
    refresh(&mut p, 0.0);
    let old = p.master.encrypt(b"late").unwrap();
    refresh(&mut p, 60.0);
    assert_eq!(p.slave.receive(60.0, &old).unwrap(), Inbound::Data(b"late".to_vec()));
}

#[test]
fn previous_epoch_key_cannot_open_new_frames() {
    let mut p = pair(30, EncryptorConfig::default());
    refresh(&mut p, 0.0);
    let (prev_bytes, prev_from) = {
        let k = p.master.session_key().unwrap();
        (Zeroizing::new(*k.key_bytes()), k.derived_from.0)
    };
    refresh(&mut p, 60.0);
    let (frame, _) = Frame::decode(&p.master.encrypt(b"new epoch").unwrap()).unwrap();
    let stale = SessionKey::new(frame.epoch, prev_bytes, prev_from, b"");
    assert_eq!(
        stale.decrypt_frame(Direction::MasterToSlave, &frame),
        Err(FrameError::AuthFailure)
    );
    let current = p.slave.session_key().unwrap();
    assert_eq!(current.decrypt_frame(Direction::MasterToSlave, &frame).unwrap(), b"new epoch");
}

#[test]
fn starvation_keeps_stale_key_and_raises_once() {
    let mut p = pair(30, EncryptorConfig::default());
    refresh(&mut p, 0.0);
    p.master.drain_alarms();
    p.service
        .kms()
        .lock()
        .unwrap()
        .set_link_status("core-ab", LinkStatus::Down)
        .unwrap();
    for t in [60.0, 61.0, 62.0] {
        assert!(p.master.refresh_due(t));
        assert!(!refresh(&mut p, t));
    }
    let alarms = p.master.drain_alarms();
    assert_eq!(alarms.len(), 1);
    assert_eq!(alarms[0].kind, EventKind::KeyStarvation);
    assert!(p.master.is_starved());
    assert_eq!(p.master.current_epoch(), 1);
    let f = p.master.encrypt(b"still flowing").unwrap();
    assert_eq!(p.slave.receive(62.0, &f).unwrap(), Inbound::Data(b"still flowing".to_vec()));

    p.service
        .kms()
        .lock()
        .unwrap()
        .set_link_status("core-ab", LinkStatus::Up)
        .unwrap();
    assert!(refresh(&mut p, 63.0));
    assert!(!p.master.is_starved());
    assert_eq!(p.master.current_epoch(), 2);
}

#[test]
fn fail_closed_halts_while_starved() {
    let config = EncryptorConfig {
        fail_closed: true,
        ..Default::default()
    };
    let mut p = pair(30, config);
    refresh(&mut p, 0.0);
    p.service
        .kms()
        .lock()
        .unwrap()
        .set_link_status("access-b", LinkStatus::Down)
        .unwrap();
    assert!(!refresh(&mut p, 60.0));
    assert_eq!(p.master.encrypt(b"x").unwrap_err(), EncryptorError::Halted);
}

#[test]
fn corrupted_or_replayed_offers_are_rejected() {
    let mut p = pair(30, EncryptorConfig::default());
    let offer = p.master.begin_refresh(0.0).unwrap().unwrap();
    let mut bad = offer.clone();
    bad[HEADER_LEN + 3] ^= 1;
    assert_eq!(
        p.slave.receive(0.0, &bad).unwrap_err(),
        EncryptorError::Frame(FrameError::AuthFailure)
    );
    assert!(matches!(p.slave.receive(0.0, &offer).unwrap(), Inbound::Control { reply: Some(_) }));
    assert!(matches!(p.slave.receive(0.0, &offer), Err(EncryptorError::UnexpectedFrame(_))));
}

#[test]
fn nonces_never_repeat_per_direction() {
    let mut p = pair(30, EncryptorConfig::default());
    let mut seen = std::collections::BTreeSet::new();
    for e in 0..5 {
        refresh(&mut p, 60.0 * e as f64);
        for _ in 0..50 {
            let (f, _) = Frame::decode(&p.master.encrypt(b"n").unwrap()).unwrap();
            assert!(seen.insert(nonce(f.epoch, f.sequence)));
        }
    }
}
