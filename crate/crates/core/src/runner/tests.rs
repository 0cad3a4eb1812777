use super::*;
use crate::telemetry::{check_link_alternation, read_log, EventKind};
use std::path::PathBuf;

fn examples() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples")
}

fn london(duration_s: u64, extra: &str) -> Scenario {
    let doc = format!(r#"{{"topology_path": "london.json", "duration_s": {duration_s}, "seed": 11 {extra}}}"#);
    Scenario::parse(&doc, &examples()).unwrap()
}

#[test]
fn short_london_run_refreshes_every_period() {
    let out = run(&london(180, "")).unwrap();
    let r = &out.report;
    assert_eq!(r.ticks, 180);
    let s = &r.sessions[0];
    assert_eq!(s.route, ["customer-a", "core-a", "core-b", "customer-b"]);
    assert_eq!((s.epochs_master, s.epochs_slave), (3, 3));
    assert_eq!(s.epoch_times, [1.0, 61.0, 121.0]);
    assert!(s.keys_match);
    assert_eq!(s.refresh_failures, 0);
    assert_eq!(s.frames_sent, s.frames_delivered);
    assert_eq!(s.frames_sent, 2 * 180);
    assert_eq!(s.transit_frames, 2 * (s.frames_sent + 2 * 3));
    assert_eq!(r.alarm_count("KEY_STARVATION"), 0);
    assert_eq!(r.alarm_count("EPOCH_ADVANCED"), 6);
    assert_eq!(r.kms.per_pair["sae-a->sae-b"].consumed, 3);
    assert!(r.kms.pad_audit_clean);
    // 3 keys of 64 bytes over 3 hops each.
    assert_eq!(r.kms.envelope_bytes, 3 * 3 * 64);
    assert!(r.links.values().all(|l| l.mirrors_identical && l.mirror_digests[0] == l.mirror_digests[1]));
    assert_eq!(out.timeseries.len(), 180 * 5);
}

#[test]
fn outage_starves_then_recovers() {
    let faults = r#", "faults": [
        {"time_s": 120, "link_id": "core-ab", "action": "Down"},
        {"time_s": 180, "link_id": "core-ab", "action": "Up"}]"#;
    let out = run(&london(300, faults)).unwrap();
    let s = &out.report.sessions[0];
    assert_eq!(s.epoch_times, [1.0, 61.0, 181.0, 241.0]);
    assert!(!s.starved_at_end);
    assert!(s.refresh_failures >= 59);
    assert_eq!(out.report.alarm_count("KEY_STARVATION"), 1);
    assert!(out.report.alarm_count("RELAY_FAILED") >= 59);
    assert_eq!(out.report.alarm_count("LINK_DOWN"), 1);
    assert_eq!(out.report.alarm_count("LINK_UP"), 1);
    assert!(s.frames_delivered == s.frames_sent, "stale key keeps traffic flowing");
    assert_eq!(out.report.links["core-ab"].down_s, 60.0);
    check_link_alternation(&out.events).unwrap();
    let down = out.events.iter().find(|e| e.kind == EventKind::LinkDown).unwrap();
    assert_eq!((down.source.as_str(), down.at), ("core-ab", 120.0));
}

#[test]
fn outputs_written_and_log_matches_memory() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = london(90, "");
    s.outputs = Outputs {
        report: Some(dir.path().join("out/report.json")),
        timeseries: Some(dir.path().join("out/ts.csv")),
        noc_log: Some(dir.path().join("out/noc.log.jsonl")),
    };
    let first = run_scenario(&s).unwrap();
    let report = std::fs::read_to_string(dir.path().join("out/report.json")).unwrap();
    assert_eq!(report, first.report.to_json());
    let parsed: RunReport = serde_json::from_str(&report).unwrap();
    assert_eq!(parsed, first.report);
    let rows = read_timeseries(std::fs::File::open(dir.path().join("out/ts.csv")).unwrap()).unwrap();
    assert_eq!(rows, first.timeseries);
    assert_eq!(read_log(dir.path().join("out/noc.log.jsonl")).unwrap(), first.events);
    // A rerun replaces the log instead of appending to it.
    let second = run_scenario(&s).unwrap();
    assert_eq!(read_log(dir.path().join("out/noc.log.jsonl")).unwrap(), second.events);
    assert_eq!(first.events, second.events);
}

#[test]
fn exit_codes() {
    let bad = london(60, r#", "tick_s": 90"#);
    assert_eq!(run(&bad).unwrap_err().exit_code(), EXIT_VALIDATION);
    let mut unwritable = london(5, "");
    unwritable.outputs.report = Some(PathBuf::from("/proc/qsmn/report.json"));
    assert_eq!(run_scenario(&unwritable).unwrap_err().exit_code(), EXIT_RUNTIME);
}

#[test]
fn fractional_last_tick() {
    let out = run(&london(10, r#", "tick_s": 3"#)).unwrap();
    assert_eq!(out.report.ticks, 4);
    let times: Vec<f64> = out.timeseries.iter().filter(|r| r.link_id == "core-ab").map(|r| r.t).collect();
    assert_eq!(times, [3.0, 6.0, 9.0, 10.0]);
}

#[tokio::test]
async fn service_answers_and_shuts_down_cleanly() {
    use crate::api::HttpKeyClient;
    use crate::topology::load_topology_file;

    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("noc.log.jsonl");
    let mut config = ServeConfig::new(
        load_topology_file(examples().join("london.json")).unwrap(),
        "127.0.0.1:0".parse().unwrap(),
        "127.0.0.1:0".parse().unwrap(),
    );
    config.tick_interval = std::time::Duration::from_millis(10);
    config.noc_log = Some(log.clone());
    let bound = BoundService::bind(config).await.unwrap();
    let endpoint = format!("http://{}", bound.api_addr());
    let kms = bound.kms();
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(bound.run(async {
        let _ = stopped.await;
    }));

    let master = HttpKeyClient::new(&endpoint, "token-sae-a");
    let slave = HttpKeyClient::new(&endpoint, "token-sae-b");
    let status = master.status("sae-b").await.unwrap();
    assert_eq!(status.slave_SAE_ID, "sae-b");
    let enc = master.enc_keys("sae-b", 2, 256).await.unwrap();
    let dec = slave.dec_keys("sae-a", &enc.key_ids()).await.unwrap();
    assert_eq!(enc.decode().unwrap(), dec.decode().unwrap());

    kms.lock().unwrap().set_link_status("access-a", crate::link_sim::LinkStatus::Down).unwrap();
    tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    stop.send(()).unwrap();
    let summary = server.await.unwrap().unwrap();
    assert!(summary.sim_time_s > 30.0);
    let logged = read_log(&log).unwrap();
    assert_eq!(logged.len(), summary.events_logged);
    assert!(logged.iter().any(|e| e.kind == EventKind::LinkDown && e.source == "access-a"));
}
