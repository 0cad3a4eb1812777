//! Injects link faults, collects traps over TCP and replays the NOC log.

use qsmn::link_sim::LinkStatus;
use qsmn::kms::{KmsConfig, KmsNetwork};
use qsmn::telemetry::{
    check_link_alternation, read_log, serve_traps, AlarmState, AlarmThresholds, Collector, EventIds, TcpTrapTransport,
    TrapSender,
};
use qsmn::topology::load_topology_file;
use std::sync::{Arc, Mutex};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("qsmn-telemetry-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let log = dir.join("noc.log.jsonl");
    let collector = Arc::new(Mutex::new(Collector::with_log_file(&log)?));

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let (stop, stopped) = tokio::sync::watch::channel(false);
    let traps = tokio::spawn(serve_traps(listener, collector.clone(), stopped));

    let topology = load_topology_file(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/london.json"))?;
    let mut net = KmsNetwork::new(topology, KmsConfig::default(), AlarmThresholds::default(), 5);
    let mut ids = EventIds::from_seed([5; 32]);
    let mut sender = TrapSender::new(TcpTrapTransport::new(addr));
    let script = [(10.0, LinkStatus::Down), (25.0, LinkStatus::Up), (40.0, LinkStatus::Down), (41.0, LinkStatus::Up)];
    let mut t = 0.0;
    for (at, status) in script.into_iter().chain([(60.0, LinkStatus::Up)]) {
        for e in net.advance(at - t) {
            sender.emit(e);
        }
        t = at;
        for (source, alarm) in net.drain_alarms() {
            sender.emit(ids.stamp(&source, t, alarm));
        }
        net.set_link_status("access-a", status)?;
    }
    let unsent = tokio::task::spawn_blocking(move || sender.flush()).await?;
    println!("traps left unsent: {unsent}");

    tokio::time::sleep(std::time::Duration::from_millis(200)).await;
    let _ = stop.send(true);
    traps.await??;
    collector.lock().unwrap().flush()?;

    let events = read_log(&log)?;
    for e in &events {
        println!("{:>6.1}s {:<16} {}", e.at, e.kind.as_str(), e.source);
    }
    let state = AlarmState::replay(&events);
    println!("replayed counts: {:?}", state.counts);
    println!("link transitions alternate: {}", check_link_alternation(&events).is_ok());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
