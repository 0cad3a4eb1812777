//! Relays global keys across the London core and audits pad usage.

use qsmn::kms::{KmsConfig, KmsNetwork};
use qsmn::link_sim::LinkStatus;
use qsmn::telemetry::AlarmThresholds;
use qsmn::topology::load_topology_file;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let topology = load_topology_file(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/london.json"))?;
    let mut net = KmsNetwork::new(topology, KmsConfig::default(), AlarmThresholds::default(), 7);
    net.advance(2.0);

    for _ in 0..3 {
        let out = net.establish_key(512, "sae-a", "sae-b")?;
        println!("relayed {} over {} hops, {} pad bytes per hop", out.global_key_id, out.hops, out.pad_bytes_per_hop);
    }

    let master = net.issue_to_master("sae-a", "sae-b", 2, 512, false)?;
    let ids: Vec<_> = master.iter().map(|(id, _)| *id).collect();
    let slave = net.redeem_at_slave("sae-b", "sae-a", &ids)?;
    for ((id, m), (_, s)) in master.iter().zip(&slave) {
        println!("{id}: master and slave copies {}", if m[..] == s[..] { "match" } else { "DIFFER" });
    }
    println!("second redemption: {}", net.redeem_at_slave("sae-b", "sae-a", &ids[..1]).unwrap_err());

    net.set_link_status("core-ab", LinkStatus::Down)?;
    match net.establish_key(512, "sae-a", "sae-b") {
        Ok(_) => println!("relay succeeded with core-ab down"),
        Err(e) => println!("relay with core-ab down: {e}"),
    }
    for (source, alarm) in net.drain_alarms() {
        println!("alarm at {source}: {}", alarm.kind.as_str());
    }

    let audit = net.pad_audit();
    println!("envelopes sent: {}, pad audit clean: {}", net.envelopes().len(), audit.is_clean());
    Ok(())
}
