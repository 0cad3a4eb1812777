//! Secure key rate of every London link, plus the LD rate against fibre length.

use qsmn::link_sim::{finite_key_rate, qber, transmittance, QkdSystemParams};
use qsmn::topology::load_topology_file;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let topology = load_topology_file(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/london.json"))?;
    let params = QkdSystemParams::default();
    println!("{:<10} {:>7} {:>8} {:>12} {:>8} {:>14}", "link", "system", "km", "eta", "qber", "rate (bps)");
    for link in topology.links() {
        println!(
            "{:<10} {:>7} {:>8.1} {:>12.3e} {:>8.4} {:>14.0}",
            link.link_id,
            format!("{:?}", link.system),
            link.length_km,
            transmittance(link, &params),
            qber(link, &params),
            finite_key_rate(link, &params),
        );
    }

    let ld = topology
        .links()
        .iter()
        .find(|l| l.link_id == "core-ac")
        .expect("London has an LD link");
    println!("\nLD rate against length:");
    for km in (0..=150).step_by(15) {
        let mut profile = ld.clone();
        profile.length_km = km as f64;
        println!("{km:>5} km  {:>14.0} bps", finite_key_rate(&profile, &params));
    }
    Ok(())
}
