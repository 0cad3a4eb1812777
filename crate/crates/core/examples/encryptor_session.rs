//! Two encryptors refresh session keys from the KMS and exchange frames
//! through a transit node.

use std::sync::{Arc, Mutex};

use qsmn::api::{ApiConfig, KeyDeliveryService, LocalKeyClient};
use qsmn::encryptor::{DhGroup, Encryptor, EncryptorConfig, Inbound, Role, TransitForwarder};
use qsmn::kms::{KmsConfig, KmsNetwork};
use qsmn::seed::derive_seed;
use qsmn::telemetry::AlarmThresholds;
use qsmn::topology::load_topology_file;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let topology = load_topology_file(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/london.json"))?;
    let kms = Arc::new(Mutex::new(KmsNetwork::new(topology, KmsConfig::default(), AlarmThresholds::default(), 3)));
    let service = KeyDeliveryService::new(kms.clone(), ApiConfig::default());
    let group = DhGroup::modp2048();
    let config = EncryptorConfig::default();
    let mut master = Encryptor::new(
        Role::Master,
        "sae-a",
        "sae-b",
        LocalKeyClient::new(service.clone(), "token-sae-a"),
        config.clone(),
        group.clone(),
        derive_seed(3, &["master"]),
    );
    let mut slave = Encryptor::new(
        Role::Slave,
        "sae-b",
        "sae-a",
        LocalKeyClient::new(service, "token-sae-b"),
        config,
        group,
        derive_seed(3, &["slave"]),
    );
    let mut down = TransitForwarder::default();
    let mut up = TransitForwarder::default();

    for minute in 0..3 {
        let now = 1.0 + 60.0 * minute as f64;
        kms.lock().unwrap().advance(if minute == 0 { 1.0 } else { 60.0 });
        if master.refresh_due(now) {
            let Some(offer) = master.begin_refresh(now)? else {
                println!("t={now}: KMS starved");
                continue;
            };
            let Inbound::Control { reply: Some(answer) } = slave.receive(now, &down.forward(&offer)?)? else {
                return Err("slave did not answer".into());
            };
            master.receive(now, &up.forward(&answer)?)?;
        }
        let same = master.session_key().map(|k| k.key_bytes()) == slave.session_key().map(|k| k.key_bytes());
        println!("t={now}: epoch {} (keys agree: {same})", master.current_epoch());

        let frame = master.encrypt(format!("hello from minute {minute}").as_bytes())?;
        if let Inbound::Data(p) = slave.receive(now, &down.forward(&frame)?)? {
            println!("  slave read {:?}", String::from_utf8_lossy(&p));
        }
        let mut tampered = down.forward(&master.encrypt(b"tamper me")?)?;
        let last = tampered.len() - 1;
        tampered[last] ^= 1;
        println!("  tampered frame: {}", slave.receive(now, &tampered).unwrap_err());
    }
    println!("transit node forwarded {} frames", down.frames_forwarded + up.frames_forwarded);
    Ok(())
}
