//! Serves the key delivery API on a loopback port and fetches keys over HTTP.

use std::sync::{Arc, Mutex};

use qsmn::api::{serve_api, ApiConfig, HttpKeyClient, KeyDeliveryService};
use qsmn::kms::{KmsConfig, KmsNetwork};
use qsmn::telemetry::AlarmThresholds;
use qsmn::topology::load_topology_file;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let topology = load_topology_file(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/london.json"))?;
    let mut net = KmsNetwork::new(topology, KmsConfig::default(), AlarmThresholds::default(), 11);
    net.advance(5.0);
    let service = KeyDeliveryService::new(Arc::new(Mutex::new(net)), ApiConfig::default());

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let endpoint = format!("http://{}", listener.local_addr()?);
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve_api(listener, service, async {
        let _ = stopped.await;
    }));

    let master = HttpKeyClient::new(&endpoint, "token-sae-a");
    let slave = HttpKeyClient::new(&endpoint, "token-sae-b");
    let status = master.status("sae-b").await?;
    println!("status: {}", serde_json::to_string_pretty(&status)?);

    let keys = master.enc_keys("sae-b", 2, 256).await?;
    let ids = keys.key_ids();
    println!("master received {ids:?}");
    let redeemed = slave.dec_keys("sae-a", &ids).await?;
    println!("slave copies match: {}", redeemed.decode()? == keys.decode()?);
    match slave.dec_keys("sae-a", &ids).await {
        Ok(_) => println!("second redemption unexpectedly succeeded"),
        Err(e) => println!("second redemption: {e}"),
    }
    match master.enc_keys("sae-b", 1, 100).await {
        Ok(_) => println!("odd key size unexpectedly accepted"),
        Err(e) => println!("odd key size: {e}"),
    }

    let _ = stop.send(());
    server.await??;
    Ok(())
}
