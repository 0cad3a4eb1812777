use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::net::TcpListener;
use tokio::sync::watch;

use super::RunError;
use crate::api::{serve_api, ApiConfig, KeyDeliveryService, SharedKms};
use crate::kms::{KmsConfig, KmsNetwork};
use crate::seed::derive_seed;
use crate::telemetry::{serve_traps, AlarmThresholds, Collector, EventIds};
use crate::topology::Topology;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub topology: Topology,
    pub api_addr: SocketAddr,
    pub trap_addr: SocketAddr,
    pub seed: u64,
    /// Simulated seconds per clock tick.
    pub tick_s: f64,
    /// Wall-clock time between ticks.
    pub tick_interval: Duration,
    /// Simulated seconds run before the listeners accept requests.
    pub warmup_s: u64,
    pub noc_log: Option<PathBuf>,
    pub kms: KmsConfig,
    pub api: ApiConfig,
    pub thresholds: AlarmThresholds,
}

impl ServeConfig {
    pub fn new(topology: Topology, api_addr: SocketAddr, trap_addr: SocketAddr) -> Self {
        ServeConfig {
            topology,
            api_addr,
            trap_addr,
            seed: 0,
            tick_s: 1.0,
            tick_interval: Duration::from_secs(1),
            warmup_s: 30,
            noc_log: None,
            kms: KmsConfig::default(),
            api: ApiConfig::default(),
            thresholds: AlarmThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServeSummary {
    pub sim_time_s: f64,
    pub events_logged: usize,
}

/// Listeners bound and KMS warmed up, not yet serving.
pub struct BoundService {
    config: ServeConfig,
    api: TcpListener,
    traps: TcpListener,
    kms: SharedKms,
    collector: Arc<Mutex<Collector>>,
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, RunError> {
    TcpListener::bind(addr).await.map_err(|source| RunError::Bind {
        addr: addr.to_string(),
        source,
    })
}

impl BoundService {
    pub async fn bind(config: ServeConfig) -> Result<Self, RunError> {
        let api = bind(config.api_addr).await?;
        let traps = bind(config.trap_addr).await?;
        let collector = match &config.noc_log {
            Some(p) => Collector::with_log_file(p).map_err(|e| RunError::Io {
                path: p.clone(),
                source: e,
            })?,
            None => Collector::in_memory(),
        };
        let mut net = KmsNetwork::new(
            config.topology.clone(),
            config.kms.clone(),
            config.thresholds.clone(),
            config.seed,
        );
        for _ in 0..config.warmup_s {
            net.advance(1.0);
        }
        Ok(BoundService {
            config,
            api,
            traps,
            kms: Arc::new(Mutex::new(net)),
            collector: Arc::new(Mutex::new(collector)),
        })
    }

    pub fn api_addr(&self) -> SocketAddr {
        self.api.local_addr().expect("bound listener")
    }

    pub fn trap_addr(&self) -> SocketAddr {
        self.traps.local_addr().expect("bound listener")
    }

    pub fn kms(&self) -> SharedKms {
        Arc::clone(&self.kms)
    }

    pub fn collector(&self) -> Arc<Mutex<Collector>> {
        Arc::clone(&self.collector)
    }

    /// Serves the API, the trap listener and the simulation clock until
    /// `shutdown` resolves, then drains in-flight requests and flushes the log.
    pub async fn run(self, shutdown: impl Future<Output = ()>) -> Result<ServeSummary, RunError> {
        let (stop_tx, stop_rx) = watch::channel(false);
        let service = KeyDeliveryService::new(Arc::clone(&self.kms), self.config.api.clone());
        let mut api_stop = stop_rx.clone();
        let api = tokio::spawn(serve_api(self.api, service, async move {
            let _ = api_stop.wait_for(|s| *s).await;
        }));
        let traps = tokio::spawn(serve_traps(self.traps, Arc::clone(&self.collector), stop_rx.clone()));
        let clock = tokio::spawn(clock(
            Arc::clone(&self.kms),
            Arc::clone(&self.collector),
            EventIds::from_seed(derive_seed(self.config.seed, &["telemetry", "serve"])),
            self.config.tick_s,
            self.config.tick_interval,
            stop_rx,
        ));

        shutdown.await;
        let _ = stop_tx.send(true);
        let joined = |e: tokio::task::JoinError| RunError::Task(e.to_string());
        let api_result = api.await.map_err(joined)?;
        let trap_result = traps.await.map_err(joined)?;
        clock.await.map_err(joined)?;
        api_result.map_err(|e| RunError::Task(format!("api: {e}")))?;
        trap_result.map_err(|e| RunError::Task(format!("traps: {e}")))?;

        let mut collector = self.collector.lock().expect("collector lock");
        collector.flush().map_err(|e| RunError::Task(format!("log flush: {e}")))?;
        let sim_time_s = self.kms.lock().expect("kms lock").now();
        Ok(ServeSummary {
            sim_time_s,
            events_logged: collector.events().len(),
        })
    }
}

async fn clock(
    kms: SharedKms,
    collector: Arc<Mutex<Collector>>,
    mut ids: EventIds,
    tick_s: f64,
    interval: Duration,
    mut stop: watch::Receiver<bool>,
) {
    let mut timer = tokio::time::interval(interval);
    timer.tick().await;
    loop {
        tokio::select! {
            _ = timer.tick() => {
                let (events, alarms, now) = {
                    let mut net = kms.lock().expect("kms lock");
                    let events = net.advance(tick_s);
                    (events, net.drain_alarms(), net.now())
                };
                let mut c = collector.lock().expect("collector lock");
                for ev in events {
                    let _ = c.emit(ev);
                }
                for (source, alarm) in alarms {
                    let _ = c.emit(ids.stamp(&source, now, alarm));
                }
            }
            _ = stop.wait_for(|s| *s) => break,
        }
    }
}
