//! Alarm and status plane feeding the network operations centre.
//!
//! Traps are plain JSON objects, one per line. Events raised at customer
//! sites reach the collector in-band through their core exchange.

mod collector;
mod event;
mod inband;
mod rules;
mod trap;

use std::collections::BTreeMap;

pub use collector::{check_link_alternation, read_log, Ack, AlarmState, Collector};
pub use event::{Alarm, EventIds, EventKind, Severity, TelemetryEvent};
pub use inband::{InBandAck, InBandRouter, TelemetryError, DEFAULT_QUEUE_CAPACITY};
pub use rules::{AlarmGate, AlarmThresholds, LinkAlarmRules, LinkObservation};
pub use trap::{serve_traps, TcpTrapTransport, TrapSender, TrapTransport};

use crate::topology::{NodeKind, Topology};

/// Simulation-side view of the management network: decides whether an
/// event goes straight to the collector or in-band via a core site.
#[derive(Debug)]
pub struct TelemetryPlane {
    collector: Collector,
    router: InBandRouter,
    ids: EventIds,
    gate: AlarmGate,
    // customer site -> (core site, access link)
    attachments: BTreeMap<String, (String, String)>,
    link_up: BTreeMap<String, bool>,
    overflows: u64,
}

impl TelemetryPlane {
    pub fn new(topology: &Topology, collector: Collector, ids: EventIds, router_ids: EventIds) -> Self {
        let attachments = topology
            .nodes()
            .iter()
            .filter(|n| n.kind == NodeKind::CustomerSite)
            .filter_map(|n| {
                let l = topology.access_link_of(&n.node_id)?;
                let core = l.other_end(&n.node_id)?.to_string();
                Some((n.node_id.clone(), (core, l.link_id.clone())))
            })
            .collect();
        let link_up = topology.links().iter().map(|l| (l.link_id.clone(), true)).collect();
        TelemetryPlane {
            collector,
            router: InBandRouter::new(DEFAULT_QUEUE_CAPACITY, router_ids),
            ids,
            gate: AlarmGate::default(),
            attachments,
            link_up,
            overflows: 0,
        }
    }

    pub fn collector(&self) -> &Collector {
        &self.collector
    }

    pub fn into_collector(self) -> Collector {
        self.collector
    }

    pub fn overflows(&self) -> u64 {
        self.overflows
    }

    /// Records a link state change; a recovered access link flushes the
    /// queued events of its customer site.
    pub fn set_link_up(&mut self, link: &str, up: bool) -> Result<(), TelemetryError> {
        self.link_up.insert(link.to_string(), up);
        if up {
            let sites: Vec<(String, String)> = self
                .attachments
                .iter()
                .filter(|(_, (_, l))| l == link)
                .map(|(s, (c, _))| (s.clone(), c.clone()))
                .collect();
            for (site, core) in sites {
                self.router.flush(&site, &core, &mut self.collector)?;
            }
        }
        Ok(())
    }

    pub fn publish(&mut self, event: TelemetryEvent) -> Result<(), TelemetryError> {
        match self.attachments.get(&event.source) {
            Some((core, link)) => {
                let up = self.link_up.get(link).copied().unwrap_or(true);
                let (core, source) = (core.clone(), event.source.clone());
                match self.router.route_in_band(event, &source, &core, up, &mut self.collector) {
                    Ok(_) => Ok(()),
                    Err(TelemetryError::QueueOverflow { .. }) => {
                        self.overflows += 1;
                        Ok(())
                    }
                    Err(e) => Err(e),
                }
            }
            None => {
                self.collector.emit(event)?;
                Ok(())
            }
        }
    }

    /// Stamps and publishes unconditionally.
    pub fn notify(&mut self, source: &str, at: f64, alarm: Alarm) -> Result<(), TelemetryError> {
        let ev = self.ids.stamp(source, at, alarm);
        self.publish(ev)
    }

    /// Publishes only if no identical `(source, kind)` alarm is outstanding.
    pub fn raise(&mut self, source: &str, at: f64, alarm: Alarm) -> Result<bool, TelemetryError> {
        if !self.gate.raise(source, alarm.kind) {
            return Ok(false);
        }
        self.notify(source, at, alarm)?;
        Ok(true)
    }

    pub fn clear(&mut self, source: &str, kind: EventKind) -> bool {
        self.gate.clear(source, kind)
    }

    pub fn flush(&mut self) -> Result<(), TelemetryError> {
        Ok(self.collector.flush()?)
    }
}
