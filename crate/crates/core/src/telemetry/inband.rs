//! Customer-site management traffic rides the access link to the core site.
//! While that link is down events wait in a bounded per-site queue.

use std::collections::{BTreeMap, VecDeque};
use std::io;

use serde_json::Value;
use thiserror::Error;
use uuid::Uuid;

use super::collector::{Ack, Collector};
use super::event::{Alarm, EventIds, EventKind, TelemetryEvent};

pub const DEFAULT_QUEUE_CAPACITY: usize = 10_000;

#[derive(Debug, Error)]
pub enum TelemetryError {
    /// The new event was queued; the oldest queued event was dropped.
    #[error("in-band queue for {site} full, dropped event {dropped}")]
    QueueOverflow { site: String, dropped: Uuid },
    #[error("collector i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InBandAck {
    Delivered(Ack),
    Queued,
}

#[derive(Debug, Default)]
struct SiteQueue {
    events: VecDeque<TelemetryEvent>,
    dropped: u64,
}

#[derive(Debug)]
pub struct InBandRouter {
    capacity: usize,
    queues: BTreeMap<String, SiteQueue>,
    ids: EventIds,
}

fn tag(mut event: TelemetryEvent, site: &str, core: &str) -> TelemetryEvent {
    event.payload.insert(
        "relay_path".into(),
        Value::Array(vec![Value::from(site), Value::from(core)]),
    );
    event
}

impl InBandRouter {
    pub fn new(capacity: usize, ids: EventIds) -> Self {
        InBandRouter {
            capacity,
            queues: BTreeMap::new(),
            ids,
        }
    }

    pub fn queued(&self, site: &str) -> usize {
        self.queues.get(site).map_or(0, |q| q.events.len())
    }

    /// Delivers `event` from customer `site` through `core`, or queues it when
    /// the access link is down.
    pub fn route_in_band(
        &mut self,
        event: TelemetryEvent,
        site: &str,
        core: &str,
        access_up: bool,
        collector: &mut Collector,
    ) -> Result<InBandAck, TelemetryError> {
        if access_up {
            self.flush(site, core, collector)?;
            return Ok(InBandAck::Delivered(collector.emit(tag(event, site, core))?));
        }
        let q = self.queues.entry(site.to_string()).or_default();
        q.events.push_back(event);
        if q.events.len() > self.capacity {
            let dropped = q.events.pop_front().expect("over capacity");
            q.dropped += 1;
            return Err(TelemetryError::QueueOverflow {
                site: site.to_string(),
                dropped: dropped.event_id,
            });
        }
        Ok(InBandAck::Queued)
    }

    /// Drains the site's queue once its access link is back. A single
    /// QUEUE_OVERFLOW warning precedes the backlog if anything was dropped.
    pub fn flush(&mut self, site: &str, core: &str, collector: &mut Collector) -> Result<usize, TelemetryError> {
        let Some(q) = self.queues.get_mut(site) else {
            return Ok(0);
        };
        let mut sent = 0;
        if q.dropped > 0 {
            let at = q.events.front().map_or(0.0, |e| e.at);
            let warn = self.ids.stamp(
                site,
                at,
                Alarm::new(EventKind::QueueOverflow).with("dropped", q.dropped),
            );
            collector.emit(tag(warn, site, core))?;
            q.dropped = 0;
            sent += 1;
        }
        while let Some(ev) = q.events.pop_front() {
            collector.emit(tag(ev, site, core))?;
            sent += 1;
        }
        Ok(sent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(ids: &mut EventIds, at: f64) -> TelemetryEvent {
        ids.stamp("customer-a", at, Alarm::new(EventKind::EpochAdvanced))
    }

    #[test]
    fn delivered_with_relay_tag() {
        let mut ids = EventIds::from_seed([1; 32]);
        let mut r = InBandRouter::new(10, EventIds::from_seed([2; 32]));
        let mut c = Collector::in_memory();
        let ack = r
            .route_in_band(ev(&mut ids, 1.0), "customer-a", "core-a", true, &mut c)
            .unwrap();
        assert_eq!(ack, InBandAck::Delivered(Ack::Appended));
        assert_eq!(
            c.events()[0].payload["relay_path"],
            serde_json::json!(["customer-a", "core-a"])
        );
    }

    #[test]
    fn outage_queues_then_flushes() {
        let mut ids = EventIds::from_seed([1; 32]);
        let mut r = InBandRouter::new(10, EventIds::from_seed([2; 32]));
        let mut c = Collector::in_memory();
        let ack = r
            .route_in_band(ev(&mut ids, 1.0), "customer-a", "core-a", false, &mut c)
            .unwrap();
        assert_eq!(ack, InBandAck::Queued);
        assert!(c.events().is_empty());
        assert_eq!(r.flush("customer-a", "core-a", &mut c).unwrap(), 1);
        assert_eq!(c.events().len(), 1);
    }

    #[test]
    fn overflow_drops_oldest_and_warns() {
        let mut ids = EventIds::from_seed([1; 32]);
        let mut r = InBandRouter::new(DEFAULT_QUEUE_CAPACITY, EventIds::from_seed([2; 32]));
        let mut c = Collector::in_memory();
        let first = ev(&mut ids, 0.0);
        let first_id = first.event_id;
        r.route_in_band(first, "customer-a", "core-a", false, &mut c).unwrap();
        for i in 1..DEFAULT_QUEUE_CAPACITY {
            r.route_in_band(ev(&mut ids, i as f64), "customer-a", "core-a", false, &mut c)
                .unwrap();
        }
        let err = r
            .route_in_band(ev(&mut ids, 1e5), "customer-a", "core-a", false, &mut c)
            .unwrap_err();
        assert!(matches!(err, TelemetryError::QueueOverflow { dropped, .. } if dropped == first_id));
        assert_eq!(r.queued("customer-a"), DEFAULT_QUEUE_CAPACITY);
        r.flush("customer-a", "core-a", &mut c).unwrap();
        assert_eq!(c.events().len(), DEFAULT_QUEUE_CAPACITY + 1);
        assert_eq!(c.count(EventKind::QueueOverflow), 1);
        assert!(c.events().iter().all(|e| e.event_id != first_id));
    }
}
