//! NOC-side sink: de-duplicates by event id, keeps the log ordered by
//! `(at, event_id)` and mirrors every accepted event to an append-only
//! JSON-lines file.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use uuid::Uuid;

use super::event::{EventKind, TelemetryEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ack {
    Appended,
    Duplicate,
}

#[derive(Debug, Default)]
pub struct Collector {
    log: Vec<TelemetryEvent>,
    seen: HashSet<Uuid>,
    sink: Option<BufWriter<File>>,
}

impl Collector {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Appends to (or creates) a JSON-lines log at `path`. Event ids already
    /// present in the file are remembered for de-duplication.
    pub fn with_log_file(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref();
        let mut collector = Collector::default();
        if path.exists() {
            for ev in read_log(path)? {
                collector.insert_sorted(ev);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        collector.sink = Some(BufWriter::new(file));
        Ok(collector)
    }

    pub fn emit(&mut self, event: TelemetryEvent) -> io::Result<Ack> {
        if self.seen.contains(&event.event_id) {
            return Ok(Ack::Duplicate);
        }
        if let Some(sink) = self.sink.as_mut() {
            writeln!(sink, "{}", event.to_line())?;
            sink.flush()?;
        }
        self.insert_sorted(event);
        Ok(Ack::Appended)
    }

    fn insert_sorted(&mut self, event: TelemetryEvent) {
        self.seen.insert(event.event_id);
        let pos = self
            .log
            .partition_point(|e| e.at.total_cmp(&event.at).then(e.event_id.cmp(&event.event_id)).is_lt());
        self.log.insert(pos, event);
    }

    /// Accepted events ordered by `(at, event_id)`.
    pub fn events(&self) -> &[TelemetryEvent] {
        &self.log
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.log.iter().filter(|e| e.kind == kind).count()
    }

    pub fn flush(&mut self) -> io::Result<()> {
        match self.sink.as_mut() {
            Some(s) => s.flush(),
            None => Ok(()),
        }
    }
}

/// Reads a JSON-lines log, skipping blank lines, ordered by `(at, event_id)`
/// with duplicate ids dropped.
pub fn read_log(path: impl AsRef<Path>) -> io::Result<Vec<TelemetryEvent>> {
    let reader = BufReader::new(File::open(path)?);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = TelemetryEvent::from_line(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        if seen.insert(ev.event_id) {
            out.push(ev);
        }
    }
    out.sort_by(|a, b| a.at.total_cmp(&b.at).then(a.event_id.cmp(&b.event_id)));
    Ok(out)
}

/// Final state reconstructed by replaying a log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlarmState {
    /// `true` when the link's last transition was LINK_DOWN.
    pub links_down: BTreeMap<String, bool>,
    pub counts: BTreeMap<EventKind, usize>,
}

impl AlarmState {
    pub fn replay(events: &[TelemetryEvent]) -> Self {
        let mut state = AlarmState::default();
        for e in events {
            *state.counts.entry(e.kind).or_default() += 1;
            match e.kind {
                EventKind::LinkDown => {
                    state.links_down.insert(e.source.clone(), true);
                }
                EventKind::LinkUp => {
                    state.links_down.insert(e.source.clone(), false);
                }
                _ => {}
            }
        }
        state
    }
}

/// Checks that LINK_DOWN and LINK_UP strictly alternate per source,
/// starting with LINK_DOWN.
pub fn check_link_alternation(events: &[TelemetryEvent]) -> Result<(), String> {
    let mut last: BTreeMap<&str, EventKind> = BTreeMap::new();
    for e in events {
        if !matches!(e.kind, EventKind::LinkDown | EventKind::LinkUp) {
            continue;
        }
        let prev = last.get(e.source.as_str()).copied().unwrap_or(EventKind::LinkUp);
        if prev == e.kind {
            return Err(format!("{} repeated {} at t={}", e.source, e.kind, e.at));
        }
        last.insert(&e.source, e.kind);
    }
    Ok(())
}
