//! Line-delimited JSON trap transport with buffered retry.

use std::collections::VecDeque;
use std::io::{self, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::net::TcpListener;
use tokio::sync::watch;

use super::collector::Collector;
use super::event::TelemetryEvent;

pub trait TrapTransport {
    fn send_line(&mut self, line: &str) -> io::Result<()>;
}

/// Reconnecting TCP client for a trap collector.
#[derive(Debug)]
pub struct TcpTrapTransport {
    addr: SocketAddr,
    stream: Option<TcpStream>,
}

impl TcpTrapTransport {
    pub fn new(addr: SocketAddr) -> Self {
        TcpTrapTransport { addr, stream: None }
    }
}

impl TrapTransport for TcpTrapTransport {
    fn send_line(&mut self, line: &str) -> io::Result<()> {
        if self.stream.is_none() {
            let s = TcpStream::connect_timeout(&self.addr, Duration::from_secs(2))?;
            s.set_nodelay(true)?;
            self.stream = Some(s);
        }
        let stream = self.stream.as_mut().expect("connected above");
        let res = stream
            .write_all(line.as_bytes())
            .and_then(|_| stream.write_all(b"\n"))
            .and_then(|_| stream.flush());
        if res.is_err() {
            self.stream = None;
        }
        res
    }
}

/// Emitter side of at-least-once delivery: events stay queued until the
/// transport accepts them. Errors never reach the caller of [`emit`](Self::emit).
#[derive(Debug)]
pub struct TrapSender<T> {
    transport: T,
    pending: VecDeque<TelemetryEvent>,
}

impl<T: TrapTransport> TrapSender<T> {
    pub fn new(transport: T) -> Self {
        TrapSender {
            transport,
            pending: VecDeque::new(),
        }
    }

    pub fn emit(&mut self, event: TelemetryEvent) {
        self.pending.push_back(event);
        self.flush();
    }

    /// Sends as much of the backlog as the transport takes. Returns the
    /// number of events still pending.
    pub fn flush(&mut self) -> usize {
        while let Some(ev) = self.pending.front() {
            if self.transport.send_line(&ev.to_line()).is_err() {
                break;
            }
            self.pending.pop_front();
        }
        self.pending.len()
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.transport
    }
}

/// Accepts trap connections and appends every parsed line to `collector`
/// until `shutdown` flips to `true`.
pub async fn serve_traps(
    listener: TcpListener,
    collector: Arc<Mutex<Collector>>,
    mut shutdown: watch::Receiver<bool>,
) -> io::Result<()> {
    loop {
        tokio::select! {
            accepted = listener.accept() => {
                let (sock, _) = accepted?;
                let collector = Arc::clone(&collector);
                let mut stop = shutdown.clone();
                tokio::spawn(async move {
                    let mut lines = BufReader::new(sock).lines();
                    loop {
                        tokio::select! {
                            line = lines.next_line() => match line {
                                Ok(Some(line)) => {
                                    if let Ok(ev) = TelemetryEvent::from_line(&line) {
                                        let _ = collector.lock().expect("collector poisoned").emit(ev);
                                    }
                                }
                                _ => break,
                            },
                            _ = stop.changed() => break,
                        }
                    }
                });
            }
            _ = shutdown.changed() => {
                if *shutdown.borrow() {
                    break;
                }
            }
        }
    }
    collector.lock().expect("collector poisoned").flush()
}
