//! Emulator for a QKD-secured metro network.
//!
//! Simulated QKD links fill mirrored key buffers; a key management server
//! at every node relays end-to-end keys across trusted nodes under
//! one-time-pad encapsulation; applications fetch those keys over an
//! ETSI GS QKD 014 style REST interface; encryptor endpoints turn them into
//! AES-256 session keys. Alarms flow to a NOC collector.

pub mod api;
pub mod encryptor;
pub mod kms;
pub mod link_sim;
pub mod runner;
pub mod seed;
pub mod telemetry;
pub mod topology;
