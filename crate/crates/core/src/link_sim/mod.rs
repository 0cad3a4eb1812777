//! Simulated QKD links: key rate model, finite-size block gating and the
//! mirrored key buffers held at both ends of every link.

mod buffer;
mod rate;
mod state;

pub use buffer::{BufferError, ByteRanges, KeyBlock, KeyBuffer, Overlap, PadRef, PadSlice};
pub use rate::{
    binary_entropy, finite_key_deduction, finite_key_rate, qber, secret_key_rate, transmittance, QkdSystemParams,
    FINITE_KEY_SCALE, QBER_ABORT_THRESHOLD, SIFTING_FACTOR,
};
pub use state::{AvailabilityDip, AvailabilityProfile, LinkError, LinkState, LinkStats, LinkStatus, QkdLink};
