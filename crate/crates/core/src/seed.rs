use sha2::{Digest, Sha256};

/// Derives an independent 32-byte seed for a named stream from the run seed.
pub fn derive_seed(root: u64, labels: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"qsmn-seed");
    h.update(root.to_be_bytes());
    for l in labels {
        h.update((l.len() as u32).to_be_bytes());
        h.update(l.as_bytes());
    }
    h.finalize().into()
}
