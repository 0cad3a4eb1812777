use hkdf::Hkdf;
use sha2::{Digest, Sha256};
use thiserror::Error;
use zeroize::Zeroizing;

pub const SESSION_KEY_INFO: &[u8] = b"qsmn session key v1";
pub const MIN_KMS_KEY_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KdfError {
    #[error("KMS key must be at least {MIN_KMS_KEY_LEN} bytes and the DH secret non-empty")]
    InputTooShort,
}

/// HKDF-SHA256 over `kms_key ‖ dh_secret`, salted with the hash of the
/// exchange transcript.
pub fn derive_session_key(kms_key: &[u8], dh_secret: &[u8], context: &[u8]) -> Result<Zeroizing<[u8; 32]>, KdfError> {
    if kms_key.len() < MIN_KMS_KEY_LEN || dh_secret.is_empty() {
        return Err(KdfError::InputTooShort);
    }
    let salt = Sha256::digest(context);
    let mut ikm = Zeroizing::new(Vec::with_capacity(kms_key.len() + dh_secret.len()));
    ikm.extend_from_slice(kms_key);
    ikm.extend_from_slice(dh_secret);
    let mut out = Zeroizing::new([0u8; 32]);
    Hkdf::<Sha256>::new(Some(&salt), &ikm)
        .expand(SESSION_KEY_INFO, out.as_mut())
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    Ok(out)
}
