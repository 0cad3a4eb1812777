//! Encryptor endpoints: per-epoch AES-256 session keys derived from a KMS
//! key and a fresh Diffie-Hellman exchange, carried over framed byte
//! streams.
//!
//! Each refresh the master fetches a key with enc_keys and sends its id and
//! DH public value in a key-id frame. The slave redeems the id with
//! dec_keys, answers with its own public value and installs the new epoch;
//! the master installs it when the answer arrives. The DH exchange is
//! unauthenticated; the KMS key carries the security of the session key.

mod dh;
mod frame;
mod kdf;

use std::collections::BTreeMap;
use std::sync::Arc;

use aes_gcm::Aes256Gcm;
use hkdf::Hkdf;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use uuid::Uuid;
use zeroize::Zeroizing;

pub use dh::{DhError, DhGroup, DhParams};
pub use frame::{
    cipher, nonce, open, read_frame, seal, write_frame, Frame, FrameError, FrameType, TransitForwarder, FRAME_MAGIC,
    HEADER_LEN, MAX_BODY_LEN, TAG_LEN,
};
pub use kdf::{derive_session_key, KdfError, MIN_KMS_KEY_LEN, SESSION_KEY_INFO};

use crate::api::{ApiError, KeySource};
use crate::telemetry::{Alarm, EventKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Master,
    Slave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    MasterToSlave,
    SlaveToMaster,
}

impl Direction {
    fn label(self) -> &'static [u8] {
        match self {
            Direction::MasterToSlave => b"qsmn aead m2s",
            Direction::SlaveToMaster => b"qsmn aead s2m",
        }
    }
}

/// Key material of one epoch. Each direction encrypts under its own subkey
/// so the shared nonce space never collides.
pub struct SessionKey {
    pub epoch: u32,
    key_bytes: Zeroizing<[u8; 32]>,
    /// Global key id and SHA-256 of the DH transcript.
    pub derived_from: (Uuid, [u8; 32]),
    m2s: Aes256Gcm,
    s2m: Aes256Gcm,
}

impl std::fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionKey")
            .field("epoch", &self.epoch)
            .field("derived_from", &self.derived_from.0)
            .finish_non_exhaustive()
    }
}

impl SessionKey {
    pub fn new(epoch: u32, key_bytes: Zeroizing<[u8; 32]>, global_key_id: Uuid, transcript: &[u8]) -> Self {
        let hk = Hkdf::<Sha256>::from_prk(key_bytes.as_ref()).expect("32-byte PRK");
        let sub = |d: Direction| {
            let mut k = Zeroizing::new([0u8; 32]);
            hk.expand(d.label(), k.as_mut()).expect("32-byte output");
            cipher(&k)
        };
        SessionKey {
            epoch,
            derived_from: (global_key_id, Sha256::digest(transcript).into()),
            m2s: sub(Direction::MasterToSlave),
            s2m: sub(Direction::SlaveToMaster),
            key_bytes,
        }
    }

    pub fn key_bytes(&self) -> &[u8; 32] {
        &self.key_bytes
    }

    pub fn cipher(&self, direction: Direction) -> &Aes256Gcm {
        match direction {
            Direction::MasterToSlave => &self.m2s,
            Direction::SlaveToMaster => &self.s2m,
        }
    }

    pub fn encrypt_frame(&self, direction: Direction, sequence: u64, payload: &[u8]) -> Frame {
        seal(self.cipher(direction), self.epoch, sequence, payload)
    }

    pub fn decrypt_frame(&self, direction: Direction, frame: &Frame) -> Result<Vec<u8>, FrameError> {
        if frame.epoch != self.epoch {
            return Err(FrameError::AuthFailure);
        }
        open(self.cipher(direction), frame)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncryptorConfig {
    pub refresh_period_s: f64,
    pub key_size_bits: u32,
    /// Refuse to encrypt while key refresh is starved instead of carrying on
    /// with the stale epoch.
    pub fail_closed: bool,
}

impl Default for EncryptorConfig {
    fn default() -> Self {
        EncryptorConfig {
            refresh_period_s: 60.0,
            key_size_bits: 512,
            fail_closed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncryptorError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("key delivery: {0}")]
    Api(#[from] ApiError),
    #[error(transparent)]
    Dh(#[from] DhError),
    #[error(transparent)]
    Kdf(#[from] KdfError),
    #[error("no session key installed")]
    NoSessionKey,
    #[error("traffic halted while key refresh is starved")]
    Halted,
    #[error("replayed or reordered frame: epoch {epoch} sequence {sequence}")]
    Replay { epoch: u32, sequence: u64 },
    #[error("unexpected frame: {0}")]
    UnexpectedFrame(String),
}

#[derive(Debug, PartialEq, Eq)]
pub enum Inbound {
    Data(Vec<u8>),
    /// A control frame was consumed; `reply` must be sent to the peer.
    Control { reply: Option<Vec<u8>> },
}

struct PendingRefresh {
    epoch: u32,
    key_id: Uuid,
    kms_key: Zeroizing<Vec<u8>>,
    dh: DhParams,
    started_at: f64,
}

/// One encryptor endpoint bound to an SAE.
pub struct Encryptor<S> {
    pub sae_id: String,
    pub peer_sae_id: String,
    role: Role,
    source: S,
    config: EncryptorConfig,
    group: Arc<DhGroup>,
    rng: ChaCha20Rng,
    current: Option<SessionKey>,
    previous: Option<SessionKey>,
    pending: Option<PendingRefresh>,
    tx_sequence: u64,
    rx_next: BTreeMap<u32, u64>,
    last_refresh: Option<f64>,
    starved: bool,
    alarms: Vec<Alarm>,
    epoch_log: Vec<(u32, f64)>,
}

impl<S: KeySource> Encryptor<S> {
    pub fn new(
        role: Role,
        sae_id: impl Into<String>,
        peer_sae_id: impl Into<String>,
        source: S,
        config: EncryptorConfig,
        group: Arc<DhGroup>,
        seed: [u8; 32],
    ) -> Self {
        Encryptor {
            sae_id: sae_id.into(),
            peer_sae_id: peer_sae_id.into(),
            role,
            source,
            config,
            group,
            rng: ChaCha20Rng::from_seed(seed),
            current: None,
            previous: None,
            pending: None,
            tx_sequence: 0,
            rx_next: BTreeMap::new(),
            last_refresh: None,
            starved: false,
            alarms: Vec::new(),
            epoch_log: Vec::new(),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn session_key(&self) -> Option<&SessionKey> {
        self.current.as_ref()
    }

    pub fn current_epoch(&self) -> u32 {
        self.current.as_ref().map_or(0, |k| k.epoch)
    }

    /// Epochs installed so far with their install times.
    pub fn epoch_log(&self) -> &[(u32, f64)] {
        &self.epoch_log
    }

    pub fn is_starved(&self) -> bool {
        self.starved
    }

    pub fn drain_alarms(&mut self) -> Vec<Alarm> {
        std::mem::take(&mut self.alarms)
    }

    fn tx_direction(&self) -> Direction {
        match self.role {
            Role::Master => Direction::MasterToSlave,
            Role::Slave => Direction::SlaveToMaster,
        }
    }

    /// Whether the master should start a refresh at `now`. A refresh whose
    /// answer has not arrived within one period is abandoned.
    pub fn refresh_due(&self, now: f64) -> bool {
        if self.role != Role::Master {
            return false;
        }
        if let Some(p) = &self.pending {
            return now - p.started_at >= self.config.refresh_period_s;
        }
        match self.last_refresh {
            None => true,
            Some(_) if self.starved => true,
            Some(t) => now - t >= self.config.refresh_period_s - 1e-9,
        }
    }

    fn starve(&mut self, now: f64, why: &ApiError) {
        if !self.starved {
            self.alarms.push(
                Alarm::new(EventKind::KeyStarvation)
                    .with("sae", self.sae_id.clone())
                    .with("peer_sae", self.peer_sae_id.clone())
                    .with("epoch", self.current_epoch() as u64)
                    .with("since", now)
                    .with("reason", why.to_string()),
            );
        }
        self.starved = true;
    }

    /// Master side: fetches a fresh KMS key and returns the key-id frame to
    /// send, or `None` if the KMS could not supply a key.
    pub fn begin_refresh(&mut self, now: f64) -> Result<Option<Vec<u8>>, EncryptorError> {
        if self.role != Role::Master {
            return Err(EncryptorError::UnexpectedFrame("only the master starts a refresh".into()));
        }
        let container = match self.source.enc_keys(&self.peer_sae_id, 1, self.config.key_size_bits) {
            Ok(c) => c,
            Err(e @ ApiError::InsufficientKeys(_)) => {
                self.pending = None;
                self.starve(now, &e);
                return Ok(None);
            }
            Err(e) => return Err(e.into()),
        };
        let (key_id, kms_key) = container
            .decode()?
            .into_iter()
            .next()
            .ok_or_else(|| EncryptorError::UnexpectedFrame("empty key container".into()))?;
        let dh = DhParams::generate(self.group.clone(), &mut self.rng);
        let epoch = self.current_epoch() + 1;
        let mut body = key_id.as_bytes().to_vec();
        body.extend_from_slice(&dh.public_bytes());
        self.pending = Some(PendingRefresh {
            epoch,
            key_id,
            kms_key: Zeroizing::new(kms_key),
            dh,
            started_at: now,
        });
        Ok(Some(Frame::key_id(epoch, body).encode()))
    }

    fn split_offer(&self, body: &[u8]) -> Result<(Uuid, num_bigint::BigUint), EncryptorError> {
        let n = self.group.element_len();
        if body.len() != 16 + n {
            return Err(EncryptorError::UnexpectedFrame(format!("key-id body of {} bytes", body.len())));
        }
        let id = Uuid::from_bytes(body[..16].try_into().expect("16 bytes"));
        Ok((id, self.group.decode(&body[16..])))
    }

    fn install(&mut self, now: f64, key: SessionKey) {
        let epoch = key.epoch;
        let id = key.derived_from.0;
        self.previous = self.current.replace(key);
        self.tx_sequence = 0;
        self.rx_next.retain(|e, _| *e + 1 >= epoch);
        self.last_refresh = Some(now);
        self.starved = false;
        self.epoch_log.push((epoch, now));
        self.alarms.push(
            Alarm::new(EventKind::EpochAdvanced)
                .with("sae", self.sae_id.clone())
                .with("epoch", epoch as u64)
                .with("global_key_id", id.to_string()),
        );
    }

    /// Handles one frame from the peer.
    pub fn receive(&mut self, now: f64, bytes: &[u8]) -> Result<Inbound, EncryptorError> {
        let (frame, used) = Frame::decode(bytes)?;
        if used != bytes.len() {
            return Err(EncryptorError::UnexpectedFrame("trailing bytes after frame".into()));
        }
        match (frame.frame_type, self.role) {
            (FrameType::Data, _) => self.receive_data(&frame).map(Inbound::Data),
            (FrameType::KeyId, Role::Slave) => self.accept_offer(now, &frame),
            (FrameType::KeyId, Role::Master) => self.accept_answer(now, &frame),
        }
    }

    fn accept_offer(&mut self, now: f64, frame: &Frame) -> Result<Inbound, EncryptorError> {
        frame.check_integrity()?;
        if frame.epoch <= self.current_epoch() {
            return Err(EncryptorError::UnexpectedFrame(format!("stale epoch {}", frame.epoch)));
        }
        let (key_id, master_public) = self.split_offer(&frame.body)?;
        let container = self.source.dec_keys(&self.peer_sae_id, &[key_id.to_string()])?;
        let (got_id, kms_key) = container
            .decode()?
            .into_iter()
            .next()
            .ok_or_else(|| EncryptorError::UnexpectedFrame("empty key container".into()))?;
        if got_id != key_id {
            return Err(EncryptorError::UnexpectedFrame("KMS returned a different key".into()));
        }
        let kms_key = Zeroizing::new(kms_key);
        let dh = DhParams::generate(self.group.clone(), &mut self.rng);
        let secret = dh.exchange(&master_public)?;
        let mut transcript = frame.body.clone();
        transcript.extend_from_slice(&dh.public_bytes());
        let key = derive_session_key(&kms_key, &secret, &transcript)?;
        self.install(now, SessionKey::new(frame.epoch, key, key_id, &transcript));
        let mut body = key_id.as_bytes().to_vec();
        body.extend_from_slice(&dh.public_bytes());
        Ok(Inbound::Control {
            reply: Some(Frame::key_id(frame.epoch, body).encode()),
        })
    }

    fn accept_answer(&mut self, now: f64, frame: &Frame) -> Result<Inbound, EncryptorError> {
        frame.check_integrity()?;
        let (key_id, slave_public) = self.split_offer(&frame.body)?;
        let pending = match self.pending.take() {
            Some(p) if p.epoch == frame.epoch && p.key_id == key_id => p,
            other => {
                self.pending = other;
                return Err(EncryptorError::UnexpectedFrame(format!("no refresh pending for epoch {}", frame.epoch)));
            }
        };
        let secret = pending.dh.exchange(&slave_public)?;
        let mut transcript = key_id.as_bytes().to_vec();
        transcript.extend_from_slice(&pending.dh.public_bytes());
        transcript.extend_from_slice(&frame.body[16..]);
        let key = derive_session_key(&pending.kms_key, &secret, &transcript)?;
        self.install(now, SessionKey::new(pending.epoch, key, key_id, &transcript));
        Ok(Inbound::Control { reply: None })
    }

    fn receive_data(&mut self, frame: &Frame) -> Result<Vec<u8>, EncryptorError> {
        let rx = match self.tx_direction() {
            Direction::MasterToSlave => Direction::SlaveToMaster,
            Direction::SlaveToMaster => Direction::MasterToSlave,
        };
        let key = [self.current.as_ref(), self.previous.as_ref()]
            .into_iter()
            .flatten()
            .find(|k| k.epoch == frame.epoch)
            .ok_or(FrameError::AuthFailure)?;
        let next = self.rx_next.get(&frame.epoch).copied().unwrap_or(0);
        if frame.sequence < next {
            return Err(EncryptorError::Replay {
                epoch: frame.epoch,
                sequence: frame.sequence,
            });
        }
        let payload = key.decrypt_frame(rx, frame)?;
        self.rx_next.insert(frame.epoch, frame.sequence + 1);
        Ok(payload)
    }

    /// Encrypts one payload under the current epoch.
    pub fn encrypt(&mut self, payload: &[u8]) -> Result<Vec<u8>, EncryptorError> {
        if self.config.fail_closed && self.starved {
            return Err(EncryptorError::Halted);
        }
        let key = self.current.as_ref().ok_or(EncryptorError::NoSessionKey)?;
        let frame = key.encrypt_frame(self.tx_direction(), self.tx_sequence, payload);
        self.tx_sequence += 1;
        Ok(frame.encode())
    }
}

#[cfg(test)]
mod tests;
