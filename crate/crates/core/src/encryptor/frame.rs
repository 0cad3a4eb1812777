//! Encryptor frames.
//!
//! ```text
//! "QSF1" | type u8 | epoch u32 | sequence u64 | length u32 | body | tag[16]
//! ```
//! Data frames carry AES-256-GCM ciphertext with the 21-byte header as
//! associated data and nonce `epoch ‖ sequence`. Key-id frames carry a
//! truncated SHA-256 over header and body as an integrity check only.

use std::io::{self, Read, Write};

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FRAME_MAGIC: &[u8; 4] = b"QSF1";
pub const HEADER_LEN: usize = 4 + 1 + 4 + 8 + 4;
pub const TAG_LEN: usize = 16;
/// Upper bound on a frame body accepted from the wire.
pub const MAX_BODY_LEN: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameType {
    Data = 0,
    KeyId = 1,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("bad magic")]
    BadMagic,
    #[error("unknown frame type {0}")]
    UnknownType(u8),
    #[error("frame truncated")]
    Truncated,
    #[error("frame body of {0} bytes too large")]
    TooLarge(usize),
    #[error("authentication failed")]
    AuthFailure,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub frame_type: FrameType,
    pub epoch: u32,
    pub sequence: u64,
    pub body: Vec<u8>,
    pub auth_tag: [u8; TAG_LEN],
}

fn header(frame_type: FrameType, epoch: u32, sequence: u64, len: usize) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(FRAME_MAGIC);
    h[4] = frame_type as u8;
    h[5..9].copy_from_slice(&epoch.to_be_bytes());
    h[9..17].copy_from_slice(&sequence.to_be_bytes());
    h[17..21].copy_from_slice(&(len as u32).to_be_bytes());
    h
}

pub fn nonce(epoch: u32, sequence: u64) -> [u8; 12] {
    let mut n = [0u8; 12];
    n[..4].copy_from_slice(&epoch.to_be_bytes());
    n[4..].copy_from_slice(&sequence.to_be_bytes());
    n
}

impl Frame {
    pub fn header(&self) -> [u8; HEADER_LEN] {
        header(self.frame_type, self.epoch, self.sequence, self.body.len())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.body.len() + TAG_LEN);
        out.extend_from_slice(&self.header());
        out.extend_from_slice(&self.body);
        out.extend_from_slice(&self.auth_tag);
        out
    }

    /// Parses one frame from the front of `buf`, returning it and the number
    /// of bytes used.
    pub fn decode(buf: &[u8]) -> Result<(Frame, usize), FrameError> {
        if buf.len() < HEADER_LEN {
            return Err(FrameError::Truncated);
        }
        if &buf[..4] != FRAME_MAGIC {
            return Err(FrameError::BadMagic);
        }
        let frame_type = match buf[4] {
            0 => FrameType::Data,
            1 => FrameType::KeyId,
            t => return Err(FrameError::UnknownType(t)),
        };
        let epoch = u32::from_be_bytes(buf[5..9].try_into().expect("4 bytes"));
        let sequence = u64::from_be_bytes(buf[9..17].try_into().expect("8 bytes"));
        let len = u32::from_be_bytes(buf[17..21].try_into().expect("4 bytes")) as usize;
        if len > MAX_BODY_LEN {
            return Err(FrameError::TooLarge(len));
        }
        let total = HEADER_LEN + len + TAG_LEN;
        if buf.len() < total {
            return Err(FrameError::Truncated);
        }
        let frame = Frame {
            frame_type,
            epoch,
            sequence,
            body: buf[HEADER_LEN..HEADER_LEN + len].to_vec(),
            auth_tag: buf[HEADER_LEN + len..total].try_into().expect("16 bytes"),
        };
        Ok((frame, total))
    }

    /// Control frame whose tag only detects corruption.
    pub fn key_id(epoch: u32, body: Vec<u8>) -> Frame {
        let mut f = Frame {
            frame_type: FrameType::KeyId,
            epoch,
            sequence: 0,
            body,
            auth_tag: [0; TAG_LEN],
        };
        f.auth_tag = f.integrity_tag();
        f
    }

    fn integrity_tag(&self) -> [u8; TAG_LEN] {
        let mut h = Sha256::new();
        h.update(self.header());
        h.update(&self.body);
        h.finalize()[..TAG_LEN].try_into().expect("16 bytes")
    }

    pub fn check_integrity(&self) -> Result<(), FrameError> {
        if self.frame_type != FrameType::KeyId || self.integrity_tag() != self.auth_tag {
            return Err(FrameError::AuthFailure);
        }
        Ok(())
    }
}

/// Seals `payload` as a data frame under a 256-bit AEAD key.
pub fn seal(cipher: &Aes256Gcm, epoch: u32, sequence: u64, payload: &[u8]) -> Frame {
    let h = header(FrameType::Data, epoch, sequence, payload.len());
    let mut sealed = cipher
        .encrypt(Nonce::from_slice(&nonce(epoch, sequence)), Payload { msg: payload, aad: &h })
        .expect("AES-GCM encryption of in-memory data");
    let tag = sealed.split_off(payload.len());
    Frame {
        frame_type: FrameType::Data,
        epoch,
        sequence,
        body: sealed,
        auth_tag: tag.try_into().expect("16-byte tag"),
    }
}

/// Opens a data frame; any tampering or key mismatch yields `AuthFailure`.
pub fn open(cipher: &Aes256Gcm, frame: &Frame) -> Result<Vec<u8>, FrameError> {
    if frame.frame_type != FrameType::Data {
        return Err(FrameError::AuthFailure);
    }
    let mut sealed = Vec::with_capacity(frame.body.len() + TAG_LEN);
    sealed.extend_from_slice(&frame.body);
    sealed.extend_from_slice(&frame.auth_tag);
    cipher
        .decrypt(
            Nonce::from_slice(&nonce(frame.epoch, frame.sequence)),
            Payload {
                msg: &sealed,
                aad: &frame.header(),
            },
        )
        .map_err(|_| FrameError::AuthFailure)
}

pub fn cipher(key: &[u8; 32]) -> Aes256Gcm {
    Aes256Gcm::new(key.into())
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.encode())
}

pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Frame> {
    let mut h = [0u8; HEADER_LEN];
    r.read_exact(&mut h)?;
    let len = u32::from_be_bytes(h[17..21].try_into().expect("4 bytes")) as usize;
    if len > MAX_BODY_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, FrameError::TooLarge(len)));
    }
    let mut buf = h.to_vec();
    buf.resize(HEADER_LEN + len + TAG_LEN, 0);
    r.read_exact(&mut buf[HEADER_LEN..])?;
    Frame::decode(&buf)
        .map(|(f, _)| f)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// Core-site forwarding stage: re-frames opaque bytes hop to hop and never
/// holds key material.
#[derive(Debug, Default, Clone)]
pub struct TransitForwarder {
    pending: Vec<u8>,
    pub frames_forwarded: u64,
    pub bytes_forwarded: u64,
}

impl TransitForwarder {
    /// Accepts bytes from the upstream hop and returns every complete frame,
    /// re-encoded for the downstream hop.
    pub fn forward(&mut self, incoming: &[u8]) -> Result<Vec<u8>, FrameError> {
        self.pending.extend_from_slice(incoming);
        let mut out = Vec::new();
        let mut used = 0;
        loop {
            match Frame::decode(&self.pending[used..]) {
                Ok((frame, n)) => {
                    out.extend_from_slice(&frame.encode());
                    used += n;
                    self.frames_forwarded += 1;
                }
                Err(FrameError::Truncated) => break,
                Err(e) => return Err(e),
            }
        }
        self.pending.drain(..used);
        self.bytes_forwarded += out.len() as u64;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::RngCore;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn key(tag: u8) -> Aes256Gcm {
        cipher(&[tag; 32])
    }

    #[test]
    fn header_layout() {
        let f = Frame::key_id(0x01020304, vec![0xee]);
        let wire = f.encode();
        assert_eq!(&wire[..4], b"QSF1");
        assert_eq!(wire[4], 1);
        assert_eq!(&wire[5..9], &[1, 2, 3, 4]);
        assert_eq!(&wire[9..17], &[0; 8]);
        assert_eq!(&wire[17..21], &[0, 0, 0, 1]);
        assert_eq!(wire[21], 0xee);
        assert_eq!(wire.len(), HEADER_LEN + 1 + TAG_LEN);
        assert_eq!(nonce(1, 2), [0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 2]);
    }

    #[test]
    fn round_trip_1500_bytes() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut payload = vec![0u8; 1500];
        rng.fill_bytes(&mut payload);
        let c = key(1);
        let f = seal(&c, 3, 9, &payload);
        assert_ne!(f.body, payload);
        let (back, n) = Frame::decode(&f.encode()).unwrap();
        assert_eq!(n, HEADER_LEN + 1500 + TAG_LEN);
        assert_eq!(open(&c, &back).unwrap(), payload);
    }

    #[test]
    fn tampering_and_wrong_key_fail() {
        let c = key(1);
        let f = seal(&c, 3, 9, b"payload bytes");
        let mut flipped = f.clone();
        flipped.body[0] ^= 1;
        assert_eq!(open(&c, &flipped), Err(FrameError::AuthFailure));
        let mut moved = f.clone();
        moved.sequence += 1;
        assert_eq!(open(&c, &moved), Err(FrameError::AuthFailure));
        let mut tag = f.clone();
        tag.auth_tag[15] ^= 0x80;
        assert_eq!(open(&c, &tag), Err(FrameError::AuthFailure));
        assert_eq!(open(&key(2), &f), Err(FrameError::AuthFailure));
    }

    #[test]
    fn key_id_integrity() {
        let f = Frame::key_id(4, vec![1, 2, 3]);
        assert!(f.check_integrity().is_ok());
        let mut bad = f;
        bad.body[1] ^= 4;
        assert_eq!(bad.check_integrity(), Err(FrameError::AuthFailure));
    }

    #[test]
    fn decode_errors() {
        let wire = Frame::key_id(1, vec![0; 10]).encode();
        assert_eq!(Frame::decode(&wire[..wire.len() - 1]), Err(FrameError::Truncated));
        let mut bad = wire.clone();
        bad[0] = b'X';
        assert_eq!(Frame::decode(&bad), Err(FrameError::BadMagic));
        let mut bad = wire;
        bad[4] = 7;
        assert_eq!(Frame::decode(&bad), Err(FrameError::UnknownType(7)));
    }

    #[test]
    fn stream_io() {
        let frames: Vec<_> = (0..3).map(|i| seal(&key(3), 1, i, &[i as u8; 40])).collect();
        let mut wire = Vec::new();
        for f in &frames {
            write_frame(&mut wire, f).unwrap();
        }
        let mut r = wire.as_slice();
        for f in &frames {
            assert_eq!(&read_frame(&mut r).unwrap(), f);
        }
    }

    proptest! {
        #[test]
        fn forwarder_output_equals_input(
            sizes in prop::collection::vec(0usize..300, 1..10),
            cut in 1usize..64,
        ) {
            let c = key(5);
            let wire: Vec<u8> = sizes
                .iter()
                .enumerate()
                .flat_map(|(i, n)| seal(&c, 2, i as u64, &vec![i as u8; *n]).encode())
                .collect();
            let mut hop1 = TransitForwarder::default();
            let mut hop2 = TransitForwarder::default();
            let mut out = Vec::new();
            for chunk in wire.chunks(cut) {
                let mid = hop1.forward(chunk).unwrap();
                out.extend(hop2.forward(&mid).unwrap());
            }
            prop_assert_eq!(&out, &wire);
            prop_assert_eq!(hop2.frames_forwarded, sizes.len() as u64);
        }
    }
}
