//! One-time-pad key envelopes and their inter-KMS wire form.
//!
//! ```text
//! "QKE1" | global_key_id[16] | hop_link_len u16 | hop_link utf8
//!        | ref_count u16 | { key_id[16] start u32 len u32 } * ref_count
//!        | ciphertext_len u32 | ciphertext
//! ```
//! All integers big-endian.

use std::io::{self, Read, Write};

use thiserror::Error;
use uuid::Uuid;

use super::KmsError;
use crate::link_sim::{LinkError, PadRef, PadSlice, QkdLink, BufferError};
use crate::topology::LinkId;

pub const ENVELOPE_MAGIC: &[u8; 4] = b"QKE1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyEnvelope {
    pub global_key_id: Uuid,
    pub hop_link: LinkId,
    pub ciphertext: Vec<u8>,
    pub pad_refs: Vec<PadRef>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic")]
    BadMagic,
    #[error("message truncated")]
    Truncated,
    #[error("hop link id is not utf-8")]
    BadLinkId,
    #[error("{0} too large for wire field")]
    TooLarge(&'static str),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

impl KeyEnvelope {
    pub fn pad_len(&self) -> u64 {
        self.pad_refs.iter().map(|r| r.len as u64).sum()
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let link = self.hop_link.as_bytes();
        let link_len = u16::try_from(link.len()).map_err(|_| WireError::TooLarge("hop_link"))?;
        let refs = u16::try_from(self.pad_refs.len()).map_err(|_| WireError::TooLarge("pad_refs"))?;
        let ct_len = u32::try_from(self.ciphertext.len()).map_err(|_| WireError::TooLarge("ciphertext"))?;
        let mut out = Vec::with_capacity(4 + 16 + 2 + link.len() + 2 + 24 * self.pad_refs.len() + 4 + self.ciphertext.len());
        out.extend_from_slice(ENVELOPE_MAGIC);
        out.extend_from_slice(self.global_key_id.as_bytes());
        out.extend_from_slice(&link_len.to_be_bytes());
        out.extend_from_slice(link);
        out.extend_from_slice(&refs.to_be_bytes());
        for r in &self.pad_refs {
            out.extend_from_slice(r.key_id.as_bytes());
            out.extend_from_slice(&r.start.to_be_bytes());
            out.extend_from_slice(&r.len.to_be_bytes());
        }
        out.extend_from_slice(&ct_len.to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        let mut r = Cursor { buf, pos: 0 };
        let env = read_fields(&mut r)?;
        match buf.len() - r.pos {
            0 => Ok(env),
            n => Err(WireError::Trailing(n)),
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(WireError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn uuid(&mut self) -> Result<Uuid, WireError> {
        Ok(Uuid::from_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }
}

fn read_fields(r: &mut Cursor<'_>) -> Result<KeyEnvelope, WireError> {
    if r.take(4)? != ENVELOPE_MAGIC {
        return Err(WireError::BadMagic);
    }
    let global_key_id = r.uuid()?;
    let link_len = r.u16()? as usize;
    let hop_link = std::str::from_utf8(r.take(link_len)?)
        .map_err(|_| WireError::BadLinkId)?
        .to_string();
    let n = r.u16()?;
    let mut pad_refs = Vec::with_capacity(n as usize);
    for _ in 0..n {
        pad_refs.push(PadRef {
            key_id: r.uuid()?,
            start: r.u32()?,
            len: r.u32()?,
        });
    }
    let ct_len = r.u32()? as usize;
    let ciphertext = r.take(ct_len)?.to_vec();
    Ok(KeyEnvelope {
        global_key_id,
        hop_link,
        ciphertext,
        pad_refs,
    })
}

/// Writes one envelope to an ordered byte stream. The message is
/// self-delimiting, so no extra framing is added.
pub fn write_envelope<W: Write>(w: &mut W, env: &KeyEnvelope) -> io::Result<()> {
    let bytes = env
        .encode()
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    w.write_all(&bytes)?;
    w.flush()
}

/// Reads exactly one envelope from an ordered byte stream.
pub fn read_envelope<R: Read>(r: &mut R) -> io::Result<KeyEnvelope> {
    fn exact<R: Read>(r: &mut R, buf: &mut Vec<u8>, n: usize) -> io::Result<()> {
        let start = buf.len();
        buf.resize(start + n, 0);
        r.read_exact(&mut buf[start..])
    }
    let mut buf = Vec::new();
    exact(r, &mut buf, 4 + 16 + 2)?;
    let link_len = u16::from_be_bytes([buf[20], buf[21]]) as usize;
    exact(r, &mut buf, link_len + 2)?;
    let refs = u16::from_be_bytes([buf[buf.len() - 2], buf[buf.len() - 1]]) as usize;
    exact(r, &mut buf, refs * 24 + 4)?;
    let n = buf.len();
    let ct_len = u32::from_be_bytes([buf[n - 4], buf[n - 3], buf[n - 2], buf[n - 1]]) as usize;
    exact(r, &mut buf, ct_len)?;
    KeyEnvelope::decode(&buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

pub fn xor_into(data: &mut [u8], pad: &[u8]) {
    debug_assert_eq!(data.len(), pad.len());
    for (d, p) in data.iter_mut().zip(pad) {
        *d ^= p;
    }
}

/// Encrypts `key_bytes` under fresh one-time pad taken at endpoint `at` of
/// `link`. Nothing is consumed on failure.
pub fn otp_encapsulate(
    global_key_id: Uuid,
    key_bytes: &[u8],
    link: &mut QkdLink,
    at: &str,
) -> Result<KeyEnvelope, KmsError> {
    let slices = link.consume_link_key(at, key_bytes.len()).map_err(|e| match e {
        LinkError::Buffer(BufferError::InsufficientKeyMaterial { .. }) => KmsError::InsufficientKeyMaterial {
            hop: 0,
            link: link.link_id().to_string(),
        },
        other => KmsError::Link(other),
    })?;
    let pad: Vec<u8> = slices.iter().flat_map(|s| s.bytes.iter().copied()).collect();
    let mut ciphertext = key_bytes.to_vec();
    xor_into(&mut ciphertext, &pad);
    Ok(KeyEnvelope {
        global_key_id,
        hop_link: link.link_id().to_string(),
        ciphertext,
        pad_refs: slices.iter().map(PadSlice::pad_ref).collect(),
    })
}

/// Recovers the key at endpoint `at`, burning the referenced pad there.
pub fn otp_decapsulate(envelope: &KeyEnvelope, link: &mut QkdLink, at: &str) -> Result<Vec<u8>, KmsError> {
    let first = envelope.pad_refs.first().cloned();
    let unavailable = || KmsError::PadUnavailable {
        link: envelope.hop_link.clone(),
        pad: first.clone(),
    };
    if envelope.hop_link != link.link_id() || envelope.pad_len() != envelope.ciphertext.len() as u64 {
        return Err(unavailable());
    }
    let pad = link.take_pad(at, &envelope.pad_refs).map_err(|e| match e {
        LinkError::Buffer(BufferError::PadUnavailable(r)) => KmsError::PadUnavailable {
            link: envelope.hop_link.clone(),
            pad: Some(r),
        },
        other => KmsError::Link(other),
    })?;
    let mut plain = envelope.ciphertext.clone();
    xor_into(&mut plain, &pad);
    Ok(plain)
}
