use std::collections::VecDeque;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::topology::LinkId;

/// Sorted, merged set of disjoint half-open byte intervals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteRanges(Vec<Range<u32>>);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("byte range {0:?} overlaps an existing interval")]
pub struct Overlap(pub Range<u32>);

impl ByteRanges {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intervals(&self) -> &[Range<u32>] {
        &self.0
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|r| (r.end - r.start) as u64).sum()
    }

    pub fn intersects(&self, r: &Range<u32>) -> bool {
        r.start < r.end && self.0.iter().any(|x| x.start < r.end && r.start < x.end)
    }

    pub fn covers(&self, r: &Range<u32>) -> bool {
        r.start >= r.end || self.0.iter().any(|x| x.start <= r.start && r.end <= x.end)
    }

    /// Adds `r`; fails without modification if it overlaps anything present.
    pub fn insert(&mut self, r: Range<u32>) -> Result<(), Overlap> {
        if r.start >= r.end {
            return Ok(());
        }
        if self.intersects(&r) {
            return Err(Overlap(r));
        }
        let pos = self.0.partition_point(|x| x.start < r.start);
        self.0.insert(pos, r);
        // merge touching neighbours
        let mut merged: Vec<Range<u32>> = Vec::with_capacity(self.0.len());
        for x in self.0.drain(..) {
            match merged.last_mut() {
                Some(last) if last.end == x.start => last.end = x.end,
                _ => merged.push(x),
            }
        }
        self.0 = merged;
        Ok(())
    }

    /// Sub-ranges of `within` not covered by `self` or `other`, in order.
    pub fn gaps_with(&self, other: &ByteRanges, within: Range<u32>) -> Vec<Range<u32>> {
        let mut taken: Vec<Range<u32>> = self.0.iter().chain(other.0.iter()).cloned().collect();
        taken.sort_by_key(|r| r.start);
        let mut out = Vec::new();
        let mut cursor = within.start;
        for t in taken {
            if t.end <= cursor {
                continue;
            }
            if t.start >= within.end {
                break;
            }
            if t.start > cursor {
                out.push(cursor..t.start.min(within.end));
            }
            cursor = cursor.max(t.end);
        }
        if cursor < within.end {
            out.push(cursor..within.end);
        }
        out
    }
}

/// A batch of link key produced by one finite-size block.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyBlock {
    pub key_id: Uuid,
    pub bytes: Vec<u8>,
    pub origin_link: LinkId,
    pub created_at: f64,
    /// Bytes used as pad by this endpoint or read back from a peer envelope.
    pub consumed_ranges: ByteRanges,
    /// Bytes the peer endpoint has used as pad; redeemable once here.
    pub reserved_ranges: ByteRanges,
}

impl KeyBlock {
    fn free_ranges(&self) -> Vec<Range<u32>> {
        self.consumed_ranges
            .gaps_with(&self.reserved_ranges, 0..self.bytes.len() as u32)
    }

    fn free_bytes(&self) -> u64 {
        self.free_ranges().iter().map(|r| (r.end - r.start) as u64).sum()
    }

    fn fully_consumed(&self) -> bool {
        self.consumed_ranges.covers(&(0..self.bytes.len() as u32))
    }
}

/// Identifies pad bytes inside a key block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PadRef {
    pub key_id: Uuid,
    pub start: u32,
    pub len: u32,
}

impl PadRef {
    pub fn range(&self) -> Range<u32> {
        self.start..self.start.saturating_add(self.len)
    }
}

/// Pad bytes handed out by a consume call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PadSlice {
    pub key_id: Uuid,
    pub range: Range<u32>,
    pub bytes: Vec<u8>,
}

impl PadSlice {
    pub fn pad_ref(&self) -> PadRef {
        PadRef {
            key_id: self.key_id,
            start: self.range.start,
            len: self.range.end - self.range.start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BufferError {
    #[error("insufficient key material: requested {requested} bytes, {available} available")]
    InsufficientKeyMaterial { requested: usize, available: u64 },
    #[error("pad unavailable: {0:?}")]
    PadUnavailable(PadRef),
}

/// FIFO store of key blocks at one link endpoint.
#[derive(Debug, Clone, Default)]
pub struct KeyBuffer {
    blocks: VecDeque<KeyBlock>,
    retired_bytes: u64,
    retired_consumed: u64,
}

impl KeyBuffer {
    pub fn blocks(&self) -> impl Iterator<Item = &KeyBlock> {
        self.blocks.iter()
    }

    pub fn push(&mut self, block: KeyBlock) {
        self.blocks.push_back(block);
    }

    pub fn free_bytes(&self) -> u64 {
        self.blocks.iter().map(KeyBlock::free_bytes).sum()
    }

    /// Consumed bytes over the whole life of the buffer, retired blocks included.
    pub fn consumed_bytes(&self) -> u64 {
        self.retired_consumed + self.blocks.iter().map(|b| b.consumed_ranges.total()).sum::<u64>()
    }

    pub fn total_bytes_received(&self) -> u64 {
        self.retired_bytes + self.blocks.iter().map(|b| b.bytes.len() as u64).sum::<u64>()
    }

    /// Takes the oldest `n` free bytes, possibly spanning blocks. All or nothing.
    pub fn consume(&mut self, n: usize) -> Result<Vec<PadSlice>, BufferError> {
        let available = self.free_bytes();
        if (n as u64) > available {
            return Err(BufferError::InsufficientKeyMaterial {
                requested: n,
                available,
            });
        }
        let mut out = Vec::new();
        let mut need = n as u32;
        for block in self.blocks.iter_mut() {
            if need == 0 {
                break;
            }
            for r in block.free_ranges() {
                if need == 0 {
                    break;
                }
                let take = need.min(r.end - r.start);
                let range = r.start..r.start + take;
                block
                    .consumed_ranges
                    .insert(range.clone())
                    .expect("free range cannot overlap");
                out.push(PadSlice {
                    key_id: block.key_id,
                    bytes: block.bytes[range.start as usize..range.end as usize].to_vec(),
                    range,
                });
                need -= take;
            }
        }
        self.retire();
        Ok(out)
    }

    /// Marks bytes the peer took as pad so they are never handed out here.
    pub fn reserve(&mut self, refs: &[PadRef]) -> Result<(), BufferError> {
        for r in refs {
            let block = self.find(r)?;
            if block.consumed_ranges.intersects(&r.range()) || block.reserved_ranges.intersects(&r.range()) {
                return Err(BufferError::PadUnavailable(r.clone()));
            }
        }
        for r in refs {
            let block = self.find_mut(r).expect("checked above");
            block
                .reserved_ranges
                .insert(r.range())
                .expect("checked above");
        }
        Ok(())
    }

    /// Reads back reserved pad bytes exactly once. All or nothing.
    pub fn take_reserved(&mut self, refs: &[PadRef]) -> Result<Vec<u8>, BufferError> {
        for (i, r) in refs.iter().enumerate() {
            let block = self.find(r)?;
            let ok = r.len > 0
                && block.reserved_ranges.covers(&r.range())
                && !block.consumed_ranges.intersects(&r.range())
                && !refs[..i]
                    .iter()
                    .any(|p| p.key_id == r.key_id && p.start < r.range().end && r.start < p.range().end);
            if !ok {
                return Err(BufferError::PadUnavailable(r.clone()));
            }
        }
        let mut pad = Vec::new();
        for r in refs {
            let block = self.find_mut(r).expect("checked above");
            block
                .consumed_ranges
                .insert(r.range())
                .expect("checked above");
            pad.extend_from_slice(&block.bytes[r.start as usize..r.range().end as usize]);
        }
        self.retire();
        Ok(pad)
    }

    fn find(&self, r: &PadRef) -> Result<&KeyBlock, BufferError> {
        self.blocks
            .iter()
            .find(|b| b.key_id == r.key_id && r.range().end as usize <= b.bytes.len() && r.start < r.range().end)
            .ok_or_else(|| BufferError::PadUnavailable(r.clone()))
    }

    fn find_mut(&mut self, r: &PadRef) -> Option<&mut KeyBlock> {
        self.blocks.iter_mut().find(|b| b.key_id == r.key_id)
    }

    fn retire(&mut self) {
        while self.blocks.front().is_some_and(KeyBlock::fully_consumed) {
            let b = self.blocks.pop_front().expect("front exists");
            self.retired_bytes += b.bytes.len() as u64;
            self.retired_consumed += b.consumed_ranges.total();
        }
    }
}
