//! Frame and flow bookkeeping for one blurry pair.
//!
//! Reconstructed frames are numbered by output slot `0..2N`: slot `n`
//! holds latent frame `t0 - N/2 + n`. Window `w` (0 for `B_t0`, 1 for
//! `B_t1`) owns slots `w*N .. w*N + N`, and its reference frame sits at
//! the window center.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameIndexing {
    pub n: usize,
}

impl FrameIndexing {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 || n.is_multiple_of(2) {
            return Err(Error::Config(format!("frames per blur must be odd and >= 3, got {n}")));
        }
        Ok(Self { n })
    }

    pub fn half(&self) -> usize {
        self.n / 2
    }

    /// Number of reconstructed frames, `2N`.
    pub fn total(&self) -> usize {
        2 * self.n
    }

    /// Number of estimated flows, `2 * total - 4`.
    pub fn num_flows(&self) -> usize {
        2 * self.total() - 4
    }

    /// Non-zero offsets from a reference, ascending.
    pub fn offsets(&self) -> Vec<i32> {
        let h = self.half() as i32;
        (-h..=h).filter(|o| *o != 0).collect()
    }

    pub fn ref_slot(&self, window: usize) -> usize {
        window * self.n + self.half()
    }

    pub fn slot(&self, window: usize, offset: i32) -> usize {
        window * self.n + (self.half() as i32 + offset) as usize
    }

    pub fn window_of(&self, slot: usize) -> usize {
        slot / self.n
    }

    pub fn offset_of(&self, slot: usize) -> i32 {
        (slot % self.n) as i32 - self.half() as i32
    }

    pub fn is_ref(&self, slot: usize) -> bool {
        self.offset_of(slot) == 0
    }

    /// Slot holding the same window position under temporal reversal.
    pub fn mirror(&self, slot: usize) -> usize {
        self.slot(self.window_of(slot), -self.offset_of(slot))
    }

    /// Non-middle slots in output order; `s0` followed by `s1`.
    pub fn nonmid_slots(&self) -> Vec<usize> {
        (0..self.total()).filter(|s| !self.is_ref(*s)).collect()
    }

    /// `(source slot, reference window)` for every flow, grouped by
    /// reference window then source slot.
    pub fn flow_pairs(&self) -> Vec<(usize, usize)> {
        let srcs = self.nonmid_slots();
        (0..2).flat_map(|r| srcs.iter().map(move |s| (*s, r))).collect()
    }

    pub fn flow_index(&self, source: usize, reference: usize) -> usize {
        let srcs = self.total() - 2;
        let pos = source - self.window_of(source) - usize::from(self.offset_of(source) > 0);
        reference * srcs + pos
    }

    /// Indices of the four extremum flows:
    /// `t0-h -> t1`, `t0+h -> t1`, `t1-h -> t0`, `t1+h -> t0`.
    pub fn extremum_flows(&self) -> [usize; 4] {
        let h = self.half() as i32;
        [
            self.flow_index(self.slot(0, -h), 1),
            self.flow_index(self.slot(0, h), 1),
            self.flow_index(self.slot(1, -h), 0),
            self.flow_index(self.slot(1, h), 0),
        ]
    }

    /// Latent frame index of `slot` given the first reference index `t0`.
    pub fn latent_index(&self, t0: usize, slot: usize) -> usize {
        t0 - self.half() + slot
    }
}
