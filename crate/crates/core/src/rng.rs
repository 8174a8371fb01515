//! Counter-based random streams.
//!
//! Every draw made by the simulator is a pure function of
//! `(seed, path_index, step, substream, counter)`. A stream is opened for one
//! step of one path and one noise source; nothing is carried between steps, so
//! the order in which paths are scheduled on workers cannot change the output.
//!
//! The mixing function is the SplitMix64 finalizer. Keys are built by folding
//! the coordinates through it one at a time, and the stream output is the
//! finalizer applied to `key + counter * GOLDEN`.

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn fold(acc: u64, word: u64) -> u64 {
    mix64(acc ^ mix64(word.wrapping_add(GOLDEN)))
}

/// Independent noise sources within one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Substream {
    Brownian = 1,
    JumpMarks = 2,
    SmallJumps = 3,
}

/// Derives a child seed, used to give separate estimators independent noise.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    fold(fold(seed, 0x5EED), tag)
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, path_index: u64, step: u64, substream: Substream) -> Self {
        let key = fold(fold(fold(fold(0, seed), path_index), step), substream as u64);
        Self { key, counter: 0 }
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        rand::rand_core::impls::fill_bytes_via_next(self, dst)
    }
}
