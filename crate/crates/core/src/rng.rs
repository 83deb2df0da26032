//! Counter-based Philox4x32-10 generator. A stream is addressed by
//! `(seed, particle, step)`, so the draws of one particle at one step do not
//! depend on how work is split across threads.

use rand_core::{impls, RngCore};

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

/// Ten-round Philox bijection of a 128-bit counter under a 64-bit key.
pub fn philox4x32(mut ctr: [u32; 4], mut key: [u32; 2]) -> [u32; 4] {
    for r in 0..10 {
        if r > 0 {
            key[0] = key[0].wrapping_add(W0);
            key[1] = key[1].wrapping_add(W1);
        }
        let (hi0, lo0) = mulhilo(M0, ctr[0]);
        let (hi1, lo1) = mulhilo(M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0];
    }
    ctr
}

#[derive(Clone, Debug)]
pub struct Philox {
    key: [u32; 2],
    ctr: [u32; 4],
    buf: [u32; 4],
    used: usize,
}

impl Philox {
    pub fn new(seed: u64, particle: u32, step: u64) -> Self {
        Self {
            key: [seed as u32, (seed >> 32) as u32],
            ctr: [0, particle, step as u32, (step >> 32) as u32],
            buf: [0; 4],
            used: 4,
        }
    }

    fn refill(&mut self) {
        self.buf = philox4x32(self.ctr, self.key);
        self.ctr[0] = self.ctr[0].wrapping_add(1);
        self.used = 0;
    }
}

impl RngCore for Philox {
    fn next_u32(&mut self) -> u32 {
        if self.used == 4 {
            self.refill();
        }
        let v = self.buf[self.used];
        self.used += 1;
        v
    }

    fn next_u64(&mut self) -> u64 {
        impls::next_u64_via_u32(self)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}
