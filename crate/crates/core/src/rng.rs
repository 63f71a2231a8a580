//! Counter-based random numbers (Philox4x32-10).
//!
//! A draw is a pure function of `(seed, stream, position)`: the 128-bit
//! Philox counter is `[block_lo, block_hi, stream_lo, stream_hi]` and the
//! 64-bit key is the seed. Philox is a bijection on the counter for a fixed
//! key, so two streams with distinct ids under the same seed can never emit
//! the same 128-bit block. Every platform produces the same sequence.
//!
//! Each 128-bit block yields two `u64` draws (words 0,1 then 2,3).

const MUL0: u32 = 0xD251_1F53;
const MUL1: u32 = 0xCD9E_8D57;
const WEYL0: u32 = 0x9E37_79B9;
const WEYL1: u32 = 0xBB67_AE85;
const ROUNDS: usize = 10;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

#[inline]
fn philox_round(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let (hi0, lo0) = mulhilo(MUL0, ctr[0]);
    let (hi1, lo1) = mulhilo(MUL1, ctr[2]);
    [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0]
}

/// The Philox4x32 block function with 10 rounds.
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut ctr = philox_round(counter, key);
    let mut key = key;
    for _ in 1..ROUNDS {
        key = [key[0].wrapping_add(WEYL0), key[1].wrapping_add(WEYL1)];
        ctr = philox_round(ctr, key);
    }
    ctr
}

/// What a stream is used for. Occupies the top byte of a stream id so that
/// different purposes never collide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Init = 1,
    Dropout = 2,
    Shuffle = 3,
    Bootstrap = 4,
    Split = 5,
    Member = 6,
    Stacker = 7,
    Test = 0xFF,
}

/// Builds a stream id from a purpose and a 56-bit index.
pub fn stream_id(purpose: Purpose, index: u64) -> u64 {
    debug_assert!(index < (1 << 56), "stream index exceeds 56 bits");
    (u64::from(purpose as u8) << 56) | (index & ((1 << 56) - 1))
}

/// A single-owner deterministic random stream.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    position: u64,
    block: [u32; 4],
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream {
            seed,
            stream,
            position: 0,
            block: [0; 4],
        }
    }

    /// Convenience constructor for `stream_id(purpose, index)`.
    pub fn for_purpose(seed: u64, purpose: Purpose, index: u64) -> Self {
        Self::new(seed, stream_id(purpose, index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of `u64` draws consumed so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    /// Another stream under the same seed.
    pub fn derive(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }

    fn compute_block(&self, block: u64) -> [u32; 4] {
        philox4x32_10(
            [
                block as u32,
                (block >> 32) as u32,
                self.stream as u32,
                (self.stream >> 32) as u32,
            ],
            [self.seed as u32, (self.seed >> 32) as u32],
        )
    }

    pub fn next_u64(&mut self) -> u64 {
        let half = self.position & 1;
        if half == 0 {
            self.block = self.compute_block(self.position >> 1);
        }
        self.position += 1;
        let (hi, lo) = if half == 0 {
            (self.block[0], self.block[1])
        } else {
            (self.block[2], self.block[3])
        };
        (u64::from(hi) << 32) | u64::from(lo)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` by multiply-shift; bias is below 2^-64 * n.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
