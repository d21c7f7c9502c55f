//! Carryless byte-oriented range coder with 64-bit state.
//!
//! Frequencies are 16-bit with a fixed total of 2^16. The coder renormalizes
//! a byte at a time; when the top bytes of the interval ends disagree and the
//! range has shrunk below the reduction threshold, the range is truncated to
//! the byte boundary, which avoids carry propagation entirely.

use crate::error::{Error, Result};

pub const TOTAL_BITS: u32 = 16;
pub const TOTAL: u32 = 1 << TOTAL_BITS;

const TOP: u64 = 1 << 56;
const BOT: u64 = 1 << 48;

pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u64::MAX, out: Vec::new() }
    }

    /// Encodes a symbol occupying `[cum, cum + freq)` of the total.
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0);
        debug_assert!(cum as u64 + freq as u64 <= TOTAL as u64);
        let r = self.range >> TOTAL_BITS;
        self.low = self.low.wrapping_add(r * cum as u64);
        self.range = r * freq as u64;
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) < TOP {
                // Top byte settled.
            } else if self.range < BOT {
                self.range = BOT - (self.low & (BOT - 1));
            } else {
                break;
            }
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    /// Flushes the state; the output fully determines the encoded sequence.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..8 {
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
        }
        self.out
    }

    pub fn len(&self) -> usize {
        self.out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.out.is_empty()
    }
}

pub struct RangeDecoder<'a> {
    buf: &'a [u8],
    pos: usize,
    low: u64,
    range: u64,
    code: u64,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(buf: &'a [u8]) -> Result<Self> {
        if buf.len() < 8 {
            return Err(Error::Corrupt("payload shorter than coder state".into()));
        }
        let mut code = 0u64;
        for &b in &buf[0..8] {
            code = (code << 8) | b as u64;
        }
        Ok(Self { buf, pos: 8, low: 0, range: u64::MAX, code })
    }

    /// Cumulative-frequency slot the next symbol falls in.
    pub fn decode_cum(&self) -> u32 {
        let r = self.range >> TOTAL_BITS;
        let cum = self.code.wrapping_sub(self.low) / r;
        cum.min(TOTAL as u64 - 1) as u32
    }

    /// Consumes the symbol at `[cum, cum + freq)`.
    pub fn update(&mut self, cum: u32, freq: u32) -> Result<()> {
        let r = self.range >> TOTAL_BITS;
        self.low = self.low.wrapping_add(r * cum as u64);
        self.range = r * freq as u64;
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) < TOP {
                // Top byte settled.
            } else if self.range < BOT {
                self.range = BOT - (self.low & (BOT - 1));
            } else {
                break;
            }
            let byte = match self.buf.get(self.pos) {
                Some(b) => *b,
                None => return Err(Error::Corrupt("payload truncated mid-stream".into())),
            };
            self.pos += 1;
            self.code = (self.code << 8) | byte as u64;
            self.low <<= 8;
            self.range <<= 8;
        }
        Ok(())
    }
}
