//! Quantized frequency tables for the range coder.

use super::rangecoder::TOTAL;
use crate::error::{Error, Result};

/// A fixed symbol alphabet with 16-bit quantized frequencies summing exactly
/// to the coder total. Every symbol keeps frequency >= 1 so it stays codable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolModel {
    freqs: Vec<u32>,
    /// `cum[i]` = total frequency below symbol `i`; `cum[n]` = 2^16.
    cum: Vec<u32>,
}

impl SymbolModel {
    /// Builds a model from nonnegative masses (need not be normalized).
    pub fn from_masses(masses: &[f64]) -> Result<Self> {
        let n = masses.len();
        if n == 0 {
            return Err(Error::Coder("empty alphabet".into()));
        }
        if n as u32 > TOTAL {
            return Err(Error::Coder("alphabet larger than frequency total".into()));
        }
        let sum: f64 = masses.iter().map(|m| m.max(0.0)).sum();
        let uniform = !(sum > 0.0) || !sum.is_finite();

        let mut freqs = vec![0u32; n];
        let mut remainders = vec![0f64; n];
        let mut acc: u64 = 0;
        for i in 0..n {
            let ideal = if uniform {
                TOTAL as f64 / n as f64
            } else {
                masses[i].max(0.0) / sum * TOTAL as f64
            };
            let f = (ideal.floor() as u32).max(1);
            remainders[i] = ideal - ideal.floor();
            freqs[i] = f;
            acc += f as u64;
        }

        // Largest-remainder correction, deterministic tie-break by index.
        if acc < TOTAL as u64 {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                remainders[b]
                    .partial_cmp(&remainders[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut deficit = TOTAL as u64 - acc;
            let mut i = 0;
            while deficit > 0 {
                freqs[order[i % n]] += 1;
                deficit -= 1;
                i += 1;
            }
        } else {
            // Shave excess off the largest entries, never below 1.
            let mut excess = acc - TOTAL as u64;
            while excess > 0 {
                let (idx, _) = freqs
                    .iter()
                    .enumerate()
                    .max_by(|(ia, a), (ib, b)| a.cmp(b).then(ib.cmp(ia)))
                    .expect("nonempty");
                if freqs[idx] <= 1 {
                    return Err(Error::Coder("cannot satisfy minimum frequencies".into()));
                }
                let take = (freqs[idx] - 1).min(excess as u32);
                freqs[idx] -= take;
                excess -= take as u64;
            }
        }

        let mut cum = Vec::with_capacity(n + 1);
        let mut running = 0u32;
        cum.push(0);
        for &f in &freqs {
            running += f;
            cum.push(running);
        }
        debug_assert_eq!(running, TOTAL);
        Ok(Self { freqs, cum })
    }

    /// Equal-frequency model over `n` symbols; `n` must divide 2^16.
    pub fn uniform(n: usize) -> Self {
        debug_assert_eq!(TOTAL as usize % n, 0);
        let f = TOTAL / n as u32;
        let freqs = vec![f; n];
        let mut cum = Vec::with_capacity(n + 1);
        for i in 0..=n {
            cum.push(i as u32 * f);
        }
        Self { freqs, cum }
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// `(cum, freq)` interval of a symbol.
    pub fn interval(&self, symbol: usize) -> (u32, u32) {
        (self.cum[symbol], self.freqs[symbol])
    }

    /// Symbol whose interval contains the cumulative slot.
    pub fn locate(&self, cum_value: u32) -> usize {
        // cum is strictly increasing; find the last index with cum[i] <= value.
        match self.cum.binary_search(&cum_value) {
            Ok(i) => i.min(self.freqs.len() - 1),
            Err(i) => i - 1,
        }
    }

    /// Shannon entropy of the quantized table, bits per symbol.
    pub fn entropy_bits(&self) -> f64 {
        let total = TOTAL as f64;
        self.freqs
            .iter()
            .map(|&f| {
                let p = f as f64 / total;
                -p * p.log2()
            })
            .sum()
    }

    /// Bits the coder ideally spends on `symbol` under this table.
    pub fn symbol_bits(&self, symbol: usize) -> f64 {
        -(self.freqs[symbol] as f64 / TOTAL as f64).log2()
    }
}
