//! Fixed-length packed bit vector.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitVector {
    words: Vec<u64>,
    len: usize,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.set(i);
            }
        }
        v
    }

    /// Bits `0..len` taken from `value`, bit 0 = least significant.
    pub fn from_u64(value: u64, len: usize) -> Self {
        assert!(len <= 64);
        let mut v = Self::zeros(len);
        if len > 0 {
            let mask = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
            v.words[0] = value & mask;
        }
        v
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn bit(&self, i: usize) -> u64 {
        (self.words[i >> 6] >> (i & 63)) & 1
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i >> 6] |= 1 << (i & 63);
    }

    #[inline]
    pub fn assign(&mut self, i: usize, value: bool) {
        let w = &mut self.words[i >> 6];
        let m = 1u64 << (i & 63);
        if value {
            *w |= m;
        } else {
            *w &= !m;
        }
    }

    /// Sets `count` consecutive bits starting at `start`.
    pub fn set_run(&mut self, start: usize, count: usize) {
        debug_assert!(start + count <= self.len);
        let mut i = start;
        let end = start + count;
        while i < end {
            let off = i & 63;
            let take = (64 - off).min(end - i);
            let mask = if take == 64 {
                u64::MAX
            } else {
                ((1u64 << take) - 1) << off
            };
            self.words[i >> 6] |= mask;
            i += take;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of set bits in `start..start + count`.
    pub fn count_ones_in(&self, start: usize, count: usize) -> usize {
        (start..start + count).filter(|&i| self.get(i)).count()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn to_bools(&self) -> Vec<bool> {
        self.iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_run_crosses_word_boundary() {
        let mut v = BitVector::zeros(200);
        v.set_run(60, 70);
        assert_eq!(v.count_ones(), 70);
        assert!(!v.get(59));
        assert!(v.get(60) && v.get(129));
        assert!(!v.get(130));
    }

    #[test]
    fn from_u64_masks_to_length() {
        let v = BitVector::from_u64(0b1111_0110, 4);
        assert_eq!(v.to_bools(), vec![false, true, true, false]);
        assert_eq!(v.count_ones(), 2);
    }
}
