//! Per-electrode touch masks.
//!
//! A [`TouchMask`] is both a sensing report (which electrodes are touched)
//! and a stimulation candidate set, since every electrode doubles as sensor
//! and stimulator. Masks are fixed-width: they remember how many electrodes
//! they were built for and refuse to combine with masks of another width.

use std::fmt;

use crate::error::{Error, Result};
use crate::layout::{ElectrodeLayout, MAX_ELECTRODES};

const WORDS: usize = MAX_ELECTRODES / 64;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct TouchMask {
    words: [u64; WORDS],
    len: u16,
}

impl TouchMask {
    /// Empty mask over `len` electrodes.
    pub fn empty(len: usize) -> Self {
        assert!(
            len <= MAX_ELECTRODES,
            "mask width {len} exceeds {MAX_ELECTRODES}"
        );
        TouchMask {
            words: [0; WORDS],
            len: len as u16,
        }
    }

    pub fn for_layout(layout: &ElectrodeLayout) -> Self {
        Self::empty(layout.total())
    }

    /// Every electrode touched.
    pub fn full(len: usize) -> Self {
        let mut mask = Self::empty(len);
        for i in 0..len {
            mask.words[i / 64] |= 1 << (i % 64);
        }
        mask
    }

    pub fn from_indices<I>(len: usize, indices: I) -> Result<Self>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut mask = Self::empty(len);
        for i in indices {
            mask.insert(i)?;
        }
        Ok(mask)
    }

    /// Builds a mask from the low `len` bits of `bits` (bit i = electrode i).
    pub fn from_bits(len: usize, bits: u64) -> Result<Self> {
        if len < 64 && bits >> len != 0 {
            return Err(Error::IndexOutOfRange {
                index: 63 - bits.leading_zeros() as usize,
                total: len,
            });
        }
        let mut mask = Self::empty(len);
        mask.words[0] = bits;
        Ok(mask)
    }

    /// Low 64 bits of the mask.
    pub fn low_bits(&self) -> u64 {
        self.words[0]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn contains(&self, index: usize) -> bool {
        index < self.len() && self.words[index / 64] & (1 << (index % 64)) != 0
    }

    pub fn insert(&mut self, index: usize) -> Result<()> {
        self.check_index(index)?;
        self.words[index / 64] |= 1 << (index % 64);
        Ok(())
    }

    pub fn remove(&mut self, index: usize) -> Result<()> {
        self.check_index(index)?;
        self.words[index / 64] &= !(1 << (index % 64));
        Ok(())
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.len() {
            return Err(Error::IndexOutOfRange {
                index,
                total: self.len(),
            });
        }
        Ok(())
    }

    /// Touched electrode indices in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..WORDS).flat_map(move |w| {
            let mut word = self.words[w];
            std::iter::from_fn(move || {
                if word == 0 {
                    return None;
                }
                let bit = word.trailing_zeros() as usize;
                word &= word - 1;
                Some(w * 64 + bit)
            })
        })
    }

    pub fn check_same_size(&self, other: &TouchMask) -> Result<()> {
        if self.len != other.len {
            return Err(Error::MaskSize {
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(())
    }

    /// Electrodes touched in both masks.
    pub fn and(&self, other: &TouchMask) -> Result<TouchMask> {
        self.check_same_size(other)?;
        let mut out = *self;
        for (a, b) in out.words.iter_mut().zip(other.words.iter()) {
            *a &= b;
        }
        Ok(out)
    }

    pub fn or(&self, other: &TouchMask) -> Result<TouchMask> {
        self.check_same_size(other)?;
        let mut out = *self;
        for (a, b) in out.words.iter_mut().zip(other.words.iter()) {
            *a |= b;
        }
        Ok(out)
    }

    pub fn is_subset(&self, other: &TouchMask) -> bool {
        self.len == other.len
            && self
                .words
                .iter()
                .zip(other.words.iter())
                .all(|(a, b)| a & !b == 0)
    }

    /// Number of electrodes whose state differs between the two masks.
    pub fn hamming(&self, other: &TouchMask) -> Result<usize> {
        self.check_same_size(other)?;
        Ok(self
            .words
            .iter()
            .zip(other.words.iter())
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// Parses `{3,4,5}` notation for a mask over `len` electrodes.
    pub fn parse(s: &str, len: usize) -> Result<Self> {
        let inner = s
            .trim()
            .strip_prefix('{')
            .and_then(|r| r.strip_suffix('}'))
            .ok_or_else(|| Error::MaskSyntax(format!("expected {{...}}, got {s:?}")))?;
        let mut mask = Self::empty(len);
        for item in inner
            .split(',')
            .map(str::trim)
            .filter(|item| !item.is_empty())
        {
            let index: usize = item
                .parse()
                .map_err(|_| Error::MaskSyntax(format!("bad electrode index {item:?}")))?;
            mask.insert(index)?;
        }
        Ok(mask)
    }
}

/// Bitwise intersection of two masks built for the same layout.
pub fn mask_and(a: &TouchMask, b: &TouchMask) -> Result<TouchMask> {
    a.and(b)
}

impl fmt::Display for TouchMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (n, i) in self.iter().enumerate() {
            if n > 0 {
                f.write_str(",")?;
            }
            write!(f, "{i}")?;
        }
        f.write_str("}")
    }
}

impl fmt::Debug for TouchMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TouchMask({}/{})", self, self.len)
    }
}
