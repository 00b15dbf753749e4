//! Edge-display geometry.
//!
//! The display is two 1-D strips, one per phone edge. Electrodes carry a
//! single global index: the left strip occupies `0..left_count`, the right
//! strip `left_count..total`, each numbered top to bottom.

use std::fmt;
use std::ops::Range;

use crate::error::{Error, Result};

/// Electrodes on the left edge of the reference device.
pub const DEFAULT_LEFT: u16 = 21;
/// Electrodes on the right edge of the reference device.
pub const DEFAULT_RIGHT: u16 = 32;
/// Upper bound on the number of electrodes a layout may declare.
pub const MAX_ELECTRODES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strip {
    Left,
    Right,
}

impl fmt::Display for Strip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strip::Left => "left",
            Strip::Right => "right",
        })
    }
}

impl std::str::FromStr for Strip {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" | "l" | "L" => Ok(Strip::Left),
            "right" | "r" | "R" => Ok(Strip::Right),
            other => Err(Error::InvalidGesture(format!("unknown strip {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ElectrodeLayout {
    left_count: u16,
    right_count: u16,
}

impl ElectrodeLayout {
    pub fn new(left_count: usize, right_count: usize) -> Result<Self> {
        if left_count == 0 || right_count == 0 {
            return Err(Error::InvalidLayout(format!(
                "both strips need at least one electrode, got {left_count},{right_count}"
            )));
        }
        let total = left_count + right_count;
        if total > MAX_ELECTRODES {
            return Err(Error::InvalidLayout(format!(
                "{total} electrodes exceeds the maximum of {MAX_ELECTRODES}"
            )));
        }
        Ok(ElectrodeLayout {
            left_count: left_count as u16,
            right_count: right_count as u16,
        })
    }

    pub fn left_count(&self) -> usize {
        self.left_count as usize
    }

    pub fn right_count(&self) -> usize {
        self.right_count as usize
    }

    pub fn total(&self) -> usize {
        self.left_count() + self.right_count()
    }

    /// Strip holding global index `index`, or `None` when out of range.
    pub fn strip_of(&self, index: usize) -> Option<Strip> {
        if index < self.left_count() {
            Some(Strip::Left)
        } else if index < self.total() {
            Some(Strip::Right)
        } else {
            None
        }
    }

    pub fn strip_range(&self, strip: Strip) -> Range<usize> {
        match strip {
            Strip::Left => 0..self.left_count(),
            Strip::Right => self.left_count()..self.total(),
        }
    }

    /// Global index of the electrode `offset` positions from the top of `strip`.
    pub fn index(&self, strip: Strip, offset: usize) -> Result<usize> {
        let range = self.strip_range(strip);
        if offset >= range.len() {
            return Err(Error::IndexOutOfRange {
                index: offset,
                total: range.len(),
            });
        }
        Ok(range.start + offset)
    }
}

impl Default for ElectrodeLayout {
    fn default() -> Self {
        ElectrodeLayout {
            left_count: DEFAULT_LEFT,
            right_count: DEFAULT_RIGHT,
        }
    }
}

impl fmt::Display for ElectrodeLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.left_count, self.right_count)
    }
}

impl std::str::FromStr for ElectrodeLayout {
    type Err = Error;

    /// Parses the `L,R` notation used on the command line.
    fn from_str(s: &str) -> Result<Self> {
        let (l, r) = s
            .split_once(',')
            .ok_or_else(|| Error::InvalidLayout(format!("expected L,R, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidLayout(format!("bad electrode count {v:?}")))
        };
        ElectrodeLayout::new(parse(l)?, parse(r)?)
    }
}
