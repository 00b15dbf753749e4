use std::fmt;

/// 16-bit wrapping frame sequence number with serial-number ordering.
///
/// `a` is newer than `b` iff `(a - b) mod 2^16` lies in `(0, 2^15)`. The
/// relation is deliberately partial: two numbers exactly half the space
/// apart are neither newer nor older than each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Seq16(pub u16);

impl Seq16 {
    const HALF: u16 = 1 << 15;

    pub fn value(self) -> u16 {
        self.0
    }

    pub fn next(self) -> Seq16 {
        Seq16(self.0.wrapping_add(1))
    }

    pub fn is_newer_than(self, other: Seq16) -> bool {
        let diff = self.0.wrapping_sub(other.0);
        diff != 0 && diff < Self::HALF
    }
}

impl fmt::Display for Seq16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}
