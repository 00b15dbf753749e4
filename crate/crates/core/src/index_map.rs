//! Correspondence between local and remote electrode indices.

use crate::error::{Error, Result};
use crate::layout::{ElectrodeLayout, Strip};
use crate::mask::TouchMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MapMode {
    #[default]
    Identity,
    /// Each strip reversed top-to-bottom; strips never swap sides.
    Mirrored,
    Custom,
}

/// A bijection on `[0, total)` from a local electrode to the paired remote one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMap {
    mapping: Vec<u16>,
    mode: MapMode,
}

impl IndexMap {
    pub fn identity(layout: &ElectrodeLayout) -> Self {
        IndexMap {
            mapping: (0..layout.total() as u16).collect(),
            mode: MapMode::Identity,
        }
    }

    pub fn mirrored(layout: &ElectrodeLayout) -> Self {
        let mut mapping = Vec::with_capacity(layout.total());
        for strip in [Strip::Left, Strip::Right] {
            let range = layout.strip_range(strip);
            mapping.extend(range.clone().rev().map(|i| i as u16));
        }
        IndexMap {
            mapping,
            mode: MapMode::Mirrored,
        }
    }

    pub fn from_permutation(mapping: Vec<usize>) -> Result<Self> {
        let total = mapping.len();
        let mut seen = vec![false; total];
        for &target in &mapping {
            if target >= total || std::mem::replace(&mut seen[target], true) {
                return Err(Error::InvalidLayout(format!(
                    "index map is not a permutation of 0..{total}"
                )));
            }
        }
        Ok(IndexMap {
            mapping: mapping.into_iter().map(|i| i as u16).collect(),
            mode: MapMode::Custom,
        })
    }

    pub fn mode(&self) -> MapMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<usize> {
        self.mapping.get(index).map(|&i| i as usize)
    }

    pub fn inverse(&self) -> IndexMap {
        let mut inv = vec![0u16; self.mapping.len()];
        for (from, &to) in self.mapping.iter().enumerate() {
            inv[to as usize] = from as u16;
        }
        // identity and per-strip reversal are involutions, so the mode carries over
        IndexMap {
            mapping: inv,
            mode: self.mode,
        }
    }
}

/// Moves every set bit `i` of `mask` to position `map(i)`.
pub fn map_remote(mask: &TouchMask, map: &IndexMap) -> Result<TouchMask> {
    if mask.len() != map.len() {
        return Err(Error::MaskSize {
            expected: map.len(),
            found: mask.len(),
        });
    }
    if map.mode == MapMode::Identity {
        return Ok(*mask);
    }
    let mut out = TouchMask::empty(mask.len());
    for i in mask.iter() {
        out.insert(map.mapping[i] as usize)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_keeps_mask() {
        let layout = ElectrodeLayout::default();
        let m = TouchMask::from_indices(53, [3, 40]).unwrap();
        assert_eq!(map_remote(&m, &IndexMap::identity(&layout)).unwrap(), m);
    }

    #[test]
    fn mirrored_reverses_within_each_strip() {
        let layout = ElectrodeLayout::new(3, 4).unwrap();
        let map = IndexMap::mirrored(&layout);
        let got: Vec<_> = (0..7).map(|i| map.get(i).unwrap()).collect();
        assert_eq!(got, vec![2, 1, 0, 6, 5, 4, 3]);
        assert_eq!(map.inverse(), map);
    }

    #[test]
    fn rejects_non_bijections() {
        assert!(IndexMap::from_permutation(vec![0, 0, 1]).is_err());
        assert!(IndexMap::from_permutation(vec![0, 3, 1]).is_err());
        assert!(IndexMap::from_permutation(vec![2, 0, 1]).is_ok());
    }

    #[test]
    fn size_mismatch() {
        let map = IndexMap::identity(&ElectrodeLayout::default());
        assert!(matches!(
            map_remote(&TouchMask::empty(10), &map),
            Err(Error::MaskSize {
                expected: 53,
                found: 10
            })
        ));
    }

    #[test]
    fn popcount_preserved_on_random_masks() {
        let layout = ElectrodeLayout::default();
        let mut perm: Vec<usize> = (0..53).collect();
        let mut state = 0x2545_f491_4f6c_dd1d_u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for i in (1..perm.len()).rev() {
            perm.swap(i, (next() % (i as u64 + 1)) as usize);
        }
        let maps = [
            IndexMap::identity(&layout),
            IndexMap::mirrored(&layout),
            IndexMap::from_permutation(perm).unwrap(),
        ];
        for _ in 0..1_000 {
            let m = TouchMask::from_bits(53, next() & ((1 << 53) - 1)).unwrap();
            for map in &maps {
                assert_eq!(map_remote(&m, map).unwrap().count(), m.count());
            }
        }
    }

    proptest! {
        #[test]
        fn permutation_then_inverse_is_identity(
            perm in Just((0..53usize).collect::<Vec<_>>()).prop_shuffle(),
            bits in 0u64..(1 << 53),
        ) {
            let map = IndexMap::from_permutation(perm).unwrap();
            let m = TouchMask::from_bits(53, bits).unwrap();
            let back = map_remote(&map_remote(&m, &map).unwrap(), &map.inverse()).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
