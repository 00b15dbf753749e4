//! Frame timing and pulse planning.
//!
//! Each frame opens with a sense window during which every electrode is
//! scanned for touch. Stimulation pulses follow, packed back to back in
//! ascending electrode order, one pulse per electrode to stimulate.

use crate::error::{Error, Result};
use crate::layout::ElectrodeLayout;
use crate::mask::TouchMask;

pub const DEFAULT_PULSE_WIDTH_US: u32 = 50;
pub const DEFAULT_REFRESH_HZ: u32 = 60;
pub const DEFAULT_SENSE_WINDOW_US: u32 = 1_000;
pub const DEFAULT_INTENSITY: u8 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StimParams {
    pub pulse_width_us: u32,
    pub refresh_hz: u32,
    pub sense_window_us: u32,
    /// Abstract pulse height, applied to every pulse of the device.
    pub intensity: u8,
}

impl Default for StimParams {
    fn default() -> Self {
        StimParams {
            pulse_width_us: DEFAULT_PULSE_WIDTH_US,
            refresh_hz: DEFAULT_REFRESH_HZ,
            sense_window_us: DEFAULT_SENSE_WINDOW_US,
            intensity: DEFAULT_INTENSITY,
        }
    }
}

impl StimParams {
    /// `round(1e6 / refresh_hz)`.
    pub fn frame_period_us(&self) -> u32 {
        (1_000_000 + self.refresh_hz / 2) / self.refresh_hz
    }

    /// Checks that a frame with every electrode of `layout` stimulated fits
    /// in one frame period after the sense window.
    pub fn validate(&self, layout: &ElectrodeLayout) -> Result<()> {
        if self.pulse_width_us == 0 {
            return Err(Error::InvalidParams("pulse width must be positive".into()));
        }
        if self.refresh_hz == 0 || self.refresh_hz > 1_000_000 {
            return Err(Error::InvalidParams(format!(
                "refresh rate {} Hz out of range",
                self.refresh_hz
            )));
        }
        let needed =
            self.sense_window_us as u64 + layout.total() as u64 * self.pulse_width_us as u64;
        let period = self.frame_period_us() as u64;
        if needed > period {
            return Err(Error::InvalidParams(format!(
                "sense window plus {} pulses needs {needed} us, frame period is {period} us",
                layout.total()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pulse {
    pub electrode: u16,
    pub start_offset_us: u32,
    pub width_us: u32,
    pub intensity: u8,
}

impl Pulse {
    pub fn end_offset_us(&self) -> u32 {
        self.start_offset_us + self.width_us
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StimPlan {
    pub frame_index: u64,
    pub pulses: Vec<Pulse>,
}

impl StimPlan {
    /// Sum of pulse widths.
    pub fn pulse_time_us(&self) -> u32 {
        self.pulses.iter().map(|p| p.width_us).sum()
    }

    /// End of the last pulse, or `None` for an empty plan.
    pub fn end_offset_us(&self) -> Option<u32> {
        self.pulses.last().map(Pulse::end_offset_us)
    }

    /// The stimulated electrodes as a mask over `len` electrodes.
    pub fn mask(&self, len: usize) -> Result<TouchMask> {
        TouchMask::from_indices(len, self.pulses.iter().map(|p| p.electrode as usize))
    }
}

/// Electrodes to stimulate: those touched on both devices.
pub fn compute_stim_mask(local: &TouchMask, remote: &TouchMask) -> Result<TouchMask> {
    local.and(remote)
}

pub fn build_stim_plan(
    mask: &TouchMask,
    params: &StimParams,
    layout: &ElectrodeLayout,
    frame_index: u64,
) -> Result<StimPlan> {
    if mask.len() != layout.total() {
        return Err(Error::MaskSize {
            expected: layout.total(),
            found: mask.len(),
        });
    }
    params.validate(layout)?;
    let pulses = mask
        .iter()
        .enumerate()
        .map(|(rank, electrode)| Pulse {
            electrode: electrode as u16,
            start_offset_us: params.sense_window_us + rank as u32 * params.pulse_width_us,
            width_us: params.pulse_width_us,
            intensity: params.intensity,
        })
        .collect();
    Ok(StimPlan {
        frame_index,
        pulses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> ElectrodeLayout {
        ElectrodeLayout::default()
    }

    #[test]
    fn default_frame_period() {
        assert_eq!(StimParams::default().frame_period_us(), 16_667);
        assert!(StimParams::default().validate(&layout()).is_ok());
    }

    #[test]
    fn grip_and_trace_overlap() {
        let local = TouchMask::from_indices(53, [10, 11, 12]).unwrap();
        let remote = TouchMask::from_indices(53, [11]).unwrap();
        assert_eq!(
            compute_stim_mask(&local, &remote).unwrap().to_string(),
            "{11}"
        );
    }

    #[test]
    fn one_sided_touch_stimulates_nothing() {
        let local = TouchMask::from_indices(53, [7]).unwrap();
        assert!(compute_stim_mask(&local, &TouchMask::empty(53))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn packs_pulses_after_sense_window() {
        let mask = TouchMask::from_indices(53, [0, 5]).unwrap();
        let plan = build_stim_plan(&mask, &StimParams::default(), &layout(), 7).unwrap();
        let offsets: Vec<_> = plan
            .pulses
            .iter()
            .map(|p| (p.electrode, p.start_offset_us, p.width_us))
            .collect();
        assert_eq!(offsets, vec![(0, 1_000, 50), (5, 1_050, 50)]);
        assert_eq!(plan.frame_index, 7);
    }

    #[test]
    fn empty_mask_empty_plan() {
        let plan =
            build_stim_plan(&TouchMask::empty(53), &StimParams::default(), &layout(), 0).unwrap();
        assert!(plan.pulses.is_empty());
        assert_eq!(plan.end_offset_us(), None);
    }

    #[test]
    fn full_mask_fits_budget() {
        let plan =
            build_stim_plan(&TouchMask::full(53), &StimParams::default(), &layout(), 0).unwrap();
        assert_eq!(plan.pulses.len(), 53);
        assert_eq!(plan.end_offset_us(), Some(3_650));
        assert_eq!(plan.pulse_time_us(), 2_650);
        assert!(plan.end_offset_us().unwrap() <= 16_667);
    }

    #[test]
    fn mask_wider_than_layout() {
        let err = build_stim_plan(&TouchMask::empty(60), &StimParams::default(), &layout(), 0)
            .unwrap_err();
        assert!(matches!(
            err,
            Error::MaskSize {
                expected: 53,
                found: 60
            }
        ));
    }

    #[test]
    fn rejects_params_that_overrun_the_frame() {
        let params = StimParams {
            pulse_width_us: 300,
            ..StimParams::default()
        };
        assert!(matches!(
            params.validate(&layout()),
            Err(Error::InvalidParams(_))
        ));
        let zero = StimParams {
            pulse_width_us: 0,
            ..StimParams::default()
        };
        assert!(zero.validate(&layout()).is_err());
        let still = StimParams {
            refresh_hz: 0,
            ..StimParams::default()
        };
        assert!(still.validate(&layout()).is_err());
    }

    proptest! {
        #[test]
        fn plan_timing_invariants(bits in 0u64..(1 << 53), intensity: u8) {
            let params = StimParams { intensity, ..StimParams::default() };
            let mask = TouchMask::from_bits(53, bits).unwrap();
            let plan = build_stim_plan(&mask, &params, &layout(), 0).unwrap();
            prop_assert_eq!(plan.pulses.len(), mask.count());
            prop_assert_eq!(plan.mask(53).unwrap(), mask);
            for pair in plan.pulses.windows(2) {
                prop_assert!(pair[0].end_offset_us() <= pair[1].start_offset_us);
                prop_assert!(pair[0].electrode < pair[1].electrode);
            }
            for p in &plan.pulses {
                prop_assert_eq!(p.width_us, 50);
                prop_assert_eq!(p.intensity, intensity);
                prop_assert!(p.start_offset_us >= 1_000);
                prop_assert!(p.end_offset_us() <= params.frame_period_us());
            }
        }

        #[test]
        fn stim_mask_is_monotone(a in 0u64..(1 << 53), b in 0u64..(1 << 53), bit in 0usize..53) {
            let a_mask = TouchMask::from_bits(53, a).unwrap();
            let b_mask = TouchMask::from_bits(53, b).unwrap();
            let before = compute_stim_mask(&a_mask, &b_mask).unwrap();
            let mut grown = a_mask;
            grown.insert(bit).unwrap();
            let after = compute_stim_mask(&grown, &b_mask).unwrap();
            prop_assert!(before.is_subset(&after));
        }
    }
}
