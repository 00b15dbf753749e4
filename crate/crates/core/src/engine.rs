//! Per-endpoint session state machine.
//!
//! An [`Engine`] is driven by exactly one owner. Each frame the driver calls
//! [`Engine::begin_frame`] with the freshly sensed local touch (this yields the
//! outgoing [`TouchFrame`]), hands over every remote frame that arrived via
//! [`Engine::apply_remote_frame`], then calls [`Engine::finish_frame`] to get
//! the pulse plan. [`Engine::tick`] does both ends at once for drivers that
//! applied inbound frames beforehand.

use std::fmt;

use crate::error::{Error, Result};
use crate::index_map::{map_remote, IndexMap};
use crate::layout::ElectrodeLayout;
use crate::mask::TouchMask;
use crate::seq::Seq16;
use crate::stim::{build_stim_plan, compute_stim_mask, StimParams, StimPlan};
use crate::wire::{Hello, TouchFrame, PROTOCOL_VERSION};

/// Frames without an accepted remote frame before the remote mask is dropped.
pub const STALENESS_LIMIT_FRAMES: u32 = 6;
/// Intensity change per raise/lower during calibration.
pub const CALIBRATION_STEP: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Handshaking,
    Calibrating,
    Live,
    Closed,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Handshaking => "handshaking",
            Phase::Calibrating => "calibrating",
            Phase::Live => "live",
            Phase::Closed => "closed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationCommand {
    Raise,
    Lower,
    Confirm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Disposition {
    Adopted,
    Discarded,
}

#[derive(Debug, Clone)]
pub struct Engine {
    layout: ElectrodeLayout,
    params: StimParams,
    index_map: IndexMap,
    staleness_limit: u32,
    phase: Phase,
    local_mask: TouchMask,
    remote_mask: TouchMask,
    remote_seq: Option<Seq16>,
    remote_age_frames: u32,
    tx_seq: Seq16,
    frame_index: u64,
    stim_mask: TouchMask,
    rx_discards: u64,
}

impl Engine {
    /// New engine awaiting the peer's HELLO.
    pub fn new(layout: ElectrodeLayout, params: StimParams) -> Result<Engine> {
        params.validate(&layout)?;
        let empty = TouchMask::for_layout(&layout);
        Ok(Engine {
            index_map: IndexMap::identity(&layout),
            layout,
            params,
            staleness_limit: STALENESS_LIMIT_FRAMES,
            phase: Phase::Handshaking,
            local_mask: empty,
            remote_mask: empty,
            remote_seq: None,
            // nothing received yet, so start past the limit
            remote_age_frames: STALENESS_LIMIT_FRAMES + 1,
            tx_seq: Seq16(0),
            frame_index: 0,
            stim_mask: empty,
            rx_discards: 0,
        })
    }

    /// New engine already in the live phase, for simulations.
    pub fn new_live(layout: ElectrodeLayout, params: StimParams) -> Result<Engine> {
        let mut engine = Engine::new(layout, params)?;
        engine.phase = Phase::Live;
        Ok(engine)
    }

    pub fn with_index_map(mut self, map: IndexMap) -> Result<Engine> {
        if map.len() != self.layout.total() {
            return Err(Error::MaskSize {
                expected: self.layout.total(),
                found: map.len(),
            });
        }
        self.index_map = map;
        Ok(self)
    }

    pub fn with_staleness_limit(mut self, frames: u32) -> Engine {
        self.staleness_limit = frames;
        self.remote_age_frames = self.remote_age_frames.max(frames.saturating_add(1));
        self
    }

    pub fn layout(&self) -> &ElectrodeLayout {
        &self.layout
    }

    pub fn params(&self) -> &StimParams {
        &self.params
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn intensity(&self) -> u8 {
        self.params.intensity
    }

    pub fn local_mask(&self) -> &TouchMask {
        &self.local_mask
    }

    /// Remote mask as currently used for stimulation (empty once stale).
    pub fn remote_mask(&self) -> &TouchMask {
        &self.remote_mask
    }

    pub fn remote_seq(&self) -> Option<Seq16> {
        self.remote_seq
    }

    pub fn remote_age_frames(&self) -> u32 {
        self.remote_age_frames
    }

    pub fn tx_seq(&self) -> Seq16 {
        self.tx_seq
    }

    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }

    /// Mask stimulated by the most recent frame.
    pub fn stim_mask(&self) -> &TouchMask {
        &self.stim_mask
    }

    pub fn rx_discards(&self) -> u64 {
        self.rx_discards
    }

    fn require(&self, expected: Phase) -> Result<()> {
        if self.phase != expected {
            return Err(Error::Phase {
                expected,
                actual: self.phase,
            });
        }
        Ok(())
    }

    /// Validates the peer's HELLO and moves on to calibration.
    pub fn accept_hello(&mut self, hello: &Hello) -> Result<()> {
        self.require(Phase::Handshaking)?;
        if hello.version != PROTOCOL_VERSION {
            return Err(Error::Refused(format!(
                "protocol version {} (expected {PROTOCOL_VERSION})",
                hello.version
            )));
        }
        if !hello.matches(&self.layout) {
            return Err(Error::Refused(format!(
                "layout {},{} does not match local {}",
                hello.left_count, hello.right_count, self.layout
            )));
        }
        self.phase = Phase::Calibrating;
        Ok(())
    }

    pub fn calibrate(&mut self, command: CalibrationCommand) -> Result<()> {
        self.require(Phase::Calibrating)?;
        match command {
            CalibrationCommand::Raise => {
                self.params.intensity = self.params.intensity.saturating_add(CALIBRATION_STEP)
            }
            CalibrationCommand::Lower => {
                self.params.intensity = self.params.intensity.saturating_sub(CALIBRATION_STEP)
            }
            CalibrationCommand::Confirm => self.phase = Phase::Live,
        }
        Ok(())
    }

    /// Sets the intensity directly; only allowed while calibrating.
    pub fn propose_intensity(&mut self, level: u8) -> Result<()> {
        self.require(Phase::Calibrating)?;
        self.params.intensity = level;
        Ok(())
    }

    pub fn close(&mut self) {
        self.phase = Phase::Closed;
    }

    /// Starts a frame: records the sensed touch, ages the remote mask and
    /// returns the frame to transmit.
    pub fn begin_frame(&mut self, local_touch: TouchMask, now_us: u32) -> Result<TouchFrame> {
        self.require(Phase::Live)?;
        local_touch.check_same_size(&self.local_mask)?;
        self.local_mask = local_touch;
        self.remote_age_frames = self.remote_age_frames.saturating_add(1);
        let frame = TouchFrame {
            seq: self.tx_seq,
            timestamp_us: now_us,
            mask: local_touch,
            intensity: self.params.intensity,
        };
        self.tx_seq = self.tx_seq.next();
        Ok(frame)
    }

    /// Adopts `frame` if it is newer than the last accepted remote frame.
    pub fn apply_remote_frame(&mut self, frame: &TouchFrame) -> Disposition {
        let fresh = match self.remote_seq {
            None => true,
            Some(last) => frame.seq.is_newer_than(last),
        };
        if !fresh || self.phase == Phase::Closed {
            self.rx_discards += 1;
            return Disposition::Discarded;
        }
        let Ok(mapped) = map_remote(&frame.mask, &self.index_map) else {
            self.rx_discards += 1;
            return Disposition::Discarded;
        };
        self.remote_mask = mapped;
        self.remote_seq = Some(frame.seq);
        self.remote_age_frames = 0;
        Disposition::Adopted
    }

    /// Finishes the frame: applies staleness and the overlap rule, and
    /// returns the pulse plan.
    pub fn finish_frame(&mut self) -> Result<StimPlan> {
        self.require(Phase::Live)?;
        if self.remote_age_frames > self.staleness_limit {
            self.remote_mask = TouchMask::for_layout(&self.layout);
        }
        self.stim_mask = compute_stim_mask(&self.local_mask, &self.remote_mask)?;
        let plan = build_stim_plan(
            &self.stim_mask,
            &self.params,
            &self.layout,
            self.frame_index,
        )?;
        self.frame_index += 1;
        Ok(plan)
    }

    pub fn tick(&mut self, local_touch: TouchMask, now_us: u32) -> Result<(StimPlan, TouchFrame)> {
        let frame = self.begin_frame(local_touch, now_us)?;
        let plan = self.finish_frame()?;
        Ok((plan, frame))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(idx: &[usize]) -> TouchMask {
        TouchMask::from_indices(53, idx.iter().copied()).unwrap()
    }

    fn live() -> Engine {
        Engine::new_live(ElectrodeLayout::default(), StimParams::default()).unwrap()
    }

    fn remote(seq: u16, idx: &[usize]) -> TouchFrame {
        TouchFrame {
            seq: Seq16(seq),
            timestamp_us: 0,
            mask: mask(idx),
            intensity: 64,
        }
    }

    #[test]
    fn fresh_overlap_is_stimulated() {
        let mut e = live();
        let frame = e.begin_frame(mask(&[4]), 0).unwrap();
        e.apply_remote_frame(&remote(0, &[4]));
        let plan = e.finish_frame().unwrap();
        assert_eq!(plan.mask(53).unwrap(), mask(&[4]));
        assert_eq!(frame.mask, mask(&[4]));
        assert_eq!(frame.seq, Seq16(0));
        assert_eq!(e.tx_seq(), Seq16(1));
    }

    #[test]
    fn tick_emits_local_touch_and_advances_seq() {
        let mut e = live();
        let (plan, frame) = e.tick(mask(&[]), 16_667).unwrap();
        assert!(plan.pulses.is_empty());
        assert!(frame.mask.is_empty());
        assert_eq!(frame.timestamp_us, 16_667);
        let (_, frame) = e.tick(mask(&[]), 33_334).unwrap();
        assert_eq!(frame.seq, Seq16(1));
    }

    #[test]
    fn nothing_received_means_no_stimulation() {
        let mut e = live();
        let (plan, _) = e.tick(mask(&[1, 2, 3]), 0).unwrap();
        assert!(plan.pulses.is_empty());
    }

    #[test]
    fn staleness_clears_after_limit_plus_one_frames() {
        let mut e = live();
        e.begin_frame(mask(&[4]), 0).unwrap();
        e.apply_remote_frame(&remote(0, &[4]));
        assert_eq!(e.finish_frame().unwrap().pulses.len(), 1);
        // oracle: frames 1..=6 after the last accepted frame still stimulate
        for silent in 1..=STALENESS_LIMIT_FRAMES {
            let (plan, _) = e.tick(mask(&[4]), 0).unwrap();
            assert_eq!(plan.pulses.len(), 1, "silent frame {silent}");
        }
        let (plan, _) = e.tick(mask(&[4]), 0).unwrap();
        assert!(plan.pulses.is_empty());
        assert!(e.remote_mask().is_empty());
    }

    #[test]
    fn reordered_and_duplicate_frames_are_discarded() {
        let mut e = live();
        assert_eq!(e.apply_remote_frame(&remote(9, &[1])), Disposition::Adopted);
        assert_eq!(
            e.apply_remote_frame(&remote(10, &[2])),
            Disposition::Adopted
        );
        assert_eq!(
            e.apply_remote_frame(&remote(9, &[3])),
            Disposition::Discarded
        );
        assert_eq!(
            e.apply_remote_frame(&remote(10, &[3])),
            Disposition::Discarded
        );
        assert_eq!(e.remote_mask(), &mask(&[2]));
        assert_eq!(e.remote_seq(), Some(Seq16(10)));
        assert_eq!(e.rx_discards(), 2);
    }

    #[test]
    fn adoption_across_wrap() {
        let mut e = live();
        e.apply_remote_frame(&remote(65_534, &[1]));
        assert_eq!(e.apply_remote_frame(&remote(3, &[2])), Disposition::Adopted);
        assert_eq!(e.remote_mask(), &mask(&[2]));
    }

    #[test]
    fn remote_frames_pass_through_index_map() {
        let layout = ElectrodeLayout::default();
        let mut e = live().with_index_map(IndexMap::mirrored(&layout)).unwrap();
        e.apply_remote_frame(&remote(0, &[0, 21]));
        assert_eq!(e.remote_mask(), &mask(&[20, 52]));
    }

    #[test]
    fn calibration_steps_and_clamps() {
        let mut e = Engine::new(ElectrodeLayout::default(), StimParams::default()).unwrap();
        e.accept_hello(&Hello::for_layout(&ElectrodeLayout::default()).unwrap())
            .unwrap();
        assert_eq!(e.phase(), Phase::Calibrating);
        assert_eq!(e.intensity(), 64);
        e.propose_intensity(100).unwrap();
        e.calibrate(CalibrationCommand::Raise).unwrap();
        assert_eq!(e.intensity(), 105);
        e.propose_intensity(255).unwrap();
        e.calibrate(CalibrationCommand::Raise).unwrap();
        assert_eq!(e.intensity(), 255);
        e.propose_intensity(0).unwrap();
        e.calibrate(CalibrationCommand::Lower).unwrap();
        assert_eq!(e.intensity(), 0);
        e.propose_intensity(3).unwrap();
        e.calibrate(CalibrationCommand::Lower).unwrap();
        assert_eq!(e.intensity(), 0);
        e.calibrate(CalibrationCommand::Confirm).unwrap();
        assert_eq!(e.phase(), Phase::Live);
        assert!(matches!(
            e.calibrate(CalibrationCommand::Raise),
            Err(Error::Phase {
                expected: Phase::Calibrating,
                actual: Phase::Live
            })
        ));
    }

    #[test]
    fn tick_outside_live_is_a_phase_error() {
        let mut e = Engine::new(ElectrodeLayout::default(), StimParams::default()).unwrap();
        assert!(matches!(e.tick(mask(&[]), 0), Err(Error::Phase { .. })));
        let mut closed = live();
        closed.close();
        assert!(matches!(
            closed.tick(mask(&[]), 0),
            Err(Error::Phase { .. })
        ));
        assert_eq!(
            closed.apply_remote_frame(&remote(0, &[])),
            Disposition::Discarded
        );
    }

    #[test]
    fn hello_mismatch_is_refused() {
        let mut e = Engine::new(ElectrodeLayout::default(), StimParams::default()).unwrap();
        let other = Hello::for_layout(&ElectrodeLayout::new(20, 32).unwrap()).unwrap();
        assert!(matches!(e.accept_hello(&other), Err(Error::Refused(_))));
        let mut bad_version = Hello::for_layout(&ElectrodeLayout::default()).unwrap();
        bad_version.version = 9;
        assert!(matches!(
            e.accept_hello(&bad_version),
            Err(Error::Refused(_))
        ));
        assert_eq!(e.phase(), Phase::Handshaking);
    }

    #[test]
    fn wrong_local_mask_size() {
        let mut e = live();
        assert!(matches!(
            e.begin_frame(TouchMask::empty(10), 0),
            Err(Error::MaskSize { .. })
        ));
    }

    #[test]
    fn tx_seq_wraps() {
        let mut e = live();
        for _ in 0..65_536 {
            e.tick(mask(&[]), 0).unwrap();
        }
        assert_eq!(e.tx_seq(), Seq16(0));
    }
}
