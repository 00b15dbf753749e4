//! Two engines in lockstep over a simulated link.
//!
//! Frame `n` starts at `n * frame_period_us` of virtual time. Within a frame
//! both endpoints sense and transmit first, then the link delivers every
//! packet due by the frame start, then both endpoints stimulate. A zero-delay
//! link therefore hands each engine its peer's touch from the same frame.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::gesture::GestureScript;
use crate::index_map::{IndexMap, MapMode};
use crate::layout::ElectrodeLayout;
use crate::mask::TouchMask;
use crate::sim::{DeliveryRecord, DirectionStats, Endpoint, LinkModel, SimLink};
use crate::stim::StimParams;
use crate::wire::{decode_with_layout, encode, Message};

/// Default session length, matching the ten-minute paired calls.
pub const DEFAULT_DURATION_MS: u64 = 10 * 60 * 1_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub layout: ElectrodeLayout,
    pub params: StimParams,
    pub link: LinkModel,
    pub duration_ms: u64,
    pub map_mode: MapMode,
    /// Partition the link from this time on.
    pub cut_at_ms: Option<u64>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            layout: ElectrodeLayout::default(),
            params: StimParams::default(),
            link: LinkModel::ideal(),
            duration_ms: DEFAULT_DURATION_MS,
            map_mode: MapMode::Identity,
            cut_at_ms: None,
        }
    }
}

impl SessionConfig {
    pub fn with_duration_ms(mut self, duration_ms: u64) -> Self {
        self.duration_ms = duration_ms;
        self
    }

    pub fn with_link(mut self, link: LinkModel) -> Self {
        self.link = link;
        self
    }

    /// `round(duration_ms * refresh_hz / 1000)`.
    pub fn frame_count(&self) -> u64 {
        (self.duration_ms * self.params.refresh_hz as u64 + 500) / 1_000
    }

    fn index_map(&self) -> Result<IndexMap> {
        match self.map_mode {
            MapMode::Identity => Ok(IndexMap::identity(&self.layout)),
            MapMode::Mirrored => Ok(IndexMap::mirrored(&self.layout)),
            MapMode::Custom => Err(Error::InvalidLayout(
                "custom index maps are not configurable here".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameRecord {
    pub frame_index: u64,
    pub endpoint: Endpoint,
    pub local_mask: TouchMask,
    pub remote_mask: TouchMask,
    pub stim_mask: TouchMask,
    /// Sequence number of the frame transmitted this frame.
    pub tx_seq: u16,
    /// Cumulative stale or duplicate remote frames discarded.
    pub rx_discards: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionTrace {
    pub layout: ElectrodeLayout,
    pub refresh_hz: u32,
    /// Frame-major: record for A then B at each frame.
    pub records: Vec<FrameRecord>,
    pub link_a_to_b: DirectionStats,
    pub link_b_to_a: DirectionStats,
    pub delivery_log: Vec<DeliveryRecord>,
}

impl SessionTrace {
    pub fn records_for(&self, endpoint: Endpoint) -> impl Iterator<Item = &FrameRecord> + '_ {
        self.records.iter().filter(move |r| r.endpoint == endpoint)
    }

    pub fn stim_sequence(&self, endpoint: Endpoint) -> Vec<TouchMask> {
        self.records_for(endpoint).map(|r| r.stim_mask).collect()
    }

    pub fn frames(&self) -> usize {
        self.records_for(Endpoint::A).count()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn link_stats(&self, from: Endpoint) -> DirectionStats {
        match from {
            Endpoint::A => self.link_a_to_b,
            Endpoint::B => self.link_b_to_a,
        }
    }

    /// Serialises the trace in the line-oriented text format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# teledge trace v1");
        let _ = writeln!(out, "# layout = {}", self.layout);
        let _ = writeln!(out, "# refresh_hz = {}", self.refresh_hz);
        let _ = writeln!(out, "# frames = {}", self.frames());
        out.push_str(
            "frame_index, endpoint_id, local_mask, remote_mask, stim_mask, tx_seq, rx_discards\n",
        );
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}, {}, {}, {}, {}, {}, {}",
                r.frame_index,
                r.endpoint,
                r.local_mask,
                r.remote_mask,
                r.stim_mask,
                r.tx_seq,
                r.rx_discards
            );
        }
        for (name, s) in [("A->B", self.link_a_to_b), ("B->A", self.link_b_to_a)] {
            let _ = writeln!(
                out,
                "# link {name} sent={} delivered={} dropped={}",
                s.sent, s.delivered, s.dropped
            );
        }
        out
    }

    pub fn delivery_log_text(&self) -> String {
        let mut out = String::from("t_us, direction, size, status\n");
        for rec in &self.delivery_log {
            let _ = writeln!(out, "{rec}");
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    /// Parses the text format. The delivery log is not part of it.
    pub fn parse(text: &str) -> Result<SessionTrace> {
        let mut layout = None;
        let mut refresh_hz = None;
        let mut declared_frames = None;
        let mut records = Vec::new();
        let mut links = [DirectionStats::default(); 2];
        let bad = |n: usize, why: &str| Error::TraceSyntax(format!("line {}: {why}", n + 1));
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with("frame_index") {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(rest) = comment.strip_prefix("link ") {
                    let (dir, counters) = rest
                        .split_once(' ')
                        .ok_or_else(|| bad(n, "bad link line"))?;
                    let slot = match dir {
                        "A->B" => 0,
                        "B->A" => 1,
                        _ => return Err(bad(n, "bad link direction")),
                    };
                    for kv in counters.split_whitespace() {
                        let (k, v) = kv
                            .split_once('=')
                            .ok_or_else(|| bad(n, "bad link counter"))?;
                        let v: u64 = v.parse().map_err(|_| bad(n, "bad link counter"))?;
                        match k {
                            "sent" => links[slot].sent = v,
                            "delivered" => links[slot].delivered = v,
                            "dropped" => links[slot].dropped = v,
                            _ => return Err(bad(n, "unknown link counter")),
                        }
                    }
                } else if let Some((k, v)) = comment.split_once('=') {
                    match k.trim() {
                        "layout" => layout = Some(v.trim().parse::<ElectrodeLayout>()?),
                        "refresh_hz" => {
                            refresh_hz = Some(
                                v.trim()
                                    .parse::<u32>()
                                    .map_err(|_| bad(n, "bad refresh_hz"))?,
                            )
                        }
                        "frames" => {
                            declared_frames = Some(
                                v.trim()
                                    .parse::<usize>()
                                    .map_err(|_| bad(n, "bad frames"))?,
                            )
                        }
                        _ => {}
                    }
                }
                continue;
            }
            let layout = layout.ok_or_else(|| bad(n, "record before layout header"))?;
            let fields = split_record(line);
            if fields.len() != 7 {
                return Err(bad(
                    n,
                    &format!("expected 7 fields, found {}", fields.len()),
                ));
            }
            let mask = |s: &str| TouchMask::parse(s, layout.total());
            records.push(FrameRecord {
                frame_index: fields[0].parse().map_err(|_| bad(n, "bad frame index"))?,
                endpoint: fields[1].parse().map_err(|e: String| bad(n, &e))?,
                local_mask: mask(fields[2])?,
                remote_mask: mask(fields[3])?,
                stim_mask: mask(fields[4])?,
                tx_seq: fields[5].parse().map_err(|_| bad(n, "bad tx_seq"))?,
                rx_discards: fields[6].parse().map_err(|_| bad(n, "bad rx_discards"))?,
            });
        }
        let layout = layout.ok_or_else(|| Error::TraceSyntax("missing layout header".into()))?;
        let trace = SessionTrace {
            layout,
            refresh_hz: refresh_hz
                .ok_or_else(|| Error::TraceSyntax("missing refresh_hz header".into()))?,
            records,
            link_a_to_b: links[0],
            link_b_to_a: links[1],
            delivery_log: Vec::new(),
        };
        if let Some(frames) = declared_frames {
            for ep in [Endpoint::A, Endpoint::B] {
                let found = trace.records_for(ep).count();
                if found != frames {
                    return Err(Error::TraceSyntax(format!(
                        "header declares {frames} frames, endpoint {ep} has {found}"
                    )));
                }
            }
        }
        Ok(trace)
    }

    pub fn read_from(path: &Path) -> Result<SessionTrace> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::TraceSyntax(format!("cannot read {}: {e}", path.display())))?;
        SessionTrace::parse(&text)
    }
}

/// Splits on commas that are not inside a `{...}` mask.
fn split_record(line: &str) -> Vec<&str> {
    let mut fields = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, c) in line.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                fields.push(line[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    fields.push(line[start..].trim());
    fields
}

/// Runs both scripts against each other for `config.duration_ms`.
pub fn run_session(
    script_a: &GestureScript,
    script_b: &GestureScript,
    config: &SessionConfig,
) -> Result<SessionTrace> {
    let layout = config.layout;
    if layout.total() > crate::wire::MASK_BITS {
        return Err(Error::InvalidLayout(format!(
            "{} electrodes do not fit a TOUCH frame",
            layout.total()
        )));
    }
    let map = config.index_map()?;
    let mut a = Engine::new_live(layout, config.params)?.with_index_map(map.clone())?;
    let mut b = Engine::new_live(layout, config.params)?.with_index_map(map)?;
    let mut link = SimLink::new(config.link).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let period = config.params.frame_period_us() as u64;
    let frames = config.frame_count();
    let mut records = Vec::with_capacity(2 * frames as usize);

    for n in 0..frames {
        let t_us = n * period;
        let t_ms = t_us as f64 / 1_000.0;
        if config.cut_at_ms.is_some_and(|cut| t_ms >= cut as f64) {
            link.set_partitioned(true);
        }
        let touch_a = script_a.mask_at(t_ms, &layout)?;
        let touch_b = script_b.mask_at(t_ms, &layout)?;
        let frame_a = a.begin_frame(touch_a, t_us as u32)?;
        let frame_b = b.begin_frame(touch_b, t_us as u32)?;
        for (from, frame) in [(Endpoint::A, frame_a), (Endpoint::B, frame_b)] {
            let bytes =
                encode(&Message::Touch(frame)).map_err(|e| Error::InvalidLayout(e.to_string()))?;
            link.send(from, bytes, t_us)
                .map_err(|e| Error::InvalidParams(e.to_string()))?;
        }
        for delivery in link.run_until(t_us) {
            let engine = match delivery.to {
                Endpoint::A => &mut a,
                Endpoint::B => &mut b,
            };
            if let Ok(Message::Touch(frame)) = decode_with_layout(&delivery.bytes, &layout) {
                engine.apply_remote_frame(&frame);
            }
        }
        for (endpoint, engine, frame) in [
            (Endpoint::A, &mut a, frame_a),
            (Endpoint::B, &mut b, frame_b),
        ] {
            engine.finish_frame()?;
            records.push(FrameRecord {
                frame_index: n,
                endpoint,
                local_mask: *engine.local_mask(),
                remote_mask: *engine.remote_mask(),
                stim_mask: *engine.stim_mask(),
                tx_seq: frame.seq.value(),
                rx_discards: engine.rx_discards(),
            });
        }
    }
    // packets still in flight at the end are delivered but never consumed
    link.flush();
    Ok(SessionTrace {
        layout,
        refresh_hz: config.params.refresh_hz,
        records,
        link_a_to_b: link.stats(Endpoint::A),
        link_b_to_a: link.stats(Endpoint::B),
        delivery_log: link.log().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gesture::Gesture;
    use crate::layout::Strip;

    fn layout() -> ElectrodeLayout {
        ElectrodeLayout::default()
    }

    fn mask(idx: &[usize]) -> TouchMask {
        TouchMask::from_indices(53, idx.iter().copied()).unwrap()
    }

    fn script(ep: Endpoint, gestures: Vec<Gesture>) -> GestureScript {
        GestureScript::new(ep, gestures, &layout()).unwrap()
    }

    #[test]
    fn idle_scripts_never_stimulate() {
        let config = SessionConfig::default().with_duration_ms(1_000);
        let trace = run_session(
            &GestureScript::idle(Endpoint::A),
            &GestureScript::idle(Endpoint::B),
            &config,
        )
        .unwrap();
        assert_eq!(trace.frames(), 60);
        assert_eq!(trace.records_for(Endpoint::B).count(), 60);
        assert!(trace.records.iter().all(|r| r.stim_mask.is_empty()));
    }

    #[test]
    fn held_grip_feels_the_trace() {
        let a = script(
            Endpoint::A,
            vec![Gesture::hold(0, 1_000, mask(&[10, 11, 12]), &layout()).unwrap()],
        );
        let b = script(
            Endpoint::B,
            vec![Gesture::trace(0, 1_000, Strip::Left, 9, 13, 10.0, &layout()).unwrap()],
        );
        let trace = run_session(&a, &b, &SessionConfig::default().with_duration_ms(1_000)).unwrap();
        let mut steps: Vec<TouchMask> = trace
            .stim_sequence(Endpoint::A)
            .into_iter()
            .filter(|m| !m.is_empty())
            .collect();
        steps.dedup();
        assert_eq!(steps, vec![mask(&[10]), mask(&[11]), mask(&[12])]);
    }

    #[test]
    fn delay_shifts_onset_by_three_frames() {
        let a = script(
            Endpoint::A,
            vec![Gesture::hold(100, 900, mask(&[5]), &layout()).unwrap()],
        );
        let b = script(
            Endpoint::B,
            vec![Gesture::hold(100, 900, mask(&[5]), &layout()).unwrap()],
        );
        let config = SessionConfig::default()
            .with_duration_ms(1_000)
            .with_link(LinkModel::ideal().with_delay_us(50_000));
        let trace = run_session(&a, &b, &config).unwrap();
        for ep in [Endpoint::A, Endpoint::B] {
            let recs: Vec<_> = trace.records_for(ep).collect();
            let touch = recs.iter().position(|r| !r.local_mask.is_empty()).unwrap();
            let stim = recs.iter().position(|r| !r.stim_mask.is_empty()).unwrap();
            // oracle: first touched frame is ceil(100 ms / 16.667 ms) = 6; a frame
            // sent at n*16667 arrives at n*16667 + 50000, just before frame n + 3
            assert_eq!(touch, 6);
            assert_eq!(stim - touch, 3);
        }
    }

    #[test]
    fn lockstep_conservation_with_loss() {
        let a = script(
            Endpoint::A,
            vec![Gesture::hold(0, 2_000, mask(&[1]), &layout()).unwrap()],
        );
        let b = script(
            Endpoint::B,
            vec![Gesture::hold(0, 2_000, mask(&[1]), &layout()).unwrap()],
        );
        let link = LinkModel {
            one_way_delay_us: 40_000,
            jitter_us: 20_000,
            loss_prob: 0.25,
            allow_reorder: true,
            seed: 17,
        };
        let trace = run_session(
            &a,
            &b,
            &SessionConfig::default()
                .with_duration_ms(2_000)
                .with_link(link),
        )
        .unwrap();
        for ep in [Endpoint::A, Endpoint::B] {
            let s = trace.link_stats(ep);
            assert_eq!(s.sent, trace.frames() as u64);
            assert_eq!(s.sent, s.delivered + s.dropped);
            assert!(s.dropped > 0);
        }
        assert!(trace.records.iter().any(|r| r.rx_discards > 0));
    }

    #[test]
    fn trace_text_round_trips() {
        let a = script(
            Endpoint::A,
            vec![Gesture::hold(0, 500, mask(&[3, 4]), &layout()).unwrap()],
        );
        let b = script(
            Endpoint::B,
            vec![Gesture::tap(0, 500, mask(&[4]), 100.0, 0.5, &layout()).unwrap()],
        );
        let trace = run_session(&a, &b, &SessionConfig::default().with_duration_ms(500)).unwrap();
        let text = trace.to_text();
        assert!(text.contains("\n0, A, {3,4}, {4}, {4}, 0, 0\n"), "{text}");
        let parsed = SessionTrace::parse(&text).unwrap();
        assert_eq!(parsed.records, trace.records);
        assert_eq!(parsed.link_a_to_b, trace.link_a_to_b);
        assert_eq!(parsed.to_text(), text);
    }

    #[test]
    fn parse_rejects_broken_traces() {
        assert!(SessionTrace::parse("").is_err());
        assert!(SessionTrace::parse("0, A, {}, {}, {}, 0, 0\n").is_err());
        let header = "# layout = 21,32\n# refresh_hz = 60\n";
        assert!(SessionTrace::parse(&format!("{header}0, A, {{}}, {{}}\n")).is_err());
        assert!(SessionTrace::parse(&format!("{header}0, C, {{}}, {{}}, {{}}, 0, 0\n")).is_err());
        assert!(SessionTrace::parse(&format!(
            "{header}# frames = 2\n0, A, {{}}, {{}}, {{}}, 0, 0\n"
        ))
        .is_err());
        assert!(SessionTrace::parse(header).unwrap().is_empty());
    }

    #[test]
    fn record_count_tracks_refresh_rate() {
        let mut config = SessionConfig::default().with_duration_ms(2_000);
        config.params.refresh_hz = 30;
        let trace = run_session(
            &GestureScript::idle(Endpoint::A),
            &GestureScript::idle(Endpoint::B),
            &config,
        )
        .unwrap();
        assert_eq!(trace.frames(), 60);
        assert_eq!(trace.refresh_hz, 30);
    }

    #[test]
    fn oversized_layouts_cannot_run() {
        let config = SessionConfig {
            layout: ElectrodeLayout::new(30, 30).unwrap(),
            ..SessionConfig::default()
        };
        let err = run_session(
            &GestureScript::idle(Endpoint::A),
            &GestureScript::idle(Endpoint::B),
            &config,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidLayout(_)));
    }
}
