//! Time-parameterised touch gestures and per-endpoint scripts.
//!
//! Script files hold one gesture per line, `start_ms duration_ms kind args`:
//!
//! ```text
//! # steady grip on the right edge, then a slow trace down the left
//! 0     2000  grip  right 30 3
//! 2000  1500  trace left 0 20 10
//! 3500  1000  tap   {5,6} 200 0.5
//! 4500  500   hold  {21,22,23}
//! 5000  500   idle
//! ```
//!
//! `trace` takes `strip start end velocity [contact_width]`, `grip` takes
//! `strip first_index [width]` and expands to a hold, `tap` takes
//! `mask period_ms duty`.

use std::fmt;

use crate::error::{Error, Result};
use crate::layout::{ElectrodeLayout, Strip};
use crate::mask::TouchMask;
use crate::sim::Endpoint;

/// Electrodes covered by a steady grip unless told otherwise.
pub const DEFAULT_GRIP_WIDTH: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum GestureKind {
    /// A finger sliding along one strip at constant speed.
    Trace {
        strip: Strip,
        start_index: usize,
        end_index: usize,
        /// Electrodes per second.
        velocity: f64,
        contact_width: usize,
    },
    /// Periodic grip and release.
    Tap {
        mask: TouchMask,
        period_ms: f64,
        duty: f64,
    },
    Hold {
        mask: TouchMask,
    },
    Idle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gesture {
    pub start_ms: u64,
    pub duration_ms: u64,
    pub kind: GestureKind,
}

impl Gesture {
    pub fn new(
        start_ms: u64,
        duration_ms: u64,
        kind: GestureKind,
        layout: &ElectrodeLayout,
    ) -> Result<Gesture> {
        let g = Gesture {
            start_ms,
            duration_ms,
            kind,
        };
        g.validate(layout)?;
        Ok(g)
    }

    pub fn trace(
        start_ms: u64,
        duration_ms: u64,
        strip: Strip,
        start_index: usize,
        end_index: usize,
        velocity: f64,
        layout: &ElectrodeLayout,
    ) -> Result<Gesture> {
        let kind = GestureKind::Trace {
            strip,
            start_index,
            end_index,
            velocity,
            contact_width: 1,
        };
        Gesture::new(start_ms, duration_ms, kind, layout)
    }

    pub fn hold(
        start_ms: u64,
        duration_ms: u64,
        mask: TouchMask,
        layout: &ElectrodeLayout,
    ) -> Result<Gesture> {
        Gesture::new(start_ms, duration_ms, GestureKind::Hold { mask }, layout)
    }

    /// Hold over `width` adjacent electrodes of `strip` starting at global
    /// index `first_index`.
    pub fn grip(
        start_ms: u64,
        duration_ms: u64,
        strip: Strip,
        first_index: usize,
        width: usize,
        layout: &ElectrodeLayout,
    ) -> Result<Gesture> {
        let range = layout.strip_range(strip);
        if width == 0 || !range.contains(&first_index) || first_index + width > range.end {
            return Err(Error::InvalidGesture(format!(
                "grip of {width} from {first_index} does not fit the {strip} strip {range:?}"
            )));
        }
        let mask = TouchMask::from_indices(layout.total(), first_index..first_index + width)?;
        Gesture::hold(start_ms, duration_ms, mask, layout)
    }

    pub fn tap(
        start_ms: u64,
        duration_ms: u64,
        mask: TouchMask,
        period_ms: f64,
        duty: f64,
        layout: &ElectrodeLayout,
    ) -> Result<Gesture> {
        Gesture::new(
            start_ms,
            duration_ms,
            GestureKind::Tap {
                mask,
                period_ms,
                duty,
            },
            layout,
        )
    }

    pub fn idle(start_ms: u64, duration_ms: u64) -> Gesture {
        Gesture {
            start_ms,
            duration_ms,
            kind: GestureKind::Idle,
        }
    }

    pub fn end_ms(&self) -> u64 {
        self.start_ms + self.duration_ms
    }

    pub fn is_active(&self, t_ms: f64) -> bool {
        t_ms >= self.start_ms as f64 && t_ms < self.end_ms() as f64
    }

    pub fn validate(&self, layout: &ElectrodeLayout) -> Result<()> {
        let check_mask = |mask: &TouchMask| {
            if mask.len() != layout.total() {
                return Err(Error::MaskSize {
                    expected: layout.total(),
                    found: mask.len(),
                });
            }
            Ok(())
        };
        match &self.kind {
            GestureKind::Trace {
                strip,
                start_index,
                end_index,
                velocity,
                contact_width,
            } => {
                let range = layout.strip_range(*strip);
                if !range.contains(start_index) || !range.contains(end_index) {
                    return Err(Error::InvalidGesture(format!(
                        "trace {start_index}->{end_index} leaves the {strip} strip {range:?}"
                    )));
                }
                if !(velocity.is_finite() && *velocity > 0.0) {
                    return Err(Error::InvalidGesture(format!(
                        "trace velocity {velocity} must be positive"
                    )));
                }
                if *contact_width == 0 {
                    return Err(Error::InvalidGesture(
                        "contact width must be at least 1".into(),
                    ));
                }
            }
            GestureKind::Tap {
                mask,
                period_ms,
                duty,
            } => {
                check_mask(mask)?;
                if !(period_ms.is_finite() && *period_ms > 0.0) {
                    return Err(Error::InvalidGesture(format!(
                        "tap period {period_ms} must be positive"
                    )));
                }
                if !(*duty > 0.0 && *duty < 1.0) {
                    return Err(Error::InvalidGesture(format!(
                        "tap duty {duty} must lie in (0, 1)"
                    )));
                }
            }
            GestureKind::Hold { mask } => check_mask(mask)?,
            GestureKind::Idle => {}
        }
        Ok(())
    }

    /// Touch produced by this gesture at absolute time `t_ms`.
    pub fn render(&self, t_ms: f64, layout: &ElectrodeLayout) -> Result<TouchMask> {
        if !self.is_active(t_ms) {
            return Err(Error::OutOfWindow {
                t_ms,
                start_ms: self.start_ms,
                end_ms: self.end_ms(),
            });
        }
        let elapsed_ms = t_ms - self.start_ms as f64;
        match &self.kind {
            GestureKind::Trace {
                strip,
                start_index,
                end_index,
                velocity,
                contact_width,
            } => {
                let (start, end) = (*start_index as f64, *end_index as f64);
                let travelled = velocity * elapsed_ms / 1_000.0;
                let position = if end >= start {
                    (start + travelled).round().min(end)
                } else {
                    (start - travelled).round().max(end)
                } as usize;
                let range = layout.strip_range(*strip);
                let lo = position
                    .saturating_sub((contact_width - 1) / 2)
                    .max(range.start);
                let hi = (position + contact_width / 2).min(range.end - 1);
                TouchMask::from_indices(layout.total(), lo..=hi)
            }
            GestureKind::Tap {
                mask,
                period_ms,
                duty,
            } => {
                let phase = (elapsed_ms % period_ms) / period_ms;
                Ok(if phase < *duty {
                    *mask
                } else {
                    TouchMask::for_layout(layout)
                })
            }
            GestureKind::Hold { mask } => Ok(*mask),
            GestureKind::Idle => Ok(TouchMask::for_layout(layout)),
        }
    }
}

impl fmt::Display for Gesture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} ", self.start_ms, self.duration_ms)?;
        match &self.kind {
            GestureKind::Trace {
                strip,
                start_index,
                end_index,
                velocity,
                contact_width,
            } => {
                write!(f, "trace {strip} {start_index} {end_index} {velocity}")?;
                if *contact_width != 1 {
                    write!(f, " {contact_width}")?;
                }
                Ok(())
            }
            GestureKind::Tap {
                mask,
                period_ms,
                duty,
            } => write!(f, "tap {mask} {period_ms} {duty}"),
            GestureKind::Hold { mask } => write!(f, "hold {mask}"),
            GestureKind::Idle => f.write_str("idle"),
        }
    }
}

/// Time-ordered, non-overlapping gestures for one endpoint. Outside every
/// gesture the endpoint touches nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureScript {
    pub endpoint: Endpoint,
    gestures: Vec<Gesture>,
}

impl GestureScript {
    pub fn new(
        endpoint: Endpoint,
        gestures: Vec<Gesture>,
        layout: &ElectrodeLayout,
    ) -> Result<Self> {
        for g in &gestures {
            g.validate(layout)?;
        }
        for pair in gestures.windows(2) {
            if pair[1].start_ms < pair[0].end_ms() {
                return Err(Error::InvalidScript(format!(
                    "gesture at {} ms starts before the previous one ends at {} ms",
                    pair[1].start_ms,
                    pair[0].end_ms()
                )));
            }
        }
        Ok(GestureScript { endpoint, gestures })
    }

    pub fn idle(endpoint: Endpoint) -> Self {
        GestureScript {
            endpoint,
            gestures: Vec::new(),
        }
    }

    pub fn gestures(&self) -> &[Gesture] {
        &self.gestures
    }

    pub fn mask_at(&self, t_ms: f64, layout: &ElectrodeLayout) -> Result<TouchMask> {
        // gestures are sorted, so the candidate is the last one starting at or before t
        let idx = self.gestures.partition_point(|g| g.start_ms as f64 <= t_ms);
        match idx.checked_sub(1).map(|i| &self.gestures[i]) {
            Some(g) if g.is_active(t_ms) => g.render(t_ms, layout),
            _ => Ok(TouchMask::for_layout(layout)),
        }
    }

    pub fn parse(text: &str, endpoint: Endpoint, layout: &ElectrodeLayout) -> Result<Self> {
        let mut gestures = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let g = parse_line(line, layout)
                .map_err(|e| Error::InvalidScript(format!("line {}: {e}", n + 1)))?;
            gestures.push(g);
        }
        GestureScript::new(endpoint, gestures, layout)
    }
}

impl fmt::Display for GestureScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.gestures {
            writeln!(f, "{g}")?;
        }
        Ok(())
    }
}

fn parse_line(line: &str, layout: &ElectrodeLayout) -> Result<Gesture> {
    // masks may contain spaces, so pull out the brace group before splitting
    let (head, mask_text, tail) = match (line.find('{'), line.find('}')) {
        (Some(open), Some(close)) if open < close => {
            (&line[..open], Some(&line[open..=close]), &line[close + 1..])
        }
        _ => (line, None, ""),
    };
    let mut words = head.split_whitespace();
    let mut field = |name: &str| {
        words
            .next()
            .map(str::to_owned)
            .ok_or_else(|| Error::InvalidScript(format!("missing {name}")))
    };
    let num = |s: &str, name: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::InvalidScript(format!("bad {name} {s:?}")))
    };
    let int = |s: &str, name: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::InvalidScript(format!("bad {name} {s:?}")))
    };
    let start_ms = int(&field("start_ms")?, "start_ms")? as u64;
    let duration_ms = int(&field("duration_ms")?, "duration_ms")? as u64;
    let kind = field("kind")?;
    let rest: Vec<String> = words
        .map(str::to_owned)
        .chain(tail.split_whitespace().map(str::to_owned))
        .collect();
    let arg = |i: usize, name: &str| {
        rest.get(i)
            .map(String::as_str)
            .ok_or_else(|| Error::InvalidScript(format!("{kind} needs {name}")))
    };
    let mask = || {
        let text = mask_text
            .ok_or_else(|| Error::InvalidScript(format!("{kind} needs a {{...}} mask")))?;
        TouchMask::parse(text, layout.total())
    };
    let max_args = |n: usize| {
        if rest.len() > n {
            return Err(Error::InvalidScript(format!(
                "too many arguments for {kind}"
            )));
        }
        Ok(())
    };
    match kind.as_str() {
        "idle" => {
            max_args(0)?;
            Ok(Gesture::idle(start_ms, duration_ms))
        }
        "hold" => {
            max_args(0)?;
            Gesture::hold(start_ms, duration_ms, mask()?, layout)
        }
        "grip" => {
            max_args(3)?;
            let strip: Strip = arg(0, "strip")?.parse()?;
            let first = int(arg(1, "first index")?, "first index")?;
            let width = match rest.get(2) {
                Some(w) => int(w, "width")?,
                None => DEFAULT_GRIP_WIDTH,
            };
            Gesture::grip(start_ms, duration_ms, strip, first, width, layout)
        }
        "tap" => {
            max_args(2)?;
            let period = num(arg(0, "period_ms")?, "period_ms")?;
            let duty = num(arg(1, "duty")?, "duty")?;
            Gesture::tap(start_ms, duration_ms, mask()?, period, duty, layout)
        }
        "trace" => {
            max_args(5)?;
            let strip: Strip = arg(0, "strip")?.parse()?;
            let kind = GestureKind::Trace {
                strip,
                start_index: int(arg(1, "start index")?, "start index")?,
                end_index: int(arg(2, "end index")?, "end index")?,
                velocity: num(arg(3, "velocity")?, "velocity")?,
                contact_width: match rest.get(4) {
                    Some(w) => int(w, "contact width")?,
                    None => 1,
                },
            };
            Gesture::new(start_ms, duration_ms, kind, layout)
        }
        other => Err(Error::InvalidScript(format!(
            "unknown gesture kind {other:?}"
        ))),
    }
}
