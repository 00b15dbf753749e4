//! Offline fidelity metrics over a [`SessionTrace`].

use std::fmt;

use crate::error::{Error, Result};
use crate::mask::TouchMask;
use crate::session::SessionTrace;
use crate::sim::Endpoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Continuity {
    /// Fraction of path electrodes the receiver was stimulated on at least once.
    pub coverage: f64,
    /// Path electrodes never stimulated although electrodes before and after
    /// them on the path were.
    pub skips: usize,
}

/// How well a moving touch came through at `receiver` along `path`.
pub fn continuity_metric(
    trace: &SessionTrace,
    receiver: Endpoint,
    path: &[usize],
) -> Result<Continuity> {
    if path.is_empty() {
        return Err(Error::InvalidMetric("expected path is empty".into()));
    }
    if trace.is_empty() {
        return Err(Error::InvalidMetric("trace has no frames".into()));
    }
    let total = trace.layout.total();
    if let Some(&bad) = path.iter().find(|&&i| i >= total) {
        return Err(Error::InvalidMetric(format!(
            "path electrode {bad} outside {total} electrodes"
        )));
    }
    let mut seen = TouchMask::empty(total);
    for r in trace.records_for(receiver) {
        seen = seen.or(&r.stim_mask)?;
    }
    let hit: Vec<bool> = path.iter().map(|&i| seen.contains(i)).collect();
    let covered = hit.iter().filter(|&&h| h).count();
    let skips = match (hit.iter().position(|&h| h), hit.iter().rposition(|&h| h)) {
        (Some(first), Some(last)) => hit[first..=last].iter().filter(|&&h| !h).count(),
        _ => 0,
    };
    Ok(Continuity {
        coverage: covered as f64 / path.len() as f64,
        skips,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub mean: f64,
    pub max: usize,
    pub frames: usize,
}

/// Per-frame Hamming distance between the two endpoints' stimulation.
pub fn symmetry_divergence(trace: &SessionTrace) -> Divergence {
    let mut sum = 0usize;
    let mut max = 0usize;
    let mut frames = 0usize;
    for (a, b) in trace
        .records_for(Endpoint::A)
        .zip(trace.records_for(Endpoint::B))
    {
        // both masks come from one trace, so the widths always agree
        let d = a.stim_mask.hamming(&b.stim_mask).unwrap_or(0);
        sum += d;
        max = max.max(d);
        frames += 1;
    }
    Divergence {
        mean: if frames == 0 {
            0.0
        } else {
            sum as f64 / frames as f64
        },
        max,
        frames,
    }
}

/// Frames in which `endpoint` stimulated `electrode`.
pub fn stimulated_frames(trace: &SessionTrace, endpoint: Endpoint, electrode: usize) -> usize {
    trace
        .records_for(endpoint)
        .filter(|r| r.stim_mask.contains(electrode))
        .count()
}

/// Parses a path as `a-b` (inclusive, either direction) or `{i,j,...}`.
pub fn parse_path(spec: &str, total: usize) -> Result<Vec<usize>> {
    let spec = spec.trim();
    let path: Vec<usize> = if spec.starts_with('{') {
        let inner = spec
            .strip_prefix('{')
            .and_then(|s| s.strip_suffix('}'))
            .ok_or_else(|| Error::InvalidMetric(format!("bad path {spec:?}")))?;
        inner
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::InvalidMetric(format!("bad path electrode {s:?}")))
            })
            .collect::<Result<_>>()?
    } else {
        let (from, to) = spec.split_once('-').ok_or_else(|| {
            Error::InvalidMetric(format!("expected a-b or {{...}}, got {spec:?}"))
        })?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidMetric(format!("bad path bound {s:?}")))
        };
        let (from, to) = (parse(from)?, parse(to)?);
        if from <= to {
            (from..=to).collect()
        } else {
            (to..=from).rev().collect()
        }
    };
    if path.is_empty() {
        return Err(Error::InvalidMetric("expected path is empty".into()));
    }
    if let Some(&bad) = path.iter().find(|&&i| i >= total) {
        return Err(Error::InvalidMetric(format!(
            "path electrode {bad} outside {total} electrodes"
        )));
    }
    Ok(path)
}

/// Metrics summary printable as a table or as `key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub frames: usize,
    pub divergence: Divergence,
    pub continuity: Option<(Endpoint, Continuity)>,
    pub stim_frames: [usize; 2],
    pub rx_discards: [u64; 2],
    pub dropped: [u64; 2],
}

impl MetricsReport {
    pub fn new(
        trace: &SessionTrace,
        continuity: Option<(Endpoint, &[usize])>,
    ) -> Result<MetricsReport> {
        if trace.is_empty() {
            return Err(Error::InvalidMetric("trace has no frames".into()));
        }
        let continuity = continuity
            .map(|(ep, path)| continuity_metric(trace, ep, path).map(|c| (ep, c)))
            .transpose()?;
        let per = |ep: Endpoint| {
            let stim = trace
                .records_for(ep)
                .filter(|r| !r.stim_mask.is_empty())
                .count();
            let discards = trace.records_for(ep).last().map_or(0, |r| r.rx_discards);
            (stim, discards)
        };
        let (sa, da) = per(Endpoint::A);
        let (sb, db) = per(Endpoint::B);
        Ok(MetricsReport {
            frames: trace.frames(),
            divergence: symmetry_divergence(trace),
            continuity,
            stim_frames: [sa, sb],
            rx_discards: [da, db],
            dropped: [trace.link_a_to_b.dropped, trace.link_b_to_a.dropped],
        })
    }

    pub fn key_values(&self) -> String {
        let mut lines = vec![
            format!("frames={}", self.frames),
            format!("symmetry_mean={:.6}", self.divergence.mean),
            format!("symmetry_max={}", self.divergence.max),
        ];
        if let Some((ep, c)) = &self.continuity {
            lines.push(format!("receiver={ep}"));
            lines.push(format!("coverage={:.6}", c.coverage));
            lines.push(format!("skips={}", c.skips));
        }
        for (i, ep) in ["a", "b"].iter().enumerate() {
            lines.push(format!("stim_frames_{ep}={}", self.stim_frames[i]));
            lines.push(format!("rx_discards_{ep}={}", self.rx_discards[i]));
        }
        lines.push(format!("dropped_a_to_b={}", self.dropped[0]));
        lines.push(format!("dropped_b_to_a={}", self.dropped[1]));
        lines.join("\n") + "\n"
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24}{:>12}{:>12}", "metric", "A", "B")?;
        writeln!(f, "{:<24}{:>12}{:>12}", "frames", self.frames, self.frames)?;
        writeln!(
            f,
            "{:<24}{:>12}{:>12}",
            "stimulated frames", self.stim_frames[0], self.stim_frames[1]
        )?;
        writeln!(
            f,
            "{:<24}{:>12}{:>12}",
            "rx discards", self.rx_discards[0], self.rx_discards[1]
        )?;
        writeln!(
            f,
            "{:<24}{:>12}{:>12}",
            "link drops (sent)", self.dropped[0], self.dropped[1]
        )?;
        writeln!(
            f,
            "{:<24}{:>12.4}{:>12}",
            "symmetry mean/max", self.divergence.mean, self.divergence.max
        )?;
        if let Some((ep, c)) = &self.continuity {
            writeln!(
                f,
                "{:<24}{:>12.4}{:>12}",
                format!("coverage/skips ({ep})"),
                c.coverage,
                c.skips
            )?;
        }
        Ok(())
    }
}
