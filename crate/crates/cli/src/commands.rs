use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use teledge_core::gesture::{GestureKind, GestureScript};
use teledge_core::layout::ElectrodeLayout;
use teledge_core::metrics::{parse_path, MetricsReport};
use teledge_core::session::{run_session, SessionConfig, SessionTrace};
use teledge_core::sim::{Endpoint, LinkModel};
use teledge_core::wire;
use teledge_core::Error as CoreError;

use crate::CliError;

/// Everything `run-sim` needs, after flags and files are merged.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub session: SessionConfig,
    pub script_a: Option<PathBuf>,
    pub script_b: Option<PathBuf>,
    pub trace_out: Option<PathBuf>,
    pub delivery_log: Option<PathBuf>,
    /// Continuity path and its receiver; inferred from a trace gesture when absent.
    pub path: Option<String>,
    pub receiver: Option<Endpoint>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let s = &self.session;
        s.params.validate(&s.layout).map_err(config_err)?;
        s.link
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if s.layout.total() > wire::MASK_BITS {
            return Err(CliError::Config(format!(
                "layout {} has {} electrodes, TOUCH frames carry at most {}",
                s.layout,
                s.layout.total(),
                wire::MASK_BITS
            )));
        }
        if s.duration_ms == 0 {
            return Err(CliError::Config("duration must be positive".into()));
        }
        for path in [&self.script_a, &self.script_b].into_iter().flatten() {
            if !path.is_file() {
                return Err(CliError::Config(format!(
                    "script {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

fn config_err(e: CoreError) -> CliError {
    CliError::Config(e.to_string())
}

pub fn load_link_config(path: &Path) -> Result<LinkModel, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    LinkModel::parse_config(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn load_script(
    path: Option<&Path>,
    endpoint: Endpoint,
    layout: &ElectrodeLayout,
) -> Result<GestureScript, CliError> {
    let Some(path) = path else {
        return Ok(GestureScript::idle(endpoint));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    GestureScript::parse(&text, endpoint, layout)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Path of the first trace gesture in either script, measured at the peer.
fn inferred_path(a: &GestureScript, b: &GestureScript) -> Option<(Endpoint, Vec<usize>)> {
    [b, a].into_iter().find_map(|script| {
        script.gestures().iter().find_map(|g| match g.kind {
            GestureKind::Trace {
                start_index,
                end_index,
                ..
            } => {
                let path = if start_index <= end_index {
                    (start_index..=end_index).collect()
                } else {
                    (end_index..=start_index).rev().collect()
                };
                Some((script.endpoint.peer(), path))
            }
            _ => None,
        })
    })
}

/// Runs a simulated session; writes the trace and prints a metrics summary.
pub fn run_sim(config: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    config.validate()?;
    let layout = config.session.layout;
    let a = load_script(config.script_a.as_deref(), Endpoint::A, &layout)?;
    let b = load_script(config.script_b.as_deref(), Endpoint::B, &layout)?;
    let continuity = match &config.path {
        Some(spec) => Some((
            config.receiver.unwrap_or(Endpoint::A),
            parse_path(spec, layout.total()).map_err(config_err)?,
        )),
        None => inferred_path(&a, &b).map(|(ep, path)| (config.receiver.unwrap_or(ep), path)),
    };
    let trace =
        run_session(&a, &b, &config.session).map_err(|e| CliError::Engine(e.to_string()))?;
    if let Some(path) = &config.trace_out {
        trace
            .write_to(path)
            .map_err(|e| CliError::Engine(format!("cannot write {}: {e}", path.display())))?;
    }
    if let Some(path) = &config.delivery_log {
        std::fs::write(path, trace.delivery_log_text())
            .map_err(|e| CliError::Engine(format!("cannot write {}: {e}", path.display())))?;
    }
    let report = MetricsReport::new(
        &trace,
        continuity.as_ref().map(|(ep, p)| (*ep, p.as_slice())),
    )
    .map_err(|e| CliError::Engine(e.to_string()))?;
    write_report(&report, out)
}

fn write_report(report: &MetricsReport, out: &mut dyn Write) -> Result<(), CliError> {
    write!(out, "{report}\n{}", report.key_values()).map_err(|e| CliError::Engine(e.to_string()))
}

/// Re-analyses a trace file.
pub fn metrics(
    trace_path: &Path,
    path_spec: Option<&str>,
    receiver: Endpoint,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let trace = SessionTrace::read_from(trace_path).map_err(config_err)?;
    let path = path_spec
        .map(|spec| parse_path(spec, trace.layout.total()))
        .transpose()
        .map_err(config_err)?;
    let report =
        MetricsReport::new(&trace, path.as_deref().map(|p| (receiver, p))).map_err(config_err)?;
    write_report(&report, out)
}

/// Prints each hex-encoded frame as hex plus parsed fields. Reads one frame
/// per line from stdin when no frames are given.
pub fn codec_dump(
    frames: &[String],
    layout: &ElectrodeLayout,
    out: &mut dyn Write,
) -> Result<bool, CliError> {
    let mut inputs: Vec<String> = frames.to_vec();
    if inputs.is_empty() {
        let mut text = String::new();
        io::stdin()
            .read_to_string(&mut text)
            .map_err(|e| CliError::Config(e.to_string()))?;
        inputs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_owned)
            .collect();
    }
    let mut all_valid = true;
    for input in &inputs {
        let bytes = wire::parse_hex(input)
            .ok_or_else(|| CliError::Config(format!("not hex: {input:?}")))?;
        all_valid &= wire::decode_with_layout(&bytes, layout).is_ok();
        writeln!(out, "{}", wire::dump(&bytes, layout))
            .map_err(|e| CliError::Engine(e.to_string()))?;
    }
    Ok(all_valid)
}
