use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use teledge_cli::commands::{self, RunConfig};
use teledge_cli::serve::{self, ServeConfig};
use teledge_cli::CliError;
use teledge_core::index_map::MapMode;
use teledge_core::layout::ElectrodeLayout;
use teledge_core::session::{SessionConfig, DEFAULT_DURATION_MS};
use teledge_core::sim::{Endpoint, LinkModel};
use teledge_core::stim::StimParams;

#[derive(Parser)]
#[command(
    name = "teledge",
    version,
    about = "Electro-tactile edge tele-communication engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a paired session over a virtual link and report metrics.
    RunSim(RunSimArgs),
    /// Recompute metrics from a trace file.
    Metrics(MetricsArgs),
    /// Print hex-encoded wire frames with their parsed fields.
    CodecDump(CodecDumpArgs),
    /// Bridge two live UI clients over WebSocket.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct EngineArgs {
    /// Electrode counts per strip, `left,right`.
    #[arg(long, default_value = "21,32")]
    layout: ElectrodeLayout,
    /// Frames per second.
    #[arg(long, default_value_t = 60)]
    refresh_hz: u32,
    /// Width of one electrode pulse.
    #[arg(long = "pulse-us", default_value_t = 50)]
    pulse_us: u32,
    /// Sensing time at the start of each frame.
    #[arg(long, default_value_t = 1_000)]
    sense_window_us: u32,
    /// Initial stimulation intensity.
    #[arg(long, default_value_t = 64)]
    intensity: u8,
}

impl EngineArgs {
    fn params(&self) -> StimParams {
        StimParams {
            pulse_width_us: self.pulse_us,
            refresh_hz: self.refresh_hz,
            sense_window_us: self.sense_window_us,
            intensity: self.intensity,
        }
    }
}

#[derive(Args)]
struct RunSimArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Link configuration file (`key = value`); flags override its values.
    #[arg(long)]
    link_config: Option<PathBuf>,
    /// One-way link delay.
    #[arg(long)]
    delay_us: Option<u64>,
    /// Uniform delay jitter, plus or minus.
    #[arg(long)]
    jitter_us: Option<u64>,
    /// Packet loss probability.
    #[arg(long)]
    loss: Option<f64>,
    /// Let jitter reorder packets.
    #[arg(long)]
    reorder: Option<bool>,
    /// Link randomness seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated session length.
    #[arg(long, default_value_t = DEFAULT_DURATION_MS)]
    duration_ms: u64,
    /// Gesture script for endpoint A; idle when omitted.
    #[arg(long)]
    script_a: Option<PathBuf>,
    /// Gesture script for endpoint B; idle when omitted.
    #[arg(long)]
    script_b: Option<PathBuf>,
    /// Write the per-frame trace here.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Write the link's per-packet delivery log here.
    #[arg(long)]
    delivery_log: Option<PathBuf>,
    /// Partition the link from this time on.
    #[arg(long)]
    cut_at_ms: Option<u64>,
    /// Reverse each strip when mapping remote electrodes.
    #[arg(long)]
    mirrored: bool,
    /// Continuity path, `a-b` or `{i,j,...}`.
    #[arg(long)]
    path: Option<String>,
    /// Endpoint whose stimulation is checked against the path.
    #[arg(long)]
    receiver: Option<Endpoint>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Trace file written by `run-sim`.
    trace: PathBuf,
    /// Continuity path, `a-b` or `{i,j,...}`.
    #[arg(long)]
    path: Option<String>,
    /// Endpoint whose stimulation is checked against the path.
    #[arg(long, default_value = "A")]
    receiver: Endpoint,
}

#[derive(Args)]
struct CodecDumpArgs {
    /// Hex frames; read one per line from stdin when omitted.
    frames: Vec<String>,
    #[arg(long, default_value = "21,32")]
    layout: ElectrodeLayout,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// WebSocket port.
    #[arg(long, default_value_t = 8_765)]
    port: u16,
    /// Address to listen on.
    #[arg(long, default_value = "0.0.0.0")]
    bind: String,
}

fn run_config(args: RunSimArgs) -> Result<RunConfig, CliError> {
    let mut link = match &args.link_config {
        Some(path) => commands::load_link_config(path)?,
        None => LinkModel::ideal(),
    };
    if let Some(v) = args.delay_us {
        link.one_way_delay_us = v;
    }
    if let Some(v) = args.jitter_us {
        link.jitter_us = v;
    }
    if let Some(v) = args.loss {
        link.loss_prob = v;
    }
    if let Some(v) = args.reorder {
        link.allow_reorder = v;
    }
    if let Some(v) = args.seed {
        link.seed = v;
    }
    Ok(RunConfig {
        session: SessionConfig {
            layout: args.engine.layout,
            params: args.engine.params(),
            link,
            duration_ms: args.duration_ms,
            map_mode: if args.mirrored {
                MapMode::Mirrored
            } else {
                MapMode::Identity
            },
            cut_at_ms: args.cut_at_ms,
        },
        script_a: args.script_a,
        script_b: args.script_b,
        trace_out: args.trace_out,
        delivery_log: args.delivery_log,
        path: args.path,
        receiver: args.receiver,
    })
}

fn serve_cmd(args: ServeArgs) -> Result<(), CliError> {
    let config = ServeConfig {
        layout: args.engine.layout,
        params: args.engine.params(),
    };
    config
        .params
        .validate(&config.layout)
        .map_err(|e| CliError::Config(e.to_string()))?;
    if config.layout.total() > teledge_core::wire::MASK_BITS {
        return Err(CliError::Config(format!(
            "layout {} does not fit TOUCH frames",
            config.layout
        )));
    }
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Engine(e.to_string()))?;
    runtime.block_on(async {
        let addr = format!("{}:{}", args.bind, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Config(format!("cannot listen on {addr}: {e}")))?;
        log::info!(
            "serving on {}",
            listener
                .local_addr()
                .map_err(|e| CliError::Engine(e.to_string()))?
        );
        serve::serve(listener, config)
            .await
            .map_err(|e| CliError::Engine(e.to_string()))
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TELEDGE_LOG", "info")).init();
    let cli = Cli::parse();
    let mut stdout = io::stdout();
    let result = match cli.command {
        Command::RunSim(args) => {
            run_config(args).and_then(|config| commands::run_sim(&config, &mut stdout))
        }
        Command::Metrics(args) => commands::metrics(
            &args.trace,
            args.path.as_deref(),
            args.receiver,
            &mut stdout,
        ),
        Command::CodecDump(args) => commands::codec_dump(&args.frames, &args.layout, &mut stdout)
            .and_then(|ok| {
                if ok {
                    Ok(())
                } else {
                    Err(CliError::Engine(
                        "one or more frames failed to decode".into(),
                    ))
                }
            }),
        Command::Serve(args) => serve_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("teledge: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
