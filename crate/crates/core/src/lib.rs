//! Bidirectional electro-tactile communication through the edges of a phone.
//!
//! Two paired devices each carry two 1-D electrode strips that both sense
//! touch and deliver stimulation. Every frame each device sends its touch
//! mask to the peer and stimulates exactly the electrodes touched on both
//! devices. This crate holds the protocol engine, its binary wire format, a
//! deterministic network simulator and a gesture harness with fidelity
//! metrics.

pub mod engine;
pub mod error;
pub mod gesture;
pub mod index_map;
pub mod layout;
pub mod mask;
pub mod metrics;
pub mod seq;
pub mod session;
pub mod sim;
pub mod stim;
pub mod wire;

pub use engine::{CalibrationCommand, Disposition, Engine, Phase, STALENESS_LIMIT_FRAMES};
pub use error::{Error, Result};
pub use gesture::{Gesture, GestureKind, GestureScript};
pub use index_map::{map_remote, IndexMap, MapMode};
pub use layout::{ElectrodeLayout, Strip};
pub use mask::{mask_and, TouchMask};
pub use metrics::{continuity_metric, symmetry_divergence, Continuity, Divergence, MetricsReport};
pub use seq::Seq16;
pub use session::{run_session, FrameRecord, SessionConfig, SessionTrace};
pub use sim::{Endpoint, LinkModel, SimClock, SimLink};
pub use stim::{build_stim_plan, compute_stim_mask, Pulse, StimParams, StimPlan};
pub use wire::{decode, decode_with_layout, encode, Message, TouchFrame};
