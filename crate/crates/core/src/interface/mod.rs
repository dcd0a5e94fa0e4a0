//! Configuration, batch execution, trace export and the live session service.

pub mod batch;
pub mod config;
pub mod export;
pub mod live;
pub mod server;

pub use batch::{run_batch, BatchReport};
pub use config::SessionConfig;
pub use export::{export_trial, Channels, ExportError, ExportFormat};
pub use live::{ClientMessage, LiveSession, ServerMessage, TelemetryFrame};
pub use server::{Clock, LiveServer, ServeOptions, UnpacedClock, WallClock};
