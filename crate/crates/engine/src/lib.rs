//! Streaming sessions over the toy model: frame generation, drag intake,
//! persistence, scripted fixtures and a JSON-lines socket API.

pub mod config;
pub mod error;
pub mod fixtures;
pub mod protocol;
pub mod server;
pub mod session;
pub mod store;

pub use config::EngineConfig;
pub use error::{EngineError, ErrorKind, Result};
pub use session::{Command, FrameInfo, FrameOutput, ManipulationResult, Session, Status};
