//! Self-evolving chain-of-thought curriculum training.
//!
//! Problems the model cannot solve are turned into verified reasoning paths
//! (answer-guided generation plus answer-free verification), which become a
//! step-wise truncation curriculum trained with group-relative policy
//! optimization and a binary verifiable reward. The two stages repeat until
//! pass@1 stops improving.
//!
//! Everything runs against a [`gateway::Backend`]: a remote chat-completion
//! server, recorded fixtures, or the trainable [`toy`] policy that makes the
//! whole loop runnable on a CPU.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod events;
pub mod evolution;
pub mod gateway;
pub mod seeds;
pub mod stage1;
pub mod stage2;
pub mod toy;
pub mod verifier;

pub use config::RunConfig;
pub use data::{CotTrajectory, CurriculumSample, IterationReport, Problem, RolloutGroup};
pub use error::{Error, Result};
