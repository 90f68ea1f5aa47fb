//! Cross-subcarrier precoder design for multi-user massive MIMO-OFDM.
//!
//! Precoders for all subcarriers are optimized jointly on a single power
//! sphere. The objective is the negated weighted sum rate plus a penalty on
//! the effective channel's energy at large delays, which keeps the
//! frequency response smooth and makes downstream channel estimation easier.
//! The optimizer is a damped constrained leapfrog with adaptive step length.
//! A per-subcarrier WMMSE baseline and a pilot/QPSK link chain are included
//! for comparison.

pub mod channel;
pub mod config;
pub mod cvec;
pub mod error;
pub mod gradient;
pub mod harness;
pub mod link;
pub mod objective;
pub mod spectral;
pub mod symplectic;
pub mod wmmse;

pub use channel::{generate_channel, ChannelSet};
pub use config::{LinearSolver, MultiplierMode, PriorMode, SystemConfig};
pub use cvec::C64;
pub use error::{Error, Result};
pub use objective::{ObjectiveBreakdown, PrecoderStack, Problem};
pub use symplectic::{optimize, optimize_cspd, OptimizerState, RattleSettings, TraceRecord};
