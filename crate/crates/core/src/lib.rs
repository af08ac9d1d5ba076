//! Redatuming for the acoustic wave equation on a strip: interior wavefields
//! reconstructed from Neumann-to-Dirichlet data measured on a surface segment.

pub mod basis;
pub mod connecting;
pub mod control;
pub mod domain;
pub mod error;
pub mod instability;
pub mod io;
pub mod redatum;
pub mod signal;
pub mod time_ops;
pub mod wave_sim;

pub use error::{Error, Result};
