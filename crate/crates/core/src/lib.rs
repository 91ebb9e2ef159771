//! Polynomial nonlinear state-space (PNLSS) system identification.
//!
//! The pipeline runs from excitation design ([`signals`]) through the
//! nonparametric best linear approximation and parametric linear fits
//! ([`freqid`]), the nonlinear model class ([`pnlss`]), subset-wise
//! Levenberg-Marquardt training ([`optim`]) to validation metrics ([`valid`]).
//! A forced Van der Pol oscillator ([`vdp`]) provides ground-truth data, and
//! [`ingest`] brings in externally simulated or measured records.

pub mod error;
pub mod freqid;
pub mod ingest;
pub mod optim;
pub mod pnlss;
pub mod signals;
pub mod valid;
pub mod vdp;

pub use error::{Error, Result};
