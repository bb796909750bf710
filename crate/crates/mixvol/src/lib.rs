//! Pricing and calibration for mixtures of lognormal diffusions whose
//! volatility parameter is drawn once at inception.
//!
//! The library covers the full round trip: closed-form pricing and Greeks
//! under a mixing law ([`mixture`]), recovery of the mixing law from
//! option-implied densities via a completely monotone transform
//! ([`recovery`]), market data ingestion ([`market`]), Markovian projection
//! to a local-volatility surface ([`localvol`]), multi-period hierarchical
//! composition with coupled variance layers ([`hierarchy`]), and exact
//! Monte Carlo with reproducible per-path streams ([`mc`]).

pub mod black;
pub mod error;
pub mod hierarchy;
pub mod io;
pub mod localvol;
pub mod market;
pub mod mc;
pub mod mixture;
pub mod numerics;
pub mod recovery;
pub mod stats;

pub use error::{Error, ErrorClass, Result};
