//! Spectral simulation and null-control synthesis for the linearized and
//! nonlinear Navier-Stokes-Korteweg system on the periodic torus.
//!
//! The crate is `no_std` with `alloc`. File formats, configuration and the
//! command line live in the companion `nsk` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod certify;
pub mod cascade;
pub mod dynamics;
mod error;
pub mod fft;
pub mod hum;
pub mod linalg;
pub mod nonlinear;
pub mod params;
pub mod torus;
pub mod weights;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
