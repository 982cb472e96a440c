// Copyright 2026 cavmem contributors
// SPDX-License-Identifier: Apache-2.0

//! Optimal control of a cavity coupled to an inhomogeneously broadened spin
//! ensemble, in the non-Markovian regime.
//!
//! The cavity amplitude obeys a Volterra equation whose memory kernel is built
//! from the spin density. Pulses are expanded in a finite basis, whose linear
//! responses are precomputed once; storage and retrieval then reduce to small
//! quadratic problems over the coefficients.

pub mod basis;
pub mod config;
pub mod decay;
pub mod error;
pub mod kernel;
pub mod manifest;
pub mod model;
pub mod noise;
pub mod optimizer;
pub mod par;
pub mod pipeline;
pub mod quad;
pub mod retrieval;
pub mod solver;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
