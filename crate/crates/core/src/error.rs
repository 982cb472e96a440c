// Copyright 2026 cavmem contributors
// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

/// Errors raised by the pipeline. Each variant maps onto a stable process exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty frequency grid: {0}")]
    EmptyGrid(String),

    #[error("numerical instability at step {step}: {detail}")]
    Instability { step: usize, detail: String },

    #[error("reference integrator needs refinement: {0}")]
    StepRefinement(String),

    #[error("no feasible solution: {0}")]
    Infeasible(String),

    #[error("retrieval matrix is singular (cond = {cond:.3e})")]
    DegenerateRetrieval { cond: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 config, 3 infeasible, 4 degenerate retrieval, 5 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::EmptyGrid(_) | Error::Io(_) | Error::Csv(_) => 2,
            Error::Infeasible(_) => 3,
            Error::DegenerateRetrieval { .. } => 4,
            Error::Instability { .. } | Error::StepRefinement(_) => 5,
        }
    }
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
