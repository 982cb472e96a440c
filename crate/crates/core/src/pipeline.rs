// Copyright 2026 cavmem contributors
// SPDX-License-Identifier: Apache-2.0

//! Everything derived from a [`RunConfig`] before any pulse is chosen.

use crate::basis::{build_basis, gram, BasisSet, GramMatrices};
use crate::config::RunConfig;
use crate::error::Result;
use crate::kernel::{Ensemble, KernelSet};
use crate::model::{discretize, FrequencyGrid, Section, SectionLayout, SpinDensity, SystemParams};
use crate::noise::NoiseSpec;
use crate::optimizer::{sqp::SqpOptions, ControlProblem};
use std::f64::consts::PI;

pub struct Setup {
    pub config: RunConfig,
    pub params: SystemParams,
    pub density: SpinDensity,
    pub grid: FrequencyGrid,
    pub ensemble: Ensemble,
    pub layout: SectionLayout,
    /// Write section [T₁, T₂] and readout section [T₂, T₃].
    pub sections: [Section; 2],
    pub kernels: KernelSet,
}

impl Setup {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let params = config.system_params()?;
        let density = config.density()?;
        let grid = discretize(&density, config.density.n_points, None)?;
        let ensemble = Ensemble::new(&params, &grid)?;
        let layout = config.layout()?;
        let sections = layout.sections(config.numerics.dt)?;
        let kernels = KernelSet::build(&ensemble, &sections)?;
        Ok(Self { config: config.clone(), params, density, grid, ensemble, layout, sections, kernels })
    }

    /// Fundamentals π/(T₂−T₁) and π/(T₃−T₂).
    pub fn fundamentals(&self) -> (f64, f64) {
        (PI / self.sections[0].len(), PI / self.sections[1].len())
    }

    /// Drive amplitude unit η₀ = κ.
    pub fn eta0(&self) -> f64 {
        self.params.kappa
    }

    pub fn basis(&self) -> Result<BasisSet> {
        let (wf, rf) = self.fundamentals();
        build_basis(&self.ensemble, &self.kernels, &self.sections, self.config.basis.n_write, self.config.basis.n_read, wf, rf)
    }

    pub fn gram(&self, basis: &BasisSet) -> Result<GramMatrices> {
        gram(basis, &self.layout)
    }

    pub fn control_problem<'a>(&self, basis: &'a BasisSet, gram: &'a GramMatrices) -> ControlProblem<'a> {
        let o = &self.config.optimizer;
        let k2 = self.params.kappa * self.params.kappa;
        let mut p = ControlProblem::new(basis, gram, self.layout.clone(), self.params.kappa);
        p.p_target = o.write_power * k2;
        p.readout_power = o.readout_power.map(|r| r * k2);
        p.s_target = o.s_target;
        p.delay_budget = o.delay_budget;
        p.endpoint_budget = o.endpoint_budget;
        p.separation = o.separation;
        p.restarts = o.restarts;
        p.seed = o.seed;
        p.sqp = SqpOptions { max_iter: o.max_iter, kkt_tol: o.kkt_tol, ..SqpOptions::default() };
        p
    }

    /// Noise at `relative`·η₀ with the configured stream settings.
    pub fn noise_spec(&self, relative: f64) -> NoiseSpec {
        let n = &self.config.noise;
        NoiseSpec { delta_eta: relative * self.eta0(), n_realizations: n.realizations, seed: n.seed, kind: n.kind, scope: n.scope }
    }
}
