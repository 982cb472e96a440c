// Copyright 2026 cavmem contributors
// SPDX-License-Identifier: Apache-2.0

//! Superposition encoding and linear retrieval of (α, β) from readout overlaps.
//!
//! A write pulse α·η₀ + β·η₁ followed by the common readout pulse produces
//! A(t) = α Ã₀ + β Ã₁ + Ã_R on the readout grid, where Ã_q is the memory
//! response of state q and Ã_R the response to the readout pulse alone.
//! Projecting onto the two reference responses A_i = Ã_i + Ã_R gives a 2×2
//! linear system for (α, β).

use crate::basis::{BasisSet, GramMatrices, Pulse};
use crate::error::{Error, Result};
use crate::optimizer::ControlSolution;
use crate::solver::Trajectory;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Condition number above which retrieval logs a warning.
pub const COND_WARN: f64 = 1e8;
/// Condition number treated as singular.
pub const COND_SINGULAR: f64 = 1e14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Superposition {
    pub alpha: C64,
    pub beta: C64,
}

impl Superposition {
    pub fn new(alpha: C64, beta: C64) -> Self {
        Self { alpha, beta }
    }

    /// α = cos(ϑ/2), β = sin(ϑ/2) e^{iφ}.
    pub fn qubit(theta: f64, phi: f64) -> Self {
        Self { alpha: C64::from((0.5 * theta).cos()), beta: C64::from_polar((0.5 * theta).sin(), phi) }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.alpha.norm_sqr() + self.beta.norm_sqr()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= 1e-12
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { alpha: c * self.alpha, beta: c * self.beta }
    }
}

/// Sign branch of the rebit family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Upper,
    Lower,
}

impl Branch {
    fn sign(self) -> f64 {
        match self {
            Branch::Upper => 1.0,
            Branch::Lower => -1.0,
        }
    }
}

/// α_x = 1 − x ± i√(x(1−x)), β_x = x ∓ i√(x(1−x)). Note α + β = 1.
pub fn rebit_params(x: f64, branch: Branch) -> Result<Superposition> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Config(format!("rebit parameter must lie in [0, 1], got {x}")));
    }
    let r = branch.sign() * (x * (1.0 - x)).sqrt();
    Ok(Superposition { alpha: C64::new(1.0 - x, r), beta: C64::new(x, -r) })
}

/// Write coefficients α·ξ⁰ + β·ξ¹.
pub fn encode_coefficients(sup: &Superposition, solution: &ControlSolution) -> Vec<C64> {
    solution.xi0.iter().zip(&solution.xi1).map(|(a, b)| sup.alpha * a + sup.beta * b).collect()
}

/// The superposed write pulse on the basis' write section.
pub fn encode(sup: &Superposition, solution: &ControlSolution, basis: &BasisSet) -> Pulse {
    basis.write_pulse(&encode_coefficients(sup, solution), 1.0)
}

/// (⟨σ_x⟩, ⟨σ_y⟩, ⟨σ_z⟩) for the unnormalized state (α, β).
pub fn bloch_vector(sup: &Superposition) -> [f64; 3] {
    let ab = 2.0 * sup.alpha.conj() * sup.beta;
    [ab.re, ab.im, sup.alpha.norm_sqr() - sup.beta.norm_sqr()]
}

/// ℱ_{i,q} = ∫ Ã_q A_i* and ℱ_{i,R} = ∫ Ã_R A_i* over [τ_a, τ_c].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RetrievalMatrices {
    pub f: [[C64; 2]; 2],
    pub f_r: [C64; 2],
    /// Sample indices of τ_a and τ_c on the readout grid.
    pub interval: (usize, usize),
    pub cond: f64,
}

fn cond2(f: &[[C64; 2]; 2]) -> f64 {
    let fro: f64 = f.iter().flatten().map(|v| v.norm_sqr()).sum();
    let det = (f[0][0] * f[1][1] - f[0][1] * f[1][0]).norm_sqr();
    let disc = (fro * fro - 4.0 * det).max(0.0).sqrt();
    let smax = (0.5 * (fro + disc)).sqrt();
    let smin2 = if fro + disc > 0.0 { 2.0 * det / (fro + disc) } else { 0.0 };
    if smin2 <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin2.sqrt()
    }
}

impl RetrievalMatrices {
    pub fn new(f: [[C64; 2]; 2], f_r: [C64; 2], interval: (usize, usize)) -> Self {
        Self { f, f_r, interval, cond: cond2(&f) }
    }

    /// Assembles the matrices from the readout Gram matrix.
    pub fn from_gram(gram: &GramMatrices, basis: &BasisSet, sol: &ControlSolution) -> Result<Self> {
        let c = |zeta: &[C64], xi: &[C64]| basis.stack(zeta, xi);
        let zero_r = vec![ZERO; basis.n_read()];
        let zero_w = vec![ZERO; basis.n_write()];
        let refs = [c(&sol.zeta, &sol.xi0)?, c(&sol.zeta, &sol.xi1)?];
        let memory = [c(&zero_r, &sol.xi0)?, c(&zero_r, &sol.xi1)?];
        let readout = c(&sol.zeta, &zero_w)?;
        let g = &gram.readout;
        let form = |x: &[C64], y: &[C64]| crate::basis::form(g, x, y);
        let f = [[form(&refs[0], &memory[0]), form(&refs[0], &memory[1])], [form(&refs[1], &memory[0]), form(&refs[1], &memory[1])]];
        let f_r = [form(&refs[0], &readout), form(&refs[1], &readout)];
        Ok(Self::new(f, f_r, (gram.bins.tau_a, gram.bins.tau_c)))
    }

    /// Same matrices by direct quadrature of the response trajectories.
    pub fn from_trajectories(memory: [&Trajectory; 2], readout: &Trajectory, interval: (usize, usize)) -> Result<Self> {
        let refs = [add(memory[0], readout)?, add(memory[1], readout)?];
        let (o00, o10) = overlaps(memory[0], (&refs[0], &refs[1]), interval)?;
        let (o01, o11) = overlaps(memory[1], (&refs[0], &refs[1]), interval)?;
        let (r0, r1) = overlaps(readout, (&refs[0], &refs[1]), interval)?;
        Ok(Self::new([[o00, o01], [o10, o11]], [r0, r1], interval))
    }

    fn check(&self) -> Result<()> {
        if !self.cond.is_finite() || self.cond > COND_SINGULAR {
            return Err(Error::DegenerateRetrieval { cond: self.cond });
        }
        if self.cond > COND_WARN {
            log::warn!("retrieval matrix is ill-conditioned (cond = {:.3e})", self.cond);
        }
        Ok(())
    }
}

fn add(x: &Trajectory, y: &Trajectory) -> Result<Trajectory> {
    if x.len() != y.len() || x.dt != y.dt {
        return Err(Error::Config("trajectories are on different grids".into()));
    }
    let mut out = x.clone();
    out.add_scaled(C64::from(1.0), y);
    Ok(out)
}

/// 𝒪_i = ∫ A(t) A_i*(t) dt over the sample interval, trapezoid rule.
pub fn overlaps(response: &Trajectory, refs: (&Trajectory, &Trajectory), interval: (usize, usize)) -> Result<(C64, C64)> {
    let (i0, i1) = interval;
    for r in [refs.0, refs.1] {
        if r.len() != response.len() || (r.dt - response.dt).abs() > 1e-15 * r.dt || (r.t0 - response.t0).abs() > 1e-9 {
            return Err(Error::Config("response and reference trajectories are on different grids".into()));
        }
    }
    if i1 >= response.len() || i0 > i1 {
        return Err(Error::Config(format!("overlap interval {i0}..={i1} outside the grid")));
    }
    let o = |r: &Trajectory| crate::basis::overlap_samples(&r.samples, &response.samples, i0, i1, response.dt);
    Ok((o(refs.0), o(refs.1)))
}

/// Overlaps of a noiseless response computed from the Gram matrix.
pub fn overlaps_gram(gram: &GramMatrices, basis: &BasisSet, sol: &ControlSolution, sup: &Superposition) -> Result<[C64; 2]> {
    let c = basis.stack(&sol.zeta, &encode_coefficients(sup, sol))?;
    let r0 = basis.stack(&sol.zeta, &sol.xi0)?;
    let r1 = basis.stack(&sol.zeta, &sol.xi1)?;
    Ok([crate::basis::form(&gram.readout, &r0, &c), crate::basis::form(&gram.readout, &r1, &c)])
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub alpha_r: C64,
    pub beta_r: C64,
    pub o0: C64,
    pub o1: C64,
    pub eps_alpha: Option<f64>,
    pub eps_beta: Option<f64>,
}

impl RetrievalResult {
    /// Fills the absolute errors against the encoded input.
    pub fn with_truth(mut self, sup: &Superposition) -> Self {
        self.eps_alpha = Some((sup.alpha - self.alpha_r).norm());
        self.eps_beta = Some((sup.beta - self.beta_r).norm());
        self
    }

    pub fn retrieved(&self) -> Superposition {
        Superposition::new(self.alpha_r, self.beta_r)
    }
}

/// Solves 𝒪_i = α ℱ_{i,0} + β ℱ_{i,1} + ℱ_{i,R}.
pub fn retrieve(o: [C64; 2], mats: &RetrievalMatrices) -> Result<RetrievalResult> {
    mats.check()?;
    let f = &mats.f;
    let r0 = o[0] - mats.f_r[0];
    let r1 = o[1] - mats.f_r[1];
    let det = f[0][0] * f[1][1] - f[0][1] * f[1][0];
    let alpha_r = (r0 * f[1][1] - r1 * f[0][1]) / det;
    let beta_r = (f[0][0] * r1 - f[1][0] * r0) / det;
    Ok(RetrievalResult { alpha_r, beta_r, o0: o[0], o1: o[1], eps_alpha: None, eps_beta: None })
}

/// Dense 2×2 copy of ℱ, for callers that want nalgebra.
pub fn f_matrix(mats: &RetrievalMatrices) -> DMatrix<C64> {
    DMatrix::from_fn(2, 2, |i, j| mats.f[i][j])
}

/// The (ϑ, φ) grid used for sphere sweeps: ϑ ∈ [0, π] and φ ∈ [0, 2π], both ends included.
pub fn sphere_grid(n_theta: usize, n_phi: usize) -> Vec<Superposition> {
    let step = |n: usize, span: f64, i: usize| if n > 1 { span * i as f64 / (n - 1) as f64 } else { 0.0 };
    (0..n_theta)
        .flat_map(|i| (0..n_phi).map(move |j| (i, j)))
        .map(|(i, j)| Superposition::qubit(step(n_theta, std::f64::consts::PI, i), step(n_phi, 2.0 * std::f64::consts::PI, j)))
        .collect()
}

/// Rebit states for `n` evenly spaced x ∈ [0, 1] on both branches.
pub fn rebit_grid(n: usize) -> Vec<Superposition> {
    let xs: Vec<f64> = (0..n).map(|i| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 }).collect();
    [Branch::Upper, Branch::Lower]
        .iter()
        .flat_map(|b| xs.iter().map(move |x| rebit_params(*x, *b).expect("x in range")))
        .collect()
}

/// One row of a sweep table.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub input: Superposition,
    pub result: RetrievalResult,
}

/// Polar angles of the Bloch vector of `sup`.
pub fn bloch_angles(sup: &Superposition) -> (f64, f64) {
    let [x, y, z] = bloch_vector(sup);
    let r = (x * x + y * y + z * z).sqrt();
    let theta = if r > 0.0 { (z / r).clamp(-1.0, 1.0).acos() } else { 0.0 };
    let phi = y.atan2(x).rem_euclid(2.0 * std::f64::consts::PI);
    (theta, phi)
}

/// Noiseless retrieval of every input through the Gram route.
pub fn sweep(gram: &GramMatrices, basis: &BasisSet, sol: &ControlSolution, inputs: &[Superposition]) -> Result<Vec<SweepRow>> {
    let mats = RetrievalMatrices::from_gram(gram, basis, sol)?;
    inputs
        .iter()
        .map(|sup| {
            let o = overlaps_gram(gram, basis, sol, sup)?;
            Ok(SweepRow { input: *sup, result: retrieve(o, &mats)?.with_truth(sup) })
        })
        .collect()
}

pub const SWEEP_HEADER: &str = "theta,phi,re_alpha_in,im_alpha_in,re_beta_in,im_beta_in,re_alpha_r,im_alpha_r,re_beta_r,im_beta_r,eps_alpha,eps_beta,r_x,r_y,r_z";

pub fn write_sweep_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        let (theta, phi) = bloch_angles(&r.input);
        let [x, y, z] = bloch_vector(&r.result.retrieved());
        let (a, b) = (r.input.alpha, r.input.beta);
        let (ar, br) = (r.result.alpha_r, r.result.beta_r);
        writeln!(
            out,
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.6e},{:.6e},{:.12e},{:.12e},{:.12e}",
            theta,
            phi,
            a.re,
            a.im,
            b.re,
            b.im,
            ar.re,
            ar.im,
            br.re,
            br.im,
            r.result.eps_alpha.unwrap_or(f64::NAN),
            r.result.eps_beta.unwrap_or(f64::NAN),
            x,
            y,
            z
        )?;
    }
    Ok(())
}

pub fn save_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_sweep_csv(std::io::BufWriter::new(f), rows)
}
