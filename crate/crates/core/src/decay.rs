// Copyright 2026 cavmem contributors
// SPDX-License-Identifier: Apache-2.0

//! Envelope decay of the cavity field: peak fits, free decay after a write
//! pulse, and ringdown after an initial kick.

use crate::basis::Pulse;
use crate::error::{config, Result};
use crate::kernel::{Drive, Ensemble, KernelSet};
use crate::model::Section;
use crate::noise::linear_fit;
use crate::solver::{propagate_sections, solve_volterra, Trajectory};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Exponential fit y ≈ y₀ e^{−rate·t} through the local maxima of an envelope.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    /// 1/rate.
    pub lifetime: f64,
    /// R² of the log-linear fit.
    pub r_squared: f64,
    pub peaks: usize,
}

/// Fits ln f(A) at its local maxima with t in (t_from, t_to).
pub fn peak_fit(segments: &[Trajectory], t_from: f64, t_to: f64, f: impl Fn(C64) -> f64) -> Result<DecayFit> {
    let mut t = Vec::new();
    let mut y = Vec::new();
    for tr in segments {
        let v: Vec<f64> = tr.samples.iter().map(|a| f(*a)).collect();
        for m in 1..v.len().saturating_sub(1) {
            let tm = tr.time(m);
            if tm > t_from && tm < t_to && v[m] > v[m - 1] && v[m] >= v[m + 1] && v[m] > 0.0 {
                t.push(tm);
                y.push(v[m].ln());
            }
        }
    }
    if t.len() < 3 {
        return config(format!("only {} envelope peaks in ({t_from}, {t_to}) ns", t.len()));
    }
    let (slope, _, r_squared) = linear_fit(&t, &y);
    Ok(DecayFit { rate: -slope, lifetime: -1.0 / slope, r_squared, peaks: t.len() })
}

/// Drives the first section with a single sine harmonic of normalized power
/// one in units of `eta0`, lets the system evolve freely over the remaining
/// sections and fits the |A|² peaks over `window` ns after the pulse ends.
pub fn free_decay(ens: &Ensemble, kernels: &KernelSet, sections: &[Section], eta0: f64, window: f64) -> Result<(Vec<Trajectory>, DecayFit)> {
    if sections.len() < 2 {
        return config("free decay needs a write section and at least one more");
    }
    let w = &sections[0];
    let pulse = Pulse::on_section(vec![C64::from(2f64.sqrt() * eta0)], w, eta0);
    let mut drives = vec![Drive::Sine(pulse)];
    drives.extend((1..sections.len()).map(|_| Drive::Zero));
    let traj = propagate_sections(ens, kernels, sections, &drives)?;
    let fit = peak_fit(&traj[1..], w.end, w.end + window, |a| a.norm_sqr())?;
    Ok((traj, fit))
}

/// Starts from A(0) = 1 with no drive and fits the |A| peaks in `window`.
pub fn kick_decay(ens: &Ensemble, horizon: f64, dt: f64, window: (f64, f64)) -> Result<(Trajectory, DecayFit)> {
    let sec = Section::with_step(0.0, horizon, dt)?;
    let kernels = KernelSet::build(ens, std::slice::from_ref(&sec))?;
    let b = ens.b();
    let memory: Vec<C64> = (0..=sec.steps).map(|m| (-b * sec.time(m)).exp()).collect();
    let drive = vec![C64::new(0.0, 0.0); sec.steps + 1];
    let tr = solve_volterra(kernels.for_section(&sec)?, &drive, &memory, 0.0)?;
    let fit = peak_fit(std::slice::from_ref(&tr), window.0, window.1, |a| a.norm())?;
    Ok((tr, fit))
}
