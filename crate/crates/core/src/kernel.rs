// Copyright 2026 cavmem contributors
// SPDX-License-Identifier: Apache-2.0

//! Memory kernel 𝒦, drive term 𝒟 and the section-to-section memory terms ℱ, ℐ.
//!
//! All exponential sums over the spectral grid are evaluated with a power
//! recurrence z_k^m, restarted from an exact exponential at the start of every
//! fixed-size chunk of time indices. Chunks are independent, which gives the
//! parallel split, and the chunk size is a constant, so results are identical
//! with or without threads.

use crate::basis::Pulse;
use crate::error::{config, Result};
use crate::model::{FrequencyGrid, Section, SystemParams};
use crate::par;
use crate::solver::Trajectory;
use num_complex::Complex64 as C64;

const TIME_CHUNK: usize = 256;
const FREQ_CHUNK: usize = 1024;
/// Grid points with |a_k − b| below this use the direct propagator instead of
/// the split form u_k(z_k^m − e^{−bL}).
const DEGENERATE_GAP: f64 = 1e-6;

/// φ₁(z) = (e^z − 1)/z, accurate near z = 0.
pub fn phi1(z: C64) -> C64 {
    if z.norm() < 0.5 {
        let mut term = C64::new(1.0, 0.0);
        let mut sum = term;
        for n in 2..30 {
            term *= z / n as f64;
            sum += term;
            if term.norm() < 1e-18 {
                break;
            }
        }
        sum
    } else {
        (z.exp() - 1.0) / z
    }
}

/// G(L) = (e^{−aL} − e^{−bL})/(a − b), continuous through a = b where it
/// tends to −L·e^{−bL}.
pub fn propagator(a: C64, b: C64, lag: f64) -> C64 {
    let z = -(a - b) * lag;
    if z.norm() < 0.5 {
        -(-b * lag).exp() * lag * phi1(z)
    } else {
        ((-a * lag).exp() - (-b * lag).exp()) / (a - b)
    }
}

/// The discretized ensemble as seen from the cavity: rates a_k = γ + iΔ_k and
/// weights c_k = Ω² w_k ρ(ω_k).
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub params: SystemParams,
    pub grid: FrequencyGrid,
    rates: Vec<C64>,
    weights: Vec<f64>,
}

impl Ensemble {
    pub fn new(params: &SystemParams, grid: &FrequencyGrid) -> Result<Self> {
        params.validate()?;
        if grid.points.len() != grid.weights.len() || grid.points.len() != grid.rho.len() {
            return config("frequency grid arrays differ in length");
        }
        let om2 = params.coupling * params.coupling;
        let rates = grid.points.iter().map(|&w| params.spin_rate(w)).collect();
        let weights = grid.weights.iter().zip(&grid.rho).map(|(w, r)| om2 * w * r).collect();
        Ok(Self { params: params.clone(), grid: grid.clone(), rates, weights })
    }

    /// b = κ + iΔ_c.
    pub fn b(&self) -> C64 {
        self.params.cavity_rate()
    }

    pub fn rates(&self) -> &[C64] {
        &self.rates
    }

    /// c_k = Ω² w_k ρ_k.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    fn is_degenerate(&self, k: usize) -> bool {
        (self.rates[k] - self.b()).norm() < DEGENERATE_GAP
    }

    /// Σ_k amp_k G_k(L_m) for m = 0..=steps, L_m = m·dt.
    ///
    /// This is the workhorse behind the kernel table and the memory forcing.
    pub fn propagator_sums(&self, amps: &[C64], dt: f64, steps: usize) -> Vec<C64> {
        let b = self.b();
        let mut fast_rates = Vec::with_capacity(self.len());
        let mut fast_amps = Vec::with_capacity(self.len());
        let mut slow = Vec::new();
        for (k, (&a, &u)) in self.rates.iter().zip(amps).enumerate() {
            if u == C64::new(0.0, 0.0) {
                continue;
            }
            if self.is_degenerate(k) {
                slow.push((a, u));
            } else {
                fast_rates.push(a);
                fast_amps.push(u / (a - b));
            }
        }
        let sums = exp_sums(&fast_rates, &fast_amps, dt, steps);
        let total = sums[0];
        let mut out = vec![C64::new(0.0, 0.0); steps + 1];
        for (m, o) in out.iter_mut().enumerate() {
            let lag = m as f64 * dt;
            let mut v = sums[m] - (-b * lag).exp() * total;
            for &(a, u) in &slow {
                v += u * propagator(a, b, lag);
            }
            *o = v;
        }
        out
    }

    /// Transpose of [`Ensemble::propagator_sums`]: Σ_m y_m G_k(m·dt) for
    /// every grid point k.
    pub fn propagator_adjoint(&self, y: &[C64], dt: f64) -> Vec<C64> {
        let b = self.b();
        let p: C64 = y.iter().enumerate().map(|(m, v)| v * (-b * (m as f64 * dt)).exp()).sum();
        let mut out = vec![C64::new(0.0, 0.0); self.len()];
        par::for_each_chunk_mut(&mut out, FREQ_CHUNK, |c, chunk| {
            let k0 = c * FREQ_CHUNK;
            for (l, o) in chunk.iter_mut().enumerate() {
                let k = k0 + l;
                let a = self.rates[k];
                *o = if self.is_degenerate(k) {
                    y.iter().enumerate().map(|(m, v)| v * propagator(a, b, m as f64 * dt)).sum()
                } else {
                    let z = (-a * dt).exp();
                    let horner = y.iter().rev().fold(C64::new(0.0, 0.0), |acc, v| acc * z + v);
                    (horner - p) / (a - b)
                };
            }
        });
        out
    }
}

/// S_m = Σ_k u_k e^{−a_k m dt} for m = 0..=steps.
pub(crate) fn exp_sums(rates: &[C64], amps: &[C64], dt: f64, steps: usize) -> Vec<C64> {
    let n = rates.len();
    let zr: Vec<f64> = rates.iter().map(|a| (-a * dt).exp().re).collect();
    let zi: Vec<f64> = rates.iter().map(|a| (-a * dt).exp().im).collect();
    let mut out = vec![C64::new(0.0, 0.0); steps + 1];
    par::for_each_chunk_mut(&mut out, TIME_CHUNK, |c, chunk| {
        let m0 = c * TIME_CHUNK;
        let mut vr = Vec::with_capacity(n);
        let mut vi = Vec::with_capacity(n);
        for (a, u) in rates.iter().zip(amps) {
            let v = if m0 == 0 { *u } else { u * (-a * (m0 as f64 * dt)).exp() };
            vr.push(v.re);
            vi.push(v.im);
        }
        for o in chunk.iter_mut() {
            *o = sum_and_advance(&mut vr, &mut vi, &zr, &zi);
        }
    });
    out
}

/// Returns Σ v and replaces v by v·z, lane-wise so the loop vectorizes.
fn sum_and_advance(vr: &mut [f64], vi: &mut [f64], zr: &[f64], zi: &[f64]) -> C64 {
    let mut ar = [0.0f64; 4];
    let mut ai = [0.0f64; 4];
    let mut vr4 = vr.chunks_exact_mut(4);
    let mut vi4 = vi.chunks_exact_mut(4);
    let mut zr4 = zr.chunks_exact(4);
    let mut zi4 = zi.chunks_exact(4);
    for (((r, i), a), b) in (&mut vr4).zip(&mut vi4).zip(&mut zr4).zip(&mut zi4) {
        for l in 0..4 {
            let (x, y) = (r[l], i[l]);
            ar[l] += x;
            ai[l] += y;
            r[l] = x * a[l] - y * b[l];
            i[l] = x * b[l] + y * a[l];
        }
    }
    let mut tr = 0.0;
    let mut ti = 0.0;
    for (((r, i), a), b) in vr4
        .into_remainder()
        .iter_mut()
        .zip(vi4.into_remainder().iter_mut())
        .zip(zr4.remainder())
        .zip(zi4.remainder())
    {
        let (x, y) = (*r, *i);
        tr += x;
        ti += y;
        *r = x * a - y * b;
        *i = x * b + y * a;
    }
    C64::new((ar[0] + ar[1]) + (ar[2] + ar[3]) + tr, (ai[0] + ai[1]) + (ai[2] + ai[3]) + ti)
}

/// Kernel samples 𝒦(m·dt), m = 0..=M.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelTable {
    pub dt: f64,
    pub values: Vec<C64>,
}

impl KernelTable {
    pub fn horizon_steps(&self) -> usize {
        self.values.len() - 1
    }
}

/// Tabulates 𝒦(L) = Σ_k c_k G_k(L) on lags 0..=steps·dt.
pub fn kernel_table(ens: &Ensemble, dt: f64, steps: usize) -> Result<KernelTable> {
    if !(dt > 0.0) {
        return config(format!("kernel dt must be > 0, got {dt}"));
    }
    let amps: Vec<C64> = ens.weights().iter().map(|&c| C64::new(c, 0.0)).collect();
    let mut values = ens.propagator_sums(&amps, dt, steps);
    values[0] = C64::new(0.0, 0.0);
    Ok(KernelTable { dt, values })
}

/// One kernel table per distinct step size, long enough for every section.
#[derive(Clone, Debug)]
pub struct KernelSet {
    tables: Vec<KernelTable>,
}

impl KernelSet {
    pub fn build(ens: &Ensemble, sections: &[Section]) -> Result<Self> {
        let mut specs: Vec<(f64, usize)> = Vec::new();
        for s in sections {
            let dt = s.dt();
            match specs.iter_mut().find(|(d, _)| same_step(*d, dt)) {
                Some(e) => e.1 = e.1.max(s.steps),
                None => specs.push((dt, s.steps)),
            }
        }
        let tables = specs
            .iter()
            .map(|&(dt, steps)| kernel_table(ens, dt, steps))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { tables })
    }

    pub fn from_tables(tables: Vec<KernelTable>) -> Self {
        Self { tables }
    }

    /// Table matching the section's step and long enough for it.
    pub fn for_section(&self, s: &Section) -> Result<&KernelTable> {
        let dt = s.dt();
        self.tables
            .iter()
            .find(|t| same_step(t.dt, dt) && t.horizon_steps() >= s.steps)
            .ok_or_else(|| crate::Error::Config(format!("no kernel table for dt = {dt} and {} steps", s.steps)))
    }

    pub fn tables(&self) -> &[KernelTable] {
        &self.tables
    }
}

fn same_step(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Deterministic drive over one section.
#[derive(Clone, Debug, PartialEq)]
pub enum Drive {
    Zero,
    /// Constant η₀ over the whole section.
    Constant(C64),
    /// Sine series; zero outside the pulse window.
    Sine(Pulse),
    /// Samples on the section grid, linearly interpolated in between.
    Sampled(Vec<C64>),
}

impl Drive {
    /// η(t) for a time inside `section`.
    pub fn eval(&self, section: &Section, t: f64) -> C64 {
        match self {
            Drive::Zero => C64::new(0.0, 0.0),
            Drive::Constant(c) => *c,
            Drive::Sine(p) => p.eval(t),
            Drive::Sampled(v) => {
                let x = ((t - section.start) / section.dt()).clamp(0.0, section.steps as f64);
                let i = (x.floor() as usize).min(section.steps.saturating_sub(1));
                let f = x - i as f64;
                v[i] * (1.0 - f) + v[(i + 1).min(section.steps)] * f
            }
        }
    }
}

/// 𝒟(t_m) = −∫_{start}^{t_m} η(τ) e^{−b(t_m−τ)} dτ on the section samples.
///
/// Sine series and constants are integrated in closed form; sampled drives use
/// the product trapezoid rule, exact for piecewise-linear η.
pub fn driving_term(params: &SystemParams, drive: &Drive, section: &Section) -> Result<Vec<C64>> {
    let b = params.cavity_rate();
    let n = section.steps + 1;
    let zero = C64::new(0.0, 0.0);
    match drive {
        Drive::Zero => Ok(vec![zero; n]),
        Drive::Constant(eta) => Ok((0..n)
            .map(|m| {
                let lag = section.time(m) - section.start;
                -eta * lag * phi1(-b * lag)
            })
            .collect()),
        Drive::Sine(p) => Ok(sine_drive_term(b, p, section)),
        Drive::Sampled(v) => {
            if v.len() != n {
                return config(format!("sampled drive has {} samples, section needs {n}", v.len()));
            }
            let h = section.dt();
            let (w_prev, w_cur) = product_trapezoid_weights(b, h);
            let decay = (-b * h).exp();
            let mut out = vec![zero; n];
            for m in 1..n {
                out[m] = decay * out[m - 1] - (w_prev * v[m - 1] + w_cur * v[m]);
            }
            Ok(out)
        }
    }
}

/// Weights of η_{m−1} and η_m in ∫_{t_{m−1}}^{t_m} η̂(τ) e^{−b(t_m−τ)} dτ.
fn product_trapezoid_weights(b: C64, h: f64) -> (C64, C64) {
    let x = b * h;
    let (e0, e1) = if x.norm() < 0.1 {
        // E0 = Σ (−b)^n h^{n+1}/(n!(n+1)), E1 = Σ (−b)^n h^{n+2}/(n!(n+2))
        let mut e0 = C64::new(0.0, 0.0);
        let mut e1 = C64::new(0.0, 0.0);
        let mut pow = C64::new(1.0, 0.0);
        let mut fact = 1.0;
        for n in 0..20 {
            if n > 0 {
                fact *= n as f64;
                pow *= -x;
            }
            e0 += pow / (fact * (n as f64 + 1.0));
            e1 += pow / (fact * (n as f64 + 2.0));
        }
        (e0 * h, e1 * h * h)
    } else {
        let ex = (-x).exp();
        ((1.0 - ex) / b, (1.0 - ex * (1.0 + x)) / (b * b))
    };
    (e1 / h, e0 - e1 / h)
}

fn sine_drive_term(b: C64, p: &Pulse, section: &Section) -> Vec<C64> {
    let n = section.steps + 1;
    let lo = section.start.max(p.section_start);
    let hi = p.section_end;
    let origin = p.section_start;
    let i = C64::new(0.0, 1.0);
    (0..n)
        .map(|m| {
            let t = section.time(m);
            if t <= lo || hi <= lo {
                return C64::new(0.0, 0.0);
            }
            let u = t.min(hi);
            let damp = (-b * (u - lo)).exp();
            let mut acc = C64::new(0.0, 0.0);
            for (k, c) in p.coeffs.iter().enumerate() {
                if *c == C64::new(0.0, 0.0) {
                    continue;
                }
                let nu = (k + 1) as f64 * p.omega_f;
                let ep = (C64::from_polar(1.0, nu * (u - origin)) - C64::from_polar(1.0, nu * (lo - origin)) * damp)
                    / (b + i * nu);
                let em = (C64::from_polar(1.0, -nu * (u - origin)) - C64::from_polar(1.0, -nu * (lo - origin)) * damp)
                    / (b - i * nu);
                acc += c * (ep - em) / (2.0 * i);
            }
            if t > hi {
                acc *= (-b * (t - hi)).exp();
            }
            -acc
        })
        .collect()
}

/// Memory carried into a section: the boundary amplitude and ℐ(ω_k).
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryState {
    pub boundary_amp: C64,
    pub memory_integral: Vec<C64>,
}

impl MemoryState {
    /// State at T₁: no memory.
    pub fn initial(n: usize) -> Self {
        Self { boundary_amp: C64::new(0.0, 0.0), memory_integral: vec![C64::new(0.0, 0.0); n] }
    }

    pub fn is_zero(&self) -> bool {
        let z = C64::new(0.0, 0.0);
        self.boundary_amp == z && self.memory_integral.iter().all(|v| *v == z)
    }
}

/// ℐ^(n)(ω_k) = ℐ^(n−1)(ω_k) e^{−a_k ℓ} + ∫ A(τ) e^{−a_k(T_n−τ)} dτ over the
/// previous section (trapezoid on its samples), and the new boundary amplitude.
pub fn memory_handoff(ens: &Ensemble, prev: &MemoryState, traj: &Trajectory) -> Result<MemoryState> {
    if prev.memory_integral.len() != ens.len() {
        return config("memory state does not match the frequency grid");
    }
    let dt = traj.dt;
    let m_last = traj.samples.len() - 1;
    let span = dt * m_last as f64;
    let w: Vec<C64> = traj
        .samples
        .iter()
        .enumerate()
        .map(|(j, a)| if j == 0 || j == m_last { a * (0.5 * dt) } else { a * dt })
        .collect();
    let rates = ens.rates();
    let mut out = prev.memory_integral.clone();
    par::for_each_chunk_mut(&mut out, FREQ_CHUNK, |c, chunk| {
        let k0 = c * FREQ_CHUNK;
        let len = chunk.len();
        let mut zr = Vec::with_capacity(len);
        let mut zi = Vec::with_capacity(len);
        for a in &rates[k0..k0 + len] {
            let z = (-a * dt).exp();
            zr.push(z.re);
            zi.push(z.im);
        }
        let mut accr = vec![0.0; len];
        let mut acci = vec![0.0; len];
        if m_last > 0 {
            for wj in &w {
                for l in 0..len {
                    let (x, y) = (accr[l], acci[l]);
                    accr[l] = x * zr[l] - y * zi[l] + wj.re;
                    acci[l] = x * zi[l] + y * zr[l] + wj.im;
                }
            }
        }
        for (l, v) in chunk.iter_mut().enumerate() {
            let decay = (-rates[k0 + l] * span).exp();
            *v = *v * decay + C64::new(accr[l], acci[l]);
        }
    });
    Ok(MemoryState { boundary_amp: *traj.samples.last().expect("non-empty trajectory"), memory_integral: out })
}

/// ℱ(t_rel) = A_prev e^{−b t_rel} + Σ_k c_k G_k(t_rel) ℐ(ω_k).
pub fn memory_term(ens: &Ensemble, state: &MemoryState, t_rel: f64) -> C64 {
    let b = ens.b();
    let mut v = state.boundary_amp * (-b * t_rel).exp();
    for ((a, c), i) in ens.rates().iter().zip(ens.weights()).zip(&state.memory_integral) {
        v += *c * propagator(*a, b, t_rel) * i;
    }
    v
}

/// ℱ on the samples of a section with `steps` intervals of `dt`.
pub fn memory_forcing(ens: &Ensemble, state: &MemoryState, dt: f64, steps: usize) -> Vec<C64> {
    let b = ens.b();
    let amps: Vec<C64> = ens.weights().iter().zip(&state.memory_integral).map(|(c, i)| i * *c).collect();
    let mut out = if amps.iter().all(|a| *a == C64::new(0.0, 0.0)) {
        vec![C64::new(0.0, 0.0); steps + 1]
    } else {
        ens.propagator_sums(&amps, dt, steps)
    };
    out[0] = C64::new(0.0, 0.0);
    for (m, o) in out.iter_mut().enumerate() {
        *o += state.boundary_amp * (-b * (m as f64 * dt)).exp();
    }
    out
}
