// Copyright 2026 cavmem contributors
// SPDX-License-Identifier: Apache-2.0

//! Volterra solver for the cavity amplitude, section propagation with memory
//! handoff, and a Runge-Kutta reference integrator over the same ensemble.

use crate::error::{config, Error, Result};
use crate::kernel::{driving_term, memory_forcing, memory_handoff, Drive, Ensemble, KernelSet, KernelTable, MemoryState};
use crate::model::{FrequencyGrid, Section, SystemParams};
use num_complex::Complex64 as C64;
use std::io::Write;
use std::path::Path;

/// Cavity amplitude on a uniform grid starting at `t0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<C64>,
}

impl Trajectory {
    pub fn zeros(section: &Section) -> Self {
        Self { t0: section.start, dt: section.dt(), samples: vec![C64::new(0.0, 0.0); section.steps + 1] }
    }

    pub fn time(&self, m: usize) -> f64 {
        self.t0 + m as f64 * self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Trapezoid ∫ f(A(t)) dt over samples `i0..=i1`.
    pub fn integrate<F: Fn(C64) -> f64>(&self, i0: usize, i1: usize, f: F) -> f64 {
        if i1 <= i0 {
            return 0.0;
        }
        let inner: f64 = self.samples[i0 + 1..i1].iter().map(|a| f(*a)).sum();
        self.dt * (inner + 0.5 * (f(self.samples[i0]) + f(self.samples[i1])))
    }

    /// Trapezoid ∫|A|² over the whole trajectory.
    pub fn energy(&self) -> f64 {
        self.integrate(0, self.len() - 1, |a| a.norm_sqr())
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    /// Adds `c·other` in place; grids must match.
    pub fn add_scaled(&mut self, c: C64, other: &Trajectory) {
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            *a += c * b;
        }
    }
}

/// Writes segmented trajectories as `t_ns,re_A,im_A,abs2_A`, dropping the
/// duplicated first sample of every later segment.
pub fn write_trajectory_csv<W: Write>(out: W, segments: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_ns", "re_A", "im_A", "abs2_A"])?;
    for (s, tr) in segments.iter().enumerate() {
        let skip = usize::from(s > 0);
        for (m, a) in tr.samples.iter().enumerate().skip(skip) {
            w.write_record([
                format!("{:.16e}", tr.time(m)),
                format!("{:.16e}", a.re),
                format!("{:.16e}", a.im),
                format!("{:.16e}", a.norm_sqr()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectory_csv(path: &Path, segments: &[Trajectory]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_trajectory_csv(std::io::BufWriter::new(f), segments)
}

/// Splits a kernel into reversed real/imaginary arrays so the convolution sum
/// for step m is a contiguous dot product.
struct ReversedKernel {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ReversedKernel {
    fn new(k: &KernelTable, steps: usize) -> Self {
        let vals = &k.values[..=steps];
        Self { re: vals.iter().rev().map(|v| v.re).collect(), im: vals.iter().rev().map(|v| v.im).collect() }
    }
}

/// Complex dot product Σ (kr + i ki)(ar + i ai) with four fixed lanes.
#[inline]
fn cdot(kr: &[f64], ki: &[f64], ar: &[f64], ai: &[f64]) -> C64 {
    let mut sr = [0.0f64; 4];
    let mut si = [0.0f64; 4];
    let n = kr.len();
    let n4 = n - n % 4;
    let (kr4, krt) = kr.split_at(n4);
    let (ki4, kit) = ki.split_at(n4);
    let (ar4, art) = ar.split_at(n4);
    let (ai4, ait) = ai.split_at(n4);
    for (((a, b), c), d) in kr4.chunks_exact(4).zip(ki4.chunks_exact(4)).zip(ar4.chunks_exact(4)).zip(ai4.chunks_exact(4)) {
        for l in 0..4 {
            sr[l] += a[l] * c[l] - b[l] * d[l];
            si[l] += a[l] * d[l] + b[l] * c[l];
        }
    }
    let mut tr = 0.0;
    let mut ti = 0.0;
    for j in 0..krt.len() {
        tr += krt[j] * art[j] - kit[j] * ait[j];
        ti += krt[j] * ait[j] + kit[j] * art[j];
    }
    C64::new((sr[0] + sr[1]) + (sr[2] + sr[3]) + tr, (si[0] + si[1]) + (si[2] + si[3]) + ti)
}

/// Forward substitution of the product-trapezoid scheme
/// A_m = dt[½𝒦_m A_0 + Σ_{j=1}^{m−1} 𝒦_{m−j} A_j] + g_m,
/// explicit because 𝒦(0) = 0.
///
/// `kicks`, when given, adds a cavity-propagated noise term
/// N_m = e^{−b·dt} N_{m−1} + kicks[m] to every sample.
pub fn volterra_forward(kernel: &KernelTable, forcing: &[C64], kicks: Option<(&[C64], C64)>) -> Result<Vec<C64>> {
    let n = forcing.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let steps = n - 1;
    if kernel.horizon_steps() < steps {
        return config(format!("kernel covers {} steps, section needs {steps}", kernel.horizon_steps()));
    }
    let kr = ReversedKernel::new(kernel, steps);
    let dt = kernel.dt;
    let mut ar = vec![0.0; n];
    let mut ai = vec![0.0; n];
    let mut noise = C64::new(0.0, 0.0);
    let a0 = forcing[0];
    ar[0] = a0.re;
    ai[0] = a0.im;
    for m in 1..n {
        // 𝒦_{m−j}, j = 1..m−1, sits at kr[n−m .. n−1)
        let conv = cdot(&kr.re[n - m..n - 1], &kr.im[n - m..n - 1], &ar[1..m], &ai[1..m]);
        let km = C64::new(kr.re[n - 1 - m], kr.im[n - 1 - m]);
        let mut a = dt * (0.5 * km * a0 + conv) + forcing[m];
        if let Some((k, decay)) = kicks {
            noise = decay * noise + k[m];
            a += noise;
        }
        if !(a.re.is_finite() && a.im.is_finite()) {
            return Err(Error::Instability { step: m, detail: "non-finite cavity amplitude".into() });
        }
        ar[m] = a.re;
        ai[m] = a.im;
    }
    Ok(ar.into_iter().zip(ai).map(|(r, i)| C64::new(r, i)).collect())
}

/// Solves one section given the drive term 𝒟 and memory term ℱ samples.
pub fn solve_volterra(kernel: &KernelTable, drive: &[C64], memory: &[C64], t0: f64) -> Result<Trajectory> {
    if drive.len() != memory.len() {
        return config(format!("drive has {} samples, memory has {}", drive.len(), memory.len()));
    }
    let g: Vec<C64> = drive.iter().zip(memory).map(|(d, f)| d + f).collect();
    Ok(Trajectory { t0, dt: kernel.dt, samples: volterra_forward(kernel, &g, None)? })
}

/// Transposed solve y = (I − W)^{−T} q for the forward scheme's matrix W,
/// used to turn a linear functional of A into weights on the forcing.
pub fn volterra_adjoint(kernel: &KernelTable, q: &[C64]) -> Result<Vec<C64>> {
    let n = q.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let steps = n - 1;
    if kernel.horizon_steps() < steps {
        return config(format!("kernel covers {} steps, section needs {steps}", kernel.horizon_steps()));
    }
    let kre: Vec<f64> = kernel.values[..=steps].iter().map(|v| v.re).collect();
    let kim: Vec<f64> = kernel.values[..=steps].iter().map(|v| v.im).collect();
    let dt = kernel.dt;
    let mut yr = vec![0.0; n];
    let mut yi = vec![0.0; n];
    for j in (0..n).rev() {
        // Σ_{m>j} 𝒦_{m−j} y_m
        let s = cdot(&kre[1..n - j], &kim[1..n - j], &yr[j + 1..], &yi[j + 1..]);
        let w = if j == 0 { 0.5 * dt } else { dt };
        let y = q[j] + w * s;
        if !(y.re.is_finite() && y.im.is_finite()) {
            return Err(Error::Instability { step: j, detail: "non-finite adjoint weight".into() });
        }
        yr[j] = y.re;
        yi[j] = y.im;
    }
    Ok(yr.into_iter().zip(yi).map(|(r, i)| C64::new(r, i)).collect())
}

fn check_sections(sections: &[Section], n_drives: usize) -> Result<()> {
    if sections.is_empty() {
        return config("at least one section is required");
    }
    if sections.len() != n_drives {
        return config(format!("{} sections but {} drives", sections.len(), n_drives));
    }
    for w in sections.windows(2) {
        if (w[0].end - w[1].start).abs() > 1e-9 * w[0].end.abs().max(1.0) {
            return config(format!("sections are not contiguous at {} / {}", w[0].end, w[1].start));
        }
    }
    Ok(())
}

/// Solves consecutive sections, carrying memory from one to the next.
///
/// `kicks[s]`, when present, are per-sample noise kicks for section `s`.
pub fn propagate_with_kicks(
    ens: &Ensemble,
    kernels: &KernelSet,
    sections: &[Section],
    drives: &[Drive],
    kicks: Option<&[Vec<C64>]>,
) -> Result<Vec<Trajectory>> {
    check_sections(sections, drives.len())?;
    let mut state = MemoryState::initial(ens.len());
    let mut out = Vec::with_capacity(sections.len());
    let b = ens.b();
    for (s, (sec, drive)) in sections.iter().zip(drives).enumerate() {
        let kernel = kernels.for_section(sec)?;
        let d = driving_term(&ens.params, drive, sec)?;
        let f = if s == 0 { vec![C64::new(0.0, 0.0); sec.steps + 1] } else { memory_forcing(ens, &state, sec.dt(), sec.steps) };
        let g: Vec<C64> = d.iter().zip(&f).map(|(x, y)| x + y).collect();
        let noise = kicks.map(|k| (k[s].as_slice(), (-b * sec.dt()).exp()));
        let samples = volterra_forward(kernel, &g, noise)?;
        let tr = Trajectory { t0: sec.start, dt: sec.dt(), samples };
        if s + 1 < sections.len() {
            state = memory_handoff(ens, &state, &tr)?;
        }
        out.push(tr);
    }
    Ok(out)
}

/// Deterministic multi-section solve.
pub fn propagate_sections(ens: &Ensemble, kernels: &KernelSet, sections: &[Section], drives: &[Drive]) -> Result<Vec<Trajectory>> {
    propagate_with_kicks(ens, kernels, sections, drives, None)
}

/// Spin amplitudes B_k with their couplings g_k = √(Ω² ρ_k w_k) and detunings.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinStateVector {
    pub amplitudes: Vec<C64>,
    pub couplings: Vec<f64>,
    /// Δ_k = ω_k − ω_p.
    pub detunings: Vec<f64>,
}

impl SpinStateVector {
    /// Ground state on a frequency grid.
    pub fn ground(params: &SystemParams, grid: &FrequencyGrid) -> Self {
        let om2 = params.coupling * params.coupling;
        Self {
            amplitudes: vec![C64::new(0.0, 0.0); grid.len()],
            couplings: grid.weights.iter().zip(&grid.rho).map(|(w, r)| (om2 * w * r).sqrt()).collect(),
            detunings: grid.points.iter().map(|w| w - params.omega_p).collect(),
        }
    }

    /// Σ|B_k|².
    pub fn energy(&self) -> f64 {
        self.amplitudes.iter().map(|b| b.norm_sqr()).sum()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    /// RK4 steps per output sample.
    pub substeps: usize,
    /// Re-run with doubled substeps and fail if the result moves by more than
    /// `tolerance` (relative max-norm).
    pub check_step: bool,
    pub tolerance: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { substeps: 4, check_step: false, tolerance: 1e-7 }
    }
}

/// Reference solution: cavity trajectories plus Σ|B_k|² at every sample.
#[derive(Clone, Debug)]
pub struct OdeSolution {
    pub trajectories: Vec<Trajectory>,
    pub spin_energy: Vec<Vec<f64>>,
    pub final_state: (C64, SpinStateVector),
}

fn rk4_sections(
    params: &SystemParams,
    spins: &SpinStateVector,
    sections: &[Section],
    drives: &[Drive],
    initial: C64,
    substeps: usize,
) -> Result<OdeSolution> {
    let b = params.cavity_rate();
    let n = spins.amplitudes.len();
    let g = &spins.couplings;
    let rates: Vec<C64> = spins.detunings.iter().map(|d| C64::new(params.gamma, *d)).collect();
    let mut a = initial;
    let mut bs = spins.amplitudes.clone();
    let mut kb = [vec![C64::new(0.0, 0.0); n], vec![C64::new(0.0, 0.0); n], vec![C64::new(0.0, 0.0); n], vec![C64::new(0.0, 0.0); n]];
    let mut tmp = vec![C64::new(0.0, 0.0); n];
    let mut trajs = Vec::new();
    let mut energies = Vec::new();

    let deriv = |a: C64, bs: &[C64], eta: C64, db: &mut [C64]| -> C64 {
        let mut sum = C64::new(0.0, 0.0);
        for k in 0..n {
            sum += g[k] * bs[k];
            db[k] = -rates[k] * bs[k] - g[k] * a;
        }
        -b * a + sum - eta
    };

    for (sec, drive) in sections.iter().zip(drives) {
        let h = sec.dt() / substeps as f64;
        let mut samples = vec![a];
        let mut en = vec![bs.iter().map(|x| x.norm_sqr()).sum::<f64>()];
        for m in 0..sec.steps {
            for s in 0..substeps {
                let t = sec.start + m as f64 * sec.dt() + s as f64 * h;
                let e0 = drive.eval(sec, t);
                let e1 = drive.eval(sec, t + 0.5 * h);
                let e2 = drive.eval(sec, (t + h).min(sec.end));
                let ka1 = deriv(a, &bs, e0, &mut kb[0]);
                for k in 0..n {
                    tmp[k] = bs[k] + 0.5 * h * kb[0][k];
                }
                let ka2 = deriv(a + 0.5 * h * ka1, &tmp, e1, &mut kb[1]);
                for k in 0..n {
                    tmp[k] = bs[k] + 0.5 * h * kb[1][k];
                }
                let ka3 = deriv(a + 0.5 * h * ka2, &tmp, e1, &mut kb[2]);
                for k in 0..n {
                    tmp[k] = bs[k] + h * kb[2][k];
                }
                let ka4 = deriv(a + h * ka3, &tmp, e2, &mut kb[3]);
                a += h / 6.0 * (ka1 + 2.0 * ka2 + 2.0 * ka3 + ka4);
                for k in 0..n {
                    bs[k] += h / 6.0 * (kb[0][k] + 2.0 * kb[1][k] + 2.0 * kb[2][k] + kb[3][k]);
                }
            }
            if !(a.re.is_finite() && a.im.is_finite()) {
                return Err(Error::Instability { step: m + 1, detail: "reference integrator diverged".into() });
            }
            samples.push(a);
            en.push(bs.iter().map(|x| x.norm_sqr()).sum());
        }
        trajs.push(Trajectory { t0: sec.start, dt: sec.dt(), samples });
        energies.push(en);
    }
    let mut fin = spins.clone();
    fin.amplitudes = bs;
    Ok(OdeSolution { trajectories: trajs, spin_energy: energies, final_state: (a, fin) })
}

/// Integrates Ȧ = −bA + Σ g_k B_k − η, Ḃ_k = −(γ + iΔ_k)B_k − g_k A with
/// fixed-step RK4 from (`initial`, `spins.amplitudes`).
pub fn solve_ode_reference(
    params: &SystemParams,
    spins: &SpinStateVector,
    sections: &[Section],
    drives: &[Drive],
    initial: C64,
    opts: OdeOptions,
) -> Result<OdeSolution> {
    check_sections(sections, drives.len())?;
    if spins.couplings.len() != spins.amplitudes.len() || spins.detunings.len() != spins.amplitudes.len() {
        return config("spin state arrays differ in length");
    }
    let sub = opts.substeps.max(1);
    let sol = rk4_sections(params, spins, sections, drives, initial, sub)?;
    if opts.check_step {
        let fine = rk4_sections(params, spins, sections, drives, initial, 2 * sub)?;
        let scale = fine.trajectories.iter().map(|t| t.max_abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let diff = sol
            .trajectories
            .iter()
            .zip(&fine.trajectories)
            .flat_map(|(x, y)| x.samples.iter().zip(&y.samples).map(|(p, q)| (p - q).norm()))
            .fold(0.0, f64::max);
        if diff / scale > opts.tolerance {
            return Err(Error::StepRefinement(format!(
                "doubling substeps changed the solution by {:.3e} (relative); use substeps >= {}",
                diff / scale,
                4 * sub
            )));
        }
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Pulse;
    use crate::model::{discretize, mhz, QGaussianShape, SpinDensity};

    fn setup(n: usize) -> (SystemParams, FrequencyGrid, Ensemble) {
        let p = SystemParams::reference();
        let d = SpinDensity::new(QGaussianShape::from_fwhm(1.39, mhz(9.4)).unwrap(), p.omega_s, vec![], false).unwrap();
        let g = discretize(&d, n, None).unwrap();
        let e = Ensemble::new(&p, &g).unwrap();
        (p, g, e)
    }

    #[test]
    fn zero_kernel_gives_drive_back() {
        let s = Section { start: 0.0, end: 5.0, steps: 100 };
        let k = KernelTable { dt: s.dt(), values: vec![C64::new(0.0, 0.0); 101] };
        let d: Vec<C64> = (0..=100).map(|m| C64::new(m as f64, -1.0)).collect();
        let z = vec![C64::new(0.0, 0.0); 101];
        let tr = solve_volterra(&k, &d, &z, 0.0).unwrap();
        assert_eq!(tr.samples, d);
    }

    #[test]
    fn instability_names_the_step() {
        let k = KernelTable { dt: 0.1, values: vec![C64::new(0.0, 0.0); 11] };
        let mut d = vec![C64::new(0.0, 0.0); 11];
        d[6] = C64::new(f64::NAN, 0.0);
        match solve_volterra(&k, &d, &d.clone(), 0.0) {
            Err(Error::Instability { step, .. }) => assert_eq!(step, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn adjoint_is_the_transpose() {
        let (_, _, e) = setup(400);
        let k = crate::kernel::kernel_table(&e, 0.05, 60).unwrap();
        let g: Vec<C64> = (0..=60).map(|m| C64::new((m as f64 * 0.2).cos(), 0.01 * m as f64)).collect();
        let q: Vec<C64> = (0..=60).map(|m| C64::new(0.3, (m as f64).sin())).collect();
        let a = volterra_forward(&k, &g, None).unwrap();
        let y = volterra_adjoint(&k, &q).unwrap();
        let lhs: C64 = q.iter().zip(&a).map(|(x, y)| x * y).sum();
        let rhs: C64 = y.iter().zip(&g).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).norm() < 1e-12 * lhs.norm());
    }

    #[test]
    fn bare_cavity_reference() {
        let mut p = SystemParams::reference();
        p.coupling = 0.0;
        p.omega_c += 0.05;
        let g = FrequencyGrid { points: vec![p.omega_s], weights: vec![1.0], rho: vec![1.0] };
        let spins = SpinStateVector::ground(&p, &g);
        let s = Section { start: 0.0, end: 20.0, steps: 200 };
        let sol = solve_ode_reference(&p, &spins, &[s], &[Drive::Zero], C64::new(1.0, 0.0), OdeOptions::default()).unwrap();
        for (m, a) in sol.trajectories[0].samples.iter().enumerate() {
            let expect = (-p.cavity_rate() * s.time(m)).exp();
            assert!((a - expect).norm() < 1e-12);
        }
        let quiet = solve_ode_reference(&p, &spins, &[s], &[Drive::Zero], C64::new(0.0, 0.0), OdeOptions::default()).unwrap();
        assert!(quiet.trajectories[0].samples.iter().all(|a| a.norm() == 0.0));
    }

    #[test]
    fn reference_energy_balance() {
        let (p, g, _) = setup(400);
        let spins = SpinStateVector::ground(&p, &g);
        let s = Section { start: 0.0, end: 30.0, steps: 600 };
        let pulse = Pulse::new(vec![C64::new(1.0, 0.3), C64::new(-0.4, 0.2)], std::f64::consts::PI / 30.0, 0.0, 30.0, p.kappa);
        let drive = Drive::Sine(pulse.clone());
        let sol = solve_ode_reference(&p, &spins, &[s], &[drive], C64::new(0.0, 0.0), OdeOptions { substeps: 8, ..Default::default() }).unwrap();
        let a = &sol.trajectories[0].samples;
        let e = &sol.spin_energy[0];
        let dt = s.dt();
        for m in (10..590).step_by(37) {
            let total = |i: usize| a[i].norm_sqr() + e[i];
            let lhs = (8.0 * (total(m + 1) - total(m - 1)) - (total(m + 2) - total(m - 2))) / (12.0 * dt);
            let eta = pulse.eval(s.time(m));
            let rhs = -2.0 * p.kappa * a[m].norm_sqr() - 2.0 * (eta.conj() * a[m]).re;
            assert!((lhs - rhs).abs() < 1e-4 * (rhs.abs() + 1e-3), "m = {m}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn coarse_reference_steps_are_flagged() {
        let (p, g, _) = setup(200);
        let spins = SpinStateVector::ground(&p, &g);
        let s = Section { start: 0.0, end: 50.0, steps: 5 };
        let r = solve_ode_reference(&p, &spins, &[s], &[Drive::Constant(C64::new(p.kappa, 0.0))], C64::new(0.0, 0.0), OdeOptions { substeps: 1, check_step: true, tolerance: 1e-9 });
        assert!(matches!(r, Err(Error::StepRefinement(_))));
    }

    #[test]
    fn zero_drive_gives_zero_trajectory() {
        let (_, _, e) = setup(400);
        let secs = [Section { start: 0.0, end: 2.0, steps: 40 }, Section { start: 2.0, end: 5.0, steps: 60 }];
        let ks = KernelSet::build(&e, &secs).unwrap();
        let out = propagate_sections(&e, &ks, &secs, &[Drive::Zero, Drive::Zero]).unwrap();
        assert!(out.iter().all(|t| t.samples.iter().all(|a| a.norm() == 0.0)));
    }

    #[test]
    fn section_mismatch_is_config_error() {
        let (_, _, e) = setup(200);
        let secs = [Section { start: 0.0, end: 2.0, steps: 40 }];
        let ks = KernelSet::build(&e, &secs).unwrap();
        assert!(matches!(propagate_sections(&e, &ks, &secs, &[Drive::Zero, Drive::Zero]), Err(Error::Config(_))));
    }

    #[test]
    fn csv_has_header_and_full_precision() {
        let t = Trajectory { t0: 0.0, dt: 0.5, samples: vec![C64::new(1.0 / 3.0, -0.25), C64::new(0.0, 1.0)] };
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &[t]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("t_ns,re_A,im_A,abs2_A"));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[1].parse::<f64>().unwrap(), 1.0 / 3.0);
    }
}
