// Copyright 2026 cavmem contributors
// SPDX-License-Identifier: Apache-2.0

//! White-noise drive perturbations and Monte Carlo retrieval statistics.
//!
//! A kick √dt·δη·ξ_m is added after every step and propagates through the
//! bare cavity, N_m = e^{−b dt} N_{m−1} + kick_m, while the memory terms see
//! the noisy trajectory. Since everything downstream is linear, the readout
//! overlaps respond to the kicks through fixed sensitivity vectors. These are
//! computed once by an adjoint sweep, after which each realization costs a
//! pair of dot products.

use crate::basis::{BasisSet, GramMatrices};
use crate::error::{Error, Result};
use crate::kernel::{exp_sums, Drive, Ensemble, KernelSet};
use crate::model::Section;
use crate::optimizer::ControlSolution;
use crate::par;
use crate::retrieval::{self, RetrievalMatrices, Superposition};
use crate::solver::{propagate_sections, propagate_with_kicks, volterra_adjoint, Trajectory};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Name and version of the noise stream, recorded in manifests.
pub const RNG_ALGORITHM: &str = "chacha8/splitmix64-key/v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// Circular complex Gaussian, variance ½ per quadrature.
    Complex,
    /// Real Gaussian with unit variance.
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseScope {
    All,
    WriteOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Amplitude δη, in rad/ns^{1/2}.
    pub delta_eta: f64,
    pub n_realizations: usize,
    pub seed: u64,
    pub kind: NoiseKind,
    pub scope: NoiseScope,
}

impl NoiseSpec {
    pub fn new(delta_eta: f64, n_realizations: usize, seed: u64) -> Self {
        Self { delta_eta, n_realizations, seed, kind: NoiseKind::Complex, scope: NoiseScope::All }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_eta >= 0.0 && self.delta_eta.is_finite()) {
            return Err(Error::Config(format!("noise amplitude must be >= 0, got {}", self.delta_eta)));
        }
        if self.n_realizations == 0 {
            return Err(Error::Config("need at least one noise realization".into()));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer over a pair, used to key independent streams.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-sample kicks for every section. `point` keys the stream (one per
/// sweep point), `realization` selects the sub-stream; kicks[s][0] = 0.
pub fn kick_streams(spec: &NoiseSpec, sections: &[Section], point: u64, realization: u64) -> Vec<Vec<C64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, point));
    rng.set_stream(realization);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    sections
        .iter()
        .enumerate()
        .map(|(s, sec)| {
            let amp = sec.dt().sqrt() * spec.delta_eta;
            let live = s == 0 || spec.scope == NoiseScope::All;
            let mut k = vec![ZERO; sec.steps + 1];
            for v in k.iter_mut().skip(1) {
                let x: f64 = StandardNormal.sample(&mut rng);
                let xi = match spec.kind {
                    NoiseKind::Complex => {
                        let y: f64 = StandardNormal.sample(&mut rng);
                        C64::new(h * x, h * y)
                    },
                    NoiseKind::Real => C64::new(x, 0.0),
                };
                if live {
                    *v = amp * xi;
                }
            }
            k
        })
        .collect()
}

/// One noisy end-to-end solve.
pub fn solve_noisy(
    ens: &Ensemble,
    kernels: &KernelSet,
    sections: &[Section],
    drives: &[Drive],
    spec: &NoiseSpec,
    point: u64,
    realization: u64,
) -> Result<Vec<Trajectory>> {
    spec.validate()?;
    if spec.delta_eta == 0.0 {
        return propagate_sections(ens, kernels, sections, drives);
    }
    let kicks = kick_streams(spec, sections, point, realization);
    propagate_with_kicks(ens, kernels, sections, drives, Some(&kicks))
}

fn trapezoid_weights(n: usize, dt: f64) -> Vec<f64> {
    (0..n).map(|j| if j == 0 || j + 1 == n { 0.5 * dt } else { dt }).collect()
}

/// Sensitivities r^s_m = ∂(Σ_s Σ_m q^s_m A^s_m)/∂kick^s_m of a linear
/// functional of the multi-section trajectory.
pub fn kick_sensitivities(ens: &Ensemble, kernels: &KernelSet, sections: &[Section], q: &[Vec<C64>]) -> Result<Vec<Vec<C64>>> {
    if q.len() != sections.len() || q.iter().zip(sections).any(|(v, s)| v.len() != s.steps + 1) {
        return Err(Error::Config("functional does not match the sections".into()));
    }
    let b = ens.b();
    let rates = ens.rates();
    let mut out = vec![Vec::new(); sections.len()];
    // sensitivity to the memory integral entering section s+1, and to its boundary amplitude
    let mut u_next: Option<Vec<C64>> = None;
    let mut p_next = ZERO;
    for s in (0..sections.len()).rev() {
        let sec = &sections[s];
        let dt = sec.dt();
        let m_last = sec.steps;
        let mut qe = q[s].clone();
        if let Some(u) = &u_next {
            let w = exp_sums(rates, u, dt, m_last);
            let om = trapezoid_weights(m_last + 1, dt);
            for j in 0..=m_last {
                qe[j] += om[j] * w[m_last - j];
            }
            qe[m_last] += p_next;
        }
        let y = volterra_adjoint(kernels.for_section(sec)?, &qe)?;
        let decay = (-b * dt).exp();
        let mut r = vec![ZERO; m_last + 1];
        let mut acc = ZERO;
        for m in (0..=m_last).rev() {
            acc = y[m] + decay * acc;
            r[m] = acc;
        }
        out[s] = r;
        if s > 0 {
            p_next = y.iter().enumerate().map(|(m, v)| v * (-b * (m as f64 * dt)).exp()).sum();
            let g = ens.propagator_adjoint(&y, dt);
            let len = sec.len();
            let u: Vec<C64> = g
                .iter()
                .zip(ens.weights())
                .enumerate()
                .map(|(k, (gk, c))| {
                    let carried = u_next.as_ref().map_or(ZERO, |un| un[k] * (-rates[k] * len).exp());
                    gk * *c + carried
                })
                .collect();
            u_next = Some(u);
        }
    }
    Ok(out)
}

/// Σ r·kick over all sections.
fn contract(sens: &[Vec<C64>], kicks: &[Vec<C64>]) -> C64 {
    sens.iter().zip(kicks).map(|(r, k)| r.iter().zip(k).map(|(a, b)| a * b).sum::<C64>()).sum()
}

/// Monte Carlo outcome at one input state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseStudyResult {
    pub mean_alpha: C64,
    pub mean_beta: C64,
    pub eps_alpha: f64,
    pub eps_beta: f64,
    /// Standard errors of the means, |·| of the complex sample.
    pub std_err_alpha: f64,
    pub std_err_beta: f64,
    pub per_realization: Option<Vec<(C64, C64)>>,
}

impl NoiseStudyResult {
    pub fn max_eps(&self) -> f64 {
        self.eps_alpha.max(self.eps_beta)
    }
}

fn summarize(sup: &Superposition, samples: Vec<(C64, C64)>, keep: bool) -> NoiseStudyResult {
    let n = samples.len() as f64;
    let ma: C64 = samples.iter().map(|s| s.0).sum::<C64>() / n;
    let mb: C64 = samples.iter().map(|s| s.1).sum::<C64>() / n;
    let se = |m: C64, f: &dyn Fn(&(C64, C64)) -> C64| {
        if samples.len() < 2 {
            return 0.0;
        }
        let var = samples.iter().map(|s| (f(s) - m).norm_sqr()).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    NoiseStudyResult {
        mean_alpha: ma,
        mean_beta: mb,
        eps_alpha: (sup.alpha - ma).norm(),
        eps_beta: (sup.beta - mb).norm(),
        std_err_alpha: se(ma, &|s| s.0),
        std_err_beta: se(mb, &|s| s.1),
        per_realization: keep.then_some(samples),
    }
}

/// Precomputed data for repeated noisy retrievals with one control solution.
pub struct NoiseHarness<'a> {
    pub ens: &'a Ensemble,
    pub kernels: &'a KernelSet,
    pub basis: &'a BasisSet,
    pub gram: &'a GramMatrices,
    pub solution: &'a ControlSolution,
    pub sections: [Section; 2],
    pub matrices: RetrievalMatrices,
    /// Reference responses A_i on the readout section.
    pub references: [Trajectory; 2],
    /// Overlap sensitivities to every kick, per reference.
    pub sensitivities: [Vec<Vec<C64>>; 2],
}

impl<'a> NoiseHarness<'a> {
    pub fn new(ens: &'a Ensemble, kernels: &'a KernelSet, basis: &'a BasisSet, gram: &'a GramMatrices, solution: &'a ControlSolution) -> Result<Self> {
        let sections = [basis.write_section, basis.read_section];
        let matrices = RetrievalMatrices::from_gram(gram, basis, solution)?;
        let references = [
            crate::basis::assemble_read(&solution.zeta, &solution.xi0, basis)?,
            crate::basis::assemble_read(&solution.zeta, &solution.xi1, basis)?,
        ];
        let (i0, i1) = matrices.interval;
        let functional = |r: &Trajectory| -> Vec<Vec<C64>> {
            let mut q = vec![ZERO; r.len()];
            for m in i0..=i1 {
                let w = if m == i0 || m == i1 { 0.5 * r.dt } else { r.dt };
                q[m] = w * r.samples[m].conj();
            }
            vec![vec![ZERO; sections[0].steps + 1], q]
        };
        let s0 = kick_sensitivities(ens, kernels, &sections, &functional(&references[0]))?;
        let s1 = kick_sensitivities(ens, kernels, &sections, &functional(&references[1]))?;
        Ok(Self { ens, kernels, basis, gram, solution, sections, matrices, references, sensitivities: [s0, s1] })
    }

    /// Noiseless overlaps for an input state.
    pub fn clean_overlaps(&self, sup: &Superposition) -> Result<[C64; 2]> {
        retrieval::overlaps_gram(self.gram, self.basis, self.solution, sup)
    }

    /// Overlap shifts caused by one realization's kicks.
    pub fn overlap_shift(&self, spec: &NoiseSpec, point: u64, realization: u64) -> [C64; 2] {
        if spec.delta_eta == 0.0 {
            return [ZERO; 2];
        }
        let kicks = kick_streams(spec, &self.sections, point, realization);
        [contract(&self.sensitivities[0], &kicks), contract(&self.sensitivities[1], &kicks)]
    }

    /// Monte Carlo retrieval through the precomputed sensitivities.
    pub fn monte_carlo(&self, sup: &Superposition, spec: &NoiseSpec, point: u64, keep: bool) -> Result<NoiseStudyResult> {
        spec.validate()?;
        let clean = self.clean_overlaps(sup)?;
        let samples: Vec<Result<(C64, C64)>> = par::map_range(spec.n_realizations, |r| {
            let d = self.overlap_shift(spec, point, r as u64);
            let res = retrieval::retrieve([clean[0] + d[0], clean[1] + d[1]], &self.matrices)?;
            Ok((res.alpha_r, res.beta_r))
        });
        Ok(summarize(sup, samples.into_iter().collect::<Result<_>>()?, keep))
    }

    /// Same statistics from full noisy solves of the superposed pulses.
    pub fn monte_carlo_direct(&self, sup: &Superposition, spec: &NoiseSpec, point: u64, keep: bool) -> Result<NoiseStudyResult> {
        spec.validate()?;
        let samples: Vec<Result<(C64, C64)>> = par::map_range(spec.n_realizations, |r| {
            let o = self.noisy_overlaps(sup, spec, point, r as u64)?;
            let res = retrieval::retrieve(o, &self.matrices)?;
            Ok((res.alpha_r, res.beta_r))
        });
        Ok(summarize(sup, samples.into_iter().collect::<Result<_>>()?, keep))
    }

    /// Overlaps of one noisy end-to-end solve against the references.
    pub fn noisy_overlaps(&self, sup: &Superposition, spec: &NoiseSpec, point: u64, realization: u64) -> Result<[C64; 2]> {
        let drives = [
            Drive::Sine(retrieval::encode(sup, self.solution, self.basis)),
            Drive::Sine(self.basis.read_pulse(&self.solution.zeta, 1.0)),
        ];
        let tr = solve_noisy(self.ens, self.kernels, &self.sections, &drives, spec, point, realization)?;
        let (o0, o1) = retrieval::overlaps(&tr[1], (&self.references[0], &self.references[1]), self.matrices.interval)?;
        Ok([o0, o1])
    }
}

/// Monte Carlo retrieval for one input state (stream key 0).
pub fn monte_carlo_retrieval(harness: &NoiseHarness, sup: &Superposition, spec: &NoiseSpec) -> Result<NoiseStudyResult> {
    harness.monte_carlo(sup, spec, 0, false)
}

/// Stream key of grid point `index` at amplitude `level`.
pub fn point_key(level: usize, index: usize) -> u64 {
    ((level as u64) << 32) | index as u64
}

/// Monte Carlo over a list of input states; returns one result per state.
pub fn grid_study(harness: &NoiseHarness, inputs: &[Superposition], spec: &NoiseSpec, level: usize) -> Result<Vec<NoiseStudyResult>> {
    inputs.iter().enumerate().map(|(i, sup)| harness.monte_carlo(sup, spec, point_key(level, i), false)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AmplitudePoint {
    pub relative: f64,
    pub delta_eta: f64,
    pub max_eps: f64,
    pub mean_eps: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AmplitudeSweep {
    pub points: Vec<AmplitudePoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares line y = slope·x + intercept and its R².
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

/// Maximum retrieval error over `inputs` for each relative amplitude
/// δη/η₀, with a linear fit of max error against δη.
pub fn amplitude_sweep(harness: &NoiseHarness, inputs: &[Superposition], relative: &[f64], eta0: f64, base: &NoiseSpec) -> Result<AmplitudeSweep> {
    let points = relative
        .iter()
        .enumerate()
        .map(|(level, rel)| {
            let spec = NoiseSpec { delta_eta: rel * eta0, ..*base };
            let res = grid_study(harness, inputs, &spec, level)?;
            let eps: Vec<f64> = res.iter().map(NoiseStudyResult::max_eps).collect();
            Ok(AmplitudePoint {
                relative: *rel,
                delta_eta: spec.delta_eta,
                max_eps: eps.iter().copied().fold(0.0, f64::max),
                mean_eps: eps.iter().sum::<f64>() / eps.len().max(1) as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = points.iter().map(|p| p.delta_eta).collect();
    let y: Vec<f64> = points.iter().map(|p| p.max_eps).collect();
    let (slope, intercept, r_squared) = linear_fit(&x, &y);
    Ok(AmplitudeSweep { points, slope, intercept, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelTable;
    use crate::model::{discretize, mhz, FrequencyGrid, QGaussianShape, SpinDensity, SystemParams};

    fn small() -> (SystemParams, FrequencyGrid) {
        let p = SystemParams::reference();
        let d = SpinDensity::new(QGaussianShape::from_fwhm(1.39, mhz(9.4)).unwrap(), p.omega_s, vec![], false).unwrap();
        (p, discretize(&d, 300, None).unwrap())
    }

    #[test]
    fn kicks_are_reproducible_and_keyed() {
        let secs = [Section::with_step(0.0, 5.0, 0.05).unwrap(), Section::with_step(5.0, 8.0, 0.05).unwrap()];
        let spec = NoiseSpec::new(0.1, 1, 7);
        let a = kick_streams(&spec, &secs, 3, 11);
        assert_eq!(a, kick_streams(&spec, &secs, 3, 11));
        assert_ne!(a, kick_streams(&spec, &secs, 3, 12));
        assert_ne!(a, kick_streams(&spec, &secs, 4, 11));
        assert!(a.iter().all(|k| k[0] == ZERO));
        let w = kick_streams(&NoiseSpec { scope: NoiseScope::WriteOnly, ..spec }, &secs, 3, 11);
        assert_eq!(w[0], a[0]);
        assert!(w[1].iter().all(|k| *k == ZERO));
        let r = kick_streams(&NoiseSpec { kind: NoiseKind::Real, ..spec }, &secs, 3, 11);
        assert!(r.iter().flatten().all(|k| k.im == 0.0));
    }

    #[test]
    fn zero_noise_is_bit_identical() {
        let (p, g) = small();
        let ens = Ensemble::new(&p, &g).unwrap();
        let secs = [Section::with_step(0.0, 5.0, 0.05).unwrap(), Section::with_step(5.0, 9.0, 0.05).unwrap()];
        let ks = KernelSet::build(&ens, &secs).unwrap();
        let drives = [Drive::Constant(C64::new(0.01, 0.0)), Drive::Zero];
        let clean = propagate_sections(&ens, &ks, &secs, &drives).unwrap();
        let noisy = solve_noisy(&ens, &ks, &secs, &drives, &NoiseSpec::new(0.0, 1, 1), 0, 0).unwrap();
        for (a, b) in clean.iter().zip(&noisy) {
            assert_eq!(a.samples, b.samples);
        }
    }

    #[test]
    fn bare_cavity_variance_matches_discrete_sum() {
        let mut p = SystemParams::reference();
        p.coupling = 0.0;
        let (_, g) = small();
        let ens = Ensemble::new(&p, &g).unwrap();
        let sec = Section::with_step(0.0, 20.0, 0.1).unwrap();
        let ks = KernelSet::from_tables(vec![KernelTable { dt: sec.dt(), values: vec![ZERO; sec.steps + 1] }]);
        let spec = NoiseSpec::new(0.2, 4000, 5);
        let n = spec.n_realizations;
        let finals: Vec<C64> = (0..n)
            .map(|r| solve_noisy(&ens, &ks, &[sec], &[Drive::Zero], &spec, 0, r as u64).unwrap()[0].samples[sec.steps])
            .collect();
        let var = finals.iter().map(|a| a.norm_sqr()).sum::<f64>() / n as f64;
        let t = sec.end;
        let expect: f64 = spec.delta_eta.powi(2) * sec.dt() * (1..=sec.steps).map(|m| (-2.0 * p.kappa * (t - sec.time(m))).exp()).sum::<f64>();
        // sample variance of |A|² for a circular Gaussian has relative sd 1/√n
        assert!((var - expect).abs() < 4.0 * expect / (n as f64).sqrt(), "{var} vs {expect}");
    }

    #[test]
    fn sensitivities_match_direct_perturbation() {
        let (p, g) = small();
        let ens = Ensemble::new(&p, &g).unwrap();
        let secs = [Section::with_step(0.0, 6.0, 0.05).unwrap(), Section::with_step(6.0, 10.0, 0.04).unwrap(), Section::with_step(10.0, 14.0, 0.05).unwrap()];
        let ks = KernelSet::build(&ens, &secs).unwrap();
        let drives = [Drive::Constant(C64::new(0.02, 0.01)), Drive::Zero, Drive::Constant(C64::new(0.0, 0.01))];
        // random linear functional on every section
        let spec = NoiseSpec::new(0.3, 1, 99);
        let q: Vec<Vec<C64>> = kick_streams(&spec, &secs, 1, 0);
        let sens = kick_sensitivities(&ens, &ks, &secs, &q).unwrap();
        let functional = |tr: &[Trajectory]| -> C64 { tr.iter().zip(&q).map(|(t, qs)| t.samples.iter().zip(qs).map(|(a, b)| a * b).sum::<C64>()).sum() };
        let clean = functional(&propagate_sections(&ens, &ks, &secs, &drives).unwrap());
        for r in 0..3 {
            let kicks = kick_streams(&spec, &secs, 2, r);
            let noisy = functional(&propagate_with_kicks(&ens, &ks, &secs, &drives, Some(&kicks)).unwrap());
            let predicted = contract(&sens, &kicks);
            let scale = (noisy - clean).norm();
            assert!((noisy - clean - predicted).norm() < 1e-10 * scale.max(1.0), "{} vs {}", noisy - clean, predicted);
        }
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let (s, i, r2) = linear_fit(&x, &y);
        assert!((s - 2.0).abs() < 1e-14 && (i - 1.0).abs() < 1e-14 && (r2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(NoiseSpec::new(-1.0, 1, 0).validate().is_err());
        assert!(NoiseSpec::new(1.0, 0, 0).validate().is_err());
    }
}
