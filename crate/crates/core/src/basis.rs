// Copyright 2026 cavmem contributors
// SPDX-License-Identifier: Apache-2.0

//! Sine-series pulses, per-harmonic basis responses and their overlap (Gram)
//! matrices.
//!
//! Readout-side quantities are expanded in the family
//! φ = [a^R_1 … a^R_{N₂}, ψ_1 … ψ_{N₁}], so the readout response of state i is
//! Σ_p c_{i,p} φ_p with c_i = [ζ; ξ^i].

use crate::error::{config, Error, Result};
use crate::kernel::{driving_term, memory_forcing, memory_handoff, Drive, Ensemble, KernelSet, MemoryState};
use crate::model::{Section, SectionLayout};
use crate::par;
use crate::solver::{volterra_forward, Trajectory};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Sine-series drive η(t) = Σ_k c_k sin(k ω_f (t − section_start)) on
/// [section_start, section_end], zero elsewhere. Coefficients are absolute;
/// `amp_scale` is the unit used for normalized tables.
#[derive(Clone, Debug, PartialEq)]
pub struct Pulse {
    pub coeffs: Vec<C64>,
    pub omega_f: f64,
    pub section_start: f64,
    pub section_end: f64,
    pub amp_scale: f64,
}

impl Pulse {
    pub fn new(coeffs: Vec<C64>, omega_f: f64, section_start: f64, section_end: f64, amp_scale: f64) -> Self {
        Self { coeffs, omega_f, section_start, section_end, amp_scale }
    }

    /// Pulse filling `section` with fundamental π/len.
    pub fn on_section(coeffs: Vec<C64>, section: &Section, amp_scale: f64) -> Self {
        Self::new(coeffs, std::f64::consts::PI / section.len(), section.start, section.end, amp_scale)
    }

    pub fn eval(&self, t: f64) -> C64 {
        if t < self.section_start || t > self.section_end {
            return C64::new(0.0, 0.0);
        }
        let x = self.omega_f * (t - self.section_start);
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * ((k + 1) as f64 * x).sin())
            .sum()
    }

    /// (1/2)Σ|c_k/amp_scale|².
    pub fn normalized_power(&self) -> f64 {
        half_power(&self.coeffs) / (self.amp_scale * self.amp_scale)
    }
}

/// η(t) of a pulse; zero outside its section.
pub fn pulse_eval(pulse: &Pulse, t: f64) -> C64 {
    pulse.eval(t)
}

/// (1/2)Σ|c|².
pub fn half_power(c: &[C64]) -> f64 {
    0.5 * c.iter().map(|v| v.norm_sqr()).sum::<f64>()
}

/// Unit-coefficient responses: a^W_k on the write section, a^R_l and ψ_k on
/// the readout section.
#[derive(Clone, Debug)]
pub struct BasisSet {
    pub write_section: Section,
    pub read_section: Section,
    pub omega_f_write: f64,
    pub omega_f_read: f64,
    pub write_responses: Vec<Trajectory>,
    pub read_responses: Vec<Trajectory>,
    pub memory_responses: Vec<Trajectory>,
}

impl BasisSet {
    pub fn n_write(&self) -> usize {
        self.write_responses.len()
    }

    pub fn n_read(&self) -> usize {
        self.read_responses.len()
    }

    /// Readout family φ = [a^R…, ψ…].
    pub fn family(&self) -> impl Iterator<Item = &Trajectory> {
        self.read_responses.iter().chain(&self.memory_responses)
    }

    pub fn family_len(&self) -> usize {
        self.n_read() + self.n_write()
    }

    /// Stacks [ζ; ξ] into a family coefficient vector.
    pub fn stack(&self, zeta: &[C64], xi: &[C64]) -> Result<Vec<C64>> {
        self.check_lengths(xi, Some(zeta))?;
        Ok(zeta.iter().chain(xi).copied().collect())
    }

    fn check_lengths(&self, xi: &[C64], zeta: Option<&[C64]>) -> Result<()> {
        if xi.len() != self.n_write() {
            return config(format!("expected {} write coefficients, got {}", self.n_write(), xi.len()));
        }
        if let Some(z) = zeta {
            if z.len() != self.n_read() {
                return config(format!("expected {} readout coefficients, got {}", self.n_read(), z.len()));
            }
        }
        Ok(())
    }

    pub fn write_pulse(&self, xi: &[C64], amp_scale: f64) -> Pulse {
        Pulse::new(xi.to_vec(), self.omega_f_write, self.write_section.start, self.write_section.end, amp_scale)
    }

    pub fn read_pulse(&self, zeta: &[C64], amp_scale: f64) -> Pulse {
        Pulse::new(zeta.to_vec(), self.omega_f_read, self.read_section.start, self.read_section.end, amp_scale)
    }
}

fn unit_pulse(n: usize, k: usize, omega_f: f64, s: &Section) -> Pulse {
    let mut c = vec![C64::new(0.0, 0.0); n];
    c[k] = C64::new(1.0, 0.0);
    Pulse::new(c, omega_f, s.start, s.end, 1.0)
}

/// Solves every unit-harmonic response; independent solves run in parallel.
pub fn build_basis(
    ens: &Ensemble,
    kernels: &KernelSet,
    sections: &[Section; 2],
    n1: usize,
    n2: usize,
    omega_f_write: f64,
    omega_f_read: f64,
) -> Result<BasisSet> {
    if n1 == 0 || n2 == 0 {
        return config("basis sizes must be >= 1");
    }
    let [ws, rs] = *sections;
    let wk = kernels.for_section(&ws)?;
    let rk = kernels.for_section(&rs)?;
    let write: Vec<Trajectory> = par::map_range(n1, |k| -> Result<Trajectory> {
        let d = driving_term(&ens.params, &Drive::Sine(unit_pulse(n1, k, omega_f_write, &ws)), &ws)?;
        Ok(Trajectory { t0: ws.start, dt: ws.dt(), samples: volterra_forward(wk, &d, None)? })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let read_and_memory: Vec<Trajectory> = par::map_range(n2 + n1, |j| -> Result<Trajectory> {
        let g = if j < n2 {
            driving_term(&ens.params, &Drive::Sine(unit_pulse(n2, j, omega_f_read, &rs)), &rs)?
        } else {
            let state = memory_handoff(ens, &MemoryState::initial(ens.len()), &write[j - n2])?;
            memory_forcing(ens, &state, rs.dt(), rs.steps)
        };
        Ok(Trajectory { t0: rs.start, dt: rs.dt(), samples: volterra_forward(rk, &g, None)? })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mut read = read_and_memory;
    let memory = read.split_off(n2);
    Ok(BasisSet {
        write_section: ws,
        read_section: rs,
        omega_f_write,
        omega_f_read,
        write_responses: write,
        read_responses: read,
        memory_responses: memory,
    })
}

fn combine<'a>(coeffs: impl Iterator<Item = (&'a C64, &'a Trajectory)>, template: &Trajectory) -> Trajectory {
    let mut out = Trajectory { t0: template.t0, dt: template.dt, samples: vec![C64::new(0.0, 0.0); template.len()] };
    for (c, tr) in coeffs {
        if *c != C64::new(0.0, 0.0) {
            out.add_scaled(*c, tr);
        }
    }
    out
}

/// A^(W)(t) = Σ_k ξ_k a^W_k(t).
pub fn assemble_write(xi: &[C64], basis: &BasisSet) -> Result<Trajectory> {
    basis.check_lengths(xi, None)?;
    Ok(combine(xi.iter().zip(&basis.write_responses), &basis.write_responses[0]))
}

/// A^(R)(t) = Σ_l ζ_l a^R_l(t) + Σ_k ξ_k ψ_k(t).
pub fn assemble_read(zeta: &[C64], xi: &[C64], basis: &BasisSet) -> Result<Trajectory> {
    basis.check_lengths(xi, Some(zeta))?;
    let c = basis.stack(zeta, xi)?;
    Ok(combine(c.iter().zip(basis.family()), &basis.read_responses[0]))
}

/// Sample indices of the readout bins on the readout grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinIndices {
    pub start: usize,
    pub tau_a: usize,
    pub tau_b: usize,
    pub tau_c: usize,
}

impl BinIndices {
    pub fn new(layout: &SectionLayout, read: &Section) -> Result<Self> {
        Ok(Self { start: 0, tau_a: read.snap(layout.tau_a)?, tau_b: read.snap(layout.tau_b)?, tau_c: read.snap(layout.tau_c)? })
    }
}

/// Overlap matrices G[p][q] = ∫ φ_p*(t) φ_q(t) dt over each sub-interval, so
/// that ∫|Σ c_p φ_p|² = c^H G c. Also holds the family values at τ_a and the
/// write-section Gram of the a^W.
#[derive(Clone, Debug)]
pub struct GramMatrices {
    pub delay: DMatrix<C64>,
    pub bin_a: DMatrix<C64>,
    pub bin_b: DMatrix<C64>,
    pub readout: DMatrix<C64>,
    pub write: DMatrix<C64>,
    /// φ_p(τ_a).
    pub endpoint: DVector<C64>,
    pub bins: BinIndices,
}

/// Hermitian trapezoid Gram matrix over samples i0..=i1.
pub fn gram_matrix(family: &[&Trajectory], i0: usize, i1: usize) -> DMatrix<C64> {
    let n = family.len();
    let dt = family.first().map(|t| t.dt).unwrap_or(0.0);
    let rows: Vec<Vec<C64>> = par::map_range(n, |p| {
        (0..n)
            .map(|q| if q < p { C64::new(0.0, 0.0) } else { overlap_samples(&family[p].samples, &family[q].samples, i0, i1, dt) })
            .collect()
    });
    let mut g = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    for p in 0..n {
        g[(p, p)] = C64::new(rows[p][p].re, 0.0);
        for q in p + 1..n {
            g[(p, q)] = rows[p][q];
            g[(q, p)] = rows[p][q].conj();
        }
    }
    g
}

/// Trapezoid ∫ x*(t) y(t) dt over samples i0..=i1.
pub fn overlap_samples(x: &[C64], y: &[C64], i0: usize, i1: usize, dt: f64) -> C64 {
    if i1 <= i0 {
        return C64::new(0.0, 0.0);
    }
    let inner: C64 = x[i0 + 1..i1].iter().zip(&y[i0 + 1..i1]).map(|(a, b)| a.conj() * b).sum();
    dt * (inner + 0.5 * (x[i0].conj() * y[i0] + x[i1].conj() * y[i1]))
}

/// Precomputes every overlap the optimizer and the retrieval need.
pub fn gram(basis: &BasisSet, layout: &SectionLayout) -> Result<GramMatrices> {
    let bins = BinIndices::new(layout, &basis.read_section)?;
    let fam: Vec<&Trajectory> = basis.family().collect();
    let wfam: Vec<&Trajectory> = basis.write_responses.iter().collect();
    let endpoint = DVector::from_iterator(fam.len(), fam.iter().map(|t| t.samples[bins.tau_a]));
    Ok(GramMatrices {
        delay: gram_matrix(&fam, bins.start, bins.tau_a),
        bin_a: gram_matrix(&fam, bins.tau_a, bins.tau_b),
        bin_b: gram_matrix(&fam, bins.tau_b, bins.tau_c),
        readout: gram_matrix(&fam, bins.tau_a, bins.tau_c),
        write: gram_matrix(&wfam, 0, basis.write_section.steps),
        endpoint,
        bins,
    })
}

/// c^H G d.
pub fn form(g: &DMatrix<C64>, c: &[C64], d: &[C64]) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for p in 0..c.len() {
        if c[p] == C64::new(0.0, 0.0) {
            continue;
        }
        let mut row = C64::new(0.0, 0.0);
        for q in 0..d.len() {
            row += g[(p, q)] * d[q];
        }
        acc += c[p].conj() * row;
    }
    acc
}

/// Roles in a coefficient table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Xi0,
    Xi1,
    Zeta,
}

impl Role {
    pub fn name(&self) -> &'static str {
        match self {
            Role::Xi0 => "xi0",
            Role::Xi1 => "xi1",
            Role::Zeta => "zeta",
        }
    }
}

/// Write coefficients for both states plus the shared readout coefficients,
/// in absolute units.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientTable {
    pub xi0: Vec<C64>,
    pub xi1: Vec<C64>,
    pub zeta: Vec<C64>,
    /// Table units of the write and readout coefficients (rad/ns).
    pub write_scale: f64,
    pub read_scale: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CoefficientRow {
    role: Role,
    k: usize,
    re: f64,
    im: f64,
    /// Normalization unit in multiples of κ.
    amp_scale: f64,
}

impl CoefficientTable {
    /// (1/2)Σ|ξ/write_scale|² for both states and (1/2)Σ|ζ/read_scale|².
    pub fn normalized_powers(&self) -> [f64; 3] {
        let w2 = self.write_scale * self.write_scale;
        let r2 = self.read_scale * self.read_scale;
        [half_power(&self.xi0) / w2, half_power(&self.xi1) / w2, half_power(&self.zeta) / r2]
    }

    /// Readout-to-write power ratio (1/2)Σ|ζ|² / (1/2)Σ|ξ^0|².
    pub fn power_ratio(&self) -> f64 {
        half_power(&self.zeta) / half_power(&self.xi0)
    }

    /// Parses the `role,k,re,im,amp_scale` CSV. Values are normalized by
    /// amp_scale·κ; `check_power` enforces (1/2)Σ|c|² = 1 ± 0.01 per role.
    pub fn read_csv<R: std::io::Read>(input: R, kappa: f64, check_power: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input);
        let mut rows: Vec<CoefficientRow> = Vec::new();
        for r in rdr.deserialize() {
            rows.push(r.map_err(|e| Error::Config(format!("coefficient table: {e}")))?);
        }
        let collect = |role: Role| -> Result<(Vec<C64>, f64)> {
            let mut sel: Vec<&CoefficientRow> = rows.iter().filter(|r| r.role == role).collect();
            sel.sort_by_key(|r| r.k);
            if sel.is_empty() {
                return config(format!("coefficient table has no `{}` rows", role.name()));
            }
            for (i, r) in sel.iter().enumerate() {
                if r.k != i + 1 {
                    return config(format!("coefficient table `{}` k-indices must run 1..n", role.name()));
                }
            }
            let scale = sel[0].amp_scale;
            if sel.iter().any(|r| r.amp_scale != scale) || !(scale > 0.0) {
                return config(format!("coefficient table `{}` needs one positive amp_scale", role.name()));
            }
            let unit = scale * kappa;
            Ok((sel.iter().map(|r| C64::new(r.re, r.im) * unit).collect(), unit))
        };
        let (xi0, ws) = collect(Role::Xi0)?;
        let (xi1, ws1) = collect(Role::Xi1)?;
        let (zeta, rs) = collect(Role::Zeta)?;
        if xi0.len() != xi1.len() || (ws - ws1).abs() > 1e-15 * ws {
            return config("xi0 and xi1 must have the same length and amp_scale");
        }
        let t = Self { xi0, xi1, zeta, write_scale: ws, read_scale: rs };
        if check_power {
            for (name, p) in ["xi0", "xi1", "zeta"].iter().zip(t.normalized_powers()) {
                if (p - 1.0).abs() > 0.01 {
                    return config(format!("coefficient table `{name}` has normalized power {p:.4}, expected 1 ± 0.01"));
                }
            }
        }
        Ok(t)
    }

    pub fn load(path: &Path, kappa: f64, check_power: bool) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
        Self::read_csv(f, kappa, check_power)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W, kappa: f64) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (role, coeffs, unit) in [
            (Role::Xi0, &self.xi0, self.write_scale),
            (Role::Xi1, &self.xi1, self.write_scale),
            (Role::Zeta, &self.zeta, self.read_scale),
        ] {
            for (i, c) in coeffs.iter().enumerate() {
                w.serialize(CoefficientRow { role, k: i + 1, re: c.re / unit, im: c.im / unit, amp_scale: unit / kappa })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path, kappa: f64) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f), kappa)
    }
}

/// Reference coefficient tables shipped with the crate.
pub mod tables {
    use super::CoefficientTable;

    pub const CASE_A_CSV: &str = include_str!("../data/case_a_coefficients.csv");
    pub const CASE_B_CSV: &str = include_str!("../data/case_b_coefficients.csv");

    /// Five write and ten readout harmonics for the no-hole layout.
    pub fn case_a(kappa: f64) -> CoefficientTable {
        CoefficientTable::read_csv(CASE_A_CSV.as_bytes(), kappa, false).expect("bundled table parses")
    }

    /// Four write and sixty readout harmonics for the delayed layout.
    pub fn case_b(kappa: f64) -> CoefficientTable {
        CoefficientTable::read_csv(CASE_B_CSV.as_bytes(), kappa, false).expect("bundled table parses")
    }
}
