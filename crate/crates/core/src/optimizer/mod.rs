// Copyright 2026 cavmem contributors
// SPDX-License-Identifier: Apache-2.0

//! Storage/readout pulse optimization over basis coefficients.
//!
//! For logical state i the readout amplitude is A_i = Σ_p c_{i,p} φ_p with
//! c_i = [ζ; ξ^i]. Every quantity the optimizer touches is a Hermitian form
//! in c_i, so evaluations only need the precomputed Gram matrices.
//!
//! The search runs in two passes. Pass 1 maximizes the in-bin energy S while
//! keeping the objective below σS. Pass 2 fixes S at the best value found
//! over all restarts and minimizes the objective.

pub mod sqp;

use crate::basis::{BasisSet, GramMatrices};
use crate::error::{Error, Result};
use crate::model::SectionLayout;
use crate::par;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sqp::{Evaluation, Nlp, SqpOptions};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Storage/readout control problem on a precomputed basis.
#[derive(Clone, Debug)]
pub struct ControlProblem<'a> {
    pub basis: &'a BasisSet,
    pub gram: &'a GramMatrices,
    pub layout: SectionLayout,
    /// Amplitude unit for the coefficients (κ).
    pub amp_unit: f64,
    /// In-bin energy. `None` lets pass 1 maximize it.
    pub s_target: Option<f64>,
    /// Write power ½Σ|ξ_k|², absolute units.
    pub p_target: f64,
    /// Readout power ½Σ|ζ_l|²; `None` leaves ζ free.
    pub readout_power: Option<f64>,
    /// Delay-window energy must stay below this fraction of S.
    pub delay_budget: f64,
    /// |A(τ_a)|² (τ_c − τ_a) must stay below this fraction of S.
    pub endpoint_budget: f64,
    /// Pass-1 bound on objective / S.
    pub separation: f64,
    pub restarts: usize,
    pub seed: u64,
    pub sqp: SqpOptions,
}

impl<'a> ControlProblem<'a> {
    pub fn new(basis: &'a BasisSet, gram: &'a GramMatrices, layout: SectionLayout, amp_unit: f64) -> Self {
        Self {
            basis,
            gram,
            layout,
            amp_unit,
            s_target: None,
            p_target: amp_unit * amp_unit,
            readout_power: None,
            delay_budget: 1e-3,
            endpoint_budget: 1e-3,
            separation: 0.01,
            restarts: 8,
            seed: 0,
            sqp: SqpOptions::default(),
        }
    }

    fn n_read(&self) -> usize {
        self.basis.n_read()
    }

    fn n_write(&self) -> usize {
        self.basis.n_write()
    }

    fn validate(&self) -> Result<()> {
        let fin = |v: f64| v.is_finite() && v > 0.0;
        if !fin(self.amp_unit) || !fin(self.p_target) {
            return Err(Error::Config("amplitude unit and write power must be positive".into()));
        }
        if self.readout_power.is_some_and(|p| !fin(p)) || self.s_target.is_some_and(|s| !fin(s)) {
            return Err(Error::Config("readout power and target energy must be positive".into()));
        }
        if !(self.delay_budget > 0.0 && self.endpoint_budget > 0.0 && self.separation > 0.0) {
            return Err(Error::Config("budgets must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("need at least one restart".into()));
        }
        let n = self.basis.family_len();
        if self.gram.bin_a.nrows() != n || self.gram.endpoint.len() != n {
            return Err(Error::Config("gram matrices do not match the basis".into()));
        }
        Ok(())
    }

    fn readout_window(&self) -> f64 {
        self.layout.tau_c - self.layout.tau_a
    }

    fn has_delay(&self) -> bool {
        self.gram.bins.tau_a > self.gram.bins.start
    }
}

/// Optimizer output, in absolute units.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControlSolution {
    pub xi0: Vec<C64>,
    pub xi1: Vec<C64>,
    pub zeta: Vec<C64>,
    pub s_value: f64,
    pub objective_value: f64,
    pub residuals: Vec<Residual>,
    pub converged: bool,
    pub iterations: usize,
    pub best_restart: usize,
    /// Final pass-2 objective of each restart (NaN if it ended infeasible).
    pub restart_objectives: Vec<f64>,
}

impl ControlSolution {
    /// Wraps externally supplied coefficients, such as a published table.
    /// Optimizer diagnostics are left empty.
    pub fn from_coefficients(xi0: Vec<C64>, xi1: Vec<C64>, zeta: Vec<C64>) -> Self {
        Self {
            xi0,
            xi1,
            zeta,
            s_value: f64::NAN,
            objective_value: f64::NAN,
            residuals: Vec::new(),
            converged: false,
            iterations: 0,
            best_restart: 0,
            restart_objectives: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Equality,
    Inequality,
}

/// `value` is the residual: zero at an equality, ≤ 0 for a satisfied inequality.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Residual {
    pub name: String,
    pub kind: ConstraintKind,
    pub value: f64,
    /// Scale used for the relative feasibility test.
    pub scale: f64,
}

impl Residual {
    pub fn relative(&self) -> f64 {
        let r = self.value / self.scale;
        match self.kind {
            ConstraintKind::Equality => r.abs(),
            ConstraintKind::Inequality => r.max(0.0),
        }
    }
}

/// Forms over one family, optionally rescaled.
#[derive(Clone)]
struct Forms {
    delay: DMatrix<C64>,
    a: DMatrix<C64>,
    b: DMatrix<C64>,
    ro: DMatrix<C64>,
    end: Vec<C64>,
}

impl Forms {
    fn new(g: &GramMatrices, scale: f64, end_scale: f64) -> Self {
        Self {
            delay: &g.delay * C64::from(scale),
            a: &g.bin_a * C64::from(scale),
            b: &g.bin_b * C64::from(scale),
            ro: &g.readout * C64::from(scale),
            end: g.endpoint.iter().map(|e| e * end_scale).collect(),
        }
    }
}

fn matvec(g: &DMatrix<C64>, c: &[C64]) -> Vec<C64> {
    (0..c.len()).map(|p| (0..c.len()).map(|q| g[(p, q)] * c[q]).sum()).collect()
}

fn cdot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// A real function of (c0, c1) with its gradient. Gradients are complex
/// encoded, g_p = ∂/∂Re c_p + i ∂/∂Im c_p.
struct Term {
    value: f64,
    g0: Vec<C64>,
    g1: Vec<C64>,
}

impl Term {
    fn quadratic(gm: &DMatrix<C64>, c: &[C64], on_first: bool) -> Term {
        let gc = matvec(gm, c);
        let value = cdot(c, &gc).re;
        let g: Vec<C64> = gc.iter().map(|v| 2.0 * v).collect();
        let z = vec![ZERO; c.len()];
        if on_first {
            Term { value, g0: g, g1: z }
        } else {
            Term { value, g0: z, g1: g }
        }
    }

    fn endpoint(e: &[C64], c: &[C64], on_first: bool) -> Term {
        let v: C64 = e.iter().zip(c).map(|(a, b)| a * b).sum();
        let g: Vec<C64> = e.iter().map(|ep| 2.0 * v * ep.conj()).collect();
        let z = vec![ZERO; c.len()];
        if on_first {
            Term { value: v.norm_sqr(), g0: g, g1: z }
        } else {
            Term { value: v.norm_sqr(), g0: z, g1: g }
        }
    }

    /// √(|c0^H G c1|² + ε²) − ε.
    fn smooth_overlap(gm: &DMatrix<C64>, c0: &[C64], c1: &[C64], eps: f64) -> Term {
        let gc1 = matvec(gm, c1);
        let gc0 = matvec(gm, c0);
        let o = cdot(c0, &gc1);
        let root = (o.norm_sqr() + eps * eps).sqrt();
        let f = if root > 0.0 { 1.0 / root } else { 0.0 };
        Term {
            value: root - eps,
            g0: gc1.iter().map(|v| f * o.conj() * v).collect(),
            g1: gc0.iter().map(|v| f * o * v).collect(),
        }
    }

    fn plus(mut self, o: Term) -> Term {
        self.value += o.value;
        self.g0.iter_mut().zip(&o.g0).for_each(|(a, b)| *a += b);
        self.g1.iter_mut().zip(&o.g1).for_each(|(a, b)| *a += b);
        self
    }
}

/// Variable layout: (ξ0, ξ1, ζ), each coefficient as (Re, Im), optionally
/// followed by S.
#[derive(Clone, Copy)]
struct Layout {
    n_read: usize,
    n_write: usize,
}

impl Layout {
    fn n_coeff(&self) -> usize {
        2 * (2 * self.n_write + self.n_read)
    }

    fn unpack(&self, x: &[f64]) -> (Vec<C64>, Vec<C64>, Vec<C64>) {
        let c = |i: usize| C64::new(x[2 * i], x[2 * i + 1]);
        let nw = self.n_write;
        let xi0 = (0..nw).map(c).collect();
        let xi1 = (nw..2 * nw).map(c).collect();
        let zeta = (2 * nw..2 * nw + self.n_read).map(c).collect();
        (xi0, xi1, zeta)
    }

    fn pack(&self, xi0: &[C64], xi1: &[C64], zeta: &[C64]) -> Vec<f64> {
        xi0.iter().chain(xi1).chain(zeta).flat_map(|v| [v.re, v.im]).collect()
    }

    fn family(&self, zeta: &[C64], xi: &[C64]) -> Vec<C64> {
        zeta.iter().chain(xi).copied().collect()
    }

    /// Maps family gradients for c0 = [ζ; ξ0] and c1 = [ζ; ξ1] onto x.
    fn gradient(&self, t: &Term, len: usize) -> Vec<f64> {
        let nr = self.n_read;
        let nw = self.n_write;
        let mut g = vec![0.0; len];
        let mut put = |i: usize, v: C64| {
            g[2 * i] += v.re;
            g[2 * i + 1] += v.im;
        };
        for k in 0..nw {
            put(k, t.g0[nr + k]);
            put(nw + k, t.g1[nr + k]);
        }
        for l in 0..nr {
            put(2 * nw + l, t.g0[l] + t.g1[l]);
        }
        g
    }
}

fn half_power_term(x: &[f64], range: std::ops::Range<usize>, len: usize) -> (f64, Vec<f64>) {
    let mut g = vec![0.0; len];
    let mut v = 0.0;
    for i in 2 * range.start..2 * range.end {
        v += 0.5 * x[i] * x[i];
        g[i] = x[i];
    }
    (v, g)
}

/// Objective O = E_b[A_0] + E_a[A_1] + |⟨A_0, A_1⟩| with a smoothed modulus,
/// in absolute units. The gradient is over (ξ0, ξ1, ζ), each coefficient
/// contributing (∂/∂Re, ∂/∂Im).
pub fn objective(problem: &ControlProblem, xi0: &[C64], xi1: &[C64], zeta: &[C64]) -> (f64, Vec<f64>) {
    let lay = Layout { n_read: problem.n_read(), n_write: problem.n_write() };
    let forms = Forms::new(problem.gram, 1.0, 1.0);
    let c0 = lay.family(zeta, xi0);
    let c1 = lay.family(zeta, xi1);
    let s = problem.s_target.unwrap_or_else(|| 0.5 * (Term::quadratic(&forms.a, &c0, true).value + Term::quadratic(&forms.b, &c1, false).value));
    let t = objective_term(&forms, &c0, &c1, 1e-12 * s.abs());
    let g = lay.gradient(&t, lay.n_coeff());
    (t.value, g)
}

fn objective_term(f: &Forms, c0: &[C64], c1: &[C64], eps: f64) -> Term {
    Term::quadratic(&f.b, c0, true).plus(Term::quadratic(&f.a, c1, false)).plus(Term::smooth_overlap(&f.ro, c0, c1, eps))
}

/// Constraint residuals in absolute units at the given S (defaults to
/// `s_target`, else the mean in-bin energy).
pub fn constraints(problem: &ControlProblem, xi0: &[C64], xi1: &[C64], zeta: &[C64]) -> Vec<Residual> {
    let lay = Layout { n_read: problem.n_read(), n_write: problem.n_write() };
    let f = Forms::new(problem.gram, 1.0, 1.0);
    let c0 = lay.family(zeta, xi0);
    let c1 = lay.family(zeta, xi1);
    let ea0 = Term::quadratic(&f.a, &c0, true).value;
    let eb1 = Term::quadratic(&f.b, &c1, false).value;
    let s = problem.s_target.unwrap_or(0.5 * (ea0 + eb1));
    let eq = |name: &str, value: f64, scale: f64| Residual { name: name.into(), kind: ConstraintKind::Equality, value, scale };
    let ineq = |name: &str, value: f64, scale: f64| Residual { name: name.into(), kind: ConstraintKind::Inequality, value, scale };
    let p = problem.p_target;
    let mut out = vec![
        eq("bin_energy_0", ea0 - s, s),
        eq("bin_energy_1", eb1 - s, s),
        eq("write_power_0", crate::basis::half_power(xi0) - p, p),
        eq("write_power_1", crate::basis::half_power(xi1) - p, p),
    ];
    if let Some(pr) = problem.readout_power {
        out.push(eq("readout_power", crate::basis::half_power(zeta) - pr, pr));
    }
    if problem.has_delay() {
        let budget = problem.delay_budget * s;
        out.push(ineq("delay_energy_0", Term::quadratic(&f.delay, &c0, true).value - budget, budget));
        out.push(ineq("delay_energy_1", Term::quadratic(&f.delay, &c1, true).value - budget, budget));
    }
    let w = problem.readout_window();
    let budget = problem.endpoint_budget * s / w;
    out.push(ineq("endpoint_0", Term::endpoint(&f.end, &c0, true).value - budget, budget));
    out.push(ineq("endpoint_1", Term::endpoint(&f.end, &c1, true).value - budget, budget));
    out
}

/// Largest relative violation.
pub fn max_violation(res: &[Residual]) -> f64 {
    res.iter().map(Residual::relative).fold(0.0, f64::max)
}

/// Scaled NLP for one pass.
#[derive(Clone)]
struct Pass {
    lay: Layout,
    forms: Forms,
    has_delay: bool,
    /// Power targets in normalized units (amplitudes / amp_unit).
    p_hat: f64,
    pr_hat: Option<f64>,
    delay_budget: f64,
    endpoint_budget: f64,
    separation: f64,
    /// `None`: S is the last variable and f = −S. `Some(s)`: f = objective / s.
    fixed_s: Option<f64>,
}

impl Pass {
    fn new(problem: &ControlProblem, e_ref: f64, fixed_s: Option<f64>) -> Self {
        let u2 = problem.amp_unit * problem.amp_unit;
        let scale = u2 / e_ref;
        let w = problem.readout_window();
        Pass {
            lay: Layout { n_read: problem.n_read(), n_write: problem.n_write() },
            forms: Forms::new(problem.gram, scale, (scale * w).sqrt()),
            has_delay: problem.has_delay(),
            p_hat: problem.p_target / u2,
            pr_hat: problem.readout_power.map(|p| p / u2),
            delay_budget: problem.delay_budget,
            endpoint_budget: problem.endpoint_budget,
            separation: problem.separation,
            fixed_s,
        }
    }

    fn n(&self) -> usize {
        self.lay.n_coeff() + usize::from(self.fixed_s.is_none())
    }
}

impl Nlp for Pass {
    fn eval(&self, x: &[f64]) -> Evaluation {
        let n = self.n();
        let nc = self.lay.n_coeff();
        let (xi0, xi1, zeta) = self.lay.unpack(x);
        let c0 = self.lay.family(&zeta, &xi0);
        let c1 = self.lay.family(&zeta, &xi1);
        let s = self.fixed_s.unwrap_or_else(|| x[nc]);
        let ds = |v: f64| {
            let mut g = vec![0.0; n];
            if self.fixed_s.is_none() {
                g[nc] = v;
            }
            g
        };
        let grad_of = |t: &Term, k: f64, s_coef: f64| {
            let mut g = self.lay.gradient(t, n);
            g.iter_mut().for_each(|v| *v *= k);
            if self.fixed_s.is_none() {
                g[nc] = s_coef;
            }
            g
        };

        let eps = 1e-12 * s.abs().max(1e-300);
        let obj = objective_term(&self.forms, &c0, &c1, eps);
        let mut ev = Evaluation { f: 0.0, grad: vec![], eq: vec![], eq_jac: vec![], ineq: vec![], ineq_jac: vec![] };

        match self.fixed_s {
            None => {
                ev.f = -s;
                ev.grad = ds(-1.0);
            }
            Some(s0) => {
                ev.f = obj.value / (self.separation * s0);
                ev.grad = grad_of(&obj, 1.0 / (self.separation * s0), 0.0);
            }
        }

        let ea0 = Term::quadratic(&self.forms.a, &c0, true);
        let eb1 = Term::quadratic(&self.forms.b, &c1, false);
        ev.eq.push(ea0.value - s);
        ev.eq_jac.push(grad_of(&ea0, 1.0, -1.0));
        ev.eq.push(eb1.value - s);
        ev.eq_jac.push(grad_of(&eb1, 1.0, -1.0));

        let nw = self.lay.n_write;
        let nr = self.lay.n_read;
        for r in [0..nw, nw..2 * nw] {
            let (v, mut g) = half_power_term(x, r, n);
            g.iter_mut().for_each(|v| *v /= self.p_hat);
            ev.eq.push(v / self.p_hat - 1.0);
            ev.eq_jac.push(g);
        }
        if let Some(pr) = self.pr_hat {
            let (v, mut g) = half_power_term(x, 2 * nw..2 * nw + nr, n);
            g.iter_mut().for_each(|v| *v /= pr);
            ev.eq.push(v / pr - 1.0);
            ev.eq_jac.push(g);
        }

        // s − E/budget ≥ 0
        let mut bounded = |t: Term, budget: f64| {
            ev.ineq.push(s - t.value / budget);
            ev.ineq_jac.push(grad_of(&t, -1.0 / budget, 1.0));
        };
        if self.has_delay {
            bounded(Term::quadratic(&self.forms.delay, &c0, true), self.delay_budget);
            bounded(Term::quadratic(&self.forms.delay, &c1, false), self.delay_budget);
        }
        bounded(Term::endpoint(&self.forms.end, &c0, true), self.endpoint_budget);
        bounded(Term::endpoint(&self.forms.end, &c1, false), self.endpoint_budget);
        if self.fixed_s.is_none() {
            bounded(obj, self.separation);
        }
        ev
    }
}

fn random_start(problem: &ControlProblem, restart: usize) -> (Vec<C64>, Vec<C64>, Vec<C64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
    rng.set_stream(restart as u64);
    let mut draw = |n: usize, power: f64| {
        let v: Vec<C64> = (0..n).map(|_| C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))).collect();
        let p = crate::basis::half_power(&v).max(1e-300);
        v.into_iter().map(|c| c * (power / p).sqrt()).collect::<Vec<_>>()
    };
    let p_hat = problem.p_target / (problem.amp_unit * problem.amp_unit);
    let pr_hat = problem.readout_power.map_or(0.1 * p_hat, |p| p / (problem.amp_unit * problem.amp_unit));
    let xi0 = draw(problem.n_write(), p_hat);
    let xi1 = draw(problem.n_write(), p_hat);
    let zeta = draw(problem.n_read(), pr_hat);
    (xi0, xi1, zeta)
}

fn is_zero_matrix(m: &DMatrix<C64>) -> bool {
    m.iter().all(|v| v.norm() == 0.0)
}

/// Energy unit for the scaled problem: a typical in-window energy of a
/// single memory response at the write power.
fn reference_energy(problem: &ControlProblem) -> f64 {
    let g = &problem.gram.readout;
    let n = g.nrows();
    let mean = (0..n).map(|p| g[(p, p)].re).sum::<f64>() / n.max(1) as f64;
    let e = 2.0 * problem.p_target * mean;
    if e > 0.0 && e.is_finite() {
        e
    } else {
        1.0
    }
}

struct RestartResult {
    x: Vec<f64>,
    s: f64,
    f: f64,
    feasible: bool,
    converged: bool,
    iterations: usize,
}

const FEAS_TOL: f64 = 1e-6;

/// Budget multipliers for the warm-started pass-1 stages tried when a direct
/// solve ends infeasible.
const CONTINUATION: &[f64] = &[1e6, 1e3, 1e1];

/// Runs the two-pass search from `restarts` seeded starts and returns the
/// best feasible solution.
pub fn optimize(problem: &ControlProblem) -> Result<ControlSolution> {
    problem.validate()?;
    let lay = Layout { n_read: problem.n_read(), n_write: problem.n_write() };
    let u = problem.amp_unit;
    let scale_out = |v: Vec<C64>| v.into_iter().map(|c| c * u).collect::<Vec<_>>();

    if is_zero_matrix(&problem.gram.bin_a) && is_zero_matrix(&problem.gram.bin_b) {
        // nothing reaches the readout bins: the only consistent S is zero
        let mut xi = vec![ZERO; problem.n_write()];
        xi[0] = C64::from((2.0 * problem.p_target).sqrt());
        let zeta = match problem.readout_power {
            Some(p) => {
                let mut z = vec![ZERO; problem.n_read()];
                z[0] = C64::from((2.0 * p).sqrt());
                z
            }
            None => vec![ZERO; problem.n_read()],
        };
        let sub = ControlProblem { s_target: Some(1.0), ..problem.clone() };
        let residuals = constraints(&sub, &xi, &xi, &zeta);
        return Ok(ControlSolution {
            xi0: xi.clone(),
            xi1: xi,
            zeta,
            s_value: 0.0,
            objective_value: 0.0,
            residuals,
            converged: true,
            iterations: 0,
            best_restart: 0,
            restart_objectives: vec![0.0; problem.restarts],
        });
    }

    let e_ref = reference_energy(problem);
    let starts: Vec<Vec<f64>> = (0..problem.restarts)
        .map(|r| {
            let (a, b, c) = random_start(problem, r);
            lay.pack(&a, &b, &c)
        })
        .collect();

    // pass 1: largest S per restart (skipped when S is prescribed)
    let (s_star, seconds_from) = match problem.s_target {
        Some(s) => (s / e_ref, starts),
        None => {
            let pass = Pass::new(problem, e_ref, None);
            let firsts: Vec<RestartResult> = par::map(&starts, |x0| {
                let (xi0, xi1, zeta) = lay.unpack(x0);
                let f = &pass.forms;
                let s0 = 0.5 * (Term::quadratic(&f.a, &lay.family(&zeta, &xi0), true).value + Term::quadratic(&f.b, &lay.family(&zeta, &xi1), false).value);
                let mut x = x0.clone();
                x.push(s0);
                let direct = run(&pass, x.clone(), &problem.sqp, |x| x[x.len() - 1]);
                if direct.feasible {
                    return direct;
                }
                // tighten the delay and endpoint budgets in stages, warm-starting each
                for &m in CONTINUATION {
                    let stage = Pass { delay_budget: pass.delay_budget * m, endpoint_budget: pass.endpoint_budget * m, ..pass.clone() };
                    x = sqp::minimize(&stage, x, &problem.sqp).x;
                }
                let staged = run(&pass, x, &problem.sqp, |x| x[x.len() - 1]);
                if staged.feasible {
                    staged
                } else {
                    direct
                }
            });
            let best = firsts.iter().filter(|r| r.feasible).map(|r| r.s).fold(f64::NEG_INFINITY, f64::max);
            if !best.is_finite() || best <= 0.0 {
                let v = firsts.iter().map(|r| r.f).fold(f64::INFINITY, f64::min);
                return Err(Error::Infeasible(format!("pass 1 found no feasible point in {} restarts (best merit {v:.3e})", problem.restarts)));
            }
            // pass 2 starts where pass 1 ended, without the S variable
            (best, firsts.into_iter().map(|r| r.x[..r.x.len() - 1].to_vec()).collect())
        }
    };

    let pass = Pass::new(problem, e_ref, Some(s_star));
    let seconds: Vec<RestartResult> = par::map(&seconds_from, |x0| run(&pass, x0.clone(), &problem.sqp, |_| s_star));
    let restart_objectives: Vec<f64> = seconds.iter().map(|r| if r.feasible { r.f * problem.separation * s_star * e_ref } else { f64::NAN }).collect();
    let best = seconds
        .iter()
        .enumerate()
        .filter(|(_, r)| r.feasible)
        .min_by(|a, b| a.1.f.total_cmp(&b.1.f))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Infeasible(format!("pass 2 found no feasible point at S = {:.4e} in {} restarts", s_star * e_ref, problem.restarts)))?;
    let r = &seconds[best];
    let (xi0, xi1, zeta) = lay.unpack(&r.x);
    let (xi0, xi1, zeta) = (scale_out(xi0), scale_out(xi1), scale_out(zeta));
    let s_abs = s_star * e_ref;
    let sub = ControlProblem { s_target: Some(s_abs), ..problem.clone() };
    let (obj, _) = objective(&sub, &xi0, &xi1, &zeta);
    let residuals = constraints(&sub, &xi0, &xi1, &zeta);
    log::info!("optimizer: S = {s_abs:.6e}, objective = {obj:.6e}, restart {best}, {} iterations", r.iterations);
    Ok(ControlSolution {
        xi0,
        xi1,
        zeta,
        s_value: s_abs,
        objective_value: obj,
        residuals,
        converged: r.converged,
        iterations: r.iterations,
        best_restart: best,
        restart_objectives,
    })
}

fn run(pass: &Pass, x0: Vec<f64>, opts: &SqpOptions, s_of: impl Fn(&[f64]) -> f64) -> RestartResult {
    let out = sqp::minimize(pass, x0, opts);
    let ev = pass.eval(&out.x);
    let s = s_of(&out.x);
    // constraints are normalized so that violations are relative to S or P
    let feasible = ev.violation() <= FEAS_TOL * s.abs().max(1.0) && s > 0.0;
    RestartResult { s, f: out.f, feasible, converged: out.converged, iterations: out.iterations, x: out.x }
}

/// Storage efficiency of a solution.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Efficiency {
    /// ∫_{τa}^{τc}|A^(R)| / ∫_write |A^(W)|.
    pub amplitude_ratio: f64,
    /// ∫_{τa}^{τc}|A^(R)|² / ∫_write |A^(W)|².
    pub energy_ratio: f64,
}

/// Efficiency of one logical state.
pub fn efficiency(basis: &BasisSet, gram: &GramMatrices, zeta: &[C64], xi: &[C64]) -> Result<Efficiency> {
    let w = crate::basis::assemble_write(xi, basis)?;
    let r = crate::basis::assemble_read(zeta, xi, basis)?;
    let b = gram.bins;
    let num_abs = r.integrate(b.tau_a, b.tau_c, |a| a.norm());
    let num_e = r.integrate(b.tau_a, b.tau_c, |a| a.norm_sqr());
    let den_abs = w.integrate(0, w.len() - 1, |a| a.norm());
    let den_e = w.energy();
    Ok(Efficiency { amplitude_ratio: num_abs / den_abs, energy_ratio: num_e / den_e })
}
