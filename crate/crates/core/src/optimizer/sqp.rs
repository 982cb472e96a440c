// Copyright 2026 cavmem contributors
// SPDX-License-Identifier: Apache-2.0

//! Small dense SQP solver in the SLSQP mould.
//!
//! Each iteration solves the quadratic model
//!     min ½dᵀBd + gᵀd  s.t.  J_e d + c_e = 0,  J_i d + c_i ≥ 0
//! by enumerating active sets of the (few) inequalities, then takes an
//! Armijo step on the L1 merit function and updates B with damped BFGS.

use nalgebra::{DMatrix, DVector};

/// Values and first derivatives at a point.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub f: f64,
    pub grad: Vec<f64>,
    pub eq: Vec<f64>,
    pub eq_jac: Vec<Vec<f64>>,
    /// Feasible when ≥ 0.
    pub ineq: Vec<f64>,
    pub ineq_jac: Vec<Vec<f64>>,
}

impl Evaluation {
    pub fn violation(&self) -> f64 {
        let e = self.eq.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.ineq.iter().fold(e, |m, v| m.max(-v))
    }
}

pub trait Nlp {
    fn eval(&self, x: &[f64]) -> Evaluation;
}

#[derive(Clone, Copy, Debug)]
pub struct SqpOptions {
    pub max_iter: usize,
    /// Stop when ‖∇L‖_∞ and complementarity fall below this...
    pub kkt_tol: f64,
    /// ...and the largest constraint violation is below this.
    pub feas_tol: f64,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self { max_iter: 2000, kkt_tol: 1e-8, feas_tol: 1e-10 }
    }
}

#[derive(Clone, Debug)]
pub struct SqpOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub violation: f64,
}

struct QpSolution {
    d: DVector<f64>,
    lam_eq: Vec<f64>,
    lam_ineq: Vec<f64>,
    theta: f64,
}

fn to_matrix(rows: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j])
}

/// Solves the QP subproblem; `None` if B is not positive definite or no
/// active set (even after relaxation) satisfies the KKT conditions.
fn solve_qp(b: &DMatrix<f64>, ev: &Evaluation) -> Option<QpSolution> {
    let n = ev.grad.len();
    let me = ev.eq.len();
    let mi = ev.ineq.len();
    let chol = b.clone().cholesky()?;
    let g = DVector::from_column_slice(&ev.grad);
    let a = {
        let mut rows = ev.eq_jac.clone();
        rows.extend(ev.ineq_jac.iter().cloned());
        to_matrix(&rows, n)
    };
    let m = me + mi;
    let binv_g = chol.solve(&g);
    let binv_at = if m > 0 { chol.solve(&a.transpose()) } else { DMatrix::zeros(n, 0) };
    let h = &a * &binv_at;
    let r = &a * &binv_g;

    for theta in [1.0, 0.5, 0.1, 0.0] {
        let c: Vec<f64> = ev
            .eq
            .iter()
            .map(|v| theta * v)
            .chain(ev.ineq.iter().map(|v| if *v < 0.0 { theta * v } else { *v }))
            .collect();
        // subsets of inequalities, smallest first
        let mut subsets: Vec<u32> = (0..(1u32 << mi)).collect();
        subsets.sort_by_key(|s| s.count_ones());
        for mask in subsets {
            let active: Vec<usize> = (0..me).chain((0..mi).filter(|i| mask & (1 << i) != 0).map(|i| me + i)).collect();
            let k = active.len();
            let lam = if k == 0 {
                DVector::zeros(0)
            } else {
                let hs = DMatrix::from_fn(k, k, |i, j| h[(active[i], active[j])]);
                let rhs = DVector::from_fn(k, |i, _| r[active[i]] - c[active[i]]);
                match hs.svd(true, true).solve(&rhs, 1e-13) {
                    Ok(l) => l,
                    Err(_) => continue,
                }
            };
            let mut d = -&binv_g;
            for (i, &row) in active.iter().enumerate() {
                d += binv_at.column(row) * lam[i];
            }
            let dn = d.amax();
            let ad = &a * &d;
            let ok_active = active.iter().all(|&row| {
                let res = ad[row] + c[row];
                res.abs() <= 1e-9 * (1.0 + c[row].abs() + dn)
            });
            let ok_mult = active.iter().enumerate().filter(|(_, &row)| row >= me).all(|(i, _)| lam[i] >= -1e-10 * (1.0 + lam.amax()));
            let ok_inactive = (0..mi).filter(|i| mask & (1 << i) == 0).all(|i| ad[me + i] + c[me + i] >= -1e-10 * (1.0 + c[me + i].abs() + dn));
            if ok_active && ok_mult && ok_inactive {
                let mut lam_eq = vec![0.0; me];
                let mut lam_ineq = vec![0.0; mi];
                for (i, &row) in active.iter().enumerate() {
                    if row < me {
                        lam_eq[row] = lam[i];
                    } else {
                        lam_ineq[row - me] = lam[i].max(0.0);
                    }
                }
                return Some(QpSolution { d, lam_eq, lam_ineq, theta });
            }
        }
    }
    None
}

fn lagrangian_grad(ev: &Evaluation, lam_eq: &[f64], lam_ineq: &[f64]) -> DVector<f64> {
    let mut g = DVector::from_column_slice(&ev.grad);
    for (l, row) in lam_eq.iter().zip(&ev.eq_jac) {
        for (gi, ri) in g.iter_mut().zip(row) {
            *gi -= l * ri;
        }
    }
    for (l, row) in lam_ineq.iter().zip(&ev.ineq_jac) {
        for (gi, ri) in g.iter_mut().zip(row) {
            *gi -= l * ri;
        }
    }
    g
}

fn merit(ev: &Evaluation, mu_eq: &[f64], mu_ineq: &[f64]) -> f64 {
    ev.f + ev.eq.iter().zip(mu_eq).map(|(c, m)| m * c.abs()).sum::<f64>()
        + ev.ineq.iter().zip(mu_ineq).map(|(c, m)| m * (-c).max(0.0)).sum::<f64>()
}

/// Minimizes `p` from `x0`.
pub fn minimize<P: Nlp>(p: &P, x0: Vec<f64>, opts: &SqpOptions) -> SqpOutcome {
    let n = x0.len();
    let mut x = DVector::from_vec(x0);
    let mut ev = p.eval(x.as_slice());
    let mut b = DMatrix::<f64>::identity(n, n);
    let mut fresh_b = true;
    let mut mu_eq = vec![0.0; ev.eq.len()];
    let mut mu_ineq = vec![0.0; ev.ineq.len()];
    let mut kkt = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let qp = match solve_qp(&b, &ev) {
            Some(q) => q,
            None if !fresh_b => {
                b = DMatrix::identity(n, n);
                fresh_b = true;
                continue;
            }
            None => break,
        };
        let gl = lagrangian_grad(&ev, &qp.lam_eq, &qp.lam_ineq);
        let comp = ev.ineq.iter().zip(&qp.lam_ineq).fold(0.0f64, |m, (c, l)| m.max((c * l).abs()));
        kkt = gl.amax().max(comp);
        let viol = ev.violation();
        if viol <= opts.feas_tol && kkt <= opts.kkt_tol {
            converged = true;
            break;
        }
        if qp.d.amax() <= 1e-15 * (1.0 + x.amax()) {
            converged = viol <= opts.feas_tol && kkt <= 1e3 * opts.kkt_tol;
            break;
        }

        for (m, l) in mu_eq.iter_mut().zip(&qp.lam_eq) {
            *m = l.abs().max(0.5 * (*m + l.abs()));
        }
        for (m, l) in mu_ineq.iter_mut().zip(&qp.lam_ineq) {
            *m = l.abs().max(0.5 * (*m + l.abs()));
        }
        let phi0 = merit(&ev, &mu_eq, &mu_ineq);
        let g = DVector::from_column_slice(&ev.grad);
        let infeas: f64 = ev.eq.iter().zip(&mu_eq).map(|(c, m)| m * c.abs()).sum::<f64>()
            + ev.ineq.iter().zip(&mu_ineq).map(|(c, m)| m * (-c).max(0.0)).sum::<f64>();
        let mut slope = g.dot(&qp.d) - (1.0 - qp.theta) * infeas;
        if slope >= 0.0 {
            slope = -1e-3 * qp.d.dot(&(&b * &qp.d)).max(1e-300);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xn = &x + alpha * &qp.d;
            let evn = p.eval(xn.as_slice());
            let phi = merit(&evn, &mu_eq, &mu_ineq);
            if phi.is_finite() && phi <= phi0 + 1e-4 * alpha * slope {
                accepted = Some((xn, evn));
                break;
            }
            let quad = if phi.is_finite() { -slope * alpha * alpha / (2.0 * (phi - phi0 - slope * alpha)) } else { 0.1 * alpha };
            alpha = quad.clamp(0.1 * alpha, 0.5 * alpha);
        }
        let (xn, evn) = match accepted {
            Some(v) => v,
            None if !fresh_b => {
                b = DMatrix::identity(n, n);
                fresh_b = true;
                continue;
            }
            None => break,
        };

        let s = &xn - &x;
        let y = lagrangian_grad(&evn, &qp.lam_eq, &qp.lam_ineq) - &gl;
        if fresh_b {
            let sy = s.dot(&y);
            let yy = y.dot(&y);
            if sy > 0.0 && yy > 0.0 {
                b = DMatrix::identity(n, n) * (yy / sy);
            }
        }
        let bs = &b * &s;
        let sbs = s.dot(&bs);
        if sbs > 0.0 {
            let sy = s.dot(&y);
            let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
            let r = theta * &y + (1.0 - theta) * &bs;
            let sr = s.dot(&r);
            if sr > 0.0 {
                b += &r * r.transpose() / sr - &bs * bs.transpose() / sbs;
                fresh_b = false;
            }
        }
        x = xn;
        ev = evn;
    }

    SqpOutcome { x: x.as_slice().to_vec(), f: ev.f, iterations, converged, kkt_residual: kkt, violation: ev.violation() }
}
