//! Dense primal-dual interior point method (Mehrotra predictor-corrector)
//! for convex quadratic programs.
//!
//! Two-sided rows `l ≤ a z ≤ u` are split into one-sided inequalities, rows
//! with `l = u` become equality constraints. When the iteration fails to
//! converge, LP subproblems decide whether the program is infeasible or
//! unbounded so that a stall never surfaces as a wrong status.

use nalgebra::{DMatrix, DVector};

use super::lp::{lp_solve_with, LinearProgram};
use super::{SolveReport, SolveStatus, SolverSettings};
use crate::{Error, Result};

/// `minimize ½ zᵀ hessian z + linearᵀ z` subject to `lower ≤ a z ≤ upper`.
///
/// Infinite bounds are allowed and mean the side is absent.
#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub a: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QuadraticProgram {
    pub fn new(
        hessian: DMatrix<f64>,
        linear: DVector<f64>,
        a: DMatrix<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Self {
        QuadraticProgram { hessian, linear, a, lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective_at(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    /// Largest violation of `lower ≤ a z ≤ upper`.
    pub fn violation(&self, z: &DVector<f64>) -> f64 {
        let az = &self.a * z;
        let mut worst = 0.0f64;
        for i in 0..az.len() {
            worst = worst.max(self.lower[i] - az[i]).max(az[i] - self.upper[i]);
        }
        worst
    }

    fn check(&self) -> Result<()> {
        let n = self.linear.len();
        if self.hessian.shape() != (n, n) {
            return Err(Error::dim(format!("Hessian is {:?}, expected {n}×{n}", self.hessian.shape())));
        }
        let rows = self.a.nrows();
        if self.a.ncols() != n && rows > 0 {
            return Err(Error::dim(format!("constraint matrix has {} columns, expected {n}", self.a.ncols())));
        }
        if self.lower.len() != rows || self.upper.len() != rows {
            return Err(Error::dim("bound vectors must have one entry per constraint row"));
        }
        let data = self.hessian.iter().chain(self.linear.iter()).chain(self.a.iter());
        if !data.into_iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("quadratic program data must be finite"));
        }
        for i in 0..rows {
            let (l, u) = (self.lower[i], self.upper[i]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(Error::invalid(format!("row {i}: bounds [{l}, {u}] are not an interval")));
            }
        }
        let scale = self.hessian.amax().max(1.0);
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-9 * scale {
            return Err(Error::invalid(format!("Hessian is not symmetric (max asymmetry {asym:e})")));
        }
        if n > 0 {
            let min_eig = self.hessian.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-9 * scale {
                return Err(Error::invalid(format!("Hessian is not positive semi-definite (eigenvalue {min_eig:e})")));
            }
        }
        Ok(())
    }
}

const TOL: f64 = 1e-9;
/// Relative residual accepted once complementarity is exhausted.
const STALL_TOL: f64 = 1e-7;
const STEP_FRACTION: f64 = 0.995;
const DIVERGENCE: f64 = 1e12;

/// Inequalities `g z ≤ gb` and equalities `e z = eb`, rows normalised.
struct Split {
    g: DMatrix<f64>,
    gb: DVector<f64>,
    e: DMatrix<f64>,
    eb: DVector<f64>,
}

enum Prep {
    Ready(Split),
    /// A zero row whose bounds exclude 0; index into the original rows.
    TriviallyInfeasible(usize, f64),
}

fn split_rows(p: &QuadraticProgram) -> Prep {
    let n = p.dim();
    let mut g_rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut e_rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..p.a.nrows() {
        let norm = p.a.row(i).norm();
        let (l, u) = (p.lower[i], p.upper[i]);
        if norm <= 1e-14 {
            if l > 1e-12 {
                return Prep::TriviallyInfeasible(i, -1.0);
            }
            if u < -1e-12 {
                return Prep::TriviallyInfeasible(i, 1.0);
            }
            continue;
        }
        let row: Vec<f64> = p.a.row(i).iter().map(|v| v / norm).collect();
        if l == u {
            e_rows.push((row, u / norm));
            continue;
        }
        if u.is_finite() {
            g_rows.push((row.clone(), u / norm));
        }
        if l.is_finite() {
            g_rows.push((row.iter().map(|v| -v).collect(), -l / norm));
        }
    }
    let build = |rows: &[(Vec<f64>, f64)]| {
        let m = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].0[j]);
        let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
        (m, b)
    };
    let (g, gb) = build(&g_rows);
    let (e, eb) = build(&e_rows);
    Prep::Ready(Split { g, gb, e, eb })
}

/// Newton system for one interior point iteration, factored once and reused
/// for predictor and corrector.
enum Factor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

struct Newton<'a> {
    sp: &'a Split,
    n: usize,
    factor: Factor,
}

impl<'a> Newton<'a> {
    fn new(h: &DMatrix<f64>, sp: &'a Split, w: &DVector<f64>, reg: f64) -> Option<Self> {
        let n = h.nrows();
        let mut k = h.clone();
        if sp.g.nrows() > 0 {
            let wg = DMatrix::from_fn(sp.g.nrows(), n, |i, j| w[i] * sp.g[(i, j)]);
            k += sp.g.tr_mul(&wg);
        }
        for i in 0..n {
            k[(i, i)] += reg;
        }
        let ne = sp.e.nrows();
        if ne == 0 {
            if let Some(c) = k.clone().cholesky() {
                return Some(Newton { sp, n, factor: Factor::Chol(c) });
            }
            let lu = k.lu();
            return lu.is_invertible().then_some(Newton { sp, n, factor: Factor::Lu(lu) });
        }
        let mut kkt = DMatrix::zeros(n + ne, n + ne);
        kkt.view_mut((0, 0), (n, n)).copy_from(&k);
        kkt.view_mut((0, n), (n, ne)).copy_from(&sp.e.transpose());
        kkt.view_mut((n, 0), (ne, n)).copy_from(&sp.e);
        for i in 0..ne {
            kkt[(n + i, n + i)] = -reg;
        }
        let lu = kkt.lu();
        lu.is_invertible().then_some(Newton { sp, n, factor: Factor::Lu(lu) })
    }

    /// Solves for `(dz, dy)` given the reduced right-hand side
    /// `rhs_z` (stationarity) and `rhs_e` (equalities).
    fn solve(&self, rhs_z: &DVector<f64>, rhs_e: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        match &self.factor {
            Factor::Chol(c) => Some((c.solve(rhs_z), DVector::zeros(0))),
            Factor::Lu(lu) => {
                let ne = self.sp.e.nrows();
                let mut rhs = DVector::zeros(self.n + ne);
                rhs.rows_mut(0, self.n).copy_from(rhs_z);
                rhs.rows_mut(self.n, ne).copy_from(rhs_e);
                let sol = lu.solve(&rhs)?;
                Some((sol.rows(0, self.n).into_owned(), sol.rows(self.n, ne).into_owned()))
            }
        }
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a = 1.0f64;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            a = a.min(-v[i] / dv[i]);
        }
    }
    a
}

/// `(dz, dy, ds, dλ)`.
type Step = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>);

enum IpmEnd {
    Converged(DVector<f64>, usize),
    Failed(usize),
}

fn interior_point(p: &QuadraticProgram, sp: &Split, warm: Option<&DVector<f64>>, max_iter: usize) -> IpmEnd {
    let n = p.dim();
    let m = sp.g.nrows();
    let ne = sp.e.nrows();
    let h = &p.hessian;
    let q = &p.linear;

    let mut z = match warm {
        Some(w) if w.len() == n && w.iter().all(|v| v.is_finite()) => w.clone(),
        _ => DVector::zeros(n),
    };
    let gz = &sp.g * &z;
    let mut s = DVector::from_fn(m, |i, _| (sp.gb[i] - gz[i]).max(1.0));
    let mut lam = DVector::from_element(m, 1.0);
    let mut y = DVector::zeros(ne);

    let bound_scale = sp.gb.amax().max(if ne > 0 { sp.eb.amax() } else { 0.0 });
    let reg = 1e-12 * (1.0 + h.amax());

    for it in 0..max_iter {
        let hz = h * &z;
        let gl = sp.g.tr_mul(&lam);
        let r_d = &hz + q + &gl + sp.e.tr_mul(&y);
        let gz = &sp.g * &z;
        let r_p = &gz + &s - &sp.gb;
        let r_e = &sp.e * &z - &sp.eb;
        let mu = if m > 0 { s.dot(&lam) / m as f64 } else { 0.0 };

        // residuals relative to the size of the terms they balance
        let scale_p = 1.0 + bound_scale.max(gz.amax());
        let scale_d = 1.0 + q.amax().max(hz.amax()).max(gl.amax());
        let obj = p.objective_at(&z);
        let res_p = r_p.amax().max(if ne > 0 { r_e.amax() } else { 0.0 }) / scale_p;
        let res_d = r_d.amax() / scale_d;
        let gap = mu / (1.0 + obj.abs());
        if res_p <= TOL && res_d <= TOL && gap <= TOL {
            return IpmEnd::Converged(z, it);
        }
        // complementarity has collapsed; rounding now limits the residuals
        if m > 0 && gap <= 1e-14 && res_p <= STALL_TOL && res_d <= STALL_TOL {
            return IpmEnd::Converged(z, it);
        }
        if z.amax() > DIVERGENCE || lam.amax() > DIVERGENCE || !mu.is_finite() {
            return IpmEnd::Failed(it);
        }

        let w = lam.component_div(&s);
        let Some(newton) = Newton::new(h, sp, &w, reg) else { return IpmEnd::Failed(it) };

        // dλ = W (G dz + r_p) − S⁻¹ r_c, ds = −r_p − G dz
        let direction = |r_c: &DVector<f64>| -> Option<Step> {
            let corr = w.component_mul(&r_p) - r_c.component_div(&s);
            let rhs_z = -&r_d - sp.g.tr_mul(&corr);
            let rhs_e = -&r_e;
            let (dz, dy) = newton.solve(&rhs_z, &rhs_e)?;
            let gdz = &sp.g * &dz;
            let dlam = w.component_mul(&(&gdz + &r_p)) - r_c.component_div(&s);
            let ds = -&r_p - gdz;
            Some((dz, dy, ds, dlam))
        };

        let r_c_aff = s.component_mul(&lam);
        let Some((_, _, ds_a, dl_a)) = direction(&r_c_aff) else { return IpmEnd::Failed(it) };
        let alpha_aff = max_step(&s, &ds_a).min(max_step(&lam, &dl_a));
        let sigma = if m > 0 {
            let mu_aff = (&s + alpha_aff * &ds_a).dot(&(&lam + alpha_aff * &dl_a)) / m as f64;
            (mu_aff / mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let r_c = &r_c_aff + ds_a.component_mul(&dl_a) - DVector::from_element(m, sigma * mu);
        let Some((dz, dy, ds, dl)) = direction(&r_c) else { return IpmEnd::Failed(it) };
        let alpha = (STEP_FRACTION * max_step(&s, &ds).min(max_step(&lam, &dl))).min(1.0);

        z += alpha * dz;
        y += alpha * dy;
        s += alpha * ds;
        lam += alpha * dl;
        // keep strictly interior against rounding
        s.iter_mut().for_each(|v| *v = v.max(1e-300));
        lam.iter_mut().for_each(|v| *v = v.max(1e-300));
    }
    IpmEnd::Failed(max_iter)
}

/// Stacks the program's rows as one-sided inequalities for LP diagnosis.
fn as_inequalities(sp: &Split) -> (DMatrix<f64>, DVector<f64>) {
    let (m, ne, n) = (sp.g.nrows(), sp.e.nrows(), sp.g.ncols().max(sp.e.ncols()));
    let mut a = DMatrix::zeros(m + 2 * ne, n);
    let mut b = DVector::zeros(m + 2 * ne);
    if m > 0 {
        a.view_mut((0, 0), (m, n)).copy_from(&sp.g);
        b.rows_mut(0, m).copy_from(&sp.gb);
    }
    for i in 0..ne {
        a.row_mut(m + 2 * i).copy_from(&sp.e.row(i));
        a.row_mut(m + 2 * i + 1).copy_from(&(-sp.e.row(i)));
        b[m + 2 * i] = sp.eb[i];
        b[m + 2 * i + 1] = -sp.eb[i];
    }
    (a, b)
}

fn diagnose(p: &QuadraticProgram, sp: &Split, iters: usize, settings: &SolverSettings) -> Result<SolveReport> {
    let n = p.dim();
    let (a, b) = as_inequalities(sp);
    if a.nrows() > 0 {
        let feas = lp_solve_with(&LinearProgram::new(DVector::zeros(n), a.clone(), b.clone()), settings)?;
        if feas.status == SolveStatus::Infeasible {
            let mut rep = SolveReport::without_solution(SolveStatus::Infeasible, iters);
            if let Some(c) = feas.certificate {
                rep = rep.with_certificate(c, feas.certificate_residual);
            }
            return Ok(rep);
        }
    }

    // recession direction: G d ≤ 0, E d = 0, H d = 0, |d|∞ ≤ 1, maximise −qᵀd
    let nh = n;
    let rows = a.nrows() + 2 * nh + 2 * n;
    let mut ra = DMatrix::zeros(rows, n);
    let mut rb = DVector::zeros(rows);
    let mut r = 0;
    for i in 0..a.nrows() {
        ra.row_mut(r).copy_from(&a.row(i));
        r += 1;
    }
    for i in 0..nh {
        ra.row_mut(r).copy_from(&p.hessian.row(i));
        ra.row_mut(r + 1).copy_from(&(-p.hessian.row(i)));
        r += 2;
    }
    for i in 0..n {
        ra[(r, i)] = 1.0;
        ra[(r + 1, i)] = -1.0;
        rb[r] = 1.0;
        rb[r + 1] = 1.0;
        r += 2;
    }
    let rec = lp_solve_with(&LinearProgram::new(-&p.linear, ra, rb), settings)?;
    if rec.is_optimal() && rec.objective > 1e-7 * (1.0 + p.linear.amax()) {
        let d = rec.solution.unwrap_or_else(|| DVector::zeros(n));
        return Ok(SolveReport::without_solution(SolveStatus::Unbounded, iters).with_certificate(d, 0.0));
    }
    Ok(SolveReport::without_solution(SolveStatus::MaxIterations, iters))
}

/// Solves a convex QP.
///
/// `warm_start`, when given and finite, is used as the initial primal
/// iterate; the optimum does not depend on it beyond solver tolerance.
pub fn qp_solve(p: &QuadraticProgram, warm_start: Option<&DVector<f64>>) -> Result<SolveReport> {
    qp_solve_with(p, warm_start, &SolverSettings::default())
}

/// [`qp_solve`] with explicit settings.
pub fn qp_solve_with(
    p: &QuadraticProgram,
    warm_start: Option<&DVector<f64>>,
    settings: &SolverSettings,
) -> Result<SolveReport> {
    p.check()?;
    let sp = match split_rows(p) {
        Prep::Ready(sp) => sp,
        Prep::TriviallyInfeasible(row, sign) => {
            let mut cert = DVector::zeros(p.a.nrows());
            cert[row] = sign;
            return Ok(SolveReport::without_solution(SolveStatus::Infeasible, 0).with_certificate(cert, 0.0));
        }
    };
    match interior_point(p, &sp, warm_start, settings.ipm_max_iter) {
        IpmEnd::Converged(z, it) => {
            let viol = p.violation(&z);
            if viol > settings.primal_tol {
                return diagnose(p, &sp, it, settings);
            }
            let obj = p.objective_at(&z);
            Ok(SolveReport::optimal(z, obj, it))
        }
        IpmEnd::Failed(it) => diagnose(p, &sp, it, settings),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(h: f64, q: f64, rows: &[(f64, f64, f64)]) -> QuadraticProgram {
        QuadraticProgram::new(
            DMatrix::from_element(1, 1, h),
            DVector::from_element(1, q),
            DMatrix::from_iterator(rows.len(), 1, rows.iter().map(|r| r.0)),
            DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1)),
            DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2)),
        )
    }

    #[test]
    fn active_lower_bound() {
        // ½ z² · 2 = z²
        let rep = qp_solve(&scalar(2.0, 0.0, &[(1.0, 1.0, f64::INFINITY)]), None).unwrap();
        assert_eq!(rep.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(rep.solution.unwrap()[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(rep.objective, 1.0, epsilon = 1e-7);
    }

    #[test]
    fn interior_optimum() {
        let rep = qp_solve(&scalar(2.0, 0.0, &[(1.0, -1.0, 1.0)]), None).unwrap();
        assert_abs_diff_eq!(rep.solution.unwrap()[0], 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(rep.objective, 0.0, epsilon = 1e-7);
    }

    #[test]
    fn empty_feasible_set() {
        let p = scalar(0.0, 0.0, &[(1.0, f64::NEG_INFINITY, -1.0), (1.0, 1.0, f64::INFINITY)]);
        let rep = qp_solve(&p, None).unwrap();
        assert_eq!(rep.status, SolveStatus::Infeasible);
        assert!(rep.solution.is_none());
        assert!(rep.certificate.is_some());
    }

    #[test]
    fn linear_objective_without_bound_is_unbounded() {
        let p = scalar(0.0, -1.0, &[(1.0, 0.0, f64::INFINITY)]);
        let rep = qp_solve(&p, None).unwrap();
        assert_eq!(rep.status, SolveStatus::Unbounded);
    }

    #[test]
    fn equality_rows() {
        // min z1² + z2² s.t. z1 + z2 = 2
        let p = QuadraticProgram::new(
            DMatrix::identity(2, 2) * 2.0,
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 2.0),
            DVector::from_element(1, 2.0),
        );
        let z = qp_solve(&p, None).unwrap().solution.unwrap();
        assert_abs_diff_eq!(z[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(z[1], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn non_psd_and_asymmetric_rejected() {
        let p = scalar(-1.0, 0.0, &[(1.0, -1.0, 1.0)]);
        assert!(matches!(qp_solve(&p, None), Err(Error::InvalidInput(_))));
        let mut p = QuadraticProgram::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            DVector::zeros(2),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::zeros(0),
        );
        assert!(matches!(qp_solve(&p, None), Err(Error::InvalidInput(_))));
        p.hessian = DMatrix::identity(2, 2);
        assert!(qp_solve(&p, None).unwrap().is_optimal());
    }

    #[test]
    fn warm_start_reaches_same_optimum() {
        let p = QuadraticProgram::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            DVector::from_vec(vec![-1.0, 3.0]),
            DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, -1.0, 0.0, 1.0]),
            DVector::from_vec(vec![-1.0, f64::NEG_INFINITY, -0.5]),
            DVector::from_vec(vec![1.0, 0.3, 0.5]),
        );
        let cold = qp_solve(&p, None).unwrap().solution.unwrap();
        let warm = qp_solve(&p, Some(&DVector::from_vec(vec![0.4, -0.2]))).unwrap().solution.unwrap();
        assert!((cold - warm).amax() < 1e-6);
    }
}
