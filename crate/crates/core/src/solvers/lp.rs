//! Dense two-phase simplex.
//!
//! `maximize cᵀx s.t. Ax ≤ b` with free `x` is solved through its dual
//! `minimize bᵀy s.t. Aᵀy = c, y ≥ 0`. The dual tableau has only `n` rows
//! (the number of primal variables), which keeps support-function
//! evaluations over polytopes with hundreds of facets cheap. The primal
//! point is recovered from the simplex multipliers of the optimal basis.

use nalgebra::{DMatrix, DVector};

use super::{SolveReport, SolveStatus, SolverSettings};
use crate::{Error, Result};

/// `maximize objectiveᵀ x` subject to `a x ≤ b`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LinearProgram {
    pub fn new(objective: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        LinearProgram { objective, a, b }
    }

    fn check(&self) -> Result<()> {
        let (rows, n) = self.a.shape();
        if self.objective.len() != n {
            return Err(Error::dim(format!(
                "objective has length {} but constraint matrix has {n} columns",
                self.objective.len()
            )));
        }
        if self.b.len() != rows {
            return Err(Error::dim(format!(
                "offset vector has length {} but constraint matrix has {rows} rows",
                self.b.len()
            )));
        }
        if rows == 0 {
            return Err(Error::invalid("linear program needs at least one constraint"));
        }
        let finite = self.a.iter().chain(self.b.iter()).chain(self.objective.iter());
        if !finite.into_iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("linear program data must be finite"));
        }
        Ok(())
    }
}

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-10;
const PHASE1_TOL: f64 = 1e-9;
const DEGENERATE_SWITCH: usize = 50;

enum Outcome {
    Optimal { basis: Vec<usize>, mult: Vec<f64> },
    /// Phase 1 failed; `rho` satisfies `Mᵀρ ≤ 0`, `rhsᵀρ > 0`.
    Infeasible { rho: Vec<f64> },
    /// Improving ray `d ≥ 0` with `M d = 0`, `costᵀd < 0`.
    Unbounded { ray: Vec<f64> },
    MaxIter,
}

struct Tableau {
    rows: usize,
    nstruct: usize,
    width: usize,
    // rows × width, then one objective row; last column is the right-hand side
    t: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.t[i * self.width + self.width - 1]
    }

    #[inline]
    fn obj(&self, j: usize) -> f64 {
        self.get(self.rows, j)
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.t[r * w + c];
        for v in &mut self.t[r * w..(r + 1) * w] {
            *v /= p;
        }
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = row[c];
            if f != 0.0 {
                for (x, &y) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * y;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    fn set_objective(&mut self, cost: &[f64]) {
        let (m, w) = (self.rows, self.width);
        let mut obj = vec![0.0; w];
        obj[..cost.len()].copy_from_slice(cost);
        for i in 0..m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for (o, &t) in obj.iter_mut().zip(&self.t[i * w..(i + 1) * w]) {
                    *o -= cb * t;
                }
            }
        }
        self.t[m * w..].copy_from_slice(&obj);
    }

    /// Runs simplex iterations on the current objective row over structural
    /// columns. Returns `Ok(None)` at optimality, `Ok(Some(col))` when column
    /// `col` is an unbounded direction.
    fn iterate(&mut self, max_iter: usize, iters: &mut usize) -> std::result::Result<Option<usize>, ()> {
        let mut degenerate = 0usize;
        let mut bland = false;
        loop {
            let entering = if bland {
                (0..self.nstruct).find(|&j| self.obj(j) < -COST_TOL)
            } else {
                let mut best = None;
                let mut best_val = -COST_TOL;
                for j in 0..self.nstruct {
                    let v = self.obj(j);
                    if v < best_val {
                        best_val = v;
                        best = Some(j);
                    }
                }
                best
            };
            let Some(c) = entering else { return Ok(None) };
            if *iters >= max_iter {
                return Err(());
            }

            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for i in 0..self.rows {
                let a = self.get(i, c);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            if ratio < best_ratio - 1e-12 {
                                true
                            } else if ratio <= best_ratio + 1e-12 {
                                if bland {
                                    self.basis[i] < self.basis[l]
                                } else {
                                    a > self.get(l, c)
                                }
                            } else {
                                false
                            }
                        }
                    };
                    if better {
                        leave = Some(i);
                        best_ratio = best_ratio.min(ratio);
                    }
                }
            }
            let Some(r) = leave else { return Ok(Some(c)) };
            if best_ratio <= 1e-12 {
                degenerate += 1;
                if degenerate > DEGENERATE_SWITCH {
                    bland = true;
                }
            } else {
                degenerate = 0;
            }
            self.pivot(r, c);
            *iters += 1;
        }
    }
}

/// `minimize costᵀy s.t. M y = rhs, y ≥ 0`, `M` given column-wise as the
/// rows of `mt` (so `mt` is `N × m`).
fn standard_simplex(mt: &DMatrix<f64>, rhs: &[f64], cost: &[f64], max_iter: usize, iters: &mut usize) -> Outcome {
    let (nstruct, m) = mt.shape();
    let width = nstruct + m + 1;
    let mut t = vec![0.0; (m + 1) * width];
    let mut sign = vec![1.0; m];
    for i in 0..m {
        if rhs[i] < 0.0 {
            sign[i] = -1.0;
        }
        let row = &mut t[i * width..(i + 1) * width];
        for j in 0..nstruct {
            row[j] = sign[i] * mt[(j, i)];
        }
        row[nstruct + i] = 1.0;
        row[width - 1] = sign[i] * rhs[i];
    }
    let mut tab = Tableau { rows: m, nstruct, width, t, basis: (nstruct..nstruct + m).collect() };

    // phase 1: minimise the sum of artificials
    let mut c1 = vec![0.0; nstruct + m];
    c1[nstruct..].iter_mut().for_each(|c| *c = 1.0);
    tab.set_objective(&c1);
    if tab.iterate(max_iter, iters).is_err() {
        return Outcome::MaxIter;
    }
    let infeas: f64 = (0..m).filter(|&i| tab.basis[i] >= nstruct).map(|i| tab.rhs(i)).sum();
    let scale = 1.0 + rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if infeas > PHASE1_TOL * scale {
        let rho = (0..m).map(|i| sign[i] * (1.0 - tab.obj(nstruct + i))).collect();
        return Outcome::Infeasible { rho };
    }

    // drive remaining artificials out of the basis where possible
    for i in 0..m {
        if tab.basis[i] >= nstruct {
            let mut best = None;
            let mut best_abs = 1e-9;
            for j in 0..nstruct {
                let a = tab.get(i, j).abs();
                if a > best_abs {
                    best_abs = a;
                    best = Some(j);
                }
            }
            if let Some(j) = best {
                tab.pivot(i, j);
            }
        }
    }

    let mut c2 = vec![0.0; nstruct + m];
    c2[..nstruct].copy_from_slice(cost);
    tab.set_objective(&c2);
    match tab.iterate(max_iter, iters) {
        Err(()) => Outcome::MaxIter,
        Ok(Some(c)) => {
            let mut ray = vec![0.0; nstruct];
            ray[c] = 1.0;
            for i in 0..m {
                let b = tab.basis[i];
                if b < nstruct {
                    ray[b] = -tab.get(i, c);
                }
            }
            Outcome::Unbounded { ray }
        }
        Ok(None) => {
            // multipliers π with Mᵀπ ≤ cost; read from artificial columns
            let mult = (0..m).map(|i| -sign[i] * tab.obj(nstruct + i)).collect();
            Outcome::Optimal { basis: tab.basis.clone(), mult }
        }
    }
}

/// Solves `maximize cᵀx s.t. Ax ≤ b`.
///
/// Optimal reports carry a vertex solution. Unbounded reports carry a ray `d`
/// with `Ad ≤ 0`, `cᵀd > 0`; infeasible ones carry Farkas multipliers `y ≥ 0`
/// with `Aᵀy = 0`, `bᵀy < 0`.
pub fn lp_solve(p: &LinearProgram) -> Result<SolveReport> {
    lp_solve_with(p, &SolverSettings::default())
}

/// [`lp_solve`] with explicit settings (only the pivot cap is used).
pub fn lp_solve_with(p: &LinearProgram, settings: &SolverSettings) -> Result<SolveReport> {
    p.check()?;
    let (rows, n) = p.a.shape();

    // Row normalisation; zero rows are either vacuous or a direct proof of
    // infeasibility.
    let mut keep = Vec::with_capacity(rows);
    let mut norms = Vec::with_capacity(rows);
    for i in 0..rows {
        let norm = p.a.row(i).norm();
        if norm <= 1e-14 {
            if p.b[i] < -1e-12 {
                let mut cert = DVector::zeros(rows);
                cert[i] = 1.0;
                return Ok(SolveReport::without_solution(SolveStatus::Infeasible, 0).with_certificate(cert, 0.0));
            }
            continue;
        }
        keep.push(i);
        norms.push(norm);
    }
    if keep.is_empty() {
        return Ok(if p.objective.norm() == 0.0 {
            SolveReport::optimal(DVector::zeros(n), 0.0, 0)
        } else {
            SolveReport::without_solution(SolveStatus::Unbounded, 0).with_certificate(p.objective.clone(), 0.0)
        });
    }
    let r = keep.len();
    let a = DMatrix::from_fn(r, n, |i, j| p.a[(keep[i], j)] / norms[i]);
    let b: Vec<f64> = (0..r).map(|i| p.b[keep[i]] / norms[i]).collect();
    let c: Vec<f64> = p.objective.iter().copied().collect();

    let expand = |y: &[f64]| {
        let mut full = DVector::zeros(rows);
        for (k, &i) in keep.iter().enumerate() {
            full[i] = y[k] / norms[k];
        }
        full
    };
    let farkas = |y: &[f64], iters: usize| {
        let yv = DVector::from_column_slice(y);
        let by = DVector::from_column_slice(&b).dot(&yv);
        let resid = (a.transpose() * &yv).amax() / by.abs().max(1e-300);
        SolveReport::without_solution(SolveStatus::Infeasible, iters).with_certificate(expand(y), resid)
    };

    let mut iters = 0;
    match standard_simplex(&a, &c, &b, settings.max_iter, &mut iters) {
        Outcome::MaxIter => Ok(SolveReport::without_solution(SolveStatus::MaxIterations, iters)),
        Outcome::Optimal { basis, mult } => {
            let x = refine_vertex(&a, &b, n, &basis, mult);
            let obj = p.objective.dot(&x);
            Ok(SolveReport::optimal(x, obj, iters))
        }
        Outcome::Unbounded { ray } => Ok(farkas(&ray, iters)),
        Outcome::Infeasible { rho } => {
            // The dual is infeasible: the primal is unbounded when feasible.
            let zero = vec![0.0; n];
            match standard_simplex(&a, &zero, &b, settings.max_iter, &mut iters) {
                Outcome::Unbounded { ray } => Ok(farkas(&ray, iters)),
                Outcome::MaxIter => Ok(SolveReport::without_solution(SolveStatus::MaxIterations, iters)),
                _ => {
                    let d = DVector::from_vec(rho);
                    let gain = p.objective.dot(&d);
                    let resid = (&a * &d).max().max(0.0) / gain.abs().max(1e-300);
                    Ok(SolveReport::without_solution(SolveStatus::Unbounded, iters).with_certificate(d, resid))
                }
            }
        }
    }
}

/// Re-solves the active constraints of the optimal basis for an accurate
/// vertex, falling back to the tableau multipliers when the basis matrix is
/// singular.
fn refine_vertex(a: &DMatrix<f64>, b: &[f64], n: usize, basis: &[usize], mult: Vec<f64>) -> DVector<f64> {
    let r = a.nrows();
    let fallback = DVector::from_vec(mult);
    if basis.iter().any(|&j| j >= r) {
        return fallback;
    }
    let mut bt = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for (k, &j) in basis.iter().enumerate() {
        bt.row_mut(k).copy_from(&a.row(j));
        rhs[k] = b[j];
    }
    match bt.lu().solve(&rhs) {
        Some(x) if x.iter().all(|v| v.is_finite()) => {
            let viol_refined = (a * &x).iter().zip(b).fold(0.0f64, |m, (ax, bi)| m.max(ax - bi));
            let viol_tab = (a * &fallback).iter().zip(b).fold(0.0f64, |m, (ax, bi)| m.max(ax - bi));
            if viol_refined <= viol_tab.max(1e-12) {
                x
            } else {
                fallback
            }
        }
        _ => fallback,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_box(n: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(2 * n, n);
        for i in 0..n {
            a[(2 * i, i)] = 1.0;
            a[(2 * i + 1, i)] = -1.0;
        }
        (a, DVector::from_element(2 * n, 1.0))
    }

    #[test]
    fn box_support_single_axis() {
        let (a, b) = unit_box(2);
        let rep = lp_solve(&LinearProgram::new(DVector::from_vec(vec![1.0, 0.0]), a, b)).unwrap();
        assert_eq!(rep.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(rep.objective, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.solution.unwrap()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn box_support_diagonal() {
        let (a, b) = unit_box(2);
        let rep = lp_solve(&LinearProgram::new(DVector::from_vec(vec![1.0, 1.0]), a, b)).unwrap();
        assert_abs_diff_eq!(rep.objective, 2.0, epsilon = 1e-12);
        let x = rep.solution.unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn half_line_is_unbounded() {
        let a = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let rep = lp_solve(&LinearProgram::new(DVector::from_vec(vec![1.0]), a, DVector::zeros(1))).unwrap();
        assert_eq!(rep.status, SolveStatus::Unbounded);
        assert!(rep.solution.is_none());
        let ray = rep.certificate.unwrap();
        assert!(ray[0] > 0.0);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        // x ≤ -1 and -x ≤ -1
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![-1.0, -1.0]);
        let rep = lp_solve(&LinearProgram::new(DVector::from_vec(vec![1.0]), a.clone(), b.clone())).unwrap();
        assert_eq!(rep.status, SolveStatus::Infeasible);
        let y = rep.certificate.unwrap();
        assert!(y.iter().all(|v| *v >= -1e-12));
        assert!((a.transpose() * &y).amax() < 1e-9);
        assert!(b.dot(&y) < 0.0);
    }

    #[test]
    fn infeasible_and_unbounded_direction_reports_infeasible() {
        // x1 ≤ -1, -x1 ≤ -1, x2 free: the dual is infeasible too
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let b = DVector::from_vec(vec![-1.0, -1.0]);
        let rep = lp_solve(&LinearProgram::new(DVector::from_vec(vec![0.0, 1.0]), a, b)).unwrap();
        assert_eq!(rep.status, SolveStatus::Infeasible);
    }

    #[test]
    fn zero_rows_are_vacuous_or_fatal() {
        let a = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, -1.0]);
        let rep = lp_solve(&LinearProgram::new(
            DVector::from_vec(vec![1.0]),
            a.clone(),
            DVector::from_vec(vec![0.5, 2.0, 2.0]),
        ))
        .unwrap();
        assert_abs_diff_eq!(rep.objective, 2.0, epsilon = 1e-12);
        let rep = lp_solve(&LinearProgram::new(DVector::from_vec(vec![1.0]), a, DVector::from_vec(vec![-0.5, 2.0, 2.0])))
            .unwrap();
        assert_eq!(rep.status, SolveStatus::Infeasible);
    }

    #[test]
    fn degenerate_vertex() {
        // many constraints active at the optimum (1, 1)
        let mut rows = vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 1.0, 1.0, -1.0, 0.0, 0.0, -1.0];
        rows.extend_from_slice(&[2.0, 1.0, 1.0, 2.0]);
        let a = DMatrix::from_row_slice(8, 2, &rows);
        let b = DVector::from_vec(vec![1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 3.0, 3.0]);
        let rep = lp_solve(&LinearProgram::new(DVector::from_vec(vec![1.0, 1.0]), a, b)).unwrap();
        assert_abs_diff_eq!(rep.objective, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn malformed_dimensions_rejected() {
        let a = DMatrix::zeros(2, 2);
        let err = lp_solve(&LinearProgram::new(DVector::zeros(3), a, DVector::zeros(2)));
        assert!(matches!(err, Err(Error::Dimension(_))));
        let err = lp_solve(&LinearProgram::new(DVector::zeros(2), DMatrix::zeros(0, 2), DVector::zeros(0)));
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pivot_cap_reports_max_iterations() {
        let (a, b) = unit_box(3);
        let settings = SolverSettings { max_iter: 1, ..Default::default() };
        let rep = lp_solve_with(&LinearProgram::new(DVector::from_vec(vec![1.0, 1.0, 1.0]), a, b), &settings).unwrap();
        assert_eq!(rep.status, SolveStatus::MaxIterations);
        assert!(rep.solution.is_none());
    }
}
