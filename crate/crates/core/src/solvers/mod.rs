//! Linear and convex quadratic programming.
//!
//! Both solvers work on small dense problems (tens of variables, up to a few
//! thousand constraints) and are pure functions of their inputs: the same
//! program and warm start always produce bitwise-identical reports.

use nalgebra::DVector;

mod lp;
mod qp;

pub use lp::{lp_solve, lp_solve_with, LinearProgram};
pub use qp::{qp_solve, qp_solve_with, QuadraticProgram};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// Present iff `status == Optimal`.
    pub solution: Option<DVector<f64>>,
    /// Objective at `solution`; `NAN` when there is no solution.
    pub objective: f64,
    pub iterations: usize,
    /// Unbounded: a ray along which the objective improves without bound.
    /// Infeasible: Farkas multipliers, one per inequality row.
    pub certificate: Option<DVector<f64>>,
    /// Normalised residual of `certificate` (how far it is from an exact
    /// proof); zero when no certificate is attached.
    pub certificate_residual: f64,
}

impl SolveReport {
    pub(crate) fn optimal(x: DVector<f64>, objective: f64, iterations: usize) -> Self {
        SolveReport {
            status: SolveStatus::Optimal,
            solution: Some(x),
            objective,
            iterations,
            certificate: None,
            certificate_residual: 0.0,
        }
    }

    pub(crate) fn without_solution(status: SolveStatus, iterations: usize) -> Self {
        SolveReport {
            status,
            solution: None,
            objective: f64::NAN,
            iterations,
            certificate: None,
            certificate_residual: 0.0,
        }
    }

    pub(crate) fn with_certificate(mut self, cert: DVector<f64>, residual: f64) -> Self {
        self.certificate = Some(cert);
        self.certificate_residual = residual;
        self
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    pub primal_tol: f64,
    pub dual_tol: f64,
    /// Simplex pivot cap; the interior point method uses `ipm_max_iter`.
    pub max_iter: usize,
    pub ipm_max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            primal_tol: 1e-6,
            dual_tol: 1e-6,
            max_iter: 20_000,
            ipm_max_iter: 100,
        }
    }
}
