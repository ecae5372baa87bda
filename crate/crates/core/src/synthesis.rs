//! Offline design: prestabilising gain, terminal cost, contractive polytope
//! and the scalar tube constants used by the online problem.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{box_vertices, build_contractive, spectral_radius, support, unit_cube_vertices, verify_contractive, HPolytope, Hyperbox};
use crate::model::{ConstraintSet, ParametricSystem};
use crate::{Error, Result};

/// Eigenvalue tolerance of the terminal decrease check.
pub const DECREASE_TOL: f64 = 1e-9;
/// Slack allowed between the contractivity certificate and the target rate.
pub const CONTRACTIVITY_TOL: f64 = 1e-8;

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Stabilising solution of `P = AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q` by the
/// structure-preserving doubling iteration.
pub fn solve_dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let m = b.ncols();
    if a.shape() != (n, n) || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::dim("Riccati data has inconsistent dimensions"));
    }
    if min_eig(q) < -1e-12 {
        return Err(Error::invalid("state weight must be positive semi-definite"));
    }
    let r_chol = symmetrize(r)
        .cholesky()
        .ok_or_else(|| Error::invalid("input weight must be positive definite"))?;
    let mut ak = a.clone();
    let mut gk = b * r_chol.solve(&b.transpose());
    let mut hk = symmetrize(q);
    let eye = DMatrix::<f64>::identity(n, n);
    for _ in 0..200 {
        let w = (&eye + &gk * &hk).lu();
        let w_a = w.solve(&ak).ok_or_else(|| Error::NotStabilizable("doubling step became singular".into()))?;
        let w_g = w.solve(&gk).ok_or_else(|| Error::NotStabilizable("doubling step became singular".into()))?;
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &w_a));
        let g_next = symmetrize(&(&gk + &ak * w_g * ak.transpose()));
        let a_next = &ak * &w_a;
        let change = (&h_next - &hk).amax();
        hk = h_next;
        gk = g_next;
        ak = a_next;
        if !hk.iter().all(|v| v.is_finite()) || hk.amax() > 1e15 {
            return Err(Error::NotStabilizable("Riccati iteration diverged".into()));
        }
        if change <= 1e-13 * (1.0 + hk.amax()) {
            let k = lqr_gain(a, b, r, &hk)?;
            let rho = spectral_radius(&(a + b * &k));
            if rho >= 1.0 - 1e-9 {
                return Err(Error::NotStabilizable(format!("closed loop spectral radius {rho}")));
            }
            return Ok(hk);
        }
    }
    Err(Error::NotStabilizable("Riccati iteration did not converge".into()))
}

/// `K = −(R + BᵀPB)⁻¹BᵀPA`, applied as `u = Kx`.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lhs = r + b.transpose() * p * b;
    let rhs = b.transpose() * p * a;
    lhs.lu()
        .solve(&rhs)
        .map(|k| -k)
        .ok_or_else(|| Error::NotStabilizable("R + BᵀPB is singular".into()))
}

/// Smallest eigenvalue over the vertices of `P − A_clᵀPA_cl − Q − KᵀRK`;
/// the terminal cost decreases along every vertex closed loop iff this is
/// `≥ −1e-9`.
pub fn verify_terminal_decrease(
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    sys: &ParametricSystem,
    theta_vertices: &[DVector<f64>],
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(bool, f64)> {
    let stage = q + k.transpose() * r * k;
    let mut worst = f64::INFINITY;
    for t in theta_vertices {
        let acl = sys.closed_loop(t, k)?;
        worst = worst.min(min_eig(&(p - acl.transpose() * p * &acl - &stage)));
    }
    Ok((worst >= -DECREASE_TOL, worst))
}

/// LQR design at the center of `Θ₀`, with the Riccati solution scaled by
/// the smallest `ρ ∈ {1, 1.1, …, 100}` for which the terminal decrease
/// holds at every vertex. Returns `(K, ρP, ρ)`.
pub fn design_gain_and_cost(
    sys: &ParametricSystem,
    theta0: &Hyperbox,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let (a, b) = (sys.a_at(&theta0.center)?, sys.b_at(&theta0.center)?);
    let p = solve_dare(&a, &b, q, r)?;
    let k = lqr_gain(&a, &b, r, &p)?;
    let vertices = box_vertices(theta0)?;
    for step in 0..=990 {
        let rho = 1.0 + 0.1 * step as f64;
        let scaled = rho * &p;
        if verify_terminal_decrease(&k, &scaled, sys, &vertices, q, r)?.0 {
            return Ok((k, scaled, rho));
        }
    }
    Err(Error::TerminalCostUnsatisfiable)
}

/// `c_i = max_{x∈X₀} [F + GK]_i x` per constraint row and
/// `w̄ = max_i max_{w∈W} [H_x]_i w`.
pub fn tube_constants(x0: &HPolytope, z: &ConstraintSet, k: &DMatrix<f64>, w: &HPolytope) -> Result<(DVector<f64>, f64)> {
    let fk = &z.f + &z.g * k;
    let mut c = DVector::zeros(z.nrows());
    for i in 0..z.nrows() {
        c[i] = support(x0, &fk.row(i).transpose())?;
    }
    let mut w_bar = f64::NEG_INFINITY;
    for i in 0..x0.nrows() {
        w_bar = w_bar.max(support(w, &x0.a.row(i).transpose())?);
    }
    Ok((c, w_bar))
}

/// Growth of `X₀` at the center parameter plus the worst-case effect of the
/// parameter spread `eta`:
/// `max_i h(X₀, [H]_i A_cl(θ̄)) + η max_{i,j} h(X₀, [H]_i Σ_s ẽ_{j,s}(A_s + B_sK))`.
pub fn lambda_bar(x0: &HPolytope, sys: &ParametricSystem, k: &DMatrix<f64>, center: &DVector<f64>, eta: f64) -> Result<f64> {
    let acl = sys.closed_loop(center, k)?;
    let mut first = f64::NEG_INFINITY;
    for i in 0..x0.nrows() {
        first = first.max(support(x0, &(x0.a.row(i) * &acl).transpose())?);
    }
    if eta == 0.0 {
        return Ok(first);
    }
    let directions: Vec<DMatrix<f64>> = unit_cube_vertices(sys.p())?
        .iter()
        .map(|e| {
            let mut m = DMatrix::zeros(sys.n(), sys.n());
            for s in 0..sys.p() {
                m += e[s] * (&sys.a[s + 1] + &sys.b[s + 1] * k);
            }
            m
        })
        .collect();
    let mut second = f64::NEG_INFINITY;
    for i in 0..x0.nrows() {
        for m in &directions {
            second = second.max(support(x0, &(x0.a.row(i) * m).transpose())?);
        }
    }
    Ok(first + eta * second)
}

/// `ũ_i = max_{θ∈Θ₀} [H_x]_i B(θ)(u_ss(θ_a) − u_ss(θ))` for hover inputs of
/// the form `u_ss(θ) = hover_unit / θ`, i.e. the worst per-row effect of
/// applying the hover input of an assumed parameter `θ_a` to a plant with
/// parameter `θ`.
///
/// For one parameter the row expression is `a + bθ + c/θ`, so the interval
/// endpoints and the interior stationary point give the exact maximum. With
/// more parameters only the vertices of `Θ₀` are checked.
pub fn steady_state_robustification(
    sys: &ParametricSystem,
    theta0: &Hyperbox,
    x0: &HPolytope,
    hover_unit: &DVector<f64>,
    theta_applied: &DVector<f64>,
) -> Result<DVector<f64>> {
    if hover_unit.len() != sys.m() || theta_applied.len() != sys.p() {
        return Err(Error::dim("hover input or applied parameter has the wrong length"));
    }
    if theta_applied.iter().any(|t| *t <= 0.0) || theta0.lower().iter().any(|t| *t <= 0.0) {
        return Err(Error::invalid("hover inputs are only defined for positive parameters"));
    }
    let scale = |theta: &DVector<f64>| -> f64 {
        // a single scalar sets the hover level; use the first coordinate
        theta[0]
    };
    let applied = hover_unit / scale(theta_applied);
    let mut samples = box_vertices(theta0)?;
    if sys.p() == 1 {
        let (lo, hi) = (theta0.lower()[0], theta0.upper()[0]);
        // row value f(θ) = r·B₀u_a − r·B₀v/θ + θ r·B₁u_a − r·B₁v
        for i in 0..x0.nrows() {
            let row = x0.a.row(i);
            let b = (row * &sys.b[1] * &applied)[0];
            let c = -(row * &sys.b[0] * hover_unit)[0];
            if b != 0.0 && c / b > 0.0 {
                let t = (c / b).sqrt();
                if t > lo && t < hi {
                    samples.push(DVector::from_element(1, t));
                }
            }
        }
    } else {
        log::warn!("ũ evaluated on the vertices of Θ₀ only; not exact for more than one parameter");
    }
    let mut out = DVector::from_element(x0.nrows(), f64::NEG_INFINITY);
    for theta in &samples {
        let err = &applied - hover_unit / scale(theta);
        let effect = &x0.a * (sys.b_at(theta)? * err);
        for i in 0..out.len() {
            out[i] = out[i].max(effect[i]);
        }
    }
    Ok(out.map(|v| v.max(0.0)))
}

/// Everything needed to run the online controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisArtifacts {
    pub system: ParametricSystem,
    pub constraints: ConstraintSet,
    pub theta0: Hyperbox,
    pub disturbance: HPolytope,
    #[serde(with = "crate::serde_mat::matrix")]
    pub q: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::matrix")]
    pub r: DMatrix<f64>,
    pub horizon: usize,
    #[serde(with = "crate::serde_mat::matrix")]
    pub k: DMatrix<f64>,
    /// Terminal weight, already inflated.
    #[serde(with = "crate::serde_mat::matrix")]
    pub p: DMatrix<f64>,
    pub rho: f64,
    pub x0: HPolytope,
    /// Target contraction rate, used online.
    pub lambda: f64,
    /// Certified contraction of `X₀` over the vertices of `Θ₀`.
    pub lambda_certified: f64,
    /// Contraction bound from the center and spread of `Θ₀`.
    pub lambda_bar: f64,
    #[serde(with = "crate::serde_mat::vector")]
    pub c: DVector<f64>,
    pub w_bar: f64,
    #[serde(with = "crate::serde_mat::option_vector", default)]
    pub u_tilde: Option<DVector<f64>>,
    /// Hash of the inputs that produced these artifacts.
    #[serde(default)]
    pub input_hash: String,
}

impl SynthesisArtifacts {
    pub fn n_x(&self) -> usize {
        self.x0.nrows()
    }

    pub fn c_max(&self) -> f64 {
        self.c.max()
    }

    pub fn u_tilde_max(&self) -> f64 {
        self.u_tilde.as_ref().map_or(0.0, |u| u.max())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Inputs of the offline pipeline.
#[derive(Debug, Clone)]
pub struct SynthesisInputs {
    pub system: ParametricSystem,
    pub constraints: ConstraintSet,
    pub theta0: Hyperbox,
    pub disturbance: HPolytope,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub horizon: usize,
    pub lambda: f64,
    pub max_rows: usize,
    /// `(hover input at θ = 1, assumed θ)` when steady-state errors are
    /// treated as an extra disturbance.
    pub robustify: Option<(DVector<f64>, DVector<f64>)>,
}

/// Gain, terminal cost, contractive set and tube constants.
pub fn synthesize(inputs: &SynthesisInputs) -> Result<SynthesisArtifacts> {
    if inputs.horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let sys = &inputs.system;
    let (k, p, rho) = design_gain_and_cost(sys, &inputs.theta0, &inputs.q, &inputs.r)?;
    let vertices = box_vertices(&inputs.theta0)?;
    let x0 = build_contractive(&inputs.constraints, sys, &k, &vertices, inputs.lambda, inputs.max_rows)?;
    let cert = verify_contractive(&x0, sys, &k, &vertices)?;
    let (c, w_bar) = tube_constants(&x0, &inputs.constraints, &k, &inputs.disturbance)?;
    let lb = lambda_bar(&x0, sys, &k, &inputs.theta0.center, inputs.theta0.side)?;
    let u_tilde = match &inputs.robustify {
        Some((unit, applied)) => Some(steady_state_robustification(sys, &inputs.theta0, &x0, unit, applied)?),
        None => None,
    };
    Ok(SynthesisArtifacts {
        system: sys.clone(),
        constraints: inputs.constraints.clone(),
        theta0: inputs.theta0.clone(),
        disturbance: inputs.disturbance.clone(),
        q: inputs.q.clone(),
        r: inputs.r.clone(),
        horizon: inputs.horizon,
        k,
        p,
        rho,
        x0,
        lambda: inputs.lambda,
        lambda_certified: cert.lambda,
        lambda_bar: lb,
        c,
        w_bar,
        u_tilde,
        input_hash: String::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    /// Turns a failing report into [`Error::Validation`].
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            Err(Error::Validation(self.to_string()))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<5} {:<28} value {:>12.6e}  limit {:>12.6e}",
                if c.passed { "ok" } else { "FAIL" },
                c.name,
                c.value,
                c.limit
            )?;
        }
        Ok(())
    }
}

/// Re-checks the standing conditions of a set of artifacts against the
/// disturbance set `w`: tube recursion margin, terminal decrease at every
/// vertex of `Θ₀`, and contractivity of `X₀`.
pub fn validate_artifacts(a: &SynthesisArtifacts, w: &HPolytope) -> Result<ValidationReport> {
    let vertices = box_vertices(&a.theta0)?;
    let (_, w_bar) = tube_constants(&a.x0, &a.constraints, &a.k, w)?;
    let w_bar = w_bar.max(a.w_bar);
    let margin = a.lambda + a.c_max() * (w_bar + a.u_tilde_max());
    let (decrease_ok, worst) = verify_terminal_decrease(&a.k, &a.p, &a.system, &vertices, &a.q, &a.r)?;
    let cert = verify_contractive(&a.x0, &a.system, &a.k, &vertices)?;
    Ok(ValidationReport {
        checks: vec![
            ValidationCheck { name: "tube recursion margin".into(), passed: margin <= 1.0, value: margin, limit: 1.0 },
            ValidationCheck {
                name: "terminal cost decrease".into(),
                passed: decrease_ok,
                value: worst,
                limit: -DECREASE_TOL,
            },
            ValidationCheck {
                name: "contractivity".into(),
                passed: cert.lambda <= a.lambda + CONTRACTIVITY_TOL,
                value: cert.lambda,
                limit: a.lambda + CONTRACTIVITY_TOL,
            },
        ],
    })
}
