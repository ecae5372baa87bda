//! Polytopes in half-space form, hypercube parameter sets, support functions
//! and λ-contractive set construction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::{ConstraintSet, ParametricSystem};
use crate::solvers::{lp_solve, LinearProgram, SolveStatus};
use crate::{Error, Result};

/// `{x : a x ≤ b}`. Serialised as `{"H": [[...]], "h": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HPolytope {
    #[serde(rename = "H", with = "crate::serde_mat::matrix")]
    pub a: DMatrix<f64>,
    #[serde(rename = "h", with = "crate::serde_mat::vector")]
    pub b: DVector<f64>,
}

impl HPolytope {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() == 0 {
            return Err(Error::invalid("polytope needs at least one row"));
        }
        if a.nrows() != b.len() {
            return Err(Error::dim(format!("{} rows but {} offsets", a.nrows(), b.len())));
        }
        if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("polytope data must be finite"));
        }
        Ok(HPolytope { a, b })
    }

    /// Axis-aligned box `lower ≤ x ≤ upper` as `2n` rows (upper face, then
    /// lower face, per coordinate).
    pub fn from_bounds(lower: &DVector<f64>, upper: &DVector<f64>) -> Result<Self> {
        let n = lower.len();
        if upper.len() != n {
            return Err(Error::dim("box bounds differ in length"));
        }
        if (0..n).any(|i| lower[i] > upper[i]) {
            return Err(Error::invalid("box lower bound exceeds upper bound"));
        }
        let mut a = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for i in 0..n {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = upper[i];
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -lower[i];
        }
        HPolytope::new(a, b)
    }

    /// Box symmetric about the origin with the given half-widths.
    pub fn symmetric_box(half_widths: &DVector<f64>) -> Result<Self> {
        HPolytope::from_bounds(&(-half_widths), half_widths)
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        (&self.a * x - &self.b).iter().all(|v| *v <= tol)
    }

    /// Scales every row so its offset is 1. All offsets must be positive.
    pub fn normalized(&self) -> Result<Self> {
        if self.b.iter().any(|v| *v <= 0.0) {
            return Err(Error::invalid("cannot normalise rows with non-positive offsets"));
        }
        let a = DMatrix::from_fn(self.nrows(), self.dim(), |i, j| self.a[(i, j)] / self.b[i]);
        HPolytope::new(a, DVector::from_element(self.nrows(), 1.0))
    }

    /// Vertices of an axis-aligned box polytope built by [`HPolytope::from_bounds`].
    /// Coordinates with zero width collapse, so the list is deduplicated.
    pub fn box_vertices(&self) -> Result<Vec<DVector<f64>>> {
        let n = self.dim();
        let mut lower = DVector::zeros(n);
        let mut upper = DVector::zeros(n);
        for i in 0..n {
            upper[i] = support(self, &unit(n, i, 1.0))?;
            lower[i] = -support(self, &unit(n, i, -1.0))?;
        }
        let free: Vec<usize> = (0..n).filter(|&i| upper[i] - lower[i] > 0.0).collect();
        if free.len() > 20 {
            return Err(Error::invalid("box has more than 2^20 vertices"));
        }
        Ok((0..1usize << free.len())
            .map(|mask| {
                let mut v = lower.clone();
                for (bit, &i) in free.iter().enumerate() {
                    if mask >> bit & 1 == 1 {
                        v[i] = upper[i];
                    }
                }
                v
            })
            .collect())
    }
}

fn unit(n: usize, i: usize, s: f64) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = s;
    e
}

/// `{center} ⊕ side·𝔹_p` where `𝔹_p = {x : ‖x‖∞ ≤ ½}`: the hypercube with
/// edge length `side`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperbox {
    #[serde(with = "crate::serde_mat::vector")]
    pub center: DVector<f64>,
    pub side: f64,
}

impl Hyperbox {
    pub fn new(center: DVector<f64>, side: f64) -> Result<Self> {
        if !(side >= 0.0) || !side.is_finite() {
            return Err(Error::invalid(format!("hypercube side must be finite and ≥ 0, got {side}")));
        }
        if center.is_empty() || !center.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("hypercube center must be a nonempty finite vector"));
        }
        Ok(Hyperbox { center, side })
    }

    /// Interval `[lower, upper]` for a scalar parameter.
    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        if lower > upper {
            return Err(Error::invalid(format!("interval [{lower}, {upper}] is empty")));
        }
        Hyperbox::new(DVector::from_element(1, 0.5 * (lower + upper)), upper - lower)
    }

    /// Smallest hypercube containing the per-axis box `[lower, upper]`,
    /// centred on the box.
    pub fn covering(lower: &DVector<f64>, upper: &DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dim("box bounds differ in length"));
        }
        let side = (upper - lower).max().max(0.0);
        Hyperbox::new(0.5 * (lower + upper), side)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn lower(&self) -> DVector<f64> {
        self.center.add_scalar(-0.5 * self.side)
    }

    pub fn upper(&self) -> DVector<f64> {
        self.center.add_scalar(0.5 * self.side)
    }

    pub fn contains(&self, theta: &DVector<f64>, tol: f64) -> bool {
        theta.len() == self.dim() && (theta - &self.center).amax() <= 0.5 * self.side + tol
    }

    /// Componentwise clamp, which is the Euclidean projection onto a box.
    pub fn project(&self, theta: &DVector<f64>) -> DVector<f64> {
        let (lo, hi) = (self.lower(), self.upper());
        DVector::from_fn(theta.len(), |i, _| theta[i].clamp(lo[i], hi[i]))
    }

    pub fn to_polytope(&self) -> Result<HPolytope> {
        HPolytope::from_bounds(&self.lower(), &self.upper())
    }
}

/// `max_{x∈P} directionᵀx`.
///
/// Errors with [`Error::Unbounded`] if the maximum is infinite and with
/// [`Error::EmptySet`] if `P` is empty.
pub fn support(p: &HPolytope, direction: &DVector<f64>) -> Result<f64> {
    if direction.len() != p.dim() {
        return Err(Error::dim(format!("direction has length {}, polytope dimension {}", direction.len(), p.dim())));
    }
    if direction.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let rep = lp_solve(&LinearProgram::new(direction.clone(), p.a.clone(), p.b.clone()))?;
    match rep.status {
        SolveStatus::Optimal => Ok(rep.objective),
        SolveStatus::Unbounded => Err(Error::Unbounded(format!("support unbounded along {:?}", direction.as_slice()))),
        SolveStatus::Infeasible => Err(Error::EmptySet("support of an empty polytope".into())),
        SolveStatus::MaxIterations => Err(Error::Solver("support LP hit the pivot cap".into())),
    }
}

/// Vertices of a hypercube. A zero side yields the single center point.
pub fn box_vertices(b: &Hyperbox) -> Result<Vec<DVector<f64>>> {
    let p = b.dim();
    if p > 20 {
        return Err(Error::invalid(format!("parameter dimension {p} exceeds the vertex enumeration limit of 20")));
    }
    if b.side == 0.0 {
        return Ok(vec![b.center.clone()]);
    }
    Ok(unit_cube_vertices(p)?.into_iter().map(|e| &b.center + b.side * e).collect())
}

/// The `2^p` vertices of `𝔹_p`, each coordinate `±½`.
pub fn unit_cube_vertices(p: usize) -> Result<Vec<DVector<f64>>> {
    if p > 20 {
        return Err(Error::invalid(format!("parameter dimension {p} exceeds the vertex enumeration limit of 20")));
    }
    Ok((0..1usize << p)
        .map(|mask| DVector::from_fn(p, |i, _| if mask >> i & 1 == 1 { 0.5 } else { -0.5 }))
        .collect())
}

/// Per-row, per-vertex contraction values of a polytope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractivityCertificate {
    pub lambda: f64,
    /// `values[(i, j)] = max_{x∈X} [H]_i A_cl(θ_j) x`.
    #[serde(with = "crate::serde_mat::matrix")]
    pub values: DMatrix<f64>,
}

fn check_unit_offsets(x: &HPolytope) -> Result<()> {
    if x.b.iter().any(|v| (v - 1.0).abs() > 1e-12) {
        return Err(Error::invalid("polytope offsets must all equal 1"));
    }
    Ok(())
}

/// Largest one-step growth of `X = {x : Hx ≤ 1}` under `A(θ) + B(θ)K` over
/// the given parameter vertices. `X` is λ-contractive on their convex hull
/// iff the returned `lambda ≤ λ`.
pub fn verify_contractive(
    x: &HPolytope,
    sys: &ParametricSystem,
    k: &DMatrix<f64>,
    theta_vertices: &[DVector<f64>],
) -> Result<ContractivityCertificate> {
    check_unit_offsets(x)?;
    if theta_vertices.is_empty() {
        return Err(Error::invalid("no parameter vertices supplied"));
    }
    let closed: Vec<DMatrix<f64>> = theta_vertices.iter().map(|t| sys.closed_loop(t, k)).collect::<Result<_>>()?;
    let mut values = DMatrix::zeros(x.nrows(), closed.len());
    for i in 0..x.nrows() {
        let row = x.a.row(i);
        for (j, acl) in closed.iter().enumerate() {
            values[(i, j)] = support(x, &(row * acl).transpose())?;
        }
    }
    Ok(ContractivityCertificate { lambda: values.max(), values })
}

/// Removes rows that do not change the point set. A row is dropped when its
/// maximum over the remaining rows does not exceed its offset.
pub fn remove_redundant(p: &HPolytope) -> Result<HPolytope> {
    remove_redundant_from(p, 0)
}

/// Like [`remove_redundant`] but never removes the first `keep` rows.
pub fn remove_redundant_from(p: &HPolytope, keep: usize) -> Result<HPolytope> {
    let mut active: Vec<bool> = vec![true; p.nrows()];
    for i in (keep..p.nrows()).rev() {
        let others: Vec<usize> = (0..p.nrows()).filter(|&r| r != i && active[r]).collect();
        if others.is_empty() {
            continue;
        }
        let a = p.a.select_rows(others.iter());
        let b = p.b.select_rows(others.iter());
        let rep = lp_solve(&LinearProgram::new(p.a.row(i).transpose(), a, b))?;
        match rep.status {
            SolveStatus::Optimal => {
                if rep.objective <= p.b[i] + 1e-9 * (1.0 + p.b[i].abs()) {
                    active[i] = false;
                }
            }
            SolveStatus::Unbounded => {}
            SolveStatus::Infeasible => return Err(Error::EmptySet("redundancy removal on an empty polytope".into())),
            SolveStatus::MaxIterations => return Err(Error::Solver("redundancy LP hit the pivot cap".into())),
        }
    }
    let rows: Vec<usize> = (0..p.nrows()).filter(|&r| active[r]).collect();
    HPolytope::new(p.a.select_rows(rows.iter()), p.b.select_rows(rows.iter()))
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

const ADD_TOL: f64 = 1e-9;

/// Builds `X₀ = {x : H x ≤ 1}` that is λ-contractive under `A(θ) + B(θ)K`
/// for every supplied vertex.
///
/// Starts from the stacked rows `F` and `GK` (zero rows dropped, each scaled
/// to offset 1) and repeatedly appends `(1/λ)[H]_i A_cl(θ_j)` for every row
/// whose image under some vertex leaves `λX₀`. After each sweep over the
/// pending rows, redundant appended rows are pruned; the initial rows are
/// always kept.
pub fn build_contractive(
    z: &ConstraintSet,
    sys: &ParametricSystem,
    k: &DMatrix<f64>,
    theta_vertices: &[DVector<f64>],
    lambda: f64,
    max_rows: usize,
) -> Result<HPolytope> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::invalid(format!("contraction rate must lie in (0, 1), got {lambda}")));
    }
    if theta_vertices.is_empty() {
        return Err(Error::invalid("no parameter vertices supplied"));
    }
    let n = sys.n();
    if z.f.ncols() != n || z.g.ncols() != sys.m() || k.shape() != (sys.m(), n) {
        return Err(Error::dim("constraint set, gain and system dimensions disagree"));
    }
    let closed: Vec<DMatrix<f64>> = theta_vertices.iter().map(|t| sys.closed_loop(t, k)).collect::<Result<_>>()?;
    for (t, acl) in theta_vertices.iter().zip(&closed) {
        let rho = spectral_radius(acl);
        if rho >= lambda {
            log::debug!("closed loop at θ = {:?} has spectral radius {rho} ≥ λ = {lambda}", t.as_slice());
            return Err(Error::ContractionUnreachable {
                lambda,
                reason: format!("closed-loop spectral radius {rho:.4} at a parameter vertex"),
            });
        }
    }

    let mut rows: Vec<DVector<f64>> = Vec::new();
    let gk = &z.g * k;
    for block in [&z.f, &gk] {
        for r in 0..block.nrows() {
            let row = block.row(r).transpose();
            if row.amax() > 1e-12 && !is_duplicate(&rows, &row) {
                rows.push(row);
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::invalid("constraint set has no nonzero state rows"));
    }
    let mut poly = rows_to_polytope(&rows)?;
    for i in 0..n {
        for s in [1.0, -1.0] {
            if matches!(support(&poly, &unit(n, i, s)), Err(Error::Unbounded(_))) {
                log::warn!("initial contractive set unbounded along state {i}; adding a bounding row");
                rows.push(unit(n, i, s * 1e-3));
                poly = rows_to_polytope(&rows)?;
            }
        }
    }
    let initial = rows.len();

    let mut checked: Vec<DVector<f64>> = Vec::new();
    let mut pending: Vec<usize> = (0..rows.len()).collect();
    while !pending.is_empty() {
        let mut poly = rows_to_polytope(&rows)?;
        for &i in &pending {
            checked.push(rows[i].clone());
            for acl in &closed {
                let image = (rows[i].transpose() * acl).transpose();
                if support(&poly, &image)? - lambda > ADD_TOL {
                    let new_row = image / lambda;
                    if !is_duplicate(&rows, &new_row) {
                        rows.push(new_row);
                        if rows.len() > max_rows {
                            return Err(Error::ContractionUnreachable {
                                lambda,
                                reason: format!("the set needs more than {max_rows} rows"),
                            });
                        }
                        poly = rows_to_polytope(&rows)?;
                    }
                }
            }
        }
        // Adding rows only shrinks the set, so rows already checked stay
        // contractive; only survivors not yet checked need a sweep.
        let pruned = remove_redundant_from(&poly, initial)?;
        rows = (0..pruned.nrows()).map(|r| pruned.a.row(r).transpose()).collect();
        pending = (initial..rows.len()).filter(|&r| !is_duplicate(&checked, &rows[r])).collect();
    }
    rows_to_polytope(&rows)
}

fn same_row(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    (a - b).amax() <= 1e-9 * (1.0 + a.amax())
}

fn is_duplicate(rows: &[DVector<f64>], row: &DVector<f64>) -> bool {
    rows.iter().any(|r| same_row(r, row))
}

fn rows_to_polytope(rows: &[DVector<f64>]) -> Result<HPolytope> {
    let n = rows[0].len();
    let a = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    HPolytope::new(a, DVector::from_element(rows.len(), 1.0))
}
