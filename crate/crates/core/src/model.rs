//! Parametric discrete-time linear models and the quadrotor linearisations.
//!
//! A model is `x⁺ = A(θ)x + B(θ)u + w` with `A(θ) = A₀ + Σ θᵢAᵢ` and
//! likewise for `B`. Both quadrotor models are written in deviation
//! coordinates around hover and use the inverse mass (or, after a power
//! failure, efficiency over mass) as the single uncertain parameter.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry::HPolytope;
use crate::{Error, Result};

/// Sample time used by both quadrotor models, seconds.
pub const SAMPLE_TIME: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricSystem {
    /// `A₀, A₁, …, A_p`.
    #[serde(with = "crate::serde_mat::matrix_list")]
    pub a: Vec<DMatrix<f64>>,
    /// `B₀, B₁, …, B_p`.
    #[serde(with = "crate::serde_mat::matrix_list")]
    pub b: Vec<DMatrix<f64>>,
}

impl ParametricSystem {
    pub fn new(a: Vec<DMatrix<f64>>, b: Vec<DMatrix<f64>>) -> Result<Self> {
        if a.len() < 2 || a.len() != b.len() {
            return Err(Error::dim(format!(
                "need A₀..A_p and B₀..B_p with p ≥ 1, got {} and {} matrices",
                a.len(),
                b.len()
            )));
        }
        let n = a[0].nrows();
        let m = b[0].ncols();
        if n == 0 || m == 0 {
            return Err(Error::dim("state and input dimensions must be positive"));
        }
        if a.iter().any(|ai| ai.shape() != (n, n)) || b.iter().any(|bi| bi.shape() != (n, m)) {
            return Err(Error::dim("all Aᵢ must be n×n and all Bᵢ n×m"));
        }
        Ok(ParametricSystem { a, b })
    }

    pub fn n(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn m(&self) -> usize {
        self.b[0].ncols()
    }

    pub fn p(&self) -> usize {
        self.a.len() - 1
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.p() {
            return Err(Error::dim(format!("θ has length {}, system has {} parameters", theta.len(), self.p())));
        }
        Ok(())
    }

    fn check_xu(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<()> {
        if x.len() != self.n() || u.len() != self.m() {
            return Err(Error::dim(format!(
                "state/input lengths ({}, {}) do not match system ({}, {})",
                x.len(),
                u.len(),
                self.n(),
                self.m()
            )));
        }
        Ok(())
    }

    pub fn a_at(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        let mut a = self.a[0].clone();
        for (i, t) in theta.iter().enumerate() {
            a += *t * &self.a[i + 1];
        }
        Ok(a)
    }

    pub fn b_at(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        let mut b = self.b[0].clone();
        for (i, t) in theta.iter().enumerate() {
            b += *t * &self.b[i + 1];
        }
        Ok(b)
    }

    /// `A(θ) + B(θ)K`.
    pub fn closed_loop(&self, theta: &DVector<f64>, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if k.shape() != (self.m(), self.n()) {
            return Err(Error::dim(format!("gain is {:?}, expected {}×{}", k.shape(), self.m(), self.n())));
        }
        Ok(self.a_at(theta)? + self.b_at(theta)? * k)
    }

    /// `A(θ)x + B(θ)u`.
    pub fn step(&self, theta: &DVector<f64>, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_xu(x, u)?;
        Ok(self.a_at(theta)? * x + self.b_at(theta)? * u)
    }
}

/// `(A(θ), B(θ))`.
pub fn eval_system(sys: &ParametricSystem, theta: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    Ok((sys.a_at(theta)?, sys.b_at(theta)?))
}

/// The regressor `[A₁x + B₁u, …, A_px + B_pu]`, so that
/// `A(θ)x + B(θ)u = A₀x + B₀u + D θ`.
pub fn d_matrix(sys: &ParametricSystem, x: &DVector<f64>, u: &DVector<f64>) -> Result<DMatrix<f64>> {
    sys.check_xu(x, u)?;
    let mut d = DMatrix::zeros(sys.n(), sys.p());
    for i in 1..=sys.p() {
        d.set_column(i - 1, &(&sys.a[i] * x + &sys.b[i] * u));
    }
    Ok(d)
}

/// `A₀x_prev + B₀u_prev − x_now`.
pub fn d_offset(
    sys: &ParametricSystem,
    x_prev: &DVector<f64>,
    u_prev: &DVector<f64>,
    x_now: &DVector<f64>,
) -> Result<DVector<f64>> {
    sys.check_xu(x_prev, u_prev)?;
    if x_now.len() != sys.n() {
        return Err(Error::dim("x_now length differs from the state dimension"));
    }
    Ok(&sys.a[0] * x_prev + &sys.b[0] * u_prev - x_now)
}

/// Forward Euler: `A_d0 = I + Ts·A_c0`, `A_di = Ts·A_ci` for `i ≥ 1`, and
/// `B_di = Ts·B_ci` for all `i`.
pub fn discretize_euler(continuous: &ParametricSystem, ts: f64) -> Result<ParametricSystem> {
    if !(ts >= 0.0) {
        return Err(Error::invalid(format!("sample time must be ≥ 0, got {ts}")));
    }
    let n = continuous.n();
    let a = continuous
        .a
        .iter()
        .enumerate()
        .map(|(i, ac)| if i == 0 { DMatrix::identity(n, n) + ts * ac } else { ts * ac })
        .collect();
    let b = continuous.b.iter().map(|bc| ts * bc).collect();
    ParametricSystem::new(a, b)
}

/// State-input constraints `F x + G u ≤ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    #[serde(with = "crate::serde_mat::matrix")]
    pub f: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::matrix")]
    pub g: DMatrix<f64>,
}

impl ConstraintSet {
    pub fn new(f: DMatrix<f64>, g: DMatrix<f64>) -> Result<Self> {
        if f.nrows() != g.nrows() || f.nrows() == 0 {
            return Err(Error::dim("F and G must have the same nonzero number of rows"));
        }
        for i in 0..f.nrows() {
            if f.row(i).amax() == 0.0 && g.row(i).amax() == 0.0 {
                return Err(Error::invalid(format!("constraint row {i} is identically zero")));
            }
        }
        Ok(ConstraintSet { f, g })
    }

    pub fn nrows(&self) -> usize {
        self.f.nrows()
    }

    /// Largest row value of `F x + G u − 1`; positive means violated.
    pub fn violation(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (&self.f * x + &self.g * u).add_scalar(-1.0).max()
    }
}

/// Airframe data for an X-configuration quadrotor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrotorParams {
    /// Rotor positions `(x_i, y_i)` in the body frame, meters.
    pub rotor_positions: [[f64; 2]; 4],
    /// Yaw torque per unit thrust for each rotor, meters (signed by spin).
    pub torque_coefficients: [f64; 4],
    pub gravity: f64,
    /// Diagonal of the inertia tensor, kg·m².
    pub inertia: [f64; 3],
    /// True mass, kg.
    pub mass: f64,
    /// Per-rotor thrust limits, newtons.
    pub thrust_min: f64,
    pub thrust_max: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        let d = 0.0325;
        let c = 0.00596;
        QuadrotorParams {
            rotor_positions: [[d, -d], [-d, -d], [-d, d], [d, d]],
            torque_coefficients: [c, -c, c, -c],
            gravity: 9.81,
            inertia: [1.4e-5, 1.4e-5, 2.2e-5],
            mass: 0.028,
            thrust_min: 0.0,
            thrust_max: 0.16,
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        let sx: f64 = self.rotor_positions.iter().map(|r| r[0]).sum();
        let sy: f64 = self.rotor_positions.iter().map(|r| r[1]).sum();
        if sx.abs() > 1e-12 || sy.abs() > 1e-12 {
            return Err(Error::invalid("rotor positions must be symmetric about the center of mass"));
        }
        if !(self.gravity > 0.0 && self.mass > 0.0) || self.inertia.iter().any(|j| *j <= 0.0) {
            return Err(Error::invalid("gravity, mass and inertia must be positive"));
        }
        if !(self.thrust_min < self.thrust_max) {
            return Err(Error::invalid("thrust limits must satisfy min < max"));
        }
        Ok(())
    }

    /// Rows: total thrust, roll torque, pitch torque, yaw torque.
    fn allocation(&self) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(4, 4);
        for i in 0..4 {
            let [x, y] = self.rotor_positions[i];
            t[(0, i)] = 1.0;
            t[(1, i)] = y;
            t[(2, i)] = -x;
            t[(3, i)] = self.torque_coefficients[i];
        }
        t
    }
}

/// Per-rotor hover thrusts: total `m·g` with zero net torque.
pub fn steady_state_input(q: &QuadrotorParams, mass: f64) -> Result<DVector<f64>> {
    let rhs = DVector::from_vec(vec![mass * q.gravity, 0.0, 0.0, 0.0]);
    let lu = q.allocation().lu();
    if !lu.is_invertible() {
        return Err(Error::invalid("rotor allocation matrix is singular"));
    }
    lu.solve(&rhs).ok_or_else(|| Error::invalid("rotor allocation matrix is singular"))
}

/// Which quadrotor linearisation a scenario uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// 12 states, one thrust input per rotor.
    #[serde(rename = "direct-12")]
    Direct,
    /// Altitude channel of the decoupled architecture: 2 states, total thrust.
    #[serde(rename = "altitude-2")]
    Altitude,
}

impl ModelKind {
    pub fn n(self) -> usize {
        match self {
            ModelKind::Direct => 12,
            ModelKind::Altitude => 2,
        }
    }

    pub fn m(self) -> usize {
        match self {
            ModelKind::Direct => 4,
            ModelKind::Altitude => 1,
        }
    }

    /// Indices of the position states.
    pub fn position_states(self) -> std::ops::Range<usize> {
        match self {
            ModelKind::Direct => 0..3,
            ModelKind::Altitude => 0..1,
        }
    }

    /// Indices of the velocity states.
    pub fn velocity_states(self) -> std::ops::Range<usize> {
        match self {
            ModelKind::Direct => 3..6,
            ModelKind::Altitude => 1..2,
        }
    }

    /// Index of the vertical velocity, the state gravity acts on.
    pub fn vertical_velocity(self) -> usize {
        match self {
            ModelKind::Direct => 5,
            ModelKind::Altitude => 1,
        }
    }

    /// Hover input for `θ`, where `g/θ` is the weight to be carried.
    pub fn steady_state(self, q: &QuadrotorParams, theta: f64) -> Result<DVector<f64>> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::invalid(format!("parameter {theta} does not correspond to a physical mass")));
        }
        match self {
            ModelKind::Direct => steady_state_input(q, 1.0 / theta),
            ModelKind::Altitude => Ok(DVector::from_element(1, q.gravity / theta)),
        }
    }

    pub fn build(self, q: &QuadrotorParams, theta_lower: f64, theta_upper: f64) -> Result<(ParametricSystem, ConstraintSet)> {
        match self {
            ModelKind::Direct => quadrotor_direct_model(q, theta_lower, theta_upper),
            ModelKind::Altitude => quadrotor_altitude_model(q, theta_lower, theta_upper),
        }
    }
}

/// Hover input and gravity term of a quadrotor model in deviation
/// coordinates.
///
/// The hover input scales as `hover_unit / θ` because `θ` is inverse mass
/// (or efficiency over mass). With absolute inputs the dynamics read
/// `x⁺ = A(θ)x + B(θ)u + drift + w`, where `drift` is the per-step effect of
/// gravity and `B(θ)·hover(θ) + drift = 0` for every `θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trim {
    #[serde(with = "crate::serde_mat::vector")]
    pub hover_unit: DVector<f64>,
    #[serde(with = "crate::serde_mat::vector")]
    pub drift: DVector<f64>,
}

impl Trim {
    pub fn new(kind: ModelKind, q: &QuadrotorParams) -> Result<Self> {
        let hover_unit = kind.steady_state(q, 1.0)?;
        let mut drift = DVector::zeros(kind.n());
        drift[kind.vertical_velocity()] = -SAMPLE_TIME * q.gravity;
        Ok(Trim { hover_unit, drift })
    }

    /// Hover input for parameter `θ`.
    pub fn input(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let t = theta[0];
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::invalid(format!("parameter {t} does not correspond to a physical mass")));
        }
        Ok(&self.hover_unit / t)
    }
}

/// Position bound in every axis, meters.
pub const POSITION_LIMIT: f64 = 0.7;
/// Bound on roll, pitch and yaw deviations, radians.
pub const ANGLE_LIMIT: f64 = std::f64::consts::FRAC_PI_2;
/// Velocity box that keeps the direct model's state constraints bounded.
pub const VELOCITY_LIMIT: f64 = 2.0;
/// Body-rate box, rad/s.
pub const RATE_LIMIT: f64 = 10.0;

/// Thrust-deviation interval valid for every hover input over
/// `θ ∈ [theta_lower, theta_upper]`: the commanded absolute thrust stays in
/// `[n·f_min, n·f_max]` whichever hover input is applied.
fn deviation_bounds(total_min: f64, total_max: f64, hover_light: f64, hover_heavy: f64) -> Result<(f64, f64)> {
    let lo = total_min - hover_light;
    let hi = total_max - hover_heavy;
    if !(lo < 0.0 && hi > 0.0) {
        return Err(Error::invalid(format!(
            "hover thrust range [{hover_light}, {hover_heavy}] leaves no margin inside [{total_min}, {total_max}]"
        )));
    }
    Ok((lo, hi))
}

fn push_symmetric(f: &mut Vec<Vec<f64>>, g: &mut Vec<Vec<f64>>, n: usize, m: usize, state: usize, bound: f64) {
    for s in [1.0, -1.0] {
        let mut row = vec![0.0; n];
        row[state] = s / bound;
        f.push(row);
        g.push(vec![0.0; m]);
    }
}

fn push_input(f: &mut Vec<Vec<f64>>, g: &mut Vec<Vec<f64>>, n: usize, m: usize, input: usize, lo: f64, hi: f64) {
    let mut up = vec![0.0; m];
    up[input] = 1.0 / hi;
    let mut down = vec![0.0; m];
    down[input] = 1.0 / lo;
    for row in [up, down] {
        f.push(vec![0.0; n]);
        g.push(row);
    }
}

fn to_constraint_set(f: Vec<Vec<f64>>, g: Vec<Vec<f64>>, n: usize, m: usize) -> Result<ConstraintSet> {
    let r = f.len();
    ConstraintSet::new(DMatrix::from_fn(r, n, |i, j| f[i][j]), DMatrix::from_fn(r, m, |i, j| g[i][j]))
}

/// Full hover linearisation with per-rotor thrust inputs, Euler-discretised
/// at [`SAMPLE_TIME`].
///
/// States: position (3), velocity (3), roll/pitch/yaw (3), body rates (3).
/// The parameter scales only the vertical acceleration row. Thrust bounds are
/// expressed as deviations that are valid for every hover input with
/// `θ ∈ [theta_lower, theta_upper]`.
pub fn quadrotor_direct_model(
    q: &QuadrotorParams,
    theta_lower: f64,
    theta_upper: f64,
) -> Result<(ParametricSystem, ConstraintSet)> {
    q.validate()?;
    let (n, m) = (12, 4);
    let g = q.gravity;
    let mut a0 = DMatrix::zeros(n, n);
    for i in 0..3 {
        a0[(i, 3 + i)] = 1.0;
        a0[(6 + i, 9 + i)] = 1.0;
    }
    a0[(3, 7)] = g;
    a0[(4, 6)] = -g;
    let alloc = q.allocation();
    let mut b0 = DMatrix::zeros(n, m);
    for r in 0..3 {
        for i in 0..4 {
            b0[(9 + r, i)] = alloc[(r + 1, i)] / q.inertia[r];
        }
    }
    let mut b1 = DMatrix::zeros(n, m);
    for i in 0..4 {
        b1[(5, i)] = 1.0;
    }
    let continuous = ParametricSystem::new(vec![a0, DMatrix::zeros(n, n)], vec![b0, b1])?;
    let sys = discretize_euler(&continuous, SAMPLE_TIME)?;

    let (lo, hi) = deviation_bounds(
        q.thrust_min,
        q.thrust_max,
        steady_state_input(q, 1.0 / theta_upper)?.min(),
        steady_state_input(q, 1.0 / theta_lower)?.max(),
    )?;
    let (mut f, mut gm) = (Vec::new(), Vec::new());
    for (range, bound) in [(0..3, POSITION_LIMIT), (3..6, VELOCITY_LIMIT), (6..9, ANGLE_LIMIT), (9..12, RATE_LIMIT)] {
        for s in range {
            push_symmetric(&mut f, &mut gm, n, m, s, bound);
        }
    }
    for i in 0..m {
        push_input(&mut f, &mut gm, n, m, i, lo, hi);
    }
    Ok((sys, to_constraint_set(f, gm, n, m)?))
}

/// Decoupled altitude channel `[p_z, v_z]` driven by the total-thrust
/// deviation, Euler-discretised at [`SAMPLE_TIME`].
pub fn quadrotor_altitude_model(
    q: &QuadrotorParams,
    theta_lower: f64,
    theta_upper: f64,
) -> Result<(ParametricSystem, ConstraintSet)> {
    q.validate()?;
    let a0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
    let b1 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let continuous = ParametricSystem::new(vec![a0, DMatrix::zeros(2, 2)], vec![DMatrix::zeros(2, 1), b1])?;
    let sys = discretize_euler(&continuous, SAMPLE_TIME)?;
    let (lo, hi) = deviation_bounds(
        4.0 * q.thrust_min,
        4.0 * q.thrust_max,
        q.gravity / theta_upper,
        q.gravity / theta_lower,
    )?;
    let (mut f, mut g) = (Vec::new(), Vec::new());
    push_symmetric(&mut f, &mut g, 2, 1, 0, POSITION_LIMIT);
    push_input(&mut f, &mut g, 2, 1, 0, lo, hi);
    Ok((sys, to_constraint_set(f, g, 2, 1)?))
}

/// Linear drag coefficient mapping wind speed to force, kg/s.
pub const WIND_DRAG: f64 = 9.57e-4;

/// Per-step additive disturbance box for a constant wind of `wind_speed`
/// m/s acting through linear drag `drag` kg/s on a body of mass `mass`:
/// velocity rows get `Ts·a`, position rows `Ts²/2·a`, all other rows zero.
pub fn wind_box(kind: ModelKind, wind_speed: f64, drag: f64, mass: f64) -> Result<HPolytope> {
    let accel = drag * wind_speed / mass;
    let mut half = DVector::zeros(kind.n());
    for i in kind.position_states() {
        half[i] = 0.5 * SAMPLE_TIME * SAMPLE_TIME * accel;
    }
    for i in kind.velocity_states() {
        half[i] = SAMPLE_TIME * accel;
    }
    HPolytope::symmetric_box(&half)
}

/// Measurement-noise box: `position` on positions, `velocity` on
/// velocities, zero elsewhere.
pub fn noise_box(kind: ModelKind, position: f64, velocity: f64) -> Result<HPolytope> {
    let mut half = DVector::zeros(kind.n());
    for i in kind.position_states() {
        half[i] = position;
    }
    for i in kind.velocity_states() {
        half[i] = velocity;
    }
    HPolytope::symmetric_box(&half)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn altitude() -> ParametricSystem {
        quadrotor_altitude_model(&QuadrotorParams::default(), 1.0 / 0.037, 1.0 / 0.027).unwrap().0
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn altitude_matrices() {
        let sys = altitude();
        let (a, b) = eval_system(&sys, &v(&[1.0 / 0.028])).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]));
        assert_eq!(b[(0, 0)], 0.0);
        assert_abs_diff_eq!(b[(1, 0)], 3.571428571428571, epsilon = 1e-12);
        let (a, b) = eval_system(&sys, &v(&[0.0])).unwrap();
        assert_eq!((a, b), (sys.a[0].clone(), sys.b[0].clone()));
        let dx = sys.step(&v(&[1.0 / 0.028]), &v(&[0.0, 0.0]), &v(&[0.028])).unwrap();
        assert_abs_diff_eq!(dx[1], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn affine_increment() {
        let sys = altitude();
        let b2 = sys.b_at(&v(&[2.0])).unwrap();
        let b1 = sys.b_at(&v(&[1.0])).unwrap();
        assert_eq!(b2 - b1, sys.b[1]);
        assert!(eval_system(&sys, &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn regressor_examples() {
        let sys = altitude();
        assert_eq!(d_matrix(&sys, &v(&[0.0, 0.0]), &v(&[0.0])).unwrap(), DMatrix::zeros(2, 1));
        let d = d_matrix(&sys, &v(&[0.0, 0.0]), &v(&[0.1])).unwrap();
        assert_eq!(d[(0, 0)], 0.0);
        assert_abs_diff_eq!(d[(1, 0)], 0.01, epsilon = 1e-15);
        let (x, u) = (v(&[0.3, -0.2]), v(&[0.05]));
        assert_eq!(d_matrix(&sys, &(2.0 * &x), &(2.0 * &u)).unwrap(), 2.0 * d_matrix(&sys, &x, &u).unwrap());

        assert_eq!(d_offset(&sys, &v(&[0.0, 0.0]), &v(&[0.0]), &v(&[0.0, 0.0])).unwrap(), v(&[0.0, 0.0]));
        let d = d_offset(&sys, &v(&[0.0, 0.0]), &v(&[0.0]), &v(&[0.0, 0.05])).unwrap();
        assert_eq!(d, v(&[0.0, -0.05]));
    }

    #[test]
    fn euler_discretisation() {
        let c = ParametricSystem::new(
            vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]), DMatrix::zeros(2, 2)],
            vec![DMatrix::zeros(2, 1), DMatrix::from_column_slice(2, 1, &[0.0, 1.0])],
        )
        .unwrap();
        let d = discretize_euler(&c, 0.1).unwrap();
        assert_eq!(d.a[0], DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]));
        assert_eq!(d.b[1], DMatrix::from_column_slice(2, 1, &[0.0, 0.1]));
        let z = discretize_euler(&c, 0.0).unwrap();
        assert_eq!(z.a[0], DMatrix::identity(2, 2));
        assert_eq!(z.b[1], DMatrix::zeros(2, 1));
    }

    #[test]
    fn hover_thrusts() {
        let q = QuadrotorParams::default();
        let f = steady_state_input(&q, 0.028).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(f[i], 0.028 * 9.81 / 4.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(f.sum(), 0.27468, epsilon = 1e-12);
        assert_eq!(steady_state_input(&q, 0.0).unwrap(), DVector::zeros(4));
        let mut bad = q.clone();
        bad.rotor_positions = [[0.0; 2]; 4];
        assert!(steady_state_input(&bad, 0.028).is_err());
    }

    #[test]
    fn direct_model_structure() {
        let q = QuadrotorParams::default();
        let (sys, z) = quadrotor_direct_model(&q, 1.0 / 0.037, 1.0 / 0.027).unwrap();
        assert_eq!((sys.n(), sys.m(), sys.p()), (12, 4, 1));
        assert_eq!(sys.a[1], DMatrix::zeros(12, 12));
        let nonzero_rows: Vec<usize> = (0..12).filter(|&r| sys.b[1].row(r).amax() > 0.0).collect();
        assert_eq!(nonzero_rows, vec![5]);
        let theta = v(&[1.0 / 0.028]);
        let x1 = sys.step(&theta, &DVector::zeros(12), &DVector::zeros(4)).unwrap();
        assert_eq!(x1, DVector::zeros(12));
        let delta = 0.01;
        let x1 = sys.step(&theta, &DVector::zeros(12), &DVector::from_element(4, delta)).unwrap();
        for r in 0..12 {
            let expect = if r == 5 { 0.1 * theta[0] * 4.0 * delta } else { 0.0 };
            assert_abs_diff_eq!(x1[r], expect, epsilon = 1e-12);
        }
        assert!(z.nrows() >= 20);
        assert!(z.violation(&DVector::zeros(12), &DVector::zeros(4)) < 0.0);
    }

    #[test]
    fn altitude_constraint_bounds() {
        let (_, z) = quadrotor_altitude_model(&QuadrotorParams::default(), 1.0 / 0.037, 1.0 / 0.027).unwrap();
        assert_eq!(z.nrows(), 4);
        assert_abs_diff_eq!(1.0 / z.g[(2, 0)], 0.64 - 0.037 * 9.81, epsilon = 1e-12);
        assert_abs_diff_eq!(1.0 / z.g[(3, 0)], -0.027 * 9.81, epsilon = 1e-12);
    }

    #[test]
    fn wind_and_noise_boxes() {
        let w = wind_box(ModelKind::Direct, 2.0, WIND_DRAG, 0.028).unwrap();
        assert_abs_diff_eq!(w.b[6], 0.1 * 9.57e-4 * 2.0 / 0.028, epsilon = 1e-15);
        assert_abs_diff_eq!(w.b[6], 0.006836, epsilon = 1e-6);
        assert_abs_diff_eq!(w.b[0], 0.005 * 9.57e-4 * 2.0 / 0.028, epsilon = 1e-15);
        assert_eq!(w.b[12], 0.0);
        let m = noise_box(ModelKind::Altitude, 0.001, 0.01).unwrap();
        assert_eq!(m.b.as_slice(), &[0.001, 0.001, 0.01, 0.01]);
    }

    #[test]
    fn trim_balances_gravity() {
        let q = QuadrotorParams::default();
        for kind in [ModelKind::Direct, ModelKind::Altitude] {
            let (sys, _) = kind.build(&q, 1.0 / 0.037, 1.0 / 0.027).unwrap();
            let trim = Trim::new(kind, &q).unwrap();
            for theta in [27.0, 1.0 / 0.028, 37.0] {
                let t = v(&[theta]);
                let hover = trim.input(&t).unwrap();
                let x1 = sys.step(&t, &DVector::zeros(kind.n()), &hover).unwrap() + &trim.drift;
                assert!(x1.amax() < 1e-14, "{kind:?} θ = {theta}");
            }
        }
        let trim = Trim::new(ModelKind::Altitude, &q).unwrap();
        assert_abs_diff_eq!(trim.input(&v(&[1.0 / 0.028])).unwrap()[0], 0.27468, epsilon = 1e-12);
        assert_abs_diff_eq!(trim.input(&v(&[1.0 / 0.037])).unwrap()[0], 0.36297, epsilon = 1e-12);
        assert!(trim.input(&v(&[0.0])).is_err());
    }
}
