//! Closed-loop simulation of the linear plant with a seeded disturbance and
//! noise generator, optional loss of rotor efficiency, and per-step logs.
//!
//! A run is a pure function of the scenario and its seed; only the recorded
//! wall-clock solve times differ between repetitions, and they are left out
//! of [`RunLog::hash`].

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DisturbanceProfile, EventPolicy, ScenarioConfig};
use crate::controller::{ControlMode, OnlineController};
use crate::estimation::{lms_gain, EstimatorState};
use crate::geometry::{support, HPolytope};
use crate::model::{ConstraintSet, ModelKind, ParametricSystem, QuadrotorParams};
use crate::solvers::{lp_solve, LinearProgram, SolveStatus};
use crate::synthesis::{synthesize, validate_artifacts, SynthesisArtifacts, ValidationReport};
use crate::{Error, Result};

const DISTURBANCE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    /// True state relative to the trim point.
    pub x_true: DVector<f64>,
    pub k: usize,
    /// Rotor efficiency applied to the current input.
    pub gamma: f64,
}

impl PlantState {
    pub fn new(x0: DVector<f64>) -> Self {
        PlantState { x_true: x0, k: 0, gamma: 1.0 }
    }
}

/// `x⁺ = A(θ*)x + γ B(θ*)u + drift + w` with absolute input `u`.
pub fn plant_step(
    s: &PlantState,
    u_abs: &DVector<f64>,
    sys: &ParametricSystem,
    theta_star: &DVector<f64>,
    drift: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<PlantState> {
    let x = sys.a_at(theta_star)? * &s.x_true + s.gamma * (sys.b_at(theta_star)? * u_abs) + drift + w;
    Ok(PlantState { x_true: x, k: s.k + 1, gamma: s.gamma })
}

/// Additive measurement noise.
pub fn measure(s: &PlantState, m: &DVector<f64>) -> DVector<f64> {
    &s.x_true + m
}

/// Componentwise bounds of a polytope.
fn bounding_box(p: &HPolytope) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = p.dim();
    let mut lo = DVector::zeros(n);
    let mut hi = DVector::zeros(n);
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        hi[i] = support(p, &e)?;
        lo[i] = -support(p, &(-e))?;
    }
    Ok((lo, hi))
}

/// Uniform samples from a polytope by rejection from its bounding box.
#[derive(Debug, Clone)]
struct UniformSampler {
    set: HPolytope,
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl UniformSampler {
    fn new(set: &HPolytope) -> Result<Self> {
        let (lo, hi) = bounding_box(set)?;
        Ok(UniformSampler { set: set.clone(), lo, hi })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let draw = |rng: &mut ChaCha8Rng| {
            DVector::from_fn(self.lo.len(), |i, _| {
                let (a, b) = (self.lo[i], self.hi[i]);
                if a == b { a } else { rng.random_range(a..=b) }
            })
        };
        for _ in 0..10_000 {
            let x = draw(rng);
            if self.set.contains(&x, 0.0) {
                return x;
            }
        }
        // a polytope that fills almost none of its bounding box; the center is safe
        0.5 * (&self.lo + &self.hi)
    }
}

/// Seeded source of process disturbances.
#[derive(Debug, Clone)]
pub struct DisturbanceStream {
    kind: StreamKind,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
enum StreamKind {
    Constant(DVector<f64>),
    Uniform(UniformSampler),
}

/// Vertex of `w` maximising `directionᵀw`.
pub fn extreme_point(w: &HPolytope, direction: &DVector<f64>) -> Result<DVector<f64>> {
    let rep = lp_solve(&LinearProgram::new(direction.clone(), w.a.clone(), w.b.clone()))?;
    match rep.status {
        SolveStatus::Optimal => Ok(rep.solution.expect("optimal report carries a solution")),
        SolveStatus::Unbounded => Err(Error::Unbounded("disturbance set is unbounded in the wind direction".into())),
        SolveStatus::Infeasible => Err(Error::EmptySet("disturbance set is empty".into())),
        SolveStatus::MaxIterations => Err(Error::Solver("wind vertex LP hit the pivot cap".into())),
    }
}

/// Constant wind yields `fraction ×` the vertex of `W` in `direction` at
/// every step; uniform samples fresh points of `W`; off yields zeros.
pub fn disturbance_stream(
    seed: u64,
    w: &HPolytope,
    profile: DisturbanceProfile,
    fraction: f64,
    direction: &DVector<f64>,
) -> Result<DisturbanceStream> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DISTURBANCE_STREAM);
    let kind = match profile {
        DisturbanceProfile::Off => StreamKind::Constant(DVector::zeros(w.dim())),
        DisturbanceProfile::ConstantWind => StreamKind::Constant(fraction * extreme_point(w, direction)?),
        DisturbanceProfile::UniformRandom => StreamKind::Uniform(UniformSampler::new(w)?),
    };
    Ok(DisturbanceStream { kind, rng })
}

impl Iterator for DisturbanceStream {
    type Item = DVector<f64>;

    fn next(&mut self) -> Option<DVector<f64>> {
        Some(match &self.kind {
            StreamKind::Constant(w) => w.clone(),
            StreamKind::Uniform(s) => s.sample(&mut self.rng),
        })
    }
}

/// Seeded measurement noise, uniform in `M`, or zeros when disabled.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    sampler: Option<UniformSampler>,
    n: usize,
    rng: ChaCha8Rng,
}

pub fn noise_stream(seed: u64, m: &HPolytope, enabled: bool) -> Result<NoiseStream> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(NOISE_STREAM);
    let sampler = if enabled { Some(UniformSampler::new(m)?) } else { None };
    Ok(NoiseStream { sampler, n: m.dim(), rng })
}

impl Iterator for NoiseStream {
    type Item = DVector<f64>;

    fn next(&mut self) -> Option<DVector<f64>> {
        Some(match &self.sampler {
            Some(s) => s.sample(&mut self.rng),
            None => DVector::zeros(self.n),
        })
    }
}

/// Rotor efficiency: 1 before `at`, `gamma_after` from `at` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureSchedule {
    pub at: usize,
    pub gamma_after: f64,
}

pub fn failure_schedule(t_fail: usize, gamma_after: f64) -> Result<FailureSchedule> {
    if !(gamma_after > 0.0 && gamma_after <= 1.0) {
        return Err(Error::invalid(format!("efficiency after failure must lie in (0, 1], got {gamma_after}")));
    }
    Ok(FailureSchedule { at: t_fail, gamma_after })
}

impl FailureSchedule {
    pub fn none() -> Self {
        FailureSchedule { at: usize::MAX, gamma_after: 1.0 }
    }

    pub fn gamma_at(&self, k: usize) -> f64 {
        if k >= self.at { self.gamma_after } else { 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub time: f64,
    pub gamma: f64,
    pub x_true: Vec<f64>,
    pub x_measured: Vec<f64>,
    pub reference: Vec<f64>,
    pub u_abs: Vec<f64>,
    pub u_dev: Vec<f64>,
    pub u_ss: Vec<f64>,
    /// `α₀, …, α_N`; empty when the QP was infeasible.
    pub alpha: Vec<f64>,
    pub theta_lower: Vec<f64>,
    pub theta_upper: Vec<f64>,
    pub theta_hat: Vec<f64>,
    /// Parameter acting on this step's input.
    pub theta_true: Vec<f64>,
    pub eta: f64,
    /// `NaN` when the QP was infeasible.
    pub cost: f64,
    pub solve_time_ms: f64,
    pub infeasible: bool,
    pub falsified: bool,
    /// Whether `theta_true` lies in the current parameter set.
    pub contained: bool,
    /// Largest `F x − 1` over the state-only constraint rows, true state.
    pub state_violation: f64,
    /// Largest excursion of the absolute thrust outside its limits, newtons.
    pub thrust_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub artifacts_hash: String,
    pub records: Vec<StepRecord>,
    /// Why the run stopped early, if it did.
    pub aborted: Option<String>,
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub steps: usize,
    pub max_state_violation: f64,
    pub max_thrust_violation: f64,
    pub containment_failures: usize,
    pub final_theta_lower: Vec<f64>,
    pub final_theta_upper: Vec<f64>,
    pub final_theta_true: Vec<f64>,
    /// Largest absolute position error at the last step, meters.
    pub final_tracking_error: f64,
    pub mean_solve_ms: f64,
    pub median_solve_ms: f64,
    pub max_solve_ms: f64,
    pub infeasible_steps: usize,
    pub falsified_steps: usize,
    pub aborted: Option<String>,
    pub hash: String,
}

impl RunSummary {
    /// Whether the run is free of violations, containment failures and
    /// guarantee events.
    pub fn healthy(&self) -> bool {
        self.max_state_violation <= 1e-9
            && self.max_thrust_violation <= 1e-9
            && self.containment_failures == 0
            && self.infeasible_steps == 0
            && self.falsified_steps == 0
            && self.aborted.is_none()
    }
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "scenario            {} (seed {})", self.name, self.seed)?;
        writeln!(f, "steps               {}", self.steps)?;
        writeln!(f, "max state violation {:.3e}", self.max_state_violation.max(0.0))?;
        writeln!(f, "max thrust violation {:.3e} N", self.max_thrust_violation.max(0.0))?;
        writeln!(f, "containment failures {}", self.containment_failures)?;
        writeln!(
            f,
            "final parameter set [{}] ∋ true {:?}: {}",
            self.final_theta_lower
                .iter()
                .zip(&self.final_theta_upper)
                .map(|(l, u)| format!("{l:.4}, {u:.4}"))
                .collect::<Vec<_>>()
                .join("; "),
            self.final_theta_true,
            self.containment_failures == 0
        )?;
        writeln!(f, "final tracking error {:.4} m", self.final_tracking_error)?;
        writeln!(
            f,
            "solve time ms       mean {:.3}, median {:.3}, max {:.3}",
            self.mean_solve_ms, self.median_solve_ms, self.max_solve_ms
        )?;
        writeln!(f, "infeasible steps    {}", self.infeasible_steps)?;
        writeln!(f, "falsified steps     {}", self.falsified_steps)?;
        if let Some(a) = &self.aborted {
            writeln!(f, "aborted             {a}")?;
        }
        write!(f, "hash                {}", self.hash)
    }
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

impl RunLog {
    /// SHA-256 of everything except wall-clock solve times.
    pub fn hash(&self) -> String {
        let mut stripped = self.clone();
        for r in &mut stripped.records {
            r.solve_time_ms = 0.0;
        }
        let bytes = serde_json::to_vec(&stripped).expect("run logs always serialise");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// CSV header for this log's dimensions. Columns: `k, time, gamma`,
    /// then `x_i`, `xm_i`, `ref_i` per state, `u_i`, `udev_i`, `uss_i` per
    /// input, `theta_lo_j`, `theta_hi_j`, `theta_hat_j`, `theta_true_j` per
    /// parameter, `eta`, `alpha_1 … alpha_N`, `cost`, `solve_ms`,
    /// `infeasible`, `falsified`, `contained`, `state_violation`,
    /// `thrust_violation`.
    pub fn csv_header(n: usize, m: usize, p: usize, horizon: usize) -> Vec<String> {
        let mut h: Vec<String> = vec!["k".into(), "time".into(), "gamma".into()];
        for prefix in ["x", "xm", "ref"] {
            h.extend((0..n).map(|i| format!("{prefix}_{i}")));
        }
        for prefix in ["u", "udev", "uss"] {
            h.extend((0..m).map(|i| format!("{prefix}_{i}")));
        }
        for prefix in ["theta_lo", "theta_hi", "theta_hat", "theta_true"] {
            h.extend((0..p).map(|i| format!("{prefix}_{i}")));
        }
        h.push("eta".into());
        h.extend((1..=horizon).map(|l| format!("alpha_{l}")));
        for s in ["cost", "solve_ms", "infeasible", "falsified", "contained", "state_violation", "thrust_violation"] {
            h.push(s.into());
        }
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.scenario.model.n();
        let m = self.scenario.model.m();
        let horizon = self.scenario.controller.horizon;
        let p = self.records.first().map_or(1, |r| r.theta_lower.len());
        let mut w = csv::Writer::from_writer(out);
        let header = Self::csv_header(n, m, p, horizon);
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row: Vec<String> = vec![r.k.to_string(), fmt(r.time), fmt(r.gamma)];
            for v in [&r.x_true, &r.x_measured, &r.reference, &r.u_abs, &r.u_dev, &r.u_ss] {
                row.extend(v.iter().map(|x| fmt(*x)));
            }
            for v in [&r.theta_lower, &r.theta_upper, &r.theta_hat, &r.theta_true] {
                row.extend(v.iter().map(|x| fmt(*x)));
            }
            row.push(fmt(r.eta));
            row.extend((1..=horizon).map(|l| r.alpha.get(l).map_or(String::new(), |a| fmt(*a))));
            row.push(fmt(r.cost));
            row.push(fmt(r.solve_time_ms));
            for b in [r.infeasible, r.falsified, r.contained] {
                row.push(u8::from(b).to_string());
            }
            row.push(fmt(r.state_violation));
            row.push(fmt(r.thrust_violation));
            debug_assert_eq!(row.len(), header.len());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> RunSummary {
        let recs = &self.records;
        let mut times: Vec<f64> = recs.iter().map(|r| r.solve_time_ms).collect();
        let mean = if times.is_empty() { f64::NAN } else { times.iter().sum::<f64>() / times.len() as f64 };
        let max_t = times.iter().cloned().fold(f64::NAN, f64::max);
        let positions = self.scenario.model.position_states();
        let final_err = recs.last().map_or(f64::NAN, |r| {
            positions.clone().map(|i| (r.x_true[i] - r.reference[i]).abs()).fold(0.0, f64::max)
        });
        let last = recs.last();
        RunSummary {
            name: self.scenario.name.clone(),
            seed: self.seed,
            steps: recs.len(),
            max_state_violation: recs.iter().map(|r| r.state_violation).fold(f64::NEG_INFINITY, f64::max),
            max_thrust_violation: recs.iter().map(|r| r.thrust_violation).fold(f64::NEG_INFINITY, f64::max),
            containment_failures: recs.iter().filter(|r| !r.contained).count(),
            final_theta_lower: last.map_or(vec![], |r| r.theta_lower.clone()),
            final_theta_upper: last.map_or(vec![], |r| r.theta_upper.clone()),
            final_theta_true: last.map_or(vec![], |r| r.theta_true.clone()),
            final_tracking_error: final_err,
            mean_solve_ms: mean,
            median_solve_ms: median(&mut times),
            max_solve_ms: max_t,
            infeasible_steps: recs.iter().filter(|r| r.infeasible).count(),
            falsified_steps: recs.iter().filter(|r| r.falsified).count(),
            aborted: self.aborted.clone(),
            hash: self.hash(),
        }
    }
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Largest `F x − 1` over rows without input terms.
fn state_violation(z: &ConstraintSet, x: &DVector<f64>) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..z.nrows() {
        if z.g.row(i).amax() == 0.0 {
            worst = worst.max((z.f.row(i) * x)[0] - 1.0);
        }
    }
    worst
}

/// Absolute thrust limits per input channel.
fn thrust_limits(kind: ModelKind, q: &QuadrotorParams) -> (f64, f64) {
    match kind {
        ModelKind::Direct => (q.thrust_min, q.thrust_max),
        ModelKind::Altitude => (4.0 * q.thrust_min, 4.0 * q.thrust_max),
    }
}

fn thrust_violation(kind: ModelKind, q: &QuadrotorParams, u: &DVector<f64>) -> f64 {
    let (lo, hi) = thrust_limits(kind, q);
    u.iter().map(|&f| (f - hi).max(lo - f)).fold(f64::NEG_INFINITY, f64::max)
}

/// LMS gain from the extreme absolute thrusts at the trim state.
fn default_lms_gain(cfg: &ScenarioConfig, sys: &ParametricSystem) -> Result<f64> {
    let (lo, hi) = thrust_limits(cfg.model, &cfg.airframe);
    let m = sys.m();
    let zero = DVector::zeros(sys.n());
    lms_gain(sys, &[zero], &[DVector::from_element(m, hi), DVector::from_element(m, lo)])
}

/// Synthesises and validates the artifacts of a scenario.
pub fn prepare_artifacts(cfg: &ScenarioConfig) -> Result<SynthesisArtifacts> {
    let (artifacts, report) = synthesize_scenario(cfg)?;
    report.into_result()?;
    Ok(artifacts)
}

/// Synthesises the artifacts of a scenario and validates them, returning
/// the report whether or not it passed.
pub fn synthesize_scenario(cfg: &ScenarioConfig) -> Result<(SynthesisArtifacts, ValidationReport)> {
    let inputs = cfg.synthesis_inputs()?;
    let mut artifacts = synthesize(&inputs)?;
    artifacts.input_hash = cfg.synthesis_hash();
    let report = validate_artifacts(&artifacts, &inputs.disturbance)?;
    Ok((artifacts, report))
}

/// Runs independent closed loops on a pool of scoped threads. Every run
/// owns its controller and streams, so results match sequential runs.
pub fn run_batch(jobs: &[(ScenarioConfig, &SynthesisArtifacts)]) -> Vec<Result<RunLog>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len()).max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunLog>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((cfg, artifacts)) = jobs.get(i) else { break };
                let log = run_closed_loop(cfg, artifacts);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(log);
            });
        }
    });
    let slots = slots.into_inner().expect("workers have joined");
    slots.into_iter().map(|r| r.expect("every job ran")).collect()
}

/// [`run_closed_loop`] after synthesising the artifacts inline.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunLog> {
    let artifacts = prepare_artifacts(cfg)?;
    run_closed_loop(cfg, &artifacts)
}

/// The online controller of a scenario in its initial state: parameter set
/// `Θ₀`, point estimate at the assumed mass.
pub fn build_controller(cfg: &ScenarioConfig, artifacts: &SynthesisArtifacts) -> Result<OnlineController> {
    cfg.validate()?;
    let ctrl_cfg = cfg.controller_config(artifacts.clone())?;
    let mu = match cfg.controller.lms_gain {
        Some(mu) => mu,
        None => default_lms_gain(cfg, &artifacts.system)?,
    };
    let theta_hat0 = DVector::from_element(1, cfg.theta_hat0());
    let est = EstimatorState::new(artifacts.theta0.clone(), theta_hat0, mu)?;
    OnlineController::new(ctrl_cfg, cfg.trim()?, est)
}

/// Simulates `cfg.steps` steps: measure, identify and re-center, solve the
/// tube QP, apply the input to the true plant.
pub fn run_closed_loop(cfg: &ScenarioConfig, artifacts: &SynthesisArtifacts) -> Result<RunLog> {
    let mut controller = build_controller(cfg, artifacts)?;
    let sys = artifacts.system.clone();
    let n = sys.n();
    let drift = cfg.trim()?.drift;

    let w_set = &artifacts.disturbance;
    let direction = match &cfg.disturbance.direction {
        Some(d) => DVector::from_vec(d.clone()),
        None => DVector::from_element(n, 1.0),
    };
    let mut disturbances =
        disturbance_stream(cfg.seed, w_set, cfg.disturbance.profile, cfg.disturbance.fraction, &direction)?;
    let mut noises = noise_stream(cfg.seed, &cfg.noise_set()?, cfg.noise.enabled)?;
    let schedule = match &cfg.failure {
        Some(f) => failure_schedule(f.at_step, f.efficiency)?,
        None => FailureSchedule::none(),
    };

    let theta_base = DVector::from_element(1, cfg.theta_star());
    let x0 = cfg.plant.initial_state.as_ref().map_or(DVector::zeros(n), |x| DVector::from_vec(x.clone()));
    let mut plant = PlantState::new(x0);
    let mut records = Vec::with_capacity(cfg.steps);
    let mut aborted = None;
    let adaptive = cfg.controller.mode == ControlMode::Adaptive;

    for k in 0..cfg.steps {
        plant.gamma = schedule.gamma_at(k);
        let noise = noises.next().expect("noise stream is infinite");
        let measured = measure(&plant, &noise);
        let reference = cfg.reference_at(k);

        let start = Instant::now();
        let out = controller.step(&measured, &reference)?;
        let solve_time_ms = start.elapsed().as_secs_f64() * 1e3;

        let est = controller.estimator();
        let theta_true = plant.gamma * &theta_base;
        let contained = est.theta_set.contains(&theta_true, 1e-9);
        if adaptive && !contained {
            log::warn!("step {k}: true parameter {} left the parameter set", theta_true[0]);
        }
        records.push(StepRecord {
            k,
            time: k as f64 * crate::model::SAMPLE_TIME,
            gamma: plant.gamma,
            x_true: plant.x_true.iter().copied().collect(),
            x_measured: measured.iter().copied().collect(),
            reference: reference.iter().copied().collect(),
            u_abs: out.u_abs.iter().copied().collect(),
            u_dev: out.u_dev.iter().copied().collect(),
            u_ss: out.u_ss.iter().copied().collect(),
            alpha: out.solution.as_ref().map_or(vec![], |s| s.alpha.clone()),
            theta_lower: est.theta_set.lower().iter().copied().collect(),
            theta_upper: est.theta_set.upper().iter().copied().collect(),
            theta_hat: est.theta_hat.iter().copied().collect(),
            theta_true: theta_true.iter().copied().collect(),
            eta: est.eta(),
            cost: out.solution.as_ref().map_or(f64::NAN, |s| s.cost),
            solve_time_ms,
            infeasible: out.infeasible,
            falsified: out.falsified,
            contained,
            state_violation: state_violation(&artifacts.constraints, &plant.x_true),
            thrust_violation: thrust_violation(cfg.model, &cfg.airframe, &out.u_abs),
        });
        if cfg.on_event == EventPolicy::Abort && (out.infeasible || out.falsified) {
            let what = if out.infeasible { "infeasible tube QP" } else { "falsified parameter set" };
            aborted = Some(format!("{what} at step {k}"));
            break;
        }

        let w = disturbances.next().expect("disturbance stream is infinite");
        plant = plant_step(&plant, &out.u_abs, &sys, &theta_base, &drift, &w)?;
    }

    Ok(RunLog {
        scenario: cfg.clone(),
        seed: cfg.seed,
        artifacts_hash: artifacts.input_hash.clone(),
        records,
        aborted,
    })
}
