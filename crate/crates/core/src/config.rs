//! Scenario files: one TOML document per closed-loop experiment.
//!
//! Masses are given in kilograms and turned into the inverse-mass
//! parameter here, so a file reads like the physical setup:
//!
//! ```toml
//! name = "altitude-mass"
//! model = "altitude-2"
//! steps = 120
//! seed = 1
//!
//! [plant]
//! mass = 0.028
//!
//! [uncertainty]
//! mass_min = 0.027
//! mass_max = 0.037
//! assumed_mass = 0.037
//!
//! [controller]
//! q = [1.0, 0.01]
//! r = [0.0025]
//!
//! [[reference]]
//! step = 0
//! position = [0.3]
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::{ControlMode, ControllerConfig, FailureDilation};
use crate::estimation::DilationVariant;
use crate::geometry::{HPolytope, Hyperbox};
use crate::model::{noise_box, wind_box, ModelKind, QuadrotorParams, Trim, WIND_DRAG};
use crate::synthesis::{SynthesisArtifacts, SynthesisInputs};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventPolicy {
    /// Log falsification and infeasibility, apply the fallback, keep going.
    #[default]
    Continue,
    /// Stop the run at the first such event.
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceProfile {
    /// The same vertex-scaled disturbance at every step.
    #[default]
    ConstantWind,
    /// Uniform samples from the disturbance box.
    UniformRandom,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    /// True mass, kg.
    pub mass: f64,
    /// Initial state relative to the trim point; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyConfig {
    pub mass_min: f64,
    pub mass_max: f64,
    /// Lowest rotor efficiency the parameter set must cover.
    #[serde(default = "one")]
    pub efficiency_min: f64,
    /// Mass behind the initial point estimate and hover input.
    pub assumed_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    #[serde(default)]
    pub profile: DisturbanceProfile,
    /// Wind speed that sizes the disturbance box, m/s.
    #[serde(default = "default_wind_speed")]
    pub wind_speed: f64,
    #[serde(default = "default_drag")]
    pub drag: f64,
    /// Mass used to turn drag force into acceleration, kg.
    #[serde(default = "default_reference_mass")]
    pub reference_mass: f64,
    /// Scale of the constant-wind vertex, in `[0, 1]`.
    #[serde(default = "one")]
    pub fraction: f64,
    /// State-space direction selecting the constant-wind vertex; all ones
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        DisturbanceConfig {
            profile: DisturbanceProfile::default(),
            wind_speed: default_wind_speed(),
            drag: default_drag(),
            reference_mass: default_reference_mass(),
            fraction: 1.0,
            direction: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_noise_position")]
    pub position: f64,
    #[serde(default = "default_noise_velocity")]
    pub velocity: f64,
    /// Widen the non-falsified sets for the noise bound.
    #[serde(default = "yes")]
    pub dilation: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            enabled: false,
            position: default_noise_position(),
            velocity: default_noise_velocity(),
            dilation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(default)]
    pub mode: ControlMode,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Diagonal of the state weight.
    pub q: Vec<f64>,
    /// Diagonal of the input weight.
    pub r: Vec<f64>,
    #[serde(default = "default_max_rows")]
    pub max_rows: usize,
    #[serde(default = "yes")]
    pub steady_state_update: bool,
    #[serde(default)]
    pub robustify_ss_error: bool,
    /// LMS gain; derived from the largest regressor when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lms_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureConfig {
    /// First step with reduced efficiency.
    pub at_step: usize,
    /// Rotor efficiency from `at_step` on.
    pub efficiency: f64,
    #[serde(default = "yes")]
    pub dilation: bool,
    #[serde(default = "default_dilation_factor")]
    pub dilation_factor: f64,
    /// Lowest admissible lower bound; the lower end of `Θ₀` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dilation_floor: Option<f64>,
    #[serde(default)]
    pub dilation_variant: DilationVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceStep {
    /// First step at which this reference applies.
    pub step: usize,
    /// Position setpoint, one entry per position state.
    pub position: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub model: ModelKind,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub on_event: EventPolicy,
    pub plant: PlantConfig,
    pub uncertainty: UncertaintyConfig,
    #[serde(default)]
    pub disturbance: DisturbanceConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub controller: ControllerSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureConfig>,
    #[serde(default)]
    pub reference: Vec<ReferenceStep>,
    #[serde(default)]
    pub airframe: QuadrotorParams,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_wind_speed() -> f64 {
    2.0
}
fn default_drag() -> f64 {
    WIND_DRAG
}
fn default_reference_mass() -> f64 {
    0.028
}
fn default_noise_position() -> f64 {
    0.001
}
fn default_noise_velocity() -> f64 {
    0.01
}
fn default_horizon() -> usize {
    10
}
fn default_lambda() -> f64 {
    0.9
}
fn default_max_rows() -> usize {
    200
}
fn default_dilation_factor() -> f64 {
    0.7
}

/// Command-line adjustments applied on top of a scenario file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<ControlMode>,
    pub no_noise: bool,
    pub fail_at: Option<usize>,
}

impl ScenarioConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        let u = &self.uncertainty;
        for (name, v) in [("plant.mass", self.plant.mass), ("uncertainty.mass_min", u.mass_min), ("uncertainty.mass_max", u.mass_max), ("uncertainty.assumed_mass", u.assumed_mass)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(u.efficiency_min > 0.0 && u.efficiency_min <= 1.0) {
            return bad(format!("uncertainty.efficiency_min must lie in (0, 1], got {}", u.efficiency_min));
        }
        let (lo, hi) = self.theta0_bounds();
        if !(lo < hi) {
            return bad(format!("parameter interval [{lo}, {hi}] is empty; check mass_min < mass_max"));
        }
        let inside = |t: f64| t >= lo - 1e-12 && t <= hi + 1e-12;
        if !inside(self.theta_star()) {
            return bad(format!("true parameter {} lies outside [{lo}, {hi}]", self.theta_star()));
        }
        if !inside(self.theta_hat0()) {
            return bad(format!("assumed parameter {} lies outside [{lo}, {hi}]", self.theta_hat0()));
        }
        let c = &self.controller;
        if !(c.lambda > 0.0 && c.lambda < 1.0) {
            return bad(format!("controller.lambda must lie in (0, 1), got {}", c.lambda));
        }
        if c.horizon == 0 {
            return bad("controller.horizon must be at least 1".into());
        }
        let (n, m) = (self.model.n(), self.model.m());
        if c.q.len() != n || c.q.iter().any(|v| !(*v >= 0.0)) {
            return bad(format!("controller.q needs {n} nonnegative entries"));
        }
        if c.r.len() != m || c.r.iter().any(|v| !(*v > 0.0)) {
            return bad(format!("controller.r needs {m} positive entries"));
        }
        if let Some(mu) = c.lms_gain {
            if !(mu > 0.0) {
                return bad(format!("controller.lms_gain must be positive, got {mu}"));
            }
        }
        let d = &self.disturbance;
        if !(d.fraction >= 0.0 && d.fraction <= 1.0) {
            return bad(format!("disturbance.fraction must lie in [0, 1], got {}", d.fraction));
        }
        if !(d.wind_speed >= 0.0 && d.drag >= 0.0 && d.reference_mass > 0.0) {
            return bad("disturbance.wind_speed and drag must be nonnegative and reference_mass positive".into());
        }
        if let Some(dir) = &d.direction {
            if dir.len() != n {
                return bad(format!("disturbance.direction needs {n} entries"));
            }
        }
        if !(self.noise.position >= 0.0 && self.noise.velocity >= 0.0) {
            return bad("noise bounds must be nonnegative".into());
        }
        if let Some(x) = &self.plant.initial_state {
            if x.len() != n {
                return bad(format!("plant.initial_state needs {n} entries"));
            }
        }
        if let Some(f) = &self.failure {
            if !(f.efficiency >= u.efficiency_min && f.efficiency <= 1.0) {
                return bad(format!(
                    "failure.efficiency {} must lie in [{}, 1] so the parameter set still covers it",
                    f.efficiency, u.efficiency_min
                ));
            }
            if !(f.dilation_factor > 0.0 && f.dilation_factor <= 1.0) {
                return bad(format!("failure.dilation_factor must lie in (0, 1], got {}", f.dilation_factor));
            }
        }
        let np = self.model.position_states().len();
        let mut last = None;
        for r in &self.reference {
            if r.position.len() != np {
                return bad(format!("reference at step {} needs {np} position entries", r.step));
            }
            if r.position.iter().any(|p| p.abs() >= crate::model::POSITION_LIMIT) {
                return bad(format!("reference at step {} lies on or outside the position limit", r.step));
            }
            if last.is_some_and(|s| r.step <= s) {
                return bad("reference steps must be strictly increasing".into());
            }
            last = Some(r.step);
        }
        self.airframe.validate().map_err(|e| Error::Config(format!("airframe: {e}")))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(mode) = o.mode {
            self.controller.mode = mode;
        }
        if o.no_noise {
            self.noise.enabled = false;
        }
        if let Some(at) = o.fail_at {
            match &mut self.failure {
                Some(f) => f.at_step = at,
                None => {
                    self.failure = Some(FailureConfig {
                        at_step: at,
                        efficiency: self.uncertainty.efficiency_min,
                        dilation: true,
                        dilation_factor: default_dilation_factor(),
                        dilation_floor: None,
                        dilation_variant: DilationVariant::default(),
                    })
                }
            }
        }
        self.validate()
    }

    /// `[efficiency_min / mass_max, 1 / mass_min]`.
    pub fn theta0_bounds(&self) -> (f64, f64) {
        let u = &self.uncertainty;
        (u.efficiency_min / u.mass_max, 1.0 / u.mass_min)
    }

    pub fn theta0(&self) -> Result<Hyperbox> {
        let (lo, hi) = self.theta0_bounds();
        Hyperbox::interval(lo, hi)
    }

    /// True parameter before any failure.
    pub fn theta_star(&self) -> f64 {
        1.0 / self.plant.mass
    }

    pub fn theta_hat0(&self) -> f64 {
        1.0 / self.uncertainty.assumed_mass
    }

    pub fn disturbance_set(&self) -> Result<HPolytope> {
        let d = &self.disturbance;
        wind_box(self.model, d.wind_speed, d.drag, d.reference_mass)
    }

    pub fn noise_set(&self) -> Result<HPolytope> {
        noise_box(self.model, self.noise.position, self.noise.velocity)
    }

    pub fn trim(&self) -> Result<Trim> {
        Trim::new(self.model, &self.airframe)
    }

    /// Reference state at step `k`: the latest scheduled position, zero
    /// velocities and attitudes.
    pub fn reference_at(&self, k: usize) -> DVector<f64> {
        let mut x = DVector::zeros(self.model.n());
        if let Some(r) = self.reference.iter().rev().find(|r| r.step <= k) {
            for (i, s) in self.model.position_states().enumerate() {
                x[s] = r.position[i];
            }
        }
        x
    }

    pub fn synthesis_inputs(&self) -> Result<SynthesisInputs> {
        let (lo, hi) = self.theta0_bounds();
        let (system, constraints) = self.model.build(&self.airframe, lo, hi)?;
        let c = &self.controller;
        let robustify = if c.robustify_ss_error {
            Some((self.trim()?.hover_unit, DVector::from_element(1, self.theta_hat0())))
        } else {
            None
        };
        Ok(SynthesisInputs {
            system,
            constraints,
            theta0: self.theta0()?,
            disturbance: self.disturbance_set()?,
            q: DMatrix::from_diagonal(&DVector::from_vec(c.q.clone())),
            r: DMatrix::from_diagonal(&DVector::from_vec(c.r.clone())),
            horizon: c.horizon,
            lambda: c.lambda,
            max_rows: c.max_rows,
            robustify,
        })
    }

    /// SHA-256 over every setting the offline synthesis reads, so cached
    /// artifacts are reused exactly when they would be reproduced.
    pub fn synthesis_hash(&self) -> String {
        let c = &self.controller;
        let u = &self.uncertainty;
        let d = &self.disturbance;
        let key = serde_json::json!({
            "version": env!("CARGO_PKG_VERSION"),
            "model": self.model,
            "airframe": self.airframe,
            "theta0": self.theta0_bounds(),
            "assumed": c.robustify_ss_error.then_some(u.assumed_mass),
            "wind": [d.wind_speed, d.drag, d.reference_mass],
            "q": c.q,
            "r": c.r,
            "horizon": c.horizon,
            "lambda": c.lambda,
            "max_rows": c.max_rows,
        });
        hex::encode(Sha256::digest(key.to_string().as_bytes()))
    }

    /// Controller settings for these artifacts. The robust baseline always
    /// runs with a fixed hover input.
    pub fn controller_config(&self, artifacts: SynthesisArtifacts) -> Result<ControllerConfig> {
        let c = &self.controller;
        let failure_dilation = match &self.failure {
            Some(f) if f.dilation && c.mode == ControlMode::Adaptive => Some(FailureDilation {
                factor: f.dilation_factor,
                floor: DVector::from_element(1, f.dilation_floor.unwrap_or(self.theta0_bounds().0)),
                variant: f.dilation_variant,
            }),
            _ => None,
        };
        let measurement_noise = if self.noise.enabled && self.noise.dilation { Some(self.noise_set()?) } else { None };
        let cfg = ControllerConfig {
            horizon: c.horizon,
            artifacts,
            mode: c.mode,
            steady_state_update: c.steady_state_update && c.mode == ControlMode::Adaptive,
            robustify_ss_error: c.robustify_ss_error,
            failure_dilation,
            measurement_noise,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
