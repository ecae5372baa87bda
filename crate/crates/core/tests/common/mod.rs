#![allow(dead_code)]

use std::path::PathBuf;

use rampc::config::ScenarioConfig;
use rampc::geometry::{support, HPolytope, Hyperbox};
use rampc::{DMatrix, DVector};
use rand::Rng;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.toml"))
}

pub fn scenario(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&scenario_path(name)).unwrap()
}

/// Axis-aligned bounds of a bounded polytope.
pub fn bounds(p: &HPolytope) -> (DVector<f64>, DVector<f64>) {
    let n = p.dim();
    let mut lo = DVector::zeros(n);
    let mut hi = DVector::zeros(n);
    for i in 0..n {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        hi[i] = support(p, &e).unwrap();
        lo[i] = -support(p, &-e).unwrap();
    }
    (lo, hi)
}

pub fn uniform_in<R: Rng>(rng: &mut R, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(lo.len(), |i, _| if hi[i] > lo[i] { rng.random_range(lo[i]..=hi[i]) } else { lo[i] })
}

pub fn uniform_in_box<R: Rng>(rng: &mut R, b: &Hyperbox) -> DVector<f64> {
    uniform_in(rng, &b.lower(), &b.upper())
}

/// `max_i (H (x − center))_i`, the tube scaling needed to cover `x`.
pub fn tube_level(h: &DMatrix<f64>, x: &DVector<f64>, center: &DVector<f64>) -> f64 {
    (h * (x - center)).max()
}

/// Mass interval width in grams for an inverse-mass interval.
pub fn mass_width_g(theta_lower: f64, theta_upper: f64) -> f64 {
    (1.0 / theta_lower - 1.0 / theta_upper) * 1e3
}
