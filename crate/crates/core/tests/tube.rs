//! Closed-loop guarantees of the tube controller: successors stay inside the
//! predicted tube and the problem stays feasible from them.

mod common;

use proptest::prelude::*;
use rampc::config::DisturbanceProfile;
use rampc::controller::solve_step;
use rampc::sim::{build_controller, plant_step, prepare_artifacts, run_closed_loop, PlantState};
use rampc::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

#[test]
fn problem_stays_feasible_from_every_sampled_successor() {
    let cfg = scenario("altitude-mass");
    let a = prepare_artifacts(&cfg).unwrap();
    let mut ctrl = build_controller(&cfg, &a).unwrap();
    let sys = &a.system;
    let (w_lo, w_hi) = bounds(&a.disturbance);
    let drift = cfg.trim().unwrap().drift;
    let theta_star = DVector::from_element(1, cfg.theta_star());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut plant = PlantState::new(DVector::zeros(2));
    for k in 0..12 {
        let reference = cfg.reference_at(k);
        let out = ctrl.step(&plant.x_true, &reference).unwrap();
        let sol = out.solution.unwrap();
        let est = ctrl.estimator().clone();
        let x_k = &plant.x_true - &reference;
        for _ in 0..20 {
            let theta = uniform_in_box(&mut rng, &est.theta_set);
            let w = uniform_in(&mut rng, &w_lo, &w_hi);
            let x1 = sys.step(&theta, &x_k, &sol.u0).unwrap() + w;
            let next = solve_step(&x1, &reference, &est, ctrl.config(), Some(&sol.z), k + 1);
            assert!(next.is_ok(), "step {k}: successor {:?} infeasible: {:?}", x1.as_slice(), next.err());
        }
        let w = uniform_in(&mut rng, &w_lo, &w_hi);
        plant = plant_step(&plant, &out.u_abs, sys, &theta_star, &drift, &w).unwrap();
    }
}

#[test]
fn robustified_tube_contains_the_realized_trajectory() {
    // With a fixed hover input and its worst mismatch folded into the tube
    // growth, the real plant (true mass, gravity) stays in the one-step
    // tube. The mismatch over 27 to 37 g does not fit, so the mass range is
    // narrower here.
    let mut cfg = scenario("altitude-mass");
    cfg.uncertainty.mass_min = 0.0275;
    cfg.uncertainty.mass_max = 0.0285;
    cfg.uncertainty.assumed_mass = 0.028;
    cfg.controller.robustify_ss_error = true;
    cfg.controller.steady_state_update = false;
    cfg.disturbance.profile = DisturbanceProfile::UniformRandom;
    cfg.reference.truncate(1);
    cfg.steps = 40;
    let a = prepare_artifacts(&cfg).unwrap();
    assert!(a.u_tilde_max() > 0.0);
    let mut ctrl = build_controller(&cfg, &a).unwrap();
    let drift = cfg.trim().unwrap().drift;
    let theta_star = DVector::from_element(1, cfg.theta_star());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (w_lo, w_hi) = bounds(&a.disturbance);
    let mut plant = PlantState::new(DVector::zeros(2));
    for k in 0..cfg.steps {
        let reference = cfg.reference_at(k);
        let out = ctrl.step(&plant.x_true, &reference).unwrap();
        let sol = out.solution.unwrap();
        let w = uniform_in(&mut rng, &w_lo, &w_hi);
        plant = plant_step(&plant, &out.u_abs, &a.system, &theta_star, &drift, &w).unwrap();
        let level = tube_level(&a.x0.a, &(&plant.x_true - &reference), &sol.x_bar[1]);
        assert!(level <= sol.alpha[1] + 1e-7, "step {k}: successor at level {level}, tube {}", sol.alpha[1]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    /// The seed changes the disturbance realization, never constraint
    /// satisfaction or feasibility.
    #[test]
    fn any_seed_keeps_constraints_and_feasibility(seed in any::<u64>()) {
        let mut cfg = scenario("altitude-mass");
        cfg.seed = seed;
        cfg.disturbance.profile = DisturbanceProfile::UniformRandom;
        cfg.steps = 80;
        let a = prepare_artifacts(&cfg).unwrap();
        let s = run_closed_loop(&cfg, &a).unwrap().summary();
        prop_assert!(s.healthy(), "{s}");
    }
}
