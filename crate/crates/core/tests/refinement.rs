//! Discretization refinement checks: each benchmark's default resolution is
//! the one where halving the mesh width moves the cheap-model optimal
//! objective by less than one percent, so the defaults baked into the
//! library are certified here rather than taken on faith.

use hdsa_core::models::advection_diffusion::{self, AdvectionDiffusion};
use hdsa_core::models::diffusion_reaction::{self, DiffusionReaction};
use hdsa_core::models::mass_spring::MassSpring;
use hdsa_core::optim::{minimize, LofiProblem, TrustRegionOptions};
use nalgebra::DVector;

fn optimal_objective(problem: &dyn LofiProblem) -> f64 {
    let z0 = DVector::zeros(problem.opt_dim());
    let res = minimize(problem, &z0, &TrustRegionOptions::default()).unwrap();
    assert!(res.converged, "optimizer stalled at gradient {:.3e}", res.gradient_norm);
    res.objective
}

fn assert_refined(name: &str, coarse: f64, fine: f64) {
    let change = (coarse - fine).abs() / fine.abs();
    assert!(
        change < 0.01,
        "{name}: halving the mesh moved the optimal objective by {:.2}%",
        100.0 * change
    );
}

#[test]
fn reaction_default_resolution_is_refined() {
    let ne = 100;
    let coarse = optimal_objective(&DiffusionReaction::lofi(ne, diffusion_reaction::DEFAULT_KAPPA).unwrap());
    let fine = optimal_objective(&DiffusionReaction::lofi(2 * ne, diffusion_reaction::DEFAULT_KAPPA).unwrap());
    assert_refined("diffusion-reaction ne=100", coarse, fine);
}

#[test]
fn spring_default_resolution_is_refined() {
    let ns = 400;
    let coarse = optimal_objective(&MassSpring::lofi(ns).unwrap());
    let fine = optimal_objective(&MassSpring::lofi(2 * ns).unwrap());
    assert_refined("mass-spring ns=400", coarse, fine);
}

#[test]
fn advection_default_resolution_is_refined() {
    let nx = 40;
    let coarse = optimal_objective(&AdvectionDiffusion::lofi(nx, advection_diffusion::DEFAULT_KAPPA).unwrap());
    let fine = optimal_objective(&AdvectionDiffusion::lofi(2 * nx, advection_diffusion::DEFAULT_KAPPA).unwrap());
    assert_refined("advection-diffusion nx=40", coarse, fine);
}
