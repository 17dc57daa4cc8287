//! Cross-module checks of the full update pipeline on the diffusion-reaction
//! benchmark: statistical behavior of the secondary-input sampler, and
//! reproducibility plus objective improvement of the posterior solution
//! ensemble built from two expensive-model evaluations.

use hdsa_core::calibration::calibrate;
use hdsa_core::fem;
use hdsa_core::mesh::build_interval_mesh;
use hdsa_core::models::diffusion_reaction::{DiffusionReaction, DEFAULT_KAPPA};
use hdsa_core::models::{discrepancy_training_data, sample_secondary_input};
use hdsa_core::optim::{minimize, ForwardModel, LofiProblem, TrustRegionOptions};
use hdsa_core::prior::default_state_rank;
use hdsa_core::rng::SeedSpec;
use hdsa_core::update::posterior_solution_samples;
use hdsa_core::{EllipticOperator, HessianProjector, OptPrior, StatePrior};
use nalgebra::DVector;

/// `sqrt(v' M v)` with the model's state mass matrix.
fn mass_norm(model: &DiffusionReaction, v: &DVector<f64>) -> f64 {
    (v.transpose() * model.state_mass() * v)[(0, 0)].sqrt()
}

/// The elliptic-squared covariance behaves like a Matern kernel with length
/// scale `sqrt(beta)`, so the distance at which the empirical autocorrelation
/// of 100 secondary-input perturbations decays below one half must land
/// within a factor of two of `sqrt(beta)`.
#[test]
fn perturbation_correlation_length_tracks_hyperparameter() {
    // (beta, domain end, elements): each resolution keeps more than eight
    // nodes per length scale, and the reference band [0.3, 0.6] of the
    // domain leaves several lengths of margin to both boundaries.
    for &(beta, end, ne) in &[(2e-2f64, 1.0, 200usize), (3e-2, 2.0, 400), (1e-1, 10.0, 400)] {
        let mesh = build_interval_mesh(0.0, end, ne).unwrap();
        let fem_m = fem::assemble(&mesh);
        let prior =
            OptPrior::function_space(1.0, EllipticOperator::new(&fem_m, beta).unwrap()).unwrap();
        let n_nodes = ne + 1;
        let z_center = DVector::from_fn(n_nodes, |i, _| {
            1.0 + (std::f64::consts::PI * i as f64 / ne as f64).sin()
        });
        let n_draws = 100;
        let perturbations: Vec<DVector<f64>> = (0..n_draws)
            .map(|k| sample_secondary_input(&prior, &z_center, 0.2, SeedSpec::new(42, k)) - &z_center)
            .collect();

        let h = end / ne as f64;
        let refs: Vec<usize> = (3 * ne / 10..=6 * ne / 10).step_by(ne / 20).collect();
        let max_lag = (((2.5 * beta.sqrt()) / h).ceil() as usize)
            .min(n_nodes - 1 - refs.last().unwrap());
        let mut curve = vec![0.0; max_lag + 1];
        for &a in &refs {
            let mean_a: f64 = perturbations.iter().map(|d| d[a]).sum::<f64>() / n_draws as f64;
            let var_a: f64 = perturbations
                .iter()
                .map(|d| (d[a] - mean_a).powi(2))
                .sum::<f64>()
                / n_draws as f64;
            for (lag, acc) in curve.iter_mut().enumerate() {
                let b = a + lag;
                let mean_b: f64 =
                    perturbations.iter().map(|d| d[b]).sum::<f64>() / n_draws as f64;
                let var_b: f64 = perturbations
                    .iter()
                    .map(|d| (d[b] - mean_b).powi(2))
                    .sum::<f64>()
                    / n_draws as f64;
                let cov: f64 = perturbations
                    .iter()
                    .map(|d| (d[a] - mean_a) * (d[b] - mean_b))
                    .sum::<f64>()
                    / n_draws as f64;
                *acc += cov / (var_a * var_b).sqrt();
            }
        }
        for c in curve.iter_mut() {
            *c /= refs.len() as f64;
        }

        // First crossing of 1/2, linearly interpolated between nodes.
        let mut d_half = f64::NAN;
        for lag in 1..=max_lag {
            if curve[lag] < 0.5 {
                let frac = (curve[lag - 1] - 0.5) / (curve[lag - 1] - curve[lag]);
                d_half = (lag as f64 - 1.0 + frac) * h;
                break;
            }
        }
        let ell = beta.sqrt();
        assert!(
            d_half.is_finite() && d_half >= 0.5 * ell && d_half <= 2.0 * ell,
            "beta={beta:.0e}: half-correlation distance {d_half:.4} outside [{:.4}, {:.4}]",
            0.5 * ell,
            2.0 * ell
        );
    }
}

/// Secondary training inputs are a pure function of the seed, scale to the
/// requested relative magnitude, and pass the linear-independence check the
/// training-set constructor enforces.
#[test]
fn secondary_inputs_reproduce_and_remain_independent() {
    let ne = 60;
    let lofi = DiffusionReaction::lofi(ne, DEFAULT_KAPPA).unwrap();
    let hifi = DiffusionReaction::hifi(ne, DEFAULT_KAPPA).unwrap();
    let opts = TrustRegionOptions::default();
    let z_tilde = minimize(&lofi, &DVector::zeros(ne + 1), &opts).unwrap().z;

    let fem_m = fem::assemble(lofi.mesh());
    let op_z =
        OptPrior::function_space(1e-10, EllipticOperator::new(&fem_m, 3e-2).unwrap()).unwrap();
    let z2 = sample_secondary_input(&op_z, &z_tilde, 0.2, SeedSpec::new(9, 5));
    let z2_again = sample_secondary_input(&op_z, &z_tilde, 0.2, SeedSpec::new(9, 5));
    assert_eq!(z2, z2_again, "same seed must give a bitwise-equal draw");
    let z2_other = sample_secondary_input(&op_z, &z_tilde, 0.2, SeedSpec::new(9, 6));
    assert!(
        (&z2 - &z2_other).norm() > 1e-8,
        "different streams must give different draws"
    );

    let rel = mass_norm(&lofi, &(&z2 - &z_tilde)) / mass_norm(&lofi, &z_tilde);
    assert!(
        (rel - 0.2).abs() < 1e-12,
        "perturbation magnitude {rel} differs from the requested 0.2"
    );

    // The constructor rejects linearly dependent inputs, so building the
    // training set doubles as the independence check.
    let data = discrepancy_training_data(&hifi, &lofi, vec![z_tilde.clone(), z2]).unwrap();
    assert_eq!(data.len(), 2);
    for d in &data.outputs {
        assert!(d.norm() > 1e-6, "the two fidelities must actually disagree");
    }
}

/// End-to-end smoke test at a coarse resolution: calibrate from two training
/// pairs, project through the curvature subspace, and check that the
/// ensemble is seed-reproducible, that the mean-only path matches the
/// sampled path's mean, and that the updated solution improves the
/// expensive-model objective.
#[test]
fn posterior_update_pipeline_is_reproducible_and_improves_objective() {
    let ne = 48;
    let lofi = DiffusionReaction::lofi(ne, DEFAULT_KAPPA).unwrap();
    let hifi = DiffusionReaction::hifi(ne, DEFAULT_KAPPA).unwrap();
    let opts = TrustRegionOptions::default();
    let z_tilde = minimize(&lofi, &DVector::zeros(ne + 1), &opts).unwrap().z;

    let fem_m = fem::assemble(lofi.mesh());
    let op_u = EllipticOperator::new(&fem_m, 2e-2).unwrap();
    let q = default_state_rank(&op_u, 1e-3, SeedSpec::new(11, 1)).unwrap();
    let state_prior = StatePrior::from_elliptic(4.0, &op_u, q, 10, SeedSpec::new(11, 2)).unwrap();
    let opt_prior =
        OptPrior::function_space(1e-10, EllipticOperator::new(&fem_m, 3e-2).unwrap()).unwrap();

    let z2 = sample_secondary_input(&opt_prior, &z_tilde, 0.2, SeedSpec::new(11, 3));
    let data = discrepancy_training_data(&hifi, &lofi, vec![z_tilde.clone(), z2]).unwrap();
    let cal = calibrate(&data, &state_prior, &opt_prior, 1e-4).unwrap();

    let lin = lofi.linearize(&z_tilde).unwrap();
    let projector = HessianProjector::compute(
        lin.as_ref(),
        &opt_prior,
        16,
        8,
        2,
        1e-6,
        SeedSpec::new(11, 4),
    )
    .unwrap()
    .truncated(1e-4);
    assert!(projector.rank() >= 1);

    let ens = posterior_solution_samples(lin.as_ref(), &cal, &projector, 5, SeedSpec::new(11, 7));
    let ens_again =
        posterior_solution_samples(lin.as_ref(), &cal, &projector, 5, SeedSpec::new(11, 7));
    assert_eq!(ens.mean_update, ens_again.mean_update);
    assert_eq!(ens.samples, ens_again.samples);
    let ens_other =
        posterior_solution_samples(lin.as_ref(), &cal, &projector, 5, SeedSpec::new(11, 8));
    for (a, b) in ens.samples.iter().zip(&ens_other.samples) {
        assert!((a - b).norm() > 1e-10, "new seed must move the samples");
    }

    // Zero samples still produce the identical deterministic mean update.
    let mean_only =
        posterior_solution_samples(lin.as_ref(), &cal, &projector, 0, SeedSpec::new(11, 9));
    assert!(mean_only.samples.is_empty());
    assert_eq!(mean_only.mean_update, ens.mean_update);
    assert_eq!(
        mean_only.z_center + &mean_only.mean_shift,
        mean_only.mean_update
    );

    // The calibrated mean must nearly interpolate the training outputs at
    // this noise level.
    let mean = cal.posterior_mean();
    for (l, resid) in cal.mean_fit_residuals(&mean).iter().enumerate() {
        let scale = mass_norm(&lofi, &data.outputs[l]);
        assert!(
            resid / scale < 0.05,
            "training pair {l}: mean misfit {:.3e} of {:.3e}",
            resid,
            scale
        );
    }

    // The point of the whole exercise: the updated solution beats the
    // low-fidelity optimum under the expensive model.
    let j_at = |z: &DVector<f64>| {
        let u = ForwardModel::solve(&hifi, z).unwrap();
        lofi.objective_of(&u, z)
    };
    let j_tilde = j_at(&z_tilde);
    let j_bar = j_at(&ens.mean_update);
    assert!(
        j_bar < 0.9 * j_tilde,
        "expensive objective {j_bar:.6e} did not improve on {j_tilde:.6e}"
    );
}
