//! The subcommands.  Each one validates its configuration, builds the
//! benchmark, runs its stages, and always leaves a manifest in the output
//! directory — on failure too, with everything produced so far still on
//! disk and the failure recorded.

use nalgebra::DVector;
use rayon::prelude::*;
use std::path::PathBuf;
use std::time::Instant;

use hdsa_core::calibration::{calibrate, Calibration, TrainingData};
use hdsa_core::cost::{cost_lofi_opt, cost_posterior, CostParams};
use hdsa_core::models::{discrepancy_training_data, sample_secondary_input};
use hdsa_core::optim::{minimize, OptimizationResult, TrustRegionOptions};
use hdsa_core::rng::SeedSpec;
use hdsa_core::update::{posterior_solution_samples, HessianProjector};

use crate::artifacts::{self, numbered};
use crate::config::{self, Resolved};
use crate::manifest::RunManifest;
use crate::oracle_suite::{self, SuiteParams};
use crate::pipeline::{self, seeds, Built, SolveView};
use crate::CliError;

/// Configuration path plus the optional output-directory override shared by
/// every configured subcommand.
pub struct CommonArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
}

fn prepare(command: &str, args: &CommonArgs) -> Result<(Resolved, RunManifest), CliError> {
    let (cfg, sha) = config::load(&args.config)?;
    let resolved = config::resolve(cfg, args.out.clone())?;
    std::fs::create_dir_all(&resolved.output_dir)?;
    let manifest = RunManifest::new(command, sha, resolved.clone());
    Ok((resolved, manifest))
}

/// Record the outcome in the manifest and write it, then propagate.
fn finish(
    resolved: &Resolved,
    mut manifest: RunManifest,
    outcome: Result<(), CliError>,
) -> Result<(), CliError> {
    if let Err(err) = &outcome {
        manifest.mark_failed(err);
    }
    manifest.write(&resolved.output_dir)?;
    outcome
}

fn build_timed(r: &Resolved, man: &mut RunManifest) -> Result<Built, CliError> {
    let t = Instant::now();
    let built = pipeline::build(r)?;
    man.add_timing("build", t.elapsed().as_secs_f64());
    man.choose("gamma", built.gamma);
    match built.state_rank_used {
        Some(q) => man.choose("state_rank", q),
        None => man.choose("state_rank", "exact"),
    }
    man.choose("opt_dim", built.opt_dim());
    man.choose("state_dim", built.state_dim());
    Ok(built)
}

/// Solve the low-fidelity problem from zero, log every iteration, and
/// persist the optimum.  Non-convergence is an error that points at the log.
fn run_lofi_optimization(
    built: &Built,
    r: &Resolved,
    man: &mut RunManifest,
) -> Result<OptimizationResult, CliError> {
    let t = Instant::now();
    let z0 = DVector::zeros(built.opt_dim());
    let result = minimize(built.lofi.as_ref(), &z0, &TrustRegionOptions::default())
        .map_err(|e| CliError::Solver(format!("low-fidelity optimization failed: {e}")))?;
    man.add_timing("lofi_optimization", t.elapsed().as_secs_f64());
    let log = r.output_dir.join("optimize.log");
    artifacts::write_iteration_log(&log, &result)?;
    man.add_file("optimize.log");
    if !result.converged {
        return Err(CliError::Solver(format!(
            "low-fidelity optimizer stopped at gradient norm {:.3e} without \
             converging; see {}",
            result.gradient_norm,
            log.display()
        )));
    }
    man.choose("lofi_objective", result.objective);
    man.choose("lofi_iterations", result.iterations.len());
    built.layout.write_opt_table(
        &r.output_dir.join("z_tilde.csv"),
        &["z_tilde".to_string()],
        &[&result.z],
    )?;
    man.add_file("z_tilde.csv");
    Ok(result)
}

/// Evaluate both models at the training inputs and persist inputs and
/// discrepancies.  Returns the calibration-ready data set.
fn run_training_stage(
    built: &Built,
    r: &Resolved,
    man: &mut RunManifest,
    z_tilde: &DVector<f64>,
) -> Result<TrainingData, CliError> {
    let inputs = pipeline::training_inputs(built, r, z_tilde);
    {
        let refs: Vec<&DVector<f64>> = inputs.iter().collect();
        built.layout.write_opt_table(
            &r.output_dir.join("training_inputs.csv"),
            &numbered("input", refs.len()),
            &refs,
        )?;
        man.add_file("training_inputs.csv");
    }
    let t = Instant::now();
    let data = discrepancy_training_data(
        &SolveView(built.hifi.as_ref()),
        &SolveView(built.lofi.as_ref()),
        inputs,
    )
    .map_err(|e| CliError::Solver(format!("training evaluation failed: {e}")))?;
    man.add_timing("training_evaluations", t.elapsed().as_secs_f64());
    {
        let refs: Vec<&DVector<f64>> = data.outputs.iter().collect();
        built.layout.write_state_table(
            &r.output_dir.join("discrepancy_data.csv"),
            &numbered("discrepancy", refs.len()),
            &refs,
        )?;
        man.add_file("discrepancy_data.csv");
    }
    Ok(data)
}

fn run_calibration<'a>(
    built: &'a Built,
    man: &mut RunManifest,
    data: &'a TrainingData,
    alpha_d: f64,
) -> Result<Calibration<'a>, CliError> {
    let cal = calibrate(data, &built.state_prior, &built.opt_prior, alpha_d)
        .map_err(|e| CliError::Solver(format!("calibration failed: {e}")))?;
    man.choose("data_direction_weights", cal.spectrum.eigvals.as_slice().to_vec());
    man.choose(
        "mean_fit_residual_norms",
        cal.mean_fit_residuals(&cal.posterior_mean()),
    );
    Ok(cal)
}

/// Build the curvature projector big enough for the largest requested rank
/// and record its settings and spectrum head.
fn run_sketch_stage(
    built: &Built,
    r: &Resolved,
    man: &mut RunManifest,
    lin: &dyn hdsa_core::optim::Linearization,
    max_rank: usize,
) -> Result<HessianProjector, CliError> {
    let sk = pipeline::sketch_params(r.benchmark, built.opt_dim(), max_rank);
    man.choose("sketch", sk);
    let t = Instant::now();
    let proj = HessianProjector::compute(
        lin,
        &built.opt_prior,
        sk.rank,
        sk.oversample,
        sk.power_iters,
        sk.residual_tol,
        SeedSpec::new(r.master_seed, seeds::SKETCH),
    )
    .map_err(|e| CliError::Solver(format!("curvature factorization failed: {e}")))?;
    man.add_timing("curvature_sketch", t.elapsed().as_secs_f64());
    let head: Vec<f64> = proj.eigvals.iter().copied().take(8).collect();
    man.choose("curvature_eigenvalues_head", head);
    man.choose("curvature_rank_available", proj.rank());
    man.choose("curvature_rank_decay_rule", proj.truncated(1e-4).rank());
    man.choose("curvature_hessian_applies", proj.hessian_applies);
    Ok(proj)
}

/// Optimize the high-fidelity model (the expensive validation reference).
fn run_hifi_optimization(
    built: &Built,
    r: &Resolved,
    man: &mut RunManifest,
) -> Result<OptimizationResult, CliError> {
    let t = Instant::now();
    let z0 = DVector::zeros(built.opt_dim());
    let result = minimize(built.hifi.as_ref(), &z0, &TrustRegionOptions::default())
        .map_err(|e| CliError::Solver(format!("high-fidelity optimization failed: {e}")))?;
    man.add_timing("hifi_optimization", t.elapsed().as_secs_f64());
    let log = r.output_dir.join("hifi_optimize.log");
    artifacts::write_iteration_log(&log, &result)?;
    man.add_file("hifi_optimize.log");
    if !result.converged {
        return Err(CliError::Solver(format!(
            "high-fidelity optimizer stopped at gradient norm {:.3e} without \
             converging; see {}",
            result.gradient_norm,
            log.display()
        )));
    }
    built.layout.write_opt_table(
        &r.output_dir.join("z_star.csv"),
        &["z_star".to_string()],
        &[&result.z],
    )?;
    man.add_file("z_star.csv");
    man.choose("hifi_objective_at_hifi_optimum", result.objective);
    Ok(result)
}

pub fn cmd_optimize(args: &CommonArgs) -> Result<(), CliError> {
    let (resolved, mut manifest) = prepare("optimize", args)?;
    let outcome = optimize_inner(&resolved, &mut manifest);
    finish(&resolved, manifest, outcome)
}

fn optimize_inner(r: &Resolved, man: &mut RunManifest) -> Result<(), CliError> {
    let built = build_timed(r, man)?;
    let result = run_lofi_optimization(&built, r, man)?;
    let u_lofi = built
        .lofi
        .solve(&result.z)
        .map_err(|e| CliError::Solver(format!("low-fidelity solve at the optimum failed: {e}")))?;
    built.layout.write_state_table(
        &r.output_dir.join("state_lofi.csv"),
        &["state_lofi".to_string()],
        &[&u_lofi],
    )?;
    man.add_file("state_lofi.csv");
    let t = Instant::now();
    let u_hifi = built.hifi.solve(&result.z).map_err(|e| {
        CliError::Solver(format!(
            "high-fidelity solve at the low-fidelity optimum failed: {e}"
        ))
    })?;
    man.add_timing("hifi_solve", t.elapsed().as_secs_f64());
    built.layout.write_state_table(
        &r.output_dir.join("state_hifi.csv"),
        &["state_hifi".to_string()],
        &[&u_hifi],
    )?;
    man.add_file("state_hifi.csv");
    man.choose(
        "hifi_objective_at_lofi_optimum",
        built.lofi.objective_of(&u_hifi, &result.z),
    );
    Ok(())
}

pub fn cmd_preview_prior(args: &CommonArgs) -> Result<(), CliError> {
    let (resolved, mut manifest) = prepare("preview-prior", args)?;
    let outcome = preview_inner(&resolved, &mut manifest);
    finish(&resolved, manifest, outcome)
}

fn preview_inner(r: &Resolved, man: &mut RunManifest) -> Result<(), CliError> {
    let built = build_timed(r, man)?;
    let result = run_lofi_optimization(&built, r, man)?;
    // The unprobed-direction geometry needs the training-input set but not
    // the expensive evaluations, so calibrate against zero discrepancies.
    let inputs = pipeline::training_inputs(&built, r, &result.z);
    let zeros = vec![DVector::zeros(built.state_dim()); inputs.len()];
    let data = TrainingData::new(result.z.clone(), inputs, zeros)
        .map_err(|e| CliError::Solver(format!("training inputs are degenerate: {e}")))?;
    let cal = calibrate(&data, &built.state_prior, &built.opt_prior, r.hyper.alpha_d)
        .map_err(|e| CliError::Solver(format!("calibration failed: {e}")))?;

    let z_ref = sample_secondary_input(
        &built.opt_prior,
        &result.z,
        r.secondary_magnitude,
        SeedSpec::new(r.master_seed, seeds::SECONDARY).substream(r.n_data as u64),
    );
    built.layout.write_opt_table(
        &r.output_dir.join("z_ref.csv"),
        &["z_ref".to_string()],
        &[&z_ref],
    )?;
    man.add_file("z_ref.csv");
    man.choose("complement_scale_at_z_ref", cal.complement_scale(&z_ref));

    if r.samples > 0 {
        let t = Instant::now();
        let state_seed = SeedSpec::new(r.master_seed, seeds::PREVIEW_STATE);
        let draws: Vec<DVector<f64>> = (0..r.samples)
            .map(|k| built.state_prior.sample(state_seed.substream(k as u64)))
            .collect();
        let refs: Vec<&DVector<f64>> = draws.iter().collect();
        built.layout.write_state_table(
            &r.output_dir.join("prior_state_samples.csv"),
            &numbered("sample", refs.len()),
            &refs,
        )?;
        man.add_file("prior_state_samples.csv");

        let opt_seed = SeedSpec::new(r.master_seed, seeds::PREVIEW_OPT);
        let draws: Vec<DVector<f64>> = (0..r.samples)
            .map(|k| built.opt_prior.sample(opt_seed.substream(k as u64)))
            .collect();
        let refs: Vec<&DVector<f64>> = draws.iter().collect();
        built.layout.write_opt_table(
            &r.output_dir.join("prior_opt_samples.csv"),
            &numbered("sample", refs.len()),
            &refs,
        )?;
        man.add_file("prior_opt_samples.csv");

        let delta_seed = SeedSpec::new(r.master_seed, seeds::PREVIEW_DELTA);
        let draws: Vec<DVector<f64>> = (0..r.samples)
            .map(|k| cal.sample_complement_delta(&z_ref, delta_seed.substream(k as u64)))
            .collect();
        let refs: Vec<&DVector<f64>> = draws.iter().collect();
        built.layout.write_state_table(
            &r.output_dir.join("delta_complement_samples.csv"),
            &numbered("sample", refs.len()),
            &refs,
        )?;
        man.add_file("delta_complement_samples.csv");
        man.add_timing("prior_sampling", t.elapsed().as_secs_f64());
    }
    Ok(())
}

pub fn cmd_run(args: &CommonArgs) -> Result<(), CliError> {
    let (resolved, mut manifest) = prepare("run", args)?;
    let outcome = run_inner(&resolved, &mut manifest);
    finish(&resolved, manifest, outcome)
}

fn run_inner(r: &Resolved, man: &mut RunManifest) -> Result<(), CliError> {
    let built = build_timed(r, man)?;
    let ranks = r
        .ranks
        .clone()
        .unwrap_or_else(|| r.benchmark.default_run_ranks());
    if ranks.contains(&0) {
        return Err(CliError::Config(
            "update.ranks entry 0: the rank-0 update is the unchanged optimum, \
             which only the rank-sweep table reports"
                .into(),
        ));
    }
    man.choose("ranks", &ranks);

    let result = run_lofi_optimization(&built, r, man)?;
    let z_tilde = &result.z;
    let data = run_training_stage(&built, r, man, z_tilde)?;
    let cal = run_calibration(&built, man, &data, r.hyper.alpha_d)?;

    let lin = built
        .lofi
        .linearize(z_tilde)
        .map_err(|e| CliError::Solver(format!("linearization at the optimum failed: {e}")))?;
    let max_rank = *ranks.iter().max().expect("ranks nonempty");
    let proj_full = run_sketch_stage(&built, r, man, lin.as_ref(), max_rank)?;

    // Histogram markers: the objective at the unchanged optimum comes free
    // from the training evaluations (first input is the optimum itself).
    let u_lofi = built
        .lofi
        .solve(z_tilde)
        .map_err(|e| CliError::Solver(format!("low-fidelity solve at the optimum failed: {e}")))?;
    let u_hifi_center = &u_lofi + &data.outputs[0];
    let mut markers = vec![(
        "hifi_objective_at_lofi_optimum".to_string(),
        built.lofi.objective_of(&u_hifi_center, z_tilde),
    )];

    let ensemble_seed = SeedSpec::new(r.master_seed, seeds::ENSEMBLE);
    for &rank in &ranks {
        let t = Instant::now();
        let proj = proj_full.truncated_rank(rank);
        let ens = posterior_solution_samples(lin.as_ref(), &cal, &proj, r.samples, ensemble_seed);
        let name = format!("mean_update_r{rank}.csv");
        built.layout.write_opt_table(
            &r.output_dir.join(&name),
            &["mean_update".to_string()],
            &[&ens.mean_update],
        )?;
        man.add_file(&name);
        if r.samples > 0 {
            let refs: Vec<&DVector<f64>> = ens.samples.iter().collect();
            let name = format!("samples_r{rank}.csv");
            built.layout.write_opt_table(
                &r.output_dir.join(&name),
                &numbered("sample", refs.len()),
                &refs,
            )?;
            man.add_file(&name);
        }
        let j_mean = built.hifi.objective(&ens.mean_update).map_err(|e| {
            CliError::Solver(format!(
                "high-fidelity solve at the rank-{rank} mean update failed: {e}"
            ))
        })?;
        markers.push((format!("hifi_objective_at_mean_update_r{rank}"), j_mean));
        if r.evaluate_samples.unwrap_or(false) && r.samples > 0 {
            let objectives: Vec<f64> = ens
                .samples
                .par_iter()
                .map(|z| built.hifi.objective(z).unwrap_or(f64::NAN))
                .collect();
            let failures = objectives.iter().filter(|v| v.is_nan()).count();
            if failures > 0 {
                man.choose(&format!("sample_objective_failures_r{rank}"), failures);
            }
            let name = format!("objectives_r{rank}.csv");
            hdsa_core::io::write_csv_columns(
                &r.output_dir.join(&name),
                &["objective"],
                &[&DVector::from_vec(objectives)],
            )?;
            man.add_file(&name);
        }
        man.add_timing(&format!("ensemble_r{rank}"), t.elapsed().as_secs_f64());
    }

    if r.hifi_optimum.unwrap_or(false) {
        let hifi_result = run_hifi_optimization(&built, r, man)?;
        markers.push((
            "hifi_objective_at_hifi_optimum".to_string(),
            hifi_result.objective,
        ));
    }
    artifacts::write_named_values(&r.output_dir.join("markers.csv"), &markers)?;
    man.add_file("markers.csv");
    Ok(())
}

pub fn cmd_rank_sweep(args: &CommonArgs) -> Result<(), CliError> {
    let (resolved, mut manifest) = prepare("rank-sweep", args)?;
    let outcome = rank_sweep_inner(&resolved, &mut manifest);
    finish(&resolved, manifest, outcome)
}

fn rank_sweep_inner(r: &Resolved, man: &mut RunManifest) -> Result<(), CliError> {
    let built = build_timed(r, man)?;
    let ranks = r
        .ranks
        .clone()
        .unwrap_or_else(|| (0..=20.min(built.opt_dim())).collect());
    man.choose("ranks", &ranks);

    let result = run_lofi_optimization(&built, r, man)?;
    let z_tilde = &result.z;
    let data = run_training_stage(&built, r, man, z_tilde)?;
    let cal = run_calibration(&built, man, &data, r.hyper.alpha_d)?;

    let lin = built
        .lofi
        .linearize(z_tilde)
        .map_err(|e| CliError::Solver(format!("linearization at the optimum failed: {e}")))?;
    let max_rank = (*ranks.iter().max().expect("ranks nonempty")).max(1);
    let proj_full = run_sketch_stage(&built, r, man, lin.as_ref(), max_rank)?;

    // The sweep's error column needs the expensive reference optimum; it is
    // computed by default here (unlike `run`) but can be switched off.
    let z_star = if r.hifi_optimum.unwrap_or(true) {
        Some(run_hifi_optimization(&built, r, man)?.z)
    } else {
        None
    };

    let t = Instant::now();
    let cov_image = pipeline::sensitivity_image_covariance(lin.as_ref(), &cal);
    let variances = pipeline::integrated_variances(
        &proj_full,
        &cov_image,
        built.opt_prior.mass(),
        &ranks,
    );
    man.add_timing("integrated_variance", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let mass = built.opt_prior.mass();
    let norm = |v: &DVector<f64>| (mass * v).dot(v).max(0.0).sqrt();
    let mut errors = Vec::with_capacity(ranks.len());
    for &rank in &ranks {
        let mean_update = if rank == 0 {
            z_tilde.clone()
        } else {
            posterior_solution_samples(
                lin.as_ref(),
                &cal,
                &proj_full.truncated_rank(rank),
                0,
                SeedSpec::new(r.master_seed, seeds::ENSEMBLE),
            )
            .mean_update
        };
        if let Some(z_star) = &z_star {
            errors.push(norm(&(mean_update - z_star)) / norm(z_star));
        }
    }
    man.add_timing("rank_sweep", t.elapsed().as_secs_f64());

    let rank_col = DVector::from_iterator(ranks.len(), ranks.iter().map(|&r| r as f64));
    let var_col = DVector::from_vec(variances);
    let mut headers = vec!["rank"];
    let mut cols: Vec<&DVector<f64>> = vec![&rank_col];
    let err_col = DVector::from_vec(errors);
    if z_star.is_some() {
        headers.push("mean_error");
        cols.push(&err_col);
    }
    headers.push("integrated_variance");
    cols.push(&var_col);
    hdsa_core::io::write_csv_columns(&r.output_dir.join("rank_sweep.csv"), &headers, &cols)?;
    man.add_file("rank_sweep.csv");
    Ok(())
}

pub fn cmd_cost_estimate(params: &CostParams) -> Result<(), CliError> {
    let opt = cost_lofi_opt(params);
    let post = cost_posterior(params);
    println!("low-fidelity optimization cost (solves): {opt}");
    println!("posterior update cost (solves):          {post}");
    println!("ratio (optimization / update):           {:.4}", opt / post);
    Ok(())
}

pub fn cmd_oracle_check(instances: usize, cov_samples: usize, seed: u64) -> Result<(), CliError> {
    let params = SuiteParams {
        instances,
        cov_instances: vec![if instances > 1 { 1 } else { 0 }],
        cov_samples,
        master_seed: seed,
    };
    let outcome = oracle_suite::run_suite(&params);
    println!(
        "{:>3}  {:>12}  {:>10}  {:>10}  {:>10}  {:>12}  {:>10}",
        "idx", "m x n x N", "mean", "end-to-end", "identity", "analytic-cov", "mc-cov"
    );
    for (idx, o) in outcome.per_instance.iter().enumerate() {
        let mc = o
            .mc_cov_rel
            .map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"));
        println!(
            "{:>3}  {:>12}  {:>10.3e}  {:>10.3e}  {:>10.3e}  {:>12.3e}  {:>10}",
            idx,
            format!("{}x{}x{}", o.dims.0, o.dims.1, o.dims.2),
            o.mean_rel,
            o.end_to_end_rel,
            o.identities.max(),
            o.analytic_cov_rel,
            mc
        );
    }
    println!(
        "worst: mean {:.3e}, end-to-end {:.3e}, identity {:.3e}, analytic-cov {:.3e}, mc-cov {:.3e}",
        outcome.worst_mean_rel(),
        outcome.worst_end_to_end_rel(),
        outcome.worst_identity(),
        outcome.worst_analytic_cov_rel(),
        outcome.worst_mc_cov_rel()
    );
    if outcome.all_pass() {
        println!("all instances within tolerance");
        Ok(())
    } else {
        Err(CliError::Solver(
            "dense-reference comparison exceeded tolerance".into(),
        ))
    }
}
