use hdsa_core::models::advection_diffusion::AdvectionDiffusion;
use hdsa_core::models::diffusion_reaction::DiffusionReaction;
use hdsa_core::models::mass_spring::MassSpring;
use hdsa_core::models::{discrepancy_training_data, sample_secondary_input};
use hdsa_core::optim::{minimize, LofiProblem, TrustRegionOptions};
use hdsa_core::prior::{default_state_rank, EllipticOperator, OptPrior, StatePrior};
use hdsa_core::update::{posterior_solution_samples, HessianProjector};
use hdsa_core::rng::SeedSpec;
use hdsa_core::calibration::calibrate;
use hdsa_core::{fem, linalg};
use nalgebra::{DMatrix, DVector};

fn dense_hessian(lin: &dyn hdsa_core::optim::Linearization) -> DMatrix<f64> {
    let n = lin.opt_dim();
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        h.set_column(j, &lin.hessian_apply(&e));
    }
    0.5 * (&h + h.transpose())
}

fn dense_precision(prior: &OptPrior) -> DMatrix<f64> {
    let n = prior.dim();
    let mut w = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        w.set_column(j, &prior.apply_precision(&e));
    }
    0.5 * (&w + w.transpose())
}

#[test]
#[ignore]
fn exp_advection() {
    let t0 = std::time::Instant::now();
    let nx = 40;
    let kappa = 0.25;
    let lofi = AdvectionDiffusion::lofi(nx, kappa).unwrap();
    let hifi = AdvectionDiffusion::hifi(nx, kappa).unwrap();
    let z0 = DVector::zeros(25);
    let opts = TrustRegionOptions::default();
    let res = minimize(&lofi, &z0, &opts).unwrap();
    let z_tilde = res.z.clone();
    println!(
        "[{:.1}s] lofi opt: J~={:.6e} iters={} gnorm={:.2e} conv={}",
        t0.elapsed().as_secs_f64(),
        res.objective,
        res.iterations.len(),
        res.gradient_norm,
        res.converged
    );
    let u_hifi = hdsa_core::optim::ForwardModel::solve(&hifi, &z_tilde).unwrap();
    let j_hifi_tilde = lofi.objective_of(&u_hifi, &z_tilde);
    println!(
        "[{:.1}s] J(S(z~),z~) = {:.6e}   (paper scale 0.0033)",
        t0.elapsed().as_secs_f64(),
        j_hifi_tilde
    );

    // priors
    let fem_m = fem::assemble(lofi.mesh());
    let op_u = EllipticOperator::new(&fem_m, 5e-1).unwrap();
    let q = default_state_rank(&op_u, 1e-3, SeedSpec::new(7, 1)).unwrap();
    println!("[{:.1}s] q = {q}", t0.elapsed().as_secs_f64());
    let sp = StatePrior::from_elliptic(4.0, &op_u, q, 10, SeedSpec::new(7, 2)).unwrap();
    let op_z = OptPrior::from_basis(1e-8, lofi.basis(), lofi.state_mass()).unwrap();

    // dense pencil
    let lin = lofi.linearize(&z_tilde).unwrap();
    let h = dense_hessian(lin.as_ref());
    let wz = dense_precision(&op_z);
    let (vals, modes) = linalg::generalized_symmetric_eigen(&h, &wz).unwrap();
    println!(
        "[{:.1}s] pencil: rho1={:.4e} rho2={:.4e} ratio={:.1} rho3={:.3e}",
        t0.elapsed().as_secs_f64(),
        vals[0],
        vals[1],
        vals[0] / vals[1],
        vals[2]
    );
    let n_keep = vals.iter().take_while(|&&v| v >= 1e-4 * vals[0]).count();
    println!("rank rule 1e-4 keeps r = {n_keep}; spectrum head: {:?}", &vals.as_slice()[..6.min(vals.len())]);

    // training data, N=1
    let data = discrepancy_training_data(&hifi, &lofi, vec![z_tilde.clone()]).unwrap();
    println!("[{:.1}s] |d1| = {:.3e}", t0.elapsed().as_secs_f64(), data.outputs[0].norm());
    let cal = calibrate(&data, &sp, &op_z, 1e-2).unwrap();

    for r in [1usize, 2, 3, 5] {
        let proj = HessianProjector {
            eigvals: DVector::from_fn(r, |i, _| vals[i]),
            modes: modes.columns(0, r).into_owned(),
            hessian_applies: 25,
        };
        let ens = posterior_solution_samples(lin.as_ref(), &cal, &proj, 0, SeedSpec::new(7, 3));
        let z_bar = ens.mean_update.clone();
        let u_bar = hdsa_core::optim::ForwardModel::solve(&hifi, &z_bar);
        match u_bar {
            Ok(u) => {
                let j_bar = lofi.objective_of(&u, &z_bar);
                println!(
                    "[{:.1}s] r={r}: J(S(zbar),zbar) = {:.6e}  ratio = {:.3}",
                    t0.elapsed().as_secs_f64(),
                    j_bar,
                    j_hifi_tilde / j_bar
                );
            }
            Err(e) => println!("r={r}: hifi solve FAILED: {e}"),
        }
    }
}

#[test]
#[ignore]
fn exp_reaction() {
    let t0 = std::time::Instant::now();
    let ne = 100;
    let kappa: f64 = std::env::var("KAPPA").map(|v| v.parse().unwrap()).unwrap_or(0.1);
    println!("kappa = {kappa}");
    let lofi = DiffusionReaction::lofi(ne, kappa).unwrap();
    let hifi = DiffusionReaction::hifi(ne, kappa).unwrap();
    let n = ne + 1;
    let z0 = DVector::zeros(n);
    let opts = TrustRegionOptions::default();
    let res = minimize(&lofi, &z0, &opts).unwrap();
    let z_tilde = res.z.clone();
    println!(
        "[{:.1}s] lofi opt: J~={:.6e} iters={} gnorm={:.2e} conv={} |z~|inf={:.2}",
        t0.elapsed().as_secs_f64(),
        res.objective,
        res.iterations.len(),
        res.gradient_norm,
        res.converged,
        z_tilde.amax()
    );
    let u_hifi = hdsa_core::optim::ForwardModel::solve(&hifi, &z_tilde).unwrap();
    let j_hifi_tilde = lofi.objective_of(&u_hifi, &z_tilde);
    println!("[{:.1}s] J(S(z~),z~) = {:.6e}", t0.elapsed().as_secs_f64(), j_hifi_tilde);

    let fem_m = fem::assemble(lofi.mesh());
    let op_u = EllipticOperator::new(&fem_m, 2e-2).unwrap();
    let q = default_state_rank(&op_u, 1e-3, SeedSpec::new(11, 1)).unwrap();
    println!("q = {q}");
    let sp = StatePrior::from_elliptic(4.0, &op_u, q, 10, SeedSpec::new(11, 2)).unwrap();
    let op_zop = EllipticOperator::new(&fem_m, 3e-2).unwrap();
    let op_z = OptPrior::function_space(1e-10, op_zop).unwrap();

    let zseed: u64 = std::env::var("ZSEED").map(|v| v.parse().unwrap()).unwrap_or(3);
    let z2 = sample_secondary_input(&op_z, &z_tilde, 0.2, SeedSpec::new(11, zseed));
    println!("zseed={zseed} |z2-z~|/|z~| = {:.3}", (&z2 - &z_tilde).norm() / z_tilde.norm());

    let data = discrepancy_training_data(&hifi, &lofi, vec![z_tilde.clone(), z2]).unwrap();
    println!(
        "[{:.1}s] |d1|={:.3e} |d2|={:.3e}",
        t0.elapsed().as_secs_f64(),
        data.outputs[0].norm(),
        data.outputs[1].norm()
    );
    let cal = calibrate(&data, &sp, &op_z, 1e-4).unwrap();

    let lin = lofi.linearize(&z_tilde).unwrap();
    let h = dense_hessian(lin.as_ref());
    let wz = dense_precision(&op_z);
    let (vals, modes) = linalg::generalized_symmetric_eigen(&h, &wz).unwrap();
    println!(
        "[{:.1}s] pencil head: {:?}",
        t0.elapsed().as_secs_f64(),
        &vals.as_slice()[..8.min(vals.len())]
    );
    let n_keep = vals.iter().take_while(|&&v| v >= 1e-4 * vals[0]).count();
    println!("rank rule 1e-4 keeps r = {n_keep}");

    // hifi optimum for error curves
    let res_h = minimize(&hifi, &z0, &opts).unwrap();
    let z_star = res_h.z.clone();
    println!(
        "[{:.1}s] hifi opt: J*={:.6e} iters={} conv={}",
        t0.elapsed().as_secs_f64(),
        res_h.objective,
        res_h.iterations.len(),
        res_h.converged
    );
    let mz = lofi.state_mass();
    let m_norm = |v: &DVector<f64>| (v.transpose() * mz * v)[(0, 0)].sqrt();
    let err0 = m_norm(&(&z_tilde - &z_star)) / m_norm(&z_star);
    println!("err(r=0) = {:.4e}", err0);

    for r in [1usize, 2, 3, 4, 5, 7, 11, 15, 20] {
        let proj = HessianProjector {
            eigvals: DVector::from_fn(r, |i, _| vals[i]),
            modes: modes.columns(0, r).into_owned(),
            hessian_applies: 0,
        };
        let ens = posterior_solution_samples(lin.as_ref(), &cal, &proj, 0, SeedSpec::new(11, 4));
        let z_bar = ens.mean_update.clone();
        let err = m_norm(&(&z_bar - &z_star)) / m_norm(&z_star);
        let u_bar = hdsa_core::optim::ForwardModel::solve(&hifi, &z_bar);
        match u_bar {
            Ok(u) => {
                let j_bar = lofi.objective_of(&u, &z_bar);
                println!(
                    "r={r:2}: err={:.4e}  J(S(zbar),zbar)={:.6e} ratio={:.3}",
                    err,
                    j_bar,
                    j_hifi_tilde / j_bar
                );
            }
            Err(e) => println!("r={r}: hifi solve FAILED: {e} (err={err:.4e})"),
        }
    }
}

#[test]
#[ignore]
fn exp_spring() {
    let t0 = std::time::Instant::now();
    let n_steps = 400;
    let lofi = MassSpring::lofi(n_steps).unwrap();
    let hifi = MassSpring::hifi(n_steps).unwrap();
    let n = n_steps + 1;
    let z0 = DVector::zeros(n);
    let opts = TrustRegionOptions::default();
    let res = minimize(&lofi, &z0, &opts).unwrap();
    let z_tilde = res.z.clone();
    println!(
        "[{:.1}s] lofi opt: J~={:.6e} iters={} gnorm={:.2e} conv={} |z~|inf={:.1}",
        t0.elapsed().as_secs_f64(),
        res.objective,
        res.iterations.len(),
        res.gradient_norm,
        res.converged,
        z_tilde.amax()
    );
    let u_hifi = hdsa_core::optim::ForwardModel::solve(&hifi, &z_tilde).unwrap();
    let j_hifi_tilde = lofi.objective_of(&u_hifi, &z_tilde);
    println!("[{:.1}s] J(S(z~),z~) = {:.6e}", t0.elapsed().as_secs_f64(), j_hifi_tilde);

    // state prior: block-diagonal over (x1, x1') with the same time-mesh operator
    let mesh_t = hdsa_core::mesh::build_interval_mesh(0.0, 10.0, n_steps).unwrap();
    let fem_t = fem::assemble(&mesh_t);
    assert!((lofi.time_mass() - &fem_t.mass).amax() < 1e-12);
    let e_u = 5e-2 * &fem_t.stiff + &fem_t.mass;
    let m_inv_e = fem_t.mass.clone().cholesky().unwrap().solve(&e_u);
    let w_t = e_u.transpose() * m_inv_e;
    let mut w_u = DMatrix::zeros(2 * n, 2 * n);
    w_u.view_mut((0, 0), (n, n)).copy_from(&w_t);
    w_u.view_mut((n, n), (n, n)).copy_from(&w_t);
    let sp = StatePrior::from_dense_precision(1e4, &w_u, lofi.state_mass()).unwrap();
    println!("[{:.1}s] state prior built", t0.elapsed().as_secs_f64());

    let op_zop = EllipticOperator::new(&fem_t, 1e-1).unwrap();
    let op_z = OptPrior::function_space(1e-10, op_zop).unwrap();

    let z2 = sample_secondary_input(&op_z, &z_tilde, 0.2, SeedSpec::new(13, 3));
    let data = discrepancy_training_data(&hifi, &lofi, vec![z_tilde.clone(), z2]).unwrap();
    println!(
        "[{:.1}s] |d1|={:.3e} |d2|={:.3e}",
        t0.elapsed().as_secs_f64(),
        data.outputs[0].norm(),
        data.outputs[1].norm()
    );
    let cal = calibrate(&data, &sp, &op_z, 1e-1).unwrap();

    let lin = lofi.linearize(&z_tilde).unwrap();
    let h = dense_hessian(lin.as_ref());
    let wz = dense_precision(&op_z);
    let (vals, modes) = linalg::generalized_symmetric_eigen(&h, &wz).unwrap();
    println!(
        "[{:.1}s] pencil head: {:?}",
        t0.elapsed().as_secs_f64(),
        &vals.as_slice()[..8.min(vals.len())]
    );
    let n_keep = vals.iter().take_while(|&&v| v >= 1e-4 * vals[0]).count();
    println!("rank rule 1e-4 keeps r = {n_keep}; vals[17]={:.3e} ratio {:.2e}", vals[17], vals[17]/vals[0]);

    for r in [5usize, 11, 17, 25, 40] {
        let proj = HessianProjector {
            eigvals: DVector::from_fn(r, |i, _| vals[i]),
            modes: modes.columns(0, r).into_owned(),
            hessian_applies: 0,
        };
        let ens = posterior_solution_samples(lin.as_ref(), &cal, &proj, 0, SeedSpec::new(13, 4));
        let z_bar = ens.mean_update.clone();
        let u_bar = hdsa_core::optim::ForwardModel::solve(&hifi, &z_bar).unwrap();
        let j_bar = lofi.objective_of(&u_bar, &z_bar);
        println!(
            "[{:.1}s] r={r:2}: J(S(zbar),zbar)={:.6e} ratio={:.3}",
            t0.elapsed().as_secs_f64(),
            j_bar,
            j_hifi_tilde / j_bar
        );
    }
}

#[test]
#[ignore]
fn exp_variance() {
    let ne = 100;
    let kappa = 0.5;
    let lofi = DiffusionReaction::lofi(ne, kappa).unwrap();
    let hifi = DiffusionReaction::hifi(ne, kappa).unwrap();
    let n = ne + 1;
    let z0 = DVector::zeros(n);
    let opts = TrustRegionOptions::default();
    let res = minimize(&lofi, &z0, &opts).unwrap();
    let z_tilde = res.z.clone();

    let fem_m = fem::assemble(lofi.mesh());
    let op_u = EllipticOperator::new(&fem_m, 2e-2).unwrap();
    let q = default_state_rank(&op_u, 1e-3, SeedSpec::new(11, 1)).unwrap();
    let sp = StatePrior::from_elliptic(4.0, &op_u, q, 10, SeedSpec::new(11, 2)).unwrap();
    let op_zop = EllipticOperator::new(&fem_m, 3e-2).unwrap();
    let op_z = OptPrior::function_space(1e-10, op_zop).unwrap();
    let z2 = sample_secondary_input(&op_z, &z_tilde, 0.2, SeedSpec::new(11, 3));
    let data = discrepancy_training_data(&hifi, &lofi, vec![z_tilde.clone(), z2]).unwrap();
    let cal = calibrate(&data, &sp, &op_z, 1e-4).unwrap();

    let lin = lofi.linearize(&z_tilde).unwrap();
    let h = dense_hessian(lin.as_ref());
    let wz = dense_precision(&op_z);
    let (vals, modes) = linalg::generalized_symmetric_eigen(&h, &wz).unwrap();

    let m = lin.state_dim();
    // data-direction fluctuation: Cov(B theta_hat) = sum_i L_i C_i L_i'
    let mut cov_b = DMatrix::<f64>::zeros(n, n);
    for i in 0..cal.n_data() {
        let mu = cal.spectrum.eigvals[i];
        let scale = (cal.alpha_d / mu).sqrt();
        let mut l_i = DMatrix::zeros(n, m);
        for c in 0..m {
            let mut e = DVector::zeros(m);
            e[c] = 1.0;
            let term = hdsa_core::calibration::ThetaStructured {
                origin: hdsa_core::calibration::ThetaOrigin::DataDirections,
                terms: vec![hdsa_core::calibration::KronTerm {
                    offset: cal.spectrum.s[i],
                    state: scale * e,
                    weight: cal.w_dir[i].clone(),
                }],
            };
            l_i.set_column(c, &hdsa_core::update::apply_b(lin.as_ref(), &op_z, &z_tilde, &term));
        }
        let mut c_i = DMatrix::zeros(m, m);
        for c in 0..m {
            let mut e = DVector::zeros(m);
            e[c] = 1.0;
            c_i.set_column(c, &sp.apply_shifted_inv(cal.alpha_d, mu, &e));
        }
        cov_b += &l_i * c_i * l_i.transpose();
    }
    // complement fluctuation: sigma^2 Pc Wz^-1 Pc'
    let sigma = hdsa_core::update::complement_gradient_scale(lin.as_ref(), &cal);
    let mut pc = DMatrix::zeros(n, n);
    let mut wz_inv = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut e = DVector::zeros(n);
        e[c] = 1.0;
        pc.set_column(c, &cal.complement_project(&e));
        wz_inv.set_column(c, &op_z.apply_precision_inv(&e));
    }
    cov_b += sigma * sigma * &pc * wz_inv * pc.transpose();

    let mz = lofi.state_mass();
    println!("r  analytic-variance");
    let mut prev = -1.0;
    let mut mono = true;
    for r in 1..=20usize {
        let mut f_r = DMatrix::<f64>::zeros(n, n);
        for j in 0..r {
            let v = modes.column(j).into_owned();
            f_r += (&v * v.transpose()) / vals[j];
        }
        let cov_z = &f_r * &cov_b * f_r.transpose();
        let var = (mz * cov_z).trace();
        if var < prev {
            mono = false;
            println!("r={r:2}: {var:.6e}   <-- DECREASE (prev {prev:.6e})");
        } else {
            println!("r={r:2}: {var:.6e}");
        }
        prev = var;
    }
    println!("monotone: {mono}");

    // MC check at r=5
    let r = 5;
    let proj = HessianProjector {
        eigvals: DVector::from_fn(r, |i, _| vals[i]),
        modes: modes.columns(0, r).into_owned(),
        hessian_applies: 0,
    };
    let ens = posterior_solution_samples(lin.as_ref(), &cal, &proj, 400, SeedSpec::new(11, 9));
    let mean: DVector<f64> = ens
        .samples
        .iter()
        .fold(DVector::zeros(n), |acc, s| acc + s)
        / ens.samples.len() as f64;
    let mut mc_var = 0.0;
    for s in &ens.samples {
        let d = s - &mean;
        mc_var += (d.transpose() * mz * &d)[(0, 0)];
    }
    mc_var /= (ens.samples.len() - 1) as f64;
    let mut f_r = DMatrix::<f64>::zeros(n, n);
    for j in 0..r {
        let v = modes.column(j).into_owned();
        f_r += (&v * v.transpose()) / vals[j];
    }
    let ana = (mz * &f_r * &cov_b * f_r.transpose()).trace();
    println!("r=5: MC var {mc_var:.4e} vs analytic {ana:.4e}  ratio {:.3}", mc_var / ana);
}

#[test]
#[ignore]
fn exp_projector_randomized() {
    // 6.1
    let lofi = DiffusionReaction::lofi(100, 0.5).unwrap();
    let res = minimize(&lofi, &DVector::zeros(101), &TrustRegionOptions::default()).unwrap();
    let fem_m = fem::assemble(lofi.mesh());
    let op_z = OptPrior::function_space(1e-10, EllipticOperator::new(&fem_m, 3e-2).unwrap()).unwrap();
    let lin = lofi.linearize(&res.z).unwrap();
    for (pw, tol) in [(0usize, 1e-4), (1, 1e-4), (2, 1e-6)] {
        let t = std::time::Instant::now();
        let proj = HessianProjector::compute(lin.as_ref(), &op_z, 24, 12, pw, tol, SeedSpec::new(5, 1));
        match proj {
            Ok(p) => {
                let tr = p.truncated(1e-4);
                println!(
                    "6.1 pw={pw} tol={tol:.0e}: ok rank={} trunc={} rho1={:.6e} applies={} [{:.2}s]",
                    p.rank(), tr.rank(), p.eigvals[0], p.hessian_applies, t.elapsed().as_secs_f64()
                );
            }
            Err(e) => println!("6.1 pw={pw} tol={tol:.0e}: ERR {e}"),
        }
    }
    // 6.2
    let lofi2 = MassSpring::lofi(400).unwrap();
    let res2 = minimize(&lofi2, &DVector::zeros(401), &TrustRegionOptions::default()).unwrap();
    let mesh_t = hdsa_core::mesh::build_interval_mesh(0.0, 10.0, 400).unwrap();
    let fem_t = fem::assemble(&mesh_t);
    let op_z2 = OptPrior::function_space(1e-10, EllipticOperator::new(&fem_t, 1e-1).unwrap()).unwrap();
    let lin2 = lofi2.linearize(&res2.z).unwrap();
    for (pw, tol) in [(1usize, 1e-4), (2, 1e-4)] {
        let t = std::time::Instant::now();
        let proj = HessianProjector::compute(lin2.as_ref(), &op_z2, 34, 16, pw, tol, SeedSpec::new(5, 2));
        match proj {
            Ok(p) => {
                let tr = p.truncated(1e-4);
                println!(
                    "6.2 pw={pw} tol={tol:.0e}: ok rank={} trunc={} rho1={:.6e} applies={} [{:.2}s]",
                    p.rank(), tr.rank(), p.eigvals[0], p.hessian_applies, t.elapsed().as_secs_f64()
                );
            }
            Err(e) => println!("6.2 pw={pw} tol={tol:.0e}: ERR {e}"),
        }
    }
    // 6.3: n=25 so full-rank sketch
    let lofi3 = AdvectionDiffusion::lofi(40, 0.25).unwrap();
    let res3 = minimize(&lofi3, &DVector::zeros(25), &TrustRegionOptions::default()).unwrap();
    let op_z3 = OptPrior::from_basis(1e-8, lofi3.basis(), lofi3.state_mass()).unwrap();
    let lin3 = lofi3.linearize(&res3.z).unwrap();
    let t = std::time::Instant::now();
    match HessianProjector::compute(lin3.as_ref(), &op_z3, 25, 0, 1, 1e-6, SeedSpec::new(5, 3)) {
        Ok(p) => {
            let tr = p.truncated(1e-4);
            println!(
                "6.3: ok rank={} trunc={} rho1={:.6e} rho2={:.3e} applies={} [{:.2}s]",
                p.rank(), tr.rank(), p.eigvals[0], p.eigvals[1], p.hessian_applies, t.elapsed().as_secs_f64()
            );
        }
        Err(e) => println!("6.3: ERR {e}"),
    }
}

#[test]
#[ignore]
fn exp_correlation_length() {
    for beta in [4e-3f64, 1e-2, 3e-2] {
        let ne = 200;
        let mesh = hdsa_core::mesh::build_interval_mesh(0.0, 1.0, ne).unwrap();
        let fem_m = fem::assemble(&mesh);
        let prior = OptPrior::function_space(1.0, EllipticOperator::new(&fem_m, beta).unwrap()).unwrap();
        let n = ne + 1;
        let n_draws = 100;
        let draws: Vec<DVector<f64>> = (0..n_draws)
            .map(|k| prior.sample(SeedSpec::new(42, k)))
            .collect();
        let h = 1.0 / ne as f64;
        let refs: Vec<usize> = (70..=130).step_by(10).collect();
        let max_lag = (n / 2).min(((2.5 * beta.sqrt()) / h).ceil() as usize);
        let mut curve = vec![0.0; max_lag + 1];
        for &a in &refs {
            let mean_a: f64 = draws.iter().map(|d| d[a]).sum::<f64>() / n_draws as f64;
            let var_a: f64 = draws.iter().map(|d| (d[a] - mean_a).powi(2)).sum::<f64>() / n_draws as f64;
            for lag in 0..=max_lag {
                let b = a + lag;
                let mean_b: f64 = draws.iter().map(|d| d[b]).sum::<f64>() / n_draws as f64;
                let var_b: f64 = draws.iter().map(|d| (d[b] - mean_b).powi(2)).sum::<f64>() / n_draws as f64;
                let cov: f64 = draws.iter().map(|d| (d[a] - mean_a) * (d[b] - mean_b)).sum::<f64>() / n_draws as f64;
                curve[lag] += cov / (var_a * var_b).sqrt();
            }
        }
        for c in curve.iter_mut() {
            *c /= refs.len() as f64;
        }
        let mut d_half = f64::NAN;
        for lag in 1..=max_lag {
            if curve[lag] < 0.5 {
                let frac = (curve[lag - 1] - 0.5) / (curve[lag - 1] - curve[lag]);
                d_half = (lag as f64 - 1.0 + frac) * h;
                break;
            }
        }
        let ell = beta.sqrt();
        println!(
            "beta={beta:.0e}: d_half={d_half:.4}  sqrt(beta)={ell:.4}  ratio={:.3}  band [{:.4},{:.4}]",
            d_half / ell,
            0.5 * ell,
            2.0 * ell
        );
    }
}

#[test]
#[ignore]
fn exp_refinement() {
    let opts = TrustRegionOptions::default();
    let t0 = std::time::Instant::now();
    for ne in [50usize, 100, 200] {
        let lofi = DiffusionReaction::lofi(ne, 0.5).unwrap();
        let res = minimize(&lofi, &DVector::zeros(ne + 1), &opts).unwrap();
        println!("[{:.0}s] 6.1 ne={ne}: J*={:.8e}", t0.elapsed().as_secs_f64(), res.objective);
    }
    for ns in [200usize, 400, 800] {
        let lofi = MassSpring::lofi(ns).unwrap();
        let res = minimize(&lofi, &DVector::zeros(ns + 1), &opts).unwrap();
        println!("[{:.0}s] 6.2 ns={ns}: J*={:.8e}", t0.elapsed().as_secs_f64(), res.objective);
    }
    for nx in [20usize, 40, 80] {
        let lofi = AdvectionDiffusion::lofi(nx, 0.25).unwrap();
        let res = minimize(&lofi, &DVector::zeros(25), &opts).unwrap();
        println!("[{:.0}s] 6.3 nx={nx}: J*={:.8e}", t0.elapsed().as_secs_f64(), res.objective);
    }
}

#[test]
#[ignore]
fn exp_reaction_refinement() {
    let mut opts = TrustRegionOptions::default();
    opts.gtol_rel = 1e-12;
    opts.gtol_abs = 1e-9;
    opts.max_iters = 400;
    let mut prev: Option<f64> = None;
    for ne in [100usize, 200, 400, 800, 1600] {
        let lofi = DiffusionReaction::lofi(ne, 0.5).unwrap();
        let res = match minimize(&lofi, &DVector::zeros(ne + 1), &opts) {
            Ok(r) => r,
            Err(e) => {
                println!("ne={ne}: FAILED {e}");
                continue;
            }
        };
        let rel = prev.map(|p| (res.objective - p).abs() / p);
        println!(
            "ne={ne:5}: J*={:.10e}  change={}  gnorm={:.2e} conv={} iters={} z[0..4]={:?}",
            res.objective,
            rel.map(|r| format!("{:.3e}", r)).unwrap_or_default(),
            res.gradient_norm,
            res.converged,
            res.iterations.len(),
            res.z.rows(0, 4).iter().map(|v| (*v * 10.0) as i64).collect::<Vec<_>>()
        );
        prev = Some(res.objective);
    }
}

#[test]
#[ignore]
fn exp_debug77() {
    use std::io::Write;
    let mut err = std::io::stderr();
    let t0 = std::time::Instant::now();
    macro_rules! stage {
        ($($a:tt)*) => {{ writeln!(err, "[{:7.2}s] {}", t0.elapsed().as_secs_f64(), format!($($a)*)).unwrap(); }};
    }
    let lofi = DiffusionReaction::lofi(100, 0.5).unwrap();
    let hifi = DiffusionReaction::hifi(100, 0.5).unwrap();
    let opts = TrustRegionOptions::default();
    stage!("minimizing lofi");
    let res = minimize(&lofi, &DVector::zeros(101), &opts).unwrap();
    let z_tilde = res.z.clone();
    stage!("lofi done J={:.6e} iters={}", res.objective, res.iterations.len());
    let fem_m = fem::assemble(lofi.mesh());
    let op_u = EllipticOperator::new(&fem_m, 2e-2).unwrap();
    let q = default_state_rank(&op_u, 1e-3, SeedSpec::new(11, 1)).unwrap();
    stage!("q={q}");
    let sp = StatePrior::from_elliptic(4.0, &op_u, q, 10, SeedSpec::new(11, 2)).unwrap();
    let op_z = OptPrior::function_space(1e-10, EllipticOperator::new(&fem_m, 3e-2).unwrap()).unwrap();
    stage!("priors done");
    let z2 = sample_secondary_input(&op_z, &z_tilde, 0.2, SeedSpec::new(11, 77));
    stage!("z2 done |z2-z~|={:.3e}", (&z2 - &z_tilde).norm());
    let data = discrepancy_training_data(&hifi, &lofi, vec![z_tilde.clone(), z2]).unwrap();
    stage!("training data done");
    let cal = calibrate(&data, &sp, &op_z, 1e-4).unwrap();
    stage!("calibrated");
    let lin = lofi.linearize(&z_tilde).unwrap();
    let h = dense_hessian(lin.as_ref());
    let wz = dense_precision(&op_z);
    let (vals, modes) = linalg::generalized_symmetric_eigen(&h, &wz).unwrap();
    stage!("pencil done");
    let res_h = minimize(&hifi, &DVector::zeros(101), &opts).unwrap();
    stage!("hifi opt done J={:.6e}", res_h.objective);
    for r in [2usize, 5, 11] {
        let proj = HessianProjector {
            eigvals: DVector::from_fn(r, |i, _| vals[i]),
            modes: modes.columns(0, r).into_owned(),
            hessian_applies: 0,
        };
        let ens = posterior_solution_samples(lin.as_ref(), &cal, &proj, 0, SeedSpec::new(11, 4));
        stage!("r={r} mean update done");
        let u_bar = hdsa_core::optim::ForwardModel::solve(&hifi, &ens.mean_update).unwrap();
        let j = lofi.objective_of(&u_bar, &ens.mean_update);
        stage!("r={r} J={:.6e}", j);
    }
}
