//! Dense-reference verification on small random instances.
//!
//! The production pipeline never materializes the discrepancy-parameter
//! product space; this suite builds instances small enough to do exactly
//! that, and compares the structured Kronecker implementation — posterior
//! mean, both fluctuation samplers, and the projected sensitivity update —
//! entry for entry against dense linear algebra.

use nalgebra::{Cholesky, DMatrix, DVector};

use hdsa_core::calibration::{calibrate, Calibration, TrainingData};
use hdsa_core::oracle::{random_instance, DenseInstance, IdentityReport, OracleLinearization};
use hdsa_core::prior::{OptPrior, StatePrior};
use hdsa_core::rng::SeedSpec;
use hdsa_core::update::{posterior_solution_samples, HessianProjector};

/// `(state_dim, opt_dim, n_data)` triples cycled by the suite: every data
/// count from 1 to 3 against a spread of space sizes up to 8 x 10.
pub const DIMS: [(usize, usize, usize); 20] = [
    (2, 3, 1),
    (3, 3, 2),
    (4, 3, 3),
    (2, 4, 1),
    (5, 4, 2),
    (3, 5, 3),
    (6, 5, 1),
    (4, 6, 2),
    (7, 6, 3),
    (5, 7, 1),
    (8, 7, 2),
    (6, 8, 3),
    (2, 8, 1),
    (7, 9, 2),
    (3, 9, 3),
    (8, 10, 1),
    (4, 10, 2),
    (5, 10, 3),
    (8, 3, 1),
    (6, 4, 2),
];

/// Default tolerances for the suite's checks; callers that need different
/// bands assert on the raw outcome numbers instead.
pub const MEAN_TOL: f64 = 1e-10;
pub const END_TO_END_TOL: f64 = 1e-9;
pub const IDENTITY_TOL: f64 = 1e-10;
pub const ANALYTIC_COV_TOL: f64 = 1e-9;
pub const MC_COV_TOL: f64 = 0.05;

pub struct SuiteParams {
    /// How many instances to run (cycling [`DIMS`]).
    pub instances: usize,
    /// Instance indices that additionally get the Monte-Carlo covariance
    /// comparison (it dominates the runtime).
    pub cov_instances: Vec<usize>,
    /// Structured fluctuation draws per Monte-Carlo comparison.
    pub cov_samples: usize,
    pub master_seed: u64,
}

impl SuiteParams {
    /// A quick configuration for command-line sanity checking.
    pub fn quick(master_seed: u64) -> Self {
        Self {
            instances: 6,
            cov_instances: vec![1],
            cov_samples: 20_000,
            master_seed,
        }
    }
}

pub struct InstanceOutcome {
    pub dims: (usize, usize, usize),
    /// Structured posterior mean vs dense, norm-relative.
    pub mean_rel: f64,
    /// Projected mean update vs the dense composition, norm-relative.
    pub end_to_end_rel: f64,
    /// Dense factorization identities, max-entry relative.
    pub identities: IdentityReport,
    /// Closed-form covariance of the two structured samplers vs dense
    /// posterior covariance, relative to its largest entry.
    pub analytic_cov_rel: f64,
    /// Empirical covariance of structured draws vs dense, same scaling.
    pub mc_cov_rel: Option<f64>,
}

impl InstanceOutcome {
    pub fn passes(&self) -> bool {
        self.mean_rel <= MEAN_TOL
            && self.end_to_end_rel <= END_TO_END_TOL
            && self.identities.max() <= IDENTITY_TOL
            && self.analytic_cov_rel <= ANALYTIC_COV_TOL
            && self.mc_cov_rel.map_or(true, |v| v <= MC_COV_TOL)
    }
}

pub struct SuiteOutcome {
    pub per_instance: Vec<InstanceOutcome>,
}

impl SuiteOutcome {
    pub fn worst_mean_rel(&self) -> f64 {
        self.per_instance.iter().map(|o| o.mean_rel).fold(0.0, f64::max)
    }

    pub fn worst_end_to_end_rel(&self) -> f64 {
        self.per_instance
            .iter()
            .map(|o| o.end_to_end_rel)
            .fold(0.0, f64::max)
    }

    pub fn worst_identity(&self) -> f64 {
        self.per_instance
            .iter()
            .map(|o| o.identities.max())
            .fold(0.0, f64::max)
    }

    pub fn worst_analytic_cov_rel(&self) -> f64 {
        self.per_instance
            .iter()
            .map(|o| o.analytic_cov_rel)
            .fold(0.0, f64::max)
    }

    pub fn worst_mc_cov_rel(&self) -> f64 {
        self.per_instance
            .iter()
            .filter_map(|o| o.mc_cov_rel)
            .fold(0.0, f64::max)
    }

    pub fn all_pass(&self) -> bool {
        self.per_instance.iter().all(InstanceOutcome::passes)
    }
}

/// The rank-one map `u -> (offset * u ; u (x) weight)` as a dense
/// `p x m` matrix in the product-space layout.
fn term_operator(m: usize, n: usize, offset: f64, weight: &DVector<f64>) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(m * (n + 1), m);
    for a in 0..m {
        t[(a, a)] = offset;
        for b in 0..n {
            t[(m + a * n + b, a)] = weight[b];
        }
    }
    t
}

/// Exact covariance of `theta_hat + theta_breve` implied by the structured
/// samplers' coefficients — no sampling involved.
fn analytic_fluctuation_covariance(
    inst: &DenseInstance,
    cal: &Calibration<'_>,
    breve_seed: SeedSpec,
) -> DMatrix<f64> {
    let m = inst.state_dim;
    let n = inst.opt_dim;
    let p = m * (n + 1);
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..cal.n_data() {
        let mu = cal.spectrum.eigvals[i];
        let shifted_inv = Cholesky::new(inst.alpha_d * &inst.w_u + mu * &inst.mass_u)
            .expect("shifted precision is SPD")
            .inverse();
        let t = term_operator(m, n, cal.spectrum.s[i], &cal.w_dir[i]);
        cov += (inst.alpha_d / mu) * &t * shifted_inv * t.transpose();
    }
    // The unprobed-direction terms carry independent prior states, so one
    // draw's offsets and weights determine the component's covariance.
    let breve = cal.sample_complement_theta(breve_seed);
    let w_u_inv = Cholesky::new(inst.w_u.clone())
        .expect("state precision is SPD")
        .inverse();
    for term in &breve.terms {
        let t = term_operator(m, n, term.offset, &term.weight);
        cov += &t * &w_u_inv * t.transpose();
    }
    cov
}

/// Empirical covariance of `samples` structured fluctuation draws
/// (data-direction plus unprobed-direction components), accumulated in
/// blocks so the sample matrix never materializes in full.
fn monte_carlo_covariance(
    cal: &Calibration<'_>,
    opt_dim: usize,
    samples: usize,
    seed: SeedSpec,
) -> DMatrix<f64> {
    assert!(samples >= 2);
    let p = cal.data.state_dim() * (opt_dim + 1);
    let block = 4096.min(samples);
    let mut chunk = DMatrix::<f64>::zeros(p, block);
    let mut acc = DMatrix::<f64>::zeros(p, p);
    let mut mean = DVector::<f64>::zeros(p);
    let mut filled = 0usize;
    for k in 0..samples {
        let hat = cal.sample_fluctuation(seed.substream(2 * k as u64));
        let breve = cal.sample_complement_theta(seed.substream(2 * k as u64 + 1));
        let theta = hat.concat(breve).densify(opt_dim);
        mean += &theta;
        chunk.set_column(filled, &theta);
        filled += 1;
        if filled == block {
            let view = chunk.columns(0, filled);
            acc.gemm(1.0, &view, &view.transpose(), 1.0);
            filled = 0;
        }
    }
    if filled > 0 {
        let view = chunk.columns(0, filled);
        acc.gemm(1.0, &view, &view.transpose(), 1.0);
    }
    mean /= samples as f64;
    (acc - (samples as f64) * &mean * mean.transpose()) / (samples as f64 - 1.0)
}

fn check_instance(
    idx: usize,
    dims: (usize, usize, usize),
    master_seed: u64,
    cov_samples: usize,
) -> InstanceOutcome {
    let (m, n, nd) = dims;
    let base = 1000 * (idx as u64 + 1);
    let inst = random_instance(m, n, nd, SeedSpec::new(master_seed, base));
    let data = TrainingData::new(
        inst.z_center.clone(),
        inst.inputs.clone(),
        inst.outputs.clone(),
    )
    .expect("oracle instances provide independent inputs");
    let state_prior = StatePrior::from_dense_precision(1.0, &inst.w_u, &inst.mass_u)
        .expect("oracle state precision is SPD");
    let opt_prior = OptPrior::from_dense(inst.mass_z.clone(), inst.w_z.clone())
        .expect("oracle optimization precision is SPD");
    let cal = calibrate(&data, &state_prior, &opt_prior, inst.alpha_d)
        .expect("oracle instances calibrate");

    let (dense_mean, sigma) = inst.dense_posterior();
    let mean_rel = (cal.posterior_mean().densify(n) - &dense_mean).norm() / dense_mean.norm();

    let lin = OracleLinearization::new(&inst);
    let proj = HessianProjector::compute(
        &lin,
        &opt_prior,
        n,
        3,
        1,
        1e-6,
        SeedSpec::new(master_seed, base + 1),
    )
    .expect("full-rank curvature projector");
    let ens = posterior_solution_samples(&lin, &cal, &proj, 0, SeedSpec::new(master_seed, base + 2));
    let dense_update = &inst.z_center + inst.dense_solution_shift(&dense_mean);
    let end_to_end_rel = (&ens.mean_update - &dense_update).norm() / dense_update.norm();

    let identities = inst.identity_report();

    let analytic =
        analytic_fluctuation_covariance(&inst, &cal, SeedSpec::new(master_seed, base + 3));
    let sigma_scale = sigma.amax();
    let analytic_cov_rel = (&analytic - &sigma).amax() / sigma_scale;

    let mc_cov_rel = (cov_samples > 0).then(|| {
        let mc = monte_carlo_covariance(&cal, n, cov_samples, SeedSpec::new(master_seed, base + 4));
        (mc - &sigma).amax() / sigma_scale
    });

    InstanceOutcome {
        dims,
        mean_rel,
        end_to_end_rel,
        identities,
        analytic_cov_rel,
        mc_cov_rel,
    }
}

pub fn run_suite(params: &SuiteParams) -> SuiteOutcome {
    let per_instance = (0..params.instances)
        .map(|idx| {
            let cov_samples = if params.cov_instances.contains(&idx) {
                params.cov_samples
            } else {
                0
            };
            check_instance(idx, DIMS[idx % DIMS.len()], params.master_seed, cov_samples)
        })
        .collect();
    SuiteOutcome { per_instance }
}
