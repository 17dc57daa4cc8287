//! Benchmark assembly and the numeric stages shared by the subcommands:
//! model pairs, priors, training inputs, and the analytic dispersion of the
//! projected posterior update.

use nalgebra::{DMatrix, DVector};

use hdsa_core::calibration::{Calibration, KronTerm, ThetaOrigin, ThetaStructured};
use hdsa_core::models::advection_diffusion::AdvectionDiffusion;
use hdsa_core::models::diffusion_reaction::DiffusionReaction;
use hdsa_core::models::mass_spring::{self, MassSpring};
use hdsa_core::models::sample_secondary_input;
use hdsa_core::optim::{ForwardModel, Linearization, LofiProblem};
use hdsa_core::prior::{default_state_rank, EllipticOperator, OptPrior, StatePrior};
use hdsa_core::rng::SeedSpec;
use hdsa_core::update::{apply_b, complement_gradient_scale, HessianProjector};
use hdsa_core::{fem, mesh};

use crate::artifacts::OutputLayout;
use crate::config::{Benchmark, Resolved};
use crate::CliError;

/// Stream indices off the master seed, one per random stage, so adding a
/// stage never perturbs another stage's draws.
pub mod seeds {
    pub const STATE_RANK_PROBE: u64 = 1;
    pub const STATE_PRIOR: u64 = 2;
    /// Substream `l` draws secondary training input `l`.
    pub const SECONDARY: u64 = 3;
    pub const SKETCH: u64 = 4;
    pub const ENSEMBLE: u64 = 5;
    pub const PREVIEW_STATE: u64 = 6;
    pub const PREVIEW_OPT: u64 = 7;
    pub const PREVIEW_DELTA: u64 = 8;

    pub fn table() -> std::collections::BTreeMap<String, u64> {
        [
            ("state_rank_probe", STATE_RANK_PROBE),
            ("state_prior", STATE_PRIOR),
            ("secondary_inputs", SECONDARY),
            ("curvature_sketch", SKETCH),
            ("posterior_ensemble", ENSEMBLE),
            ("preview_state", PREVIEW_STATE),
            ("preview_opt", PREVIEW_OPT),
            ("preview_delta", PREVIEW_DELTA),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Randomized eigensolver settings for the curvature projector.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SketchParams {
    pub rank: usize,
    pub oversample: usize,
    pub power_iters: usize,
    pub residual_tol: f64,
}

/// Sketch settings per benchmark, grown to cover the largest requested rank.
pub fn sketch_params(benchmark: Benchmark, opt_dim: usize, max_rank: usize) -> SketchParams {
    let (rank, oversample, power_iters, residual_tol) = match benchmark {
        Benchmark::DiffusionReaction => (24, 12, 2, 1e-6),
        Benchmark::MassSpring => (34, 16, 2, 1e-4),
        Benchmark::AdvectionDiffusion => (25, 0, 1, 1e-6),
    };
    SketchParams {
        rank: rank.max(max_rank).min(opt_dim),
        oversample,
        power_iters,
        residual_tol,
    }
}

/// Everything a subcommand needs from a resolved configuration: the model
/// pair, both priors, and the coordinate layout of the output tables.
pub struct Built {
    pub lofi: Box<dyn LofiProblem + Send + Sync>,
    pub hifi: Box<dyn LofiProblem + Send + Sync>,
    pub state_prior: StatePrior,
    pub opt_prior: OptPrior,
    /// Retained state-prior rank, `None` when the factorization is exact.
    pub state_rank_used: Option<usize>,
    /// Control-regularization weight baked into the benchmark.
    pub gamma: f64,
    pub layout: OutputLayout,
}

impl Built {
    pub fn opt_dim(&self) -> usize {
        self.lofi.opt_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.lofi.state_dim()
    }
}

/// Forward-solve view of an optimizable problem, for call sites that take a
/// plain solution operator.
pub struct SolveView<'a>(pub &'a dyn LofiProblem);

impl ForwardModel for SolveView<'_> {
    fn opt_dim(&self) -> usize {
        self.0.opt_dim()
    }

    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }

    fn solve(&self, z: &DVector<f64>) -> Result<DVector<f64>, hdsa_core::SolveError> {
        self.0.solve(z)
    }
}

fn coord_column(coords: &[[f64; 2]], axis: usize) -> DVector<f64> {
    DVector::from_iterator(coords.len(), coords.iter().map(|c| c[axis]))
}

pub fn build(r: &Resolved) -> Result<Built, CliError> {
    let seed = |stream: u64| SeedSpec::new(r.master_seed, stream);
    match r.benchmark {
        Benchmark::DiffusionReaction => {
            let kappa = r.kappa.expect("resolved configs carry kappa");
            let lofi = DiffusionReaction::lofi(r.resolution, kappa)?;
            let hifi = DiffusionReaction::hifi(r.resolution, kappa)?;
            let fem_m = fem::assemble(lofi.mesh());
            let op_u = EllipticOperator::new(&fem_m, r.hyper.beta_u)?;
            let q = match r.state_rank {
                Some(q) => q,
                None => default_state_rank(&op_u, 1e-3, seed(seeds::STATE_RANK_PROBE))?,
            };
            let state_prior =
                StatePrior::from_elliptic(r.hyper.alpha_u, &op_u, q, 10, seed(seeds::STATE_PRIOR))?;
            let beta_z = r.hyper.beta_z.expect("validated");
            let opt_prior =
                OptPrior::function_space(r.hyper.alpha_z, EllipticOperator::new(&fem_m, beta_z)?)?;
            let layout = OutputLayout::Interval {
                x: coord_column(&lofi.mesh().coords, 0),
            };
            let gamma = lofi.gamma();
            Ok(Built {
                lofi: Box::new(lofi),
                hifi: Box::new(hifi),
                state_prior,
                opt_prior,
                state_rank_used: Some(q),
                gamma,
                layout,
            })
        }
        Benchmark::MassSpring => {
            let lofi = MassSpring::lofi(r.resolution)?;
            let hifi = MassSpring::hifi(r.resolution)?;
            let mesh_t = mesh::build_interval_mesh(0.0, mass_spring::HORIZON, r.resolution)?;
            let fem_t = fem::assemble(&mesh_t);
            // Observed state = stacked (x1, x1') trajectories; weight both
            // blocks with the same smoothing operator on the time grid.
            let e_u = r.hyper.beta_u * &fem_t.stiff + &fem_t.mass;
            let mass_chol = fem_t.mass.clone().cholesky().ok_or_else(|| {
                CliError::Solver("time-grid mass matrix is not positive definite".into())
            })?;
            let w_t = e_u.transpose() * mass_chol.solve(&e_u);
            let n_t = r.resolution + 1;
            let mut w_u = DMatrix::zeros(2 * n_t, 2 * n_t);
            w_u.view_mut((0, 0), (n_t, n_t)).copy_from(&w_t);
            w_u.view_mut((n_t, n_t), (n_t, n_t)).copy_from(&w_t);
            let state_prior =
                StatePrior::from_dense_precision(r.hyper.alpha_u, &w_u, lofi.state_mass())?;
            let beta_z = r.hyper.beta_z.expect("validated");
            let opt_prior =
                OptPrior::function_space(r.hyper.alpha_z, EllipticOperator::new(&fem_t, beta_z)?)?;
            let layout = OutputLayout::TimeStacked {
                t: coord_column(&mesh_t.coords, 0),
            };
            let gamma = lofi.gamma();
            Ok(Built {
                lofi: Box::new(lofi),
                hifi: Box::new(hifi),
                state_prior,
                opt_prior,
                state_rank_used: None,
                gamma,
                layout,
            })
        }
        Benchmark::AdvectionDiffusion => {
            let kappa = r.kappa.expect("resolved configs carry kappa");
            let lofi = AdvectionDiffusion::lofi(r.resolution, kappa)?;
            let hifi = AdvectionDiffusion::hifi(r.resolution, kappa)?;
            let fem_m = fem::assemble(lofi.mesh());
            let op_u = EllipticOperator::new(&fem_m, r.hyper.beta_u)?;
            let q = match r.state_rank {
                Some(q) => q,
                None => default_state_rank(&op_u, 1e-3, seed(seeds::STATE_RANK_PROBE))?,
            };
            let state_prior =
                StatePrior::from_elliptic(r.hyper.alpha_u, &op_u, q, 10, seed(seeds::STATE_PRIOR))?;
            let opt_prior = OptPrior::from_basis(r.hyper.alpha_z, lofi.basis(), lofi.state_mass())?;
            let centers = AdvectionDiffusion::source_centers();
            let layout = OutputLayout::PlaneParam {
                x: coord_column(&lofi.mesh().coords, 0),
                y: coord_column(&lofi.mesh().coords, 1),
                source_x: DVector::from_iterator(centers.len(), centers.iter().map(|c| c[0])),
                source_y: DVector::from_iterator(centers.len(), centers.iter().map(|c| c[1])),
            };
            let gamma = lofi.gamma();
            Ok(Built {
                lofi: Box::new(lofi),
                hifi: Box::new(hifi),
                state_prior,
                opt_prior,
                state_rank_used: Some(q),
                gamma,
                layout,
            })
        }
    }
}

/// The calibration input set: the low-fidelity optimum first, then
/// `n_data - 1` perturbed draws, one seed substream each.
pub fn training_inputs(built: &Built, r: &Resolved, z_tilde: &DVector<f64>) -> Vec<DVector<f64>> {
    let base = SeedSpec::new(r.master_seed, seeds::SECONDARY);
    let mut inputs = vec![z_tilde.clone()];
    for l in 1..r.n_data {
        inputs.push(sample_secondary_input(
            &built.opt_prior,
            z_tilde,
            r.secondary_magnitude,
            base.substream(l as u64),
        ));
    }
    inputs
}

/// Covariance of the sensitivity image `B theta` of the posterior
/// fluctuation, materialized on the optimization space.  Both fluctuation
/// components contribute: the data directions through the shifted prior
/// solves, and the unprobed directions through the prior alone.
pub fn sensitivity_image_covariance(
    lin: &dyn Linearization,
    cal: &Calibration<'_>,
) -> DMatrix<f64> {
    let n = lin.opt_dim();
    let m = lin.state_dim();
    let z_center = &cal.data.z_center;
    let opt_prior = cal.opt_prior;
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..cal.n_data() {
        let mu = cal.spectrum.eigvals[i];
        let scale = (cal.alpha_d / mu).sqrt();
        let mut image = DMatrix::zeros(n, m);
        let mut shifted = DMatrix::zeros(m, m);
        for c in 0..m {
            let mut e = DVector::zeros(m);
            e[c] = 1.0;
            let term = ThetaStructured {
                origin: ThetaOrigin::DataDirections,
                terms: vec![KronTerm {
                    offset: cal.spectrum.s[i],
                    state: scale * &e,
                    weight: cal.w_dir[i].clone(),
                }],
            };
            image.set_column(c, &apply_b(lin, opt_prior, z_center, &term));
            shifted.set_column(c, &cal.state_prior.apply_shifted_inv(cal.alpha_d, mu, &e));
        }
        cov += &image * shifted * image.transpose();
    }
    let sigma = complement_gradient_scale(lin, cal);
    let mut proj = DMatrix::zeros(n, n);
    let mut wz_inv = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut e = DVector::zeros(n);
        e[c] = 1.0;
        proj.set_column(c, &cal.complement_project(&e));
        wz_inv.set_column(c, &opt_prior.apply_precision_inv(&e));
    }
    cov + sigma * sigma * &proj * wz_inv * proj.transpose()
}

/// Integrated posterior variance of the rank-`r` update for each requested
/// rank: `tr(M F_r Cov F_r')` with `F_r` the rank-`r` inverse-curvature
/// projection.  `ranks` must be sorted ascending.
pub fn integrated_variances(
    proj: &HessianProjector,
    cov_image: &DMatrix<f64>,
    mass_z: &DMatrix<f64>,
    ranks: &[usize],
) -> Vec<f64> {
    debug_assert!(ranks.windows(2).all(|w| w[0] <= w[1]));
    let n = cov_image.nrows();
    let mut f = DMatrix::<f64>::zeros(n, n);
    let mut built_rank = 0usize;
    let mut out = Vec::with_capacity(ranks.len());
    for &r in ranks {
        let target = r.min(proj.rank());
        while built_rank < target {
            let v = proj.modes.column(built_rank).into_owned();
            f += (&v * v.transpose()) / proj.eigvals[built_rank];
            built_rank += 1;
        }
        out.push((mass_z * &f * cov_image * f.transpose()).trace());
    }
    out
}
