//! Solve-count cost model comparing a low-fidelity optimization run against
//! the posterior-update pipeline.  Cost is measured in PDE solves; all
//! linear algebra outside of solves is treated as free.

/// Unit costs and algorithm sizes.  `hifi_solve`/`lofi_solve` price a
/// forward solve of each fidelity; `lofi_adjoint` prices one linear solve
/// with the state Jacobian; `elliptic_state`/`elliptic_opt` price one prior
/// covariance solve in each space.
#[derive(Debug, Clone, Copy)]
pub struct CostParams {
    pub hifi_solve: f64,
    pub lofi_solve: f64,
    pub lofi_adjoint: f64,
    pub elliptic_state: f64,
    pub elliptic_opt: f64,
    /// Outer iterations of the trust-region optimizer.
    pub opt_iters: f64,
    /// Average Hessian-vector products per outer iteration.
    pub opt_hessian_products: f64,
    /// High-fidelity training evaluations.
    pub n_data: f64,
    /// Posterior solution samples.
    pub n_samples: f64,
    /// Retained rank of the state-prior smoothing factorization.
    pub state_rank: f64,
    /// Retained rank of the curvature projector.
    pub proj_rank: f64,
    /// Oversampling used by the randomized smoothing factorization.
    pub oversample_state: f64,
    /// Oversampling used by the randomized curvature eigensolve.
    pub oversample_proj: f64,
}

impl CostParams {
    /// The worked comparison: hifi solve 100, lofi solve 15, adjoint 3,
    /// elliptic solves 1, a 50-iteration optimizer averaging 50
    /// Hessian-vector products, two data points, 100 samples, state rank
    /// 500, projector rank 50, oversampling 10 each.
    pub fn reference() -> Self {
        Self {
            hifi_solve: 100.0,
            lofi_solve: 15.0,
            lofi_adjoint: 3.0,
            elliptic_state: 1.0,
            elliptic_opt: 1.0,
            opt_iters: 50.0,
            opt_hessian_products: 50.0,
            n_data: 2.0,
            n_samples: 100.0,
            state_rank: 500.0,
            proj_rank: 50.0,
            oversample_state: 10.0,
            oversample_proj: 10.0,
        }
    }
}

/// Solve count of the low-fidelity optimization: one forward solve per
/// iteration, plus per iteration one adjoint for the gradient and two
/// adjoint-priced solves per Hessian-vector product.
pub fn cost_lofi_opt(p: &CostParams) -> f64 {
    p.opt_iters * p.lofi_solve + p.opt_iters * (1.0 + 2.0 * p.opt_hessian_products) * p.lofi_adjoint
}

/// Solve count of the posterior pipeline: training evaluations, the
/// sensitivity contractions (one adjoint-priced solve per sample plus one
/// for the mean, and four per retained-plus-oversampled curvature mode),
/// the randomized smoothing factorization, and the optimization-space
/// elliptic solves for calibration and sampling.
pub fn cost_posterior(p: &CostParams) -> f64 {
    let proj = p.proj_rank + p.oversample_proj;
    p.n_data * p.hifi_solve
        + (p.n_samples + 1.0 + 4.0 * proj) * p.lofi_adjoint
        + 2.0 * (p.state_rank + p.oversample_state) * p.elliptic_state
        + (p.n_samples + 4.0 * proj + 2.0 * p.n_data) * p.elliptic_opt
}
