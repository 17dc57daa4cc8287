//! Propagation of the calibrated discrepancy posterior through the
//! post-optimality sensitivity operator.
//!
//! The sensitivity of the optimal solution to a discrepancy parameter is
//! `-H^-1 B theta`, where `H` is the reduced Hessian at the low-fidelity
//! optimum and `B` maps parameter perturbations to gradient perturbations.
//! `B` contracts against the Kronecker terms of a structured parameter with
//! a handful of state-space operator applies, and `H^-1` is applied through
//! a rank-`r` spectral projector computed from the pencil `(H, W_z)` so the
//! update only moves in directions where the objective has real curvature.

use nalgebra::{DMatrix, DVector};

use crate::calibration::{Calibration, ThetaStructured};
use crate::error::SolveError;
use crate::linalg::b_orthonormalize;
use crate::optim::Linearization;
use crate::prior::OptPrior;
use crate::rng::{standard_normal_vector, SeedSpec};

/// Leading spectrum of the Hessian pencil `H v = rho W_z v`, with modes
/// `W_z`-orthonormal.  The projected inverse Hessian acts as
/// `sum_j rho_j^-1 v_j v_j'`.
pub struct HessianProjector {
    /// Generalized eigenvalues, descending.
    pub eigvals: DVector<f64>,
    /// Modes, one column each; `V' W_z V = I`.
    pub modes: DMatrix<f64>,
    /// Hessian-apply count spent building the factorization.
    pub hessian_applies: usize,
}

impl HessianProjector {
    /// Randomized pencil eigensolve: sketch `W_z^-1 H` on a Gaussian block,
    /// orthonormalize in the `W_z` inner product, and solve the projected
    /// problem exactly.  `power_iters` extra rounds sharpen the subspace
    /// when the spectrum decays slowly.  Each returned pair is certified to
    /// satisfy `|H v - rho W_z v| <= residual_tol * rho_1 * |W_z v|`; the
    /// leading eigenvalue sets the scale because modes are only ever kept
    /// down to a fixed fraction of it, and far-tail pairs never reach small
    /// relative residuals under sketching.
    pub fn compute(
        lin: &dyn Linearization,
        opt_prior: &OptPrior,
        rank: usize,
        oversample: usize,
        power_iters: usize,
        residual_tol: f64,
        seed: SeedSpec,
    ) -> Result<Self, SolveError> {
        let n = lin.opt_dim();
        let rank = rank.min(n);
        let l = (rank + oversample).min(n);
        let mut applies = 0;
        let mut y = DMatrix::zeros(n, l);
        for j in 0..l {
            let omega = standard_normal_vector(n, seed.substream(j as u64));
            y.set_column(j, &opt_prior.apply_precision_inv(&lin.hessian_apply(&omega)));
            applies += 1;
        }
        let wz_mul = |v: &DVector<f64>| opt_prior.apply_precision(v);
        for _ in 0..power_iters {
            let (q, _) = b_orthonormalize(&y, &wz_mul, 2, 1e-12);
            let mut y_next = DMatrix::zeros(n, q.ncols());
            for j in 0..q.ncols() {
                let col = q.column(j).into_owned();
                y_next.set_column(
                    j,
                    &opt_prior.apply_precision_inv(&lin.hessian_apply(&col)),
                );
                applies += 1;
            }
            y = y_next;
        }
        let (q, _) = b_orthonormalize(&y, &wz_mul, 2, 1e-12);
        let cols = q.ncols();
        let mut hq = DMatrix::zeros(n, cols);
        for j in 0..cols {
            let col = q.column(j).into_owned();
            hq.set_column(j, &lin.hessian_apply(&col));
            applies += 1;
        }
        let t = q.transpose() * &hq;
        let t = 0.5 * (&t + t.transpose());
        let (vals, s) = crate::linalg::sorted_symmetric_eigen(&t);
        let keep = rank.min(cols);
        let modes = &q * s.columns(0, keep);
        let eigvals = DVector::from_fn(keep, |i, _| vals[i]);
        let lead = eigvals[0];
        for j in 0..keep {
            let rho = eigvals[j];
            if rho <= 0.0 {
                return Err(SolveError::Indefinite(format!(
                    "curvature eigenvalue {rho:.3e} at position {j}"
                )));
            }
            let v = modes.column(j).into_owned();
            let wv = opt_prior.apply_precision(&v);
            let resid = lin.hessian_apply(&v) - rho * &wv;
            applies += 1;
            if resid.norm() > residual_tol * lead * wv.norm() {
                return Err(SolveError::NoProgress(format!(
                    "pencil eigenpair {j} residual {:.3e} exceeds {:.3e}; \
                     increase oversampling or power iterations",
                    resid.norm() / (lead * wv.norm()),
                    residual_tol
                )));
            }
        }
        Ok(Self {
            eigvals,
            modes: modes.into_owned(),
            hessian_applies: applies,
        })
    }

    pub fn rank(&self) -> usize {
        self.eigvals.len()
    }

    /// Drop trailing modes with `rho_j < tol * rho_1`, keeping at least one.
    pub fn truncated(&self, tol: f64) -> HessianProjector {
        let lead = self.eigvals[0];
        let keep = self
            .eigvals
            .iter()
            .take_while(|&&r| r >= tol * lead)
            .count()
            .max(1);
        HessianProjector {
            eigvals: DVector::from_fn(keep, |i, _| self.eigvals[i]),
            modes: self.modes.columns(0, keep).into_owned(),
            hessian_applies: self.hessian_applies,
        }
    }

    /// Keep exactly the first `rank` modes (clamped to the available count,
    /// minimum one), for sweeping update quality against subspace size.
    pub fn truncated_rank(&self, rank: usize) -> HessianProjector {
        let keep = rank.clamp(1, self.eigvals.len());
        HessianProjector {
            eigvals: DVector::from_fn(keep, |i, _| self.eigvals[i]),
            modes: self.modes.columns(0, keep).into_owned(),
            hessian_applies: self.hessian_applies,
        }
    }

    /// `P H^-1 x = sum_j rho_j^-1 (v_j' x) v_j`.
    pub fn apply_proj_inv_hess(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        for j in 0..self.rank() {
            let v = self.modes.column(j);
            out.axpy(v.dot(x) / self.eigvals[j], &v, 1.0);
        }
        out
    }

    /// The range projector `P x = V V' W_z x`.
    pub fn project(&self, opt_prior: &OptPrior, x: &DVector<f64>) -> DVector<f64> {
        let wx = opt_prior.apply_precision(x);
        let c = self.modes.transpose() * wx;
        &self.modes * c
    }
}

/// Contract the sensitivity mixed-derivative operator against a structured
/// parameter: for each Kronecker term `(a, u, w)` the image is
/// `Jt_S [d2J/du2] u * (a + w' M_z c) + (dJ/du . u) M_z w`, summed over
/// terms, where `c` is the linearization point.
pub fn apply_b(
    lin: &dyn Linearization,
    opt_prior: &OptPrior,
    z_center: &DVector<f64>,
    theta: &ThetaStructured,
) -> DVector<f64> {
    let m = lin.state_dim();
    let n = lin.opt_dim();
    let mz_center = opt_prior.mass() * z_center;
    let grad_u = lin.objective_u_grad();
    let mut state_sum = DVector::zeros(m);
    let mut weight_sum = DVector::zeros(n);
    for t in &theta.terms {
        state_sum.axpy(t.offset + t.weight.dot(&mz_center), &t.state, 1.0);
        weight_sum.axpy(grad_u.dot(&t.state), &t.weight, 1.0);
    }
    lin.solution_jac_adjoint(&lin.objective_uu_apply(&state_sum))
        + opt_prior.mass() * weight_sum
}

/// Scale of the gradient perturbation from unseen-direction discrepancy:
/// `sqrt(dJ/du W_u^-1 dJ/du')`.
pub fn complement_gradient_scale(lin: &dyn Linearization, cal: &Calibration) -> f64 {
    let g = lin.objective_u_grad();
    cal.state_prior
        .apply_precision_inv(g)
        .dot(g)
        .max(0.0)
        .sqrt()
}

/// Draw the image under the sensitivity operator of the unseen-direction
/// parameter fluctuation: a prior control-space draw, deflated of the
/// data-spanned directions and scaled by [`complement_gradient_scale`].
pub fn sample_b_complement(
    lin: &dyn Linearization,
    cal: &Calibration,
    seed: SeedSpec,
) -> DVector<f64> {
    let sigma = complement_gradient_scale(lin, cal);
    let nu = cal.opt_prior.sample(seed);
    sigma * cal.complement_project(&nu)
}

/// Conjugate gradients on `H x = rhs` for unprojected solves.
pub fn solve_hess_cg(
    lin: &dyn Linearization,
    rhs: &DVector<f64>,
    rel_tol: f64,
    max_iters: usize,
) -> Result<(DVector<f64>, usize), SolveError> {
    let n = rhs.len();
    let mut x = DVector::zeros(n);
    let mut r = rhs.clone();
    let mut d = r.clone();
    let rhs_norm = rhs.norm().max(f64::MIN_POSITIVE);
    let mut r_sq = r.norm_squared();
    for k in 0..max_iters {
        if r_sq.sqrt() <= rel_tol * rhs_norm {
            return Ok((x, k));
        }
        let hd = lin.hessian_apply(&d);
        let curvature = d.dot(&hd);
        if curvature <= 0.0 {
            return Err(SolveError::Indefinite(format!(
                "curvature {curvature:.3e} in Hessian solve"
            )));
        }
        let alpha = r_sq / curvature;
        x.axpy(alpha, &d, 1.0);
        r.axpy(-alpha, &hd, 1.0);
        let r_sq_next = r.norm_squared();
        let beta = r_sq_next / r_sq;
        r_sq = r_sq_next;
        d = beta * d + &r;
    }
    if r_sq.sqrt() <= rel_tol * rhs_norm {
        Ok((x, max_iters))
    } else {
        Err(SolveError::NoProgress(format!(
            "Hessian solve stalled at relative residual {:.3e}",
            r_sq.sqrt() / rhs_norm
        )))
    }
}

/// The posterior over the updated optimal solution: mean update plus
/// samples, all expressed in the control space.
pub struct PosteriorEnsemble {
    /// The low-fidelity optimum the update is centered on.
    pub z_center: DVector<f64>,
    /// Deterministic shift `-P H^-1 B theta_mean`.
    pub mean_shift: DVector<f64>,
    /// Updated solution `z_center + mean_shift`.
    pub mean_update: DVector<f64>,
    /// Posterior samples of the updated solution.
    pub samples: Vec<DVector<f64>>,
}

/// Draw `n_samples` posterior optimal solutions.  The mean parameter is
/// assembled once; each sample adds the two zero-mean fluctuation images
/// with independent substreams, so the ensemble is reproducible from the
/// seed alone.
pub fn posterior_solution_samples(
    lin: &dyn Linearization,
    cal: &Calibration,
    projector: &HessianProjector,
    n_samples: usize,
    seed: SeedSpec,
) -> PosteriorEnsemble {
    let z_center = cal.data.z_center.clone();
    let mean = cal.posterior_mean();
    let b_mean = apply_b(lin, cal.opt_prior, &z_center, &mean);
    let mean_shift = -projector.apply_proj_inv_hess(&b_mean);
    let mut samples = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let hat = cal.sample_fluctuation(seed.substream(2 * k as u64));
        let b_hat = apply_b(lin, cal.opt_prior, &z_center, &hat);
        let b_breve = sample_b_complement(lin, cal, seed.substream(2 * k as u64 + 1));
        let shift = -projector.apply_proj_inv_hess(&(&b_mean + b_hat + b_breve));
        samples.push(&z_center + shift);
    }
    PosteriorEnsemble {
        mean_update: &z_center + &mean_shift,
        z_center,
        mean_shift,
        samples,
    }
}
