//! Trust-region Newton-CG on reduced-space PDE-constrained objectives, and
//! the linearization interface consumed by the posterior solution update.
//!
//! The optimizer only sees a problem through [`LofiProblem`]: forward
//! solves, objective values, and point linearizations carrying gradient and
//! Hessian actions.  Finite-difference derivative checks live here too so
//! every model can be audited with the same machinery.

use nalgebra::DVector;

use crate::error::SolveError;

/// A solution operator `z -> u`: the PDE solve underlying either fidelity.
pub trait ForwardModel {
    fn opt_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn solve(&self, z: &DVector<f64>) -> Result<DVector<f64>, SolveError>;
}

/// Everything the optimizer and the sensitivity update need at one point:
/// value, reduced gradient, reduced-Hessian action, and the state-space
/// derivative pieces of the objective and solution operator.
pub trait Linearization {
    fn opt_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    /// Objective value at the linearization point.
    fn objective(&self) -> f64;
    /// Reduced gradient at the linearization point.
    fn gradient(&self) -> &DVector<f64>;
    /// Reduced-Hessian action `H v`.
    fn hessian_apply(&self, v: &DVector<f64>) -> DVector<f64>;
    /// Adjoint solution-operator Jacobian action on a state vector.
    fn solution_jac_adjoint(&self, w: &DVector<f64>) -> DVector<f64>;
    /// State Hessian of the objective applied to a state vector.
    fn objective_uu_apply(&self, w: &DVector<f64>) -> DVector<f64>;
    /// State gradient of the objective, as a column vector.
    fn objective_u_grad(&self) -> &DVector<f64>;
}

/// The optimizable low-fidelity problem.
pub trait LofiProblem: ForwardModel {
    /// Objective `J(u, z)` for an already-computed state.
    fn objective_of(&self, u: &DVector<f64>, z: &DVector<f64>) -> f64;
    /// Linearize at `z` (solves state and adjoint).
    fn linearize(&self, z: &DVector<f64>) -> Result<Box<dyn Linearization + '_>, SolveError>;
    /// Riesz map on the control space: apply the inverse of the control
    /// inner-product matrix.  Used to measure gradients mesh-independently.
    fn mass_solve_z(&self, g: &DVector<f64>) -> DVector<f64>;

    fn objective(&self, z: &DVector<f64>) -> Result<f64, SolveError> {
        Ok(self.objective_of(&self.solve(z)?, z))
    }
}

/// Inner CG tolerance selection for the Newton step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CgForcing {
    /// `min(0.5, sqrt(|g| / |g0|))`: loose far from the solution,
    /// tightening as the gradient drops.
    EisenstatWalker,
    /// A fixed relative residual tolerance.
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct TrustRegionOptions {
    pub max_iters: usize,
    /// Stop when the Riesz gradient norm falls below
    /// `max(gtol_abs, gtol_rel * initial_norm)`.
    pub gtol_rel: f64,
    pub gtol_abs: f64,
    pub initial_radius: f64,
    pub max_radius: f64,
    pub cg_max_iters: usize,
    pub forcing: CgForcing,
}

impl Default for TrustRegionOptions {
    fn default() -> Self {
        // The sensitivity update assumes a stationary point, so leftover
        // gradient translates directly into update bias; the default
        // tolerance is therefore much tighter than a generic optimizer's.
        Self {
            max_iters: 200,
            gtol_rel: 1e-11,
            gtol_abs: 1e-12,
            initial_radius: 1.0,
            max_radius: 1e3,
            cg_max_iters: 200,
            forcing: CgForcing::EisenstatWalker,
        }
    }
}

/// One outer iteration of the trust-region loop, for logs and reports.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub gradient_norm: f64,
    pub radius: f64,
    pub cg_iters: usize,
    pub step_norm: f64,
    pub ratio: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub z: DVector<f64>,
    pub objective: f64,
    pub gradient_norm: f64,
    pub converged: bool,
    pub iterations: Vec<IterationRecord>,
}

enum CgOutcome {
    Interior(DVector<f64>, usize),
    Boundary(DVector<f64>, usize),
}

/// Steihaug conjugate gradients on `H s = -g` within radius `delta`.
fn steihaug(
    lin: &dyn Linearization,
    g: &DVector<f64>,
    delta: f64,
    eta: f64,
    max_iters: usize,
) -> CgOutcome {
    let n = g.len();
    let mut s = DVector::zeros(n);
    let mut r = g.clone();
    let mut d = -g.clone();
    let g_norm = g.norm();
    let mut r_sq = r.norm_squared();
    for k in 0..max_iters {
        let hd = lin.hessian_apply(&d);
        let curvature = d.dot(&hd);
        if curvature <= 0.0 {
            return CgOutcome::Boundary(to_boundary(&s, &d, delta), k + 1);
        }
        let alpha = r_sq / curvature;
        let s_next = &s + alpha * &d;
        if s_next.norm() >= delta {
            return CgOutcome::Boundary(to_boundary(&s, &d, delta), k + 1);
        }
        s = s_next;
        r.axpy(alpha, &hd, 1.0);
        let r_sq_next = r.norm_squared();
        if r_sq_next.sqrt() <= eta * g_norm {
            return CgOutcome::Interior(s, k + 1);
        }
        let beta = r_sq_next / r_sq;
        r_sq = r_sq_next;
        d = beta * d - &r;
    }
    CgOutcome::Interior(s, max_iters)
}

/// Positive root of `|s + tau d| = delta`.
fn to_boundary(s: &DVector<f64>, d: &DVector<f64>, delta: f64) -> DVector<f64> {
    let dd = d.norm_squared();
    let sd = s.dot(d);
    let ss = s.norm_squared();
    let disc = (sd * sd + dd * (delta * delta - ss)).max(0.0);
    let tau = (-sd + disc.sqrt()) / dd;
    s + tau * d
}

/// Minimize the low-fidelity objective starting from `z0`.
pub fn minimize(
    problem: &dyn LofiProblem,
    z0: &DVector<f64>,
    opts: &TrustRegionOptions,
) -> Result<OptimizationResult, SolveError> {
    let mut z = z0.clone();
    let mut radius = opts.initial_radius;
    let mut iterations = Vec::new();
    let mut lin = problem.linearize(&z)?;
    let riesz_norm = |problem: &dyn LofiProblem, g: &DVector<f64>| -> f64 {
        problem.mass_solve_z(g).dot(g).max(0.0).sqrt()
    };
    let gnorm0 = riesz_norm(problem, lin.gradient());
    let gtol = opts.gtol_abs.max(opts.gtol_rel * gnorm0);
    let mut gnorm = gnorm0;
    let mut objective = lin.objective();
    if !objective.is_finite() {
        return Err(SolveError::NoProgress(
            "objective not finite at the initial iterate".into(),
        ));
    }
    for iter in 0..opts.max_iters {
        if gnorm <= gtol {
            return Ok(OptimizationResult {
                z,
                objective,
                gradient_norm: gnorm,
                converged: true,
                iterations,
            });
        }
        let eta = match opts.forcing {
            CgForcing::EisenstatWalker => (gnorm / gnorm0).sqrt().min(0.5),
            CgForcing::Fixed(tol) => tol,
        };
        let g = lin.gradient().clone();
        let (step, cg_iters, hit_boundary) =
            match steihaug(lin.as_ref(), &g, radius, eta, opts.cg_max_iters) {
                CgOutcome::Interior(s, k) => (s, k, false),
                CgOutcome::Boundary(s, k) => (s, k, true),
            };
        let predicted = -(g.dot(&step) + 0.5 * step.dot(&lin.hessian_apply(&step)));
        let z_trial = &z + &step;
        let trial_objective = problem.objective(&z_trial)?;
        let actual = objective - trial_objective;
        let ratio = if predicted.abs() > 0.0 {
            actual / predicted
        } else {
            0.0
        };
        let accepted = ratio > 0.1 && trial_objective.is_finite();
        iterations.push(IterationRecord {
            iter,
            objective,
            gradient_norm: gnorm,
            radius,
            cg_iters,
            step_norm: step.norm(),
            ratio,
            accepted,
        });
        if accepted {
            z = z_trial;
            lin = problem.linearize(&z)?;
            objective = lin.objective();
            gnorm = riesz_norm(problem, lin.gradient());
        }
        if ratio < 0.25 {
            radius *= 0.25;
        } else if ratio > 0.75 && hit_boundary {
            radius = (2.0 * radius).min(opts.max_radius);
        }
        if radius < 1e-14 {
            return Ok(OptimizationResult {
                z,
                objective,
                gradient_norm: gnorm,
                converged: gnorm <= gtol,
                iterations,
            });
        }
    }
    Ok(OptimizationResult {
        z,
        objective,
        gradient_norm: gnorm,
        converged: gnorm <= gtol,
        iterations,
    })
}

/// Result of a finite-difference derivative audit.
#[derive(Debug, Clone, Copy)]
pub struct DerivativeCheck {
    /// Best relative error over the step-size sweep.
    pub best_error: f64,
    /// Step size achieving it.
    pub best_step: f64,
    /// Observed convergence order on the coarse end of the sweep.
    pub observed_order: f64,
}

fn fd_steps() -> Vec<f64> {
    (2..=7).map(|k| 10f64.powi(-k)).collect()
}

/// Central-difference check of the reduced gradient along one direction.
pub fn check_gradient_direction(
    problem: &dyn LofiProblem,
    z: &DVector<f64>,
    dir: &DVector<f64>,
) -> Result<DerivativeCheck, SolveError> {
    let lin = problem.linearize(z)?;
    let exact = lin.gradient().dot(dir);
    let scale = exact.abs().max(1e-12);
    let mut errors = Vec::new();
    for h in fd_steps() {
        let fp = problem.objective(&(z + h * dir))?;
        let fm = problem.objective(&(z - h * dir))?;
        let fd = (fp - fm) / (2.0 * h);
        errors.push(((fd - exact).abs() / scale, h));
    }
    Ok(summarize_sweep(&errors))
}

/// Central-difference check of the reduced-Hessian action along one
/// direction, via differenced gradients.
pub fn check_hessian_direction(
    problem: &dyn LofiProblem,
    z: &DVector<f64>,
    dir: &DVector<f64>,
) -> Result<DerivativeCheck, SolveError> {
    let lin = problem.linearize(z)?;
    let exact = lin.hessian_apply(dir);
    let scale = exact.norm().max(1e-12);
    let mut errors = Vec::new();
    for h in fd_steps() {
        let gp = problem.linearize(&(z + h * dir))?.gradient().clone();
        let gm = problem.linearize(&(z - h * dir))?.gradient().clone();
        let fd = (gp - gm) / (2.0 * h);
        errors.push(((&fd - &exact).norm() / scale, h));
    }
    Ok(summarize_sweep(&errors))
}

fn summarize_sweep(errors: &[(f64, f64)]) -> DerivativeCheck {
    let (best_error, best_step) = errors
        .iter()
        .cloned()
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        .unwrap();
    // Estimate the order from the coarsest consecutive pair with decreasing
    // error (before roundoff takes over).
    let mut observed_order = 0.0;
    for w in errors.windows(2) {
        let ((e0, h0), (e1, h1)) = (w[0], w[1]);
        if e1 < e0 && e0 > 0.0 && e1 > 0.0 {
            observed_order = (e0 / e1).ln() / (h0 / h1).ln();
            break;
        }
    }
    DerivativeCheck {
        best_error,
        best_step,
        observed_order,
    }
}

/// Max relative asymmetry `|v' H w - w' H v|` over random direction pairs.
pub fn hessian_asymmetry(
    problem: &dyn LofiProblem,
    z: &DVector<f64>,
    pairs: usize,
    seed: crate::rng::SeedSpec,
) -> Result<f64, SolveError> {
    let lin = problem.linearize(z)?;
    let n = z.len();
    let mut worst: f64 = 0.0;
    for k in 0..pairs {
        let v = crate::rng::standard_normal_vector(n, seed.substream(2 * k as u64));
        let w = crate::rng::standard_normal_vector(n, seed.substream(2 * k as u64 + 1));
        let hv = lin.hessian_apply(&v);
        let hw = lin.hessian_apply(&w);
        let a = v.dot(&hw);
        let b = w.dot(&hv);
        let scale = a.abs().max(b.abs()).max(1e-12);
        worst = worst.max((a - b).abs() / scale);
    }
    Ok(worst)
}
