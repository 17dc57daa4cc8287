//! 1D diffusion-reaction two-point boundary value problem with zero-flux
//! ends: `-kappa u'' + c(x) u^2 = z` on `(0, 1)`.
//!
//! The cheap model takes a constant reaction coefficient `c = 1`; the
//! expensive one modulates it as `c(x) = 1 + 0.7 sin(2 pi x)`.  Both the
//! state and the source live in the same piecewise-linear space, and the
//! objective steers the state toward the fixed parabolic target
//! `T(x) = 20 (x + 0.5)(1.3 - x)` with an L2 source penalty.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

use crate::error::{ConfigError, SolveError};
use crate::fem::{self, FemMatrices, GAUSS_3};
use crate::mesh::{build_interval_mesh, Elements, Mesh};
use crate::optim::{ForwardModel, Linearization, LofiProblem};

/// Diffusion coefficient used when none is configured.  At this value the
/// constant-coefficient surrogate mispredicts the optimum enough for a
/// calibrated update to recover a large fraction of the gap, which is the
/// regime the benchmark is meant to exercise.
pub const DEFAULT_KAPPA: f64 = 0.5;
/// Source regularization weight of the benchmark objective.
pub const DEFAULT_GAMMA: f64 = 1e-4;

/// The target state.
pub fn target(x: f64) -> f64 {
    20.0 * (x + 0.5) * (1.3 - x)
}

/// One fidelity of the diffusion-reaction model, optimizable through
/// [`LofiProblem`] (the expensive fidelity reuses the same machinery,
/// which is what reference optima are computed with).
pub struct DiffusionReaction {
    mesh: Mesh,
    mass: DMatrix<f64>,
    stiff: DMatrix<f64>,
    mass_chol: Cholesky<f64, Dyn>,
    kappa: f64,
    gamma: f64,
    /// Reaction coefficient at the three Gauss points of each element.
    react_quad: Vec<[f64; 3]>,
    /// `t_i = \int T phi_i`, exact for the quadratic target.
    target_load: DVector<f64>,
    /// `1/2 \int T^2`.
    target_const: f64,
    newton_tol: f64,
    newton_max: usize,
}

impl DiffusionReaction {
    /// Cheap fidelity: constant reaction coefficient.
    pub fn lofi(n_elems: usize, kappa: f64) -> Result<Self, ConfigError> {
        Self::with_reaction(n_elems, kappa, DEFAULT_GAMMA, |_| 1.0)
    }

    /// Expensive fidelity: sinusoidally modulated reaction coefficient.
    pub fn hifi(n_elems: usize, kappa: f64) -> Result<Self, ConfigError> {
        Self::with_reaction(n_elems, kappa, DEFAULT_GAMMA, |x| {
            1.0 + 0.7 * (2.0 * std::f64::consts::PI * x).sin()
        })
    }

    pub fn with_reaction(
        n_elems: usize,
        kappa: f64,
        gamma: f64,
        coefficient: impl Fn(f64) -> f64,
    ) -> Result<Self, ConfigError> {
        if kappa <= 0.0 {
            return Err(ConfigError::NonPositive {
                name: "kappa",
                value: kappa,
            });
        }
        if gamma <= 0.0 {
            return Err(ConfigError::NonPositive {
                name: "gamma",
                value: gamma,
            });
        }
        let mesh = build_interval_mesh(0.0, 1.0, n_elems)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let FemMatrices { mass, stiff } = fem::assemble(&mesh);
        let mass_chol = Cholesky::new(mass.clone())
            .expect("interval mass matrix is positive definite");

        let n = mesh.num_nodes();
        let mut react_quad = Vec::with_capacity(n_elems);
        let mut target_load = DVector::zeros(n);
        let mut target_const = 0.0;
        if let Elements::Intervals(els) = &mesh.elements {
            for &[a, b] in els {
                let xa = mesh.coords[a][0];
                let h = mesh.coords[b][0] - xa;
                let mut cq = [0.0; 3];
                for (q, &(xi, w)) in GAUSS_3.iter().enumerate() {
                    let x = xa + xi * h;
                    cq[q] = coefficient(x);
                    let t = target(x);
                    target_load[a] += w * h * t * (1.0 - xi);
                    target_load[b] += w * h * t * xi;
                    target_const += 0.5 * w * h * t * t;
                }
                react_quad.push(cq);
            }
        }

        Ok(Self {
            mesh,
            mass,
            stiff,
            mass_chol,
            kappa,
            gamma,
            react_quad,
            target_load,
            target_const,
            newton_tol: 1e-12,
            newton_max: 100,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    /// State-space inner product matrix (shared by source and state here).
    pub fn state_mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiff
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `\int 2 c(x) w_h phi_i phi_j`: the reaction Jacobian when `w` is the
    /// state, the constraint-curvature term when `w` is the adjoint.
    fn curved_mass(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let n = self.mesh.num_nodes();
        let mut out = DMatrix::zeros(n, n);
        if let Elements::Intervals(els) = &self.mesh.elements {
            for (e, &[a, b]) in els.iter().enumerate() {
                let h = self.mesh.coords[b][0] - self.mesh.coords[a][0];
                for (q, &(xi, wq)) in GAUSS_3.iter().enumerate() {
                    let wv = w[a] * (1.0 - xi) + w[b] * xi;
                    let f = 2.0 * self.react_quad[e][q] * wv * wq * h;
                    let (pa, pb) = (1.0 - xi, xi);
                    out[(a, a)] += f * pa * pa;
                    out[(a, b)] += f * pa * pb;
                    out[(b, a)] += f * pb * pa;
                    out[(b, b)] += f * pb * pb;
                }
            }
        }
        out
    }

    /// `N(u)_i = \int c(x) u_h^2 phi_i`.
    fn reaction_term(&self, u: &DVector<f64>) -> DVector<f64> {
        let n = self.mesh.num_nodes();
        let mut out = DVector::zeros(n);
        if let Elements::Intervals(els) = &self.mesh.elements {
            for (e, &[a, b]) in els.iter().enumerate() {
                let h = self.mesh.coords[b][0] - self.mesh.coords[a][0];
                for (q, &(xi, wq)) in GAUSS_3.iter().enumerate() {
                    let uv = u[a] * (1.0 - xi) + u[b] * xi;
                    let f = self.react_quad[e][q] * uv * uv * wq * h;
                    out[a] += f * (1.0 - xi);
                    out[b] += f * xi;
                }
            }
        }
        out
    }

    fn residual(&self, u: &DVector<f64>, rhs: &DVector<f64>) -> DVector<f64> {
        self.kappa * (&self.stiff * u) + self.reaction_term(u) - rhs
    }

    /// Damped Newton from a positive constant initial guess (the Jacobian at
    /// zero state is the singular pure-Neumann stiffness, so starting at an
    /// interior point keeps every factorization nonsingular).
    fn solve_newton(&self, z: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
        let n = self.mesh.num_nodes();
        if z.len() != n {
            return Err(SolveError::Dimension {
                expected: n,
                got: z.len(),
            });
        }
        let rhs = &self.mass * z;
        let scale = 1.0 + rhs.norm();
        // The residual subtracts stiffness terms of size kappa*|K|*|u|, so
        // its floating-point floor grows with mesh resolution; accept any
        // residual within a safe multiple of that cancellation noise.
        let stiff_amax = self.stiff.amax();
        let mut u = DVector::from_element(n, 1.0);
        let mut res = self.residual(&u, &rhs);
        for iter in 0..self.newton_max {
            let res_norm = res.norm();
            let roundoff = f64::EPSILON
                * (n as f64).sqrt()
                * (self.kappa * stiff_amax * u.amax()).max(rhs.norm());
            if res_norm <= self.newton_tol * scale + 32.0 * roundoff {
                return Ok(u);
            }
            let jac = self.kappa * &self.stiff + self.curved_mass(&u);
            let step = jac.lu().solve(&(-&res)).ok_or_else(|| {
                SolveError::Factorization("diffusion-reaction Jacobian is singular".into())
            })?;
            let mut alpha = 1.0;
            loop {
                let trial = &u + alpha * &step;
                let trial_res = self.residual(&trial, &rhs);
                if trial_res.norm() <= (1.0 - 1e-4 * alpha) * res_norm {
                    u = trial;
                    res = trial_res;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-10 {
                    return Err(SolveError::NewtonStalled {
                        iters: iter,
                        residual: res_norm,
                    });
                }
            }
        }
        let res_norm = res.norm();
        let roundoff = f64::EPSILON
            * (n as f64).sqrt()
            * (self.kappa * stiff_amax * u.amax()).max(rhs.norm());
        if res_norm <= self.newton_tol * scale + 32.0 * roundoff {
            Ok(u)
        } else {
            Err(SolveError::NewtonStalled {
                iters: self.newton_max,
                residual: res_norm,
            })
        }
    }
}

impl ForwardModel for DiffusionReaction {
    fn opt_dim(&self) -> usize {
        self.mesh.num_nodes()
    }

    fn state_dim(&self) -> usize {
        self.mesh.num_nodes()
    }

    fn solve(&self, z: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
        self.solve_newton(z)
    }
}

impl LofiProblem for DiffusionReaction {
    fn objective_of(&self, u: &DVector<f64>, z: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.mass * u)) - self.target_load.dot(u)
            + self.target_const
            + 0.5 * self.gamma * z.dot(&(&self.mass * z))
    }

    fn linearize(&self, z: &DVector<f64>) -> Result<Box<dyn Linearization + '_>, SolveError> {
        let u = self.solve_newton(z)?;
        let grad_u = &self.mass * &u - &self.target_load;
        let jac = self.kappa * &self.stiff + self.curved_mass(&u);
        let lu = jac.lu();
        let adjoint = lu.solve(&(-&grad_u)).ok_or_else(|| {
            SolveError::Factorization("state Jacobian singular at linearization point".into())
        })?;
        let curvature = self.curved_mass(&adjoint);
        let gradient = self.gamma * (&self.mass * z) - &self.mass * &adjoint;
        let objective = self.objective_of(&u, z);
        Ok(Box::new(DiffusionReactionLin {
            model: self,
            objective,
            gradient,
            grad_u,
            lu,
            curvature,
        }))
    }

    fn mass_solve_z(&self, g: &DVector<f64>) -> DVector<f64> {
        self.mass_chol.solve(g)
    }
}

/// Point linearization: holds the factorized state Jacobian `A = kappa K +
/// C(u)` (self-adjoint here) and the curvature weight from the adjoint.
pub struct DiffusionReactionLin<'a> {
    model: &'a DiffusionReaction,
    objective: f64,
    gradient: DVector<f64>,
    grad_u: DVector<f64>,
    lu: LU<f64, Dyn, Dyn>,
    curvature: DMatrix<f64>,
}

impl Linearization for DiffusionReactionLin<'_> {
    fn opt_dim(&self) -> usize {
        self.model.mesh.num_nodes()
    }

    fn state_dim(&self) -> usize {
        self.model.mesh.num_nodes()
    }

    fn objective(&self) -> f64 {
        self.objective
    }

    fn gradient(&self) -> &DVector<f64> {
        &self.gradient
    }

    fn hessian_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mv = &self.model.mass * v;
        let du = self.lu.solve(&mv).expect("factorized in linearize");
        let inner = &self.model.mass * &du + &self.curvature * &du;
        let back = self.lu.solve(&inner).expect("factorized in linearize");
        self.model.gamma * mv + &self.model.mass * back
    }

    fn solution_jac_adjoint(&self, w: &DVector<f64>) -> DVector<f64> {
        let y = self.lu.solve(w).expect("factorized in linearize");
        &self.model.mass * y
    }

    fn objective_uu_apply(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.model.mass * w
    }

    fn objective_u_grad(&self) -> &DVector<f64> {
        &self.grad_u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{check_gradient_direction, check_hessian_direction};
    use crate::rng::{standard_normal_vector, SeedSpec};
    use approx::assert_relative_eq;

    fn nodal(model: &DiffusionReaction, f: impl Fn(f64) -> f64) -> DVector<f64> {
        DVector::from_fn(model.mesh().num_nodes(), |i, _| f(model.mesh().coords[i][0]))
    }

    /// The state `u_m = 10 + 3 cos(pi x)` is flux-free at both ends; the
    /// source `z = -kappa u_m'' + c u_m^2` manufactures it as the exact
    /// continuous solution.
    fn manufactured_state(x: f64) -> f64 {
        10.0 + 3.0 * (std::f64::consts::PI * x).cos()
    }

    fn manufactured_source(model: &DiffusionReaction, modulated: bool) -> DVector<f64> {
        let pi = std::f64::consts::PI;
        nodal(model, |x| {
            let c = if modulated {
                1.0 + 0.7 * (2.0 * pi * x).sin()
            } else {
                1.0
            };
            let um = manufactured_state(x);
            3.0 * model.kappa * pi * pi * (pi * x).cos() + c * um * um
        })
    }

    #[test]
    fn zero_source_gives_zero_state() {
        for model in [
            DiffusionReaction::lofi(40, DEFAULT_KAPPA).unwrap(),
            DiffusionReaction::hifi(40, DEFAULT_KAPPA).unwrap(),
        ] {
            let z = DVector::zeros(model.opt_dim());
            let u = model.solve(&z).unwrap();
            // The root is degenerate (residual ~ u^2), so the state error is
            // the square root of the residual tolerance, not the tolerance.
            assert!(u.amax() < 1e-5, "|u| = {}", u.amax());
        }
    }

    #[test]
    fn objective_at_zero_is_closed_form_target_energy() {
        let model = DiffusionReaction::lofi(64, DEFAULT_KAPPA).unwrap();
        let zero = DVector::zeros(model.opt_dim());
        // 1/2 \int_0^1 (20 (x+1/2)(13/10 - x))^2 dx = 209/2.
        assert_relative_eq!(
            model.objective_of(&zero, &zero),
            104.5,
            max_relative = 1e-12
        );
        let ones = DVector::from_element(model.opt_dim(), 1.0);
        // \int T = 43/3.
        assert_relative_eq!(model.target_load.dot(&ones), 43.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn manufactured_solution_both_fidelities() {
        type Maker = fn(usize, f64) -> Result<DiffusionReaction, ConfigError>;
        for (modulated, make) in [
            (false, DiffusionReaction::lofi as Maker),
            (true, DiffusionReaction::hifi as Maker),
        ] {
            let model = make(100, DEFAULT_KAPPA).unwrap();
            let z = manufactured_source(&model, modulated);
            let u = model.solve(&z).unwrap();
            let exact = nodal(&model, manufactured_state);
            let err = (&u - &exact).amax();
            assert!(err < 2e-2, "manufactured-solution error {err}");
            let res = model.residual(&u, &(&model.mass * &z));
            assert!(res.norm() < 1e-9, "converged residual {}", res.norm());
        }
    }

    #[test]
    fn discrepancy_is_nonzero_between_fidelities() {
        let lofi = DiffusionReaction::lofi(60, DEFAULT_KAPPA).unwrap();
        let hifi = DiffusionReaction::hifi(60, DEFAULT_KAPPA).unwrap();
        let z = manufactured_source(&lofi, false);
        let d = hifi.solve(&z).unwrap() - lofi.solve(&z).unwrap();
        assert!(d.amax() > 1e-2, "fidelities coincide: {}", d.amax());
    }

    #[test]
    fn gradient_and_hessian_pass_difference_checks() {
        let model = DiffusionReaction::lofi(24, DEFAULT_KAPPA).unwrap();
        let z = manufactured_source(&model, false);
        for k in 0..3 {
            let dir = standard_normal_vector(model.opt_dim(), SeedSpec::new(90, k));
            let dir = (10.0 / dir.norm()) * dir;
            let g = check_gradient_direction(&model, &z, &dir).unwrap();
            assert!(g.best_error < 1e-7, "gradient FD error {}", g.best_error);
            let h = check_hessian_direction(&model, &z, &dir).unwrap();
            assert!(h.best_error < 1e-6, "hessian FD error {}", h.best_error);
        }
    }
}
