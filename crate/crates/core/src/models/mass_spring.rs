//! Forced two-mass spring chain on `[0, 10]`, driven through the first
//! block: `m1 x1'' = k2 x2 - (k1 + k2) x1 + z(t)`,
//! `m2 x2'' = k2 x1 - (k2 + k3) x2`, started at rest.
//!
//! The cheap model freezes the second block (`x2 = 0`), leaving a single
//! oscillator with spring constant `k1 + k2`.  Both fidelities report the
//! same observed state: the stacked `(x1, x1')` trajectories on the time
//! grid, so discrepancies compare like with like; `x2` is never observed.
//!
//! Time stepping is the implicit trapezoid rule on the first-order form,
//! and the adjoint is the transpose of that exact discrete recursion, so
//! reduced gradients are exact for the discrete objective.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{ConfigError, SolveError};
use crate::fem::{self, FemMatrices, GAUSS_3};
use crate::mesh::build_interval_mesh;
use crate::optim::{ForwardModel, Linearization, LofiProblem};

/// Source regularization weight of the benchmark objective.
pub const DEFAULT_GAMMA: f64 = 1e-6;
/// Length of the simulated time window `[0, HORIZON]`.
pub const HORIZON: f64 = 10.0;

/// The target trajectory for block 1.
pub fn target(t: f64) -> f64 {
    5.0 * t * t
}

pub struct MassSpring {
    n_steps: usize,
    coupled: bool,
    /// First-order system dimension: 4 coupled, 2 frozen.
    dim: usize,
    /// Trapezoid-rule propagator and forcing influence vector.
    phi: DMatrix<f64>,
    phi_t: DMatrix<f64>,
    beta: DVector<f64>,
    masses: [f64; 2],
    springs: [f64; 3],
    time_mass: DMatrix<f64>,
    time_mass_chol: Cholesky<f64, Dyn>,
    state_mass: DMatrix<f64>,
    gamma: f64,
    target_load: DVector<f64>,
    target_const: f64,
}

impl MassSpring {
    /// Coupled two-mass model with the benchmark constants.
    pub fn hifi(n_steps: usize) -> Result<Self, ConfigError> {
        Self::with_params(n_steps, true, [1.0, 1.0, 1.0], [1.0, 10.0], DEFAULT_GAMMA)
    }

    /// Frozen-block model with the benchmark constants.
    pub fn lofi(n_steps: usize) -> Result<Self, ConfigError> {
        Self::with_params(n_steps, false, [1.0, 1.0, 1.0], [1.0, 10.0], DEFAULT_GAMMA)
    }

    pub fn with_params(
        n_steps: usize,
        coupled: bool,
        springs: [f64; 3],
        masses: [f64; 2],
        gamma: f64,
    ) -> Result<Self, ConfigError> {
        for (name, v) in [("m1", masses[0]), ("m2", masses[1]), ("gamma", gamma)] {
            if v <= 0.0 {
                return Err(ConfigError::NonPositive { name, value: v });
            }
        }
        for s in springs {
            if s < 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "spring constants must be non-negative, got {s}"
                )));
            }
        }
        let mesh = build_interval_mesh(0.0, HORIZON, n_steps)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let FemMatrices { mass: time_mass, .. } = fem::assemble(&mesh);
        let time_mass_chol = Cholesky::new(time_mass.clone())
            .expect("time-grid mass matrix is positive definite");
        let n_nodes = n_steps + 1;
        let mut state_mass = DMatrix::zeros(2 * n_nodes, 2 * n_nodes);
        state_mass
            .view_mut((0, 0), (n_nodes, n_nodes))
            .copy_from(&time_mass);
        state_mass
            .view_mut((n_nodes, n_nodes), (n_nodes, n_nodes))
            .copy_from(&time_mass);

        let dt = HORIZON / n_steps as f64;
        let [k1, k2, k3] = springs;
        let [m1, m2] = masses;
        let (dim, sys, forcing) = if coupled {
            let mut a = DMatrix::zeros(4, 4);
            a[(0, 2)] = 1.0;
            a[(1, 3)] = 1.0;
            a[(2, 0)] = -(k1 + k2) / m1;
            a[(2, 1)] = k2 / m1;
            a[(3, 0)] = k2 / m2;
            a[(3, 1)] = -(k2 + k3) / m2;
            let mut b = DVector::zeros(4);
            b[2] = 1.0 / m1;
            (4, a, b)
        } else {
            let mut a = DMatrix::zeros(2, 2);
            a[(0, 1)] = 1.0;
            a[(1, 0)] = -(k1 + k2) / m1;
            let mut b = DVector::zeros(2);
            b[1] = 1.0 / m1;
            (2, a, b)
        };
        let lhs = DMatrix::identity(dim, dim) - (dt / 2.0) * &sys;
        let lhs_lu = lhs.lu();
        let phi = lhs_lu
            .solve(&(DMatrix::identity(dim, dim) + (dt / 2.0) * &sys))
            .ok_or_else(|| ConfigError::Invalid("trapezoid step matrix singular".into()))?;
        let beta = (dt / 2.0)
            * lhs_lu
                .solve(&forcing)
                .ok_or_else(|| ConfigError::Invalid("trapezoid step matrix singular".into()))?;

        let mut target_load = DVector::zeros(n_nodes);
        let mut target_const = 0.0;
        for e in 0..n_steps {
            let ta = e as f64 * dt;
            for &(xi, w) in GAUSS_3.iter() {
                let t = ta + xi * dt;
                let tv = target(t);
                target_load[e] += w * dt * tv * (1.0 - xi);
                target_load[e + 1] += w * dt * tv * xi;
                target_const += 0.5 * w * dt * tv * tv;
            }
        }

        Ok(Self {
            n_steps,
            coupled,
            dim,
            phi_t: phi.transpose(),
            phi,
            beta,
            masses,
            springs,
            time_mass,
            time_mass_chol,
            state_mass,
            gamma,
            target_load,
            target_const,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        HORIZON / self.n_steps as f64
    }

    /// Inner product of the observed `(x1, x1')` space: the time-grid mass
    /// matrix repeated on both blocks.
    pub fn state_mass(&self) -> &DMatrix<f64> {
        &self.state_mass
    }

    /// Inner product of the forcing space.
    pub fn time_mass(&self) -> &DMatrix<f64> {
        &self.time_mass
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Step the full first-order system from an arbitrary initial condition.
    /// Returns the trajectory at every time node, including `y0`.
    pub fn trajectory(
        &self,
        y0: &DVector<f64>,
        z: &DVector<f64>,
    ) -> Result<Vec<DVector<f64>>, SolveError> {
        if y0.len() != self.dim {
            return Err(SolveError::Dimension {
                expected: self.dim,
                got: y0.len(),
            });
        }
        if z.len() != self.n_steps + 1 {
            return Err(SolveError::Dimension {
                expected: self.n_steps + 1,
                got: z.len(),
            });
        }
        let mut out = Vec::with_capacity(self.n_steps + 1);
        out.push(y0.clone());
        for j in 0..self.n_steps {
            let next = &self.phi * &out[j] + (z[j] + z[j + 1]) * &self.beta;
            out.push(next);
        }
        Ok(out)
    }

    /// Total mechanical energy of a first-order state vector.
    pub fn energy(&self, y: &DVector<f64>) -> f64 {
        let [k1, k2, k3] = self.springs;
        let [m1, m2] = self.masses;
        if self.coupled {
            let (x1, x2, v1, v2) = (y[0], y[1], y[2], y[3]);
            0.5 * (m1 * v1 * v1 + m2 * v2 * v2)
                + 0.5 * (k1 * x1 * x1 + k2 * (x2 - x1) * (x2 - x1) + k3 * x2 * x2)
        } else {
            0.5 * m1 * y[1] * y[1] + 0.5 * (k1 + k2) * y[0] * y[0]
        }
    }

    /// At-rest solve reporting the observed `(x1, x1')` stack.  Linear in
    /// `z`, which makes this double as the solution-operator Jacobian apply.
    fn observed(&self, z: &DVector<f64>) -> DVector<f64> {
        let n_nodes = self.n_steps + 1;
        let mut u = DVector::zeros(2 * n_nodes);
        let mut y = DVector::zeros(self.dim);
        let vel = self.dim / 2;
        u[0] = y[0];
        u[n_nodes] = y[vel];
        for j in 0..self.n_steps {
            y = &self.phi * y + (z[j] + z[j + 1]) * &self.beta;
            u[j + 1] = y[0];
            u[n_nodes + j + 1] = y[vel];
        }
        u
    }

    /// Transpose of [`Self::observed`]: pull an observed-space vector back
    /// to the forcing space through the reverse-time recursion.
    fn observed_adjoint(&self, w: &DVector<f64>) -> DVector<f64> {
        let n_nodes = self.n_steps + 1;
        let vel = self.dim / 2;
        let mut out = DVector::zeros(n_nodes);
        // Running sum p_j = sum_{i >= j} Phi^T^(i-j) q_i with
        // q_i = w_x[i] e_x + w_v[i] e_v.
        let mut p = DVector::zeros(self.dim);
        for j in (0..n_nodes).rev() {
            if j + 1 < n_nodes {
                out[j] += self.beta.dot(&p);
            }
            let mut q = DVector::zeros(self.dim);
            q[0] = w[j];
            q[vel] = w[n_nodes + j];
            p = &self.phi_t * p + q;
            if j >= 1 {
                out[j] += self.beta.dot(&p);
            }
        }
        out
    }

    fn misfit_grad(&self, u: &DVector<f64>) -> DVector<f64> {
        let n_nodes = self.n_steps + 1;
        let x1 = u.rows(0, n_nodes).into_owned();
        let mut g = DVector::zeros(2 * n_nodes);
        g.rows_mut(0, n_nodes)
            .copy_from(&(&self.time_mass * x1 - &self.target_load));
        g
    }
}

impl ForwardModel for MassSpring {
    fn opt_dim(&self) -> usize {
        self.n_steps + 1
    }

    fn state_dim(&self) -> usize {
        2 * (self.n_steps + 1)
    }

    fn solve(&self, z: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
        if z.len() != self.n_steps + 1 {
            return Err(SolveError::Dimension {
                expected: self.n_steps + 1,
                got: z.len(),
            });
        }
        Ok(self.observed(z))
    }
}

impl LofiProblem for MassSpring {
    fn objective_of(&self, u: &DVector<f64>, z: &DVector<f64>) -> f64 {
        let n_nodes = self.n_steps + 1;
        let x1 = u.rows(0, n_nodes).into_owned();
        0.5 * x1.dot(&(&self.time_mass * &x1)) - self.target_load.dot(&x1)
            + self.target_const
            + 0.5 * self.gamma * z.dot(&(&self.time_mass * z))
    }

    fn linearize(&self, z: &DVector<f64>) -> Result<Box<dyn Linearization + '_>, SolveError> {
        let u = self.solve(z)?;
        let grad_u = self.misfit_grad(&u);
        let gradient = self.observed_adjoint(&grad_u) + self.gamma * (&self.time_mass * z);
        let objective = self.objective_of(&u, z);
        Ok(Box::new(MassSpringLin {
            model: self,
            objective,
            gradient,
            grad_u,
        }))
    }

    fn mass_solve_z(&self, g: &DVector<f64>) -> DVector<f64> {
        self.time_mass_chol.solve(g)
    }
}

pub struct MassSpringLin<'a> {
    model: &'a MassSpring,
    objective: f64,
    gradient: DVector<f64>,
    grad_u: DVector<f64>,
}

impl Linearization for MassSpringLin<'_> {
    fn opt_dim(&self) -> usize {
        self.model.n_steps + 1
    }

    fn state_dim(&self) -> usize {
        2 * (self.model.n_steps + 1)
    }

    fn objective(&self) -> f64 {
        self.objective
    }

    fn gradient(&self) -> &DVector<f64> {
        &self.gradient
    }

    fn hessian_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let du = self.model.observed(v);
        let q = self.objective_uu_apply(&du);
        self.model.observed_adjoint(&q) + self.model.gamma * (&self.model.time_mass * v)
    }

    fn solution_jac_adjoint(&self, w: &DVector<f64>) -> DVector<f64> {
        self.model.observed_adjoint(w)
    }

    fn objective_uu_apply(&self, w: &DVector<f64>) -> DVector<f64> {
        let n_nodes = self.model.n_steps + 1;
        let wx = w.rows(0, n_nodes).into_owned();
        let mut out = DVector::zeros(2 * n_nodes);
        out.rows_mut(0, n_nodes)
            .copy_from(&(&self.model.time_mass * wx));
        out
    }

    fn objective_u_grad(&self) -> &DVector<f64> {
        &self.grad_u
    }
}
