//! Steady advection-diffusion on the square `(-1, 1)^2` with homogeneous
//! Dirichlet walls on the left/bottom and zero-flux on the right/top:
//! `-kappa Laplace(u) + v(u) . grad(u) = f(z)`.
//!
//! The cheap model linearizes the transport field at `v = (1, 1)` (one LU
//! factorization serves every solve and adjoint); the expensive one uses
//! the self-advecting field `v = (u, u)`, solved by damped Newton warm
//! started from the cheap solution.  The source is a 25-term Gaussian bump
//! expansion with centers on a 5 x 5 grid over `[-0.8, 0] x [-0.8, 0]`,
//! so the control space is R^25 with the L2 Gram of the bumps as inner
//! product.  The objective drives the state toward the value 4 on the
//! window `[0.6, 0.7] x [0.8, 0.9]` with an L2 source penalty.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

use crate::error::{ConfigError, SolveError};
use crate::fem::{self, p1_gradients, FemMatrices};
use crate::mesh::{build_rect_mesh, Elements, Mesh};
use crate::optim::{ForwardModel, Linearization, LofiProblem};

/// Diffusion coefficient used when none is configured.
pub const DEFAULT_KAPPA: f64 = 0.25;
/// Source regularization weight of the benchmark objective.
pub const DEFAULT_GAMMA: f64 = 1e-7;
/// Number of Gaussian source bumps.
pub const N_SOURCES: usize = 25;
/// Desired state value over the target window.
pub const TARGET_VALUE: f64 = 4.0;
/// Target window `[x0, x1] x [y0, y1]`.
pub const TARGET_BOX: [f64; 4] = [0.6, 0.7, 0.8, 0.9];

const BUMP_SHARPNESS: f64 = 30.0;

/// Transport field of one fidelity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Velocity {
    Constant([f64; 2]),
    /// `v = (u, u)`: the state advects itself.
    StateDependent,
}

pub struct AdvectionDiffusion {
    mesh: Mesh,
    mass: DMatrix<f64>,
    stiff: DMatrix<f64>,
    kappa: f64,
    gamma: f64,
    velocity: Velocity,
    free: Vec<usize>,
    /// Nodal values of the source bumps, one column per bump.
    basis: DMatrix<f64>,
    /// `basis' M basis`: L2 Gram of the bumps, the control inner product.
    gram: DMatrix<f64>,
    gram_chol: Cholesky<f64, Dyn>,
    /// `\int_box phi_i phi_j` and `\int_box phi_i` over the target window.
    m_target: DMatrix<f64>,
    w_target: DVector<f64>,
    box_area: f64,
    /// Factorized constant-velocity operator (and its transpose): the cheap
    /// solver, and the warm start for the Newton path.
    lin_lu: LU<f64, Dyn, Dyn>,
    lin_lu_t: LU<f64, Dyn, Dyn>,
    newton_tol: f64,
    newton_max: usize,
}

impl AdvectionDiffusion {
    pub fn lofi(nx: usize, kappa: f64) -> Result<Self, ConfigError> {
        Self::with_velocity(nx, kappa, DEFAULT_GAMMA, Velocity::Constant([1.0, 1.0]))
    }

    pub fn hifi(nx: usize, kappa: f64) -> Result<Self, ConfigError> {
        Self::with_velocity(nx, kappa, DEFAULT_GAMMA, Velocity::StateDependent)
    }

    pub fn with_velocity(
        nx: usize,
        kappa: f64,
        gamma: f64,
        velocity: Velocity,
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
        let mesh = build_rect_mesh((-1.0, 1.0), (-1.0, 1.0), nx, nx)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let FemMatrices { mass, stiff } = fem::assemble(&mesh);
        let n = mesh.num_nodes();

        let dirichlet = mesh.dirichlet_nodes();
        let mut is_dirichlet = vec![false; n];
        for i in dirichlet {
            is_dirichlet[i] = true;
        }
        let mut free = Vec::new();
        for i in 0..n {
            if !is_dirichlet[i] {
                free.push(i);
            }
        }

        // Source bumps on a 5 x 5 grid, row-major in (x, y).
        let centers = Self::source_centers();
        let basis = DMatrix::from_fn(n, N_SOURCES, |i, j| {
            let [x, y] = mesh.coords[i];
            let [cx, cy] = centers[j];
            (-BUMP_SHARPNESS * ((x - cx).powi(2) + (y - cy).powi(2))).exp()
        });
        let gram = {
            let g = basis.transpose() * &mass * &basis;
            0.5 * (&g + g.transpose())
        };
        let gram_chol = Cholesky::new(gram.clone())
            .ok_or_else(|| ConfigError::Invalid("source Gram matrix not SPD".into()))?;

        let (m_target, w_target) = assemble_box_integrals(&mesh);
        let [bx0, bx1, by0, by1] = TARGET_BOX;
        let box_area = (bx1 - bx0) * (by1 - by0);

        // Constant-velocity operator; the Newton path warm starts from it.
        let warm_v = match velocity {
            Velocity::Constant(v) => v,
            Velocity::StateDependent => [1.0, 1.0],
        };
        let advect = fem::assemble_advection(&mesh, warm_v);
        let a_full = kappa * &stiff + advect;
        let nf = free.len();
        let a_ff = DMatrix::from_fn(nf, nf, |i, j| a_full[(free[i], free[j])]);
        let lin_lu_t = a_ff.transpose().lu();
        let lin_lu = a_ff.lu();

        Ok(Self {
            mesh,
            mass,
            stiff,
            kappa,
            gamma,
            velocity,
            free,
            basis,
            gram,
            gram_chol,
            m_target,
            w_target,
            box_area,
            lin_lu,
            lin_lu_t,
            newton_tol: 1e-11,
            newton_max: 30,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Full-node state inner product.
    pub fn state_mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    /// Nodal values of the source bumps.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Control-space inner product (L2 Gram of the bumps).
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Centers of the source bumps, row-major in (x, y).
    pub fn source_centers() -> Vec<[f64; 2]> {
        (0..N_SOURCES)
            .map(|j| [-0.8 + 0.2 * (j % 5) as f64, -0.8 + 0.2 * (j / 5) as f64])
            .collect()
    }

    fn gather(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.free.len(), |i, _| full[self.free[i]])
    }

    fn scatter(&self, free_vals: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.mesh.num_nodes());
        for (i, &node) in self.free.iter().enumerate() {
            out[node] = free_vals[i];
        }
        out
    }

    fn load(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.mass * (&self.basis * z)
    }

    /// Constant-velocity solve through the cached factorization.
    fn solve_linear(&self, z: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
        let rhs = self.gather(&self.load(z));
        let uf = self
            .lin_lu
            .solve(&rhs)
            .ok_or_else(|| SolveError::Factorization("transport operator singular".into()))?;
        Ok(self.scatter(&uf))
    }

    /// `\int u_h (du_h/dx + du_h/dy) phi_i` over the mesh: the self-advection
    /// residual contribution at a full-node state.
    fn advective_term(&self, u: &DVector<f64>) -> DVector<f64> {
        let n = self.mesh.num_nodes();
        let mut out = DVector::zeros(n);
        if let Elements::Triangles(els) = &self.mesh.elements {
            for (e, &tri) in els.iter().enumerate() {
                let area = self.mesh.element_measure(e);
                let grads = p1_gradients(&self.mesh, tri, area);
                let mut slope = 0.0;
                let mut u_sum = 0.0;
                for a in 0..3 {
                    slope += u[tri[a]] * (grads[a][0] + grads[a][1]);
                    u_sum += u[tri[a]];
                }
                for i in 0..3 {
                    // \int u_h phi_i over the element.
                    let moment = area / 12.0 * (u_sum + u[tri[i]]);
                    out[tri[i]] += slope * moment;
                }
            }
        }
        out
    }

    /// Jacobian of [`Self::advective_term`]: transport at the frozen field
    /// plus the velocity-perturbation block.
    fn advective_jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let n = self.mesh.num_nodes();
        let mut out = DMatrix::zeros(n, n);
        if let Elements::Triangles(els) = &self.mesh.elements {
            for (e, &tri) in els.iter().enumerate() {
                let area = self.mesh.element_measure(e);
                let grads = p1_gradients(&self.mesh, tri, area);
                let mut slope = 0.0;
                let mut u_sum = 0.0;
                for a in 0..3 {
                    slope += u[tri[a]] * (grads[a][0] + grads[a][1]);
                    u_sum += u[tri[a]];
                }
                for i in 0..3 {
                    let moment = area / 12.0 * (u_sum + u[tri[i]]);
                    for j in 0..3 {
                        let mass_ij = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                        out[(tri[i], tri[j])] +=
                            (grads[j][0] + grads[j][1]) * moment + slope * mass_ij;
                    }
                }
            }
        }
        out
    }

    /// Damped Newton on the self-advecting system, warm started from the
    /// constant-velocity solution.
    fn solve_nonlinear(&self, z: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
        let load = self.load(z);
        let rhs = self.gather(&load);
        let scale = 1.0 + rhs.norm();
        let mut u = self.solve_linear(z)?;
        let residual = |u_full: &DVector<f64>| -> DVector<f64> {
            self.gather(&(self.kappa * (&self.stiff * u_full) + self.advective_term(u_full)))
                - &rhs
        };
        let mut res = residual(&u);
        for iter in 0..self.newton_max {
            let res_norm = res.norm();
            if res_norm <= self.newton_tol * scale {
                return Ok(u);
            }
            let jac_full = self.kappa * &self.stiff + self.advective_jacobian(&u);
            let nf = self.free.len();
            let jac =
                DMatrix::from_fn(nf, nf, |i, j| jac_full[(self.free[i], self.free[j])]);
            let step = jac.lu().solve(&(-&res)).ok_or_else(|| {
                SolveError::Factorization("transport Jacobian singular".into())
            })?;
            let mut alpha = 1.0;
            loop {
                let trial = &u + alpha * self.scatter(&step);
                let trial_res = residual(&trial);
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
        if res_norm <= self.newton_tol * scale {
            Ok(u)
        } else {
            Err(SolveError::NewtonStalled {
                iters: self.newton_max,
                residual: res_norm,
            })
        }
    }

    fn misfit_grad(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.m_target * u - TARGET_VALUE * &self.w_target
    }

    /// Adjoint solution-operator Jacobian action (constant velocity only).
    fn jac_adjoint(&self, w: &DVector<f64>) -> DVector<f64> {
        let wf = self.gather(w);
        let yf = self
            .lin_lu_t
            .solve(&wf)
            .expect("factorization checked at construction");
        self.basis.transpose() * (&self.mass * self.scatter(&yf))
    }
}

impl ForwardModel for AdvectionDiffusion {
    fn opt_dim(&self) -> usize {
        N_SOURCES
    }

    fn state_dim(&self) -> usize {
        self.mesh.num_nodes()
    }

    fn solve(&self, z: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
        if z.len() != N_SOURCES {
            return Err(SolveError::Dimension {
                expected: N_SOURCES,
                got: z.len(),
            });
        }
        match self.velocity {
            Velocity::Constant(_) => self.solve_linear(z),
            Velocity::StateDependent => self.solve_nonlinear(z),
        }
    }
}

impl LofiProblem for AdvectionDiffusion {
    fn objective_of(&self, u: &DVector<f64>, z: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.m_target * u)) - TARGET_VALUE * self.w_target.dot(u)
            + 0.5 * TARGET_VALUE * TARGET_VALUE * self.box_area
            + 0.5 * self.gamma * z.dot(&(&self.gram * z))
    }

    fn linearize(&self, z: &DVector<f64>) -> Result<Box<dyn Linearization + '_>, SolveError> {
        if self.velocity == Velocity::StateDependent {
            return Err(SolveError::NoProgress(
                "self-advecting model exposes forward solves only; optimize the \
                 constant-velocity model"
                    .into(),
            ));
        }
        let u = self.solve_linear(z)?;
        let grad_u = self.misfit_grad(&u);
        let gradient = self.jac_adjoint(&grad_u) + self.gamma * (&self.gram * z);
        let objective = self.objective_of(&u, z);
        Ok(Box::new(AdvectionDiffusionLin {
            model: self,
            objective,
            gradient,
            grad_u,
        }))
    }

    fn mass_solve_z(&self, g: &DVector<f64>) -> DVector<f64> {
        self.gram_chol.solve(g)
    }
}

pub struct AdvectionDiffusionLin<'a> {
    model: &'a AdvectionDiffusion,
    objective: f64,
    gradient: DVector<f64>,
    grad_u: DVector<f64>,
}

impl Linearization for AdvectionDiffusionLin<'_> {
    fn opt_dim(&self) -> usize {
        N_SOURCES
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
        let du = self
            .model
            .solve_linear(v)
            .expect("factorization checked at construction");
        let q = &self.model.m_target * du;
        self.model.jac_adjoint(&q) + self.model.gamma * (&self.model.gram * v)
    }

    fn solution_jac_adjoint(&self, w: &DVector<f64>) -> DVector<f64> {
        self.model.jac_adjoint(w)
    }

    fn objective_uu_apply(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.model.m_target * w
    }

    fn objective_u_grad(&self) -> &DVector<f64> {
        &self.grad_u
    }
}

fn bbox_disjoint(tri: &[[f64; 2]; 3]) -> bool {
    let [x0, x1, y0, y1] = TARGET_BOX;
    let (mut tx0, mut tx1) = (tri[0][0], tri[0][0]);
    let (mut ty0, mut ty1) = (tri[0][1], tri[0][1]);
    for p in &tri[1..] {
        tx0 = tx0.min(p[0]);
        tx1 = tx1.max(p[0]);
        ty0 = ty0.min(p[1]);
        ty1 = ty1.max(p[1]);
    }
    tx1 < x0 || tx0 > x1 || ty1 < y0 || ty0 > y1
}

/// Clip a convex CCW polygon to the target window (Sutherland-Hodgman
/// against the four half-planes).  Orientation is preserved.
fn clip_to_box(poly: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let [x0, x1, y0, y1] = TARGET_BOX;
    // Keep side: a x + b y <= c.
    let planes = [
        (-1.0, 0.0, -x0),
        (1.0, 0.0, x1),
        (0.0, -1.0, -y0),
        (0.0, 1.0, y1),
    ];
    let mut cur: Vec<[f64; 2]> = poly.to_vec();
    for (a, b, c) in planes {
        if cur.is_empty() {
            break;
        }
        let mut next = Vec::with_capacity(cur.len() + 1);
        for k in 0..cur.len() {
            let p = cur[k];
            let q = cur[(k + 1) % cur.len()];
            let fp = a * p[0] + b * p[1] - c;
            let fq = a * q[0] + b * q[1] - c;
            if fp <= 0.0 {
                next.push(p);
            }
            if (fp <= 0.0) != (fq <= 0.0) {
                let t = fp / (fp - fq);
                next.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
        cur = next;
    }
    cur
}

/// `\int_box phi_i phi_j` and `\int_box phi_i` over the target window.
/// Each element is clipped exactly against the window and the resulting
/// convex polygon is fan-triangulated; edge-midpoint quadrature then
/// integrates the (at most quadratic) integrands exactly, aligned mesh
/// or not.
fn assemble_box_integrals(mesh: &Mesh) -> (DMatrix<f64>, DVector<f64>) {
    let n = mesh.num_nodes();
    let mut m_target = DMatrix::zeros(n, n);
    let mut w_target = DVector::zeros(n);
    let els = match &mesh.elements {
        Elements::Triangles(els) => els,
        Elements::Intervals(_) => return (m_target, w_target),
    };
    for (e, &tri) in els.iter().enumerate() {
        let area = mesh.element_measure(e);
        let pts = [
            mesh.coords[tri[0]],
            mesh.coords[tri[1]],
            mesh.coords[tri[2]],
        ];
        if bbox_disjoint(&pts) {
            continue;
        }
        let grads = p1_gradients(mesh, tri, area);
        // Hat a as an affine function of position: 1 at its own vertex.
        let hat = |a: usize, p: [f64; 2]| -> f64 {
            1.0 + grads[a][0] * (p[0] - pts[a][0]) + grads[a][1] * (p[1] - pts[a][1])
        };
        let poly = clip_to_box(&pts);
        for k in 1..poly.len().saturating_sub(1) {
            let piece = [poly[0], poly[k], poly[k + 1]];
            let piece_area = 0.5
                * ((piece[1][0] - piece[0][0]) * (piece[2][1] - piece[0][1])
                    - (piece[2][0] - piece[0][0]) * (piece[1][1] - piece[0][1]));
            let mids = [
                [(piece[0][0] + piece[1][0]) / 2.0, (piece[0][1] + piece[1][1]) / 2.0],
                [(piece[1][0] + piece[2][0]) / 2.0, (piece[1][1] + piece[2][1]) / 2.0],
                [(piece[2][0] + piece[0][0]) / 2.0, (piece[2][1] + piece[0][1]) / 2.0],
            ];
            for m in mids {
                let vals = [hat(0, m), hat(1, m), hat(2, m)];
                for i in 0..3 {
                    w_target[tri[i]] += piece_area / 3.0 * vals[i];
                    for j in 0..3 {
                        m_target[(tri[i], tri[j])] += piece_area / 3.0 * vals[i] * vals[j];
                    }
                }
            }
        }
    }
    (m_target, w_target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{check_gradient_direction, check_hessian_direction};
    use crate::rng::{standard_normal_vector, SeedSpec};
    use approx::assert_relative_eq;

    #[test]
    fn advective_term_closed_forms() {
        let model = AdvectionDiffusion::lofi(8, DEFAULT_KAPPA).unwrap();
        let n = model.mesh.num_nodes();
        // u = x: slope 1 everywhere, so the term collapses to M u.
        let x_field = DVector::from_fn(n, |i, _| model.mesh.coords[i][0]);
        let term = model.advective_term(&x_field);
        let exact = &model.mass * &x_field;
        assert!((term - exact).amax() < 1e-13);
        // Constant field: no slope, no transport.
        let flat = DVector::from_element(n, 3.25);
        assert!(model.advective_term(&flat).amax() < 1e-13);
    }

    #[test]
    fn advective_jacobian_matches_directional_difference() {
        let model = AdvectionDiffusion::lofi(6, DEFAULT_KAPPA).unwrap();
        let n = model.mesh.num_nodes();
        let u = standard_normal_vector(n, SeedSpec::new(40, 0));
        let dir = standard_normal_vector(n, SeedSpec::new(40, 1));
        let jac = model.advective_jacobian(&u);
        let exact = &jac * &dir;
        let h = 1e-6;
        let fd = (model.advective_term(&(&u + h * &dir))
            - model.advective_term(&(&u - h * &dir)))
            / (2.0 * h);
        assert!(
            (&fd - &exact).norm() / exact.norm() < 1e-8,
            "jacobian FD error {}",
            (&fd - &exact).norm() / exact.norm()
        );
    }

    #[test]
    fn box_integrals_exact_on_aligned_mesh() {
        // h = 0.05 aligns the window corners with mesh lines.
        let model = AdvectionDiffusion::lofi(40, DEFAULT_KAPPA).unwrap();
        let n = model.mesh.num_nodes();
        let ones = DVector::from_element(n, 1.0);
        let x_field = DVector::from_fn(n, |i, _| model.mesh.coords[i][0]);
        assert_relative_eq!(
            ones.dot(&(&model.m_target * &ones)),
            0.01,
            max_relative = 1e-12
        );
        assert_relative_eq!(model.w_target.sum(), 0.01, max_relative = 1e-12);
        // \int_box x^2 and \int_box x.
        assert_relative_eq!(
            x_field.dot(&(&model.m_target * &x_field)),
            0.1 * (0.7f64.powi(3) - 0.6f64.powi(3)) / 3.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            model.w_target.dot(&x_field),
            0.1 * (0.7f64.powi(2) - 0.6f64.powi(2)) / 2.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn box_integrals_exact_on_misaligned_mesh() {
        // h = 2/7 puts the whole window strictly inside single elements;
        // clipping still integrates it exactly.
        let model = AdvectionDiffusion::lofi(7, DEFAULT_KAPPA).unwrap();
        let n = model.mesh.num_nodes();
        let ones = DVector::from_element(n, 1.0);
        let x_field = DVector::from_fn(n, |i, _| model.mesh.coords[i][0]);
        assert_relative_eq!(
            ones.dot(&(&model.m_target * &ones)),
            0.01,
            max_relative = 1e-12
        );
        assert_relative_eq!(model.w_target.sum(), 0.01, max_relative = 1e-12);
        assert_relative_eq!(
            x_field.dot(&(&model.m_target * &x_field)),
            0.1 * (0.7f64.powi(3) - 0.6f64.powi(3)) / 3.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn objective_at_zero_is_window_energy() {
        let model = AdvectionDiffusion::lofi(40, DEFAULT_KAPPA).unwrap();
        let zero_u = DVector::zeros(model.mesh.num_nodes());
        let zero_z = DVector::zeros(N_SOURCES);
        assert_relative_eq!(
            model.objective_of(&zero_u, &zero_z),
            0.5 * TARGET_VALUE * TARGET_VALUE * 0.01,
            max_relative = 1e-12
        );
    }

    #[test]
    fn dirichlet_walls_stay_pinned() {
        let model = AdvectionDiffusion::lofi(10, DEFAULT_KAPPA).unwrap();
        let z = DVector::from_element(N_SOURCES, 5.0);
        let u = model.solve(&z).unwrap();
        for i in model.mesh.dirichlet_nodes() {
            assert_eq!(u[i], 0.0);
        }
        assert!(u.amax() > 1e-3, "state vanished everywhere");
    }

    #[test]
    fn frozen_velocity_limit_has_zero_discrepancy() {
        let lofi = AdvectionDiffusion::lofi(10, DEFAULT_KAPPA).unwrap();
        let frozen = AdvectionDiffusion::with_velocity(
            10,
            DEFAULT_KAPPA,
            DEFAULT_GAMMA,
            Velocity::Constant([1.0, 1.0]),
        )
        .unwrap();
        let z = DVector::from_element(N_SOURCES, 7.0);
        let d = frozen.solve(&z).unwrap() - lofi.solve(&z).unwrap();
        assert!(d.amax() < 1e-12);
    }

    #[test]
    fn self_advection_converges_and_differs() {
        let lofi = AdvectionDiffusion::lofi(16, DEFAULT_KAPPA).unwrap();
        let hifi = AdvectionDiffusion::hifi(16, DEFAULT_KAPPA).unwrap();
        let z = DVector::from_element(N_SOURCES, 20.0);
        let ul = lofi.solve(&z).unwrap();
        let uh = hifi.solve(&z).unwrap();
        let d = (&uh - &ul).amax();
        assert!(d > 1e-3, "self-advection indistinguishable: {d}");
        // The converged state satisfies the nonlinear residual.
        let res = hifi.gather(
            &(hifi.kappa * (&hifi.stiff * &uh) + hifi.advective_term(&uh)),
        ) - hifi.gather(&hifi.load(&z));
        assert!(res.norm() < 1e-8, "residual {}", res.norm());
    }

    #[test]
    fn gradient_and_hessian_pass_difference_checks() {
        let model = AdvectionDiffusion::lofi(12, DEFAULT_KAPPA).unwrap();
        let z = DVector::from_element(N_SOURCES, 10.0);
        for k in 0..3 {
            let dir = standard_normal_vector(N_SOURCES, SeedSpec::new(92, k));
            let dir = (10.0 / dir.norm()) * dir;
            let g = check_gradient_direction(&model, &z, &dir).unwrap();
            assert!(g.best_error < 1e-7, "gradient FD error {}", g.best_error);
            let h = check_hessian_direction(&model, &z, &dir).unwrap();
            assert!(h.best_error < 1e-6, "hessian FD error {}", h.best_error);
        }
    }
}
