//! Dense reference implementations, for validation only.
//!
//! Everything here materializes the full discrepancy parameter space
//! (dimension `p = m(n+1)`) and is therefore restricted to small random
//! instances.  The structured algorithms in [`crate::calibration`] and
//! [`crate::update`] are tested against these matrices entry by entry; none
//! of this code runs on real problems.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::linalg::{generalized_symmetric_eigen, kron, sorted_symmetric_eigen, symmetric_sqrt};
use crate::rng::{standard_normal_vector, SeedSpec};

/// A fully dense problem instance: SPD inner products and priors, training
/// data, and the ingredients of the post-optimality sensitivity operator.
#[derive(Debug, Clone)]
pub struct DenseInstance {
    pub state_dim: usize,
    pub opt_dim: usize,
    pub n_data: usize,
    pub mass_u: DMatrix<f64>,
    pub mass_z: DMatrix<f64>,
    pub w_u: DMatrix<f64>,
    pub w_z: DMatrix<f64>,
    pub alpha_d: f64,
    pub z_center: DVector<f64>,
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    /// Adjoint of the low-fidelity solution-operator Jacobian at the center.
    pub lofi_jac_t: DMatrix<f64>,
    /// State Hessian of the objective.
    pub hess_uu: DMatrix<f64>,
    /// State gradient of the objective (as a column vector).
    pub grad_u: DVector<f64>,
    /// Optimization-variable Hessian of the reduced objective, SPD.
    pub hess: DMatrix<f64>,
}

/// Orthogonal matrix from the QR factorization of a seeded Gaussian matrix.
pub fn random_orthogonal(dim: usize, seed: SeedSpec) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        g.set_column(j, &standard_normal_vector(dim, seed.substream(j as u64)));
    }
    g.qr().q()
}

/// Random SPD matrix with eigenvalues uniform in `[lo, hi]`.
pub fn random_spd(dim: usize, lo: f64, hi: f64, seed: SeedSpec) -> DMatrix<f64> {
    let q = random_orthogonal(dim, seed);
    let raw = standard_normal_vector(dim, seed.substream(dim as u64 + 1));
    let evs = DVector::from_fn(dim, |i, _| {
        // Map the normal draw through its CDF for a uniform value.
        let u = 0.5 * (1.0 + erf(raw[i] / std::f64::consts::SQRT_2));
        lo + (hi - lo) * u
    });
    &q * DMatrix::from_diagonal(&evs) * q.transpose()
}

fn erf(x: f64) -> f64 {
    // Abramowitz-Stegun 7.1.26; plenty for spreading test eigenvalues.
    let sign = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Draw a well-conditioned instance.  All spectra are kept within two
/// orders of magnitude so that reference inversions stay trustworthy at
/// tight tolerances.
pub fn random_instance(
    state_dim: usize,
    opt_dim: usize,
    n_data: usize,
    seed: SeedSpec,
) -> DenseInstance {
    assert!(n_data >= 1 && n_data <= opt_dim);
    let s = |k: u64| seed.substream(k);
    let mass_u = random_spd(state_dim, 0.5, 2.0, s(1));
    let mass_z = random_spd(opt_dim, 0.5, 2.0, s(2));
    let w_u = random_spd(state_dim, 0.4, 3.0, s(3));
    let w_z = random_spd(opt_dim, 0.4, 3.0, s(4));
    let z_center = standard_normal_vector(opt_dim, s(5));
    let mut inputs = vec![z_center.clone()];
    let mut outputs = vec![standard_normal_vector(state_dim, s(6))];
    for l in 1..n_data {
        inputs.push(&z_center + standard_normal_vector(opt_dim, s(7 + l as u64)));
        outputs.push(standard_normal_vector(state_dim, s(17 + l as u64)));
    }
    let mut lofi_jac_t = DMatrix::zeros(opt_dim, state_dim);
    for j in 0..state_dim {
        lofi_jac_t.set_column(j, &standard_normal_vector(opt_dim, s(27 + j as u64)));
    }
    let hess_uu = random_spd(state_dim, 0.3, 2.0, s(40));
    let grad_u = standard_normal_vector(state_dim, s(41));
    let hess = random_spd(opt_dim, 0.5, 4.0, s(42));
    DenseInstance {
        state_dim,
        opt_dim,
        n_data,
        mass_u,
        mass_z,
        w_u,
        w_z,
        alpha_d: 0.3,
        z_center,
        inputs,
        outputs,
        lofi_jac_t,
        hess_uu,
        grad_u,
        hess,
    }
}

impl DenseInstance {
    pub fn param_dim(&self) -> usize {
        self.state_dim * (self.opt_dim + 1)
    }

    fn w_z_inv(&self) -> DMatrix<f64> {
        Cholesky::new(self.w_z.clone()).unwrap().inverse()
    }

    fn w_u_inv(&self) -> DMatrix<f64> {
        Cholesky::new(self.w_u.clone()).unwrap().inverse()
    }

    /// Observation operator at input `z`: maps a parameter to the
    /// discrepancy value, `m x p`.
    pub fn obs_matrix_at(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let m = self.state_dim;
        let n = self.opt_dim;
        let mut a = DMatrix::zeros(m, m * (n + 1));
        let row = (&self.mass_z * z).transpose();
        for i in 0..m {
            a[(i, i)] = 1.0;
            for k in 0..n {
                a[(i, m + i * n + k)] = row[(0, k)];
            }
        }
        a
    }

    /// Stacked observation operator over all training inputs, `mN x p`.
    pub fn obs_stack(&self) -> DMatrix<f64> {
        let m = self.state_dim;
        let p = self.param_dim();
        let mut a = DMatrix::zeros(m * self.n_data, p);
        for (l, z) in self.inputs.iter().enumerate() {
            a.view_mut((l * m, 0), (m, p))
                .copy_from(&self.obs_matrix_at(z));
        }
        a
    }

    /// The parameter-prior precision, assembled from its four blocks.
    pub fn w_theta(&self) -> DMatrix<f64> {
        let m = self.state_dim;
        let n = self.opt_dim;
        let p = m * (n + 1);
        let mz_c = &self.mass_z * &self.z_center;
        let row = DMatrix::from_row_slice(1, n, mz_c.as_slice());
        let col = DMatrix::from_column_slice(n, 1, mz_c.as_slice());
        let mid = &self.w_z + &self.z_center * self.z_center.transpose();
        let lower_right = &self.mass_z * mid * &self.mass_z;
        let mut w = DMatrix::zeros(p, p);
        w.view_mut((0, 0), (m, m)).copy_from(&self.w_u);
        w.view_mut((0, m), (m, m * n))
            .copy_from(&kron(&self.w_u, &row));
        w.view_mut((m, 0), (m * n, m))
            .copy_from(&kron(&self.w_u, &col));
        w.view_mut((m, m), (m * n, m * n))
            .copy_from(&kron(&self.w_u, &lower_right));
        w
    }

    /// Generalized eigendecomposition of the state-prior precision in the
    /// state inner product: `W_u = M_u X Lam X' M_u`, `X' M_u X = I`.
    pub fn state_precision_eigen(&self) -> (DVector<f64>, DMatrix<f64>) {
        generalized_symmetric_eigen(&self.w_u, &self.mass_u)
            .expect("state inner product SPD by construction")
    }

    /// Block lower-triangular factor with `W_theta = L L'`.
    pub fn l_factor(&self) -> DMatrix<f64> {
        let m = self.state_dim;
        let n = self.opt_dim;
        let p = m * (n + 1);
        let (lam, x) = self.state_precision_eigen();
        let mxl = &self.mass_u * x * DMatrix::from_diagonal(&lam.map(f64::sqrt));
        let mz_c = &self.mass_z * &self.z_center;
        let col = DMatrix::from_column_slice(n, 1, mz_c.as_slice());
        let w_z_sqrt = symmetric_sqrt(&self.w_z);
        let mut l = DMatrix::zeros(p, p);
        l.view_mut((0, 0), (m, m)).copy_from(&mxl);
        l.view_mut((m, 0), (m * n, m)).copy_from(&kron(&mxl, &col));
        l.view_mut((m, m), (m * n, m * n))
            .copy_from(&kron(&mxl, &(&self.mass_z * w_z_sqrt)));
        l
    }

    /// Closed-form inverse of [`Self::l_factor`].
    pub fn l_inv(&self) -> DMatrix<f64> {
        let m = self.state_dim;
        let n = self.opt_dim;
        let p = m * (n + 1);
        let (lam, x) = self.state_precision_eigen();
        let lxt = DMatrix::from_diagonal(&lam.map(|v| 1.0 / v.sqrt())) * x.transpose();
        let w_z_inv_sqrt = symmetric_sqrt(&self.w_z_inv());
        let neg_col = -(&w_z_inv_sqrt * &self.z_center);
        let col = DMatrix::from_column_slice(n, 1, neg_col.as_slice());
        let mass_z_inv = Cholesky::new(self.mass_z.clone()).unwrap().inverse();
        let mut li = DMatrix::zeros(p, p);
        li.view_mut((0, 0), (m, m)).copy_from(&lxt);
        li.view_mut((m, 0), (m * n, m)).copy_from(&kron(&lxt, &col));
        li.view_mut((m, m), (m * n, m * n))
            .copy_from(&kron(&lxt, &(w_z_inv_sqrt * mass_z_inv)));
        li
    }

    /// Dense posterior over the parameter: mean and covariance from the
    /// textbook Gaussian-linear formulas.
    pub fn dense_posterior(&self) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.state_dim;
        let a = self.obs_stack();
        let mut d = DVector::zeros(m * self.n_data);
        for l in 0..self.n_data {
            d.rows_mut(l * m, m).copy_from(&self.outputs[l]);
        }
        let block_mass = kron(&DMatrix::identity(self.n_data, self.n_data), &self.mass_u);
        let prec = self.w_theta() + (a.transpose() * &block_mass * &a) / self.alpha_d;
        let prec = 0.5 * (&prec + prec.transpose());
        let sigma = Cholesky::new(prec).expect("posterior precision SPD").inverse();
        let mean = (&sigma * (a.transpose() * block_mass * d)) / self.alpha_d;
        (mean, sigma)
    }

    /// Direction-weighting matrix `G` and its spectral pieces, computed
    /// densely and independently of the structured code.
    pub fn dense_g_pieces(&self) -> DenseGPieces {
        let n_data = self.n_data;
        let wz_inv = self.w_z_inv();
        let centered: Vec<DVector<f64>> =
            self.inputs.iter().map(|z| z - &self.z_center).collect();
        let mut g = DMatrix::from_element(n_data, n_data, 1.0);
        for l in 0..n_data {
            for k in 0..n_data {
                g[(l, k)] += (centered[l].transpose() * &wz_inv * &centered[k])[(0, 0)];
            }
        }
        let (mu, gvecs) = sorted_symmetric_eigen(&(0.5 * (&g + g.transpose())));
        let mut y = Vec::new();
        let mut s = Vec::new();
        for i in 0..n_data {
            let gi = gvecs.column(i);
            let edg: f64 = gi.sum();
            let mut yi = DVector::zeros(self.opt_dim);
            for l in 0..n_data {
                yi.axpy(gi[l], &centered[l], 1.0);
            }
            let si = edg - (yi.transpose() * &wz_inv * &self.z_center)[(0, 0)];
            y.push(yi);
            s.push(si);
        }
        DenseGPieces {
            g,
            mu,
            gvecs,
            y,
            s,
        }
    }

    /// Right generalized singular vectors of the stacked observation
    /// operator, one column per `(direction i, state mode j)` pair, together
    /// with the diagonal of the posterior correction.
    pub fn psi_and_correction(&self) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.state_dim;
        let n = self.opt_dim;
        let pieces = self.dense_g_pieces();
        let (lam, x) = self.state_precision_eigen();
        let wz_inv = self.w_z_inv();
        let mass_z_inv = Cholesky::new(self.mass_z.clone()).unwrap().inverse();
        let mut psi = DMatrix::zeros(m * (n + 1), m * self.n_data);
        let mut corr = DVector::zeros(m * self.n_data);
        for i in 0..self.n_data {
            let w_vec = &mass_z_inv * &wz_inv * &pieces.y[i];
            for j in 0..m {
                let col = i * m + j;
                let scale = 1.0 / (pieces.mu[i] * lam[j]).sqrt();
                let xj = x.column(j);
                for a in 0..m {
                    psi[(a, col)] = scale * pieces.s[i] * xj[a];
                    for k in 0..n {
                        psi[(m + a * n + k, col)] = scale * xj[a] * w_vec[k];
                    }
                }
                corr[col] = pieces.mu[i] / (pieces.mu[i] + self.alpha_d * lam[j]);
            }
        }
        (psi, corr)
    }

    /// Orthonormal basis of the directions unseen by the data: vectors
    /// orthogonal to `W_z^{-1/2}(z_l - center)`, `l >= 2`.
    pub fn complement_basis(&self) -> DMatrix<f64> {
        let n = self.opt_dim;
        let k = self.n_data - 1;
        if k == 0 {
            return DMatrix::identity(n, n);
        }
        let w_inv_sqrt = symmetric_sqrt(&self.w_z_inv());
        let mut dirs = DMatrix::zeros(n, k);
        for l in 0..k {
            dirs.set_column(l, &(&w_inv_sqrt * (&self.inputs[l + 1] - &self.z_center)));
        }
        let q = dirs.qr().q();
        let perp = DMatrix::identity(n, n) - &q * q.transpose();
        let (evals, evecs) = sorted_symmetric_eigen(&(0.5 * (&perp + perp.transpose())));
        let keep = n - k;
        for j in 0..keep {
            assert!(evals[j] > 0.5, "complement basis defective");
        }
        evecs.columns(0, keep).into_owned()
    }

    /// Square covariance factor `T` with `T T' = Sigma`, assembled from the
    /// eigenvector construction in the posterior-sampling derivation.
    pub fn cov_factor(&self) -> DMatrix<f64> {
        let m = self.state_dim;
        let n = self.opt_dim;
        let p = m * (n + 1);
        let pieces = self.dense_g_pieces();
        let (lam, _) = self.state_precision_eigen();
        let l_inv = self.l_inv();
        let (psi, _) = self.psi_and_correction();
        let l = self.l_factor();
        let data_cols = &l.transpose() * &psi;
        let breve = self.complement_basis();
        let keep = breve.ncols();
        let mut q = DMatrix::zeros(p, p);
        let mut upsilon = DVector::zeros(p);
        q.view_mut((0, 0), (p, m * self.n_data)).copy_from(&data_cols);
        for i in 0..self.n_data {
            for j in 0..m {
                upsilon[i * m + j] = self.alpha_d + pieces.mu[i] / lam[j];
            }
        }
        for j in 0..m {
            for kk in 0..keep {
                let col = m * self.n_data + j * keep + kk;
                for a in 0..n {
                    q[(m + j * n + a, col)] = breve[(a, kk)];
                }
                upsilon[col] = self.alpha_d;
            }
        }
        let scale = DMatrix::from_diagonal(&upsilon.map(|v| 1.0 / v.sqrt()));
        self.alpha_d.sqrt() * l_inv.transpose() * q * scale
    }

    /// Dense sample of the unseen-direction parameter component.
    pub fn dense_complement_sample(&self, seed: SeedSpec) -> DVector<f64> {
        let m = self.state_dim;
        let n = self.opt_dim;
        let breve = self.complement_basis();
        let w_inv_sqrt = symmetric_sqrt(&self.w_z_inv());
        let mass_z_inv = Cholesky::new(self.mass_z.clone()).unwrap().inverse();
        let w_u_inv = self.w_u_inv();
        let state_factor = symmetric_sqrt(&w_u_inv);
        let mut theta = DVector::zeros(m * (n + 1));
        for k in 0..breve.ncols() {
            let zk = breve.column(k).into_owned();
            let sk = -(self.z_center.transpose() * &w_inv_sqrt * &zk)[(0, 0)];
            let yk = &mass_z_inv * &w_inv_sqrt * &zk;
            let uk = &state_factor * standard_normal_vector(m, seed.substream(k as u64));
            for a in 0..m {
                theta[a] += sk * uk[a];
                for b in 0..n {
                    theta[m + a * n + b] += uk[a] * yk[b];
                }
            }
        }
        theta
    }

    /// The mixed second-derivative operator mapping parameter perturbations
    /// to gradient perturbations, `n x p`.
    pub fn sensitivity_b(&self) -> DMatrix<f64> {
        let m = self.state_dim;
        let n = self.opt_dim;
        let a_center = self.obs_matrix_at(&self.z_center);
        let first = &self.lofi_jac_t * &self.hess_uu * a_center;
        let grad_row = DMatrix::from_row_slice(1, m, self.grad_u.as_slice());
        let second_lin = kron(&grad_row, &self.mass_z);
        let mut second = DMatrix::zeros(n, m * (n + 1));
        second
            .view_mut((0, m), (n, m * n))
            .copy_from(&second_lin);
        first + second
    }

    /// Sensitivity image of a parameter: `-H^-1 B theta`, the optimal
    /// solution perturbation.
    pub fn dense_solution_shift(&self, theta: &DVector<f64>) -> DVector<f64> {
        let b = self.sensitivity_b();
        -Cholesky::new(self.hess.clone()).unwrap().solve(&(b * theta))
    }

    /// Rank-`r` projected inverse Hessian from the dense pencil
    /// eigendecomposition: `P H^-1` as an `n x n` matrix.
    pub fn projected_inv_hess(&self, rank: usize) -> DMatrix<f64> {
        let (rho, v) = generalized_symmetric_eigen(&self.hess, &self.w_z)
            .expect("optimization prior precision SPD by construction");
        let mut out = DMatrix::zeros(self.opt_dim, self.opt_dim);
        for j in 0..rank.min(self.opt_dim) {
            let vj = v.column(j);
            out += (&vj * vj.transpose()) / rho[j];
        }
        out
    }

    /// Max-entry relative deviations of the factorization identities.  Each
    /// entry should sit at roundoff for a correct implementation.
    pub fn identity_report(&self) -> IdentityReport {
        let rel = |got: &DMatrix<f64>, want: &DMatrix<f64>| -> f64 {
            let scale = want.amax().max(1e-300);
            (got - want).amax() / scale
        };
        let w_theta = self.w_theta();
        let l = self.l_factor();
        let l_inv = self.l_inv();
        let p = self.param_dim();
        let refactor = rel(&(&l * l.transpose()), &w_theta);
        let roundtrip = rel(&(&l * &l_inv), &DMatrix::identity(p, p));

        let w_theta_inv = &l_inv.transpose() * &l_inv;
        let a = self.obs_stack();
        let block_mass = kron(&DMatrix::identity(self.n_data, self.n_data), &self.mass_u);
        let lhs = &a * &w_theta_inv * a.transpose() * &block_mass;
        let pieces = self.dense_g_pieces();
        let rhs = kron(&pieces.g, &(self.w_u_inv() * &self.mass_u));
        let data_gram = rel(&lhs, &rhs);

        let (_, sigma) = self.dense_posterior();
        let (psi, corr) = self.psi_and_correction();
        let woodbury = rel(
            &(&w_theta_inv - &psi * DMatrix::from_diagonal(&corr) * psi.transpose()),
            &sigma,
        );

        let t = self.cov_factor();
        let factor = rel(&(&t * t.transpose()), &sigma);

        let a_center = self.obs_matrix_at(&self.z_center);
        let center_row = rel(
            &(&a_center * &w_theta_inv * a_center.transpose()),
            &self.w_u_inv(),
        );

        IdentityReport {
            prior_refactor: refactor,
            factor_roundtrip: roundtrip,
            data_gram_kron: data_gram,
            posterior_woodbury: woodbury,
            covariance_factor: factor,
            center_marginal: center_row,
        }
    }
}

/// [`crate::optim::Linearization`] view of a dense instance, exposing its
/// matrices through the operator interface the structured code consumes.
pub struct OracleLinearization<'a> {
    pub inst: &'a DenseInstance,
    zero_grad: DVector<f64>,
}

impl<'a> OracleLinearization<'a> {
    pub fn new(inst: &'a DenseInstance) -> Self {
        Self {
            inst,
            zero_grad: DVector::zeros(inst.opt_dim),
        }
    }
}

impl crate::optim::Linearization for OracleLinearization<'_> {
    fn opt_dim(&self) -> usize {
        self.inst.opt_dim
    }
    fn state_dim(&self) -> usize {
        self.inst.state_dim
    }
    fn objective(&self) -> f64 {
        0.0
    }
    fn gradient(&self) -> &DVector<f64> {
        // The instance represents a converged optimum.
        &self.zero_grad
    }
    fn hessian_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.inst.hess * v
    }
    fn solution_jac_adjoint(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.inst.lofi_jac_t * w
    }
    fn objective_uu_apply(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.inst.hess_uu * w
    }
    fn objective_u_grad(&self) -> &DVector<f64> {
        &self.inst.grad_u
    }
}

/// Dense spectral pieces of the direction-weighting matrix.
pub struct DenseGPieces {
    pub g: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub gvecs: DMatrix<f64>,
    pub y: Vec<DVector<f64>>,
    pub s: Vec<f64>,
}

/// Max-entry relative deviations of the dense factorization identities.
#[derive(Debug, Clone, Copy)]
pub struct IdentityReport {
    /// `L L' = W_theta`.
    pub prior_refactor: f64,
    /// `L L^-1 = I`.
    pub factor_roundtrip: f64,
    /// `A W_theta^-1 A' (I (x) M_u) = G (x) W_u^-1 M_u`.
    pub data_gram_kron: f64,
    /// `Sigma = W_theta^-1 - Psi D Psi'`.
    pub posterior_woodbury: f64,
    /// `T T' = Sigma`.
    pub covariance_factor: f64,
    /// `A(center) W_theta^-1 A(center)' = W_u^-1`.
    pub center_marginal: f64,
}

impl IdentityReport {
    pub fn max(&self) -> f64 {
        self.prior_refactor
            .max(self.factor_roundtrip)
            .max(self.data_gram_kron)
            .max(self.posterior_woodbury)
            .max(self.covariance_factor)
            .max(self.center_marginal)
    }
}
