//! Gaussian priors built from Laplacian-like elliptic operators.
//!
//! The state-discrepancy prior has precision `W_u = (1/alpha_u) E M^-1 E`
//! with `E = beta K + M`; the optimization-variable prior is either the same
//! construction on the z mesh or, for parametric inputs, a scaled Gram
//! matrix of the source basis.  Everything downstream needs `W^-1`-applies,
//! shifted solves `(alpha_d W_u + mu M_u)^-1`, and samples — all of which
//! come from a truncated generalized decomposition `E^-1 ~ V Pi V'` with
//! `V' M V = I`, so `W` itself is never assembled.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{ConfigError, SolveError};
use crate::fem::FemMatrices;
use crate::linalg::{b_orthonormalize, generalized_symmetric_eigen, sorted_symmetric_eigen};
use crate::rng::{standard_normal_vector, SeedSpec};

/// `E = beta K + M` with cached factorizations of `E` and `M`.
pub struct EllipticOperator {
    pub beta: f64,
    pub matrix: DMatrix<f64>,
    pub mass: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    mass_chol: Cholesky<f64, Dyn>,
}

impl EllipticOperator {
    pub fn new(fem: &FemMatrices, beta: f64) -> Result<Self, SolveError> {
        if beta < 0.0 {
            return Err(SolveError::Factorization(format!(
                "correlation weight must be non-negative, got {beta}"
            )));
        }
        let matrix = &fem.mass + beta * &fem.stiff;
        let chol = Cholesky::new(matrix.clone())
            .ok_or_else(|| SolveError::Factorization("elliptic operator not SPD".into()))?;
        let mass_chol = Cholesky::new(fem.mass.clone())
            .ok_or_else(|| SolveError::Factorization("mass matrix not SPD".into()))?;
        Ok(Self {
            beta,
            matrix,
            mass: fem.mass.clone(),
            chol,
            mass_chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mass.nrows()
    }

    pub fn solve(&self, x: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(x)
    }

    pub fn solve_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(x)
    }

    pub fn mass_solve(&self, x: &DVector<f64>) -> DVector<f64> {
        self.mass_chol.solve(x)
    }

    /// Lower Cholesky factor of the mass matrix (for whitening draws).
    pub fn mass_chol_lower(&self) -> DMatrix<f64> {
        self.mass_chol.l().into()
    }
}

/// Truncated generalized decomposition `E^-1 ~ V diag(gains) V'` with
/// `V' M V = I`, computed by a randomized range sketch of `E^-1 M` followed
/// by a Galerkin (Rayleigh-Ritz) projection in the `M` inner product.
///
/// `rank_keep + oversample` probe vectors are used; the extra `oversample`
/// columns only stabilize the subspace and are discarded.
pub fn truncated_gsvd(
    op: &EllipticOperator,
    rank_keep: usize,
    oversample: usize,
    seed: SeedSpec,
) -> Result<(DMatrix<f64>, DVector<f64>), SolveError> {
    let m = op.dim();
    if rank_keep == 0 {
        return Err(SolveError::Dimension {
            expected: 1,
            got: 0,
        });
    }
    let l = (rank_keep + oversample).min(m);
    let mut omega = DMatrix::zeros(m, l);
    for j in 0..l {
        omega.set_column(j, &standard_normal_vector(m, seed.substream(j as u64)));
    }
    // Range sketch of Op = E^-1 M, which is self-adjoint in the M inner
    // product; a second pass through the operator gives the exact Galerkin
    // projection onto the sketched range.
    let y1 = op.solve_mat(&(&op.mass * omega));
    let (q1, mq1) = b_orthonormalize(&y1, |v| &op.mass * v, 2, 1e-12);
    let y2 = op.solve_mat(&(&op.mass * &q1));
    let t_raw = mq1.transpose() * y2;
    let t = 0.5 * (&t_raw + t_raw.transpose());
    let (vals, s) = sorted_symmetric_eigen(&t);
    let keep = rank_keep.min(q1.ncols());
    for j in 0..keep {
        if vals[j] <= 0.0 {
            return Err(SolveError::Indefinite(format!(
                "Ritz value {} of the elliptic resolvent is {:.3e}",
                j, vals[j]
            )));
        }
    }
    let v = &q1 * s.columns(0, keep);
    Ok((v.into_owned(), vals.rows(0, keep).into_owned()))
}

/// Pick the smallest rank whose trailing gain ratio `pi_{q+1}/pi_1` drops
/// below `tol`, by probing a full decomposition cheaply at desk scale.
pub fn default_state_rank(op: &EllipticOperator, tol: f64, seed: SeedSpec) -> Result<usize, SolveError> {
    let m = op.dim();
    let (_, gains) = truncated_gsvd(op, m, 0, seed)?;
    let lead = gains[0];
    for j in 1..m {
        if gains[j] / lead < tol {
            return Ok(j);
        }
    }
    Ok(m)
}

/// Factorized prior `N(0, W_u^-1)` on the state-discrepancy space.
pub struct StatePrior {
    pub alpha: f64,
    /// `M`-orthonormal modes, strongest first.
    pub modes: DMatrix<f64>,
    /// Generalized gains of `E^-1` along the modes.
    pub gains: DVector<f64>,
    pub mass: DMatrix<f64>,
}

impl StatePrior {
    pub fn from_elliptic(
        alpha: f64,
        op: &EllipticOperator,
        rank_keep: usize,
        oversample: usize,
        seed: SeedSpec,
    ) -> Result<Self, ConfigError> {
        if alpha <= 0.0 {
            return Err(ConfigError::NonPositive {
                name: "alpha_u",
                value: alpha,
            });
        }
        let (modes, gains) = truncated_gsvd(op, rank_keep, oversample, seed)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Self {
            alpha,
            modes,
            gains,
            mass: op.mass.clone(),
        })
    }

    /// Exact factors from a dense precision matrix: solves the generalized
    /// problem `W_u x = lambda M_u x` and converts eigenvalues to gains.
    /// Intended for small cross-check instances.
    pub fn from_dense_precision(
        alpha: f64,
        w_u: &DMatrix<f64>,
        m_u: &DMatrix<f64>,
    ) -> Result<Self, SolveError> {
        let (mut vals, x) = generalized_symmetric_eigen(w_u, m_u)?;
        // Ascending precision = descending gain.
        let n = vals.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        let modes = DMatrix::from_fn(n, n, |i, j| x[(i, order[j])]);
        vals = DVector::from_fn(n, |i, _| vals[order[i]]);
        for j in 0..n {
            if vals[j] <= 0.0 {
                return Err(SolveError::Indefinite(format!(
                    "precision eigenvalue {:.3e}",
                    vals[j]
                )));
            }
        }
        let gains = DVector::from_fn(n, |i, _| 1.0 / (alpha * vals[i]).sqrt());
        Ok(Self {
            alpha,
            modes,
            gains,
            mass: m_u.clone(),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.modes.nrows()
    }

    pub fn rank(&self) -> usize {
        self.modes.ncols()
    }

    /// `W_u^-1 x = alpha V Pi^2 V' x`.
    pub fn apply_precision_inv(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut c = self.modes.transpose() * x;
        for j in 0..c.len() {
            c[j] *= self.alpha * self.gains[j] * self.gains[j];
        }
        &self.modes * c
    }

    /// `W_u x` -- meaningful only at full rank; used by dense cross-checks.
    pub fn apply_precision(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut c = self.modes.transpose() * (&self.mass * x);
        for j in 0..c.len() {
            c[j] /= self.alpha * self.gains[j] * self.gains[j];
        }
        &self.mass * (&self.modes * c)
    }

    /// `(alpha_d W_u + mu M_u)^-1 x` through the factored form.
    pub fn apply_shifted_inv(&self, alpha_d: f64, mu: f64, x: &DVector<f64>) -> DVector<f64> {
        let mut c = self.modes.transpose() * x;
        for j in 0..c.len() {
            let pi2 = self.gains[j] * self.gains[j];
            c[j] *= self.alpha * pi2 / (alpha_d + self.alpha * mu * pi2);
        }
        &self.modes * c
    }

    /// Draw from `N(0, W_u^-1)`.
    pub fn sample(&self, seed: SeedSpec) -> DVector<f64> {
        let omega = standard_normal_vector(self.rank(), seed);
        let mut c = omega;
        for j in 0..c.len() {
            c[j] *= self.alpha.sqrt() * self.gains[j];
        }
        &self.modes * c
    }

    /// Draw from `N(0, (alpha_d W_u + mu M_u)^-1)`.
    pub fn sample_shifted(&self, alpha_d: f64, mu: f64, seed: SeedSpec) -> DVector<f64> {
        let omega = standard_normal_vector(self.rank(), seed);
        let mut c = omega;
        for j in 0..c.len() {
            let pi2 = self.gains[j] * self.gains[j];
            c[j] *= (self.alpha * pi2 / (alpha_d + self.alpha * mu * pi2)).sqrt();
        }
        &self.modes * c
    }
}

/// Prior on the optimization variable: precision `W_z`, exposed through
/// `W_z`-applies, `W_z^-1`-applies, mass applies, and sampling.
pub enum OptPrior {
    /// `W_z = (1/alpha) E M^-1 E` on a mesh (function-valued controls).
    FunctionSpace { alpha: f64, op: EllipticOperator },
    /// `W_z = (1/alpha) G` for a fixed SPD Gram matrix `G`, which doubles as
    /// the inner-product (mass) matrix of the parameter space.
    Parametric {
        alpha: f64,
        gram: DMatrix<f64>,
        chol: Cholesky<f64, Dyn>,
    },
    /// Arbitrary SPD inner-product and precision matrices given explicitly.
    Dense {
        mass: DMatrix<f64>,
        mass_chol: Cholesky<f64, Dyn>,
        precision: DMatrix<f64>,
        precision_chol: Cholesky<f64, Dyn>,
    },
}

impl OptPrior {
    pub fn function_space(alpha: f64, op: EllipticOperator) -> Result<Self, ConfigError> {
        if alpha <= 0.0 {
            return Err(ConfigError::NonPositive {
                name: "alpha_z",
                value: alpha,
            });
        }
        Ok(OptPrior::FunctionSpace { alpha, op })
    }

    pub fn parametric(alpha: f64, gram: DMatrix<f64>) -> Result<Self, ConfigError> {
        if alpha <= 0.0 {
            return Err(ConfigError::NonPositive {
                name: "alpha_z",
                value: alpha,
            });
        }
        let chol = Cholesky::new(gram.clone())
            .ok_or_else(|| ConfigError::Invalid("parameter Gram matrix not SPD".into()))?;
        Ok(OptPrior::Parametric { alpha, gram, chol })
    }

    /// Wrap an explicit SPD inner-product / precision matrix pair.
    pub fn from_dense(mass: DMatrix<f64>, precision: DMatrix<f64>) -> Result<Self, ConfigError> {
        let mass_chol = Cholesky::new(mass.clone())
            .ok_or_else(|| ConfigError::Invalid("inner-product matrix not SPD".into()))?;
        let precision_chol = Cholesky::new(precision.clone())
            .ok_or_else(|| ConfigError::Invalid("precision matrix not SPD".into()))?;
        Ok(OptPrior::Dense {
            mass,
            mass_chol,
            precision,
            precision_chol,
        })
    }

    /// Build the parametric variant from source-basis nodal values: the Gram
    /// matrix is `Phi' M Phi`, the L2 inner product of the basis fields.
    pub fn from_basis(
        alpha: f64,
        basis: &DMatrix<f64>,
        mesh_mass: &DMatrix<f64>,
    ) -> Result<Self, ConfigError> {
        let gram = basis.transpose() * mesh_mass * basis;
        Self::parametric(alpha, 0.5 * (&gram + gram.transpose()))
    }

    pub fn dim(&self) -> usize {
        match self {
            OptPrior::FunctionSpace { op, .. } => op.dim(),
            OptPrior::Parametric { gram, .. } => gram.nrows(),
            OptPrior::Dense { mass, .. } => mass.nrows(),
        }
    }

    /// The inner-product matrix of the z space.
    pub fn mass(&self) -> &DMatrix<f64> {
        match self {
            OptPrior::FunctionSpace { op, .. } => &op.mass,
            OptPrior::Parametric { gram, .. } => gram,
            OptPrior::Dense { mass, .. } => mass,
        }
    }

    pub fn mass_solve(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            OptPrior::FunctionSpace { op, .. } => op.mass_solve(x),
            OptPrior::Parametric { chol, .. } => chol.solve(x),
            OptPrior::Dense { mass_chol, .. } => mass_chol.solve(x),
        }
    }

    pub fn apply_precision(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            OptPrior::FunctionSpace { alpha, op } => {
                (&op.matrix * op.mass_solve(&(&op.matrix * x))) / *alpha
            }
            OptPrior::Parametric { alpha, gram, .. } => (gram * x) / *alpha,
            OptPrior::Dense { precision, .. } => precision * x,
        }
    }

    pub fn apply_precision_inv(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            OptPrior::FunctionSpace { alpha, op } => {
                *alpha * op.solve(&(&op.mass * op.solve(x)))
            }
            OptPrior::Parametric { alpha, chol, .. } => *alpha * chol.solve(x),
            OptPrior::Dense { precision_chol, .. } => precision_chol.solve(x),
        }
    }

    /// Draw from `N(0, W_z^-1)`.
    pub fn sample(&self, seed: SeedSpec) -> DVector<f64> {
        let omega = standard_normal_vector(self.dim(), seed);
        match self {
            OptPrior::FunctionSpace { alpha, op } => {
                alpha.sqrt() * op.solve(&(op.mass_chol_lower() * omega))
            }
            OptPrior::Parametric { alpha, chol, .. } => {
                let mut s = omega;
                chol.l()
                    .transpose()
                    .solve_upper_triangular_mut(&mut s);
                alpha.sqrt() * s
            }
            OptPrior::Dense { precision_chol, .. } => {
                let mut s = omega;
                precision_chol
                    .l()
                    .transpose()
                    .solve_upper_triangular_mut(&mut s);
                s
            }
        }
    }
}
