//! Bayesian calibration of an affine state discrepancy from a few paired
//! model evaluations.
//!
//! The discrepancy at input `z` is `delta(z, theta) = theta_0 + Theta M_z z`
//! with a Gaussian prior coupling the constant and linear blocks so that
//! `delta(z_opt, theta) ~ N(0, W_u^-1)` at the low-fidelity optimum `z_opt`.
//! Conditioning on `N` observed discrepancies collapses, thanks to the
//! Kronecker structure of the prior, to `N` eigenpairs of a small
//! direction-weighting matrix plus `O(N^2)` shifted elliptic solves; the
//! posterior is handled entirely through sums of rank-one Kronecker terms
//! `(a u; u (x) w)` and never materialized on the product space.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::CalibrationError;
use crate::linalg::sorted_symmetric_eigen;
use crate::prior::{OptPrior, StatePrior};
use crate::rng::SeedSpec;

/// Paired training set: inputs `z_1..z_N` (first equals the low-fidelity
/// optimum) and observed discrepancies `d_l = S(z_l) - S_lofi(z_l)`.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub z_center: DVector<f64>,
    pub inputs: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
}

impl TrainingData {
    pub fn new(
        z_center: DVector<f64>,
        inputs: Vec<DVector<f64>>,
        outputs: Vec<DVector<f64>>,
    ) -> Result<Self, CalibrationError> {
        if inputs.is_empty() {
            return Err(CalibrationError::Empty);
        }
        if inputs.len() != outputs.len() {
            return Err(CalibrationError::Shape(format!(
                "{} inputs vs {} outputs",
                inputs.len(),
                outputs.len()
            )));
        }
        let n = z_center.len();
        if inputs.iter().any(|z| z.len() != n) {
            return Err(CalibrationError::Shape(
                "input length differs from center".into(),
            ));
        }
        let m = outputs[0].len();
        if outputs.iter().any(|d| d.len() != m) {
            return Err(CalibrationError::Shape(
                "outputs have inconsistent lengths".into(),
            ));
        }
        let mismatch = (&inputs[0] - &z_center).norm();
        if mismatch != 0.0 {
            return Err(CalibrationError::FirstInputNotCenter(mismatch));
        }
        // Linear independence of the raw inputs, with the offending column
        // named.  Plain Gram-Schmidt is plenty at N <= 10.
        let mut basis: Vec<DVector<f64>> = Vec::new();
        for (l, z) in inputs.iter().enumerate() {
            let mut v = z.clone();
            let orig = v.norm();
            for _ in 0..2 {
                for q in &basis {
                    let c = q.dot(&v);
                    v.axpy(-c, q, 1.0);
                }
            }
            if v.norm() <= 1e-12 * orig.max(f64::MIN_POSITIVE) {
                return Err(CalibrationError::DependentInput { index: l });
            }
            basis.push(v.normalize());
        }
        Ok(Self {
            z_center,
            inputs,
            outputs,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.outputs[0].len()
    }

    pub fn opt_dim(&self) -> usize {
        self.z_center.len()
    }

    /// Centered input `z_l - z_center` (zero for `l = 0`).
    pub fn centered(&self, l: usize) -> DVector<f64> {
        &self.inputs[l] - &self.z_center
    }
}

/// Eigenpairs of the direction-weighting matrix
/// `G = e e' + Zc' W_z^-1 Zc` (`Zc` = centered inputs) together with the
/// derived per-direction vectors used throughout the posterior formulas.
pub struct GSpectrum {
    /// Eigenvalues, descending; all strictly positive for admissible data.
    pub eigvals: DVector<f64>,
    /// Eigenvector matrix, one column per direction.
    pub coeffs: DMatrix<f64>,
    /// `e' g_i`.
    pub e_dot_g: Vec<f64>,
    /// `y_i = Z g_i - (e' g_i) z_center`, in the z space.
    pub y: Vec<DVector<f64>>,
    /// Cached `W_z^-1 y_i`.
    pub wz_inv_y: Vec<DVector<f64>>,
    /// `s_i = e' g_i - y_i' W_z^-1 z_center`.
    pub s: Vec<f64>,
}

pub fn g_spectrum(
    data: &TrainingData,
    opt_prior: &OptPrior,
) -> Result<GSpectrum, CalibrationError> {
    let n_data = data.len();
    let centered: Vec<DVector<f64>> = (0..n_data).map(|l| data.centered(l)).collect();
    let wz_inv_centered: Vec<DVector<f64>> = centered
        .iter()
        .map(|zc| opt_prior.apply_precision_inv(zc))
        .collect();
    let mut g = DMatrix::from_element(n_data, n_data, 1.0);
    for l in 0..n_data {
        for k in 0..n_data {
            g[(l, k)] += centered[l].dot(&wz_inv_centered[k]);
        }
    }
    let g = 0.5 * (&g + g.transpose());
    let (eigvals, coeffs) = sorted_symmetric_eigen(&g);
    if eigvals[n_data - 1] <= 1e-14 * eigvals[0].max(f64::MIN_POSITIVE) {
        return Err(CalibrationError::SingularWeighting(eigvals[n_data - 1]));
    }
    let mut e_dot_g = Vec::with_capacity(n_data);
    let mut y = Vec::with_capacity(n_data);
    let mut wz_inv_y = Vec::with_capacity(n_data);
    let mut s = Vec::with_capacity(n_data);
    let wz_inv_center = opt_prior.apply_precision_inv(&data.z_center);
    for i in 0..n_data {
        let gi = coeffs.column(i);
        let edg: f64 = gi.sum();
        // Z g - (e'g) center = sum_l g_l (z_l - center).
        let mut yi = DVector::zeros(data.opt_dim());
        let mut wyi = DVector::zeros(data.opt_dim());
        for l in 0..n_data {
            yi.axpy(gi[l], &centered[l], 1.0);
            wyi.axpy(gi[l], &wz_inv_centered[l], 1.0);
        }
        s.push(edg - yi.dot(&wz_inv_center));
        e_dot_g.push(edg);
        y.push(yi);
        wz_inv_y.push(wyi);
    }
    Ok(GSpectrum {
        eigvals,
        coeffs,
        e_dot_g,
        y,
        wz_inv_y,
        s,
    })
}

/// Which posterior component a structured parameter came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaOrigin {
    /// Posterior mean.
    Mean,
    /// Zero-mean fluctuation inside the data-informed directions.
    DataDirections,
    /// Zero-mean fluctuation in the directions the data never probed.
    Complement,
}

/// One rank-one Kronecker term `(offset * state ; state (x) weight)` of a
/// discrepancy parameter.  Its discrepancy at input `z` is
/// `(offset + weight' M_z z) * state`.
#[derive(Debug, Clone)]
pub struct KronTerm {
    pub offset: f64,
    pub state: DVector<f64>,
    pub weight: DVector<f64>,
}

/// A discrepancy parameter stored as a short sum of Kronecker terms; the
/// full product space (dimension `state * (opt + 1)`) is never formed.
#[derive(Debug, Clone)]
pub struct ThetaStructured {
    pub origin: ThetaOrigin,
    pub terms: Vec<KronTerm>,
}

impl ThetaStructured {
    /// Evaluate the discrepancy `delta(z, theta)`.
    pub fn eval_delta(&self, opt_prior: &OptPrior, z: &DVector<f64>) -> DVector<f64> {
        let mz = opt_prior.mass() * z;
        let m = self.terms.first().map_or(0, |t| t.state.len());
        let mut out = DVector::zeros(m);
        for t in &self.terms {
            out.axpy(t.offset + t.weight.dot(&mz), &t.state, 1.0);
        }
        out
    }

    /// Materialize on the product space (cross-check use only), ordered as
    /// `[constant block ; state (x) weight blocks]`.
    pub fn densify(&self, opt_dim: usize) -> DVector<f64> {
        let m = self.terms.first().map_or(0, |t| t.state.len());
        let mut out = DVector::zeros(m * (opt_dim + 1));
        for t in &self.terms {
            assert_eq!(t.weight.len(), opt_dim);
            for i in 0..m {
                out[i] += t.offset * t.state[i];
                for k in 0..opt_dim {
                    out[m + i * opt_dim + k] += t.state[i] * t.weight[k];
                }
            }
        }
        out
    }

    /// Concatenate term lists (the represented parameters add).
    pub fn concat(mut self, other: ThetaStructured) -> ThetaStructured {
        self.terms.extend(other.terms);
        self
    }
}

/// The calibrated discrepancy posterior: spectrum of the direction
/// weighting, per-datum smoothed states, and the coefficients of the
/// structured mean, plus everything needed to sample the two zero-mean
/// fluctuation components.
pub struct Calibration<'a> {
    pub data: &'a TrainingData,
    pub state_prior: &'a StatePrior,
    pub opt_prior: &'a OptPrior,
    pub alpha_d: f64,
    pub spectrum: GSpectrum,
    /// `u_l = W_u^-1 M_u d_l`.
    pub u_data: Vec<DVector<f64>>,
    /// `u_shift[i][l] = (alpha_d W_u + mu_i M_u)^-1 M_u u_l`.
    pub u_shift: Vec<Vec<DVector<f64>>>,
    /// `a_l = 1 - z_center' W_z^-1 (z_l - z_center)`.
    pub a: Vec<f64>,
    /// `b[(i, l)] = (z_l - z_center)' W_z^-1 Z g_i + (e'g_i) a_l`.
    pub b: DMatrix<f64>,
    /// `M_z^-1 W_z^-1 (z_l - z_center)`.
    pub w_data: Vec<DVector<f64>>,
    /// `M_z^-1 W_z^-1 y_i`.
    pub w_dir: Vec<DVector<f64>>,
    /// Cached `W_z^-1 (z_l - z_center)` for `l >= 1`.
    wz_inv_centered_tail: Vec<DVector<f64>>,
    /// Cholesky of the small Gram `Zc' W_z^-1 Zc` over `l >= 1`.
    centered_gram_chol: Option<Cholesky<f64, Dyn>>,
}

/// Run the calibration.  Cost: `N` precision-inverse applies, `N^2` shifted
/// solves, one small symmetric eigensolve.
pub fn calibrate<'a>(
    data: &'a TrainingData,
    state_prior: &'a StatePrior,
    opt_prior: &'a OptPrior,
    alpha_d: f64,
) -> Result<Calibration<'a>, CalibrationError> {
    if data.state_dim() != state_prior.state_dim() {
        return Err(CalibrationError::Shape(format!(
            "state dim {} vs prior dim {}",
            data.state_dim(),
            state_prior.state_dim()
        )));
    }
    if data.opt_dim() != opt_prior.dim() {
        return Err(CalibrationError::Shape(format!(
            "opt dim {} vs prior dim {}",
            data.opt_dim(),
            opt_prior.dim()
        )));
    }
    if !(alpha_d > 0.0) {
        return Err(CalibrationError::Shape(format!(
            "noise precision weight must be positive, got {alpha_d}"
        )));
    }
    let n_data = data.len();
    let spectrum = g_spectrum(data, opt_prior)?;

    let u_data: Vec<DVector<f64>> = data
        .outputs
        .iter()
        .map(|d| state_prior.apply_precision_inv(&(&state_prior.mass * d)))
        .collect();
    let u_shift: Vec<Vec<DVector<f64>>> = (0..n_data)
        .map(|i| {
            u_data
                .iter()
                .map(|ul| {
                    state_prior.apply_shifted_inv(
                        alpha_d,
                        spectrum.eigvals[i],
                        &(&state_prior.mass * ul),
                    )
                })
                .collect()
        })
        .collect();

    let centered: Vec<DVector<f64>> = (0..n_data).map(|l| data.centered(l)).collect();
    let wz_inv_centered: Vec<DVector<f64>> = centered
        .iter()
        .map(|zc| opt_prior.apply_precision_inv(zc))
        .collect();
    let wz_inv_center = opt_prior.apply_precision_inv(&data.z_center);
    let a: Vec<f64> = centered
        .iter()
        .map(|zc| 1.0 - zc.dot(&wz_inv_center))
        .collect();
    let mut b = DMatrix::zeros(n_data, n_data);
    for i in 0..n_data {
        for l in 0..n_data {
            // Algebraically (z_l-c)' W^-1 Z g_i + (e'g_i) a_l with the
            // center terms cancelled exactly.
            b[(i, l)] = spectrum.e_dot_g[i] + centered[l].dot(&spectrum.wz_inv_y[i]);
        }
    }
    let w_data: Vec<DVector<f64>> = wz_inv_centered
        .iter()
        .map(|w| opt_prior.mass_solve(w))
        .collect();
    let w_dir: Vec<DVector<f64>> = spectrum
        .wz_inv_y
        .iter()
        .map(|w| opt_prior.mass_solve(w))
        .collect();

    let wz_inv_centered_tail: Vec<DVector<f64>> = wz_inv_centered[1..].to_vec();
    let centered_gram_chol = if n_data > 1 {
        let k = n_data - 1;
        let mut gram = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                gram[(i, j)] = centered[i + 1].dot(&wz_inv_centered_tail[j]);
            }
        }
        let gram = 0.5 * (&gram + gram.transpose());
        Some(Cholesky::new(gram).ok_or_else(|| {
            CalibrationError::SingularWeighting(0.0)
        })?)
    } else {
        None
    };

    Ok(Calibration {
        data,
        state_prior,
        opt_prior,
        alpha_d,
        spectrum,
        u_data,
        u_shift,
        a,
        b,
        w_data,
        w_dir,
        wz_inv_centered_tail,
        centered_gram_chol,
    })
}

impl<'a> Calibration<'a> {
    pub fn n_data(&self) -> usize {
        self.data.len()
    }

    /// Structured posterior mean: `2N` Kronecker terms.
    pub fn posterior_mean(&self) -> ThetaStructured {
        let n_data = self.n_data();
        let inv_ad = 1.0 / self.alpha_d;
        let mut terms = Vec::with_capacity(2 * n_data);
        for l in 0..n_data {
            terms.push(KronTerm {
                offset: self.a[l],
                state: inv_ad * &self.u_data[l],
                weight: self.w_data[l].clone(),
            });
        }
        for i in 0..n_data {
            let mut state = DVector::zeros(self.data.state_dim());
            for l in 0..n_data {
                state.axpy(-inv_ad * self.b[(i, l)], &self.u_shift[i][l], 1.0);
            }
            terms.push(KronTerm {
                offset: self.spectrum.s[i],
                state,
                weight: self.w_dir[i].clone(),
            });
        }
        ThetaStructured {
            origin: ThetaOrigin::Mean,
            terms,
        }
    }

    /// Zero-mean fluctuation in the data-informed directions: `N` Kronecker
    /// terms, one shifted-prior draw each.
    pub fn sample_fluctuation(&self, seed: SeedSpec) -> ThetaStructured {
        let n_data = self.n_data();
        let root_ad = self.alpha_d.sqrt();
        let mut terms = Vec::with_capacity(n_data);
        for i in 0..n_data {
            let mu = self.spectrum.eigvals[i];
            let u_hat = self
                .state_prior
                .sample_shifted(self.alpha_d, mu, seed.substream(i as u64));
            terms.push(KronTerm {
                offset: self.spectrum.s[i],
                state: (root_ad / mu.sqrt()) * u_hat,
                weight: self.w_dir[i].clone(),
            });
        }
        ThetaStructured {
            origin: ThetaOrigin::DataDirections,
            terms,
        }
    }

    /// Residual of projecting `zeta` onto the span of the centered inputs in
    /// the `W_z^-1` inner product, and the squared distance.
    fn complement_residual(&self, zeta: &DVector<f64>) -> (DVector<f64>, f64) {
        let wz_inv_zeta = self.opt_prior.apply_precision_inv(zeta);
        match &self.centered_gram_chol {
            None => {
                let dist2 = zeta.dot(&wz_inv_zeta);
                (zeta.clone(), dist2.max(0.0))
            }
            Some(chol) => {
                let k = self.wz_inv_centered_tail.len();
                let rhs = DVector::from_fn(k, |j, _| self.wz_inv_centered_tail[j].dot(zeta));
                let coef = chol.solve(&rhs);
                let mut resid = zeta.clone();
                for j in 0..k {
                    resid.axpy(-coef[j], &self.data.centered(j + 1), 1.0);
                }
                // Distance through the residual vector: no catastrophic
                // cancellation when zeta lies in the span.
                let wz_inv_resid = self.opt_prior.apply_precision_inv(&resid);
                let dist2 = wz_inv_resid.dot(&resid).max(0.0);
                (resid, dist2)
            }
        }
    }

    /// Pointwise scale of the unprobed-direction discrepancy fluctuation:
    /// the `W_z^-1` distance from `z` to `z_center + span(centered inputs)`.
    pub fn complement_scale(&self, z: &DVector<f64>) -> f64 {
        let zeta = z - &self.data.z_center;
        if zeta.norm() == 0.0 {
            return 0.0;
        }
        self.complement_residual(&zeta).1.sqrt()
    }

    /// Draw the unprobed-direction discrepancy fluctuation at `z`: a prior
    /// state draw scaled by [`Self::complement_scale`].  Exactly zero at
    /// every training input.
    pub fn sample_complement_delta(&self, z: &DVector<f64>, seed: SeedSpec) -> DVector<f64> {
        let scale = self.complement_scale(z);
        let nu = self.state_prior.sample(seed);
        scale * nu
    }

    /// Unprobed-direction fluctuation in explicit Kronecker form: one term
    /// per unprobed direction (`opt_dim - N + 1` of them), each carrying an
    /// independent prior state draw.  The discrepancy it represents vanishes
    /// at every training input.  Cross-check use only: the spanning set is
    /// dense in the optimization dimension, so the matrix-free pipeline
    /// samples the sensitivity image of this component directly instead.
    pub fn sample_complement_theta(&self, seed: SeedSpec) -> ThetaStructured {
        let n = self.data.opt_dim();
        let tail = self.wz_inv_centered_tail.len();
        let keep = n - tail;
        // Plain-orthonormal basis of the span of the centered inputs.
        let mut span_q: Vec<DVector<f64>> = Vec::with_capacity(tail);
        for l in 0..tail {
            let mut q = self.data.centered(l + 1);
            for _ in 0..2 {
                for p in &span_q {
                    let c = p.dot(&q);
                    q.axpy(-c, p, 1.0);
                }
            }
            span_q.push(q.normalize());
        }
        // `W_z`-orthonormal basis of the orthogonal complement of that span.
        // Plain orthogonality to the centered inputs is the same constraint
        // as `W_z`-orthogonality to the data-informed directions `W_z^-1 Zc`,
        // and the represented Gaussian does not depend on the basis choice
        // because the state draws are independent and identically distributed.
        let mut basis: Vec<(DVector<f64>, DVector<f64>)> = Vec::with_capacity(keep);
        for j in 0..n {
            if basis.len() == keep {
                break;
            }
            let mut x = DVector::zeros(n);
            x[j] = 1.0;
            for q in &span_q {
                let c = q.dot(&x);
                x.axpy(-c, q, 1.0);
            }
            if x.norm() <= 1e-10 {
                continue;
            }
            for _ in 0..2 {
                for (b, wb) in &basis {
                    let c = wb.dot(&x);
                    x.axpy(-c, b, 1.0);
                }
            }
            let wx = self.opt_prior.apply_precision(&x);
            let norm = wx.dot(&x).max(0.0).sqrt();
            if norm == 0.0 {
                continue;
            }
            basis.push((x / norm, wx / norm));
        }
        assert_eq!(
            basis.len(),
            keep,
            "unprobed-direction basis construction fell short"
        );
        let terms = basis
            .into_iter()
            .enumerate()
            .map(|(k, (x, _))| KronTerm {
                offset: -self.data.z_center.dot(&x),
                state: self.state_prior.sample(seed.substream(k as u64)),
                weight: self.opt_prior.mass_solve(&x),
            })
            .collect();
        ThetaStructured {
            origin: ThetaOrigin::Complement,
            terms,
        }
    }

    /// Remove from `v` its component along `W_z^-1 Zc`: the projector that
    /// appears in the sensitivity image of the unprobed directions.
    /// Idempotent; the identity when `N = 1`.
    pub fn complement_project(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.centered_gram_chol {
            None => v.clone(),
            Some(chol) => {
                let k = self.wz_inv_centered_tail.len();
                let rhs = DVector::from_fn(k, |j, _| self.data.centered(j + 1).dot(v));
                let coef = chol.solve(&rhs);
                let mut out = v.clone();
                for j in 0..k {
                    out.axpy(-coef[j], &self.wz_inv_centered_tail[j], 1.0);
                }
                out
            }
        }
    }

    /// Norms of the mean data-fit residuals `delta_mean(z_l) - d_l`, in the
    /// `M_u` norm, for reporting.
    pub fn mean_fit_residuals(&self, mean: &ThetaStructured) -> Vec<f64> {
        (0..self.n_data())
            .map(|l| {
                let fit = mean.eval_delta(self.opt_prior, &self.data.inputs[l]);
                let r = &fit - &self.data.outputs[l];
                (r.transpose() * &self.state_prior.mass * &r)[(0, 0)].sqrt()
            })
            .collect()
    }
}
