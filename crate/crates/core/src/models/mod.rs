//! The three benchmark model pairs: a 1D diffusion-reaction equation, a
//! two-mass spring system, and a 2D advection-diffusion equation.
//!
//! Each file provides a high/low fidelity [`ForwardModel`] pair over the
//! same discrete state space, plus a [`LofiProblem`] wiring the objective
//! and adjoint machinery to the low-fidelity solve.  Shared helpers here
//! build discrepancy training sets and draw secondary training inputs.

pub mod advection_diffusion;
pub mod diffusion_reaction;
pub mod mass_spring;

use nalgebra::DVector;

use crate::calibration::TrainingData;
use crate::error::CalibrationError;
use crate::optim::ForwardModel;
use crate::prior::OptPrior;
use crate::rng::SeedSpec;

/// Draw a secondary training input near `z_center`: a prior sample scaled so
/// the perturbation's inner-product norm is `rel_magnitude` times the norm of
/// `z_center` itself.  The draw inherits the prior's correlation structure,
/// so its wavelength is commensurate with the correlation length hyper-parameter.
pub fn sample_secondary_input(
    prior: &OptPrior,
    z_center: &DVector<f64>,
    rel_magnitude: f64,
    seed: SeedSpec,
) -> DVector<f64> {
    let draw = prior.sample(seed);
    let center_norm = z_center.dot(&(prior.mass() * z_center)).sqrt();
    let draw_norm = draw.dot(&(prior.mass() * &draw)).sqrt();
    if draw_norm == 0.0 || center_norm == 0.0 {
        return z_center + draw;
    }
    z_center + draw * (rel_magnitude * center_norm / draw_norm)
}

/// Evaluate both fidelities at every input and collect the pointwise state
/// differences as a training set.  `inputs[0]` must be the optimum the
/// update is centered on.
pub fn discrepancy_training_data(
    hifi: &dyn ForwardModel,
    lofi: &dyn ForwardModel,
    inputs: Vec<DVector<f64>>,
) -> Result<TrainingData, CalibrationError> {
    if inputs.is_empty() {
        return Err(CalibrationError::Empty);
    }
    let mut outputs = Vec::with_capacity(inputs.len());
    for z in &inputs {
        let high = hifi.solve(z)?;
        let low = lofi.solve(z)?;
        if high.len() != low.len() {
            return Err(CalibrationError::Shape(format!(
                "fidelity state dims differ: {} vs {}",
                high.len(),
                low.len()
            )));
        }
        outputs.push(high - low);
    }
    let z_center = inputs[0].clone();
    TrainingData::new(z_center, inputs, outputs)
}
