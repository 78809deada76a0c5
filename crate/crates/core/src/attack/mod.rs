//! Untargeted evasion attacks: mesh-warp SRAW, pixel-space FGSM / PGD /
//! MI-FGSM, and a random-warp control.
//!
//! Every attack maximizes cross-entropy on the true label and is generic over
//! [`Classifier`], so the same code drives trained networks and hand-built
//! test models.

mod pixel;
mod sraw;

pub use pixel::{pixel_attack, PixelAttackConfig, PixelVariant};
pub use sraw::{
    averaged_gradient, momentum_update, project_offsets, random_warp_control, sraw_attack,
    GradientEstimate, MomentumState, SrawConfig,
};

use crate::error::{Error, Result};
use crate::image::{GrayImage, Plane};
use crate::net::Classifier;
use crate::warp::OffsetField;

#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    /// Final control-point offsets of a warp attack.
    Offsets(OffsetField),
    /// `x_adv - x` of a pixel attack.
    Pixels(Plane),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub adversarial: GrayImage,
    pub perturbation: Perturbation,
    /// Loss at the start of each iteration.
    pub loss_trace: Vec<f64>,
    /// Model evaluations, gradient or forward-only.
    pub query_count: usize,
    pub clean_prediction: usize,
    pub adversarial_prediction: usize,
    /// The adversarial prediction differs from the clean one.
    pub success: bool,
}

/// Loss and input gradient, rejecting non-finite losses.
fn checked_grad<C: Classifier + ?Sized>(
    model: &C,
    x: &GrayImage,
    label: usize,
    iteration: usize,
) -> Result<(f64, Plane)> {
    let (loss, grad) = model.loss_and_input_grad(x, label)?;
    if !loss.is_finite() {
        return Err(Error::Numerical {
            iteration,
            message: format!("loss is {loss}"),
        });
    }
    Ok((loss, grad))
}

fn check_label<C: Classifier + ?Sized>(model: &C, label: usize) -> Result<()> {
    if label >= model.num_classes() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            model.num_classes()
        )));
    }
    Ok(())
}
