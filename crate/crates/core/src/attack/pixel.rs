//! Pixel-space sign-gradient attacks under an l-infinity budget.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_label, checked_grad, AttackResult, Perturbation};
use crate::error::{Error, Result};
use crate::image::{GrayImage, Plane};
use crate::net::Classifier;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelVariant {
    Fgsm,
    Pgd,
    Mifgsm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PixelAttackConfig {
    pub epsilon: f64,
    pub step: f64,
    pub iterations: usize,
    pub variant: PixelVariant,
    pub decay: f64,
    pub random_start: bool,
    pub seed: u64,
}

impl Default for PixelAttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 8.0 / 255.0,
            step: 0.8 / 255.0,
            iterations: 20,
            variant: PixelVariant::Pgd,
            decay: 1.0,
            random_start: true,
            seed: 0,
        }
    }
}

impl PixelAttackConfig {
    pub fn validate(&self) -> Result<()> {
        // epsilon = 0 is allowed and yields the identity attack.
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid(format!("epsilon must lie in [0, 1], got {}", self.epsilon)));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invalid(format!("step must be positive, got {}", self.step)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(Error::invalid(format!("decay must be non-negative, got {}", self.decay)));
        }
        Ok(())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clamps `v` to the epsilon-ball around `x0` and to [0, 1].
fn clamp_pixel(v: f64, x0: f64, eps: f64) -> f64 {
    v.clamp(x0 - eps, x0 + eps).clamp(0.0, 1.0)
}

/// FGSM takes one step of size `epsilon`; PGD and MI-FGSM take
/// `iterations` steps of size `step`, projecting after each.
pub fn pixel_attack<C: Classifier + ?Sized>(
    model: &C,
    x: &GrayImage,
    label: usize,
    config: &PixelAttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    check_label(model, label)?;
    let eps = config.epsilon;
    let x0 = x.data();
    let clean_prediction = model.predict(x)?;
    let mut queries = 1;
    let mut loss_trace = Vec::new();

    let mut cur: Vec<f64> = x0.to_vec();
    match config.variant {
        PixelVariant::Fgsm => {
            let (loss, g) = checked_grad(model, x, label, 0)?;
            queries += 1;
            loss_trace.push(loss);
            for ((c, &g), &o) in cur.iter_mut().zip(g.data()).zip(x0) {
                *c = clamp_pixel(o + eps * sign(g), o, eps);
            }
        }
        PixelVariant::Pgd | PixelVariant::Mifgsm => {
            if config.variant == PixelVariant::Pgd && config.random_start {
                let mut rng = rng::stream(config.seed, 0);
                for (c, &o) in cur.iter_mut().zip(x0) {
                    let d = if eps > 0.0 { rng.random_range(-eps..=eps) } else { 0.0 };
                    *c = clamp_pixel(o + d, o, eps);
                }
            }
            let mut velocity = vec![0.0; cur.len()];
            for it in 0..config.iterations {
                let xt = GrayImage::new(x.height(), x.width(), cur.clone())?;
                let (loss, g) = checked_grad(model, &xt, label, it)?;
                queries += 1;
                loss_trace.push(loss);
                let g = g.data();
                let direction: &[f64] = if config.variant == PixelVariant::Mifgsm {
                    let norm: f64 = g.iter().map(|v| v.abs()).sum();
                    let inv = if norm < 1e-12 { 0.0 } else { 1.0 / norm };
                    for (v, &gi) in velocity.iter_mut().zip(g) {
                        *v = config.decay * *v + gi * inv;
                    }
                    &velocity
                } else {
                    g
                };
                for ((c, &d), &o) in cur.iter_mut().zip(direction).zip(x0) {
                    *c = clamp_pixel(*c + config.step * sign(d), o, eps);
                }
            }
        }
    }

    let adversarial = GrayImage::new(x.height(), x.width(), cur)?;
    let adversarial_prediction = model.predict(&adversarial)?;
    queries += 1;
    let delta = adversarial.data().iter().zip(x0).map(|(a, b)| a - b).collect();
    Ok(AttackResult {
        perturbation: Perturbation::Pixels(Plane::new(x.height(), x.width(), delta)?),
        adversarial,
        loss_trace,
        query_count: queries,
        clean_prediction,
        adversarial_prediction,
        success: adversarial_prediction != clean_prediction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::testing::Linear;
    use crate::net::Classifier;

    fn model() -> Linear {
        let n = 16;
        Linear {
            weights: vec![
                (0..n).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect(),
                (0..n).map(|i| ((i * 3 % 4) as f64 - 1.5) * 0.2).collect(),
            ],
            bias: vec![0.1, -0.1],
        }
    }

    fn image() -> GrayImage {
        GrayImage::new(4, 4, (0..16).map(|i| 0.3 + 0.02 * i as f64).collect()).unwrap()
    }

    #[test]
    fn zero_epsilon_is_identity() {
        for variant in [PixelVariant::Fgsm, PixelVariant::Pgd, PixelVariant::Mifgsm] {
            let cfg = PixelAttackConfig { epsilon: 0.0, variant, ..Default::default() };
            let r = pixel_attack(&model(), &image(), 0, &cfg).unwrap();
            assert_eq!(r.adversarial, image());
            assert!(!r.success);
        }
    }

    #[test]
    fn fgsm_matches_linear_closed_form() {
        let m = model();
        let x = image();
        let eps = 0.05;
        let cfg = PixelAttackConfig { epsilon: eps, variant: PixelVariant::Fgsm, ..Default::default() };
        let r = pixel_attack(&m, &x, 0, &cfg).unwrap();
        assert_eq!(r.loss_trace.len(), 1);
        // For a linear model dL/dx = (p0 - 1) w0 + p1 w1 = p1 (w1 - w0).
        let p = m.logits(&x).unwrap().softmax();
        let w: Vec<f64> = m.weights[1].iter().zip(&m.weights[0]).map(|(a, b)| p[1] * (a - b)).collect();
        let Perturbation::Pixels(delta) = &r.perturbation else { panic!() };
        for (d, wi) in delta.data().iter().zip(&w) {
            assert!((d - eps * sign(*wi)).abs() < 1e-12);
        }
        // The logit margin moves by exactly eps * ||w1 - w0||_1.
        let margin = |img: &GrayImage| {
            let z = m.logits(img).unwrap().0;
            z[1] - z[0]
        };
        let l1: f64 = m.weights[1].iter().zip(&m.weights[0]).map(|(a, b)| (a - b).abs()).sum();
        assert!((margin(&r.adversarial) - margin(&x) - eps * l1).abs() < 1e-12);
    }

    #[test]
    fn iterates_respect_budget_and_are_deterministic() {
        for variant in [PixelVariant::Pgd, PixelVariant::Mifgsm] {
            let cfg = PixelAttackConfig { epsilon: 0.03, step: 0.01, iterations: 7, variant, seed: 5, ..Default::default() };
            let a = pixel_attack(&model(), &image(), 0, &cfg).unwrap();
            let b = pixel_attack(&model(), &image(), 0, &cfg).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.loss_trace.len(), 7);
            for (p, q) in a.adversarial.data().iter().zip(image().data()) {
                assert!((p - q).abs() <= 0.03 + 1e-12);
            }
            // Loss rises on a linear model.
            assert!(a.loss_trace.last() > a.loss_trace.first());
        }
    }

    #[test]
    fn rejects_bad_config() {
        let bad = PixelAttackConfig { epsilon: 1.5, ..Default::default() };
        assert!(pixel_attack(&model(), &image(), 0, &bad).is_err());
        let bad = PixelAttackConfig { step: 0.0, ..Default::default() };
        assert!(pixel_attack(&model(), &image(), 0, &bad).is_err());
        assert!(pixel_attack(&model(), &image(), 2, &PixelAttackConfig::default()).is_err());
    }
}
