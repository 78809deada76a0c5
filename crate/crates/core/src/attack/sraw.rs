//! Space-reweighted warp attack: momentum-accelerated projected ascent on
//! mesh control-point offsets, with separate displacement budgets for target
//! and background cells.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_label, checked_grad, AttackResult, Perturbation};
use crate::error::{Error, Result};
use crate::image::{GrayImage, Mask};
use crate::net::Classifier;
use crate::rng;
use crate::warp::{build_mesh, MeshSpec, OffsetField, Region, Warper};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrawConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub decay: f64,
    pub num_warps: usize,
    pub jitter_sigma: f64,
    pub r_fg: f64,
    pub r_bg: f64,
    pub mesh_h: usize,
    pub mesh_w: usize,
    pub fg_fraction_threshold: f64,
    pub seed: u64,
}

impl Default for SrawConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            step_size: 0.8,
            decay: 0.9,
            num_warps: 5,
            jitter_sigma: 0.5,
            r_fg: 0.5,
            r_bg: 3.0,
            mesh_h: 8,
            mesh_w: 8,
            fg_fraction_threshold: 0.05,
            seed: 0,
        }
    }
}

impl SrawConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.iterations == 0 {
            return fail("iterations must be at least 1".into());
        }
        if self.num_warps == 0 {
            return fail("num_warps must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.decay) {
            return fail(format!("decay must lie in [0, 1), got {}", self.decay));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return fail(format!("step_size must be positive, got {}", self.step_size));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return fail(format!("jitter_sigma must be non-negative, got {}", self.jitter_sigma));
        }
        if !(0.0 <= self.r_fg && self.r_fg <= self.r_bg && self.r_bg.is_finite()) {
            return fail(format!(
                "budgets must satisfy 0 <= r_fg <= r_bg, got r_fg = {}, r_bg = {}",
                self.r_fg, self.r_bg
            ));
        }
        if !(0.0..=1.0).contains(&self.fg_fraction_threshold) {
            return fail(format!(
                "fg_fraction_threshold must lie in [0, 1], got {}",
                self.fg_fraction_threshold
            ));
        }
        Ok(())
    }
}

/// Momentum `g'` over the flattened offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub velocity: Vec<[f64; 2]>,
}

impl MomentumState {
    pub fn zeros(num_points: usize) -> Self {
        Self {
            velocity: vec![[0.0; 2]; num_points],
        }
    }
}

/// `g' <- mu g' + g / ||g||_1`; the normalized term is zero when
/// `||g||_1 < 1e-12`.
pub fn momentum_update(state: &MomentumState, avg_grad: &[[f64; 2]], decay: f64) -> Result<MomentumState> {
    if avg_grad.len() != state.velocity.len() {
        return Err(Error::invalid(format!(
            "gradient has {} points, momentum has {}",
            avg_grad.len(),
            state.velocity.len()
        )));
    }
    let norm: f64 = avg_grad.iter().flatten().map(|v| v.abs()).sum();
    let inv = if norm < 1e-12 { 0.0 } else { 1.0 / norm };
    let velocity = state
        .velocity
        .iter()
        .zip(avg_grad)
        .map(|(v, g)| [decay * v[0] + g[0] * inv, decay * v[1] + g[1] * inv])
        .collect();
    Ok(MomentumState { velocity })
}

/// Scales any displacement longer than its region's radius back onto the
/// disc. Displacements within `1e-12` of the radius count as feasible, which
/// keeps the projection exactly idempotent.
pub fn project_offsets(xi: &OffsetField, mesh: &MeshSpec, r_fg: f64, r_bg: f64) -> Result<OffsetField> {
    if xi.len() != mesh.num_points() {
        return Err(Error::invalid(format!(
            "{} offsets for a mesh of {} points",
            xi.len(),
            mesh.num_points()
        )));
    }
    if r_fg < 0.0 || r_bg < 0.0 {
        return Err(Error::invalid("budgets must be non-negative"));
    }
    let offsets = xi
        .offsets
        .iter()
        .zip(mesh.regions())
        .map(|(d, region)| {
            let r = match region {
                Region::Foreground => r_fg,
                Region::Background => r_bg,
            };
            let n = d[0].hypot(d[1]);
            if n > r + 1e-12 {
                let s = r / n;
                [d[0] * s, d[1] * s]
            } else {
                *d
            }
        })
        .collect();
    Ok(OffsetField { offsets })
}

/// Averaged warp gradient with the individual terms kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub mean: Vec<[f64; 2]>,
    pub samples: Vec<Vec<[f64; 2]>>,
    /// Loss at the unjittered offsets.
    pub loss: f64,
}

/// Mean of `dL/dxi` over `num_warps` jittered copies of `xi`. The first copy
/// is unjittered; the rest add independent `N(0, jitter_sigma^2)` noise to
/// every offset component.
#[allow(clippy::too_many_arguments)]
pub fn averaged_gradient<C: Classifier + ?Sized, R: Rng>(
    model: &C,
    warper: &Warper,
    x: &GrayImage,
    xi: &OffsetField,
    label: usize,
    num_warps: usize,
    jitter_sigma: f64,
    rng: &mut R,
    iteration: usize,
) -> Result<GradientEstimate> {
    if num_warps == 0 {
        return Err(Error::invalid("num_warps must be at least 1"));
    }
    let noise = Normal::new(0.0, jitter_sigma)
        .map_err(|e| Error::invalid(format!("jitter_sigma: {e}")))?;
    let mut samples = Vec::with_capacity(num_warps);
    let mut loss = f64::NAN;
    for j in 0..num_warps {
        let jittered = if j == 0 {
            xi.clone()
        } else {
            OffsetField {
                offsets: xi
                    .offsets
                    .iter()
                    .map(|d| [d[0] + noise.sample(rng), d[1] + noise.sample(rng)])
                    .collect(),
            }
        };
        let tape = warper.forward(x, &jittered)?;
        let (l, g_img) = checked_grad(model, &tape.output, label, iteration)?;
        if j == 0 {
            loss = l;
        }
        samples.push(warper.backward(&tape, &g_img)?);
    }
    let scale = 1.0 / num_warps as f64;
    let mut mean = vec![[0.0; 2]; xi.len()];
    for s in &samples {
        for (m, g) in mean.iter_mut().zip(s) {
            m[0] += g[0];
            m[1] += g[1];
        }
    }
    mean.iter_mut().for_each(|m| {
        m[0] *= scale;
        m[1] *= scale;
    });
    Ok(GradientEstimate { mean, samples, loss })
}

fn check_mask(x: &GrayImage, mask: &Mask) -> Result<()> {
    if mask.height() != x.height() || mask.width() != x.width() {
        return Err(Error::invalid(format!(
            "mask is {}x{}, image is {}x{}",
            mask.height(),
            mask.width(),
            x.height(),
            x.width()
        )));
    }
    Ok(())
}

fn finish<C: Classifier + ?Sized>(
    model: &C,
    adversarial: GrayImage,
    xi: OffsetField,
    loss_trace: Vec<f64>,
    queries: usize,
    clean_prediction: usize,
) -> Result<AttackResult> {
    let adversarial_prediction = model.predict(&adversarial)?;
    Ok(AttackResult {
        adversarial,
        perturbation: Perturbation::Offsets(xi),
        loss_trace,
        query_count: queries + 1,
        clean_prediction,
        adversarial_prediction,
        success: adversarial_prediction != clean_prediction,
    })
}

/// Runs `iterations` rounds of averaged gradient, momentum update and
/// projected step, starting from zero offsets. The jitter stream comes from
/// `config.seed`.
pub fn sraw_attack<C: Classifier + ?Sized>(
    model: &C,
    x: &GrayImage,
    label: usize,
    mask: &Mask,
    config: &SrawConfig,
) -> Result<AttackResult> {
    config.validate()?;
    check_label(model, label)?;
    check_mask(x, mask)?;
    let mesh = build_mesh(
        x.height(),
        x.width(),
        config.mesh_h,
        config.mesh_w,
        mask,
        config.fg_fraction_threshold,
    )?;
    let warper = Warper::new(mesh)?;
    let clean_prediction = model.predict(x)?;
    let mut queries = 1;
    let mut rng = rng::stream(config.seed, 0);
    let mut xi = OffsetField::zeros(warper.mesh());
    let mut momentum = MomentumState::zeros(xi.len());
    let mut loss_trace = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let est = averaged_gradient(
            model,
            &warper,
            x,
            &xi,
            label,
            config.num_warps,
            config.jitter_sigma,
            &mut rng,
            it,
        )?;
        queries += config.num_warps;
        loss_trace.push(est.loss);
        momentum = momentum_update(&momentum, &est.mean, config.decay)?;
        let stepped = OffsetField {
            offsets: xi
                .offsets
                .iter()
                .zip(&momentum.velocity)
                .map(|(d, v)| [d[0] + config.step_size * v[0], d[1] + config.step_size * v[1]])
                .collect(),
        };
        xi = project_offsets(&stepped, warper.mesh(), config.r_fg, config.r_bg)?;
    }
    let adversarial = warper.warp(x, &xi)?;
    finish(model, adversarial, xi, loss_trace, queries, clean_prediction)
}

/// One warp with offsets drawn uniformly over each point's budget: direction
/// uniform on the circle, radius uniform on `[0, r]`. No optimization.
pub fn random_warp_control<C: Classifier + ?Sized, R: Rng>(
    model: &C,
    x: &GrayImage,
    label: usize,
    mask: &Mask,
    config: &SrawConfig,
    rng: &mut R,
) -> Result<AttackResult> {
    config.validate()?;
    check_label(model, label)?;
    check_mask(x, mask)?;
    let mesh = build_mesh(
        x.height(),
        x.width(),
        config.mesh_h,
        config.mesh_w,
        mask,
        config.fg_fraction_threshold,
    )?;
    let offsets = mesh
        .regions()
        .iter()
        .map(|region| {
            let r = match region {
                Region::Foreground => config.r_fg,
                Region::Background => config.r_bg,
            };
            let angle = rng.random_range(0.0..TAU);
            let radius = if r > 0.0 { rng.random_range(0.0..=r) } else { 0.0 };
            [radius * angle.cos(), radius * angle.sin()]
        })
        .collect();
    let xi = OffsetField::new(&mesh, offsets)?;
    let warper = Warper::new(mesh)?;
    let clean_prediction = model.predict(x)?;
    let adversarial = warper.warp(x, &xi)?;
    let (loss, _) = checked_grad(model, &adversarial, label, 0)?;
    finish(model, adversarial, xi, vec![loss], 2, clean_prediction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::testing::Linear;

    const SIDE: usize = 16;

    fn square_mask() -> Mask {
        let mut m = Mask::empty(SIDE, SIDE);
        for r in 5..11 {
            for c in 5..11 {
                m.set(r, c, true);
            }
        }
        m
    }

    fn image() -> GrayImage {
        let data = (0..SIDE * SIDE)
            .map(|p| {
                let (r, c) = ((p / SIDE) as f64, (p % SIDE) as f64);
                0.5 + 0.3 * (0.7 * r).sin() * (0.5 * c).cos()
            })
            .collect();
        GrayImage::new(SIDE, SIDE, data).unwrap()
    }

    fn model() -> Linear {
        let n = SIDE * SIDE;
        Linear {
            weights: vec![
                (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.05).collect(),
                (0..n).map(|i| ((i * 5 % 13) as f64 - 6.0) * 0.05).collect(),
                (0..n).map(|i| ((i * 3 % 7) as f64 - 3.0) * 0.05).collect(),
            ],
            bias: vec![0.0; 3],
        }
    }

    fn small_config() -> SrawConfig {
        SrawConfig {
            mesh_h: 4,
            mesh_w: 4,
            iterations: 5,
            num_warps: 3,
            seed: 11,
            ..Default::default()
        }
    }

    fn mesh() -> MeshSpec {
        build_mesh(SIDE, SIDE, 4, 4, &square_mask(), 0.05).unwrap()
    }

    #[test]
    fn momentum_examples() {
        let s = MomentumState { velocity: vec![[0.3, -0.1], [0.0, 2.0]] };
        let g = [[1.0, -0.5], [0.0, 0.5]];
        let next = momentum_update(&s, &g, 0.0).unwrap();
        assert_eq!(next.velocity, vec![[0.5, -0.25], [0.0, 0.25]]);
        let frozen = momentum_update(&s, &[[0.0; 2]; 2], 0.9).unwrap();
        assert_eq!(frozen.velocity, vec![[0.9 * 0.3, 0.9 * -0.1], [0.0, 0.9 * 2.0]]);
        let g1 = [[0.25, 0.25], [-0.25, 0.25]];
        let g2 = [[0.0, -1.0], [0.0, 0.0]];
        let two = momentum_update(&momentum_update(&MomentumState::zeros(2), &g1, 0.9).unwrap(), &g2, 0.9).unwrap();
        for (v, (a, b)) in two.velocity.iter().zip(g1.iter().zip(&g2)) {
            assert!((v[0] - (0.9 * a[0] + b[0])).abs() < 1e-15);
            assert!((v[1] - (0.9 * a[1] + b[1])).abs() < 1e-15);
        }
        assert!(momentum_update(&s, &g[..1], 0.9).is_err());
    }

    #[test]
    fn projection_examples() {
        let mesh = mesh();
        let n = mesh.num_points();
        let bg = mesh.regions().iter().position(|r| *r == Region::Background).unwrap();
        let mut offsets = vec![[0.0; 2]; n];
        offsets[bg] = [3.0, 4.0];
        let p = project_offsets(&OffsetField { offsets }, &mesh, 0.5, 2.5).unwrap();
        assert_eq!(p.offsets[bg], [1.5, 2.0]);

        let inside = OffsetField { offsets: vec![[0.1, -0.2]; n] };
        assert_eq!(project_offsets(&inside, &mesh, 0.5, 2.5).unwrap(), inside);

        let wild = OffsetField {
            offsets: (0..n).map(|i| [i as f64 * 0.37 - 2.0, 1.3 - i as f64 * 0.11]).collect(),
        };
        let once = project_offsets(&wild, &mesh, 0.5, 2.5).unwrap();
        assert_eq!(project_offsets(&once, &mesh, 0.5, 2.5).unwrap(), once);
    }

    #[test]
    fn single_warp_average_is_the_plain_gradient() {
        let (m, x, mesh) = (model(), image(), mesh());
        let warper = Warper::new(mesh).unwrap();
        let xi = OffsetField { offsets: vec![[0.2, -0.1]; 16] };
        let mut rng = rng::stream(0, 0);
        let est = averaged_gradient(&m, &warper, &x, &xi, 1, 1, 0.5, &mut rng, 0).unwrap();
        let tape = warper.forward(&x, &xi).unwrap();
        let (_, g) = m.loss_and_input_grad(&tape.output, 1).unwrap();
        assert_eq!(est.mean, warper.backward(&tape, &g).unwrap());

        let flat = averaged_gradient(&m, &warper, &x, &xi, 1, 4, 0.0, &mut rng, 0).unwrap();
        for (a, b) in flat.mean.iter().zip(&est.mean) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn averaged_gradient_is_mean_of_logged_samples() {
        let (m, x) = (model(), image());
        let warper = Warper::new(mesh()).unwrap();
        let xi = OffsetField::zeros(warper.mesh());
        let run = || {
            let mut rng = rng::stream(3, 0);
            averaged_gradient(&m, &warper, &x, &xi, 0, 5, 0.5, &mut rng, 0).unwrap()
        };
        let est = run();
        assert_eq!(est, run());
        assert_eq!(est.samples.len(), 5);
        assert_ne!(est.samples[1], est.samples[2]);
        for k in 0..16 {
            for a in 0..2 {
                let sum: f64 = est.samples.iter().map(|s| s[k][a]).sum();
                assert!((est.mean[k][a] - sum / 5.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_budget_leaves_image_unchanged() {
        let cfg = SrawConfig { r_fg: 0.0, r_bg: 0.0, ..small_config() };
        let x = image();
        let m = model();
        let label = m.predict(&x).unwrap();
        let r = sraw_attack(&m, &x, label, &square_mask(), &cfg).unwrap();
        assert_eq!(r.adversarial, x);
        assert!(!r.success);
        assert_eq!(r.loss_trace.len(), cfg.iterations);
    }

    #[test]
    fn one_step_matches_hand_unroll() {
        let cfg = SrawConfig { iterations: 1, num_warps: 1, decay: 0.7, step_size: 0.4, ..small_config() };
        let (m, x, mask) = (model(), image(), square_mask());
        let r = sraw_attack(&m, &x, 2, &mask, &cfg).unwrap();
        let warper = Warper::new(mesh()).unwrap();
        let zero = OffsetField::zeros(warper.mesh());
        let tape = warper.forward(&x, &zero).unwrap();
        let (_, g) = m.loss_and_input_grad(&tape.output, 2).unwrap();
        let g = warper.backward(&tape, &g).unwrap();
        let norm: f64 = g.iter().flatten().map(|v| v.abs()).sum();
        let step = OffsetField { offsets: g.iter().map(|d| [0.4 * d[0] / norm, 0.4 * d[1] / norm]).collect() };
        let expected = project_offsets(&step, warper.mesh(), cfg.r_fg, cfg.r_bg).unwrap();
        let Perturbation::Offsets(got) = &r.perturbation else { panic!() };
        for (a, b) in got.offsets.iter().zip(&expected.offsets) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn attack_is_feasible_deterministic_and_ascends() {
        let cfg = SrawConfig { iterations: 12, step_size: 0.5, ..small_config() };
        let (m, x, mask) = (model(), image(), square_mask());
        let a = sraw_attack(&m, &x, 0, &mask, &cfg).unwrap();
        assert_eq!(a, sraw_attack(&m, &x, 0, &mask, &cfg).unwrap());
        let Perturbation::Offsets(xi) = &a.perturbation else { panic!() };
        for (d, region) in xi.offsets.iter().zip(mesh().regions()) {
            let r = if *region == Region::Foreground { cfg.r_fg } else { cfg.r_bg };
            assert!(d[0].hypot(d[1]) <= r + 1e-12);
        }
        assert!(a.loss_trace.last().unwrap() > &a.loss_trace[0]);
        assert_eq!(a.query_count, 1 + 12 * 3 + 1);
    }

    #[test]
    fn random_control_is_feasible_and_reproducible() {
        let cfg = small_config();
        let (m, x, mask) = (model(), image(), square_mask());
        let draw = |seed| random_warp_control(&m, &x, 0, &mask, &cfg, &mut rng::stream(seed, 0)).unwrap();
        let a = draw(1);
        assert_eq!(a, draw(1));
        assert_ne!(a, draw(2));
        let Perturbation::Offsets(xi) = &a.perturbation else { panic!() };
        assert_eq!(&project_offsets(xi, &mesh(), cfg.r_fg, cfg.r_bg).unwrap(), xi);

        let zero = SrawConfig { r_fg: 0.0, r_bg: 0.0, ..cfg };
        let r = random_warp_control(&m, &x, 0, &mask, &zero, &mut rng::stream(1, 0)).unwrap();
        assert_eq!(r.adversarial, x);
    }

    #[test]
    fn config_validation() {
        assert!(SrawConfig::default().validate().is_ok());
        for bad in [
            SrawConfig { iterations: 0, ..Default::default() },
            SrawConfig { num_warps: 0, ..Default::default() },
            SrawConfig { decay: 1.0, ..Default::default() },
            SrawConfig { r_fg: 4.0, ..Default::default() },
            SrawConfig { step_size: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
