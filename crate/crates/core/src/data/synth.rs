//! Synthetic SAR-like target chips.
//!
//! Background clutter is single-look intensity speckle: a base level scaled
//! by an exponential factor of mean 1 per pixel. The factor comes from a
//! complex Gaussian scene blurred by the imaging point-spread function, so
//! neighbouring pixels are correlated as in real SAR chips. Each class has
//! its own bright silhouette, speckled as well, with a few point scatterers
//! on top. Position and orientation are jittered per chip.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::Chip;
use crate::error::{Error, Result};
use crate::image::{GrayImage, Mask};
use crate::rng;

/// Mean background clutter intensity.
pub const CLUTTER_LEVEL: f64 = 0.15;
const TARGET_LEVEL: f64 = 0.5;
const TARGET_FLOOR: f64 = 0.25;
const MASK_DILATION: usize = 2;

pub const SILHOUETTES: [&str; 10] = [
    "bar", "ellipse", "L", "T", "cross", "chevron", "ring", "wedge", "square", "twin-bar",
];

/// Distance from point `p` to segment `a`-`b`.
fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let t = (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
    let (dx, dy) = (p.0 - a.0 - t * vx, p.1 - a.1 - t * vy);
    (dx * dx + dy * dy).sqrt()
}

/// Whether local point `(x, y)` (pixels at 64-px scale, x across, y down)
/// lies inside the silhouette of `class`.
fn inside(class: usize, x: f64, y: f64) -> bool {
    match class {
        0 => x.abs() <= 11.0 && y.abs() <= 3.0,
        1 => (x / 10.0).powi(2) + (y / 6.0).powi(2) <= 1.0,
        2 => (x >= -9.0 && x <= -4.0 && y.abs() <= 9.0) || (y >= 4.0 && y <= 9.0 && x.abs() <= 9.0),
        3 => (y >= -9.0 && y <= -4.0 && x.abs() <= 10.0) || (x.abs() <= 2.5 && y >= -9.0 && y <= 10.0),
        4 => (x.abs() <= 2.5 && y.abs() <= 10.0) || (y.abs() <= 2.5 && x.abs() <= 10.0),
        5 => {
            seg_dist((x, y), (-10.0, -6.0), (0.0, 6.0)) <= 2.5
                || seg_dist((x, y), (0.0, 6.0), (10.0, -6.0)) <= 2.5
        }
        6 => {
            let r = (x * x + y * y).sqrt();
            (5.0..=9.0).contains(&r)
        }
        7 => y >= -8.0 && y <= 8.0 && x.abs() <= 0.6 * (y + 8.0) + 0.5,
        8 => x.abs() <= 6.5 && y.abs() <= 6.5,
        9 => x.abs() <= 10.0 && (y.abs() - 5.0).abs() <= 2.0,
        _ => false,
    }
}

/// Generates `chips_per_class` chips for each of `num_classes` classes.
///
/// Chip `i` (class-major order) draws from its own stream derived from
/// `(seed, i)`, so output does not depend on generation order.
pub fn generate_synthetic_dataset(
    num_classes: usize,
    chips_per_class: usize,
    chip_side: usize,
    seed: u64,
) -> Result<Vec<Chip>> {
    generate_synthetic_dataset_with(num_classes, chips_per_class, chip_side, seed, &SynthOptions::default())
}

/// Generator knobs beyond the dataset shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    /// Standard deviation in pixels of the Gaussian point-spread function
    /// applied to the complex scene before detection. Zero gives
    /// uncorrelated speckle. The per-pixel intensity factor is Exp(1)
    /// either way.
    pub speckle_correlation: f64,
    /// Number of looks averaged into the target texture. The texture factor
    /// is Gamma(L, 1/L): mean 1, standard deviation `1/sqrt(L)`.
    pub target_looks: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            speckle_correlation: 5.0,
            target_looks: 1.0,
        }
    }
}

/// Like [`generate_synthetic_dataset`] with explicit generator options.
pub fn generate_synthetic_dataset_with(
    num_classes: usize,
    chips_per_class: usize,
    chip_side: usize,
    seed: u64,
    options: &SynthOptions,
) -> Result<Vec<Chip>> {
    if !(options.speckle_correlation >= 0.0 && options.speckle_correlation <= 8.0) {
        return Err(Error::invalid(format!(
            "speckle_correlation must lie in [0, 8], got {}",
            options.speckle_correlation
        )));
    }
    if !(options.target_looks >= 1.0 && options.target_looks.is_finite()) {
        return Err(Error::invalid(format!(
            "target_looks must be at least 1, got {}",
            options.target_looks
        )));
    }
    if !(2..=10).contains(&num_classes) {
        return Err(Error::invalid(format!(
            "num_classes must be in [2, 10], got {num_classes}"
        )));
    }
    if chip_side < 32 {
        return Err(Error::invalid(format!(
            "chip_side must be at least 32, got {chip_side}"
        )));
    }
    if chips_per_class == 0 {
        return Err(Error::invalid("chips_per_class must be positive"));
    }
    let mut chips = Vec::with_capacity(num_classes * chips_per_class);
    for label in 0..num_classes {
        for j in 0..chips_per_class {
            let index = label * chips_per_class + j;
            chips.push(generate_chip(label, chip_side, seed, index, options)?);
        }
    }
    Ok(chips)
}

/// Unit-mean speckle intensity: squared magnitude of circular complex
/// Gaussian noise smoothed by a Gaussian PSF of width `sigma`. The smoothed
/// field stays circular Gaussian, so each pixel is still Exp(1).
fn speckle_field<R: Rng>(side: usize, sigma: f64, rng: &mut R) -> Vec<f64> {
    let radius = if sigma > 0.0 { (3.0 * sigma).ceil() as usize } else { 0 };
    let kernel: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            if sigma > 0.0 { (-d * d / (2.0 * sigma * sigma)).exp() } else { 1.0 }
        })
        .collect();
    let energy: f64 = kernel.iter().map(|k| k * k).sum::<f64>().powi(2);
    let n = side + 2 * radius;
    let mut re: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
    let mut im: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
    for plane in [&mut re, &mut im] {
        // Horizontal then vertical pass, valid region only.
        let mut rows = vec![0.0; n * side];
        for r in 0..n {
            for c in 0..side {
                rows[r * side + c] = kernel.iter().enumerate().map(|(t, k)| k * plane[r * n + c + t]).sum();
            }
        }
        let mut out = vec![0.0; side * side];
        for r in 0..side {
            for c in 0..side {
                out[r * side + c] = kernel.iter().enumerate().map(|(t, k)| k * rows[(r + t) * side + c]).sum();
            }
        }
        *plane = out;
    }
    re.iter()
        .zip(&im)
        .map(|(a, b)| (a * a + b * b) / (2.0 * energy))
        .collect()
}

fn generate_chip(label: usize, side: usize, seed: u64, index: usize, options: &SynthOptions) -> Result<Chip> {
    let mut rng = rng::stream(seed, index as u64);
    let scale = side as f64 / 64.0;
    let center = (side as f64 - 1.0) / 2.0;
    let cy = center + rng.random_range(-4.0..=4.0) * scale;
    let cx = center + rng.random_range(-4.0..=4.0) * scale;
    let theta = rng.random_range(-10.0f64..=10.0).to_radians();
    let (sin, cos) = theta.sin_cos();

    let mut support = Mask::empty(side, side);
    for r in 0..side {
        for c in 0..side {
            let (dy, dx) = (r as f64 - cy, c as f64 - cx);
            // Rotate into the silhouette frame.
            let x = (cos * dx + sin * dy) / scale;
            let y = (-sin * dx + cos * dy) / scale;
            if inside(label, x, y) {
                support.set(r, c, true);
            }
        }
    }

    let speckle = speckle_field(side, options.speckle_correlation, &mut rng);
    let looks = options.target_looks;
    let target_texture = Gamma::new(looks, 1.0 / looks).expect("valid gamma parameters");
    let mut data = vec![0.0; side * side];
    for r in 0..side {
        for c in 0..side {
            let speckle = speckle[r * side + c];
            let texture: f64 = target_texture.sample(&mut rng);
            data[r * side + c] = if support.get(r, c) {
                (TARGET_LEVEL * texture).max(TARGET_FLOOR)
            } else {
                CLUTTER_LEVEL * speckle
            };
        }
    }

    let inner: Vec<usize> = (0..side * side).filter(|&i| support.data()[i]).collect();
    let scatterers = rng.random_range(3..=6);
    for _ in 0..scatterers {
        if inner.is_empty() {
            break;
        }
        let at = inner[rng.random_range(0..inner.len())];
        let (pr, pc) = ((at / side) as f64, (at % side) as f64);
        let peak = rng.random_range(0.85..=1.0);
        let sigma = 0.9 * scale;
        let reach = (3.0 * sigma).ceil() as isize;
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (r, c) = (pr as isize + dr, pc as isize + dc);
                if r < 0 || c < 0 || r >= side as isize || c >= side as isize {
                    continue;
                }
                let d2 = (dr * dr + dc * dc) as f64;
                let v = peak * (-d2 / (2.0 * sigma * sigma)).exp();
                let px = &mut data[r as usize * side + c as usize];
                *px = px.max(v);
            }
        }
    }
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));

    Ok(Chip {
        id: format!("chip_{index:04}"),
        image: GrayImage::new(side, side, data)?,
        mask: support.dilate(MASK_DILATION),
        label,
    })
}
