//! Grayscale image grids and differentiable bicubic resampling.
//!
//! Pixel `(r, c)` sits at real coordinate `(u = r, v = c)`: `u` runs down the
//! rows, `v` across the columns. Sampling uses Keys cubic convolution with
//! `a = -0.5` (Catmull-Rom) and replicates edge pixels for out-of-range taps.

use crate::error::{Error, Result};

/// A dense row-major grid of finite reals.
///
/// Used for intermediate results that may leave the unit interval (gradients,
/// unclamped warps, activation maps).
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("plane dimensions must be positive"));
        }
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "plane data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    pub fn same_shape(&self, other: &Plane) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// A grayscale image whose intensities all lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage(Plane);

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::invalid(format!(
                "intensity {v} at index {i} outside [0, 1]"
            )));
        }
        Ok(Self(Plane::new(height, width, data)?))
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn into_plane(self) -> Plane {
        self.0
    }
}

impl std::ops::Deref for GrayImage {
    type Target = Plane;

    fn deref(&self) -> &Plane {
        &self.0
    }
}

/// A binary image, e.g. the support of a target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "mask data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        self.data[r * self.width + c] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Dilation by a disc of the given radius in pixels.
    pub fn dilate(&self, radius: usize) -> Mask {
        let r = radius as isize;
        let (h, w) = (self.height as isize, self.width as isize);
        let mut out = Mask::empty(self.height, self.width);
        for y in 0..h {
            for x in 0..w {
                if !self.data[(y * w + x) as usize] {
                    continue;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dy * dy + dx * dx > r * r {
                            continue;
                        }
                        let (yy, xx) = (y + dy, x + dx);
                        if (0..h).contains(&yy) && (0..w).contains(&xx) {
                            out.data[(yy * w + xx) as usize] = true;
                        }
                    }
                }
            }
        }
        out
    }
}

/// A real-valued sampling location; out-of-range values are legal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coord {
    pub u: f64,
    pub v: f64,
}

impl Coord {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// Interpolated value and its partial derivatives along `u` and `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub d_du: f64,
    pub d_dv: f64,
}

/// Catmull-Rom tap weights for fractional offset `t` in `[0, 1)` and their
/// derivatives with respect to `t`.
#[inline]
fn cubic_weights(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    let w = [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ];
    let dw = [
        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
        0.5 * (9.0 * t2 - 10.0 * t),
        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
        0.5 * (3.0 * t2 - 2.0 * t),
    ];
    (w, dw)
}

/// Splits a coordinate into clamped tap indices and a fractional part.
#[inline]
fn taps(x: f64, n: usize) -> ([usize; 4], f64) {
    let last = n as isize - 1;
    // Far outside the grid every tap collapses onto the border pixel.
    let x = x.clamp(-4.0, n as f64 + 4.0);
    let base = x.floor();
    let frac = x - base;
    let base = base as isize;
    let idx = [
        (base - 1).clamp(0, last) as usize,
        base.clamp(0, last) as usize,
        (base + 1).clamp(0, last) as usize,
        (base + 2).clamp(0, last) as usize,
    ];
    (idx, frac)
}

/// Bicubic sample without the finiteness check; callers guarantee finite
/// coordinates.
#[inline]
pub(crate) fn sample_unchecked(img: &Plane, u: f64, v: f64) -> Sample {
    let (rows, fu) = taps(u, img.height);
    let (cols, fv) = taps(v, img.width);
    let (wu, dwu) = cubic_weights(fu);
    let (wv, dwv) = cubic_weights(fv);
    let mut value = 0.0;
    let mut d_du = 0.0;
    let mut d_dv = 0.0;
    for i in 0..4 {
        let row = &img.data[rows[i] * img.width..(rows[i] + 1) * img.width];
        let mut along = 0.0;
        let mut along_d = 0.0;
        for j in 0..4 {
            let p = row[cols[j]];
            along += wv[j] * p;
            along_d += dwv[j] * p;
        }
        value += wu[i] * along;
        d_du += dwu[i] * along;
        d_dv += wu[i] * along_d;
    }
    Sample { value, d_du, d_dv }
}

/// Cubic-convolution interpolation of `img` at `at`, with analytic partials.
pub fn sample_bicubic(img: &Plane, at: Coord) -> Result<Sample> {
    if !at.u.is_finite() || !at.v.is_finite() {
        return Err(Error::invalid(format!(
            "non-finite sampling coordinate ({}, {})",
            at.u, at.v
        )));
    }
    Ok(sample_unchecked(img, at.u, at.v))
}

/// Clamps every value into `[0, 1]`.
pub fn clip_unit(img: &Plane) -> GrayImage {
    GrayImage(Plane {
        height: img.height,
        width: img.width,
        data: img.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    })
}
