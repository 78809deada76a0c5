//! The differentiable mesh warp `x' = T(x, xi)`.
//!
//! Control points sit at the centers of a fixed `mesh_h x mesh_w` cell grid.
//! Warps use backward sampling: the spline sends every output pixel to the
//! source coordinate it reads from, so image content moves opposite to the
//! offsets. The warp is always applied to the original image with the total
//! offsets.

use crate::error::{Error, Result};
use crate::image::{clip_unit, sample_unchecked, Coord, GrayImage, Mask, Plane};
use crate::tps::{assemble_system, ControlPoints, FieldOperator, WarpField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Foreground,
    Background,
}

/// Mesh partition of an image into cells with one control point each.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSpec {
    pub height: usize,
    pub width: usize,
    pub mesh_h: usize,
    pub mesh_w: usize,
    src: ControlPoints,
    regions: Vec<Region>,
}

/// Half-open pixel ranges of the cells along one axis. The last cell absorbs
/// the remainder when `len` is not divisible by `cells`.
fn cell_bounds(len: usize, cells: usize) -> Vec<(usize, usize)> {
    let size = len / cells;
    (0..cells)
        .map(|i| {
            let start = i * size;
            let end = if i + 1 == cells { len } else { start + size };
            (start, end)
        })
        .collect()
}

/// Partitions a `height x width` image into a `mesh_h x mesh_w` mesh and
/// labels each cell foreground when at least `fg_fraction_threshold` of its
/// pixels are set in `mask`.
pub fn build_mesh(
    height: usize,
    width: usize,
    mesh_h: usize,
    mesh_w: usize,
    mask: &Mask,
    fg_fraction_threshold: f64,
) -> Result<MeshSpec> {
    if mesh_h < 2 || mesh_w < 2 {
        return Err(Error::invalid(format!(
            "mesh must be at least 2x2, got {mesh_h}x{mesh_w}"
        )));
    }
    if mesh_h > height || mesh_w > width {
        return Err(Error::invalid(format!(
            "mesh {mesh_h}x{mesh_w} finer than image {height}x{width}"
        )));
    }
    if mask.height() != height || mask.width() != width {
        return Err(Error::invalid(format!(
            "mask is {}x{}, image is {height}x{width}",
            mask.height(),
            mask.width()
        )));
    }
    if !(0.0..=1.0).contains(&fg_fraction_threshold) {
        return Err(Error::invalid(format!(
            "foreground fraction threshold {fg_fraction_threshold} outside [0, 1]"
        )));
    }
    let rows = cell_bounds(height, mesh_h);
    let cols = cell_bounds(width, mesh_w);
    let mut points = Vec::with_capacity(mesh_h * mesh_w);
    let mut regions = Vec::with_capacity(mesh_h * mesh_w);
    for &(r0, r1) in &rows {
        for &(c0, c1) in &cols {
            points.push(Coord::new(
                (r0 + r1 - 1) as f64 / 2.0,
                (c0 + c1 - 1) as f64 / 2.0,
            ));
            let mut set = 0usize;
            for r in r0..r1 {
                for c in c0..c1 {
                    set += mask.get(r, c) as usize;
                }
            }
            let fraction = set as f64 / ((r1 - r0) * (c1 - c0)) as f64;
            regions.push(if fraction >= fg_fraction_threshold {
                Region::Foreground
            } else {
                Region::Background
            });
        }
    }
    Ok(MeshSpec {
        height,
        width,
        mesh_h,
        mesh_w,
        src: ControlPoints::new(points)?,
        regions,
    })
}

impl MeshSpec {
    pub fn num_points(&self) -> usize {
        self.regions.len()
    }

    pub fn source(&self) -> &ControlPoints {
        &self.src
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn foreground_count(&self) -> usize {
        self.regions
            .iter()
            .filter(|&&r| r == Region::Foreground)
            .count()
    }
}

/// Control-point offsets `xi = target - source`, one `[du, dv]` per point.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    pub offsets: Vec<[f64; 2]>,
}

impl OffsetField {
    pub fn zeros(mesh: &MeshSpec) -> Self {
        Self {
            offsets: vec![[0.0; 2]; mesh.num_points()],
        }
    }

    pub fn new(mesh: &MeshSpec, offsets: Vec<[f64; 2]>) -> Result<Self> {
        if offsets.len() != mesh.num_points() {
            return Err(Error::invalid(format!(
                "{} offsets for a mesh of {} points",
                offsets.len(),
                mesh.num_points()
            )));
        }
        if offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("offsets must be finite"));
        }
        Ok(Self { offsets })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Forward result of a warp with the per-pixel sampling partials retained
/// for the backward pass.
#[derive(Debug, Clone)]
pub struct WarpTape {
    pub output: GrayImage,
    d_du: Vec<f64>,
    d_dv: Vec<f64>,
}

/// A mesh together with its cached offset-to-field operator.
#[derive(Debug, Clone)]
pub struct Warper {
    mesh: MeshSpec,
    operator: FieldOperator,
}

impl Warper {
    pub fn new(mesh: MeshSpec) -> Result<Self> {
        let operator = assemble_system(mesh.source())?.field_operator(mesh.height, mesh.width)?;
        Ok(Self { mesh, operator })
    }

    pub fn mesh(&self) -> &MeshSpec {
        &self.mesh
    }

    pub fn operator(&self) -> &FieldOperator {
        &self.operator
    }

    fn check(&self, x: &Plane, xi: &OffsetField) -> Result<()> {
        if x.height() != self.mesh.height || x.width() != self.mesh.width {
            return Err(Error::invalid(format!(
                "image is {}x{}, mesh expects {}x{}",
                x.height(),
                x.width(),
                self.mesh.height,
                self.mesh.width
            )));
        }
        if xi.len() != self.mesh.num_points() {
            return Err(Error::invalid(format!(
                "{} offsets for a mesh of {} points",
                xi.len(),
                self.mesh.num_points()
            )));
        }
        Ok(())
    }

    /// The dense sampling field for offsets `xi`.
    pub fn field(&self, xi: &OffsetField) -> Result<WarpField> {
        let (du, dv) = self.operator.apply(&xi.offsets)?;
        let w = self.mesh.width;
        Ok(WarpField {
            height: self.mesh.height,
            width: w,
            map_u: du.iter().enumerate().map(|(p, d)| (p / w) as f64 + d).collect(),
            map_v: dv.iter().enumerate().map(|(p, d)| (p % w) as f64 + d).collect(),
        })
    }

    /// `T(x, xi)`.
    pub fn warp(&self, x: &GrayImage, xi: &OffsetField) -> Result<GrayImage> {
        Ok(self.forward(x, xi)?.output)
    }

    /// Warps and records the sampling partials needed by [`backward`](Self::backward).
    pub fn forward(&self, x: &GrayImage, xi: &OffsetField) -> Result<WarpTape> {
        self.check(x, xi)?;
        let field = self.field(xi)?;
        let n = field.map_u.len();
        let mut raw = Vec::with_capacity(n);
        let mut d_du = Vec::with_capacity(n);
        let mut d_dv = Vec::with_capacity(n);
        for (&u, &v) in field.map_u.iter().zip(&field.map_v) {
            let s = sample_unchecked(x, u, v);
            raw.push(s.value);
            d_du.push(s.d_du);
            d_dv.push(s.d_dv);
        }
        let raw = Plane::new(x.height(), x.width(), raw)?;
        Ok(WarpTape {
            output: clip_unit(&raw),
            d_du,
            d_dv,
        })
    }

    /// `dL/dxi` given `dL/dx'`. The output clamp is passed through unchanged.
    pub fn backward(&self, tape: &WarpTape, grad_out: &Plane) -> Result<Vec<[f64; 2]>> {
        if !grad_out.same_shape(tape.output.plane()) {
            return Err(Error::invalid("output gradient shape mismatch"));
        }
        let g = grad_out.data();
        let gu: Vec<f64> = g.iter().zip(&tape.d_du).map(|(a, b)| a * b).collect();
        let gv: Vec<f64> = g.iter().zip(&tape.d_dv).map(|(a, b)| a * b).collect();
        self.operator.apply_transpose(&gu, &gv)
    }

    /// Forward and backward in one call.
    pub fn warp_backward(
        &self,
        x: &GrayImage,
        xi: &OffsetField,
        grad_out: &Plane,
    ) -> Result<Vec<[f64; 2]>> {
        let tape = self.forward(x, xi)?;
        self.backward(&tape, grad_out)
    }
}

/// Samples `x` along an explicit field and clamps the result.
pub fn warp_with_field(x: &GrayImage, field: &WarpField) -> Result<GrayImage> {
    if field.height != x.height() || field.width != x.width() {
        return Err(Error::invalid("field and image dimensions differ"));
    }
    if field.map_u.iter().chain(&field.map_v).any(|v| !v.is_finite()) {
        return Err(Error::invalid("warp field has non-finite entries"));
    }
    let raw = field
        .map_u
        .iter()
        .zip(&field.map_v)
        .map(|(&u, &v)| sample_unchecked(x, u, v).value)
        .collect();
    Ok(clip_unit(&Plane::new(x.height(), x.width(), raw)?))
}
