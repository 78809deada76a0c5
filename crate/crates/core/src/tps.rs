//! Thin-plate-spline interpolation.
//!
//! Each coordinate of the map is a spline
//!
//! ```text
//! g(p) = a1 + au * u + av * v + sum_i w_i * U(|P_i - p|),   U(r) = r^2 ln r
//! ```
//!
//! whose coefficients solve the bordered system `[[K, P], [P^T, 0]]` with
//! `P` the `N x 3` homogeneous matrix of rows `(1, u_i, v_i)`. Both
//! coordinates share one factorization.
//!
//! For a fixed set of source points the dense field is a linear function of
//! the target points, so [`FieldOperator`] caches that linear map once per
//! (source points, image size).

use nalgebra::{DMatrix, Dyn, LU};

use crate::error::{Error, Result};
use crate::image::Coord;

/// Radial basis `U(r) = r^2 ln r`, with `U(0) = 0`.
pub fn kernel_u(r: f64) -> Result<f64> {
    if !r.is_finite() || r < 0.0 {
        return Err(Error::invalid(format!(
            "kernel radius must be finite and non-negative, got {r}"
        )));
    }
    Ok(kernel_sq(r * r))
}

/// `U` expressed in the squared radius: `r^2 ln r = 0.5 r^2 ln r^2`.
#[inline]
fn kernel_sq(r2: f64) -> f64 {
    if r2 == 0.0 {
        0.0
    } else {
        0.5 * r2 * r2.ln()
    }
}

#[inline]
fn dist_sq(a: Coord, b: Coord) -> f64 {
    let du = a.u - b.u;
    let dv = a.v - b.v;
    du * du + dv * dv
}

/// An ordered list of control points.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPoints {
    points: Vec<Coord>,
}

impl ControlPoints {
    pub fn new(points: Vec<Coord>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("control point set is empty"));
        }
        if let Some(i) = points
            .iter()
            .position(|p| !p.u.is_finite() || !p.v.is_finite())
        {
            return Err(Error::invalid(format!("control point {i} is not finite")));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Coord] {
        &self.points
    }

    /// These points displaced by `offsets` (one `[du, dv]` per point).
    pub fn displaced(&self, offsets: &[[f64; 2]]) -> Result<ControlPoints> {
        if offsets.len() != self.points.len() {
            return Err(Error::invalid(format!(
                "{} offsets for {} control points",
                offsets.len(),
                self.points.len()
            )));
        }
        ControlPoints::new(
            self.points
                .iter()
                .zip(offsets)
                .map(|(p, d)| Coord::new(p.u + d[0], p.v + d[1]))
                .collect(),
        )
    }

    /// Checks that the points can anchor a spline: at least three, pairwise
    /// distinct and not all on one line.
    fn check_geometry(&self) -> Result<()> {
        let n = self.points.len();
        if n < 3 {
            return Err(Error::DegenerateGeometry(format!(
                "need at least 3 control points, got {n}"
            )));
        }
        for i in 0..n {
            for j in i + 1..n {
                if dist_sq(self.points[i], self.points[j]) < 1e-18 {
                    return Err(Error::DegenerateGeometry(format!(
                        "control points {i} and {j} coincide"
                    )));
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        let mu = self.points.iter().map(|p| p.u).sum::<f64>() * inv_n;
        let mv = self.points.iter().map(|p| p.v).sum::<f64>() * inv_n;
        let (mut suu, mut suv, mut svv) = (0.0, 0.0, 0.0);
        for p in &self.points {
            let (du, dv) = (p.u - mu, p.v - mv);
            suu += du * du;
            suv += du * dv;
            svv += dv * dv;
        }
        let trace = suu + svv;
        if suu * svv - suv * suv <= 1e-12 * trace * trace {
            return Err(Error::DegenerateGeometry(
                "control points are collinear".into(),
            ));
        }
        Ok(())
    }
}

/// The assembled and factorized spline system for one set of source points.
#[derive(Debug, Clone)]
pub struct TpsSystem {
    matrix: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
    source: ControlPoints,
}

/// Builds and factorizes the bordered spline system for `src`.
pub fn assemble_system(src: &ControlPoints) -> Result<TpsSystem> {
    TpsSystem::with_ridge(src, 0.0)
}

impl TpsSystem {
    /// Like [`assemble_system`], adding `ridge` to the diagonal of `K`.
    pub fn with_ridge(src: &ControlPoints, ridge: f64) -> Result<Self> {
        if !ridge.is_finite() || ridge < 0.0 {
            return Err(Error::invalid(format!("ridge must be >= 0, got {ridge}")));
        }
        src.check_geometry()?;
        let n = src.len();
        let pts = src.points();
        let mut a = DMatrix::<f64>::zeros(n + 3, n + 3);
        for i in 0..n {
            for j in i + 1..n {
                let k = kernel_sq(dist_sq(pts[i], pts[j]));
                a[(i, j)] = k;
                a[(j, i)] = k;
            }
            a[(i, i)] = ridge;
            let row = [1.0, pts[i].u, pts[i].v];
            for (c, &val) in row.iter().enumerate() {
                a[(i, n + c)] = val;
                a[(n + c, i)] = val;
            }
        }
        let lu = a.clone().lu();
        if !lu.is_invertible() {
            return Err(Error::SingularSystem(
                "factorization produced a zero pivot".into(),
            ));
        }
        Ok(Self {
            matrix: a,
            lu,
            source: src.clone(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn source(&self) -> &ControlPoints {
        &self.source
    }

    fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let x = self
            .lu
            .solve(rhs)
            .ok_or_else(|| Error::SingularSystem("solve failed".into()))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem(
                "solution has non-finite entries".into(),
            ));
        }
        Ok(x)
    }

    /// Spline coefficients sending each source point to the matching target.
    pub fn solve_coefficients(&self, tar: &ControlPoints) -> Result<TpsModel> {
        let n = self.source.len();
        if tar.len() != n {
            return Err(Error::invalid(format!(
                "{} target points for {} source points",
                tar.len(),
                n
            )));
        }
        let mut rhs = DMatrix::<f64>::zeros(n + 3, 2);
        for (i, p) in tar.points().iter().enumerate() {
            rhs[(i, 0)] = p.u;
            rhs[(i, 1)] = p.v;
        }
        let x = self.solve(&rhs)?;
        Ok(TpsModel {
            affine_u: [x[(n, 0)], x[(n + 1, 0)], x[(n + 2, 0)]],
            affine_v: [x[(n, 1)], x[(n + 1, 1)], x[(n + 2, 1)]],
            weights_u: (0..n).map(|i| x[(i, 0)]).collect(),
            weights_v: (0..n).map(|i| x[(i, 1)]).collect(),
            source: self.source.clone(),
        })
    }

    /// The cached linear map from control-point offsets to the dense
    /// displacement field of a `height x width` grid.
    pub fn field_operator(&self, height: usize, width: usize) -> Result<FieldOperator> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("field dimensions must be positive"));
        }
        let n = self.source.len();
        let pts = self.source.points();
        // Columns of A^-1 that multiply the target coordinates.
        let mut selector = DMatrix::<f64>::zeros(n + 3, n);
        for i in 0..n {
            selector[(i, i)] = 1.0;
        }
        let inv_cols = self.solve(&selector)?;

        let pixels = height * width;
        let mut phi = DMatrix::<f64>::zeros(pixels, n + 3);
        for r in 0..height {
            for c in 0..width {
                let p = Coord::new(r as f64, c as f64);
                let row = r * width + c;
                for (i, &q) in pts.iter().enumerate() {
                    phi[(row, i)] = kernel_sq(dist_sq(p, q));
                }
                phi[(row, n)] = 1.0;
                phi[(row, n + 1)] = p.u;
                phi[(row, n + 2)] = p.v;
            }
        }
        let dense = phi * inv_cols;
        let mut basis = vec![0.0; pixels * n];
        for row in 0..pixels {
            for j in 0..n {
                basis[row * n + j] = dense[(row, j)];
            }
        }
        Ok(FieldOperator {
            height,
            width,
            points: n,
            basis,
        })
    }
}

/// Solved spline coefficients for both map coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TpsModel {
    /// `(a1, au, av)` of the row map.
    pub affine_u: [f64; 3],
    /// `(b1, bu, bv)` of the column map.
    pub affine_v: [f64; 3],
    pub weights_u: Vec<f64>,
    pub weights_v: Vec<f64>,
    pub source: ControlPoints,
}

impl TpsModel {
    /// Evaluates both spline maps at `p`.
    pub fn eval(&self, p: Coord) -> Coord {
        let mut gu = self.affine_u[0] + self.affine_u[1] * p.u + self.affine_u[2] * p.v;
        let mut gv = self.affine_v[0] + self.affine_v[1] * p.u + self.affine_v[2] * p.v;
        for (i, &q) in self.source.points().iter().enumerate() {
            let k = kernel_sq(dist_sq(p, q));
            gu += self.weights_u[i] * k;
            gv += self.weights_v[i] * k;
        }
        Coord::new(gu, gv)
    }

    /// Evaluates the spline on every pixel of a `height x width` grid.
    pub fn eval_field(&self, height: usize, width: usize) -> Result<WarpField> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("field dimensions must be positive"));
        }
        let mut map_u = Vec::with_capacity(height * width);
        let mut map_v = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                let g = self.eval(Coord::new(r as f64, c as f64));
                map_u.push(g.u);
                map_v.push(g.v);
            }
        }
        Ok(WarpField {
            height,
            width,
            map_u,
            map_v,
        })
    }
}

/// Free-function form of [`TpsModel::eval_field`].
pub fn eval_field(model: &TpsModel, height: usize, width: usize) -> Result<WarpField> {
    model.eval_field(height, width)
}

/// Free-function form of [`TpsSystem::solve_coefficients`].
pub fn solve_coefficients(system: &TpsSystem, tar: &ControlPoints) -> Result<TpsModel> {
    system.solve_coefficients(tar)
}

/// For each output pixel, the source coordinate it samples from.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpField {
    pub height: usize,
    pub width: usize,
    pub map_u: Vec<f64>,
    pub map_v: Vec<f64>,
}

/// Dense linear map from control-point offsets to pixel displacements.
///
/// The full operator is block diagonal, `diag(B, B)`: the row and column
/// displacements use the same `(height * width) x N` matrix `B`, applied to
/// the row and column offset components respectively. Only `B` is stored.
#[derive(Debug, Clone)]
pub struct FieldOperator {
    height: usize,
    width: usize,
    points: usize,
    basis: Vec<f64>,
}

/// Builds the cached offset-to-displacement operator for `src` on a
/// `height x width` grid.
pub fn build_field_operator(
    src: &ControlPoints,
    height: usize,
    width: usize,
) -> Result<FieldOperator> {
    assemble_system(src)?.field_operator(height, width)
}

impl FieldOperator {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_points(&self) -> usize {
        self.points
    }

    /// Row `p` of `B`: the sensitivity of pixel `p`'s displacement to each
    /// control-point offset.
    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.basis[pixel * self.points..(pixel + 1) * self.points]
    }

    fn check_offsets(&self, offsets: &[[f64; 2]]) -> Result<()> {
        if offsets.len() != self.points {
            return Err(Error::invalid(format!(
                "{} offsets for an operator over {} points",
                offsets.len(),
                self.points
            )));
        }
        Ok(())
    }

    /// Displacement field `(du, dv)` for the given offsets.
    pub fn apply(&self, offsets: &[[f64; 2]]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_offsets(offsets)?;
        let n = self.points;
        let (ou, ov): (Vec<f64>, Vec<f64>) = offsets.iter().map(|o| (o[0], o[1])).unzip();
        let pixels = self.height * self.width;
        let mut du = vec![0.0; pixels];
        let mut dv = vec![0.0; pixels];
        for p in 0..pixels {
            let row = &self.basis[p * n..(p + 1) * n];
            let (mut su, mut sv) = (0.0, 0.0);
            for j in 0..n {
                su += row[j] * ou[j];
                sv += row[j] * ov[j];
            }
            du[p] = su;
            dv[p] = sv;
        }
        Ok((du, dv))
    }

    /// Adjoint of [`apply`](Self::apply): pulls per-pixel gradients on the
    /// displacement back onto the offsets. Accumulation order is fixed.
    pub fn apply_transpose(&self, grad_u: &[f64], grad_v: &[f64]) -> Result<Vec<[f64; 2]>> {
        let pixels = self.height * self.width;
        if grad_u.len() != pixels || grad_v.len() != pixels {
            return Err(Error::invalid("displacement gradient has the wrong size"));
        }
        let n = self.points;
        let mut gu = vec![0.0; n];
        let mut gv = vec![0.0; n];
        for p in 0..pixels {
            let (a, b) = (grad_u[p], grad_v[p]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            let row = &self.basis[p * n..(p + 1) * n];
            for j in 0..n {
                gu[j] += row[j] * a;
                gv[j] += row[j] * b;
            }
        }
        Ok(gu.into_iter().zip(gv).map(|(a, b)| [a, b]).collect())
    }
}
