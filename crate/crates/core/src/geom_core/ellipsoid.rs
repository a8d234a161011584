use nalgebra::{DMatrix, SymmetricEigen};

use super::{dot, Point};
use crate::error::{Error, Result};

/// `E = {y : (y−c)ᵀA(y−c) ≤ 1}` with `A` symmetric positive definite.
///
/// The eigen-decomposition of `A` is cached: `axes` holds unit principal
/// directions as columns and `semi` the matching semi-axis lengths.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    center: Point,
    shape: DMatrix<f64>,
    axes: DMatrix<f64>,
    semi: Vec<f64>,
}

impl Ellipsoid {
    pub fn new(center: Point, shape: DMatrix<f64>) -> Result<Self> {
        let d = center.len();
        if shape.nrows() != d || shape.ncols() != d {
            return Err(Error::DimMismatch { expected: d, got: shape.nrows() });
        }
        if center.iter().chain(shape.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("ellipsoid"));
        }
        let scale = shape.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
        let asym = (&shape - shape.transpose()).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if asym > 1e-10 * scale {
            return Err(Error::Invariant(format!("shape matrix asymmetric by {asym:e}")));
        }
        let sym = (&shape + shape.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Degenerate("shape matrix is not positive definite".into()));
        }
        let semi = eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()).collect();
        Ok(Self { center, shape: sym, axes: eig.eigenvectors, semi })
    }

    /// Rebuilds an ellipsoid from stored parts without re-decomposing `shape`.
    pub(crate) fn from_parts(center: Point, shape: DMatrix<f64>, axes: DMatrix<f64>, semi: Vec<f64>) -> Result<Self> {
        let d = center.len();
        if shape.shape() != (d, d) || axes.shape() != (d, d) || semi.len() != d {
            return Err(Error::DimMismatch { expected: d, got: shape.nrows() });
        }
        if center.iter().chain(shape.iter()).chain(axes.iter()).chain(semi.iter()).any(|x| !x.is_finite())
            || semi.iter().any(|&s| !(s > 0.0))
        {
            return Err(Error::NonFinite("ellipsoid"));
        }
        Ok(Self { center, shape, axes, semi })
    }

    /// Ball of radius `r` at `center`.
    pub fn ball(center: Point, r: f64) -> Result<Self> {
        let d = center.len();
        Self::new(center, DMatrix::identity(d, d) / (r * r))
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &Point {
        &self.center
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    /// Unit principal axes (columns) paired with `semi_axes`.
    pub fn axes(&self) -> &DMatrix<f64> {
        &self.axes
    }

    pub fn semi_axes(&self) -> &[f64] {
        &self.semi
    }

    pub fn max_semi_axis(&self) -> f64 {
        self.semi.iter().cloned().fold(0.0, f64::max)
    }

    /// `(y−c)ᵀA(y−c)`.
    pub fn quad(&self, y: &[f64]) -> f64 {
        let d = self.dim();
        let mut s = 0.0;
        for i in 0..d {
            let yi = y[i] - self.center[i];
            for j in 0..d {
                s += yi * self.shape[(i, j)] * (y[j] - self.center[j]);
            }
        }
        s
    }

    pub fn contains(&self, y: &[f64], slack: f64) -> bool {
        self.quad(y) <= 1.0 + slack
    }

    /// `vᵀA⁻¹v`, the squared half-width in direction `v` for unit `v`.
    pub fn inv_quad(&self, v: &[f64]) -> f64 {
        let d = self.dim();
        let mut s = 0.0;
        for k in 0..d {
            let mut p = 0.0;
            for i in 0..d {
                p += self.axes[(i, k)] * v[i];
            }
            s += p * p * self.semi[k] * self.semi[k];
        }
        s
    }

    /// Support function `max_{y∈E} v·y`.
    pub fn support(&self, v: &[f64]) -> f64 {
        dot(self.center.as_slice(), v) + self.inv_quad(v).sqrt()
    }

    /// Parameter interval `[t0, t1]` where the line `o + t·u` meets `E`.
    pub fn line_interval(&self, o: &[f64], u: &[f64]) -> Option<(f64, f64)> {
        let d = self.dim();
        let mut au = vec![0.0; d];
        let mut ao = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                au[i] += self.shape[(i, j)] * u[j];
                ao[i] += self.shape[(i, j)] * (o[j] - self.center[j]);
            }
        }
        let a = dot(u, &au);
        let rel: Vec<f64> = (0..d).map(|i| o[i] - self.center[i]).collect();
        let b = dot(u, &ao);
        let c = dot(&rel, &ao) - 1.0;
        let disc = b * b - a * c;
        if disc < 0.0 || a <= 0.0 {
            return None;
        }
        let s = disc.sqrt();
        Some(((-b - s) / a, (-b + s) / a))
    }

    /// Parameter interval where the ray `{t·u : t ≥ 0}` meets `E`.
    pub fn ray_interval(&self, u: &[f64]) -> Option<(f64, f64)> {
        let zero = vec![0.0; self.dim()];
        let (t0, t1) = self.line_interval(&zero, u)?;
        if t1 < 0.0 {
            None
        } else {
            Some((t0.max(0.0), t1))
        }
    }

    /// Point `c + Σ_k semi_k · w_k · axis_k` for a unit `w` in axis coordinates.
    pub fn boundary_point(&self, w: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut y = self.center.as_slice().to_vec();
        for k in 0..d {
            let s = self.semi[k] * w[k];
            for i in 0..d {
                y[i] += self.axes[(i, k)] * s;
            }
        }
        y
    }

    /// Same center, shape `A/λ²`.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            center: self.center.clone(),
            shape: &self.shape / (lambda * lambda),
            axes: self.axes.clone(),
            semi: self.semi.iter().map(|s| s * lambda).collect(),
        }
    }

    /// Half-extents of the box along the principal axes, i.e. the semi-axes.
    pub fn principal_box(&self) -> (DMatrix<f64>, Vec<f64>) {
        (self.axes.clone(), self.semi.clone())
    }

    /// Symmetric square root `A^{1/2}`.
    fn sqrt_shape(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut diag = DMatrix::zeros(d, d);
        for k in 0..d {
            diag[(k, k)] = 1.0 / self.semi[k];
        }
        &self.axes * diag * self.axes.transpose()
    }
}

pub fn ellipsoid_scale(e: &Ellipsoid, lambda: f64) -> Ellipsoid {
    e.scaled(lambda)
}

/// Whether `E1 ∩ E2 ≠ ∅`; tangency counts as intersecting.
///
/// Whitens `E1` to the unit ball, diagonalizes the transformed `E2`, and
/// maximizes the concave separation function
/// `g(λ) = Σ_k λ(1−λ)μ_k w_k² / (λ + (1−λ)μ_k)` over `λ ∈ [0, 1]` by
/// golden-section search; the bodies are disjoint iff `max g > 1`.
pub fn ellipsoids_intersect(e1: &Ellipsoid, e2: &Ellipsoid) -> bool {
    let diff: Vec<f64> = (0..e1.dim()).map(|i| e2.center[i] - e1.center[i]).collect();
    let dd = dot(&diff, &diff).sqrt();
    if dd > e1.max_semi_axis() + e2.max_semi_axis() {
        return false;
    }
    if e1.contains(e2.center.as_slice(), 0.0) || e2.contains(e1.center.as_slice(), 0.0) {
        return true;
    }
    let root = e1.sqrt_shape();
    let mut inv_root = e1.axes.clone();
    for k in 0..e1.dim() {
        let s = e1.semi[k];
        for i in 0..e1.dim() {
            inv_root[(i, k)] *= s;
        }
    }
    let inv_root = &inv_root * e1.axes.transpose();
    let b = &inv_root * &e2.shape * &inv_root;
    let b = (&b + b.transpose()) * 0.5;
    let z = &root * nalgebra::DVector::from_vec(diff);
    let eig = SymmetricEigen::new(b);
    let w = eig.eigenvectors.transpose() * z;
    let mu: Vec<f64> = eig.eigenvalues.iter().map(|m| m.max(1e-300)).collect();
    let g = |l: f64| -> f64 {
        mu.iter()
            .zip(w.iter())
            .map(|(&m, &wk)| l * (1.0 - l) * m * wk * wk / (l + (1.0 - l) * m))
            .sum()
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut bnd) = (0.0f64, 1.0f64);
    let mut x1 = bnd - inv_phi * (bnd - a);
    let mut x2 = a + inv_phi * (bnd - a);
    let (mut f1, mut f2) = (g(x1), g(x2));
    while bnd - a > 1e-10 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (bnd - a);
            f2 = g(x2);
        } else {
            bnd = x2;
            x2 = x1;
            f2 = f1;
            x1 = bnd - inv_phi * (bnd - a);
            f1 = g(x1);
        }
        if f1.max(f2) > 1.0 + 1e-10 {
            return false;
        }
    }
    g(0.5 * (a + bnd)).max(f1).max(f2) <= 1.0 + 1e-10
}
