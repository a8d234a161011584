//! Core geometric types and primitives.
//!
//! Points are `nalgebra::DVector<f64>` at the API boundary; hot loops work on
//! slices. Dimension is a runtime value in `2..=8`.

mod affine;
mod canonical;
mod directions;
mod ellipsoid;
pub mod io;
pub mod lp;
mod mvee;
mod polar;
mod polytope;

pub use affine::AffineMap;
pub use canonical::{canonicalize_hpoly, canonicalize_points, CanonicalBody, CanonicalShape};
pub use directions::{cube_facet_grid, fibonacci_sphere, random_unit, sphere_lattice};
pub use ellipsoid::{ellipsoid_scale, ellipsoids_intersect, Ellipsoid};
pub use mvee::{inscribed_ellipsoid_sym, mvee_points, Mvee};
pub use polar::{polar_halfspaces_to_points, polar_points_to_halfspaces};
pub use polytope::{boundary_distance, erode, ray_shoot, HPolytope, Halfspace, PointSet};

use crate::error::{Error, Result};

pub type Point = nalgebra::DVector<f64>;

/// Tolerance for Khachiyan-type ellipsoid fits.
pub const FIT_TOL: f64 = 1e-3;
pub const MIN_DIM: usize = 2;
pub const MAX_DIM: usize = 8;

pub fn check_dim(d: usize) -> Result<()> {
    if (MIN_DIM..=MAX_DIM).contains(&d) {
        Ok(())
    } else {
        Err(Error::Dimension(d))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist2(a, b).sqrt()
}

pub fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let n = norm(a);
    if n > 0.0 && n.is_finite() {
        Some(a.iter().map(|x| x / n).collect())
    } else {
        None
    }
}

pub fn scaled(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}
