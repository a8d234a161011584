//! Khachiyan-type minimum-volume enclosing ellipsoids with Wolfe–Atwood away steps.

use nalgebra::{DMatrix, DVector};

use super::{Ellipsoid, Point};
use crate::error::{Error, Result};

/// Outcome of a centered fit: design weights and the worst leverage `max κ_i`.
struct Design {
    weights: Vec<f64>,
    kappa_max: f64,
}

fn moment(points: &[f64], dim: usize, w: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    for (p, &wi) in points.chunks_exact(dim).zip(w) {
        if wi == 0.0 {
            continue;
        }
        for i in 0..dim {
            let s = wi * p[i];
            for j in 0..dim {
                m[(i, j)] += s * p[j];
            }
        }
    }
    m
}

fn leverages(points: &[f64], dim: usize, minv: &DMatrix<f64>) -> Vec<f64> {
    points
        .chunks_exact(dim)
        .map(|p| {
            let mut s = 0.0;
            for i in 0..dim {
                let mut r = 0.0;
                for j in 0..dim {
                    r += minv[(i, j)] * p[j];
                }
                s += p[i] * r;
            }
            s
        })
        .collect()
}

/// D-optimal design for the symmetric set `{±p_i}`: iterate until
/// `max_i p_iᵀM⁻¹p_i ≤ dim·(1+tol)` with `M = Σ u_i p_i p_iᵀ`.
fn centered_design(points: &[f64], dim: usize, tol: f64) -> Result<Design> {
    let m = points.len() / dim;
    if m == 0 {
        return Err(Error::Degenerate("no points for ellipsoid fit".into()));
    }
    let mut u = vec![1.0 / m as f64; m];
    let invert = |mm: DMatrix<f64>| -> Result<DMatrix<f64>> {
        mm.cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::Degenerate("points do not span the space".into()))
    };
    let mut minv = invert(moment(points, dim, &u))?;
    let mut kappa = leverages(points, dim, &minv);
    let d = dim as f64;
    let cap = ((10.0 * d / tol).ceil() as usize).max(1000);
    let mut g = vec![0.0; dim];
    for it in 0..cap {
        let (mut j, mut kj) = (0, f64::NEG_INFINITY);
        let (mut k, mut kk) = (usize::MAX, f64::INFINITY);
        for (i, &ki) in kappa.iter().enumerate() {
            if ki > kj {
                kj = ki;
                j = i;
            }
            if u[i] > 0.0 && ki < kk {
                kk = ki;
                k = i;
            }
        }
        if kj <= d * (1.0 + tol) {
            return Ok(Design { weights: u, kappa_max: kj });
        }
        let (idx, kap) = if kj / d - 1.0 >= 1.0 - kk / d { (j, kj) } else { (k, kk) };
        let mut tau = (kap - d) / (d * (kap - 1.0));
        if kap < d {
            // away step; with κ ≤ 1 the line optimum lies past the floor
            let floor = -u[idx] / (1.0 - u[idx]);
            tau = if kap > 1.0 { tau.max(floor) } else { floor };
        }
        if !tau.is_finite() || tau == 0.0 {
            return Err(Error::NoConvergence { iters: it, residual: kj / d - 1.0 });
        }
        for w in u.iter_mut() {
            *w *= 1.0 - tau;
        }
        u[idx] += tau;
        if u[idx] < 1e-300 {
            u[idx] = 0.0;
        }
        if it % 64 == 63 {
            minv = invert(moment(points, dim, &u))?;
            kappa = leverages(points, dim, &minv);
            continue;
        }
        let p = &points[idx * dim..(idx + 1) * dim];
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = (0..dim).map(|c| minv[(i, c)] * p[c]).sum();
        }
        let denom = (1.0 - tau) + tau * kap;
        let inv1 = 1.0 / (1.0 - tau);
        for (ki, q) in kappa.iter_mut().zip(points.chunks_exact(dim)) {
            let pg: f64 = q.iter().zip(&g).map(|(a, b)| a * b).sum();
            *ki = inv1 * (*ki - tau * pg * pg / denom);
        }
        for r in 0..dim {
            for c in 0..dim {
                minv[(r, c)] = inv1 * (minv[(r, c)] - tau * g[r] * g[c] / denom);
            }
        }
    }
    let kmax = kappa.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Err(Error::NoConvergence { iters: cap, residual: kmax / d - 1.0 })
}

/// Inscribed ellipsoid of the slab body `{y : |a_i·(y−x)| ≤ δ_i}` centered at `x`.
///
/// Fits the enclosing ellipsoid `{z : zᵀM⁻¹z ≤ κ_max}` of `{±a_i/δ_i}` and
/// returns its polar `{y : κ_max·(y−x)ᵀM(y−x) ≤ 1}`. The polar lies inside
/// the slab body exactly, and the body lies inside the polar scaled by
/// `sqrt(d(1+tol))`.
pub fn inscribed_ellipsoid_sym(x: &[f64], slabs: &[(&[f64], f64)], tol: f64) -> Result<Ellipsoid> {
    let dim = x.len();
    let mut pts = Vec::with_capacity(slabs.len() * dim);
    for (a, w) in slabs {
        if !(*w > 0.0) {
            return Err(Error::Invariant(format!("slab half-width {w} is not positive")));
        }
        pts.extend(a.iter().map(|ai| ai / w));
    }
    let (weights, kappa_max) = active_design(&pts, dim, tol).map_err(|e| match e {
        Error::Degenerate(_) => Error::Unbounded(vec![]),
        e => e,
    })?;
    let shape = moment(&pts, dim, &weights) * kappa_max;
    Ellipsoid::new(Point::from_row_slice(x), shape)
}

/// Centered design fitted on a growing subset of the largest points.
///
/// A subset design whose leverage bound holds for every point is a design
/// for the whole set, so only violators need to be added.
fn active_design(pts: &[f64], dim: usize, tol: f64) -> Result<(Vec<f64>, f64)> {
    let m = pts.len() / dim;
    if m <= 8 * dim {
        let d = centered_design(pts, dim, tol)?;
        return Ok((d.weights, d.kappa_max));
    }
    let norms: Vec<f64> =
        pts.chunks_exact(dim).map(|p| p.iter().map(|v| v * v).sum::<f64>()).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let mut active: Vec<usize> = order[..4 * dim].to_vec();
    for k in 0..dim {
        let best = (0..m).max_by(|&a, &b| pts[a * dim + k].abs().total_cmp(&pts[b * dim + k].abs()));
        active.extend(best);
    }
    let d = dim as f64;
    loop {
        active.sort_unstable();
        active.dedup();
        let sub: Vec<f64> = active.iter().flat_map(|&i| pts[i * dim..(i + 1) * dim].iter().copied()).collect();
        let design = match centered_design(&sub, dim, tol) {
            Ok(x) => x,
            Err(Error::Degenerate(_)) if active.len() < m => {
                let all = centered_design(pts, dim, tol)?;
                return Ok((all.weights, all.kappa_max));
            }
            Err(e) => return Err(e),
        };
        let mut weights = vec![0.0; m];
        for (&i, &w) in active.iter().zip(&design.weights) {
            weights[i] = w;
        }
        // a subset design can be numerically rank-deficient; refit on all points
        let Some(minv) = moment(pts, dim, &weights).cholesky().map(|c| c.inverse()) else {
            let all = centered_design(pts, dim, tol)?;
            return Ok((all.weights, all.kappa_max));
        };
        let kappa = leverages(pts, dim, &minv);
        let mut viol: Vec<usize> = (0..m).filter(|&i| kappa[i] > d * (1.0 + tol)).collect();
        if viol.is_empty() {
            let kmax = kappa.iter().cloned().fold(design.kappa_max, f64::max);
            return Ok((weights, kmax));
        }
        viol.sort_by(|&a, &b| kappa[b].total_cmp(&kappa[a]));
        viol.truncate(4 * dim);
        active.extend(viol);
    }
}

/// Enclosing ellipsoid of a point cloud together with its design weights.
#[derive(Debug, Clone)]
pub struct Mvee {
    pub ellipsoid: Ellipsoid,
    /// `max_i κ_i / (d+1) − 1` at termination of the lifted fit.
    pub residual: f64,
}

/// Approximate minimum-volume enclosing ellipsoid of `points` (flat, row-major).
///
/// The returned ellipsoid contains every point exactly; its volume is within
/// the usual `(1+tol)` factor of optimal.
pub fn mvee_points(points: &[f64], dim: usize, tol: f64) -> Result<Mvee> {
    let n = points.len() / dim;
    if n <= dim {
        return Err(Error::Degenerate(format!("{n} points cannot span {dim} dimensions")));
    }
    let mut lifted = Vec::with_capacity(n * (dim + 1));
    for p in points.chunks_exact(dim) {
        lifted.extend_from_slice(p);
        lifted.push(1.0);
    }
    let (weights, kappa_max) = active_design(&lifted, dim + 1, tol).map_err(|e| match e {
        Error::Degenerate(_) => Error::Degenerate(deficiency(points, dim)),
        e => e,
    })?;
    let u = &weights;
    let mut c = DVector::zeros(dim);
    for (p, &w) in points.chunks_exact(dim).zip(u) {
        for i in 0..dim {
            c[i] += w * p[i];
        }
    }
    let mut cov = moment(points, dim, u);
    cov -= &c * c.transpose();
    let q0 = cov
        .cholesky()
        .map(|ch| ch.inverse())
        .ok_or_else(|| Error::Degenerate(deficiency(points, dim)))?;
    let mut rmax: f64 = 0.0;
    for p in points.chunks_exact(dim) {
        let y = DVector::from_row_slice(p) - &c;
        rmax = rmax.max((y.transpose() * &q0 * &y)[(0, 0)]);
    }
    let ellipsoid = Ellipsoid::new(c, q0 / rmax)?;
    Ok(Mvee { ellipsoid, residual: kappa_max / (dim + 1) as f64 - 1.0 })
}

/// Describes how many directions the centered point cloud fails to span.
fn deficiency(points: &[f64], dim: usize) -> String {
    let n = points.len() / dim;
    let mut mean = DVector::zeros(dim);
    for p in points.chunks_exact(dim) {
        mean += DVector::from_row_slice(p);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for p in points.chunks_exact(dim) {
        let y = DVector::from_row_slice(p) - &mean;
        cov += &y * y.transpose();
    }
    let eig = cov.symmetric_eigenvalues();
    let top = eig.iter().cloned().fold(0.0, f64::max);
    let rank = eig.iter().filter(|&&l| l > 1e-12 * top.max(1e-300)).count();
    format!("points span only {rank} of {dim} dimensions (deficient by {})", dim - rank)
}
