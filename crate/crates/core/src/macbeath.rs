//! Macbeath regions `M^λ(x) = x + λ((P−x) ∩ (x−P))` over an H-polytope,
//! their fitted ellipsoids, and shadow membership.
//!
//! Regions stay in slab form: `{y : |a_i·(y−x)| ≤ λ·w_i}` with
//! `w_i = b_i − a_i·x`.

use std::io::Write;

use rand::Rng;

use crate::geom_core::lp::feasible;
use crate::geom_core::{
    dot, inscribed_ellipsoid_sym, random_unit, ray_shoot, Ellipsoid, HPolytope, Point,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct MacbeathRegion {
    center: Vec<f64>,
    normals: Vec<f64>,
    widths: Vec<f64>,
    lambda: f64,
}

pub fn macbeath_region(p: &HPolytope, x: &[f64], lambda: f64) -> Result<MacbeathRegion> {
    if x.len() != p.dim() {
        return Err(Error::DimMismatch { expected: p.dim(), got: x.len() });
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("scale {lambda} must be positive")));
    }
    let mut widths = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let w = p.offset(i) - dot(p.normal(i), x);
        if !(w > 0.0) {
            return Err(Error::Outside(w));
        }
        widths.push(w);
    }
    let normals = (0..p.len()).flat_map(|i| p.normal(i).iter().copied()).collect();
    Ok(MacbeathRegion { center: x.to_vec(), normals, widths, lambda })
}

impl MacbeathRegion {
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }

    pub fn normal(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.normals[i * d..(i + 1) * d]
    }

    /// Half-width of slab `i` at scale 1.
    pub fn width(&self, i: usize) -> f64 {
        self.widths[i]
    }

    /// Same center and slabs at scale `lambda`.
    pub fn rescaled(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    /// `(a, λw)` pairs for the symmetric slab system.
    pub fn slabs(&self) -> Vec<(&[f64], f64)> {
        (0..self.len()).map(|i| (self.normal(i), self.lambda * self.widths[i])).collect()
    }

    /// The region as `2n` halfspace rows `a·y ≤ b`.
    pub fn rows(&self) -> Vec<(Vec<f64>, f64)> {
        let mut out = Vec::with_capacity(2 * self.len());
        for i in 0..self.len() {
            let a = self.normal(i);
            let ax = dot(a, &self.center);
            let hw = self.lambda * self.widths[i];
            out.push((a.to_vec(), ax + hw));
            out.push((a.iter().map(|v| -v).collect(), hw - ax));
        }
        out
    }

    /// Largest `|a_i·(y−x)| / (λw_i)`; at most 1 inside the region.
    pub fn gauge(&self, y: &[f64]) -> f64 {
        let rel: Vec<f64> = y.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        (0..self.len())
            .map(|i| dot(self.normal(i), &rel).abs() / (self.lambda * self.widths[i]))
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, y: &[f64], slack: f64) -> bool {
        self.gauge(y) <= 1.0 + slack
    }

    /// Parameter interval of the line `o + t·u` inside the region.
    pub fn line_interval(&self, o: &[f64], u: &[f64]) -> Option<(f64, f64)> {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..self.len() {
            let a = self.normal(i);
            let au = dot(a, u);
            let r = dot(a, o) - dot(a, &self.center);
            let hw = self.lambda * self.widths[i];
            if au.abs() < 1e-300 {
                if r.abs() > hw {
                    return None;
                }
                continue;
            }
            let (t0, t1) = ((-hw - r) / au, (hw - r) / au);
            lo = lo.max(t0.min(t1));
            hi = hi.min(t0.max(t1));
            if lo > hi {
                return None;
            }
        }
        Some((lo, hi))
    }

    /// Whether two regions share a point, by LP feasibility of both slab systems.
    pub fn intersects(&self, other: &MacbeathRegion) -> Result<bool> {
        let mut rows = self.rows();
        rows.extend(other.rows());
        let r: Vec<(&[f64], f64)> = rows.iter().map(|(a, b)| (&a[..], *b)).collect();
        feasible(&r, self.dim())
    }

    /// Hit-and-run samples from the region, started at its center.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let mut y = self.center.clone();
        let mut out = Vec::with_capacity(n);
        let thin = 2 * d;
        while out.len() < n {
            for _ in 0..thin {
                let u = random_unit(rng, d);
                if let Some((lo, hi)) = self.line_interval(&y, &u) {
                    let t = rng.gen_range(lo..=hi);
                    for k in 0..d {
                        y[k] += t * u[k];
                    }
                }
            }
            out.push(y.clone());
        }
        out
    }

    /// Writes the slab system in the halfspace file format.
    pub fn write_slabs<W: Write>(&self, mut w: W) -> Result<()> {
        for (a, b) in self.rows() {
            let mut line: Vec<String> = a.iter().map(|x| format!("{x:?}")).collect();
            line.push(format!("{b:?}"));
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Inscribed fit of `M^λ(x)` and its circumscribing scale-up.
#[derive(Debug, Clone)]
pub struct MacbeathEllipsoid {
    pub inner: Ellipsoid,
    /// `√d·(1+tol)`.
    pub outer_factor: f64,
    pub lambda: f64,
}

impl MacbeathEllipsoid {
    pub fn center(&self) -> &Point {
        self.inner.center()
    }

    /// `E^λ(x)`: contains `M^λ(x)` and lies in `M^{λ·outer_factor}(x)`.
    pub fn exported(&self) -> Ellipsoid {
        self.inner.scaled(self.outer_factor)
    }

    /// `E^μ(x)` for another scale `μ`, by rescaling about the center.
    pub fn exported_at(&self, mu: f64) -> Ellipsoid {
        self.inner.scaled(self.outer_factor * mu / self.lambda)
    }
}

pub fn macbeath_ellipsoid(p: &HPolytope, x: &[f64], lambda: f64, tol: f64) -> Result<MacbeathEllipsoid> {
    let region = macbeath_region(p, x, lambda)?;
    region_ellipsoid(&region, tol)
}

/// Ellipsoid fit of an existing region.
pub fn region_ellipsoid(region: &MacbeathRegion, tol: f64) -> Result<MacbeathEllipsoid> {
    let inner = inscribed_ellipsoid_sym(region.center(), &region.slabs(), tol)?;
    let d = region.dim() as f64;
    Ok(MacbeathEllipsoid { inner, outer_factor: d.sqrt() * (1.0 + tol), lambda: region.lambda })
}

/// A region that can cast a shadow from the origin.
pub trait ShadowCaster {
    /// Parameter interval of the line `t·p` inside the region.
    fn origin_line(&self, p: &[f64]) -> Option<(f64, f64)>;
}

impl ShadowCaster for Ellipsoid {
    fn origin_line(&self, p: &[f64]) -> Option<(f64, f64)> {
        self.line_interval(&vec![0.0; p.len()], p)
    }
}

impl ShadowCaster for MacbeathRegion {
    fn origin_line(&self, p: &[f64]) -> Option<(f64, f64)> {
        self.line_interval(&vec![0.0; p.len()], p)
    }
}

/// Whether the segment from the origin to `p` meets `r`.
pub fn in_shadow<R: ShadowCaster + ?Sized>(r: &R, p: &[f64]) -> bool {
    match r.origin_line(p) {
        Some((t0, t1)) => t0 <= 1.0 && t1 >= 0.0,
        None => false,
    }
}

/// Samples of `shadow(region)` with respect to `p`: points `s·y` with `y` in
/// the region and `s ∈ [1, ray(y)]`, plus the boundary hit of each ray.
///
/// Returns `(interior samples, boundary samples with facet index)`.
pub fn sample_shadow<R: Rng + ?Sized>(
    p: &HPolytope,
    region: &MacbeathRegion,
    rng: &mut R,
    n: usize,
) -> Result<(Vec<Vec<f64>>, Vec<(Vec<f64>, usize)>)> {
    let mut inner = Vec::with_capacity(n);
    let mut hits = Vec::with_capacity(n);
    for y in region.sample(rng, n) {
        let r = dot(&y, &y).sqrt();
        if r == 0.0 {
            continue;
        }
        let u: Vec<f64> = y.iter().map(|v| v / r).collect();
        let (t, idx) = ray_shoot(p, &u)?;
        let s = rng.gen_range(r..=t.max(r));
        inner.push(u.iter().map(|v| v * s).collect());
        hits.push((u.iter().map(|v| v * t).collect(), idx));
    }
    Ok((inner, hits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom_core::boundary_distance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn square() -> HPolytope {
        HPolytope::cube(2, 0.3)
    }

    fn box_of(r: &MacbeathRegion) -> Vec<(f64, f64)> {
        (0..r.dim())
            .map(|k| {
                let mut u = vec![0.0; r.dim()];
                u[k] = 1.0;
                let (lo, hi) = r.line_interval(r.center(), &u).unwrap();
                (r.center()[k] + lo, r.center()[k] + hi)
            })
            .collect()
    }

    fn random_polytope(rng: &mut ChaCha8Rng, d: usize, m: usize) -> HPolytope {
        let rows: Vec<(Vec<f64>, f64)> =
            (0..m).map(|_| (random_unit(rng, d), rng.gen_range(0.2..0.5))).collect();
        HPolytope::from_rows(d, &rows).unwrap()
    }

    #[test]
    fn square_reflection() {
        let r = macbeath_region(&square(), &[0.1, 0.0], 1.0).unwrap();
        let b = box_of(&r);
        assert!((b[0].0 + 0.1).abs() < 1e-12 && (b[0].1 - 0.3).abs() < 1e-12);
        assert!((b[1].0 + 0.3).abs() < 1e-12 && (b[1].1 - 0.3).abs() < 1e-12);
        let r = r.rescaled(0.2);
        let b = box_of(&r);
        assert!((b[0].0 - 0.06).abs() < 1e-12 && (b[0].1 - 0.14).abs() < 1e-12);
        assert!((b[1].0 + 0.06).abs() < 1e-12 && (b[1].1 - 0.06).abs() < 1e-12);
    }

    #[test]
    fn boundary_center_rejected() {
        assert!(matches!(macbeath_region(&square(), &[0.3, 0.0], 1.0), Err(Error::Outside(_))));
    }

    #[test]
    fn region_is_body_and_reflection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let p = random_polytope(&mut rng, 3, 30);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.05..0.05)).collect();
            let r = macbeath_region(&p, &x, 1.0).unwrap();
            for y in r.sample(&mut rng, 1000) {
                let refl: Vec<f64> = (0..3).map(|k| 2.0 * x[k] - y[k]).collect();
                assert!(p.contains(&y, 1e-12) && p.contains(&refl, 1e-12));
            }
        }
    }

    #[test]
    fn square_ellipsoids() {
        let tol = 1e-3;
        let e = macbeath_ellipsoid(&square(), &[0.0, 0.0], 1.0, tol).unwrap();
        for s in e.inner.semi_axes() {
            assert!((s - 0.3).abs() < 1e-9);
        }
        let r = 0.3 * 2f64.sqrt() * (1.0 + tol);
        for s in e.exported().semi_axes() {
            assert!((s - r).abs() < 1e-9);
        }
        let e = macbeath_ellipsoid(&square(), &[0.1, 0.0], 0.2, tol).unwrap();
        let ax = e.inner.axes();
        let mut pairs: Vec<(f64, f64)> =
            (0..2).map(|k| (ax[(0, k)].abs(), e.inner.semi_axes()[k])).collect();
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        assert!((pairs[0].1 - 0.04).abs() < 1e-9 && (pairs[1].1 - 0.06).abs() < 1e-9);
    }

    #[test]
    fn ellipsoid_sandwich_random() {
        let tol = 1e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for d in [2, 3, 4] {
            let p = random_polytope(&mut rng, d, 40);
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.05..0.05)).collect();
            let lambda = 0.2;
            let r = macbeath_region(&p, &x, lambda).unwrap();
            let e = region_ellipsoid(&r, tol).unwrap();
            let ex = e.exported();
            for y in r.sample(&mut rng, 1000) {
                assert!(ex.contains(&y, 1e-9));
            }
            let big = r.rescaled(lambda * (d as f64).sqrt() * (1.0 + 2.0 * tol));
            for _ in 0..1000 {
                let w = random_unit(&mut rng, d);
                assert!(big.contains(&ex.boundary_point(&w), 1e-9));
            }
        }
    }

    #[test]
    fn shadow_examples() {
        let disk = Ellipsoid::ball(Point::from_vec(vec![0.2, 0.0]), 0.05).unwrap();
        assert!(in_shadow(&disk, &[0.29, 0.0]));
        assert!(!in_shadow(&disk, &[0.0, 0.29]));
        assert!(!in_shadow(&disk, &[0.1, 0.0]));
    }

    #[test]
    fn shadow_matches_segment_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = square();
        let mut checked = 0;
        for _ in 0..300 {
            let c = vec![rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25)];
            let x = c.clone();
            let Ok(reg) = macbeath_region(&p, &x, rng.gen_range(0.05..0.3)) else { continue };
            let e = Ellipsoid::ball(Point::from_vec(c), rng.gen_range(0.01..0.08)).unwrap();
            let q = vec![rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
            let n = 10_000;
            let hit_e = (0..=n).any(|k| e.contains(&scaled(&q, k as f64 / n as f64), 0.0));
            let hit_r = (0..=n).any(|k| reg.contains(&scaled(&q, k as f64 / n as f64), 0.0));
            let near_e = (0..=n).any(|k| (e.quad(&scaled(&q, k as f64 / n as f64)) - 1.0).abs() < 1e-6);
            if !near_e {
                assert_eq!(in_shadow(&e, &q), hit_e);
            }
            if hit_r {
                assert!(in_shadow(&reg, &q));
            }
            checked += 1;
        }
        assert!(checked > 100);
    }

    fn scaled(a: &[f64], s: f64) -> Vec<f64> {
        a.iter().map(|v| v * s).collect()
    }

    #[test]
    fn lp_intersection_of_regions() {
        let p = square();
        let a = macbeath_region(&p, &[0.1, 0.0], 0.2).unwrap();
        let b = macbeath_region(&p, &[-0.1, 0.0], 0.2).unwrap();
        assert!(!a.intersects(&b).unwrap());
        let c = macbeath_region(&p, &[0.15, 0.0], 0.2).unwrap();
        assert!(a.intersects(&c).unwrap());
    }

    #[test]
    fn shadow_samples_lie_in_polytope() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = square();
        let r = macbeath_region(&p, &[0.25, 0.02], 0.2).unwrap();
        let (inner, hits) = sample_shadow(&p, &r, &mut rng, 200).unwrap();
        for z in &inner {
            assert!(p.contains(z, 1e-12));
            assert!(in_shadow(&r, z));
        }
        for (h, idx) in &hits {
            assert!(boundary_distance(&p, h).unwrap() < 1e-12);
            assert!((dot(p.normal(*idx), h) - p.offset(*idx)).abs() < 1e-12);
        }
    }

    #[test]
    fn slab_dump_reads_back() {
        let r = macbeath_region(&square(), &[0.1, 0.0], 0.2).unwrap();
        let mut buf = Vec::new();
        r.write_slabs(&mut buf).unwrap();
        let q = crate::geom_core::io::read_halfspaces(&buf[..]).unwrap();
        assert_eq!(q.len(), 8);
        assert!(q.contains(&[0.14, 0.06], 1e-12) && !q.contains(&[0.15, 0.0], 1e-12));
    }
}
