use super::lp::{chebyshev_center, maximize_over, LpOutcome};
use super::{dot, inscribed_ellipsoid_sym, mvee_points, AffineMap, HPolytope, PointSet, FIT_TOL};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub enum CanonicalShape {
    Poly(HPolytope),
    Points(PointSet),
}

/// A body mapped so that `γ·B₀ ⊆ conv(body) ⊆ B₀`, `B₀` the ball of radius 1/2.
#[derive(Debug, Clone)]
pub struct CanonicalBody {
    pub body: CanonicalShape,
    pub gamma: f64,
    /// Original coordinates → canonical coordinates.
    pub map: AffineMap,
}

impl CanonicalBody {
    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    pub fn polytope(&self) -> Option<&HPolytope> {
        match &self.body {
            CanonicalShape::Poly(p) => Some(p),
            CanonicalShape::Points(_) => None,
        }
    }

    pub fn points(&self) -> Option<&PointSet> {
        match &self.body {
            CanonicalShape::Points(s) => Some(s),
            CanonicalShape::Poly(_) => None,
        }
    }

    /// Support value of the canonical body in direction `v`.
    pub fn support(&self, v: &[f64]) -> Result<f64> {
        match &self.body {
            CanonicalShape::Points(s) => {
                Ok(s.iter().map(|p| dot(p, v)).fold(f64::NEG_INFINITY, f64::max))
            }
            CanonicalShape::Poly(p) => match maximize_over(p, v)? {
                LpOutcome::Optimal { value, .. } => Ok(value),
                _ => Err(Error::Invariant("canonical polytope support LP failed".into())),
            },
        }
    }

    /// Checks support values in `[γ/2, 1/2]` (with `slack`) over `dirs`.
    pub fn verify(&self, dirs: &[Vec<f64>], slack: f64) -> Result<()> {
        for v in dirs {
            let h = self.support(v)?;
            if h < self.gamma / 2.0 - slack || h > 0.5 + slack {
                return Err(Error::Invariant(format!(
                    "support {h} outside [{}, 0.5] in direction {v:?}",
                    self.gamma / 2.0
                )));
            }
        }
        Ok(())
    }
}

/// Maps the approximate minimum enclosing ellipsoid of `S` onto `B₀`.
///
/// `γ = 1/(2d(1+tol))`: the rounding property of the fit puts a ball of
/// radius `1/(2d(1+tol))` inside the image, and the extra factor 2 covers the
/// approximate design.
pub fn canonicalize_points(s: &PointSet) -> Result<CanonicalBody> {
    let d = s.dim();
    let fit = mvee_points(s.flat(), d, FIT_TOL)?;
    let e = &fit.ellipsoid;
    let chol = e
        .shape()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("enclosing ellipsoid is flat".into()))?;
    let t = chol.l().transpose() * 0.5;
    let u = -(&t * e.center());
    let map = AffineMap::new(t, u)?;
    let mut coords = Vec::with_capacity(s.flat().len());
    for p in s.iter() {
        coords.extend(map.apply(p));
    }
    Ok(CanonicalBody {
        body: CanonicalShape::Points(PointSet::from_flat(d, coords)?),
        gamma: 1.0 / (2.0 * d as f64 * (1.0 + FIT_TOL)),
        map,
    })
}

/// Canonical form of an H-polytope.
///
/// The Chebyshev center `x₀` gives the symmetric slab body
/// `{|a_i·(y−x₀)| ≤ b_i − a_i·x₀} ⊆ P`; its inscribed ellipsoid is mapped to
/// the unit ball, and the result is scaled so that its bounding box fits in
/// `B₀`. `γ` is the certified inner radius ratio of that final map.
pub fn canonicalize_hpoly(p: &HPolytope) -> Result<CanonicalBody> {
    let d = p.dim();
    let rows = p.rows();
    let (x0, r) = chebyshev_center(&rows, d)?;
    if !(r > 1e-12) {
        return Err(Error::Degenerate("polytope has empty interior".into()));
    }
    let slabs: Vec<(&[f64], f64)> =
        (0..p.len()).map(|i| (p.normal(i), p.offset(i) - dot(p.normal(i), &x0))).collect();
    let e = inscribed_ellipsoid_sym(&x0, &slabs, FIT_TOL)?;
    let chol = e
        .shape()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("inscribed ellipsoid is flat".into()))?;
    let t0 = chol.l().transpose();
    let u0 = -(&t0 * e.center());
    let m0 = AffineMap::new(t0.clone(), u0.clone())?;
    let whitened = map_polytope(p, &m0)?;
    let mut r2 = 0.0;
    for k in 0..d {
        let mut ext: f64 = 0.0;
        for s in [1.0, -1.0] {
            let mut c = vec![0.0; d];
            c[k] = s;
            match maximize_over(&whitened, &c)? {
                LpOutcome::Optimal { value, .. } => ext = ext.max(value),
                LpOutcome::Unbounded => return Err(Error::Unbounded(c)),
                LpOutcome::Infeasible => return Err(Error::Lp("bounding box infeasible".into())),
            }
        }
        r2 += ext * ext;
    }
    let radius = r2.sqrt();
    let scale = 0.5 / radius;
    let map = AffineMap::new(t0 * scale, u0 * scale)?;
    let body = map_polytope(p, &map)?;
    Ok(CanonicalBody { body: CanonicalShape::Poly(body), gamma: (1.0 / radius).min(1.0), map })
}

/// Image of a polytope under an affine map (unit normals preserved).
pub(crate) fn map_polytope(p: &HPolytope, m: &AffineMap) -> Result<HPolytope> {
    let d = p.dim();
    let mut normals = Vec::with_capacity(p.len() * d);
    let mut offsets = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let h = m.map_halfspace(p.normal(i), p.offset(i))?;
        normals.extend_from_slice(h.normal.as_slice());
        offsets.push(h.offset);
    }
    Ok(HPolytope::from_unit_parts(d, normals, offsets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom_core::{random_unit, sphere_lattice};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_vertices() {
        let s = PointSet::new(
            2,
            &[vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0], vec![-1.0, -1.0]],
        )
        .unwrap();
        let c = canonicalize_points(&s).unwrap();
        c.verify(&sphere_lattice(2, 0.01), 1e-9).unwrap();
    }

    #[test]
    fn already_canonical_points() {
        let s = PointSet::new(
            2,
            &[vec![0.4, 0.0], vec![-0.4, 0.0], vec![0.0, 0.4], vec![0.0, -0.4]],
        )
        .unwrap();
        let c = canonicalize_points(&s).unwrap();
        c.verify(&sphere_lattice(2, 0.01), 1e-9).unwrap();
        // a similarity up to scale: singular values of the linear part agree
        let sv = c.map.linear().clone().singular_values();
        assert!((sv[0] / sv[1] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn thin_ellipse_is_fattened() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec<f64>> = (0..1000)
            .map(|_| {
                let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                vec![100.0 * t.cos() + 3.0, t.sin() - 1.0]
            })
            .collect();
        let c = canonicalize_points(&PointSet::new(2, &pts).unwrap()).unwrap();
        let mut dirs = Vec::new();
        for _ in 0..1000 {
            dirs.push(random_unit(&mut rng, 2));
        }
        c.verify(&dirs, 1e-9).unwrap();
    }

    #[test]
    fn cube_scaled_into_b0() {
        let c = canonicalize_hpoly(&HPolytope::cube(3, 5.0)).unwrap();
        let p = c.polytope().unwrap();
        for i in 0..p.len() {
            assert!(p.offset(i) >= c.gamma / 2.0 - 1e-12);
            assert!(p.offset(i) <= 0.5 / 3f64.sqrt() * (1.0 + 1e-3) + 1e-12);
        }
        c.verify(&sphere_lattice(3, 0.2), 1e-9).unwrap();
    }

    #[test]
    fn random_polytope_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rows: Vec<(Vec<f64>, f64)> = (0..100)
            .map(|_| (random_unit(&mut rng, 3), rng.gen_range(0.5..2.0)))
            .map(|(a, b)| (a.iter().map(|x| x * 3.0).collect(), b))
            .collect();
        let p = HPolytope::from_rows(3, &rows).unwrap();
        let c = canonicalize_hpoly(&p).unwrap();
        let q = c.polytope().unwrap();
        assert!(q.offsets().iter().all(|&b| b >= c.gamma / 2.0 - 1e-12));
        c.verify(&sphere_lattice(3, 0.3), 1e-9).unwrap();
    }
}
