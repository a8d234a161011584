use super::{norm, HPolytope, PointSet};
use crate::error::{Error, Result};

/// Point `p` ↦ halfspace `p·x ≤ 1`.
///
/// The result is bounded iff the origin is interior to `conv(S)`; the check
/// runs `2d` small linear programs.
pub fn polar_points_to_halfspaces(s: &PointSet) -> Result<HPolytope> {
    let p = polar_points_unchecked(s)?;
    match HPolytope::new(s.dim(), &p.halfspaces()) {
        Err(Error::Unbounded(dir)) => Err(Error::OriginNotInterior(format!(
            "hull of the points misses direction {dir:?}"
        ))),
        r => r,
    }
}

pub(crate) fn polar_points_unchecked(s: &PointSet) -> Result<HPolytope> {
    let d = s.dim();
    let mut normals = Vec::with_capacity(s.len() * d);
    let mut offsets = Vec::with_capacity(s.len());
    for p in s.iter() {
        let n = norm(p);
        if !(n > 0.0) {
            return Err(Error::OriginNotInterior("point at the origin has no polar".into()));
        }
        normals.extend(p.iter().map(|x| x / n));
        offsets.push(1.0 / n);
    }
    Ok(HPolytope::from_unit_parts(d, normals, offsets))
}

/// Halfspace `a·x ≤ b` ↦ point `a/b`; requires `b > 0`.
pub fn polar_halfspaces_to_points(h: &HPolytope) -> Result<PointSet> {
    let d = h.dim();
    let mut coords = Vec::with_capacity(h.len() * d);
    for i in 0..h.len() {
        let b = h.offset(i);
        if !(b > 0.0) {
            return Err(Error::OriginNotInterior(format!("halfspace {i} has offset {b}")));
        }
        coords.extend(h.normal(i).iter().map(|a| a / b));
    }
    PointSet::from_flat(d, coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom_core::{dot, random_unit, ray_shoot};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cross() -> PointSet {
        PointSet::new(2, &[vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]])
            .unwrap()
    }

    #[test]
    fn cross_polytope_to_square_and_back() {
        let h = polar_points_to_halfspaces(&cross()).unwrap();
        assert_eq!(h, HPolytope::cube(2, 1.0));
        let back = polar_halfspaces_to_points(&HPolytope::cube(2, 1.0)).unwrap();
        assert_eq!(back, cross());
    }

    #[test]
    fn origin_outside_rejected() {
        let s = PointSet::new(2, &[vec![1.0, 0.0], vec![1.0, 1.0], vec![2.0, 0.5]]).unwrap();
        assert!(matches!(polar_points_to_halfspaces(&s), Err(Error::OriginNotInterior(_))));
    }

    #[test]
    fn polar_support_is_inverse_radial() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                let u = random_unit(&mut rng, 3);
                let r = rng.gen_range(0.3..0.5);
                u.iter().map(|x| x * r).collect()
            })
            .collect();
        let s = PointSet::new(3, &pts).unwrap();
        let h = polar_points_to_halfspaces(&s).unwrap();
        for _ in 0..1000 {
            let v = random_unit(&mut rng, 3);
            let support = s.iter().map(|p| dot(p, &v)).fold(f64::NEG_INFINITY, f64::max);
            let (radial, _) = ray_shoot(&h, &v).unwrap();
            assert!((support * radial - 1.0).abs() < 1e-9);
        }
        let back = polar_halfspaces_to_points(&h).unwrap();
        for (a, b) in back.iter().zip(s.iter()) {
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9));
        }
    }
}
