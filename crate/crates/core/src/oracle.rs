//! Brute-force reference computations.
//!
//! Nothing here calls into the approximation modules; only the point and
//! polytope containers are shared. Every routine is quadratic at worst and
//! meant for validation, not speed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geom_core::{HPolytope, PointSet};

fn ip(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `max_s v·s − min_s v·s`.
pub fn exact_width(s: &PointSet, v: &[f64]) -> f64 {
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    for p in s.iter() {
        let t = ip(p, v);
        hi = hi.max(t);
        lo = lo.min(t);
    }
    if s.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Farthest pair by full scan; ties resolve to the first pair found.
pub fn exact_diameter(s: &PointSet) -> Result<(usize, usize, f64)> {
    if s.len() < 2 {
        return Err(Error::Empty("diameter needs at least two points".into()));
    }
    let mut best = (0, 1, -1.0);
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            let d = sq(s.point(i), s.point(j));
            if d > best.2 {
                best = (i, j, d);
            }
        }
    }
    Ok((best.0, best.1, best.2.sqrt()))
}

/// Closest red-blue pair by full scan.
pub fn exact_bcp(r: &PointSet, b: &PointSet) -> Result<(usize, usize, f64)> {
    if r.is_empty() || b.is_empty() {
        return Err(Error::Empty("closest pair needs two nonempty sets".into()));
    }
    let mut best = (0, 0, f64::INFINITY);
    for i in 0..r.len() {
        for j in 0..b.len() {
            let d = sq(r.point(i), b.point(j));
            if d < best.2 {
                best = (i, j, d);
            }
        }
    }
    Ok((best.0, best.1, best.2.sqrt()))
}

/// `a_i·q ≤ b_i` for every halfspace, without slack.
pub fn exact_membership(p: &HPolytope, q: &[f64]) -> bool {
    (0..p.len()).all(|i| ip(p.normal(i), q) <= p.offset(i))
}

/// Euclidean projection onto `P` by Dykstra's alternating projections.
pub fn project(p: &HPolytope, q: &[f64]) -> Vec<f64> {
    let m = p.len();
    let d = q.len();
    let mut x = q.to_vec();
    let mut corr = vec![0.0; m * d];
    for _ in 0..200_000 {
        let mut moved = 0.0f64;
        for i in 0..m {
            let a = p.normal(i);
            let c = &mut corr[i * d..(i + 1) * d];
            let y: Vec<f64> = x.iter().zip(c.iter()).map(|(u, v)| u + v).collect();
            let over = ip(a, &y) - p.offset(i);
            let z: Vec<f64> = if over > 0.0 {
                y.iter().zip(a).map(|(u, v)| u - over * v).collect()
            } else {
                y.clone()
            };
            for k in 0..d {
                c[k] = y[k] - z[k];
                moved = moved.max((z[k] - x[k]).abs());
            }
            x = z;
        }
        if moved < 1e-14 {
            break;
        }
    }
    x
}

/// Distance from `q` to `∂P`: the smallest slack for points of `P`, the
/// projection distance otherwise.
pub fn exact_distance_to_boundary(p: &HPolytope, q: &[f64]) -> f64 {
    if exact_membership(p, q) {
        return (0..p.len()).map(|i| p.offset(i) - ip(p.normal(i), q)).fold(f64::INFINITY, f64::min);
    }
    let lower = (0..p.len()).map(|i| ip(p.normal(i), q) - p.offset(i)).fold(0.0, f64::max);
    sq(q, &project(p, q)).sqrt().max(lower)
}

fn exit_point(p: &HPolytope, u: &[f64]) -> Result<Vec<f64>> {
    let mut t = f64::INFINITY;
    for i in 0..p.len() {
        let s = ip(p.normal(i), u);
        if s > 0.0 {
            t = t.min(p.offset(i) / s);
        }
    }
    if !t.is_finite() {
        return Err(Error::Unbounded(u.to_vec()));
    }
    Ok(u.iter().map(|x| x * t).collect())
}

fn dist_to_body(p: &HPolytope, x: &[f64]) -> f64 {
    if exact_membership(p, x) {
        0.0
    } else {
        sq(x, &project(p, x)).sqrt()
    }
}

/// Largest distance from `m` boundary samples of each body (rays from the
/// origin in Gaussian directions) to the other body.
pub fn sampled_hausdorff(a: &HPolytope, b: &HPolytope, m: usize, seed: u64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch { expected: a.dim(), got: b.dim() });
    }
    if !(a.offsets().iter().all(|&o| o > 0.0) && b.offsets().iter().all(|&o| o > 0.0)) {
        return Err(Error::OriginNotInterior("sampled Hausdorff rays start at the origin".into()));
    }
    let d = a.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..m {
        let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = ip(&g, &g).sqrt();
        let u: Vec<f64> = g.iter().map(|x| x / n).collect();
        worst = worst.max(dist_to_body(b, &exit_point(a, &u)?));
        worst = worst.max(dist_to_body(a, &exit_point(b, &u)?));
    }
    Ok(worst)
}

/// Convex hull of planar points, counter-clockwise, by monotone chain.
pub fn hull_2d(s: &PointSet) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = s.iter().map(|p| [p[0], p[1]]).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut h: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = h.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while h.len() >= start + 2 && cross(h[h.len() - 2], h[h.len() - 1], p) <= 0.0 {
                h.pop();
            }
            h.push(p);
        }
        h.pop();
    }
    h
}

/// Planar width in direction `v` from hull vertices.
pub fn hull_width_2d(s: &PointSet, v: &[f64]) -> f64 {
    let h = hull_2d(s);
    let dots = h.iter().map(|p| p[0] * v[0] + p[1] * v[1]);
    let (lo, hi) = dots.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), t| (l.min(t), u.max(t)));
    hi - lo
}

/// Planar diameter by rotating calipers over the hull.
pub fn calipers_diameter_2d(s: &PointSet) -> f64 {
    let h = hull_2d(s);
    let n = h.len();
    let d2 = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    if n < 3 {
        return if n == 2 { d2(h[0], h[1]).sqrt() } else { 0.0 };
    }
    let area = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs();
    let mut best: f64 = 0.0;
    let mut j = 1;
    for i in 0..n {
        let ni = (i + 1) % n;
        while area(h[i], h[ni], h[(j + 1) % n]) > area(h[i], h[ni], h[j]) {
            j = (j + 1) % n;
        }
        best = best.max(d2(h[i], h[j])).max(d2(h[ni], h[j]));
    }
    best.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn diamond() -> PointSet {
        PointSet::new(2, &[vec![0.4, 0.0], vec![-0.4, 0.0], vec![0.0, 0.4], vec![0.0, -0.4]]).unwrap()
    }

    fn random_set(n: usize, d: usize, seed: u64) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        PointSet::new(d, &v).unwrap()
    }

    #[test]
    fn width_examples() {
        assert!((exact_width(&diamond(), &[1.0, 0.0]) - 0.8).abs() < 1e-15);
        let one = PointSet::new(2, &[vec![0.3, 0.7]]).unwrap();
        assert_eq!(exact_width(&one, &[0.6, 0.8]), 0.0);
    }

    #[test]
    fn width_matches_hull() {
        let s = random_set(500, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let v = [t.cos(), t.sin()];
            assert!((exact_width(&s, &v) - hull_width_2d(&s, &v)).abs() < 1e-12);
        }
    }

    #[test]
    fn diameter_examples() {
        let two = PointSet::new(2, &[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(exact_diameter(&two).unwrap(), (0, 1, 5.0));
        let line: Vec<Vec<f64>> = [0.3, -1.0, 0.2, 2.0, 0.9].iter().map(|&t| vec![t, 2.0 * t]).collect();
        let (i, j, _) = exact_diameter(&PointSet::new(2, &line).unwrap()).unwrap();
        assert_eq!((i, j), (1, 3));
        assert!(exact_diameter(&PointSet::new(2, &[vec![0.0, 0.0]]).unwrap()).is_err());
    }

    #[test]
    fn diameter_matches_calipers() {
        for seed in 0..5 {
            let s = random_set(1000, 2, seed);
            let (_, _, d) = exact_diameter(&s).unwrap();
            assert!((d - calipers_diameter_2d(&s)).abs() < 1e-12);
        }
    }

    #[test]
    fn bcp_examples_and_swap() {
        let r = PointSet::new(2, &[vec![0.0, 0.0]]).unwrap();
        let b = PointSet::new(2, &[vec![3.0, 4.0]]).unwrap();
        assert_eq!(exact_bcp(&r, &b).unwrap(), (0, 0, 5.0));
        assert_eq!(exact_bcp(&r, &r).unwrap().2, 0.0);
        let r = random_set(300, 3, 7);
        let b = random_set(200, 3, 8);
        let (i, j, d) = exact_bcp(&r, &b).unwrap();
        assert_eq!(exact_bcp(&b, &r).unwrap(), (j, i, d));
    }

    #[test]
    fn membership_and_distance() {
        let cube = HPolytope::cube(3, 0.5);
        assert!(exact_membership(&cube, &[0.0, 0.0, 0.0]));
        assert!(!exact_membership(&cube, &[1.0, 0.0, 0.0]));
        assert!((exact_distance_to_boundary(&cube, &[1.0, 0.0, 0.0]) - 0.5).abs() < 1e-12);
        assert!((exact_distance_to_boundary(&cube, &[1.0, 1.0, 0.0]) - 0.5f64.sqrt()).abs() < 1e-9);
        assert!((exact_distance_to_boundary(&cube, &[0.1, 0.2, 0.0]) - 0.3).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let g: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let x = exit_point(&cube, &g).unwrap();
            assert!(exact_distance_to_boundary(&cube, &x) <= 1e-7);
        }
    }

    #[test]
    fn projection_is_feasible_and_closest_on_square() {
        let sq_poly = HPolytope::cube(2, 1.0);
        let x = project(&sq_poly, &[3.0, 0.5]);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12);
        let x = project(&sq_poly, &[3.0, -4.0]);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn hausdorff_examples() {
        let cube = HPolytope::cube(3, 0.5);
        assert_eq!(sampled_hausdorff(&cube, &cube, 200, 1).unwrap(), 0.0);
        // erosion by 0.1 moves each facet by 0.1 and each corner by 0.1·√3
        let inner = HPolytope::cube(3, 0.4);
        let h = sampled_hausdorff(&cube, &inner, 2000, 1).unwrap();
        assert!(h >= 0.1 - 1e-9 && h <= 0.1 * 3f64.sqrt() + 1e-9, "{h}");
    }
}
