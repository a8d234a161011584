use geomk::apm::{build_apm, read_index, write_index};
use geomk::extent::{bcp, diameter, WidthIndex};
use geomk::geom_core::io::{read_points, write_points};
use geomk::geom_core::{canonicalize_points, random_unit, AffineMap, HPolytope, PointSet};
use geomk::kernel::{build_kernel, BootstrapConfig};
use geomk::macbeath::macbeath_region;
use geomk::oracle::{exact_bcp, exact_diameter, exact_distance_to_boundary, exact_membership, exact_width};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian_set(seed: u64, d: usize, n: usize) -> PointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat: Vec<f64> = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    PointSet::from_flat(d, flat).unwrap()
}

fn polytope(seed: u64, d: usize, m: usize) -> HPolytope {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let rows: Vec<(Vec<f64>, f64)> = (0..m).map(|_| (random_unit(&mut rng, d), rng.gen_range(0.3..1.0))).collect();
        if let Ok(p) = HPolytope::from_rows(d, &rows) {
            return p;
        }
    }
}

fn directions(seed: u64, d: usize, m: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m).map(|_| random_unit(&mut rng, d)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn point_files_round_trip(seed in any::<u64>(), d in 2usize..=8, n in 1usize..40) {
        let s = gaussian_set(seed, d, n);
        let mut buf = Vec::new();
        write_points(&mut buf, &s).unwrap();
        prop_assert_eq!(read_points(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn affine_map_inverts(seed in any::<u64>(), d in 2usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lin = DMatrix::from_fn(d, d, |i, j| if i == j { 2.0 } else { 0.0 } + rng.gen_range(-0.5..0.5));
        let shift = DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0));
        let m = AffineMap::new(lin, shift).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let back = m.apply_inverse(&m.apply(&x));
        for k in 0..d {
            prop_assert!((back[k] - x[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn canonical_form_is_nested(seed in any::<u64>(), d in 2usize..=4, n in 10usize..200) {
        let cb = canonicalize_points(&gaussian_set(seed, d, n)).unwrap();
        prop_assert!(cb.gamma > 0.0 && cb.gamma <= 1.0);
        prop_assert!(cb.verify(&directions(seed ^ 1, d, 200), 1e-9).is_ok());
    }

    #[test]
    fn kernel_preserves_widths(seed in any::<u64>(), d in 2usize..=3, n in 5usize..400, eps in 0.05f64..0.5) {
        let s = gaussian_set(seed, d, n);
        let k = build_kernel(&s, eps, &BootstrapConfig::default()).unwrap();
        prop_assert!(!k.subset.is_empty());
        prop_assert!(k.subset.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(*k.subset.last().unwrap() < n);
        let q = s.subset(&k.subset).unwrap();
        for v in directions(seed ^ 2, d, 64) {
            prop_assert!(exact_width(&q, &v) >= (1.0 - eps) * exact_width(&s, &v));
        }
    }

    #[test]
    fn diameter_within_factor(seed in any::<u64>(), d in 2usize..=4, n in 2usize..300, eps in 0.05f64..0.5) {
        let s = gaussian_set(seed, d, n);
        let r = diameter(&s, eps).unwrap();
        let (_, _, exact) = exact_diameter(&s).unwrap();
        prop_assert!(r.dist <= exact && r.dist >= (1.0 - eps) * exact);
        let pq: f64 = s.point(r.p).iter().zip(s.point(r.q)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert_eq!(pq, r.dist);
    }

    #[test]
    fn bcp_within_factor(seed in any::<u64>(), d in 2usize..=3, n in 1usize..300, m in 1usize..300, eps in 0.05f64..0.5) {
        let r = gaussian_set(seed, d, n);
        let b = gaussian_set(seed ^ 3, d, m);
        let res = bcp(&r, &b, eps, seed).unwrap();
        let (_, _, exact) = exact_bcp(&r, &b).unwrap();
        prop_assert!(res.dist >= exact && res.dist <= (1.0 + eps) * exact);
        prop_assert!(res.stats.estimate.a >= exact && res.stats.estimate.a < 2.0 * exact || exact == 0.0);
    }

    #[test]
    fn region_is_symmetric_and_inside(seed in any::<u64>(), d in 2usize..=3, m in 8usize..30, s in 0.0f64..0.95) {
        let p = polytope(seed, d, m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_unit(&mut rng, d);
        let t = (0..p.len())
            .filter_map(|i| {
                let a: f64 = p.normal(i).iter().zip(&u).map(|(x, y)| x * y).sum();
                (a > 0.0).then(|| p.offset(i) / a)
            })
            .fold(f64::INFINITY, f64::min);
        let x: Vec<f64> = u.iter().map(|c| c * t * s).collect();
        let r = macbeath_region(&p, &x, 1.0).unwrap();
        for y in r.sample(&mut rng, 200) {
            let refl: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.0 * a - b).collect();
            prop_assert!(p.max_violation(&y) <= 1e-9);
            prop_assert!(p.max_violation(&refl) <= 1e-9);
            prop_assert!((r.gauge(&y) - r.gauge(&refl)).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn membership_is_sound(seed in any::<u64>(), d in 2usize..=3, m in 8usize..60, eps in 0.05f64..0.3) {
        let p = polytope(seed, d, m);
        let idx = build_apm(&p, eps, 0).unwrap();
        let hs: Vec<_> = (0..p.len()).map(|i| idx.map.map_halfspace(p.normal(i), p.offset(i)).unwrap()).collect();
        let pc = HPolytope::new(d, &hs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..300 {
            let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.8..0.8)).collect();
            let v = idx.query_canonical(&q);
            if exact_membership(&pc, &q) {
                prop_assert!(v.inside);
            } else if exact_distance_to_boundary(&pc, &q) > eps {
                prop_assert!(!v.inside);
            }
        }
    }

    #[test]
    fn saved_index_answers_identically(seed in any::<u64>(), d in 2usize..=3, m in 8usize..40, rounds in 0usize..=1) {
        let idx = build_apm(&polytope(seed, d, m), 0.2, rounds).unwrap();
        let mut buf = Vec::new();
        write_index(&idx, &mut buf).unwrap();
        let back = read_index(buf.as_slice()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
            prop_assert_eq!(idx.query(&q).unwrap(), back.query(&q).unwrap());
        }
    }

    #[test]
    fn width_is_symmetric_and_bounded(seed in any::<u64>(), n in 4usize..60, eps in 0.1f64..0.4) {
        let s = gaussian_set(seed, 2, n);
        let idx = WidthIndex::build(&s, eps).unwrap();
        for v in directions(seed ^ 4, 2, 20) {
            let est = idx.query(&v).unwrap();
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            prop_assert_eq!(est.to_bits(), idx.query(&neg).unwrap().to_bits());
            let exact = exact_width(&s, &v);
            prop_assert!(est >= (1.0 - eps) * exact && est <= exact * (1.0 + 1e-9));
        }
    }
}
