//! Deterministic and random direction sets on the unit sphere.

use rand::Rng;
use rand_distr::StandardNormal;

use super::normalized;

/// Uniformly random unit vector.
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(u) = normalized(&g) {
            return u;
        }
    }
}

/// `n` points of the spherical Fibonacci lattice in 3-space.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec<f64>> {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = 2.0 * std::f64::consts::PI * (i as f64 / golden).fract();
            vec![r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Cell centers of a `k`-per-side grid on each of the `2d` facets of `[-1, 1]^d`.
///
/// Order: facet axis, facet sign (+ then −), then cells in row-major order.
pub fn cube_facet_grid(d: usize, k: usize) -> Vec<Vec<f64>> {
    let k = k.max(1);
    let cells = k.pow((d - 1) as u32);
    let mut out = Vec::with_capacity(2 * d * cells);
    for axis in 0..d {
        for sign in [1.0, -1.0] {
            for c in 0..cells {
                let mut rem = c;
                let mut p = vec![0.0; d];
                for (j, pj) in p.iter_mut().enumerate() {
                    if j == axis {
                        *pj = sign;
                    } else {
                        let idx = rem % k;
                        rem /= k;
                        *pj = -1.0 + (2.0 * idx as f64 + 1.0) / k as f64;
                    }
                }
                out.push(p);
            }
        }
    }
    out
}

/// Unit directions whose angular covering radius is at most `theta` (radians).
///
/// Circle: equally spaced. 3-space: Fibonacci lattice sized from a calibrated
/// covering constant. Higher dimensions: normalized cube-facet grid.
pub fn sphere_lattice(d: usize, theta: f64) -> Vec<Vec<f64>> {
    let theta = theta.clamp(1e-4, 1.0);
    match d {
        2 => {
            let n = (std::f64::consts::PI / theta).ceil().max(4.0) as usize;
            (0..n)
                .map(|i| {
                    let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                    vec![a.cos(), a.sin()]
                })
                .collect()
        }
        3 => {
            // Fibonacci covering radius stays below 2.75/sqrt(n) radians.
            let n = (9.0 / (theta * theta)).ceil().max(12.0) as usize;
            fibonacci_sphere(n)
        }
        _ => {
            let k = (((d - 1) as f64).sqrt() / theta).ceil() as usize;
            cube_facet_grid(d, k)
                .into_iter()
                .map(|p| normalized(&p).expect("nonzero grid point"))
                .collect()
        }
    }
}
