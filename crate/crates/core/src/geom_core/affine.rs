use nalgebra::{DMatrix, DVector};

use super::{Halfspace, Point};
use crate::error::{Error, Result};

/// `x ↦ T·x + u` with a cached inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    linear: DMatrix<f64>,
    shift: DVector<f64>,
    inv: DMatrix<f64>,
}

impl AffineMap {
    pub fn new(linear: DMatrix<f64>, shift: DVector<f64>) -> Result<Self> {
        let d = shift.len();
        if linear.nrows() != d || linear.ncols() != d {
            return Err(Error::DimMismatch { expected: d, got: linear.nrows() });
        }
        let inv = linear
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("affine map is singular".into()))?;
        let m = Self { linear, shift, inv };
        let err = (&m.linear * &m.inv - DMatrix::identity(d, d)).norm();
        if !(err < 1e-9) {
            return Err(Error::Invariant(format!("affine inverse round-trip error {err:e}")));
        }
        Ok(m)
    }

    pub fn identity(d: usize) -> Self {
        Self {
            linear: DMatrix::identity(d, d),
            shift: DVector::zeros(d),
            inv: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn linear(&self) -> &DMatrix<f64> {
        &self.linear
    }

    pub fn shift(&self) -> &DVector<f64> {
        &self.shift
    }

    pub fn inverse_linear(&self) -> &DMatrix<f64> {
        &self.inv
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| self.shift[i] + (0..d).map(|j| self.linear[(i, j)] * x[j]).sum::<f64>())
            .collect()
    }

    pub fn apply_inverse(&self, y: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|j| self.inv[(i, j)] * (y[j] - self.shift[j])).sum())
            .collect()
    }

    /// Image of `{a·x ≤ b}` under the map, renormalized to a unit normal.
    pub fn map_halfspace(&self, a: &[f64], b: f64) -> Result<Halfspace> {
        let d = self.dim();
        // a·T⁻¹(y − u) ≤ b  ⇔  (T⁻ᵀa)·y ≤ b + (T⁻ᵀa)·u
        let n: Vec<f64> = (0..d).map(|j| (0..d).map(|i| a[i] * self.inv[(i, j)]).sum()).collect();
        let off = b + n.iter().zip(self.shift.iter()).map(|(x, y)| x * y).sum::<f64>();
        Halfspace::new(&n, off)
    }

    /// `self ∘ inner`: first `inner`, then `self`.
    pub fn compose(&self, inner: &AffineMap) -> Result<AffineMap> {
        let linear = &self.linear * &inner.linear;
        let shift = &self.linear * &inner.shift + &self.shift;
        AffineMap::new(linear, shift)
    }

    /// Largest singular value of `T⁻¹`: canonical lengths scale by at most this.
    pub fn inverse_norm(&self) -> f64 {
        self.inv.clone().singular_values().iter().cloned().fold(0.0, f64::max)
    }

    /// Largest singular value of `T`.
    pub fn norm(&self) -> f64 {
        self.linear.clone().singular_values().iter().cloned().fold(0.0, f64::max)
    }

    pub fn apply_point(&self, x: &Point) -> Point {
        Point::from_vec(self.apply(x.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom_core::{dot, random_unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_on_unit_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = DMatrix::from_fn(3, 3, |i, j| if i == j { 2.0 } else { rng.gen_range(-0.5..0.5) });
        let m = AffineMap::new(t, DVector::from_vec(vec![0.1, -0.3, 2.0])).unwrap();
        for _ in 0..1000 {
            let x = random_unit(&mut rng, 3);
            let back = m.apply_inverse(&m.apply(&x));
            assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-9));
        }
    }

    #[test]
    fn halfspace_image_consistent() {
        let t = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let m = AffineMap::new(t, DVector::from_vec(vec![1.0, -1.0])).unwrap();
        let h = m.map_halfspace(&[1.0, 2.0], 0.5).unwrap();
        for x in [[0.1, 0.2], [1.0, -3.0], [-0.4, 0.45]] {
            let inside = x[0] + 2.0 * x[1] <= 0.5;
            let y = m.apply(&x);
            assert_eq!(inside, dot(h.normal.as_slice(), &y) <= h.offset);
        }
    }

    #[test]
    fn singular_rejected() {
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(AffineMap::new(t, DVector::zeros(2)).is_err());
    }
}
