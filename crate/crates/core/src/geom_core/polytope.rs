use super::lp::{maximize, LpOutcome};
use super::{check_dim, dot, norm, Point};
use crate::error::{Error, Result};

/// Closed halfspace `normal·x ≤ offset` with a unit normal.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: Point,
    pub offset: f64,
}

impl Halfspace {
    /// Builds `a·x ≤ b`, rescaling so that the normal has unit length.
    pub fn new(a: &[f64], b: f64) -> Result<Self> {
        if !b.is_finite() || a.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("halfspace"));
        }
        let n = norm(a);
        if n == 0.0 {
            return Err(Error::Degenerate("halfspace with zero normal".into()));
        }
        Ok(Self {
            normal: Point::from_iterator(a.len(), a.iter().map(|x| x / n)),
            offset: b / n,
        })
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        dot(self.normal.as_slice(), x) <= self.offset + slack
    }
}

/// Intersection of halfspaces with unit normals, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HPolytope {
    dim: usize,
    normals: Vec<f64>,
    offsets: Vec<f64>,
    contains_origin: bool,
}

impl HPolytope {
    /// Validating constructor: finite data, nonempty, bounded.
    pub fn new(dim: usize, halfspaces: &[Halfspace]) -> Result<Self> {
        check_dim(dim)?;
        let mut normals = Vec::with_capacity(dim * halfspaces.len());
        let mut offsets = Vec::with_capacity(halfspaces.len());
        for h in halfspaces {
            if h.normal.len() != dim {
                return Err(Error::DimMismatch { expected: dim, got: h.normal.len() });
            }
            normals.extend_from_slice(h.normal.as_slice());
            offsets.push(h.offset);
        }
        let p = Self::from_unit_parts(dim, normals, offsets);
        p.check_bounded()?;
        Ok(p)
    }

    /// Builds from raw rows `(a, b)` meaning `a·x ≤ b`; normals need not be unit.
    pub fn from_rows(dim: usize, rows: &[(Vec<f64>, f64)]) -> Result<Self> {
        let hs = rows
            .iter()
            .map(|(a, b)| {
                if a.len() != dim {
                    return Err(Error::DimMismatch { expected: dim, got: a.len() });
                }
                Halfspace::new(a, *b)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dim, &hs)
    }

    /// Axis-aligned box `|x_i| ≤ r`.
    pub fn cube(dim: usize, r: f64) -> Self {
        let mut normals = Vec::with_capacity(2 * dim * dim);
        let mut offsets = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            for s in [1.0, -1.0] {
                let mut a = vec![0.0; dim];
                a[i] = s;
                normals.extend(a);
                offsets.push(r);
            }
        }
        Self::from_unit_parts(dim, normals, offsets)
    }

    /// Unchecked constructor; callers guarantee unit normals and boundedness.
    pub(crate) fn from_unit_parts(dim: usize, normals: Vec<f64>, offsets: Vec<f64>) -> Self {
        debug_assert_eq!(normals.len(), dim * offsets.len());
        let contains_origin = !offsets.is_empty() && offsets.iter().all(|&b| b > 0.0);
        Self { dim, normals, offsets, contains_origin }
    }

    fn check_bounded(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty("polytope without halfspaces".into()));
        }
        let rows = self.rows();
        for k in 0..self.dim {
            for s in [1.0, -1.0] {
                let mut c = vec![0.0; self.dim];
                c[k] = s;
                match maximize(&c, &rows)? {
                    LpOutcome::Optimal { .. } => {}
                    LpOutcome::Unbounded => return Err(Error::Unbounded(c)),
                    LpOutcome::Infeasible => {
                        return Err(Error::Empty("halfspaces have empty intersection".into()))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn contains_origin(&self) -> bool {
        self.contains_origin
    }

    #[inline]
    pub fn normal(&self, i: usize) -> &[f64] {
        &self.normals[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn offset(&self, i: usize) -> f64 {
        self.offsets[i]
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn halfspace(&self, i: usize) -> Halfspace {
        Halfspace { normal: Point::from_row_slice(self.normal(i)), offset: self.offsets[i] }
    }

    pub fn halfspaces(&self) -> Vec<Halfspace> {
        (0..self.len()).map(|i| self.halfspace(i)).collect()
    }

    /// Constraint rows borrowed for the LP helpers.
    pub fn rows(&self) -> Vec<(&[f64], f64)> {
        (0..self.len()).map(|i| (self.normal(i), self.offsets[i])).collect()
    }

    /// Largest violation `max_i (a_i·x − b_i)`; nonpositive iff `x ∈ P`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| dot(self.normal(i), x) - self.offsets[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        (0..self.len()).all(|i| dot(self.normal(i), x) <= self.offsets[i] + slack)
    }

    /// Appends halfspaces (unit normals) without revalidating boundedness.
    pub fn with_extra(&self, extra: &[Halfspace]) -> Self {
        let mut normals = self.normals.clone();
        let mut offsets = self.offsets.clone();
        for h in extra {
            normals.extend_from_slice(h.normal.as_slice());
            offsets.push(h.offset);
        }
        Self::from_unit_parts(self.dim, normals, offsets)
    }

    /// Keeps the listed halfspaces in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut normals = Vec::with_capacity(idx.len() * self.dim);
        let mut offsets = Vec::with_capacity(idx.len());
        for &i in idx {
            normals.extend_from_slice(self.normal(i));
            offsets.push(self.offsets[i]);
        }
        Self::from_unit_parts(self.dim, normals, offsets)
    }
}

/// Nonempty list of points of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        check_dim(dim)?;
        if points.is_empty() {
            return Err(Error::Empty("point set".into()));
        }
        let mut coords = Vec::with_capacity(dim * points.len());
        for p in points {
            if p.len() != dim {
                return Err(Error::DimMismatch { expected: dim, got: p.len() });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords)
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        check_dim(dim)?;
        if coords.is_empty() || coords.len() % dim != 0 {
            return Err(Error::Empty("point set".into()));
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("point set"));
        }
        Ok(Self { dim, coords })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let mut coords = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            coords.extend_from_slice(self.point(i));
        }
        Self::from_flat(self.dim, coords)
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.iter().map(|p| p.to_vec()).collect()
    }
}

/// Distance from the origin to `∂P` along unit `u`, and the index of the hit halfspace.
pub fn ray_shoot(p: &HPolytope, u: &[f64]) -> Result<(f64, usize)> {
    if !p.contains_origin() {
        return Err(Error::OriginNotInterior("ray_shoot".into()));
    }
    let mut best = f64::INFINITY;
    let mut arg = usize::MAX;
    for i in 0..p.len() {
        let au = dot(p.normal(i), u);
        if au > 0.0 {
            let t = p.offset(i) / au;
            if t < best {
                best = t;
                arg = i;
            }
        }
    }
    if arg == usize::MAX {
        return Err(Error::Unbounded(u.to_vec()));
    }
    Ok((best, arg))
}

/// `min_i (b_i − a_i·x)` for `x ∈ P`.
pub fn boundary_distance(p: &HPolytope, x: &[f64]) -> Result<f64> {
    let m = -p.max_violation(x);
    if m < 0.0 {
        return Err(Error::Outside(-m));
    }
    Ok(m)
}

/// Inner parallel body `P(δ)`; exact because normals are unit.
pub fn erode(p: &HPolytope, delta: f64) -> Result<HPolytope> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("erosion depth {delta}")));
    }
    let offsets: Vec<f64> = p.offsets.iter().map(|b| b - delta).collect();
    if p.contains_origin() && offsets.iter().any(|&b| b <= 0.0) {
        return Err(Error::Empty(format!("erosion by {delta} removes the origin")));
    }
    Ok(HPolytope::from_unit_parts(p.dim, p.normals.clone(), offsets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square() -> HPolytope {
        HPolytope::cube(2, 0.3)
    }

    #[test]
    fn ray_shoot_axis_and_corner() {
        let p = square();
        let (t, i) = ray_shoot(&p, &[1.0, 0.0]).unwrap();
        assert!((t - 0.3).abs() < 1e-15);
        assert_eq!(p.normal(i), &[1.0, 0.0]);
        let s = 0.5f64.sqrt();
        let (t, _) = ray_shoot(&p, &[s, s]).unwrap();
        assert!((t - 0.3 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn boundary_distance_examples() {
        let p = square();
        assert!((boundary_distance(&p, &[0.1, 0.0]).unwrap() - 0.2).abs() < 1e-15);
        assert!((boundary_distance(&p, &[0.0, 0.0]).unwrap() - 0.3).abs() < 1e-15);
        assert!(boundary_distance(&p, &[0.5, 0.0]).is_err());
    }

    #[test]
    fn erode_examples() {
        let p = square();
        let q = erode(&p, 0.1).unwrap();
        assert!(q.offsets().iter().all(|b| (b - 0.2).abs() < 1e-15));
        assert_eq!(erode(&p, 0.0).unwrap(), p);
        assert!(erode(&p, 0.3).is_err());
    }

    #[test]
    fn unbounded_rejected() {
        let rows = vec![(vec![1.0, 0.0], 1.0), (vec![0.0, 1.0], 1.0)];
        assert!(matches!(HPolytope::from_rows(2, &rows), Err(Error::Unbounded(_))));
    }

    #[test]
    fn ingest_normalizes() {
        let rows = vec![
            (vec![2.0, 0.0], 1.0),
            (vec![-3.0, 0.0], 3.0),
            (vec![0.0, 4.0], 2.0),
            (vec![0.0, -1.0], 1.0),
        ];
        let p = HPolytope::from_rows(2, &rows).unwrap();
        for i in 0..p.len() {
            assert!((norm(p.normal(i)) - 1.0).abs() < 1e-12);
        }
        assert!((p.offset(0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ray_shoot_matches_dense_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<(Vec<f64>, f64)> = (0..50)
            .map(|_| {
                let a: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (a, rng.gen_range(0.2..1.0))
            })
            .collect();
        let p = HPolytope::from_rows(3, &rows).unwrap();
        for _ in 0..200 {
            let u = super::super::random_unit(&mut rng, 3);
            let (t, i) = ray_shoot(&p, &u).unwrap();
            // oracle: every positive-facing halfspace bounds t
            let mut m = f64::INFINITY;
            for j in 0..p.len() {
                let au = dot(p.normal(j), &u);
                if au > 0.0 {
                    m = m.min(p.offset(j) / au);
                }
            }
            assert_eq!(t, m);
            let hit: Vec<f64> = u.iter().map(|x| x * t).collect();
            assert!(p.max_violation(&hit) <= 1e-9);
            assert!((dot(p.normal(i), &hit) - p.offset(i)).abs() <= 1e-9);
        }
    }

    #[test]
    fn erode_boundary_at_exact_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<(Vec<f64>, f64)> = (0..30)
            .map(|_| {
                let a: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (a, rng.gen_range(0.3..1.0))
            })
            .collect();
        let p = HPolytope::from_rows(3, &rows).unwrap();
        let q = erode(&p, 0.05).unwrap();
        for _ in 0..200 {
            let u = super::super::random_unit(&mut rng, 3);
            let (t, _) = ray_shoot(&q, &u).unwrap();
            let y: Vec<f64> = u.iter().map(|x| x * t).collect();
            let bd = boundary_distance(&p, &y).unwrap();
            assert!((bd - 0.05).abs() < 1e-7);
        }
    }
}
