//! Extent measures built on kernels and membership indices: approximate
//! diameter, directional width queries, well-separated approximate nearest
//! neighbor, and bichromatic closest pair.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::apm::{build_apm, ApmIndex};
use crate::error::{Error, Result};
use crate::geom_core::{
    canonicalize_hpoly, canonicalize_points, check_dim, dist, dist2, dot, norm, polar_points_to_halfspaces,
    sphere_lattice, AffineMap, HPolytope, PointSet,
};
use crate::kernel::{build_kernel, prune_hrep, BootstrapConfig};

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("eps {eps} must lie in (0, 1)")))
    }
}

fn check_query(q: &[f64], d: usize) -> Result<()> {
    if q.len() != d {
        return Err(Error::DimMismatch { expected: d, got: q.len() });
    }
    if q.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("query"));
    }
    Ok(())
}

/// Kernel indices, or every index when the set is too small or too flat for
/// the kernel construction (then the full set is its own kernel).
fn kernel_or_all(s: &PointSet, eps: f64) -> Result<Vec<usize>> {
    match build_kernel(s, eps, &BootstrapConfig::default()) {
        Ok(k) => Ok(k.subset),
        Err(Error::Degenerate(m)) => {
            log::debug!("kernel skipped: {m}");
            Ok((0..s.len()).collect())
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiameterResult {
    pub p: usize,
    pub q: usize,
    pub dist: f64,
    pub kernel_size: usize,
    pub directions: usize,
}

/// `(1−ε)`-approximate diameter; `(p, q)` index an actual input pair.
///
/// The kernel is built at `ε/3`, and the direction net has angular radius
/// `θ = arccos(1−ε/3)`, so the extreme kernel pair along the net direction
/// nearest the diametral one is at least `(1−ε/3)²·diam` apart.
pub fn diameter(s: &PointSet, eps: f64) -> Result<DiameterResult> {
    check_dim(s.dim())?;
    check_eps(eps)?;
    if s.len() < 2 {
        return Err(Error::Empty("diameter needs at least two points".into()));
    }
    let kernel = kernel_or_all(s, eps / 3.0)?;
    let theta = (1.0 - eps / 3.0).acos();
    let dirs = sphere_lattice(s.dim(), theta);
    let best = dirs
        .par_iter()
        .map(|v| {
            let (mut lo, mut hi) = ((f64::INFINITY, 0), (f64::NEG_INFINITY, 0));
            for &i in &kernel {
                let t = dot(s.point(i), v);
                if t < lo.0 {
                    lo = (t, i);
                }
                if t > hi.0 {
                    hi = (t, i);
                }
            }
            let (a, b) = (lo.1.min(hi.1), lo.1.max(hi.1));
            (dist(s.point(a), s.point(b)), a, b)
        })
        .reduce(|| (-1.0, 0, 0), |x, y| if y.0 > x.0 || (y.0 == x.0 && (y.1, y.2) < (x.1, x.2)) { y } else { x });
    Ok(DiameterResult { p: best.1, q: best.2, dist: best.0, kernel_size: kernel.len(), directions: dirs.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthStats {
    pub input: usize,
    pub kernel_size: usize,
    pub polar_facets: usize,
    pub apm_eps: f64,
    pub apm_nodes: usize,
}

/// Directional width queries through the polar body.
///
/// In the canonical frame the polar `P = {z : y·z ≤ 1, y ∈ K}` of a kernel `K`
/// has radial function `ρ(u) = 1/h_K(u)`, so `width_u = 1/ρ(u) + 1/ρ(−u)`.
/// Ray lengths are found by bisection against an absolute membership index
/// of a pruned outer approximation of `P`.
///
/// Error split (relative): kernel `ε/4`, pruning `ε/4`, membership `ε/4`,
/// bisection `ε/8`. Every estimate is at most the true width.
#[derive(Debug, Clone)]
pub struct WidthIndex {
    /// Original → canonical coordinates of the input points.
    pub map: AffineMap,
    pub apm: ApmIndex,
    /// Radius of a ball about the polar origin inside `P`.
    pub inner: f64,
    pub eps: f64,
    pub stats: WidthStats,
}

impl WidthIndex {
    pub fn build(s: &PointSet, eps: f64) -> Result<Self> {
        check_dim(s.dim())?;
        check_eps(eps)?;
        let cb = canonicalize_points(s)?;
        let sc = cb.points().expect("point body");
        let kernel = build_kernel(sc, eps / 4.0, &BootstrapConfig::default())?;
        let k = sc.subset(&kernel.subset)?;
        let reach = k.iter().map(norm).fold(0.0, f64::max);
        let inner = 1.0 / reach;
        let polar = polar_points_to_halfspaces(&k)?;
        let pruned = prune_hrep(&polar, eps / 4.0 * inner)?;
        let stretch = canonicalize_hpoly(&pruned)?.map.inverse_norm();
        // inside verdicts lie within ε_a·stretch of P; the ray overshoot is at
        // most that distance over the inner radius, relative to the ray length
        let apm_eps = (eps / 4.0 * inner / stretch).min(0.5);
        let apm = build_apm(&pruned, apm_eps, 0)?;
        let stats = WidthStats {
            input: s.len(),
            kernel_size: k.len(),
            polar_facets: pruned.len(),
            apm_eps,
            apm_nodes: apm.stats.total_nodes,
        };
        log::debug!("width index: {stats:?}");
        Ok(Self { map: cb.map, apm, inner: inner * (1.0 - 1e-9), eps, stats })
    }

    pub fn dim(&self) -> usize {
        self.map.dim()
    }

    /// Upper end of the bracketed ray length of `P` along unit `u`: a value
    /// the index rejects, within relative `ε/8` of one it accepts.
    fn ray_length(&self, u: &[f64]) -> Result<f64> {
        let inside = |t: f64| -> Result<bool> {
            let q: Vec<f64> = u.iter().map(|x| x * t).collect();
            Ok(self.apm.query(&q)?.inside)
        };
        let mut lo = self.inner;
        let mut hi = 2.0 * lo;
        let mut steps = 0;
        while inside(hi)? {
            lo = hi;
            hi *= 2.0;
            steps += 1;
            if steps > 200 {
                return Err(Error::Invariant("polar ray never leaves the index".into()));
            }
        }
        while hi / lo - 1.0 > self.eps / 8.0 {
            let mid = 0.5 * (lo + hi);
            if inside(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(hi)
    }

    /// Approximate `width_v` of the input for a nonzero `v` (normalized
    /// internally). `query(v)` and `query(−v)` agree bit for bit.
    pub fn query(&self, v: &[f64]) -> Result<f64> {
        check_query(v, self.dim())?;
        let n = norm(v);
        if !(n > 0.0) {
            return Err(Error::InvalidArgument("zero direction".into()));
        }
        let flip = v.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0);
        let u: Vec<f64> = v.iter().map(|x| if flip { -x / n } else { x / n }).collect();
        // h_S(u) = h_{S'}(T^{-T} u) − u·T^{-1}t, so width_u(S) = |w|·width_ŵ(S')
        let w = self.map.inverse_linear().transpose() * nalgebra::DVector::from_column_slice(&u);
        let wn = w.norm();
        let wh: Vec<f64> = w.iter().map(|x| x / wn).collect();
        let neg: Vec<f64> = wh.iter().map(|x| -x).collect();
        let a = self.ray_length(&wh)?;
        let b = self.ray_length(&neg)?;
        Ok(wn * (1.0 / a + 1.0 / b))
    }
}

pub fn width_build(s: &PointSet, eps: f64) -> Result<WidthIndex> {
    WidthIndex::build(s, eps)
}

pub fn width_query(idx: &WidthIndex, v: &[f64]) -> Result<f64> {
    idx.query(v)
}

/// Axis-aligned cube given by its center and side.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    pub center: Vec<f64>,
    pub side: f64,
}

impl Cube {
    pub fn new(center: Vec<f64>, side: f64) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) || center.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad cube side {side}")));
        }
        Ok(Self { center, side })
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        x.iter().zip(&self.center).all(|(a, c)| (a - c).abs() <= self.side / 2.0 + slack)
    }

    /// Euclidean distance from `x` to the cube.
    pub fn distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.center)
            .map(|(a, c)| ((a - c).abs() - self.side / 2.0).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean gap between two cubes.
    pub fn gap(&self, o: &Cube) -> f64 {
        self.center
            .iter()
            .zip(&o.center)
            .map(|(a, b)| ((a - b).abs() - (self.side + o.side) / 2.0).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WsannAnswer {
    pub index: usize,
    pub dist: f64,
    /// False when the lifted search could not certify a candidate and the
    /// answer came from a linear scan.
    pub certified: bool,
}

/// Approximate nearest neighbor for queries well separated from the data.
///
/// Coordinates are centered at the query box and scaled by the data cube
/// side `r`. Each data point `s` lifts to the halfspace
/// `w ≥ (2s − g)·y − |s|²` in `(y, w)`, where `g` is the mean of the `2s`;
/// the upper envelope `G` of these planes gives `NN²(y) = |y|² − g·y − G(y)`.
/// Tilting by `g` keeps the lifted body, clipped to the query box and a cap
/// `w ≤ w_top`, close to round. An absolute membership index of that body
/// brackets `G(y)` by bisection, and the leaf facets met on the way are the
/// candidates. A candidate is returned when its distance is within `1+ε` of
/// the certified lower bound on `NN(q)`; otherwise the query falls back to a
/// linear scan and reports itself uncertified.
#[derive(Debug, Clone)]
pub struct WsannIndex {
    pub data: PointSet,
    pub data_cube: Cube,
    pub query_box: Cube,
    pub sigma: f64,
    pub eps: f64,
    apm: Option<ApmIndex>,
    tilt: Vec<f64>,
    w_top: f64,
    /// Vertical uncertainty `ε_a·‖T⁻¹‖·(1+L)` of an accepted lifted point.
    gap: f64,
    tol_w: f64,
    pub apm_eps: f64,
}

/// Membership tolerance floor for a lifted body in dimension `m`; deeper
/// indices cost more than the scans they would save.
fn wsann_eps_floor(m: usize) -> f64 {
    (WSANN_EPS_MIN * 3f64.powi(m as i32 - 3)).min(0.5)
}

impl WsannIndex {
    /// Queries must lie in `query_box` at distance at least `σ·r` from
    /// `data_cube`.
    pub fn build(s: &PointSet, data_cube: Cube, query_box: Cube, sigma: f64, eps: f64) -> Result<Self> {
        let d = s.dim();
        check_dim(d + 1)?;
        check_eps(eps)?;
        if s.is_empty() {
            return Err(Error::Empty("no data points".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("separation {sigma} must be positive")));
        }
        if data_cube.center.len() != d || query_box.center.len() != d {
            return Err(Error::DimMismatch { expected: d, got: data_cube.center.len().min(query_box.center.len()) });
        }
        let r = data_cube.side;
        if let Some(p) = s.iter().find(|p| !data_cube.contains(p, 1e-9 * r)) {
            return Err(Error::InvalidArgument(format!("data point {p:?} outside its cube")));
        }
        let mut out = Self {
            data: s.clone(),
            data_cube,
            query_box,
            sigma,
            eps,
            apm: None,
            tilt: vec![0.0; d],
            w_top: 0.0,
            gap: 0.0,
            tol_w: eps * sigma * sigma / 4.0,
            apm_eps: 0.0,
        };
        if s.len() == 1 {
            return Ok(out);
        }
        let ys: Vec<Vec<f64>> = s.iter().map(|p| out.normalize(p)).collect();
        let mut g = vec![0.0; d];
        for y in &ys {
            for k in 0..d {
                g[k] += 2.0 * y[k] / ys.len() as f64;
            }
        }
        let planes: Vec<(Vec<f64>, f64)> = ys
            .iter()
            .map(|y| (y.iter().zip(&g).map(|(a, b)| 2.0 * a - b).collect(), dot(y, y)))
            .collect();
        let lip = planes.iter().map(|(a, _)| norm(a)).fold(0.0, f64::max);
        let half = out.query_box.side / (2.0 * r);
        // the envelope is convex, so its maximum over the box is at a corner
        let g_max = (0..1usize << d)
            .map(|m| {
                let c: Vec<f64> = (0..d).map(|k| if m >> k & 1 == 1 { half } else { -half }).collect();
                planes.iter().map(|(a, b)| dot(a, &c) - b).fold(f64::NEG_INFINITY, f64::max)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        out.w_top = g_max + 1.0;
        let mut rows: Vec<(Vec<f64>, f64)> = planes
            .iter()
            .map(|(a, b)| {
                let mut a = a.clone();
                a.push(-1.0);
                (a, *b)
            })
            .collect();
        for k in 0..d {
            let mut a = vec![0.0; d + 1];
            a[k] = 1.0;
            rows.push((a.clone(), half));
            a[k] = -1.0;
            rows.push((a, half));
        }
        let mut top = vec![0.0; d + 1];
        top[d] = 1.0;
        rows.push((top, out.w_top));
        let h = HPolytope::from_rows(d + 1, &rows)?;
        let stretch = canonicalize_hpoly(&h)?.map.inverse_norm();
        let target = eps * sigma * sigma / (2.0 * (1.0 + lip) * stretch);
        let apm_eps = target.clamp(wsann_eps_floor(d + 1), 0.5);
        out.apm = Some(build_apm(&h, apm_eps, 0)?);
        out.apm_eps = apm_eps;
        out.gap = apm_eps * stretch * (1.0 + lip);
        out.tilt = g;
        log::debug!("wsann over {} points: stretch {stretch:.2}, index eps {apm_eps:.4} (target {target:.4})", s.len());
        Ok(out)
    }

    fn normalize(&self, q: &[f64]) -> Vec<f64> {
        let r = self.data_cube.side;
        q.iter().zip(&self.query_box.center).map(|(a, b)| (a - b) / r).collect()
    }

    fn scan(&self, q: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.data.iter().enumerate() {
            let t = dist2(p, q);
            if t < best.1 {
                best = (i, t);
            }
        }
        best
    }

    pub fn query(&self, q: &[f64]) -> Result<WsannAnswer> {
        let d = self.data.dim();
        check_query(q, d)?;
        let r = self.data_cube.side;
        if !self.query_box.contains(q, 1e-9 * r) {
            return Err(Error::Outside(self.query_box.distance(q)));
        }
        let sep = self.data_cube.distance(q);
        if sep < self.sigma * r * (1.0 - 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "query at distance {sep} from the data cube, below the separation {}",
                self.sigma * r
            )));
        }
        let Some(apm) = &self.apm else {
            return Ok(WsannAnswer { index: 0, dist: dist(self.data.point(0), q), certified: true });
        };
        let y = self.normalize(q);
        let base = dot(&y, &y) - dot(&self.tilt, &y);
        let mut lifted = y.clone();
        lifted.push(0.0);
        let mut cands: Vec<usize> = Vec::new();
        let mut probe = |w: f64, cands: &mut Vec<usize>| -> Result<bool> {
            lifted[d] = w;
            let (v, f) = apm.query_with_facet(&lifted)?;
            if let Some(i) = f.filter(|&i| i < self.data.len()) {
                cands.push(i);
            }
            Ok(v.inside)
        };
        let mut w_in = self.w_top - 0.5;
        let s0 = self.normalize(self.data.point(0));
        let mut w_out = s0.iter().zip(&self.tilt).zip(&y).map(|((a, t), b)| (2.0 * a - t) * b).sum::<f64>()
            - dot(&s0, &s0)
            - 1.0;
        let mut step = 1.0;
        while probe(w_out, &mut cands)? {
            w_in = w_out;
            w_out -= step;
            step *= 2.0;
            if step > 1e18 {
                return Err(Error::Invariant("lifted search found no point below the envelope".into()));
            }
        }
        while w_in - w_out > self.tol_w {
            let mid = 0.5 * (w_in + w_out);
            if probe(mid, &mut cands)? {
                w_in = mid;
            } else {
                w_out = mid;
            }
        }
        cands.sort_unstable();
        cands.dedup();
        let best = cands
            .iter()
            .map(|&i| (i, dist2(&self.normalize(self.data.point(i)), &y)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let lower = base - w_in - self.gap;
        if let Some((i, d2)) = best {
            if lower > 0.0 && d2 <= (1.0 + self.eps).powi(2) * lower {
                return Ok(WsannAnswer { index: i, dist: dist(self.data.point(i), q), certified: true });
            }
        }
        let (i, t) = self.scan(q);
        Ok(WsannAnswer { index: i, dist: t.sqrt(), certified: false })
    }
}

/// Membership tolerance floor for a lifted body in 3-space; each further
/// dimension triples it.
pub const WSANN_EPS_MIN: f64 = 0.01;

/// Two-cube form: data in `q_s`, queries in `q_q`, both of side `r`, with a
/// gap of at least `σ·r` between them.
pub fn wsann_build(s: &PointSet, q_s: Cube, q_q: Cube, sigma: f64, eps: f64) -> Result<WsannIndex> {
    if (q_s.side - q_q.side).abs() > 1e-12 * q_s.side {
        return Err(Error::InvalidArgument("query and data cubes differ in side".into()));
    }
    let g = q_s.gap(&q_q);
    if g < sigma * q_s.side * (1.0 - 1e-12) {
        return Err(Error::InvalidArgument(format!("cubes are {g} apart, below σ·r = {}", sigma * q_s.side)));
    }
    WsannIndex::build(s, q_s, q_q, sigma, eps)
}

pub fn wsann_query(idx: &WsannIndex, q: &[f64]) -> Result<WsannAnswer> {
    idx.query(q)
}

type CellKey = [i64; 8];

fn cell_of(p: &[f64], shift: &[f64], side: f64) -> CellKey {
    let mut k = [0i64; 8];
    for (i, x) in p.iter().enumerate() {
        k[i] = ((x + shift[i]) / side).floor() as i64;
    }
    k
}

/// All offsets in `{-1,0,1}^d`.
fn neighbor_offsets(d: usize) -> Vec<CellKey> {
    offsets_within(d, 1, |_| true)
}

fn offsets_within(d: usize, reach: i64, keep: impl Fn(&[i64]) -> bool) -> Vec<CellKey> {
    let mut out = Vec::new();
    let mut cur = vec![-reach; d];
    loop {
        if keep(&cur) {
            let mut k = [0i64; 8];
            k[..d].copy_from_slice(&cur);
            out.push(k);
        }
        let mut i = 0;
        loop {
            if i == d {
                return out;
            }
            cur[i] += 1;
            if cur[i] <= reach {
                break;
            }
            cur[i] = -reach;
            i += 1;
        }
    }
}

fn add(a: &CellKey, b: &CellKey) -> CellKey {
    let mut k = [0i64; 8];
    for i in 0..8 {
        k[i] = a[i] + b[i];
    }
    k
}

type Pair = (f64, usize, usize);

fn better(a: Pair, b: Pair) -> Pair {
    if b.0 < a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2)) {
        b
    } else {
        a
    }
}

/// Closest red-blue pair among pairs in neighboring cells of side `t`.
fn neighbor_pairs(r: &PointSet, b: &PointSet, shift: &[f64], t: f64) -> Option<Pair> {
    let d = r.dim();
    let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
    for (i, p) in r.iter().enumerate() {
        cells.entry(cell_of(p, shift, t)).or_default().push(i);
    }
    let offs = neighbor_offsets(d);
    let best = (0..b.len())
        .into_par_iter()
        .map(|j| {
            let q = b.point(j);
            let c = cell_of(q, shift, t);
            let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
            for o in &offs {
                if let Some(list) = cells.get(&add(&c, o)) {
                    for &i in list {
                        best = better(best, (dist2(r.point(i), q), i, j));
                    }
                }
            }
            best
        })
        .reduce(|| (f64::INFINITY, usize::MAX, usize::MAX), better);
    (best.1 != usize::MAX).then(|| (best.0.sqrt(), best.1, best.2))
}

/// Whether some blue point shares a cell neighborhood with a red point.
fn sieve_hit(r: &PointSet, b: &PointSet, shift: &[f64], t: f64) -> bool {
    let cells: HashSet<CellKey> = r.iter().map(|p| cell_of(p, shift, t)).collect();
    let offs = neighbor_offsets(r.dim());
    (0..b.len()).into_par_iter().any(|j| {
        let c = cell_of(b.point(j), shift, t);
        offs.iter().any(|o| cells.contains(&add(&c, o)))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BcpEstimate {
    /// `b ≤ a < 2b` for the closest-pair distance `b`.
    pub a: f64,
    /// Grid side where the sieve first found a neighboring red-blue pair.
    pub scale: f64,
    pub sieve_rounds: usize,
    /// Whether the pass at the sieve scale already met `a < scale`.
    pub first_pass: bool,
}

/// Constant-factor closest-pair estimate by a randomly shifted grid sieve.
///
/// The cell side `t` is halved or doubled until the smallest `t` whose grid
/// puts some red and blue point in neighboring cells. Then `b > t/2`, and
/// the best neighboring pair at side `t` has length `m ≥ b`; if `m < t` it
/// already satisfies `m < 2b`, otherwise a pass at side `m ≥ b` sees the
/// closest pair and returns it.
pub fn bcp_estimate(r: &PointSet, b: &PointSet, seed: u64) -> Result<BcpEstimate> {
    let d = r.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in r.iter().chain(b.iter()) {
        for k in 0..d {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let extent = dist(&lo, &hi);
    if extent == 0.0 {
        return Ok(BcpEstimate { a: 0.0, scale: 0.0, sieve_rounds: 0, first_pass: true });
    }
    let n = (r.len() + b.len()) as f64;
    let mut t = extent / n.powf(1.0 / d as f64);
    let shift_at = |t: f64| unit.iter().map(|u| u * t).collect::<Vec<f64>>();
    let mut rounds = 1;
    if sieve_hit(r, b, &shift_at(t), t) {
        loop {
            let h = t / 2.0;
            rounds += 1;
            if h < extent * 1e-15 || !sieve_hit(r, b, &shift_at(h), h) {
                break;
            }
            t = h;
        }
    } else {
        loop {
            t *= 2.0;
            rounds += 1;
            if sieve_hit(r, b, &shift_at(t), t) {
                break;
            }
        }
    }
    let (m, _, _) = neighbor_pairs(r, b, &shift_at(t), t).expect("sieve scale has a neighboring pair");
    if m < t || m == 0.0 {
        return Ok(BcpEstimate { a: m, scale: t, sieve_rounds: rounds, first_pass: true });
    }
    let (a, _, _) = neighbor_pairs(r, b, &shift_at(m), m).expect("pass at a pair length sees that pair");
    Ok(BcpEstimate { a, scale: t, sieve_rounds: rounds, first_pass: false })
}

/// Red points bucketed on a grid of cell diameter `a/4`.
#[derive(Debug, Clone)]
pub struct GridPartition {
    pub side: f64,
    pub shift: Vec<f64>,
    pub heavy_threshold: f64,
    pub cells: HashMap<CellKey, Vec<usize>>,
}

impl GridPartition {
    pub fn new(r: &PointSet, a: f64, eps: f64, shift: Vec<f64>) -> Self {
        let d = r.dim();
        let side = a / (4.0 * (d as f64).sqrt());
        let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
        for (i, p) in r.iter().enumerate() {
            cells.entry(cell_of(p, &shift, side)).or_default().push(i);
        }
        Self { side, shift, heavy_threshold: eps.powf(-(d as f64) / 4.0), cells }
    }

    pub fn is_heavy(&self, count: usize) -> bool {
        count as f64 > self.heavy_threshold
    }

    pub fn cell_cube(&self, k: &CellKey, d: usize) -> Cube {
        let center = (0..d).map(|i| (k[i] as f64 + 0.5) * self.side - self.shift[i]).collect();
        Cube { center, side: self.side }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BcpStats {
    pub estimate: BcpEstimate,
    pub cells: usize,
    pub heavy_cells: usize,
    /// Largest number of cells inspected for one blue point.
    pub max_inspected: usize,
    pub wsann_queries: usize,
    /// Heavy-cell queries answered by the scan fallback.
    pub wsann_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BcpResult {
    pub red: usize,
    pub blue: usize,
    pub dist: f64,
    pub stats: BcpStats,
}

/// `(1+ε)`-approximate bichromatic closest pair.
pub fn bcp(r: &PointSet, b: &PointSet, eps: f64, seed: u64) -> Result<BcpResult> {
    check_dim(r.dim())?;
    check_eps(eps)?;
    if r.dim() != b.dim() {
        return Err(Error::DimMismatch { expected: r.dim(), got: b.dim() });
    }
    if r.is_empty() || b.is_empty() {
        return Err(Error::Empty("closest pair needs two nonempty sets".into()));
    }
    let d = r.dim();
    let est = bcp_estimate(r, b, seed)?;
    let a = est.a;
    if a == 0.0 {
        let reds: HashMap<Vec<u64>, usize> =
            (0..r.len()).rev().map(|i| (r.point(i).iter().map(|x| x.to_bits()).collect(), i)).collect();
        let (i, j) = (0..b.len())
            .find_map(|j| reds.get(&b.point(j).iter().map(|x| x.to_bits()).collect::<Vec<_>>()).map(|&i| (i, j)))
            .ok_or_else(|| Error::Invariant("zero estimate without a shared point".into()))?;
        let stats = BcpStats { estimate: est, cells: 0, heavy_cells: 0, max_inspected: 0, wsann_queries: 0, wsann_fallbacks: 0 };
        return Ok(BcpResult { red: i, blue: j, dist: 0.0, stats });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let side0 = a / (4.0 * (d as f64).sqrt());
    let shift: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * side0).collect();
    let grid = GridPartition::new(r, a, eps, shift);
    let s = grid.side;
    let mut heavy_keys: Vec<CellKey> = grid.cells.iter().filter(|(_, v)| grid.is_heavy(v.len())).map(|(k, _)| *k).collect();
    heavy_keys.sort_unstable();
    let heavy: HashMap<CellKey, WsannIndex> = heavy_keys
        .par_iter()
        .map(|k| {
            let cube = grid.cell_cube(k, d);
            let pts = r.subset(&grid.cells[k])?;
            let reach = Cube { center: cube.center.clone(), side: s + 2.0 * (a + s) };
            Ok((*k, WsannIndex::build(&pts, cube, reach, 1.0, eps)?))
        })
        .collect::<Result<_>>()?;
    // offsets whose cells can meet the radius-a ball around a point of cell 0
    let reach = (a / s).ceil() as i64 + 1;
    let offs = offsets_within(d, reach, |o| {
        let gap2: f64 = o.iter().map(|&x| ((x.abs() - 1).max(0) as f64 * s).powi(2)).sum();
        gap2 <= a * a
    });
    let per_blue: Vec<(Pair, usize, usize, usize)> = (0..b.len())
        .into_par_iter()
        .map(|j| -> Result<(Pair, usize, usize, usize)> {
            let q = b.point(j);
            let c = cell_of(q, &grid.shift, s);
            let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
            let (mut inspected, mut queries, mut fallbacks) = (0, 0, 0);
            for o in &offs {
                let k = add(&c, o);
                let Some(list) = grid.cells.get(&k) else { continue };
                let cube = grid.cell_cube(&k, d);
                let near = cube.distance(q);
                let far: f64 = q
                    .iter()
                    .zip(&cube.center)
                    .map(|(x, m)| ((x - m).abs() + s / 2.0).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if near > a || far < a / 2.0 {
                    continue;
                }
                inspected += 1;
                match heavy.get(&k) {
                    Some(w) if w.query_box.contains(q, 0.0) && near >= s => {
                        let ans = w.query(q)?;
                        queries += 1;
                        fallbacks += usize::from(!ans.certified);
                        best = better(best, (ans.dist * ans.dist, list[ans.index], j));
                    }
                    _ => {
                        for &i in list {
                            best = better(best, (dist2(r.point(i), q), i, j));
                        }
                    }
                }
            }
            Ok((best, inspected, queries, fallbacks))
        })
        .collect::<Result<_>>()?;
    let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
    let (mut max_inspected, mut queries, mut fallbacks) = (0, 0, 0);
    for (p, ins, qn, fb) in per_blue {
        best = better(best, p);
        max_inspected = max_inspected.max(ins);
        queries += qn;
        fallbacks += fb;
    }
    if best.1 == usize::MAX {
        return Err(Error::Invariant("no red point in any annulus cell".into()));
    }
    let stats = BcpStats {
        estimate: est,
        cells: grid.cells.len(),
        heavy_cells: heavy.len(),
        max_inspected,
        wsann_queries: queries,
        wsann_fallbacks: fallbacks,
    };
    Ok(BcpResult { red: best.1, blue: best.2, dist: best.0.sqrt(), stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{exact_bcp, exact_diameter, exact_width};
    use rand_distr::{Distribution, StandardNormal};

    fn pts(d: usize, v: &[&[f64]]) -> PointSet {
        PointSet::new(d, &v.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn ball(n: usize, d: usize, seed: u64) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let r = rng.gen::<f64>().powf(1.0 / d as f64) / norm(&g);
                g.iter().map(|x| x * r).collect()
            })
            .collect();
        PointSet::new(d, &v).unwrap()
    }

    fn uniform_cube(n: usize, d: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> PointSet {
        let v: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(lo..hi)).collect()).collect();
        PointSet::new(d, &v).unwrap()
    }

    #[test]
    fn diameter_small_examples() {
        let r = diameter(&pts(2, &[&[0.0, 0.0], &[3.0, 4.0]]), 0.1).unwrap();
        assert_eq!((r.p, r.q, r.dist), (0, 1, 5.0));
        let seg = pts(2, &[&[0.5, 0.5], &[0.0, 0.0], &[0.2, 0.2], &[1.0, 1.0], &[0.7, 0.7]]);
        let r = diameter(&seg, 0.1).unwrap();
        assert_eq!((r.p, r.q), (1, 3));
        assert!(diameter(&pts(2, &[&[0.0, 0.0]]), 0.1).is_err());
    }

    #[test]
    fn diameter_ball_ratio() {
        let s = ball(3000, 3, 5);
        let (_, _, exact) = exact_diameter(&s).unwrap();
        for eps in [0.2, 0.05] {
            let r = diameter(&s, eps).unwrap();
            let ratio = r.dist / exact;
            assert!(ratio >= 1.0 - eps && ratio <= 1.0, "eps {eps} ratio {ratio}");
        }
    }

    #[test]
    fn width_diamond() {
        let s = pts(2, &[&[0.4, 0.0], &[-0.4, 0.0], &[0.0, 0.4], &[0.0, -0.4]]);
        let eps = 0.1;
        let w = WidthIndex::build(&s, eps).unwrap();
        let a = w.query(&[1.0, 0.0]).unwrap();
        assert!((a / 0.8 - 1.0).abs() <= eps, "{a}");
        let h = 0.5f64.sqrt();
        let b = w.query(&[h, h]).unwrap();
        assert!((b / (0.8 * h) - 1.0).abs() <= eps, "{b}");
        assert!(w.query(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn width_random_3d_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let raw = uniform_cube(2000, 3, -1.0, 1.0, &mut rng);
        // stretch and shear so the canonical map matters
        let s = PointSet::new(
            3,
            &raw.iter().map(|p| vec![3.0 * p[0] + p[1], p[1] - 0.5, 0.4 * p[2] + 0.2 * p[0]]).collect::<Vec<_>>(),
        )
        .unwrap();
        let eps = 0.1;
        let w = WidthIndex::build(&s, eps).unwrap();
        for _ in 0..300 {
            let g: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let v: Vec<f64> = g.iter().map(|x| x / norm(&g)).collect();
            let got = w.query(&v).unwrap();
            let exact = exact_width(&s, &v);
            assert!(got <= exact * (1.0 + 1e-9) && got >= (1.0 - eps) * exact, "{got} vs {exact}");
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            assert_eq!(got.to_bits(), w.query(&neg).unwrap().to_bits());
        }
    }

    #[test]
    fn wsann_examples() {
        let one = pts(2, &[&[0.0, 0.0]]);
        let qs = Cube::new(vec![0.0, 0.0], 1.0).unwrap();
        let qq = Cube::new(vec![3.0, 0.0], 1.0).unwrap();
        let w = wsann_build(&one, qs.clone(), qq.clone(), 1.0, 0.1).unwrap();
        assert_eq!(w.query(&[3.2, 0.4]).unwrap().index, 0);
        assert!(w.query(&[0.0, 0.0]).is_err());
        let two = pts(2, &[&[0.0, 0.3], &[0.0, -0.3]]);
        let w = wsann_build(&two, qs.clone(), qq, 1.0, 0.1).unwrap();
        let a = w.query(&[3.0, 0.0]).unwrap();
        assert!((a.dist - (9.0f64 + 0.09).sqrt()).abs() < 1e-12);
        let near = Cube::new(vec![1.5, 0.0], 1.0).unwrap();
        assert!(wsann_build(&two, qs, near, 1.0, 0.1).is_err());
    }

    #[test]
    fn wsann_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let eps = 0.1;
        let mut certified = [0usize; 2];
        let mut total = [0usize; 2];
        for inst in 0..24 {
            let d = if inst % 8 == 7 { 3 } else { 2 };
            let n = rng.gen_range(2..60);
            let s = uniform_cube(n, d, -0.5, 0.5, &mut rng);
            let qs = Cube::new(vec![0.0; d], 1.0).unwrap();
            let mut c: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            c[0] = 2.0;
            let qq = Cube::new(c, 1.0).unwrap();
            let w = wsann_build(&s, qs, qq.clone(), 1.0, eps).unwrap();
            for _ in 0..40 {
                let q: Vec<f64> = qq.center.iter().map(|m| m + rng.gen_range(-0.5..0.5)).collect();
                let a = w.query(&q).unwrap();
                let exact = s.iter().map(|p| dist(p, &q)).fold(f64::INFINITY, f64::min);
                assert!(a.dist <= (1.0 + eps) * exact + 1e-12, "{} vs {exact}", a.dist);
                assert!((dist(s.point(a.index), &q) - a.dist).abs() < 1e-12);
                total[d - 2] += 1;
                certified[d - 2] += usize::from(a.certified);
            }
        }
        // the lifted search answers most planar queries without a scan
        assert!(certified[0] * 10 >= total[0] * 9, "{certified:?} of {total:?}");
    }

    #[test]
    fn bcp_examples() {
        let r = bcp(&pts(2, &[&[0.0, 0.0]]), &pts(2, &[&[3.0, 4.0]]), 0.1, 0).unwrap();
        assert_eq!(r.dist, 5.0);
        let r = bcp(&pts(2, &[&[0.0, 0.0], &[1.0, 0.0]]), &pts(2, &[&[0.5, 0.6], &[3.0, 3.0]]), 0.1, 0).unwrap();
        assert!((r.dist - 0.61f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.blue, 0);
        let same = bcp(&pts(2, &[&[1.0, 1.0], &[2.0, 0.0]]), &pts(2, &[&[2.0, 0.0]]), 0.1, 0).unwrap();
        assert_eq!((same.red, same.dist), (1, 0.0));
    }

    #[test]
    fn bcp_random_against_scan() {
        for seed in 0..6 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let d = 2 + (seed as usize) % 2;
            let r = uniform_cube(1500, d, 0.0, 1.0, &mut rng);
            let b = uniform_cube(1200, d, 0.0, 1.0, &mut rng);
            let (_, _, exact) = exact_bcp(&r, &b).unwrap();
            let out = bcp(&r, &b, 0.1, seed).unwrap();
            let ratio = out.dist / exact;
            assert!((1.0..=1.1).contains(&ratio), "ratio {ratio}");
            let a = out.stats.estimate.a / exact;
            assert!((1.0..2.0).contains(&a), "estimate ratio {a}");
            assert!((dist(r.point(out.red), b.point(out.blue)) - out.dist).abs() < 1e-15);
        }
    }

    #[test]
    fn bcp_clustered_uses_heavy_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = uniform_cube(400, 2, 0.0, 0.05, &mut rng);
        let b = uniform_cube(50, 2, 0.3, 0.35, &mut rng);
        let (_, _, exact) = exact_bcp(&r, &b).unwrap();
        let out = bcp(&r, &b, 0.1, 1).unwrap();
        assert!(out.stats.heavy_cells > 0);
        let ratio = out.dist / exact;
        assert!((1.0..=1.1).contains(&ratio), "ratio {ratio}");
    }
}
