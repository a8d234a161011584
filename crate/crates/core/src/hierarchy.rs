//! Levels of Macbeath ellipsoids covering `∂P(Δ_i)` and the DAG linking them.
//!
//! Each level is built by a greedy cover: candidate points on `∂P(δ)` are
//! scanned in grid order and a candidate is selected when no already exported
//! ellipsoid, shrunk by `Tuning::select_shrink`, contains it. Exported
//! ellipsoids are fits of `M^ν(x)` with `ν = Tuning::export_scale`. Since
//! `shrink·ν ≥ 4λ₀`, selected centers lie outside each other's `M^{4λ₀}` and
//! their `λ₀`-regions are pairwise disjoint.

use std::collections::HashMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom_core::{
    cube_facet_grid, dot, ellipsoids_intersect, erode, norm, random_unit, ray_shoot, Ellipsoid, HPolytope, Halfspace,
    FIT_TOL,
};
use crate::macbeath::{macbeath_ellipsoid, macbeath_region};

/// Constants of the construction for a body in `γ`-canonical form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    pub dim: usize,
    pub gamma: f64,
    /// `1/(20d)`.
    pub lambda0: f64,
    /// `½(γ²/(4d))^d`.
    pub delta0: f64,
    /// `8/(3γ)`.
    pub c1: f64,
    /// `160/(3γ²)`.
    pub c2: f64,
    pub c3: f64,
}

impl Constants {
    pub fn new(dim: usize, gamma: f64, c3: f64) -> Self {
        let d = dim as f64;
        Self {
            dim,
            gamma,
            lambda0: 1.0 / (20.0 * d),
            delta0: 0.5 * (gamma * gamma / (4.0 * d)).powi(dim as i32),
            c1: 8.0 / (3.0 * gamma),
            c2: 160.0 / (3.0 * gamma * gamma),
            c3,
        }
    }
}

/// Practical parameters of the level construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tuning {
    /// Depth of level 0.
    pub top_depth: f64,
    /// `ν`: exported ellipsoids fit `M^ν(x)` and lie in `M^{ν√d(1+tol)}(x)`.
    pub export_scale: f64,
    /// Candidates inside an exported ellipsoid shrunk by this factor are skipped.
    pub select_shrink: f64,
    pub fit_tol: f64,
    /// Grid cells per facet side at depth `δ` are about `grid_density/√δ`.
    pub grid_density: f64,
    pub max_grid: usize,
    /// Random boundary samples per refinement round (at least).
    pub round_samples: usize,
    pub max_rounds: usize,
    pub seed: u64,
}

impl Tuning {
    pub fn practical(c: &Constants) -> Self {
        let d = c.dim as f64;
        Self {
            top_depth: c.gamma / 8.0,
            export_scale: 1.0 / (d.sqrt() * (1.0 + FIT_TOL)),
            select_shrink: 0.8,
            fit_tol: FIT_TOL,
            grid_density: 0.5,
            max_grid: 200_000,
            round_samples: 2000,
            max_rounds: 40,
            seed: 0,
        }
    }

    /// Scale `μ` with `M^μ(x) ⊆ exported ellipsoid`.
    pub fn inner_scale(&self) -> f64 {
        self.export_scale
    }

    /// Scale `μ` with `exported ellipsoid ⊆ M^μ(x)`.
    pub fn outer_scale(&self, dim: usize) -> f64 {
        self.export_scale * (dim as f64).sqrt() * (1.0 + self.fit_tol)
    }
}

/// One covering level.
#[derive(Debug, Clone)]
pub struct LevelBuild {
    pub depth: f64,
    pub centers: Vec<Vec<f64>>,
    pub ellipsoids: Vec<Ellipsoid>,
    pub candidates: usize,
    pub rounds: usize,
}

/// Spatial hash of ellipsoids by bounding box.
pub(crate) struct CoverIndex {
    dim: usize,
    h: f64,
    cells: HashMap<u128, Vec<u32>>,
    big: Vec<u32>,
    ells: Vec<Ellipsoid>,
}

const MAX_CELLS: usize = 4096;

impl CoverIndex {
    pub(crate) fn new(dim: usize, h: f64) -> Self {
        Self { dim, h: h.clamp(1e-4, 1.0), cells: HashMap::new(), big: Vec::new(), ells: Vec::new() }
    }

    fn cell(&self, x: f64) -> i64 {
        ((x / self.h).floor() as i64).clamp(-30000, 30000)
    }

    fn key(cell: &[i64]) -> u128 {
        cell.iter().fold(0u128, |k, &c| (k << 16) | ((c + 32768) as u128 & 0xffff))
    }

    pub(crate) fn insert(&mut self, e: Ellipsoid) -> u32 {
        let id = self.ells.len() as u32;
        let d = self.dim;
        let (ax, semi) = (e.axes(), e.semi_axes());
        let mut lo = vec![0i64; d];
        let mut hi = vec![0i64; d];
        let mut count = 1usize;
        for i in 0..d {
            let ext = (0..d).map(|k| (ax[(i, k)] * semi[k]).powi(2)).sum::<f64>().sqrt();
            lo[i] = self.cell(e.center()[i] - ext);
            hi[i] = self.cell(e.center()[i] + ext);
            count = count.saturating_mul((hi[i] - lo[i] + 1) as usize);
        }
        if count > MAX_CELLS {
            self.big.push(id);
        } else {
            let mut cur = lo.clone();
            loop {
                self.cells.entry(Self::key(&cur)).or_default().push(id);
                let mut k = 0;
                while k < d {
                    if cur[k] < hi[k] {
                        cur[k] += 1;
                        break;
                    }
                    cur[k] = lo[k];
                    k += 1;
                }
                if k == d {
                    break;
                }
            }
        }
        self.ells.push(e);
        id
    }

    /// Ids of ellipsoids whose bounding box may contain `z`.
    fn near(&self, z: &[f64]) -> impl Iterator<Item = u32> + '_ {
        let key: Vec<i64> = z.iter().map(|&x| self.cell(x)).collect();
        let local = self.cells.get(&Self::key(&key)).map(|v| v.as_slice()).unwrap_or(&[]);
        local.iter().chain(self.big.iter()).copied()
    }

    /// Whether some ellipsoid has `quad(z) ≤ thresh`.
    pub(crate) fn covered(&self, z: &[f64], thresh: f64) -> bool {
        self.near(z).any(|i| self.ells[i as usize].quad(z) <= thresh)
    }

    pub(crate) fn into_ellipsoids(self) -> Vec<Ellipsoid> {
        self.ells
    }
}

fn shoot_point(p: &HPolytope, u: &[f64]) -> Result<Vec<f64>> {
    let (t, _) = ray_shoot(p, u)?;
    Ok(u.iter().map(|v| v * t).collect())
}

/// Greedy cover of `∂P(δ)` by exported Macbeath ellipsoids.
pub fn build_level(p: &HPolytope, delta: f64, consts: &Constants, tuning: &Tuning) -> Result<LevelBuild> {
    let d = p.dim();
    if consts.dim != d {
        return Err(Error::DimMismatch { expected: consts.dim, got: d });
    }
    if !(delta > 0.0 && delta <= tuning.top_depth * (1.0 + 1e-12)) {
        return Err(Error::InvalidArgument(format!(
            "level depth {delta} outside (0, {}]",
            tuning.top_depth
        )));
    }
    let pd = erode(p, delta)?;
    let mut k = (tuning.grid_density / delta.sqrt()).ceil().max(2.0) as usize;
    while k > 2 && 2 * d * k.pow((d - 1) as u32) > tuning.max_grid {
        k -= 1;
    }
    let grid = cube_facet_grid(d, k);
    let candidates: Vec<Vec<f64>> =
        grid.par_iter().map(|u| shoot_point(&pd, u)).collect::<Result<_>>()?;

    let shrink2 = tuning.select_shrink * tuning.select_shrink;
    let mut index = CoverIndex::new(d, tuning.export_scale * delta.sqrt());
    let mut centers: Vec<Vec<f64>> = Vec::new();
    let select = |z: &Vec<f64>, index: &mut CoverIndex, centers: &mut Vec<Vec<f64>>| -> Result<bool> {
        if index.covered(z, shrink2) {
            return Ok(false);
        }
        let e = macbeath_ellipsoid(p, z, tuning.export_scale, tuning.fit_tol)?;
        index.insert(e.exported());
        centers.push(z.clone());
        Ok(true)
    };
    for z in &candidates {
        select(z, &mut index, &mut centers)?;
    }
    let mut total = candidates.len();
    let mut rng = ChaCha8Rng::seed_from_u64(tuning.seed ^ delta.to_bits());
    let mut rounds = 0;
    while rounds < tuning.max_rounds {
        rounds += 1;
        let n = tuning.round_samples.max(4 * centers.len());
        let dirs: Vec<Vec<f64>> = (0..n).map(|_| random_unit(&mut rng, d)).collect();
        let samples: Vec<Vec<f64>> =
            dirs.par_iter().map(|u| shoot_point(&pd, u)).collect::<Result<_>>()?;
        total += n;
        let mut added = 0;
        for z in &samples {
            if select(z, &mut index, &mut centers)? {
                added += 1;
            }
        }
        if added == 0 {
            break;
        }
    }
    Ok(LevelBuild { depth: delta, centers, ellipsoids: index.into_ellipsoids(), candidates: total, rounds })
}

/// What a leaf answers with.
#[derive(Debug, Clone, PartialEq)]
pub enum LeafPayload {
    /// Supporting halfspace of `P` at the hit point of the leaf center ray.
    Halfspace { index: usize, halfspace: Halfspace },
    /// Index of a nested structure owned by the caller.
    Sub(usize),
}

#[derive(Debug, Clone)]
pub struct DagNode {
    pub level: usize,
    pub center: Vec<f64>,
    pub ellipsoid: Ellipsoid,
    pub children: Vec<u32>,
    pub payload: Option<LeafPayload>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DagStats {
    pub level_counts: Vec<usize>,
    pub candidates: Vec<usize>,
    pub max_out_degree: usize,
    pub links: usize,
    /// Links checked for a sampled ray through both ellipsoids (the first
    /// few of each parent).
    pub checked_links: usize,
    /// Checked links for which such a ray was found.
    pub confirmed_links: usize,
}

#[derive(Debug, Clone)]
pub struct Dag {
    pub dim: usize,
    pub nodes: Vec<DagNode>,
    /// Node ids per level; level 0 are the root's children.
    pub levels: Vec<Vec<u32>>,
    pub depths: Vec<f64>,
    pub delta_target: f64,
    /// `μ` with `M^μ(center) ⊆ node ellipsoid` for every node.
    pub inner_scale: f64,
    pub stats: DagStats,
}

/// Result of walking the DAG along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Descent {
    pub leaf: u32,
    /// Nodes visited, the root included.
    pub visited: usize,
    /// Whether some step found no child meeting the ray and took the nearest one.
    pub missed: bool,
}

/// Depths `Δ_i = top/2^i` for `i = 0..=ℓ`, `ℓ` the first with `Δ_ℓ ≤ δ`.
pub fn level_depths(top: f64, delta_target: f64) -> Vec<f64> {
    let mut out = vec![top];
    while *out.last().unwrap() > delta_target {
        let next = out.last().unwrap() / 2.0;
        out.push(next);
    }
    out
}

/// Half-angle of a cone around the center direction that contains every
/// origin ray meeting `e`; `π` when `e` holds the origin.
fn angular_radius(e: &Ellipsoid) -> f64 {
    let c = norm(e.center().as_slice());
    let r = e.max_semi_axis();
    if r >= c {
        std::f64::consts::PI
    } else {
        (r / c).asin()
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}

/// Builds all levels and links each node to the next-level nodes that some
/// origin ray may meet together with it.
pub fn build_dag(p: &HPolytope, delta_target: f64, consts: &Constants, tuning: &Tuning) -> Result<Dag> {
    if !(delta_target > 0.0) {
        return Err(Error::InvalidArgument(format!("target depth {delta_target}")));
    }
    let depths = level_depths(tuning.top_depth, delta_target);
    let builds: Vec<LevelBuild> =
        depths.iter().map(|&dl| build_level(p, dl, consts, tuning)).collect::<Result<_>>()?;
    link_levels(p.dim(), builds, delta_target, tuning)
}

/// Assembles prebuilt levels (top first) into a DAG.
pub fn link_levels(d: usize, builds: Vec<LevelBuild>, delta_target: f64, tuning: &Tuning) -> Result<Dag> {
    if builds.is_empty() {
        return Err(Error::InvalidArgument("no levels to link".into()));
    }
    let depths: Vec<f64> = builds.iter().map(|b| b.depth).collect();
    let mut nodes = Vec::new();
    let mut levels = Vec::new();
    let mut stats = DagStats::default();
    for (i, b) in builds.into_iter().enumerate() {
        stats.level_counts.push(b.centers.len());
        stats.candidates.push(b.candidates);
        let mut ids = Vec::with_capacity(b.centers.len());
        for (c, e) in b.centers.into_iter().zip(b.ellipsoids) {
            ids.push(nodes.len() as u32);
            nodes.push(DagNode { level: i, center: c, ellipsoid: e, children: Vec::new(), payload: None });
        }
        levels.push(ids);
    }
    let dirs: Vec<Vec<f64>> = nodes.iter().map(|n| unit(n.ellipsoid.center().as_slice())).collect();
    let radii: Vec<f64> = nodes.iter().map(|n| angular_radius(&n.ellipsoid)).collect();
    for i in 0..levels.len().saturating_sub(1) {
        let (parents, kids) = (&levels[i], &levels[i + 1]);
        let links: Vec<(Vec<u32>, usize, usize)> = parents
            .par_iter()
            .map(|&u| {
                let mut out = Vec::new();
                let (mut checked, mut confirmed) = (0, 0);
                for &v in kids {
                    let (a, b) = (u as usize, v as usize);
                    let ang = dot(&dirs[a], &dirs[b]).clamp(-1.0, 1.0).acos();
                    if ang <= radii[a] + radii[b] + 1e-12 && !cones_separated(&nodes[a].ellipsoid, &nodes[b].ellipsoid) {
                        out.push(v);
                        if checked < CONFIRM_SAMPLE {
                            checked += 1;
                            confirmed += usize::from(confirm_link(&nodes[a].ellipsoid, &nodes[b].ellipsoid, d));
                        }
                    }
                }
                (out, checked, confirmed)
            })
            .collect();
        for (&u, (kids, checked, confirmed)) in parents.iter().zip(links) {
            stats.links += kids.len();
            stats.checked_links += checked;
            stats.confirmed_links += confirmed;
            stats.max_out_degree = stats.max_out_degree.max(kids.len());
            nodes[u as usize].children = kids;
        }
    }
    Ok(Dag { dim: d, nodes, levels, depths, delta_target, inner_scale: tuning.inner_scale(), stats })
}

/// Links per parent that get the sampled-ray confirmation.
const CONFIRM_SAMPLE: usize = 8;

/// `argmax_{y∈E} h·y`.
fn support_point(e: &Ellipsoid, h: &[f64]) -> Vec<f64> {
    let d = e.dim();
    let (axes, semi) = (e.axes(), e.semi_axes());
    let mut g = vec![0.0; d];
    for k in 0..d {
        let p: f64 = (0..d).map(|i| axes[(i, k)] * h[i]).sum::<f64>() * semi[k] * semi[k];
        for i in 0..d {
            g[i] += axes[(i, k)] * p;
        }
    }
    let s = dot(h, &g).sqrt();
    let mut y = e.center().as_slice().to_vec();
    if s > 0.0 {
        for i in 0..d {
            y[i] += g[i] / s;
        }
    }
    y
}

/// Whether a hyperplane through the origin strictly separates `a` from `b`,
/// so that no origin ray meets both. Tries the bisecting plane of the center
/// directions, then refines it from the support points it leaves closest.
fn cones_separated(a: &Ellipsoid, b: &Ellipsoid) -> bool {
    let (ca, cb) = (a.center().as_slice(), b.center().as_slice());
    if norm(ca) == 0.0 || norm(cb) == 0.0 {
        return false;
    }
    let mut h: Vec<f64> = unit(cb).iter().zip(unit(ca)).map(|(x, y)| x - y).collect();
    for _ in 0..3 {
        if norm(&h) < 1e-12 {
            return false;
        }
        let neg: Vec<f64> = h.iter().map(|x| -x).collect();
        if a.support(&h) < -1e-12 && b.support(&neg) < -1e-12 {
            return true;
        }
        let (pa, pb) = (support_point(a, &h), support_point(b, &neg));
        if norm(&pa) == 0.0 || norm(&pb) == 0.0 {
            return false;
        }
        h = unit(&pb).iter().zip(unit(&pa)).map(|(x, y)| x - y).collect();
    }
    false
}

/// Looks for one of 32 rays through points of `child` that also meets `parent`.
fn confirm_link(parent: &Ellipsoid, child: &Ellipsoid, d: usize) -> bool {
    let mut w = vec![0.0; d];
    for k in 0..32usize {
        for (j, wj) in w.iter_mut().enumerate() {
            let phase = (k * (2 * j + 1)) as f64 * 0.7548776662466927 + j as f64 * 0.5698402909980532;
            *wj = (std::f64::consts::TAU * phase.fract()).cos();
        }
        let n = norm(&w);
        let s = 0.9 * ((k % 4) as f64 + 1.0) / 4.0;
        let dir: Vec<f64> = if k == 0 || n == 0.0 {
            child.center().as_slice().to_vec()
        } else {
            child.boundary_point(&w.iter().map(|x| x / n * s).collect::<Vec<_>>())
        };
        if norm(&dir) > 0.0 && parent.ray_interval(&dir).is_some() {
            return true;
        }
    }
    false
}

impl Dag {
    pub fn depth_count(&self) -> usize {
        self.levels.len()
    }

    /// `ℓ`, the index of the leaf level.
    pub fn leaf_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn leaves(&self) -> &[u32] {
        self.levels.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn total_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn pick(&self, options: &[u32], u: &[f64]) -> (u32, bool) {
        for &c in options {
            if self.nodes[c as usize].ellipsoid.ray_interval(u).is_some() {
                return (c, false);
            }
        }
        let nearest = options
            .iter()
            .copied()
            .max_by(|&a, &b| {
                let ca = dot(&unit(self.nodes[a as usize].center.as_slice()), u);
                let cb = dot(&unit(self.nodes[b as usize].center.as_slice()), u);
                ca.total_cmp(&cb)
            })
            .expect("nonempty level");
        (nearest, true)
    }

    /// Walks from the root to a leaf whose ellipsoid meets the ray `{t·u}`;
    /// falls back to the angularly nearest child when no child meets it.
    pub fn descend_lenient(&self, u: &[f64]) -> Descent {
        let (mut cur, mut missed) = self.pick(&self.levels[0], u);
        let mut visited = 2;
        while !self.nodes[cur as usize].children.is_empty() {
            let (next, m) = self.pick(&self.nodes[cur as usize].children, u);
            missed |= m;
            cur = next;
            visited += 1;
        }
        Descent { leaf: cur, visited, missed }
    }

    /// Strict descent: errors when some step finds no child meeting the ray.
    pub fn descend(&self, u: &[f64]) -> Result<u32> {
        let r = self.descend_lenient(u);
        if r.missed {
            return Err(Error::Invariant(format!("no child ellipsoid meets the ray {u:?}")));
        }
        Ok(r.leaf)
    }

    /// Stores at each leaf the halfspace of `p` first hit by the ray through its center.
    pub fn attach_leaf_halfspaces(&mut self, p: &HPolytope) -> Result<()> {
        let ids = self.leaves().to_vec();
        for id in ids {
            let node = &mut self.nodes[id as usize];
            let u = unit(&node.center);
            let (_, index) = ray_shoot(p, &u)?;
            node.payload = Some(LeafPayload::Halfspace { index, halfspace: p.halfspace(index) });
        }
        Ok(())
    }

    /// CSV rows `center…, shape row-major…` for the ellipsoids of one level.
    pub fn write_level_csv<W: Write>(&self, level: usize, mut w: W) -> Result<()> {
        let ids = self
            .levels
            .get(level)
            .ok_or_else(|| Error::InvalidArgument(format!("no level {level}")))?;
        for &id in ids {
            let e = &self.nodes[id as usize].ellipsoid;
            let mut row: Vec<String> = e.center().iter().map(|x| format!("{x:?}")).collect();
            let s = e.shape();
            for i in 0..self.dim {
                for j in 0..self.dim {
                    row.push(format!("{:?}", s[(i, j)]));
                }
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Pairs of level nodes whose `λ`-regions in `p` intersect, by LP.
    ///
    /// Pairs whose ellipsoids are disjoint are skipped without an LP; this is
    /// exact when `λ ≤ inner_scale`. Returns `(intersecting pairs, LPs run)`.
    pub fn level_overlaps(&self, p: &HPolytope, level: usize, lambda: f64) -> Result<(usize, usize)> {
        let ids = self
            .levels
            .get(level)
            .ok_or_else(|| Error::InvalidArgument(format!("no level {level}")))?;
        let filter = lambda <= self.inner_scale;
        let mut e0 = vec![0.0; self.dim];
        e0[0] = 1.0;
        let mut spans: Vec<(f64, f64, u32)> = ids
            .iter()
            .map(|&id| {
                let e = &self.nodes[id as usize].ellipsoid;
                let c = e.center()[0];
                let h = if filter { e.inv_quad(&e0).sqrt() } else { f64::INFINITY };
                (c - h, c + h, id)
            })
            .collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut pairs = Vec::new();
        for i in 0..spans.len() {
            for j in i + 1..spans.len() {
                if spans[j].0 > spans[i].1 {
                    break;
                }
                let (a, b) = (spans[i].2 as usize, spans[j].2 as usize);
                if !filter || ellipsoids_intersect(&self.nodes[a].ellipsoid, &self.nodes[b].ellipsoid) {
                    pairs.push((a, b));
                }
            }
        }
        let hits: Vec<Result<bool>> = pairs
            .par_iter()
            .map(|&(a, b)| {
                let ra = macbeath_region(p, &self.nodes[a].center, lambda)?;
                let rb = macbeath_region(p, &self.nodes[b].center, lambda)?;
                ra.intersects(&rb)
            })
            .collect();
        let mut n = 0;
        for h in hits {
            n += h? as usize;
        }
        Ok((n, pairs.len()))
    }

    /// Random points of `∂P(Δ_level)` not contained in any ellipsoid of the level.
    pub fn level_misses(&self, p: &HPolytope, level: usize, samples: usize, seed: u64) -> Result<usize> {
        let ids = self
            .levels
            .get(level)
            .ok_or_else(|| Error::InvalidArgument(format!("no level {level}")))?;
        let pd = erode(p, self.depths[level])?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..samples)
            .map(|_| shoot_point(&pd, &random_unit(&mut rng, self.dim)))
            .collect::<Result<_>>()?;
        Ok(pts
            .par_iter()
            .filter(|z| !ids.iter().any(|&id| self.nodes[id as usize].ellipsoid.contains(z, 1e-9)))
            .count())
    }
}
