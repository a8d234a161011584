//! ε-kernels: a nearest-point direction net as the base case, conversions
//! between hulls and halfspace lists, and the shadow-partitioned recursive
//! construction.
//!
//! Error bookkeeping is additive in support values. A subset `Q ⊆ S` with
//! `h_Q(v) ≥ h_S(v) − η` for all unit `v` satisfies
//! `width_v(Q) ≥ width_v(S) − 2η`.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom_core::lp::{maximize_over, LpOutcome};
use crate::geom_core::{
    canonicalize_points, check_dim, cube_facet_grid, dist2, dot, norm, polar_halfspaces_to_points,
    polar_points_to_halfspaces, sphere_lattice, HPolytope, PointSet,
};
use crate::hierarchy::{build_dag, Constants, Dag, Tuning};
use crate::macbeath::in_shadow;

/// Direction net used for certified width and radius bounds.
const NET_ANGLE: f64 = 0.05;

/// Work cap (directions × candidates) for [`cover_net`].
const COVER_WORK: usize = 2_000_000_000;

/// Subset of `points` whose support function is within `err` of the full
/// set's in every direction.
///
/// Points are snapped to cells of diameter `err/4` (one representative per
/// cell); then, for samples on a sphere of radius `2R` around the bounding-box
/// center, the nearest representative is kept. With sample spacing `σ` on
/// that sphere the nearest-point step loses at most `σ²/(2t)`, `t ≥ R` the
/// distance from an extreme point to the sphere.
pub fn support_net(points: &PointSet, err: f64) -> Vec<usize> {
    let d = points.dim();
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let c = bbox_center(points);
    let r = points.iter().map(|p| dist2(p, &c)).fold(0.0, f64::max).sqrt();
    if !(r > 0.0) || !(err > 0.0) {
        return vec![0];
    }
    let side = err / 4.0 / (d as f64).sqrt();
    let mut cells: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut reps = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let key: Vec<i64> = p.iter().map(|x| (x / side).floor() as i64).collect();
        cells.entry(key).or_insert_with(|| {
            reps.push(i);
            i
        });
    }
    if reps.len() <= d + 1 {
        return reps;
    }
    let radius = 2.0 * r;
    let t = radius - r;
    let sigma = (1.5 * err * t).sqrt();
    let dirs = sphere_lattice(d, sigma / radius);
    let rep_coords: Vec<f64> = reps.iter().flat_map(|&i| points.point(i).iter().copied()).collect();
    let mut hit: Vec<usize> = dirs
        .par_iter()
        .map(|u| {
            let s: Vec<f64> = (0..d).map(|k| c[k] + radius * u[k]).collect();
            let mut best = (f64::INFINITY, 0usize);
            for (j, q) in rep_coords.chunks_exact(d).enumerate() {
                let dd = dist2(q, &s);
                if dd < best.0 {
                    best = (dd, j);
                }
            }
            reps[best.1]
        })
        .collect();
    hit.sort_unstable();
    hit.dedup();
    hit
}

/// Subset of `points` whose support function is within `err` of the full
/// set's in every direction, chosen by greedy set cover.
///
/// Candidates come from [`support_net`] at `err/4`. Directions of a net with
/// angular radius `α = err/(8R)` each need a candidate within `err/2` of the
/// candidate maximum; moving off a net direction costs at most `2Rα`. Falls
/// back to the candidates when the net would be too large.
pub fn cover_net(points: &PointSet, err: f64) -> Vec<usize> {
    let d = points.dim();
    let cand = support_net(points, err / 4.0);
    if cand.len() <= d + 1 || !(err > 0.0) {
        return cand;
    }
    let c = bbox_center(points);
    let r = points.iter().map(|p| dist2(p, &c)).fold(0.0, f64::max).sqrt();
    let alpha = err / (8.0 * r);
    if lattice_size(d, alpha).saturating_mul(cand.len()) > COVER_WORK {
        return cand;
    }
    let dirs = sphere_lattice(d, alpha);
    let coords: Vec<f64> =
        cand.iter().flat_map(|&i| points.point(i).iter().zip(&c).map(|(x, ci)| x - ci)).collect();
    // candidates within err/2 of the best, per direction
    let covers: Vec<Vec<u32>> = dirs
        .par_iter()
        .map(|u| {
            let vals: Vec<f64> = coords.chunks_exact(d).map(|q| dot(q, u)).collect();
            let h = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (0..vals.len() as u32).filter(|&j| vals[j as usize] >= h - err / 2.0).collect()
        })
        .collect();
    let mut by_cand: Vec<Vec<u32>> = vec![Vec::new(); cand.len()];
    for (k, cov) in covers.iter().enumerate() {
        for &j in cov {
            by_cand[j as usize].push(k as u32);
        }
    }
    let mut count: Vec<usize> = by_cand.iter().map(Vec::len).collect();
    let mut covered = vec![false; dirs.len()];
    let mut heap: std::collections::BinaryHeap<(usize, std::cmp::Reverse<usize>)> =
        count.iter().enumerate().map(|(j, &n)| (n, std::cmp::Reverse(j))).collect();
    let mut chosen = Vec::new();
    while let Some((n, std::cmp::Reverse(j))) = heap.pop() {
        if n == 0 {
            break;
        }
        if n != count[j] {
            heap.push((count[j], std::cmp::Reverse(j)));
            continue;
        }
        chosen.push(cand[j]);
        for &k in &by_cand[j] {
            if !covered[k as usize] {
                covered[k as usize] = true;
                for &o in &covers[k as usize] {
                    count[o as usize] -= 1;
                }
            }
        }
    }
    chosen.sort_unstable();
    chosen
}

fn bbox_center(points: &PointSet) -> Vec<f64> {
    let d = points.dim();
    let mut lo = points.point(0).to_vec();
    let mut hi = lo.clone();
    for p in points.iter() {
        for k in 0..d {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect()
}

/// Number of directions [`sphere_lattice`] returns for `(d, θ)`.
fn lattice_size(d: usize, theta: f64) -> usize {
    let theta = theta.clamp(1e-4, 1.0);
    match d {
        2 => (std::f64::consts::PI / theta).ceil().max(4.0) as usize,
        3 => (9.0 / (theta * theta)).ceil().max(12.0) as usize,
        _ => {
            let k = (((d - 1) as f64).sqrt() / theta).ceil();
            (2.0 * d as f64 * k.powi(d as i32 - 1)).min(usize::MAX as f64) as usize
        }
    }
}

/// Certified lower bound on `min_v width_v(S)` and the radius `max |p|`.
fn width_lower_bound(points: &PointSet) -> (f64, f64) {
    let d = points.dim();
    let r = points.iter().map(norm).fold(0.0, f64::max);
    let dirs = sphere_lattice(d, NET_ANGLE);
    let mut w = f64::INFINITY;
    for v in &dirs {
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
        for p in points.iter() {
            let x = dot(p, v);
            hi = hi.max(x);
            lo = lo.min(x);
        }
        w = w.min(hi - lo);
    }
    // a unit vector within chord NET_ANGLE of a net direction changes each
    // support value by at most r·NET_ANGLE
    ((w - 2.0 * r * NET_ANGLE).max(0.0), r)
}

/// Lower bound on `min_v h(v)` for the hull of `points` around the origin.
fn inner_radius_lower_bound(points: &PointSet) -> f64 {
    let d = points.dim();
    let r = points.iter().map(norm).fold(0.0, f64::max);
    let h = sphere_lattice(d, NET_ANGLE)
        .iter()
        .map(|v| points.iter().map(|p| dot(p, v)).fold(f64::NEG_INFINITY, f64::max))
        .fold(f64::INFINITY, f64::min);
    h - r * NET_ANGLE
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct KernelStats {
    pub input: usize,
    /// Points kept after the shadow filter at the top level.
    pub kept: usize,
    pub discarded: usize,
    /// Points per leaf shadow at the top level.
    pub shadow_sizes: Vec<usize>,
    pub leaves: usize,
    pub hull_facets: usize,
    /// Descents that found no leaf meeting the ray; such points are kept.
    pub misses: usize,
    pub rounds_used: usize,
    /// Size of the recursive result before the final compaction.
    pub union: usize,
    /// `δ` per recursion depth (first build at each depth).
    pub deltas: Vec<f64>,
    /// Exponent `t` per recursion depth.
    pub exponents: Vec<f64>,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelResult {
    /// Sorted, unique indices into the input.
    pub subset: Vec<usize>,
    pub eps: f64,
    pub stats: KernelStats,
}

/// Base case: `(1−ε)`-width kernel of a canonical point set via [`cover_net`].
pub fn base_kernel(s: &PointSet, eps: f64) -> Result<KernelResult> {
    let (w, _) = width_lower_bound(s);
    if !(w > 0.0) {
        return Err(Error::Degenerate("point set has no certified width".into()));
    }
    let subset = cover_net(s, eps * w / 2.0);
    let stats = KernelStats { input: s.len(), kept: s.len(), output: subset.len(), ..Default::default() };
    Ok(KernelResult { subset, eps, stats })
}

/// Nearest point of `{x : a_i·x ≤ b_i}` to `g` by Dykstra's alternating
/// projections; returns the point and the sweep count.
pub fn dykstra_project(p: &HPolytope, g: &[f64], tol: f64, cap: usize) -> (Vec<f64>, usize) {
    let d = p.dim();
    let m = p.len();
    let mut x = g.to_vec();
    let mut corr = vec![0.0; m * d];
    let mut active = vec![false; m];
    for sweep in 1..=cap {
        let mut change: f64 = 0.0;
        for i in 0..m {
            let a = p.normal(i);
            let ci = &mut corr[i * d..(i + 1) * d];
            if !active[i] && dot(a, &x) <= p.offset(i) {
                continue;
            }
            let y: Vec<f64> = (0..d).map(|k| x[k] + ci[k]).collect();
            let viol = dot(a, &y) - p.offset(i);
            let mut nx = y.clone();
            if viol > 0.0 {
                for k in 0..d {
                    nx[k] -= viol * a[k];
                }
            }
            let mut any = false;
            for k in 0..d {
                ci[k] = y[k] - nx[k];
                any |= ci[k] != 0.0;
                change = change.max((nx[k] - x[k]).abs());
            }
            active[i] = any;
            x = nx;
        }
        if change <= tol {
            return (x, sweep);
        }
    }
    (x, cap)
}

/// Inner approximation of `conv(S)` by halfspaces, with support error at
/// most `δ` and `P ⊆ conv(S)`.
///
/// `S` must contain a ball around the origin. Steps: a support net `K` of
/// `S` (error `δ/2`); its polar `D`; projections of a grid on a cube around
/// `D` onto `D`, which form a support net of `D`; the polar of those points
/// is an outer approximation of `conv(K)`, which is finally eroded by its
/// certified excess.
pub fn hull_to_hrep(s: &PointSet, delta: f64) -> Result<HPolytope> {
    let d = s.dim();
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("hull accuracy {delta}")));
    }
    let k_idx = support_net(s, delta / 2.0);
    let k = s.subset(&k_idx)?;
    let rk = inner_radius_lower_bound(&k);
    if !(rk > 0.0) {
        return Err(Error::OriginNotInterior("hull of the points is too thin around the origin".into()));
    }
    let big_r = k.iter().map(norm).fold(0.0, f64::max);
    let dual = polar_points_to_halfspaces(&k)?;
    // primal excess e1 before erosion; eroding by e1 costs e1·R_H/r ≤ δ/2
    let e1 = 0.5 * delta * rk / (2.0 * big_r);
    let e_dual = e1 / (big_r * big_r + e1 * big_r);
    let half = 2.0 / rk;
    let t_min = half - 1.0 / rk;
    let sigma = (2.0 * e_dual * t_min).sqrt();
    let per_side = ((half * ((d - 1) as f64).sqrt() / sigma).ceil() as usize).max(1);
    let grid = cube_facet_grid(d, per_side);
    let projected: Vec<Vec<f64>> = grid
        .par_iter()
        .map(|g| {
            let g: Vec<f64> = g.iter().map(|x| x * half).collect();
            let (z, _) = dykstra_project(&dual, &g, 1e-12, 10_000);
            // pull back into D so the primal halfspace keeps conv(K) inside
            let worst = k.iter().map(|p| dot(p, &z)).fold(1.0, f64::max);
            z.iter().map(|x| x / worst).collect()
        })
        .collect();
    let mut seen: HashMap<Vec<i64>, ()> = HashMap::new();
    let mut normals = Vec::new();
    let mut offsets = Vec::new();
    for z in projected {
        let key: Vec<i64> = z.iter().map(|x| (x * 1e9).round() as i64).collect();
        if seen.insert(key, ()).is_some() {
            continue;
        }
        let nz = norm(&z);
        if !(nz > 0.0) {
            continue;
        }
        normals.extend(z.iter().map(|x| x / nz));
        offsets.push(1.0 / nz - e1);
    }
    let hs: Vec<_> = (0..offsets.len())
        .map(|i| crate::geom_core::Halfspace {
            normal: crate::geom_core::Point::from_row_slice(&normals[i * d..(i + 1) * d]),
            offset: offsets[i],
        })
        .collect();
    let p = HPolytope::new(d, &hs)?;
    if !p.contains_origin() {
        return Err(Error::OriginNotInterior("inner hull approximation lost the origin".into()));
    }
    Ok(p)
}

/// Outer approximation `P′ ⊇ P` using a subset of `P`'s halfspaces, with
/// `P′ ⊆ P + εB`. `P` must contain the origin in its interior.
pub fn prune_hrep(p: &HPolytope, eps: f64) -> Result<HPolytope> {
    Ok(p.select(&prune_hrep_indices(p, eps)?))
}

/// Indices of the halfspaces [`prune_hrep`] keeps, ascending.
pub fn prune_hrep_indices(p: &HPolytope, eps: f64) -> Result<Vec<usize>> {
    let d = p.dim();
    let mut r2 = 0.0;
    for k in 0..d {
        let mut ext: f64 = 0.0;
        for s in [1.0, -1.0] {
            let mut c = vec![0.0; d];
            c[k] = s;
            match maximize_over(p, &c)? {
                LpOutcome::Optimal { value, .. } => ext = ext.max(value),
                LpOutcome::Unbounded => return Err(Error::Unbounded(c)),
                LpOutcome::Infeasible => return Err(Error::Empty("polytope".into())),
            }
        }
        r2 += ext * ext;
    }
    let rp = r2.sqrt();
    let pts = polar_halfspaces_to_points(p)?;
    // polar support ≥ 1/R_P, so an additive polar error a scales P by at
    // most 1 + a·R_P, moving points by at most a·R_P²
    Ok(support_net(&pts, eps / (rp * rp)))
}

/// Recursion schedule: `t₀ = 1`, `t′ = (4t+1)/6`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapConfig {
    pub rounds: usize,
    /// Below this `ε` the base construction is used directly.
    pub base_eps_floor: f64,
    /// Groups with at most this many points use the base construction.
    pub base_size: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { rounds: 2, base_eps_floor: 1e-4, base_size: 4096 }
    }
}

impl BootstrapConfig {
    pub fn exponents(&self) -> Vec<f64> {
        let mut t = vec![1.0];
        for _ in 0..self.rounds {
            let last = *t.last().unwrap();
            t.push((4.0 * last + 1.0) / 6.0);
        }
        t
    }
}

/// Points of `s` grouped by the DAG leaf whose ellipsoid shadow holds them.
#[derive(Debug, Clone, Default)]
pub struct ShadowAssignment {
    /// `(leaf id, point indices)` in leaf order.
    pub groups: Vec<(u32, Vec<usize>)>,
    pub discarded: Vec<usize>,
    /// Points whose descent found no leaf meeting their ray; kept in the
    /// nearest leaf's group.
    pub misses: usize,
}

pub fn assign_to_shadows(s: &PointSet, dag: &Dag) -> ShadowAssignment {
    let res: Vec<Option<(u32, bool)>> = (0..s.len())
        .into_par_iter()
        .map(|i| {
            let p = s.point(i);
            let r = norm(p);
            if r == 0.0 {
                return None;
            }
            let u: Vec<f64> = p.iter().map(|x| x / r).collect();
            let desc = dag.descend_lenient(&u);
            if desc.missed {
                return Some((desc.leaf, true));
            }
            in_shadow(&dag.nodes[desc.leaf as usize].ellipsoid, p).then_some((desc.leaf, false))
        })
        .collect();
    let mut by_leaf: HashMap<u32, Vec<usize>> = HashMap::new();
    let mut out = ShadowAssignment::default();
    for (i, r) in res.into_iter().enumerate() {
        match r {
            None => out.discarded.push(i),
            Some((leaf, missed)) => {
                out.misses += missed as usize;
                by_leaf.entry(leaf).or_default().push(i);
            }
        }
    }
    let mut groups: Vec<(u32, Vec<usize>)> = by_leaf.into_iter().collect();
    groups.sort_by_key(|g| g.0);
    out.groups = groups;
    out
}

/// `(1−ε)`-width kernel of `s`.
///
/// The recursive construction runs at `ε/8` and its union is compacted by
/// [`cover_net`] with the remaining `7ε/8`. Each level canonicalizes, builds an inner
/// halfspace approximation and a DAG over it, keeps the points lying in a
/// leaf shadow (every extreme point does, since leaf ellipsoids lie inside
/// the hull), and recurses on each shadow group with a relative parameter
/// that turns into the same absolute support budget.
pub fn build_kernel(s: &PointSet, eps: f64, cfg: &BootstrapConfig) -> Result<KernelResult> {
    check_dim(s.dim())?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("eps {eps} must lie in (0, 1)")));
    }
    if s.len() <= s.dim() {
        return Err(Error::Degenerate(format!("{} points cannot span {} dimensions", s.len(), s.dim())));
    }
    let mut stats = KernelStats { input: s.len(), ..Default::default() };
    let idx: Vec<usize> = (0..s.len()).collect();
    let union = kernel_rec(s, &idx, eps / 8.0, cfg.rounds, 0, cfg, &mut stats, true)?;
    stats.union = union.len();
    // compaction in the canonical frame: width loss 2η ≤ (7ε/8)·width_v
    log::debug!("recursive union {}", union.len());
    let cb = canonicalize_points(s)?;
    let sc = cb.points().expect("point body");
    let (w, _) = width_lower_bound(sc);
    let keep = cover_net(&sc.subset(&union)?, 7.0 * eps * w / 16.0);
    let subset: Vec<usize> = keep.into_iter().map(|i| union[i]).collect();
    stats.output = subset.len();
    Ok(KernelResult { subset, eps, stats })
}

#[allow(clippy::too_many_arguments)]
fn kernel_rec(
    all: &PointSet,
    idx: &[usize],
    eps: f64,
    rounds: usize,
    depth: usize,
    cfg: &BootstrapConfig,
    stats: &mut KernelStats,
    top: bool,
) -> Result<Vec<usize>> {
    let d = all.dim();
    let s = all.subset(idx)?;
    let cb = match canonicalize_points(&s) {
        Ok(c) => c,
        Err(Error::Degenerate(_)) if !top => return Ok(idx.to_vec()),
        Err(e) => return Err(e),
    };
    let sc = cb.points().expect("point body");
    let (w, _) = width_lower_bound(sc);
    if !(w > 0.0) {
        if top {
            return Err(Error::Degenerate("point set has no certified width".into()));
        }
        return Ok(idx.to_vec());
    }
    let eta = eps * w / 2.0;
    let exps = cfg.exponents();
    let t = exps[depth.min(exps.len() - 1)];
    stats.rounds_used = stats.rounds_used.max(depth);
    if rounds == 0 || s.len() <= cfg.base_size || eps <= cfg.base_eps_floor {
        return Ok(support_net(sc, eta).into_iter().map(|i| idx[i]).collect());
    }
    let gamma = 2.0 * inner_radius_lower_bound(sc);
    if !(gamma > 0.0) {
        return Ok(support_net(sc, eta).into_iter().map(|i| idx[i]).collect());
    }
    let delta = eps.powf(t / 3.0).min(gamma / 8.0);
    let clock = std::time::Instant::now();
    let p = hull_to_hrep(sc, delta)?;
    log::debug!("depth {depth}: hull {} facets in {:?}", p.len(), clock.elapsed());
    let gp = (2.0 * p.offsets().iter().cloned().fold(f64::INFINITY, f64::min)).min(1.0);
    let consts = Constants::new(d, gp, 1.0 / (4.0 * 8.0 / (3.0 * gp)));
    let tuning = Tuning::practical(&consts);
    let dag_delta = delta.min(tuning.top_depth);
    if stats.deltas.len() <= depth {
        stats.deltas.push(dag_delta);
        stats.exponents.push(t);
    }
    let dag = build_dag(&p, dag_delta, &consts, &tuning)?;
    log::debug!("depth {depth}: dag {} nodes at {:?}", dag.total_nodes(), clock.elapsed());
    let asg = assign_to_shadows(sc, &dag);
    log::debug!("depth {depth}: {} groups at {:?}", asg.groups.len(), clock.elapsed());
    if top {
        stats.hull_facets = p.len();
        stats.leaves = dag.leaves().len();
        stats.discarded = asg.discarded.len();
        stats.kept = s.len() - asg.discarded.len();
        stats.shadow_sizes = asg.groups.iter().map(|g| g.1.len()).collect();
        stats.misses = asg.misses;
    }
    let results: Vec<Result<(Vec<usize>, KernelStats)>> = asg
        .groups
        .par_iter()
        .map(|(_, group)| {
            let mut sub = KernelStats::default();
            let gpts = sc.subset(group)?;
            let cen: Vec<f64> = (0..d).map(|k| gpts.iter().map(|p| p[k]).sum::<f64>() / gpts.len() as f64).collect();
            let diam = 2.0 * gpts.iter().map(|p| dist2(p, &cen)).fold(0.0, f64::max).sqrt();
            let local: Vec<usize> = if diam == 0.0 || eta >= diam {
                vec![0]
            } else if gpts.len() <= d + 1 {
                (0..gpts.len()).collect()
            } else {
                let all_local: Vec<usize> = (0..gpts.len()).collect();
                kernel_rec(&gpts, &all_local, eta / diam, rounds - 1, depth + 1, cfg, &mut sub, false)?
            };
            Ok((local.into_iter().map(|i| idx[group[i]]).collect(), sub))
        })
        .collect();
    let mut out = Vec::new();
    for r in results {
        let (v, sub) = r?;
        out.extend(v);
        stats.rounds_used = stats.rounds_used.max(sub.rounds_used);
        for (k, dl) in sub.deltas.iter().enumerate() {
            if stats.deltas.len() <= k {
                stats.deltas.push(*dl);
                stats.exponents.push(sub.exponents[k]);
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}
