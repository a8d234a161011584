//! Approximate polytope membership.
//!
//! Every index answers "inside" for points of `P` and "outside" for points
//! farther than `ε` from `P` in the canonical frame of `P`. In between either
//! answer is allowed.
//!
//! The absolute index descends the DAG along the query ray and tests the
//! supporting halfspace stored at the leaf. The bootstrapped index replaces
//! each leaf halfspace by a nested index over the part of `P` that rays
//! through the leaf ellipsoid can reach.

mod persist;

pub use persist::{load, read_index, save, write_index, FORMAT_VERSION, MAGIC};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom_core::lp::{maximize, LpOutcome};
use crate::geom_core::{canonicalize_hpoly, dot, norm, ray_shoot, AffineMap, Ellipsoid, HPolytope, Halfspace};
use crate::hierarchy::{build_dag, build_level, link_levels, Constants, Dag, LeafPayload, Tuning};
use crate::kernel::prune_hrep_indices;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Absolute,
    Bootstrapped,
}

/// What a bootstrapped leaf defers to.
#[derive(Debug, Clone)]
pub enum SubIndex {
    /// Nested index over `P ∩ R`, in coordinates of the parent's canonical frame.
    Nested { region: BoxRegion, index: Box<ApmIndex> },
    /// `P ∩ R` tested exactly; used when `P ∩ R` is too thin to canonicalize.
    Exact(HPolytope),
}

/// `{x : lo_k ≤ axis_k·x ≤ hi_k}` for orthonormal `axis_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    /// Row-major, one unit axis per row.
    pub axes: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn halfspaces(&self) -> Vec<Halfspace> {
        let d = self.lo.len();
        let mut out = Vec::with_capacity(2 * d);
        for k in 0..d {
            let a = &self.axes[k * d..(k + 1) * d];
            out.push(Halfspace { normal: crate::geom_core::Point::from_row_slice(a), offset: self.hi[k] });
            let neg: Vec<f64> = a.iter().map(|x| -x).collect();
            out.push(Halfspace { normal: crate::geom_core::Point::from_vec(neg), offset: -self.lo[k] });
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ApmStats {
    pub input_facets: usize,
    pub pruned_facets: usize,
    pub level_counts: Vec<usize>,
    pub nodes: usize,
    pub leaves: usize,
    /// Absolute leaves answered by an exact ray test because their slack
    /// bound never fell under the budget.
    pub exact_leaves: usize,
    /// DAG rebuilds while deepening the leaf level.
    pub rebuilds: usize,
    pub max_leaf_slack: f64,
    pub sub_indices: usize,
    pub exact_subs: usize,
    /// Total DAG nodes over this index and all nested ones.
    pub total_nodes: usize,
}

#[derive(Debug, Clone)]
pub struct ApmIndex {
    /// Input coordinates → canonical coordinates.
    pub map: AffineMap,
    /// Canonical, pruned polytope the DAG is built on.
    pub pruned: HPolytope,
    /// For each halfspace of `pruned`, its index in the polytope the index
    /// was built from.
    pub source: Vec<usize>,
    pub mode: Mode,
    pub dag: Dag,
    /// Leaves (node ids, sorted) answered by an exact ray test.
    pub exact_leaves: Vec<u32>,
    pub subs: Vec<SubIndex>,
    pub eps: f64,
    /// Depth of the leaf level.
    pub delta: f64,
    pub beta: f64,
    pub rounds: usize,
    pub stats: ApmStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QueryVerdict {
    pub inside: bool,
    /// Nodes visited over all nesting levels.
    pub path_length: usize,
}

/// Build options shared by all entry points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApmConfig {
    /// Leaves whose slack bound is still over budget at this fraction of
    /// the nominal leaf depth fall back to exact tests.
    pub depth_floor_factor: f64,
    pub seed: u64,
}

impl Default for ApmConfig {
    fn default() -> Self {
        Self { depth_floor_factor: 1.0, seed: 0 }
    }
}

/// Share of `ε` spent on pruning the canonical polytope.
const PRUNE_SHARE: f64 = 0.25;

fn constants_for(p: &HPolytope) -> Constants {
    let d = p.dim();
    let gamma = (2.0 * p.offsets().iter().cloned().fold(f64::INFINITY, f64::min)).min(1.0);
    let c2 = 160.0 / (3.0 * gamma * gamma);
    Constants::new(d, gamma, gamma / (2.0 * c2 * d as f64))
}

/// Largest `|y − t·u|`-type slack of rays through `e` beyond their entry
/// point, when cut off by the halfspace `a·x ≤ b`.
///
/// For `y ∈ e` with `a·y > 0` the ray through `y` leaves the halfspace at
/// `|y|·b/(a·y)`; the excess `|y|(b − a·y)/(a·y)` is bounded using
/// `a·y ≥ a·c − s` and `|y| ≤ |c| + ρ_max`.
fn leaf_slack(e: &Ellipsoid, a: &[f64], b: f64) -> f64 {
    let c = e.center().as_slice();
    let s = e.inv_quad(a).sqrt();
    let lo = dot(a, c) - s;
    if lo <= 0.0 {
        return f64::INFINITY;
    }
    (b - lo).max(0.0) * (norm(c) + e.max_semi_axis()) / lo
}

/// Slack of the halfspace hit by the ray through the center of `e`.
fn center_ray_slack(p: &HPolytope, e: &Ellipsoid) -> Result<f64> {
    let c = e.center().as_slice();
    let u: Vec<f64> = c.iter().map(|x| x / norm(c)).collect();
    let (_, i) = ray_shoot(p, &u)?;
    Ok(leaf_slack(e, p.normal(i), p.offset(i)))
}

/// Absolute index over a polytope `P`: canonicalize, then deepen the DAG
/// until every leaf halfspace is within `ε` of `P` along rays through its
/// ellipsoid.
pub fn build_absolute_apm(p: &HPolytope, eps: f64) -> Result<ApmIndex> {
    check_eps(eps)?;
    let cb = canonicalize_hpoly(p)?;
    let body = cb.polytope().expect("polytope body").clone();
    let mut idx = absolute_on(body, eps, eps, &ApmConfig::default())?;
    idx.map = cb.map;
    idx.stats.input_facets = p.len();
    Ok(idx)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("eps {eps} must lie in (0, 1)")))
    }
}

/// Absolute index over a canonical polytope, identity map.
fn absolute_on(p: HPolytope, eps: f64, budget: f64, cfg: &ApmConfig) -> Result<ApmIndex> {
    let consts = constants_for(&p);
    let mut tuning = Tuning::practical(&consts);
    tuning.seed = cfg.seed;
    let floor = (cfg.depth_floor_factor * eps * consts.gamma / (2.0 * consts.c1)).min(tuning.top_depth);
    let mut depth = tuning.top_depth;
    let mut builds = Vec::new();
    let mut rebuilds = 0;
    loop {
        let level = build_level(&p, depth, &consts, &tuning)?;
        let worst = level
            .ellipsoids
            .iter()
            .map(|e| center_ray_slack(&p, e))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        log::debug!("absolute level depth {depth:.3e}: {} ellipsoids, worst slack {worst:.3e}", level.ellipsoids.len());
        builds.push(level);
        if worst <= budget || depth <= floor {
            break;
        }
        depth /= 2.0;
        rebuilds += 1;
    }
    let mut dag = link_levels(p.dim(), builds, depth, &tuning)?;
    log::debug!("levels linked: {} links, {} confirmed, max degree {}", dag.stats.links, dag.stats.confirmed_links, dag.stats.max_out_degree);
    dag.attach_leaf_halfspaces(&p)?;
    log::debug!("leaf halfspaces attached");
    let slacks: Vec<(u32, f64)> = dag
        .leaves()
        .iter()
        .map(|&id| {
            let n = &dag.nodes[id as usize];
            match &n.payload {
                Some(LeafPayload::Halfspace { halfspace, .. }) => {
                    (id, leaf_slack(&n.ellipsoid, halfspace.normal.as_slice(), halfspace.offset))
                }
                _ => (id, f64::INFINITY),
            }
        })
        .collect();
    let exact_leaves: Vec<u32> = slacks.iter().filter(|s| s.1 > budget).map(|s| s.0).collect();
    let max_leaf_slack = slacks.iter().map(|s| s.1).filter(|s| s.is_finite()).fold(0.0, f64::max);
    dag.stats.candidates.clear();
    let stats = ApmStats {
        input_facets: p.len(),
        pruned_facets: p.len(),
        level_counts: dag.stats.level_counts.clone(),
        nodes: dag.total_nodes(),
        leaves: dag.leaves().len(),
        exact_leaves: exact_leaves.len(),
        rebuilds,
        max_leaf_slack,
        total_nodes: dag.total_nodes(),
        ..Default::default()
    };
    Ok(ApmIndex {
        map: AffineMap::identity(p.dim()),
        source: (0..p.len()).collect(),
        pruned: p,
        mode: Mode::Absolute,
        delta: dag.delta_target,
        dag,
        exact_leaves,
        subs: Vec::new(),
        eps,
        beta: 0.0,
        rounds: 0,
        stats,
    })
}

/// Index over the intersection of halfspaces `h`.
///
/// `rounds = 0` prunes the canonical polytope at `ε/4` and builds an absolute
/// index with the rest of the budget. `rounds ≥ 1` builds a DAG at
/// depth `ε^{β/(1+β)}` and, for each leaf, a nested index with one round
/// fewer over the part of `P` reachable through the leaf ellipsoid.
pub fn build_apm(h: &HPolytope, eps: f64, rounds: usize) -> Result<ApmIndex> {
    build_apm_with(h, eps, rounds, &ApmConfig::default())
}

pub fn build_apm_with(h: &HPolytope, eps: f64, rounds: usize, cfg: &ApmConfig) -> Result<ApmIndex> {
    check_eps(eps)?;
    let cb = canonicalize_hpoly(h)?;
    let body = cb.polytope().expect("polytope body");
    let mut idx = build_canonical(body, eps, rounds, 1.0, cfg)?;
    idx.map = cb.map;
    idx.stats.input_facets = h.len();
    Ok(idx)
}

fn build_canonical(p: &HPolytope, eps: f64, rounds: usize, beta: f64, cfg: &ApmConfig) -> Result<ApmIndex> {
    let source = prune_hrep_indices(p, PRUNE_SHARE * eps)?;
    let pruned = p.select(&source);
    let rest = (1.0 - PRUNE_SHARE) * eps;
    if rounds == 0 {
        let mut idx = absolute_on(pruned, eps, rest, cfg)?;
        idx.stats.input_facets = p.len();
        idx.source = source;
        return Ok(idx);
    }
    let consts = constants_for(&pruned);
    let mut tuning = Tuning::practical(&consts);
    tuning.seed = cfg.seed;
    let delta = eps.powf(beta / (1.0 + beta)).min(tuning.top_depth);
    let mut dag = build_dag(&pruned, delta, &consts, &tuning)?;
    dag.stats.candidates.clear();
    let leaves = dag.leaves().to_vec();
    let next_beta = beta / (1.0 + beta);
    let subs: Vec<SubIndex> = leaves
        .par_iter()
        .map(|&id| leaf_sub_index(&pruned, &dag.nodes[id as usize].ellipsoid, rest, rounds - 1, next_beta, cfg))
        .collect::<Result<_>>()?;
    for (k, &id) in leaves.iter().enumerate() {
        dag.nodes[id as usize].payload = Some(LeafPayload::Sub(k));
    }
    let mut stats = ApmStats {
        input_facets: p.len(),
        pruned_facets: pruned.len(),
        level_counts: dag.stats.level_counts.clone(),
        nodes: dag.total_nodes(),
        leaves: leaves.len(),
        sub_indices: subs.len(),
        total_nodes: dag.total_nodes(),
        ..Default::default()
    };
    for s in &subs {
        match s {
            SubIndex::Nested { index, .. } => stats.total_nodes += index.stats.total_nodes,
            SubIndex::Exact(_) => stats.exact_subs += 1,
        }
    }
    Ok(ApmIndex {
        map: AffineMap::identity(p.dim()),
        pruned,
        source,
        mode: Mode::Bootstrapped,
        delta: dag.delta_target,
        dag,
        exact_leaves: Vec::new(),
        subs,
        eps,
        beta,
        rounds,
        stats,
    })
}

/// Box around every point of `p` on a ray through `e` at or beyond the
/// ray's entry into `e`.
///
/// The reachable set lies in the cone over `e` and beyond the plane
/// `w·x = min_e w·x`, `w` the center direction. The cone is relaxed to
/// `2(d−1)` planes `v·x ≤ r_v·w·x` with `r_v ≥ max_e (v·y)/(w·y)`; the box
/// extents along the principal axes of `e` come from LPs over that region.
pub fn reachable_box(p: &HPolytope, e: &Ellipsoid) -> Result<BoxRegion> {
    let d = p.dim();
    let c = e.center().as_slice();
    let cn = norm(c);
    let mut extra: Vec<(Vec<f64>, f64)> = Vec::new();
    if cn > 0.0 {
        let w: Vec<f64> = c.iter().map(|x| x / cn).collect();
        let lo_w = dot(&w, c) - e.inv_quad(&w).sqrt();
        if lo_w > 0.0 {
            extra.push((w.iter().map(|x| -x).collect(), -lo_w));
            let hi_w = dot(&w, c) + e.inv_quad(&w).sqrt();
            for v in orthonormal_complement(&w) {
                for sgn in [1.0, -1.0] {
                    let v: Vec<f64> = v.iter().map(|x| x * sgn).collect();
                    let top = dot(&v, c) + e.inv_quad(&v).sqrt();
                    let r = if top >= 0.0 { top / lo_w } else { top / hi_w };
                    extra.push(((0..d).map(|k| v[k] - r * w[k]).collect(), 0.0));
                }
            }
        }
    }
    let mut rows: Vec<(&[f64], f64)> = p.rows();
    rows.extend(extra.iter().map(|(a, b)| (a.as_slice(), *b)));
    let axes = e.axes();
    let mut ax = Vec::with_capacity(d * d);
    let mut lo = Vec::with_capacity(d);
    let mut hi = Vec::with_capacity(d);
    for k in 0..d {
        let a: Vec<f64> = (0..d).map(|i| axes[(i, k)]).collect();
        let na = norm(&a);
        let a: Vec<f64> = a.iter().map(|x| x / na).collect();
        let mut ext = [0.0; 2];
        for (j, sgn) in [1.0, -1.0].into_iter().enumerate() {
            let obj: Vec<f64> = a.iter().map(|x| x * sgn).collect();
            ext[j] = match maximize(&obj, &rows)? {
                LpOutcome::Optimal { value, .. } => value,
                LpOutcome::Unbounded => return Err(Error::Unbounded(obj)),
                LpOutcome::Infeasible => return Err(Error::Lp("reachable region infeasible".into())),
            };
        }
        let pad = 1e-9;
        hi.push(ext[0] + pad);
        lo.push(-ext[1] - pad);
        ax.extend(a);
    }
    Ok(BoxRegion { axes: ax, lo, hi })
}

/// Orthonormal basis of `w⊥` by Gram–Schmidt on the coordinate axes.
fn orthonormal_complement(w: &[f64]) -> Vec<Vec<f64>> {
    let d = w.len();
    let mut basis: Vec<Vec<f64>> = vec![w.to_vec()];
    for k in 0..d {
        let mut v = vec![0.0; d];
        v[k] = 1.0;
        for b in &basis {
            let t = dot(&v, b);
            for i in 0..d {
                v[i] -= t * b[i];
            }
        }
        let n = norm(&v);
        if n > 1e-6 {
            basis.push(v.iter().map(|x| x / n).collect());
        }
        if basis.len() == d {
            break;
        }
    }
    basis.remove(0);
    basis
}

/// `budget` is the distance allowance left for the nested index, in the
/// parent's canonical frame.
fn leaf_sub_index(p: &HPolytope, e: &Ellipsoid, budget: f64, rounds: usize, beta: f64, cfg: &ApmConfig) -> Result<SubIndex> {
    let region = reachable_box(p, e)?;
    let sub = p.with_extra(&region.halfspaces());
    let cb = match canonicalize_hpoly(&sub) {
        Ok(cb) => cb,
        Err(Error::Degenerate(_)) | Err(Error::Lp(_)) => return Ok(SubIndex::Exact(sub)),
        Err(e) => return Err(e),
    };
    // distances in the sub frame stretch by at most ‖T⁻¹‖ in the parent frame
    let stretch = cb.map.inverse_norm() * (1.0 + 1e-9);
    let sub_eps = (budget / stretch).min(0.5);
    let body = cb.polytope().expect("polytope body");
    let clock = std::time::Instant::now();
    let mut index = build_canonical(body, sub_eps, rounds, beta, cfg)?;
    log::debug!(
        "leaf sub-index: {} facets, stretch {stretch:.3}, gamma {:.3}, eps {sub_eps:.4}, levels {:?}, {:?}",
        sub.len(),
        cb.gamma,
        index.stats.level_counts,
        clock.elapsed()
    );
    index.map = cb.map;
    Ok(SubIndex::Nested { region, index: Box::new(index) })
}

impl ApmIndex {
    pub fn dim(&self) -> usize {
        self.pruned.dim()
    }

    /// Membership query for a point in input coordinates.
    pub fn query(&self, q: &[f64]) -> Result<QueryVerdict> {
        if q.len() != self.dim() {
            return Err(Error::DimMismatch { expected: self.dim(), got: q.len() });
        }
        if q.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("query point"));
        }
        Ok(self.query_canonical(&self.map.apply(q)))
    }

    /// Query that also reports the source halfspace stored at the leaf the
    /// descent reached, when that leaf carries one.
    pub fn query_with_facet(&self, q: &[f64]) -> Result<(QueryVerdict, Option<usize>)> {
        let v = self.query(q)?;
        let c = self.map.apply(q);
        let r = norm(&c);
        if r == 0.0 {
            return Ok((v, None));
        }
        let u: Vec<f64> = c.iter().map(|x| x / r).collect();
        let leaf = self.dag.descend_lenient(&u).leaf;
        let facet = match &self.dag.nodes[leaf as usize].payload {
            Some(LeafPayload::Halfspace { index, .. }) => Some(self.source[*index]),
            _ => None,
        };
        Ok((v, facet))
    }

    /// Query for a point already in this index's canonical frame.
    pub fn query_canonical(&self, q: &[f64]) -> QueryVerdict {
        let r = norm(q);
        if r == 0.0 {
            return QueryVerdict { inside: true, path_length: 2 };
        }
        let u: Vec<f64> = q.iter().map(|x| x / r).collect();
        let desc = self.dag.descend_lenient(&u);
        let leaf = &self.dag.nodes[desc.leaf as usize];
        let entry = if desc.missed { None } else { leaf.ellipsoid.ray_interval(&u) };
        let exact_leaf = self.exact_leaves.binary_search(&desc.leaf).is_ok();
        let Some((t0, _)) = entry.filter(|_| !exact_leaf) else {
            return QueryVerdict { inside: self.exact_ray(&u, r), path_length: desc.visited };
        };
        if r <= t0 {
            return QueryVerdict { inside: true, path_length: desc.visited };
        }
        match &leaf.payload {
            Some(LeafPayload::Halfspace { halfspace, .. }) => QueryVerdict {
                inside: dot(halfspace.normal.as_slice(), q) <= halfspace.offset,
                path_length: desc.visited,
            },
            Some(LeafPayload::Sub(k)) => match &self.subs[*k] {
                SubIndex::Nested { index, .. } => {
                    let v = index.query_canonical(&index.map.apply(q));
                    QueryVerdict { inside: v.inside, path_length: desc.visited + v.path_length }
                }
                SubIndex::Exact(sub) => {
                    QueryVerdict { inside: sub.max_violation(q) <= 0.0, path_length: desc.visited + 1 }
                }
            },
            None => QueryVerdict { inside: self.exact_ray(&u, r), path_length: desc.visited },
        }
    }

    fn exact_ray(&self, u: &[f64], r: f64) -> bool {
        match ray_shoot(&self.pruned, u) {
            Ok((t, _)) => r <= t,
            Err(_) => true,
        }
    }

    /// This index and all nested ones, depth-first.
    pub fn all_indices(&self) -> Vec<&ApmIndex> {
        let mut out = vec![self];
        for s in &self.subs {
            if let SubIndex::Nested { index, .. } = s {
                out.extend(index.all_indices());
            }
        }
        out
    }

    /// Maximum nesting depth below this index.
    pub fn nesting_depth(&self) -> usize {
        self.subs
            .iter()
            .filter_map(|s| match s {
                SubIndex::Nested { index, .. } => Some(1 + index.nesting_depth()),
                SubIndex::Exact(_) => None,
            })
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom_core::random_unit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_polytope(seed: u64, m: usize) -> HPolytope {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<(Vec<f64>, f64)> =
            (0..m).map(|_| (random_unit(&mut rng, 3), rng.gen_range(0.3..0.5))).collect();
        HPolytope::from_rows(3, &rows).unwrap()
    }

    /// Distance from `q` to `P` by brute force over facets, edges, and
    /// vertices would be heavy; for soundness checks along rays the ray
    /// excess bounds the distance from above.
    fn ray_excess(p: &HPolytope, q: &[f64]) -> f64 {
        let r = norm(q);
        let u: Vec<f64> = q.iter().map(|x| x / r).collect();
        let (t, _) = ray_shoot(p, &u).unwrap();
        r - t
    }

    #[test]
    fn square_examples() {
        let p = HPolytope::cube(2, 0.3);
        for idx in [build_absolute_apm(&p, 0.05).unwrap(), build_apm(&p, 0.05, 0).unwrap()] {
            let o = idx.map.apply(&[0.0, 0.0]);
            assert!(idx.query_canonical(&o).inside);
            let far = idx.query_canonical(&[0.5 + 0.06, 0.0]);
            assert!(!far.inside);
            assert!(far.path_length >= 2);
            assert!(!idx.query(&[10.0, 0.0]).unwrap().inside);
            assert!(idx.query(&[0.0, 0.0]).unwrap().inside);
        }
    }

    #[test]
    fn absolute_soundness_on_random_polytope() {
        let p = random_polytope(11, 200);
        let eps = 0.1;
        let idx = build_apm(&p, eps, 0).unwrap();
        let cb = canonicalize_hpoly(&p).unwrap();
        let pc = cb.polytope().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..3000 {
            let u = random_unit(&mut rng, 3);
            let (t, _) = ray_shoot(pc, &u).unwrap();
            let s = t + rng.gen_range(-0.2..0.2);
            let q: Vec<f64> = u.iter().map(|x| x * s).collect();
            let v = idx.query_canonical(&q);
            if pc.max_violation(&q) <= 0.0 {
                assert!(v.inside);
            }
            // the ray excess is at least the Euclidean distance
            if !v.inside {
                assert!(ray_excess(pc, &q) > 0.0);
            }
        }
        assert!(idx.exact_leaves.len() <= idx.dag.leaves().len());
    }

    #[test]
    fn outside_band_rejected() {
        let p = HPolytope::cube(3, 0.3);
        let eps = 0.05;
        for rounds in [0, 1] {
            let idx = build_apm(&p, eps, rounds).unwrap();
            let cb = canonicalize_hpoly(&p).unwrap();
            let pc = cb.polytope().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(13 + rounds as u64);
            for _ in 0..3000 {
                let u = random_unit(&mut rng, 3);
                let (t, _) = ray_shoot(pc, &u).unwrap();
                let s = t * rng.gen_range(0.7..1.4);
                let q: Vec<f64> = u.iter().map(|x| x * s).collect();
                let v = idx.query_canonical(&q);
                // cube: distance is the norm of the clipped excess
                let dd: f64 = q.iter().map(|x| (x.abs() - 0.5 / 3f64.sqrt()).max(0.0).powi(2)).sum::<f64>().sqrt();
                if pc.max_violation(&q) <= 0.0 {
                    assert!(v.inside, "rounds {rounds}");
                }
                if dd > eps + 1e-9 {
                    assert!(!v.inside, "rounds {rounds} dist {dd}");
                }
            }
        }
    }

    #[test]
    fn bootstrapped_structure() {
        let p = random_polytope(14, 150);
        let idx = build_apm(&p, 0.1, 1).unwrap();
        assert_eq!(idx.mode, Mode::Bootstrapped);
        assert_eq!(idx.subs.len(), idx.dag.leaves().len());
        for &l in idx.dag.leaves() {
            assert!(matches!(idx.dag.nodes[l as usize].payload, Some(LeafPayload::Sub(_))));
        }
        for s in &idx.subs {
            if let SubIndex::Nested { index, .. } = s {
                assert_eq!(index.mode, Mode::Absolute);
                assert_eq!(index.rounds, 0);
            }
        }
        assert!(idx.nesting_depth() <= 1);
    }

    #[test]
    fn reachable_box_contains_ray_segments() {
        let p = random_polytope(15, 120);
        let cb = canonicalize_hpoly(&p).unwrap();
        let pc = cb.polytope().unwrap();
        let consts = constants_for(pc);
        let t = Tuning::practical(&consts);
        let dag = build_dag(pc, t.top_depth, &consts, &t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for &l in dag.leaves().iter().take(10) {
            let e = &dag.nodes[l as usize].ellipsoid;
            let bx = reachable_box(pc, e).unwrap();
            let hs = bx.halfspaces();
            for _ in 0..200 {
                let w = random_unit(&mut rng, 3);
                let y = e.boundary_point(&w.iter().map(|x| x * rng.gen::<f64>()).collect::<Vec<_>>());
                let u: Vec<f64> = y.iter().map(|x| x / norm(&y)).collect();
                let (t0, _) = e.ray_interval(&u).unwrap();
                let (te, _) = ray_shoot(pc, &u).unwrap();
                for k in 0..=10 {
                    let s = t0 + (te - t0) * k as f64 / 10.0;
                    let q: Vec<f64> = u.iter().map(|x| x * s).collect();
                    assert!(hs.iter().all(|h| h.contains(&q, 1e-9)));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_eps() {
        let p = HPolytope::cube(2, 0.3);
        assert!(build_apm(&p, 0.0, 0).is_err());
        assert!(build_apm(&p, 1.0, 1).is_err());
    }
}
