//! Binary index files: magic `APMX`, a little-endian `u16` version, then a
//! stream of little-endian `f64` values. Layout in `docs/index-format.md`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::{ApmIndex, ApmStats, BoxRegion, Mode, SubIndex};
use crate::error::{Error, Result};
use crate::geom_core::{check_dim, AffineMap, Ellipsoid, HPolytope, Halfspace, Point};
use crate::hierarchy::{Dag, DagNode, DagStats, LeafPayload};

pub const MAGIC: &[u8; 4] = b"APMX";
pub const FORMAT_VERSION: u16 = 1;

pub fn save(idx: &ApmIndex, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_index(idx, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ApmIndex> {
    read_index(BufReader::new(File::open(path)?))
}

pub fn write_index<W: Write>(idx: &ApmIndex, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let mut out = Vec::new();
    encode(idx, &mut out);
    for x in out {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_index<R: Read>(mut r: R) -> Result<ApmIndex> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head).map_err(|_| Error::Format("truncated header".into()))?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format("payload is not a whole number of f64 values".into()));
    }
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let mut cur = Cursor { vals: &vals, pos: 0 };
    let idx = decode(&mut cur, None)?;
    if cur.pos != vals.len() {
        return Err(Error::Format(format!("{} trailing values", vals.len() - cur.pos)));
    }
    Ok(idx)
}

fn push_matrix(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
}

fn push_polytope(out: &mut Vec<f64>, p: &HPolytope) {
    out.push(p.len() as f64);
    for i in 0..p.len() {
        out.extend_from_slice(p.normal(i));
        out.push(p.offset(i));
    }
}

fn encode(idx: &ApmIndex, out: &mut Vec<f64>) {
    let d = idx.dim();
    out.push(d as f64);
    out.push(match idx.mode {
        Mode::Absolute => 0.0,
        Mode::Bootstrapped => 1.0,
    });
    out.extend([idx.eps, idx.delta, idx.beta, idx.rounds as f64, idx.stats.input_facets as f64]);
    out.push(idx.stats.rebuilds as f64);
    out.push(idx.stats.max_leaf_slack);
    push_matrix(out, idx.map.linear());
    out.extend(idx.map.shift().iter());
    push_polytope(out, &idx.pruned);
    out.extend(idx.source.iter().map(|&i| i as f64));
    let dag = &idx.dag;
    out.push(dag.levels.len() as f64);
    out.extend(&dag.depths);
    out.push(dag.delta_target);
    out.push(dag.inner_scale);
    out.push(dag.nodes.len() as f64);
    for n in &dag.nodes {
        out.push(n.level as f64);
        out.extend(&n.center);
        out.extend(n.ellipsoid.center().iter());
        push_matrix(out, n.ellipsoid.shape());
        push_matrix(out, n.ellipsoid.axes());
        out.extend(n.ellipsoid.semi_axes());
        out.push(n.children.len() as f64);
        out.extend(n.children.iter().map(|&c| c as f64));
        match &n.payload {
            None => out.push(0.0),
            Some(LeafPayload::Halfspace { index, halfspace }) => {
                out.push(1.0);
                out.push(*index as f64);
                out.extend(halfspace.normal.iter());
                out.push(halfspace.offset);
            }
            Some(LeafPayload::Sub(k)) => {
                out.push(2.0);
                out.push(*k as f64);
            }
        }
    }
    for level in &dag.levels {
        out.push(level.len() as f64);
        out.extend(level.iter().map(|&c| c as f64));
    }
    out.push(idx.exact_leaves.len() as f64);
    out.extend(idx.exact_leaves.iter().map(|&c| c as f64));
    out.push(idx.subs.len() as f64);
    for s in &idx.subs {
        match s {
            SubIndex::Exact(p) => {
                out.push(0.0);
                push_polytope(out, p);
            }
            SubIndex::Nested { region, index } => {
                out.push(1.0);
                out.extend(&region.axes);
                out.extend(&region.lo);
                out.extend(&region.hi);
                encode(index, out);
            }
        }
    }
}

struct Cursor<'a> {
    vals: &'a [f64],
    pos: usize,
}

impl Cursor<'_> {
    fn f(&mut self) -> Result<f64> {
        let v = *self.vals.get(self.pos).ok_or_else(|| Error::Format("truncated payload".into()))?;
        self.pos += 1;
        Ok(v)
    }

    fn finite(&mut self) -> Result<f64> {
        let v = self.f()?;
        if !v.is_finite() {
            return Err(Error::Format(format!("non-finite value at {}", self.pos - 1)));
        }
        Ok(v)
    }

    fn vec(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.finite()).collect()
    }

    /// Nonnegative integer count, bounded by what is left in the stream.
    fn count(&mut self, limit: usize) -> Result<usize> {
        let v = self.f()?;
        if !(v >= 0.0 && v.fract() == 0.0 && v <= limit as f64) {
            return Err(Error::Format(format!("bad count {v} at {}", self.pos - 1)));
        }
        Ok(v as usize)
    }

    fn remaining(&self) -> usize {
        self.vals.len() - self.pos
    }

    fn matrix(&mut self, d: usize) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_row_slice(d, d, &self.vec(d * d)?))
    }

    fn polytope(&mut self, d: usize) -> Result<HPolytope> {
        let m = self.count(self.remaining())?;
        let mut normals = Vec::with_capacity(m * d);
        let mut offsets = Vec::with_capacity(m);
        for _ in 0..m {
            normals.extend(self.vec(d)?);
            offsets.push(self.finite()?);
        }
        if m == 0 {
            return Err(Error::Format("polytope without halfspaces".into()));
        }
        Ok(HPolytope::from_unit_parts(d, normals, offsets))
    }
}

fn decode(cur: &mut Cursor, expect_dim: Option<usize>) -> Result<ApmIndex> {
    let d = cur.count(64)?;
    check_dim(d).map_err(|_| Error::Format(format!("dimension {d} outside 2..=8")))?;
    if let Some(e) = expect_dim {
        if e != d {
            return Err(Error::Format(format!("nested index dimension {d}, expected {e}")));
        }
    }
    let mode = match cur.count(1)? {
        0 => Mode::Absolute,
        _ => Mode::Bootstrapped,
    };
    let eps = cur.finite()?;
    let delta = cur.finite()?;
    let beta = cur.finite()?;
    let rounds = cur.count(64)?;
    let input_facets = cur.count(usize::MAX >> 12)?;
    let rebuilds = cur.count(1024)?;
    let max_leaf_slack = cur.finite()?;
    let linear = cur.matrix(d)?;
    let shift = Point::from_vec(cur.vec(d)?);
    let map = AffineMap::new(linear, shift).map_err(|e| Error::Format(format!("map: {e}")))?;
    let pruned = cur.polytope(d)?;
    let source: Vec<usize> = (0..pruned.len()).map(|_| cur.count(input_facets)).collect::<Result<_>>()?;
    let nlevels = cur.count(cur.remaining())?;
    let depths = cur.vec(nlevels)?;
    let delta_target = cur.finite()?;
    let inner_scale = cur.finite()?;
    let nnodes = cur.count(cur.remaining())?;
    let mut nodes = Vec::with_capacity(nnodes);
    for _ in 0..nnodes {
        let level = cur.count(nlevels.saturating_sub(1))?;
        let center = cur.vec(d)?;
        let ec = Point::from_vec(cur.vec(d)?);
        let shape = cur.matrix(d)?;
        let axes = cur.matrix(d)?;
        let semi = cur.vec(d)?;
        let ellipsoid =
            Ellipsoid::from_parts(ec, shape, axes, semi).map_err(|e| Error::Format(format!("ellipsoid: {e}")))?;
        let nc = cur.count(nnodes)?;
        let children = (0..nc).map(|_| cur.count(nnodes - 1).map(|c| c as u32)).collect::<Result<_>>()?;
        let payload = match cur.count(2)? {
            0 => None,
            1 => {
                let index = cur.count(usize::MAX >> 12)?;
                let normal = Point::from_vec(cur.vec(d)?);
                let offset = cur.finite()?;
                Some(LeafPayload::Halfspace { index, halfspace: Halfspace { normal, offset } })
            }
            _ => Some(LeafPayload::Sub(cur.count(nnodes)?)),
        };
        nodes.push(DagNode { level, center, ellipsoid, children, payload });
    }
    let mut levels = Vec::with_capacity(nlevels);
    for _ in 0..nlevels {
        let n = cur.count(nnodes)?;
        let ids: Vec<u32> = (0..n).map(|_| cur.count(nnodes - 1).map(|c| c as u32)).collect::<Result<_>>()?;
        levels.push(ids);
    }
    if levels.first().map_or(true, |l| l.is_empty()) {
        return Err(Error::Format("DAG without a top level".into()));
    }
    let ne = cur.count(nnodes)?;
    let exact_leaves: Vec<u32> = (0..ne).map(|_| cur.count(nnodes - 1).map(|c| c as u32)).collect::<Result<_>>()?;
    let ns = cur.count(nnodes)?;
    let mut subs = Vec::with_capacity(ns);
    for _ in 0..ns {
        match cur.count(1)? {
            0 => subs.push(SubIndex::Exact(cur.polytope(d)?)),
            _ => {
                let axes = cur.vec(d * d)?;
                let lo = cur.vec(d)?;
                let hi = cur.vec(d)?;
                let index = decode(cur, Some(d))?;
                subs.push(SubIndex::Nested { region: BoxRegion { axes, lo, hi }, index: Box::new(index) });
            }
        }
    }
    for n in &nodes {
        if let Some(LeafPayload::Sub(k)) = n.payload {
            if k >= subs.len() {
                return Err(Error::Format(format!("leaf refers to missing nested index {k}")));
            }
        }
    }
    let mut dstats = DagStats {
        level_counts: levels.iter().map(Vec::len).collect(),
        ..Default::default()
    };
    for n in &nodes {
        dstats.links += n.children.len();
        dstats.max_out_degree = dstats.max_out_degree.max(n.children.len());
    }
    let dag = Dag { dim: d, nodes, levels, depths, delta_target, inner_scale, stats: dstats };
    let mut stats = ApmStats {
        input_facets,
        pruned_facets: pruned.len(),
        level_counts: dag.stats.level_counts.clone(),
        nodes: dag.total_nodes(),
        leaves: dag.leaves().len(),
        exact_leaves: exact_leaves.len(),
        rebuilds,
        max_leaf_slack,
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
    Ok(ApmIndex { map, pruned, source, mode, dag, exact_leaves, subs, eps, delta, beta, rounds, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apm::build_apm;
    use crate::geom_core::random_unit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_verdicts() {
        let p = HPolytope::cube(3, 0.4);
        for rounds in [0, 1] {
            let idx = build_apm(&p, 0.1, rounds).unwrap();
            let mut buf = Vec::new();
            write_index(&idx, &mut buf).unwrap();
            assert_eq!(&buf[..4], b"APMX");
            let back = read_index(buf.as_slice()).unwrap();
            let mut again = Vec::new();
            write_index(&back, &mut again).unwrap();
            assert_eq!(buf, again);
            let mut rng = ChaCha8Rng::seed_from_u64(rounds as u64);
            for _ in 0..500 {
                let u = random_unit(&mut rng, 3);
                let q: Vec<f64> = u.iter().map(|x| x * rng.gen_range(0.0..0.8)).collect();
                assert_eq!(idx.query(&q).unwrap(), back.query(&q).unwrap());
            }
        }
    }

    #[test]
    fn rejects_corruption() {
        let idx = build_apm(&HPolytope::cube(2, 0.3), 0.2, 0).unwrap();
        let mut buf = Vec::new();
        write_index(&idx, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_index(bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_index(bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[6..14].copy_from_slice(&9.0f64.to_le_bytes());
        assert!(matches!(read_index(bad.as_slice()), Err(Error::Format(_))));
        assert!(read_index(&buf[..buf.len() - 8]).is_err());
    }
}
