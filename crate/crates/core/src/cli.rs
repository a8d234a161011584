//! Command-line front end.
//!
//! Every command prints one JSON document (`"schema": 1`) on stdout, except
//! `gen`, which prints a point or halfspace file, and `bench`, which prints
//! CSV. Exit codes: 0 success, 1 input error, 2 failed runtime check.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::apm::{self, build_apm};
use crate::error::{Error, Result};
use crate::extent::{bcp, diameter, WidthIndex};
use crate::geom_core::io::{read_halfspaces_file, read_points_file, write_halfspaces, write_points};
use crate::geom_core::{random_unit, HPolytope, PointSet};
use crate::kernel::{build_kernel, BootstrapConfig};
use crate::oracle;

pub const SCHEMA: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "geomk", version, about = "Epsilon-kernels, approximate polytope membership and extent measures")]
struct Cli {
    /// Worker threads for parallel steps; results do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    /// Leave wall-clock timings out of the JSON output.
    #[arg(long, global = true)]
    no_timings: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Width-preserving subset of a point set.
    Kernel(KernelArgs),
    /// Approximate farthest pair.
    Diameter(DiameterArgs),
    /// Approximate directional widths.
    Width(WidthArgs),
    /// Approximate bichromatic closest pair.
    Bcp(BcpArgs),
    /// Approximate membership index for a polytope.
    #[command(subcommand)]
    Apm(ApmCommand),
    /// Kernel size and accuracy sweep over ε.
    Bench(BenchArgs),
    /// Quick end-to-end checks on small fixtures.
    Selftest,
    /// Write a random fixture.
    Gen(GenArgs),
}

fn parse_eps(s: &str) -> std::result::Result<f64, String> {
    let e: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if e > 0.0 && e < 1.0 {
        Ok(e)
    } else {
        Err(format!("ε must lie in (0, 1), got {s}"))
    }
}

#[derive(Debug, Args)]
struct KernelArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_eps)]
    eps: f64,
    #[arg(long, default_value_t = 2)]
    rounds: usize,
    /// Kernel points, one per line.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Build statistics as JSON.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Compare against exact widths over random directions.
    #[arg(long)]
    verify: bool,
    #[arg(long, default_value_t = 1000)]
    verify_dirs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct DiameterArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_eps)]
    eps: f64,
    #[arg(long)]
    verify: bool,
}

#[derive(Debug, Args)]
struct WidthArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_eps)]
    eps: f64,
    /// Query directions, one per line.
    #[arg(long)]
    dirs: PathBuf,
    #[arg(long)]
    verify: bool,
}

#[derive(Debug, Args)]
struct BcpArgs {
    #[arg(long)]
    red: PathBuf,
    #[arg(long)]
    blue: PathBuf,
    #[arg(long, value_parser = parse_eps)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    verify: bool,
}

#[derive(Debug, Subcommand)]
enum ApmCommand {
    /// Build an index and write it to a file.
    Build(ApmBuildArgs),
    /// Answer membership queries from a saved index.
    Query(ApmQueryArgs),
}

#[derive(Debug, Args)]
struct ApmBuildArgs {
    #[arg(long)]
    halfspaces: PathBuf,
    #[arg(long, value_parser = parse_eps)]
    eps: f64,
    #[arg(long, default_value_t = 1)]
    rounds: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ApmQueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    points: PathBuf,
    /// Verdicts as CSV (`inside,path_length` per query).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Scaling,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    #[arg(long)]
    d: usize,
    #[arg(long, value_delimiter = ',', value_parser = parse_eps, default_values_t = [0.4, 0.2, 0.1, 0.05])]
    eps: Vec<f64>,
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, value_enum, default_value_t = Shape::Ball)]
    shape: Shape,
    #[arg(long, default_value_t = 2)]
    rounds: usize,
    #[arg(long, default_value_t = 1000)]
    dirs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the table and fitted slope as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

/// Fixture shapes, all centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// Uniform in the unit ball.
    Ball,
    /// Uniform on the unit sphere.
    Sphere,
    /// The sphere scaled by semi-axes `1, 1/2, 1/4, …`.
    Ellipsoid,
    /// Uniform in `[-1, 1]^d`.
    Cube,
    /// Halfspace file: `n` tangent planes at random directions, offsets in `[0.8, 1.2]`.
    Polytope,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    shape: Shape,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Random point fixture; `shape` must not be [`Shape::Polytope`].
pub fn gen_points(shape: Shape, n: usize, d: usize, seed: u64) -> Result<PointSet> {
    if !(2..=8).contains(&d) {
        return Err(Error::Dimension(d));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = Vec::with_capacity(n * d);
    for _ in 0..n {
        match shape {
            Shape::Ball => {
                let u = random_unit(&mut rng, d);
                let r = rng.gen::<f64>().powf(1.0 / d as f64);
                flat.extend(u.iter().map(|x| x * r));
            }
            Shape::Sphere => flat.extend(random_unit(&mut rng, d)),
            Shape::Ellipsoid => {
                let u = random_unit(&mut rng, d);
                flat.extend(u.iter().enumerate().map(|(k, x)| x / (1u32 << k) as f64));
            }
            Shape::Cube => flat.extend((0..d).map(|_| rng.gen_range(-1.0..=1.0))),
            Shape::Polytope => {
                return Err(Error::InvalidArgument("polytope fixtures are halfspace files".into()))
            }
        }
    }
    PointSet::from_flat(d, flat)
}

/// Random bounded polytope with `m` facets containing the unit-0.8 ball.
pub fn gen_polytope(m: usize, d: usize, seed: u64) -> Result<HPolytope> {
    if !(2..=8).contains(&d) {
        return Err(Error::Dimension(d));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<(Vec<f64>, f64)> = (0..m).map(|_| (random_unit(&mut rng, d), rng.gen_range(0.8..1.2))).collect();
    HPolytope::from_rows(d, &rows)
}

/// Least-squares slope of `ln |Q|` against `ln (1/ε)`; `None` with fewer
/// than two distinct ε.
pub fn fit_slope(rows: &[(f64, usize)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows.iter().map(|&(e, k)| ((1.0 / e).ln(), (k.max(1) as f64).ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if pts.len() < 2 || sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Parses `argv` (including the program name), runs the command, and returns
/// the exit code. Output goes to `out`, diagnostics to stderr.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    if let Err(msg) = init_logging() {
        eprintln!("error: {msg}");
        return 1;
    }
    let mut buf: Vec<u8> = Vec::new();
    let result = match cli.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t as usize).build() {
            Ok(pool) => pool.install(|| run(&cli, &mut buf)),
            Err(e) => Err(Error::InvalidArgument(format!("thread pool: {e}"))),
        },
        None => run(&cli, &mut buf),
    };
    let result = result.and_then(|c| {
        out.write_all(&buf)?;
        out.flush()?;
        Ok(c)
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// 2 for failed runtime checks, 1 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_invariant() {
        2
    } else {
        1
    }
}

fn init_logging() -> std::result::Result<(), String> {
    let level = match std::env::var("GEOMK_LOG") {
        Ok(v) if ["error", "info", "debug"].contains(&v.as_str()) => v,
        Ok(v) => return Err(format!("GEOMK_LOG must be error, info or debug, got {v:?}")),
        Err(_) => "error".into(),
    };
    let _ = env_logger::Builder::new().parse_filters(&format!("geomk={level}")).try_init();
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn emit(out: &mut dyn Write, v: &Value) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    writeln!(out, "{s}")?;
    Ok(())
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Adds `"timings"` unless disabled.
fn with_timings(cli: &Cli, mut v: Value, timings: Value) -> Value {
    if !cli.no_timings {
        v["timings"] = timings;
    }
    v
}

fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    match &cli.cmd {
        Command::Kernel(a) => cmd_kernel(cli, a, out),
        Command::Diameter(a) => cmd_diameter(cli, a, out),
        Command::Width(a) => cmd_width(cli, a, out),
        Command::Bcp(a) => cmd_bcp(cli, a, out),
        Command::Apm(ApmCommand::Build(a)) => cmd_apm_build(cli, a, out),
        Command::Apm(ApmCommand::Query(a)) => cmd_apm_query(cli, a, out),
        Command::Bench(a) => cmd_bench(a, out),
        Command::Selftest => cmd_selftest(out),
        Command::Gen(a) => cmd_gen(a, out),
    }
}

/// Smallest width ratio `width_v(Q)/width_v(S)` over `m` seeded directions,
/// with the exact width in the worst direction.
fn min_width_ratio(s: &PointSet, q: &PointSet, m: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (f64::INFINITY, 0.0);
    for _ in 0..m {
        let v = random_unit(&mut rng, s.dim());
        let exact = oracle::exact_width(s, &v);
        if exact > 0.0 {
            let r = oracle::exact_width(q, &v) / exact;
            if r < worst.0 {
                worst = (r, exact);
            }
        }
    }
    worst
}

fn cmd_kernel(cli: &Cli, a: &KernelArgs, out: &mut dyn Write) -> Result<i32> {
    let s = read_points_file(&a.input)?;
    let t = Instant::now();
    let cfg = BootstrapConfig { rounds: a.rounds, ..Default::default() };
    let k = build_kernel(&s, a.eps, &cfg)?;
    let build_ms = ms(t);
    let q = s.subset(&k.subset)?;
    if let Some(p) = &a.out {
        write_points(create(p)?, &q)?;
    }
    if let Some(p) = &a.stats {
        let mut st = json!({ "schema": SCHEMA, "stats": k.stats });
        st = with_timings(cli, st, json!({ "build_ms": build_ms }));
        let mut w = create(p)?;
        emit(&mut w, &st)?;
    }
    let mut v = json!({
        "schema": SCHEMA,
        "command": "kernel",
        "eps": a.eps,
        "rounds": a.rounds,
        "input": s.len(),
        "size": k.subset.len(),
        "subset": k.subset,
    });
    if a.verify {
        let (ratio, exact) = min_width_ratio(&s, &q, a.verify_dirs, a.seed);
        v["exact"] = json!(exact);
        v["ratio"] = json!(ratio);
        v["directions"] = json!(a.verify_dirs);
    }
    emit(out, &with_timings(cli, v, json!({ "build_ms": build_ms })))?;
    Ok(0)
}

fn cmd_diameter(cli: &Cli, a: &DiameterArgs, out: &mut dyn Write) -> Result<i32> {
    let s = read_points_file(&a.input)?;
    let t = Instant::now();
    let r = diameter(&s, a.eps)?;
    let total = ms(t);
    let mut v = json!({
        "schema": SCHEMA,
        "command": "diameter",
        "eps": a.eps,
        "value": r.dist,
        "pair": [r.p, r.q],
        "kernel_size": r.kernel_size,
        "directions": r.directions,
    });
    if a.verify {
        let (_, _, exact) = oracle::exact_diameter(&s)?;
        v["exact"] = json!(exact);
        v["ratio"] = json!(if exact > 0.0 { r.dist / exact } else { 1.0 });
    }
    emit(out, &with_timings(cli, v, json!({ "total_ms": total })))?;
    Ok(0)
}

fn cmd_width(cli: &Cli, a: &WidthArgs, out: &mut dyn Write) -> Result<i32> {
    let s = read_points_file(&a.input)?;
    let dirs = read_points_file(&a.dirs)?;
    if dirs.dim() != s.dim() {
        return Err(Error::DimMismatch { expected: s.dim(), got: dirs.dim() });
    }
    let t = Instant::now();
    let idx = WidthIndex::build(&s, a.eps)?;
    let build = ms(t);
    let t = Instant::now();
    let values = dirs.iter().map(|d| idx.query(d)).collect::<Result<Vec<f64>>>()?;
    let query = ms(t);
    let mut v = json!({
        "schema": SCHEMA,
        "command": "width",
        "eps": a.eps,
        "value": values,
        "stats": idx.stats,
    });
    if a.verify {
        let exact: Vec<f64> = dirs
            .iter()
            .map(|d| {
                let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
                let u: Vec<f64> = d.iter().map(|x| x / n).collect();
                oracle::exact_width(&s, &u)
            })
            .collect();
        let ratio: Vec<f64> =
            values.iter().zip(&exact).map(|(a, e)| if *e > 0.0 { a / e } else { 1.0 }).collect();
        v["exact"] = json!(exact);
        v["ratio"] = json!(ratio);
    }
    emit(out, &with_timings(cli, v, json!({ "build_ms": build, "query_ms": query })))?;
    Ok(0)
}

fn cmd_bcp(cli: &Cli, a: &BcpArgs, out: &mut dyn Write) -> Result<i32> {
    let r = read_points_file(&a.red)?;
    let b = read_points_file(&a.blue)?;
    let t = Instant::now();
    let res = bcp(&r, &b, a.eps, a.seed)?;
    let total = ms(t);
    let mut v = json!({
        "schema": SCHEMA,
        "command": "bcp",
        "eps": a.eps,
        "seed": a.seed,
        "value": res.dist,
        "pair": [res.red, res.blue],
        "stats": res.stats,
    });
    if a.verify {
        let (_, _, exact) = oracle::exact_bcp(&r, &b)?;
        v["exact"] = json!(exact);
        v["ratio"] = json!(if exact > 0.0 { res.dist / exact } else { 1.0 });
    }
    emit(out, &with_timings(cli, v, json!({ "total_ms": total })))?;
    Ok(0)
}

fn cmd_apm_build(cli: &Cli, a: &ApmBuildArgs, out: &mut dyn Write) -> Result<i32> {
    let p = read_halfspaces_file(&a.halfspaces)?;
    let t = Instant::now();
    let idx = build_apm(&p, a.eps, a.rounds)?;
    let build = ms(t);
    apm::save(&idx, &a.out)?;
    let v = json!({
        "schema": SCHEMA,
        "command": "apm build",
        "eps": a.eps,
        "rounds": a.rounds,
        "dim": idx.dim(),
        "stats": idx.stats,
    });
    emit(out, &with_timings(cli, v, json!({ "build_ms": build })))?;
    Ok(0)
}

fn cmd_apm_query(cli: &Cli, a: &ApmQueryArgs, out: &mut dyn Write) -> Result<i32> {
    let idx = apm::load(&a.index)?;
    let q = read_points_file(&a.points)?;
    let t = Instant::now();
    let verdicts = q.iter().map(|x| idx.query(x)).collect::<Result<Vec<_>>>()?;
    let total = ms(t);
    if let Some(p) = &a.out {
        let mut w = create(p)?;
        writeln!(w, "inside,path_length")?;
        for v in &verdicts {
            writeln!(w, "{},{}", v.inside as u8, v.path_length)?;
        }
    }
    let v = json!({
        "schema": SCHEMA,
        "command": "apm query",
        "queries": verdicts.len(),
        "inside": verdicts.iter().filter(|v| v.inside).count(),
        "max_path_length": verdicts.iter().map(|v| v.path_length).max().unwrap_or(0),
    });
    emit(out, &with_timings(cli, v, json!({ "query_ms": total })))?;
    Ok(0)
}

#[derive(Debug, Clone, Serialize)]
struct BenchRow {
    eps: f64,
    size: usize,
    build_ms: f64,
    min_width_ratio: f64,
}

fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<i32> {
    let Suite::Scaling = a.suite;
    let s = gen_points(a.shape, a.n, a.d, a.seed)?;
    let cfg = BootstrapConfig { rounds: a.rounds, ..Default::default() };
    let mut rows = Vec::new();
    for &eps in &a.eps {
        let t = Instant::now();
        let k = build_kernel(&s, eps, &cfg)?;
        let build_ms = ms(t);
        let (ratio, _) = min_width_ratio(&s, &s.subset(&k.subset)?, a.dirs, a.seed.wrapping_add(1));
        log::info!("eps {eps}: {} points in {build_ms:.0} ms, min ratio {ratio:.4}", k.subset.len());
        rows.push(BenchRow { eps, size: k.subset.len(), build_ms, min_width_ratio: ratio });
    }
    let slope = fit_slope(&rows.iter().map(|r| (r.eps, r.size)).collect::<Vec<_>>());
    writeln!(out, "eps,size,build_ms,min_width_ratio")?;
    for r in &rows {
        writeln!(out, "{},{},{:.3},{:.6}", r.eps, r.size, r.build_ms, r.min_width_ratio)?;
    }
    match slope {
        Some(s) => writeln!(out, "# slope,{s:.6}")?,
        None => writeln!(out, "# slope,null")?,
    }
    if let Some(p) = &a.json {
        let v = json!({
            "schema": SCHEMA,
            "command": "bench",
            "suite": "scaling",
            "d": a.d,
            "n": a.n,
            "shape": a.shape,
            "seed": a.seed,
            "rows": rows,
            "slope": slope,
        });
        emit(&mut create(p)?, &v)?;
    }
    Ok(0)
}

fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<i32> {
    let mut sink: Box<dyn Write + '_> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(out),
    };
    if a.shape == Shape::Polytope {
        write_halfspaces(&mut sink, &gen_polytope(a.n, a.d, a.seed)?)?;
    } else {
        write_points(&mut sink, &gen_points(a.shape, a.n, a.d, a.seed)?)?;
    }
    sink.flush()?;
    Ok(0)
}

type Check = (&'static str, fn() -> Result<String>);

fn check(ok: bool, detail: String) -> Result<String> {
    if ok {
        Ok(detail)
    } else {
        Err(Error::Invariant(detail))
    }
}

fn selftest_checks() -> Vec<Check> {
    vec![
        ("kernel_diamond", || {
            let s = PointSet::new(2, &[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]])?;
            let k = build_kernel(&s, 0.1, &BootstrapConfig::default())?;
            check(k.subset == vec![0, 1, 2, 3], format!("subset {:?}", k.subset))
        }),
        ("kernel_ball_2d", || {
            let s = gen_points(Shape::Ball, 2000, 2, 1)?;
            let k = build_kernel(&s, 0.1, &BootstrapConfig::default())?;
            let (r, _) = min_width_ratio(&s, &s.subset(&k.subset)?, 500, 2);
            check(r >= 0.9, format!("{} points, min width ratio {r:.4}", k.subset.len()))
        }),
        ("apm_cube_3d", || {
            let p = HPolytope::cube(3, 0.5);
            let idx = build_apm(&p, 0.1, 0)?;
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut bad = 0;
            for _ in 0..500 {
                let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.8..0.8)).collect();
                let inside = idx.query(&q)?.inside;
                let m = q.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                if (m <= 0.5 && !inside) || (m > 0.5 + 0.1 && inside) {
                    bad += 1;
                }
            }
            check(bad == 0, format!("{bad} wrong verdicts of 500"))
        }),
        ("diameter_pair", || {
            let s = PointSet::new(2, &[vec![0.0, 0.0], vec![3.0, 4.0]])?;
            let r = diameter(&s, 0.1)?;
            check(r.dist == 5.0, format!("value {}", r.dist))
        }),
        ("width_diamond", || {
            let s = PointSet::new(2, &[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]])?;
            let w = WidthIndex::build(&s, 0.1)?.query(&[1.0, 0.0])?;
            check((1.8..=2.0).contains(&w), format!("value {w}"))
        }),
        ("bcp_random", || {
            let r = gen_points(Shape::Cube, 400, 3, 4)?;
            let b = gen_points(Shape::Cube, 400, 3, 5)?;
            let got = bcp(&r, &b, 0.1, 0)?.dist;
            let (_, _, exact) = oracle::exact_bcp(&r, &b)?;
            check(got >= exact && got <= 1.1 * exact, format!("ratio {}", got / exact))
        }),
        ("index_round_trip", || {
            let idx = build_apm(&gen_polytope(40, 3, 6)?, 0.1, 0)?;
            let mut buf = Vec::new();
            apm::write_index(&idx, &mut buf)?;
            let back = apm::read_index(buf.as_slice())?;
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let same = (0..200).all(|_| {
                let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.3..1.3)).collect();
                matches!((idx.query(&q), back.query(&q)), (Ok(a), Ok(b)) if a == b)
            });
            check(same, format!("{} bytes", buf.len()))
        }),
    ]
}

fn cmd_selftest(out: &mut dyn Write) -> Result<i32> {
    let mut results = Vec::new();
    let mut code = 0;
    for (name, f) in selftest_checks() {
        let (ok, detail) = match f() {
            Ok(d) => (true, d),
            Err(e) => {
                code = code.max(if e.is_invariant() { 2 } else { 1 });
                (false, e.to_string())
            }
        };
        results.push(json!({ "name": name, "ok": ok, "detail": detail }));
    }
    emit(out, &json!({ "schema": SCHEMA, "command": "selftest", "passed": code == 0, "checks": results }))?;
    Ok(code)
}
