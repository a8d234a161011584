//! Text formats: point files (`d` numbers per line) and halfspace files
//! (`d+1` numbers `a₁ … a_d b` per line, meaning `a·x ≤ b`). Numbers are
//! separated by whitespace and/or commas; `#` starts a comment.

use std::io::{BufRead, Write};
use std::path::Path;

use super::{HPolytope, PointSet};
use crate::error::{Error, Result};

fn parse_rows<R: BufRead>(r: R) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("");
        let vals: Vec<&str> =
            body.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()).collect();
        if vals.is_empty() {
            continue;
        }
        let nums = vals
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("bad number {t:?}") })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((i + 1, nums));
    }
    Ok(rows)
}

fn common_width(rows: &[(usize, Vec<f64>)]) -> Result<usize> {
    let w = rows.first().map(|r| r.1.len()).ok_or_else(|| Error::Empty("input file".into()))?;
    for (line, r) in rows {
        if r.len() != w {
            return Err(Error::Parse {
                line: *line,
                msg: format!("expected {w} values, found {}", r.len()),
            });
        }
    }
    Ok(w)
}

pub fn read_points<R: BufRead>(r: R) -> Result<PointSet> {
    let rows = parse_rows(r)?;
    let d = common_width(&rows)?;
    PointSet::from_flat(d, rows.into_iter().flat_map(|r| r.1).collect())
}

pub fn read_halfspaces<R: BufRead>(r: R) -> Result<HPolytope> {
    let rows = parse_rows(r)?;
    let w = common_width(&rows)?;
    if w < 3 {
        return Err(Error::Parse { line: rows[0].0, msg: "need d+1 ≥ 3 values".into() });
    }
    let d = w - 1;
    let hs: Vec<(Vec<f64>, f64)> = rows.into_iter().map(|(_, r)| (r[..d].to_vec(), r[d])).collect();
    HPolytope::from_rows(d, &hs)
}

pub fn read_points_file(path: &Path) -> Result<PointSet> {
    read_points(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub fn read_halfspaces_file(path: &Path) -> Result<HPolytope> {
    read_halfspaces(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Writes one point per line, comma separated, with round-trip precision.
pub fn write_points<W: Write>(mut w: W, pts: &PointSet) -> Result<()> {
    for p in pts.iter() {
        let line: Vec<String> = p.iter().map(|x| format!("{x:?}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Writes `a₁,…,a_d,b` per halfspace.
pub fn write_halfspaces<W: Write>(mut w: W, p: &HPolytope) -> Result<()> {
    for i in 0..p.len() {
        let mut line: Vec<String> = p.normal(i).iter().map(|x| format!("{x:?}")).collect();
        line.push(format!("{:?}", p.offset(i)));
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_separators_and_comments() {
        let src = "# header\n0.1, 0.2\n\n0.3 0.4 # trailing\n-1,\t2\n";
        let s = read_points(src.as_bytes()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.point(2), &[-1.0, 2.0]);
    }

    #[test]
    fn ragged_rows_report_line() {
        let err = read_points("1 2\n1 2 3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn halfspaces_round_trip() {
        let src = "2 0 1\n-1 0 1\n0 1 1\n0 -1 1\n";
        let p = read_halfspaces(src.as_bytes()).unwrap();
        assert!((p.offset(0) - 0.5).abs() < 1e-15);
        let mut buf = Vec::new();
        write_halfspaces(&mut buf, &p).unwrap();
        assert_eq!(read_halfspaces(&buf[..]).unwrap(), p);
    }
}
