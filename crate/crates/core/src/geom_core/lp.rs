//! Small dense linear programs over `a·x ≤ b` constraint lists.
//!
//! Variables carry a box `|x_i| ≤ BOX`; an optimum on the box is reported as
//! unbounded. This keeps the simplex well defined for free variables.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

use super::{norm, HPolytope};
use crate::error::{Error, Result};

const BOX: f64 = 1e6;

fn on_box(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() >= BOX * (1.0 - 1e-9))
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Unbounded,
    Infeasible,
}

/// Maximize `c·x` subject to `a_i·x ≤ b_i`, with `rows` given as `(a_i, b_i)`.
pub fn maximize(c: &[f64], rows: &[(&[f64], f64)]) -> Result<LpOutcome> {
    let d = c.len();
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = c
        .iter()
        .map(|&ci| p.add_var(ci, (-BOX, BOX)))
        .collect();
    for (a, b) in rows {
        debug_assert_eq!(a.len(), d);
        let expr: Vec<_> = vars.iter().copied().zip(a.iter().copied()).collect();
        p.add_constraint(&expr[..], ComparisonOp::Le, *b);
    }
    match p.solve() {
        Ok(sol) => {
            let x: Vec<f64> = vars.iter().map(|v| sol[*v]).collect();
            if on_box(&x) {
                return Ok(LpOutcome::Unbounded);
            }
            Ok(LpOutcome::Optimal { value: sol.objective(), x })
        }
        Err(minilp::Error::Unbounded) => Ok(LpOutcome::Unbounded),
        Err(minilp::Error::Infeasible) => Ok(LpOutcome::Infeasible),
    }
}

/// Maximize `c·x` over a polytope.
pub fn maximize_over(p: &HPolytope, c: &[f64]) -> Result<LpOutcome> {
    let rows: Vec<(&[f64], f64)> = (0..p.len()).map(|i| (p.normal(i), p.offset(i))).collect();
    maximize(c, &rows)
}

/// Largest `r` and point `x` with the ball `B(x, r)` inside `{a_i·x ≤ b_i}`.
pub fn chebyshev_center(rows: &[(&[f64], f64)], d: usize) -> Result<(Vec<f64>, f64)> {
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = (0..d)
        .map(|_| p.add_var(0.0, (-BOX, BOX)))
        .collect();
    let r = p.add_var(1.0, (0.0, BOX));
    for (a, b) in rows {
        let mut expr: Vec<_> = vars.iter().copied().zip(a.iter().copied()).collect();
        expr.push((r, norm(a)));
        p.add_constraint(&expr[..], ComparisonOp::Le, *b);
    }
    match p.solve() {
        Ok(sol) => {
            let x: Vec<f64> = vars.iter().map(|v| sol[*v]).collect();
            if on_box(&x) || sol[r] >= BOX * (1.0 - 1e-9) {
                return Err(Error::Lp("chebyshev center: unbounded".into()));
            }
            Ok((x, sol[r]))
        }
        Err(minilp::Error::Unbounded) => Err(Error::Lp("chebyshev center: unbounded".into())),
        Err(minilp::Error::Infeasible) => Err(Error::Lp("chebyshev center: infeasible".into())),
    }
}

/// Whether `{a_i·x ≤ b_i}` has a point (touching counts as feasible).
pub fn feasible(rows: &[(&[f64], f64)], d: usize) -> Result<bool> {
    let zero = vec![0.0; d];
    Ok(!matches!(maximize(&zero, rows)?, LpOutcome::Infeasible))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_max() {
        let rows: Vec<(Vec<f64>, f64)> = vec![
            (vec![1.0, 0.0], 0.3),
            (vec![-1.0, 0.0], 0.3),
            (vec![0.0, 1.0], 0.3),
            (vec![0.0, -1.0], 0.3),
        ];
        let r: Vec<(&[f64], f64)> = rows.iter().map(|(a, b)| (&a[..], *b)).collect();
        match maximize(&[1.0, 1.0], &r).unwrap() {
            LpOutcome::Optimal { value, .. } => assert!((value - 0.6).abs() < 1e-9),
            o => panic!("{o:?}"),
        }
        let (c, rad) = chebyshev_center(&r, 2).unwrap();
        assert!((rad - 0.3).abs() < 1e-9);
        assert!(c.iter().all(|x| x.abs() < 1e-9));
        assert!(matches!(maximize(&[1.0, 0.0], &r[1..]).unwrap(), LpOutcome::Unbounded));
    }

    #[test]
    fn infeasible_pair() {
        let rows: Vec<(Vec<f64>, f64)> = vec![(vec![1.0, 0.0], -1.0), (vec![-1.0, 0.0], -1.0)];
        let r: Vec<(&[f64], f64)> = rows.iter().map(|(a, b)| (&a[..], *b)).collect();
        assert!(!feasible(&r, 2).unwrap());
    }
}
