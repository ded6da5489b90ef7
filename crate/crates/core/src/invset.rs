//! Polyhedral invariant sets by fixed-point iteration, plus the small LP
//! helpers used for redundancy and inclusion checks.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::{ConstraintPolytope, Zonotope};

pub const DEFAULT_MAX_ITER: usize = 500;
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LpValue {
    Finite(f64),
    Unbounded,
}

/// `max c'x` subject to `F x <= f`, optionally ignoring one row.
pub fn lp_max(normals: &DMatrix<f64>, offsets: &DVector<f64>, c: &[f64], skip: Option<usize>) -> Result<LpValue> {
    let n = normals.ncols();
    let mut p = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = (0..n)
        .map(|j| p.add_var(c[j], (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    for i in 0..normals.nrows() {
        if Some(i) == skip {
            continue;
        }
        let expr: Vec<_> = (0..n)
            .filter(|&j| normals[(i, j)] != 0.0)
            .map(|j| (vars[j], normals[(i, j)]))
            .collect();
        p.add_constraint(expr.as_slice(), ComparisonOp::Le, offsets[i]);
    }
    match p.solve() {
        Ok(sol) => Ok(LpValue::Finite(sol.objective())),
        Err(minilp::Error::Unbounded) => Ok(LpValue::Unbounded),
        Err(minilp::Error::Infeasible) => Err(Error::Lp("constraint set is empty".into())),
    }
}

/// `max c'x` over a polytope.
pub fn support_polytope(set: &ConstraintPolytope, c: &[f64]) -> Result<LpValue> {
    lp_max(set.normals(), set.offsets(), c, None)
}

/// Drops rows implied by the others (within `tol`).
pub fn remove_redundant(set: &ConstraintPolytope, tol: f64) -> Result<ConstraintPolytope> {
    let mut normals = set.normals().clone();
    let mut offsets = set.offsets().clone();
    let mut i = 0;
    while i < normals.nrows() {
        let row: Vec<f64> = normals.row(i).iter().copied().collect();
        let redundant = match lp_max(&normals, &offsets, &row, Some(i))? {
            LpValue::Finite(v) => v <= offsets[i] + tol,
            LpValue::Unbounded => false,
        };
        if redundant && normals.nrows() > 1 {
            normals = normals.remove_row(i);
            offsets = offsets.remove_row(i);
        } else {
            i += 1;
        }
    }
    ConstraintPolytope::new(normals, offsets)
}

/// Maximal (robust) positively invariant set of `x+ = A x + d`, `d ∈ D`,
/// inside `{x : G x <= g}`. With `D = None` this is the nominal maximal
/// constraint-admissible set. The result is normalized and pruned.
pub fn maximal_invariant_set(
    a: &DMatrix<f64>,
    constraints: &ConstraintPolytope,
    disturbance: Option<&Zonotope>,
    max_iter: usize,
    tol: f64,
) -> Result<ConstraintPolytope> {
    let n = a.nrows();
    if constraints.dim() != n {
        return Err(Error::dims("invariant set constraints", n, constraints.dim()));
    }
    let base = constraints.normals().clone();
    let p = base.nrows();
    let mut normals = base.clone();
    let mut offsets = constraints.offsets().clone();
    // reduction[i] accumulates Σ_{j<k} h_D((G_i A^j)')
    let mut reduction = DVector::<f64>::zeros(p);
    let mut power = DMatrix::<f64>::identity(n, n);
    for _k in 1..=max_iter {
        if let Some(d) = disturbance {
            let rows = &base * &power;
            for i in 0..p {
                let r: Vec<f64> = rows.row(i).iter().copied().collect();
                reduction[i] += d.support_row(&r);
            }
        }
        power = a * power;
        let candidates = &base * &power;
        let mut added = Vec::new();
        for i in 0..p {
            let offset = constraints.offsets()[i] - reduction[i];
            if offset <= tol {
                return Err(Error::InvalidInput(
                    "invariant set iteration lost the origin; the disturbance is too large".into(),
                ));
            }
            let row: Vec<f64> = candidates.row(i).iter().copied().collect();
            if row.iter().all(|v| v.abs() <= 1e-300) {
                continue;
            }
            let redundant = match lp_max(&normals, &offsets, &row, None)? {
                LpValue::Finite(v) => v <= offset + tol,
                LpValue::Unbounded => false,
            };
            if !redundant {
                added.push((row, offset));
            }
        }
        if added.is_empty() {
            let set = ConstraintPolytope::new(normals, offsets)?;
            return remove_redundant(&set.normalize()?, tol);
        }
        let old = normals.nrows();
        normals = normals.resize_vertically(old + added.len(), 0.0);
        offsets = offsets.resize_vertically(old + added.len(), 0.0);
        for (k, (row, off)) in added.into_iter().enumerate() {
            for j in 0..n {
                normals[(old + k, j)] = row[j];
            }
            offsets[old + k] = off;
        }
    }
    Err(Error::NoConvergence("invariant set iteration", max_iter))
}

/// True when every vertex-free LP check `max_{x∈inner} h_i x <= outer_i + tol` passes.
pub fn polytope_subset(inner: &ConstraintPolytope, outer: &ConstraintPolytope, tol: f64) -> Result<bool> {
    for i in 0..outer.num_rows() {
        let row: Vec<f64> = outer.normals().row(i).iter().copied().collect();
        match support_polytope(inner, &row)? {
            LpValue::Finite(v) if v <= outer.offsets()[i] + tol => {}
            _ => return Ok(false),
        }
    }
    Ok(true)
}
