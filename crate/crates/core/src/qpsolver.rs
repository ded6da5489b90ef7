//! Operator-splitting (ADMM) solver for convex QPs
//! `min ½ z'Hz + q'z  s.t.  l <= Cz <= u`, with an optional block of rows of
//! `Cz` confined to a Euclidean ball. The linear system is factored once per
//! penalty in band form, so time-ordered MPC problems cost `O(N)` per iteration.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BandCholesky, BandMatrix};

/// Sparse matrix stored as one `(column, value)` list per row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRows {
    cols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(cols: usize) -> Self {
        Self { cols, rows: Vec::new() }
    }

    pub fn from_dense(m: &nalgebra::DMatrix<f64>) -> Self {
        let mut s = Self::new(m.ncols());
        for i in 0..m.nrows() {
            s.push_row(m.row(i).iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect());
        }
        s
    }

    pub fn push_row(&mut self, entries: Vec<(usize, f64)>) -> usize {
        debug_assert!(entries.iter().all(|(j, _)| *j < self.cols));
        self.rows.push(entries);
        self.rows.len() - 1
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|(j, v)| v * x[*j]).sum();
        }
    }

    pub fn mul_t(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (yi, row) in y.iter().zip(&self.rows) {
            if *yi != 0.0 {
                for (j, v) in row {
                    out[*j] += v * yi;
                }
            }
        }
    }
}

/// Rows `start..start + len` of `Cz` must satisfy `||(Cz)_block|| <= radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallConstraint {
    pub start: usize,
    pub len: usize,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Symmetric Hessian; both triangles stored.
    pub hessian: SparseRows,
    pub linear: DVector<f64>,
    pub constraints: SparseRows,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub ball: Option<BallConstraint>,
}

impl QpProblem {
    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn num_rows(&self) -> usize {
        self.constraints.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let p = self.num_rows();
        if self.hessian.nrows() != n || self.hessian.ncols() != n {
            return Err(Error::dims("QP Hessian", n, self.hessian.nrows()));
        }
        if self.constraints.ncols() != n {
            return Err(Error::dims("QP constraint columns", n, self.constraints.ncols()));
        }
        if self.lower.len() != p || self.upper.len() != p {
            return Err(Error::dims("QP bounds", p, self.lower.len()));
        }
        if self.linear.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("QP linear term"));
        }
        for i in 0..p {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return Err(Error::InvalidInput(format!("QP row {i} has inconsistent bounds")));
            }
        }
        if let Some(b) = self.ball {
            if b.start + b.len > p || b.radius <= 0.0 {
                return Err(Error::InvalidInput("ball constraint out of range".into()));
            }
        }
        Ok(())
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let mut hz = vec![0.0; z.len()];
        self.hessian.mul(z, &mut hz);
        0.5 * dot(z, &hz) + dot(self.linear.as_slice(), z)
    }

    /// Largest violation of the constraints at `z`.
    pub fn violation(&self, z: &[f64]) -> f64 {
        let mut cz = vec![0.0; self.num_rows()];
        self.constraints.mul(z, &mut cz);
        let mut worst: f64 = 0.0;
        for (i, v) in cz.iter().enumerate() {
            if self.in_ball(i) {
                continue;
            }
            worst = worst.max(self.lower[i] - v).max(v - self.upper[i]);
        }
        if let Some(b) = self.ball {
            let norm = cz[b.start..b.start + b.len].iter().map(|v| v * v).sum::<f64>().sqrt();
            worst = worst.max(norm - b.radius);
        }
        worst
    }

    fn in_ball(&self, i: usize) -> bool {
        self.ball.is_some_and(|b| i >= b.start && i < b.start + b.len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    PrimalInfeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Splitting copy of `Cz`.
    pub z: DVector<f64>,
    /// Constraint multipliers.
    pub y: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: QpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub polished: bool,
}

impl QpSolution {
    pub fn is_solved(&self) -> bool {
        self.status == QpStatus::Solved
    }
}

/// Starting point for the iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub y: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpSettings {
    pub penalty: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub relaxation: f64,
    pub sigma: f64,
    /// Penalty multiplier on equality rows.
    pub equality_scale: f64,
    pub polish: bool,
    /// Consecutive primal-residual increases that count as divergence.
    pub divergence_window: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            penalty: 15.0,
            tol: 1e-4,
            max_iter: 20_000,
            relaxation: 1.6,
            sigma: 1e-6,
            equality_scale: 1e3,
            polish: true,
            divergence_window: 200,
        }
    }
}

/// Euclidean projection onto `{v : ||v|| <= radius}`.
pub fn project_ball(point: &[f64], radius: f64) -> Vec<f64> {
    let norm = point.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= radius {
        point.to_vec()
    } else {
        point.iter().map(|v| v * radius / norm).collect()
    }
}

/// Clips each slack entry to `(-∞, f_i]`.
pub fn project_polytope_rows(point: &[f64], offsets: &[f64]) -> Vec<f64> {
    point.iter().zip(offsets).map(|(v, f)| v.min(*f)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn amax(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn bandwidth(h: &SparseRows, c: &SparseRows) -> usize {
    let mut bw = 0;
    for i in 0..h.nrows() {
        for (j, _) in h.row(i) {
            bw = bw.max(i.abs_diff(*j));
        }
    }
    for i in 0..c.nrows() {
        let row = c.row(i);
        if let (Some(lo), Some(hi)) = (row.iter().map(|e| e.0).min(), row.iter().map(|e| e.0).max()) {
            bw = bw.max(hi - lo);
        }
    }
    bw
}

/// Factorizes `H + σI + C' diag(ρ) C`.
fn factor(h: &SparseRows, c: &SparseRows, rho: &[f64], sigma: f64, bw: usize) -> Result<BandCholesky> {
    let n = h.nrows();
    let mut k = BandMatrix::zeros(n, bw);
    for i in 0..n {
        k.add(i, i, sigma);
        for (j, v) in h.row(i) {
            if *j <= i {
                k.add(i, *j, *v);
            }
        }
    }
    for (r, &rr) in rho.iter().enumerate() {
        let row = c.row(r);
        for (a, va) in row {
            for (b, vb) in row {
                if b <= a {
                    k.add(*a, *b, rr * va * vb);
                }
            }
        }
    }
    k.cholesky()
}

/// Reusable solver: the factorization depends only on `H`, `C` and the
/// penalties, so bounds and the linear term may change between solves.
#[derive(Debug, Clone)]
pub struct QpSolver {
    problem: QpProblem,
    settings: QpSettings,
    rho: Vec<f64>,
    factor: BandCholesky,
    bandwidth: usize,
}

impl QpSolver {
    pub fn new(problem: QpProblem, settings: QpSettings) -> Result<Self> {
        problem.validate()?;
        if !(settings.penalty > 0.0 && settings.tol > 0.0 && settings.sigma > 0.0) {
            return Err(Error::InvalidInput("QP penalty, tolerance and sigma must be positive".into()));
        }
        let rho = row_penalties(&problem, &settings);
        let bw = bandwidth(&problem.hessian, &problem.constraints);
        let factor = factor(&problem.hessian, &problem.constraints, &rho, settings.sigma, bw)?;
        Ok(Self {
            problem,
            settings,
            rho,
            factor,
            bandwidth: bw,
        })
    }

    pub fn problem(&self) -> &QpProblem {
        &self.problem
    }

    pub fn settings(&self) -> &QpSettings {
        &self.settings
    }

    /// Replaces the bounds; refactors only when a row switches between
    /// equality and inequality.
    pub fn set_bounds(&mut self, lower: DVector<f64>, upper: DVector<f64>) -> Result<()> {
        let mut p = self.problem.clone();
        p.lower = lower;
        p.upper = upper;
        p.validate()?;
        let rho = row_penalties(&p, &self.settings);
        if rho != self.rho {
            self.factor = factor(&p.hessian, &p.constraints, &rho, self.settings.sigma, self.bandwidth)?;
            self.rho = rho;
        }
        self.problem = p;
        Ok(())
    }

    pub fn set_linear(&mut self, linear: DVector<f64>) -> Result<()> {
        if linear.len() != self.problem.num_vars() {
            return Err(Error::dims("QP linear term", self.problem.num_vars(), linear.len()));
        }
        self.problem.linear = linear;
        Ok(())
    }

    pub fn solve(&self, warm: Option<&WarmStart>) -> QpSolution {
        let p = &self.problem;
        let s = &self.settings;
        let n = p.num_vars();
        let m = p.num_rows();
        let (mut x, mut z, mut y) = match warm {
            Some(w) if w.x.len() == n && w.z.len() == m && w.y.len() == m => {
                (w.x.as_slice().to_vec(), w.z.as_slice().to_vec(), w.y.as_slice().to_vec())
            }
            _ => (vec![0.0; n], vec![0.0; m], vec![0.0; m]),
        };
        let alpha = s.relaxation;
        let mut rhs = vec![0.0; n];
        let mut tmp_m = vec![0.0; m];
        let mut ax = vec![0.0; m];
        let mut hx = vec![0.0; n];
        let mut aty = vec![0.0; n];
        let mut z_prev = vec![0.0; m];
        let mut y_prev = vec![0.0; m];
        let mut rising = 0usize;
        let mut last_prim = f64::INFINITY;
        let mut status = QpStatus::MaxIterations;
        let mut iterations = 0;
        let (mut prim, mut dual) = residuals(p, &x, &z, &y, &mut ax, &mut hx, &mut aty);
        if prim <= s.tol && dual <= s.tol && warm.is_some() {
            status = QpStatus::Solved;
        }
        while status == QpStatus::MaxIterations && iterations < s.max_iter {
            iterations += 1;
            // x̃ = K⁻¹ (σx - q + C'(ρz - y))
            for i in 0..m {
                tmp_m[i] = self.rho[i] * z[i] - y[i];
            }
            p.constraints.mul_t(&tmp_m, &mut rhs);
            for i in 0..n {
                rhs[i] += s.sigma * x[i] - p.linear[i];
            }
            self.factor.solve_in_place(&mut rhs);
            p.constraints.mul(&rhs, &mut tmp_m);
            z_prev.copy_from_slice(&z);
            y_prev.copy_from_slice(&y);
            for i in 0..n {
                x[i] = alpha * rhs[i] + (1.0 - alpha) * x[i];
            }
            for i in 0..m {
                let zr = alpha * tmp_m[i] + (1.0 - alpha) * z_prev[i];
                tmp_m[i] = zr;
                z[i] = zr + y[i] / self.rho[i];
            }
            self.project(&mut z);
            for i in 0..m {
                y[i] += self.rho[i] * (tmp_m[i] - z[i]);
            }
            let r = residuals(p, &x, &z, &y, &mut ax, &mut hx, &mut aty);
            prim = r.0;
            dual = r.1;
            if prim <= s.tol && dual <= s.tol {
                status = QpStatus::Solved;
                break;
            }
            if self.infeasibility_certificate(&y, &y_prev) {
                status = QpStatus::PrimalInfeasible;
                break;
            }
            if prim > last_prim {
                rising += 1;
                if rising >= s.divergence_window {
                    status = QpStatus::PrimalInfeasible;
                    break;
                }
            } else {
                rising = 0;
            }
            last_prim = prim;
        }
        let mut polished = false;
        if status == QpStatus::Solved && s.polish {
            if let Some((xp, zp, yp)) = self.polish(&x, &z, &y) {
                let r = residuals(p, &xp, &zp, &yp, &mut ax, &mut hx, &mut aty);
                if r.0 <= s.tol && r.1 <= s.tol && p.violation(&xp) <= s.tol {
                    x = xp;
                    z = zp;
                    y = yp;
                    prim = r.0;
                    dual = r.1;
                    polished = true;
                }
            }
        }
        QpSolution {
            objective: p.objective(&x),
            x: DVector::from_vec(x),
            z: DVector::from_vec(z),
            y: DVector::from_vec(y),
            iterations,
            status,
            primal_residual: prim,
            dual_residual: dual,
            polished,
        }
    }

    fn project(&self, z: &mut [f64]) {
        let p = &self.problem;
        for (i, v) in z.iter_mut().enumerate() {
            if !p.in_ball(i) {
                *v = v.clamp(p.lower[i], p.upper[i]);
            }
        }
        if let Some(b) = p.ball {
            let block = &mut z[b.start..b.start + b.len];
            let projected = project_ball(block, b.radius);
            block.copy_from_slice(&projected);
        }
    }

    /// `δy` separates the constraint set from the range of `C`.
    fn infeasibility_certificate(&self, y: &[f64], y_prev: &[f64]) -> bool {
        let p = &self.problem;
        let dy: Vec<f64> = y.iter().zip(y_prev).map(|(a, b)| a - b).collect();
        let norm = amax(&dy);
        if norm <= 1e-12 {
            return false;
        }
        let eps = 1e-6;
        let mut cty = vec![0.0; p.num_vars()];
        p.constraints.mul_t(&dy, &mut cty);
        if amax(&cty) > eps * norm {
            return false;
        }
        let mut support = 0.0;
        for (i, d) in dy.iter().enumerate() {
            if p.in_ball(i) {
                continue;
            }
            let bound = if *d > 0.0 { p.upper[i] } else { p.lower[i] };
            if *d != 0.0 {
                if !bound.is_finite() {
                    return false;
                }
                support += d * bound;
            }
        }
        if let Some(b) = p.ball {
            support += b.radius * dy[b.start..b.start + b.len].iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        support < -eps * norm
    }

    /// Solves the equality-constrained QP on the guessed active set by the
    /// method of multipliers on the band structure.
    fn polish(&self, x: &[f64], z: &[f64], y: &[f64]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let p = &self.problem;
        if let Some(b) = p.ball {
            let norm = z[b.start..b.start + b.len].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm >= b.radius - 1e-9 {
                return None;
            }
        }
        let m = p.num_rows();
        let n = p.num_vars();
        let mut active = vec![None; m];
        for i in 0..m {
            if p.in_ball(i) {
                continue;
            }
            if p.lower[i] == p.upper[i] || z[i] - p.lower[i] < -y[i] {
                active[i] = Some(p.lower[i]);
            } else if p.upper[i] - z[i] < y[i] {
                active[i] = Some(p.upper[i]);
            }
        }
        let big = 1e6;
        let delta = 1e-9;
        let mut lam: Vec<f64> = (0..m).map(|i| if active[i].is_some() { y[i] } else { 0.0 }).collect();
        let mut xs = x.to_vec();
        let mut cx = vec![0.0; m];
        let mut rhs = vec![0.0; n];
        let mut tmp = vec![0.0; m];
        let mut settled = false;
        for _round in 0..8 {
            let pen: Vec<f64> = active.iter().map(|a| if a.is_some() { big } else { 0.0 }).collect();
            let fac = factor(&p.hessian, &p.constraints, &pen, delta, self.bandwidth).ok()?;
            for _ in 0..25 {
                // minimize ½x'Hx + q'x + λ'(Cx - b) + (β/2)||Cx - b||² + (δ/2)||x - xs||²
                for i in 0..m {
                    tmp[i] = match active[i] {
                        Some(b) => big * b - lam[i],
                        None => 0.0,
                    };
                }
                p.constraints.mul_t(&tmp, &mut rhs);
                for i in 0..n {
                    rhs[i] += delta * xs[i] - p.linear[i];
                }
                fac.solve_in_place(&mut rhs);
                xs.copy_from_slice(&rhs);
                p.constraints.mul(&xs, &mut cx);
                let mut worst: f64 = 0.0;
                for i in 0..m {
                    if let Some(b) = active[i] {
                        lam[i] += big * (cx[i] - b);
                        worst = worst.max((cx[i] - b).abs());
                    }
                }
                if worst <= 1e-12 {
                    break;
                }
            }
            // release active rows whose multiplier points inward, add violated rows
            let mut changed = false;
            for i in 0..m {
                if p.in_ball(i) || p.lower[i] == p.upper[i] {
                    continue;
                }
                match active[i] {
                    Some(b) => {
                        let at_upper = b == p.upper[i];
                        if (at_upper && lam[i] < -1e-9) || (!at_upper && lam[i] > 1e-9) {
                            active[i] = None;
                            lam[i] = 0.0;
                            changed = true;
                        }
                    }
                    None => {
                        if cx[i] > p.upper[i] + 1e-9 {
                            active[i] = Some(p.upper[i]);
                            changed = true;
                        } else if cx[i] < p.lower[i] - 1e-9 {
                            active[i] = Some(p.lower[i]);
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                settled = true;
                break;
            }
        }
        if !settled {
            return None;
        }
        let mut zs = cx.clone();
        for (i, v) in zs.iter_mut().enumerate() {
            if !p.in_ball(i) {
                *v = v.clamp(p.lower[i], p.upper[i]);
            }
        }
        Some((xs, zs, lam))
    }
}

fn row_penalties(p: &QpProblem, s: &QpSettings) -> Vec<f64> {
    (0..p.num_rows())
        .map(|i| {
            if !p.in_ball(i) && p.lower[i] == p.upper[i] {
                s.penalty * s.equality_scale
            } else if !p.in_ball(i) && p.lower[i] == f64::NEG_INFINITY && p.upper[i] == f64::INFINITY {
                1e-6
            } else {
                s.penalty
            }
        })
        .collect()
}

fn residuals(
    p: &QpProblem,
    x: &[f64],
    z: &[f64],
    y: &[f64],
    ax: &mut [f64],
    hx: &mut [f64],
    aty: &mut [f64],
) -> (f64, f64) {
    p.constraints.mul(x, ax);
    let prim = ax.iter().zip(z).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    p.hessian.mul(x, hx);
    p.constraints.mul_t(y, aty);
    let mut dual: f64 = 0.0;
    for i in 0..x.len() {
        dual = dual.max((hx[i] + p.linear[i] + aty[i]).abs());
    }
    (prim, dual)
}

/// One-shot convenience wrapper around [`QpSolver`].
pub fn solve_qp(problem: &QpProblem, warm: Option<&WarmStart>, settings: &QpSettings) -> Result<QpSolution> {
    Ok(QpSolver::new(problem.clone(), settings.clone())?.solve(warm))
}
