//! Small dense SDP layer: blocks affine in matrix/scalar unknowns, each
//! required to satisfy `F_b(y) ⪰ ε I`, with an optional linear objective and
//! an optional `log det` enlargement term.
//!
//! The solver is a primal log-barrier method. Phase one maximizes a common
//! slack `t` in `F_b(y) - t I ⪰ 0`; phase two follows the central path of
//! `τ c'y - Σ log det(F_b(y) - ε I)` with Newton steps. A loose box
//! `|y_j| <= R` keeps the iterates bounded.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_MARGIN: f64 = 1e-6;
pub const DEFAULT_UNKNOWN_CAP: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Symmetric(usize),
    Rectangular(usize, usize),
    Scalar,
}

impl Shape {
    fn unknowns(self) -> usize {
        match self {
            Shape::Symmetric(n) => n * (n + 1) / 2,
            Shape::Rectangular(r, c) => r * c,
            Shape::Scalar => 1,
        }
    }

    fn dims(self) -> (usize, usize) {
        match self {
            Shape::Symmetric(n) => (n, n),
            Shape::Rectangular(r, c) => (r, c),
            Shape::Scalar => (1, 1),
        }
    }
}

#[derive(Debug, Clone)]
struct VarInfo {
    name: String,
    shape: Shape,
    offset: usize,
}

#[derive(Debug, Clone)]
struct Term {
    row: usize,
    col: usize,
    left: DMatrix<f64>,
    var: Var,
    right: DMatrix<f64>,
}

/// One symmetric block, assembled from constant pieces and `L V R` terms.
/// A piece placed off the diagonal at `(r, c)` is mirrored to `(c, r)`.
#[derive(Debug, Clone)]
pub struct BlockBuilder {
    size: usize,
    constant: DMatrix<f64>,
    terms: Vec<Term>,
}

impl BlockBuilder {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            constant: DMatrix::zeros(size, size),
            terms: Vec::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn constant(mut self, row: usize, col: usize, m: &DMatrix<f64>) -> Self {
        assert!(row + m.nrows() <= self.size && col + m.ncols() <= self.size, "constant outside block");
        let mut view = self.constant.view_mut((row, col), m.shape());
        view += m;
        if row != col {
            let mut view = self.constant.view_mut((col, row), (m.ncols(), m.nrows()));
            view += m.transpose();
        }
        self
    }

    pub fn scaled_identity(self, row: usize, n: usize, value: f64) -> Self {
        self.constant(row, row, &(DMatrix::identity(n, n) * value))
    }

    /// Adds `left · V · right` at `(row, col)`.
    pub fn term(mut self, row: usize, col: usize, left: &DMatrix<f64>, var: Var, right: &DMatrix<f64>) -> Self {
        assert!(
            row + left.nrows() <= self.size && col + right.ncols() <= self.size,
            "term outside block"
        );
        self.terms.push(Term {
            row,
            col,
            left: left.clone(),
            var,
            right: right.clone(),
        });
        self
    }

    /// Adds `scale · V` at `(row, col)`.
    pub fn var(self, row: usize, col: usize, var: Var, rows: usize, cols: usize, scale: f64) -> Self {
        let l = DMatrix::identity(rows, rows) * scale;
        let r = DMatrix::identity(cols, cols);
        self.term(row, col, &l, var, &r)
    }
}

/// Sparse lower-triangle coefficient of one unknown inside one block.
#[derive(Debug, Clone)]
struct Coef {
    unknown: usize,
    entries: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone)]
struct CompiledBlock {
    size: usize,
    constant: DMatrix<f64>,
    coefs: Vec<Coef>,
}

impl CompiledBlock {
    fn eval(&self, y: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for c in &self.coefs {
            let v = y[c.unknown];
            if v == 0.0 {
                continue;
            }
            for &(p, q, a) in &c.entries {
                m[(p, q)] += v * a;
                if p != q {
                    m[(q, p)] += v * a;
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Feasible,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LmiSolution {
    pub status: Status,
    /// Smallest eigenvalue over all blocks at the returned point.
    pub margin: f64,
    pub objective: f64,
    pub iterations: usize,
    values: Vec<DMatrix<f64>>,
}

impl LmiSolution {
    pub fn is_feasible(&self) -> bool {
        self.status == Status::Feasible
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.values[v.0][(0, 0)]
    }
}

#[derive(Debug, Clone)]
pub struct SolverSettings {
    pub margin: f64,
    pub unknown_cap: usize,
    pub box_radius: f64,
    /// Relative duality-gap target of phase two.
    pub gap_tol: f64,
    pub max_newton: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            unknown_cap: DEFAULT_UNKNOWN_CAP,
            box_radius: 1e6,
            gap_tol: 1e-9,
            max_newton: 4000,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LmiProblem {
    vars: Vec<VarInfo>,
    blocks: Vec<BlockBuilder>,
    objective: BTreeMap<usize, f64>,
    logdet: Option<(Var, f64)>,
    settings: SolverSettings,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_settings(settings: SolverSettings) -> Self {
        Self {
            settings,
            ..Self::default()
        }
    }

    pub fn settings_mut(&mut self) -> &mut SolverSettings {
        &mut self.settings
    }

    fn declare(&mut self, name: &str, shape: Shape) -> Var {
        let offset = self.num_unknowns();
        self.vars.push(VarInfo {
            name: name.to_string(),
            shape,
            offset,
        });
        Var(self.vars.len() - 1)
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> Var {
        self.declare(name, Shape::Symmetric(n))
    }

    pub fn rectangular(&mut self, name: &str, rows: usize, cols: usize) -> Var {
        self.declare(name, Shape::Rectangular(rows, cols))
    }

    pub fn scalar(&mut self, name: &str) -> Var {
        self.declare(name, Shape::Scalar)
    }

    pub fn var_name(&self, v: Var) -> &str {
        &self.vars[v.0].name
    }

    pub fn num_unknowns(&self) -> usize {
        self.vars.iter().map(|v| v.shape.unknowns()).sum()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn add_block(&mut self, block: BlockBuilder) {
        self.blocks.push(block);
    }

    /// Adds `Σ_ij weight_ij V_ij` to the (minimized) objective.
    pub fn minimize(&mut self, var: Var, weight: &DMatrix<f64>) {
        let info = self.vars[var.0].clone();
        assert_eq!(weight.shape(), info.shape.dims(), "objective weight shape");
        for (k, (a, b)) in unknown_positions(info.shape).into_iter().enumerate() {
            let mut c = weight[(a, b)];
            if a != b && matches!(info.shape, Shape::Symmetric(_)) {
                c += weight[(b, a)];
            }
            *self.objective.entry(info.offset + k).or_insert(0.0) += c;
        }
    }

    pub fn minimize_scalar(&mut self, var: Var, weight: f64) {
        self.minimize(var, &DMatrix::from_element(1, 1, weight));
    }

    pub fn minimize_trace(&mut self, var: Var) {
        let (n, _) = self.vars[var.0].shape.dims();
        self.minimize(var, &DMatrix::identity(n, n));
    }

    /// Subtracts `weight · log det V` from the objective (symmetric `V` only).
    pub fn maximize_logdet(&mut self, var: Var, weight: f64) {
        assert!(matches!(self.vars[var.0].shape, Shape::Symmetric(_)), "log det needs a symmetric variable");
        self.logdet = Some((var, weight));
    }

    fn compile(&self) -> Result<Vec<CompiledBlock>> {
        let unknowns = self.num_unknowns();
        if unknowns > self.settings.unknown_cap {
            return Err(Error::TooManyUnknowns {
                unknowns,
                cap: self.settings.unknown_cap,
            });
        }
        let mut out = Vec::with_capacity(self.blocks.len());
        for (bi, block) in self.blocks.iter().enumerate() {
            let s = block.size;
            let mut dense: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
            for t in &block.terms {
                let info = &self.vars[t.var.0];
                let (vr, vc) = info.shape.dims();
                if t.left.ncols() != vr || t.right.nrows() != vc {
                    return Err(Error::dims("LMI term", vr, t.left.ncols()));
                }
                let positions = unknown_positions(info.shape);
                for (k, (a, b)) in positions.into_iter().enumerate() {
                    let mut piece = t.left.column(a) * t.right.row(b);
                    if a != b && matches!(info.shape, Shape::Symmetric(_)) {
                        piece += t.left.column(b) * t.right.row(a);
                    }
                    if piece.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    let m = dense
                        .entry(info.offset + k)
                        .or_insert_with(|| DMatrix::zeros(s, s));
                    let mut view = m.view_mut((t.row, t.col), piece.shape());
                    view += &piece;
                    if t.row != t.col {
                        let mut view = m.view_mut((t.col, t.row), (piece.ncols(), piece.nrows()));
                        view += piece.transpose();
                    }
                }
            }
            let asym = (&block.constant - block.constant.transpose()).abs().max();
            if asym > 1e-12 * block.constant.abs().max().max(1.0) {
                return Err(Error::NonSymmetricBlock { block: bi, asymmetry: asym });
            }
            let mut coefs = Vec::with_capacity(dense.len());
            for (unknown, m) in dense {
                let asym = (&m - m.transpose()).abs().max();
                if asym > 1e-12 * m.abs().max().max(1.0) {
                    return Err(Error::NonSymmetricBlock { block: bi, asymmetry: asym });
                }
                let mut entries = Vec::new();
                for p in 0..s {
                    for q in 0..=p {
                        let v = 0.5 * (m[(p, q)] + m[(q, p)]);
                        if v != 0.0 {
                            entries.push((p, q, v));
                        }
                    }
                }
                if !entries.is_empty() {
                    coefs.push(Coef { unknown, entries });
                }
            }
            out.push(CompiledBlock {
                size: s,
                constant: crate::linalg::symmetrize(&block.constant),
                coefs,
            });
        }
        Ok(out)
    }

    /// Finds a point with every block `⪰ ε I`, ignoring any objective.
    pub fn solve_feasibility(&self) -> Result<LmiSolution> {
        let blocks = self.compile()?;
        let n = self.num_unknowns();
        let mut engine = Engine::new(&blocks, n, &self.settings);
        let (y, status) = engine.phase_one(true)?;
        Ok(self.package(&blocks, y, status, engine.iterations, 0.0))
    }

    /// Minimizes the objective over `{y : F_b(y) ⪰ ε I}`.
    pub fn minimize_linear(&self) -> Result<LmiSolution> {
        let blocks = self.compile()?;
        let n = self.num_unknowns();
        let mut engine = Engine::new(&blocks, n, &self.settings);
        let (y, status) = engine.phase_one(false)?;
        if status != Status::Feasible {
            return Ok(self.package(&blocks, y, status, engine.iterations, 0.0));
        }
        let mut c = DVector::zeros(n);
        for (&k, &v) in &self.objective {
            c[k] = v;
        }
        let logdet = self.logdet.map(|(v, w)| {
            let info = &self.vars[v.0];
            let (dim, _) = info.shape.dims();
            let mut entries = Vec::new();
            for (k, (a, b)) in unknown_positions(info.shape).into_iter().enumerate() {
                entries.push((info.offset + k, a.max(b), a.min(b)));
            }
            (dim, entries, w)
        });
        let (y, status) = engine.phase_two(y, &c, logdet.as_ref())?;
        let obj = c.dot(&y);
        Ok(self.package(&blocks, y, status, engine.iterations, obj))
    }

    fn package(&self, blocks: &[CompiledBlock], y: DVector<f64>, status: Status, iterations: usize, objective: f64) -> LmiSolution {
        let margin = blocks
            .iter()
            .map(|b| crate::linalg::min_eig_sym(&b.eval(y.as_slice())))
            .fold(f64::INFINITY, f64::min);
        let mut values = Vec::with_capacity(self.vars.len());
        for info in &self.vars {
            let (r, c) = info.shape.dims();
            let mut m = DMatrix::zeros(r, c);
            for (k, (a, b)) in unknown_positions(info.shape).into_iter().enumerate() {
                m[(a, b)] = y[info.offset + k];
                if matches!(info.shape, Shape::Symmetric(_)) {
                    m[(b, a)] = y[info.offset + k];
                }
            }
            values.push(m);
        }
        LmiSolution {
            status,
            margin,
            objective,
            iterations,
            values,
        }
    }
}

/// Element positions of the scalar unknowns of a shape, in storage order.
fn unknown_positions(shape: Shape) -> Vec<(usize, usize)> {
    match shape {
        Shape::Symmetric(n) => {
            let mut v = Vec::with_capacity(n * (n + 1) / 2);
            for a in 0..n {
                for b in a..n {
                    v.push((a, b));
                }
            }
            v
        }
        Shape::Rectangular(r, c) => {
            let mut v = Vec::with_capacity(r * c);
            for a in 0..r {
                for b in 0..c {
                    v.push((a, b));
                }
            }
            v
        }
        Shape::Scalar => vec![(0, 0)],
    }
}

type LogdetSpec = (usize, Vec<(usize, usize, usize)>, f64);

struct Engine<'a> {
    blocks: &'a [CompiledBlock],
    n: usize,
    settings: &'a SolverSettings,
    iterations: usize,
}

/// Barrier value, gradient and Hessian at one point.
struct Local {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl<'a> Engine<'a> {
    fn new(blocks: &'a [CompiledBlock], n: usize, settings: &'a SolverSettings) -> Self {
        Self {
            blocks,
            n,
            settings,
            iterations: 0,
        }
    }

    fn barrier_order(&self) -> f64 {
        self.blocks.iter().map(|b| b.size as f64).sum::<f64>()
    }

    /// Barrier of `F_b(y) - shift·I` (and optionally `- t I`, where `t` is the
    /// extra last coordinate). Returns `None` outside the domain.
    fn local(&self, z: &[f64], shift: f64, with_t: bool, need_hess: bool) -> Option<Local> {
        let dim = if with_t { self.n + 1 } else { self.n };
        let t = if with_t { z[self.n] } else { 0.0 };
        let mut value = 0.0;
        let mut grad = DVector::zeros(dim);
        let mut hess = if need_hess { DMatrix::zeros(dim, dim) } else { DMatrix::zeros(0, 0) };
        for b in self.blocks {
            let s = b.size;
            let mut f = b.eval(&z[..self.n]);
            for i in 0..s {
                f[(i, i)] -= shift + t;
            }
            let chol = Cholesky::new(f)?;
            let l = chol.l_dirty();
            let mut logdet = 0.0;
            for i in 0..s {
                logdet += l[(i, i)].ln();
            }
            value -= 2.0 * logdet;
            let zinv = chol.inverse();
            for c in &b.coefs {
                grad[c.unknown] -= trace_with(&zinv, &c.entries);
            }
            if with_t {
                grad[self.n] += zinv.trace();
            }
            if !need_hess {
                continue;
            }
            // M_j = Z A_j Z, H_jk = tr(M_j A_k)
            let mut mats: Vec<DMatrix<f64>> = Vec::with_capacity(b.coefs.len());
            for c in &b.coefs {
                let mut m = DMatrix::zeros(s, s);
                for &(p, q, a) in &c.entries {
                    add_outer(&mut m, &zinv, p, q, a);
                    if p != q {
                        add_outer(&mut m, &zinv, q, p, a);
                    }
                }
                mats.push(m);
            }
            for (i, ci) in b.coefs.iter().enumerate() {
                for cj in b.coefs[i..].iter() {
                    let h = trace_with(&mats[i], &cj.entries);
                    hess[(ci.unknown, cj.unknown)] += h;
                    if ci.unknown != cj.unknown {
                        hess[(cj.unknown, ci.unknown)] += h;
                    }
                }
                if with_t {
                    // A_t = -I
                    let h = -mats[i].trace();
                    hess[(ci.unknown, self.n)] += h;
                    hess[(self.n, ci.unknown)] += h;
                }
            }
            if with_t {
                hess[(self.n, self.n)] += (&zinv * &zinv).trace();
            }
        }
        let r2 = self.settings.box_radius * self.settings.box_radius;
        for j in 0..dim {
            let gap = r2 - z[j] * z[j];
            if gap <= 0.0 {
                return None;
            }
            value -= gap.ln();
            grad[j] += 2.0 * z[j] / gap;
            if need_hess {
                hess[(j, j)] += 2.0 / gap + 4.0 * z[j] * z[j] / (gap * gap);
            }
        }
        Some(Local { value, grad, hess })
    }

    fn logdet_term(spec: &LogdetSpec, y: &[f64], need_hess: bool, dim: usize) -> Option<Local> {
        let (n, entries, weight) = spec;
        let mut s = DMatrix::zeros(*n, *n);
        for &(k, p, q) in entries {
            s[(p, q)] = y[k];
            s[(q, p)] = y[k];
        }
        let chol = Cholesky::new(s)?;
        let l = chol.l_dirty();
        let mut logdet = 0.0;
        for i in 0..*n {
            logdet += 2.0 * l[(i, i)].ln();
        }
        let zinv = chol.inverse();
        let mut grad = DVector::zeros(dim);
        let mut hess = if need_hess { DMatrix::zeros(dim, dim) } else { DMatrix::zeros(0, 0) };
        for &(k, p, q) in entries {
            let g = if p == q { zinv[(p, q)] } else { 2.0 * zinv[(p, q)] };
            grad[k] = -weight * g;
        }
        if need_hess {
            for &(k, p, q) in entries {
                let mut m = DMatrix::zeros(*n, *n);
                add_outer(&mut m, &zinv, p, q, 1.0);
                if p != q {
                    add_outer(&mut m, &zinv, q, p, 1.0);
                }
                for &(k2, p2, q2) in entries {
                    let h = if p2 == q2 { m[(p2, q2)] } else { m[(p2, q2)] + m[(q2, p2)] };
                    hess[(k, k2)] += weight * h;
                }
            }
        }
        Some(Local {
            value: -weight * logdet,
            grad,
            hess,
        })
    }

    /// Maximizes `t` subject to `F_b(y) ⪰ t I`. Stops as soon as `t` clears
    /// the margin comfortably, or once the duality bound proves `t* < ε`.
    fn phase_one(&mut self, center: bool) -> Result<(DVector<f64>, Status)> {
        let eps = self.settings.margin;
        let n = self.n;
        let mut z = vec![0.0; n + 1];
        let start = self
            .blocks
            .iter()
            .map(|b| crate::linalg::min_eig_sym(&b.eval(&z[..n])))
            .fold(f64::INFINITY, f64::min);
        if !start.is_finite() {
            // no blocks at all
            return Ok((DVector::zeros(n), Status::Feasible));
        }
        z[n] = start - 1.0;
        let target = eps + 1e-4_f64.max(eps);
        let nu = self.barrier_order() + 2.0 * (n + 1) as f64;
        let mut tau = 1.0;
        for _outer in 0..60 {
            // minimize -τ t + barrier
            let res = self.center(&mut z, tau, |z| z[n] >= target && !center)?;
            let t = z[n];
            if t >= target && !center {
                return Ok((DVector::from_column_slice(&z[..n]), Status::Feasible));
            }
            if !res {
                return Ok((DVector::from_column_slice(&z[..n]), Status::MaxIterations));
            }
            let bound = nu / tau;
            if t + bound < eps {
                return Ok((DVector::from_column_slice(&z[..n]), Status::Infeasible));
            }
            if center && t >= target && bound < 1e-3 * t.abs().max(1.0) {
                return Ok((DVector::from_column_slice(&z[..n]), Status::Feasible));
            }
            if bound < 1e-10 * t.abs().max(1.0) {
                let status = if t > eps + 1e-9 { Status::Feasible } else { Status::Infeasible };
                return Ok((DVector::from_column_slice(&z[..n]), status));
            }
            tau *= 10.0;
        }
        let status = if z[n] > eps + 1e-9 { Status::Feasible } else { Status::MaxIterations };
        Ok((DVector::from_column_slice(&z[..n]), status))
    }

    fn phase_two(&mut self, y0: DVector<f64>, c: &DVector<f64>, logdet: Option<&LogdetSpec>) -> Result<(DVector<f64>, Status)> {
        let eps = self.settings.margin;
        let mut z: Vec<f64> = y0.as_slice().to_vec();
        if let Some(spec) = logdet {
            if Self::logdet_term(spec, &z, false, self.n).is_none() {
                return Err(Error::Numerical("log det variable is not positive definite at the start".into()));
            }
        }
        let nu = self.barrier_order() + 2.0 * self.n as f64 + logdet.map_or(0.0, |s| s.0 as f64);
        let scale = c.amax().max(1.0);
        let mut tau = 1.0 / scale;
        for _outer in 0..60 {
            let ok = self.center_linear(&mut z, eps, tau, c, logdet)?;
            if !ok {
                return Ok((DVector::from_vec(z), Status::MaxIterations));
            }
            let obj = c.dot(&DVector::from_column_slice(&z)).abs();
            if nu / tau <= self.settings.gap_tol * obj.max(1.0) {
                return Ok((DVector::from_vec(z), Status::Feasible));
            }
            tau *= 10.0;
        }
        Ok((DVector::from_vec(z), Status::Feasible))
    }

    fn center_linear(&mut self, z: &mut Vec<f64>, shift: f64, tau: f64, c: &DVector<f64>, logdet: Option<&LogdetSpec>) -> Result<bool> {
        let n = self.n;
        let eval = |eng: &Engine, z: &[f64], need_hess: bool| -> Option<Local> {
            let mut loc = eng.local(z, shift, false, need_hess)?;
            let mut lin = 0.0;
            for j in 0..n {
                lin += c[j] * z[j];
                loc.grad[j] += tau * c[j];
            }
            loc.value += tau * lin;
            if let Some(spec) = logdet {
                let ld = Self::logdet_term(spec, z, need_hess, n)?;
                loc.value += tau * ld.value;
                loc.grad += ld.grad * tau;
                if need_hess {
                    loc.hess += ld.hess * tau;
                }
            }
            Some(loc)
        };
        self.newton(z, &eval, |_| false)
    }

    fn center(&mut self, z: &mut Vec<f64>, tau: f64, stop: impl Fn(&[f64]) -> bool) -> Result<bool> {
        let n = self.n;
        let eval = |eng: &Engine, z: &[f64], need_hess: bool| -> Option<Local> {
            let mut loc = eng.local(z, 0.0, true, need_hess)?;
            loc.value -= tau * z[n];
            loc.grad[n] -= tau;
            Some(loc)
        };
        self.newton(z, &eval, stop)
    }

    /// Damped Newton on a self-concordant function. Returns `false` when the
    /// global iteration budget runs out.
    fn newton<F>(&mut self, z: &mut Vec<f64>, eval: &F, stop: impl Fn(&[f64]) -> bool) -> Result<bool>
    where
        F: Fn(&Engine, &[f64], bool) -> Option<Local>,
    {
        for _ in 0..200 {
            if self.iterations >= self.settings.max_newton {
                return Ok(false);
            }
            self.iterations += 1;
            let loc = eval(self, z, true).ok_or_else(|| Error::Numerical("barrier iterate left the domain".into()))?;
            let dim = loc.grad.len();
            let mut hess = loc.hess;
            let scale = (0..dim).map(|i| hess[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
            let mut reg = 0.0;
            let step = loop {
                let mut h = hess.clone();
                for i in 0..dim {
                    h[(i, i)] += reg;
                }
                if let Some(ch) = Cholesky::new(h) {
                    break -ch.solve(&loc.grad);
                }
                reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
                if reg > scale {
                    return Err(Error::Numerical("singular barrier Hessian".into()));
                }
            };
            hess.fill(0.0);
            let decrement = -loc.grad.dot(&step);
            if decrement / 2.0 <= 1e-10 {
                return Ok(true);
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..80 {
                let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
                if let Some(tl) = eval(self, &trial, false) {
                    if tl.value <= loc.value - 0.25 * alpha * decrement {
                        *z = trial;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // round-off floor reached
                return Ok(true);
            }
            if stop(z) {
                return Ok(true);
            }
        }
        Ok(true)
    }
}

/// `tr(Z A)` for a symmetric `A` given by its lower-triangle entries.
fn trace_with(z: &DMatrix<f64>, entries: &[(usize, usize, f64)]) -> f64 {
    let mut s = 0.0;
    for &(p, q, a) in entries {
        if p == q {
            s += a * z[(p, p)];
        } else {
            s += a * (z[(p, q)] + z[(q, p)]);
        }
    }
    s
}

/// `m += a · Z[:, p] Z[q, :]`.
fn add_outer(m: &mut DMatrix<f64>, z: &DMatrix<f64>, p: usize, q: usize, a: f64) {
    let s = z.nrows();
    for col in 0..s {
        let zq = a * z[(q, col)];
        if zq == 0.0 {
            continue;
        }
        for row in 0..s {
            m[(row, col)] += z[(row, p)] * zq;
        }
    }
}

/// Smallest eigenvalue of every block at the given variable values.
pub fn audit(problem: &LmiProblem, sol: &LmiSolution) -> Result<Vec<f64>> {
    let blocks = problem.compile()?;
    let mut y = vec![0.0; problem.num_unknowns()];
    for (i, info) in problem.vars.iter().enumerate() {
        for (k, (a, b)) in unknown_positions(info.shape).into_iter().enumerate() {
            y[info.offset + k] = sol.values[i][(a, b)];
        }
    }
    Ok(blocks
        .iter()
        .map(|b| crate::linalg::min_eig_sym(&b.eval(&y)))
        .collect())
}
