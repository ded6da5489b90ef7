//! Offline design: the disturbance-rejection gain `K` from an LMI sweep, the
//! terminal ingredients `(K_t, P, Ω)`, the Riccati solver and the audit of
//! the standing assumptions.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{DesignBundle, SystemModel};
use crate::error::{Error, Result};
use crate::invset::{self, LpValue};
use crate::linalg::{
    inverse, max_eig_sym, min_eig_sym, solve_stein, spectral_radius, sym_inv_sqrt, sym_sqrt, symmetrize,
};
use crate::lmisolve::{BlockBuilder, LmiProblem, SolverSettings, Var};
use crate::setcalc::DEFAULT_VERTEX_CAP;
use crate::{ConstraintPolytope, Zonotope};

/// Tolerance used when a computed set must still contain the origin.
pub const NONEMPTY_TOL: f64 = 1e-9;

pub fn default_lambda_grid() -> Vec<f64> {
    (0..100).map(|i| i as f64 * 0.01).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSearchConfig {
    pub rho: f64,
    pub mu: f64,
    pub lambda_grid: Vec<f64>,
    /// Factors applied to `rho` (with `mu = 1`) when the first attempt fails.
    pub rho_factors: Vec<f64>,
    /// Contraction factors tried (with the configured `rho`) afterwards.
    pub mu_values: Vec<f64>,
    pub margin: f64,
    pub vertex_cap: usize,
}

impl Default for KSearchConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            mu: 1.0,
            lambda_grid: default_lambda_grid(),
            rho_factors: vec![1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1],
            mu_values: vec![0.99, 0.95, 0.9, 0.8, 0.7, 0.6, 0.5],
            margin: crate::lmisolve::DEFAULT_MARGIN,
            vertex_cap: DEFAULT_VERTEX_CAP,
        }
    }
}

impl KSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidInput(format!("rho = {} must lie in (0, 1]", self.rho)));
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::InvalidInput(format!("mu = {} must lie in (0, 1]", self.mu)));
        }
        validate_grid(&self.lambda_grid)
    }

    /// `(rho, mu)` pairs in the order they are attempted.
    pub fn schedule(&self) -> Vec<(f64, f64)> {
        let mut out = vec![(self.rho, self.mu)];
        for f in &self.rho_factors {
            out.push((self.rho * f, 1.0));
        }
        for &mu in &self.mu_values {
            if mu < 1.0 {
                out.push((self.rho, mu));
            }
        }
        let mut seen: Vec<(f64, f64)> = Vec::new();
        out.retain(|p| {
            if seen.contains(p) {
                false
            } else {
                seen.push(*p);
                true
            }
        });
        out
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("lambda grid is empty".into()));
    }
    if grid.iter().any(|&l| !(0.0..1.0).contains(&l)) {
        return Err(Error::InvalidInput("lambda values must lie in [0, 1)".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("lambda grid must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KResult {
    pub k: DMatrix<f64>,
    pub p_tilde: DMatrix<f64>,
    pub gamma: f64,
    pub lambda: f64,
    pub rho: f64,
    pub mu: f64,
}

/// Handles of the unknowns of the gain problem.
#[derive(Debug, Clone, Copy)]
pub struct KVars {
    pub s: Var,
    pub y: Var,
    pub gamma: Var,
}

/// One representative of each `±v` pair; the blocks for `v` and `-v` are
/// congruent, so the other half adds nothing.
pub fn half_vertices(z: &Zonotope, cap: usize) -> Result<(Vec<DVector<f64>>, bool)> {
    let (zz, boxed) = if z.num_generators() > cap {
        (z.interval_hull(), true)
    } else {
        (z.clone(), false)
    };
    let all = zz.vertices(cap)?;
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for v in all {
        if kept.iter().any(|k| (k + &v).amax() <= 1e-14 * (1.0 + v.amax())) {
            continue;
        }
        kept.push(v);
    }
    Ok((kept, boxed))
}

/// Builds the gain LMIs for one `(λ, ρ, μ)`, minimizing `γ`. `gamma_cap`
/// replaces the upper bound `γ <= 1`.
#[allow(clippy::too_many_arguments)]
pub fn k_problem(
    model: &SystemModel,
    x: &ConstraintPolytope,
    u: &ConstraintPolytope,
    vertices: &[DVector<f64>],
    lambda: f64,
    rho: f64,
    mu: f64,
    gamma_cap: f64,
    margin: f64,
) -> (LmiProblem, KVars) {
    let n = model.n();
    let m = model.m();
    let a = model.a();
    let b = model.b();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut p = LmiProblem::with_settings(SolverSettings {
        margin,
        ..SolverSettings::default()
    });
    let s = p.symmetric("S", n);
    let y = p.rectangular("Y", m, n);
    let gamma = p.scalar("gamma");

    for w in vertices {
        let wcol = DMatrix::from_column_slice(n, 1, w.as_slice());
        p.add_block(
            BlockBuilder::new(2 * n + 1)
                .var(0, 0, s, n, n, lambda)
                .scaled_identity(n, 1, 1.0 - lambda)
                .constant(n + 1, n, &wcol)
                .var(n + 1, n + 1, s, n, n, 1.0)
                .term(n + 1, 0, a, s, &eye)
                .term(n + 1, 0, b, y, &eye),
        );
    }
    for j in 0..x.num_rows() {
        let row = x.normals().rows(j, 1).into_owned();
        let bj = x.offsets()[j];
        p.add_block(
            BlockBuilder::new(1)
                .var(0, 0, gamma, 1, 1, bj * bj)
                .term(0, 0, &(-&row), s, &row.transpose()),
        );
    }
    for j in 0..u.num_rows() {
        let row = u.normals().rows(j, 1).into_owned();
        let bj = rho * u.offsets()[j];
        p.add_block(
            BlockBuilder::new(n + 1)
                .scaled_identity(0, 1, bj * bj)
                .term(0, 1, &row, y, &eye)
                .var(1, 1, s, n, n, 1.0),
        );
    }
    p.add_block(
        BlockBuilder::new(2 * n)
            .var(0, 0, s, n, n, mu)
            .var(n, n, s, n, n, 1.0)
            .term(n, 0, a, s, &eye)
            .term(n, 0, b, y, &eye),
    );
    p.add_block(BlockBuilder::new(1).scaled_identity(0, 1, gamma_cap).var(0, 0, gamma, 1, 1, -1.0));
    p.minimize_scalar(gamma, 1.0);
    (p, KVars { s, y, gamma })
}

fn solve_k_at(
    model: &SystemModel,
    x: &ConstraintPolytope,
    u: &ConstraintPolytope,
    vertices: &[DVector<f64>],
    lambda: f64,
    rho: f64,
    mu: f64,
    margin: f64,
) -> Result<Option<KResult>> {
    let (p, vars) = k_problem(model, x, u, vertices, lambda, rho, mu, 1.0, margin);
    let sol = p.minimize_linear()?;
    if !sol.is_feasible() {
        return Ok(None);
    }
    let s = symmetrize(sol.value(vars.s));
    let p_tilde = match inverse(&s) {
        Ok(p) => symmetrize(&p),
        Err(_) => return Ok(None),
    };
    let k = sol.value(vars.y) * &p_tilde;
    if spectral_radius(&model.closed_loop(&k)) >= 1.0 {
        return Ok(None);
    }
    Ok(Some(KResult {
        k,
        p_tilde,
        gamma: sol.scalar(vars.gamma),
        lambda,
        rho,
        mu,
    }))
}

/// Smallest feasible `λ` on the grid (grid order), solved in parallel chunks.
fn sweep_lambda<F>(grid: &[f64], solve: F) -> Result<Option<KResult>>
where
    F: Fn(f64) -> Result<Option<KResult>> + Sync,
{
    let chunk = rayon::current_num_threads().max(1);
    for part in grid.chunks(chunk) {
        let results: Vec<Result<Option<KResult>>> = part.par_iter().map(|&l| solve(l)).collect();
        for r in results {
            if let Some(found) = r? {
                return Ok(Some(found));
            }
        }
    }
    Ok(None)
}

/// Designs `K` and `P̃`: minimizes `γ` at the smallest feasible `λ`, walking
/// the `(ρ, μ)` relaxation schedule on failure.
pub fn synth_k(model: &SystemModel, x: &ConstraintPolytope, u: &ConstraintPolytope, cfg: &KSearchConfig) -> Result<KResult> {
    cfg.validate()?;
    let x = x.normalize()?;
    let u = u.normalize()?;
    let (vertices, _) = half_vertices(model.w(), cfg.vertex_cap)?;
    for (rho, mu) in cfg.schedule() {
        let found = sweep_lambda(&cfg.lambda_grid, |lambda| {
            solve_k_at(model, &x, &u, &vertices, lambda, rho, mu, cfg.margin)
        })?;
        if let Some(r) = found {
            return Ok(r);
        }
    }
    Err(Error::NoAdmissibleGain)
}

/// Discrete-time LQR: solves `P = A'PA - A'PB (R + B'PB)^{-1} B'PA + Q` and
/// returns `(K_t, P)` with `K_t = -(R + B'PB)^{-1} B'PA`.
pub fn solve_dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::dims("Riccati data", n, b.nrows()));
    }
    if min_eig_sym(r) <= 0.0 {
        return Err(Error::InvalidInput("R must be positive definite".into()));
    }
    if min_eig_sym(q) < -1e-12 * q.amax().max(1.0) {
        return Err(Error::InvalidInput("Q must be positive semidefinite".into()));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let mut ak = a.clone();
    let mut gk = symmetrize(&(b * inverse(r)? * b.transpose()));
    let mut hk = symmetrize(q);
    let mut converged = false;
    for _ in 0..100 {
        let w = &eye + &gk * &hk;
        let lu = w.lu();
        let wa = lu.solve(&ak).ok_or_else(|| Error::NotStabilizable("singular doubling step".into()))?;
        let wg = lu.solve(&gk).ok_or_else(|| Error::NotStabilizable("singular doubling step".into()))?;
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &wa));
        let g_next = symmetrize(&(&gk + &ak * wg * ak.transpose()));
        let a_next = &ak * wa;
        if !h_next.iter().all(|v| v.is_finite()) {
            return Err(Error::NotStabilizable("Riccati iteration diverged".into()));
        }
        let change = (&h_next - &hk).amax();
        hk = h_next;
        gk = g_next;
        ak = a_next;
        if change <= 1e-15 * hk.amax().max(1e-300) || ak.amax() < 1e-300 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotStabilizable("Riccati iteration did not settle".into()));
    }
    let mut p = hk;
    let gain = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let s = r + b.transpose() * p * b;
        let rhs = b.transpose() * p * a;
        s.cholesky()
            .map(|c| -c.solve(&rhs))
            .ok_or_else(|| Error::Numerical("R + B'PB is not positive definite".into()))
    };
    for _ in 0..20 {
        let k = gain(&p)?;
        let res = dare_residual(a, b, q, r, &p);
        if res.amax() <= 1e-13 * p.amax().max(1.0) {
            break;
        }
        let at = a + b * &k;
        if spectral_radius(&at) >= 1.0 {
            return Err(Error::NotStabilizable("closed loop is not stable".into()));
        }
        let next = solve_stein(&at, &(q + k.transpose() * r * &k))?;
        if dare_residual(a, b, q, r, &next).amax() >= res.amax() {
            break;
        }
        p = next;
    }
    let k = gain(&p)?;
    if spectral_radius(&(a + b * &k)) >= 1.0 {
        return Err(Error::NotStabilizable("closed loop is not stable".into()));
    }
    let res = dare_residual(a, b, q, r, &p).amax();
    if res > 1e-9 * p.amax().max(1.0) {
        return Err(Error::NoConvergence("Riccati refinement", 20));
    }
    Ok((k, p))
}

/// `A'PA - A'PB (R + B'PB)^{-1} B'PA + Q - P`.
pub fn dare_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let s = r + b.transpose() * p * b;
    let bpa = b.transpose() * p * a;
    let corr = match s.clone().cholesky() {
        Some(c) => bpa.transpose() * c.solve(&bpa),
        None => bpa.transpose() * s.lu().solve(&bpa).unwrap_or_else(|| DMatrix::zeros(b.ncols(), a.ncols())),
    };
    a.transpose() * p * a - corr + q - p
}

/// `P - A_t'PA_t - Q - K_t'RK_t` for `A_t = A + B K_t`.
pub fn lyapunov_gap(model: &SystemModel, q: &DMatrix<f64>, r: &DMatrix<f64>, k_t: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let at = model.closed_loop(k_t);
    symmetrize(&(p - at.transpose() * p * &at - q - k_t.transpose() * r * k_t))
}

/// Terminal constraint description.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalSet {
    /// `x̄(N) = 0`; valid when `L(N)` is negligible.
    Equality,
    /// `Ω = {x : x'Px <= 1}`; the constraint is `||x̄(N)||_P <= 1 - shrink`.
    Ellipsoid { shape: DMatrix<f64>, shrink: f64 },
    /// Polyhedral `Ω` and its erosion `Ω ⊖ L(N)`.
    Polyhedron {
        omega: ConstraintPolytope,
        tightened: ConstraintPolytope,
    },
}

impl TerminalSet {
    pub fn kind(&self) -> &'static str {
        match self {
            TerminalSet::Equality => "equality",
            TerminalSet::Ellipsoid { .. } => "ellipsoid",
            TerminalSet::Polyhedron { .. } => "polyhedron",
        }
    }

    /// Membership in `Ω` (not the eroded set).
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        match self {
            TerminalSet::Equality => x.amax() <= tol,
            TerminalSet::Ellipsoid { shape, .. } => (x.transpose() * shape * x)[(0, 0)] <= 1.0 + tol,
            TerminalSet::Polyhedron { omega, .. } => omega.contains(x, tol),
        }
    }

    /// Membership in the constraint actually imposed on `x̄(N)`.
    pub fn contains_tightened(&self, x: &DVector<f64>, tol: f64) -> bool {
        match self {
            TerminalSet::Equality => x.amax() <= tol,
            TerminalSet::Ellipsoid { shape, shrink } => {
                (x.transpose() * shape * x)[(0, 0)].max(0.0).sqrt() <= 1.0 - shrink + tol
            }
            TerminalSet::Polyhedron { tightened, .. } => tightened.contains(x, tol),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalConfig {
    pub lambda_grid: Vec<f64>,
    /// Maximize `log det S̃` instead of accepting any strictly feasible point.
    pub enlarge: bool,
    /// Take `(K_t, P)` from the Riccati equation and only scale the level set.
    pub riccati: bool,
    pub margin: f64,
    pub vertex_cap: usize,
}

impl Default for TerminalConfig {
    fn default() -> Self {
        Self {
            lambda_grid: default_lambda_grid(),
            enlarge: false,
            riccati: false,
            margin: crate::lmisolve::DEFAULT_MARGIN,
            vertex_cap: DEFAULT_VERTEX_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalResult {
    pub k_t: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub set: TerminalSet,
    pub lambda: Option<f64>,
    /// `L(N)` had too many generators and was replaced by its interval hull.
    pub boxed_l: bool,
}

/// `Σ_j ||P^{1/2} g_j||`: `{||x||_P <= 1 - r}` lies inside `E(P) ⊖ L(N)`.
pub fn shrink_radius_for_ellipsoid(p: &DMatrix<f64>, l_n: &Zonotope) -> Result<f64> {
    let half = sym_sqrt(p);
    let g = l_n.generators();
    let r: f64 = (0..g.ncols()).map(|j| (&half * g.column(j)).norm()).sum();
    if r >= 1.0 {
        return Err(Error::TerminalSetVanishes { radius: r });
    }
    Ok(r)
}

/// `max_{x'Px <= 1} ||A_t x||_P`.
pub fn ellipsoid_contraction(p: &DMatrix<f64>, a_t: &DMatrix<f64>) -> Result<f64> {
    let pi = sym_inv_sqrt(p)?;
    let m = &pi * a_t.transpose() * p * a_t * &pi;
    Ok(max_eig_sym(&m).max(0.0).sqrt())
}

fn terminal_problem(
    model: &SystemModel,
    x_tight: &ConstraintPolytope,
    u_tight: &ConstraintPolytope,
    vertices: &[DVector<f64>],
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    lambda: f64,
    cfg: &TerminalConfig,
) -> (LmiProblem, Var, Var) {
    let n = model.n();
    let m = model.m();
    let a = model.a();
    let b = model.b();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut p = LmiProblem::with_settings(SolverSettings {
        margin: cfg.margin,
        ..SolverSettings::default()
    });
    let s = p.symmetric("S_t", n);
    let y = p.rectangular("Y_t", m, n);
    let q_half = sym_sqrt(q);
    let r_half = sym_sqrt(r);
    p.add_block(
        BlockBuilder::new(3 * n + m)
            .var(0, 0, s, n, n, 1.0)
            .term(n, 0, a, s, &eye)
            .term(n, 0, b, y, &eye)
            .var(n, n, s, n, n, 1.0)
            .term(2 * n, 0, &q_half, s, &eye)
            .scaled_identity(2 * n, n, 1.0)
            .term(3 * n, 0, &r_half, y, &eye)
            .scaled_identity(3 * n, m, 1.0),
    );
    for d in vertices {
        let dcol = DMatrix::from_column_slice(n, 1, d.as_slice());
        p.add_block(
            BlockBuilder::new(2 * n + 1)
                .var(0, 0, s, n, n, lambda)
                .scaled_identity(n, 1, 1.0 - lambda)
                .constant(n + 1, n, &dcol)
                .var(n + 1, n + 1, s, n, n, 1.0)
                .term(n + 1, 0, a, s, &eye)
                .term(n + 1, 0, b, y, &eye),
        );
    }
    for j in 0..x_tight.num_rows() {
        let row = x_tight.normals().rows(j, 1).into_owned();
        let bj = x_tight.offsets()[j];
        p.add_block(
            BlockBuilder::new(1)
                .scaled_identity(0, 1, bj * bj)
                .term(0, 0, &(-&row), s, &row.transpose()),
        );
    }
    for j in 0..u_tight.num_rows() {
        let row = u_tight.normals().rows(j, 1).into_owned();
        let bj = u_tight.offsets()[j];
        p.add_block(
            BlockBuilder::new(n + 1)
                .scaled_identity(0, 1, bj * bj)
                .term(0, 1, &row, y, &eye)
                .var(1, 1, s, n, n, 1.0),
        );
    }
    if cfg.enlarge {
        p.maximize_logdet(s, 1.0);
    }
    (p, s, y)
}

/// Ellipsoidal terminal ingredients from the Riccati, invariance and
/// admissibility LMIs, at the smallest `λ̃` on the grid whose solution also
/// keeps the eroded terminal constraint consistent (`contraction + shrink <= 1`).
#[allow(clippy::too_many_arguments)]
pub fn synth_terminal(
    model: &SystemModel,
    x_tight_n: &ConstraintPolytope,
    u_tight_nm1: &ConstraintPolytope,
    l_n: &Zonotope,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    cfg: &TerminalConfig,
) -> Result<TerminalResult> {
    validate_grid(&cfg.lambda_grid)?;
    if x_tight_n.min_offset() < NONEMPTY_TOL || u_tight_nm1.min_offset() < NONEMPTY_TOL {
        return Err(Error::TerminalInfeasible);
    }
    if cfg.riccati {
        return terminal_riccati_ellipsoid(model, x_tight_n, u_tight_nm1, l_n, q, r);
    }
    let (vertices, boxed_l) = half_vertices(l_n, cfg.vertex_cap)?;
    let attempt = |lambda: f64| -> Result<Option<TerminalResult>> {
        let (p, s, y) = terminal_problem(model, x_tight_n, u_tight_nm1, &vertices, q, r, lambda, cfg);
        let sol = if cfg.enlarge { p.minimize_linear()? } else { p.solve_feasibility()? };
        if !sol.is_feasible() {
            return Ok(None);
        }
        let p_mat = match inverse(&symmetrize(sol.value(s))) {
            Ok(m) => symmetrize(&m),
            Err(_) => return Ok(None),
        };
        let k_t = sol.value(y) * &p_mat;
        let shrink = match shrink_radius_for_ellipsoid(&p_mat, l_n) {
            Ok(v) => v,
            Err(_) => return Ok(None),
        };
        let c = ellipsoid_contraction(&p_mat, &model.closed_loop(&k_t))?;
        if c + shrink > 1.0 {
            return Ok(None);
        }
        Ok(Some(TerminalResult {
            k_t,
            p: p_mat.clone(),
            set: TerminalSet::Ellipsoid { shape: p_mat, shrink },
            lambda: Some(lambda),
            boxed_l,
        }))
    };
    let chunk = rayon::current_num_threads().max(1);
    for part in cfg.lambda_grid.chunks(chunk) {
        let results: Vec<_> = part.par_iter().map(|&l| attempt(l)).collect();
        for res in results {
            if let Some(found) = res? {
                return Ok(found);
            }
        }
    }
    Err(Error::TerminalInfeasible)
}

/// LQR pair with the largest admissible level set `{x'Px <= α}`; fails when
/// that level set is too small to absorb `L(N)`.
pub fn terminal_riccati_ellipsoid(
    model: &SystemModel,
    x_tight_n: &ConstraintPolytope,
    u_tight_nm1: &ConstraintPolytope,
    l_n: &Zonotope,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<TerminalResult> {
    let (k_t, p) = solve_dare(model.a(), model.b(), q, r)?;
    let p_inv = inverse(&p)?;
    let ku = u_tight_nm1.normals() * &k_t;
    let mut level = f64::INFINITY;
    for (normals, offsets) in [(x_tight_n.normals(), x_tight_n.offsets()), (&ku, u_tight_nm1.offsets())] {
        for j in 0..normals.nrows() {
            let a = normals.row(j);
            let h = (a * &p_inv * a.transpose())[(0, 0)].max(0.0).sqrt();
            if h > 0.0 {
                level = level.min(offsets[j] / h);
            }
        }
    }
    if !level.is_finite() {
        return Err(Error::TerminalInfeasible);
    }
    let c = ellipsoid_contraction(&p, &model.closed_loop(&k_t))?;
    let half = sym_sqrt(&p);
    let g = l_n.generators();
    let r1: f64 = (0..g.ncols()).map(|j| (&half * g.column(j)).norm()).sum();
    if c >= 1.0 || level * (1.0 - c) < r1 {
        return Err(Error::TerminalInfeasible);
    }
    let shape = &p / (level * level);
    let shrink = r1 / level;
    Ok(TerminalResult {
        k_t,
        p,
        set: TerminalSet::Ellipsoid { shape, shrink },
        lambda: None,
        boxed_l: false,
    })
}

/// Terminal equality with the LQR pair; requires a negligible tail.
pub fn terminal_equality(model: &SystemModel, q: &DMatrix<f64>, r: &DMatrix<f64>, tail: f64, threshold: f64) -> Result<TerminalResult> {
    if tail > threshold {
        return Err(Error::TailNotNegligible { tail, threshold });
    }
    let (k_t, p) = solve_dare(model.a(), model.b(), q, r)?;
    Ok(TerminalResult {
        k_t,
        p,
        set: TerminalSet::Equality,
        lambda: None,
        boxed_l: false,
    })
}

/// Polyhedral terminal set for a given `(K_t, P)`. Without an explicit `Ω`
/// the maximal robust invariant set of `x+ = A_t x + d`, `d ∈ L(N)`, inside
/// the terminal admissible set is computed.
#[allow(clippy::too_many_arguments)]
pub fn terminal_polyhedron(
    model: &SystemModel,
    k_t: &DMatrix<f64>,
    p: &DMatrix<f64>,
    x_tight_n: &ConstraintPolytope,
    u_tight_nm1: &ConstraintPolytope,
    l_n: &Zonotope,
    omega: Option<ConstraintPolytope>,
) -> Result<TerminalResult> {
    let omega = match omega {
        Some(o) => o,
        None => {
            let admissible = x_tight_n.intersect(&ConstraintPolytope::new(
                u_tight_nm1.normals() * k_t,
                u_tight_nm1.offsets().clone(),
            )?)?;
            if admissible.min_offset() < NONEMPTY_TOL {
                return Err(Error::TerminalInfeasible);
            }
            let dist = if l_n.is_origin() { None } else { Some(l_n) };
            invset::maximal_invariant_set(
                &model.closed_loop(k_t),
                &admissible,
                dist,
                invset::DEFAULT_MAX_ITER,
                invset::DEFAULT_TOL,
            )?
        }
    };
    let tightened = omega.pontryagin_diff(l_n)?;
    if tightened.min_offset() < NONEMPTY_TOL {
        return Err(Error::TerminalSetVanishes { radius: 1.0 });
    }
    Ok(TerminalResult {
        k_t: k_t.clone(),
        p: p.clone(),
        set: TerminalSet::Polyhedron { omega, tightened },
        lambda: None,
        boxed_l: false,
    })
}

/// Outcome of the four-clause audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub weights_positive: bool,
    pub min_eig_q: f64,
    pub min_eig_r: f64,
    pub terminal_cost: bool,
    pub terminal_cost_min_eig: f64,
    pub stable_nonempty: bool,
    pub spectral_radius: f64,
    pub min_tightened_offset: f64,
    pub terminal_set: bool,
    pub terminal_margin: f64,
    pub terminal_note: String,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.weights_positive && self.terminal_cost && self.stable_nonempty && self.terminal_set
    }

    pub fn clauses(&self) -> [(&'static str, bool); 4] {
        [
            ("(i) Q, R positive definite", self.weights_positive),
            ("(ii) terminal cost decrease", self.terminal_cost),
            ("(iii) A + BK stable, tightened sets nonempty", self.stable_nonempty),
            ("(iv) terminal set invariant and admissible", self.terminal_set),
        ]
    }
}

/// Audits clauses (i)–(iv) of the standing assumptions for a bundle.
pub fn check_assumption1(bundle: &DesignBundle) -> AssumptionReport {
    let q = &bundle.costs.q;
    let r = &bundle.costs.r;
    let p = &bundle.costs.p;
    let min_eig_q = min_eig_sym(q);
    let min_eig_r = min_eig_sym(r);
    let gap = lyapunov_gap(&bundle.model, q, r, &bundle.k_t, p);
    let gap_eig = min_eig_sym(&gap);
    let cost_tol = 1e-8 * p.amax().max(1.0);
    let rho = spectral_radius(&bundle.model.closed_loop(&bundle.k));
    let n = bundle.horizon;
    let sched = &bundle.schedule;
    let min_off = sched
        .x_tight(n)
        .min_offset()
        .min(sched.u_tight(n).min_offset());
    let (terminal_ok, margin, note) = match audit_terminal(bundle) {
        Ok(t) => t,
        Err(e) => (false, f64::NEG_INFINITY, format!("audit error: {e}")),
    };
    AssumptionReport {
        weights_positive: min_eig_q > 0.0 && min_eig_r > 0.0,
        min_eig_q,
        min_eig_r,
        terminal_cost: gap_eig >= -cost_tol && min_eig_sym(p) > 0.0,
        terminal_cost_min_eig: gap_eig,
        stable_nonempty: rho < 1.0 && min_off >= NONEMPTY_TOL,
        spectral_radius: rho,
        min_tightened_offset: min_off,
        terminal_set: terminal_ok,
        terminal_margin: margin,
        terminal_note: note,
    }
}

fn audit_terminal(bundle: &DesignBundle) -> Result<(bool, f64, String)> {
    let n = bundle.horizon;
    let x_t = bundle.schedule.x_tight(n);
    let u_t = bundle.schedule.u_tight(n - 1);
    let l_n = bundle.schedule.l_n();
    let a_t = bundle.model.closed_loop(&bundle.k_t);
    match &bundle.terminal {
        TerminalSet::Equality => {
            let tail = bundle.schedule.tail_norm();
            let ok = tail <= bundle.tail_threshold;
            Ok((ok, bundle.tail_threshold - tail, format!("tail norm {tail:.3e}")))
        }
        TerminalSet::Ellipsoid { shape, shrink } => {
            let p_inv = inverse(shape)?;
            let mut margin = f64::INFINITY;
            for j in 0..x_t.num_rows() {
                let a = x_t.normals().row(j);
                let h = (a * &p_inv * a.transpose())[(0, 0)].max(0.0).sqrt();
                margin = margin.min(x_t.offsets()[j] - h);
            }
            let ku = u_t.normals() * &bundle.k_t;
            for j in 0..u_t.num_rows() {
                let a = ku.row(j);
                let h = (a * &p_inv * a.transpose())[(0, 0)].max(0.0).sqrt();
                margin = margin.min(u_t.offsets()[j] - h);
            }
            let (verts, boxed) = half_vertices(l_n, DEFAULT_VERTEX_CAP)?;
            let inv = sprocedure_margin(shape, &a_t, &verts);
            let c = ellipsoid_contraction(shape, &a_t)?;
            let exact_shrink = shrink_radius_for_ellipsoid(shape, l_n).unwrap_or(f64::INFINITY);
            let nest = 1.0 - c - shrink.max(exact_shrink);
            let worst = margin.min(inv).min(nest);
            let note = format!(
                "admissibility {margin:.3e}, invariance {inv:.3e}, erosion slack {nest:.3e}{}",
                if boxed { ", L(N) boxed" } else { "" }
            );
            Ok((margin >= -1e-9 && inv >= -1e-9 && nest >= -1e-12, worst, note))
        }
        TerminalSet::Polyhedron { omega, tightened } => {
            let tol = 1e-7;
            let mut margin = f64::INFINITY;
            for i in 0..omega.num_rows() {
                let h: Vec<f64> = (omega.normals().row(i) * &a_t).iter().copied().collect();
                let hl = l_n.support_row(omega.normals().row(i).transpose().as_slice());
                match invset::support_polytope(omega, &h)? {
                    LpValue::Finite(v) => margin = margin.min(omega.offsets()[i] - v - hl),
                    LpValue::Unbounded => return Ok((false, f64::NEG_INFINITY, "terminal set unbounded".into())),
                }
            }
            let ku = u_t.normals() * &bundle.k_t;
            for (normals, offsets) in [(x_t.normals().clone(), x_t.offsets()), (ku, u_t.offsets())] {
                for j in 0..normals.nrows() {
                    let h: Vec<f64> = normals.row(j).iter().copied().collect();
                    match invset::support_polytope(omega, &h)? {
                        LpValue::Finite(v) => margin = margin.min(offsets[j] - v),
                        LpValue::Unbounded => return Ok((false, f64::NEG_INFINITY, "terminal set unbounded".into())),
                    }
                }
            }
            let expected = omega.pontryagin_diff(l_n)?;
            let consistent = (expected.offsets() - tightened.offsets()).amax() <= 1e-9;
            Ok((
                margin >= -tol && consistent,
                margin,
                format!("polyhedral margin {margin:.3e}, {} rows", omega.num_rows()),
            ))
        }
    }
}

/// Best S-procedure certificate for `x'Px <= 1 ⇒ (A_t x + d)'P(A_t x + d) <= 1`
/// over a fine `λ` scan: the largest, over `λ`, smallest eigenvalue of the
/// certificate matrices for all `d`.
pub fn sprocedure_margin(p: &DMatrix<f64>, a_t: &DMatrix<f64>, vertices: &[DVector<f64>]) -> f64 {
    let n = p.nrows();
    let atpa = a_t.transpose() * p * a_t;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=1000 {
        let lambda = i as f64 / 1000.0;
        let mut worst = f64::INFINITY;
        for d in vertices {
            let mut m = DMatrix::zeros(n + 1, n + 1);
            let tl = p * lambda - &atpa;
            m.view_mut((0, 0), (n, n)).copy_from(&tl);
            let off = -(a_t.transpose() * p * d);
            for k in 0..n {
                m[(k, n)] = off[k];
                m[(n, k)] = off[k];
            }
            m[(n, n)] = 1.0 - lambda - (d.transpose() * p * d)[(0, 0)];
            worst = worst.min(min_eig_sym(&m));
        }
        best = best.max(worst);
    }
    best
}

/// Where the disturbance-rejection gain comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum GainSource {
    Lmi(KSearchConfig),
    /// LQR gain for the given weights.
    Lqr { q: DMatrix<f64>, r: DMatrix<f64> },
    Given(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TerminalChoice {
    Equality,
    Ellipsoid(TerminalConfig),
    /// Given `Ω`, or the maximal robust invariant set when `None`.
    Polyhedron(Option<ConstraintPolytope>),
}

/// Complete offline problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    pub model: SystemModel,
    pub x: ConstraintPolytope,
    pub u: ConstraintPolytope,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub horizon: usize,
    pub control_horizon: usize,
    pub gain: GainSource,
    pub terminal: TerminalChoice,
    pub tail_threshold: f64,
}

#[derive(Debug, Clone)]
pub struct DesignOutcome {
    pub bundle: DesignBundle,
    pub k_result: Option<KResult>,
    pub terminal_lambda: Option<f64>,
    pub boxed_l: bool,
    pub report: AssumptionReport,
}

/// Runs the whole offline pipeline; the bundle is only returned when it
/// passes [`check_assumption1`].
pub fn synthesize(spec: &DesignSpec) -> Result<DesignOutcome> {
    let model = &spec.model;
    let x = spec.x.normalize()?;
    let u = spec.u.normalize()?;
    if x.dim() != model.n() || u.dim() != model.m() {
        return Err(Error::dims("constraint dimension", model.n(), x.dim()));
    }
    if spec.control_horizon == 0 || spec.control_horizon > spec.horizon {
        return Err(Error::InvalidInput(format!(
            "control horizon {} must lie in [1, {}]",
            spec.control_horizon, spec.horizon
        )));
    }
    let (k, k_result) = match &spec.gain {
        GainSource::Lmi(cfg) => {
            let r = synth_k(model, &x, &u, cfg)?;
            (r.k.clone(), Some(r))
        }
        GainSource::Lqr { q, r } => (solve_dare(model.a(), model.b(), q, r)?.0, None),
        GainSource::Given(k) => (k.clone(), None),
    };
    let n = spec.horizon;
    let schedule = crate::TighteningSchedule::build(model.a(), model.b(), &k, model.w().generators(), &x, &u, n)?;
    let term = match &spec.terminal {
        TerminalChoice::Equality => terminal_equality(model, &spec.q, &spec.r, schedule.tail_norm(), spec.tail_threshold)?,
        TerminalChoice::Ellipsoid(cfg) => synth_terminal(
            model,
            schedule.x_tight(n),
            schedule.u_tight(n - 1),
            schedule.l_n(),
            &spec.q,
            &spec.r,
            cfg,
        )?,
        TerminalChoice::Polyhedron(omega) => {
            let (k_t, p) = solve_dare(model.a(), model.b(), &spec.q, &spec.r)?;
            terminal_polyhedron(model, &k_t, &p, schedule.x_tight(n), schedule.u_tight(n - 1), schedule.l_n(), omega.clone())?
        }
    };
    let bundle = DesignBundle {
        model: model.clone(),
        x,
        u,
        costs: crate::controller::CostMatrices::new(spec.q.clone(), spec.r.clone(), symmetrize(&term.p))?,
        k,
        k_t: term.k_t,
        schedule,
        terminal: term.set,
        horizon: n,
        control_horizon: spec.control_horizon,
        tail_threshold: spec.tail_threshold,
    };
    bundle.validate()?;
    let report = check_assumption1(&bundle);
    if !report.passed() {
        let failed: Vec<&str> = report.clauses().iter().filter(|c| !c.1).map(|c| c.0).collect();
        return Err(Error::AuditFailed(failed.join("; ")));
    }
    Ok(DesignOutcome {
        bundle,
        k_result,
        terminal_lambda: term.lambda,
        boxed_l: term.boxed_l,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn double_integrator(w: f64) -> (SystemModel, ConstraintPolytope, ConstraintPolytope) {
        let model = SystemModel::new(
            m(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            m(2, 1, &[0.0, 1.0]),
            Zonotope::from_box(&[w, w]),
        )
        .unwrap();
        let x = ConstraintPolytope::symmetric_box(&[10.0, 10.0]).unwrap();
        let u = ConstraintPolytope::symmetric_box(&[1.0]).unwrap();
        (model, x, u)
    }

    #[test]
    fn dare_scalar_golden_ratio() {
        let one = m(1, 1, &[1.0]);
        let (k, p) = solve_dare(&one, &one, &one, &one).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((p[(0, 0)] - phi).abs() < 1e-12);
        assert!((k[(0, 0)] + phi / (1.0 + phi)).abs() < 1e-12);
        assert!((k[(0, 0)] + 0.618034).abs() < 1e-6);
    }

    #[test]
    fn dare_zero_dynamics() {
        let q = m(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (k, p) = solve_dare(&DMatrix::zeros(2, 2), &DMatrix::identity(2, 2), &q, &DMatrix::identity(2, 2)).unwrap();
        assert!((p - &q).amax() < 1e-14);
        assert!(k.amax() < 1e-14);
    }

    #[test]
    fn dare_double_integrator_residual() {
        let a = m(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let b = m(2, 1, &[0.0, 1.0]);
        let q = DMatrix::identity(2, 2);
        let r = m(1, 1, &[0.01]);
        let (_, p) = solve_dare(&a, &b, &q, &r).unwrap();
        assert!(dare_residual(&a, &b, &q, &r, &p).amax() <= 1e-9);
        // semidefinite state weight
        let (k, _) = solve_dare(&a, &b, &m(2, 2, &[100.0, 0.0, 0.0, 0.0]), &r).unwrap();
        assert!(spectral_radius(&(&a + &b * k)) < 1.0);
    }

    #[test]
    fn dare_rejects_unstabilizable() {
        let a = m(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let b = m(2, 1, &[0.0, 1.0]);
        let err = solve_dare(&a, &b, &DMatrix::identity(2, 2), &m(1, 1, &[1.0])).unwrap_err();
        assert!(matches!(err, Error::NotStabilizable(_)), "{err}");
    }

    #[test]
    fn half_vertices_of_box() {
        let (v, boxed) = half_vertices(&Zonotope::from_box(&[1.0, 2.0]), 16).unwrap();
        assert_eq!(v.len(), 2);
        assert!(!boxed);
        let (v, _) = half_vertices(&Zonotope::origin(2), 16).unwrap();
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn schedule_order() {
        let cfg = KSearchConfig {
            rho: 0.8,
            mu: 0.9,
            rho_factors: vec![1.0, 0.5],
            mu_values: vec![0.7],
            ..KSearchConfig::default()
        };
        assert_eq!(cfg.schedule(), vec![(0.8, 0.9), (0.8, 1.0), (0.4, 1.0), (0.8, 0.7)]);
    }

    #[test]
    fn grid_validation() {
        let mut cfg = KSearchConfig::default();
        cfg.lambda_grid = vec![0.5, 0.4];
        assert!(cfg.validate().is_err());
        cfg.lambda_grid = vec![0.5, 1.0];
        assert!(cfg.validate().is_err());
        cfg.lambda_grid = vec![0.5];
        cfg.rho = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn k_synthesis_double_integrator() {
        let (model, x, u) = double_integrator(0.16);
        let res = synth_k(&model, &x, &u, &KSearchConfig::default()).unwrap();
        let a_k = model.closed_loop(&res.k);
        assert!(spectral_radius(&a_k) < 1.0);
        assert!(res.gamma > 0.0 && res.gamma <= 1.0);
        // Monte-Carlo invariance of E(P̃) under A_K x + w
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let half_inv = sym_inv_sqrt(&res.p_tilde).unwrap();
        for _ in 0..10_000 {
            let dir = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let rad: f64 = rng.random_range(0.0..1.0);
            let x0 = &half_inv * dir.normalize() * rad.sqrt();
            let w = DVector::from_fn(2, |_, _| rng.random_range(-0.16..0.16));
            let x1 = &a_k * x0 + w;
            assert!((x1.transpose() * &res.p_tilde * &x1)[(0, 0)] <= 1.0 + 1e-9);
        }
        // E(P̃) ⊆ sqrt(γ) X and K E(P̃) ⊆ ρ U
        let s = inverse(&res.p_tilde).unwrap();
        for j in 0..2 {
            assert!(s[(j, j)] <= res.gamma * 100.0 + 1e-6);
        }
        assert!((&res.k * &s * res.k.transpose())[(0, 0)] <= res.rho * res.rho + 1e-6);
    }

    #[test]
    fn k_synthesis_without_disturbance() {
        let (model, x, u) = double_integrator(0.0);
        let model = model.with_disturbance(Zonotope::origin(2)).unwrap();
        let res = synth_k(&model, &x, &u, &KSearchConfig::default()).unwrap();
        assert!(spectral_radius(&model.closed_loop(&res.k)) < 1.0);
    }

    #[test]
    fn k_synthesis_fails_for_huge_disturbance() {
        let (model, x, u) = double_integrator(16.0);
        let cfg = KSearchConfig {
            lambda_grid: vec![0.3, 0.6, 0.9],
            rho_factors: vec![0.5],
            mu_values: vec![],
            ..KSearchConfig::default()
        };
        assert!(matches!(synth_k(&model, &x, &u, &cfg), Err(Error::NoAdmissibleGain)));
    }

    #[test]
    fn gamma_matches_bisection() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.5..0.5));
        let model = SystemModel::new(a, m(2, 1, &[0.3, 1.0]), Zonotope::from_box(&[0.05, 0.05])).unwrap();
        let x = ConstraintPolytope::symmetric_box(&[1.0, 1.0]).unwrap();
        let u = ConstraintPolytope::symmetric_box(&[1.0]).unwrap();
        let (verts, _) = half_vertices(model.w(), 16).unwrap();
        let lambda = 0.9;
        let (p, vars) = k_problem(&model, &x, &u, &verts, lambda, 1.0, 1.0, 1.0, 1e-6);
        let sol = p.minimize_linear().unwrap();
        assert!(sol.is_feasible());
        let gamma = sol.scalar(vars.gamma);
        let feasible_at = |level: f64| {
            let (mut p, vars) = k_problem(&model, &x, &u, &verts, lambda, 1.0, 1.0, level, 1e-6);
            p.minimize_scalar(vars.gamma, -1.0);
            p.solve_feasibility().unwrap().is_feasible()
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            if feasible_at(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        // the level set needs γ + margin <= level, bisection sees that shift too
        assert!((gamma - hi).abs() < 1e-4, "{gamma} vs {hi}");
    }

    #[test]
    fn enlarging_w_never_lowers_gamma() {
        let (model, x, u) = double_integrator(0.05);
        let x = x.normalize().unwrap();
        let u = u.normalize().unwrap();
        let mut last = 0.0;
        for s in [1.0, 1.5, 2.0] {
            let big = model.with_disturbance(model.w().scale(s)).unwrap();
            let (v, _) = half_vertices(big.w(), 16).unwrap();
            let (p, vars) = k_problem(&big, &x, &u, &v, 0.9, 1.0, 1.0, 1.0, 1e-6);
            let sol = p.minimize_linear().unwrap();
            assert!(sol.is_feasible());
            let g = sol.scalar(vars.gamma);
            assert!(g >= last - 1e-6, "{g} < {last}");
            last = g;
        }
    }

    #[test]
    fn terminal_ellipsoid_double_integrator() {
        let (model, x, u) = double_integrator(0.16);
        let x = x.normalize().unwrap();
        let u = u.normalize().unwrap();
        let q = DMatrix::identity(2, 2);
        let r = m(1, 1, &[0.01]);
        let (k, _) = solve_dare(model.a(), model.b(), &DMatrix::identity(2, 2), &m(1, 1, &[100.0])).unwrap();
        let sched = crate::TighteningSchedule::build(model.a(), model.b(), &k, model.w().generators(), &x, &u, 10).unwrap();
        let res = synth_terminal(&model, sched.x_tight(10), sched.u_tight(9), sched.l_n(), &q, &r, &TerminalConfig::default()).unwrap();
        let gap = lyapunov_gap(&model, &q, &r, &res.k_t, &res.p);
        assert!(min_eig_sym(&gap) >= -1e-8);
        // sampled robust invariance for L(N)
        let a_t = model.closed_loop(&res.k_t);
        let half_inv = sym_inv_sqrt(&res.p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let dir = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let rad: f64 = rng.random_range(0.0..1.0);
            let x0 = &half_inv * dir.normalize() * rad.sqrt();
            let v = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let d = sched.l_n().point(&v).unwrap();
            let x1 = &a_t * x0 + d;
            assert!((x1.transpose() * &res.p * &x1)[(0, 0)] <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn terminal_without_tail_matches_riccati_inequality() {
        let one = m(1, 1, &[1.0]);
        let model = SystemModel::new(one.clone(), one.clone(), Zonotope::origin(1)).unwrap();
        let (k_t, p) = solve_dare(&one, &one, &one, &one).unwrap();
        let gap = lyapunov_gap(&model, &one, &one, &k_t, &p);
        assert!(gap[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn riccati_terminal_reproduces_dare() {
        let (model, x, u) = double_integrator(0.0);
        let model = model.with_disturbance(Zonotope::origin(2)).unwrap();
        let x = x.normalize().unwrap();
        let u = u.normalize().unwrap();
        let q = DMatrix::identity(2, 2);
        let r = m(1, 1, &[0.01]);
        let cfg = TerminalConfig {
            riccati: true,
            ..TerminalConfig::default()
        };
        let res = synth_terminal(&model, &x, &u, &Zonotope::origin(2), &q, &r, &cfg).unwrap();
        let (k_t, p) = solve_dare(model.a(), model.b(), &q, &r).unwrap();
        assert!((&res.k_t - k_t).amax() < 1e-6);
        assert!((&res.p - p).amax() < 1e-6);
        match res.set {
            TerminalSet::Ellipsoid { shrink, .. } => assert_eq!(shrink, 0.0),
            _ => panic!("expected ellipsoid"),
        }
    }

    #[test]
    fn shrink_radius_examples() {
        let eye = DMatrix::<f64>::identity(2, 2);
        assert_eq!(shrink_radius_for_ellipsoid(&eye, &Zonotope::origin(2)).unwrap(), 0.0);
        let one = Zonotope::new(m(2, 1, &[0.1, 0.0])).unwrap();
        assert!((shrink_radius_for_ellipsoid(&eye, &one).unwrap() - 0.1).abs() < 1e-15);
        let two = Zonotope::from_box(&[0.1, 0.1]);
        let r = shrink_radius_for_ellipsoid(&eye, &two).unwrap();
        assert!((r - 0.2).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let x = if x.norm() > 1.0 - r { x.normalize() * (1.0 - r) } else { x };
            let v = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            assert!((x + two.point(&v).unwrap()).norm() <= 1.0 + 1e-12);
        }
        assert!(matches!(
            shrink_radius_for_ellipsoid(&eye, &Zonotope::from_box(&[0.6, 0.6])),
            Err(Error::TerminalSetVanishes { .. })
        ));
    }
}
