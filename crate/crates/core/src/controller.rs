//! Plant model, cost matrices, the design bundle and the online problem.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::invset::{self, LpValue};
use crate::linalg::{asymmetry, controllability_rank, is_finite_matrix, min_eig_sym, sym_sqrt};
use crate::qpsolver::{BallConstraint, QpProblem, QpSettings, QpSolution, QpSolver, QpStatus, SparseRows, WarmStart};
use crate::synthesis::TerminalSet;
use crate::{ConstraintPolytope, TighteningSchedule, Zonotope};

pub use crate::synthesis::shrink_radius_for_ellipsoid;

/// `x+ = A x + B u + w`, `w ∈ W`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    w: Zonotope,
}

impl SystemModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, w: Zonotope) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dims("A square", a.nrows(), a.ncols()));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::dims("B rows", a.nrows(), b.nrows()));
        }
        if w.dim() != a.nrows() {
            return Err(Error::dims("H_W rows", a.nrows(), w.dim()));
        }
        if b.ncols() == 0 {
            return Err(Error::InvalidInput("B has no columns".into()));
        }
        if !is_finite_matrix(&a) || !is_finite_matrix(&b) {
            return Err(Error::NonFinite("system matrices"));
        }
        if controllability_rank(&a, &b, 1e-8) < a.nrows() {
            return Err(Error::NotStabilizable("(A, B) is not controllable".into()));
        }
        Ok(Self { a, b, w })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn w(&self) -> &Zonotope {
        &self.w
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn closed_loop(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a + &self.b * k
    }

    pub fn with_disturbance(&self, w: Zonotope) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), w)
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + w
    }
}

/// Stage weights `Q`, `R` and terminal weight `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrices {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

impl CostMatrices {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, p: DMatrix<f64>) -> Result<Self> {
        for (name, m) in [("Q", &q), ("R", &r), ("P", &p)] {
            if !m.is_square() {
                return Err(Error::InvalidInput(format!("{name} must be square")));
            }
            if !is_finite_matrix(m) {
                return Err(Error::NonFinite("cost matrices"));
            }
            if asymmetry(m) > 1e-10 {
                return Err(Error::InvalidInput(format!("{name} is not symmetric")));
            }
            if min_eig_sym(m) <= 0.0 {
                return Err(Error::InvalidInput(format!("{name} is not positive definite")));
            }
        }
        if q.nrows() != p.nrows() {
            return Err(Error::dims("P rows", q.nrows(), p.nrows()));
        }
        Ok(Self { q, r, p })
    }
}

/// Everything the online controller needs; the persisted offline artifact.
#[derive(Debug, Clone)]
pub struct DesignBundle {
    pub model: SystemModel,
    /// Normalized state constraints.
    pub x: ConstraintPolytope,
    /// Normalized input constraints.
    pub u: ConstraintPolytope,
    pub costs: CostMatrices,
    pub k: DMatrix<f64>,
    pub k_t: DMatrix<f64>,
    pub schedule: TighteningSchedule,
    pub terminal: TerminalSet,
    pub horizon: usize,
    pub control_horizon: usize,
    /// Threshold below which `L(N)` counts as negligible.
    pub tail_threshold: f64,
}

impl DesignBundle {
    /// Checks dimensions and horizons.
    pub fn validate(&self) -> Result<()> {
        let n = self.model.n();
        let m = self.model.m();
        if self.x.dim() != n || self.u.dim() != m {
            return Err(Error::dims("constraint dimension", n, self.x.dim()));
        }
        if self.k.shape() != (m, n) || self.k_t.shape() != (m, n) {
            return Err(Error::dims("gain rows", m, self.k.nrows()));
        }
        if self.costs.q.nrows() != n || self.costs.r.nrows() != m {
            return Err(Error::dims("cost dimension", n, self.costs.q.nrows()));
        }
        if self.horizon == 0 || self.control_horizon == 0 || self.control_horizon > self.horizon {
            return Err(Error::InvalidInput(format!(
                "horizons must satisfy 1 <= Nc <= N (N = {}, Nc = {})",
                self.horizon, self.control_horizon
            )));
        }
        if self.schedule.x_sets().len() < self.horizon + 1 || self.schedule.u_sets().len() < self.horizon + 1 {
            return Err(Error::dims("tightening schedule length", self.horizon + 1, self.schedule.x_sets().len()));
        }
        match &self.terminal {
            TerminalSet::Ellipsoid { shape, .. } if shape.nrows() != n => {
                return Err(Error::dims("terminal shape", n, shape.nrows()))
            }
            TerminalSet::Polyhedron { omega, tightened } if omega.dim() != n || tightened.dim() != n => {
                return Err(Error::dims("terminal polyhedron", n, omega.dim()))
            }
            _ => {}
        }
        Ok(())
    }

    /// Same costs and terminal ingredients without any tightening: the
    /// certainty-equivalent controller used for comparison.
    pub fn nominal(&self) -> DesignBundle {
        let n = self.model.n();
        let xs = vec![self.x.clone(); self.horizon + 1];
        let us = vec![self.u.clone(); self.horizon + 1];
        let schedule = TighteningSchedule::from_parts(
            self.schedule.a_k().clone(),
            Zonotope::origin(n),
            xs,
            us,
            0.0,
        );
        let terminal = match &self.terminal {
            TerminalSet::Equality => TerminalSet::Equality,
            TerminalSet::Ellipsoid { shape, .. } => TerminalSet::Ellipsoid {
                shape: shape.clone(),
                shrink: 0.0,
            },
            TerminalSet::Polyhedron { omega, .. } => TerminalSet::Polyhedron {
                omega: omega.clone(),
                tightened: omega.clone(),
            },
        };
        DesignBundle {
            schedule,
            terminal,
            ..self.clone()
        }
    }

    /// `Σ ||x̄(i)||²_Q + ||ū(i)||²_R + ||x̄(N)||²_P`.
    pub fn cost(&self, states: &[DVector<f64>], inputs: &[DVector<f64>]) -> f64 {
        let q = &self.costs.q;
        let r = &self.costs.r;
        let mut v = 0.0;
        for (x, u) in states.iter().zip(inputs) {
            v += (x.transpose() * q * x)[(0, 0)] + (u.transpose() * r * u)[(0, 0)];
        }
        if let Some(last) = states.get(inputs.len()) {
            v += (last.transpose() * &self.costs.p * last)[(0, 0)];
        }
        v
    }
}

/// Index bookkeeping for the sparse problem: variables are ordered
/// `x̄(0), ū(0), x̄(1), ū(1), …, x̄(N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcpLayout {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
}

impl OcpLayout {
    pub fn state(&self, i: usize) -> usize {
        i * (self.n + self.m)
    }

    pub fn input(&self, i: usize) -> usize {
        i * (self.n + self.m) + self.n
    }

    pub fn num_vars(&self) -> usize {
        self.horizon * (self.n + self.m) + self.n
    }

    pub fn pack(&self, states: &[DVector<f64>], inputs: &[DVector<f64>]) -> DVector<f64> {
        let mut z = DVector::zeros(self.num_vars());
        for (i, x) in states.iter().enumerate().take(self.horizon + 1) {
            z.rows_mut(self.state(i), self.n).copy_from(x);
        }
        for (i, u) in inputs.iter().enumerate().take(self.horizon) {
            z.rows_mut(self.input(i), self.m).copy_from(u);
        }
        z
    }

    pub fn unpack(&self, z: &DVector<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let states = (0..=self.horizon).map(|i| z.rows(self.state(i), self.n).into_owned()).collect();
        let inputs = (0..self.horizon).map(|i| z.rows(self.input(i), self.m).into_owned()).collect();
        (states, inputs)
    }
}

fn push_dense(c: &mut SparseRows, m: &DMatrix<f64>, offset: usize) {
    for i in 0..m.nrows() {
        c.push_row(
            (0..m.ncols())
                .filter(|&j| m[(i, j)] != 0.0)
                .map(|j| (offset + j, m[(i, j)]))
                .collect(),
        );
    }
}

/// Assembles the optimal control problem at state `x`. The first `n` rows
/// hold the initial-state equality.
pub fn build_ocp(bundle: &DesignBundle, x: &DVector<f64>) -> Result<QpProblem> {
    bundle.validate()?;
    let n = bundle.model.n();
    let m = bundle.model.m();
    if x.len() != n {
        return Err(Error::dims("state", n, x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("state"));
    }
    let big_n = bundle.horizon;
    let lay = OcpLayout { n, m, horizon: big_n };
    let nv = lay.num_vars();
    let mut hess = SparseRows::new(nv);
    let weight_rows = |hess: &mut SparseRows, w: &DMatrix<f64>, off: usize| {
        for i in 0..w.nrows() {
            hess.push_row(
                (0..w.ncols())
                    .filter(|&j| w[(i, j)] != 0.0)
                    .map(|j| (off + j, 2.0 * w[(i, j)]))
                    .collect(),
            );
        }
    };
    for i in 0..big_n {
        weight_rows(&mut hess, &bundle.costs.q, lay.state(i));
        weight_rows(&mut hess, &bundle.costs.r, lay.input(i));
    }
    weight_rows(&mut hess, &bundle.costs.p, lay.state(big_n));

    let mut c = SparseRows::new(nv);
    let mut lo: Vec<f64> = Vec::new();
    let mut hi: Vec<f64> = Vec::new();
    let eye_n = DMatrix::<f64>::identity(n, n);
    push_dense(&mut c, &eye_n, lay.state(0));
    lo.extend(x.iter());
    hi.extend(x.iter());
    let a = bundle.model.a();
    let b = bundle.model.b();
    for i in 0..big_n {
        for r in 0..n {
            let mut row: Vec<(usize, f64)> = Vec::new();
            for j in 0..n {
                if a[(r, j)] != 0.0 {
                    row.push((lay.state(i) + j, -a[(r, j)]));
                }
            }
            for j in 0..m {
                if b[(r, j)] != 0.0 {
                    row.push((lay.input(i) + j, -b[(r, j)]));
                }
            }
            row.push((lay.state(i + 1) + r, 1.0));
            c.push_row(row);
            lo.push(0.0);
            hi.push(0.0);
        }
    }
    for i in bundle.control_horizon..big_n {
        for r in 0..m {
            let mut row: Vec<(usize, f64)> = (0..n)
                .filter(|&j| bundle.k_t[(r, j)] != 0.0)
                .map(|j| (lay.state(i) + j, -bundle.k_t[(r, j)]))
                .collect();
            row.push((lay.input(i) + r, 1.0));
            c.push_row(row);
            lo.push(0.0);
            hi.push(0.0);
        }
    }
    for i in 0..big_n {
        let xs = bundle.schedule.x_tight(i);
        push_dense(&mut c, xs.normals(), lay.state(i));
        lo.extend(std::iter::repeat_n(f64::NEG_INFINITY, xs.num_rows()));
        hi.extend(xs.offsets().iter());
        let us = bundle.schedule.u_tight(i);
        push_dense(&mut c, us.normals(), lay.input(i));
        lo.extend(std::iter::repeat_n(f64::NEG_INFINITY, us.num_rows()));
        hi.extend(us.offsets().iter());
    }
    let mut ball = None;
    match &bundle.terminal {
        TerminalSet::Equality => {
            push_dense(&mut c, &eye_n, lay.state(big_n));
            lo.extend(std::iter::repeat_n(0.0, n));
            hi.extend(std::iter::repeat_n(0.0, n));
        }
        TerminalSet::Polyhedron { tightened, .. } => {
            push_dense(&mut c, tightened.normals(), lay.state(big_n));
            lo.extend(std::iter::repeat_n(f64::NEG_INFINITY, tightened.num_rows()));
            hi.extend(tightened.offsets().iter());
        }
        TerminalSet::Ellipsoid { shape, shrink } => {
            let start = c.nrows();
            push_dense(&mut c, &sym_sqrt(shape), lay.state(big_n));
            lo.extend(std::iter::repeat_n(f64::NEG_INFINITY, n));
            hi.extend(std::iter::repeat_n(f64::INFINITY, n));
            ball = Some(BallConstraint {
                start,
                len: n,
                radius: 1.0 - shrink,
            });
        }
    }
    Ok(QpProblem {
        hessian: hess,
        linear: DVector::zeros(nv),
        constraints: c,
        lower: DVector::from_vec(lo),
        upper: DVector::from_vec(hi),
        ball,
    })
}

/// Optimizer of the online problem at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub inputs: Vec<DVector<f64>>,
    pub states: Vec<DVector<f64>>,
    pub cost: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub qp: QpSolution,
}

impl OcpSolution {
    pub fn is_solved(&self) -> bool {
        self.status == QpStatus::Solved
    }

    /// The receding-horizon input `ū*(0)`.
    pub fn first_input(&self) -> &DVector<f64> {
        &self.inputs[0]
    }
}

/// Receding-horizon controller with a cached factorization and shifted warm start.
#[derive(Debug, Clone)]
pub struct Controller {
    bundle: DesignBundle,
    solver: QpSolver,
    layout: OcpLayout,
    warm: Option<WarmStart>,
}

impl Controller {
    pub fn new(bundle: DesignBundle, settings: QpSettings) -> Result<Self> {
        let n = bundle.model.n();
        let problem = build_ocp(&bundle, &DVector::zeros(n))?;
        let layout = OcpLayout {
            n,
            m: bundle.model.m(),
            horizon: bundle.horizon,
        };
        Ok(Self {
            solver: QpSolver::new(problem, settings)?,
            bundle,
            layout,
            warm: None,
        })
    }

    pub fn bundle(&self) -> &DesignBundle {
        &self.bundle
    }

    pub fn layout(&self) -> OcpLayout {
        self.layout
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn set_warm_start(&mut self, warm: Option<WarmStart>) {
        self.warm = warm;
    }

    /// Solves the problem at `x`, starting from the stored warm start.
    pub fn solve(&mut self, x: &DVector<f64>) -> Result<OcpSolution> {
        let n = self.layout.n;
        if x.len() != n {
            return Err(Error::dims("state", n, x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        let mut lo = self.solver.problem().lower.clone();
        let mut hi = self.solver.problem().upper.clone();
        lo.rows_mut(0, n).copy_from(x);
        hi.rows_mut(0, n).copy_from(x);
        self.solver.set_bounds(lo, hi)?;
        let qp = self.solver.solve(self.warm.as_ref());
        let (states, inputs) = self.layout.unpack(&qp.x);
        let cost = self.bundle.cost(&states, &inputs);
        Ok(OcpSolution {
            inputs,
            states,
            cost,
            status: qp.status,
            iterations: qp.iterations,
            qp,
        })
    }

    /// Applies `ū*(0; x)`, returns `(A x + B u + w, u, solution)` and stores
    /// the shifted candidate as the next warm start.
    pub fn step(&mut self, x: &DVector<f64>, w: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, OcpSolution)> {
        let sol = self.solve(x)?;
        if !sol.is_solved() {
            self.warm = None;
            return Err(Error::Infeasible(format_state(x)));
        }
        let u = sol.first_input().clone();
        let next = self.bundle.model.step(x, &u, w);
        let cand = crate::certify::build_candidate(&self.bundle, &sol, w);
        let z = self.layout.pack(&cand.states, &cand.inputs);
        let mut cz = DVector::zeros(self.solver.problem().num_rows());
        self.solver.problem().constraints.mul(z.as_slice(), cz.as_mut_slice());
        self.warm = Some(WarmStart {
            x: z,
            z: cz,
            y: sol.qp.y.clone(),
        });
        Ok((next, u, sol))
    }
}

pub(crate) fn format_state(x: &DVector<f64>) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

/// One-shot solve of the online problem.
pub fn solve_ocp(bundle: &DesignBundle, x: &DVector<f64>) -> Result<OcpSolution> {
    Controller::new(bundle.clone(), QpSettings::default())?.solve(x)
}

/// Successor state and applied input; an infeasible solve is an error.
pub fn step(bundle: &DesignBundle, x: &DVector<f64>, w: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let mut c = Controller::new(bundle.clone(), QpSettings::default())?;
    let (next, u, _) = c.step(x, w)?;
    Ok((next, u))
}

/// Exact feasibility of the online problem at `x`. Polyhedral problems go
/// through an LP; the ellipsoidal terminal constraint through the QP solver.
pub fn is_feasible(bundle: &DesignBundle, x: &DVector<f64>, settings: &QpSettings) -> Result<bool> {
    let problem = build_ocp(bundle, x)?;
    if problem.ball.is_some() {
        let sol = QpSolver::new(problem, settings.clone())?.solve(None);
        return Ok(sol.is_solved());
    }
    // equality rows as pairs of inequalities
    let nv = problem.num_vars();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for i in 0..problem.num_rows() {
        let mut dense = vec![0.0; nv];
        for (j, v) in problem.constraints.row(i) {
            dense[*j] = *v;
        }
        if problem.upper[i].is_finite() {
            rows.push(dense.clone());
            rhs.push(problem.upper[i]);
        }
        if problem.lower[i].is_finite() {
            rows.push(dense.iter().map(|v| -v).collect());
            rhs.push(-problem.lower[i]);
        }
    }
    let f = DMatrix::from_fn(rows.len(), nv, |i, j| rows[i][j]);
    let g = DVector::from_vec(rhs);
    match invset::lp_max(&f, &g, &vec![0.0; nv], None) {
        Ok(LpValue::Finite(_)) | Ok(LpValue::Unbounded) => Ok(true),
        Err(Error::Lp(_)) => Ok(false),
        Err(e) => Err(e),
    }
}
