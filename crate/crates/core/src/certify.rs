//! Executable versions of the feasibility and descent arguments: the shifted
//! candidate solution, its feasibility check, and closed-loop descent audits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controller::{DesignBundle, OcpSolution};
use crate::linalg::{max_eig_sym, min_eig_sym, sym_sqrt};
use crate::simloop::RunLog;
use crate::synthesis::TerminalSet;

pub const ORACLE_TOL: f64 = 1e-8;

/// Candidate solution at the successor state.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateTrajectory {
    pub inputs: Vec<DVector<f64>>,
    pub states: Vec<DVector<f64>>,
    /// `δ(i) = A_K^i w`.
    pub deltas: Vec<DVector<f64>>,
}

/// Shifts the optimal sequence at `x` to the successor `A x + B ū*(0) + w`:
/// `ū(i) = ū*(i+1) + K δ(i)` and a final `K_t` step.
pub fn build_candidate(bundle: &DesignBundle, prev: &OcpSolution, w: &DVector<f64>) -> CandidateTrajectory {
    let a = bundle.model.a();
    let b = bundle.model.b();
    let a_k = bundle.model.closed_loop(&bundle.k);
    let n_h = bundle.horizon;
    let mut deltas = Vec::with_capacity(n_h);
    let mut d = w.clone();
    for _ in 0..n_h {
        deltas.push(d.clone());
        d = &a_k * d;
    }
    let mut states = Vec::with_capacity(n_h + 1);
    let mut inputs = Vec::with_capacity(n_h);
    states.push(&prev.states[1] + w);
    for i in 0..n_h {
        let u = if i + 1 < n_h {
            &prev.inputs[i + 1] + &bundle.k * &deltas[i]
        } else {
            &bundle.k_t * &states[i]
        };
        let next = a * &states[i] + b * &u;
        inputs.push(u);
        states.push(next);
    }
    CandidateTrajectory { inputs, states, deltas }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub feasible: bool,
    /// Smallest slack over all tightened rows and the terminal constraint.
    pub worst_margin: f64,
    pub dynamics_residual: f64,
    pub terminal_margin: f64,
    /// Rows `ū(i) = K_t x̄(i)` beyond the control horizon; not part of `feasible`.
    pub gain_rows_residual: f64,
    pub violations: Vec<String>,
}

/// Slack of `x̄(N)` in the imposed terminal constraint (negative = violated).
pub fn terminal_margin(terminal: &TerminalSet, x: &DVector<f64>) -> f64 {
    match terminal {
        TerminalSet::Equality => -x.amax(),
        TerminalSet::Ellipsoid { shape, shrink } => {
            1.0 - shrink - (x.transpose() * shape * x)[(0, 0)].max(0.0).sqrt()
        }
        TerminalSet::Polyhedron { tightened, .. } => tightened.margins(x).min(),
    }
}

/// Checks the tightened state and input rows at every step and the terminal
/// constraint, all with tolerance `tol`.
pub fn verify_candidate_feasible(bundle: &DesignBundle, cand: &CandidateTrajectory, tol: f64) -> CandidateReport {
    let mut violations = Vec::new();
    let mut worst = f64::INFINITY;
    let mut dyn_res: f64 = 0.0;
    let a = bundle.model.a();
    let b = bundle.model.b();
    for i in 0..bundle.horizon {
        let next = a * &cand.states[i] + b * &cand.inputs[i];
        dyn_res = dyn_res.max((next - &cand.states[i + 1]).amax());
        let mx = bundle.schedule.x_tight(i).margins(&cand.states[i]).min();
        let mu = bundle.schedule.u_tight(i).margins(&cand.inputs[i]).min();
        if mx < -tol {
            violations.push(format!("state row at step {i} violated by {:.3e}", -mx));
        }
        if mu < -tol {
            violations.push(format!("input row at step {i} violated by {:.3e}", -mu));
        }
        worst = worst.min(mx).min(mu);
    }
    let term = terminal_margin(&bundle.terminal, &cand.states[bundle.horizon]);
    if term < -tol {
        violations.push(format!("terminal constraint violated by {:.3e}", -term));
    }
    worst = worst.min(term);
    let mut gain_res: f64 = 0.0;
    for i in bundle.control_horizon..bundle.horizon {
        gain_res = gain_res.max((&cand.inputs[i] - &bundle.k_t * &cand.states[i]).amax());
    }
    CandidateReport {
        feasible: violations.is_empty() && dyn_res <= tol.max(1e-9 * (1.0 + cand.states[0].amax())),
        worst_margin: worst,
        dynamics_residual: dyn_res,
        terminal_margin: term,
        gain_rows_residual: gain_res,
        violations,
    }
}

/// `(|q(b + M w) - q(b)|, 2||M'Qb|| ||w|| + λmax(M'QM) ||w||²)` with
/// `q(v) = v'Qv`; the first never exceeds the second.
pub fn quadratic_difference_bound(q: &DMatrix<f64>, m: &DMatrix<f64>, b: &DVector<f64>, w: &DVector<f64>) -> (f64, f64) {
    let shifted = b + m * w;
    let lhs = ((shifted.transpose() * q * &shifted)[(0, 0)] - (b.transpose() * q * b)[(0, 0)]).abs();
    let mqm = m.transpose() * q * m;
    let rhs = 2.0 * (m.transpose() * q * b).norm() * w.norm() + max_eig_sym(&mqm).max(0.0) * w.norm_squared();
    (lhs, rhs)
}

/// Candidate cost against the optimal cost and the per-step quadratic bounds:
/// returns `(V(candidate), V*(x) - x'Qx - ū*(0)'Rū*(0) + Σ bounds)`.
pub fn candidate_cost_chain(bundle: &DesignBundle, prev: &OcpSolution, cand: &CandidateTrajectory) -> (f64, f64) {
    let v_cand = bundle.cost(&cand.states, &cand.inputs);
    let q = &bundle.costs.q;
    let r = &bundle.costs.r;
    let a_k = bundle.model.closed_loop(&bundle.k);
    let w = &cand.deltas[0];
    let x0 = &prev.states[0];
    let u0 = &prev.inputs[0];
    let mut bound = prev.cost - (x0.transpose() * q * x0)[(0, 0)] - (u0.transpose() * r * u0)[(0, 0)];
    let n_h = bundle.horizon;
    let mut power = DMatrix::<f64>::identity(a_k.nrows(), a_k.ncols());
    for i in 0..n_h.saturating_sub(1) {
        let (_, sx) = quadratic_difference_bound(q, &power, &prev.states[i + 1], w);
        let kp = &bundle.k * &power;
        let (_, su) = quadratic_difference_bound(r, &kp, &prev.inputs[i + 1], w);
        bound += sx + su;
        power = &a_k * power;
    }
    // the K_t tail is absorbed by the terminal cost decrease
    let (_, sp) = quadratic_difference_bound(&bundle.costs.p, &power, &prev.states[n_h], w);
    bound += sp;
    (v_cand, bound)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentReport {
    pub steps_checked: usize,
    /// Largest `V(x+) - V(x) + x'Qx` over the run (should be ≤ tolerance).
    pub worst_descent: f64,
    /// Smallest `V(x) - λmin(Q)||x||²`.
    pub worst_lower_bound: f64,
    pub max_state_norm: f64,
    pub max_cost: f64,
    pub failures: Vec<String>,
    pub passed: bool,
}

/// Descent of the optimal cost along a logged run. With `nominal` the
/// per-step inequality `V(x+) - V(x) <= -x'Qx + tol` is asserted; otherwise
/// only boundedness of the state and the cost.
pub fn descent_audit(bundle: &DesignBundle, log: &RunLog, nominal: bool, tol: f64) -> DescentReport {
    let q = &bundle.costs.q;
    let lam = min_eig_sym(q);
    let mut failures = Vec::new();
    let mut worst_descent = f64::NEG_INFINITY;
    let mut worst_lower = f64::INFINITY;
    let mut max_norm: f64 = 0.0;
    let mut max_cost: f64 = 0.0;
    for (k, s) in log.steps.iter().enumerate() {
        let xn = s.x.norm();
        max_norm = max_norm.max(xn);
        max_cost = max_cost.max(s.cost);
        let lb = s.cost - lam * xn * xn;
        worst_lower = worst_lower.min(lb);
        if lb < -tol {
            failures.push(format!("step {k}: cost {:.6e} below lambda_min(Q)||x||^2", s.cost));
        }
        if nominal {
            if let Some(next) = log.steps.get(k + 1) {
                let d = next.cost - s.cost + (s.x.transpose() * q * &s.x)[(0, 0)];
                worst_descent = worst_descent.max(d);
                if d > tol {
                    failures.push(format!("step {k}: descent violated by {d:.3e}"));
                }
            }
        }
    }
    if !nominal {
        let bounded = max_norm.is_finite() && max_cost.is_finite();
        if !bounded {
            failures.push("state or cost diverged".into());
        }
    }
    if !log.feasible {
        failures.push(format!("run stopped by an infeasible solve at step {:?}", log.infeasible_at));
    }
    DescentReport {
        steps_checked: log.steps.len(),
        worst_descent,
        worst_lower_bound: worst_lower,
        max_state_norm: max_norm,
        max_cost,
        passed: failures.is_empty(),
        failures,
    }
}

/// Terminal set inflated by `factor` (fault injection for the audits).
pub fn inflate_terminal(terminal: &TerminalSet, factor: f64) -> TerminalSet {
    match terminal {
        TerminalSet::Equality => TerminalSet::Equality,
        TerminalSet::Ellipsoid { shape, shrink } => TerminalSet::Ellipsoid {
            shape: shape / (factor * factor),
            shrink: *shrink / factor,
        },
        TerminalSet::Polyhedron { omega, tightened } => TerminalSet::Polyhedron {
            omega: omega.with_offsets(omega.offsets() * factor).expect("scaled offsets keep the row count"),
            tightened: tightened.with_offsets(tightened.offsets() * factor).expect("scaled offsets keep the row count"),
        },
    }
}

/// `||P^{1/2} x||` for the terminal shape.
pub fn ellipsoid_norm(shape: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (sym_sqrt(shape) * x).norm()
}
