//! Closed-loop Monte-Carlo simulation with bounded disturbances.
//!
//! Disturbances come from `ChaCha8Rng` seeded with the 64-bit seed, one
//! stream per run (`set_stream(run)`), so every controller sees the same
//! realization for a given `(seed, run)`.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{Controller, DesignBundle};
use crate::error::{Error, Result};
use crate::qpsolver::QpSettings;
use crate::Zonotope;

pub const RNG_NAME: &str = "chacha8";
/// Slack below which a true constraint counts as violated.
pub const VIOLATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisturbanceMode {
    Zero,
    Uniform,
    Vertex,
}

impl std::str::FromStr for DisturbanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "uniform" => Ok(Self::Uniform),
            "vertex" => Ok(Self::Vertex),
            other => Err(Error::InvalidInput(format!("unknown disturbance mode {other:?} (zero|uniform|vertex)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub steps: usize,
    pub runs: usize,
    pub seed: u64,
    pub disturbance: DisturbanceMode,
    /// Run `r` starts from `initial_states[r % len]`.
    pub initial_states: Vec<DVector<f64>>,
}

impl SimConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.steps == 0 || self.runs == 0 {
            return Err(Error::InvalidInput("steps and runs must be at least 1".into()));
        }
        if self.initial_states.is_empty() {
            return Err(Error::InvalidInput("no initial state given".into()));
        }
        if let Some(x) = self.initial_states.iter().find(|x| x.len() != n) {
            return Err(Error::dims("initial state", n, x.len()));
        }
        Ok(())
    }

    pub fn initial_state(&self, run: usize) -> &DVector<f64> {
        &self.initial_states[run % self.initial_states.len()]
    }
}

/// One disturbance sample: `w = H_W v` with `v` uniform on the box, on its
/// vertices, or zero.
pub fn sample_disturbance<R: Rng>(w: &Zonotope, mode: DisturbanceMode, rng: &mut R) -> DVector<f64> {
    let m = w.num_generators();
    let v = match mode {
        DisturbanceMode::Zero => return DVector::zeros(w.dim()),
        DisturbanceMode::Uniform => DVector::from_fn(m, |_, _| rng.random_range(-1.0..=1.0)),
        DisturbanceMode::Vertex => DVector::from_fn(m, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 }),
    };
    w.generators() * v
}

/// Disturbance sequence of run `run`.
pub fn realization(w: &Zonotope, mode: DisturbanceMode, seed: u64, run: usize, steps: usize) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    (0..steps).map(|_| sample_disturbance(w, mode, &mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub w: DVector<f64>,
    pub cost: f64,
    pub iterations: usize,
    /// Slack of every row of the true `X` at `x`, then of `U` at `u`.
    pub margins: DVector<f64>,
    pub margin_min: f64,
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub run: usize,
    pub steps: Vec<StepRecord>,
    pub final_state: DVector<f64>,
    pub violations: usize,
    pub feasible: bool,
    pub infeasible_at: Option<usize>,
}

/// Simulates one run along a fixed disturbance sequence.
pub fn run_closed_loop(
    bundle: &DesignBundle,
    settings: &QpSettings,
    run: usize,
    x0: &DVector<f64>,
    disturbances: &[DVector<f64>],
) -> Result<RunLog> {
    let mut ctrl = Controller::new(bundle.clone(), settings.clone())?;
    let mut x = x0.clone();
    let mut steps = Vec::with_capacity(disturbances.len());
    let mut violations = 0;
    let mut infeasible_at = None;
    for (k, w) in disturbances.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = ctrl.step(&x, w);
        let solve_seconds = t0.elapsed().as_secs_f64();
        let (next, u, sol) = match outcome {
            Ok(v) => v,
            Err(Error::Infeasible(_)) => {
                infeasible_at = Some(k);
                break;
            }
            Err(e) => return Err(e),
        };
        let mx = bundle.x.margins(&x);
        let mu = bundle.u.margins(&u);
        let margins = DVector::from_iterator(mx.len() + mu.len(), mx.iter().chain(mu.iter()).copied());
        let margin_min = margins.min();
        if margin_min < -VIOLATION_TOL {
            violations += 1;
        }
        steps.push(StepRecord {
            x: x.clone(),
            u,
            w: w.clone(),
            cost: sol.cost,
            iterations: sol.iterations,
            margins,
            margin_min,
            solve_seconds,
        });
        x = next;
    }
    if infeasible_at.is_none() && bundle.x.margins(&x).min() < -VIOLATION_TOL {
        violations += 1;
    }
    Ok(RunLog {
        run,
        steps,
        final_state: x,
        violations,
        feasible: infeasible_at.is_none(),
        infeasible_at,
    })
}

/// All runs of `cfg` in parallel, ordered by run index.
pub fn simulate(bundle: &DesignBundle, cfg: &SimConfig, settings: &QpSettings) -> Result<Vec<RunLog>> {
    cfg.validate(bundle.model.n())?;
    (0..cfg.runs)
        .into_par_iter()
        .map(|run| {
            let ws = realization(bundle.model.w(), cfg.disturbance, cfg.seed, run, cfg.steps);
            run_closed_loop(bundle, settings, run, cfg.initial_state(run), &ws)
        })
        .collect()
}

/// Trajectory CSV with header `run,step,x_1..,u_1..,w_1..,cost,iters,margin_min`.
pub fn to_csv(logs: &[RunLog], n: usize, m: usize) -> String {
    let mut out = String::from("run,step");
    for i in 1..=n {
        let _ = write!(out, ",x_{i}");
    }
    for i in 1..=m {
        let _ = write!(out, ",u_{i}");
    }
    for i in 1..=n {
        let _ = write!(out, ",w_{i}");
    }
    out.push_str(",cost,iters,margin_min\n");
    for log in logs {
        for (k, s) in log.steps.iter().enumerate() {
            let _ = write!(out, "{},{}", log.run, k);
            for v in s.x.iter().chain(s.u.iter()).chain(s.w.iter()) {
                let _ = write!(out, ",{v:.8e}");
            }
            let _ = writeln!(out, ",{:.8e},{},{:.8e}", s.cost, s.iterations, s.margin_min);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl Stats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut count = 0usize;
        for v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
            count += 1;
        }
        (count > 0).then(|| Stats {
            min,
            max,
            mean: sum / count as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub steps: usize,
    /// Per step, per state coordinate, over the runs that reached that step.
    pub state_min: Vec<Vec<f64>>,
    pub state_max: Vec<Vec<f64>>,
    pub state_mean: Vec<Vec<f64>>,
    pub violations: usize,
    pub infeasible_runs: usize,
    pub iterations: Option<Stats>,
    pub solve_seconds: Option<Stats>,
}

pub fn aggregate_metrics(logs: &[RunLog]) -> Summary {
    let steps = logs.iter().map(|l| l.steps.len()).max().unwrap_or(0);
    let n = logs.iter().find_map(|l| l.steps.first().map(|s| s.x.len())).unwrap_or(0);
    let mut state_min = vec![vec![f64::INFINITY; n]; steps];
    let mut state_max = vec![vec![f64::NEG_INFINITY; n]; steps];
    let mut state_mean = vec![vec![0.0; n]; steps];
    let mut counts = vec![0usize; steps];
    for log in logs {
        for (k, s) in log.steps.iter().enumerate() {
            counts[k] += 1;
            for i in 0..n {
                state_min[k][i] = state_min[k][i].min(s.x[i]);
                state_max[k][i] = state_max[k][i].max(s.x[i]);
                state_mean[k][i] += s.x[i];
            }
        }
    }
    for (k, row) in state_mean.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= counts[k].max(1) as f64;
        }
    }
    Summary {
        runs: logs.len(),
        steps,
        state_min,
        state_max,
        state_mean,
        violations: logs.iter().map(|l| l.violations).sum(),
        infeasible_runs: logs.iter().filter(|l| !l.feasible).count(),
        iterations: Stats::of(logs.iter().flat_map(|l| l.steps.iter().map(|s| s.iterations as f64))),
        solve_seconds: Stats::of(logs.iter().flat_map(|l| l.steps.iter().map(|s| s.solve_seconds))),
    }
}
