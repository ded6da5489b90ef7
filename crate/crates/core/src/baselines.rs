//! Comparison controllers and the domain-of-attraction study.
//!
//! Both baselines are reconstructions at the level of their usual short
//! descriptions:
//!
//! * reachable-set tightening: disturbance gain `K = K_t` from the LQR
//!   problem, step-dependent tightening with `H(i)`, and the maximal robust
//!   invariant terminal set for `L(N)`;
//! * tube tightening: an outer approximation `Z` of the minimal robust
//!   invariant set under a tube gain, constant tightening `X ⊖ Z`,
//!   `U ⊖ K_tube Z`, nominal state initialized at the measured state, and the
//!   nominal maximal invariant terminal set under the LQR gain.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{is_feasible, CostMatrices, DesignBundle, SystemModel};
use crate::error::{Error, Result};
use crate::invset::{self, LpValue};
use crate::qpsolver::QpSettings;
use crate::synthesis::{solve_dare, terminal_polyhedron, TerminalSet};
use crate::tightening::mrpi_approx;
use crate::{ConstraintPolytope, TighteningSchedule, Zonotope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    ChisciStyle,
    MayneStyle,
}

impl BaselineKind {
    pub fn label(&self) -> &'static str {
        match self {
            BaselineKind::ChisciStyle => "chisci-style",
            BaselineKind::MayneStyle => "mayne-style",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineDesign {
    pub kind: BaselineKind,
    /// Ready-to-run controller data; `bundle.k` is the disturbance or tube gain.
    pub bundle: DesignBundle,
    /// Tube cross-section for the tube reconstruction.
    pub tube: Option<Zonotope>,
}

/// Shared weights and horizon of a baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub horizon: usize,
}

/// Reachable-set tightening with the LQR gain for both roles.
pub fn design_chisci_style(
    model: &SystemModel,
    x: &ConstraintPolytope,
    u: &ConstraintPolytope,
    params: &BaselineParams,
) -> Result<BaselineDesign> {
    let x = x.normalize()?;
    let u = u.normalize()?;
    let (k, p) = solve_dare(model.a(), model.b(), &params.q, &params.r)?;
    let n = params.horizon;
    let schedule = TighteningSchedule::build(model.a(), model.b(), &k, model.w().generators(), &x, &u, n)?;
    let term = terminal_polyhedron(model, &k, &p, schedule.x_tight(n), schedule.u_tight(n - 1), schedule.l_n(), None)?;
    let bundle = DesignBundle {
        model: model.clone(),
        x,
        u,
        costs: CostMatrices::new(params.q.clone(), params.r.clone(), p)?,
        k: k.clone(),
        k_t: k,
        schedule,
        terminal: term.set,
        horizon: n,
        control_horizon: n,
        tail_threshold: 0.0,
    };
    Ok(BaselineDesign {
        kind: BaselineKind::ChisciStyle,
        bundle,
        tube: None,
    })
}

/// Constant tightening by an mRPI outer approximation under `k_tube`.
pub fn design_mayne_style(
    model: &SystemModel,
    x: &ConstraintPolytope,
    u: &ConstraintPolytope,
    k_tube: &DMatrix<f64>,
    eps: f64,
    params: &BaselineParams,
) -> Result<BaselineDesign> {
    let a_k = model.closed_loop(k_tube);
    if crate::linalg::spectral_radius(&a_k) >= 1.0 {
        return Err(Error::InvalidInput("tube gain does not stabilize (A, B)".into()));
    }
    let x = x.normalize()?;
    let u = u.normalize()?;
    let z = mrpi_approx(&a_k, model.w(), eps, 10_000)?;
    let x_hat = x.pontryagin_diff(&z)?;
    let u_hat = u.pontryagin_diff(&z.map(k_tube)?)?;
    if x_hat.min_offset() < crate::tightening::VANISH_TOL || u_hat.min_offset() < crate::tightening::VANISH_TOL {
        return Err(Error::ConstraintsVanish { step: 0 });
    }
    let (k_t, p) = solve_dare(model.a(), model.b(), &params.q, &params.r)?;
    let n = params.horizon;
    let admissible = x_hat.intersect(&ConstraintPolytope::new(u_hat.normals() * &k_t, u_hat.offsets().clone())?)?;
    let omega = invset::maximal_invariant_set(
        &model.closed_loop(&k_t),
        &admissible,
        None,
        invset::DEFAULT_MAX_ITER,
        invset::DEFAULT_TOL,
    )?;
    let n_dim = model.n();
    let schedule = TighteningSchedule::from_parts(
        a_k,
        Zonotope::origin(n_dim),
        vec![x_hat; n + 1],
        vec![u_hat; n + 1],
        0.0,
    );
    let bundle = DesignBundle {
        model: model.clone(),
        x,
        u,
        costs: CostMatrices::new(params.q.clone(), params.r.clone(), p)?,
        k: k_tube.clone(),
        k_t,
        schedule,
        terminal: TerminalSet::Polyhedron {
            omega: omega.clone(),
            tightened: omega,
        },
        horizon: n,
        control_horizon: n,
        tail_threshold: 0.0,
    };
    Ok(BaselineDesign {
        kind: BaselineKind::MayneStyle,
        bundle,
        tube: Some(z),
    })
}

/// Zonotope membership via the LP `G v = x`, `||v||∞ <= 1`.
pub fn zonotope_contains(z: &Zonotope, x: &DVector<f64>, tol: f64) -> bool {
    use minilp::{ComparisonOp, OptimizationDirection, Problem};
    if z.is_origin() {
        return x.amax() <= tol;
    }
    let g = z.generators();
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..g.ncols()).map(|_| p.add_var(0.0, (-1.0 - tol, 1.0 + tol))).collect();
    for i in 0..g.nrows() {
        let expr: Vec<_> = (0..g.ncols()).filter(|&j| g[(i, j)] != 0.0).map(|j| (vars[j], g[(i, j)])).collect();
        p.add_constraint(expr.as_slice(), ComparisonOp::Le, x[i] + tol);
        p.add_constraint(expr.as_slice(), ComparisonOp::Ge, x[i] - tol);
    }
    p.solve().is_ok()
}

/// Sampled invariance audit: the terminal set under `x+ = A_t x + d` with
/// `d ∈ L(N)` for the reachable-set design, and the tube under
/// `x+ = A_K x + w` for the tube design.
pub fn audit_baseline(design: &BaselineDesign, samples: usize, seed: u64) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = &design.bundle;
    let n = b.model.n();
    match (&design.tube, &b.terminal) {
        (Some(z), _) => {
            let a_k = b.model.closed_loop(&b.k);
            for _ in 0..samples {
                let v = DVector::from_fn(z.num_generators(), |_, _| rng.random_range(-1.0..=1.0));
                let x = z.point(&v)?;
                let w = crate::simloop::sample_disturbance(b.model.w(), crate::simloop::DisturbanceMode::Uniform, &mut rng);
                if !zonotope_contains(z, &(&a_k * x + w), 1e-9) {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        (None, TerminalSet::Polyhedron { omega, .. }) => {
            let a_t = b.model.closed_loop(&b.k_t);
            let (lo, hi) = bounding_box(omega)?;
            let l_n = b.schedule.l_n();
            let mut accepted = 0;
            let mut tries = 0;
            while accepted < samples && tries < samples * 1000 {
                tries += 1;
                let x = DVector::from_fn(n, |i, _| rng.random_range(lo[i]..=hi[i]));
                if !omega.contains(&x, 0.0) {
                    continue;
                }
                accepted += 1;
                let v = DVector::from_fn(l_n.num_generators(), |_, _| rng.random_range(-1.0..=1.0));
                let d = l_n.point(&v)?;
                if !omega.contains(&(&a_t * x + d), 1e-9) {
                    return Ok(false);
                }
            }
            Ok(accepted == samples)
        }
        _ => Ok(true),
    }
}

fn bounding_box(set: &ConstraintPolytope) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = set.dim();
    let mut lo = vec![0.0; n];
    let mut hi = vec![0.0; n];
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        hi[i] = match invset::support_polytope(set, &e)? {
            LpValue::Finite(v) => v,
            LpValue::Unbounded => return Err(Error::InvalidInput("set is unbounded".into())),
        };
        e[i] = -1.0;
        lo[i] = match invset::support_polytope(set, &e)? {
            LpValue::Finite(v) => -v,
            LpValue::Unbounded => return Err(Error::InvalidInput("set is unbounded".into())),
        };
    }
    Ok((lo, hi))
}

/// Rectangular grid of cell centers over `[x_lo, x_hi] × [y_lo, y_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::InvalidInput("grid has no points".into()));
        }
        if !(self.x_range.1 > self.x_range.0 && self.y_range.1 > self.y_range.0) {
            return Err(Error::InvalidInput("grid ranges must be increasing".into()));
        }
        Ok(())
    }

    pub fn cell_area(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) / self.nx as f64 * (self.y_range.1 - self.y_range.0) / self.ny as f64
    }

    /// Points in row-major order (`x` fastest).
    pub fn points(&self) -> Vec<(f64, f64)> {
        let dx = (self.x_range.1 - self.x_range.0) / self.nx as f64;
        let dy = (self.y_range.1 - self.y_range.0) / self.ny as f64;
        let mut out = Vec::with_capacity(self.nx * self.ny);
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push((self.x_range.0 + (i as f64 + 0.5) * dx, self.y_range.0 + (j as f64 + 0.5) * dy));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoaResult {
    pub points: Vec<(f64, f64, bool)>,
    pub count: usize,
    pub area: f64,
}

/// Feasibility of the online problem over the grid.
pub fn estimate_doa(bundle: &DesignBundle, grid: &GridSpec, settings: &QpSettings) -> Result<DoaResult> {
    grid.validate()?;
    if bundle.model.n() != 2 {
        return Err(Error::InvalidInput(format!(
            "domain-of-attraction study needs a 2-D state, got n = {}",
            bundle.model.n()
        )));
    }
    let flags: Vec<Result<bool>> = grid
        .points()
        .par_iter()
        .map(|&(a, b)| is_feasible(bundle, &DVector::from_vec(vec![a, b]), settings))
        .collect();
    let mut points = Vec::with_capacity(flags.len());
    for (&(a, b), f) in grid.points().iter().zip(flags) {
        points.push((a, b, f?));
    }
    let count = points.iter().filter(|p| p.2).count();
    Ok(DoaResult {
        count,
        area: count as f64 * grid.cell_area(),
        points,
    })
}

/// DOA CSV rows `x1,x2,feasible,controller`.
pub fn doa_csv(results: &[(&str, &DoaResult)]) -> String {
    let mut out = String::from("x1,x2,feasible,controller\n");
    for (label, r) in results {
        for (a, b, f) in &r.points {
            out.push_str(&format!("{a:.8e},{b:.8e},{},{label}\n", u8::from(*f)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn scalar_tube_tightening() {
        // a + b k = 0.5 with a = 1, b = 1, k = -0.5
        let model = SystemModel::new(m(1, 1, &[1.0]), m(1, 1, &[1.0]), Zonotope::from_box(&[1.0])).unwrap();
        let x = ConstraintPolytope::symmetric_box(&[10.0]).unwrap();
        let u = ConstraintPolytope::symmetric_box(&[5.0]).unwrap();
        let params = BaselineParams {
            q: m(1, 1, &[1.0]),
            r: m(1, 1, &[1.0]),
            horizon: 3,
        };
        let d = design_mayne_style(&model, &x, &u, &m(1, 1, &[-0.5]), 1e-6, &params).unwrap();
        let z = d.tube.as_ref().unwrap();
        assert!((z.support(&DVector::from_element(1, 1.0)).unwrap() - 2.0).abs() < 1e-9);
        // normalized: |x| <= 10 becomes |x/10| <= 1, tightened to 0.8 → [-8, 8]
        let xs = d.bundle.schedule.x_tight(0);
        for i in 0..xs.num_rows() {
            assert!((xs.offsets()[i] / xs.normals()[(i, 0)].abs() - 8.0).abs() < 1e-9);
        }
        assert!(audit_baseline(&d, 500, 1).unwrap());
    }

    #[test]
    fn zero_tube_is_nominal() {
        let model = SystemModel::new(m(1, 1, &[1.0]), m(1, 1, &[1.0]), Zonotope::origin(1)).unwrap();
        let x = ConstraintPolytope::symmetric_box(&[10.0]).unwrap();
        let u = ConstraintPolytope::symmetric_box(&[5.0]).unwrap();
        let params = BaselineParams {
            q: m(1, 1, &[1.0]),
            r: m(1, 1, &[1.0]),
            horizon: 3,
        };
        let d = design_mayne_style(&model, &x, &u, &m(1, 1, &[-0.5]), 1e-6, &params).unwrap();
        assert!(d.tube.unwrap().is_origin());
        assert_eq!(d.bundle.schedule.x_tight(0).offsets(), x.normalize().unwrap().offsets());
    }

    #[test]
    fn reachable_set_design_without_disturbance() {
        let model = SystemModel::new(
            m(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            m(2, 1, &[0.0, 1.0]),
            Zonotope::origin(2),
        )
        .unwrap();
        let x = ConstraintPolytope::symmetric_box(&[10.0, 10.0]).unwrap();
        let u = ConstraintPolytope::symmetric_box(&[1.0]).unwrap();
        let params = BaselineParams {
            q: DMatrix::identity(2, 2),
            r: m(1, 1, &[0.01]),
            horizon: 5,
        };
        let d = design_chisci_style(&model, &x, &u, &params).unwrap();
        let xn = x.normalize().unwrap();
        assert_eq!(d.bundle.schedule.x_tight(5).offsets(), xn.offsets());
        let (k, _) = solve_dare(model.a(), model.b(), &params.q, &params.r).unwrap();
        let un = u.normalize().unwrap();
        let admissible = xn.intersect(&ConstraintPolytope::new(un.normals() * &k, un.offsets().clone()).unwrap()).unwrap();
        let nominal = invset::maximal_invariant_set(&model.closed_loop(&k), &admissible, None, 500, 1e-9).unwrap();
        match &d.bundle.terminal {
            TerminalSet::Polyhedron { omega, .. } => {
                assert!(invset::polytope_subset(omega, &nominal, 1e-7).unwrap());
                assert!(invset::polytope_subset(&nominal, omega, 1e-7).unwrap());
            }
            _ => panic!("expected polyhedron"),
        }
    }

    #[test]
    fn grid_geometry() {
        let g = GridSpec {
            x_range: (0.0, 1.0),
            y_range: (0.0, 2.0),
            nx: 2,
            ny: 2,
        };
        assert_eq!(g.points(), vec![(0.25, 0.5), (0.75, 0.5), (0.25, 1.5), (0.75, 1.5)]);
        assert_eq!(g.cell_area(), 0.5);
        let empty = GridSpec { nx: 0, ..g };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn zonotope_membership() {
        let z = Zonotope::new(m(2, 2, &[1.0, 1.0, 0.0, 1.0])).unwrap();
        assert!(zonotope_contains(&z, &DVector::from_vec(vec![2.0, 1.0]), 1e-9));
        assert!(!zonotope_contains(&z, &DVector::from_vec(vec![2.0, -1.0]), 1e-9));
    }
}
