#![allow(dead_code)]

use rand::Rng;
use tubempc::controller::{is_feasible, DesignBundle, SystemModel};
use tubempc::qpsolver::{QpProblem, QpSettings, SparseRows};
use tubempc::synthesis::{DesignSpec, GainSource, KSearchConfig, TerminalChoice, TerminalConfig};
use tubempc::{ConstraintPolytope, DMatrix, DVector, Zonotope};

pub fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(r, c, v)
}

/// Double integrator with |x| <= 10, |u| <= 1, |w| <= 0.16.
pub fn double_integrator() -> (SystemModel, ConstraintPolytope, ConstraintPolytope) {
    let model = SystemModel::new(
        m(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        m(2, 1, &[0.0, 1.0]),
        Zonotope::from_box(&[0.16, 0.16]),
    )
    .unwrap();
    let x = ConstraintPolytope::symmetric_box(&[10.0, 10.0]).unwrap();
    let u = ConstraintPolytope::symmetric_box(&[1.0]).unwrap();
    (model, x, u)
}

pub fn weights() -> (DMatrix<f64>, DMatrix<f64>) {
    (DMatrix::identity(2, 2), m(1, 1, &[0.01]))
}

/// Gain `LQR(I, 100)`, polyhedral terminal set, N = 10.
pub fn proposed_spec() -> DesignSpec {
    let (model, x, u) = double_integrator();
    let (q, r) = weights();
    DesignSpec {
        model,
        x,
        u,
        q,
        r,
        horizon: 10,
        control_horizon: 10,
        gain: GainSource::Lqr {
            q: DMatrix::identity(2, 2),
            r: m(1, 1, &[100.0]),
        },
        terminal: TerminalChoice::Polyhedron(None),
        tail_threshold: 1e-5,
    }
}

/// LMI gain and ellipsoidal terminal set, N = 10.
pub fn lmi_spec() -> DesignSpec {
    DesignSpec {
        gain: GainSource::Lmi(KSearchConfig::default()),
        terminal: TerminalChoice::Ellipsoid(TerminalConfig::default()),
        ..proposed_spec()
    }
}

/// Up to `count` feasible states from an `n × n` grid over `[-r, r]²`,
/// evenly spread over the feasible ones in grid order.
pub fn feasible_states(bundle: &DesignBundle, n: usize, r: f64, count: usize) -> Vec<DVector<f64>> {
    let settings = QpSettings::default();
    let mut pts = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let x = DVector::from_vec(vec![
                -r + (i as f64 + 0.5) * 2.0 * r / n as f64,
                -r + (j as f64 + 0.5) * 2.0 * r / n as f64,
            ]);
            if is_feasible(bundle, &x, &settings).unwrap() {
                pts.push(x);
            }
        }
    }
    let k = count.min(pts.len());
    (0..k).map(|j| pts[j * pts.len() / k].clone()).collect()
}

/// Strictly convex QP with `nv` variables, `nr` two-sided rows and some
/// one-sided or free bounds.
pub fn random_qp<R: Rng>(rng: &mut R, nv: usize, nr: usize) -> QpProblem {
    let l = DMatrix::from_fn(nv, nv, |_, _| rng.random_range(-1.0..1.0));
    let h = &l * l.transpose() + DMatrix::identity(nv, nv) * 0.1;
    let c = DMatrix::from_fn(nr, nv, |_, _| rng.random_range(-1.0..1.0));
    let mut lower = DVector::zeros(nr);
    let mut upper = DVector::zeros(nr);
    for i in 0..nr {
        let lo: f64 = rng.random_range(-2.0..0.0);
        let hi: f64 = rng.random_range(0.0..2.0);
        match rng.random_range(0..4) {
            0 => {
                lower[i] = f64::NEG_INFINITY;
                upper[i] = hi;
            }
            1 => {
                lower[i] = lo;
                upper[i] = f64::INFINITY;
            }
            _ => {
                lower[i] = lo;
                upper[i] = hi;
            }
        }
    }
    QpProblem {
        hessian: SparseRows::from_dense(&h),
        linear: DVector::from_fn(nv, |_, _| rng.random_range(-3.0..3.0)),
        constraints: SparseRows::from_dense(&c),
        lower,
        upper,
        ball: None,
    }
}

fn dense(rows: &SparseRows) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(rows.nrows(), rows.ncols());
    for i in 0..rows.nrows() {
        for &(j, v) in rows.row(i) {
            d[(i, j)] += v;
        }
    }
    d
}

/// Optimal value by enumerating which rows sit at a bound: every choice
/// gives an equality-constrained QP; the best feasible stationary point is
/// the optimum.
pub fn active_set_oracle(p: &QpProblem) -> f64 {
    let h = dense(&p.hessian);
    let c = dense(&p.constraints);
    let nv = p.num_vars();
    let nr = p.num_rows();
    let mut best = f64::INFINITY;
    let mut choice = vec![0u8; nr];
    loop {
        let active: Vec<(usize, f64)> = (0..nr)
            .filter_map(|i| match choice[i] {
                1 if p.lower[i].is_finite() => Some((i, p.lower[i])),
                2 if p.upper[i].is_finite() => Some((i, p.upper[i])),
                _ => None,
            })
            .collect();
        let skip = (0..nr).any(|i| (choice[i] == 1 && !p.lower[i].is_finite()) || (choice[i] == 2 && !p.upper[i].is_finite()));
        if !skip && active.len() <= nv {
            let na = active.len();
            let mut kkt = DMatrix::zeros(nv + na, nv + na);
            let mut rhs = DVector::zeros(nv + na);
            kkt.view_mut((0, 0), (nv, nv)).copy_from(&h);
            for (r, &(i, b)) in active.iter().enumerate() {
                for j in 0..nv {
                    kkt[(nv + r, j)] = c[(i, j)];
                    kkt[(j, nv + r)] = c[(i, j)];
                }
                rhs[nv + r] = b;
            }
            for j in 0..nv {
                rhs[j] = -p.linear[j];
            }
            if let Some(sol) = kkt.lu().solve(&rhs) {
                let z = sol.rows(0, nv).into_owned();
                let cz = &c * &z;
                let ok = (0..nr).all(|i| cz[i] >= p.lower[i] - 1e-9 && cz[i] <= p.upper[i] + 1e-9);
                if ok {
                    best = best.min(p.objective(z.as_slice()));
                }
            }
        }
        let mut k = 0;
        while k < nr {
            choice[k] += 1;
            if choice[k] < 3 {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
        if k == nr {
            break;
        }
    }
    best
}
