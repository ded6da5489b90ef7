//! Acceptance run: one line per criterion, nonzero exit if any fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tubempc::baselines::{self, BaselineParams, GridSpec};
use tubempc::certify;
use tubempc::cli::{self, ControllerKind, SimulateArgs};
use tubempc::controller::{self, CostMatrices, DesignBundle, SystemModel};
use tubempc::linalg::{min_eig_sym, spectral_radius, sym_inv_sqrt};
use tubempc::qpsolver::{solve_qp, QpSettings};
use tubempc::simloop::{self, DisturbanceMode, SimConfig};
use tubempc::synthesis::{self, KSearchConfig, TerminalConfig, TerminalSet};
use tubempc::tightening::tail_norm;
use tubempc::{ConstraintPolytope, DMatrix, DVector, TighteningSchedule, Zonotope};

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_polytope(rng: &mut ChaCha8Rng) -> ConstraintPolytope {
    let k = rng.random_range(3..=8);
    let mut rows = Vec::new();
    let mut f = Vec::new();
    for i in 0..k {
        let th = std::f64::consts::TAU * i as f64 / k as f64 + rng.random_range(-0.3..0.3);
        let s = rng.random_range(0.5..2.0);
        rows.extend([s * th.cos(), s * th.sin()]);
        f.push(rng.random_range(1.0..5.0));
    }
    ConstraintPolytope::new(m(k, 2, &rows), DVector::from_vec(f)).unwrap()
}

fn random_zonotope(rng: &mut ChaCha8Rng, max_gens: usize, scale: f64) -> Zonotope {
    let g = rng.random_range(0..=max_gens);
    Zonotope::new(DMatrix::from_fn(2, g, |_, _| rng.random_range(-scale..scale))).unwrap()
}

/// All `2^M` sign images; the brute-force vertex oracle.
fn sign_images(z: &Zonotope) -> Vec<DVector<f64>> {
    let g = z.generators();
    let k = g.ncols();
    (0..1usize << k)
        .map(|mask| {
            let mut p = DVector::zeros(g.nrows());
            for j in 0..k {
                let s = if mask >> j & 1 == 1 { 1.0 } else { -1.0 };
                p += g.column(j) * s;
            }
            p
        })
        .collect()
}

fn c1_set_oracles() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let c = random_polytope(&mut rng);
        let d = random_zonotope(&mut rng, 4, 0.5);
        let diff = c.pontryagin_diff(&d).unwrap();
        let verts = sign_images(&d);
        for i in 0..c.num_rows() {
            let row = c.normals().row(i).transpose();
            let h = verts.iter().map(|v| row.dot(v)).fold(if verts.is_empty() { 0.0 } else { f64::NEG_INFINITY }, f64::max);
            worst = worst.max((diff.offsets()[i] - (c.offsets()[i] - h)).abs());
        }
        for _ in 0..5 {
            let dir = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let h = verts.iter().map(|v| dir.dot(v)).fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max((tubempc::setcalc::support_zonotope(&d, &dir).unwrap() - h).abs());
        }
    }
    let el = t0.elapsed();
    outcome(
        worst <= 1e-9 && el < Duration::from_secs(10),
        format!("max deviation {worst:.2e} over 200 instances, {:.2} s", el.as_secs_f64()),
    )
}

fn sample_in(set: &ConstraintPolytope, rng: &mut ChaCha8Rng, r: f64) -> Option<DVector<f64>> {
    for _ in 0..1000 {
        let p = DVector::from_fn(2, |_, _| rng.random_range(-r..r));
        if set.contains(&p, 0.0) {
            return Some(p);
        }
    }
    None
}

fn c2_property_one() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0usize;
    let mut checked = 0usize;
    let instances = 20;
    for _ in 0..instances {
        let c = random_polytope(&mut rng);
        let d1 = random_zonotope(&mut rng, 2, 0.3);
        let d2 = random_zonotope(&mut rng, 2, 0.3);
        let d = d1.minkowski_sum(&d2).unwrap();
        let inner = c.pontryagin_diff(&d).unwrap();
        if inner.min_offset() <= 0.0 {
            continue;
        }
        // (C ⊖ D) ⊕ D ⊆ C
        for _ in 0..10_000 {
            let Some(p) = sample_in(&inner, &mut rng, 5.0) else { break };
            let v = DVector::from_fn(d.num_generators(), |_, _| rng.random_range(-1.0..=1.0));
            let q = p + d.point(&v).unwrap();
            checked += 1;
            if !c.contains(&q, 1e-9) {
                violations += 1;
            }
        }
        // C ⊖ (D1 ⊕ D2) ⊆ (C ⊖ D1) ⊖ D2
        let nested = c.pontryagin_diff(&d1).unwrap().pontryagin_diff(&d2).unwrap();
        for _ in 0..10_000 {
            let p = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
            checked += 1;
            if inner.contains(&p, 0.0) && !nested.contains(&p, 1e-9) {
                violations += 1;
            }
        }
    }
    outcome(violations == 0, format!("{violations} violations in {checked} samples"))
}

fn c3_synthesis_audit() -> Outcome {
    let t0 = Instant::now();
    let (model, x, u) = double_integrator();
    let (q, r) = weights();
    let x = x.normalize().unwrap();
    let u = u.normalize().unwrap();
    let res = match synthesis::synth_k(&model, &x, &u, &KSearchConfig::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("synth_k failed: {e}")),
    };
    let a_k = model.closed_loop(&res.k);
    let rho = spectral_radius(&a_k);
    let half_inv = sym_inv_sqrt(&res.p_tilde).unwrap();
    let verts = sign_images(model.w());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_level: f64 = 0.0;
    for i in 0..10_000 {
        let dir = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let rad: f64 = if i % 4 == 0 { 1.0 } else { rng.random_range(0.0..1.0f64).sqrt() };
        let x0 = &half_inv * dir.normalize() * rad;
        let w = if i % 2 == 0 {
            verts[rng.random_range(0..verts.len())].clone()
        } else {
            DVector::from_fn(2, |_, _| rng.random_range(-0.16..0.16))
        };
        let x1 = &a_k * x0 + w;
        worst_level = worst_level.max((x1.transpose() * &res.p_tilde * &x1)[(0, 0)]);
    }
    let sched = TighteningSchedule::build(model.a(), model.b(), &res.k, model.w().generators(), &x, &u, 10).unwrap();
    let term = match synthesis::synth_terminal(&model, sched.x_tight(10), sched.u_tight(9), sched.l_n(), &q, &r, &TerminalConfig::default()) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("synth_terminal failed: {e}")),
    };
    let gap = min_eig_sym(&synthesis::lyapunov_gap(&model, &q, &r, &term.k_t, &term.p));
    let el = t0.elapsed();
    let pass = rho < 1.0 && res.gamma <= 1.0 && worst_level <= 1.0 + 1e-9 && gap >= -1e-8 && el < Duration::from_secs(60);
    outcome(
        pass,
        format!(
            "lambda {:.2}, gamma {:.6}, rho(A+BK) {rho:.4}, max level after step {worst_level:.6}, terminal residual min eig {gap:.3e}, {:.1} s",
            res.lambda,
            res.gamma,
            el.as_secs_f64()
        ),
    )
}

fn c4_dare() -> Outcome {
    let one = m(1, 1, &[1.0]);
    let (_, p) = synthesis::solve_dare(&one, &one, &one, &one).unwrap();
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let scalar_err = (p[(0, 0)] - phi).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for i in 0..20 {
        let n = 1 + i * 11 / 19;
        let mi = rng.random_range(1..=n.min(3));
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)) * (1.5 / (n as f64).sqrt());
        let b = DMatrix::from_fn(n, mi, |_, _| rng.random_range(-1.0..1.0));
        let q = DMatrix::identity(n, n);
        let r = DMatrix::identity(mi, mi);
        match synthesis::solve_dare(&a, &b, &q, &r) {
            Ok((_, p)) => worst = worst.max(synthesis::dare_residual(&a, &b, &q, &r, &p).amax()),
            Err(_) => failures += 1,
        }
    }
    outcome(
        scalar_err <= 1e-9 && worst <= 1e-9 && failures == 0,
        format!("scalar error {scalar_err:.2e}, worst residual {worst:.2e} on 20 systems (n <= 12), {failures} failures"),
    )
}

fn c5_qp() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let settings = QpSettings::default();
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let nv = 2 + i % 5;
        let p = random_qp(&mut rng, nv, 1 + i % 6);
        let oracle = active_set_oracle(&p);
        let sol = solve_qp(&p, None, &settings).unwrap();
        worst = worst.max((sol.objective - oracle).abs());
    }
    let bundle = scalar_bundle();
    let sol = controller::solve_ocp(&bundle, &DVector::from_element(1, 2.0)).unwrap();
    let du = (sol.inputs[0][0] + 2.0).abs();
    let dv = (sol.cost - 8.0).abs();
    outcome(
        worst <= 1e-4 && du <= 1e-4 && dv <= 1e-4,
        format!("worst objective gap {worst:.2e} on 50 QPs; scalar OCP u error {du:.2e}, V error {dv:.2e}"),
    )
}

fn scalar_bundle() -> DesignBundle {
    let one = DMatrix::from_element(1, 1, 1.0);
    let model = SystemModel::new(one.clone(), one.clone(), Zonotope::origin(1)).unwrap();
    let x = ConstraintPolytope::symmetric_box(&[10.0]).unwrap().normalize().unwrap();
    let u = ConstraintPolytope::symmetric_box(&[10.0]).unwrap().normalize().unwrap();
    let k = DMatrix::from_element(1, 1, -0.5);
    let schedule = TighteningSchedule::build(&one, &one, &k, &DMatrix::zeros(1, 0), &x, &u, 1).unwrap();
    DesignBundle {
        model,
        x,
        u,
        costs: CostMatrices::new(one.clone(), one.clone(), one.clone()).unwrap(),
        k: k.clone(),
        k_t: k,
        schedule,
        terminal: TerminalSet::Equality,
        horizon: 1,
        control_horizon: 1,
        tail_threshold: 1e-5,
    }
}

fn c6_ensemble(bundle: &DesignBundle) -> Outcome {
    let t0 = Instant::now();
    let starts = feasible_states(bundle, 20, 10.0, 50);
    let mut viol = 0;
    let mut infeasible = 0;
    for mode in [DisturbanceMode::Uniform, DisturbanceMode::Vertex] {
        let cfg = SimConfig {
            steps: 50,
            runs: 1000,
            seed: 6,
            disturbance: mode,
            initial_states: starts.clone(),
        };
        let logs = simloop::simulate(bundle, &cfg, &QpSettings::default()).unwrap();
        let s = simloop::aggregate_metrics(&logs);
        viol += s.violations;
        infeasible += s.infeasible_runs;
    }
    let el = t0.elapsed();
    outcome(
        starts.len() == 50 && viol == 0 && infeasible == 0 && el < Duration::from_secs(300),
        format!(
            "2 x 1000 runs x 50 steps from {} starts: {infeasible} infeasible runs, {viol} violations, {:.0} s",
            starts.len(),
            el.as_secs_f64()
        ),
    )
}

fn c7_candidate(bundles: &[(&str, &DesignBundle)]) -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (name, bundle) in bundles {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let settings = QpSettings::default();
        let mut infeasible = 0;
        let mut worst_gap = f64::NEG_INFINITY;
        let mut worst_margin = f64::INFINITY;
        let mut done = 0;
        while done < 100 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-10.0..10.0));
            if !controller::is_feasible(bundle, &x, &settings).unwrap() {
                continue;
            }
            let v = DVector::from_fn(2, |_, _| rng.random_range(-1.0..=1.0));
            let w = bundle.model.w().point(&v).unwrap();
            let sol = controller::solve_ocp(bundle, &x).unwrap();
            let cand = certify::build_candidate(bundle, &sol, &w);
            let rep = certify::verify_candidate_feasible(bundle, &cand, 1e-6);
            worst_margin = worst_margin.min(rep.worst_margin);
            if !rep.feasible {
                infeasible += 1;
            }
            let xp = bundle.model.step(&x, sol.first_input(), &w);
            let next = controller::solve_ocp(bundle, &xp).unwrap();
            let v_cand = bundle.cost(&cand.states, &cand.inputs);
            worst_gap = worst_gap.max(next.cost - v_cand);
            done += 1;
        }
        pass &= infeasible == 0 && worst_gap <= 1e-6;
        details.push(format!(
            "{name}: {infeasible}/100 infeasible candidates, worst margin {worst_margin:.2e}, max V*(x+) - V(cand) {worst_gap:.2e}"
        ));
    }
    outcome(pass, details.join("; "))
}

fn c8_descent(bundle: &DesignBundle) -> Outcome {
    let starts = feasible_states(bundle, 20, 10.0, 20);
    let cfg = SimConfig {
        steps: 40,
        runs: 20,
        seed: 8,
        disturbance: DisturbanceMode::Zero,
        initial_states: starts,
    };
    let logs = simloop::simulate(bundle, &cfg, &QpSettings::default()).unwrap();
    let mut worst_d = f64::NEG_INFINITY;
    let mut worst_lb = f64::INFINITY;
    let mut failed = 0;
    for log in &logs {
        let r = certify::descent_audit(bundle, log, true, 1e-6);
        worst_d = worst_d.max(r.worst_descent);
        worst_lb = worst_lb.min(r.worst_lower_bound);
        if !r.passed {
            failed += 1;
        }
    }
    outcome(
        failed == 0,
        format!("{failed}/20 runs failed; max V(x+) - V(x) + x'Qx = {worst_d:.2e}, min V(x) - lmin(Q)|x|^2 = {worst_lb:.2e}"),
    )
}

fn c9_tail() -> Outcome {
    let t = tail_norm(&m(2, 2, &[0.9, 0.0, 0.0, 0.5]), 60);
    let expect = 0.9f64.powi(118);
    let rel = (t - expect).abs() / expect;
    outcome(rel <= 1e-3, format!("tail norm {t:.6e}, expected {expect:.6e}, relative error {rel:.2e}"))
}

fn c10_doa(proposed: &DesignBundle) -> Outcome {
    let t0 = Instant::now();
    let (model, x, u) = double_integrator();
    let (q, r) = weights();
    let params = BaselineParams { q, r: r.clone(), horizon: 10 };
    let grid = GridSpec {
        x_range: (-10.0, 10.0),
        y_range: (-10.0, 10.0),
        nx: 100,
        ny: 100,
    };
    let settings = QpSettings::default();
    let chisci = baselines::design_chisci_style(&model, &x, &u, &params).unwrap();
    let (k_tube, _) = synthesis::solve_dare(model.a(), model.b(), &m(2, 2, &[100.0, 0.0, 0.0, 0.0]), &r).unwrap();
    let mayne = baselines::design_mayne_style(&model, &x, &u, &k_tube, 1e-3, &params).unwrap();
    let cp = baselines::estimate_doa(proposed, &grid, &settings).unwrap().count;
    let cc = baselines::estimate_doa(&chisci.bundle, &grid, &settings).unwrap().count;
    let cm = baselines::estimate_doa(&mayne.bundle, &grid, &settings).unwrap().count;
    let el = t0.elapsed();
    let ordered = cp >= cc && cp >= cm;
    let note = if ordered { "ordering holds" } else { "soft: ordering violated, counts reported" };
    outcome(
        el < Duration::from_secs(600),
        format!(
            "100x100 grid counts: proposed {cp} (K = LQR(I, 100), polyhedral terminal), chisci-style {cc} (K = K_t = LQR(I, 0.01)), mayne-style {cm} (tube K = LQR(diag(100, 0), 0.01)); {note}; {:.0} s",
            el.as_secs_f64()
        ),
    )
}

fn scale_config() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 12;
    let mi = 6;
    let qr = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr();
    let basis = qr.q();
    let eig = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| 0.3 + 0.55 * i as f64 / (n - 1) as f64));
    let a = &basis * eig * basis.transpose();
    let b = DMatrix::from_fn(n, mi, |_, _| rng.random_range(-1.0..1.0));
    let h_w = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-0.1..0.1));
    let rows = |mat: &DMatrix<f64>| -> Vec<Vec<f64>> { mat.row_iter().map(|r| r.iter().copied().collect()).collect() };
    let bx = |k: usize, bound: f64| {
        let mut f = Vec::new();
        for i in 0..k {
            let mut e = vec![0.0; k];
            e[i] = 1.0;
            f.push(e.clone());
            e[i] = -1.0;
            f.push(e);
        }
        serde_json::json!({"F": f, "f": vec![bound; 2 * k]})
    };
    serde_json::json!({
        "A": rows(&a), "B": rows(&b), "H_W": rows(&h_w),
        "X": bx(n, 5.0), "U": bx(mi, 1.0),
        "Q": 1.0, "R": 0.1, "N": 60,
        "lambda_grid": [0.5, 0.7, 0.8, 0.9, 0.95],
        "terminal": "equality"
    })
    .to_string()
}

fn c11_scale() -> Outcome {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("scale.json");
    std::fs::write(&config, scale_config()).unwrap();
    let bundle_path = dir.path().join("bundle.json");
    if let Err(e) = cli::cmd_synth(&config, &bundle_path, &mut std::io::sink()) {
        return outcome(false, format!("synth failed (exit {}): {}", e.code, e.message));
    }
    if let Err(e) = cli::cmd_check(&bundle_path, &mut std::io::sink()) {
        return outcome(false, format!("check failed (exit {}): {}", e.code, e.message));
    }
    let (_, bundle) = cli::load_bundle(&bundle_path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut starts = Vec::new();
    while starts.len() < 4 {
        let x = DVector::from_fn(12, |_, _| rng.random_range(-4.5..4.5));
        if controller::is_feasible(&bundle, &x, &QpSettings::default()).unwrap() {
            starts.push(x.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(","));
        }
    }
    let run = |kind: ControllerKind, out: &Path| {
        cli::cmd_simulate(&SimulateArgs {
            bundle: bundle_path.clone(),
            steps: 10,
            runs: 100,
            seed: 11,
            disturbance: DisturbanceMode::Uniform,
            controller: kind,
            x0: Some(starts.join(";")),
            out: out.to_path_buf(),
            force: false,
        }, &mut std::io::sink())
    };
    let rmpc_dir = dir.path().join("rmpc");
    let nom_dir = dir.path().join("nominal");
    if let Err(e) = run(ControllerKind::Rmpc, &rmpc_dir) {
        return outcome(false, format!("simulate failed (exit {}): {}", e.code, e.message));
    }
    if let Err(e) = run(ControllerKind::Nominal, &nom_dir) {
        return outcome(false, format!("nominal simulate failed (exit {}): {}", e.code, e.message));
    }
    let read = |d: &Path, f: &str| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(d.join(f)).unwrap()).unwrap()
    };
    let summary = read(&rmpc_dir, "summary.json");
    let viol = summary["summary"]["violations"].as_u64().unwrap();
    let infeasible = summary["summary"]["infeasible_runs"].as_u64().unwrap();
    let t_r = read(&rmpc_dir, "timing.json");
    let t_n = read(&nom_dir, "timing.json");
    let mean = |v: &serde_json::Value, k: &str| v[k]["mean"].as_f64().unwrap();
    let (sr, sn) = (mean(&t_r, "solve_seconds"), mean(&t_n, "solve_seconds"));
    let (ir, inn) = (mean(&t_r, "iterations"), mean(&t_n, "iterations"));
    outcome(
        viol == 0 && infeasible == 0,
        format!(
            "12 states, 6 inputs, N = 60, terminal equality: {viol} violations, {infeasible} infeasible over 100 runs; mean solve RMPC {:.2} ms vs nominal {:.2} ms ({}), mean iterations {ir:.1} vs {inn:.1}; {:.0} s",
            sr * 1e3,
            sn * 1e3,
            if sr >= sn { "RMPC >= nominal" } else { "RMPC < nominal" },
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn c12_determinism(bundle_file: &Path) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &Path| {
        cli::cmd_simulate(&SimulateArgs {
            bundle: bundle_file.to_path_buf(),
            steps: 30,
            runs: 20,
            seed: 12,
            disturbance: DisturbanceMode::Uniform,
            controller: ControllerKind::Rmpc,
            x0: Some("-5,2;3,-1".into()),
            out: out.to_path_buf(),
            force: false,
        }, &mut std::io::sink())
        .unwrap();
        std::fs::read(out.join("trajectories.csv")).unwrap()
    };
    let a = run(&dir.path().join("a"));
    let b = run(&dir.path().join("b"));
    outcome(a == b && !a.is_empty(), format!("two runs, {} bytes each, identical: {}", a.len(), a == b))
}

fn main() {
    let proposed = synthesis::synthesize(&proposed_spec()).expect("proposed design").bundle;
    let lmi = synthesis::synthesize(&lmi_spec()).expect("LMI design").bundle;
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/double_integrator.json");
    let bundle_path = dir.path().join("bundle.json");
    cli::cmd_synth(&cfg_path, &bundle_path, &mut std::io::sink()).expect("synth of the double integrator config");

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("set-calculus oracle equivalence", Box::new(c1_set_oracles)),
        ("round-trip and nesting inclusions", Box::new(c2_property_one)),
        ("gain and terminal synthesis audit", Box::new(c3_synthesis_audit)),
        ("Riccati solver correctness", Box::new(c4_dare)),
        ("QP solver equivalence", Box::new(c5_qp)),
        ("recursive feasibility ensemble", Box::new(|| c6_ensemble(&proposed))),
        ("candidate-solution oracle", Box::new(|| c7_candidate(&[("lqr/polyhedron", &proposed), ("lmi/ellipsoid", &lmi)]))),
        ("nominal cost descent", Box::new(|| c8_descent(&proposed))),
        ("tail-norm anchor", Box::new(c9_tail)),
        ("domain-of-attraction comparison", Box::new(|| c10_doa(&proposed))),
        ("12-state scale run", Box::new(c11_scale)),
        ("simulation determinism", Box::new(|| c12_determinism(&bundle_path))),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("criterion {:>2} {} {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
