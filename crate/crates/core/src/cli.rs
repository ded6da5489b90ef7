//! Batch commands over JSON configs and design bundles.
//!
//! Exit codes: 0 success, 1 I/O or validation error, 2 synthesis infeasible,
//! 3 assumption audit failed, 4 RMPC problem infeasible during simulation.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{self, BaselineDesign, BaselineParams, DoaResult, GridSpec};
use crate::controller::{CostMatrices, DesignBundle, SystemModel};
use crate::error::Error;
use crate::invset::{self, LpValue};
use crate::qpsolver::QpSettings;
use crate::setcalc::{matrix_from_rows, rows_of};
use crate::simloop::{self, DisturbanceMode, SimConfig, Stats, Summary};
use crate::synthesis::{
    self, AssumptionReport, DesignSpec, GainSource, KSearchConfig, TerminalChoice, TerminalConfig, TerminalSet,
};
use crate::{ConstraintPolytope, TighteningSchedule, Zonotope};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_SYNTHESIS: i32 = 2;
pub const EXIT_AUDIT: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;

pub const BUNDLE_FORMAT: &str = "tubempc-bundle/1";
pub const TOL_ENV: &str = "TUBEMPC_TOL";
pub const DEFAULT_TOL: f64 = 1e-4;

/// Failure of a command together with its exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn with_code(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// Exit code for a library error raised while designing a controller.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. }
        | Error::Json(_)
        | Error::InvalidInput(_)
        | Error::DimensionMismatch { .. }
        | Error::NonFinite(_)
        | Error::OriginNotInterior { .. }
        | Error::TooManyGenerators { .. }
        | Error::TooManyUnknowns { .. }
        | Error::NonSymmetricBlock { .. } => EXIT_INPUT,
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        _ => EXIT_SYNTHESIS,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::with_code(exit_code(&e), e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

// ---------------------------------------------------------------- config file

/// A matrix given as rows, or a scalar meaning `s I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixValue {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixValue {
    fn resolve(&self, key: &str, n: usize) -> CliResult<DMatrix<f64>> {
        let m = match self {
            MatrixValue::Scalar(s) => DMatrix::identity(n, n) * *s,
            MatrixValue::Rows(rows) => matrix(key, rows)?,
        };
        if m.shape() != (n, n) {
            return Err(CliError::input(format!("{key}: expected {n}x{n}, got {}x{}", m.nrows(), m.ncols())));
        }
        Ok(m)
    }
}

fn matrix(key: &str, rows: &[Vec<f64>]) -> CliResult<DMatrix<f64>> {
    let m = matrix_from_rows(rows).map_err(|e| CliError::input(format!("{key}: {e}")))?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CliError::input(format!("{key}: non-finite entry")));
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalKind {
    Equality,
    #[default]
    Ellipsoid,
    Polyhedron,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainKind {
    #[default]
    Lmi,
    Lqr,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub global: Option<f64>,
    pub qp_tol: Option<f64>,
    pub qp_penalty: Option<f64>,
    pub qp_max_iter: Option<usize>,
    pub lmi_margin: Option<f64>,
    pub tail_threshold: Option<f64>,
}

/// Weights of the reconstructed comparison controllers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(rename = "tube_Q")]
    pub tube_q: Option<MatrixValue>,
    #[serde(rename = "tube_R")]
    pub tube_r: Option<MatrixValue>,
    pub mrpi_eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfigFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "H_W")]
    pub h_w: Vec<Vec<f64>>,
    #[serde(rename = "X")]
    pub x: ConstraintPolytope,
    #[serde(rename = "U")]
    pub u: ConstraintPolytope,
    #[serde(rename = "Q")]
    pub q: MatrixValue,
    #[serde(rename = "R")]
    pub r: MatrixValue,
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "Nc", default)]
    pub control_horizon: Option<usize>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub terminal: TerminalKind,
    #[serde(default)]
    pub terminal_file: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Option<ToleranceConfig>,
    #[serde(rename = "K_source", default)]
    pub gain_source: GainKind,
    #[serde(rename = "K_Q", default)]
    pub gain_q: Option<MatrixValue>,
    #[serde(rename = "K_R", default)]
    pub gain_r: Option<MatrixValue>,
    #[serde(default)]
    pub baseline: Option<BaselineConfig>,
}

/// Tolerances after defaults and the environment override are applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub global: f64,
    pub qp_tol: f64,
    pub qp_penalty: f64,
    pub qp_max_iter: usize,
    pub lmi_margin: f64,
    pub tail_threshold: f64,
}

impl Tolerances {
    pub fn qp_settings(&self) -> QpSettings {
        QpSettings {
            tol: self.qp_tol,
            penalty: self.qp_penalty,
            max_iter: self.qp_max_iter,
            ..QpSettings::default()
        }
    }
}

/// Reads `TUBEMPC_TOL`, if set.
pub fn env_tolerance() -> CliResult<Option<f64>> {
    match std::env::var(TOL_ENV) {
        Ok(s) => match s.trim().parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Some(v)),
            _ => Err(CliError::input(format!("{TOL_ENV}: expected a positive number, got {s:?}"))),
        },
        Err(_) => Ok(None),
    }
}

/// Everything a validated config resolves to.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub spec: DesignSpec,
    pub tolerances: Tolerances,
    pub baseline: BaselineParams,
    pub tube_gain: DMatrix<f64>,
    pub mrpi_eps: f64,
    pub gain_kind: GainKind,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn positive(key: &str, v: f64) -> CliResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::input(format!("{key}: must be positive, got {v}")))
    }
}

impl SystemConfigFile {
    /// Parses a config; errors name the offending key.
    pub fn parse(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                CliError::input(format!("config: {inner}"))
            } else {
                CliError::input(format!("config key {path}: {inner}"))
            }
        })
    }

    /// Checks every shape and builds the design problem. `base` resolves a
    /// relative `terminal_file`.
    pub fn resolve(&self, base: &Path, env_tol: Option<f64>, sha256: String) -> CliResult<ResolvedConfig> {
        let a = matrix("A", &self.a)?;
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(CliError::input(format!("A: expected a square matrix, got {}x{}", a.nrows(), a.ncols())));
        }
        let b = matrix("B", &self.b)?;
        if b.nrows() != n || b.ncols() == 0 {
            return Err(CliError::input(format!("B: expected {n} rows, got {}x{}", b.nrows(), b.ncols())));
        }
        let m = b.ncols();
        let h_w = matrix("H_W", &self.h_w)?;
        if h_w.nrows() != n || h_w.ncols() == 0 {
            return Err(CliError::input(format!("H_W: expected {n} rows, got {}x{}", h_w.nrows(), h_w.ncols())));
        }
        if self.x.dim() != n {
            return Err(CliError::input(format!("X: F must have {n} columns, got {}", self.x.dim())));
        }
        if self.u.dim() != m {
            return Err(CliError::input(format!("U: F must have {m} columns, got {}", self.u.dim())));
        }
        let q = self.q.resolve("Q", n)?;
        let r = self.r.resolve("R", m)?;
        if self.horizon == 0 {
            return Err(CliError::input("N: must be at least 1"));
        }
        let nc = self.control_horizon.unwrap_or(self.horizon);
        if nc == 0 || nc > self.horizon {
            return Err(CliError::input(format!("Nc: must lie in [1, {}], got {nc}", self.horizon)));
        }
        let t = self.tolerances.clone().unwrap_or_default();
        let global = positive("tolerances.global", env_tol.or(t.global).unwrap_or(DEFAULT_TOL))?;
        let qp_tol = positive("tolerances.qp_tol", t.qp_tol.unwrap_or(global))?;
        let tolerances = Tolerances {
            global,
            qp_tol,
            qp_penalty: positive("tolerances.qp_penalty", t.qp_penalty.unwrap_or(15.0))?,
            qp_max_iter: t.qp_max_iter.unwrap_or(20_000).max(1),
            lmi_margin: positive("tolerances.lmi_margin", t.lmi_margin.unwrap_or(crate::lmisolve::DEFAULT_MARGIN))?,
            tail_threshold: positive("tolerances.tail_threshold", t.tail_threshold.unwrap_or(0.1 * qp_tol))?,
        };

        let mut kcfg = KSearchConfig::default();
        if let Some(v) = self.rho {
            kcfg.rho = v;
        }
        if let Some(v) = self.mu {
            kcfg.mu = v;
        }
        if let Some(g) = &self.lambda_grid {
            kcfg.lambda_grid = g.clone();
        }
        kcfg.margin = tolerances.lmi_margin;
        kcfg.validate().map_err(|e| CliError::input(format!("rho/mu/lambda_grid: {e}")))?;

        let gain = match self.gain_source {
            GainKind::Lmi => {
                if self.gain_q.is_some() || self.gain_r.is_some() {
                    return Err(CliError::input("K_Q/K_R: only used with K_source = \"lqr\""));
                }
                GainSource::Lmi(kcfg.clone())
            }
            GainKind::Lqr => GainSource::Lqr {
                q: self.gain_q.as_ref().map_or(Ok(q.clone()), |v| v.resolve("K_Q", n))?,
                r: self.gain_r.as_ref().map_or(Ok(r.clone()), |v| v.resolve("K_R", m))?,
            },
        };
        if self.terminal_file.is_some() && self.terminal != TerminalKind::Polyhedron {
            return Err(CliError::input("terminal_file: only used with terminal = \"polyhedron\""));
        }
        let terminal = match self.terminal {
            TerminalKind::Equality => TerminalChoice::Equality,
            TerminalKind::Ellipsoid => TerminalChoice::Ellipsoid(TerminalConfig {
                lambda_grid: kcfg.lambda_grid.clone(),
                margin: tolerances.lmi_margin,
                ..TerminalConfig::default()
            }),
            TerminalKind::Polyhedron => {
                let omega = match &self.terminal_file {
                    Some(p) => {
                        let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                        let text = read_text(&path)?;
                        let omega: ConstraintPolytope = serde_json::from_str(&text)
                            .map_err(|e| CliError::input(format!("terminal_file {}: {e}", path.display())))?;
                        if omega.dim() != n {
                            return Err(CliError::input(format!(
                                "terminal_file: F must have {n} columns, got {}",
                                omega.dim()
                            )));
                        }
                        Some(omega)
                    }
                    None => None,
                };
                TerminalChoice::Polyhedron(omega)
            }
        };

        let w = Zonotope::new(h_w).map_err(|e| CliError::input(format!("H_W: {e}")))?;
        let model = SystemModel::new(a, b, w).map_err(|e| CliError::input(format!("A/B/H_W: {e}")))?;
        let bl = self.baseline.clone().unwrap_or_default();
        let tube_q = bl.tube_q.as_ref().map_or(Ok(q.clone()), |v| v.resolve("baseline.tube_Q", n))?;
        let tube_r = bl.tube_r.as_ref().map_or(Ok(r.clone()), |v| v.resolve("baseline.tube_R", m))?;
        let mrpi_eps = positive("baseline.mrpi_eps", bl.mrpi_eps.unwrap_or(1e-3))?;
        let tube_gain = match synthesis::solve_dare(model.a(), model.b(), &tube_q, &tube_r) {
            Ok((k, _)) => k,
            Err(e) => return Err(CliError::input(format!("baseline.tube_Q/tube_R: {e}"))),
        };

        Ok(ResolvedConfig {
            baseline: BaselineParams {
                q: q.clone(),
                r: r.clone(),
                horizon: self.horizon,
            },
            spec: DesignSpec {
                model,
                x: self.x.clone(),
                u: self.u.clone(),
                q,
                r,
                horizon: self.horizon,
                control_horizon: nc,
                gain,
                terminal,
                tail_threshold: tolerances.tail_threshold,
            },
            tolerances,
            tube_gain,
            mrpi_eps,
            gain_kind: self.gain_source,
            sha256,
        })
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

/// Loads, validates and resolves a config file.
pub fn load_config(path: &Path) -> CliResult<ResolvedConfig> {
    let text = read_text(path)?;
    let cfg = SystemConfigFile::parse(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.resolve(base, env_tolerance()?, sha256_hex(text.as_bytes()))
}

// ---------------------------------------------------------------- bundle file

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    #[serde(rename = "L_N")]
    pub l_n: Zonotope,
    pub tail_norm: f64,
    /// Offsets of `X ⊖ H(i)` for `i = 0..=N`, rows as in `X`.
    pub x_offsets: Vec<Vec<f64>>,
    pub u_offsets: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TerminalFile {
    Equality,
    Ellipsoid { shape: Vec<Vec<f64>>, shrink: f64 },
    Polyhedron { omega: ConstraintPolytope, tightened: ConstraintPolytope },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClauseRecord {
    pub clause: String,
    pub pass: bool,
}

/// Audit report with non-finite numbers stored as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRecord {
    pub status: String,
    pub clauses: Vec<ClauseRecord>,
    pub min_eig_q: Option<f64>,
    pub min_eig_r: Option<f64>,
    pub terminal_cost_min_eig: Option<f64>,
    pub spectral_radius: Option<f64>,
    pub min_tightened_offset: Option<f64>,
    pub terminal_margin: Option<f64>,
    pub terminal_note: String,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl From<&AssumptionReport> for AuditRecord {
    fn from(r: &AssumptionReport) -> Self {
        Self {
            status: if r.passed() { "pass" } else { "fail" }.into(),
            clauses: r
                .clauses()
                .iter()
                .map(|(c, p)| ClauseRecord {
                    clause: (*c).into(),
                    pass: *p,
                })
                .collect(),
            min_eig_q: finite(r.min_eig_q),
            min_eig_r: finite(r.min_eig_r),
            terminal_cost_min_eig: finite(r.terminal_cost_min_eig),
            spectral_radius: finite(r.spectral_radius),
            min_tightened_offset: finite(r.min_tightened_offset),
            terminal_margin: finite(r.terminal_margin),
            terminal_note: r.terminal_note.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub config_sha256: String,
    pub tool_version: String,
    pub gain_source: GainKind,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub rho: Option<f64>,
    pub mu: Option<f64>,
    pub terminal_lambda: Option<f64>,
    pub l_boxed: bool,
    pub tolerances: Tolerances,
    pub audit: AuditRecord,
}

/// On-disk design bundle. Floats are written in shortest round-trip form,
/// so reloading and saving again reproduces the file byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignBundleFile {
    pub format: String,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "W")]
    pub w: Zonotope,
    #[serde(rename = "X")]
    pub x: ConstraintPolytope,
    #[serde(rename = "U")]
    pub u: ConstraintPolytope,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    #[serde(rename = "K_t")]
    pub k_t: Vec<Vec<f64>>,
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "Nc")]
    pub control_horizon: usize,
    pub tail_threshold: f64,
    pub schedule: ScheduleFile,
    pub terminal: TerminalFile,
    pub qp: QpSettings,
    pub provenance: Provenance,
}

impl DesignBundleFile {
    pub fn from_bundle(bundle: &DesignBundle, qp: QpSettings, provenance: Provenance) -> Self {
        let s = &bundle.schedule;
        let offsets = |sets: &[ConstraintPolytope]| -> Vec<Vec<f64>> {
            sets[..=bundle.horizon].iter().map(|p| p.offsets().iter().copied().collect()).collect()
        };
        Self {
            format: BUNDLE_FORMAT.into(),
            a: rows_of(bundle.model.a()),
            b: rows_of(bundle.model.b()),
            w: bundle.model.w().clone(),
            x: bundle.x.clone(),
            u: bundle.u.clone(),
            q: rows_of(&bundle.costs.q),
            r: rows_of(&bundle.costs.r),
            p: rows_of(&bundle.costs.p),
            k: rows_of(&bundle.k),
            k_t: rows_of(&bundle.k_t),
            horizon: bundle.horizon,
            control_horizon: bundle.control_horizon,
            tail_threshold: bundle.tail_threshold,
            schedule: ScheduleFile {
                l_n: s.l_n().clone(),
                tail_norm: s.tail_norm(),
                x_offsets: offsets(s.x_sets()),
                u_offsets: offsets(s.u_sets()),
            },
            terminal: match &bundle.terminal {
                TerminalSet::Equality => TerminalFile::Equality,
                TerminalSet::Ellipsoid { shape, shrink } => TerminalFile::Ellipsoid {
                    shape: rows_of(shape),
                    shrink: *shrink,
                },
                TerminalSet::Polyhedron { omega, tightened } => TerminalFile::Polyhedron {
                    omega: omega.clone(),
                    tightened: tightened.clone(),
                },
            },
            qp,
            provenance,
        }
    }

    /// Rebuilds the in-memory bundle; `A_K` is recomputed from `A + B K`.
    pub fn to_bundle(&self) -> CliResult<DesignBundle> {
        let bad = |key: &str, e: Error| CliError::input(format!("bundle {key}: {e}"));
        if self.format != BUNDLE_FORMAT {
            return Err(CliError::input(format!(
                "bundle format: expected {BUNDLE_FORMAT:?}, got {:?}",
                self.format
            )));
        }
        let a = matrix("bundle A", &self.a)?;
        let b = matrix("bundle B", &self.b)?;
        let model = SystemModel::new(a, b, self.w.clone()).map_err(|e| bad("A/B/W", e))?;
        let k = matrix("bundle K", &self.k)?;
        let k_t = matrix("bundle K_t", &self.k_t)?;
        if k.shape() != (model.m(), model.n()) {
            return Err(CliError::input(format!(
                "bundle K: expected {}x{}, got {}x{}",
                model.m(),
                model.n(),
                k.nrows(),
                k.ncols()
            )));
        }
        let costs = CostMatrices::new(
            matrix("bundle Q", &self.q)?,
            matrix("bundle R", &self.r)?,
            matrix("bundle P", &self.p)?,
        )
        .map_err(|e| bad("Q/R/P", e))?;
        let sets = |key: &str, base: &ConstraintPolytope, offs: &[Vec<f64>]| -> CliResult<Vec<ConstraintPolytope>> {
            if offs.len() != self.horizon + 1 {
                return Err(CliError::input(format!(
                    "bundle schedule.{key}: expected {} entries, got {}",
                    self.horizon + 1,
                    offs.len()
                )));
            }
            offs.iter()
                .map(|o| base.with_offsets(DVector::from_vec(o.clone())).map_err(|e| bad(key, e)))
                .collect()
        };
        let x_sets = sets("x_offsets", &self.x, &self.schedule.x_offsets)?;
        let u_sets = sets("u_offsets", &self.u, &self.schedule.u_offsets)?;
        let schedule = TighteningSchedule::from_parts(
            model.closed_loop(&k),
            self.schedule.l_n.clone(),
            x_sets,
            u_sets,
            self.schedule.tail_norm,
        );
        let terminal = match &self.terminal {
            TerminalFile::Equality => TerminalSet::Equality,
            TerminalFile::Ellipsoid { shape, shrink } => TerminalSet::Ellipsoid {
                shape: matrix("bundle terminal.shape", shape)?,
                shrink: *shrink,
            },
            TerminalFile::Polyhedron { omega, tightened } => TerminalSet::Polyhedron {
                omega: omega.clone(),
                tightened: tightened.clone(),
            },
        };
        let bundle = DesignBundle {
            model,
            x: self.x.clone(),
            u: self.u.clone(),
            costs,
            k,
            k_t,
            schedule,
            terminal,
            horizon: self.horizon,
            control_horizon: self.control_horizon,
            tail_threshold: self.tail_threshold,
        };
        bundle.validate().map_err(|e| bad("shape", e))?;
        Ok(bundle)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bundle serializes");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::input(format!("bundle key {}: {}", e.path(), e.inner())))
    }
}

pub fn load_bundle(path: &Path) -> CliResult<(DesignBundleFile, DesignBundle)> {
    let file = DesignBundleFile::parse(&read_text(path)?)?;
    let bundle = file.to_bundle()?;
    Ok((file, bundle))
}

fn is_bundle_text(text: &str) -> bool {
    serde_json::from_str::<serde_json::Value>(text)
        .ok()
        .and_then(|v| v.get("format").and_then(|f| f.as_str()).map(|f| f == BUNDLE_FORMAT))
        .unwrap_or(false)
}

// ---------------------------------------------------------------- commands

fn e9(v: f64) -> String {
    format!("{v:.8e}")
}

fn opt_e9(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), e9)
}

/// Runs the offline pipeline on a config and returns the bundle file.
pub fn synthesize_config(cfg: &ResolvedConfig) -> CliResult<DesignBundleFile> {
    let out = synthesis::synthesize(&cfg.spec)?;
    let kr = out.k_result.as_ref();
    let provenance = Provenance {
        config_sha256: cfg.sha256.clone(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        gain_source: cfg.gain_kind,
        lambda: kr.map(|k| k.lambda),
        gamma: kr.map(|k| k.gamma),
        rho: kr.map(|k| k.rho),
        mu: kr.map(|k| k.mu),
        terminal_lambda: out.terminal_lambda,
        l_boxed: out.boxed_l,
        tolerances: cfg.tolerances,
        audit: AuditRecord::from(&out.report),
    };
    Ok(DesignBundleFile::from_bundle(&out.bundle, cfg.tolerances.qp_settings(), provenance))
}

pub fn cmd_synth(config: &Path, out: &Path, log: &mut dyn Write) -> CliResult<()> {
    let cfg = load_config(config)?;
    let file = synthesize_config(&cfg)?;
    write_text(out, &file.to_json())?;
    let p = &file.provenance;
    let _ = writeln!(log, "lambda      {}", opt_e9(p.lambda));
    let _ = writeln!(log, "gamma       {}", opt_e9(p.gamma));
    let _ = writeln!(log, "tail norm   {}", e9(file.schedule.tail_norm));
    let _ = writeln!(log, "terminal    {}", terminal_kind(&file.terminal));
    let _ = writeln!(log, "wrote {}", out.display());
    Ok(())
}

fn terminal_kind(t: &TerminalFile) -> &'static str {
    match t {
        TerminalFile::Equality => "equality",
        TerminalFile::Ellipsoid { .. } => "ellipsoid",
        TerminalFile::Polyhedron { .. } => "polyhedron",
    }
}

pub fn cmd_check(path: &Path, log: &mut dyn Write) -> CliResult<()> {
    let (_, bundle) = load_bundle(path)?;
    let report = synthesis::check_assumption1(&bundle);
    for (clause, pass) in report.clauses() {
        let _ = writeln!(log, "{} {clause}", if pass { "PASS" } else { "FAIL" });
    }
    let _ = writeln!(log, "min eig Q               {}", e9(report.min_eig_q));
    let _ = writeln!(log, "min eig R               {}", e9(report.min_eig_r));
    let _ = writeln!(log, "terminal cost min eig   {}", e9(report.terminal_cost_min_eig));
    let _ = writeln!(log, "spectral radius A+BK    {}", e9(report.spectral_radius));
    let _ = writeln!(log, "min tightened offset    {}", e9(report.min_tightened_offset));
    let _ = writeln!(log, "terminal margin         {}", e9(report.terminal_margin));
    if !report.terminal_note.is_empty() {
        let _ = writeln!(log, "note: {}", report.terminal_note);
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.clauses().iter().filter(|c| !c.1).map(|c| c.0).collect();
        Err(CliError::with_code(EXIT_AUDIT, format!("audit failed: {}", failed.join("; "))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Rmpc,
    Nominal,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "uniform")]
    pub disturbance: DisturbanceMode,
    #[arg(long, value_enum, default_value_t = ControllerKind::Rmpc)]
    pub controller: ControllerKind,
    /// Initial states `a,b;c,d`, used round-robin over runs (default: origin).
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[arg(long, default_value = "sim")]
    pub out: PathBuf,
    /// Simulate even if the assumption audit fails.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Serialize)]
struct SimSummaryFile<'a> {
    controller: ControllerKind,
    disturbance: DisturbanceMode,
    rng: &'static str,
    seed: u64,
    initial_states: Vec<Vec<f64>>,
    summary: &'a Summary,
}

#[derive(Debug, Clone, Serialize)]
struct TimingFile {
    solve_seconds: Option<Stats>,
    iterations: Option<Stats>,
}

pub fn parse_states(s: &str, n: usize) -> CliResult<Vec<DVector<f64>>> {
    let mut out = Vec::new();
    for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let v: Vec<f64> = part
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::input(format!("--x0 {part:?}: {e}")))?;
        if v.len() != n {
            return Err(CliError::input(format!("--x0 {part:?}: expected {n} entries, got {}", v.len())));
        }
        out.push(DVector::from_vec(v));
    }
    if out.is_empty() {
        return Err(CliError::input("--x0: no state given"));
    }
    Ok(out)
}

pub fn cmd_simulate(args: &SimulateArgs, log: &mut dyn Write) -> CliResult<()> {
    let (file, bundle) = load_bundle(&args.bundle)?;
    if !args.force {
        let report = synthesis::check_assumption1(&bundle);
        if file.provenance.audit.status != "pass" || !report.passed() {
            return Err(CliError::with_code(
                EXIT_AUDIT,
                "bundle does not pass the assumption audit; rerun with --force to simulate anyway",
            ));
        }
    }
    let n = bundle.model.n();
    let x0 = match &args.x0 {
        Some(s) => parse_states(s, n)?,
        None => vec![DVector::zeros(n)],
    };
    let cfg = SimConfig {
        steps: args.steps,
        runs: args.runs,
        seed: args.seed,
        disturbance: args.disturbance,
        initial_states: x0,
    };
    let design = match args.controller {
        ControllerKind::Rmpc => bundle.clone(),
        ControllerKind::Nominal => bundle.nominal(),
    };
    let logs = simloop::simulate(&design, &cfg, &file.qp)?;
    let summary = simloop::aggregate_metrics(&logs);
    let mut deterministic = summary.clone();
    deterministic.solve_seconds = None;
    let sim_file = SimSummaryFile {
        controller: args.controller,
        disturbance: args.disturbance,
        rng: simloop::RNG_NAME,
        seed: args.seed,
        initial_states: cfg.initial_states.iter().map(|x| x.iter().copied().collect()).collect(),
        summary: &deterministic,
    };
    write_text(&args.out.join("trajectories.csv"), &simloop::to_csv(&logs, n, bundle.model.m()))?;
    write_text(&args.out.join("summary.json"), &pretty(&sim_file))?;
    write_text(
        &args.out.join("timing.json"),
        &pretty(&TimingFile {
            solve_seconds: summary.solve_seconds.clone(),
            iterations: summary.iterations.clone(),
        }),
    )?;
    let _ = writeln!(log, "runs        {}", summary.runs);
    let _ = writeln!(log, "violations  {}", summary.violations);
    let _ = writeln!(log, "infeasible  {}", summary.infeasible_runs);
    if let Some(t) = &summary.solve_seconds {
        let _ = writeln!(log, "solve time  min {} mean {} max {} s", e9(t.min), e9(t.mean), e9(t.max));
    }
    if let Some(t) = &summary.iterations {
        let _ = writeln!(log, "iterations  min {} mean {} max {}", e9(t.min), e9(t.mean), e9(t.max));
    }
    let _ = writeln!(log, "wrote {}", args.out.display());
    if summary.infeasible_runs > 0 && args.controller == ControllerKind::Rmpc {
        let first = logs.iter().find(|l| !l.feasible).expect("an infeasible run");
        return Err(CliError::with_code(
            EXIT_INFEASIBLE,
            format!(
                "RMPC problem infeasible in run {} at step {}",
                first.run,
                first.infeasible_at.unwrap_or(0)
            ),
        ));
    }
    Ok(())
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// Parses `xlo,xhi,ylo,yhi,nx,ny`.
pub fn parse_grid(s: &str) -> CliResult<GridSpec> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 6 || parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::input(format!("--grid {s:?}: expected xlo,xhi,ylo,yhi,nx,ny")));
    }
    let num = |i: usize| {
        parts[i]
            .parse::<f64>()
            .map_err(|e| CliError::input(format!("--grid entry {}: {e}", i + 1)))
    };
    let cnt = |i: usize| {
        parts[i]
            .parse::<usize>()
            .map_err(|e| CliError::input(format!("--grid entry {}: {e}", i + 1)))
    };
    let grid = GridSpec {
        x_range: (num(0)?, num(1)?),
        y_range: (num(2)?, num(3)?),
        nx: cnt(4)?,
        ny: cnt(5)?,
    };
    grid.validate().map_err(|e| CliError::input(format!("--grid: {e}")))?;
    Ok(grid)
}

/// 100×100 grid over the bounding box of `X`.
fn default_grid(x: &ConstraintPolytope) -> CliResult<GridSpec> {
    if x.dim() != 2 {
        return Err(CliError::input(format!(
            "domain-of-attraction study needs a 2-D state, got n = {}",
            x.dim()
        )));
    }
    let mut ext = [0.0; 4];
    for (i, c) in [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]].iter().enumerate() {
        ext[i] = match invset::support_polytope(x, c)? {
            LpValue::Finite(v) => v,
            LpValue::Unbounded => return Err(CliError::input("X is unbounded; pass --grid")),
        };
    }
    Ok(GridSpec {
        x_range: (-ext[1], ext[0]),
        y_range: (-ext[3], ext[2]),
        nx: 100,
        ny: 100,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerName {
    Proposed,
    ChisciStyle,
    MayneStyle,
}

impl ControllerName {
    pub fn label(&self) -> &'static str {
        match self {
            ControllerName::Proposed => "proposed",
            ControllerName::ChisciStyle => "chisci-style",
            ControllerName::MayneStyle => "mayne-style",
        }
    }
}

pub fn parse_controllers(s: &str) -> CliResult<Vec<ControllerName>> {
    let mut out = Vec::new();
    for t in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let c = match t {
            "proposed" => ControllerName::Proposed,
            "chisci" | "chisci-style" => ControllerName::ChisciStyle,
            "mayne" | "mayne-style" => ControllerName::MayneStyle,
            other => {
                return Err(CliError::input(format!(
                    "--controllers: unknown controller {other:?} (proposed|chisci|mayne)"
                )))
            }
        };
        if !out.contains(&c) {
            out.push(c);
        }
    }
    if out.is_empty() {
        return Err(CliError::input("--controllers: none given"));
    }
    Ok(out)
}

/// A designed controller of the comparison study.
#[derive(Debug, Clone)]
pub struct StudyDesign {
    pub name: ControllerName,
    pub bundle: DesignBundle,
    pub tube: Option<Zonotope>,
}

fn design_one(name: ControllerName, cfg: &ResolvedConfig) -> CliResult<StudyDesign> {
    let spec = &cfg.spec;
    let from = |d: BaselineDesign| StudyDesign {
        name,
        bundle: d.bundle,
        tube: d.tube,
    };
    Ok(match name {
        ControllerName::Proposed => StudyDesign {
            name,
            bundle: synthesis::synthesize(spec)?.bundle,
            tube: None,
        },
        ControllerName::ChisciStyle => from(baselines::design_chisci_style(&spec.model, &spec.x, &spec.u, &cfg.baseline)?),
        ControllerName::MayneStyle => from(baselines::design_mayne_style(
            &spec.model,
            &spec.x,
            &spec.u,
            &cfg.tube_gain,
            cfg.mrpi_eps,
            &cfg.baseline,
        )?),
    })
}

#[derive(Debug, Clone, Args)]
pub struct DoaArgs {
    /// Config file, or a bundle when only the proposed controller is studied.
    pub input: PathBuf,
    /// `xlo,xhi,ylo,yhi,nx,ny` (default: 100x100 over the bounding box of X).
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    #[arg(long, default_value = "proposed")]
    pub controllers: String,
    #[arg(long, default_value = "doa")]
    pub out: PathBuf,
}

fn counts_csv(rows: &[(&str, &DoaResult)]) -> String {
    let mut s = String::from("controller,count,area,cells\n");
    for (label, r) in rows {
        let _ = writeln!(s, "{label},{},{},{}", r.count, e9(r.area), r.points.len());
    }
    s
}

pub fn cmd_doa(args: &DoaArgs, log: &mut dyn Write) -> CliResult<()> {
    let text = read_text(&args.input)?;
    let names = parse_controllers(&args.controllers)?;
    let (designs, qp) = if is_bundle_text(&text) {
        if names.iter().any(|n| *n != ControllerName::Proposed) {
            return Err(CliError::input("baseline controllers need a config file, not a bundle"));
        }
        let file = DesignBundleFile::parse(&text)?;
        let bundle = file.to_bundle()?;
        (
            vec![StudyDesign {
                name: ControllerName::Proposed,
                bundle,
                tube: None,
            }],
            file.qp,
        )
    } else {
        let cfg = load_config(&args.input)?;
        if cfg.spec.model.n() != 2 {
            return Err(CliError::input(format!(
                "domain-of-attraction study needs a 2-D state, got n = {}",
                cfg.spec.model.n()
            )));
        }
        let designs = names.iter().map(|&n| design_one(n, &cfg)).collect::<CliResult<Vec<_>>>()?;
        (designs, cfg.tolerances.qp_settings())
    };
    let x = &designs[0].bundle.x;
    if x.dim() != 2 {
        return Err(CliError::input(format!(
            "domain-of-attraction study needs a 2-D state, got n = {}",
            x.dim()
        )));
    }
    let grid = match &args.grid {
        Some(g) => parse_grid(g)?,
        None => default_grid(x)?,
    };
    let mut results = Vec::new();
    for d in &designs {
        results.push((d.name.label(), baselines::estimate_doa(&d.bundle, &grid, &qp)?));
    }
    let rows: Vec<(&str, &DoaResult)> = results.iter().map(|(l, r)| (*l, r)).collect();
    write_text(&args.out.join("doa.csv"), &baselines::doa_csv(&rows))?;
    let table = counts_csv(&rows);
    write_text(&args.out.join("doa_counts.csv"), &table)?;
    let _ = write!(log, "{table}");
    let _ = writeln!(log, "wrote {}", args.out.display());
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    pub config: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "uniform")]
    pub disturbance: DisturbanceMode,
    /// Number of shared initial states drawn from the common feasible region.
    #[arg(long, default_value_t = 5)]
    pub starts: usize,
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub controller: &'static str,
    pub status: String,
    pub terminal: Option<&'static str>,
    #[serde(rename = "K")]
    pub k: Option<Vec<Vec<f64>>>,
    #[serde(rename = "K_t")]
    pub k_t: Option<Vec<Vec<f64>>>,
    pub tube_generators: Option<usize>,
    pub doa_count: Option<usize>,
    pub doa_area: Option<f64>,
    pub violations: Option<usize>,
    pub infeasible_runs: Option<usize>,
    pub mean_iterations: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct ReportFile<'a> {
    complete: bool,
    config_sha256: &'a str,
    grid: GridSpec,
    rng: &'static str,
    seed: u64,
    steps: usize,
    runs: usize,
    disturbance: DisturbanceMode,
    initial_states: Vec<Vec<f64>>,
    controllers: &'a [ReportRow],
}

fn cell(v: Option<String>) -> String {
    v.unwrap_or_default()
}

pub fn cmd_compare(args: &CompareArgs, log: &mut dyn Write) -> CliResult<()> {
    let cfg = load_config(&args.config)?;
    if cfg.spec.model.n() != 2 {
        return Err(CliError::input(format!(
            "comparison study needs a 2-D state, got n = {}",
            cfg.spec.model.n()
        )));
    }
    let grid = match &args.grid {
        Some(g) => parse_grid(g)?,
        None => default_grid(&cfg.spec.x.normalize()?)?,
    };
    let qp = cfg.tolerances.qp_settings();
    let names = [ControllerName::Proposed, ControllerName::ChisciStyle, ControllerName::MayneStyle];
    let mut rows = Vec::new();
    let mut designs = Vec::new();
    let mut doas: Vec<Option<DoaResult>> = Vec::new();
    let mut first_failure: Option<CliError> = None;
    for name in names {
        let mut row = ReportRow {
            controller: name.label(),
            status: "ok".into(),
            terminal: None,
            k: None,
            k_t: None,
            tube_generators: None,
            doa_count: None,
            doa_area: None,
            violations: None,
            infeasible_runs: None,
            mean_iterations: None,
        };
        let outcome = design_one(name, &cfg)
            .and_then(|d| baselines::estimate_doa(&d.bundle, &grid, &qp).map(|r| (d, r)).map_err(CliError::from));
        match outcome {
            Ok((d, r)) => {
                row.terminal = Some(d.bundle.terminal.kind());
                row.k = Some(rows_of(&d.bundle.k));
                row.k_t = Some(rows_of(&d.bundle.k_t));
                row.tube_generators = d.tube.as_ref().map(|z| z.num_generators());
                row.doa_count = Some(r.count);
                row.doa_area = Some(r.area);
                designs.push(Some(d));
                doas.push(Some(r));
            }
            Err(e) => {
                row.status = format!("failed: {}", e.message);
                first_failure.get_or_insert(e);
                designs.push(None);
                doas.push(None);
            }
        }
        rows.push(row);
    }

    // Shared starts: grid points feasible for every designed controller.
    let mut common: Vec<(f64, f64)> = Vec::new();
    if let Some(first) = doas.iter().flatten().next() {
        for (i, &(a, b, f)) in first.points.iter().enumerate() {
            if f && doas.iter().flatten().all(|r| r.points[i].2) {
                common.push((a, b));
            }
        }
    }
    let starts: Vec<DVector<f64>> = if common.is_empty() || args.starts == 0 {
        Vec::new()
    } else {
        let k = args.starts.min(common.len());
        (0..k)
            .map(|j| {
                let (a, b) = common[j * common.len() / k];
                DVector::from_vec(vec![a, b])
            })
            .collect()
    };
    if !starts.is_empty() {
        let sim = SimConfig {
            steps: args.steps,
            runs: args.runs,
            seed: args.seed,
            disturbance: args.disturbance,
            initial_states: starts.clone(),
        };
        for (row, d) in rows.iter_mut().zip(&designs) {
            let Some(d) = d else { continue };
            match simloop::simulate(&d.bundle, &sim, &qp) {
                Ok(logs) => {
                    let s = simloop::aggregate_metrics(&logs);
                    row.violations = Some(s.violations);
                    row.infeasible_runs = Some(s.infeasible_runs);
                    row.mean_iterations = s.iterations.map(|t| t.mean);
                }
                Err(e) => {
                    row.status = format!("failed: simulation: {e}");
                    first_failure.get_or_insert(CliError::from(e));
                }
            }
        }
    }

    let doa_rows: Vec<(&str, &DoaResult)> = rows
        .iter()
        .zip(&doas)
        .filter_map(|(row, r)| r.as_ref().map(|r| (row.controller, r)))
        .collect();
    write_text(&args.out.join("doa.csv"), &baselines::doa_csv(&doa_rows))?;
    let mut csv = String::from("controller,status,terminal,doa_count,doa_area,violations,infeasible_runs,mean_iterations\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.controller,
            r.status.replace(',', ";"),
            r.terminal.unwrap_or(""),
            cell(r.doa_count.map(|v| v.to_string())),
            cell(r.doa_area.map(e9)),
            cell(r.violations.map(|v| v.to_string())),
            cell(r.infeasible_runs.map(|v| v.to_string())),
            cell(r.mean_iterations.map(e9)),
        );
    }
    write_text(&args.out.join("report.csv"), &csv)?;
    let report = ReportFile {
        complete: first_failure.is_none(),
        config_sha256: &cfg.sha256,
        grid,
        rng: simloop::RNG_NAME,
        seed: args.seed,
        steps: args.steps,
        runs: args.runs,
        disturbance: args.disturbance,
        initial_states: starts.iter().map(|x| x.iter().copied().collect()).collect(),
        controllers: &rows,
    };
    write_text(&args.out.join("report.json"), &pretty(&report))?;
    let _ = write!(log, "{csv}");
    let _ = writeln!(log, "wrote {}", args.out.display());
    match first_failure {
        Some(e) => Err(CliError::with_code(
            if e.code == EXIT_OK { EXIT_SYNTHESIS } else { e.code },
            format!("comparison incomplete: {}", e.message),
        )),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------- entry point

#[derive(Debug, Parser)]
#[command(name = "tubempc", version, about = "Tube-based robust MPC design, certification and simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a design bundle from a system config.
    Synth {
        config: PathBuf,
        #[arg(long, default_value = "bundle.json")]
        out: PathBuf,
    },
    /// Audit a bundle against the standing assumptions.
    Check { bundle: PathBuf },
    /// Closed-loop Monte-Carlo simulation.
    Simulate(SimulateArgs),
    /// Domain-of-attraction grid study.
    Doa(DoaArgs),
    /// Proposed controller against the reconstructed baselines.
    Compare(CompareArgs),
}

pub fn run(cli: &Cli, log: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Synth { config, out } => cmd_synth(config, out, log),
        Command::Check { bundle } => cmd_check(bundle, log),
        Command::Simulate(a) => cmd_simulate(a, log),
        Command::Doa(a) => cmd_doa(a, log),
        Command::Compare(a) => cmd_compare(a, log),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(&cli, &mut std::io::stdout().lock()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DI: &str = r#"{
        "A": [[1, 1], [0, 1]], "B": [[0], [1]], "H_W": [[0.16, 0], [0, 0.16]],
        "X": {"F": [[1, 0], [-1, 0], [0, 1], [0, -1]], "f": [10, 10, 10, 10]},
        "U": {"F": [[1], [-1]], "f": [1, 1]},
        "Q": 1, "R": 0.01, "N": 10
    }"#;

    #[test]
    fn config_resolves_defaults() {
        let c = SystemConfigFile::parse(DI).unwrap();
        let r = c.resolve(Path::new("."), None, String::new()).unwrap();
        assert_eq!(r.spec.control_horizon, 10);
        assert_eq!(r.tolerances.qp_tol, 1e-4);
        assert!((r.tolerances.tail_threshold - 1e-5).abs() < 1e-20);
        assert_eq!(r.spec.r[(0, 0)], 0.01);
        assert!(matches!(r.spec.terminal, TerminalChoice::Ellipsoid(_)));
    }

    #[test]
    fn env_tolerance_overrides_global() {
        let c = SystemConfigFile::parse(DI).unwrap();
        let r = c.resolve(Path::new("."), Some(1e-6), String::new()).unwrap();
        assert_eq!(r.tolerances.global, 1e-6);
        assert_eq!(r.tolerances.qp_tol, 1e-6);
    }

    #[test]
    fn unknown_key_is_named() {
        let bad = DI.replace("\"N\": 10", "\"N\": 10, \"horizon\": 3");
        let e = SystemConfigFile::parse(&bad).unwrap_err();
        assert_eq!(e.code, EXIT_INPUT);
        assert!(e.message.contains("horizon"), "{}", e.message);
    }

    #[test]
    fn wrong_type_names_key() {
        let bad = DI.replace("\"N\": 10", "\"N\": \"ten\"");
        let e = SystemConfigFile::parse(&bad).unwrap_err();
        assert!(e.message.contains("N"), "{}", e.message);
    }

    #[test]
    fn shape_error_names_key() {
        let bad = DI.replace("\"B\": [[0], [1]]", "\"B\": [[0], [1], [2]]");
        let c = SystemConfigFile::parse(&bad).unwrap();
        let e = c.resolve(Path::new("."), None, String::new()).unwrap_err();
        assert!(e.message.starts_with("B:"), "{}", e.message);
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("-1,1,-2,2,10,20").unwrap();
        assert_eq!((g.nx, g.ny), (10, 20));
        assert_eq!(parse_grid("").unwrap_err().code, EXIT_INPUT);
        assert_eq!(parse_grid("-1,1,-2,2,0,20").unwrap_err().code, EXIT_INPUT);
    }

    #[test]
    fn states_parsing() {
        let s = parse_states("1,2; 3,4", 2).unwrap();
        assert_eq!(s[1][0], 3.0);
        assert!(parse_states("1,2,3", 2).is_err());
    }

    #[test]
    fn controller_list() {
        let c = parse_controllers("proposed,mayne,chisci,mayne").unwrap();
        assert_eq!(c.len(), 3);
        assert!(parse_controllers("lqr").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::NoAdmissibleGain), EXIT_SYNTHESIS);
        assert_eq!(exit_code(&Error::AuditFailed("x".into())), EXIT_SYNTHESIS);
        assert_eq!(exit_code(&Error::InvalidInput("x".into())), EXIT_INPUT);
        assert_eq!(exit_code(&Error::Infeasible("x".into())), EXIT_INFEASIBLE);
    }

    #[test]
    fn sha_hex() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn bundle_round_trip_is_byte_stable() {
        let c = SystemConfigFile::parse(DI).unwrap();
        let r = c.resolve(Path::new("."), None, "h".into()).unwrap();
        let file = synthesize_config(&r).unwrap();
        let text = file.to_json();
        let again = DesignBundleFile::parse(&text).unwrap();
        let bundle = again.to_bundle().unwrap();
        let resaved = DesignBundleFile::from_bundle(&bundle, again.qp.clone(), again.provenance.clone()).to_json();
        assert_eq!(text, resaved);
    }
}
