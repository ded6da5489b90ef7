//! Reachable-set tightening: `H(i) = ⊕_{j<i} A_K^j W`, `L(i) = A_K^{i-1} W`,
//! the tightened sets `X ⊖ H(i)`, `U ⊖ K H(i)`, the tail norm
//! `||A_K^{N-1}||_2^2` and an outer approximation of the minimal RPI set.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{mat_pow, spectral_norm};
use crate::scalar::Scalar;
use crate::setcalc::{ConstraintPolytope, Zonotope};

/// Offsets below this value mean the tightened set no longer contains the origin.
pub const VANISH_TOL: f64 = 1e-9;

/// `H(0..=N)`, with `H(0) = {0}` and `H(i) = [A_K^{i-1} H_W, H(i-1)]`.
pub fn build_h<T: Scalar>(a_k: &DMatrix<T>, h_w: &DMatrix<T>, horizon: usize) -> Result<Vec<Zonotope<T>>> {
    check_square(a_k, h_w)?;
    let n = a_k.nrows();
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(Zonotope::origin(n));
    let mut term = h_w.clone();
    for i in 1..=horizon {
        let next = Zonotope::new(term.clone())?.minkowski_sum(&out[i - 1])?;
        out.push(next);
        term = a_k * term;
    }
    Ok(out)
}

/// `L(i) = A_K^{i-1} W` for `i >= 1`; `L(0)` is the singleton.
pub fn build_l<T: Scalar>(a_k: &DMatrix<T>, h_w: &DMatrix<T>, i: usize) -> Result<Zonotope<T>> {
    check_square(a_k, h_w)?;
    if i == 0 {
        return Ok(Zonotope::origin(a_k.nrows()));
    }
    Zonotope::new(mat_pow(a_k, i - 1) * h_w)
}

/// `X_i = X ⊖ H(i)` and `U_i = U ⊖ K H(i)` for every `H(i)` supplied.
/// Errors when a set loses the origin at some `i < N` (the last entry is
/// audited separately as part of the standing assumptions).
pub fn tighten_constraints<T: Scalar>(
    x: &ConstraintPolytope<T>,
    u: &ConstraintPolytope<T>,
    k: &DMatrix<T>,
    h: &[Zonotope<T>],
) -> Result<(Vec<ConstraintPolytope<T>>, Vec<ConstraintPolytope<T>>)> {
    let mut xs = Vec::with_capacity(h.len());
    let mut us = Vec::with_capacity(h.len());
    let last = h.len().saturating_sub(1);
    for (i, hi) in h.iter().enumerate() {
        let xi = x.pontryagin_diff(hi)?;
        let ui = u.pontryagin_diff(&hi.map(k)?)?;
        if i < last && !(xi.contains_origin(T::lit(VANISH_TOL)) && ui.contains_origin(T::lit(VANISH_TOL))) {
            return Err(Error::ConstraintsVanish { step: i });
        }
        xs.push(xi);
        us.push(ui);
    }
    Ok((xs, us))
}

/// `||A_K^{N-1}||_2^2`.
pub fn tail_norm<T: Scalar>(a_k: &DMatrix<T>, horizon: usize) -> T {
    assert!(horizon >= 1, "horizon must be at least 1");
    let s = spectral_norm(&mat_pow(a_k, horizon - 1));
    s * s
}

/// `L(N)` may be treated as `{0}` when the tail norm is at most `threshold`.
pub fn negligible_l<T: Scalar>(tail: T, threshold: T) -> bool {
    tail <= threshold
}

/// Outer approximation of the minimal robust positive invariant set of
/// `x+ = A_K x + w`: `(1 - α)^{-1} ⊕_{j<s} A_K^j W` with the smallest `s` such
/// that `A_K^s W ⊆ α W` and `α <= ε / (ε + r_s)`, where `r_s` bounds the
/// infinity-norm radius of the partial sum.
pub fn mrpi_approx<T: Scalar>(a_k: &DMatrix<T>, w: &Zonotope<T>, eps: T, max_steps: usize) -> Result<Zonotope<T>> {
    if eps <= T::zero() {
        return Err(Error::InvalidInput("mRPI accuracy must be positive".into()));
    }
    if a_k.nrows() != w.dim() || !a_k.is_square() {
        return Err(Error::dims("mrpi_approx", w.dim(), a_k.nrows()));
    }
    if w.is_origin() {
        return Ok(Zonotope::origin(w.dim()));
    }
    let normals = zonotope_facet_normals(w)?;
    let w_supports: Vec<T> = normals.iter().map(|a| w.support_row(a.as_slice())).collect();
    let n = w.dim();
    let mut partial = Zonotope::origin(n);
    let mut power = DMatrix::<T>::identity(n, n);
    for _s in 1..=max_steps {
        partial = partial.minkowski_sum(&w.map(&power)?)?;
        power = a_k * power;
        let image = w.map(&power)?;
        let alpha = normals
            .iter()
            .zip(&w_supports)
            .map(|(a, &hw)| image.support_row(a.as_slice()) / hw)
            .fold(T::zero(), |acc, v| if v > acc { v } else { acc });
        let radius = (0..n)
            .map(|i| {
                partial
                    .generators()
                    .row(i)
                    .iter()
                    .fold(T::zero(), |acc, v| acc + v.abs())
            })
            .fold(T::zero(), |acc, v| if v > acc { v } else { acc });
        if alpha < T::one() && alpha <= eps / (eps + radius) {
            return Ok(partial.scale(T::one() / (T::one() - alpha)));
        }
    }
    Err(Error::NoConvergence("mRPI inclusion test", max_steps))
}

/// Facet normals of a full-dimensional zonotope: one normal per
/// `(n-1)`-subset of linearly independent generators.
fn zonotope_facet_normals<T: Scalar>(w: &Zonotope<T>) -> Result<Vec<DVector<T>>> {
    let n = w.dim();
    let tol = T::lit(1e-12);
    let gens: Vec<DVector<T>> = (0..w.num_generators())
        .map(|j| w.generators().column(j).into_owned())
        .filter(|g| g.amax() > tol)
        .collect();
    let rank = if gens.is_empty() {
        0
    } else {
        DMatrix::from_columns(&gens).rank(T::lit(1e-10))
    };
    if rank < n {
        return Err(Error::InvalidInput(
            "mRPI approximation needs a full-dimensional disturbance set".into(),
        ));
    }
    if n == 1 {
        return Ok(vec![DVector::from_element(1, T::one())]);
    }
    let mut normals = Vec::new();
    let mut subset: Vec<usize> = (0..n - 1).collect();
    let m = gens.len();
    const SUBSET_CAP: usize = 200_000;
    let mut visited = 0usize;
    loop {
        visited += 1;
        if visited > SUBSET_CAP {
            return Err(Error::TooManyGenerators {
                generators: m,
                cap: SUBSET_CAP,
            });
        }
        let cols: Vec<DVector<T>> = subset.iter().map(|&j| gens[j].clone()).collect();
        let mat = DMatrix::from_columns(&cols);
        // normal = left singular vector of the smallest singular value
        let full = {
            let mut f = DMatrix::<T>::zeros(n, n);
            f.view_mut((0, 0), (n, n - 1)).copy_from(&mat);
            f
        };
        let svd = full.svd(true, false);
        let sv = &svd.singular_values;
        let smax = sv.max();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap_or(std::cmp::Ordering::Equal));
        if sv[order[n - 2]] > T::lit(1e-10) * smax {
            let u = svd.u.as_ref().expect("left singular vectors");
            let normal = u.column(order[n - 1]).into_owned();
            normals.push(normal);
        }
        // next combination
        let mut i = n - 1;
        loop {
            if i == 0 {
                return Ok(normals);
            }
            i -= 1;
            if subset[i] < m - (n - 1 - i) {
                subset[i] += 1;
                for j in i + 1..n - 1 {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn check_square<T: Scalar>(a_k: &DMatrix<T>, h_w: &DMatrix<T>) -> Result<()> {
    if !a_k.is_square() {
        return Err(Error::dims("A_K square", a_k.nrows(), a_k.ncols()));
    }
    if h_w.nrows() != a_k.nrows() {
        return Err(Error::dims("H_W rows", a_k.nrows(), h_w.nrows()));
    }
    Ok(())
}

/// Complete tightening data for one gain `K` and horizon `N`.
#[derive(Debug, Clone)]
pub struct TighteningSchedule<T: Scalar> {
    a_k: DMatrix<T>,
    h: Vec<Zonotope<T>>,
    l_n: Zonotope<T>,
    x_tight: Vec<ConstraintPolytope<T>>,
    u_tight: Vec<ConstraintPolytope<T>>,
    tail_norm: T,
}

impl<T: Scalar> TighteningSchedule<T> {
    /// Builds the schedule for `A_K = A + B K`. Tightened sets are kept for
    /// `i = 0..=N`; index `N` feeds the terminal admissibility conditions.
    pub fn build(
        a: &DMatrix<T>,
        b: &DMatrix<T>,
        k: &DMatrix<T>,
        h_w: &DMatrix<T>,
        x: &ConstraintPolytope<T>,
        u: &ConstraintPolytope<T>,
        horizon: usize,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon N must be at least 1".into()));
        }
        if b.nrows() != a.nrows() || k.nrows() != b.ncols() || k.ncols() != a.ncols() {
            return Err(Error::dims("gain K", b.ncols(), k.nrows()));
        }
        let a_k = a + b * k;
        let h = build_h(&a_k, h_w, horizon)?;
        let l_n = build_l(&a_k, h_w, horizon)?;
        let (x_tight, u_tight) = tighten_constraints(x, u, k, &h)?;
        let tail = tail_norm(&a_k, horizon);
        Ok(Self {
            a_k,
            h,
            l_n,
            x_tight,
            u_tight,
            tail_norm: tail,
        })
    }

    /// Reassembles a schedule from persisted offsets (no H generators).
    pub fn from_parts(
        a_k: DMatrix<T>,
        l_n: Zonotope<T>,
        x_tight: Vec<ConstraintPolytope<T>>,
        u_tight: Vec<ConstraintPolytope<T>>,
        tail_norm: T,
    ) -> Self {
        Self {
            a_k,
            h: Vec::new(),
            l_n,
            x_tight,
            u_tight,
            tail_norm,
        }
    }

    pub fn horizon(&self) -> usize {
        self.x_tight.len().saturating_sub(1)
    }

    pub fn a_k(&self) -> &DMatrix<T> {
        &self.a_k
    }

    /// `H(i)`; empty when the schedule was reloaded from offsets only.
    pub fn h(&self) -> &[Zonotope<T>] {
        &self.h
    }

    pub fn l_n(&self) -> &Zonotope<T> {
        &self.l_n
    }

    pub fn x_tight(&self, i: usize) -> &ConstraintPolytope<T> {
        &self.x_tight[i]
    }

    pub fn u_tight(&self, i: usize) -> &ConstraintPolytope<T> {
        &self.u_tight[i]
    }

    pub fn x_sets(&self) -> &[ConstraintPolytope<T>] {
        &self.x_tight
    }

    pub fn u_sets(&self) -> &[ConstraintPolytope<T>] {
        &self.u_tight
    }

    pub fn tail_norm(&self) -> T {
        self.tail_norm
    }

    pub fn negligible(&self, threshold: T) -> bool {
        negligible_l(self.tail_norm, threshold)
    }
}
