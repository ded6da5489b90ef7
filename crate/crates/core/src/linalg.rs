//! Dense linear algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, RealField};

use crate::error::{Error, Result};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).abs().max()
}

pub fn min_eig_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

pub fn max_eig_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    symmetrize(m).symmetric_eigenvalues().max()
}

/// Principal square root of a symmetric positive semidefinite matrix.
/// Slightly negative eigenvalues (round-off) are clamped to zero.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Inverse square root of a symmetric positive definite matrix.
pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = symmetrize(m).symmetric_eigen();
    if eig.eigenvalues.iter().any(|&v| v <= 0.0) {
        return Err(Error::Numerical("matrix is not positive definite".into()));
    }
    let d = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// `m^k` by binary exponentiation.
pub fn mat_pow<T: RealField + Copy>(m: &DMatrix<T>, mut k: usize) -> DMatrix<T> {
    let n = m.nrows();
    let mut result = DMatrix::<T>::identity(n, n);
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Largest singular value.
pub fn spectral_norm<T: RealField + Copy>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 || m.ncols() == 0 {
        return T::zero();
    }
    m.singular_values()
        .iter()
        .fold(T::zero(), |acc, &s| if s > acc { s } else { acc })
}

pub fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular matrix".into()))
}

/// Solves the Stein equation `X = A' X A + C` by doubling. Requires `rho(A) < 1`.
pub fn solve_stein(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut x = c.clone();
    let mut ak = a.clone();
    for _ in 0..64 {
        let inc = ak.transpose() * &x * &ak;
        x += &inc;
        ak = &ak * &ak;
        let scale = x.abs().max().max(1.0);
        if inc.abs().max() <= 1e-17 * scale || ak.abs().max() < 1e-300 {
            return Ok(symmetrize(&x));
        }
        if !x.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::NoConvergence("Stein doubling", 64))
}

/// Rank of `[B, AB, ..., A^{n-1}B]` computed from singular values.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::<f64>::zeros(n, n * m);
    let mut blk = b.clone();
    for i in 0..n {
        ctrb.view_mut((0, i * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    let sv = ctrb.singular_values();
    let smax = sv.max();
    sv.iter().filter(|&&s| s > tol * smax.max(1.0)).count()
}

pub fn is_finite_matrix(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn inf_norm_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Symmetric positive definite band matrix, lower band stored row-wise.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Adds `v` at `(i, j)`; entries above the diagonal are folded onto their mirror.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        assert!(i - j <= self.bw, "entry ({i},{j}) outside band {}", self.bw);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// In-place Cholesky factorization `M = L L'`.
    pub fn cholesky(mut self) -> Result<BandCholesky> {
        let n = self.n;
        let bw = self.bw;
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut sum = self.data[self.idx(i, j)];
                for k in k0..j {
                    sum -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(Error::Numerical(format!(
                            "band matrix not positive definite at pivot {i}"
                        )));
                    }
                    let id = self.idx(i, i);
                    self.data[id] = sum.sqrt();
                } else {
                    let id = self.idx(i, j);
                    self.data[id] = sum / self.data[self.idx(j, j)];
                }
            }
        }
        Ok(BandCholesky { l: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    l: BandMatrix,
}

impl BandCholesky {
    pub fn dim(&self) -> usize {
        self.l.n
    }

    /// Solves `L L' x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.l.n;
        let bw = self.l.bw;
        let l = &self.l;
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= l.data[l.idx(i, k)] * b[k];
            }
            b[i] = s / l.data[l.idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..(i + bw + 1).min(n) {
                s -= l.data[l.idx(k, i)] * b[k];
            }
            b[i] = s / l.data[l.idx(i, i)];
        }
    }
}
