//! Convex set calculus: zonotopes `G·B_M`, H-polytopes `{z : F z <= f}` and
//! ellipsoids `{x : x' P x <= r^2}`.
//!
//! Everything here is generic over [`Scalar`] and purely functional: every
//! operation returns a new set.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default cap on the generator count accepted by [`Zonotope::vertices`].
pub const DEFAULT_VERTEX_CAP: usize = 16;

/// Centered zonotope `{G v : ||v||_inf <= 1}`. Zero generators denote `{0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope<T: Scalar> {
    generators: DMatrix<T>,
}

impl<T: Scalar> Zonotope<T> {
    pub fn new(generators: DMatrix<T>) -> Result<Self> {
        if !generators.iter().all(|v| v.is_finite_value()) {
            return Err(Error::NonFinite("zonotope generators"));
        }
        Ok(Self { generators })
    }

    /// The singleton `{0}` in dimension `n`.
    pub fn origin(n: usize) -> Self {
        Self {
            generators: DMatrix::zeros(n, 0),
        }
    }

    /// Axis-aligned box `{x : |x_i| <= half_widths_i}`.
    pub fn from_box(half_widths: &[T]) -> Self {
        let d = DVector::from_column_slice(half_widths);
        Self {
            generators: DMatrix::from_diagonal(&d),
        }
    }

    pub fn dim(&self) -> usize {
        self.generators.nrows()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.ncols()
    }

    pub fn generators(&self) -> &DMatrix<T> {
        &self.generators
    }

    pub fn is_origin(&self) -> bool {
        self.generators.iter().all(|v| v.is_zero())
    }

    /// Linear image `M · Z`.
    pub fn map(&self, m: &DMatrix<T>) -> Result<Self> {
        if m.ncols() != self.dim() {
            return Err(Error::dims("map_zonotope", self.dim(), m.ncols()));
        }
        Ok(Self {
            generators: m * &self.generators,
        })
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            generators: &self.generators * s,
        }
    }

    /// Minkowski sum by generator concatenation.
    pub fn minkowski_sum(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::dims("minkowski_sum", self.dim(), other.dim()));
        }
        let n = self.dim();
        let (mc, md) = (self.num_generators(), other.num_generators());
        let mut g = DMatrix::<T>::zeros(n, mc + md);
        g.view_mut((0, 0), (n, mc)).copy_from(&self.generators);
        g.view_mut((0, mc), (n, md)).copy_from(&other.generators);
        Ok(Self { generators: g })
    }

    /// Support function `max_{z in Z} c'z = ||c' G||_1`.
    pub fn support(&self, c: &DVector<T>) -> Result<T> {
        if c.len() != self.dim() {
            return Err(Error::dims("support_zonotope", self.dim(), c.len()));
        }
        Ok(self.support_row(c.as_slice()))
    }

    pub(crate) fn support_row(&self, c: &[T]) -> T {
        let mut total = T::zero();
        for j in 0..self.num_generators() {
            let col = self.generators.column(j);
            let mut dot = T::zero();
            for (ci, gi) in c.iter().zip(col.iter()) {
                dot += *ci * *gi;
            }
            total += dot.abs();
        }
        total
    }

    /// All sign images `G s`, `s in {-1,1}^M`, without duplicates. This is a
    /// superset of the vertex set; every point returned lies in the zonotope.
    pub fn vertices(&self, cap: usize) -> Result<Vec<DVector<T>>> {
        let tol = T::default_tol();
        let cols: Vec<usize> = (0..self.num_generators())
            .filter(|&j| self.generators.column(j).amax() > tol)
            .collect();
        if cols.len() > cap {
            return Err(Error::TooManyGenerators {
                generators: cols.len(),
                cap,
            });
        }
        let n = self.dim();
        let count = 1usize << cols.len();
        let mut pts: Vec<DVector<T>> = Vec::with_capacity(count);
        for mask in 0..count {
            let mut p = DVector::<T>::zeros(n);
            for (bit, &j) in cols.iter().enumerate() {
                let col = self.generators.column(j);
                if mask >> bit & 1 == 1 {
                    p += col;
                } else {
                    p -= col;
                }
            }
            pts.push(p);
        }
        pts.sort_by(|a, b| {
            for (x, y) in a.iter().zip(b.iter()) {
                match x.partial_cmp(y) {
                    Some(std::cmp::Ordering::Equal) | None => continue,
                    Some(o) => return o,
                }
            }
            std::cmp::Ordering::Equal
        });
        pts.dedup_by(|a, b| (&*a - &*b).amax() <= tol);
        Ok(pts)
    }

    /// Axis-aligned interval hull, a box zonotope containing `self`.
    pub fn interval_hull(&self) -> Self {
        let radii: Vec<T> = (0..self.dim())
            .map(|i| {
                self.generators
                    .row(i)
                    .iter()
                    .fold(T::zero(), |acc, v| acc + v.abs())
            })
            .collect();
        Self::from_box(&radii)
    }

    /// Image `G v` of a point of the unit box.
    pub fn point(&self, v: &DVector<T>) -> Result<DVector<T>> {
        if v.len() != self.num_generators() {
            return Err(Error::dims("zonotope point", self.num_generators(), v.len()));
        }
        Ok(&self.generators * v)
    }
}

/// Compact polytope `{z : F z <= f}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintPolytope<T: Scalar> {
    normals: DMatrix<T>,
    offsets: DVector<T>,
}

impl<T: Scalar> ConstraintPolytope<T> {
    pub fn new(normals: DMatrix<T>, offsets: DVector<T>) -> Result<Self> {
        if normals.nrows() != offsets.len() {
            return Err(Error::dims("polytope rows", normals.nrows(), offsets.len()));
        }
        if !normals.iter().chain(offsets.iter()).all(|v| v.is_finite_value()) {
            return Err(Error::NonFinite("polytope"));
        }
        for (i, row) in normals.row_iter().enumerate() {
            if row.iter().all(|v| v.is_zero()) {
                return Err(Error::InvalidInput(format!("polytope row {i} is zero")));
            }
        }
        Ok(Self { normals, offsets })
    }

    /// Box `{x : lo_i <= x_i <= hi_i}` as `2n` rows (`+e_i` rows first).
    pub fn from_bounds(lo: &[T], hi: &[T]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::dims("box bounds", lo.len(), hi.len()));
        }
        let n = lo.len();
        let mut f = DMatrix::<T>::zeros(2 * n, n);
        let mut b = DVector::<T>::zeros(2 * n);
        for i in 0..n {
            f[(i, i)] = T::one();
            b[i] = hi[i];
            f[(n + i, i)] = -T::one();
            b[n + i] = -lo[i];
        }
        Self::new(f, b)
    }

    /// Symmetric box `{x : |x_i| <= r_i}`.
    pub fn symmetric_box(radii: &[T]) -> Result<Self> {
        let lo: Vec<T> = radii.iter().map(|r| -*r).collect();
        Self::from_bounds(&lo, radii)
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.normals.nrows()
    }

    pub fn normals(&self) -> &DMatrix<T> {
        &self.normals
    }

    pub fn offsets(&self) -> &DVector<T> {
        &self.offsets
    }

    /// Same normals, new offsets.
    pub fn with_offsets(&self, offsets: DVector<T>) -> Result<Self> {
        if offsets.len() != self.num_rows() {
            return Err(Error::dims("polytope offsets", self.num_rows(), offsets.len()));
        }
        Ok(Self {
            normals: self.normals.clone(),
            offsets,
        })
    }

    /// Pontryagin difference with a zonotope: `f_i -= ||F_i G_D||_1`.
    pub fn pontryagin_diff(&self, d: &Zonotope<T>) -> Result<Self> {
        if d.dim() != self.dim() {
            return Err(Error::dims("pontryagin_diff", self.dim(), d.dim()));
        }
        let shrink = self.row_supports(d);
        Ok(Self {
            normals: self.normals.clone(),
            offsets: &self.offsets - shrink,
        })
    }

    /// `g_i = h_D(F_i)` for every row.
    pub fn row_supports(&self, d: &Zonotope<T>) -> DVector<T> {
        let prod = &self.normals * d.generators();
        DVector::from_iterator(
            self.num_rows(),
            prod.row_iter()
                .map(|r| r.iter().fold(T::zero(), |acc, v| acc + v.abs())),
        )
    }

    /// Rescales every row so that `f_i = 1`. Requires the origin in the interior.
    pub fn normalize(&self) -> Result<Self> {
        let mut normals = self.normals.clone();
        for (i, &fi) in self.offsets.iter().enumerate() {
            if fi <= T::zero() {
                return Err(Error::OriginNotInterior {
                    row: i,
                    value: fi.to_f64_lossy(),
                });
            }
            let mut row = normals.row_mut(i);
            row /= fi;
        }
        Ok(Self {
            normals,
            offsets: DVector::from_element(self.num_rows(), T::one()),
        })
    }

    pub fn is_normalized(&self) -> bool {
        let tol = T::default_tol();
        self.offsets.iter().all(|&v| (v - T::one()).abs() <= tol)
    }

    /// Per-row slack `f - F x`; negative entries are violations.
    pub fn margins(&self, x: &DVector<T>) -> DVector<T> {
        &self.offsets - &self.normals * x
    }

    pub fn contains(&self, x: &DVector<T>, tol: T) -> bool {
        x.len() == self.dim() && self.margins(x).iter().all(|&m| m >= -tol)
    }

    pub fn min_offset(&self) -> T {
        self.offsets.min()
    }

    /// Sufficient nonemptiness test used for tightened sets: the origin is
    /// still inside with slack `tol`.
    pub fn contains_origin(&self, tol: T) -> bool {
        self.offsets.iter().all(|&v| v >= tol)
    }

    /// Appends the rows of `other`.
    pub fn intersect(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::dims("polytope intersection", self.dim(), other.dim()));
        }
        let (p, q, n) = (self.num_rows(), other.num_rows(), self.dim());
        let mut f = DMatrix::<T>::zeros(p + q, n);
        f.view_mut((0, 0), (p, n)).copy_from(&self.normals);
        f.view_mut((p, 0), (q, n)).copy_from(&other.normals);
        let mut b = DVector::<T>::zeros(p + q);
        b.rows_mut(0, p).copy_from(&self.offsets);
        b.rows_mut(p, q).copy_from(&other.offsets);
        Ok(Self {
            normals: f,
            offsets: b,
        })
    }
}

/// Ellipsoid `{x : x' P x <= r^2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid<T: Scalar> {
    shape: DMatrix<T>,
    radius: T,
}

impl<T: Scalar> Ellipsoid<T> {
    pub fn new(shape: DMatrix<T>, radius: T) -> Result<Self> {
        if !shape.is_square() {
            return Err(Error::dims("ellipsoid shape", shape.nrows(), shape.ncols()));
        }
        let asym = (&shape - shape.transpose()).amax();
        if asym > T::lit(1e-10) {
            return Err(Error::InvalidInput(format!(
                "ellipsoid shape not symmetric (asymmetry {asym})"
            )));
        }
        if radius <= T::zero() {
            return Err(Error::InvalidInput("ellipsoid radius must be positive".into()));
        }
        let sym = (&shape + shape.transpose()) * T::lit(0.5);
        if shape.nrows() > 0 && sym.symmetric_eigenvalues().min() <= T::zero() {
            return Err(Error::InvalidInput("ellipsoid shape not positive definite".into()));
        }
        Ok(Self { shape, radius })
    }

    pub fn shape(&self) -> &DMatrix<T> {
        &self.shape
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.shape.nrows()
    }

    /// `x' P x`.
    pub fn level(&self, x: &DVector<T>) -> T {
        (x.transpose() * &self.shape * x)[(0, 0)]
    }

    pub fn contains(&self, x: &DVector<T>) -> bool {
        x.len() == self.dim() && self.level(x) <= self.radius * self.radius + T::lit(1e-12)
    }

    /// `max_{x in E} c'x = r sqrt(c' P^{-1} c)`.
    pub fn support(&self, c: &DVector<T>) -> Result<T> {
        let inv = self
            .shape
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular ellipsoid shape".into()))?;
        Ok(self.radius * (c.transpose() * inv * c)[(0, 0)].sqrt())
    }
}

pub fn map_zonotope<T: Scalar>(m: &DMatrix<T>, z: &Zonotope<T>) -> Result<Zonotope<T>> {
    z.map(m)
}

pub fn minkowski_sum<T: Scalar>(c: &Zonotope<T>, d: &Zonotope<T>) -> Result<Zonotope<T>> {
    c.minkowski_sum(d)
}

pub fn pontryagin_diff<T: Scalar>(
    c: &ConstraintPolytope<T>,
    d: &Zonotope<T>,
) -> Result<ConstraintPolytope<T>> {
    c.pontryagin_diff(d)
}

pub fn zonotope_vertices<T: Scalar>(z: &Zonotope<T>, cap: usize) -> Result<Vec<DVector<T>>> {
    z.vertices(cap)
}

pub fn support_zonotope<T: Scalar>(z: &Zonotope<T>, c: &DVector<T>) -> Result<T> {
    z.support(c)
}

pub fn normalize_polytope<T: Scalar>(c: &ConstraintPolytope<T>) -> Result<ConstraintPolytope<T>> {
    c.normalize()
}

pub fn ellipsoid_contains<T: Scalar>(e: &Ellipsoid<T>, x: &DVector<T>) -> bool {
    e.contains(x)
}

// ---------------------------------------------------------------------------
// JSON forms: zonotope {"generators": row-major, "n", "m"}, polytope {"F", "f"}.

#[derive(Serialize, Deserialize)]
struct ZonotopeRepr<T> {
    generators: Vec<T>,
    n: usize,
    m: usize,
}

impl<T: Scalar + Serialize> Serialize for Zonotope<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (n, m) = self.generators.shape();
        let mut flat = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                flat.push(self.generators[(i, j)]);
            }
        }
        ZonotopeRepr {
            generators: flat,
            n,
            m,
        }
        .serialize(s)
    }
}

impl<'de, T: Scalar + Deserialize<'de>> Deserialize<'de> for Zonotope<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ZonotopeRepr::<T>::deserialize(d)?;
        if r.generators.len() != r.n * r.m {
            return Err(D::Error::custom(format!(
                "zonotope generators has {} entries, expected n*m = {}",
                r.generators.len(),
                r.n * r.m
            )));
        }
        Zonotope::new(DMatrix::from_row_slice(r.n, r.m, &r.generators))
            .map_err(|e| D::Error::custom(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct PolytopeRepr<T> {
    #[serde(rename = "F")]
    normals: Vec<Vec<T>>,
    f: Vec<T>,
}

impl<T: Scalar + Serialize> Serialize for ConstraintPolytope<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PolytopeRepr {
            normals: rows_of(&self.normals),
            f: self.offsets.iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de, T: Scalar + Deserialize<'de>> Deserialize<'de> for ConstraintPolytope<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = PolytopeRepr::<T>::deserialize(d)?;
        let normals = matrix_from_rows(&r.normals).map_err(D::Error::custom)?;
        // An empty F still needs a width; callers validate dimensions afterwards.
        ConstraintPolytope::new(normals, DVector::from_vec(r.f))
            .map_err(|e| D::Error::custom(e.to_string()))
    }
}

pub(crate) fn rows_of<T: Scalar>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows<T: Scalar>(rows: &[Vec<T>]) -> std::result::Result<DMatrix<T>, String> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err("ragged matrix rows".to_string());
    }
    let flat: Vec<T> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(nr, nc, &flat))
}
