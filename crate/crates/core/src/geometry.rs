//! Orthogonal projection onto the complement of the covariate span, and the
//! projection of area centroids into the covariate-free geography.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SpockError};
use crate::scalar::Scalar;

/// Singular-value ratio below which a design is treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Full-column-rank covariate matrix `X` (n × q).
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix<T: Scalar> {
    values: DMatrix<T>,
    has_intercept: bool,
    names: Vec<String>,
}

impl<T: Scalar> DesignMatrix<T> {
    /// Validates `n > q` and full column rank.
    pub fn new(values: DMatrix<T>, has_intercept: bool) -> Result<Self> {
        let q = values.ncols();
        let names = (0..q)
            .map(|j| if has_intercept && j == 0 { "intercept".to_string() } else { format!("x{j}") })
            .collect();
        Self::with_names(values, has_intercept, names)
    }

    pub fn with_names(values: DMatrix<T>, has_intercept: bool, names: Vec<String>) -> Result<Self> {
        let (n, q) = values.shape();
        if q == 0 {
            return Err(SpockError::DimensionMismatch("design matrix has no columns".into()));
        }
        if n <= q {
            return Err(SpockError::DimensionMismatch(format!(
                "design matrix needs more rows than columns, got {n}x{q}"
            )));
        }
        if names.len() != q {
            return Err(SpockError::LengthMismatch(format!(
                "{} column names for {q} columns",
                names.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SpockError::InvalidParameter("design matrix has non-finite entries".into()));
        }
        if has_intercept && values.column(0).iter().any(|&v| v != T::one()) {
            return Err(SpockError::InvalidParameter(
                "intercept column must be all ones".into(),
            ));
        }
        let rank = numerical_rank(&values);
        if rank < q {
            return Err(SpockError::RankDeficient { rank, cols: q });
        }
        Ok(Self { values, has_intercept, names })
    }

    /// Prepends a column of ones to `covariates`.
    pub fn with_intercept(covariates: &DMatrix<T>, names: &[String]) -> Result<Self> {
        let n = covariates.nrows();
        let mut values = DMatrix::from_element(n, covariates.ncols() + 1, T::one());
        values.columns_mut(1, covariates.ncols()).copy_from(covariates);
        let mut all = vec!["intercept".to_string()];
        all.extend_from_slice(names);
        Self::with_names(values, true, all)
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Columns other than the intercept.
    pub fn non_intercept(&self) -> DMatrix<T> {
        if self.has_intercept {
            self.values.columns(1, self.ncols() - 1).into_owned()
        } else {
            self.values.clone()
        }
    }

    /// Orthonormal basis `Q₁` (n × q) of the column span.
    pub fn span_basis(&self) -> DMatrix<T> {
        self.values.clone().qr().q()
    }

    /// Orthonormal basis (n × (n − q)) of the orthogonal complement of the
    /// column span.
    pub fn complement_basis(&self) -> DMatrix<T> {
        let (n, q) = self.values.shape();
        let mut aug = DMatrix::zeros(n, n + q);
        aug.columns_mut(0, q).copy_from(&self.values);
        aug.columns_mut(q, n).fill_with_identity();
        let full = aug.qr().q();
        full.columns(q, n - q).into_owned()
    }

    /// Least-squares coefficients `(XᵀX)⁻¹Xᵀv`, solved through the QR factors.
    pub fn regress(&self, v: &DVector<T>) -> Result<DVector<T>> {
        if v.len() != self.nrows() {
            return Err(SpockError::DimensionMismatch(format!(
                "vector of length {} against {} rows",
                v.len(),
                self.nrows()
            )));
        }
        let qr = self.values.clone().qr();
        let rhs = qr.q().transpose() * v;
        qr.r()
            .solve_upper_triangular(&rhs)
            .ok_or(SpockError::RankDeficient { rank: 0, cols: self.ncols() })
    }
}

/// Number of singular values above `RANK_TOLERANCE` times the largest.
pub fn numerical_rank<T: Scalar>(m: &DMatrix<T>) -> usize {
    let sv = m.clone().singular_values();
    let max = sv.iter().fold(T::zero(), |a, &b| if b > a { b } else { a });
    if max <= T::zero() {
        return 0;
    }
    let tol = T::lit(RANK_TOLERANCE).max(T::default_epsilon() * T::lit(10.0));
    sv.iter().filter(|&&s| s / max >= tol).count()
}

/// Planar centroid coordinates, one row per area.
#[derive(Clone, Debug, PartialEq)]
pub struct CentroidSet<T: Scalar> {
    coords: DMatrix<T>,
    area_ids: Vec<String>,
}

impl<T: Scalar> CentroidSet<T> {
    /// Builds a set of distinct centroids. `coords` must be n × 2.
    pub fn new(coords: DMatrix<T>, area_ids: Vec<String>) -> Result<Self> {
        let set = Self::new_unchecked(coords, area_ids)?;
        let mut seen: HashMap<(u64, u64), usize> = HashMap::new();
        for i in 0..set.len() {
            let key = (set.x(i).as_f64().to_bits(), set.y(i).as_f64().to_bits());
            if let Some(&j) = seen.get(&key) {
                return Err(SpockError::DuplicateCentroid(
                    set.area_ids[j].clone(),
                    set.area_ids[i].clone(),
                ));
            }
            seen.insert(key, i);
        }
        Ok(set)
    }

    /// Like [`CentroidSet::new`] but allows coincident rows, which can
    /// legitimately occur after projection.
    pub fn new_unchecked(coords: DMatrix<T>, area_ids: Vec<String>) -> Result<Self> {
        if coords.ncols() != 2 {
            return Err(SpockError::DimensionMismatch(format!(
                "centroids need 2 columns, got {}",
                coords.ncols()
            )));
        }
        if coords.nrows() != area_ids.len() {
            return Err(SpockError::LengthMismatch(format!(
                "{} centroid rows for {} ids",
                coords.nrows(),
                area_ids.len()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(SpockError::InvalidParameter("non-finite centroid coordinate".into()));
        }
        Ok(Self { coords, area_ids })
    }

    /// Centroids labelled `0..n`.
    pub fn from_points(points: &[(T, T)]) -> Result<Self> {
        let coords = DMatrix::from_fn(points.len(), 2, |i, j| if j == 0 { points[i].0 } else { points[i].1 });
        Self::new(coords, (0..points.len()).map(|i| i.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    pub fn coords(&self) -> &DMatrix<T> {
        &self.coords
    }

    pub fn area_ids(&self) -> &[String] {
        &self.area_ids
    }

    #[inline]
    pub fn x(&self, i: usize) -> T {
        self.coords[(i, 0)]
    }

    #[inline]
    pub fn y(&self, i: usize) -> T {
        self.coords[(i, 1)]
    }

    pub fn point(&self, i: usize) -> (T, T) {
        (self.x(i), self.y(i))
    }

    pub fn squared_distance(&self, i: usize, j: usize) -> T {
        let dx = self.x(i) - self.x(j);
        let dy = self.y(i) - self.y(j);
        dx * dx + dy * dy
    }
}

/// The residual-maker `P⊥ = I − X(XᵀX)⁻¹Xᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionOperator<T: Scalar> {
    matrix: DMatrix<T>,
}

impl<T: Scalar> ProjectionOperator<T> {
    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, v: &DVector<T>) -> DVector<T> {
        &self.matrix * v
    }

    /// The complementary projector `P = I − P⊥` onto span(X).
    pub fn complement(&self) -> DMatrix<T> {
        DMatrix::identity(self.dim(), self.dim()) - &self.matrix
    }
}

/// Builds `P⊥` from the thin orthogonal factor of `X`: `P⊥ = I − Q₁Q₁ᵀ`.
pub fn build_projector<T: Scalar>(x: &DesignMatrix<T>) -> ProjectionOperator<T> {
    let q1 = x.span_basis();
    let n = x.nrows();
    let mut matrix = DMatrix::identity(n, n);
    matrix.gemm(-T::one(), &q1, &q1.transpose(), T::one());
    // Symmetrize away round-off so the operator is exactly symmetric.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = (matrix[(i, j)] + matrix[(j, i)]) * T::lit(0.5);
            matrix[(i, j)] = avg;
            matrix[(j, i)] = avg;
        }
    }
    ProjectionOperator { matrix }
}

/// `s* = P⊥ s`, keeping ids and row order.
pub fn project_centroids<T: Scalar>(
    s: &CentroidSet<T>,
    p: &ProjectionOperator<T>,
) -> Result<CentroidSet<T>> {
    if p.dim() != s.len() {
        return Err(SpockError::DimensionMismatch(format!(
            "projector is {0}x{0} but there are {1} centroids",
            p.dim(),
            s.len()
        )));
    }
    CentroidSet::new_unchecked(p.matrix() * s.coords(), s.area_ids.clone())
}
