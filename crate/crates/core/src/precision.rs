//! Sparse precision matrices for the spatial priors (ICAR, proper CAR,
//! Leroux) and the Moran-operator eigenbasis used by the reduced-rank model.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::cholesky::SparseCholesky;
use crate::error::{Result, SpockError};
use crate::geometry::{build_projector, DesignMatrix};
use crate::graph::{connected_components, NeighborhoodGraph};
use crate::scalar::Scalar;

/// Which prior the precision encodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PrecisionFamily {
    /// `Q = D − A`, intrinsic (singular).
    Icar,
    /// `Q = D − ρA`, `|ρ| < 1`.
    ProperCar { rho: f64 },
    /// `Q = λ(D − A) + (1 − λ)I`, `0 < λ < 1`.
    Leroux { lambda: f64 },
}

impl PrecisionFamily {
    pub fn is_intrinsic(&self) -> bool {
        matches!(self, PrecisionFamily::Icar)
    }
}

/// Symmetric sparse matrix whose off-diagonal pattern is a graph's edge set.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsePrecision<T: Scalar> {
    diag: Vec<T>,
    /// Per row: `(column, value)` for off-diagonal entries, sorted by column.
    rows: Vec<Vec<(usize, T)>>,
    structural_rank: usize,
    n_components: usize,
    family: PrecisionFamily,
}

impl<T: Scalar> SparsePrecision<T> {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn family(&self) -> PrecisionFamily {
        self.family
    }

    pub fn structural_rank(&self) -> usize {
        self.structural_rank
    }

    /// Connected components of the underlying graph.
    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn diag(&self, i: usize) -> T {
        self.diag[i]
    }

    pub fn row(&self, i: usize) -> &[(usize, T)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if i == j {
            return self.diag[i];
        }
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|k| self.rows[i][k].1)
            .unwrap_or_else(|_| T::zero())
    }

    /// Off-diagonal pattern as neighbor lists.
    pub fn pattern(&self) -> Vec<Vec<usize>> {
        self.rows.iter().map(|r| r.iter().map(|&(c, _)| c).collect()).collect()
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        (0..self.n())
            .map(|i| {
                let mut acc = self.diag[i] * x[i];
                for &(j, v) in &self.rows[i] {
                    acc += v * x[j];
                }
                acc
            })
            .collect()
    }

    /// `xᵀQx`.
    pub fn quad_form(&self, x: &[T]) -> T {
        self.mul_vec(x).iter().zip(x).fold(T::zero(), |a, (u, v)| a + *u * *v)
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            for &(j, v) in &self.rows[i] {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Sparse Cholesky of `Q`; fails for the intrinsic (singular) family.
    pub fn cholesky(&self) -> Result<SparseCholesky<T>> {
        let mut ch = SparseCholesky::analyze(&self.pattern());
        ch.refactor(|set| {
            for i in 0..self.n() {
                set(i, i, self.diag[i]);
                for &(j, v) in &self.rows[i] {
                    if j < i {
                        set(i, j, v);
                    }
                }
            }
        })?;
        Ok(ch)
    }

    /// Coordinate triplets `i j value` for the lower triangle, row-major.
    pub fn to_triplets(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n() {
            for &(j, v) in self.rows[i].iter().filter(|&&(j, _)| j < i) {
                let _ = writeln!(out, "{i} {j} {v}");
            }
            let _ = writeln!(out, "{i} {i} {}", self.diag[i]);
        }
        out
    }

    fn build(g: &NeighborhoodGraph, family: PrecisionFamily, diag: Vec<T>, off: T) -> Self {
        let rows = (0..g.n()).map(|i| g.neighbors(i).iter().map(|&j| (j, off)).collect()).collect();
        let n_components = connected_components(g).count;
        let structural_rank = if family.is_intrinsic() { g.n() - n_components } else { g.n() };
        Self { diag, rows, structural_rank, n_components, family }
    }
}

/// Unweighted graph Laplacian `D − A`; rank `n − #components`.
pub fn icar_precision<T: Scalar>(g: &NeighborhoodGraph) -> Result<SparsePrecision<T>> {
    if g.n() < 2 {
        return Err(SpockError::InvalidParameter("ICAR precision needs at least 2 areas".into()));
    }
    let diag = g.degrees().into_iter().map(T::from_count).collect();
    Ok(SparsePrecision::build(g, PrecisionFamily::Icar, diag, -T::one()))
}

/// `D − ρA` for `|ρ| < 1`.
pub fn proper_car_precision<T: Scalar>(g: &NeighborhoodGraph, rho: f64) -> Result<SparsePrecision<T>> {
    if !(rho.abs() < 1.0) {
        return Err(SpockError::InvalidParameter(format!("proper CAR needs |rho| < 1, got {rho}")));
    }
    if let Some(i) = (0..g.n()).find(|&i| g.degree(i) == 0) {
        return Err(SpockError::InvalidParameter(format!(
            "proper CAR precision is singular: area {i} has no neighbors"
        )));
    }
    let diag = g.degrees().into_iter().map(T::from_count).collect();
    Ok(SparsePrecision::build(g, PrecisionFamily::ProperCar { rho }, diag, -T::lit(rho)))
}

/// `λ(D − A) + (1 − λ)I` for `0 < λ < 1`.
pub fn leroux_precision<T: Scalar>(g: &NeighborhoodGraph, lambda: f64) -> Result<SparsePrecision<T>> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(SpockError::InvalidParameter(format!("Leroux needs 0 < lambda < 1, got {lambda}")));
    }
    let lam = T::lit(lambda);
    let diag = g
        .degrees()
        .into_iter()
        .map(|d| lam * T::from_count(d) + (T::one() - lam))
        .collect();
    Ok(SparsePrecision::build(g, PrecisionFamily::Leroux { lambda }, diag, -lam))
}

/// Precision for `family` on graph `g`.
pub fn precision_for<T: Scalar>(g: &NeighborhoodGraph, family: PrecisionFamily) -> Result<SparsePrecision<T>> {
    match family {
        PrecisionFamily::Icar => icar_precision(g),
        PrecisionFamily::ProperCar { rho } => proper_car_precision(g, rho),
        PrecisionFamily::Leroux { lambda } => leroux_precision(g, lambda),
    }
}

/// Leading eigenvectors of the Moran operator `P⊥AP⊥`.
#[derive(Clone, Debug)]
pub struct MoranBasis<T: Scalar> {
    pub vectors: DMatrix<T>,
    /// Descending.
    pub eigenvalues: Vec<T>,
}

impl<T: Scalar> MoranBasis<T> {
    pub fn h(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// Eigenvectors of the `h` largest eigenvalues of `P⊥AP⊥`, restricted to
/// `span(X)⊥` (the operator annihilates `span(X)`, whose trivial zero
/// eigenvectors are never returned).
pub fn moran_basis<T: Scalar>(g: &NeighborhoodGraph, x: &DesignMatrix<T>, h: usize) -> Result<MoranBasis<T>> {
    let n = g.n();
    let q = x.ncols();
    if x.nrows() != n {
        return Err(SpockError::DimensionMismatch(format!("{} design rows for {n} areas", x.nrows())));
    }
    if h == 0 || h > n - q {
        return Err(SpockError::InvalidParameter(format!("h must be in 1..={}, got {h}", n - q)));
    }
    // Work in coordinates of an orthonormal basis L of span(X)⊥:
    // P⊥AP⊥ = L (LᵀAL) Lᵀ, so its eigenvectors outside span(X) are L·v.
    let l = x.complement_basis();
    let mut a = DMatrix::zeros(n, n);
    for &(i, j) in g.edges() {
        a[(i, j)] = T::one();
        a[(j, i)] = T::one();
    }
    let reduced = l.transpose() * &a * &l;
    let eig = SymmetricEigen::new(reduced);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap().then(i.cmp(&j)));
    let mut vectors = DMatrix::zeros(n, h);
    let mut eigenvalues = Vec::with_capacity(h);
    for (c, &k) in idx.iter().take(h).enumerate() {
        let v: DVector<T> = &l * eig.eigenvectors.column(k);
        vectors.set_column(c, &v);
        eigenvalues.push(eig.eigenvalues[k]);
    }
    Ok(MoranBasis { vectors, eigenvalues })
}

/// Dense `P⊥AP⊥`, for callers that want the operator itself.
pub fn moran_operator<T: Scalar>(g: &NeighborhoodGraph, x: &DesignMatrix<T>) -> DMatrix<T> {
    let p = build_projector(x);
    let mut a = DMatrix::zeros(g.n(), g.n());
    for &(i, j) in g.edges() {
        a[(i, j)] = T::one();
        a[(j, i)] = T::one();
    }
    p.matrix() * a * p.matrix()
}
