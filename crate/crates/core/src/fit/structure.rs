//! The spatial part of each model: which prior, in which basis.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{FitInput, Method, ModelSpec, Reconstruction};
use crate::error::{Result, SpockError};
use crate::geometry::{build_projector, numerical_rank, project_centroids, CentroidSet, DesignMatrix};
use crate::graph::{connected_components, delaunay_reconstruct, knn_reconstruct, NeighborhoodGraph};
use crate::precision::{icar_precision, moran_basis, precision_for, SparsePrecision};

/// `min(⌈0.1 n⌉, 50)`.
pub fn hh_default_h(n: usize) -> usize {
    n.div_ceil(10).min(50)
}

/// The graph SPOCK fits on: projected centroids `P⊥s`, reconnected by Knn
/// (each area keeps its original degree unless overridden) or Delaunay.
pub fn spock_graph(
    x: &DesignMatrix<f64>,
    s: &CentroidSet<f64>,
    g: &NeighborhoodGraph,
    how: &Reconstruction,
) -> Result<NeighborhoodGraph> {
    if s.len() != g.n() {
        return Err(SpockError::DimensionMismatch(format!("{} centroids for {} areas", s.len(), g.n())));
    }
    let s_star = project_centroids(s, &build_projector(x))?;
    match how {
        Reconstruction::Delaunay => delaunay_reconstruct(&s_star),
        Reconstruction::Knn { k_override } => {
            // Islands have degree 0; they still get one neighbor.
            let k: Vec<usize> = match k_override {
                Some(k) => vec![*k; g.n()],
                None => g.degrees().into_iter().map(|d| d.max(1)).collect(),
            };
            knn_reconstruct(&s_star, &k)
        }
    }
}

/// Spatial effect structure shared by the samplers.
#[derive(Clone, Debug)]
pub enum Latent {
    None,
    /// `θ ∈ ℝⁿ` with sparse precision `τ_θ Q`. `groups` lists the components
    /// that carry a sum-to-zero constraint (empty for proper priors).
    Sparse { q: SparsePrecision<f64>, groups: Vec<Vec<usize>>, rank: usize, graph: NeighborhoodGraph },
    /// `θ = Bθ₂` with `θ₂` of precision `τ_θ R`, `R = BᵀQB`.
    Dense { basis: DMatrix<f64>, prior: DMatrix<f64>, rank: usize, graph: NeighborhoodGraph },
}

impl Latent {
    pub fn build(input: &FitInput<'_>, spec: &ModelSpec) -> Result<Self> {
        if spec.method == Method::Lm {
            return Ok(Latent::None);
        }
        let g = input
            .graph
            .ok_or_else(|| SpockError::InvalidParameter(format!("{} needs a neighborhood graph", spec.method.name())))?;
        let n = input.x.nrows();
        if g.n() != n {
            return Err(SpockError::DimensionMismatch(format!("graph has {} areas, design has {n} rows", g.n())));
        }
        match spec.method {
            Method::Icar => Self::sparse(g.clone(), spec),
            Method::Spock => {
                let s = input
                    .centroids
                    .ok_or_else(|| SpockError::InvalidParameter("SPOCK needs area centroids".into()))?;
                Self::sparse(spock_graph(input.x, s, g, &spec.reconstruction)?, spec)
            }
            Method::Rhz => {
                let l = input.x.complement_basis();
                let q = icar_precision::<f64>(g)?;
                let prior = sandwich(&q, &l);
                // null(LᵀQL) = span(L) ∩ null(Q), and null(Q) is spanned by
                // component indicators C, so its dimension is k − rank(XᵀC).
                let members = connected_components(g).members();
                let mut xc = DMatrix::<f64>::zeros(input.x.ncols(), members.len());
                for (c, m) in members.iter().enumerate() {
                    for &i in m {
                        for r in 0..input.x.ncols() {
                            xc[(r, c)] += input.x.values()[(i, r)];
                        }
                    }
                }
                let null = members.len() - numerical_rank(&xc);
                let rank = l.ncols() - null;
                Ok(Latent::Dense { basis: l, prior, rank, graph: g.clone() })
            }
            Method::Hh => {
                let h = spec.h.unwrap_or_else(|| hh_default_h(n).min(n - input.x.ncols()));
                let m = moran_basis(g, input.x, h)?.vectors;
                let q = icar_precision::<f64>(g)?;
                let prior = sandwich(&q, &m);
                let eig = SymmetricEigen::new(prior.clone()).eigenvalues;
                let max = eig.iter().cloned().fold(0.0, f64::max);
                let rank = eig.iter().filter(|&&e| e > 1e-10 * max).count();
                Ok(Latent::Dense { basis: m, prior, rank, graph: g.clone() })
            }
            Method::Lm => unreachable!(),
        }
    }

    fn sparse(graph: NeighborhoodGraph, spec: &ModelSpec) -> Result<Self> {
        let q = precision_for::<f64>(&graph, spec.spatial_family)?;
        let groups = if spec.spatial_family.is_intrinsic() { connected_components(&graph).members() } else { Vec::new() };
        let rank = q.structural_rank();
        Ok(Latent::Sparse { q, groups, rank, graph })
    }

    pub fn graph(&self) -> Option<&NeighborhoodGraph> {
        match self {
            Latent::None => None,
            Latent::Sparse { graph, .. } | Latent::Dense { graph, .. } => Some(graph),
        }
    }
}

/// `BᵀQB` for sparse `Q`.
fn sandwich(q: &SparsePrecision<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = b.shape();
    let mut qb = DMatrix::zeros(n, d);
    for i in 0..n {
        for c in 0..d {
            let mut acc = q.diag(i) * b[(i, c)];
            for &(j, v) in q.row(i) {
                acc += v * b[(j, c)];
            }
            qb[(i, c)] = acc;
        }
    }
    let mut r = b.transpose() * qb;
    r = (&r + r.transpose()) * 0.5;
    r
}
