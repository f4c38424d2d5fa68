//! Neighborhood graphs: storage, Knn reconstruction on projected centroids,
//! reconstruction scoring and connected components.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpockError};
use crate::geometry::CentroidSet;
use crate::scalar::Scalar;

pub use crate::delaunay::delaunay_reconstruct;

/// Undirected zero/one adjacency on `n` areas without self-loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborhoodGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl NeighborhoodGraph {
    /// Builds a graph from unordered pairs. Each pair is normalized to
    /// `(min, max)`; duplicates collapse.
    pub fn from_edges(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges = BTreeSet::new();
        for (a, b) in pairs {
            if a == b {
                return Err(SpockError::InvalidParameter(format!("self-loop on area {a}")));
            }
            if a >= n || b >= n {
                return Err(SpockError::InvalidParameter(format!(
                    "edge ({a}, {b}) out of range for {n} areas"
                )));
            }
            edges.insert((a.min(b), a.max(b)));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self { n, edges, neighbors })
    }

    /// Rook-adjacency lattice with `rows × cols` cells, numbered row-major.
    pub fn lattice(rows: usize, cols: usize) -> Self {
        let mut pairs = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    pairs.push((i, i + 1));
                }
                if r + 1 < rows {
                    pairs.push((i, i + cols));
                }
            }
        }
        Self::from_edges(rows * cols, pairs).expect("lattice edges are valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    /// Plain-text edge list, one `i j` line per edge with `i < j`.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    /// Parses the format written by [`NeighborhoodGraph::to_edge_list`].
    pub fn from_edge_list(n: usize, text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => pairs.push((a, b)),
                _ => return Err(SpockError::parse("edge list", lineno + 1, format!("expected `i j`, got `{line}`"))),
            }
        }
        Self::from_edges(n, pairs)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(GraphJson {
            n: self.n,
            edges: self.edges.iter().map(|&(a, b)| [a, b]).collect(),
        })
        .expect("graph serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let g: GraphJson = serde_json::from_value(value.clone())?;
        Self::from_edges(g.n, g.edges.into_iter().map(|[a, b]| (a, b)))
    }
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    n: usize,
    edges: Vec<[usize; 2]>,
}

/// Agreement between an original graph and a reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionScore {
    /// Share of original edges present in the reconstruction.
    pub sensitivity: f64,
    /// Share of reconstructed edges present in the original.
    pub recall: f64,
}

/// Knn graph on `s_star`: `j` is linked to `i` when `j` is among the `k[i]`
/// nearest areas of `i`. The directed relation is symmetrized by union.
/// Equal distances are broken in favour of the lower area index.
pub fn knn_reconstruct<T: Scalar>(s_star: &CentroidSet<T>, k: &[usize]) -> Result<NeighborhoodGraph> {
    let n = s_star.len();
    if k.len() != n {
        return Err(SpockError::LengthMismatch(format!("{} neighbor counts for {n} areas", k.len())));
    }
    for (area, &ki) in k.iter().enumerate() {
        if ki == 0 || ki + 1 > n {
            return Err(SpockError::InvalidK { area, k: ki, max: n.saturating_sub(1) });
        }
    }
    let mut pairs = Vec::new();
    let mut order: Vec<(T, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i).map(|j| (s_star.squared_distance(i, j), j)));
        let cmp = |a: &(T, usize), b: &(T, usize)| {
            a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1))
        };
        let ki = k[i];
        if ki < order.len() {
            order.select_nth_unstable_by(ki - 1, cmp);
        }
        pairs.extend(order[..ki].iter().map(|&(_, j)| (i, j)));
    }
    NeighborhoodGraph::from_edges(n, pairs)
}

/// Sensitivity `|E₀ ∩ E₁| / |E₀|` and recall `|E₀ ∩ E₁| / |E₁|`.
pub fn score_reconstruction(
    original: &NeighborhoodGraph,
    rebuilt: &NeighborhoodGraph,
) -> Result<ReconstructionScore> {
    if original.n() != rebuilt.n() {
        return Err(SpockError::DimensionMismatch(format!(
            "graphs have {} and {} areas",
            original.n(),
            rebuilt.n()
        )));
    }
    if original.n_edges() == 0 {
        return Err(SpockError::EmptyGraph("original graph has no edges; sensitivity undefined".into()));
    }
    if rebuilt.n_edges() == 0 {
        return Err(SpockError::EmptyGraph("rebuilt graph has no edges; recall undefined".into()));
    }
    let common = original.edges().intersection(rebuilt.edges()).count() as f64;
    Ok(ReconstructionScore {
        sensitivity: common / original.n_edges() as f64,
        recall: common / rebuilt.n_edges() as f64,
    })
}

/// Connected-component labels, numbered in order of first appearance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Components {
    pub count: usize,
    pub labels: Vec<usize>,
}

impl Components {
    /// Member lists, one per component.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (i, &c) in self.labels.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

pub fn connected_components(g: &NeighborhoodGraph) -> Components {
    let mut labels = vec![usize::MAX; g.n()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..g.n() {
        if labels[start] != usize::MAX {
            continue;
        }
        labels[start] = count;
        stack.push(start);
        while let Some(v) = stack.pop() {
            for &w in g.neighbors(v) {
                if labels[w] == usize::MAX {
                    labels[w] = count;
                    stack.push(w);
                }
            }
        }
        count += 1;
    }
    Components { count, labels }
}
