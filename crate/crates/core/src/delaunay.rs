//! Delaunay reconstruction of a neighborhood graph.
//!
//! Incremental Bowyer–Watson insertion with a symbolic vertex at infinity
//! ("ghost" triangles) so hull edges need no bounding super-triangle. Points
//! are inserted in index order and the in-circle test is strict, so
//! cocircular configurations resolve the same way on every platform.
//! Orientation and in-circle use adaptive exact predicates.

use std::collections::HashSet;

use robust::{incircle, orient2d, Coord};

use crate::error::{Result, SpockError};
use crate::geometry::CentroidSet;
use crate::graph::NeighborhoodGraph;
use crate::scalar::Scalar;

const GHOST: usize = usize::MAX;

struct Mesh {
    pts: Vec<Coord<f64>>,
    tris: Vec<[usize; 3]>,
}

impl Mesh {
    fn orient(&self, a: usize, b: usize, c: usize) -> f64 {
        orient2d(self.pts[a], self.pts[b], self.pts[c])
    }

    /// Point `p` lies inside (for ghosts: beyond) the triangle's circumcircle.
    fn in_conflict(&self, t: [usize; 3], p: usize) -> bool {
        let pos = t.iter().position(|&v| v == GHOST);
        match pos {
            None => incircle(self.pts[t[0]], self.pts[t[1]], self.pts[t[2]], self.pts[p]) > 0.0,
            Some(g) => {
                // Rotate to (u, v, ∞): the exterior lies left of u → v.
                let u = t[(g + 1) % 3];
                let v = t[(g + 2) % 3];
                let o = self.orient(u, v, p);
                if o > 0.0 {
                    return true;
                }
                o == 0.0 && strictly_between(self.pts[u], self.pts[v], self.pts[p])
            }
        }
    }

    fn insert(&mut self, p: usize) {
        let (conflict, keep): (Vec<[usize; 3]>, Vec<[usize; 3]>) =
            self.tris.iter().partition(|&&t| self.in_conflict(t, p));
        debug_assert!(!conflict.is_empty());
        let directed: HashSet<(usize, usize)> = conflict
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .collect();
        let mut tris = keep;
        for &(a, b) in &directed {
            if !directed.contains(&(b, a)) {
                tris.push([a, b, p]);
            }
        }
        self.tris = tris;
    }
}

fn strictly_between(u: Coord<f64>, v: Coord<f64>, p: Coord<f64>) -> bool {
    let dot = (p.x - u.x) * (v.x - u.x) + (p.y - u.y) * (v.y - u.y);
    let len = (v.x - u.x) * (v.x - u.x) + (v.y - u.y) * (v.y - u.y);
    dot > 0.0 && dot < len
}

/// Neighbors are the vertex pairs joined by a Delaunay triangle edge.
pub fn delaunay_reconstruct<T: Scalar>(s_star: &CentroidSet<T>) -> Result<NeighborhoodGraph> {
    let n = s_star.len();
    if n < 3 {
        return Err(SpockError::DegenerateGeometry(format!("Delaunay needs at least 3 points, got {n}")));
    }
    let pts: Vec<Coord<f64>> =
        (0..n).map(|i| Coord { x: s_star.x(i).as_f64(), y: s_star.y(i).as_f64() }).collect();
    let mut seen = HashSet::new();
    for (i, p) in pts.iter().enumerate() {
        if !seen.insert((p.x.to_bits(), p.y.to_bits())) {
            return Err(SpockError::DegenerateGeometry(format!("coincident centroid at area {i}")));
        }
    }
    let mut mesh = Mesh { pts, tris: Vec::new() };
    let third = (2..n)
        .find(|&c| mesh.orient(0, 1, c) != 0.0)
        .ok_or_else(|| SpockError::DegenerateGeometry("all centroids are collinear".into()))?;
    let (a, b, c) = if mesh.orient(0, 1, third) > 0.0 { (0, 1, third) } else { (1, 0, third) };
    mesh.tris = vec![[a, b, c], [b, a, GHOST], [c, b, GHOST], [a, c, GHOST]];
    for p in (2..n).filter(|&p| p != third) {
        mesh.insert(p);
    }
    let mut pairs = Vec::new();
    for t in &mesh.tris {
        if t.contains(&GHOST) {
            continue;
        }
        pairs.extend([(t[0], t[1]), (t[1], t[2]), (t[2], t[0])]);
    }
    NeighborhoodGraph::from_edges(n, pairs)
}
