//! Brute-force oracles shared by the graph tests and the acceptance suite.

use std::collections::BTreeSet;

/// Full sort by (distance², index); union of the directed relation.
pub fn knn_oracle(pts: &[(f64, f64)], k: &[usize]) -> BTreeSet<(usize, usize)> {
    let mut edges = BTreeSet::new();
    for i in 0..pts.len() {
        let mut cand: Vec<(f64, usize)> = (0..pts.len())
            .filter(|&j| j != i)
            .map(|j| ((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2), j))
            .collect();
        cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &(_, j) in &cand[..k[i]] {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    edges
}

/// `(i, j)` is Delaunay when some triangle `ijk` has no other point strictly
/// inside its circumcircle.
pub fn delaunay_oracle(pts: &[(f64, f64)]) -> BTreeSet<(usize, usize)> {
    let n = pts.len();
    let orient = |a: usize, b: usize, c: usize| {
        (pts[b].0 - pts[a].0) * (pts[c].1 - pts[a].1) - (pts[b].1 - pts[a].1) * (pts[c].0 - pts[a].0)
    };
    let incircle = |a: usize, b: usize, c: usize, d: usize| {
        let row = |p: usize| {
            let (dx, dy) = (pts[p].0 - pts[d].0, pts[p].1 - pts[d].1);
            (dx, dy, dx * dx + dy * dy)
        };
        let (r1, r2, r3) = (row(a), row(b), row(c));
        r1.0 * (r2.1 * r3.2 - r2.2 * r3.1) - r1.1 * (r2.0 * r3.2 - r2.2 * r3.0) + r1.2 * (r2.0 * r3.1 - r2.1 * r3.0)
    };
    let mut edges = BTreeSet::new();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                let o = orient(a, b, c);
                if o == 0.0 {
                    continue;
                }
                let (p, q) = if o > 0.0 { (b, c) } else { (c, b) };
                if (0..n).filter(|&d| d != a && d != b && d != c).all(|d| incircle(a, p, q, d) <= 0.0) {
                    edges.extend([(a, b), (a, c), (b, c)]);
                }
            }
        }
    }
    edges
}
