//! Reconstructions checked against brute-force definitions.

mod common;

use common::{delaunay_oracle, knn_oracle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spock::geometry::CentroidSet;
use spock::graph::{delaunay_reconstruct, knn_reconstruct};

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|_| (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0))).collect()
}

#[test]
fn knn_matches_sorted_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..50 {
        let n = rng.random_range(4..=25);
        let pts = random_points(&mut rng, n);
        let k: Vec<usize> = (0..n).map(|_| rng.random_range(1..n.min(6))).collect();
        let g = knn_reconstruct(&CentroidSet::from_points(&pts).unwrap(), &k).unwrap();
        assert_eq!(g.edges(), &knn_oracle(&pts, &k));
    }
}

#[test]
fn knn_ties_follow_index_order() {
    // Integer lattice: many equal distances.
    let pts: Vec<(f64, f64)> = (0..20).map(|i| ((i % 5) as f64, (i / 5) as f64)).collect();
    for k in 1..6 {
        let kk = vec![k; 20];
        let g = knn_reconstruct(&CentroidSet::from_points(&pts).unwrap(), &kk).unwrap();
        assert_eq!(g.edges(), &knn_oracle(&pts, &kk), "k = {k}");
    }
}

#[test]
fn delaunay_matches_empty_circumcircle() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..50 {
        let n = rng.random_range(3..=25);
        let pts = random_points(&mut rng, n);
        let g = delaunay_reconstruct(&CentroidSet::from_points(&pts).unwrap()).unwrap();
        assert_eq!(g.edges(), &delaunay_oracle(&pts), "{pts:?}");
    }
}
