use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spock::fit::{McmcConfig, Method};
use spock::graph::{connected_components, NeighborhoodGraph};
use spock::io::{read_summary_csv, AreaMap};
use spock::precision::icar_precision;
use spock::simulation::{
    compute_beta_star, generate_replicate, rhz_precision, run_study, sample_icar_effect, sample_rhz_effect, write_study,
    IntrinsicSampler, Scenario, ScenarioConfig, StudyConfig,
};
use spock::DesignMatrix;

fn path4() -> NeighborhoodGraph {
    NeighborhoodGraph::from_edges(4, [(0, 1), (1, 2), (2, 3)]).unwrap()
}

/// Moore–Penrose inverse of a connected-graph Laplacian: `(Q + J/n)⁻¹ − J/n`.
fn laplacian_pinv(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let j = DMatrix::from_element(n, n, 1.0 / n as f64);
    (q + &j).try_inverse().unwrap() - j
}

fn empirical_cov(draws: &[DVector<f64>]) -> DMatrix<f64> {
    let n = draws[0].len();
    let mean = draws.iter().fold(DVector::zeros(n), |a, d| a + d) / draws.len() as f64;
    let mut c = DMatrix::zeros(n, n);
    for d in draws {
        let e = d - &mean;
        c += &e * e.transpose();
    }
    c / (draws.len() - 1) as f64
}

// The weakest entry of the path-4 oracle has a relative Monte Carlo SE of
// 1.5% at 10⁵ draws, so 10⁶ are used to make a 2% bound meaningful.
const COV_DRAWS: usize = 1_000_000;

fn assert_cov_close(emp: &DMatrix<f64>, want: &DMatrix<f64>) {
    for i in 0..want.nrows() {
        for j in 0..want.ncols() {
            let rel = (emp[(i, j)] - want[(i, j)]).abs() / want[(i, j)].abs();
            assert!(rel < 0.02, "({i},{j}) {} vs {}", emp[(i, j)], want[(i, j)]);
        }
    }
}

#[test]
fn icar_covariance_matches_pseudo_inverse() {
    let q = icar_precision::<f64>(&path4()).unwrap();
    let tau = 2.5;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // The sampler behind sample_icar_effect, built once.
    let s = IntrinsicSampler::new(&q.to_dense());
    let mut check = ChaCha8Rng::seed_from_u64(3);
    let mut again = ChaCha8Rng::seed_from_u64(3);
    assert_eq!(sample_icar_effect(&q, tau, &mut check), s.sample(tau, &mut again));
    let draws: Vec<DVector<f64>> = (0..COV_DRAWS).map(|_| s.sample(tau, &mut rng)).collect();
    assert_cov_close(&empirical_cov(&draws), &(laplacian_pinv(&q.to_dense()) / tau));
}

#[test]
fn rhz_covariance_matches_pseudo_inverse_with_intercept() {
    let q = icar_precision::<f64>(&path4()).unwrap();
    let x = DesignMatrix::new(DMatrix::from_element(4, 1, 1.0), true).unwrap();
    let tau = 0.5;
    let s = IntrinsicSampler::new(&rhz_precision(&q, &x));
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let draws: Vec<DVector<f64>> = (0..COV_DRAWS).map(|_| s.sample(tau, &mut rng)).collect();
    // With X = 1, P⊥QP⊥ = Q, so the oracle is the Laplacian pseudo-inverse.
    assert_cov_close(&empirical_cov(&draws), &(laplacian_pinv(&q.to_dense()) / tau));
}

#[test]
fn doubling_tau_halves_variance() {
    let g = NeighborhoodGraph::lattice(2, 3);
    let q = icar_precision::<f64>(&g).unwrap();
    let s = IntrinsicSampler::new(&q.to_dense());
    let var = |tau: f64, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = vec![0.0; 6];
        for _ in 0..100_000 {
            let t = s.sample(tau, &mut rng);
            for i in 0..6 {
                acc[i] += t[i] * t[i];
            }
        }
        acc.into_iter().map(|a| a / 100_000.0).collect::<Vec<_>>()
    };
    let (a, b) = (var(1.0, 1), var(2.0, 2));
    for i in 0..6 {
        let r = b[i] / a[i];
        assert!((0.48..=0.52).contains(&r), "area {i}: {r}");
    }
}

#[test]
fn icar_draws_are_zero_mean_per_component() {
    let g = NeighborhoodGraph::from_edges(7, [(0, 1), (1, 2), (3, 4), (4, 5), (5, 3)]).unwrap();
    let q = icar_precision::<f64>(&g).unwrap();
    let comps = connected_components(&g).members();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let t = sample_icar_effect(&q, 0.7, &mut rng);
        for c in &comps {
            assert!(c.iter().map(|&i| t[i]).sum::<f64>().abs() < 1e-10);
        }
    }
}

#[test]
fn rhz_draws_are_orthogonal_to_design() {
    let map = AreaMap::lattice(5, 5, 0.25);
    let q = icar_precision::<f64>(&map.adjacency).unwrap();
    let cov = DMatrix::from_fn(25, 2, |i, j| if j == 0 { (i as f64 * 1.7).sin() } else { map.centroids.x(i) });
    let x = DesignMatrix::with_intercept(&cov, &["x1".into(), "x2".into()]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let t = sample_rhz_effect(&q, &x, 0.2, &mut rng);
        assert!((x.values().transpose() * &t).amax() < 1e-8 * t.norm().max(1.0));
    }
    // The intercept is also the ICAR null vector, so the null space is
    // exactly the design span here.
    let eig = SymmetricEigen::new(rhz_precision(&q, &x)).eigenvalues;
    let null = eig.iter().filter(|&&e| e.abs() <= 1e-8).count();
    assert!(null >= x.ncols());
    assert_eq!(null, 3);
}

#[test]
fn rhz_null_space_on_disconnected_map() {
    let g = NeighborhoodGraph::from_edges(6, [(0, 1), (1, 2), (3, 4), (4, 5)]).unwrap();
    let q = icar_precision::<f64>(&g).unwrap();
    let x = DesignMatrix::new(DMatrix::from_element(6, 1, 1.0), true).unwrap();
    let eig = SymmetricEigen::new(rhz_precision(&q, &x)).eigenvalues;
    // span(1) plus the contrast between the two components.
    assert_eq!(eig.iter().filter(|&&e| e.abs() <= 1e-8).count(), 2);
}

#[test]
fn spatial_scenarios_use_the_first_coordinate() {
    let map = AreaMap::lattice(6, 7, 0.25);
    for sc in [Scenario::IcarSpatialX, Scenario::Rhz] {
        let r = generate_replicate(&ScenarioConfig::new(sc, 1.0, 1.0), &map, 3).unwrap();
        for i in 0..map.n() {
            assert_eq!(r.x.values()[(i, 2)], map.centroids.x(i));
            assert_eq!(r.x.values()[(i, 0)], 1.0);
        }
    }
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[test]
fn non_spatial_covariate_is_unrelated_to_geography() {
    let map = AreaMap::lattice(10, 20, 0.25);
    let cfg = ScenarioConfig::new(Scenario::IcarNonSpatialX, 1.0, 1.0);
    let s1: Vec<f64> = (0..map.n()).map(|i| map.centroids.x(i)).collect();
    let reps = 40;
    let mean_abs = (0..reps)
        .map(|r| {
            let rep = generate_replicate(&cfg, &map, r).unwrap();
            corr(rep.x.values().column(2).as_slice(), &s1).abs()
        })
        .sum::<f64>()
        / reps as f64;
    assert!(mean_abs <= 0.1, "{mean_abs}");
}

#[test]
fn noise_variance_matches_precision() {
    let map = AreaMap::lattice(8, 8, 0.25);
    for (te, tt) in [(1.0, 0.2), (0.2, 1.0)] {
        let mut cfg = ScenarioConfig::new(Scenario::IcarSpatialX, te, tt);
        cfg.seed = 9;
        let mut ss = 0.0;
        let mut count = 0usize;
        for r in 0..200 {
            let rep = generate_replicate(&cfg, &map, r).unwrap();
            let mean = rep.x.values() * DVector::from_column_slice(&cfg.beta) + &rep.theta;
            for (y, m) in rep.y.iter().zip(mean.iter()) {
                ss += (y - m).powi(2);
                count += 1;
            }
        }
        let v = ss / count as f64;
        assert!((v * te - 1.0).abs() < 0.05, "tau_e {te}: var {v}");
    }
}

#[test]
fn replicates_are_reproducible_and_distinct() {
    let map = AreaMap::lattice(4, 4, 0.25);
    let cfg = ScenarioConfig::new(Scenario::Rhz, 1.0, 0.2);
    let a = generate_replicate(&cfg, &map, 2).unwrap();
    let b = generate_replicate(&cfg, &map, 2).unwrap();
    let c = generate_replicate(&cfg, &map, 3).unwrap();
    assert_eq!(a.y, b.y);
    assert_ne!(a.y, c.y);
}

#[test]
fn beta_star_oracles() {
    let cov = DMatrix::from_row_slice(5, 1, &[0.3, -1.2, 2.0, 0.7, -0.4]);
    let x = DesignMatrix::with_intercept(&cov, &["z".into()]).unwrap();
    let beta = [2.0, -1.0];

    let p = spock::geometry::build_projector(&x);
    let orth = p.apply(&DVector::from_vec(vec![1.0, 4.0, -2.0, 0.5, 3.0]));
    let bs = compute_beta_star(&beta, &x, &orth).unwrap();
    assert!((bs[0] - beta[0]).abs() < 1e-12 && (bs[1] - beta[1]).abs() < 1e-12);

    let theta = DVector::from_vec(vec![0.9, -0.3, 1.4, 2.2, -1.7]);
    // Normal equations by hand.
    let xv = x.values();
    let xtx = xv.transpose() * xv;
    let xtt = xv.transpose() * &theta;
    let det = xtx[(0, 0)] * xtx[(1, 1)] - xtx[(0, 1)] * xtx[(1, 0)];
    let g0 = (xtx[(1, 1)] * xtt[0] - xtx[(0, 1)] * xtt[1]) / det;
    let g1 = (xtx[(0, 0)] * xtt[1] - xtx[(1, 0)] * xtt[0]) / det;
    let bs = compute_beta_star(&beta, &x, &theta).unwrap();
    assert!((bs[0] - (beta[0] + g0)).abs() < 1e-10);
    assert!((bs[1] - (beta[1] + g1)).abs() < 1e-10);

    assert!(compute_beta_star(&[1.0], &x, &theta).is_err());
}

fn small_study(models: Vec<Method>, n_replicates: usize) -> StudyConfig {
    let mut scenario = ScenarioConfig::new(Scenario::Rhz, 1.0, 0.2);
    scenario.n_replicates = n_replicates;
    scenario.seed = 21;
    StudyConfig { scenario, models, mcmc: McmcConfig { n_iter: 400, n_burn: 100, ..McmcConfig::default() } }
}

#[test]
fn single_replicate_medians_are_that_replicate() {
    let map = AreaMap::lattice(5, 5, 0.25);
    let res = run_study(&small_study(vec![Method::Lm, Method::Spock], 1), &map, 1).unwrap();
    let rows = res.summary();
    for (m, name) in [(Method::Lm, "LM"), (Method::Spock, "SPOCK")] {
        let est = &res.estimates(m)[0].1;
        for (j, p) in spock::simulation::PARAMETERS.iter().enumerate() {
            for stat in ["mean", "median", "q025", "q975"] {
                let row = rows.iter().find(|r| r.model == name && r.parameter == *p && r.statistic == stat).unwrap();
                assert_eq!(row.value, est.beta_mean[j]);
            }
        }
    }
}

#[test]
fn study_outputs_and_worker_independence() {
    let map = AreaMap::lattice(5, 5, 0.25);
    let cfg = small_study(vec![Method::Icar, Method::Hh], 6);
    let one = run_study(&cfg, &map, 1).unwrap();
    let many = run_study(&cfg, &map, 4).unwrap();
    assert_eq!(one.summary(), many.summary());
    for (a, b) in one.replicates.iter().zip(&many.replicates) {
        assert_eq!(a.replicate_id, b.replicate_id);
        assert_eq!(a.theta_true, b.theta_true);
        for m in [Method::Icar, Method::Hh] {
            let (ea, eb) = (a.models[&m].as_ref().unwrap(), b.models[&m].as_ref().unwrap());
            assert_eq!(ea.beta_mean, eb.beta_mean);
            assert_eq!(ea.beta_q975, eb.beta_q975);
        }
    }

    let d = tempfile::tempdir().unwrap();
    write_study(&one, &serde_json::to_value(&cfg).unwrap(), d.path()).unwrap();
    assert_eq!(read_summary_csv(&d.path().join("summary.csv")).unwrap().len(), 2 * 3 * 4);
    let ratios = std::fs::read_to_string(d.path().join("ratios.csv")).unwrap();
    assert_eq!(ratios.lines().count(), 1 + 2 * 3 * 6);
    let timing = std::fs::read_to_string(d.path().join("timing.csv")).unwrap();
    assert_eq!(timing.lines().count(), 3);
    assert!(one.wall_times(Method::Icar).iter().all(|&t| t > 0.0));
}

#[test]
fn invalid_scenarios_are_rejected() {
    let map = AreaMap::lattice(4, 4, 0.25);
    let mut cfg = small_study(vec![Method::Lm], 1);
    cfg.scenario.tau_e = 0.0;
    assert!(run_study(&cfg, &map, 1).is_err());
    let mut cfg = small_study(vec![Method::Lm], 0);
    cfg.scenario.n_replicates = 0;
    assert!(run_study(&cfg, &map, 1).is_err());
    assert!(run_study(&small_study(vec![], 1), &map, 1).is_err());
}
