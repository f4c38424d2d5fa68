//! Samplers checked against posteriors computed independently: dense
//! Gaussian algebra for fixed precisions, grid quadrature for Poisson.

use nalgebra::{DMatrix, DVector};
use spock::fit::{self, Family, FixedPrecisions, FitInput, Method, ModelFit, ModelSpec};
use spock::geometry::DesignMatrix;
use spock::graph::connected_components;
use spock::precision::icar_precision;
use spock::NeighborhoodGraph;

fn design(n: usize) -> DesignMatrix<f64> {
    let cov = DMatrix::from_fn(n, 1, |i, _| ((i as f64) * 0.7).sin() + 0.1 * i as f64);
    DesignMatrix::with_intercept(&cov, &["x1".to_string()]).unwrap()
}

fn response(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7).sin() + ((i * 37 % 11) as f64 - 5.0) * 0.15).collect()
}

fn spec(method: Method, iters: usize, seed: u64) -> ModelSpec {
    let mut s = ModelSpec::new(Family::Gaussian, method);
    s.mcmc.n_iter = iters;
    s.mcmc.n_burn = 100;
    s.mcmc.seed = seed;
    s.fixed = Some(FixedPrecisions { tau_e: 4.0, tau_theta: 2.0 });
    s
}

/// Joint posterior of (β, θ) given fixed precisions, with optional linear
/// constraints `Aθ = 0`, from explicit dense inverses.
fn dense_posterior(
    x: &DMatrix<f64>,
    y: &[f64],
    q: Option<&DMatrix<f64>>,
    constraints: &[Vec<usize>],
    tau_e: f64,
    tau_t: f64,
    pb: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let (n, p) = x.shape();
    let m = if q.is_some() { n + p } else { p };
    // Design for the stacked parameter (β, θ) is [X, I].
    let mut z = DMatrix::zeros(n, m);
    z.columns_mut(0, p).copy_from(x);
    if q.is_some() {
        z.columns_mut(p, n).fill_with_identity();
    }
    let mut prec = z.transpose() * &z * tau_e;
    for k in 0..p {
        prec[(k, k)] += pb;
    }
    if let Some(q) = q {
        let mut blk = prec.view_mut((p, p), (n, n));
        blk += q * tau_t;
    }
    if constraints.iter().any(|g| g.len() == 1) {
        // Singleton components have zero prior precision; constrained to 0
        // they drop out. Add a large ridge so the inverse exists.
        for g in constraints.iter().filter(|g| g.len() == 1) {
            prec[(p + g[0], p + g[0])] += 1e12;
        }
    }
    let y = DVector::from_column_slice(y);
    let cov = prec.clone().try_inverse().unwrap();
    let mean = &cov * (z.transpose() * y * tau_e);
    if constraints.is_empty() {
        return (mean, cov);
    }
    let mut a = DMatrix::zeros(constraints.len(), m);
    for (r, g) in constraints.iter().enumerate() {
        for &i in g {
            a[(r, p + i)] = 1.0;
        }
    }
    let s = &a * &cov * a.transpose();
    let k = &cov * a.transpose() * s.try_inverse().unwrap();
    let mean_c = &mean - &k * (&a * &mean);
    let cov_c = &cov - &k * &a * &cov;
    (mean_c, cov_c)
}

fn draws_mean_var(column: &[f64]) -> (f64, f64) {
    let n = column.len() as f64;
    let m = column.iter().sum::<f64>() / n;
    let v = column.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Fixed-precision Gaussian draws are independent, so the sample mean sits
/// within a few standard errors and the variance within sampling error.
fn assert_matches(draws: &[f64], mean: f64, var: f64, label: &str) {
    let n = draws.len() as f64;
    let (m, v) = draws_mean_var(draws);
    let se = (var / n).sqrt();
    assert!((m - mean).abs() < 4.5 * se + 1e-12, "{label}: mean {m} vs {mean} (se {se})");
    // var of sample variance ≈ 2σ⁴/(n−1).
    let vse = var * (2.0 / (n - 1.0)).sqrt();
    assert!((v - var).abs() < 4.5 * vse + 1e-14, "{label}: var {v} vs {var}");
}

fn check_against(fit: &ModelFit, mean: &DVector<f64>, cov: &DMatrix<f64>, p: usize, spatial: bool) {
    for k in 0..p {
        assert_matches(&fit.beta_draws.column(k), mean[k], cov[(k, k)], &format!("beta[{k}]"));
    }
    if spatial {
        for i in [0, 5, 10, 15] {
            assert_matches(&fit.theta_draws.column(i), mean[p + i], cov[(p + i, p + i)], &format!("theta[{i}]"));
        }
    }
}

#[test]
fn lm_matches_conjugate_posterior() {
    let x = design(16);
    let y = response(16);
    let s = spec(Method::Lm, 4100, 3);
    let f = fit::fit_lm(&y, &x, &s).unwrap();
    let (mean, cov) = dense_posterior(x.values(), &y, None, &[], 4.0, 2.0, s.priors.beta_precision);
    check_against(&f, &mean, &cov, 2, false);
    assert_eq!(f.n_draws(), 4000);
    assert!(f.tau_theta_draws.is_empty());
}

#[test]
fn icar_matches_constrained_dense_posterior() {
    let g = NeighborhoodGraph::lattice(4, 4);
    let x = design(16);
    let y = response(16);
    let s = spec(Method::Icar, 6100, 5);
    let f = fit::fit_icar(&y, &x, &g, &s).unwrap();
    let q = icar_precision::<f64>(&g).unwrap().to_dense();
    let (mean, cov) = dense_posterior(x.values(), &y, Some(&q), &[(0..16).collect()], 4.0, 2.0, s.priors.beta_precision);
    check_against(&f, &mean, &cov, 2, true);
    for r in 0..f.n_draws() {
        assert!(f.theta_draws.row(r).iter().sum::<f64>().abs() < 1e-9);
    }
}

#[test]
fn icar_on_disconnected_graph_constrains_each_component() {
    // Two 2×4 blocks with no edges between them, plus an island.
    let mut edges: Vec<(usize, usize)> =
        NeighborhoodGraph::lattice(2, 4).edges().iter().flat_map(|&(a, b)| [(a, b), (a + 8, b + 8)]).collect();
    edges.retain(|&(a, b)| a != 15 && b != 15);
    let g = NeighborhoodGraph::from_edges(16, edges).unwrap();
    let comps = connected_components(&g).members();
    assert_eq!(comps.len(), 3);
    let x = design(16);
    let y = response(16);
    let s = spec(Method::Icar, 6100, 9);
    let f = fit::fit_icar(&y, &x, &g, &s).unwrap();
    for r in 0..f.n_draws() {
        let row = f.theta_draws.row(r);
        for c in &comps {
            assert!(c.iter().map(|&i| row[i]).sum::<f64>().abs() < 1e-9);
        }
    }
    let q = icar_precision::<f64>(&g).unwrap().to_dense();
    let (mean, cov) = dense_posterior(x.values(), &y, Some(&q), &comps, 4.0, 2.0, s.priors.beta_precision);
    check_against(&f, &mean, &cov, 2, false);
}

#[test]
fn rhz_beta_decouples_from_the_spatial_block() {
    // span(L) ⊥ span(X), so β's conditional is the LM one.
    let g = NeighborhoodGraph::lattice(4, 4);
    let x = design(16);
    let y = response(16);
    let s = spec(Method::Rhz, 6100, 11);
    let f = fit::fit_rhz(&y, &x, &g, &s).unwrap();
    let (mean, cov) = dense_posterior(x.values(), &y, None, &[], 4.0, 2.0, s.priors.beta_precision);
    check_against(&f, &mean, &cov, 2, false);
    let xt = x.values().transpose();
    for r in (0..f.n_draws()).step_by(97) {
        let t = DVector::from_column_slice(f.theta_draws.row(r));
        assert!((&xt * t).amax() < 1e-9);
    }
}

#[test]
fn rhz_spatial_block_matches_dense_posterior() {
    // θ = Lθ₂ with θ₂ ~ N(0, τ_θ LᵀQL); the posterior of θ equals that of
    // ICAR restricted to span(L), i.e. ICAR with the constraint Xᵀθ = 0.
    let g = NeighborhoodGraph::lattice(4, 4);
    let x = design(16);
    let y = response(16);
    let mut s = spec(Method::Rhz, 6100, 13);
    // A proper β prior keeps the dense joint oracle well conditioned: with a
    // near-flat prior, (β₀ + c, θ − c·1) is an almost-free direction.
    s.priors.beta_precision = 1.0;
    let f = fit::fit_rhz(&y, &x, &g, &s).unwrap();
    let q = icar_precision::<f64>(&g).unwrap().to_dense();
    let (n, p) = (16, 2);
    // Constrain θ ⟂ each column of X via a dense oracle on (β, θ).
    let mut prec = DMatrix::zeros(n + p, n + p);
    let xv = x.values();
    prec.view_mut((0, 0), (p, p)).copy_from(&(xv.transpose() * xv * 4.0));
    for k in 0..p {
        prec[(k, k)] += s.priors.beta_precision;
    }
    prec.view_mut((0, p), (p, n)).copy_from(&(xv.transpose() * 4.0));
    prec.view_mut((p, 0), (n, p)).copy_from(&(xv * 4.0));
    prec.view_mut((p, p), (n, n)).copy_from(&(DMatrix::identity(n, n) * 4.0 + &q * 2.0));
    let cov = prec.try_inverse().unwrap();
    let mut rhs = DVector::zeros(n + p);
    let yv = DVector::from_column_slice(&y);
    rhs.rows_mut(0, p).copy_from(&(xv.transpose() * &yv * 4.0));
    rhs.rows_mut(p, n).copy_from(&(&yv * 4.0));
    let mean = &cov * rhs;
    let mut a = DMatrix::zeros(p, n + p);
    a.view_mut((0, p), (p, n)).copy_from(&xv.transpose());
    let k = &cov * a.transpose() * (&a * &cov * a.transpose()).try_inverse().unwrap();
    let mean_c = &mean - &k * (&a * &mean);
    let cov_c = &cov - &k * &a * &cov;
    for i in [0, 5, 10, 15] {
        assert_matches(&f.theta_draws.column(i), mean_c[p + i], cov_c[(p + i, p + i)], &format!("theta[{i}]"));
    }
}

#[test]
fn hh_effects_stay_in_the_moran_span() {
    let g = NeighborhoodGraph::lattice(4, 4);
    let x = design(16);
    let y = response(16);
    let mut s = spec(Method::Hh, 600, 17);
    s.h = Some(5);
    let f = fit::fit_hh(&y, &x, &g, &s).unwrap();
    let basis = spock::precision::moran_basis(&g, &x, 5).unwrap().vectors;
    let proj = &basis * basis.transpose();
    for r in 0..f.n_draws() {
        let t = DVector::from_column_slice(f.theta_draws.row(r));
        assert!((&proj * &t - &t).amax() < 1e-9);
        assert!((x.values().transpose() * &t).amax() < 1e-9);
    }
}

#[test]
fn sampled_precisions_track_the_truth() {
    // Larger Gaussian ICAR problem with τ's sampled; τ_e should land near
    // the generating value.
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let g = NeighborhoodGraph::lattice(12, 12);
    let n = 144;
    let x = design(n);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let y: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * x.values()[(i, 1)] + noise.sample(&mut rng)).collect();
    let mut s = spec(Method::Icar, 3000, 21);
    s.mcmc.n_burn = 500;
    s.fixed = None;
    let f = fit::fit_icar(&y, &x, &g, &s).unwrap();
    let (te, _) = draws_mean_var(&f.tau_e_draws);
    assert!(te > 2.5 && te < 7.0, "tau_e {te}");
    let b = f.beta_means();
    assert!((b[1] - 2.0).abs() < 0.2, "beta1 {}", b[1]);
}

#[test]
fn same_seed_same_draws() {
    let g = NeighborhoodGraph::lattice(4, 4);
    let x = design(16);
    let y = response(16);
    let mut s = spec(Method::Icar, 400, 99);
    s.fixed = None;
    let a = fit::fit_icar(&y, &x, &g, &s).unwrap();
    let b = fit::fit_icar(&y, &x, &g, &s).unwrap();
    assert_eq!(a.beta_draws, b.beta_draws);
    assert_eq!(a.theta_draws, b.theta_draws);
    s.mcmc.seed = 100;
    let c = fit::fit_icar(&y, &x, &g, &s).unwrap();
    assert_ne!(a.beta_draws, c.beta_draws);
}

#[test]
fn thinning_and_summary() {
    let g = NeighborhoodGraph::lattice(4, 4);
    let x = design(16);
    let y = response(16);
    let mut s = spec(Method::Icar, 1100, 1);
    s.mcmc.thin = 4;
    let f = fit::fit_icar(&y, &x, &g, &s).unwrap();
    assert_eq!(f.n_draws(), 250);
    let sum = fit::posterior_summary(&f).unwrap();
    assert_eq!(sum.len(), 2 + 1 + 1 + 16);
    for p in &sum {
        assert!(p.q025 <= p.median && p.median <= p.q975, "{p:?}");
    }
    s.mcmc.n_iter = 150;
    s.mcmc.thin = 1;
    let short = fit::fit_icar(&y, &x, &g, &s).unwrap();
    assert!(matches!(fit::posterior_summary(&short), Err(spock::SpockError::InsufficientDraws { have: 50, need: 100 })));
}

/// Poisson with θ pinned near zero by a huge fixed τ_θ: the β posterior is
/// the GLM posterior, evaluated here on a quadrature grid.
#[test]
fn poisson_beta_matches_quadrature() {
    let n = 16;
    let g = NeighborhoodGraph::lattice(4, 4);
    let x = design(n);
    let xv = x.values();
    let y: Vec<f64> = (0..n).map(|i| ((1.0 + 0.6 * xv[(i, 1)]).exp() + (i % 3) as f64 - 1.0).round().max(0.0)).collect();
    let mut s = ModelSpec::new(Family::Poisson, Method::Icar);
    s.mcmc.n_iter = 42_000;
    s.mcmc.n_burn = 2_000;
    s.mcmc.seed = 4;
    s.fixed = Some(FixedPrecisions { tau_e: 1.0, tau_theta: 1e10 });
    let f = fit::fit(&FitInput::new(&y, &x).with_graph(&g), &s).unwrap();

    // Grid oracle.
    let loglik = |b0: f64, b1: f64| -> f64 {
        (0..n)
            .map(|i| {
                let e = b0 + b1 * xv[(i, 1)];
                y[i] * e - e.exp()
            })
            .sum::<f64>()
            - 0.5 * 1e-6 * (b0 * b0 + b1 * b1)
    };
    let (m0, m1) = (f.beta_means()[0], f.beta_means()[1]);
    let span = 1.5;
    let k = 301;
    let mut w = Vec::with_capacity(k * k);
    let mut peak = f64::NEG_INFINITY;
    for a in 0..k {
        for b in 0..k {
            let b0 = m0 - span + 2.0 * span * a as f64 / (k - 1) as f64;
            let b1 = m1 - span + 2.0 * span * b as f64 / (k - 1) as f64;
            let l = loglik(b0, b1);
            peak = peak.max(l);
            w.push((b0, b1, l));
        }
    }
    let (mut z, mut e0, mut e1, mut v0, mut v1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(b0, b1, l) in &w {
        let wt = (l - peak).exp();
        z += wt;
        e0 += wt * b0;
        e1 += wt * b1;
        v0 += wt * b0 * b0;
        v1 += wt * b1 * b1;
    }
    let (e0, e1) = (e0 / z, e1 / z);
    let sd0 = (v0 / z - e0 * e0).sqrt();
    let sd1 = (v1 / z - e1 * e1).sqrt();
    // Random-walk draws are autocorrelated: Monte Carlo error is a few
    // percent of a posterior sd here.
    assert!((m0 - e0).abs() < 0.1 * sd0, "b0 {m0} vs {e0} (sd {sd0})");
    assert!((m1 - e1).abs() < 0.1 * sd1, "b1 {m1} vs {e1} (sd {sd1})");
    let (_, var0) = draws_mean_var(&f.beta_draws.column(0));
    assert!((var0.sqrt() / sd0 - 1.0).abs() < 0.1, "sd b0 {} vs {sd0}", var0.sqrt());

    let acc = f.acceptance.as_ref().unwrap();
    assert!(acc.beta_rate > 0.1 && acc.beta_rate < 0.5, "beta acceptance {}", acc.beta_rate);
    assert_eq!(acc.beta_scale_at_burn, acc.beta_scale_final);
    assert_eq!(acc.theta_scales_at_burn, acc.theta_scales_final);
}

#[test]
fn poisson_icar_adapts_toward_targets() {
    let n = 64;
    let g = NeighborhoodGraph::lattice(8, 8);
    let x = design(n);
    let y: Vec<f64> = (0..n).map(|i| (3.0 + (i as f64 * 0.4).sin() * 2.0).round()).collect();
    for method in [Method::Icar, Method::Spock, Method::Rhz, Method::Hh] {
        let mut s = ModelSpec::new(Family::Poisson, method);
        s.mcmc.n_iter = 3000;
        s.mcmc.n_burn = 1500;
        s.mcmc.seed = 8;
        let s_coords = spock::geometry::CentroidSet::from_points(
            &(0..n).map(|i| ((i % 8) as f64, (i / 8) as f64)).collect::<Vec<_>>(),
        )
        .unwrap();
        let input = FitInput::new(&y, &x).with_graph(&g).with_centroids(&s_coords);
        let f = fit::fit(&input, &s).unwrap();
        let acc = f.acceptance.clone().unwrap();
        assert!(acc.theta_rate > 0.25 && acc.theta_rate < 0.65, "{method:?}: theta acceptance {}", acc.theta_rate);
        assert!(acc.beta_rate > 0.08 && acc.beta_rate < 0.5, "{method:?}: beta acceptance {}", acc.beta_rate);
        assert!(f.tau_e_draws.is_empty());
        assert_eq!(f.n_draws(), 1500);
    }
}

#[test]
fn invalid_specs_rejected() {
    let g = NeighborhoodGraph::lattice(4, 4);
    let x = design(16);
    let y = response(16);
    let mut s = spec(Method::Icar, 100, 1);
    s.mcmc.n_burn = 100;
    assert!(fit::fit_icar(&y, &x, &g, &s).is_err());
    let s = spec(Method::Icar, 300, 1);
    assert!(fit::fit_icar(&y[..15], &x, &g, &s).is_err());
    let s = spec(Method::Spock, 300, 1);
    assert!(fit::fit(&FitInput::new(&y, &x).with_graph(&g), &s).is_err());
    let mut s = ModelSpec::new(Family::Poisson, Method::Icar);
    s.mcmc.n_iter = 300;
    s.mcmc.n_burn = 100;
    let neg: Vec<f64> = y.iter().map(|v| -v).collect();
    assert!(matches!(
        fit::fit(&FitInput::new(&neg, &x).with_graph(&g), &s),
        Err(spock::SpockError::NegativeCount { .. })
    ));
}
