//! Poisson-response sampler: Metropolis-within-Gibbs with random walks
//! adapted during burn-in only.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::gaussian::{check_finite, gamma_draw, normals, Recorder};
use super::structure::Latent;
use super::{AcceptanceStats, FitInput, ModelFit, ModelSpec};
use crate::error::{Result, SpockError};

const BETA_TARGET: f64 = 0.234;
const THETA_TARGET: f64 = 0.44;
const BATCH: usize = 50;
const MAX_ETA: f64 = 700.0;

/// Spatial coefficients with their prior precision `τ_θ R`.
enum Coef<'a> {
    None,
    /// Identity basis; `R` sparse.
    Sparse { q: &'a crate::precision::SparsePrecision<f64>, groups: &'a [Vec<usize>] },
    Dense { basis: &'a DMatrix<f64>, prior: &'a DMatrix<f64> },
}

impl Coef<'_> {
    fn dim(&self, n: usize) -> usize {
        match self {
            Coef::None => 0,
            Coef::Sparse { .. } => n,
            Coef::Dense { basis, .. } => basis.ncols(),
        }
    }

    fn prior_diag(&self, j: usize) -> f64 {
        match self {
            Coef::None => 0.0,
            Coef::Sparse { q, .. } => q.diag(j),
            Coef::Dense { prior, .. } => prior[(j, j)],
        }
    }

    /// `Σ_{k≠j} R_jk c_k`.
    fn prior_cross(&self, j: usize, c: &[f64]) -> f64 {
        match self {
            Coef::None => 0.0,
            Coef::Sparse { q, .. } => q.row(j).iter().map(|&(k, v)| v * c[k]).sum(),
            Coef::Dense { prior, .. } => {
                let col = prior.column(j);
                col.iter().zip(c).map(|(r, ck)| r * ck).sum::<f64>() - prior[(j, j)] * c[j]
            }
        }
    }

    fn quad(&self, c: &[f64]) -> f64 {
        match self {
            Coef::None => 0.0,
            Coef::Sparse { q, .. } => q.quad_form(c),
            Coef::Dense { prior, .. } => {
                let v = DVector::from_column_slice(c);
                (v.transpose() * *prior * &v)[(0, 0)]
            }
        }
    }

    fn area_effect(&self, c: &[f64], n: usize) -> Vec<f64> {
        match self {
            Coef::None => vec![0.0; n],
            Coef::Sparse { .. } => c.to_vec(),
            Coef::Dense { basis, .. } => (*basis * DVector::from_column_slice(c)).as_slice().to_vec(),
        }
    }
}

/// Penalized IRLS for the Poisson GLM; returns `β` and the Fisher information.
fn glm_start(y: &[f64], x: &DMatrix<f64>, off: &[f64], pb: f64, has_intercept: bool) -> (DVector<f64>, DMatrix<f64>) {
    let (n, p) = x.shape();
    let mut beta = DVector::zeros(p);
    if has_intercept {
        let mean = y.iter().sum::<f64>() / n as f64;
        let off_mean = off.iter().sum::<f64>() / n as f64;
        beta[0] = (mean + 0.5).ln() - off_mean;
    }
    let info = |beta: &DVector<f64>| {
        let eta = x * beta;
        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtwz = DVector::zeros(p);
        for i in 0..n {
            let e = (eta[i] + off[i]).min(MAX_ETA);
            let mu = e.exp().max(1e-8);
            let z = eta[i] + (y[i] - mu) / mu;
            for a in 0..p {
                xtwz[a] += x[(i, a)] * mu * z;
                for b in 0..p {
                    xtwx[(a, b)] += x[(i, a)] * mu * x[(i, b)];
                }
            }
        }
        for a in 0..p {
            xtwx[(a, a)] += pb;
        }
        (xtwx, xtwz)
    };
    for _ in 0..50 {
        let (xtwx, xtwz) = info(&beta);
        let Some(next) = xtwx.cholesky().map(|c| c.solve(&xtwz)) else { break };
        if next.iter().any(|v: &f64| !v.is_finite()) {
            break;
        }
        let step = (&next - &beta).amax();
        beta = next;
        if step < 1e-10 {
            break;
        }
    }
    let (xtwx, _) = info(&beta);
    (beta, xtwx)
}

struct Adapter {
    log_scale: f64,
    accepted: usize,
    tried: usize,
    target: f64,
}

impl Adapter {
    fn new(scale: f64, target: f64) -> Self {
        Self { log_scale: scale.ln(), accepted: 0, tried: 0, target }
    }

    fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    fn record(&mut self, ok: bool) {
        self.tried += 1;
        self.accepted += ok as usize;
    }

    fn adapt(&mut self, batch: usize) {
        let delta = (1.0 / (batch as f64).sqrt()).min(0.25);
        let rate = self.accepted as f64 / self.tried.max(1) as f64;
        self.log_scale += if rate > self.target { delta } else { -delta };
        self.reset();
    }

    fn reset(&mut self) {
        self.accepted = 0;
        self.tried = 0;
    }
}

pub(super) fn run(input: &FitInput<'_>, spec: &ModelSpec, latent: &Latent, rng: &mut ChaCha8Rng) -> Result<ModelFit> {
    let x = input.x.values();
    let (n, p) = x.shape();
    let y = input.y;
    let zeros = vec![0.0; n];
    let off = input.offset.unwrap_or(&zeros);
    let pb = spec.priors.beta_precision;
    let (a0, b0) = (spec.priors.tau_shape, spec.priors.tau_rate);
    let mcmc = &spec.mcmc;

    let (coef, rank) = match latent {
        Latent::None => (Coef::None, 0),
        Latent::Sparse { q, groups, rank, .. } => (Coef::Sparse { q, groups }, *rank),
        Latent::Dense { basis, prior, rank, .. } => (Coef::Dense { basis, prior }, *rank),
    };
    let d = coef.dim(n);

    let (mut beta, info) = glm_start(y, x, off, pb, input.x.has_intercept());
    let cov = info
        .clone()
        .try_inverse()
        .ok_or_else(|| SpockError::SingularCovariance("Poisson GLM information is singular".into()))?;
    let cov = (&cov + cov.transpose()) * 0.5;
    let prop_l = cov
        .cholesky()
        .ok_or_else(|| SpockError::CholeskyFailure("GLM covariance not positive definite".into()))?
        .l();
    let mut c = vec![0.0; d];
    let mut tau_theta = spec.fixed.map_or(1.0, |f| f.tau_theta);
    let mut eta: Vec<f64> = (x * &beta).iter().zip(off).map(|(a, b)| a + b).collect();

    let mu0: Vec<f64> = eta.iter().map(|e| e.min(MAX_ETA).exp()).collect();
    let mut beta_ad = Adapter::new(mcmc.rw_scale * 2.38 / (p as f64).sqrt(), BETA_TARGET);
    let mut theta_ad: Vec<Adapter> = (0..d)
        .map(|j| {
            let lik = match &coef {
                Coef::Dense { basis, .. } => basis.column(j).iter().zip(&mu0).map(|(b, m)| b * b * m).sum(),
                _ => mu0[j],
            };
            let curv = lik + tau_theta * coef.prior_diag(j);
            Adapter::new(mcmc.rw_scale * 2.4 / curv.max(1e-8).sqrt(), THETA_TARGET)
        })
        .collect();

    let mut rec = Recorder::new(p, n, d > 0);
    let mut stats = AcceptanceStats::default();
    let (mut beta_acc, mut beta_try, mut theta_acc, mut theta_try) = (0usize, 0usize, 0usize, 0usize);
    let mut deta = vec![0.0; n];

    for it in 0..mcmc.n_iter {
        // β block.
        let z = DVector::from_vec(normals(rng, p));
        let step = &prop_l * z * beta_ad.scale();
        let xs = x * &step;
        let mut lr = 0.0;
        for i in 0..n {
            let e1 = eta[i] + xs[i];
            lr += y[i] * xs[i] - (e1.min(MAX_ETA).exp() - eta[i].min(MAX_ETA).exp());
        }
        let prop = &beta + &step;
        lr -= 0.5 * pb * (prop.norm_squared() - beta.norm_squared());
        let ok = rng.random::<f64>().ln() < lr;
        if ok {
            beta = prop;
            for i in 0..n {
                eta[i] += xs[i];
            }
        }
        beta_ad.record(ok);
        if it >= mcmc.n_burn {
            beta_try += 1;
            beta_acc += ok as usize;
        }

        // Spatial coefficients, one at a time.
        for j in 0..d {
            let delta = theta_ad[j].scale() * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let cj = c[j];
            let prior = -0.5
                * tau_theta
                * (coef.prior_diag(j) * ((cj + delta).powi(2) - cj * cj) + 2.0 * delta * coef.prior_cross(j, &c));
            let lik = match &coef {
                Coef::Dense { basis, .. } => {
                    let col = basis.column(j);
                    let mut acc = 0.0;
                    for i in 0..n {
                        deta[i] = delta * col[i];
                        acc += y[i] * deta[i] - ((eta[i] + deta[i]).min(MAX_ETA).exp() - eta[i].min(MAX_ETA).exp());
                    }
                    acc
                }
                _ => y[j] * delta - ((eta[j] + delta).min(MAX_ETA).exp() - eta[j].min(MAX_ETA).exp()),
            };
            let ok = rng.random::<f64>().ln() < lik + prior;
            if ok {
                c[j] = cj + delta;
                match &coef {
                    Coef::Dense { .. } => eta.iter_mut().zip(&deta).for_each(|(e, de)| *e += de),
                    _ => eta[j] += delta,
                }
            }
            theta_ad[j].record(ok);
            if it >= mcmc.n_burn {
                theta_try += 1;
                theta_acc += ok as usize;
            }
        }

        if let Coef::Sparse { groups, .. } = &coef {
            if !groups.is_empty() {
                recenter(groups, &mut c, &mut beta, input.x.has_intercept(), n);
                eta = (x * &beta).iter().zip(off).zip(&c).map(|((a, b), t)| a + b + t).collect();
            }
        }

        if d > 0 && spec.fixed.is_none() {
            let quad = coef.quad(&c).max(0.0);
            tau_theta = gamma_draw(rng, a0 + rank as f64 / 2.0, b0 + quad / 2.0)?;
        }
        check_finite(beta.as_slice(), "beta", it)?;
        check_finite(&c, "theta", it)?;
        check_finite(&[tau_theta], "tau_theta", it)?;

        if mcmc.adapt && it < mcmc.n_burn && (it + 1) % BATCH == 0 {
            let batch = (it + 1) / BATCH;
            beta_ad.adapt(batch);
            theta_ad.iter_mut().for_each(|a| a.adapt(batch));
        }
        if it + 1 == mcmc.n_burn {
            beta_ad.reset();
            theta_ad.iter_mut().for_each(Adapter::reset);
            stats.beta_scale_at_burn = beta_ad.scale();
            stats.theta_scales_at_burn = theta_ad.iter().map(Adapter::scale).collect();
        }
        if mcmc.keeps(it) {
            rec.beta.push(beta.as_slice());
            if d > 0 {
                rec.theta.push(&coef.area_effect(&c, n));
                rec.tau_theta.push(tau_theta);
            }
        }
    }
    if mcmc.n_burn == 0 {
        stats.beta_scale_at_burn = beta_ad.scale();
        stats.theta_scales_at_burn = theta_ad.iter().map(Adapter::scale).collect();
    }
    stats.beta_rate = beta_acc as f64 / beta_try.max(1) as f64;
    stats.theta_rate = theta_acc as f64 / theta_try.max(1) as f64;
    stats.beta_scale_final = beta_ad.scale();
    stats.theta_scales_final = theta_ad.iter().map(Adapter::scale).collect();
    let mut fit = rec.finish(input, spec);
    fit.acceptance = Some(stats);
    Ok(fit)
}

/// Puts each constrained component back at sum zero. A single component's
/// mean moves into the intercept, leaving the linear predictor unchanged.
fn recenter(groups: &[Vec<usize>], c: &mut [f64], beta: &mut DVector<f64>, has_intercept: bool, n: usize) {
    for g in groups {
        let mean = g.iter().map(|&i| c[i]).sum::<f64>() / g.len() as f64;
        for &i in g {
            c[i] -= mean;
        }
        if has_intercept && groups.len() == 1 && g.len() == n {
            beta[0] += mean;
        }
    }
}
