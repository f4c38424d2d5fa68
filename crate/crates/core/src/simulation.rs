//! Simulation studies: synthetic confounded datasets, all five models fitted
//! per replicate, and replicate-level summaries.
//!
//! Every replicate draws from its own ChaCha stream, keyed by the study seed
//! and the replicate id, so results do not depend on how replicates are
//! spread over workers.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpockError};
use crate::fit::{self, median, quantile_sorted, FitInput, McmcConfig, Method, ModelSpec, MIN_SUMMARY_DRAWS};
use crate::geometry::{build_projector, DesignMatrix};
use crate::io::{AreaMap, SummaryRow};
use crate::precision::{icar_precision, SparsePrecision};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// ICAR effect, `X₂ = s₁`.
    IcarSpatialX,
    /// Effect with precision `P⊥QP⊥`, orthogonal to the design; `X₂ = s₁`.
    Rhz,
    /// ICAR effect, `X₂` independent of the geography.
    IcarNonSpatialX,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub beta: [f64; 3],
    pub tau_e: f64,
    pub tau_theta: f64,
    pub n_replicates: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, tau_e: f64, tau_theta: f64) -> Self {
        Self { scenario, beta: [2.0, 1.0, -1.0], tau_e, tau_theta, n_replicates: 1, seed: 1 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tau_e > 0.0 && self.tau_theta > 0.0) {
            return Err(SpockError::InvalidParameter("scenario precisions must be positive".into()));
        }
        if self.n_replicates == 0 {
            return Err(SpockError::InvalidParameter("n_replicates must be at least 1".into()));
        }
        Ok(())
    }
}

/// Draws from a zero-mean GMRF with singular precision `τ·K`: independent
/// `N(0, 1/(τλ_j))` coefficients on eigenvectors with `λ_j > 1e−8`, nothing
/// on the null space.
#[derive(Clone, Debug)]
pub struct IntrinsicSampler {
    /// Columns scaled by `λ_j^{−1/2}`.
    factor: DMatrix<f64>,
}

/// Eigenvalues at or below this are treated as the null space.
pub const NULL_EIGENVALUE: f64 = 1e-8;

impl IntrinsicSampler {
    pub fn new(k: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(k.clone());
        let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&j| eig.eigenvalues[j] > NULL_EIGENVALUE).collect();
        let mut factor = DMatrix::zeros(k.nrows(), keep.len());
        for (c, &j) in keep.iter().enumerate() {
            let s = eig.eigenvalues[j].sqrt().recip();
            factor.set_column(c, &(eig.eigenvectors.column(j) * s));
        }
        Self { factor }
    }

    /// Rank of the precision.
    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    pub fn sample<R: Rng>(&self, tau: f64, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.factor * z / tau.sqrt()
    }
}

/// One draw of `θ ~ N(0, τQ)` for an intrinsic `Q`.
pub fn sample_icar_effect<R: Rng>(q: &SparsePrecision<f64>, tau: f64, rng: &mut R) -> DVector<f64> {
    IntrinsicSampler::new(&q.to_dense()).sample(tau, rng)
}

/// `P⊥QP⊥` as a dense matrix.
pub fn rhz_precision(q: &SparsePrecision<f64>, x: &DesignMatrix<f64>) -> DMatrix<f64> {
    let p = build_projector(x);
    let k = p.matrix() * q.to_dense() * p.matrix();
    (&k + k.transpose()) * 0.5
}

/// One draw of `θ ~ N(0, τ P⊥QP⊥)`; orthogonal to `span(X)`.
pub fn sample_rhz_effect<R: Rng>(q: &SparsePrecision<f64>, x: &DesignMatrix<f64>, tau: f64, rng: &mut R) -> DVector<f64> {
    IntrinsicSampler::new(&rhz_precision(q, x)).sample(tau, rng)
}

/// `β* = β + (XᵀX)⁻¹Xᵀθ`.
pub fn compute_beta_star(beta: &[f64], x: &DesignMatrix<f64>, theta: &DVector<f64>) -> Result<Vec<f64>> {
    if beta.len() != x.ncols() {
        return Err(SpockError::DimensionMismatch(format!("{} coefficients for {} columns", beta.len(), x.ncols())));
    }
    let shift = x.regress(theta)?;
    Ok(beta.iter().zip(shift.iter()).map(|(b, s)| b + s).collect())
}

#[derive(Clone, Debug)]
pub struct Replicate {
    pub y: Vec<f64>,
    pub x: DesignMatrix<f64>,
    pub theta: DVector<f64>,
}

fn replicate_rng(seed: u64, replicate_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate_id as u64);
    rng
}

/// Deterministic in `(cfg.seed, replicate_id)`. Returns the RNG so callers
/// can keep drawing from the same stream.
fn generate_with_rng(cfg: &ScenarioConfig, map: &AreaMap, replicate_id: usize) -> Result<(Replicate, ChaCha8Rng)> {
    let mut rng = replicate_rng(cfg.seed, replicate_id);
    let n = map.n();
    let mut cov = DMatrix::zeros(n, 2);
    for i in 0..n {
        cov[(i, 0)] = rng.sample::<f64, _>(StandardNormal);
    }
    for i in 0..n {
        cov[(i, 1)] = match cfg.scenario {
            Scenario::IcarSpatialX | Scenario::Rhz => map.centroids.x(i),
            Scenario::IcarNonSpatialX => rng.sample::<f64, _>(StandardNormal),
        };
    }
    let x = DesignMatrix::with_intercept(&cov, &["x1".to_string(), "x2".to_string()])?;
    let q = icar_precision::<f64>(&map.adjacency)?;
    let theta = match cfg.scenario {
        Scenario::Rhz => sample_rhz_effect(&q, &x, cfg.tau_theta, &mut rng),
        _ => sample_icar_effect(&q, cfg.tau_theta, &mut rng),
    };
    let sd = cfg.tau_e.sqrt().recip();
    let b = DVector::from_column_slice(&cfg.beta);
    let mean = x.values() * b + &theta;
    let y = mean.iter().map(|m| m + sd * rng.sample::<f64, _>(StandardNormal)).collect();
    Ok((Replicate { y, x, theta }, rng))
}

pub fn generate_replicate(cfg: &ScenarioConfig, map: &AreaMap, replicate_id: usize) -> Result<Replicate> {
    Ok(generate_with_rng(cfg, map, replicate_id)?.0)
}

/// Per-model estimates for one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEstimate {
    pub beta_mean: Vec<f64>,
    pub beta_q025: Vec<f64>,
    pub beta_q975: Vec<f64>,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate_id: usize,
    pub theta_true: Vec<f64>,
    pub beta_star: Vec<f64>,
    /// `Err` holds the failure message.
    pub models: BTreeMap<Method, std::result::Result<ModelEstimate, String>>,
}

/// Models and sampler settings for a study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenario: ScenarioConfig,
    pub models: Vec<Method>,
    pub mcmc: McmcConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    /// Sorted by replicate id.
    pub replicates: Vec<ReplicateResult>,
}

fn fit_replicate(rep: &Replicate, map: &AreaMap, method: Method, mcmc: &McmcConfig) -> Result<ModelEstimate> {
    let mut spec = ModelSpec::new(fit::Family::Gaussian, method);
    spec.mcmc = mcmc.clone();
    let input = FitInput::new(&rep.y, &rep.x).with_graph(&map.adjacency).with_centroids(&map.centroids);
    let f = fit::fit(&input, &spec)?;
    if f.n_draws() < MIN_SUMMARY_DRAWS {
        return Err(SpockError::InsufficientDraws { have: f.n_draws(), need: MIN_SUMMARY_DRAWS });
    }
    let q = rep.x.ncols();
    let mut est = ModelEstimate {
        beta_mean: f.beta_means(),
        beta_q025: Vec::with_capacity(q),
        beta_q975: Vec::with_capacity(q),
        wall_time: f.wall_time,
    };
    for j in 0..q {
        let mut col = f.beta_draws.column(j);
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        est.beta_q025.push(quantile_sorted(&col, 0.025));
        est.beta_q975.push(quantile_sorted(&col, 0.975));
    }
    Ok(est)
}

/// Runs one replicate: generate, then fit each model with its own MCMC seed
/// drawn from the replicate's stream.
pub fn run_replicate(cfg: &StudyConfig, map: &AreaMap, replicate_id: usize) -> Result<ReplicateResult> {
    let (rep, mut rng) = generate_with_rng(&cfg.scenario, map, replicate_id)?;
    let beta_star = compute_beta_star(&cfg.scenario.beta, &rep.x, &rep.theta)?;
    let mut models = BTreeMap::new();
    for &m in &cfg.models {
        let mcmc = McmcConfig { seed: rng.random(), ..cfg.mcmc.clone() };
        models.insert(m, fit_replicate(&rep, map, m, &mcmc).map_err(|e| e.to_string()));
    }
    Ok(ReplicateResult { replicate_id, theta_true: rep.theta.as_slice().to_vec(), beta_star, models })
}

/// Runs all replicates on a pool of `workers` threads.
pub fn run_study(cfg: &StudyConfig, map: &AreaMap, workers: usize) -> Result<StudyResult> {
    cfg.scenario.validate()?;
    if cfg.models.is_empty() {
        return Err(SpockError::InvalidParameter("no models selected".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| SpockError::InvalidParameter(format!("worker pool: {e}")))?;
    let replicates: Vec<ReplicateResult> = pool.install(|| {
        (0..cfg.scenario.n_replicates)
            .into_par_iter()
            .map(|r| run_replicate(cfg, map, r))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(StudyResult { config: cfg.clone(), replicates })
}

pub const PARAMETERS: [&str; 3] = ["beta0", "beta1", "beta2"];

impl StudyResult {
    /// Successful estimates of one model, by replicate.
    pub fn estimates(&self, m: Method) -> Vec<(&ReplicateResult, &ModelEstimate)> {
        self.replicates
            .iter()
            .filter_map(|r| match r.models.get(&m) {
                Some(Ok(e)) => Some((r, e)),
                _ => None,
            })
            .collect()
    }

    pub fn failures(&self, m: Method) -> usize {
        self.replicates.iter().filter(|r| matches!(r.models.get(&m), Some(Err(_)))).count()
    }

    /// Posterior means of parameter `j` across successful replicates.
    pub fn posterior_means(&self, m: Method, j: usize) -> Vec<f64> {
        self.estimates(m).iter().map(|(_, e)| e.beta_mean[j]).collect()
    }

    /// `β̂_j / β*_j` per successful replicate.
    pub fn ratios(&self, m: Method, j: usize) -> Vec<(usize, f64)> {
        self.estimates(m).iter().map(|(r, e)| (r.replicate_id, e.beta_mean[j] / r.beta_star[j])).collect()
    }

    pub fn wall_times(&self, m: Method) -> Vec<f64> {
        self.estimates(m).iter().map(|(_, e)| e.wall_time).collect()
    }

    /// Mean, median and 2.5%/97.5% quantiles of the posterior means, per
    /// model and parameter.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for &m in &self.config.models {
            for (j, name) in PARAMETERS.iter().enumerate() {
                let mut v = self.posterior_means(m, j);
                if v.is_empty() {
                    continue;
                }
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let stats = [
                    ("mean", v.iter().sum::<f64>() / v.len() as f64),
                    ("median", quantile_sorted(&v, 0.5)),
                    ("q025", quantile_sorted(&v, 0.025)),
                    ("q975", quantile_sorted(&v, 0.975)),
                ];
                for (stat, value) in stats {
                    rows.push(SummaryRow {
                        model: m.name().into(),
                        parameter: (*name).into(),
                        statistic: stat.into(),
                        value,
                    });
                }
            }
        }
        rows
    }

    /// Median and standard deviation of wall times per model.
    pub fn timing(&self) -> Vec<TimingRow> {
        self.config
            .models
            .iter()
            .map(|&m| {
                let t = self.wall_times(m);
                let (med, sd) = if t.is_empty() {
                    (f64::NAN, f64::NAN)
                } else {
                    let mean = t.iter().sum::<f64>() / t.len() as f64;
                    let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t.len().max(2) - 1) as f64;
                    (median(&t), var.sqrt())
                };
                TimingRow { model: m.name().into(), median_seconds: med, sd_seconds: sd, n_ok: t.len(), n_failed: self.failures(m) }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub model: String,
    pub median_seconds: f64,
    pub sd_seconds: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

/// Writes `summary.csv`, `ratios.csv`, `timing.csv` and `study.json` into `dir`.
pub fn write_study(result: &StudyResult, config_echo: &serde_json::Value, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::io::write_summary_csv(&result.summary(), &dir.join("summary.csv"))?;
    let mut w = csv::Writer::from_path(dir.join("ratios.csv"))?;
    w.write_record(["replicate", "model", "parameter", "ratio"])?;
    for &m in &result.config.models {
        for (j, name) in PARAMETERS.iter().enumerate() {
            for (r, v) in result.ratios(m, j) {
                w.write_record([r.to_string(), m.name().to_string(), name.to_string(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("timing.csv"))?;
    for row in result.timing() {
        w.serialize(row)?;
    }
    w.flush()?;
    let failures: BTreeMap<&str, usize> = result.config.models.iter().map(|&m| (m.name(), result.failures(m))).collect();
    let meta = serde_json::json!({
        "version": crate::io::VERSION,
        "seed": result.config.scenario.seed,
        "config_hash": crate::io::config_hash(config_echo),
        "config": config_echo,
        "failures": failures,
    });
    std::fs::write(dir.join("study.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}
