//! Bayesian fitting of the five competing models (LM, ICAR, RHZ, HH, SPOCK)
//! for Gaussian and Poisson responses.
//!
//! Normal distributions are written in precision form throughout:
//! `N(μ, τ)` has variance `1/τ`.
//!
//! Gaussian fits draw `(β, θ)` jointly from their Gaussian full conditional
//! and the precisions from their Gamma conditionals. ICAR and SPOCK keep the
//! spatial effect at dimension `n` with a sparse precision, factored by an
//! envelope Cholesky; the intrinsic sum-to-zero constraint (one per connected
//! component) is imposed by conditioning on it. RHZ and HH work in a dense
//! basis of `span(X)⊥` and pay dense factorizations for it.
//!
//! Poisson fits use Metropolis-within-Gibbs: an adaptive block random walk
//! on `β`, single-site random walks on the spatial coefficients, and a Gibbs
//! step for `τ_θ`. Adaptation only runs during burn-in.

mod gaussian;
mod poisson;
mod structure;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpockError};
use crate::geometry::{CentroidSet, DesignMatrix};
use crate::graph::NeighborhoodGraph;
use crate::precision::PrecisionFamily;

pub use structure::{hh_default_h, spock_graph, Latent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Poisson,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lm,
    Icar,
    Rhz,
    Hh,
    Spock,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Spock, Method::Rhz, Method::Hh, Method::Icar, Method::Lm];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Lm => "LM",
            Method::Icar => "ICAR",
            Method::Rhz => "RHZ",
            Method::Hh => "HH",
            Method::Spock => "SPOCK",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lm" => Some(Method::Lm),
            "icar" => Some(Method::Icar),
            "rhz" => Some(Method::Rhz),
            "hh" => Some(Method::Hh),
            "spock" => Some(Method::Spock),
            _ => None,
        }
    }
}

/// How SPOCK rebuilds the graph on projected centroids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reconstruction {
    /// `k_i` nearest neighbors; `k_i` defaults to the original degree.
    Knn { k_override: Option<usize> },
    Delaunay,
}

impl Default for Reconstruction {
    fn default() -> Self {
        Reconstruction::Knn { k_override: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Prior precision of each β (0 = flat).
    pub beta_precision: f64,
    /// Gamma(shape, rate) prior shared by τ_e and τ_θ.
    pub tau_shape: f64,
    pub tau_rate: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { beta_precision: 1e-6, tau_shape: 0.5, tau_rate: 0.0005 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub seed: u64,
    /// Initial random-walk scale multiplier (Poisson only).
    pub rw_scale: f64,
    /// Adapt random-walk scales during burn-in (Poisson only).
    pub adapt: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { n_iter: 10_000, n_burn: 2_000, thin: 1, seed: 1, rw_scale: 1.0, adapt: true }
    }
}

impl McmcConfig {
    pub fn retained(&self) -> usize {
        (self.n_iter - self.n_burn) / self.thin
    }

    fn validate(&self) -> Result<()> {
        if self.n_iter <= self.n_burn {
            return Err(SpockError::InvalidParameter(format!(
                "n_iter ({}) must exceed n_burn ({})",
                self.n_iter, self.n_burn
            )));
        }
        if self.thin == 0 {
            return Err(SpockError::InvalidParameter("thin must be at least 1".into()));
        }
        if !(self.rw_scale > 0.0) {
            return Err(SpockError::InvalidParameter("rw_scale must be positive".into()));
        }
        Ok(())
    }

    /// Whether post-burn-in iteration `it` (0-based over all iterations) is kept.
    fn keeps(&self, it: usize) -> bool {
        it >= self.n_burn && (it - self.n_burn + 1) % self.thin == 0
    }
}

/// Precisions held at fixed values instead of being sampled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPrecisions {
    pub tau_e: f64,
    pub tau_theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub method: Method,
    /// Prior family of the spatial effect. RHZ and HH accept ICAR only.
    pub spatial_family: PrecisionFamily,
    /// HH basis dimension; defaults to `min(⌈0.1 n⌉, 50)`.
    pub h: Option<usize>,
    pub priors: PriorConfig,
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub fixed: Option<FixedPrecisions>,
    #[serde(default)]
    pub reconstruction: Reconstruction,
}

impl ModelSpec {
    pub fn new(family: Family, method: Method) -> Self {
        Self {
            family,
            method,
            spatial_family: PrecisionFamily::Icar,
            h: None,
            priors: PriorConfig::default(),
            mcmc: McmcConfig::default(),
            fixed: None,
            reconstruction: Reconstruction::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        self.mcmc.validate()?;
        let p = &self.priors;
        if !(p.tau_shape > 0.0 && p.tau_rate > 0.0) || !(p.beta_precision >= 0.0) {
            return Err(SpockError::InvalidParameter(
                "priors need tau_shape > 0, tau_rate > 0, beta_precision >= 0".into(),
            ));
        }
        if matches!(self.method, Method::Rhz | Method::Hh) && self.spatial_family != PrecisionFamily::Icar {
            return Err(SpockError::InvalidParameter(format!(
                "{} supports the ICAR spatial family only",
                self.method.name()
            )));
        }
        if self.method == Method::Lm && self.family != Family::Gaussian {
            return Err(SpockError::InvalidParameter("LM is a Gaussian model".into()));
        }
        if let Some(f) = self.fixed {
            if !(f.tau_e > 0.0 && f.tau_theta > 0.0) {
                return Err(SpockError::InvalidParameter("fixed precisions must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Everything a fit may need. `graph` is required by the spatial methods and
/// `centroids` by SPOCK.
#[derive(Clone, Copy, Debug)]
pub struct FitInput<'a> {
    pub y: &'a [f64],
    pub x: &'a DesignMatrix<f64>,
    pub graph: Option<&'a NeighborhoodGraph>,
    pub centroids: Option<&'a CentroidSet<f64>>,
    /// Additive term on the linear-predictor scale (log exposure for Poisson).
    pub offset: Option<&'a [f64]>,
}

impl<'a> FitInput<'a> {
    pub fn new(y: &'a [f64], x: &'a DesignMatrix<f64>) -> Self {
        Self { y, x, graph: None, centroids: None, offset: None }
    }

    pub fn with_graph(mut self, g: &'a NeighborhoodGraph) -> Self {
        self.graph = Some(g);
        self
    }

    pub fn with_centroids(mut self, s: &'a CentroidSet<f64>) -> Self {
        self.centroids = Some(s);
        self
    }

    pub fn with_offset(mut self, offset: &'a [f64]) -> Self {
        self.offset = Some(offset);
        self
    }
}

/// Row-major matrix of posterior draws.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Draws {
    pub ncols: usize,
    pub data: Vec<f64>,
}

impl Draws {
    pub fn new(ncols: usize) -> Self {
        Self { ncols, data: Vec::new() }
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.ncols);
        self.data.extend_from_slice(row);
    }

    pub fn nrows(&self) -> usize {
        if self.ncols == 0 {
            0
        } else {
            self.data.len() / self.ncols
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.ncols..(r + 1) * self.ncols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.nrows()).map(|r| self.data[r * self.ncols + c]).collect()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.nrows().max(1) as f64;
        let mut m = vec![0.0; self.ncols];
        for r in 0..self.nrows() {
            for (acc, v) in m.iter_mut().zip(self.row(r)) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

/// Random-walk bookkeeping for Poisson fits.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    /// Post-burn-in acceptance rate of the β block proposal.
    pub beta_rate: f64,
    /// Mean post-burn-in acceptance rate of the single-site θ proposals.
    pub theta_rate: f64,
    /// β proposal scale when burn-in ended, and at the end of the run.
    pub beta_scale_at_burn: f64,
    pub beta_scale_final: f64,
    pub theta_scales_at_burn: Vec<f64>,
    pub theta_scales_final: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub method: Method,
    pub family: Family,
    pub beta_names: Vec<String>,
    /// draws × q.
    pub beta_draws: Draws,
    /// draws × n: the area-level spatial effect (`Lθ₂` / `Mθ₂` for RHZ/HH).
    pub theta_draws: Draws,
    /// Empty for Poisson and LM-free variants without a residual precision.
    pub tau_e_draws: Vec<f64>,
    /// Empty for LM.
    pub tau_theta_draws: Vec<f64>,
    pub wall_time: f64,
    pub acceptance: Option<AcceptanceStats>,
    /// Graph the spatial prior was defined on (rebuilt graph for SPOCK).
    #[serde(skip)]
    pub spatial_graph: Option<NeighborhoodGraph>,
    pub spec: ModelSpec,
}

impl ModelFit {
    pub fn n_draws(&self) -> usize {
        self.beta_draws.nrows()
    }

    pub fn beta_means(&self) -> Vec<f64> {
        self.beta_draws.column_means()
    }

    pub fn theta_means(&self) -> Vec<f64> {
        self.theta_draws.column_means()
    }
}

/// Minimum draws accepted by [`posterior_summary`].
pub const MIN_SUMMARY_DRAWS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub q025: f64,
    pub q975: f64,
}

/// Empirical quantile with linear interpolation between order statistics:
/// position `h = (N − 1)p`, value `x₍⌊h⌋₎ + (h − ⌊h⌋)(x₍⌊h⌋+1₎ − x₍⌊h⌋₎)`
/// (0-based order statistics). `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_sorted(&v, 0.5)
}

/// Mean, median and 2.5%/97.5% quantiles of `draws`.
pub fn summarize(name: &str, draws: &[f64]) -> ParamSummary {
    let mut v = draws.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ParamSummary {
        name: name.to_string(),
        mean: draws.iter().sum::<f64>() / draws.len() as f64,
        median: quantile_sorted(&v, 0.5),
        q025: quantile_sorted(&v, 0.025),
        q975: quantile_sorted(&v, 0.975),
    }
}

/// Summaries for every β, then `tau_e`, `tau_theta` (when sampled), then
/// each area's spatial effect `theta[i]`.
pub fn posterior_summary(fit: &ModelFit) -> Result<Vec<ParamSummary>> {
    let have = fit.n_draws();
    if have < MIN_SUMMARY_DRAWS {
        return Err(SpockError::InsufficientDraws { have, need: MIN_SUMMARY_DRAWS });
    }
    let mut out: Vec<ParamSummary> =
        fit.beta_names.iter().enumerate().map(|(j, name)| summarize(name, &fit.beta_draws.column(j))).collect();
    if !fit.tau_e_draws.is_empty() {
        out.push(summarize("tau_e", &fit.tau_e_draws));
    }
    if !fit.tau_theta_draws.is_empty() {
        out.push(summarize("tau_theta", &fit.tau_theta_draws));
    }
    for i in 0..fit.theta_draws.ncols {
        out.push(summarize(&format!("theta[{i}]"), &fit.theta_draws.column(i)));
    }
    Ok(out)
}

/// Fits `spec.method` to `input`.
pub fn fit(input: &FitInput<'_>, spec: &ModelSpec) -> Result<ModelFit> {
    spec.validate()?;
    let n = input.x.nrows();
    if input.y.len() != n {
        return Err(SpockError::LengthMismatch(format!("{} responses for {n} design rows", input.y.len())));
    }
    if let Some(off) = input.offset {
        if off.len() != n {
            return Err(SpockError::LengthMismatch(format!("{} offsets for {n} areas", off.len())));
        }
    }
    if input.y.iter().any(|v| !v.is_finite()) {
        return Err(SpockError::InvalidParameter("response has non-finite values".into()));
    }
    if spec.family == Family::Poisson {
        if let Some(&v) = input.y.iter().find(|&&v| v < 0.0 || v.fract() != 0.0) {
            return Err(SpockError::NegativeCount { id: String::new(), value: v });
        }
    }
    let start = Instant::now();
    let latent = Latent::build(input, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.mcmc.seed);
    let mut out = match spec.family {
        Family::Gaussian => gaussian::run(input, spec, &latent, &mut rng)?,
        Family::Poisson => poisson::run(input, spec, &latent, &mut rng)?,
    };
    out.wall_time = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
    out.spatial_graph = latent.graph().cloned();
    Ok(out)
}

pub fn fit_lm(y: &[f64], x: &DesignMatrix<f64>, spec: &ModelSpec) -> Result<ModelFit> {
    let spec = ModelSpec { method: Method::Lm, ..spec.clone() };
    fit(&FitInput::new(y, x), &spec)
}

pub fn fit_icar(y: &[f64], x: &DesignMatrix<f64>, g: &NeighborhoodGraph, spec: &ModelSpec) -> Result<ModelFit> {
    let spec = ModelSpec { method: Method::Icar, ..spec.clone() };
    fit(&FitInput::new(y, x).with_graph(g), &spec)
}

pub fn fit_rhz(y: &[f64], x: &DesignMatrix<f64>, g: &NeighborhoodGraph, spec: &ModelSpec) -> Result<ModelFit> {
    let spec = ModelSpec { method: Method::Rhz, ..spec.clone() };
    fit(&FitInput::new(y, x).with_graph(g), &spec)
}

pub fn fit_hh(y: &[f64], x: &DesignMatrix<f64>, g: &NeighborhoodGraph, spec: &ModelSpec) -> Result<ModelFit> {
    let spec = ModelSpec { method: Method::Hh, ..spec.clone() };
    fit(&FitInput::new(y, x).with_graph(g), &spec)
}

pub fn fit_spock(
    y: &[f64],
    x: &DesignMatrix<f64>,
    s: &CentroidSet<f64>,
    g: &NeighborhoodGraph,
    spec: &ModelSpec,
) -> Result<ModelFit> {
    let spec = ModelSpec { method: Method::Spock, ..spec.clone() };
    fit(&FitInput::new(y, x).with_graph(g).with_centroids(s), &spec)
}
