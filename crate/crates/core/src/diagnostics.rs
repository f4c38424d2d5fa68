//! Canonical-correlation diagnostic for the need of confounding correction:
//! how much of the centroid geometry is linearly shared with the covariates.

use nalgebra::{DMatrix, Matrix2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Result, SpockError};
use crate::geometry::{numerical_rank, CentroidSet, DesignMatrix};
use crate::scalar::Scalar;

/// Significance level used for the verdict unless overridden.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Minimum permutation count accepted by [`permutation_test`].
pub const MIN_PERMUTATIONS: usize = 99;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    /// Canonical correlations, descending.
    pub rho: Vec<f64>,
    pub wilks_lambda: f64,
    pub f_statistic: f64,
    /// Numerator and denominator degrees of freedom of the F approximation.
    pub df: (f64, f64),
    pub p_asymptotic: f64,
    pub p_permutation: Option<f64>,
    pub n_permutations: usize,
    pub seed: u64,
}

impl DiagnosticReport {
    /// Correction is recommended when the permutation p-value (or the
    /// asymptotic one, if no permutations were run) falls below `alpha`.
    pub fn correction_recommended(&self, alpha: f64) -> bool {
        self.p_permutation.unwrap_or(self.p_asymptotic) < alpha
    }

    pub fn verdict(&self, alpha: f64) -> String {
        let rho1 = self.rho.first().copied().unwrap_or(0.0);
        if self.correction_recommended(alpha) {
            format!("correction recommended (rho1 = {rho1:.4}, alpha = {alpha})")
        } else {
            format!("no correction needed (rho1 = {rho1:.4}, alpha = {alpha})")
        }
    }
}

/// Column-centered copy of `m`.
fn centered<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let n = T::from_count(m.nrows());
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

/// Orthonormal bases of the centered centroid and covariate column spaces.
/// Canonical correlations are the singular values of `Qsᵀ Qx`.
struct CanonicalBases<T: Scalar> {
    qs: DMatrix<T>,
    qx: DMatrix<T>,
}

impl<T: Scalar> CanonicalBases<T> {
    fn new(s: &CentroidSet<T>, x: &DesignMatrix<T>) -> Result<Self> {
        let n = s.len();
        if x.nrows() != n {
            return Err(SpockError::DimensionMismatch(format!("{} design rows for {n} centroids", x.nrows())));
        }
        let xs = x.non_intercept();
        let m = xs.ncols();
        if m == 0 {
            return Err(SpockError::InvalidParameter(
                "canonical correlation needs at least one non-intercept covariate".into(),
            ));
        }
        if n <= x.ncols() + 2 {
            return Err(SpockError::DimensionMismatch(format!("need n > q + 2, got n = {n}, q = {}", x.ncols())));
        }
        let sc = centered(s.coords());
        let xc = centered(&xs);
        if numerical_rank(&sc) < 2 {
            return Err(SpockError::SingularCovariance("centroid covariance S_ss is singular".into()));
        }
        if numerical_rank(&xc) < m {
            return Err(SpockError::SingularCovariance("covariate covariance S_xx is singular".into()));
        }
        Ok(Self { qs: sc.qr().q(), qx: xc.qr().q() })
    }

    fn correlations(&self) -> Vec<T> {
        let cross = self.qs.transpose() * &self.qx;
        let mut sv: Vec<T> = cross.singular_values().iter().map(|&v| v.min(T::one()).max(T::zero())).collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        sv.truncate(2.min(self.qx.ncols()));
        sv
    }

    /// Largest canonical correlation with the covariate rows reordered by `perm`.
    fn permuted_rho1(&self, perm: &[usize]) -> f64 {
        let m = self.qx.ncols();
        let mut cross = vec![[0.0f64; 2]; m];
        for (i, &pi) in perm.iter().enumerate() {
            let a = self.qs[(i, 0)].as_f64();
            let b = self.qs[(i, 1)].as_f64();
            for (k, c) in cross.iter_mut().enumerate() {
                let v = self.qx[(pi, k)].as_f64();
                c[0] += a * v;
                c[1] += b * v;
            }
        }
        // Largest eigenvalue of the 2×2 Gram matrix C Cᵀ.
        let mut g = Matrix2::<f64>::zeros();
        for c in &cross {
            g[(0, 0)] += c[0] * c[0];
            g[(0, 1)] += c[0] * c[1];
            g[(1, 1)] += c[1] * c[1];
        }
        let tr = g[(0, 0)] + g[(1, 1)];
        let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(0, 1)];
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        (tr / 2.0 + disc).max(0.0).sqrt().min(1.0)
    }
}

/// Canonical correlations between the centroids and the non-intercept
/// covariates, both column-centered; descending, `min(2, q_nc)` of them.
pub fn canonical_correlations<T: Scalar>(s: &CentroidSet<T>, x: &DesignMatrix<T>) -> Result<Vec<T>> {
    Ok(CanonicalBases::new(s, x)?.correlations())
}

/// Rao's F approximation for Wilks' Λ with `p` response variables,
/// `m` predictors and `n` observations. Returns `(F, df1, df2)`.
pub fn rao_f(lambda: f64, p: usize, m: usize, n: usize) -> (f64, f64, f64) {
    let (p, m, n) = (p as f64, m as f64, n as f64);
    let t = if p * p + m * m - 5.0 > 0.0 { ((p * p * m * m - 4.0) / (p * p + m * m - 5.0)).sqrt() } else { 1.0 };
    let w = n - 1.0 - (p + m + 1.0) / 2.0;
    let df1 = p * m;
    let df2 = w * t - (p * m - 2.0) / 2.0;
    let root = lambda.max(0.0).powf(1.0 / t);
    let f = if root <= 0.0 { f64::INFINITY } else { (1.0 - root) / root * df2 / df1 };
    (f.max(0.0), df1, df2)
}

/// Wilks' Λ and its asymptotic F test (no permutations).
pub fn wilks_test<T: Scalar>(s: &CentroidSet<T>, x: &DesignMatrix<T>) -> Result<DiagnosticReport> {
    let rho: Vec<f64> = canonical_correlations(s, x)?.into_iter().map(Scalar::as_f64).collect();
    Ok(asymptotic_report(rho, 2, x.non_intercept().ncols(), s.len()))
}

fn asymptotic_report(rho: Vec<f64>, p: usize, m: usize, n: usize) -> DiagnosticReport {
    let wilks_lambda: f64 = rho.iter().map(|r| 1.0 - r * r).product();
    let (f_statistic, df1, df2) = rao_f(wilks_lambda, p, m, n);
    let p_asymptotic = if f_statistic.is_infinite() {
        0.0
    } else if f_statistic == 0.0 {
        1.0
    } else {
        FisherSnedecor::new(df1, df2).map(|d| d.sf(f_statistic)).unwrap_or(f64::NAN)
    };
    DiagnosticReport {
        rho,
        wilks_lambda,
        f_statistic,
        df: (df1, df2),
        p_asymptotic: p_asymptotic.clamp(0.0, 1.0),
        p_permutation: None,
        n_permutations: 0,
        seed: 0,
    }
}

/// Seeded substream for permutation `r`.
fn permutation_rng(seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64 + 1);
    rng
}

/// Randomization p-value `(1 + #{ρ₁(perm) ≥ ρ₁}) / (1 + n_perm)` with rows
/// of X permuted. Each replicate uses its own substream of `seed`, so the
/// result does not depend on how the work is scheduled.
pub fn permutation_test<T: Scalar>(s: &CentroidSet<T>, x: &DesignMatrix<T>, n_perm: usize, seed: u64) -> Result<f64> {
    let bases = CanonicalBases::new(s, x)?;
    permutation_p_value(&bases, n_perm, seed)
}

fn permutation_p_value<T: Scalar>(bases: &CanonicalBases<T>, n_perm: usize, seed: u64) -> Result<f64> {
    if n_perm < MIN_PERMUTATIONS {
        return Err(SpockError::InvalidParameter(format!(
            "need at least {MIN_PERMUTATIONS} permutations, got {n_perm}"
        )));
    }
    let n = bases.qs.nrows();
    let identity: Vec<usize> = (0..n).collect();
    let observed = bases.permuted_rho1(&identity);
    let exceed: usize = (0..n_perm)
        .into_par_iter()
        .map(|r| {
            let mut perm = identity.clone();
            perm.shuffle(&mut permutation_rng(seed, r));
            usize::from(bases.permuted_rho1(&perm) >= observed)
        })
        .sum();
    Ok((1 + exceed) as f64 / (1 + n_perm) as f64)
}

/// Full report: canonical correlations, Wilks' test, and (when
/// `n_perm > 0`) the permutation test.
pub fn diagnose<T: Scalar>(s: &CentroidSet<T>, x: &DesignMatrix<T>, n_perm: usize, seed: u64) -> Result<DiagnosticReport> {
    let bases = CanonicalBases::new(s, x)?;
    let rho: Vec<f64> = bases.correlations().into_iter().map(Scalar::as_f64).collect();
    let mut report = asymptotic_report(rho, 2, bases.qx.ncols(), s.len());
    if n_perm > 0 {
        report.p_permutation = Some(permutation_p_value(&bases, n_perm, seed)?);
        report.n_permutations = n_perm;
    }
    report.seed = seed;
    Ok(report)
}
