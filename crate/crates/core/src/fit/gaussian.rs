//! Gaussian-response samplers: blocked Gibbs over `(β, θ) | τ` and `τ | (β, θ)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::structure::Latent;
use super::{Draws, Family, FitInput, ModelFit, ModelSpec};
use crate::cholesky::{reverse_cuthill_mckee, SparseCholesky};
use crate::error::{Result, SpockError};
use crate::precision::SparsePrecision;

pub(super) fn gamma_draw(rng: &mut ChaCha8Rng, shape: f64, rate: f64) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| SpockError::DivergentChain(format!("Gamma({shape}, {rate}): {e}")))?;
    Ok(g.sample(rng))
}

pub(super) fn normals(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub(super) fn check_finite(values: &[f64], what: &str, it: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SpockError::DivergentChain(format!("non-finite {what} at iteration {it}")))
    }
}

/// Collects retained draws.
pub(super) struct Recorder {
    pub beta: Draws,
    pub theta: Draws,
    pub tau_e: Vec<f64>,
    pub tau_theta: Vec<f64>,
}

impl Recorder {
    pub fn new(q: usize, n: usize, spatial: bool) -> Self {
        Self { beta: Draws::new(q), theta: Draws::new(if spatial { n } else { 0 }), tau_e: Vec::new(), tau_theta: Vec::new() }
    }

    pub fn finish(self, input: &FitInput<'_>, spec: &ModelSpec) -> ModelFit {
        ModelFit {
            method: spec.method,
            family: spec.family,
            beta_names: input.x.names().to_vec(),
            beta_draws: self.beta,
            theta_draws: self.theta,
            tau_e_draws: self.tau_e,
            tau_theta_draws: self.tau_theta,
            wall_time: 0.0,
            acceptance: None,
            spatial_graph: None,
            spec: spec.clone(),
        }
    }
}

/// Linear-algebra backend for drawing `(β, θ)` from its joint conditional.
enum Joint<'a> {
    Lm,
    Sparse(SparseJoint<'a>),
    Dense(DenseJoint<'a>),
}

struct SparseJoint<'a> {
    q: &'a SparsePrecision<f64>,
    groups: &'a [Vec<usize>],
    chol: SparseCholesky<f64>,
    diag_slots: Vec<usize>,
    /// Lower-triangle θθ entries with their `Q` value.
    off_slots: Vec<(usize, f64)>,
    /// `(i, k)` at `i·p + k`.
    xb_slots: Vec<usize>,
    bb_slots: Vec<(usize, usize, usize)>,
    /// Factor-order rows touched by each group's constraint column.
    group_rows: Vec<Vec<usize>>,
}

struct DenseJoint<'a> {
    basis: &'a DMatrix<f64>,
    prior: &'a DMatrix<f64>,
    xtb: DMatrix<f64>,
    btb: DMatrix<f64>,
    bty: DVector<f64>,
}

pub(super) fn run(input: &FitInput<'_>, spec: &ModelSpec, latent: &Latent, rng: &mut ChaCha8Rng) -> Result<ModelFit> {
    let x = input.x.values();
    let (n, p) = x.shape();
    let y = DVector::from_column_slice(input.y);
    let y = match input.offset {
        Some(off) => y - DVector::from_column_slice(off),
        None => y,
    };
    let xtx = x.transpose() * x;
    let xty = x.transpose() * &y;
    let pb = spec.priors.beta_precision;
    let (a0, b0) = (spec.priors.tau_shape, spec.priors.tau_rate);

    let (mut joint, rank) = match latent {
        Latent::None => (Joint::Lm, 0),
        Latent::Sparse { q, groups, rank, .. } => (Joint::Sparse(SparseJoint::new(q, groups, x)), *rank),
        Latent::Dense { basis, prior, rank, .. } => {
            let xtb = x.transpose() * basis;
            let btb = basis.transpose() * basis;
            let bty = basis.transpose() * &y;
            (Joint::Dense(DenseJoint { basis, prior, xtb, btb, bty }), *rank)
        }
    };
    let spatial = !matches!(joint, Joint::Lm);

    let mut beta = input.x.regress(&y)?;
    let mut theta = DVector::<f64>::zeros(n);
    let resid = &y - x * &beta;
    let mut tau_e = match spec.fixed {
        Some(f) => f.tau_e,
        None => (n as f64 - p as f64).max(1.0) / resid.norm_squared().max(1e-12),
    };
    let mut tau_theta = spec.fixed.map_or(1.0, |f| f.tau_theta);

    let mut rec = Recorder::new(p, n, spatial);
    let mut rhs = Vec::with_capacity(n + p);
    for it in 0..spec.mcmc.n_iter {
        let quad = match &mut joint {
            Joint::Lm => {
                let mut prec = &xtx * tau_e;
                for k in 0..p {
                    prec[(k, k)] += pb;
                }
                beta = dense_draw(prec, &xty * tau_e, rng)?;
                0.0
            }
            Joint::Sparse(sj) => {
                rhs.clear();
                rhs.extend(y.iter().chain(xty.iter()).map(|v| tau_e * v));
                let (b, t) = sj.draw(x, &xtx, &rhs, pb, tau_e, tau_theta, rng)?;
                beta = b;
                theta = t;
                sj.q.quad_form(theta.as_slice())
            }
            Joint::Dense(dj) => {
                let d = dj.basis.ncols();
                let mut prec = DMatrix::zeros(p + d, p + d);
                let mut top = &xtx * tau_e;
                for k in 0..p {
                    top[(k, k)] += pb;
                }
                prec.view_mut((0, 0), (p, p)).copy_from(&top);
                prec.view_mut((0, p), (p, d)).copy_from(&(&dj.xtb * tau_e));
                prec.view_mut((p, 0), (d, p)).copy_from(&(dj.xtb.transpose() * tau_e));
                prec.view_mut((p, p), (d, d)).copy_from(&(&dj.btb * tau_e + dj.prior * tau_theta));
                let mut rhs = DVector::zeros(p + d);
                rhs.rows_mut(0, p).copy_from(&(&xty * tau_e));
                rhs.rows_mut(p, d).copy_from(&(&dj.bty * tau_e));
                let draw = dense_draw(prec, rhs, rng)?;
                beta = draw.rows(0, p).into_owned();
                let t2 = draw.rows(p, d).into_owned();
                theta = dj.basis * &t2;
                (t2.transpose() * dj.prior * &t2)[(0, 0)]
            }
        };
        check_finite(beta.as_slice(), "beta", it)?;
        check_finite(theta.as_slice(), "theta", it)?;
        if spec.fixed.is_none() {
            let rss = (&y - x * &beta - &theta).norm_squared();
            tau_e = gamma_draw(rng, a0 + n as f64 / 2.0, b0 + rss / 2.0)?;
            if spatial {
                tau_theta = gamma_draw(rng, a0 + rank as f64 / 2.0, b0 + quad.max(0.0) / 2.0)?;
            }
            check_finite(&[tau_e, tau_theta], "precision", it)?;
        }
        if spec.mcmc.keeps(it) {
            rec.beta.push(beta.as_slice());
            rec.tau_e.push(tau_e);
            if spatial {
                rec.theta.push(theta.as_slice());
                rec.tau_theta.push(tau_theta);
            }
        }
    }
    debug_assert_eq!(spec.family, Family::Gaussian);
    Ok(rec.finish(input, spec))
}

/// Draw from `N(prec⁻¹ rhs, prec)`.
pub(super) fn dense_draw(prec: DMatrix<f64>, rhs: DVector<f64>, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
    let dim = rhs.len();
    let chol = prec
        .cholesky()
        .ok_or_else(|| SpockError::CholeskyFailure(format!("joint precision of dimension {dim} is not positive definite")))?;
    let mean = chol.solve(&rhs);
    let z = DVector::from_vec(normals(rng, dim));
    let dev = chol
        .l()
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| SpockError::CholeskyFailure("zero pivot in triangular solve".into()))?;
    Ok(mean + dev)
}

impl<'a> SparseJoint<'a> {
    /// Joint precision over `(θ, β)`: θ in reverse Cuthill–McKee order
    /// followed by the `p` dense β rows.
    fn new(q: &'a SparsePrecision<f64>, groups: &'a [Vec<usize>], x: &DMatrix<f64>) -> Self {
        let (n, p) = x.shape();
        let mut nb: Vec<Vec<usize>> = q.pattern();
        for list in nb.iter_mut() {
            list.extend(n..n + p);
        }
        for k in 0..p {
            nb.push((0..n + p).filter(|&j| j != n + k).collect());
        }
        let mut order = reverse_cuthill_mckee(&q.pattern());
        order.extend(n..n + p);
        let chol = SparseCholesky::with_order(&nb, order);

        let diag_slots = (0..n).map(|i| chol.slot(i, i)).collect();
        let off_slots = (0..n)
            .flat_map(|i| q.row(i).iter().filter(move |&&(j, _)| j < i).map(move |&(j, v)| (i, j, v)))
            .map(|(i, j, v)| (chol.slot(i, j), v))
            .collect();
        let xb_slots = (0..n).flat_map(|i| (0..p).map(move |k| (i, k))).map(|(i, k)| chol.slot(i, n + k)).collect();
        let bb_slots = (0..p).flat_map(|k| (0..=k).map(move |l| (k, l))).map(|(k, l)| (k, l, chol.slot(n + k, n + l))).collect();

        // Rows of L⁻¹Aᵀ that can be nonzero for each group: the group's own
        // block when it is contiguous in factor order and later θ rows never
        // reach back into it, plus the β rows. Otherwise everything from the
        // group's first row on.
        let env = chol.envelope();
        let pos = chol.position();
        let group_rows = groups
            .iter()
            .map(|g| {
                let lo = g.iter().map(|&i| pos[i]).min().unwrap();
                let hi = g.iter().map(|&i| pos[i]).max().unwrap();
                let sealed = hi - lo + 1 == g.len() && (hi + 1..n).all(|r| env.first(r) > hi);
                if sealed {
                    (lo..=hi).chain(n..n + p).collect()
                } else {
                    (lo..n + p).collect()
                }
            })
            .collect();
        Self { q, groups, chol, diag_slots, off_slots, xb_slots, bb_slots, group_rows }
    }

    #[allow(clippy::too_many_arguments)]
    fn draw(
        &mut self,
        x: &DMatrix<f64>,
        xtx: &DMatrix<f64>,
        rhs: &[f64],
        pb: f64,
        tau_e: f64,
        tau_theta: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let (n, p) = x.shape();
        let q = self.q;
        let (diag, off, xb, bb) = (&self.diag_slots, &self.off_slots, &self.xb_slots, &self.bb_slots);
        self.chol.load_and_factor(|vals| {
            for (i, &s) in diag.iter().enumerate() {
                vals[s] = tau_theta * q.diag(i) + tau_e;
            }
            for &(s, v) in off.iter() {
                vals[s] = tau_theta * v;
            }
            for i in 0..n {
                for k in 0..p {
                    vals[xb[i * p + k]] = tau_e * x[(i, k)];
                }
            }
            for &(k, l, s) in bb.iter() {
                vals[s] = tau_e * xtx[(k, l)] + if k == l { pb } else { 0.0 };
            }
        })?;
        // u = L⁻¹b + z gives x = L⁻ᵀu ~ N(J⁻¹b, J⁻¹).
        let mut u = self.chol.forward(rhs);
        for (ui, z) in u.iter_mut().zip(normals(rng, n + p)) {
            *ui += z;
        }
        if !self.groups.is_empty() {
            self.constrain(&mut u)?;
        }
        let state = self.chol.backward(&u);
        let mut theta = DVector::from_column_slice(&state[..n]);
        // Remove roundoff left in the group sums.
        for g in self.groups {
            let mean = g.iter().map(|&i| theta[i]).sum::<f64>() / g.len() as f64;
            for &i in g {
                theta[i] -= mean;
            }
        }
        Ok((DVector::from_column_slice(&state[n..]), theta))
    }

    /// Conditions on `Ax = 0` (`A` = group indicator rows) in whitened
    /// coordinates. With `V = L⁻¹Aᵀ`, `Ax = Vᵀu` and `J⁻¹Aᵀ = L⁻ᵀV`, so
    /// kriging reduces to `u ← u − V(VᵀV)⁻¹Vᵀu`.
    fn constrain(&self, u: &mut [f64]) -> Result<()> {
        let k = self.groups.len();
        let dim = u.len();
        let pos = self.chol.position();
        let mut v: Vec<Vec<f64>> = Vec::with_capacity(k);
        for (g, rows) in self.groups.iter().zip(&self.group_rows) {
            let mut col = vec![0.0; dim];
            for &i in g {
                col[pos[i]] = 1.0;
            }
            self.chol.envelope().solve_lower_rows(&mut col, rows.iter().copied());
            v.push(col);
        }
        let mut s = DMatrix::zeros(k, k);
        let mut vu = DVector::zeros(k);
        for c in 0..k {
            let rows = &self.group_rows[c];
            vu[c] = rows.iter().map(|&r| v[c][r] * u[r]).sum();
            for d in 0..=c {
                let dot: f64 = rows.iter().map(|&r| v[c][r] * v[d][r]).sum();
                s[(c, d)] = dot;
                s[(d, c)] = dot;
            }
        }
        let w = s
            .cholesky()
            .ok_or_else(|| SpockError::SingularCovariance("constraint covariance is singular".into()))?
            .solve(&vu);
        for c in 0..k {
            for &r in &self.group_rows[c] {
                u[r] -= w[c] * v[c][r];
            }
        }
        Ok(())
    }
}
