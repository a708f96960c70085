//! Linear-Gaussian emission beliefs.
//!
//! Each latent state carries a Gaussian belief `N(mean, cov)` over its
//! regression parameters. Observations follow `y = F θ + e` with `e ~ N(0, R)`.
//! Updates are the usual conjugate recursion, or the weighted-likelihood
//! variant where the observation noise is inflated to `R / w²`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Belief over the emission parameters of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::shape(format!(
                "belief covariance is {}x{}, mean has length {}",
                cov.nrows(),
                cov.ncols(),
                mean.len()
            )));
        }
        Ok(Self { mean, cov })
    }

    /// Isotropic belief `N(mean, scale * I)`.
    pub fn isotropic(mean: DVector<f64>, scale: f64) -> Self {
        let m = mean.len();
        Self {
            mean,
            cov: DMatrix::identity(m, m) * scale,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// One-step (or multi-step) posterior predictive `N(y_hat, s_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveGaussian {
    pub y_hat: DVector<f64>,
    pub s_cov: DMatrix<f64>,
}

/// Feature matrix `F_t` (d x m) and observation noise `R_t` (d x d) at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionContext {
    pub feature: DMatrix<f64>,
    pub obs_noise: DMatrix<f64>,
}

impl EmissionContext {
    pub fn new(feature: DMatrix<f64>, obs_noise: DMatrix<f64>) -> Result<Self> {
        let d = feature.nrows();
        if obs_noise.nrows() != d || obs_noise.ncols() != d {
            return Err(Error::shape(format!(
                "feature matrix has {d} rows but noise is {}x{}",
                obs_noise.nrows(),
                obs_noise.ncols()
            )));
        }
        if feature.iter().chain(obs_noise.iter()).any(|v| !v.is_finite()) {
            return Err(Error::param("emission context has non-finite entries"));
        }
        Ok(Self { feature, obs_noise })
    }

    /// Mean-only model: `F = I_d`.
    pub fn identity(d: usize, noise_var: f64) -> Self {
        Self {
            feature: DMatrix::identity(d, d),
            obs_noise: DMatrix::identity(d, d) * noise_var,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.feature.nrows()
    }

    pub fn param_dim(&self) -> usize {
        self.feature.ncols()
    }
}

fn check_dims(belief: &GaussianBelief, ctx: &EmissionContext) -> Result<()> {
    if ctx.feature.ncols() != belief.dim() {
        return Err(Error::shape(format!(
            "feature matrix has {} columns, belief has dimension {}",
            ctx.feature.ncols(),
            belief.dim()
        )));
    }
    if ctx.obs_noise.nrows() != ctx.feature.nrows() || !ctx.obs_noise.is_square() {
        return Err(Error::shape("observation noise does not match feature rows"));
    }
    Ok(())
}

fn check_obs(y: &DVector<f64>, d: usize) -> Result<()> {
    if y.len() != d {
        return Err(Error::shape(format!(
            "observation has length {}, expected {d}",
            y.len()
        )));
    }
    Ok(())
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Cholesky factor of an SPD matrix. One retry with a jitter of
/// `1e-9 * trace / d` on the diagonal, then a numerical error.
pub(crate) fn cholesky(s: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(s.clone()) {
        return Ok(c);
    }
    let d = s.nrows().max(1);
    let jitter = 1e-9 * s.trace().abs() / d as f64;
    let mut js = s.clone();
    for i in 0..s.nrows() {
        js[(i, i)] += jitter.max(f64::MIN_POSITIVE);
    }
    Cholesky::new(js).ok_or_else(|| Error::numerical("matrix is not positive definite"))
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Posterior predictive `y_hat = F mean`, `S = F cov Fᵀ + R`.
pub fn predict(belief: &GaussianBelief, ctx: &EmissionContext) -> Result<PredictiveGaussian> {
    predict_multistep(belief, ctx, &ctx.obs_noise)
}

/// b-step-ahead predictive from a frozen belief. `accumulated_noise` is the sum
/// of the noise covariances of the b ticks.
pub fn predict_multistep(
    belief: &GaussianBelief,
    ctx_future: &EmissionContext,
    accumulated_noise: &DMatrix<f64>,
) -> Result<PredictiveGaussian> {
    check_dims(belief, ctx_future)?;
    if accumulated_noise.shape() != ctx_future.obs_noise.shape() {
        return Err(Error::shape("accumulated noise does not match observation dimension"));
    }
    let f = &ctx_future.feature;
    if f.nrows() == 1 {
        let (y_hat, fsf) = scalar_forms(belief, f);
        return Ok(PredictiveGaussian {
            y_hat: DVector::from_element(1, y_hat),
            s_cov: DMatrix::from_element(1, 1, fsf + accumulated_noise[(0, 0)]),
        });
    }
    let y_hat = f * &belief.mean;
    let mut s_cov = f * &belief.cov * f.transpose() + accumulated_noise;
    symmetrize(&mut s_cov);
    Ok(PredictiveGaussian { y_hat, s_cov })
}

/// `(f μ, f Σ fᵀ)` for a single-row feature matrix, without allocating.
fn scalar_forms(belief: &GaussianBelief, f: &DMatrix<f64>) -> (f64, f64) {
    let m = belief.dim();
    let mut y_hat = 0.0;
    let mut fsf = 0.0;
    for j in 0..m {
        let fj = f[(0, j)];
        y_hat += fj * belief.mean[j];
        if fj == 0.0 {
            continue;
        }
        let col = belief.cov.column(j);
        let mut acc = 0.0;
        for i in 0..m {
            acc += f[(0, i)] * col[i];
        }
        fsf += acc * fj;
    }
    (y_hat, fsf)
}

/// Scalar-observation update: rank-one downdate `Σ - g gᵀ / s` with `g = Σ fᵀ`.
fn scalar_update(belief: &GaussianBelief, f: &DMatrix<f64>, noise: f64, y: f64) -> Result<GaussianBelief> {
    let m = belief.dim();
    let g = &belief.cov * f.row(0).transpose();
    let (y_hat, fsf) = scalar_forms(belief, f);
    let s = fsf + noise;
    if !(s > 0.0) {
        return Err(Error::numerical(format!("non-positive innovation variance {s}")));
    }
    let mean = &belief.mean + &g * ((y - y_hat) / s);
    let mut cov = belief.cov.clone();
    for j in 0..m {
        for i in 0..m {
            cov[(i, j)] -= g[i] * g[j] / s;
        }
    }
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite belief after update"));
    }
    Ok(GaussianBelief { mean, cov })
}

/// Conjugate update with an explicit effective noise, Joseph form.
fn update_with_noise(
    belief: &GaussianBelief,
    f: &DMatrix<f64>,
    noise: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<GaussianBelief> {
    if f.nrows() == 1 {
        return scalar_update(belief, f, noise[(0, 0)], y[0]);
    }
    let fs = f * &belief.cov; // F Σ
    let mut s = &fs * f.transpose() + noise;
    symmetrize(&mut s);
    let chol = cholesky(&s)?;
    // Kᵀ = S⁻¹ F Σ
    let k = chol.solve(&fs).transpose();
    let resid = y - f * &belief.mean;
    let mean = &belief.mean + &k * resid;
    let m = belief.dim();
    let ikf = DMatrix::identity(m, m) - &k * f;
    let mut cov = &ikf * &belief.cov * ikf.transpose() + &k * noise * k.transpose();
    symmetrize(&mut cov);
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite belief after update"));
    }
    Ok(GaussianBelief { mean, cov })
}

/// Standard conjugate (Kalman) update of a belief with one observation.
pub fn kf_update(
    belief: &GaussianBelief,
    ctx: &EmissionContext,
    y: &DVector<f64>,
) -> Result<GaussianBelief> {
    check_dims(belief, ctx)?;
    check_obs(y, ctx.obs_dim())?;
    update_with_noise(belief, &ctx.feature, &ctx.obs_noise, y)
}

/// Squared Mahalanobis norm `rᵀ R⁻¹ r`.
pub fn mahalanobis_sq(r: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    if cov.nrows() != r.len() || !cov.is_square() {
        return Err(Error::shape("residual and covariance dimensions differ"));
    }
    if r.len() == 1 {
        return Ok(r[0] * r[0] / cov[(0, 0)]);
    }
    let chol = cholesky(cov)?;
    let z = chol.l_dirty().solve_lower_triangular(r).ok_or_else(|| Error::numerical("singular factor"))?;
    Ok(z.norm_squared())
}

/// IMQ weight `W² = 1 / (1 + c⁻² (y - ŷ)ᵀ R⁻¹ (y - ŷ))`.
pub fn imq_weight_sq(
    y: &DVector<f64>,
    y_hat: &DVector<f64>,
    r: &DMatrix<f64>,
    c: f64,
) -> Result<f64> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::param(format!("IMQ scale must be positive, got {c}")));
    }
    imq_weight_sq_c2(y, y_hat, r, c * c)
}

/// [`imq_weight_sq`] taking the squared scale `c²` directly.
pub fn imq_weight_sq_c2(
    y: &DVector<f64>,
    y_hat: &DVector<f64>,
    r: &DMatrix<f64>,
    c_sq: f64,
) -> Result<f64> {
    if !(c_sq > 0.0 && c_sq.is_finite()) {
        return Err(Error::param(format!("IMQ squared scale must be positive, got {c_sq}")));
    }
    if y.len() != y_hat.len() {
        return Err(Error::shape("observation and prediction lengths differ"));
    }
    let r2 = mahalanobis_sq(&(y - y_hat), r)?;
    Ok(1.0 / (1.0 + r2 / c_sq))
}

/// Weighted-likelihood update. States with history see the noise inflated to
/// `R / w_sq`; a fresh state takes the plain update.
pub fn wolf_update(
    belief: &GaussianBelief,
    ctx: &EmissionContext,
    y: &DVector<f64>,
    w_sq: f64,
    state_has_history: bool,
) -> Result<GaussianBelief> {
    if !(w_sq > 0.0 && w_sq <= 1.0) {
        return Err(Error::param(format!("weight must lie in (0, 1], got {w_sq}")));
    }
    check_dims(belief, ctx)?;
    check_obs(y, ctx.obs_dim())?;
    if state_has_history {
        let noise = &ctx.obs_noise / w_sq;
        update_with_noise(belief, &ctx.feature, &noise, y)
    } else {
        update_with_noise(belief, &ctx.feature, &ctx.obs_noise, y)
    }
}

/// Multivariate normal log-density.
pub fn gaussian_log_density(y: &DVector<f64>, pred: &PredictiveGaussian) -> Result<f64> {
    let d = pred.y_hat.len();
    check_obs(y, d)?;
    if pred.s_cov.nrows() != d || pred.s_cov.ncols() != d {
        return Err(Error::shape("predictive covariance does not match mean"));
    }
    let r = y - &pred.y_hat;
    if d == 1 {
        let s = pred.s_cov[(0, 0)];
        if !(s > 0.0) {
            return Err(Error::numerical(format!("non-positive predictive variance {s}")));
        }
        return Ok(-0.5 * (LN_2PI + s.ln() + r[0] * r[0] / s));
    }
    let chol = cholesky(&pred.s_cov)?;
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&r)
        .ok_or_else(|| Error::numerical("singular predictive covariance"))?;
    Ok(-0.5 * (d as f64 * LN_2PI + log_det(&chol) + z.norm_squared()))
}

/// `KL(N(p) || N(q))`.
pub fn kl_gaussian(p: &GaussianBelief, q: &GaussianBelief) -> Result<f64> {
    let d = p.dim();
    if q.dim() != d {
        return Err(Error::shape(format!("KL between dimensions {d} and {}", q.dim())));
    }
    let cq = cholesky(&q.cov)?;
    let cp = cholesky(&p.cov)?;
    let trace = cq.solve(&p.cov).trace();
    let dm = &q.mean - &p.mean;
    let maha = dm.dot(&cq.solve(&dm));
    let kl = 0.5 * (trace + maha - d as f64 + log_det(&cq) - log_det(&cp));
    Ok(kl.max(0.0))
}

/// Normal-inverse-gamma sufficient statistics for a scalar series with unknown
/// mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nig {
    pub mu: f64,
    pub kappa: f64,
    pub a: f64,
    pub b: f64,
}

impl Nig {
    pub fn new(mu: f64, kappa: f64, a: f64, b: f64) -> Result<Self> {
        let s = Self { mu, kappa, a, b };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.a > 0.0 && self.b > 0.0) || !self.mu.is_finite() {
            return Err(Error::param(format!("invalid NIG statistics {self:?}")));
        }
        Ok(())
    }

    /// Squared scale of the Student-t predictive.
    pub fn predictive_scale_sq(&self) -> f64 {
        self.b / self.a * (1.0 + 1.0 / self.kappa)
    }
}

/// One-observation NIG posterior update.
pub fn nig_update(stats: &Nig, y: f64) -> Result<Nig> {
    stats.validate()?;
    let k1 = stats.kappa + 1.0;
    let r = y - stats.mu;
    Ok(Nig {
        mu: (stats.kappa * stats.mu + y) / k1,
        kappa: k1,
        a: stats.a + 0.5,
        b: stats.b + stats.kappa * r * r / (2.0 * k1),
    })
}

/// Student-t predictive `t_{2a}(mu, (b/a)(1 + 1/kappa))` log-density.
pub fn nig_predictive_log_density(stats: &Nig, y: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let nu = 2.0 * stats.a;
    let s2 = stats.predictive_scale_sq();
    let z2 = (y - stats.mu).powi(2) / s2;
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu)
        - 0.5 * (nu * std::f64::consts::PI * s2).ln()
        - 0.5 * (nu + 1.0) * (z2 / nu).ln_1p()
}
