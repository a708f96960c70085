//! Forecast accuracy, segmentation scores and empirical influence sweeps.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::emission::{
    imq_weight_sq, kf_update, kl_gaussian, predict, wolf_update, EmissionContext, GaussianBelief,
};
use crate::error::{Error, Result};
use crate::filter::{FilterConfig, Particle, StructuralMode, Variant};
use crate::hdp::HdpState;
use crate::rng::normalize_log_simplex;

/// Default minimum run length for a minority run to count as a false positive.
pub const DEFAULT_RUN_THRESHOLD: usize = 5;

fn check_lengths(pred: &[DVector<f64>], truth: &[DVector<f64>]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} observations",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::shape("empty sequence"));
    }
    for (p, y) in pred.iter().zip(truth) {
        if p.len() != y.len() {
            return Err(Error::shape(format!("vector lengths {} and {}", p.len(), y.len())));
        }
    }
    Ok(())
}

fn sq_err(p: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (y - p).norm_squared()
}

pub fn rmse(pred: &[DVector<f64>], truth: &[DVector<f64>]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let total: f64 = pred.iter().zip(truth).map(|(p, y)| sq_err(p, y)).sum();
    Ok((total / pred.len() as f64).sqrt())
}

/// Mean absolute error; vector residuals contribute their L1 norm.
pub fn mae(pred: &[DVector<f64>], truth: &[DVector<f64>]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let total: f64 = pred.iter().zip(truth).map(|(p, y)| (y - p).abs().sum()).sum();
    Ok(total / pred.len() as f64)
}

/// RMSE over the trailing `window` ticks; early ticks use whatever prefix exists.
pub fn rolling_rmse(pred: &[DVector<f64>], truth: &[DVector<f64>], window: usize) -> Result<Vec<f64>> {
    if window < 1 {
        return Err(Error::param("window must be at least 1"));
    }
    check_lengths(pred, truth)?;
    let errs: Vec<f64> = pred.iter().zip(truth).map(|(p, y)| sq_err(p, y)).collect();
    // Prefix sums keep this linear and avoid drift from a running subtraction.
    let mut prefix = vec![0.0; errs.len() + 1];
    for (i, e) in errs.iter().enumerate() {
        prefix[i + 1] = prefix[i] + e;
    }
    Ok((0..errs.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(window);
            let n = (t + 1 - lo) as f64;
            ((prefix[t + 1] - prefix[lo]).max(0.0) / n).sqrt()
        })
        .collect())
}

/// Ticks `t >= 1` whose label differs from the previous one.
pub fn predicted_changepoints(states: &[u64]) -> Vec<usize> {
    (1..states.len()).filter(|&t| states[t] != states[t - 1]).collect()
}

/// Mean delay from each true changepoint to the first predicted one at or
/// after it. A true changepoint never followed by a prediction costs `T - t*`.
pub fn detection_delay(pred_states: &[u64], true_cps: &[usize]) -> Result<f64> {
    if true_cps.is_empty() {
        return Err(Error::param("detection delay needs at least one true changepoint"));
    }
    let t_len = pred_states.len();
    if let Some(&bad) = true_cps.iter().find(|&&c| c >= t_len) {
        return Err(Error::Index {
            index: bad,
            size: t_len,
        });
    }
    let cps = predicted_changepoints(pred_states);
    let total: f64 = true_cps
        .iter()
        .map(|&t_star| {
            let i = cps.partition_point(|&c| c < t_star);
            match cps.get(i) {
                Some(&c) => (c - t_star) as f64,
                None => (t_len - t_star) as f64,
            }
        })
        .sum();
    Ok(total / true_cps.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tpr: f64,
    pub ppv: f64,
    pub detection_delay: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn majority(labels: &[u64]) -> u64 {
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    let (mut best, mut best_n) = (sorted[0], 0);
    let mut i = 0;
    while i < sorted.len() {
        let j = i + sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        // Strict comparison keeps the smallest label on ties.
        if j - i > best_n {
            best = sorted[i];
            best_n = j - i;
        }
        i = j;
    }
    best
}

/// Segment-wise matching of predicted labels against true changepoints.
///
/// Each segment between consecutive true changepoints is assigned its
/// majority predicted label. A segment whose majority repeats the previous
/// segment's is a failed detection: its majority ticks are false negatives
/// instead of true positives. The remaining ticks are cut into maximal runs of
/// equal labels; runs of length at least `run_threshold` are false positives
/// and shorter ones false negatives.
pub fn state_match(true_cps: &[usize], pred_states: &[u64], run_threshold: usize) -> Result<SegmentationReport> {
    let t_len = pred_states.len();
    if t_len == 0 {
        return Err(Error::shape("empty label sequence"));
    }
    if run_threshold == 0 {
        return Err(Error::param("run threshold must be at least 1"));
    }
    if true_cps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("changepoints must be strictly increasing"));
    }
    if let Some(&bad) = true_cps.iter().find(|&&c| c == 0 || c >= t_len) {
        return Err(Error::Index {
            index: bad,
            size: t_len,
        });
    }
    let mut bounds = Vec::with_capacity(true_cps.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(true_cps);
    bounds.push(t_len);

    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    let mut prev_major: Option<u64> = None;
    for w in bounds.windows(2) {
        let seg = &pred_states[w[0]..w[1]];
        if seg.is_empty() {
            continue;
        }
        let major = majority(seg);
        let failed = prev_major == Some(major);
        let n_major = seg.iter().filter(|&&s| s == major).count() as u64;
        if failed {
            fn_ += n_major;
        } else {
            tp += n_major;
        }
        let mut j = 0;
        while j < seg.len() {
            let skip = (seg[j] == major) != failed;
            if skip {
                j += 1;
                continue;
            }
            let run = seg[j..].iter().take_while(|&&v| v == seg[j]).count();
            if run >= run_threshold {
                fp += run as u64;
            } else {
                fn_ += run as u64;
            }
            j += run;
        }
        prev_major = Some(major);
    }
    let detection_delay = if true_cps.is_empty() {
        0.0
    } else {
        detection_delay(pred_states, true_cps)?
    };
    Ok(SegmentationReport {
        tp,
        fp,
        fn_,
        tpr: ratio(tp, tp + fn_),
        ppv: ratio(tp, tp + fp),
        detection_delay,
    })
}

/// Discrete KL divergence `KL(p || q)` between probability vectors.
pub fn kl_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape(format!("KL between lengths {} and {}", p.len(), q.len())));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// KL between two joint laws over (state, Gaussian parameter) written as
/// state probabilities plus one Gaussian per state: the state KL plus the
/// state-weighted belief KLs.
pub fn joint_kl(
    p_states: &[f64],
    p_beliefs: &[GaussianBelief],
    q_states: &[f64],
    q_beliefs: &[GaussianBelief],
) -> Result<f64> {
    if p_beliefs.len() != p_states.len() || q_beliefs.len() != q_states.len() {
        return Err(Error::shape("one belief per state is required"));
    }
    let mut kl = kl_discrete(p_states, q_states)?;
    for ((&w, p), q) in p_states.iter().zip(p_beliefs).zip(q_beliefs) {
        if w > 0.0 {
            kl += w * kl_gaussian(p, q)?;
        }
    }
    Ok(kl)
}

/// Two known scalar states plus an unvisited one, seen from state 0.
///
/// Both known states carry a history of self-transitions, so their beliefs are
/// sharp and the transition predictive strongly favours staying. Offsets are
/// measured from the mean of state 0 in units of the gap between the means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PifSandbox {
    pub means: [f64; 2],
    pub state_var: f64,
    pub obs_var: f64,
    pub prior_mean: f64,
    pub prior_var: f64,
    pub self_count: u64,
    pub alpha: f64,
    pub beta: [f64; 3],
    pub imq_scale_sq: f64,
}

impl Default for PifSandbox {
    fn default() -> Self {
        Self {
            means: [0.0, 5.0],
            state_var: 0.02,
            obs_var: 1.0,
            prior_mean: 0.0,
            prior_var: 1.0,
            self_count: 50,
            alpha: 1.0,
            beta: [0.45, 0.45, 0.1],
            imq_scale_sq: 4.0,
        }
    }
}

impl PifSandbox {
    pub fn gap(&self) -> f64 {
        (self.means[1] - self.means[0]).abs()
    }

    fn config(&self, variant: Variant, batch_size: usize) -> FilterConfig {
        let mut cfg = FilterConfig::new(variant);
        cfg.num_particles = 1;
        cfg.batch_size = batch_size;
        cfg.imq_scale_sq = self.imq_scale_sq;
        cfg.mu0 = Some(vec![self.prior_mean]);
        cfg.sigma0_sq = self.prior_var;
        cfg.init_mean_scale = 0.0;
        cfg.obs_noise = self.obs_var;
        cfg.structural = StructuralMode::Frozen {
            alpha: self.alpha,
            split: 0.5,
        };
        cfg
    }

    /// The particle sitting in state 0 with both known states populated.
    pub fn particle(&self, variant: Variant, batch_size: usize) -> Result<(FilterConfig, Particle)> {
        let cfg = self.config(variant, batch_size);
        let mut p = Particle::init(&cfg, 1, 0, 1)?;
        let mut hdp = HdpState::new(self.alpha, 1.0, self.beta.to_vec(), cfg.max_states, cfg.hyper)?;
        for t in 0..self.self_count {
            hdp.update_counts_with_split(0, 0, 0.5, t)?;
            hdp.update_counts_with_split(1, 1, 0.5, t)?;
        }
        p.hdp = hdp;
        for (slot, &m) in self.means.iter().enumerate() {
            p.beliefs[slot] = Arc::new(GaussianBelief::isotropic(DVector::from_element(1, m), self.state_var));
        }
        p.current_state = 0;
        Ok((cfg, p))
    }

    /// Observations fed to the variant: the single contaminated point, or for
    /// batched runs the contaminated point followed by clean ones.
    fn observations(&self, batch_size: usize, offset: f64) -> Vec<DVector<f64>> {
        let clean = self.means[0];
        let mut ys = vec![DVector::from_element(1, clean); batch_size.max(1)];
        ys[0][0] = clean + offset * self.gap();
        ys
    }

    /// Normalized next-state probabilities after seeing the observations at `offset`.
    pub fn next_state_probs(&self, variant: Variant, batch_size: usize, offset: f64) -> Result<Vec<f64>> {
        let b = if variant == Variant::Batched { batch_size.max(1) } else { 1 };
        let (cfg, p) = self.particle(variant, b)?;
        let ys = self.observations(b, offset);
        let ctxs = vec![EmissionContext::identity(1, self.obs_var); b];
        let mut scores = Vec::with_capacity(p.num_candidates());
        for cand in 0..p.num_candidates() {
            scores.push(match variant {
                Variant::Batched => p.batched_state_log_score(&cfg, cand, &ctxs, &ys)?,
                _ => p.state_log_score(cand, &ctxs[0], &ys[0])?,
            });
        }
        Ok(normalize_log_simplex(&scores))
    }
}

/// State-space influence: `KL(clean || contaminated)` between next-state
/// distributions for each offset.
pub fn empirical_state_pif(
    sandbox: &PifSandbox,
    variant: Variant,
    batch_size: usize,
    offsets: &[f64],
) -> Result<Vec<f64>> {
    let clean = sandbox.next_state_probs(variant, batch_size, 0.0)?;
    offsets
        .iter()
        .map(|&o| kl_discrete(&clean, &sandbox.next_state_probs(variant, batch_size, o)?))
        .collect()
}

/// Belief update used by [`empirical_obs_pif`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObsUpdate {
    Kalman,
    Wolf { c: f64 },
}

/// Observation-space influence for a scalar belief: `KL` between the belief
/// updated with `clean_y` and the one updated with each contaminated value.
pub fn empirical_obs_pif(
    belief: &GaussianBelief,
    obs_var: f64,
    clean_y: f64,
    grid: &[f64],
    update: ObsUpdate,
) -> Result<Vec<f64>> {
    if belief.dim() != 1 {
        return Err(Error::shape("observation-space sweep is scalar"));
    }
    let ctx = EmissionContext::identity(1, obs_var);
    let step = |y: f64| -> Result<GaussianBelief> {
        let y = DVector::from_element(1, y);
        match update {
            ObsUpdate::Kalman => kf_update(belief, &ctx, &y),
            ObsUpdate::Wolf { c } => {
                let pred = predict(belief, &ctx)?;
                let w = imq_weight_sq(&y, &pred.y_hat, &ctx.obs_noise, c)?;
                wolf_update(belief, &ctx, &y, w, true)
            }
        }
    };
    let clean = step(clean_y)?;
    grid.iter().map(|&y| kl_gaussian(&clean, &step(y)?)).collect()
}
