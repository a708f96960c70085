//! Particle-learning filter for the online iHMM and its robust variants.
//!
//! Each particle carries the structural statistics of the HDP prior, one
//! Gaussian belief per state slot, the state it currently occupies, a log
//! weight and its own random stream. A tick (or a batch of ticks for the
//! batched variant) runs in three phases: score every candidate next state in
//! parallel, reweight and optionally resample at a barrier, then propagate
//! each particle in parallel.

mod engine;
mod particle;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hdp::{HdpHyper, DEFAULT_MAX_STATES, DEFAULT_TAU_N};
use crate::rng::{log_sum_exp, RngStream};

pub use engine::{run_stream, Diagnostics, Engine, OnlineEngine, RunOutput};
pub use particle::Particle;

/// Which of the three online models to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Online iHMM with conjugate updates.
    Plain,
    /// Weighted-likelihood emission updates, unweighted state scoring.
    Wolf,
    /// Batched robust iHMM: weighted scores over a look-ahead batch.
    Batched,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Wolf => "wolf",
            Variant::Batched => "batched",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Variant::Plain),
            "wolf" => Ok(Variant::Wolf),
            "batched" | "br" => Ok(Variant::Batched),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleScheme {
    #[default]
    Multinomial,
    Systematic,
}

/// Whether `α̂`, `γ̂`, `β̂` are learned or held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum StructuralMode {
    #[default]
    Sampled,
    /// Fixed `α̂`, initial `β̂ = (split, 1 - split)` and every new state taking
    /// the fraction `split` of the remaining stick.
    Frozen { alpha: f64, split: f64 },
}

fn default_particles() -> usize {
    100
}
fn default_batch() -> usize {
    1
}
fn default_c2() -> f64 {
    4.0
}
fn default_max_states() -> usize {
    DEFAULT_MAX_STATES
}
fn default_tau_n() -> usize {
    DEFAULT_TAU_N
}
fn default_one() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub variant: Variant,
    #[serde(default = "default_particles")]
    pub num_particles: usize,
    /// Resample when the ESS falls below this value; 0 disables resampling.
    #[serde(default)]
    pub ess_threshold: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Squared IMQ scale `c²`.
    #[serde(default = "default_c2")]
    pub imq_scale_sq: f64,
    #[serde(default = "default_max_states")]
    pub max_states: usize,
    #[serde(default = "default_tau_n")]
    pub tau_n: usize,
    /// Prior mean of every state's parameters; `None` means zeros.
    #[serde(default)]
    pub mu0: Option<Vec<f64>>,
    #[serde(default = "default_one")]
    pub sigma0_sq: f64,
    /// Std of the jitter `N(0, s² I)` added to `mu0` when state slots are
    /// initialised. 0 gives every slot the exact prior mean.
    #[serde(default = "default_one")]
    pub init_mean_scale: f64,
    /// Observation noise variance; `R = obs_noise * I`.
    #[serde(default = "default_one")]
    pub obs_noise: f64,
    #[serde(default)]
    pub hyper: HdpHyper,
    #[serde(default)]
    pub resampling: ResampleScheme,
    #[serde(default)]
    pub structural: StructuralMode,
    /// Free a slot by pruning when the state capacity is reached. When off, a
    /// full particle simply stops proposing new states.
    #[serde(default = "default_true")]
    pub prune: bool,
    #[serde(default)]
    pub seed: u64,
}

impl FilterConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            num_particles: default_particles(),
            ess_threshold: 0.0,
            batch_size: 1,
            imq_scale_sq: default_c2(),
            max_states: DEFAULT_MAX_STATES,
            tau_n: DEFAULT_TAU_N,
            mu0: None,
            sigma0_sq: 1.0,
            init_mean_scale: 1.0,
            obs_noise: 1.0,
            hyper: HdpHyper::default(),
            resampling: ResampleScheme::Multinomial,
            structural: StructuralMode::Sampled,
            prune: true,
            seed: 0,
        }
    }

    /// Batch size actually used: 1 unless the variant is batched.
    pub fn effective_batch_size(&self) -> usize {
        match self.variant {
            Variant::Batched => self.batch_size,
            _ => 1,
        }
    }

    /// Check invariants. Returns warnings for settings that are overridden.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_particles == 0 {
            return bad("num_particles must be at least 1".into());
        }
        if !(self.ess_threshold >= 0.0 && self.ess_threshold <= self.num_particles as f64) {
            return bad(format!(
                "ess_threshold must lie in [0, num_particles], got {}",
                self.ess_threshold
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.variant != Variant::Batched && self.batch_size != 1 {
            warnings.push(format!(
                "batch_size {} ignored for the {} variant; using 1",
                self.batch_size,
                self.variant.name()
            ));
        }
        if !(self.imq_scale_sq > 0.0 && self.imq_scale_sq.is_finite()) {
            return bad(format!("imq_scale_sq must be positive, got {}", self.imq_scale_sq));
        }
        if self.max_states == 0 {
            return bad("max_states must be at least 1".into());
        }
        if self.tau_n == 0 {
            return bad("tau_n must be at least 1".into());
        }
        for (name, v) in [("sigma0_sq", self.sigma0_sq), ("obs_noise", self.obs_noise)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.init_mean_scale >= 0.0 && self.init_mean_scale.is_finite()) {
            return bad(format!("init_mean_scale must be non-negative, got {}", self.init_mean_scale));
        }
        if let Some(mu0) = &self.mu0 {
            if mu0.is_empty() || mu0.iter().any(|v| !v.is_finite()) {
                return bad("mu0 must be a non-empty finite vector".into());
            }
        }
        self.hyper.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let StructuralMode::Frozen { alpha, split } = self.structural {
            if !(alpha > 0.0) || !(split > 0.0 && split < 1.0) {
                return bad(format!("frozen structure needs alpha > 0 and split in (0, 1), got {alpha}, {split}"));
            }
        }
        Ok(warnings)
    }
}

/// Per-tick output of the filter. Predictive fields use only information
/// available before the tick's observation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub tick: usize,
    pub predictive_mean: DVector<f64>,
    pub predictive_var: DMatrix<f64>,
    /// Weighted mode of the particles' state labels.
    pub map_state: u64,
    /// State label of each particle after the tick.
    pub per_particle_states: Vec<u64>,
    pub ess: f64,
    pub resampled: bool,
    /// Weighted average number of active states.
    pub num_active_states: f64,
}

/// Normalise log weights in place (max-subtraction). Errors when every weight
/// is `-inf` or any is NaN.
pub fn normalize_log_weights(log_weights: &mut [f64]) -> Result<()> {
    if log_weights.iter().any(|w| w.is_nan()) {
        return Err(Error::numerical("NaN particle weight"));
    }
    let lse = log_sum_exp(log_weights);
    if !lse.is_finite() {
        return Err(Error::numerical("all particle weights vanished"));
    }
    for w in log_weights.iter_mut() {
        *w -= lse;
    }
    Ok(())
}

/// Effective sample size `1 / Σ ω²` of unnormalised log weights.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    let mut w = log_weights.to_vec();
    normalize_log_weights(&mut w)?;
    let sum_sq: f64 = w.iter().map(|l| (2.0 * l).exp()).sum();
    Ok(1.0 / sum_sq)
}

/// Ancestor indices drawn by weight. Multinomial uses sorted uniforms and one
/// merge pass; systematic uses a single offset.
pub fn resample_indices(
    log_weights: &[f64],
    n: usize,
    scheme: ResampleScheme,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    let mut w = log_weights.to_vec();
    normalize_log_weights(&mut w)?;
    let mut cdf = Vec::with_capacity(w.len());
    let mut acc = 0.0;
    for l in &w {
        acc += l.exp();
        cdf.push(acc);
    }
    let total = acc;
    let positions: Vec<f64> = match scheme {
        ResampleScheme::Multinomial => {
            // sorted uniforms via normalised exponential spacings
            let mut e: Vec<f64> = (0..=n).map(|_| -rng.uniform().ln()).collect();
            let s: f64 = e.iter().sum();
            let mut run = 0.0;
            for x in e.iter_mut() {
                run += *x;
                *x = run / s;
            }
            e.truncate(n);
            e.into_iter().map(|u| u * total).collect()
        }
        ResampleScheme::Systematic => {
            let u0 = rng.uniform();
            (0..n).map(|i| (i as f64 + u0) / n as f64 * total).collect()
        }
    };
    let last_positive = w
        .iter()
        .rposition(|&l| l > f64::NEG_INFINITY)
        .expect("normalised weights have a finite entry");
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for p in positions {
        while j < last_positive && (cdf[j] <= p || w[j] == f64::NEG_INFINITY) {
            j += 1;
        }
        out.push(j);
    }
    Ok(out)
}

/// Resample particles by weight. Copies reset to weight `1/N` and each gets a
/// fresh child stream keyed by (ancestor, tick, slot).
pub fn resample_multinomial(
    particles: &[Particle],
    rng: &mut RngStream,
    tick: u64,
) -> Result<Vec<Particle>> {
    let lw: Vec<f64> = particles.iter().map(|p| p.log_weight).collect();
    let n = particles.len();
    let ancestors = resample_indices(&lw, n, ResampleScheme::Multinomial, rng)?;
    Ok(reseat(particles, &ancestors, tick))
}

pub(crate) fn reseat(particles: &[Particle], ancestors: &[usize], tick: u64) -> Vec<Particle> {
    let n = ancestors.len();
    let reset = -(n as f64).ln();
    ancestors
        .iter()
        .enumerate()
        .map(|(slot, &a)| {
            let mut p = particles[a].clone();
            p.rng = particles[a].rng.child(a as u64, tick, slot as u64);
            p.log_weight = reset;
            p
        })
        .collect()
}

/// Weighted mode of labels, ties to the lower label.
pub(crate) fn weighted_mode(labels: &[u64], weights: &[f64]) -> u64 {
    let mut acc: std::collections::BTreeMap<u64, f64> = std::collections::BTreeMap::new();
    for (&l, &w) in labels.iter().zip(weights) {
        *acc.entry(l).or_insert(0.0) += w;
    }
    let mut best = (0u64, f64::NEG_INFINITY);
    for (l, w) in acc {
        if w > best.1 {
            best = (l, w);
        }
    }
    best.0
}
