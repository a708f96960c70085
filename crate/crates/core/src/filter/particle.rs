use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{FilterConfig, StructuralMode, Variant};
use crate::emission::{
    gaussian_log_density, imq_weight_sq_c2, kf_update, predict, predict_multistep, wolf_update,
    EmissionContext, GaussianBelief,
};
use crate::error::{Error, Result};
use crate::hdp::HdpState;
use crate::rng::{log_sum_exp, sample_log_categorical, RngStream};

/// One particle of the learning filter.
#[derive(Debug, Clone)]
pub struct Particle {
    pub hdp: HdpState,
    /// One belief per state slot, `max_states` long. Slot `L` is the prior of
    /// the next new state.
    pub beliefs: Vec<Arc<GaussianBelief>>,
    pub current_state: usize,
    pub log_weight: f64,
    pub rng: RngStream,
}

/// Scores of every candidate next state, computed before any update.
#[derive(Debug, Clone)]
pub(crate) struct Proposal {
    pub log_scores: Vec<f64>,
    pub log_norm: f64,
    /// Predictive of the current state for each tick of the batch.
    pub pred_mean: Vec<DVector<f64>>,
    pub pred_cov: Vec<DMatrix<f64>>,
    /// `[candidate][tick]` IMQ weights (batched variant only).
    pub weights_sq: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct StepStats {
    pub intra_batch_structural: u64,
    pub intra_batch_nonzero_diagonals: u64,
}

fn prior_belief(cfg: &FilterConfig, m: usize, rng: &mut RngStream) -> GaussianBelief {
    let mut mean = match &cfg.mu0 {
        Some(mu0) => DVector::from_column_slice(mu0),
        None => DVector::zeros(m),
    };
    if cfg.init_mean_scale > 0.0 {
        for v in mean.iter_mut() {
            *v += cfg.init_mean_scale * rng.standard_normal();
        }
    }
    GaussianBelief::isotropic(mean, cfg.sigma0_sq)
}

impl Particle {
    /// Fresh particle with stream `(seed, index)`.
    pub fn init(cfg: &FilterConfig, param_dim: usize, index: usize, num_particles: usize) -> Result<Self> {
        let mut rng = RngStream::new(cfg.seed, index as u64);
        let hdp = match cfg.structural {
            StructuralMode::Sampled => HdpState::sample_prior(&mut rng, cfg.max_states, cfg.hyper)?,
            StructuralMode::Frozen { alpha, split } => {
                HdpState::new(alpha, 1.0, vec![split, 1.0 - split], cfg.max_states, cfg.hyper)?
            }
        };
        let beliefs = (0..cfg.max_states)
            .map(|_| Arc::new(prior_belief(cfg, param_dim, &mut rng)))
            .collect();
        Ok(Self {
            hdp,
            beliefs,
            current_state: 0,
            log_weight: -(num_particles as f64).ln(),
            rng,
        })
    }

    pub fn current_label(&self) -> u64 {
        self.hdp.label(self.current_state)
    }

    /// Number of candidate next states: the active ones plus a new one unless
    /// the particle is at capacity.
    pub fn num_candidates(&self) -> usize {
        if self.hdp.at_capacity() {
            self.hdp.num_states()
        } else {
            self.hdp.num_states() + 1
        }
    }

    /// Batched log score of `candidate`: log transition predictive plus the
    /// IMQ-weighted multi-step log predictive densities of the batch, all from
    /// the beliefs frozen at the start of the batch.
    pub fn batched_state_log_score(
        &self,
        cfg: &FilterConfig,
        candidate: usize,
        batch_ctx: &[EmissionContext],
        batch_y: &[DVector<f64>],
    ) -> Result<f64> {
        if candidate >= self.num_candidates() {
            return Err(Error::Index {
                index: candidate,
                size: self.num_candidates(),
            });
        }
        let log_trans = self.hdp.transition_predictive(self.current_state, candidate)?.ln();
        let (score, _) = self.weighted_batch_loglik(cfg, candidate, batch_ctx, batch_y)?;
        Ok(log_trans + score)
    }

    /// Unweighted one-tick log score of `candidate`: log transition predictive
    /// plus the log predictive density of `y` under that state's belief.
    pub fn state_log_score(&self, candidate: usize, ctx: &EmissionContext, y: &DVector<f64>) -> Result<f64> {
        if candidate >= self.num_candidates() {
            return Err(Error::Index {
                index: candidate,
                size: self.num_candidates(),
            });
        }
        let log_trans = self.hdp.transition_predictive(self.current_state, candidate)?.ln();
        Ok(log_trans + gaussian_log_density(y, &predict(&self.beliefs[candidate], ctx)?)?)
    }

    fn weighted_batch_loglik(
        &self,
        cfg: &FilterConfig,
        candidate: usize,
        batch_ctx: &[EmissionContext],
        batch_y: &[DVector<f64>],
    ) -> Result<(f64, Vec<f64>)> {
        let belief = &self.beliefs[candidate];
        let mut acc_noise = DMatrix::zeros(batch_ctx[0].obs_dim(), batch_ctx[0].obs_dim());
        let mut total = 0.0;
        let mut weights = Vec::with_capacity(batch_ctx.len());
        for (ctx, y) in batch_ctx.iter().zip(batch_y) {
            acc_noise += &ctx.obs_noise;
            let pred = predict_multistep(belief, ctx, &acc_noise)?;
            let w = imq_weight_sq_c2(y, &pred.y_hat, &ctx.obs_noise, cfg.imq_scale_sq)?;
            total += w * gaussian_log_density(y, &pred)?;
            weights.push(w);
        }
        Ok((total, weights))
    }

    pub(crate) fn score_single(&self, ctx: &EmissionContext, y: &DVector<f64>) -> Result<Proposal> {
        let trans = self.hdp.transition_log_row(self.current_state)?;
        let k = self.num_candidates();
        let mut log_scores = Vec::with_capacity(k);
        for (cand, lt) in trans.iter().enumerate().take(k) {
            let pred = predict(&self.beliefs[cand], ctx)?;
            log_scores.push(lt + gaussian_log_density(y, &pred)?);
        }
        let cur = predict(&self.beliefs[self.current_state], ctx)?;
        Ok(Proposal {
            log_norm: log_sum_exp(&log_scores),
            log_scores,
            pred_mean: vec![cur.y_hat],
            pred_cov: vec![cur.s_cov],
            weights_sq: Vec::new(),
        })
    }

    pub(crate) fn score_batch(
        &self,
        cfg: &FilterConfig,
        batch_ctx: &[EmissionContext],
        batch_y: &[DVector<f64>],
    ) -> Result<Proposal> {
        let trans = self.hdp.transition_log_row(self.current_state)?;
        let k = self.num_candidates();
        let mut log_scores = Vec::with_capacity(k);
        let mut weights_sq = Vec::with_capacity(k);
        for (cand, lt) in trans.iter().enumerate().take(k) {
            let (s, w) = self.weighted_batch_loglik(cfg, cand, batch_ctx, batch_y)?;
            log_scores.push(lt + s);
            weights_sq.push(w);
        }
        let d = batch_ctx[0].obs_dim();
        let mut acc_noise = DMatrix::zeros(d, d);
        let mut pred_mean = Vec::with_capacity(batch_ctx.len());
        let mut pred_cov = Vec::with_capacity(batch_ctx.len());
        for ctx in batch_ctx {
            acc_noise += &ctx.obs_noise;
            let p = predict_multistep(&self.beliefs[self.current_state], ctx, &acc_noise)?;
            pred_mean.push(p.y_hat);
            pred_cov.push(p.s_cov);
        }
        Ok(Proposal {
            log_norm: log_sum_exp(&log_scores),
            log_scores,
            pred_mean,
            pred_cov,
            weights_sq,
        })
    }

    /// Move to `next`, recording the transition at time `t` and pruning when
    /// the capacity is hit. Returns the (possibly shifted) slot of `next`.
    fn enter_state(&mut self, cfg: &FilterConfig, next: usize, t: u64) -> Result<usize> {
        match cfg.structural {
            StructuralMode::Sampled => self.hdp.update_counts(self.current_state, next, &mut self.rng, t)?,
            StructuralMode::Frozen { split, .. } => {
                self.hdp.update_counts_with_split(self.current_state, next, split, t)?
            }
        }
        let mut next = next;
        if cfg.prune && self.hdp.at_capacity() {
            if let Some(victim) = self.hdp.prune(&mut self.beliefs, cfg.tau_n, Some(next)) {
                if victim < next {
                    next -= 1;
                }
                let m = self.beliefs[0].dim();
                let last = self.beliefs.len() - 1;
                self.beliefs[last] = Arc::new(prior_belief(cfg, m, &mut self.rng));
            }
        }
        self.current_state = next;
        Ok(next)
    }

    fn structural_step(&mut self, cfg: &FilterConfig, zero_diagonal: bool) -> Result<bool> {
        if let StructuralMode::Frozen { .. } = cfg.structural {
            return Ok(false);
        }
        let aux = self.hdp.sample_aux_counts(&mut self.rng, zero_diagonal)?;
        let nonzero_diag = aux.trace() > 0;
        self.hdp.resample_structural(&aux, &mut self.rng)?;
        Ok(nonzero_diag)
    }

    pub(crate) fn propagate_single(
        &mut self,
        cfg: &FilterConfig,
        prop: &Proposal,
        ctx: &EmissionContext,
        y: &DVector<f64>,
        t: u64,
    ) -> Result<StepStats> {
        let sampled = sample_log_categorical(&mut self.rng, &prop.log_scores)?;
        let has_history = self.hdp.has_history(sampled);
        let s = self.enter_state(cfg, sampled, t)?;
        self.structural_step(cfg, false)?;
        let belief = &self.beliefs[s];
        let updated = match cfg.variant {
            Variant::Plain => kf_update(belief, ctx, y)?,
            _ => {
                let pred = predict(belief, ctx)?;
                let w = imq_weight_sq_c2(y, &pred.y_hat, &ctx.obs_noise, cfg.imq_scale_sq)?;
                wolf_update(belief, ctx, y, w, has_history)?
            }
        };
        self.beliefs[s] = Arc::new(updated);
        Ok(StepStats::default())
    }

    pub(crate) fn propagate_batch(
        &mut self,
        cfg: &FilterConfig,
        prop: &Proposal,
        batch_ctx: &[EmissionContext],
        batch_y: &[DVector<f64>],
        t0: u64,
    ) -> Result<StepStats> {
        let sampled = sample_log_categorical(&mut self.rng, &prop.log_scores)?;
        let has_history = self.hdp.has_history(sampled);
        let weights = &prop.weights_sq[sampled];
        let s = self.enter_state(cfg, sampled, t0)?;
        let mut stats = StepStats::default();
        for (j, (ctx, y)) in batch_ctx.iter().zip(batch_y).enumerate() {
            let updated = wolf_update(&self.beliefs[s], ctx, y, weights[j], has_history)?;
            self.beliefs[s] = Arc::new(updated);
            let intra = j > 0;
            let nonzero = self.structural_step(cfg, intra)?;
            if intra && !matches!(cfg.structural, StructuralMode::Frozen { .. }) {
                stats.intra_batch_structural += 1;
                if nonzero {
                    stats.intra_batch_nonzero_diagonals += 1;
                }
            }
        }
        Ok(stats)
    }
}
