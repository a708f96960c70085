use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::particle::{Proposal, StepStats};
use super::{
    normalize_log_weights, reseat, resample_indices, weighted_mode, FilterConfig, Particle,
    StepOutput, Variant,
};
use crate::emission::EmissionContext;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Stream id reserved for the resampling draws.
const RESAMPLE_STREAM: u64 = u64::MAX;

/// Counters for bookkeeping checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub ticks: u64,
    pub batches: u64,
    pub resample_events: u64,
    /// Structural resamples performed at intra-batch ticks, over all particles.
    pub intra_batch_structural: u64,
    /// Of those, how many saw a non-zero diagonal in the table counts.
    pub intra_batch_nonzero_diagonals: u64,
}

/// The particle system plus the resampling stream.
#[derive(Debug, Clone)]
pub struct Engine {
    config: FilterConfig,
    param_dim: usize,
    obs_dim: usize,
    particles: Vec<Particle>,
    resample_rng: RngStream,
    tick: usize,
    diagnostics: Diagnostics,
}

impl Engine {
    pub fn new(config: FilterConfig, param_dim: usize, obs_dim: usize) -> Result<Self> {
        config.validate()?;
        if param_dim == 0 || obs_dim == 0 {
            return Err(Error::Config("parameter and observation dimensions must be positive".into()));
        }
        if let Some(mu0) = &config.mu0 {
            if mu0.len() != param_dim {
                return Err(Error::Config(format!(
                    "mu0 has length {}, model has {param_dim} parameters",
                    mu0.len()
                )));
            }
        }
        let n = config.num_particles;
        let particles = (0..n)
            .map(|i| Particle::init(&config, param_dim, i, n))
            .collect::<Result<Vec<_>>>()?;
        let resample_rng = RngStream::new(config.seed, RESAMPLE_STREAM);
        Ok(Self {
            config,
            param_dim,
            obs_dim,
            particles,
            resample_rng,
            tick: 0,
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diagnostics
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn batch_size(&self) -> usize {
        self.config.effective_batch_size()
    }

    fn normalized_weights(&self) -> Result<Vec<f64>> {
        let mut lw: Vec<f64> = self.particles.iter().map(|p| p.log_weight).collect();
        normalize_log_weights(&mut lw)?;
        Ok(lw.into_iter().map(f64::exp).collect())
    }

    /// Predictive mixture for a tick `ahead` steps into the current batch
    /// (0 = next tick), given the contexts of the pending ticks. Uses only the
    /// state of the particle system, never an observation.
    pub fn predictive(&self, pending: &[EmissionContext]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let weights = self.normalized_weights()?;
        let mut acc = DMatrix::zeros(self.obs_dim, self.obs_dim);
        for c in pending {
            acc += &c.obs_noise;
        }
        let ctx = pending.last().ok_or_else(|| Error::param("no context to predict"))?;
        let preds = self
            .particles
            .iter()
            .map(|p| {
                let pr = crate::emission::predict_multistep(&p.beliefs[p.current_state], ctx, &acc)?;
                Ok((pr.y_hat, pr.s_cov))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(mixture(&weights, preds.iter().map(|(m, c)| (m, c))))
    }

    fn check_inputs(&self, ctxs: &[EmissionContext], ys: &[DVector<f64>]) -> Result<()> {
        if ctxs.is_empty() || ctxs.len() != ys.len() {
            return Err(Error::shape(format!(
                "batch has {} contexts and {} observations",
                ctxs.len(),
                ys.len()
            )));
        }
        for (c, y) in ctxs.iter().zip(ys) {
            if c.param_dim() != self.param_dim || c.obs_dim() != self.obs_dim || y.len() != self.obs_dim {
                return Err(Error::shape(format!(
                    "expected {}x{} features and {}-vectors",
                    self.obs_dim, self.param_dim, self.obs_dim
                )));
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::param("non-finite observation"));
            }
        }
        Ok(())
    }

    /// Process one tick (plain and wolf variants).
    pub fn step_single(&mut self, ctx: &EmissionContext, y: &DVector<f64>) -> Result<StepOutput> {
        if self.config.variant == Variant::Batched {
            return Err(Error::Config("step_single called on the batched variant".into()));
        }
        let t = self.tick;
        let mut out = self
            .advance(std::slice::from_ref(ctx), std::slice::from_ref(y))
            .map_err(|e| e.at_tick(t))?;
        Ok(out.pop().expect("one output"))
    }

    /// Process one batch of `1..=B` ticks (batched variant).
    pub fn step_batch(&mut self, ctxs: &[EmissionContext], ys: &[DVector<f64>]) -> Result<Vec<StepOutput>> {
        if self.config.variant != Variant::Batched {
            return Err(Error::Config("step_batch called on a non-batched variant".into()));
        }
        if ctxs.len() > self.config.batch_size {
            return Err(Error::shape(format!(
                "batch of {} ticks exceeds batch size {}",
                ctxs.len(),
                self.config.batch_size
            )));
        }
        let t = self.tick;
        self.advance(ctxs, ys).map_err(|e| e.at_tick(t))
    }

    fn advance(&mut self, ctxs: &[EmissionContext], ys: &[DVector<f64>]) -> Result<Vec<StepOutput>> {
        self.check_inputs(ctxs, ys)?;
        let cfg = &self.config;
        let batched = cfg.variant == Variant::Batched;
        let t0 = self.tick;
        let pre_weights = self.normalized_weights()?;

        // score every candidate; read-only per particle
        let proposals: Vec<Proposal> = self
            .particles
            .par_iter()
            .map(|p| {
                if batched {
                    p.score_batch(cfg, ctxs, ys)
                } else {
                    p.score_single(&ctxs[0], &ys[0])
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let b = ctxs.len();
        let mut pred_out = Vec::with_capacity(b);
        for j in 0..b {
            pred_out.push(mixture(
                &pre_weights,
                proposals.iter().map(|p| (&p.pred_mean[j], &p.pred_cov[j])),
            ));
        }

        // reweight by the state-marginalised (batch) likelihood
        let mut lw: Vec<f64> = self
            .particles
            .iter()
            .zip(&proposals)
            .map(|(p, q)| p.log_weight + q.log_norm)
            .collect();
        normalize_log_weights(&mut lw)?;
        for (p, w) in self.particles.iter_mut().zip(&lw) {
            p.log_weight = *w;
        }
        let ess = 1.0 / lw.iter().map(|l| (2.0 * l).exp()).sum::<f64>();
        let n = self.particles.len();
        let resampled = ess < cfg.ess_threshold;
        let proposals = if resampled {
            let ancestors = resample_indices(&lw, n, cfg.resampling, &mut self.resample_rng)?;
            self.particles = reseat(&self.particles, &ancestors, t0 as u64);
            self.diagnostics.resample_events += 1;
            ancestors.iter().map(|&a| proposals[a].clone()).collect()
        } else {
            proposals
        };

        let cfg = &self.config;
        let stats: Vec<StepStats> = self
            .particles
            .par_iter_mut()
            .zip(proposals.par_iter())
            .map(|(p, q)| {
                if batched {
                    p.propagate_batch(cfg, q, ctxs, ys, t0 as u64)
                } else {
                    p.propagate_single(cfg, q, &ctxs[0], &ys[0], t0 as u64)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        for s in &stats {
            self.diagnostics.intra_batch_structural += s.intra_batch_structural;
            self.diagnostics.intra_batch_nonzero_diagonals += s.intra_batch_nonzero_diagonals;
        }

        let post = self.normalized_weights()?;
        let labels: Vec<u64> = self.particles.iter().map(|p| p.current_label()).collect();
        let map_state = weighted_mode(&labels, &post);
        let num_active: f64 = self
            .particles
            .iter()
            .zip(&post)
            .map(|(p, w)| w * p.hdp.num_states() as f64)
            .sum();

        self.tick += b;
        self.diagnostics.ticks += b as u64;
        self.diagnostics.batches += 1;
        Ok(pred_out
            .into_iter()
            .enumerate()
            .map(|(j, (mean, var))| StepOutput {
                tick: t0 + j,
                predictive_mean: mean,
                predictive_var: var,
                map_state,
                per_particle_states: labels.clone(),
                ess: ess.clamp(1.0, n as f64),
                resampled: resampled && j == 0,
                num_active_states: num_active,
            })
            .collect())
    }
}

/// Moment-matched mixture `Σ w_i N(m_i, S_i)`.
fn mixture<'a>(
    weights: &[f64],
    comps: impl Iterator<Item = (&'a DVector<f64>, &'a DMatrix<f64>)>,
) -> (DVector<f64>, DMatrix<f64>) {
    let mut mean: Option<DVector<f64>> = None;
    let mut second: Option<DMatrix<f64>> = None;
    for (w, (m, s)) in weights.iter().zip(comps) {
        let outer = m * m.transpose();
        match (&mut mean, &mut second) {
            (Some(mu), Some(sec)) => {
                *mu += m * *w;
                *sec += (s + outer) * *w;
            }
            _ => {
                mean = Some(m * *w);
                second = Some((s + outer) * *w);
            }
        }
    }
    let mean = mean.expect("at least one particle");
    let mut var = second.expect("at least one particle") - &mean * mean.transpose();
    let d = var.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            let v = 0.5 * (var[(i, j)] + var[(j, i)]);
            var[(i, j)] = v;
            var[(j, i)] = v;
        }
    }
    (mean, var)
}

/// Push-based wrapper: feed one tick at a time. Batched engines buffer until a
/// batch is complete; predictions for buffered ticks are multi-step forecasts
/// from the state at the start of the batch.
#[derive(Debug, Clone)]
pub struct OnlineEngine {
    engine: Engine,
    pending_ctx: Vec<EmissionContext>,
    pending_y: Vec<DVector<f64>>,
}

impl OnlineEngine {
    pub fn new(config: FilterConfig, param_dim: usize, obs_dim: usize) -> Result<Self> {
        Ok(Self {
            engine: Engine::new(config, param_dim, obs_dim)?,
            pending_ctx: Vec::new(),
            pending_y: Vec::new(),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn pending(&self) -> usize {
        self.pending_y.len()
    }

    /// Predictive for the next tick with context `ctx`.
    pub fn predict(&self, ctx: &EmissionContext) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mut ctxs = self.pending_ctx.clone();
        ctxs.push(ctx.clone());
        self.engine.predictive(&ctxs)
    }

    /// Feed one observation. Returns the outputs of every tick completed by it
    /// (empty while a batch is still filling).
    pub fn observe(&mut self, ctx: EmissionContext, y: DVector<f64>) -> Result<Vec<StepOutput>> {
        self.pending_ctx.push(ctx);
        self.pending_y.push(y);
        if self.pending_y.len() >= self.engine.batch_size() {
            self.flush()
        } else {
            Ok(Vec::new())
        }
    }

    /// Process whatever is buffered as a (possibly short) batch.
    pub fn flush(&mut self) -> Result<Vec<StepOutput>> {
        if self.pending_y.is_empty() {
            return Ok(Vec::new());
        }
        let ctxs = std::mem::take(&mut self.pending_ctx);
        let ys = std::mem::take(&mut self.pending_y);
        if self.engine.config.variant == Variant::Batched {
            self.engine.step_batch(&ctxs, &ys)
        } else {
            Ok(vec![self.engine.step_single(&ctxs[0], &ys[0])?])
        }
    }
}

/// Outputs of a whole-stream run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub outputs: Vec<StepOutput>,
    pub final_num_states: Vec<usize>,
    pub final_log_weights: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Drive an engine over a whole stream in batches of the effective batch size
/// (a short final batch is processed with its actual length).
pub fn run_stream(
    config: &FilterConfig,
    contexts: &[EmissionContext],
    observations: &[DVector<f64>],
) -> Result<RunOutput> {
    if observations.is_empty() {
        return Err(Error::param("empty stream"));
    }
    if contexts.len() != observations.len() {
        return Err(Error::shape("contexts and observations differ in length"));
    }
    let mut engine = Engine::new(config.clone(), contexts[0].param_dim(), contexts[0].obs_dim())?;
    let b = engine.batch_size();
    let mut outputs = Vec::with_capacity(observations.len());
    for (cs, ys) in contexts.chunks(b).zip(observations.chunks(b)) {
        if config.variant == Variant::Batched {
            outputs.extend(engine.step_batch(cs, ys)?);
        } else {
            outputs.push(engine.step_single(&cs[0], &ys[0])?);
        }
    }
    Ok(RunOutput {
        outputs,
        final_num_states: engine.particles.iter().map(|p| p.hdp.num_states()).collect(),
        final_log_weights: engine.particles.iter().map(|p| p.log_weight).collect(),
        diagnostics: engine.diagnostics,
    })
}
