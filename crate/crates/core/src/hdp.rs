//! Structural sufficient statistics of the HDP transition prior.
//!
//! Transition probabilities are never materialised: they are integrated out
//! against the counts `N`, the global weights `β̂` and the concentration `α̂`.
//! Storage is fixed at `max_states` with an active-length cursor `L`; slot `L`
//! of `β̂` holds the unbroken stick remainder (the mass of a brand-new state).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{
    sample_antoniak_count, sample_beta, sample_gamma, sample_log_gamma_unit, RngStream,
};

pub const DEFAULT_MAX_STATES: usize = 30;
pub const DEFAULT_TAU_N: usize = 3;

/// Floor applied to `β̂` entries whose Dirichlet parameter is zero.
const BETA_FLOOR: f64 = 1e-12;

/// Gamma priors on `α̂` and `γ̂`, shape–rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HdpHyper {
    pub a_alpha: f64,
    pub b_alpha: f64,
    pub a_gamma: f64,
    pub b_gamma: f64,
}

impl Default for HdpHyper {
    fn default() -> Self {
        Self {
            a_alpha: 1.0,
            b_alpha: 1.0,
            a_gamma: 1.0,
            b_gamma: 1.0,
        }
    }
}

impl HdpHyper {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a_alpha", self.a_alpha),
            ("b_alpha", self.b_alpha),
            ("a_gamma", self.a_gamma),
            ("b_gamma", self.b_gamma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HdpState {
    alpha_hat: f64,
    gamma_hat: f64,
    beta_hat: Vec<f64>,
    num_states: usize,
    max_states: usize,
    counts: Vec<u64>,
    last_update: Vec<u64>,
    labels: Vec<u64>,
    next_label: u64,
    hyper: HdpHyper,
}

/// Auxiliary table counts `M`, one per active (from, to) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxCounts {
    size: usize,
    m: Vec<u64>,
}

impl AuxCounts {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, from: usize, to: usize) -> u64 {
        self.m[from * self.size + to]
    }

    pub fn total(&self) -> u64 {
        self.m.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.size).map(|i| self.get(i, i)).sum()
    }

    pub fn column_sum(&self, to: usize) -> u64 {
        (0..self.size).map(|i| self.get(i, to)).sum()
    }
}

/// Deterministic batch schedule: a new state may only be entered at ticks
/// where `(t - origin) % batch_size == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSchedule {
    pub batch_size: usize,
    pub origin: usize,
}

impl BatchSchedule {
    pub fn new(batch_size: usize, origin: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::param("batch size must be at least 1"));
        }
        Ok(Self { batch_size, origin })
    }
}

pub fn is_inter_batch(schedule: &BatchSchedule, t: usize) -> bool {
    t >= schedule.origin && (t - schedule.origin).is_multiple_of(schedule.batch_size)
}

impl HdpState {
    /// A state with one active state, given concentrations and `β̂ = (β_1, rest)`.
    pub fn new(
        alpha_hat: f64,
        gamma_hat: f64,
        beta_hat: Vec<f64>,
        max_states: usize,
        hyper: HdpHyper,
    ) -> Result<Self> {
        hyper.validate()?;
        if !(alpha_hat > 0.0 && gamma_hat > 0.0) {
            return Err(Error::param("concentrations must be positive"));
        }
        if max_states == 0 {
            return Err(Error::param("max_states must be at least 1"));
        }
        let num_states = beta_hat.len().saturating_sub(1);
        if num_states == 0 || num_states > max_states {
            return Err(Error::shape(format!(
                "beta_hat must have between 2 and {} entries",
                max_states + 1
            )));
        }
        if beta_hat.iter().any(|&b| !(b > 0.0)) || (beta_hat.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::param("beta_hat must be a strictly positive simplex vector"));
        }
        let mut beta_hat = beta_hat;
        normalize(&mut beta_hat);
        Ok(Self {
            alpha_hat,
            gamma_hat,
            beta_hat,
            num_states,
            max_states,
            counts: vec![0; max_states * max_states],
            last_update: vec![0; max_states],
            labels: (0..max_states as u64).collect(),
            next_label: num_states as u64,
            hyper,
        })
    }

    /// Prior draw: `α̂, γ̂ ~ Gam(a, b)` and `β̂ ~ SB(γ̂)` with one active state.
    pub fn sample_prior(rng: &mut RngStream, max_states: usize, hyper: HdpHyper) -> Result<Self> {
        hyper.validate()?;
        let alpha = sample_gamma(rng, hyper.a_alpha, hyper.b_alpha)?;
        let gamma = sample_gamma(rng, hyper.a_gamma, hyper.b_gamma)?;
        let beta = crate::rng::sample_stick_breaking(rng, gamma, 1)?;
        Self::new(alpha, gamma, beta, max_states, hyper)
    }

    pub fn alpha_hat(&self) -> f64 {
        self.alpha_hat
    }

    pub fn gamma_hat(&self) -> f64 {
        self.gamma_hat
    }

    /// Global weights, length `L + 1`.
    pub fn beta_hat(&self) -> &[f64] {
        &self.beta_hat
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn max_states(&self) -> usize {
        self.max_states
    }

    pub fn hyper(&self) -> &HdpHyper {
        &self.hyper
    }

    pub fn at_capacity(&self) -> bool {
        self.num_states == self.max_states
    }

    pub fn set_concentrations(&mut self, alpha_hat: f64, gamma_hat: f64) -> Result<()> {
        if !(alpha_hat > 0.0 && gamma_hat > 0.0) {
            return Err(Error::param("concentrations must be positive"));
        }
        self.alpha_hat = alpha_hat;
        self.gamma_hat = gamma_hat;
        Ok(())
    }

    pub fn count(&self, from: usize, to: usize) -> u64 {
        self.counts[from * self.max_states + to]
    }

    pub fn row_sum(&self, from: usize) -> u64 {
        let start = from * self.max_states;
        self.counts[start..start + self.num_states].iter().sum()
    }

    pub fn column_sum(&self, to: usize) -> u64 {
        (0..self.num_states).map(|l| self.count(l, to)).sum()
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// A state has history once some transition has landed in it.
    pub fn has_history(&self, state: usize) -> bool {
        state < self.num_states && self.column_sum(state) > 0
    }

    pub fn last_update(&self, state: usize) -> u64 {
        self.last_update[state]
    }

    /// Stable label of a slot. Labels survive pruning, slot indices do not.
    pub fn label(&self, state: usize) -> u64 {
        self.labels[state]
    }

    fn check_from(&self, from: usize) -> Result<()> {
        if from >= self.num_states {
            return Err(Error::Index {
                index: from,
                size: self.num_states,
            });
        }
        Ok(())
    }

    /// `(n_{from,to} + α̂ β̂_to) / (n_{from,·} + α̂)`. `to == L` is the new state.
    pub fn transition_predictive(&self, from: usize, to: usize) -> Result<f64> {
        self.check_from(from)?;
        if to > self.num_states {
            return Err(Error::Index {
                index: to,
                size: self.num_states + 1,
            });
        }
        let n = if to < self.num_states { self.count(from, to) as f64 } else { 0.0 };
        let denom = self.row_sum(from) as f64 + self.alpha_hat;
        Ok((n + self.alpha_hat * self.beta_hat[to]) / denom)
    }

    /// Log transition predictive for every destination `0..=L`.
    pub fn transition_log_row(&self, from: usize) -> Result<Vec<f64>> {
        self.check_from(from)?;
        let log_denom = (self.row_sum(from) as f64 + self.alpha_hat).ln();
        Ok((0..=self.num_states)
            .map(|to| {
                let n = if to < self.num_states { self.count(from, to) as f64 } else { 0.0 };
                (n + self.alpha_hat * self.beta_hat[to]).ln() - log_denom
            })
            .collect())
    }

    /// Record the transition `s_prev -> s_new` at time `t`, instantiating a new
    /// state when `s_new == L`. The stick remainder is split with `v ~ Beta(1, γ̂)`.
    pub fn update_counts(&mut self, s_prev: usize, s_new: usize, rng: &mut RngStream, t: u64) -> Result<()> {
        if s_new == self.num_states {
            if self.at_capacity() {
                return Err(Error::Capacity {
                    max_states: self.max_states,
                });
            }
            let v = sample_beta(rng, 1.0, self.gamma_hat)?;
            self.update_counts_with_split(s_prev, s_new, v, t)
        } else {
            self.update_counts_with_split(s_prev, s_new, 0.5, t)
        }
    }

    /// [`update_counts`](Self::update_counts) with an explicit stick split `v`
    /// (ignored for existing-state transitions).
    pub fn update_counts_with_split(&mut self, s_prev: usize, s_new: usize, v: f64, t: u64) -> Result<()> {
        self.check_from(s_prev)?;
        if s_new > self.num_states {
            return Err(Error::Index {
                index: s_new,
                size: self.num_states + 1,
            });
        }
        if s_new == self.num_states {
            if self.at_capacity() {
                return Err(Error::Capacity {
                    max_states: self.max_states,
                });
            }
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::param(format!("stick split must lie in (0, 1), got {v}")));
            }
            let rest = self.beta_hat[self.num_states];
            self.beta_hat[self.num_states] = v * rest;
            self.beta_hat.push((1.0 - v) * rest);
            self.labels[s_new] = self.next_label;
            self.next_label += 1;
            self.num_states += 1;
        }
        self.counts[s_prev * self.max_states + s_new] += 1;
        self.last_update[s_new] = t;
        Ok(())
    }

    /// Antoniak table counts `m_{ℓk} ~ Antoniak(n_{ℓk}, α̂ β̂_k)`; with
    /// `zero_diagonal` the self-transition tables are dropped.
    pub fn sample_aux_counts(&self, rng: &mut RngStream, zero_diagonal: bool) -> Result<AuxCounts> {
        let l = self.num_states;
        let mut m = vec![0; l * l];
        for from in 0..l {
            for to in 0..l {
                if zero_diagonal && from == to {
                    continue;
                }
                let n = self.count(from, to);
                if n > 0 {
                    m[from * l + to] = sample_antoniak_count(rng, n, self.alpha_hat * self.beta_hat[to])?;
                }
            }
        }
        Ok(AuxCounts { size: l, m })
    }

    /// Resample `α̂`, `γ̂` and `β̂` given the auxiliary counts.
    pub fn resample_structural(&mut self, aux: &AuxCounts, rng: &mut RngStream) -> Result<()> {
        if aux.size != self.num_states {
            return Err(Error::shape(format!(
                "aux counts cover {} states, hdp has {}",
                aux.size, self.num_states
            )));
        }
        let m_total = aux.total();
        if m_total == 0 {
            return Ok(());
        }
        let mut sum_log_u = 0.0;
        let mut sum_v = 0u64;
        for l in 0..self.num_states {
            let n = self.row_sum(l);
            if n == 0 {
                continue;
            }
            let n = n as f64;
            sum_log_u += sample_beta(rng, self.alpha_hat + 1.0, n)?.ln();
            if rng.bernoulli(n / (n + self.alpha_hat)) {
                sum_v += 1;
            }
        }
        let alpha = sample_alpha_posterior(rng, &self.hyper, m_total, sum_v, sum_log_u)?;
        let gamma = sample_gamma_posterior(rng, &self.hyper, self.gamma_hat, m_total, self.num_states)?;
        let mut conc: Vec<f64> = (0..self.num_states).map(|k| aux.column_sum(k) as f64).collect();
        conc.push(gamma);
        self.beta_hat = sample_dirichlet_with_zeros(rng, &conc);
        self.alpha_hat = alpha;
        self.gamma_hat = gamma;
        Ok(())
    }

    /// Remove one rarely visited state when at capacity. Candidates are the
    /// `tau_n` states with the smallest row sums; among them the one with the
    /// oldest `last_update` goes. `protect` (the currently occupied state) is
    /// never removed. Beliefs are rotated so the freed slot ends up last.
    /// Returns the removed slot.
    pub fn prune<T>(&mut self, beliefs: &mut [T], tau_n: usize, protect: Option<usize>) -> Option<usize> {
        if !self.at_capacity() || self.num_states < 2 {
            return None;
        }
        let l = self.num_states;
        let mut order: Vec<usize> = (0..l).filter(|&s| Some(s) != protect).collect();
        order.sort_by_key(|&s| (self.row_sum(s), s));
        order.truncate(tau_n.max(1));
        let victim = *order
            .iter()
            .min_by_key(|&&s| (self.last_update[s], s))
            .expect("at least one candidate");
        self.remove_state(victim);
        if victim < beliefs.len() {
            beliefs[victim..].rotate_left(1);
        }
        Some(victim)
    }

    fn remove_state(&mut self, victim: usize) {
        let ms = self.max_states;
        let l = self.num_states;
        let mut counts = vec![0; ms * ms];
        let keep: Vec<usize> = (0..l).filter(|&s| s != victim).collect();
        for (i, &from) in keep.iter().enumerate() {
            for (j, &to) in keep.iter().enumerate() {
                counts[i * ms + j] = self.counts[from * ms + to];
            }
        }
        self.counts = counts;
        self.beta_hat.remove(victim);
        normalize(&mut self.beta_hat);
        self.last_update.remove(victim);
        self.last_update.push(0);
        self.labels.remove(victim);
        self.labels.push(0);
        self.num_states -= 1;
    }
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// `α̂ ~ Gam(a_α + m·· − Σv, b_α − Σ log u)`. The shape count is clamped at
/// zero: with dropped self-transition tables `m··` can fall below `Σv`.
pub fn sample_alpha_posterior(
    rng: &mut RngStream,
    hyper: &HdpHyper,
    m_total: u64,
    sum_v: u64,
    sum_log_u: f64,
) -> Result<f64> {
    let shape = hyper.a_alpha + m_total.saturating_sub(sum_v) as f64;
    let rate = hyper.b_alpha - sum_log_u;
    sample_gamma(rng, shape, rate)
}

/// Auxiliary-variable draw for `γ̂` given `m··` tables over `num_states` dishes.
pub fn sample_gamma_posterior(
    rng: &mut RngStream,
    hyper: &HdpHyper,
    gamma_hat: f64,
    m_total: u64,
    num_states: usize,
) -> Result<f64> {
    let m = m_total as f64;
    let k = num_states as f64;
    let phi = sample_beta(rng, gamma_hat + 1.0, m)?;
    let rate = hyper.b_gamma - phi.ln();
    let odds = (hyper.a_gamma + k - 1.0) / (m * rate);
    let eps = odds / (1.0 + odds);
    let shape = if rng.uniform() < eps {
        hyper.a_gamma + k
    } else {
        hyper.a_gamma + k - 1.0
    };
    sample_gamma(rng, shape, rate)
}

/// Dirichlet draw where zero parameters yield (floored) zero mass.
fn sample_dirichlet_with_zeros(rng: &mut RngStream, conc: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = conc
        .iter()
        .map(|&c| if c > 0.0 { sample_log_gamma_unit(rng, c) } else { f64::NEG_INFINITY })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    normalize(&mut out);
    for x in out.iter_mut() {
        *x = x.max(BETA_FLOOR);
    }
    normalize(&mut out);
    out
}
