//! Reproducible random streams and the samplers the inference code draws from.
//!
//! Every particle and every data generator owns one [`RngStream`]. A stream is
//! a ChaCha8 generator keyed by `(seed, stream_id)`: ChaCha is counter based, so
//! two streams with different ids never overlap and the sequence of one stream
//! does not depend on how work is scheduled across threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use crate::error::{Error, Result};

/// A seeded, single-owner random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derive a fresh stream from this one, keyed by the ancestor index, the
    /// tick and the receiving slot. The parent stream is not advanced.
    pub fn child(&self, ancestor: u64, tick: u64, slot: u64) -> RngStream {
        let mut h = splitmix64(self.stream_id);
        h = splitmix64(h ^ ancestor.rotate_left(17));
        h = splitmix64(h ^ tick.rotate_left(34));
        h = splitmix64(h ^ slot.rotate_left(51));
        RngStream::new(self.seed, h)
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Student-t draw with `df` degrees of freedom (unit scale).
    pub fn student_t(&mut self, df: f64) -> Result<f64> {
        let dist = StudentT::new(df).map_err(|e| Error::param(format!("student-t df={df}: {e}")))?;
        Ok(dist.sample(&mut self.inner))
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Log of a Gamma(shape, 1) draw. Marsaglia–Tsang for shape >= 1; shapes
/// below one use the boost `G(a) = G(a + 1) * U^(1/a)`, carried out in log
/// space so that tiny shapes do not underflow.
pub(crate) fn sample_log_gamma_unit(rng: &mut RngStream, shape: f64) -> f64 {
    if shape < 1.0 {
        let boosted = sample_log_gamma_unit(rng, shape + 1.0);
        return boosted + rng.uniform().ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.standard_normal();
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = rng.uniform();
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return d.ln() + v.ln();
        }
    }
}

/// Gamma draw in shape–rate parameterisation (mean `shape / rate`).
pub fn sample_gamma(rng: &mut RngStream, shape: f64, rate: f64) -> Result<f64> {
    check_positive("gamma shape", shape)?;
    check_positive("gamma rate", rate)?;
    let g = sample_log_gamma_unit(rng, shape).exp() / rate;
    Ok(g.max(f64::MIN_POSITIVE))
}

/// Beta(a, b) draw, strictly inside (0, 1).
pub fn sample_beta(rng: &mut RngStream, a: f64, b: f64) -> Result<f64> {
    check_positive("beta a", a)?;
    check_positive("beta b", b)?;
    let lx = sample_log_gamma_unit(rng, a);
    let ly = sample_log_gamma_unit(rng, b);
    // x / (x + y) = 1 / (1 + exp(ly - lx))
    let v = 1.0 / (1.0 + (ly - lx).exp());
    Ok(v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
}

/// Dirichlet draw; the output sums to one and every entry is strictly positive.
pub fn sample_dirichlet(rng: &mut RngStream, concentration: &[f64]) -> Result<Vec<f64>> {
    if concentration.len() < 2 {
        return Err(Error::param(format!(
            "dirichlet needs at least two components, got {}",
            concentration.len()
        )));
    }
    for &c in concentration {
        check_positive("dirichlet concentration", c)?;
    }
    let logs: Vec<f64> = concentration
        .iter()
        .map(|&c| sample_log_gamma_unit(rng, c))
        .collect();
    Ok(normalize_log_simplex(&logs))
}

/// exp-normalise a vector of log masses onto the open simplex.
pub(crate) fn normalize_log_simplex(logs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logs);
    let mut out: Vec<f64> = logs
        .iter()
        .map(|&l| (l - lse).exp().max(1e-300))
        .collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Numerically stable `log(sum(exp(xs)))`. Returns `-inf` for an empty slice or
/// when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Draw an index with probability proportional to `weights[i]`.
pub fn sample_multinomial_index(rng: &mut RngStream, weights: &[f64]) -> Result<usize> {
    let mut total = 0.0;
    for &w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::param(format!("invalid categorical weight {w}")));
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::param("all categorical weights are zero"));
    }
    let target = rng.uniform() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
            acc += w;
            if target < acc {
                return Ok(i);
            }
        }
    }
    Ok(last_positive)
}

/// Draw an index from unnormalised log weights. `-inf` entries are never drawn.
pub fn sample_log_categorical(rng: &mut RngStream, log_weights: &[f64]) -> Result<usize> {
    if log_weights.iter().any(|w| w.is_nan()) {
        return Err(Error::param("NaN log weight"));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::param("no finite log weight to sample from"));
    }
    let weights: Vec<f64> = log_weights.iter().map(|&w| (w - max).exp()).collect();
    sample_multinomial_index(rng, &weights)
}

/// Number of occupied tables after seating `n` customers in a Chinese
/// restaurant with concentration `a` (the Antoniak law). Drawn as the sum of
/// independent Bernoulli(a / (a + i)) for i = 0..n, which is O(n) and never
/// touches Stirling numbers.
pub fn sample_antoniak_count(rng: &mut RngStream, n: u64, a: f64) -> Result<u64> {
    check_positive("antoniak concentration", a)?;
    if n == 0 {
        return Ok(0);
    }
    // the first customer always opens a table
    let mut m = 1;
    for i in 1..n {
        if rng.uniform() * (a + i as f64) < a {
            m += 1;
        }
    }
    Ok(m)
}

/// `k` stick-breaking weights with Beta(1, gamma) breaks, followed by the
/// unbroken remainder.
pub fn sample_stick_breaking(rng: &mut RngStream, gamma: f64, k: usize) -> Result<Vec<f64>> {
    check_positive("stick-breaking gamma", gamma)?;
    let mut out = Vec::with_capacity(k + 1);
    let mut remaining = 1.0;
    for _ in 0..k {
        let v = sample_beta(rng, 1.0, gamma)?;
        out.push(v * remaining);
        remaining *= 1.0 - v;
    }
    out.push(remaining);
    let total: f64 = out.iter().sum();
    for w in &mut out {
        *w /= total;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DRAWS: usize = 100_000;

    fn mean_of(mut f: impl FnMut() -> f64, n: usize) -> f64 {
        (0..n).map(|_| f()).sum::<f64>() / n as f64
    }

    #[test]
    fn streams_replay_bit_identically() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = RngStream::new(7, 4);
        let same = (0..64).filter(|_| a.next_u64() == c.next_u64()).count();
        assert!(same < 2);
    }

    #[test]
    fn child_streams_are_deterministic_and_distinct() {
        let parent = RngStream::new(11, 0);
        let mut x = parent.child(2, 5, 0);
        let mut y = parent.child(2, 5, 0);
        let mut z = parent.child(2, 5, 1);
        assert_eq!(x.stream_id(), y.stream_id());
        assert_ne!(x.stream_id(), z.stream_id());
        assert_eq!(x.next_u64(), y.next_u64());
        assert_ne!(x.next_u64(), z.next_u64());
    }

    #[test]
    fn uniform_is_open() {
        let mut r = RngStream::new(0, 0);
        for _ in 0..DRAWS {
            let u = r.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn beta_means() {
        let mut r = RngStream::new(1, 0);
        let m = mean_of(|| sample_beta(&mut r, 1.0, 1.0).unwrap(), DRAWS);
        assert!((m - 0.5).abs() < 0.01, "{m}");
        let m = mean_of(|| sample_beta(&mut r, 1.0, 3.0).unwrap(), DRAWS);
        assert!((m - 0.25).abs() < 0.01, "{m}");
        assert!(sample_beta(&mut r, 0.0, 1.0).is_err());
    }

    #[test]
    fn gamma_means() {
        let mut r = RngStream::new(2, 0);
        let m = mean_of(|| sample_gamma(&mut r, 1.0, 1.0).unwrap(), DRAWS);
        assert!((m - 1.0).abs() < 0.02, "{m}");
        let m = mean_of(|| sample_gamma(&mut r, 5.0, 2.0).unwrap(), DRAWS);
        assert!((m - 2.5).abs() < 0.05, "{m}");
        // boosted branch
        let m = mean_of(|| sample_gamma(&mut r, 0.3, 1.0).unwrap(), DRAWS);
        assert!((m - 0.3).abs() < 0.01, "{m}");
        assert!(sample_gamma(&mut r, -1.0, 1.0).is_err());
        assert!(sample_gamma(&mut r, 1.0, 0.0).is_err());
    }

    #[test]
    fn gamma_variance_small_shape() {
        let mut r = RngStream::new(21, 0);
        let xs: Vec<f64> = (0..DRAWS).map(|_| sample_gamma(&mut r, 0.5, 2.0).unwrap()).collect();
        let m = xs.iter().sum::<f64>() / DRAWS as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / DRAWS as f64;
        // mean 0.25, variance shape / rate^2 = 0.125
        assert!((m - 0.25).abs() < 0.01, "{m}");
        assert!((v - 0.125).abs() < 0.01, "{v}");
    }

    #[test]
    fn dirichlet_means_and_simplex() {
        let mut r = RngStream::new(3, 0);
        let mut acc = [0.0; 3];
        for _ in 0..DRAWS {
            let d = sample_dirichlet(&mut r, &[1.0, 1.0, 1.0]).unwrap();
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.iter().all(|&x| x > 0.0 && x < 1.0));
            for (a, x) in acc.iter_mut().zip(&d) {
                *a += x;
            }
        }
        for a in acc {
            assert!((a / DRAWS as f64 - 1.0 / 3.0).abs() < 0.01);
        }
        let m = mean_of(|| sample_dirichlet(&mut r, &[2.0, 1.0]).unwrap()[0], DRAWS);
        assert!((m - 2.0 / 3.0).abs() < 0.01, "{m}");
        assert!(sample_dirichlet(&mut r, &[]).is_err());
        assert!(sample_dirichlet(&mut r, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn dirichlet_tiny_concentrations_stay_positive() {
        let mut r = RngStream::new(31, 0);
        for _ in 0..1000 {
            let d = sample_dirichlet(&mut r, &[1e-4, 1e-6, 3.0]).unwrap();
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(d.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn multinomial_frequencies() {
        let mut r = RngStream::new(4, 0);
        for _ in 0..1000 {
            assert_eq!(sample_multinomial_index(&mut r, &[0.0, 1.0, 0.0]).unwrap(), 1);
        }
        let ones = (0..DRAWS)
            .filter(|_| sample_multinomial_index(&mut r, &[1.0, 1.0]).unwrap() == 1)
            .count();
        assert!((ones as f64 / DRAWS as f64 - 0.5).abs() < 0.01);
        let zeros = (0..DRAWS)
            .filter(|_| sample_multinomial_index(&mut r, &[3.0, 1.0]).unwrap() == 0)
            .count();
        assert!((zeros as f64 / DRAWS as f64 - 0.75).abs() < 0.01);
        assert!(sample_multinomial_index(&mut r, &[0.0, 0.0]).is_err());
        assert!(sample_multinomial_index(&mut r, &[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn log_categorical_skips_neg_inf() {
        let mut r = RngStream::new(5, 0);
        for _ in 0..1000 {
            let i = sample_log_categorical(&mut r, &[f64::NEG_INFINITY, -1000.0, f64::NEG_INFINITY]).unwrap();
            assert_eq!(i, 1);
        }
        assert!(sample_log_categorical(&mut r, &[f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn antoniak_degenerate_counts() {
        let mut r = RngStream::new(6, 0);
        for _ in 0..100 {
            assert_eq!(sample_antoniak_count(&mut r, 0, 2.0).unwrap(), 0);
            assert_eq!(sample_antoniak_count(&mut r, 1, 0.01).unwrap(), 1);
        }
        assert!(sample_antoniak_count(&mut r, 3, 0.0).is_err());
    }

    #[test]
    fn antoniak_n3_pmf() {
        // |S(3, .)| = (2, 3, 1) with a = 1, normaliser a(a+1)(a+2) = 6
        let mut r = RngStream::new(8, 0);
        let mut hist = [0usize; 4];
        for _ in 0..DRAWS {
            hist[sample_antoniak_count(&mut r, 3, 1.0).unwrap() as usize] += 1;
        }
        assert_eq!(hist[0], 0);
        let expect = [0.0, 2.0 / 6.0, 3.0 / 6.0, 1.0 / 6.0];
        for m in 1..4 {
            let f = hist[m] as f64 / DRAWS as f64;
            assert!((f - expect[m]).abs() < 0.01, "m={m} f={f}");
        }
    }

    #[test]
    fn stick_breaking() {
        let mut r = RngStream::new(9, 0);
        assert_eq!(sample_stick_breaking(&mut r, 1.0, 0).unwrap(), vec![1.0]);
        let m = mean_of(|| sample_stick_breaking(&mut r, 1.0, 1).unwrap()[0], DRAWS);
        assert!((m - 0.5).abs() < 0.01);
        let m = mean_of(|| sample_stick_breaking(&mut r, 2.0, 5).unwrap()[5], DRAWS);
        assert!((m - (2.0f64 / 3.0).powi(5)).abs() < 0.01, "{m}");
        let w = sample_stick_breaking(&mut r, 0.5, 8).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(sample_stick_breaking(&mut r, 0.0, 2).is_err());
    }

    #[test]
    fn log_sum_exp_edge_cases() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
