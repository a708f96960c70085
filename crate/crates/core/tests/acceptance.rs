//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with a
//! failure status if any criterion fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use brihmm::datasets::{
    gen_highdim_linear, gen_iid_regime, FeatureMap, HighDimConfig, IsolatedOutliers, RegimeDgpConfig,
};
use brihmm::emission::{imq_weight_sq, kf_update, wolf_update, EmissionContext, GaussianBelief};
use brihmm::filter::{run_stream, Engine, FilterConfig, RunOutput, StructuralMode, Variant};
use brihmm::hdp::{HdpHyper, HdpState};
use brihmm::metrics::{
    detection_delay, empirical_obs_pif, empirical_state_pif, rmse, state_match, ObsUpdate, PifSandbox,
    DEFAULT_RUN_THRESHOLD,
};
use brihmm::rng::{sample_antoniak_count, RngStream};
use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::{digamma, ln_gamma};

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// 1 -------------------------------------------------------------------------

/// Posterior mean and variance of a scalar parameter by trapezoid quadrature.
fn quadrature_posterior(mu: f64, var: f64, f: f64, r: f64, y: f64) -> (f64, f64) {
    let sd = var.sqrt();
    let (lo, hi) = (mu - 14.0 * sd, mu + 14.0 * sd);
    let n = 400_000;
    let h = (hi - lo) / n as f64;
    let logp = |th: f64| -0.5 * (th - mu).powi(2) / var - 0.5 * (y - f * th).powi(2) / r;
    let peak = (0..=n).map(|i| logp(lo + h * i as f64)).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..=n {
        let th = lo + h * i as f64;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 } * (logp(th) - peak).exp();
        z += w;
        m1 += w * th;
        m2 += w * th * th;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(101, 0);
    let (mut worst_q, mut worst_w) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let mu = 4.0 * rng.standard_normal();
        let var = 0.2 + 3.0 * rng.uniform();
        let f = (0.5 + 1.5 * rng.uniform()) * if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
        let r = 0.2 + 2.0 * rng.uniform();
        let y = f * mu + (f * f * var + r).sqrt() * 2.0 * rng.standard_normal();
        let belief = GaussianBelief::isotropic(DVector::from_element(1, mu), var);
        let ctx = EmissionContext::new(DMatrix::from_element(1, 1, f), DMatrix::from_element(1, 1, r)).unwrap();
        let yv = DVector::from_element(1, y);
        let kf = kf_update(&belief, &ctx, &yv).unwrap();
        let (qm, qv) = quadrature_posterior(mu, var, f, r, y);
        let sd = qv.sqrt();
        // Mean error is measured against the posterior scale so that means near zero are not singular.
        worst_q = worst_q
            .max((kf.mean[0] - qm).abs() / (qm.abs() + sd))
            .max((kf.cov[(0, 0)] - qv).abs() / qv);
        let wolf = wolf_update(&belief, &ctx, &yv, 1.0, true).unwrap();
        worst_w = worst_w
            .max((wolf.mean[0] - kf.mean[0]).abs())
            .max((wolf.cov[(0, 0)] - kf.cov[(0, 0)]).abs());
    }
    let t = start.elapsed();
    outcome(
        worst_q <= 1e-6 && worst_w <= 1e-14 && within(t, 5.0),
        format!("max rel err vs quadrature {worst_q:.2e}, wolf(w=1) vs kf {worst_w:.1e}, {t:.2?}"),
    )
}

// 2 -------------------------------------------------------------------------

fn antoniak_pmf(n: usize, a: f64) -> Vec<f64> {
    // Unsigned Stirling numbers of the first kind in log space.
    let mut s = vec![vec![f64::NEG_INFINITY; n + 1]; n + 1];
    s[0][0] = 0.0;
    let lse = |x: f64, y: f64| {
        let m = x.max(y);
        if m == f64::NEG_INFINITY {
            m
        } else {
            m + ((x - m).exp() + (y - m).exp()).ln()
        }
    };
    for i in 1..=n {
        for k in 1..=i {
            let stay = if (i - 1) as f64 > 0.0 { s[i - 1][k] + ((i - 1) as f64).ln() } else { f64::NEG_INFINITY };
            s[i][k] = lse(s[i - 1][k - 1], stay);
        }
    }
    let norm = ln_gamma(a) - ln_gamma(a + n as f64);
    (0..=n).map(|m| (s[n][m] + m as f64 * a.ln() + norm).exp()).collect()
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(202, 0);
    let draws = 100_000;
    let mut worst_tv = 0.0f64;
    for &a in &[0.3, 1.0, 4.0] {
        for n in 1..=8usize {
            let pmf = antoniak_pmf(n, a);
            let mut hist = vec![0usize; n + 1];
            for _ in 0..draws {
                hist[sample_antoniak_count(&mut rng, n as u64, a).unwrap() as usize] += 1;
            }
            let tv: f64 = 0.5
                * hist
                    .iter()
                    .zip(&pmf)
                    .map(|(&h, &p)| (h as f64 / draws as f64 - p).abs())
                    .sum::<f64>();
            worst_tv = worst_tv.max(tv);
        }
    }
    let mut worst_mean = 0.0f64;
    for &a in &[0.3, 1.0, 4.0] {
        for &n in &[5u64, 20, 100] {
            let expect = a * (digamma(a + n as f64) - digamma(a));
            let total: u64 = (0..draws).map(|_| sample_antoniak_count(&mut rng, n, a).unwrap()).sum();
            let got = total as f64 / draws as f64;
            worst_mean = worst_mean.max((got - expect).abs() / expect);
        }
    }
    let t = start.elapsed();
    outcome(
        worst_tv <= 0.02 && worst_mean <= 0.01 && within(t, 30.0),
        format!("max TV {worst_tv:.4}, max mean rel err {worst_mean:.4}, {t:.2?}"),
    )
}

// 3 -------------------------------------------------------------------------

struct Enum {
    ys: Vec<f64>,
    alpha: f64,
    split: f64,
    max_states: usize,
    mu0: f64,
    s0: f64,
    r: f64,
    marginals: Vec<Vec<f64>>,
}

struct PathState {
    counts: Vec<Vec<f64>>,
    beta: Vec<f64>,
    beliefs: Vec<(f64, f64)>,
    cur: usize,
}

impl Enum {
    fn walk(&mut self, t: usize, st: &PathState, log_joint: f64) {
        if t == self.ys.len() {
            return;
        }
        let l = st.beliefs.len();
        let row: f64 = st.counts[st.cur].iter().sum();
        let cands = if l < self.max_states { l + 1 } else { l };
        for k in 0..cands {
            let trans = if k < l {
                (st.counts[st.cur][k] + self.alpha * st.beta[k]) / (row + self.alpha)
            } else {
                self.alpha * st.beta[l] / (row + self.alpha)
            };
            let (m, v) = if k < l { st.beliefs[k] } else { (self.mu0, self.s0) };
            let y = self.ys[t];
            let s = v + self.r;
            let ll = -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + (y - m).powi(2) / s);
            let lj = log_joint + trans.ln() + ll;
            self.marginals[t][k] += lj.exp();

            let mut next = PathState {
                counts: st.counts.clone(),
                beta: st.beta.clone(),
                beliefs: st.beliefs.clone(),
                cur: k,
            };
            if k == l {
                let rest = next.beta[l];
                next.beta[l] = self.split * rest;
                next.beta.push((1.0 - self.split) * rest);
                next.beliefs.push((self.mu0, self.s0));
            }
            next.counts[st.cur][k] += 1.0;
            let gain = v / s;
            next.beliefs[k] = (m + gain * (y - m), v * (1.0 - gain));
            self.walk(t + 1, &next, lj);
        }
    }
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let ys = vec![0.2, 2.4, 2.1, -0.3, 2.6];
    let (alpha, split, max_states, mu0, s0, r) = (1.0, 0.5, 3usize, 1.0, 4.0, 0.5);
    let mut e = Enum {
        ys: ys.clone(),
        alpha,
        split,
        max_states,
        mu0,
        s0,
        r,
        marginals: vec![vec![0.0; max_states]; ys.len()],
    };
    let root = PathState {
        counts: vec![vec![0.0; max_states]; max_states],
        beta: vec![split, 1.0 - split],
        beliefs: vec![(mu0, s0)],
        cur: 0,
    };
    e.walk(0, &root, 0.0);
    for m in e.marginals.iter_mut() {
        let z: f64 = m.iter().sum();
        m.iter_mut().for_each(|v| *v /= z);
    }

    let n = 50_000;
    let mut cfg = FilterConfig::new(Variant::Plain);
    cfg.num_particles = n;
    cfg.ess_threshold = n as f64;
    cfg.max_states = max_states;
    cfg.prune = false;
    cfg.structural = StructuralMode::Frozen { alpha, split };
    cfg.mu0 = Some(vec![mu0]);
    cfg.sigma0_sq = s0;
    cfg.init_mean_scale = 0.0;
    cfg.obs_noise = r;
    cfg.seed = 303;
    let ctxs = vec![EmissionContext::identity(1, r); ys.len()];
    let obs: Vec<_> = ys.iter().map(|&y| DVector::from_element(1, y)).collect();
    let out = run_stream(&cfg, &ctxs, &obs).unwrap();
    let mut worst = 0.0f64;
    for (t, o) in out.outputs.iter().enumerate() {
        let mut freq = vec![0.0; max_states];
        for &s in &o.per_particle_states {
            freq[s as usize] += 1.0 / n as f64;
        }
        let tv = 0.5 * freq.iter().zip(&e.marginals[t]).map(|(a, b)| (a - b).abs()).sum::<f64>();
        worst = worst.max(tv);
    }
    let t = start.elapsed();
    outcome(
        worst <= 0.05 && within(t, 60.0),
        format!("max per-tick TV {worst:.4} over T=5 with 50000 particles, {t:.2?}"),
    )
}

// 4 -------------------------------------------------------------------------

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let sb = PifSandbox::default();
    let grid: Vec<f64> = (0..=60).map(|i| -1.5 + 0.05 * i as f64).collect();
    let half = [-0.75, 0.75];
    let mut notes = Vec::new();
    let mut pass = true;
    for v in [Variant::Plain, Variant::Wolf] {
        let k = empirical_state_pif(&sb, v, 1, &grid).unwrap();
        let ratio = k.iter().cloned().fold(0.0, f64::max) / median(&k);
        pass &= ratio > 10.0;
        notes.push(format!("{} max/median {ratio:.1}", v.name()));
    }
    for b in [4, 6] {
        let k = empirical_state_pif(&sb, Variant::Batched, b, &grid).unwrap();
        let max = k.iter().cloned().fold(0.0, f64::max);
        let mid = empirical_state_pif(&sb, Variant::Batched, b, &half)
            .unwrap()
            .into_iter()
            .fold(0.0, f64::max);
        pass &= max <= 2.0 * mid;
        notes.push(format!("B={b} max/mid {:.2}", max / mid));
    }
    let prior = GaussianBelief::isotropic(DVector::zeros(1), 1.0);
    let contamination: Vec<f64> = (0..=8).map(|k| 10f64.powi(k)).collect();
    let wolf = empirical_obs_pif(&prior, 1.0, 0.0, &contamination, ObsUpdate::Wolf { c: 1.0 }).unwrap();
    let kf = empirical_obs_pif(&prior, 1.0, 0.0, &contamination, ObsUpdate::Kalman).unwrap();
    let wolf_max = wolf.iter().cloned().fold(0.0, f64::max);
    pass &= wolf_max < 1.0 && kf[4] > 1e6;
    notes.push(format!("obs wolf max {wolf_max:.3}, kf at 1e4 {:.2e}", kf[4]));
    let t = start.elapsed();
    outcome(pass && within(t, 60.0), format!("{}, {t:.2?}", notes.join("; ")))
}

// 5 -------------------------------------------------------------------------

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let cfg = RegimeDgpConfig {
        length: 40,
        bursts: vec![],
        ..Default::default()
    };
    let ts = gen_iid_regime(&cfg, &mut RngStream::new(505, 0)).unwrap();
    let ctxs = ts.contexts(&FeatureMap::Identity, 0.25).unwrap();
    let mut fc = FilterConfig::new(Variant::Batched);
    fc.batch_size = 4;
    fc.num_particles = 100;
    fc.ess_threshold = 50.0;
    fc.obs_noise = 0.25;
    fc.seed = 5;
    let mut eng = Engine::new(fc, 1, 1).unwrap();
    for (c, y) in ctxs.chunks(4).zip(ts.observations.chunks(4)) {
        eng.step_batch(c, y).unwrap();
    }
    let counts_ok = eng.particles().iter().all(|p| p.hdp.total_count() == 10);
    let d = eng.diagnostics();
    let t = start.elapsed();
    outcome(
        counts_ok && d.intra_batch_structural > 0 && d.intra_batch_nonzero_diagonals == 0 && within(t, 5.0),
        format!(
            "all particles hold 10 counts: {counts_ok}; intra-batch resamples {} with {} nonzero diagonals, {t:.2?}",
            d.intra_batch_structural, d.intra_batch_nonzero_diagonals
        ),
    )
}

// 6 -------------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let mut rng = RngStream::new(606, 0);
    let (mut worst_sum, mut worst_ratio, mut prunes) = (0.0f64, 0.0f64, 0);
    for trial in 0..500 {
        let max_states = 3 + trial % 6;
        let mut hdp = HdpState::sample_prior(&mut rng, max_states, HdpHyper::default()).unwrap();
        let mut beliefs: Vec<usize> = (0..max_states).collect();
        let mut cur = 0;
        let mut t = 0;
        while !hdp.at_capacity() {
            let k = hdp.num_states() + 1;
            let next = ((rng.uniform() * k as f64) as usize).min(k - 1);
            hdp.update_counts(cur, next, &mut rng, t).unwrap();
            cur = next;
            t += 1;
        }
        let aux = hdp.sample_aux_counts(&mut rng, false).unwrap();
        hdp.resample_structural(&aux, &mut rng).unwrap();
        let before = hdp.beta_hat().to_vec();
        let tau_n = 1 + trial % 4;
        let Some(victim) = hdp.prune(&mut beliefs, tau_n, Some(cur)) else {
            continue;
        };
        prunes += 1;
        let after = hdp.beta_hat();
        worst_sum = worst_sum.max((after.iter().sum::<f64>() - 1.0).abs());
        let survivors: Vec<f64> = before
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != victim)
            .map(|(_, &b)| b)
            .collect();
        for i in 0..survivors.len() {
            for j in 0..survivors.len() {
                let r0 = survivors[i] / survivors[j];
                let r1 = after[i] / after[j];
                worst_ratio = worst_ratio.max((r1 - r0).abs() / r0);
            }
        }
    }
    outcome(
        prunes > 0 && worst_sum <= 1e-12 && worst_ratio <= 1e-12,
        format!("{prunes} prunes; max |sum-1| {worst_sum:.1e}, max ratio rel err {worst_ratio:.1e}"),
    )
}

// 7 and 8 -------------------------------------------------------------------

struct VariantStats {
    rmse: Vec<f64>,
    tpr: Vec<f64>,
    ppv: Vec<f64>,
    dd: Vec<f64>,
}

fn highdim_runs(variant: Variant) -> VariantStats {
    let mut st = VariantStats {
        rmse: vec![],
        tpr: vec![],
        ppv: vec![],
        dd: vec![],
    };
    for seed in 0..10u64 {
        let cfg = HighDimConfig {
            length: 800,
            dim: 20,
            ..Default::default()
        };
        let ts = gen_highdim_linear(&cfg, &mut RngStream::new(seed, u64::MAX - 1)).unwrap();
        let ctxs = ts.contexts(&FeatureMap::Linear, 1.0).unwrap();
        let mut fc = FilterConfig::new(variant);
        fc.num_particles = 100;
        fc.seed = seed;
        match variant {
            Variant::Batched => {
                fc.ess_threshold = 2.0;
                fc.imq_scale_sq = 1.348;
                fc.batch_size = 2;
            }
            Variant::Wolf => {
                fc.ess_threshold = 1.0;
                fc.imq_scale_sq = 3.589;
            }
            Variant::Plain => fc.ess_threshold = 0.0,
        }
        let out: RunOutput = run_stream(&fc, &ctxs, &ts.observations).unwrap();
        let pred: Vec<_> = out.outputs.iter().map(|o| o.predictive_mean.clone()).collect();
        st.rmse.push(rmse(&pred, &ts.observations).unwrap());
        let states: Vec<u64> = out.outputs.iter().map(|o| o.map_state).collect();
        let rep = state_match(ts.true_changepoints.as_ref().unwrap(), &states, DEFAULT_RUN_THRESHOLD).unwrap();
        st.tpr.push(rep.tpr);
        st.ppv.push(rep.ppv);
        st.dd.push(rep.detection_delay);
    }
    st
}

fn criteria_7_8() -> (Outcome, Outcome) {
    let start = Instant::now();
    let br = highdim_runs(Variant::Batched);
    let plain = highdim_runs(Variant::Plain);
    let t = start.elapsed();
    let (br_rmse, plain_rmse) = (median(&br.rmse), median(&plain.rmse));
    let ratio = br_rmse / plain_rmse;
    let c7 = outcome(
        ratio <= 0.7 && within(t, 300.0),
        format!("median RMSE BR {br_rmse:.2} vs plain {plain_rmse:.2}, ratio {ratio:.3} (need <= 0.7), {t:.2?}"),
    );
    let (ppv, tpr, dd, plain_ppv) = (median(&br.ppv), median(&br.tpr), median(&br.dd), median(&plain.ppv));
    let c8 = outcome(
        ppv >= 0.85 && tpr >= 0.90 && dd <= 4.0 && plain_ppv <= 0.75,
        format!(
            "median BR PPV {ppv:.3} (>=0.85), TPR {tpr:.3} (>=0.90), DD {dd:.2} (<=4); plain PPV {plain_ppv:.3} (<=0.75)"
        ),
    );
    (c7, c8)
}

// 9 -------------------------------------------------------------------------

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let sizes = [1usize, 2, 4, 8, 16];
    let mut medians = Vec::new();
    for &b in &sizes {
        let mut dds = Vec::new();
        for seed in 0..10u64 {
            let cfg = RegimeDgpConfig {
                bursts: vec![],
                isolated: Some(IsolatedOutliers {
                    probability: 0.02,
                    low: -10.0,
                    high: 10.0,
                    additive: false,
                }),
                ..Default::default()
            };
            let ts = gen_iid_regime(&cfg, &mut RngStream::new(seed, u64::MAX - 1)).unwrap();
            let cps = ts.true_changepoints.clone().unwrap();
            if cps.is_empty() {
                continue;
            }
            let ctxs = ts.contexts(&FeatureMap::Identity, 0.25).unwrap();
            let mut fc = FilterConfig::new(Variant::Batched);
            fc.num_particles = 100;
            fc.ess_threshold = 2.0;
            fc.imq_scale_sq = 1.348;
            fc.obs_noise = 0.25;
            fc.batch_size = b;
            fc.seed = seed;
            let out = run_stream(&fc, &ctxs, &ts.observations).unwrap();
            let states: Vec<u64> = out.outputs.iter().map(|o| o.map_state).collect();
            dds.push(detection_delay(&states, &cps).unwrap());
        }
        medians.push(median(&dds));
    }
    let inversions: Vec<f64> = medians
        .windows(2)
        .filter(|w| w[1] < w[0])
        .map(|w| w[0] - w[1])
        .collect();
    let ok = inversions.is_empty() || (inversions.len() == 1 && inversions[0] <= 1.0);
    let t = start.elapsed();
    let shown: Vec<String> = sizes.iter().zip(&medians).map(|(b, m)| format!("B={b}:{m:.2}")).collect();
    outcome(
        ok && within(t, 300.0),
        format!("median DD {} ; inversions {inversions:?}, {t:.2?}", shown.join(" ")),
    )
}

// 10 ------------------------------------------------------------------------

fn criterion_10() -> Outcome {
    let cfg = RegimeDgpConfig {
        length: 300,
        bursts: vec![120],
        ..Default::default()
    };
    let ts = gen_iid_regime(&cfg, &mut RngStream::new(1010, 0)).unwrap();
    let ctxs = ts.contexts(&FeatureMap::Identity, 0.25).unwrap();
    let run = |variant| {
        let mut fc = FilterConfig::new(variant);
        fc.num_particles = 50;
        fc.ess_threshold = 25.0;
        fc.batch_size = 1;
        fc.obs_noise = 0.25;
        fc.seed = 10;
        run_stream(&fc, &ctxs, &ts.observations).unwrap()
    };
    let (wolf, br) = (run(Variant::Wolf), run(Variant::Batched));
    let first_diff = wolf.outputs.iter().zip(&br.outputs).position(|(a, b)| {
        a.predictive_mean != b.predictive_mean
            || a.predictive_var != b.predictive_var
            || a.per_particle_states != b.per_particle_states
    });
    let same_weights = wolf.final_log_weights == br.final_log_weights;
    outcome(
        first_diff.is_none() && same_weights,
        match first_diff {
            None => format!("identical over {} ticks", wolf.outputs.len()),
            Some(t) => format!("trajectories diverge at tick {t}; final weights identical: {same_weights}"),
        },
    )
}

// 11 ------------------------------------------------------------------------

fn criterion_11() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"dataset": {"generator": "iid_regime", "length": 400},
            "model": {"variant": "batched", "batch_size": 3, "num_particles": 64,
                      "ess_threshold": 32, "obs_noise": 0.25},
            "run": {"seed": 11}}"#,
    )
    .unwrap();
    let mut files = Vec::new();
    for (i, threads) in ["1", "4", "1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("o{i}"));
        let status = Command::new(env!("CARGO_BIN_EXE_brihmm"))
            .env("BRIHMM_THREADS", threads)
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        if !status.success() {
            return outcome(false, format!("run with {threads} threads failed: {status}"));
        }
        files.push(std::fs::read(out.join("predictions.csv")).unwrap());
    }
    let same = files.windows(2).all(|w| w[0] == w[1]);
    outcome(
        same,
        format!("predictions.csv identical across BRIHMM_THREADS=1,4,1,3: {same} ({} bytes)", files[0].len()),
    )
}

fn main() -> ExitCode {
    // Tolerances above are pinned; a criterion that cannot be met fails loudly.
    let weight_sanity = imq_weight_sq(
        &DVector::from_element(1, 1.0),
        &DVector::zeros(1),
        &DMatrix::identity(1, 1),
        1.0,
    )
    .unwrap();
    assert!((weight_sanity - 0.5).abs() < 1e-15);

    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |n: &str| filter.as_deref().is_none_or(|f| n.contains(f));
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let singles: [Criterion; 6] = [
        ("1 conjugacy oracle", criterion_1),
        ("2 antoniak law", criterion_2),
        ("3 path posterior fidelity", criterion_3),
        ("4 pif dichotomy", criterion_4),
        ("5 batch bookkeeping", criterion_5),
        ("6 prune correctness", criterion_6),
    ];
    for (name, f) in singles {
        if wanted(name) {
            results.push((name, f()));
        }
    }
    if wanted("7 forecast ordering") || wanted("8 segmentation") {
        let (c7, c8) = criteria_7_8();
        results.push(("7 forecast ordering", c7));
        results.push(("8 segmentation", c8));
    }
    let rest: [Criterion; 3] = [
        ("9 batch sweep monotonicity", criterion_9),
        ("10 reduction identity", criterion_10),
        ("11 determinism", criterion_11),
    ];
    for (name, f) in rest {
        if wanted(name) {
            results.push((name, f()));
        }
    }

    let mut failed = 0;
    for (name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {name}: {tag}: {}", o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
