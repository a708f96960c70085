//! Synthetic regime-switching generators, CSV ingestion and feature maps.
//!
//! CSV schema: a header row; `t` (optional), `y` or `y_0..y_{d-1}`, optional
//! `x_0..x_{k-1}`, optional `state` and optional `outlier` (0/1).

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::emission::EmissionContext;
use crate::error::{Error, Result};
use crate::rng::{sample_multinomial_index, RngStream};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    /// Covariates `x_t`; empty inner vectors for mean-only models.
    pub inputs: Vec<Vec<f64>>,
    pub observations: Vec<DVector<f64>>,
    pub true_states: Option<Vec<usize>>,
    pub outlier_flags: Option<Vec<bool>>,
    pub true_changepoints: Option<Vec<usize>>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.observations.first().map_or(0, |y| y.len())
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.len())
    }

    /// Check that all sequences have the same length.
    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        if self.inputs.len() != t {
            return Err(Error::shape(format!("{} inputs for {t} observations", self.inputs.len())));
        }
        let d = self.obs_dim();
        if self.observations.iter().any(|y| y.len() != d) {
            return Err(Error::shape("observations of differing dimension"));
        }
        if let Some(s) = &self.true_states {
            if s.len() != t {
                return Err(Error::shape("true_states length differs"));
            }
        }
        if let Some(f) = &self.outlier_flags {
            if f.len() != t {
                return Err(Error::shape("outlier_flags length differs"));
            }
        }
        Ok(())
    }

    /// Emission contexts for every tick under a feature map, `R = noise * I`.
    pub fn contexts(&self, map: &FeatureMap, obs_noise: f64) -> Result<Vec<EmissionContext>> {
        let d = self.obs_dim();
        let noise = DMatrix::identity(d, d) * obs_noise;
        self.inputs
            .iter()
            .enumerate()
            .map(|(t, x)| {
                let f = map.matrix(x, t, d)?;
                EmissionContext::new(f, noise.clone())
            })
            .collect()
    }
}

/// Indices `t >= 1` at which the state sequence changes.
pub fn changepoints(states: &[usize]) -> Vec<usize> {
    (1..states.len()).filter(|&t| states[t] != states[t - 1]).collect()
}

/// How covariates become the feature matrix `F_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FeatureMap {
    /// `F = I_d`: each state has its own mean.
    Identity,
    /// Scalar response, `F = xᵀ` (one row).
    Linear,
    /// Polynomial weather terms plus seasonal harmonics.
    Electricity { degree: usize, periods: Vec<f64> },
}

impl FeatureMap {
    pub fn param_dim(&self, input_dim: usize, obs_dim: usize) -> usize {
        match self {
            FeatureMap::Identity => obs_dim,
            FeatureMap::Linear => input_dim,
            FeatureMap::Electricity { degree, periods } => 1 + degree * input_dim + 2 * periods.len(),
        }
    }

    pub fn matrix(&self, x: &[f64], t: usize, obs_dim: usize) -> Result<DMatrix<f64>> {
        match self {
            FeatureMap::Identity => Ok(DMatrix::identity(obs_dim, obs_dim)),
            FeatureMap::Linear => {
                if obs_dim != 1 || x.is_empty() {
                    return Err(Error::Config("linear feature map needs a scalar response and covariates".into()));
                }
                Ok(DMatrix::from_row_slice(1, x.len(), x))
            }
            FeatureMap::Electricity { degree, periods } => {
                if obs_dim != 1 {
                    return Err(Error::Config("electricity feature map needs a scalar response".into()));
                }
                let f = electricity_features(x, t, *degree, periods)?;
                Ok(DMatrix::from_row_slice(1, f.len(), &f))
            }
        }
    }
}

/// `[1, x, x², …, x^p, cos(2πt/Q), sin(2πt/Q) for each Q]`.
pub fn electricity_features(x: &[f64], t: usize, degree: usize, periods: &[f64]) -> Result<Vec<f64>> {
    if degree < 1 {
        return Err(Error::Config("polynomial degree must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(1 + degree * x.len() + 2 * periods.len());
    out.push(1.0);
    for p in 1..=degree {
        out.extend(x.iter().map(|v| v.powi(p as i32)));
    }
    for &q in periods {
        let phase = 2.0 * std::f64::consts::PI * t as f64 / q;
        out.push(phase.cos());
        out.push(phase.sin());
    }
    Ok(out)
}

pub const DEFAULT_PERIODS: [f64; 2] = [24.0, 24.0 * 182.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Noise {
    Gaussian { var: f64 },
    /// `scale * t(df)`.
    StudentT { df: f64, scale: f64 },
}

impl Noise {
    /// t(3) rescaled to unit variance.
    pub fn unit_t3() -> Self {
        Noise::StudentT {
            df: 3.0,
            scale: (1.0f64 / 3.0).sqrt(),
        }
    }

    fn sample(&self, rng: &mut RngStream) -> Result<f64> {
        match *self {
            Noise::Gaussian { var } => {
                if !(var >= 0.0) {
                    return Err(Error::Config(format!("noise variance must be non-negative, got {var}")));
                }
                Ok(var.sqrt() * rng.standard_normal())
            }
            Noise::StudentT { df, scale } => Ok(scale * rng.student_t(df)?),
        }
    }
}

/// Isolated outliers: each tick is replaced (or shifted) with probability `probability`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsolatedOutliers {
    pub probability: f64,
    pub low: f64,
    pub high: f64,
    /// Add the draw to the clean value instead of replacing it.
    #[serde(default)]
    pub additive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeDgpConfig {
    pub transition: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub noise: Noise,
    pub length: usize,
    /// Starts of the burst windows.
    #[serde(default)]
    pub bursts: Vec<usize>,
    #[serde(default = "default_burst_offsets")]
    pub burst_offsets: Vec<f64>,
    #[serde(default)]
    pub isolated: Option<IsolatedOutliers>,
}

fn default_burst_offsets() -> Vec<f64> {
    vec![1.0, 3.0, 5.0, 3.0, 1.0]
}

/// `K` regimes staying put with probability `stay`, switching uniformly otherwise.
pub fn sticky_transition(k: usize, stay: f64) -> Vec<Vec<f64>> {
    let off = if k > 1 { (1.0 - stay) / (k - 1) as f64 } else { 0.0 };
    (0..k)
        .map(|i| (0..k).map(|j| if i == j { if k > 1 { stay } else { 1.0 } } else { off }).collect())
        .collect()
}

impl Default for RegimeDgpConfig {
    fn default() -> Self {
        Self {
            transition: sticky_transition(3, 0.995),
            means: vec![-2.0, 0.0, 2.0],
            noise: Noise::Gaussian { var: 0.25 },
            length: 1180,
            bursts: vec![134, 411, 900],
            burst_offsets: default_burst_offsets(),
            isolated: None,
        }
    }
}

impl RegimeDgpConfig {
    /// Scaled-t noise `2√(2/3) e ~ t(3)`.
    pub fn t_noise() -> Noise {
        Noise::StudentT {
            df: 3.0,
            scale: 1.0 / (2.0 * (2.0f64 / 3.0).sqrt()),
        }
    }
}

fn validate_transition(p: &[Vec<f64>]) -> Result<()> {
    if p.is_empty() || p.iter().any(|r| r.len() != p.len()) {
        return Err(Error::Config("transition matrix must be square and non-empty".into()));
    }
    for (i, r) in p.iter().enumerate() {
        if r.iter().any(|&v| !(v >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("transition row {i} is not a probability vector")));
        }
    }
    Ok(())
}

fn markov_path(p: &[Vec<f64>], t: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    let mut states = Vec::with_capacity(t);
    let mut s = 0;
    for _ in 0..t {
        s = sample_multinomial_index(rng, &p[s])?;
        states.push(s);
    }
    Ok(states)
}

fn check_isolated(o: &IsolatedOutliers) -> Result<()> {
    if !(0.0..=1.0).contains(&o.probability) || !(o.low <= o.high) {
        return Err(Error::Config("outlier probability must lie in [0, 1] with low <= high".into()));
    }
    Ok(())
}

/// Mean-switching regimes `y_t = θ_{s_t} + e_t` with burst and/or isolated
/// outliers. The chain starts from state 0.
pub fn gen_iid_regime(cfg: &RegimeDgpConfig, rng: &mut RngStream) -> Result<TimeSeries> {
    validate_transition(&cfg.transition)?;
    if cfg.means.len() != cfg.transition.len() {
        return Err(Error::Config("one mean per regime required".into()));
    }
    if cfg.length == 0 {
        return Err(Error::Config("length must be positive".into()));
    }
    let w = cfg.burst_offsets.len();
    for &c in &cfg.bursts {
        if c + w > cfg.length {
            return Err(Error::Config(format!(
                "burst starting at {c} does not fit in a series of length {}",
                cfg.length
            )));
        }
    }
    let states = markov_path(&cfg.transition, cfg.length, rng)?;
    let mut y = Vec::with_capacity(cfg.length);
    for &s in &states {
        y.push(cfg.means[s] + cfg.noise.sample(rng)?);
    }
    let mut flags = vec![false; cfg.length];
    for &c in &cfg.bursts {
        for (k, off) in cfg.burst_offsets.iter().enumerate() {
            y[c + k] += off;
            flags[c + k] = true;
        }
    }
    if let Some(o) = &cfg.isolated {
        check_isolated(o)?;
        for t in 0..cfg.length {
            if rng.uniform() < o.probability {
                let v = o.low + (o.high - o.low) * rng.uniform();
                y[t] = if o.additive { y[t] + v } else { v };
                flags[t] = true;
            }
        }
    }
    Ok(TimeSeries {
        inputs: vec![Vec::new(); cfg.length],
        observations: y.into_iter().map(|v| DVector::from_element(1, v)).collect(),
        true_changepoints: Some(changepoints(&states)),
        true_states: Some(states),
        outlier_flags: Some(flags),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HighDimConfig {
    pub length: usize,
    pub dim: usize,
    pub num_regimes: usize,
    pub stay: f64,
    pub noise: Noise,
    pub outlier_probability: f64,
    pub outlier_low: f64,
    pub outlier_high: f64,
    /// Minimum pairwise distance between regime parameter vectors.
    pub min_separation: f64,
}

impl Default for HighDimConfig {
    fn default() -> Self {
        Self {
            length: 2500,
            dim: 100,
            num_regimes: 3,
            stay: 0.995,
            noise: Noise::unit_t3(),
            outlier_probability: 0.01,
            outlier_low: -600.0,
            outlier_high: 600.0,
            min_separation: 5.0,
        }
    }
}

/// Regime-dependent linear regression `y_t = x_tᵀ θ_{s_t} + e_t` with
/// `x_t ~ N(0, I)` and replacement outliers.
pub fn gen_highdim_linear(cfg: &HighDimConfig, rng: &mut RngStream) -> Result<TimeSeries> {
    if cfg.length == 0 || cfg.dim == 0 || cfg.num_regimes == 0 {
        return Err(Error::Config("length, dim and num_regimes must be positive".into()));
    }
    check_isolated(&IsolatedOutliers {
        probability: cfg.outlier_probability,
        low: cfg.outlier_low,
        high: cfg.outlier_high,
        additive: false,
    })?;
    let mut thetas: Vec<DVector<f64>> = Vec::with_capacity(cfg.num_regimes);
    let mut attempts = 0;
    while thetas.len() < cfg.num_regimes {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Config("could not draw separated regime parameters".into()));
        }
        let cand = DVector::from_fn(cfg.dim, |_, _| rng.standard_normal());
        if thetas.iter().all(|t| (t - &cand).norm() >= cfg.min_separation) {
            thetas.push(cand);
        }
    }
    let p = sticky_transition(cfg.num_regimes, cfg.stay);
    let states = markov_path(&p, cfg.length, rng)?;
    let mut inputs = Vec::with_capacity(cfg.length);
    let mut y = Vec::with_capacity(cfg.length);
    let mut flags = Vec::with_capacity(cfg.length);
    for &s in &states {
        let x: Vec<f64> = (0..cfg.dim).map(|_| rng.standard_normal()).collect();
        let clean = x.iter().zip(thetas[s].iter()).map(|(a, b)| a * b).sum::<f64>() + cfg.noise.sample(rng)?;
        let outlier = rng.uniform() < cfg.outlier_probability;
        y.push(if outlier {
            cfg.outlier_low + (cfg.outlier_high - cfg.outlier_low) * rng.uniform()
        } else {
            clean
        });
        flags.push(outlier);
        inputs.push(x);
    }
    Ok(TimeSeries {
        inputs,
        observations: y.into_iter().map(|v| DVector::from_element(1, v)).collect(),
        true_changepoints: Some(changepoints(&states)),
        true_states: Some(states),
        outlier_flags: Some(flags),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfiConfig {
    pub length: usize,
    pub rho: f64,
    pub sigma: f64,
    pub thetas: Vec<f64>,
    pub stay: f64,
}

impl Default for OfiConfig {
    fn default() -> Self {
        Self {
            length: 2000,
            rho: 0.114,
            sigma: 1.0,
            thetas: vec![-1.0, 0.0, 1.0],
            stay: 0.995,
        }
    }
}

/// Regime-dependent AR(1) `y_t = ρ y_{t-1} − (1−ρ) θ_{s_t} + e_t`,
/// `e_t ~ N(0, σ²(1−ρ²))`. Inputs are the feature rows `[ρ−1, ρ y_{t−1}]`,
/// so with the linear map the parameters are `[θ_s, 1]`.
pub fn gen_ofi_ar(cfg: &OfiConfig, rng: &mut RngStream) -> Result<TimeSeries> {
    if !(cfg.rho.abs() < 1.0) {
        return Err(Error::Config(format!("|rho| must be below 1, got {}", cfg.rho)));
    }
    if cfg.length == 0 || cfg.thetas.is_empty() {
        return Err(Error::Config("length and thetas must be non-empty".into()));
    }
    let p = sticky_transition(cfg.thetas.len(), cfg.stay);
    let states = markov_path(&p, cfg.length, rng)?;
    let sd = cfg.sigma * (1.0 - cfg.rho * cfg.rho).sqrt();
    let mut prev = 0.0;
    let mut inputs = Vec::with_capacity(cfg.length);
    let mut y = Vec::with_capacity(cfg.length);
    for &s in &states {
        inputs.push(vec![cfg.rho - 1.0, cfg.rho * prev]);
        let v = cfg.rho * prev - (1.0 - cfg.rho) * cfg.thetas[s] + sd * rng.standard_normal();
        y.push(v);
        prev = v;
    }
    Ok(TimeSeries {
        inputs,
        observations: y.into_iter().map(|v| DVector::from_element(1, v)).collect(),
        true_changepoints: Some(changepoints(&states)),
        true_states: Some(states),
        outlier_flags: None,
    })
}

/// Column mapping for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    /// Response columns; empty means auto-detect `y` or `y_0, y_1, …`.
    #[serde(default)]
    pub y: Vec<String>,
    /// Covariate columns; empty means every `x_*` column.
    #[serde(default)]
    pub x: Vec<String>,
    #[serde(default)]
    pub state: Option<String>,
    #[serde(default)]
    pub outlier: Option<String>,
    /// z-score every response and covariate column.
    #[serde(default)]
    pub standardize: bool,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| parse_err(1, format!("missing column {name:?}")))
}

fn standardize_columns(cols: &mut [Vec<f64>]) {
    for c in cols.iter_mut() {
        let n = c.len() as f64;
        let mean = c.iter().sum::<f64>() / n;
        let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for v in c.iter_mut() {
            *v = (*v - mean) / sd;
        }
    }
}

/// Read a series from CSV. Missing or non-numeric cells are parse errors with
/// the 1-based file line number.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => parse_err(1, format!("{other:?}")),
        })?;
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let y_names: Vec<String> = if schema.y.is_empty() {
        if headers.iter().any(|h| h == "y") {
            vec!["y".into()]
        } else {
            let mut v = Vec::new();
            while headers.iter().any(|h| h == format!("y_{}", v.len())) {
                v.push(format!("y_{}", v.len()));
            }
            if v.is_empty() {
                return Err(parse_err(1, "missing column \"y\""));
            }
            v
        }
    } else {
        schema.y.clone()
    };
    let x_names: Vec<String> = if schema.x.is_empty() {
        headers.iter().filter(|h| h.starts_with("x_")).map(String::from).collect()
    } else {
        schema.x.clone()
    };
    let y_idx = y_names.iter().map(|n| column_index(&headers, n)).collect::<Result<Vec<_>>>()?;
    let x_idx = x_names.iter().map(|n| column_index(&headers, n)).collect::<Result<Vec<_>>>()?;
    let state_idx = match &schema.state {
        Some(n) => Some(column_index(&headers, n)?),
        None => headers.iter().position(|h| h == "state"),
    };
    let outlier_idx = match &schema.outlier {
        Some(n) => Some(column_index(&headers, n)?),
        None => headers.iter().position(|h| h == "outlier"),
    };

    let mut ycols = vec![Vec::new(); y_idx.len()];
    let mut xcols = vec![Vec::new(); x_idx.len()];
    let mut states = Vec::new();
    let mut flags = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let num = |i: usize, name: &str| -> Result<f64> {
            let cell = rec.get(i).map(str::trim).unwrap_or("");
            if cell.is_empty() {
                return Err(parse_err(line, format!("missing value in column {name:?}")));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric value {cell:?} in column {name:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value in column {name:?}")));
            }
            Ok(v)
        };
        for (k, &i) in y_idx.iter().enumerate() {
            ycols[k].push(num(i, &y_names[k])?);
        }
        for (k, &i) in x_idx.iter().enumerate() {
            xcols[k].push(num(i, &x_names[k])?);
        }
        if let Some(i) = state_idx {
            let v = num(i, "state")?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(parse_err(line, "state must be a non-negative integer"));
            }
            states.push(v as usize);
        }
        if let Some(i) = outlier_idx {
            flags.push(num(i, "outlier")? != 0.0);
        }
    }
    let t = ycols.first().map_or(0, Vec::len);
    if t == 0 {
        return Err(parse_err(2, "no data rows"));
    }
    if schema.standardize {
        standardize_columns(&mut ycols);
        standardize_columns(&mut xcols);
    }
    let observations = (0..t)
        .map(|r| DVector::from_iterator(ycols.len(), ycols.iter().map(|c| c[r])))
        .collect();
    let inputs = (0..t).map(|r| xcols.iter().map(|c| c[r]).collect()).collect();
    let true_states = state_idx.map(|_| states);
    Ok(TimeSeries {
        inputs,
        observations,
        true_changepoints: true_states.as_deref().map(changepoints),
        true_states,
        outlier_flags: outlier_idx.map(|_| flags),
    })
}

/// Write a series in the CSV schema above.
pub fn write_csv<W: Write>(series: &TimeSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = series.obs_dim();
    let k = series.input_dim();
    let mut header = vec!["t".to_string()];
    if d == 1 {
        header.push("y".into());
    } else {
        header.extend((0..d).map(|i| format!("y_{i}")));
    }
    header.extend((0..k).map(|i| format!("x_{i}")));
    if series.true_states.is_some() {
        header.push("state".into());
    }
    if series.outlier_flags.is_some() {
        header.push("outlier".into());
    }
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(&header).map_err(csv_err)?;
    for t in 0..series.len() {
        let mut row = vec![t.to_string()];
        row.extend(series.observations[t].iter().map(|v| format!("{v}")));
        row.extend(series.inputs[t].iter().map(|v| format!("{v}")));
        if let Some(s) = &series.true_states {
            row.push(s[t].to_string());
        }
        if let Some(f) = &series.outlier_flags {
            row.push(if f[t] { "1" } else { "0" }.into());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
