//! JSON experiment configuration.
//!
//! One document drives every CLI command. Unknown keys are rejected and
//! parse failures name the offending key path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{
    gen_highdim_linear, gen_iid_regime, gen_ofi_ar, load_csv, CsvSchema, FeatureMap, HighDimConfig, OfiConfig,
    RegimeDgpConfig, TimeSeries,
};
use crate::error::{Error, Result};
use crate::filter::{FilterConfig, Variant};
use crate::metrics::{PifSandbox, DEFAULT_RUN_THRESHOLD};
use crate::rng::RngStream;

/// Stream id reserved for data generation, away from the particle streams.
pub const DATA_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub model: Option<FilterConfig>,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub pif: Option<PifSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum DatasetSpec {
    IidRegime(RegimeDgpConfig),
    HighDim(HighDimConfig),
    OfiAr(OfiConfig),
    Csv(CsvDataset),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvDataset {
    pub path: PathBuf,
    #[serde(default)]
    pub schema: CsvSchema,
    #[serde(default = "identity_map")]
    pub feature_map: FeatureMap,
}

fn identity_map() -> FeatureMap {
    FeatureMap::Identity
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Artifact {
    Predictions,
    Summary,
    Segmentation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub seed: u64,
    pub repeats: usize,
    pub out: PathBuf,
    pub artifacts: Vec<Artifact>,
    /// Minimum length of a minority run counted as a false positive.
    pub run_threshold: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            repeats: 1,
            out: PathBuf::from("out"),
            artifacts: vec![Artifact::Predictions, Artifact::Summary, Artifact::Segmentation],
            run_threshold: DEFAULT_RUN_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PifVariant {
    pub variant: Variant,
    #[serde(default = "one")]
    pub batch_size: usize,
}

fn one() -> usize {
    1
}

impl PifVariant {
    pub fn label(&self) -> String {
        match self.variant {
            Variant::Batched => format!("batched_b{}", self.batch_size),
            v => v.name().to_string(),
        }
    }
}

/// Offsets, in units of the gap between the sandbox states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OffsetGrid {
    Range { min: f64, max: f64, points: usize },
    List(Vec<f64>),
}

impl OffsetGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OffsetGrid::List(v) => v.clone(),
            &OffsetGrid::Range { min, max, points } => {
                if points == 1 {
                    return vec![min];
                }
                let step = (max - min) / (points - 1) as f64;
                (0..points).map(|i| min + step * i as f64).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObsPifSpec {
    pub prior_var: f64,
    pub obs_var: f64,
    pub c: f64,
    pub contamination: Vec<f64>,
}

impl Default for ObsPifSpec {
    fn default() -> Self {
        Self {
            prior_var: 1.0,
            obs_var: 1.0,
            c: 1.0,
            contamination: (0..=8).map(|k| 10f64.powi(k)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PifSpec {
    pub sandbox: PifSandbox,
    pub offsets: OffsetGrid,
    pub variants: Vec<PifVariant>,
    pub observation: Option<ObsPifSpec>,
}

impl Default for PifSpec {
    fn default() -> Self {
        Self {
            sandbox: PifSandbox::default(),
            offsets: OffsetGrid::Range {
                min: -1.5,
                max: 1.5,
                points: 61,
            },
            variants: vec![
                PifVariant { variant: Variant::Plain, batch_size: 1 },
                PifVariant { variant: Variant::Wolf, batch_size: 1 },
                PifVariant { variant: Variant::Batched, batch_size: 6 },
            ],
            observation: Some(ObsPifSpec::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub batch_sizes: Vec<usize>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            batch_sizes: vec![1, 2, 4, 8, 16],
        }
    }
}

impl DatasetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::IidRegime(_) => "iid_regime",
            DatasetSpec::HighDim(_) => "high_dim",
            DatasetSpec::OfiAr(_) => "ofi_ar",
            DatasetSpec::Csv(_) => "csv",
        }
    }

    pub fn is_generator(&self) -> bool {
        !matches!(self, DatasetSpec::Csv(_))
    }

    pub fn feature_map(&self) -> FeatureMap {
        match self {
            DatasetSpec::IidRegime(_) => FeatureMap::Identity,
            DatasetSpec::HighDim(_) | DatasetSpec::OfiAr(_) => FeatureMap::Linear,
            DatasetSpec::Csv(c) => c.feature_map.clone(),
        }
    }

    /// Generate (or load) the series. Generators draw from `(seed, DATA_STREAM)`.
    pub fn load(&self, seed: u64, base_dir: &Path) -> Result<TimeSeries> {
        let mut rng = RngStream::new(seed, DATA_STREAM);
        let series = match self {
            DatasetSpec::IidRegime(c) => gen_iid_regime(c, &mut rng)?,
            DatasetSpec::HighDim(c) => gen_highdim_linear(c, &mut rng)?,
            DatasetSpec::OfiAr(c) => gen_ofi_ar(c, &mut rng)?,
            DatasetSpec::Csv(c) => {
                let path = if c.path.is_absolute() { c.path.clone() } else { base_dir.join(&c.path) };
                load_csv(&path, &c.schema)?
            }
        };
        if series.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        Ok(series)
    }

    fn validate(&self) -> Result<()> {
        let length = match self {
            DatasetSpec::IidRegime(c) => c.length,
            DatasetSpec::HighDim(c) => c.length,
            DatasetSpec::OfiAr(c) => c.length,
            DatasetSpec::Csv(_) => return Ok(()),
        };
        if length == 0 {
            return Err(Error::Config("dataset.length must be at least 1".into()));
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Check every block that is present. Returns warnings for overridden settings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if let Some(d) = &self.dataset {
            d.validate()?;
        }
        if let Some(m) = &self.model {
            warnings.extend(m.validate()?);
        }
        if self.run.repeats == 0 {
            return Err(Error::Config("run.repeats must be at least 1".into()));
        }
        if self.run.run_threshold == 0 {
            return Err(Error::Config("run.run_threshold must be at least 1".into()));
        }
        if let Some(p) = &self.pif {
            let grid = p.offsets.values();
            if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("pif.offsets must be a non-empty finite grid".into()));
            }
            if let OffsetGrid::Range { points: 0, .. } = p.offsets {
                return Err(Error::Config("pif.offsets.points must be at least 1".into()));
            }
            if p.variants.iter().any(|v| v.batch_size == 0) {
                return Err(Error::Config("pif.variants batch_size must be at least 1".into()));
            }
            let sb = &p.sandbox;
            if !(sb.state_var > 0.0 && sb.obs_var > 0.0 && sb.prior_var > 0.0 && sb.imq_scale_sq > 0.0 && sb.alpha > 0.0)
            {
                return Err(Error::Config("pif.sandbox variances, alpha and imq_scale_sq must be positive".into()));
            }
            if sb.gap() == 0.0 {
                return Err(Error::Config("pif.sandbox means must differ".into()));
            }
            if let Some(o) = &p.observation {
                if !(o.prior_var > 0.0 && o.obs_var > 0.0 && o.c > 0.0) {
                    return Err(Error::Config("pif.observation variances and c must be positive".into()));
                }
            }
        }
        if let Some(s) = &self.sweep {
            if s.batch_sizes.is_empty() || s.batch_sizes.contains(&0) {
                return Err(Error::Config("sweep.batch_sizes must be non-empty and positive".into()));
            }
        }
        Ok(warnings)
    }
}
