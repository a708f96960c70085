//! Command-line driver: `synth`, `run`, `pif-sweep` and `batch-sweep`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{Artifact, DatasetSpec, ExperimentConfig};
use crate::datasets::{write_csv, TimeSeries};
use crate::emission::GaussianBelief;
use crate::error::{Error, Result};
use crate::filter::{run_stream, FilterConfig, RunOutput, Variant};
use crate::metrics::{empirical_obs_pif, empirical_state_pif, mae, rmse, state_match, ObsUpdate, SegmentationReport};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "BRIHMM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "brihmm", version, about = "Streaming robust infinite HMM experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic series and write series.csv and meta.json.
    Synth(CommonArgs),
    /// Run the configured variant and write predictions and metrics.
    Run(CommonArgs),
    /// Sweep contamination offsets and write pif.csv.
    PifSweep(CommonArgs),
    /// Run the batched variant over a grid of batch sizes.
    BatchSweep(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `run.out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Validate the config and exit without writing anything.
    #[arg(long)]
    pub dry_run: bool,
}

/// Parse arguments, run the command and map failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match configure_threads().and_then(|_| dispatch(&cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // Fails only if a pool already exists, in which case it is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cmd: &Command) -> Result<()> {
    let (args, f): (&CommonArgs, fn(&Context) -> Result<()>) = match cmd {
        Command::Synth(a) => (a, cmd_synth),
        Command::Run(a) => (a, cmd_run),
        Command::PifSweep(a) => (a, cmd_pif_sweep),
        Command::BatchSweep(a) => (a, cmd_batch_sweep),
    };
    let ctx = Context::load(args)?;
    let need_model = matches!(cmd, Command::Run(_));
    let need_dataset = !matches!(cmd, Command::PifSweep(_));
    if need_dataset && ctx.config.dataset.is_none() {
        return Err(Error::Config("missing `dataset` block".into()));
    }
    if need_model && ctx.config.model.is_none() {
        return Err(Error::Config("missing `model` block".into()));
    }
    for w in &ctx.warnings {
        eprintln!("warning: {w}");
    }
    if args.dry_run {
        return Ok(());
    }
    fs::create_dir_all(&ctx.out)?;
    f(&ctx)
}

/// Resolved config plus CLI overrides.
pub struct Context {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub base_dir: PathBuf,
    pub warnings: Vec<String>,
}

impl Context {
    fn load(args: &CommonArgs) -> Result<Self> {
        let config = ExperimentConfig::from_path(&args.config)?;
        let warnings = config.validate()?;
        let base_dir = args
            .config
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self {
            seed: args.seed.unwrap_or(config.run.seed),
            out: args.out.clone().unwrap_or_else(|| config.run.out.clone()),
            config,
            base_dir,
            warnings,
        })
    }

    fn dataset(&self) -> &DatasetSpec {
        self.config.dataset.as_ref().expect("checked in dispatch")
    }

    fn seeds(&self) -> Vec<u64> {
        (0..self.config.run.repeats as u64).map(|r| self.seed + r).collect()
    }

    fn file(&self, stem: &str, ext: &str, seed: Option<u64>) -> PathBuf {
        match seed {
            Some(s) if self.config.run.repeats > 1 => self.out.join(format!("{stem}_seed{s}.{ext}")),
            _ => self.out.join(format!("{stem}.{ext}")),
        }
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.into()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn cmd_synth(ctx: &Context) -> Result<()> {
    let ds = ctx.dataset();
    if !ds.is_generator() {
        return Err(Error::Config("synth needs a generator dataset, not csv".into()));
    }
    let series = ds.load(ctx.seed, &ctx.base_dir)?;
    write_csv(&series, BufWriter::new(File::create(ctx.out.join("series.csv"))?))?;
    let mut truth = Vec::new();
    if series.true_states.is_some() {
        truth.push("state");
    }
    if series.outlier_flags.is_some() {
        truth.push("outlier");
    }
    write_json(
        &ctx.out.join("meta.json"),
        &json!({
            "seed": ctx.seed,
            "generator": ds.name(),
            "length": series.len(),
            "obs_dim": series.obs_dim(),
            "input_dim": series.input_dim(),
            "truth_columns": truth,
            "dataset": ds,
        }),
    )
}

/// Everything produced by one seeded run.
struct SeedRun {
    seed: u64,
    series: TimeSeries,
    output: RunOutput,
    seconds: f64,
}

fn run_seed(ctx: &Context, model: &FilterConfig, seed: u64) -> Result<SeedRun> {
    let ds = ctx.dataset();
    let series = ds.load(seed, &ctx.base_dir)?;
    let contexts = series.contexts(&ds.feature_map(), model.obs_noise)?;
    let mut cfg = model.clone();
    cfg.seed = seed;
    let start = Instant::now();
    let output = run_stream(&cfg, &contexts, &series.observations)?;
    Ok(SeedRun {
        seed,
        series,
        output,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn predictions(run: &SeedRun) -> Vec<DVector<f64>> {
    run.output.outputs.iter().map(|o| o.predictive_mean.clone()).collect()
}

fn segmentation(ctx: &Context, run: &SeedRun) -> Result<Option<SegmentationReport>> {
    let Some(cps) = &run.series.true_changepoints else {
        return Ok(None);
    };
    let states: Vec<u64> = run.output.outputs.iter().map(|o| o.map_state).collect();
    state_match(cps, &states, ctx.config.run.run_threshold).map(Some)
}

fn write_predictions(path: &Path, run: &SeedRun) -> Result<()> {
    let d = run.series.obs_dim();
    let mut w = csv_writer(path)?;
    let mut header = vec!["tick".to_string()];
    if d == 1 {
        header.extend(["pred_mean".to_string(), "pred_var".to_string()]);
    } else {
        header.extend((0..d).map(|i| format!("pred_mean_{i}")));
        header.extend((0..d).map(|i| format!("pred_var_{i}")));
    }
    header.extend(["map_state", "ess", "resampled"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for o in &run.output.outputs {
        let mut row = vec![o.tick.to_string()];
        row.extend(o.predictive_mean.iter().map(|v| v.to_string()));
        row.extend((0..d).map(|i| o.predictive_var[(i, i)].to_string()));
        row.push(o.map_state.to_string());
        row.push(o.ess.to_string());
        row.push(u8::from(o.resampled).to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn mean_sd(xs: &[f64]) -> Value {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    json!({ "mean": mean, "stdev": sd })
}

pub fn cmd_run(ctx: &Context) -> Result<()> {
    let model = ctx.config.model.as_ref().expect("checked in dispatch");
    let runs = ctx
        .seeds()
        .into_par_iter()
        .map(|s| run_seed(ctx, model, s))
        .collect::<Result<Vec<_>>>()?;
    let arts = &ctx.config.run.artifacts;
    let want = |a| arts.contains(&a);
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for run in &runs {
        let preds = predictions(run);
        let seg = segmentation(ctx, run)?;
        if want(Artifact::Predictions) {
            write_predictions(&ctx.file("predictions", "csv", Some(run.seed)), run)?;
        }
        if let (Some(rep), true) = (&seg, want(Artifact::Segmentation)) {
            write_json(
                &ctx.file("segmentation", "json", Some(run.seed)),
                &serde_json::to_value(rep).map_err(|e| Error::Io(e.into()))?,
            )?;
        }
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        for &l in &run.output.final_num_states {
            *hist.entry(l).or_default() += 1;
        }
        let d = run.output.diagnostics;
        rows.push(json!({
            "seed": run.seed,
            "rmse": rmse(&preds, &run.series.observations)?,
            "mae": mae(&preds, &run.series.observations)?,
            "final_num_states": hist,
            "runtime_seconds": run.seconds,
            "resample_events": d.resample_events,
            "segmentation": seg,
        }));
        if let Some(r) = seg {
            reports.push(r);
        }
    }
    if !want(Artifact::Summary) {
        return Ok(());
    }
    let pick = |key: &str| rows.iter().map(|r| r[key].as_f64().unwrap_or(f64::NAN)).collect::<Vec<_>>();
    let mut summary = json!({
        "variant": model.variant.name(),
        "dataset": ctx.dataset().name(),
        "batch_size": model.effective_batch_size(),
        "num_particles": model.num_particles,
        "runs": rows,
        "rmse": mean_sd(&pick("rmse")),
        "mae": mean_sd(&pick("mae")),
    });
    if !reports.is_empty() {
        let f = |g: fn(&SegmentationReport) -> f64| mean_sd(&reports.iter().map(g).collect::<Vec<_>>());
        summary["tpr"] = f(|r| r.tpr);
        summary["ppv"] = f(|r| r.ppv);
        summary["detection_delay"] = f(|r| r.detection_delay);
    }
    write_json(&ctx.out.join("summary.json"), &summary)
}

pub fn cmd_pif_sweep(ctx: &Context) -> Result<()> {
    let spec = ctx.config.pif.clone().unwrap_or_default();
    let offsets = spec.offsets.values();
    let curves = spec
        .variants
        .par_iter()
        .map(|v| empirical_state_pif(&spec.sandbox, v.variant, v.batch_size, &offsets))
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv_writer(&ctx.out.join("pif.csv"))?;
    w.write_record(["variant", "offset", "kl"]).map_err(csv_err)?;
    for (v, kls) in spec.variants.iter().zip(&curves) {
        for (o, k) in offsets.iter().zip(kls) {
            w.write_record([v.label(), o.to_string(), k.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush()?;
    if let Some(obs) = &spec.observation {
        let prior = GaussianBelief::isotropic(DVector::zeros(1), obs.prior_var);
        let mut w = csv_writer(&ctx.out.join("pif_obs.csv"))?;
        w.write_record(["update", "contamination", "kl"]).map_err(csv_err)?;
        for (name, upd) in [("kf", ObsUpdate::Kalman), ("wolf", ObsUpdate::Wolf { c: obs.c })] {
            let kls = empirical_obs_pif(&prior, obs.obs_var, 0.0, &obs.contamination, upd)?;
            for (y, k) in obs.contamination.iter().zip(kls) {
                w.write_record([name.to_string(), y.to_string(), k.to_string()]).map_err(csv_err)?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

pub fn cmd_batch_sweep(ctx: &Context) -> Result<()> {
    let sweep = ctx.config.sweep.clone().unwrap_or_default();
    let mut base = ctx
        .config
        .model
        .clone()
        .unwrap_or_else(|| FilterConfig::new(Variant::Batched));
    base.variant = Variant::Batched;
    let jobs: Vec<(usize, u64)> = sweep
        .batch_sizes
        .iter()
        .flat_map(|&b| ctx.seeds().into_iter().map(move |s| (b, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(b, s)| {
            let mut cfg = base.clone();
            cfg.batch_size = b;
            let run = run_seed(ctx, &cfg, s)?;
            let cps = run
                .series
                .true_changepoints
                .as_ref()
                .ok_or_else(|| Error::Config("batch-sweep needs a dataset with true states".into()))?;
            let preds = predictions(&run);
            let states: Vec<u64> = run.output.outputs.iter().map(|o| o.map_state).collect();
            let dd = if cps.is_empty() {
                None
            } else {
                Some(crate::metrics::detection_delay(&states, cps)?)
            };
            Ok((
                b,
                s,
                rmse(&preds, &run.series.observations)?,
                mae(&preds, &run.series.observations)?,
                dd,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut w = csv_writer(&ctx.out.join("batch_sweep.csv"))?;
    w.write_record(["batch_size", "seed", "rmse", "mae", "detection_delay"])
        .map_err(csv_err)?;
    for (b, s, r, m, dd) in results {
        w.write_record([
            b.to_string(),
            s.to_string(),
            r.to_string(),
            m.to_string(),
            dd.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
