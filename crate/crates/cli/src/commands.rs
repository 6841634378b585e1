//! Command-line surface.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use taildep::coverage::{coverage_csv, lexicographic_pairs};
use taildep::garch::garch_forecast_path;
use taildep::model_io::{read_models, ModelFile};
use taildep::rng::derive_seed;
use taildep::JointSampler;

use crate::config::{GridChoice, ModelChoice, PipelineConfig, RunSettings, DEFAULT_SAMPLES, DEFAULT_TAU};
use crate::error::{CliError, Result};
use crate::manifest::{OutputSet, RunManifest};
use crate::panel::{ingest_csv, IngestOptions, InputMode, ReturnPanel, DATE_FORMAT, DEFAULT_SPLIT};
use crate::pipeline::{
    backtest, curve_levels, diagnostics_csv, fit_dependence, garch_stage, models_csv, outcome_files, pair_curves,
    run_on_panel, tailcurves_csv, DependenceFit, ModelSampler,
};
use crate::synth::{baseline_triangular, default_garch, synthetic_panel};

#[derive(Debug, Parser)]
#[command(name = "taildep", version, about = "Tail dependence models and pairwise coverage backtests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit GARCH filters and a dependence model on the training rows.
    Fit(FitArgs),
    /// Sample a saved model and emit its tail-dependence curves.
    Simulate(SimulateArgs),
    /// Proxy tail-dependence curves of every column pair of the input.
    Taildep(TaildepArgs),
    /// Fit GARCH filters on the training rows and emit residuals for all rows.
    GarchFilter(DataArgs),
    /// Coverage tests of a saved model on the test rows.
    Backtest(BacktestArgs),
    /// Full run: filter, fit, sample, backtest.
    Pipeline(PipelineArgs),
    /// Write a synthetic price panel.
    Synthesize(SynthesizeArgs),
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "prices")]
    pub mode: InputMode,
    #[arg(long, default_value_t = DEFAULT_SPLIT)]
    pub split: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    #[arg(long, default_value = "triangular")]
    pub model: ModelChoice,
    #[arg(long)]
    pub reduced: bool,
    #[arg(long, default_value = "99")]
    pub grid: GridChoice,
    /// Student-t latent law with this many degrees of freedom.
    #[arg(long)]
    pub latent_df: Option<f64>,
    /// Column used as the market factor by the one-factor models.
    #[arg(long, default_value_t = 0)]
    pub market: usize,
}

#[derive(Debug, Args, Clone)]
pub struct SamplingArgs {
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Clone)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args, Clone)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model_file: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct TaildepArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "returns")]
    pub mode: InputMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model_file: PathBuf,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Args, Clone)]
pub struct PipelineArgs {
    /// TOML config; when given, the other flags are ignored.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "prices")]
    pub mode: InputMode,
    #[arg(long, default_value_t = DEFAULT_SPLIT)]
    pub split: f64,
    #[arg(long, required_unless_present = "config")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Args, Clone)]
pub struct SynthesizeArgs {
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8000)]
    pub rows: usize,
    #[arg(long, default_value_t = 3)]
    pub series: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "prices")]
    pub mode: InputMode,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => fit_cmd(&a),
        Command::Simulate(a) => simulate_cmd(&a),
        Command::Taildep(a) => taildep_cmd(&a),
        Command::GarchFilter(a) => garch_filter_cmd(&a),
        Command::Backtest(a) => backtest_cmd(&a),
        Command::Pipeline(a) => {
            let cfg = match &a.config {
                Some(p) => PipelineConfig::load(p)?,
                None => PipelineConfig {
                    input: a.input.clone().expect("required by clap"),
                    mode: a.mode,
                    model: a.model.model,
                    out: a.out.clone().expect("required by clap"),
                    reduced: a.model.reduced,
                    tau: a.sampling.tau,
                    grid: a.model.grid,
                    samples: a.sampling.samples,
                    seed: a.sampling.seed,
                    split: a.split,
                    latent_df: a.model.latent_df,
                    market: a.model.market,
                },
            };
            run_pipeline(&cfg).map(|_| ())
        }
        Command::Synthesize(a) => synthesize_cmd(&a),
    }
}

fn load_panel(input: &Path, mode: InputMode, split: f64, manifest: &mut RunManifest) -> Result<ReturnPanel> {
    let panel = ingest_csv(
        input,
        &IngestOptions {
            split,
            ..IngestOptions::new(mode)
        },
    )?;
    manifest.input(input)?;
    manifest.columns = panel.names.clone();
    manifest.settings.push(("mode".into(), mode.as_str().into()));
    manifest.settings.push(("split".into(), format!("{split:?}")));
    Ok(panel)
}

fn load_models(path: &Path, manifest: &mut RunManifest) -> Result<Vec<ModelFile>> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(format!("read {}", path.display())))?;
    manifest.input(path)?;
    read_models(&text).map_err(CliError::stage("model"))
}

/// Runs the full pipeline described by `cfg` and writes its outputs.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let s = cfg.settings();
    s.validate()?;
    let mut manifest = RunManifest::new("pipeline");
    let panel = load_panel(&cfg.input, cfg.mode, cfg.split, &mut manifest)?;
    manifest.settings.extend(s.manifest_lines().into_iter().filter(|(k, _)| k != "split"));
    let outcome = run_on_panel(&panel, &s)?;
    log::info!(
        "{} of {} pairs rejected at the 95% level",
        outcome.rejections(),
        outcome.coverage.len()
    );
    let mut out = OutputSet::new(&cfg.out);
    for (name, contents) in outcome_files(&panel, &outcome) {
        out.add(name, contents);
    }
    out.commit(manifest)
}

pub fn fit_cmd(a: &FitArgs) -> Result<()> {
    let s = RunSettings {
        model: a.model.model,
        reduced: a.model.reduced,
        grid: a.model.grid,
        split: a.data.split,
        latent_df: a.model.latent_df,
        market: a.model.market,
        ..RunSettings::default()
    };
    s.validate()?;
    let mut manifest = RunManifest::new("fit");
    let panel = load_panel(&a.data.input, a.data.mode, a.data.split, &mut manifest)?;
    for (k, v) in s.manifest_lines() {
        if matches!(k.as_str(), "model" | "reduced" | "grid" | "latent" | "market") {
            manifest.settings.push((k, v));
        }
    }
    let garch = garch_stage(&panel)?;
    let dep = fit_dependence(&garch.residuals, &s)?;
    let mut out = OutputSet::new(&a.data.out);
    out.add("model.csv", models_csv(&dep.models));
    out.add("diagnostics.csv", diagnostics_csv(&panel.names, &garch, &dep.diagnostics));
    out.commit(manifest).map(|_| ())
}

fn single_model(models: Vec<ModelFile>) -> Result<ModelFile> {
    match <[ModelFile; 1]>::try_from(models) {
        Ok([m]) => Ok(m),
        Err(v) => Err(CliError::Config(format!("expected one model, found {}", v.len()))),
    }
}

fn samples_csv(m: &nalgebra::DMatrix<f64>) -> String {
    let mut s = (0..m.ncols()).map(|j| format!("y{j}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for row in m.row_iter() {
        let mut first = true;
        for v in row.iter() {
            if !first {
                s.push(',');
            }
            first = false;
            let _ = write!(s, "{v:?}");
        }
        s.push('\n');
    }
    s
}

/// Samples a model file; emits the sample and the curves of every pair.
pub fn simulate_cmd(a: &SimulateArgs) -> Result<()> {
    let mut manifest = RunManifest::new("simulate");
    let model = single_model(load_models(&a.model_file, &mut manifest)?)?;
    manifest.settings.push(("samples".into(), a.samples.to_string()));
    manifest.settings.push(("seed".into(), a.seed.to_string()));
    let n = model.dim();
    let fit = DependenceFit {
        models: vec![model],
        pairwise: false,
        order: (0..n).collect(),
        diagnostics: Vec::new(),
    };
    let sampler = ModelSampler::new(&fit, n, a.samples, a.seed)?;
    let curves = pair_curves(&sampler, &curve_levels(a.samples), a.seed).map_err(CliError::stage("tailcurves"))?;
    let ModelSampler::Joint(sample) = &sampler else {
        unreachable!("single joint model")
    };
    let mut out = OutputSet::new(&a.out);
    out.add("samples.csv", samples_csv(&sample.0));
    out.add("tailcurves.csv", tailcurves_csv(&curves));
    out.commit(manifest).map(|_| ())
}

pub fn taildep_cmd(a: &TaildepArgs) -> Result<()> {
    let mut manifest = RunManifest::new("taildep");
    let panel = load_panel(&a.input, a.mode, 1.0, &mut manifest)?;
    let sampler = taildep::coverage::JointSample(panel.returns.clone());
    let curves = pair_curves(&sampler, &curve_levels(panel.len()), 0).map_err(CliError::stage("tailcurves"))?;
    if curves.is_empty() {
        log::warn!("{} rows are too few for any reliable tail level", panel.len());
    }
    let mut out = OutputSet::new(&a.out);
    out.add("tailcurves.csv", tailcurves_csv(&curves));
    out.commit(manifest).map(|_| ())
}

pub fn garch_filter_cmd(a: &DataArgs) -> Result<()> {
    let mut manifest = RunManifest::new("garch-filter");
    let panel = load_panel(&a.input, a.mode, a.split, &mut manifest)?;
    let garch = garch_stage(&panel)?;
    // Row 0 has no AR conditioning value and is left out; rows from
    // `split_index` on are test rows.
    let mut csv = String::from("date");
    for n in &panel.names {
        let _ = write!(csv, ",{n}");
    }
    csv.push('\n');
    let test: Vec<Vec<f64>> = (0..panel.n_series())
        .map(|j| garch_forecast_path(&garch.fits[j], &panel.test_column(j)).residuals)
        .collect();
    for t in 1..panel.len() {
        let _ = write!(csv, "{}", panel.dates[t].format(DATE_FORMAT));
        let in_train = t < panel.split_index;
        for j in 0..panel.n_series() {
            let v = if in_train {
                garch.residuals[(t - 1, j)]
            } else {
                test[j][t - panel.split_index]
            };
            let _ = write!(csv, ",{v:?}");
        }
        csv.push('\n');
    }
    let mut out = OutputSet::new(&a.out);
    out.add("residuals.csv", csv);
    out.add("diagnostics.csv", diagnostics_csv(&panel.names, &garch, &[]));
    out.commit(manifest).map(|_| ())
}

/// Coverage tests with a model file whose coordinates follow the input
/// columns (a file of several bivariate models covers the pairs in
/// lexicographic order).
pub fn backtest_cmd(a: &BacktestArgs) -> Result<()> {
    let mut manifest = RunManifest::new("backtest");
    let models = load_models(&a.model_file, &mut manifest)?;
    let panel = load_panel(&a.data.input, a.data.mode, a.data.split, &mut manifest)?;
    let s = RunSettings {
        tau: a.sampling.tau,
        samples: a.sampling.samples,
        seed: a.sampling.seed,
        split: a.data.split,
        ..RunSettings::default()
    };
    s.validate()?;
    for (k, v) in s.manifest_lines() {
        if matches!(k.as_str(), "tau" | "samples" | "seed") {
            manifest.settings.push((k, v));
        }
    }
    let n = panel.n_series();
    let pairwise = models.len() > 1;
    let expected = if pairwise { lexicographic_pairs(n).len() } else { 1 };
    let dims_ok = models.iter().all(|m| m.dim() == if pairwise { 2 } else { n });
    if models.len() != expected || !dims_ok {
        return Err(CliError::Config(format!(
            "model file does not match {n} input series ({} models)",
            models.len()
        )));
    }
    let fit = DependenceFit {
        models,
        pairwise,
        order: (0..n).collect(),
        diagnostics: Vec::new(),
    };
    let garch = garch_stage(&panel)?;
    let sampler = ModelSampler::new(&fit, n, s.samples, s.seed)?;
    let coverage = backtest(&panel, &garch.forecasts, &sampler, &s)?;
    let mut out = OutputSet::new(&a.data.out);
    out.add("coverage.csv", coverage_csv(&coverage));
    out.add("diagnostics.csv", diagnostics_csv(&panel.names, &garch, &[]));
    out.commit(manifest).map(|_| ())
}

/// Panel driven by the baseline triangular innovations and default GARCH.
pub fn synthesize_cmd(a: &SynthesizeArgs) -> Result<()> {
    if a.series == 0 {
        return Err(CliError::Config("series must be positive".into()));
    }
    let panel = synthetic_panel(
        &baseline_triangular(a.series),
        &default_garch(),
        a.rows,
        DEFAULT_SPLIT,
        derive_seed(a.seed, 0x51),
    )?;
    let text = match a.mode {
        InputMode::Prices => panel.to_prices_csv(),
        InputMode::Returns => panel.to_returns_csv(),
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(CliError::io(format!("create {}", dir.display())))?;
    }
    std::fs::write(&a.out, text).map_err(CliError::io(format!("write {}", a.out.display())))
}
