//! GARCH filtering, dependence fitting and pairwise coverage backtests over a
//! return panel.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use taildep::baselines::{fit_baseline, BaselineKind};
use taildep::coverage::{
    coverage_csv, lexicographic_pairs, pairwise_coverage_matrix, CoverageResult, JointSample, PairSampler,
    TAU_STAR_TOL,
};
use taildep::garch::{garch_filter_full, garch_fit, garch_forecast_path, Filtered, GarchFit, GarchOptions};
use taildep::learning::{fit_onefactor, fit_triangular, FitOptions, StageDiagnostic, StageKind};
use taildep::model_io::{write_model, ModelFile};
use taildep::rng::derive_seed;
use taildep::stats::{mean, variance};
use taildep::tail_metrics::{log_spaced, TailCurve, TailSide, RELIABILITY_FLOOR, TAIL_CURVE_HEADER};
use taildep::{JointSampler, Result as CoreResult};

use crate::config::{ModelChoice, RunSettings};
use crate::error::{CliError, Result};
use crate::panel::ReturnPanel;

/// Upper end of the emitted tail curves.
pub const CURVE_TAU_MAX: f64 = 0.1;
pub const CURVE_POINTS: usize = 25;

const SAMPLE_TAG: u64 = 0x5A;
const COVERAGE_TAG: u64 = 0xC0;
const CURVE_TAG: u64 = 0xCC;

/// Per-series GARCH fits on the training rows.
#[derive(Debug, Clone)]
pub struct GarchStage {
    pub fits: Vec<GarchFit>,
    /// Training residuals without the first row, `(split - 1) x n`.
    pub residuals: DMatrix<f64>,
    /// Conditional moments over the test rows.
    pub forecasts: Vec<Filtered>,
}

pub fn garch_stage(panel: &ReturnPanel) -> Result<GarchStage> {
    let opts = GarchOptions::default();
    let per_series: Vec<Result<(GarchFit, Vec<f64>, Filtered)>> = (0..panel.n_series())
        .into_par_iter()
        .map(|j| {
            let tag = CliError::stage(format!("garch[{}]", panel.names[j]));
            let train = panel.train_column(j);
            let fit = garch_fit(&train, &opts).map_err(tag)?;
            if fit.near_integrated {
                log::warn!("{}: near-integrated variance (persistence {:.5})", panel.names[j], fit.params.persistence());
            }
            let tag = CliError::stage(format!("garch[{}]", panel.names[j]));
            let filtered = garch_filter_full(&train, &fit.params).map_err(tag)?;
            let forecast = garch_forecast_path(&fit, &panel.test_column(j));
            Ok((fit, filtered.residuals[1..].to_vec(), forecast))
        })
        .collect();
    let mut fits = Vec::new();
    let mut cols = Vec::new();
    let mut forecasts = Vec::new();
    for r in per_series {
        let (f, c, fc) = r?;
        fits.push(f);
        cols.push(c);
        forecasts.push(fc);
    }
    let k = cols[0].len();
    let residuals = DMatrix::from_fn(k, cols.len(), |t, j| cols[j][t]);
    Ok(GarchStage {
        fits,
        residuals,
        forecasts,
    })
}

/// Fitted dependence structure over the panel's columns.
#[derive(Debug, Clone)]
pub struct DependenceFit {
    /// One joint model, or one bivariate model per pair in lexicographic order.
    pub models: Vec<ModelFile>,
    pub pairwise: bool,
    /// Panel column of each model coordinate (joint models only).
    pub order: Vec<usize>,
    pub diagnostics: Vec<StageDiagnostic>,
}

fn factor_order(n: usize, market: usize) -> Result<Vec<usize>> {
    if market >= n {
        return Err(CliError::Config(format!("market column {market} out of range for {n} series")));
    }
    Ok(std::iter::once(market).chain((0..n).filter(|&j| j != market)).collect())
}

fn reorder(data: &DMatrix<f64>, order: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(data.nrows(), order.len(), |t, k| data[(t, order[k])])
}

pub fn fit_dependence(residuals: &DMatrix<f64>, s: &RunSettings) -> Result<DependenceFit> {
    let n = residuals.ncols();
    let tag = || CliError::stage("fit");
    let opts = FitOptions::default();
    let identity: Vec<usize> = (0..n).collect();
    let out = match s.model {
        ModelChoice::Triangular => {
            let report = fit_triangular(residuals, &s.grid.levels(), s.law(), s.reduced, &opts).map_err(tag())?;
            let m = report.triangular().cloned().expect("triangular fit");
            DependenceFit {
                models: vec![ModelFile::Triangular(m)],
                pairwise: false,
                order: identity,
                diagnostics: report.diagnostics,
            }
        }
        ModelChoice::OneFactor => {
            let order = factor_order(n, s.market)?;
            let data = reorder(residuals, &order);
            let market: Vec<f64> = data.column(0).iter().copied().collect();
            let assets = data.columns(1, n - 1).into_owned();
            let report = fit_onefactor(&market, &assets, &s.grid.levels(), s.law(), &opts).map_err(tag())?;
            let m = report.one_factor().cloned().expect("one-factor fit");
            DependenceFit {
                models: vec![ModelFile::OneFactor(m)],
                pairwise: false,
                order,
                diagnostics: report.diagnostics,
            }
        }
        ModelChoice::Baseline(kind) if kind.is_copula() => {
            let models = lexicographic_pairs(n)
                .into_iter()
                .map(|(i, j)| {
                    let pair = reorder(residuals, &[i, j]);
                    fit_baseline(kind, &pair)
                        .map(ModelFile::Baseline)
                        .map_err(CliError::stage(format!("fit[{i},{j}]")))
                })
                .collect::<Result<Vec<_>>>()?;
            DependenceFit {
                models,
                pairwise: true,
                order: identity,
                diagnostics: Vec::new(),
            }
        }
        ModelChoice::Baseline(kind) => {
            let order = if matches!(kind, BaselineKind::OneFactorGaussian | BaselineKind::OneFactorT) {
                factor_order(n, s.market)?
            } else {
                identity
            };
            let m = fit_baseline(kind, &reorder(residuals, &order)).map_err(tag())?;
            DependenceFit {
                models: vec![ModelFile::Baseline(m)],
                pairwise: false,
                order,
                diagnostics: Vec::new(),
            }
        }
    };
    Ok(out)
}

/// Sampler over a fitted model expressed in panel column order.
pub enum ModelSampler {
    Joint(JointSample),
    Pairwise { models: Vec<ModelFile>, n: usize, samples: usize },
}

impl ModelSampler {
    pub fn new(fit: &DependenceFit, n: usize, samples: usize, seed: u64) -> Result<Self> {
        if fit.pairwise {
            return Ok(ModelSampler::Pairwise {
                models: fit.models.clone(),
                n,
                samples,
            });
        }
        let s = fit.models[0]
            .sample(samples, derive_seed(seed, SAMPLE_TAG))
            .map_err(CliError::stage("sample"))?;
        let mut panel_order = DMatrix::zeros(samples, n);
        for (k, &col) in fit.order.iter().enumerate() {
            panel_order.set_column(col, &s.column(k));
        }
        Ok(ModelSampler::Joint(JointSample(panel_order)))
    }
}

impl PairSampler for ModelSampler {
    fn dim(&self) -> usize {
        match self {
            ModelSampler::Joint(j) => j.dim(),
            ModelSampler::Pairwise { n, .. } => *n,
        }
    }

    fn pair_sample(&self, i: usize, j: usize, seed: u64) -> CoreResult<(Vec<f64>, Vec<f64>)> {
        match self {
            ModelSampler::Joint(s) => s.pair_sample(i, j, seed),
            ModelSampler::Pairwise { models, n, samples } => {
                let idx = lexicographic_pairs(*n)
                    .iter()
                    .position(|&p| p == (i, j))
                    .ok_or_else(|| taildep::Error::InvalidInput(format!("no model for pair ({i},{j})")))?;
                let s = models[idx].sample(*samples, seed)?;
                Ok((s.column(0).iter().copied().collect(), s.column(1).iter().copied().collect()))
            }
        }
    }
}

/// Log-spaced levels from `max(1e-3, floor / samples)` to [`CURVE_TAU_MAX`];
/// empty when the sample is too small for any reliable level.
pub fn curve_levels(samples: usize) -> Vec<f64> {
    let lo = (RELIABILITY_FLOOR / samples as f64).max(1e-3);
    if lo >= CURVE_TAU_MAX {
        return Vec::new();
    }
    log_spaced(lo, CURVE_TAU_MAX, CURVE_POINTS)
}

/// Down- and up-side curves for every pair.
pub fn pair_curves(sampler: &dyn PairSampler, taus: &[f64], seed: u64) -> CoreResult<Vec<TailCurve>> {
    if taus.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (k, (i, j)) in lexicographic_pairs(sampler.dim()).into_iter().enumerate() {
        let (x, y) = sampler.pair_sample(i, j, derive_seed(seed, k as u64))?;
        for side in [TailSide::Down, TailSide::Up] {
            out.push(TailCurve::from_samples(&x, &y, (i, j), taus, side)?);
        }
    }
    Ok(out)
}

pub fn tailcurves_csv(curves: &[TailCurve]) -> String {
    let mut s = format!("{TAIL_CURVE_HEADER}\n");
    for c in curves {
        c.write_rows(&mut s);
    }
    s
}

/// Results of a full run.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub garch: GarchStage,
    pub dependence: DependenceFit,
    pub coverage: Vec<CoverageResult>,
    pub curves: Vec<TailCurve>,
}

impl PipelineOutcome {
    pub fn rejections(&self) -> usize {
        self.coverage.iter().filter(|r| r.reject_95).count()
    }
}

/// Coverage tests of `test` rows against a fitted dependence structure.
pub fn backtest(
    panel: &ReturnPanel,
    forecasts: &[Filtered],
    sampler: &ModelSampler,
    s: &RunSettings,
) -> Result<Vec<CoverageResult>> {
    if panel.test_len() == 0 {
        return Err(CliError::Config("split leaves no test rows".into()));
    }
    pairwise_coverage_matrix(
        &panel.test_matrix(),
        forecasts,
        sampler,
        s.tau,
        TAU_STAR_TOL,
        derive_seed(s.seed, COVERAGE_TAG),
    )
    .map_err(CliError::stage("coverage"))
}

/// Filter, fit, sample and backtest. Nothing is written.
pub fn run_on_panel(panel: &ReturnPanel, s: &RunSettings) -> Result<PipelineOutcome> {
    s.validate()?;
    if panel.n_series() < 2 {
        return Err(CliError::Config("the pipeline needs at least two series".into()));
    }
    if panel.test_len() == 0 {
        return Err(CliError::Config("split leaves no test rows".into()));
    }
    let garch = garch_stage(panel)?;
    let dependence = fit_dependence(&garch.residuals, s)?;
    let sampler = ModelSampler::new(&dependence, panel.n_series(), s.samples, s.seed)?;
    let coverage = backtest(panel, &garch.forecasts, &sampler, s)?;
    let curves = pair_curves(&sampler, &curve_levels(s.samples), derive_seed(s.seed, CURVE_TAG))
        .map_err(CliError::stage("tailcurves"))?;
    Ok(PipelineOutcome {
        garch,
        dependence,
        coverage,
        curves,
    })
}

pub fn models_csv(models: &[ModelFile]) -> String {
    models.iter().map(write_model).collect()
}

pub const DIAGNOSTICS_HEADER: &str = "component,id,field,value";

/// Long-format diagnostics: GARCH parameters and flags per series, residual
/// moments per series, and one block per dependence-fit stage.
pub fn diagnostics_csv(names: &[String], garch: &GarchStage, fit_diag: &[StageDiagnostic]) -> String {
    let mut s = format!("{DIAGNOSTICS_HEADER}\n");
    for (name, f) in names.iter().zip(&garch.fits) {
        let p = &f.params;
        for (field, v) in [
            ("gamma0", p.gamma0),
            ("gamma1", p.gamma1),
            ("beta0", p.beta0),
            ("beta1", p.beta1),
            ("beta2", p.beta2),
            ("nu", p.nu),
            ("loglik", f.loglik),
            ("initial_loglik", f.initial_loglik),
        ] {
            let _ = writeln!(s, "garch,{name},{field},{v:?}");
        }
        let _ = writeln!(s, "garch,{name},iterations,{}", f.iterations);
        let _ = writeln!(s, "garch,{name},near_integrated,{}", f.near_integrated);
    }
    for (j, name) in names.iter().enumerate() {
        let col: Vec<f64> = garch.residuals.column(j).iter().copied().collect();
        let _ = writeln!(s, "residuals,{name},n,{}", col.len());
        let _ = writeln!(s, "residuals,{name},mean,{:?}", mean(&col));
        let _ = writeln!(s, "residuals,{name},variance,{:?}", variance(&col));
    }
    for d in fit_diag {
        let id = format!("{}:{}", d.stage, d.against);
        let kind = match d.kind {
            StageKind::Quantile => "quantile",
            StageKind::Moment => "moment",
        };
        let _ = writeln!(s, "fit,{id},kind,{kind}");
        let _ = writeln!(s, "fit,{id},objective,{:?}", d.objective);
        let _ = writeln!(s, "fit,{id},residual_norm,{:?}", d.residual_norm);
        let _ = writeln!(s, "fit,{id},iterations,{}", d.iterations);
        let _ = writeln!(s, "fit,{id},converged,{}", d.converged);
    }
    s
}

/// CSV outputs of a run, keyed by file name.
pub fn outcome_files(panel: &ReturnPanel, o: &PipelineOutcome) -> Vec<(String, String)> {
    vec![
        ("model.csv".into(), models_csv(&o.dependence.models)),
        ("coverage.csv".into(), coverage_csv(&o.coverage)),
        ("tailcurves.csv".into(), tailcurves_csv(&o.curves)),
        (
            "diagnostics.csv".into(),
            diagnostics_csv(&panel.names, &o.garch, &o.dependence.diagnostics),
        ),
    ]
}
