//! Synthetic return panels: GARCH dynamics driven by innovations from any
//! joint sampler.

use chrono::{Datelike, NaiveDate, Weekday};
use nalgebra::DMatrix;
use taildep::garch::{garch_reconstruct, GarchParams, BURN_IN};
use taildep::rng::derive_seed;
use taildep::stats::{mean, std_dev};
use taildep::{JointSampler, TriangularModel};

use crate::error::{CliError, Result};
use crate::panel::ReturnPanel;

/// `(gamma0, gamma1, beta0, beta1, beta2, nu) = (0.05, 0.10, 0.05, 0.10, 0.85, 6)`.
pub fn default_garch() -> GarchParams {
    GarchParams {
        gamma0: 0.05,
        gamma1: 0.10,
        beta0: 0.05,
        beta1: 0.10,
        beta2: 0.85,
        nu: 6.0,
    }
}

/// `sigma_ii = 1`, `sigma_ij = 0.5`, `u = 1`, `v = 1.5` everywhere.
pub fn baseline_triangular(n: usize) -> TriangularModel {
    TriangularModel::uniform(n, (1.0, 1.0, 1.5), (0.5, 1.0, 1.5)).expect("valid baseline parameters")
}

/// Weekdays starting at 2000-01-03.
pub fn business_days(n: usize) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

/// Simulates `rows` returns per series. Innovation columns are standardized
/// to zero mean and unit variance with their own sample moments, which keeps
/// the joint law inside the sampler's location-scale family, and the first
/// [`BURN_IN`] steps are discarded.
pub fn synthetic_panel(
    innovations: &dyn JointSampler,
    garch: &GarchParams,
    rows: usize,
    split: f64,
    seed: u64,
) -> Result<ReturnPanel> {
    garch.validate().map_err(CliError::stage("synthesize"))?;
    let total = rows + BURN_IN;
    let z = innovations
        .sample(total, derive_seed(seed, 1))
        .map_err(CliError::stage("synthesize"))?;
    let n = z.ncols();
    let r0 = garch.gamma0 / (1.0 - garch.gamma1);
    let s0 = garch.unconditional_variance();
    let mut returns = DMatrix::zeros(rows, n);
    for j in 0..n {
        let col: Vec<f64> = z.column(j).iter().copied().collect();
        let (m, sd) = (mean(&col), std_dev(&col));
        let e: Vec<f64> = col.iter().map(|v| (v - m) / sd).collect();
        let r = garch_reconstruct(&e, garch, r0, s0);
        for (t, v) in r[BURN_IN..].iter().enumerate() {
            returns[(t, j)] = *v;
        }
    }
    let names = (1..=n).map(|k| format!("S{k}")).collect();
    ReturnPanel::new(business_days(rows), names, returns, split)
}
