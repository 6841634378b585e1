//! AR(1)-GARCH(1,1) with standardized Student-t innovations.
//!
//! ```text
//! r_t       = gamma0 + gamma1 r_{t-1} + sigma_t eps_t
//! sigma_t^2 = beta0 + beta1 (sigma_{t-1} eps_{t-1})^2 + beta2 sigma_{t-1}^2
//! ```
//!
//! `eps_t` has unit variance. The first observation is only a conditioning
//! value for the AR term; the likelihood starts at the second, with the
//! initial variance set to the sample variance of the series.

use rand::Rng;
use rand_distr::StudentT;
use statrs::function::gamma::ln_gamma;

use crate::error::{check_param, Error, Result};
use crate::optim::NelderMead;
use crate::rng::stream_rng;
use crate::stats::{mean, variance};

/// Burn-in discarded by [`garch_simulate`].
pub const BURN_IN: usize = 1_000;
/// Fits with `beta1 + beta2` above this are flagged as near-integrated.
pub const NEAR_INTEGRATED: f64 = 0.999;
const STATIONARITY_MARGIN: f64 = 1e-4;
const NU_LOG_RANGE: (f64, f64) = (-4.6, 6.9);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GarchParams {
    pub gamma0: f64,
    pub gamma1: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub nu: f64,
}

impl GarchParams {
    pub fn validate(&self) -> Result<()> {
        check_param("gamma0", self.gamma0, true, "must be finite")?;
        check_param("gamma1", self.gamma1, true, "must be finite")?;
        check_param("beta0", self.beta0, self.beta0 > 0.0, "need beta0 > 0")?;
        check_param("beta1", self.beta1, self.beta1 >= 0.0, "need beta1 >= 0")?;
        check_param("beta2", self.beta2, self.beta2 >= 0.0, "need beta2 >= 0")?;
        let s = self.beta1 + self.beta2;
        check_param("beta1 + beta2", s, s < 1.0, "need beta1 + beta2 < 1")?;
        check_param("nu", self.nu, self.nu > 2.0, "need nu > 2")
    }

    pub fn persistence(&self) -> f64 {
        self.beta1 + self.beta2
    }

    pub fn unconditional_variance(&self) -> f64 {
        self.beta0 / (1.0 - self.persistence())
    }

    /// Variance for the step after `state`.
    pub fn next_variance(&self, state: &GarchState) -> f64 {
        let shock = state.eps * state.eps * state.sigma2;
        self.beta0 + self.beta1 * shock + self.beta2 * state.sigma2
    }

    /// `(mu, sigma^2)` for the step after `state`.
    pub fn step(&self, state: &GarchState) -> (f64, f64) {
        (self.gamma0 + self.gamma1 * state.r, self.next_variance(state))
    }
}

/// Conditional variance, standardized residual and return at one date.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GarchState {
    pub sigma2: f64,
    pub eps: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GarchFit {
    pub params: GarchParams,
    /// State at the last training observation.
    pub last_state: GarchState,
    pub loglik: f64,
    /// Log-likelihood at the initializer.
    pub initial_loglik: f64,
    pub near_integrated: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct GarchOptions {
    pub min_obs: usize,
    pub optimizer: NelderMead,
}

impl Default for GarchOptions {
    fn default() -> Self {
        GarchOptions {
            min_obs: 500,
            optimizer: NelderMead {
                max_iter: 20_000,
                ..NelderMead::default()
            },
        }
    }
}

/// Log density of the unit-variance Student-t.
struct StdT {
    nu: f64,
    log_norm: f64,
}

impl StdT {
    fn new(nu: f64) -> Self {
        let log_norm = ln_gamma(0.5 * (nu + 1.0))
            - ln_gamma(0.5 * nu)
            - 0.5 * (std::f64::consts::PI * (nu - 2.0)).ln();
        StdT { nu, log_norm }
    }

    fn ln_pdf(&self, e: f64) -> f64 {
        self.log_norm - 0.5 * (self.nu + 1.0) * (e * e / (self.nu - 2.0)).ln_1p()
    }
}

/// Standardized residuals and conditional moments of a filtered series.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub residuals: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub last_state: GarchState,
}

/// Runs the recursion from `(r_prev, sigma2_next)`; the starting values
/// produce the moments of `returns[0]`.
pub fn garch_filter_from(returns: &[f64], p: &GarchParams, r_prev: f64, sigma2_next: f64) -> Filtered {
    let n = returns.len();
    let mut out = Filtered {
        residuals: Vec::with_capacity(n),
        mu: Vec::with_capacity(n),
        sigma: Vec::with_capacity(n),
        last_state: GarchState {
            sigma2: sigma2_next,
            eps: 0.0,
            r: r_prev,
        },
    };
    let (mut r_prev, mut s2) = (r_prev, sigma2_next);
    for &r in returns {
        let mu = p.gamma0 + p.gamma1 * r_prev;
        let sd = s2.sqrt();
        let eps = (r - mu) / sd;
        out.residuals.push(eps);
        out.mu.push(mu);
        out.sigma.push(sd);
        out.last_state = GarchState { sigma2: s2, eps, r };
        s2 = p.next_variance(&out.last_state);
        r_prev = r;
    }
    out
}

/// Filters a full series with the default start: `returns[0]` conditions the
/// AR term and the first variance is the sample variance. The first residual
/// is the unconditional standardization of `returns[0]`.
pub fn garch_filter_full(returns: &[f64], p: &GarchParams) -> Result<Filtered> {
    if returns.len() < 2 {
        return Err(Error::InvalidInput("need at least two returns to filter".into()));
    }
    let (m, var) = (mean(returns), variance(returns));
    if !(var > 0.0) {
        return Err(Error::DegenerateSample("zero variance".into()));
    }
    let mut f = garch_filter_from(&returns[1..], p, returns[0], var);
    f.residuals.insert(0, (returns[0] - m) / var.sqrt());
    f.mu.insert(0, m);
    f.sigma.insert(0, var.sqrt());
    Ok(f)
}

/// Standardized residuals of a series under a fit.
pub fn garch_filter(returns: &[f64], fit: &GarchFit) -> Result<Vec<f64>> {
    Ok(garch_filter_full(returns, &fit.params)?.residuals)
}

/// Rolls a fitted model through data that follow the fitted sample, with
/// parameters frozen.
pub fn garch_forecast_path(fit: &GarchFit, returns: &[f64]) -> Filtered {
    let s2 = fit.params.next_variance(&fit.last_state);
    garch_filter_from(returns, &fit.params, fit.last_state.r, s2)
}

/// One-step-ahead `(mu, sigma)` after the fit's last state.
pub fn garch_forecast(fit: &GarchFit, r_prev: f64) -> (f64, f64) {
    let p = &fit.params;
    (p.gamma0 + p.gamma1 * r_prev, p.next_variance(&fit.last_state).sqrt())
}

fn loglik(returns: &[f64], p: &GarchParams, var0: f64) -> f64 {
    let t = StdT::new(p.nu);
    let (mut r_prev, mut s2) = (returns[0], var0);
    let mut ll = 0.0;
    for &r in &returns[1..] {
        let mu = p.gamma0 + p.gamma1 * r_prev;
        let eps = (r - mu) / s2.sqrt();
        ll += t.ln_pdf(eps) - 0.5 * s2.ln();
        let state = GarchState { sigma2: s2, eps, r };
        s2 = p.next_variance(&state);
        r_prev = r;
    }
    ll
}

/// Log-likelihood of `returns` under `p`, conditioning on the first value.
pub fn garch_loglik(returns: &[f64], p: &GarchParams) -> Result<f64> {
    p.validate()?;
    if returns.len() < 2 {
        return Err(Error::InvalidInput("need at least two returns".into()));
    }
    let var = variance(returns);
    if !(var > 0.0) {
        return Err(Error::DegenerateSample("zero variance".into()));
    }
    Ok(loglik(returns, p, var))
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn decode(x: &[f64]) -> GarchParams {
    let s = logistic(x[3]) * (1.0 - STATIONARITY_MARGIN);
    let w = logistic(x[4]);
    GarchParams {
        gamma0: x[0],
        gamma1: x[1].tanh(),
        beta0: x[2].exp(),
        beta1: s * w,
        beta2: s * (1.0 - w),
        nu: 2.0 + x[5].clamp(NU_LOG_RANGE.0, NU_LOG_RANGE.1).exp(),
    }
}

fn encode(p: &GarchParams) -> Vec<f64> {
    let s = p.persistence() / (1.0 - STATIONARITY_MARGIN);
    vec![
        p.gamma0,
        p.gamma1.atanh(),
        p.beta0.ln(),
        logit(s),
        logit(p.beta1 / p.persistence()),
        (p.nu - 2.0).ln(),
    ]
}

/// Maximum-likelihood fit with three restarts.
pub fn garch_fit(returns: &[f64], opts: &GarchOptions) -> Result<GarchFit> {
    if returns.len() < opts.min_obs {
        return Err(Error::InvalidInput(format!(
            "need at least {} returns, got {}",
            opts.min_obs,
            returns.len()
        )));
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidInput("non-finite return".into()));
    }
    let var = variance(returns);
    if !(var > 0.0) {
        return Err(Error::DegenerateSample("zero variance".into()));
    }
    let m = mean(returns);
    let start = |s: f64, w: f64| GarchParams {
        gamma0: m,
        gamma1: 0.0,
        beta0: var * (1.0 - s),
        beta1: s * w,
        beta2: s * (1.0 - w),
        nu: 8.0,
    };
    let inits = [start(0.9, 0.1), start(0.5, 0.5), start(0.98, 0.05)];
    let initial_loglik = loglik(returns, &inits[0], var);
    let starts: Vec<Vec<f64>> = inits.iter().map(encode).collect();
    let sd = var.sqrt();
    let step = [0.1 * sd, 0.1, 0.5, 1.0, 1.0, 0.5];
    let best = opts
        .optimizer
        .minimize_restarts(|x| -loglik(returns, &decode(x), var), &starts, &step);
    let params = decode(&best.x);
    if !best.converged {
        return Err(Error::NonConvergence {
            what: "garch likelihood",
            best: vec![params.gamma0, params.gamma1, params.beta0, params.beta1, params.beta2, params.nu],
            objective: best.f,
        });
    }
    let filtered = garch_filter_from(&returns[1..], &params, returns[0], var);
    let near_integrated = params.persistence() > NEAR_INTEGRATED;
    if near_integrated {
        log::warn!("near-integrated variance: beta1 + beta2 = {:.5}", params.persistence());
    }
    Ok(GarchFit {
        params,
        last_state: filtered.last_state,
        loglik: -best.f,
        initial_loglik,
        near_integrated,
        iterations: best.iterations,
    })
}

/// A simulated path together with the state preceding its first value, so
/// that [`garch_filter_from`] recovers the innovations exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    pub returns: Vec<f64>,
    pub innovations: Vec<f64>,
    pub r_prev: f64,
    pub sigma2_next: f64,
}

/// Unit-variance Student-t draws.
pub fn standardized_t_sample<R: Rng + ?Sized>(rng: &mut R, nu: f64, n: usize) -> Vec<f64> {
    let t = StudentT::new(nu).expect("nu > 2 validated by caller");
    let scale = ((nu - 2.0) / nu).sqrt();
    (0..n).map(|_| rng.sample(t) * scale).collect()
}

pub fn garch_simulate_path(p: &GarchParams, n: usize, seed: u64) -> Result<SimulatedPath> {
    p.validate()?;
    let mut rng = stream_rng(seed, 0);
    let eps = standardized_t_sample(&mut rng, p.nu, n + BURN_IN);
    let mut r_prev = p.gamma0 / (1.0 - p.gamma1).max(f64::EPSILON);
    if !r_prev.is_finite() {
        r_prev = 0.0;
    }
    let mut s2 = p.unconditional_variance();
    let mut returns = Vec::with_capacity(n);
    let mut start = (r_prev, s2);
    for (t, &e) in eps.iter().enumerate() {
        if t == BURN_IN {
            start = (r_prev, s2);
        }
        let r = reconstruct_step(p, r_prev, s2, e);
        if t >= BURN_IN {
            returns.push(r);
        }
        s2 = p.next_variance(&GarchState { sigma2: s2, eps: e, r });
        r_prev = r;
    }
    Ok(SimulatedPath {
        returns,
        innovations: eps[BURN_IN..].to_vec(),
        r_prev: start.0,
        sigma2_next: start.1,
    })
}

fn reconstruct_step(p: &GarchParams, r_prev: f64, s2: f64, e: f64) -> f64 {
    p.gamma0 + p.gamma1 * r_prev + s2.sqrt() * e
}

/// Simulates `n` returns after a burn-in of [`BURN_IN`] steps.
pub fn garch_simulate(p: &GarchParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(garch_simulate_path(p, n, seed)?.returns)
}

/// Rebuilds returns from innovations; inverse of [`garch_filter_from`].
pub fn garch_reconstruct(innovations: &[f64], p: &GarchParams, r_prev: f64, sigma2_next: f64) -> Vec<f64> {
    let (mut r_prev, mut s2) = (r_prev, sigma2_next);
    innovations
        .iter()
        .map(|&e| {
            let r = reconstruct_step(p, r_prev, s2, e);
            s2 = p.next_variance(&GarchState { sigma2: s2, eps: e, r });
            r_prev = r;
            r
        })
        .collect()
}
