//! Recursive parameter learning for the triangular and one-factor models.
//!
//! Each dimension `i` is handled in turn:
//!
//! 1. for every earlier latent `z_j`, the odd-moment equations
//!    `mean(y_i z_j^l) = sigma_ij mean(z_j^l g(z_j | u_ij, v_ij))`, `l = 1, 3, 5`,
//!    together with the same equation weighted by `z_j^2 - 1`, are solved for
//!    `(sigma_ij, u_ij, v_ij)`;
//! 2. the fitted contributions are subtracted, leaving `y_i'`;
//! 3. `(mu_i, sigma_ii, u_ii, v_ii)` come from multi-level quantile
//!    regression of `y_i'` on the HTQF with pinball loss;
//! 4. `z_i` is recovered by inverting the fitted HTQF.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dependence::{AssetParams, MarketParams, OneFactorModel, TriangularModel};
use crate::error::{Error, Result};
use crate::htqf::{HtqfParams, LatentLaw, Tail, DEFAULT_A, TAIL_MAX};
use crate::optim::NelderMead;
use crate::rng::chunked_sum;
use crate::stats::{median, std_dev};

/// Probability levels used by the quantile regression.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileGrid {
    levels: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidInput("quantile grid is empty".into()));
        }
        if levels.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::InvalidInput("quantile levels must lie in (0, 1)".into()));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("quantile levels must be strictly increasing".into()));
        }
        Ok(QuantileGrid { levels })
    }

    /// `{0.01, 0.02, ..., 0.99}`.
    pub fn fine() -> Self {
        QuantileGrid {
            levels: (1..=99).map(|k| k as f64 / 100.0).collect(),
        }
    }

    /// `{0.01, 0.05, 0.10, ..., 0.95, 0.99}`.
    pub fn coarse() -> Self {
        let mut levels = vec![0.01];
        levels.extend((1..=19).map(|k| k as f64 * 0.05));
        levels.push(0.99);
        QuantileGrid { levels }
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

impl Default for QuantileGrid {
    fn default() -> Self {
        Self::fine()
    }
}

/// Quantile-regression loss `(tau - 1[y < q]) (y - q)`.
pub fn pinball_loss(y: f64, q: f64, tau: f64) -> f64 {
    let ind = if y < q { 1.0 } else { 0.0 };
    (tau - ind) * (y - q)
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub a: f64,
    /// Minimum sample size accepted by every stage.
    pub min_obs: usize,
    pub optimizer: NelderMead,
    /// Relative residual norm below which a moment system counts as solved.
    pub moment_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            a: DEFAULT_A,
            min_obs: 200,
            optimizer: NelderMead::default(),
            moment_tol: 1e-6,
        }
    }
}

/// Multi-level pinball objective over a fixed sample.
///
/// Uses the sorted sample and its prefix sums, so evaluating the summed loss
/// at one quantile costs a binary search instead of a pass over the data:
/// `sum_k L_tau(y_k, q) = tau (S - K q) - (S_<q - c_<q q)`.
pub struct PinballObjective {
    sorted: Vec<f64>,
    prefix: Vec<f64>,
    levels: Vec<f64>,
    latent_q: Vec<f64>,
}

impl PinballObjective {
    pub fn new(data: &[f64], grid: &QuantileGrid, law: LatentLaw) -> Self {
        let mut sorted = data.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for &y in &sorted {
            acc += y;
            prefix.push(acc);
        }
        PinballObjective {
            sorted,
            prefix,
            levels: grid.levels().to_vec(),
            latent_q: grid.levels().iter().map(|&t| law.quantile(t)).collect(),
        }
    }

    /// `sum_k L_tau(y_k, q)`.
    pub fn level_loss(&self, tau: f64, q: f64) -> f64 {
        let k = self.sorted.len() as f64;
        let c = self.sorted.partition_point(|&y| y < q);
        let total = self.prefix[self.sorted.len()];
        let below = self.prefix[c];
        (tau * (total - k * q) - (below - c as f64 * q)).max(0.0)
    }

    /// `(1/K) sum_k sum_tau L_tau(y_k, Q(tau | params))`.
    pub fn evaluate(&self, p: &HtqfParams) -> f64 {
        let tail = p.tail();
        let sum: f64 = self
            .levels
            .iter()
            .zip(&self.latent_q)
            .map(|(&tau, &z)| self.level_loss(tau, p.mu + p.sigma * tail.g(z)))
            .sum();
        sum / self.sorted.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct UnivariateFit {
    pub params: HtqfParams,
    pub objective: f64,
    /// Objective at the Gaussian initializer.
    pub initial_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn decode_htqf(x: &[f64], a: f64) -> HtqfParams {
    HtqfParams {
        mu: x[0],
        sigma: x[1].exp(),
        u: decode_tail(x[2]),
        v: decode_tail(x[3]),
        a,
    }
}

const TAIL_LOG_MIN: f64 = -25.0;

fn decode_tail(x: f64) -> f64 {
    1.0 + x.clamp(TAIL_LOG_MIN, (TAIL_MAX - 1.0).ln()).exp()
}

fn encode_tail(t: f64) -> f64 {
    (t - 1.0).max((TAIL_LOG_MIN).exp()).ln()
}

fn check_sample(data: &[f64], opts: &FitOptions) -> Result<()> {
    if data.len() < opts.min_obs {
        return Err(Error::InvalidInput(format!(
            "need at least {} observations, got {}",
            opts.min_obs,
            data.len()
        )));
    }
    if data.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidInput("non-finite observation".into()));
    }
    Ok(())
}

/// Quantile regression of `data` on the HTQF.
pub fn fit_univariate_htqf(
    data: &[f64],
    grid: &QuantileGrid,
    law: LatentLaw,
    opts: &FitOptions,
) -> Result<UnivariateFit> {
    check_sample(data, opts)?;
    law.validate()?;
    let sd = std_dev(data);
    if !(sd > 0.0) {
        return Err(Error::DegenerateSample("zero scale".into()));
    }
    let a = opts.a;
    let objective = PinballObjective::new(data, grid, law);
    let mu0 = median(data);
    let s0 = (sd / (1.0 + 2.0 / a)).ln();
    let init = vec![mu0, s0, encode_tail(1.1), encode_tail(1.1)];
    let initial_objective = objective.evaluate(&decode_htqf(&init, a));

    let starts: Vec<Vec<f64>> = [(1.1, 1.1), (2.0, 2.0), (1.1, 3.0), (3.0, 1.1), (1.5, 1.5)]
        .iter()
        .enumerate()
        .map(|(k, &(u, v))| {
            // heavier starting tails take a smaller starting scale
            let shrink = if k == 0 { 0.0 } else { -0.2 };
            vec![mu0, s0 + shrink, encode_tail(u), encode_tail(v)]
        })
        .collect();
    let step = [0.2 * sd, 0.2, 1.0, 1.0];
    let best = opts
        .optimizer
        .minimize_restarts(|x| objective.evaluate(&decode_htqf(x, a)), &starts, &step);
    let params = decode_htqf(&best.x, a);
    if !best.converged {
        return Err(Error::NonConvergence {
            what: "quantile regression",
            best: vec![params.mu, params.sigma, params.u, params.v],
            objective: best.f,
        });
    }
    Ok(UnivariateFit {
        params,
        objective: best.f,
        initial_objective,
        iterations: best.iterations,
        converged: best.converged,
    })
}

/// Recovers `z_k = g^-1((y'_k - mu) / sigma)`.
pub fn invert_latent(y_prime: &[f64], params: &HtqfParams) -> Result<Vec<f64>> {
    params.validate()?;
    let p = *params;
    Ok(y_prime.par_iter().map(|&y| p.latent(y)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSolution {
    pub sigma: f64,
    pub u: f64,
    pub v: f64,
    /// `sqrt(sum_l r_l^2)` with each residual scaled by
    /// `sqrt(mean(y^2) mean(z^2l))`.
    pub residual_norm: f64,
    /// The residual norm met the tolerance; otherwise this is the
    /// constrained least-squares minimizer.
    pub solved: bool,
    pub iterations: usize,
}

/// Number of moment equations: `l = 1, 3, 5` plus the centered second moment.
const N_MOMENTS: usize = 4;

/// Empirical moments shared by all candidate `(u, v)`.
///
/// With a symmetric latent the odd equations depend on `(u, v)` only through
/// `E[z^(l+1) u^z] + E[z^(l+1) v^z]`, so they cannot tell `u` from `v`. The
/// extra equation uses the weight `z^2 - 1`, which is odd in the tails and
/// still averages to zero against components independent of `z`.
struct MomentData<'a> {
    z: &'a [f64],
    /// `mean(y w_l(z))` for `w = z, z^3, z^5, z^2 - 1`.
    lhs: [f64; N_MOMENTS],
    /// `mean(w_l(z) z)`.
    base: [f64; N_MOMENTS],
    weight: [f64; N_MOMENTS],
    a: f64,
}

impl<'a> MomentData<'a> {
    fn new(y: &[f64], z: &'a [f64], a: f64) -> Result<Self> {
        let k = z.len();
        let s = chunked_sum(k, |i| {
            let (yi, zi) = (y[i], z[i]);
            let z2 = zi * zi;
            let z3 = z2 * zi;
            let z5 = z3 * z2;
            let h2 = z2 - 1.0;
            [
                yi * zi,
                yi * z3,
                yi * z5,
                yi * h2,
                z2,
                z2 * z2,
                z3 * z3,
                z5 * z5,
                z3 - zi,
                h2 * h2,
                yi * yi,
            ]
        });
        let kf = k as f64;
        let m = s.map(|x| x / kf);
        if !(m[4] > 1e-300) {
            return Err(Error::DegenerateSample("latent realizations are all zero".into()));
        }
        let y2 = m[10];
        // mean of the squared weight: z^2, z^6, z^10, (z^2 - 1)^2
        let sq = [m[4], m[6], m[7], m[9]];
        let scale = sq.map(|w| (y2 * w).sqrt());
        if scale[..3].iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::DegenerateSample("zero-variance response in moment system".into()));
        }
        let mut weight = scale.map(|s| 1.0 / (s * s));
        if !weight[3].is_finite() {
            weight[3] = 0.0;
        }
        Ok(MomentData {
            z,
            lhs: [m[0], m[1], m[2], m[3]],
            base: [m[4], m[5], m[6], m[8]],
            weight,
            a,
        })
    }

    /// `mean(w_l(z) g(z | u, v))`.
    fn rhs(&self, u: f64, v: f64) -> [f64; N_MOMENTS] {
        let tail = Tail::new(u, v, self.a);
        let z = self.z;
        let s = chunked_sum(z.len(), |i| {
            let zi = z[i];
            let (eu, ev) = tail.exp_parts(zi);
            let e = eu + ev;
            let z2 = zi * zi;
            let z4 = z2 * z2;
            [z2 * e, z4 * e, z4 * z2 * e, (z2 - 1.0) * zi * e]
        });
        let c = 1.0 / (self.a * z.len() as f64);
        std::array::from_fn(|l| self.base[l] + s[l] * c)
    }

    /// Weighted least-squares `sigma` for fixed tails and the scaled residual norm.
    fn profile(&self, u: f64, v: f64) -> (f64, f64) {
        let m = self.rhs(u, v);
        let num: f64 = (0..N_MOMENTS).map(|l| self.weight[l] * self.lhs[l] * m[l]).sum();
        let den: f64 = (0..N_MOMENTS).map(|l| self.weight[l] * m[l] * m[l]).sum();
        if !(den > 0.0) {
            return (0.0, f64::INFINITY);
        }
        let sigma = num / den;
        (sigma, self.residual(sigma, &m))
    }

    fn residual(&self, sigma: f64, m: &[f64; N_MOMENTS]) -> f64 {
        (0..N_MOMENTS)
            .map(|l| self.weight[l] * (self.lhs[l] - sigma * m[l]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

fn check_moment_inputs(y: &[f64], z: &[f64], opts: &FitOptions) -> Result<()> {
    if y.len() != z.len() {
        return Err(Error::InvalidInput("moment system: y and z lengths differ".into()));
    }
    check_sample(y, opts)?;
    check_sample(z, opts)
}

/// Solves the moment equations for `(sigma_ij, u_ij, v_ij)`.
///
/// Returns the least-squares minimizer, flagged by `solved == false`, when
/// no exact root exists.
pub fn solve_moment_system(y: &[f64], z: &[f64], opts: &FitOptions) -> Result<MomentSolution> {
    check_moment_inputs(y, z, opts)?;
    let data = MomentData::new(y, z, opts.a)?;
    let nm = NelderMead {
        f_target: opts.moment_tol * 1e-3,
        stall_tol: 1e-13,
        ..opts.optimizer.clone()
    };
    let objective = |x: &[f64]| data.profile(decode_tail(x[0]), decode_tail(x[1])).1;
    let starts = [(1.1, 1.1), (2.0, 2.0), (1.1, 3.0), (3.0, 1.1)];
    let step = [1.0, 1.0];
    let mut best: Option<crate::optim::Minimum> = None;
    let mut iterations = 0;
    for (u0, v0) in starts {
        let m = nm.minimize(objective, &[encode_tail(u0), encode_tail(v0)], &step);
        iterations += m.iterations;
        let done = m.f < opts.moment_tol;
        if best.as_ref().is_none_or(|b| m.f < b.f) {
            best = Some(m);
        }
        if done {
            break;
        }
    }
    let best = best.expect("at least one start");
    let (u, v) = (decode_tail(best.x[0]), decode_tail(best.x[1]));
    let (sigma, residual_norm) = data.profile(u, v);
    let solved = residual_norm < opts.moment_tol;
    if !solved {
        log::debug!("moment system not solved exactly (residual {residual_norm:.3e}); using least-squares minimizer");
    }
    Ok(MomentSolution {
        sigma,
        u,
        v,
        residual_norm,
        solved,
        iterations,
    })
}

/// Reduced form: tails fixed, `sigma` from the first-moment equation alone.
pub fn solve_moment_sigma(y: &[f64], z: &[f64], u: f64, v: f64, opts: &FitOptions) -> Result<MomentSolution> {
    check_moment_inputs(y, z, opts)?;
    let data = MomentData::new(y, z, opts.a)?;
    let m = data.rhs(u, v);
    if m[0].abs() < 1e-300 {
        return Err(Error::DegenerateSample("first moment of z g(z) vanishes".into()));
    }
    let sigma = data.lhs[0] / m[0];
    Ok(MomentSolution {
        sigma,
        u,
        v,
        residual_norm: data.residual(sigma, &m),
        solved: true,
        iterations: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    Quantile,
    Moment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageDiagnostic {
    /// 1-based dimension index.
    pub stage: usize,
    /// Latent index for moment stages (1-based), 0 for quantile stages.
    pub against: usize,
    pub kind: StageKind,
    pub objective: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const DIAGNOSTICS_HEADER: &str = "stage,against,kind,objective,residual_norm,iterations,converged";

impl StageDiagnostic {
    pub fn write_row(&self, out: &mut String) {
        let kind = match self.kind {
            StageKind::Quantile => "quantile",
            StageKind::Moment => "moment",
        };
        let _ = writeln!(
            out,
            "{},{},{kind},{:?},{:?},{},{}",
            self.stage, self.against, self.objective, self.residual_norm, self.iterations, self.converged
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Triangular(TriangularModel),
    OneFactor(OneFactorModel),
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: FittedModel,
    pub diagnostics: Vec<StageDiagnostic>,
    /// Recovered latent realizations, `K x d`.
    pub latents: DMatrix<f64>,
    /// Every quantile stage converged and every moment system was solved.
    pub converged: bool,
}

impl FitReport {
    pub fn diagnostics_csv(&self) -> String {
        let mut s = String::from(DIAGNOSTICS_HEADER);
        s.push('\n');
        for d in &self.diagnostics {
            d.write_row(&mut s);
        }
        s
    }

    pub fn triangular(&self) -> Option<&TriangularModel> {
        match &self.model {
            FittedModel::Triangular(m) => Some(m),
            _ => None,
        }
    }

    pub fn one_factor(&self) -> Option<&OneFactorModel> {
        match &self.model {
            FittedModel::OneFactor(m) => Some(m),
            _ => None,
        }
    }
}

/// State of a recursive fit when a stage fails.
#[derive(Debug, Clone, Default)]
pub struct PartialFit {
    pub diagnostics: Vec<StageDiagnostic>,
    pub latents: Vec<Vec<f64>>,
}

fn stage_error(stage: usize, e: Error, diagnostics: &[StageDiagnostic], latents: &[Vec<f64>]) -> Error {
    Error::Stage {
        stage,
        source: Box::new(e),
        partial: Box::new(PartialFit {
            diagnostics: diagnostics.to_vec(),
            latents: latents.to_vec(),
        }),
    }
}

fn check_moment_law(law: LatentLaw) -> Result<()> {
    if let LatentLaw::StudentT { df } = law {
        if df <= 7.0 {
            return Err(Error::InvalidParameter {
                name: "df",
                value: df,
                reason: "moment equations up to z^6 need latent df > 7",
            });
        }
    }
    Ok(())
}

fn moment_diag(stage: usize, against: usize, m: &MomentSolution) -> StageDiagnostic {
    StageDiagnostic {
        stage,
        against,
        kind: StageKind::Moment,
        objective: m.residual_norm,
        residual_norm: m.residual_norm,
        iterations: m.iterations,
        converged: m.solved,
    }
}

fn quantile_diag(stage: usize, f: &UnivariateFit) -> StageDiagnostic {
    StageDiagnostic {
        stage,
        against: 0,
        kind: StageKind::Quantile,
        objective: f.objective,
        residual_norm: f64::NAN,
        iterations: f.iterations,
        converged: f.converged,
    }
}

fn subtract(y: &mut [f64], z: &[f64], s: f64, u: f64, v: f64, a: f64) {
    let tail = Tail::new(u, v, a);
    y.par_iter_mut().zip(z.par_iter()).for_each(|(yk, &zk)| {
        *yk -= s * tail.g(zk);
    });
}

/// Fits a lower-triangular model to the columns of `data` in their given order.
pub fn fit_triangular(
    data: &DMatrix<f64>,
    grid: &QuantileGrid,
    law: LatentLaw,
    reduced: bool,
    opts: &FitOptions,
) -> Result<FitReport> {
    let (k, n) = data.shape();
    if n == 0 {
        return Err(Error::InvalidInput("no columns to fit".into()));
    }
    law.validate()?;
    if n > 1 && !reduced {
        check_moment_law(law)?;
    }
    let a = opts.a;
    let mut mu = vec![0.0; n];
    let mut sigma = DMatrix::zeros(n, n);
    let mut u = DMatrix::zeros(n, n);
    let mut v = DMatrix::zeros(n, n);
    let mut latents: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut diagnostics = Vec::new();
    let mut converged = true;

    for i in 0..n {
        let stage = i + 1;
        let mut y: Vec<f64> = data.column(i).iter().copied().collect();
        check_column(&y, opts).map_err(|e| stage_error(stage, e, &diagnostics, &latents))?;
        let moments: Vec<Result<MomentSolution>> = (0..i)
            .into_par_iter()
            .map(|j| {
                if reduced {
                    solve_moment_sigma(&y, &latents[j], u[(j, j)], v[(j, j)], opts)
                } else {
                    solve_moment_system(&y, &latents[j], opts)
                }
            })
            .collect();
        for (j, m) in moments.into_iter().enumerate() {
            let m = m.map_err(|e| stage_error(stage, e, &diagnostics, &latents))?;
            diagnostics.push(moment_diag(stage, j + 1, &m));
            converged &= m.solved;
            sigma[(i, j)] = m.sigma;
            u[(i, j)] = m.u;
            v[(i, j)] = m.v;
        }
        for j in 0..i {
            subtract(&mut y, &latents[j], sigma[(i, j)], u[(i, j)], v[(i, j)], a);
        }
        let fit = fit_univariate_htqf(&y, grid, law, opts)
            .map_err(|e| stage_error(stage, e, &diagnostics, &latents))?;
        diagnostics.push(quantile_diag(stage, &fit));
        converged &= fit.converged;
        let p = fit.params;
        mu[i] = p.mu;
        sigma[(i, i)] = p.sigma;
        u[(i, i)] = p.u;
        v[(i, i)] = p.v;
        latents.push(invert_latent(&y, &p)?);
    }

    let model = TriangularModel::new(mu, sigma, u, v, a, law, reduced)?;
    Ok(FitReport {
        model: FittedModel::Triangular(model),
        diagnostics,
        latents: latent_matrix(k, &latents),
        converged,
    })
}

fn check_column(y: &[f64], opts: &FitOptions) -> Result<()> {
    check_sample(y, opts)?;
    if !(std_dev(y) > 0.0) {
        return Err(Error::DegenerateSample("zero scale".into()));
    }
    Ok(())
}

fn latent_matrix(k: usize, cols: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(k, cols.len(), |r, c| cols[c][r])
}

/// Fits the one-factor model: the market first, then each asset against the
/// recovered market latent.
pub fn fit_onefactor(
    market: &[f64],
    assets: &DMatrix<f64>,
    grid: &QuantileGrid,
    law: LatentLaw,
    opts: &FitOptions,
) -> Result<FitReport> {
    let (k, n) = assets.shape();
    if market.len() != k {
        return Err(Error::InvalidInput("market and asset lengths differ".into()));
    }
    law.validate()?;
    if n > 0 {
        check_moment_law(law)?;
    }
    let a = opts.a;
    let mfit = fit_univariate_htqf(market, grid, law, opts).map_err(|e| stage_error(1, e, &[], &[]))?;
    let mut diagnostics = vec![quantile_diag(1, &mfit)];
    let mut converged = mfit.converged;
    let zm = invert_latent(market, &mfit.params)?;

    let per_asset: Vec<Result<(MomentSolution, UnivariateFit, Vec<f64>)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut y: Vec<f64> = assets.column(i).iter().copied().collect();
            check_column(&y, opts)?;
            let m = solve_moment_system(&y, &zm, opts)?;
            subtract(&mut y, &zm, m.sigma, m.u, m.v, a);
            let f = fit_univariate_htqf(&y, grid, law, opts)?;
            let z = invert_latent(&y, &f.params)?;
            Ok((m, f, z))
        })
        .collect();

    let mut latents = vec![zm];
    let mut params = Vec::with_capacity(n);
    for (i, r) in per_asset.into_iter().enumerate() {
        let stage = i + 2;
        let (m, f, z) = r.map_err(|e| stage_error(stage, e, &diagnostics, &latents))?;
        diagnostics.push(moment_diag(stage, 1, &m));
        diagnostics.push(quantile_diag(stage, &f));
        converged &= m.solved && f.converged;
        params.push(AssetParams {
            alpha: f.params.mu,
            beta: m.sigma,
            u_m: m.u,
            v_m: m.v,
            gamma: f.params.sigma,
            u: f.params.u,
            v: f.params.v,
        });
        latents.push(z);
    }
    let p = mfit.params;
    let model = OneFactorModel::new(
        MarketParams {
            alpha: p.mu,
            beta: p.sigma,
            u: p.u,
            v: p.v,
        },
        params,
        a,
        law,
    )?;
    Ok(FitReport {
        model: FittedModel::OneFactor(model),
        diagnostics,
        latents: latent_matrix(k, &latents),
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dependence::triangular_sample;
    use crate::htqf::htqf_sample;
    use crate::rng::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, 0);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn grids() {
        let f = QuantileGrid::fine();
        assert_eq!(f.len(), 99);
        assert!((f.levels()[0] - 0.01).abs() < 1e-15 && (f.levels()[98] - 0.99).abs() < 1e-15);
        let c = QuantileGrid::coarse();
        assert_eq!(c.len(), 21);
        assert!((c.levels()[1] - 0.05).abs() < 1e-15 && (c.levels()[20] - 0.99).abs() < 1e-15);
        assert!(QuantileGrid::new(vec![0.5, 0.2]).is_err());
        assert!(QuantileGrid::new(vec![0.0, 0.2]).is_err());
    }

    #[test]
    fn prefix_sum_objective_matches_direct_sum() {
        let y = normals(3_000, 1);
        let grid = QuantileGrid::coarse();
        let obj = PinballObjective::new(&y, &grid, LatentLaw::StandardNormal);
        let p = HtqfParams::with_default_a(0.1, 0.8, 1.7, 2.2).unwrap();
        let direct: f64 = grid
            .levels()
            .iter()
            .map(|&t| {
                let q = crate::htqf::htqf_quantile(t, &p, LatentLaw::StandardNormal).unwrap();
                y.iter().map(|&yk| pinball_loss(yk, q, t)).sum::<f64>()
            })
            .sum::<f64>()
            / y.len() as f64;
        assert!((obj.evaluate(&p) - direct).abs() < 1e-10 * direct.abs());
    }

    #[test]
    fn constant_data_is_degenerate() {
        let y = vec![2.5; 500];
        let e = fit_univariate_htqf(&y, &QuantileGrid::fine(), LatentLaw::StandardNormal, &FitOptions::default());
        assert!(matches!(e, Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn too_few_observations() {
        let y = normals(100, 2);
        assert!(fit_univariate_htqf(&y, &QuantileGrid::fine(), LatentLaw::StandardNormal, &FitOptions::default()).is_err());
    }

    #[test]
    fn recovers_linear_htqf() {
        let p = HtqfParams::with_default_a(0.0, 1.0, 1.0, 1.0).unwrap();
        let y = htqf_sample(100_000, &p, LatentLaw::StandardNormal, 3).unwrap();
        let f = fit_univariate_htqf(&y, &QuantileGrid::fine(), LatentLaw::StandardNormal, &FitOptions::default()).unwrap();
        assert!(f.objective <= f.initial_objective);
        assert!(f.params.mu.abs() < 0.02, "{:?}", f.params);
        let sd = std_dev(&y);
        let implied = f.params.sigma * (1.0 + 2.0 / 4.0);
        assert!((implied - sd).abs() / sd < 0.02, "{:?} sd={sd}", f.params);
    }

    #[test]
    fn recovers_left_heavy_htqf() {
        let p = HtqfParams::with_default_a(0.0, 1.0, 1.0, 3.0).unwrap();
        let y = htqf_sample(100_000, &p, LatentLaw::StandardNormal, 4).unwrap();
        let f = fit_univariate_htqf(&y, &QuantileGrid::fine(), LatentLaw::StandardNormal, &FitOptions::default()).unwrap();
        assert!((f.params.v - 3.0).abs() / 3.0 < 0.10, "{:?}", f.params);
        assert!(f.params.u >= 1.0 && f.params.u <= 1.15, "{:?}", f.params);
    }

    #[test]
    fn inversion_examples() {
        let p = HtqfParams::with_default_a(0.7, 2.0, 1.0, 1.0).unwrap();
        let z = invert_latent(&[0.7, 0.7], &p).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
        let y = [3.7, -2.3, 0.1];
        let z = invert_latent(&y, &p).unwrap();
        for (zk, yk) in z.iter().zip(y) {
            assert!((zk - (yk - 0.7) / 3.0).abs() < 1e-12);
        }
        let q = HtqfParams::with_default_a(-0.3, 0.6, 2.2, 3.1).unwrap();
        let zs = normals(10_000, 5);
        let ys: Vec<f64> = zs.iter().map(|&z| q.transform(z)).collect();
        let back = invert_latent(&ys, &q).unwrap();
        for (a, b) in back.iter().zip(&zs) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn moment_system_recovers_noise_free_loading() {
        let z = normals(1_000_000, 6);
        let t = Tail::new(1.0, 1.5, 4.0);
        let y: Vec<f64> = z.iter().map(|&zk| 0.5 * t.g(zk)).collect();
        let m = solve_moment_system(&y, &z, &FitOptions::default()).unwrap();
        assert!((m.sigma - 0.5).abs() / 0.5 < 0.02, "{m:?}");
        assert!((m.u - 1.0).abs() < 0.05, "{m:?}");
        assert!((m.v - 1.5).abs() / 1.5 < 0.05, "{m:?}");
        assert!(m.residual_norm < 1e-6 && m.solved, "{m:?}");
    }

    #[test]
    fn odd_moments_alone_cannot_order_the_tails() {
        let half = normals(100_000, 7);
        let z: Vec<f64> = half.iter().flat_map(|&x| [x, -x]).collect();
        let y: Vec<f64> = z.iter().map(|&zk| 0.5 * Tail::new(1.0, 1.5, 4.0).g(zk)).collect();
        let data = MomentData::new(&y, &z, 4.0).unwrap();
        let (a, b) = (data.rhs(1.0, 1.5), data.rhs(1.5, 1.0));
        for l in 0..3 {
            assert!((a[l] - b[l]).abs() <= 1e-12 * a[l].abs());
        }
        assert!((a[3] - b[3]).abs() > 0.1 * a[3].abs());
        let m = solve_moment_system(&y, &z, &FitOptions::default()).unwrap();
        assert!((m.u - 1.0).abs() < 0.05 && (m.v - 1.5).abs() < 0.075, "{m:?}");
    }

    #[test]
    fn moment_system_on_independent_response() {
        let k = 200_000;
        let z = normals(k, 7);
        let y = normals(k, 8);
        let m = solve_moment_sigma(&y, &z, 1.0, 1.0, &FitOptions::default()).unwrap();
        // sigma = mean(y z) / mean(z g(z)); SE of the numerator is 1/sqrt(K)
        let se = 1.0 / (k as f64).sqrt() / 1.5;
        assert!(m.sigma.abs() < 5.0 * se, "{m:?}");
        let full = solve_moment_system(&y, &z, &FitOptions::default()).unwrap();
        assert!(full.sigma.abs() < 5.0 * se, "{full:?}");
    }

    #[test]
    fn reduced_closed_form() {
        let z = normals(10_000, 9);
        let t = Tail::new(1.3, 2.0, 4.0);
        let y: Vec<f64> = z.iter().zip(normals(10_000, 10)).map(|(&zk, e)| 0.8 * t.g(zk) + e).collect();
        let m = solve_moment_sigma(&y, &z, 1.3, 2.0, &FitOptions::default()).unwrap();
        let num: f64 = y.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        let den: f64 = z.iter().map(|&zk| zk * t.g(zk)).sum::<f64>();
        assert!((m.sigma - num / den).abs() < 1e-12);
    }

    #[test]
    fn degenerate_latents_rejected() {
        let z = vec![0.0; 1_000];
        let y = normals(1_000, 11);
        assert!(matches!(
            solve_moment_system(&y, &z, &FitOptions::default()),
            Err(Error::DegenerateSample(_))
        ));
    }

    #[test]
    fn one_dimensional_triangular_equals_univariate() {
        let p = HtqfParams::with_default_a(0.2, 0.9, 1.4, 2.0).unwrap();
        let y = htqf_sample(20_000, &p, LatentLaw::StandardNormal, 12).unwrap();
        let grid = QuantileGrid::fine();
        let opts = FitOptions::default();
        let uni = fit_univariate_htqf(&y, &grid, LatentLaw::StandardNormal, &opts).unwrap();
        let data = DMatrix::from_column_slice(y.len(), 1, &y);
        let tri = fit_triangular(&data, &grid, LatentLaw::StandardNormal, false, &opts).unwrap();
        assert_eq!(tri.triangular().unwrap().diagonal_htqf(0), uni.params);
    }

    #[test]
    fn stage_error_reports_index() {
        let m = TriangularModel::uniform(2, (1.0, 1.0, 1.5), (0.5, 1.0, 1.5)).unwrap();
        let mut data = triangular_sample(&m, 1_000, 13).unwrap();
        for r in 0..1_000 {
            data[(r, 1)] = 4.0;
        }
        match fit_triangular(&data, &QuantileGrid::coarse(), LatentLaw::StandardNormal, false, &FitOptions::default()) {
            Err(Error::Stage { stage, partial, .. }) => {
                assert_eq!(stage, 2);
                assert_eq!(partial.latents.len(), 1);
            }
            other => panic!("expected stage error, got {other:?}"),
        }
    }

    #[test]
    fn student_t_latents_need_df_above_seven() {
        let data = DMatrix::from_fn(500, 2, |r, c| (r as f64 * 0.37 + c as f64).sin());
        let e = fit_triangular(&data, &QuantileGrid::coarse(), LatentLaw::StudentT { df: 5.0 }, false, &FitOptions::default());
        assert!(matches!(e, Err(Error::InvalidParameter { name: "df", .. })));
    }
}
