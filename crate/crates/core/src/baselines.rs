//! Competing dependence models: multivariate normal and t, bivariate Clayton
//! and Gumbel copulas with empirical marginals, and one-factor Gaussian and t
//! models.
//!
//! Fits are moment, Kendall-tau-inversion or profile-likelihood based and
//! fully deterministic.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, Gamma, StandardNormal, StudentT};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::coverage::PairSampler;
use crate::dependence::{JointSampler, MAX_DIM};
use crate::error::{check_param, Error, Result};
use crate::rng::{derive_seed, sample_rows};
use crate::stats::{covariance, kendall_tau, mean, std_dev};

/// Copula parameters are capped here to avoid numerical degeneracy.
pub const THETA_MAX: f64 = 50.0;
pub const MIN_OBS: usize = 500;
const ROW_CHUNK: usize = 16_384;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    MvNormal,
    MvT,
    Clayton,
    Gumbel,
    OneFactorGaussian,
    OneFactorT,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 6] = [
        BaselineKind::MvNormal,
        BaselineKind::MvT,
        BaselineKind::Clayton,
        BaselineKind::Gumbel,
        BaselineKind::OneFactorGaussian,
        BaselineKind::OneFactorT,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineKind::MvNormal => "mvnormal",
            BaselineKind::MvT => "mvt",
            BaselineKind::Clayton => "clayton",
            BaselineKind::Gumbel => "gumbel",
            BaselineKind::OneFactorGaussian => "of-gaussian",
            BaselineKind::OneFactorT => "of-t",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Copulas are bivariate only.
    pub fn is_copula(&self) -> bool {
        matches!(self, BaselineKind::Clayton | BaselineKind::Gumbel)
    }
}

/// Empirical marginal: sorted sample, linearly interpolated between order
/// statistics at plotting positions `(k - 1/2) / K`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    sorted: Vec<f64>,
}

impl QuantileTable {
    pub fn new(data: &[f64]) -> Result<Self> {
        if data.is_empty() || data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("quantile table needs finite, non-empty data".into()));
        }
        let mut sorted = data.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(QuantileTable { sorted })
    }

    pub fn from_sorted(sorted: Vec<f64>) -> Result<Self> {
        if sorted.is_empty() || sorted.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::InvalidInput("quantile table must be non-empty and sorted".into()));
        }
        Ok(QuantileTable { sorted })
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let k = self.sorted.len();
        let h = (u * k as f64 - 0.5).clamp(0.0, (k - 1) as f64);
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(k - 1);
        let w = h - lo as f64;
        self.sorted[lo] + w * (self.sorted[hi] - self.sorted[lo])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorAsset {
    pub alpha: f64,
    pub loading: f64,
    pub idio_sd: f64,
    /// Degrees of freedom of the standardized-t idiosyncratic term.
    pub df: Option<f64>,
}

/// Market `m = mu + sd e_M`; asset `y_i = alpha_i + loading_i e_M + idio_sd_i e_i`,
/// with unit-variance `e` that are normal or standardized t.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorBaseline {
    pub market_mean: f64,
    pub market_sd: f64,
    pub market_df: Option<f64>,
    pub assets: Vec<FactorAsset>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineModel {
    MvNormal { mean: DVector<f64>, cov: DMatrix<f64> },
    MvT { mean: DVector<f64>, scale: DMatrix<f64>, df: f64 },
    Clayton { theta: f64, marginals: [QuantileTable; 2] },
    Gumbel { theta: f64, marginals: [QuantileTable; 2] },
    OneFactorGaussian(FactorBaseline),
    OneFactorT(FactorBaseline),
}

fn check_df(df: f64) -> Result<()> {
    check_param("df", df, df > 2.0, "need df > 2")
}

fn check_cov(name: &'static str, m: &DMatrix<f64>, n: usize) -> Result<Cholesky<f64, Dyn>> {
    if m.shape() != (n, n) {
        return Err(Error::InvalidInput(format!("{name} must be {n}x{n}")));
    }
    if (m - m.transpose()).abs().max() > 1e-10 * m.abs().max().max(1.0) {
        return Err(Error::InvalidInput(format!("{name} is not symmetric")));
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::DegenerateSample(format!("{name} is not positive definite")))
}

impl BaselineModel {
    pub fn kind(&self) -> BaselineKind {
        match self {
            BaselineModel::MvNormal { .. } => BaselineKind::MvNormal,
            BaselineModel::MvT { .. } => BaselineKind::MvT,
            BaselineModel::Clayton { .. } => BaselineKind::Clayton,
            BaselineModel::Gumbel { .. } => BaselineKind::Gumbel,
            BaselineModel::OneFactorGaussian(_) => BaselineKind::OneFactorGaussian,
            BaselineModel::OneFactorT(_) => BaselineKind::OneFactorT,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BaselineModel::MvNormal { mean, .. } | BaselineModel::MvT { mean, .. } => mean.len(),
            BaselineModel::Clayton { .. } | BaselineModel::Gumbel { .. } => 2,
            BaselineModel::OneFactorGaussian(f) | BaselineModel::OneFactorT(f) => f.assets.len() + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaselineModel::MvNormal { mean, cov } => {
                check_cov("covariance", cov, mean.len())?;
            }
            BaselineModel::MvT { mean, scale, df } => {
                check_cov("scale", scale, mean.len())?;
                check_df(*df)?;
            }
            BaselineModel::Clayton { theta, .. } => {
                check_param("theta", *theta, *theta > 0.0 && *theta <= THETA_MAX, "need 0 < theta <= 50")?;
            }
            BaselineModel::Gumbel { theta, .. } => {
                check_param("theta", *theta, (1.0..=THETA_MAX).contains(theta), "need 1 <= theta <= 50")?;
            }
            BaselineModel::OneFactorGaussian(f) | BaselineModel::OneFactorT(f) => {
                check_param("market_sd", f.market_sd, f.market_sd > 0.0, "need sd > 0")?;
                f.market_df.map(check_df).transpose()?;
                for a in &f.assets {
                    check_param("loading", a.loading, true, "must be finite")?;
                    check_param("idio_sd", a.idio_sd, a.idio_sd > 0.0, "need sd > 0")?;
                    a.df.map(check_df).transpose()?;
                }
            }
        }
        if self.dim() > MAX_DIM {
            return Err(Error::InvalidInput(format!("at most {MAX_DIM} dimensions are supported")));
        }
        Ok(())
    }
}

fn columns(data: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..data.ncols()).map(|c| data.column(c).iter().copied().collect()).collect()
}

fn sample_covariance(cols: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = cols.len();
    let m = DVector::from_iterator(n, cols.iter().map(|c| mean(c)));
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let c = covariance(&cols[i], &cols[j]);
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    (m, cov)
}

/// Degrees-of-freedom grid `{2.5, 3, ..., 30}` used by the t fits.
pub fn df_grid() -> Vec<f64> {
    (0..=55).map(|k| 2.5 + 0.5 * k as f64).collect()
}

/// One EM pass at fixed `df`: returns updated `(mean, scale)` and the
/// log-likelihood of the incoming parameters.
///
/// The scale is normalized by the total weight rather than `K`
/// (parameter-expanded EM). Both share the maximum-likelihood fixed point,
/// where the weights average to one, but this one converges much faster.
fn mvt_em_step(
    rows: &[Vec<f64>],
    mean: &DVector<f64>,
    scale: &DMatrix<f64>,
    df: f64,
) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    let p = mean.len();
    let chol = Cholesky::new(scale.clone()).ok_or_else(|| Error::DegenerateSample("singular scale".into()))?;
    let l = chol.l();
    let l_rows: Vec<f64> = (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).map(|(i, j)| l[(i, j)]).collect();
    let mean_v: Vec<f64> = mean.iter().copied().collect();
    let k = rows[0].len();
    let width = 2 + p + p * p;
    let partials: Vec<Vec<f64>> = (0..k.div_ceil(ROW_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; width];
            let mut d = [0.0; MAX_DIM];
            let mut sol = [0.0; MAX_DIM];
            for r in c * ROW_CHUNK..((c + 1) * ROW_CHUNK).min(k) {
                for i in 0..p {
                    d[i] = rows[i][r] - mean_v[i];
                }
                // forward substitution L s = d
                let mut delta = 0.0;
                for i in 0..p {
                    let li = &l_rows[i * p..(i + 1) * p];
                    let mut s = d[i];
                    for j in 0..i {
                        s -= li[j] * sol[j];
                    }
                    sol[i] = s / li[i];
                    delta += sol[i] * sol[i];
                }
                let w = (df + p as f64) / (df + delta);
                acc[0] += w;
                acc[1] += (delta / df).ln_1p();
                for i in 0..p {
                    acc[2 + i] += w * d[i];
                    for j in 0..p {
                        acc[2 + p + i * p + j] += w * d[i] * d[j];
                    }
                }
            }
            acc
        })
        .collect();
    let mut s = vec![0.0; width];
    for part in &partials {
        for (a, b) in s.iter_mut().zip(part) {
            *a += b;
        }
    }
    let kf = k as f64;
    let pf = p as f64;
    let log_det: f64 = 2.0 * (0..p).map(|i| l[(i, i)].ln()).sum::<f64>();
    let loglik = kf * (ln_gamma(0.5 * (df + pf)) - ln_gamma(0.5 * df) - 0.5 * pf * (df * PI).ln() - 0.5 * log_det)
        - 0.5 * (df + pf) * s[1];
    let sw = s[0];
    let shift = DVector::from_iterator(p, (0..p).map(|i| s[2 + i] / sw));
    let new_mean = mean + &shift;
    let mut new_scale = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            new_scale[(i, j)] = (s[2 + p + i * p + j] - sw * shift[i] * shift[j]) / sw;
        }
    }
    new_scale = 0.5 * (&new_scale + new_scale.transpose());
    Ok((new_mean, new_scale, loglik))
}

/// EM at fixed `df` from `(mean, scale)`; returns the converged fit and its
/// log-likelihood.
fn mvt_em(
    cols: &[Vec<f64>],
    mut mean: DVector<f64>,
    mut scale: DMatrix<f64>,
    df: f64,
) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let mut last = f64::NEG_INFINITY;
    for _ in 0..500 {
        let (m, s, ll) = mvt_em_step(cols, &mean, &scale, df)?;
        mean = m;
        scale = s;
        if (ll - last).abs() <= 1e-9 * ll.abs() {
            return Ok((ll, mean, scale));
        }
        last = ll;
    }
    Ok((last, mean, scale))
}

/// Multivariate t: profile likelihood over [`df_grid`] with EM for the
/// location and scale at each df.
///
/// The grid is searched coarse-to-fine: every fourth point first, then every
/// point within three steps of the coarse maximum.
fn fit_mvt(cols: &[Vec<f64>]) -> Result<BaselineModel> {
    let grid = df_grid();
    let (m0, cov) = sample_covariance(cols);
    let mut profile: Vec<Option<(f64, DVector<f64>, DMatrix<f64>)>> = vec![None; grid.len()];
    // each df is warm-started from the previous one
    let (mut mean, mut scale) = (m0, cov);
    for k in (0..grid.len()).step_by(4) {
        let fit = mvt_em(cols, mean, scale, grid[k])?;
        mean = fit.1.clone();
        scale = fit.2.clone();
        profile[k] = Some(fit);
    }
    let coarse = best_index(&profile);
    let lo = coarse.saturating_sub(3);
    let hi = (coarse + 3).min(grid.len() - 1);
    for k in lo..=hi {
        if profile[k].is_none() {
            let (_, m, s) = profile[coarse].clone().expect("evaluated");
            profile[k] = Some(mvt_em(cols, m, s, grid[k])?);
        }
    }
    let k = best_index(&profile);
    let (_, mean, scale) = profile[k].take().expect("evaluated");
    Ok(BaselineModel::MvT { mean, scale, df: grid[k] })
}

fn best_index(profile: &[Option<(f64, DVector<f64>, DMatrix<f64>)>]) -> usize {
    let mut best = 0;
    let mut best_ll = f64::NEG_INFINITY;
    for (k, p) in profile.iter().enumerate() {
        if let Some((ll, _, _)) = p {
            if *ll > best_ll {
                best_ll = *ll;
                best = k;
            }
        }
    }
    best
}

/// Profile log-likelihood fit of a unit-variance t to standardized data.
fn fit_std_t_df(x: &[f64]) -> f64 {
    let ll = |nu: f64| {
        let c = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (PI * (nu - 2.0)).ln();
        x.iter().map(|e| c - 0.5 * (nu + 1.0) * (e * e / (nu - 2.0)).ln_1p()).sum::<f64>()
    };
    df_grid()
        .into_iter()
        .map(|nu| (ll(nu), nu))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("non-empty grid")
        .1
}

fn fit_factor(cols: &[Vec<f64>], heavy: bool) -> Result<FactorBaseline> {
    let market = &cols[0];
    let (mm, ms) = (mean(market), std_dev(market));
    if !(ms > 0.0) {
        return Err(Error::DegenerateSample("market column has zero variance".into()));
    }
    let e_m: Vec<f64> = market.iter().map(|x| (x - mm) / ms).collect();
    let market_df = heavy.then(|| fit_std_t_df(&e_m));
    let mut assets = Vec::with_capacity(cols.len() - 1);
    for y in &cols[1..] {
        let alpha = mean(y);
        let loading = covariance(y, &e_m);
        let resid: Vec<f64> = y.iter().zip(&e_m).map(|(v, e)| v - alpha - loading * e).collect();
        let idio_sd = std_dev(&resid);
        if !(idio_sd > 0.0) {
            return Err(Error::DegenerateSample("asset is an exact linear function of the market".into()));
        }
        let df = heavy.then(|| fit_std_t_df(&resid.iter().map(|r| r / idio_sd).collect::<Vec<_>>()));
        assets.push(FactorAsset {
            alpha,
            loading,
            idio_sd,
            df,
        });
    }
    Ok(FactorBaseline {
        market_mean: mm,
        market_sd: ms,
        market_df,
        assets,
    })
}

fn cap_theta(theta: f64) -> f64 {
    if theta > THETA_MAX || !theta.is_finite() {
        log::warn!("copula theta {theta} capped at {THETA_MAX}");
        THETA_MAX
    } else {
        theta
    }
}

fn marginals(cols: &[Vec<f64>]) -> Result<[QuantileTable; 2]> {
    Ok([QuantileTable::new(&cols[0])?, QuantileTable::new(&cols[1])?])
}

/// Fits a baseline of the given kind to the rows of `data`.
///
/// The one-factor kinds treat column 0 as the market.
pub fn fit_baseline(kind: BaselineKind, data: &DMatrix<f64>) -> Result<BaselineModel> {
    let (k, n) = data.shape();
    if k < MIN_OBS {
        return Err(Error::InvalidInput(format!("need at least {MIN_OBS} rows, got {k}")));
    }
    if n == 0 || n > MAX_DIM {
        return Err(Error::InvalidInput(format!("need 1..={MAX_DIM} columns, got {n}")));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite observation".into()));
    }
    if kind.is_copula() && n != 2 {
        return Err(Error::InvalidInput(format!("{} copula is bivariate, got {n} columns", kind.as_str())));
    }
    if matches!(kind, BaselineKind::OneFactorGaussian | BaselineKind::OneFactorT) && n < 2 {
        return Err(Error::InvalidInput("one-factor models need a market and at least one asset".into()));
    }
    let cols = columns(data);
    let model = match kind {
        BaselineKind::MvNormal => {
            let (mean, cov) = sample_covariance(&cols);
            BaselineModel::MvNormal { mean, cov }
        }
        BaselineKind::MvT => {
            let (_, cov) = sample_covariance(&cols);
            check_cov("covariance", &cov, n)?;
            fit_mvt(&cols)?
        }
        BaselineKind::Clayton => {
            let tk = kendall_tau(&cols[0], &cols[1])?;
            if tk <= 0.0 {
                return Err(Error::DegenerateSample(format!(
                    "Clayton needs positive Kendall tau, got {tk}"
                )));
            }
            BaselineModel::Clayton {
                theta: cap_theta(2.0 * tk / (1.0 - tk)),
                marginals: marginals(&cols)?,
            }
        }
        BaselineKind::Gumbel => {
            let tk = kendall_tau(&cols[0], &cols[1])?;
            let theta = if tk < 0.0 {
                log::warn!("negative Kendall tau {tk}; Gumbel theta set to 1 (independence)");
                1.0
            } else {
                cap_theta(1.0 / (1.0 - tk))
            };
            BaselineModel::Gumbel {
                theta,
                marginals: marginals(&cols)?,
            }
        }
        BaselineKind::OneFactorGaussian => BaselineModel::OneFactorGaussian(fit_factor(&cols, false)?),
        BaselineKind::OneFactorT => BaselineModel::OneFactorT(fit_factor(&cols, true)?),
    };
    model.validate()?;
    Ok(model)
}

/// Positive stable variable with Laplace transform `exp(-s^alpha)`, by the
/// Kanter / Chambers–Mallows–Stuck representation.
fn positive_stable<R: Rng + ?Sized>(rng: &mut R, alpha: f64) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let theta = rng.random::<f64>() * PI;
    let e: f64 = rng.sample(Exp1);
    let a = (alpha * theta).sin() / theta.sin().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * theta).sin() / e).powf((1.0 - alpha) / alpha);
    a * b
}

enum Mixing {
    None,
    T(ChiSquared<f64>, f64),
}

fn elliptical_rows(mean: &DVector<f64>, cov: &DMatrix<f64>, df: Option<f64>, n_obs: usize, seed: u64) -> Result<DMatrix<f64>> {
    let p = mean.len();
    let l = check_cov("covariance", cov, p)?.l();
    let mix = match df {
        Some(df) => Mixing::T(ChiSquared::new(df).expect("validated df"), df),
        None => Mixing::None,
    };
    Ok(sample_rows(n_obs, p, seed, |rng, row| {
        let mut z = [0.0; MAX_DIM];
        for zi in z[..p].iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let scale = match &mix {
            Mixing::None => 1.0,
            Mixing::T(chi, df) => (df / chi.sample(rng)).sqrt(),
        };
        for i in 0..p {
            let s: f64 = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
            row[i] = mean[i] + scale * s;
        }
    }))
}

fn unit_noise<R: Rng + ?Sized>(rng: &mut R, t: &Option<(StudentT<f64>, f64)>) -> f64 {
    match t {
        None => rng.sample(StandardNormal),
        Some((dist, scale)) => dist.sample(rng) * scale,
    }
}

fn std_t(df: Option<f64>) -> Option<(StudentT<f64>, f64)> {
    df.map(|d| (StudentT::new(d).expect("validated df"), ((d - 2.0) / d).sqrt()))
}

/// Draws `n_obs` rows from a baseline model.
pub fn sample_baseline(model: &BaselineModel, n_obs: usize, seed: u64) -> Result<DMatrix<f64>> {
    model.validate()?;
    match model {
        BaselineModel::MvNormal { mean, cov } => elliptical_rows(mean, cov, None, n_obs, seed),
        BaselineModel::MvT { mean, scale, df } => elliptical_rows(mean, scale, Some(*df), n_obs, seed),
        BaselineModel::Clayton { theta, marginals } => {
            let frailty = Gamma::new(1.0 / theta, 1.0).expect("validated theta");
            let th = *theta;
            Ok(sample_rows(n_obs, 2, seed, |rng, row| {
                let v = frailty.sample(rng);
                for (x, m) in row.iter_mut().zip(marginals) {
                    let e: f64 = rng.sample(Exp1);
                    *x = m.quantile((1.0 + e / v).powf(-1.0 / th));
                }
            }))
        }
        BaselineModel::Gumbel { theta, marginals } => {
            let alpha = 1.0 / theta;
            Ok(sample_rows(n_obs, 2, seed, |rng, row| {
                let v = positive_stable(rng, alpha);
                for (x, m) in row.iter_mut().zip(marginals) {
                    let e: f64 = rng.sample(Exp1);
                    *x = m.quantile((-(e / v).powf(alpha)).exp());
                }
            }))
        }
        BaselineModel::OneFactorGaussian(f) | BaselineModel::OneFactorT(f) => {
            let market_t = std_t(f.market_df);
            let asset_t: Vec<_> = f.assets.iter().map(|a| std_t(a.df)).collect();
            Ok(sample_rows(n_obs, f.assets.len() + 1, seed, |rng, row| {
                let em = unit_noise(rng, &market_t);
                row[0] = f.market_mean + f.market_sd * em;
                for (k, a) in f.assets.iter().enumerate() {
                    row[k + 1] = a.alpha + a.loading * em + a.idio_sd * unit_noise(rng, &asset_t[k]);
                }
            }))
        }
    }
}

impl JointSampler for BaselineModel {
    fn dim(&self) -> usize {
        BaselineModel::dim(self)
    }

    fn sample(&self, n_obs: usize, seed: u64) -> Result<DMatrix<f64>> {
        sample_baseline(self, n_obs, seed)
    }
}

/// Copula fitted separately to each pair of columns, for coverage tests on
/// more than two series.
pub struct CopulaPairs {
    kind: BaselineKind,
    data: DMatrix<f64>,
    n_samples: usize,
}

impl CopulaPairs {
    pub fn new(kind: BaselineKind, data: DMatrix<f64>, n_samples: usize) -> Result<Self> {
        if !kind.is_copula() {
            return Err(Error::InvalidInput(format!("{} is not a copula", kind.as_str())));
        }
        Ok(CopulaPairs { kind, data, n_samples })
    }

    pub fn fit_pair(&self, i: usize, j: usize) -> Result<BaselineModel> {
        let pair = DMatrix::from_fn(self.data.nrows(), 2, |r, c| self.data[(r, if c == 0 { i } else { j })]);
        fit_baseline(self.kind, &pair)
    }
}

impl PairSampler for CopulaPairs {
    fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn pair_sample(&self, i: usize, j: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = sample_baseline(&self.fit_pair(i, j)?, self.n_samples, derive_seed(seed, 0xC0))?;
        Ok((s.column(0).iter().copied().collect(), s.column(1).iter().copied().collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tail_metrics::{pearson_corr, proxy_tail_dep, TailSide};

    fn col(m: &DMatrix<f64>, c: usize) -> Vec<f64> {
        m.column(c).iter().copied().collect()
    }

    fn corr_matrix(rho: &[f64; 3]) -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[1.0, rho[0], rho[1], rho[0], 1.0, rho[2], rho[1], rho[2], 1.0])
    }

    #[test]
    fn kind_names_roundtrip() {
        for k in BaselineKind::ALL {
            assert_eq!(BaselineKind::parse(k.as_str()), Some(k));
        }
        assert_eq!(BaselineKind::parse("triangular"), None);
    }

    #[test]
    fn quantile_table_interpolates() {
        let t = QuantileTable::new(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(t.quantile(0.125), 1.0);
        assert_eq!(t.quantile(0.0), 1.0);
        assert_eq!(t.quantile(1.0), 4.0);
        assert_eq!(t.quantile(0.5), 2.5);
    }

    #[test]
    fn mvnormal_recovers_identity() {
        let truth = BaselineModel::MvNormal {
            mean: DVector::zeros(3),
            cov: DMatrix::identity(3, 3),
        };
        let s = sample_baseline(&truth, 1_000_000, 1).unwrap();
        match fit_baseline(BaselineKind::MvNormal, &s).unwrap() {
            BaselineModel::MvNormal { cov, .. } => {
                assert!((cov - DMatrix::identity(3, 3)).abs().max() < 0.02);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn mvt_recovers_df() {
        let truth = BaselineModel::MvT {
            mean: DVector::zeros(3),
            scale: corr_matrix(&[0.3, 0.5, 0.7]),
            df: 5.0,
        };
        let s = sample_baseline(&truth, 1_000_000, 2).unwrap();
        match fit_baseline(BaselineKind::MvT, &s).unwrap() {
            BaselineModel::MvT { df, scale, .. } => {
                assert!((4.0..=6.5).contains(&df), "{df}");
                assert!((scale - corr_matrix(&[0.3, 0.5, 0.7])).abs().max() < 0.03);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn mvt_tail_dependence_matches_closed_form() {
        let m = BaselineModel::MvT {
            mean: DVector::zeros(2),
            scale: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
            df: 5.0,
        };
        let s = sample_baseline(&m, 10_000_000, 3).unwrap();
        let lam = proxy_tail_dep(&col(&s, 0), &col(&s, 1), 1e-3, TailSide::Down).unwrap();
        // 2 t_6(-sqrt(6 * 0.5 / 1.5))
        let t6 = statrs::distribution::StudentsT::new(0.0, 1.0, 6.0).unwrap();
        let exact = 2.0 * statrs::distribution::ContinuousCDF::cdf(&t6, -(2.0f64).sqrt());
        assert!((lam - exact).abs() < 0.03, "{lam} vs {exact}");
    }

    #[test]
    fn comonotone_pair_caps_gumbel() {
        let x: Vec<f64> = (0..1000).map(|k| (k as f64 * 0.37).sin() + k as f64 * 1e-3).collect();
        let data = DMatrix::from_fn(1000, 2, |r, _| x[r]);
        match fit_baseline(BaselineKind::Gumbel, &data).unwrap() {
            BaselineModel::Gumbel { theta, .. } => assert_eq!(theta, THETA_MAX),
            _ => unreachable!(),
        }
        match fit_baseline(BaselineKind::Clayton, &data).unwrap() {
            BaselineModel::Clayton { theta, .. } => assert_eq!(theta, THETA_MAX),
            _ => unreachable!(),
        }
    }

    #[test]
    fn clayton_rejects_negative_association() {
        let data = DMatrix::from_fn(1000, 2, |r, c| if c == 0 { r as f64 } else { -(r as f64) });
        assert!(fit_baseline(BaselineKind::Clayton, &data).is_err());
        let three = DMatrix::from_fn(1000, 3, |r, c| (r * (c + 1)) as f64);
        assert!(fit_baseline(BaselineKind::Gumbel, &three).is_err());
    }

    fn uniform_marginals() -> [QuantileTable; 2] {
        let grid: Vec<f64> = (0..1000).map(|k| (k as f64 + 0.5) / 1000.0).collect();
        [QuantileTable::new(&grid).unwrap(), QuantileTable::new(&grid).unwrap()]
    }

    #[test]
    fn weak_clayton_is_near_independent() {
        let m = BaselineModel::Clayton {
            theta: 0.01,
            marginals: uniform_marginals(),
        };
        let s = sample_baseline(&m, 1_000_000, 4).unwrap();
        let lam = proxy_tail_dep(&col(&s, 0), &col(&s, 1), 1e-2, TailSide::Down).unwrap();
        assert!(lam < 0.05, "{lam}");
    }

    #[test]
    fn copulas_recover_kendall_tau() {
        for (kind, theta, tk) in [(BaselineKind::Clayton, 2.0, 0.5), (BaselineKind::Gumbel, 2.0, 0.5)] {
            let m = match kind {
                BaselineKind::Clayton => BaselineModel::Clayton { theta, marginals: uniform_marginals() },
                _ => BaselineModel::Gumbel { theta, marginals: uniform_marginals() },
            };
            let s = sample_baseline(&m, 20_000, 5).unwrap();
            let est = kendall_tau(&col(&s, 0), &col(&s, 1)).unwrap();
            assert!((est - tk).abs() < 0.02, "{kind:?}: {est}");
            match fit_baseline(kind, &s).unwrap() {
                BaselineModel::Clayton { theta: t, .. } | BaselineModel::Gumbel { theta: t, .. } => {
                    assert!((t - theta).abs() / theta < 0.1, "{kind:?}: {t}");
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn gumbel_has_upper_tail_dependence() {
        // lambda_U = 2 - 2^(1/theta)
        let m = BaselineModel::Gumbel {
            theta: 2.0,
            marginals: uniform_marginals(),
        };
        let s = sample_baseline(&m, 2_000_000, 6).unwrap();
        let up = proxy_tail_dep(&col(&s, 0), &col(&s, 1), 1e-2, TailSide::Up).unwrap();
        assert!((up - (2.0 - 2f64.sqrt())).abs() < 0.05, "{up}");
    }

    #[test]
    fn one_factor_fits_recover_loadings() {
        let truth = FactorBaseline {
            market_mean: 0.1,
            market_sd: 1.5,
            market_df: Some(5.0),
            assets: vec![
                FactorAsset { alpha: 0.0, loading: 0.8, idio_sd: 0.6, df: Some(8.0) },
                FactorAsset { alpha: -0.2, loading: 0.3, idio_sd: 1.0, df: Some(4.0) },
            ],
        };
        let s = sample_baseline(&BaselineModel::OneFactorT(truth.clone()), 1_000_000, 7).unwrap();
        let fit = match fit_baseline(BaselineKind::OneFactorT, &s).unwrap() {
            BaselineModel::OneFactorT(f) => f,
            _ => unreachable!(),
        };
        assert!((fit.market_sd - 1.5).abs() < 0.02);
        assert!((fit.market_df.unwrap() - 5.0).abs() < 0.75, "{fit:?}");
        for (a, b) in fit.assets.iter().zip(&truth.assets) {
            assert!((a.loading - b.loading).abs() < 0.01, "{fit:?}");
            assert!((a.idio_sd - b.idio_sd).abs() < 0.01, "{fit:?}");
        }
        let g = fit_baseline(BaselineKind::OneFactorGaussian, &s).unwrap();
        assert!(matches!(&g, BaselineModel::OneFactorGaussian(f) if f.market_df.is_none()));
        let c = pearson_corr(&col(&s, 1), &col(&s, 2)).unwrap();
        let expect = 0.8 * 0.3 / ((0.64f64 + 0.36).sqrt() * (0.09f64 + 1.0).sqrt());
        assert!((c - expect).abs() < 0.01);
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = BaselineModel::MvT {
            mean: DVector::from_vec(vec![1.0, -1.0]),
            scale: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            df: 4.0,
        };
        assert_eq!(sample_baseline(&m, 10_000, 8).unwrap(), sample_baseline(&m, 10_000, 8).unwrap());
    }

    #[test]
    fn singular_covariance_is_rejected() {
        let data = DMatrix::from_fn(1000, 2, |r, _| (r as f64).sin());
        assert!(fit_baseline(BaselineKind::MvT, &data).is_err());
        let bad = BaselineModel::MvNormal {
            mean: DVector::zeros(2),
            cov: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
        };
        assert!(sample_baseline(&bad, 10, 0).is_err());
    }
}
