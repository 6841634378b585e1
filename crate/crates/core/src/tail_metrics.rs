//! Empirical quantiles, correlation, and finite-level proxy tail dependence.
//!
//! The proxy down-tail dependence at level `tau` is
//! `P{x < Q_x(tau), y < Q_y(tau)} / tau`, estimated with lower empirical
//! quantiles (the `ceil(tau K)`-th order statistic) and strict inequalities.
//! The up side mirrors it: `P{x > Q_x(1 - tau), y > Q_y(1 - tau)} / tau`.
//! In both cases `tau` is the tail mass.

use std::fmt::Write as _;

use crate::dependence::JointSampler;
use crate::error::{Error, Result};

/// Below this expected tail count the proxy estimate is flagged unreliable.
pub const RELIABILITY_FLOOR: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSide {
    Down,
    Up,
}

impl TailSide {
    pub fn as_str(&self) -> &'static str {
        match self {
            TailSide::Down => "down",
            TailSide::Up => "up",
        }
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "tau",
            value: tau,
            reason: "probability must lie in (0, 1)",
        })
    }
}

/// 1-based rank of the lower empirical `tau`-quantile in a sample of `k`.
pub(crate) fn order_index(tau: f64, k: usize) -> usize {
    let r = (tau * k as f64).ceil() as usize;
    r.clamp(1, k)
}

/// The `ceil(tau K)`-th order statistic.
pub fn empirical_quantile(data: &[f64], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empirical_quantile: empty data".into()));
    }
    let r = order_index(tau, data.len());
    let mut work = data.to_vec();
    let (_, q, _) = work.select_nth_unstable_by(r - 1, f64::total_cmp);
    Ok(*q)
}

/// A sorted copy of a sample for repeated quantile queries.
#[derive(Debug, Clone)]
pub struct SortedSample {
    sorted: Vec<f64>,
}

impl SortedSample {
    pub fn new(data: &[f64]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidInput("empty sample".into()));
        }
        let mut sorted = data.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(SortedSample { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn quantile(&self, tau: f64) -> f64 {
        self.sorted[order_index(tau, self.sorted.len()) - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.sorted
    }
}

fn joint_fraction(x: &[f64], y: &[f64], qx: f64, qy: f64, side: TailSide) -> f64 {
    let count = match side {
        TailSide::Down => x.iter().zip(y).filter(|(a, b)| **a < qx && **b < qy).count(),
        TailSide::Up => x.iter().zip(y).filter(|(a, b)| **a > qx && **b > qy).count(),
    };
    count as f64 / x.len() as f64
}

fn thresholds(sx: &SortedSample, sy: &SortedSample, tau: f64, side: TailSide) -> (f64, f64) {
    match side {
        TailSide::Down => (sx.quantile(tau), sy.quantile(tau)),
        TailSide::Up => (sx.quantile(1.0 - tau), sy.quantile(1.0 - tau)),
    }
}

fn warn_if_unreliable(k: usize, tau: f64) {
    if (k as f64) * tau < RELIABILITY_FLOOR {
        log::warn!(
            "proxy tail dependence at tau={tau} uses only {:.1} expected tail points",
            k as f64 * tau
        );
    }
}

/// Proxy tail dependence of `(x, y)` at tail mass `tau`, clamped to `[0, 1]`.
pub fn proxy_tail_dep(x: &[f64], y: &[f64], tau: f64, side: TailSide) -> Result<f64> {
    check_tau(tau)?;
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::InvalidInput("proxy_tail_dep: need equal, non-empty samples".into()));
    }
    warn_if_unreliable(x.len(), tau);
    let sx = SortedSample::new(x)?;
    let sy = SortedSample::new(y)?;
    let (qx, qy) = thresholds(&sx, &sy, tau, side);
    Ok((joint_fraction(x, y, qx, qy, side) / tau).clamp(0.0, 1.0))
}

/// Standard sample (Pearson) correlation.
pub fn pearson_corr(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidInput("pearson_corr: need two equal samples of length >= 2".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateSample("pearson_corr: zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Proxy tail dependence of one pair evaluated over a range of levels.
#[derive(Debug, Clone, PartialEq)]
pub struct TailCurve {
    pub taus: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub side: TailSide,
    pub pair: (usize, usize),
    pub n_samples: usize,
}

impl TailCurve {
    /// Evaluates the curve on an existing pair of samples.
    pub fn from_samples(
        x: &[f64],
        y: &[f64],
        pair: (usize, usize),
        taus: &[f64],
        side: TailSide,
    ) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::InvalidInput("tail curve: need equal, non-empty samples".into()));
        }
        validate_taus(taus, side)?;
        let k = x.len();
        if (k as f64) * taus[0] < RELIABILITY_FLOOR {
            return Err(Error::InvalidInput(format!(
                "tail curve: n_samples * min(tau) = {:.1} is below {RELIABILITY_FLOOR}",
                k as f64 * taus[0]
            )));
        }
        let sx = SortedSample::new(x)?;
        let sy = SortedSample::new(y)?;
        let lambdas = taus
            .iter()
            .map(|&t| {
                let (qx, qy) = thresholds(&sx, &sy, t, side);
                (joint_fraction(x, y, qx, qy, side) / t).clamp(0.0, 1.0)
            })
            .collect();
        Ok(TailCurve {
            taus: taus.to_vec(),
            lambdas,
            side,
            pair,
            n_samples: k,
        })
    }

    pub fn max_abs_gap(&self, other: &TailCurve) -> f64 {
        self.lambdas
            .iter()
            .zip(&other.lambdas)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Appends rows `tau,lambda,side,i,j,n_samples` (no header).
    pub fn write_rows(&self, out: &mut String) {
        for (t, l) in self.taus.iter().zip(&self.lambdas) {
            let _ = writeln!(
                out,
                "{t:?},{l:?},{},{},{},{}",
                self.side.as_str(),
                self.pair.0,
                self.pair.1,
                self.n_samples
            );
        }
    }
}

pub const TAIL_CURVE_HEADER: &str = "tau,lambda,side,i,j,n_samples";

fn validate_taus(taus: &[f64], side: TailSide) -> Result<()> {
    if taus.is_empty() {
        return Err(Error::InvalidInput("tail curve: no levels".into()));
    }
    for w in taus.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidInput("tail curve: levels must be strictly increasing".into()));
        }
    }
    for &t in taus {
        check_tau(t)?;
        if side == TailSide::Down && t >= 0.5 {
            return Err(Error::InvalidInput("tail curve: down-side levels must lie in (0, 0.5)".into()));
        }
    }
    Ok(())
}

/// Samples `n_samples` rows once from `sampler` and evaluates the curve of
/// `pair` at every level in `taus`.
pub fn tail_curve(
    sampler: &dyn JointSampler,
    pair: (usize, usize),
    taus: &[f64],
    side: TailSide,
    n_samples: usize,
    seed: u64,
) -> Result<TailCurve> {
    let d = sampler.dim();
    if pair.0 >= d || pair.1 >= d || pair.0 == pair.1 {
        return Err(Error::InvalidInput(format!("invalid pair {pair:?} for dimension {d}")));
    }
    validate_taus(taus, side)?;
    let s = sampler.sample(n_samples, seed)?;
    let x: Vec<f64> = s.column(pair.0).iter().copied().collect();
    let y: Vec<f64> = s.column(pair.1).iter().copied().collect();
    TailCurve::from_samples(&x, &y, pair, taus, side)
}

/// Curves for every pair `i < j` from a single sample.
pub fn tail_curves_all_pairs(
    sampler: &dyn JointSampler,
    taus: &[f64],
    side: TailSide,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<TailCurve>> {
    validate_taus(taus, side)?;
    let s = sampler.sample(n_samples, seed)?;
    let d = s.ncols();
    let cols: Vec<Vec<f64>> = (0..d).map(|j| s.column(j).iter().copied().collect()).collect();
    let mut out = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            out.push(TailCurve::from_samples(&cols[i], &cols[j], (i, j), taus, side)?);
        }
    }
    Ok(out)
}

/// `n` levels spaced evenly in log scale over `[lo, hi]`.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}
