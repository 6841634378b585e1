//! Two-dimensional Value-at-Risk violations and the Kupiec unconditional
//! coverage test.
//!
//! For a pair `(X, Y)` and nominal level `tau`, `tau*` solves
//! `P{X < Q_X(tau*), Y < Q_Y(tau*)} = tau`. A test day is a violation when
//! both returns fall strictly below their conditional `tau*` quantiles.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::garch::Filtered;
use crate::rng::derive_seed;
use crate::tail_metrics::{check_tau, order_index, SortedSample};

/// Rejection threshold of the chi-square(1) test at the 95% level.
pub const KUPIEC_CRITICAL_95: f64 = 3.84;
pub const TAU_STAR_TOL: f64 = 1e-4;
pub const TAU_STAR_MAX_ITER: usize = 60;
const TAU_STAR_UPPER: f64 = 1.0 - 1e-6;

/// `x ln(x / y)` with `0 ln 0 = 0`.
fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Kupiec's likelihood-ratio statistic for `m` violations in `t` days.
pub fn kupiec_statistic(t: usize, m: usize, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if t == 0 || m > t {
        return Err(Error::InvalidInput(format!("need 0 <= m <= T and T >= 1, got m={m}, T={t}")));
    }
    let (tf, mf) = (t as f64, m as f64);
    let p = mf / tf;
    let fitted = xlogy(tf - mf, 1.0 - p) + xlogy(mf, p);
    let null = (tf - mf) * (1.0 - tau).ln() + mf * tau.ln();
    Ok((2.0 * (fitted - null)).max(0.0))
}

/// Empirical joint lower-orthant probability of a fixed pair sample, as a
/// function of the common marginal level.
///
/// Row `k` lies strictly below both `ceil(t K)`-th order statistics iff
/// `max(R^x_k, R^y_k) < ceil(t K)`, where `R_k` counts the sample values
/// `<=` the row's own value. Sorting that maximum makes each evaluation a
/// binary search.
#[derive(Debug, Clone)]
pub struct JointLowerOrthant {
    max_rank: Vec<usize>,
}

fn weak_ranks(x: &[f64]) -> Vec<usize> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    x.iter().map(|v| s.partition_point(|w| w <= v)).collect()
}

impl JointLowerOrthant {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::InvalidInput("joint probability needs equal, non-empty samples".into()));
        }
        let (rx, ry) = (weak_ranks(x), weak_ranks(y));
        let mut max_rank: Vec<usize> = rx.iter().zip(&ry).map(|(a, b)| *a.max(b)).collect();
        max_rank.sort_unstable();
        Ok(JointLowerOrthant { max_rank })
    }

    pub fn len(&self) -> usize {
        self.max_rank.len()
    }

    pub fn is_empty(&self) -> bool {
        self.max_rank.is_empty()
    }

    /// `P{X < Q_X(t), Y < Q_Y(t)}` on the sample.
    pub fn probability(&self, t: f64) -> f64 {
        let c = order_index(t, self.len());
        self.max_rank.partition_point(|&r| r < c) as f64 / self.len() as f64
    }

    /// Bisects `t` on `[tau, 1 - 1e-6]` until `|P(t) - tau| <= tol`.
    pub fn solve(&self, tau: f64, tol: f64) -> Result<f64> {
        check_tau(tau)?;
        if self.probability(TAU_STAR_UPPER) < tau {
            return Err(Error::InconsistentSampler(format!(
                "joint probability at the upper bracket is {} < tau = {tau}",
                self.probability(TAU_STAR_UPPER)
            )));
        }
        let (mut lo, mut hi) = (tau, TAU_STAR_UPPER);
        if (self.probability(lo) - tau).abs() <= tol {
            return Ok(lo);
        }
        let mut best = (f64::INFINITY, hi);
        for _ in 0..TAU_STAR_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            let p = self.probability(mid);
            let gap = (p - tau).abs();
            if gap < best.0 {
                best = (gap, mid);
            }
            if gap <= tol {
                return Ok(mid);
            }
            if p < tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        log::warn!("tau* bisection ended {:.2e} away from tau = {tau}", best.0);
        Ok(best.1)
    }
}

/// `tau*` for one pair sample.
pub fn solve_tau_star(x: &[f64], y: &[f64], tau: f64, tol: f64) -> Result<f64> {
    JointLowerOrthant::new(x, y)?.solve(tau, tol)
}

/// Source of innovation samples for each pair of coordinates.
pub trait PairSampler: Sync {
    fn dim(&self) -> usize;
    /// Innovation sample of coordinates `(i, j)`; `seed` is specific to the pair.
    fn pair_sample(&self, i: usize, j: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// One joint sample shared by all pairs.
pub struct JointSample(pub DMatrix<f64>);

impl PairSampler for JointSample {
    fn dim(&self) -> usize {
        self.0.ncols()
    }

    fn pair_sample(&self, i: usize, j: usize, _seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.0.column(i).iter().copied().collect(), self.0.column(j).iter().copied().collect()))
    }
}

/// Common marginal level and the innovation quantiles at it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairThresholds {
    pub tau: f64,
    pub tau_star: f64,
    pub q_x: f64,
    pub q_y: f64,
}

pub fn pair_thresholds(x: &[f64], y: &[f64], tau: f64, tol: f64) -> Result<PairThresholds> {
    let tau_star = solve_tau_star(x, y, tau, tol)?;
    Ok(PairThresholds {
        tau,
        tau_star,
        q_x: SortedSample::new(x)?.quantile(tau_star),
        q_y: SortedSample::new(y)?.quantile(tau_star),
    })
}

/// Day `t` is set iff both returns fall strictly below `mu_t + sigma_t q`.
pub fn violation_sequence(rx: &[f64], ry: &[f64], fx: &Filtered, fy: &Filtered, th: &PairThresholds) -> Vec<bool> {
    rx.iter()
        .zip(ry)
        .enumerate()
        .map(|(t, (&a, &b))| a < fx.mu[t] + fx.sigma[t] * th.q_x && b < fy.mu[t] + fy.sigma[t] * th.q_y)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageResult {
    pub pair: (usize, usize),
    pub tau: f64,
    pub tau_star: f64,
    pub t: usize,
    pub violations: usize,
    pub statistic: f64,
    pub reject_95: bool,
}

impl CoverageResult {
    pub fn from_violations(pair: (usize, usize), th: &PairThresholds, bits: &[bool]) -> Result<Self> {
        let m = bits.iter().filter(|b| **b).count();
        let statistic = kupiec_statistic(bits.len(), m, th.tau)?;
        Ok(CoverageResult {
            pair,
            tau: th.tau,
            tau_star: th.tau_star,
            t: bits.len(),
            violations: m,
            statistic,
            reject_95: statistic > KUPIEC_CRITICAL_95,
        })
    }

    pub fn ideal_violations(&self) -> f64 {
        self.tau * self.t as f64
    }
}

pub const COVERAGE_HEADER: &str = "pair_i,pair_j,tau,tau_star,T,violations,ideal_violations,statistic,reject_95";

/// CSV with [`COVERAGE_HEADER`]; pair indices are 0-based.
pub fn coverage_csv(results: &[CoverageResult]) -> String {
    let mut s = String::from(COVERAGE_HEADER);
    s.push('\n');
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.pair.0,
            r.pair.1,
            r.tau,
            r.tau_star,
            r.t,
            r.violations,
            r.ideal_violations(),
            r.statistic,
            r.reject_95
        );
    }
    s
}

/// All unordered pairs in lexicographic order.
pub fn lexicographic_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Coverage test for every pair of columns of `test_returns`.
///
/// `forecasts[i]` holds the conditional moments of column `i` over the test
/// rows. Results come back in lexicographic pair order whatever the
/// scheduling.
pub fn pairwise_coverage_matrix(
    test_returns: &DMatrix<f64>,
    forecasts: &[Filtered],
    sampler: &dyn PairSampler,
    tau: f64,
    tol: f64,
    seed: u64,
) -> Result<Vec<CoverageResult>> {
    let (t, n) = test_returns.shape();
    if n < 2 {
        return Err(Error::InvalidInput("coverage matrix needs at least two series".into()));
    }
    if forecasts.len() != n || sampler.dim() != n {
        return Err(Error::InvalidInput(format!(
            "{} columns, {} forecasts, sampler of dimension {}",
            n,
            forecasts.len(),
            sampler.dim()
        )));
    }
    if forecasts.iter().any(|f| f.mu.len() != t || f.sigma.len() != t) {
        return Err(Error::InvalidInput("forecast length differs from the test set".into()));
    }
    let pairs = lexicographic_pairs(n);
    pairs
        .par_iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let (x, y) = sampler.pair_sample(i, j, derive_seed(seed, k as u64))?;
            let th = pair_thresholds(&x, &y, tau, tol)?;
            let ri: Vec<f64> = test_returns.column(i).iter().copied().collect();
            let rj: Vec<f64> = test_returns.column(j).iter().copied().collect();
            let bits = violation_sequence(&ri, &rj, &forecasts[i], &forecasts[j], &th);
            CoverageResult::from_violations((i, j), &th, &bits)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::garch::GarchState;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, 0);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn kupiec_examples() {
        assert_eq!(kupiec_statistic(1000, 10, 0.01).unwrap(), 0.0);
        assert!((kupiec_statistic(2076, 10, 0.01).unwrap() - 6.96).abs() < 0.02);
        assert!((kupiec_statistic(2076, 25, 0.01).unwrap() - 0.82).abs() < 0.02);
        let all_clear = kupiec_statistic(100, 0, 0.05).unwrap();
        assert!((all_clear + 200.0 * 0.95f64.ln()).abs() < 1e-12);
        assert!(kupiec_statistic(100, 101, 0.05).is_err());
        assert!(kupiec_statistic(0, 0, 0.05).is_err());
    }

    proptest! {
        #[test]
        fn kupiec_is_unimodal(t in 1usize..300, tau in 0.005f64..0.5) {
            let stats: Vec<f64> = (0..=t).map(|m| kupiec_statistic(t, m, tau).unwrap()).collect();
            let center = tau * t as f64;
            for m in 1..=t {
                if (m as f64) <= center {
                    prop_assert!(stats[m] <= stats[m - 1] + 1e-9);
                } else if ((m - 1) as f64) >= center {
                    prop_assert!(stats[m] >= stats[m - 1] - 1e-9);
                }
            }
            prop_assert!(stats.iter().all(|s| *s >= 0.0));
        }
    }

    #[test]
    fn joint_probability_matches_direct_count() {
        let x = normals(5_000, 1);
        let y: Vec<f64> = normals(5_000, 2).iter().zip(&x).map(|(e, a)| 0.6 * a + 0.8 * e).collect();
        let j = JointLowerOrthant::new(&x, &y).unwrap();
        let (sx, sy) = (SortedSample::new(&x).unwrap(), SortedSample::new(&y).unwrap());
        for t in [0.003, 0.01, 0.1, 0.37, 0.9] {
            let (qx, qy) = (sx.quantile(t), sy.quantile(t));
            let direct = x.iter().zip(&y).filter(|(a, b)| **a < qx && **b < qy).count() as f64 / 5_000.0;
            assert_eq!(j.probability(t), direct);
        }
    }

    #[test]
    fn tau_star_boundaries() {
        let x = normals(1_000_000, 3);
        let t = solve_tau_star(&x, &x, 0.01, TAU_STAR_TOL).unwrap();
        assert!((t - 0.01).abs() < 1e-3);
        let y = normals(1_000_000, 4);
        let t = solve_tau_star(&x, &y, 0.01, TAU_STAR_TOL).unwrap();
        assert!((t - 0.1).abs() < 1e-3, "{t}");
    }

    #[test]
    fn inconsistent_sampler_is_rejected() {
        // countermonotone, 10 points: at most 8 rows lie below both maxima
        let x: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!(solve_tau_star(&x, &y, 0.8, 1e-4).is_ok());
        assert!(matches!(solve_tau_star(&x, &y, 0.9, 1e-4), Err(Error::InconsistentSampler(_))));
    }

    #[test]
    fn tau_star_is_monotone() {
        let x = normals(200_000, 5);
        let y: Vec<f64> = normals(200_000, 6).iter().zip(&x).map(|(e, a)| 0.5 * a + 0.866 * e).collect();
        let j = JointLowerOrthant::new(&x, &y).unwrap();
        let mut prev = 0.0;
        for tau in [0.005, 0.01, 0.02, 0.05, 0.1] {
            let t = j.solve(tau, TAU_STAR_TOL).unwrap();
            assert!(t > prev);
            prev = t;
        }
    }

    fn flat_forecast(t: usize, mu: f64, sigma: f64) -> Filtered {
        Filtered {
            residuals: vec![0.0; t],
            mu: vec![mu; t],
            sigma: vec![sigma; t],
            last_state: GarchState { sigma2: sigma * sigma, eps: 0.0, r: 0.0 },
        }
    }

    #[test]
    fn violations_under_a_true_independent_null() {
        let t = 400_000;
        let (rx, ry) = (normals(t, 7), normals(t, 8));
        let th = pair_thresholds(&normals(1_000_000, 9), &normals(1_000_000, 10), 0.01, TAU_STAR_TOL).unwrap();
        let f = flat_forecast(t, 0.0, 1.0);
        let bits = violation_sequence(&rx, &ry, &f, &f, &th);
        let freq = bits.iter().filter(|b| **b).count() as f64 / t as f64;
        let se = (0.01f64 * 0.99 / t as f64).sqrt();
        assert!((freq - 0.01).abs() < 4.0 * se, "{freq}");
    }

    #[test]
    fn thresholds_at_the_top_flag_every_day() {
        let t = 50;
        let f = flat_forecast(t, 0.0, 1.0);
        let th = PairThresholds { tau: 0.01, tau_star: 1.0 - 1e-6, q_x: 1e9, q_y: 1e9 };
        let r = normals(t, 1);
        assert!(violation_sequence(&r, &r, &f, &f, &th).iter().all(|b| *b));
    }

    #[test]
    fn violations_invariant_to_common_increasing_map() {
        let t = 2_000;
        let (rx, ry) = (normals(t, 11), normals(t, 12));
        let f = flat_forecast(t, 0.1, 1.3);
        let th = PairThresholds { tau: 0.01, tau_star: 0.1, q_x: -1.2, q_y: -0.9 };
        let base = violation_sequence(&rx, &ry, &f, &f, &th);
        // map returns and thresholds through exp: thresholds become exp(mu + sigma q)
        let ex: Vec<f64> = rx.iter().map(|v| v.exp()).collect();
        let ey: Vec<f64> = ry.iter().map(|v| v.exp()).collect();
        let fx = flat_forecast(t, 0.0, 1.0);
        let mapped = PairThresholds { q_x: (0.1 + 1.3 * th.q_x).exp(), q_y: (0.1 + 1.3 * th.q_y).exp(), ..th };
        assert_eq!(base, violation_sequence(&ex, &ey, &fx, &fx, &mapped));
    }

    #[test]
    fn matrix_shape_and_order() {
        let n = 16;
        let t = 300;
        let sample = JointSample(DMatrix::from_fn(20_000, n, |r, c| ((r * 31 + c * 17) % 1009) as f64 + 0.001 * c as f64));
        let test = DMatrix::from_fn(t, n, |r, c| ((r * 7 + c) % 13) as f64);
        let forecasts = vec![flat_forecast(t, 0.0, 1.0); n];
        let res = pairwise_coverage_matrix(&test, &forecasts, &sample, 0.01, 1e-3, 1).unwrap();
        assert_eq!(res.len(), 120);
        assert_eq!(res.iter().map(|r| r.pair).collect::<Vec<_>>(), lexicographic_pairs(n));
        let csv = coverage_csv(&res);
        assert!(csv.starts_with(COVERAGE_HEADER));
        assert_eq!(csv.lines().count(), 121);
    }

    #[test]
    fn two_series_match_the_pairwise_path() {
        let t = 500;
        let x = normals(100_000, 13);
        let y = normals(100_000, 14);
        let sample = JointSample(DMatrix::from_fn(100_000, 2, |r, c| if c == 0 { x[r] } else { y[r] }));
        let (rx, ry) = (normals(t, 15), normals(t, 16));
        let test = DMatrix::from_fn(t, 2, |r, c| if c == 0 { rx[r] } else { ry[r] });
        let f = flat_forecast(t, 0.0, 1.0);
        let res = pairwise_coverage_matrix(&test, &[f.clone(), f.clone()], &sample, 0.01, TAU_STAR_TOL, 0).unwrap();
        let th = pair_thresholds(&x, &y, 0.01, TAU_STAR_TOL).unwrap();
        let bits = violation_sequence(&rx, &ry, &f, &f, &th);
        assert_eq!(res, vec![CoverageResult::from_violations((0, 1), &th, &bits).unwrap()]);
    }
}
