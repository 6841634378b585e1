//! The univariate heavy-tailed quantile function (HTQF).
//!
//! A latent variable `z` with a known law is pushed through the tail
//! transform
//!
//! ```text
//! g(z | u, v) = z * (u^z / A + v^(-z) / A + 1),    u, v >= 1, A >= 3
//! ```
//!
//! which is strictly increasing, so `y = mu + sigma * g(z)` has quantile
//! function `mu + sigma * g(Z_tau)`. `u` thickens the right tail and `v` the
//! left one; `u = v = 1` leaves a rescaled copy `(1 + 2/A) z` of the latent.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{check_param, Error, Result};
use crate::rng::sample_rows;

/// Tail-damping constant used throughout unless configured otherwise.
pub const DEFAULT_A: f64 = 4.0;
/// Upper cap on tail parameters `u` and `v`.
pub const TAIL_MAX: f64 = 64.0;
/// Exponents `z ln u` are clamped to this magnitude before `exp`.
const EXP_CLAMP: f64 = 700.0;

const INVERSE_TOL: f64 = 1e-10;
const INVERSE_MAX_ITER: usize = 200;

/// Distribution of the untransformed latent variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatentLaw {
    StandardNormal,
    StudentT { df: f64 },
}

impl Default for LatentLaw {
    fn default() -> Self {
        LatentLaw::StandardNormal
    }
}

impl LatentLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LatentLaw::StandardNormal => Ok(()),
            LatentLaw::StudentT { df } => {
                check_param("df", df, df > 2.0, "latent Student-t needs df > 2")
            }
        }
    }

    pub fn quantile(&self, tau: f64) -> f64 {
        match *self {
            LatentLaw::StandardNormal => Normal::standard().inverse_cdf(tau),
            LatentLaw::StudentT { df } => StudentsT::new(0.0, 1.0, df)
                .expect("validated df")
                .inverse_cdf(tau),
        }
    }

    /// A prepared sampler; construct once per batch of draws.
    pub fn sampler(&self) -> LatentSampler {
        match *self {
            LatentLaw::StandardNormal => LatentSampler::Normal,
            LatentLaw::StudentT { df } => {
                LatentSampler::T(StudentT::new(df).expect("validated df"))
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum LatentSampler {
    Normal,
    T(StudentT<f64>),
}

impl Distribution<f64> for LatentSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            LatentSampler::Normal => rng.sample(StandardNormal),
            LatentSampler::T(t) => t.sample(rng),
        }
    }
}

pub(crate) fn validate_tails(u: f64, v: f64, a: f64) -> Result<()> {
    check_param("u", u, (1.0..=TAIL_MAX).contains(&u), "need 1 <= u <= 64")?;
    check_param("v", v, (1.0..=TAIL_MAX).contains(&v), "need 1 <= v <= 64")?;
    check_param("A", a, a >= 3.0, "need A >= 3")
}

#[inline]
fn clamped_exp(x: f64) -> f64 {
    x.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
}

/// Tail transform with precomputed logarithms; no validation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tail {
    ln_u: f64,
    ln_v: f64,
    inv_a: f64,
}

impl Tail {
    #[inline]
    pub(crate) fn new(u: f64, v: f64, a: f64) -> Self {
        Tail {
            ln_u: u.ln(),
            ln_v: v.ln(),
            inv_a: 1.0 / a,
        }
    }

    /// Bracketed factor `u^z/A + v^-z/A + 1`.
    #[inline]
    pub(crate) fn factor(&self, z: f64) -> f64 {
        (clamped_exp(z * self.ln_u) + clamped_exp(-z * self.ln_v)) * self.inv_a + 1.0
    }

    /// `(u^z, v^-z)`.
    #[inline]
    pub(crate) fn exp_parts(&self, z: f64) -> (f64, f64) {
        (clamped_exp(z * self.ln_u), clamped_exp(-z * self.ln_v))
    }

    #[inline]
    pub(crate) fn g(&self, z: f64) -> f64 {
        z * self.factor(z)
    }

    #[inline]
    pub(crate) fn g_prime(&self, z: f64) -> f64 {
        let eu = clamped_exp(z * self.ln_u);
        let ev = clamped_exp(-z * self.ln_v);
        (eu + ev) * self.inv_a + 1.0 + z * (self.ln_u * eu - self.ln_v * ev) * self.inv_a
    }

    /// Safeguarded Newton inversion of `g`.
    ///
    /// Falls back to bisection whenever the Newton step leaves the bracket
    /// or fails to halve the previous step.
    pub(crate) fn g_inv(&self, y: f64) -> f64 {
        if y == 0.0 {
            return 0.0;
        }
        // factor >= 1, so the root lies between 0 and y.
        let (mut lo, mut hi) = if y > 0.0 { (0.0, y) } else { (y, 0.0) };
        let mut z = (y / (1.0 + 2.0 * self.inv_a)).clamp(lo, hi);
        let mut prev_step = hi - lo;
        let mut step = prev_step;
        for _ in 0..INVERSE_MAX_ITER {
            let r = self.g(z) - y;
            if r == 0.0 {
                return z;
            }
            if r > 0.0 {
                hi = z;
            } else {
                lo = z;
            }
            let newton = r / self.g_prime(z);
            let next = z - newton;
            let old = step;
            if !(next > lo && next < hi) || 2.0 * newton.abs() > prev_step.abs() {
                step = 0.5 * (hi - lo);
                z = lo + step;
            } else {
                step = newton;
                z = next;
            }
            prev_step = old;
            if step.abs() <= INVERSE_TOL * 1e-2 * z.abs().max(1.0) || hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()) {
                break;
            }
        }
        z
    }
}

/// `g(z | u, v) = z (u^z/A + v^-z/A + 1)`.
pub fn g_transform(z: f64, u: f64, v: f64, a: f64) -> Result<f64> {
    validate_tails(u, v, a)?;
    check_param("z", z, true, "z must be finite")?;
    Ok(Tail::new(u, v, a).g(z))
}

/// Derivative of [`g_transform`] in `z`; bounded below by `1 - 2e^-2/A`.
pub fn g_derivative(z: f64, u: f64, v: f64, a: f64) -> Result<f64> {
    validate_tails(u, v, a)?;
    check_param("z", z, true, "z must be finite")?;
    Ok(Tail::new(u, v, a).g_prime(z))
}

/// The unique `z` with `g(z | u, v) = y`.
pub fn g_inverse(y: f64, u: f64, v: f64, a: f64) -> Result<f64> {
    validate_tails(u, v, a)?;
    check_param("y", y, true, "y must be finite")?;
    Ok(Tail::new(u, v, a).g_inv(y))
}

/// Analytic lower bound of `g'` for a given `A`.
pub fn derivative_lower_bound(a: f64) -> f64 {
    1.0 - 2.0 * (-2.0f64).exp() / a
}

/// Parameters of one HTQF law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HtqfParams {
    pub mu: f64,
    pub sigma: f64,
    pub u: f64,
    pub v: f64,
    pub a: f64,
}

impl HtqfParams {
    pub fn new(mu: f64, sigma: f64, u: f64, v: f64, a: f64) -> Result<Self> {
        let p = HtqfParams {
            mu,
            sigma,
            u,
            v,
            a,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters with the default `A = 4`.
    pub fn with_default_a(mu: f64, sigma: f64, u: f64, v: f64) -> Result<Self> {
        Self::new(mu, sigma, u, v, DEFAULT_A)
    }

    pub fn validate(&self) -> Result<()> {
        check_param("mu", self.mu, true, "mu must be finite")?;
        check_param("sigma", self.sigma, self.sigma > 0.0, "need sigma > 0")?;
        validate_tails(self.u, self.v, self.a)
    }

    pub(crate) fn tail(&self) -> Tail {
        Tail::new(self.u, self.v, self.a)
    }

    /// `mu + sigma g(z)`.
    pub fn transform(&self, z: f64) -> f64 {
        self.mu + self.sigma * self.tail().g(z)
    }

    /// Inverse of [`HtqfParams::transform`].
    pub fn latent(&self, y: f64) -> f64 {
        self.tail().g_inv((y - self.mu) / self.sigma)
    }
}

pub fn htqf_quantile(tau: f64, params: &HtqfParams, law: LatentLaw) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidParameter {
            name: "tau",
            value: tau,
            reason: "probability must lie in (0, 1)",
        });
    }
    params.validate()?;
    law.validate()?;
    Ok(params.transform(law.quantile(tau)))
}

/// `n` i.i.d. draws of `mu + sigma g(z)`. `n = 0` yields an empty vector.
pub fn htqf_sample(n: usize, params: &HtqfParams, law: LatentLaw, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    law.validate()?;
    let sampler = law.sampler();
    let p = *params;
    let m = sample_rows(n, 1, seed, |rng, row| {
        row[0] = p.transform(sampler.sample(rng));
    });
    Ok(m.data.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn g_examples() {
        assert_eq!(g_transform(0.0, 3.0, 2.0, 4.0).unwrap(), 0.0);
        assert_abs_diff_eq!(g_transform(2.0, 1.0, 1.0, 4.0).unwrap(), 3.0, epsilon = 1e-15);
        // 1 * (2/4 + 1.5^-1/4 + 1)
        assert_abs_diff_eq!(
            g_transform(1.0, 2.0, 1.5, 4.0).unwrap(),
            1.0 + 0.5 + 1.0 / 6.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(g_transform(1.0, 2.0, 1.5, 4.0).unwrap(), 1.6666667, epsilon = 1e-7);
    }

    #[test]
    fn g_rejects_bad_parameters() {
        assert!(g_transform(1.0, 0.9, 1.0, 4.0).is_err());
        assert!(g_transform(1.0, 1.0, 65.0, 4.0).is_err());
        assert!(g_transform(1.0, 1.0, 1.0, 2.5).is_err());
        assert!(g_transform(f64::NAN, 1.0, 1.0, 4.0).is_err());
        assert!(g_inverse(f64::INFINITY, 1.0, 1.0, 4.0).is_err());
    }

    #[test]
    fn derivative_examples() {
        assert_abs_diff_eq!(g_derivative(0.0, 1.0, 1.0, 4.0).unwrap(), 1.5, epsilon = 1e-15);
        for z in [-5.0, -1.3, 0.2, 7.0] {
            assert_abs_diff_eq!(g_derivative(z, 1.0, 1.0, 4.0).unwrap(), 1.5, epsilon = 1e-14);
        }
        let (z, u, v, a) = (0.7, 2.0, 3.0, 4.0);
        let h = 1e-6;
        let fd = (g_transform(z + h, u, v, a).unwrap() - g_transform(z - h, u, v, a).unwrap()) / (2.0 * h);
        assert!((g_derivative(z, u, v, a).unwrap() - fd).abs() < 1e-6);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(g_inverse(0.0, 5.0, 2.0, 4.0).unwrap(), 0.0);
        assert_abs_diff_eq!(g_inverse(3.0, 1.0, 1.0, 4.0).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g_inverse(1.0 + 0.5 + 1.0 / 6.0, 2.0, 1.5, 4.0).unwrap(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(g_inverse(1.6666667, 2.0, 1.5, 4.0).unwrap(), 1.0, epsilon = 1e-7);
    }

    #[test]
    fn inverse_handles_extreme_tails() {
        for y in [-1e6, -50.0, 1e-300, 40.0, 1e8] {
            let z = g_inverse(y, 64.0, 64.0, 3.0).unwrap();
            let back = g_transform(z, 64.0, 64.0, 3.0).unwrap();
            assert!(((back - y) / y).abs() < 1e-8, "y={y} z={z} back={back}");
        }
    }

    #[test]
    fn quantile_examples() {
        let p = HtqfParams::with_default_a(3.2, 1.0, 2.0, 5.0).unwrap();
        assert_abs_diff_eq!(htqf_quantile(0.5, &p, LatentLaw::StandardNormal).unwrap(), 3.2, epsilon = 1e-12);

        let lin = HtqfParams::with_default_a(0.0, 1.0, 1.0, 1.0).unwrap();
        let q = htqf_quantile(0.975, &lin, LatentLaw::StandardNormal).unwrap();
        assert_abs_diff_eq!(q, 1.5 * 1.959963984540054, epsilon = 1e-9);
        assert_abs_diff_eq!(q, 2.9399, epsilon = 1e-4);

        // Z = -2.326348, factor = 1/4 + 3^2.326348/4 + 1
        let left = HtqfParams::with_default_a(0.0, 1.0, 1.0, 3.0).unwrap();
        let z = -2.3263478740408408_f64;
        let expect = z * (0.25 + 3f64.powf(-z) / 4.0 + 1.0);
        let q = htqf_quantile(0.01, &left, LatentLaw::StandardNormal).unwrap();
        assert_abs_diff_eq!(q, expect, epsilon = 1e-9);
        assert_abs_diff_eq!(q, -10.399, epsilon = 1e-3);
    }

    #[test]
    fn quantile_rejects_tau_outside_unit_interval() {
        let p = HtqfParams::with_default_a(0.0, 1.0, 1.0, 1.0).unwrap();
        for tau in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(htqf_quantile(tau, &p, LatentLaw::StandardNormal).is_err());
        }
    }

    #[test]
    fn degenerate_tails_are_linear() {
        for law in [LatentLaw::StandardNormal, LatentLaw::StudentT { df: 5.0 }] {
            for a in [3.0, 4.0, 10.0] {
                let p = HtqfParams::new(0.3, 2.0, 1.0, 1.0, a).unwrap();
                for tau in [0.001, 0.2, 0.5, 0.77, 0.999] {
                    let q = htqf_quantile(tau, &p, law).unwrap();
                    let expect = 0.3 + 2.0 * (1.0 + 2.0 / a) * law.quantile(tau);
                    assert_abs_diff_eq!(q, expect, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn sample_edge_cases() {
        let p = HtqfParams::with_default_a(0.0, 1.0, 1.0, 1.0).unwrap();
        assert!(htqf_sample(0, &p, LatentLaw::StandardNormal, 1).unwrap().is_empty());
        let a = htqf_sample(1000, &p, LatentLaw::StandardNormal, 9).unwrap();
        let b = htqf_sample(1000, &p, LatentLaw::StandardNormal, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn monotone_on_dense_grid() {
        let bound = derivative_lower_bound(4.0);
        for &u in &[1.0, 1.5, 3.0, 10.0, 64.0] {
            for &v in &[1.0, 2.0, 7.0, 64.0] {
                let t = Tail::new(u, v, 4.0);
                let mut z = -10.0;
                while z <= 10.0 {
                    let d = t.g_prime(z);
                    assert!(d >= bound - 1e-12, "u={u} v={v} z={z} d={d}");
                    z += 1e-3;
                }
            }
        }
    }

    proptest! {
        #[test]
        fn derivative_bound_holds(z in -10.0f64..10.0, u in 1.0f64..64.0, v in 1.0f64..64.0, a in 3.0f64..20.0) {
            let d = g_derivative(z, u, v, a).unwrap();
            prop_assert!(d >= derivative_lower_bound(a) - 1e-12);
        }

        #[test]
        fn inverse_roundtrip(z in -8.0f64..8.0, u in 1.0f64..64.0, v in 1.0f64..64.0) {
            let y = g_transform(z, u, v, 4.0).unwrap();
            let back = g_inverse(y, u, v, 4.0).unwrap();
            prop_assert!((back - z).abs() < 1e-8, "z={} back={}", z, back);
        }

        #[test]
        fn derivative_matches_central_difference(z in -4.0f64..4.0, u in 1.0f64..4.0, v in 1.0f64..4.0) {
            let h = 1e-6;
            let fd = (g_transform(z + h, u, v, 4.0).unwrap() - g_transform(z - h, u, v, 4.0).unwrap()) / (2.0 * h);
            prop_assert!((g_derivative(z, u, v, 4.0).unwrap() - fd).abs() < 1e-6);
        }
    }
}
