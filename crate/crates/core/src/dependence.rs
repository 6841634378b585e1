//! Lower-triangular and one-factor tail dependence random vectors.
//!
//! A triangular model maps i.i.d. latents `z_1..z_n` to
//!
//! ```text
//! y_i = mu_i + sum_{j <= i} sigma_ij g(z_j | u_ij, v_ij)
//! ```
//!
//! so `sigma` plays the role of a Cholesky factor while `u_ij`, `v_ij` set
//! how strongly an extreme of `z_j` propagates into `y_i`. The one-factor
//! model is the special case with a single shared market latent.

use nalgebra::DMatrix;
use rand_distr::Distribution;

use crate::error::{check_param, Error, Result};
use crate::htqf::{validate_tails, HtqfParams, LatentLaw, Tail, DEFAULT_A};
use crate::rng::sample_rows;

/// Largest dimension the row samplers handle.
pub const MAX_DIM: usize = 64;

/// Anything that can draw i.i.d. rows of a joint distribution.
pub trait JointSampler: Send + Sync {
    fn dim(&self) -> usize;
    fn sample(&self, n_obs: usize, seed: u64) -> Result<DMatrix<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangularModel {
    pub mu: Vec<f64>,
    /// Lower-triangular loadings; the diagonal is strictly positive.
    pub sigma: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub a: f64,
    pub law: LatentLaw,
    /// Off-diagonal tails tied to their column's diagonal entry.
    pub reduced: bool,
}

impl TriangularModel {
    pub fn new(
        mu: Vec<f64>,
        sigma: DMatrix<f64>,
        u: DMatrix<f64>,
        v: DMatrix<f64>,
        a: f64,
        law: LatentLaw,
        reduced: bool,
    ) -> Result<Self> {
        let m = TriangularModel {
            mu,
            sigma,
            u,
            v,
            a,
            law,
            reduced,
        };
        m.validate()?;
        Ok(m)
    }

    /// Model with every `sigma_ij`, `u_ij`, `v_ij` (i > j) equal, matching the
    /// symmetric settings used for the proxy tail dependence sweeps.
    pub fn uniform(n: usize, diag: (f64, f64, f64), off: (f64, f64, f64)) -> Result<Self> {
        let mut sigma = DMatrix::zeros(n, n);
        let mut u = DMatrix::zeros(n, n);
        let mut v = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let (s, uu, vv) = if i == j { diag } else { off };
                sigma[(i, j)] = s;
                u[(i, j)] = uu;
                v[(i, j)] = vv;
            }
        }
        Self::new(vec![0.0; n], sigma, u, v, DEFAULT_A, LatentLaw::StandardNormal, false)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mu.len();
        if n == 0 {
            return Err(Error::InvalidInput("triangular model needs n >= 1".into()));
        }
        for (name, m) in [("sigma", &self.sigma), ("u", &self.u), ("v", &self.v)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::InvalidInput(format!(
                    "{name} must be {n}x{n}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        check_param("A", self.a, self.a >= 3.0, "need A >= 3")?;
        self.law.validate()?;
        for i in 0..n {
            check_param("mu", self.mu[i], true, "mu must be finite")?;
            check_param("sigma_ii", self.sigma[(i, i)], self.sigma[(i, i)] > 0.0, "diagonal must be positive")?;
            for j in 0..n {
                if j > i {
                    if self.sigma[(i, j)] != 0.0 || self.u[(i, j)] != 0.0 || self.v[(i, j)] != 0.0 {
                        return Err(Error::InvalidInput(format!(
                            "upper-triangle entry ({i},{j}) must be zero"
                        )));
                    }
                    continue;
                }
                check_param("sigma_ij", self.sigma[(i, j)], true, "sigma must be finite")?;
                validate_tails(self.u[(i, j)], self.v[(i, j)], self.a)?;
                if self.reduced && (self.u[(i, j)] != self.u[(j, j)] || self.v[(i, j)] != self.v[(j, j)]) {
                    return Err(Error::InvalidInput(format!(
                        "reduced model needs u,v at ({i},{j}) equal to column diagonal"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of free parameters.
    pub fn parameter_count(&self) -> usize {
        parameter_count(self.dim(), self.reduced)
    }

    /// The HTQF law of the first coordinate (and of every residual `y_i'`).
    pub fn diagonal_htqf(&self, i: usize) -> HtqfParams {
        HtqfParams {
            mu: self.mu[i],
            sigma: self.sigma[(i, i)],
            u: self.u[(i, i)],
            v: self.v[(i, i)],
            a: self.a,
        }
    }

    fn tails(&self) -> Vec<Vec<(f64, Tail)>> {
        (0..self.dim())
            .map(|i| {
                (0..=i)
                    .map(|j| (self.sigma[(i, j)], Tail::new(self.u[(i, j)], self.v[(i, j)], self.a)))
                    .collect()
            })
            .collect()
    }

    /// Applies the triangular transform to one latent row.
    pub fn transform_row(&self, z: &[f64], out: &mut [f64]) {
        let tails = self.tails();
        transform_with(&self.mu, &tails, z, out);
    }
}

fn transform_with(mu: &[f64], tails: &[Vec<(f64, Tail)>], z: &[f64], out: &mut [f64]) {
    for (i, row) in tails.iter().enumerate() {
        let mut y = mu[i];
        for (j, (s, t)) in row.iter().enumerate() {
            if *s != 0.0 {
                y += s * t.g(z[j]);
            }
        }
        out[i] = y;
    }
}

pub fn parameter_count(n: usize, reduced: bool) -> usize {
    let tri = (n * n + n) / 2;
    if reduced {
        3 * n + tri
    } else {
        n + 3 * tri
    }
}

/// Draws `n_obs` rows: a full latent row first, then the transform.
pub fn triangular_sample(model: &TriangularModel, n_obs: usize, seed: u64) -> Result<DMatrix<f64>> {
    model.validate()?;
    let n = model.dim();
    if n > MAX_DIM {
        return Err(Error::InvalidInput(format!("at most {MAX_DIM} dimensions are supported")));
    }
    let tails = model.tails();
    let sampler = model.law.sampler();
    Ok(sample_rows(n_obs, n, seed, |rng, row| {
        let mut buf = [0.0f64; MAX_DIM];
        let z = &mut buf[..n];
        for zj in z.iter_mut() {
            *zj = sampler.sample(rng);
        }
        transform_with(&model.mu, &tails, z, row);
    }))
}

impl JointSampler for TriangularModel {
    fn dim(&self) -> usize {
        TriangularModel::dim(self)
    }

    fn sample(&self, n_obs: usize, seed: u64) -> Result<DMatrix<f64>> {
        triangular_sample(self, n_obs, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams {
    pub alpha: f64,
    pub beta: f64,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssetParams {
    pub alpha: f64,
    /// Average sensitivity to the market latent.
    pub beta: f64,
    pub u_m: f64,
    pub v_m: f64,
    /// Idiosyncratic scale.
    pub gamma: f64,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneFactorModel {
    pub market: MarketParams,
    pub assets: Vec<AssetParams>,
    pub a: f64,
    pub law: LatentLaw,
}

impl OneFactorModel {
    pub fn new(market: MarketParams, assets: Vec<AssetParams>, a: f64, law: LatentLaw) -> Result<Self> {
        let m = OneFactorModel {
            market,
            assets,
            a,
            law,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.law.validate()?;
        let m = &self.market;
        check_param("alpha_M", m.alpha, true, "must be finite")?;
        check_param("beta_M", m.beta, m.beta > 0.0, "need beta_M > 0")?;
        validate_tails(m.u, m.v, self.a)?;
        for a in &self.assets {
            check_param("alpha_i", a.alpha, true, "must be finite")?;
            check_param("beta_i", a.beta, true, "must be finite")?;
            check_param("gamma_i", a.gamma, a.gamma > 0.0, "need gamma_i > 0")?;
            validate_tails(a.u_m, a.v_m, self.a)?;
            validate_tails(a.u, a.v, self.a)?;
        }
        Ok(())
    }

    /// Number of assets, excluding the market variable.
    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn market_htqf(&self) -> HtqfParams {
        HtqfParams {
            mu: self.market.alpha,
            sigma: self.market.beta,
            u: self.market.u,
            v: self.market.v,
            a: self.a,
        }
    }
}

/// Column 0 is the market variable, columns `1..=n` the assets.
pub fn onefactor_sample(model: &OneFactorModel, n_obs: usize, seed: u64) -> Result<DMatrix<f64>> {
    model.validate()?;
    let d = model.n_assets() + 1;
    if d > MAX_DIM {
        return Err(Error::InvalidInput(format!("at most {} assets are supported", MAX_DIM - 1)));
    }
    let market = Tail::new(model.market.u, model.market.v, model.a);
    let assets: Vec<(AssetParams, Tail, Tail)> = model
        .assets
        .iter()
        .map(|a| (*a, Tail::new(a.u_m, a.v_m, model.a), Tail::new(a.u, a.v, model.a)))
        .collect();
    let sampler = model.law.sampler();
    let (am, bm) = (model.market.alpha, model.market.beta);
    Ok(sample_rows(n_obs, d, seed, |rng, row| {
        let mut z = [0.0f64; MAX_DIM];
        for zj in z[..d].iter_mut() {
            *zj = sampler.sample(rng);
        }
        row[0] = am + bm * market.g(z[0]);
        for (i, (p, tm, ti)) in assets.iter().enumerate() {
            let mut y = p.alpha;
            if p.beta != 0.0 {
                y += p.beta * tm.g(z[0]);
            }
            y += p.gamma * ti.g(z[i + 1]);
            row[i + 1] = y;
        }
    }))
}

impl JointSampler for OneFactorModel {
    fn dim(&self) -> usize {
        self.n_assets() + 1
    }

    fn sample(&self, n_obs: usize, seed: u64) -> Result<DMatrix<f64>> {
        onefactor_sample(self, n_obs, seed)
    }
}

/// Embeds a one-factor model as an `(n+1)`-dimensional triangular model.
/// Unused lower-triangular slots carry `sigma = 0`, `u = v = 1`.
pub fn to_triangular(model: &OneFactorModel) -> Result<TriangularModel> {
    model.validate()?;
    let d = model.n_assets() + 1;
    let mut sigma = DMatrix::zeros(d, d);
    let mut u = DMatrix::zeros(d, d);
    let mut v = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            u[(i, j)] = 1.0;
            v[(i, j)] = 1.0;
        }
    }
    let mut mu = vec![model.market.alpha];
    sigma[(0, 0)] = model.market.beta;
    u[(0, 0)] = model.market.u;
    v[(0, 0)] = model.market.v;
    for (k, a) in model.assets.iter().enumerate() {
        let i = k + 1;
        mu.push(a.alpha);
        sigma[(i, 0)] = a.beta;
        u[(i, 0)] = a.u_m;
        v[(i, 0)] = a.v_m;
        sigma[(i, i)] = a.gamma;
        u[(i, i)] = a.u;
        v[(i, i)] = a.v;
    }
    TriangularModel::new(mu, sigma, u, v, model.a, model.law, false)
}
