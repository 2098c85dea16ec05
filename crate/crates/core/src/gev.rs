//! Generalized extreme value distribution: CDF, quantile, density,
//! negative log-likelihood, inverse-CDF sampling, and maximum-likelihood
//! fitting with a Nelder-Mead simplex over (mu, ln sigma, xi).

use crate::error::{Error, Result};
use crate::optim::nelder_mead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Shapes with |xi| below this use the Gumbel closed forms; the general
/// formulas lose all precision in (1 + xi z)^(-1/xi) as xi approaches 0.
pub const XI_EPS: f64 = 1e-6;

/// Additive penalty per out-of-support sample in the fitting objective.
/// Keeps the objective finite so the simplex retreats instead of crashing.
pub const SUPPORT_PENALTY: f64 = 1e10;

/// Location `mu`, scale `sigma` and shape `xi` of one GEV distribution.
///
/// The support is {x : 1 + xi (x - mu) / sigma > 0} when |xi| >= `XI_EPS`
/// and the whole real line otherwise (Gumbel branch).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
}

impl GevParams {
    pub fn new(mu: f64, sigma: f64, xi: f64) -> Result<Self> {
        let p = GevParams { mu, sigma, xi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || !self.sigma.is_finite() || !self.xi.is_finite() {
            return Err(Error::InvalidParam(format!(
                "GEV parameters must be finite, got (mu={}, sigma={}, xi={})",
                self.mu, self.sigma, self.xi
            )));
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "GEV sigma must be > 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn is_gumbel(&self) -> bool {
        self.xi.abs() < XI_EPS
    }

    /// Finite lower endpoint of the support (xi > 0 branch).
    pub fn lower_bound(&self) -> Option<f64> {
        (!self.is_gumbel() && self.xi > 0.0).then(|| self.mu - self.sigma / self.xi)
    }

    /// Finite upper endpoint of the support (xi < 0 branch).
    pub fn upper_bound(&self) -> Option<f64> {
        (!self.is_gumbel() && self.xi < 0.0).then(|| self.mu - self.sigma / self.xi)
    }

    /// The support variable t = 1 + xi (x - mu) / sigma. Every support
    /// test and density path shares this exact computation, so a point
    /// can never count as in-support for one and on the boundary for
    /// another. A positive result of `1.0 + q` is at least ~1.1e-16, so
    /// ln(t) of an in-support point is finite.
    fn support_t(&self, x: f64) -> f64 {
        1.0 + self.xi * ((x - self.mu) / self.sigma)
    }

    pub fn support_contains(&self, x: f64) -> bool {
        self.is_gumbel() || self.support_t(x) > 0.0
    }

    /// P(X <= x). Exactly 0 below the support (xi > 0) and 1 above it
    /// (xi < 0).
    pub fn cdf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        let z = (x - self.mu) / self.sigma;
        if self.is_gumbel() {
            return Ok((-(-z).exp()).exp());
        }
        let t_base = self.support_t(x);
        if t_base <= 0.0 {
            return Ok(if self.xi > 0.0 { 0.0 } else { 1.0 });
        }
        Ok((-t_base.powf(-1.0 / self.xi)).exp())
    }

    /// Inverse CDF at `prob` in (0,1).
    pub fn quantile(&self, prob: f64) -> Result<f64> {
        self.validate()?;
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::Domain(format!(
                "quantile probability must lie in (0,1), got {prob}"
            )));
        }
        let neg_ln_p = -prob.ln();
        if self.is_gumbel() {
            Ok(self.mu - self.sigma * neg_ln_p.ln())
        } else {
            Ok(self.mu + self.sigma / self.xi * (neg_ln_p.powf(-self.xi) - 1.0))
        }
    }

    /// Density at `x`; exactly 0 outside the support.
    pub fn pdf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        if !self.support_contains(x) {
            return Ok(0.0);
        }
        Ok(self.ln_pdf_in_support(x).exp())
    }

    /// log-density for in-support x. With w = ln t this is
    /// -ln sigma - (1 + 1/xi) w - exp(-w/xi), one log and one exp per
    /// call. Sharing t with the support test keeps w finite here, which
    /// bounds the likelihood: a xi < -1 fit cannot reach NLL -infinity
    /// by pinning its endpoint onto the largest sample.
    fn ln_pdf_in_support(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        if self.is_gumbel() {
            -self.sigma.ln() - z - (-z).exp()
        } else {
            let w = self.support_t(x).ln();
            -self.sigma.ln() - (1.0 + 1.0 / self.xi) * w - (-w / self.xi).exp()
        }
    }

    /// Negative log-likelihood of `samples`; out-of-support samples each
    /// add `SUPPORT_PENALTY` to the NLL of the in-support rest.
    pub fn nll(&self, samples: &[f64]) -> Result<f64> {
        self.validate()?;
        if samples.is_empty() {
            return Err(Error::Domain("NLL of an empty sample list".into()));
        }
        Ok(self.penalized_nll(samples))
    }

    fn penalized_nll(&self, samples: &[f64]) -> f64 {
        let mut nll = 0.0;
        let mut violations = 0usize;
        for &x in samples {
            if self.support_contains(x) {
                nll -= self.ln_pdf_in_support(x);
            } else {
                violations += 1;
            }
        }
        nll + violations as f64 * SUPPORT_PENALTY
    }

    /// `n` inverse-CDF draws from a generator seeded with `seed`;
    /// bit-reproducible per seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let u = u.clamp(1e-16, 1.0 - 1e-16);
                self.quantile(u).expect("clamped probability is in (0,1)")
            })
            .collect())
    }
}

/// Controls for `fit_gev`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    /// Simplex iteration cap per start.
    pub max_iters: usize,
    /// Convergence tolerance on the NLL spread across the simplex.
    pub tol: f64,
    /// Minimum number of samples to attempt a fit (>= 2).
    pub min_samples: usize,
    /// Extra jittered starts beyond the moment-based one.
    pub restarts: usize,
    /// Seed for the restart jitter.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iters: 2000,
            tol: 1e-8,
            min_samples: 10,
            restarts: 2,
            seed: 0,
        }
    }
}

/// Maximum-likelihood GEV fit.
///
/// Minimizes the penalized NLL with Nelder-Mead over (mu, ln sigma, xi).
/// The first start is Gumbel moment matching (sigma0 = s sqrt(6)/pi,
/// mu0 = mean - 0.5772 sigma0, xi0 = 0.1); `opts.restarts` further starts
/// jitter it with seeded Gaussian noise and the best final NLL wins.
/// Because the first simplex contains the initialization vertex, the
/// fitted NLL never exceeds the initialization NLL.
pub fn fit_gev(samples: &[f64], opts: &FitOptions) -> Result<GevParams> {
    if opts.min_samples < 2 {
        return Err(Error::InvalidParam(format!(
            "min_samples must be >= 2, got {}",
            opts.min_samples
        )));
    }
    if opts.max_iters == 0 || !(opts.tol > 0.0) {
        return Err(Error::InvalidParam(
            "max_iters must be positive and tol > 0".into(),
        ));
    }
    if samples.len() < opts.min_samples {
        return Err(Error::InsufficientData {
            needed: opts.min_samples,
            got: samples.len(),
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite sample in fit input".into()));
    }

    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    // Constant input leaves sd at pure rounding noise; compare against the
    // data scale rather than literal zero.
    let scale = samples.iter().fold(1.0_f64, |a, &x| a.max(x.abs()));
    if !(sd > scale * 1e-12) {
        return Err(Error::DegenerateData(
            "samples have zero variance".into(),
        ));
    }

    let sigma0 = sd * 6.0_f64.sqrt() / std::f64::consts::PI;
    let mu0 = mean - 0.5772 * sigma0;
    let init = [mu0, sigma0.ln(), 0.1];

    let objective = |v: &[f64]| -> f64 {
        let sigma = v[1].exp();
        if !sigma.is_finite() || sigma <= 0.0 {
            return f64::INFINITY;
        }
        let p = GevParams {
            mu: v[0],
            sigma,
            xi: v[2],
        };
        p.penalized_nll(samples)
    };

    let steps = [0.5 * sigma0, 0.25, 0.15];
    let mut best = nelder_mead(objective, &init, &steps, opts.max_iters, opts.tol);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.restarts {
        let g: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let start = [
            init[0] + 0.5 * sigma0 * g[0],
            init[1] + 0.3 * g[1],
            init[2] + 0.2 * g[2],
        ];
        let out = nelder_mead(objective, &start, &steps, opts.max_iters, opts.tol);
        if out.fx < best.fx {
            best = out;
        }
    }

    GevParams::new(best.x[0], best.x[1].exp(), best.x[2])
}
