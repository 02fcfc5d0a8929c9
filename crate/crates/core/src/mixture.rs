//! Gaussian mixtures with diagonal covariance: the analytic target
//! distribution for all toy experiments.
//!
//! The mixture admits a closed-form optimal noise predictor for the
//! forward process x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·ε, which serves as the
//! verification oracle for every sampler in the crate:
//!
//!   ε*(x, t) = (x − √ᾱ_t · E[x_0 | x_t = x]) / √(1−ᾱ_t)
//!
//! where the posterior mean is a responsibility-weighted combination of
//! per-component conditional means.

use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::rng::sequential_stream;
use crate::schedule::NoiseSchedule;
use rand::RngExt;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    /// K×d row-major component means.
    means: Vec<f64>,
    /// K×d row-major per-dimension variances.
    variances: Vec<f64>,
    k: usize,
    d: usize,
}

impl GaussianMixture {
    /// Weights may include zeros (degenerate components) but must be
    /// non-negative and sum to 1 within 1e-6; they are renormalized so the
    /// stored sum is exact to machine precision.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::param("weights", "mixture needs at least one component"));
        }
        if means.len() != k || variances.len() != k {
            return Err(Error::param(
                "means",
                "means and variances must have one row per weight",
            ));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::param("means", "dimension must be positive"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::param("weights", "weights must be finite and >= 0"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::param(
                "weights",
                format!("weights sum to {sum}, expected 1"),
            ));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        let mut flat_means = Vec::with_capacity(k * d);
        let mut flat_vars = Vec::with_capacity(k * d);
        for (m, v) in means.iter().zip(&variances) {
            if m.len() != d || v.len() != d {
                return Err(Error::param("means", "inconsistent component dimension"));
            }
            if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::param("variances", "variances must be finite and > 0"));
            }
            flat_means.extend_from_slice(m);
            flat_vars.extend_from_slice(v);
        }
        Ok(GaussianMixture {
            weights,
            means: flat_means,
            variances: flat_vars,
            k,
            d,
        })
    }

    pub fn standard_normal(d: usize) -> Self {
        GaussianMixture::new(vec![1.0], vec![vec![0.0; d]], vec![vec![1.0; d]]).unwrap()
    }

    pub fn n_components(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean_of(&self, k: usize) -> &[f64] {
        &self.means[k * self.d..(k + 1) * self.d]
    }

    pub fn variance_of(&self, k: usize) -> &[f64] {
        &self.variances[k * self.d..(k + 1) * self.d]
    }

    /// Draws n samples: component by weight, then a diagonal Gaussian draw.
    /// Sequential stream; deterministic given the seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleBatch> {
        if n < 1 {
            return Err(Error::param("n", "sample count must be at least 1"));
        }
        let mut rng = sequential_stream(seed);
        let mut points = Vec::with_capacity(n * self.d);
        for _ in 0..n {
            let k = self.pick_component(rng.random::<f64>());
            let mu = self.mean_of(k);
            let var = self.variance_of(k);
            for j in 0..self.d {
                let z: f64 = rng.sample(StandardNormal);
                points.push(mu[j] + var[j].sqrt() * z);
            }
        }
        let mut batch = SampleBatch::from_flat(n, self.d, points)?;
        batch.seed_tag = seed;
        Ok(batch)
    }

    fn pick_component(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.k - 1
    }

    /// Marginal distribution of x_t under the forward process: component k
    /// becomes N(√ᾱ_t·μ_k, ᾱ_t·var_k + (1−ᾱ_t)). t=0 returns the mixture
    /// unchanged.
    pub fn marginal_at(&self, sched: &NoiseSchedule, t: usize) -> Result<GaussianMixture> {
        if t > sched.len() {
            return Err(Error::param("t", format!("must be in 0..={}", sched.len())));
        }
        let ab = sched.alpha_bar(t);
        let sqrt_ab = ab.sqrt();
        let mut gm = self.clone();
        for i in 0..self.k * self.d {
            gm.means[i] = sqrt_ab * self.means[i];
            gm.variances[i] = ab * self.variances[i] + (1.0 - ab);
        }
        Ok(gm)
    }

    /// Optimal ε-prediction at (x, t): responsibilities are computed from
    /// the marginal densities with log-sum-exp stabilization, then combined
    /// with the per-component contributions. Per component,
    ///
    ///   ε*_k = (x − √ᾱ·(μ_k + shrink·(x − √ᾱ·μ_k))) / √(1−ᾱ)
    ///        = √(1−ᾱ)·(x − √ᾱ·μ_k) / (ᾱ·var_k + 1−ᾱ)
    ///
    /// and the second form is used: it avoids the catastrophic cancellation
    /// of the posterior-mean form as ᾱ → 1.
    pub fn analytic_eps(&self, sched: &NoiseSchedule, x: &[f64], t: usize) -> Result<Vec<f64>> {
        if t < 1 || t > sched.len() {
            return Err(Error::param("t", format!("must be in 1..={}", sched.len())));
        }
        if x.len() != self.d {
            return Err(Error::param("x", "point dimension mismatch"));
        }
        let ab = sched.alpha_bar(t);
        let sqrt_ab = ab.sqrt();
        let sqrt_noise = (1.0 - ab).sqrt();
        let resp = self.responsibilities(sqrt_ab, ab, x);

        let mut eps = vec![0.0; self.d];
        for k in 0..self.k {
            if resp[k] == 0.0 {
                continue;
            }
            let mu = self.mean_of(k);
            let var = self.variance_of(k);
            for j in 0..self.d {
                let vt = ab * var[j] + (1.0 - ab);
                eps[j] += resp[k] * sqrt_noise * (x[j] - sqrt_ab * mu[j]) / vt;
            }
        }
        Ok(eps)
    }

    /// Posterior component responsibilities at a noised point. Public for
    /// tests of the sum-to-one invariant.
    pub fn responsibilities_at(
        &self,
        sched: &NoiseSchedule,
        x: &[f64],
        t: usize,
    ) -> Result<Vec<f64>> {
        if t < 1 || t > sched.len() {
            return Err(Error::param("t", format!("must be in 1..={}", sched.len())));
        }
        let ab = sched.alpha_bar(t);
        Ok(self.responsibilities(ab.sqrt(), ab, x))
    }

    fn responsibilities(&self, sqrt_ab: f64, ab: f64, x: &[f64]) -> Vec<f64> {
        let mut logp = vec![f64::NEG_INFINITY; self.k];
        for k in 0..self.k {
            if self.weights[k] == 0.0 {
                continue;
            }
            let mu = self.mean_of(k);
            let var = self.variance_of(k);
            let mut lp = self.weights[k].ln();
            for j in 0..self.d {
                let vt = ab * var[j] + (1.0 - ab);
                let diff = x[j] - sqrt_ab * mu[j];
                lp -= 0.5 * (diff * diff / vt + vt.ln());
            }
            logp[k] = lp;
        }
        let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut resp: Vec<f64> = logp.iter().map(|lp| (lp - max).exp()).collect();
        let sum: f64 = resp.iter().sum();
        for r in &mut resp {
            *r /= sum;
        }
        resp
    }

    /// Mixture mean Σ w_k μ_k.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for k in 0..self.k {
            for (j, mu) in self.mean_of(k).iter().enumerate() {
                m[j] += self.weights[k] * mu;
            }
        }
        m
    }

    /// Mixture covariance Σ w_k (diag(var_k) + μ_k μ_kᵀ) − m mᵀ, row-major
    /// d×d.
    pub fn covariance(&self) -> Vec<f64> {
        let m = self.mean();
        let mut cov = vec![0.0; self.d * self.d];
        for k in 0..self.k {
            let mu = self.mean_of(k);
            let var = self.variance_of(k);
            for i in 0..self.d {
                for j in 0..self.d {
                    let mut c = mu[i] * mu[j];
                    if i == j {
                        c += var[i];
                    }
                    cov[i * self.d + j] += self.weights[k] * c;
                }
            }
        }
        for i in 0..self.d {
            for j in 0..self.d {
                cov[i * self.d + j] -= m[i] * m[j];
            }
        }
        cov
    }

    /// Returns a copy with per-dimension variances multiplied by scale².
    pub fn scaled_variances(&self, scale: f64) -> GaussianMixture {
        let mut gm = self.clone();
        for v in &mut gm.variances {
            *v *= scale * scale;
        }
        gm
    }

    /// Returns a copy with `offset` added to every component mean.
    pub fn shifted(&self, offset: &[f64]) -> Result<GaussianMixture> {
        if offset.len() != self.d {
            return Err(Error::param("offset", "dimension mismatch"));
        }
        let mut gm = self.clone();
        for k in 0..self.k {
            for j in 0..self.d {
                gm.means[k * self.d + j] += offset[j];
            }
        }
        Ok(gm)
    }
}

/// The standard two-component 2D test target: equal weights, means (±3, 0),
/// unit variances.
pub fn two_mode_target() -> GaussianMixture {
    GaussianMixture::new(
        vec![0.5, 0.5],
        vec![vec![-3.0, 0.0], vec![3.0, 0.0]],
        vec![vec![1.0, 1.0], vec![1.0, 1.0]],
    )
    .unwrap()
}
