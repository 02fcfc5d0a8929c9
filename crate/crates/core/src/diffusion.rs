//! Forward diffusion, reverse sampling steps, full chains, and the
//! truncation strategy that starts the reverse chain from a noised coarse
//! estimate instead of pure noise.
//!
//! All steps are pure functions. Chains draw their randomness from
//! per-sample streams (see [`crate::rng`]): sample i of a run uses stream i
//! of the chain seed, so outputs are bitwise independent of batch order or
//! partitioning. In truncated sampling, the noise that embeds the coarse
//! point and the ancestral noise of the subsequent chain come from separate
//! child seeds.

use crate::batch::{ConditionBatch, SampleBatch};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::rng::{child_seed, sample_stream};
use crate::schedule::NoiseSchedule;
use rand::RngExt;
use rand_distr::StandardNormal;

/// Which reverse process a chain runs, from which step it starts, and how
/// many denoiser evaluations it spends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Ddpm,
    Ddim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    /// T for full runs, T_trunc for truncated runs.
    pub t_start: usize,
    /// DDIM sub-chain length; for DDPM this must equal `t_start`.
    pub n_steps: usize,
}

impl SamplerSpec {
    pub fn ddpm(t_start: usize) -> Self {
        SamplerSpec {
            kind: SamplerKind::Ddpm,
            t_start,
            n_steps: t_start,
        }
    }

    pub fn ddim(t_start: usize, n_steps: usize) -> Self {
        SamplerSpec {
            kind: SamplerKind::Ddim,
            t_start,
            n_steps,
        }
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.n_steps < 1 || self.n_steps > self.t_start {
            return Err(Error::param("n_steps", "must satisfy 1 <= n_steps <= T_start"));
        }
        if self.t_start > sched.len() {
            return Err(Error::param("t_start", "exceeds schedule length"));
        }
        if self.kind == SamplerKind::Ddpm && self.n_steps != self.t_start {
            return Err(Error::param("n_steps", "DDPM runs every step: n_steps = T_start"));
        }
        Ok(())
    }
}

/// x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·ε, elementwise. t=0 returns x_0 exactly.
pub fn forward_diffuse(
    x0: &SampleBatch,
    t: usize,
    eps: &SampleBatch,
    sched: &NoiseSchedule,
) -> Result<SampleBatch> {
    if !x0.same_shape(eps) {
        return Err(Error::param("eps", "shape mismatch with x0"));
    }
    if t > sched.len() {
        return Err(Error::param("t", format!("must be in 0..={}", sched.len())));
    }
    if t == 0 {
        return Ok(x0.clone());
    }
    let ab = sched.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = x0.clone();
    for i in 0..x0.len() {
        let e = eps.row(i);
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = sa * *v + sn * e[j];
        }
    }
    Ok(out)
}

fn ddpm_step_row(
    x: &[f64],
    t: usize,
    eps_hat: &[f64],
    z: Option<&[f64]>,
    sched: &NoiseSchedule,
    out: &mut [f64],
) {
    let a = sched.alpha(t);
    let ab = sched.alpha_bar(t);
    let coef = (1.0 - a) / (1.0 - ab).sqrt();
    let inv_sqrt_a = 1.0 / a.sqrt();
    let sigma = sched.ddpm_sigma(t).expect("t validated by caller");
    for j in 0..x.len() {
        let mean = inv_sqrt_a * (x[j] - coef * eps_hat[j]);
        out[j] = match z {
            Some(z) => mean + sigma * z[j],
            None => mean,
        };
    }
}

/// One ancestral step of Eq.-style DDPM sampling:
/// x_{t−1} = (x_t − (1−α_t)/√(1−ᾱ_t)·ε̂)/√α_t + σ_t·z.
/// The caller supplies z ~ N(0, I); it is ignored at t=1 where σ_1 = 0.
pub fn ddpm_step(
    x_t: &SampleBatch,
    t: usize,
    eps_hat: &SampleBatch,
    z: &SampleBatch,
    sched: &NoiseSchedule,
) -> Result<SampleBatch> {
    if t < 1 || t > sched.len() {
        return Err(Error::param("t", format!("must be in 1..={}", sched.len())));
    }
    if !x_t.same_shape(eps_hat) || !x_t.same_shape(z) {
        return Err(Error::param("eps_hat", "shape mismatch"));
    }
    let mut out = SampleBatch::zeros(x_t.len(), x_t.dim());
    for i in 0..x_t.len() {
        let zi = if t > 1 { Some(z.row(i)) } else { None };
        let x = x_t.row(i);
        let e = eps_hat.row(i);
        let mut buf = vec![0.0; x.len()];
        ddpm_step_row(x, t, e, zi, sched, &mut buf);
        out.row_mut(i).copy_from_slice(&buf);
    }
    Ok(out)
}

fn ddim_step_row(
    x: &[f64],
    t: usize,
    t_prev: usize,
    eps_hat: &[f64],
    sched: &NoiseSchedule,
    out: &mut [f64],
) {
    let ab_t = sched.alpha_bar(t);
    let ab_p = sched.alpha_bar(t_prev);
    let (sa_t, sn_t) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let (sa_p, sn_p) = (ab_p.sqrt(), (1.0 - ab_p).sqrt());
    for j in 0..x.len() {
        let x0_hat = (x[j] - sn_t * eps_hat[j]) / sa_t;
        out[j] = sa_p * x0_hat + sn_p * eps_hat[j];
    }
}

/// Deterministic (η = 0) DDIM update: predict x̂_0, then re-noise it to
/// step `t_prev` reusing the same ε̂. `t_prev = 0` returns x̂_0 directly.
pub fn ddim_step(
    x_t: &SampleBatch,
    t: usize,
    t_prev: usize,
    eps_hat: &SampleBatch,
    sched: &NoiseSchedule,
) -> Result<SampleBatch> {
    if t < 1 || t > sched.len() {
        return Err(Error::param("t", format!("must be in 1..={}", sched.len())));
    }
    if t_prev >= t {
        return Err(Error::param("t_prev", "must be strictly below t"));
    }
    if !x_t.same_shape(eps_hat) {
        return Err(Error::param("eps_hat", "shape mismatch"));
    }
    let mut out = SampleBatch::zeros(x_t.len(), x_t.dim());
    for i in 0..x_t.len() {
        let mut buf = vec![0.0; x_t.dim()];
        ddim_step_row(x_t.row(i), t, t_prev, eps_hat.row(i), sched, &mut buf);
        out.row_mut(i).copy_from_slice(&buf);
    }
    Ok(out)
}

/// Descending DDIM step subsequence: τ_i = round(T_start·(n+1−i)/n) for
/// i = 1..n, so τ_1 = T_start and the chain finishes by stepping from τ_n
/// to 0.
pub fn make_step_subsequence(t_start: usize, n_steps: usize) -> Result<Vec<usize>> {
    if n_steps < 1 || n_steps > t_start {
        return Err(Error::param("n_steps", "must satisfy 1 <= n_steps <= T_start"));
    }
    let taus: Vec<usize> = (1..=n_steps)
        .map(|i| (t_start as f64 * (n_steps + 1 - i) as f64 / n_steps as f64).round() as usize)
        .collect();
    Ok(taus)
}

/// Runs a reverse chain from `start` (interpreted as x_{T_start}) down to an
/// x_0 estimate. Deterministic given the seed; DDIM chains draw no noise at
/// all. Fails with the offending (t, index) if the denoiser emits a
/// non-finite value.
pub fn sample_chain<D: Denoiser + ?Sized>(
    denoiser: &D,
    cond: Option<&ConditionBatch>,
    spec: &SamplerSpec,
    start: &SampleBatch,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<SampleBatch> {
    spec.validate(sched)?;
    if let Some(c) = cond {
        if c.len() != start.len() {
            return Err(Error::param("cond", "one condition row per sample required"));
        }
    }
    let n = start.len();
    let d = start.dim();
    let mut out = start.clone();
    out.seed_tag = seed;

    match spec.kind {
        SamplerKind::Ddpm => {
            for i in 0..n {
                let mut rng = sample_stream(seed, i as u64);
                let ci = cond.map(|c| c.row(i));
                let mut x = out.row(i).to_vec();
                let mut buf = vec![0.0; d];
                for t in (1..=spec.t_start).rev() {
                    let eps = denoiser.predict_eps(&x, t, ci);
                    check_finite(&eps, t, i)?;
                    let z: Option<Vec<f64>> = if t > 1 {
                        Some((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                    } else {
                        None
                    };
                    ddpm_step_row(&x, t, &eps, z.as_deref(), sched, &mut buf);
                    x.copy_from_slice(&buf);
                }
                out.row_mut(i).copy_from_slice(&x);
            }
        }
        SamplerKind::Ddim => {
            let mut taus = make_step_subsequence(spec.t_start, spec.n_steps)?;
            taus.push(0);
            for i in 0..n {
                let ci = cond.map(|c| c.row(i));
                let mut x = out.row(i).to_vec();
                let mut buf = vec![0.0; d];
                for w in taus.windows(2) {
                    let (t, t_prev) = (w[0], w[1]);
                    let eps = denoiser.predict_eps(&x, t, ci);
                    check_finite(&eps, t, i)?;
                    ddim_step_row(&x, t, t_prev, &eps, sched, &mut buf);
                    x.copy_from_slice(&buf);
                }
                out.row_mut(i).copy_from_slice(&x);
            }
        }
    }
    Ok(out)
}

/// Truncation strategy: embed the coarse batch at step T_trunc via
/// x_{T_trunc} = √ᾱ_{T_trunc}·x̄ + √(1−ᾱ_{T_trunc})·ε, then run the reverse
/// chain from there. T_trunc = 0 returns the coarse batch unchanged
/// (bit-exact). The embedding noise uses child seed 0 and the chain child
/// seed 1, so a full-noise run with the same layout is directly comparable.
pub fn truncated_sample<D: Denoiser + ?Sized>(
    coarse: &SampleBatch,
    t_trunc: usize,
    spec: &SamplerSpec,
    denoiser: &D,
    cond: Option<&ConditionBatch>,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<SampleBatch> {
    if t_trunc > sched.len() {
        return Err(Error::param("t_trunc", format!("must be in 0..={}", sched.len())));
    }
    if t_trunc == 0 {
        return Ok(coarse.clone());
    }
    if spec.t_start != t_trunc {
        return Err(Error::param("t_start", "spec.t_start must equal t_trunc"));
    }
    let eps = SampleBatch::standard_normal(coarse.len(), coarse.dim(), child_seed(seed, 0));
    let start = forward_diffuse(coarse, t_trunc, &eps, sched)?;
    sample_chain(denoiser, cond, spec, &start, sched, child_seed(seed, 1))
}

fn check_finite(eps: &[f64], t: usize, index: usize) -> Result<()> {
    if eps.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { t, index });
    }
    Ok(())
}
