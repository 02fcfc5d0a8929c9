//! Diffusion variance schedules.
//!
//! A `NoiseSchedule` holds the β_t table and the derived α_t = 1−β_t and
//! ᾱ_t = ∏_{s≤t} α_s tables for t = 1..T, with the convention ᾱ_0 = 1.
//! All diffusion arithmetic in the crate reads these tables; they are
//! computed once in double precision at construction and never mutated, so
//! a schedule can be shared freely across workers.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    /// beta[0] is unused padding so that beta[t] is valid for t = 1..=T.
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear schedule: β_t interpolates from `beta_start` (t=1) to
    /// `beta_end` (t=T). Requires T ≥ 1 and 0 < beta_start ≤ beta_end < 1.
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max < 1 {
            return Err(Error::param("T", "step count must be at least 1"));
        }
        if !(beta_start > 0.0) || !beta_start.is_finite() {
            return Err(Error::param("beta_start", "must be in (0, 1)"));
        }
        if !(beta_end < 1.0) || !beta_end.is_finite() {
            return Err(Error::param("beta_end", "must be in (0, 1)"));
        }
        if beta_start > beta_end {
            return Err(Error::param("beta_start", "must not exceed beta_end"));
        }
        let mut beta = Vec::with_capacity(t_max + 1);
        beta.push(0.0);
        for t in 1..=t_max {
            let frac = if t_max == 1 {
                0.0
            } else {
                (t - 1) as f64 / (t_max - 1) as f64
            };
            beta.push(beta_start + frac * (beta_end - beta_start));
        }
        let mut alpha = vec![1.0];
        let mut alpha_bar = vec![1.0];
        for t in 1..=t_max {
            let a = 1.0 - beta[t];
            alpha.push(a);
            alpha_bar.push(alpha_bar[t - 1] * a);
        }
        Ok(NoiseSchedule {
            beta,
            alpha,
            alpha_bar,
        })
    }

    /// Number of steps T.
    pub fn len(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// β_t for t = 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        debug_assert!((1..=self.len()).contains(&t));
        self.beta[t]
    }

    /// α_t for t = 1..=T (α_0 = 1 by convention).
    pub fn alpha(&self, t: usize) -> f64 {
        debug_assert!(t <= self.len());
        self.alpha[t]
    }

    /// ᾱ_t for t = 0..=T with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        debug_assert!(t <= self.len());
        self.alpha_bar[t]
    }

    /// Ancestral-sampling noise scale:
    /// σ_t² = (1−ᾱ_{t−1})/(1−ᾱ_t) · (1−α_t). With ᾱ_0 = 1 this gives
    /// σ_1 = 0.
    pub fn ddpm_sigma(&self, t: usize) -> Result<f64> {
        if t < 1 || t > self.len() {
            return Err(Error::param("t", format!("must be in 1..={}", self.len())));
        }
        let var = (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t]) * (1.0 - self.alpha[t]);
        Ok(var.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 1e-4, 0.02).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.alpha_bar(1), 0.9999);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn two_step_products() {
        let s = NoiseSchedule::linear(2, 0.1, 0.3).unwrap();
        assert_relative_eq!(s.alpha_bar(1), 0.9, max_relative = 1e-15);
        assert_relative_eq!(s.alpha_bar(2), 0.63, max_relative = 1e-15);
    }

    #[test]
    fn default_schedule_terminal_alpha_bar() {
        // Independent 50-digit product: 4.0358297653756833e-5.
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        assert_relative_eq!(s.alpha_bar(1000), 4.0358297653756833e-5, max_relative = 1e-12);
    }

    #[test]
    fn sigma_is_zero_at_t1() {
        let s = NoiseSchedule::linear(10, 1e-3, 0.1).unwrap();
        assert_eq!(s.ddpm_sigma(1).unwrap(), 0.0);
    }

    #[test]
    fn sigma_matches_formula() {
        // abar_{t-1}=0.9, abar_t=0.8 (alpha=8/9): sigma^2 = 1/18.
        // Independent high-precision evaluation: sigma = 0.23570226039551584.
        let sigma2: f64 = (1.0 - 0.9) / (1.0 - 0.8) * (1.0 - 0.8 / 0.9);
        assert_relative_eq!(sigma2, 0.055555555555555556, max_relative = 1e-14);
        assert_relative_eq!(sigma2.sqrt(), 0.23570226039551584, max_relative = 1e-14);
    }

    #[test]
    fn sigma_rejects_out_of_range_t() {
        let s = NoiseSchedule::linear(5, 1e-3, 0.1).unwrap();
        assert!(s.ddpm_sigma(0).is_err());
        assert!(s.ddpm_sigma(6).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.02, 1e-4).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn alpha_bar_strictly_decreasing_and_reconstructs(
            t_max in 1usize..2000,
            b0 in 1e-6f64..0.01,
            spread in 0.0f64..0.05,
        ) {
            let s = NoiseSchedule::linear(t_max, b0, b0 + spread).unwrap();
            let mut product = 1.0f64;
            for t in 1..=t_max {
                prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                prop_assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) <= 1.0);
                product *= 1.0 - s.beta(t);
                let rel = (s.alpha_bar(t) - product).abs() / product;
                prop_assert!(rel <= 1e-12, "reconstruction drift {rel} at t={t}");
            }
        }

        #[test]
        fn sigma_squared_bounded_by_beta(
            t_max in 2usize..500,
            b0 in 1e-6f64..0.01,
            spread in 0.0f64..0.05,
        ) {
            let s = NoiseSchedule::linear(t_max, b0, b0 + spread).unwrap();
            for t in 1..=t_max {
                let sig2 = s.ddpm_sigma(t).unwrap().powi(2);
                prop_assert!(sig2 >= 0.0);
                prop_assert!(sig2 <= 1.0 - s.alpha(t) + 1e-15);
            }
        }
    }
}
