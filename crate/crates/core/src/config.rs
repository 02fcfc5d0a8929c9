//! Experiment configuration: a strict TOML schema with documented defaults.
//!
//! Unknown keys are rejected so sweep definitions cannot be silently
//! mistyped. The full schema (defaults in parentheses):
//!
//! ```toml
//! seed = 42                    # required, u64
//! n_samples = 5000             # (5000)
//! output = "experiment.csv"    # ("experiment.csv")
//! record_wall_ms = false       # (false) CSV wall_ms column: 0 unless set
//! sampler = "ddim"             # ("ddim") or "ddpm"
//!
//! [schedule]                   # (T=1000, beta 1e-4..0.02)
//! t = 1000
//! beta_start = 1e-4
//! beta_end = 0.02
//!
//! [target]                     # required
//! weights = [0.5, 0.5]
//! means = [[-3.0, 0.0], [3.0, 0.0]]
//! variances = [[1.0, 1.0], [1.0, 1.0]]
//!
//! [denoiser]                   # (analytic)
//! kind = "analytic"            # or "checkpoint"
//! # path = "model.ckpt"
//!
//! [coarse]                     # (exact)
//! kind = "exact"               # exact | biased | overdispersed | mean-collapse
//! # offset = [0.5, 0.5]        # biased only
//! # scale = 1.5                # overdispersed only
//!
//! [sweep]                      # (empty lists)
//! t_trunc = [0, 50, 100, 150]
//! n_steps = [1, 2, 5, 10]
//!
//! [train]                      # used by the train subcommand
//! steps = 20000
//! batch_size = 64
//! learning_rate = 0.02
//! hidden_width = 64
//! hidden_layers = 3
//! cond_width = 0               # 0 trains unconditionally
//! lock_base = false
//! # t_trunc = 100              # truncated training range
//! ```

use crate::coarse::CoarseKind;
use crate::error::{Error, Result};
use crate::mixture::GaussianMixture;
use crate::schedule::NoiseSchedule;
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_output")]
    pub output: String,
    #[serde(default)]
    pub record_wall_ms: bool,
    #[serde(default = "default_sampler")]
    pub sampler: String,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub target: TargetConfig,
    #[serde(default)]
    pub denoiser: DenoiserConfig,
    #[serde(default)]
    pub coarse: CoarseConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub train: Option<TrainSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_t")]
    pub t: usize,
    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_end")]
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            t: default_t(),
            beta_start: default_beta_start(),
            beta_end: default_beta_end(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    #[serde(default = "default_denoiser_kind")]
    pub kind: String,
    #[serde(default)]
    pub path: Option<String>,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            kind: default_denoiser_kind(),
            path: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoarseConfig {
    #[serde(default = "default_coarse_kind")]
    pub kind: String,
    #[serde(default)]
    pub offset: Option<Vec<f64>>,
    #[serde(default)]
    pub scale: Option<f64>,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        CoarseConfig {
            kind: default_coarse_kind(),
            offset: None,
            scale: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub t_trunc: Vec<usize>,
    #[serde(default)]
    pub n_steps: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_train_steps")]
    pub steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_hidden_width")]
    pub hidden_width: usize,
    #[serde(default = "default_hidden_layers")]
    pub hidden_layers: usize,
    #[serde(default)]
    pub cond_width: usize,
    #[serde(default)]
    pub lock_base: bool,
    #[serde(default)]
    pub t_trunc: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            steps: default_train_steps(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            hidden_width: default_hidden_width(),
            hidden_layers: default_hidden_layers(),
            cond_width: 0,
            lock_base: false,
            t_trunc: None,
        }
    }
}

fn default_n_samples() -> usize {
    5000
}
fn default_output() -> String {
    "experiment.csv".to_string()
}
fn default_sampler() -> String {
    "ddim".to_string()
}
fn default_t() -> usize {
    1000
}
fn default_beta_start() -> f64 {
    1e-4
}
fn default_beta_end() -> f64 {
    0.02
}
fn default_denoiser_kind() -> String {
    "analytic".to_string()
}
fn default_coarse_kind() -> String {
    "exact".to_string()
}
fn default_train_steps() -> usize {
    20000
}
fn default_batch_size() -> usize {
    64
}
fn default_learning_rate() -> f64 {
    0.02
}
fn default_hidden_width() -> usize {
    64
}
fn default_hidden_layers() -> usize {
    3
}

impl ExperimentConfig {
    /// Parses and validates a config file. Parse errors carry the TOML
    /// line/column; validation errors name the offending key.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < 1 {
            return Err(Error::Config("n_samples: must be at least 1".into()));
        }
        match self.sampler.as_str() {
            "ddim" | "ddpm" => {}
            other => {
                return Err(Error::Config(format!(
                    "sampler: `{other}` is not one of ddim, ddpm"
                )))
            }
        }
        match self.denoiser.kind.as_str() {
            "analytic" => {}
            "checkpoint" => {
                if self.denoiser.path.is_none() {
                    return Err(Error::Config("denoiser.path: required for checkpoint".into()));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "denoiser.kind: `{other}` is not one of analytic, checkpoint"
                )))
            }
        }
        match self.coarse.kind.as_str() {
            "exact" | "mean-collapse" => {}
            "biased" => {
                if self.coarse.offset.is_none() {
                    return Err(Error::Config("coarse.offset: required for biased".into()));
                }
            }
            "overdispersed" => match self.coarse.scale {
                None => return Err(Error::Config("coarse.scale: required for overdispersed".into())),
                Some(s) if s < 1.0 => {
                    return Err(Error::Config("coarse.scale: must be >= 1".into()))
                }
                _ => {}
            },
            other => {
                return Err(Error::Config(format!(
                    "coarse.kind: `{other}` is not one of exact, biased, overdispersed, mean-collapse"
                )))
            }
        }
        for &tt in &self.sweep.t_trunc {
            if tt > self.schedule.t {
                return Err(Error::Config(format!(
                    "sweep.t_trunc: {tt} exceeds schedule length {}",
                    self.schedule.t
                )));
            }
            for &ns in &self.sweep.n_steps {
                // T_trunc = 0 rows skip sampling entirely; any n_steps is fine.
                if tt > 0 && (ns < 1 || ns > tt) {
                    return Err(Error::Config(format!(
                        "sweep.n_steps: pair (t_trunc={tt}, n_steps={ns}) violates 1 <= n_steps <= t_trunc"
                    )));
                }
                if tt > 0 && self.sampler == "ddpm" && ns != tt {
                    return Err(Error::Config(format!(
                        "sweep.n_steps: ddpm requires n_steps = t_trunc, got ({tt}, {ns})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn build_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.schedule.t, self.schedule.beta_start, self.schedule.beta_end)
    }

    pub fn build_target(&self) -> Result<GaussianMixture> {
        GaussianMixture::new(
            self.target.weights.clone(),
            self.target.means.clone(),
            self.target.variances.clone(),
        )
    }

    pub fn build_coarse_kind(&self) -> Result<CoarseKind> {
        Ok(match self.coarse.kind.as_str() {
            "exact" => CoarseKind::Exact,
            "biased" => CoarseKind::Biased(self.coarse.offset.clone().unwrap_or_default()),
            "overdispersed" => CoarseKind::Overdispersed(self.coarse.scale.unwrap_or(1.0)),
            "mean-collapse" => CoarseKind::MeanCollapse,
            other => return Err(Error::Config(format!("coarse.kind: unknown `{other}`"))),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
seed = 7
[target]
weights = [1.0]
means = [[0.0, 0.0]]
variances = [[1.0, 1.0]]
"#,
        )
        .unwrap();
        assert_eq!(cfg.schedule.t, 1000);
        assert_eq!(cfg.schedule.beta_start, 1e-4);
        assert_eq!(cfg.schedule.beta_end, 0.02);
        assert_eq!(cfg.n_samples, 5000);
        assert_eq!(cfg.sampler, "ddim");
        assert!(!cfg.record_wall_ms);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml_str(
            r#"
seed = 7
n_sampels = 10
[target]
weights = [1.0]
means = [[0.0]]
variances = [[1.0]]
"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("n_sampels"), "{err}");
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = ExperimentConfig::from_toml_str("seed = [[[").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn paper_operating_point_is_accepted() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
seed = 1
[target]
weights = [0.5, 0.5]
means = [[-3.0, 0.0], [3.0, 0.0]]
variances = [[1.0, 1.0], [1.0, 1.0]]
[sweep]
t_trunc = [100]
n_steps = [2]
"#,
        )
        .unwrap();
        assert_eq!(cfg.sweep.t_trunc, vec![100]);
        assert_eq!(cfg.sweep.n_steps, vec![2]);
    }

    #[test]
    fn zero_truncation_rows_accept_any_step_count() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
seed = 1
[target]
weights = [1.0]
means = [[0.0]]
variances = [[1.0]]
[sweep]
t_trunc = [0]
n_steps = [5]
"#,
        );
        assert!(cfg.is_ok());
    }

    #[test]
    fn invalid_sweep_pairs_name_the_key() {
        let err = ExperimentConfig::from_toml_str(
            r#"
seed = 1
[target]
weights = [1.0]
means = [[0.0]]
variances = [[1.0]]
[sweep]
t_trunc = [10]
n_steps = [50]
"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("sweep.n_steps"), "{err}");
    }

    #[test]
    fn checkpoint_denoiser_requires_path() {
        let err = ExperimentConfig::from_toml_str(
            r#"
seed = 1
[target]
weights = [1.0]
means = [[0.0]]
variances = [[1.0]]
[denoiser]
kind = "checkpoint"
"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("denoiser.path"), "{err}");
    }
}
