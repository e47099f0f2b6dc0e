//! Experiment configuration: TOML schema, defaults and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detect::StatisticModel;
use crate::learn_power::ClusterBackend;
use crate::signal_model::ModulationType;

/// Figure pipelines `run_experiment` can dispatch to.
pub const EXPERIMENTS: [&str; 4] =
    ["fig3-detect-curve", "fig4-power-clustering", "fig5-modulation-dpgmm", "fig6-occupancy-prediction"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Pipeline id, one of [`EXPERIMENTS`].
    pub experiment: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// `"csv"` writes the tables, `"json"` writes summary.json; config.toml,
    /// run.log and model artifacts are always written.
    pub emit: Vec<String>,
    pub detect: DetectConfig,
    pub learn_power: LearnPowerConfig,
    pub learn_mod: LearnModConfig,
    pub predict: PredictConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: EXPERIMENTS[0].into(),
            seed: 0,
            output_dir: PathBuf::from("results"),
            emit: vec!["csv".into(), "json".into()],
            detect: DetectConfig::default(),
            learn_power: LearnPowerConfig::default(),
            learn_mod: LearnModConfig::default(),
            predict: PredictConfig::default(),
        }
    }
}

/// Detection-curve sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    pub noise_variance: f64,
    /// Ascending, starting at 0 (idle).
    pub power_levels: Vec<f64>,
    /// Hypothesis priors; uniform when absent.
    pub priors: Option<Vec<f64>>,
    pub sample_sizes: Vec<usize>,
    pub statistic: StatisticModel,
    /// Fix the false-alarm rate at this value instead of ML detection.
    pub fix_pfa: Option<f64>,
    pub mc_trials: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            noise_variance: 1.0,
            power_levels: vec![0.0, 0.5, 1.0],
            priors: None,
            sample_sizes: vec![10, 50, 100, 500, 1000, 5000],
            statistic: StatisticModel::ChiSquare,
            fix_pfa: None,
            mc_trials: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Linear,
    Gaussian,
}

/// Power-state clustering and classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnPowerConfig {
    pub noise_variance: f64,
    /// Active-state SNR `P / noise_variance` in dB.
    pub snr_db: f64,
    pub modulation: ModulationType,
    pub slots: usize,
    pub samples_per_slot: usize,
    /// Probability a frame carries the active level.
    pub active_fraction: f64,
    pub train_frames: usize,
    pub test_frames: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub backend: ClusterBackend,
    pub kernel: KernelKind,
    /// Gaussian width; `1/(dim * feature variance)` when absent.
    pub gamma: Option<f64>,
    pub regularization: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub trials: usize,
    pub boundary_steps: usize,
}

impl Default for LearnPowerConfig {
    fn default() -> Self {
        Self {
            noise_variance: 1.0,
            snr_db: -12.0,
            modulation: ModulationType::Qpsk,
            slots: 2,
            samples_per_slot: 2000,
            active_fraction: 0.5,
            train_frames: 400,
            test_frames: 1000,
            k_max: 4,
            restarts: 10,
            backend: ClusterBackend::KMeansBic,
            kernel: KernelKind::Gaussian,
            gamma: None,
            regularization: 1.0,
            tolerance: 1e-3,
            max_iter: 1_000_000,
            trials: 20,
            boundary_steps: 60,
        }
    }
}

/// Modulation-pattern discovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnModConfig {
    pub noise_variance: f64,
    /// Mean active power over the patterns relative to the noise, in dB.
    pub snr_db: f64,
    pub samples_per_vector: usize,
    pub modulations: Vec<ModulationType>,
    /// Squared-power ratios, one per modulation.
    pub squared_power_ratios: Vec<f64>,
    pub include_idle: bool,
    pub train_per_pattern: usize,
    pub test_per_pattern: usize,
    pub concentration: f64,
    pub prior_scale: f64,
    pub prior_precision_scale: f64,
    /// Inverse-Wishart dof; `dim + 2` when absent.
    pub prior_dof: Option<f64>,
    pub n_sweeps: usize,
    pub burn_in: usize,
    pub noise_gate: f64,
    pub trials: usize,
    /// Concentrations re-run on trial 0 for the sensitivity table.
    pub concentration_sensitivity: Vec<f64>,
}

impl Default for LearnModConfig {
    fn default() -> Self {
        Self {
            noise_variance: 1.0,
            snr_db: 10.0,
            samples_per_vector: 100,
            modulations: ModulationType::ACTIVE.to_vec(),
            squared_power_ratios: vec![2.5, 5.0, 5.3, 4.0],
            include_idle: true,
            train_per_pattern: 100,
            test_per_pattern: 100,
            concentration: 1.0,
            prior_scale: 0.01,
            prior_precision_scale: 10.0,
            prior_dof: None,
            n_sweeps: 500,
            burn_in: 200,
            noise_gate: crate::learn_mod::DEFAULT_NOISE_GATE,
            trials: 10,
            concentration_sensitivity: vec![0.1, 1.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensingKind {
    Bernoulli,
    EnergyDetector,
}

/// Occupancy prediction sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictConfig {
    pub channels: usize,
    pub budget: usize,
    pub capacity: f64,
    pub vacancy_grid: Vec<f64>,
    /// Linear spread of per-channel stationary vacancy around the grid value.
    pub spread: f64,
    /// `p_occupy + p_vacate` of every generator chain.
    pub switch_rate: f64,
    pub sensing: SensingKind,
    pub sensing_error: f64,
    pub detector_power: f64,
    pub detector_noise_variance: f64,
    pub detector_samples: usize,
    pub smoothing: f64,
    pub warmup: usize,
    pub horizon: usize,
    pub trials: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            channels: 25,
            budget: 5,
            capacity: 1.0,
            vacancy_grid: (1..=9).map(|i| i as f64 / 10.0).collect(),
            spread: 0.4,
            switch_rate: 0.5,
            sensing: SensingKind::Bernoulli,
            sensing_error: 0.05,
            detector_power: 1.0,
            detector_noise_variance: 1.0,
            detector_samples: 200,
            smoothing: crate::predict_occ::DEFAULT_SMOOTHING,
            warmup: 100,
            horizon: 2000,
            trials: 20,
        }
    }
}

/// Problem found while loading a config.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Io(String),
    Parse(String),
    /// A key holds a value outside its documented range.
    Range { key: String, message: String },
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Io(m) => write!(f, "cannot read config: {m}"),
            Self::Parse(m) => write!(f, "config schema error: {m}"),
            Self::Range { key, message } => write!(f, "config key `{key}`: {message}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn range(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Range { key: key.into(), message: message.into() }
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(range(key, format!("expected a finite number > 0, got {v}")))
    }
}

fn probability(key: &str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(range(key, format!("expected a probability in [0, 1], got {v}")))
    }
}

fn at_least(key: &str, v: usize, min: usize) -> Result<(), ConfigError> {
    if v >= min {
        Ok(())
    } else {
        Err(range(key, format!("expected an integer >= {min}, got {v}")))
    }
}

impl ExperimentConfig {
    /// Range checks beyond what the types enforce.
    pub fn check(&self) -> Result<(), ConfigError> {
        if !EXPERIMENTS.contains(&self.experiment.as_str()) {
            return Err(range("experiment", format!("expected one of {}, got `{}`", EXPERIMENTS.join(", "), self.experiment)));
        }
        for e in &self.emit {
            if e != "csv" && e != "json" {
                return Err(range("emit", format!("unknown emitter `{e}` (expected csv or json)")));
            }
        }
        let d = &self.detect;
        positive("detect.noise_variance", d.noise_variance)?;
        if d.power_levels.first() != Some(&0.0) || d.power_levels.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(range("detect.power_levels", "expected strictly increasing levels starting at 0"));
        }
        if let Some(p) = &d.priors {
            if p.len() != d.power_levels.len() || p.iter().any(|x| !(*x > 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(range("detect.priors", "expected one positive prior per level summing to 1"));
            }
        }
        if d.sample_sizes.is_empty() || d.sample_sizes.contains(&0) {
            return Err(range("detect.sample_sizes", "expected a non-empty list of integers >= 1"));
        }
        if let Some(a) = d.fix_pfa {
            if !(a > 0.0 && a < 1.0) {
                return Err(range("detect.fix_pfa", format!("expected a value in (0, 1), got {a}")));
            }
        }
        at_least("detect.mc_trials", d.mc_trials, 1)?;

        let p = &self.learn_power;
        positive("learn_power.noise_variance", p.noise_variance)?;
        if !p.snr_db.is_finite() {
            return Err(range("learn_power.snr_db", "expected a finite number"));
        }
        if p.modulation == ModulationType::NoiseOnly {
            return Err(range("learn_power.modulation", "expected an active modulation"));
        }
        at_least("learn_power.slots", p.slots, 1)?;
        at_least("learn_power.samples_per_slot", p.samples_per_slot, 1)?;
        probability("learn_power.active_fraction", p.active_fraction)?;
        at_least("learn_power.k_max", p.k_max, 1)?;
        at_least("learn_power.train_frames", p.train_frames, 10 * p.k_max)?;
        at_least("learn_power.test_frames", p.test_frames, 1)?;
        at_least("learn_power.restarts", p.restarts, 1)?;
        if let Some(g) = p.gamma {
            positive("learn_power.gamma", g)?;
        }
        positive("learn_power.regularization", p.regularization)?;
        positive("learn_power.tolerance", p.tolerance)?;
        at_least("learn_power.max_iter", p.max_iter, 1)?;
        at_least("learn_power.trials", p.trials, 1)?;
        at_least("learn_power.boundary_steps", p.boundary_steps, 2)?;

        let m = &self.learn_mod;
        positive("learn_mod.noise_variance", m.noise_variance)?;
        if !m.snr_db.is_finite() {
            return Err(range("learn_mod.snr_db", "expected a finite number"));
        }
        at_least("learn_mod.samples_per_vector", m.samples_per_vector, 4)?;
        if m.modulations.is_empty() || m.modulations.contains(&ModulationType::NoiseOnly) {
            return Err(range("learn_mod.modulations", "expected a non-empty list of active modulations"));
        }
        if m.squared_power_ratios.len() != m.modulations.len() || m.squared_power_ratios.iter().any(|r| !(*r > 0.0)) {
            return Err(range("learn_mod.squared_power_ratios", "expected one positive ratio per modulation"));
        }
        at_least("learn_mod.train_per_pattern", m.train_per_pattern, 2)?;
        at_least("learn_mod.test_per_pattern", m.test_per_pattern, 0)?;
        positive("learn_mod.concentration", m.concentration)?;
        positive("learn_mod.prior_scale", m.prior_scale)?;
        positive("learn_mod.prior_precision_scale", m.prior_precision_scale)?;
        if let Some(dof) = m.prior_dof {
            if !(dof > 2.0) {
                return Err(range("learn_mod.prior_dof", format!("expected a value > 2 (dim - 1), got {dof}")));
            }
        }
        at_least("learn_mod.n_sweeps", m.n_sweeps, 1)?;
        if m.burn_in >= m.n_sweeps {
            return Err(range("learn_mod.burn_in", "expected burn_in < n_sweeps"));
        }
        if !(m.noise_gate >= 0.0) {
            return Err(range("learn_mod.noise_gate", "expected a value >= 0"));
        }
        at_least("learn_mod.trials", m.trials, 1)?;
        for &a in &m.concentration_sensitivity {
            positive("learn_mod.concentration_sensitivity", a)?;
        }

        let q = &self.predict;
        at_least("predict.channels", q.channels, 1)?;
        if q.budget == 0 || q.budget > q.channels {
            return Err(range("predict.budget", format!("expected 1 ..= channels ({}), got {}", q.channels, q.budget)));
        }
        if !(q.capacity >= 0.0 && q.capacity.is_finite()) {
            return Err(range("predict.capacity", "expected a finite number >= 0"));
        }
        if q.vacancy_grid.is_empty() {
            return Err(range("predict.vacancy_grid", "expected a non-empty list"));
        }
        for &v in &q.vacancy_grid {
            probability("predict.vacancy_grid", v)?;
        }
        if !(q.spread >= 0.0 && q.spread <= 1.0) {
            return Err(range("predict.spread", "expected a value in [0, 1]"));
        }
        if !(q.switch_rate > 0.0 && q.switch_rate <= 2.0) {
            return Err(range("predict.switch_rate", "expected a value in (0, 2]"));
        }
        probability("predict.sensing_error", q.sensing_error)?;
        positive("predict.detector_power", q.detector_power)?;
        positive("predict.detector_noise_variance", q.detector_noise_variance)?;
        at_least("predict.detector_samples", q.detector_samples, 1)?;
        if !(q.smoothing >= 0.0 && q.smoothing.is_finite()) {
            return Err(range("predict.smoothing", "expected a finite number >= 0"));
        }
        at_least("predict.horizon", q.horizon, 1)?;
        at_least("predict.trials", q.trials, 1)?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses TOML text, applying defaults. Unknown keys do not fail the load;
/// they are returned as warnings (dotted key paths).
pub fn parse_config(text: &str) -> Result<(ExperimentConfig, Vec<String>), ConfigError> {
    let mut unknown = Vec::new();
    let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let config: ExperimentConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    config.check()?;
    let warnings = unknown.into_iter().map(|k| format!("unknown config key `{k}` ignored")).collect();
    Ok((config, warnings))
}

pub fn validate_config(path: &Path) -> Result<(ExperimentConfig, Vec<String>), ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let (cfg, warnings) = parse_config("experiment = \"fig5-modulation-dpgmm\"\n").unwrap();
        assert!(warnings.is_empty());
        assert_eq!(cfg.learn_mod, LearnModConfig::default());
        assert_eq!(cfg.seed, 0);
        let (empty, _) = parse_config("").unwrap();
        assert_eq!(empty, ExperimentConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.detect.fix_pfa = Some(0.05);
        cfg.learn_mod.prior_dof = Some(7.5);
        cfg.seed = u64::MAX;
        let (back, warnings) = parse_config(&cfg.to_toml()).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(back, cfg);
    }

    #[test]
    fn range_errors_name_the_key() {
        let err = parse_config("[learn_power]\nnoise_variance = -1.0\n").unwrap_err();
        assert!(matches!(&err, ConfigError::Range { key, .. } if key == "learn_power.noise_variance"), "{err}");
        let err = parse_config("[predict]\nbudget = 30\n").unwrap_err();
        assert!(err.to_string().contains("predict.budget"));
        let err = parse_config("experiment = \"fig9\"\n").unwrap_err();
        assert!(err.to_string().contains("experiment"));
    }

    #[test]
    fn type_errors_name_the_key() {
        let err = parse_config("[detect]\nnoise_variance = \"loud\"\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
        assert!(err.to_string().contains("noise_variance"), "{err}");
    }

    #[test]
    fn unknown_keys_warn() {
        let (cfg, warnings) = parse_config("colour = 3\n[predict]\nchanels = 4\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(warnings.len(), 2, "{warnings:?}");
        assert!(warnings.iter().any(|w| w.contains("predict.chanels")));
    }
}
