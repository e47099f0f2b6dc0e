//! Reproducible experiment runner: configuration, seed derivation, result
//! bundles and the figure pipelines.

pub mod cli;
pub mod config;
pub mod pipelines;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{parse_config, validate_config, ConfigError, ExperimentConfig, EXPERIMENTS};

use crate::error::CognitionError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] CognitionError),
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), message: err.to_string() }
    }

    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            _ => 1,
        }
    }
}

/// 32-byte digest of `(seed, experiment, module, trial)`: the seed of every
/// independent random stream in a run.
pub fn derive_seed(seed: u64, experiment: &str, module: &str, trial: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"cogniscope-seed-v1");
    h.update(seed.to_le_bytes());
    for part in [experiment.as_bytes(), module.as_bytes()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    h.update(trial.to_le_bytes());
    h.finalize().into()
}

pub fn trial_rng(seed: u64, experiment: &str, module: &str, trial: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(seed, experiment, module, trial))
}

/// First 8 bytes of the derived seed, for components that take a `u64`.
pub fn derive_seed_u64(seed: u64, experiment: &str, module: &str, trial: u64) -> u64 {
    let d = derive_seed(seed, experiment, module, trial);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Resolved config with run-location fields cleared, so the hash identifies
/// what was computed rather than where it was written.
pub fn canonical_config(cfg: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig { output_dir: ExperimentConfig::default().output_dir, ..cfg.clone() }
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(canonical_config(cfg).to_toml().as_bytes()))
}

/// Everything one experiment run produces. Nothing in it depends on wall
/// time or thread scheduling, so equal configs give byte-identical bundles.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultBundle {
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
    config_toml: String,
    emit: Vec<String>,
    /// File name to CSV text.
    pub tables: BTreeMap<String, String>,
    /// Non-tabular outputs (models, classifiers), always written.
    pub artifacts: BTreeMap<String, String>,
    /// Experiment-specific results, nested under `results` in summary.json.
    pub results: Value,
    /// Random streams used, as `module -> trial count`.
    pub streams: BTreeMap<String, u64>,
    pub log: Vec<String>,
}

impl ResultBundle {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self::named(cfg, &cfg.experiment)
    }

    /// Bundle for a run labelled `name` (a CLI verb rather than a figure
    /// pipeline); `name` also keys the seed derivation.
    pub fn named(cfg: &ExperimentConfig, name: &str) -> Self {
        let hash = config_hash(cfg);
        Self {
            experiment: name.to_string(),
            seed: cfg.seed,
            config_toml: canonical_config(cfg).to_toml(),
            emit: cfg.emit.clone(),
            log: vec![format!("experiment {name} seed {} config_hash {hash}", cfg.seed)],
            config_hash: hash,
            tables: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            results: Value::Null,
            streams: BTreeMap::new(),
        }
    }

    pub fn table(&mut self, name: &str, csv: String) {
        self.tables.insert(name.to_string(), csv);
    }

    pub fn artifact(&mut self, name: &str, text: String) {
        self.artifacts.insert(name.to_string(), text);
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.log.push(line.into());
    }

    pub fn rng(&mut self, module: &str, trial: u64) -> ChaCha8Rng {
        self.uses(module, trial + 1);
        trial_rng(self.seed, &self.experiment, module, trial)
    }

    /// Records that `module` streams `0..trials` were drawn.
    pub fn uses(&mut self, module: &str, trials: u64) {
        let e = self.streams.entry(module.to_string()).or_insert(0);
        *e = (*e).max(trials);
    }

    pub fn summary(&self) -> Value {
        let files: BTreeMap<&str, String> = self
            .tables
            .iter()
            .chain(&self.artifacts)
            .map(|(k, v)| (k.as_str(), hex::encode(Sha256::digest(v.as_bytes()))))
            .collect();
        json!({
            "experiment": self.experiment,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "seed_derivation": "ChaCha8 keyed by sha256(seed, experiment, module, trial)",
            "streams": self.streams,
            "files": files,
            "results": self.results,
        })
    }

    /// Writes CSVs (if emitted), artifacts, `summary.json` (if emitted), the
    /// resolved `config.toml` and `run.log` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let put = |name: &str, text: &str| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
        };
        if self.emit.iter().any(|e| e == "csv") {
            for (name, csv) in &self.tables {
                put(name, csv)?;
            }
        }
        for (name, text) in &self.artifacts {
            put(name, text)?;
        }
        if self.emit.iter().any(|e| e == "json") {
            let mut text = serde_json::to_string_pretty(&self.summary()).expect("summary serializes");
            text.push('\n');
            put("summary.json", &text)?;
        }
        put("config.toml", &self.config_toml)?;
        let mut log = self.log.join("\n");
        log.push('\n');
        put("run.log", &log)
    }
}

/// Runs the pipeline named by `cfg.experiment`. Unknown-key warnings from
/// config loading are passed in so they land in the bundle log.
pub fn run_experiment(cfg: &ExperimentConfig, warnings: &[String]) -> Result<ResultBundle, HarnessError> {
    cfg.check()?;
    let mut bundle = ResultBundle::new(cfg);
    for w in warnings {
        bundle.note(format!("warning: {w}"));
    }
    match cfg.experiment.as_str() {
        "fig3-detect-curve" => pipelines::detect_curve(cfg, &mut bundle)?,
        "fig4-power-clustering" => pipelines::power_clustering(cfg, &mut bundle)?,
        "fig5-modulation-dpgmm" => pipelines::modulation_dpgmm(cfg, &mut bundle)?,
        "fig6-occupancy-prediction" => pipelines::occupancy_prediction(cfg, &mut bundle)?,
        other => unreachable!("check() rejects experiment `{other}`"),
    }
    Ok(bundle)
}
