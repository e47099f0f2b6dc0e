//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use super::config::{ExperimentConfig, EXPERIMENTS};
use super::pipelines::{cumulant_set, dpgmm_config, patterns, power_frames};
use super::{derive_seed_u64, run_experiment, validate_config, HarnessError, ResultBundle};
use crate::detect::StatisticModel;
use crate::error::CognitionError;
use crate::features::{cumulant_csv, energy_csv, parse_cumulant_csv, parse_energy_csv, CumulantVector, EnergyFeatureVector};
use crate::learn_mod::{classify_vector, component_csv, dpgmm_fit, label_model, update_posterior, MixtureModel, VectorClass};
use crate::learn_power::{
    boundary_grid, cluster_energy_with, estimate_power_states, state_labels, train_classifier, ClusterConfig,
    ClusteringResult, KernelChoice, PowerStateEstimate, SvmConfig,
};
use crate::predict_occ::HistoryDatabase;
use crate::signal_model::TransmitPattern;

#[derive(Debug, Parser)]
#[command(name = "cogniscope", version, about = "Spectrum cognition experiments")]
pub struct Cli {
    /// TOML experiment config; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true, env = "COGNISCOPE_SEED")]
    pub seed: Option<u64>,
    /// Output directory (default: `<output_dir>/<command>` from the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StatisticArg {
    ChiSquare,
    GaussianApprox,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a config file; unknown keys are reported as warnings.
    ValidateConfig,
    /// Run the pipeline named by the config's `experiment` key.
    Run,
    /// Detection metrics against sample size.
    DetectCurve {
        /// Fix the false-alarm rate instead of joint ML detection.
        #[arg(long)]
        fix_pfa: Option<f64>,
        #[arg(long, value_enum)]
        statistic: Option<StatisticArg>,
    },
    /// Power-state discovery from energy features.
    #[command(subcommand)]
    LearnPower(LearnPowerCommand),
    /// Modulation/power pattern discovery from cumulant vectors.
    #[command(subcommand)]
    LearnMod(LearnModCommand),
    /// Occupancy prediction.
    #[command(subcommand)]
    Predict(PredictCommand),
    /// Detection curves with a Monte-Carlo check
    #[command(name = "fig3-detect-curve")]
    Fig3,
    /// Power-state clustering and classifier over seeded trials
    #[command(name = "fig4-power-clustering")]
    Fig4,
    /// Modulation pattern mixture over seeded trials
    #[command(name = "fig5-modulation-dpgmm")]
    Fig5,
    /// Learned vs random channel selection over a vacancy sweep
    #[command(name = "fig6-occupancy-prediction")]
    Fig6,
}

#[derive(Debug, Subcommand)]
pub enum LearnPowerCommand {
    /// Cluster energy vectors and recover power states.
    Cluster {
        /// Energy CSV (`frame_id,slot_0,..`); synthesized from the config when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Cluster, then train the margin classifier on the cluster labels.
    Train {
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum LearnModCommand {
    /// Fit the DP mixture and label its components.
    Fit {
        /// Cumulant CSV (`frame_id,c21,c40,c42,..`); synthesized when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Classify cumulant vectors against a fitted model.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Absorb new vectors into a fitted model.
    Update {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum PredictCommand {
    /// Throughput sweep over the vacancy grid, learned ranking against random.
    Run,
    /// Fit chains to a sensing history and rank channels for a slot.
    Forecast {
        /// History CSV (`channel,slot,sensed_state`).
        #[arg(long)]
        history: PathBuf,
        /// Slot to forecast; one past the last record when absent.
        #[arg(long)]
        slot: Option<u64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::ValidateConfig => "validate-config",
            Self::Run => "run",
            Self::DetectCurve { .. } => "detect-curve",
            Self::LearnPower(LearnPowerCommand::Cluster { .. }) => "learn-power-cluster",
            Self::LearnPower(LearnPowerCommand::Train { .. }) => "learn-power-train",
            Self::LearnMod(LearnModCommand::Fit { .. }) => "learn-mod-fit",
            Self::LearnMod(LearnModCommand::Classify { .. }) => "learn-mod-classify",
            Self::LearnMod(LearnModCommand::Update { .. }) => "learn-mod-update",
            Self::Predict(PredictCommand::Run) => "predict-run",
            Self::Predict(PredictCommand::Forecast { .. }) => "predict-forecast",
            Self::Fig3 => EXPERIMENTS[0],
            Self::Fig4 => EXPERIMENTS[1],
            Self::Fig5 => EXPERIMENTS[2],
            Self::Fig6 => EXPERIMENTS[3],
        }
    }
}

fn read(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

fn load(cli: &Cli) -> Result<(ExperimentConfig, Vec<String>), HarnessError> {
    let (mut cfg, warnings) = match &cli.config {
        Some(path) => validate_config(path)?,
        None => (ExperimentConfig::default(), Vec::new()),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok((cfg, warnings))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(dir) => {
            if let Some(dir) = dir {
                println!("{}", dir.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command; returns the output directory when one was written.
pub fn execute(cli: &Cli) -> Result<Option<PathBuf>, HarnessError> {
    let (mut cfg, warnings) = load(cli)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let name = cli.command.name();
    let bundle = match &cli.command {
        Command::ValidateConfig => {
            if cli.config.is_none() {
                return Err(super::ConfigError::Io("validate-config needs --config".into()).into());
            }
            println!("config ok (hash {})", super::config_hash(&cfg));
            return Ok(None);
        }
        Command::Run => run_experiment(&cfg, &warnings)?,
        Command::Fig3 | Command::Fig4 | Command::Fig5 | Command::Fig6 => {
            cfg.experiment = name.to_string();
            run_experiment(&cfg, &warnings)?
        }
        Command::DetectCurve { fix_pfa, statistic } => {
            cfg.experiment = EXPERIMENTS[0].to_string();
            if fix_pfa.is_some() {
                cfg.detect.fix_pfa = *fix_pfa;
            }
            if let Some(s) = statistic {
                cfg.detect.statistic = match s {
                    StatisticArg::ChiSquare => StatisticModel::ChiSquare,
                    StatisticArg::GaussianApprox => StatisticModel::GaussianApprox,
                };
            }
            run_experiment(&cfg, &warnings)?
        }
        Command::Predict(PredictCommand::Run) => {
            cfg.experiment = EXPERIMENTS[3].to_string();
            run_experiment(&cfg, &warnings)?
        }
        Command::LearnPower(cmd) => {
            cfg.check()?;
            let mut b = ResultBundle::named(&cfg, name);
            warn_into(&mut b, &warnings);
            match cmd {
                LearnPowerCommand::Cluster { input } => learn_power(&cfg, &mut b, input.as_deref(), false)?,
                LearnPowerCommand::Train { input } => learn_power(&cfg, &mut b, input.as_deref(), true)?,
            }
            b
        }
        Command::LearnMod(cmd) => {
            cfg.check()?;
            let mut b = ResultBundle::named(&cfg, name);
            warn_into(&mut b, &warnings);
            match cmd {
                LearnModCommand::Fit { input } => learn_mod_fit(&cfg, &mut b, input.as_deref())?,
                LearnModCommand::Classify { model, input } => learn_mod_classify(&cfg, &mut b, model, input)?,
                LearnModCommand::Update { model, input } => learn_mod_update(&cfg, &mut b, model, input)?,
            }
            b
        }
        Command::Predict(PredictCommand::Forecast { history, slot }) => {
            cfg.check()?;
            let mut b = ResultBundle::named(&cfg, name);
            warn_into(&mut b, &warnings);
            forecast(&cfg, &mut b, history, *slot)?;
            b
        }
    };
    let dir = cli.out.clone().unwrap_or_else(|| cfg.output_dir.join(name));
    bundle.write(&dir)?;
    Ok(Some(dir))
}

fn warn_into(b: &mut ResultBundle, warnings: &[String]) {
    for w in warnings {
        b.note(format!("warning: {w}"));
    }
}

fn energy_input(cfg: &ExperimentConfig, b: &mut ResultBundle, input: Option<&Path>) -> Result<Vec<EnergyFeatureVector>, HarnessError> {
    Ok(match input {
        Some(path) => {
            b.note(format!("input {}", path.display()));
            parse_energy_csv(&read(path)?)?
        }
        None => {
            let v = power_frames(&cfg.learn_power, cfg.learn_power.train_frames, &mut b.rng("frames", 0))?;
            b.note(format!("synthesized {} energy vectors", v.len()));
            b.table("energy.csv", energy_csv(&v));
            v
        }
    })
}

fn clusters_csv(vectors: &[EnergyFeatureVector], clustering: &ClusteringResult, states: &PowerStateEstimate) -> String {
    let mut csv = String::from("frame_id,cluster,state\n");
    for (i, (c, s)) in clustering.assignments.iter().zip(state_labels(clustering, states)).enumerate().take(vectors.len()) {
        let _ = writeln!(csv, "{i},{c},{s}");
    }
    csv
}

fn learn_power(cfg: &ExperimentConfig, b: &mut ResultBundle, input: Option<&Path>, train: bool) -> Result<(), HarnessError> {
    let p = &cfg.learn_power;
    let vectors = energy_input(cfg, b, input)?;
    let clustering = cluster_energy_with(
        &vectors,
        &ClusterConfig { k_max: p.k_max, restarts: p.restarts, backend: p.backend, ..ClusterConfig::default() },
        &mut b.rng("cluster", 0),
    )?;
    let states = estimate_power_states(&clustering);
    b.note(format!("selected k = {} (score {:.3})", clustering.k, clustering.model_score));
    b.table("clusters.csv", clusters_csv(&vectors, &clustering, &states));
    let mut results = json!({ "clustering": clustering, "power_states": states });
    if train {
        let labeled: Vec<_> = vectors.iter().cloned().zip(state_labels(&clustering, &states)).collect();
        let svm = SvmConfig {
            kernel: match p.kernel {
                super::config::KernelKind::Linear => KernelChoice::Linear,
                super::config::KernelKind::Gaussian => KernelChoice::Gaussian(p.gamma),
            },
            regularization: p.regularization,
            tolerance: p.tolerance,
            max_iter: p.max_iter,
        };
        let clf = train_classifier(&labeled, &svm)?;
        b.artifact("classifier.txt", clf.to_text());
        if clf.dim == 2 {
            let span = |j: usize| {
                let (lo, hi) = vectors.iter().map(|v| v.energies()[j]).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), e| (l.min(e), h.max(e)));
                (lo - 0.1 * (hi - lo), hi + 0.1 * (hi - lo))
            };
            let mut csv = String::from("e0,e1,state\n");
            for (x, y, s) in boundary_grid(&clf, span(0), span(1), p.boundary_steps)? {
                let _ = writeln!(csv, "{x},{y},{s}");
            }
            b.table("boundary.csv", csv);
        }
        let training_accuracy = labeled.iter().filter(|(v, l)| clf.predict(v.energies()).ok() == Some(*l)).count() as f64 / labeled.len() as f64;
        results["training_accuracy"] = json!(training_accuracy);
        b.note(format!("classifier: {} pair machines, training accuracy {training_accuracy:.4}", clf.pairs.len()));
    }
    b.results = results;
    Ok(())
}

fn cumulant_input(path: &Path) -> Result<Vec<(CumulantVector, Option<TransmitPattern>)>, HarnessError> {
    Ok(parse_cumulant_csv(&read(path)?)?)
}

fn learn_mod_fit(cfg: &ExperimentConfig, b: &mut ResultBundle, input: Option<&Path>) -> Result<(), HarnessError> {
    let m = &cfg.learn_mod;
    let rows = match input {
        Some(path) => {
            b.note(format!("input {}", path.display()));
            cumulant_input(path)?
        }
        None => {
            let pats = patterns(m)?;
            let set = cumulant_set(m, &pats, m.train_per_pattern, &mut b.rng("vectors", 0))?;
            let rows: Vec<_> = set.into_iter().map(|(v, i)| (v, Some(pats[i]))).collect();
            b.table("cumulants.csv", cumulant_csv(&rows));
            rows
        }
    };
    let vectors: Vec<CumulantVector> = rows.iter().map(|(v, _)| *v).collect();
    b.uses("gibbs", 1);
    let dc = dpgmm_config(m, &vectors, derive_seed_u64(b.seed, &b.experiment, "gibbs", 0))?;
    let model = dpgmm_fit(&vectors, &dc)?;
    finish_model(b, &model, m.noise_gate)
}

fn finish_model(b: &mut ResultBundle, model: &MixtureModel, gate: f64) -> Result<(), HarnessError> {
    let report = label_model(model, gate)?;
    b.artifact("model.json", model.to_json()?);
    b.table("components.csv", component_csv(model, &report.matched.assignments));
    b.note(format!(
        "{} components, {} dominant, noise variance {:.4}",
        model.components().len(),
        model.dominant_count(),
        report.noise_variance
    ));
    b.results = json!({
        "components": model.components().len(),
        "dominant": model.dominant_count(),
        "noise_variance": report.noise_variance,
        "patterns": report.matched.assignments,
    });
    Ok(())
}

fn load_model(path: &Path) -> Result<MixtureModel, HarnessError> {
    Ok(MixtureModel::from_json(&read(path)?)?)
}

fn learn_mod_classify(cfg: &ExperimentConfig, b: &mut ResultBundle, model: &Path, input: &Path) -> Result<(), HarnessError> {
    let model = load_model(model)?;
    let report = label_model(&model, cfg.learn_mod.noise_gate)?;
    let rows = cumulant_input(input)?;
    let mut csv = String::from("frame_id,component,modulation,est_power\n");
    let (mut known, mut hits, mut labelled) = (0usize, 0usize, 0usize);
    for (i, (v, truth)) in rows.iter().enumerate() {
        match classify_vector(&model, &report.matched.assignments, v)? {
            VectorClass::Known(a) => {
                known += 1;
                let _ = writeln!(csv, "{i},{},{},{}", a.component_id, a.modulation, a.estimated_power);
                if let Some(t) = truth {
                    labelled += 1;
                    hits += usize::from(t.modulation() == a.modulation);
                }
            }
            VectorClass::Unknown => {
                let _ = writeln!(csv, "{i},,UNKNOWN,");
                labelled += usize::from(truth.is_some());
            }
        }
    }
    b.table("classifications.csv", csv);
    let accuracy = (labelled > 0).then(|| hits as f64 / labelled as f64);
    b.note(format!("classified {} vectors, {known} matched a known pattern", rows.len()));
    b.results = json!({ "vectors": rows.len(), "known": known, "accuracy": accuracy });
    Ok(())
}

fn learn_mod_update(cfg: &ExperimentConfig, b: &mut ResultBundle, model: &Path, input: &Path) -> Result<(), HarnessError> {
    let model = load_model(model)?;
    let vectors: Vec<CumulantVector> = cumulant_input(input)?.into_iter().map(|(v, _)| v).collect();
    let mut dc = match model.config() {
        Some(c) => c.clone(),
        None => dpgmm_config(&cfg.learn_mod, &vectors, 0)?,
    };
    b.uses("gibbs", 1);
    dc.seed = derive_seed_u64(b.seed, &b.experiment, "gibbs", 0);
    let updated = update_posterior(&model, &vectors, &dc)?;
    b.note(format!("absorbed {} vectors into a {}-point model", vectors.len(), model.total_count()));
    finish_model(b, &updated, cfg.learn_mod.noise_gate)
}

fn forecast(cfg: &ExperimentConfig, b: &mut ResultBundle, history: &Path, slot: Option<u64>) -> Result<(), HarnessError> {
    let db = HistoryDatabase::from_csv(&read(history)?)?;
    let model = db.refit(cfg.predict.smoothing)?;
    let slot = match slot {
        Some(s) => s,
        None => db
            .channel_ids()
            .filter_map(|c| db.last(c).map(|(s, _)| s + 1))
            .max()
            .ok_or_else(|| CognitionError::InvalidArgument("history is empty".into()))?,
    };
    let f = db.forecast(&model, slot)?;
    let mut csv = String::from("channel,p_vacant,rank,p_occupy_given_vacant,p_vacate_given_occupied\n");
    for (rank, &c) in f.ranking.iter().enumerate() {
        let chain = model.chain(c)?;
        let _ = writeln!(
            csv,
            "{c},{},{rank},{},{}",
            f.probability(c).expect("ranked"),
            chain.p_occupy_given_vacant(),
            chain.p_vacate_given_occupied()
        );
    }
    b.table("forecast.csv", csv);
    b.note(format!("forecast slot {slot} over {} channels from {} records", f.ranking.len(), db.total_observations()));
    b.results = json!({ "slot": slot, "ranking": f.ranking });
    Ok(())
}
