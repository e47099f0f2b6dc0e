//! Per-channel occupancy learning, vacancy forecasting and sensing-order
//! policies.
//!
//! Each channel is modelled as a two-state Markov chain whose transition
//! probabilities are smoothed maximum-likelihood estimates from the history
//! database. The database only holds what was sensed, so transitions are
//! counted between consecutive sensed slots of the same channel and forecasts
//! for a channel last sensed `g` slots ago use the `g`-step transition law.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{ml_decide, sample_gaussian_energy, HypothesisSet};
use crate::error::{CognitionError, Result};
use crate::signal_model::{simulate_occupancy, ChannelOccupancyTrace, ChannelState, TwoStateMarkov};

pub const DEFAULT_SMOOTHING: f64 = 1.0;

fn idx(s: ChannelState) -> usize {
    match s {
        ChannelState::Vacant => 0,
        ChannelState::Occupied => 1,
    }
}

/// Transition counts `counts[from][to]`, index 0 = VACANT.
pub type TransitionCounts = [[u64; 2]; 2];

/// Smoothed estimate `(c_ab + s) / (c_a. + 2 s)`; 1/2 when both are zero.
fn smoothed(hit: u64, total: u64, smoothing: f64) -> f64 {
    let denom = total as f64 + 2.0 * smoothing;
    if denom > 0.0 {
        (hit as f64 + smoothing) / denom
    } else {
        0.5
    }
}

fn chain_from_counts(c: &TransitionCounts, smoothing: f64) -> TwoStateMarkov {
    let p_occ = smoothed(c[0][1], c[0][0] + c[0][1], smoothing);
    let p_vac = smoothed(c[1][0], c[1][0] + c[1][1], smoothing);
    TwoStateMarkov::new(p_occ, p_vac).expect("smoothed estimates are probabilities")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFit {
    pub channel_id: usize,
    pub counts: TransitionCounts,
    pub chain: TwoStateMarkov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedChannelModel {
    channels: BTreeMap<usize, ChannelFit>,
    smoothing: f64,
}

impl FittedChannelModel {
    pub fn from_counts(counts: impl IntoIterator<Item = (usize, TransitionCounts)>, smoothing: f64) -> Result<Self> {
        if !(smoothing >= 0.0 && smoothing.is_finite()) {
            return Err(CognitionError::invalid(format!("smoothing must be >= 0, got {smoothing}")));
        }
        let channels = counts
            .into_iter()
            .map(|(id, c)| (id, ChannelFit { channel_id: id, counts: c, chain: chain_from_counts(&c, smoothing) }))
            .collect();
        Ok(Self { channels, smoothing })
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn channel(&self, id: usize) -> Option<&ChannelFit> {
        self.channels.get(&id)
    }

    pub fn chain(&self, id: usize) -> Result<&TwoStateMarkov> {
        self.channels
            .get(&id)
            .map(|f| &f.chain)
            .ok_or_else(|| CognitionError::invalid(format!("unknown channel {id}")))
    }

    pub fn channels(&self) -> impl Iterator<Item = &ChannelFit> {
        self.channels.values()
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

/// Fits every trace independently from its consecutive-slot transitions.
pub fn fit_history(traces: &[ChannelOccupancyTrace], smoothing: f64) -> Result<FittedChannelModel> {
    let mut counts = Vec::with_capacity(traces.len());
    for t in traces {
        if t.len() < 2 {
            return Err(CognitionError::invalid(format!("channel {} has fewer than 2 slots", t.channel_id())));
        }
        let mut c = [[0u64; 2]; 2];
        for w in t.states().windows(2) {
            c[idx(w[0])][idx(w[1])] += 1;
        }
        counts.push((t.channel_id(), c));
    }
    FittedChannelModel::from_counts(counts, smoothing)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VacancyForecast {
    /// `(channel_id, P(vacant))` in input order.
    pub probabilities: Vec<(usize, f64)>,
    /// Channel ids by descending probability, ties by ascending id.
    pub ranking: Vec<usize>,
}

impl VacancyForecast {
    pub fn from_probabilities(probabilities: Vec<(usize, f64)>) -> Self {
        let mut ranking: Vec<(usize, f64)> = probabilities.clone();
        ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Self { ranking: ranking.into_iter().map(|(id, _)| id).collect(), probabilities }
    }

    pub fn probability(&self, id: usize) -> Option<f64> {
        self.probabilities.iter().find(|(c, _)| *c == id).map(|(_, p)| *p)
    }
}

pub fn predict_next(model: &FittedChannelModel, current: &[(usize, ChannelState)]) -> Result<VacancyForecast> {
    let probabilities = current
        .iter()
        .map(|&(id, s)| Ok((id, model.chain(id)?.next_vacancy(s))))
        .collect::<Result<Vec<_>>>()?;
    Ok(VacancyForecast::from_probabilities(probabilities))
}

/// Sensed observations per channel, kept in slot order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HistoryDatabase {
    records: BTreeMap<usize, Vec<(u64, ChannelState)>>,
    counts: BTreeMap<usize, TransitionCounts>,
}

impl HistoryDatabase {
    pub fn new(channels: impl IntoIterator<Item = usize>) -> Self {
        let ids: Vec<usize> = channels.into_iter().collect();
        Self {
            records: ids.iter().map(|&c| (c, Vec::new())).collect(),
            counts: ids.iter().map(|&c| (c, [[0; 2]; 2])).collect(),
        }
    }

    /// Appends an observation; slots must increase per channel.
    pub fn record(&mut self, channel: usize, slot: u64, state: ChannelState) -> Result<()> {
        let rec = self.records.entry(channel).or_default();
        let counts = self.counts.entry(channel).or_insert([[0; 2]; 2]);
        if let Some(&(last_slot, last_state)) = rec.last() {
            if slot <= last_slot {
                return Err(CognitionError::invalid(format!("channel {channel}: slot {slot} after {last_slot}")));
            }
            if slot == last_slot + 1 {
                counts[idx(last_state)][idx(state)] += 1;
            }
        }
        rec.push((slot, state));
        Ok(())
    }

    pub fn records(&self, channel: usize) -> &[(u64, ChannelState)] {
        self.records.get(&channel).map_or(&[], |r| r.as_slice())
    }

    pub fn last(&self, channel: usize) -> Option<(u64, ChannelState)> {
        self.records(channel).last().copied()
    }

    pub fn total_observations(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn channel_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.records.keys().copied()
    }

    /// Model from the incrementally maintained counts.
    pub fn model(&self, smoothing: f64) -> Result<FittedChannelModel> {
        FittedChannelModel::from_counts(self.counts.iter().map(|(&c, &n)| (c, n)), smoothing)
    }

    /// Model recomputed from the stored records alone.
    pub fn refit(&self, smoothing: f64) -> Result<FittedChannelModel> {
        let counts = self.records.iter().map(|(&c, rec)| {
            let mut n = [[0u64; 2]; 2];
            for w in rec.windows(2) {
                if w[1].0 == w[0].0 + 1 {
                    n[idx(w[0].1)][idx(w[1].1)] += 1;
                }
            }
            (c, n)
        });
        FittedChannelModel::from_counts(counts, smoothing)
    }

    /// Forecast for `slot` from each channel's last observation; channels
    /// never observed get their fitted chain's stationary vacancy.
    pub fn forecast(&self, model: &FittedChannelModel, slot: u64) -> Result<VacancyForecast> {
        let probabilities = self
            .channel_ids()
            .map(|c| {
                let chain = model.chain(c)?;
                let p = match self.last(c) {
                    Some((s, state)) if s < slot => chain.vacancy_after(state, slot - s),
                    Some(_) => return Err(CognitionError::invalid("forecast slot precedes history")),
                    None => chain.stationary_vacancy().unwrap_or(0.5),
                };
                Ok((c, p))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(VacancyForecast::from_probabilities(probabilities))
    }

    /// `channel,slot,sensed_state` rows in channel then slot order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("channel,slot,sensed_state\n");
        for (c, rec) in &self.records {
            for (slot, s) in rec {
                let _ = writeln!(out, "{c},{slot},{}", s.as_str());
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("channel,slot,sensed_state") {
            return Err(CognitionError::invalid("history CSV must start with `channel,slot,sensed_state`"));
        }
        let mut db = Self::default();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(CognitionError::invalid(format!("history line {}: expected 3 fields", i + 2)));
            }
            let parse = |s: &str| s.trim().parse::<u64>().map_err(|e| CognitionError::invalid(format!("history line {}: {e}", i + 2)));
            db.record(parse(f[0])? as usize, parse(f[1])?, f[2].parse()?)?;
        }
        Ok(db)
    }
}

/// How a sensed channel's state is observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SensingModel {
    /// Truth flipped with a per-channel probability.
    Bernoulli { error: Vec<f64> },
    /// Energy detection of `samples` Gaussian samples, ML between idle and `power`.
    EnergyDetector { noise_variance: f64, power: f64, samples: usize },
}

impl SensingModel {
    pub fn uniform(channels: usize, error: f64) -> Self {
        Self::Bernoulli { error: vec![error; channels] }
    }

    fn validate(&self, channels: usize) -> Result<()> {
        match self {
            Self::Bernoulli { error } => {
                if error.len() != channels || error.iter().any(|e| !(0.0..=1.0).contains(e)) {
                    return Err(CognitionError::invalid("need one sensing error probability in [0, 1] per channel"));
                }
            }
            Self::EnergyDetector { noise_variance, power, samples } => {
                HypothesisSet::new(*noise_variance, vec![0.0, *power], None)?;
                if *samples == 0 {
                    return Err(CognitionError::invalid("detector samples must be >= 1"));
                }
            }
        }
        Ok(())
    }

    /// Sensed state of every (slot, channel), drawn once so that every policy
    /// sees the same outcome when it senses the same channel.
    fn draw<R: Rng + ?Sized>(&self, truth: &[ChannelOccupancyTrace], rng: &mut R) -> Result<Vec<Vec<ChannelState>>> {
        let horizon = truth[0].len();
        let mut sensed = vec![Vec::with_capacity(truth.len()); horizon];
        match self {
            Self::Bernoulli { error } => {
                for (t, row) in sensed.iter_mut().enumerate() {
                    for (c, tr) in truth.iter().enumerate() {
                        let s = tr.states()[t];
                        row.push(if rng.random::<f64>() < error[c] { s.flipped() } else { s });
                    }
                }
            }
            Self::EnergyDetector { noise_variance, power, samples } => {
                let hyp = HypothesisSet::new(*noise_variance, vec![0.0, *power], None)?;
                for (t, row) in sensed.iter_mut().enumerate() {
                    for tr in truth {
                        let mu = noise_variance + if tr.states()[t].is_vacant() { 0.0 } else { *power };
                        let level = ml_decide(sample_gaussian_energy(mu, *samples, rng), &hyp, *samples)?;
                        row.push(if level == 0 { ChannelState::Vacant } else { ChannelState::Occupied });
                    }
                }
            }
        }
        Ok(sensed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub budget: usize,
    /// Slots of full-band sensed history recorded before the policy starts.
    pub warmup: usize,
    pub horizon: usize,
    pub capacity: f64,
    pub smoothing: f64,
    pub sensing: SensingModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub mean_throughput: f64,
    pub mean_prediction_error: f64,
    pub slots: usize,
    pub budget: usize,
    pub baseline_mean_throughput: f64,
    /// Per-slot throughput standard deviations (learned, baseline).
    pub throughput_sd: f64,
    pub baseline_throughput_sd: f64,
}

/// Closed-loop outcome including the final history state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRun {
    pub report: ThroughputReport,
    pub database: HistoryDatabase,
    pub model: FittedChannelModel,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, v.sqrt())
}

/// Simulates the learned ranking policy and a random-selection baseline on
/// the same occupancy and sensing realization.
///
/// Each slot the learned policy senses its top-`budget` forecast channels and
/// transmits on those sensed vacant; a transmission earns `capacity` only if
/// the channel is truly vacant. Sensed outcomes enter the history database
/// and the model is refreshed before the next slot. The first
/// `config.warmup` slots only build history (every channel sensed) and are
/// not scored. A prediction error is a
/// sensed channel whose forecast (vacant iff >= 0.5) disagrees with truth.
pub fn run_policy<R: Rng + ?Sized>(models: &[TwoStateMarkov], config: &PolicyConfig, rng: &mut R) -> Result<PolicyRun> {
    let channels = models.len();
    if config.budget == 0 || config.budget > channels {
        return Err(CognitionError::invalid(format!("budget must lie in 1..={channels}, got {}", config.budget)));
    }
    if config.horizon == 0 {
        return Err(CognitionError::invalid("horizon must be >= 1"));
    }
    if !(config.capacity >= 0.0 && config.capacity.is_finite()) {
        return Err(CognitionError::invalid("capacity must be >= 0"));
    }
    config.sensing.validate(channels)?;
    let total = config.warmup + config.horizon;
    let truth = simulate_occupancy(models, total, rng)?.traces;
    let sensed = config.sensing.draw(&truth, rng)?;

    let mut db = HistoryDatabase::new(0..channels);
    for (t, row) in sensed.iter().enumerate().take(config.warmup) {
        for (c, &s) in row.iter().enumerate() {
            db.record(c, t as u64, s)?;
        }
    }
    let mut model = db.model(config.smoothing)?;
    let mut learned = Vec::with_capacity(config.horizon);
    let mut baseline = Vec::with_capacity(config.horizon);
    let (mut errors, mut predictions) = (0usize, 0usize);
    for t in config.warmup..total {
        let slot = t as u64;
        let forecast = db.forecast(&model, slot)?;
        let mut earned = 0.0;
        for &c in &forecast.ranking[..config.budget] {
            let actual = truth[c].states()[t];
            let observed = sensed[t][c];
            let predicted_vacant = forecast.probability(c).expect("ranked channel") >= 0.5;
            predictions += 1;
            if predicted_vacant != actual.is_vacant() {
                errors += 1;
            }
            if observed.is_vacant() && actual.is_vacant() {
                earned += config.capacity;
            }
            db.record(c, slot, observed)?;
        }
        learned.push(earned);
        model = db.model(config.smoothing)?;

        let mut earned = 0.0;
        for c in sample(rng, channels, config.budget) {
            if sensed[t][c].is_vacant() && truth[c].states()[t].is_vacant() {
                earned += config.capacity;
            }
        }
        baseline.push(earned);
    }
    let (mean, sd) = mean_sd(&learned);
    let (base_mean, base_sd) = mean_sd(&baseline);
    Ok(PolicyRun {
        report: ThroughputReport {
            mean_throughput: mean,
            mean_prediction_error: errors as f64 / predictions as f64,
            slots: config.horizon,
            budget: config.budget,
            baseline_mean_throughput: base_mean,
            throughput_sd: sd,
            baseline_throughput_sd: base_sd,
        },
        database: db,
        model,
    })
}

/// Expected per-slot throughput when each of `budget` sensed channels is
/// vacant with probability `vacancy` and sensing misreports with probability
/// `error`: only truly vacant channels sensed vacant earn. Ignores any gain
/// from ranking, so it is the iid reference against which simulation is
/// checked.
pub fn analytic_throughput(vacancy: f64, error: f64, budget: usize, capacity: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&vacancy) || !(0.0..=1.0).contains(&error) {
        return Err(CognitionError::invalid("vacancy and error must lie in [0, 1]"));
    }
    Ok(budget as f64 * capacity * vacancy * (1.0 - error))
}

/// Per-channel chains with stationary vacancies spread linearly by `spread`
/// around `mean_vacancy` (clamped to [0.02, 0.98]) and a common switch rate.
pub fn heterogeneous_chains(channels: usize, mean_vacancy: f64, spread: f64, switch_rate: f64) -> Result<Vec<TwoStateMarkov>> {
    if channels == 0 {
        return Err(CognitionError::invalid("need at least one channel"));
    }
    (0..channels)
        .map(|c| {
            let offset = if channels > 1 { c as f64 / (channels - 1) as f64 - 0.5 } else { 0.0 };
            TwoStateMarkov::with_stationary_vacancy((mean_vacancy + spread * offset).clamp(0.02, 0.98), switch_rate)
        })
        .collect()
}
