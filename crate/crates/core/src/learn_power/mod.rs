//! Prior-deficient power-level cognition.
//!
//! Energy feature vectors are normalized by their global mean energy,
//! clustered (k-means with BIC model selection, or the DPGMM backend), the
//! lowest-energy cluster is taken as the noise floor, and the cluster labels
//! train a one-vs-one margin classifier that replaces hypothesis testing.

pub mod kmeans;
pub mod svm;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CognitionError, Result};
use crate::features::EnergyFeatureVector;
use crate::learn_mod::dpgmm::{self, DPGMMConfig};

pub use svm::{Kernel, KernelChoice, MarginClassifier, SvmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterBackend {
    #[default]
    KMeansBic,
    Dpgmm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k_max: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub backend: ClusterBackend,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { k_max: 4, restarts: 10, max_iter: 100, backend: ClusterBackend::KMeansBic }
    }
}

/// Hard partition of energy feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub assignments: Vec<usize>,
    /// Member means in original (unnormalized) energy units.
    pub centroids: Vec<Vec<f64>>,
    pub k: usize,
    /// Selection criterion of the chosen `k` (BIC, or negative log joint
    /// posterior for the DPGMM backend); lower is better.
    pub model_score: f64,
    /// Global mean energy the features were divided by.
    pub normalizer: f64,
    /// Score of every candidate `k` that was evaluated.
    pub score_by_k: Vec<(usize, f64)>,
    /// WSS trace of the selected k-means run (normalized units).
    pub wss_trace: Vec<f64>,
}

impl ClusteringResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

fn check_vectors(vectors: &[EnergyFeatureVector]) -> Result<usize> {
    let dim = vectors.first().map(|v| v.dim()).ok_or_else(|| CognitionError::invalid("no feature vectors"))?;
    if vectors.iter().any(|v| v.dim() != dim) {
        return Err(CognitionError::invalid("feature vectors differ in dimension"));
    }
    Ok(dim)
}

/// Global mean energy, the per-coordinate normalizer.
pub fn global_mean_energy(vectors: &[EnergyFeatureVector]) -> f64 {
    vectors.iter().map(|v| v.mean_energy()).sum::<f64>() / vectors.len() as f64
}

fn normalized(vectors: &[EnergyFeatureVector], normalizer: f64) -> Vec<Vec<f64>> {
    let scale = if normalizer > 0.0 { normalizer } else { 1.0 };
    vectors.iter().map(|v| v.energies().iter().map(|e| e / scale).collect()).collect()
}

pub fn cluster_energy<R: Rng + ?Sized>(
    vectors: &[EnergyFeatureVector],
    k_max: usize,
    rng: &mut R,
) -> Result<ClusteringResult> {
    cluster_energy_with(vectors, &ClusterConfig { k_max, ..ClusterConfig::default() }, rng)
}

pub fn cluster_energy_with<R: Rng + ?Sized>(
    vectors: &[EnergyFeatureVector],
    cfg: &ClusterConfig,
    rng: &mut R,
) -> Result<ClusteringResult> {
    if cfg.k_max == 0 {
        return Err(CognitionError::invalid("k_max must be >= 1"));
    }
    check_vectors(vectors)?;
    if vectors.len() < 10 * cfg.k_max {
        return Err(CognitionError::invalid(format!(
            "{} vectors are too few for up to {} clusters (need >= {})",
            vectors.len(),
            cfg.k_max,
            10 * cfg.k_max
        )));
    }
    let normalizer = global_mean_energy(vectors);
    let data = normalized(vectors, normalizer);
    let (assignments, k, model_score, score_by_k, wss_trace) = match cfg.backend {
        ClusterBackend::KMeansBic => select_kmeans(&data, cfg, rng),
        ClusterBackend::Dpgmm => {
            let dp_cfg = DPGMMConfig::from_data(&data)?;
            let model = dpgmm::dpgmm_fit_points(&data, &dp_cfg)?;
            let k = model.components().len();
            let score = -model.log_joint();
            (model.assignments().to_vec(), k, score, vec![(k, score)], Vec::new())
        }
    };
    let centroids = member_means(vectors, &assignments, k);
    Ok(ClusteringResult { assignments, centroids, k, model_score, normalizer, score_by_k, wss_trace })
}

type Selection = (Vec<usize>, usize, f64, Vec<(usize, f64)>, Vec<f64>);

fn select_kmeans<R: Rng + ?Sized>(data: &[Vec<f64>], cfg: &ClusterConfig, rng: &mut R) -> Selection {
    let mut best: Option<(kmeans::KMeansFit, f64)> = None;
    let mut scores = Vec::new();
    for k in 1..=cfg.k_max {
        let fit = kmeans::kmeans_restarts(data, k, cfg.restarts, cfg.max_iter, rng);
        match kmeans::spherical_bic(data, &fit) {
            Some(score) => {
                scores.push((k, score));
                if best.as_ref().is_none_or(|(_, s)| score < *s) {
                    best = Some((fit, score));
                }
            }
            None => {
                // zero residual: every point sits on its centroid, nothing to gain beyond this k
                scores.push((k, f64::NEG_INFINITY));
                best = Some((fit, f64::NEG_INFINITY));
                break;
            }
        }
    }
    let (fit, score) = best.expect("k_max >= 1");
    let k = fit.centroids.len();
    (fit.assignments, k, score, scores, fit.wss_trace)
}

fn member_means(vectors: &[EnergyFeatureVector], assignments: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = vectors[0].dim();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (v, &a) in vectors.iter().zip(assignments) {
        counts[a] += 1;
        for (s, e) in sums[a].iter_mut().zip(v.energies()) {
            *s += e;
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| s.into_iter().map(|x| if c > 0 { x / c as f64 } else { 0.0 }).collect())
        .collect()
}

/// Noise floor and per-state powers recovered from a clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerStateEstimate {
    pub noise_energy: f64,
    /// Ascending; `state_powers[0] == 0` is the idle state.
    pub state_powers: Vec<f64>,
    /// `state_of_cluster[c]` is the state index of cluster `c`.
    pub state_of_cluster: Vec<usize>,
}

pub fn estimate_power_states(result: &ClusteringResult) -> PowerStateEstimate {
    let means: Vec<f64> = result
        .centroids
        .iter()
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)));
    let noise_energy = means[order[0]];
    let mut state_of_cluster = vec![0; means.len()];
    let mut state_powers = Vec::with_capacity(means.len());
    for (state, &c) in order.iter().enumerate() {
        state_of_cluster[c] = state;
        state_powers.push((means[c] - noise_energy).max(0.0));
    }
    PowerStateEstimate { noise_energy, state_powers, state_of_cluster }
}

/// State index of every clustered vector.
pub fn state_labels(result: &ClusteringResult, states: &PowerStateEstimate) -> Vec<usize> {
    result.assignments.iter().map(|&a| states.state_of_cluster[a]).collect()
}

/// Trains the margin classifier on state-labelled energy vectors.
pub fn train_classifier(labeled: &[(EnergyFeatureVector, usize)], config: &SvmConfig) -> Result<MarginClassifier> {
    let vectors: Vec<EnergyFeatureVector> = labeled.iter().map(|(v, _)| v.clone()).collect();
    check_vectors(&vectors)?;
    let normalizer = global_mean_energy(&vectors);
    let normalizer = if normalizer > 0.0 { normalizer } else { 1.0 };
    let data = normalized(&vectors, normalizer);
    let labels: Vec<usize> = labeled.iter().map(|(_, l)| *l).collect();
    svm::train_one_vs_one(&data, &labels, normalizer, config)
}

pub fn classify(clf: &MarginClassifier, vector: &EnergyFeatureVector) -> Result<usize> {
    clf.predict(vector.energies())
}

/// Decision of `clf` on a `steps x steps` grid over a 2-slot feature plane,
/// rows `(e0, e1, state)` in original energy units.
pub fn boundary_grid(
    clf: &MarginClassifier,
    e0: (f64, f64),
    e1: (f64, f64),
    steps: usize,
) -> Result<Vec<(f64, f64, usize)>> {
    if clf.dim != 2 {
        return Err(CognitionError::invalid("boundary grid needs 2-slot features"));
    }
    if steps < 2 {
        return Err(CognitionError::invalid("boundary grid needs >= 2 steps"));
    }
    let at = |range: (f64, f64), i: usize| range.0 + (range.1 - range.0) * i as f64 / (steps - 1) as f64;
    let mut rows = Vec::with_capacity(steps * steps);
    for i in 0..steps {
        for j in 0..steps {
            let x = [at(e0, i), at(e1, j)];
            rows.push((x[0], x[1], clf.predict(&x)?));
        }
    }
    Ok(rows)
}
