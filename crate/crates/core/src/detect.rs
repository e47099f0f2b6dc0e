//! Prior-sufficient power-level cognition: multi-hypothesis detection on the
//! averaged energy statistic, with closed-form and Monte-Carlo performance.
//!
//! Under hypothesis `i` the averaged energy `T` of `n` samples has mean
//! `mu_i = noise + P_i`. Decisions maximise the Gaussian-approximation
//! likelihood `N(mu_i, mu_i^2 / n)`. Pairwise log-likelihood differences are
//! quadratics in `T`, so the decision regions are finite unions of intervals
//! whose end points are the positive quadratic roots.
//!
//! Performance is evaluated by integrating a [`StatisticModel`] over those
//! regions: either the same Gaussian approximation or the exact scaled
//! chi-square law `T ~ (mu_i / n) * Gamma(n, 1)` that holds for a circular
//! Gaussian signal in circular Gaussian noise.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_lr;

use crate::error::{CognitionError, Result};

/// Noise variance and candidate power levels (level 0 is idle).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    noise_variance: f64,
    power_levels: Vec<f64>,
    priors: Option<Vec<f64>>,
}

impl HypothesisSet {
    pub fn new(noise_variance: f64, power_levels: Vec<f64>, priors: Option<Vec<f64>>) -> Result<Self> {
        Self::build(noise_variance, power_levels, priors, true)
    }

    /// Like [`HypothesisSet::new`] but tolerates repeated levels.
    ///
    /// Repeated levels are indistinguishable; the lower index always wins.
    pub fn with_coincident_levels(
        noise_variance: f64,
        power_levels: Vec<f64>,
        priors: Option<Vec<f64>>,
    ) -> Result<Self> {
        Self::build(noise_variance, power_levels, priors, false)
    }

    fn build(noise_variance: f64, power_levels: Vec<f64>, priors: Option<Vec<f64>>, strict: bool) -> Result<Self> {
        if !(noise_variance > 0.0 && noise_variance.is_finite()) {
            return Err(CognitionError::invalid(format!("noise variance must be > 0, got {noise_variance}")));
        }
        if power_levels.is_empty() {
            return Err(CognitionError::invalid("hypothesis set is empty"));
        }
        if power_levels[0] != 0.0 {
            return Err(CognitionError::invalid("first power level must be exactly 0 (idle)"));
        }
        for w in power_levels.windows(2) {
            let ordered = if strict { w[1] > w[0] } else { w[1] >= w[0] };
            if !ordered || !w[1].is_finite() {
                return Err(CognitionError::invalid(format!("power levels must be increasing: {power_levels:?}")));
            }
        }
        if let Some(p) = &priors {
            if p.len() != power_levels.len() {
                return Err(CognitionError::invalid("priors length differs from power levels"));
            }
            if p.iter().any(|x| !(*x > 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(CognitionError::invalid("priors must be positive and sum to 1"));
            }
        }
        Ok(Self { noise_variance, power_levels, priors })
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn power_levels(&self) -> &[f64] {
        &self.power_levels
    }

    pub fn priors(&self) -> Option<&[f64]> {
        self.priors.as_deref()
    }

    pub fn len(&self) -> usize {
        self.power_levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power_levels.is_empty()
    }

    /// Expected averaged energy under hypothesis `i`.
    pub fn mean(&self, i: usize) -> f64 {
        self.noise_variance + self.power_levels[i]
    }

    fn log_prior(&self, i: usize) -> f64 {
        self.priors.as_ref().map_or(0.0, |p| p[i].ln())
    }

    /// Coefficients `(a, b, c)` of the Gaussian log-likelihood `a T^2 + b T + c`.
    fn quadratic(&self, i: usize, n: usize) -> (f64, f64, f64) {
        let mu = self.mean(i);
        let v = mu * mu / n as f64;
        (-0.5 / v, mu / v, self.log_prior(i) - 0.5 * v.ln() - 0.5 * mu * mu / v)
    }

    fn log_likelihood(&self, i: usize, energy: f64, n: usize) -> f64 {
        let (a, b, c) = self.quadratic(i, n);
        (a * energy + b) * energy + c
    }
}

/// Law used to integrate the energy statistic over decision regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StatisticModel {
    /// `T ~ N(mu, mu^2 / n)`: the approximation the decision rule is built on.
    GaussianApprox,
    /// `T ~ (mu / n) Gamma(n, 1)`: exact for Gaussian-like signal plus noise.
    #[default]
    ChiSquare,
}

impl StatisticModel {
    /// `P(T <= t)` under hypothesis mean `mu` with `n` samples.
    pub fn cdf(self, t: f64, mu: f64, n: usize) -> f64 {
        match self {
            StatisticModel::GaussianApprox => {
                let z = (t - mu) * (n as f64).sqrt() / mu;
                0.5 * erfc(-z / std::f64::consts::SQRT_2)
            }
            StatisticModel::ChiSquare => {
                if t <= 0.0 {
                    0.0
                } else {
                    gamma_lr(n as f64, n as f64 * t / mu)
                }
            }
        }
    }

    /// Upper `alpha` quantile of the idle statistic.
    fn upper_quantile(self, alpha: f64, mu: f64, n: usize) -> f64 {
        match self {
            StatisticModel::GaussianApprox => {
                let z = Normal::standard().inverse_cdf(1.0 - alpha);
                mu + z * mu / (n as f64).sqrt()
            }
            StatisticModel::ChiSquare => {
                // bisection on the regularized incomplete gamma function
                let (mut lo, mut hi) = (0.0, mu);
                while 1.0 - self.cdf(hi, mu, n) > alpha {
                    hi *= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if 1.0 - self.cdf(mid, mu, n) > alpha {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

/// How the idle/active call is made before level discrimination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DecisionRule {
    /// Joint maximum likelihood over all levels.
    MaxLikelihood,
    /// Declare idle below the threshold with false-alarm rate `alpha` under
    /// `model`, then pick the most likely active level above it.
    FixedFalseAlarm { alpha: f64, model: StatisticModel },
}

/// Interval `[lo, hi)` of averaged energy mapped to `level`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionRegion {
    pub lo: f64,
    pub hi: f64,
    pub level: usize,
}

fn check_inputs(hyp: &HypothesisSet, n: usize) -> Result<()> {
    if hyp.is_empty() {
        return Err(CognitionError::invalid("hypothesis set is empty"));
    }
    if n == 0 {
        return Err(CognitionError::invalid("n_samples must be >= 1"));
    }
    Ok(())
}

fn argmax_level(hyp: &HypothesisSet, energy: f64, n: usize, from: usize) -> usize {
    let mut best = from;
    let mut best_ll = hyp.log_likelihood(from, energy, n);
    for i in from + 1..hyp.len() {
        let ll = hyp.log_likelihood(i, energy, n);
        if ll > best_ll {
            best = i;
            best_ll = ll;
        }
    }
    best
}

fn idle_threshold(hyp: &HypothesisSet, n: usize, rule: DecisionRule) -> Option<f64> {
    match rule {
        DecisionRule::MaxLikelihood => None,
        DecisionRule::FixedFalseAlarm { alpha, model } => Some(model.upper_quantile(alpha, hyp.mean(0), n)),
    }
}

fn decide_with(hyp: &HypothesisSet, energy: f64, n: usize, threshold: Option<f64>) -> usize {
    match threshold {
        None => argmax_level(hyp, energy, n, 0),
        Some(_) if hyp.len() == 1 => 0,
        Some(t) if energy <= t => 0,
        Some(_) => argmax_level(hyp, energy, n, 1),
    }
}

/// Maximum-likelihood level index for an averaged energy over `n_samples`.
/// Ties go to the lower index.
pub fn ml_decide(mean_energy: f64, hyp: &HypothesisSet, n_samples: usize) -> Result<usize> {
    decide(mean_energy, hyp, n_samples, DecisionRule::MaxLikelihood)
}

pub fn decide(mean_energy: f64, hyp: &HypothesisSet, n_samples: usize, rule: DecisionRule) -> Result<usize> {
    check_inputs(hyp, n_samples)?;
    if !(mean_energy >= 0.0) {
        return Err(CognitionError::invalid(format!("mean energy must be >= 0, got {mean_energy}")));
    }
    if let DecisionRule::FixedFalseAlarm { alpha, .. } = rule {
        check_alpha(alpha)?;
    }
    Ok(decide_with(hyp, mean_energy, n_samples, idle_threshold(hyp, n_samples, rule)))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CognitionError::invalid(format!("false-alarm target must lie in (0,1), got {alpha}")));
    }
    Ok(())
}

/// Positive roots of `a x^2 + b x + c`.
fn positive_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    let roots = if a.abs() <= 1e-14 * scale {
        if b.abs() <= 1e-14 * scale {
            Vec::new()
        } else {
            vec![-c / b]
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            Vec::new()
        } else {
            // numerically stable pair
            let q = -0.5 * (b + b.signum() * disc.sqrt());
            let mut r = vec![q / a];
            if q != 0.0 {
                r.push(c / q);
            }
            r
        }
    };
    roots.into_iter().filter(|r| r.is_finite() && *r > 0.0).collect()
}

/// Partition of `[0, inf)` into maximal intervals with a constant decision.
pub fn decision_regions(hyp: &HypothesisSet, n_samples: usize, rule: DecisionRule) -> Result<Vec<DecisionRegion>> {
    check_inputs(hyp, n_samples)?;
    let threshold = match rule {
        DecisionRule::FixedFalseAlarm { alpha, .. } => {
            check_alpha(alpha)?;
            idle_threshold(hyp, n_samples, rule)
        }
        DecisionRule::MaxLikelihood => None,
    };
    let mut breaks: Vec<f64> = threshold.into_iter().filter(|t| *t > 0.0).collect();
    for i in 0..hyp.len() {
        for j in i + 1..hyp.len() {
            let (ai, bi, ci) = hyp.quadratic(i, n_samples);
            let (aj, bj, cj) = hyp.quadratic(j, n_samples);
            breaks.extend(positive_roots(aj - ai, bj - bi, cj - ci));
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut edges = Vec::with_capacity(breaks.len() + 2);
    edges.push(0.0);
    edges.extend(breaks);
    let mut regions: Vec<DecisionRegion> = Vec::new();
    for (k, &lo) in edges.iter().enumerate() {
        let hi = edges.get(k + 1).copied().unwrap_or(f64::INFINITY);
        let probe = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * lo + 1.0 };
        let level = decide_with(hyp, probe, n_samples, threshold);
        match regions.last_mut() {
            Some(last) if last.level == level => last.hi = hi,
            _ => regions.push(DecisionRegion { lo, hi, level }),
        }
    }
    Ok(regions)
}

/// `matrix[i][k] = P(decide k | true level i)` by integrating `model` over
/// the decision regions. The lowest region extends to `-inf` so rows sum to 1
/// under the Gaussian model as well.
pub fn confusion_matrix(
    hyp: &HypothesisSet,
    n_samples: usize,
    rule: DecisionRule,
    model: StatisticModel,
) -> Result<Vec<Vec<f64>>> {
    let regions = decision_regions(hyp, n_samples, rule)?;
    let m = hyp.len();
    let mut matrix = vec![vec![0.0; m]; m];
    for (i, row) in matrix.iter_mut().enumerate() {
        let mu = hyp.mean(i);
        for (k, r) in regions.iter().enumerate() {
            let upper = if r.hi.is_finite() { model.cdf(r.hi, mu, n_samples) } else { 1.0 };
            let lower = if k == 0 { 0.0 } else { model.cdf(r.lo, mu, n_samples) };
            row[r.level] += (upper - lower).max(0.0);
        }
    }
    Ok(matrix)
}

/// False-alarm, detection and discrimination probabilities.
///
/// `p_detection` and `p_discrimination` average uniformly over the active
/// levels and are `None` when the set holds only the idle level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub p_false_alarm: f64,
    pub p_detection: Option<f64>,
    pub p_discrimination: Option<f64>,
    pub sample_count: usize,
}

impl DetectionMetrics {
    /// Metrics from a row-stochastic confusion matrix.
    pub fn from_confusion(matrix: &[Vec<f64>], sample_count: usize) -> Self {
        let m = matrix.len();
        let p_false_alarm = 1.0 - matrix[0][0];
        let (p_detection, p_discrimination) = if m > 1 {
            let active = (m - 1) as f64;
            let pd = (1..m).map(|i| 1.0 - matrix[i][0]).sum::<f64>() / active;
            let pdisc = (1..m).map(|i| matrix[i][i]).sum::<f64>() / active;
            (Some(pd.clamp(0.0, 1.0)), Some(pdisc.clamp(0.0, 1.0)))
        } else {
            (None, None)
        };
        Self { p_false_alarm: p_false_alarm.clamp(0.0, 1.0), p_detection, p_discrimination, sample_count }
    }
}

/// Closed-form metrics of the maximum-likelihood rule.
pub fn theoretical_metrics(hyp: &HypothesisSet, n_samples: usize, model: StatisticModel) -> Result<DetectionMetrics> {
    metrics_for_rule(hyp, n_samples, DecisionRule::MaxLikelihood, model)
}

pub fn metrics_for_rule(
    hyp: &HypothesisSet,
    n_samples: usize,
    rule: DecisionRule,
    model: StatisticModel,
) -> Result<DetectionMetrics> {
    let matrix = confusion_matrix(hyp, n_samples, rule, model)?;
    Ok(DetectionMetrics::from_confusion(&matrix, n_samples))
}

/// Metrics over a sample-size grid plus shape diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricCurve {
    pub points: Vec<DetectionMetrics>,
    /// Pd never decreases along the grid (vacuously true when absent).
    pub pd_monotone: bool,
    pub pdisc_monotone: bool,
    /// Pdisc <= Pd at every grid point.
    pub pdisc_below_pd: bool,
}

const MONOTONE_SLACK: f64 = 1e-12;

pub fn metric_curve(
    hyp: &HypothesisSet,
    n_grid: &[usize],
    rule: DecisionRule,
    model: StatisticModel,
) -> Result<MetricCurve> {
    if n_grid.is_empty() {
        return Err(CognitionError::invalid("sample-size grid is empty"));
    }
    if n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CognitionError::invalid("sample-size grid must be strictly ascending"));
    }
    let points = n_grid
        .iter()
        .map(|&n| metrics_for_rule(hyp, n, rule, model))
        .collect::<Result<Vec<_>>>()?;
    let monotone = |get: fn(&DetectionMetrics) -> Option<f64>| {
        points.windows(2).all(|w| match (get(&w[0]), get(&w[1])) {
            (Some(a), Some(b)) => b + MONOTONE_SLACK >= a,
            _ => true,
        })
    };
    let pd_monotone = monotone(|m| m.p_detection);
    let pdisc_monotone = monotone(|m| m.p_discrimination);
    let pdisc_below_pd = points.iter().all(|m| match (m.p_discrimination, m.p_detection) {
        (Some(disc), Some(det)) => disc <= det + MONOTONE_SLACK,
        _ => true,
    });
    Ok(MetricCurve { points, pd_monotone, pdisc_monotone, pdisc_below_pd })
}

/// Averaged energy of `n` samples of a circular Gaussian process with power `mu`.
///
/// `sum |x_k|^2` over `n` such samples is `mu * Gamma(n, 1)`.
pub fn sample_gaussian_energy<R: Rng + ?Sized>(mu: f64, n: usize, rng: &mut R) -> f64 {
    let g = Gamma::new(n as f64, 1.0).expect("shape >= 1");
    mu * g.sample(rng) / n as f64
}

/// Monte-Carlo confusion matrix of `rule`, `trials` frames per level.
pub fn simulate_confusion<R: Rng + ?Sized>(
    hyp: &HypothesisSet,
    n_samples: usize,
    rule: DecisionRule,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    check_inputs(hyp, n_samples)?;
    if trials == 0 {
        return Err(CognitionError::invalid("trials must be >= 1"));
    }
    if let DecisionRule::FixedFalseAlarm { alpha, .. } = rule {
        check_alpha(alpha)?;
    }
    let threshold = idle_threshold(hyp, n_samples, rule);
    let m = hyp.len();
    let mut counts = vec![vec![0.0; m]; m];
    for (i, row) in counts.iter_mut().enumerate() {
        let mu = hyp.mean(i);
        for _ in 0..trials {
            let t = sample_gaussian_energy(mu, n_samples, rng);
            row[decide_with(hyp, t, n_samples, threshold)] += 1.0;
        }
        row.iter_mut().for_each(|c| *c /= trials as f64);
    }
    Ok(counts)
}

pub fn simulate_metrics<R: Rng + ?Sized>(
    hyp: &HypothesisSet,
    n_samples: usize,
    rule: DecisionRule,
    trials: usize,
    rng: &mut R,
) -> Result<DetectionMetrics> {
    let matrix = simulate_confusion(hyp, n_samples, rule, trials, rng)?;
    Ok(DetectionMetrics::from_confusion(&matrix, n_samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn three_level() -> HypothesisSet {
        HypothesisSet::new(1.0, vec![0.0, 0.5, 1.0], None).unwrap()
    }

    #[test]
    fn decides_at_hypothesis_means() {
        let hyp = three_level();
        for i in 0..3 {
            assert_eq!(ml_decide(hyp.mean(i), &hyp, 100).unwrap(), i);
        }
        let two = HypothesisSet::new(1.0, vec![0.0, 5.0], None).unwrap();
        assert_eq!(ml_decide(0.0, &two, 10).unwrap(), 0);
    }

    #[test]
    fn invalid_inputs() {
        assert!(HypothesisSet::new(1.0, vec![], None).is_err());
        assert!(HypothesisSet::new(1.0, vec![0.1, 1.0], None).is_err());
        assert!(HypothesisSet::new(1.0, vec![0.0, 1.0, 1.0], None).is_err());
        assert!(HypothesisSet::new(-1.0, vec![0.0], None).is_err());
        assert!(HypothesisSet::new(1.0, vec![0.0, 1.0], Some(vec![0.2, 0.7])).is_err());
        let hyp = three_level();
        assert!(ml_decide(-1.0, &hyp, 10).is_err());
        assert!(ml_decide(1.0, &hyp, 0).is_err());
    }

    #[test]
    fn regions_partition_half_line() {
        let hyp = three_level();
        for n in [1, 10, 100, 10_000] {
            let regions = decision_regions(&hyp, n, DecisionRule::MaxLikelihood).unwrap();
            assert_eq!(regions[0].lo, 0.0);
            assert!(regions.last().unwrap().hi.is_infinite());
            for w in regions.windows(2) {
                assert_eq!(w[0].hi, w[1].lo);
                assert_ne!(w[0].level, w[1].level);
            }
            for r in &regions {
                let probe = if r.hi.is_finite() { 0.5 * (r.lo + r.hi) } else { r.lo + 1.0 };
                assert_eq!(ml_decide(probe, &hyp, n).unwrap(), r.level);
            }
        }
    }

    #[test]
    fn binary_threshold_matches_closed_form_root() {
        // Two levels: the single boundary solves the quadratic
        // n (T/mu0 - 1)^2 - n (T/mu1 - 1)^2 = 2 ln(mu1/mu0) explicitly.
        let hyp = HypothesisSet::new(1.0, vec![0.0, 1.0], None).unwrap();
        for n in [10usize, 100, 1000] {
            let (m0, m1, nf) = (1.0f64, 2.0f64, n as f64);
            let a = nf * (1.0 / (m0 * m0) - 1.0 / (m1 * m1));
            let b = -2.0 * nf * (1.0 / m0 - 1.0 / m1);
            let c = -2.0 * (m1 / m0).ln();
            let t = (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
            let regions = decision_regions(&hyp, n, DecisionRule::MaxLikelihood).unwrap();
            assert_eq!(regions.len(), 2);
            assert!((regions[0].hi - t).abs() < 1e-9, "n={n}: {} vs {t}", regions[0].hi);
        }
    }

    #[test]
    fn gamma_cdf_matches_reference_values() {
        // reference: scipy.stats.gamma.cdf(1.2120430898980021, 100, scale=1/100)
        let p = StatisticModel::ChiSquare.cdf(1.2120430898980021, 1.0, 100);
        assert!((1.0 - p - 0.02171624147815543).abs() < 1e-9);
    }

    #[test]
    fn rows_are_stochastic() {
        let hyp = three_level();
        for model in [StatisticModel::GaussianApprox, StatisticModel::ChiSquare] {
            for n in [5, 50, 500] {
                for row in confusion_matrix(&hyp, n, DecisionRule::MaxLikelihood, model).unwrap() {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn large_n_limits() {
        let m = theoretical_metrics(&three_level(), 1_000_000, StatisticModel::GaussianApprox).unwrap();
        assert!(m.p_false_alarm < 1e-9);
        assert!(m.p_discrimination.unwrap() > 1.0 - 1e-9);
    }

    #[test]
    fn coincident_levels_cap_discrimination() {
        let hyp = HypothesisSet::with_coincident_levels(1.0, vec![0.0, 1.0, 1.0], None).unwrap();
        for n in [10, 1000, 100_000] {
            let m = theoretical_metrics(&hyp, n, StatisticModel::ChiSquare).unwrap();
            assert!(m.p_discrimination.unwrap() <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn idle_only_set_reports_pfa_only() {
        let hyp = HypothesisSet::new(1.0, vec![0.0], None).unwrap();
        let curve = metric_curve(&hyp, &[10, 100], DecisionRule::MaxLikelihood, StatisticModel::ChiSquare).unwrap();
        assert!(curve.points.iter().all(|m| m.p_detection.is_none() && m.p_discrimination.is_none()));
        assert!(curve.points.iter().all(|m| m.p_false_alarm == 0.0));
    }

    #[test]
    fn fixed_false_alarm_hits_target() {
        let hyp = three_level();
        for model in [StatisticModel::GaussianApprox, StatisticModel::ChiSquare] {
            let rule = DecisionRule::FixedFalseAlarm { alpha: 0.05, model };
            let m = metrics_for_rule(&hyp, 200, rule, model).unwrap();
            assert!((m.p_false_alarm - 0.05).abs() < 1e-9, "{model:?}: {}", m.p_false_alarm);
        }
        assert!(decide(1.0, &hyp, 10, DecisionRule::FixedFalseAlarm { alpha: 1.5, model: StatisticModel::ChiSquare }).is_err());
    }

    #[test]
    fn monte_carlo_matches_q_function_at_500() {
        let hyp = three_level();
        let theory = confusion_matrix(&hyp, 500, DecisionRule::MaxLikelihood, StatisticModel::GaussianApprox).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mc = simulate_confusion(&hyp, 500, DecisionRule::MaxLikelihood, 100_000, &mut rng).unwrap();
        for i in 0..3 {
            for k in 0..3 {
                assert!((theory[i][k] - mc[i][k]).abs() < 0.01, "[{i}][{k}] {} vs {}", theory[i][k], mc[i][k]);
            }
        }
    }

    #[test]
    fn gamma_energy_matches_frame_energy() {
        // Mean and variance of the shortcut against explicit complex Gaussian frames.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mu, n, trials) = (1.5, 20, 20_000);
        let direct: Vec<f64> = (0..trials)
            .map(|_| {
                (0..n).map(|_| crate::signal_model::complex_gaussian(&mut rng, mu).norm_sqr()).sum::<f64>() / n as f64
            })
            .collect();
        let shortcut: Vec<f64> = (0..trials).map(|_| sample_gaussian_energy(mu, n, &mut rng)).collect();
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64)
        };
        let (m1, v1) = stats(&direct);
        let (m2, v2) = stats(&shortcut);
        let var = mu * mu / n as f64;
        assert!((m1 - mu).abs() < 0.01 && (m2 - mu).abs() < 0.01);
        assert!((v1 - var).abs() < 0.05 * var && (v2 - var).abs() < 0.05 * var);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn decisions_are_scale_invariant(
                noise in 0.1f64..10.0,
                gaps in proptest::collection::vec(0.05f64..5.0, 1..4),
                energy in 0.0f64..20.0,
                scale in 0.01f64..100.0,
                n in 1usize..5000,
            ) {
                let mut levels = vec![0.0];
                for g in &gaps {
                    let last = *levels.last().unwrap();
                    levels.push(last + g);
                }
                let hyp = HypothesisSet::new(noise, levels.clone(), None).unwrap();
                let scaled = HypothesisSet::new(noise * scale, levels.iter().map(|p| p * scale).collect(), None).unwrap();
                let a = ml_decide(energy, &hyp, n).unwrap();
                let b = ml_decide(energy * scale, &scaled, n).unwrap();
                // exact ties can resolve differently after rounding; skip boundary hits
                let boundary = decision_regions(&hyp, n, DecisionRule::MaxLikelihood).unwrap()
                    .iter().any(|r| (r.lo - energy).abs() < 1e-9 * (1.0 + energy));
                prop_assert!(boundary || a == b);
            }

            #[test]
            fn discrimination_below_detection(n in 1usize..20_000, p1 in 0.01f64..3.0, p2 in 0.01f64..3.0) {
                let hyp = HypothesisSet::new(1.0, vec![0.0, p1, p1 + p2], None).unwrap();
                for model in [StatisticModel::GaussianApprox, StatisticModel::ChiSquare] {
                    let m = theoretical_metrics(&hyp, n, model).unwrap();
                    prop_assert!(m.p_discrimination.unwrap() <= m.p_detection.unwrap() + 1e-12);
                }
            }
        }
    }
}
