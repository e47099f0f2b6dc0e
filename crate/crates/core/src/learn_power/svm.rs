//! Soft-margin SVM trained by SMO with second-order working-set selection,
//! combined one-vs-one for multi-class problems.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{CognitionError, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    Linear,
    Gaussian { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Gaussian { gamma } => (-gamma * super::kmeans::sq_dist(a, b)).exp(),
        }
    }
}

/// Requested kernel; `Gaussian(None)` picks `gamma = 1 / (dim * var)` from the
/// normalized training features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelChoice {
    Linear,
    Gaussian(Option<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub kernel: KernelChoice,
    /// Box constraint C.
    pub regularization: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { kernel: KernelChoice::Gaussian(None), regularization: 1.0, tolerance: 1e-3, max_iter: 1_000_000 }
    }
}

/// Two-class decision function `f(x) = sum_i coef_i K(sv_i, x) - rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` for each support vector.
    pub dual_coef: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    /// Maximal KKT violation at termination.
    pub gap: f64,
}

impl BinarySvm {
    pub fn decision_value(&self, kernel: &Kernel, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coef)
            .map(|(sv, c)| c * kernel.eval(sv, x))
            .sum::<f64>()
            - self.rho
    }

    /// Primal weight vector, available for the linear kernel only.
    pub fn weights(&self, kernel: &Kernel) -> Option<Vec<f64>> {
        if !matches!(kernel, Kernel::Linear) {
            return None;
        }
        let dim = self.support_vectors.first().map_or(0, |v| v.len());
        let mut w = vec![0.0; dim];
        for (sv, c) in self.support_vectors.iter().zip(&self.dual_coef) {
            for (wi, xi) in w.iter_mut().zip(sv) {
                *wi += c * xi;
            }
        }
        Some(w)
    }
}

/// Trains a binary SVM on `labels` in {+1, -1}.
pub fn train_binary(data: &[Vec<f64>], labels: &[f64], kernel: Kernel, cfg: &SvmConfig) -> Result<BinarySvm> {
    let n = data.len();
    if n < 2 || labels.len() != n {
        return Err(CognitionError::invalid("binary SVM needs >= 2 labelled points"));
    }
    if !(cfg.regularization > 0.0) || !(cfg.tolerance > 0.0) {
        return Err(CognitionError::invalid("regularization and tolerance must be > 0"));
    }
    let c = cfg.regularization;
    let y = labels;
    let diag: Vec<f64> = data.iter().map(|x| kernel.eval(x, x)).collect();
    let row = |i: usize| -> Vec<f64> { data.iter().map(|x| kernel.eval(&data[i], x)).collect() };

    let mut alpha = vec![0.0; n];
    // gradient of 0.5 a'Qa - e'a with Q_ij = y_i y_j K_ij
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let gap = loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best_obj = f64::INFINITY;
        let k_i = if i != usize::MAX { Some(row(i)) } else { None };
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if let Some(k_i) = &k_i {
                let b = gmax - v;
                if b > 0.0 {
                    let mut quad = diag[i] + diag[t] - 2.0 * k_i[t];
                    if quad <= 0.0 {
                        quad = TAU;
                    }
                    let obj = -b * b / quad;
                    if obj <= best_obj {
                        best_obj = obj;
                        j = t;
                    }
                }
            }
        }
        let gap = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || gap < cfg.tolerance {
            break gap.max(0.0);
        }
        if iterations >= cfg.max_iter {
            return Err(CognitionError::TrainingFailed { iterations, residual_gap: gap });
        }
        iterations += 1;

        let k_i = k_i.expect("selected i");
        let k_j = row(j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let mut quad = diag[i] + diag[j] - 2.0 * k_i[j];
        if quad <= 0.0 {
            quad = TAU;
        }
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k_i[t] * di + y[j] * k_j[t] * dj);
        }
    };

    let (mut ub, mut lb, mut sum, mut free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    let rho = if free > 0 { sum / free as f64 } else { 0.5 * (ub + lb) };

    let mut support_vectors = Vec::new();
    let mut dual_coef = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            support_vectors.push(data[t].clone());
            dual_coef.push(alpha[t] * y[t]);
        }
    }
    Ok(BinarySvm { support_vectors, dual_coef, rho, iterations, gap })
}

/// Binary machine separating `lower` (positive side) from `upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    pub lower: usize,
    pub upper: usize,
    pub machine: BinarySvm,
}

/// One-vs-one margin classifier over normalized energy features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginClassifier {
    pub kernel: Kernel,
    /// Features are divided by this before evaluation.
    pub normalizer: f64,
    pub dim: usize,
    pub classes: Vec<usize>,
    pub pairs: Vec<PairModel>,
}

impl MarginClassifier {
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v / self.normalizer).collect()
    }

    /// Decision value of every pair, positive favouring the lower class.
    pub fn pair_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(CognitionError::invalid(format!(
                "feature dimension {} does not match classifier dimension {}",
                x.len(),
                self.dim
            )));
        }
        let z = self.normalize(x);
        Ok(self.pairs.iter().map(|p| p.machine.decision_value(&self.kernel, &z)).collect())
    }

    /// One-vs-one vote; a zero decision value votes for the lower class and
    /// vote ties go to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let values = self.pair_values(x)?;
        let mut votes = vec![0usize; self.classes.len()];
        let pos = |c: usize| self.classes.iter().position(|&k| k == c).expect("known class");
        for (p, v) in self.pairs.iter().zip(values) {
            let winner = if v >= 0.0 { p.lower } else { p.upper };
            votes[pos(winner)] += 1;
        }
        let mut best = 0;
        for (k, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = k;
            }
        }
        Ok(self.classes[best])
    }

    /// Flat-text serialization:
    ///
    /// ```text
    /// cogniscope-margin-classifier 1
    /// kernel linear | kernel gaussian <gamma>
    /// normalizer <f64>
    /// dim <d>
    /// classes <c0> <c1> ...
    /// pair <lower> <upper> <rho> <n_sv> <iterations> <gap>
    /// sv <dual_coef> <x_0> ... <x_{d-1}>      (n_sv lines, normalized units)
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::from("cogniscope-margin-classifier 1\n");
        match self.kernel {
            Kernel::Linear => out.push_str("kernel linear\n"),
            Kernel::Gaussian { gamma } => {
                let _ = writeln!(out, "kernel gaussian {gamma:e}");
            }
        }
        let _ = writeln!(out, "normalizer {:e}", self.normalizer);
        let _ = writeln!(out, "dim {}", self.dim);
        let classes: Vec<String> = self.classes.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "classes {}", classes.join(" "));
        for p in &self.pairs {
            let m = &p.machine;
            let _ = writeln!(
                out,
                "pair {} {} {:e} {} {} {:e}",
                p.lower,
                p.upper,
                m.rho,
                m.support_vectors.len(),
                m.iterations,
                m.gap
            );
            for (sv, c) in m.support_vectors.iter().zip(&m.dual_coef) {
                let coords: Vec<String> = sv.iter().map(|v| format!("{v:e}")).collect();
                let _ = writeln!(out, "sv {c:e} {}", coords.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |what: &str| CognitionError::invalid(format!("classifier file: {what}"));
        let num = |s: Option<&str>, what: &str| -> Result<f64> {
            s.and_then(|v| v.parse().ok()).ok_or_else(|| bad(what))
        };
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some("cogniscope-margin-classifier 1") {
            return Err(bad("missing header"));
        }
        let mut field = |name: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| bad(&format!("missing `{name}`")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(name) {
                return Err(bad(&format!("expected `{name}`")));
            }
            Ok(parts.map(str::to_owned).collect())
        };
        let k = field("kernel")?;
        let kernel = match k.first().map(String::as_str) {
            Some("linear") => Kernel::Linear,
            Some("gaussian") => Kernel::Gaussian { gamma: num(k.get(1).map(String::as_str), "gamma")? },
            _ => return Err(bad("unknown kernel")),
        };
        let normalizer = num(field("normalizer")?.first().map(String::as_str), "normalizer")?;
        let dim = num(field("dim")?.first().map(String::as_str), "dim")? as usize;
        let classes = field("classes")?
            .iter()
            .map(|c| c.parse::<usize>().map_err(|_| bad("class index")))
            .collect::<Result<Vec<_>>>()?;
        let rest: Vec<&str> = lines.collect();
        let mut pairs = Vec::new();
        let mut idx = 0;
        while idx < rest.len() {
            let parts: Vec<&str> = rest[idx].split_whitespace().collect();
            if parts.first() != Some(&"pair") || parts.len() != 7 {
                return Err(bad("malformed pair line"));
            }
            let lower = num(Some(parts[1]), "pair lower")? as usize;
            let upper = num(Some(parts[2]), "pair upper")? as usize;
            let rho = num(Some(parts[3]), "rho")?;
            let n_sv = num(Some(parts[4]), "n_sv")? as usize;
            let iterations = num(Some(parts[5]), "iterations")? as usize;
            let gap = num(Some(parts[6]), "gap")?;
            let mut support_vectors = Vec::with_capacity(n_sv);
            let mut dual_coef = Vec::with_capacity(n_sv);
            for s in 0..n_sv {
                let line = rest.get(idx + 1 + s).ok_or_else(|| bad("truncated support vectors"))?;
                let vals: Vec<&str> = line.split_whitespace().collect();
                if vals.first() != Some(&"sv") || vals.len() != dim + 2 {
                    return Err(bad("malformed sv line"));
                }
                dual_coef.push(num(Some(vals[1]), "dual coefficient")?);
                support_vectors.push(vals[2..].iter().map(|v| num(Some(v), "sv coordinate")).collect::<Result<Vec<_>>>()?);
            }
            pairs.push(PairModel { lower, upper, machine: BinarySvm { support_vectors, dual_coef, rho, iterations, gap } });
            idx += 1 + n_sv;
        }
        Ok(Self { kernel, normalizer, dim, classes, pairs })
    }
}

/// Trains a one-vs-one classifier on already-normalized features.
pub fn train_one_vs_one(
    data: &[Vec<f64>],
    labels: &[usize],
    normalizer: f64,
    cfg: &SvmConfig,
) -> Result<MarginClassifier> {
    let dim = data.first().map_or(0, |x| x.len());
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(CognitionError::invalid("classifier training needs >= 2 classes"));
    }
    for &c in &classes {
        if labels.iter().filter(|&&l| l == c).count() < 2 {
            return Err(CognitionError::invalid(format!("class {c} has fewer than 2 examples")));
        }
    }
    let kernel = match cfg.kernel {
        KernelChoice::Linear => Kernel::Linear,
        KernelChoice::Gaussian(Some(gamma)) if gamma > 0.0 => Kernel::Gaussian { gamma },
        KernelChoice::Gaussian(Some(_)) => return Err(CognitionError::invalid("gaussian gamma must be > 0")),
        KernelChoice::Gaussian(None) => {
            let all: Vec<f64> = data.iter().flatten().copied().collect();
            let mean = all.iter().sum::<f64>() / all.len() as f64;
            let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / all.len() as f64;
            let gamma = if var > 0.0 { 1.0 / (dim as f64 * var) } else { 1.0 };
            Kernel::Gaussian { gamma }
        }
    };
    let mut pairs = Vec::new();
    for (a_idx, &lower) in classes.iter().enumerate() {
        for &upper in &classes[a_idx + 1..] {
            let (xs, ys): (Vec<Vec<f64>>, Vec<f64>) = data
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == lower || l == upper)
                .map(|(x, &l)| (x.clone(), if l == lower { 1.0 } else { -1.0 }))
                .unzip();
            pairs.push(PairModel { lower, upper, machine: train_binary(&xs, &ys, kernel, cfg)? });
        }
    }
    Ok(MarginClassifier { kernel, normalizer, dim, classes, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_pair_gets_positive_margin() {
        let data = vec![vec![0.0, 0.0], vec![0.2, 0.1], vec![2.0, 2.0], vec![2.1, 1.8]];
        let labels = [1.0, 1.0, -1.0, -1.0];
        let cfg = SvmConfig { kernel: KernelChoice::Linear, regularization: 100.0, ..SvmConfig::default() };
        let svm = train_binary(&data, &labels, Kernel::Linear, &cfg).unwrap();
        for (x, y) in data.iter().zip(labels) {
            assert!(svm.decision_value(&Kernel::Linear, x) * y > 0.0);
        }
        let w = svm.weights(&Kernel::Linear).unwrap();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let margin = data.iter().zip(labels).map(|(x, y)| y * svm.decision_value(&Kernel::Linear, x) / norm).fold(f64::INFINITY, f64::min);
        assert!(margin > 0.0);
    }

    #[test]
    fn hard_margin_solution_on_two_points() {
        // Points at -1 and +1 on a line: w = 1, rho = 0, both alphas 0.5.
        let data = vec![vec![1.0], vec![-1.0]];
        let cfg = SvmConfig { kernel: KernelChoice::Linear, regularization: 10.0, tolerance: 1e-9, ..SvmConfig::default() };
        let svm = train_binary(&data, &[1.0, -1.0], Kernel::Linear, &cfg).unwrap();
        let w = svm.weights(&Kernel::Linear).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-9);
        assert!(svm.rho.abs() < 1e-9);
    }

    #[test]
    fn iteration_cap_reports_gap() {
        let data: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]).collect();
        let labels: Vec<f64> = (0..40).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        let cfg = SvmConfig { max_iter: 1, tolerance: 1e-12, ..SvmConfig::default() };
        let err = train_binary(&data, &labels, Kernel::Gaussian { gamma: 1.0 }, &cfg).unwrap_err();
        assert!(matches!(err, CognitionError::TrainingFailed { iterations: 1, residual_gap } if residual_gap > 0.0));
    }

    #[test]
    fn text_format_round_trip() {
        let data = vec![vec![0.0, 0.0], vec![0.1, 0.2], vec![1.0, 1.0], vec![1.1, 0.9], vec![2.0, 2.0], vec![2.1, 2.2]];
        let labels = [0, 0, 1, 1, 2, 2];
        let clf = train_one_vs_one(&data, &labels, 1.5, &SvmConfig::default()).unwrap();
        let back = MarginClassifier::from_text(&clf.to_text()).unwrap();
        assert_eq!(back, clf);
        assert!(MarginClassifier::from_text("garbage").is_err());
    }
}
