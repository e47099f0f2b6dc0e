//! Unsupervised discovery of modulation/power patterns from cumulant vectors.
//!
//! A DP mixture is fitted to the vectors; the component sitting at the origin
//! of the higher-order coordinates is the noise constellation and yields the
//! noise variance, and every other dominant component is matched against the
//! unit-power signature of each candidate modulation after scaling by the
//! estimated power squared.

pub mod dpgmm;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{CognitionError, Result};
use crate::features::{unit_signature, CumulantVector};
use crate::signal_model::ModulationType;

pub use dpgmm::{
    dpgmm_fit, dpgmm_fit_points, update_posterior, update_posterior_points, DPGMMConfig, MixtureComponent,
    MixtureModel, NiwPrior, SweepTrace, DOMINANT_WEIGHT,
};

/// Default noise gate: higher-order norm at most 10% of `C21^2`.
pub const DEFAULT_NOISE_GATE: f64 = 0.1;

/// Powers at or below this are treated as noise.
const TINY_POWER: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseIdentification {
    Noise { component: usize, noise_variance: f64 },
    NoIdleObserved,
}

impl NoiseIdentification {
    pub fn component(&self) -> Option<usize> {
        match self {
            Self::Noise { component, .. } => Some(*component),
            Self::NoIdleObserved => None,
        }
    }

    pub fn noise_variance(&self) -> Option<f64> {
        match self {
            Self::Noise { noise_variance, .. } => Some(*noise_variance),
            Self::NoIdleObserved => None,
        }
    }
}

/// Picks the dominant component nearest the origin in `(C40, C42)`.
///
/// The gate is relative: a component passes when
/// `||(C40, C42)|| <= noise_gate * C21^2`, so it does not depend on units.
pub fn identify_noise_component(model: &MixtureModel, noise_gate: f64) -> Result<NoiseIdentification> {
    if !(noise_gate >= 0.0) {
        return Err(CognitionError::invalid(format!("noise gate must be >= 0, got {noise_gate}")));
    }
    if model.dim() != 3 {
        return Err(CognitionError::invalid("noise identification needs 3-coordinate cumulant components"));
    }
    let mut best: Option<(usize, f64)> = None;
    for (id, c) in model.dominant() {
        let norm = c.mean[1].hypot(c.mean[2]);
        let c21 = c.mean[0];
        if c21 > 0.0 && norm <= noise_gate * c21 * c21 && best.is_none_or(|(_, b)| norm < b) {
            best = Some((id, norm));
        }
    }
    Ok(match best {
        Some((component, _)) => NoiseIdentification::Noise { component, noise_variance: model.components()[component].mean[0] },
        None => NoiseIdentification::NoIdleObserved,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub modulation: ModulationType,
    /// Unit-power, noise-free `[C21, C40, C42]`.
    pub signature: [f64; 3],
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationDictionary {
    entries: Vec<DictionaryEntry>,
}

impl ModulationDictionary {
    /// All four modulations, active.
    pub fn standard() -> Self {
        let entries = ModulationType::ACTIVE
            .iter()
            .map(|&m| DictionaryEntry {
                modulation: m,
                signature: *unit_signature(m).values(),
                active: true,
            })
            .collect();
        Self { entries }
    }

    pub fn entries(&self) -> &[DictionaryEntry] {
        &self.entries
    }

    pub fn active(&self) -> impl Iterator<Item = ModulationType> + '_ {
        self.entries.iter().filter(|e| e.active).map(|e| e.modulation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternAssignment {
    pub component_id: usize,
    pub modulation: ModulationType,
    pub estimated_power: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternMatch {
    pub assignments: Vec<PatternAssignment>,
    /// Input dictionary with never-matched entries deactivated.
    pub dictionary: ModulationDictionary,
}

/// Distance in `(C40, C42)` between `mean` and the entry scaled to `power`.
pub fn match_residual(mean: &[f64], signature: &[f64; 3], power: f64) -> f64 {
    let p2 = power * power;
    (mean[1] - p2 * signature[1]).hypot(mean[2] - p2 * signature[2])
}

/// Labels dominant components. The noise component (if identified) and
/// components with `C21 <= noise_variance` map to `NOISE_ONLY` at power 0.
pub fn match_patterns(
    model: &MixtureModel,
    dict: &ModulationDictionary,
    noise: &NoiseIdentification,
    noise_variance: f64,
) -> Result<PatternMatch> {
    if model.dim() != 3 {
        return Err(CognitionError::invalid("pattern matching needs 3-coordinate cumulant components"));
    }
    if !(noise_variance >= 0.0) {
        return Err(CognitionError::invalid("noise variance must be >= 0"));
    }
    let mut dictionary = dict.clone();
    let mut used = vec![false; dictionary.entries.len()];
    let mut assignments = Vec::new();
    for (id, c) in model.dominant() {
        let power = c.mean[0] - noise_variance;
        if noise.component() == Some(id) || power <= TINY_POWER {
            assignments.push(PatternAssignment {
                component_id: id,
                modulation: ModulationType::NoiseOnly,
                estimated_power: 0.0,
                residual: c.mean[1].hypot(c.mean[2]),
            });
            continue;
        }
        let best = dict
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.active)
            .map(|(k, e)| (k, match_residual(&c.mean, &e.signature, power)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((k, residual)) = best {
            used[k] = true;
            assignments.push(PatternAssignment {
                component_id: id,
                modulation: dict.entries[k].modulation,
                estimated_power: power,
                residual,
            });
        }
    }
    for (e, u) in dictionary.entries.iter_mut().zip(used) {
        e.active = u;
    }
    Ok(PatternMatch { assignments, dictionary })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VectorClass {
    Known(PatternAssignment),
    /// The fresh-component mass outweighed every labelled component.
    Unknown,
}

/// Predictive classification of a new vector against labelled components.
pub fn classify_vector(model: &MixtureModel, assignments: &[PatternAssignment], v: &CumulantVector) -> Result<VectorClass> {
    classify_point(model, assignments, v.values())
}

pub fn classify_point(model: &MixtureModel, assignments: &[PatternAssignment], x: &[f64]) -> Result<VectorClass> {
    if x.len() != model.dim() {
        return Err(CognitionError::invalid(format!("vector has {} coordinates, model has {}", x.len(), model.dim())));
    }
    let mut best: Option<(f64, &PatternAssignment)> = None;
    for a in assignments {
        let score = model.log_component_density(a.component_id, x)?;
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, a));
        }
    }
    let fresh = model.log_new_component_density(x)?;
    Ok(match best {
        Some((score, a)) if score >= fresh => VectorClass::Known(*a),
        _ => VectorClass::Unknown,
    })
}

/// Component dump for plotting:
/// `component,weight,mu_c21,mu_c40,mu_c42,matched_mod,est_power`.
/// Components without an assignment get an empty `matched_mod`.
pub fn component_csv(model: &MixtureModel, assignments: &[PatternAssignment]) -> String {
    let mut out = String::from("component,weight,mu_c21,mu_c40,mu_c42,matched_mod,est_power\n");
    for (id, c) in model.components().iter().enumerate() {
        let a = assignments.iter().find(|a| a.component_id == id);
        let coord = |j: usize| c.mean.get(j).copied().unwrap_or(f64::NAN);
        let _ = writeln!(
            out,
            "{id},{},{},{},{},{},{}",
            c.weight,
            coord(0),
            coord(1),
            coord(2),
            a.map_or(String::new(), |a| a.modulation.to_string()),
            a.map_or(String::new(), |a| a.estimated_power.to_string()),
        );
    }
    out
}

/// End-to-end labelling of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternReport {
    pub noise: NoiseIdentification,
    /// Recovered noise variance; 0 when no idle component was observed.
    pub noise_variance: f64,
    pub matched: PatternMatch,
}

pub fn label_model(model: &MixtureModel, noise_gate: f64) -> Result<PatternReport> {
    let noise = identify_noise_component(model, noise_gate)?;
    let noise_variance = noise.noise_variance().unwrap_or(0.0);
    let matched = match_patterns(model, &ModulationDictionary::standard(), &noise, noise_variance)?;
    Ok(PatternReport { noise, noise_variance, matched })
}
