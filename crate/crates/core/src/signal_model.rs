//! Ground-truth generator for licensed-user observations.
//!
//! Frames are symbol-rate complex baseband: every sample is one iid
//! constellation symbol scaled to the transmit power plus circular complex
//! Gaussian noise. Channel occupancy follows an independent two-state Markov
//! chain per channel.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CognitionError, Result};

/// Modulation tag of a licensed transmission. `NoiseOnly` marks an idle channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModulationType {
    NoiseOnly,
    Bpsk,
    Qpsk,
    Psk8,
    Qam16,
}

impl ModulationType {
    /// Every modulation that carries a constellation.
    pub const ACTIVE: [ModulationType; 4] = [
        ModulationType::Bpsk,
        ModulationType::Qpsk,
        ModulationType::Psk8,
        ModulationType::Qam16,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModulationType::NoiseOnly => "NOISE_ONLY",
            ModulationType::Bpsk => "BPSK",
            ModulationType::Qpsk => "QPSK",
            ModulationType::Psk8 => "PSK8",
            ModulationType::Qam16 => "QAM16",
        }
    }
}

impl fmt::Display for ModulationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModulationType {
    type Err = CognitionError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NOISE_ONLY" | "NOISE" | "IDLE" => Ok(ModulationType::NoiseOnly),
            "BPSK" => Ok(ModulationType::Bpsk),
            "QPSK" => Ok(ModulationType::Qpsk),
            "PSK8" | "8PSK" => Ok(ModulationType::Psk8),
            "QAM16" | "16QAM" => Ok(ModulationType::Qam16),
            other => Err(CognitionError::invalid(format!("unknown modulation tag `{other}`"))),
        }
    }
}

/// Unit-average-power symbol alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Complex64>,
}

impl Constellation {
    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn average_power(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.points.len() as f64
    }
}

/// Builds the unit-power constellation for `tag` with a fixed point ordering.
pub fn make_constellation(tag: ModulationType) -> Result<Constellation> {
    let points = match tag {
        ModulationType::NoiseOnly => {
            return Err(CognitionError::invalid("NOISE_ONLY has no constellation"))
        }
        ModulationType::Bpsk => vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
        ModulationType::Qpsk => {
            let a = std::f64::consts::FRAC_1_SQRT_2;
            vec![
                Complex64::new(a, a),
                Complex64::new(-a, a),
                Complex64::new(-a, -a),
                Complex64::new(a, -a),
            ]
        }
        ModulationType::Psk8 => (0..8)
            .map(|k| Complex64::from_polar(1.0, std::f64::consts::TAU * k as f64 / 8.0))
            .collect(),
        ModulationType::Qam16 => {
            let scale = 10f64.sqrt().recip();
            let levels = [-3.0, -1.0, 1.0, 3.0];
            levels
                .iter()
                .flat_map(|&i| levels.iter().map(move |&q| Complex64::new(i * scale, q * scale)))
                .collect()
        }
    };
    Ok(Constellation { points })
}

/// Joint (modulation, power) label of a licensed transmission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmitPattern {
    modulation: ModulationType,
    power: f64,
}

impl TransmitPattern {
    /// `power` is linear received power; it must be zero exactly when the
    /// modulation is `NoiseOnly`.
    pub fn new(modulation: ModulationType, power: f64) -> Result<Self> {
        if !power.is_finite() || power < 0.0 {
            return Err(CognitionError::invalid(format!("power must be finite and >= 0, got {power}")));
        }
        if (power == 0.0) != (modulation == ModulationType::NoiseOnly) {
            return Err(CognitionError::invalid(format!(
                "power {power} inconsistent with modulation {modulation}"
            )));
        }
        Ok(Self { modulation, power })
    }

    pub fn idle() -> Self {
        Self { modulation: ModulationType::NoiseOnly, power: 0.0 }
    }

    pub fn modulation(&self) -> ModulationType {
        self.modulation
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn is_idle(&self) -> bool {
        self.modulation == ModulationType::NoiseOnly
    }
}

/// Slot geometry of a sensing frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotConfig {
    slots_per_frame: usize,
    samples_per_slot: usize,
}

impl SlotConfig {
    pub fn new(slots_per_frame: usize, samples_per_slot: usize) -> Result<Self> {
        if slots_per_frame == 0 || samples_per_slot == 0 {
            return Err(CognitionError::invalid("slot geometry must be at least 1x1"));
        }
        Ok(Self { slots_per_frame, samples_per_slot })
    }

    pub fn slots_per_frame(&self) -> usize {
        self.slots_per_frame
    }

    pub fn samples_per_slot(&self) -> usize {
        self.samples_per_slot
    }

    pub fn frame_len(&self) -> usize {
        self.slots_per_frame * self.samples_per_slot
    }
}

/// A block of complex baseband samples with its generating label.
#[derive(Debug, Clone, PartialEq)]
pub struct IQFrame {
    samples: Vec<Complex64>,
    slot_config: SlotConfig,
    truth: TransmitPattern,
    noise_variance: f64,
}

impl IQFrame {
    pub fn new(
        samples: Vec<Complex64>,
        slot_config: SlotConfig,
        truth: TransmitPattern,
        noise_variance: f64,
    ) -> Result<Self> {
        if samples.len() != slot_config.frame_len() {
            return Err(CognitionError::invalid(format!(
                "frame has {} samples, slot geometry needs {}",
                samples.len(),
                slot_config.frame_len()
            )));
        }
        if !(noise_variance > 0.0) {
            return Err(CognitionError::invalid("noise variance must be > 0"));
        }
        Ok(Self { samples, slot_config, truth, noise_variance })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn slot_config(&self) -> SlotConfig {
        self.slot_config
    }

    pub fn truth(&self) -> TransmitPattern {
        self.truth
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Samples of slot `k`.
    pub fn slot(&self, k: usize) -> &[Complex64] {
        let n = self.slot_config.samples_per_slot;
        &self.samples[k * n..(k + 1) * n]
    }
}

/// One circular complex Gaussian draw with total variance `variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let sd = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * sd, im * sd)
}

/// Draws `n` samples of `pattern` in AWGN.
pub fn synthesize_samples<R: Rng + ?Sized>(
    pattern: TransmitPattern,
    noise_variance: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    if !(noise_variance > 0.0) || !noise_variance.is_finite() {
        return Err(CognitionError::invalid(format!("noise variance must be > 0, got {noise_variance}")));
    }
    if pattern.is_idle() {
        return Ok((0..n).map(|_| complex_gaussian(rng, noise_variance)).collect());
    }
    let constellation = make_constellation(pattern.modulation())?;
    let amplitude = pattern.power().sqrt();
    let points = constellation.points();
    Ok((0..n)
        .map(|_| {
            let symbol = points[rng.random_range(0..points.len())];
            symbol * amplitude + complex_gaussian(rng, noise_variance)
        })
        .collect())
}

pub fn synthesize_frame<R: Rng + ?Sized>(
    pattern: TransmitPattern,
    noise_variance: f64,
    slot_config: SlotConfig,
    rng: &mut R,
) -> Result<IQFrame> {
    let samples = synthesize_samples(pattern, noise_variance, slot_config.frame_len(), rng)?;
    IQFrame::new(samples, slot_config, pattern, noise_variance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelState {
    Vacant,
    Occupied,
}

impl ChannelState {
    pub fn is_vacant(self) -> bool {
        self == ChannelState::Vacant
    }

    pub fn flipped(self) -> Self {
        match self {
            ChannelState::Vacant => ChannelState::Occupied,
            ChannelState::Occupied => ChannelState::Vacant,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelState::Vacant => "VACANT",
            ChannelState::Occupied => "OCCUPIED",
        }
    }
}

impl FromStr for ChannelState {
    type Err = CognitionError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "VACANT" | "V" | "0" => Ok(ChannelState::Vacant),
            "OCCUPIED" | "O" | "1" => Ok(ChannelState::Occupied),
            other => Err(CognitionError::invalid(format!("unknown channel state `{other}`"))),
        }
    }
}

/// First-order two-state occupancy chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoStateMarkov {
    p_occupy_given_vacant: f64,
    p_vacate_given_occupied: f64,
}

impl TwoStateMarkov {
    pub fn new(p_occupy_given_vacant: f64, p_vacate_given_occupied: f64) -> Result<Self> {
        for (name, p) in [
            ("p_occupy_given_vacant", p_occupy_given_vacant),
            ("p_vacate_given_occupied", p_vacate_given_occupied),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CognitionError::invalid(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(Self { p_occupy_given_vacant, p_vacate_given_occupied })
    }

    /// Chain with stationary vacancy `vacancy` and `switch_rate = p_occupy + p_vacate`.
    ///
    /// `switch_rate = 1` gives iid slots; smaller values give longer dwell times.
    pub fn with_stationary_vacancy(vacancy: f64, switch_rate: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&vacancy) || !(0.0..=2.0).contains(&switch_rate) {
            return Err(CognitionError::invalid("vacancy in [0,1] and switch rate in [0,2] required"));
        }
        Self::new(switch_rate * (1.0 - vacancy), switch_rate * vacancy)
    }

    pub fn p_occupy_given_vacant(&self) -> f64 {
        self.p_occupy_given_vacant
    }

    pub fn p_vacate_given_occupied(&self) -> f64 {
        self.p_vacate_given_occupied
    }

    /// Both transition probabilities zero: the chain never moves.
    pub fn is_degenerate(&self) -> bool {
        self.p_occupy_given_vacant == 0.0 && self.p_vacate_given_occupied == 0.0
    }

    pub fn stationary_vacancy(&self) -> Option<f64> {
        let total = self.p_occupy_given_vacant + self.p_vacate_given_occupied;
        (total > 0.0).then(|| self.p_vacate_given_occupied / total)
    }

    /// Probability the next slot is vacant given the current state.
    pub fn next_vacancy(&self, current: ChannelState) -> f64 {
        match current {
            ChannelState::Vacant => 1.0 - self.p_occupy_given_vacant,
            ChannelState::Occupied => self.p_vacate_given_occupied,
        }
    }

    /// Probability of vacancy `steps` slots after observing `current`.
    pub fn vacancy_after(&self, current: ChannelState, steps: u64) -> f64 {
        let Some(pi) = self.stationary_vacancy() else {
            return if current.is_vacant() { 1.0 } else { 0.0 };
        };
        let memory = 1.0 - self.p_occupy_given_vacant - self.p_vacate_given_occupied;
        let decay = memory.powi(steps.min(i32::MAX as u64) as i32);
        let start = if current.is_vacant() { 1.0 } else { 0.0 };
        (pi + (start - pi) * decay).clamp(0.0, 1.0)
    }

    pub fn step<R: Rng + ?Sized>(&self, current: ChannelState, rng: &mut R) -> ChannelState {
        let u: f64 = rng.random();
        if u < self.next_vacancy(current) {
            ChannelState::Vacant
        } else {
            ChannelState::Occupied
        }
    }
}

/// Binary occupancy history of one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelOccupancyTrace {
    channel_id: usize,
    states: Vec<ChannelState>,
}

impl ChannelOccupancyTrace {
    pub fn new(channel_id: usize, states: Vec<ChannelState>) -> Result<Self> {
        if states.is_empty() {
            return Err(CognitionError::invalid("occupancy trace must be non-empty"));
        }
        Ok(Self { channel_id, states })
    }

    pub fn channel_id(&self) -> usize {
        self.channel_id
    }

    pub fn states(&self) -> &[ChannelState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn vacancy_fraction(&self) -> f64 {
        self.states.iter().filter(|s| s.is_vacant()).count() as f64 / self.states.len() as f64
    }
}

/// Traces from `simulate_occupancy`; `degenerate[c]` marks chains that could
/// not be started from a stationary law and were started VACANT instead.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancySimulation {
    pub traces: Vec<ChannelOccupancyTrace>,
    pub degenerate: Vec<bool>,
}

pub fn simulate_chain<R: Rng + ?Sized>(
    model: &TwoStateMarkov,
    channel_id: usize,
    horizon: usize,
    start: ChannelState,
    rng: &mut R,
) -> Result<ChannelOccupancyTrace> {
    if horizon == 0 {
        return Err(CognitionError::invalid("horizon must be >= 1"));
    }
    let mut states = Vec::with_capacity(horizon);
    let mut state = start;
    states.push(state);
    for _ in 1..horizon {
        state = model.step(state, rng);
        states.push(state);
    }
    ChannelOccupancyTrace::new(channel_id, states)
}

/// One trace per model, each started from its chain's stationary law.
pub fn simulate_occupancy<R: Rng + ?Sized>(
    models: &[TwoStateMarkov],
    horizon: usize,
    rng: &mut R,
) -> Result<OccupancySimulation> {
    if horizon == 0 {
        return Err(CognitionError::invalid("horizon must be >= 1"));
    }
    let mut traces = Vec::with_capacity(models.len());
    let mut degenerate = Vec::with_capacity(models.len());
    for (id, model) in models.iter().enumerate() {
        let start = match model.stationary_vacancy() {
            Some(pi) => {
                if rng.random::<f64>() < pi {
                    ChannelState::Vacant
                } else {
                    ChannelState::Occupied
                }
            }
            None => ChannelState::Vacant,
        };
        degenerate.push(model.is_degenerate());
        traces.push(simulate_chain(model, id, horizon, start, rng)?);
    }
    Ok(OccupancySimulation { traces, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mean_power(samples: &[Complex64]) -> f64 {
        samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64
    }

    #[test]
    fn constellations_are_unit_power_and_sized() {
        for tag in ModulationType::ACTIVE {
            let c = make_constellation(tag).unwrap();
            assert!((c.average_power() - 1.0).abs() < 1e-12, "{tag}");
            assert!(c.len() >= 2 && c.len().is_power_of_two());
        }
    }

    #[test]
    fn known_point_sets() {
        let bpsk = make_constellation(ModulationType::Bpsk).unwrap();
        assert_eq!(bpsk.points(), &[Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)]);
        let qpsk = make_constellation(ModulationType::Qpsk).unwrap();
        for p in qpsk.points() {
            assert!((p.re.abs() - 0.5f64.sqrt()).abs() < 1e-15);
            assert!((p.im.abs() - 0.5f64.sqrt()).abs() < 1e-15);
        }
        // enumeration over the {±1,±3}² grid scaled by 1/sqrt(10)
        let qam = make_constellation(ModulationType::Qam16).unwrap();
        let grid_power: f64 = [-3.0f64, -1.0, 1.0, 3.0]
            .iter()
            .flat_map(|i| [-3.0f64, -1.0, 1.0, 3.0].map(|q| i * i + q * q))
            .sum::<f64>()
            / 16.0;
        assert_eq!(grid_power, 10.0);
        assert_eq!(qam.len(), 16);
    }

    #[test]
    fn noise_only_has_no_constellation() {
        assert!(matches!(
            make_constellation(ModulationType::NoiseOnly),
            Err(CognitionError::InvalidArgument(_))
        ));
    }

    #[test]
    fn pattern_invariant() {
        assert!(TransmitPattern::new(ModulationType::NoiseOnly, 1.0).is_err());
        assert!(TransmitPattern::new(ModulationType::Bpsk, 0.0).is_err());
        assert!(TransmitPattern::new(ModulationType::Bpsk, -1.0).is_err());
        assert!(TransmitPattern::new(ModulationType::Qam16, 2.0).is_ok());
    }

    #[test]
    fn idle_frame_energy_matches_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = SlotConfig::new(1, 1_000_000).unwrap();
        let f = synthesize_frame(TransmitPattern::idle(), 1.0, cfg, &mut rng).unwrap();
        assert!((mean_power(f.samples()) - 1.0).abs() < 0.01);
    }

    #[test]
    fn powers_add() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = SlotConfig::new(1, 1_000_000).unwrap();
        let p = TransmitPattern::new(ModulationType::Bpsk, 2.0).unwrap();
        let f = synthesize_frame(p, 1.0, cfg, &mut rng).unwrap();
        assert!((mean_power(f.samples()) - 3.0).abs() < 0.01);
    }

    #[test]
    fn frames_are_seed_deterministic() {
        let cfg = SlotConfig::new(4, 64).unwrap();
        let p = TransmitPattern::new(ModulationType::Qpsk, 1.0).unwrap();
        let a = synthesize_frame(p, 0.1, cfg, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = synthesize_frame(p, 0.1, cfg, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let bits = |f: &IQFrame| f.samples().iter().flat_map(|s| [s.re.to_bits(), s.im.to_bits()]).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn rejects_bad_noise() {
        let cfg = SlotConfig::new(1, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(synthesize_frame(TransmitPattern::idle(), 0.0, cfg, &mut rng).is_err());
        assert!(SlotConfig::new(0, 3).is_err());
    }

    #[test]
    fn absorbing_vacancy() {
        let m = TwoStateMarkov::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sim = simulate_occupancy(&[m], 500, &mut rng).unwrap();
        assert!(sim.traces[0].states().iter().all(|s| s.is_vacant()));
        assert!(!sim.degenerate[0]);
    }

    #[test]
    fn forced_flip_alternates() {
        let m = TwoStateMarkov::new(1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = simulate_chain(&m, 0, 4, ChannelState::Vacant, &mut rng).unwrap();
        use ChannelState::*;
        assert_eq!(t.states(), &[Vacant, Occupied, Vacant, Occupied]);
    }

    #[test]
    fn degenerate_chain_starts_vacant_and_is_flagged() {
        let m = TwoStateMarkov::new(0.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sim = simulate_occupancy(&[m], 10, &mut rng).unwrap();
        assert!(sim.degenerate[0]);
        assert!(sim.traces[0].states().iter().all(|s| s.is_vacant()));
    }

    #[test]
    fn stationary_fraction() {
        let m = TwoStateMarkov::new(0.2, 0.3).unwrap();
        assert!((m.stationary_vacancy().unwrap() - 0.6).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sim = simulate_occupancy(&[m], 100_000, &mut rng).unwrap();
        assert!((sim.traces[0].vacancy_fraction() - 0.6).abs() < 0.01);
    }

    #[test]
    fn multi_step_vacancy_matches_matrix_power() {
        let m = TwoStateMarkov::new(0.2, 0.3).unwrap();
        // two-state transition matrix power by repeated multiplication
        let t = [[0.8, 0.2], [0.3, 0.7]];
        let mut row = [1.0, 0.0];
        for step in 1..=6u64 {
            row = [row[0] * t[0][0] + row[1] * t[1][0], row[0] * t[0][1] + row[1] * t[1][1]];
            assert!((m.vacancy_after(ChannelState::Vacant, step) - row[0]).abs() < 1e-12);
        }
        assert!((m.vacancy_after(ChannelState::Occupied, 1) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_probabilities() {
        assert!(TwoStateMarkov::new(1.2, 0.1).is_err());
        assert!(ChannelOccupancyTrace::new(0, vec![]).is_err());
    }
}
