//! Feature extraction: per-slot energy vectors and higher-order cumulant vectors.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CognitionError, Result};
use crate::signal_model::{Constellation, IQFrame, ModulationType, TransmitPattern};

/// Average received power in each slot of a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyFeatureVector {
    energies: Vec<f64>,
    truth: Option<TransmitPattern>,
}

impl EnergyFeatureVector {
    pub fn new(energies: Vec<f64>, truth: Option<TransmitPattern>) -> Result<Self> {
        if energies.is_empty() {
            return Err(CognitionError::invalid("energy feature vector must be non-empty"));
        }
        if let Some(e) = energies.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(CognitionError::invalid(format!("slot energy must be finite and >= 0, got {e}")));
        }
        Ok(Self { energies, truth })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn truth(&self) -> Option<TransmitPattern> {
        self.truth
    }

    pub fn mean_energy(&self) -> f64 {
        self.energies.iter().sum::<f64>() / self.energies.len() as f64
    }
}

pub fn energy_features(frame: &IQFrame) -> EnergyFeatureVector {
    let cfg = frame.slot_config();
    let n = cfg.samples_per_slot() as f64;
    let energies = (0..cfg.slots_per_frame())
        .map(|k| frame.slot(k).iter().map(|s| s.norm_sqr()).sum::<f64>() / n)
        .collect();
    EnergyFeatureVector { energies, truth: Some(frame.truth()) }
}

/// `[C21, Re C40, C42]` with the sample count behind the estimate.
///
/// `sample_count` is `None` for population (theoretical) values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CumulantVector {
    values: [f64; 3],
    c40_imag: f64,
    sample_count: Option<usize>,
}

impl CumulantVector {
    pub fn new(values: [f64; 3], sample_count: Option<usize>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CognitionError::invalid("cumulant values must be finite"));
        }
        if values[0] < 0.0 {
            return Err(CognitionError::invalid("second-order cumulant must be >= 0"));
        }
        Ok(Self { values, c40_imag: 0.0, sample_count })
    }

    pub fn values(&self) -> &[f64; 3] {
        &self.values
    }

    pub fn c21(&self) -> f64 {
        self.values[0]
    }

    pub fn c40(&self) -> f64 {
        self.values[1]
    }

    pub fn c42(&self) -> f64 {
        self.values[2]
    }

    /// Imaginary part of the C40 estimate, discarded from `values`.
    pub fn c40_imag(&self) -> f64 {
        self.c40_imag
    }

    pub fn sample_count(&self) -> Option<usize> {
        self.sample_count
    }

    /// True when the discarded imaginary part of C40 exceeds 10% of its real part.
    pub fn imag_flag(&self) -> bool {
        self.c40_imag.abs() > 0.1 * self.values[1].abs()
    }

    /// Norm of the higher-order coordinates `(C40, C42)`.
    pub fn higher_order_norm(&self) -> f64 {
        self.values[1].hypot(self.values[2])
    }
}

/// Raw moments `M20, M21, M40, M42`.
struct Moments {
    m20: Complex64,
    m21: f64,
    m40: Complex64,
    m42: f64,
}

fn moments<'a>(points: impl Iterator<Item = &'a Complex64>, weight: f64) -> Moments {
    let mut m = Moments { m20: Complex64::new(0.0, 0.0), m21: 0.0, m40: Complex64::new(0.0, 0.0), m42: 0.0 };
    for x in points {
        let x2 = x * x;
        let e = x.norm_sqr();
        m.m20 += x2;
        m.m21 += e;
        m.m40 += x2 * x2;
        m.m42 += e * e;
    }
    m.m20 *= weight;
    m.m21 *= weight;
    m.m40 *= weight;
    m.m42 *= weight;
    m
}

/// `(C21, C40, C42)` from raw moments.
fn cumulants_from(m: &Moments) -> (f64, Complex64, f64) {
    let c40 = m.m40 - 3.0 * m.m20 * m.m20;
    let c42 = m.m42 - m.m20.norm_sqr() - 2.0 * m.m21 * m.m21;
    (m.m21, c40, c42)
}

/// Plug-in cumulant estimates from at least four samples.
pub fn estimate_cumulants(samples: &[Complex64]) -> Result<CumulantVector> {
    if samples.len() < 4 {
        return Err(CognitionError::invalid(format!(
            "cumulant estimation needs >= 4 samples, got {}",
            samples.len()
        )));
    }
    let m = moments(samples.iter(), 1.0 / samples.len() as f64);
    let (c21, c40, c42) = cumulants_from(&m);
    Ok(CumulantVector { values: [c21, c40.re, c42], c40_imag: c40.im, sample_count: Some(samples.len()) })
}

/// Population cumulants of `sqrt(power) * symbol + noise`.
///
/// Fourth-order cumulants of circular Gaussian noise vanish, so the noise
/// only shifts C21.
pub fn theoretical_cumulants(constellation: &Constellation, power: f64, noise_variance: f64) -> CumulantVector {
    let m = moments(constellation.points().iter(), 1.0 / constellation.len() as f64);
    let (c21, c40, c42) = cumulants_from(&m);
    let p2 = power * power;
    CumulantVector {
        values: [c21 * power + noise_variance, c40.re * p2, c42 * p2],
        c40_imag: c40.im * p2,
        sample_count: None,
    }
}

/// Unit-power signature of a modulation; zero vector for `NoiseOnly`.
pub fn unit_signature(modulation: ModulationType) -> CumulantVector {
    match crate::signal_model::make_constellation(modulation) {
        Ok(c) => theoretical_cumulants(&c, 1.0, 0.0),
        Err(_) => CumulantVector { values: [0.0; 3], c40_imag: 0.0, sample_count: None },
    }
}

fn label_fields(truth: Option<TransmitPattern>) -> (String, String) {
    match truth {
        Some(t) => (t.modulation().to_string(), format!("{}", t.power())),
        None => (String::new(), String::new()),
    }
}

/// CSV dump `frame_id,c21,c40,c42,n_samples,truth_mod,truth_power`.
pub fn cumulant_csv(rows: &[(CumulantVector, Option<TransmitPattern>)]) -> String {
    let mut out = String::from("frame_id,c21,c40,c42,n_samples,truth_mod,truth_power\n");
    for (i, (v, truth)) in rows.iter().enumerate() {
        let (m, p) = label_fields(*truth);
        let n = v.sample_count.map(|n| n.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{i},{},{},{},{n},{m},{p}", v.values[0], v.values[1], v.values[2]);
    }
    out
}

/// CSV dump `frame_id,slot_0..slot_{S-1},truth_mod,truth_power`.
pub fn energy_csv(rows: &[EnergyFeatureVector]) -> String {
    let dim = rows.first().map_or(0, |r| r.dim());
    let mut out = String::from("frame_id");
    for k in 0..dim {
        let _ = write!(out, ",slot_{k}");
    }
    out.push_str(",truth_mod,truth_power\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = write!(out, "{i}");
        for e in &r.energies {
            let _ = write!(out, ",{e}");
        }
        let (m, p) = label_fields(r.truth);
        let _ = writeln!(out, ",{m},{p}");
    }
    out
}

fn parse_truth(m: Option<&str>, p: Option<&str>) -> Result<Option<TransmitPattern>> {
    match (m.map(str::trim), p.map(str::trim)) {
        (Some(m), Some(p)) if !m.is_empty() && !p.is_empty() => {
            let power: f64 = p.parse().map_err(|_| CognitionError::invalid(format!("bad power `{p}`")))?;
            Ok(Some(TransmitPattern::new(m.parse()?, power)?))
        }
        _ => Ok(None),
    }
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| CognitionError::invalid(format!("line {line}: `{field}` is not a number")))
}

/// Parses the output of [`cumulant_csv`].
pub fn parse_cumulant_csv(text: &str) -> Result<Vec<(CumulantVector, Option<TransmitPattern>)>> {
    let mut rows = Vec::new();
    for (line_no, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(CognitionError::invalid(format!("line {}: expected >= 4 fields", line_no + 1)));
        }
        let values = [
            parse_f64(fields[1], line_no + 1)?,
            parse_f64(fields[2], line_no + 1)?,
            parse_f64(fields[3], line_no + 1)?,
        ];
        let n = fields.get(4).and_then(|s| s.trim().parse().ok());
        let truth = parse_truth(fields.get(5).copied(), fields.get(6).copied())?;
        rows.push((CumulantVector::new(values, n)?, truth));
    }
    Ok(rows)
}

/// Parses the output of [`energy_csv`].
pub fn parse_energy_csv(text: &str) -> Result<Vec<EnergyFeatureVector>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| CognitionError::invalid("empty energy CSV"))?;
    let dim = header.split(',').filter(|h| h.trim().starts_with("slot_")).count();
    if dim == 0 {
        return Err(CognitionError::invalid("energy CSV header has no slot_ columns"));
    }
    let mut rows = Vec::new();
    for (line_no, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 1 + dim {
            return Err(CognitionError::invalid(format!("line {}: expected {} slot values", line_no + 2, dim)));
        }
        let energies = fields[1..1 + dim]
            .iter()
            .map(|f| parse_f64(f, line_no + 2))
            .collect::<Result<Vec<_>>>()?;
        let truth = parse_truth(fields.get(1 + dim).copied(), fields.get(2 + dim).copied())?;
        rows.push(EnergyFeatureVector::new(energies, truth)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_model::{make_constellation, synthesize_frame, synthesize_samples, SlotConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: cumulants by direct enumeration over the point set,
    /// written out term by term in real arithmetic.
    fn enumerated(points: &[Complex64]) -> [f64; 3] {
        let n = points.len() as f64;
        let (mut m20r, mut m20i, mut m21, mut m40r, mut m42) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for p in points {
            let (a, b) = (p.re, p.im);
            m20r += (a * a - b * b) / n;
            m20i += 2.0 * a * b / n;
            m21 += (a * a + b * b) / n;
            m40r += (a.powi(4) - 6.0 * a * a * b * b + b.powi(4)) / n;
            m42 += (a * a + b * b).powi(2) / n;
        }
        let c40 = m40r - 3.0 * (m20r * m20r - m20i * m20i);
        let c42 = m42 - (m20r * m20r + m20i * m20i) - 2.0 * m21 * m21;
        [m21, c40, c42]
    }

    fn close(a: &[f64; 3], b: &[f64; 3], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn exact_constellation_streams() {
        // One full period of each constellation is an exact population sample.
        let cases = [
            (ModulationType::Bpsk, [1.0, -2.0, -2.0]),
            (ModulationType::Qpsk, [1.0, -1.0, -1.0]),
            (ModulationType::Qam16, [1.0, -0.68, -0.68]),
        ];
        for (tag, expected) in cases {
            let c = make_constellation(tag).unwrap();
            let mut stream = c.points().to_vec();
            while stream.len() < 4 {
                stream.extend_from_slice(c.points());
            }
            let oracle = enumerated(c.points());
            assert!(close(&oracle, &expected, 1e-12), "{tag}: oracle {oracle:?}");
            let est = estimate_cumulants(&stream).unwrap();
            assert!(close(est.values(), &expected, 1e-12), "{tag}: {:?}", est.values());
        }
    }

    #[test]
    fn theoretical_matches_enumeration() {
        for tag in ModulationType::ACTIVE {
            let c = make_constellation(tag).unwrap();
            let oracle = enumerated(c.points());
            let t = theoretical_cumulants(&c, 1.0, 0.0);
            assert!(close(t.values(), &oracle, 1e-12), "{tag}");
        }
        let bpsk = make_constellation(ModulationType::Bpsk).unwrap();
        assert!(close(theoretical_cumulants(&bpsk, 2.0, 1.0).values(), &[3.0, -8.0, -8.0], 1e-12));
        assert!(close(theoretical_cumulants(&bpsk, 0.0, 1.0).values(), &[1.0, 0.0, 0.0], 1e-12));
    }

    #[test]
    fn gaussian_noise_cumulants_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = synthesize_samples(TransmitPattern::idle(), 1.0, 1_000_000, &mut rng).unwrap();
        let c = estimate_cumulants(&x).unwrap();
        assert!(close(c.values(), &[1.0, 0.0, 0.0], 0.02), "{:?}", c.values());
    }

    #[test]
    fn too_few_samples() {
        let x = vec![Complex64::new(1.0, 0.0); 3];
        assert!(matches!(estimate_cumulants(&x), Err(CognitionError::InvalidArgument(_))));
    }

    #[test]
    fn qpsk_imag_part_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = TransmitPattern::new(ModulationType::Qpsk, 4.0).unwrap();
        let x = synthesize_samples(p, 0.1, 10_000, &mut rng).unwrap();
        assert!(!estimate_cumulants(&x).unwrap().imag_flag());
    }

    #[test]
    fn energy_feature_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = SlotConfig::new(2, 1_000_000).unwrap();
        let f = synthesize_frame(TransmitPattern::idle(), 1.0, cfg, &mut rng).unwrap();
        let v = energy_features(&f);
        assert_eq!(v.dim(), 2);
        assert!(v.energies().iter().all(|e| (e - 1.0).abs() < 0.01));
        assert_eq!(v.truth(), Some(TransmitPattern::idle()));

        let zero = IQFrame::new(vec![Complex64::new(0.0, 0.0); 6], SlotConfig::new(3, 2).unwrap(), TransmitPattern::idle(), 1.0)
            .unwrap();
        assert_eq!(energy_features(&zero).energies(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn energy_feature_monte_carlo_mean() {
        let cfg = SlotConfig::new(1, 10_000).unwrap();
        let p = TransmitPattern::new(ModulationType::Bpsk, 2.0).unwrap();
        let mut total = 0.0;
        for seed in 0..500u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            total += energy_features(&synthesize_frame(p, 1.0, cfg, &mut rng).unwrap()).energies()[0];
        }
        assert!((total / 500.0 - 3.0).abs() < 0.02);
    }

    #[test]
    fn csv_dumps_parse_back() {
        let bpsk = make_constellation(ModulationType::Bpsk).unwrap();
        let truth = TransmitPattern::new(ModulationType::Bpsk, 2.0).ok();
        let rows = vec![(theoretical_cumulants(&bpsk, 2.0, 1.0), truth)];
        let text = cumulant_csv(&rows);
        assert!(text.starts_with("frame_id,c21,c40,c42,n_samples,truth_mod,truth_power\n"));
        let back = parse_cumulant_csv(&text).unwrap();
        assert_eq!(back[0].0.values(), rows[0].0.values());
        assert_eq!(back[0].1, truth);

        let e = vec![EnergyFeatureVector::new(vec![1.5, 2.5], None).unwrap()];
        let text = energy_csv(&e);
        assert!(text.starts_with("frame_id,slot_0,slot_1,truth_mod,truth_power\n"));
        assert_eq!(parse_energy_csv(&text).unwrap(), e);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn scale_equivariance(seed in 0u64..1000, a in 0.1f64..10.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p = TransmitPattern::new(ModulationType::Qam16, 1.0).unwrap();
                let x = synthesize_samples(p, 0.5, 64, &mut rng).unwrap();
                let y: Vec<Complex64> = x.iter().map(|s| s * a).collect();
                let cx = estimate_cumulants(&x).unwrap();
                let cy = estimate_cumulants(&y).unwrap();
                let rel = |u: f64, v: f64| (u - v).abs() <= 1e-9 * (1.0 + v.abs());
                prop_assert!(rel(cy.c21(), a * a * cx.c21()));
                prop_assert!(rel(cy.c40(), a.powi(4) * cx.c40()));
                prop_assert!(rel(cy.c42(), a.powi(4) * cx.c42()));
            }
        }
    }
}
