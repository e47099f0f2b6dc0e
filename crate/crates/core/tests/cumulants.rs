use cogniscope::features::{estimate_cumulants, theoretical_cumulants};
use cogniscope::signal_model::{make_constellation, synthesize_samples, ModulationType, TransmitPattern};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-seed errors of the estimate against the enumerated population values.
fn errors(m: ModulationType, power: f64, noise: f64, n: usize, seeds: u64) -> Vec<[f64; 3]> {
    let truth = theoretical_cumulants(&make_constellation(m).unwrap(), power, noise);
    let pattern = TransmitPattern::new(m, power).unwrap();
    (0..seeds)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s * 7919 + n as u64);
            let x = synthesize_samples(pattern, noise, n, &mut rng).unwrap();
            let est = estimate_cumulants(&x).unwrap();
            let (e, t) = (est.values(), truth.values());
            [e[0] - t[0], e[1] - t[1], e[2] - t[2]]
        })
        .collect()
}

fn rms(errs: &[[f64; 3]]) -> f64 {
    (errs.iter().map(|e| e.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / errs.len() as f64).sqrt()
}

#[test]
fn rms_error_halves_when_samples_quadruple() {
    for m in [ModulationType::Qpsk, ModulationType::Qam16] {
        let r1 = rms(&errors(m, 1.0, 0.5, 10_000, 200));
        let r4 = rms(&errors(m, 1.0, 0.5, 40_000, 200));
        let ratio = r1 / r4;
        assert!((1.6..=2.4).contains(&ratio), "{m}: ratio {ratio}");
    }
}

#[test]
fn error_shrinks_at_root_n_over_decades() {
    let r: Vec<f64> = [100, 10_000, 1_000_000]
        .iter()
        .map(|&n| rms(&errors(ModulationType::Psk8, 2.0, 1.0, n, if n > 10_000 { 12 } else { 100 })))
        .collect();
    for w in r.windows(2) {
        let ratio = w[0] / w[1];
        // sqrt(100) = 10; loose because the top size has few seeds
        assert!((6.0..=16.0).contains(&ratio), "{r:?}");
    }
}

#[test]
fn signal_plus_noise_is_sum_of_parts() {
    // noise adds only to C21; mean over seeds must sit within 5 standard errors
    let (power, noise, seeds) = (1.5, 0.7, 12u64);
    let errs = errors(ModulationType::Bpsk, power, noise, 1_000_000, seeds);
    for j in 0..3 {
        let xs: Vec<f64> = errs.iter().map(|e| e[j]).collect();
        let mean = xs.iter().sum::<f64>() / seeds as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (seeds - 1) as f64).sqrt();
        assert!(mean.abs() <= 5.0 * sd / (seeds as f64).sqrt() + 1e-12, "coord {j}: mean {mean}, sd {sd}");
    }
}
