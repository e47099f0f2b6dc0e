use cogniscope::features::EnergyFeatureVector;
use cogniscope::harness::config::ExperimentConfig;
use cogniscope::harness::parse_config;
use cogniscope::learn_mod::{dpgmm_fit_points, DPGMMConfig};
use cogniscope::learn_power::kmeans::kmeans;
use cogniscope::learn_power::svm::{train_binary, Kernel};
use cogniscope::learn_power::{cluster_energy, SvmConfig};
use cogniscope::predict_occ::{fit_history, run_policy, HistoryDatabase, PolicyConfig, SensingModel};
use cogniscope::signal_model::{
    make_constellation, simulate_chain, synthesize_samples, ChannelState, ModulationType, TransmitPattern,
    TwoStateMarkov,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn modulation() -> impl Strategy<Value = ModulationType> {
    prop::sample::select(ModulationType::ACTIVE.to_vec())
}

fn points(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, dim), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn constellations_have_unit_power(m in modulation()) {
        prop_assert!((make_constellation(m).unwrap().average_power() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn synthesis_is_seed_deterministic(m in modulation(), p in 0.0f64..10.0, seed in any::<u64>()) {
        let pattern = TransmitPattern::new(m, p).unwrap();
        let a = synthesize_samples(pattern, 1.0, 32, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = synthesize_samples(pattern, 1.0, 32, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn multi_step_vacancy_is_a_probability_and_mixes(a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let chain = TwoStateMarkov::new(a, b).unwrap();
        for s in [ChannelState::Vacant, ChannelState::Occupied] {
            prop_assert!((chain.vacancy_after(s, 1) - chain.next_vacancy(s)).abs() < 1e-12);
            for k in [0u64, 2, 7, 50] {
                let v = chain.vacancy_after(s, k);
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let far = chain.vacancy_after(s, 10_000);
            prop_assert!((far - chain.stationary_vacancy().unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn kmeans_assigns_every_point_to_its_member_mean(data in points(40, 2), k in 1usize..5, seed in any::<u64>()) {
        let fit = kmeans(&data, k, 100, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(fit.assignments.len(), data.len());
        for (c, centroid) in fit.centroids.iter().enumerate() {
            let members: Vec<&Vec<f64>> = data.iter().zip(&fit.assignments).filter(|(_, &a)| a == c).map(|(x, _)| x).collect();
            if members.is_empty() {
                continue;
            }
            for j in 0..2 {
                let mean = members.iter().map(|x| x[j]).sum::<f64>() / members.len() as f64;
                prop_assert!((centroid[j] - mean).abs() < 1e-9);
            }
        }
        prop_assert!(fit.wss_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn clustering_labels_every_vector(data in points(50, 2), seed in any::<u64>()) {
        let vectors: Vec<EnergyFeatureVector> =
            data.iter().map(|x| EnergyFeatureVector::new(x.iter().map(|v| v.abs() + 0.1).collect(), None).unwrap()).collect();
        let c = cluster_energy(&vectors, 3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(c.k >= 1 && c.k <= 3);
        prop_assert!(c.assignments.iter().all(|&a| a < c.k));
        prop_assert_eq!(c.cluster_sizes().iter().sum::<usize>(), vectors.len());
    }

    #[test]
    fn svm_sign_survives_positive_rescaling(shift in 0.5f64..3.0, scale in 0.01f64..100.0, probe in points(10, 2)) {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            let t = i as f64 / 10.0;
            data.push(vec![t, -shift - t]);
            labels.push(1.0);
            data.push(vec![-t, shift + t]);
            labels.push(-1.0);
        }
        let kernel = Kernel::Linear;
        let mut m = train_binary(&data, &labels, kernel, &SvmConfig::default()).unwrap();
        let before: Vec<bool> = probe.iter().map(|x| m.decision_value(&kernel, x) > 0.0).collect();
        m.dual_coef.iter_mut().for_each(|c| *c *= scale);
        m.rho *= scale;
        let after: Vec<bool> = probe.iter().map(|x| m.decision_value(&kernel, x) > 0.0).collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn smoothed_estimates_stay_in_unit_interval(a in 0.0f64..=1.0, b in 0.0f64..=1.0, len in 2usize..200, s in 0.0f64..3.0, seed in any::<u64>()) {
        let chain = TwoStateMarkov::new(a, b).unwrap();
        let trace = simulate_chain(&chain, 0, len, ChannelState::Vacant, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let fit = fit_history(&[trace], s).unwrap();
        let c = fit.chain(0).unwrap();
        prop_assert!((0.0..=1.0).contains(&c.p_occupy_given_vacant()));
        prop_assert!((0.0..=1.0).contains(&c.p_vacate_given_occupied()));
        let counts = fit.channel(0).unwrap().counts;
        prop_assert_eq!(counts.iter().flatten().sum::<u64>() as usize, len - 1);
    }

    #[test]
    fn policy_throughput_is_bounded_and_history_closes(
        vac in prop::collection::vec(0.05f64..0.95, 3..8),
        k in 1usize..3,
        eps in 0.0f64..0.3,
        seed in any::<u64>(),
    ) {
        let chains: Vec<_> = vac.iter().map(|&v| TwoStateMarkov::with_stationary_vacancy(v, 0.7).unwrap()).collect();
        let cfg = PolicyConfig {
            budget: k, warmup: 5, horizon: 60, capacity: 2.0, smoothing: 1.0,
            sensing: SensingModel::uniform(chains.len(), eps),
        };
        let run = run_policy(&chains, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let cap = k as f64 * 2.0;
        for t in [run.report.mean_throughput, run.report.baseline_mean_throughput] {
            prop_assert!((0.0..=cap).contains(&t));
        }
        prop_assert_eq!(run.database.total_observations(), 5 * chains.len() + 60 * k);
        prop_assert_eq!(run.database.refit(1.0).unwrap(), run.model.clone());
        prop_assert_eq!(HistoryDatabase::from_csv(&run.database.to_csv()).unwrap().to_csv(), run.database.to_csv());
    }

    #[test]
    fn config_round_trips(seed in any::<u64>(), snr in -30.0f64..30.0, trials in 1usize..50, pfa in prop::option::of(0.001f64..0.5)) {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        cfg.learn_power.snr_db = snr;
        cfg.predict.trials = trials;
        cfg.detect.fix_pfa = pfa;
        let (back, warnings) = parse_config(&cfg.to_toml()).unwrap();
        prop_assert!(warnings.is_empty());
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn dpgmm_weights_normalized_and_covariances_pd(data in points(30, 3), seed in any::<u64>()) {
        let cfg = DPGMMConfig { n_sweeps: 30, burn_in: 10, seed, ..DPGMMConfig::from_data(&data).unwrap() };
        let model = dpgmm_fit_points(&data, &cfg).unwrap();
        let total: f64 = model.components().iter().map(|c| c.weight).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for c in model.components() {
            prop_assert!(c.covariance_cholesky().is_ok());
        }
        prop_assert_eq!(model.assignments().len(), data.len());
    }
}
