//! Property tests for the spec'd invariants.

use guidelab_core::classifier::{fgsm_perturb, ClassifierModel, ProbeConfig};
use guidelab_core::data::{generate, DatasetSpec, Generator};
use guidelab_core::diffusion::{predict_z0, q_sample, NoiseSchedule};
use guidelab_core::graph::Graph;
use guidelab_core::metrics::knn_precision_recall;
use guidelab_core::rng;
use guidelab_core::tensor::Tensor;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn schedule_invariants_hold(
        steps in 1usize..400,
        start_frac in 1e-6f64..0.5,
        spread in 0.0f64..0.4,
    ) {
        let beta_start = start_frac;
        let beta_end = (beta_start + spread).min(0.999);
        let s = NoiseSchedule::linear(steps, beta_start, beta_end).unwrap();
        prop_assert_eq!(s.num_steps(), steps);
        for t in 1..=steps {
            prop_assert!((s.alpha(t) - (1.0 - s.beta(t))).abs() < 1e-15);
            prop_assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            prop_assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < 1.0);
            let rec = s.alpha_bar(t - 1) * s.alpha(t);
            prop_assert!((s.alpha_bar(t) - rec).abs() < 1e-15);
            prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }

    #[test]
    fn softmax_is_a_distribution(values in prop::collection::vec(-60.0f64..60.0, 2..24)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(values));
        let y = g.softmax(x, 0).unwrap();
        let out = g.value(y);
        prop_assert!(out.iter().all(|&v| v >= 0.0));
        let sum: f64 = out.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn clean_prediction_inverts_noising(
        seed in 0u64..1000,
        t_frac in 0.0f64..1.0,
    ) {
        let s = NoiseSchedule::desk();
        let t = 1 + ((s.num_steps() - 1) as f64 * t_frac) as usize;
        let mut r = rng::from_seed(seed);
        let x0 = guidelab_core::diffusion::randn(3, 4, &mut r);
        let eps = guidelab_core::diffusion::randn(3, 4, &mut r);
        let xt = q_sample(&x0, t, &eps, &s).unwrap();
        let z0 = predict_z0(&xt, t, &eps, &s).unwrap();
        for (a, b) in z0.values().iter().zip(x0.values()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn knn_swap_exchanges_precision_and_recall(seed in 0u64..500, k in 1usize..4) {
        let mut r = rng::from_seed(seed);
        let a = guidelab_core::diffusion::randn(12, 2, &mut r);
        let b = guidelab_core::diffusion::randn(15, 2, &mut r);
        let ab = knn_precision_recall(&a, &b, k).unwrap();
        let ba = knn_precision_recall(&b, &a, k).unwrap();
        prop_assert_eq!(ab.precision.to_bits(), ba.recall.to_bits());
        prop_assert_eq!(ab.recall.to_bits(), ba.precision.to_bits());
    }

    #[test]
    fn fgsm_moves_at_most_epsilon_per_coordinate(seed in 0u64..500, eps_mag in 0.01f64..0.5) {
        let mut r = rng::from_seed(seed);
        let model = ClassifierModel::new(2, 3, &[8], &mut r);
        let x = guidelab_core::diffusion::randn(6, 2, &mut r);
        let probe = ProbeConfig::new(eps_mag).unwrap();
        let out = fgsm_perturb(&model, &x, &probe, &[1, 2]).unwrap();
        for (a, b) in out.values().iter().zip(x.values()) {
            let d = (a - b).abs();
            prop_assert!(d < 1e-12 || (d - eps_mag).abs() < 1e-12);
        }
    }

    #[test]
    fn task_splits_partition_the_label_space(
        classes_pow in 1usize..3,
        seed in 0u64..300,
    ) {
        let classes = 2 * (classes_pow + 1); // 4 or 6
        let spec = DatasetSpec {
            generator: Generator::GaussianGrid,
            dimension: 2,
            classes,
            samples_per_class: 10,
            noise_std: 0.05,
            seed,
        };
        let ds = generate(&spec).unwrap();
        let sc = guidelab_core::data::split_tasks(&ds, 2, seed ^ 0xabc).unwrap();
        // class sets disjoint and complete
        let mut seen = std::collections::BTreeSet::new();
        for task in &sc.tasks {
            for &c in &task.classes {
                prop_assert!(seen.insert(c));
            }
        }
        prop_assert_eq!(seen.len(), classes);
        // no sample in two tasks: per-task sizes sum to the dataset size
        let total: usize = sc.tasks.iter().map(|t| t.train.len() + t.test.len()).sum();
        prop_assert_eq!(total, ds.len());
    }
}
