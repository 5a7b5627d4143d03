mod common;

use common::*;
use fkan::data::{image_to_dataset, synthetic_image};
use fkan::layers::ModelConfig;
use fkan::{adam_step, init_model, train, AdamState, Array2, Error, Exec, TrainConfig, Trainer};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_model(seed: u64) -> ModelConfig {
    ModelConfig {
        input_dim: 2,
        output_dim: 1,
        latent_dim: 6,
        grid_size: 4,
        hidden_widths: vec![8],
        seed,
        ..ModelConfig::default()
    }
}

fn small_train(epochs: usize, batch: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: batch,
        lr: 1e-3,
        seed,
        metric_every: 1,
        record_wall_time: false,
    }
}

/// Scalar Adam written out element by element.
fn adam_oracle(theta: &mut [f64], grads: &[Vec<f64>], lr: f64) {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    for (t, g) in grads.iter().enumerate() {
        let t = (t + 1) as i32;
        for i in 0..theta.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            theta[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[test]
fn loss_decreases_on_a_smooth_image() {
    let data = image_to_dataset(&synthetic_image(16, 16, &[1.0]).unwrap()).unwrap();
    let cfg = TrainConfig {
        lr: 1e-3,
        ..small_train(300, 0, 0)
    };
    let (_, report) = train(init_model(&small_model(1)).unwrap(), &data, &cfg, |_| 0.0).unwrap();
    let first = report.records.first().unwrap().loss;
    let last = report.last().unwrap().loss;
    assert!(last < 0.2 * first, "{first} -> {last}");
    assert_eq!(report.records.len(), 301);
}

#[test]
fn step_counts_follow_batching() {
    let data = image_to_dataset(&synthetic_image(10, 10, &[1.0]).unwrap()).unwrap();
    for (batch, per_epoch) in [(0, 1), (100, 1), (30, 4), (7, 15), (1000, 1)] {
        let t = Trainer::new(
            init_model(&small_model(0)).unwrap(),
            &data,
            small_train(3, batch, 0),
        )
        .unwrap();
        assert_eq!(t.steps_per_epoch(), per_epoch, "batch {batch}");
        assert_eq!(t.total_steps(), 3 * per_epoch);
    }
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = image_to_dataset(&synthetic_image(9, 7, &[2.0]).unwrap()).unwrap();
    let cfg = small_train(5, 10, 42);
    let mut full = Trainer::new(init_model(&small_model(3)).unwrap(), &data, cfg.clone()).unwrap();
    let total = full.total_steps();
    full.run(total, &mut |_| 0.0).unwrap();

    for cut in [1, 6, 7, 13, 20] {
        let mut a = Trainer::new(init_model(&small_model(3)).unwrap(), &data, cfg.clone()).unwrap();
        a.run(cut, &mut |_| 0.0).unwrap();
        let mut b = Trainer::resume(a.state(), &data, cfg.clone()).unwrap();
        b.run(total, &mut |_| 0.0).unwrap();
        assert_eq!(b.state(), full.state(), "cut at {cut}");
    }
}

#[test]
fn executors_train_identically() {
    let data = image_to_dataset(&synthetic_image(24, 24, &[3.0]).unwrap()).unwrap();
    let run = |exec: Exec| {
        let mut t = Trainer::new(
            init_model(&small_model(4)).unwrap(),
            &data,
            small_train(3, 200, 1),
        )
        .unwrap()
        .with_exec(exec);
        t.run(u64::MAX, &mut |_| 0.0).unwrap();
        t.state()
    };
    let reference = run(Exec::Sequential);
    assert_eq!(reference, run(Exec::Sequential));
    #[cfg(feature = "parallel")]
    assert_eq!(reference, run(Exec::Parallel));
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let data = image_to_dataset(&synthetic_image(8, 8, &[1.0]).unwrap()).unwrap();
    let cfg = TrainConfig {
        lr: 1e300,
        ..small_train(50, 0, 0)
    };
    let err = train(init_model(&small_model(5)).unwrap(), &data, &cfg, |_| 0.0).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
}

#[test]
fn invalid_configs_rejected() {
    let data = image_to_dataset(&synthetic_image(4, 4, &[1.0]).unwrap()).unwrap();
    let model = init_model(&small_model(0)).unwrap();
    for cfg in [
        TrainConfig {
            epochs: 0,
            ..small_train(1, 0, 0)
        },
        TrainConfig {
            lr: 0.0,
            ..small_train(1, 0, 0)
        },
        TrainConfig {
            lr: f64::NAN,
            ..small_train(1, 0, 0)
        },
        TrainConfig {
            metric_every: 0,
            ..small_train(1, 0, 0)
        },
    ] {
        assert!(Trainer::new(model.clone(), &data, cfg).is_err());
    }
    let wrong = init_model(&ModelConfig {
        output_dim: 3,
        ..small_model(0)
    })
    .unwrap();
    assert!(Trainer::new(wrong, &data, small_train(1, 0, 0)).is_err());
}

#[test]
fn metric_is_logged_every_n_steps() {
    let data = image_to_dataset(&synthetic_image(6, 6, &[1.0]).unwrap()).unwrap();
    let cfg = TrainConfig {
        metric_every: 4,
        ..small_train(10, 0, 0)
    };
    let (_, report) = train(init_model(&small_model(0)).unwrap(), &data, &cfg, |_| 1.0).unwrap();
    let steps: Vec<u64> = report.records.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![0, 4, 8, 10]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adam_matches_scalar_oracle(
        n in 1usize..12,
        steps in 1usize..6,
        lr in 1e-5f64..1e-1,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = random_array(&mut rng, 1, n, -1.0, 1.0);
        let grads: Vec<Array2> = (0..steps).map(|_| random_array(&mut rng, 1, n, -5.0, 5.0)).collect();
        let mut p = start.clone();
        let mut st = AdamState::new(&[&p], lr);
        for g in &grads {
            adam_step(&mut [&mut p], &[g], &mut st).unwrap();
        }
        let mut expect = start.data().to_vec();
        adam_oracle(&mut expect, &grads.iter().map(|g| g.data().to_vec()).collect::<Vec<_>>(), lr);
        for (a, b) in p.data().iter().zip(&expect) {
            prop_assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()), "{} vs {}", a, b);
        }
        prop_assert_eq!(st.step_count, steps as u64);
    }

    #[test]
    fn rejected_adam_step_changes_nothing(n in 1usize..8, bad in 0usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = random_array(&mut rng, 1, n, -1.0, 1.0);
        let mut g = random_array(&mut rng, 1, n, -1.0, 1.0);
        let mut st = AdamState::new(&[&p], 1e-2);
        adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
        let (p0, st0) = (p.clone(), st.clone());
        g.data_mut()[bad % n] = f64::NAN;
        prop_assert!(adam_step(&mut [&mut p], &[&g], &mut st).is_err());
        prop_assert_eq!(p, p0);
        prop_assert_eq!(st, st0);
    }

    #[test]
    fn first_adam_step_moves_each_entry_by_lr(n in 1usize..16, lr in 1e-4f64..1e-1, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = random_array(&mut rng, 1, n, -1.0, 1.0);
        let g = random_array(&mut rng, 1, n, 0.01, 10.0);
        let mut p = start.clone();
        let mut st = AdamState::new(&[&p], lr);
        adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
        for (a, b) in p.data().iter().zip(start.data()) {
            prop_assert!(((b - a) / lr - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn training_is_a_function_of_its_seeds(model_seed in 0u64..1000, shuffle_seed in 0u64..1000) {
        let data = image_to_dataset(&synthetic_image(5, 5, &[1.0]).unwrap()).unwrap();
        let go = || {
            let mut t = Trainer::new(init_model(&small_model(model_seed)).unwrap(), &data, small_train(2, 7, shuffle_seed)).unwrap();
            t.run(u64::MAX, &mut |_| 0.0).unwrap();
            t.state()
        };
        prop_assert_eq!(go(), go());
    }
}
