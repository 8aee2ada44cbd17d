use hdpo_core::evalkit::{median, true_reward_bounds, Metric};
use hdpo_core::{
    avg_true_reward, detect, detection_metrics, fit, generate_clean, likelihood, recovery_error, run_cell, run_sweep,
    Backend, ExperimentSpec, GeneratorSpec, LinearRewardModel, LossSpec, PolicyModel, TrainConfig,
};

fn desk(n_prompts: usize) -> ExperimentSpec {
    ExperimentSpec {
        generator: GeneratorSpec {
            n_prompts,
            margin_floor: 3.0,
            ..GeneratorSpec::default()
        },
        backend: Backend::Linear,
        beta: 0.1,
        train: TrainConfig {
            max_epochs: 300,
            ..TrainConfig::for_backend(Backend::Linear)
        },
        detect_gamma: 2.0,
    }
}

#[test]
fn holder_separates_clean_from_flipped() {
    let base = desk(200);
    let (_, dirty) = base.datasets(0.4, 12).unwrap();
    let model = base.train(&LossSpec::holder(2.0), &dirty, 12).unwrap();
    let (mut clean, mut flipped) = (Vec::new(), Vec::new());
    for p in dirty.pairs() {
        let s = likelihood(&model, &dirty, p).unwrap();
        if p.truth_flipped { flipped.push(s) } else { clean.push(s) }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&clean) > mean(&flipped));
}

#[test]
fn descent_on_clean_data_for_convex_objectives() {
    let data = generate_clean(&GeneratorSpec { n_prompts: 60, margin_floor: 1.0, seed: 2, ..GeneratorSpec::default() }).unwrap();
    let model = PolicyModel::initial(Backend::Linear, &data, 0.1).unwrap();
    for (spec, learning_rate) in [(LossSpec::Dpo, 0.5), (LossSpec::Ipo, 0.002)] {
        let config = TrainConfig {
            max_epochs: 100,
            learning_rate,
            momentum: 0.0,
            enforce_descent: true,
            ..TrainConfig::default()
        };
        let (_, trace) = fit(&model, &data, &spec, &config).unwrap();
        assert!(trace.final_loss() < trace.initial_loss);
        assert!(trace.losses.windows(2).all(|w| w[1] <= w[0]));
        assert!(trace.losses.len() <= config.max_epochs);
    }
}

#[test]
fn descent_violation_aborts() {
    let data = generate_clean(&GeneratorSpec { n_prompts: 30, seed: 4, ..GeneratorSpec::default() }).unwrap();
    let model = PolicyModel::initial(Backend::Linear, &data, 1.0).unwrap();
    let config = TrainConfig {
        max_epochs: 50,
        learning_rate: 200.0,
        momentum: 0.0,
        enforce_descent: true,
        ..TrainConfig::default()
    };
    assert!(matches!(
        fit(&model, &data, &LossSpec::Ipo, &config),
        Err(hdpo_core::Error::DescentViolation { .. }) | Err(hdpo_core::Error::TrainingDiverged { .. })
    ));
}

#[test]
fn cell_is_composition_of_module_calls() {
    let base = desk(40);
    let spec = LossSpec::holder(2.0);
    let cell = run_cell(&spec, 0.2, 5, &base).unwrap();

    let (_, dirty) = base.datasets(0.2, 5).unwrap();
    let initial = PolicyModel::initial(Backend::Linear, &dirty, base.beta).unwrap();
    let (model, _) = fit(&initial, &dirty, &spec, &TrainConfig { seed: 5, ..base.train }).unwrap();
    let report = detect(&model, &dirty, 2.0).unwrap();
    let metrics = detection_metrics(&report, &dirty).unwrap();
    let theta = dirty.meta.true_theta.clone().unwrap();

    assert_eq!(cell.recovery_error, recovery_error(&model, &theta).unwrap());
    assert_eq!(cell.avg_true_reward, avg_true_reward(&model, &dirty, Some(&theta)).unwrap());
    assert_eq!(cell.epsilon_hat, report.epsilon_hat);
    assert_eq!((cell.precision, cell.recall, cell.n_flagged), (metrics.precision, metrics.recall, metrics.n_flagged));
    assert_eq!(run_cell(&spec, 0.2, 5, &base).unwrap(), cell);
}

#[test]
fn clean_grid_has_no_positives() {
    let base = desk(40);
    let sweep = run_sweep(&[LossSpec::Dpo, LossSpec::holder(2.0)], &[0.0], &[1, 2], &base).unwrap();
    assert_eq!(sweep.cells.len(), 4);
    for cell in &sweep.cells {
        assert_eq!(cell.metrics.recall, 0.0);
        assert_eq!(cell.metrics.precision, 0.0);
        assert!(cell.metrics.epsilon_hat < 0.1);
    }
}

#[test]
fn cell_errors_carry_coordinates() {
    let mut base = desk(5);
    base.generator.margin_floor = f64::INFINITY;
    let err = run_sweep(&[LossSpec::Dpo], &[0.1], &[9], &base).unwrap_err();
    match err {
        hdpo_core::Error::Cell { variant, epsilon, seed, .. } => {
            assert_eq!((variant.as_str(), epsilon, seed), ("dpo", 0.1, 9));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn random_model_lies_between_extremes() {
    let data = generate_clean(&GeneratorSpec {
        n_prompts: 500,
        n_responses_per_prompt: 2,
        feature_dim: 3,
        seed: 8,
        ..GeneratorSpec::default()
    })
    .unwrap();
    let theta = data.meta.true_theta.clone().unwrap();
    let (lo, hi) = true_reward_bounds(&data, Some(&theta)).unwrap();
    // Enumerate per prompt which response the random model picks.
    let model = PolicyModel::Linear(LinearRewardModel::new(vec![0.3, 1.0, -0.7], 1.0).unwrap());
    let mut total = 0.0;
    for p in 0..data.n_prompts() {
        let w = model.params();
        let score = |y| hdpo_core::math::dot(w, data.feature(p, y));
        let pick = if score(1) > score(0) { 1 } else { 0 };
        total += data.true_reward(&theta, p, pick);
    }
    let got = avg_true_reward(&model, &data, Some(&theta)).unwrap();
    assert!((got - total / 500.0).abs() < 1e-12);
    assert!(lo < got && got < hi);
}

#[test]
fn estimates_and_degradation_across_eps() {
    let base = desk(200);
    let eps = [0.0, 0.1, 0.2, 0.3, 0.4];
    let seeds: Vec<u64> = (1..=10).collect();
    let sweep = run_sweep(&[LossSpec::Dpo, LossSpec::holder(2.0)], &eps, &seeds, &base).unwrap();
    let holder = sweep.variant_index("holder").unwrap();
    let dpo = sweep.variant_index("dpo").unwrap();

    let medians: Vec<f64> = (0..eps.len()).map(|e| sweep.median(Metric::EpsilonHat, holder, e)).collect();
    assert!(medians.windows(2).all(|w| w[1] >= w[0]), "{medians:?}");

    let drop = |v| {
        let at0 = sweep.median(Metric::AvgTrueReward, v, 0);
        (at0 - sweep.median(Metric::AvgTrueReward, v, eps.len() - 1)) / at0.abs()
    };
    assert!(drop(holder) < drop(dpo), "{} vs {}", drop(holder), drop(dpo));

    for cell in &sweep.cells {
        let m = cell.metrics;
        assert!((0.0..=1.0).contains(&m.precision) && (0.0..=1.0).contains(&m.recall));
    }
    assert!(median(&sweep.values(Metric::Recall, holder, 4)) > 0.5);
}
