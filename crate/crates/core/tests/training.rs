use pec_core::autodiff::{tape_gradients, Tape};
use pec_core::dataset::{split_windows, SceneWindow};
use pec_core::geometry::State;
use pec_core::model::{EncoderConfig, LocationPredictorModel, ModelConfig};
use pec_core::trainer::{
    accumulate_batch_gradient, batch_loss, make_samples, mean_nll, nll, train, train_on_samples, EpochRecord,
    TrainConfig, TrainObserver,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> ModelConfig {
    ModelConfig {
        obs_len: 8,
        context: EncoderConfig::new(10, 8),
        target: EncoderConfig::new(6, 4),
        mlp_widths: vec![12, 8, 5],
    }
}

fn random_windows(seed: u64, count: usize, peds: usize, extent: f64) -> Vec<SceneWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|w| {
            let trajs: Vec<Vec<State>> = (0..peds)
                .map(|_| {
                    (0..9)
                        .map(|_| State::new(rng.random_range(-extent..extent), rng.random_range(-extent..extent)))
                        .collect()
                })
                .collect();
            SceneWindow::from_trajectories(&trajs, (0..peds as i64).collect(), w as i64, 8).unwrap()
        })
        .collect()
}

fn walkers(count: usize) -> Vec<SceneWindow> {
    (0..count)
        .map(|w| {
            let trajs: Vec<Vec<State>> = (0..2)
                .map(|p| {
                    let v = 0.3 + 0.05 * ((w + p) % 4) as f64;
                    (0..9).map(|t| State::new(v * t as f64, p as f64 * 1.5 - w as f64 * 0.1)).collect()
                })
                .collect();
            SceneWindow::from_trajectories(&trajs, vec![0, 1], w as i64, 8).unwrap()
        })
        .collect()
}

#[test]
fn batch_loss_is_mean_of_sample_nll() {
    let model = LocationPredictorModel::new(ModelConfig::default(), 4).unwrap();
    let samples = make_samples(&random_windows(1, 3, 3, 5.0), 8).unwrap();
    let per_sample: Vec<f64> = samples
        .iter()
        .map(|s| nll(&model.loc_predict(&s.window, s.target).unwrap(), s.truth).unwrap())
        .collect();
    let expect = per_sample.iter().sum::<f64>() / per_sample.len() as f64;

    let mut tape = Tape::new();
    let loss = batch_loss(model.layout(), &mut tape, model.params(), &samples).unwrap();
    let on_tape = tape.value(loss).data()[0];
    assert!((on_tape - expect).abs() <= 1e-12, "{on_tape} vs {expect}");
    assert!((mean_nll(&model, &samples).unwrap() - expect).abs() <= 1e-12);

    let (layout, mut params) = model.clone().into_parts();
    let refs: Vec<_> = samples.iter().collect();
    let accumulated = accumulate_batch_gradient(&layout, &mut params, &refs).unwrap();
    assert!((accumulated - expect).abs() <= 1e-12);

    // both gradient routes agree
    let single = tape_gradients(model.params(), |t, p| batch_loss(&layout, t, p, &samples)).unwrap();
    for (g, p) in single.iter().zip(params.iter()) {
        let diff = g.max_abs_diff(&p.grad).unwrap();
        assert!(diff <= 1e-12, "{}: {diff}", p.name);
    }
}

#[test]
fn training_is_deterministic() {
    let windows = walkers(12);
    let split = split_windows(windows, Vec::new(), "toy", 0.25, 9).unwrap();
    let cfg = TrainConfig { batch_size: 4, epochs: 3, seed: 5, ..TrainConfig::default() };
    let run = || train(LocationPredictorModel::new(small_config(), 2).unwrap(), &split, &cfg, &mut ()).unwrap();
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha, hb);
    assert_eq!(a.params(), b.params());
    // 9 training windows of 2 pedestrians in batches of 4
    assert_eq!(ha.steps, 3 * 5);
    assert!(ha.best_score.is_finite());
}

struct Recorder(Vec<EpochRecord>, f64);

impl TrainObserver for Recorder {
    fn now_seconds(&mut self) -> f64 {
        self.1 += 0.5;
        self.1
    }

    fn on_epoch(&mut self, record: &EpochRecord) {
        self.0.push(*record);
    }
}

#[test]
fn returned_snapshot_has_best_validation_score() {
    let samples = make_samples(&walkers(10), 8).unwrap();
    let (train_s, val_s) = samples.split_at(14);
    let cfg = TrainConfig { batch_size: 7, epochs: 6, lr: 5e-3, ..TrainConfig::default() };
    let mut rec = Recorder(Vec::new(), 0.0);
    let (model, history) =
        train_on_samples(LocationPredictorModel::new(small_config(), 1).unwrap(), train_s, val_s, &cfg, &mut rec).unwrap();
    assert_eq!(rec.0, history.epochs);
    assert_eq!(history.epochs.len(), 6);
    let best = history.epochs.iter().filter_map(|e| e.val_nll).fold(f64::INFINITY, f64::min);
    assert_eq!(history.best_score, best);
    assert_eq!(mean_nll(&model, val_s).unwrap(), best);
    assert!(history.epochs.windows(2).all(|w| w[1].seconds > w[0].seconds));
}

#[test]
fn step_limit_stops_mid_epoch() {
    let samples = make_samples(&walkers(8), 8).unwrap();
    let cfg = TrainConfig { batch_size: 2, epochs: 10, max_steps: Some(5), ..TrainConfig::default() };
    let (_, history) =
        train_on_samples(LocationPredictorModel::new(small_config(), 1).unwrap(), &samples, &[], &cfg, &mut ()).unwrap();
    assert_eq!(history.steps, 5);
    assert_eq!(history.epochs.len(), 1);
}

#[test]
fn stationary_pedestrian_trains_finitely() {
    let still = vec![State::new(2.0, -1.0); 9];
    let window = SceneWindow::from_trajectories(&[still], vec![0], 0, 8).unwrap();
    let samples = make_samples(&[window], 8).unwrap();
    assert_eq!(samples[0].truth, State::new(0.0, 0.0));
    let cfg = TrainConfig { batch_size: 1, epochs: 20, ..TrainConfig::default() };
    let (model, history) =
        train_on_samples(LocationPredictorModel::new(ModelConfig::default(), 3).unwrap(), &samples, &[], &cfg, &mut ())
            .unwrap();
    assert!(model.params().all_finite());
    assert!(history.epochs.iter().all(|e| e.train_nll.is_finite()));
}

#[test]
fn thousand_steps_on_random_data_stay_finite() {
    let samples = make_samples(&random_windows(7, 2, 3, 50.0), 8).unwrap();
    let cfg = TrainConfig { batch_size: samples.len(), epochs: 1000, seed: 1, ..TrainConfig::default() };
    let (model, history) =
        train_on_samples(LocationPredictorModel::new(ModelConfig::default(), 8).unwrap(), &samples, &[], &cfg, &mut ())
            .unwrap();
    assert_eq!(history.steps, 1000);
    assert!(model.params().all_finite());
    assert!(history.epochs.iter().all(|e| e.train_nll.is_finite()));
}
