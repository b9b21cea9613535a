//! One-step maximum-likelihood training of the location predictor.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, AdamHyper, ParamSet, Tape, Var};
use crate::dataset::{DatasetSplit, SceneWindow};
use crate::error::{Error, Result};
use crate::geometry::{convert, State};
use crate::model::{GaussianParams, LocationPredictorModel, ModelLayout};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Validate every this many epochs (the final epoch is always validated).
    pub val_every: usize,
    /// Stop after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            epochs: 150,
            seed: 0,
            val_every: 1,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.val_every == 0 {
            return Err(Error::Config(
                "batch_size, epochs and val_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: Option<f64>,
    /// Elapsed since training started, as reported by the observer.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
    pub best_epoch: usize,
    /// Selection score of the returned snapshot: validation NLL, or the
    /// epoch's training NLL when there is no validation data.
    pub best_score: f64,
}

/// Hooks into the training loop; `()` ignores everything.
pub trait TrainObserver {
    fn now_seconds(&mut self) -> f64 {
        0.0
    }

    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

impl TrainObserver for () {}

/// One (egocentric observation, target, next position) triple.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub window: SceneWindow,
    pub target: usize,
    pub truth: State,
}

/// Every pedestrian of every window becomes a sample: the first `obs_len`
/// steps are converted into its frame and step `obs_len` is the label.
pub fn make_samples(windows: &[SceneWindow], obs_len: usize) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for w in windows {
        if w.len() <= obs_len {
            return Err(Error::InvalidLength {
                op: "training window",
                len: w.len(),
                required: obs_len + 1,
            });
        }
        let obs = w.slice(0, obs_len)?;
        for m in 0..w.num_peds() {
            let (local, frame) = convert(&obs, m)?;
            samples.push(Sample {
                window: local,
                target: m,
                truth: frame.to_local(w.state(m, obs_len)),
            });
        }
    }
    Ok(samples)
}

/// `-ln N(s; mu, sigma)` evaluated from the covariance matrix directly.
pub fn nll(g: &GaussianParams, s: State) -> Result<f64> {
    let det = g.det();
    if !g.is_valid() {
        return Err(Error::Contract(format!(
            "covariance {:?} is not positive definite",
            g.sigma
        )));
    }
    let dx = s.x - g.mu.x;
    let dy = s.y - g.mu.y;
    let [[sxx, sxy], [_, syy]] = g.sigma;
    let maha = (syy * dx * dx - 2.0 * sxy * dx * dy + sxx * dy * dy) / det;
    Ok(libm::log(2.0 * PI) + 0.5 * libm::log(det) + 0.5 * maha)
}

/// NLL node of one sample.
pub fn sample_loss<'p>(
    layout: &ModelLayout,
    tape: &mut Tape<'p>,
    params: &'p ParamSet,
    sample: &Sample,
) -> Result<Var> {
    let raw = layout.forward_raw(tape, params, &sample.window, sample.target)?;
    tape.gaussian_nll(raw, [sample.truth.x, sample.truth.y])
}

/// Mean NLL over a batch, recorded on one tape.
pub fn batch_loss<'p>(
    layout: &ModelLayout,
    tape: &mut Tape<'p>,
    params: &'p ParamSet,
    samples: &[Sample],
) -> Result<Var> {
    let terms = samples
        .iter()
        .map(|s| sample_loss(layout, tape, params, s))
        .collect::<Result<Vec<_>>>()?;
    tape.mean(&terms)
}

/// Forward-only mean NLL.
pub fn mean_nll(model: &LocationPredictorModel, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("mean NLL of an empty sample set".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let mut tape = Tape::new();
        let loss = sample_loss(model.layout(), &mut tape, model.params(), s)?;
        total += tape.value(loss).data()[0];
    }
    Ok(total / samples.len() as f64)
}

/// Accumulates the gradient of the batch-mean NLL into `params` and returns
/// the batch loss. Samples are processed one tape at a time in index order.
pub fn accumulate_batch_gradient(
    layout: &ModelLayout,
    params: &mut ParamSet,
    batch: &[&Sample],
) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for sample in batch {
        let grads = {
            let mut tape = Tape::new();
            let loss = sample_loss(layout, &mut tape, params, sample)?;
            total += tape.value(loss).data()[0];
            tape.backward(loss)?
        };
        for (id, g) in grads.param_grads() {
            let acc = params.get_mut(id).grad.data_mut();
            for (a, v) in acc.iter_mut().zip(g.data()) {
                *a += scale * v;
            }
        }
    }
    Ok(total * scale)
}

/// Trains with Adam on minibatch-mean NLL and returns the snapshot with the
/// best validation NLL.
pub fn train(
    model: LocationPredictorModel,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(LocationPredictorModel, TrainingHistory)> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let obs_len = model.config().obs_len;
    let train_samples = make_samples(&split.train, obs_len)?;
    let val_samples = make_samples(&split.val, obs_len)?;
    train_on_samples(model, &train_samples, &val_samples, cfg, observer)
}

pub fn train_on_samples(
    model: LocationPredictorModel,
    train_samples: &[Sample],
    val_samples: &[Sample],
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(LocationPredictorModel, TrainingHistory)> {
    cfg.validate()?;
    if train_samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let config = model.config().clone();
    let (layout, mut params) = model.into_parts();
    params.zero_grads();
    let mut adam = Adam::new(
        &params,
        AdamHyper {
            lr: cfg.lr,
            ..AdamHyper::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut history = TrainingHistory {
        best_score: f64::INFINITY,
        ..TrainingHistory::default()
    };
    let mut best = params.clone();
    let start = observer.now_seconds();

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut stop = false;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_samples[i]).collect();
            let loss = accumulate_batch_gradient(&layout, &mut params, &batch)?;
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
            adam.step(&mut params)?;
            history.steps += 1;
            if !params.all_finite() {
                return Err(Error::NonFinite(format!(
                    "parameters after step {} (epoch {epoch})",
                    history.steps
                )));
            }
            if cfg.max_steps.is_some_and(|m| history.steps >= m) {
                stop = true;
                break;
            }
        }
        let train_nll = loss_sum / seen as f64;
        let validate = stop || epoch % cfg.val_every == 0 || epoch == cfg.epochs;
        let val_nll = if validate && !val_samples.is_empty() {
            let snapshot = LocationPredictorModel::from_params(config.clone(), params.clone())?;
            Some(mean_nll(&snapshot, val_samples)?)
        } else {
            None
        };
        let score = if val_samples.is_empty() { Some(train_nll) } else { val_nll };
        if let Some(score) = score {
            if score < history.best_score {
                history.best_score = score;
                history.best_epoch = epoch;
                best.clone_from(&params);
            }
        }
        let record = EpochRecord {
            epoch,
            train_nll,
            val_nll,
            seconds: observer.now_seconds() - start,
        };
        observer.on_epoch(&record);
        history.epochs.push(record);
        if stop {
            break 'epochs;
        }
    }
    best.zero_grads();
    Ok((LocationPredictorModel::from_params(config, best)?, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gaussian_head, RawHeadOutput};

    #[test]
    fn nll_closed_forms() {
        let g = gaussian_head(&RawHeadOutput { x: 1.0, y: -1.0, a: 0.0, b: 0.0, c: 0.0 });
        let ln2pi = (2.0 * PI).ln();
        assert!((nll(&g, State::new(1.0, -1.0)).unwrap() - ln2pi).abs() < 1e-15);
        assert!((ln2pi - 1.8379).abs() < 1e-4);
        let d = 0.7f64;
        let off = nll(&g, State::new(1.0 + d, -1.0)).unwrap();
        assert!((off - (ln2pi + d * d / 2.0)).abs() < 1e-14);

        let g = GaussianParams {
            mu: State::new(0.0, 0.0),
            sigma: [[4.0, 3.0], [3.0, 9.0]],
        };
        let v = nll(&g, State::new(0.0, 0.0)).unwrap();
        assert!((v - (ln2pi + 0.5 * 27f64.ln())).abs() < 1e-14);
        assert!((v - 3.4858).abs() < 1e-4);
    }

    #[test]
    fn nll_rejects_singular_covariance() {
        let g = GaussianParams {
            mu: State::new(0.0, 0.0),
            sigma: [[1.0, 1.0], [1.0, 1.0]],
        };
        assert!(matches!(nll(&g, State::new(0.0, 0.0)), Err(Error::Contract(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = TrainConfig { lr: -1.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
