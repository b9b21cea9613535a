//! Autoregressive rollout of the location predictor.
//!
//! At every future step each pedestrian is predicted from the same trailing
//! window of `obs_len` states, so the order in which pedestrians are visited
//! does not matter. Random draws come from a stream keyed by
//! `(seed, rollout, pedestrian id, step)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::SceneWindow;
use crate::error::{Error, Result};
use crate::geometry::{convert, State};
use crate::model::{GaussianParams, LocationPredictorModel};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RolloutMode {
    /// Draw each step from the predicted Gaussian.
    Sample,
    /// Take the predicted mean (deterministic).
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutConfig {
    pub mode: RolloutMode,
    pub rollouts: usize,
    pub seed: u64,
    pub horizon: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            mode: RolloutMode::Sample,
            rollouts: 20,
            seed: 0,
            horizon: crate::dataset::PRED_LEN,
        }
    }
}

/// Anything that maps an egocentric window to a one-step Gaussian.
pub trait LocationModel {
    fn obs_len(&self) -> usize;

    fn predict_location(&self, window: &SceneWindow, m: usize) -> Result<GaussianParams>;
}

impl LocationModel for LocationPredictorModel {
    fn obs_len(&self) -> usize {
        self.config().obs_len
    }

    fn predict_location(&self, window: &SceneWindow, m: usize) -> Result<GaussianParams> {
        self.loc_predict(window, m)
    }
}

impl<T: LocationModel + ?Sized> LocationModel for &T {
    fn obs_len(&self) -> usize {
        (**self).obs_len()
    }

    fn predict_location(&self, window: &SceneWindow, m: usize) -> Result<GaussianParams> {
        (**self).predict_location(window, m)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator for one `(rollout, pedestrian, step)` draw.
pub fn location_stream(seed: u64, rollout: u64, ped_id: i64, step: u64) -> ChaCha8Rng {
    let mut key = splitmix64(seed);
    for word in [rollout, ped_id as u64, step] {
        key = splitmix64(key ^ word);
    }
    ChaCha8Rng::seed_from_u64(key)
}

/// `mu + L z` with `L` the Cholesky factor of `sigma` and `z` two standard
/// normal draws.
pub fn sample_location(g: &GaussianParams, rng: &mut ChaCha8Rng) -> State {
    let z1: f64 = StandardNormal.sample(rng);
    let z2: f64 = StandardNormal.sample(rng);
    let l = g.cholesky();
    State::new(g.mu.x + l[0][0] * z1, g.mu.y + l[1][0] * z1 + l[1][1] * z2)
}

/// Predicts `horizon` steps for every pedestrian, `rollouts` times. The
/// result has shape `[K, M, horizon, 2]` in world coordinates.
pub fn rollout<M: LocationModel>(model: &M, obs: &SceneWindow, cfg: &RolloutConfig) -> Result<Tensor> {
    let obs_len = model.obs_len();
    if obs.len() < obs_len {
        return Err(Error::InvalidLength {
            op: "rollout",
            len: obs.len(),
            required: obs_len,
        });
    }
    if cfg.rollouts == 0 {
        return Err(Error::Config("rollout count must be at least 1".into()));
    }
    let peds = obs.num_peds();
    let horizon = cfg.horizon;
    let mut out = Tensor::zeros(&[cfg.rollouts, peds, horizon, 2]);
    if horizon == 0 {
        return Ok(out);
    }
    let history = (0..peds)
        .map(|m| obs.trajectory(m).map(|mut t| {
            t.truncate(obs_len);
            t
        }))
        .collect::<Result<Vec<_>>>()?;
    let mut next = vec![State::default(); peds];

    for k in 0..cfg.rollouts {
        let mut paths = history.clone();
        for step in 0..horizon {
            let recent: Vec<Vec<State>> = paths.iter().map(|p| p[p.len() - obs_len..].to_vec()).collect();
            let window = SceneWindow::from_trajectories(&recent, obs.ped_ids().to_vec(), obs.start_frame(), obs_len)?;
            for (m, slot) in next.iter_mut().enumerate() {
                let (local, frame) = convert(&window, m)?;
                let g = model.predict_location(&local, m)?;
                let s = match cfg.mode {
                    RolloutMode::Mean => g.mu,
                    RolloutMode::Sample => {
                        let mut rng = location_stream(cfg.seed, k as u64, obs.ped_ids()[m], step as u64);
                        sample_location(&g, &mut rng)
                    }
                };
                *slot = frame.to_world(s);
            }
            for (m, s) in next.iter().enumerate() {
                paths[m].push(*s);
                let at = ((k * peds + m) * horizon + step) * 2;
                out.data_mut()[at] = s.x;
                out.data_mut()[at + 1] = s.y;
            }
        }
    }
    Ok(out)
}
