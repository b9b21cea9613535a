//! ADE/FDE with best-of-K selection.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::SceneWindow;
use crate::error::{Error, Result};
use crate::geometry::{linear_extrapolate, State};
use crate::predictor::{rollout, LocationModel, RolloutConfig, RolloutMode};
use crate::tensor::Tensor;

/// Mean and final Euclidean error between two `[T, 2]` trajectories.
pub fn displacement_metrics(pred: &Tensor, truth: &Tensor) -> Result<(f64, f64)> {
    if pred.shape() != truth.shape() || pred.ndim() != 2 || pred.shape()[1] != 2 {
        return Err(Error::Dimension {
            op: "displacement_metrics",
            left: pred.shape().to_vec(),
            right: truth.shape().to_vec(),
        });
    }
    let steps = pred.shape()[0];
    if steps == 0 {
        return Err(Error::InvalidLength {
            op: "displacement_metrics",
            len: 0,
            required: 1,
        });
    }
    Ok(displacement_of(pred.data(), truth.data()))
}

fn displacement_of(pred: &[f64], truth: &[f64]) -> (f64, f64) {
    let errors: Vec<f64> = pred
        .chunks_exact(2)
        .zip(truth.chunks_exact(2))
        .map(|(p, t)| libm::hypot(p[0] - t[0], p[1] - t[1]))
        .collect();
    let ade = errors.iter().sum::<f64>() / errors.len() as f64;
    (ade, errors[errors.len() - 1])
}

/// Produces `[K, M, horizon, 2]` world-frame trajectories from an
/// observation.
pub trait TrajectoryPredictor {
    fn predict(&self, obs: &SceneWindow, rollouts: usize, seed: u64, horizon: usize) -> Result<Tensor>;
}

/// The learned model driven through [`rollout`].
pub struct PecPredictor<M> {
    pub model: M,
    pub mode: RolloutMode,
}

impl<M: LocationModel> TrajectoryPredictor for PecPredictor<M> {
    fn predict(&self, obs: &SceneWindow, rollouts: usize, seed: u64, horizon: usize) -> Result<Tensor> {
        rollout(
            &self.model,
            obs,
            &RolloutConfig {
                mode: self.mode,
                rollouts,
                seed,
                horizon,
            },
        )
    }
}

/// Least-squares constant-velocity baseline; every rollout is identical.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinearBaseline;

impl TrajectoryPredictor for LinearBaseline {
    fn predict(&self, obs: &SceneWindow, rollouts: usize, _seed: u64, horizon: usize) -> Result<Tensor> {
        let peds = obs.num_peds();
        let mut data = Vec::with_capacity(rollouts * peds * horizon * 2);
        let mut single = Vec::with_capacity(peds * horizon * 2);
        for m in 0..peds {
            let mut traj = obs.trajectory(m)?;
            traj.truncate(obs.obs_len());
            for s in linear_extrapolate(&traj, horizon)? {
                single.extend([s.x, s.y]);
            }
        }
        for _ in 0..rollouts {
            data.extend_from_slice(&single);
        }
        Tensor::new(&[rollouts, peds, horizon, 2], data)
    }
}

/// How FDE is picked among the K rollouts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FdeSelection {
    /// FDE of the rollout with the smallest ADE.
    #[default]
    SameTrajectory,
    /// Smallest FDE over all rollouts, chosen independently of ADE.
    IndependentMinimum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowMetrics {
    pub start_frame: i64,
    pub num_pedestrians: usize,
    /// Per pedestrian `(ade, fde)` after best-of-K selection.
    pub pedestrians: Vec<(f64, f64)>,
}

impl WindowMetrics {
    pub fn ade(&self) -> f64 {
        self.pedestrians.iter().map(|p| p.0).sum::<f64>() / self.num_pedestrians as f64
    }

    pub fn fde(&self) -> f64 {
        self.pedestrians.iter().map(|p| p.1).sum::<f64>() / self.num_pedestrians as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub set_name: String,
    pub ade: f64,
    pub fde: f64,
    pub rollouts: usize,
    pub num_windows: usize,
    pub num_pedestrians: usize,
    pub seed: u64,
    pub windows: Vec<WindowMetrics>,
}

impl MetricsReport {
    pub fn summary(&self) -> String {
        format!(
            "ADE/FDE: {:.2} / {:.2} (K={}, set={})",
            self.ade, self.fde, self.rollouts, self.set_name
        )
    }

    /// Pedestrian-weighted combination of per-set reports.
    pub fn aggregate(name: &str, reports: &[MetricsReport]) -> Result<MetricsReport> {
        let first = reports
            .first()
            .ok_or_else(|| Error::InvalidInput("no reports to aggregate".into()))?;
        let windows: Vec<WindowMetrics> = reports.iter().flat_map(|r| r.windows.iter().cloned()).collect();
        Ok(from_windows(name.into(), first.rollouts, first.seed, windows))
    }
}

fn from_windows(set_name: String, rollouts: usize, seed: u64, windows: Vec<WindowMetrics>) -> MetricsReport {
    let num_pedestrians: usize = windows.iter().map(|w| w.num_pedestrians).sum();
    let (mut ade, mut fde) = (0.0, 0.0);
    for p in windows.iter().flat_map(|w| &w.pedestrians) {
        ade += p.0;
        fde += p.1;
    }
    let denom = num_pedestrians.max(1) as f64;
    MetricsReport {
        set_name,
        ade: ade / denom,
        fde: fde / denom,
        rollouts,
        num_windows: windows.len(),
        num_pedestrians,
        seed,
        windows,
    }
}

/// Seed used for window `index` of an evaluation run.
pub fn window_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Best-of-K ADE/FDE for one window.
pub fn evaluate_window<P: TrajectoryPredictor + ?Sized>(
    predictor: &P,
    window: &SceneWindow,
    rollouts: usize,
    seed: u64,
    selection: FdeSelection,
) -> Result<WindowMetrics> {
    if rollouts == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let obs_len = window.obs_len();
    let horizon = window.pred_len();
    if horizon == 0 {
        return Err(Error::InvalidLength {
            op: "evaluate",
            len: window.len(),
            required: obs_len + 1,
        });
    }
    let pred = predictor.predict(&window.observed(), rollouts, seed, horizon)?;
    let peds = window.num_peds();
    if pred.shape() != [rollouts, peds, horizon, 2] {
        return Err(Error::Dimension {
            op: "evaluate",
            left: pred.shape().to_vec(),
            right: vec![rollouts, peds, horizon, 2],
        });
    }
    let mut pedestrians = Vec::with_capacity(peds);
    for m in 0..peds {
        let truth: Vec<f64> = (obs_len..window.len())
            .flat_map(|t| {
                let State { x, y } = window.state(m, t);
                [x, y]
            })
            .collect();
        let mut best: Option<(f64, f64)> = None;
        let mut best_fde = f64::INFINITY;
        for k in 0..rollouts {
            let at = (k * peds + m) * horizon * 2;
            let (ade, fde) = displacement_of(&pred.data()[at..at + horizon * 2], &truth);
            if best.is_none_or(|(b, _)| ade < b) {
                best = Some((ade, fde));
            }
            best_fde = best_fde.min(fde);
        }
        let (ade, fde) = best.expect("at least one rollout");
        pedestrians.push(match selection {
            FdeSelection::SameTrajectory => (ade, fde),
            FdeSelection::IndependentMinimum => (ade, best_fde),
        });
    }
    Ok(WindowMetrics {
        start_frame: window.start_frame(),
        num_pedestrians: peds,
        pedestrians,
    })
}

/// Runs `predictor` on every window and averages over all pedestrians.
pub fn evaluate<P: TrajectoryPredictor + ?Sized>(
    predictor: &P,
    set_name: &str,
    windows: &[SceneWindow],
    rollouts: usize,
    seed: u64,
    selection: FdeSelection,
) -> Result<MetricsReport> {
    if rollouts == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let per_window = windows
        .iter()
        .enumerate()
        .map(|(i, w)| evaluate_window(predictor, w, rollouts, window_seed(seed, i), selection))
        .collect::<Result<Vec<_>>>()?;
    Ok(from_windows(set_name.into(), rollouts, seed, per_window))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[(f64, f64)]) -> Tensor {
        Tensor::new(&[points.len(), 2], points.iter().flat_map(|&(x, y)| [x, y]).collect()).unwrap()
    }

    #[test]
    fn metric_examples() {
        let truth = line(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        assert_eq!(displacement_metrics(&truth, &truth).unwrap(), (0.0, 0.0));
        let shifted = line(&[(0.0, 0.3), (1.0, 0.3), (2.0, 0.3)]);
        let (ade, fde) = displacement_metrics(&shifted, &truth).unwrap();
        assert!((ade - 0.3).abs() < 1e-15 && (fde - 0.3).abs() < 1e-15);
        let growing = line(&[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)]);
        assert_eq!(displacement_metrics(&growing, &truth).unwrap(), (2.0, 3.0));
        assert!(displacement_metrics(&growing, &line(&[(0.0, 0.0)])).is_err());
    }

    fn linear_scene() -> SceneWindow {
        let trajectories: Vec<Vec<State>> = (0..3)
            .map(|p| (0..20).map(|t| State::new(0.4 * t as f64 - p as f64, 0.1 * t as f64 + p as f64)).collect())
            .collect();
        SceneWindow::from_trajectories(&trajectories, vec![1, 2, 3], 0, 8).unwrap()
    }

    #[test]
    fn linear_baseline_is_exact_on_linear_scene() {
        let report = evaluate(&LinearBaseline, "toy", &[linear_scene()], 1, 0, FdeSelection::default()).unwrap();
        assert!(report.ade < 1e-9 && report.fde < 1e-9);
        assert_eq!(report.num_pedestrians, 3);
        assert_eq!(report.summary(), "ADE/FDE: 0.00 / 0.00 (K=1, set=toy)");
    }

    #[test]
    fn zero_rollouts_is_a_config_error() {
        assert!(matches!(
            evaluate(&LinearBaseline, "toy", &[linear_scene()], 0, 0, FdeSelection::default()),
            Err(Error::Config(_))
        ));
    }

    struct Fixed(Tensor);

    impl TrajectoryPredictor for Fixed {
        fn predict(&self, _: &SceneWindow, _: usize, _: u64, _: usize) -> Result<Tensor> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn fde_selection_modes() {
        // one pedestrian, two steps, truth at (0,0) and (0,0)
        let window = SceneWindow::from_trajectories(&[vec![State::default(); 4]], vec![0], 0, 2).unwrap();
        // rollout 0: errors 1, 3 (ade 2); rollout 1: errors 2.5, 2.5 (ade 2.5)
        let pred = Tensor::new(&[2, 1, 2, 2], vec![1.0, 0.0, 3.0, 0.0, 2.5, 0.0, 2.5, 0.0]).unwrap();
        let p = Fixed(pred);
        let same = evaluate_window(&p, &window, 2, 0, FdeSelection::SameTrajectory).unwrap();
        assert_eq!(same.pedestrians, vec![(2.0, 3.0)]);
        let indep = evaluate_window(&p, &window, 2, 0, FdeSelection::IndependentMinimum).unwrap();
        assert_eq!(indep.pedestrians, vec![(2.0, 2.5)]);
    }

    #[test]
    fn aggregate_weights_pedestrians() {
        let a = WindowMetrics { start_frame: 0, num_pedestrians: 1, pedestrians: vec![(1.0, 2.0)] };
        let b = WindowMetrics { start_frame: 1, num_pedestrians: 3, pedestrians: vec![(2.0, 2.0); 3] };
        let r1 = from_windows("a".into(), 1, 0, vec![a]);
        let r2 = from_windows("b".into(), 1, 0, vec![b]);
        let all = MetricsReport::aggregate("all", &[r1, r2]).unwrap();
        assert!((all.ade - 7.0 / 4.0).abs() < 1e-15);
        assert_eq!(all.num_windows, 2);
    }
}
