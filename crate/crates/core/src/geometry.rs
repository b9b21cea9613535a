//! Egocentric frames and the constant-velocity baseline.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::dataset::SceneWindow;
use crate::error::{Error, Result};

/// A 2-D location in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct State {
    pub x: f64,
    pub y: f64,
}

impl State {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: State) -> f64 {
        libm::hypot(self.x - other.x, self.y - other.y)
    }
}

/// Egocentric frame: `origin` in world coordinates, `theta` the world angle
/// of the local +x axis, in `(-pi, pi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub origin: State,
    pub theta: f64,
}

impl Frame {
    pub fn new(origin: State, theta: f64) -> Self {
        Self {
            origin,
            theta: normalize_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self::new(State::default(), 0.0)
    }

    /// World to local: `R(-theta) (s - origin)`.
    pub fn to_local(&self, s: State) -> State {
        let (sin, cos) = libm::sincos(self.theta);
        let dx = s.x - self.origin.x;
        let dy = s.y - self.origin.y;
        State::new(cos * dx + sin * dy, -sin * dx + cos * dy)
    }

    /// Local to world: `R(theta) p + origin`.
    pub fn to_world(&self, p: State) -> State {
        let (sin, cos) = libm::sincos(self.theta);
        State::new(
            cos * p.x - sin * p.y + self.origin.x,
            sin * p.x + cos * p.y + self.origin.y,
        )
    }
}

fn normalize_angle(theta: f64) -> f64 {
    let mut a = libm::remainder(theta, 2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Direction of the most recent nonzero displacement, or 0 for a
/// trajectory that never moves.
pub fn heading_of(traj: &[State]) -> Result<f64> {
    if traj.len() < 2 {
        return Err(Error::InvalidLength {
            op: "heading_of",
            len: traj.len(),
            required: 2,
        });
    }
    let heading = traj
        .windows(2)
        .rev()
        .map(|w| (w[1].x - w[0].x, w[1].y - w[0].y))
        .find(|&(dx, dy)| dx != 0.0 || dy != 0.0)
        .map_or(0.0, |(dx, dy)| libm::atan2(dy, dx));
    Ok(normalize_angle(heading))
}

/// Frame of pedestrian `m` at the window's last timestep.
pub fn egocentric_frame(window: &SceneWindow, m: usize) -> Result<Frame> {
    let traj = window.trajectory(m)?;
    let theta = heading_of(&traj)?;
    Ok(Frame::new(traj[traj.len() - 1], theta))
}

/// Re-expresses every state of the window in pedestrian `m`'s frame.
pub fn convert(window: &SceneWindow, m: usize) -> Result<(SceneWindow, Frame)> {
    let frame = egocentric_frame(window, m)?;
    Ok((window.map_states(|s| frame.to_local(s)), frame))
}

pub fn convert_back(point: State, frame: &Frame) -> State {
    frame.to_world(point)
}

/// Constant-velocity continuation from the last observation, with the
/// velocity taken as the least-squares slope of x(t) and y(t).
pub fn linear_extrapolate(obs: &[State], steps: usize) -> Result<Vec<State>> {
    let n = obs.len();
    if n < 2 {
        return Err(Error::InvalidLength {
            op: "linear_extrapolate",
            len: n,
            required: 2,
        });
    }
    let t_mean = (n - 1) as f64 / 2.0;
    let x_mean = obs.iter().map(|s| s.x).sum::<f64>() / n as f64;
    let y_mean = obs.iter().map(|s| s.y).sum::<f64>() / n as f64;
    let (mut sxx, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (t, s) in obs.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxx += dt * dt;
        sx += dt * (s.x - x_mean);
        sy += dt * (s.y - y_mean);
    }
    let (vx, vy) = (sx / sxx, sy / sxx);
    let last = obs[n - 1];
    Ok((1..=steps)
        .map(|k| State::new(last.x + vx * k as f64, last.y + vy * k as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn close(a: State, b: State, tol: f64) -> bool {
        (a.x - b.x).abs() < tol && (a.y - b.y).abs() < tol
    }

    #[test]
    fn headings() {
        let h = |pts: &[(f64, f64)]| {
            let traj: Vec<State> = pts.iter().map(|&(x, y)| State::new(x, y)).collect();
            heading_of(&traj).unwrap()
        };
        assert_eq!(h(&[(0.0, 0.0), (1.0, 0.0)]), 0.0);
        assert!((h(&[(1.0, 0.0), (1.0, 1.0)]) - PI / 2.0).abs() < 1e-15);
        assert_eq!(h(&[(3.0, 3.0), (3.0, 3.0)]), 0.0);
        // falls back to an earlier displacement
        assert!((h(&[(0.0, 0.0), (0.0, -1.0), (0.0, -1.0)]) + PI / 2.0).abs() < 1e-15);
        // heading straight along -x is +pi, not -pi
        assert_eq!(h(&[(0.0, 0.0), (-1.0, -0.0)]), PI);
        assert!(heading_of(&[State::default()]).is_err());
    }

    #[test]
    fn convert_rotates_context_into_target_frame() {
        let target = vec![State::new(1.0, 0.0), State::new(1.0, 1.0)];
        let other = vec![State::new(0.0, 0.0), State::new(1.0, 2.0)];
        let window = SceneWindow::from_trajectories(&[target, other], vec![1, 2], 0, 2).unwrap();
        let (local, frame) = convert(&window, 0).unwrap();
        assert!(close(local.state(0, 1), State::default(), 1e-15));
        // explicit R(-pi/2) * ((1,2) - (1,1))
        let (s, c) = (frame.theta.sin(), frame.theta.cos());
        let expect = State::new(c * 0.0 + s * 1.0, -s * 0.0 + c * 1.0);
        assert!(close(local.state(1, 1), expect, 1e-12));
        assert!(close(local.state(1, 1), State::new(1.0, 0.0), 1e-12));
    }

    #[test]
    fn identity_frame_leaves_window_unchanged() {
        let target = vec![State::new(-1.0, 0.0), State::new(0.0, 0.0)];
        let other = vec![State::new(2.0, 3.0), State::new(2.5, 3.5)];
        let window = SceneWindow::from_trajectories(&[target, other], vec![1, 2], 0, 2).unwrap();
        let (local, frame) = convert(&window, 0).unwrap();
        assert_eq!(frame, Frame::identity());
        assert_eq!(local, window);
    }

    #[test]
    fn convert_back_examples() {
        let frame = Frame::new(State::new(1.0, 1.0), PI / 2.0);
        assert_eq!(convert_back(State::default(), &frame), frame.origin);
        assert!(close(convert_back(State::new(1.0, 0.0), &frame), State::new(1.0, 2.0), 1e-12));
    }

    #[test]
    fn convert_rejects_bad_index() {
        let window =
            SceneWindow::from_trajectories(&[vec![State::default(); 3]], vec![7], 0, 3).unwrap();
        assert!(matches!(convert(&window, 1), Err(Error::Index { index: 1, len: 1 })));
    }

    #[test]
    fn linear_baseline() {
        let out = linear_extrapolate(&[State::new(0.0, 0.0), State::new(1.0, 0.0)], 2).unwrap();
        assert_eq!(out, vec![State::new(2.0, 0.0), State::new(3.0, 0.0)]);
        assert!(linear_extrapolate(&[State::default(); 2], 0).unwrap().is_empty());
        let line: Vec<State> = (0..8).map(|t| State::new(t as f64, 2.0 * t as f64)).collect();
        let out = linear_extrapolate(&line, 3).unwrap();
        for (k, s) in out.iter().enumerate() {
            let t = (8 + k) as f64;
            assert!(close(*s, State::new(t, 2.0 * t), 1e-12));
        }
        assert!(linear_extrapolate(&[State::default()], 3).is_err());
    }
}
