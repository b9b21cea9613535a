//! Bivariate Gaussian built from the five raw network outputs.
//!
//! `exp(a)` and `exp(b)` are read as standard deviations and `tanh(c)` as the
//! correlation, giving `Sigma = [[sx^2, r sx sy], [r sx sy, sy^2]]`, which is
//! positive definite for every finite input.

use core::f64::consts::PI;

use crate::geometry::State;

/// Largest admissible |correlation|.
pub const RHO_LIMIT: f64 = 1.0 - 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawHeadOutput {
    pub x: f64,
    pub y: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl RawHeadOutput {
    pub fn from_slice(raw: &[f64; 5]) -> Self {
        Self {
            x: raw[0],
            y: raw[1],
            a: raw[2],
            b: raw[3],
            c: raw[4],
        }
    }
}

/// Mean and covariance of a one-step location, in the target's frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianParams {
    pub mu: State,
    pub sigma: [[f64; 2]; 2],
}

impl GaussianParams {
    pub fn det(&self) -> f64 {
        self.sigma[0][0] * self.sigma[1][1] - self.sigma[0][1] * self.sigma[1][0]
    }

    pub fn is_valid(&self) -> bool {
        self.sigma[0][1] == self.sigma[1][0]
            && self.sigma[0][0] > 0.0
            && self.sigma[1][1] > 0.0
            && self.det() > 0.0
    }

    /// Lower-triangular `L` with `L L^T = sigma`.
    pub fn cholesky(&self) -> [[f64; 2]; 2] {
        let l11 = libm::sqrt(self.sigma[0][0]);
        let l21 = self.sigma[1][0] / l11;
        let l22 = libm::sqrt((self.sigma[1][1] - l21 * l21).max(0.0));
        [[l11, 0.0], [l21, l22]]
    }
}

fn correlation(c: f64) -> (f64, bool) {
    let t = libm::tanh(c);
    if t > RHO_LIMIT {
        (RHO_LIMIT, true)
    } else if t < -RHO_LIMIT {
        (-RHO_LIMIT, true)
    } else {
        (t, false)
    }
}

pub fn gaussian_head(raw: &RawHeadOutput) -> GaussianParams {
    let sx = libm::exp(raw.a);
    let sy = libm::exp(raw.b);
    let (rho, _) = correlation(raw.c);
    let cov = rho * sx * sy;
    GaussianParams {
        mu: State::new(raw.x, raw.y),
        sigma: [[sx * sx, cov], [cov, sy * sy]],
    }
}

/// NLL of `target` in the raw parameterisation and its gradient with respect
/// to `[x, y, a, b, c]`.
pub(crate) fn nll_with_grad(raw: &[f64; 5], target: [f64; 2]) -> (f64, [f64; 5]) {
    let [x, y, a, b, c] = *raw;
    let sx = libm::exp(a);
    let sy = libm::exp(b);
    let (rho, clamped) = correlation(c);
    let q = 1.0 - rho * rho;
    let dx = (target[0] - x) / sx;
    let dy = (target[1] - y) / sy;
    let z = dx * dx - 2.0 * rho * dx * dy + dy * dy;
    let loss = libm::log(2.0 * PI) + a + b + 0.5 * libm::log(q) + z / (2.0 * q);

    let d_rho = -rho / q - dx * dy / q + z * rho / (q * q);
    let drho_dc = if clamped { 0.0 } else { 1.0 - rho * rho };
    let grad = [
        -(dx - rho * dy) / (q * sx),
        -(dy - rho * dx) / (q * sy),
        1.0 - (dx * dx - rho * dx * dy) / q,
        1.0 - (dy * dy - rho * dx * dy) / q,
        d_rho * drho_dc,
    ];
    (loss, grad)
}
