//! Pattern extraction convolution.
//!
//! For a trajectory `phi` of shape `[T, 2]` and `N` patterns of `L` states,
//!
//! ```text
//! psi[t, j] = lambda[j] * ln(EPS + sum_k |phi[t + k] - P[j, k]|) + b[j]
//! ```
//!
//! so a segment lying on top of a pattern scores high (for negative
//! `lambda`) regardless of how far from the origin both sit, unlike a
//! dot-product convolution.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::State;
use crate::tensor::Tensor;

/// Offset inside the logarithm, keeping `psi` finite when a segment
/// coincides with a pattern.
pub const PEC_EPS: f64 = 1e-8;

/// Motion patterns with their per-pattern scale and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternSet {
    /// `[N, L, 2]`
    pub patterns: Tensor,
    /// `[N]`
    pub lambda: Tensor,
    /// `[N]`
    pub bias: Tensor,
}

impl PatternSet {
    pub fn new(patterns: Tensor, lambda: Tensor, bias: Tensor) -> Result<Self> {
        check_shapes(&patterns, &lambda, &bias)?;
        if !(patterns.is_finite() && lambda.is_finite() && bias.is_finite()) {
            return Err(Error::NonFinite("pattern set".into()));
        }
        Ok(Self {
            patterns,
            lambda,
            bias,
        })
    }

    pub fn num_patterns(&self) -> usize {
        self.patterns.shape()[0]
    }

    pub fn pattern_len(&self) -> usize {
        self.patterns.shape()[1]
    }

    pub fn pattern(&self, j: usize) -> Vec<State> {
        let len = self.pattern_len();
        let d = self.patterns.data();
        (0..len)
            .map(|k| {
                let at = (j * len + k) * 2;
                State::new(d[at], d[at + 1])
            })
            .collect()
    }
}

fn check_shapes(patterns: &Tensor, lambda: &Tensor, bias: &Tensor) -> Result<()> {
    let ps = patterns.shape();
    if ps.len() != 3 || ps[2] != 2 || ps[0] == 0 || ps[1] == 0 {
        return Err(Error::Dimension {
            op: "pec patterns",
            left: ps.to_vec(),
            right: vec![0, 0, 2],
        });
    }
    for t in [lambda, bias] {
        if t.shape() != [ps[0]] {
            return Err(Error::Dimension {
                op: "pec",
                left: ps.to_vec(),
                right: t.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Forward-only PEC over a `[T, 2]` trajectory.
pub fn pec(phi: &Tensor, set: &PatternSet) -> Result<Tensor> {
    forward(phi, &set.patterns, &set.lambda, &set.bias).map(|(psi, _)| psi)
}

/// Returns `psi` and the raw distance sums needed by [`backward`].
pub(crate) fn forward(
    phi: &Tensor,
    patterns: &Tensor,
    lambda: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, Vec<f64>)> {
    check_shapes(patterns, lambda, bias)?;
    let fs = phi.shape();
    if fs.len() != 2 || fs[1] != 2 {
        return Err(Error::Dimension {
            op: "pec",
            left: fs.to_vec(),
            right: vec![fs.first().copied().unwrap_or(0), 2],
        });
    }
    let (n, len) = (patterns.shape()[0], patterns.shape()[1]);
    let steps = fs[0];
    if steps < len {
        return Err(Error::InvalidLength {
            op: "pec",
            len: steps,
            required: len,
        });
    }
    let out_len = steps - len + 1;
    let (fd, pd) = (phi.data(), patterns.data());
    let mut sums = vec![0.0; out_len * n];
    let mut psi = vec![0.0; out_len * n];
    for t in 0..out_len {
        let segment = &fd[t * 2..(t + len) * 2];
        for j in 0..n {
            let pattern = &pd[j * len * 2..(j + 1) * len * 2];
            let mut d = 0.0;
            for k in 0..len {
                let dx = segment[2 * k] - pattern[2 * k];
                let dy = segment[2 * k + 1] - pattern[2 * k + 1];
                d += libm::sqrt(dx * dx + dy * dy);
            }
            sums[t * n + j] = d;
            psi[t * n + j] = lambda.data()[j] * libm::log(PEC_EPS + d) + bias.data()[j];
        }
    }
    Ok((Tensor::new(&[out_len, n], psi)?, sums))
}

/// Gradients with respect to `[phi, patterns, lambda, bias]`. A zero-length
/// difference vector contributes a zero subgradient.
pub(crate) fn backward(
    grad: &Tensor,
    phi: &Tensor,
    patterns: &Tensor,
    lambda: &Tensor,
    sums: &[f64],
) -> Result<[Tensor; 4]> {
    let (n, len) = (patterns.shape()[0], patterns.shape()[1]);
    let out_len = phi.shape()[0] - len + 1;
    let (fd, pd, gd) = (phi.data(), patterns.data(), grad.data());
    let mut dphi = vec![0.0; fd.len()];
    let mut dpat = vec![0.0; pd.len()];
    let mut dlam = vec![0.0; n];
    let mut dbias = vec![0.0; n];
    for t in 0..out_len {
        for j in 0..n {
            let g = gd[t * n + j];
            if g == 0.0 {
                continue;
            }
            let shifted = PEC_EPS + sums[t * n + j];
            dlam[j] += g * libm::log(shifted);
            dbias[j] += g;
            let coef = g * lambda.data()[j] / shifted;
            for k in 0..len {
                let fi = (t + k) * 2;
                let pi = (j * len + k) * 2;
                let dx = fd[fi] - pd[pi];
                let dy = fd[fi + 1] - pd[pi + 1];
                let norm = libm::sqrt(dx * dx + dy * dy);
                if norm > 0.0 {
                    let (ux, uy) = (coef * dx / norm, coef * dy / norm);
                    dphi[fi] += ux;
                    dphi[fi + 1] += uy;
                    dpat[pi] -= ux;
                    dpat[pi + 1] -= uy;
                }
            }
        }
    }
    Ok([
        Tensor::new(phi.shape(), dphi)?,
        Tensor::new(patterns.shape(), dpat)?,
        Tensor::vector(dlam),
        Tensor::vector(dbias),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig3_phi() -> Tensor {
        Tensor::from_rows(&[&[10.0, 1.0], &[20.0, 1.0]]).unwrap()
    }

    fn single(points: [[f64; 2]; 2], lambda: f64, bias: f64) -> PatternSet {
        PatternSet::new(
            Tensor::new(&[1, 2, 2], points.concat()).unwrap(),
            Tensor::vector(vec![lambda]),
            Tensor::vector(vec![bias]),
        )
        .unwrap()
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn closer_pattern_scores_higher() {
        let near = pec(&fig3_phi(), &single([[10.0, 0.0], [20.0, 0.0]], -1.0, 0.0)).unwrap();
        let far = pec(&fig3_phi(), &single([[50.0, 0.0], [60.0, 0.0]], -1.0, 0.0)).unwrap();
        let near = near.data()[0];
        let far = far.data()[0];
        assert!((near - -(2.0f64 + PEC_EPS).ln()).abs() < 1e-12);
        assert!((near - -0.6931).abs() < 1e-4);
        let d = 2.0 * (1601.0f64).sqrt();
        assert!((far - -(d + PEC_EPS).ln()).abs() < 1e-12);
        assert!((far - -4.3823).abs() < 1e-4);
        assert!(near > far);
    }

    #[test]
    fn zero_scale_leaves_bias() {
        let out = pec(&fig3_phi(), &single([[3.0, 1.0], [-2.0, 7.0]], 0.0, 0.25)).unwrap();
        assert_eq!(out.data(), &[0.25]);
    }

    #[test]
    fn exact_match_hits_epsilon() {
        let out = pec(&fig3_phi(), &single([[10.0, 1.0], [20.0, 1.0]], -1.0, 0.0)).unwrap();
        assert!((out.data()[0] - 18.420680743952367).abs() < 1e-9);
    }

    #[test]
    fn output_shape_and_short_input() {
        let phi = Tensor::zeros(&[8, 2]);
        let set = PatternSet::new(
            Tensor::zeros(&[5, 2, 2]),
            Tensor::full(&[5], -1.0),
            Tensor::zeros(&[5]),
        )
        .unwrap();
        assert_eq!(pec(&phi, &set).unwrap().shape(), &[7, 5]);
        assert!(matches!(
            pec(&Tensor::zeros(&[1, 2]), &set),
            Err(Error::InvalidLength { len: 1, required: 2, .. })
        ));
    }
}
