//! Independent double-double evaluation of the training loss, used as the
//! numeric side of the full-model gradient check.

use pec_core::autodiff::ParamSet;
use pec_core::model::{ModelConfig, RHO_LIMIT};
use pec_core::trainer::Sample;
use twofloat::TwoFloat;

const TANH_LIMIT: f64 = 1.0 - 1e-12;
const SLOPE: f64 = 0.01;

type D = TwoFloat;

fn d(v: f64) -> D {
    D::from(v)
}

fn tensor(params: &ParamSet, name: &str) -> Vec<D> {
    let id = params.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    params.get(id).value.data().iter().map(|&v| d(v)).collect()
}

fn clamped_tanh(v: D) -> D {
    let t = v.tanh();
    if t > TANH_LIMIT {
        d(TANH_LIMIT)
    } else if t < -TANH_LIMIT {
        d(-TANH_LIMIT)
    } else {
        t
    }
}

struct Encoder {
    patterns: Vec<D>,
    lambda: Vec<D>,
    bias: Vec<D>,
    weight: Vec<D>,
    conv_bias: Vec<D>,
    n: usize,
    len: usize,
    channels: usize,
    kernel: usize,
    window: usize,
    stride: usize,
}

impl Encoder {
    fn load(params: &ParamSet, config: &ModelConfig, name: &str) -> Self {
        let enc = if name == "context" { &config.context } else { &config.target };
        Self {
            patterns: tensor(params, &format!("{name}.patterns")),
            lambda: tensor(params, &format!("{name}.lambda")),
            bias: tensor(params, &format!("{name}.bias")),
            weight: tensor(params, &format!("{name}.conv.weight")),
            conv_bias: tensor(params, &format!("{name}.conv.bias")),
            n: enc.num_patterns,
            len: enc.pattern_len,
            channels: enc.conv_channels,
            kernel: enc.conv_kernel,
            window: enc.pool.window,
            stride: enc.pool.stride,
        }
    }

    /// `[channels][steps]` encoding of a list of `(x, y)` points.
    fn encode(&self, points: &[(f64, f64)]) -> Vec<Vec<D>> {
        let steps = points.len() - self.len + 1;
        // similarity per pattern and segment
        let mut psi = vec![vec![d(0.0); steps]; self.n];
        for (j, row) in psi.iter_mut().enumerate() {
            for (t, out) in row.iter_mut().enumerate() {
                let mut sum = d(0.0);
                for k in 0..self.len {
                    let px = self.patterns[(j * self.len + k) * 2];
                    let py = self.patterns[(j * self.len + k) * 2 + 1];
                    let dx = d(points[t + k].0) - px;
                    let dy = d(points[t + k].1) - py;
                    sum += (dx * dx + dy * dy).sqrt();
                }
                *out = clamped_tanh(self.lambda[j] * (d(1e-8) + sum).ln() + self.bias[j]);
            }
        }
        let mut pooled = vec![Vec::new(); self.n];
        for (j, row) in psi.iter().enumerate() {
            let mut start = 0;
            while start < steps {
                let end = (start + self.window).min(steps);
                let best = row[start..end].iter().copied().fold(row[start], |a, b| if b > a { b } else { a });
                pooled[j].push(best);
                start += self.stride;
            }
        }
        let width = pooled[0].len() - self.kernel + 1;
        (0..self.channels)
            .map(|o| {
                (0..width)
                    .map(|t| {
                        let mut acc = self.conv_bias[o];
                        for (c, row) in pooled.iter().enumerate() {
                            for k in 0..self.kernel {
                                acc += self.weight[(o * self.n + c) * self.kernel + k] * row[t + k];
                            }
                        }
                        clamped_tanh(acc)
                    })
                    .collect()
            })
            .collect()
    }
}

pub struct DdModel {
    context: Encoder,
    target: Encoder,
    layers: Vec<(Vec<D>, Vec<D>, usize, usize)>,
}

impl DdModel {
    pub fn load(params: &ParamSet, config: &ModelConfig) -> Self {
        let mut layers = Vec::new();
        for i in 0..config.mlp_widths.len() {
            let w_id = params.find(&format!("mlp.{i}.weight")).unwrap();
            let shape = params.get(w_id).value.shape().to_vec();
            layers.push((
                tensor(params, &format!("mlp.{i}.weight")),
                tensor(params, &format!("mlp.{i}.bias")),
                shape[0],
                shape[1],
            ));
        }
        Self {
            context: Encoder::load(params, config, "context"),
            target: Encoder::load(params, config, "target"),
            layers,
        }
    }

    fn raw(&self, sample: &Sample) -> Vec<D> {
        let w = &sample.window;
        let points = |m: usize| -> Vec<(f64, f64)> {
            (0..w.len()).map(|t| {
                let s = w.state(m, t);
                (s.x, s.y)
            }).collect()
        };
        let target = self.target.encode(&points(sample.target));
        let mut pooled: Option<Vec<Vec<D>>> = None;
        for other in (0..w.num_peds()).filter(|&o| o != sample.target) {
            let enc = self.context.encode(&points(other));
            pooled = Some(match pooled {
                None => enc,
                Some(mut acc) => {
                    for (ra, re) in acc.iter_mut().zip(&enc) {
                        for (a, e) in ra.iter_mut().zip(re) {
                            if *e > *a {
                                *a = *e;
                            }
                        }
                    }
                    acc
                }
            });
        }
        let steps = target[0].len();
        let pooled = pooled.unwrap_or_else(|| vec![vec![d(-1.0); steps]; self.context.channels]);
        let mut h: Vec<D> = target.into_iter().chain(pooled).flatten().collect();
        let last = self.layers.len() - 1;
        for (i, (wt, b, rows, cols)) in self.layers.iter().enumerate() {
            assert_eq!(*cols, h.len());
            h = (0..*rows)
                .map(|r| {
                    let mut acc = b[r];
                    for (wv, x) in wt[r * cols..(r + 1) * cols].iter().zip(&h) {
                        acc += *wv * *x;
                    }
                    if i < last && acc < 0.0 {
                        acc * SLOPE
                    } else {
                        acc
                    }
                })
                .collect();
        }
        h
    }

    /// Negative log-likelihood of the sample's next position.
    pub fn nll(&self, sample: &Sample) -> D {
        let r = self.raw(sample);
        let (a, b) = (r[2], r[3]);
        let sx = a.exp();
        let sy = b.exp();
        let mut rho = r[4].tanh();
        if rho > RHO_LIMIT {
            rho = d(RHO_LIMIT);
        } else if rho < -RHO_LIMIT {
            rho = d(-RHO_LIMIT);
        }
        let dx = d(sample.truth.x) - r[0];
        let dy = d(sample.truth.y) - r[1];
        let one_m = d(1.0) - rho * rho;
        let z = dx * dx / (sx * sx) + dy * dy / (sy * sy) - d(2.0) * rho * dx * dy / (sx * sy);
        (d(2.0) * twofloat::consts::PI).ln() + a + b + one_m.ln() / 2.0 + z / (d(2.0) * one_m)
    }

    pub fn mean_nll(&self, samples: &[Sample]) -> D {
        let mut total = d(0.0);
        for s in samples {
            total += self.nll(s);
        }
        total / samples.len() as f64
    }
}
