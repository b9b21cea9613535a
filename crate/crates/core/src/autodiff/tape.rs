use alloc::borrow::Cow;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{head, pec};
use crate::tensor::Tensor;

use super::param::{ParamId, ParamSet};

/// Saturation bound applied to every `tanh` output.
pub const TANH_LIMIT: f64 = 1.0 - 1e-12;

/// Negative-side slope used by the model's leaky ReLU layers.
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// 1-D max pooling geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: usize,
    pub stride: usize,
    pub ceil: bool,
}

impl PoolSpec {
    /// Output length for an input of `len` steps, or `None` when no window fits.
    pub fn output_len(&self, len: usize) -> Option<usize> {
        if len == 0 {
            return None;
        }
        let (k, s) = (self.window, self.stride);
        let mut out = if len >= k {
            let span = len - k;
            if self.ceil {
                span.div_ceil(s) + 1
            } else {
                span / s + 1
            }
        } else if self.ceil {
            1
        } else {
            0
        };
        // a trailing window has to start inside the input
        while out > 0 && (out - 1) * s >= len {
            out -= 1;
        }
        (out > 0).then_some(out)
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    Dense { x: Var, w: Var, b: Var },
    Conv1d { x: Var, k: Var, b: Var },
    Tanh { x: Var },
    LeakyRelu { x: Var, slope: f64 },
    MaxPool1d { x: Var, argmax: Vec<usize> },
    Pec { phi: Var, patterns: Var, lambda: Var, bias: Var, sums: Vec<f64> },
    MaxOver { inputs: Vec<Var>, winner: Vec<usize> },
    Concat { inputs: Vec<Var> },
    Transpose { x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Sum { x: Var },
    Mean { inputs: Vec<Var> },
    GaussianNll { raw: Var, target: [f64; 2] },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
}

/// Linear record of executed primitives. Parameters are borrowed, not
/// copied, so a tape cannot outlive the [`ParamSet`] it reads from.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Dimension {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("forward value of node {}", self.nodes.len())));
        }
        Ok(self.push(Cow::Owned(value), op))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records a constant input. Its gradient is still reported by
    /// [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf)
    }

    pub fn param(&mut self, params: &'p ParamSet, id: ParamId) -> Var {
        self.push(Cow::Borrowed(&params.get(id).value), Op::Param(id))
    }

    /// `y[i] = sum_j w[i,j] x[j] + b[i]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.ndim() != 2 || xv.ndim() != 1 || wv.shape()[1] != xv.len() {
            return Err(dim_err("dense", wv.shape(), xv.shape()));
        }
        let (rows, cols) = (wv.shape()[0], wv.shape()[1]);
        if bv.shape() != [rows] {
            return Err(dim_err("dense", wv.shape(), bv.shape()));
        }
        let (xd, wd) = (xv.data(), wv.data());
        let out: Vec<f64> = (0..rows)
            .map(|i| {
                let row = &wd[i * cols..(i + 1) * cols];
                row.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>() + bv.data()[i]
            })
            .collect();
        self.owned(Tensor::vector(out), Op::Dense { x, w, b })
    }

    /// Valid, stride-1 cross-correlation: `y[o,t] = sum_{c,k} K[o,c,k] x[c,t+k] + b[o]`.
    pub fn conv1d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let (xv, kv, bv) = (self.value(x), self.value(k), self.value(b));
        if xv.ndim() != 2 || kv.ndim() != 3 || kv.shape()[1] != xv.shape()[0] {
            return Err(dim_err("conv1d", kv.shape(), xv.shape()));
        }
        let (c_out, c_in, klen) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
        if bv.shape() != [c_out] {
            return Err(dim_err("conv1d", kv.shape(), bv.shape()));
        }
        let t_in = xv.shape()[1];
        if t_in < klen || klen == 0 {
            return Err(Error::InvalidLength {
                op: "conv1d",
                len: t_in,
                required: klen.max(1),
            });
        }
        let t_out = t_in - klen + 1;
        let (xd, kd) = (xv.data(), kv.data());
        let mut out = vec![0.0; c_out * t_out];
        for o in 0..c_out {
            for t in 0..t_out {
                let mut acc = bv.data()[o];
                for c in 0..c_in {
                    let kernel = &kd[(o * c_in + c) * klen..(o * c_in + c + 1) * klen];
                    let signal = &xd[c * t_in + t..c * t_in + t + klen];
                    acc += kernel.iter().zip(signal).map(|(a, b)| a * b).sum::<f64>();
                }
                out[o * t_out + t] = acc;
            }
        }
        self.owned(Tensor::new(&[c_out, t_out], out)?, Op::Conv1d { x, k, b })
    }

    /// Elementwise `tanh`, clamped to `[-TANH_LIMIT, TANH_LIMIT]`.
    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let mut y = self.value(x).clone();
        y.data_mut()
            .iter_mut()
            .for_each(|v| *v = libm::tanh(*v).clamp(-TANH_LIMIT, TANH_LIMIT));
        self.owned(y, Op::Tanh { x })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let mut y = self.value(x).clone();
        y.data_mut()
            .iter_mut()
            .for_each(|v| *v = if *v >= 0.0 { *v } else { slope * *v });
        self.owned(y, Op::LeakyRelu { x, slope })
    }

    /// Max pooling along the last axis of a `[C, T]` tensor. Ties resolve to
    /// the lowest index.
    pub fn maxpool1d(&mut self, x: Var, spec: PoolSpec) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 {
            return Err(dim_err("maxpool1d", xv.shape(), &[0, 0]));
        }
        if spec.window == 0 || spec.stride == 0 {
            return Err(Error::InvalidInput(format!(
                "pool window {} and stride {} must be positive",
                spec.window, spec.stride
            )));
        }
        let (channels, len) = (xv.shape()[0], xv.shape()[1]);
        let out_len = spec.output_len(len).ok_or(Error::InvalidLength {
            op: "maxpool1d",
            len,
            required: if spec.ceil { 1 } else { spec.window },
        })?;
        let xd = xv.data();
        let mut out = Vec::with_capacity(channels * out_len);
        let mut argmax = Vec::with_capacity(channels * out_len);
        for c in 0..channels {
            for i in 0..out_len {
                let start = c * len + i * spec.stride;
                let end = c * len + (i * spec.stride + spec.window).min(len);
                let mut best = start;
                for j in start + 1..end {
                    if xd[j] > xd[best] {
                        best = j;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
        self.owned(Tensor::new(&[channels, out_len], out)?, Op::MaxPool1d { x, argmax })
    }

    /// Pattern extraction convolution; see [`crate::model::pec`].
    pub fn pec(&mut self, phi: Var, patterns: Var, lambda: Var, bias: Var) -> Result<Var> {
        let (psi, sums) = pec::forward(
            self.value(phi),
            self.value(patterns),
            self.value(lambda),
            self.value(bias),
        )?;
        self.owned(
            psi,
            Op::Pec {
                phi,
                patterns,
                lambda,
                bias,
                sums,
            },
        )
    }

    /// Elementwise maximum over same-shaped inputs; the gradient goes to the
    /// first input attaining the maximum.
    pub fn max_over(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| {
            Error::InvalidInput("max_over needs at least one input".into())
        })?;
        let mut out = self.value(*first).clone();
        let mut winner = vec![0usize; out.len()];
        for (n, v) in inputs.iter().enumerate().skip(1) {
            let other = self.value(*v);
            out.check_same_shape("max_over", other)?;
            for (i, (o, c)) in out.data_mut().iter_mut().zip(other.data()).enumerate() {
                if *c > *o {
                    *o = *c;
                    winner[i] = n;
                }
            }
        }
        self.owned(
            out,
            Op::MaxOver {
                inputs: inputs.to_vec(),
                winner,
            },
        )
    }

    /// Flattens and concatenates the inputs into one vector.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for v in inputs {
            out.extend_from_slice(self.value(*v).data());
        }
        self.owned(
            Tensor::vector(out),
            Op::Concat {
                inputs: inputs.to_vec(),
            },
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 {
            return Err(dim_err("transpose", xv.shape(), &[0, 0]));
        }
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let xd = xv.data();
        let out: Vec<f64> = (0..c)
            .flat_map(|j| (0..r).map(move |i| xd[i * c + j]))
            .collect();
        self.owned(Tensor::new(&[c, r], out)?, Op::Transpose { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b))?;
        self.owned(out, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        let bv = self.value(b);
        out.check_same_shape("mul", bv)?;
        out.data_mut()
            .iter_mut()
            .zip(bv.data())
            .for_each(|(x, y)| *x *= y);
        self.owned(out, Op::Mul { a, b })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.owned(Tensor::scalar(s), Op::Sum { x })
    }

    /// Mean of scalar nodes.
    pub fn mean(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::InvalidInput("mean of zero terms".into()));
        }
        let mut total = 0.0;
        for v in inputs {
            total += self.value(*v).item().ok_or_else(|| {
                Error::Contract(format!("mean expects scalars, got {:?}", self.value(*v).shape()))
            })?;
        }
        self.owned(
            Tensor::scalar(total / inputs.len() as f64),
            Op::Mean {
                inputs: inputs.to_vec(),
            },
        )
    }

    /// Negative log-likelihood of `target` under the Gaussian built from the
    /// five raw head outputs `[x, y, a, b, c]`.
    pub fn gaussian_nll(&mut self, raw: Var, target: [f64; 2]) -> Result<Var> {
        let rv = self.value(raw);
        let raw5: [f64; 5] = rv
            .data()
            .try_into()
            .map_err(|_| dim_err("gaussian_nll", rv.shape(), &[5]))?;
        let (loss, _) = head::nll_with_grad(&raw5, target);
        self.owned(Tensor::scalar(loss), Op::GaussianNll { raw, target })
    }

    /// Propagates d(loss)/d(node) back through the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        let mut params = Vec::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let g = match &node.op {
                Op::Leaf => continue,
                Op::Param(id) => {
                    if grads[idx].is_some() {
                        params.push((Var(idx), *id));
                    }
                    continue;
                }
                _ => match grads[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backward_node(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads, params })
    }

    fn backward_node(&self, node: &Node<'p>, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (rows, cols) = (wv.shape()[0], wv.shape()[1]);
                let wd = wv.data();
                let mut dx = vec![0.0; cols];
                let mut dw = vec![0.0; rows * cols];
                for i in 0..rows {
                    let gi = gd[i];
                    let row = &wd[i * cols..(i + 1) * cols];
                    let drow = &mut dw[i * cols..(i + 1) * cols];
                    for j in 0..cols {
                        dx[j] += gi * row[j];
                        drow[j] = gi * xv.data()[j];
                    }
                }
                accumulate(grads, *x, Tensor::new(xv.shape(), dx)?)?;
                accumulate(grads, *w, Tensor::new(wv.shape(), dw)?)?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Conv1d { x, k, b } => {
                let (xv, kv) = (self.value(*x), self.value(*k));
                let (c_out, c_in, klen) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
                let t_in = xv.shape()[1];
                let t_out = t_in - klen + 1;
                let (xd, kd) = (xv.data(), kv.data());
                let mut dx = vec![0.0; xd.len()];
                let mut dk = vec![0.0; kd.len()];
                let mut db = vec![0.0; c_out];
                for o in 0..c_out {
                    for t in 0..t_out {
                        let go = gd[o * t_out + t];
                        db[o] += go;
                        for c in 0..c_in {
                            let kbase = (o * c_in + c) * klen;
                            let xbase = c * t_in + t;
                            for q in 0..klen {
                                dk[kbase + q] += go * xd[xbase + q];
                                dx[xbase + q] += go * kd[kbase + q];
                            }
                        }
                    }
                }
                accumulate(grads, *x, Tensor::new(xv.shape(), dx)?)?;
                accumulate(grads, *k, Tensor::new(kv.shape(), dk)?)?;
                accumulate(grads, *b, Tensor::vector(db))?;
            }
            Op::Tanh { x } => {
                let mut dx = g.clone();
                dx.data_mut()
                    .iter_mut()
                    .zip(node.value.data())
                    .for_each(|(d, y)| *d *= 1.0 - y * y);
                accumulate(grads, *x, dx)?;
            }
            Op::LeakyRelu { x, slope } => {
                let mut dx = g.clone();
                dx.data_mut()
                    .iter_mut()
                    .zip(self.value(*x).data())
                    .for_each(|(d, v)| {
                        if *v < 0.0 {
                            *d *= slope;
                        }
                    });
                accumulate(grads, *x, dx)?;
            }
            Op::MaxPool1d { x, argmax } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let dd = dx.data_mut();
                for (gi, &at) in gd.iter().zip(argmax) {
                    dd[at] += gi;
                }
                accumulate(grads, *x, dx)?;
            }
            Op::Pec {
                phi,
                patterns,
                lambda,
                bias,
                sums,
            } => {
                let [dphi, dpat, dlam, dbias] = pec::backward(
                    g,
                    self.value(*phi),
                    self.value(*patterns),
                    self.value(*lambda),
                    sums,
                )?;
                accumulate(grads, *phi, dphi)?;
                accumulate(grads, *patterns, dpat)?;
                accumulate(grads, *lambda, dlam)?;
                accumulate(grads, *bias, dbias)?;
            }
            Op::MaxOver { inputs, winner } => {
                let shape = node.value.shape();
                let mut parts: Vec<Option<Tensor>> = inputs.iter().map(|_| None).collect();
                for (i, (&w, gi)) in winner.iter().zip(gd).enumerate() {
                    parts[w].get_or_insert_with(|| Tensor::zeros(shape)).data_mut()[i] += gi;
                }
                for (v, part) in inputs.iter().zip(parts) {
                    if let Some(p) = part {
                        accumulate(grads, *v, p)?;
                    }
                }
            }
            Op::Concat { inputs } => {
                let mut offset = 0;
                for v in inputs {
                    let shape = self.value(*v).shape();
                    let n = self.value(*v).len();
                    accumulate(grads, *v, Tensor::new(shape, gd[offset..offset + n].to_vec())?)?;
                    offset += n;
                }
            }
            Op::Transpose { x } => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                let dx: Vec<f64> = (0..c)
                    .flat_map(|j| (0..r).map(move |i| gd[i * c + j]))
                    .collect();
                accumulate(grads, *x, Tensor::new(&[c, r], dx)?)?;
            }
            Op::Add { a, b } => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Mul { a, b } => {
                let mut da = g.clone();
                da.data_mut()
                    .iter_mut()
                    .zip(self.value(*b).data())
                    .for_each(|(d, v)| *d *= v);
                let mut db = g.clone();
                db.data_mut()
                    .iter_mut()
                    .zip(self.value(*a).data())
                    .for_each(|(d, v)| *d *= v);
                accumulate(grads, *a, da)?;
                accumulate(grads, *b, db)?;
            }
            Op::Sum { x } => {
                let xv = self.value(*x);
                accumulate(grads, *x, Tensor::full(xv.shape(), gd[0]))?;
            }
            Op::Mean { inputs } => {
                let share = gd[0] / inputs.len() as f64;
                for v in inputs {
                    accumulate(grads, *v, Tensor::full(self.value(*v).shape(), share))?;
                }
            }
            Op::GaussianNll { raw, target } => {
                let rv = self.value(*raw);
                let raw5: [f64; 5] = rv
                    .data()
                    .try_into()
                    .map_err(|_| dim_err("gaussian_nll", rv.shape(), &[5]))?;
                let (_, d) = head::nll_with_grad(&raw5, *target);
                let dr: Vec<f64> = d.iter().map(|v| v * gd[0]).collect();
                accumulate(grads, *raw, Tensor::new(rv.shape(), dr)?)?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
    if !g.is_finite() {
        return Err(Error::NonFinite(format!("gradient of node {}", v.0)));
    }
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(Var, ParamId)>,
}

impl Gradients {
    /// Gradient with respect to a leaf or parameter node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Per-parameter gradients; a parameter bound twice appears twice.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|(v, id)| self.grads[v.0].as_ref().map(|g| (*id, g)))
    }

    /// Adds every parameter gradient into `ParamSet` grads.
    pub fn accumulate_into(&self, params: &mut ParamSet) -> Result<()> {
        for (id, g) in self.param_grads() {
            params.get_mut(id).grad.add_assign(g)?;
        }
        Ok(())
    }
}
