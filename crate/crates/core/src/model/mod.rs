//! The location predictor: two trajectory encoders (target and context),
//! max pooling over context pedestrians, and an MLP head producing a
//! bivariate Gaussian over the target's next position.

pub mod head;
pub mod pec;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{ParamId, ParamSet, PoolSpec, Tape, Var, LEAKY_RELU_SLOPE};
use crate::dataset::{SceneWindow, OBS_LEN};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use head::{gaussian_head, GaussianParams, RawHeadOutput, RHO_LIMIT};
pub use pec::{pec, PatternSet, PEC_EPS};

/// Half-width of the square that initial pattern start points are drawn from.
pub const PATTERN_INIT_EXTENT: f64 = 4.0;
/// Standard deviation of each initial pattern step (about 1.4 m/s over 0.4 s).
pub const PATTERN_INIT_STEP_STD: f64 = 0.56;

const HEAD_WIDTH: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    Context,
    Target,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Context => "context",
            Self::Target => "target",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub num_patterns: usize,
    pub pattern_len: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub pool: PoolSpec,
}

impl EncoderConfig {
    pub fn new(num_patterns: usize, conv_channels: usize) -> Self {
        Self {
            num_patterns,
            pattern_len: 2,
            conv_channels,
            conv_kernel: 2,
            pool: PoolSpec {
                window: 2,
                stride: 2,
                ceil: true,
            },
        }
    }

    /// Temporal length of the encoding for `obs_len` input steps.
    pub fn output_len(&self, obs_len: usize) -> Option<usize> {
        let after_pec = obs_len.checked_sub(self.pattern_len)? + 1;
        let pooled = self.pool.output_len(after_pec)?;
        Some(pooled.checked_sub(self.conv_kernel)? + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub obs_len: usize,
    pub context: EncoderConfig,
    pub target: EncoderConfig,
    /// Widths of the dense layers; the last must be 5.
    pub mlp_widths: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            obs_len: OBS_LEN,
            context: EncoderConfig::new(100, 160),
            target: EncoderConfig::new(50, 80),
            mlp_widths: vec![300, 120, 80, HEAD_WIDTH],
        }
    }
}

impl ModelConfig {
    pub fn encoder(&self, kind: EncoderKind) -> &EncoderConfig {
        match kind {
            EncoderKind::Context => &self.context,
            EncoderKind::Target => &self.target,
        }
    }

    /// `[channels, steps]` of an encoder's output.
    pub fn encoder_output_shape(&self, kind: EncoderKind) -> Result<[usize; 2]> {
        let enc = self.encoder(kind);
        let steps = enc.output_len(self.obs_len).ok_or(Error::InvalidLength {
            op: "encoder",
            len: self.obs_len,
            required: enc.pattern_len + enc.conv_kernel,
        })?;
        Ok([enc.conv_channels, steps])
    }

    pub fn mlp_input_width(&self) -> Result<usize> {
        let [tc, tt] = self.encoder_output_shape(EncoderKind::Target)?;
        let [cc, ct] = self.encoder_output_shape(EncoderKind::Context)?;
        if tt != ct {
            return Err(Error::Config(format!(
                "target and context encodings differ in length ({tt} vs {ct})"
            )));
        }
        Ok(tc * tt + cc * ct)
    }

    pub fn validate(&self) -> Result<()> {
        for kind in [EncoderKind::Context, EncoderKind::Target] {
            let enc = self.encoder(kind);
            if enc.num_patterns == 0 || enc.pattern_len == 0 || enc.conv_channels == 0 || enc.conv_kernel == 0 {
                return Err(Error::Config(format!("{} encoder has a zero size", kind.name())));
            }
            if enc.pool.window == 0 || enc.pool.stride == 0 {
                return Err(Error::Config(format!("{} encoder pooling must be positive", kind.name())));
            }
        }
        self.mlp_input_width()?;
        if self.mlp_widths.last() != Some(&HEAD_WIDTH) || self.mlp_widths.contains(&0) {
            return Err(Error::Config(format!(
                "mlp widths {:?} must be positive and end in {HEAD_WIDTH}",
                self.mlp_widths
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct EncoderIds {
    patterns: ParamId,
    lambda: ParamId,
    bias: ParamId,
    conv_weight: ParamId,
    conv_bias: ParamId,
}

/// Parameter names and shapes, in registration order.
pub fn parameter_specs(config: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>> {
    config.validate()?;
    let mut specs = Vec::new();
    for kind in [EncoderKind::Context, EncoderKind::Target] {
        let enc = config.encoder(kind);
        let n = enc.num_patterns;
        let name = kind.name();
        specs.push((format!("{name}.patterns"), vec![n, enc.pattern_len, 2]));
        specs.push((format!("{name}.lambda"), vec![n]));
        specs.push((format!("{name}.bias"), vec![n]));
        specs.push((
            format!("{name}.conv.weight"),
            vec![enc.conv_channels, n, enc.conv_kernel],
        ));
        specs.push((format!("{name}.conv.bias"), vec![enc.conv_channels]));
    }
    let mut fan_in = config.mlp_input_width()?;
    for (i, &width) in config.mlp_widths.iter().enumerate() {
        specs.push((format!("mlp.{i}.weight"), vec![width, fan_in]));
        specs.push((format!("mlp.{i}.bias"), vec![width]));
        fan_in = width;
    }
    Ok(specs)
}

/// Which parameter plays which role; shared by every forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelLayout {
    config: ModelConfig,
    context: EncoderIds,
    target: EncoderIds,
    mlp: Vec<(ParamId, ParamId)>,
}

impl ModelLayout {
    /// Resolves the layout against `params`, checking every name and shape.
    pub fn bind(config: &ModelConfig, params: &ParamSet) -> Result<Self> {
        let specs = parameter_specs(config)?;
        if params.len() != specs.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        let mut ids = Vec::with_capacity(specs.len());
        for (name, shape) in &specs {
            let id = params
                .find(name)
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
            let found = params.get(id).value.shape();
            if found != shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {found:?}, architecture needs {shape:?}"
                )));
            }
            ids.push(id);
        }
        let enc = |i: usize| EncoderIds {
            patterns: ids[i],
            lambda: ids[i + 1],
            bias: ids[i + 2],
            conv_weight: ids[i + 3],
            conv_bias: ids[i + 4],
        };
        Ok(Self {
            config: config.clone(),
            context: enc(0),
            target: enc(5),
            mlp: ids[10..].chunks(2).map(|c| (c[0], c[1])).collect(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn ids(&self, kind: EncoderKind) -> &EncoderIds {
        match kind {
            EncoderKind::Context => &self.context,
            EncoderKind::Target => &self.target,
        }
    }

    /// `tanh(conv(pool(tanh(pec(phi)))))` for a `[2, T]` trajectory.
    pub fn encode<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParamSet,
        kind: EncoderKind,
        trajectory: Var,
    ) -> Result<Var> {
        let ids = *self.ids(kind);
        let enc = self.config.encoder(kind);
        let points = tape.transpose(trajectory)?;
        let patterns = tape.param(params, ids.patterns);
        let lambda = tape.param(params, ids.lambda);
        let bias = tape.param(params, ids.bias);
        let psi = tape.pec(points, patterns, lambda, bias)?;
        let psi = tape.tanh(psi)?;
        let channels = tape.transpose(psi)?;
        let pooled = tape.maxpool1d(channels, enc.pool)?;
        let kernel = tape.param(params, ids.conv_weight);
        let kbias = tape.param(params, ids.conv_bias);
        let conv = tape.conv1d(pooled, kernel, kbias)?;
        tape.tanh(conv)
    }

    /// Raw `[x, y, a, b, c]` for pedestrian `m` of an egocentric window.
    pub fn forward_raw<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParamSet,
        window: &SceneWindow,
        m: usize,
    ) -> Result<Var> {
        if m >= window.num_peds() {
            return Err(Error::Index {
                index: m,
                len: window.num_peds(),
            });
        }
        if window.len() != self.config.obs_len {
            return Err(Error::InvalidLength {
                op: "loc_predict",
                len: window.len(),
                required: self.config.obs_len,
            });
        }
        let target_in = tape.leaf(window.channels(m)?);
        let target = self.encode(tape, params, EncoderKind::Target, target_in)?;

        let mut contexts = Vec::with_capacity(window.num_peds().saturating_sub(1));
        for other in (0..window.num_peds()).filter(|&o| o != m) {
            let input = tape.leaf(window.channels(other)?);
            contexts.push(self.encode(tape, params, EncoderKind::Context, input)?);
        }
        let pooled = if contexts.is_empty() {
            let shape = self.config.encoder_output_shape(EncoderKind::Context)?;
            tape.leaf(Tensor::full(&shape, -1.0))
        } else {
            tape.max_over(&contexts)?
        };

        let mut h = tape.concat(&[target, pooled])?;
        let last = self.mlp.len() - 1;
        for (i, &(w, b)) in self.mlp.iter().enumerate() {
            let w = tape.param(params, w);
            let b = tape.param(params, b);
            h = tape.dense(h, w, b)?;
            if i < last {
                h = tape.leaky_relu(h, LEAKY_RELU_SLOPE)?;
            }
        }
        Ok(h)
    }
}

/// Weights and layout of the full location predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct LocationPredictorModel {
    layout: ModelLayout,
    params: ParamSet,
}

impl LocationPredictorModel {
    /// Fresh model with seeded initialisation: pattern starts uniform in
    /// `[-4, 4]^2`, each later pattern state a Gaussian step of 0.56 m,
    /// `lambda = -1`, `b = 0`, and `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for
    /// convolution and dense layers.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let specs = parameter_specs(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let step = Normal::new(0.0, PATTERN_INIT_STEP_STD).expect("positive std");
        let mut params = ParamSet::new();
        // every weight precedes its bias in `specs`
        let mut fan_in = 1;
        for (name, shape) in &specs {
            let count: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with(".patterns") {
                let (n, len) = (shape[0], shape[1]);
                let mut data = Vec::with_capacity(count);
                for _ in 0..n {
                    let mut x = rng.random_range(-PATTERN_INIT_EXTENT..=PATTERN_INIT_EXTENT);
                    let mut y = rng.random_range(-PATTERN_INIT_EXTENT..=PATTERN_INIT_EXTENT);
                    data.extend([x, y]);
                    for _ in 1..len {
                        x += step.sample(&mut rng);
                        y += step.sample(&mut rng);
                        data.extend([x, y]);
                    }
                }
                data
            } else if name.ends_with(".lambda") {
                vec![-1.0; count]
            } else if name == "context.bias" || name == "target.bias" {
                vec![0.0; count]
            } else {
                if name.ends_with("weight") {
                    fan_in = shape[1..].iter().product();
                }
                let bound = 1.0 / libm::sqrt(fan_in as f64);
                (0..count).map(|_| rng.random_range(-bound..=bound)).collect()
            };
            params.add(name.clone(), Tensor::new(shape, data)?);
        }
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        if !params.all_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        let layout = ModelLayout::bind(&config, &params)?;
        Ok(Self { layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        self.layout.config()
    }

    pub fn layout(&self) -> &ModelLayout {
        &self.layout
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_parts(self) -> (ModelLayout, ParamSet) {
        (self.layout, self.params)
    }

    pub fn patterns(&self, kind: EncoderKind) -> PatternSet {
        let ids = self.layout.ids(kind);
        PatternSet {
            patterns: self.params.get(ids.patterns).value.clone(),
            lambda: self.params.get(ids.lambda).value.clone(),
            bias: self.params.get(ids.bias).value.clone(),
        }
    }

    /// Encoding of a `[2, T]` trajectory by one of the two encoders.
    pub fn encode(&self, kind: EncoderKind, trajectory: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let input = tape.leaf(trajectory.clone());
        let out = self.layout.encode(&mut tape, &self.params, kind, input)?;
        Ok(tape.value(out).clone())
    }

    pub fn raw_output(&self, window: &SceneWindow, m: usize) -> Result<RawHeadOutput> {
        let mut tape = Tape::new();
        let raw = self.layout.forward_raw(&mut tape, &self.params, window, m)?;
        let data: &[f64; 5] = tape
            .value(raw)
            .data()
            .try_into()
            .map_err(|_| Error::Contract("head width is not 5".into()))?;
        Ok(RawHeadOutput::from_slice(data))
    }

    /// One-step Gaussian for pedestrian `m` of a window already expressed in
    /// `m`'s egocentric frame and holding exactly `obs_len` steps.
    pub fn loc_predict(&self, window: &SceneWindow, m: usize) -> Result<GaussianParams> {
        Ok(gaussian_head(&self.raw_output(window, m)?))
    }
}

/// Context pooling on plain tensors: elementwise maximum, or `-1`
/// everywhere when there is no context.
pub fn pool_context(omegas: &[Tensor], shape: &[usize]) -> Result<Tensor> {
    let Some(first) = omegas.first() else {
        return Ok(Tensor::full(shape, -1.0));
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = omegas.iter().map(|o| tape.leaf(o.clone())).collect();
    if first.shape() != shape {
        return Err(Error::Dimension {
            op: "pool_context",
            left: first.shape().to_vec(),
            right: shape.to_vec(),
        });
    }
    let out = tape.max_over(&vars)?;
    Ok(tape.value(out).clone())
}
