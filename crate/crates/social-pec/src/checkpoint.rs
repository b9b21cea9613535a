//! JSON checkpoints: architecture, every parameter tensor as nested arrays,
//! and training metadata.
//!
//! Numbers are written in the shortest decimal form that parses back to the
//! same `f64`, so a save/load cycle is bit-exact.

use std::path::Path;

use pec_core::autodiff::ParamSet;
use pec_core::autodiff::PoolSpec;
use pec_core::model::{parameter_specs, EncoderConfig, LocationPredictorModel, ModelConfig};
use pec_core::Tensor;
use serde_json::{json, Map, Value};

use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub best_val_nll: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: LocationPredictorModel,
    pub training: TrainingMeta,
}

fn encoder_json(e: &EncoderConfig) -> Value {
    json!({
        "num_patterns": e.num_patterns,
        "pattern_len": e.pattern_len,
        "conv_channels": e.conv_channels,
        "conv_kernel": e.conv_kernel,
        "pool_window": e.pool.window,
        "pool_stride": e.pool.stride,
        "pool_ceil": e.pool.ceil,
    })
}

fn architecture_json(c: &ModelConfig) -> Value {
    json!({
        "obs_len": c.obs_len,
        "context": encoder_json(&c.context),
        "target": encoder_json(&c.target),
        "mlp_widths": c.mlp_widths,
    })
}

/// Nested arrays following `shape`, innermost dimension last.
fn nested(shape: &[usize], data: &[f64]) -> Value {
    match shape {
        [] => json!(data[0]),
        [_] => Value::Array(data.iter().map(|&v| json!(v)).collect()),
        [n, rest @ ..] => {
            let chunk = (data.len() / (*n).max(1)).max(1);
            Value::Array(data.chunks(chunk).take(*n).map(|c| nested(rest, c)).collect())
        }
    }
}

fn flatten(value: &Value, shape: &[usize], field: &str, out: &mut Vec<f64>) -> Result<()> {
    match shape {
        [] => {
            let v = value
                .as_f64()
                .ok_or_else(|| CliError::field(field, format!("expected a number, found {value}")))?;
            out.push(v);
        }
        [n, rest @ ..] => {
            let items = value
                .as_array()
                .ok_or_else(|| CliError::field(field, "expected an array"))?;
            if items.len() != *n {
                return Err(CliError::field(
                    field,
                    format!("expected {n} entries, found {}", items.len()),
                ));
            }
            for (i, item) in items.iter().enumerate() {
                flatten(item, rest, &format!("{field}[{i}]"), out)?;
            }
        }
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_json(&self) -> Value {
        let mut params = Map::new();
        for p in self.model.params().iter() {
            params.insert(p.name.clone(), nested(p.value.shape(), p.value.data()));
        }
        json!({
            "format_version": FORMAT_VERSION,
            "architecture": architecture_json(self.model.config()),
            "parameters": params,
            "training": {
                "seed": self.training.seed,
                "epochs": self.training.epochs,
                "best_val_nll": self.training.best_val_nll,
            },
        })
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("checkpoint values are finite");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()).map_err(|e| CliError::io(path, e))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text)?;
        let root = root
            .as_object()
            .ok_or_else(|| CliError::field("(root)", "expected an object"))?;
        let version = get(root, "format_version", "")?
            .as_u64()
            .ok_or_else(|| CliError::field("format_version", "expected an unsigned integer"))?;
        if version != FORMAT_VERSION {
            return Err(CliError::field(
                "format_version",
                format!("unsupported version {version} (this build reads {FORMAT_VERSION})"),
            ));
        }
        let config = parse_architecture(get(root, "architecture", "")?)?;
        let specs = parameter_specs(&config)
            .map_err(|e| CliError::field("architecture", e.to_string()))?;

        let stored = get(root, "parameters", "")?
            .as_object()
            .ok_or_else(|| CliError::field("parameters", "expected an object"))?;
        for name in stored.keys() {
            if !specs.iter().any(|(n, _)| n == name) {
                return Err(CliError::field(
                    format!("parameters.{name}"),
                    "not part of the architecture",
                ));
            }
        }
        let mut params = ParamSet::new();
        for (name, shape) in &specs {
            let field = format!("parameters.{name}");
            let value = stored
                .get(name)
                .ok_or_else(|| CliError::field(&field, "missing"))?;
            let mut data = Vec::with_capacity(shape.iter().product());
            flatten(value, shape, &field, &mut data)?;
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                return Err(CliError::field(&field, format!("entry {i} is not finite")));
            }
            params.add(name.clone(), Tensor::new(shape, data)?);
        }
        let model = LocationPredictorModel::from_params(config, params)?;

        let training = get(root, "training", "")?
            .as_object()
            .ok_or_else(|| CliError::field("training", "expected an object"))?;
        let seed = get(training, "seed", "training.")?
            .as_u64()
            .ok_or_else(|| CliError::field("training.seed", "expected an unsigned integer"))?;
        let epochs = as_usize(get(training, "epochs", "training.")?, "training.epochs")?;
        let best = get(training, "best_val_nll", "training.")?;
        let best_val_nll = match best {
            Value::Null => None,
            v => Some(
                v.as_f64()
                    .ok_or_else(|| CliError::field("training.best_val_nll", "expected a number or null"))?,
            ),
        };
        Ok(Self {
            model,
            training: TrainingMeta {
                seed,
                epochs,
                best_val_nll,
            },
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }
}

fn get<'a>(obj: &'a Map<String, Value>, key: &str, prefix: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| CliError::field(format!("{prefix}{key}"), "missing"))
}

fn as_usize(v: &Value, field: &str) -> Result<usize> {
    v.as_u64()
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| CliError::field(field, "expected an unsigned integer"))
}

fn parse_encoder(v: &Value, field: &str) -> Result<EncoderConfig> {
    let obj = v
        .as_object()
        .ok_or_else(|| CliError::field(field, "expected an object"))?;
    let prefix = format!("{field}.");
    let num = |key: &str| as_usize(get(obj, key, &prefix)?, &format!("{prefix}{key}"));
    let ceil = get(obj, "pool_ceil", &prefix)?
        .as_bool()
        .ok_or_else(|| CliError::field(format!("{prefix}pool_ceil"), "expected a boolean"))?;
    Ok(EncoderConfig {
        num_patterns: num("num_patterns")?,
        pattern_len: num("pattern_len")?,
        conv_channels: num("conv_channels")?,
        conv_kernel: num("conv_kernel")?,
        pool: PoolSpec {
            window: num("pool_window")?,
            stride: num("pool_stride")?,
            ceil,
        },
    })
}

fn parse_architecture(v: &Value) -> Result<ModelConfig> {
    let obj = v
        .as_object()
        .ok_or_else(|| CliError::field("architecture", "expected an object"))?;
    let p = "architecture.";
    let widths = get(obj, "mlp_widths", p)?
        .as_array()
        .ok_or_else(|| CliError::field("architecture.mlp_widths", "expected an array"))?
        .iter()
        .enumerate()
        .map(|(i, w)| as_usize(w, &format!("architecture.mlp_widths[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let config = ModelConfig {
        obs_len: as_usize(get(obj, "obs_len", p)?, "architecture.obs_len")?,
        context: parse_encoder(get(obj, "context", p)?, "architecture.context")?,
        target: parse_encoder(get(obj, "target", p)?, "architecture.target")?,
        mlp_widths: widths,
    };
    config
        .validate()
        .map_err(|e| CliError::field("architecture", e.to_string()))?;
    Ok(config)
}

/// Fails with the first architecture field where the checkpoint and the run
/// disagree.
pub fn check_architecture(checkpoint: &ModelConfig, run: &ModelConfig) -> Result<()> {
    let mismatch = |field: &str, found: String, expected: String| {
        Err(CliError::Architecture {
            field: field.to_string(),
            found,
            expected,
        })
    };
    if checkpoint.obs_len != run.obs_len {
        return mismatch("obs_len", checkpoint.obs_len.to_string(), run.obs_len.to_string());
    }
    for (name, a, b) in [
        ("context", &checkpoint.context, &run.context),
        ("target", &checkpoint.target, &run.target),
    ] {
        let fields = [
            ("num_patterns", a.num_patterns, b.num_patterns),
            ("pattern_len", a.pattern_len, b.pattern_len),
            ("conv_channels", a.conv_channels, b.conv_channels),
            ("conv_kernel", a.conv_kernel, b.conv_kernel),
            ("pool_window", a.pool.window, b.pool.window),
            ("pool_stride", a.pool.stride, b.pool.stride),
            ("pool_ceil", a.pool.ceil as usize, b.pool.ceil as usize),
        ];
        for (field, x, y) in fields {
            if x != y {
                return mismatch(&format!("{name}.{field}"), x.to_string(), y.to_string());
            }
        }
    }
    if checkpoint.mlp_widths != run.mlp_widths {
        return mismatch(
            "mlp_widths",
            format!("{:?}", checkpoint.mlp_widths),
            format!("{:?}", run.mlp_widths),
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            obs_len: 8,
            context: EncoderConfig::new(3, 2),
            target: EncoderConfig::new(2, 2),
            mlp_widths: vec![4, 5],
        }
    }

    fn checkpoint() -> Checkpoint {
        Checkpoint {
            model: LocationPredictorModel::new(tiny(), 9).unwrap(),
            training: TrainingMeta {
                seed: 4,
                epochs: 2,
                best_val_nll: Some(1.25),
            },
        }
    }

    #[test]
    fn nested_layout() {
        let v = nested(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(v, json!([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]));
        let mut out = Vec::new();
        flatten(&v, &[2, 3], "x", &mut out).unwrap();
        assert_eq!(out, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let err = flatten(&v, &[3, 2], "x", &mut Vec::new()).unwrap_err();
        assert!(err.to_string().contains("`x`"), "{err}");
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = checkpoint();
        let back = Checkpoint::parse(&ck.to_json_string()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn version_and_fields_are_checked() {
        let mut v = checkpoint().to_json();
        v["format_version"] = json!(2);
        let err = Checkpoint::parse(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("format_version"), "{err}");

        let mut v = checkpoint().to_json();
        v["parameters"]["mlp.1.bias"] = json!([1.0, 2.0]);
        let err = Checkpoint::parse(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("parameters.mlp.1.bias"), "{err}");

        let mut v = checkpoint().to_json();
        v["training"].as_object_mut().unwrap().remove("seed");
        let err = Checkpoint::parse(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("training.seed"), "{err}");

        let mut v = checkpoint().to_json();
        v["architecture"]["context"]["num_patterns"] = json!(4);
        let err = Checkpoint::parse(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("parameters.context.patterns"), "{err}");
    }

    #[test]
    fn architecture_mismatch_names_field() {
        let mut run = tiny();
        run.context.num_patterns = 5;
        let err = check_architecture(&tiny(), &run).unwrap_err();
        assert!(err.to_string().contains("context.num_patterns"), "{err}");
        assert!(check_architecture(&tiny(), &tiny()).is_ok());
    }
}
