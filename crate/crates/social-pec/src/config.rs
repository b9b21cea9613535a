//! `key = value` run configuration and the dataset manifest.
//!
//! Both files share one syntax: one assignment per line, `#` starts a
//! comment, blank lines are ignored. Relative paths are resolved against the
//! directory of the file that names them.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use pec_core::dataset::WindowSpec;
use pec_core::evaluation::FdeSelection;
use pec_core::model::ModelConfig;
use pec_core::predictor::RolloutMode;
use pec_core::trainer::TrainConfig;

use crate::error::{CliError, Result};

/// One `key = value` line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits `text` into entries, rejecting malformed and repeated keys.
pub fn parse_entries(text: &str, path: &Path) -> Result<Vec<Entry>> {
    let mut entries: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| CliError::ConfigLine {
            path: path.to_path_buf(),
            line,
            message,
        };
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, found {content:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(err(format!("empty key or value in {content:?}")));
        }
        if let Some(prev) = entries.iter().find(|e| e.key == key) {
            return Err(err(format!("`{key}` already set on line {}", prev.line)));
        }
        entries.push(Entry {
            line,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(entries)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = Path::new(value);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Dataset name to annotation file, in file order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub sets: Vec<(String, PathBuf)>,
}

impl Manifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let base = base_dir(path);
        let sets = parse_entries(text, path)?
            .into_iter()
            .map(|e| (e.key, resolve(&base, &e.value)))
            .collect();
        Ok(Self { sets })
    }

    /// Reads the manifest and checks that every listed file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest = Self::parse(&read(path)?, path)?;
        if manifest.sets.is_empty() {
            return Err(CliError::Config(format!("manifest {} lists no datasets", path.display())));
        }
        for (name, file) in &manifest.sets {
            if !file.is_file() {
                return Err(CliError::Config(format!(
                    "dataset {name}: {} does not exist",
                    file.display()
                )));
            }
        }
        Ok(manifest)
    }

    pub fn names(&self) -> Vec<&str> {
        self.sets.iter().map(|(n, _)| n.as_str()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub test_set: String,
    pub obs_len: usize,
    pub pred_len: usize,
    pub stride: usize,
    pub val_fraction: f64,
    pub rollouts: usize,
    /// Seeds the train/validation split and the epoch shuffle.
    pub seed: u64,
    pub model_seed: u64,
    pub eval_seed: u64,
    pub mode: RolloutMode,
    pub fde: FdeSelection,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub checkpoint: PathBuf,
    pub metrics_log: PathBuf,
    pub report: Option<PathBuf>,
}

fn parse_value<T: FromStr>(e: &Entry, path: &Path) -> Result<T> {
    e.value.parse().map_err(|_| CliError::ConfigLine {
        path: path.to_path_buf(),
        line: e.line,
        message: format!("`{}` has invalid value {:?}", e.key, e.value),
    })
}

pub fn parse_mode(s: &str) -> Result<RolloutMode> {
    match s {
        "sample" => Ok(RolloutMode::Sample),
        "mean" => Ok(RolloutMode::Mean),
        other => Err(CliError::Config(format!("unknown mode {other:?} (expected sample or mean)"))),
    }
}

pub fn parse_fde(s: &str) -> Result<FdeSelection> {
    match s {
        "same" => Ok(FdeSelection::SameTrajectory),
        "independent" => Ok(FdeSelection::IndependentMinimum),
        other => Err(CliError::Config(format!(
            "unknown fde selection {other:?} (expected same or independent)"
        ))),
    }
}

impl RunConfig {
    /// Parses without touching the file system; relative paths are joined to
    /// `base`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let base = base_dir(path);
        let defaults = ModelConfig::default();
        let mut manifest = None;
        let mut test_set = None;
        let mut cfg = RunConfig {
            manifest: PathBuf::new(),
            test_set: String::new(),
            obs_len: defaults.obs_len,
            pred_len: pec_core::dataset::PRED_LEN,
            stride: 1,
            val_fraction: 0.2,
            rollouts: 20,
            seed: 0,
            model_seed: 0,
            eval_seed: 0,
            mode: RolloutMode::Sample,
            fde: FdeSelection::SameTrajectory,
            train: TrainConfig::default(),
            model: defaults.clone(),
            checkpoint: base.join("checkpoint.json"),
            metrics_log: base.join("metrics.log"),
            report: None,
        };
        let (mut context, mut target) = (defaults.context, defaults.target);
        for e in parse_entries(text, path)? {
            let bad = |message: String| CliError::ConfigLine {
                path: path.to_path_buf(),
                line: e.line,
                message,
            };
            match e.key.as_str() {
                "manifest" => manifest = Some(resolve(&base, &e.value)),
                "test_set" => test_set = Some(e.value.clone()),
                "obs_len" => cfg.obs_len = parse_value(&e, path)?,
                "pred_len" => cfg.pred_len = parse_value(&e, path)?,
                "stride" => cfg.stride = parse_value(&e, path)?,
                "val_fraction" => cfg.val_fraction = parse_value(&e, path)?,
                "rollouts" => cfg.rollouts = parse_value(&e, path)?,
                "seed" => cfg.seed = parse_value(&e, path)?,
                "model_seed" => cfg.model_seed = parse_value(&e, path)?,
                "eval_seed" => cfg.eval_seed = parse_value(&e, path)?,
                "mode" => cfg.mode = parse_mode(&e.value).map_err(|err| bad(err.to_string()))?,
                "fde" => cfg.fde = parse_fde(&e.value).map_err(|err| bad(err.to_string()))?,
                "lr" => cfg.train.lr = parse_value(&e, path)?,
                "batch_size" => cfg.train.batch_size = parse_value(&e, path)?,
                "epochs" => cfg.train.epochs = parse_value(&e, path)?,
                "val_every" => cfg.train.val_every = parse_value(&e, path)?,
                "max_steps" => cfg.train.max_steps = Some(parse_value(&e, path)?),
                "context_patterns" => context.num_patterns = parse_value(&e, path)?,
                "context_channels" => context.conv_channels = parse_value(&e, path)?,
                "target_patterns" => target.num_patterns = parse_value(&e, path)?,
                "target_channels" => target.conv_channels = parse_value(&e, path)?,
                "pattern_len" => {
                    let l = parse_value(&e, path)?;
                    context.pattern_len = l;
                    target.pattern_len = l;
                }
                "mlp_widths" => {
                    cfg.model.mlp_widths = e
                        .value
                        .split(',')
                        .map(|w| w.trim().parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad(format!("`mlp_widths` has invalid value {:?}", e.value)))?;
                }
                "checkpoint" => cfg.checkpoint = resolve(&base, &e.value),
                "metrics_log" => cfg.metrics_log = resolve(&base, &e.value),
                "report" => cfg.report = Some(resolve(&base, &e.value)),
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        cfg.train.seed = cfg.seed;
        cfg.manifest = manifest.ok_or_else(|| CliError::Config("`manifest` is required".into()))?;
        cfg.test_set = test_set.ok_or_else(|| CliError::Config("`test_set` is required".into()))?;
        cfg.model = ModelConfig {
            obs_len: cfg.obs_len,
            context,
            target,
            mlp_widths: cfg.model.mlp_widths,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.pred_len == 0 || self.stride == 0 || self.rollouts == 0 {
            return Err(CliError::Config("pred_len, stride and rollouts must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(CliError::Config(format!(
                "val_fraction {} outside (0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }

    /// Reads and validates a config, checking that the manifest and the
    /// directories of every output path exist.
    pub fn load(path: &Path) -> Result<Self> {
        let cfg = Self::parse(&read(path)?, path)?;
        if !cfg.manifest.is_file() {
            return Err(CliError::Config(format!(
                "manifest {} does not exist",
                cfg.manifest.display()
            )));
        }
        let outputs = [Some(&cfg.checkpoint), Some(&cfg.metrics_log), cfg.report.as_ref()];
        for out in outputs.into_iter().flatten() {
            let dir = base_dir(out);
            if !dir.as_os_str().is_empty() && !dir.is_dir() {
                return Err(CliError::Config(format!(
                    "output directory {} does not exist",
                    dir.display()
                )));
            }
        }
        Ok(cfg)
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            obs_len: self.obs_len,
            total_len: self.obs_len + self.pred_len,
            stride: self.stride,
        }
    }
}
