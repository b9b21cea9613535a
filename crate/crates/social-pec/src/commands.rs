//! The command implementations behind the binary. Each returns the text
//! printed to stdout.

use std::io::{BufWriter, Write};
use std::path::Path;

use pec_core::dataset::{build_windows, split_leave_one_out, DatasetSplit};
use pec_core::evaluation::{evaluate, LinearBaseline, MetricsReport, PecPredictor, TrajectoryPredictor};
use pec_core::model::{EncoderKind, LocationPredictorModel};
use pec_core::predictor::{rollout, RolloutConfig, RolloutMode};
use pec_core::trainer::train as fit;
use serde_json::json;

use crate::checkpoint::{check_architecture, Checkpoint, TrainingMeta};
use crate::config::{Manifest, RunConfig};
use crate::error::{CliError, Result};
use crate::export::{patterns_csv, patterns_svg};
use crate::io::{frames, read_annotations, read_sets, write_predictions, MetricsLog};

pub fn load_split(cfg: &RunConfig) -> Result<DatasetSplit> {
    let manifest = Manifest::load(&cfg.manifest)?;
    let sets = read_sets(&manifest)?;
    Ok(split_leave_one_out(
        &sets,
        &cfg.test_set,
        cfg.val_fraction,
        cfg.seed,
        cfg.window_spec(),
    )?)
}

pub fn train(config: &Path) -> Result<String> {
    let cfg = RunConfig::load(config)?;
    let split = load_split(&cfg)?;
    let model = LocationPredictorModel::new(cfg.model.clone(), cfg.model_seed)?;
    let mut log = MetricsLog::create(&cfg.metrics_log)?;
    let (model, history) = fit(model, &split, &cfg.train, &mut log)?;
    log.finish()?;
    let best_val_nll = (!split.val.is_empty()).then_some(history.best_score);
    let checkpoint = Checkpoint {
        model,
        training: TrainingMeta {
            seed: cfg.seed,
            epochs: history.epochs.len(),
            best_val_nll,
        },
    };
    checkpoint.save(&cfg.checkpoint)?;
    Ok(format!(
        "trained {} steps over {} epochs; best epoch {} with {} NLL {:.4}; saved {}",
        history.steps,
        history.epochs.len(),
        history.best_epoch,
        if best_val_nll.is_some() { "validation" } else { "training" },
        history.best_score,
        cfg.checkpoint.display()
    ))
}

fn report_json(report: &MetricsReport, method: &str, mode: Option<RolloutMode>, cfg: &RunConfig) -> String {
    let windows: Vec<_> = report
        .windows
        .iter()
        .map(|w| {
            json!({
                "start_frame": w.start_frame,
                "num_pedestrians": w.num_pedestrians,
                "ade": w.ade(),
                "fde": w.fde(),
            })
        })
        .collect();
    let value = json!({
        "method": method,
        "set": report.set_name,
        "ade": report.ade,
        "fde": report.fde,
        "rollouts": report.rollouts,
        "mode": mode.map(|m| match m {
            RolloutMode::Sample => "sample",
            RolloutMode::Mean => "mean",
        }),
        "fde_selection": format!("{:?}", cfg.fde),
        "num_windows": report.num_windows,
        "num_pedestrians": report.num_pedestrians,
        "seed": report.seed,
        "windows": windows,
    });
    let mut s = serde_json::to_string_pretty(&value).expect("finite metrics");
    s.push('\n');
    s
}

fn run_eval<P: TrajectoryPredictor>(
    predictor: &P,
    method: &str,
    rollouts: usize,
    mode: Option<RolloutMode>,
    cfg: &RunConfig,
) -> Result<String> {
    let split = load_split(cfg)?;
    if split.test.is_empty() {
        return Err(CliError::Config(format!("test set {} yields no windows", cfg.test_set)));
    }
    let report = evaluate(predictor, &cfg.test_set, &split.test, rollouts, cfg.eval_seed, cfg.fde)?;
    if let Some(path) = &cfg.report {
        std::fs::write(path, report_json(&report, method, mode, cfg)).map_err(|e| CliError::io(path, e))?;
    }
    Ok(report.summary())
}

pub fn eval(checkpoint: &Path, config: &Path, k: Option<usize>, mode: Option<RolloutMode>) -> Result<String> {
    let cfg = RunConfig::load(config)?;
    let ck = Checkpoint::load(checkpoint)?;
    check_architecture(ck.model.config(), &cfg.model)?;
    let mode = mode.unwrap_or(cfg.mode);
    let predictor = PecPredictor { model: ck.model, mode };
    run_eval(&predictor, "social-pec", k.unwrap_or(cfg.rollouts), Some(mode), &cfg)
}

pub fn baseline(config: &Path) -> Result<String> {
    let cfg = RunConfig::load(config)?;
    // deterministic, so one rollout is the whole distribution
    run_eval(&LinearBaseline, "linear", 1, None, &cfg)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictOptions {
    pub rollouts: usize,
    pub mode: RolloutMode,
    pub seed: u64,
    pub horizon: usize,
}

impl Default for PredictOptions {
    fn default() -> Self {
        let d = RolloutConfig::default();
        Self {
            rollouts: d.rollouts,
            mode: d.mode,
            seed: d.seed,
            horizon: d.horizon,
        }
    }
}

/// Rolls out every pedestrian annotated in all of the last `obs_len` frames
/// of `input` and writes the future in the annotation schema plus a
/// `rollout_k` column.
pub fn predict(checkpoint: &Path, input: &Path, out: &Path, opts: PredictOptions) -> Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let obs_len = ck.model.config().obs_len;
    let records = read_annotations(input)?;
    let all_frames = frames(&records);
    if all_frames.len() < obs_len {
        return Err(CliError::Config(format!(
            "{} holds {} frames, at least {obs_len} are needed",
            input.display(),
            all_frames.len()
        )));
    }
    let windows = build_windows(&records, obs_len, obs_len, 1)?;
    let last_start = all_frames[all_frames.len() - obs_len];
    let window = windows
        .into_iter()
        .find(|w| w.start_frame() == last_start)
        .ok_or_else(|| {
            CliError::Config(format!(
                "no pedestrian is present in all of the last {obs_len} frames of {}",
                input.display()
            ))
        })?;
    let step = all_frames[1] - all_frames[0];
    let cfg = RolloutConfig {
        mode: opts.mode,
        rollouts: opts.rollouts,
        seed: opts.seed,
        horizon: opts.horizon,
    };
    let pred = rollout(&ck.model, &window, &cfg)?;
    let file = std::fs::File::create(out).map_err(|e| CliError::io(out, e))?;
    let mut w = BufWriter::new(file);
    let last = all_frames[all_frames.len() - 1];
    write_predictions(&mut w, &pred, window.ped_ids(), last + step, step)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(out, e))?;
    Ok(format!(
        "wrote {} rollouts of {} steps for {} pedestrians to {}",
        opts.rollouts,
        opts.horizon,
        window.num_peds(),
        out.display()
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatternFormat {
    Csv,
    Svg,
}

pub fn parse_format(s: &str) -> Result<PatternFormat> {
    match s {
        "csv" => Ok(PatternFormat::Csv),
        "svg" => Ok(PatternFormat::Svg),
        other => Err(CliError::Config(format!("unknown format {other:?} (expected csv or svg)"))),
    }
}

/// The exported document; written to `out` when given, otherwise returned.
pub fn dump_patterns(
    checkpoint: &Path,
    format: PatternFormat,
    which: EncoderKind,
    extent: f64,
    out: Option<&Path>,
) -> Result<String> {
    let ck = Checkpoint::load(checkpoint)?;
    let set = ck.model.patterns(which);
    let doc = match format {
        PatternFormat::Csv => patterns_csv(&set),
        PatternFormat::Svg => patterns_svg(&set, extent)?,
    };
    match out {
        Some(path) => {
            std::fs::write(path, &doc).map_err(|e| CliError::io(path, e))?;
            Ok(format!(
                "wrote {} {} patterns to {}",
                set.num_patterns(),
                which.name(),
                path.display()
            ))
        }
        None => Ok(doc.trim_end().to_string()),
    }
}
