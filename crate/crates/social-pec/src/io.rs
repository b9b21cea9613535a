//! Annotation files, prediction files and the per-epoch metrics log.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use pec_core::dataset::{parse_annotations, AnnotationRecord, NamedRecords};
use pec_core::trainer::{EpochRecord, TrainObserver};
use pec_core::Tensor;

use crate::config::Manifest;
use crate::error::{CliError, Result};

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_annotations(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Every dataset of the manifest, in manifest order.
pub fn read_sets(manifest: &Manifest) -> Result<Vec<NamedRecords>> {
    manifest
        .sets
        .iter()
        .map(|(name, path)| {
            Ok(NamedRecords {
                name: name.clone(),
                records: read_annotations(path)?,
            })
        })
        .collect()
}

/// Distinct frame ids in increasing order.
pub fn frames(records: &[AnnotationRecord]) -> Vec<i64> {
    let mut f: Vec<i64> = records.iter().map(|r| r.frame_id).collect();
    f.dedup();
    f
}

/// Writes `[K, M, H, 2]` predictions as `frame ped x y rollout_k` lines.
/// Step `t` of the horizon is stamped `first_frame + t * frame_step`.
pub fn write_predictions(
    out: &mut impl Write,
    pred: &Tensor,
    ped_ids: &[i64],
    first_frame: i64,
    frame_step: i64,
) -> std::io::Result<()> {
    let [k, m, h, _] = pred.shape() else {
        return Err(std::io::Error::other("prediction tensor must have rank 4"));
    };
    for rollout in 0..*k {
        for t in 0..*h {
            let frame = first_frame + t as i64 * frame_step;
            for (p, id) in ped_ids.iter().enumerate().take(*m) {
                let x = pred.get(&[rollout, p, t, 0]);
                let y = pred.get(&[rollout, p, t, 1]);
                writeln!(out, "{frame} {id} {x} {y} {rollout}")?;
            }
        }
    }
    Ok(())
}

/// Appends one `epoch train_nll val_nll seconds` line per epoch and echoes
/// it to stderr. A missing validation pass is written as `nan`.
pub struct MetricsLog {
    path: PathBuf,
    file: BufWriter<File>,
    start: Instant,
    error: Option<std::io::Error>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CliError::io(path, e))?;
        let mut log = Self {
            path: path.to_path_buf(),
            file: BufWriter::new(file),
            start: Instant::now(),
            error: None,
        };
        if fresh {
            log.write_line("# epoch train_nll val_nll seconds");
        }
        Ok(log)
    }

    fn write_line(&mut self, line: &str) {
        if self.error.is_some() {
            return;
        }
        if let Err(e) = writeln!(self.file, "{line}").and_then(|_| self.file.flush()) {
            self.error = Some(e);
        }
    }

    /// Surfaces the first write error, if any.
    pub fn finish(mut self) -> Result<()> {
        if self.error.is_none() {
            if let Err(e) = self.file.flush() {
                self.error = Some(e);
            }
        }
        match self.error {
            Some(e) => Err(CliError::io(self.path, e)),
            None => Ok(()),
        }
    }
}

pub fn format_epoch(r: &EpochRecord) -> String {
    let val = r.val_nll.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
    format!("{} {:.6} {} {:.3}", r.epoch, r.train_nll, val, r.seconds)
}

impl TrainObserver for MetricsLog {
    fn now_seconds(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn on_epoch(&mut self, record: &EpochRecord) {
        let line = format_epoch(record);
        eprintln!("epoch {line}");
        self.write_line(&line);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_lines() {
        let pred = Tensor::new(&[2, 1, 2, 2], vec![1.0, 2.0, 1.5, 2.5, 0.0, 0.0, -1.0, 0.25]).unwrap();
        let mut out = Vec::new();
        write_predictions(&mut out, &pred, &[7], 80, 10).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "80 7 1 2 0\n90 7 1.5 2.5 0\n80 7 0 0 1\n90 7 -1 0.25 1\n");
        // the first four columns parse back as annotations
        let first: String = text.lines().map(|l| l.rsplit_once(' ').unwrap().0.to_string() + "\n").take(2).collect();
        assert_eq!(parse_annotations(&first).unwrap().len(), 2);
    }

    #[test]
    fn epoch_line() {
        let r = EpochRecord { epoch: 3, train_nll: 1.5, val_nll: None, seconds: 2.0 };
        assert_eq!(format_epoch(&r), "3 1.500000 nan 2.000");
        let r = EpochRecord { val_nll: Some(-0.25), ..r };
        assert_eq!(format_epoch(&r), "3 1.500000 -0.250000 2.000");
    }
}
