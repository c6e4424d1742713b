//! CSV logs for the loss curve and evaluation metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::optimizer::{EvalRecord, IterationRecord};

pub const LOSS_HEADER: &str = "iteration,frame,loss";
pub const METRICS_HEADER: &str = "iteration,frame,loss,psnr,ssim";

pub fn loss_csv(records: &[IterationRecord]) -> String {
    let mut s = String::from(LOSS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{},{},{}", r.iteration, r.frame, r.loss);
    }
    s
}

pub fn metrics_csv(records: &[EvalRecord]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{},{},{},{},{}", r.iteration, r.frame, r.loss, r.psnr, r.ssim);
    }
    s
}

pub fn write_loss_csv(path: &Path, records: &[IterationRecord]) -> Result<()> {
    fs::write(path, loss_csv(records)).map_err(|e| Error::io(path, e))
}

pub fn write_metrics_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    fs::write(path, metrics_csv(records)).map_err(|e| Error::io(path, e))
}

/// Parse a metrics CSV written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::format(path, format!("expected header `{METRICS_HEADER}`")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::format(path, format!("line {}: cannot parse `{line}`", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(EvalRecord {
                iteration: f[0].parse().map_err(|_| bad())?,
                frame: f[1].parse().map_err(|_| bad())?,
                loss: f[2].parse().map_err(|_| bad())?,
                psnr: f[3].parse().map_err(|_| bad())?,
                ssim: f[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
