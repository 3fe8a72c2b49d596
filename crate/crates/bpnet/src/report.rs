//! CSV outputs.

use std::path::Path;

use bpnet_core::metrics::MetricReport;
use bpnet_core::training::LossRecord;

use crate::error::{Error, Result};
use crate::runtime::BenchRecord;
use crate::experiment::SweepPoint;

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let csv_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_metrics(path: &Path, rows: &[(usize, MetricReport)]) -> Result<()> {
    write_rows(
        path,
        &["slice_id", "psnr", "nrmse", "ssim"],
        rows.iter()
            .map(|(id, m)| [id.to_string(), m.psnr.to_string(), m.nrmse.to_string(), m.ssim.to_string()]),
    )
}

pub fn write_bench(path: &Path, rows: &[BenchRecord]) -> Result<()> {
    write_rows(
        path,
        &["patch_dim", "mean_ms", "std_ms", "runs", "workers"],
        rows.iter().map(|r| {
            [
                r.patch_dim.to_string(),
                r.mean_ms.to_string(),
                r.std_ms.to_string(),
                r.runs.to_string(),
                r.workers.to_string(),
            ]
        }),
    )
}

/// `wall_ms` is the time since training started.
pub fn write_losses(path: &Path, rows: &[(LossRecord, f64)]) -> Result<()> {
    write_rows(
        path,
        &["step", "loss", "wall_ms"],
        rows.iter()
            .map(|(r, ms)| [r.step.to_string(), r.loss.to_string(), format!("{ms:.3}")]),
    )
}

/// Failed points keep their row with empty metrics and the error text.
pub fn write_sweep(path: &Path, axis: &str, rows: &[SweepPoint]) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    write_rows(
        path,
        &[axis, "nrmse", "ssim", "psnr", "zero_filled_nrmse", "error"],
        rows.iter().map(|p| {
            [
                p.value.to_string(),
                opt(p.metrics.map(|m| m.nrmse)),
                opt(p.metrics.map(|m| m.ssim)),
                opt(p.metrics.map(|m| m.psnr)),
                opt(p.baseline_nrmse),
                p.error.clone().unwrap_or_default(),
            ]
        }),
    )
}
