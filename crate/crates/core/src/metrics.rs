//! Image quality metrics on real (magnitude) images.

use alloc::vec;
use alloc::vec::Vec;

use crate::grid::{ComplexGrid, RealGrid};
use crate::math::{exp, log10, sqrt};
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// dB; `+inf` for identical images.
    pub psnr: f64,
    pub nrmse: f64,
    pub ssim: f64,
}

/// Root-sum-of-squares magnitude over channels.
pub fn magnitude(channels: &[ComplexGrid]) -> Result<RealGrid> {
    let first = channels.first().ok_or_else(|| Error::invalid("no image channels"))?;
    let mut acc = vec![0.0; first.data().len()];
    for ch in channels {
        ch.require_dims(first.dims())?;
        for (a, v) in acc.iter_mut().zip(ch.data()) {
            *a += v.norm_sqr();
        }
    }
    RealGrid::new(first.ny(), first.nz(), acc.into_iter().map(sqrt).collect())
}

fn same_dims(a: &RealGrid, b: &RealGrid) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: b.dims(),
            found: a.dims(),
        });
    }
    Ok(())
}

fn sq_diff(a: &RealGrid, b: &RealGrid) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `|test - ref| / |ref|`
pub fn nrmse(test: &RealGrid, reference: &RealGrid) -> Result<f64> {
    same_dims(test, reference)?;
    let den: f64 = reference.data().iter().map(|v| v * v).sum();
    if !(den > 0.0) {
        return Err(Error::invalid("reference has zero norm"));
    }
    Ok(sqrt(sq_diff(test, reference) / den))
}

fn peak(reference: &RealGrid) -> Result<f64> {
    let p = reference.max();
    if !(p > 0.0) {
        return Err(Error::invalid("reference peak must be positive"));
    }
    Ok(p)
}

/// `20 log10(max(ref) / rms(test - ref))`
pub fn psnr(test: &RealGrid, reference: &RealGrid) -> Result<f64> {
    same_dims(test, reference)?;
    let p = peak(reference)?;
    let mse = sq_diff(test, reference) / reference.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * log10(p / sqrt(mse)))
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| exp(-((i as f64 - c) * (i as f64 - c)) / (2.0 * sigma * sigma)))
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable filtering keeping only fully overlapped positions.
fn filter_valid(data: &[f64], ny: usize, nz: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let oz = nz + 1 - n;
    let oy = ny + 1 - n;
    let mut rows = vec![0.0; ny * oz];
    for r in 0..ny {
        for c in 0..oz {
            rows[r * oz + c] = (0..n).map(|j| k[j] * data[r * nz + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oy * oz];
    for r in 0..oy {
        for c in 0..oz {
            out[r * oz + c] = (0..n).map(|j| k[j] * rows[(r + j) * oz + c]).sum();
        }
    }
    (out, oy, oz)
}

/// Mean local structural similarity with an 11x11 Gaussian window
/// (sigma 1.5), `K1 = 0.01`, `K2 = 0.03` and dynamic range `max(ref)`.
/// Only windows lying fully inside the image are averaged; images smaller
/// than the window use the largest odd window that fits.
pub fn ssim(test: &RealGrid, reference: &RealGrid) -> Result<f64> {
    same_dims(test, reference)?;
    let range = peak(reference)?;
    let (ny, nz) = reference.dims();
    let mut size = SSIM_WINDOW.min(ny).min(nz);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian_kernel(size, SSIM_SIGMA);
    let x = test.data();
    let y = reference.data();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, _, _) = filter_valid(x, ny, nz, &k);
    let (my, _, _) = filter_valid(y, ny, nz, &k);
    let (sxx, _, _) = filter_valid(&xx, ny, nz, &k);
    let (syy, _, _) = filter_valid(&yy, ny, nz, &k);
    let (sxy, _, _) = filter_valid(&xy, ny, nz, &k);
    let c1 = (SSIM_K1 * range) * (SSIM_K1 * range);
    let c2 = (SSIM_K2 * range) * (SSIM_K2 * range);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

pub fn evaluate(test: &RealGrid, reference: &RealGrid) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr: psnr(test, reference)?,
        nrmse: nrmse(test, reference)?,
        ssim: ssim(test, reference)?,
    })
}
