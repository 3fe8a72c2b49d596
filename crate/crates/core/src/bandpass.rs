//! Bandpass bookkeeping: tapered windows, k-space zero-padding, patch
//! tiling, extraction, window-weighted recombination and hard data
//! projection.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::grid::{ComplexGrid, MultiCoilKSpace, RealGrid};
use crate::math::{exp, floor};
use crate::model::PatchCenter;
use crate::{Error, Result};

/// Stopband used throughout unless configured otherwise.
pub const DEFAULT_STOPBAND: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub patch_ny: usize,
    pub patch_nz: usize,
    pub stopband: usize,
}

impl WindowSpec {
    pub fn new(patch_ny: usize, patch_nz: usize, stopband: usize) -> Self {
        Self {
            patch_ny,
            patch_nz,
            stopband,
        }
    }

    pub fn passband(&self) -> (usize, usize) {
        (
            self.patch_ny.saturating_sub(2 * self.stopband),
            self.patch_nz.saturating_sub(2 * self.stopband),
        )
    }
}

/// One axis of the window: the passband indicator `[s, n - s)` convolved
/// with a Gaussian of standard deviation `s / 3` truncated at `+-s`, scaled
/// so its peak is one.
pub fn window_profile(n: usize, stopband: usize) -> Result<Vec<f64>> {
    if n < 2 * stopband + 1 {
        return Err(Error::invalid(alloc::format!(
            "patch length {n} leaves no passband with stopband {stopband}"
        )));
    }
    if stopband == 0 {
        return Ok(vec![1.0; n]);
    }
    let s = stopband as i64;
    let sigma = stopband as f64 / 3.0;
    let kernel: Vec<f64> = (-s..=s)
        .map(|k| exp(-((k * k) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let total: f64 = kernel.iter().sum();
    let (lo, hi) = (s, n as i64 - s);
    let mut w = vec![0.0; n];
    // evaluate the lower half and mirror so the profile is exactly symmetric
    for i in 0..(n + 1) / 2 {
        let mut acc = 0.0;
        for (j, g) in kernel.iter().enumerate() {
            let src = (i as i64 - (j as i64 - s)).rem_euclid(n as i64);
            if src >= lo && src < hi {
                acc += g;
            }
        }
        w[i] = acc / total;
        w[n - 1 - i] = w[i];
    }
    let peak = w.iter().copied().fold(0.0, f64::max);
    if peak != 1.0 {
        for v in &mut w {
            *v /= peak;
        }
    }
    Ok(w)
}

/// Separable 2-D window built from [`window_profile`] on each axis.
pub fn make_window(spec: &WindowSpec) -> Result<RealGrid> {
    let wy = window_profile(spec.patch_ny, spec.stopband)?;
    let wz = window_profile(spec.patch_nz, spec.stopband)?;
    RealGrid::from_fn(spec.patch_ny, spec.patch_nz, |r, c| wy[r] * wz[c])
}

fn pad_grid<T: Copy>(data: &[T], ny: usize, nz: usize, pad: usize, zero: T) -> Vec<T> {
    let (py, pz) = (ny + 2 * pad, nz + 2 * pad);
    let mut out = vec![zero; py * pz];
    for r in 0..ny {
        let dst = (r + pad) * pz + pad;
        out[dst..dst + nz].copy_from_slice(&data[r * nz..(r + 1) * nz]);
    }
    out
}

fn crop_grid<T: Copy>(data: &[T], ny: usize, nz: usize, pad: usize) -> Result<Vec<T>> {
    if ny <= 2 * pad || nz <= 2 * pad {
        return Err(Error::invalid("crop removes the whole grid"));
    }
    let (cy, cz) = (ny - 2 * pad, nz - 2 * pad);
    let mut out = Vec::with_capacity(cy * cz);
    for r in pad..ny - pad {
        out.extend_from_slice(&data[r * nz + pad..r * nz + pad + cz]);
    }
    Ok(out)
}

/// Adds a zero border of `pad` bins on every k-space edge. The DC bin moves
/// from `n / 2` to `n / 2 + pad`, which is the DC of the padded grid.
pub fn pad_kspace(ksp: &MultiCoilKSpace, pad: usize) -> Result<MultiCoilKSpace> {
    if pad == 0 {
        return Ok(ksp.clone());
    }
    let (ny, nz) = ksp.dims();
    let coils = ksp
        .coils()
        .iter()
        .map(|c| {
            ComplexGrid::new(
                ny + 2 * pad,
                nz + 2 * pad,
                pad_grid(c.data(), ny, nz, pad, Complex64::new(0.0, 0.0)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    MultiCoilKSpace::new(coils)
}

/// Removes a border of `pad` bins; inverse of [`pad_kspace`].
pub fn crop_kspace(ksp: &MultiCoilKSpace, pad: usize) -> Result<MultiCoilKSpace> {
    if pad == 0 {
        return Ok(ksp.clone());
    }
    let (ny, nz) = ksp.dims();
    let coils = ksp
        .coils()
        .iter()
        .map(|c| ComplexGrid::new(ny - 2 * pad, nz - 2 * pad, crop_grid(c.data(), ny, nz, pad)?))
        .collect::<Result<Vec<_>>>()?;
    MultiCoilKSpace::new(coils)
}

pub fn pad_real(grid: &RealGrid, pad: usize) -> Result<RealGrid> {
    let (ny, nz) = grid.dims();
    RealGrid::new(ny + 2 * pad, nz + 2 * pad, pad_grid(grid.data(), ny, nz, pad, 0.0))
}

pub fn crop_real(grid: &RealGrid, pad: usize) -> Result<RealGrid> {
    let (ny, nz) = grid.dims();
    RealGrid::new(ny - 2 * pad, nz - 2 * pad, crop_grid(grid.data(), ny, nz, pad)?)
}

/// Patch tiling of the padded full grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGeometry {
    pub full_ny: usize,
    pub full_nz: usize,
    pub patch_ny: usize,
    pub patch_nz: usize,
    pub overlap_y: f64,
    pub overlap_z: f64,
    pub stopband: usize,
    pub centers: Vec<PatchCenter>,
}

impl PatchGeometry {
    pub fn full_dims(&self) -> (usize, usize) {
        (self.full_ny, self.full_nz)
    }

    pub fn patch_dims(&self) -> (usize, usize) {
        (self.patch_ny, self.patch_nz)
    }

    /// Top-left bin of the patch with the given center.
    pub fn origin(&self, center: PatchCenter) -> Result<(usize, usize)> {
        patch_origin(center, self.full_dims(), self.patch_dims())
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec::new(self.patch_ny, self.patch_nz, self.stopband)
    }
}

/// Top-left bin of a patch whose center bin (`patch / 2`) sits at `center`
/// relative to the full-grid DC (`full / 2`).
pub fn patch_origin(center: PatchCenter, full: (usize, usize), patch: (usize, usize)) -> Result<(usize, usize)> {
    let oy = center.ky + (full.0 / 2) as i64 - (patch.0 / 2) as i64;
    let oz = center.kz + (full.1 / 2) as i64 - (patch.1 / 2) as i64;
    if oy < 0 || oz < 0 || oy as usize + patch.0 > full.0 || oz as usize + patch.1 > full.1 {
        return Err(Error::OutOfBounds {
            y: oy,
            z: oz,
            patch,
            full,
        });
    }
    Ok((oy as usize, oz as usize))
}

/// Center offset of the patch whose top-left bin is `origin`.
pub fn center_of(origin: (usize, usize), full: (usize, usize), patch: (usize, usize)) -> PatchCenter {
    PatchCenter::new(
        (origin.0 + patch.0 / 2) as i64 - (full.0 / 2) as i64,
        (origin.1 + patch.1 / 2) as i64 - (full.1 / 2) as i64,
    )
}

/// Stride `floor(patch * (1 - overlap))`, at least one.
pub fn stride(patch: usize, overlap: f64) -> usize {
    let s = floor(patch as f64 * (1.0 - overlap) + 1e-9) as usize;
    s.max(1)
}

fn axis_starts(full: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut s = 0;
    while s + patch < full {
        starts.push(s);
        s += stride;
    }
    // last patch sits flush with the far edge
    starts.push(full - patch);
    starts
}

/// Bins along one axis that are neither inside some passband nor shared by
/// at least two patches. The outer `stopband` bins on each side are the
/// zero-padded margin and are not checked.
fn uncovered_axis(full: usize, patch: usize, starts: &[usize], stopband: usize) -> Vec<usize> {
    let mut count = vec![0usize; full];
    let mut pass = vec![false; full];
    for &s in starts {
        for i in s..s + patch {
            count[i] += 1;
        }
        for i in s + stopband..s + patch - stopband {
            pass[i] = true;
        }
    }
    (stopband.min(full)..full.saturating_sub(stopband))
        .filter(|&i| !pass[i] && count[i] < 2)
        .collect()
}

/// Lays patch centers on a regular grid with stride
/// `floor(patch * (1 - overlap))`, shifting the last row/column inward.
///
/// A bin counts as covered when it lies in some patch passband or is shared
/// by two or more patches, so the tiling is accepted once neighbouring
/// patches overlap by at least the stopband. Tilings that leave bins
/// uncovered are rejected with the full list of those bins.
pub fn plan_patches(
    full: (usize, usize),
    patch: (usize, usize),
    overlap: (f64, f64),
    stopband: usize,
) -> Result<PatchGeometry> {
    let (fy, fz) = full;
    let (py, pz) = patch;
    if py == 0 || pz == 0 || py > fy || pz > fz {
        return Err(Error::invalid(alloc::format!(
            "patch {patch:?} does not fit in grid {full:?}"
        )));
    }
    for o in [overlap.0, overlap.1] {
        if !(0.0..1.0).contains(&o) {
            return Err(Error::invalid(alloc::format!("overlap {o} outside [0, 1)")));
        }
    }
    if py < 2 * stopband + 1 || pz < 2 * stopband + 1 {
        return Err(Error::invalid("patch leaves no passband"));
    }
    let ys = axis_starts(fy, py, stride(py, overlap.0));
    let zs = axis_starts(fz, pz, stride(pz, overlap.1));
    let bad_y = uncovered_axis(fy, py, &ys, stopband);
    let bad_z = uncovered_axis(fz, pz, &zs, stopband);
    if !bad_y.is_empty() || !bad_z.is_empty() {
        let lo = stopband;
        let mut uncovered = Vec::new();
        for r in lo..fy.saturating_sub(lo) {
            for c in lo..fz.saturating_sub(lo) {
                if bad_y.binary_search(&r).is_ok() || bad_z.binary_search(&c).is_ok() {
                    uncovered.push((r, c));
                }
            }
        }
        return Err(Error::Coverage { uncovered });
    }
    let mut centers = Vec::with_capacity(ys.len() * zs.len());
    for &y in &ys {
        for &z in &zs {
            centers.push(center_of((y, z), full, patch));
        }
    }
    Ok(PatchGeometry {
        full_ny: fy,
        full_nz: fz,
        patch_ny: py,
        patch_nz: pz,
        overlap_y: overlap.0,
        overlap_z: overlap.1,
        stopband,
        centers,
    })
}

fn copy_block<T: Copy>(src: &[T], src_nz: usize, origin: (usize, usize), patch: (usize, usize)) -> Vec<T> {
    let mut out = Vec::with_capacity(patch.0 * patch.1);
    for r in 0..patch.0 {
        let start = (origin.0 + r) * src_nz + origin.1;
        out.extend_from_slice(&src[start..start + patch.1]);
    }
    out
}

/// Contiguous sub-block copy around `center`; no window is applied.
pub fn extract_patch(ksp: &MultiCoilKSpace, center: PatchCenter, patch: (usize, usize)) -> Result<MultiCoilKSpace> {
    let full = ksp.dims();
    let origin = patch_origin(center, full, patch)?;
    let coils = ksp
        .coils()
        .iter()
        .map(|c| ComplexGrid::new(patch.0, patch.1, copy_block(c.data(), full.1, origin, patch)))
        .collect::<Result<Vec<_>>>()?;
    MultiCoilKSpace::new(coils)
}

/// Same as [`extract_patch`] for masks and other real grids.
pub fn extract_real(grid: &RealGrid, center: PatchCenter, patch: (usize, usize)) -> Result<RealGrid> {
    let full = grid.dims();
    let origin = patch_origin(center, full, patch)?;
    RealGrid::new(patch.0, patch.1, copy_block(grid.data(), full.1, origin, patch))
}

/// Writes a patch back into the full grid at `center`.
pub fn insert_patch(full: &mut MultiCoilKSpace, center: PatchCenter, patch: &MultiCoilKSpace) -> Result<()> {
    full.require_same_shape(patch)?;
    let dims = full.dims();
    let pdims = patch.dims();
    let origin = patch_origin(center, dims, pdims)?;
    for (dst, src) in full.coils_mut().iter_mut().zip(patch.coils()) {
        for r in 0..pdims.0 {
            let start = (origin.0 + r) * dims.1 + origin.1;
            dst.data_mut()[start..start + pdims.1].copy_from_slice(&src.data()[r * pdims.1..(r + 1) * pdims.1]);
        }
    }
    Ok(())
}

/// Averages windowed patch outputs onto the full grid: every bin becomes the
/// sum of contributing patch values divided by the sum of contributing
/// window weights. Accumulation follows the order of `patches`.
pub fn recombine(
    patches: &[(PatchCenter, MultiCoilKSpace)],
    geometry: &PatchGeometry,
    window: &RealGrid,
) -> Result<MultiCoilKSpace> {
    let full = geometry.full_dims();
    let pdims = geometry.patch_dims();
    if window.dims() != pdims {
        return Err(Error::DimensionMismatch {
            expected: pdims,
            found: window.dims(),
        });
    }
    let first = patches
        .first()
        .ok_or_else(|| Error::invalid("no patches to recombine"))?;
    let nc = first.1.nc();
    let mut acc = MultiCoilKSpace::zeros(nc, full.0, full.1)?;
    let mut weight = vec![0.0; full.0 * full.1];
    for (center, out) in patches {
        if out.dims() != pdims {
            return Err(Error::DimensionMismatch {
                expected: pdims,
                found: out.dims(),
            });
        }
        if out.nc() != nc {
            return Err(Error::ChannelMismatch {
                expected: nc,
                found: out.nc(),
            });
        }
        let (oy, oz) = patch_origin(*center, full, pdims)?;
        for r in 0..pdims.0 {
            let row = (oy + r) * full.1 + oz;
            let wrow = &window.data()[r * pdims.1..(r + 1) * pdims.1];
            for (w, acc_w) in wrow.iter().zip(&mut weight[row..row + pdims.1]) {
                *acc_w += w;
            }
            for (dst, src) in acc.coils_mut().iter_mut().zip(out.coils()) {
                let srow = &src.data()[r * pdims.1..(r + 1) * pdims.1];
                for (d, s) in dst.data_mut()[row..row + pdims.1].iter_mut().zip(srow) {
                    *d += s;
                }
            }
        }
    }
    let uncovered: Vec<(usize, usize)> = weight
        .iter()
        .enumerate()
        .filter(|(_, &w)| w <= 0.0)
        .map(|(i, _)| (i / full.1, i % full.1))
        .collect();
    if !uncovered.is_empty() {
        return Err(Error::Coverage { uncovered });
    }
    for coil in acc.coils_mut() {
        for (v, &w) in coil.data_mut().iter_mut().zip(&weight) {
            *v /= w;
        }
    }
    Ok(acc)
}

/// Replaces reconstructed bins with measured ones wherever the mask is one.
/// Measured values are copied, so sampled bins match bit for bit.
pub fn hard_data_projection(
    recon: &MultiCoilKSpace,
    measured: &MultiCoilKSpace,
    mask: &RealGrid,
) -> Result<MultiCoilKSpace> {
    recon.require_same_shape(measured)?;
    if mask.dims() != recon.dims() {
        return Err(Error::DimensionMismatch {
            expected: recon.dims(),
            found: mask.dims(),
        });
    }
    mask.require_binary()?;
    let mut out = recon.clone();
    for (dst, src) in out.coils_mut().iter_mut().zip(measured.coils()) {
        for ((d, s), &m) in dst.data_mut().iter_mut().zip(src.data()).zip(mask.data()) {
            if m == 1.0 {
                *d = *s;
            }
        }
    }
    Ok(out)
}
