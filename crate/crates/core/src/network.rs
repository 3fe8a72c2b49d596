//! The unrolled reconstruction network and the patch-parallel pipeline
//! around it (inference only; gradients live in `training`).

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_pcg::Pcg32;

use crate::bandpass::{
    crop_kspace, extract_patch, extract_real, hard_data_projection, make_window, pad_kspace, pad_real, recombine,
    PatchGeometry,
};
use crate::denoiser::{self, DenoiserParams, NormMode};
use crate::exec::Executor;
use crate::grid::{ComplexGrid, MultiCoilKSpace, RealGrid};
use crate::math::sqrt;
use crate::model::{apply_model_adjoint, PatchOperator, SensitivityMaps};
use crate::{Complex64, Error, Result};

/// Step size every iteration starts from before training.
pub const INITIAL_STEP: f64 = -2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Iteration {
    pub step: f64,
    pub denoiser: DenoiserParams,
}

/// Per-iteration step sizes and denoiser weights.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledNetParams {
    pub iterations: Vec<Iteration>,
}

impl UnrolledNetParams {
    /// Random denoisers (independent per iteration), steps at
    /// [`INITIAL_STEP`].
    pub fn random(n_iter: usize, nsets: usize, features: usize, seed: u64) -> Result<Self> {
        if n_iter == 0 {
            return Err(Error::invalid("network needs at least one iteration"));
        }
        let mut rng = Pcg32::seed_from_u64(seed);
        let iterations = (0..n_iter)
            .map(|_| {
                Ok(Iteration {
                    step: INITIAL_STEP,
                    denoiser: DenoiserParams::random(nsets, features, &mut rng)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { iterations })
    }

    /// Zero steps and identity denoisers: the network returns `B^H W u`
    /// mapped back to k-space.
    pub fn identity(n_iter: usize, nsets: usize, features: usize) -> Result<Self> {
        if n_iter == 0 {
            return Err(Error::invalid("network needs at least one iteration"));
        }
        let iterations = (0..n_iter)
            .map(|_| {
                Ok(Iteration {
                    step: 0.0,
                    denoiser: DenoiserParams::identity(nsets, features)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { iterations })
    }

    pub fn n_iter(&self) -> usize {
        self.iterations.len()
    }

    pub fn nsets(&self) -> usize {
        self.iterations[0].denoiser.nsets()
    }

    pub fn feature_width(&self) -> usize {
        self.iterations[0].denoiser.feature_width()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .iterations
            .first()
            .ok_or_else(|| Error::invalid("network needs at least one iteration"))?;
        let shape = (first.denoiser.nsets(), first.denoiser.feature_width());
        for it in &self.iterations {
            it.denoiser.validate()?;
            if (it.denoiser.nsets(), it.denoiser.feature_width()) != shape {
                return Err(Error::invalid("iterations disagree on denoiser shape"));
            }
            if !it.step.is_finite() {
                return Err(Error::invalid("non-finite step size"));
            }
        }
        Ok(())
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.iterations
            .iter()
            .map(|it| 1 + it.denoiser.trainable().iter().map(|a| a.len()).sum::<usize>())
            .sum()
    }
}

/// `y + t * (B^H B y - B^H W u)`
pub fn update_block(y: &[ComplexGrid], u: &MultiCoilKSpace, op: &PatchOperator<'_>, t: f64) -> Result<Vec<ComplexGrid>> {
    let grad = op.gradient(y, u)?;
    let mut out = y.to_vec();
    for (o, g) in out.iter_mut().zip(&grad) {
        o.add_scaled(Complex64::new(t, 0.0), g)?;
    }
    Ok(out)
}

pub fn denoise_block(y: &[ComplexGrid], params: &DenoiserParams, mode: NormMode) -> Result<Vec<ComplexGrid>> {
    denoiser::forward(params, y, mode)
}

/// Replaces the bins where `mask == 1` with `W u`.
pub(crate) fn project_windowed(out: &mut MultiCoilKSpace, u: &MultiCoilKSpace, mask: &RealGrid, window: &RealGrid) {
    for (oc, uc) in out.coils_mut().iter_mut().zip(u.coils()) {
        for (i, o) in oc.data_mut().iter_mut().enumerate() {
            if mask.data()[i] == 1.0 {
                *o = uc.data()[i] * window.data()[i];
            }
        }
    }
}

/// Normalization used at inference unless a caller asks otherwise.
pub const INFERENCE_NORM: NormMode = NormMode::PerExample;

/// Reconstructs one patch with [`INFERENCE_NORM`].
pub fn reconstruct_patch(u: &MultiCoilKSpace, op: &PatchOperator<'_>, params: &UnrolledNetParams) -> Result<MultiCoilKSpace> {
    reconstruct_patch_with_mode(u, op, params, INFERENCE_NORM)
}

/// `y0 = B^H W u`, then per iteration an update block and a denoising
/// block; the result is `W A (phase * y)` over the whole patch with the
/// sampled bins replaced by `W u`.
pub fn reconstruct_patch_with_mode(
    u: &MultiCoilKSpace,
    op: &PatchOperator<'_>,
    params: &UnrolledNetParams,
    mode: NormMode,
) -> Result<MultiCoilKSpace> {
    op.mask().require_binary()?;
    if params.nsets() != op.nsets() {
        return Err(Error::ChannelMismatch {
            expected: op.nsets(),
            found: params.nsets(),
        });
    }
    let mut y = op.adjoint_windowed(u)?;
    for it in &params.iterations {
        y = update_block(&y, u, op, it.step)?;
        y = denoise_block(&y, &it.denoiser, mode)?;
    }
    let mut out = op.full_forward(&y)?;
    out.mul_real(op.window())?;
    project_windowed(&mut out, u, op.mask(), op.window());
    Ok(out)
}

/// Amplitude normalization applied to a patch before it enters the network:
/// one over the RMS of `W u` over sampled bins and coils. `None` when the
/// patch carries no measured energy.
pub fn patch_gain(u: &MultiCoilKSpace, mask: &RealGrid, window: &RealGrid) -> Option<f64> {
    let mut energy = 0.0;
    let mut count = 0usize;
    for coil in u.coils() {
        for ((v, &m), &w) in coil.data().iter().zip(mask.data()).zip(window.data()) {
            if m != 0.0 {
                energy += (v * w).norm_sqr();
                count += 1;
            }
        }
    }
    if count == 0 || !(energy > 0.0) {
        return None;
    }
    Some(1.0 / sqrt(energy / count as f64))
}

/// [`reconstruct_patch_with_mode`] on the gain-normalized patch, scaled
/// back afterwards. A patch without measured energy comes back as `W u`.
pub fn reconstruct_patch_normalized(
    u: &MultiCoilKSpace,
    op: &PatchOperator<'_>,
    params: &UnrolledNetParams,
    mode: NormMode,
) -> Result<MultiCoilKSpace> {
    let Some(g) = patch_gain(u, op.mask(), op.window()) else {
        let mut out = u.clone();
        out.mul_real(op.window())?;
        return Ok(out);
    };
    let mut un = u.clone();
    un.scale(g);
    let mut out = reconstruct_patch_with_mode(&un, op, params, mode)?;
    out.scale(1.0 / g);
    project_windowed(&mut out, u, op.mask(), op.window());
    Ok(out)
}

/// Full-grid k-space and its image.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub kspace: MultiCoilKSpace,
    /// One channel per map set.
    pub image: Vec<ComplexGrid>,
}

/// Symmetric zero padding implied by a geometry for an unpadded grid.
pub fn geometry_pad(dims: (usize, usize), geometry: &PatchGeometry) -> Result<usize> {
    let (fy, fz) = geometry.full_dims();
    if fy < dims.0 || fz < dims.1 || (fy - dims.0) % 2 != 0 || fy - dims.0 != fz - dims.1 {
        return Err(Error::invalid(alloc::format!(
            "geometry grid {:?} is not a symmetric padding of {dims:?}",
            (fy, fz)
        )));
    }
    Ok((fy - dims.0) / 2)
}

/// Pads, reconstructs every patch through `exec`, recombines, crops,
/// enforces the measured samples on the full grid and applies `A^H`.
///
/// `maps` are full-resolution profiles; patches use them resampled to the
/// patch dimensions. `ksp` and `mask` are unpadded.
pub fn reconstruct_full<E: Executor>(
    ksp: &MultiCoilKSpace,
    maps: &SensitivityMaps,
    mask: &RealGrid,
    geometry: &PatchGeometry,
    params: &UnrolledNetParams,
    mode: NormMode,
    exec: &E,
) -> Result<Reconstruction> {
    params.validate()?;
    mask.require_binary()?;
    let dims = ksp.dims();
    if maps.dims() != dims || mask.dims() != dims {
        return Err(Error::DimensionMismatch {
            expected: dims,
            found: if maps.dims() != dims { maps.dims() } else { mask.dims() },
        });
    }
    if maps.nc() != ksp.nc() {
        return Err(Error::ChannelMismatch {
            expected: maps.nc(),
            found: ksp.nc(),
        });
    }
    let pad = geometry_pad(dims, geometry)?;
    let mut measured = ksp.clone();
    measured.mul_real(mask)?;
    let padded = pad_kspace(&measured, pad)?;
    let padded_mask = pad_real(mask, pad)?;

    let pdims = geometry.patch_dims();
    let window = make_window(&geometry.window_spec())?;
    let patch_maps = maps.resample(pdims.0, pdims.1)?;
    let centers = &geometry.centers;
    let outputs = exec.run(centers.len(), |i| {
        let c = centers[i];
        let u = extract_patch(&padded, c, pdims)?;
        let m = extract_real(&padded_mask, c, pdims)?;
        let op = PatchOperator::new(&patch_maps, &m, &window, c)?;
        reconstruct_patch_normalized(&u, &op, params, mode)
    })?;
    let pairs: Vec<_> = centers.iter().copied().zip(outputs).collect();
    let full = recombine(&pairs, geometry, &window)?;
    let cropped = crop_kspace(&full, pad)?;
    let kspace = hard_data_projection(&cropped, &measured, mask)?;
    let image = apply_model_adjoint(&kspace, maps)?;
    Ok(Reconstruction { kspace, image })
}

/// Zero-filled baseline `A^H (M k)`.
pub fn zero_filled(ksp: &MultiCoilKSpace, maps: &SensitivityMaps, mask: &RealGrid) -> Result<Vec<ComplexGrid>> {
    let mut m = ksp.clone();
    m.mul_real(mask)?;
    apply_model_adjoint(&m, maps)
}
