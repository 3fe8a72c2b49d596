//! Supervised training of the unrolled network on random k-space patches.
//!
//! Gradients are written out by hand. Complex quantities carry cogradients
//! `g = dL/dRe + i dL/dIm`, so a linear map `z = L y` sends `g_z` back as
//! `L^H g_z`; in particular the gradient of the unitary FFT is the inverse
//! FFT. The hard data projection passes the gradient through on the bins it
//! keeps and zeroes it on the bins it replaces.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::slice;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;

use crate::bandpass::{center_of, extract_patch, extract_real, make_window, pad_kspace, pad_real, WindowSpec};
use crate::denoiser::{self, DenoiserTape, NormMode, NormStats};
use crate::exec::Executor;
use crate::grid::{ComplexGrid, MultiCoilKSpace, RealGrid};
use crate::math::{pow, sqrt};
use crate::model::{PatchCenter, PatchOperator, SensitivityMaps};
use crate::network::{patch_gain, project_windowed, UnrolledNetParams};
use crate::sampling::Density;
use crate::{Complex64, Error, Result};

/// Side of the central block whose energy sets the example scale.
pub const NORM_BLOCK: usize = 5;
/// Target root energy of that block after normalization.
pub const NORM_TARGET: f64 = 1e5;

/// Scale factor applied to one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord {
    pub scale: f64,
}

impl NormalizationRecord {
    /// Undoes the normalization.
    pub fn restore(&self, ksp: &mut MultiCoilKSpace) {
        ksp.scale(1.0 / self.scale);
    }
}

/// Energy over coils of the central `NORM_BLOCK x NORM_BLOCK` block.
pub fn center_energy(ksp: &MultiCoilKSpace) -> f64 {
    let (ny, nz) = ksp.dims();
    let h = NORM_BLOCK / 2;
    let rows = (ny / 2).saturating_sub(h)..(ny / 2 + h + 1).min(ny);
    let cols = (nz / 2).saturating_sub(h)..(nz / 2 + h + 1).min(nz);
    let mut e = 0.0;
    for coil in ksp.coils() {
        for r in rows.clone() {
            for c in cols.clone() {
                e += coil[(r, c)].norm_sqr();
            }
        }
    }
    e
}

/// Divides by the root energy of the central block and multiplies by
/// [`NORM_TARGET`].
pub fn normalize_example(ksp: &MultiCoilKSpace) -> Result<(MultiCoilKSpace, NormalizationRecord)> {
    let e = center_energy(ksp);
    if !(e > 0.0) || !e.is_finite() {
        return Err(Error::ZeroEnergy);
    }
    let scale = NORM_TARGET / sqrt(e);
    let mut out = ksp.clone();
    out.scale(scale);
    Ok((out, NormalizationRecord { scale }))
}

fn require_pairs(pred: &[ComplexGrid], truth: &[ComplexGrid]) -> Result<usize> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::ChannelMismatch {
            expected: truth.len(),
            found: pred.len(),
        });
    }
    let mut n = 0;
    for (p, t) in pred.iter().zip(truth) {
        p.require_dims(t.dims())?;
        n += p.data().len();
    }
    Ok(n)
}

/// Mean over complex elements of `|Re diff| + |Im diff|`.
pub fn l1_loss(pred: &[ComplexGrid], truth: &[ComplexGrid]) -> Result<f64> {
    let n = require_pairs(pred, truth)?;
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .flat_map(|(p, t)| p.data().iter().zip(t.data()))
        .map(|(a, b)| (a.re - b.re).abs() + (a.im - b.im).abs())
        .sum();
    Ok(sum / n as f64)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Cogradient of [`l1_loss`] with respect to `pred` (zero at ties).
pub fn l1_loss_grad(pred: &[ComplexGrid], truth: &[ComplexGrid]) -> Result<Vec<ComplexGrid>> {
    let n = require_pairs(pred, truth)? as f64;
    pred.iter()
        .zip(truth)
        .map(|(p, t)| {
            let data = p
                .data()
                .iter()
                .zip(t.data())
                .map(|(a, b)| Complex64::new(sign(a.re - b.re) / n, sign(a.im - b.im) / n))
                .collect();
            ComplexGrid::new(p.ny(), p.nz(), data)
        })
        .collect()
}

/// One training patch, already gain-normalized.
#[derive(Debug, Clone)]
pub struct PatchExample<'a> {
    /// Measured patch, zero where unsampled.
    pub u: MultiCoilKSpace,
    /// Windowed fully sampled patch.
    pub truth: MultiCoilKSpace,
    pub mask: RealGrid,
    pub center: PatchCenter,
    pub maps: &'a SensitivityMaps,
}

/// Every trainable scalar as slices, in a fixed order: per iteration the
/// step followed by the denoiser arrays.
pub fn parameter_groups(params: &UnrolledNetParams) -> Vec<&[f64]> {
    let mut out = Vec::new();
    for it in &params.iterations {
        out.push(slice::from_ref(&it.step));
        out.extend(it.denoiser.trainable());
    }
    out
}

pub fn parameter_groups_mut(params: &mut UnrolledNetParams) -> Vec<&mut [f64]> {
    let mut out = Vec::new();
    for it in &mut params.iterations {
        out.push(slice::from_mut(&mut it.step));
        out.extend(it.denoiser.trainable_mut());
    }
    out
}

/// Zeroed copy used to hold gradients.
pub fn zeros_like(params: &UnrolledNetParams) -> UnrolledNetParams {
    let mut z = params.clone();
    for it in &mut z.iterations {
        it.step = 0.0;
        it.denoiser = it.denoiser.zeros_like();
    }
    z
}

struct Recording {
    /// Data-term gradient `B^H B y - B^H W u` at each iteration input.
    grads: Vec<Vec<ComplexGrid>>,
    tapes: Vec<DenoiserTape>,
    out: MultiCoilKSpace,
}

fn forward_recorded(
    params: &UnrolledNetParams,
    ex: &PatchExample<'_>,
    op: &PatchOperator<'_>,
    mode: NormMode,
) -> Result<Recording> {
    let mut y = op.adjoint_windowed(&ex.u)?;
    let mut grads = Vec::with_capacity(params.n_iter());
    let mut tapes = Vec::with_capacity(params.n_iter());
    for it in &params.iterations {
        let g = op.gradient(&y, &ex.u)?;
        for (yc, gc) in y.iter_mut().zip(&g) {
            yc.add_scaled(Complex64::new(it.step, 0.0), gc)?;
        }
        let (next, tape) = denoiser::forward_taped(&it.denoiser, &y, mode)?;
        grads.push(g);
        tapes.push(tape);
        y = next;
    }
    let mut out = op.full_forward(&y)?;
    out.mul_real(op.window())?;
    project_windowed(&mut out, &ex.u, op.mask(), op.window());
    Ok(Recording { grads, tapes, out })
}

/// Result of one forward and backward pass.
#[derive(Debug, Clone)]
pub struct ExampleGradient {
    pub loss: f64,
    pub grads: UnrolledNetParams,
    /// Normalization statistics per iteration, for the running averages.
    pub stats: Vec<NormStats>,
}

fn operator<'a>(ex: &'a PatchExample<'a>, window: &'a RealGrid) -> Result<PatchOperator<'a>> {
    ex.mask.require_binary()?;
    PatchOperator::new(ex.maps, &ex.mask, window, ex.center)
}

/// Loss of one example without gradients.
pub fn example_loss(params: &UnrolledNetParams, ex: &PatchExample<'_>, window: &RealGrid, mode: NormMode) -> Result<f64> {
    let op = operator(ex, window)?;
    let rec = forward_recorded(params, ex, &op, mode)?;
    l1_loss(rec.out.coils(), ex.truth.coils())
}

/// Loss and exact gradients for every trainable parameter.
pub fn loss_and_grad(
    params: &UnrolledNetParams,
    ex: &PatchExample<'_>,
    window: &RealGrid,
    mode: NormMode,
) -> Result<ExampleGradient> {
    let op = operator(ex, window)?;
    let rec = forward_recorded(params, ex, &op, mode)?;
    let loss = l1_loss(rec.out.coils(), ex.truth.coils())?;

    let mut gk = MultiCoilKSpace::new(l1_loss_grad(rec.out.coils(), ex.truth.coils())?)?;
    // replaced bins do not depend on the network
    for coil in gk.coils_mut() {
        for (v, &m) in coil.data_mut().iter_mut().zip(ex.mask.data()) {
            if m == 1.0 {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }
    gk.mul_real(window)?;
    let mut gy = op.full_adjoint(&gk)?;

    let mut grads = zeros_like(params);
    for (m, it) in params.iterations.iter().enumerate().rev() {
        let gz = denoiser::backward(&it.denoiser, &rec.tapes[m], &gy, &mut grads.iterations[m].denoiser)?;
        // z = y + t (N y - b)
        grads.iterations[m].step = crate::grid::inner_product_channels(&gz, &rec.grads[m])?.re;
        let ngz = op.normal(&gz)?;
        gy = gz;
        for (a, b) in gy.iter_mut().zip(&ngz) {
            a.add_scaled(Complex64::new(it.step, 0.0), b)?;
        }
    }
    let stats = rec.tapes.into_iter().map(DenoiserTape::into_stats).collect();
    Ok(ExampleGradient { loss, grads, stats })
}

/// Worst per-group relative error `|fd - analytic| / |fd|` between the
/// reverse-mode gradient and central differences with step `h`, sampled at
/// about `samples` coordinates per group. Groups whose gradient vanishes
/// identically are measured against a floor of 1e-6 times the largest
/// group norm.
pub fn gradient_check(
    params: &UnrolledNetParams,
    ex: &PatchExample<'_>,
    window: &RealGrid,
    mode: NormMode,
    h: f64,
    samples: usize,
) -> Result<f64> {
    let an = loss_and_grad(params, ex, window, mode)?;
    let analytic: Vec<Vec<f64>> = parameter_groups(&an.grads).iter().map(|g| g.to_vec()).collect();
    let mut per_group = Vec::with_capacity(analytic.len());
    for (k, group) in analytic.iter().enumerate() {
        let stride = (group.len() / samples.max(1)).max(1);
        let (mut num, mut den) = (0.0, 0.0);
        for i in (0..group.len()).step_by(stride) {
            let mut plus = params.clone();
            parameter_groups_mut(&mut plus)[k][i] += h;
            let mut minus = params.clone();
            parameter_groups_mut(&mut minus)[k][i] -= h;
            let fd = (example_loss(&plus, ex, window, mode)? - example_loss(&minus, ex, window, mode)?) / (2.0 * h);
            num += (fd - group[i]) * (fd - group[i]);
            den += fd * fd;
        }
        per_group.push((libm::sqrt(num), libm::sqrt(den)));
    }
    let floor = 1e-6 * per_group.iter().map(|g| g.1).fold(0.0, f64::max);
    Ok(per_group.iter().map(|&(e, n)| e / n.max(floor)).fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch: usize,
    pub steps: usize,
    pub patch: (usize, usize),
    pub stopband: usize,
    pub pad: usize,
    /// Range the per-example reduction factor is drawn from when masks are
    /// generated for a run.
    pub r_range: (f64, f64),
    pub density: Density,
    pub seed: u64,
    /// Draw one batch at the start and reuse it for every step.
    pub fixed_batch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch: 4,
            steps: 1000,
            patch: (32, 32),
            stopband: crate::bandpass::DEFAULT_STOPBAND,
            pad: 10,
            r_range: (3.0, 5.0),
            density: Density::Variable {
                power: crate::sampling::DEFAULT_VD_POWER,
            },
            seed: 0,
            fixed_batch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::invalid("Adam betas must lie in (0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("Adam epsilon must be positive"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be positive"));
        }
        if self.patch.0 < 2 * self.stopband + 1 || self.patch.1 < 2 * self.stopband + 1 {
            return Err(Error::invalid("patch leaves no passband"));
        }
        if !(self.r_range.0 >= 1.0 && self.r_range.1 >= self.r_range.0) {
            return Err(Error::invalid("reduction range must satisfy 1 <= lo <= hi"));
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &UnrolledNetParams) -> Self {
        let shapes: Vec<Vec<f64>> = parameter_groups(params).iter().map(|g| vec![0.0; g.len()]).collect();
        Self {
            m: shapes.clone(),
            v: shapes,
            t: 0,
        }
    }
}

/// Bias-corrected Adam update in place.
pub fn adam_step(params: &mut UnrolledNetParams, grads: &UnrolledNetParams, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    let g = parameter_groups(grads);
    let mut p = parameter_groups_mut(params);
    if g.len() != p.len() || state.m.len() != p.len() {
        return Err(Error::invalid("gradient and parameter layouts differ"));
    }
    state.t += 1;
    let c1 = 1.0 - pow(cfg.beta1, state.t as f64);
    let c2 = 1.0 - pow(cfg.beta2, state.t as f64);
    for (k, (pk, gk)) in p.iter_mut().zip(&g).enumerate() {
        if pk.len() != gk.len() {
            return Err(Error::invalid("gradient and parameter layouts differ"));
        }
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..pk.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gk[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gk[i] * gk[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            pk[i] -= cfg.lr * mh / (sqrt(vh) + cfg.epsilon);
        }
    }
    Ok(())
}

/// A fully sampled example with its full-resolution maps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub kspace: MultiCoilKSpace,
    pub maps: SensitivityMaps,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: UnrolledNetParams,
    pub losses: Vec<LossRecord>,
}

struct Draw {
    example: usize,
    mask: usize,
    origin: (usize, usize),
}

/// Builds the gain-normalized patch for one draw; `None` when the patch
/// has no measured energy.
fn build_patch<'a>(
    padded: &MultiCoilKSpace,
    padded_mask: &RealGrid,
    maps: &'a SensitivityMaps,
    window: &RealGrid,
    origin: (usize, usize),
    patch: (usize, usize),
) -> Result<Option<PatchExample<'a>>> {
    let center = center_of(origin, padded.dims(), patch);
    let full = extract_patch(padded, center, patch)?;
    let mask = extract_real(padded_mask, center, patch)?;
    let mut u = full.clone();
    u.mul_real(&mask)?;
    let Some(g) = patch_gain(&u, &mask, window) else {
        return Ok(None);
    };
    u.scale(g);
    let mut truth = full;
    truth.mul_real(window)?;
    truth.scale(g);
    Ok(Some(PatchExample {
        u,
        truth,
        mask,
        center,
        maps,
    }))
}

/// Draws are retried this many times when a crop carries no measured
/// energy.
const MAX_DRAW_ATTEMPTS: usize = 64;

/// Mini-batch training: each step draws examples, masks and crop offsets,
/// normalizes, runs forward and backward through `exec`, reduces the
/// gradients in batch order and applies Adam. `observer` sees every loss
/// record together with the parameters that produced it.
pub fn train_loop<E, F>(
    dataset: &[TrainExample],
    masks: &[RealGrid],
    init: UnrolledNetParams,
    cfg: &TrainConfig,
    exec: &E,
    mut observer: F,
) -> Result<TrainOutcome>
where
    E: Executor,
    F: FnMut(&LossRecord, &UnrolledNetParams),
{
    cfg.validate()?;
    init.validate()?;
    if cfg.steps == 0 {
        return Ok(TrainOutcome {
            params: init,
            losses: Vec::new(),
        });
    }
    if dataset.is_empty() || masks.is_empty() {
        return Err(Error::invalid("training needs at least one example and one mask"));
    }
    let dims = dataset[0].kspace.dims();
    for ex in dataset {
        if ex.kspace.dims() != dims || ex.maps.dims() != dims {
            return Err(Error::invalid("training examples must share one grid size"));
        }
        if ex.maps.nsets() != init.nsets() {
            return Err(Error::ChannelMismatch {
                expected: init.nsets(),
                found: ex.maps.nsets(),
            });
        }
    }
    for m in masks {
        if m.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: m.dims(),
            });
        }
        m.require_binary()?;
    }
    let padded_dims = (dims.0 + 2 * cfg.pad, dims.1 + 2 * cfg.pad);
    if cfg.patch.0 > padded_dims.0 || cfg.patch.1 > padded_dims.1 {
        return Err(Error::invalid("patch larger than the padded grid"));
    }

    let window = make_window(&WindowSpec::new(cfg.patch.0, cfg.patch.1, cfg.stopband))?;
    let padded: Vec<MultiCoilKSpace> = dataset
        .iter()
        .map(|ex| {
            let (n, _) = normalize_example(&ex.kspace)?;
            pad_kspace(&n, cfg.pad)
        })
        .collect::<Result<_>>()?;
    let padded_masks: Vec<RealGrid> = masks.iter().map(|m| pad_real(m, cfg.pad)).collect::<Result<_>>()?;
    let patch_maps: Vec<SensitivityMaps> = dataset
        .iter()
        .map(|ex| ex.maps.resample(cfg.patch.0, cfg.patch.1))
        .collect::<Result<_>>()?;

    let mut rng = Pcg32::seed_from_u64(cfg.seed);
    let draw_batch = |rng: &mut Pcg32| -> Result<Vec<PatchExample<'_>>> {
        let mut batch = Vec::with_capacity(cfg.batch);
        let mut attempts = 0;
        while batch.len() < cfg.batch {
            attempts += 1;
            if attempts > MAX_DRAW_ATTEMPTS * cfg.batch {
                return Err(Error::invalid("could not draw patches with measured energy"));
            }
            let d = Draw {
                example: rng.gen_range(0..dataset.len()),
                mask: rng.gen_range(0..masks.len()),
                origin: (
                    rng.gen_range(0..=padded_dims.0 - cfg.patch.0),
                    rng.gen_range(0..=padded_dims.1 - cfg.patch.1),
                ),
            };
            if let Some(p) = build_patch(
                &padded[d.example],
                &padded_masks[d.mask],
                &patch_maps[d.example],
                &window,
                d.origin,
                cfg.patch,
            )? {
                batch.push(p);
            }
        }
        Ok(batch)
    };

    let mut params = init;
    let mut state = AdamState::new(&params);
    let mut losses = Vec::with_capacity(cfg.steps);
    let fixed = if cfg.fixed_batch { Some(draw_batch(&mut rng)?) } else { None };
    let samples = cfg.patch.0 * cfg.patch.1;
    for step in 0..cfg.steps {
        let drawn;
        let batch = match &fixed {
            Some(b) => b,
            None => {
                drawn = draw_batch(&mut rng)?;
                &drawn
            }
        };
        let results = exec.run(batch.len(), |i| loss_and_grad(&params, &batch[i], &window, NormMode::PerExample))?;
        let k = results.len() as f64;
        let loss = results.iter().map(|r| r.loss).sum::<f64>() / k;
        let mut total = zeros_like(&params);
        for r in &results {
            for (acc, g) in parameter_groups_mut(&mut total).into_iter().zip(parameter_groups(&r.grads)) {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b / k;
                }
            }
        }
        if let Some(detail) = non_finite(loss, &total) {
            return Err(Error::Divergence { step, detail });
        }
        let record = LossRecord { step, loss };
        observer(&record, &params);
        losses.push(record);

        adam_step(&mut params, &total, &mut state, cfg)?;
        for (m, it) in params.iterations.iter_mut().enumerate() {
            let stats: Vec<&NormStats> = results.iter().map(|r| &r.stats[m]).collect();
            denoiser::update_running_stats(&mut it.denoiser, &stats, samples);
        }
    }
    Ok(TrainOutcome { params, losses })
}

fn non_finite(loss: f64, grads: &UnrolledNetParams) -> Option<String> {
    if !loss.is_finite() {
        return Some(format!("loss is {loss}"));
    }
    for (k, g) in parameter_groups(grads).iter().enumerate() {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Some(format!("gradient group {k} element {i} is {}", g[i]));
        }
    }
    None
}

/// Picks one of `masks` per example with a seeded PRNG; used to spread a
/// fixed mask pool over a dataset reproducibly.
pub fn assign_masks(n: usize, pool: usize, seed: u64) -> Vec<usize> {
    let mut rng = Pcg32::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).map(|i| i % pool.max(1)).collect();
    idx.shuffle(&mut rng);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Serial;
    use crate::model::apply_model;
    use crate::sampling::{generate_mask, MaskSpec};
    use crate::simulate::{make_coils, make_phantom, CoilSpec, PhantomSpec};

    #[test]
    fn normalization_is_idempotent_and_scale_invariant() {
        let maps = make_coils(&CoilSpec::new(3, 1), 16, 16).unwrap();
        let img = make_phantom(&PhantomSpec::new(16, 16, 2)).unwrap();
        let k = apply_model(&[img], &maps).unwrap();
        let (a, rec) = normalize_example(&k).unwrap();
        assert!(rec.scale > 0.0);
        assert!((center_energy(&a) - 1e10).abs() < 1e-6 * 1e10);
        let (b, rec2) = normalize_example(&a).unwrap();
        assert!((rec2.scale - 1.0).abs() < 1e-12);
        for (x, y) in a.coils()[0].data().iter().zip(b.coils()[0].data()) {
            assert!((x - y).norm() <= 1e-12 * x.norm().max(1.0));
        }
        let mut k2 = k.clone();
        k2.scale(2.0);
        let (c, _) = normalize_example(&k2).unwrap();
        for (x, y) in a.coils()[1].data().iter().zip(c.coils()[1].data()) {
            assert!((x - y).norm() <= 1e-12 * x.norm().max(1.0));
        }
        let z = MultiCoilKSpace::zeros(2, 8, 8).unwrap();
        assert_eq!(normalize_example(&z).unwrap_err(), Error::ZeroEnergy);
    }

    #[test]
    fn l1_loss_examples() {
        let t = vec![ComplexGrid::from_fn(4, 4, |r, c| Complex64::new(r as f64, -(c as f64))).unwrap()];
        assert_eq!(l1_loss(&t, &t).unwrap(), 0.0);
        let mut p = t.clone();
        for v in p[0].data_mut() {
            *v += Complex64::new(1.0, 0.0);
        }
        assert_eq!(l1_loss(&p, &t).unwrap(), 1.0);
        let mut rng = Pcg32::seed_from_u64(0);
        let a = vec![ComplexGrid::from_fn(4, 4, |_, _| Complex64::new(rng.gen(), rng.gen())).unwrap()];
        let mut brute = 0.0;
        for i in 0..16 {
            let d = a[0].data()[i] - t[0].data()[i];
            brute += d.re.abs() + d.im.abs();
        }
        assert!((l1_loss(&a, &t).unwrap() - brute / 16.0).abs() < 1e-15);
    }

    #[test]
    fn adam_scalar_step_and_zero_gradient() {
        let cfg = TrainConfig::default();
        let mut p = UnrolledNetParams::identity(1, 1, 2).unwrap();
        let before = p.clone();
        let mut state = AdamState::new(&p);
        let zero = zeros_like(&p);
        adam_step(&mut p, &zero, &mut state, &cfg).unwrap();
        assert_eq!(p, before);

        let mut g = zeros_like(&p);
        g.iterations[0].step = 1.0;
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &g, &mut state, &cfg).unwrap();
        // mhat = 1, vhat = 1: delta = -lr / (1 + eps)
        let delta = p.iterations[0].step - before.iterations[0].step;
        assert!((delta + 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_steps_return_initial_params() {
        let init = UnrolledNetParams::random(2, 1, 4, 3).unwrap();
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let out = train_loop(&[], &[], init.clone(), &cfg, &Serial, |_, _| {}).unwrap();
        assert_eq!(out.params, init);
        assert!(out.losses.is_empty());
    }

    fn tiny_problem() -> (Vec<TrainExample>, Vec<RealGrid>) {
        let n = 24;
        let maps = make_coils(&CoilSpec::new(2, 0), n, n).unwrap();
        let data = (0..3)
            .map(|s| {
                let img = make_phantom(&PhantomSpec::new(n, n, s)).unwrap();
                TrainExample {
                    kspace: apply_model(&[img], &maps).unwrap(),
                    maps: maps.clone(),
                }
            })
            .collect();
        let masks = vec![generate_mask(&MaskSpec::new(n, n, 3.0, Density::Uniform).with_calib(6).with_seed(1)).unwrap()];
        (data, masks)
    }

    #[test]
    fn same_seed_gives_identical_params() {
        let (data, masks) = tiny_problem();
        let cfg = TrainConfig {
            steps: 3,
            batch: 2,
            patch: (16, 16),
            stopband: 3,
            pad: 2,
            ..TrainConfig::default()
        };
        let init = UnrolledNetParams::random(2, 1, 4, 0).unwrap();
        let a = train_loop(&data, &masks, init.clone(), &cfg, &Serial, |_, _| {}).unwrap();
        let b = train_loop(&data, &masks, init, &cfg, &Serial, |_, _| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.losses.len(), 3);
    }

    #[test]
    fn fixed_batch_loss_decreases() {
        let (data, masks) = tiny_problem();
        let cfg = TrainConfig {
            lr: 1e-3,
            steps: 50,
            batch: 2,
            patch: (16, 16),
            stopband: 3,
            pad: 2,
            seed: 0,
            fixed_batch: true,
            ..TrainConfig::default()
        };
        let init = UnrolledNetParams::random(2, 1, 8, 0).unwrap();
        let out = train_loop(&data, &masks, init, &cfg, &Serial, |_, _| {}).unwrap();
        let l: Vec<f64> = out.losses.iter().map(|r| r.loss).collect();
        assert!(l.windows(2).all(|w| w[1] < w[0]), "{l:?}");
    }
}
