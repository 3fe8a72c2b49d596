//! Imaging model `A` (sensitivity weighting followed by the 2-D FFT), the
//! per-patch operator `B = W M A (phase *)` and their adjoints.
//!
//! A latent image is a slice of complex channels, one per map set. With two
//! map sets the forward model sums both set contributions into each coil and
//! the adjoint returns one channel per set.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::fft::Fft2Plan;
use crate::grid::{ComplexGrid, MultiCoilKSpace, RealGrid};
use crate::math::{cis, sqrt};
use crate::{Error, Result};

/// Tolerance on the per-pixel energy bound `sum |S|^2 <= 1`.
pub const MAP_ENERGY_TOLERANCE: f64 = 1e-6;

/// Coil sensitivity profiles, indexed `[set][coil]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMaps {
    ny: usize,
    nz: usize,
    sets: Vec<Vec<ComplexGrid>>,
}

impl SensitivityMaps {
    /// Validates shapes, set count (1 or 2) and the per-pixel energy bound.
    pub fn new(sets: Vec<Vec<ComplexGrid>>) -> Result<Self> {
        let maps = Self::unchecked(sets)?;
        let energy = maps.pixel_energy();
        if let Some(i) = energy.iter().position(|&e| !(e <= 1.0 + MAP_ENERGY_TOLERANCE)) {
            return Err(Error::invalid(alloc::format!(
                "sensitivity energy {} exceeds 1 at pixel {i}",
                energy[i]
            )));
        }
        Ok(maps)
    }

    /// Like [`SensitivityMaps::new`] but rescales every pixel whose energy
    /// exceeds one down onto the unit bound.
    pub fn normalized(sets: Vec<Vec<ComplexGrid>>) -> Result<Self> {
        let mut maps = Self::unchecked(sets)?;
        let energy = maps.pixel_energy();
        for set in &mut maps.sets {
            for coil in set.iter_mut() {
                for (v, &e) in coil.data_mut().iter_mut().zip(&energy) {
                    if e > 1.0 {
                        *v /= sqrt(e);
                    }
                }
            }
        }
        Ok(maps)
    }

    fn unchecked(sets: Vec<Vec<ComplexGrid>>) -> Result<Self> {
        if sets.is_empty() || sets.len() > 2 {
            return Err(Error::invalid("sensitivity maps need one or two map sets"));
        }
        let nc = sets[0].len();
        if nc == 0 {
            return Err(Error::invalid("sensitivity maps need at least one coil"));
        }
        let dims = sets[0][0].dims();
        for set in &sets {
            if set.len() != nc {
                return Err(Error::ChannelMismatch {
                    expected: nc,
                    found: set.len(),
                });
            }
            for m in set {
                sets[0][0].require_dims(m.dims())?;
            }
        }
        Ok(Self {
            ny: dims.0,
            nz: dims.1,
            sets,
        })
    }

    /// Single coil, single set, `S = 1` everywhere.
    pub fn unit(ny: usize, nz: usize) -> Result<Self> {
        let one = ComplexGrid::from_fn(ny, nz, |_, _| Complex64::new(1.0, 0.0))?;
        Self::new(vec![vec![one]])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.ny, self.nz)
    }

    pub fn nsets(&self) -> usize {
        self.sets.len()
    }

    pub fn nc(&self) -> usize {
        self.sets[0].len()
    }

    pub fn map(&self, set: usize, coil: usize) -> &ComplexGrid {
        &self.sets[set][coil]
    }

    pub fn sets(&self) -> &[Vec<ComplexGrid>] {
        &self.sets
    }

    /// `sum over sets and coils of |S|^2` per pixel.
    pub fn pixel_energy(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.ny * self.nz];
        for set in &self.sets {
            for coil in set {
                for (acc, v) in e.iter_mut().zip(coil.data()) {
                    *acc += v.norm_sqr();
                }
            }
        }
        e
    }

    /// Resamples the profiles onto an `ny x nz` grid spanning the same field
    /// of view by cropping or zero-padding their centered spectra. Used to
    /// derive patch-sized maps from full-resolution ones.
    pub fn resample(&self, ny: usize, nz: usize) -> Result<Self> {
        if (ny, nz) == self.dims() {
            return Ok(self.clone());
        }
        let src = Fft2Plan::new(self.ny, self.nz)?;
        let dst = Fft2Plan::new(ny, nz)?;
        let gain = sqrt((ny * nz) as f64 / (self.ny * self.nz) as f64);
        let mut sets = Vec::with_capacity(self.sets.len());
        for set in &self.sets {
            let mut coils = Vec::with_capacity(set.len());
            for m in set {
                let mut k = m.clone();
                src.forward(&mut k)?;
                let mut out = ComplexGrid::zeros(ny, nz)?;
                let (sy, sz) = (self.ny as i64 / 2, self.nz as i64 / 2);
                let (dy, dz) = (ny as i64 / 2, nz as i64 / 2);
                for r in 0..ny as i64 {
                    let rs = r - dy + sy;
                    if rs < 0 || rs >= self.ny as i64 {
                        continue;
                    }
                    for c in 0..nz as i64 {
                        let cs = c - dz + sz;
                        if cs < 0 || cs >= self.nz as i64 {
                            continue;
                        }
                        out[(r as usize, c as usize)] = k[(rs as usize, cs as usize)] * gain;
                    }
                }
                dst.inverse(&mut out)?;
                coils.push(out);
            }
            sets.push(coils);
        }
        Self::normalized(sets)
    }
}

/// Integer offset of a patch center from the DC bin of the padded full grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PatchCenter {
    pub ky: i64,
    pub kz: i64,
}

impl PatchCenter {
    pub const DC: PatchCenter = PatchCenter { ky: 0, kz: 0 };

    pub fn new(ky: i64, kz: i64) -> Self {
        Self { ky, kz }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseDirection {
    Forward,
    Inverse,
}

/// `exp(+-i 2 pi (ky (r - ny/2) / ny + kz (c - nz/2) / nz))` per pixel.
///
/// Coordinates are measured from the image center, matching the centered
/// FFT, so that the forward modulation is exactly a circular shift of the
/// spectrum by `(ky, kz)` bins.
fn phase_ramp(ny: usize, nz: usize, center: PatchCenter, dir: PhaseDirection) -> Vec<Complex64> {
    let sign = match dir {
        PhaseDirection::Forward => 1.0,
        PhaseDirection::Inverse => -1.0,
    };
    let (cy, cz) = ((ny / 2) as i64, (nz / 2) as i64);
    // reduce the integer products before scaling to keep the phase exact-ish
    let row: Vec<Complex64> = (0..ny as i64)
        .map(|r| {
            let m = (center.ky * (r - cy)).rem_euclid(ny as i64);
            cis(sign * 2.0 * PI * m as f64 / ny as f64)
        })
        .collect();
    let col: Vec<Complex64> = (0..nz as i64)
        .map(|c| {
            let m = (center.kz * (c - cz)).rem_euclid(nz as i64);
            cis(sign * 2.0 * PI * m as f64 / nz as f64)
        })
        .collect();
    let mut out = Vec::with_capacity(ny * nz);
    for r in &row {
        for c in &col {
            out.push(r * c);
        }
    }
    out
}

/// Pointwise phase modulation that moves the image spectrum by the patch
/// center offset.
pub fn phase_modulate(img: &ComplexGrid, center: PatchCenter, dir: PhaseDirection) -> ComplexGrid {
    let ramp = phase_ramp(img.ny(), img.nz(), center, dir);
    let mut out = img.clone();
    for (v, p) in out.data_mut().iter_mut().zip(&ramp) {
        *v *= p;
    }
    out
}

fn check_image(img: &[ComplexGrid], maps: &SensitivityMaps) -> Result<()> {
    if img.len() != maps.nsets() {
        return Err(Error::ChannelMismatch {
            expected: maps.nsets(),
            found: img.len(),
        });
    }
    for ch in img {
        ch.require_dims(maps.dims())?;
    }
    Ok(())
}

fn check_kspace(ksp: &MultiCoilKSpace, maps: &SensitivityMaps) -> Result<()> {
    if ksp.nc() != maps.nc() {
        return Err(Error::ChannelMismatch {
            expected: maps.nc(),
            found: ksp.nc(),
        });
    }
    ksp.coils()[0].require_dims(maps.dims())
}

/// `A`: per coil, FFT of the set-summed sensitivity-weighted image.
pub fn apply_model(img: &[ComplexGrid], maps: &SensitivityMaps) -> Result<MultiCoilKSpace> {
    check_image(img, maps)?;
    let plan = Fft2Plan::new(maps.ny, maps.nz)?;
    model_forward(img, maps, &plan)
}

/// `A^H`: per set, sum over coils of `conj(S) * ifft2(k)`.
pub fn apply_model_adjoint(ksp: &MultiCoilKSpace, maps: &SensitivityMaps) -> Result<Vec<ComplexGrid>> {
    check_kspace(ksp, maps)?;
    let plan = Fft2Plan::new(maps.ny, maps.nz)?;
    model_adjoint(ksp.coils(), maps, &plan)
}

fn model_forward(img: &[ComplexGrid], maps: &SensitivityMaps, plan: &Fft2Plan) -> Result<MultiCoilKSpace> {
    let mut coils = Vec::with_capacity(maps.nc());
    for c in 0..maps.nc() {
        let mut acc = ComplexGrid::zeros(maps.ny, maps.nz)?;
        for (s, ch) in img.iter().enumerate() {
            let m = maps.map(s, c);
            for ((a, x), w) in acc.data_mut().iter_mut().zip(ch.data()).zip(m.data()) {
                *a += w * x;
            }
        }
        plan.forward(&mut acc)?;
        coils.push(acc);
    }
    MultiCoilKSpace::new(coils)
}

fn model_adjoint(coils: &[ComplexGrid], maps: &SensitivityMaps, plan: &Fft2Plan) -> Result<Vec<ComplexGrid>> {
    let mut out = vec![ComplexGrid::zeros(maps.ny, maps.nz)?; maps.nsets()];
    for (c, k) in coils.iter().enumerate() {
        let mut img = k.clone();
        plan.inverse(&mut img)?;
        for (s, ch) in out.iter_mut().enumerate() {
            let m = maps.map(s, c);
            for ((a, x), w) in ch.data_mut().iter_mut().zip(img.data()).zip(m.data()) {
                *a += w.conj() * x;
            }
        }
    }
    Ok(out)
}

/// Per-patch operator context: maps, mask, window and center with the FFT
/// plan and phase ramps precomputed. Immutable once built, so one instance
/// can serve every iteration of a patch reconstruction.
#[derive(Debug, Clone)]
pub struct PatchOperator<'a> {
    maps: &'a SensitivityMaps,
    mask: &'a RealGrid,
    window: &'a RealGrid,
    center: PatchCenter,
    plan: Fft2Plan,
    ramp: Vec<Complex64>,
    /// mask * window
    mw: Vec<f64>,
}

impl<'a> PatchOperator<'a> {
    pub fn new(
        maps: &'a SensitivityMaps,
        mask: &'a RealGrid,
        window: &'a RealGrid,
        center: PatchCenter,
    ) -> Result<Self> {
        let dims = maps.dims();
        if mask.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: mask.dims(),
            });
        }
        if window.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: window.dims(),
            });
        }
        let plan = Fft2Plan::new(dims.0, dims.1)?;
        let ramp = phase_ramp(dims.0, dims.1, center, PhaseDirection::Forward);
        let mw = mask.data().iter().zip(window.data()).map(|(m, w)| m * w).collect();
        Ok(Self {
            maps,
            mask,
            window,
            center,
            plan,
            ramp,
            mw,
        })
    }

    pub fn maps(&self) -> &SensitivityMaps {
        self.maps
    }

    pub fn mask(&self) -> &RealGrid {
        self.mask
    }

    pub fn window(&self) -> &RealGrid {
        self.window
    }

    pub fn center(&self) -> PatchCenter {
        self.center
    }

    pub fn dims(&self) -> (usize, usize) {
        self.maps.dims()
    }

    pub fn nsets(&self) -> usize {
        self.maps.nsets()
    }

    fn modulate(&self, img: &[ComplexGrid], dir: PhaseDirection) -> Vec<ComplexGrid> {
        img.iter()
            .map(|ch| {
                let mut out = ch.clone();
                for (v, p) in out.data_mut().iter_mut().zip(&self.ramp) {
                    *v *= match dir {
                        PhaseDirection::Forward => *p,
                        PhaseDirection::Inverse => p.conj(),
                    };
                }
                out
            })
            .collect()
    }

    /// `A (phase * y)` with no mask or window.
    pub fn full_forward(&self, img: &[ComplexGrid]) -> Result<MultiCoilKSpace> {
        check_image(img, self.maps)?;
        let z = self.modulate(img, PhaseDirection::Forward);
        model_forward(&z, self.maps, &self.plan)
    }

    /// Adjoint of [`PatchOperator::full_forward`].
    pub fn full_adjoint(&self, ksp: &MultiCoilKSpace) -> Result<Vec<ComplexGrid>> {
        check_kspace(ksp, self.maps)?;
        let z = model_adjoint(ksp.coils(), self.maps, &self.plan)?;
        Ok(self.modulate(&z, PhaseDirection::Inverse))
    }

    /// `B y = W M A (phase * y)`
    pub fn forward(&self, img: &[ComplexGrid]) -> Result<MultiCoilKSpace> {
        let mut k = self.full_forward(img)?;
        self.weight(&mut k, 1);
        Ok(k)
    }

    /// `B^H k = conj(phase) * A^H (M W k)`
    pub fn adjoint(&self, ksp: &MultiCoilKSpace) -> Result<Vec<ComplexGrid>> {
        let mut k = ksp.clone();
        self.weight(&mut k, 1);
        self.full_adjoint(&k)
    }

    /// `B^H B y`
    pub fn normal(&self, img: &[ComplexGrid]) -> Result<Vec<ComplexGrid>> {
        let mut k = self.full_forward(img)?;
        self.weight(&mut k, 2);
        self.full_adjoint(&k)
    }

    /// `B^H (W u)`, the data term that seeds and drives the iterations.
    pub fn adjoint_windowed(&self, u: &MultiCoilKSpace) -> Result<Vec<ComplexGrid>> {
        let mut k = u.clone();
        k.mul_real(self.window)?;
        self.weight(&mut k, 1);
        self.full_adjoint(&k)
    }

    /// `B^H B y - B^H W u`, i.e. the gradient of `1/2 |B y - W u|^2`.
    pub fn gradient(&self, img: &[ComplexGrid], u: &MultiCoilKSpace) -> Result<Vec<ComplexGrid>> {
        check_kspace(u, self.maps)?;
        let mut k = self.full_forward(img)?;
        for (kc, uc) in k.coils_mut().iter_mut().zip(u.coils()) {
            for ((a, b), (&mw, &w)) in kc
                .data_mut()
                .iter_mut()
                .zip(uc.data())
                .zip(self.mw.iter().zip(self.window.data()))
            {
                // M W (W M A y) - M W (W u), with M binary or not
                *a = mw * (mw * *a - w * b);
            }
        }
        self.full_adjoint(&k)
    }

    /// Multiplies by `(mask * window)^power`.
    fn weight(&self, k: &mut MultiCoilKSpace, power: u32) {
        for coil in k.coils_mut() {
            for (v, &w) in coil.data_mut().iter_mut().zip(&self.mw) {
                *v *= if power == 2 { w * w } else { w };
            }
        }
    }
}

pub fn apply_b(
    img: &[ComplexGrid],
    maps: &SensitivityMaps,
    mask: &RealGrid,
    window: &RealGrid,
    center: PatchCenter,
) -> Result<MultiCoilKSpace> {
    PatchOperator::new(maps, mask, window, center)?.forward(img)
}

pub fn apply_b_adjoint(
    ksp: &MultiCoilKSpace,
    maps: &SensitivityMaps,
    mask: &RealGrid,
    window: &RealGrid,
    center: PatchCenter,
) -> Result<Vec<ComplexGrid>> {
    PatchOperator::new(maps, mask, window, center)?.adjoint(ksp)
}

/// `B^H B y - B^H (W u)` with `u` the raw measured patch.
pub fn ls_gradient(
    y: &[ComplexGrid],
    u: &MultiCoilKSpace,
    maps: &SensitivityMaps,
    mask: &RealGrid,
    window: &RealGrid,
    center: PatchCenter,
) -> Result<Vec<ComplexGrid>> {
    PatchOperator::new(maps, mask, window, center)?.gradient(y, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::fft2;
    use crate::grid::{channels_norm, inner_product_channels};
    use rand::{Rng, SeedableRng};
    use rand_pcg::Pcg32;

    fn random_grid(ny: usize, nz: usize, rng: &mut Pcg32) -> ComplexGrid {
        ComplexGrid::from_fn(ny, nz, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).unwrap()
    }

    fn random_maps(nsets: usize, nc: usize, ny: usize, nz: usize, rng: &mut Pcg32) -> SensitivityMaps {
        let sets = (0..nsets).map(|_| (0..nc).map(|_| random_grid(ny, nz, rng)).collect()).collect();
        SensitivityMaps::normalized(sets).unwrap()
    }

    fn random_kspace(nc: usize, ny: usize, nz: usize, rng: &mut Pcg32) -> MultiCoilKSpace {
        MultiCoilKSpace::new((0..nc).map(|_| random_grid(ny, nz, rng)).collect()).unwrap()
    }

    fn kspace_inner(a: &MultiCoilKSpace, b: &MultiCoilKSpace) -> Complex64 {
        inner_product_channels(a.coils(), b.coils()).unwrap()
    }

    #[test]
    fn zero_center_is_identity_and_directions_cancel() {
        let mut rng = Pcg32::seed_from_u64(0);
        let x = random_grid(9, 12, &mut rng);
        assert_eq!(phase_modulate(&x, PatchCenter::new(0, 0), PhaseDirection::Forward), x);
        let c = PatchCenter::new(-3, 5);
        let back = phase_modulate(&phase_modulate(&x, c, PhaseDirection::Forward), c, PhaseDirection::Inverse);
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn modulation_shifts_the_spectrum() {
        let mut rng = Pcg32::seed_from_u64(1);
        let x = random_grid(16, 16, &mut rng);
        let f = fft2(&x).unwrap();
        for (p, q) in [(1, 0), (0, -2), (3, 5), (-7, 4), (8, -8), (-16, 17)] {
            let g = fft2(&phase_modulate(&x, PatchCenter::new(p, q), PhaseDirection::Forward)).unwrap();
            for r in 0..16 {
                for c in 0..16 {
                    let sr = (r as i64 - p).rem_euclid(16) as usize;
                    let sc = (c as i64 - q).rem_euclid(16) as usize;
                    assert!((g[(r, c)] - f[(sr, sc)]).norm() < 1e-10, "shift ({p},{q}) at ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn unit_single_coil_model_is_fft() {
        let mut rng = Pcg32::seed_from_u64(2);
        let x = random_grid(8, 10, &mut rng);
        let maps = SensitivityMaps::unit(8, 10).unwrap();
        let k = apply_model(core::slice::from_ref(&x), &maps).unwrap();
        assert_eq!(k.coils()[0], fft2(&x).unwrap());
        let back = apply_model_adjoint(&k, &maps).unwrap();
        for (a, b) in back[0].data().iter().zip(x.data()) {
            assert!((a - b).norm() < 1e-12);
        }
        let ones = RealGrid::filled(8, 10, 1.0).unwrap();
        let b = apply_b(core::slice::from_ref(&x), &maps, &ones, &ones, PatchCenter::new(0, 0)).unwrap();
        assert_eq!(b.coils()[0], fft2(&x).unwrap());
    }

    #[test]
    fn zero_inputs_and_zero_mask_give_zero() {
        let mut rng = Pcg32::seed_from_u64(3);
        let maps = random_maps(1, 3, 8, 8, &mut rng);
        let zero = ComplexGrid::zeros(8, 8).unwrap();
        assert_eq!(apply_model(core::slice::from_ref(&zero), &maps).unwrap().norm(), 0.0);
        let zk = MultiCoilKSpace::zeros(3, 8, 8).unwrap();
        assert_eq!(channels_norm(&apply_model_adjoint(&zk, &maps).unwrap()), 0.0);
        let x = random_grid(8, 8, &mut rng);
        let none = RealGrid::filled(8, 8, 0.0).unwrap();
        let w = RealGrid::filled(8, 8, 0.7).unwrap();
        let b = apply_b(&[x], &maps, &none, &w, PatchCenter::new(1, 1)).unwrap();
        assert_eq!(b.norm(), 0.0);
    }

    #[test]
    fn adjoint_pairing_for_model_and_patch_operator() {
        let mut rng = Pcg32::seed_from_u64(0);
        for nsets in [1, 2] {
            for _ in 0..10 {
                let (ny, nz, nc) = (rng.gen_range(8..=24), rng.gen_range(8..=24), rng.gen_range(1..=4));
                let maps = random_maps(nsets, nc, ny, nz, &mut rng);
                let x: Vec<ComplexGrid> = (0..nsets).map(|_| random_grid(ny, nz, &mut rng)).collect();
                let y = random_kspace(nc, ny, nz, &mut rng);
                let scale = channels_norm(&x) * y.norm();

                let lhs = kspace_inner(&apply_model(&x, &maps).unwrap(), &y);
                let rhs = inner_product_channels(&x, &apply_model_adjoint(&y, &maps).unwrap()).unwrap();
                assert!((lhs - rhs).norm() / scale < 1e-10);

                let mask = RealGrid::from_fn(ny, nz, |_, _| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).unwrap();
                let window = RealGrid::from_fn(ny, nz, |_, _| rng.gen_range(0.0..1.0)).unwrap();
                let c = PatchCenter::new(rng.gen_range(-5..=5), rng.gen_range(-5..=5));
                let lhs = kspace_inner(&apply_b(&x, &maps, &mask, &window, c).unwrap(), &y);
                let rhs = inner_product_channels(&x, &apply_b_adjoint(&y, &maps, &mask, &window, c).unwrap()).unwrap();
                assert!((lhs - rhs).norm() / scale < 1e-10, "nsets {nsets}");
            }
        }
    }

    fn data_term(y: &[ComplexGrid], u: &MultiCoilKSpace, op: &PatchOperator<'_>) -> f64 {
        let by = op.forward(y).unwrap();
        let mut wu = u.clone();
        wu.mul_real(op.window()).unwrap();
        by.coils()
            .iter()
            .zip(wu.coils())
            .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(p, q)| (p - q).norm_sqr()))
            .sum::<f64>()
            / 2.0
    }

    #[test]
    fn ls_gradient_matches_finite_differences() {
        let mut rng = Pcg32::seed_from_u64(4);
        for nsets in [1, 2] {
            let maps = random_maps(nsets, 3, 8, 8, &mut rng);
            let mask = RealGrid::from_fn(8, 8, |_, _| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).unwrap();
            let window = RealGrid::from_fn(8, 8, |_, _| rng.gen_range(0.2..1.0)).unwrap();
            let c = PatchCenter::new(2, -1);
            let op = PatchOperator::new(&maps, &mask, &window, c).unwrap();
            let y: Vec<ComplexGrid> = (0..nsets).map(|_| random_grid(8, 8, &mut rng)).collect();
            let u = random_kspace(3, 8, 8, &mut rng);
            let g = ls_gradient(&y, &u, &maps, &mask, &window, c).unwrap();
            let h = 1e-6;
            let (mut num, mut den) = (0.0, 0.0);
            for s in 0..nsets {
                for i in 0..64 {
                    for dir in [Complex64::new(h, 0.0), Complex64::new(0.0, h)] {
                        let mut p = y.clone();
                        p[s].data_mut()[i] += dir;
                        let mut m = y.clone();
                        m[s].data_mut()[i] -= dir;
                        let fd = (data_term(&p, &u, &op) - data_term(&m, &u, &op)) / (2.0 * h);
                        let an = (g[s].data()[i].conj() * dir).re / h;
                        num += (fd - an) * (fd - an);
                        den += fd * fd;
                    }
                }
            }
            assert!((num / den).sqrt() < 1e-6, "relative error {}", (num / den).sqrt());
        }
    }

    #[test]
    fn gradient_vanishes_at_a_consistent_point_and_is_affine() {
        let mut rng = Pcg32::seed_from_u64(5);
        let maps = SensitivityMaps::unit(12, 12).unwrap();
        let ones = RealGrid::filled(12, 12, 1.0).unwrap();
        let c = PatchCenter::new(0, 0);
        let k = random_kspace(1, 12, 12, &mut rng);
        let y = apply_b_adjoint(&k, &maps, &ones, &ones, c).unwrap();
        let g = ls_gradient(&y, &k, &maps, &ones, &ones, c).unwrap();
        assert!(channels_norm(&g) < 1e-12);

        let mask = RealGrid::from_fn(12, 12, |_, _| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).unwrap();
        let a = [random_grid(12, 12, &mut rng)];
        let b = [random_grid(12, 12, &mut rng)];
        let sum = [ComplexGrid::new(12, 12, a[0].data().iter().zip(b[0].data()).map(|(p, q)| p + q).collect()).unwrap()];
        let zero = MultiCoilKSpace::zeros(1, 12, 12).unwrap();
        let grad = |y: &[ComplexGrid]| ls_gradient(y, &zero, &maps, &mask, &ones, c).unwrap();
        let (ga, gb, gs) = (grad(&a), grad(&b), grad(&sum));
        for i in 0..144 {
            assert!((ga[0].data()[i] + gb[0].data()[i] - gs[0].data()[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let maps = SensitivityMaps::unit(8, 8).unwrap();
        let small = RealGrid::filled(6, 8, 1.0).unwrap();
        let ones = RealGrid::filled(8, 8, 1.0).unwrap();
        let x = [ComplexGrid::zeros(8, 8).unwrap()];
        assert!(apply_b(&x, &maps, &small, &ones, PatchCenter::new(0, 0)).is_err());
        let two = [x[0].clone(), x[0].clone()];
        assert!(matches!(apply_model(&two, &maps), Err(Error::ChannelMismatch { .. })));
        assert!(apply_model_adjoint(&MultiCoilKSpace::zeros(2, 8, 8).unwrap(), &maps).is_err());
    }
}
