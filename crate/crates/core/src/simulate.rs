//! Synthetic ground truth: random ellipse phantoms with smooth phase,
//! Gaussian-lobe coil profiles and the fully sampled k-space they produce.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;

use crate::grid::{ComplexGrid, MultiCoilKSpace, RealGrid};
use crate::math::{cis, exp, sqrt};
use crate::model::{apply_model, SensitivityMaps};
use crate::sampling::{generate_mask, Density, MaskSpec};
use crate::training::TrainExample;
use crate::{Complex64, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomSpec {
    pub ny: usize,
    pub nz: usize,
    pub n_ellipses: usize,
    /// Intensity range of the inner ellipses; the outer body uses the upper
    /// bound scaled by 0.6.
    pub intensity: (f64, f64),
    /// Peak magnitude, in radians, of the polynomial phase terms.
    pub phase_scale: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(ny: usize, nz: usize, seed: u64) -> Self {
        Self {
            ny,
            nz,
            n_ellipses: 10,
            intensity: (0.1, 1.0),
            phase_scale: 1.5,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.ny == 0 || self.nz == 0 {
            return Err(Error::invalid("phantom dimensions must be positive"));
        }
        if self.n_ellipses == 0 {
            return Err(Error::invalid("phantom needs at least one ellipse"));
        }
        let (lo, hi) = self.intensity;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::invalid("intensity range must satisfy 0 <= lo <= hi"));
        }
        if !self.phase_scale.is_finite() {
            return Err(Error::invalid("phase scale must be finite"));
        }
        Ok(())
    }
}

struct Ellipse {
    cy: f64,
    cz: f64,
    ay: f64,
    az: f64,
    cos: f64,
    sin: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, z: f64) -> bool {
        let (dy, dz) = (y - self.cy, z - self.cz);
        let u = dy * self.cos + dz * self.sin;
        let v = -dy * self.sin + dz * self.cos;
        (u / self.ay) * (u / self.ay) + (v / self.az) * (v / self.az) <= 1.0
    }
}

/// Random ellipses painted in order over a large body ellipse, times a
/// smooth second-order polynomial phase.
pub fn make_phantom(spec: &PhantomSpec) -> Result<ComplexGrid> {
    spec.validate()?;
    let mut rng = Pcg32::seed_from_u64(spec.seed);
    let (lo, hi) = spec.intensity;
    let value = |rng: &mut Pcg32| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let mut ellipses = Vec::with_capacity(spec.n_ellipses);
    for e in 0..spec.n_ellipses {
        let theta = rng.gen_range(0.0..PI);
        let (sin, cos) = libm::sincos(theta);
        let el = if e == 0 {
            Ellipse {
                cy: rng.gen_range(-0.05..0.05),
                cz: rng.gen_range(-0.05..0.05),
                ay: rng.gen_range(0.7..0.85),
                az: rng.gen_range(0.55..0.75),
                cos,
                sin,
                value: 0.6 * value(&mut rng),
            }
        } else {
            Ellipse {
                cy: rng.gen_range(-0.45..0.45),
                cz: rng.gen_range(-0.35..0.35),
                ay: rng.gen_range(0.04..0.3),
                az: rng.gen_range(0.04..0.3),
                cos,
                sin,
                value: value(&mut rng),
            }
        };
        ellipses.push(el);
    }
    let coef: Vec<f64> = (0..6)
        .map(|_| rng.gen_range(-1.0..1.0) * spec.phase_scale)
        .collect();
    let hy = spec.ny as f64 / 2.0;
    let hz = spec.nz as f64 / 2.0;
    ComplexGrid::from_fn(spec.ny, spec.nz, |r, c| {
        let y = (r as f64 - hy) / hy;
        let z = (c as f64 - hz) / hz;
        let mut mag = 0.0;
        for el in &ellipses {
            if el.contains(y, z) {
                mag = el.value;
            }
        }
        if mag == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let phase = coef[0] + coef[1] * y + coef[2] * z + 0.5 * (coef[3] * y * z + coef[4] * y * y + coef[5] * z * z);
        cis(phase) * mag
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoilSpec {
    pub nc: usize,
    /// Lobe standard deviation relative to the half field of view.
    pub width: f64,
    pub seed: u64,
}

impl CoilSpec {
    pub fn new(nc: usize, seed: u64) -> Self {
        Self { nc, width: 0.7, seed }
    }
}

/// `nc` Gaussian lobes placed around the field-of-view border, each with a
/// smooth linear phase, normalized jointly so `sum_c |S_c|^2 = 1`.
pub fn make_coils(spec: &CoilSpec, ny: usize, nz: usize) -> Result<SensitivityMaps> {
    if spec.nc == 0 {
        return Err(Error::invalid("coil count must be positive"));
    }
    if !(spec.width > 0.0) {
        return Err(Error::invalid("coil width must be positive"));
    }
    if ny == 0 || nz == 0 {
        return Err(Error::invalid("coil dimensions must be positive"));
    }
    let mut rng = Pcg32::seed_from_u64(spec.seed);
    let offset = rng.gen_range(0.0..2.0 * PI);
    let hy = ny as f64 / 2.0;
    let hz = nz as f64 / 2.0;
    let two_s2 = 2.0 * spec.width * spec.width;
    let mut raw = Vec::with_capacity(spec.nc);
    for c in 0..spec.nc {
        let ang = offset + 2.0 * PI * c as f64 / spec.nc as f64 + rng.gen_range(-0.2..0.2);
        let (s, co) = libm::sincos(ang);
        let (py, pz) = (1.1 * s, 1.1 * co);
        let (p0, p1, p2) = (
            rng.gen_range(-PI..PI),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let grid = ComplexGrid::from_fn(ny, nz, |r, col| {
            let y = (r as f64 - hy) / hy;
            let z = (col as f64 - hz) / hz;
            let d2 = (y - py) * (y - py) + (z - pz) * (z - pz);
            cis(p0 + p1 * y + p2 * z) * exp(-d2 / two_s2)
        })?;
        raw.push(grid);
    }
    let mut energy = vec![0.0; ny * nz];
    for g in &raw {
        for (e, v) in energy.iter_mut().zip(g.data()) {
            *e += v.norm_sqr();
        }
    }
    for g in &mut raw {
        for (v, &e) in g.data_mut().iter_mut().zip(&energy) {
            *v = if e > 0.0 { *v / sqrt(e) } else { Complex64::new(0.0, 0.0) };
        }
    }
    SensitivityMaps::new(vec![raw])
}

/// Fully sampled multi-coil k-space of a single-set phantom.
pub fn synthesize_kspace(phantom: &ComplexGrid, maps: &SensitivityMaps) -> Result<MultiCoilKSpace> {
    if maps.nsets() != 1 {
        return Err(Error::ChannelMismatch {
            expected: 1,
            found: maps.nsets(),
        });
    }
    apply_model(core::slice::from_ref(phantom), maps)
}

/// Seeds for independent generator streams derived from one base seed.
fn stream_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A synthetic corpus: phantoms, their coils and fully sampled k-space, and
/// a pool of sampling masks.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub count: usize,
    pub ny: usize,
    pub nz: usize,
    pub nc: usize,
    pub masks: usize,
    pub r: f64,
    pub density: Density,
    pub calib: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(count: usize, ny: usize, nz: usize, seed: u64) -> Self {
        Self {
            count,
            ny,
            nz,
            nc: 4,
            masks: 8,
            r: 4.0,
            density: Density::Variable {
                power: crate::sampling::DEFAULT_VD_POWER,
            },
            calib: crate::sampling::DEFAULT_CALIB,
            seed,
        }
    }

    pub fn mask_spec(&self, index: usize) -> MaskSpec {
        MaskSpec::new(self.ny, self.nz, self.r, self.density)
            .with_calib(self.calib)
            .with_seed(stream_seed(self.seed, 2, index as u64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<ComplexGrid>,
    pub examples: Vec<TrainExample>,
    pub masks: Vec<RealGrid>,
}

/// Example `i` uses phantom and coil seeds drawn from separate streams of
/// `spec.seed`, so two datasets with different seeds share no examples.
pub fn make_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.count == 0 || spec.masks == 0 {
        return Err(Error::invalid("dataset needs at least one example and one mask"));
    }
    let mut images = Vec::with_capacity(spec.count);
    let mut examples = Vec::with_capacity(spec.count);
    for i in 0..spec.count as u64 {
        let img = make_phantom(&PhantomSpec::new(spec.ny, spec.nz, stream_seed(spec.seed, 0, i)))?;
        let maps = make_coils(&CoilSpec::new(spec.nc, stream_seed(spec.seed, 1, i)), spec.ny, spec.nz)?;
        let kspace = synthesize_kspace(&img, &maps)?;
        images.push(img);
        examples.push(TrainExample { kspace, maps });
    }
    let masks = (0..spec.masks)
        .map(|j| generate_mask(&spec.mask_spec(j)))
        .collect::<Result<_>>()?;
    Ok(Dataset { images, examples, masks })
}
