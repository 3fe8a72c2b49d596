//! Pseudo-random Poisson-disc subsampling masks with a fully sampled
//! calibration block.
//!
//! Candidates are visited in a seeded random order and accepted when no
//! previously accepted sample lies closer than the smaller of the two local
//! radii (random sequential adsorption). Acceptance stops once the sample
//! budget implied by the target reduction factor is reached. The base radius
//! is the largest one, found by bisection, whose saturated pattern still
//! holds that many samples.
//!
//! The PRNG is PCG-XSH-RR 64/32 (`rand_pcg::Pcg32`) seeded through
//! `seed_from_u64`, so masks are reproducible across platforms.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_pcg::Pcg32;

use crate::grid::RealGrid;
use crate::math::{round, sqrt};
use crate::{Error, Result};

pub const DEFAULT_CALIB: usize = 20;
pub const DEFAULT_VD_POWER: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Density {
    Uniform,
    /// Local radius `r0 * (1 + power * |k| / k_max)`.
    Variable { power: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    pub ny: usize,
    pub nz: usize,
    pub target_r: f64,
    pub density: Density,
    pub calib: usize,
    pub seed: u64,
}

impl MaskSpec {
    pub fn new(ny: usize, nz: usize, target_r: f64, density: Density) -> Self {
        Self {
            ny,
            nz,
            target_r,
            density,
            calib: DEFAULT_CALIB,
            seed: 0,
        }
    }

    pub fn with_calib(mut self, calib: usize) -> Self {
        self.calib = calib;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn calib_range(&self) -> ((usize, usize), (usize, usize)) {
        let y0 = self.ny / 2 - self.calib / 2;
        let z0 = self.nz / 2 - self.calib / 2;
        ((y0, y0 + self.calib), (z0, z0 + self.calib))
    }

    pub fn in_calib(&self, r: usize, c: usize) -> bool {
        let ((y0, y1), (z0, z1)) = self.calib_range();
        (y0..y1).contains(&r) && (z0..z1).contains(&c)
    }

    /// Normalized distance of a bin from DC: 0 at DC, 1 at the edge midpoints,
    /// clipped to 1 in the corners.
    pub fn normalized_radius(&self, r: usize, c: usize) -> f64 {
        let hy = (self.ny as f64 / 2.0).max(1.0);
        let hz = (self.nz as f64 / 2.0).max(1.0);
        let dy = (r as f64 - (self.ny / 2) as f64) / hy;
        let dz = (c as f64 - (self.nz / 2) as f64) / hz;
        sqrt(dy * dy + dz * dz).min(1.0)
    }

    /// Exclusion radius at a bin for base radius `r0`.
    pub fn local_radius(&self, r0: f64, r: usize, c: usize) -> f64 {
        match self.density {
            Density::Uniform => r0,
            Density::Variable { power } => r0 * (1.0 + power * self.normalized_radius(r, c)),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.ny == 0 || self.nz == 0 {
            return Err(Error::invalid("mask dimensions must be positive"));
        }
        if self.calib > self.ny.min(self.nz) {
            return Err(Error::invalid("calibration block larger than the grid"));
        }
        if !(self.target_r >= 1.0) || !self.target_r.is_finite() {
            return Err(Error::invalid("reduction factor must be at least 1"));
        }
        if let Density::Variable { power } = self.density {
            if !(power >= 0.0) {
                return Err(Error::invalid("variable-density power must be non-negative"));
            }
        }
        Ok(())
    }
}

/// A generated mask and the base radius it was drawn with.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonMask {
    pub mask: RealGrid,
    pub radius: f64,
}

struct Sampler<'a> {
    spec: &'a MaskSpec,
    order: Vec<(usize, usize)>,
    calib_count: usize,
}

impl Sampler<'_> {
    /// Runs adsorption with base radius `r0`, stopping at `budget` samples.
    /// Returns the occupancy grid and the number of non-calibration samples.
    fn run(&self, r0: f64, budget: usize) -> (Vec<bool>, usize) {
        let (ny, nz) = (self.spec.ny, self.spec.nz);
        let mut taken = vec![false; ny * nz];
        let mut count = 0;
        for &(r, c) in &self.order {
            if count >= budget {
                break;
            }
            let rad = self.spec.local_radius(r0, r, c);
            let reach = crate::math::ceil(rad) as i64;
            let mut ok = true;
            'scan: for dr in -reach..=reach {
                let rr = r as i64 + dr;
                if rr < 0 || rr >= ny as i64 {
                    continue;
                }
                for dc in -reach..=reach {
                    let cc = c as i64 + dc;
                    if cc < 0 || cc >= nz as i64 || (dr == 0 && dc == 0) {
                        continue;
                    }
                    let idx = rr as usize * nz + cc as usize;
                    if !taken[idx] {
                        continue;
                    }
                    let d2 = (dr * dr + dc * dc) as f64;
                    let other = self.spec.local_radius(r0, rr as usize, cc as usize);
                    let lim = rad.min(other);
                    if d2 < lim * lim {
                        ok = false;
                        break 'scan;
                    }
                }
            }
            if ok {
                taken[r * nz + c] = true;
                count += 1;
            }
        }
        (taken, count)
    }
}

/// Generates a binary mask, see the module docs for the algorithm.
pub fn generate_mask(spec: &MaskSpec) -> Result<RealGrid> {
    generate_mask_with_radius(spec).map(|m| m.mask)
}

pub fn generate_mask_with_radius(spec: &MaskSpec) -> Result<PoissonMask> {
    spec.validate()?;
    let (ny, nz) = (spec.ny, spec.nz);
    let total = ny * nz;
    if spec.target_r == 1.0 {
        return Ok(PoissonMask {
            mask: RealGrid::filled(ny, nz, 1.0)?,
            radius: 0.0,
        });
    }
    let calib_count = spec.calib * spec.calib;
    let wanted = round(total as f64 / spec.target_r) as usize;
    if wanted < calib_count.max(1) {
        return Err(Error::InfeasibleReduction {
            target: spec.target_r,
            max: total as f64 / calib_count.max(1) as f64,
        });
    }
    let budget = wanted - calib_count;

    let mut order: Vec<(usize, usize)> = (0..ny)
        .flat_map(|r| (0..nz).map(move |c| (r, c)))
        .filter(|&(r, c)| !spec.in_calib(r, c))
        .collect();
    let mut rng = Pcg32::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let sampler = Sampler {
        spec,
        order,
        calib_count,
    };

    // largest base radius whose pattern still reaches the budget
    let mut lo = 0.0;
    let mut hi = ny.max(nz) as f64;
    if sampler.run(hi, budget).1 >= budget {
        lo = hi;
    } else {
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if sampler.run(mid, budget).1 >= budget {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-3 {
                break;
            }
        }
    }
    let (taken, count) = sampler.run(lo, budget);
    debug_assert_eq!(count + sampler.calib_count, wanted);
    let mask = RealGrid::from_fn(ny, nz, |r, c| {
        if spec.in_calib(r, c) || taken[r * nz + c] {
            1.0
        } else {
            0.0
        }
    })?;
    Ok(PoissonMask { mask, radius: lo })
}

/// Total bins divided by sampled bins.
pub fn achieved_r(mask: &RealGrid) -> Result<f64> {
    mask.require_binary()?;
    let sampled = mask.data().iter().filter(|&&v| v == 1.0).count();
    if sampled == 0 {
        return Err(Error::invalid("mask samples nothing"));
    }
    Ok(mask.data().len() as f64 / sampled as f64)
}
