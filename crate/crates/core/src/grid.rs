//! Dense 2-D grids stored row-major, rows along k_y / y and columns along k_z / z.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::{Error, Result};

fn check_dims(ny: usize, nz: usize, len: usize) -> Result<()> {
    if ny == 0 || nz == 0 {
        return Err(Error::invalid("grid dimensions must be positive"));
    }
    if len != ny * nz {
        return Err(Error::invalid(alloc::format!(
            "grid data has {len} values, expected {ny}x{nz}"
        )));
    }
    Ok(())
}

/// Complex-valued 2-D grid (images, k-space, per-coil profiles).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    ny: usize,
    nz: usize,
    data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn new(ny: usize, nz: usize, data: Vec<Complex64>) -> Result<Self> {
        check_dims(ny, nz, data.len())?;
        Ok(Self { ny, nz, data })
    }

    pub fn zeros(ny: usize, nz: usize) -> Result<Self> {
        Self::new(ny, nz, vec![Complex64::new(0.0, 0.0); ny * nz])
    }

    pub fn from_fn(ny: usize, nz: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Result<Self> {
        let mut data = Vec::with_capacity(ny * nz);
        for r in 0..ny {
            for c in 0..nz {
                data.push(f(r, c));
            }
        }
        Self::new(ny, nz, data)
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn nz(&self) -> usize {
        self.nz
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.ny, self.nz)
    }

    #[inline]
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        crate::math::sqrt(self.norm_sqr())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self += a * other`
    pub fn add_scaled(&mut self, a: Complex64, other: &ComplexGrid) -> Result<()> {
        self.require_dims(other.dims())?;
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
        Ok(())
    }

    /// Pointwise product with a real grid.
    pub fn mul_real(&mut self, w: &RealGrid) -> Result<()> {
        self.require_dims(w.dims())?;
        for (x, &s) in self.data.iter_mut().zip(w.data()) {
            *x *= s;
        }
        Ok(())
    }

    pub fn magnitude(&self) -> RealGrid {
        RealGrid {
            ny: self.ny,
            nz: self.nz,
            data: self.data.iter().map(|v| v.norm()).collect(),
        }
    }

    pub(crate) fn require_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: dims,
            });
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for ComplexGrid {
    type Output = Complex64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.nz + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexGrid {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.nz + c]
    }
}

/// Real-valued 2-D grid. Masks and windows keep their values in `[0, 1]`;
/// magnitude images use the same container without that restriction.
#[derive(Debug, Clone, PartialEq)]
pub struct RealGrid {
    ny: usize,
    nz: usize,
    data: Vec<f64>,
}

impl RealGrid {
    pub fn new(ny: usize, nz: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(ny, nz, data.len())?;
        Ok(Self { ny, nz, data })
    }

    pub fn filled(ny: usize, nz: usize, value: f64) -> Result<Self> {
        Self::new(ny, nz, vec![value; ny * nz])
    }

    pub fn from_fn(ny: usize, nz: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(ny * nz);
        for r in 0..ny {
            for c in 0..nz {
                data.push(f(r, c));
            }
        }
        Self::new(ny, nz, data)
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn nz(&self) -> usize {
        self.nz
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.ny, self.nz)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the first entry that is neither 0 nor 1, if any.
    pub fn first_non_binary(&self) -> Option<usize> {
        self.data.iter().position(|&v| v != 0.0 && v != 1.0)
    }

    pub(crate) fn require_binary(&self) -> Result<()> {
        match self.first_non_binary() {
            Some(i) => Err(Error::NonBinaryMask(i)),
            None => Ok(()),
        }
    }
}

impl Index<(usize, usize)> for RealGrid {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.nz + c]
    }
}

impl IndexMut<(usize, usize)> for RealGrid {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.nz + c]
    }
}

/// Coil-indexed stack of k-space grids that share one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCoilKSpace {
    coils: Vec<ComplexGrid>,
}

impl MultiCoilKSpace {
    pub fn new(coils: Vec<ComplexGrid>) -> Result<Self> {
        let first = coils
            .first()
            .ok_or_else(|| Error::invalid("multi-coil k-space needs at least one coil"))?;
        for c in &coils[1..] {
            first.require_dims(c.dims())?;
        }
        Ok(Self { coils })
    }

    pub fn zeros(nc: usize, ny: usize, nz: usize) -> Result<Self> {
        let grid = ComplexGrid::zeros(ny, nz)?;
        Self::new(vec![grid; nc])
    }

    #[inline]
    pub fn nc(&self) -> usize {
        self.coils.len()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        self.coils[0].dims()
    }

    #[inline]
    pub fn coils(&self) -> &[ComplexGrid] {
        &self.coils
    }

    #[inline]
    pub fn coils_mut(&mut self) -> &mut [ComplexGrid] {
        &mut self.coils
    }

    pub fn into_coils(self) -> Vec<ComplexGrid> {
        self.coils
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coils.iter().map(ComplexGrid::norm_sqr).sum()
    }

    pub fn norm(&self) -> f64 {
        crate::math::sqrt(self.norm_sqr())
    }

    pub fn scale(&mut self, a: f64) {
        for c in &mut self.coils {
            c.scale(a);
        }
    }

    pub fn mul_real(&mut self, w: &RealGrid) -> Result<()> {
        for c in &mut self.coils {
            c.mul_real(w)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.coils.iter().all(ComplexGrid::is_finite)
    }

    pub(crate) fn require_same_shape(&self, other: &MultiCoilKSpace) -> Result<()> {
        if self.nc() != other.nc() {
            return Err(Error::ChannelMismatch {
                expected: self.nc(),
                found: other.nc(),
            });
        }
        self.coils[0].require_dims(other.dims())
    }
}

/// `<a, b> = sum(conj(a) * b)`
pub fn inner_product(a: &ComplexGrid, b: &ComplexGrid) -> Result<Complex64> {
    a.require_dims(b.dims())?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x.conj() * y).sum())
}

/// Inner product summed over matching channels.
pub fn inner_product_channels(a: &[ComplexGrid], b: &[ComplexGrid]) -> Result<Complex64> {
    if a.len() != b.len() {
        return Err(Error::ChannelMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        acc += inner_product(x, y)?;
    }
    Ok(acc)
}

pub fn channels_norm(a: &[ComplexGrid]) -> f64 {
    crate::math::sqrt(a.iter().map(ComplexGrid::norm_sqr).sum())
}
