//! Unitary, centered discrete Fourier transforms.
//!
//! DC sits at index `n / 2` along every axis and both directions carry a
//! `1 / sqrt(n)` factor, so `fft2` and `ifft2` are exact adjoints of each
//! other. Power-of-two lengths use an iterative radix-2 kernel; every other
//! length goes through Bluestein's chirp-z reduction onto a power of two.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::grid::ComplexGrid;
use crate::math::{cis, sqrt};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Debug, Clone)]
struct Radix2 {
    n: usize,
    /// `exp(-2 pi i k / n)` for `k < n / 2`
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Radix2 {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let twiddles = (0..n / 2)
            .map(|k| cis(-2.0 * PI * k as f64 / n as f64))
            .collect();
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        Self { n, twiddles, bitrev }
    }

    /// Unnormalized forward transform in place.
    fn forward(&self, buf: &mut [Complex64]) {
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * step];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

#[derive(Debug, Clone)]
enum Kernel {
    Radix2(Radix2),
    Bluestein {
        inner: Radix2,
        /// `exp(-i pi k^2 / n)`
        chirp: Vec<Complex64>,
        /// forward transform of the conjugate chirp, wrapped to the inner length
        filter: Vec<Complex64>,
    },
}

/// Precomputed 1-D transform of a fixed length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    kernel: Kernel,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("transform length must be positive"));
        }
        let kernel = if n.is_power_of_two() {
            Kernel::Radix2(Radix2::new(n))
        } else {
            let m = (2 * n - 1).next_power_of_two();
            let inner = Radix2::new(m);
            // k^2 mod 2n keeps the phase argument small for long transforms
            let chirp: Vec<Complex64> = (0..n)
                .map(|k| {
                    let k2 = (k as u128 * k as u128 % (2 * n as u128)) as f64;
                    cis(-PI * k2 / n as f64)
                })
                .collect();
            let mut filter = vec![Complex64::new(0.0, 0.0); m];
            filter[0] = chirp[0].conj();
            for k in 1..n {
                filter[k] = chirp[k].conj();
                filter[m - k] = chirp[k].conj();
            }
            inner.forward(&mut filter);
            Kernel::Bluestein {
                inner,
                chirp,
                filter,
            }
        };
        Ok(Self { n, kernel })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalized forward DFT, `X[k] = sum_n x[n] exp(-2 pi i k n / N)`.
    pub fn forward(&self, buf: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        debug_assert_eq!(buf.len(), self.n);
        match &self.kernel {
            Kernel::Radix2(r) => r.forward(buf),
            Kernel::Bluestein {
                inner,
                chirp,
                filter,
            } => {
                let m = inner.n;
                scratch.clear();
                scratch.resize(m, Complex64::new(0.0, 0.0));
                for k in 0..self.n {
                    scratch[k] = buf[k] * chirp[k];
                }
                inner.forward(scratch);
                for (s, f) in scratch.iter_mut().zip(filter) {
                    *s = (*s * f).conj();
                }
                // inverse via conjugation: ifft(x) = conj(fft(conj(x))) / m
                inner.forward(scratch);
                let inv_m = 1.0 / m as f64;
                for k in 0..self.n {
                    buf[k] = scratch[k].conj() * inv_m * chirp[k];
                }
            }
        }
    }

    /// Unnormalized transform in either direction.
    pub fn process(&self, buf: &mut [Complex64], dir: Direction, scratch: &mut Vec<Complex64>) {
        match dir {
            Direction::Forward => self.forward(buf, scratch),
            Direction::Inverse => {
                for v in buf.iter_mut() {
                    *v = v.conj();
                }
                self.forward(buf, scratch);
                for v in buf.iter_mut() {
                    *v = v.conj();
                }
            }
        }
    }

    /// Unitary transform with DC at `n / 2` on both sides.
    pub fn centered(&self, buf: &mut [Complex64], dir: Direction, scratch: &mut Vec<Complex64>) {
        let c = self.n / 2;
        buf.rotate_left(c);
        self.process(buf, dir, scratch);
        buf.rotate_right(c);
        let s = 1.0 / sqrt(self.n as f64);
        for v in buf.iter_mut() {
            *v *= s;
        }
    }
}

/// Row and column plans for one grid shape.
#[derive(Debug, Clone)]
pub struct Fft2Plan {
    ny: usize,
    nz: usize,
    rows: FftPlan,
    cols: FftPlan,
}

impl Fft2Plan {
    pub fn new(ny: usize, nz: usize) -> Result<Self> {
        let rows = FftPlan::new(nz)?;
        let cols = if ny == nz { rows.clone() } else { FftPlan::new(ny)? };
        Ok(Self { ny, nz, rows, cols })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.ny, self.nz)
    }

    /// Centered unitary 2-D transform in place.
    pub fn transform(&self, grid: &mut ComplexGrid, dir: Direction) -> Result<()> {
        grid.require_dims((self.ny, self.nz))?;
        let (ny, nz) = (self.ny, self.nz);
        let mut scratch = Vec::new();
        let data = grid.data_mut();
        for row in data.chunks_exact_mut(nz) {
            self.rows.centered(row, dir, &mut scratch);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); ny];
        for c in 0..nz {
            for r in 0..ny {
                col[r] = data[r * nz + c];
            }
            self.cols.centered(&mut col, dir, &mut scratch);
            for r in 0..ny {
                data[r * nz + c] = col[r];
            }
        }
        Ok(())
    }

    pub fn forward(&self, grid: &mut ComplexGrid) -> Result<()> {
        self.transform(grid, Direction::Forward)
    }

    pub fn inverse(&self, grid: &mut ComplexGrid) -> Result<()> {
        self.transform(grid, Direction::Inverse)
    }
}

/// Centered unitary 2-D DFT of an image.
pub fn fft2(img: &ComplexGrid) -> Result<ComplexGrid> {
    let plan = Fft2Plan::new(img.ny(), img.nz())?;
    let mut out = img.clone();
    plan.forward(&mut out)?;
    Ok(out)
}

/// Inverse of [`fft2`]; also its adjoint.
pub fn ifft2(ksp: &ComplexGrid) -> Result<ComplexGrid> {
    let plan = Fft2Plan::new(ksp.ny(), ksp.nz())?;
    let mut out = ksp.clone();
    plan.inverse(&mut out)?;
    Ok(out)
}

/// Centered unitary 1-D transform along the first axis of a `[n0][rest]`
/// row-major block, used to move volumes between `kx` and `x`.
pub fn transform_leading_axis(
    data: &mut [Complex64],
    n0: usize,
    dir: Direction,
) -> Result<()> {
    if n0 == 0 || data.len() % n0 != 0 {
        return Err(Error::invalid("leading axis does not divide the block"));
    }
    let rest = data.len() / n0;
    let plan = FftPlan::new(n0)?;
    let mut line = vec![Complex64::new(0.0, 0.0); n0];
    let mut scratch = Vec::new();
    for j in 0..rest {
        for i in 0..n0 {
            line[i] = data[i * rest + j];
        }
        plan.centered(&mut line, dir, &mut scratch);
        for i in 0..n0 {
            data[i * rest + j] = line[i];
        }
    }
    Ok(())
}
