//! 3-D acquisitions: the readout axis is fully sampled, so a volume is
//! inverse transformed along `kx` and each `x` position becomes an
//! independent 2-D example.

use bpnet_core::fft::{transform_leading_axis, Direction};
use bpnet_core::{Complex64, ComplexGrid, MultiCoilKSpace};

use crate::error::{Error, Result};
use crate::gridfile::{GridFile, Payload};

/// Multi-coil volume stored `[coil][x][y][z]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub nc: usize,
    /// Readout extent.
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub data: Vec<Complex64>,
}

impl Volume {
    pub fn new(nc: usize, nx: usize, ny: usize, nz: usize, data: Vec<Complex64>) -> Result<Self> {
        if nc * nx * ny * nz == 0 {
            return Err(Error::Config("volume dimensions must be positive".into()));
        }
        if data.len() != nc * nx * ny * nz {
            return Err(Error::Config(format!(
                "volume {nc}x{nx}x{ny}x{nz} needs {} values, found {}",
                nc * nx * ny * nz,
                data.len()
            )));
        }
        Ok(Self { nc, nx, ny, nz, data })
    }

    pub fn to_grid_file(&self) -> GridFile {
        GridFile::new(
            vec![self.nc, self.nx, self.ny, self.nz],
            ["coil", "kx", "ky", "kz"].map(String::from).to_vec(),
            Payload::Complex(self.data.clone()),
        )
        .expect("consistent shape")
    }

    pub fn from_grid_file(g: &GridFile) -> Result<Self> {
        match (&g.payload, g.shape.as_slice()) {
            (Payload::Complex(v), &[nc, nx, ny, nz]) => Self::new(nc, nx, ny, nz, v.clone()),
            _ => Err(Error::Config(format!("shape {:?} is not a complex coil volume", g.shape))),
        }
    }

    fn transform_readout(&mut self, dir: Direction) -> Result<()> {
        let block = self.nx * self.ny * self.nz;
        for coil in self.data.chunks_mut(block) {
            transform_leading_axis(coil, self.nx, dir)?;
        }
        Ok(())
    }
}

/// Hybrid `(x, ky, kz)` slices, one example per readout position.
pub fn slice_volume(volume: &Volume) -> Result<Vec<MultiCoilKSpace>> {
    let mut hybrid = volume.clone();
    hybrid.transform_readout(Direction::Inverse)?;
    let plane = volume.ny * volume.nz;
    let block = volume.nx * plane;
    (0..volume.nx)
        .map(|x| {
            let coils = (0..volume.nc)
                .map(|c| {
                    let start = c * block + x * plane;
                    ComplexGrid::new(volume.ny, volume.nz, hybrid.data[start..start + plane].to_vec())
                })
                .collect::<bpnet_core::Result<Vec<_>>>()?;
            Ok(MultiCoilKSpace::new(coils)?)
        })
        .collect()
}

/// Inverse of [`slice_volume`]: stacks slices along `x` and transforms the
/// readout back to `kx`.
pub fn stack_slices(slices: &[MultiCoilKSpace]) -> Result<Volume> {
    let first = slices.first().ok_or_else(|| Error::Config("no slices to stack".into()))?;
    let (nc, (ny, nz), nx) = (first.nc(), first.dims(), slices.len());
    let mut data = Vec::with_capacity(nc * nx * ny * nz);
    for c in 0..nc {
        for s in slices {
            if s.nc() != nc || s.dims() != (ny, nz) {
                return Err(Error::Config("slices differ in shape".into()));
            }
            data.extend_from_slice(s.coils()[c].data());
        }
    }
    let mut v = Volume::new(nc, nx, ny, nz, data)?;
    v.transform_readout(Direction::Forward)?;
    Ok(v)
}
