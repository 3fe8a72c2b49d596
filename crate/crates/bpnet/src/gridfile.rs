//! Self-describing container for complex and real arrays.
//!
//! ```text
//! BPGRID 1\n
//! dtype=complex128\n        complex128 | complex64 | float64 | float32
//! shape=4,64,64\n           row-major, slowest axis first
//! axes=coil,ky,kz\n
//! <key>=<value>\n           any number of free metadata lines
//! end\n
//! <payload>                 little-endian; complex values interleaved (re, im)
//! ```
//!
//! The payload must hold exactly `product(shape)` elements.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use bpnet_core::model::SensitivityMaps;
use bpnet_core::{Complex64, ComplexGrid, MultiCoilKSpace, RealGrid};

use crate::error::{Error, Result};

const MAGIC: &str = "BPGRID 1";
const END: &str = "end";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    Complex128,
    Complex64,
    Float64,
    Float32,
}

impl DType {
    fn tag(self) -> &'static str {
        match self {
            DType::Complex128 => "complex128",
            DType::Complex64 => "complex64",
            DType::Float64 => "float64",
            DType::Float32 => "float32",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [DType::Complex128, DType::Complex64, DType::Float64, DType::Float32]
            .into_iter()
            .find(|d| d.tag() == s)
    }

    pub fn is_complex(self) -> bool {
        matches!(self, DType::Complex128 | DType::Complex64)
    }

    /// Bytes per stored element.
    fn width(self) -> usize {
        match self {
            DType::Complex128 => 16,
            DType::Complex64 | DType::Float64 => 8,
            DType::Float32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Complex(Vec<Complex64>),
    Real(Vec<f64>),
}

impl Payload {
    fn len(&self) -> usize {
        match self {
            Payload::Complex(v) => v.len(),
            Payload::Real(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub axes: Vec<String>,
    pub meta: BTreeMap<String, String>,
    pub payload: Payload,
}

fn axes(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

impl GridFile {
    /// Double-precision container; checks shape against payload.
    pub fn new(shape: Vec<usize>, axis_names: Vec<String>, payload: Payload) -> Result<Self> {
        let dtype = match payload {
            Payload::Complex(_) => DType::Complex128,
            Payload::Real(_) => DType::Float64,
        };
        let g = Self {
            dtype,
            shape,
            axes: axis_names,
            meta: BTreeMap::new(),
            payload,
        };
        g.check().map_err(|d| Error::format("<memory>", d))?;
        Ok(g)
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    /// Stores values at 32 bits; reading back is then lossy.
    pub fn single_precision(mut self) -> Self {
        self.dtype = if self.dtype.is_complex() { DType::Complex64 } else { DType::Float32 };
        self
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.shape.is_empty() || self.shape.contains(&0) {
            return Err(format!("shape {:?} has an empty axis", self.shape));
        }
        if self.axes.len() != self.shape.len() {
            return Err(format!("{} axis labels for {} axes", self.axes.len(), self.shape.len()));
        }
        let n: usize = self.shape.iter().product();
        if n != self.payload.len() {
            return Err(format!("shape {:?} needs {n} elements, payload has {}", self.shape, self.payload.len()));
        }
        if self.dtype.is_complex() != matches!(self.payload, Payload::Complex(_)) {
            return Err(format!("dtype {} does not match payload kind", self.dtype.tag()));
        }
        Ok(())
    }

    pub fn from_kspace(ksp: &MultiCoilKSpace) -> Self {
        let (ny, nz) = ksp.dims();
        let data = ksp.coils().iter().flat_map(|c| c.data().iter().copied()).collect();
        Self::new(vec![ksp.nc(), ny, nz], axes(&["coil", "ky", "kz"]), Payload::Complex(data)).expect("consistent shape")
    }

    pub fn from_images(images: &[ComplexGrid]) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::format("<memory>", "no image channels"))?;
        let (ny, nz) = first.dims();
        let data = images.iter().flat_map(|c| c.data().iter().copied()).collect();
        Self::new(vec![images.len(), ny, nz], axes(&["set", "y", "z"]), Payload::Complex(data))
    }

    pub fn from_real(grid: &RealGrid) -> Self {
        Self::new(vec![grid.ny(), grid.nz()], axes(&["ky", "kz"]), Payload::Real(grid.data().to_vec())).expect("consistent shape")
    }

    pub fn from_maps(maps: &SensitivityMaps) -> Self {
        let (ny, nz) = maps.dims();
        let data = maps
            .sets()
            .iter()
            .flat_map(|s| s.iter().flat_map(|c| c.data().iter().copied()))
            .collect();
        Self::new(vec![maps.nsets(), maps.nc(), ny, nz], axes(&["set", "coil", "y", "z"]), Payload::Complex(data))
            .expect("consistent shape")
    }

    fn complex(&self) -> Result<&[Complex64]> {
        match &self.payload {
            Payload::Complex(v) => Ok(v),
            Payload::Real(_) => Err(Error::format("<grid>", "expected complex data, found real")),
        }
    }

    fn expect_rank(&self, rank: usize) -> Result<()> {
        if self.shape.len() != rank {
            return Err(Error::format("<grid>", format!("expected {rank} axes, found shape {:?}", self.shape)));
        }
        Ok(())
    }

    /// Splits a complex payload into `ny x nz` planes.
    fn planes(&self) -> Result<Vec<ComplexGrid>> {
        let data = self.complex()?;
        let r = self.shape.len();
        let (ny, nz) = (self.shape[r - 2], self.shape[r - 1]);
        data.chunks(ny * nz)
            .map(|c| ComplexGrid::new(ny, nz, c.to_vec()).map_err(Error::from))
            .collect()
    }

    pub fn to_kspace(&self) -> Result<MultiCoilKSpace> {
        self.expect_rank(3)?;
        Ok(MultiCoilKSpace::new(self.planes()?)?)
    }

    pub fn to_images(&self) -> Result<Vec<ComplexGrid>> {
        self.expect_rank(3)?;
        self.planes()
    }

    pub fn to_real(&self) -> Result<RealGrid> {
        self.expect_rank(2)?;
        match &self.payload {
            Payload::Real(v) => Ok(RealGrid::new(self.shape[0], self.shape[1], v.clone())?),
            Payload::Complex(_) => Err(Error::format("<grid>", "expected real data, found complex")),
        }
    }

    /// Accepts `[set][coil][y][z]` or `[coil][y][z]` (one set).
    pub fn to_maps(&self) -> Result<SensitivityMaps> {
        let (nsets, nc) = match self.shape.len() {
            4 => (self.shape[0], self.shape[1]),
            3 => (1, self.shape[0]),
            _ => return Err(Error::format("<grid>", format!("shape {:?} is not a map stack", self.shape))),
        };
        let mut planes = self.planes()?.into_iter();
        let sets = (0..nsets).map(|_| planes.by_ref().take(nc).collect()).collect();
        Ok(SensitivityMaps::new(sets)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!(
            "{MAGIC}\ndtype={}\nshape={}\naxes={}\n",
            self.dtype.tag(),
            self.shape.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
            self.axes.join(",")
        )
        .into_bytes();
        for (k, v) in &self.meta {
            out.extend_from_slice(format!("{k}={v}\n").as_bytes());
        }
        out.extend_from_slice(format!("{END}\n").as_bytes());
        out.reserve(self.payload.len() * self.dtype.width());
        match (&self.payload, self.dtype) {
            (Payload::Complex(v), DType::Complex128) => {
                for c in v {
                    out.extend_from_slice(&c.re.to_le_bytes());
                    out.extend_from_slice(&c.im.to_le_bytes());
                }
            }
            (Payload::Complex(v), _) => {
                for c in v {
                    out.extend_from_slice(&(c.re as f32).to_le_bytes());
                    out.extend_from_slice(&(c.im as f32).to_le_bytes());
                }
            }
            (Payload::Real(v), DType::Float64) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            (Payload::Real(v), _) => v.iter().for_each(|x| out.extend_from_slice(&(*x as f32).to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let mut next_line = || -> std::result::Result<&str, String> {
            let rest = &bytes[pos..];
            let n = rest.iter().position(|&b| b == b'\n').ok_or("header is not terminated")?;
            pos += n + 1;
            std::str::from_utf8(&rest[..n]).map_err(|_| "header is not UTF-8".to_string())
        };
        if next_line()? != MAGIC {
            return Err("not a BPGRID 1 file".into());
        }
        let (mut dtype, mut shape, mut axis_names) = (None, None, None);
        let mut meta = BTreeMap::new();
        loop {
            let line = next_line()?;
            if line == END {
                break;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("header line '{line}' is not key=value"))?;
            match k {
                "dtype" => dtype = Some(DType::parse(v).ok_or_else(|| format!("unknown dtype '{v}'"))?),
                "shape" => {
                    shape = Some(
                        v.split(',')
                            .map(|d| d.trim().parse::<usize>().map_err(|_| format!("bad shape entry '{d}'")))
                            .collect::<std::result::Result<Vec<_>, _>>()?,
                    )
                }
                "axes" => axis_names = Some(v.split(',').map(str::to_string).collect::<Vec<_>>()),
                _ => {
                    meta.insert(k.to_string(), v.to_string());
                }
            }
        }
        let dtype = dtype.ok_or("header has no dtype")?;
        let shape: Vec<usize> = shape.ok_or("header has no shape")?;
        let axes = axis_names.unwrap_or_else(|| (0..shape.len()).map(|i| format!("a{i}")).collect());
        if shape.is_empty() || shape.contains(&0) {
            return Err(format!("shape {shape:?} has an empty axis"));
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or("shape overflows")?;
        let body = &bytes[pos..];
        if Some(body.len()) != n.checked_mul(dtype.width()) {
            return Err(format!(
                "shape {shape:?} with {} needs {} payload bytes, found {}",
                dtype.tag(),
                n * dtype.width(),
                body.len()
            ));
        }
        let f64s = |b: &[u8]| f64::from_le_bytes(b.try_into().unwrap());
        let f32s = |b: &[u8]| f32::from_le_bytes(b.try_into().unwrap()) as f64;
        let payload = match dtype {
            DType::Complex128 => Payload::Complex(body.chunks_exact(16).map(|c| Complex64::new(f64s(&c[..8]), f64s(&c[8..]))).collect()),
            DType::Complex64 => Payload::Complex(body.chunks_exact(8).map(|c| Complex64::new(f32s(&c[..4]), f32s(&c[4..]))).collect()),
            DType::Float64 => Payload::Real(body.chunks_exact(8).map(f64s).collect()),
            DType::Float32 => Payload::Real(body.chunks_exact(4).map(f32s).collect()),
        };
        let g = Self {
            dtype,
            shape,
            axes,
            meta,
            payload,
        };
        g.check()?;
        Ok(g)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|d| Error::format(path, d))
    }
}
