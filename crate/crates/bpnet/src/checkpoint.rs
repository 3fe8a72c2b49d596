//! Versioned binary network checkpoints.
//!
//! ```text
//! magic      8 bytes  "BPNETCK\0"
//! version    u32      1
//! n_iter     u32
//! nsets      u32
//! features   u32
//! n_layers   u32
//! layer dims n_layers x (u32 cin, u32 cout)
//! then per iteration, all f32:
//!   step
//!   per conv layer:  weight [cout][cin][3][3], bias [cout]
//!   per norm layer:  scale, offset, running_mean, running_var  [features each]
//! ```
//!
//! Integers and floats are little-endian.

use std::fs;
use std::path::Path;

use bpnet_core::denoiser::N_LAYERS;
use bpnet_core::network::UnrolledNetParams;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BPNETCK\0";
pub const VERSION: u32 = 1;

fn arrays(p: &UnrolledNetParams) -> impl Iterator<Item = Vec<&[f64]>> {
    p.iterations.iter().map(|it| {
        let mut v: Vec<&[f64]> = vec![std::slice::from_ref(&it.step)];
        for l in &it.denoiser.layers {
            v.push(&l.weight);
            v.push(&l.bias);
        }
        for n in &it.denoiser.norms {
            v.extend([&n.scale[..], &n.offset, &n.running_mean, &n.running_var]);
        }
        v
    })
}

fn arrays_mut(p: &mut UnrolledNetParams) -> impl Iterator<Item = Vec<&mut [f64]>> {
    p.iterations.iter_mut().map(|it| {
        let mut v: Vec<&mut [f64]> = vec![std::slice::from_mut(&mut it.step)];
        for l in &mut it.denoiser.layers {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        for n in &mut it.denoiser.norms {
            v.extend([&mut n.scale[..], &mut n.offset, &mut n.running_mean, &mut n.running_var]);
        }
        v
    })
}

pub fn to_bytes(p: &UnrolledNetParams) -> Result<Vec<u8>> {
    p.validate()?;
    let mut out = MAGIC.to_vec();
    let header = [VERSION, p.n_iter() as u32, p.nsets() as u32, p.feature_width() as u32, N_LAYERS as u32];
    header.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    for l in &p.iterations[0].denoiser.layers {
        out.extend_from_slice(&(l.cin as u32).to_le_bytes());
        out.extend_from_slice(&(l.cout as u32).to_le_bytes());
    }
    for group in arrays(p) {
        for a in group {
            a.iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes()));
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or("checkpoint is truncated")?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> std::result::Result<UnrolledNetParams, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a bpnet checkpoint".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let (n_iter, nsets, features, n_layers) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if n_layers != N_LAYERS {
        return Err(format!("checkpoint has {n_layers} layers, expected {N_LAYERS}"));
    }
    if n_iter > 1024 || features > 4096 {
        return Err(format!("implausible network size: {n_iter} iterations, {features} features"));
    }
    let mut params = UnrolledNetParams::identity(n_iter, nsets, features).map_err(|e| e.to_string())?;
    for (l, layer) in params.iterations[0].denoiser.layers.iter().enumerate() {
        let (cin, cout) = (r.u32()? as usize, r.u32()? as usize);
        if (cin, cout) != (layer.cin, layer.cout) {
            return Err(format!("layer {l} is {cin}->{cout}, expected {}->{}", layer.cin, layer.cout));
        }
    }
    for group in arrays_mut(&mut params) {
        for a in group {
            for v in a.iter_mut() {
                *v = f32::from_le_bytes(r.take(4)?.try_into().unwrap()) as f64;
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    params.validate().map_err(|e| e.to_string())?;
    Ok(params)
}

pub fn save(p: &UnrolledNetParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(p)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<UnrolledNetParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|d| Error::format(path, d))
}
