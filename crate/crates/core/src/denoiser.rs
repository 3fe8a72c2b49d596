//! Residual convolutional denoiser acting on the real and imaginary parts of
//! the latent image.
//!
//! Seven circular 3x3 convolutions: one expanding to `feature_width` maps,
//! five hidden, one contracting back. The first six are followed by a
//! normalization layer and a ReLU; the last is linear and its output is
//! added to the input.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand::Rng;

use crate::conv;
use crate::grid::ComplexGrid;
use crate::math::sqrt;
use crate::{Error, Result};

pub const N_LAYERS: usize = 7;
pub const NORM_EPS: f64 = 1e-5;
pub const NORM_MOMENTUM: f64 = 0.1;
/// Extra factor on the last layer's initial weights so an untrained block
/// starts close to the identity.
const LAST_LAYER_INIT_GAIN: f64 = 0.1;

/// How normalization layers obtain their statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Statistics of each example over its spatial extent. Used in
    /// training and, by default, at inference.
    PerExample,
    /// Frozen running statistics accumulated during training.
    Running,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub cin: usize,
    pub cout: usize,
    /// `[cout][cin][3][3]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            cin,
            cout,
            weight: vec![0.0; cout * cin * conv::TAPS],
            bias: vec![0.0; cout],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormLayer {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl NormLayer {
    fn identity(ch: usize) -> Self {
        Self {
            scale: vec![1.0; ch],
            offset: vec![0.0; ch],
            running_mean: vec![0.0; ch],
            running_var: vec![1.0; ch],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub layers: Vec<ConvLayer>,
    /// One per layer except the last.
    pub norms: Vec<NormLayer>,
}

fn layer_dims(nsets: usize, features: usize) -> Vec<(usize, usize)> {
    let io = 2 * nsets;
    (0..N_LAYERS)
        .map(|l| match l {
            0 => (io, features),
            l if l == N_LAYERS - 1 => (features, io),
            _ => (features, features),
        })
        .collect()
}

impl DenoiserParams {
    /// All convolutions zero, normalization the identity: the block passes
    /// its input straight through.
    pub fn identity(nsets: usize, features: usize) -> Result<Self> {
        Self::check_shape(nsets, features)?;
        let layers = layer_dims(nsets, features)
            .into_iter()
            .map(|(i, o)| ConvLayer::zeros(i, o))
            .collect();
        let norms = (0..N_LAYERS - 1).map(|_| NormLayer::identity(features)).collect();
        Ok(Self { layers, norms })
    }

    /// He-uniform weights, zero biases, identity normalization.
    pub fn random<R: Rng + ?Sized>(nsets: usize, features: usize, rng: &mut R) -> Result<Self> {
        let mut p = Self::identity(nsets, features)?;
        for (l, layer) in p.layers.iter_mut().enumerate() {
            let mut bound = sqrt(6.0 / (layer.cin * conv::TAPS) as f64);
            if l == N_LAYERS - 1 {
                bound *= LAST_LAYER_INIT_GAIN;
            }
            for w in &mut layer.weight {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(p)
    }

    fn check_shape(nsets: usize, features: usize) -> Result<()> {
        if !(1..=2).contains(&nsets) {
            return Err(Error::invalid("denoiser needs one or two map sets"));
        }
        if features == 0 {
            return Err(Error::invalid("feature width must be positive"));
        }
        Ok(())
    }

    pub fn nsets(&self) -> usize {
        self.layers[0].cin / 2
    }

    pub fn feature_width(&self) -> usize {
        self.layers[0].cout
    }

    /// Checks layer count and channel chaining.
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != N_LAYERS || self.norms.len() != N_LAYERS - 1 {
            return Err(Error::invalid("denoiser must have 7 conv and 6 norm layers"));
        }
        let expected = layer_dims(self.nsets(), self.feature_width());
        for (layer, &(i, o)) in self.layers.iter().zip(&expected) {
            if (layer.cin, layer.cout) != (i, o)
                || layer.weight.len() != i * o * conv::TAPS
                || layer.bias.len() != o
            {
                return Err(Error::invalid("denoiser layer shapes do not chain"));
            }
        }
        for n in &self.norms {
            let f = self.feature_width();
            if [&n.scale, &n.offset, &n.running_mean, &n.running_var]
                .iter()
                .any(|v| v.len() != f)
            {
                return Err(Error::invalid("normalization layer width mismatch"));
            }
        }
        Ok(())
    }

    /// Trainable arrays in a fixed order: per layer weight and bias, then
    /// per norm layer scale and offset.
    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(4 * N_LAYERS);
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        for n in &self.norms {
            out.push(&n.scale);
            out.push(&n.offset);
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(4 * N_LAYERS);
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for n in &mut self.norms {
            out.push(&mut n.scale);
            out.push(&mut n.offset);
        }
        out
    }

    /// Same shapes with every value zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for a in z.trainable_mut() {
            a.fill(0.0);
        }
        for n in &mut z.norms {
            n.running_mean.fill(0.0);
            n.running_var.fill(0.0);
        }
        z
    }
}

/// Intermediate values kept by a forward pass for [`backward`].
#[derive(Debug, Clone)]
pub struct DenoiserTape {
    h: usize,
    w: usize,
    mode: NormMode,
    /// Input of every convolution.
    inputs: Vec<Vec<f64>>,
    /// Normalized pre-activation `x_hat` of every norm layer.
    xhat: Vec<Vec<f64>>,
    inv_std: Vec<Vec<f64>>,
    stats: NormStats,
}

fn to_planes(y: &[ComplexGrid]) -> Vec<f64> {
    let hw = y[0].data().len();
    let mut out = vec![0.0; 2 * y.len() * hw];
    for (s, ch) in y.iter().enumerate() {
        let (re, im) = out[2 * s * hw..2 * (s + 1) * hw].split_at_mut(hw);
        for ((r, i), v) in re.iter_mut().zip(im.iter_mut()).zip(ch.data()) {
            *r = v.re;
            *i = v.im;
        }
    }
    out
}

fn from_planes(p: &[f64], nsets: usize, h: usize, w: usize) -> Result<Vec<ComplexGrid>> {
    let hw = h * w;
    (0..nsets)
        .map(|s| {
            let re = &p[2 * s * hw..(2 * s + 1) * hw];
            let im = &p[(2 * s + 1) * hw..(2 * s + 2) * hw];
            ComplexGrid::new(h, w, re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect())
        })
        .collect()
}

fn check_input(params: &DenoiserParams, y: &[ComplexGrid]) -> Result<(usize, usize)> {
    if y.len() != params.nsets() {
        return Err(Error::ChannelMismatch {
            expected: params.nsets(),
            found: y.len(),
        });
    }
    let dims = y[0].dims();
    for ch in y {
        ch.require_dims(dims)?;
    }
    Ok(dims)
}

/// Denoises a latent image (one complex channel per map set).
pub fn forward(params: &DenoiserParams, y: &[ComplexGrid], mode: NormMode) -> Result<Vec<ComplexGrid>> {
    forward_taped(params, y, mode).map(|(out, _)| out)
}

/// Forward pass that also returns the tape needed for [`backward`].
pub fn forward_taped(
    params: &DenoiserParams,
    y: &[ComplexGrid],
    mode: NormMode,
) -> Result<(Vec<ComplexGrid>, DenoiserTape)> {
    let (h, w) = check_input(params, y)?;
    let hw = h * w;
    let x = to_planes(y);
    let mut tape = DenoiserTape {
        h,
        w,
        mode,
        inputs: Vec::with_capacity(N_LAYERS),
        xhat: Vec::with_capacity(N_LAYERS - 1),
        inv_std: Vec::with_capacity(N_LAYERS - 1),
        stats: Vec::with_capacity(N_LAYERS - 1),
    };
    let mut a = x.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let z = conv::forward(&a, layer.cin, layer.cout, h, w, &layer.weight, &layer.bias);
        tape.inputs.push(a);
        if l == N_LAYERS - 1 {
            a = z;
            break;
        }
        let norm = &params.norms[l];
        let mut xhat = z;
        let mut inv = vec![0.0; layer.cout];
        let mut means = vec![0.0; layer.cout];
        let mut vars = vec![0.0; layer.cout];
        let mut act = vec![0.0; layer.cout * hw];
        for c in 0..layer.cout {
            let plane = &mut xhat[c * hw..(c + 1) * hw];
            let (mean, var) = match mode {
                NormMode::PerExample => {
                    let mean = plane.iter().sum::<f64>() / hw as f64;
                    let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
                    (mean, var)
                }
                NormMode::Running => (norm.running_mean[c], norm.running_var[c]),
            };
            let is = 1.0 / sqrt(var + NORM_EPS);
            let (g, b) = (norm.scale[c], norm.offset[c]);
            for (v, o) in plane.iter_mut().zip(&mut act[c * hw..(c + 1) * hw]) {
                *v = (*v - mean) * is;
                *o = (g * *v + b).max(0.0);
            }
            inv[c] = is;
            means[c] = mean;
            vars[c] = var;
        }
        tape.xhat.push(xhat);
        tape.inv_std.push(inv);
        tape.stats.push((means, vars));
        a = act;
    }
    for (o, i) in a.iter_mut().zip(&x) {
        *o += i;
    }
    Ok((from_planes(&a, params.nsets(), h, w)?, tape))
}

/// Reverse pass. `grad_out` is the cogradient `dL/dRe + i dL/dIm` of the
/// denoiser output; returns the same for its input and accumulates the
/// parameter gradients into `grads`.
pub fn backward(
    params: &DenoiserParams,
    tape: &DenoiserTape,
    grad_out: &[ComplexGrid],
    grads: &mut DenoiserParams,
) -> Result<Vec<ComplexGrid>> {
    let (h, w) = (tape.h, tape.w);
    check_input(params, grad_out)?;
    grad_out[0].require_dims((h, w))?;
    let hw = h * w;
    let g_out = to_planes(grad_out);
    let mut g = g_out.clone();
    for l in (0..N_LAYERS).rev() {
        let layer = &params.layers[l];
        if l < N_LAYERS - 1 {
            // g is d act; go back through ReLU and normalization
            let norm = &params.norms[l];
            let gn = &mut grads.norms[l];
            let xhat = &tape.xhat[l];
            for c in 0..layer.cout {
                let xs = &xhat[c * hw..(c + 1) * hw];
                let gs = &mut g[c * hw..(c + 1) * hw];
                let (gamma, beta) = (norm.scale[c], norm.offset[c]);
                let mut sum_g = 0.0;
                let mut sum_gx = 0.0;
                for (gv, &xv) in gs.iter_mut().zip(xs) {
                    if gamma * xv + beta <= 0.0 {
                        *gv = 0.0;
                    }
                    sum_g += *gv;
                    sum_gx += *gv * xv;
                }
                gn.offset[c] += sum_g;
                gn.scale[c] += sum_gx;
                let is = tape.inv_std[l][c];
                match tape.mode {
                    NormMode::PerExample => {
                        let n = hw as f64;
                        let (mg, mgx) = (sum_g / n, sum_gx / n);
                        for (gv, &xv) in gs.iter_mut().zip(xs) {
                            *gv = gamma * is * (*gv - mg - xv * mgx);
                        }
                    }
                    NormMode::Running => {
                        for gv in gs.iter_mut() {
                            *gv *= gamma * is;
                        }
                    }
                }
            }
        }
        let (gi, gw, gb) = conv::backward(
            &tape.inputs[l],
            &g,
            layer.cin,
            layer.cout,
            h,
            w,
            &layer.weight,
            true,
        );
        for (a, b) in grads.layers[l].weight.iter_mut().zip(&gw) {
            *a += b;
        }
        for (a, b) in grads.layers[l].bias.iter_mut().zip(&gb) {
            *a += b;
        }
        g = gi;
    }
    // residual path
    for (a, b) in g.iter_mut().zip(&g_out) {
        *a += b;
    }
    from_planes(&g, params.nsets(), h, w)
}

/// Per-channel `(mean, biased variance)` of each normalization layer for
/// one example.
pub type NormStats = Vec<(Vec<f64>, Vec<f64>)>;

impl DenoiserTape {
    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn into_stats(self) -> NormStats {
        self.stats
    }
}

/// Folds per-example statistics of a batch into the running averages,
/// `running = (1 - m) running + m batch` with the variance unbiased over
/// `samples` values per channel.
pub fn update_running_stats(params: &mut DenoiserParams, batch: &[&NormStats], samples: usize) {
    if batch.is_empty() {
        return;
    }
    let n = samples as f64;
    let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
    let k = batch.len() as f64;
    for (l, norm) in params.norms.iter_mut().enumerate() {
        for c in 0..norm.scale.len() {
            let mean = batch.iter().map(|s| s[l].0[c]).sum::<f64>() / k;
            let var = batch.iter().map(|s| s[l].1[c]).sum::<f64>() / k * unbias;
            norm.running_mean[c] = (1.0 - NORM_MOMENTUM) * norm.running_mean[c] + NORM_MOMENTUM * mean;
            norm.running_var[c] = (1.0 - NORM_MOMENTUM) * norm.running_var[c] + NORM_MOMENTUM * var;
        }
    }
}
