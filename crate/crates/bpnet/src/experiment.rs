//! Held-out evaluation and the parameter sweeps built on it.

use bpnet_core::bandpass::{plan_patches, PatchGeometry};
use bpnet_core::denoiser::NormMode;
use bpnet_core::exec::Executor;
use bpnet_core::metrics::{evaluate, magnitude, MetricReport};
use bpnet_core::network::{reconstruct_full, zero_filled, UnrolledNetParams, INFERENCE_NORM};
use bpnet_core::sampling::generate_mask;
use bpnet_core::simulate::{Dataset, DatasetSpec};
use bpnet_core::training::{train_loop, TrainConfig};
use bpnet_core::RealGrid;

use crate::error::Result;

/// How a full grid is tiled and reconstructed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconSetup {
    pub patch: (usize, usize),
    pub overlap: (f64, f64),
    pub stopband: usize,
    pub pad: usize,
    pub mode: NormMode,
}

impl Default for ReconSetup {
    fn default() -> Self {
        Self {
            patch: (64, 64),
            overlap: (0.5, 0.5),
            stopband: bpnet_core::bandpass::DEFAULT_STOPBAND,
            pad: 10,
            mode: INFERENCE_NORM,
        }
    }
}

impl ReconSetup {
    pub fn geometry(&self, dims: (usize, usize)) -> Result<PatchGeometry> {
        let full = (dims.0 + 2 * self.pad, dims.1 + 2 * self.pad);
        Ok(plan_patches(full, self.patch, self.overlap, self.stopband)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Per case: network, then zero-filled.
    pub cases: Vec<(MetricReport, MetricReport)>,
}

fn mean(reports: impl Iterator<Item = MetricReport>) -> MetricReport {
    let (mut n, mut acc) = (0.0, [0.0; 3]);
    for r in reports {
        n += 1.0;
        acc[0] += r.psnr;
        acc[1] += r.nrmse;
        acc[2] += r.ssim;
    }
    MetricReport {
        psnr: acc[0] / n,
        nrmse: acc[1] / n,
        ssim: acc[2] / n,
    }
}

impl Evaluation {
    pub fn network(&self) -> MetricReport {
        mean(self.cases.iter().map(|c| c.0))
    }

    pub fn zero_filled(&self) -> MetricReport {
        mean(self.cases.iter().map(|c| c.1))
    }
}

/// Case `i` is image `i` measured with mask `i mod masks`.
pub fn case_mask(data: &Dataset, i: usize) -> &RealGrid {
    &data.masks[i % data.masks.len()]
}

/// Reconstructs every example of `data` and scores network and zero-filled
/// magnitude images against the phantom magnitude.
pub fn evaluate_dataset<E: Executor>(data: &Dataset, params: &UnrolledNetParams, setup: &ReconSetup, exec: &E) -> Result<Evaluation> {
    let Some(first) = data.examples.first() else {
        return Ok(Evaluation { cases: Vec::new() });
    };
    let geometry = setup.geometry(first.kspace.dims())?;
    let cases = data
        .examples
        .iter()
        .zip(&data.images)
        .enumerate()
        .map(|(i, (ex, img))| {
            let mask = case_mask(data, i);
            let truth = magnitude(std::slice::from_ref(img))?;
            let rec = reconstruct_full(&ex.kspace, &ex.maps, mask, &geometry, params, setup.mode, exec)?;
            let zf = zero_filled(&ex.kspace, &ex.maps, mask)?;
            Ok((evaluate(&magnitude(&rec.image)?, &truth)?, evaluate(&magnitude(&zf)?, &truth)?))
        })
        .collect::<bpnet_core::Result<_>>()?;
    Ok(Evaluation { cases })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub metrics: Option<MetricReport>,
    pub baseline_nrmse: Option<f64>,
    /// Why the point has no metrics, e.g. a coverage failure.
    pub error: Option<String>,
}

fn point(value: f64, outcome: Result<Evaluation>) -> Result<SweepPoint> {
    match outcome {
        Ok(ev) => Ok(SweepPoint {
            value,
            metrics: Some(ev.network()),
            baseline_nrmse: Some(ev.zero_filled().nrmse),
            error: None,
        }),
        Err(crate::Error::Core(e @ bpnet_core::Error::Coverage { .. })) => Ok(SweepPoint {
            value,
            metrics: None,
            baseline_nrmse: None,
            error: Some(e.to_string()),
        }),
        Err(e) => Err(e),
    }
}

/// Same overlap on both axes; tilings that fail coverage are kept as
/// error points.
pub fn sweep_overlap<E: Executor>(
    data: &Dataset,
    params: &UnrolledNetParams,
    setup: &ReconSetup,
    overlaps: &[f64],
    exec: &E,
) -> Result<Vec<SweepPoint>> {
    overlaps
        .iter()
        .map(|&o| {
            let s = ReconSetup { overlap: (o, o), ..*setup };
            point(o, evaluate_dataset(data, params, &s, exec))
        })
        .collect()
}

/// Square patch side lengths.
pub fn sweep_patch<E: Executor>(
    data: &Dataset,
    params: &UnrolledNetParams,
    setup: &ReconSetup,
    sides: &[usize],
    exec: &E,
) -> Result<Vec<SweepPoint>> {
    sides
        .iter()
        .map(|&p| {
            let s = ReconSetup { patch: (p, p), ..*setup };
            point(p as f64, evaluate_dataset(data, params, &s, exec))
        })
        .collect()
}

/// Re-draws the mask pool of `data` at each reduction factor.
pub fn sweep_accel<E: Executor>(
    data: &Dataset,
    spec: &DatasetSpec,
    params: &UnrolledNetParams,
    setup: &ReconSetup,
    rs: &[f64],
    exec: &E,
) -> Result<Vec<SweepPoint>> {
    rs.iter()
        .map(|&r| {
            let s = DatasetSpec { r, ..spec.clone() };
            let masks = (0..s.masks)
                .map(|j| generate_mask(&s.mask_spec(j)))
                .collect::<bpnet_core::Result<_>>()?;
            let d = Dataset { masks, ..data.clone() };
            point(r, evaluate_dataset(&d, params, setup, exec))
        })
        .collect()
}

/// Trains one network per iteration count from the same seed and scores
/// each on `test`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_iters<E: Executor>(
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    iters: &[usize],
    features: usize,
    init_seed: u64,
    setup: &ReconSetup,
    exec: &E,
) -> Result<Vec<SweepPoint>> {
    iters
        .iter()
        .map(|&n| {
            let init = UnrolledNetParams::random(n, 1, features, init_seed)?;
            let out = train_loop(&train.examples, &train.masks, init, cfg, exec, |_, _| {})?;
            point(n as f64, evaluate_dataset(test, &out.params, setup, exec))
        })
        .collect()
}
