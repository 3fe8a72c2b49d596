//! Thread-pool execution of patch jobs and the per-patch timing harness.

use std::time::{Duration, Instant};

use bpnet_core::bandpass::{extract_patch, extract_real, make_window, pad_kspace, pad_real, PatchGeometry, WindowSpec};
use bpnet_core::denoiser::NormMode;
use bpnet_core::exec::{job_error, Executor};
use bpnet_core::model::{PatchCenter, PatchOperator, SensitivityMaps};
use bpnet_core::network::{reconstruct_patch_normalized, UnrolledNetParams};
use bpnet_core::sampling::{generate_mask, Density, MaskSpec};
use bpnet_core::simulate::{make_coils, make_phantom, synthesize_kspace, CoilSpec, PhantomSpec};
use bpnet_core::{MultiCoilKSpace, RealGrid};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// A fixed-size rayon pool. Results land in job order, so the output never
/// depends on which worker finished first.
#[derive(Debug)]
pub struct WorkerPool {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl WorkerPool {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(Self { pool, workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }
}

impl Executor for WorkerPool {
    fn run<T, F>(&self, n: usize, job: F) -> bpnet_core::Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> bpnet_core::Result<T> + Sync + Send,
    {
        let slots: Vec<bpnet_core::Result<T>> = self.pool.install(|| (0..n).into_par_iter().map(&job).collect());
        slots
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| job_error(i, e)))
            .collect()
    }
}

/// One patch of measured data.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchJob {
    pub center: PatchCenter,
    pub u: MultiCoilKSpace,
    pub mask: RealGrid,
}

/// What every job shares: maps at patch resolution, the window, the network.
#[derive(Debug, Clone, Copy)]
pub struct PatchContext<'a> {
    pub maps: &'a SensitivityMaps,
    pub window: &'a RealGrid,
    pub params: &'a UnrolledNetParams,
    pub mode: NormMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchRun {
    pub outputs: Vec<MultiCoilKSpace>,
    pub wall: Duration,
}

/// Cuts the padded measurement into one job per geometry center.
pub fn patch_jobs(ksp: &MultiCoilKSpace, mask: &RealGrid, geometry: &PatchGeometry, pad: usize) -> Result<Vec<PatchJob>> {
    let mut measured = ksp.clone();
    measured.mul_real(mask)?;
    let padded = pad_kspace(&measured, pad)?;
    let padded_mask = pad_real(mask, pad)?;
    let dims = geometry.patch_dims();
    geometry
        .centers
        .iter()
        .map(|&center| {
            Ok(PatchJob {
                center,
                u: extract_patch(&padded, center, dims)?,
                mask: extract_real(&padded_mask, center, dims)?,
            })
        })
        .collect()
}

/// Reconstructs every job on `exec`; outputs follow job order.
pub fn run_patches<E: Executor>(jobs: &[PatchJob], ctx: PatchContext<'_>, exec: &E) -> Result<PatchRun> {
    let start = Instant::now();
    let outputs = exec.run(jobs.len(), |i| {
        let j = &jobs[i];
        let op = PatchOperator::new(ctx.maps, &j.mask, ctx.window, j.center)?;
        reconstruct_patch_normalized(&j.u, &op, ctx.params, ctx.mode)
    })?;
    Ok(PatchRun {
        outputs,
        wall: start.elapsed(),
    })
}

pub const DEFAULT_RUNS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRecord {
    pub patch_dim: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub runs: usize,
    pub workers: usize,
}

/// Synthetic square patch used for timing: a phantom spectrum, four coils,
/// a variable-density mask at R = 4 and a stopband of a tenth of the side.
pub fn bench_job(dim: usize, seed: u64) -> Result<(PatchJob, SensitivityMaps, RealGrid)> {
    let maps = make_coils(&CoilSpec::new(4, seed), dim, dim)?;
    let img = make_phantom(&PhantomSpec::new(dim, dim, seed))?;
    let full = synthesize_kspace(&img, &maps)?;
    let spec = MaskSpec::new(dim, dim, 4.0, Density::Variable { power: 2.0 })
        .with_calib((dim / 4).min(20))
        .with_seed(seed);
    let mask = generate_mask(&spec)?;
    let mut u = full;
    u.mul_real(&mask)?;
    let window = make_window(&WindowSpec::new(dim, dim, (dim / 10).max(1)))?;
    let job = PatchJob {
        center: PatchCenter::new(0, 0),
        u,
        mask,
    };
    Ok((job, maps, window))
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Times one patch reconstruction per dimension, `runs` times after one
/// untimed warm-up.
pub fn bench_patch_time(dims: &[usize], params: &UnrolledNetParams, runs: usize, mode: NormMode) -> Result<Vec<BenchRecord>> {
    if runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    dims.iter()
        .map(|&dim| {
            let (job, maps, window) = bench_job(dim, dim as u64)?;
            let op = PatchOperator::new(&maps, &job.mask, &window, job.center)?;
            reconstruct_patch_normalized(&job.u, &op, params, mode)?;
            let times: Vec<f64> = (0..runs)
                .map(|_| {
                    let t = Instant::now();
                    let out = reconstruct_patch_normalized(&job.u, &op, params, mode);
                    let ms = t.elapsed().as_secs_f64() * 1e3;
                    out.map(|o| {
                        std::hint::black_box(o);
                        ms
                    })
                })
                .collect::<bpnet_core::Result<_>>()?;
            let (mean_ms, std_ms) = mean_std(&times);
            Ok(BenchRecord {
                patch_dim: dim,
                mean_ms,
                std_ms,
                runs,
                workers: 1,
            })
        })
        .collect()
}

/// Coefficient of determination of the least-squares fit `y = a + b x`.
pub fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy * sxy / (sxx * syy)
}

/// R² of the measured times against `N² log N` and against `N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFit {
    pub r2_nlogn: f64,
    pub r2_linear: f64,
}

pub fn scaling_fit(records: &[BenchRecord]) -> ScalingFit {
    let t: Vec<f64> = records.iter().map(|r| r.mean_ms).collect();
    let n: Vec<f64> = records.iter().map(|r| r.patch_dim as f64).collect();
    let nlogn: Vec<f64> = n.iter().map(|d| d * d * (d * d).ln()).collect();
    ScalingFit {
        r2_nlogn: r_squared(&nlogn, &t),
        r2_linear: r_squared(&n, &t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bpnet_core::exec::Serial;

    #[test]
    fn pool_keeps_job_order() {
        let pool = WorkerPool::new(3).unwrap();
        let out = pool.run(100, |i| Ok(i * 2)).unwrap();
        assert_eq!(out, (0..100).map(|i| i * 2).collect::<Vec<_>>());
        let empty: Vec<u8> = pool.run(0, |_| Ok(0)).unwrap();
        assert!(empty.is_empty());
        assert!(WorkerPool::new(0).is_err());
    }

    #[test]
    fn pool_reports_lowest_failing_job() {
        let pool = WorkerPool::new(4).unwrap();
        let err = pool
            .run(40, |i| if i % 7 == 5 { Err(bpnet_core::Error::ZeroEnergy) } else { Ok(i) })
            .unwrap_err();
        assert!(matches!(err, bpnet_core::Error::Job { index: 5, .. }));
    }

    #[test]
    fn parallel_patches_match_serial() {
        let (job, maps, window) = bench_job(24, 3).unwrap();
        let params = UnrolledNetParams::random(2, 1, 4, 1).unwrap();
        let jobs: Vec<PatchJob> = (0..6)
            .map(|k| PatchJob {
                center: PatchCenter::new(k - 3, 2 * k),
                ..job.clone()
            })
            .collect();
        let ctx = PatchContext {
            maps: &maps,
            window: &window,
            params: &params,
            mode: NormMode::PerExample,
        };
        let serial = run_patches(&jobs, ctx, &Serial).unwrap();
        let parallel = run_patches(&jobs, ctx, &WorkerPool::new(4).unwrap()).unwrap();
        assert_eq!(serial.outputs, parallel.outputs);
    }

    #[test]
    fn single_run_has_zero_spread() {
        let params = UnrolledNetParams::identity(1, 1, 2).unwrap();
        let rec = bench_patch_time(&[16], &params, 1, NormMode::PerExample).unwrap();
        assert_eq!(rec[0].std_ms, 0.0);
        assert!(rec[0].mean_ms > 0.0);
    }

    #[test]
    fn r_squared_of_exact_line_is_one() {
        let x = [1.0, 2.0, 3.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        assert!((r_squared(&x, &y) - 1.0).abs() < 1e-12);
    }
}
