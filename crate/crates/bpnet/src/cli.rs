//! Command-line surface: argument definitions and command dispatch.

use std::path::{Path, PathBuf};
use std::time::Instant;

use bpnet_core::metrics::{evaluate, magnitude};
use bpnet_core::network::{reconstruct_full, UnrolledNetParams};
use bpnet_core::sampling::{achieved_r, generate_mask, MaskSpec};
use bpnet_core::simulate::{make_coils, make_dataset, make_phantom, synthesize_kspace, CoilSpec, Dataset, DatasetSpec, PhantomSpec};
use bpnet_core::training::{train_loop, LossRecord, TrainConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Settings;
use crate::error::{Error, Result};
use crate::experiment::{self, ReconSetup};
use crate::gridfile::GridFile;
use crate::runtime::{bench_patch_time, scaling_fit, WorkerPool};
use crate::{checkpoint, report};

#[derive(Debug, Parser)]
#[command(name = "bpnet", version, about = "Patch-parallel k-space reconstruction")]
pub struct Cli {
    /// key=value file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by all commands. Unset flags fall back to the config file
/// and then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Grid size, N or NxM.
    #[arg(long)]
    pub size: Option<String>,
    /// Patch size, N or NxM.
    #[arg(long)]
    pub patch: Option<String>,
    #[arg(long = "overlap-y")]
    pub overlap_y: Option<f64>,
    #[arg(long = "overlap-z")]
    pub overlap_z: Option<f64>,
    #[arg(long)]
    pub stopband: Option<usize>,
    #[arg(long)]
    pub pad: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Target reduction factor.
    #[arg(long = "R")]
    pub r: Option<f64>,
    /// uniform | variable
    #[arg(long)]
    pub density: Option<String>,
    #[arg(long)]
    pub calib: Option<usize>,
    #[arg(long)]
    pub coils: Option<usize>,
    /// per-example | running
    #[arg(long)]
    pub norm: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long = "test-count")]
    pub test_count: Option<usize>,
    #[arg(long)]
    pub masks: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
}

impl Flags {
    fn apply(&self, s: &mut Settings) -> Result<()> {
        macro_rules! put {
            ($($field:ident => $key:literal),* $(,)?) => {
                $(if let Some(v) = &self.$field { s.set($key, v)?; })*
            };
        }
        put!(size => "size", patch => "patch", overlap_y => "overlap-y", overlap_z => "overlap-z",
             stopband => "stopband", pad => "pad", iters => "iters", features => "features",
             workers => "workers", seed => "seed", r => "R", density => "density", calib => "calib",
             coils => "coils", norm => "norm", count => "count", test_count => "test-count",
             masks => "masks", steps => "steps", batch => "batch", lr => "lr", runs => "runs");
        if let Some(p) = &self.checkpoint {
            s.set("checkpoint", p.display())?;
        }
        Ok(())
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Random ellipse phantom image.
    Phantom {
        #[command(flatten)]
        flags: Flags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fully sampled multi-coil k-space of an image.
    Synth {
        #[command(flatten)]
        flags: Flags,
        #[arg(long)]
        image: PathBuf,
        /// Existing maps; simulated from --coils and --seed when absent.
        #[arg(long)]
        maps: Option<PathBuf>,
        #[arg(long = "maps-out")]
        maps_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Poisson-disc sampling mask.
    Mask {
        #[command(flatten)]
        flags: Flags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains on synthetic phantoms; writes the loss curve to --out and the
    /// network to --checkpoint.
    Train {
        #[command(flatten)]
        flags: Flags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstructs subsampled k-space; identity network without --checkpoint.
    Recon {
        #[command(flatten)]
        flags: Flags,
        #[arg(long)]
        kspace: PathBuf,
        #[arg(long)]
        maps: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long = "kspace-out")]
        kspace_out: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR, NRMSE and SSIM of magnitude images, pairing --test and --ref in order.
    Metrics {
        #[command(flatten)]
        flags: Flags,
        #[arg(long = "test", required = true)]
        test: Vec<PathBuf>,
        #[arg(long = "ref", required = true)]
        reference: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-patch inference time across patch sizes.
    Bench {
        #[command(flatten)]
        flags: Flags,
        #[arg(long, value_delimiter = ',', default_value = "32,48,64,128,256")]
        dims: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Held-out quality along one experiment axis.
    Sweep {
        axis: SweepAxis,
        #[command(flatten)]
        flags: Flags,
        /// Points along the axis; each axis has its own default list.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    Overlap,
    Iters,
    Patch,
    Accel,
}

impl SweepAxis {
    fn defaults(self) -> &'static [f64] {
        match self {
            SweepAxis::Overlap => &[0.0, 0.05, 0.1, 0.125, 0.15625, 0.2, 0.3, 0.4, 0.5, 0.6],
            SweepAxis::Iters => &[2.0, 4.0, 8.0],
            SweepAxis::Patch => &[32.0, 48.0, 64.0, 96.0],
            SweepAxis::Accel => &[2.0, 3.0, 4.0, 5.4, 6.0, 8.0],
        }
    }

    fn name(self) -> &'static str {
        match self {
            SweepAxis::Overlap => "overlap",
            SweepAxis::Iters => "iters",
            SweepAxis::Patch => "patch",
            SweepAxis::Accel => "R",
        }
    }
}

impl Command {
    fn parts(&self) -> (&Flags, &Path) {
        match self {
            Command::Phantom { flags, out }
            | Command::Synth { flags, out, .. }
            | Command::Mask { flags, out }
            | Command::Train { flags, out }
            | Command::Recon { flags, out, .. }
            | Command::Metrics { flags, out, .. }
            | Command::Bench { flags, out, .. }
            | Command::Sweep { flags, out, .. } => (flags, out),
        }
    }
}

/// Resolves defaults, the config file and flags, runs the command and
/// echoes the resolved settings to `<out>.config`.
pub fn run(cli: &Cli) -> Result<()> {
    let mut settings = Settings::default();
    if matches!(cli.command, Command::Train { .. }) {
        settings.set("patch", 32)?;
        settings.set("size", 64)?;
    }
    if let Some(path) = &cli.config {
        settings.merge_file(path)?;
    }
    let (flags, out) = cli.command.parts();
    flags.apply(&mut settings)?;
    dispatch(&cli.command, &settings)?;
    let mut echo = out.as_os_str().to_owned();
    echo.push(".config");
    settings.write_echo(Path::new(&echo))
}

fn pool(s: &Settings) -> Result<WorkerPool> {
    WorkerPool::new(s.get("workers")?)
}

fn network(s: &Settings) -> Result<UnrolledNetParams> {
    match s.checkpoint() {
        Some(p) => checkpoint::load(p),
        None => Ok(UnrolledNetParams::identity(s.get("iters")?, 1, s.get("features")?)?),
    }
}

fn dataset_spec(s: &Settings, count: usize, seed: u64) -> Result<DatasetSpec> {
    let (ny, nz) = s.dims("size")?;
    Ok(DatasetSpec {
        nc: s.get("coils")?,
        masks: s.get("masks")?,
        r: s.get("R")?,
        density: s.density()?,
        calib: s.get("calib")?,
        ..DatasetSpec::new(count, ny, nz, seed)
    })
}

/// Held-out phantoms never share a seed stream with the training set.
fn held_out(s: &Settings) -> Result<(Dataset, DatasetSpec)> {
    let spec = dataset_spec(s, s.get("test-count")?, s.get::<u64>("seed")?.wrapping_add(1))?;
    Ok((make_dataset(&spec)?, spec))
}

fn train_config(s: &Settings) -> Result<TrainConfig> {
    let r: f64 = s.get("R")?;
    Ok(TrainConfig {
        lr: s.get("lr")?,
        batch: s.get("batch")?,
        steps: s.get("steps")?,
        patch: s.dims("patch")?,
        stopband: s.get("stopband")?,
        pad: s.get("pad")?,
        r_range: (r, r),
        density: s.density()?,
        seed: s.get("seed")?,
        ..TrainConfig::default()
    })
}

fn dispatch(cmd: &Command, s: &Settings) -> Result<()> {
    match cmd {
        Command::Phantom { out, .. } => {
            let (ny, nz) = s.dims("size")?;
            let seed: u64 = s.get("seed")?;
            let img = make_phantom(&PhantomSpec::new(ny, nz, seed))?;
            GridFile::from_images(&[img])?.with_meta("seed", seed).write(out)
        }
        Command::Synth {
            image, maps, maps_out, out, ..
        } => {
            let img = GridFile::read(image)?.to_images()?;
            let img = img.into_iter().next().expect("rank-3 file has a plane");
            let maps = match maps {
                Some(p) => GridFile::read(p)?.to_maps()?,
                None => make_coils(&CoilSpec::new(s.get("coils")?, s.get("seed")?), img.ny(), img.nz())?,
            };
            if let Some(p) = maps_out {
                GridFile::from_maps(&maps).write(p)?;
            }
            GridFile::from_kspace(&synthesize_kspace(&img, &maps)?).write(out)
        }
        Command::Mask { out, .. } => {
            let (ny, nz) = s.dims("size")?;
            let spec = MaskSpec::new(ny, nz, s.get("R")?, s.density()?)
                .with_calib(s.get("calib")?)
                .with_seed(s.get("seed")?);
            let mask = generate_mask(&spec)?;
            let r = achieved_r(&mask)?;
            println!("achieved_R={r:.4}");
            GridFile::from_real(&mask)
                .with_meta("achieved_R", r)
                .with_meta("seed", spec.seed)
                .write(out)
        }
        Command::Train { out, .. } => cmd_train(s, out),
        Command::Recon {
            kspace,
            maps,
            mask,
            kspace_out,
            out,
            ..
        } => {
            let ksp = GridFile::read(kspace)?.to_kspace()?;
            let maps = GridFile::read(maps)?.to_maps()?;
            let mask = GridFile::read(mask)?.to_real()?;
            let setup = s.recon_setup()?;
            let geometry = setup.geometry(ksp.dims())?;
            let params = network(s)?;
            let rec = reconstruct_full(&ksp, &maps, &mask, &geometry, &params, setup.mode, &pool(s)?)?;
            if let Some(p) = kspace_out {
                GridFile::from_kspace(&rec.kspace).write(p)?;
            }
            GridFile::from_images(&rec.image)?.write(out)
        }
        Command::Metrics { test, reference, out, .. } => {
            if test.len() != reference.len() {
                return Err(Error::Config(format!("{} test images but {} references", test.len(), reference.len())));
            }
            let rows = test
                .iter()
                .zip(reference)
                .enumerate()
                .map(|(i, (t, r))| {
                    let t = magnitude(&GridFile::read(t)?.to_images()?)?;
                    let r = magnitude(&GridFile::read(r)?.to_images()?)?;
                    Ok((i, evaluate(&t, &r)?))
                })
                .collect::<Result<Vec<_>>>()?;
            for (i, m) in &rows {
                println!("{i}: psnr={:.3} nrmse={:.5} ssim={:.5}", m.psnr, m.nrmse, m.ssim);
            }
            report::write_metrics(out, &rows)
        }
        Command::Bench { dims, out, .. } => {
            let params = match s.checkpoint() {
                Some(p) => checkpoint::load(p)?,
                None => UnrolledNetParams::random(s.get("iters")?, 1, s.get("features")?, s.get("seed")?)?,
            };
            let records = bench_patch_time(dims, &params, s.get("runs")?, s.norm()?)?;
            for r in &records {
                println!("{:>4}  {:>10.3} ms  +- {:.3}", r.patch_dim, r.mean_ms, r.std_ms);
            }
            if records.len() > 2 {
                let fit = scaling_fit(&records);
                println!("R2 N^2 log N = {:.4}, R2 linear = {:.4}", fit.r2_nlogn, fit.r2_linear);
            }
            report::write_bench(out, &records)
        }
        Command::Sweep { axis, values, out, .. } => cmd_sweep(s, *axis, values, out),
    }
}

fn cmd_train(s: &Settings, out: &Path) -> Result<()> {
    let ckpt = s
        .checkpoint()
        .ok_or_else(|| Error::Config("train needs --checkpoint for the trained network".into()))?;
    let spec = dataset_spec(s, s.get("count")?, s.get("seed")?)?;
    let data = make_dataset(&spec)?;
    let cfg = train_config(s)?;
    let init = UnrolledNetParams::random(s.get("iters")?, 1, s.get("features")?, s.get("seed")?)?;
    let start = Instant::now();
    let mut curve: Vec<(LossRecord, f64)> = Vec::with_capacity(cfg.steps);
    let mut last = init.clone();
    let result = train_loop(&data.examples, &data.masks, init, &cfg, &pool(s)?, |r, p| {
        curve.push((*r, start.elapsed().as_secs_f64() * 1e3));
        last.clone_from(p);
        if r.step % 50 == 0 {
            eprintln!("step {:>6}  loss {:.6}", r.step, r.loss);
        }
    });
    report::write_losses(out, &curve)?;
    match result {
        Ok(outcome) => checkpoint::save(&outcome.params, &ckpt),
        Err(e) => {
            let mut dump = ckpt.into_os_string();
            dump.push(".diverged");
            checkpoint::save(&last, Path::new(&dump))?;
            Err(e.into())
        }
    }
}

fn cmd_sweep(s: &Settings, axis: SweepAxis, values: &[f64], out: &Path) -> Result<()> {
    let values = if values.is_empty() { axis.defaults() } else { values };
    let exec = pool(s)?;
    let setup: ReconSetup = s.recon_setup()?;
    let (test, test_spec) = held_out(s)?;
    let points = match axis {
        SweepAxis::Iters => {
            let train = make_dataset(&dataset_spec(s, s.get("count")?, s.get("seed")?)?)?;
            let iters: Vec<usize> = values.iter().map(|&v| v as usize).collect();
            let cfg = TrainConfig {
                patch: (32, 32),
                ..train_config(s)?
            };
            experiment::sweep_iters(&train, &test, &cfg, &iters, s.get("features")?, s.get("seed")?, &setup, &exec)?
        }
        SweepAxis::Overlap => experiment::sweep_overlap(&test, &network(s)?, &setup, values, &exec)?,
        SweepAxis::Patch => {
            let sides: Vec<usize> = values.iter().map(|&v| v as usize).collect();
            experiment::sweep_patch(&test, &network(s)?, &setup, &sides, &exec)?
        }
        SweepAxis::Accel => experiment::sweep_accel(&test, &test_spec, &network(s)?, &setup, values, &exec)?,
    };
    for p in &points {
        match (&p.metrics, &p.error) {
            (Some(m), _) => println!("{} = {:<8} nrmse {:.5}  ssim {:.5}", axis.name(), p.value, m.nrmse, m.ssim),
            (None, Some(e)) => println!("{} = {:<8} {e}", axis.name(), p.value),
            _ => {}
        }
    }
    report::write_sweep(out, axis.name(), &points)
}
