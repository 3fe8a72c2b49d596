use bpnet_core::bandpass::{extract_patch, hard_data_projection, make_window, plan_patches, recombine, WindowSpec};
use bpnet_core::fft::{fft2, ifft2};
use bpnet_core::grid::{channels_norm, inner_product_channels};
use bpnet_core::metrics::{nrmse, psnr, ssim};
use bpnet_core::model::{apply_b, apply_b_adjoint, PatchCenter, SensitivityMaps};
use bpnet_core::sampling::{achieved_r, generate_mask_with_radius, Density, MaskSpec};
use bpnet_core::training::{center_energy, normalize_example, NORM_TARGET};
use bpnet_core::{inner_product, Complex64, ComplexGrid, MultiCoilKSpace, RealGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg32;

fn grid(ny: usize, nz: usize, rng: &mut Pcg32) -> ComplexGrid {
    ComplexGrid::from_fn(ny, nz, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).unwrap()
}

fn kspace(nc: usize, ny: usize, nz: usize, rng: &mut Pcg32) -> MultiCoilKSpace {
    MultiCoilKSpace::new((0..nc).map(|_| grid(ny, nz, rng)).collect()).unwrap()
}

fn real(ny: usize, nz: usize, rng: &mut Pcg32) -> RealGrid {
    RealGrid::from_fn(ny, nz, |_, _| rng.gen_range(0.0..1.0)).unwrap()
}

fn binary(ny: usize, nz: usize, p: f64, rng: &mut Pcg32) -> RealGrid {
    RealGrid::from_fn(ny, nz, |_, _| if rng.gen_bool(p) { 1.0 } else { 0.0 }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fft_is_unitary_and_invertible(ny in 1usize..40, nz in 1usize..40, seed: u64) {
        let mut rng = Pcg32::seed_from_u64(seed);
        let x = grid(ny, nz, &mut rng);
        let k = fft2(&x).unwrap();
        prop_assert!((k.norm() - x.norm()).abs() <= 1e-12 * x.norm());
        let back = ifft2(&k).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
        let y = grid(ny, nz, &mut rng);
        let lhs = inner_product(&fft2(&y).unwrap(), &k).unwrap();
        let rhs = inner_product(&y, &x).unwrap();
        prop_assert!((lhs - rhs).norm() < 1e-10 * x.norm() * y.norm());
    }

    #[test]
    fn inner_product_is_conjugate_symmetric(n in 1usize..20, seed: u64) {
        let mut rng = Pcg32::seed_from_u64(seed);
        let (a, b) = (grid(n, n + 1, &mut rng), grid(n, n + 1, &mut rng));
        let ab = inner_product(&a, &b).unwrap();
        let ba = inner_product(&b, &a).unwrap();
        prop_assert!((ab - ba.conj()).norm() < 1e-12 * (1.0 + ab.norm()));
    }

    #[test]
    fn patch_operator_is_adjoint(
        ny in 8usize..33, nz in 8usize..33, nc in 1usize..5, nsets in 1usize..3,
        ky in -6i64..7, kz in -6i64..7, seed: u64,
    ) {
        let mut rng = Pcg32::seed_from_u64(seed);
        let sets = (0..nsets).map(|_| (0..nc).map(|_| grid(ny, nz, &mut rng)).collect()).collect();
        let maps = SensitivityMaps::normalized(sets).unwrap();
        let (mask, window) = (binary(ny, nz, 0.4, &mut rng), real(ny, nz, &mut rng));
        let x: Vec<ComplexGrid> = (0..nsets).map(|_| grid(ny, nz, &mut rng)).collect();
        let y = kspace(nc, ny, nz, &mut rng);
        let c = PatchCenter::new(ky, kz);
        let bx = apply_b(&x, &maps, &mask, &window, c).unwrap();
        let bty = apply_b_adjoint(&y, &maps, &mask, &window, c).unwrap();
        let lhs = inner_product_channels(bx.coils(), y.coils()).unwrap();
        let rhs = inner_product_channels(&x, &bty).unwrap();
        prop_assert!((lhs - rhs).norm() / (channels_norm(&x) * y.norm()) < 1e-10);
    }

    #[test]
    fn window_is_symmetric_and_bounded(n in 8usize..80, s in 0usize..6) {
        prop_assume!(n > 2 * s);
        let w = make_window(&WindowSpec::new(n, n + 3, s)).unwrap();
        let (ny, nz) = w.dims();
        for r in 0..ny {
            for c in 0..nz {
                let v = w[(r, c)];
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert_eq!(v, w[(ny - 1 - r, c)]);
                prop_assert_eq!(v, w[(r, nz - 1 - c)]);
            }
        }
    }

    #[test]
    fn identity_patches_recombine_to_the_input(
        full in 40usize..90, patch in 20usize..40, overlap in 0.3f64..0.7, seed: u64,
    ) {
        prop_assume!(patch <= full);
        let stopband = 4;
        let geom = plan_patches((full, full), (patch, patch), (overlap, overlap), stopband).unwrap();
        let window = make_window(&WindowSpec::new(patch, patch, stopband)).unwrap();
        let mut rng = Pcg32::seed_from_u64(seed);
        let k = kspace(2, full, full, &mut rng);
        let mut pairs: Vec<_> = geom.centers.iter().map(|&c| {
            let mut p = extract_patch(&k, c, (patch, patch)).unwrap();
            p.mul_real(&window).unwrap();
            (c, p)
        }).collect();
        let out = recombine(&pairs, &geom, &window).unwrap();
        let mut diff = out.clone();
        for (d, s) in diff.coils_mut().iter_mut().zip(k.coils()) {
            d.add_scaled(Complex64::new(-1.0, 0.0), s).unwrap();
        }
        prop_assert!(diff.norm() / k.norm() < 1e-12);

        // the result does not depend on the order patches are listed in
        pairs.reverse();
        let rev = recombine(&pairs, &geom, &window).unwrap();
        for (a, b) in rev.coils().iter().zip(out.coils()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).norm() <= 1e-12 * (1.0 + y.norm()));
            }
        }
    }

    #[test]
    fn projection_is_idempotent_and_exact(n in 4usize..30, p in 0.0f64..1.0, seed: u64) {
        let mut rng = Pcg32::seed_from_u64(seed);
        let (recon, measured) = (kspace(3, n, n, &mut rng), kspace(3, n, n, &mut rng));
        let mask = binary(n, n, p, &mut rng);
        let once = hard_data_projection(&recon, &measured, &mask).unwrap();
        let twice = hard_data_projection(&once, &measured, &mask).unwrap();
        prop_assert_eq!(&once, &twice);
        for ((o, m), r) in once.coils().iter().zip(measured.coils()).zip(recon.coils()) {
            for i in 0..n * n {
                let expect = if mask.data()[i] == 1.0 { m.data()[i] } else { r.data()[i] };
                prop_assert_eq!(o.data()[i].re.to_bits(), expect.re.to_bits());
                prop_assert_eq!(o.data()[i].im.to_bits(), expect.im.to_bits());
            }
        }
    }

    #[test]
    fn normalization_is_scale_invariant(alpha in 1e-3f64..1e3, seed: u64) {
        let mut rng = Pcg32::seed_from_u64(seed);
        let k = kspace(2, 12, 12, &mut rng);
        let mut scaled = k.clone();
        scaled.scale(alpha);
        let (a, _) = normalize_example(&k).unwrap();
        let (b, _) = normalize_example(&scaled).unwrap();
        prop_assert!((center_energy(&a) - NORM_TARGET * NORM_TARGET).abs() < 1e-6 * NORM_TARGET * NORM_TARGET);
        for (x, y) in a.coils().iter().zip(b.coils()) {
            for (p, q) in x.data().iter().zip(y.data()) {
                prop_assert!((p - q).norm() <= 1e-9 * (1.0 + p.norm()));
            }
        }
    }

    #[test]
    fn metric_laws(alpha in -3.0f64..3.0, seed: u64) {
        let mut rng = Pcg32::seed_from_u64(seed);
        let x = RealGrid::from_fn(16, 16, |_, _| rng.gen_range(0.1..1.0)).unwrap();
        let ax = RealGrid::new(16, 16, x.data().iter().map(|v| alpha * v).collect()).unwrap();
        prop_assert!((nrmse(&ax, &x).unwrap() - (alpha - 1.0).abs()).abs() < 1e-9);
        prop_assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        let noise: Vec<f64> = (0..256).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let near = |s: f64| RealGrid::new(16, 16, x.data().iter().zip(&noise).map(|(v, n)| v + s * n).collect()).unwrap();
        let (p1, p2) = (psnr(&near(1.0), &x).unwrap(), psnr(&near(2.0), &x).unwrap());
        prop_assert!(p1 > p2);
        let y = near(1.5);
        prop_assert!((-1.0..=1.0).contains(&ssim(&y, &x).unwrap()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn masks_respect_spacing_calibration_and_budget(
        n in 32usize..72, r in 2.0f64..8.0, variable: bool, seed: u64,
    ) {
        let density = if variable { Density::Variable { power: 2.0 } } else { Density::Uniform };
        let spec = MaskSpec::new(n, n, r, density).with_calib(8).with_seed(seed);
        let pm = generate_mask_with_radius(&spec).unwrap();
        let m = &pm.mask;
        prop_assert!((achieved_r(m).unwrap() / r - 1.0).abs() < 0.1);
        prop_assert_eq!(&generate_mask_with_radius(&spec).unwrap(), &pm);
        let pts: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .filter(|&(a, b)| m[(a, b)] == 1.0)
            .collect();
        for a in 0..n {
            for b in 0..n {
                if spec.in_calib(a, b) {
                    prop_assert_eq!(m[(a, b)], 1.0);
                }
            }
        }
        let free: Vec<_> = pts.iter().copied().filter(|&(a, b)| !spec.in_calib(a, b)).collect();
        for (i, &(a, b)) in free.iter().enumerate() {
            for &(c, d) in &free[i + 1..] {
                let lim = spec.local_radius(pm.radius, a, b).min(spec.local_radius(pm.radius, c, d));
                let d2 = ((a as f64 - c as f64).powi(2)) + ((b as f64 - d as f64).powi(2));
                prop_assert!(d2 >= lim * lim - 1e-9, "({a},{b}) and ({c},{d}) closer than {lim}");
            }
        }
    }
}

#[test]
fn variable_density_samples_the_center_more_densely() {
    let spec = MaskSpec::new(96, 96, 4.0, Density::Variable { power: 2.0 }).with_calib(10).with_seed(3);
    let m = generate_mask_with_radius(&spec).unwrap().mask;
    let (mut inner, mut ni, mut outer, mut no) = (0.0, 0.0, 0.0, 0.0);
    for r in 0..96 {
        for c in 0..96 {
            if spec.in_calib(r, c) {
                continue;
            }
            let rho = spec.normalized_radius(r, c);
            if rho < 0.4 {
                inner += m[(r, c)];
                ni += 1.0;
            } else if rho > 0.7 {
                outer += m[(r, c)];
                no += 1.0;
            }
        }
    }
    assert!(inner / ni > 1.5 * (outer / no), "inner {} outer {}", inner / ni, outer / no);
}
