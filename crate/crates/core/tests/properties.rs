use proptest::prelude::*;

use supernerf::ccsr::{cem_project, BlurKernel};
use supernerf::eval::{psnr, warped_consistency, MaskedMae, WarpField};
use supernerf::field::render::{composite, render_rays, Sampling};
use supernerf::field::{render_image, FieldConfig, RadianceField};
use supernerf::scene::{box_downsample, generate_rays, replicate, CameraPose, ImageBuffer};
use supernerf::train::{loss_range, loss_sr, AlphaSchedule};

fn image(h: usize, w: usize, lo: f64, hi: f64) -> impl Strategy<Value = ImageBuffer> {
    prop::collection::vec(lo..hi, h * w * 3).prop_map(move |v| ImageBuffer::from_vec(h, w, v).unwrap())
}

fn lin(a: f64, x: &ImageBuffer, b: f64, y: &ImageBuffer) -> ImageBuffer {
    x.zip_map(y, |p, q| a * p + b * q).unwrap()
}

fn camera(azimuth: f64, elevation: f64, size: usize) -> CameraPose {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    let pos = [3.0 * ce * sa, 3.0 * se, 3.0 * ce * ca];
    CameraPose::look_at(pos, [0.0; 3], [0.0, 1.0, 0.0], size as f64, size, size, 1.5, 4.5).unwrap()
}

proptest! {
    #[test]
    fn replicate_then_downsample_is_identity(x in image(5, 3, 0.0, 1.0), s in 1usize..5) {
        prop_assert!(box_downsample(&replicate(&x, s), s).unwrap().max_abs_diff(&x).unwrap() <= 1e-12);
    }

    #[test]
    fn cem_projection_is_idempotent(x in image(16, 16, -0.5, 1.5), lr in image(4, 4, 0.0, 1.0)) {
        let k = BlurKernel::box_filter(4);
        let once = cem_project(&x, &lr, &k).unwrap();
        let twice = cem_project(&once, &lr, &k).unwrap();
        prop_assert!(once.max_abs_diff(&twice).unwrap() <= 1e-6);
    }

    #[test]
    fn cem_correction_has_no_lr_component(x in image(12, 8, -0.5, 1.5), lr in image(3, 2, 0.0, 1.0)) {
        let k = BlurKernel::box_filter(4);
        let p = cem_project(&x, &lr, &k).unwrap();
        prop_assert!(box_downsample(&p, 4).unwrap().max_abs_diff(&lr).unwrap() <= 1e-6);
        let detail = lin(1.0, &p, -1.0, &replicate(&lr, 4));
        let residual = box_downsample(&detail, 4).unwrap();
        prop_assert!(residual.as_slice().iter().all(|v| v.abs() <= 1e-6));
    }

    #[test]
    fn cem_projection_is_jointly_linear(
        x in image(8, 8, -1.0, 1.0),
        y in image(8, 8, -1.0, 1.0),
        u in image(2, 2, -1.0, 1.0),
        v in image(2, 2, -1.0, 1.0),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let k = BlurKernel::box_filter(4);
        let lhs = cem_project(&lin(a, &x, b, &y), &lin(a, &u, b, &v), &k).unwrap();
        let rhs = lin(a, &cem_project(&x, &u, &k).unwrap(), b, &cem_project(&y, &v, &k).unwrap());
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-6);
    }

    #[test]
    fn blend_ignores_the_zero_weighted_render(
        ln in image(3, 3, 0.0, 1.0),
        hn in image(3, 3, 0.0, 1.0),
        hr in image(3, 3, 0.0, 1.0),
        other in image(3, 3, 0.0, 1.0),
    ) {
        prop_assert_eq!(loss_sr(&ln, &hn, &hr, 1.0).unwrap(), loss_sr(&ln, &other, &hr, 1.0).unwrap());
        prop_assert_eq!(loss_sr(&ln, &hn, &hr, 0.0).unwrap(), loss_sr(&other, &hn, &hr, 0.0).unwrap());
    }

    #[test]
    fn range_penalty_vanishes_in_range(x in image(4, 4, 0.0, 1.0)) {
        prop_assert_eq!(loss_range(&x), 0.0);
    }

    #[test]
    fn alpha_is_nonincreasing_and_bounded(tau in 1.0f64..5000.0, t in 0usize..100_000) {
        let s = AlphaSchedule::exponential(tau);
        let (a, b) = (s.value(t), s.value(t + 1));
        prop_assert!(b <= a);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn psnr_decreases_with_uniform_offset(base in image(4, 4, 0.0, 1.0), d in 1e-3f64..0.5, extra in 1e-3f64..0.5) {
        let small = base.map(|v| v + d);
        let large = base.map(|v| v + d + extra);
        prop_assert!(psnr(&base, &large).unwrap().db() < psnr(&base, &small).unwrap().db());
    }

    #[test]
    fn identity_warp_consistency_is_symmetric(a in image(6, 5, 0.0, 1.0), b in image(6, 5, 0.0, 1.0)) {
        let w = WarpField::identity(0, 1, 6, 5);
        let ab = warped_consistency(&a, &b, &w, &MaskedMae).unwrap().value().unwrap();
        let ba = warped_consistency(&b, &a, &w, &MaskedMae).unwrap().value().unwrap();
        prop_assert!((ab - ba).abs() <= 1e-15);
    }

    #[test]
    fn masked_consistency_is_finite_on_any_nonempty_mask(
        a in image(4, 4, 0.0, 1.0),
        b in image(4, 4, 0.0, 1.0),
        mask in prop::collection::vec(any::<bool>(), 16),
    ) {
        let mut w = WarpField::identity(0, 1, 4, 4);
        w.valid = mask.clone();
        let c = warped_consistency(&a, &b, &w, &MaskedMae).unwrap();
        match c.value() {
            Some(v) => prop_assert!(v.is_finite() && mask.iter().any(|&m| m)),
            None => prop_assert!(mask.iter().all(|&m| !m)),
        }
    }

    #[test]
    fn transmittance_is_nonincreasing_and_weights_bounded(
        densities in prop::collection::vec(0.0f64..50.0, 1..40),
    ) {
        let n = densities.len();
        let colors = vec![[0.5; 3]; n];
        let ts: Vec<f64> = (0..n).map(|k| 1.0 + k as f64 * 0.1).collect();
        let deltas = vec![0.1; n];
        let c = composite(&densities, &colors, &ts, &deltas);
        prop_assert!(c.transmittance.windows(2).all(|p| p[1] <= p[0]));
        prop_assert!(c.weights.iter().all(|&w| w >= 0.0));
        prop_assert!(c.weights.iter().sum::<f64>() <= 1.0 + 1e-6);
    }

    #[test]
    fn hr_rays_subdivide_lr_pixels(azimuth in -1.0f64..1.0, elevation in 0.1f64..0.8, s in 2usize..5) {
        let lr = camera(azimuth, elevation, 8);
        let lr_rays = generate_rays(&lr, 8, 8, 0);
        let hr_rays = generate_rays(&lr, 8 * s, 8 * s, 0);
        for row in 0..8 {
            for col in 0..8 {
                let mut centre = [0.0; 2];
                for dy in 0..s {
                    for dx in 0..s {
                        let p = hr_rays.pixel_coords[(row * s + dy) * 8 * s + col * s + dx];
                        centre[0] += p[0] / s as f64;
                        centre[1] += p[1] / s as f64;
                    }
                }
                let q = lr_rays.pixel_coords[row * 8 + col];
                prop_assert!((centre[0] / (s * s) as f64 - q[0]).abs() <= 1e-9);
                prop_assert!((centre[1] / (s * s) as f64 - q[1]).abs() <= 1e-9);
                let d_lr = lr_rays.directions[row * 8 + col];
                let d_hr = lr.rescaled(8 * s, 8 * s).direction(q[0] * s as f64, q[1] * s as f64);
                for k in 0..3 {
                    prop_assert!((d_lr[k] - d_hr[k]).abs() <= 1e-9);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn rendering_a_pixel_subset_matches_the_full_image(
        seed in 0u64..1000,
        picks in prop::collection::vec(0usize..64, 1..10),
    ) {
        let cfg = FieldConfig { n_frequencies: 2, hidden_width: 16, n_layers: 2, n_samples_per_ray: 12, role: supernerf::scene::Resolution::Hr };
        let field = RadianceField::new(cfg, seed).unwrap();
        let pose = camera(0.3, 0.4, 8);
        let full = render_image(&field, &pose, 8, 8).unwrap();
        let rays = generate_rays(&pose, 8, 8, 0).select(&picks);
        let subset = render_rays(&field, &rays, Sampling::Midpoint).unwrap();
        for (k, &i) in picks.iter().enumerate() {
            prop_assert_eq!(subset[k].color, full.get(i / 8, i % 8));
        }
    }
}
