use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use supernerf::field::render::backward;
use supernerf::field::{composite, render_rays, render_rays_train, FieldConfig, RadianceField, Sampling};
use supernerf::scene::{generate_rays, RayBatch, Resolution, SceneSpec};

fn probe_rays() -> RayBatch {
    let pose = SceneSpec::toy().training_poses(2, 0).unwrap().remove(0);
    generate_rays(&pose, 2, 2, 0)
}

fn weighted_sum(field: &RadianceField, rays: &RayBatch, g: &[[f64; 3]]) -> f64 {
    render_rays(field, rays, Sampling::Midpoint)
        .unwrap()
        .iter()
        .zip(g)
        .map(|(s, g)| (0..3).map(|c| s.color[c] * g[c]).sum::<f64>())
        .sum()
}

#[test]
fn render_gradient_matches_central_differences() {
    let config = FieldConfig {
        n_frequencies: 1,
        hidden_width: 10,
        n_layers: 2,
        n_samples_per_ray: 16,
        role: Resolution::Lr,
    };
    let mut field = RadianceField::new(config, 3).unwrap();
    let n = field.parameter_count();
    assert!(n <= 500, "{n} parameters");
    let rays = probe_rays();
    assert_eq!(rays.len(), 4);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g: Vec<[f64; 3]> = (0..rays.len()).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
    let (_, tape) = render_rays_train(&field, &rays, Sampling::Midpoint).unwrap();
    let mut analytic = vec![0.0; n];
    backward(&field, &tape, &g, &mut analytic);

    let h = 1e-4;
    let mut good = 0;
    for i in 0..n {
        let orig = field.parameters()[i];
        field.parameters_mut()[i] = orig + h;
        let up = weighted_sum(&field, &rays, &g);
        field.parameters_mut()[i] = orig - h;
        let down = weighted_sum(&field, &rays, &g);
        field.parameters_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs());
        if scale < 1e-7 || (analytic[i] - numeric).abs() <= 1e-3 * scale {
            good += 1;
        }
    }
    let fraction = good as f64 / n as f64;
    assert!(fraction >= 0.95, "only {:.1}% of coordinates agree", 100.0 * fraction);
}

#[test]
fn single_dense_sample_is_nearly_opaque() {
    let (sigma, delta) = (10.0, 0.25);
    let mut densities = vec![0.0; 16];
    densities[7] = sigma;
    let colors = vec![[0.2, 0.6, 0.9]; 16];
    let ts: Vec<f64> = (0..16).map(|k| 2.0 + delta * (k as f64 + 0.5)).collect();
    let deltas = vec![delta; 16];
    let out = composite(&densities, &colors, &ts, &deltas);
    let alpha = 1.0 - (-sigma * delta).exp();
    assert!(alpha >= 0.9);
    assert!((out.sample.opacity - alpha).abs() < 1e-12);
    assert!((out.weights[7] - alpha).abs() < 1e-12);
    assert!((out.sample.depth - ts[7]).abs() < 1e-12);
    for c in 0..3 {
        assert!((out.sample.color[c] - alpha * colors[7][c]).abs() < 1e-12);
    }
    assert!(out.transmittance[8..].iter().all(|&t| (t - (-sigma * delta).exp()).abs() < 1e-12));
}
