use supernerf::ccsr::{sr_generate, BackboneConfig, SRBackbone};
use supernerf::eval::lr_consistency_residual;
use supernerf::field::RadianceField;
use supernerf::scene::{generate_synthetic_scene, MultiViewDataset, SceneSpec};
use supernerf::train::{loss_range, CheckpointBundle, LossReport, MutualLearning, PipelineConfig};
use supernerf::Error;

struct Fixture {
    truth: MultiViewDataset,
    dataset: MultiViewDataset,
    lr_field: RadianceField,
    backbone: SRBackbone,
    config: PipelineConfig,
}

fn fixture() -> Fixture {
    let spec = SceneSpec {
        lr_size: 8,
        scale: 2,
        supersample: 1,
        ..SceneSpec::toy()
    };
    let truth = generate_synthetic_scene(&spec, 4, 0).unwrap();
    let dataset = truth.degrade().unwrap();
    let config = PipelineConfig {
        scale: 2,
        n_views: 4,
        lr_width: 8,
        lr_layers: 2,
        lr_samples: 8,
        hr_width: 12,
        hr_layers: 2,
        hr_samples: 8,
        sr_channels: 4,
        sr_blocks: 1,
        sr_crop: 8,
        iterations: 8,
        rays_per_step: 24,
        hr_warmup_steps: 2,
        checkpoint_every: 0,
        ..PipelineConfig::default()
    };
    let lr_field = RadianceField::new(config.lr_field(), 11).unwrap();
    let backbone = SRBackbone::new(
        BackboneConfig {
            scale: 2,
            channels: 4,
            n_blocks: 1,
        },
        5,
    )
    .unwrap();
    Fixture {
        truth,
        dataset,
        lr_field,
        backbone,
        config,
    }
}

fn run_to(state: &mut MutualLearning<'_>, until: usize) -> Vec<LossReport> {
    let mut reports = Vec::new();
    state
        .run(until, None, |r| {
            reports.push(*r);
            Ok(())
        })
        .unwrap();
    reports
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let f = fixture();
    let tc = f.config.train();
    let mut straight = MutualLearning::new(&f.dataset, &f.lr_field, &f.backbone, &tc).unwrap();
    let full = run_to(&mut straight, 8);

    let mut first = MutualLearning::new(&f.dataset, &f.lr_field, &f.backbone, &tc).unwrap();
    let mut reports = run_to(&mut first, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.snrf");
    first.bundle().save(&path).unwrap();
    drop(first);
    let bundle = CheckpointBundle::load(&path).unwrap();
    let mut resumed = MutualLearning::resume(&f.dataset, &f.lr_field, &f.backbone, &tc, bundle).unwrap();
    assert_eq!(resumed.t(), 3);
    reports.extend(run_to(&mut resumed, 8));

    assert_eq!(reports.len(), full.len());
    for (a, b) in reports.iter().zip(&full) {
        assert!(a.same_values(b), "{a:?} != {b:?}");
    }
    assert_eq!(resumed.hr_field().parameters(), straight.hr_field().parameters());
    assert_eq!(resumed.latents(), straight.latents());
}

#[test]
fn fresh_runs_are_deterministic() {
    let f = fixture();
    let tc = f.config.train();
    let mut a = MutualLearning::new(&f.dataset, &f.lr_field, &f.backbone, &tc).unwrap();
    let mut b = MutualLearning::new(&f.dataset, &f.lr_field, &f.backbone, &tc).unwrap();
    let (ra, rb) = (run_to(&mut a, 4), run_to(&mut b, 4));
    assert!(ra.iter().zip(&rb).all(|(x, y)| x.same_values(y)));
    assert_eq!(a.bundle().hr_field, b.bundle().hr_field);
}

#[test]
fn resume_under_a_different_config_is_rejected() {
    let f = fixture();
    let tc = f.config.train();
    let state = MutualLearning::new(&f.dataset, &f.lr_field, &f.backbone, &tc).unwrap();
    let bundle = state.bundle();
    let other = PipelineConfig {
        seed: 1,
        ..f.config.clone()
    }
    .train();
    let err = MutualLearning::resume(&f.dataset, &f.lr_field, &f.backbone, &other, bundle).err().unwrap();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn frozen_modules_stay_bit_identical() {
    let f = fixture();
    let (lr_before, sr_before) = (f.lr_field.parameters().to_vec(), f.backbone.parameters().to_vec());
    let tc = f.config.train();
    let mut state = MutualLearning::new(&f.dataset, &f.lr_field, &f.backbone, &tc).unwrap();
    let hr_before = state.hr_field().parameters().to_vec();
    run_to(&mut state, 4);
    assert_eq!(f.lr_field.parameters(), &lr_before[..]);
    assert_eq!(f.backbone.parameters(), &sr_before[..]);
    assert_ne!(state.hr_field().parameters(), &hr_before[..]);
}

#[test]
fn all_ground_truth_views_need_no_codes() {
    let f = fixture();
    let dataset = f.truth.hybrid(1.0).unwrap();
    let tc = f.config.train();
    let mut state = MutualLearning::new(&dataset, &f.lr_field, &f.backbone, &tc).unwrap();
    assert!(state.latents().is_empty());
    for r in run_to(&mut state, 4) {
        assert_eq!(r.alpha_t, 0.0);
        assert_eq!(r.loss_range, 0.0);
        assert_eq!(r.loss_total, r.loss_sr);
    }
}

#[test]
fn partial_hybrid_codes_only_lr_views() {
    let f = fixture();
    let dataset = f.truth.hybrid(0.5).unwrap();
    let tc = f.config.train();
    let state = MutualLearning::new(&dataset, &f.lr_field, &f.backbone, &tc).unwrap();
    assert_eq!(state.latents().len(), dataset.lr_views().count());
    assert_eq!(state.latents().len(), 2);
    for v in dataset.hr_views() {
        assert_eq!(state.applied_alpha(v.index, 0).unwrap(), 0.0);
    }
}

#[test]
fn total_loss_adds_the_range_penalty_of_the_current_code() {
    let f = fixture();
    let tc = f.config.train();
    let mut state = MutualLearning::new(&f.dataset, &f.lr_field, &f.backbone, &tc).unwrap();
    for t in 0..4 {
        let view = state.select_view(t);
        let lr = f.dataset.lr_image(f.dataset.view(view).unwrap()).unwrap();
        let raw = sr_generate(&f.backbone, &lr, state.latents().get(view).unwrap()).unwrap();
        let expected_range = loss_range(&raw);
        let r = state.step(view, t).unwrap();
        assert!((r.loss_range - expected_range).abs() <= 1e-12 * expected_range.max(1.0));
        assert_eq!(r.loss_total, r.loss_sr + r.loss_range);
        assert!(r.loss_sr >= 0.0);
        assert_eq!(r.alpha_t, tc.alpha.value(t));
    }
}

#[test]
fn super_resolutions_stay_lr_consistent() {
    let f = fixture();
    let tc = f.config.train();
    let mut state = MutualLearning::new(&f.dataset, &f.lr_field, &f.backbone, &tc).unwrap();
    run_to(&mut state, 8);
    for v in f.dataset.views() {
        let sr = state.super_resolved(v.index).unwrap();
        let residual = lr_consistency_residual(&sr, &v.image, 2).unwrap();
        assert!(residual <= 1e-12, "view {} residual {residual}", v.index);
    }
}

#[test]
fn without_the_lr_field_the_blend_weight_is_zero() {
    let f = fixture();
    let tc = PipelineConfig {
        use_lr_nerf: false,
        ..f.config.clone()
    }
    .train();
    let mut state = MutualLearning::new(&f.dataset, &f.lr_field, &f.backbone, &tc).unwrap();
    for r in run_to(&mut state, 4) {
        assert_eq!(r.alpha_t, 0.0);
    }
    assert!(state.lr_field_render(0).unwrap().is_none());
}
