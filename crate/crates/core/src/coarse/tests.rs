use std::sync::Arc;

use super::*;
use crate::field::{
    render_view, Aabb, CameraPose, RenderSettings, ShadingMode, VoxelField,
};
use crate::guidance::{AnalyticOracleProvider, PromptSpec, TargetRenderer, TimestepSchedule};
use crate::raster::{psnr, Image};

struct FieldTarget {
    field: VoxelField,
    settings: RenderSettings,
}

impl TargetRenderer for FieldTarget {
    fn render_target(&self, camera: &CameraPose, mode: ShadingMode) -> crate::Result<Image> {
        Ok(render_view(&self.field, camera, mode, &self.settings)?.rgb)
    }
}

const RES: usize = 12;
const PX: usize = 20;

fn truth() -> VoxelField {
    VoxelField::from_fn(
        [RES; 3],
        Aabb::cube(0.8).unwrap(),
        |p| 30.0 / (1.0 + ((p.norm() - 0.5) / 0.05).exp()),
        |p| [0.5 + 0.4 * (3.0 * p.x).sin(), 0.5 + 0.3 * p.y, 0.6 - 0.3 * p.z],
    )
    .unwrap()
}

fn init() -> VoxelField {
    VoxelField::from_fn(
        [RES; 3],
        Aabb::cube(0.8).unwrap(),
        |p| if p.norm() < 0.6 { 2.0 } else { 0.2 },
        |_| [0.5; 3],
    )
    .unwrap()
}

fn reference_camera() -> CameraPose {
    CameraPose::new(0.0, 0.2, 2.4, 0.75, PX, PX).unwrap()
}

fn target_settings() -> RenderSettings {
    RenderSettings {
        samples_per_ray: 48,
        ..RenderSettings::default()
    }
}

fn bundle(target: &VoxelField) -> ReferenceBundle {
    let view = render_view(target, &reference_camera(), ShadingMode::Albedo, &target_settings()).unwrap();
    let mask = view.mask.map(|m| if m > 0.5 { 1.0 } else { 0.0 });
    let depth = view.depth.zip_map(&mask, |d, m| if m > 0.0 { d } else { 1.0 }).unwrap();
    ReferenceBundle::new(view.rgb, mask, depth, view.normal).unwrap()
}

fn config(steps_lr: f64) -> CoarseConfig {
    CoarseConfig {
        render: RenderSettings {
            samples_per_ray: 32,
            transmittance_cutoff: 1e-3,
            normal_buffer: false,
            ..RenderSettings::default()
        },
        optimizer: OptimizerConfig {
            kind: OptimizerKind::adam(),
            lr_density: 0.1 * steps_lr,
            lr_albedo: 0.05 * steps_lr,
            decay: 1.0,
        },
        ..CoarseConfig::default()
    }
}

fn oracle() -> AnalyticOracleProvider {
    let target = FieldTarget {
        field: truth(),
        settings: target_settings(),
    };
    AnalyticOracleProvider::new(Arc::new(target), TimestepSchedule::default())
}

fn novel_psnr(field: &VoxelField, target: &VoxelField) -> f64 {
    let mut total = 0.0;
    for k in 0..4 {
        let cam = reference_camera().with_azimuth(0.8 + k as f64 * std::f64::consts::FRAC_PI_2);
        let a = render_view(field, &cam, ShadingMode::Albedo, &target_settings()).unwrap();
        let b = render_view(target, &cam, ShadingMode::Albedo, &target_settings()).unwrap();
        total += psnr(&a.rgb, &b.rgb).unwrap();
    }
    total / 4.0
}

#[test]
fn zero_learning_rate_leaves_field_untouched() {
    let target = truth();
    let b = bundle(&target);
    let provider = oracle();
    let sched = TimestepSchedule::default();
    let prompt = PromptSpec::with_default_identifier("ball", "a ball").unwrap();
    let start = init();
    let (out, log) = run_coarse(
        start.clone(),
        &b,
        &ViewSchedule::new(reference_camera(), 6),
        GuidanceSetup {
            provider: Some(&provider),
            schedule: &sched,
            prompt: &prompt,
        },
        &config(0.0),
    )
    .unwrap();
    assert_eq!(out.density_raw(), start.density_raw());
    assert_eq!(out.albedo_raw(), start.albedo_raw());
    assert_eq!(log.steps.len(), 6);
    assert_eq!(log.to_tsv().lines().count(), 6);
    assert!(log.to_tsv().lines().all(|l| l.split('\t').count() == 6));
}

#[test]
fn oracle_guidance_recovers_novel_views_and_is_reproducible() {
    let target = truth();
    let b = bundle(&target);
    let provider = oracle();
    let sched = TimestepSchedule::default();
    let prompt = PromptSpec::with_default_identifier("ball", "a ball").unwrap();
    let setup = GuidanceSetup {
        provider: Some(&provider),
        schedule: &sched,
        prompt: &prompt,
    };
    let views = ViewSchedule::new(reference_camera(), 150);
    let start = init();
    let before = novel_psnr(&start, &target);
    let (out, log) = run_coarse(start.clone(), &b, &views, setup, &config(1.0)).unwrap();
    let after = novel_psnr(&out, &target);
    assert!(after > before + 3.0, "novel PSNR {before:.2} -> {after:.2}");
    let first = log.steps[..20].iter().map(|s| s.loss_ref).sum::<f64>();
    let last = log.steps[130..].iter().map(|s| s.loss_ref).sum::<f64>();
    assert!(last < first);

    let (again, log2) = run_coarse(start, &b, &views, setup, &config(1.0)).unwrap();
    assert_eq!(out.density_raw(), again.density_raw());
    assert_eq!(out.albedo_raw(), again.albedo_raw());
    assert_eq!(log, log2);
}

#[test]
fn tiny_mask_is_rejected() {
    let target = truth();
    let mut b = bundle(&target);
    b.mask = Image::new(PX, PX, 1);
    b.mask.set(3, 3, 0, 1.0);
    let sched = TimestepSchedule::default();
    let prompt = PromptSpec::with_default_identifier("ball", "a ball").unwrap();
    let err = run_coarse(
        init(),
        &b,
        &ViewSchedule::new(reference_camera(), 2),
        GuidanceSetup {
            provider: None,
            schedule: &sched,
            prompt: &prompt,
        },
        &config(1.0),
    )
    .unwrap_err();
    assert!(matches!(err, crate::Error::DegenerateVariance(_)));
}

#[test]
fn flat_reference_depth_skips_depth_term() {
    let target = truth();
    let mut b = bundle(&target);
    b.depth = Image::filled(PX, PX, 1, 2.0);
    let sched = TimestepSchedule::default();
    let prompt = PromptSpec::with_default_identifier("ball", "a ball").unwrap();
    let (_, log) = run_coarse(
        init(),
        &b,
        &ViewSchedule::new(reference_camera(), 3),
        GuidanceSetup {
            provider: None,
            schedule: &sched,
            prompt: &prompt,
        },
        &config(1.0),
    )
    .unwrap();
    assert!(log.steps.iter().all(|s| s.loss_depth.is_none()));
    assert!(log.to_tsv().contains("\tnan\t"));
}

#[test]
fn invalid_configs_rejected() {
    let sched = TimestepSchedule::default();
    let mut c = config(1.0);
    c.t_max = 1000;
    assert!(c.validate(&sched).is_err());
    let mut c = config(1.0);
    c.weights.ss2d = -1.0;
    assert!(c.validate(&sched).is_err());
    let mut c = config(1.0);
    c.normal_probability = 1.5;
    assert!(c.validate(&sched).is_err());
}
