use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::losses::{depth_pearson_loss_grad, reference_loss, ReferenceBundle};
use super::optim::{FieldOptimizer, OptimizerConfig};
use super::views::ViewSchedule;
use crate::error::{Error, Result};
use crate::field::{FieldGrad, FieldRenderer, RenderSettings, ShadingMode, ViewUpstream, VoxelField};
use crate::guidance::{
    combine_guidance, sds_2d_grad, sds_3d_grad, shading_prompt, GuidanceProvider, PromptSpec,
    TimestepSchedule,
};
use crate::raster::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseWeights {
    pub reference: f64,
    pub depth: f64,
    pub ss2d: f64,
    pub ss3d: f64,
}

impl Default for CoarseWeights {
    fn default() -> Self {
        Self {
            reference: 1.0,
            depth: 0.1,
            ss2d: 1.0,
            ss3d: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseConfig {
    pub weights: CoarseWeights,
    /// Probability of rendering a novel view in normal shading.
    pub normal_probability: f64,
    /// Inclusive range the diffusion timestep is drawn from.
    pub t_min: usize,
    pub t_max: usize,
    /// Render settings shared by every step; the sampling seed is redrawn per step.
    pub render: RenderSettings,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self {
            weights: CoarseWeights::default(),
            normal_probability: 0.25,
            t_min: 20,
            t_max: 980,
            render: RenderSettings {
                samples_per_ray: 64,
                transmittance_cutoff: 1e-3,
                normal_buffer: false,
                ..RenderSettings::default()
            },
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

impl CoarseConfig {
    pub fn validate(&self, schedule: &TimestepSchedule) -> Result<()> {
        let w = &self.weights;
        for (name, v) in [
            ("reference", w.reference),
            ("depth", w.depth),
            ("ss2d", w.ss2d),
            ("ss3d", w.ss3d),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} weight must be >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.normal_probability) {
            return Err(Error::InvalidInput(format!(
                "normal-mode probability must lie in [0, 1], got {}",
                self.normal_probability
            )));
        }
        if self.t_min > self.t_max || self.t_max >= schedule.len() {
            return Err(Error::InvalidInput(format!(
                "timestep range [{}, {}] invalid for a schedule of length {}",
                self.t_min,
                self.t_max,
                schedule.len()
            )));
        }
        if self.render.samples_per_ray == 0 {
            return Err(Error::InvalidInput("samples_per_ray must be positive".into()));
        }
        self.optimizer.validate()
    }
}

/// Score-distillation setup; a missing provider disables the guidance terms.
#[derive(Clone, Copy)]
pub struct GuidanceSetup<'a> {
    pub provider: Option<&'a dyn GuidanceProvider>,
    pub schedule: &'a TimestepSchedule,
    pub prompt: &'a PromptSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss_ref: f64,
    /// `None` when the depth term was skipped for degenerate variance.
    pub loss_depth: Option<f64>,
    pub grad_norm_sds: f64,
    pub azimuth_deg: f64,
    pub mode: ShadingMode,
}

impl StepLog {
    /// Weighted reference plus depth loss for this step.
    pub fn training_loss(&self, weights: &CoarseWeights) -> f64 {
        weights.reference * self.loss_ref + weights.depth * self.loss_depth.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub steps: Vec<StepLog>,
}

impl TrainingLog {
    /// One tab-separated line per step.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let depth = s.loss_depth.map_or_else(|| "nan".to_string(), |d| format!("{d:.6}"));
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{}\t{:.6}\t{:.2}\t{}",
                s.step, s.loss_ref, depth, s.grad_norm_sds, s.azimuth_deg, s.mode
            );
        }
        out
    }

    /// Mean training loss over consecutive windows of `window` steps.
    pub fn window_means(&self, window: usize, weights: &CoarseWeights) -> Vec<f64> {
        self.steps
            .chunks(window.max(1))
            .filter(|c| c.len() == window.max(1))
            .map(|c| c.iter().map(|s| s.training_loss(weights)).sum::<f64>() / c.len() as f64)
            .collect()
    }
}

fn noise_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    let data = (0..w * h * 3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Image::from_vec(w, h, 3, data).expect("noise dimensions")
}

/// Optimizes `field` against the reference bundle and score-distillation
/// guidance on progressively sampled novel views.
pub fn run_coarse(
    mut field: VoxelField,
    bundle: &ReferenceBundle,
    schedule: &ViewSchedule,
    guidance: GuidanceSetup<'_>,
    config: &CoarseConfig,
) -> Result<(VoxelField, TrainingLog)> {
    schedule.validate()?;
    config.validate(guidance.schedule)?;
    let reference = &schedule.reference;
    bundle.image.check_dims(reference.width, reference.height, "run_coarse reference")?;
    if bundle.mask_pixels() < 2 {
        return Err(Error::DegenerateVariance(format!(
            "reference mask has {} pixel(s), at least 2 required",
            bundle.mask_pixels()
        )));
    }
    let w = &config.weights;
    let mut optimizer = FieldOptimizer::new(config.optimizer, &field)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = TrainingLog::default();

    for step in 0..schedule.total_steps {
        let renderer = FieldRenderer::new(&field);
        let mut grad = FieldGrad::zeros(field.voxel_count());

        // reference view
        let ref_settings = RenderSettings {
            seed: rng.next_u64(),
            ..config.render.clone()
        };
        let ref_view = renderer.render(reference, ShadingMode::Albedo, &ref_settings)?;
        let (loss_ref, g_rgb) = reference_loss(&ref_view, bundle)?;
        let g_rgb = g_rgb.scale(w.reference);
        let mut loss_depth = None;
        let mut g_depth = None;
        if w.depth > 0.0 {
            match depth_pearson_loss_grad(&bundle.depth, &ref_view.depth, &bundle.mask) {
                Ok((l, g)) => {
                    loss_depth = Some(l);
                    g_depth = Some(g.scale(w.depth));
                }
                Err(Error::DegenerateVariance(msg)) => {
                    log::warn!("step {step}: depth term skipped ({msg})");
                }
                Err(e) => return Err(e),
            }
        }
        if w.reference > 0.0 || g_depth.is_some() {
            let g = renderer.backward(
                reference,
                ShadingMode::Albedo,
                &ref_settings,
                ViewUpstream {
                    rgb: Some(&g_rgb),
                    depth: g_depth.as_ref(),
                    mask: None,
                },
            )?;
            grad.add_assign(&g);
        }

        // novel view
        let camera = schedule.sample_camera(step, &mut rng)?;
        let mode = if rng.random::<f64>() < config.normal_probability {
            ShadingMode::Normal
        } else {
            ShadingMode::Albedo
        };
        let novel_settings = RenderSettings {
            seed: rng.next_u64(),
            ..config.render.clone()
        };
        let mut grad_norm_sds = 0.0;
        if let Some(provider) = guidance.provider {
            let t = rng.random_range(config.t_min..=config.t_max);
            let noise = noise_image(&mut rng, camera.width, camera.height);
            let view = renderer.render(&camera, mode, &novel_settings)?;
            let prompt = shading_prompt(guidance.prompt, mode);
            let g2d = sds_2d_grad(provider, &view, &prompt, Some(&camera), t, &noise, guidance.schedule)?;
            let g3d = if mode == ShadingMode::Albedo && w.ss3d > 0.0 {
                sds_3d_grad(provider, &view, &bundle.image, &camera, t, &noise, guidance.schedule)?
            } else {
                Image::new(camera.width, camera.height, 3)
            };
            let combined = combine_guidance(&g2d, &g3d, w.ss2d, w.ss3d)?;
            grad_norm_sds = combined.l2_norm();
            let g = renderer.backward(
                &camera,
                mode,
                &novel_settings,
                ViewUpstream {
                    rgb: Some(&combined),
                    ..Default::default()
                },
            )?;
            grad.add_assign(&g);
        }
        drop(renderer);

        let raw = grad.to_raw(&field);
        optimizer.step(&mut field, &raw)?;

        let entry = StepLog {
            step,
            loss_ref,
            loss_depth,
            grad_norm_sds,
            azimuth_deg: camera.azimuth.to_degrees(),
            mode,
        };
        if step % 100 == 0 || step + 1 == schedule.total_steps {
            log::info!(
                "coarse step {step}: loss_ref {:.5} loss_depth {:?} sds {:.4}",
                entry.loss_ref,
                entry.loss_depth,
                entry.grad_norm_sds
            );
        }
        log.steps.push(entry);
    }
    Ok((field, log))
}
