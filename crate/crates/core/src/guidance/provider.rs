use std::sync::Arc;

use super::schedule::TimestepSchedule;
use crate::error::{Error, Result};
use crate::field::{CameraPose, ShadingMode};
use crate::raster::Image;

/// A noise predictor `eps_phi`. The 2D variant is conditioned on text; the 3D
/// variant on a reference image and relative camera.
pub trait GuidanceProvider: Send + Sync {
    /// `camera` is the pose the noisy image was rendered from, when known.
    /// Text-only models ignore it.
    fn predict_noise(
        &self,
        noisy: &Image,
        prompt: &str,
        t: usize,
        camera: Option<&CameraPose>,
    ) -> Result<Image>;

    fn predict_noise_3d(
        &self,
        noisy: &Image,
        reference: &Image,
        camera: &CameraPose,
        t: usize,
    ) -> Result<Image>;

    /// Whether concurrent calls from several threads are allowed.
    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Encoder between image space and the space the noise predictor works in.
pub trait LatentEncoder: Send + Sync {
    fn encode(&self, image: &Image) -> Result<Image>;

    /// Vector-Jacobian product: pulls a latent-space gradient back to image space.
    fn pullback(&self, image: &Image, latent_grad: &Image) -> Result<Image>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEncoder;

impl LatentEncoder for IdentityEncoder {
    fn encode(&self, image: &Image) -> Result<Image> {
        Ok(image.clone())
    }

    fn pullback(&self, _image: &Image, latent_grad: &Image) -> Result<Image> {
        Ok(latent_grad.clone())
    }
}

/// Ground-truth renders of a known scene, used by the oracle provider and the
/// oracle enhancer.
pub trait TargetRenderer: Send + Sync {
    fn render_target(&self, camera: &CameraPose, mode: ShadingMode) -> Result<Image>;
}

impl<T: TargetRenderer + ?Sized> TargetRenderer for Arc<T> {
    fn render_target(&self, camera: &CameraPose, mode: ShadingMode) -> Result<Image> {
        (**self).render_target(camera, mode)
    }
}

/// Noise predictor that knows the target scene: for a request rendered from
/// camera `v` it returns `(z_t - alpha_t * target(v)) / sigma_t`, the exact
/// noise that would turn the target render into `z_t`.
pub struct AnalyticOracleProvider {
    target: Arc<dyn TargetRenderer>,
    schedule: TimestepSchedule,
}

impl AnalyticOracleProvider {
    pub fn new(target: Arc<dyn TargetRenderer>, schedule: TimestepSchedule) -> Self {
        Self { target, schedule }
    }

    pub fn schedule(&self) -> &TimestepSchedule {
        &self.schedule
    }

    fn predict(&self, noisy: &Image, target: &Image, t: usize) -> Result<Image> {
        self.schedule.check(t)?;
        noisy.check_same_shape(target, "oracle target render")?;
        let (a, s) = (self.schedule.alpha(t), self.schedule.sigma(t));
        noisy.zip_map(target, |z, x| (z - a * x) / s)
    }
}

/// Shading mode a prompt asks for: normal-map prompts select normal renders.
pub fn mode_from_prompt(prompt: &str) -> ShadingMode {
    if prompt.contains("normal map") {
        ShadingMode::Normal
    } else {
        ShadingMode::Albedo
    }
}

impl GuidanceProvider for AnalyticOracleProvider {
    fn predict_noise(
        &self,
        noisy: &Image,
        prompt: &str,
        t: usize,
        camera: Option<&CameraPose>,
    ) -> Result<Image> {
        let camera = camera.ok_or_else(|| {
            Error::Provider("oracle provider needs the render camera".into())
        })?;
        let target = self.target.render_target(camera, mode_from_prompt(prompt))?;
        self.predict(noisy, &target, t)
    }

    fn predict_noise_3d(
        &self,
        noisy: &Image,
        _reference: &Image,
        camera: &CameraPose,
        t: usize,
    ) -> Result<Image> {
        let target = self.target.render_target(camera, ShadingMode::Albedo)?;
        self.predict(noisy, &target, t)
    }
}
