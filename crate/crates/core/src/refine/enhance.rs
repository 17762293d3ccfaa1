use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{CameraPose, ShadingMode};
use crate::guidance::TargetRenderer;
use crate::raster::Image;

/// Texture enhancement applied to rendered novel views before refinement.
pub trait ImageEnhancer: Send + Sync {
    /// `strength` in [0, 1] controls how far the output may move from `image`.
    fn enhance(&self, image: &Image, camera: &CameraPose, strength: f64) -> Result<Image>;
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEnhancer;

impl ImageEnhancer for IdentityEnhancer {
    fn enhance(&self, image: &Image, _camera: &CameraPose, _strength: f64) -> Result<Image> {
        Ok(image.clone())
    }
}

/// Blends toward the ground-truth render of a known scene, standing in for a
/// perfect noise-then-denoise prior.
pub struct OracleEnhancer {
    target: Arc<dyn TargetRenderer>,
}

impl OracleEnhancer {
    pub fn new(target: Arc<dyn TargetRenderer>) -> Self {
        Self { target }
    }
}

impl ImageEnhancer for OracleEnhancer {
    fn enhance(&self, image: &Image, camera: &CameraPose, strength: f64) -> Result<Image> {
        let truth = self.target.render_target(camera, ShadingMode::Albedo)?;
        image.zip_map(&truth, |x, t| x + strength * (t - x))
    }
}

/// A segmentation proposal with its self-reported quality.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskCandidate {
    pub mask: Image,
    pub score: f64,
}

impl MaskCandidate {
    pub fn new(mask: Image, score: f64) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::InvalidInput(format!("mask score must be finite, got {score}")));
        }
        if mask.channels() != 1 {
            return Err(Error::InvalidInput("mask candidate must be single-channel".into()));
        }
        Ok(Self { mask, score })
    }
}

/// Produces mask candidates for rendered views.
pub trait Segmenter: Send + Sync {
    fn segment(&self, image: &Image, camera: &CameraPose) -> Result<MaskCandidate>;
}

/// Ground-truth object masks of a known scene.
pub trait TargetMask: Send + Sync {
    fn render_mask(&self, camera: &CameraPose) -> Result<Image>;
}

/// Segmenter that returns the exact target mask with a fixed score.
pub struct OracleSegmenter {
    target: Arc<dyn TargetMask>,
    score: f64,
}

impl OracleSegmenter {
    pub fn new(target: Arc<dyn TargetMask>, score: f64) -> Self {
        Self { target, score }
    }
}

impl Segmenter for OracleSegmenter {
    fn segment(&self, _image: &Image, camera: &CameraPose) -> Result<MaskCandidate> {
        MaskCandidate::new(self.target.render_mask(camera)?, self.score)
    }
}

/// The candidate mask when its score reaches `threshold`, else the field's own mask.
pub fn select_mask(nerf_mask: &Image, candidate: &MaskCandidate, threshold: f64) -> Result<Image> {
    nerf_mask.check_same_shape(&candidate.mask, "select_mask")?;
    Ok(if candidate.score >= threshold {
        candidate.mask.clone()
    } else {
        nerf_mask.clone()
    })
}

/// Runs `enhancer` on every view.
pub fn enhance_views(
    images: &[Image],
    cameras: &[CameraPose],
    enhancer: &dyn ImageEnhancer,
    strength: f64,
) -> Result<Vec<Image>> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::InvalidInput(format!("enhancement strength must be in [0, 1], got {strength}")));
    }
    if images.len() != cameras.len() {
        return Err(Error::dimension("enhance_views cameras", images.len(), cameras.len()));
    }
    images
        .iter()
        .zip(cameras)
        .map(|(img, cam)| {
            let out = enhancer.enhance(img, cam, strength)?;
            out.check_same_shape(img, "enhancer output")?;
            Ok(out)
        })
        .collect()
}
