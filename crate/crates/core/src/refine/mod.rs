//! Refine stage: view enhancement, mask selection, deferred splat rendering
//! and joint optimization of point features with the renderer.

mod enhance;
mod renderer;
mod splat;
mod train;

pub use enhance::{
    enhance_views, select_mask, IdentityEnhancer, ImageEnhancer, MaskCandidate, OracleEnhancer,
    OracleSegmenter, Segmenter, TargetMask,
};
pub use renderer::{DeferredRenderer, RendererTape, FEATURES};
pub use splat::{splat_render, splat_render_backward, FeatureCloud, SplatPlan, SplatRender};
pub use train::{l1_loss, optimize_refine, RefineConfig, RefineLog, RefineTarget};

/// Checkpoint section tag holding renderer parameters.
pub const RENDERER_SECTION: [u8; 4] = *b"RNDR";

#[cfg(test)]
mod tests;
