//! Dense-grid radiance field: storage, cameras, differentiable rendering and
//! checkpoints.

mod camera;
mod checkpoint;
mod grid;
mod render;

pub use camera::{CameraBasis, CameraPose, Projection, Ray};
pub use checkpoint::{Checkpoint, Section, MAGIC as CHECKPOINT_MAGIC};
pub(crate) use checkpoint::Reader;
pub use grid::{sigmoid, sigmoid_inverse, softplus, softplus_inverse, Aabb, Trilinear, VoxelField};
pub use render::{
    render_backward, render_view, FieldGrad, FieldRenderer, RenderSettings, RenderedView,
    ShadingMode, ViewUpstream,
};
