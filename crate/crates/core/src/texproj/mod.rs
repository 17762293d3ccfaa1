//! Conflict-free multi-view texture projection onto a surface point cloud.
//!
//! The reference view colors every point it sees. Each novel view then only
//! colors points inside its mask minus the reprojection of points colored so
//! far, so no point is ever written twice.

mod cloud;
mod project;
mod splat;

pub use cloud::{PointColor, TexturedPointCloud, ViewImage, ViewImageSet};
pub use project::{
    build_textured_cloud, novel_view_order, project_view, reproject_mask, visible_points, BuildReport,
};
pub use splat::{rasterize_splat, splat_footprint, Footprint};
pub(crate) use project::{depth_buffer, footprints, visibility};
