//! Configuration, synthetic reference data, artifact I/O and the stage
//! commands behind the CLI.

mod config;
mod io;
mod scene;
mod stages;

pub use config::{
    parse_scene_descriptor, scene_descriptor, CameraConfig, EnhancerKind, ExtractConfig, FieldConfig,
    GuidanceConfig, ProjectionSource, ProviderKind, RefineStageConfig, RunConfig, TexprojConfig, ViewConfig,
};
pub use io::{
    depth_from_bytes, depth_to_bytes, load_depth, load_normal_png, load_png, save_depth, save_normal_png, save_png,
};
pub use scene::{SceneView, ShapeKind, SyntheticScene};
pub use stages::{files, run_coarse_cmd, run_export, run_refine_cmd, run_synth, Metrics};
