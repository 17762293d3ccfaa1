//! Coarse-stage optimization of the voxel radiance field.

mod losses;
mod optim;
mod train;
mod views;

pub use losses::{depth_pearson_loss, depth_pearson_loss_grad, reference_loss, ReferenceBundle};
pub use optim::{FieldOptimizer, OptimizerConfig, OptimizerKind};
pub use train::{run_coarse, CoarseConfig, CoarseWeights, GuidanceSetup, StepLog, TrainingLog};
pub use views::{angle_diff, ViewSchedule};

#[cfg(test)]
mod tests;
