//! Score-distillation guidance: prompts, noise schedules, pluggable noise
//! predictors and the gradients they induce on rendered images.

mod prompt;
mod provider;
mod schedule;
mod sds;

pub use prompt::{build_prompt, shading_prompt, Modality, PromptSpec, Purpose, DEFAULT_IDENTIFIER};
pub use provider::{
    mode_from_prompt, AnalyticOracleProvider, GuidanceProvider, IdentityEncoder, LatentEncoder,
    TargetRenderer,
};
pub use schedule::{TimestepSchedule, Weighting};
pub use sds::{
    combine_guidance, dreambooth_loss, sds_2d_grad, sds_2d_grad_encoded, sds_3d_grad, DenoiseTerm,
    TargetKind,
};
