//! The two-stage ("sandwich") fusion transformer and its comparators.

mod block;
mod config;
mod flops;
mod forward;
mod params;
mod patch;

pub use block::{transformer_block, BlockOutput};
pub use config::{Ablation, Fusion, ModelConfig, PatchMode};
pub use flops::{count_flops, image_encoder_flops, FlopsBreakdown, StageFlops};
pub use forward::{embed, forward, forward_batch, head, stage_plan, ForwardOutput, ModelInput, StagePlan, StageTrace};
pub use params::{count_params, init_params, param_layout, per_block_params, Init, ModelParams, ParamSpec, ParamVars};
pub use patch::{patchify_image, patchify_imu};
