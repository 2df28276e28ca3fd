//! Raw IMU streams and depth frames to labeled stride samples.

mod butterworth;
mod depth;
mod gait;
pub mod io;
mod stream;

pub use butterworth::{design_butterworth2, filter_apply, filter_stream, BiquadCoeffs};
pub use depth::{pair_keyframe, preprocess_depth, preprocess_depth_to, resize_bilinear, DepthFrame, IMAGE_SIZE, MAX_DEPTH_M};
pub use gait::{
    calibrate_bias, detect_mhe, prominence, resample_linear, segment_strides, MheConfig, SegmentConfig,
    Segmentation, SkipReason, SkippedStride,
};
pub use stream::{ImuStream, CHANNEL_NAMES, N_CHANNELS, THIGH_CHANNEL};
