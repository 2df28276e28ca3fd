use crate::error::{Error, Result};
use crate::types::Side;

/// 3 IMUs x (acc xyz, gyro xyz), then the target-thigh sagittal angle.
pub const N_CHANNELS: usize = 19;
pub const THIGH_CHANNEL: usize = 18;

pub const CHANNEL_NAMES: [&str; N_CHANNELS] = [
    "ax1", "ay1", "az1", "gx1", "gy1", "gz1", //
    "ax2", "ay2", "az2", "gx2", "gy2", "gz2", //
    "ax3", "ay3", "az3", "gx3", "gy3", "gz3", //
    "thigh_angle_deg",
];

/// Time-aligned multichannel IMU recording.
#[derive(Clone, Debug, PartialEq)]
pub struct ImuStream {
    pub timestamps: Vec<f64>,
    /// `N_CHANNELS` series, each as long as `timestamps`.
    pub channels: Vec<Vec<f64>>,
    pub side: Side,
}

impl ImuStream {
    pub fn new(timestamps: Vec<f64>, channels: Vec<Vec<f64>>, side: Side) -> Result<Self> {
        if channels.len() != N_CHANNELS {
            return Err(Error::Contract(format!(
                "expected {N_CHANNELS} channels, got {}",
                channels.len()
            )));
        }
        if let Some((i, c)) = channels.iter().enumerate().find(|(_, c)| c.len() != timestamps.len()) {
            return Err(Error::Contract(format!(
                "channel {i} has {} samples, timestamps have {}",
                c.len(),
                timestamps.len()
            )));
        }
        if let Some(w) = timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Contract(format!(
                "timestamps not strictly increasing at sample {}",
                w + 1
            )));
        }
        Ok(Self {
            timestamps,
            channels,
            side,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn thigh_angle(&self) -> &[f64] {
        &self.channels[THIGH_CHANNEL]
    }

    /// Mean sampling period in seconds.
    pub fn mean_period(&self) -> Option<f64> {
        let n = self.timestamps.len();
        (n >= 2).then(|| (self.timestamps[n - 1] - self.timestamps[0]) / (n - 1) as f64)
    }
}
