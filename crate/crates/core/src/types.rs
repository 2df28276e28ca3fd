use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sftik_tensor::Tensor;

use crate::error::Error;

/// Locomotion terrain class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Terrain {
    /// Level walking.
    LW,
    /// Ramp ascent.
    RA,
    /// Ramp descent.
    RD,
    /// Stair ascent.
    SA,
    /// Stair descent.
    SD,
}

impl Terrain {
    pub const ALL: [Terrain; 5] = [Terrain::LW, Terrain::RA, Terrain::RD, Terrain::SA, Terrain::SD];

    pub fn as_str(&self) -> &'static str {
        match self {
            Terrain::LW => "LW",
            Terrain::RA => "RA",
            Terrain::RD => "RD",
            Terrain::SA => "SA",
            Terrain::SD => "SD",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for Terrain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Terrain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Terrain::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Contract(format!("unknown terrain {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            _ => Err(Error::Contract(format!("unknown side {s:?}"))),
        }
    }
}

/// One forecasting example: kinematics of stride n-1, the key-frames opening
/// strides n-1 and n, and the thigh angle of stride n.
#[derive(Clone, Debug, PartialEq)]
pub struct StrideSample {
    /// `channels x points` kinematics of the preceding stride; the last row is the thigh angle.
    pub kinematics: Tensor<f32>,
    pub image_prev: Arc<Tensor<f32>>,
    pub image_cur: Arc<Tensor<f32>>,
    /// Thigh angle of the forecast stride, degrees.
    pub target: Tensor<f32>,
    pub terrain: Terrain,
    /// Terrain of the preceding stride.
    pub prev_terrain: Terrain,
    pub subject: u32,
    pub side: Side,
    /// Index of the forecast stride within its recording.
    pub stride_id: u32,
}

impl StrideSample {
    pub fn is_transition(&self) -> bool {
        self.terrain != self.prev_terrain
    }

    /// Thigh-angle row of the preceding stride.
    pub fn prev_thigh_angle(&self) -> &[f32] {
        let rows = self.kinematics.shape()[0];
        self.kinematics.row(rows - 1)
    }
}
