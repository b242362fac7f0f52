use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{DEFAULT_POINTS, DEFAULT_REDUCTION};
use crate::spiking::LifConfig;

/// Ignored label value.
pub const IGNORE_INDEX: usize = 255;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// 1 for grayscale, 3 for color frames.
    pub input_channels: usize,
    /// Voxel bins `B`.
    pub bins: usize,
    /// SNN timesteps `T`.
    pub timesteps: usize,
    /// `(downsample factor, channels)` per scale. Factors must be 2, 4, 8, ...
    pub scales: Vec<(usize, usize)>,
    pub num_classes: usize,
    /// Sampling points per query in both injectors.
    pub points: usize,
    /// Bottleneck ratio of the temporal adaptor.
    pub reduction: usize,
    pub atw_on: bool,
    pub eds_on: bool,
    pub csf_on: bool,
    pub seed: u64,
    pub lif: LifConfig,
    /// Resample voxel grids whose bin count differs from `timesteps` by
    /// linear interpolation along time instead of rejecting them.
    pub remap_timesteps: bool,
    /// Multiplier on the fan-in init bound of the spiking convolutions.
    pub snn_init_gain: f64,
    pub norm_eps: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_channels: 1,
            bins: 5,
            timesteps: 5,
            scales: vec![(2, 16), (4, 32), (8, 64)],
            num_classes: 3,
            points: DEFAULT_POINTS,
            reduction: DEFAULT_REDUCTION,
            atw_on: true,
            eds_on: true,
            csf_on: true,
            seed: 0,
            lif: LifConfig::default(),
            remap_timesteps: false,
            snn_init_gain: 1.0,
            norm_eps: 1e-5,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.input_channels == 0 || self.num_classes == 0 {
            return bad("input_channels and num_classes must be positive".into());
        }
        if self.bins == 0 || self.timesteps == 0 {
            return bad("bins and timesteps must be at least 1".into());
        }
        if self.scales.is_empty() {
            return bad("at least one scale is required".into());
        }
        for (i, &(factor, c)) in self.scales.iter().enumerate() {
            if factor != 1 << (i + 1) {
                return bad(format!(
                    "scale {i} has factor {factor}; every stage halves the resolution, so factors must be 2, 4, 8, ..."
                ));
            }
            if c == 0 {
                return bad(format!("scale {i} has zero channels"));
            }
            if self.atw_on && c % self.reduction.max(1) != 0 {
                return bad(format!("channels {c} not divisible by reduction {}", self.reduction));
            }
        }
        if self.points == 0 || self.reduction == 0 {
            return bad("points and reduction must be positive".into());
        }
        if !(self.snn_init_gain > 0.0) || !(self.norm_eps > 0.0) {
            return bad("snn_init_gain and norm_eps must be positive".into());
        }
        self.lif.validate()
    }

    /// Largest downsampling factor; input sizes must be multiples of it.
    pub fn max_factor(&self) -> usize {
        self.scales.last().map_or(1, |s| s.0)
    }
}
