//! Cross-branch interaction blocks.
//!
//! * [`atw`]: temporal weighting of spike features and deformable attention
//!   from the frame branch into them (spikes into frames).
//! * [`eds`]: sparse deformable sampling anchored at event locations (frame
//!   features into the spiking branch).
//! * [`csf`]: channel-gated fusion of both branches.
//!
//! Both injectors are residual with zero-initialized output projections, so a
//! freshly built injector is an exact no-op.

pub mod atw;
pub mod csf;
pub mod eds;

pub use atw::{atw_collapse, atw_inject, atw_temporal_weights, AtwParams};
pub use csf::{csf_fuse, csf_select, CsfParams};
pub use eds::{eds_inject, eds_offsets, EdsParams};

/// Sampling points per query.
pub const DEFAULT_POINTS: usize = 4;
/// Channel reduction of the temporal adaptor.
pub const DEFAULT_REDUCTION: usize = 4;
