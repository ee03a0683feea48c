//! Inter-frame hair point flow via Line Feature Histogram descriptors:
//! per-point descriptor extraction, nearest-descriptor matching gated to a
//! spatial ball, and outlier filtering by magnitude and cycle consistency.

pub mod descriptor;
pub mod estimate;
pub mod matching;

pub use descriptor::{lfh_cloud, lfh_descriptor, LfhDescriptor, ANGLE_BINS, DESCRIPTOR_SIZE};
pub use estimate::{estimate_flow, median_nn_spacing, FlowParams};
pub use matching::{match_descriptors, MatchOutcome};
