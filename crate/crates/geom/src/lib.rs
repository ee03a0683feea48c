//! Geometric primitives shared by the whole pipeline: point clouds with
//! per-point line directions, tracked (ordered) point clouds, flow fields,
//! head states, nearest-neighbor queries and the Chamfer / temporal losses.

pub mod flow_io;
pub mod kdtree;
pub mod loss;
pub mod ply;
pub mod types;

pub use flow_io::{read_flow_field, write_flow_field};
pub use kdtree::KdTree;
pub use loss::{
    chamfer_distance, chamfer_loss, chamfer_loss_grad, head_displacement, nearest_neighbors,
    temporal_loss, temporal_loss_grad, ChamferGrad, TemporalGrad, TemporalLoss,
};
pub use ply::{read_point_cloud, read_tracked_cloud, write_point_cloud, write_tracked_cloud};
pub use types::{
    canonicalize_direction, FlowField, GeomError, HeadState, PointCloud, TrackedPointCloud, Vec3,
};
