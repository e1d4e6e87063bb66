//! Point-cloud and pose mathematics.

mod cloud;
mod metrics;
mod neighbors;
mod pose;

pub use cloud::{
    max_extent, transform_all, transform_points, voxel_downsample, voxel_key, ObjectModel,
    PointCloud,
};
pub use metrics::{
    add_metric, angular_error, angular_error_acos, occlusion_level, position_error,
    DEFAULT_OCCLUSION_THRESHOLD,
};
pub use neighbors::{knn, nearest_distances, radius_pairs, SpatialGrid};
pub use pose::{
    add, cross, dist2, dot, mat_vec, norm, normalize, quat_canonical, quat_from_axis_angle,
    quat_mul, quat_normalize, quat_to_matrix, scale, sub, Pose, Quat, Vec3,
};
