//! Procedural in-hand scenes: objects, grasps, rendering, and touch.

pub mod camera;
pub mod dataset;
pub mod grasp;
pub mod objects;
pub mod render;
pub mod tactile;

pub use camera::{CameraModel, RgbImage};
pub use dataset::{
    child_seed, generate_dataset, generate_sample, splitmix64, Dataset, SceneSample,
};
pub use grasp::{sample_grasp, GripperConfig};
pub use objects::{default_library, make_object, ObjectSpec, DEFAULT_SURFACE_POINTS};
pub use render::{render_scene, Rendering};
pub use tactile::tactile_contacts;
