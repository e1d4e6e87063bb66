//! From a simulated observation to a visuo-tactile graph.

pub mod graph;
pub mod patches;

pub use graph::{
    assemble_graph, build_graph, build_inter_edges, build_touch_graph, build_vision_graph,
    edge_features, symmetric_edges, GraphConfig, MultimodalGraph,
};
pub use patches::{crop_patch, crop_resized, LOCAL_PATCH, OBJECT_PATCH, SENSOR_PATCH};
