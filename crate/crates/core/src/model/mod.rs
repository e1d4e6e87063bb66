//! The hierarchical graph network and its training objective.

pub mod decoder;
pub mod layers;
pub mod network;
pub mod processor;

pub use decoder::{
    decode_nodewise, node_predictions, nodewise_loss, select_pose, top_k, total_loss, NodeOutputs,
    NodePrediction, QUAT_EPS, TRANSLATION_UNIT,
};
pub use layers::{Conv, Init, LayerNorm, Linear, Mlp, PatchEncoder};
pub use network::{Model, ModelConfig, Observation, Processor, Variant, POSITION_SCALE};
pub use processor::{
    flat_process, hierarchical_round, mp_round, process, GraphState, MpParams, RoundParams,
    Topology,
};
