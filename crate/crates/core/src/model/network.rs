//! Encoder, processor, and decoder assembled into one model.

use std::fmt;
use std::str::FromStr;

use hgnn_autodiff::{BoundParams, ParamStore, Real, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::decoder::{decode_nodewise, total_loss, NodeOutputs};
use super::layers::{Mlp, PatchEncoder};
use super::processor::{flat_process, process, GraphState, MpParams, RoundParams, Topology};
use crate::encoder::{
    build_graph, crop_patch, crop_resized, edge_features, GraphConfig, MultimodalGraph,
    LOCAL_PATCH, OBJECT_PATCH, SENSOR_PATCH,
};
use crate::error::{HgnnError, Result};
use crate::geometry::{sub, Pose, Vec3};
use crate::sim::{CameraModel, SceneSample};

/// Node positions enter the network relative to the vision centroid, in
/// units of `1 / POSITION_SCALE` meters.
pub const POSITION_SCALE: f64 = 10.0;

/// Model family: the full network or one of its ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Variant {
    #[default]
    Full,
    /// No visual features (all patch encodings zeroed).
    NoVis,
    /// No proprioception (sensor location and sensor patch zeroed).
    NoProp,
    /// Flat message passing over the union of all edges.
    NoHrch,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoVis,
        Variant::NoProp,
        Variant::NoHrch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "HGNN",
            Variant::NoVis => "NoVis",
            Variant::NoProp => "NoProp",
            Variant::NoHrch => "NoHrch",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = HgnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" | "hgnn" => Ok(Variant::Full),
            "novis" => Ok(Variant::NoVis),
            "noprop" => Ok(Variant::NoProp),
            "nohrch" => Ok(Variant::NoHrch),
            _ => Err(HgnnError::Config(format!("unknown model variant `{s}`"))),
        }
    }
}

/// Architecture and objective settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub rounds: usize,
    pub hidden: usize,
    pub local_dim: usize,
    pub sensor_dim: usize,
    pub object_dim: usize,
    pub top_k: usize,
    pub lambda: f64,
    pub graph: GraphConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            rounds: 3,
            hidden: 128,
            local_dim: 32,
            sensor_dim: 64,
            object_dim: 64,
            top_k: 128,
            lambda: 1.5e-2,
            graph: GraphConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.hidden == 0 || self.top_k == 0 {
            return Err(HgnnError::Config(
                "rounds, hidden width and K must be at least 1".into(),
            ));
        }
        if !(self.lambda >= 0.0) {
            return Err(HgnnError::Config(format!(
                "lambda {} must be non-negative",
                self.lambda
            )));
        }
        if self.local_dim == 0 || self.sensor_dim == 0 || self.object_dim == 0 {
            return Err(HgnnError::Config(
                "feature widths must be at least 1".into(),
            ));
        }
        self.graph.validate()
    }
}

/// Graph structure and image crops of one sample; everything the network
/// reads, independent of parameters.
#[derive(Clone, Debug)]
pub struct Observation {
    pub graph: MultimodalGraph,
    /// Vision centroid; origin of the input frame.
    pub anchor: Vec3,
    /// One `8 x 8 x 3` crop per vision node, then per touch node.
    pub vision_patches: Vec<f32>,
    pub touch_patches: Vec<f32>,
    /// Sensors that own at least one touch node, ascending.
    pub active_sensors: Vec<usize>,
    /// Row of each touch node's sensor within `active_sensors`.
    pub touch_sensor_row: Vec<usize>,
    /// One `64 x 64 x 3` crop per active sensor.
    pub sensor_patches: Vec<f32>,
    /// Object segment resized to `32 x 32 x 3`.
    pub object_patch: Vec<f32>,
}

impl Observation {
    pub fn new(
        sample: &SceneSample,
        camera: &CameraModel,
        diameter: f64,
        graph: &GraphConfig,
    ) -> Result<Self> {
        let graph = build_graph(sample, diameter, graph)?;
        Self::from_graph(graph, sample, camera)
    }

    pub fn from_graph(
        graph: MultimodalGraph,
        sample: &SceneSample,
        camera: &CameraModel,
    ) -> Result<Self> {
        let crops = |pts: &[Vec3], size: usize| -> Vec<f32> {
            pts.iter()
                .flat_map(|&p| crop_patch(&sample.rgb, p, camera, size))
                .collect()
        };
        let vision_patches = crops(&graph.vision_positions, LOCAL_PATCH);
        let touch_patches = crops(&graph.touch_positions, LOCAL_PATCH);
        let mut active_sensors = graph.touch_sensor.clone();
        active_sensors.sort_unstable();
        active_sensors.dedup();
        let touch_sensor_row = graph
            .touch_sensor
            .iter()
            .map(|s| active_sensors.binary_search(s).expect("sensor listed"))
            .collect();
        let active_locations: Vec<Vec3> = active_sensors
            .iter()
            .map(|&s| graph.sensor_locations[s])
            .collect();
        let sensor_patches = crops(&active_locations, SENSOR_PATCH);
        let object_patch = crop_resized(&sample.rgb, sample.segment_bbox, OBJECT_PATCH)?;
        Ok(Self {
            anchor: graph.anchor(),
            graph,
            vision_patches,
            touch_patches,
            active_sensors,
            touch_sensor_row,
            sensor_patches,
            object_patch,
        })
    }

    /// Node positions, vision first.
    pub fn node_positions(&self) -> Vec<Vec3> {
        self.graph.joint_positions()
    }
}

/// Message-passing parameters of either processor form.
#[derive(Clone, Debug)]
pub enum Processor {
    Hierarchical(Vec<RoundParams>),
    Flat(Vec<MpParams>),
}

/// Parameter layout of the network. Parameter values live in a separate
/// [`ParamStore`] so the same layout drives any scalar type.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub local_encoder: PatchEncoder,
    pub sensor_encoder: PatchEncoder,
    pub object_encoder: PatchEncoder,
    pub vision_embed: Mlp,
    pub touch_embed: Mlp,
    pub vision_edge_embed: Mlp,
    pub touch_edge_embed: Mlp,
    pub inter_edge_embed: Mlp,
    pub processor: Processor,
    pub head: Mlp,
}

fn constant_f32<T: Real>(
    tape: &mut Tape<T>,
    rows: usize,
    cols: usize,
    data: &[f32],
) -> Result<Var> {
    let v: Vec<T> = data.iter().map(|&x| T::from_f64(x as f64)).collect();
    Ok(tape.constant(Tensor::new(rows, cols, v)?))
}

fn constant_f64<T: Real>(
    tape: &mut Tape<T>,
    rows: usize,
    cols: usize,
    data: &[f64],
) -> Result<Var> {
    Ok(tape.constant(Tensor::from_f64(rows, cols, data)?))
}

impl Model {
    /// Builds the layout and freshly initialized parameters.
    pub fn new<T: Real>(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let local_encoder =
            PatchEncoder::local(&mut store, rng, "enc.local", LOCAL_PATCH, config.local_dim);
        let sensor_encoder = PatchEncoder::strided(
            &mut store,
            rng,
            "enc.sensor",
            SENSOR_PATCH,
            config.sensor_dim,
        );
        let object_encoder = PatchEncoder::strided(
            &mut store,
            rng,
            "enc.object",
            OBJECT_PATCH,
            config.object_dim,
        );
        let vision_in = 3 + config.local_dim + config.object_dim;
        let touch_in = vision_in + 3 + config.sensor_dim;
        let vision_embed = Mlp::normalized(&mut store, rng, "embed.vision", vision_in, h, h);
        let touch_embed = Mlp::normalized(&mut store, rng, "embed.touch", touch_in, h, h);
        let vision_edge_embed = Mlp::normalized(&mut store, rng, "embed.edge_v", 4, h, h);
        let touch_edge_embed = Mlp::normalized(&mut store, rng, "embed.edge_t", 4, h, h);
        let inter_edge_embed = Mlp::normalized(&mut store, rng, "embed.edge_vt", 4, h, h);
        let processor = match config.variant {
            Variant::NoHrch => Processor::Flat(
                (0..config.rounds)
                    .map(|r| MpParams::new(&mut store, rng, &format!("mp{r}.flat"), h))
                    .collect(),
            ),
            _ => Processor::Hierarchical(
                (0..config.rounds)
                    .map(|r| RoundParams::new(&mut store, rng, &format!("mp{r}"), h))
                    .collect(),
            ),
        };
        let head = Mlp::new(&mut store, rng, "head", h, h, 8);
        let model = Self {
            config,
            local_encoder,
            sensor_encoder,
            object_encoder,
            vision_embed,
            touch_embed,
            vision_edge_embed,
            touch_edge_embed,
            inter_edge_embed,
            processor,
            head,
        };
        Ok((model, store))
    }

    /// Number of scalar parameters in the message-passing operators.
    pub fn processor_param_count<T: Real>(&self, store: &ParamStore<T>) -> usize {
        store
            .iter()
            .filter(|(name, _)| name.starts_with("mp"))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Initial node and edge embeddings.
    pub fn embed<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        obs: &Observation,
    ) -> Result<GraphState> {
        let g = &obs.graph;
        let (nv, nt, ns) = (g.num_vision(), g.num_touch(), obs.active_sensors.len());
        if nv == 0 || nt == 0 {
            return Err(HgnnError::Encoding(
                "graph needs vision and touch nodes".into(),
            ));
        }
        let cfg = &self.config;
        let no_vis = cfg.variant == Variant::NoVis;
        let no_prop = cfg.variant == Variant::NoProp;
        let local_len = LOCAL_PATCH * LOCAL_PATCH * 3;

        // Masked features are replaced by constants, so the corresponding
        // encoders receive no gradient and the input widths stay fixed.
        let zeros =
            |tape: &mut Tape<T>, rows: usize, cols: usize| tape.constant(Tensor::zeros(rows, cols));
        let (phi_v, phi_t, phi_o) = if no_vis {
            (
                zeros(tape, nv, cfg.local_dim),
                zeros(tape, nt, cfg.local_dim),
                zeros(tape, 1, cfg.object_dim),
            )
        } else {
            let mut all = obs.vision_patches.clone();
            all.extend_from_slice(&obs.touch_patches);
            let patches = constant_f32(tape, nv + nt, local_len, &all)?;
            let phi = self.local_encoder.forward(tape, p, patches)?;
            let phi_v = tape.slice(phi, 0, 0, nv)?;
            let phi_t = tape.slice(phi, 0, nv, nt)?;
            let obj = constant_f32(tape, 1, OBJECT_PATCH * OBJECT_PATCH * 3, &obs.object_patch)?;
            (phi_v, phi_t, self.object_encoder.forward(tape, p, obj)?)
        };
        let phi_s = if no_vis || no_prop {
            zeros(tape, nt, cfg.sensor_dim)
        } else {
            let patches = constant_f32(
                tape,
                ns,
                SENSOR_PATCH * SENSOR_PATCH * 3,
                &obs.sensor_patches,
            )?;
            let phi = self.sensor_encoder.forward(tape, p, patches)?;
            tape.gather(phi, &obs.touch_sensor_row)?
        };
        let rel = |pts: &mut dyn Iterator<Item = Vec3>| -> Vec<f64> {
            pts.flat_map(|x| sub(x, obs.anchor).map(|v| v * POSITION_SCALE))
                .collect()
        };
        let x_v = rel(&mut g.vision_positions.iter().copied());
        let x_v = constant_f64(tape, nv, 3, &x_v)?;
        let x_t = rel(&mut g.touch_positions.iter().copied());
        let x_t = constant_f64(tape, nt, 3, &x_t)?;
        let x_s = if no_prop {
            zeros(tape, nt, 3)
        } else {
            let x = rel(&mut g.touch_sensor.iter().map(|&s| g.sensor_locations[s]));
            constant_f64(tape, nt, 3, &x)?
        };
        let o_v = tape.gather(phi_o, &vec![0; nv])?;
        let o_t = tape.gather(phi_o, &vec![0; nt])?;
        let vision = self.vision_embed.forward_gathered(
            tape,
            p,
            &[(x_v, None), (phi_v, None), (o_v, None)],
        )?;
        let touch = self.touch_embed.forward_gathered(
            tape,
            p,
            &[
                (x_t, None),
                (phi_t, None),
                (o_t, None),
                (x_s, None),
                (phi_s, None),
            ],
        )?;

        let joint = g.joint_positions();
        let inter = g.inter_edges_directed();
        let edge =
            |tape: &mut Tape<T>, mlp: &Mlp, pos: &[Vec3], list: &[(usize, usize)], r: f64| {
                if list.is_empty() {
                    return Ok(None);
                }
                let f = edge_features(pos, list, r);
                let f = constant_f64(tape, list.len(), 4, &f)?;
                mlp.forward(tape, p, f).map(Some)
            };
        let vision_edges = edge(
            tape,
            &self.vision_edge_embed,
            &g.vision_positions,
            &g.vision_edges,
            g.vision_radius,
        )?;
        let touch_edges = edge(
            tape,
            &self.touch_edge_embed,
            &g.touch_positions,
            &g.touch_edges,
            g.touch_radius,
        )?;
        let inter_edges = edge(
            tape,
            &self.inter_edge_embed,
            &joint,
            &inter,
            g.vision_radius,
        )?;
        Ok(GraphState {
            vision,
            touch,
            vision_edges,
            touch_edges,
            inter_edges,
        })
    }

    /// Full forward pass to per-node pose outputs (vision nodes first).
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        obs: &Observation,
    ) -> Result<NodeOutputs> {
        let state = self.embed(tape, p, obs)?;
        let inter = obs.graph.inter_edges_directed();
        let topo = Topology {
            num_vision: obs.graph.num_vision(),
            num_touch: obs.graph.num_touch(),
            vision: &obs.graph.vision_edges,
            touch: &obs.graph.touch_edges,
            inter: &inter,
        };
        let state = match &self.processor {
            Processor::Hierarchical(rounds) => process(tape, p, rounds, &topo, state)?,
            Processor::Flat(rounds) => flat_process(tape, p, rounds, &topo, state)?,
        };
        let nodes = tape.concat(&[state.vision, state.touch], 0)?;
        decode_nodewise(tape, p, &self.head, nodes, &obs.node_positions())
    }

    /// Forward pass plus the training objective.
    pub fn loss<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        obs: &Observation,
        pose_gt: &Pose,
        points: &[Vec3],
    ) -> Result<(Var, NodeOutputs)> {
        let out = self.forward(tape, p, obs)?;
        let loss = total_loss(
            tape,
            &out,
            pose_gt,
            points,
            self.config.top_k,
            self.config.lambda,
        )?;
        Ok((loss, out))
    }
}
