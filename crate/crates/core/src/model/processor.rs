//! Message passing over the visuo-tactile graph.

use hgnn_autodiff::{BoundParams, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;

use super::layers::Mlp;
use crate::error::{HgnnError, Result};

/// Edge function `f_e(e, n_src, n_dst)` and node function
/// `f_n(n, sum of incoming e')` of one message-passing operator.
#[derive(Clone, Debug)]
pub struct MpParams {
    pub edge_fn: Mlp,
    pub node_fn: Mlp,
}

impl MpParams {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        dim: usize,
    ) -> Self {
        Self {
            edge_fn: Mlp::normalized(store, rng, &format!("{name}.fe"), 3 * dim, dim, dim),
            node_fn: Mlp::normalized(store, rng, &format!("{name}.fn"), 2 * dim, dim, dim),
        }
    }
}

/// The three operators of one hierarchical round.
#[derive(Clone, Debug)]
pub struct RoundParams {
    pub vision: MpParams,
    pub touch: MpParams,
    pub inter: MpParams,
}

impl RoundParams {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        dim: usize,
    ) -> Self {
        Self {
            vision: MpParams::new(store, rng, &format!("{name}.vv"), dim),
            touch: MpParams::new(store, rng, &format!("{name}.tt"), dim),
            inter: MpParams::new(store, rng, &format!("{name}.vt"), dim),
        }
    }
}

/// One application of an operator. `edges` holds one state row per
/// directed pair in `list` (`None` when the list is empty).
///
/// Every edge becomes `f_e([e, n_src, n_dst])`; every node becomes
/// `f_n([n, sum of its incoming new edge states])`, zero when it has none.
pub fn mp_round<T: Real>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    params: &MpParams,
    nodes: Var,
    edges: Option<Var>,
    list: &[(usize, usize)],
) -> Result<(Var, Option<Var>)> {
    let [n, dim] = tape.shape(nodes);
    if params.node_fn.hidden.fan_in != 2 * dim {
        return Err(HgnnError::invalid(format!(
            "node states have width {dim}, operator expects {}",
            params.node_fn.hidden.fan_in / 2
        )));
    }
    let (agg, new_edges) = match edges {
        Some(e) if !list.is_empty() => {
            let [rows, width] = tape.shape(e);
            if rows != list.len() || width != dim {
                return Err(HgnnError::invalid(format!(
                    "{rows}x{width} edge states for {} edges of width {dim}",
                    list.len()
                )));
            }
            if let Some(&(a, b)) = list.iter().find(|&&(a, b)| a >= n || b >= n) {
                return Err(HgnnError::invalid(format!(
                    "edge ({a}, {b}) outside {n} nodes"
                )));
            }
            let src: Vec<usize> = list.iter().map(|e| e.0).collect();
            let dst: Vec<usize> = list.iter().map(|e| e.1).collect();
            let e_new = params.edge_fn.forward_gathered(
                tape,
                p,
                &[(e, None), (nodes, Some(&src)), (nodes, Some(&dst))],
            )?;
            let agg = tape.segment_sum(e_new, &dst, n)?;
            (agg, Some(e_new))
        }
        None if list.is_empty() => (tape.constant(Tensor::zeros(n, dim)), None),
        _ => return Err(HgnnError::invalid("edge states and edge list disagree")),
    };
    let nodes_new = params
        .node_fn
        .forward_gathered(tape, p, &[(nodes, None), (agg, None)])?;
    Ok((nodes_new, new_edges))
}

/// Edge lists of a graph. Inter edges are directed pairs over the joint
/// node index space with vision nodes first.
#[derive(Clone, Copy, Debug)]
pub struct Topology<'a> {
    pub num_vision: usize,
    pub num_touch: usize,
    pub vision: &'a [(usize, usize)],
    pub touch: &'a [(usize, usize)],
    pub inter: &'a [(usize, usize)],
}

/// Node and edge states flowing through the processor.
#[derive(Clone, Copy, Debug)]
pub struct GraphState {
    pub vision: Var,
    pub touch: Var,
    pub vision_edges: Option<Var>,
    pub touch_edges: Option<Var>,
    pub inter_edges: Option<Var>,
}

/// Intra-vision and intra-touch passes on the incoming states, then one
/// inter-modality pass on the joint graph of their outputs.
pub fn hierarchical_round<T: Real>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    params: &RoundParams,
    topo: &Topology,
    state: GraphState,
) -> Result<GraphState> {
    let (v, ev) = mp_round(
        tape,
        p,
        &params.vision,
        state.vision,
        state.vision_edges,
        topo.vision,
    )?;
    let (t, et) = mp_round(
        tape,
        p,
        &params.touch,
        state.touch,
        state.touch_edges,
        topo.touch,
    )?;
    let joint = tape.concat(&[v, t], 0)?;
    let (joint, evt) = mp_round(tape, p, &params.inter, joint, state.inter_edges, topo.inter)?;
    let vision = tape.slice(joint, 0, 0, topo.num_vision)?;
    let touch = tape.slice(joint, 0, topo.num_vision, topo.num_touch)?;
    Ok(GraphState {
        vision,
        touch,
        vision_edges: ev,
        touch_edges: et,
        inter_edges: evt,
    })
}

/// `rounds.len()` hierarchical rounds applied in sequence.
pub fn process<T: Real>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    rounds: &[RoundParams],
    topo: &Topology,
    mut state: GraphState,
) -> Result<GraphState> {
    if rounds.is_empty() {
        return Err(HgnnError::invalid("at least one round required"));
    }
    for r in rounds {
        state = hierarchical_round(tape, p, r, topo, state)?;
    }
    Ok(state)
}

/// Non-hierarchical processing: every round passes messages once over the
/// union of all edge sets with a single operator.
pub fn flat_process<T: Real>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    rounds: &[MpParams],
    topo: &Topology,
    state: GraphState,
) -> Result<GraphState> {
    if rounds.is_empty() {
        return Err(HgnnError::invalid("at least one round required"));
    }
    let nv = topo.num_vision;
    let mut list: Vec<(usize, usize)> = topo.vision.to_vec();
    list.extend(topo.touch.iter().map(|&(a, b)| (a + nv, b + nv)));
    list.extend_from_slice(topo.inter);
    let parts: Vec<Var> = [state.vision_edges, state.touch_edges, state.inter_edges]
        .into_iter()
        .flatten()
        .collect();
    let mut edges = if parts.is_empty() {
        None
    } else {
        Some(tape.concat(&parts, 0)?)
    };
    let mut nodes = tape.concat(&[state.vision, state.touch], 0)?;
    for r in rounds {
        let (n, e) = mp_round(tape, p, r, nodes, edges, &list)?;
        nodes = n;
        edges = e;
    }
    let (ne, nt) = (topo.vision.len(), topo.touch.len());
    let split = |tape: &mut Tape<T>, start: usize, len: usize| -> Result<Option<Var>> {
        Ok(match edges {
            Some(e) if len > 0 => Some(tape.slice(e, 0, start, len)?),
            _ => None,
        })
    };
    let vision_edges = split(tape, 0, ne)?;
    let touch_edges = split(tape, ne, nt)?;
    let inter_edges = split(tape, ne + nt, topo.inter.len())?;
    Ok(GraphState {
        vision: tape.slice(nodes, 0, 0, nv)?,
        touch: tape.slice(nodes, 0, nv, topo.num_touch)?,
        vision_edges,
        touch_edges,
        inter_edges,
    })
}
