//! Node-wise pose decoding, pose selection, and the confidence-weighted
//! training objective.

use hgnn_autodiff::{BoundParams, Real, Tape, Tensor, Var};

use super::layers::Mlp;
use crate::error::{HgnnError, Result};
use crate::geometry::{Pose, Quat, Vec3};

/// Raw quaternions shorter than this are normalized against it instead.
pub const QUAT_EPS: f64 = 1e-8;
/// Translation outputs are offsets from the node position in units of
/// this many meters.
pub const TRANSLATION_UNIT: f64 = 0.1;

/// Tape handles of the per-node outputs.
#[derive(Clone, Copy, Debug)]
pub struct NodeOutputs {
    /// `n x 4`, unit rows.
    pub quaternion: Var,
    /// `n x 3`, meters.
    pub translation: Var,
    /// `n x 1`, in `(0, 1)`.
    pub confidence: Var,
    /// `n x 1`, the pre-sigmoid confidence.
    pub logit: Var,
    /// Rows whose raw quaternion was shorter than [`QUAT_EPS`].
    pub degenerate: usize,
}

/// Concrete per-node estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodePrediction {
    pub quaternion: Quat,
    pub translation: Vec3,
    pub confidence: f64,
}

impl NodePrediction {
    pub fn pose(&self) -> Pose {
        Pose::new(self.quaternion, self.translation)
    }
}

/// Shared head `128 -> 128 -> 8` applied to every node: four outputs form
/// the quaternion, three the translation offset from `anchors`, and the
/// last one the confidence logit.
pub fn decode_nodewise<T: Real>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    head: &Mlp,
    nodes: Var,
    anchors: &[Vec3],
) -> Result<NodeOutputs> {
    let [n, _] = tape.shape(nodes);
    if anchors.len() != n || head.out.fan_out != 8 {
        return Err(HgnnError::invalid(format!(
            "{} anchors for {n} nodes, head width {}",
            anchors.len(),
            head.out.fan_out
        )));
    }
    let out = head.forward(tape, p, nodes)?;
    let raw_q = tape.slice(out, 1, 0, 4)?;
    let degenerate = (0..n)
        .filter(|&r| {
            let row = &tape.value(raw_q).row(r);
            row.iter()
                .map(|v| v.to_f64() * v.to_f64())
                .sum::<f64>()
                .sqrt()
                < QUAT_EPS
        })
        .count();
    let quaternion = tape.l2_normalize(raw_q, T::from_f64(QUAT_EPS));
    let raw_t = tape.slice(out, 1, 4, 3)?;
    let offset = tape.scale(raw_t, T::from_f64(TRANSLATION_UNIT));
    let flat: Vec<f64> = anchors.iter().flatten().copied().collect();
    let base = tape.constant(Tensor::from_f64(n, 3, &flat)?);
    let translation = tape.add(base, offset)?;
    let logit = tape.slice(out, 1, 7, 1)?;
    let confidence = tape.sigmoid(logit);
    Ok(NodeOutputs {
        quaternion,
        translation,
        confidence,
        logit,
        degenerate,
    })
}

/// Reads the per-node estimates off the tape. A quaternion that collapsed
/// to zero length reads as the identity.
pub fn node_predictions<T: Real>(tape: &Tape<T>, out: &NodeOutputs) -> Vec<NodePrediction> {
    let q = tape.value(out.quaternion);
    let t = tape.value(out.translation);
    let c = tape.value(out.confidence);
    (0..q.rows())
        .map(|r| {
            let qr = q.row(r);
            let mut quaternion = [
                qr[0].to_f64(),
                qr[1].to_f64(),
                qr[2].to_f64(),
                qr[3].to_f64(),
            ];
            if quaternion.iter().map(|v| v * v).sum::<f64>() < 0.25 {
                quaternion = [1.0, 0.0, 0.0, 0.0];
            }
            let tr = t.row(r);
            NodePrediction {
                quaternion,
                translation: [tr[0].to_f64(), tr[1].to_f64(), tr[2].to_f64()],
                confidence: c.get(r, 0).to_f64(),
            }
        })
        .collect()
}

/// The most confident node's pose; ties go to the lowest index.
pub fn select_pose(predictions: &[NodePrediction]) -> Result<Pose> {
    let mut best: Option<&NodePrediction> = None;
    for p in predictions {
        if best.is_none_or(|b| p.confidence > b.confidence) {
            best = Some(p);
        }
    }
    best.map(|p| p.pose())
        .ok_or_else(|| HgnnError::invalid("no predictions to select from"))
}

/// Indices of the `min(k, n)` highest values, ties broken by lower index.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Mean distance between model points under each predicted pose and the
/// ground truth, as a `1 x n` row (one entry per quaternion row).
pub fn nodewise_loss<T: Real>(
    tape: &mut Tape<T>,
    quaternion: Var,
    translation: Var,
    pose_gt: &Pose,
    points: &[Vec3],
) -> Result<Var> {
    let [n, _] = tape.shape(quaternion);
    let m = points.len();
    if m == 0 || tape.shape(translation) != [n, 3] {
        return Err(HgnnError::invalid(
            "nodewise loss needs model points and n x 3 translations",
        ));
    }
    // (3i + r, p) entries hold component r of node i's transform of point p.
    let rot = tape.quat_to_rotation(quaternion)?;
    let rot = tape.reshape(rot, 3 * n, 3)?;
    let mut xt = vec![0.0; 3 * m];
    for (p, x) in points.iter().enumerate() {
        for r in 0..3 {
            xt[r * m + p] = x[r];
        }
    }
    let xt = tape.constant(Tensor::from_f64(3, m, &xt)?);
    let moved = tape.matmul(rot, xt)?;
    let t = tape.reshape(translation, 3 * n, 1)?;
    let moved = tape.add(moved, t)?;
    let mut gt = vec![0.0; 3 * m];
    for (p, x) in points.iter().enumerate() {
        let g = pose_gt.apply(*x);
        for r in 0..3 {
            gt[r * m + p] = g[r];
        }
    }
    let gt = tape.constant(Tensor::from_f64(1, 3 * m, &gt)?);
    let moved = tape.reshape(moved, n, 3 * m)?;
    let diff = tape.sub(moved, gt)?;
    let diff = tape.reshape(diff, 3 * n, m)?;
    // Rows of the transpose are (p, i) with the 3 components contiguous.
    let diff = tape.transpose(diff);
    let diff = tape.reshape(diff, m * n, 3)?;
    let dist = tape.row_norm(diff);
    let dist = tape.reshape(dist, m, n)?;
    let total = tape.sum(dist, Some(0))?;
    Ok(tape.scale(total, T::from_f64(1.0 / m as f64)))
}

/// `(1/K') sum over the top-K' confident nodes of (L_i c_i - lambda log c_i)`.
///
/// The top-K' set is chosen from the current confidence values and is
/// not differentiated through.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    out: &NodeOutputs,
    pose_gt: &Pose,
    points: &[Vec3],
    k: usize,
    lambda: f64,
) -> Result<Var> {
    let n = tape.shape(out.confidence)[0];
    if n == 0 || k == 0 {
        return Err(HgnnError::invalid(
            "total loss needs at least one node and K >= 1",
        ));
    }
    if !(lambda >= 0.0) {
        return Err(HgnnError::invalid(format!(
            "lambda {lambda} must be non-negative"
        )));
    }
    let conf: Vec<f64> = tape
        .value(out.confidence)
        .data()
        .iter()
        .map(|v| v.to_f64())
        .collect();
    let sel = top_k(&conf, k);
    let kk = sel.len();
    let q = tape.gather(out.quaternion, &sel)?;
    let t = tape.gather(out.translation, &sel)?;
    let c = tape.gather(out.confidence, &sel)?;
    let l = nodewise_loss(tape, q, t, pose_gt, points)?;
    let l = tape.reshape(l, kk, 1)?;
    let weighted = tape.mul(l, c)?;
    let logc = tape.gather(out.logit, &sel)?;
    let logc = tape.log_sigmoid(logc);
    let reg = tape.scale(logc, T::from_f64(-lambda));
    let terms = tape.add(weighted, reg)?;
    let total = tape.sum(terms, None)?;
    Ok(tape.scale(total, T::from_f64(1.0 / kk as f64)))
}
