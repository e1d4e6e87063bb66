//! Define-by-run computation record.
//!
//! Every forward primitive appends one node to the [`Tape`]; nodes are
//! stored in creation order, so inputs always precede the operations that
//! consume them and a single reverse sweep computes all gradients.

use crate::error::{shape_err, AdError, Result};
use crate::scalar::Real;
use crate::tensor::{matmul_raw, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary elementwise op maps onto the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// `1 x n` repeated over rows.
    Row,
    /// `m x 1` repeated over columns.
    Col,
    Scalar,
}

/// Geometry of a 2-D convolution lowered to `im2col`.
///
/// Images are stored channels-last as `(batch * height * width) x channels`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }
    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }
    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    LogSigmoid(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Sum {
        input: Var,
        axis: Option<usize>,
    },
    Gather {
        input: Var,
        indices: Vec<usize>,
    },
    SegmentSum {
        input: Var,
        segments: Vec<usize>,
    },
    L2Normalize {
        input: Var,
        eps: T,
    },
    RowNorm(Var),
    QuatToRotation(Var),
    Transpose(Var),
    Reshape(Var),
    Im2Col {
        input: Var,
        geom: ConvGeometry,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Log(_) => "log",
            Op::LogSigmoid(_) => "log_sigmoid",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum { .. } => "sum",
            Op::Gather { .. } => "gather",
            Op::SegmentSum { .. } => "segment_sum",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::RowNorm(_) => "row_norm",
            Op::QuatToRotation(_) => "quat_to_rotation",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
            Op::Im2Col { .. } => "im2col",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of every operation in one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// First recorded node holding a NaN or infinity, with its op name.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.all_finite())
            .map(|(i, n)| (i, n.op.name()))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn check_index(&self, op: &'static str, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(AdError::Index {
                op,
                index: v.0,
                extent: self.nodes.len(),
            });
        }
        Ok(())
    }

    // ---- forward primitives -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return shape_err("matmul", format!("{sa:?} x {sb:?}"));
        }
        let out = matmul_raw(
            self.value(a).data(),
            sa,
            false,
            self.value(b).data(),
            sb,
            false,
        );
        let t = Tensor::new(sa[0], sb[1], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::MatMul(a, b), rg))
    }

    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(Broadcast::Same)
        } else if sb == [1, 1] {
            Ok(Broadcast::Scalar)
        } else if sb[0] == 1 && sb[1] == sa[1] {
            Ok(Broadcast::Row)
        } else if sb[1] == 1 && sb[0] == sa[0] {
            Ok(Broadcast::Col)
        } else {
            shape_err(op, format!("cannot broadcast {sb:?} onto {sa:?}"))
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: fn(Var, Var, Broadcast) -> Op<T>,
    ) -> Result<Var> {
        let kind = self.broadcast_kind(name, a, b)?;
        let [rows, cols] = self.shape(a);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let out: Vec<T> = match kind {
            Broadcast::Same => va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Scalar => va.iter().map(|&x| f(x, vb[0])).collect(),
            Broadcast::Row => {
                let mut out = Vec::with_capacity(rows * cols);
                for row in va.chunks_exact(cols.max(1)) {
                    out.extend(row.iter().zip(vb).map(|(&x, &y)| f(x, y)));
                }
                out
            }
            Broadcast::Col => {
                let mut out = Vec::with_capacity(rows * cols);
                for (row, &y) in va.chunks_exact(cols.max(1)).zip(vb) {
                    out.extend(row.iter().map(|&x| f(x, y)));
                }
                out
            }
        };
        let t = Tensor::new(rows, cols, out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op(a, b, kind), rg))
    }

    /// Elementwise sum; `b` may broadcast as a row, a column, or a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise (Hadamard) product with the same broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| x * s).collect();
        let t = Tensor::new(v.rows(), v.cols(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, s), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(v.rows(), v.cols(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, op, rg)
    }

    /// `max(x, 0)`; the subgradient at zero is zero.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| if x > T::zero() { x } else { T::zero() },
            Op::Relu(a),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    /// `ln(sigmoid(x))`, finite for any finite `x`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| {
                let m = if x < T::zero() { x } else { T::zero() };
                m - (T::one() + (-x.abs()).exp()).ln()
            },
            Op::LogSigmoid(a),
        )
    }

    /// Concatenates along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return shape_err("concat", "no inputs");
        }
        if axis > 1 {
            return shape_err("concat", format!("axis {axis}"));
        }
        let shapes: Vec<[usize; 2]> = inputs.iter().map(|&v| self.shape(v)).collect();
        let keep = 1 - axis;
        if shapes.iter().any(|s| s[keep] != shapes[0][keep]) {
            return shape_err("concat", format!("{shapes:?} along axis {axis}"));
        }
        let total: usize = shapes.iter().map(|s| s[axis]).sum();
        let t = if axis == 0 {
            let mut data = Vec::with_capacity(total * shapes[0][1]);
            for &v in inputs {
                data.extend_from_slice(self.value(v).data());
            }
            Tensor::new(total, shapes[0][1], data)?
        } else {
            let rows = shapes[0][0];
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &v in inputs {
                    data.extend_from_slice(self.value(v).row(r));
                }
            }
            Tensor::new(rows, total, data)?
        };
        let rg = self.rg(inputs);
        Ok(self.push(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        if axis > 1 {
            return shape_err("slice", format!("axis {axis}"));
        }
        let extent = if axis == 0 { rows } else { cols };
        if start + len > extent {
            return Err(AdError::Index {
                op: "slice",
                index: start + len,
                extent,
            });
        }
        let v = self.value(a);
        let t = if axis == 0 {
            Tensor::new(
                len,
                cols,
                v.data()[start * cols..(start + len) * cols].to_vec(),
            )?
        } else {
            let mut data = Vec::with_capacity(rows * len);
            for r in 0..rows {
                data.extend_from_slice(&v.row(r)[start..start + len]);
            }
            Tensor::new(rows, len, data)?
        };
        let rg = self.rg(&[a]);
        Ok(self.push(
            t,
            Op::Slice {
                input: a,
                axis,
                start,
            },
            rg,
        ))
    }

    /// Sum of all entries (`None`), over rows (`Some(0)`, giving `1 x n`),
    /// or over columns (`Some(1)`, giving `m x 1`).
    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        let v = self.value(a);
        let t = match axis {
            None => Tensor::scalar(v.data().iter().copied().sum()),
            Some(0) => {
                let mut out = vec![T::zero(); cols];
                for r in 0..rows {
                    for (o, &x) in out.iter_mut().zip(v.row(r)) {
                        *o += x;
                    }
                }
                Tensor::new(1, cols, out)?
            }
            Some(1) => {
                let out = (0..rows).map(|r| v.row(r).iter().copied().sum()).collect();
                Tensor::new(rows, 1, out)?
            }
            Some(ax) => return shape_err("sum", format!("axis {ax}")),
        };
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Sum { input: a, axis }, rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let s = self.sum(a, None)?;
        Ok(self.scale(s, T::from_f64(1.0 / n.max(1) as f64)))
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(AdError::Index {
                op: "gather",
                index: bad,
                extent: rows,
            });
        }
        let v = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(v.row(i));
        }
        let t = Tensor::new(indices.len(), cols, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(
            t,
            Op::Gather {
                input: a,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Sums rows into `n_segments` buckets. Rows are accumulated in index
    /// order, so the result is deterministic for a fixed input.
    pub fn segment_sum(&mut self, a: Var, segment_ids: &[usize], n_segments: usize) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        if segment_ids.len() != rows {
            return shape_err(
                "segment_sum",
                format!("{} ids for {rows} rows", segment_ids.len()),
            );
        }
        if let Some(&bad) = segment_ids.iter().find(|&&s| s >= n_segments) {
            return Err(AdError::Index {
                op: "segment_sum",
                index: bad,
                extent: n_segments,
            });
        }
        let v = self.value(a);
        let mut out = vec![T::zero(); n_segments * cols];
        for (r, &s) in segment_ids.iter().enumerate() {
            let dst = &mut out[s * cols..(s + 1) * cols];
            for (o, &x) in dst.iter_mut().zip(v.row(r)) {
                *o += x;
            }
        }
        let t = Tensor::new(n_segments, cols, out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(
            t,
            Op::SegmentSum {
                input: a,
                segments: segment_ids.to_vec(),
            },
            rg,
        ))
    }

    /// Row-wise `x / max(|x|, eps)`.
    pub fn l2_normalize(&mut self, a: Var, eps: T) -> Var {
        let v = self.value(a);
        let cols = v.cols();
        let mut data = Vec::with_capacity(v.len());
        for r in 0..v.rows() {
            let row = v.row(r);
            let n = row_norm(row).max(eps);
            data.extend(row.iter().map(|&x| x / n));
        }
        let t = Tensor::new(v.rows(), cols, data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, Op::L2Normalize { input: a, eps }, rg)
    }

    /// Euclidean norm of every row, as an `m x 1` column. The gradient at a
    /// zero row is taken as zero.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let data = (0..v.rows()).map(|r| row_norm(v.row(r))).collect();
        let t = Tensor::new(v.rows(), 1, data).expect("column");
        let rg = self.rg(&[a]);
        self.push(t, Op::RowNorm(a), rg)
    }

    /// Maps quaternion rows `(w, x, y, z)` to row-major 3x3 rotation matrices
    /// (`m x 9`). Inputs are assumed unit-norm.
    pub fn quat_to_rotation(&mut self, q: Var) -> Result<Var> {
        let [rows, cols] = self.shape(q);
        if cols != 4 {
            return shape_err(
                "quat_to_rotation",
                format!("expected m x 4, got {rows}x{cols}"),
            );
        }
        let v = self.value(q);
        let mut data = Vec::with_capacity(rows * 9);
        for r in 0..rows {
            let q = v.row(r);
            data.extend_from_slice(&quat_rotation(q[0], q[1], q[2], q[3]));
        }
        let t = Tensor::new(rows, 9, data)?;
        let rg = self.rg(&[q]);
        Ok(self.push(t, Op::QuatToRotation(q), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let [rows, cols] = v.shape();
        let mut data = vec![T::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = v.data()[r * cols + c];
            }
        }
        let t = Tensor::new(cols, rows, data).expect("transpose");
        let rg = self.rg(&[a]);
        self.push(t, Op::Transpose(a), rg)
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let v = self.value(a);
        if rows * cols != v.len() {
            return shape_err("reshape", format!("{:?} -> {rows}x{cols}", v.shape()));
        }
        let t = Tensor::new(rows, cols, v.data().to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Unfolds `kernel x kernel` neighborhoods into rows, zero-padded.
    /// Output is `(batch * out_h * out_w) x (kernel * kernel * channels)`
    /// with columns ordered `(ky, kx, channel)`.
    pub fn im2col(&mut self, a: Var, geom: ConvGeometry) -> Result<Var> {
        let [rows, cols] = self.shape(a);
        if rows != geom.batch * geom.height * geom.width || cols != geom.channels {
            return shape_err("im2col", format!("{rows}x{cols} vs {geom:?}"));
        }
        if geom.stride == 0 || geom.kernel == 0 || geom.height + 2 * geom.pad < geom.kernel {
            return shape_err("im2col", format!("degenerate geometry {geom:?}"));
        }
        let (oh, ow, pl) = (geom.out_height(), geom.out_width(), geom.patch_len());
        let v = self.value(a).data();
        let mut out = vec![T::zero(); geom.batch * oh * ow * pl];
        for_each_tap(geom, |dst_row, tap, src_row| {
            let c = geom.channels;
            let dst = &mut out[dst_row * pl + tap * c..dst_row * pl + (tap + 1) * c];
            dst.copy_from_slice(&v[src_row * c..(src_row + 1) * c]);
        });
        let t = Tensor::new(geom.batch * oh * ow, pl, out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Im2Col { input: a, geom }, rg))
    }

    // ---- reverse sweep ------------------------------------------------------

    /// Propagates d(loss)/d(node) to every recorded node that requires a
    /// gradient. `loss` must be `1 x 1`. Gradients of intermediate nodes are
    /// released as soon as they have been propagated; only leaves (and the
    /// loss itself) keep theirs.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check_index("backward", loss)?;
        let [r, c] = self.shape(loss);
        if r != 1 || c != 1 {
            return Err(AdError::NonScalarLoss { rows: r, cols: c });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
            if idx == loss.0 {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let da = matmul_raw(g, out.shape(), false, vb.data(), vb.shape(), true);
                    self.accumulate(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let db = matmul_raw(va.data(), va.shape(), true, g, out.shape(), false);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b, kind) | Op::Sub(a, b, kind) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.to_vec());
                }
                if self.requires_grad(*b) {
                    let db = reduce_broadcast(g, out.shape(), *kind, |x, _| x * sign);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Mul(a, b, kind) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let cols = out.cols();
                if self.requires_grad(*a) {
                    let da = g
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| gi * vb[bcast_index(*kind, i / cols, i % cols, cols)])
                        .collect();
                    self.accumulate(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let db = reduce_broadcast(g, out.shape(), *kind, |gi, i| gi * va[i]);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Scale(a, s) => {
                let da = g.iter().map(|&x| x * *s).collect();
                self.accumulate(grads, *a, da);
            }
            Op::Relu(a) => {
                let da = g
                    .iter()
                    .zip(out.data())
                    .map(|(&gi, &y)| if y > T::zero() { gi } else { T::zero() })
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::Sigmoid(a) => {
                let da = g
                    .iter()
                    .zip(out.data())
                    .map(|(&gi, &y)| gi * y * (T::one() - y))
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::Log(a) => {
                let da = g
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(&gi, &x)| gi / x)
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::LogSigmoid(a) => {
                let da = g
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(&gi, &x)| gi * sigmoid(-x))
                    .collect();
                self.accumulate(grads, *a, da);
            }
            Op::Concat { inputs, axis } => {
                let cols = out.cols();
                let mut offset = 0;
                for &v in inputs {
                    let [vr, vc] = self.shape(v);
                    if self.requires_grad(v) {
                        let part = if *axis == 0 {
                            g[offset * cols..(offset + vr) * cols].to_vec()
                        } else {
                            let mut p = Vec::with_capacity(vr * vc);
                            for r in 0..vr {
                                p.extend_from_slice(&g[r * cols + offset..r * cols + offset + vc]);
                            }
                            p
                        };
                        self.accumulate(grads, v, part);
                    }
                    offset += if *axis == 0 { vr } else { vc };
                }
            }
            Op::Slice { input, axis, start } => {
                let [rows, cols] = self.shape(*input);
                let mut da = vec![T::zero(); rows * cols];
                if *axis == 0 {
                    da[start * cols..start * cols + g.len()].copy_from_slice(g);
                } else {
                    let len = out.cols();
                    for r in 0..rows {
                        da[r * cols + start..r * cols + start + len]
                            .copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                }
                self.accumulate(grads, *input, da);
            }
            Op::Sum { input, axis } => {
                let [rows, cols] = self.shape(*input);
                let da = match axis {
                    None => vec![g[0]; rows * cols],
                    Some(0) => (0..rows * cols).map(|i| g[i % cols]).collect(),
                    _ => (0..rows * cols).map(|i| g[i / cols]).collect(),
                };
                self.accumulate(grads, *input, da);
            }
            Op::Gather { input, indices } => {
                let [rows, cols] = self.shape(*input);
                let mut da = vec![T::zero(); rows * cols];
                for (k, &i) in indices.iter().enumerate() {
                    for c in 0..cols {
                        da[i * cols + c] += g[k * cols + c];
                    }
                }
                self.accumulate(grads, *input, da);
            }
            Op::SegmentSum { input, segments } => {
                let cols = out.cols();
                let mut da = Vec::with_capacity(segments.len() * cols);
                for &s in segments {
                    da.extend_from_slice(&g[s * cols..(s + 1) * cols]);
                }
                self.accumulate(grads, *input, da);
            }
            Op::L2Normalize { input, eps } => {
                let x = self.value(*input);
                let cols = x.cols();
                let mut da = Vec::with_capacity(x.len());
                for r in 0..x.rows() {
                    let row = x.row(r);
                    let gr = &g[r * cols..(r + 1) * cols];
                    let n = row_norm(row);
                    if n > *eps {
                        let y = out.row(r);
                        let dot: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        da.extend(gr.iter().zip(y).map(|(&gi, &yi)| (gi - yi * dot) / n));
                    } else {
                        da.extend(gr.iter().map(|&gi| gi / *eps));
                    }
                }
                self.accumulate(grads, *input, da);
            }
            Op::RowNorm(a) => {
                let x = self.value(*a);
                let cols = x.cols();
                let mut da = Vec::with_capacity(x.len());
                for r in 0..x.rows() {
                    let n = out.data()[r];
                    if n > T::zero() {
                        da.extend(x.row(r).iter().map(|&xi| g[r] * xi / n));
                    } else {
                        da.extend(std::iter::repeat_n(T::zero(), cols));
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::QuatToRotation(q) => {
                let x = self.value(*q);
                let mut da = Vec::with_capacity(x.len());
                for r in 0..x.rows() {
                    let q = x.row(r);
                    let jac = quat_rotation_jacobian(q[0], q[1], q[2], q[3]);
                    let gr = &g[r * 9..(r + 1) * 9];
                    for comp in 0..4 {
                        da.push((0..9).map(|e| gr[e] * jac[e][comp]).sum());
                    }
                }
                self.accumulate(grads, *q, da);
            }
            Op::Transpose(a) => {
                let [rows, cols] = out.shape();
                let mut da = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        da[c * rows + r] = g[r * cols + c];
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::Reshape(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::Im2Col { input, geom } => {
                let c = geom.channels;
                let pl = geom.patch_len();
                let mut da = vec![T::zero(); geom.batch * geom.height * geom.width * c];
                for_each_tap(*geom, |dst_row, tap, src_row| {
                    let src = &g[dst_row * pl + tap * c..dst_row * pl + (tap + 1) * c];
                    for (d, &s) in da[src_row * c..(src_row + 1) * c].iter_mut().zip(src) {
                        *d += s;
                    }
                });
                self.accumulate(grads, *input, da);
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contribution: Vec<T>) {
        if !self.requires_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contribution) {
                    *e += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Raw gradient buffer for `v`, if it received one.
    pub fn get_data(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v` shaped like its value, or `None` when `v` does not
    /// influence the loss.
    pub fn get(&self, tape: &Tape<T>, v: Var) -> Option<Tensor<T>> {
        let [r, c] = tape.shape(v);
        self.get_data(v)
            .map(|d| Tensor::new(r, c, d.to_vec()).expect("gradient shape matches value"))
    }

    /// Like [`Gradients::get`] but yields zeros for untouched inputs.
    pub fn get_or_zero(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        let [r, c] = tape.shape(v);
        self.get(tape, v).unwrap_or_else(|| Tensor::zeros(r, c))
    }
}

#[inline]
fn bcast_index(kind: Broadcast, r: usize, c: usize, cols: usize) -> usize {
    match kind {
        Broadcast::Same => r * cols + c,
        Broadcast::Row => c,
        Broadcast::Col => r,
        Broadcast::Scalar => 0,
    }
}

/// Sums `f(g_i, i)` back onto the broadcast operand's shape.
fn reduce_broadcast<T: Real>(
    g: &[T],
    shape: [usize; 2],
    kind: Broadcast,
    f: impl Fn(T, usize) -> T,
) -> Vec<T> {
    let [rows, cols] = shape;
    let len = match kind {
        Broadcast::Same => rows * cols,
        Broadcast::Row => cols,
        Broadcast::Col => rows,
        Broadcast::Scalar => 1,
    };
    let mut out = vec![T::zero(); len];
    match kind {
        Broadcast::Same => {
            for (i, (o, &gi)) in out.iter_mut().zip(g).enumerate() {
                *o = f(gi, i);
            }
        }
        Broadcast::Row => {
            for r in 0..rows {
                let base = r * cols;
                for (c, o) in out.iter_mut().enumerate() {
                    *o += f(g[base + c], base + c);
                }
            }
        }
        _ => {
            for r in 0..rows {
                for c in 0..cols {
                    let i = r * cols + c;
                    out[bcast_index(kind, r, c, cols)] += f(g[i], i);
                }
            }
        }
    }
    out
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn row_norm<T: Real>(row: &[T]) -> T {
    row.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Calls `f(dst_row, tap, src_row)` for every in-bounds kernel tap.
fn for_each_tap(geom: ConvGeometry, mut f: impl FnMut(usize, usize, usize)) {
    let (oh, ow) = (geom.out_height(), geom.out_width());
    for b in 0..geom.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let dst_row = (b * oh + oy) * ow + ox;
                for ky in 0..geom.kernel {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    if iy < 0 || iy >= geom.height as isize {
                        continue;
                    }
                    for kx in 0..geom.kernel {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        if ix < 0 || ix >= geom.width as isize {
                            continue;
                        }
                        let src_row = (b * geom.height + iy as usize) * geom.width + ix as usize;
                        f(dst_row, ky * geom.kernel + kx, src_row);
                    }
                }
            }
        }
    }
}

fn quat_rotation<T: Real>(w: T, x: T, y: T, z: T) -> [T; 9] {
    let one = T::one();
    let two = one + one;
    [
        one - two * (y * y + z * z),
        two * (x * y - w * z),
        two * (x * z + w * y),
        two * (x * y + w * z),
        one - two * (x * x + z * z),
        two * (y * z - w * x),
        two * (x * z - w * y),
        two * (y * z + w * x),
        one - two * (x * x + y * y),
    ]
}

/// `jac[e][c]` = d(R entry e) / d(component c) with components `(w, x, y, z)`.
fn quat_rotation_jacobian<T: Real>(w: T, x: T, y: T, z: T) -> [[T; 4]; 9] {
    let zero = T::zero();
    let two = T::one() + T::one();
    let four = two + two;
    [
        [zero, zero, -four * y, -four * z],
        [-two * z, two * y, two * x, -two * w],
        [two * y, two * z, two * w, two * x],
        [two * z, two * y, two * x, two * w],
        [zero, -four * x, zero, -four * z],
        [-two * x, -two * w, two * z, two * y],
        [-two * y, two * z, -two * w, two * x],
        [two * x, two * w, two * z, two * y],
        [zero, -four * x, -four * y, zero],
    ]
}
