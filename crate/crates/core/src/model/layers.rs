//! Parameterized building blocks recorded on a tape.

use hgnn_autodiff::{
    he_uniform, xavier_uniform, BoundParams, ConvGeometry, ParamId, ParamStore, Real, Tape, Tensor,
    Var,
};
use rand::Rng;

use crate::error::Result;

/// Weight initialization family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Followed by a rectifier.
    Relu,
    /// Linear output.
    Linear,
}

/// Affine map `x W + b` with `W: in x out`, `b: 1 x out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        init: Init,
    ) -> Self {
        let w = match init {
            Init::Relu => he_uniform(rng, fan_in, fan_in, fan_out),
            Init::Linear => xavier_uniform(rng, fan_in, fan_out, fan_in, fan_out),
        };
        Self {
            w: store.add(format!("{name}.w"), w),
            b: store.add(format!("{name}.b"), Tensor::zeros(1, fan_out)),
            fan_in,
            fan_out,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(self.w))?;
        Ok(tape.add(y, p.var(self.b))?)
    }

    /// Same map with the input given as column blocks `[x_0, x_1, ...]`:
    /// each block multiplies its own row band of `W`.
    pub fn forward_blocks<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        blocks: &[Var],
    ) -> Result<Var> {
        let w = p.var(self.w);
        let mut start = 0;
        let mut acc: Option<Var> = None;
        for &x in blocks {
            let width = tape.shape(x)[1];
            let band = tape.slice(w, 0, start, width)?;
            start += width;
            let y = tape.matmul(x, band)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, y)?,
                None => y,
            });
        }
        let acc = acc.expect("at least one block");
        Ok(tape.add(acc, p.var(self.b))?)
    }
}

/// Per-row normalization to zero mean and unit mean square, followed by
/// a learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    /// Rows with a centered norm below this are scaled against it instead.
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.g"), Tensor::full(1, dim, T::one())),
            bias: store.add(format!("{name}.b"), Tensor::zeros(1, dim)),
            dim,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let d = self.dim as f64;
        let ones = tape.constant(Tensor::full(self.dim, 1, T::from_f64(1.0 / d)));
        let mean = tape.matmul(x, ones)?;
        let centered = tape.sub(x, mean)?;
        let unit = tape.l2_normalize(centered, T::from_f64(Self::EPS * d.sqrt()));
        let scaled = tape.scale(unit, T::from_f64(d.sqrt()));
        let y = tape.mul(scaled, p.var(self.gain))?;
        Ok(tape.add(y, p.var(self.bias))?)
    }
}

/// Two-layer perceptron `Linear -> relu -> Linear`, optionally followed by
/// a [`LayerNorm`].
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
    pub norm: Option<LayerNorm>,
}

impl Mlp {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        hidden: usize,
        fan_out: usize,
    ) -> Self {
        Self {
            hidden: Linear::new(store, rng, &format!("{name}.0"), fan_in, hidden, Init::Relu),
            out: Linear::new(
                store,
                rng,
                &format!("{name}.1"),
                hidden,
                fan_out,
                Init::Linear,
            ),
            norm: None,
        }
    }

    /// Same as [`Mlp::new`] with a normalized output.
    pub fn normalized<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        hidden: usize,
        fan_out: usize,
    ) -> Self {
        let mut mlp = Self::new(store, rng, name, fan_in, hidden, fan_out);
        mlp.norm = Some(LayerNorm::new(store, &format!("{name}.ln"), fan_out));
        mlp
    }

    fn finish<T: Real>(&self, tape: &mut Tape<T>, p: &BoundParams, h: Var) -> Result<Var> {
        let h = tape.relu(h);
        let y = self.out.forward(tape, p, h)?;
        match &self.norm {
            Some(n) => n.forward(tape, p, y),
            None => Ok(y),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, p, x)?;
        self.finish(tape, p, h)
    }

    /// Applies the first layer to the column blocks of the input, where
    /// block `i` is `rows[i]` gathered from `sources[i]` (`None` = as is).
    /// Equal to `forward` on the concatenated, gathered input, without
    /// materializing it.
    pub fn forward_gathered<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        blocks: &[(Var, Option<&[usize]>)],
    ) -> Result<Var> {
        let w = p.var(self.hidden.w);
        let mut start = 0;
        let mut acc: Option<Var> = None;
        for &(x, rows) in blocks {
            let width = tape.shape(x)[1];
            let band = tape.slice(w, 0, start, width)?;
            start += width;
            let y = tape.matmul(x, band)?;
            let y = match rows {
                Some(idx) => tape.gather(y, idx)?,
                None => y,
            };
            acc = Some(match acc {
                Some(a) => tape.add(a, y)?,
                None => y,
            });
        }
        let h = tape.add(acc.expect("at least one block"), p.var(self.hidden.b))?;
        self.finish(tape, p, h)
    }
}

/// 3x3 convolution + relu over channels-last images.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl Conv {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Self {
        let fan_in = 9 * in_channels;
        Self {
            w: store.add(
                format!("{name}.w"),
                he_uniform(rng, fan_in, fan_in, out_channels),
            ),
            b: store.add(format!("{name}.b"), Tensor::zeros(1, out_channels)),
            in_channels,
            out_channels,
            stride,
        }
    }

    /// `x` is `(batch * size * size) x in_channels`; returns the output and
    /// its spatial size.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        x: Var,
        batch: usize,
        size: usize,
    ) -> Result<(Var, usize)> {
        let geom = ConvGeometry {
            batch,
            height: size,
            width: size,
            channels: self.in_channels,
            kernel: 3,
            stride: self.stride,
            pad: 1,
        };
        let cols = tape.im2col(x, geom)?;
        let y = tape.matmul(cols, p.var(self.w))?;
        let y = tape.add(y, p.var(self.b))?;
        Ok((tape.relu(y), geom.out_height()))
    }
}

/// Convolution stack followed by a linear projection of the flattened map.
#[derive(Clone, Debug)]
pub struct PatchEncoder {
    pub convs: Vec<Conv>,
    pub proj: Linear,
    pub size: usize,
}

impl PatchEncoder {
    /// Two stride-1 convolutions (8, 16 channels) for small patches.
    pub fn local<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        size: usize,
        out: usize,
    ) -> Self {
        let convs = vec![
            Conv::new(store, rng, &format!("{name}.conv0"), 3, 8, 1),
            Conv::new(store, rng, &format!("{name}.conv1"), 8, 16, 1),
        ];
        let proj = Linear::new(
            store,
            rng,
            &format!("{name}.proj"),
            size * size * 16,
            out,
            Init::Linear,
        );
        Self { convs, proj, size }
    }

    /// Three stride-2 convolutions (8, 16, 32 channels).
    pub fn strided<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        size: usize,
        out: usize,
    ) -> Self {
        let convs = vec![
            Conv::new(store, rng, &format!("{name}.conv0"), 3, 8, 2),
            Conv::new(store, rng, &format!("{name}.conv1"), 8, 16, 2),
            Conv::new(store, rng, &format!("{name}.conv2"), 16, 32, 2),
        ];
        let s = (0..3).fold(size, |s, _| (s - 1) / 2 + 1);
        let proj = Linear::new(
            store,
            rng,
            &format!("{name}.proj"),
            s * s * 32,
            out,
            Init::Linear,
        );
        Self { convs, proj, size }
    }

    pub fn out_dim(&self) -> usize {
        self.proj.fan_out
    }

    /// `patches` is `batch x (size * size * 3)`, row-major, channels last.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &BoundParams,
        patches: Var,
    ) -> Result<Var> {
        let [batch, len] = tape.shape(patches);
        if len != self.size * self.size * 3 {
            return Err(crate::error::HgnnError::Encoding(format!(
                "patch of {len} values, expected {}x{}x3",
                self.size, self.size
            )));
        }
        let mut x = tape.reshape(patches, batch * self.size * self.size, 3)?;
        let mut size = self.size;
        for c in &self.convs {
            let (y, s) = c.forward(tape, p, x, batch, size)?;
            x = y;
            size = s;
        }
        let ch = self.convs.last().map(|c| c.out_channels).unwrap_or(3);
        let flat = tape.reshape(x, batch, size * size * ch)?;
        self.proj.forward(tape, p, flat)
    }
}
