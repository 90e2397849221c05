//! Wengert-list tape: ops append nodes in execution order, so reverse
//! iteration is a valid topological order for backpropagation.

use super::ops::{
    conv3d_backward, conv3d_forward, conv_geometry, dense_backward, dense_forward, Padding,
};
use super::{dims5, Scalar, Tensor};
use crate::error::{CoreError, Result};

pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardMode {
    Standard,
    /// ReLU passes gradient only where its input was positive *and* the
    /// incoming gradient is positive; everything else is unchanged.
    Guided,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Running statistics of one batch-norm layer. Owned by the caller so the
/// tape itself stays immutable between forward passes.
#[derive(Clone, Debug)]
pub struct BnState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub updates: u64,
}

impl<T: Scalar> BnState<T> {
    pub fn new(channels: usize, momentum: T) -> Self {
        Self {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum,
            updates: 0,
        }
    }

    pub fn cast<U: Scalar>(&self) -> BnState<U> {
        BnState {
            running_mean: self.running_mean.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
            running_var: self.running_var.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
            momentum: U::from_f64(self.momentum.to_f64()),
            updates: self.updates,
        }
    }
}

enum Op<T> {
    Leaf,
    Conv3 {
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: Padding,
    },
    Dense {
        x: TensorId,
        w: TensorId,
        b: TensorId,
    },
    BatchNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        /// In infer mode the normalization statistics are constants, so the
        /// input gradient has no batch-coupling terms.
        infer: bool,
    },
    Relu {
        x: TensorId,
    },
    AvgPool2 {
        x: TensorId,
    },
    GlobalAvgPool {
        x: TensorId,
    },
    Add {
        a: TensorId,
        b: TensorId,
    },
    Scale {
        x: TensorId,
        s: T,
    },
    ConcatChannels {
        parts: Vec<TensorId>,
    },
    MseLoss {
        pred: TensorId,
        target: TensorId,
    },
    SumAll {
        x: TensorId,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    needs_grad: bool,
    grad: Option<Vec<T>>,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn take_grad(&mut self, id: TensorId) -> Option<Vec<T>> {
        self.nodes[id.0].grad.take()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> TensorId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> TensorId {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> TensorId {
        let needs_grad = requires_grad
            || match &op {
                Op::Leaf => false,
                _ => self.operands(&op).iter().any(|id| self.nodes[id.0].needs_grad),
            };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            needs_grad,
            grad: None,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn operands(&self, op: &Op<T>) -> Vec<TensorId> {
        match op {
            Op::Leaf => vec![],
            Op::Conv3 { x, w, b, .. } | Op::Dense { x, w, b } => vec![*x, *w, *b],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Relu { x }
            | Op::AvgPool2 { x }
            | Op::GlobalAvgPool { x }
            | Op::Scale { x, .. }
            | Op::SumAll { x } => vec![*x],
            Op::Add { a, b } => vec![*a, *b],
            Op::ConcatChannels { parts } => parts.clone(),
            Op::MseLoss { pred, target } => vec![*pred, *target],
        }
    }

    fn check_finite(&self, id: TensorId, ctx: &'static str) -> Result<()> {
        if !self.nodes[id.0].value.is_finite() {
            return Err(CoreError::NonFinite(ctx));
        }
        Ok(())
    }

    // ── forward ops ─────────────────────────────────────────────────

    pub fn conv3d(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: Padding,
    ) -> Result<TensorId> {
        self.check_finite(x, "conv3d")?;
        let geom = conv_geometry(self.value(x), self.value(w), self.value(b), stride, pad)?;
        let out = conv3d_forward(self.value(x), self.value(w), self.value(b), &geom);
        Ok(self.push(out, Op::Conv3 { x, w, b, stride, pad }, false))
    }

    /// Planar convolution over a volume: identical to [`Tape::conv3d`] but
    /// insists the kernel has z-extent 1, making slice-wise networks explicit.
    pub fn conv2d_slicewise(
        &mut self,
        x: TensorId,
        w: TensorId,
        b: TensorId,
        stride: usize,
        pad: Padding,
    ) -> Result<TensorId> {
        let kdims = dims5(self.value(w).shape(), "conv2d_slicewise kernel")?;
        if kdims[4] != 1 {
            return Err(CoreError::InvalidArg {
                ctx: "conv2d_slicewise",
                msg: format!("kernel z-extent must be 1, got {}", kdims[4]),
            });
        }
        self.conv3d(x, w, b, stride, pad)
    }

    pub fn dense(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_finite(x, "dense")?;
        let out = dense_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(out, Op::Dense { x, w, b }, false))
    }

    pub fn batch_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        state: &mut BnState<T>,
        mode: BnMode,
    ) -> Result<TensorId> {
        let shape = self.value(x).shape().to_vec();
        let channels = if shape.len() >= 2 {
            shape[1]
        } else {
            return Err(CoreError::ShapeMismatch {
                ctx: "batch_norm",
                expected: "rank >= 2 with channel axis 1".into(),
                got: format!("{:?}", shape),
            });
        };
        if self.value(gamma).shape() != [channels] || self.value(beta).shape() != [channels] {
            return Err(CoreError::ShapeMismatch {
                ctx: "batch_norm",
                expected: format!("gamma/beta [{}]", channels),
                got: format!(
                    "{:?} / {:?}",
                    self.value(gamma).shape(),
                    self.value(beta).shape()
                ),
            });
        }
        if state.running_mean.len() != channels {
            return Err(CoreError::ShapeMismatch {
                ctx: "batch_norm state",
                expected: format!("{} channels", channels),
                got: format!("{}", state.running_mean.len()),
            });
        }

        let batch = shape[0];
        let spatial: usize = shape[2..].iter().product::<usize>().max(1);
        let per_sample = channels * spatial;
        let m = batch * spatial;
        let eps = T::from_f64(BN_EPS);

        let (mean, inv_std) = match mode {
            BnMode::Train => {
                let xv = self.value(x).data();
                let mut mean = vec![T::zero(); channels];
                let mut var = vec![T::zero(); channels];
                for c in 0..channels {
                    let mut acc = T::zero();
                    for bi in 0..batch {
                        let base = bi * per_sample + c * spatial;
                        for &v in &xv[base..base + spatial] {
                            acc = acc + v;
                        }
                    }
                    mean[c] = acc / T::from_f64(m as f64);
                }
                for c in 0..channels {
                    let mu = mean[c];
                    let mut acc = T::zero();
                    for bi in 0..batch {
                        let base = bi * per_sample + c * spatial;
                        for &v in &xv[base..base + spatial] {
                            let d = v - mu;
                            acc = acc + d * d;
                        }
                    }
                    var[c] = acc / T::from_f64(m as f64);
                }
                let mom = state.momentum;
                for c in 0..channels {
                    state.running_mean[c] = mom * state.running_mean[c] + (T::one() - mom) * mean[c];
                    state.running_var[c] = mom * state.running_var[c] + (T::one() - mom) * var[c];
                }
                state.updates += 1;
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                (mean, inv_std)
            }
            BnMode::Infer => {
                if state.updates == 0 {
                    return Err(CoreError::EmptyBatchNormStats);
                }
                let inv_std: Vec<T> = state
                    .running_var
                    .iter()
                    .map(|&v| T::one() / (v + eps).sqrt())
                    .collect();
                (state.running_mean.clone(), inv_std)
            }
        };

        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for bi in 0..batch {
            for c in 0..channels {
                let base = bi * per_sample + c * spatial;
                let (mu, is, g, be) = (mean[c], inv_std[c], gv[c], bv[c]);
                for i in base..base + spatial {
                    let h = (xv[i] - mu) * is;
                    xhat[i] = h;
                    out[i] = g * h + be;
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                infer: mode == BnMode::Infer,
            },
            false,
        ))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let out: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let shape = self.value(x).shape().to_vec();
        self.push(
            Tensor { shape, data: out },
            Op::Relu { x },
            false,
        )
    }

    pub fn avg_pool2(&mut self, x: TensorId) -> Result<TensorId> {
        let [b, c, xd, yd, zd] = dims5(self.value(x).shape(), "avg_pool")?;
        if xd % 2 != 0 || yd % 2 != 0 || zd % 2 != 0 {
            return Err(CoreError::InvalidArg {
                ctx: "avg_pool",
                msg: format!("spatial dims must be even, got {}x{}x{}", xd, yd, zd),
            });
        }
        let (ox, oy, oz) = (xd / 2, yd / 2, zd / 2);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); b * c * ox * oy * oz];
        let inv8 = T::from_f64(0.125);
        let mut idx = 0usize;
        for bc in 0..b * c {
            let src = &xv[bc * xd * yd * zd..];
            for i in 0..ox {
                for j in 0..oy {
                    for k in 0..oz {
                        let mut acc = T::zero();
                        for di in 0..2 {
                            for dj in 0..2 {
                                for dk in 0..2 {
                                    acc = acc
                                        + src[((2 * i + di) * yd + (2 * j + dj)) * zd + 2 * k + dk];
                                }
                            }
                        }
                        out[idx] = acc * inv8;
                        idx += 1;
                    }
                }
            }
        }
        let value = Tensor::new(&[b, c, ox, oy, oz], out)?;
        Ok(self.push(value, Op::AvgPool2 { x }, false))
    }

    pub fn global_avg_pool(&mut self, x: TensorId) -> Result<TensorId> {
        let [b, c, xd, yd, zd] = dims5(self.value(x).shape(), "global_avg_pool")?;
        let spatial = xd * yd * zd;
        let xv = self.value(x).data();
        let inv = T::from_f64(1.0 / spatial as f64);
        let mut out = vec![T::zero(); b * c];
        for (i, chunk) in xv.chunks(spatial).enumerate() {
            out[i] = chunk.iter().fold(T::zero(), |a, &v| a + v) * inv;
        }
        let value = Tensor::new(&[b, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool { x }, false))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(CoreError::ShapeMismatch {
                ctx: "add",
                expected: format!("{:?}", self.value(a).shape()),
                got: format!("{:?}", self.value(b).shape()),
            });
        }
        let data: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&u, &v)| u + v)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor { shape, data }, Op::Add { a, b }, false))
    }

    pub fn scale(&mut self, x: TensorId, s: T) -> TensorId {
        let data: Vec<T> = self.value(x).data().iter().map(|&v| v * s).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Tensor { shape, data }, Op::Scale { x, s }, false)
    }

    pub fn concat_channels(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(CoreError::InvalidArg {
                ctx: "concat_channels",
                msg: "no inputs".into(),
            });
        }
        let first = dims5(self.value(parts[0]).shape(), "concat_channels")?;
        let mut c_total = 0usize;
        for &p in parts {
            let d = dims5(self.value(p).shape(), "concat_channels")?;
            if d[0] != first[0] || d[2..] != first[2..] {
                return Err(CoreError::ShapeMismatch {
                    ctx: "concat_channels",
                    expected: format!("batch/spatial {:?}", first),
                    got: format!("{:?}", d),
                });
            }
            c_total += d[1];
        }
        let (b, sx, sy, sz) = (first[0], first[2], first[3], first[4]);
        let spatial = sx * sy * sz;
        let mut out = vec![T::zero(); b * c_total * spatial];
        for bi in 0..b {
            let mut c_off = 0usize;
            for &p in parts {
                let pc = self.value(p).shape()[1];
                let src = &self.value(p).data()[bi * pc * spatial..(bi + 1) * pc * spatial];
                let dst_base = bi * c_total * spatial + c_off * spatial;
                out[dst_base..dst_base + pc * spatial].copy_from_slice(src);
                c_off += pc;
            }
        }
        let value = Tensor::new(&[b, c_total, sx, sy, sz], out)?;
        Ok(self.push(
            value,
            Op::ConcatChannels {
                parts: parts.to_vec(),
            },
            false,
        ))
    }

    pub fn mse_loss(&mut self, pred: TensorId, target: TensorId) -> Result<TensorId> {
        if self.value(pred).shape() != self.value(target).shape() {
            return Err(CoreError::ShapeMismatch {
                ctx: "mse_loss",
                expected: format!("{:?}", self.value(pred).shape()),
                got: format!("{:?}", self.value(target).shape()),
            });
        }
        let n = self.value(pred).len();
        let mut acc = T::zero();
        for (&p, &t) in self.value(pred).data().iter().zip(self.value(target).data()) {
            let d = p - t;
            acc = acc + d * d;
        }
        let loss = acc / T::from_f64(n as f64);
        Ok(self.push(Tensor::scalar(loss), Op::MseLoss { pred, target }, false))
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let s = self
            .value(x)
            .data()
            .iter()
            .fold(T::zero(), |a, &v| a + v);
        self.push(Tensor::scalar(s), Op::SumAll { x }, false)
    }

    // ── backward ────────────────────────────────────────────────────

    /// Populate gradients of every `requires_grad` tensor reachable from a
    /// scalar loss node.
    pub fn backward(&mut self, loss: TensorId, mode: BackwardMode) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(CoreError::InvalidArg {
                ctx: "backward",
                msg: format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backward_node(i, &gout, mode, &mut grads);
            self.nodes[i].grad = Some(gout);
        }
        // Anything left (leaves processed last in the loop already store
        // their grads above; nothing remains in `grads` for visited nodes).
        Ok(())
    }

    fn backward_node(&self, i: usize, gout: &[T], mode: BackwardMode, grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv3 { x, w, b, stride, pad } => {
                let geom = conv_geometry(
                    self.value(*x),
                    self.value(*w),
                    self.value(*b),
                    *stride,
                    *pad,
                )
                .expect("geometry validated in forward");
                let need_dx = self.nodes[x.0].needs_grad;
                let g = conv3d_backward(self.value(*x), self.value(*w), gout, &geom, need_dx);
                if need_dx {
                    accumulate(grads, *x, &g.dx, self.value(*x).len());
                }
                if self.nodes[w.0].needs_grad {
                    accumulate(grads, *w, &g.dw, self.value(*w).len());
                }
                if self.nodes[b.0].needs_grad {
                    accumulate(grads, *b, &g.db, self.value(*b).len());
                }
            }
            Op::Dense { x, w, b } => {
                let (dx, dw, db) = dense_backward(self.value(*x), self.value(*w), gout);
                if self.nodes[x.0].needs_grad {
                    accumulate(grads, *x, &dx, self.value(*x).len());
                }
                if self.nodes[w.0].needs_grad {
                    accumulate(grads, *w, &dw, self.value(*w).len());
                }
                if self.nodes[b.0].needs_grad {
                    accumulate(grads, *b, &db, self.value(*b).len());
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                infer,
            } => {
                let shape = node.value.shape();
                let (batch, channels) = (shape[0], shape[1]);
                let spatial: usize = shape[2..].iter().product::<usize>().max(1);
                let per_sample = channels * spatial;
                let m = T::from_f64((batch * spatial) as f64);
                let gv = self.value(*gamma).data();

                if self.nodes[beta.0].needs_grad {
                    let mut db = vec![T::zero(); channels];
                    for bi in 0..batch {
                        for c in 0..channels {
                            let base = bi * per_sample + c * spatial;
                            for &g in &gout[base..base + spatial] {
                                db[c] = db[c] + g;
                            }
                        }
                    }
                    accumulate(grads, *beta, &db, channels);
                }
                if self.nodes[gamma.0].needs_grad {
                    let mut dg = vec![T::zero(); channels];
                    for bi in 0..batch {
                        for c in 0..channels {
                            let base = bi * per_sample + c * spatial;
                            for i in base..base + spatial {
                                dg[c] = dg[c] + gout[i] * xhat[i];
                            }
                        }
                    }
                    accumulate(grads, *gamma, &dg, channels);
                }
                if self.nodes[x.0].needs_grad {
                    let mut dx = vec![T::zero(); node.value.len()];
                    if *infer {
                        for bi in 0..batch {
                            for c in 0..channels {
                                let base = bi * per_sample + c * spatial;
                                let k = gv[c] * inv_std[c];
                                for i in base..base + spatial {
                                    dx[i] = gout[i] * k;
                                }
                            }
                        }
                    } else {
                        // Batch statistics contribute to the gradient, so
                        // reduce sum(dxhat) and sum(dxhat * xhat) per channel
                        // first.
                        let mut s1 = vec![T::zero(); channels];
                        let mut s2 = vec![T::zero(); channels];
                        for bi in 0..batch {
                            for c in 0..channels {
                                let base = bi * per_sample + c * spatial;
                                let g = gv[c];
                                for i in base..base + spatial {
                                    let dxh = gout[i] * g;
                                    s1[c] = s1[c] + dxh;
                                    s2[c] = s2[c] + dxh * xhat[i];
                                }
                            }
                        }
                        for bi in 0..batch {
                            for c in 0..channels {
                                let base = bi * per_sample + c * spatial;
                                let (g, is) = (gv[c], inv_std[c]);
                                for i in base..base + spatial {
                                    let dxh = gout[i] * g;
                                    dx[i] = is * (dxh - (s1[c] + xhat[i] * s2[c]) / m);
                                }
                            }
                        }
                    }
                    accumulate(grads, *x, &dx, dx.len());
                }
            }
            Op::Relu { x } => {
                if self.nodes[x.0].needs_grad {
                    let xv = self.value(*x).data();
                    let dx: Vec<T> = xv
                        .iter()
                        .zip(gout)
                        .map(|(&v, &g)| match mode {
                            BackwardMode::Standard => {
                                if v > T::zero() {
                                    g
                                } else {
                                    T::zero()
                                }
                            }
                            BackwardMode::Guided => {
                                if v > T::zero() && g > T::zero() {
                                    g
                                } else {
                                    T::zero()
                                }
                            }
                        })
                        .collect();
                    accumulate(grads, *x, &dx, dx.len());
                }
            }
            Op::AvgPool2 { x } => {
                if self.nodes[x.0].needs_grad {
                    let in_shape = self.value(*x).shape();
                    let (yd, zd) = (in_shape[3], in_shape[4]);
                    let out_shape = node.value.shape();
                    let (ox, oy, oz) = (out_shape[2], out_shape[3], out_shape[4]);
                    let inv8 = T::from_f64(0.125);
                    let mut dx = vec![T::zero(); self.value(*x).len()];
                    let bc = in_shape[0] * in_shape[1];
                    let in_sp = in_shape[2] * yd * zd;
                    let out_sp = ox * oy * oz;
                    for n in 0..bc {
                        let src = &gout[n * out_sp..(n + 1) * out_sp];
                        let dst = &mut dx[n * in_sp..(n + 1) * in_sp];
                        let mut idx = 0usize;
                        for i in 0..ox {
                            for j in 0..oy {
                                for k in 0..oz {
                                    let g = src[idx] * inv8;
                                    idx += 1;
                                    for di in 0..2 {
                                        for dj in 0..2 {
                                            for dk in 0..2 {
                                                dst[((2 * i + di) * yd + (2 * j + dj)) * zd
                                                    + 2 * k
                                                    + dk] = g;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    accumulate(grads, *x, &dx, dx.len());
                }
            }
            Op::GlobalAvgPool { x } => {
                if self.nodes[x.0].needs_grad {
                    let in_shape = self.value(*x).shape();
                    let spatial: usize = in_shape[2..].iter().product();
                    let inv = T::from_f64(1.0 / spatial as f64);
                    let mut dx = vec![T::zero(); self.value(*x).len()];
                    for (n, chunk) in dx.chunks_mut(spatial).enumerate() {
                        let g = gout[n] * inv;
                        chunk.fill(g);
                    }
                    accumulate(grads, *x, &dx, dx.len());
                }
            }
            Op::Add { a, b } => {
                if self.nodes[a.0].needs_grad {
                    accumulate(grads, *a, gout, gout.len());
                }
                if self.nodes[b.0].needs_grad {
                    accumulate(grads, *b, gout, gout.len());
                }
            }
            Op::Scale { x, s } => {
                if self.nodes[x.0].needs_grad {
                    let dx: Vec<T> = gout.iter().map(|&g| g * *s).collect();
                    accumulate(grads, *x, &dx, dx.len());
                }
            }
            Op::ConcatChannels { parts } => {
                let out_shape = node.value.shape();
                let (b, c_total) = (out_shape[0], out_shape[1]);
                let spatial: usize = out_shape[2..].iter().product();
                let mut c_off = 0usize;
                for &p in parts {
                    let pc = self.value(p).shape()[1];
                    if self.nodes[p.0].needs_grad {
                        let mut dp = vec![T::zero(); self.value(p).len()];
                        for bi in 0..b {
                            let src = bi * c_total * spatial + c_off * spatial;
                            let dst = bi * pc * spatial;
                            dp[dst..dst + pc * spatial]
                                .copy_from_slice(&gout[src..src + pc * spatial]);
                        }
                        accumulate(grads, p, &dp, dp.len());
                    }
                    c_off += pc;
                }
            }
            Op::MseLoss { pred, target } => {
                if self.nodes[pred.0].needs_grad {
                    let n = self.value(*pred).len();
                    let coef = gout[0] * T::from_f64(2.0 / n as f64);
                    let dp: Vec<T> = self
                        .value(*pred)
                        .data()
                        .iter()
                        .zip(self.value(*target).data())
                        .map(|(&p, &t)| coef * (p - t))
                        .collect();
                    accumulate(grads, *pred, &dp, n);
                }
            }
            Op::SumAll { x } => {
                if self.nodes[x.0].needs_grad {
                    let n = self.value(*x).len();
                    let dx = vec![gout[0]; n];
                    accumulate(grads, *x, &dx, n);
                }
            }
        }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], id: TensorId, delta: &[T], len: usize) {
    debug_assert_eq!(delta.len(), len);
    match &mut grads[id.0] {
        Some(g) => {
            for (a, &d) in g.iter_mut().zip(delta) {
                *a = *a + d;
            }
        }
        None => grads[id.0] = Some(delta.to_vec()),
    }
}
