//! Define-by-run reverse-mode differentiation over [`DenseArray`] values.
//!
//! A [`Tape`] records every operation of one forward pass in creation order.
//! [`Tape::backward`] then walks the records in exact reverse order and
//! accumulates adjoints into fresh buffers, so a tape can be differentiated
//! any number of times. Tapes are meant to be rebuilt for every forward pass.
//!
//! Only the operations the autoencoder and the latent density estimator need
//! are provided. Binary operations require identical shapes; there is no
//! implicit broadcasting.

use crate::array::DenseArray;
use crate::error::{dim_err, Error, Result};

/// Negative slope of the leaky ReLU used throughout the models.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise functions with exact adjoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pointwise {
    /// Leaky ReLU with slope [`LEAKY_SLOPE`] on the negative side.
    LeakyRelu,
    Tanh,
    Exp,
    Identity,
    Sigmoid,
    Log,
    Square,
}

impl Pointwise {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Pointwise::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Pointwise::Tanh => x.tanh(),
            Pointwise::Exp => x.exp(),
            Pointwise::Identity => x,
            Pointwise::Sigmoid => sigmoid(x),
            Pointwise::Log => x.ln(),
            Pointwise::Square => x * x,
        }
    }

    /// Derivative given the input `x` and the output `y = apply(x)`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Pointwise::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Pointwise::Tanh => 1.0 - y * y,
            Pointwise::Exp => y,
            Pointwise::Identity => 1.0,
            Pointwise::Sigmoid => y * (1.0 - y),
            Pointwise::Log => 1.0 / x,
            Pointwise::Square => 2.0 * x,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Pointwise::LeakyRelu => "leaky_relu",
            Pointwise::Tanh => "tanh",
            Pointwise::Exp => "exp",
            Pointwise::Identity => "identity",
            Pointwise::Sigmoid => "sigmoid",
            Pointwise::Log => "log",
            Pointwise::Square => "square",
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted `log Σ exp(v)`. Returns `-inf` for an empty slice.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if values.len() == 1 {
        return values[0];
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// `log π_k + log N(x; μ_k, σ_k²)` for each component, written into `joint`.
pub(crate) fn mixture_joint(log_pi: &[f64], mu: &[f64], sigma: &[f64], x: f64, joint: &mut [f64]) {
    for (j, out) in joint.iter_mut().enumerate() {
        let u = (x - mu[j]) / sigma[j];
        *out = log_pi[j] - 0.5 * u * u - sigma[j].ln() - HALF_LN_TWO_PI;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Conv {
        input: Var,
        filters: Var,
        bias: Option<Var>,
        dilation: usize,
    },
    Pointwise {
        input: Var,
        kind: Pointwise,
    },
    Binary {
        lhs: Var,
        rhs: Var,
        kind: Binary,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Offset {
        input: Var,
    },
    MulConst {
        input: Var,
        factor: DenseArray,
    },
    LogSoftmax {
        input: Var,
    },
    LogSumExp {
        input: Var,
    },
    MixtureLogLik {
        log_pi: Var,
        mu: Var,
        sigma: Var,
        target: DenseArray,
    },
    Sum {
        input: Var,
    },
    Mean {
        input: Var,
    },
    SwapLastTwo {
        input: Var,
    },
    SliceLast {
        input: Var,
        start: usize,
    },
    Reshape {
        input: Var,
    },
}

struct Node {
    op: Op,
    value: DenseArray,
}

/// Record of one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Empty tape. Non-finite screening follows `debug_assertions`.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Turns NaN/Inf screening at op boundaries on or off.
    pub fn with_finite_checks(mut self, enabled: bool) -> Self {
        self.check_finite = enabled;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &DenseArray {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, op: Op, value: DenseArray, name: &'static str) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input or parameter. Gradients are reported for every leaf.
    pub fn leaf(&mut self, value: DenseArray) -> Result<Var> {
        self.push(Op::Leaf, value, "leaf")
    }

    /// `input [B×I] · weight [I×O] + bias [O]`.
    pub fn affine(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        if x.rank() != 2 || w.rank() != 2 || b.rank() != 1 {
            return Err(dim_err(
                "affine",
                format!("ranks {:?} {:?} {:?}", x.shape(), w.shape(), b.shape()),
            ));
        }
        let (batch, inputs) = (x.shape()[0], x.shape()[1]);
        let outputs = w.shape()[1];
        if w.shape()[0] != inputs || b.shape()[0] != outputs {
            return Err(dim_err(
                "affine",
                format!("input {:?}, weight {:?}, bias {:?}", x.shape(), w.shape(), b.shape()),
            ));
        }
        let mut out = Vec::with_capacity(batch * outputs);
        for _ in 0..batch {
            out.extend_from_slice(b.data());
        }
        gemm(
            batch,
            inputs,
            outputs,
            x.data(),
            (inputs, 1),
            w.data(),
            (outputs, 1),
            &mut out,
        );
        let value = DenseArray::new(vec![batch, outputs], out)?;
        self.push(Op::Affine { input, weight, bias }, value, "affine")
    }

    /// Causal 1-D convolution of `input [B×C×L]` with `filters [C'×C×s]`.
    ///
    /// Tap `j` of a filter reads position `t − (s−1−j)·dilation`; positions
    /// before the start of the sequence read zero. The output keeps length `L`.
    pub fn dilated_causal_conv1d(
        &mut self,
        input: Var,
        filters: Var,
        bias: Option<Var>,
        dilation: usize,
    ) -> Result<Var> {
        if dilation == 0 {
            return Err(Error::Parameter("convolution dilation must be at least 1".into()));
        }
        let x = self.value(input);
        let w = self.value(filters);
        if x.rank() != 3 || w.rank() != 3 || w.shape()[1] != x.shape()[1] {
            return Err(dim_err(
                "dilated_causal_conv1d",
                format!("input {:?}, filters {:?}", x.shape(), w.shape()),
            ));
        }
        let (batch, channels, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (out_channels, width) = (w.shape()[0], w.shape()[2]);
        let mut out = vec![0.0; batch * out_channels * len];
        if let Some(b) = bias {
            let b = self.value(b);
            if b.shape() != [out_channels] {
                return Err(dim_err(
                    "dilated_causal_conv1d",
                    format!("bias {:?} for {out_channels} output channels", b.shape()),
                ));
            }
            for (chunk, &bias) in out.chunks_mut(len).zip(b.data().iter().cycle()) {
                chunk.fill(bias);
            }
        }
        let (xd, wd) = (x.data(), w.data());
        if len < batch {
            // Per output position and tap, with the batch as the row axis:
            // out[:, :, t] += x[:, :, t − shift] · W_jᵀ.
            for j in 0..width {
                let shift = (width - 1 - j) * dilation;
                for t in shift..len {
                    gemm_strided(
                        batch,
                        channels,
                        out_channels,
                        &xd[t - shift..],
                        (channels * len, len),
                        &wd[j..],
                        (width, channels * width),
                        &mut out[t..],
                        (out_channels * len, len),
                    );
                }
            }
        } else {
            // Per sample and tap: out[:, shift..] += W_j · x[:, ..len−shift].
            for bi in 0..batch {
                let src = &xd[bi * channels * len..][..channels * len];
                let dst = &mut out[bi * out_channels * len..][..out_channels * len];
                for j in 0..width {
                    let shift = (width - 1 - j) * dilation;
                    if shift >= len {
                        continue;
                    }
                    gemm_strided(
                        out_channels,
                        channels,
                        len - shift,
                        &wd[j..],
                        (channels * width, width),
                        src,
                        (len, 1),
                        &mut dst[shift..],
                        (len, 1),
                    );
                }
            }
        }
        let value = DenseArray::new(vec![batch, out_channels, len], out)?;
        self.push(
            Op::Conv {
                input,
                filters,
                bias,
                dilation,
            },
            value,
            "dilated_causal_conv1d",
        )
    }

    pub fn pointwise(&mut self, kind: Pointwise, input: Var) -> Result<Var> {
        let value = self.value(input).map(|v| kind.apply(v));
        self.push(Op::Pointwise { input, kind }, value, kind.name())
    }

    pub fn leaky_relu(&mut self, input: Var) -> Result<Var> {
        self.pointwise(Pointwise::LeakyRelu, input)
    }

    pub fn exp(&mut self, input: Var) -> Result<Var> {
        self.pointwise(Pointwise::Exp, input)
    }

    pub fn ln(&mut self, input: Var) -> Result<Var> {
        self.pointwise(Pointwise::Log, input)
    }

    pub fn square(&mut self, input: Var) -> Result<Var> {
        self.pointwise(Pointwise::Square, input)
    }

    fn binary(&mut self, lhs: Var, rhs: Var, kind: Binary) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(dim_err(
                "binary",
                format!("{kind:?} of {:?} and {:?}", a.shape(), b.shape()),
            ));
        }
        let f = match kind {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
            Binary::Div => |x: f64, y: f64| x / y,
        };
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = DenseArray::new(a.shape().to_vec(), data)?;
        self.push(Op::Binary { lhs, rhs, kind }, value, "binary")
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary(lhs, rhs, Binary::Add)
    }

    pub fn sub(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary(lhs, rhs, Binary::Sub)
    }

    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary(lhs, rhs, Binary::Mul)
    }

    pub fn div(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.binary(lhs, rhs, Binary::Div)
    }

    /// `input · factor`.
    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let value = self.value(input).map(|v| v * factor);
        self.push(Op::Scale { input, factor }, value, "scale")
    }

    /// `input + amount`.
    pub fn offset(&mut self, input: Var, amount: f64) -> Result<Var> {
        let value = self.value(input).map(|v| v + amount);
        self.push(Op::Offset { input }, value, "offset")
    }

    /// Elementwise product with a constant array. No gradient flows into the
    /// constant, and entries multiplied by an exact zero receive exactly zero.
    pub fn mul_const(&mut self, input: Var, factor: DenseArray) -> Result<Var> {
        let x = self.value(input);
        if x.shape() != factor.shape() {
            return Err(dim_err("mul_const", format!("{:?} vs {:?}", x.shape(), factor.shape())));
        }
        let data = x.data().iter().zip(factor.data()).map(|(a, b)| a * b).collect();
        let value = DenseArray::new(x.shape().to_vec(), data)?;
        self.push(Op::MulConst { input, factor }, value, "mul_const")
    }

    /// `input − logsumexp(input)` along the last axis.
    pub fn log_softmax(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let k = last_dim(x, "log_softmax")?;
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(k) {
            let lse = logsumexp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let value = DenseArray::new(x.shape().to_vec(), data)?;
        self.push(Op::LogSoftmax { input }, value, "log_softmax")
    }

    /// Reduces the last axis with a max-shifted log-sum-exp.
    pub fn logsumexp(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let k = last_dim(x, "logsumexp")?;
        let data = x.data().chunks(k).map(logsumexp).collect();
        let shape = x.shape()[..x.rank() - 1].to_vec();
        let value = DenseArray::new(shape, data)?;
        self.push(Op::LogSumExp { input }, value, "logsumexp")
    }

    /// Log-density of `target [..]` under one-dimensional Gaussian mixtures
    /// with log-weights `log_pi`, means `mu` and scales `sigma`, each
    /// `[..×K]`: `log Σ_k π_k N(target; μ_k, σ_k²)` per element of `target`.
    pub fn mixture_loglik(&mut self, log_pi: Var, mu: Var, sigma: Var, target: &DenseArray) -> Result<Var> {
        let (lp, m, sd) = (self.value(log_pi), self.value(mu), self.value(sigma));
        let k = last_dim(lp, "mixture_loglik")?;
        if m.shape() != lp.shape() || sd.shape() != lp.shape() || target.shape() != &lp.shape()[..lp.rank() - 1] {
            return Err(dim_err(
                "mixture_loglik",
                format!(
                    "log_pi {:?}, mu {:?}, sigma {:?}, target {:?}",
                    lp.shape(),
                    m.shape(),
                    sd.shape(),
                    target.shape()
                ),
            ));
        }
        let mut joint = vec![0.0; k];
        let data = (0..target.len())
            .map(|i| {
                let at = i * k;
                mixture_joint(
                    &lp.data()[at..at + k],
                    &m.data()[at..at + k],
                    &sd.data()[at..at + k],
                    target.data()[i],
                    &mut joint,
                );
                logsumexp(&joint)
            })
            .collect();
        let value = DenseArray::new(target.shape().to_vec(), data)?;
        let op = Op::MixtureLogLik {
            log_pi,
            mu,
            sigma,
            target: target.clone(),
        };
        self.push(op, value, "mixture_loglik")
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let value = DenseArray::scalar(self.value(input).sum());
        self.push(Op::Sum { input }, value, "sum")
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if x.is_empty() {
            return Err(Error::Contract("mean of an empty array".into()));
        }
        let value = DenseArray::scalar(x.mean());
        self.push(Op::Mean { input }, value, "mean")
    }

    /// `[A×B×C] → [A×C×B]`.
    pub fn swap_last_two(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if x.rank() != 3 {
            return Err(dim_err(
                "swap_last_two",
                format!("rank-3 input expected, got {:?}", x.shape()),
            ));
        }
        let (a, b, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let value = DenseArray::new(vec![a, c, b], swap_last_two(x.data(), a, b, c))?;
        self.push(Op::SwapLastTwo { input }, value, "swap_last_two")
    }

    /// Keeps `[start, end)` of the last axis.
    pub fn slice_last(&mut self, input: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(input);
        let k = last_dim(x, "slice_last")?;
        if start >= end || end > k {
            return Err(dim_err("slice_last", format!("range {start}..{end} of {k}")));
        }
        let data = x
            .data()
            .chunks(k)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = end - start;
        let value = DenseArray::new(shape, data)?;
        self.push(Op::SliceLast { input, start }, value, "slice_last")
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        self.push(Op::Reshape { input }, value, "reshape")
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<DenseArray>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(DenseArray::filled(loss_value.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &DenseArray, grads: &mut [Option<DenseArray>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Affine { input, weight, bias } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (batch, inputs) = (x.shape()[0], x.shape()[1]);
                let outputs = w.shape()[1];
                // dX = G · Wᵀ
                let mut dx = vec![0.0; batch * inputs];
                gemm(
                    batch,
                    outputs,
                    inputs,
                    gd,
                    (outputs, 1),
                    w.data(),
                    (1, outputs),
                    &mut dx,
                );
                accumulate(grads, *input, x.shape(), dx);
                // dW = Xᵀ · G
                let mut dw = vec![0.0; inputs * outputs];
                gemm(inputs, batch, outputs, x.data(), (1, inputs), gd, (outputs, 1), &mut dw);
                accumulate(grads, *weight, w.shape(), dw);
                let mut db = vec![0.0; outputs];
                for row in gd.chunks(outputs) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                accumulate(grads, *bias, &[outputs], db);
            }
            Op::Conv {
                input,
                filters,
                bias,
                dilation,
            } => {
                let x = self.value(*input);
                let w = self.value(*filters);
                let (batch, channels, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (out_channels, width) = (w.shape()[0], w.shape()[2]);
                let (xd, wd) = (x.data(), w.data());
                let mut dx = vec![0.0; xd.len()];
                let mut dw = vec![0.0; wd.len()];
                if len < batch {
                    for j in 0..width {
                        let shift = (width - 1 - j) * dilation;
                        for t in shift..len {
                            // dx[:, :, t − shift] += g[:, :, t] · W_j
                            gemm_strided(
                                batch,
                                out_channels,
                                channels,
                                &gd[t..],
                                (out_channels * len, len),
                                &wd[j..],
                                (channels * width, width),
                                &mut dx[t - shift..],
                                (channels * len, len),
                            );
                            // dW_j += g[:, :, t]ᵀ · x[:, :, t − shift]
                            gemm_strided(
                                out_channels,
                                batch,
                                channels,
                                &gd[t..],
                                (len, out_channels * len),
                                &xd[t - shift..],
                                (channels * len, len),
                                &mut dw[j..],
                                (channels * width, width),
                            );
                        }
                    }
                } else {
                    for bi in 0..batch {
                        let xs = &xd[bi * channels * len..][..channels * len];
                        let gs = &gd[bi * out_channels * len..][..out_channels * len];
                        let dxs = &mut dx[bi * channels * len..][..channels * len];
                        for j in 0..width {
                            let shift = (width - 1 - j) * dilation;
                            if shift >= len {
                                continue;
                            }
                            let span = len - shift;
                            // dx[:, ..span] += W_jᵀ · g[:, shift..]
                            gemm_strided(
                                channels,
                                out_channels,
                                span,
                                &wd[j..],
                                (width, channels * width),
                                &gs[shift..],
                                (len, 1),
                                dxs,
                                (len, 1),
                            );
                            // dW_j += g[:, shift..] · x[:, ..span]ᵀ
                            gemm_strided(
                                out_channels,
                                span,
                                channels,
                                &gs[shift..],
                                (len, 1),
                                xs,
                                (1, len),
                                &mut dw[j..],
                                (channels * width, width),
                            );
                        }
                    }
                }
                accumulate(grads, *input, x.shape(), dx);
                accumulate(grads, *filters, w.shape(), dw);
                if let Some(b) = bias {
                    let mut db = vec![0.0; out_channels];
                    for (i, chunk) in gd.chunks(len).enumerate() {
                        db[i % out_channels] += chunk.iter().sum::<f64>();
                    }
                    accumulate(grads, *b, &[out_channels], db);
                }
            }
            Op::Pointwise { input, kind } => {
                let x = self.value(*input);
                let dx: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .zip(gd)
                    .map(|((&xv, &yv), &gv)| gv * kind.derivative(xv, yv))
                    .collect();
                accumulate(grads, *input, x.shape(), dx);
            }
            Op::Binary { lhs, rhs, kind } => {
                let a = self.value(*lhs);
                let b = self.value(*rhs);
                let shape = a.shape();
                let (da, db): (Vec<f64>, Vec<f64>) = match kind {
                    Binary::Add => (gd.to_vec(), gd.to_vec()),
                    Binary::Sub => (gd.to_vec(), gd.iter().map(|v| -v).collect()),
                    Binary::Mul => (
                        gd.iter().zip(b.data()).map(|(g, y)| g * y).collect(),
                        gd.iter().zip(a.data()).map(|(g, x)| g * x).collect(),
                    ),
                    Binary::Div => (
                        gd.iter().zip(b.data()).map(|(g, y)| g / y).collect(),
                        gd.iter()
                            .zip(a.data().iter().zip(b.data()))
                            .map(|(g, (x, y))| -g * x / (y * y))
                            .collect(),
                    ),
                };
                accumulate(grads, *lhs, shape, da);
                accumulate(grads, *rhs, shape, db);
            }
            Op::Scale { input, factor } => {
                let dx: Vec<f64> = gd.iter().map(|g| g * factor).collect();
                accumulate(grads, *input, g.shape(), dx);
            }
            Op::Offset { input } => accumulate(grads, *input, g.shape(), gd.to_vec()),
            Op::MulConst { input, factor } => {
                let dx: Vec<f64> = gd.iter().zip(factor.data()).map(|(g, f)| g * f).collect();
                accumulate(grads, *input, g.shape(), dx);
            }
            Op::LogSoftmax { input } => {
                let k = *node.value.shape().last().unwrap();
                let mut dx = Vec::with_capacity(gd.len());
                for (grow, yrow) in gd.chunks(k).zip(node.value.data().chunks(k)) {
                    let total: f64 = grow.iter().sum();
                    dx.extend(grow.iter().zip(yrow).map(|(g, y)| g - y.exp() * total));
                }
                accumulate(grads, *input, node.value.shape(), dx);
            }
            Op::LogSumExp { input } => {
                let x = self.value(*input);
                let k = *x.shape().last().unwrap();
                let mut dx = Vec::with_capacity(x.len());
                for ((xrow, &lse), &gv) in x.data().chunks(k).zip(node.value.data()).zip(gd) {
                    dx.extend(xrow.iter().map(|v| gv * (v - lse).exp()));
                }
                accumulate(grads, *input, x.shape(), dx);
            }
            Op::MixtureLogLik {
                log_pi,
                mu,
                sigma,
                target,
            } => {
                let (lp, m, sd) = (self.value(*log_pi), self.value(*mu), self.value(*sigma));
                let k = *lp.shape().last().unwrap();
                let mut d_pi = vec![0.0; lp.len()];
                let mut d_mu = vec![0.0; lp.len()];
                let mut d_sigma = vec![0.0; lp.len()];
                let mut joint = vec![0.0; k];
                for (i, (&x, (&lse, &gv))) in target.data().iter().zip(node.value.data().iter().zip(gd)).enumerate() {
                    let r = i * k..(i + 1) * k;
                    mixture_joint(
                        &lp.data()[r.clone()],
                        &m.data()[r.clone()],
                        &sd.data()[r.clone()],
                        x,
                        &mut joint,
                    );
                    for (j, &lj) in joint.iter().enumerate() {
                        let at = i * k + j;
                        // Responsibility-weighted derivatives of log N(x; μ, σ²).
                        let w = gv * (lj - lse).exp();
                        let s = sd.data()[at];
                        let u = (x - m.data()[at]) / s;
                        d_pi[at] = w;
                        d_mu[at] = w * u / s;
                        d_sigma[at] = w * (u * u - 1.0) / s;
                    }
                }
                let shape = lp.shape();
                accumulate(grads, *log_pi, shape, d_pi);
                accumulate(grads, *mu, shape, d_mu);
                accumulate(grads, *sigma, shape, d_sigma);
            }
            Op::Sum { input } => {
                let x = self.value(*input);
                accumulate(grads, *input, x.shape(), vec![gd[0]; x.len()]);
            }
            Op::Mean { input } => {
                let x = self.value(*input);
                accumulate(grads, *input, x.shape(), vec![gd[0] / x.len() as f64; x.len()]);
            }
            Op::SwapLastTwo { input } => {
                let s = node.value.shape();
                let x = self.value(*input);
                accumulate(grads, *input, x.shape(), swap_last_two(gd, s[0], s[1], s[2]));
            }
            Op::SliceLast { input, start } => {
                let x = self.value(*input);
                let k = *x.shape().last().unwrap();
                let width = *node.value.shape().last().unwrap();
                let slot = grads[input.0].get_or_insert_with(|| DenseArray::zeros(x.shape()));
                for (drow, grow) in slot.data_mut().chunks_mut(k).zip(gd.chunks(width)) {
                    for (d, g) in drow[*start..*start + width].iter_mut().zip(grow) {
                        *d += g;
                    }
                }
            }
            Op::Reshape { input } => {
                let x = self.value(*input);
                accumulate(grads, *input, x.shape(), gd.to_vec());
            }
        }
        Ok(())
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<DenseArray>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` if the loss does
    /// not depend on it. Only leaves keep their gradients after the sweep.
    pub fn get(&self, var: Var) -> Option<&DenseArray> {
        self.grads[var.0].as_ref()
    }

    /// Like [`get`](Self::get) but returns zeros for unreachable values.
    pub fn wrt(&self, var: Var) -> DenseArray {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| DenseArray::zeros(&self.shapes[var.0]))
    }
}

fn accumulate(grads: &mut [Option<DenseArray>], var: Var, shape: &[usize], delta: Vec<f64>) {
    match &mut grads[var.0] {
        Some(existing) => existing.data_mut().iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
        slot @ None => *slot = Some(DenseArray::new(shape.to_vec(), delta).expect("adjoint shape")),
    }
}

fn last_dim(x: &DenseArray, op: &'static str) -> Result<usize> {
    match x.shape().last() {
        Some(&k) if k >= 1 => Ok(k),
        _ => Err(dim_err(op, format!("needs a non-empty last axis, got {:?}", x.shape()))),
    }
}

fn swap_last_two(data: &[f64], a: usize, b: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (src, dst) in data.chunks_exact(b * c).zip(out.chunks_exact_mut(b * c)).take(a) {
        for (j, row) in src.chunks_exact(c).enumerate() {
            for (k, &v) in row.iter().enumerate() {
                dst[k * b + j] = v;
            }
        }
    }
    out
}

/// `c += a · b` for an `m×k` matrix `a`, a `k×n` matrix `b` and an `m×n`
/// matrix `c`, each given as a slice plus (row stride, column stride).
#[allow(clippy::too_many_arguments)]
fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    c_strides: (usize, usize),
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, (rs, cs): (usize, usize)| (rows - 1) * rs + (cols - 1) * cs;
    assert!(last(m, k, a_strides) < a.len(), "gemm: lhs view out of bounds");
    assert!(last(k, n, b_strides) < b.len(), "gemm: rhs view out of bounds");
    assert!(last(m, n, c_strides) < c.len(), "gemm: output view out of bounds");
    // SAFETY: the asserts above keep every strided view inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            1.0,
            c.as_mut_ptr(),
            c_strides.0 as isize,
            c_strides.1 as isize,
        );
    }
}

/// [`gemm_strided`] with a contiguous row-major output.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
) {
    debug_assert_eq!(c.len(), m * n);
    gemm_strided(m, k, n, a, a_strides, b, b_strides, c, (n, 1));
}

/// Matrix product `a [m×k] · bᵀ` where `b` is `[n×k]`; used outside the tape
/// for pairwise distance computations.
pub fn matmul_transposed(a: &DenseArray, b: &DenseArray) -> DenseArray {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[0];
    assert_eq!(b.shape()[1], k, "inner dimensions differ");
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), (k, 1), b.data(), (1, k), &mut out);
    DenseArray::new(vec![m, n], out).expect("product shape")
}
