//! Reverse-mode autodiff over a recorded operation tape.
//!
//! A [`Tape`] owns named trainable parameters plus an append-only record of
//! every differentiable operation executed on it. Nodes are recorded in
//! execution order, so the record is already topologically sorted and
//! [`Tape::backward`] is a single reverse sweep.
//!
//! A tape is confined to one thread for the duration of a forward/backward
//! pass; independent tapes may run in parallel.

use std::collections::BTreeMap;

use super::dense::{matmul, DenseTensor, Scalar};
use super::rng::RandomStream;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

/// Elementwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    /// `alpha` is the negative-side slope (default 0.2).
    LeakyRelu(f64),
    Sigmoid,
    Identity,
    Log1p,
}

impl Activation {
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x.to_f64() > 0.0 {
                    x
                } else {
                    T::ZERO
                }
            }
            Activation::LeakyRelu(alpha) => {
                if x.to_f64() > 0.0 {
                    x
                } else {
                    T::from_f64(alpha * x.to_f64())
                }
            }
            Activation::Sigmoid => T::from_f64(1.0 / (1.0 + (-x.to_f64()).exp())),
            Activation::Identity => x,
            Activation::Log1p => x.ln_1p(),
        }
    }

    /// Derivative expressed in terms of input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(alpha) => {
                if x > 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
            Activation::Log1p => 1.0 / (1.0 + x),
        }
    }
}

/// Per-receiver reduction mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
    Min,
}

impl Reduce {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Reduce::Sum),
            "mean" => Ok(Reduce::Mean),
            "max" => Ok(Reduce::Max),
            "min" => Ok(Reduce::Min),
            other => Err(Error::InvalidArgument {
                op: "reduce".into(),
                message: format!("unknown reduce type {other:?}"),
            }),
        }
    }
}

enum Op {
    Leaf,
    Linear {
        x: ValueId,
        w: ValueId,
        b: Option<ValueId>,
    },
    Activation {
        x: ValueId,
        kind: Activation,
    },
    ConcatLast {
        parts: Vec<ValueId>,
    },
    SegmentReduce {
        values: ValueId,
        ids: Vec<usize>,
        reduce: Reduce,
        /// Counts per segment (mean) and extremum row per `(segment, column)`
        /// (max/min), saved at forward time.
        counts: Vec<usize>,
        argext: Vec<Option<usize>>,
    },
    SegmentSoftmax {
        logits: ValueId,
        ids: Vec<usize>,
        num_segments: usize,
    },
    GatherRows {
        values: ValueId,
        indices: Vec<usize>,
    },
    LayerNorm {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        epsilon: f64,
    },
    Dropout {
        x: ValueId,
        keep: Vec<bool>,
        scale: f64,
    },
    Add {
        a: ValueId,
        b: ValueId,
    },
    Mul {
        a: ValueId,
        b: ValueId,
    },
    ScaleRows {
        x: ValueId,
        s: ValueId,
    },
    MulPerHead {
        values: ValueId,
        coef: ValueId,
        heads: usize,
    },
    AttentionLogits {
        features: ValueId,
        weights: ValueId,
        heads: usize,
    },
    SumAll {
        x: ValueId,
    },
    SumSquares {
        x: ValueId,
    },
    ScaleConst {
        x: ValueId,
        c: f64,
    },
    SoftmaxXent {
        logits: ValueId,
        labels: Vec<usize>,
        weights: Vec<f64>,
    },
    SigmoidXent {
        logits: ValueId,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
}

struct Node<T> {
    value: DenseTensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Named parameters plus the recorded computation and, after
/// [`Tape::backward`], one gradient per parameter reachable from the loss.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, ValueId>,
    gradients: BTreeMap<String, DenseTensor<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            gradients: BTreeMap::new(),
        }
    }

    fn push(&mut self, value: DenseTensor<T>, op: Op, needs_grad: bool) -> ValueId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        ValueId(self.nodes.len() - 1)
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn check(&self, id: ValueId, op: &str) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument {
                op: op.into(),
                message: format!("value id {} is not on this tape", id.0),
            });
        }
        Ok(())
    }

    /// Record a non-trainable input.
    pub fn constant(&mut self, value: DenseTensor<T>) -> ValueId {
        self.push(value, Op::Leaf, false)
    }

    /// Record a trainable parameter under a unique name.
    pub fn param(&mut self, name: &str, value: DenseTensor<T>) -> Result<ValueId> {
        if self.params.contains_key(name) {
            return Err(Error::InvalidArgument {
                op: "param".into(),
                message: format!("parameter name {name:?} already on tape"),
            });
        }
        let id = self.push(value, Op::Leaf, true);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    /// The tape-recorded id for a parameter, if it has been registered.
    pub fn param_id(&self, name: &str) -> Option<ValueId> {
        self.params.get(name).copied()
    }

    /// Shape of a value that an op requires to be rank 2.
    fn matrix_shape(&self, id: ValueId, op: &str) -> Result<(usize, usize)> {
        self.check(id, op)?;
        let shape = self.value(id).shape();
        if shape.len() != 2 {
            return Err(Error::InvalidArgument {
                op: op.into(),
                message: format!("expected a rank-2 tensor, got shape {shape:?}"),
            });
        }
        Ok((shape[0], shape[1]))
    }

    pub fn value(&self, id: ValueId) -> &DenseTensor<T> {
        &self.nodes[id.0].value
    }

    /// Gradients by parameter name; empty before [`Tape::backward`].
    pub fn gradients(&self) -> &BTreeMap<String, DenseTensor<T>> {
        &self.gradients
    }

    pub fn gradient(&self, name: &str) -> Option<&DenseTensor<T>> {
        self.gradients.get(name)
    }

    // ---- recorded operations -------------------------------------------------

    /// `y = x W (+ b)`; `x: [n, d_in]`, `w: [d_in, d_out]`, `b: [d_out]`.
    pub fn linear(&mut self, x: ValueId, w: ValueId, b: Option<ValueId>) -> Result<ValueId> {
        self.matrix_shape(x, "linear")?;
        self.matrix_shape(w, "linear")?;
        let mut y = matmul(self.value(x), self.value(w))?;
        if let Some(b) = b {
            self.check(b, "linear")?;
            let bias = self.value(b);
            let d_out = y.shape()[1];
            if bias.len() != d_out {
                return Err(Error::DimMismatch {
                    op: "linear bias".into(),
                    lhs: vec![d_out],
                    rhs: bias.shape().to_vec(),
                });
            }
            let bvals = bias.values().to_vec();
            for (idx, v) in y.values_mut().iter_mut().enumerate() {
                *v += bvals[idx % d_out];
            }
        }
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(y, Op::Linear { x, w, b }, needs))
    }

    pub fn activation(&mut self, x: ValueId, kind: Activation) -> Result<ValueId> {
        self.check(x, "activation")?;
        let y = self.value(x).map(|v| kind.apply(v));
        let needs = self.needs(x);
        Ok(self.push(y, Op::Activation { x, kind }, needs))
    }

    /// Column-wise concatenation of rank-2 tensors with equal row counts.
    pub fn concat_last(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument {
                op: "concat_last".into(),
                message: "need at least one part".into(),
            });
        }
        for &p in parts {
            self.check(p, "concat_last")?;
        }
        let rows = self.value(parts[0]).shape()[0];
        for &p in parts {
            let shape = self.value(p).shape();
            if shape.len() != 2 || shape[0] != rows {
                return Err(Error::DimMismatch {
                    op: "concat_last".into(),
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
        }
        let total_width: usize = parts.iter().map(|&p| self.value(p).shape()[1]).sum();
        let mut out = Vec::with_capacity(rows * total_width);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = DenseTensor::new(vec![rows, total_width], out)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            value,
            Op::ConcatLast {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    /// Per-segment reduction of `values: [m, d]` into `[num_segments, d]`.
    /// Empty segments reduce to 0 for every reduce type; sums accumulate in
    /// f64. Max/min gradients route to the lowest-index extremal row.
    pub fn segment_reduce(
        &mut self,
        values: ValueId,
        ids: &[usize],
        num_segments: usize,
        reduce: Reduce,
    ) -> Result<ValueId> {
        let (rows, d) = self.matrix_shape(values, "segment_reduce")?;
        check_segment_ids(ids, rows, num_segments, "segment_reduce")?;
        let v = self.value(values);
        let mut counts = vec![0usize; num_segments];
        for &s in ids {
            counts[s] += 1;
        }
        let mut out = vec![T::ZERO; num_segments * d];
        let mut argext = Vec::new();
        match reduce {
            Reduce::Sum | Reduce::Mean => {
                let mut acc = vec![0.0f64; num_segments * d];
                for (i, &s) in ids.iter().enumerate() {
                    for (j, &x) in v.row(i).iter().enumerate() {
                        acc[s * d + j] += x.to_f64();
                    }
                }
                for s in 0..num_segments {
                    let denom = if reduce == Reduce::Mean {
                        counts[s].max(1) as f64
                    } else {
                        1.0
                    };
                    for j in 0..d {
                        out[s * d + j] = T::from_f64(acc[s * d + j] / denom);
                    }
                }
            }
            Reduce::Max | Reduce::Min => {
                argext = vec![None; num_segments * d];
                for (i, &s) in ids.iter().enumerate() {
                    for (j, &x) in v.row(i).iter().enumerate() {
                        let slot = s * d + j;
                        let better = match argext[slot] {
                            None => true,
                            Some(_) => {
                                let cur = out[slot];
                                if reduce == Reduce::Max {
                                    x > cur
                                } else {
                                    x < cur
                                }
                            }
                        };
                        if better {
                            out[slot] = x;
                            argext[slot] = Some(i);
                        }
                    }
                }
                // Empty segments stay 0, argext None.
            }
        }
        let value = DenseTensor::new(vec![num_segments, d], out)?;
        let needs = self.needs(values);
        Ok(self.push(
            value,
            Op::SegmentReduce {
                values,
                ids: ids.to_vec(),
                reduce,
                counts,
                argext,
            },
            needs,
        ))
    }

    /// Per-segment, per-column softmax with max subtraction.
    pub fn segment_softmax(
        &mut self,
        logits: ValueId,
        ids: &[usize],
        num_segments: usize,
    ) -> Result<ValueId> {
        let (m, d) = self.matrix_shape(logits, "segment_softmax")?;
        check_segment_ids(ids, m, num_segments, "segment_softmax")?;
        let v = self.value(logits);
        let mut maxes = vec![f64::NEG_INFINITY; num_segments * d];
        for (i, &s) in ids.iter().enumerate() {
            for (j, &x) in v.row(i).iter().enumerate() {
                let slot = s * d + j;
                maxes[slot] = maxes[slot].max(x.to_f64());
            }
        }
        let mut sums = vec![0.0f64; num_segments * d];
        let mut exps = vec![0.0f64; m * d];
        for (i, &s) in ids.iter().enumerate() {
            for (j, &x) in v.row(i).iter().enumerate() {
                let e = (x.to_f64() - maxes[s * d + j]).exp();
                exps[i * d + j] = e;
                sums[s * d + j] += e;
            }
        }
        let mut out = vec![T::ZERO; m * d];
        for (i, &s) in ids.iter().enumerate() {
            for j in 0..d {
                out[i * d + j] = T::from_f64(exps[i * d + j] / sums[s * d + j]);
            }
        }
        let value = DenseTensor::new(vec![m, d], out)?;
        let needs = self.needs(logits);
        Ok(self.push(
            value,
            Op::SegmentSoftmax {
                logits,
                ids: ids.to_vec(),
                num_segments,
            },
            needs,
        ))
    }

    /// `out[i] = values[indices[i]]`; the gradient scatter-adds back.
    pub fn gather_rows(&mut self, values: ValueId, indices: &[usize]) -> Result<ValueId> {
        let (n, d) = self.matrix_shape(values, "gather_rows")?;
        let v = self.value(values);
        for &i in indices {
            if i >= n {
                return Err(Error::IndexOutOfRange {
                    context: "gather_rows".into(),
                    index: i as i64,
                    size: n,
                });
            }
        }
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(v.row(i));
        }
        let value = DenseTensor::new(vec![indices.len(), d], out)?;
        let needs = self.needs(values);
        Ok(self.push(
            value,
            Op::GatherRows {
                values,
                indices: indices.to_vec(),
            },
            needs,
        ))
    }

    /// Per-row normalization: `(x - mean) / sqrt(var + epsilon) * gamma + beta`.
    pub fn layer_norm(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        epsilon: f64,
    ) -> Result<ValueId> {
        let (n, d) = self.matrix_shape(x, "layer_norm")?;
        self.check(gamma, "layer_norm")?;
        self.check(beta, "layer_norm")?;
        let v = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        if g.len() != d || b.len() != d {
            return Err(Error::DimMismatch {
                op: "layer_norm".into(),
                lhs: vec![d],
                rhs: g.shape().to_vec(),
            });
        }
        let mut out = vec![T::ZERO; n * d];
        for i in 0..n {
            let row = v.row(i);
            let mean = row.iter().map(|x| x.to_f64()).sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x.to_f64() - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + epsilon).sqrt();
            for j in 0..d {
                let xhat = (row[j].to_f64() - mean) * inv;
                out[i * d + j] =
                    T::from_f64(xhat * g.values()[j].to_f64() + b.values()[j].to_f64());
            }
        }
        let value = DenseTensor::new(vec![n, d], out)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                epsilon,
            },
            needs,
        ))
    }

    /// Zero each element with probability `rate` and scale survivors by
    /// `1/(1-rate)`. Identity when `training` is false or `rate` is 0.
    pub fn dropout(
        &mut self,
        x: ValueId,
        rate: f64,
        training: bool,
        stream: &mut RandomStream,
    ) -> Result<ValueId> {
        self.check(x, "dropout")?;
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument {
                op: "dropout".into(),
                message: format!("rate must be in [0, 1), got {rate}"),
            });
        }
        if !training || rate == 0.0 {
            let value = self.value(x).clone();
            let needs = self.needs(x);
            return Ok(self.push(
                value,
                Op::Dropout {
                    x,
                    keep: Vec::new(),
                    scale: 1.0,
                },
                needs,
            ));
        }
        let v = self.value(x);
        let scale = 1.0 / (1.0 - rate);
        let keep: Vec<bool> = (0..v.len()).map(|_| stream.next_f64() >= rate).collect();
        let values = v
            .values()
            .iter()
            .zip(&keep)
            .map(|(&x, &k)| {
                if k {
                    T::from_f64(x.to_f64() * scale)
                } else {
                    T::ZERO
                }
            })
            .collect();
        let value = DenseTensor::new(v.shape().to_vec(), values)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Dropout { x, keep, scale }, needs))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check(a, "add")?;
        self.check(b, "add")?;
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::DimMismatch {
                op: "add".into(),
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let values = va
            .values()
            .iter()
            .zip(vb.values())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = DenseTensor::new(va.shape().to_vec(), values)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check(a, "mul")?;
        self.check(b, "mul")?;
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::DimMismatch {
                op: "mul".into(),
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let values = va
            .values()
            .iter()
            .zip(vb.values())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = DenseTensor::new(va.shape().to_vec(), values)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul { a, b }, needs))
    }

    /// `y[i, j] = x[i, j] * s[i, 0]` for `x: [n, d]`, `s: [n, 1]`.
    pub fn scale_rows(&mut self, x: ValueId, s: ValueId) -> Result<ValueId> {
        let (n, _) = self.matrix_shape(x, "scale_rows")?;
        self.check(s, "scale_rows")?;
        let (vx, vs) = (self.value(x), self.value(s));
        if vs.shape() != [n, 1] {
            return Err(Error::DimMismatch {
                op: "scale_rows".into(),
                lhs: vx.shape().to_vec(),
                rhs: vs.shape().to_vec(),
            });
        }
        let d = vx.shape()[1];
        let values = vx
            .values()
            .iter()
            .enumerate()
            .map(|(k, &x)| x * vs.values()[k / d])
            .collect();
        let value = DenseTensor::new(vx.shape().to_vec(), values)?;
        let needs = self.needs(x) || self.needs(s);
        Ok(self.push(value, Op::ScaleRows { x, s }, needs))
    }

    /// Per-head row scaling: `y[i, h*c + k] = values[i, h*c + k] * coef[i, h]`
    /// for `values: [m, heads*c]`, `coef: [m, heads]`.
    pub fn mul_per_head(
        &mut self,
        values: ValueId,
        coef: ValueId,
        heads: usize,
    ) -> Result<ValueId> {
        let (rows, width) = self.matrix_shape(values, "mul_per_head")?;
        self.matrix_shape(coef, "mul_per_head")?;
        let (vv, vc) = (self.value(values), self.value(coef));
        if heads == 0 || width % heads != 0 || vc.shape() != [rows, heads] {
            return Err(Error::DimMismatch {
                op: "mul_per_head".into(),
                lhs: vv.shape().to_vec(),
                rhs: vc.shape().to_vec(),
            });
        }
        let c = width / heads;
        let out = vv
            .values()
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let (i, col) = (k / width, k % width);
                x * vc.values()[i * heads + col / c]
            })
            .collect();
        let value = DenseTensor::new(vv.shape().to_vec(), out)?;
        let needs = self.needs(values) || self.needs(coef);
        Ok(self.push(
            value,
            Op::MulPerHead {
                values,
                coef,
                heads,
            },
            needs,
        ))
    }

    /// Per-head dot product with a learned vector:
    /// `out[i, h] = sum_k features[i, h*c + k] * weights[h*c + k]`.
    pub fn attention_logits(
        &mut self,
        features: ValueId,
        weights: ValueId,
        heads: usize,
    ) -> Result<ValueId> {
        let (m, width) = self.matrix_shape(features, "attention_logits")?;
        self.check(weights, "attention_logits")?;
        let (vf, vw) = (self.value(features), self.value(weights));
        if heads == 0 || width % heads != 0 || vw.len() != width {
            return Err(Error::DimMismatch {
                op: "attention_logits".into(),
                lhs: vf.shape().to_vec(),
                rhs: vw.shape().to_vec(),
            });
        }
        let c = width / heads;
        let mut out = vec![T::ZERO; m * heads];
        for i in 0..m {
            let row = vf.row(i);
            for h in 0..heads {
                let mut acc = 0.0f64;
                for k in 0..c {
                    acc += row[h * c + k].to_f64() * vw.values()[h * c + k].to_f64();
                }
                out[i * heads + h] = T::from_f64(acc);
            }
        }
        let value = DenseTensor::new(vec![m, heads], out)?;
        let needs = self.needs(features) || self.needs(weights);
        Ok(self.push(
            value,
            Op::AttentionLogits {
                features,
                weights,
                heads,
            },
            needs,
        ))
    }

    /// Sum of every element, as a `[1]` scalar.
    pub fn sum_all(&mut self, x: ValueId) -> Result<ValueId> {
        self.check(x, "sum_all")?;
        let total: f64 = self.value(x).values().iter().map(|v| v.to_f64()).sum();
        let needs = self.needs(x);
        Ok(self.push(
            DenseTensor::scalar(T::from_f64(total)),
            Op::SumAll { x },
            needs,
        ))
    }

    /// Sum of squared elements, as a `[1]` scalar.
    pub fn sum_squares(&mut self, x: ValueId) -> Result<ValueId> {
        self.check(x, "sum_squares")?;
        let total: f64 = self
            .value(x)
            .values()
            .iter()
            .map(|v| v.to_f64() * v.to_f64())
            .sum();
        let needs = self.needs(x);
        Ok(self.push(
            DenseTensor::scalar(T::from_f64(total)),
            Op::SumSquares { x },
            needs,
        ))
    }

    /// Multiply every element by a compile-time constant.
    pub fn scale_const(&mut self, x: ValueId, c: f64) -> Result<ValueId> {
        self.check(x, "scale_const")?;
        let value = self.value(x).map(|v| T::from_f64(v.to_f64() * c));
        let needs = self.needs(x);
        Ok(self.push(value, Op::ScaleConst { x, c }, needs))
    }

    /// Weighted softmax cross-entropy over `logits: [n, num_classes]`,
    /// averaged over the total weight (0 total weight gives loss 0).
    pub fn softmax_xent(
        &mut self,
        logits: ValueId,
        labels: &[usize],
        weights: &[f64],
    ) -> Result<ValueId> {
        let (n, c) = self.matrix_shape(logits, "softmax_xent")?;
        let v = self.value(logits);
        if labels.len() != n || weights.len() != n {
            return Err(Error::DimMismatch {
                op: "softmax_xent".into(),
                lhs: vec![n],
                rhs: vec![labels.len()],
            });
        }
        for (i, &y) in labels.iter().enumerate() {
            if y >= c && weights[i] != 0.0 {
                return Err(Error::IndexOutOfRange {
                    context: "softmax_xent label".into(),
                    index: y as i64,
                    size: c,
                });
            }
        }
        let wsum: f64 = weights.iter().sum();
        let mut loss = 0.0f64;
        if wsum > 0.0 {
            for i in 0..n {
                if weights[i] == 0.0 {
                    continue;
                }
                let row = v.row(i);
                let max = row
                    .iter()
                    .map(|x| x.to_f64())
                    .fold(f64::NEG_INFINITY, f64::max);
                let lse = max
                    + row
                        .iter()
                        .map(|x| (x.to_f64() - max).exp())
                        .sum::<f64>()
                        .ln();
                loss += weights[i] * (lse - row[labels[i]].to_f64());
            }
            loss /= wsum;
        }
        let needs = self.needs(logits);
        Ok(self.push(
            DenseTensor::scalar(T::from_f64(loss)),
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
            },
            needs,
        ))
    }

    /// Weighted sigmoid cross-entropy over `logits: [n, 1]` with 0/1 targets.
    pub fn sigmoid_xent(
        &mut self,
        logits: ValueId,
        targets: &[f64],
        weights: &[f64],
    ) -> Result<ValueId> {
        let (n, cols) = self.matrix_shape(logits, "sigmoid_xent")?;
        let v = self.value(logits);
        if cols != 1 || targets.len() != n || weights.len() != n {
            return Err(Error::DimMismatch {
                op: "sigmoid_xent".into(),
                lhs: v.shape().to_vec(),
                rhs: vec![targets.len(), 1],
            });
        }
        let wsum: f64 = weights.iter().sum();
        let mut loss = 0.0f64;
        if wsum > 0.0 {
            for i in 0..n {
                let z = v.values()[i].to_f64();
                let y = targets[i];
                loss += weights[i] * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p());
            }
            loss /= wsum;
        }
        let needs = self.needs(logits);
        Ok(self.push(
            DenseTensor::scalar(T::from_f64(loss)),
            Op::SigmoidXent {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            needs,
        ))
    }

    // ---- backward --------------------------------------------------------------

    /// Reverse accumulation from a scalar loss. Populates [`Tape::gradients`]
    /// with one entry per parameter reachable from the loss.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        self.check(loss, "backward")?;
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument {
                op: "backward".into(),
                message: format!(
                    "loss must be a scalar, got shape {:?}",
                    self.value(loss).shape()
                ),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.propagate(idx, &gy, &mut grads)?;
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(gy); // keep leaf gradients for extraction
            }
        }

        self.gradients.clear();
        for (name, id) in &self.params {
            if let Some(g) = &grads[id.0] {
                let shape = self.nodes[id.0].value.shape().to_vec();
                let values = g.iter().map(|&x| T::from_f64(x)).collect();
                self.gradients
                    .insert(name.clone(), DenseTensor::new(shape, values)?);
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let send = |target: ValueId, contrib: Vec<f64>, grads: &mut [Option<Vec<f64>>]| {
            if !self.needs(target) {
                return;
            }
            match &mut grads[target.0] {
                Some(acc) => {
                    for (a, c) in acc.iter_mut().zip(&contrib) {
                        *a += c;
                    }
                }
                slot => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, d_in) = (xv.shape()[0], xv.shape()[1]);
                let d_out = wv.shape()[1];
                if self.needs(*x) {
                    // dX = gY W^T
                    let mut gx = vec![0.0; n * d_in];
                    for i in 0..n {
                        for k in 0..d_in {
                            let mut acc = 0.0;
                            for j in 0..d_out {
                                acc += gy[i * d_out + j] * wv.values()[k * d_out + j].to_f64();
                            }
                            gx[i * d_in + k] = acc;
                        }
                    }
                    send(*x, gx, grads);
                }
                if self.needs(*w) {
                    // dW = X^T gY
                    let mut gw = vec![0.0; d_in * d_out];
                    for i in 0..n {
                        for k in 0..d_in {
                            let xik = xv.values()[i * d_in + k].to_f64();
                            for j in 0..d_out {
                                gw[k * d_out + j] += xik * gy[i * d_out + j];
                            }
                        }
                    }
                    send(*w, gw, grads);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let mut gb = vec![0.0; d_out];
                        for i in 0..n {
                            for j in 0..d_out {
                                gb[j] += gy[i * d_out + j];
                            }
                        }
                        send(*b, gb, grads);
                    }
                }
            }
            Op::Activation { x, kind } => {
                let xv = self.value(*x);
                let yv = &node.value;
                let gx = gy
                    .iter()
                    .enumerate()
                    .map(|(k, &g)| {
                        g * kind.derivative(xv.values()[k].to_f64(), yv.values()[k].to_f64())
                    })
                    .collect();
                send(*x, gx, grads);
            }
            Op::ConcatLast { parts } => {
                let rows = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    if self.needs(p) {
                        let mut gp = vec![0.0; rows * w];
                        for i in 0..rows {
                            gp[i * w..(i + 1) * w]
                                .copy_from_slice(&gy[i * total + offset..i * total + offset + w]);
                        }
                        send(p, gp, grads);
                    }
                    offset += w;
                }
            }
            Op::SegmentReduce {
                values,
                ids,
                reduce,
                counts,
                argext,
            } => {
                let d = node.value.shape()[1];
                let m = self.value(*values).shape()[0];
                let mut gv = vec![0.0; m * d];
                match reduce {
                    Reduce::Sum => {
                        for (i, &s) in ids.iter().enumerate() {
                            for j in 0..d {
                                gv[i * d + j] = gy[s * d + j];
                            }
                        }
                    }
                    Reduce::Mean => {
                        for (i, &s) in ids.iter().enumerate() {
                            let c = counts[s].max(1) as f64;
                            for j in 0..d {
                                gv[i * d + j] = gy[s * d + j] / c;
                            }
                        }
                    }
                    Reduce::Max | Reduce::Min => {
                        for (slot, arg) in argext.iter().enumerate() {
                            if let Some(row) = arg {
                                let j = slot % d;
                                gv[row * d + j] += gy[slot];
                            }
                        }
                    }
                }
                send(*values, gv, grads);
            }
            Op::SegmentSoftmax {
                logits,
                ids,
                num_segments,
            } => {
                let d = node.value.shape()[1];
                let y = &node.value;
                let mut dot = vec![0.0; num_segments * d];
                for (i, &s) in ids.iter().enumerate() {
                    for j in 0..d {
                        dot[s * d + j] += y.values()[i * d + j].to_f64() * gy[i * d + j];
                    }
                }
                let mut gx = vec![0.0; gy.len()];
                for (i, &s) in ids.iter().enumerate() {
                    for j in 0..d {
                        let yi = y.values()[i * d + j].to_f64();
                        gx[i * d + j] = yi * (gy[i * d + j] - dot[s * d + j]);
                    }
                }
                send(*logits, gx, grads);
            }
            Op::GatherRows { values, indices } => {
                let d = node.value.shape()[1];
                let n = self.value(*values).shape()[0];
                let mut gv = vec![0.0; n * d];
                for (i, &src) in indices.iter().enumerate() {
                    for j in 0..d {
                        gv[src * d + j] += gy[i * d + j];
                    }
                }
                send(*values, gv, grads);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                epsilon,
            } => {
                let xv = self.value(*x);
                let gv = self.value(*gamma);
                let (n, d) = (xv.shape()[0], xv.shape()[1]);
                let mut gx = vec![0.0; n * d];
                let mut ggamma = vec![0.0; d];
                let mut gbeta = vec![0.0; d];
                for i in 0..n {
                    let row = xv.row(i);
                    let mean = row.iter().map(|x| x.to_f64()).sum::<f64>() / d as f64;
                    let var =
                        row.iter().map(|x| (x.to_f64() - mean).powi(2)).sum::<f64>() / d as f64;
                    let inv = 1.0 / (var + epsilon).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|x| (x.to_f64() - mean) * inv).collect();
                    let a: Vec<f64> = (0..d)
                        .map(|j| gv.values()[j].to_f64() * gy[i * d + j])
                        .collect();
                    let m1 = a.iter().sum::<f64>() / d as f64;
                    let m2 = a.iter().zip(&xhat).map(|(a, x)| a * x).sum::<f64>() / d as f64;
                    for j in 0..d {
                        gx[i * d + j] = (a[j] - m1 - xhat[j] * m2) * inv;
                        ggamma[j] += gy[i * d + j] * xhat[j];
                        gbeta[j] += gy[i * d + j];
                    }
                }
                send(*x, gx, grads);
                send(*gamma, ggamma, grads);
                send(*beta, gbeta, grads);
            }
            Op::Dropout { x, keep, scale } => {
                let gx = if keep.is_empty() {
                    gy.to_vec()
                } else {
                    gy.iter()
                        .zip(keep)
                        .map(|(&g, &k)| if k { g * scale } else { 0.0 })
                        .collect()
                };
                send(*x, gx, grads);
            }
            Op::Add { a, b } => {
                send(*a, gy.to_vec(), grads);
                send(*b, gy.to_vec(), grads);
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let ga = gy
                        .iter()
                        .enumerate()
                        .map(|(k, &g)| g * vb.values()[k].to_f64())
                        .collect();
                    send(*a, ga, grads);
                }
                if self.needs(*b) {
                    let gb = gy
                        .iter()
                        .enumerate()
                        .map(|(k, &g)| g * va.values()[k].to_f64())
                        .collect();
                    send(*b, gb, grads);
                }
            }
            Op::ScaleRows { x, s } => {
                let (vx, vs) = (self.value(*x), self.value(*s));
                let d = vx.shape()[1];
                if self.needs(*x) {
                    let gx = gy
                        .iter()
                        .enumerate()
                        .map(|(k, &g)| g * vs.values()[k / d].to_f64())
                        .collect();
                    send(*x, gx, grads);
                }
                if self.needs(*s) {
                    let n = vx.shape()[0];
                    let mut gs = vec![0.0; n];
                    for i in 0..n {
                        for j in 0..d {
                            gs[i] += gy[i * d + j] * vx.values()[i * d + j].to_f64();
                        }
                    }
                    send(*s, gs, grads);
                }
            }
            Op::MulPerHead {
                values,
                coef,
                heads,
            } => {
                let (vv, vc) = (self.value(*values), self.value(*coef));
                let heads = *heads;
                let width = vv.shape()[1];
                let c = width / heads;
                if self.needs(*values) {
                    let gvals = gy
                        .iter()
                        .enumerate()
                        .map(|(k, &g)| {
                            let (i, col) = (k / width, k % width);
                            g * vc.values()[i * heads + col / c].to_f64()
                        })
                        .collect();
                    send(*values, gvals, grads);
                }
                if self.needs(*coef) {
                    let m = vv.shape()[0];
                    let mut gc = vec![0.0; m * heads];
                    for i in 0..m {
                        for h in 0..heads {
                            let mut acc = 0.0;
                            for k in 0..c {
                                let col = h * c + k;
                                acc += gy[i * width + col] * vv.values()[i * width + col].to_f64();
                            }
                            gc[i * heads + h] = acc;
                        }
                    }
                    send(*coef, gc, grads);
                }
            }
            Op::AttentionLogits {
                features,
                weights,
                heads,
            } => {
                let (vf, vw) = (self.value(*features), self.value(*weights));
                let heads = *heads;
                let width = vf.shape()[1];
                let c = width / heads;
                let m = vf.shape()[0];
                if self.needs(*features) {
                    let mut gf = vec![0.0; m * width];
                    for i in 0..m {
                        for h in 0..heads {
                            let g = gy[i * heads + h];
                            for k in 0..c {
                                let col = h * c + k;
                                gf[i * width + col] = g * vw.values()[col].to_f64();
                            }
                        }
                    }
                    send(*features, gf, grads);
                }
                if self.needs(*weights) {
                    let mut gw = vec![0.0; width];
                    for i in 0..m {
                        for h in 0..heads {
                            let g = gy[i * heads + h];
                            for k in 0..c {
                                let col = h * c + k;
                                gw[col] += g * vf.values()[i * width + col].to_f64();
                            }
                        }
                    }
                    send(*weights, gw, grads);
                }
            }
            Op::SumAll { x } => {
                let n = self.value(*x).len();
                send(*x, vec![gy[0]; n], grads);
            }
            Op::SumSquares { x } => {
                let gx = self
                    .value(*x)
                    .values()
                    .iter()
                    .map(|&v| 2.0 * v.to_f64() * gy[0])
                    .collect();
                send(*x, gx, grads);
            }
            Op::ScaleConst { x, c } => {
                send(*x, gy.iter().map(|&g| g * c).collect(), grads);
            }
            Op::SoftmaxXent {
                logits,
                labels,
                weights,
            } => {
                let v = self.value(*logits);
                let (n, c) = (v.shape()[0], v.shape()[1]);
                let wsum: f64 = weights.iter().sum();
                let mut gx = vec![0.0; n * c];
                if wsum > 0.0 {
                    for i in 0..n {
                        if weights[i] == 0.0 {
                            continue;
                        }
                        let row = v.row(i);
                        let max = row
                            .iter()
                            .map(|x| x.to_f64())
                            .fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = row.iter().map(|x| (x.to_f64() - max).exp()).collect();
                        let sum: f64 = exps.iter().sum();
                        for j in 0..c {
                            let p = exps[j] / sum;
                            let target = if j == labels[i] { 1.0 } else { 0.0 };
                            gx[i * c + j] = gy[0] * weights[i] * (p - target) / wsum;
                        }
                    }
                }
                send(*logits, gx, grads);
            }
            Op::SigmoidXent {
                logits,
                targets,
                weights,
            } => {
                let v = self.value(*logits);
                let n = v.shape()[0];
                let wsum: f64 = weights.iter().sum();
                let mut gx = vec![0.0; n];
                if wsum > 0.0 {
                    for i in 0..n {
                        let z = v.values()[i].to_f64();
                        let sig = 1.0 / (1.0 + (-z).exp());
                        gx[i] = gy[0] * weights[i] * (sig - targets[i]) / wsum;
                    }
                }
                send(*logits, gx, grads);
            }
        }
        Ok(())
    }
}

fn check_segment_ids(ids: &[usize], rows: usize, num_segments: usize, op: &str) -> Result<()> {
    if ids.len() != rows {
        return Err(Error::DimMismatch {
            op: op.into(),
            lhs: vec![rows],
            rhs: vec![ids.len()],
        });
    }
    for &s in ids {
        if s >= num_segments {
            return Err(Error::IndexOutOfRange {
                context: format!("{op} segment id"),
                index: s as i64,
                size: num_segments,
            });
        }
    }
    Ok(())
}
