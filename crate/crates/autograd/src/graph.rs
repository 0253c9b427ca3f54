use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::kernels::{col2im, gemm, im2col, Window};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }
}

enum Op<T> {
    Constant,
    Input,
    Param(ParamId),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        win: Window,
        cols: Vec<T>,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        win: Window,
    },
    GroupNorm {
        input: Var,
        inv_std: Vec<T>,
    },
    Affine {
        input: Var,
        scale: T,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Abs(Var),
    Clamp {
        input: Var,
        lo: T,
        hi: T,
    },
    Sum(Var),
    Mean(Var),
    MeanSpatial(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Reshape(Var),
    ConcatTile {
        features: Var,
        vector: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    params: HashMap<ParamId, Tensor<T>>,
    inputs: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    pub fn input(&self, var: Var) -> Option<&Tensor<T>> {
        self.inputs.get(&var)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.keys().copied()
    }

    /// Euclidean norm over the gradients of `ids` (missing entries count as 0).
    pub fn global_norm(&self, ids: &[ParamId]) -> f64 {
        ids.iter()
            .filter_map(|id| self.params.get(id))
            .flat_map(|t| t.data().iter())
            .map(|v| {
                let v = v.as_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Eagerly evaluated computation tape.
///
/// Values are computed when an op is recorded. Parameters become leaves via
/// [`Graph::param`]; only those in the trainable set receive gradients.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, Var>,
    trainable: HashSet<ParamId>,
}

impl<T: Scalar> Graph<T> {
    /// A tape that tracks gradients for the given parameters.
    pub fn new(trainable: impl IntoIterator<Item = ParamId>) -> Self {
        Self {
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            trainable: trainable.into_iter().collect(),
        }
    }

    /// A tape with no trainable parameters.
    pub fn inference() -> Self {
        Self::new(std::iter::empty())
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, &[])
    }

    /// A leaf whose gradient is reported by [`Gradients::input`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Input,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copies the current value into a new leaf with no gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node, so
    /// gradients from every use accumulate into one entry.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let requires_grad = self.trainable.contains(&id);
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Param(id),
            requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    fn dims4(&self, v: Var, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        self.value(v).dims4().ok_or_else(|| Error::InvalidArgument {
            op,
            msg: format!("expected NCHW input, got {:?}", self.shape(v)),
        })
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn check_bias(&self, bias: Option<Var>, len: usize, op: &'static str) -> Result<()> {
        if let Some(b) = bias {
            if self.shape(b) != [len] {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: self.shape(b).to_vec(),
                    rhs: vec![len],
                });
            }
        }
        Ok(())
    }

    /// 2-D convolution, weight `[c_out, c_in, k, k]`, zero padding.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    ) -> Result<Var> {
        const OP: &str = "conv2d";
        let (n, c, h, w) = self.dims4(input, OP)?;
        let (co, ci, k, k2) = self.dims4(weight, OP)?;
        if ci != c || k != k2 {
            return Err(Error::ShapeMismatch {
                op: OP,
                lhs: self.shape(input).to_vec(),
                rhs: self.shape(weight).to_vec(),
            });
        }
        self.check_bias(bias, co, OP)?;
        if spec.stride == 0 || h + 2 * spec.padding < k || w + 2 * spec.padding < k {
            return Err(Error::InvalidArgument {
                op: OP,
                msg: format!("kernel {k} does not fit {h}x{w} with padding {}", spec.padding),
            });
        }
        let win = Window {
            channels: c,
            height: h,
            width: w,
            kernel: k,
            stride: spec.stride,
            padding: spec.padding,
            out_h: (h + 2 * spec.padding - k) / spec.stride + 1,
            out_w: (w + 2 * spec.padding - k) / spec.stride + 1,
        };
        let keep_cols = self.requires_grad(weight);
        let (rows, pos) = (win.rows(), win.positions());
        let mut out = vec![T::zero(); n * co * pos];
        let mut cols = vec![T::zero(); if keep_cols { n * rows * pos } else { rows * pos }];
        {
            let x = self.value(input).data();
            let wt = self.value(weight).data();
            let b = bias.map(|b| self.value(b).data());
            for i in 0..n {
                let col = if keep_cols {
                    &mut cols[i * rows * pos..(i + 1) * rows * pos]
                } else {
                    &mut cols[..]
                };
                im2col(&x[i * c * h * w..(i + 1) * c * h * w], &win, col);
                let dst = &mut out[i * co * pos..(i + 1) * co * pos];
                gemm(co, rows, pos, wt, false, col, false, dst, false);
                if let Some(b) = b {
                    for (o, plane) in dst.chunks_mut(pos).enumerate() {
                        plane.iter_mut().for_each(|v| *v += b[o]);
                    }
                }
            }
        }
        if !keep_cols {
            cols = Vec::new();
        }
        let value = Tensor::new(&[n, co, win.out_h, win.out_w], out);
        let mut parents = vec![input, weight];
        parents.extend(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                win,
                cols,
            },
            &parents,
        ))
    }

    /// Fractionally strided convolution, weight `[c_in, c_out, k, k]`;
    /// output size `(h - 1)·stride − 2·padding + k`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    ) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let (n, c, h, w) = self.dims4(input, OP)?;
        let (ci, co, k, k2) = self.dims4(weight, OP)?;
        if ci != c || k != k2 {
            return Err(Error::ShapeMismatch {
                op: OP,
                lhs: self.shape(input).to_vec(),
                rhs: self.shape(weight).to_vec(),
            });
        }
        self.check_bias(bias, co, OP)?;
        let s = spec.stride;
        let oh = ((h - 1) * s + k).checked_sub(2 * spec.padding).unwrap_or(0);
        let ow = ((w - 1) * s + k).checked_sub(2 * spec.padding).unwrap_or(0);
        if s == 0 || oh == 0 || ow == 0 {
            return Err(Error::InvalidArgument {
                op: OP,
                msg: format!("empty output for {h}x{w} input"),
            });
        }
        let win = Window {
            channels: co,
            height: oh,
            width: ow,
            kernel: k,
            stride: s,
            padding: spec.padding,
            out_h: h,
            out_w: w,
        };
        let (rows, pos) = (win.rows(), win.positions());
        let mut out = vec![T::zero(); n * co * oh * ow];
        let mut col = vec![T::zero(); rows * pos];
        {
            let x = self.value(input).data();
            let wt = self.value(weight).data();
            let b = bias.map(|b| self.value(b).data());
            for i in 0..n {
                gemm(rows, c, pos, wt, true, &x[i * c * pos..(i + 1) * c * pos], false, &mut col, false);
                let dst = &mut out[i * co * oh * ow..(i + 1) * co * oh * ow];
                col2im(&col, &win, dst);
                if let Some(b) = b {
                    for (o, plane) in dst.chunks_mut(oh * ow).enumerate() {
                        plane.iter_mut().for_each(|v| *v += b[o]);
                    }
                }
            }
        }
        let value = Tensor::new(&[n, co, oh, ow], out);
        let mut parents = vec![input, weight];
        parents.extend(bias);
        Ok(self.push(
            value,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                win,
            },
            &parents,
        ))
    }

    /// Normalizes each sample over groups of channels (no affine transform).
    /// `groups == channels` is instance normalization, `groups == 1` layer
    /// normalization.
    pub fn group_norm(&mut self, input: Var, groups: usize) -> Result<Var> {
        const OP: &str = "group_norm";
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 || groups == 0 || shape[1] % groups != 0 {
            return Err(Error::InvalidArgument {
                op: OP,
                msg: format!("{groups} groups for shape {shape:?}"),
            });
        }
        let n = shape[0];
        let x = self.value(input).data();
        let group_len = x.len() / (n * groups);
        let eps = T::from_f64_lossy(NORM_EPS);
        let count = T::from_usize(group_len).unwrap();
        let mut out = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(n * groups);
        for (src, dst) in x.chunks(group_len).zip(out.chunks_mut(group_len)) {
            let mean = src.iter().copied().sum::<T>() / count;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
            let is = T::one() / (var + eps).sqrt();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * is;
            }
            inv_std.push(is);
        }
        let value = Tensor::new(&shape, out);
        Ok(self.push(
            value,
            Op::GroupNorm { input, inv_std },
            &[input],
        ))
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, input: Var, scale: f64, shift: f64) -> Var {
        let (s, b) = (T::from_f64_lossy(scale), T::from_f64_lossy(shift));
        let value = self.value(input).map(|v| v * s + b);
        self.push(value, Op::Affine { input, scale: s }, &[input])
    }

    pub fn scale(&mut self, input: Var, scale: f64) -> Var {
        self.affine(input, scale, 0.0)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64_lossy(slope);
        let value = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v * s });
        self.push(value, Op::LeakyRelu(x, s), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        self.push(value, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.exp());
        self.push(value, Op::Exp(x), &[x])
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.ln());
        self.push(value, Op::Ln(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.abs());
        self.push(value, Op::Abs(x), &[x])
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
        let value = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(value, Op::Clamp { input: x, lo, hi }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        self.push(value, Op::Mean(x), &[x])
    }

    /// Global average pooling `[n, c, h, w] -> [n, c]`.
    pub fn mean_spatial(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.dims4(x, "mean_spatial")?;
        let count = T::from_usize(h * w).unwrap();
        let data: Vec<T> = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() / count)
            .collect();
        let value = Tensor::new(&[n, c], data);
        Ok(self.push(value, Op::MeanSpatial(x), &[x]))
    }

    /// `x · wᵀ + b` with `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        const OP: &str = "linear";
        let (n, fin) = self.value(input).dims2().ok_or_else(|| Error::InvalidArgument {
            op: OP,
            msg: format!("expected [n, in], got {:?}", self.shape(input)),
        })?;
        let (fout, win) = self.value(weight).dims2().ok_or_else(|| Error::InvalidArgument {
            op: OP,
            msg: format!("expected [out, in] weight, got {:?}", self.shape(weight)),
        })?;
        if fin != win {
            return Err(Error::ShapeMismatch {
                op: OP,
                lhs: self.shape(input).to_vec(),
                rhs: self.shape(weight).to_vec(),
            });
        }
        self.check_bias(bias, fout, OP)?;
        let mut out = vec![T::zero(); n * fout];
        gemm(
            n,
            fin,
            fout,
            self.value(input).data(),
            false,
            self.value(weight).data(),
            true,
            &mut out,
            false,
        );
        if let Some(b) = bias {
            let b = self.value(b).data();
            for row in out.chunks_mut(fout) {
                row.iter_mut().zip(b).for_each(|(v, &bb)| *v += bb);
            }
        }
        let value = Tensor::new(&[n, fout], out);
        let mut parents = vec![input, weight];
        parents.extend(bias);
        Ok(self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
            &parents,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = self.value(x).clone().reshape(shape);
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Tiles `vector: [n, a]` over the spatial grid of `features: [n, c, h, w]`
    /// and appends it as `a` extra channels.
    pub fn concat_tile(&mut self, features: Var, vector: Var) -> Result<Var> {
        const OP: &str = "concat_tile";
        let (n, c, h, w) = self.dims4(features, OP)?;
        let (vn, a) = self.value(vector).dims2().ok_or_else(|| Error::InvalidArgument {
            op: OP,
            msg: format!("expected [n, a] vector, got {:?}", self.shape(vector)),
        })?;
        if vn != n {
            return Err(Error::ShapeMismatch {
                op: OP,
                lhs: self.shape(features).to_vec(),
                rhs: self.shape(vector).to_vec(),
            });
        }
        let hw = h * w;
        let f = self.value(features).data();
        let v = self.value(vector).data();
        let mut out = Vec::with_capacity(n * (c + a) * hw);
        for i in 0..n {
            out.extend_from_slice(&f[i * c * hw..(i + 1) * c * hw]);
            for j in 0..a {
                out.extend(std::iter::repeat_n(v[i * a + j], hw));
            }
        }
        let value = Tensor::new(&[n, c + a, h, w], out);
        Ok(self.push(value, Op::ConcatTile { features, vector }, &[features, vector]))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        const OP: &str = "softmax_cross_entropy";
        let (n, k) = self.value(logits).dims2().ok_or_else(|| Error::InvalidArgument {
            op: OP,
            msg: format!("expected [n, classes], got {:?}", self.shape(logits)),
        })?;
        if labels.len() != n || labels.iter().any(|&l| l >= k) {
            return Err(Error::InvalidArgument {
                op: OP,
                msg: format!("{} labels for {n} rows of {k} classes", labels.len()),
            });
        }
        let z = self.value(logits).data();
        let mut probs = vec![T::zero(); n * k];
        let mut loss = T::zero();
        for i in 0..n {
            let row = &z[i * k..(i + 1) * k];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let denom: T = row.iter().map(|&v| (v - m).exp()).sum();
            for j in 0..k {
                probs[i * k + j] = (row[j] - m).exp() / denom;
            }
            loss -= row[labels[i]] - m - denom.ln();
        }
        let value = Tensor::scalar(loss / T::from_usize(n).unwrap());
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse-mode sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), T::one()));
        let mut out = Gradients {
            params: HashMap::new(),
            inputs: HashMap::new(),
        };
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[i].take() else {
                continue;
            };
            self.backprop_node(node, grad, Var(i), &mut grads, &mut out);
        }
        Ok(out)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        grad: Tensor<T>,
        this: Var,
        grads: &mut [Option<Tensor<T>>],
        out: &mut Gradients<T>,
    ) {
        let mut acc = |v: Var, g: Tensor<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        let gd = grad.data();
        match &node.op {
            Op::Constant => {}
            Op::Input => {
                out.inputs.insert(this, grad);
            }
            Op::Param(id) => {
                out.params.insert(*id, grad);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                win,
                cols,
            } => {
                let n = self.value(*input).shape()[0];
                let co = self.value(*weight).shape()[0];
                let (rows, pos) = (win.rows(), win.positions());
                let img_len = win.channels * win.height * win.width;
                if self.wants(*weight) {
                    let mut dw = vec![T::zero(); co * rows];
                    for i in 0..n {
                        gemm(
                            co,
                            pos,
                            rows,
                            &gd[i * co * pos..(i + 1) * co * pos],
                            false,
                            &cols[i * rows * pos..(i + 1) * rows * pos],
                            true,
                            &mut dw,
                            true,
                        );
                    }
                    acc(*weight, Tensor::new(self.shape(*weight), dw));
                }
                if let Some(b) = bias.filter(|b| self.wants(*b)) {
                    acc(b, channel_sums(gd, n, co, pos));
                }
                if self.wants(*input) {
                    let wt = self.value(*weight).data();
                    let mut dx = vec![T::zero(); n * img_len];
                    let mut dcol = vec![T::zero(); rows * pos];
                    for i in 0..n {
                        gemm(
                            rows,
                            co,
                            pos,
                            wt,
                            true,
                            &gd[i * co * pos..(i + 1) * co * pos],
                            false,
                            &mut dcol,
                            false,
                        );
                        col2im(&dcol, win, &mut dx[i * img_len..(i + 1) * img_len]);
                    }
                    acc(*input, Tensor::new(self.shape(*input), dx));
                }
            }
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                win,
            } => {
                let (n, ci, _, _) = self.value(*input).dims4().unwrap();
                let co = win.channels;
                let (rows, pos) = (win.rows(), win.positions());
                let img_len = co * win.height * win.width;
                let mut dcols = vec![T::zero(); n * rows * pos];
                for i in 0..n {
                    im2col(
                        &gd[i * img_len..(i + 1) * img_len],
                        win,
                        &mut dcols[i * rows * pos..(i + 1) * rows * pos],
                    );
                }
                if self.wants(*weight) {
                    let x = self.value(*input).data();
                    let mut dw = vec![T::zero(); ci * rows];
                    for i in 0..n {
                        gemm(
                            ci,
                            pos,
                            rows,
                            &x[i * ci * pos..(i + 1) * ci * pos],
                            false,
                            &dcols[i * rows * pos..(i + 1) * rows * pos],
                            true,
                            &mut dw,
                            true,
                        );
                    }
                    acc(*weight, Tensor::new(self.shape(*weight), dw));
                }
                if let Some(b) = bias.filter(|b| self.wants(*b)) {
                    acc(b, channel_sums(gd, n, co, win.height * win.width));
                }
                if self.wants(*input) {
                    let wt = self.value(*weight).data();
                    let mut dx = vec![T::zero(); n * ci * pos];
                    for i in 0..n {
                        gemm(
                            ci,
                            rows,
                            pos,
                            wt,
                            false,
                            &dcols[i * rows * pos..(i + 1) * rows * pos],
                            false,
                            &mut dx[i * ci * pos..(i + 1) * ci * pos],
                            false,
                        );
                    }
                    acc(*input, Tensor::new(self.shape(*input), dx));
                }
            }
            Op::GroupNorm { input, inv_std } => {
                let y = node.value.data();
                let group_len = y.len() / inv_std.len();
                let count = T::from_usize(group_len).unwrap();
                let mut dx = vec![T::zero(); y.len()];
                for (gi, &is) in inv_std.iter().enumerate() {
                    let r = gi * group_len..(gi + 1) * group_len;
                    let (yy, dy) = (&y[r.clone()], &gd[r.clone()]);
                    let mean_dy = dy.iter().copied().sum::<T>() / count;
                    let mean_dyy = dy.iter().zip(yy).map(|(&a, &b)| a * b).sum::<T>() / count;
                    for ((d, &g), &yv) in dx[r].iter_mut().zip(dy).zip(yy) {
                        *d = is * (g - mean_dy - yv * mean_dyy);
                    }
                }
                acc(*input, Tensor::new(node.value.shape(), dx));
            }
            Op::Affine { input, scale } => {
                let s = *scale;
                acc(*input, grad.map(|g| g * s));
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(*a, grad.clone());
                }
                if self.wants(*b) {
                    acc(*b, grad);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(*a, grad.clone());
                }
                if self.wants(*b) {
                    acc(*b, grad.map(|g| -g));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    acc(*a, grad.zip_map(self.value(*b), |g, y| g * y));
                }
                if self.wants(*b) {
                    acc(*b, grad.zip_map(self.value(*a), |g, x| g * x));
                }
            }
            Op::Relu(x) => {
                acc(
                    *x,
                    grad.zip_map(&node.value, |g, y| if y > T::zero() { g } else { T::zero() }),
                );
            }
            Op::LeakyRelu(x, s) => {
                let s = *s;
                acc(
                    *x,
                    grad.zip_map(self.value(*x), |g, v| if v > T::zero() { g } else { g * s }),
                );
            }
            Op::Tanh(x) => {
                acc(*x, grad.zip_map(&node.value, |g, y| g * (T::one() - y * y)));
            }
            Op::Sigmoid(x) => {
                acc(*x, grad.zip_map(&node.value, |g, y| g * y * (T::one() - y)));
            }
            Op::Exp(x) => {
                acc(*x, grad.zip_map(&node.value, |g, y| g * y));
            }
            Op::Ln(x) => {
                acc(*x, grad.zip_map(self.value(*x), |g, v| g / v));
            }
            Op::Abs(x) => {
                acc(*x, grad.zip_map(self.value(*x), |g, v| g * sign(v)));
            }
            Op::Clamp { input, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                acc(
                    *input,
                    grad.zip_map(self.value(*input), |g, v| {
                        if v >= lo && v <= hi {
                            g
                        } else {
                            T::zero()
                        }
                    }),
                );
            }
            Op::Sum(x) => {
                acc(*x, Tensor::full(self.shape(*x), gd[0]));
            }
            Op::Mean(x) => {
                let n = T::from_usize(self.value(*x).numel()).unwrap();
                acc(*x, Tensor::full(self.shape(*x), gd[0] / n));
            }
            Op::MeanSpatial(x) => {
                let (n, c, h, w) = self.value(*x).dims4().unwrap();
                let count = T::from_usize(h * w).unwrap();
                let mut dx = Vec::with_capacity(n * c * h * w);
                for &g in gd {
                    dx.extend(std::iter::repeat_n(g / count, h * w));
                }
                acc(*x, Tensor::new(&[n, c, h, w], dx));
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (n, fin) = self.value(*input).dims2().unwrap();
                let fout = self.shape(*weight)[0];
                if self.wants(*input) {
                    let mut dx = vec![T::zero(); n * fin];
                    gemm(n, fout, fin, gd, false, self.value(*weight).data(), false, &mut dx, false);
                    acc(*input, Tensor::new(&[n, fin], dx));
                }
                if self.wants(*weight) {
                    let mut dw = vec![T::zero(); fout * fin];
                    gemm(fout, n, fin, gd, true, self.value(*input).data(), false, &mut dw, false);
                    acc(*weight, Tensor::new(&[fout, fin], dw));
                }
                if let Some(b) = bias.filter(|b| self.wants(*b)) {
                    let mut db = vec![T::zero(); fout];
                    for row in gd.chunks(fout) {
                        db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                    }
                    acc(b, Tensor::new(&[fout], db));
                }
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                acc(*x, grad.reshape(&shape));
            }
            Op::ConcatTile { features, vector } => {
                let (n, c, h, w) = self.value(*features).dims4().unwrap();
                let a = self.shape(*vector)[1];
                let hw = h * w;
                let stride = (c + a) * hw;
                if self.wants(*features) {
                    let mut df = Vec::with_capacity(n * c * hw);
                    for i in 0..n {
                        df.extend_from_slice(&gd[i * stride..i * stride + c * hw]);
                    }
                    acc(*features, Tensor::new(&[n, c, h, w], df));
                }
                if self.wants(*vector) {
                    let mut dv = Vec::with_capacity(n * a);
                    for i in 0..n {
                        for j in 0..a {
                            let start = i * stride + (c + j) * hw;
                            dv.push(gd[start..start + hw].iter().copied().sum());
                        }
                    }
                    acc(*vector, Tensor::new(&[n, a], dv));
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let (n, k) = self.value(*logits).dims2().unwrap();
                let scale = gd[0] / T::from_usize(n).unwrap();
                let mut dz: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (i, &l) in labels.iter().enumerate() {
                    dz[i * k + l] -= scale;
                }
                acc(*logits, Tensor::new(&[n, k], dz));
            }
        }
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn channel_sums<T: Scalar>(g: &[T], n: usize, c: usize, plane: usize) -> Tensor<T> {
    let mut out = vec![T::zero(); c];
    for i in 0..n {
        for (o, slot) in out.iter_mut().enumerate() {
            let start = (i * c + o) * plane;
            *slot += g[start..start + plane].iter().copied().sum::<T>();
        }
    }
    Tensor::new(&[c], out)
}
