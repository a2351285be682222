//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every op appends a node holding its output value and the ids of its
//! inputs. [`Tape::backward`] walks the nodes in exact reverse recording
//! order, so gradients are bit-reproducible. Leaf gradients accumulate across
//! calls until [`Tape::zero_grad`].
//!
//! ```
//! use sq2s_core::{Tape64, Tensor64};
//!
//! let mut tape = Tape64::new();
//! let x = tape.param(Tensor64::new(vec![2], vec![1.0, 2.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```

pub(crate) mod conv;

use conv::ConvGeom;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Abs,
    Softplus,
}

impl Activation {
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Sigmoid => sigmoid(v),
            Activation::Abs => v.abs(),
            Activation::Softplus => v.max(T::zero()) + (-v.abs()).exp().ln_1p(),
        }
    }

    /// Derivative given the input `x` and output `y`.
    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Abs => {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

/// Logistic function, kept strictly inside (0, 1) even where the
/// floating-point result would round to an endpoint.
pub fn sigmoid<T: Scalar>(v: T) -> T {
    let s = if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    };
    let half_eps = T::epsilon() / T::of(2.0);
    s.max(T::min_positive_value()).min(T::one() - half_eps)
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv {
        x: usize,
        k: usize,
        bias: Option<usize>,
        geom: ConvGeom,
        transposed: bool,
    },
    MaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    Dense {
        x: usize,
        w: usize,
        b: usize,
    },
    Pointwise {
        x: usize,
        f: Activation,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Affine {
        x: usize,
        scale: T,
    },
    Exp(usize),
    LnClamped {
        x: usize,
        floor: T,
    },
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    Narrow {
        x: usize,
        outer: usize,
        len: usize,
        start: usize,
        width: usize,
        inner: usize,
    },
    Concat {
        inputs: Vec<usize>,
        outer: usize,
        chunks: Vec<usize>,
    },
    MeanAxis {
        x: usize,
        outer: usize,
        len: usize,
        inner: usize,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv { transposed: true, .. } => "conv_transpose",
            Op::Conv { .. } => "conv",
            Op::MaxPool { .. } => "maxpool3d",
            Op::Dense { .. } => "dense",
            Op::Pointwise { .. } => "pointwise",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::Exp(_) => "exp",
            Op::LnClamped { .. } => "ln",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Reshape(_) => "reshape",
            Op::Narrow { .. } => "narrow",
            Op::Concat { .. } => "concat",
            Op::MeanAxis { .. } => "mean_axis",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
    op: Op<T>,
}

#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
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

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
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

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// A constant copy of `v`'s value; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Result<Var> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(Error::NonFinite(format!("{} (node {})", op.name(), self.nodes.len())));
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn check_bias(&self, op: &'static str, bias: Option<Var>, channels: usize) -> Result<()> {
        if let Some(b) = bias {
            if self.shape(b) != [channels] {
                return Err(Error::shape(op, self.shape(b), &[channels]));
            }
        }
        Ok(())
    }

    fn conv_node(
        &mut self,
        x: Var,
        k: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        transposed: bool,
        out_shape: Vec<usize>,
    ) -> Result<Var> {
        let mut y = vec![T::zero(); out_shape.iter().product()];
        if transposed {
            conv::backward_data(&geom, self.data(x), self.data(k), &mut y);
        } else {
            conv::forward(&geom, self.data(x), self.data(k), &mut y);
        }
        if let Some(b) = bias {
            let per = y.len() / out_shape[0];
            for (chunk, &bv) in y.chunks_mut(per).zip(self.data(b)) {
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
        let mut inputs = vec![x.0, k.0];
        inputs.extend(bias.map(|b| b.0));
        self.push(
            Tensor::from_parts(out_shape, y),
            Op::Conv {
                x: x.0,
                k: k.0,
                bias: bias.map(|b| b.0),
                geom,
                transposed,
            },
            &inputs,
        )
    }

    /// 3-D cross-correlation of `[C_in, T, H, W]` with `[C_out, C_in, kT, kH, kW]`.
    pub fn conv3d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Var> {
        let geom = ConvGeom::forward("conv3d", self.shape(x), self.shape(kernel), stride, padding)?;
        self.check_bias("conv3d", bias, geom.c_out)?;
        self.conv_node(x, kernel, bias, geom, false, geom.output_shape())
    }

    /// 2-D cross-correlation of `[C_in, H, W]` with `[C_out, C_in, kH, kW]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xs, ks) = (self.shape(x), self.shape(kernel));
        if xs.len() != 3 || ks.len() != 4 {
            return Err(Error::shape("conv2d", xs, ks));
        }
        let geom = ConvGeom::forward(
            "conv2d",
            &[xs[0], 1, xs[1], xs[2]],
            &[ks[0], ks[1], 1, ks[2], ks[3]],
            [1, stride, stride],
            [0, padding, padding],
        )?;
        self.check_bias("conv2d", bias, geom.c_out)?;
        let out = vec![geom.c_out, geom.output[1], geom.output[2]];
        self.conv_node(x, kernel, bias, geom, false, out)
    }

    /// Transposed 2-D convolution: the adjoint of [`Tape::conv2d`] with the
    /// same kernel. `x` is `[C, H, W]`, `kernel` is `[C, C_out, kH, kW]`, and
    /// the output is `[C_out, (H-1)*stride - 2*padding + kH, ...]`.
    pub fn conv2d_transpose(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (xs, ks) = (self.shape(x), self.shape(kernel));
        if xs.len() != 3 || ks.len() != 4 {
            return Err(Error::shape("conv2d_transpose", xs, ks));
        }
        let geom = ConvGeom::transposed(
            "conv2d_transpose",
            &[xs[0], 1, xs[1], xs[2]],
            &[ks[0], ks[1], 1, ks[2], ks[3]],
            [1, stride, stride],
            [0, padding, padding],
        )?;
        self.check_bias("conv2d_transpose", bias, geom.c_in)?;
        let out = vec![geom.c_in, geom.input[1], geom.input[2]];
        self.conv_node(x, kernel, bias, geom, true, out)
    }

    /// Transposed 3-D convolution, the adjoint of [`Tape::conv3d`]: `x` is
    /// `[C, T, H, W]`, `kernel` is `[C, C_out, kT, kH, kW]`.
    pub fn conv3d_transpose(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Var> {
        let geom = ConvGeom::transposed(
            "conv3d_transpose",
            self.shape(x),
            self.shape(kernel),
            stride,
            padding,
        )?;
        self.check_bias("conv3d_transpose", bias, geom.c_in)?;
        let out = vec![geom.c_in, geom.input[0], geom.input[1], geom.input[2]];
        self.conv_node(x, kernel, bias, geom, true, out)
    }

    /// Non-overlapping max pooling of `[C, T, H, W]` with window = stride =
    /// `pool`. Every pooled extent must divide evenly; ties route to the
    /// first position in (t, h, w) scan order.
    pub fn maxpool3d(&mut self, x: Var, pool: [usize; 3]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("maxpool3d", &s, &pool));
        }
        if pool.contains(&0) {
            return Err(Error::invalid("maxpool3d: pool sizes must be >= 1"));
        }
        if s[1] % pool[0] != 0 {
            return Err(Error::invalid(format!(
                "maxpool3d: temporal length {} is not divisible by {}",
                s[1], pool[0]
            )));
        }
        if s[2] % pool[1] != 0 || s[3] % pool[2] != 0 {
            return Err(Error::invalid(format!(
                "maxpool3d: spatial size {}x{} is not divisible by {}x{}",
                s[2], s[3], pool[1], pool[2]
            )));
        }
        let (c, t, h, w) = (s[0], s[1], s[2], s[3]);
        let (ot, oh, ow) = (t / pool[0], h / pool[1], w / pool[2]);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(c * ot * oh * ow);
        let mut argmax = Vec::with_capacity(c * ot * oh * ow);
        for ci in 0..c {
            for a in 0..ot {
                for b in 0..oh {
                    for d in 0..ow {
                        let mut best_i = usize::MAX;
                        let mut best = T::zero();
                        for dt in 0..pool[0] {
                            for dh in 0..pool[1] {
                                for dw in 0..pool[2] {
                                    let i = ((ci * t + a * pool[0] + dt) * h + b * pool[1] + dh) * w
                                        + d * pool[2]
                                        + dw;
                                    if best_i == usize::MAX || xd[i] > best {
                                        best = xd[i];
                                        best_i = i;
                                    }
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(best_i);
                    }
                }
            }
        }
        self.push(
            Tensor::from_parts(vec![c, ot, oh, ow], out),
            Op::MaxPool { x: x.0, argmax },
            &[x.0],
        )
    }

    /// Pooling that halves the temporal axis only; odd lengths are an error.
    pub fn maxpool3d_temporal(&mut self, x: Var, spatial: [usize; 2]) -> Result<Var> {
        self.maxpool3d(x, [2, spatial[0], spatial[1]])
    }

    /// `weights · x + bias` for `x: [n]`, `weights: [m, n]`, `bias: [m]`.
    pub fn dense(&mut self, x: Var, weights: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(weights), self.shape(bias));
        if xs.len() != 1 || ws.len() != 2 || ws[1] != xs[0] {
            return Err(Error::shape("dense", ws, xs));
        }
        if bs != [ws[0]] {
            return Err(Error::shape("dense", bs, &ws[..1]));
        }
        let (m, n) = (ws[0], ws[1]);
        let (xd, wd, bd) = (self.data(x), self.data(weights), self.data(bias));
        let y: Vec<T> = (0..m)
            .map(|i| {
                wd[i * n..(i + 1) * n]
                    .iter()
                    .zip(xd)
                    .fold(bd[i], |acc, (&w, &v)| acc + w * v)
            })
            .collect();
        self.push(
            Tensor::from_parts(vec![m], y),
            Op::Dense {
                x: x.0,
                w: weights.0,
                b: bias.0,
            },
            &[x.0, weights.0, bias.0],
        )
    }

    pub fn pointwise(&mut self, x: Var, f: Activation) -> Result<Var> {
        let value = self.value(x).map(|v| f.apply(v));
        self.push(value, Op::Pointwise { x: x.0, f }, &[x.0])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.pointwise(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.pointwise(x, Activation::Sigmoid)
    }

    fn zip_with(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_parts(self.shape(a).to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("add", a, b, |x, y| x + y)?;
        self.push(v, Op::Add(a.0, b.0), &[a.0, b.0])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("sub", a, b, |x, y| x - y)?;
        self.push(v, Op::Sub(a.0, b.0), &[a.0, b.0])
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("mul", a, b, |x, y| x * y)?;
        self.push(v, Op::Mul(a.0, b.0), &[a.0, b.0])
    }

    /// `scale * x + shift`
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Result<Var> {
        let v = self.value(x).map(|v| scale * v + shift);
        self.push(v, Op::Affine { x: x.0, scale }, &[x.0])
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Result<Var> {
        self.affine(x, scale, T::zero())
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|v| v.exp());
        self.push(v, Op::Exp(x.0), &[x.0])
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn ln_clamped(&mut self, x: Var, floor: T) -> Result<Var> {
        if floor <= T::zero() {
            return Err(Error::invalid("ln_clamped: floor must be positive"));
        }
        let v = self.value(x).map(|v| v.max(floor).ln());
        self.push(v, Op::LnClamped { x: x.0, floor }, &[x.0])
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x.0), &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let v = Tensor::scalar(t.sum() / T::of(t.len() as f64));
        self.push(v, Op::Mean(x.0), &[x.0])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        self.push(v, Op::Reshape(x.0), &[x.0])
    }

    fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
        let outer = shape[..axis].iter().product();
        let inner = shape[axis + 1..].iter().product();
        (outer, shape[axis], inner)
    }

    /// The slice `[start, start + width)` of `x` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, width: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || width == 0 || start + width > shape[axis] {
            return Err(Error::invalid(format!(
                "narrow [{start}, {}) along axis {axis} of {shape:?}",
                start + width
            )));
        }
        let (outer, len, inner) = Self::split_at_axis(&shape, axis);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            out.extend_from_slice(&xd[(o * len + start) * inner..(o * len + start + width) * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = width;
        self.push(
            Tensor::from_parts(oshape, out),
            Op::Narrow {
                x: x.0,
                outer,
                len,
                start,
                width,
                inner,
            },
            &[x.0],
        )
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(format!("concat axis {axis} of {base:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let agrees = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !agrees {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = Self::split_at_axis(&base, axis);
        let chunks: Vec<usize> = xs.iter().map(|&v| self.shape(v)[axis] * inner).collect();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &c) in xs.iter().zip(&chunks) {
                out.extend_from_slice(&self.data(v)[o * c..(o + 1) * c]);
            }
        }
        let mut oshape = base;
        oshape[axis] = total;
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        self.push(
            Tensor::from_parts(oshape, out),
            Op::Concat {
                inputs: ids.clone(),
                outer,
                chunks,
            },
            &ids,
        )
    }

    /// Mean along `axis`, keeping it as an extent-1 dimension.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(format!("mean_axis {axis} of {shape:?}")));
        }
        let (outer, len, inner) = Self::split_at_axis(&shape, axis);
        let xd = self.data(x);
        let n = T::of(len as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &xd[(o * len + l) * inner..][..inner];
                for (acc, &v) in out[o * inner..][..inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= n);
        let mut oshape = shape;
        oshape[axis] = 1;
        self.push(
            Tensor::from_parts(oshape, out),
            Op::MeanAxis {
                x: x.0,
                outer,
                len,
                inner,
            },
            &[x.0],
        )
    }

    /// Global average of each leading-axis channel: `[C, ...] -> [C]`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape
            .first()
            .ok_or_else(|| Error::invalid("channel_mean of a rank-0 tensor"))?;
        let rest = shape[1..].iter().product::<usize>();
        let flat = self.reshape(x, &[c, rest])?;
        let m = self.mean_axis(flat, 1)?;
        self.reshape(m, &[c])
    }

    /// Reverse pass from a one-element `loss`. Leaf gradients are added to
    /// whatever an earlier pass left there.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::invalid("backward on an empty tape"));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads: Vec<(usize, Vec<T>)> = Vec::new();

        // Gradient buffer of node `i`, created on first touch. Returns None
        // for nodes that do not need gradients.
        fn slot<'a, T: Scalar>(
            grads: &'a mut [Option<Vec<T>>],
            nodes: &[Node<T>],
            i: usize,
        ) -> Option<&'a mut Vec<T>> {
            if !nodes[i].requires_grad {
                return None;
            }
            Some(grads[i].get_or_insert_with(|| vec![T::zero(); nodes[i].value.len()]))
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => leaf_grads.push((i, g)),
                Op::Conv {
                    x,
                    k,
                    bias,
                    geom,
                    transposed,
                } => {
                    let (xd, kd) = (nodes[*x].value.data(), nodes[*k].value.data());
                    if let Some(b) = *bias {
                        if let Some(gb) = slot(&mut grads, nodes, b) {
                            let per = g.len() / gb.len();
                            for (acc, chunk) in gb.iter_mut().zip(g.chunks(per)) {
                                *acc += chunk.iter().copied().sum::<T>();
                            }
                        }
                    }
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        if *transposed {
                            conv::forward(geom, &g, kd, gx);
                        } else {
                            conv::backward_data(geom, &g, kd, gx);
                        }
                    }
                    if let Some(gk) = slot(&mut grads, nodes, *k) {
                        if *transposed {
                            conv::backward_kernel(geom, &g, xd, gk);
                        } else {
                            conv::backward_kernel(geom, xd, &g, gk);
                        }
                    }
                }
                Op::MaxPool { x, argmax } => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for (&j, &gv) in argmax.iter().zip(&g) {
                            gx[j] += gv;
                        }
                    }
                }
                Op::Dense { x, w, b } => {
                    let n = nodes[*x].value.len();
                    let (xd, wd) = (nodes[*x].value.data(), nodes[*w].value.data());
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        for (acc, &gv) in gb.iter_mut().zip(&g) {
                            *acc += gv;
                        }
                    }
                    if let Some(gw) = slot(&mut grads, nodes, *w) {
                        for (row, &gv) in gw.chunks_mut(n).zip(&g) {
                            for (acc, &xv) in row.iter_mut().zip(xd) {
                                *acc += gv * xv;
                            }
                        }
                    }
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for (row, &gv) in wd.chunks(n).zip(&g) {
                            for (acc, &wv) in gx.iter_mut().zip(row) {
                                *acc += gv * wv;
                            }
                        }
                    }
                }
                Op::Pointwise { x, f } => {
                    let (xd, yd) = (nodes[*x].value.data(), node.value.data());
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for (((acc, &gv), &xv), &yv) in gx.iter_mut().zip(&g).zip(xd).zip(yd) {
                            *acc += gv * f.derivative(xv, yv);
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let negate = matches!(node.op, Op::Sub(..));
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        ga.iter_mut().zip(&g).for_each(|(acc, &gv)| *acc += gv);
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        if negate {
                            gb.iter_mut().zip(&g).for_each(|(acc, &gv)| *acc -= gv);
                        } else {
                            gb.iter_mut().zip(&g).for_each(|(acc, &gv)| *acc += gv);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (nodes[*a].value.data(), nodes[*b].value.data());
                    if let Some(ga) = slot(&mut grads, nodes, *a) {
                        for ((acc, &gv), &bv) in ga.iter_mut().zip(&g).zip(bd) {
                            *acc += gv * bv;
                        }
                    }
                    if let Some(gb) = slot(&mut grads, nodes, *b) {
                        for ((acc, &gv), &av) in gb.iter_mut().zip(&g).zip(ad) {
                            *acc += gv * av;
                        }
                    }
                }
                Op::Affine { x, scale } => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        gx.iter_mut().zip(&g).for_each(|(acc, &gv)| *acc += gv * *scale);
                    }
                }
                Op::Exp(x) => {
                    let yd = node.value.data();
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for ((acc, &gv), &yv) in gx.iter_mut().zip(&g).zip(yd) {
                            *acc += gv * yv;
                        }
                    }
                }
                Op::LnClamped { x, floor } => {
                    let xd = nodes[*x].value.data();
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for ((acc, &gv), &xv) in gx.iter_mut().zip(&g).zip(xd) {
                            if xv > *floor {
                                *acc += gv / xv;
                            }
                        }
                    }
                }
                Op::Sum(x) | Op::Mean(x) => {
                    let mut gv = g[0];
                    if matches!(node.op, Op::Mean(_)) {
                        gv /= T::of(nodes[*x].value.len() as f64);
                    }
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        gx.iter_mut().for_each(|acc| *acc += gv);
                    }
                }
                Op::Reshape(x) => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        gx.iter_mut().zip(&g).for_each(|(acc, &gv)| *acc += gv);
                    }
                }
                Op::Narrow {
                    x,
                    outer,
                    len,
                    start,
                    width,
                    inner,
                } => {
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        let w = width * inner;
                        for o in 0..*outer {
                            let dst = &mut gx[(o * len + start) * inner..][..w];
                            for (acc, &gv) in dst.iter_mut().zip(&g[o * w..(o + 1) * w]) {
                                *acc += gv;
                            }
                        }
                    }
                }
                Op::Concat {
                    inputs,
                    outer,
                    chunks,
                } => {
                    let row: usize = chunks.iter().sum();
                    let mut offset = 0;
                    for (&v, &c) in inputs.iter().zip(chunks) {
                        if let Some(gv) = slot(&mut grads, nodes, v) {
                            for o in 0..*outer {
                                let src = &g[o * row + offset..][..c];
                                for (acc, &s) in gv[o * c..(o + 1) * c].iter_mut().zip(src) {
                                    *acc += s;
                                }
                            }
                        }
                        offset += c;
                    }
                }
                Op::MeanAxis {
                    x,
                    outer,
                    len,
                    inner,
                } => {
                    let n = T::of(*len as f64);
                    if let Some(gx) = slot(&mut grads, nodes, *x) {
                        for o in 0..*outer {
                            let src = &g[o * inner..(o + 1) * inner];
                            for l in 0..*len {
                                for (acc, &s) in gx[(o * len + l) * inner..][..*inner].iter_mut().zip(src) {
                                    *acc += s / n;
                                }
                            }
                        }
                    }
                }
            }
        }

        for (i, g) in leaf_grads {
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, &v)| *a += v),
                None => node.grad = Some(Tensor::from_parts(node.value.shape().to_vec(), g)),
            }
        }
        Ok(())
    }
}
