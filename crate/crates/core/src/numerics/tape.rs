//! Reverse-mode gradient tape.
//!
//! Every operation appends a node holding its output value and a record of
//! its inputs. Inputs always precede outputs, so walking the node list from
//! the back is a valid reverse topological order.

use crate::error::{Error, Result};
use crate::lorentz::pixel;
use crate::numerics::conv::{self, ConvGeom};
use crate::numerics::tensor::numel;
use crate::numerics::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Abs,
    Square,
    Sqrt,
    Scale(f64),
    AddScalar(f64),
    Powf(f64),
    /// Squares its input but back-propagates `x` instead of `2x`.
    /// Exists only as a negative control for gradient checking.
    #[doc(hidden)]
    FaultySquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op<T: Real> {
    Leaf,
    Unary(Var, Unary),
    Binary(Var, Var, Binary),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Gap(Var),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    InstanceNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Upsample2x(Var),
    ReconstructTime {
        s: Var,
    },
    LogMapOrigin {
        x: Var,
        k: f64,
    },
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Single-owner record of executed operations.
#[derive(Debug, Default)]
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

/// Inner block length when broadcasting `b` against `a`: `b[i / inner]`
/// pairs with `a[i]`. Accepts scalars and `b` shapes that agree with `a` on
/// a leading run of axes and are 1 elsewhere (per-channel against a map,
/// per-row against a matrix).
fn broadcast_inner(a: &[usize], b: &[usize]) -> Result<usize> {
    let n = numel(a);
    if numel(b) == 1 {
        return Ok(n);
    }
    if a == b {
        return Ok(1);
    }
    if a.len() == b.len() {
        let r = a.iter().zip(b).take_while(|(x, y)| x == y).count();
        if b[r..].iter().all(|&e| e == 1) {
            return Ok(numel(&a[r..]));
        }
    }
    Err(Error::dim(format!("cannot broadcast {b:?} against {a:?}")))
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
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

    /// Gradient of the last `backward` loss with respect to `v`, if `v` was
    /// on a differentiable path.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Registers a leaf. Its `requires_grad` flag decides whether it
    /// receives a gradient.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let needs_grad = t.requires_grad;
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        value.check_finite(name)?;
        let needs_grad = self.inputs(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Unary(x, _)
            | Op::Transpose(x)
            | Op::Reshape(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::SumAxis(x, _)
            | Op::Gap(x)
            | Op::Narrow { x, .. }
            | Op::Upsample2x(x)
            | Op::ReconstructTime { s: x, .. }
            | Op::LogMapOrigin { x, .. } => vec![*x],
            Op::Binary(a, b, _) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::Concat { xs, .. } => xs.clone(),
            Op::InstanceNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }

    // ----- pointwise -------------------------------------------------------

    pub fn unary(&mut self, x: Var, op: Unary) -> Result<Var> {
        let xv = self.value(x);
        let out = match op {
            Unary::Relu => xv.map(|v| v.max(T::zero())),
            Unary::LeakyRelu(a) => {
                let a = T::of(a);
                xv.map(|v| if v > T::zero() { v } else { a * v })
            }
            Unary::Sigmoid => xv.map(|v| T::one() / (T::one() + (-v).exp())),
            Unary::Abs => xv.map(|v| v.abs()),
            Unary::Square | Unary::FaultySquare => xv.map(|v| v * v),
            Unary::Sqrt => xv.map(|v| v.sqrt()),
            Unary::Scale(c) => {
                let c = T::of(c);
                xv.map(|v| v * c)
            }
            Unary::AddScalar(c) => {
                let c = T::of(c);
                xv.map(|v| v + c)
            }
            Unary::Powf(p) => {
                let p = T::of(p);
                xv.map(|v| v.powf(p))
            }
        };
        let name = match op {
            Unary::Relu => "relu",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Sigmoid => "sigmoid",
            Unary::Abs => "abs",
            Unary::Square => "square",
            Unary::Sqrt => "sqrt",
            Unary::Scale(_) => "scale",
            Unary::AddScalar(_) => "add_scalar",
            Unary::Powf(_) => "powf",
            Unary::FaultySquare => "faulty_square",
        };
        self.push(out, Op::Unary(x, op), name)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Relu)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(x, Unary::LeakyRelu(slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Abs)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Square)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sqrt)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, Unary::Scale(c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, Unary::AddScalar(c))
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Result<Var> {
        self.unary(x, Unary::Powf(p))
    }

    /// `b` may be a scalar or a leading-axes broadcast of `a` (see
    /// [`Tape::mul`]).
    pub fn binary(&mut self, a: Var, b: Var, op: Binary) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let inner = broadcast_inner(av.shape(), bv.shape())?;
        let bd = bv.data();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = bd[i / inner];
                match op {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                    Binary::Div => x / y,
                }
            })
            .collect();
        let out = Tensor::new(av.shape(), data)?;
        let name = match op {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        self.push(out, Op::Binary(a, b, op), name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    /// Elementwise product. `b` may be a scalar, equal-shaped, or shaped like
    /// `a` with trailing extents set to 1 (e.g. `B×C×1×1` against `B×C×H×W`).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Div)
    }

    // ----- linear algebra --------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (&[m, k], &[k2, n]) = (av.shape(), bv.shape()) else {
            return Err(Error::dim(format!(
                "matmul expects matrices, got {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        };
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner extents differ: {m}x{k} by {k2}x{n}"
            )));
        }
        let out = Tensor::new(&[m, n], matmul_raw(av.data(), bv.data(), m, k, n))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let &[m, n] = xv.shape() else {
            return Err(Error::dim(format!("transpose expects a matrix, got {:?}", xv.shape())));
        };
        let out = Tensor::new(&[n, m], transpose_raw(xv.data(), m, n))?;
        self.push(out, Op::Transpose(x), "transpose")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?.with_requires_grad(false);
        self.push(out, Op::Reshape(x), "reshape")
    }

    // ----- convolution and pooling -----------------------------------------

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, pad)?;
        if let Some(b) = b {
            if self.shape(b) != [geom.out_ch] {
                return Err(Error::dim(format!(
                    "conv2d bias shape {:?}, expected [{}]",
                    self.shape(b),
                    geom.out_ch
                )));
            }
        }
        let data = conv::forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let out = Tensor::new(&geom.out_shape(), data)?;
        self.push(out, Op::Conv2d { x, w, b, geom }, "conv2d")
    }

    /// Global average pooling: `B×C×H×W -> B×C×1×1`.
    pub fn gap(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 4 {
            return Err(Error::dim(format!("gap expects rank 4, got {:?}", xv.shape())));
        }
        let [b, c, h, w] = xv.dims4();
        let hw = h * w;
        let inv = T::of(1.0 / hw as f64);
        let data = xv
            .data()
            .chunks(hw)
            .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) * inv)
            .collect();
        let out = Tensor::new(&[b, c, 1, 1], data)?;
        self.push(out, Op::Gap(x), "gap")
    }

    /// Bilinear ×2 upsampling with half-pixel centres and edge clamping.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 4 {
            return Err(Error::dim(format!("upsample2x expects rank 4, got {:?}", xv.shape())));
        }
        let [b, c, h, w] = xv.dims4();
        let (ys, xs) = (bilinear_taps(h), bilinear_taps(w));
        let (oh, ow) = (2 * h, 2 * w);
        let mut data = vec![T::zero(); b * c * oh * ow];
        for (plane, dst) in xv.data().chunks(h * w).zip(data.chunks_mut(oh * ow)) {
            for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                    let (ly, lx) = (T::of(ly), T::of(lx));
                    let top = plane[y0 * w + x0] * (T::one() - lx) + plane[y0 * w + x1] * lx;
                    let bot = plane[y1 * w + x0] * (T::one() - lx) + plane[y1 * w + x1] * lx;
                    dst[oy * ow + ox] = top * (T::one() - ly) + bot * ly;
                }
            }
        }
        let out = Tensor::new(&[b, c, oh, ow], data)?;
        self.push(out, Op::Upsample2x(x), "upsample2x")
    }

    // ----- reductions and restructuring --------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().fold(T::zero(), |a, &v| a + v);
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.data().iter().fold(T::zero(), |a, &v| a + v) / T::of(xv.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x), "mean")
    }

    /// Sums over `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(Error::dim(format!("sum_axis({axis}) on {:?}", xv.shape())));
        }
        let shape = xv.shape();
        let (outer, ext, inner) = (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]));
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for e in 0..ext {
                let src = &xv.data()[(o * ext + e) * inner..][..inner];
                for (d, &v) in data[o * inner..][..inner].iter_mut().zip(src) {
                    *d = *d + v;
                }
            }
        }
        let mut oshape = shape.to_vec();
        oshape[axis] = 1;
        let out = Tensor::new(&oshape, data)?;
        self.push(out, Op::SumAxis(x, axis), "sum_axis")
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).narrow(axis, start, len)?;
        self.push(out, Op::Narrow { x, axis, start }, "narrow")
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let parts: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat(&parts, axis)?;
        self.push(
            out,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            "concat",
        )
    }

    // ----- normalization -----------------------------------------------------

    /// Per-sample, per-channel normalization over `H×W` followed by a
    /// per-channel affine map. `gamma` and `beta` have shape `[C]`.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 4 {
            return Err(Error::dim(format!("instance_norm expects rank 4, got {:?}", xv.shape())));
        }
        let [b, c, h, w] = xv.dims4();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim(format!(
                "instance_norm affine shapes {:?}/{:?}, expected [{c}]",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let hw = h * w;
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut inv_std = Vec::with_capacity(b * c);
        let mut data = Vec::with_capacity(xv.numel());
        for (i, plane) in xv.data().chunks(hw).enumerate() {
            let ch = i % c;
            let mean = plane.iter().map(|v| v.f64()).sum::<f64>() / hw as f64;
            let var = plane.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / hw as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(T::of(is));
            for &v in plane {
                let xh = T::of((v.f64() - mean) * is);
                xhat.push(xh);
                data.push(gd[ch] * xh + bd[ch]);
            }
        }
        let out = Tensor::new(&[b, c, h, w], data)?;
        self.push(
            out,
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            "instance_norm",
        )
    }

    // ----- Lorentz maps --------------------------------------------------

    /// Appends the temporal channel `t = √(k + ‖s‖²)` in front of the
    /// spatial channels: `B×C×H×W -> B×(1+C)×H×W`.
    pub fn reconstruct_time(&mut self, s: Var, k: f64) -> Result<Var> {
        let sv = self.value(s);
        if sv.rank() != 4 {
            return Err(Error::dim(format!(
                "reconstruct_time expects rank 4, got {:?}",
                sv.shape()
            )));
        }
        let [b, c, h, w] = sv.dims4();
        let hw = h * w;
        let mut data = vec![T::zero(); b * (c + 1) * hw];
        for bi in 0..b {
            let src = &sv.data()[bi * c * hw..][..c * hw];
            let dst = &mut data[bi * (c + 1) * hw..][..(c + 1) * hw];
            dst[hw..].copy_from_slice(src);
            for p in 0..hw {
                let sq = pixel::sq_norm((0..c).map(|ch| src[ch * hw + p].f64()));
                dst[p] = T::of(pixel::time_from_sq(sq, k));
            }
        }
        let out = Tensor::new(&[b, c + 1, h, w], data)?;
        self.push(out, Op::ReconstructTime { s }, "reconstruct_time")
    }

    /// Pointwise logarithmic map at the origin, returning only the spatial
    /// part of the tangent: `B×(1+C)×H×W -> B×C×H×W`.
    pub fn log_map_origin(&mut self, x: Var, k: f64) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 4 || xv.shape()[1] < 2 {
            return Err(Error::dim(format!(
                "log_map_origin expects B×(1+C)×H×W with C ≥ 1, got {:?}",
                xv.shape()
            )));
        }
        let [b, c1, h, w] = xv.dims4();
        let (c, hw) = (c1 - 1, h * w);
        let mut data = vec![T::zero(); b * c * hw];
        let (mut s, mut y) = (vec![0.0; c], vec![0.0; c]);
        for bi in 0..b {
            let src = &xv.data()[bi * c1 * hw..][..c1 * hw];
            let dst = &mut data[bi * c * hw..][..c * hw];
            for p in 0..hw {
                for ch in 0..c {
                    s[ch] = src[(ch + 1) * hw + p].f64();
                }
                pixel::log_origin(src[p].f64(), &s, k, &mut y);
                for ch in 0..c {
                    dst[ch * hw + p] = T::of(y[ch]);
                }
            }
        }
        let out = Tensor::new(&[b, c, h, w], data)?;
        self.push(out, Op::LogMapOrigin { x, k }, "log_map_origin")
    }

    /// Test-only op with a wrong backward rule.
    #[doc(hidden)]
    pub fn faulty_square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::FaultySquare)
    }

    // ----- backward --------------------------------------------------------

    /// Back-propagates from the scalar `loss`, filling the gradient of every
    /// node on a differentiable path and the `grad` slot of every leaf that
    /// requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                for (v, contrib) in self.local_grads(i, &g) {
                    if !self.nodes[v.0].needs_grad {
                        continue;
                    }
                    match &mut grads[v.0] {
                        Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a = *a + *c),
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(&grads) {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad {
                let g = g
                    .clone()
                    .unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Numeric {
                        op: "backward",
                        detail: format!("non-finite gradient at flat index {i}"),
                    });
                }
                node.value.grad = Some(g);
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Contributions of node `i`'s output gradient `g` to its inputs.
    fn local_grads(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => vec![],
            Op::Unary(x, op) => {
                let xd = self.value(*x).data();
                let yd = out.data();
                let gx = g
                    .iter()
                    .zip(xd)
                    .zip(yd)
                    .map(|((&g, &x), &y)| {
                        g * match *op {
                            Unary::Relu => {
                                if x > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::LeakyRelu(a) => {
                                if x > T::zero() {
                                    T::one()
                                } else {
                                    T::of(a)
                                }
                            }
                            Unary::Sigmoid => y * (T::one() - y),
                            Unary::Abs => {
                                if x > T::zero() {
                                    T::one()
                                } else if x < T::zero() {
                                    -T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Square => T::of(2.0) * x,
                            Unary::FaultySquare => x,
                            Unary::Sqrt => T::of(0.5) / y,
                            Unary::Scale(c) => T::of(c),
                            Unary::AddScalar(_) => T::one(),
                            Unary::Powf(p) => T::of(p) * x.powf(T::of(p - 1.0)),
                        }
                    })
                    .collect();
                vec![(*x, gx)]
            }
            Op::Binary(a, b, op) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let inner = broadcast_inner(av.shape(), bv.shape()).expect("checked in forward");
                let (ad, bd) = (av.data(), bv.data());
                let mut ga = Vec::with_capacity(ad.len());
                let mut gb = vec![T::zero(); bd.len()];
                for (idx, (&g, &x)) in g.iter().zip(ad).enumerate() {
                    let j = idx / inner;
                    let y = bd[j];
                    let (da, db) = match op {
                        Binary::Add => (T::one(), T::one()),
                        Binary::Sub => (T::one(), -T::one()),
                        Binary::Mul => (y, x),
                        Binary::Div => (T::one() / y, -x / (y * y)),
                    };
                    ga.push(g * da);
                    gb[j] = gb[j] + g * db;
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                let bt = transpose_raw(bv.data(), k, n);
                let at = transpose_raw(av.data(), m, k);
                vec![
                    (*a, matmul_raw(g, &bt, m, n, k)),
                    (*b, matmul_raw(&at, g, k, m, n)),
                ]
            }
            Op::Transpose(x) => {
                let &[n, m] = out.shape() else { unreachable!() };
                vec![(*x, transpose_raw(g, n, m))]
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Conv2d { x, w, b, geom } => {
                let mut res = Vec::with_capacity(3);
                if self.nodes[x.0].needs_grad {
                    res.push((*x, conv::backward_input(geom, g, self.value(*w).data())));
                }
                let want_w = self.nodes[w.0].needs_grad;
                let want_b = b.is_some_and(|b| self.nodes[b.0].needs_grad);
                if want_w || want_b {
                    let (gw, gb) = conv::backward_params(geom, g, self.value(*x).data());
                    res.push((*w, gw));
                    if let Some(b) = b {
                        res.push((*b, gb));
                    }
                }
                res
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).numel()])],
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                vec![(*x, vec![g[0] / T::of(n as f64); n])]
            }
            Op::SumAxis(x, axis) => {
                let shape = self.shape(*x);
                let (outer, ext, inner) =
                    (numel(&shape[..*axis]), shape[*axis], numel(&shape[axis + 1..]));
                let mut gx = Vec::with_capacity(outer * ext * inner);
                for o in 0..outer {
                    for _ in 0..ext {
                        gx.extend_from_slice(&g[o * inner..][..inner]);
                    }
                }
                vec![(*x, gx)]
            }
            Op::Gap(x) => {
                let [_, _, h, w] = self.value(*x).dims4();
                let hw = h * w;
                let inv = T::of(1.0 / hw as f64);
                let gx = g.iter().flat_map(|&v| std::iter::repeat_n(v * inv, hw)).collect();
                vec![(*x, gx)]
            }
            Op::Narrow { x, axis, start } => {
                let shape = self.shape(*x);
                let (outer, ext, inner) =
                    (numel(&shape[..*axis]), shape[*axis], numel(&shape[axis + 1..]));
                let len = out.shape()[*axis];
                let mut gx = vec![T::zero(); numel(shape)];
                for o in 0..outer {
                    let dst = (o * ext + start) * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..][..len * inner]);
                }
                vec![(*x, gx)]
            }
            Op::Concat { xs, axis } => {
                let oshape = out.shape();
                let (outer, inner) = (numel(&oshape[..*axis]), numel(&oshape[axis + 1..]));
                let total = oshape[*axis];
                let mut res = Vec::with_capacity(xs.len());
                let mut offset = 0;
                for &v in xs {
                    let ext = self.shape(v)[*axis];
                    let mut gx = Vec::with_capacity(outer * ext * inner);
                    for o in 0..outer {
                        gx.extend_from_slice(&g[(o * total + offset) * inner..][..ext * inner]);
                    }
                    offset += ext;
                    res.push((v, gx));
                }
                res
            }
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let [b, c, h, w] = out.dims4();
                let hw = h * w;
                let gd = self.value(*gamma).data();
                let mut gx = vec![T::zero(); b * c * hw];
                let mut ggamma = vec![T::zero(); c];
                let mut gbeta = vec![T::zero(); c];
                for plane in 0..b * c {
                    let ch = plane % c;
                    let gp = &g[plane * hw..][..hw];
                    let xp = &xhat[plane * hw..][..hw];
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for (&gv, &xh) in gp.iter().zip(xp) {
                        sum_g += gv.f64();
                        sum_gx += gv.f64() * xh.f64();
                    }
                    ggamma[ch] = ggamma[ch] + T::of(sum_gx);
                    gbeta[ch] = gbeta[ch] + T::of(sum_g);
                    let gam = gd[ch].f64();
                    let is = inv_std[plane].f64();
                    let (mg, mgx) = (sum_g / hw as f64, sum_gx / hw as f64);
                    for ((d, &gv), &xh) in gx[plane * hw..][..hw].iter_mut().zip(gp).zip(xp) {
                        *d = T::of(gam * is * (gv.f64() - mg - xh.f64() * mgx));
                    }
                }
                vec![(*x, gx), (*gamma, ggamma), (*beta, gbeta)]
            }
            Op::Upsample2x(x) => {
                let [_, _, h, w] = self.value(*x).dims4();
                let (ys, xs) = (bilinear_taps(h), bilinear_taps(w));
                let (oh, ow) = (2 * h, 2 * w);
                let mut gx = vec![T::zero(); self.value(*x).numel()];
                for (dst, gp) in gx.chunks_mut(h * w).zip(g.chunks(oh * ow)) {
                    for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
                        for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                            let gv = gp[oy * ow + ox];
                            let (ly, lx) = (T::of(ly), T::of(lx));
                            let (one_y, one_x) = (T::one() - ly, T::one() - lx);
                            dst[y0 * w + x0] = dst[y0 * w + x0] + gv * one_y * one_x;
                            dst[y0 * w + x1] = dst[y0 * w + x1] + gv * one_y * lx;
                            dst[y1 * w + x0] = dst[y1 * w + x0] + gv * ly * one_x;
                            dst[y1 * w + x1] = dst[y1 * w + x1] + gv * ly * lx;
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::ReconstructTime { s, .. } => {
                let [b, c1, h, w] = out.dims4();
                let (c, hw) = (c1 - 1, h * w);
                let sd = self.value(*s).data();
                let od = out.data();
                let mut gs = vec![T::zero(); b * c * hw];
                for bi in 0..b {
                    let gsrc = &g[bi * c1 * hw..][..c1 * hw];
                    let tsrc = &od[bi * c1 * hw..][..hw];
                    let ssrc = &sd[bi * c * hw..][..c * hw];
                    let dst = &mut gs[bi * c * hw..][..c * hw];
                    for ch in 0..c {
                        for p in 0..hw {
                            let i = ch * hw + p;
                            dst[i] = gsrc[hw + i] + gsrc[p] * ssrc[i] / tsrc[p];
                        }
                    }
                }
                vec![(*s, gs)]
            }
            Op::LogMapOrigin { x, k } => {
                let xv = self.value(*x);
                let [b, c1, h, w] = xv.dims4();
                let (c, hw) = (c1 - 1, h * w);
                let mut gx = vec![T::zero(); xv.numel()];
                let (mut s, mut gy, mut gs) = (vec![0.0; c], vec![0.0; c], vec![0.0; c]);
                for bi in 0..b {
                    let src = &xv.data()[bi * c1 * hw..][..c1 * hw];
                    let gsrc = &g[bi * c * hw..][..c * hw];
                    let dst = &mut gx[bi * c1 * hw..][..c1 * hw];
                    for p in 0..hw {
                        for ch in 0..c {
                            s[ch] = src[(ch + 1) * hw + p].f64();
                            gy[ch] = gsrc[ch * hw + p].f64();
                        }
                        let gt = pixel::log_origin_vjp(src[p].f64(), &s, *k, &gy, &mut gs);
                        dst[p] = T::of(gt);
                        for ch in 0..c {
                            dst[(ch + 1) * hw + p] = T::of(gs[ch]);
                        }
                    }
                }
                vec![(*x, gx)]
            }
        }
    }
}

pub(crate) fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut c[i * n..][..n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (d, &bv) in row.iter_mut().zip(&b[p * n..][..n]) {
                *d = *d + av * bv;
            }
        }
    }
    c
}

pub(crate) fn transpose_raw<T: Real>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut t = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

/// For each output row of a ×2 bilinear resize: the two source rows and the
/// weight of the second.
fn bilinear_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}
