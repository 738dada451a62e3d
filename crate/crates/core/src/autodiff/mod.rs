//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles in execution
//! order, so entries are already topologically sorted. [`Tape::backward`]
//! walks the tape once in reverse and returns gradients for the leaves.
//! Values produced by operations are checked for NaN/Inf at creation time.

pub mod batchnorm;
pub mod conv;

use std::cell::RefCell;
use std::rc::Rc;

pub use batchnorm::{BatchStats, BN_EPS, BN_MOMENTUM};
pub use conv::ConvGeom;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub type NodeId = usize;

enum Op<T: Element> {
    Leaf,
    Constant,
    Conv2d { x: NodeId, k: NodeId, b: NodeId, geom: ConvGeom },
    Deconv2d { x: NodeId, k: NodeId, b: NodeId, geom: ConvGeom },
    BatchNormTrain { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Tensor<T>, inv_std: Vec<T> },
    BatchNormEval { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<T>, inv_std: Vec<T> },
    Prelu { x: NodeId, slope: NodeId },
    Relu { x: NodeId },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    MaxPool2 { x: NodeId, argmax: Vec<usize> },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: T },
    OneMinus { x: NodeId },
    Square { x: NodeId },
    Sum { x: NodeId },
    ConcatChannels { a: NodeId, b: NodeId },
    SampleMean { x: NodeId },
    Mse { a: NodeId, b: NodeId },
    NegLogMean { x: NodeId, eps: T },
    WeightedSum { x: NodeId, w: Tensor<T> },
}

struct Node<T: Element> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of a forward computation.
pub struct Tape<T: Element = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T: Element = f32> {
    tape: &'t Tape<T>,
    id: NodeId,
}

impl<T: Element> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Element> Copy for Var<'_, T> {}

impl<T: Element> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input (a trainable parameter or a checked input).
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.insert(value, Op::Leaf, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.insert(value, Op::Constant, false)
    }

    fn insert(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: NodeId) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn record(&self, name: &str, value: Tensor<T>, op: Op<T>, inputs: &[NodeId]) -> Result<Var<'_, T>> {
        let value = value.ensure_finite(name)?;
        let requires_grad = inputs.iter().any(|&i| self.requires_grad(i));
        Ok(self.insert(value, op, requires_grad))
    }

    /// Gradients of the scalar `loss` with respect to every leaf it depends on.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if !root.value.is_scalar() {
            return Err(Error::Graph(format!("loss must be scalar, got shape {:?}", root.value.shape())));
        }
        if !root.requires_grad {
            return Err(Error::Graph("loss is detached from every leaf".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            for (input, grad) in backward_op(&nodes, node, &g)? {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&grad)?,
                    slot => *slot = Some(grad),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T: Element = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a leaf, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of a leaf, zero-filled when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}

fn shape_err(op: &'static str, a: &Tensor<impl Element>, b: &Tensor<impl Element>) -> Error {
    Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape()))
}

impl<'t, T: Element> Var<'t, T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn same_tape(&self, other: &Var<'_, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Graph("operands recorded on different tapes".into()))
        }
    }

    pub fn conv2d(self, kernel: Var<'t, T>, bias: Var<'t, T>, geom: ConvGeom) -> Result<Self> {
        self.same_tape(&kernel)?;
        self.same_tape(&bias)?;
        let out = conv::conv2d_forward(&self.value(), &kernel.value(), &bias.value(), geom)?;
        let op = Op::Conv2d { x: self.id, k: kernel.id, b: bias.id, geom };
        self.tape.record("conv2d", out, op, &[self.id, kernel.id, bias.id])
    }

    pub fn deconv2d(self, kernel: Var<'t, T>, bias: Var<'t, T>, geom: ConvGeom) -> Result<Self> {
        self.same_tape(&kernel)?;
        self.same_tape(&bias)?;
        let out = conv::deconv2d_forward(&self.value(), &kernel.value(), &bias.value(), geom)?;
        let op = Op::Deconv2d { x: self.id, k: kernel.id, b: bias.id, geom };
        self.tape.record("deconv2d", out, op, &[self.id, kernel.id, bias.id])
    }

    /// Normalises with batch statistics; the caller folds the returned
    /// statistics into its running estimates.
    pub fn batchnorm_train(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: f64) -> Result<(Self, BatchStats<T>)> {
        let f = batchnorm::train_forward(&self.value(), &gamma.value(), &beta.value(), eps)?;
        let op = Op::BatchNormTrain { x: self.id, gamma: gamma.id, beta: beta.id, xhat: f.xhat, inv_std: f.inv_std };
        let out = self.tape.record("batchnorm", f.out, op, &[self.id, gamma.id, beta.id])?;
        Ok((out, f.stats))
    }

    pub fn batchnorm_eval(
        self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        eps: f64,
    ) -> Result<Self> {
        let (out, inv_std) =
            batchnorm::eval_forward(&self.value(), &gamma.value(), &beta.value(), running_mean, running_var, eps)?;
        let op = Op::BatchNormEval {
            x: self.id,
            gamma: gamma.id,
            beta: beta.id,
            mean: running_mean.data().to_vec(),
            inv_std,
        };
        self.tape.record("batchnorm", out, op, &[self.id, gamma.id, beta.id])
    }

    /// `x` for `x >= 0`, `a_c * x` otherwise, with one slope per channel.
    pub fn prelu(self, slope: Var<'t, T>) -> Result<Self> {
        let x = self.value();
        let (_, c, h, w) = x.dims4("prelu")?;
        let a = slope.value();
        if a.shape() != [c] {
            return Err(Error::shape("prelu", format!("slope {:?} for {c} channels", a.shape())));
        }
        let plane = h * w;
        let mut out = x.as_ref().clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            if *v < T::zero() {
                *v = *v * a.data()[(i / plane) % c];
            }
        }
        self.tape.record("prelu", out, Op::Prelu { x: self.id, slope: slope.id }, &[self.id, slope.id])
    }

    pub fn relu(self) -> Result<Self> {
        let out = self.value().map(|v| if v > T::zero() { v } else { T::zero() });
        self.tape.record("relu", out, Op::Relu { x: self.id }, &[self.id])
    }

    pub fn tanh(self) -> Result<Self> {
        let out = self.value().map(|v| v.tanh());
        self.tape.record("tanh", out, Op::Tanh { x: self.id }, &[self.id])
    }

    pub fn sigmoid(self) -> Result<Self> {
        let out = self.value().map(sigmoid);
        self.tape.record("sigmoid", out, Op::Sigmoid { x: self.id }, &[self.id])
    }

    /// 2x2 max pooling with stride 2; spatial dims must be even.
    pub fn maxpool2(self) -> Result<Self> {
        let x = self.value();
        let (n, c, h, w) = x.dims4("maxpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::geometry("maxpool2", format!("spatial dims {h}x{w} must be even")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::new(vec![n, c, oh, ow], out)?;
        self.tape.record("maxpool2", out, Op::MaxPool2 { x: self.id, argmax }, &[self.id])
    }

    pub fn add(self, other: Self) -> Result<Self> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let out = a.zip_map(&b, |x, y| x + y).map_err(|_| shape_err("add", &a, &b))?;
        self.tape.record("add", out, Op::Add { a: self.id, b: other.id }, &[self.id, other.id])
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let out = a.zip_map(&b, |x, y| x - y).map_err(|_| shape_err("sub", &a, &b))?;
        self.tape.record("sub", out, Op::Sub { a: self.id, b: other.id }, &[self.id, other.id])
    }

    pub fn scale(self, c: T) -> Result<Self> {
        let out = self.value().map(|v| v * c);
        self.tape.record("scale", out, Op::Scale { x: self.id, c }, &[self.id])
    }

    pub fn one_minus(self) -> Result<Self> {
        let out = self.value().map(|v| T::one() - v);
        self.tape.record("one_minus", out, Op::OneMinus { x: self.id }, &[self.id])
    }

    pub fn square(self) -> Result<Self> {
        let out = self.value().map(|v| v * v);
        self.tape.record("square", out, Op::Square { x: self.id }, &[self.id])
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(self) -> Result<Self> {
        let out = Tensor::scalar(self.value().sum());
        self.tape.record("sum", out, Op::Sum { x: self.id }, &[self.id])
    }

    /// `sum_i x_i * w_i` against a fixed weight tensor.
    pub fn weighted_sum(self, w: Tensor<T>) -> Result<Self> {
        let x = self.value();
        x.expect_same_shape(&w, "weighted_sum")?;
        let s = x.data().iter().zip(w.data()).map(|(&a, &b)| a * b).sum();
        self.tape.record("weighted_sum", Tensor::scalar(s), Op::WeightedSum { x: self.id, w }, &[self.id])
    }

    /// Concatenates two `N x C x H x W` tensors along the channel axis.
    pub fn concat_channels(self, other: Self) -> Result<Self> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        let (n, ca, h, w) = a.dims4("concat_channels")?;
        let (nb, cb, hb, wb) = b.dims4("concat_channels")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(shape_err("concat_channels", &a, &b));
        }
        let (pa, pb) = (ca * h * w, cb * h * w);
        let mut out = Vec::with_capacity(n * (pa + pb));
        for s in 0..n {
            out.extend_from_slice(&a.data()[s * pa..(s + 1) * pa]);
            out.extend_from_slice(&b.data()[s * pb..(s + 1) * pb]);
        }
        let out = Tensor::new(vec![n, ca + cb, h, w], out)?;
        self.tape.record("concat_channels", out, Op::ConcatChannels { a: self.id, b: other.id }, &[self.id, other.id])
    }

    /// Mean over every non-batch axis: `N x ... -> N`.
    pub fn sample_mean(self) -> Result<Self> {
        let x = self.value();
        let n = x.shape()[0];
        let per = x.numel() / n;
        let denom = T::from_usize(per).unwrap();
        let out: Vec<T> = x.data().chunks(per).map(|c| c.iter().copied().sum::<T>() / denom).collect();
        self.tape.record("sample_mean", Tensor::new(vec![n], out)?, Op::SampleMean { x: self.id }, &[self.id])
    }

    /// Mean of squared differences over all elements.
    pub fn mse(self, other: Self) -> Result<Self> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        a.expect_same_shape(&b, "mse")?;
        let n = T::from_usize(a.numel()).unwrap();
        let s = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>() / n;
        self.tape.record("mse", Tensor::scalar(s), Op::Mse { a: self.id, b: other.id }, &[self.id, other.id])
    }

    /// `-(1/N) sum_i log(max(x_i, eps))` over a rank-1 tensor.
    pub fn neg_log_mean(self, eps: T) -> Result<Self> {
        let x = self.value();
        if x.rank() != 1 {
            return Err(Error::shape("neg_log_mean", format!("expected rank 1, got {:?}", x.shape())));
        }
        let n = T::from_usize(x.numel()).unwrap();
        let s = -x.data().iter().map(|&v| v.max(eps).ln()).sum::<T>() / n;
        self.tape.record("neg_log_mean", Tensor::scalar(s), Op::NegLogMean { x: self.id, eps }, &[self.id])
    }
}

pub(crate) fn sigmoid<T: Element>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Vector-Jacobian products of one node.
fn backward_op<T: Element>(nodes: &[Node<T>], node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(NodeId, Tensor<T>)>> {
    let val = |id: NodeId| nodes[id].value.as_ref();
    let req = |id: NodeId| nodes[id].requires_grad;
    let y = node.value.as_ref();
    let mut out = Vec::with_capacity(3);
    match &node.op {
        Op::Leaf | Op::Constant => {}
        Op::Conv2d { x, k, b, geom } => {
            let gr = conv::conv2d_backward(val(*x), val(*k), g, *geom, [req(*x), req(*k), req(*b)])?;
            push_grads(&mut out, [(*x, gr.input), (*k, gr.kernel), (*b, gr.bias)]);
        }
        Op::Deconv2d { x, k, b, geom } => {
            let gr = conv::deconv2d_backward(val(*x), val(*k), g, *geom, [req(*x), req(*k), req(*b)])?;
            push_grads(&mut out, [(*x, gr.input), (*k, gr.kernel), (*b, gr.bias)]);
        }
        Op::BatchNormTrain { x, gamma, beta, xhat, inv_std } => {
            let (dx, dg, db) = batchnorm::train_backward(g, xhat, val(*gamma), inv_std)?;
            out.extend([(*x, dx), (*gamma, dg), (*beta, db)]);
        }
        Op::BatchNormEval { x, gamma, beta, mean, inv_std } => {
            let (dx, dg, db) = batchnorm::eval_backward(g, val(*x), val(*gamma), mean, inv_std)?;
            out.extend([(*x, dx), (*gamma, dg), (*beta, db)]);
        }
        Op::Prelu { x, slope } => {
            let xv = val(*x);
            let a = val(*slope);
            let (_, c, h, w) = xv.dims4("prelu")?;
            let plane = h * w;
            let mut dx = g.clone();
            let mut da = vec![T::zero(); c];
            for (i, (d, &xi)) in dx.data_mut().iter_mut().zip(xv.data()).enumerate() {
                if xi < T::zero() {
                    let ch = (i / plane) % c;
                    da[ch] = da[ch] + *d * xi;
                    *d = *d * a.data()[ch];
                }
            }
            out.push((*x, dx));
            out.push((*slope, Tensor::new(vec![c], da)?));
        }
        Op::Relu { x } => {
            let dx = g.zip_map(val(*x), |gi, xi| if xi > T::zero() { gi } else { T::zero() })?;
            out.push((*x, dx));
        }
        Op::Tanh { x } => out.push((*x, g.zip_map(y, |gi, yi| gi * (T::one() - yi * yi))?)),
        Op::Sigmoid { x } => out.push((*x, g.zip_map(y, |gi, yi| gi * yi * (T::one() - yi))?)),
        Op::MaxPool2 { x, argmax } => {
            let mut dx = Tensor::zeros(val(*x).shape());
            let d = dx.data_mut();
            for (&src, &gi) in argmax.iter().zip(g.data()) {
                d[src] = d[src] + gi;
            }
            out.push((*x, dx));
        }
        Op::Add { a, b } => {
            out.push((*a, g.clone()));
            out.push((*b, g.clone()));
        }
        Op::Sub { a, b } => {
            out.push((*a, g.clone()));
            out.push((*b, g.map(|v| -v)));
        }
        Op::Scale { x, c } => out.push((*x, g.map(|v| v * *c))),
        Op::OneMinus { x } => out.push((*x, g.map(|v| -v))),
        Op::Square { x } => {
            let two = T::from_f64_lossy(2.0);
            out.push((*x, g.zip_map(val(*x), |gi, xi| two * xi * gi)?));
        }
        Op::Sum { x } => {
            let s = g.item()?;
            out.push((*x, Tensor::full(val(*x).shape(), s)));
        }
        Op::WeightedSum { x, w } => {
            let s = g.item()?;
            out.push((*x, w.map(|wi| wi * s)));
        }
        Op::ConcatChannels { a, b } => {
            let (n, ca, h, w) = val(*a).dims4("concat_channels")?;
            let cb = val(*b).shape()[1];
            let (pa, pb) = (ca * h * w, cb * h * w);
            let mut da = Vec::with_capacity(n * pa);
            let mut db = Vec::with_capacity(n * pb);
            for chunk in g.data().chunks(pa + pb) {
                da.extend_from_slice(&chunk[..pa]);
                db.extend_from_slice(&chunk[pa..]);
            }
            out.push((*a, Tensor::new(val(*a).shape().to_vec(), da)?));
            out.push((*b, Tensor::new(val(*b).shape().to_vec(), db)?));
        }
        Op::SampleMean { x } => {
            let xv = val(*x);
            let per = xv.numel() / xv.shape()[0];
            let denom = T::from_usize(per).unwrap();
            let gd = g.data();
            out.push((*x, Tensor::from_fn(xv.shape(), |i| gd[i / per] / denom)));
        }
        Op::Mse { a, b } => {
            let (av, bv) = (val(*a), val(*b));
            let s = g.item()? * T::from_f64_lossy(2.0) / T::from_usize(av.numel()).unwrap();
            let da = av.zip_map(bv, |x, y| s * (x - y))?;
            let db = da.map(|v| -v);
            out.push((*a, da));
            out.push((*b, db));
        }
        Op::NegLogMean { x, eps } => {
            let xv = val(*x);
            let s = g.item()? / T::from_usize(xv.numel()).unwrap();
            out.push((*x, xv.map(|xi| if xi >= *eps { -s / xi } else { T::zero() })));
        }
    }
    Ok(out)
}

fn push_grads<T: Element, const N: usize>(out: &mut Vec<(NodeId, Tensor<T>)>, items: [(NodeId, Option<Tensor<T>>); N]) {
    out.extend(items.into_iter().filter_map(|(id, g)| g.map(|g| (id, g))));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let loss = x.square().unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let g = tape.backward(x.tanh().unwrap()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn activations_match_definitions() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 1, 1], vec![-1.0]).unwrap());
        let a = tape.constant(Tensor::scalar(0.25));
        assert_eq!(x.prelu(a).unwrap().value().data(), &[-0.25]);
        let z = tape.constant(Tensor::scalar(0.0));
        assert_eq!(z.sigmoid().unwrap().value().data(), &[0.5]);
        let p = tape.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        assert_eq!(p.maxpool2().unwrap().value().data(), &[4.0]);
    }

    #[test]
    fn shared_input_accumulates() {
        // f(x) = x*x written as square(x) + x -> f' = 2x + 1
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.square().unwrap().add(x).unwrap();
        assert_eq!(tape.backward(y).unwrap().get(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn rejects_non_scalar_and_detached_losses() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[3]));
        assert!(matches!(tape.backward(x.relu().unwrap()), Err(Error::Graph(_))));
        let c = tape.constant(Tensor::scalar(1.0));
        assert!(matches!(tape.backward(c.square().unwrap()), Err(Error::Graph(_))));
    }

    #[test]
    fn non_finite_values_are_errors() {
        let tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::scalar(f32::MAX));
        assert!(matches!(x.square(), Err(Error::NonFinite(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = x.sub(c).unwrap().square().unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[-6.0]);
        assert!(g.get(c).is_none());
    }
}
