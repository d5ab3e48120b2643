//! A small define-by-run reverse-mode autograd tape.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order for backpropagation.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::kernels;
use crate::losses;
use crate::nn::ParamKey;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    Linear { x: Var, w: Var, b: Var },
    PixelNorm { x: Var, inv: Vec<T> },
    LeakyRelu { x: Var, slope: T },
    Relu { x: Var },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Reshape { x: Var },
    ConcatChannels { a: Var, b: Var },
    Compose { generated: Var, kept: Var, mask: Tensor<T> },
    ChannelScale { x: Var, scale: Tensor<T> },
    Add { a: Var, b: Var },
    Scale { x: Var, c: T },
    MeanAbsDiff { a: Var, b: Var },
    Bce { p: Var, target: Tensor<T>, scale: T },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamKey>,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Result of one backward sweep.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamKey, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a node, `None` if nothing flowed into it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradients summed per parameter over every leaf that referenced it.
    pub fn by_param(&self) -> BTreeMap<ParamKey, Tensor<T>> {
        let mut out: BTreeMap<ParamKey, Tensor<T>> = BTreeMap::new();
        for &(key, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                match out.get_mut(&key) {
                    Some(acc) => acc.add_assign(g),
                    None => {
                        out.insert(key, g.clone());
                    }
                }
            }
        }
        out
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// A constant leaf; no gradient is ever computed for it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A parameter leaf. Frozen parameters enter as constants.
    pub fn param(&mut self, key: ParamKey, value: &Tensor<T>, trainable: bool) -> Var {
        let v = self.push(value.clone(), Op::Leaf, trainable);
        self.nodes[v.0].param = trainable.then_some(key);
        v
    }

    /// Copies a value into a new constant leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = kernels::conv2d(self.value(x), self.value(w), self.value(b), stride, pad)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, stride, pad }, rg))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = kernels::conv_transpose2d(self.value(x), self.value(w), self.value(b), stride, pad)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::ConvTranspose2d { x, w, b, stride, pad }, rg))
    }

    /// `x (N, F) · wᵀ (F, O) + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.shape().len() != 2 || wv.shape().len() != 2 || xv.dim(1) != wv.dim(1) {
            bail!(Validation, "linear: input {:?} incompatible with weight {:?}", xv.shape(), wv.shape());
        }
        let (n, f, o) = (xv.dim(0), xv.dim(1), wv.dim(0));
        let mut out = Tensor::zeros(&[n, o]);
        kernels::gemm(n, f, o, xv.data(), (f as isize, 1), wv.data(), (1, f as isize), T::ZERO, out.data_mut());
        let bias = self.value(b).data();
        for row in out.data_mut().chunks_mut(o) {
            for (v, &bb) in row.iter_mut().zip(bias) {
                *v += bb;
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    /// Normalizes each pixel's feature vector to unit mean square across
    /// channels: `x / sqrt(mean_c x² + 1e-8)`. Purely local in space.
    pub fn pixel_norm(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 4 {
            bail!(Validation, "pixel_norm expects NCHW, got {:?}", xv.shape());
        }
        let (n, c) = (xv.dim(0), xv.dim(1));
        let plane = xv.dim(2) * xv.dim(3);
        let (out, inv) = pixel_norm(xv.data(), n, c, plane);
        let out = Tensor::from_vec(xv.shape(), out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::PixelNorm { x, inv }, rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let slope = T::from_f64(slope);
        let out = self.value(x).map(|v| if v > T::ZERO { v } else { v * slope });
        let rg = self.rg(x);
        self.push(out, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::ZERO));
        let rg = self.rg(x);
        self.push(out, Op::Relu { x }, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(T::tanh);
        let rg = self.rg(x);
        self.push(out, Op::Tanh { x }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid { x }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape { x }, rg))
    }

    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).dim(0);
        let rest = self.value(x).len() / n;
        self.reshape(x, &[n, rest])
    }

    /// Channel-wise concatenation, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 4
            || bv.shape().len() != 4
            || av.dim(0) != bv.dim(0)
            || av.dim(2) != bv.dim(2)
            || av.dim(3) != bv.dim(3)
        {
            bail!(Validation, "cannot concatenate {:?} and {:?} along channels", av.shape(), bv.shape());
        }
        let out = concat_channels(av, bv);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatChannels { a, b }, rg))
    }

    /// Pastes `generated` into the hole of `kept`: `mask ? generated : kept`,
    /// i.e. `generated ⊙ M + kept` when `kept` is already zero in the hole.
    pub fn compose(&mut self, generated: Var, kept: Var, mask: &Tensor<T>) -> Result<Var> {
        let out = crate::generator::compose(self.value(generated), self.value(kept), mask)?;
        let mask = crate::generator::broadcast_mask(mask, self.value(generated).shape())?;
        let rg = self.rg(generated) || self.rg(kept);
        Ok(self.push(out, Op::Compose { generated, kept, mask }, rg))
    }

    /// Multiplies channel `c` of sample `n` by `scale[n, c]`.
    pub fn channel_scale(&mut self, x: Var, scale: Tensor<T>) -> Result<Var> {
        let out = channel_scale(self.value(x), &scale)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::ChannelScale { x, scale }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(out, Op::Scale { x, c }, rg)
    }

    /// Scalar `mean |a - b|`.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = losses::mean_abs_diff(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(T::from_f64(v)), Op::MeanAbsDiff { a, b }, rg))
    }

    /// Scalar `scale · Σ BCE(p, target)` with clamped probabilities.
    pub fn bce(&mut self, p: Var, target: Tensor<T>, scale: f64) -> Result<Var> {
        let v = scale * losses::bce_sum(self.value(p), &target)?;
        let rg = self.rg(p);
        Ok(self.push(Tensor::scalar(T::from_f64(v)), Op::Bce { p, target, scale: T::from_f64(scale) }, rg))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            bail!(Validation, "backward needs a scalar, got shape {:?}", self.value(loss).shape());
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::ONE));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        let params = self.nodes.iter().enumerate().filter_map(|(i, n)| n.param.map(|k| (k, i))).collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Leaf => {}
            &Op::Conv2d { x, w, b, stride, pad } => {
                let need_dw = self.rg(w) || self.rg(b);
                let (dx, dwb) = kernels::conv2d_backward(self.value(x), self.value(w), dy, stride, pad, self.rg(x), need_dw);
                if let Some(dx) = dx {
                    accumulate(grads, x, dx);
                }
                if let Some((dw, db)) = dwb {
                    self.acc_if(grads, w, dw);
                    self.acc_if(grads, b, db);
                }
            }
            &Op::ConvTranspose2d { x, w, b, stride, pad } => {
                let need_dw = self.rg(w) || self.rg(b);
                let (dx, dwb) = kernels::conv_transpose2d_backward(self.value(x), self.value(w), dy, stride, pad, self.rg(x), need_dw);
                if let Some(dx) = dx {
                    accumulate(grads, x, dx);
                }
                if let Some((dw, db)) = dwb {
                    self.acc_if(grads, w, dw);
                    self.acc_if(grads, b, db);
                }
            }
            &Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(x), self.value(w));
                let (n, f, o) = (xv.dim(0), xv.dim(1), wv.dim(0));
                if self.rg(x) {
                    let mut dx = Tensor::zeros(xv.shape());
                    kernels::gemm(n, o, f, dy.data(), (o as isize, 1), wv.data(), (f as isize, 1), T::ZERO, dx.data_mut());
                    accumulate(grads, x, dx);
                }
                if self.rg(w) {
                    let mut dw = Tensor::zeros(wv.shape());
                    kernels::gemm(o, n, f, dy.data(), (1, o as isize), xv.data(), (f as isize, 1), T::ZERO, dw.data_mut());
                    accumulate(grads, w, dw);
                }
                if self.rg(b) {
                    let mut db = Tensor::zeros(&[o]);
                    for row in dy.data().chunks(o) {
                        for (acc, &v) in db.data_mut().iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    accumulate(grads, b, db);
                }
            }
            Op::PixelNorm { x, inv } => {
                let xv = self.value(*x);
                let (n, c) = (xv.dim(0), xv.dim(1));
                let plane = xv.dim(2) * xv.dim(3);
                let cf = T::from_f64(c as f64);
                let mut dx = Tensor::zeros(xv.shape());
                // dx = inv·dy − x·inv³/C · Σ_c(dy·x)
                for b in 0..n {
                    let base = b * c * plane;
                    for p in 0..plane {
                        let mut dot = T::ZERO;
                        for ch in 0..c {
                            let j = base + ch * plane + p;
                            dot += dy.data()[j] * xv.data()[j];
                        }
                        let s = inv[b * plane + p];
                        let k = s * s * s * dot / cf;
                        for ch in 0..c {
                            let j = base + ch * plane + p;
                            dx.data_mut()[j] = s * dy.data()[j] - xv.data()[j] * k;
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            &Op::LeakyRelu { x, slope } => {
                let xv = self.value(x);
                let dx = Tensor::from_fn(xv.shape(), |i| {
                    if xv.data()[i] > T::ZERO {
                        dy.data()[i]
                    } else {
                        dy.data()[i] * slope
                    }
                });
                accumulate(grads, x, dx);
            }
            &Op::Relu { x } => {
                let xv = self.value(x);
                let dx = Tensor::from_fn(xv.shape(), |i| if xv.data()[i] > T::ZERO { dy.data()[i] } else { T::ZERO });
                accumulate(grads, x, dx);
            }
            &Op::Tanh { x } => {
                let y = &node.value;
                let dx = Tensor::from_fn(y.shape(), |i| dy.data()[i] * (T::ONE - y.data()[i] * y.data()[i]));
                accumulate(grads, x, dx);
            }
            &Op::Sigmoid { x } => {
                let y = &node.value;
                let dx = Tensor::from_fn(y.shape(), |i| dy.data()[i] * y.data()[i] * (T::ONE - y.data()[i]));
                accumulate(grads, x, dx);
            }
            &Op::Reshape { x } => {
                let dx = dy.clone().reshape(self.value(x).shape()).expect("reshape preserves length");
                accumulate(grads, x, dx);
            }
            &Op::ConcatChannels { a, b } => {
                let (av, bv) = (self.value(a), self.value(b));
                let (ca, cb) = (av.dim(1), bv.dim(1));
                let plane = av.dim(2) * av.dim(3);
                let n = av.dim(0);
                if self.rg(a) {
                    let mut da = Vec::with_capacity(av.len());
                    for i in 0..n {
                        let s = i * (ca + cb) * plane;
                        da.extend_from_slice(&dy.data()[s..s + ca * plane]);
                    }
                    accumulate(grads, a, Tensor::from_vec(av.shape(), da).expect("shape"));
                }
                if self.rg(b) {
                    let mut db = Vec::with_capacity(bv.len());
                    for i in 0..n {
                        let s = (i * (ca + cb) + ca) * plane;
                        db.extend_from_slice(&dy.data()[s..s + cb * plane]);
                    }
                    accumulate(grads, b, Tensor::from_vec(bv.shape(), db).expect("shape"));
                }
            }
            Op::Compose { generated, kept, mask } => {
                if self.rg(*generated) {
                    let d = dy.zip_map(mask, |g, m| g * m).expect("shape");
                    accumulate(grads, *generated, d);
                }
                if self.rg(*kept) {
                    let d = dy.zip_map(mask, |g, m| g * (T::ONE - m)).expect("shape");
                    accumulate(grads, *kept, d);
                }
            }
            Op::ChannelScale { x, scale } => {
                let dx = channel_scale(dy, scale).expect("shape");
                accumulate(grads, *x, dx);
            }
            &Op::Add { a, b } => {
                self.acc_if(grads, a, dy.clone());
                self.acc_if(grads, b, dy.clone());
            }
            &Op::Scale { x, c } => {
                accumulate(grads, x, dy.map(|v| v * c));
            }
            &Op::MeanAbsDiff { a, b } => {
                let g = losses::mean_abs_diff_grad(self.value(a), self.value(b), dy.item());
                if self.rg(b) {
                    accumulate(grads, b, g.map(|v| -v));
                }
                self.acc_if(grads, a, g);
            }
            Op::Bce { p, target, scale } => {
                let g = losses::bce_sum_grad(self.value(*p), target, *scale * dy.item());
                accumulate(grads, *p, g);
            }
        }
    }

    fn acc_if(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if self.rg(v) {
            accumulate(grads, v, g);
        }
    }
}

fn pixel_norm<T: Real>(x: &[T], n: usize, c: usize, plane: usize) -> (Vec<T>, Vec<T>) {
    let eps = T::from_f64(1e-8);
    let cf = T::from_f64(c as f64);
    let mut out = vec![T::ZERO; x.len()];
    let mut inv = Vec::with_capacity(n * plane);
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let mut ss = T::ZERO;
            for ch in 0..c {
                let v = x[base + ch * plane + p];
                ss += v * v;
            }
            let s = T::ONE / (ss / cf + eps).sqrt();
            inv.push(s);
            for ch in 0..c {
                let j = base + ch * plane + p;
                out[j] = x[j] * s;
            }
        }
    }
    (out, inv)
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, ca, cb) = (a.dim(0), a.dim(1), b.dim(1));
    let plane = a.dim(2) * a.dim(3);
    let mut data = Vec::with_capacity(a.len() + b.len());
    for i in 0..n {
        data.extend_from_slice(a.batch_item(i));
        data.extend_from_slice(b.batch_item(i));
    }
    let _ = plane;
    Tensor::from_vec(&[n, ca + cb, a.dim(2), a.dim(3)], data).expect("concat shape")
}

/// `x[n, c, ...] * scale[n, c]`.
pub fn channel_scale<T: Real>(x: &Tensor<T>, scale: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = (x.dim(0), x.dim(1));
    if scale.shape() != [n, c] {
        bail!(Validation, "channel scale {:?} does not match code {:?}", scale.shape(), x.shape());
    }
    let plane = x.len() / (n * c);
    let mut out = x.clone();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let s = scale.data()[i];
        for v in chunk {
            *v *= s;
        }
    }
    Ok(out)
}
