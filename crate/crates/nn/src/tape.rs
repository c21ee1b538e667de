//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every forward call appends one node holding its output value. Leaves are
//! either trainable (`leaf`) or constants (`constant`); a node needs a
//! gradient iff any of its inputs does, so detached sub-graphs cost nothing in
//! the backward pass.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{arg_err, shape_err, NnError, Result};
use crate::ops::{self, ConvSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

enum Op<T> {
    Leaf,
    Conv {
        x: usize,
        w: usize,
        b: Option<usize>,
        spec: ConvSpec,
        cols: Vec<T>,
    },
    InstanceNorm {
        x: usize,
        inv_std: Vec<T>,
    },
    ChannelAffine {
        x: usize,
        gamma: usize,
        beta: usize,
    },
    Relu {
        x: usize,
    },
    LeakyRelu {
        x: usize,
        slope: T,
    },
    Tanh {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    Upsample {
        x: usize,
    },
    AvgPool {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        c: T,
    },
    AddScalar {
        x: usize,
    },
    Concat {
        parts: Vec<usize>,
    },
    Slice {
        x: usize,
        start: usize,
    },
    GlobalAvgPool {
        x: usize,
    },
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Softmax {
        x: usize,
    },
    L1Mean {
        a: usize,
        b: usize,
    },
    SqErrMean {
        x: usize,
        target: T,
    },
    Dice {
        pred: usize,
        target: usize,
        eps: T,
    },
    WeightedSum {
        terms: Vec<(usize, T)>,
    },
    Sum {
        x: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(NnError::NotInGraph { index: v.index });
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// A differentiable input (parameter or input being differentiated).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// A value that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Copies the current value of `v` into a new constant node.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let value = self.nodes[self.idx(v)?].value.clone();
        Ok(self.constant(value))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[self.idx(v).expect("variable from another tape")].value
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor<T>> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.idx(v)
            .map(|i| self.nodes[i].needs_grad)
            .unwrap_or(false)
    }

    pub fn conv2d(&mut self, x: Var, spec: &ConvSpec, w: Var, b: Option<Var>) -> Result<Var> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        let (y, cols) = ops::conv2d_with_cols(
            &self.nodes[xi].value,
            spec,
            &self.nodes[wi].value,
            bi.map(|i| &self.nodes[i].value),
        )?;
        let mut inputs = vec![xi, wi];
        inputs.extend(bi);
        // im2col buffers are only needed for weight gradients.
        let cols = if self.nodes[wi].needs_grad {
            cols
        } else {
            Vec::new()
        };
        Ok(self.push(
            y,
            Op::Conv {
                x: xi,
                w: wi,
                b: bi,
                spec: *spec,
                cols,
            },
            &inputs,
        ))
    }

    pub fn instance_norm(&mut self, x: Var, eps: T) -> Result<Var> {
        let xi = self.idx(x)?;
        let (y, inv_std) = ops::instance_norm_with_stats(&self.nodes[xi].value, eps);
        Ok(self.push(y, Op::InstanceNorm { x: xi, inv_std }, &[xi]))
    }

    /// `gamma[c] * x + beta[c]`, with `gamma, beta` shaped `(1|B, C, 1, 1)`.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (xi, gi, bi) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let y = ops::channel_affine(
            &self.nodes[xi].value,
            &self.nodes[gi].value,
            &self.nodes[bi].value,
        )?;
        Ok(self.push(
            y,
            Op::ChannelAffine {
                x: xi,
                gamma: gi,
                beta: bi,
            },
            &[xi, gi, bi],
        ))
    }

    /// Instance norm followed by a per-channel affine from external statistics.
    pub fn adain(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let n = self.instance_norm(x, eps)?;
        self.channel_affine(n, gamma, beta)
    }

    fn unary(
        &mut self,
        x: Var,
        f: impl Fn(&Tensor<T>) -> Tensor<T>,
        op: impl Fn(usize) -> Op<T>,
    ) -> Result<Var> {
        let xi = self.idx(x)?;
        let y = f(&self.nodes[xi].value);
        Ok(self.push(y, op(xi), &[xi]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, ops::relu, |x| Op::Relu { x })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        self.unary(
            x,
            |t| ops::leaky_relu(t, slope),
            |x| Op::LeakyRelu { x, slope },
        )
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, ops::tanh, |x| Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, ops::sigmoid, |x| Op::Sigmoid { x })
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        self.unary(x, ops::nearest_upsample2x, |x| Op::Upsample { x })
    }

    pub fn downsample2x(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let y = ops::downsample_avg2x(&self.nodes[xi].value)?;
        Ok(self.push(y, Op::AvgPool { x: xi }, &[xi]))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.unary(x, ops::global_avg_pool, |x| Op::GlobalAvgPool { x })
    }

    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        self.unary(x, ops::softmax_channels, |x| Op::Softmax { x })
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary(x, |t| t.map(|v| v * c), |x| Op::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        self.unary(x, |t| t.map(|v| v + c), |x| Op::AddScalar { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let y = self.nodes[ai]
            .value
            .zip_map(&self.nodes[bi].value, |p, q| p + q)?;
        Ok(self.push(y, Op::Add { a: ai, b: bi }, &[ai, bi]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let y = self.nodes[ai]
            .value
            .zip_map(&self.nodes[bi].value, |p, q| p - q)?;
        Ok(self.push(y, Op::Sub { a: ai, b: bi }, &[ai, bi]))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts
            .iter()
            .map(|&p| self.idx(p))
            .collect::<Result<Vec<_>>>()?;
        let values: Vec<&Tensor<T>> = idx.iter().map(|&i| &self.nodes[i].value).collect();
        let y = ops::concat_channels(&values)?;
        Ok(self.push(y, Op::Concat { parts: idx.clone() }, &idx))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        let y = ops::slice_channels(&self.nodes[xi].value, start, len)?;
        Ok(self.push(y, Op::Slice { x: xi, start }, &[xi]))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        let y = ops::fully_connected(
            &self.nodes[xi].value,
            &self.nodes[wi].value,
            bi.map(|i| &self.nodes[i].value),
        )?;
        let mut inputs = vec![xi, wi];
        inputs.extend(bi);
        Ok(self.push(
            y,
            Op::Linear {
                x: xi,
                w: wi,
                b: bi,
            },
            &inputs,
        ))
    }

    /// Scalar mean absolute difference.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let v = ops::l1_mean(&self.nodes[ai].value, &self.nodes[bi].value)?;
        Ok(self.push(Tensor::scalar(v), Op::L1Mean { a: ai, b: bi }, &[ai, bi]))
    }

    /// Scalar mean of `(x - target)^2`.
    pub fn sq_err_mean(&mut self, x: Var, target: T) -> Result<Var> {
        let xi = self.idx(x)?;
        let v = ops::sq_err_mean(&self.nodes[xi].value, target);
        Ok(self.push(Tensor::scalar(v), Op::SqErrMean { x: xi, target }, &[xi]))
    }

    /// Scalar soft Dice loss over the channel (class) axis.
    pub fn dice_loss(&mut self, pred: Var, target: Var, eps: T) -> Result<Var> {
        let (pi, ti) = (self.idx(pred)?, self.idx(target)?);
        let v = ops::dice_loss(&self.nodes[pi].value, &self.nodes[ti].value, eps)?;
        Ok(self.push(
            Tensor::scalar(v),
            Op::Dice {
                pred: pi,
                target: ti,
                eps,
            },
            &[pi, ti],
        ))
    }

    /// `Σ w_k · term_k` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        if terms.is_empty() {
            return Err(arg_err("weighted_sum", "no terms"));
        }
        let mut idx = Vec::with_capacity(terms.len());
        let mut total = T::zero();
        for &(v, w) in terms {
            let i = self.idx(v)?;
            let t = &self.nodes[i].value;
            if t.len() != 1 {
                return Err(shape_err(
                    "weighted_sum",
                    format!("term has shape {:?}", t.shape()),
                ));
            }
            total += w * t.item();
            idx.push((i, w));
        }
        let inputs: Vec<usize> = idx.iter().map(|p| p.0).collect();
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSum { terms: idx },
            &inputs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        let v = self.nodes[xi].value.sum();
        Ok(self.push(Tensor::scalar(v), Op::Sum { x: xi }, &[xi]))
    }

    /// Gradient of `out` seeded with ones (the gradient of `sum(out)` for non-scalars).
    pub fn backward(&self, out: Var) -> Result<Gradients<T>> {
        let oi = self.idx(out)?;
        let seed = Tensor::full(self.nodes[oi].value.shape(), T::one());
        self.backward_with_seed(out, seed)
    }

    pub fn backward_with_seed(&self, out: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        let oi = self.idx(out)?;
        let expected = self.nodes[oi].value.shape();
        if seed.shape() != expected {
            return Err(NnError::BadSeed {
                expected,
                got: seed.shape(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[oi] = Some(seed);
        for i in (0..=oi).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        // Reachable-but-untouched leaves get explicit zeros.
        for (i, node) in self.nodes.iter().enumerate() {
            if node.needs_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        let trainable = self
            .nodes
            .iter()
            .map(|n| n.needs_grad && matches!(n.op, Op::Leaf))
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
            trainable,
        })
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], i: usize, g: Tensor<T>) {
        if !self.nodes[i].needs_grad {
            return;
        }
        match &mut grads[i] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let val = |k: usize| &self.nodes[k].value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                x,
                w,
                b,
                spec,
                cols,
            } => {
                let need_db = b.is_some_and(|bi| self.wants(bi));
                let cg = ops::conv2d_backward(
                    val(*x).shape(),
                    spec,
                    val(*w),
                    cols,
                    g,
                    self.wants(*x),
                    self.wants(*w),
                    need_db,
                );
                if let Some(dx) = cg.dx {
                    self.acc(grads, *x, dx);
                }
                if let Some(dw) = cg.dw {
                    self.acc(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    self.acc(grads, *b, db);
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                let dx = ops::instance_norm_backward(&node.value, inv_std, g);
                self.acc(grads, *x, dx);
            }
            Op::ChannelAffine { x, gamma, beta } => {
                let (dx, dg, db) = ops::channel_affine_backward(val(*x), val(*gamma), g);
                self.acc(grads, *x, dx);
                self.acc(grads, *gamma, dg);
                self.acc(grads, *beta, db);
            }
            Op::Relu { x } => {
                let dx = g.zip_map(
                    &node.value,
                    |g, y| if y > T::zero() { g } else { T::zero() },
                );
                self.acc(grads, *x, dx.expect("relu shape"));
            }
            Op::LeakyRelu { x, slope } => {
                let s = *slope;
                let dx = g.zip_map(val(*x), |g, v| if v > T::zero() { g } else { s * g });
                self.acc(grads, *x, dx.expect("leaky shape"));
            }
            Op::Tanh { x } => {
                let dx = g.zip_map(&node.value, |g, y| g * (T::one() - y * y));
                self.acc(grads, *x, dx.expect("tanh shape"));
            }
            Op::Sigmoid { x } => {
                let dx = g.zip_map(&node.value, |g, y| g * y * (T::one() - y));
                self.acc(grads, *x, dx.expect("sigmoid shape"));
            }
            Op::Upsample { x } => self.acc(grads, *x, ops::nearest_upsample2x_backward(g)),
            Op::AvgPool { x } => self.acc(grads, *x, ops::downsample_avg2x_backward(g)),
            Op::Add { a, b } => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub { a, b } => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|v| -v));
            }
            Op::Scale { x, c } => {
                let c = *c;
                self.acc(grads, *x, g.map(|v| v * c));
            }
            Op::AddScalar { x } => self.acc(grads, *x, g.clone()),
            Op::Concat { parts } => {
                let mut start = 0;
                for &p in parts {
                    let c = val(p).channels();
                    if self.wants(p) {
                        let part = ops::slice_channels(g, start, c).expect("concat slice");
                        self.acc(grads, p, part);
                    }
                    start += c;
                }
            }
            Op::Slice { x, start } => {
                let [n, c, h, w] = val(*x).shape();
                let len = g.channels();
                let plane = h * w;
                let mut dx = Tensor::zeros([n, c, h, w]);
                for b in 0..n {
                    let dst = (b * c + start) * plane;
                    let src = b * len * plane;
                    dx.data_mut()[dst..dst + len * plane]
                        .copy_from_slice(&g.data()[src..src + len * plane]);
                }
                self.acc(grads, *x, dx);
            }
            Op::GlobalAvgPool { x } => {
                let xs = val(*x).shape();
                let plane = xs[2] * xs[3];
                let inv = T::one() / T::from_usize(plane).unwrap();
                let mut dx = Tensor::zeros(xs);
                for (chunk, &gv) in dx.data_mut().chunks_mut(plane).zip(g.data()) {
                    chunk.iter_mut().for_each(|d| *d = gv * inv);
                }
                self.acc(grads, *x, dx);
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (batch, fin, fout) = (xv.batch(), xv.channels(), wv.batch());
                if self.wants(*x) {
                    let mut dx = Tensor::zeros(xv.shape());
                    T::gemm(
                        batch,
                        fout,
                        fin,
                        g.data(),
                        false,
                        wv.data(),
                        false,
                        dx.data_mut(),
                        false,
                    );
                    self.acc(grads, *x, dx);
                }
                if self.wants(*w) {
                    let mut dw = Tensor::zeros(wv.shape());
                    T::gemm(
                        fout,
                        batch,
                        fin,
                        g.data(),
                        true,
                        xv.data(),
                        false,
                        dw.data_mut(),
                        false,
                    );
                    self.acc(grads, *w, dw);
                }
                if let Some(b) = b.filter(|&b| self.wants(b)) {
                    let mut db = Tensor::zeros([1, fout, 1, 1]);
                    for row in g.data().chunks(fout) {
                        for (d, &v) in db.data_mut().iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.acc(grads, b, db);
                }
            }
            Op::Softmax { x } => {
                self.acc(grads, *x, ops::softmax_channels_backward(&node.value, g))
            }
            Op::L1Mean { a, b } => {
                let scale = g.item() / T::from_usize(val(*a).len()).unwrap();
                let sign = |d: T| {
                    if d > T::zero() {
                        scale
                    } else if d < T::zero() {
                        -scale
                    } else {
                        T::zero()
                    }
                };
                let da = val(*a)
                    .zip_map(val(*b), |p, q| sign(p - q))
                    .expect("l1 shape");
                if self.wants(*b) {
                    self.acc(grads, *b, da.map(|v| -v));
                }
                self.acc(grads, *a, da);
            }
            Op::SqErrMean { x, target } => {
                let t = *target;
                let k = g.item() * T::from_f64c(2.0) / T::from_usize(val(*x).len()).unwrap();
                self.acc(grads, *x, val(*x).map(|v| k * (v - t)));
            }
            Op::Dice { pred, target, eps } => {
                let (p, t) = (val(*pred), val(*target));
                let terms = ops::dice_terms(p, t);
                let l = T::from_usize(p.channels()).unwrap();
                let two = T::from_f64c(2.0);
                let k = -g.item() / l;
                let grad_for = |u: &Tensor<T>, other: &Tensor<T>| {
                    let mut d = Tensor::zeros(u.shape());
                    for b in 0..u.batch() {
                        for (c, &(a, s)) in terms.iter().enumerate() {
                            let s = s + *eps;
                            let start = d.index([b, c, 0, 0]);
                            let plane = u.plane();
                            for q in 0..plane {
                                let (uv, ov) = (u.data()[start + q], other.data()[start + q]);
                                d.data_mut()[start + q] =
                                    k * (two * ov / s - two * a * two * uv / (s * s));
                            }
                        }
                    }
                    d
                };
                if self.wants(*pred) {
                    self.acc(grads, *pred, grad_for(p, t));
                }
                if self.wants(*target) {
                    self.acc(grads, *target, grad_for(t, p));
                }
            }
            Op::WeightedSum { terms } => {
                let gv = g.item();
                for &(k, w) in terms {
                    self.acc(grads, k, Tensor::scalar(gv * w));
                }
            }
            Op::Sum { x } => {
                let gv = g.item();
                self.acc(grads, *x, Tensor::full(val(*x).shape(), gv));
            }
        }
    }
}

/// Gradients of one backward pass, available for leaf variables.
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
    trainable: Vec<bool>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Result<&Tensor<T>> {
        if v.tape != self.tape || v.index >= self.grads.len() {
            return Err(NnError::NotInGraph { index: v.index });
        }
        if !self.trainable[v.index] {
            return Err(NnError::NoGradient { index: v.index });
        }
        Ok(self.grads[v.index]
            .as_ref()
            .expect("leaf gradient populated"))
    }

    /// Moves a leaf gradient out.
    pub fn take(&mut self, v: Var) -> Result<Tensor<T>> {
        self.wrt(v)?;
        Ok(self.grads[v.index].take().expect("leaf gradient populated"))
    }
}
