use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::layers::*;
use crate::error::{Error, Result};
use crate::rng::SeedTree;

/// Encoder–decoder shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Features after the first convolution.
    pub width: usize,
    /// Number of pooling steps.
    pub depth: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            in_channels: 2,
            out_channels: 3,
            width: 32,
            depth: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// 2×2 same convolution, weight `(c_out, c_in, 2, 2)`.
    Conv,
    /// 2×2 stride-2 transposed convolution, weight `(c_in, c_out, 2, 2)`.
    UpConv,
    /// Pointwise convolution, weight `(c_out, c_in)`.
    Pointwise,
}

/// One convolution's weight and bias inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
    pub c_in: usize,
    pub c_out: usize,
    pub weight: usize,
    pub bias: usize,
}

impl Block {
    fn weight_len(&self) -> usize {
        match self.kind {
            BlockKind::Pointwise => self.c_in * self.c_out,
            _ => 4 * self.c_in * self.c_out,
        }
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            BlockKind::Conv => 4 * self.c_in,
            BlockKind::UpConv => self.c_in,
            BlockKind::Pointwise => self.c_in,
        }
    }

    fn weight_shape(&self) -> (usize, usize) {
        match self.kind {
            BlockKind::Conv => (self.c_out, 4 * self.c_in),
            BlockKind::UpConv => (self.c_in, 4 * self.c_out),
            BlockKind::Pointwise => (self.c_out, self.c_in),
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::config("network width, depth and channel counts must be >= 1"));
        }
        if self.depth > 6 {
            return Err(Error::config(format!("network depth {} is unreasonably large", self.depth)));
        }
        Ok(())
    }

    pub fn check_side(&self, p: usize) -> Result<()> {
        let m = 1 << self.depth;
        if p == 0 || !p.is_multiple_of(m) {
            return Err(Error::config(format!(
                "patch side {p} is not divisible by 2^depth = {m}"
            )));
        }
        Ok(())
    }

    /// Parameter layout: encoder levels (two convs each), then decoder levels
    /// from the deepest (up-conv and two convs each), then the 1×1 output.
    pub fn blocks(&self) -> Vec<Block> {
        let w = self.width;
        let mut out = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, kind, c_in, c_out| {
            let mut b = Block {
                name,
                kind,
                c_in,
                c_out,
                weight: offset,
                bias: 0,
            };
            b.bias = offset + b.weight_len();
            offset = b.bias + c_out;
            out.push(b);
        };
        for l in 0..=self.depth {
            let c_in = if l == 0 { self.in_channels } else { w << (l - 1) };
            push(format!("enc{l}.conv1"), BlockKind::Conv, c_in, w << l);
            push(format!("enc{l}.conv2"), BlockKind::Conv, w << l, w << l);
        }
        for l in (0..self.depth).rev() {
            push(format!("dec{l}.up"), BlockKind::UpConv, w << (l + 1), w << l);
            push(format!("dec{l}.conv1"), BlockKind::Conv, w << (l + 1), w << l);
            push(format!("dec{l}.conv2"), BlockKind::Conv, w << l, w << l);
        }
        push("out".into(), BlockKind::Pointwise, w, self.out_channels);
        out
    }

    pub fn param_count(&self) -> usize {
        self.blocks().last().map_or(0, |b| b.bias + b.c_out)
    }
}

/// Network weights as one flat vector in `NetConfig::blocks` order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams<T> {
    pub config: NetConfig,
    pub values: Vec<T>,
}

impl<T: Real> NetParams<T> {
    pub fn zeros(config: NetConfig) -> Self {
        Self {
            values: vec![T::zero(); config.param_count()],
            config,
        }
    }

    /// Fan-in scaled uniform weights (He), zero biases.
    pub fn init(config: NetConfig, seed: u64) -> Self {
        let mut p = Self::zeros(config);
        let mut rng = SeedTree::new(seed).stream("net-init", 0, 0);
        for b in config.blocks() {
            let bound = (6.0 / b.fan_in() as f64).sqrt();
            for v in &mut p.values[b.weight..b.weight + b.weight_len()] {
                *v = T::from_f64(rng.gen_range(-bound..bound)).unwrap();
            }
        }
        p
    }

    pub fn cast<U: Real>(&self) -> NetParams<U> {
        NetParams {
            config: self.config,
            values: self.values.iter().map(|v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
        }
    }

    fn weight(&self, b: &Block) -> ArrayView2<'_, T> {
        ArrayView2::from_shape(b.weight_shape(), &self.values[b.weight..b.weight + b.weight_len()]).unwrap()
    }

    fn bias(&self, b: &Block) -> &[T] {
        &self.values[b.bias..b.bias + b.c_out]
    }
}

/// Intermediate values kept for the backward pass.
pub struct Trace<T> {
    conv_cols: Vec<Array2<T>>,
    conv_out: Vec<Act<T>>,
    pools: Vec<(Vec<u32>, usize)>,
    up_in: Vec<Act<T>>,
    last: Act<T>,
}

/// Forward pass over a batch `(in_channels, b·P·P)`.
pub fn forward<T: Real>(params: &NetParams<T>, x: &Act<T>) -> Result<Act<T>> {
    forward_traced(params, x).map(|(y, _)| y)
}

pub fn forward_traced<T: Real>(params: &NetParams<T>, x: &Act<T>) -> Result<(Act<T>, Trace<T>)> {
    let cfg = params.config;
    if x.channels() != cfg.in_channels || x.h != x.w {
        return Err(Error::config(format!(
            "network expects {} square input channels, got {} of {}×{}",
            cfg.in_channels,
            x.channels(),
            x.h,
            x.w
        )));
    }
    cfg.check_side(x.h)?;
    let blocks = cfg.blocks();
    let mut bi = blocks.iter();
    let mut trace = Trace {
        conv_cols: Vec::new(),
        conv_out: Vec::new(),
        pools: Vec::new(),
        up_in: Vec::new(),
        last: Act::zeros(0, 0, 0, 0),
    };
    let conv_relu = |input: &Act<T>, b: &Block, trace: &mut Trace<T>| {
        let (mut y, cols) = conv2x2(input, params.weight(b), params.bias(b));
        relu(&mut y);
        trace.conv_cols.push(cols);
        trace.conv_out.push(y.clone());
        y
    };

    let mut skips = Vec::with_capacity(cfg.depth + 1);
    let mut cur = x.clone();
    for l in 0..=cfg.depth {
        if l > 0 {
            let (p, arg) = maxpool(&cur);
            trace.pools.push((arg, cur.data.ncols()));
            cur = p;
        }
        let a = conv_relu(&cur, bi.next().unwrap(), &mut trace);
        cur = conv_relu(&a, bi.next().unwrap(), &mut trace);
        skips.push(cur.clone());
    }
    skips.pop();
    for _ in (0..cfg.depth).rev() {
        let ub = bi.next().unwrap();
        let up = upconv(&cur, params.weight(ub), params.bias(ub));
        trace.up_in.push(cur);
        let cat = concat(&skips.pop().unwrap(), &up);
        let a = conv_relu(&cat, bi.next().unwrap(), &mut trace);
        cur = conv_relu(&a, bi.next().unwrap(), &mut trace);
    }
    let ob = bi.next().unwrap();
    let y = conv1x1(&cur, params.weight(ob), params.bias(ob));
    trace.last = cur;
    if y.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Network("non-finite activation in forward pass".into()));
    }
    Ok((y, trace))
}

fn store<T: Real>(grad: &mut [T], b: &Block, dw: &Array2<T>, db: &[T]) {
    let dst = &mut grad[b.weight..b.weight + b.weight_len()];
    for (g, v) in dst.iter_mut().zip(dw.iter()) {
        *g = *v;
    }
    grad[b.bias..b.bias + b.c_out].copy_from_slice(db);
}

/// Back through one ReLU'd 2×2 convolution, popping its trace entries.
fn conv_back<T: Real>(
    params: &NetParams<T>,
    trace: &mut Trace<T>,
    grad: &mut [T],
    b: &Block,
    mut d: Array2<T>,
) -> Array2<T> {
    let out = trace.conv_out.pop().unwrap();
    let cols = trace.conv_cols.pop().unwrap();
    relu_backward(&mut d, &out.data);
    let (dx, dw, db) = conv2x2_backward(&d, &cols, params.weight(b), (b.c_in, out.b, out.h, out.w));
    store(grad, b, &dw, &db);
    dx
}

/// Reverse-mode gradient of a loss given `dL/dy`, in parameter layout.
pub fn backward<T: Real>(params: &NetParams<T>, mut trace: Trace<T>, dy: &Array2<T>) -> Vec<T> {
    let cfg = params.config;
    let blocks = cfg.blocks();
    let mut grad = vec![T::zero(); params.values.len()];
    let mut bi = blocks.iter().rev();

    let ob = bi.next().unwrap();
    let (mut d, dw, db) = conv1x1_backward(dy, &trace.last, params.weight(ob));
    store(&mut grad, ob, &dw, &db);

    let mut skip_grads = Vec::with_capacity(cfg.depth);
    for _ in 0..cfg.depth {
        let (c2, c1, ub) = (bi.next().unwrap(), bi.next().unwrap(), bi.next().unwrap());
        d = conv_back(params, &mut trace, &mut grad, c2, d);
        let dcat = conv_back(params, &mut trace, &mut grad, c1, d);
        let ca = ub.c_out;
        skip_grads.push(dcat.slice(ndarray::s![..ca, ..]).to_owned());
        let dup = dcat.slice(ndarray::s![ca.., ..]).to_owned();
        let uin = trace.up_in.pop().unwrap();
        let (dx, dw, db) = upconv_backward(&dup, &uin, params.weight(ub));
        store(&mut grad, ub, &dw, &db);
        d = dx;
    }
    for l in (0..=cfg.depth).rev() {
        let (c2, c1) = (bi.next().unwrap(), bi.next().unwrap());
        d = conv_back(params, &mut trace, &mut grad, c2, d);
        d = conv_back(params, &mut trace, &mut grad, c1, d);
        if l > 0 {
            let (arg, cols) = trace.pools.pop().unwrap();
            d = maxpool_backward(&d, &arg, cols);
            d.zip_mut_with(&skip_grads.pop().unwrap(), |a, b| *a = *a + *b);
        }
    }
    grad
}

/// Mean-squared error over every output element, its gradient, and the
/// reported RMSE.
pub fn mse_loss<T: Real>(y: &Array2<T>, target: &Array2<T>) -> (T, Array2<T>) {
    let n = T::from_usize(y.len()).unwrap();
    let r = y - target;
    let mse = r.iter().map(|v| *v * *v).sum::<T>() / n;
    let two = T::from_f64(2.0).unwrap();
    (mse, r.mapv(|v| two * v / n))
}

/// Loss (RMSE) and gradient for one batch.
pub fn loss_and_grad<T: Real>(params: &NetParams<T>, x: &Act<T>, target: &Array2<T>) -> Result<(T, Vec<T>)> {
    let (y, trace) = forward_traced(params, x)?;
    if y.data.dim() != target.dim() {
        return Err(Error::config("target shape does not match network output"));
    }
    let (mse, dy) = mse_loss(&y.data, target);
    let g = backward(params, trace, &dy);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Network("non-finite gradient".into()));
    }
    Ok((mse.sqrt(), g))
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }

    /// One bias-corrected update.
    pub fn update(&mut self, params: &mut [T], grad: &[T]) {
        self.step += 1;
        let t = self.step as i32;
        let f = |x: f64| T::from_f64(x).unwrap();
        let (b1, b2) = (f(self.beta1), f(self.beta2));
        let c1 = f(1.0 - self.beta1.powi(t));
        let c2 = f(1.0 - self.beta2.powi(t));
        let (lr, eps) = (f(self.lr), f(self.eps));
        let one = T::one();
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] = params[i] - lr * mh / (vh.sqrt() + eps);
        }
    }
}
