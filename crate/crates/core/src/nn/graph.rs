//! Reverse-mode differentiation over a recorded sequence of operations.

use crate::error::{Error, Result};
use crate::nn::kernels::{self, ConvGeom, ConvSpec};
use crate::nn::tensor::Tensor;

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    LeakyRelu { x: Var, slope: f64 },
    Sigmoid { x: Var },
    Shuffle { x: Var, groups: usize },
    Concat { xs: Vec<Var> },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    OneMinus { x: Var },
    AvgPool3s2 { x: Var },
    AdaptivePool { x: Var, cells: usize },
    Resize { x: Var },
    Reshape { x: Var },
    Broadcast { x: Var },
    Recover { rainy: Var, ts: Var, tv: Option<Var>, atm: Var, eps: f64 },
    Mse { a: Var, b: Var },
    L1 { a: Var, b: Var },
    GradMse { a: Var, b: Var },
    RowSqNorm { a: Var, b: Var },
    WeightedSum { terms: Vec<(Var, f64)> },
    Dot { a: Var, b: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Tape of tensor operations. Values are computed eagerly as ops are recorded.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    branches: Option<Vec<i8>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads(Vec<Option<Tensor>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.0.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Forward differences along width and height; the last column/row is zero.
pub fn image_gradient(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let (b, c, h, w) = x.dims4()?;
    if h < 2 || w < 2 {
        return Err(Error::ShapeMismatch(format!("gradient needs at least 2x2, got {h}x{w}")));
    }
    let mut dx = Tensor::zeros(x.shape());
    let mut dy = Tensor::zeros(x.shape());
    let src = x.data();
    for pl in 0..b * c {
        let base = pl * h * w;
        for r in 0..h {
            for col in 0..w {
                let i = base + r * w + col;
                if col + 1 < w {
                    dx.data_mut()[i] = src[i + 1] - src[i];
                }
                if r + 1 < h {
                    dy.data_mut()[i] = src[i + w] - src[i];
                }
            }
        }
    }
    Ok((dx, dy))
}

fn side(v: f64, lo: f64, hi: f64) -> i8 {
    if v < lo {
        -1
    } else if v > hi {
        1
    } else {
        0
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph that also records which side of every non-differentiable point
    /// (activation kinks, clamps, absolute values) each element falls on.
    pub fn with_branch_tracking() -> Self {
        Self { nodes: Vec::new(), branches: Some(Vec::new()) }
    }

    /// Recorded branch pattern, if tracking is enabled.
    pub fn branches(&self) -> Option<&[i8]> {
        self.branches.as_deref()
    }

    fn record_branches(&mut self, signs: impl Iterator<Item = i8>) {
        if let Some(b) = self.branches.as_mut() {
            b.extend(signs);
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf (parameters, or inputs under gradient checks).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let (bs, cin, h, wd) = self.value(x).dims4()?;
        let ws = self.value(w).shape().to_vec();
        let [cout, cin_g, k, k2] = ws[..] else {
            return Err(Error::ShapeMismatch(format!("conv weight must be 4-d, got {ws:?}")));
        };
        if spec.groups == 0 || cin % spec.groups != 0 || cout % spec.groups != 0 {
            return Err(Error::IndivisibleChannels { channels: cin, groups: spec.groups });
        }
        if cin_g * spec.groups != cin || k != k2 || k % 2 == 0 {
            return Err(Error::ShapeMismatch(format!(
                "conv weight {ws:?} incompatible with {cin} input channels in {} groups",
                spec.groups
            )));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(Error::ShapeMismatch(format!("bias must be [{cout}]")));
            }
        }
        let geom = ConvGeom::new(bs, cin, cout, h, wd, k, spec);
        let out = kernels::conv_forward(&geom, self.value(x).data(), self.value(w).data(), b.map(|b| self.value(b).data()));
        let value = Tensor::new(vec![bs, cout, geom.ho, geom.wo], out)?;
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(value, Op::Conv { x, w, b, spec }, needs))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        if self.branches.is_some() {
            let signs: Vec<i8> = self.value(x).data().iter().map(|&v| (v < 0.0) as i8).collect();
            self.record_branches(signs.into_iter());
        }
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v *= slope
            }
        });
        let needs = self.needs(x);
        self.push(value, Op::LeakyRelu { x, slope }, needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        let needs = self.needs(x);
        self.push(value, Op::Sigmoid { x }, needs)
    }

    pub fn channel_shuffle(&mut self, x: Var, groups: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::IndivisibleChannels { channels: c, groups });
        }
        let src = self.value(x).data();
        let plane = h * w;
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for i in 0..c {
                let s = kernels::shuffle_source(i, c, groups);
                out[(bi * c + i) * plane..(bi * c + i + 1) * plane]
                    .copy_from_slice(&src[(bi * c + s) * plane..(bi * c + s + 1) * plane]);
            }
        }
        let value = Tensor::new(vec![b, c, h, w], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Shuffle { x, groups }, needs))
    }

    /// Concatenates 4-d tensors along the channel axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let (b, _, h, w) = self.value(xs[0]).dims4()?;
        let mut channels = 0;
        for &v in xs {
            let (bb, c, hh, ww) = self.value(v).dims4()?;
            if (bb, hh, ww) != (b, h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "concat of {:?} and {:?}",
                    self.value(xs[0]).shape(),
                    self.value(v).shape()
                )));
            }
            channels += c;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(b * channels * plane);
        for bi in 0..b {
            for &v in xs {
                let c = self.value(v).shape()[1];
                out.extend_from_slice(&self.value(v).data()[bi * c * plane..(bi + 1) * c * plane]);
            }
        }
        let value = Tensor::new(vec![b, channels, h, w], out)?;
        let needs = xs.iter().any(|&v| self.needs(v));
        Ok(self.push(value, Op::Concat { xs: xs.to_vec() }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add { a, b }, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let mut value = self.value(a).clone();
        value.data_mut().iter_mut().zip(self.value(b).data()).for_each(|(x, y)| *x *= y);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul { a, b }, needs))
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        value.data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
        let needs = self.needs(x);
        self.push(value, Op::OneMinus { x }, needs)
    }

    /// 3x3, stride 2, padding 1 average pooling; output is `ceil(H/2) x ceil(W/2)`.
    pub fn avg_pool3_s2(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        let (out, ho, wo) = kernels::avg_pool3_s2(self.value(x).data(), b * c, h, w);
        let value = Tensor::new(vec![b, c, ho, wo], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::AvgPool3s2 { x }, needs))
    }

    pub fn adaptive_avg_pool(&mut self, x: Var, cells: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        if cells == 0 || cells > h.min(w) {
            return Err(Error::LevelTooLarge { level: cells, size: h.min(w) });
        }
        let out = kernels::adaptive_avg_pool(self.value(x).data(), b * c, h, w, cells);
        let value = Tensor::new(vec![b, c, cells, cells], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::AdaptivePool { x, cells }, needs))
    }

    /// Bilinear resize to `height x width`.
    pub fn resize(&mut self, x: Var, height: usize, width: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4()?;
        let out = kernels::resize_bilinear(self.value(x).data(), b * c, h, w, height, width);
        let value = Tensor::new(vec![b, c, height, width], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Resize { x }, needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Reshape { x }, needs))
    }

    /// Replicates a `[B, C]` tensor over an `height x width` grid.
    pub fn broadcast_spatial(&mut self, x: Var, height: usize, width: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let [b, c] = shape[..] else {
            return Err(Error::ShapeMismatch(format!("broadcast expects [B, C], got {shape:?}")));
        };
        let plane = height * width;
        let mut out = Vec::with_capacity(b * c * plane);
        for &v in self.value(x).data() {
            out.extend(std::iter::repeat_n(v, plane));
        }
        let value = Tensor::new(vec![b, c, height, width], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::Broadcast { x }, needs))
    }

    /// Background recovery `clamp((I - (1 - T') A) / T', 0, 1)` with
    /// `T' = clamp(Ts + Tv, eps, 1)`; `atm` is a `[B, 3, H, W]` light map.
    pub fn recover(&mut self, rainy: Var, ts: Var, tv: Option<Var>, atm: Var, eps: f64) -> Result<Var> {
        let (b, c, h, w) = self.value(rainy).dims4()?;
        same_shape("recover atmosphere", self.value(rainy), self.value(atm))?;
        if self.value(ts).shape() != [b, 1, h, w] || tv.is_some_and(|tv| self.value(tv).shape() != [b, 1, h, w]) {
            return Err(Error::ShapeMismatch("transmission maps must be [B, 1, H, W]".into()));
        }
        let plane = h * w;
        let mut out = vec![0.0; b * c * plane];
        let (iv, tsv, av) = (self.value(rainy).data(), self.value(ts).data(), self.value(atm).data());
        let tvv = tv.map(|tv| self.value(tv).data());
        let tracking = self.branches.is_some();
        let mut signs = Vec::new();
        for bi in 0..b {
            for p in 0..plane {
                let raw = tsv[bi * plane + p] + tvv.map_or(0.0, |d| d[bi * plane + p]);
                let t = raw.clamp(eps, 1.0);
                if tracking {
                    signs.push(side(raw, eps, 1.0));
                }
                for ch in 0..c {
                    let i = (bi * c + ch) * plane + p;
                    let v = (iv[i] - (1.0 - t) * av[i]) / t;
                    if tracking {
                        signs.push(side(v, 0.0, 1.0));
                    }
                    out[i] = v.clamp(0.0, 1.0);
                }
            }
        }
        self.record_branches(signs.into_iter());
        let value = Tensor::new(vec![b, c, h, w], out)?;
        let needs = self.needs(rainy) || self.needs(ts) || tv.is_some_and(|v| self.needs(v)) || self.needs(atm);
        Ok(self.push(value, Op::Recover { rainy, ts, tv, atm, eps }, needs))
    }

    /// Mean squared difference over every element.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mse", self.value(a), self.value(b))?;
        let n = self.value(a).len() as f64;
        let s: f64 = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse { a, b }, needs))
    }

    /// Mean absolute difference over every element.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("l1", self.value(a), self.value(b))?;
        let n = self.value(a).len() as f64;
        let s: f64 = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| (x - y).abs()).sum();
        if self.branches.is_some() {
            let signs: Vec<i8> = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| (x < y) as i8).collect();
            self.record_branches(signs.into_iter());
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s / n), Op::L1 { a, b }, needs))
    }

    /// Mean squared difference of horizontal and vertical image gradients,
    /// averaged over both directions and every element.
    pub fn gradient_mse(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("gradient mse", self.value(a), self.value(b))?;
        let mut diff = self.value(a).clone();
        diff.data_mut().iter_mut().zip(self.value(b).data()).for_each(|(x, y)| *x -= y);
        let (dx, dy) = image_gradient(&diff)?;
        let n = 2.0 * diff.len() as f64;
        let s: f64 = dx.data().iter().chain(dy.data()).map(|v| v * v).sum();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s / n), Op::GradMse { a, b }, needs))
    }

    /// `(1/B) * sum_b ||a_b - b_b||^2` over `[B, F]` rows.
    pub fn row_sq_norm(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("row squared norm", self.value(a), self.value(b))?;
        let rows = self.value(a).shape()[0] as f64;
        let s: f64 = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s / rows), Op::RowSqNorm { a, b }, needs))
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for &(v, wgt) in terms {
            if self.value(v).len() != 1 {
                return Err(Error::ShapeMismatch("weighted_sum takes scalar nodes".into()));
            }
            s += wgt * self.value(v).data()[0];
        }
        let needs = terms.iter().any(|&(v, _)| self.needs(v));
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { terms: terms.to_vec() }, needs))
    }

    /// Sum of the elementwise product of two same-shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("dot", self.value(a), self.value(b))?;
        let s: f64 = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).sum();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s), Op::Dot { a, b }, needs))
    }

    /// Back-propagates from the scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        if self.value(root).len() != 1 {
            return Err(Error::ShapeMismatch("backward needs a scalar root".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let Some(grad) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &grad, &mut grads)?;
            grads[idx] = Some(grad);
        }
        Ok(Grads(grads))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn like(&self, v: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.value(v).shape().to_vec(), data).expect("gradient matches value shape")
    }

    fn propagate(&self, node: &Node, grad: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let g = grad.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, spec } => {
                let (bs, cin, h, wd) = self.value(*x).dims4()?;
                let ws = self.value(*w).shape();
                let geom = ConvGeom::new(bs, cin, ws[0], h, wd, ws[2], *spec);
                let out = kernels::conv_backward(
                    &geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    self.needs(*x),
                    self.needs(*w),
                    b.is_some_and(|b| self.needs(b)),
                );
                if let Some(dx) = out.dx {
                    self.accumulate(grads, *x, self.like(*x, dx));
                }
                if let Some(dw) = out.dw {
                    self.accumulate(grads, *w, self.like(*w, dw));
                }
                if let (Some(b), Some(db)) = (b, out.db) {
                    self.accumulate(grads, *b, self.like(*b, db));
                }
            }
            Op::LeakyRelu { x, slope } => {
                let d = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v < 0.0 { gv * slope } else { gv })
                    .collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Sigmoid { x } => {
                let d = node.value.data().iter().zip(g).map(|(&s, &gv)| gv * s * (1.0 - s)).collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Shuffle { x, groups } => {
                let (b, c, h, w) = node.value.dims4()?;
                let plane = h * w;
                let mut d = vec![0.0; g.len()];
                for bi in 0..b {
                    for i in 0..c {
                        let s = kernels::shuffle_source(i, c, *groups);
                        d[(bi * c + s) * plane..(bi * c + s + 1) * plane]
                            .copy_from_slice(&g[(bi * c + i) * plane..(bi * c + i + 1) * plane]);
                    }
                }
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Concat { xs } => {
                let (b, total, h, w) = node.value.dims4()?;
                let plane = h * w;
                let mut offset = 0;
                for &v in xs {
                    let c = self.value(v).shape()[1];
                    if self.needs(v) {
                        let mut d = Vec::with_capacity(b * c * plane);
                        for bi in 0..b {
                            let start = (bi * total + offset) * plane;
                            d.extend_from_slice(&g[start..start + c * plane]);
                        }
                        self.accumulate(grads, v, self.like(v, d));
                    }
                    offset += c;
                }
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, grad.clone());
                self.accumulate(grads, *b, grad.clone());
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    let d = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, self.like(*a, d));
                }
                if self.needs(*b) {
                    let d = g.iter().zip(av).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, self.like(*b, d));
                }
            }
            Op::OneMinus { x } => {
                let d = g.iter().map(|v| -v).collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::AvgPool3s2 { x } => {
                let (b, c, h, w) = self.value(*x).dims4()?;
                let d = kernels::avg_pool3_s2_backward(g, b * c, h, w);
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::AdaptivePool { x, cells } => {
                let (b, c, h, w) = self.value(*x).dims4()?;
                let d = kernels::adaptive_avg_pool_backward(g, b * c, h, w, *cells);
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Resize { x } => {
                let (b, c, h, w) = self.value(*x).dims4()?;
                let (_, _, ho, wo) = node.value.dims4()?;
                let d = kernels::resize_bilinear_backward(g, b * c, h, w, ho, wo);
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Reshape { x } => {
                self.accumulate(grads, *x, self.like(*x, g.to_vec()));
            }
            Op::Broadcast { x } => {
                let (_, _, h, w) = node.value.dims4()?;
                let plane = h * w;
                let d = g.chunks_exact(plane).map(|c| c.iter().sum()).collect();
                self.accumulate(grads, *x, self.like(*x, d));
            }
            Op::Recover { rainy, ts, tv, atm, eps } => {
                self.recover_backward(node, g, *rainy, *ts, *tv, *atm, *eps, grads)?;
            }
            Op::Mse { a, b } => {
                let n = self.value(*a).len() as f64;
                let scale = 2.0 * g[0] / n;
                self.pairwise(grads, *a, *b, |x, y| scale * (x - y));
            }
            Op::L1 { a, b } => {
                let n = self.value(*a).len() as f64;
                let scale = g[0] / n;
                self.pairwise(grads, *a, *b, |x, y| scale * sign(x - y));
            }
            Op::RowSqNorm { a, b } => {
                let rows = self.value(*a).shape()[0] as f64;
                let scale = 2.0 * g[0] / rows;
                self.pairwise(grads, *a, *b, |x, y| scale * (x - y));
            }
            Op::GradMse { a, b } => {
                let mut diff = self.value(*a).clone();
                diff.data_mut().iter_mut().zip(self.value(*b).data()).for_each(|(x, y)| *x -= y);
                let (dx, dy) = image_gradient(&diff)?;
                let (bs, c, h, w) = diff.dims4()?;
                let scale = 2.0 * g[0] / (2.0 * diff.len() as f64);
                // adjoint of the forward differences
                let mut d = vec![0.0; diff.len()];
                for pl in 0..bs * c {
                    let base = pl * h * w;
                    for r in 0..h {
                        for col in 0..w {
                            let i = base + r * w + col;
                            let gx = scale * dx.data()[i];
                            let gy = scale * dy.data()[i];
                            if col + 1 < w {
                                d[i + 1] += gx;
                                d[i] -= gx;
                            }
                            if r + 1 < h {
                                d[i + w] += gy;
                                d[i] -= gy;
                            }
                        }
                    }
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, self.like(*b, d.iter().map(|v| -v).collect()));
                }
                self.accumulate(grads, *a, self.like(*a, d));
            }
            Op::Dot { a, b } => {
                if self.needs(*a) {
                    let d = self.value(*b).data().iter().map(|v| v * g[0]).collect();
                    self.accumulate(grads, *a, self.like(*a, d));
                }
                if self.needs(*b) {
                    let d = self.value(*a).data().iter().map(|v| v * g[0]).collect();
                    self.accumulate(grads, *b, self.like(*b, d));
                }
            }
            Op::WeightedSum { terms } => {
                for &(v, wgt) in terms {
                    self.accumulate(grads, v, Tensor::scalar(wgt * g[0]));
                }
            }
        }
        Ok(())
    }

    fn pairwise(&self, grads: &mut [Option<Tensor>], a: Var, b: Var, f: impl Fn(f64, f64) -> f64) {
        let d: Vec<f64> = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        if self.needs(b) {
            self.accumulate(grads, b, self.like(b, d.iter().map(|v| -v).collect()));
        }
        self.accumulate(grads, a, self.like(a, d));
    }

    #[allow(clippy::too_many_arguments)]
    fn recover_backward(
        &self,
        node: &Node,
        g: &[f64],
        rainy: Var,
        ts: Var,
        tv: Option<Var>,
        atm: Var,
        eps: f64,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let (b, c, h, w) = node.value.dims4()?;
        let plane = h * w;
        let (iv, tsv, av) = (self.value(rainy).data(), self.value(ts).data(), self.value(atm).data());
        let tvv = tv.map(|tv| self.value(tv).data());
        let mut di = vec![0.0; iv.len()];
        let mut da = vec![0.0; av.len()];
        let mut dt = vec![0.0; tsv.len()];
        for bi in 0..b {
            for p in 0..plane {
                let raw_t = tsv[bi * plane + p] + tvv.map_or(0.0, |d| d[bi * plane + p]);
                let t = raw_t.clamp(eps, 1.0);
                let t_passes = raw_t > eps && raw_t < 1.0;
                let mut acc_t = 0.0;
                for ch in 0..c {
                    let i = (bi * c + ch) * plane + p;
                    let raw = (iv[i] - (1.0 - t) * av[i]) / t;
                    if !(raw > 0.0 && raw < 1.0) {
                        continue;
                    }
                    di[i] = g[i] / t;
                    da[i] = g[i] * (1.0 - 1.0 / t);
                    acc_t -= g[i] * (iv[i] - av[i]) / (t * t);
                }
                if t_passes {
                    dt[bi * plane + p] = acc_t;
                }
            }
        }
        self.accumulate(grads, rainy, self.like(rainy, di));
        self.accumulate(grads, atm, self.like(atm, da));
        if let Some(tv) = tv {
            self.accumulate(grads, tv, self.like(tv, dt.clone()));
        }
        self.accumulate(grads, ts, self.like(ts, dt));
        Ok(())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
