use std::borrow::Cow;
use std::collections::HashMap;

use super::kernels::{self, ConvDims};
use super::{chw, ParamId, ParamStore, Result, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: ConvDims,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Scale(Var, f64),
    ScaleChannels {
        x: Var,
        s: Var,
    },
    MulMap {
        x: Var,
        m: Var,
    },
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
        len: usize,
    },
    Upsample2x(Var),
    Sum(Var),
    Mean(Var),
    Bce {
        pred: Var,
        target: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node<'p> {
    shape: Vec<usize>,
    value: Cow<'p, [f64]>,
    op: Op,
    requires_grad: bool,
}

/// Lower clip applied to predictions before the logarithm in [`Graph::bce`].
pub const BCE_CLIP: f64 = 1e-7;

/// Forward tape. Nodes are appended in execution order, so the node list is
/// already topologically sorted and backward walks it in reverse. Parameter
/// leaves borrow their values from the [`ParamStore`] for the graph's
/// lifetime.
#[derive(Debug, Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    params: HashMap<ParamId, Var>,
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'p> {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf holding a copy of `t`; differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Constant (non-differentiable) leaf.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf, false)
    }

    /// Differentiable leaf bound to a stored parameter. Repeated calls with
    /// the same id return the same node.
    pub fn param(&mut self, store: &'p ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            shape: store.shape(id).to_vec(),
            value: Cow::Borrowed(store.value(id)),
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(&n.shape, n.value.to_vec()).expect("graph shapes are valid")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() {
            return Err(TensorError::Rank {
                op,
                expected: sa.len(),
                got: sb.to_vec(),
            });
        }
        const DIMS: [&str; 4] = ["dim0", "dim1", "dim2", "dim3"];
        let names: &[&'static str] = if sa.len() == 4 {
            &["batch", "channels", "height", "width"]
        } else {
            &DIMS
        };
        for (i, (&x, &y)) in sa.iter().zip(sb).enumerate() {
            if x != y {
                return Err(TensorError::ShapeMismatch {
                    op,
                    dim: names[i],
                    expected: x,
                    got: y,
                });
            }
        }
        Ok(())
    }

    /// Stride-1 convolution with size-preserving padding `k/2`.
    /// `weight` is `[Cout, Cin, k, k]`, `bias` is `[Cout]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        const OP: &str = "conv2d";
        let (c_in, h, w) = chw(self.shape(x), OP)?;
        let (c_out, k) = match *self.shape(weight) {
            [co, ci, kh, kw] => {
                if ci != c_in {
                    return Err(TensorError::ShapeMismatch {
                        op: OP,
                        dim: "input channels",
                        expected: ci,
                        got: c_in,
                    });
                }
                if kh != kw {
                    return Err(TensorError::ShapeMismatch {
                        op: OP,
                        dim: "kernel width",
                        expected: kh,
                        got: kw,
                    });
                }
                if kh % 2 == 0 {
                    return Err(TensorError::Invalid {
                        op: OP,
                        msg: format!("kernel size must be odd, got {kh}"),
                    });
                }
                (co, kh)
            }
            _ => {
                return Err(TensorError::Rank {
                    op: OP,
                    expected: 4,
                    got: self.shape(weight).to_vec(),
                })
            }
        };
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs.len() != 1 || bs[0] != c_out {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    dim: "bias length",
                    expected: c_out,
                    got: bs.iter().product(),
                });
            }
        }
        let dims = ConvDims {
            c_in,
            c_out,
            h,
            w,
            k,
        };
        let mut out = vec![0.0; c_out * h * w];
        kernels::conv2d_forward(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            dims,
            &mut out,
        );
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        let rg = self.rg(&inputs);
        Ok(self.push(
            vec![1, c_out, h, w],
            out,
            Op::Conv2d {
                x,
                w: weight,
                b: bias,
                dims,
            },
            rg,
        ))
    }

    /// 2×2, stride-2 max pooling.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        const OP: &str = "max_pool2";
        let (c, h, w) = chw(self.shape(x), OP)?;
        for (dim, n) in [("height", h), ("width", w)] {
            if n % 2 != 0 {
                return Err(TensorError::Invalid {
                    op: OP,
                    msg: format!("{dim} must be even, got {n}"),
                });
            }
        }
        let mut out = vec![0.0; c * (h / 2) * (w / 2)];
        let mut argmax = vec![0; out.len()];
        kernels::max_pool2_forward(self.value(x), c, h, w, &mut out, &mut argmax);
        let rg = self.rg(&[x]);
        Ok(self.push(
            vec![1, c, h / 2, w / 2],
            out,
            Op::MaxPool2 { x, argmax },
            rg,
        ))
    }

    /// Per-channel spatial mean; `[1, N, H, W]` → `[N]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = chw(self.shape(x), "global_avg_pool")?;
        let hw = h * w;
        let out = self
            .value(x)
            .chunks_exact(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        let rg = self.rg(&[x]);
        Ok(self.push(vec![c], out, Op::GlobalAvgPool(x), rg))
    }

    /// Fully connected layer: `[N]` with weight `[M, N]` and bias `[M]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        const OP: &str = "fully_connected";
        let n = match self.shape(x) {
            [n] => *n,
            s => {
                return Err(TensorError::Rank {
                    op: OP,
                    expected: 1,
                    got: s.to_vec(),
                })
            }
        };
        let m = match *self.shape(weight) {
            [m, wn] if wn == n => m,
            [_, wn] => {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    dim: "input features",
                    expected: wn,
                    got: n,
                })
            }
            _ => {
                return Err(TensorError::Rank {
                    op: OP,
                    expected: 2,
                    got: self.shape(weight).to_vec(),
                })
            }
        };
        if let Some(b) = bias {
            if self.shape(b) != [m] {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    dim: "bias length",
                    expected: m,
                    got: self.shape(b).iter().product(),
                });
            }
        }
        let (xv, wv) = (self.value(x), self.value(weight));
        let mut out: Vec<f64> = wv
            .chunks_exact(n)
            .map(|row| row.iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        if let Some(b) = bias {
            out.iter_mut().zip(self.value(b)).for_each(|(o, b)| *o += b);
        }
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        let rg = self.rg(&inputs);
        Ok(self.push(vec![m], out, Op::Linear { x, w: weight, b: bias }, rg))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        self.same_shape(op, a, b)?;
        Ok(self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Sigmoid(x), rg)
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).iter().map(|&v| v * k).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, k), rg)
    }

    /// `x[1,N,H,W] ⊗ s[N]`, broadcasting `s` over each channel plane.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        const OP: &str = "scale_channels";
        let (c, h, w) = chw(self.shape(x), OP)?;
        if self.shape(s) != [c] {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                dim: "channels",
                expected: c,
                got: self.shape(s).iter().product(),
            });
        }
        let sv = self.value(s);
        let out = self
            .value(x)
            .chunks_exact(h * w)
            .zip(sv)
            .flat_map(|(p, &k)| p.iter().map(move |&v| v * k))
            .collect();
        let rg = self.rg(&[x, s]);
        Ok(self.push(self.shape(x).to_vec(), out, Op::ScaleChannels { x, s }, rg))
    }

    /// `x[1,C,H,W] ⊗ m[1,1,H,W]`, broadcasting the map over channels.
    pub fn mul_map(&mut self, x: Var, m: Var) -> Result<Var> {
        const OP: &str = "mul_map";
        let (_, h, w) = chw(self.shape(x), OP)?;
        let (mc, mh, mw) = chw(self.shape(m), OP)?;
        for (dim, e, g) in [("channels", 1, mc), ("height", h, mh), ("width", w, mw)] {
            if e != g {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    dim,
                    expected: e,
                    got: g,
                });
            }
        }
        let mv = self.value(m);
        let out = self
            .value(x)
            .chunks_exact(h * w)
            .flat_map(|p| p.iter().zip(mv).map(|(a, b)| a * b))
            .collect();
        let rg = self.rg(&[x, m]);
        Ok(self.push(self.shape(x).to_vec(), out, Op::MulMap { x, m }, rg))
    }

    /// Channel concatenation in argument order.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        const OP: &str = "concat_channels";
        let first = *xs.first().ok_or(TensorError::Invalid {
            op: OP,
            msg: "no inputs".into(),
        })?;
        let (_, h, w) = chw(self.shape(first), OP)?;
        let mut total = 0;
        for &x in xs {
            let (c, xh, xw) = chw(self.shape(x), OP)?;
            for (dim, e, g) in [("height", h, xh), ("width", w, xw)] {
                if e != g {
                    return Err(TensorError::ShapeMismatch {
                        op: OP,
                        dim,
                        expected: e,
                        got: g,
                    });
                }
            }
            total += c;
        }
        let mut out = Vec::with_capacity(total * h * w);
        for &x in xs {
            out.extend_from_slice(self.value(x));
        }
        let rg = self.rg(xs);
        Ok(self.push(vec![1, total, h, w], out, Op::Concat(xs.to_vec()), rg))
    }

    /// Channels `start..start+len` of a feature map.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        const OP: &str = "slice_channels";
        let (c, h, w) = chw(self.shape(x), OP)?;
        if len == 0 || start + len > c {
            return Err(TensorError::Invalid {
                op: OP,
                msg: format!("channel range {start}..{} out of 0..{c}", start + len),
            });
        }
        let hw = h * w;
        let out = self.value(x)[start * hw..(start + len) * hw].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(vec![1, len, h, w], out, Op::Slice { x, start, len }, rg))
    }

    /// 2× bilinear upsampling, half-pixel centres, border clamped.
    pub fn upsample_bilinear2x(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = chw(self.shape(x), "upsample_bilinear2x")?;
        let mut out = vec![0.0; c * 4 * h * w];
        kernels::upsample2x_forward(self.value(x), c, h, w, &mut out);
        let rg = self.rg(&[x]);
        Ok(self.push(vec![1, c, 2 * h, 2 * w], out, Op::Upsample2x(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(vec![1], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.value(x).iter().sum::<f64>() / n;
        let rg = self.rg(&[x]);
        self.push(vec![1], vec![s], Op::Mean(x), rg)
    }

    /// Mean binary cross-entropy of `pred` against a constant soft target.
    /// Predictions are clamped to `[1e-7, 1 - 1e-7]` before the logarithm.
    pub fn bce(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() {
            return Err(TensorError::ShapeMismatch {
                op: "bce",
                dim: "element count",
                expected: p.len(),
                got: target.len(),
            });
        }
        let loss = p
            .iter()
            .zip(target)
            .map(|(&p, &t)| {
                let q = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
                -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
            })
            .sum::<f64>()
            / p.len() as f64;
        let rg = self.rg(&[pred]);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::Bce {
                pred,
                target: target.to_vec(),
            },
            rg,
        ))
    }

    /// Fingerprint of every piecewise branch taken in this forward pass
    /// (ReLU signs, max-pool winners, BCE clipping). Two passes with equal
    /// fingerprints lie on the same smooth piece of the function.
    pub fn activation_pattern(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for n in &self.nodes {
            match &n.op {
                Op::Relu(x) => self.value(*x).iter().for_each(|v| (*v > 0.0).hash(&mut h)),
                Op::MaxPool2 { argmax, .. } => argmax.hash(&mut h),
                Op::Bce { pred, .. } => self
                    .value(*pred)
                    .iter()
                    .for_each(|p| (BCE_CLIP..=1.0 - BCE_CLIP).contains(p).hash(&mut h)),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.node(loss).value.len() != 1 {
            return Err(TensorError::Invalid {
                op: "backward",
                msg: format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        let params = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Gradients { grads, params })
    }

    fn backward_node(&self, node: &Node<'p>, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if self.nodes[v.0].requires_grad {
                let g = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
                f(g);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, dims } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                acc(*x, &mut |g| kernels::conv2d_backward(xv, wv, dy, *dims, Some(g), None, None));
                acc(*w, &mut |g| kernels::conv2d_backward(xv, wv, dy, *dims, None, Some(g), None));
                if let Some(b) = b {
                    acc(*b, &mut |g| {
                        kernels::conv2d_backward(xv, wv, dy, *dims, None, None, Some(g))
                    });
                }
            }
            Op::MaxPool2 { x, argmax } => acc(*x, &mut |g| {
                for (&src, &d) in argmax.iter().zip(dy) {
                    g[src] += d;
                }
            }),
            Op::GlobalAvgPool(x) => {
                let n = self.value(*x).len() / dy.len();
                acc(*x, &mut |g| {
                    for (plane, &d) in g.chunks_exact_mut(n).zip(dy) {
                        let d = d / n as f64;
                        plane.iter_mut().for_each(|v| *v += d);
                    }
                })
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let n = xv.len();
                acc(*x, &mut |g| {
                    for (row, &d) in wv.chunks_exact(n).zip(dy) {
                        g.iter_mut().zip(row).for_each(|(gi, wi)| *gi += d * wi);
                    }
                });
                acc(*w, &mut |g| {
                    for (row, &d) in g.chunks_exact_mut(n).zip(dy) {
                        row.iter_mut().zip(xv).for_each(|(gi, xi)| *gi += d * xi);
                    }
                });
                if let Some(b) = b {
                    acc(*b, &mut |g| g.iter_mut().zip(dy).for_each(|(gi, d)| *gi += d));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |g| g.iter_mut().zip(dy).for_each(|(gi, d)| *gi += d));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |g| {
                    for ((gi, d), o) in g.iter_mut().zip(dy).zip(bv) {
                        *gi += d * o;
                    }
                });
                acc(*b, &mut |g| {
                    for ((gi, d), o) in g.iter_mut().zip(dy).zip(av) {
                        *gi += d * o;
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                acc(*x, &mut |g| {
                    for ((gi, d), &v) in g.iter_mut().zip(dy).zip(xv) {
                        if v > 0.0 {
                            *gi += d;
                        }
                    }
                })
            }
            Op::Sigmoid(x) => acc(*x, &mut |g| {
                for ((gi, d), &y) in g.iter_mut().zip(dy).zip(node.value.iter()) {
                    *gi += d * y * (1.0 - y);
                }
            }),
            Op::Scale(x, k) => acc(*x, &mut |g| {
                g.iter_mut().zip(dy).for_each(|(gi, d)| *gi += d * k);
            }),
            Op::ScaleChannels { x, s } => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let hw = xv.len() / sv.len();
                acc(*x, &mut |g| {
                    for ((gp, dp), &k) in g.chunks_exact_mut(hw).zip(dy.chunks_exact(hw)).zip(sv) {
                        gp.iter_mut().zip(dp).for_each(|(gi, d)| *gi += d * k);
                    }
                });
                acc(*s, &mut |g| {
                    for ((gi, dp), xp) in g.iter_mut().zip(dy.chunks_exact(hw)).zip(xv.chunks_exact(hw)) {
                        *gi += dp.iter().zip(xp).map(|(d, x)| d * x).sum::<f64>();
                    }
                });
            }
            Op::MulMap { x, m } => {
                let (xv, mv) = (self.value(*x), self.value(*m));
                let hw = mv.len();
                acc(*x, &mut |g| {
                    for (gp, dp) in g.chunks_exact_mut(hw).zip(dy.chunks_exact(hw)) {
                        for ((gi, d), k) in gp.iter_mut().zip(dp).zip(mv) {
                            *gi += d * k;
                        }
                    }
                });
                acc(*m, &mut |g| {
                    for (dp, xp) in dy.chunks_exact(hw).zip(xv.chunks_exact(hw)) {
                        for ((gi, d), x) in g.iter_mut().zip(dp).zip(xp) {
                            *gi += d * x;
                        }
                    }
                });
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for &x in xs {
                    let n = self.value(x).len();
                    let part = &dy[off..off + n];
                    acc(x, &mut |g| g.iter_mut().zip(part).for_each(|(gi, d)| *gi += d));
                    off += n;
                }
            }
            Op::Slice { x, start, len } => {
                let hw = dy.len() / len;
                acc(*x, &mut |g| {
                    g[start * hw..(start + len) * hw]
                        .iter_mut()
                        .zip(dy)
                        .for_each(|(gi, d)| *gi += d);
                })
            }
            Op::Upsample2x(x) => {
                let (c, h, w) = chw(self.shape(*x), "upsample_bilinear2x").expect("checked");
                acc(*x, &mut |g| kernels::upsample2x_backward(dy, c, h, w, g))
            }
            Op::Sum(x) => acc(*x, &mut |g| g.iter_mut().for_each(|gi| *gi += dy[0])),
            Op::Mean(x) => {
                let d = dy[0] / self.value(*x).len() as f64;
                acc(*x, &mut |g| g.iter_mut().for_each(|gi| *gi += d))
            }
            Op::Bce { pred, target } => {
                let pv = self.value(*pred);
                let scale = dy[0] / pv.len() as f64;
                acc(*pred, &mut |g| {
                    for ((gi, &p), &t) in g.iter_mut().zip(pv).zip(target) {
                        if (BCE_CLIP..=1.0 - BCE_CLIP).contains(&p) {
                            *gi += scale * ((1.0 - t) / (1.0 - p) - t / p);
                        }
                    }
                })
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` did not
    /// participate.
    pub fn wrt(&self, graph: &Graph, v: Var) -> Vec<f64> {
        self.grads
            .get(v.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| vec![0.0; graph.value(v).len()])
    }

    /// Adds `scale ·` the gradient of every parameter used in the forward
    /// pass into the store's gradient buffer.
    pub fn accumulate(&self, store: &mut ParamStore, scale: f64) {
        for &(id, v) in &self.params {
            if let Some(Some(g)) = self.grads.get(v.0) {
                store
                    .grad_mut(id)
                    .iter_mut()
                    .zip(g)
                    .for_each(|(s, g)| *s += scale * g);
            }
        }
    }
}
