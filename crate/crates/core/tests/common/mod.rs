//! Oracles shared by the integration tests: finite differences and
//! straight-line reference implementations written independently of the
//! library's kernels.
#![allow(dead_code)]

use cmms::afs::{Caca, GatedFusion, SeLayer};
use cmms::nn::{Conv, Linear};
use cmms::tensor::{Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], r: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Worst relative error over checked coordinates, plus how many were
/// skipped because every stencil crossed a non-differentiable point.
#[derive(Debug, Clone, Copy, Default)]
pub struct Fd {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl Fd {
    fn record(&mut self, analytic: f64, numeric: Option<f64>) {
        match numeric {
            Some(n) => {
                self.checked += 1;
                let e = (analytic - n).abs() / analytic.abs().max(1e-6);
                self.max_rel_err = self.max_rel_err.max(e);
            }
            None => self.skipped += 1,
        }
    }

    pub fn merge(&mut self, o: Fd) {
        self.max_rel_err = self.max_rel_err.max(o.max_rel_err);
        self.checked += o.checked;
        self.skipped += o.skipped;
    }

    /// Below `tol`, with at most 5% of coordinates skipped.
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.skipped * 20 <= self.checked + self.skipped && self.max_rel_err < tol
    }
}

fn central(base: u64, f: &mut dyn FnMut(f64) -> (f64, u64)) -> Option<f64> {
    'step: for h in [1e-3, 1e-4, 1e-5] {
        let mut v = [0.0; 4];
        for (slot, d) in v.iter_mut().zip([-2.0 * h, -h, h, 2.0 * h]) {
            let (val, pat) = f(d);
            if pat != base {
                continue 'step;
            }
            *slot = val;
        }
        return Some((v[0] - 8.0 * v[1] + 8.0 * v[2] - v[3]) / (12.0 * h));
    }
    None
}

/// Scalar probe `Σ out ⊙ w` with fixed random weights.
pub fn project(g: &mut Graph, out: Var, seed: u64) -> Var {
    let w = random_tensor(g.shape(out), &mut rng(seed ^ 0xabc));
    let wv = g.constant(&w);
    let p = g.mul(out, wv).unwrap();
    g.sum(p)
}

pub fn input_fd<'p>(inputs: &[Tensor], f: &dyn Fn(&mut Graph<'p>, &[Var]) -> Var) -> Fd {
    let eval = |ts: &[Tensor]| {
        let mut g = Graph::new();
        let vs: Vec<Var> = ts.iter().map(|t| g.leaf(t)).collect();
        let l = f(&mut g, &vs);
        (g.value(l)[0], g.activation_pattern())
    };
    let mut g = Graph::new();
    let vs: Vec<Var> = inputs.iter().map(|t| g.leaf(&t.clone().with_requires_grad(true))).collect();
    let loss = f(&mut g, &vs);
    let base = g.activation_pattern();
    let grads = g.backward(loss).unwrap();
    let mut fd = Fd::default();
    for (i, &v) in vs.iter().enumerate() {
        let analytic = grads.wrt(&g, v);
        for j in 0..inputs[i].len() {
            let numeric = central(base, &mut |d| {
                let mut shifted = inputs.to_vec();
                shifted[i].values_mut()[j] += d;
                eval(&shifted)
            });
            fd.record(analytic[j], numeric);
        }
    }
    fd
}

/// Parameter gradient check over `samples` random coordinates, or all.
pub fn param_fd<F>(store: &ParamStore, f: F, samples: Option<(usize, u64)>) -> Fd
where
    F: for<'a> Fn(&mut Graph<'a>, &'a ParamStore) -> Var,
{
    let mut s = store.clone();
    s.zero_grads();
    let mut g = Graph::new();
    let loss = f(&mut g, &s);
    let base = g.activation_pattern();
    let grads = g.backward(loss).unwrap();
    drop(g);
    grads.accumulate(&mut s, 1.0);
    let analytic = s.flat_grads().to_vec();
    let n = analytic.len();
    let idx: Vec<usize> = match samples {
        None => (0..n).collect(),
        Some((k, seed)) => {
            let mut r = rng(seed);
            (0..k).map(|_| r.gen_range(0..n)).collect()
        }
    };
    let mut fd = Fd::default();
    for j in idx {
        let orig = s.flat_values()[j];
        let numeric = central(base, &mut |d| {
            s.flat_values_mut()[j] = orig + d;
            let mut g = Graph::new();
            let l = f(&mut g, &s);
            (g.value(l)[0], g.activation_pattern())
        });
        s.flat_values_mut()[j] = orig;
        fd.record(analytic[j], numeric);
    }
    fd
}

/// Zero-padded "same" convolution by nested loops over `[c_in, h, w]`.
pub fn direct_conv(x: &[f64], (c_in, h, w): (usize, usize, usize), weight: &[f64], bias: &[f64], k: usize) -> Vec<f64> {
    let p = (k / 2) as isize;
    let mut out = vec![0.0; bias.len() * h * w];
    for (o, &b) in bias.iter().enumerate() {
        for y in 0..h {
            for x0 in 0..w {
                let mut acc = b;
                for ci in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + ky as isize - p;
                            let sx = x0 as isize + kx as isize - p;
                            if (0..h as isize).contains(&sy) && (0..w as isize).contains(&sx) {
                                acc += weight[((o * c_in + ci) * k + ky) * k + kx] * x[(ci * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                }
                out[(o * h + y) * w + x0] = acc;
            }
        }
    }
    out
}

pub fn direct_layer(store: &ParamStore, conv: &Conv, x: &[f64], s: usize) -> Vec<f64> {
    direct_conv(x, (conv.c_in, s, s), store.value(conv.weight), store.value(conv.bias), conv.k)
}

pub fn relu_all(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn fc(store: &ParamStore, l: &Linear, v: &[f64]) -> Vec<f64> {
    let (w, b) = (store.value(l.weight), store.value(l.bias));
    (0..l.n_out).map(|o| b[o] + (0..l.n_in).map(|i| w[o * l.n_in + i] * v[i]).sum::<f64>()).collect()
}

pub fn se_oracle(store: &ParamStore, se: &SeLayer, x: &[f64], hw: usize) -> Vec<f64> {
    let z: Vec<f64> = x.chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
    let h = relu_all(fc(store, &se.fc1, &z));
    let s: Vec<f64> = fc(store, &se.fc2, &h).into_iter().map(sigmoid).collect();
    x.iter().enumerate().map(|(i, v)| v * s[i / hw]).collect()
}

pub fn caca_oracle(store: &ParamStore, caca: &Caca, streams: &[Tensor], s: usize) -> Vec<f64> {
    let mut v = Vec::new();
    for ((t, se), conv) in streams.iter().zip(&caca.se_self).zip(&caca.halve) {
        let a = se_oracle(store, se, t.values(), s * s);
        v.extend(relu_all(direct_layer(store, conv, &a, s)));
    }
    let y = se_oracle(store, &caca.se_cross, &v, s * s);
    relu_all(direct_layer(store, &caca.squeeze, &y, s))
}

/// `F_gated` recomputed with a loop over streams per element.
pub fn gated_oracle(store: &ParamStore, gf: &GatedFusion, streams: &[Tensor], s: usize) -> Vec<f64> {
    let mut h: Vec<f64> = streams.iter().flat_map(|t| t.values().to_vec()).collect();
    for (i, conv) in gf.gate.iter().enumerate() {
        h = direct_layer(store, conv, &h, s);
        h = if i + 1 < gf.gate.len() { relu_all(h) } else { h.into_iter().map(sigmoid).collect() };
    }
    let n = gf.channels * s * s;
    (0..n).map(|i| streams.iter().enumerate().map(|(m, t)| t.values()[i] * h[m * n + i]).sum()).collect()
}

/// Bilinear 2× upsampling as a sum of tent-weighted inputs, sampling each
/// output at its half-pixel centre clamped to the input extent.
pub fn upsample_oracle(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let src = |o: usize, n: usize| ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
    let tent = |d: f64| (1.0 - d.abs()).max(0.0);
    let mut out = vec![0.0; c * 4 * h * w];
    for ci in 0..c {
        for oy in 0..2 * h {
            for ox in 0..2 * w {
                let (sy, sx) = (src(oy, h), src(ox, w));
                let mut acc = 0.0;
                for iy in 0..h {
                    for ix in 0..w {
                        acc += tent(sy - iy as f64) * tent(sx - ix as f64) * x[(ci * h + iy) * w + ix];
                    }
                }
                out[(ci * 2 * h + oy) * 2 * w + ox] = acc;
            }
        }
    }
    out
}

/// Precision and recall of `pred ≥ t` from explicit index sets.
pub fn pr_oracle(pred: &[f64], gt: &[f64], t: f64) -> (f64, f64) {
    let predicted: Vec<usize> = (0..pred.len()).filter(|&i| pred[i] >= t).collect();
    let actual: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] == 1.0).collect();
    let hits = predicted.iter().filter(|i| actual.contains(i)).count();
    let p = if predicted.is_empty() { 1.0 } else { hits as f64 / predicted.len() as f64 };
    (p, hits as f64 / actual.len() as f64)
}

pub fn f_oracle(pred: &[f64], gt: &[f64]) -> f64 {
    let t = (2.0 * pred.iter().sum::<f64>() / pred.len() as f64).min(1.0);
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for i in 0..pred.len() {
        match (pred[i] >= t && pred[i] != 0.0, gt[i] == 1.0) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        return 0.0;
    }
    let (p, r) = (tp / (tp + fp), tp / (tp + fneg));
    1.3 * p * r / (0.3 * p + r)
}

/// Structure measure following the reference code with 1-based indexing.
pub fn s_oracle(pred: &[f64], gt: &[f64], rows: usize, cols: usize) -> f64 {
    let at = |m: &[f64], r: usize, c: usize| m[(r - 1) * cols + (c - 1)];
    let n = (rows * cols) as f64;
    let y = gt.iter().sum::<f64>() / n;
    let mean_pred = pred.iter().sum::<f64>() / n;
    if y == 0.0 {
        return 1.0 - mean_pred;
    }
    if y == 1.0 {
        return mean_pred;
    }
    let eps = f64::EPSILON;
    let object = |vals: Vec<f64>| {
        let k = vals.len() as f64;
        let x = vals.iter().sum::<f64>() / k;
        let sd = if vals.len() > 1 { (vals.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / (k - 1.0)).sqrt() } else { 0.0 };
        2.0 * x / (x * x + 1.0 + sd + eps)
    };
    let fg: Vec<f64> = (0..pred.len()).filter(|&i| gt[i] == 1.0).map(|i| pred[i]).collect();
    let bg: Vec<f64> = (0..pred.len()).filter(|&i| gt[i] != 1.0).map(|i| 1.0 - pred[i]).collect();
    let s_obj = y * object(fg) + (1.0 - y) * object(bg);

    let total: f64 = gt.iter().sum();
    let (mut sx, mut sy) = (0.0, 0.0);
    for r in 1..=rows {
        for c in 1..=cols {
            sx += at(gt, r, c) * c as f64;
            sy += at(gt, r, c) * r as f64;
        }
    }
    let (x, yy) = ((sx / total).round() as usize, (sy / total).round() as usize);
    let ssim = |r0: usize, r1: usize, c0: usize, c1: usize| {
        let (mut p, mut g) = (Vec::new(), Vec::new());
        for r in r0..=r1 {
            for c in c0..=c1 {
                p.push(at(pred, r, c));
                g.push(at(gt, r, c));
            }
        }
        let k = p.len() as f64;
        let (mx, my) = (p.iter().sum::<f64>() / k, g.iter().sum::<f64>() / k);
        let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
        for i in 0..p.len() {
            vx += (p[i] - mx) * (p[i] - mx);
            vy += (g[i] - my) * (g[i] - my);
            cxy += (p[i] - mx) * (g[i] - my);
        }
        let d = k - 1.0 + eps;
        let a = 4.0 * mx * my * (cxy / d);
        let b = (mx * mx + my * my) * (vx / d + vy / d);
        if a != 0.0 {
            a / (b + eps)
        } else if b == 0.0 {
            1.0
        } else {
            0.0
        }
    };
    let w1 = (x * yy) as f64 / n;
    let w2 = ((cols - x) * yy) as f64 / n;
    let w3 = (x * (rows - yy)) as f64 / n;
    let w4 = 1.0 - w1 - w2 - w3;
    let mut s_reg = 0.0;
    if w1 > 0.0 {
        s_reg += w1 * ssim(1, yy, 1, x);
    }
    if w2 > 0.0 {
        s_reg += w2 * ssim(1, yy, x + 1, cols);
    }
    if w3 > 0.0 {
        s_reg += w3 * ssim(yy + 1, rows, 1, x);
    }
    if w4 > 1e-12 {
        s_reg += w4 * ssim(yy + 1, rows, x + 1, cols);
    }
    (0.5 * s_obj + 0.5 * s_reg).max(0.0)
}

/// A random axis-aligned rectangle mask with a noisy prediction of it.
pub fn random_case(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let (a, b) = (r.gen_range(0..n - 2), r.gen_range(0..n - 2));
    let (h, w) = (r.gen_range(1..n - a), r.gen_range(1..n - b));
    let gt: Vec<f64> = (0..n * n)
        .map(|i| f64::from(u8::from((a..a + h).contains(&(i / n)) && (b..b + w).contains(&(i % n)))))
        .collect();
    let pred = gt.iter().map(|&g| (0.6 * g + r.gen_range(0.0..0.5)).min(1.0)).collect();
    (pred, gt)
}
