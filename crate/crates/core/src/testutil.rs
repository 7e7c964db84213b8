//! Finite-difference oracles shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, ParamStore, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Stencil steps tried in turn; a smaller step is used only when the larger
/// one crosses a kink.
const STEPS: [f64; 3] = [1e-3, 1e-4, 1e-5];

/// Outcome of a finite-difference comparison. Coordinates whose stencil
/// crosses a ReLU/max-pool/clip branch are not differentiable along the
/// probed segment and are counted in `skipped` instead of `max_rel_err`.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCheck {
    pub fn assert_within(&self, tol: f64, label: &str) {
        assert!(self.checked > 0, "{label}: nothing checked");
        assert!(
            self.skipped * 20 <= self.checked + self.skipped,
            "{label}: {} of {} coordinates straddle a kink",
            self.skipped,
            self.checked + self.skipped
        );
        assert!(self.max_rel_err < tol, "{label}: rel err {} >= {tol}", self.max_rel_err);
    }

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
}

fn new_check() -> GradCheck {
    GradCheck {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    }
}

/// Five-point central difference; `None` when every step in `STEPS` has a
/// stencil point on a different activation pattern than `base`.
fn central(base: u64, f: &mut dyn FnMut(f64) -> (f64, u64)) -> Option<f64> {
    'step: for h in STEPS {
        let mut vals = [0.0; 4];
        for (slot, d) in vals.iter_mut().zip([-2.0 * h, -h, h, 2.0 * h]) {
            let (v, pat) = f(d);
            if pat != base {
                continue 'step;
            }
            *slot = v;
        }
        return Some((vals[0] - 8.0 * vals[1] + 8.0 * vals[2] - vals[3]) / (12.0 * h));
    }
    None
}

/// Projects `out` onto fixed random weights so the whole Jacobian is probed.
pub fn project(g: &mut Graph, out: Var, seed: u64) -> Var {
    let mut r = rng(seed ^ 0x9e37);
    let w = random_tensor(g.shape(out), &mut r);
    let wv = g.constant(&w);
    let p = g.mul(out, wv).unwrap();
    g.sum(p)
}

/// Compares analytic input gradients of `f` against central differences.
pub fn input_grad_check<'p>(inputs: &[Tensor], f: &dyn Fn(&mut Graph<'p>, &[Var]) -> Var) -> GradCheck {
    let eval = |ts: &[Tensor]| {
        let mut g = Graph::new();
        let vs: Vec<Var> = ts.iter().map(|t| g.leaf(t)).collect();
        let l = f(&mut g, &vs);
        (g.value(l)[0], g.activation_pattern())
    };
    let mut g = Graph::new();
    let vs: Vec<Var> = inputs
        .iter()
        .map(|t| g.leaf(&t.clone().with_requires_grad(true)))
        .collect();
    let loss = f(&mut g, &vs);
    let base = g.activation_pattern();
    let grads = g.backward(loss).unwrap();
    let mut check = new_check();
    for (i, &v) in vs.iter().enumerate() {
        let analytic = grads.wrt(&g, v);
        for j in 0..inputs[i].len() {
            let numeric = central(base, &mut |d| {
                let mut shifted = inputs.to_vec();
                shifted[i].values_mut()[j] += d;
                eval(&shifted)
            });
            check.record(analytic[j], numeric);
        }
    }
    check
}

/// Max relative error (over all inputs) of [`input_grad_check`], asserting
/// that almost every coordinate was checkable.
pub fn input_grad_error<'p>(inputs: &[Tensor], f: &dyn Fn(&mut Graph<'p>, &[Var]) -> Var) -> f64 {
    let c = input_grad_check(inputs, f);
    assert!(c.skipped * 20 <= c.checked + c.skipped, "too many kinks: {c:?}");
    c.max_rel_err
}

/// Compares analytic parameter gradients against central differences over
/// `samples` random scalar parameters, or all of them when `None`.
pub fn param_grad_check<F>(
    store: &ParamStore,
    f: F,
    samples: Option<(usize, u64)>,
) -> GradCheck
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
    let eval = |st: &ParamStore| {
        let mut g = Graph::new();
        let l = f(&mut g, st);
        (g.value(l)[0], g.activation_pattern())
    };
    let mut check = new_check();
    for j in idx {
        let orig = s.flat_values()[j];
        let numeric = central(base, &mut |d| {
            s.flat_values_mut()[j] = orig + d;
            eval(&s)
        });
        s.flat_values_mut()[j] = orig;
        check.record(analytic[j], numeric);
    }
    check
}

/// Nested-loop zero-padded "same" convolution over a `[c_in, h, w]` buffer.
pub fn direct_conv(
    x: &[f64],
    (c_in, h, w): (usize, usize, usize),
    weight: &[f64],
    bias: &[f64],
    k: usize,
) -> Vec<f64> {
    let c_out = bias.len();
    let p = (k / 2) as isize;
    let mut out = vec![0.0; c_out * h * w];
    for o in 0..c_out {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = bias[o];
                for ci in 0..c_in {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + ky as isize - p;
                            let sx = xx as isize + kx as isize - p;
                            if sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize {
                                acc += weight[((o * c_in + ci) * k + ky) * k + kx]
                                    * x[(ci * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                }
                out[(o * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

/// [`direct_conv`] using the weights of `conv` in `store`.
pub fn direct_layer(
    store: &ParamStore,
    conv: &crate::nn::Conv,
    x: &[f64],
    hw: (usize, usize),
) -> Vec<f64> {
    direct_conv(
        x,
        (conv.c_in, hw.0, hw.1),
        store.value(conv.weight),
        store.value(conv.bias),
        conv.k,
    )
}

pub fn relu_all(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

pub fn sigmoid_ref(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
