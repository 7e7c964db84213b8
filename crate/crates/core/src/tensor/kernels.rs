//! Raw slice kernels behind the differentiable ops. Layout is channel-major
//! `[C, H, W]` (the batch dimension is implicit).

/// `c = alpha * a·b + beta * c` for row-major `c[m×n]`; `a` and `b` are
/// described by row/column strides so transposes need no copy.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let a_end = (m - 1) as isize * a_strides.0 + (k - 1) as isize * a_strides.1;
    let b_end = (k - 1) as isize * b_strides.0 + (n - 1) as isize * b_strides.1;
    assert!(a_end >= 0 && (a_end as usize) < a.len());
    assert!(b_end >= 0 && (b_end as usize) < b.len());
    // SAFETY: the asserts above bound every element the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold `x[C,H,W]` into `col[C·k·k, H·W]` for a stride-1 convolution with
/// `pad = k/2`.
pub fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, col: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    debug_assert_eq!(col.len(), c * k * k * hw);
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let lo = (-dx).clamp(0, w as isize) as usize;
                    let hi = (w as isize - dx).clamp(0, w as isize) as usize;
                    out[..lo].fill(0.0);
                    out[hi.max(lo)..].fill(0.0);
                    if hi > lo {
                        let s0 = (lo as isize + dx) as usize;
                        out[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `col` back into `dx`.
pub fn col2im(col: &[f64], c: usize, h: usize, w: usize, k: usize, dx: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let ddx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let lo = (-ddx).clamp(0, w as isize) as usize;
                    let hi = (w as isize - ddx).clamp(0, w as isize) as usize;
                    if hi <= lo {
                        continue;
                    }
                    let s0 = (lo as isize + ddx) as usize;
                    let dst = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (hi - lo)];
                    for (d, s) in dst.iter_mut().zip(&src[y * w + lo..y * w + hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }
}

/// Stride-1, size-preserving convolution. `out` is `[c_out, h, w]`.
pub fn conv2d_forward(
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    d: ConvDims,
    out: &mut [f64],
) {
    let hw = d.h * d.w;
    let patch = d.patch();
    let mut scratch;
    let col: &[f64] = if d.k == 1 {
        x
    } else {
        scratch = vec![0.0; patch * hw];
        im2col(x, d.c_in, d.h, d.w, d.k, &mut scratch);
        &scratch
    };
    match bias {
        Some(b) => {
            for (co, row) in out.chunks_exact_mut(hw).enumerate() {
                row.fill(b[co]);
            }
        }
        None => out.fill(0.0),
    }
    gemm(
        d.c_out,
        patch,
        hw,
        weight,
        (patch as isize, 1),
        col,
        (hw as isize, 1),
        1.0,
        out,
    );
}

/// Accumulates gradients of a convolution into whichever of `dx`, `dw`,
/// `db` are requested.
pub fn conv2d_backward(
    x: &[f64],
    weight: &[f64],
    dy: &[f64],
    d: ConvDims,
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let hw = d.h * d.w;
    let patch = d.patch();
    if let Some(db) = db {
        for (co, row) in dy.chunks_exact(hw).enumerate() {
            db[co] += row.iter().sum::<f64>();
        }
    }
    if let Some(dw) = dw {
        let mut scratch;
        let col: &[f64] = if d.k == 1 {
            x
        } else {
            scratch = vec![0.0; patch * hw];
            im2col(x, d.c_in, d.h, d.w, d.k, &mut scratch);
            &scratch
        };
        // dw[c_out, patch] += dy[c_out, hw] · colᵀ[hw, patch]
        gemm(
            d.c_out,
            hw,
            patch,
            dy,
            (hw as isize, 1),
            col,
            (1, hw as isize),
            1.0,
            dw,
        );
    }
    if let Some(dx) = dx {
        // dcol[patch, hw] = wᵀ[patch, c_out] · dy[c_out, hw]
        if d.k == 1 {
            gemm(
                patch,
                d.c_out,
                hw,
                weight,
                (1, patch as isize),
                dy,
                (hw as isize, 1),
                1.0,
                dx,
            );
        } else {
            let mut dcol = vec![0.0; patch * hw];
            gemm(
                patch,
                d.c_out,
                hw,
                weight,
                (1, patch as isize),
                dy,
                (hw as isize, 1),
                0.0,
                &mut dcol,
            );
            col2im(&dcol, d.c_in, d.h, d.w, d.k, dx);
        }
    }
}

/// 2×2 stride-2 max pooling; returns the flat input index of each window's
/// maximum (first in row-major order on ties).
pub fn max_pool2_forward(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    out: &mut [f64],
    argmax: &mut [usize],
) {
    let (oh, ow) = (h / 2, w / 2);
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = ci * h * w + 2 * oy * w + 2 * ox;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                let o = (ci * oh + oy) * ow + ox;
                out[o] = x[best];
                argmax[o] = best;
            }
        }
    }
}

/// Source taps of 2× linear upsampling along one axis with half-pixel
/// centres and border clamping: output `o` samples input coordinate
/// `(o + 0.5) / 2 - 0.5`.
pub fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample2x_forward(x: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let r0 = &plane[y0 * w..(y0 + 1) * w];
            let r1 = &plane[y1 * w..(y1 + 1) * w];
            let dst = &mut out[(ci * oh + oy) * ow..(ci * oh + oy + 1) * ow];
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                dst[ox] = top + (bot - top) * fy;
            }
        }
    }
}

pub fn upsample2x_backward(dy: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    for ci in 0..c {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let src = &dy[(ci * oh + oy) * ow..(ci * oh + oy + 1) * ow];
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let g = src[ox];
                plane[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                plane[y0 * w + x1] += g * (1.0 - fy) * fx;
                plane[y1 * w + x0] += g * fy * (1.0 - fx);
                plane[y1 * w + x1] += g * fy * fx;
            }
        }
    }
}
