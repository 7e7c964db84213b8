//! Canny edge detection on single-channel maps, used to derive edge
//! supervision from ground-truth masks.

/// Hysteresis thresholds as fractions of the maximum gradient magnitude.
pub const LOW_FRAC: f64 = 0.1;
pub const HIGH_FRAC: f64 = 0.3;

fn gaussian_kernel5() -> [f64; 5] {
    let mut k = [0.0; 5];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - 2.0;
        *v = (-d * d / 2.0).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

fn at(x: &[f64], h: usize, w: usize, y: isize, xx: isize) -> f64 {
    let y = y.clamp(0, h as isize - 1) as usize;
    let xx = xx.clamp(0, w as isize - 1) as usize;
    x[y * w + xx]
}

/// Separable 5×5 Gaussian blur with σ = 1 and clamped borders.
fn blur(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian_kernel5();
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            tmp[y * w + xx] = (0..5)
                .map(|i| k[i] * at(x, h, w, y as isize, xx as isize + i as isize - 2))
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            out[y * w + xx] = (0..5)
                .map(|i| k[i] * at(&tmp, h, w, y as isize + i as isize - 2, xx as isize))
                .sum();
        }
    }
    out
}

/// Edge map of `map` (`h × w`, row-major) with hysteresis thresholds
/// `low`/`high` given as fractions of the maximum gradient magnitude.
/// Returns 1.0 on edge pixels and 0.0 elsewhere.
pub fn canny(map: &[f64], h: usize, w: usize, low: f64, high: f64) -> Vec<f64> {
    assert_eq!(map.len(), h * w, "canny: map is not {h}×{w}");
    assert!((0.0..=high).contains(&low), "canny: need 0 <= low <= high");
    let b = blur(map, h, w);
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    let mut mag = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dy: isize, dx: isize| at(&b, h, w, y + dy, x + dx);
            let sx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let sy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let i = y as usize * w + x as usize;
            gx[i] = sx;
            gy[i] = sy;
            mag[i] = sx.hypot(sy);
        }
    }
    let max = mag.iter().cloned().fold(0.0, f64::max);
    let mut out = vec![0.0; h * w];
    // a blurred binary mask has gradients of order 1; anything at rounding
    // level is a flat map
    if max <= 1e-9 {
        return out;
    }

    // Non-maximum suppression along the quantized gradient direction. The
    // strict comparison on one side thins plateaus to a single pixel.
    let mut thin = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            let (dy, dx) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let fwd = at(&mag, h, w, y + dy, x + dx);
            let back = at(&mag, h, w, y - dy, x - dx);
            if m >= fwd && m > back {
                thin[i] = m;
            }
        }
    }

    let (lo, hi) = (low * max, high * max);
    let mut stack: Vec<usize> = (0..h * w).filter(|&i| thin[i] >= hi).collect();
    for &i in &stack {
        out[i] = 1.0;
    }
    while let Some(i) = stack.pop() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == 0.0 && thin[j] >= lo {
                    out[j] = 1.0;
                    stack.push(j);
                }
            }
        }
    }
    out
}

/// [`canny`] with the default thresholds.
pub fn mask_edges(mask: &[f64], h: usize, w: usize) -> Vec<f64> {
    canny(mask, h, w, LOW_FRAC, HIGH_FRAC)
}
