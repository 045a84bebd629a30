//! Small dense kernels shared by the solvers.

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Two dot products of `a` against `x` and `y` in a single pass over `a`.
#[inline]
pub fn dot2(a: &[f64], x: &[f64], y: &[f64]) -> (f64, f64) {
    debug_assert!(a.len() == x.len() && a.len() == y.len());
    let mut sx = [0.0f64; 4];
    let mut sy = [0.0f64; 4];
    let n4 = a.len() / 4 * 4;
    for i in (0..n4).step_by(4) {
        for k in 0..4 {
            sx[k] += a[i + k] * x[i + k];
            sy[k] += a[i + k] * y[i + k];
        }
    }
    let mut tx = 0.0;
    let mut ty = 0.0;
    for i in n4..a.len() {
        tx += a[i] * x[i];
        ty += a[i] * y[i];
    }
    (
        (sx[0] + sx[1]) + (sx[2] + sx[3]) + tx,
        (sy[0] + sy[1]) + (sy[2] + sy[3]) + ty,
    )
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += s * x`
#[inline]
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}
