//! Dense kernels behind the tape operations.
//!
//! Batches are stored feature-major: an activation block is `[features x batch]`,
//! so every inner loop walks a contiguous batch row.

use crate::array::Array2;
use crate::parallel::Exec;

/// Dot product with four fixed accumulators; the summation order depends only
/// on the slice length.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Four [`dot`]s sharing the left operand; each result is bit-identical to
/// the corresponding `dot(a, b[j])`.
#[inline]
fn dot4(a: &[f64], b: [&[f64]; 4]) -> [f64; 4] {
    #[inline(always)]
    fn fma4(acc: &mut [f64; 4], x: &[f64], y: &[f64]) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut acc = [[0.0f64; 4]; 4];
    let chunks = a
        .chunks_exact(4)
        .zip(b[0].chunks_exact(4))
        .zip(b[1].chunks_exact(4))
        .zip(b[2].chunks_exact(4))
        .zip(b[3].chunks_exact(4));
    for ((((x, y0), y1), y2), y3) in chunks {
        fma4(&mut acc[0], x, y0);
        fma4(&mut acc[1], x, y1);
        fma4(&mut acc[2], x, y2);
        fma4(&mut acc[3], x, y3);
    }
    let main = a.len() - a.len() % 4;
    let mut out = [0.0; 4];
    for ((o, acc), b) in out.iter_mut().zip(&acc).zip(&b) {
        let mut tail = 0.0;
        for (x, y) in a[main..].iter().zip(&b[main..]) {
            tail += x * y;
        }
        *o = (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail;
    }
    out
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

/// Columns per cache tile. A tile of a few hundred feature rows fits in L2,
/// so every input row is streamed from memory once per kernel call.
const TILE: usize = 256;

/// Assembles a `[rows x n]` array from column tiles; `f(c0, width)` returns
/// the row-major `[rows x width]` block for columns `c0..c0 + width`.
fn from_col_tiles<F>(exec: Exec, rows: usize, n: usize, f: F) -> Array2
where
    F: Fn(usize, usize) -> Vec<f64> + Sync + Send,
{
    let mut out = Array2::zeros(rows, n);
    if rows == 0 || n == 0 {
        return out;
    }
    let tiles = exec.map_collect(n.div_ceil(TILE), |t| {
        let c0 = t * TILE;
        f(c0, TILE.min(n - c0))
    });
    for (t, block) in tiles.iter().enumerate() {
        let c0 = t * TILE;
        let width = block.len() / rows;
        for (r, src) in block.chunks_exact(width).enumerate() {
            out.row_mut(r)[c0..c0 + width].copy_from_slice(src);
        }
    }
    out
}

/// `W[o x i] * Z[i x n]`, plus an optional `[o x 1]` bias broadcast over columns.
///
/// Each output entry is accumulated as `bias + w_0 z_0 + w_1 z_1 + ...` in
/// increasing inner index, independent of tiling and thread count.
pub fn matmul(exec: Exec, w: &Array2, z: &Array2, bias: Option<&Array2>) -> Array2 {
    let (out_dim, inner) = w.shape();
    let n = z.cols();
    debug_assert_eq!(inner, z.rows());
    from_col_tiles(exec, out_dim, n, |c0, width| {
        let zt = |i: usize| &z.row(i)[c0..c0 + width];
        let mut buf = vec![0.0; out_dim * width];
        for (r, out) in buf.chunks_exact_mut(width).enumerate() {
            if let Some(b) = bias {
                out.fill(b.data()[r]);
            }
            let wr = w.row(r);
            let mut i = 0;
            while i + 4 <= inner {
                let (w0, w1, w2, w3) = (wr[i], wr[i + 1], wr[i + 2], wr[i + 3]);
                let rows = zt(i).iter().zip(zt(i + 1)).zip(zt(i + 2)).zip(zt(i + 3));
                for (o, (((a, b), c), d)) in out.iter_mut().zip(rows) {
                    *o = *o + w0 * a + w1 * b + w2 * c + w3 * d;
                }
                i += 4;
            }
            for (i, &wv) in wr.iter().enumerate().skip(i) {
                axpy(wv, zt(i), out);
            }
        }
        buf
    })
}

/// `W^T[i x o] * G[o x n]`.
pub fn matmul_tn(exec: Exec, w: &Array2, g: &Array2) -> Array2 {
    debug_assert_eq!(w.rows(), g.rows());
    matmul(exec, &w.transpose(), g, None)
}

/// `G[o x n] * Z^T[n x i]`.
///
/// Each tile of batch columns contributes a partial product; partials are
/// summed in tile order.
pub fn matmul_nt(exec: Exec, g: &Array2, z: &Array2) -> Array2 {
    let out_dim = g.rows();
    let inner = z.rows();
    let n = g.cols();
    debug_assert_eq!(n, z.cols());
    let mut out = Array2::zeros(out_dim, inner);
    if n == 0 {
        return out;
    }
    let partials = exec.map_collect(n.div_ceil(TILE), |t| {
        let cols = t * TILE..((t + 1) * TILE).min(n);
        let mut p = vec![0.0; out_dim * inner];
        for (o, prow) in p.chunks_exact_mut(inner.max(1)).enumerate().take(out_dim) {
            let grow = &g.row(o)[cols.clone()];
            let zt = |i: usize| &z.row(i)[cols.clone()];
            let mut i = 0;
            while i + 4 <= inner {
                let d = dot4(grow, [zt(i), zt(i + 1), zt(i + 2), zt(i + 3)]);
                prow[i..i + 4].copy_from_slice(&d);
                i += 4;
            }
            for (i, v) in prow.iter_mut().enumerate().skip(i) {
                *v = dot(grow, zt(i));
            }
        }
        p
    });
    for p in partials {
        for (a, b) in out.data_mut().iter_mut().zip(&p) {
            *a += b;
        }
    }
    out
}

/// Sum across columns: `[r x n] -> [r x 1]`.
pub fn row_sums(g: &Array2) -> Array2 {
    Array2::from_fn(g.rows(), 1, |r, _| g.row(r).iter().sum())
}

/// Rows `m*K + (k-1)` of the returned blocks hold `sin(k x_m)` and `cos(k x_m)`.
///
/// Harmonics above the first come from the angle-addition recurrence, so the
/// error of row `k` grows roughly linearly in `k` (about `1e-14` at `k = 250`).
pub fn sin_cos_features(exec: Exec, x: &Array2, k_max: usize) -> (Array2, Array2) {
    let (dims, n) = x.shape();
    let rows = dims * k_max;
    let both = from_col_tiles(exec, 2 * rows, n, |c0, width| {
        let mut buf = vec![0.0; 2 * rows * width];
        let (sin, cos) = buf.split_at_mut(rows * width);
        for ((s, c), m) in sin
            .chunks_exact_mut(k_max * width)
            .zip(cos.chunks_exact_mut(k_max * width))
            .zip(0..dims)
        {
            harmonics(&x.row(m)[c0..c0 + width], s, c);
        }
        buf
    });
    let mut data = both.into_data();
    let cos = data.split_off(rows * n);
    (
        Array2::from_vec(rows, n, data).expect("sin block shape"),
        Array2::from_vec(rows, n, cos).expect("cos block shape"),
    )
}

/// Fills `K` consecutive rows of `s` and `c` (each `x.len()` wide) with
/// `sin(kx)` and `cos(kx)` for `k = 1..=K`.
fn harmonics(x: &[f64], s: &mut [f64], c: &mut [f64]) {
    let width = x.len();
    let (s1, s_rest) = s.split_at_mut(width);
    let (c1, c_rest) = c.split_at_mut(width);
    for ((sv, cv), &xv) in s1.iter_mut().zip(c1.iter_mut()).zip(x) {
        (*sv, *cv) = xv.sin_cos();
    }
    let (s1, c1): (&[f64], &[f64]) = (s1, c1);
    let (mut sp, mut cp) = (s1, c1);
    for (sk, ck) in s_rest
        .chunks_exact_mut(width)
        .zip(c_rest.chunks_exact_mut(width))
    {
        for j in 0..width {
            sk[j] = sp[j] * c1[j] + cp[j] * s1[j];
            ck[j] = cp[j] * c1[j] - sp[j] * s1[j];
        }
        (sp, cp) = (sk, ck);
    }
}

/// Gradient w.r.t. `x` of `<g_sin, sin(kx)> + <g_cos, cos(kx)>` given the
/// stored feature blocks. Either upstream may be absent.
pub fn sin_cos_backward(
    exec: Exec,
    k_max: usize,
    sin: &Array2,
    cos: &Array2,
    g_sin: Option<&Array2>,
    g_cos: Option<&Array2>,
) -> Array2 {
    let n = sin.cols();
    let dims = sin.rows() / k_max;
    let mut dx = Array2::zeros(dims, n);
    exec.for_each_row(dx.data_mut(), n, |m, row| {
        for ki in 0..k_max {
            let r = m * k_max + ki;
            let k = (ki + 1) as f64;
            if let Some(gs) = g_sin {
                for ((d, &g), &cv) in row.iter_mut().zip(gs.row(r)).zip(cos.row(r)) {
                    *d += g * k * cv;
                }
            }
            if let Some(gc) = g_cos {
                for ((d, &g), &sv) in row.iter_mut().zip(gc.row(r)).zip(sin.row(r)) {
                    *d -= g * k * sv;
                }
            }
        }
    });
    dx
}

/// `tanh` through one `exp`, within a few ulp of `f64::tanh` and about twice
/// as fast. Small arguments use the library routine to keep relative accuracy.
#[inline]
pub fn tanh(v: f64) -> f64 {
    let a = v.abs();
    if a < 0.0625 {
        return v.tanh();
    }
    let t = if a > 22.0 {
        1.0
    } else {
        let e = (-2.0 * a).exp();
        (1.0 - e) / (1.0 + e)
    };
    t.copysign(v)
}

/// Elementwise `tanh(omega0 * h)`.
pub fn tanh_scaled(exec: Exec, h: &Array2, omega0: f64) -> Array2 {
    let mut out = Array2::zeros(h.rows(), h.cols());
    exec.map_into(h.data(), out.data_mut(), |v| tanh(omega0 * v));
    out
}

/// `g * omega0 * (1 - y^2)` where `y` is the stored forward output.
pub fn tanh_scaled_backward(exec: Exec, y: &Array2, g: &Array2, omega0: f64) -> Array2 {
    let mut out = Array2::zeros(y.rows(), y.cols());
    let n = y.cols();
    exec.for_each_row(out.data_mut(), n, |r, row| {
        for ((o, &yv), &gv) in row.iter_mut().zip(y.row(r)).zip(g.row(r)) {
            *o = gv * omega0 * (1.0 - yv * yv);
        }
    });
    out
}

/// Mean over batch columns of the squared residual norm.
pub fn l2_loss(pred: &Array2, target: &Array2) -> f64 {
    let n = pred.cols();
    let mut total = 0.0;
    for r in 0..pred.rows() {
        total += pred
            .row(r)
            .iter()
            .zip(target.row(r))
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>();
    }
    total / n as f64
}
