//! Independent reference implementations used as test oracles. None of these
//! go through the tape or the library kernels.

#![allow(dead_code)]

use fkan::data::{ImageBuffer, OccupancyVolume};
use fkan::layers::{FirstLayer, Model};
use fkan::Array2;
use rand::Rng;

/// `W z + b` by explicit triple loop.
pub fn naive_matmul_add(w: &Array2, z: &Array2, b: &Array2) -> Array2 {
    let mut out = Array2::zeros(w.rows(), z.cols());
    for r in 0..w.rows() {
        for c in 0..z.cols() {
            let mut s = b[(r, 0)];
            for i in 0..w.cols() {
                s += w[(r, i)] * z[(i, c)];
            }
            out[(r, c)] = s;
        }
    }
    out
}

/// Fourier layer by quadruple loop; `x` is sample-major `[n x d_i]`.
pub fn fourier_oracle(model_first: &fkan::layers::FourierLayerParams, x: &Array2) -> Array2 {
    let (h1, d, k_max) = (
        model_first.latent_dim(),
        model_first.input_dim(),
        model_first.grid_size(),
    );
    let mut out = Array2::zeros(x.rows(), h1);
    for n in 0..x.rows() {
        for j in 0..h1 {
            let mut s = 0.0;
            for m in 0..d {
                for k in 1..=k_max {
                    let kx = k as f64 * x[(n, m)];
                    s +=
                        model_first.a_at(j, m, k) * kx.sin() + model_first.b_at(j, m, k) * kx.cos();
                }
            }
            out[(n, j)] = s;
        }
    }
    out
}

/// Straight-line forward pass, one sample at a time.
pub fn forward_oracle(model: &Model, x: &Array2) -> Array2 {
    let omega0 = model.config.omega0;
    let mut out = Array2::zeros(x.rows(), model.config.output_dim);
    for n in 0..x.rows() {
        let mut z: Vec<f64> = match &model.first {
            FirstLayer::Fourier(f) => {
                let row = Array2::from_vec(1, x.cols(), x.row(n).to_vec()).unwrap();
                fourier_oracle(f, &row).row(0).to_vec()
            }
            FirstLayer::Dense(d) => (0..d.fan_out())
                .map(|o| {
                    let mut h = d.bias[(o, 0)];
                    for i in 0..d.fan_in() {
                        h += d.weight[(o, i)] * x[(n, i)];
                    }
                    (omega0 * h).tanh()
                })
                .collect(),
        };
        for layer in &model.hidden {
            z = (0..layer.fan_out())
                .map(|o| {
                    let mut h = layer.bias[(o, 0)];
                    for (i, zi) in z.iter().enumerate() {
                        h += layer.weight[(o, i)] * zi;
                    }
                    (omega0 * h).tanh()
                })
                .collect();
        }
        for o in 0..model.head.fan_out() {
            let mut y = model.head.bias[(o, 0)];
            for (i, zi) in z.iter().enumerate() {
                y += model.head.weight[(o, i)] * zi;
            }
            out[(n, o)] = y;
        }
    }
    out
}

pub fn l2_oracle(pred: &Array2, target: &Array2) -> f64 {
    let mut total = 0.0;
    for n in 0..pred.rows() {
        for c in 0..pred.cols() {
            let d = pred[(n, c)] - target[(n, c)];
            total += d * d;
        }
    }
    total / pred.rows() as f64
}

/// Central differences of the L2 loss w.r.t. every parameter scalar,
/// in `Model::params` order.
pub fn finite_difference_grads(model: &Model, x: &Array2, y: &Array2, h: f64) -> Vec<Array2> {
    let loss = |m: &Model| l2_oracle(&forward_oracle(m, x), y);
    let shapes: Vec<(usize, usize)> = model.params().iter().map(|p| p.shape()).collect();
    let mut out = Vec::new();
    for (pi, &(r, c)) in shapes.iter().enumerate() {
        let mut g = Array2::zeros(r, c);
        for e in 0..r * c {
            let mut plus = model.clone();
            plus.params_mut()[pi].data_mut()[e] += h;
            let mut minus = model.clone();
            minus.params_mut()[pi].data_mut()[e] -= h;
            g.data_mut()[e] = (loss(&plus) - loss(&minus)) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// `|a - b| <= rel * max(|a|, |b|)` or `|a - b| <= floor`.
pub fn grad_close(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    let d = (a - b).abs();
    d <= floor || d <= rel * a.abs().max(b.abs())
}

pub fn random_array(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2 {
    Array2::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn random_image(rng: &mut impl Rng, w: usize, h: usize, c: usize) -> ImageBuffer {
    let px = (0..w * h * c).map(|_| rng.random_range(0.0..1.0)).collect();
    ImageBuffer::new(w, h, c, px).unwrap()
}

pub fn random_volume(rng: &mut impl Rng, r: usize, p: f64) -> OccupancyVolume {
    let v = (0..r * r * r)
        .map(|_| if rng.random_bool(p) { 1.0 } else { 0.0 })
        .collect();
    OccupancyVolume::new(r, v).unwrap()
}

pub fn psnr_oracle(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for y in 0..a.height() {
        for x in 0..a.width() {
            for c in 0..a.channels() {
                let d = a.get(x, y, c).clamp(0.0, 1.0) - b.get(x, y, c).clamp(0.0, 1.0);
                s += d * d;
                n += 1;
            }
        }
    }
    let mse = s / n as f64;
    -10.0 * mse.log10()
}

fn mirror(i: isize, n: isize) -> usize {
    // d c b a | a b c d | d c b a, repeated
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

fn luma_padded(img: &ImageBuffer, win: usize) -> (usize, usize, Vec<Vec<f64>>) {
    let (w, h) = (img.width(), img.height());
    let (pw, ph) = (w.max(win), h.max(win));
    let (ox, oy) = (((pw - w) / 2) as isize, ((ph - h) / 2) as isize);
    let mut plane = vec![vec![0.0; pw]; ph];
    for (py, row) in plane.iter_mut().enumerate() {
        for (px, v) in row.iter_mut().enumerate() {
            let sx = mirror(px as isize - ox, w as isize);
            let sy = mirror(py as isize - oy, h as isize);
            let mut s = 0.0;
            for c in 0..img.channels() {
                s += img.get(sx, sy, c).clamp(0.0, 1.0);
            }
            *v = s / img.channels() as f64;
        }
    }
    (pw, ph, plane)
}

/// SSIM by direct per-window double loop over a 2-D Gaussian window.
pub fn ssim_oracle(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    const WIN: usize = 11;
    let sigma = 1.5f64;
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let mut g = [[0.0f64; WIN]; WIN];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let (w, h, pa) = luma_padded(a, WIN);
    let (_, _, pb) = luma_padded(b, WIN);
    let mut acc = 0.0;
    let mut count = 0usize;
    for oy in 0..=h - WIN {
        for ox in 0..=w - WIN {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..WIN {
                for j in 0..WIN {
                    let wt = g[i][j] / total;
                    let (x, y) = (pa[oy + i][ox + j], pb[oy + i][ox + j]);
                    mx += wt * x;
                    my += wt * y;
                }
            }
            for i in 0..WIN {
                for j in 0..WIN {
                    let wt = g[i][j] / total;
                    let (x, y) = (pa[oy + i][ox + j] - mx, pb[oy + i][ox + j] - my);
                    sxx += wt * x * x;
                    syy += wt * y * y;
                    sxy += wt * x * y;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
                / ((mx * mx + my * my + c1) * (sxx + syy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

pub fn iou_oracle(a: &OccupancyVolume, b: &OccupancyVolume) -> f64 {
    let r = a.resolution();
    let (mut inter, mut union) = (0u64, 0u64);
    for z in 0..r {
        for y in 0..r {
            for x in 0..r {
                let (p, q) = (a.get(x, y, z) > 0.5, b.get(x, y, z) > 0.5);
                if p && q {
                    inter += 1;
                }
                if p || q {
                    union += 1;
                }
            }
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
