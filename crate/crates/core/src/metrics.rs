//! PSNR, SSIM and IoU.

use std::fmt;

use serde::{Deserialize, Serialize, Serializer};

use crate::array::Array2;
use crate::data::{ImageBuffer, OccupancyVolume};
use crate::error::{shape_err, Error, Result};

/// Peak signal-to-noise ratio on a unit dynamic range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Db(f64),
    /// Zero error.
    Identical,
}

impl Psnr {
    pub fn from_mse(mse: f64) -> Psnr {
        if mse == 0.0 {
            Psnr::Identical
        } else {
            Psnr::Db(10.0 * (1.0 / mse).log10())
        }
    }

    /// dB value, with `Identical` mapped to `f64::INFINITY`.
    pub fn db(self) -> f64 {
        match self {
            Psnr::Db(v) => v,
            Psnr::Identical => f64::INFINITY,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.4} dB"),
            Psnr::Identical => write!(f, "inf dB"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Db(v) => s.serialize_f64(*v),
            Psnr::Identical => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Db(v)),
            Raw::Str(s) if s == "inf" => Ok(Psnr::Identical),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad PSNR value {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    Psnr,
    Ssim,
    Iou,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub name: MetricName,
    /// dB for PSNR (`INFINITY` for identical inputs).
    pub value: f64,
}

fn check_dims(op: &'static str, a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if !a.same_dims(b) {
        return Err(shape_err(
            op,
            format!("{}x{}x{}", b.width(), b.height(), b.channels()),
            format!("{}x{}x{}", a.width(), a.height(), a.channels()),
        ));
    }
    if a.pixels().is_empty() {
        return Err(Error::InvalidArgument(format!("{op} of empty images")));
    }
    Ok(())
}

/// Mean squared error over all pixels and channels after clamping to `[0, 1]`.
pub fn mse(pred: &ImageBuffer, reference: &ImageBuffer) -> Result<f64> {
    check_dims("mse", pred, reference)?;
    let total: f64 = pred
        .pixels()
        .iter()
        .zip(reference.pixels())
        .map(|(&p, &r)| {
            let d = p.clamp(0.0, 1.0) - r.clamp(0.0, 1.0);
            d * d
        })
        .sum();
    Ok(total / pred.pixels().len() as f64)
}

pub fn psnr(pred: &ImageBuffer, reference: &ImageBuffer) -> Result<Psnr> {
    Ok(Psnr::from_mse(mse(pred, reference)?))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Index into `[0, n)` under symmetric (edge-repeating) reflection.
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Luma plane, symmetrically padded up to the window size in each
/// dimension. Returns `(width, height, values)`.
pub fn ssim_plane(img: &ImageBuffer) -> (usize, usize, Vec<f64>) {
    let luma: Vec<f64> = img.clamped().luma();
    let (w, h) = (img.width(), img.height());
    if w >= SSIM_WINDOW && h >= SSIM_WINDOW {
        return (w, h, luma);
    }
    let pw = w.max(SSIM_WINDOW);
    let ph = h.max(SSIM_WINDOW);
    let (ox, oy) = (((pw - w) / 2) as isize, ((ph - h) / 2) as isize);
    let mut out = Vec::with_capacity(pw * ph);
    for y in 0..ph {
        let sy = reflect(y as isize - oy, h);
        for x in 0..pw {
            let sx = reflect(x as isize - ox, w);
            out.push(luma[sy * w + sx]);
        }
    }
    (pw, ph, out)
}

#[inline]
pub fn ssim_from_moments(mx: f64, my: f64, sxx: f64, syy: f64, sxy: f64) -> f64 {
    ((2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2))
        / ((mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2))
}

/// Single-scale SSIM on the channel-mean luma: 11x11 Gaussian window
/// (sigma 1.5), mean over every window position that fits inside the
/// (padded) image.
pub fn ssim(pred: &ImageBuffer, reference: &ImageBuffer) -> Result<f64> {
    check_dims("ssim", pred, reference)?;
    let (w, h, x) = ssim_plane(pred);
    let (_, _, y) = ssim_plane(reference);
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;

    // Horizontal pass over the five moment planes, then vertical.
    let planes: [Vec<f64>; 5] = [
        x.clone(),
        y.clone(),
        x.iter().map(|v| v * v).collect(),
        y.iter().map(|v| v * v).collect(),
        x.iter().zip(&y).map(|(a, b)| a * b).collect(),
    ];
    let filtered: Vec<Vec<f64>> = planes
        .iter()
        .map(|p| {
            let mut horiz = vec![0.0; ow * h];
            for r in 0..h {
                let row = &p[r * w..(r + 1) * w];
                for c in 0..ow {
                    horiz[r * ow + c] = taps.iter().zip(&row[c..]).map(|(t, v)| t * v).sum();
                }
            }
            let mut out = vec![0.0; ow * oh];
            for r in 0..oh {
                for c in 0..ow {
                    out[r * ow + c] = taps
                        .iter()
                        .enumerate()
                        .map(|(i, t)| t * horiz[(r + i) * ow + c])
                        .sum();
                }
            }
            out
        })
        .collect();

    let [fx, fy, fxx, fyy, fxy] = &filtered[..] else {
        unreachable!("five moment planes")
    };
    let mut total = 0.0;
    for i in 0..ow * oh {
        let (mx, my) = (fx[i], fy[i]);
        let sxx = fxx[i] - mx * mx;
        let syy = fyy[i] - my * my;
        let sxy = fxy[i] - mx * my;
        total += ssim_from_moments(mx, my, sxx, syy, sxy);
    }
    Ok(total / (ow * oh) as f64)
}

/// Intersection over union of two binary volumes; `1.0` when both are empty.
pub fn iou(pred: &OccupancyVolume, reference: &OccupancyVolume) -> Result<f64> {
    if pred.resolution() != reference.resolution() {
        return Err(shape_err(
            "iou",
            format!("resolution {}", reference.resolution()),
            format!("{}", pred.resolution()),
        ));
    }
    if !pred.is_binary() || !reference.is_binary() {
        return Err(Error::InvalidArgument(
            "iou needs binary volumes; threshold predictions first".into(),
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &r) in pred.values().iter().zip(reference.values()) {
        let (p, r) = (p == 1.0, r == 1.0);
        inter += (p && r) as usize;
        union += (p || r) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Training metric: PSNR (dB) of sample-major predictions against `reference`.
pub fn image_psnr_metric(reference: &ImageBuffer) -> impl FnMut(&Array2) -> f64 + '_ {
    move |pred: &Array2| {
        let img = ImageBuffer::from_samples(reference.width(), reference.height(), pred)
            .expect("prediction shape matches the reference image");
        psnr(&img, reference).expect("same dimensions").db()
    }
}

/// Training metric: IoU of thresholded predictions against `reference`.
pub fn volume_iou_metric(
    reference: &OccupancyVolume,
    threshold: f64,
) -> impl FnMut(&Array2) -> f64 + '_ {
    move |pred: &Array2| {
        let vol = crate::data::predictions_to_volume(pred, threshold)
            .expect("prediction count matches the reference volume");
        iou(&vol, reference).expect("same resolution")
    }
}
