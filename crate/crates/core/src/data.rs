//! Coordinate/target datasets for images and occupancy volumes, plus the
//! raster and raw-volume file formats.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::array::Array2;
use crate::error::{shape_err, Error, Result};
use crate::fsutil::write_atomic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Image,
    Volume,
    Synthetic,
}

/// Paired coordinates (`[N x d_i]`, every entry in `[-1, 1]`) and targets
/// (`[N x d_o]`).
#[derive(Clone, Debug, PartialEq)]
pub struct SignalDataset {
    coords: Array2,
    targets: Array2,
    kind: SignalKind,
}

impl SignalDataset {
    pub fn new(coords: Array2, targets: Array2, kind: SignalKind) -> Result<Self> {
        if coords.rows() != targets.rows() {
            return Err(shape_err(
                "SignalDataset",
                format!("{} target rows", coords.rows()),
                format!("{}", targets.rows()),
            ));
        }
        if coords.rows() == 0 {
            return Err(Error::InvalidArgument("dataset has no samples".into()));
        }
        if let Some(c) = coords
            .data()
            .iter()
            .find(|c| c.is_nan() || c.abs() > 1.0 + 1e-12)
        {
            return Err(Error::InvalidArgument(format!(
                "coordinate {c} outside the normalized domain [-1, 1]"
            )));
        }
        if !targets.is_finite() {
            return Err(Error::NonFinite("dataset targets".into()));
        }
        Ok(SignalDataset {
            coords,
            targets,
            kind,
        })
    }

    pub fn coords(&self) -> &Array2 {
        &self.coords
    }

    pub fn targets(&self) -> &Array2 {
        &self.targets
    }

    pub fn kind(&self) -> SignalKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.coords.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.rows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.coords.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.cols()
    }

    /// Debug dump: header `x1,...,xd,y1,...,yd`, one sample per line.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let header: Vec<String> = (1..=self.input_dim())
            .map(|i| format!("x{i}"))
            .chain((1..=self.output_dim()).map(|i| format!("y{i}")))
            .collect();
        s.push_str(&header.join(","));
        s.push('\n');
        for r in 0..self.len() {
            let vals: Vec<String> = self
                .coords
                .row(r)
                .iter()
                .chain(self.targets.row(r))
                .map(|v| v.to_string())
                .collect();
            let _ = writeln!(s, "{}", vals.join(","));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

/// Center of cell `i` of `n` equal cells partitioning `[-1, 1]`.
#[inline]
pub fn cell_center(i: usize, n: usize) -> f64 {
    (2 * i + 1) as f64 / n as f64 - 1.0
}

/// Interleaved row-major raster, values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(shape_err(
                "ImageBuffer",
                format!(
                    "{} values for {width}x{height}x{channels}",
                    width * height * channels
                ),
                format!("{}", pixels.len()),
            ));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        ImageBuffer::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn clamped(&self) -> ImageBuffer {
        ImageBuffer {
            pixels: self.pixels.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    /// Per-pixel channel mean, row-major.
    pub fn luma(&self) -> Vec<f64> {
        self.pixels
            .chunks(self.channels)
            .map(|px| px.iter().sum::<f64>() / self.channels as f64)
            .collect()
    }

    /// Rebuilds an image from sample-major predictions in
    /// [`image_to_dataset`] order.
    pub fn from_samples(width: usize, height: usize, samples: &Array2) -> Result<Self> {
        if samples.rows() != width * height {
            return Err(shape_err(
                "ImageBuffer::from_samples",
                format!("{} samples", width * height),
                format!("{}", samples.rows()),
            ));
        }
        ImageBuffer::new(width, height, samples.cols(), samples.data().to_vec())
    }
}

/// One sample per pixel, row-major; coordinate 0 is the column (x) and
/// coordinate 1 the row (y), both mapped from pixel centers onto `[-1, 1]`.
pub fn image_to_dataset(img: &ImageBuffer) -> Result<SignalDataset> {
    image_to_dataset_with_kind(img, SignalKind::Image)
}

pub fn image_to_dataset_with_kind(img: &ImageBuffer, kind: SignalKind) -> Result<SignalDataset> {
    if img.width == 0 || img.height == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    let n = img.width * img.height;
    let mut coords = Vec::with_capacity(2 * n);
    for y in 0..img.height {
        let cy = cell_center(y, img.height);
        for x in 0..img.width {
            coords.push(cell_center(x, img.width));
            coords.push(cy);
        }
    }
    SignalDataset::new(
        Array2::from_vec(n, 2, coords)?,
        Array2::from_vec(n, img.channels, img.pixels.clone())?,
        kind,
    )
}

/// Grayscale test pattern
/// `0.5 + 0.5 * mean_f sin(2 pi f u) sin(2 pi f v)` with `u, v` the pixel
/// centers on `[0, 1]`.
pub fn synthetic_image(width: usize, height: usize, freqs: &[f64]) -> Result<ImageBuffer> {
    if freqs.is_empty() {
        return Err(Error::InvalidArgument("frequency list is empty".into()));
    }
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        let v = (y as f64 + 0.5) / height as f64;
        for x in 0..width {
            let u = (x as f64 + 0.5) / width as f64;
            let s: f64 = freqs
                .iter()
                .map(|&f| (2.0 * PI * f * u).sin() * (2.0 * PI * f * v).sin())
                .sum();
            pixels.push(0.5 + 0.5 * s / freqs.len() as f64);
        }
    }
    ImageBuffer::new(width, height, 1, pixels)
}

/// `R^3` voxel grid over `[-1, 1]^3`, x-fastest (`x + R*(y + R*z)`).
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyVolume {
    resolution: usize,
    values: Vec<f64>,
}

impl OccupancyVolume {
    pub fn new(resolution: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != resolution.pow(3) {
            return Err(shape_err(
                "OccupancyVolume",
                format!("{} values for R={resolution}", resolution.pow(3)),
                format!("{}", values.len()),
            ));
        }
        Ok(OccupancyVolume { resolution, values })
    }

    pub fn empty(resolution: usize) -> Self {
        OccupancyVolume {
            resolution,
            values: vec![0.0; resolution.pow(3)],
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.resolution * (y + self.resolution * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f64) {
        let i = self.index(x, y, z);
        self.values[i] = v;
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn occupied(&self) -> usize {
        self.values.iter().filter(|&&v| v >= 0.5).count()
    }

    /// Raw format: little-endian `u32` resolution, then `R^3` bytes of 0/1.
    pub fn to_raw_bytes(&self) -> Result<Vec<u8>> {
        if !self.is_binary() {
            return Err(Error::Volume("only binary volumes can be written".into()));
        }
        let r = u32::try_from(self.resolution)
            .map_err(|_| Error::Volume("resolution does not fit in u32".into()))?;
        let mut out = Vec::with_capacity(4 + self.values.len());
        out.extend_from_slice(&r.to_le_bytes());
        out.extend(self.values.iter().map(|&v| v as u8));
        Ok(out)
    }

    pub fn from_raw_bytes(bytes: &[u8]) -> Result<Self> {
        let head: [u8; 4] = bytes
            .get(..4)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::Volume("missing 4-byte resolution header".into()))?;
        let r = u32::from_le_bytes(head) as usize;
        let body = &bytes[4..];
        let want = r
            .checked_pow(3)
            .ok_or_else(|| Error::Volume(format!("resolution {r} too large")))?;
        if body.len() != want {
            return Err(Error::Volume(format!(
                "expected {want} voxel bytes for R={r}, found {}",
                body.len()
            )));
        }
        if let Some(b) = body.iter().find(|&&b| b > 1) {
            return Err(Error::Volume(format!("voxel byte {b} is not 0 or 1")));
        }
        OccupancyVolume::new(r, body.iter().map(|&b| b as f64).collect())
    }

    pub fn read(path: &Path) -> Result<Self> {
        OccupancyVolume::from_raw_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_raw_bytes()?)
    }
}

/// Ground-truth occupancy (`1` where `sdf(p) <= 0`) on voxel centers, and the
/// matching `d_i = 3`, `d_o = 1` dataset.
pub fn sdf_volume(
    resolution: usize,
    sdf: impl Fn([f64; 3]) -> f64,
) -> Result<(OccupancyVolume, SignalDataset)> {
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!(
            "volume resolution must be at least 2, got {resolution}"
        )));
    }
    let n = resolution.pow(3);
    let mut coords = Vec::with_capacity(3 * n);
    let mut values = Vec::with_capacity(n);
    for z in 0..resolution {
        let cz = cell_center(z, resolution);
        for y in 0..resolution {
            let cy = cell_center(y, resolution);
            for x in 0..resolution {
                let cx = cell_center(x, resolution);
                coords.extend([cx, cy, cz]);
                values.push(if sdf([cx, cy, cz]) <= 0.0 { 1.0 } else { 0.0 });
            }
        }
    }
    let ds = SignalDataset::new(
        Array2::from_vec(n, 3, coords)?,
        Array2::from_vec(n, 1, values.clone())?,
        SignalKind::Volume,
    )?;
    Ok((OccupancyVolume::new(resolution, values)?, ds))
}

pub fn sdf_sphere_volume(
    resolution: usize,
    radius: f64,
) -> Result<(OccupancyVolume, SignalDataset)> {
    if !(radius > 0.0 && radius < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sphere radius must lie in (0, 1), got {radius}"
        )));
    }
    sdf_volume(resolution, |p| {
        (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - radius
    })
}

/// Torus around the z axis.
pub fn sdf_torus_volume(
    resolution: usize,
    major: f64,
    minor: f64,
) -> Result<(OccupancyVolume, SignalDataset)> {
    if !(minor > 0.0 && major > minor && major + minor < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "torus needs 0 < minor < major and major + minor < 1, got ({major}, {minor})"
        )));
    }
    sdf_volume(resolution, |p| {
        let q = (p[0] * p[0] + p[1] * p[1]).sqrt() - major;
        (q * q + p[2] * p[2]).sqrt() - minor
    })
}

/// Dataset over the voxel centers of an existing volume.
pub fn volume_to_dataset(vol: &OccupancyVolume) -> Result<SignalDataset> {
    let r = vol.resolution;
    if r < 2 {
        return Err(Error::InvalidArgument(format!(
            "volume resolution must be at least 2, got {r}"
        )));
    }
    let n = r.pow(3);
    let mut coords = Vec::with_capacity(3 * n);
    for z in 0..r {
        for y in 0..r {
            for x in 0..r {
                coords.extend([cell_center(x, r), cell_center(y, r), cell_center(z, r)]);
            }
        }
    }
    SignalDataset::new(
        Array2::from_vec(n, 3, coords)?,
        Array2::from_vec(n, 1, vol.values.clone())?,
        SignalKind::Volume,
    )
}

/// Binary volume with `1` wherever `pred >= threshold`.
pub fn predictions_to_volume(pred: &Array2, threshold: f64) -> Result<OccupancyVolume> {
    if pred.cols() != 1 {
        return Err(shape_err(
            "predictions_to_volume",
            "one output channel",
            format!("{}", pred.cols()),
        ));
    }
    let n = pred.rows();
    let r = (n as f64).cbrt().round() as usize;
    if r.pow(3) != n {
        return Err(shape_err(
            "predictions_to_volume",
            "a cubic number of predictions",
            format!("{n}"),
        ));
    }
    let values = pred
        .data()
        .iter()
        .map(|&p| if p >= threshold { 1.0 } else { 0.0 })
        .collect();
    OccupancyVolume::new(r, values)
}

/// Reads an 8-bit grayscale or RGB raster; an alpha channel is dropped.
pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw): (usize, Vec<u8>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
        DynamicImage::ImageLumaA8(_) => (1, img.to_luma8().into_raw()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
        DynamicImage::ImageRgba8(_) => (3, img.to_rgb8().into_raw()),
        other => {
            return Err(Error::InvalidArgument(format!(
                "{}: unsupported pixel format {:?}; only 8-bit grayscale/RGB rasters are accepted",
                path.display(),
                other.color()
            )))
        }
    };
    let pixels = raw.into_iter().map(|v| v as f64 / 255.0).collect();
    ImageBuffer::new(w, h, channels, pixels)
}

/// Quantizes a `[0, 1]` value to 8 bits, clamping first and rounding half up.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn encode_image(img: &ImageBuffer, format: ImageFormat) -> Result<Vec<u8>> {
    let raw: Vec<u8> = img.pixels.iter().map(|&v| quantize(v)).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let dynimg = if img.channels == 1 {
        DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(w, h, raw).expect("buffer length checked at construction"),
        )
    } else {
        DynamicImage::ImageRgb8(
            image::RgbImage::from_raw(w, h, raw).expect("buffer length checked at construction"),
        )
    };
    let mut out = Cursor::new(Vec::new());
    dynimg.write_to(&mut out, format)?;
    Ok(out.into_inner())
}

/// Writes an 8-bit raster; the format follows the file extension.
pub fn save_image(img: &ImageBuffer, path: &Path) -> Result<()> {
    let format = ImageFormat::from_path(path)?;
    write_atomic(path, &encode_image(img, format)?)
}
