//! Builds the dataset for an experiment and turns predictions into artifacts.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fkan::data::{
    image_to_dataset, image_to_dataset_with_kind, load_image, predictions_to_volume,
    sdf_sphere_volume, synthetic_image, volume_to_dataset,
};
use fkan::metrics::{image_psnr_metric, volume_iou_metric};
use fkan::train::auto_batch_size;
use fkan::{
    iou, psnr, ssim, write_atomic, Array2, ImageBuffer, Model, OccupancyVolume, SignalDataset,
    SignalKind,
};
use serde_json::{json, Map, Value};

use crate::config::{usage, Experiment, Task};

/// The signal being fitted, kept alongside its dataset for scoring.
pub enum Target {
    Image(ImageBuffer),
    Volume(OccupancyVolume),
}

pub struct Loaded {
    pub target: Target,
    pub data: SignalDataset,
}

impl Loaded {
    pub fn load(exp: &Experiment) -> Result<Loaded> {
        match exp.task {
            Task::Image => {
                let path = exp.input.as_deref().expect("validated");
                let img = load_image(path)
                    .map_err(|e| usage(format!("cannot load image {}: {e}", path.display())))?;
                let data = image_to_dataset(&img)?;
                Ok(Loaded {
                    target: Target::Image(img),
                    data,
                })
            }
            Task::Synthetic => {
                let img = synthetic_image(exp.width, exp.width, &exp.freqs)?;
                let data = image_to_dataset_with_kind(&img, SignalKind::Synthetic)?;
                Ok(Loaded {
                    target: Target::Image(img),
                    data,
                })
            }
            Task::Volume => {
                let vol = match &exp.input {
                    Some(path) => OccupancyVolume::read(path).map_err(|e| {
                        usage(format!("cannot load volume {}: {e}", path.display()))
                    })?,
                    None => sdf_sphere_volume(exp.width, 0.5)?.0,
                };
                let data = volume_to_dataset(&vol)?;
                Ok(Loaded {
                    target: Target::Volume(vol),
                    data,
                })
            }
        }
    }

    /// Fills in the output dimension and the data-dependent schedule
    /// defaults.
    pub fn adapt(&self, exp: &mut Experiment) {
        exp.model.output_dim = self.data.output_dim();
        let n = self.data.len();
        exp.train.batch_size = exp.batch_size.unwrap_or_else(|| auto_batch_size(n));
        if exp.metric_every.is_none() {
            let batch = match exp.train.batch_size {
                0 => n,
                b => b.min(n),
            };
            exp.train.metric_every = n.div_ceil(batch);
        }
    }

    pub fn metric(&self, threshold: f64) -> Box<dyn FnMut(&Array2) -> f64 + '_> {
        match &self.target {
            Target::Image(img) => Box::new(image_psnr_metric(img)),
            Target::Volume(vol) => Box::new(volume_iou_metric(vol, threshold)),
        }
    }

    /// Scores `model` on the full dataset and returns the metrics with the
    /// reconstruction.
    pub fn evaluate(
        &self,
        model: &Model,
        threshold: f64,
    ) -> Result<(Map<String, Value>, Reconstruction)> {
        let pred = model.predict(self.data.coords())?;
        let mut m = Map::new();
        let recon = match &self.target {
            Target::Image(img) => {
                let out = ImageBuffer::from_samples(img.width(), img.height(), &pred)?.clamped();
                m.insert("psnr".into(), serde_json::to_value(psnr(&out, img)?)?);
                m.insert("ssim".into(), json!(ssim(&out, img)?));
                Reconstruction::Image(out)
            }
            Target::Volume(vol) => {
                let out = predictions_to_volume(&pred, threshold)?;
                m.insert("iou".into(), json!(iou(&out, vol)?));
                Reconstruction::Volume(out)
            }
        };
        Ok((m, recon))
    }
}

pub enum Reconstruction {
    Image(ImageBuffer),
    Volume(OccupancyVolume),
}

impl Reconstruction {
    pub fn file_name(&self) -> &'static str {
        match self {
            Reconstruction::Image(_) => "reconstruction.png",
            Reconstruction::Volume(_) => "reconstruction.vol",
        }
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(self.file_name());
        match self {
            Reconstruction::Image(img) => fkan::data::save_image(img, &path),
            Reconstruction::Volume(vol) => vol.write(&path),
        }
        .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}
