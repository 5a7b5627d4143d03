//! L2 fitting loop.
//!
//! One epoch is one pass over every sample. Small datasets train full-batch;
//! larger ones are visited in seeded shuffled mini-batches.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::Array2;
use crate::autodiff::Tape;
use crate::data::SignalDataset;
use crate::error::{shape_err, Error, Result};
use crate::fsutil::write_atomic;
use crate::layers::Model;
use crate::optim::{adam_step, AdamState};
use crate::parallel::Exec;

/// Datasets up to this many samples train full-batch under [`auto_batch_size`].
pub const FULL_BATCH_LIMIT: usize = 65_536;
/// Mini-batch size used above [`FULL_BATCH_LIMIT`].
pub const DEFAULT_MINI_BATCH: usize = 8192;

/// `0` (full batch) for small datasets, [`DEFAULT_MINI_BATCH`] otherwise.
pub fn auto_batch_size(samples: usize) -> usize {
    if samples <= FULL_BATCH_LIMIT {
        0
    } else {
        DEFAULT_MINI_BATCH
    }
}

/// Mean over samples of the squared residual norm, for sample-major
/// `[N x d_o]` arrays.
pub fn l2_loss(pred: &Array2, target: &Array2) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(shape_err(
            "l2_loss",
            format!("{}x{}", target.rows(), target.cols()),
            format!("{}x{}", pred.rows(), pred.cols()),
        ));
    }
    if pred.rows() == 0 {
        return Err(Error::InvalidArgument("l2_loss on an empty batch".into()));
    }
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(total / pred.rows() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Samples per step; `0` means the whole dataset.
    pub batch_size: usize,
    pub lr: f64,
    /// Seeds mini-batch shuffling.
    pub seed: u64,
    /// Log loss and metric every this many steps.
    pub metric_every: usize,
    /// When false the `seconds` column is written as zero, so reports of
    /// identical runs compare equal.
    #[serde(default = "default_true")]
    pub record_wall_time: bool,
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::image()
    }
}

impl TrainConfig {
    /// 500 epochs at lr 1e-4.
    pub fn image() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 0,
            lr: 1e-4,
            seed: 0,
            metric_every: 1,
            record_wall_time: true,
        }
    }

    /// 200 epochs at lr 1e-4.
    pub fn occupancy() -> Self {
        TrainConfig {
            epochs: 200,
            ..TrainConfig::image()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.metric_every == 0 {
            return Err(Error::InvalidArgument(
                "metric_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub step: u64,
    pub loss: f64,
    pub metric: f64,
    pub seconds: f64,
}

/// Logged `(step, loss, metric, seconds)` rows. The loss and metric of row
/// `s` are measured on the full dataset before update `s` is applied; the last
/// row (step = total steps) describes the trained model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<Record>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,metric,seconds\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{}", r.step, r.loss, r.metric, r.seconds);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    /// First logged step whose metric is at least `threshold`.
    pub fn first_step_reaching(&self, threshold: f64) -> Option<u64> {
        self.records
            .iter()
            .find(|r| r.metric >= threshold)
            .map(|r| r.step)
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }
}

/// Saved shuffling RNG position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// `u128` word position, as decimal text.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad RNG word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub adam: AdamState,
    pub step: u64,
    /// Shuffle RNG as of the start of the epoch containing `step`.
    pub rng: RngState,
    pub elapsed_seconds: f64,
    pub report: TrainReport,
}

/// Resumable training loop over one dataset.
pub struct Trainer<'d> {
    model: Model,
    adam: AdamState,
    config: TrainConfig,
    data: &'d SignalDataset,
    exec: Exec,
    step: u64,
    batch: usize,
    rng: ChaCha8Rng,
    epoch_rng: ChaCha8Rng,
    order: Vec<usize>,
    full_x: Option<Array2>,
    full_y: Option<Array2>,
    report: TrainReport,
    elapsed_before: f64,
    started: Instant,
}

impl<'d> Trainer<'d> {
    pub fn new(model: Model, data: &'d SignalDataset, config: TrainConfig) -> Result<Self> {
        let adam = AdamState::new(&model.params(), config.lr);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let state = TrainState {
            model,
            adam,
            step: 0,
            rng: RngState::capture(&rng),
            elapsed_seconds: 0.0,
            report: TrainReport::default(),
        };
        Trainer::resume(state, data, config)
    }

    pub fn resume(state: TrainState, data: &'d SignalDataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        state.model.config.validate()?;
        state.model.check_shapes()?;
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        if data.input_dim() != state.model.config.input_dim
            || data.output_dim() != state.model.config.output_dim
        {
            return Err(shape_err(
                "train",
                format!(
                    "dataset with d_i={}, d_o={}",
                    state.model.config.input_dim, state.model.config.output_dim
                ),
                format!("d_i={}, d_o={}", data.input_dim(), data.output_dim()),
            ));
        }
        let n = data.len();
        let batch = if config.batch_size == 0 || config.batch_size >= n {
            n
        } else {
            config.batch_size
        };
        let (full_x, full_y) = if batch == n {
            (
                Some(data.coords().transpose()),
                Some(data.targets().transpose()),
            )
        } else {
            (None, None)
        };
        let rng = state.rng.restore()?;
        let mut t = Trainer {
            model: state.model,
            adam: state.adam,
            config,
            data,
            exec: Exec::default(),
            step: state.step,
            batch,
            epoch_rng: rng.clone(),
            rng,
            order: (0..n).collect(),
            full_x,
            full_y,
            report: state.report,
            elapsed_before: state.elapsed_seconds,
            started: Instant::now(),
        };
        t.adam.lr = t.config.lr;
        if !t.step.is_multiple_of(t.steps_per_epoch()) {
            t.shuffle();
        }
        Ok(t)
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.data.len().div_ceil(self.batch) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.config.epochs as u64 * self.steps_per_epoch()
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn elapsed(&self) -> f64 {
        if self.config.record_wall_time {
            self.elapsed_before + self.started.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }

    fn shuffle(&mut self) {
        self.epoch_rng = self.rng.clone();
        if self.batch < self.data.len() {
            self.order.sort_unstable();
            self.order.shuffle(&mut self.rng);
        }
    }

    /// Snapshot for checkpointing.
    pub fn state(&self) -> TrainState {
        let rng = if self.step.is_multiple_of(self.steps_per_epoch()) {
            &self.rng
        } else {
            &self.epoch_rng
        };
        TrainState {
            model: self.model.clone(),
            adam: self.adam.clone(),
            step: self.step,
            rng: RngState::capture(rng),
            elapsed_seconds: self.elapsed(),
            report: self.report.clone(),
        }
    }

    fn batch_arrays(&self) -> (Array2, Array2) {
        let spe = self.steps_per_epoch();
        let start = (self.step % spe) as usize * self.batch;
        let end = (start + self.batch).min(self.data.len());
        let idx = &self.order[start..end];
        let (coords, targets) = (self.data.coords(), self.data.targets());
        let x = Array2::from_fn(coords.cols(), idx.len(), |m, c| coords[(idx[c], m)]);
        let y = Array2::from_fn(targets.cols(), idx.len(), |m, c| targets[(idx[c], m)]);
        (x, y)
    }

    fn log(&mut self, loss: f64, pred: &Array2, metric: &mut impl FnMut(&Array2) -> f64) {
        let m = metric(pred);
        let seconds = self.elapsed();
        self.report.records.push(Record {
            step: self.step,
            loss,
            metric: m,
            seconds,
        });
    }

    fn full_eval(&self) -> Result<(f64, Array2)> {
        let pred = self.model.predict(self.data.coords())?;
        let loss = l2_loss(&pred, self.data.targets())?;
        Ok((loss, pred))
    }

    /// One optimizer update. Returns the pre-update loss of the batch.
    pub fn step(&mut self, metric: &mut impl FnMut(&Array2) -> f64) -> Result<f64> {
        if self.step.is_multiple_of(self.steps_per_epoch()) {
            self.shuffle();
        }
        let log_now = self.step.is_multiple_of(self.config.metric_every as u64);

        let mut tape = Tape::with_exec(self.exec);
        let (x, y) = match (&self.full_x, &self.full_y) {
            (Some(x), Some(y)) => (tape.constant(x.clone()), tape.constant(y.clone())),
            _ => {
                let (x, y) = self.batch_arrays();
                (tape.constant(x), tape.constant(y))
            }
        };
        let rec = self.model.record(&mut tape, x)?;
        let loss_var = tape.l2_loss(rec.output, y)?;
        let loss = tape.value(loss_var).data()[0];
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                loss,
            });
        }
        if log_now {
            if self.full_x.is_some() {
                let pred = tape.value(rec.output).transpose();
                self.log(loss, &pred, metric);
            } else {
                let (full_loss, pred) = self.full_eval()?;
                self.log(full_loss, &pred, metric);
            }
        }

        let mut grads = tape.backward(loss_var)?;
        let grads: Vec<Array2> = rec
            .params
            .iter()
            .map(|&v| grads.take(v).expect("gradient for every parameter"))
            .collect();
        drop(tape);
        let grad_refs: Vec<&Array2> = grads.iter().collect();
        let mut params = self.model.params_mut();
        adam_step(&mut params, &grad_refs, &mut self.adam).map_err(|e| match e {
            Error::NonFinite(_) => Error::Diverged {
                step: self.step,
                loss,
            },
            e => e,
        })?;
        self.step += 1;
        Ok(loss)
    }

    /// Runs at most `max_steps` further updates; stops early at the end of
    /// the schedule, where a final record is appended.
    pub fn run(&mut self, max_steps: u64, metric: &mut impl FnMut(&Array2) -> f64) -> Result<()> {
        let stop = (self.step + max_steps).min(self.total_steps());
        while self.step < stop {
            self.step(metric)?;
        }
        if self.is_done() && self.report.last().map(|r| r.step) != Some(self.step) {
            let (loss, pred) = self.full_eval()?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step: self.step,
                    loss,
                });
            }
            self.log(loss, &pred, metric);
        }
        Ok(())
    }

    pub fn finish(self) -> (Model, TrainReport) {
        (self.model, self.report)
    }
}

/// Trains `model` on `data` for the whole schedule in `config`.
pub fn train(
    model: Model,
    data: &SignalDataset,
    config: &TrainConfig,
    mut metric: impl FnMut(&Array2) -> f64,
) -> Result<(Model, TrainReport)> {
    let mut trainer = Trainer::new(model, data, config.clone())?;
    let total = trainer.total_steps();
    trainer.run(total, &mut metric)?;
    Ok(trainer.finish())
}
