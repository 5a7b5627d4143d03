//! The FKAN network: a learnable Fourier-series first layer, `tanh(omega0 * .)`
//! hidden layers and a linear head.
//!
//! Activations flow through the tape feature-major (`[features x batch]`).
//! The public `predict`/`FourierLayerParams::forward` helpers take and return
//! sample-major arrays (`[batch x features]`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::array::Array2;
use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Error, Result};

/// Which first layer maps coordinates into the latent space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Learnable Fourier-series edge functions.
    #[default]
    Fkan,
    /// Dense `tanh(omega0 * (W x + b))` layer of width `latent_dim`; the
    /// spectral-bias baseline.
    TanhMlp,
}

/// Uniform bound used for hidden-layer weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HiddenInit {
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
    FanIn,
    /// `U(-sqrt(6/fan_in)/omega0, sqrt(6/fan_in)/omega0)`: keeps
    /// `omega0 * h` out of the saturated range of tanh at initialization.
    #[default]
    FanInOverOmega,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Width of the first layer (`H1`).
    pub latent_dim: usize,
    /// Fourier terms per edge function (`K`).
    pub grid_size: usize,
    pub hidden_widths: Vec<usize>,
    pub omega0: f64,
    pub seed: u64,
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default)]
    pub hidden_init: HiddenInit,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 2,
            output_dim: 3,
            latent_dim: 128,
            grid_size: 250,
            hidden_widths: vec![256, 256, 256, 512],
            omega0: 30.0,
            seed: 0,
            architecture: Architecture::Fkan,
            hidden_init: HiddenInit::FanInOverOmega,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.input_dim == 0 || self.output_dim == 0 {
            return bad("input and output dimensions must be at least 1".into());
        }
        if self.latent_dim == 0 {
            return bad("latent dimension must be at least 1".into());
        }
        if self.architecture == Architecture::Fkan && self.grid_size == 0 {
            return bad("grid size K must be at least 1".into());
        }
        if self.hidden_widths.is_empty() {
            return bad("at least one hidden layer is required".into());
        }
        if self.hidden_widths.contains(&0) {
            return bad(format!(
                "hidden widths must be positive: {:?}",
                self.hidden_widths
            ));
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return bad(format!("omega0 must be positive, got {}", self.omega0));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every hidden layer followed by the head.
    fn dense_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut prev = self.latent_dim;
        for &w in &self.hidden_widths {
            shapes.push((prev, w));
            prev = w;
        }
        shapes.push((prev, self.output_dim));
        shapes
    }

    fn first_layer_params(&self) -> usize {
        match self.architecture {
            Architecture::Fkan => 2 * self.grid_size * self.input_dim * self.latent_dim,
            Architecture::TanhMlp => self.input_dim * self.latent_dim + self.latent_dim,
        }
    }
}

/// Number of trainable scalars in a model built from `config`.
pub fn count_params(config: &ModelConfig) -> usize {
    config.first_layer_params()
        + config
            .dense_shapes()
            .iter()
            .map(|&(i, o)| i * o + o)
            .sum::<usize>()
}

/// Fourier coefficients of the first layer.
///
/// `a` and `b` are logically `[H1 x d_i x K]`; they are stored as
/// `[H1 x (d_i*K)]` matrices whose column `m*K + (k-1)` holds the
/// coefficient of `sin(k x_m)` (resp. `cos(k x_m)`) for output `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierLayerParams {
    pub a: Array2,
    pub b: Array2,
    input_dim: usize,
    latent_dim: usize,
    grid_size: usize,
}

impl FourierLayerParams {
    pub fn zeros(input_dim: usize, latent_dim: usize, grid_size: usize) -> Result<Self> {
        if input_dim == 0 || latent_dim == 0 || grid_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "Fourier layer dims must be positive (d_i={input_dim}, H1={latent_dim}, K={grid_size})"
            )));
        }
        Ok(FourierLayerParams {
            a: Array2::zeros(latent_dim, input_dim * grid_size),
            b: Array2::zeros(latent_dim, input_dim * grid_size),
            input_dim,
            latent_dim,
            grid_size,
        })
    }

    pub fn from_arrays(
        input_dim: usize,
        latent_dim: usize,
        grid_size: usize,
        a: Array2,
        b: Array2,
    ) -> Result<Self> {
        let mut p = FourierLayerParams::zeros(input_dim, latent_dim, grid_size)?;
        let want = (latent_dim, input_dim * grid_size);
        for (name, arr) in [("a", &a), ("b", &b)] {
            if arr.shape() != want {
                return Err(shape_err(
                    "FourierLayerParams",
                    format!("{name} of {}x{}", want.0, want.1),
                    format!("{}x{}", arr.rows(), arr.cols()),
                ));
            }
        }
        p.a = a;
        p.b = b;
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    #[inline]
    fn col(&self, m: usize, k: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.grid_size);
        m * self.grid_size + (k - 1)
    }

    /// Sine coefficient of frequency `k` (1-based) on edge `(j, m)`.
    pub fn a_at(&self, j: usize, m: usize, k: usize) -> f64 {
        self.a[(j, self.col(m, k))]
    }

    pub fn b_at(&self, j: usize, m: usize, k: usize) -> f64 {
        self.b[(j, self.col(m, k))]
    }

    pub fn set_a(&mut self, j: usize, m: usize, k: usize, v: f64) {
        let c = self.col(m, k);
        self.a[(j, c)] = v;
    }

    pub fn set_b(&mut self, j: usize, m: usize, k: usize, v: f64) {
        let c = self.col(m, k);
        self.b[(j, c)] = v;
    }

    /// Records the layer on `tape` for feature-major input `x` (`[d_i x n]`).
    pub fn record(&self, tape: &mut Tape, x: Var, a: Var, b: Var) -> Result<Var> {
        let rows = tape.value(x).rows();
        if rows != self.input_dim {
            return Err(shape_err(
                "fourier_forward",
                format!("{} input features", self.input_dim),
                format!("{rows}"),
            ));
        }
        let (sin, cos) = tape.sin_cos_features(x, self.grid_size)?;
        let sa = tape.matmul(a, sin)?;
        let cb = tape.matmul(b, cos)?;
        tape.add(sa, cb)
    }

    /// `out[n, j] = sum_m sum_k a[j,m,k] sin(k x[n,m]) + b[j,m,k] cos(k x[n,m])`
    /// for sample-major `x` (`[n x d_i]`).
    pub fn forward(&self, x: &Array2) -> Result<Array2> {
        if x.cols() != self.input_dim {
            return Err(shape_err(
                "fourier_forward",
                format!("{} input features", self.input_dim),
                format!("{}", x.cols()),
            ));
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x.transpose());
        let a = tape.constant(self.a.clone());
        let b = tape.constant(self.b.clone());
        let out = self.record(&mut tape, xv, a, b)?;
        Ok(tape.value(out).transpose())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayerParams {
    /// `[out x in]`.
    pub weight: Array2,
    /// `[out x 1]`.
    pub bias: Array2,
}

impl DenseLayerParams {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        DenseLayerParams {
            weight: Array2::zeros(fan_out, fan_in),
            bias: Array2::zeros(fan_out, 1),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FirstLayer {
    Fourier(FourierLayerParams),
    Dense(DenseLayerParams),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub first: FirstLayer,
    pub hidden: Vec<DenseLayerParams>,
    pub head: DenseLayerParams,
    pub config: ModelConfig,
}

/// Tape handles produced by [`Model::record`].
#[derive(Debug, Clone)]
pub struct RecordedModel {
    /// Parameter leaves, in [`Model::params`] order.
    pub params: Vec<Var>,
    /// `[d_o x n]` output.
    pub output: Var,
}

impl Model {
    /// Model with every weight, coefficient and bias set to zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let first = match config.architecture {
            Architecture::Fkan => FirstLayer::Fourier(FourierLayerParams::zeros(
                config.input_dim,
                config.latent_dim,
                config.grid_size,
            )?),
            Architecture::TanhMlp => {
                FirstLayer::Dense(DenseLayerParams::zeros(config.input_dim, config.latent_dim))
            }
        };
        let mut shapes = config.dense_shapes();
        let (hi, ho) = shapes.pop().expect("head shape");
        let hidden = shapes
            .into_iter()
            .map(|(i, o)| DenseLayerParams::zeros(i, o))
            .collect();
        Ok(Model {
            first,
            hidden,
            head: DenseLayerParams::zeros(hi, ho),
            config,
        })
    }

    pub fn params(&self) -> Vec<&Array2> {
        let mut out = Vec::with_capacity(2 * self.hidden.len() + 4);
        match &self.first {
            FirstLayer::Fourier(f) => out.extend([&f.a, &f.b]),
            FirstLayer::Dense(d) => out.extend([&d.weight, &d.bias]),
        }
        for l in &self.hidden {
            out.extend([&l.weight, &l.bias]);
        }
        out.extend([&self.head.weight, &self.head.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array2> {
        let mut out = Vec::with_capacity(2 * self.hidden.len() + 4);
        match &mut self.first {
            FirstLayer::Fourier(f) => out.extend([&mut f.a, &mut f.b]),
            FirstLayer::Dense(d) => out.extend([&mut d.weight, &mut d.bias]),
        }
        for l in &mut self.hidden {
            out.extend([&mut l.weight, &mut l.bias]);
        }
        out.extend([&mut self.head.weight, &mut self.head.bias]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn fourier(&self) -> Option<&FourierLayerParams> {
        match &self.first {
            FirstLayer::Fourier(f) => Some(f),
            FirstLayer::Dense(_) => None,
        }
    }

    /// Checks that every array matches the shapes implied by `config`.
    pub fn check_shapes(&self) -> Result<()> {
        let reference = Model::zeros(self.config.clone())?;
        let ours = self.params();
        let want = reference.params();
        if ours.len() != want.len() {
            return Err(shape_err(
                "Model",
                format!("{} parameter arrays", want.len()),
                format!("{}", ours.len()),
            ));
        }
        for (i, (p, w)) in ours.iter().zip(&want).enumerate() {
            if p.shape() != w.shape() {
                return Err(shape_err(
                    "Model",
                    format!("parameter {i} of {}x{}", w.rows(), w.cols()),
                    format!("{}x{}", p.rows(), p.cols()),
                ));
            }
        }
        Ok(())
    }

    /// Records the forward pass for feature-major `x` (`[d_i x n]`), with
    /// every parameter registered as a differentiable leaf.
    pub fn record(&self, tape: &mut Tape, x: Var) -> Result<RecordedModel> {
        self.record_with(tape, x, true)
    }

    fn record_with(&self, tape: &mut Tape, x: Var, trainable: bool) -> Result<RecordedModel> {
        let rows = tape.value(x).rows();
        if rows != self.config.input_dim {
            return Err(shape_err(
                "model_forward",
                format!("{} input features", self.config.input_dim),
                format!("{rows}"),
            ));
        }
        let leaf = |tape: &mut Tape, a: &Array2| {
            if trainable {
                tape.param(a.clone())
            } else {
                tape.constant(a.clone())
            }
        };
        let omega0 = self.config.omega0;
        let mut params = Vec::with_capacity(2 * self.hidden.len() + 4);
        let mut z = match &self.first {
            FirstLayer::Fourier(f) => {
                let a = leaf(tape, &f.a);
                let b = leaf(tape, &f.b);
                params.extend([a, b]);
                f.record(tape, x, a, b)?
            }
            FirstLayer::Dense(d) => {
                let w = leaf(tape, &d.weight);
                let b = leaf(tape, &d.bias);
                params.extend([w, b]);
                let h = tape.matmul_add(w, x, b)?;
                tape.tanh_scaled(h, omega0)?
            }
        };
        for layer in &self.hidden {
            let w = leaf(tape, &layer.weight);
            let b = leaf(tape, &layer.bias);
            params.extend([w, b]);
            let h = tape.matmul_add(w, z, b)?;
            z = tape.tanh_scaled(h, omega0)?;
        }
        let w = leaf(tape, &self.head.weight);
        let b = leaf(tape, &self.head.bias);
        params.extend([w, b]);
        let output = tape.matmul_add(w, z, b)?;
        Ok(RecordedModel { params, output })
    }

    /// Network output for sample-major coordinates (`[n x d_i]` in,
    /// `[n x d_o]` out), evaluated in chunks without recording gradients.
    pub fn predict(&self, coords: &Array2) -> Result<Array2> {
        const CHUNK: usize = 8192;
        let d_i = self.config.input_dim;
        let d_o = self.config.output_dim;
        if coords.cols() != d_i {
            return Err(shape_err(
                "model_forward",
                format!("{d_i} input features"),
                format!("{}", coords.cols()),
            ));
        }
        let n = coords.rows();
        let mut out = Vec::with_capacity(n * d_o);
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let x = Array2::from_fn(d_i, end - start, |m, c| coords[(start + c, m)]);
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let rec = self.record_with(&mut tape, xv, false)?;
            out.extend_from_slice(tape.value(rec.output).transpose().data());
            start = end;
        }
        Array2::from_vec(n, d_o, out)
    }
}

/// Draws a model from `config.seed`.
///
/// Hidden and head weights are uniform with a fan-in bound (see
/// [`HiddenInit`]; the head always uses `sqrt(6/fan_in)`), Fourier
/// coefficients are `N(0, 1/(d_i K))`, and biases start at zero.
pub fn init_model(config: &ModelConfig) -> Result<Model> {
    let mut model = Model::zeros(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let omega0 = config.omega0;
    let hidden_bound = |fan_in: usize| {
        let b = (6.0 / fan_in as f64).sqrt();
        match config.hidden_init {
            HiddenInit::FanIn => b,
            HiddenInit::FanInOverOmega => b / omega0,
        }
    };
    let fill_uniform = |rng: &mut ChaCha8Rng, a: &mut Array2, bound: f64| {
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        for v in a.data_mut() {
            *v = dist.sample(rng);
        }
    };

    match &mut model.first {
        FirstLayer::Fourier(f) => {
            let sigma = 1.0 / ((f.input_dim as f64).sqrt() * (f.grid_size as f64).sqrt());
            let dist = Normal::new(0.0, sigma).expect("positive sigma");
            for v in f.a.data_mut().iter_mut().chain(f.b.data_mut()) {
                *v = dist.sample(&mut rng);
            }
        }
        FirstLayer::Dense(d) => {
            let bound = hidden_bound(d.fan_in());
            fill_uniform(&mut rng, &mut d.weight, bound);
        }
    }
    for layer in &mut model.hidden {
        let bound = hidden_bound(layer.fan_in());
        fill_uniform(&mut rng, &mut layer.weight, bound);
    }
    let head_bound = (6.0 / model.head.fan_in() as f64).sqrt();
    fill_uniform(&mut rng, &mut model.head.weight, head_bound);
    Ok(model)
}

/// Smallest-error first-layer width for a [`Architecture::TanhMlp`] baseline
/// whose parameter count matches `target`, with the hidden stack and head of
/// `config`. Returns the baseline config and its parameter count.
pub fn matched_baseline(config: &ModelConfig, target: usize) -> Result<(ModelConfig, usize)> {
    let mut base = config.clone();
    base.architecture = Architecture::TanhMlp;
    let first_hidden = config.hidden_widths[0];
    // count(w) = w*(d_i + 1 + first_hidden) + rest, linear in w
    base.latent_dim = 1;
    let rest = count_params(&base) - (config.input_dim + 1 + first_hidden);
    let per_unit = config.input_dim + 1 + first_hidden;
    if target <= rest {
        return Err(Error::InvalidArgument(format!(
            "cannot match {target} parameters: baseline body alone has {rest}"
        )));
    }
    let lo = ((target - rest) / per_unit).max(1);
    let best = [lo, lo + 1]
        .into_iter()
        .min_by_key(|&w| (rest + w * per_unit).abs_diff(target))
        .unwrap();
    base.latent_dim = best;
    let n = count_params(&base);
    let rel = n.abs_diff(target) as f64 / target as f64;
    if rel > 0.01 {
        return Err(Error::InvalidArgument(format!(
            "closest baseline has {n} parameters, {:.2}% away from {target}",
            100.0 * rel
        )));
    }
    Ok((base, n))
}
