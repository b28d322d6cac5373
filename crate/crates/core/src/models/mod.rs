//! Forecasting architectures built on the autodiff engine.

mod arch;
mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::{Sample, GRID, HORIZON_STEPS, INPUT_STEPS};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamSet, Tensor};

pub const KERNEL_SIZES: [usize; 3] = [3, 5, 7];
pub const FILTER_COUNTS: [usize; 3] = [16, 32, 64];
pub const DENSE_NODES: [usize; 3] = [12, 24, 48];
pub const LEARNING_RATES: [f32; 4] = [1e-2, 1e-3, 1e-4, 1e-5];
pub const DROPOUT_RATES: [f32; 10] = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    PvCnn,
    PvLstm,
    Conv3d,
    Convlstm,
    SinglePeriod,
}

impl Family {
    /// The four sequence forecasters, in report column order.
    pub const FORECASTERS: [Family; 4] = [Family::PvCnn, Family::PvLstm, Family::Conv3d, Family::Convlstm];

    pub fn name(self) -> &'static str {
        match self {
            Family::PvCnn => "pv_cnn",
            Family::PvLstm => "pv_lstm",
            Family::Conv3d => "conv3d",
            Family::Convlstm => "convlstm",
            Family::SinglePeriod => "single_period",
        }
    }

    pub fn uses_frames(self) -> bool {
        matches!(self, Family::Conv3d | Family::Convlstm | Family::SinglePeriod)
    }

    pub fn uses_pv(self) -> bool {
        self != Family::SinglePeriod
    }

    /// Average-pool factor applied to frames before the first learned layer.
    pub fn default_frame_pool(self) -> usize {
        match self {
            Family::Convlstm => 32,
            Family::Conv3d => 8,
            _ => 1,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pv_cnn" => Ok(Family::PvCnn),
            "pv_lstm" => Ok(Family::PvLstm),
            "conv3d" => Ok(Family::Conv3d),
            "convlstm" => Ok(Family::Convlstm),
            "single_period" => Ok(Family::SinglePeriod),
            _ => Err(Error::Config(format!(
                "unknown family {s:?}; expected pv_cnn, pv_lstm, conv3d, convlstm or single_period"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: Family,
    /// Output length; 1 for `single_period`.
    pub horizon_steps: usize,
    pub kernel_size: usize,
    pub filters: usize,
    pub dense_nodes: usize,
    pub dropout: f32,
    pub learning_rate: f32,
    pub seed: u64,
    pub frame_pool: usize,
}

impl ModelConfig {
    pub fn new(family: Family, horizon_steps: usize) -> Self {
        ModelConfig {
            family,
            horizon_steps,
            kernel_size: 3,
            filters: 16,
            dense_nodes: 24,
            dropout: 0.1,
            learning_rate: 1e-3,
            seed: 0,
            frame_pool: family.default_frame_pool(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.family == Family::SinglePeriod {
            if self.horizon_steps != 1 {
                return bad(format!(
                    "single_period predicts one value, got horizon {}",
                    self.horizon_steps
                ));
            }
        } else if !HORIZON_STEPS.contains(&self.horizon_steps) {
            return bad(format!(
                "{} horizon {} not in {HORIZON_STEPS:?}",
                self.family, self.horizon_steps
            ));
        }
        if !KERNEL_SIZES.contains(&self.kernel_size) {
            return bad(format!("kernel size {} not in {KERNEL_SIZES:?}", self.kernel_size));
        }
        if !FILTER_COUNTS.contains(&self.filters) {
            return bad(format!("filters {} not in {FILTER_COUNTS:?}", self.filters));
        }
        if !DENSE_NODES.contains(&self.dense_nodes) {
            return bad(format!("dense nodes {} not in {DENSE_NODES:?}", self.dense_nodes));
        }
        if !LEARNING_RATES.contains(&self.learning_rate) {
            return bad(format!(
                "learning rate {} not in {LEARNING_RATES:?}",
                self.learning_rate
            ));
        }
        // 0 switches dropout off; otherwise it must lie on the tuning range
        if !(self.dropout == 0.0 || (0.05 - 1e-6..=0.5 + 1e-6).contains(&self.dropout)) {
            return bad(format!("dropout {} outside [0.05, 0.5]", self.dropout));
        }
        if self.frame_pool == 0 || GRID % self.frame_pool != 0 {
            return bad(format!("frame pool {} does not divide {GRID}", self.frame_pool));
        }
        if !self.family.uses_frames() && self.frame_pool != 1 {
            return bad(format!("{} takes no frames; frame_pool must be 1", self.family));
        }
        Ok(())
    }

    /// Side length of the frames the first learned layer sees.
    pub fn frame_side(&self) -> usize {
        GRID / self.frame_pool
    }
}

/// Model inputs and targets for a set of examples, stacked along axis 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[N, T, S, S]` pooled frames (`T` = 12, or 1 for `single_period`).
    pub frames: Option<Tensor>,
    /// `[N, 12]`
    pub pv: Option<Tensor>,
    /// `[N, L]`
    pub targets: Tensor,
}

impl Batch {
    /// Stack windowed samples for a sequence forecaster.
    pub fn from_samples(samples: &[Sample], config: &ModelConfig) -> Result<Batch> {
        config.validate()?;
        if config.family == Family::SinglePeriod {
            return Err(Error::Config(
                "single_period consumes single frames; use Batch::single_period".into(),
            ));
        }
        if samples.is_empty() {
            return Err(Error::usage("cannot batch zero samples"));
        }
        let n = samples.len();
        let l = config.horizon_steps;
        let mut pv = Vec::with_capacity(n * INPUT_STEPS);
        let mut targets = Vec::with_capacity(n * l);
        for s in samples {
            if s.horizon() != l {
                return Err(Error::dim(format!(
                    "sample horizon {} does not match model horizon {l}",
                    s.horizon()
                )));
            }
            pv.extend_from_slice(s.x_pv.data());
            targets.extend_from_slice(s.y_pv.data());
        }
        let frames = if config.family.uses_frames() {
            let side = config.frame_side();
            let mut data = Vec::with_capacity(n * INPUT_STEPS * side * side);
            for s in samples {
                data.extend(s.x_frames.avg_pool_last2(config.frame_pool)?.into_data());
            }
            Some(Tensor::new(vec![n, INPUT_STEPS, side, side], data)?)
        } else {
            None
        };
        Ok(Batch {
            frames,
            pv: Some(Tensor::new(vec![n, INPUT_STEPS], pv)?),
            targets: Tensor::new(vec![n, l], targets)?,
        })
    }

    /// Frames `[N, 64, 64]` paired with one PV reading each.
    pub fn single_period(frames: &Tensor, targets: &[f32], frame_pool: usize) -> Result<Batch> {
        let s = frames.shape();
        if s.len() != 3 || s[1..] != [GRID, GRID] || s[0] != targets.len() || s[0] == 0 {
            return Err(Error::dim(format!(
                "single-period batch needs [N, {GRID}, {GRID}] frames and N targets, got {s:?} and {}",
                targets.len()
            )));
        }
        let pooled = frames.avg_pool_last2(frame_pool)?;
        let side = GRID / frame_pool;
        Ok(Batch {
            frames: Some(pooled.reshape(&[s[0], 1, side, side])?),
            pv: None,
            targets: Tensor::new(vec![s[0], 1], targets.to_vec())?,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            frames: self.frames.as_ref().map(|t| rows(t, idx)),
            pv: self.pv.as_ref().map(|t| rows(t, idx)),
            targets: rows(&self.targets, idx),
        }
    }

    pub fn range(&self, start: usize, end: usize) -> Batch {
        let idx: Vec<usize> = (start..end).collect();
        self.select(&idx)
    }
}

fn rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let step: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * step);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * step..(i + 1) * step]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data).expect("row gather preserves element count")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub config: ModelConfig,
    pub params: ParamSet,
}

/// Construct a freshly initialized model; weights are drawn from `config.seed`.
pub fn build(config: &ModelConfig) -> Result<ForecastModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = arch::init_params(config, &mut rng)?;
    Ok(ForecastModel {
        config: config.clone(),
        params,
    })
}

/// Repeat the last observed PV value across the horizon.
pub fn persistence(sample: &Sample) -> Tensor {
    Tensor::full(&[sample.horizon()], sample.last_pv())
}

impl ForecastModel {
    pub fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon_steps
    }

    /// Record a batched forward pass on `g`; returns the `[B, L]` output.
    pub fn forward_graph<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        bound: &crate::tensor::BoundParams,
        batch: &Batch,
        training: bool,
        rng: &mut R,
    ) -> Result<crate::tensor::Var> {
        arch::forward(&self.config, g, bound, batch, training, rng)
    }

    /// Forecast for one sample.
    pub fn forward<R: Rng + ?Sized>(&self, sample: &Sample, training: bool, rng: &mut R) -> Result<Tensor> {
        let batch = Batch::from_samples(std::slice::from_ref(sample), &self.config)?;
        let out = self.run(&batch, training, rng)?;
        out.reshape(&[self.horizon()])
    }

    fn run<R: Rng + ?Sized>(&self, batch: &Batch, training: bool, rng: &mut R) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let out = self.forward_graph(&mut g, &bound, batch, training, rng)?;
        Ok(g.tensor(out).with_requires_grad(false))
    }

    /// Inference-mode predictions `[N, L]`, computed in chunks.
    pub fn predict(&self, batch: &Batch) -> Result<Tensor> {
        const CHUNK: usize = 32;
        let n = batch.len();
        let mut data = Vec::with_capacity(n * self.horizon());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for start in (0..n).step_by(CHUNK) {
            let part = batch.range(start, (start + CHUNK).min(n));
            data.extend(self.run(&part, false, &mut rng)?.into_data());
        }
        Tensor::new(vec![n, self.horizon()], data)
    }

    /// Post-relu outputs of each image conv layer for one `[64, 64]` frame
    /// (`single_period` only), each `[F, H, W]` before pooling.
    pub fn conv_activations(&self, frame: &Tensor) -> Result<Vec<Tensor>> {
        if self.config.family != Family::SinglePeriod {
            return Err(Error::usage(format!(
                "activation maps need a single_period model, got {}",
                self.config.family
            )));
        }
        if frame.shape() != [GRID, GRID] {
            return Err(Error::dim(format!("frame shape {:?}", frame.shape())));
        }
        let frames = frame.reshape(&[1, GRID, GRID])?;
        let batch = Batch::single_period(&frames, &[0.0], self.config.frame_pool)?;
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let layers = arch::single_period_features(&self.config, &mut g, &bound, &batch)?;
        layers
            .into_iter()
            .map(|v| {
                let t = g.tensor(v).with_requires_grad(false);
                let s = t.shape()[1..].to_vec();
                t.reshape(&s)
            })
            .collect()
    }
}
