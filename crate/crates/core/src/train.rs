//! Mini-batch Adam training with early stopping, and timing probes.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Partition, SplitSpec, GRID};
use crate::error::{Error, Result};
use crate::models::{Batch, ForecastModel};
use crate::tensor::{Adam, Graph, ParamSet, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Seeds data order and dropout masks.
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_epochs: 200,
            patience: 10,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub best_val_mse: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub wall_time_seconds: f64,
    pub history: Vec<EpochStats>,
    /// Parameters from the best validation epoch.
    pub final_model: ForecastModel,
}

/// One unit of work for [`early_stopping`].
pub trait EpochRunner {
    type Snapshot;

    /// Run one pass over the training data; returns the training MSE.
    fn train_epoch(&mut self, epoch: usize) -> Result<f64>;
    fn validate(&mut self) -> Result<f64>;
    fn snapshot(&self) -> Self::Snapshot;
    fn restore(&mut self, snapshot: Self::Snapshot);
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopOutcome {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

/// Train until validation MSE has not improved for `patience` epochs or
/// `max_epochs` is reached, then restore the best epoch's state.
pub fn early_stopping<R: EpochRunner>(
    runner: &mut R,
    max_epochs: usize,
    patience: usize,
) -> Result<StopOutcome> {
    if max_epochs == 0 {
        return Err(Error::usage("max_epochs must be at least 1"));
    }
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, R::Snapshot)> = None;
    let mut since_best = 0;
    for epoch in 0..max_epochs {
        let train_mse = runner.train_epoch(epoch)?;
        let val_mse = runner.validate()?;
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(Error::Numeric {
                layer: "loss".into(),
                msg: format!("epoch {epoch}: train {train_mse}, val {val_mse}"),
            });
        }
        history.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
        });
        if best.as_ref().map_or(true, |b| val_mse < b.1) {
            best = Some((epoch, val_mse, runner.snapshot()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= patience {
            break;
        }
    }
    let (best_epoch, best_val_mse, snap) = best.expect("at least one epoch ran");
    runner.restore(snap);
    Ok(StopOutcome {
        history,
        best_epoch,
        best_val_mse,
    })
}

struct ModelRunner<'a> {
    model: ForecastModel,
    train: &'a Batch,
    val: &'a Batch,
    adam: Adam,
    rng: ChaCha8Rng,
    batch_size: usize,
}

impl EpochRunner for ModelRunner<'_> {
    type Snapshot = ParamSet;

    fn train_epoch(&mut self, _epoch: usize) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.batch_size) {
            let batch = self.train.select(chunk);
            let mut g = Graph::new();
            let bound = self.model.params.bind(&mut g);
            let out = self
                .model
                .forward_graph(&mut g, &bound, &batch, true, &mut self.rng)?;
            let target = g.constant(batch.targets);
            let loss = g.mse(out, target)?;
            let value = g.value(loss)[0] as f64;
            if !value.is_finite() {
                return Err(Error::Numeric {
                    layer: "loss".into(),
                    msg: format!("training loss {value}"),
                });
            }
            total += value * chunk.len() as f64;
            g.backward(loss)?;
            self.model.params.pull_grads(&g, &bound)?;
            self.adam.step(&mut self.model.params);
        }
        Ok(total / self.train.len() as f64)
    }

    fn validate(&mut self) -> Result<f64> {
        mse(&self.model, self.val)
    }

    fn snapshot(&self) -> ParamSet {
        self.model.params.without_grads()
    }

    fn restore(&mut self, snapshot: ParamSet) {
        self.model.params = snapshot;
    }
}

/// Inference-mode MSE over a batch.
pub fn mse(model: &ForecastModel, batch: &Batch) -> Result<f64> {
    let pred = model.predict(batch)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(batch.targets.data())
        .map(|(p, t)| ((p - t) as f64).powi(2))
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn train(
    model: ForecastModel,
    train_set: &Batch,
    val_set: &Batch,
    opts: &TrainOptions,
) -> Result<TrainResult> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::usage("training and validation sets must be non-empty"));
    }
    if opts.batch_size == 0 {
        return Err(Error::usage("batch size must be at least 1"));
    }
    let start = Instant::now();
    let lr = model.config.learning_rate;
    let mut runner = ModelRunner {
        model,
        train: train_set,
        val: val_set,
        adam: Adam::new(lr),
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        batch_size: opts.batch_size,
    };
    let out = early_stopping(&mut runner, opts.max_epochs, opts.patience)?;
    Ok(TrainResult {
        best_val_mse: out.best_val_mse,
        best_epoch: out.best_epoch,
        epochs_run: out.history.len(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        history: out.history,
        final_model: runner.model,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub train_seconds: f64,
    pub inference_seconds: f64,
}

/// Published timings on a Tesla T4, used as carbon-module inputs.
pub const CONV3D_REFERENCE: Timings = Timings {
    train_seconds: 916.39,
    inference_seconds: 0.16,
};
pub const CONVLSTM_REFERENCE: Timings = Timings {
    train_seconds: 673.11,
    inference_seconds: 2.21,
};

pub const WARMUP_FORWARDS: usize = 10;
pub const TIMED_FORWARDS: usize = 100;

/// Median single-forecast latency over [`TIMED_FORWARDS`] forwards, after
/// [`WARMUP_FORWARDS`] untimed ones, cycling through `probe`.
pub fn inference_latency(model: &ForecastModel, probe: &Batch) -> Result<f64> {
    if probe.is_empty() {
        return Err(Error::usage("probe set must be non-empty"));
    }
    let singles: Vec<Batch> = (0..probe.len()).map(|i| probe.range(i, i + 1)).collect();
    for i in 0..WARMUP_FORWARDS {
        model.predict(&singles[i % singles.len()])?;
    }
    let mut times = Vec::with_capacity(TIMED_FORWARDS);
    for i in 0..TIMED_FORWARDS {
        let t = Instant::now();
        std::hint::black_box(model.predict(&singles[i % singles.len()])?);
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    // clock resolution floor keeps the value strictly positive
    Ok(((times[mid - 1] + times[mid]) / 2.0).max(1e-9))
}

pub fn record_timings(result: &TrainResult, probe: &Batch) -> Result<Timings> {
    Ok(Timings {
        train_seconds: result.wall_time_seconds.max(1e-9),
        inference_seconds: inference_latency(&result.final_model, probe)?,
    })
}

/// Random single-frame sets for `single_period`: `n_train` frames drawn
/// from training days, and up to `n_train / 4` each from validation and
/// test days, with the PV reading at the same timestamp as target.
pub fn single_period_sets(
    ds: &Dataset,
    spec: &SplitSpec,
    n_train: usize,
    frame_pool: usize,
    seed: u64,
) -> Result<(Batch, Batch, Batch)> {
    if ds.frames.timestamps != ds.pv.timestamps {
        return Err(Error::usage("frames and PV must share timestamps"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |part: Partition, n: usize| -> Result<Batch> {
        let mut idx: Vec<usize> = (0..ds.frames.len())
            .filter(|&i| spec.partition_of(ds.frames.timestamps[i]) == Some(part))
            .collect();
        if idx.is_empty() {
            return Err(Error::usage(format!("no {part:?} frames in the dataset")));
        }
        idx.shuffle(&mut rng);
        idx.truncate(n.max(1));
        idx.sort_unstable();
        let mut data = Vec::with_capacity(idx.len() * GRID * GRID);
        for &i in &idx {
            data.extend_from_slice(ds.frames.frame(i));
        }
        let frames = Tensor::new(vec![idx.len(), GRID, GRID], data)?;
        let targets: Vec<f32> = idx.iter().map(|&i| ds.pv.yield_normalized[i]).collect();
        Batch::single_period(&frames, &targets, frame_pool)
    };
    let train = pick(Partition::Train, n_train)?;
    let val = pick(Partition::Val, n_train / 4)?;
    let test = pick(Partition::Test, n_train / 4)?;
    Ok((train, val, test))
}
