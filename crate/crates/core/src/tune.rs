//! Hyperparameter search over the categorical grid: Gaussian-process
//! expected improvement, or plain random sampling.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::data::{Sample, CADENCE_MINUTES};
use crate::error::{Error, Result};
use crate::models::{
    build, Batch, Family, ModelConfig, DENSE_NODES, DROPOUT_RATES, FILTER_COUNTS, KERNEL_SIZES,
    LEARNING_RATES,
};
use crate::train::{train, TrainOptions, TrainResult};

pub const LENGTH_SCALE: f64 = 0.3;
pub const NOISE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Bayesian,
    Random,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bayesian" | "bayes" | "gp" => Ok(Strategy::Bayesian),
            "random" => Ok(Strategy::Random),
            _ => Err(Error::usage(format!("unknown strategy {s:?}; expected bayesian or random"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOptions {
    pub budget: usize,
    pub init_random: usize,
    pub seed: u64,
    pub strategy: Strategy,
    /// Trials evaluated concurrently. Replays are only guaranteed identical at 1.
    pub workers: usize,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            budget: 24,
            init_random: 8,
            seed: 0,
            strategy: Strategy::Bayesian,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    LearningRate,
    Dropout,
    Kernel,
    Filters,
    Dense,
}

impl Axis {
    fn len(self) -> usize {
        match self {
            Axis::LearningRate => LEARNING_RATES.len(),
            Axis::Dropout => DROPOUT_RATES.len(),
            Axis::Kernel => KERNEL_SIZES.len(),
            Axis::Filters => FILTER_COUNTS.len(),
            Axis::Dense => DENSE_NODES.len(),
        }
    }

    fn apply(self, cfg: &mut ModelConfig, i: usize) {
        match self {
            // ascending, so grid order runs from the smallest rate
            Axis::LearningRate => cfg.learning_rate = LEARNING_RATES[LEARNING_RATES.len() - 1 - i],
            Axis::Dropout => cfg.dropout = DROPOUT_RATES[i],
            Axis::Kernel => cfg.kernel_size = KERNEL_SIZES[i],
            Axis::Filters => cfg.filters = FILTER_COUNTS[i],
            Axis::Dense => cfg.dense_nodes = DENSE_NODES[i],
        }
    }

    fn position(self, cfg: &ModelConfig) -> Option<usize> {
        match self {
            Axis::LearningRate => LEARNING_RATES
                .iter()
                .position(|&v| v == cfg.learning_rate)
                .map(|p| LEARNING_RATES.len() - 1 - p),
            Axis::Dropout => DROPOUT_RATES.iter().position(|&v| (v - cfg.dropout).abs() < 1e-6),
            Axis::Kernel => KERNEL_SIZES.iter().position(|&v| v == cfg.kernel_size),
            Axis::Filters => FILTER_COUNTS.iter().position(|&v| v == cfg.filters),
            Axis::Dense => DENSE_NODES.iter().position(|&v| v == cfg.dense_nodes),
        }
    }
}

/// The searchable configurations for one family and horizon, in
/// lexicographic order of the tuned axes (each axis ascending).
#[derive(Debug, Clone)]
pub struct Grid {
    base: ModelConfig,
    axes: Vec<Axis>,
}

impl Grid {
    /// Untuned fields are taken from `base`.
    pub fn new(base: ModelConfig) -> Result<Grid> {
        base.validate()?;
        use Axis::*;
        let axes = match base.family {
            Family::PvCnn => vec![LearningRate, Dropout, Kernel],
            Family::PvLstm => vec![LearningRate, Dropout, Dense],
            Family::Conv3d => vec![LearningRate, Dropout, Kernel, Dense],
            Family::Convlstm => vec![LearningRate, Dropout, Kernel, Filters, Dense],
            Family::SinglePeriod => {
                return Err(Error::Config("single_period has no tuning grid".into()))
            }
        };
        Ok(Grid { base, axes })
    }

    pub fn for_family(family: Family, horizon_steps: usize, seed: u64) -> Result<Grid> {
        let mut base = ModelConfig::new(family, horizon_steps);
        base.seed = seed;
        Grid::new(base)
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn family(&self) -> Family {
        self.base.family
    }

    fn digits(&self, mut index: usize) -> Vec<usize> {
        let mut d = vec![0; self.axes.len()];
        for (slot, axis) in d.iter_mut().zip(&self.axes).rev() {
            *slot = index % axis.len();
            index /= axis.len();
        }
        d
    }

    pub fn config(&self, index: usize) -> ModelConfig {
        assert!(index < self.len(), "grid index {index} out of range");
        let mut cfg = self.base.clone();
        for (axis, i) in self.axes.iter().zip(self.digits(index)) {
            axis.apply(&mut cfg, i);
        }
        cfg
    }

    /// Ordinal coordinates scaled to `[0, 1]`.
    pub fn encode(&self, index: usize) -> Vec<f64> {
        self.axes
            .iter()
            .zip(self.digits(index))
            .map(|(a, i)| i as f64 / (a.len() - 1) as f64)
            .collect()
    }

    /// Grid index of `cfg`, if it lies on the grid.
    pub fn index_of(&self, cfg: &ModelConfig) -> Option<usize> {
        let mut probe = cfg.clone();
        let mut index = 0;
        for axis in &self.axes {
            let p = axis.position(cfg)?;
            index = index * axis.len() + p;
            axis.apply(&mut probe, p);
        }
        (self.config(index) == probe && probe == *cfg).then_some(index)
    }
}

/// Zero-mean GP with a squared-exponential kernel on standardized targets.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    mean: f64,
    scale: f64,
    length_scale: f64,
}

fn sq_exp(a: &[f64], b: &[f64], ls: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * ls * ls)).exp()
}

impl GaussianProcess {
    pub fn fit(x: &[Vec<f64>], y: &[f64], length_scale: f64, noise: f64) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::usage("GP needs matching, non-empty inputs"));
        }
        let n = y.len();
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - mean) / scale));
        let k = DMatrix::from_fn(n, n, |i, j| {
            sq_exp(&x[i], &x[j], length_scale) + if i == j { noise } else { 0.0 }
        });
        let chol = k
            .cholesky()
            .ok_or_else(|| Error::Numeric {
                layer: "gp".into(),
                msg: "kernel matrix is not positive definite".into(),
            })?;
        let alpha = chol.solve(&ys);
        Ok(GaussianProcess {
            x: x.to_vec(),
            chol,
            alpha,
            mean,
            scale,
            length_scale,
        })
    }

    /// Posterior mean and standard deviation of the latent function, in
    /// the units of the observations.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| sq_exp(xi, x, self.length_scale)),
        );
        let mu = ks.dot(&self.alpha);
        let v = self.chol.solve(&ks);
        let var = (1.0 - ks.dot(&v)).max(0.0);
        (self.mean + self.scale * mu, self.scale * var.sqrt())
    }
}

/// Expected improvement below `best` (minimization).
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    let gain = best - mu;
    if sigma <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    let n = Normal::standard();
    gain * n.cdf(z) + sigma * n.pdf(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub grid_index: usize,
    pub config: ModelConfig,
    /// NaN for failed trials.
    pub best_val_mse: f64,
    pub status: TrialStatus,
    pub note: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best: ModelConfig,
    pub best_index: usize,
    pub trials: Vec<TrialRecord>,
}

/// Surrogate targets: completed trials as observed, failed ones at ten
/// times the worst completed value.
fn surrogate_targets(trials: &[TrialRecord]) -> Vec<f64> {
    let worst = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Completed)
        .map(|t| t.best_val_mse)
        .fold(f64::NEG_INFINITY, f64::max);
    let penalty = if worst.is_finite() { 10.0 * worst.abs().max(1e-12) } else { 1.0 };
    trials
        .iter()
        .map(|t| match t.status {
            TrialStatus::Completed => t.best_val_mse,
            TrialStatus::Failed => penalty,
        })
        .collect()
}

/// Fit the surrogate to `trials` and rank the unevaluated grid points by
/// expected improvement (descending; ties go to the lower grid index).
pub fn propose(grid: &Grid, trials: &[TrialRecord], count: usize) -> Result<Vec<usize>> {
    let x: Vec<Vec<f64>> = trials.iter().map(|t| grid.encode(t.grid_index)).collect();
    let y = surrogate_targets(trials);
    let gp = GaussianProcess::fit(&x, &y, LENGTH_SCALE, NOISE)?;
    let best = y.iter().copied().fold(f64::INFINITY, f64::min);
    let mut seen = vec![false; grid.len()];
    for t in trials {
        seen[t.grid_index] = true;
    }
    let mut scored: Vec<(f64, usize)> = (0..grid.len())
        .filter(|&i| !seen[i])
        .map(|i| {
            let (mu, sd) = gp.predict(&grid.encode(i));
            (expected_improvement(mu, sd, best), i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(count).map(|(_, i)| i).collect())
}

/// Search `grid`, scoring configurations with `objective` (lower is
/// better). Objective errors and non-finite scores mark a trial failed.
pub fn tune<F>(grid: &Grid, opts: &TuneOptions, objective: F) -> Result<TuneResult>
where
    F: Fn(&ModelConfig) -> Result<f64> + Sync,
{
    if opts.init_random < 2 || opts.budget < opts.init_random {
        return Err(Error::usage(format!(
            "need budget >= init_random >= 2, got budget {} and init_random {}",
            opts.budget, opts.init_random
        )));
    }
    let budget = opts.budget.min(grid.len());
    let workers = opts.workers.max(1);
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let n_random = match opts.strategy {
        Strategy::Random => budget,
        Strategy::Bayesian => opts.init_random.min(budget),
    };

    let mut trials: Vec<TrialRecord> = Vec::with_capacity(budget);
    while trials.len() < budget {
        let want = workers.min(budget - trials.len());
        let next: Vec<usize> = if trials.len() < n_random {
            order[trials.len()..(trials.len() + want).min(n_random)].to_vec()
        } else {
            propose(grid, &trials, want)?
        };
        let first_id = trials.len();
        let run = |(k, &index): (usize, &usize)| {
            let config = grid.config(index);
            let start = Instant::now();
            let outcome = objective(&config);
            let seconds = start.elapsed().as_secs_f64();
            let (best_val_mse, status, note) = match outcome {
                Ok(v) if v.is_finite() => (v, TrialStatus::Completed, None),
                Ok(v) => (f64::NAN, TrialStatus::Failed, Some(format!("non-finite score {v}"))),
                Err(e) => (f64::NAN, TrialStatus::Failed, Some(e.to_string())),
            };
            TrialRecord {
                trial_id: first_id + k,
                grid_index: index,
                config,
                best_val_mse,
                status,
                note,
                seconds,
            }
        };
        let records: Vec<TrialRecord> = if next.len() == 1 {
            next.iter().enumerate().map(run).collect()
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = next
                    .iter()
                    .enumerate()
                    .map(|job| s.spawn(move || run(job)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("trial thread panicked"))
                    .collect()
            })
        };
        trials.extend(records);
    }

    let best = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Completed)
        .min_by(|a, b| {
            a.best_val_mse
                .total_cmp(&b.best_val_mse)
                .then(a.grid_index.cmp(&b.grid_index))
        })
        .ok_or_else(|| Error::Numeric {
            layer: "tune".into(),
            msg: format!("all {} trials failed", trials.len()),
        })?;
    Ok(TuneResult {
        best: best.config.clone(),
        best_index: best.grid_index,
        trials,
    })
}

/// Tune a family on windowed samples; returns the search record and the
/// trained model of the best trial.
pub fn tune_model(
    family: Family,
    horizon_steps: usize,
    train_samples: &[Sample],
    val_samples: &[Sample],
    opts: &TuneOptions,
    train_opts: &TrainOptions,
) -> Result<(TuneResult, TrainResult)> {
    let grid = Grid::for_family(family, horizon_steps, opts.seed)?;
    // batches depend only on family-level fields shared by the whole grid
    let proto = grid.config(0);
    let train_set = Batch::from_samples(train_samples, &proto)?;
    let val_set = Batch::from_samples(val_samples, &proto)?;
    let kept: Mutex<Option<(f64, usize, TrainResult)>> = Mutex::new(None);
    let result = tune(&grid, opts, |cfg| {
        let model = build(cfg)?;
        let r = train(model, &train_set, &val_set, train_opts)?;
        let score = r.best_val_mse;
        let index = grid.index_of(cfg).expect("config comes from the grid");
        let mut slot = kept.lock().expect("lock");
        let better = slot
            .as_ref()
            .map_or(true, |(s, i, _)| score < *s || (score == *s && index < *i));
        if better {
            *slot = Some((score, index, r));
        }
        Ok(score)
    })?;
    let (_, index, trained) = kept.into_inner().expect("lock").expect("a trial completed");
    debug_assert_eq!(index, result.best_index);
    Ok((result, trained))
}

pub const TRIAL_LOG_HEADER: &str =
    "trial_id,family,horizon,lr,dropout,kernel,filters,dense,val_mse,status,seconds";

/// Append trial rows to a CSV log, writing the header if the file is new.
/// `horizon` is recorded in minutes.
pub fn append_trial_log(path: &Path, trials: &[TrialRecord]) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let fresh = f.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
    let mut out = String::new();
    if fresh {
        out.push_str(TRIAL_LOG_HEADER);
        out.push('\n');
    }
    for t in trials {
        let c = &t.config;
        let status = match t.status {
            TrialStatus::Completed => "completed",
            TrialStatus::Failed => "failed",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{:.3}\n",
            t.trial_id,
            c.family,
            c.horizon_steps * CADENCE_MINUTES as usize,
            c.learning_rate,
            c.dropout,
            c.kernel_size,
            c.filters,
            c.dense_nodes,
            t.best_val_mse,
            status,
            t.seconds
        ));
    }
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
