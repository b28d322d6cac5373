//! Dataset containers, synthetic generation, windowing and the
//! day-of-month split.

pub(crate) mod io;
mod split;
mod synth;
mod window;

pub use io::{read_dataset, write_dataset, Manifest};
pub use split::{split, Partition, SplitSpec};
pub use synth::{coast_column, generate_synthetic, CloudMode, SynthConfig};
pub use window::{window_samples, Sample};

use chrono::{DateTime, Duration, Utc};

use crate::error::{Error, Result};
use crate::solar::{DaylightFilter, GeoPoint};
use crate::tensor::Tensor;

/// Side length of every satellite frame.
pub const GRID: usize = 64;
pub const CADENCE_MINUTES: i64 = 5;
/// Input steps per sample (one hour at 5-minute cadence).
pub const INPUT_STEPS: usize = 12;
/// Allowed target lengths: 1 to 4 hours.
pub const HORIZON_STEPS: [usize; 4] = [12, 24, 36, 48];

pub fn cadence() -> Duration {
    Duration::minutes(CADENCE_MINUTES)
}

/// Map a horizon in minutes (60/120/180/240) to target steps.
pub fn horizon_steps_for_minutes(minutes: u32) -> Result<usize> {
    match minutes {
        60 | 120 | 180 | 240 => Ok(minutes as usize / CADENCE_MINUTES as usize),
        _ => Err(Error::usage(format!(
            "horizon {minutes} min not in {{60, 120, 180, 240}}"
        ))),
    }
}

pub fn check_horizon(steps: usize) -> Result<()> {
    if HORIZON_STEPS.contains(&steps) {
        Ok(())
    } else {
        Err(Error::usage(format!(
            "horizon of {steps} steps not in {HORIZON_STEPS:?}"
        )))
    }
}

/// Satellite frames, one `GRID x GRID` image per timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    pub timestamps: Vec<DateTime<Utc>>,
    /// `[N, GRID, GRID]`, values in `[0, 1]`.
    pub frames: Tensor,
}

/// Normalized PV yield for a single system.
#[derive(Debug, Clone, PartialEq)]
pub struct PvSeries {
    pub timestamps: Vec<DateTime<Utc>>,
    pub yield_normalized: Vec<f32>,
    pub system_id: String,
    /// Normalization divisor: max raw yield over the training partition.
    pub capacity_proxy: f64,
}

impl FrameSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.frames.data()[i * GRID * GRID..(i + 1) * GRID * GRID]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.timestamps.len();
        if self.frames.shape() != [n, GRID, GRID] {
            return Err(Error::dim(format!(
                "frames shape {:?} for {n} timestamps",
                self.frames.shape()
            )));
        }
        check_timestamps(&self.timestamps)?;
        if let Some(v) = self.frames.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::usage(format!("frame value {v} outside [0, 1]")));
        }
        Ok(())
    }
}

impl PvSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamps.len() != self.yield_normalized.len() {
            return Err(Error::dim("pv timestamps and yields differ in length"));
        }
        check_timestamps(&self.timestamps)?;
        if !(self.capacity_proxy > 0.0 && self.capacity_proxy.is_finite()) {
            return Err(Error::usage(format!(
                "capacity proxy {} must be positive",
                self.capacity_proxy
            )));
        }
        if let Some(v) = self.yield_normalized.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::usage(format!("normalized yield {v} outside [0, 1]")));
        }
        Ok(())
    }
}

fn check_timestamps(ts: &[DateTime<Utc>]) -> Result<()> {
    let step = cadence().num_seconds();
    for w in ts.windows(2) {
        let gap = (w[1] - w[0]).num_seconds();
        if gap <= 0 {
            return Err(Error::usage(format!(
                "timestamps not strictly increasing at {}",
                w[1]
            )));
        }
        if gap % step != 0 {
            return Err(Error::usage(format!(
                "gap of {gap}s before {} is not a multiple of the cadence",
                w[1]
            )));
        }
    }
    Ok(())
}

/// A full dataset as stored in a container directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: FrameSeries,
    pub pv: PvSeries,
    pub location: GeoPoint,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        self.frames.validate()?;
        self.pv.validate()?;
        self.location.validate()
    }

    /// Window the dataset with the default daylight filter.
    pub fn samples(&self, horizon_steps: usize) -> Result<Vec<Sample>> {
        window_samples(
            &self.frames,
            &self.pv,
            horizon_steps,
            &DaylightFilter::default(),
            self.location,
        )
    }
}

/// Divide raw yields by their maximum over `spec`'s training days.
///
/// Returns the normalized series (clipped to `[0, 1]`) and the divisor.
pub fn normalize_by_training_max(
    timestamps: &[DateTime<Utc>],
    raw: &[f64],
    spec: &SplitSpec,
) -> Result<(Vec<f32>, f64)> {
    let cap = timestamps
        .iter()
        .zip(raw)
        .filter(|(t, _)| spec.partition_of(**t) == Some(Partition::Train))
        .map(|(_, &r)| r)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(cap > 0.0 && cap.is_finite()) {
        return Err(Error::usage(
            "no positive yield on training days; cannot normalize",
        ));
    }
    let norm = raw
        .iter()
        .map(|&r| ((r / cap) as f32).clamp(0.0, 1.0))
        .collect();
    Ok((norm, cap))
}
