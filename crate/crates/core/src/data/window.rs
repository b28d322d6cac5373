use std::collections::BTreeMap;

use chrono::{DateTime, Utc};

use super::{cadence, check_horizon, FrameSeries, PvSeries, GRID, INPUT_STEPS};
use crate::error::Result;
use crate::solar::{DaylightFilter, GeoPoint};
use crate::tensor::Tensor;

/// One training example: an hour of frames and PV, then `L` PV targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// First input timestamp.
    pub t0: DateTime<Utc>,
    /// `[12, GRID, GRID]`
    pub x_frames: Tensor,
    /// `[12]`
    pub x_pv: Tensor,
    /// `[L]`
    pub y_pv: Tensor,
}

impl Sample {
    pub fn horizon(&self) -> usize {
        self.y_pv.len()
    }

    /// Timestamps of the target steps.
    pub fn target_times(&self) -> Vec<DateTime<Utc>> {
        (0..self.horizon())
            .map(|i| self.t0 + cadence() * (INPUT_STEPS + i) as i32)
            .collect()
    }

    pub fn last_pv(&self) -> f32 {
        self.x_pv.data()[INPUT_STEPS - 1]
    }
}

/// Cut samples out of every maximal run of contiguous, daylight-admitted
/// timestamps present in both series.
///
/// Inputs advance with a stride of [`INPUT_STEPS`], so input hours never
/// overlap; only windows fully inside a run are emitted. Storage order of
/// the series does not matter.
pub fn window_samples(
    frames: &FrameSeries,
    pv: &PvSeries,
    horizon_steps: usize,
    filter: &DaylightFilter,
    loc: GeoPoint,
) -> Result<Vec<Sample>> {
    check_horizon(horizon_steps)?;
    let frame_at: BTreeMap<DateTime<Utc>, usize> = frames
        .timestamps
        .iter()
        .enumerate()
        .map(|(i, t)| (*t, i))
        .collect();
    let pv_at: BTreeMap<DateTime<Utc>, usize> = pv
        .timestamps
        .iter()
        .enumerate()
        .map(|(i, t)| (*t, i))
        .collect();
    let admitted: Vec<(DateTime<Utc>, usize, usize)> = frame_at
        .iter()
        .filter_map(|(t, &fi)| pv_at.get(t).map(|&pi| (*t, fi, pi)))
        .filter(|(t, _, _)| filter.admits(*t, loc))
        .collect();

    let span = INPUT_STEPS + horizon_steps;
    let mut out = Vec::new();
    let mut run_start = 0;
    for i in 1..=admitted.len() {
        let breaks = i == admitted.len() || admitted[i].0 - admitted[i - 1].0 != cadence();
        if !breaks {
            continue;
        }
        let run = &admitted[run_start..i];
        let mut off = 0;
        while off + span <= run.len() {
            let w = &run[off..off + span];
            let mut xf = Vec::with_capacity(INPUT_STEPS * GRID * GRID);
            for (_, fi, _) in &w[..INPUT_STEPS] {
                xf.extend_from_slice(frames.frame(*fi));
            }
            let pv_of = |e: &(DateTime<Utc>, usize, usize)| pv.yield_normalized[e.2];
            out.push(Sample {
                t0: w[0].0,
                x_frames: Tensor::new(vec![INPUT_STEPS, GRID, GRID], xf)?,
                x_pv: Tensor::vector(w[..INPUT_STEPS].iter().map(pv_of).collect()),
                y_pv: Tensor::vector(w[INPUT_STEPS..].iter().map(pv_of).collect()),
            });
            off += INPUT_STEPS;
        }
        run_start = i;
    }
    Ok(out)
}
