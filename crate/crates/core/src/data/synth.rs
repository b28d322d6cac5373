//! Seeded synthetic stand-in for the satellite and PV feeds.
//!
//! Each frame is a static land/sea image lit by the sun and partially
//! covered by Gaussian cloud blobs that drift at a constant per-day
//! velocity. Clouds are bright, and the ground under them is hidden in
//! proportion to cloud opacity. PV yield is the clear-sky curve
//! `max(0, sin(altitude))` scaled by the mean cloud transmittance over a
//! central patch, plus bounded noise.

use chrono::{DateTime, Duration, Months, NaiveDate, NaiveTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    cadence, normalize_by_training_max, Dataset, FrameSeries, PvSeries, SplitSpec, GRID,
};
use crate::error::{Error, Result};
use crate::solar::{solar_position, DaylightFilter, GeoPoint};
use crate::tensor::Tensor;

const SEA: f32 = 0.18;
const LAND: f32 = 0.62;
const CLOUD: f32 = 0.85;
/// Central patch (inclusive start, exclusive end) the PV site sits under.
const PATCH: std::ops::Range<usize> = 28..36;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudMode {
    /// Drifting blobs drawn per day from the seeded RNG.
    Random,
    /// No clouds at all.
    Clear,
    /// Spatially uniform transmittance everywhere (e.g. 0.1 for full overcast).
    Uniform(f32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub start: NaiveDate,
    pub months: u32,
    pub location: GeoPoint,
    pub clouds: CloudMode,
    /// PV noise standard deviation relative to capacity; noise is truncated at 3σ.
    pub noise_sd: f64,
    /// Raw yield at full sun, arbitrary units.
    pub capacity: f64,
    pub filter: DaylightFilter,
    pub split: SplitSpec,
    pub system_id: String,
}

impl SynthConfig {
    pub fn new(seed: u64, months: u32) -> Self {
        SynthConfig {
            seed,
            start: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
            months,
            location: GeoPoint::DEVON,
            clouds: CloudMode::Random,
            noise_sd: 0.01,
            capacity: 4.0,
            filter: DaylightFilter::default(),
            split: SplitSpec::default(),
            system_id: "synthetic-0001".into(),
        }
    }
}

/// Column at which land begins on row `y` (sea to the west).
pub fn coast_column(y: usize) -> usize {
    let phase = 2.0 * std::f64::consts::PI * y as f64 / 32.0;
    (0.45 * GRID as f64 + 4.0 * phase.sin()).round() as usize
}

fn base_image() -> Vec<f32> {
    let mut img = vec![SEA; GRID * GRID];
    for y in 0..GRID {
        for x in coast_column(y)..GRID {
            img[y * GRID + x] = LAND;
        }
    }
    img
}

struct Blob {
    cx: f64,
    cy: f64,
    sigma: f64,
    amp: f64,
}

struct DayWeather {
    blobs: Vec<Blob>,
    vx: f64,
    vy: f64,
}

impl DayWeather {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        // mix of clear, broken and overcast days
        let n = match rng.gen_range(0..10) {
            0..=1 => 0,
            2..=6 => rng.gen_range(2..7),
            _ => rng.gen_range(8..16),
        };
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let speed = rng.gen_range(2.0..12.0); // px per hour
        let blobs = (0..n)
            .map(|_| Blob {
                cx: rng.gen_range(-40.0..104.0),
                cy: rng.gen_range(-40.0..104.0),
                sigma: rng.gen_range(5.0..14.0),
                amp: rng.gen_range(0.35..0.95),
            })
            .collect();
        DayWeather {
            blobs,
            vx: speed * angle.cos(),
            vy: speed * angle.sin(),
        }
    }

    /// Transmittance field at `hours` since midnight.
    fn transmittance(&self, hours: f64, out: &mut [f32]) {
        let mut opacity = vec![0.0f64; GRID * GRID];
        let mut gx = [0.0f64; GRID];
        let mut gy = [0.0f64; GRID];
        for b in &self.blobs {
            let (cx, cy) = (b.cx + self.vx * hours, b.cy + self.vy * hours);
            let inv = 1.0 / (2.0 * b.sigma * b.sigma);
            for i in 0..GRID {
                gx[i] = (-(i as f64 - cx).powi(2) * inv).exp();
                gy[i] = b.amp * (-(i as f64 - cy).powi(2) * inv).exp();
            }
            for y in 0..GRID {
                if gy[y] < 1e-6 {
                    continue;
                }
                let row = &mut opacity[y * GRID..(y + 1) * GRID];
                for x in 0..GRID {
                    row[x] += gy[y] * gx[x];
                }
            }
        }
        for (o, op) in out.iter_mut().zip(&opacity) {
            *o = (1.0 - op).clamp(0.05, 1.0) as f32;
        }
    }
}

/// Generate a dataset: frames and normalized PV at every daylight-admitted
/// 5-minute step of `[start, start + months)`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.location.validate()?;
    if cfg.months < 2 {
        return Err(Error::usage(format!(
            "date range of {} month(s) is too short; need >= 2 so every split partition is populated",
            cfg.months
        )));
    }
    if !(cfg.noise_sd >= 0.0 && cfg.capacity > 0.0) {
        return Err(Error::usage("noise_sd must be >= 0 and capacity > 0"));
    }
    let end = cfg
        .start
        .checked_add_months(Months::new(cfg.months))
        .ok_or_else(|| Error::usage("date range overflows the calendar"))?;
    let base = base_image();
    let noise: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");

    let mut timestamps = Vec::new();
    let mut frames = Vec::new();
    let mut raw = Vec::new();
    let mut tau = vec![0.0f32; GRID * GRID];
    let mut day = cfg.start;
    let mut day_index = 0u64;
    while day < end {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(day_index);
        let weather = DayWeather::draw(&mut rng);
        let midnight: DateTime<Utc> = Utc.from_utc_datetime(&day.and_time(NaiveTime::MIN));
        for step in 0..(24 * 60 / super::CADENCE_MINUTES) {
            let t = midnight + cadence() * step as i32;
            if !cfg.filter.admits(t, cfg.location) {
                continue;
            }
            let alt = solar_position(t, cfg.location)?.altitude;
            let sun = alt.to_radians().sin().max(0.0);
            let hours = step as f64 * super::CADENCE_MINUTES as f64 / 60.0;
            match cfg.clouds {
                CloudMode::Random => weather.transmittance(hours, &mut tau),
                CloudMode::Clear => tau.fill(1.0),
                CloudMode::Uniform(v) => tau.fill(v.clamp(0.0, 1.0)),
            }
            for (&b, &tr) in base.iter().zip(&tau) {
                let jitter = 0.005 * (noise.sample(&mut rng) as f32).clamp(-3.0, 3.0);
                let v = sun as f32 * (tr * b + (1.0 - tr) * CLOUD) + jitter;
                frames.push(v.clamp(0.0, 1.0));
            }
            let mut patch = 0.0f64;
            for y in PATCH {
                for x in PATCH {
                    patch += tau[y * GRID + x] as f64;
                }
            }
            patch /= (PATCH.len() * PATCH.len()) as f64;
            let eps = cfg.noise_sd * noise.sample(&mut rng).clamp(-3.0, 3.0);
            raw.push((cfg.capacity * (sun * patch + eps)).max(0.0));
            timestamps.push(t);
        }
        day += Duration::days(1);
        day_index += 1;
    }
    if timestamps.is_empty() {
        return Err(Error::usage("no daylight timestamps in the requested range"));
    }
    let (yield_normalized, capacity_proxy) = normalize_by_training_max(&timestamps, &raw, &cfg.split)?;
    let n = timestamps.len();
    Ok(Dataset {
        frames: FrameSeries {
            timestamps: timestamps.clone(),
            frames: Tensor::new(vec![n, GRID, GRID], frames)?,
        },
        pv: PvSeries {
            timestamps,
            yield_normalized,
            system_id: cfg.system_id.clone(),
            capacity_proxy,
        },
        location: cfg.location,
        seed: Some(cfg.seed),
    })
}
