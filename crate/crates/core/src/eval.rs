//! Error metrics, persistence comparison, signed-error traces and
//! activation-map export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::data::io::fmt_time;
use crate::data::{coast_column, Sample, CADENCE_MINUTES, GRID};
use crate::error::{Error, Result};
use crate::models::{persistence, Batch, Family, ForecastModel};
use crate::tensor::Tensor;

/// Normalized errors in percent of the [0, 1] yield scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub nrmse: f64,
    pub nmae: f64,
}

/// Elementwise errors over all `N * L` entries.
pub fn metrics(preds: &Tensor, targets: &Tensor) -> Result<Metrics> {
    if preds.shape() != targets.shape() {
        return Err(Error::dim(format!(
            "prediction shape {:?} vs target shape {:?}",
            preds.shape(),
            targets.shape()
        )));
    }
    if preds.is_empty() {
        return Err(Error::usage("metrics need at least one prediction"));
    }
    let (mut abs, mut sq) = (0.0f64, 0.0f64);
    for (&p, &t) in preds.data().iter().zip(targets.data()) {
        let e = p as f64 - t as f64;
        abs += e.abs();
        sq += e * e;
    }
    let n = preds.len() as f64;
    let nrmse = 100.0 * (sq / n).sqrt();
    // equal by Jensen when all |e| agree; guard the last-bit rounding
    let nmae = (100.0 * abs / n).min(nrmse);
    Ok(Metrics { nrmse, nmae })
}

/// One horizon's row group of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub horizon_minutes: u32,
    pub n_samples: usize,
    pub persistence: Metrics,
    /// One entry per forecasting family, in table column order; `None`
    /// where no model was supplied for this horizon.
    pub models: Vec<(Family, Option<Metrics>)>,
}

impl EvalReport {
    pub fn get(&self, family: Family) -> Option<Metrics> {
        self.models.iter().find(|(f, _)| *f == family).and_then(|(_, m)| *m)
    }
}

/// Published 60-minute reference values (percent), shown next to local
/// results for orientation only.
pub const REFERENCE_60MIN_PERSISTENCE_NRMSE: f64 = 11.60;
pub const REFERENCE_60MIN_CONVLSTM_NRMSE: f64 = 9.29;

fn stack_targets(samples: &[Sample]) -> Result<Tensor> {
    let l = samples[0].horizon();
    let data = samples.iter().flat_map(|s| s.y_pv.data().iter().copied()).collect();
    Tensor::new(vec![samples.len(), l], data)
}

/// Predictions for `samples`, split into up to `workers` contiguous chunks
/// evaluated in parallel and reassembled in sample order.
pub fn predict_samples(model: &ForecastModel, samples: &[Sample], workers: usize) -> Result<Tensor> {
    if samples.is_empty() {
        return Err(Error::usage("no samples to predict"));
    }
    let l = model.horizon();
    let chunk = samples.len().div_ceil(workers.max(1));
    let parts: Vec<Result<Tensor>> = std::thread::scope(|s| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    let b = Batch::from_samples(part, &model.config)?;
                    model.predict(&b)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("prediction thread panicked")).collect()
    });
    let mut data = Vec::with_capacity(samples.len() * l);
    for p in parts {
        data.extend_from_slice(p?.data());
    }
    Tensor::new(vec![samples.len(), l], data)
}

pub fn persistence_predictions(samples: &[Sample]) -> Result<Tensor> {
    let l = samples[0].horizon();
    let data = samples.iter().flat_map(|s| persistence(s).data().to_vec()).collect();
    Tensor::new(vec![samples.len(), l], data)
}

/// Score every model against persistence on the test set of its horizon.
/// `test_sets` maps horizon steps to samples.
pub fn evaluate_suite(
    models: &[&ForecastModel],
    test_sets: &[(usize, Vec<Sample>)],
    workers: usize,
) -> Result<Vec<EvalReport>> {
    for m in models {
        if !test_sets.iter().any(|(l, _)| *l == m.horizon()) {
            return Err(Error::usage(format!(
                "{} model has horizon {} steps but no test set of that horizon",
                m.config.family,
                m.horizon()
            )));
        }
    }
    let mut reports = Vec::new();
    let mut sets: Vec<&(usize, Vec<Sample>)> = test_sets.iter().collect();
    sets.sort_by_key(|(l, _)| *l);
    for (l, samples) in sets {
        if samples.is_empty() {
            return Err(Error::usage(format!("empty test set at horizon {l} steps")));
        }
        if let Some(s) = samples.iter().find(|s| s.horizon() != *l) {
            return Err(Error::dim(format!("sample with horizon {} in the {l}-step set", s.horizon())));
        }
        let targets = stack_targets(samples)?;
        let pers = metrics(&persistence_predictions(samples)?, &targets)?;
        let mut cols = Vec::new();
        for family in Family::FORECASTERS {
            let m = models
                .iter()
                .find(|m| m.config.family == family && m.horizon() == *l);
            let score = match m {
                Some(m) => Some(metrics(&predict_samples(m, samples, workers)?, &targets)?),
                None => None,
            };
            cols.push((family, score));
        }
        reports.push(EvalReport {
            horizon_minutes: (*l as i64 * CADENCE_MINUTES) as u32,
            n_samples: samples.len(),
            persistence: pers,
            models: cols,
        });
    }
    Ok(reports)
}

pub const TABLE1_HEADER: &str = "horizon,metric,model,value_percent";

/// Long-format table: rows are horizon x metric, one line per column
/// (persistence then each family). Missing models are written `absent`.
pub fn table1_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{TABLE1_HEADER}\n");
    for r in reports {
        for metric in ["nmae", "nrmse"] {
            let pick = |m: &Metrics| if metric == "nmae" { m.nmae } else { m.nrmse };
            let _ = writeln!(out, "{},{metric},persistence,{}", r.horizon_minutes, pick(&r.persistence));
            for (family, m) in &r.models {
                let v = m.as_ref().map_or("absent".to_string(), |m| pick(m).to_string());
                let _ = writeln!(out, "{},{metric},{family},{v}", r.horizon_minutes);
            }
        }
    }
    out
}

/// Human-readable version of the table, with the published 60-minute
/// figures alongside.
pub fn table1_text(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<8} {:<6} {:>12}", "horizon", "metric", "persistence");
    for f in Family::FORECASTERS {
        let _ = write!(out, " {:>10}", f.name());
    }
    out.push('\n');
    for r in reports {
        for metric in ["nmae", "nrmse"] {
            let pick = |m: &Metrics| if metric == "nmae" { m.nmae } else { m.nrmse };
            let _ = write!(
                out,
                "{:<8} {:<6} {:>11.2}%",
                format!("{}min", r.horizon_minutes),
                metric,
                pick(&r.persistence)
            );
            for (_, m) in &r.models {
                match m {
                    Some(m) => {
                        let _ = write!(out, " {:>9.2}%", pick(m));
                    }
                    None => {
                        let _ = write!(out, " {:>10}", "absent");
                    }
                }
            }
            out.push('\n');
        }
    }
    let _ = writeln!(
        out,
        "reference (real data, 60min nrmse): persistence {REFERENCE_60MIN_PERSISTENCE_NRMSE:.2}%, convlstm {REFERENCE_60MIN_CONVLSTM_NRMSE:.2}%"
    );
    out
}

pub fn write_table1(path: &Path, reports: &[EvalReport]) -> Result<()> {
    std::fs::write(path, table1_csv(reports)).map_err(|e| Error::io(path, e))
}

/// Signed errors (prediction minus observation) of one forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTrace {
    pub t0: DateTime<Utc>,
    pub signed_error_sum: f64,
    pub errors: Vec<f64>,
}

/// Traces from precomputed predictions `[N, L]`.
pub fn traces_from(samples: &[Sample], preds: &Tensor) -> Result<Vec<ErrorTrace>> {
    let l = preds.shape().get(1).copied().unwrap_or(0);
    if preds.shape() != [samples.len(), l] {
        return Err(Error::dim(format!(
            "predictions {:?} for {} samples",
            preds.shape(),
            samples.len()
        )));
    }
    samples
        .iter()
        .zip(preds.data().chunks(l.max(1)))
        .map(|(s, p)| {
            if s.horizon() != l {
                return Err(Error::dim(format!("sample horizon {} vs {l}", s.horizon())));
            }
            let errors: Vec<f64> = p
                .iter()
                .zip(s.y_pv.data())
                .map(|(&p, &t)| p as f64 - t as f64)
                .collect();
            Ok(ErrorTrace {
                t0: s.t0,
                signed_error_sum: errors.iter().sum(),
                errors,
            })
        })
        .collect()
}

pub fn error_trace(model: &ForecastModel, samples: &[Sample]) -> Result<Vec<ErrorTrace>> {
    let preds = predict_samples(model, samples, 1)?;
    traces_from(samples, &preds)
}

pub fn errors_csv(traces: &[ErrorTrace]) -> String {
    let mut out = String::from("t0,signed_error_sum\n");
    for t in traces {
        let _ = writeln!(out, "{},{}", fmt_time(&t.t0), t.signed_error_sum);
    }
    out
}

/// Mean signed error sum per calendar month, keyed by (year, month).
pub fn monthly_mean_error(traces: &[ErrorTrace]) -> BTreeMap<(i32, u32), (f64, usize)> {
    let mut acc: BTreeMap<(i32, u32), (f64, usize)> = BTreeMap::new();
    for t in traces {
        let e = acc.entry((t.t0.year(), t.t0.month())).or_default();
        e.0 += t.signed_error_sum;
        e.1 += 1;
    }
    for v in acc.values_mut() {
        v.0 /= v.1 as f64;
    }
    acc
}

pub fn monthly_csv(traces: &[ErrorTrace]) -> String {
    let mut out = String::from("month,mean_signed_error_sum,n\n");
    for ((y, m), (mean, n)) in monthly_mean_error(traces) {
        let _ = writeln!(out, "{y:04}-{m:02},{mean},{n}");
    }
    out
}

/// Final-step forecasts against observations, grouped by day. Values are
/// clipped to [0, 1] for display.
pub fn overlays(samples: &[Sample], preds: &Tensor) -> Result<BTreeMap<NaiveDate, String>> {
    traces_from(samples, preds)?;
    let l = preds.shape()[1];
    let mut rows: Vec<(DateTime<Utc>, f32, f32)> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let when = *s.target_times().last().expect("non-empty horizon");
            let obs = s.y_pv.data()[l - 1];
            (when, obs, preds.data()[i * l + l - 1])
        })
        .collect();
    rows.sort_by_key(|r| r.0);
    let mut days: BTreeMap<NaiveDate, String> = BTreeMap::new();
    for (when, obs, pred) in rows {
        let text = days
            .entry(when.date_naive())
            .or_insert_with(|| String::from("timestamp,observed,predicted\n"));
        let _ = writeln!(
            text,
            "{},{},{}",
            fmt_time(&when),
            obs.clamp(0.0, 1.0),
            pred.clamp(0.0, 1.0)
        );
    }
    Ok(days)
}

/// Write `errors.csv`, `monthly_errors.csv` and one `overlay_<date>.csv`
/// per day into `dir`.
pub fn write_error_reports(dir: &Path, samples: &[Sample], preds: &Tensor) -> Result<Vec<ErrorTrace>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let traces = traces_from(samples, preds)?;
    let put = |name: String, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    put("errors.csv".into(), errors_csv(&traces))?;
    put("monthly_errors.csv".into(), monthly_csv(&traces))?;
    for (day, text) in overlays(samples, preds)? {
        put(format!("overlay_{day}.csv"), text)?;
    }
    Ok(traces)
}

/// Per-map min-max scaling to 0..=255; a constant map becomes all zeros.
pub fn normalize_map(values: &[f32]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    let span = (hi - lo) as f64;
    values
        .iter()
        .map(|&v| (((v - lo) as f64 / span) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// All filter maps of one conv layer, tiled row-major into one image.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrid {
    pub layer: usize,
    pub maps: usize,
    pub map_height: usize,
    pub map_width: usize,
    pub columns: usize,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl LayerGrid {
    fn from_activations(layer: usize, act: &Tensor) -> Result<LayerGrid> {
        let &[f, h, w] = act.shape() else {
            return Err(Error::dim(format!("activation shape {:?}", act.shape())));
        };
        let columns = (f as f64).sqrt().ceil() as usize;
        let rows = f.div_ceil(columns);
        let (width, height) = (columns * w, rows * h);
        let mut pixels = vec![0u8; width * height];
        for (k, map) in act.data().chunks(h * w).enumerate() {
            let scaled = normalize_map(map);
            let (ox, oy) = ((k % columns) * w, (k / columns) * h);
            for y in 0..h {
                let dst = (oy + y) * width + ox;
                pixels[dst..dst + w].copy_from_slice(&scaled[y * w..(y + 1) * w]);
            }
        }
        Ok(LayerGrid {
            layer,
            maps: f,
            map_height: h,
            map_width: w,
            columns,
            width,
            height,
            pixels,
        })
    }

    /// Scaled pixels of map `k`.
    pub fn map(&self, k: usize) -> Vec<u8> {
        let (ox, oy) = ((k % self.columns) * self.map_width, (k / self.columns) * self.map_height);
        (0..self.map_height)
            .flat_map(|y| {
                let s = (oy + y) * self.width + ox;
                self.pixels[s..s + self.map_width].iter().copied()
            })
            .collect()
    }
}

/// Per-layer activation grids of a `single_period` model on one frame.
pub fn activation_maps(model: &ForecastModel, frame: &Tensor) -> Result<Vec<LayerGrid>> {
    model
        .conv_activations(frame)?
        .iter()
        .enumerate()
        .map(|(i, a)| LayerGrid::from_activations(i + 1, a))
        .collect()
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parse a binary 8-bit PGM; returns (width, height, pixels).
pub fn decode_pgm(bytes: &[u8], name: &str) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(name, pos as u64, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let bad = |msg: &str| Error::format(name, 0, msg);
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("expected an 8-bit P5 image"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != w * h {
        return Err(Error::format(name, pos as u64, format!("expected {} pixels, found {}", w * h, body.len())));
    }
    Ok((w, h, body.to_vec()))
}

/// Write `activations_layer<k>.pgm` for each grid.
pub fn write_activation_maps(dir: &Path, grids: &[LayerGrid]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for g in grids {
        let p = dir.join(format!("activations_layer{}.pgm", g.layer));
        std::fs::write(&p, encode_pgm(g.width, g.height, &g.pixels)).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Mean activation energy (squared activation averaged over filters) on
/// pixels straddling the coastline step versus pixels at least three
/// frame pixels away from it. Maps smaller than the frame are compared at
/// the corresponding downscaled coordinates.
pub fn coastline_energy(act: &Tensor) -> Result<(f64, f64)> {
    let &[f, h, w] = act.shape() else {
        return Err(Error::dim(format!("activation shape {:?}", act.shape())));
    };
    let scale = GRID as f64 / w as f64;
    let (mut on, mut n_on, mut off, mut n_off) = (0.0, 0usize, 0.0, 0usize);
    for y in 0..h {
        let fy = ((y as f64 + 0.5) * GRID as f64 / h as f64) as usize;
        let coast = coast_column(fy.min(GRID - 1)) as f64;
        for x in 0..w {
            // distance from this cell's centre to the land/sea boundary
            let d = ((x as f64 + 0.5) * scale - coast).abs();
            let e: f64 = (0..f)
                .map(|k| (act.data()[(k * h + y) * w + x] as f64).powi(2))
                .sum::<f64>()
                / f as f64;
            if d <= scale {
                on += e;
                n_on += 1;
            } else if d >= 3.0 {
                off += e;
                n_off += 1;
            }
        }
    }
    if n_on == 0 || n_off == 0 {
        return Err(Error::usage("activation map too small to separate the coastline"));
    }
    Ok((on / n_on as f64, off / n_off as f64))
}
