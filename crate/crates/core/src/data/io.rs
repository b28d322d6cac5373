//! Dataset container: a directory holding `manifest.json`, `frames.f32`
//! and `pv.csv`.

use std::fs;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::{Dataset, FrameSeries, PvSeries, CADENCE_MINUTES, GRID};
use crate::blob;
use crate::error::{Error, Result};
use crate::solar::GeoPoint;

pub const MANIFEST: &str = "manifest.json";
pub const FRAMES: &str = "frames.f32";
pub const PV: &str = "pv.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub cadence_minutes: u32,
    pub grid: [usize; 2],
    pub timestamps: Vec<String>,
    pub pv_system_id: String,
    pub capacity_proxy: f64,
    pub seed: Option<u64>,
    pub location: Location,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub lat: f64,
    pub lon: f64,
}

pub(crate) fn fmt_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub(crate) fn parse_time(s: &str, blob: &str, offset: u64) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| Error::format(blob, offset, format!("bad timestamp {s:?}: {e}")))
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    if ds.frames.timestamps != ds.pv.timestamps {
        return Err(Error::usage(
            "frames and pv must share timestamps to be stored in one container",
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        version: 1,
        cadence_minutes: CADENCE_MINUTES as u32,
        grid: [GRID, GRID],
        timestamps: ds.frames.timestamps.iter().map(fmt_time).collect(),
        pv_system_id: ds.pv.system_id.clone(),
        capacity_proxy: ds.pv.capacity_proxy,
        seed: ds.seed,
        location: Location {
            lat: ds.location.lat,
            lon: ds.location.lon,
        },
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;

    blob::write(&dir.join(FRAMES), &ds.frames.frames)?;

    let path = dir.join(PV);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["timestamp", "yield_normalized"])
        .map_err(|e| csv_err(&path, e))?;
    for (t, v) in ds.pv.timestamps.iter().zip(&ds.pv.yield_normalized) {
        w.write_record([fmt_time(t), v.to_string()])
            .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(PV, offset, format!("{other:?}")),
    }
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| {
        Error::format(MANIFEST, byte_offset(&text, e.line(), e.column()), e.to_string())
    })?;
    if m.version != 1 {
        return Err(Error::format(MANIFEST, 0, format!("unsupported version {}", m.version)));
    }
    if m.cadence_minutes as i64 != CADENCE_MINUTES || m.grid != [GRID, GRID] {
        return Err(Error::format(
            MANIFEST,
            0,
            format!("expected cadence {CADENCE_MINUTES} and grid {GRID}x{GRID}"),
        ));
    }
    let timestamps = m
        .timestamps
        .iter()
        .map(|s| parse_time(s, MANIFEST, 0))
        .collect::<Result<Vec<_>>>()?;

    let frames = blob::read(&dir.join(FRAMES))?;
    let shape = frames.shape().to_vec();
    if shape.len() != 3 || shape[1..] != [GRID, GRID] {
        return Err(Error::format(FRAMES, 0, format!("frame shape {shape:?}")));
    }
    if shape[0] != timestamps.len() {
        return Err(Error::format(
            MANIFEST,
            0,
            format!(
                "manifest lists {} timestamps but {FRAMES} holds {} frames",
                timestamps.len(),
                shape[0]
            ),
        ));
    }

    let path = dir.join(PV);
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let header = r.headers().map_err(|e| csv_err(&path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["timestamp", "yield_normalized"] {
        return Err(Error::format(PV, 0, format!("bad header {header:?}")));
    }
    let mut pv_ts = Vec::with_capacity(timestamps.len());
    let mut yields = Vec::with_capacity(timestamps.len());
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        let offset = rec.position().map_or(0, |p| p.byte());
        if rec.len() != 2 {
            return Err(Error::format(PV, offset, "expected 2 fields"));
        }
        pv_ts.push(parse_time(&rec[0], PV, offset)?);
        let v: f32 = rec[1]
            .parse()
            .map_err(|_| Error::format(PV, offset, format!("bad yield {:?}", &rec[1])))?;
        yields.push(v);
    }
    if pv_ts != timestamps {
        return Err(Error::format(
            PV,
            0,
            format!(
                "{} rows do not match the {} manifest timestamps",
                pv_ts.len(),
                timestamps.len()
            ),
        ));
    }
    let ds = Dataset {
        frames: FrameSeries {
            timestamps: timestamps.clone(),
            frames,
        },
        pv: PvSeries {
            timestamps,
            yield_normalized: yields,
            system_id: m.pv_system_id,
            capacity_proxy: m.capacity_proxy,
        },
        location: GeoPoint {
            lat: m.location.lat,
            lon: m.location.lon,
        },
        seed: m.seed,
    };
    ds.validate().map_err(|e| Error::format(MANIFEST, 0, e.to_string()))?;
    Ok(ds)
}

fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    let before: usize = text.lines().take(line.saturating_sub(1)).map(|l| l.len() + 1).sum();
    (before + column.saturating_sub(1)) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};

    fn dataset() -> Dataset {
        generate_synthetic(&SynthConfig::new(3, 2)).unwrap()
    }

    fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out: Vec<_> = fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        out.sort();
        out
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = dataset();
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        write_dataset(&a, &ds).unwrap();
        let back = read_dataset(&a).unwrap();
        assert_eq!(back, ds);
        write_dataset(&b, &back).unwrap();
        assert_eq!(tree(&a), tree(&b));
    }

    #[test]
    fn truncated_frames_blob() {
        let tmp = tempfile::tempdir().unwrap();
        write_dataset(tmp.path(), &dataset()).unwrap();
        let path = tmp.path().join(FRAMES);
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, &bytes).unwrap();
        match read_dataset(tmp.path()) {
            Err(Error::Format { blob, .. }) => assert!(blob.contains(FRAMES)),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn timestamp_count_mismatch() {
        let tmp = tempfile::tempdir().unwrap();
        write_dataset(tmp.path(), &dataset()).unwrap();
        let path = tmp.path().join(MANIFEST);
        let mut m: Manifest = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        m.timestamps.pop();
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(read_dataset(tmp.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_directory_names_path() {
        let err = read_dataset(Path::new("/nonexistent/ds")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/ds"));
    }
}
