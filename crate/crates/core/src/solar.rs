//! Solar position (NOAA low-precision ephemeris in Julian centuries) and the
//! daylight filter used when building datasets.
//!
//! Altitude is good to a few hundredths of a degree over 1950-2100. No
//! atmospheric refraction is applied.

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveTime, TimeZone, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Reference location used throughout: the Devon crop centroid.
    pub const DEVON: GeoPoint = GeoPoint { lat: 50.7, lon: -3.5 };

    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = GeoPoint { lat, lon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(Error::Domain(format!("latitude {} outside [-90, 90]", self.lat)));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::Domain(format!("longitude {} outside [-180, 180]", self.lon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolarPosition {
    /// Degrees above the horizon.
    pub altitude: f64,
    /// Degrees.
    pub declination: f64,
    /// Degrees, negative before solar noon.
    pub hour_angle: f64,
    /// Minutes.
    pub equation_of_time: f64,
}

/// Julian centuries since J2000.0.
fn julian_century(t: &DateTime<Utc>) -> f64 {
    let jd = t.timestamp() as f64 / 86_400.0 + t.timestamp_subsec_nanos() as f64 / 8.64e13 + 2_440_587.5;
    (jd - 2_451_545.0) / 36_525.0
}

/// Solar position at `t` (UTC) seen from `loc`.
pub fn solar_position(t: DateTime<Utc>, loc: GeoPoint) -> Result<SolarPosition> {
    loc.validate()?;
    if !(1950..=2100).contains(&t.year()) {
        return Err(Error::Domain(format!(
            "year {} outside the 1950-2100 validity window",
            t.year()
        )));
    }
    let c = julian_century(&t);
    let l0 = (280.46646 + c * (36_000.76983 + c * 0.0003032)).rem_euclid(360.0);
    let m = (357.52911 + c * (35_999.05029 - 0.0001537 * c)).to_radians();
    let e = 0.016708634 - c * (0.000042037 + 0.0000001267 * c);
    let centre = m.sin() * (1.914602 - c * (0.004817 + 0.000014 * c))
        + (2.0 * m).sin() * (0.019993 - 0.000101 * c)
        + (3.0 * m).sin() * 0.000289;
    let omega = (125.04 - 1934.136 * c).to_radians();
    let lambda = (l0 + centre - 0.00569 - 0.00478 * omega.sin()).to_radians();
    let eps0 = 23.0 + (26.0 + (21.448 - c * (46.815 + c * (0.00059 - c * 0.001813))) / 60.0) / 60.0;
    let eps = (eps0 + 0.00256 * omega.cos()).to_radians();
    let decl = (eps.sin() * lambda.sin()).asin();
    let y = (eps / 2.0).tan().powi(2);
    let l0r = l0.to_radians();
    let eqtime = 4.0
        * (y * (2.0 * l0r).sin() - 2.0 * e * m.sin() + 4.0 * e * y * m.sin() * (2.0 * l0r).cos()
            - 0.5 * y * y * (4.0 * l0r).sin()
            - 1.25 * e * e * (2.0 * m).sin())
        .to_degrees();
    let minutes =
        t.hour() as f64 * 60.0 + t.minute() as f64 + t.second() as f64 / 60.0 + t.nanosecond() as f64 / 6e10;
    let true_solar = minutes + eqtime + 4.0 * loc.lon;
    let ha = true_solar / 4.0 - 180.0;
    let (phi, h) = (loc.lat.to_radians(), ha.to_radians());
    let sin_alt = phi.sin() * decl.sin() + phi.cos() * decl.cos() * h.cos();
    Ok(SolarPosition {
        altitude: sin_alt.clamp(-1.0, 1.0).asin().to_degrees(),
        declination: decl.to_degrees(),
        hour_angle: ha,
        equation_of_time: eqtime,
    })
}

/// UTC instant of solar noon (hour angle zero) on `date` at `loc`.
pub fn solar_noon(date: NaiveDate, loc: GeoPoint) -> Result<DateTime<Utc>> {
    loc.validate()?;
    let midnight = Utc.from_utc_datetime(&date.and_time(NaiveTime::MIN));
    let mut noon = midnight + Duration::minutes(720);
    // eqtime depends weakly on the time of day; two fixed-point passes suffice
    for _ in 0..3 {
        let eq = solar_position(noon, loc)?.equation_of_time;
        let minutes = 720.0 - 4.0 * loc.lon - eq;
        noon = midnight + Duration::milliseconds((minutes * 60_000.0).round() as i64);
    }
    Ok(noon)
}

/// Daylight admission rule for dataset timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DaylightFilter {
    /// Minimum solar altitude, degrees.
    pub min_altitude: f64,
    /// Inclusive local clock window, minutes after midnight.
    pub window_start_min: u32,
    pub window_end_min: u32,
    /// Local clock offset from UTC in minutes (0 = the window is read in UTC).
    pub utc_offset_min: i32,
}

impl Default for DaylightFilter {
    fn default() -> Self {
        DaylightFilter {
            min_altitude: 10.0,
            window_start_min: 5 * 60,
            window_end_min: 20 * 60,
            utc_offset_min: 0,
        }
    }
}

impl DaylightFilter {
    pub fn admits(&self, t: DateTime<Utc>, loc: GeoPoint) -> bool {
        let local = t + Duration::minutes(self.utc_offset_min as i64);
        let clock = local.hour() * 60 + local.minute();
        let in_window = clock >= self.window_start_min
            && (clock < self.window_end_min
                || (clock == self.window_end_min && local.second() == 0 && local.nanosecond() == 0));
        if !in_window {
            return false;
        }
        match solar_position(t, loc) {
            Ok(p) => p.altitude >= self.min_altitude,
            Err(_) => false,
        }
    }
}

/// True iff `t` is inside the local clock window and the sun is at least
/// `filter.min_altitude` above the horizon.
pub fn daylight_filter(t: DateTime<Utc>, loc: GeoPoint, filter: &DaylightFilter) -> bool {
    filter.admits(t, loc)
}
