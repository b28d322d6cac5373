//! Emissions generated by training and deploying a forecaster, and the
//! emissions-averted chain for grid-scale solar.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::{Timings, CONV3D_REFERENCE, CONVLSTM_REFERENCE};

/// Device power presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerPreset {
    /// Rated board power of a Tesla T4.
    T4Nameplate,
    /// Back-solved from the published hours and tonnes.
    PaperImplied,
}

impl PowerPreset {
    pub fn kw(self) -> f64 {
        match self {
            PowerPreset::T4Nameplate => 0.07,
            PowerPreset::PaperImplied => 0.686,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PowerPreset::T4Nameplate => "t4-nameplate",
            PowerPreset::PaperImplied => "paper-implied",
        }
    }
}

impl FromStr for PowerPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t4-nameplate" => Ok(PowerPreset::T4Nameplate),
            "paper-implied" => Ok(PowerPreset::PaperImplied),
            _ => Err(Error::usage(format!(
                "unknown power preset {s:?}; expected t4-nameplate or paper-implied"
            ))),
        }
    }
}

/// Share of improved forecasts that let gas reserves be switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisplacementPreset {
    /// "0.05% of cases" as written.
    PaperProse,
    /// The fraction that reproduces the quoted ~5500 t.
    PaperArithmetic,
}

impl DisplacementPreset {
    pub fn fraction(self) -> f64 {
        match self {
            DisplacementPreset::PaperProse => 5e-4,
            DisplacementPreset::PaperArithmetic => 5e-5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DisplacementPreset::PaperProse => "paper-prose",
            DisplacementPreset::PaperArithmetic => "paper-arithmetic",
        }
    }

    pub fn warning(self) -> String {
        format!(
            "warning: displacement preset {} uses fraction {}; the published text says 0.05% (5e-4) \
             but only 0.005% (5e-5) reproduces its ~5500 t figure",
            self.name(),
            self.fraction()
        )
    }
}

impl FromStr for DisplacementPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-prose" => Ok(DisplacementPreset::PaperProse),
            "paper-arithmetic" => Ok(DisplacementPreset::PaperArithmetic),
            _ => Err(Error::usage(format!(
                "unknown displacement preset {s:?}; expected paper-prose or paper-arithmetic"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentSpec {
    pub grid_supply_points: u64,
    /// Hourly forecasts from 06:00 to 20:00.
    pub forecasts_per_day: u64,
    pub days_per_year: u64,
    pub carbon_intensity_kg_per_kwh: f64,
    pub device_power_kw: f64,
}

impl Default for DeploymentSpec {
    fn default() -> Self {
        DeploymentSpec {
            grid_supply_points: 330,
            forecasts_per_day: 14,
            days_per_year: 365,
            carbon_intensity_kg_per_kwh: 0.21,
            device_power_kw: PowerPreset::PaperImplied.kw(),
        }
    }
}

impl DeploymentSpec {
    pub fn with_power(power: PowerPreset) -> Self {
        DeploymentSpec {
            device_power_kw: power.kw(),
            ..DeploymentSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.grid_supply_points > 0
            && self.forecasts_per_day > 0
            && self.days_per_year > 0
            && self.carbon_intensity_kg_per_kwh > 0.0
            && self.device_power_kw > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::usage(format!("deployment fields must all be positive: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvertedSpec {
    pub population: f64,
    /// People whose annual consumption adds up to one GWh.
    pub persons_per_gwh: f64,
    pub solar_share: f64,
    pub solar_lifecycle_t_per_gwh: f64,
    /// Gas-reserve emissions relative to solar for the same energy.
    pub gas_multiplier: f64,
    pub displacement_fraction: f64,
}

impl Default for AvertedSpec {
    fn default() -> Self {
        AvertedSpec::with_displacement(DisplacementPreset::PaperArithmetic)
    }
}

impl AvertedSpec {
    pub fn with_displacement(preset: DisplacementPreset) -> Self {
        AvertedSpec {
            population: 67.22e6,
            persons_per_gwh: 150.0,
            solar_share: 0.02,
            solar_lifecycle_t_per_gwh: 5.0,
            gas_multiplier: 2450.0,
            displacement_fraction: preset.fraction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| (0.0..=1.0).contains(&v);
        let ok = frac(self.solar_share)
            && frac(self.displacement_fraction)
            && self.population >= 0.0
            && self.persons_per_gwh > 0.0
            && self.solar_lifecycle_t_per_gwh > 0.0
            && self.gas_multiplier > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::usage(format!("averted-emissions inputs out of range: {self:?}")))
        }
    }
}

pub fn forecasts_per_year(spec: &DeploymentSpec) -> u64 {
    spec.grid_supply_points * spec.forecasts_per_day * spec.days_per_year
}

/// Training time plus `n_forecasts` inferences, in hours.
pub fn total_hours(train_seconds: f64, inference_seconds: f64, n_forecasts: u64) -> f64 {
    (train_seconds + n_forecasts as f64 * inference_seconds) / 3600.0
}

/// Tonnes CO2-equivalent for `hours` of device time.
pub fn emissions_generated(hours: f64, spec: &DeploymentSpec) -> f64 {
    hours * spec.device_power_kw * spec.carbon_intensity_kg_per_kwh / 1000.0
}

/// Every intermediate of the averted-emissions chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvertedChain {
    pub national_gwh: f64,
    pub solar_gwh: f64,
    pub solar_tonnes: f64,
    pub gas_equivalent_tonnes: f64,
    pub averted_tonnes: f64,
}

pub fn emissions_averted(spec: &AvertedSpec) -> AvertedChain {
    let national_gwh = spec.population / spec.persons_per_gwh;
    let solar_gwh = national_gwh * spec.solar_share;
    let solar_tonnes = solar_gwh * spec.solar_lifecycle_t_per_gwh;
    let gas_equivalent_tonnes = solar_tonnes * spec.gas_multiplier;
    AvertedChain {
        national_gwh,
        solar_gwh,
        solar_tonnes,
        gas_equivalent_tonnes,
        averted_tonnes: gas_equivalent_tonnes * spec.displacement_fraction,
    }
}

/// Published per-model figures, for side-by-side comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PublishedRow {
    pub total_hours: f64,
    pub emissions_generated_tonnes: f64,
}

pub const CONV3D_PUBLISHED: PublishedRow = PublishedRow {
    total_hours: 75.0,
    emissions_generated_tonnes: 0.0108,
};
pub const CONVLSTM_PUBLISHED: PublishedRow = PublishedRow {
    total_hours: 1024.0,
    emissions_generated_tonnes: 0.152,
};

/// Published row for a model whose timings are exactly the reference ones.
pub fn published_row(name: &str, timings: &Timings) -> Option<PublishedRow> {
    match name {
        "conv3d" if *timings == CONV3D_REFERENCE => Some(CONV3D_PUBLISHED),
        "convlstm" if *timings == CONVLSTM_REFERENCE => Some(CONVLSTM_PUBLISHED),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCarbon {
    pub model: String,
    pub train_seconds: f64,
    pub inference_seconds_per_forecast: f64,
    pub total_hours: f64,
    pub emissions_generated_tonnes_co2eq: f64,
    pub published: Option<PublishedRow>,
    /// Computed minus published hours, as a percentage of published.
    pub hours_delta_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarbonReport {
    pub deployment: DeploymentSpec,
    pub averted_inputs: AvertedSpec,
    pub forecasts_per_year: u64,
    pub models: Vec<ModelCarbon>,
    pub national_consumption_gwh: f64,
    pub solar_generation_gwh: f64,
    pub solar_lifecycle_tonnes_co2eq: f64,
    pub gas_equivalent_tonnes_co2eq: f64,
    pub emissions_averted_tonnes_co2eq: f64,
    /// Averted over the largest generated figure; `None` when nothing was
    /// generated.
    pub net_benefit_ratio: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn carbon_report(
    timings: &[(String, Timings)],
    deployment: &DeploymentSpec,
    averted: &AvertedSpec,
) -> Result<CarbonReport> {
    if timings.is_empty() {
        return Err(Error::usage("carbon report needs at least one model's timings"));
    }
    deployment.validate()?;
    averted.validate()?;
    let n = forecasts_per_year(deployment);
    let mut warnings = Vec::new();
    let mut models = Vec::new();
    for (name, t) in timings {
        if !(t.train_seconds >= 0.0 && t.inference_seconds >= 0.0) {
            return Err(Error::usage(format!("{name}: timings must be nonnegative")));
        }
        let hours = total_hours(t.train_seconds, t.inference_seconds, n);
        let published = published_row(name, t);
        let hours_delta_percent =
            published.map(|p| 100.0 * (hours - p.total_hours) / p.total_hours);
        if let Some(d) = hours_delta_percent {
            if d.abs() > 1.0 {
                warnings.push(format!(
                    "note: {name} computed hours {hours:.1} differ from the published {} by {d:+.1}%",
                    published.map_or(0.0, |p| p.total_hours)
                ));
            }
        }
        models.push(ModelCarbon {
            model: name.clone(),
            train_seconds: t.train_seconds,
            inference_seconds_per_forecast: t.inference_seconds,
            total_hours: hours,
            emissions_generated_tonnes_co2eq: emissions_generated(hours, deployment),
            published,
            hours_delta_percent,
        });
    }
    for preset in [DisplacementPreset::PaperProse, DisplacementPreset::PaperArithmetic] {
        if averted.displacement_fraction == preset.fraction() {
            warnings.push(preset.warning());
        }
    }
    let chain = emissions_averted(averted);
    let worst = models
        .iter()
        .map(|m| m.emissions_generated_tonnes_co2eq)
        .fold(0.0, f64::max);
    Ok(CarbonReport {
        deployment: deployment.clone(),
        averted_inputs: averted.clone(),
        forecasts_per_year: n,
        models,
        national_consumption_gwh: chain.national_gwh,
        solar_generation_gwh: chain.solar_gwh,
        solar_lifecycle_tonnes_co2eq: chain.solar_tonnes,
        gas_equivalent_tonnes_co2eq: chain.gas_equivalent_tonnes,
        emissions_averted_tonnes_co2eq: chain.averted_tonnes,
        net_benefit_ratio: (worst > 0.0).then(|| chain.averted_tonnes / worst),
        warnings,
    })
}

impl CarbonReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::usage(format!("serialize report: {e}")))
    }

    pub fn from_json(text: &str, name: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::format(name, e.column() as u64, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        CarbonReport::from_json(&text, &path.display().to_string())
    }

    /// Rows in the order of the published table, then the averted chain.
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<58}", "");
        for m in &self.models {
            let _ = write!(out, " {:>12}", m.model);
        }
        out.push('\n');
        let row = |out: &mut String, label: &str, f: &dyn Fn(&ModelCarbon) -> String| {
            let _ = write!(out, "{label:<58}");
            for m in &self.models {
                let _ = write!(out, " {:>12}", f(m));
            }
            out.push('\n');
        };
        row(&mut out, "Time to train model (s)", &|m| format!("{}", m.train_seconds));
        row(&mut out, "Time for inference, one forecast (s)", &|m| {
            format!("{}", m.inference_seconds_per_forecast)
        });
        row(
            &mut out,
            &format!("Total time for year (training + {} inferences) (h)", self.forecasts_per_year),
            &|m| format!("{:.1}", m.total_hours),
        );
        row(&mut out, "  published (h)", &|m| {
            m.published.map_or("-".into(), |p| format!("{}", p.total_hours))
        });
        row(&mut out, "Emissions generated (t CO2eq)", &|m| {
            format!("{:.4}", m.emissions_generated_tonnes_co2eq)
        });
        row(&mut out, "  published (t CO2eq)", &|m| {
            m.published.map_or("-".into(), |p| format!("{}", p.emissions_generated_tonnes))
        });
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<58} {:>12}", "Forecasts per year", self.forecasts_per_year);
        let _ = writeln!(out, "{:<58} {:>12.0}", "National consumption (GWh/yr)", self.national_consumption_gwh);
        let _ = writeln!(out, "{:<58} {:>12.1}", "Solar generation (GWh/yr)", self.solar_generation_gwh);
        let _ = writeln!(out, "{:<58} {:>12.0}", "Solar lifecycle emissions (t CO2eq/yr)", self.solar_lifecycle_tonnes_co2eq);
        let _ = writeln!(out, "{:<58} {:>12.0}", "Gas-reserve equivalent (t CO2eq/yr)", self.gas_equivalent_tonnes_co2eq);
        let _ = writeln!(out, "{:<58} {:>12.0}", "Emissions averted (t CO2eq/yr)", self.emissions_averted_tonnes_co2eq);
        let ratio = self.net_benefit_ratio.map_or("-".into(), |r| format!("{r:.3e}"));
        let _ = writeln!(out, "{:<58} {:>12}", "Averted / generated", ratio);
        out
    }
}
