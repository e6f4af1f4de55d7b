//! Experiment scenarios read from TOML.

use crate::emission::PhotonKind;
use crate::error::{Error, Result};
use crate::polarization::Jones;
use crate::qd::{DetectorSpec, LaserPulseSpec, PhononEnvironment, PulseShape, QdParameters, Validate};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    RabiSweep,
    DetuningSweep,
    Tomography,
    Hbt,
    Lifetime,
    Spectrum,
    CircularSuppression,
    PolarizationScan,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::RabiSweep,
        Experiment::DetuningSweep,
        Experiment::Tomography,
        Experiment::Hbt,
        Experiment::Lifetime,
        Experiment::Spectrum,
        Experiment::CircularSuppression,
        Experiment::PolarizationScan,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::RabiSweep => "rabi_sweep",
            Experiment::DetuningSweep => "detuning_sweep",
            Experiment::Tomography => "tomography",
            Experiment::Hbt => "hbt",
            Experiment::Lifetime => "lifetime",
            Experiment::Spectrum => "spectrum",
            Experiment::CircularSuppression => "circular_suppression",
            Experiment::PolarizationScan => "polarization_scan",
        }
    }

    /// Acquisition time used when the scenario does not set one.
    pub fn default_duration_s(&self) -> f64 {
        match self {
            Experiment::Hbt => 600.0,
            Experiment::Lifetime => 60.0,
            Experiment::Tomography => 600.0,
            _ => 1.0,
        }
    }
}

impl std::str::FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Invalid(vec![format!("unknown experiment {s:?}")]))
    }
}

/// Laser section; unset fields take the two-photon-resonant defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaserConfig {
    /// Absolute photon energy; overrides `detuning_mev`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_energy_mev: Option<f64>,
    /// Offset from the two-photon resonance.
    #[serde(default)]
    pub detuning_mev: f64,
    #[serde(default = "default_fwhm")]
    pub fwhm_ps: f64,
    /// One-photon pulse area; the π-equivalent area when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulse_area_rad: Option<f64>,
    #[serde(default = "Jones::horizontal")]
    pub polarization: Jones,
    #[serde(default = "default_rep_rate")]
    pub rep_rate_mhz: f64,
}

fn default_fwhm() -> f64 {
    10.0
}

fn default_rep_rate() -> f64 {
    80.0
}

impl Default for LaserConfig {
    fn default() -> Self {
        Self {
            center_energy_mev: None,
            detuning_mev: 0.0,
            fwhm_ps: default_fwhm(),
            pulse_area_rad: None,
            polarization: Jones::horizontal(),
            rep_rate_mhz: default_rep_rate(),
        }
    }
}

impl LaserConfig {
    /// Pulse with the given area, at the configured energy.
    pub fn pulse(&self, qd: &QdParameters, area_rad: f64) -> LaserPulseSpec {
        LaserPulseSpec {
            center_energy_mev: self
                .center_energy_mev
                .unwrap_or(qd.tpe_resonance_mev() + self.detuning_mev),
            fwhm_ps: self.fwhm_ps,
            shape: PulseShape::Gaussian,
            pulse_area_rad: area_rad,
            polarization: self.polarization,
            rep_rate_mhz: self.rep_rate_mhz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RabiSettings {
    pub points: usize,
    /// Upper end of the sweep as an effective two-photon area, in units of π.
    pub max_two_photon_area_pi: f64,
}

impl Default for RabiSettings {
    fn default() -> Self {
        Self {
            points: 81,
            max_two_photon_area_pi: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetuningSettings {
    pub min_mev: f64,
    pub max_mev: f64,
    pub points: usize,
}

impl Default for DetuningSettings {
    fn default() -> Self {
        Self {
            min_mev: -0.5,
            max_mev: 0.5,
            points: 41,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TomographySource {
    /// Pair-level Monte Carlo: each simulated cascade pair is analyzed
    /// in one setting.
    Pairs,
    /// Full time-tag acquisition per setting, then correlation.
    TimeTags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TomographySettings {
    /// Measured counts table (`setting,count,duration_s`); analysis only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts_file: Option<PathBuf>,
    pub source: TomographySource,
    /// Cascade pairs per setting in `pairs` mode.
    pub pairs_per_setting: u64,
    pub window_ns: f64,
}

impl Default for TomographySettings {
    fn default() -> Self {
        Self {
            counts_file: None,
            source: TomographySource::Pairs,
            pairs_per_setting: 1_000_000 / 12,
            window_ns: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationSettings {
    pub bin_width_ps: u64,
    pub range_ns: f64,
    pub window_ns: f64,
    pub side_peaks: usize,
}

impl Default for CorrelationSettings {
    fn default() -> Self {
        Self {
            bin_width_ps: crate::correlator::DEFAULT_BIN_WIDTH_PS,
            range_ns: crate::correlator::DEFAULT_RANGE_NS,
            window_ns: crate::correlator::DEFAULT_WINDOW_NS,
            side_peaks: crate::correlator::DEFAULT_SIDE_PEAKS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HbtSettings {
    pub line: PhotonKind,
}

impl Default for HbtSettings {
    fn default() -> Self {
        Self {
            line: PhotonKind::Exciton,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolarizationScanSettings {
    pub step_deg: f64,
    /// Emission cycles sampled for the scan.
    pub cycles: u64,
}

impl Default for PolarizationScanSettings {
    fn default() -> Self {
        Self {
            step_deg: 5.0,
            cycles: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSettings {
    pub step_mev: f64,
}

impl Default for SpectrumSettings {
    fn default() -> Self {
        Self { step_mev: 0.005 }
    }
}

/// Emission options shared by the Monte Carlo experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EmissionSettings {
    #[serde(default)]
    pub phase_offset_rad: f64,
    #[serde(default)]
    pub allow_reexcitation: bool,
}

fn default_detector() -> DetectorSpec {
    DetectorSpec::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub experiment: Experiment,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Also write the raw time tags (binary) for time-tag experiments.
    #[serde(default)]
    pub save_time_tags: bool,
    #[serde(default = "QdParameters::representative")]
    pub qd: QdParameters,
    #[serde(default)]
    pub laser: LaserConfig,
    #[serde(default = "PhononEnvironment::calibrated")]
    pub phonon: PhononEnvironment,
    /// Overall collection and detection efficiency per channel.
    #[serde(default = "default_detector")]
    pub detector: DetectorSpec,
    #[serde(default)]
    pub emission: EmissionSettings,
    #[serde(default)]
    pub correlation: CorrelationSettings,
    #[serde(default)]
    pub rabi: RabiSettings,
    #[serde(default)]
    pub detuning: DetuningSettings,
    #[serde(default)]
    pub tomography: TomographySettings,
    #[serde(default)]
    pub hbt: HbtSettings,
    #[serde(default)]
    pub polarization_scan: PolarizationScanSettings,
    #[serde(default)]
    pub spectrum: SpectrumSettings,
}

impl Scenario {
    /// Desk-scale scenario for `experiment` on the calibrated dot.
    pub fn new(experiment: Experiment, seed: u64) -> Self {
        let mut s = Self {
            experiment,
            seed,
            duration_s: None,
            output_dir: None,
            save_time_tags: false,
            qd: QdParameters::representative(),
            laser: LaserConfig::default(),
            phonon: PhononEnvironment::calibrated(),
            detector: default_detector(),
            emission: EmissionSettings::default(),
            correlation: CorrelationSettings::default(),
            rabi: RabiSettings::default(),
            detuning: DetuningSettings::default(),
            tomography: TomographySettings::default(),
            hbt: HbtSettings::default(),
            polarization_scan: PolarizationScanSettings::default(),
            spectrum: SpectrumSettings::default(),
        };
        match experiment {
            Experiment::PolarizationScan => {
                s.qd.fss_uev = 0.0;
                s.laser.polarization = Jones::linear(30f64.to_radians());
            }
            Experiment::Lifetime => s.detector.efficiency = 5e-3,
            Experiment::CircularSuppression => s.laser.polarization = Jones::right(),
            _ => {}
        }
        s
    }

    pub fn duration(&self) -> f64 {
        self.duration_s.unwrap_or(self.experiment.default_duration_s())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Invalid(vec![e.to_string()]))?;
        s.check()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Every problem with the scenario, before any computation.
    pub fn problems(&self) -> Vec<String> {
        let mut p: Vec<String> = Vec::new();
        p.extend(self.qd.validate().iter().map(|v| format!("qd.{v}")));
        p.extend(self.phonon.validate().iter().map(|v| format!("phonon.{v}")));
        p.extend(self.detector.validate().iter().map(|v| format!("detector.{v}")));
        p.extend(
            self.laser
                .pulse(&self.qd, self.laser.pulse_area_rad.unwrap_or(0.0))
                .validate()
                .iter()
                .map(|v| format!("laser.{v}")),
        );
        let d = self.duration();
        if !(d > 0.0 && d.is_finite()) {
            p.push(format!("duration_s must be > 0 (got {d})"));
        }
        if self.rabi.points < 3 || !(self.rabi.max_two_photon_area_pi > 0.0) {
            p.push("rabi needs points >= 3 and max_two_photon_area_pi > 0".into());
        }
        if self.detuning.points < 2 || !(self.detuning.max_mev > self.detuning.min_mev) {
            p.push("detuning needs points >= 2 and max_mev > min_mev".into());
        }
        if self.correlation.bin_width_ps == 0 || !(self.correlation.window_ns > 0.0) || !(self.correlation.range_ns > 0.0) {
            p.push("correlation needs bin_width_ps > 0, window_ns > 0 and range_ns > 0".into());
        }
        if self.tomography.pairs_per_setting == 0 && self.tomography.counts_file.is_none() {
            p.push("tomography.pairs_per_setting must be > 0".into());
        }
        if !(self.polarization_scan.step_deg > 0.0) || self.polarization_scan.cycles == 0 {
            p.push("polarization_scan needs step_deg > 0 and cycles > 0".into());
        }
        if !(self.spectrum.step_mev > 0.0) {
            p.push("spectrum.step_mev must be > 0".into());
        }
        p
    }

    pub fn check(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(p))
        }
    }
}
