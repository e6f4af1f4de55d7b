//! Quantum-dot, laser, phonon and detector parameters, their invariants,
//! and the resonance algebra of two-photon excitation.

use crate::error::{Error, Result};
use crate::polarization::Jones;
use crate::units::FWHM_PER_SIGMA;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Binding energy E_X − E_XX of the biexciton (meV). Negative for an
/// antibinding biexciton.
pub fn binding_energy(exciton_mev: f64, biexciton_mev: f64) -> f64 {
    exciton_mev - biexciton_mev
}

/// Laser energy satisfying 2·E_laser = E_X + E_XX.
pub fn tpe_resonance(exciton_mev: f64, biexciton_mev: f64) -> f64 {
    0.5 * (exciton_mev + biexciton_mev)
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.field, self.message)
    }
}

/// Parameter sets that carry invariants.
pub trait Validate {
    /// Every violated invariant. Empty means valid.
    fn validate(&self) -> Vec<Violation>;

    fn check(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v.iter().map(ToString::to_string).collect()))
        }
    }
}

fn positive(out: &mut Vec<Violation>, field: &'static str, x: f64) {
    if !(x > 0.0) || x.is_nan() {
        out.push(Violation {
            field,
            message: format!("must be > 0 (got {x})"),
        });
    }
}

fn finite_positive(out: &mut Vec<Violation>, field: &'static str, x: f64) {
    if !x.is_finite() {
        out.push(Violation {
            field,
            message: format!("must be finite (got {x})"),
        });
    } else {
        positive(out, field, x);
    }
}

fn non_negative(out: &mut Vec<Violation>, field: &'static str, x: f64) {
    if !(x >= 0.0) || !x.is_finite() {
        out.push(Violation {
            field,
            message: format!("must be finite and >= 0 (got {x})"),
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QdParameters {
    pub exciton_energy_mev: f64,
    pub biexciton_transition_energy_mev: f64,
    pub fss_uev: f64,
    pub exciton_lifetime_ns: f64,
    pub biexciton_lifetime_ns: f64,
    /// Cross-dephasing time; `inf` disables cross-dephasing.
    pub cross_dephasing_time_ns: f64,
    pub exciton_linewidth_uev: f64,
    pub biexciton_linewidth_uev: f64,
}

impl QdParameters {
    /// Antibinding dot with ΔE_B = −2.5 meV and the measured lifetimes and
    /// linewidths of the representative dot. Absolute energies are arbitrary.
    pub fn representative() -> Self {
        Self {
            exciton_energy_mev: 1400.0,
            biexciton_transition_energy_mev: 1402.5,
            fss_uev: 0.4,
            exciton_lifetime_ns: 0.78,
            biexciton_lifetime_ns: 0.44,
            cross_dephasing_time_ns: f64::INFINITY,
            exciton_linewidth_uev: 160.0,
            biexciton_linewidth_uev: 117.0,
        }
    }

    pub fn binding_energy_mev(&self) -> f64 {
        binding_energy(self.exciton_energy_mev, self.biexciton_transition_energy_mev)
    }

    pub fn tpe_resonance_mev(&self) -> f64 {
        tpe_resonance(self.exciton_energy_mev, self.biexciton_transition_energy_mev)
    }
}

impl Validate for QdParameters {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        finite_positive(&mut v, "exciton_energy", self.exciton_energy_mev);
        finite_positive(&mut v, "biexciton_transition_energy", self.biexciton_transition_energy_mev);
        // zero splitting is the symmetric-dot limit
        non_negative(&mut v, "fss", self.fss_uev);
        finite_positive(&mut v, "exciton_lifetime", self.exciton_lifetime_ns);
        finite_positive(&mut v, "biexciton_lifetime", self.biexciton_lifetime_ns);
        positive(&mut v, "cross_dephasing_time", self.cross_dephasing_time_ns);
        finite_positive(&mut v, "exciton_linewidth", self.exciton_linewidth_uev);
        finite_positive(&mut v, "biexciton_linewidth", self.biexciton_linewidth_uev);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PulseShape {
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaserPulseSpec {
    pub center_energy_mev: f64,
    pub fwhm_ps: f64,
    #[serde(default)]
    pub shape: PulseShape,
    pub pulse_area_rad: f64,
    pub polarization: Jones,
    pub rep_rate_mhz: f64,
}

impl LaserPulseSpec {
    /// 10 ps horizontally polarized pulse at 80 MHz, tuned to the
    /// two-photon resonance of `qd`.
    pub fn tpe(qd: &QdParameters, pulse_area_rad: f64) -> Self {
        Self {
            center_energy_mev: qd.tpe_resonance_mev(),
            fwhm_ps: 10.0,
            shape: PulseShape::Gaussian,
            pulse_area_rad,
            polarization: Jones::horizontal(),
            rep_rate_mhz: 80.0,
        }
    }

    pub fn sigma_ps(&self) -> f64 {
        self.fwhm_ps / FWHM_PER_SIGMA
    }

    pub fn with_area(&self, pulse_area_rad: f64) -> Self {
        Self {
            pulse_area_rad,
            ..self.clone()
        }
    }

    pub fn with_center_energy(&self, center_energy_mev: f64) -> Self {
        Self {
            center_energy_mev,
            ..self.clone()
        }
    }

    pub fn with_polarization(&self, polarization: Jones) -> Self {
        Self {
            polarization,
            ..self.clone()
        }
    }
}

impl Validate for LaserPulseSpec {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        finite_positive(&mut v, "center_energy", self.center_energy_mev);
        finite_positive(&mut v, "fwhm", self.fwhm_ps);
        non_negative(&mut v, "pulse_area", self.pulse_area_rad);
        finite_positive(&mut v, "rep_rate", self.rep_rate_mhz);
        let n = self.polarization.norm_sqr();
        if !((n - 1.0).abs() <= 1e-12) {
            v.push(Violation {
                field: "polarization",
                message: format!("norm |e_H|^2 + |e_V|^2 must be 1 (got {n})"),
            });
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhononEnvironment {
    pub temperature_k: f64,
    /// Coupling α of the rate model, in ps/meV³.
    pub coupling: f64,
    pub cutoff_mev: f64,
    /// Constant κ (ps) of the drive-induced pure dephasing rate κ·Ω(t)².
    #[serde(default)]
    pub drive_dephasing_ps: f64,
}

impl PhononEnvironment {
    /// Coupling-free bath at 8 K.
    pub fn decoupled() -> Self {
        Self {
            temperature_k: 8.0,
            coupling: 0.0,
            cutoff_mev: 1.0,
            drive_dephasing_ps: 0.0,
        }
    }

    /// Bath calibrated so the resonant π pulse on the representative dot
    /// leaves 0.65 of the population in the biexciton, the rest going
    /// mostly to phonon-fed excitons. Reproduced by
    /// [`crate::dynamics::calibrate_coupling`] with the dephasing constant
    /// held at its calibrated value.
    pub fn calibrated() -> Self {
        Self {
            temperature_k: 8.0,
            coupling: CALIBRATED_COUPLING,
            cutoff_mev: 1.0,
            drive_dephasing_ps: CALIBRATED_DRIVE_DEPHASING_PS,
        }
    }
}

pub const CALIBRATED_COUPLING: f64 = 0.1586;
pub const CALIBRATED_DRIVE_DEPHASING_PS: f64 = 0.02;

impl Validate for PhononEnvironment {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        non_negative(&mut v, "temperature", self.temperature_k);
        non_negative(&mut v, "coupling", self.coupling);
        finite_positive(&mut v, "cutoff", self.cutoff_mev);
        non_negative(&mut v, "drive_dephasing", self.drive_dephasing_ps);
        v
    }
}

/// Timing response of a detector channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum IrfKernel {
    Gaussian {
        sigma_ps: f64,
    },
    /// Weights on a uniform grid; `origin` is the index of zero delay.
    Tabulated {
        bin_width_ps: f64,
        origin: usize,
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSpec {
    pub irf: IrfKernel,
    pub dark_rate_hz: f64,
    pub efficiency: f64,
    pub dead_time_ns: f64,
}

impl DetectorSpec {
    /// Noise-free, jitter-free unit-efficiency detector.
    pub fn ideal() -> Self {
        Self {
            irf: IrfKernel::Gaussian { sigma_ps: 0.0 },
            dark_rate_hz: 0.0,
            efficiency: 1.0,
            dead_time_ns: 0.0,
        }
    }

    /// Avalanche photodiode with 40 dark counts per second.
    pub fn spad() -> Self {
        Self {
            irf: IrfKernel::Gaussian { sigma_ps: 30.0 },
            dark_rate_hz: 40.0,
            efficiency: 0.1,
            dead_time_ns: 22.0,
        }
    }
}

impl Validate for DetectorSpec {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.efficiency) {
            v.push(Violation {
                field: "efficiency",
                message: format!("must lie in [0, 1] (got {})", self.efficiency),
            });
        }
        non_negative(&mut v, "dark_rate", self.dark_rate_hz);
        non_negative(&mut v, "dead_time", self.dead_time_ns);
        match &self.irf {
            IrfKernel::Gaussian { sigma_ps } => non_negative(&mut v, "irf_kernel", *sigma_ps),
            IrfKernel::Tabulated {
                bin_width_ps,
                origin,
                weights,
            } => {
                finite_positive(&mut v, "irf_kernel", *bin_width_ps);
                let sum: f64 = weights.iter().sum();
                if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    v.push(Violation {
                        field: "irf_kernel",
                        message: format!("weights must be >= 0 and sum to 1 (sum {sum})"),
                    });
                }
                if *origin >= weights.len() {
                    v.push(Violation {
                        field: "irf_kernel",
                        message: format!("origin {origin} outside {} weights", weights.len()),
                    });
                }
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64 as C64;
    use proptest::prelude::*;

    #[test]
    fn antibinding_representative() {
        assert!((binding_energy(1400.0, 1402.5) + 2.5).abs() < 1e-12);
        let r = tpe_resonance(1400.0, 1402.5);
        assert!((r - 1401.25).abs() < 1e-12);
        assert!((r - 1400.0 - 1.25).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_binding() {
        assert_eq!(binding_energy(1400.0, 1400.0), 0.0);
        assert_eq!(tpe_resonance(1400.0, 1400.0), 1400.0);
        assert!((binding_energy(1401.0, 1400.0) - 1.0).abs() < 1e-12);
        assert!((tpe_resonance(1401.0, 1400.0) - 1401.0 + 0.5).abs() < 1e-12);
    }

    #[test]
    fn representative_dot_is_valid() {
        assert!(QdParameters::representative().validate().is_empty());
        let qd = QdParameters::representative();
        assert!(LaserPulseSpec::tpe(&qd, 1.0).validate().is_empty());
        assert!(PhononEnvironment::calibrated().validate().is_empty());
        assert!(DetectorSpec::spad().validate().is_empty());
    }

    #[test]
    fn zero_exciton_lifetime_reported() {
        let qd = QdParameters {
            exciton_lifetime_ns: 0.0,
            ..QdParameters::representative()
        };
        let errs = qd.validate();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].to_string().starts_with("exciton_lifetime must be > 0"));
    }

    #[test]
    fn unnormalized_polarization_reported() {
        let qd = QdParameters::representative();
        let mut laser = LaserPulseSpec::tpe(&qd, 1.0);
        laser.polarization = Jones::new(C64::new(1.0, 0.0), C64::new(1.0, 0.0));
        let errs = laser.validate();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].to_string().contains("polarization norm"));
    }

    #[test]
    fn every_violation_listed() {
        let d = DetectorSpec {
            irf: IrfKernel::Tabulated {
                bin_width_ps: 10.0,
                origin: 5,
                weights: vec![0.5, 0.4],
            },
            dark_rate_hz: -1.0,
            efficiency: 1.5,
            dead_time_ns: 0.0,
        };
        let fields: Vec<_> = d.validate().iter().map(|v| v.field).collect();
        assert_eq!(fields, ["efficiency", "dark_rate", "irf_kernel", "irf_kernel"]);
    }

    #[test]
    fn infinite_cross_dephasing_allowed() {
        let qd = QdParameters::representative();
        assert!(qd.cross_dephasing_time_ns.is_infinite());
        assert!(qd.check().is_ok());
    }

    proptest! {
        #[test]
        fn resonance_identity(ex in -1e4f64..1e4, exx in -1e4f64..1e4) {
            let lhs = tpe_resonance(ex, exx) - ex;
            let rhs = -binding_energy(ex, exx) / 2.0;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + ex.abs().max(exx.abs())));
        }

        #[test]
        fn binding_antisymmetric(a in -1e4f64..1e4, b in -1e4f64..1e4) {
            prop_assert_eq!(binding_energy(a, b), -binding_energy(b, a));
        }

        #[test]
        fn validate_is_total(e in proptest::num::f64::ANY, t in proptest::num::f64::ANY, w in proptest::num::f64::ANY) {
            let qd = QdParameters { exciton_energy_mev: e, exciton_lifetime_ns: t, exciton_linewidth_uev: w,
                ..QdParameters::representative() };
            let _ = qd.validate();
            let det = DetectorSpec { efficiency: e, dark_rate_hz: t, dead_time_ns: w, ..DetectorSpec::ideal() };
            let _ = det.validate();
        }
    }
}

impl Default for QdParameters {
    fn default() -> Self {
        Self::representative()
    }
}

impl Default for PhononEnvironment {
    fn default() -> Self {
        Self::calibrated()
    }
}

/// 30 ps Gaussian jitter, 40 dark counts/s, 5e-4 end-to-end efficiency, 22 ns dead time.
impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            irf: IrfKernel::Gaussian { sigma_ps: 30.0 },
            dark_rate_hz: 40.0,
            efficiency: 5e-4,
            dead_time_ns: 22.0,
        }
    }
}
