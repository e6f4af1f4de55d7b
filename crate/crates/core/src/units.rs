//! Physical constants and the unit conversions used throughout the crate.
//!
//! Energies are carried in meV (fine-structure splitting in µeV), times in
//! ns for lifetimes and ps for pulses and time tags. Every conversion
//! between energy and angular frequency goes through [`HBAR_MEV_NS`].

/// Reduced Planck constant in meV·ns.
pub const HBAR_MEV_NS: f64 = 6.582119569e-4;

/// Reduced Planck constant in meV·ps.
pub const HBAR_MEV_PS: f64 = HBAR_MEV_NS * 1.0e3;

/// Boltzmann constant in meV/K.
pub const KB_MEV_PER_K: f64 = 8.617333262e-2;

/// FWHM of a Gaussian divided by its standard deviation, 2√(2 ln 2).
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Angular frequency (rad/ps) of an energy in meV.
pub fn mev_to_rad_per_ps(energy_mev: f64) -> f64 {
    energy_mev / HBAR_MEV_PS
}

/// Angular frequency (rad/ns) of an energy in µeV.
pub fn uev_to_rad_per_ns(energy_uev: f64) -> f64 {
    energy_uev * 1.0e-3 / HBAR_MEV_NS
}

/// Thermal energy k_B·T in meV.
pub fn thermal_energy_mev(temperature_k: f64) -> f64 {
    KB_MEV_PER_K * temperature_k
}

pub fn ns_to_ps(t_ns: f64) -> f64 {
    t_ns * 1.0e3
}

pub fn ps_to_ns(t_ps: f64) -> f64 {
    t_ps * 1.0e-3
}

/// Repetition period in ps for a repetition rate in MHz.
pub fn rep_period_ps(rep_rate_mhz: f64) -> f64 {
    1.0e6 / rep_rate_mhz
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thermal_energy_at_8k() {
        assert!((thermal_energy_mev(8.0) - 0.6894).abs() < 1e-4);
    }

    #[test]
    fn fss_phase_rate() {
        // 0.4 µeV over 0.78 ns accumulates 0.474 rad
        let phase = uev_to_rad_per_ns(0.4) * 0.78;
        assert!((phase - 0.474).abs() < 1e-3, "{phase}");
    }

    #[test]
    fn rep_period_80mhz() {
        assert_eq!(rep_period_ps(80.0), 12_500.0);
    }
}
