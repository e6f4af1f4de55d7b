use crate::dynamics::ChannelSplit;
use crate::error::{Error, Result};
use crate::qd::QdParameters;
use crate::units::FWHM_PER_SIGMA;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralLine {
    pub energy_mev: f64,
    pub intensity: f64,
    pub fwhm_mev: f64,
}

/// Uniform energy bins; `start_mev` is the center of the first bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyGrid {
    pub start_mev: f64,
    pub step_mev: f64,
    pub len: usize,
}

impl EnergyGrid {
    /// Grid spanning every line ± `margin` linewidths.
    pub fn covering(lines: &[SpectralLine], margin: f64, step_mev: f64) -> Self {
        let lo = lines
            .iter()
            .map(|l| l.energy_mev - margin * l.fwhm_mev)
            .fold(f64::INFINITY, f64::min);
        let hi = lines
            .iter()
            .map(|l| l.energy_mev + margin * l.fwhm_mev)
            .fold(f64::NEG_INFINITY, f64::max);
        let len = ((hi - lo) / step_mev).ceil() as usize + 1;
        Self {
            start_mev: lo,
            step_mev,
            len,
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.len).map(|k| self.start_mev + k as f64 * self.step_mev).collect()
    }

    fn lower_edge(&self) -> f64 {
        self.start_mev - 0.5 * self.step_mev
    }

    fn upper_edge(&self) -> f64 {
        self.start_mev + (self.len as f64 - 0.5) * self.step_mev
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub energy_mev: Vec<f64>,
    pub intensity: Vec<f64>,
}

impl Spectrum {
    pub fn total(&self) -> f64 {
        self.intensity.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("energy_mev,intensity\n");
        for (e, i) in self.energy_mev.iter().zip(&self.intensity) {
            let _ = writeln!(s, "{e:.6},{i:.8e}");
        }
        s
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Gaussian lines binned onto `grid`: each bin holds the line weight that
/// falls inside it, so a line's bins sum to its intensity.
pub fn synth_spectrum(lines: &[SpectralLine], grid: &EnergyGrid) -> Result<Spectrum> {
    if !(grid.step_mev > 0.0) || grid.len == 0 {
        return Err(Error::Invalid(vec!["energy grid must have positive step and length".into()]));
    }
    for l in lines {
        if !(l.fwhm_mev > 0.0) || l.intensity < 0.0 {
            return Err(Error::Invalid(vec![format!(
                "line at {} meV needs fwhm > 0 and intensity >= 0",
                l.energy_mev
            )]));
        }
        if l.energy_mev - 5.0 * l.fwhm_mev < grid.lower_edge() || l.energy_mev + 5.0 * l.fwhm_mev > grid.upper_edge() {
            return Err(Error::GridCoverage {
                energy_mev: l.energy_mev,
            });
        }
    }
    let energy = grid.centers();
    let mut intensity = vec![0.0; grid.len];
    for l in lines {
        let sigma = l.fwhm_mev / FWHM_PER_SIGMA;
        for (k, e) in energy.iter().enumerate() {
            let a = (e - 0.5 * grid.step_mev - l.energy_mev) / sigma;
            let b = (e + 0.5 * grid.step_mev - l.energy_mev) / sigma;
            intensity[k] += l.intensity * (normal_cdf(b) - normal_cdf(a));
        }
    }
    Ok(Spectrum {
        energy_mev: energy,
        intensity,
    })
}

/// Exciton and biexciton emission lines for a preparation split. Every
/// prepared biexciton yields one photon on each line; phonon-fed excitons
/// add to the exciton line only.
pub fn cascade_lines(qd: &QdParameters, split: &ChannelSplit) -> [SpectralLine; 2] {
    [
        SpectralLine {
            energy_mev: qd.exciton_energy_mev,
            intensity: split.xx_total() + split.x_phonon,
            fwhm_mev: qd.exciton_linewidth_uev * 1e-3,
        },
        SpectralLine {
            energy_mev: qd.biexciton_transition_energy_mev,
            intensity: split.xx_total(),
            fwhm_mev: qd.biexciton_linewidth_uev * 1e-3,
        },
    ]
}
