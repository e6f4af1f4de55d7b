//! State preparation by a single laser pulse: coherent two-photon
//! excitation of the biexciton competing with phonon-assisted pumping.

mod master;

pub use master::phonon_rate;

use crate::error::{Error, Result};
use crate::qd::{LaserPulseSpec, PhononEnvironment, QdParameters, Validate};
use crate::units::mev_to_rad_per_ps;
use master::{flux, Ladder, State, StepHalving};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;

/// Pulse area ∫Ω(t)dt of the Gaussian envelope with peak Rabi frequency
/// `peak_rabi` (rad/ps).
pub fn pulse_area(pulse: &LaserPulseSpec, peak_rabi: f64) -> f64 {
    peak_rabi * pulse.sigma_ps() * (2.0 * PI).sqrt()
}

/// Inverse of [`pulse_area`].
pub fn peak_rabi(pulse: &LaserPulseSpec) -> f64 {
    pulse.pulse_area_rad / (pulse.sigma_ps() * (2.0 * PI).sqrt())
}

/// Effective two-photon area ∫Ω²/(2|δ₁|)dt after adiabatic elimination of
/// the exciton, with δ₁ the laser detuning from the exciton.
pub fn two_photon_area(qd: &QdParameters, pulse: &LaserPulseSpec) -> f64 {
    let d1 = mev_to_rad_per_ps(pulse.center_energy_mev - qd.exciton_energy_mev).abs();
    let o = peak_rabi(pulse);
    pulse.polarization.two_photon_factor() * o * o * pulse.sigma_ps() * PI.sqrt() / (2.0 * d1)
}

/// One-photon pulse area whose effective two-photon area equals
/// `two_photon_area_rad`.
pub fn area_for_two_photon_area(qd: &QdParameters, pulse: &LaserPulseSpec, two_photon_area_rad: f64) -> f64 {
    let reference = two_photon_area(qd, &pulse.with_area(1.0));
    (two_photon_area_rad / reference).sqrt()
}

/// End-of-pulse population attributed to its source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSplit {
    /// Biexciton prepared by the coherent two-photon drive.
    pub xx_coherent: f64,
    /// Exciton pumped by phonon-assisted absorption, not followed by a cascade.
    pub x_phonon: f64,
    /// Biexciton reached by phonon-assisted pumping out of the exciton.
    pub xx_phonon: f64,
}

impl ChannelSplit {
    pub fn new(xx_coherent: f64, x_phonon: f64, xx_phonon: f64) -> Self {
        Self {
            xx_coherent,
            x_phonon,
            xx_phonon,
        }
    }

    /// Probability that the pulse prepares a biexciton by either route.
    pub fn xx_total(&self) -> f64 {
        self.xx_coherent + self.xx_phonon
    }

    pub fn total(&self) -> f64 {
        self.xx_total() + self.x_phonon
    }

    pub fn is_valid(&self) -> bool {
        let parts = [self.xx_coherent, self.x_phonon, self.xx_phonon];
        parts.iter().all(|p| (-1e-9..=1.0 + 1e-9).contains(p)) && self.total() <= 1.0 + 1e-6
    }

    /// Attribution from the end-of-window state. Every excitation that
    /// reached XX counts as a biexciton (including those that already
    /// decayed); the rest of the excitations are exciton-only.
    fn from_state(s: &State) -> Self {
        let [pg, _, pxx] = s.populations();
        let prepared_xx = (pxx + s.flux[flux::DECAY_XX]).max(0.0);
        let coherent = s.flux[flux::COHERENT_XX].clamp(0.0, prepared_xx);
        let xx_phonon = prepared_xx - coherent;
        let excited = 1.0 - pg + s.flux[flux::DECAY_X];
        let x_phonon = (excited - prepared_xx).max(0.0);
        Self::new(coherent, x_phonon, xx_phonon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTrajectory {
    pub time_grid_ps: Vec<f64>,
    /// (P_g, P_X, P_XX) at each grid point.
    pub occupations: Vec<[f64; 3]>,
    pub channel_split: ChannelSplit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    /// Output grid spacing; defaults to fwhm/50.
    pub grid_step_ps: Option<f64>,
    /// Extra integration time after the +4σ edge of the pulse.
    pub post_pulse_ps: f64,
    pub radiative_decay: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            grid_step_ps: None,
            post_pulse_ps: 0.0,
            radiative_decay: true,
        }
    }
}

impl EvolveOptions {
    /// No radiative decay; combine with a decoupled bath for the ideal limit.
    pub fn ideal() -> Self {
        Self {
            radiative_decay: false,
            ..Self::default()
        }
    }
}

/// Integrates the driven ladder master equation over [−4σ, 4σ + post].
pub fn evolve(
    qd: &QdParameters,
    pulse: &LaserPulseSpec,
    env: &PhononEnvironment,
    opts: &EvolveOptions,
) -> Result<LevelTrajectory> {
    let mut problems: Vec<String> = Vec::new();
    for v in qd.validate().iter().chain(&pulse.validate()).chain(&env.validate()) {
        problems.push(v.to_string());
    }
    let max_step = pulse.fwhm_ps / 50.0;
    let step = opts.grid_step_ps.unwrap_or(max_step);
    if !(step > 0.0 && step <= max_step * (1.0 + 1e-12)) {
        problems.push(format!("grid_step must lie in (0, fwhm/50 = {max_step}] ps (got {step})"));
    }
    if !(opts.post_pulse_ps >= 0.0) {
        problems.push(format!("post_pulse must be >= 0 (got {})", opts.post_pulse_ps));
    }
    if !problems.is_empty() {
        return Err(Error::Invalid(problems));
    }

    let mut ladder = Ladder::new(qd, pulse, env);
    if !opts.radiative_decay {
        ladder = ladder.without_decay();
    }
    let t0 = -4.0 * ladder.sigma_ps();
    let t1 = 4.0 * ladder.sigma_ps() + opts.post_pulse_ps;
    let n = ((t1 - t0) / step).ceil() as usize;
    let h = (t1 - t0) / n as f64;
    let grid: Vec<f64> = (0..=n).map(|k| t0 + k as f64 * h).collect();

    let states = StepHalving::default().run(&ladder, &grid)?;
    let channel_split = ChannelSplit::from_state(states.last().expect("grid has at least two points"));
    Ok(LevelTrajectory {
        time_grid_ps: grid,
        occupations: states.iter().map(State::populations).collect(),
        channel_split,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// One-photon pulse areas (rad).
    PulseArea(Vec<f64>),
    /// Laser detuning from the two-photon resonance (meV).
    LaserDetuning(Vec<f64>),
}

impl SweepAxis {
    pub fn values(&self) -> &[f64] {
        match self {
            SweepAxis::PulseArea(v) | SweepAxis::LaserDetuning(v) => v,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SweepAxis::PulseArea(_) => "pulse_area_rad",
            SweepAxis::LaserDetuning(_) => "laser_detuning_mev",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub p_xx: Vec<f64>,
    pub p_x_total: Vec<f64>,
    pub p_x_minus_xx: Vec<f64>,
    pub splits: Vec<ChannelSplit>,
}

impl SweepResult {
    /// Plot-ready CSV, one row per axis point, 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},P_XX,P_X_total,P_X_minus_XX\n", self.axis.label());
        for (i, a) in self.axis.values().iter().enumerate() {
            let _ = writeln!(
                out,
                "{:.8e},{:.8e},{:.8e},{:.8e}",
                a, self.p_xx[i], self.p_x_total[i], self.p_x_minus_xx[i]
            );
        }
        out
    }
}

/// One [`evolve`] per axis point. Points run in parallel; the output is
/// identical to serial evaluation.
pub fn sweep(
    qd: &QdParameters,
    pulse_template: &LaserPulseSpec,
    env: &PhononEnvironment,
    axis: &SweepAxis,
    opts: &EvolveOptions,
) -> Result<SweepResult> {
    let values = axis.values();
    if values.is_empty() {
        return Err(Error::Invalid(vec!["sweep axis must not be empty".into()]));
    }
    let increasing = values.windows(2).all(|w| w[1] > w[0]);
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);
    if !(increasing || decreasing) {
        return Err(Error::Invalid(vec!["sweep axis must be strictly monotone".into()]));
    }
    let resonance = qd.tpe_resonance_mev();
    let splits = values
        .par_iter()
        .enumerate()
        .map(|(index, &a)| {
            let pulse = match axis {
                SweepAxis::PulseArea(_) => pulse_template.with_area(a),
                SweepAxis::LaserDetuning(_) => pulse_template.with_center_energy(resonance + a),
            };
            evolve(qd, &pulse, env, opts)
                .map(|t| t.channel_split)
                .map_err(|e| Error::SweepPoint {
                    index,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let p_xx: Vec<f64> = splits.iter().map(ChannelSplit::xx_total).collect();
    // every excitation eventually emits an exciton photon
    let p_x_total: Vec<f64> = splits.iter().map(|s| s.xx_total() + s.x_phonon).collect();
    let p_x_minus_xx = p_x_total.iter().zip(&p_xx).map(|(x, xx)| x - xx).collect();
    Ok(SweepResult {
        axis: axis.clone(),
        p_xx,
        p_x_total,
        p_x_minus_xx,
        splits,
    })
}

/// Contrast of the first Rabi oscillation: (P₁ − P₂)/(P₁ + P₂) with P₁ the
/// first interior local maximum and P₂ the local minimum that follows it.
/// Zero when the curve has no interior maximum.
pub fn rabi_visibility(p: &[f64]) -> f64 {
    for i in 1..p.len().saturating_sub(1) {
        if p[i] > p[i - 1] && p[i] >= p[i + 1] {
            let mut j = i + 1;
            while j + 1 < p.len() && p[j + 1] <= p[j] {
                j += 1;
            }
            let (hi, lo) = (p[i], p[j]);
            return if hi + lo > 0.0 { (hi - lo) / (hi + lo) } else { 0.0 };
        }
    }
    0.0
}

/// One-photon area of the first biexciton maximum at the laser's current
/// detuning. Coarse scan from 0.5 to 1.8 times the adiabatic-elimination
/// estimate, then golden-section refinement.
pub fn find_pi_area(
    qd: &QdParameters,
    pulse: &LaserPulseSpec,
    env: &PhononEnvironment,
    opts: &EvolveOptions,
) -> Result<f64> {
    let estimate = area_for_two_photon_area(qd, pulse, PI);
    let p_xx = |area: f64| -> Result<f64> {
        Ok(evolve(qd, &pulse.with_area(area), env, opts)?.channel_split.xx_total())
    };
    let factors: Vec<f64> = (0..=26).map(|k| 0.5 + 0.05 * k as f64).collect();
    let values = factors
        .par_iter()
        .map(|f| p_xx(f * estimate))
        .collect::<Result<Vec<_>>>()?;
    let peak = (1..values.len() - 1)
        .find(|&i| values[i] > values[i - 1] && values[i] >= values[i + 1])
        .ok_or_else(|| Error::Degenerate("no biexciton Rabi maximum near the two-photon pi area".into()))?;

    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (factors[peak - 1] * estimate, factors[peak + 1] * estimate);
    let mut c = b - golden * (b - a);
    let mut d = a + golden * (b - a);
    let (mut fc, mut fd) = (p_xx(c)?, p_xx(d)?);
    while (b - a) > 1e-5 * estimate {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - golden * (b - a);
            fc = p_xx(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + golden * (b - a);
            fd = p_xx(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Fits the phonon coupling so that the biexciton population at the first
/// Rabi maximum of a resonant pulse equals `target_xx`. The drive
/// dephasing constant and cutoff of `template` are held fixed.
pub fn calibrate_coupling(
    qd: &QdParameters,
    pulse: &LaserPulseSpec,
    template: &PhononEnvironment,
    target_xx: f64,
) -> Result<PhononEnvironment> {
    let opts = EvolveOptions::default();
    let resonant = pulse.with_center_energy(qd.tpe_resonance_mev());
    let peak_xx = |coupling: f64| -> Result<f64> {
        let env = PhononEnvironment {
            coupling,
            ..template.clone()
        };
        let area = find_pi_area(qd, &resonant, &env, &opts)?;
        Ok(evolve(qd, &resonant.with_area(area), &env, &opts)?.channel_split.xx_total())
    };
    // the phonon channel only removes population from the coherent route
    let (mut lo, mut hi) = (0.0, 1.0);
    if peak_xx(lo)? < target_xx || peak_xx(hi)? > target_xx {
        return Err(Error::Degenerate(format!(
            "biexciton target {target_xx} not bracketed by couplings [{lo}, {hi}]"
        )));
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if peak_xx(mid)? > target_xx {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(PhononEnvironment {
        coupling: 0.5 * (lo + hi),
        ..template.clone()
    })
}
