//! Monte Carlo emission from the prepared dot: cascade photon pairs and
//! phonon-fed single excitons, polarization analysis, detection, and
//! synthetic spectra.

mod acquire;
mod detector;
mod spectrum;
pub mod tagfile;

pub use acquire::{acquire, Acquisition};
pub use detector::{apply_detector, Arm, Setup, TimeTagStream};
pub use spectrum::{cascade_lines, synth_spectrum, EnergyGrid, SpectralLine, Spectrum};

use crate::dynamics::ChannelSplit;
use crate::polarization::Jones;
use crate::qd::QdParameters;
use crate::units::uev_to_rad_per_ns;
use nalgebra::Matrix4;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhotonKind {
    Biexciton,
    Exciton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Cascade,
    PhononExciton,
}

/// Polarization of a cascade pair: (|HH⟩ + e^{iφ}|VV⟩)/√2 while coherent,
/// the equal HH/VV mixture once cross-dephasing has struck. The first
/// photon is the biexciton photon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairState {
    pub precession_phase: f64,
    pub coherent: bool,
}

impl PairState {
    /// Two-photon density matrix in the (HH, HV, VH, VV) basis.
    pub fn density_matrix(&self) -> Matrix4<C64> {
        let mut rho = Matrix4::zeros();
        rho[(0, 0)] = C64::new(0.5, 0.0);
        rho[(3, 3)] = C64::new(0.5, 0.0);
        if self.coherent {
            let c = 0.5 * C64::from_polar(1.0, -self.precession_phase);
            rho[(0, 3)] = c;
            rho[(3, 0)] = c.conj();
        }
        rho
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarizationState {
    Pure(Jones),
    Pair(PairState),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionEvent {
    pub pulse_index: u64,
    pub kind: PhotonKind,
    /// Emission time after the pulse center (ns).
    pub emit_time_ns: f64,
    pub polarization: PolarizationState,
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleOptions {
    /// Fixed phase added to the laser-to-exciton polarization mapping.
    #[serde(default)]
    pub phase_offset_rad: f64,
    /// Allows a fresh excitation when the emitter is back in its ground
    /// state before the pulse has passed.
    #[serde(default)]
    pub allow_reexcitation: bool,
    /// Half-width of the pulse (4σ) in ns, the re-excitation window.
    #[serde(default = "default_pulse_window")]
    pub pulse_window_ns: f64,
}

fn default_pulse_window() -> f64 {
    4.0 * 10.0 / crate::units::FWHM_PER_SIGMA * 1e-3
}

impl Default for CycleOptions {
    fn default() -> Self {
        Self {
            phase_offset_rad: 0.0,
            allow_reexcitation: false,
            pulse_window_ns: default_pulse_window(),
        }
    }
}

/// Outcome of one excitation attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    Cascade,
    PhononExciton,
    Nothing,
}

pub(crate) fn draw_outcome<R: Rng + ?Sized>(rng: &mut R, split: &ChannelSplit) -> Outcome {
    let u: f64 = rng.random();
    if u < split.xx_total() {
        Outcome::Cascade
    } else if u < split.xx_total() + split.x_phonon {
        Outcome::PhononExciton
    } else {
        Outcome::Nothing
    }
}

/// Emission times and polarization states for a given outcome, starting at
/// `t0_ns` after the pulse center.
pub(crate) fn emit<R: Rng + ?Sized>(
    rng: &mut R,
    outcome: Outcome,
    pulse_index: u64,
    t0_ns: f64,
    qd: &QdParameters,
    laser_pol: &Jones,
    opts: &CycleOptions,
    out: &mut Vec<EmissionEvent>,
) {
    let precession = uev_to_rad_per_ns(qd.fss_uev);
    let x_decay = Exp::new(1.0 / qd.exciton_lifetime_ns).expect("validated lifetime");
    match outcome {
        Outcome::Nothing => {}
        Outcome::Cascade => {
            let xx_decay = Exp::new(1.0 / qd.biexciton_lifetime_ns).expect("validated lifetime");
            let t_xx = t0_ns + xx_decay.sample(rng);
            let delay = x_decay.sample(rng);
            let survive = (-delay / qd.cross_dephasing_time_ns).exp();
            let coherent = rng.random::<f64>() < survive;
            let pair = PolarizationState::Pair(PairState {
                precession_phase: precession * delay,
                coherent,
            });
            out.push(EmissionEvent {
                pulse_index,
                kind: PhotonKind::Biexciton,
                emit_time_ns: t_xx,
                polarization: pair,
                origin: Origin::Cascade,
            });
            out.push(EmissionEvent {
                pulse_index,
                kind: PhotonKind::Exciton,
                emit_time_ns: t_xx + delay,
                polarization: pair,
                origin: Origin::Cascade,
            });
        }
        Outcome::PhononExciton => {
            let t = t0_ns + x_decay.sample(rng);
            // laser polarization imprinted at the pulse center, then
            // precessing about the H/V eigenaxes of the split exciton
            let phase = precession * t + opts.phase_offset_rad;
            out.push(EmissionEvent {
                pulse_index,
                kind: PhotonKind::Exciton,
                emit_time_ns: t,
                polarization: PolarizationState::Pure(laser_pol.with_relative_phase(phase)),
                origin: Origin::PhononExciton,
            });
        }
    }
}

/// Samples the photons emitted after one laser pulse. At most one
/// excitation per pulse unless re-excitation is enabled.
pub fn sample_cycle<R: Rng + ?Sized>(
    rng: &mut R,
    pulse_index: u64,
    split: &ChannelSplit,
    qd: &QdParameters,
    laser_pol: &Jones,
    opts: &CycleOptions,
) -> Vec<EmissionEvent> {
    let mut events = Vec::with_capacity(2);
    let mut t0 = 0.0;
    loop {
        let outcome = draw_outcome(rng, split);
        let before = events.len();
        emit(rng, outcome, pulse_index, t0, qd, laser_pol, opts, &mut events);
        if !opts.allow_reexcitation || events.len() == before {
            break;
        }
        let last = events.last().map_or(0.0, |e| e.emit_time_ns);
        if last >= opts.pulse_window_ns {
            break;
        }
        t0 = last;
    }
    events
}

const DOMAIN_PULSE: u64 = 0x7075_6c73_6500_0001;

/// Counter-based generator for one (seed, domain, index) triple.
pub fn substream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Generator for pulse `pulse_index`, independent of every other pulse.
pub fn pulse_rng(seed: u64, pulse_index: u64) -> ChaCha8Rng {
    substream(seed, DOMAIN_PULSE, pulse_index)
}

/// Samples `n_pulses` consecutive cycles with per-pulse generators.
pub fn sample_pulses(
    seed: u64,
    first_pulse: u64,
    n_pulses: u64,
    split: &ChannelSplit,
    qd: &QdParameters,
    laser_pol: &Jones,
    opts: &CycleOptions,
) -> Vec<EmissionEvent> {
    use rayon::prelude::*;
    (first_pulse..first_pulse + n_pulses)
        .into_par_iter()
        .flat_map_iter(|p| sample_cycle(&mut pulse_rng(seed, p), p, split, qd, laser_pol, opts))
        .collect()
}

/// Time-integrated two-photon state of the cascade, averaging the
/// precession phase and cross-dephasing over the exciton lifetime.
/// Basis (HH, HV, VH, VV), first photon the biexciton photon.
pub fn integrated_pair_state(fss_uev: f64, exciton_lifetime_ns: f64, cross_dephasing_ns: f64) -> Matrix4<C64> {
    let omega_tau = uev_to_rad_per_ns(fss_uev) * exciton_lifetime_ns;
    let coherence = C64::new(1.0, 0.0) / C64::new(1.0 + exciton_lifetime_ns / cross_dephasing_ns, omega_tau);
    let mut rho = Matrix4::zeros();
    rho[(0, 0)] = C64::new(0.5, 0.0);
    rho[(3, 3)] = C64::new(0.5, 0.0);
    rho[(0, 3)] = 0.5 * coherence;
    rho[(3, 0)] = 0.5 * coherence.conj();
    rho
}

/// Overlap ⟨Φ⁺|ρ|Φ⁺⟩ with (|HH⟩ + |VV⟩)/√2.
pub fn bell_fidelity(rho: &Matrix4<C64>) -> f64 {
    0.5 * (rho[(0, 0)] + rho[(3, 3)] + rho[(0, 3)] + rho[(3, 0)]).re
}

/// Two-photon product state |a⟩⊗|b⟩ in the (HH, HV, VH, VV) basis.
pub fn product_state(a: &Jones, b: &Jones) -> [C64; 4] {
    [a.h * b.h, a.h * b.v, a.v * b.h, a.v * b.v]
}

/// Born-rule probability ⟨ab|ρ|ab⟩.
pub fn joint_projection(rho: &Matrix4<C64>, xx_analyzer: &Jones, x_analyzer: &Jones) -> f64 {
    let psi = product_state(xx_analyzer, x_analyzer);
    let mut p = C64::new(0.0, 0.0);
    for i in 0..4 {
        for j in 0..4 {
            p += psi[i].conj() * rho[(i, j)] * psi[j];
        }
    }
    p.re
}

/// Pass probability of a single photon through an ideal polarizer. A
/// cascade photon on its own is unpolarized.
pub fn analyze_polarization(event: &EmissionEvent, analyzer: &Jones) -> f64 {
    match &event.polarization {
        PolarizationState::Pure(j) => j.projection(analyzer),
        PolarizationState::Pair(_) => 0.5 * analyzer.norm_sqr(),
    }
}

/// Joint pass probability of both photons of a cascade pair.
pub fn analyze_pair(pair: &PairState, xx_analyzer: &Jones, x_analyzer: &Jones) -> f64 {
    let a = xx_analyzer;
    let b = x_analyzer;
    if pair.coherent {
        let amp = (a.h.conj() * b.h.conj() + C64::from_polar(1.0, pair.precession_phase) * a.v.conj() * b.v.conj())
            * std::f64::consts::FRAC_1_SQRT_2;
        amp.norm_sqr()
    } else {
        0.5 * (a.h.norm_sqr() * b.h.norm_sqr() + a.v.norm_sqr() * b.v.norm_sqr())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cascade_only() -> ChannelSplit {
        ChannelSplit::new(1.0, 0.0, 0.0)
    }

    #[test]
    fn forced_cascade_gives_ordered_pair() {
        let qd = QdParameters::representative();
        for p in 0..1000 {
            let ev = sample_cycle(
                &mut pulse_rng(7, p),
                p,
                &cascade_only(),
                &qd,
                &Jones::horizontal(),
                &CycleOptions::default(),
            );
            assert_eq!(ev.len(), 2);
            assert_eq!(ev[0].kind, PhotonKind::Biexciton);
            assert_eq!(ev[1].kind, PhotonKind::Exciton);
            assert!(ev[0].emit_time_ns >= 0.0);
            assert!(ev[1].emit_time_ns > ev[0].emit_time_ns);
        }
    }

    #[test]
    fn empty_split_emits_nothing() {
        let qd = QdParameters::representative();
        let mut rng = pulse_rng(1, 0);
        for p in 0..100 {
            let ev = sample_cycle(
                &mut rng,
                p,
                &ChannelSplit::new(0.0, 0.0, 0.0),
                &qd,
                &Jones::horizontal(),
                &CycleOptions::default(),
            );
            assert!(ev.is_empty());
        }
    }

    #[test]
    fn cascade_delay_mean_is_exciton_lifetime() {
        let qd = QdParameters::representative();
        let n = 1_000_000u64;
        let events = sample_pulses(11, 0, n, &cascade_only(), &qd, &Jones::horizontal(), &CycleOptions::default());
        let delays: Vec<f64> = events.chunks(2).map(|c| c[1].emit_time_ns - c[0].emit_time_ns).collect();
        let mean = delays.iter().sum::<f64>() / n as f64;
        // standard error of an exponential mean is τ/√n
        let se = qd.exciton_lifetime_ns / (n as f64).sqrt();
        assert!((mean - qd.exciton_lifetime_ns).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn per_pulse_streams_are_reproducible() {
        let qd = QdParameters::representative();
        let split = ChannelSplit::new(0.6, 0.3, 0.05);
        let a = sample_pulses(3, 100, 5000, &split, &qd, &Jones::diagonal(), &CycleOptions::default());
        let b = sample_pulses(3, 100, 5000, &split, &qd, &Jones::diagonal(), &CycleOptions::default());
        assert_eq!(a, b);
        // a sub-range reproduces the same pulses
        let c = sample_pulses(3, 2000, 10, &split, &qd, &Jones::diagonal(), &CycleOptions::default());
        let from_a: Vec<_> = a.iter().filter(|e| (2000..2010).contains(&e.pulse_index)).cloned().collect();
        assert_eq!(c, from_a);
    }

    #[test]
    fn reexcitation_is_off_by_default() {
        let qd = QdParameters {
            biexciton_lifetime_ns: 1e-4,
            exciton_lifetime_ns: 1e-4,
            ..QdParameters::representative()
        };
        let split = ChannelSplit::new(1.0, 0.0, 0.0);
        let off = sample_cycle(&mut pulse_rng(5, 0), 0, &split, &qd, &Jones::horizontal(), &CycleOptions::default());
        assert_eq!(off.len(), 2);
        let opts = CycleOptions {
            allow_reexcitation: true,
            ..CycleOptions::default()
        };
        let on = sample_cycle(&mut pulse_rng(5, 0), 0, &split, &qd, &Jones::horizontal(), &opts);
        assert!(on.len() > 2);
    }

    #[test]
    fn pair_state_limits() {
        let ideal = integrated_pair_state(0.0, 0.78, f64::INFINITY);
        assert!((bell_fidelity(&ideal) - 1.0).abs() < 1e-12);
        let dephased = integrated_pair_state(0.4, 0.78, 1e-9);
        assert!((bell_fidelity(&dephased) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn pair_state_fidelity_against_time_integration() {
        // oracle: integrate the precessing pure state over the exponential
        // delay distribution with the midpoint rule
        let (s, tx) = (0.4, 0.78_f64);
        let omega = uev_to_rad_per_ns(s);
        let h = 1e-4;
        let mut f = 0.0;
        let mut t = 0.5 * h;
        while t < 40.0 * tx {
            let w = (-t / tx).exp() / tx * h;
            f += w * 0.5 * (1.0 + (omega * t).cos());
            t += h;
        }
        let rho = integrated_pair_state(s, tx, f64::INFINITY);
        assert!((bell_fidelity(&rho) - f).abs() < 1e-6);
        assert!((bell_fidelity(&rho) - 0.908).abs() < 1e-3);
    }

    #[test]
    fn pair_state_is_physical() {
        for (s, th) in [(0.0, f64::INFINITY), (0.4, 1.0), (10.0, 0.3)] {
            let rho = integrated_pair_state(s, 0.78, th);
            let tr: C64 = (0..4).map(|k| rho[(k, k)]).sum();
            assert!((tr.re - 1.0).abs() < 1e-12 && tr.im.abs() < 1e-12);
            assert!((rho - rho.adjoint()).norm() < 1e-12);
            // 2x2 HH/VV block is the only non-trivial one
            let det = rho[(0, 0)].re * rho[(3, 3)].re - rho[(0, 3)].norm_sqr();
            assert!(det >= -1e-12);
        }
    }

    #[test]
    fn malus_and_born() {
        let ev = EmissionEvent {
            pulse_index: 0,
            kind: PhotonKind::Exciton,
            emit_time_ns: 0.1,
            polarization: PolarizationState::Pure(Jones::horizontal()),
            origin: Origin::PhononExciton,
        };
        assert!((analyze_polarization(&ev, &Jones::horizontal()) - 1.0).abs() < 1e-15);
        assert!((analyze_polarization(&ev, &Jones::diagonal()) - 0.5).abs() < 1e-15);
        let pair = PairState {
            precession_phase: 0.0,
            coherent: true,
        };
        // oracle: <DD|rho|DD> by direct matrix arithmetic
        let rho = pair.density_matrix();
        let dd = joint_projection(&rho, &Jones::diagonal(), &Jones::diagonal());
        assert!((dd - 0.5).abs() < 1e-15);
        assert!((analyze_pair(&pair, &Jones::diagonal(), &Jones::diagonal()) - dd).abs() < 1e-15);
    }

    #[test]
    fn pair_projection_matches_density_matrix() {
        let analyzers = [
            Jones::horizontal(),
            Jones::vertical(),
            Jones::diagonal(),
            Jones::antidiagonal(),
            Jones::right(),
            Jones::left(),
        ];
        for phase in [0.0, 0.3, 2.0] {
            for coherent in [true, false] {
                let pair = PairState {
                    precession_phase: phase,
                    coherent,
                };
                let rho = pair.density_matrix();
                for a in &analyzers {
                    for b in &analyzers {
                        let direct = analyze_pair(&pair, a, b);
                        assert!((direct - joint_projection(&rho, a, b)).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn phonon_exciton_follows_laser_without_splitting() {
        let qd = QdParameters {
            fss_uev: 0.0,
            ..QdParameters::representative()
        };
        let split = ChannelSplit::new(0.0, 1.0, 0.0);
        let laser = Jones::linear(0.4);
        let crossed = Jones::linear(0.4 + std::f64::consts::FRAC_PI_2);
        let events = sample_pulses(2, 0, 2000, &split, &qd, &laser, &CycleOptions::default());
        for e in &events {
            assert_eq!(e.origin, Origin::PhononExciton);
            assert!((analyze_polarization(e, &laser) - 1.0).abs() < 1e-12);
            assert!(analyze_polarization(e, &crossed) < 1e-12);
        }
    }
}
