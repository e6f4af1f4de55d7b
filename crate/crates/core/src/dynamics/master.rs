//! Rotating-frame ground–exciton–biexciton ladder under a pulsed drive.
//!
//! Basis order is (g, X, XX). Besides the density matrix the state carries
//! five accumulated probability fluxes so that population can be attributed
//! to the generator that moved it.

use crate::error::{Error, Result};
use crate::qd::{LaserPulseSpec, PhononEnvironment, QdParameters};
use crate::units::{mev_to_rad_per_ps, ns_to_ps, thermal_energy_mev};
use num_complex::Complex64 as C64;
use std::f64::consts::PI;
use std::ops::{Add, Mul};

pub(crate) const G: usize = 0;
pub(crate) const X: usize = 1;
pub(crate) const XX: usize = 2;

/// Indices into [`State::flux`].
pub(crate) mod flux {
    /// Net coherent flux X → XX.
    pub const COHERENT_XX: usize = 0;
    /// Phonon-assisted pumping g → X.
    pub const PHONON_X: usize = 1;
    /// Phonon-assisted pumping X → XX.
    pub const PHONON_XX: usize = 2;
    /// Radiative decay XX → X.
    pub const DECAY_XX: usize = 3;
    /// Radiative decay X → g.
    pub const DECAY_X: usize = 4;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct State {
    pub rho: [[C64; 3]; 3],
    pub flux: [f64; 5],
}

impl State {
    pub fn ground() -> Self {
        let mut rho = [[C64::new(0.0, 0.0); 3]; 3];
        rho[G][G] = C64::new(1.0, 0.0);
        Self { rho, flux: [0.0; 5] }
    }

    pub fn populations(&self) -> [f64; 3] {
        [self.rho[G][G].re, self.rho[X][X].re, self.rho[XX][XX].re]
    }

    pub fn trace(&self) -> f64 {
        self.populations().iter().sum()
    }

    fn zero() -> Self {
        Self {
            rho: [[C64::new(0.0, 0.0); 3]; 3],
            flux: [0.0; 5],
        }
    }

    pub fn max_abs_diff(&self, other: &State) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                m = m.max((self.rho[i][j] - other.rho[i][j]).norm());
            }
        }
        for k in 0..5 {
            m = m.max((self.flux[k] - other.flux[k]).abs());
        }
        m
    }
}

impl Add for State {
    type Output = State;
    fn add(mut self, rhs: State) -> State {
        for i in 0..3 {
            for j in 0..3 {
                self.rho[i][j] += rhs.rho[i][j];
            }
        }
        for k in 0..5 {
            self.flux[k] += rhs.flux[k];
        }
        self
    }
}

impl Mul<f64> for State {
    type Output = State;
    fn mul(mut self, s: f64) -> State {
        for row in self.rho.iter_mut() {
            for z in row.iter_mut() {
                *z *= s;
            }
        }
        for f in self.flux.iter_mut() {
            *f *= s;
        }
        self
    }
}

/// Bose–Einstein occupation at energy `energy_mev`.
pub(crate) fn bose_occupation(energy_mev: f64, temperature_k: f64) -> f64 {
    if temperature_k <= 0.0 {
        return 0.0;
    }
    1.0 / (energy_mev / thermal_energy_mev(temperature_k)).exp_m1()
}

/// Phonon-assisted transition rate (1/ps) for a drive detuned by
/// `detuning_mev` above the transition, with instantaneous squared Rabi
/// frequency `drive` (rad²/ps²).
pub fn phonon_rate(detuning_mev: f64, env: &PhononEnvironment, drive: f64) -> f64 {
    if detuning_mev == 0.0 || env.coupling == 0.0 || drive == 0.0 {
        return 0.0;
    }
    let d = detuning_mev.abs();
    let spectral = d.powi(3) * (-(d / env.cutoff_mev).powi(2)).exp();
    let n = bose_occupation(d, env.temperature_k);
    // positive detuning: the excess energy is emitted into the bath
    let occupation = if detuning_mev > 0.0 { n + 1.0 } else { n };
    drive * env.coupling * spectral * occupation
}

/// Time-dependent generator of the ladder dynamics.
#[derive(Debug, Clone)]
pub(crate) struct Ladder {
    /// Rotating-frame level energies (rad/ps).
    energies: [f64; 3],
    detuning_gx_mev: f64,
    detuning_xxx_mev: f64,
    peak_rabi: f64,
    sigma_ps: f64,
    /// √|e_H² + e_V²| multiplying each one-photon coupling.
    polarization_amplitude: f64,
    env: PhononEnvironment,
    decay_x: f64,
    decay_xx: f64,
}

impl Ladder {
    pub fn new(qd: &QdParameters, pulse: &LaserPulseSpec, env: &PhononEnvironment) -> Self {
        let d1 = pulse.center_energy_mev - qd.exciton_energy_mev;
        let d2 = pulse.center_energy_mev - qd.biexciton_transition_energy_mev;
        let sigma_ps = pulse.sigma_ps();
        Self {
            energies: [0.0, -mev_to_rad_per_ps(d1), -mev_to_rad_per_ps(d1 + d2)],
            detuning_gx_mev: d1,
            detuning_xxx_mev: d2,
            peak_rabi: pulse.pulse_area_rad / (sigma_ps * (2.0 * PI).sqrt()),
            sigma_ps,
            polarization_amplitude: pulse.polarization.two_photon_factor().sqrt(),
            env: env.clone(),
            decay_x: 1.0 / ns_to_ps(qd.exciton_lifetime_ns),
            decay_xx: 1.0 / ns_to_ps(qd.biexciton_lifetime_ns),
        }
    }

    /// Disables radiative decay (ideal-limit checks).
    pub fn without_decay(mut self) -> Self {
        self.decay_x = 0.0;
        self.decay_xx = 0.0;
        self
    }

    pub fn sigma_ps(&self) -> f64 {
        self.sigma_ps
    }

    pub fn rabi(&self, t_ps: f64) -> f64 {
        self.peak_rabi * (-0.5 * (t_ps / self.sigma_ps).powi(2)).exp()
    }

    pub fn derivative(&self, t_ps: f64, s: &State) -> State {
        let rho = &s.rho;
        let omega = self.rabi(t_ps);
        let drive = omega * omega;
        let c = 0.5 * omega * self.polarization_amplitude;

        // H is real symmetric and tridiagonal
        let mut h = [[0.0f64; 3]; 3];
        for k in 0..3 {
            h[k][k] = self.energies[k];
        }
        h[G][X] = c;
        h[X][G] = c;
        h[X][XX] = c;
        h[XX][X] = c;

        let mut d = State::zero();
        let minus_i = C64::new(0.0, -1.0);
        for i in 0..3 {
            for j in 0..3 {
                let mut comm = C64::new(0.0, 0.0);
                for k in 0..3 {
                    comm += h[i][k] * rho[k][j] - rho[i][k] * h[k][j];
                }
                d.rho[i][j] = minus_i * comm;
            }
        }

        let r_gx = phonon_rate(self.detuning_gx_mev, &self.env, drive);
        let r_xxx = phonon_rate(self.detuning_xxx_mev, &self.env, drive);
        let transitions = [
            (G, X, r_gx),
            (X, XX, r_xxx),
            (XX, X, self.decay_xx),
            (X, G, self.decay_x),
        ];
        for &(from, to, rate) in &transitions {
            if rate == 0.0 {
                continue;
            }
            d.rho[to][to] += rate * rho[from][from];
            for j in 0..3 {
                d.rho[from][j] -= 0.5 * rate * rho[from][j];
                d.rho[j][from] -= 0.5 * rate * rho[j][from];
            }
        }

        let dephasing = self.env.drive_dephasing_ps * drive;
        if dephasing > 0.0 {
            for k in [X, XX] {
                for j in 0..3 {
                    if j != k {
                        d.rho[k][j] -= 0.5 * dephasing * rho[k][j];
                        d.rho[j][k] -= 0.5 * dephasing * rho[j][k];
                    }
                }
            }
        }

        d.flux[flux::COHERENT_XX] = 2.0 * c * rho[X][XX].im;
        d.flux[flux::PHONON_X] = r_gx * rho[G][G].re;
        d.flux[flux::PHONON_XX] = r_xxx * rho[X][X].re;
        d.flux[flux::DECAY_XX] = self.decay_xx * rho[XX][XX].re;
        d.flux[flux::DECAY_X] = self.decay_x * rho[X][X].re;
        d
    }

    fn rk4_step(&self, t: f64, s: &State, h: f64) -> State {
        let k1 = self.derivative(t, s);
        let k2 = self.derivative(t + 0.5 * h, &(*s + k1 * (0.5 * h)));
        let k3 = self.derivative(t + 0.5 * h, &(*s + k2 * (0.5 * h)));
        let k4 = self.derivative(t + h, &(*s + k3 * h));
        *s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    }

    fn integrate_fixed(&self, s: &State, t0: f64, t1: f64, n: u32) -> State {
        let h = (t1 - t0) / n as f64;
        let mut out = *s;
        for k in 0..n {
            out = self.rk4_step(t0 + k as f64 * h, &out, h);
        }
        out
    }
}

/// Fixed-step RK4 over a sequence of output intervals. Each interval is
/// re-integrated with twice the substeps until the two results agree to
/// `tolerance` and the trace stays within `trace_tolerance` of one.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepHalving {
    pub tolerance: f64,
    pub trace_tolerance: f64,
    pub max_halvings: u32,
}

impl Default for StepHalving {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            trace_tolerance: 1e-7,
            max_halvings: 16,
        }
    }
}

impl StepHalving {
    /// Integrates over `grid`, returning the state at every grid point.
    pub fn run(&self, ladder: &Ladder, grid: &[f64]) -> Result<Vec<State>> {
        let mut states = Vec::with_capacity(grid.len());
        let mut s = State::ground();
        states.push(s);
        let mut n: u32 = 1;
        for w in grid.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            let mut coarse = ladder.integrate_fixed(&s, t0, t1, n);
            let mut halvings = 0;
            loop {
                let fine = ladder.integrate_fixed(&s, t0, t1, 2 * n);
                let err = coarse.max_abs_diff(&fine);
                let drift = (fine.trace() - 1.0).abs();
                if err <= self.tolerance && drift <= self.trace_tolerance {
                    s = fine;
                    break;
                }
                halvings += 1;
                if halvings > self.max_halvings {
                    return Err(Error::NonConvergence {
                        time_ps: t0,
                        halvings,
                    });
                }
                n *= 2;
                coarse = fine;
            }
            states.push(s);
            // let the substep count relax again once the drive has passed
            if n > 1 && halvings == 0 {
                n /= 2;
            }
        }
        Ok(states)
    }
}
