//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use num_complex::Complex64 as C64;
use qdcascade::{LaserPulseSpec, QdParameters};

/// ħ in meV·ps.
pub const HBAR_MEV_PS: f64 = 0.6582119569;

/// Closed-system ground/exciton/biexciton ladder in the laser frame,
/// propagated with exact exponentials of the midpoint Hamiltonian.
/// Returns (P_g, P_X, P_XX) at +4σ.
pub fn coherent_ladder(qd: &QdParameters, pulse: &LaserPulseSpec, dt_ps: f64) -> [f64; 3] {
    let sigma = pulse.fwhm_ps / (2.0 * (2.0 * 2f64.ln()).sqrt());
    let omega0 = pulse.pulse_area_rad / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let e = pulse.polarization;
    let factor = (e.h * e.h + e.v * e.v).norm().sqrt();
    let d1 = (pulse.center_energy_mev - qd.exciton_energy_mev) / HBAR_MEV_PS;
    let d2 = (pulse.center_energy_mev - qd.biexciton_transition_energy_mev) / HBAR_MEV_PS;
    let (t0, t1) = (-4.0 * sigma, 4.0 * sigma);
    let n = ((t1 - t0) / dt_ps).ceil() as usize;
    let h = (t1 - t0) / n as f64;
    let mut psi = [C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
    for k in 0..n {
        let t = t0 + (k as f64 + 0.5) * h;
        let c = 0.5 * factor * omega0 * (-0.5 * (t / sigma).powi(2)).exp();
        let ham = Matrix3::new(0.0, c, 0.0, c, -d1, c, 0.0, c, -(d1 + d2));
        let eig = SymmetricEigen::new(ham);
        let v = eig.eigenvectors;
        let mut out = [C64::new(0.0, 0.0); 3];
        for m in 0..3 {
            let col: Vector3<f64> = v.column(m).into();
            let amp: C64 = (0..3).map(|i| psi[i] * col[i]).sum();
            let phase = C64::from_polar(1.0, -eig.eigenvalues[m] * h);
            for i in 0..3 {
                out[i] += col[i] * phase * amp;
            }
        }
        psi = out;
    }
    [psi[0].norm_sqr(), psi[1].norm_sqr(), psi[2].norm_sqr()]
}

/// All tag pairs with |stop − start| inside the outermost bin, binned by
/// nearest center; O(n·m).
pub fn brute_force_histogram(start: &[u64], stop: &[u64], bin_ps: u64, half_bins: usize) -> Vec<u64> {
    let mut h = vec![0u64; 2 * half_bins + 1];
    let w = bin_ps as i128;
    let edge = (2 * half_bins as i128 + 1) * w;
    for &a in start {
        for &b in stop {
            let d = b as i128 - a as i128;
            // bin k covers [(k − ½)w, (k + ½)w)
            if 2 * d >= -edge && 2 * d < edge {
                let k = (2 * d + w).div_euclid(2 * w);
                h[(k + half_bins as i128) as usize] += 1;
            }
        }
    }
    h
}
