//! Re-derives the calibrated phonon bath and prints the headline numbers
//! of the resonant and detuned power dependences.
//!
//!     cargo run --release -p qdcascade --example calibrate -- [drive_dephasing_ps] [coupling]

use qdcascade::dynamics::{
    area_for_two_photon_area, calibrate_coupling, evolve, find_pi_area, rabi_visibility, sweep, EvolveOptions,
    SweepAxis,
};
use qdcascade::{LaserPulseSpec, PhononEnvironment, QdParameters};
use std::f64::consts::PI;

fn main() -> qdcascade::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let qd = QdParameters::representative();
    let pulse = LaserPulseSpec::tpe(&qd, 1.0);
    let template = PhononEnvironment {
        drive_dephasing_ps: args.first().copied().unwrap_or(PhononEnvironment::calibrated().drive_dephasing_ps),
        ..PhononEnvironment::calibrated()
    };
    let env = match args.get(1) {
        Some(&coupling) => PhononEnvironment { coupling, ..template },
        None => calibrate_coupling(&qd, &pulse, &template, 0.65)?,
    };
    println!("coupling = {:.6} ps/meV^3, drive dephasing = {} ps", env.coupling, env.drive_dephasing_ps);

    let opts = EvolveOptions::default();
    let pi = find_pi_area(&qd, &pulse, &env, &opts)?;
    let split = evolve(&qd, &pulse.with_area(pi), &env, &opts)?.channel_split;
    println!(
        "pi area = {pi:.4} rad: XX coherent {:.4}, XX phonon {:.4}, XX total {:.4}, X phonon {:.4}",
        split.xx_coherent,
        split.xx_phonon,
        split.xx_total(),
        split.x_phonon
    );

    let max_area = area_for_two_photon_area(&qd, &pulse, 4.0 * PI);
    let areas: Vec<f64> = (1..=80).map(|k| max_area * k as f64 / 80.0).collect();
    for det in [0.0, 0.175, -0.185] {
        let p = pulse.with_center_energy(qd.tpe_resonance_mev() + det);
        let r = sweep(&qd, &p, &env, &SweepAxis::PulseArea(areas.clone()), &opts)?;
        let worst_drop = r
            .p_x_minus_xx
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min);
        println!(
            "detuning {det:+.3} meV: visibility {:.3}, max P_XX {:.3}, worst X-XX step {:.2e}",
            rabi_visibility(&r.p_xx),
            r.p_xx.iter().cloned().fold(0.0, f64::max),
            worst_drop
        );
    }
    Ok(())
}
