use qdcascade::dynamics::ChannelSplit;
use qdcascade::emission::{
    acquire, analyze_pair, integrated_pair_state, joint_projection, sample_pulses, tagfile, Acquisition, CycleOptions,
    Origin, PhotonKind, PolarizationState, Setup,
};
use qdcascade::experiments::simulate_pair_counts;
use qdcascade::tomography::{expected_stokes, fidelity, setting_analyzers, stokes_from_counts, SETTINGS};
use qdcascade::{DetectorSpec, Jones, QdParameters};

fn qd(fss: f64, tau_hv: f64) -> QdParameters {
    QdParameters {
        fss_uev: fss,
        cross_dephasing_time_ns: tau_hv,
        ..QdParameters::representative()
    }
}

/// Sample-averaged joint probabilities converge on the time-integrated
/// two-photon state over a grid of splittings and dephasing times.
#[test]
fn pair_average_matches_integrated_state() {
    let split = ChannelSplit::new(1.0, 0.0, 0.0);
    for fss in [0.0, 0.4, 1.5, 5.0] {
        for tau_hv in [f64::INFINITY, 2.0, 0.5] {
            let q = qd(fss, tau_hv);
            let events = sample_pulses(3, 0, 40_000, &split, &q, &Jones::horizontal(), &CycleOptions::default());
            let pairs: Vec<_> = events
                .iter()
                .filter(|e| e.kind == PhotonKind::Biexciton)
                .map(|e| match e.polarization {
                    PolarizationState::Pair(p) => p,
                    _ => unreachable!(),
                })
                .collect();
            let rho = integrated_pair_state(fss, q.exciton_lifetime_ns, tau_hv);
            for s in SETTINGS {
                let (a, b) = setting_analyzers(s).unwrap();
                let mean = pairs.iter().map(|p| analyze_pair(p, &a, &b)).sum::<f64>() / pairs.len() as f64;
                let want = joint_projection(&rho, &a, &b);
                // per-pair probabilities lie in [0, 1]: σ ≤ 0.5/√n
                assert!((mean - want).abs() < 4.0 * 0.5 / (pairs.len() as f64).sqrt(), "fss {fss} τ {tau_hv} {s}");
            }
        }
    }
}

#[test]
fn pair_tomography_within_binomial_errors() {
    for (fss, seed) in [(0.0, 1), (0.4, 2), (2.0, 3)] {
        let q = qd(fss, f64::INFINITY);
        let f = fidelity(&stokes_from_counts(&simulate_pair_counts(&q, 50_000, 1.0, seed)).unwrap());
        let want = fidelity(&expected_stokes(&integrated_pair_state(fss, 0.78, f64::INFINITY))).value;
        assert!((f.value - want).abs() <= 3.0 * f.error.max(1e-4), "fss {fss}: {} ± {} vs {want}", f.value, f.error);
    }
}

#[test]
fn emission_counts_follow_split() {
    let split = ChannelSplit::new(0.5, 0.3, 0.1);
    let n = 200_000;
    let ev = sample_pulses(9, 0, n, &split, &QdParameters::representative(), &Jones::horizontal(), &CycleOptions::default());
    let xx = ev.iter().filter(|e| e.kind == PhotonKind::Biexciton).count() as f64 / n as f64;
    let xph = ev.iter().filter(|e| e.origin == Origin::PhononExciton).count() as f64 / n as f64;
    let sd = |p: f64| (p * (1.0 - p) / n as f64).sqrt();
    assert!((xx - 0.6).abs() < 4.0 * sd(0.6));
    assert!((xph - 0.3).abs() < 4.0 * sd(0.3));
    // exciton photons: one per cascade plus the phonon-fed ones
    let x = ev.iter().filter(|e| e.kind == PhotonKind::Exciton).count() as f64 / n as f64;
    assert!((x - xx - xph).abs() < 1e-12);
}

#[test]
fn tag_files_round_trip_through_disk() {
    let acq = Acquisition {
        split: ChannelSplit::new(0.6, 0.3, 0.0),
        qd: QdParameters::representative(),
        laser_polarization: Jones::horizontal(),
        cycle: CycleOptions::default(),
        setup: Setup::cross(None, None).with_sync(0),
        detector: DetectorSpec::spad(),
        duration_s: 0.001,
        rep_rate_mhz: 80.0,
    };
    let streams = acquire(&acq, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("tags.qtt");
    let csv = dir.path().join("tags.csv");
    std::fs::write(&bin, tagfile::to_binary(&streams)).unwrap();
    std::fs::write(&csv, tagfile::to_csv(&streams)).unwrap();
    let from_bin = tagfile::from_binary(&std::fs::read(&bin).unwrap()).unwrap();
    let from_csv = tagfile::from_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!(from_bin, from_csv);
    let nonempty: Vec<_> = streams.into_iter().filter(|s| !s.is_empty()).collect();
    assert_eq!(from_bin, nonempty);
}
