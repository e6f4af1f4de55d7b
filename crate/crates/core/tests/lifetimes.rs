use qdcascade::correlator::CorrelationHistogram;
use qdcascade::lifetimes::{fit_lifetime, model_curve, poisson_sample, DecayModel, FitOptions, FitWindow, Kernel, ModelKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const BIN_PS: u64 = 50;

fn synthetic(model: &DecayModel, kernel: &Kernel, seed: u64) -> CorrelationHistogram {
    let mut h = CorrelationHistogram::zeros(BIN_PS, 6.0).unwrap();
    let t: Vec<f64> = h.taus_ps().iter().map(|&p| p as f64 * 1e-3).collect();
    let curve = model_curve(model, kernel, &t).unwrap();
    h.counts = poisson_sample(&curve, &mut ChaCha8Rng::seed_from_u64(seed));
    h.rep_period_ns = 12.5;
    h
}

fn model(kind: ModelKind, amplitude: f64) -> DecayModel {
    DecayModel {
        kind,
        amplitude,
        tau_ns: if kind == ModelKind::DoubleExpCascade { 0.78 } else { 0.44 },
        tau_other_ns: 0.44,
        baseline: 2.0,
        t0_ns: 0.0,
    }
}

fn kernels(kind: ModelKind) -> (Kernel, FitOptions) {
    let w = BIN_PS as f64 * 1e-3;
    let irf = Kernel::gaussian(w, 0.1);
    match kind {
        ModelKind::SingleExp => (irf, FitOptions::default()),
        ModelKind::DoubleExpCascade => (irf, FitOptions::cascade_with_fixed_feed(0.44)),
        ModelKind::SingleExpKnownDecay => (irf.convolve(&Kernel::exponential(w, 0.78)).unwrap(), FitOptions::default()),
    }
}

/// Fitting generator output recovers τ within 3 reported standard errors
/// in at least 95% of seeded trials.
#[test]
fn round_trip_coverage_every_model() {
    for kind in [ModelKind::SingleExp, ModelKind::DoubleExpCascade, ModelKind::SingleExpKnownDecay] {
        let m = model(kind, 2000.0);
        let (k, opts) = kernels(kind);
        let hits = (0..200)
            .filter(|&seed| {
                let f = fit_lifetime(&synthetic(&m, &k, seed), kind, &k, &opts).unwrap();
                let (tau, err) = f.tau();
                assert!(err >= 0.0 && f.converged);
                (tau - m.tau_ns).abs() <= 3.0 * err
            })
            .count();
        assert!(hits >= 190, "{kind:?}: {hits}/200 within 3σ");
    }
}

#[test]
fn exact_kernel_never_worse_than_delta() {
    let m = model(ModelKind::SingleExp, 5000.0);
    let w = BIN_PS as f64 * 1e-3;
    let irf = Kernel::gaussian(w, 0.1);
    for seed in 0..20 {
        let h = synthetic(&m, &irf, seed);
        let exact = fit_lifetime(&h, ModelKind::SingleExp, &irf, &FitOptions::default()).unwrap();
        let delta = fit_lifetime(&h, ModelKind::SingleExp, &Kernel::delta(w), &FitOptions::default()).unwrap();
        // same window for both, so chi-square values compare directly
        assert_eq!(exact.window_start_ns, delta.window_start_ns);
        assert!(exact.chi_square <= delta.chi_square + 1e-9, "seed {seed}");
    }
}

#[test]
fn standard_error_shrinks_as_inverse_root_counts() {
    let w = BIN_PS as f64 * 1e-3;
    let irf = Kernel::gaussian(w, 0.1);
    // a fixed window isolates the effect of the count level
    let opts = FitOptions {
        window: FitWindow::Explicit { start_ns: -0.5, end_ns: 4.0 },
        ..FitOptions::default()
    };
    let mut errs = Vec::new();
    for total in [1e3, 1e4, 1e5, 1e6] {
        let m = DecayModel {
            baseline: 0.0,
            ..model(ModelKind::SingleExp, total * w / 0.44)
        };
        let e: f64 = (0..8)
            .map(|s| fit_lifetime(&synthetic(&m, &irf, s), ModelKind::SingleExp, &irf, &opts).unwrap().tau().1)
            .sum::<f64>()
            / 8.0;
        errs.push(e);
    }
    for pair in errs.windows(2) {
        let ratio = pair[0] / pair[1];
        assert!((ratio / 10f64.sqrt() - 1.0).abs() <= 0.2, "{errs:?}");
    }
}
