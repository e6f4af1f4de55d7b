mod common;

use common::brute_force_histogram;
use qdcascade::correlator::{coincidences, g2_zero, peak_integrate, CorrelationHistogram, G2Method};
use qdcascade::emission::TimeTagStream;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

fn poisson_tags(rng: &mut ChaCha8Rng, rate_hz: f64, duration_ps: f64) -> Vec<u64> {
    let gap = Exp::new(rate_hz * 1e-12).unwrap();
    let mut t = 0.0;
    let mut v = Vec::new();
    loop {
        t += gap.sample(rng);
        if t >= duration_ps {
            return v;
        }
        v.push(t as u64);
    }
}

#[test]
fn sweep_equals_enumeration_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..200 {
        let n = rng.random_range(0..300);
        let m = rng.random_range(0..300);
        let span = rng.random_range(1_000u64..200_000);
        let mut a: Vec<u64> = (0..n).map(|_| rng.random_range(0..span)).collect();
        let mut b: Vec<u64> = (0..m).map(|_| rng.random_range(0..span)).collect();
        a.sort_unstable();
        b.sort_unstable();
        let w = rng.random_range(1u64..500);
        let range_ns = rng.random_range(0.0..20.0);
        let h = coincidences(&TimeTagStream::new(1, a.clone()), &TimeTagStream::new(2, b.clone()), w, range_ns).unwrap();
        assert_eq!(h.counts, brute_force_histogram(&a, &b, w, h.half_bins), "case {case}");
    }
}

#[test]
fn accidentals_of_independent_streams() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (r1, r2, t_s) = (2e4, 3e4, 20.0);
    let a = poisson_tags(&mut rng, r1, t_s * 1e12);
    let b = poisson_tags(&mut rng, r2, t_s * 1e12);
    let h = coincidences(&TimeTagStream::new(1, a), &TimeTagStream::new(2, b), 50, 50.0).unwrap();
    let window_ns = 6.0;
    let counted = peak_integrate(&h, 0.0, window_ns).unwrap() as f64;
    let bins = (2.0 * window_ns * 1e3 / 50.0).round() + 1.0;
    let expected = r1 * r2 * t_s * bins * 50e-12;
    assert!((counted - expected).abs() <= 5.0 * expected.sqrt(), "{counted} vs {expected}");
}

#[test]
fn csv_round_trip_keeps_metadata() {
    let mut h = CorrelationHistogram::zeros(25, 1.0).unwrap();
    h.counts[3] = 9;
    h.rep_period_ns = 12.5;
    h.duration_s = 3.0;
    h.seed = Some(99);
    h.method = Some("hbt_x".into());
    assert_eq!(CorrelationHistogram::from_csv(&h.to_csv()).unwrap(), h);
}

#[test]
fn side_peak_normalization_of_uniform_comb() {
    // equal peaks everywhere: g²(0) = 1
    let mut h = CorrelationHistogram::zeros(50, 50.0).unwrap();
    for k in 0..h.len() {
        if h.tau_ps(k).rem_euclid(12_500) == 0 {
            h.counts[k] = 100;
        }
    }
    h.rep_period_ns = 12.5;
    let g = g2_zero(&h, 12.5, G2Method::SidePeak, 3, 6.0).unwrap();
    assert!((g.value - 1.0).abs() < 1e-12);
    assert!(g.valid_only_if_unpolarized);
}
