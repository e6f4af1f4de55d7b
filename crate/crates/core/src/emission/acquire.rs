use super::detector::{assemble, Jitter, PulseDetector};
use super::{emit, sample_pulses, substream, CycleOptions, EmissionEvent, Outcome, PhotonKind, Setup, TimeTagStream};
use crate::dynamics::ChannelSplit;
use crate::error::{Error, Result};
use crate::polarization::Jones;
use crate::qd::{DetectorSpec, QdParameters, Validate};
use crate::units::rep_period_ps;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const DOMAIN_BLOCK: u64 = 0x626c_6f63_6b00_0002;
const DOMAIN_DARK: u64 = 0x6461_726b_0000_0003;
const BLOCK_PULSES: u64 = 1 << 22;

/// A complete photon-counting run: source, routing, detectors, duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    pub split: ChannelSplit,
    pub qd: QdParameters,
    pub laser_polarization: Jones,
    pub cycle: CycleOptions,
    pub setup: Setup,
    pub detector: DetectorSpec,
    pub duration_s: f64,
    pub rep_rate_mhz: f64,
}

impl Acquisition {
    pub fn n_pulses(&self) -> u64 {
        (self.duration_s * self.rep_rate_mhz * 1e6).floor() as u64
    }

    fn check(&self) -> Result<()> {
        let mut p: Vec<String> = self.qd.validate().iter().map(|v| v.to_string()).collect();
        p.extend(self.detector.validate().iter().map(|v| v.to_string()));
        p.extend(self.setup.validate().iter().map(|v| v.to_string()));
        if !self.split.is_valid() {
            p.push("channel_split must be non-negative and sum to at most 1".into());
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            p.push(format!("duration must be > 0 (got {})", self.duration_s));
        }
        if !(self.rep_rate_mhz > 0.0 && self.rep_rate_mhz.is_finite()) {
            p.push(format!("rep_rate must be > 0 (got {})", self.rep_rate_mhz));
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(p))
        }
    }
}

/// Detection patterns that leave at least one photon tag, with weights.
struct ActiveCategories {
    weights: [f64; 4],
    total: f64,
}

impl ActiveCategories {
    // cascade: XX only, X only, both; phonon exciton detected
    fn new(split: &ChannelSplit, eta_xx: f64, eta_x: f64) -> Self {
        let pxx = split.xx_total();
        let weights = [
            pxx * eta_xx * (1.0 - eta_x),
            pxx * (1.0 - eta_xx) * eta_x,
            pxx * eta_xx * eta_x,
            split.x_phonon * eta_x,
        ];
        Self {
            total: weights.iter().sum(),
            weights,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let mut u = rng.random::<f64>() * self.total;
        for (k, w) in self.weights.iter().enumerate() {
            if u < *w {
                return k;
            }
            u -= w;
        }
        3
    }
}

/// Simulates a time-tagged acquisition. Pulses that leave no photon at
/// the detectors are skipped geometrically, so long low-efficiency runs
/// cost time proportional to the detected photons only. Blocks of pulses
/// draw from their own generators, so the result depends on the seed
/// alone and not on the thread count.
pub fn acquire(acq: &Acquisition, seed: u64) -> Result<Vec<TimeTagStream>> {
    acq.check()?;
    let n_pulses = acq.n_pulses();
    let pd = PulseDetector {
        setup: &acq.setup,
        efficiency: acq.detector.efficiency,
        jitter: Jitter::new(&acq.detector.irf)?,
        period_ps: rep_period_ps(acq.rep_rate_mhz),
    };
    let n_blocks = n_pulses.div_ceil(BLOCK_PULSES);

    let records: Vec<Vec<(u8, u64)>> = if acq.cycle.allow_reexcitation {
        (0..n_blocks)
            .into_par_iter()
            .map(|b| dense_block(acq, &pd, seed, b, n_pulses))
            .collect()
    } else {
        let eta = acq.detector.efficiency;
        let eta_xx = if acq.setup.has_line(PhotonKind::Biexciton) { eta } else { 0.0 };
        let eta_x = if acq.setup.has_line(PhotonKind::Exciton) { eta } else { 0.0 };
        let cats = ActiveCategories::new(&acq.split, eta_xx, eta_x);
        (0..n_blocks)
            .into_par_iter()
            .map(|b| sparse_block(acq, &pd, &cats, seed, b, n_pulses))
            .collect()
    };
    let records: Vec<(u8, u64)> = records.into_iter().flatten().collect();
    let mut rng = substream(seed, DOMAIN_DARK, 0);
    Ok(assemble(&mut rng, records, &acq.setup, &acq.detector, acq.duration_s * 1e12))
}

fn block_range(b: u64, n_pulses: u64) -> (u64, u64) {
    let start = b * BLOCK_PULSES;
    (start, (start + BLOCK_PULSES).min(n_pulses))
}

fn sparse_block(
    acq: &Acquisition,
    pd: &PulseDetector,
    cats: &ActiveCategories,
    seed: u64,
    b: u64,
    n_pulses: u64,
) -> Vec<(u8, u64)> {
    let mut out = Vec::new();
    let q = cats.total;
    if q <= 0.0 {
        return out;
    }
    let (start, end) = block_range(b, n_pulses);
    let mut rng = substream(seed, DOMAIN_BLOCK, b);
    let log_miss = (1.0 - q).ln();
    let mut events: Vec<EmissionEvent> = Vec::with_capacity(2);
    let mut pulse = start;
    loop {
        if q < 1.0 {
            let u: f64 = 1.0 - rng.random::<f64>();
            let skip = (u.ln() / log_miss).floor();
            if skip >= (end - pulse) as f64 {
                break;
            }
            pulse += skip as u64;
        }
        if pulse >= end {
            break;
        }
        events.clear();
        let (outcome, mask): (Outcome, &[bool]) = match cats.draw(&mut rng) {
            0 => (Outcome::Cascade, &[true, false]),
            1 => (Outcome::Cascade, &[false, true]),
            2 => (Outcome::Cascade, &[true, true]),
            _ => (Outcome::PhononExciton, &[true]),
        };
        emit(
            &mut rng,
            outcome,
            pulse,
            0.0,
            &acq.qd,
            &acq.laser_polarization,
            &acq.cycle,
            &mut events,
        );
        pd.detect(&mut rng, &events, Some(mask), &mut out);
        pulse += 1;
    }
    out
}

fn dense_block(acq: &Acquisition, pd: &PulseDetector, seed: u64, b: u64, n_pulses: u64) -> Vec<(u8, u64)> {
    let (start, end) = block_range(b, n_pulses);
    let events = sample_pulses(
        seed,
        start,
        end - start,
        &acq.split,
        &acq.qd,
        &acq.laser_polarization,
        &acq.cycle,
    );
    let mut rng = substream(seed, DOMAIN_BLOCK, b);
    let mut out = Vec::new();
    let mut i = 0;
    while i < events.len() {
        let p = events[i].pulse_index;
        let j = i + events[i..].iter().take_while(|e| e.pulse_index == p).count();
        pd.detect(&mut rng, &events[i..j], None, &mut out);
        i = j;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hbt_run(eta: f64, dark: f64) -> Acquisition {
        Acquisition {
            split: ChannelSplit::new(0.6, 0.3, 0.05),
            qd: QdParameters::representative(),
            laser_polarization: Jones::horizontal(),
            cycle: CycleOptions::default(),
            setup: Setup::hbt(PhotonKind::Exciton),
            detector: DetectorSpec {
                efficiency: eta,
                dark_rate_hz: dark,
                ..DetectorSpec::spad()
            },
            duration_s: 0.5,
            rep_rate_mhz: 80.0,
        }
    }

    #[test]
    fn detected_rate_matches_expectation() {
        let acq = hbt_run(0.01, 0.0);
        let s = acquire(&acq, 1).unwrap();
        let n: usize = s.iter().map(|s| s.len()).sum();
        let expect = acq.n_pulses() as f64 * 0.95 * 0.01;
        assert!((n as f64 - expect).abs() < 5.0 * expect.sqrt(), "{n} vs {expect}");
    }

    #[test]
    fn same_seed_same_streams() {
        let acq = hbt_run(0.02, 40.0);
        let a = acquire(&acq, 42).unwrap();
        let b = acquire(&acq, 42).unwrap();
        assert_eq!(a, b);
        let c = acquire(&acq, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let acq = Acquisition {
            duration_s: 0.2,
            ..hbt_run(0.05, 40.0)
        };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| acquire(&acq, 9).unwrap());
        let b = four.install(|| acquire(&acq, 9).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn sparse_and_dense_agree_in_rate() {
        let mut acq = hbt_run(0.2, 0.0);
        acq.duration_s = 0.02;
        acq.detector.dead_time_ns = 0.0;
        let sparse: usize = acquire(&acq, 5).unwrap().iter().map(|s| s.len()).sum();
        acq.cycle.allow_reexcitation = true;
        acq.cycle.pulse_window_ns = 0.0;
        let dense: usize = acquire(&acq, 5).unwrap().iter().map(|s| s.len()).sum();
        let d = sparse as f64 - dense as f64;
        assert!(d.abs() < 5.0 * ((sparse + dense) as f64).sqrt(), "{sparse} {dense}");
    }

    #[test]
    fn invalid_split_rejected() {
        let mut acq = hbt_run(0.1, 0.0);
        acq.split = ChannelSplit::new(0.9, 0.9, 0.0);
        assert!(matches!(acquire(&acq, 0), Err(Error::Invalid(_))));
    }
}
