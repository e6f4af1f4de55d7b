use super::{analyze_pair, analyze_polarization, EmissionEvent, PhotonKind, PolarizationState};
use crate::error::{Error, Result};
use crate::polarization::Jones;
use crate::qd::{DetectorSpec, IrfKernel, Validate, Violation};
use crate::units::rep_period_ps;
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

/// Time tags recorded on one detector channel (ps).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeTagStream {
    pub channel: u8,
    pub tags: Vec<u64>,
}

impl TimeTagStream {
    pub fn new(channel: u8, tags: Vec<u64>) -> Self {
        Self { channel, tags }
    }

    /// Index of the first tag smaller than its predecessor.
    pub fn first_unsorted(&self) -> Option<usize> {
        self.tags.windows(2).position(|w| w[1] < w[0]).map(|i| i + 1)
    }

    /// Ordered and no two tags closer than `dead_time_ps`.
    pub fn is_legal(&self, dead_time_ps: u64) -> bool {
        self.tags.windows(2).all(|w| w[1] >= w[0] && w[1] - w[0] >= dead_time_ps)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// One detector behind an optional polarizer, fed by one emission line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub line: PhotonKind,
    #[serde(default)]
    pub analyzer: Option<Jones>,
    pub channel: u8,
}

/// Optical routing from the emission lines to detector channels. Photons
/// of a line with several arms are split uniformly between them, as by a
/// balanced beam splitter. A sync channel records the pulse time of every
/// pulse that produced at least one photon tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setup {
    pub arms: Vec<Arm>,
    #[serde(default)]
    pub sync_channel: Option<u8>,
}

impl Setup {
    /// Hanbury Brown–Twiss split of one line onto channels 1 and 2.
    pub fn hbt(line: PhotonKind) -> Self {
        Self {
            arms: vec![
                Arm {
                    line,
                    analyzer: None,
                    channel: 1,
                },
                Arm {
                    line,
                    analyzer: None,
                    channel: 2,
                },
            ],
            sync_channel: None,
        }
    }

    /// Biexciton line on channel 1, exciton line on channel 2.
    pub fn cross(xx_analyzer: Option<Jones>, x_analyzer: Option<Jones>) -> Self {
        Self {
            arms: vec![
                Arm {
                    line: PhotonKind::Biexciton,
                    analyzer: xx_analyzer,
                    channel: 1,
                },
                Arm {
                    line: PhotonKind::Exciton,
                    analyzer: x_analyzer,
                    channel: 2,
                },
            ],
            sync_channel: None,
        }
    }

    /// Both lines, each on its own channel, plus a laser sync on channel 0.
    pub fn with_sync(mut self, channel: u8) -> Self {
        self.sync_channel = Some(channel);
        self
    }

    pub fn channels(&self) -> Vec<u8> {
        let mut c: Vec<u8> = self.arms.iter().map(|a| a.channel).chain(self.sync_channel).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub(crate) fn arms_for(&self, line: PhotonKind) -> impl Iterator<Item = &Arm> {
        self.arms.iter().filter(move |a| a.line == line)
    }

    pub(crate) fn has_line(&self, line: PhotonKind) -> bool {
        self.arms_for(line).next().is_some()
    }
}

impl Validate for Setup {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.arms.is_empty() {
            v.push(Violation {
                field: "setup",
                message: "needs at least one detector arm".into(),
            });
        }
        let n = self.arms.len() + usize::from(self.sync_channel.is_some());
        if self.channels().len() != n {
            v.push(Violation {
                field: "setup",
                message: "channel ids must be distinct".into(),
            });
        }
        for a in &self.arms {
            if let Some(j) = &a.analyzer {
                if (j.norm_sqr() - 1.0).abs() > 1e-9 {
                    v.push(Violation {
                        field: "analyzer",
                        message: format!("channel {} analyzer must be unit-norm", a.channel),
                    });
                }
            }
        }
        v
    }
}

/// Timing jitter drawn from the detector response.
pub(crate) enum Jitter {
    None,
    Gaussian(Normal<f64>),
    Tabulated {
        index: WeightedIndex<f64>,
        bin_width_ps: f64,
        origin: usize,
    },
}

impl Jitter {
    pub(crate) fn new(irf: &IrfKernel) -> Result<Self> {
        Ok(match irf {
            IrfKernel::Gaussian { sigma_ps } if *sigma_ps == 0.0 => Jitter::None,
            IrfKernel::Gaussian { sigma_ps } => {
                Jitter::Gaussian(Normal::new(0.0, *sigma_ps).map_err(|e| Error::Invalid(vec![e.to_string()]))?)
            }
            IrfKernel::Tabulated {
                bin_width_ps,
                origin,
                weights,
            } => Jitter::Tabulated {
                index: WeightedIndex::new(weights).map_err(|e| Error::Invalid(vec![format!("irf_kernel {e}")]))?,
                bin_width_ps: *bin_width_ps,
                origin: *origin,
            },
        })
    }

    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Jitter::None => 0.0,
            Jitter::Gaussian(n) => n.sample(rng),
            Jitter::Tabulated {
                index,
                bin_width_ps,
                origin,
            } => {
                let k = index.sample(rng) as f64 - *origin as f64;
                (k + rng.random::<f64>() - 0.5) * bin_width_ps
            }
        }
    }
}

fn to_tag(t_ps: f64) -> u64 {
    if t_ps <= 0.0 {
        0
    } else {
        t_ps.round() as u64
    }
}

/// Shared per-pulse detection step. `detected` gives each event's
/// efficiency outcome; when absent it is drawn here.
pub(crate) struct PulseDetector<'a> {
    pub setup: &'a Setup,
    pub efficiency: f64,
    pub jitter: Jitter,
    pub period_ps: f64,
}

impl PulseDetector<'_> {
    fn route<R: Rng + ?Sized>(&self, rng: &mut R, line: PhotonKind) -> Option<&Arm> {
        let n = self.setup.arms_for(line).count();
        match n {
            0 => None,
            1 => self.setup.arms_for(line).next(),
            _ => self.setup.arms_for(line).nth(rng.random_range(0..n)),
        }
    }

    /// Appends (channel, tag) records for the events of one pulse.
    pub(crate) fn detect<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        events: &[EmissionEvent],
        detected: Option<&[bool]>,
        out: &mut Vec<(u8, u64)>,
    ) {
        let Some(first) = events.first() else { return };
        let pulse_ps = first.pulse_index as f64 * self.period_ps;
        let arms: Vec<Option<&Arm>> = events.iter().map(|e| self.route(rng, e.kind)).collect();

        let mut passed = vec![false; events.len()];
        let mut i = 0;
        while i < events.len() {
            let partner = match (events[i].polarization, events.get(i + 1)) {
                (PolarizationState::Pair(p), Some(next))
                    if events[i].kind == PhotonKind::Biexciton && next.polarization == PolarizationState::Pair(p) =>
                {
                    Some(p)
                }
                _ => None,
            };
            if let Some(pair) = partner {
                let a = arms[i].and_then(|a| a.analyzer);
                let b = arms[i + 1].and_then(|a| a.analyzer);
                let pa = a.map_or(1.0, |j| analyze_polarization(&events[i], &j));
                let pb = b.map_or(1.0, |j| analyze_polarization(&events[i + 1], &j));
                let joint = match (a, b) {
                    (Some(a), Some(b)) => analyze_pair(&pair, &a, &b),
                    _ => pa * pb,
                };
                passed[i] = rng.random::<f64>() < pa;
                let cond = if passed[i] {
                    joint / pa
                } else if pa < 1.0 {
                    (pb - joint) / (1.0 - pa)
                } else {
                    0.0
                };
                passed[i + 1] = rng.random::<f64>() < cond;
                i += 2;
            } else {
                let p = arms[i]
                    .and_then(|a| a.analyzer)
                    .map_or(1.0, |j| analyze_polarization(&events[i], &j));
                passed[i] = p >= 1.0 || rng.random::<f64>() < p;
                i += 1;
            }
        }

        let before = out.len();
        for (k, e) in events.iter().enumerate() {
            let Some(arm) = arms[k] else { continue };
            let hit = match detected {
                Some(mask) => mask[k],
                None => self.efficiency >= 1.0 || rng.random::<f64>() < self.efficiency,
            };
            if hit && passed[k] {
                let t = pulse_ps + e.emit_time_ns * 1e3 + self.jitter.sample(rng);
                out.push((arm.channel, to_tag(t)));
            }
        }
        if out.len() > before {
            if let Some(sync) = self.setup.sync_channel {
                out.push((sync, to_tag(pulse_ps + self.jitter.sample(rng))));
            }
        }
    }
}

/// Adds Poissonian dark counts over `[0, duration_ps)`.
pub(crate) fn add_darks<R: Rng + ?Sized>(rng: &mut R, rate_hz: f64, duration_ps: f64, tags: &mut Vec<u64>) {
    let mean = rate_hz * duration_ps * 1e-12;
    if mean <= 0.0 {
        return;
    }
    let n = Poisson::new(mean).expect("finite positive mean").sample(rng) as u64;
    tags.extend((0..n).map(|_| (rng.random::<f64>() * duration_ps) as u64));
}

/// Non-paralyzable dead time on a sorted stream.
pub(crate) fn dead_time_filter(tags: &mut Vec<u64>, dead_time_ps: u64) {
    if dead_time_ps == 0 || tags.is_empty() {
        return;
    }
    let mut last = tags[0];
    let mut keep = 1;
    for k in 1..tags.len() {
        if tags[k] - last >= dead_time_ps {
            tags[keep] = tags[k];
            last = tags[k];
            keep += 1;
        }
    }
    tags.truncate(keep);
}

pub(crate) fn dead_time_ps(detector: &DetectorSpec) -> u64 {
    (detector.dead_time_ns * 1e3).round() as u64
}

/// Splits (channel, tag) records into per-channel streams, sorted, with
/// darks on the photon channels and dead time applied.
pub(crate) fn assemble<R: Rng + ?Sized>(
    rng: &mut R,
    records: Vec<(u8, u64)>,
    setup: &Setup,
    detector: &DetectorSpec,
    duration_ps: f64,
) -> Vec<TimeTagStream> {
    let dead = dead_time_ps(detector);
    let mut streams: Vec<TimeTagStream> = setup.channels().into_iter().map(|c| TimeTagStream::new(c, Vec::new())).collect();
    for (c, t) in records {
        if (t as f64) < duration_ps {
            let s = streams.iter_mut().find(|s| s.channel == c).expect("routed channel");
            s.tags.push(t);
        }
    }
    for s in &mut streams {
        if Some(s.channel) != setup.sync_channel {
            add_darks(rng, detector.dark_rate_hz, duration_ps, &mut s.tags);
        }
        s.tags.sort_unstable();
        if Some(s.channel) != setup.sync_channel {
            dead_time_filter(&mut s.tags, dead);
        }
    }
    streams
}

/// Passes emission events through the routing, polarizers and detectors.
/// Events must be grouped by pulse with each cascade's biexciton photon
/// directly before its exciton partner, as produced by `sample_cycle`.
pub fn apply_detector<R: Rng + ?Sized>(
    events: &[EmissionEvent],
    setup: &Setup,
    detector: &DetectorSpec,
    duration_s: f64,
    rep_rate_mhz: f64,
    rng: &mut R,
) -> Result<Vec<TimeTagStream>> {
    let mut problems: Vec<String> = detector.validate().iter().map(|v| v.to_string()).collect();
    problems.extend(setup.validate().iter().map(|v| v.to_string()));
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        problems.push(format!("duration must be > 0 (got {duration_s})"));
    }
    if !(rep_rate_mhz > 0.0 && rep_rate_mhz.is_finite()) {
        problems.push(format!("rep_rate must be > 0 (got {rep_rate_mhz})"));
    }
    if !problems.is_empty() {
        return Err(Error::Invalid(problems));
    }
    let pd = PulseDetector {
        setup,
        efficiency: detector.efficiency,
        jitter: Jitter::new(&detector.irf)?,
        period_ps: rep_period_ps(rep_rate_mhz),
    };
    let mut records = Vec::new();
    let mut start = 0;
    while start < events.len() {
        let p = events[start].pulse_index;
        let end = start + events[start..].iter().take_while(|e| e.pulse_index == p).count();
        pd.detect(rng, &events[start..end], None, &mut records);
        start = end;
    }
    Ok(assemble(rng, records, setup, detector, duration_s * 1e12))
}
