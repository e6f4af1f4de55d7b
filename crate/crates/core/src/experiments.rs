//! End-to-end pipelines, one per experiment kind.

use crate::correlator::{coincidences, g2_zero, CorrelationHistogram, G2Method};
use crate::dynamics::{self, area_for_two_photon_area, ChannelSplit, EvolveOptions, SweepAxis};
use crate::emission::{
    acquire, analyze_pair, analyze_polarization, cascade_lines, integrated_pair_state, sample_pulses, substream,
    synth_spectrum, tagfile, Acquisition, CycleOptions, EnergyGrid, PairState, PhotonKind, Setup, TimeTagStream,
};
use crate::error::{Error, Result, StageExt};
use crate::lifetimes::{fit_lifetime, fit_tail, FitOptions, FitResult, Kernel, ModelKind};
use crate::polarization::Jones;
use crate::qd::{LaserPulseSpec, QdParameters};
use crate::scenario::{Experiment, Scenario, TomographySource};
use crate::tomography::{
    expected_stokes, fidelity, run_tomography, run_tomography_histograms, setting_analyzers, TomographyReport,
    TwoPhotonCounts, SETTINGS,
};
use crate::units::{rep_period_ps, uev_to_rad_per_ns};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

const DOMAIN_TOMO_PAIRS: u64 = 0x746f_6d6f_0000_0010;
const DOMAIN_TOMO_TAGS: u64 = 0x746f_6d6f_0000_0011;
const DOMAIN_RUN: u64 = 0x7275_6e00_0000_0012;

/// Output file format for tabular data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::Invalid(vec![format!("unknown format {s:?} (csv or json)")])),
        }
    }
}

/// Column table with `# key=value` metadata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(name: &str, seed: u64, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            meta: vec![("seed".into(), seed.to_string())],
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(s, "# {k}={v}");
        }
        let _ = writeln!(s, "{}", self.columns.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }

    pub fn to_json(&self) -> String {
        let meta: serde_json::Map<String, Value> =
            self.meta.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
        let v = json!({"meta": meta, "columns": self.columns, "rows": self.rows});
        serde_json::to_string_pretty(&v).expect("table serializes") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Table(Table),
    Histogram { name: String, hist: CorrelationHistogram },
    /// Fixed-format file written as is; `name` includes the extension.
    Text { name: String, content: String },
    Binary { name: String, bytes: Vec<u8> },
}

impl Artifact {
    /// File name and contents in the requested format.
    pub fn render(&self, format: Format) -> (String, Vec<u8>) {
        match (self, format) {
            (Artifact::Table(t), Format::Csv) => (format!("{}.csv", t.name), t.to_csv().into_bytes()),
            (Artifact::Table(t), Format::Json) => (format!("{}.json", t.name), t.to_json().into_bytes()),
            (Artifact::Histogram { name, hist }, Format::Csv) => (format!("{name}.csv"), hist.to_csv().into_bytes()),
            (Artifact::Histogram { name, hist }, Format::Json) => (
                format!("{name}.json"),
                (serde_json::to_string_pretty(hist).expect("histogram serializes") + "\n").into_bytes(),
            ),
            (Artifact::Text { name, content }, _) => (name.clone(), content.clone().into_bytes()),
            (Artifact::Binary { name, bytes }, _) => (name.clone(), bytes.clone()),
        }
    }
}

/// A headline number and, when it has one, its acceptance status.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Headline {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass: Option<bool>,
}

impl Headline {
    fn info(name: &str, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
            error: None,
            target: None,
            pass: None,
        }
    }

    fn with_error(mut self, error: f64) -> Self {
        self.error = Some(error);
        self
    }

    fn within(name: &str, value: f64, target: f64, tol: f64) -> Self {
        Self {
            target: Some(format!("{target} ± {tol}")),
            pass: Some((value - target).abs() <= tol),
            ..Self::info(name, value)
        }
    }

    fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self {
            target: Some(format!("<= {bound}")),
            pass: Some(value <= bound),
            ..Self::info(name, value)
        }
    }

    fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Self {
            target: Some(format!(">= {bound}")),
            pass: Some(value >= bound),
            ..Self::info(name, value)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub experiment: Experiment,
    pub seed: u64,
    pub artifacts: Vec<Artifact>,
    pub headlines: Vec<Headline>,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.headlines.iter().all(|h| h.pass != Some(false))
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.artifacts.iter().find_map(|a| match a {
            Artifact::Table(t) if t.name == name => Some(t),
            _ => None,
        })
    }

    pub fn headline(&self, name: &str) -> Option<&Headline> {
        self.headlines.iter().find(|h| h.name == name)
    }
}

/// X − XX intensities, with points more than 3σ below zero clipped to
/// zero and flagged (σ = √(X + XX) for counts).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Difference {
    pub values: Vec<f64>,
    pub inconsistent: Vec<bool>,
}

pub fn x_minus_xx(x: &[f64], xx: &[f64]) -> Result<Difference> {
    if x.len() != xx.len() {
        return Err(Error::LengthMismatch(x.len(), xx.len()));
    }
    let mut values = Vec::with_capacity(x.len());
    let mut inconsistent = Vec::with_capacity(x.len());
    for (&a, &b) in x.iter().zip(xx) {
        let d = a - b;
        let sigma = (a.abs() + b.abs()).sqrt();
        let bad = d < -3.0 * sigma;
        values.push(if bad { 0.0 } else { d });
        inconsistent.push(bad);
    }
    Ok(Difference { values, inconsistent })
}

/// Derived seed, independent for each (domain, index).
fn sub_seed(seed: u64, domain: u64, index: u64) -> u64 {
    substream(seed, domain, index).next_u64()
}

/// Resonant-energy pulse template with zero area.
fn template(scn: &Scenario) -> LaserPulseSpec {
    scn.laser.pulse(&scn.qd, 0.0)
}

/// The configured pulse; the π-equivalent area when none is set.
pub fn drive_pulse(scn: &Scenario) -> Result<LaserPulseSpec> {
    let t = template(scn);
    let area = match scn.laser.pulse_area_rad {
        Some(a) => a,
        None => {
            // locate π on a linearly polarized copy, so that a circular
            // drive is compared at the same intensity
            let lin = t.with_polarization(Jones::horizontal());
            dynamics::find_pi_area(&scn.qd, &lin, &scn.phonon, &EvolveOptions::default())?
        }
    };
    Ok(t.with_area(area))
}

/// Preparation probabilities of the configured pulse.
pub fn source_split(scn: &Scenario) -> Result<ChannelSplit> {
    let pulse = drive_pulse(scn)?;
    Ok(dynamics::evolve(&scn.qd, &pulse, &scn.phonon, &EvolveOptions::default())?.channel_split)
}

pub fn cycle_options(scn: &Scenario) -> CycleOptions {
    CycleOptions {
        phase_offset_rad: scn.emission.phase_offset_rad,
        allow_reexcitation: scn.emission.allow_reexcitation,
        ..CycleOptions::default()
    }
}

pub fn acquisition(scn: &Scenario, split: ChannelSplit, setup: Setup, duration_s: f64) -> Acquisition {
    Acquisition {
        split,
        qd: scn.qd.clone(),
        laser_polarization: scn.laser.polarization,
        cycle: cycle_options(scn),
        setup,
        detector: scn.detector.clone(),
        duration_s,
        rep_rate_mhz: scn.laser.rep_rate_mhz,
    }
}

fn stream(streams: &[TimeTagStream], channel: u8) -> TimeTagStream {
    streams
        .iter()
        .find(|s| s.channel == channel)
        .cloned()
        .unwrap_or_else(|| TimeTagStream::new(channel, Vec::new()))
}

fn correlate(scn: &Scenario, streams: &[TimeTagStream], start: u8, stop: u8, seed: u64) -> Result<CorrelationHistogram> {
    let c = &scn.correlation;
    let mut h = coincidences(&stream(streams, start), &stream(streams, stop), c.bin_width_ps, c.range_ns)?;
    h.duration_s = scn.duration();
    h.rep_period_ns = rep_period_ps(scn.laser.rep_rate_mhz) * 1e-3;
    h.seed = Some(seed);
    Ok(h)
}

pub fn run(scn: &Scenario) -> Result<RunOutput> {
    scn.check()?;
    match scn.experiment {
        Experiment::RabiSweep => rabi_sweep(scn),
        Experiment::DetuningSweep => detuning_sweep(scn),
        Experiment::Tomography => tomography(scn),
        Experiment::Hbt => hbt(scn),
        Experiment::Lifetime => lifetime(scn),
        Experiment::Spectrum => spectrum(scn),
        Experiment::CircularSuppression => circular_suppression(scn),
        Experiment::PolarizationScan => polarization_scan(scn),
    }
}

fn output(scn: &Scenario, artifacts: Vec<Artifact>, headlines: Vec<Headline>) -> RunOutput {
    RunOutput {
        experiment: scn.experiment,
        seed: scn.seed,
        artifacts,
        headlines,
    }
}

/// One-photon areas for two-photon areas 0..=max·π.
fn rabi_axis(scn: &Scenario, pulse: &LaserPulseSpec) -> (Vec<f64>, Vec<f64>) {
    let n = scn.rabi.points;
    let top = scn.rabi.max_two_photon_area_pi;
    let tpa: Vec<f64> = (0..n).map(|k| top * k as f64 / (n - 1) as f64).collect();
    let area = tpa.iter().map(|&a| area_for_two_photon_area(&scn.qd, pulse, a * PI)).collect();
    (tpa, area)
}

fn rabi_sweep(scn: &Scenario) -> Result<RunOutput> {
    let pulse = template(scn);
    let (tpa, area) = rabi_axis(scn, &pulse.with_polarization(Jones::horizontal()));
    let res = dynamics::sweep(&scn.qd, &pulse, &scn.phonon, &SweepAxis::PulseArea(area.clone()), &EvolveOptions::default())
        .stage("dynamics")?;
    let diff = x_minus_xx(&res.p_x_total, &res.p_xx)?;
    let mut t = Table::new("rabi_sweep", scn.seed, &[
        "two_photon_area_pi",
        "pulse_area_rad",
        "p_xx",
        "p_x_total",
        "x_minus_xx",
        "xx_coherent",
        "xx_phonon",
        "x_phonon",
    ])
    .meta("laser_detuning_mev", pulse.center_energy_mev - scn.qd.tpe_resonance_mev());
    for i in 0..area.len() {
        let s = res.splits[i];
        t.rows.push(vec![tpa[i], area[i], res.p_xx[i], res.p_x_total[i], diff.values[i], s.xx_coherent, s.xx_phonon, s.x_phonon]);
    }

    // the π point itself, refined off-grid
    let pi = dynamics::find_pi_area(&scn.qd, &pulse, &scn.phonon, &EvolveOptions::default()).stage("dynamics")?;
    let split = dynamics::evolve(&scn.qd, &pulse.with_area(pi), &scn.phonon, &EvolveOptions::default())
        .stage("dynamics")?
        .channel_split;
    let headlines = vec![
        Headline::within("pi_pulse_p_xx", split.xx_total(), 0.65, 0.05),
        Headline::within("pi_pulse_x_minus_xx", split.x_phonon, 0.35, 0.05),
        Headline::info("pi_pulse_area_rad", pi),
        Headline::info("rabi_visibility", dynamics::rabi_visibility(&res.p_xx)),
    ];
    Ok(output(scn, vec![Artifact::Table(t)], headlines))
}

/// Rabi visibility of a sweep at a fixed laser detuning.
pub fn detuned_visibility(scn: &Scenario, detuning_mev: f64) -> Result<f64> {
    let resonant = template(scn).with_center_energy(scn.qd.tpe_resonance_mev());
    let (_, area) = rabi_axis(scn, &resonant.with_polarization(Jones::horizontal()));
    let pulse = resonant.with_center_energy(scn.qd.tpe_resonance_mev() + detuning_mev);
    let res = dynamics::sweep(&scn.qd, &pulse, &scn.phonon, &SweepAxis::PulseArea(area), &EvolveOptions::default())?;
    Ok(dynamics::rabi_visibility(&res.p_xx))
}

fn detuning_sweep(scn: &Scenario) -> Result<RunOutput> {
    let d = &scn.detuning;
    let axis: Vec<f64> = (0..d.points)
        .map(|k| d.min_mev + (d.max_mev - d.min_mev) * k as f64 / (d.points - 1) as f64)
        .collect();
    let mut resonant = scn.clone();
    resonant.laser.center_energy_mev = None;
    resonant.laser.detuning_mev = 0.0;
    let pulse = drive_pulse(&resonant).stage("dynamics")?;
    let res = dynamics::sweep(&scn.qd, &pulse, &scn.phonon, &SweepAxis::LaserDetuning(axis.clone()), &EvolveOptions::default())
        .stage("dynamics")?;
    let mut t = Table::new("detuning_sweep", scn.seed, &["laser_detuning_mev", "p_xx", "p_x_total", "xx_coherent", "xx_phonon", "x_phonon"])
        .meta("pulse_area_rad", pulse.pulse_area_rad);
    for (i, &a) in axis.iter().enumerate() {
        let s = res.splits[i];
        t.rows.push(vec![a, res.p_xx[i], res.p_x_total[i], s.xx_coherent, s.xx_phonon, s.x_phonon]);
    }
    let mut headlines = Vec::new();
    for (name, det) in [("rabi_visibility_plus_0.175_mev", 0.175), ("rabi_visibility_minus_0.185_mev", -0.185)] {
        let v = detuned_visibility(scn, det).stage("dynamics")?;
        headlines.push(Headline::at_most(name, v, 0.1));
    }
    headlines.push(Headline::info("rabi_visibility_resonant", detuned_visibility(scn, 0.0).stage("dynamics")?));
    Ok(output(scn, vec![Artifact::Table(t)], headlines))
}

/// Cascade pair with the emitted exciton's delay drawn from its lifetime.
fn sample_pair<R: Rng + ?Sized>(rng: &mut R, qd: &QdParameters, decay: &Exp<f64>) -> PairState {
    let delay = decay.sample(rng);
    PairState {
        precession_phase: uev_to_rad_per_ns(qd.fss_uev) * delay,
        coherent: rng.random::<f64>() < (-delay / qd.cross_dephasing_time_ns).exp(),
    }
}

/// Pair-level tomography: `pairs_per_setting` cascade pairs analyzed in
/// each of the twelve settings, each pair passing with its Born-rule
/// probability.
pub fn simulate_pair_counts(qd: &QdParameters, pairs_per_setting: u64, duration_s: f64, seed: u64) -> TwoPhotonCounts {
    let decay = Exp::new(1.0 / qd.exciton_lifetime_ns).expect("validated lifetime");
    let counts: Vec<u64> = SETTINGS
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let (a, b) = setting_analyzers(s).expect("known setting");
            let mut rng = substream(seed, DOMAIN_TOMO_PAIRS, k as u64);
            (0..pairs_per_setting)
                .filter(|_| {
                    let pair = sample_pair(&mut rng, qd, &decay);
                    rng.random::<f64>() < analyze_pair(&pair, &a, &b)
                })
                .count() as u64
        })
        .collect();
    TwoPhotonCounts::new(counts.try_into().expect("twelve settings"), duration_s)
}

/// Twelve time-tag acquisitions, one per setting, each correlated XX → X.
pub fn simulate_tag_tomography(
    scn: &Scenario,
    split: ChannelSplit,
) -> Result<(TomographyReport, BTreeMap<String, CorrelationHistogram>)> {
    let mut hists = BTreeMap::new();
    for (k, s) in SETTINGS.iter().enumerate() {
        let (a, b) = setting_analyzers(s).expect("known setting");
        let seed = sub_seed(scn.seed, DOMAIN_TOMO_TAGS, k as u64);
        let acq = acquisition(scn, split, Setup::cross(Some(a), Some(b)), scn.duration());
        let streams = acquire(&acq, seed).stage("emission")?;
        let mut h = correlate(scn, &streams, 1, 2, seed).stage("correlation")?;
        h.method = Some(format!("setting={s}"));
        hists.insert(s.to_string(), h);
    }
    let report = run_tomography_histograms(&hists, scn.tomography.window_ns, scn.correlation.side_peaks).stage("tomography")?;
    Ok((report, hists))
}

fn tomography(scn: &Scenario) -> Result<RunOutput> {
    let ts = &scn.tomography;
    let mut artifacts = Vec::new();
    let mut headlines = Vec::new();
    let report = if let Some(path) = &ts.counts_file {
        let text = std::fs::read_to_string(path).stage("input")?;
        let counts = TwoPhotonCounts::from_csv(&text).stage("input")?;
        let r = run_tomography(&counts, ts.window_ns).stage("tomography")?;
        headlines.push(Headline {
            target: Some("f - error > 0.5".into()),
            pass: Some(r.fidelity.entangled),
            ..Headline::info("fidelity", r.fidelity.value).with_error(r.fidelity.error)
        });
        r
    } else {
        let r = match ts.source {
            TomographySource::Pairs => {
                let counts = simulate_pair_counts(&scn.qd, ts.pairs_per_setting, scn.duration(), scn.seed);
                run_tomography(&counts, ts.window_ns).stage("tomography")?
            }
            TomographySource::TimeTags => {
                let split = source_split(scn).stage("dynamics")?;
                let (r, hists) = simulate_tag_tomography(scn, split)?;
                for (s, h) in hists {
                    artifacts.push(Artifact::Histogram {
                        name: format!("histogram_{s}"),
                        hist: h,
                    });
                }
                r
            }
        };
        let rho = integrated_pair_state(scn.qd.fss_uev, scn.qd.exciton_lifetime_ns, scn.qd.cross_dephasing_time_ns);
        let expected = fidelity(&expected_stokes(&rho)).value;
        headlines.push(Headline {
            target: Some(format!("{expected:.4} ± 3 sigma")),
            pass: Some((r.fidelity.value - expected).abs() <= 3.0 * r.fidelity.error),
            ..Headline::info("fidelity", r.fidelity.value).with_error(r.fidelity.error)
        });
        headlines.push(Headline::info("fidelity_closed_form", expected));
        r
    };
    let counts = TwoPhotonCounts::from_entries(
        &report
            .counts
            .iter()
            .map(|(s, &n)| (s.clone(), (n, report.duration_s)))
            .collect(),
    )?;
    let mut header = format!("# seed={}\n# window_ns={}\n", scn.seed, report.window_ns);
    header.push_str(&counts.to_csv());
    artifacts.insert(0, Artifact::Text {
        name: "tomography_counts.csv".into(),
        content: header,
    });
    artifacts.insert(1, Artifact::Text {
        name: "tomography_report.json".into(),
        content: report.to_json() + "\n",
    });
    for (name, m) in ["s33", "s11", "s22", "s30", "s03"].iter().zip(report.stokes.values().iter().zip(report.stokes.errors())) {
        headlines.push(Headline::info(name, *m.0).with_error(m.1));
    }
    Ok(output(scn, artifacts, headlines))
}

fn g2_headlines(h: &CorrelationHistogram, scn: &Scenario, bound: f64) -> Result<Vec<Headline>> {
    let c = &scn.correlation;
    let side = g2_zero(h, h.rep_period_ns, G2Method::SidePeak, c.side_peaks, c.window_ns)?;
    let raw = g2_zero(h, h.rep_period_ns, G2Method::RawCounts, c.side_peaks, c.window_ns)?;
    let mean = side.peak.side_peak_mean.unwrap_or(0.0);
    Ok(vec![
        Headline::at_most("g2_zero", side.value, bound)
            .with_error(if mean > 0.0 { (raw.value.max(1.0)).sqrt() / mean } else { 0.0 }),
        Headline::info("center_peak_counts", raw.value),
        Headline::info("side_peak_mean_counts", mean),
    ])
}

fn hbt(scn: &Scenario) -> Result<RunOutput> {
    let split = source_split(scn).stage("dynamics")?;
    let acq = acquisition(scn, split, Setup::hbt(scn.hbt.line), scn.duration());
    let streams = acquire(&acq, scn.seed).stage("emission")?;
    let mut h = correlate(scn, &streams, 1, 2, scn.seed).stage("correlation")?;
    h.method = Some(format!("hbt_{}", line_name(scn.hbt.line)));
    let bound = if scn.detector.dark_rate_hz > 0.0 { 0.05 } else { 0.01 };
    let mut headlines = g2_headlines(&h, scn, bound).stage("correlation")?;
    for s in &streams {
        headlines.push(Headline::info(&format!("rate_channel_{}_hz", s.channel), s.len() as f64 / scn.duration()));
    }
    let mut artifacts = vec![Artifact::Histogram {
        name: "hbt_histogram".into(),
        hist: h,
    }];
    push_tags(scn, &streams, &mut artifacts);
    Ok(output(scn, artifacts, headlines))
}

fn line_name(k: PhotonKind) -> &'static str {
    match k {
        PhotonKind::Biexciton => "xx",
        PhotonKind::Exciton => "x",
    }
}

fn push_tags(scn: &Scenario, streams: &[TimeTagStream], artifacts: &mut Vec<Artifact>) {
    if scn.save_time_tags {
        artifacts.push(Artifact::Binary {
            name: "time_tags.qtt".into(),
            bytes: tagfile::to_binary(streams),
        });
    }
}

/// The three lifetime procedures on sync → XX, XX → X and sync → X.
pub struct LifetimeFits {
    pub biexciton: FitResult,
    pub exciton_flank: FitResult,
    pub exciton_laser: FitResult,
}

/// Runs the three fits. `irf` is the per-photon timing kernel; the sync
/// is taken as exact.
pub fn fit_lifetimes(
    sync_xx: &CorrelationHistogram,
    xx_x: &CorrelationHistogram,
    sync_x: &CorrelationHistogram,
    irf: &Kernel,
) -> Result<LifetimeFits> {
    let biexciton = fit_lifetime(sync_xx, ModelKind::SingleExp, irf, &FitOptions::default()).stage("biexciton fit")?;
    let both = irf.convolve(irf)?;
    let exciton_flank = fit_lifetime(xx_x, ModelKind::SingleExp, &both, &FitOptions::default()).stage("cascade flank fit")?;
    let exciton_laser = fit_lifetime(
        sync_x,
        ModelKind::DoubleExpCascade,
        irf,
        &FitOptions::cascade_with_fixed_feed(biexciton.tau().0),
    )
    .stage("exciton fit")?;
    Ok(LifetimeFits {
        biexciton,
        exciton_flank,
        exciton_laser,
    })
}

fn lifetime(scn: &Scenario) -> Result<RunOutput> {
    let split = source_split(scn).stage("dynamics")?;
    let acq = acquisition(scn, split, Setup::cross(None, None).with_sync(0), scn.duration());
    let streams = acquire(&acq, scn.seed).stage("emission")?;
    let mut hists = Vec::new();
    for (name, a, b) in [("sync_xx", 0, 1), ("xx_x", 1, 2), ("sync_x", 0, 2)] {
        let mut h = correlate(scn, &streams, a, b, scn.seed).stage("correlation")?;
        h.method = Some(name.into());
        hists.push((name, h));
    }
    let w_ns = scn.correlation.bin_width_ps as f64 * 1e-3;
    let irf = Kernel::from_irf(&scn.detector.irf, w_ns).stage("lifetime fit")?;
    let fits = fit_lifetimes(&hists[0].1, &hists[1].1, &hists[2].1, &irf)?;
    let tail = fit_tail(&hists[1].1, &irf.convolve(&irf)?).ok();

    let (txx, exx) = fits.biexciton.tau();
    let (tf, ef) = fits.exciton_flank.tau();
    let (tl, el) = fits.exciton_laser.tau();
    let mut headlines = vec![
        Headline::within("tau_xx_ns", txx, scn.qd.biexciton_lifetime_ns, 0.05 * scn.qd.biexciton_lifetime_ns).with_error(exx),
        Headline::within("tau_x_flank_ns", tf, scn.qd.exciton_lifetime_ns, 0.05 * scn.qd.exciton_lifetime_ns).with_error(ef),
        Headline::within("tau_x_laser_ns", tl, scn.qd.exciton_lifetime_ns, 0.05 * scn.qd.exciton_lifetime_ns).with_error(el),
        Headline::at_most("tau_x_method_disagreement", (tf - tl).abs() / tf, 0.05),
    ];
    if let Some(t) = tail {
        headlines.push(Headline::info("tau_x_tail_ns", t.tau_ns).with_error(t.error_ns));
    }
    let mut artifacts: Vec<Artifact> = hists
        .into_iter()
        .map(|(name, hist)| Artifact::Histogram {
            name: format!("histogram_{name}"),
            hist,
        })
        .collect();
    for (name, f) in [("fit_xx", &fits.biexciton), ("fit_x_flank", &fits.exciton_flank), ("fit_x_laser", &fits.exciton_laser)] {
        artifacts.push(Artifact::Text {
            name: format!("{name}.txt"),
            content: format!("seed={}\n{}", scn.seed, f.to_text()),
        });
    }
    push_tags(scn, &streams, &mut artifacts);
    Ok(output(scn, artifacts, headlines))
}

fn spectrum(scn: &Scenario) -> Result<RunOutput> {
    let split = source_split(scn).stage("dynamics")?;
    let lines = cascade_lines(&scn.qd, &split);
    let grid = EnergyGrid::covering(&lines, 8.0, scn.spectrum.step_mev);
    let sp = synth_spectrum(&lines, &grid).stage("spectrum")?;
    let mut t = Table::new("spectrum", scn.seed, &["energy_mev", "intensity"]);
    for (e, i) in sp.energy_mev.iter().zip(&sp.intensity) {
        t.rows.push(vec![*e, *i]);
    }
    let headlines = vec![
        Headline::info("x_line_mev", lines[0].energy_mev),
        Headline::info("xx_line_mev", lines[1].energy_mev),
        Headline::info("x_over_xx_intensity", lines[0].intensity / lines[1].intensity),
    ];
    Ok(output(scn, vec![Artifact::Table(t)], headlines))
}

fn circular_suppression(scn: &Scenario) -> Result<RunOutput> {
    let pulse = drive_pulse(scn).stage("dynamics")?;
    let mut t = Table::new("circular_suppression", scn.seed, &["s1", "s2", "s3", "xx_coherent", "xx_phonon", "x_phonon"])
        .meta("pulse_area_rad", pulse.pulse_area_rad);
    let pols = [scn.laser.polarization, Jones::horizontal(), Jones::diagonal(), Jones::right(), Jones::left()];
    let splits = pols
        .par_iter()
        .map(|p| dynamics::evolve(&scn.qd, &pulse.with_polarization(*p), &scn.phonon, &EvolveOptions::default()))
        .collect::<Result<Vec<_>>>()
        .stage("dynamics")?;
    for (p, tr) in pols.iter().zip(&splits) {
        let [s1, s2, s3] = p.stokes();
        let s = tr.channel_split;
        t.rows.push(vec![s1, s2, s3, s.xx_coherent, s.xx_phonon, s.x_phonon]);
    }
    let own = splits[0].channel_split;
    let circular = pols[0].two_photon_factor() < 1e-9;
    let mut headlines = vec![Headline::info("xx_coherent_linear", splits[1].channel_split.xx_coherent)];
    headlines.push(if circular {
        Headline::at_most("xx_coherent", own.xx_coherent, 1e-6)
    } else {
        Headline::info("xx_coherent", own.xx_coherent)
    });
    Ok(output(scn, vec![Artifact::Table(t)], headlines))
}

fn polarization_scan(scn: &Scenario) -> Result<RunOutput> {
    let split = source_split(scn).stage("dynamics")?;
    let ps = &scn.polarization_scan;
    let events = sample_pulses(
        sub_seed(scn.seed, DOMAIN_RUN, 0),
        0,
        ps.cycles,
        &split,
        &scn.qd,
        &scn.laser.polarization,
        &cycle_options(scn),
    );
    let n = (180.0 / ps.step_deg).round() as usize;
    let angles: Vec<f64> = (0..=n).map(|k| k as f64 * 180.0 / n as f64).collect();
    let intensities: Vec<(f64, f64)> = angles
        .par_iter()
        .map(|deg| {
            let an = Jones::half_waveplate_analyzer(deg.to_radians());
            let (mut x, mut xx) = (0.0, 0.0);
            for e in &events {
                let p = analyze_polarization(e, &an);
                match e.kind {
                    PhotonKind::Exciton => x += p,
                    PhotonKind::Biexciton => xx += p,
                }
            }
            (x, xx)
        })
        .collect();
    let x: Vec<f64> = intensities.iter().map(|v| v.0).collect();
    let xx: Vec<f64> = intensities.iter().map(|v| v.1).collect();
    let diff = x_minus_xx(&x, &xx)?;
    let mut t = Table::new("polarization_scan", scn.seed, &["hwp_angle_deg", "x", "xx", "x_minus_xx", "inconsistent"])
        .meta("cycles", ps.cycles);
    for i in 0..angles.len() {
        t.rows.push(vec![angles[i], x[i], xx[i], diff.values[i], diff.inconsistent[i] as u8 as f64]);
    }

    let (lo, hi) = min_max(&diff.values);
    let visibility = if hi + lo > 0.0 { (hi - lo) / (hi + lo) } else { 0.0 };
    let (xlo, xhi) = min_max(&xx);
    let mean_xx = xx.iter().sum::<f64>() / xx.len() as f64;
    let first_max = (0..diff.values.len()).fold(0, |m, i| if diff.values[i] > diff.values[m] { i } else { m });
    let peak = angles[first_max];
    let [s1, s2, _] = scn.laser.polarization.stokes();
    let laser_deg = 0.5 * s2.atan2(s1).to_degrees();
    let headlines = vec![
        Headline::at_least("x_minus_xx_visibility", visibility, 0.99),
        Headline::at_most("xx_flatness", if mean_xx > 0.0 { (xhi - xlo) / mean_xx } else { 0.0 }, 0.01),
        Headline::info("x_minus_xx_peak_hwp_deg", peak),
        Headline::info("laser_angle_deg", laser_deg),
    ];
    Ok(output(scn, vec![Artifact::Table(t)], headlines))
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difference_basic() {
        let a = [3.0, 5.0, 7.0];
        assert_eq!(x_minus_xx(&a, &a).unwrap().values, vec![0.0; 3]);
        let b: Vec<f64> = a.iter().map(|v| v + 2.5).collect();
        assert_eq!(x_minus_xx(&b, &a).unwrap().values, vec![2.5; 3]);
        assert!(matches!(x_minus_xx(&a, &a[..2]), Err(Error::LengthMismatch(3, 2))));
    }

    #[test]
    fn difference_flags_large_negative() {
        let d = x_minus_xx(&[100.0, 100.0], &[110.0, 200.0]).unwrap();
        assert_eq!(d.values, vec![-10.0, 0.0]);
        assert_eq!(d.inconsistent, vec![false, true]);
    }

    #[test]
    fn table_csv_has_seed_header() {
        let mut t = Table::new("t", 42, &["a", "b"]);
        t.rows.push(vec![1.0, 0.5]);
        assert_eq!(t.to_csv(), "# seed=42\na,b\n1,0.5\n");
        assert!(t.to_json().contains("\"seed\": \"42\""));
    }

    #[test]
    fn pair_counts_reproducible() {
        let qd = QdParameters::representative();
        let a = simulate_pair_counts(&qd, 2000, 1.0, 5);
        assert_eq!(a, simulate_pair_counts(&qd, 2000, 1.0, 5));
        assert_ne!(a, simulate_pair_counts(&qd, 2000, 1.0, 6));
    }

    #[test]
    fn polarization_scan_follows_malus() {
        let mut s = Scenario::new(Experiment::PolarizationScan, 3);
        s.polarization_scan.cycles = 20_000;
        s.laser.pulse_area_rad = Some(1.0);
        let out = run(&s).unwrap();
        assert!(out.passed(), "{:?}", out.headlines);
        // linear laser at 30° peaks at HWP 15°
        assert!((out.headline("x_minus_xx_peak_hwp_deg").unwrap().value - 15.0).abs() < 2.6);
    }

    #[test]
    fn stage_name_on_failure() {
        let mut s = Scenario::new(Experiment::Tomography, 1);
        s.tomography.counts_file = Some("/nonexistent/counts.csv".into());
        let e = run(&s).unwrap_err();
        assert!(e.to_string().starts_with("input:"), "{e}");
        assert!(e.root().is_config());
    }
}
