//! Lifetime extraction from correlation histograms by fitting decay models
//! convolved with a tabulated kernel (detector response, or a known decay
//! convolved with it).

use crate::correlator::CorrelationHistogram;
use crate::error::{Error, Result};
use crate::qd::IrfKernel;
use crate::units::FWHM_PER_SIGMA;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// e^{−t/τ} convolved with the detector response.
    SingleExp,
    /// Exciton population fed by a biexciton decay, convolved with the
    /// detector response: (e^{−t/τ} − e^{−t/τ'})·τ/(τ − τ').
    DoubleExpCascade,
    /// e^{−t/τ} convolved with a kernel that already holds a known decay.
    SingleExpKnownDecay,
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::SingleExp => "single_exp",
            ModelKind::DoubleExpCascade => "double_exp_cascade",
            ModelKind::SingleExpKnownDecay => "single_exp_known_decay",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_exp" => Ok(ModelKind::SingleExp),
            "double_exp_cascade" => Ok(ModelKind::DoubleExpCascade),
            "single_exp_known_decay" => Ok(ModelKind::SingleExpKnownDecay),
            _ => Err(Error::Invalid(vec![format!("unknown decay model {s:?}")])),
        }
    }
}

pub const PARAM_NAMES: [&str; 5] = ["amplitude", "tau_ns", "tau_other_ns", "baseline", "t0_ns"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayModel {
    pub kind: ModelKind,
    /// Counts per bin of the unconvolved decay at onset.
    pub amplitude: f64,
    pub tau_ns: f64,
    /// Feeding lifetime of the cascade model; unused otherwise.
    pub tau_other_ns: f64,
    pub baseline: f64,
    pub t0_ns: f64,
}

impl DecayModel {
    pub fn params(&self) -> [f64; 5] {
        [self.amplitude, self.tau_ns, self.tau_other_ns, self.baseline, self.t0_ns]
    }

    pub fn with_params(&self, p: &[f64]) -> Self {
        Self {
            kind: self.kind,
            amplitude: p[0],
            tau_ns: p[1],
            tau_other_ns: p[2],
            baseline: p[3],
            t0_ns: p[4],
        }
    }

    fn check(&self) -> Result<()> {
        let mut v = Vec::new();
        if !(self.tau_ns > 0.0) {
            v.push(format!("tau must be > 0 (got {})", self.tau_ns));
        }
        if self.kind == ModelKind::DoubleExpCascade && !(self.tau_other_ns > 0.0) {
            v.push(format!("tau_other must be > 0 (got {})", self.tau_other_ns));
        }
        if !(self.amplitude >= 0.0) || !(self.baseline >= 0.0) {
            v.push("amplitude and baseline must be >= 0".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v))
        }
    }

    /// Bin-averaged analytic decay at delay `t` (onset at 0), scaled so
    /// that it equals the analytic curve in every bin past the onset.
    fn decay(&self, t: f64, w: f64) -> f64 {
        match self.kind {
            ModelKind::SingleExp | ModelKind::SingleExpKnownDecay => binned_exp(t, w, self.tau_ns),
            ModelKind::DoubleExpCascade => {
                let (a, mut b) = (self.tau_ns, self.tau_other_ns);
                if (a - b).abs() < 1e-9 * a {
                    b = a * (1.0 - 1e-6);
                }
                (binned_exp(t, w, a) - binned_exp(t, w, b)) * a / (a - b)
            }
        }
    }
}

/// Mean of e^{−u/τ}·[u ≥ 0] over the bin [t − w/2, t + w/2], divided by
/// sinh(x)/x with x = w/2τ.
fn binned_exp(t: f64, w: f64, tau: f64) -> f64 {
    let b = t + 0.5 * w;
    if b <= 0.0 {
        return 0.0;
    }
    let a = (t - 0.5 * w).max(0.0);
    let x = w / (2.0 * tau);
    let norm = if x < 1e-6 { 1.0 } else { x.sinh() / x };
    tau * ((-a / tau).exp() - (-b / tau).exp()) / w / norm
}

/// Normalized weights on a uniform grid; weight j sits at delay
/// (j − origin)·bin_width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub bin_width_ns: f64,
    pub origin: usize,
    pub weights: Vec<f64>,
}

impl Kernel {
    pub fn delta(bin_width_ns: f64) -> Self {
        Self::shifted_delta(bin_width_ns, 0)
    }

    /// Unit weight `shift` bins from zero delay.
    pub fn shifted_delta(bin_width_ns: f64, shift: i64) -> Self {
        let n = shift.unsigned_abs() as usize;
        let mut weights = vec![0.0; n + 1];
        let (origin, at) = if shift >= 0 { (0, n) } else { (n, 0) };
        weights[at] = 1.0;
        Self {
            bin_width_ns,
            origin,
            weights,
        }
    }

    /// Bin-integrated Gaussian over ±6σ.
    pub fn gaussian(bin_width_ns: f64, sigma_ns: f64) -> Self {
        if sigma_ns <= 0.0 {
            return Self::delta(bin_width_ns);
        }
        let half = (6.0 * sigma_ns / bin_width_ns).ceil() as usize;
        let cdf = |x: f64| 0.5 * libm::erfc(-x / (sigma_ns * std::f64::consts::SQRT_2));
        let weights = (0..=2 * half)
            .map(|j| {
                let c = (j as f64 - half as f64) * bin_width_ns;
                cdf(c + 0.5 * bin_width_ns) - cdf(c - 0.5 * bin_width_ns)
            })
            .collect();
        Self {
            bin_width_ns,
            origin: half,
            weights,
        }
        .normalized()
    }

    /// One-sided exponential decay kernel with lifetime `tau_ns`, bin-integrated.
    pub fn exponential(bin_width_ns: f64, tau_ns: f64) -> Self {
        let n = (20.0 * tau_ns / bin_width_ns).ceil() as usize + 1;
        let weights = (0..n)
            .map(|j| {
                let c = j as f64 * bin_width_ns;
                let a = (c - 0.5 * bin_width_ns).max(0.0);
                let b = c + 0.5 * bin_width_ns;
                (-a / tau_ns).exp() - (-b / tau_ns).exp()
            })
            .collect();
        Self {
            bin_width_ns,
            origin: 0,
            weights,
        }
        .normalized()
    }

    /// Kernel sampled from a detector response description.
    pub fn from_irf(irf: &IrfKernel, bin_width_ns: f64) -> Result<Self> {
        match irf {
            IrfKernel::Gaussian { sigma_ps } => Ok(Self::gaussian(bin_width_ns, sigma_ps * 1e-3)),
            IrfKernel::Tabulated {
                bin_width_ps,
                origin,
                weights,
            } => {
                let k = Self {
                    bin_width_ns: bin_width_ps * 1e-3,
                    origin: *origin,
                    weights: weights.clone(),
                };
                k.check_grid(bin_width_ns)?;
                Ok(k.normalized())
            }
        }
    }

    /// Measured response: histogram bins with centers in [lo, hi], origin
    /// at τ = 0.
    pub fn from_histogram(hist: &CorrelationHistogram, lo_ns: f64, hi_ns: f64) -> Result<Self> {
        let idx: Vec<usize> = (0..hist.len())
            .filter(|&k| {
                let t = hist.tau_ps(k) as f64 * 1e-3;
                t >= lo_ns - 1e-9 && t <= hi_ns + 1e-9
            })
            .collect();
        let zero = hist.half_bins;
        if idx.is_empty() || !idx.contains(&zero) {
            return Err(Error::Invalid(vec!["kernel window must contain zero delay".into()]));
        }
        let weights: Vec<f64> = idx.iter().map(|&k| hist.counts[k] as f64).collect();
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::ZeroTotal("kernel window".into()));
        }
        Ok(Self {
            bin_width_ns: hist.bin_width_ps as f64 * 1e-3,
            origin: zero - idx[0],
            weights,
        }
        .normalized())
    }

    pub fn normalized(mut self) -> Self {
        let s: f64 = self.weights.iter().sum();
        if s > 0.0 {
            self.weights.iter_mut().for_each(|w| *w /= s);
        }
        self
    }

    pub fn convolve(&self, other: &Kernel) -> Result<Self> {
        other.check_grid(self.bin_width_ns)?;
        let mut weights = vec![0.0; self.weights.len() + other.weights.len() - 1];
        for (i, a) in self.weights.iter().enumerate() {
            for (j, b) in other.weights.iter().enumerate() {
                weights[i + j] += a * b;
            }
        }
        Ok(Self {
            bin_width_ns: self.bin_width_ns,
            origin: self.origin + other.origin,
            weights,
        })
    }

    pub fn offsets_ns(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .map(|(j, w)| ((j as f64 - self.origin as f64) * self.bin_width_ns, *w))
    }

    /// Standard deviation of the kernel (ns).
    pub fn std_ns(&self) -> f64 {
        let mean: f64 = self.offsets_ns().map(|(s, w)| s * w).sum();
        self.offsets_ns().map(|(s, w)| w * (s - mean).powi(2)).sum::<f64>().sqrt()
    }

    fn check_grid(&self, grid_bin_ns: f64) -> Result<()> {
        if (self.bin_width_ns - grid_bin_ns).abs() > 1e-9 * grid_bin_ns.abs().max(1e-12) {
            return Err(Error::KernelMismatch {
                kernel_ps: self.bin_width_ns * 1e3,
                grid_ps: grid_bin_ns * 1e3,
            });
        }
        Ok(())
    }
}

fn grid_step(times_ns: &[f64]) -> Result<f64> {
    if times_ns.len() < 2 {
        return Err(Error::Invalid(vec!["time grid needs at least two points".into()]));
    }
    let w = times_ns[1] - times_ns[0];
    let uniform = times_ns
        .windows(2)
        .all(|p| ((p[1] - p[0]) - w).abs() <= 1e-9 * w.abs().max(1e-12));
    if !(w > 0.0) || !uniform {
        return Err(Error::Invalid(vec!["time grid must be uniform and increasing".into()]));
    }
    Ok(w)
}

/// Discrete convolution of the analytic decay with the kernel, evaluated
/// as bin averages on a uniform grid of bin centers.
pub fn model_curve(model: &DecayModel, kernel: &Kernel, times_ns: &[f64]) -> Result<Vec<f64>> {
    model.check()?;
    let w = grid_step(times_ns)?;
    kernel.check_grid(w)?;
    Ok(eval(model, kernel, times_ns, w))
}

fn eval(model: &DecayModel, kernel: &Kernel, times_ns: &[f64], w: f64) -> Vec<f64> {
    times_ns
        .iter()
        .map(|&t| {
            let s: f64 = kernel
                .offsets_ns()
                .filter(|(_, k)| *k != 0.0)
                .map(|(off, k)| k * model.decay(t - model.t0_ns - off, w))
                .sum();
            model.baseline + model.amplitude * s
        })
        .collect()
}

/// Poisson realization of an expected-counts curve.
pub fn poisson_sample<R: Rng + ?Sized>(expected: &[f64], rng: &mut R) -> Vec<u64> {
    expected
        .iter()
        .map(|&m| if m > 0.0 { Poisson::new(m).expect("finite mean").sample(rng) as u64 } else { 0 })
        .collect()
}

/// Range of histogram bins used by the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitWindow {
    /// From the last bin below `rise_fraction` of the peak (rising edge)
    /// to the first bin after the peak below max(`tail_factor`·baseline,
    /// `min_tail_counts`), kept within half a repetition period of the peak.
    Auto {
        rise_fraction: f64,
        tail_factor: f64,
        min_tail_counts: f64,
    },
    Explicit {
        start_ns: f64,
        end_ns: f64,
    },
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow::Auto {
            rise_fraction: 0.1,
            tail_factor: 3.0,
            min_tail_counts: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub window: FitWindow,
    /// Starting point; zero entries and a missing start are estimated
    /// from the data.
    pub initial: Option<DecayModel>,
    /// Parameters held at their initial values, in [`PARAM_NAMES`] order.
    pub fixed: [bool; 5],
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            window: FitWindow::default(),
            initial: None,
            fixed: [false; 5],
            max_iterations: 200,
            tolerance: 1e-6,
        }
    }
}

impl FitOptions {
    /// Cascade model with the feeding lifetime held fixed.
    pub fn cascade_with_fixed_feed(tau_other_ns: f64) -> Self {
        Self {
            initial: Some(DecayModel {
                kind: ModelKind::DoubleExpCascade,
                amplitude: 0.0,
                tau_ns: 0.0,
                tau_other_ns,
                baseline: 0.0,
                t0_ns: 0.0,
            }),
            fixed: [false, false, true, false, false],
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParameter {
    pub name: String,
    pub value: f64,
    pub error: f64,
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: DecayModel,
    pub parameters: Vec<FitParameter>,
    pub reduced_chi_square: f64,
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub converged: bool,
    pub iterations: usize,
    pub window_start_ns: f64,
    pub window_end_ns: f64,
}

impl FitResult {
    pub fn param(&self, name: &str) -> &FitParameter {
        self.parameters.iter().find(|p| p.name == name).expect("known parameter")
    }

    pub fn tau(&self) -> (f64, f64) {
        let p = self.param("tau_ns");
        (p.value, p.error)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model={}", self.model.kind.label());
        let _ = writeln!(s, "converged={}", self.converged);
        let _ = writeln!(s, "iterations={}", self.iterations);
        let _ = writeln!(s, "chi_square={:.6}", self.chi_square);
        let _ = writeln!(s, "degrees_of_freedom={}", self.degrees_of_freedom);
        let _ = writeln!(s, "reduced_chi_square={:.6}", self.reduced_chi_square);
        let _ = writeln!(s, "window_start_ns={:.4}", self.window_start_ns);
        let _ = writeln!(s, "window_end_ns={:.4}", self.window_end_ns);
        for p in &self.parameters {
            let _ = writeln!(
                s,
                "{}={:.6e} +/- {:.3e}{}",
                p.name,
                p.value,
                p.error,
                if p.fixed { " (fixed)" } else { "" }
            );
        }
        s
    }
}

fn peak_index(counts: &[u64]) -> usize {
    // first maximum
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

fn estimate_baseline(hist: &CorrelationHistogram, peak: usize) -> f64 {
    let w = hist.bin_width_ps as f64 * 1e-3;
    if hist.rep_period_ns > 0.0 {
        // the quiet stretch half-way to the previous pulse
        let lo = peak as f64 - 0.5 * hist.rep_period_ns / w;
        let hi = peak as f64 - 0.35 * hist.rep_period_ns / w;
        let (lo, hi) = (lo.max(0.0) as usize, hi.max(0.0) as usize);
        if hi > lo {
            let sum: u64 = hist.counts[lo..hi].iter().sum();
            return sum as f64 / (hi - lo) as f64;
        }
    }
    let mut sorted = hist.counts.clone();
    sorted.sort_unstable();
    let n = (sorted.len() / 10).max(1);
    sorted[..n].iter().sum::<u64>() as f64 / n as f64
}

/// Bin range [lo, hi) chosen by `window`.
pub fn fit_window(hist: &CorrelationHistogram, window: &FitWindow) -> Result<(usize, usize)> {
    let w = hist.bin_width_ps as f64 * 1e-3;
    let range = match *window {
        FitWindow::Explicit { start_ns, end_ns } => {
            let lo = (0..hist.len()).find(|&k| hist.tau_ps(k) as f64 * 1e-3 >= start_ns - 1e-9);
            let hi = (0..hist.len()).rev().find(|&k| hist.tau_ps(k) as f64 * 1e-3 <= end_ns + 1e-9);
            match (lo, hi) {
                (Some(lo), Some(hi)) if hi > lo => (lo, hi + 1),
                _ => return Err(Error::Invalid(vec![format!("fit window [{start_ns}, {end_ns}] ns is empty")])),
            }
        }
        FitWindow::Auto {
            rise_fraction,
            tail_factor,
            min_tail_counts,
        } => {
            let peak = peak_index(&hist.counts);
            let base = estimate_baseline(hist, peak);
            let cap = if hist.rep_period_ns > 0.0 {
                (0.5 * hist.rep_period_ns / w).floor() as usize
            } else {
                hist.len()
            };
            let pc = hist.counts[peak] as f64;
            let first = peak.saturating_sub(cap);
            let mut lo = peak;
            while lo > first && hist.counts[lo - 1] as f64 >= rise_fraction * pc {
                lo -= 1;
            }
            lo = lo.saturating_sub(1).max(first);
            let floor = (tail_factor * base).max(min_tail_counts);
            let last = (peak + cap).min(hist.len());
            let mut hi = peak + 1;
            while hi < last && hist.counts[hi] as f64 >= floor {
                hi += 1;
            }
            (lo, hi)
        }
    };
    Ok(range)
}

/// Starting parameters from the data.
fn initial_guess(kind: ModelKind, t: &[f64], y: &[f64], base: f64) -> DecayModel {
    let (kp, &yp) = y
        .iter()
        .enumerate()
        .fold((0, &f64::MIN), |m, (k, v)| if v > m.1 { (k, v) } else { m });
    let half = y[..=kp].iter().position(|&v| v - base >= 0.5 * (yp - base)).unwrap_or(kp);
    let tail = tail_slope(&t[kp..], &y[kp..], base).unwrap_or(1.0);
    DecayModel {
        kind,
        amplitude: (yp - base).max(1.0),
        tau_ns: tail.clamp(0.05, 20.0),
        tau_other_ns: 0.5 * tail.clamp(0.05, 20.0),
        baseline: base.max(0.0),
        t0_ns: t[half],
    }
}

/// Weighted log-linear slope of counts above `base`; returns the lifetime.
fn tail_slope(t: &[f64], y: &[f64], base: f64) -> Option<f64> {
    let (mut sw, mut st, mut sl, mut stt, mut stl) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&ti, &yi) in t.iter().zip(y) {
        let v = yi - base;
        if v <= 1.0 {
            continue;
        }
        let l = v.ln();
        // var(ln v) ≈ 1/v
        let wgt = v;
        sw += wgt;
        st += wgt * ti;
        sl += wgt * l;
        stt += wgt * ti * ti;
        stl += wgt * ti * l;
    }
    let det = sw * stt - st * st;
    if sw <= 0.0 || det <= 0.0 {
        return None;
    }
    let slope = (sw * stl - st * sl) / det;
    (slope < 0.0).then(|| -1.0 / slope)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub tau_ns: f64,
    pub error_ns: f64,
    pub start_ns: f64,
    pub end_ns: f64,
}

/// Single-exponential fit to the tail only: slope of log counts on
/// [peak + 2·kernel width, end of the automatic window].
pub fn fit_tail(hist: &CorrelationHistogram, kernel: &Kernel) -> Result<TailFit> {
    let (_, hi) = fit_window(hist, &FitWindow::default())?;
    let peak = peak_index(&hist.counts);
    let base = estimate_baseline(hist, peak);
    let w = hist.bin_width_ps as f64 * 1e-3;
    let lo = peak + (2.0 * kernel.std_ns() / w).ceil() as usize;
    if hi <= lo + 2 {
        return Err(Error::Degenerate("tail window holds fewer than three bins".into()));
    }
    let t: Vec<f64> = (lo..hi).map(|k| hist.tau_ps(k) as f64 * 1e-3).collect();
    let y: Vec<f64> = hist.counts[lo..hi].iter().map(|&c| c as f64).collect();
    let (mut sw, mut st, mut stt) = (0.0, 0.0, 0.0);
    for (&ti, &yi) in t.iter().zip(&y) {
        let v = yi - base;
        if v > 1.0 {
            sw += v;
            st += v * ti;
            stt += v * ti * ti;
        }
    }
    let tau = tail_slope(&t, &y, base).ok_or_else(|| Error::Degenerate("tail does not decay".into()))?;
    let slope_var = sw / (sw * stt - st * st);
    Ok(TailFit {
        tau_ns: tau,
        error_ns: tau * tau * slope_var.sqrt(),
        start_ns: t[0],
        end_ns: *t.last().expect("non-empty"),
    })
}

/// Weighted least-squares fit of a convolved decay model (weights
/// 1/max(count, 1)) by damped Gauss–Newton with a numerical Jacobian.
pub fn fit_lifetime(
    hist: &CorrelationHistogram,
    kind: ModelKind,
    kernel: &Kernel,
    opts: &FitOptions,
) -> Result<FitResult> {
    let w = hist.bin_width_ps as f64 * 1e-3;
    kernel.check_grid(w)?;
    if hist.counts.iter().all(|&c| c == hist.counts[0]) {
        return Err(Error::Degenerate("histogram is flat".into()));
    }
    let (lo, hi) = fit_window(hist, &opts.window)?;
    let t: Vec<f64> = (lo..hi).map(|k| hist.tau_ps(k) as f64 * 1e-3).collect();
    let y: Vec<f64> = hist.counts[lo..hi].iter().map(|&c| c as f64).collect();
    let sw: Vec<f64> = y.iter().map(|&c| 1.0 / c.max(1.0).sqrt()).collect();
    let free: Vec<usize> = (0..5)
        .filter(|&j| !opts.fixed[j])
        .filter(|&j| j != 2 || kind == ModelKind::DoubleExpCascade)
        .collect();
    if t.len() <= free.len() + 1 {
        return Err(Error::Degenerate(format!("fit window holds only {} bins", t.len())));
    }
    if y.iter().cloned().fold(f64::MIN, f64::max) - y.iter().cloned().fold(f64::MAX, f64::min) < 1.0 {
        return Err(Error::Degenerate("no signal above baseline in the fit window".into()));
    }

    let peak = peak_index(&hist.counts);
    let guess = initial_guess(kind, &t, &y, estimate_baseline(hist, peak));
    let mut p = guess.params();
    // zero entries of a supplied start are estimated, unless held fixed
    if let Some(init) = &opts.initial {
        for (j, v) in init.params().into_iter().enumerate() {
            if opts.fixed[j] || v != 0.0 {
                p[j] = v;
            }
        }
    }
    if kind != ModelKind::DoubleExpCascade {
        p[2] = 0.0;
    }
    let base_model = DecayModel { kind, ..guess };

    let residuals = |p: &[f64; 5]| -> Vec<f64> {
        let m = eval(&base_model.with_params(p), kernel, &t, w);
        m.iter().zip(&y).zip(&sw).map(|((m, y), s)| (y - m) * s).collect()
    };
    let chi2 = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let feasible = |p: &[f64; 5]| {
        p[0] >= 0.0 && p[1] > 0.0 && p[3] >= 0.0 && (kind != ModelKind::DoubleExpCascade || p[2] > 0.0)
    };
    let project = |p: &mut [f64; 5]| {
        p[0] = p[0].max(0.0);
        p[1] = p[1].max(1e-6);
        if kind == ModelKind::DoubleExpCascade {
            p[2] = p[2].max(1e-6);
        }
        p[3] = p[3].max(0.0);
    };
    let jacobian = |p: &[f64; 5], r0: &[f64]| -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(t.len(), free.len());
        for (c, &j) in free.iter().enumerate() {
            let scale = match j {
                0 | 3 => p[j].abs().max(1.0),
                4 => w,
                _ => p[j].abs().max(1e-3),
            };
            let h = 1e-6 * scale;
            let mut pp = *p;
            pp[j] += h;
            let mut pm = *p;
            pm[j] -= h;
            // one-sided at the feasibility boundary
            let (rp, rm, d) = if feasible(&pm) {
                (residuals(&pp), residuals(&pm), 2.0 * h)
            } else {
                (residuals(&pp), r0.to_vec(), h)
            };
            for i in 0..t.len() {
                // residual = (y − m)·s, so ∂m·s = −∂r
                jac[(i, c)] = -(rp[i] - rm[i]) / d;
            }
        }
        jac
    };

    let mut r = residuals(&p);
    let mut c2 = chi2(&r);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let jac = jacobian(&p, &r);
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_vec(r.clone());
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for d in 0..free.len() {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(mut delta) = a.clone().cholesky().map(|ch| ch.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            // parameters resting on a bound and pushed outward sit this
            // step out; the rest are solved without them
            let pinned: Vec<usize> = (0..free.len())
                .filter(|&c| {
                    let mut q = p;
                    q[free[c]] += delta[c];
                    let mut projected = q;
                    project(&mut projected);
                    projected[free[c]] != q[free[c]] && projected[free[c]] == p[free[c]]
                })
                .collect();
            if !pinned.is_empty() {
                let mut reduced = a.clone();
                let mut rhs = g.clone();
                for &c in &pinned {
                    reduced.row_mut(c).fill(0.0);
                    reduced.column_mut(c).fill(0.0);
                    reduced[(c, c)] = 1.0;
                    rhs[c] = 0.0;
                }
                match reduced.cholesky() {
                    Some(ch) => delta = ch.solve(&rhs),
                    None => {
                        lambda *= 10.0;
                        continue;
                    }
                }
            }
            let mut trial = p;
            for (c, &j) in free.iter().enumerate() {
                trial[j] += delta[c];
            }
            project(&mut trial);
            let rt = residuals(&trial);
            let ct = chi2(&rt);
            if ct <= c2 {
                let rel = free
                    .iter()
                    .map(|&j| {
                        // counts below 1e-3 per bin are immaterial
                        let floor = match j {
                            4 => w,
                            0 | 3 => 1e-3,
                            _ => 1e-12,
                        };
                        (trial[j] - p[j]).abs() / p[j].abs().max(floor)
                    })
                    .fold(0.0, f64::max);
                p = trial;
                r = rt;
                c2 = ct;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel < opts.tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // no downhill step exists at any damping: a minimum
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::FitNotConverged(opts.max_iterations));
    }

    let jac = jacobian(&p, &r);
    let jtj = jac.transpose() * &jac;
    let cov = jtj
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("parameters are not identifiable from the data".into()))?;
    let dof = t.len() - free.len();
    let mut errors = [0.0; 5];
    for (c, &j) in free.iter().enumerate() {
        errors[j] = cov[(c, c)].max(0.0).sqrt();
    }
    let model = base_model.with_params(&p);
    let parameters = PARAM_NAMES
        .iter()
        .enumerate()
        .map(|(j, name)| FitParameter {
            name: name.to_string(),
            value: p[j],
            error: errors[j],
            fixed: !free.contains(&j),
        })
        .collect();
    Ok(FitResult {
        model,
        parameters,
        reduced_chi_square: c2 / dof as f64,
        chi_square: c2,
        degrees_of_freedom: dof,
        converged,
        iterations,
        window_start_ns: t[0],
        window_end_ns: *t.last().expect("non-empty"),
    })
}

/// FWHM of a Gaussian kernel with standard deviation `sigma_ns`.
pub fn gaussian_fwhm(sigma_ns: f64) -> f64 {
    sigma_ns * FWHM_PER_SIGMA
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(w: f64, n: usize, start: f64) -> Vec<f64> {
        (0..n).map(|k| start + k as f64 * w).collect()
    }

    fn single(tau: f64) -> DecayModel {
        DecayModel {
            kind: ModelKind::SingleExp,
            amplitude: 1.0,
            tau_ns: tau,
            tau_other_ns: 0.0,
            baseline: 0.0,
            t0_ns: 0.0,
        }
    }

    #[test]
    fn delta_kernel_is_analytic() {
        let t = grid(0.05, 200, 0.0);
        let c = model_curve(&single(1.0), &Kernel::delta(0.05), &t).unwrap();
        for (ti, ci) in t.iter().zip(&c).skip(1) {
            assert!((ci - (-ti).exp()).abs() < 1e-12);
        }
        assert!(c.iter().zip(&t).take_while(|(_, t)| **t < -0.025).all(|(c, _)| *c == 0.0));
    }

    #[test]
    fn cascade_shape() {
        let m = DecayModel {
            kind: ModelKind::DoubleExpCascade,
            tau_ns: 0.78,
            tau_other_ns: 0.44,
            ..single(0.78)
        };
        let t = grid(0.05, 300, 0.0);
        let c = model_curve(&m, &Kernel::delta(0.05), &t).unwrap();
        let k = 0.78 / (0.78 - 0.44);
        for (ti, ci) in t.iter().zip(&c).skip(1) {
            let exact = ((-ti / 0.78).exp() - (-ti / 0.44).exp()) * k;
            assert!((ci - exact).abs() < 1e-12);
        }
        // oracle peak time of the two-exponential convolution
        let t_peak = (0.78f64 / 0.44).ln() * 0.78 * 0.44 / (0.78 - 0.44);
        let k_max = c.iter().enumerate().fold(0, |b, (k, v)| if *v > c[b] { k } else { b });
        assert!((t[k_max] - t_peak).abs() <= 0.05);
        assert!(t_peak > 0.5);
    }

    #[test]
    fn shifted_delta_shifts() {
        let t = grid(0.05, 200, -1.0);
        let a = model_curve(&single(0.5), &Kernel::delta(0.05), &t).unwrap();
        let b = model_curve(&single(0.5), &Kernel::shifted_delta(0.05, 4), &t).unwrap();
        for k in 4..t.len() {
            assert!((b[k] - a[k - 4]).abs() < 1e-12);
        }
        let c = model_curve(&single(0.5), &Kernel::shifted_delta(0.05, -3), &t).unwrap();
        for k in 0..t.len() - 3 {
            assert!((c[k] - a[k + 3]).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_kernel_rejected() {
        let t = grid(0.05, 10, 0.0);
        assert!(matches!(
            model_curve(&single(1.0), &Kernel::delta(0.1), &t),
            Err(Error::KernelMismatch { .. })
        ));
    }

    #[test]
    fn kernels_normalized() {
        for k in [Kernel::gaussian(0.05, 0.1), Kernel::exponential(0.05, 0.44)] {
            assert!((k.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((Kernel::gaussian(0.01, 0.1).std_ns() - 0.1).abs() < 1e-3);
    }

    fn synthetic(model: &DecayModel, kernel: &Kernel, seed: u64) -> CorrelationHistogram {
        let mut h = CorrelationHistogram::zeros(50, 50.0).unwrap();
        h.rep_period_ns = 12.5;
        let t: Vec<f64> = h.taus_ps().iter().map(|&p| p as f64 * 1e-3).collect();
        let curve = model_curve(model, kernel, &t).unwrap();
        h.counts = poisson_sample(&curve, &mut ChaCha8Rng::seed_from_u64(seed));
        h
    }

    #[test]
    fn recovers_single_exponential() {
        let k = Kernel::gaussian(0.05, 0.1);
        // about 1e5 counts in the decay
        let truth = DecayModel {
            amplitude: 1e5 * 0.05 / 0.44,
            baseline: 0.5,
            ..single(0.44)
        };
        let h = synthetic(&truth, &k, 1);
        let fit = fit_lifetime(&h, ModelKind::SingleExp, &k, &FitOptions::default()).unwrap();
        let (tau, err) = fit.tau();
        assert!((tau - 0.44).abs() < 0.05 * 0.44, "{tau}");
        assert!((tau - 0.44).abs() < 4.0 * err, "{tau} ± {err}");
        assert!(fit.reduced_chi_square < 2.0);
        assert!(fit.to_text().contains("model=single_exp"));
    }

    #[test]
    fn flat_data_is_degenerate() {
        let mut h = CorrelationHistogram::zeros(50, 10.0).unwrap();
        h.counts.iter_mut().for_each(|c| *c = 10);
        assert!(matches!(
            fit_lifetime(&h, ModelKind::SingleExp, &Kernel::delta(0.05), &FitOptions::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn tail_fit_cross_check() {
        let k = Kernel::gaussian(0.05, 0.1);
        let truth = DecayModel {
            amplitude: 2e4,
            ..single(0.78)
        };
        let h = synthetic(&truth, &k, 2);
        let tail = fit_tail(&h, &k).unwrap();
        assert!((tail.tau_ns - 0.78).abs() < 0.05 * 0.78, "{tail:?}");
    }
}
