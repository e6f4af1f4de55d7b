//! Start–stop coincidence histograms between time-tag channels, pulsed
//! peak integration and g²(0) normalization.

use crate::emission::TimeTagStream;
use crate::error::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

pub const DEFAULT_BIN_WIDTH_PS: u64 = 50;
pub const DEFAULT_RANGE_NS: f64 = 50.0;
pub const DEFAULT_WINDOW_NS: f64 = 6.0;
pub const DEFAULT_SIDE_PEAKS: usize = 3;

const CHUNK: usize = 1 << 15;

/// Coincidence counts on bins centered at k·bin_width, k = −half..=half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub bin_width_ps: u64,
    pub half_bins: usize,
    pub counts: Vec<u64>,
    pub start_channel: u8,
    pub stop_channel: u8,
    pub duration_s: f64,
    pub rep_period_ns: f64,
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl CorrelationHistogram {
    /// Empty histogram whose outermost bin centers lie within ±`range_ns`.
    pub fn zeros(bin_width_ps: u64, range_ns: f64) -> Result<Self> {
        if bin_width_ps == 0 || !(range_ns >= 0.0) {
            return Err(Error::Invalid(vec![format!(
                "bin_width must be > 0 and range >= 0 (got {bin_width_ps} ps, {range_ns} ns)"
            )]));
        }
        let half_bins = ((range_ns * 1e3) / bin_width_ps as f64 + 1e-9).floor() as usize;
        Ok(Self {
            bin_width_ps,
            half_bins,
            counts: vec![0; 2 * half_bins + 1],
            start_channel: 0,
            stop_channel: 0,
            duration_s: 0.0,
            rep_period_ns: 0.0,
            method: None,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Center of the last bin (ns).
    pub fn range_ns(&self) -> f64 {
        self.half_bins as f64 * self.bin_width_ps as f64 * 1e-3
    }

    pub fn tau_ps(&self, k: usize) -> i64 {
        (k as i64 - self.half_bins as i64) * self.bin_width_ps as i64
    }

    pub fn taus_ps(&self) -> Vec<i64> {
        (0..self.len()).map(|k| self.tau_ps(k)).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bin index holding delay `d_ps`, if inside the histogram.
    pub fn bin_of(&self, d_ps: i128) -> Option<usize> {
        let w = self.bin_width_ps as i128;
        let k = (2 * d_ps + w).div_euclid(2 * w) + self.half_bins as i128;
        (0..self.counts.len() as i128).contains(&k).then_some(k as usize)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# bin_width_ps={}", self.bin_width_ps);
        let _ = writeln!(s, "# range_ns={}", self.range_ns());
        let _ = writeln!(s, "# start_channel={}", self.start_channel);
        let _ = writeln!(s, "# stop_channel={}", self.stop_channel);
        let _ = writeln!(s, "# duration_s={}", self.duration_s);
        let _ = writeln!(s, "# rep_period_ns={}", self.rep_period_ns);
        if let Some(m) = &self.method {
            let _ = writeln!(s, "# method={m}");
        }
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "# seed={seed}");
        }
        s.push_str("tau_ps,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{c}", self.tau_ps(k));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let fmt = |m: String| Error::Format(m);
        let mut meta = std::collections::BTreeMap::new();
        let mut rows: Vec<(i64, u64)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(kv) = line.strip_prefix('#') {
                if let Some((k, v)) = kv.split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if line.starts_with("tau_ps") {
                continue;
            }
            let (t, c) = line
                .split_once(',')
                .ok_or_else(|| fmt(format!("line {}: expected tau_ps,count", n + 1)))?;
            let t: i64 = t.trim().parse().map_err(|_| fmt(format!("line {}: bad tau", n + 1)))?;
            let c: u64 = c.trim().parse().map_err(|_| fmt(format!("line {}: bad count", n + 1)))?;
            rows.push((t, c));
        }
        if rows.is_empty() || rows.len() % 2 == 0 {
            return Err(fmt(format!("need an odd number of bins (got {})", rows.len())));
        }
        let half = rows.len() / 2;
        let width = match meta.get("bin_width_ps") {
            Some(v) => v.parse().map_err(|_| fmt("bad bin_width_ps".into()))?,
            None if rows.len() > 1 => (rows[1].0 - rows[0].0) as u64,
            None => return Err(fmt("bin_width_ps missing".into())),
        };
        let mut h = CorrelationHistogram::zeros(width, half as f64 * width as f64 * 1e-3)?;
        if h.len() != rows.len() {
            return Err(fmt("bin layout inconsistent with bin width".into()));
        }
        for (k, (t, c)) in rows.into_iter().enumerate() {
            if t != h.tau_ps(k) {
                return Err(fmt(format!("bin {k}: tau {t} ps, expected {}", h.tau_ps(k))));
            }
            h.counts[k] = c;
        }
        let num = |key: &str| -> Result<Option<f64>> {
            meta.get(key)
                .map(|v| v.parse::<f64>().map_err(|_| fmt(format!("bad {key}"))))
                .transpose()
        };
        h.duration_s = num("duration_s")?.unwrap_or(0.0);
        h.rep_period_ns = num("rep_period_ns")?.unwrap_or(0.0);
        h.start_channel = num("start_channel")?.unwrap_or(0.0) as u8;
        h.stop_channel = num("stop_channel")?.unwrap_or(0.0) as u8;
        h.method = meta.get("method").cloned();
        h.seed = meta.get("seed").map(|s| s.parse()).transpose().map_err(|_| fmt("bad seed".into()))?;
        Ok(h)
    }
}

fn check_sorted(tags: &[u64]) -> Result<()> {
    match tags.windows(2).position(|w| w[1] < w[0]) {
        Some(i) => Err(Error::Unsorted { index: i + 1 }),
        None => Ok(()),
    }
}

fn sweep(starts: &[u64], stops: &[u64], hist: &mut CorrelationHistogram) {
    let w = hist.bin_width_ps as i128;
    let reach = (2 * hist.half_bins as i128 + 1) * w;
    // a delay d falls in the histogram iff −reach ≤ 2d < reach
    let Some(&first) = starts.first() else { return };
    let mut lo = stops.partition_point(|&t| 2 * (t as i128 - first as i128) < -reach);
    for &s in starts {
        while lo < stops.len() && 2 * (stops[lo] as i128 - s as i128) < -reach {
            lo += 1;
        }
        let mut j = lo;
        while j < stops.len() {
            let d = stops[j] as i128 - s as i128;
            if 2 * d >= reach {
                break;
            }
            let k = (2 * d + w).div_euclid(2 * w) + hist.half_bins as i128;
            hist.counts[k as usize] += 1;
            j += 1;
        }
    }
}

/// Histogram of stop − start delays over all tag pairs within range.
pub fn coincidences(
    start: &TimeTagStream,
    stop: &TimeTagStream,
    bin_width_ps: u64,
    range_ns: f64,
) -> Result<CorrelationHistogram> {
    check_sorted(&start.tags)?;
    check_sorted(&stop.tags)?;
    let mut proto = CorrelationHistogram::zeros(bin_width_ps, range_ns)?;
    proto.start_channel = start.channel;
    proto.stop_channel = stop.channel;
    let partial: Vec<Vec<u64>> = start
        .tags
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut h = proto.clone();
            sweep(chunk, &stop.tags, &mut h);
            h.counts
        })
        .collect();
    for p in partial {
        for (a, b) in proto.counts.iter_mut().zip(p) {
            *a += b;
        }
    }
    Ok(proto)
}

/// Sum of bins whose centers lie in [center − window, center + window].
pub fn peak_integrate(hist: &CorrelationHistogram, center_ns: f64, window_ns: f64) -> Result<u64> {
    let lo_ps = (center_ns - window_ns) * 1e3;
    let hi_ps = (center_ns + window_ns) * 1e3;
    let range_ps = hist.range_ns() * 1e3;
    if !(window_ns > 0.0) || lo_ps < -range_ps - 1e-6 || hi_ps > range_ps + 1e-6 {
        return Err(Error::WindowOutOfRange {
            lo_ps: lo_ps.round() as i64,
            hi_ps: hi_ps.round() as i64,
            range_ps: range_ps.round() as i64,
        });
    }
    Ok(hist
        .counts
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let t = hist.tau_ps(*k) as f64;
            t >= lo_ps - 1e-6 && t <= hi_ps + 1e-6
        })
        .map(|(_, c)| c)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum G2Method {
    /// Center peak over the mean of the side peaks.
    SidePeak,
    /// Center peak raw counts, normalized later across settings.
    RawCounts,
}

impl std::str::FromStr for G2Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "side_peak" => Ok(G2Method::SidePeak),
            "raw_counts" => Ok(G2Method::RawCounts),
            _ => Err(Error::Invalid(vec![format!("unknown g2 method {s:?}")])),
        }
    }
}

impl std::fmt::Display for G2Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            G2Method::SidePeak => "side_peak",
            G2Method::RawCounts => "raw_counts",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakIntegration {
    pub center_ns: f64,
    pub window_ns: f64,
    pub raw_counts: u64,
    pub side_peak_mean: Option<f64>,
    pub normalized: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Zero {
    pub method: G2Method,
    pub value: f64,
    pub peak: PeakIntegration,
    /// Side-peak normalization assumes an unpolarized source.
    pub valid_only_if_unpolarized: bool,
}

/// g²(0) by side-peak normalization or as raw center-peak counts.
pub fn g2_zero(
    hist: &CorrelationHistogram,
    rep_period_ns: f64,
    method: G2Method,
    n_side_peaks: usize,
    window_ns: f64,
) -> Result<G2Zero> {
    let raw = peak_integrate(hist, 0.0, window_ns)?;
    let mut peak = PeakIntegration {
        center_ns: 0.0,
        window_ns,
        raw_counts: raw,
        side_peak_mean: None,
        normalized: None,
    };
    match method {
        G2Method::RawCounts => Ok(G2Zero {
            method,
            value: raw as f64,
            peak,
            valid_only_if_unpolarized: false,
        }),
        G2Method::SidePeak => {
            let fits = |k: usize| k as f64 * rep_period_ns + window_ns <= hist.range_ns() + 1e-9;
            let available = (1..).take_while(|&k| fits(k)).count();
            if n_side_peaks < 2 || available < n_side_peaks || !(rep_period_ns > 0.0) {
                return Err(Error::InsufficientSidePeaks {
                    needed: n_side_peaks.max(2),
                    available,
                });
            }
            let mut sum = 0u64;
            for k in 1..=n_side_peaks {
                let c = k as f64 * rep_period_ns;
                sum += peak_integrate(hist, c, window_ns)? + peak_integrate(hist, -c, window_ns)?;
            }
            let mean = sum as f64 / (2 * n_side_peaks) as f64;
            let value = raw as f64 / mean;
            peak.side_peak_mean = Some(mean);
            peak.normalized = Some(value);
            Ok(G2Zero {
                method,
                value,
                peak,
                valid_only_if_unpolarized: true,
            })
        }
    }
}
