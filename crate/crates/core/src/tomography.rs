//! Two-photon Stokes parameters from the twelve polarization-resolved
//! coincidence counts, and the Bell-state fidelity built from them.
//! Setting labels name the biexciton (herald) photon first.

use crate::correlator::{g2_zero, CorrelationHistogram, G2Method};
use crate::emission::joint_projection;
use crate::error::{Error, Result};
use crate::polarization::Jones;
use nalgebra::Matrix4;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// The twelve settings in table order: linear, diagonal, circular.
pub const SETTINGS: [&str; 12] = ["HH", "HV", "VV", "VH", "DD", "DA", "AA", "AD", "RR", "RL", "LL", "LR"];

/// Analyzer state for a polarization letter.
pub fn analyzer(letter: char) -> Option<Jones> {
    Jones::from_label(letter.encode_utf8(&mut [0; 4]))
}

/// (biexciton analyzer, exciton analyzer) for a setting label such as "DA".
pub fn setting_analyzers(setting: &str) -> Option<(Jones, Jones)> {
    let mut c = setting.chars();
    let pair = (analyzer(c.next()?)?, analyzer(c.next()?)?);
    c.next().is_none().then_some(pair)
}

fn index(setting: &str) -> Option<usize> {
    SETTINGS.iter().position(|s| *s == setting)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPhotonCounts {
    /// Counts in [`SETTINGS`] order.
    pub counts: [u64; 12],
    pub durations_s: [f64; 12],
}

impl TwoPhotonCounts {
    pub fn new(counts: [u64; 12], duration_s: f64) -> Self {
        Self {
            counts,
            durations_s: [duration_s; 12],
        }
    }

    pub fn get(&self, setting: &str) -> u64 {
        self.counts[index(setting).expect("known setting")]
    }

    /// Builds the table from per-setting entries, insisting on all twelve.
    pub fn from_entries(entries: &BTreeMap<String, (u64, f64)>) -> Result<Self> {
        let mut counts = [0; 12];
        let mut durations = [0.0; 12];
        for (k, s) in SETTINGS.iter().enumerate() {
            let (n, d) = entries.get(*s).ok_or_else(|| Error::MissingSetting((*s).into()))?;
            counts[k] = *n;
            durations[k] = *d;
        }
        if let Some(bad) = entries.keys().find(|k| index(k).is_none()) {
            return Err(Error::Format(format!("unknown setting {bad:?}")));
        }
        let t = Self {
            counts,
            durations_s: durations,
        };
        t.check_durations()?;
        Ok(t)
    }

    pub fn check_durations(&self) -> Result<()> {
        let d0 = self.durations_s[0];
        for &d in &self.durations_s[1..] {
            if (d - d0).abs() > 1e-9 * d0.abs().max(1.0) {
                return Err(Error::UnequalDurations(d0, d));
            }
        }
        Ok(())
    }

    /// Parses `setting,count,duration_s` rows.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("setting") {
                continue;
            }
            let bad = || Error::Format(format!("line {}: expected setting,count,duration_s", n + 1));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(bad());
            }
            let count: u64 = f[1].parse().map_err(|_| bad())?;
            let dur: f64 = f[2].parse().map_err(|_| bad())?;
            if entries.insert(f[0].to_uppercase(), (count, dur)).is_some() {
                return Err(Error::Format(format!("line {}: setting {} repeated", n + 1, f[0])));
            }
        }
        Self::from_entries(&entries)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("setting,count,duration_s\n");
        for (k, name) in SETTINGS.iter().enumerate() {
            let _ = writeln!(s, "{name},{},{}", self.counts[k], self.durations_s[k]);
        }
        s
    }

    /// Same table with H↔V exchanged on both photons. D, A, R, L are
    /// mapped to D, −A, −L, −R up to global phase, i.e. A↔A, R↔L swap.
    pub fn swap_hv(&self) -> Self {
        let map = |c: char| match c {
            'H' => 'V',
            'V' => 'H',
            'R' => 'L',
            'L' => 'R',
            x => x,
        };
        let mut out = self.clone();
        for (k, s) in SETTINGS.iter().enumerate() {
            let t: String = s.chars().map(map).collect();
            let j = index(&t).expect("closed under swap");
            out.counts[j] = self.counts[k];
            out.durations_s[j] = self.durations_s[k];
        }
        out
    }
}

/// (n_pp + n_mm − n_pm − n_mp) / total.
pub fn degree_of_correlation(n_pp: u64, n_pm: u64, n_mm: u64, n_mp: u64) -> Result<f64> {
    let total = n_pp + n_pm + n_mm + n_mp;
    if total == 0 {
        return Err(Error::ZeroTotal("basis".into()));
    }
    Ok((n_pp as f64 + n_mm as f64 - n_pm as f64 - n_mp as f64) / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub error: f64,
}

impl Measured {
    pub fn exact(value: f64) -> Self {
        Self { value, error: 0.0 }
    }

    /// 2p − 1 for `k` successes out of `n`, with binomial error.
    fn balance(k: u64, n: u64) -> Self {
        let p = k as f64 / n as f64;
        Self {
            value: 2.0 * p - 1.0,
            error: 2.0 * (p * (1.0 - p) / n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StokesSet {
    pub s33: Measured,
    pub s11: Measured,
    pub s22: Measured,
    pub s30: Measured,
    pub s03: Measured,
}

impl StokesSet {
    /// Error-free set in the order (S33, S11, S22, S30, S03).
    pub fn exact(v: [f64; 5]) -> Self {
        Self {
            s33: Measured::exact(v[0]),
            s11: Measured::exact(v[1]),
            s22: Measured::exact(v[2]),
            s30: Measured::exact(v[3]),
            s03: Measured::exact(v[4]),
        }
    }

    pub fn values(&self) -> [f64; 5] {
        [self.s33.value, self.s11.value, self.s22.value, self.s30.value, self.s03.value]
    }

    pub fn errors(&self) -> [f64; 5] {
        [self.s33.error, self.s11.error, self.s22.error, self.s30.error, self.s03.error]
    }
}

pub fn stokes_from_counts(c: &TwoPhotonCounts) -> Result<StokesSet> {
    let n = |s: &str| c.get(s);
    let basis = |pp: &str, pm: &str, mm: &str, mp: &str, name: &str| -> Result<(u64, u64)> {
        let total = n(pp) + n(pm) + n(mm) + n(mp);
        if total == 0 {
            return Err(Error::ZeroTotal(format!("{name} basis")));
        }
        Ok((n(pp) + n(mm), total))
    };
    let (lin_corr, lin) = basis("HH", "HV", "VV", "VH", "linear")?;
    let (dia_corr, dia) = basis("DD", "DA", "AA", "AD", "diagonal")?;
    let (cir_corr, cir) = basis("RR", "RL", "LL", "LR", "circular")?;
    Ok(StokesSet {
        s33: Measured::balance(lin_corr, lin),
        s11: Measured::balance(dia_corr, dia),
        s22: Measured::balance(cir_corr, cir),
        // biexciton photon H vs V, then exciton photon H vs V
        s30: Measured::balance(n("HH") + n("HV"), lin),
        s03: Measured::balance(n("HH") + n("VH"), lin),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub value: f64,
    pub error: f64,
    /// Lower bound of the one-sigma interval above the classical limit 0.5.
    pub entangled: bool,
}

/// f = ¼(1 + S33 + S11 − S22 + S30 + S03), errors in quadrature.
pub fn fidelity(s: &StokesSet) -> Fidelity {
    let value = 0.25 * (1.0 + s.s33.value + s.s11.value - s.s22.value + s.s30.value + s.s03.value);
    let error = 0.25 * s.errors().iter().map(|e| e * e).sum::<f64>().sqrt();
    Fidelity {
        value,
        error,
        entangled: value - error > 0.5,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyReport {
    pub method: G2Method,
    pub window_ns: f64,
    pub counts: BTreeMap<String, u64>,
    pub duration_s: f64,
    pub stokes: StokesSet,
    pub fidelity: Fidelity,
    /// Center-over-side-peak g²(0) per setting, when histograms were given.
    /// Only meaningful for an unpolarized source.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub side_peak_g2: Option<BTreeMap<String, f64>>,
}

impl TomographyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Stokes set and fidelity from a counts table.
pub fn run_tomography(counts: &TwoPhotonCounts, window_ns: f64) -> Result<TomographyReport> {
    counts.check_durations()?;
    let stokes = stokes_from_counts(counts)?;
    Ok(TomographyReport {
        method: G2Method::RawCounts,
        window_ns,
        counts: SETTINGS.iter().map(|s| (s.to_string(), counts.get(s))).collect(),
        duration_s: counts.durations_s[0],
        stokes,
        fidelity: fidelity(&stokes),
        side_peak_g2: None,
    })
}

/// Tomography from one cross-correlation histogram per setting. Raw
/// center-peak counts feed the Stokes parameters; side-peak g²(0) values
/// are reported alongside when the histograms hold enough side peaks.
pub fn run_tomography_histograms(
    hists: &BTreeMap<String, CorrelationHistogram>,
    window_ns: f64,
    n_side_peaks: usize,
) -> Result<TomographyReport> {
    let mut entries = BTreeMap::new();
    let mut side = BTreeMap::new();
    let mut side_ok = true;
    for s in SETTINGS {
        let h = hists.get(s).ok_or_else(|| Error::MissingSetting(s.into()))?;
        let raw = g2_zero(h, h.rep_period_ns, G2Method::RawCounts, n_side_peaks, window_ns)?;
        entries.insert(s.to_string(), (raw.peak.raw_counts, h.duration_s));
        match g2_zero(h, h.rep_period_ns, G2Method::SidePeak, n_side_peaks, window_ns) {
            Ok(g) => {
                side.insert(s.to_string(), g.value);
            }
            Err(_) => side_ok = false,
        }
    }
    let counts = TwoPhotonCounts::from_entries(&entries)?;
    let mut report = run_tomography(&counts, window_ns)?;
    if side_ok {
        report.side_peak_g2 = Some(side);
    }
    Ok(report)
}

/// Expected coincidences per setting for a two-photon state, `pairs`
/// analyzed in each setting.
pub fn born_counts(rho: &Matrix4<C64>, pairs: f64) -> [f64; 12] {
    let mut out = [0.0; 12];
    for (k, s) in SETTINGS.iter().enumerate() {
        let (a, b) = setting_analyzers(s).expect("known setting");
        out[k] = pairs * joint_projection(rho, &a, &b);
    }
    out
}

/// Error-free Stokes set of a two-photon state.
pub fn expected_stokes(rho: &Matrix4<C64>) -> StokesSet {
    let p = born_counts(rho, 1.0);
    let at = |s: &str| p[SETTINGS.iter().position(|x| *x == s).expect("known setting")];
    let corr = |pp: &str, pm: &str, mm: &str, mp: &str| {
        (at(pp) + at(mm) - at(pm) - at(mp)) / (at(pp) + at(pm) + at(mm) + at(mp))
    };
    let lin = at("HH") + at("HV") + at("VV") + at("VH");
    StokesSet::exact([
        corr("HH", "HV", "VV", "VH"),
        corr("DD", "DA", "AA", "AD"),
        corr("RR", "RL", "LL", "LR"),
        2.0 * (at("HH") + at("HV")) / lin - 1.0,
        2.0 * (at("HH") + at("VH")) / lin - 1.0,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const TABLE: [u64; 12] = [1710, 573, 1811, 453, 1750, 696, 1739, 787, 622, 1761, 740, 1698];

    #[test]
    fn table_linear_basis() {
        let s = degree_of_correlation(1710, 573, 1811, 453).unwrap();
        assert!((s - 0.5487).abs() < 1e-4);
        assert_eq!(degree_of_correlation(5, 5, 5, 5).unwrap(), 0.0);
        assert_eq!(degree_of_correlation(7, 0, 7, 0).unwrap(), 1.0);
        assert!(degree_of_correlation(0, 0, 0, 0).is_err());
    }

    #[test]
    fn table_stokes_values() {
        let s = stokes_from_counts(&TwoPhotonCounts::new(TABLE, 600.0)).unwrap();
        let expect = [0.549, 0.403, -0.435, 0.004, -0.049];
        for (v, e) in s.values().iter().zip(expect) {
            assert!((v - e).abs() < 1e-3, "{v} vs {e}");
        }
        let f = fidelity(&s);
        assert!((f.value - 0.586).abs() < 1e-3);
        assert!(f.entangled);
    }

    #[test]
    fn quoted_stokes_fidelity() {
        let f = fidelity(&StokesSet::exact([0.549, 0.403, -0.435, 0.004, -0.049]));
        assert!((f.value - 0.5855).abs() < 1e-12);
        assert!((f.value - 0.586).abs() < 1e-3);
        assert_eq!(fidelity(&StokesSet::exact([1.0, 1.0, -1.0, 0.0, 0.0])).value, 1.0);
        assert_eq!(fidelity(&StokesSet::exact([0.0; 5])).value, 0.25);
    }

    #[test]
    fn bell_state_counts() {
        let mut rho = Matrix4::zeros();
        for (i, j) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            rho[(i, j)] = C64::new(0.5, 0.0);
        }
        let c = born_counts(&rho, 1e6);
        let counts = TwoPhotonCounts::new(c.map(|x| x.round() as u64), 1.0);
        let s = stokes_from_counts(&counts).unwrap();
        let v = s.values();
        for (a, b) in v.iter().zip([1.0, 1.0, -1.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-9, "{v:?}");
        }
    }

    #[test]
    fn unbalanced_state_exceeds_unity() {
        // cos θ|HH⟩ + sin θ|VV⟩ at 2θ = π/4 reaches (1 + √2)/2
        let th = std::f64::consts::PI / 8.0;
        let mut rho = Matrix4::zeros();
        rho[(0, 0)] = C64::new(th.cos().powi(2), 0.0);
        rho[(3, 3)] = C64::new(th.sin().powi(2), 0.0);
        rho[(0, 3)] = C64::new(th.cos() * th.sin(), 0.0);
        rho[(3, 0)] = rho[(0, 3)];
        let c = born_counts(&rho, 1e9).map(|x| x.round() as u64);
        let f = fidelity(&stokes_from_counts(&TwoPhotonCounts::new(c, 1.0)).unwrap()).value;
        assert!((f - 0.5 * (1.0 + 2f64.sqrt())).abs() < 1e-6, "{f}");
    }

    #[test]
    fn uniform_counts_are_zero() {
        let s = stokes_from_counts(&TwoPhotonCounts::new([100; 12], 1.0)).unwrap();
        assert!(s.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn csv_ingest() {
        let t = TwoPhotonCounts::new(TABLE, 600.0);
        assert_eq!(TwoPhotonCounts::from_csv(&t.to_csv()).unwrap(), t);
        let missing: String = t.to_csv().lines().filter(|l| !l.starts_with("LR")).map(|l| format!("{l}\n")).collect();
        assert!(matches!(TwoPhotonCounts::from_csv(&missing), Err(Error::MissingSetting(s)) if s == "LR"));
        let uneven = t.to_csv().replace("RR,622,600", "RR,622,300");
        assert!(matches!(TwoPhotonCounts::from_csv(&uneven), Err(Error::UnequalDurations(..))));
    }

    #[test]
    fn report_json_has_fields() {
        let r = run_tomography(&TwoPhotonCounts::new(TABLE, 600.0), 6.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert!(v["fidelity"]["value"].as_f64().unwrap() > 0.58);
        assert_eq!(v["fidelity"]["entangled"], true);
        assert!(v["stokes"]["s22"]["error"].as_f64().unwrap() > 0.0);
    }

    fn random_state(z: &[f64]) -> Matrix4<C64> {
        let m = Matrix4::from_fn(|i, j| C64::new(z[4 * i + j], z[16 + 4 * i + j]));
        let rho = m * m.adjoint();
        let tr: C64 = (0..4).map(|k| rho[(k, k)]).sum();
        rho / tr
    }

    proptest! {
        #[test]
        fn fidelity_bounded_for_physical_states(z in prop::collection::vec(-1.0f64..1.0, 32)) {
            let rho = random_state(&z);
            prop_assume!((0..4).map(|k| rho[(k, k)].re).sum::<f64>() > 0.0);
            let c = born_counts(&rho, 1.0);
            let lin: f64 = c[..4].iter().sum();
            let s33 = (c[0] + c[2] - c[1] - c[3]) / lin;
            let s11 = (c[4] + c[6] - c[5] - c[7]) / c[4..8].iter().sum::<f64>();
            let s22 = (c[8] + c[10] - c[9] - c[11]) / c[8..].iter().sum::<f64>();
            let s30 = (c[0] + c[1] - c[2] - c[3]) / lin;
            let s03 = (c[0] + c[3] - c[1] - c[2]) / lin;
            let f = fidelity(&StokesSet::exact([s33, s11, s22, s30, s03])).value;
            // the correlation part is the Bell overlap and stays in [0, 1];
            // the single-photon terms shift it by a quarter of <Z1> + <Z2>
            let overlap = 0.25 * (1.0 + s33 + s11 - s22);
            prop_assert!((-1e-9..=1.0 + 1e-9).contains(&overlap), "{}", overlap);
            prop_assert!((f - overlap - 0.25 * (s30 + s03)).abs() < 1e-9);
            prop_assert!((-0.5 - 1e-9..=1.5 + 1e-9).contains(&f), "{}", f);
        }

        #[test]
        fn hv_swap_keeps_correlations(c in prop::array::uniform12(1u64..5000)) {
            let t = TwoPhotonCounts::new(c, 10.0);
            let a = stokes_from_counts(&t).unwrap();
            let b = stokes_from_counts(&t.swap_hv()).unwrap();
            prop_assert!((a.s33.value - b.s33.value).abs() < 1e-12);
            prop_assert!((a.s11.value - b.s11.value).abs() < 1e-12);
            prop_assert!((a.s22.value - b.s22.value).abs() < 1e-12);
            prop_assert!((a.s30.value + b.s30.value).abs() < 1e-12);
            prop_assert!((a.s03.value + b.s03.value).abs() < 1e-12);
            // only the single-photon terms move the fidelity
            let shift = fidelity(&b).value - fidelity(&a).value;
            prop_assert!((shift + 0.5 * (a.s30.value + a.s03.value)).abs() < 1e-12);
        }

        #[test]
        fn hv_swap_invariant_for_balanced_tables(
            hh in 1u64..5000, hv in 1u64..5000, rest in prop::array::uniform8(1u64..5000)
        ) {
            let mut c = [hh, hv, hh, hv, 0, 0, 0, 0, 0, 0, 0, 0];
            c[4..].copy_from_slice(&rest);
            let t = TwoPhotonCounts::new(c, 10.0);
            let a = fidelity(&stokes_from_counts(&t).unwrap()).value;
            let b = fidelity(&stokes_from_counts(&t.swap_hv()).unwrap()).value;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
