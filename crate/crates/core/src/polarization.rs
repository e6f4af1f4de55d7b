//! Jones vectors in the H/V basis.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

/// Polarization state as two complex amplitudes on the H and V axes.
/// Deserializes from `{ h = [re, im], v = [re, im] }`, from one of the
/// labels H, V, D, A, R, L, or from `{ linear_deg = θ }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Jones {
    #[serde(serialize_with = "complex_pair::serialize")]
    pub h: C64,
    #[serde(serialize_with = "complex_pair::serialize")]
    pub v: C64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JonesRepr {
    Label(String),
    Components { h: [f64; 2], v: [f64; 2] },
    Linear { linear_deg: f64 },
}

impl<'de> Deserialize<'de> for Jones {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match JonesRepr::deserialize(d)? {
            JonesRepr::Label(s) => {
                Jones::from_label(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown polarization {s:?}")))
            }
            JonesRepr::Components { h, v } => Ok(Jones::new(C64::new(h[0], h[1]), C64::new(v[0], v[1]))),
            JonesRepr::Linear { linear_deg } => Ok(Jones::linear(linear_deg.to_radians())),
        }
    }
}

impl Jones {
    pub const fn new(h: C64, v: C64) -> Self {
        Self { h, v }
    }

    pub fn horizontal() -> Self {
        Self::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0))
    }

    pub fn vertical() -> Self {
        Self::new(C64::new(0.0, 0.0), C64::new(1.0, 0.0))
    }

    pub fn diagonal() -> Self {
        Self::new(C64::new(FRAC_1_SQRT_2, 0.0), C64::new(FRAC_1_SQRT_2, 0.0))
    }

    pub fn antidiagonal() -> Self {
        Self::new(C64::new(FRAC_1_SQRT_2, 0.0), C64::new(-FRAC_1_SQRT_2, 0.0))
    }

    pub fn right() -> Self {
        Self::new(C64::new(FRAC_1_SQRT_2, 0.0), C64::new(0.0, -FRAC_1_SQRT_2))
    }

    pub fn left() -> Self {
        Self::new(C64::new(FRAC_1_SQRT_2, 0.0), C64::new(0.0, FRAC_1_SQRT_2))
    }

    /// State named by a single letter: H, V, D, A, R or L.
    pub fn from_label(label: &str) -> Option<Self> {
        Some(match label.trim().to_ascii_uppercase().as_str() {
            "H" => Self::horizontal(),
            "V" => Self::vertical(),
            "D" => Self::diagonal(),
            "A" => Self::antidiagonal(),
            "R" => Self::right(),
            "L" => Self::left(),
            _ => return None,
        })
    }

    /// Linear polarization at `angle_rad` from horizontal.
    pub fn linear(angle_rad: f64) -> Self {
        Self::new(C64::new(angle_rad.cos(), 0.0), C64::new(angle_rad.sin(), 0.0))
    }

    /// Effective analyzer of a half-waveplate at `angle_rad` followed by a
    /// horizontal polarizer.
    pub fn half_waveplate_analyzer(angle_rad: f64) -> Self {
        Self::linear(2.0 * angle_rad)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.h.norm_sqr() + self.v.norm_sqr()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm_sqr().sqrt();
        Self::new(self.h / n, self.v / n)
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &Jones) -> C64 {
        self.h.conj() * other.h + self.v.conj() * other.v
    }

    /// Born-rule transmission of `self` through an ideal polarizer along `analyzer`.
    pub fn projection(&self, analyzer: &Jones) -> f64 {
        analyzer.inner(self).norm_sqr()
    }

    /// Phase `phase` applied to the V amplitude relative to H.
    pub fn with_relative_phase(&self, phase: f64) -> Self {
        Self::new(self.h, self.v * C64::from_polar(1.0, phase))
    }

    /// |e_H² + e_V²|: 1 for any linear polarization, 0 for circular.
    pub fn two_photon_factor(&self) -> f64 {
        (self.h * self.h + self.v * self.v).norm()
    }

    /// Stokes vector (S1, S2, S3) of a normalized state: H/V, D/A, R/L.
    pub fn stokes(&self) -> [f64; 3] {
        let s1 = self.h.norm_sqr() - self.v.norm_sqr();
        let s2 = 2.0 * (self.h.conj() * self.v).re;
        let s3 = -2.0 * (self.h.conj() * self.v).im;
        [s1, s2, s3]
    }
}

mod complex_pair {
    use num_complex::Complex64 as C64;
    use serde::{Serialize, Serializer};

    pub fn serialize<S: Serializer>(z: &C64, s: S) -> Result<S::Ok, S::Error> {
        [z.re, z.im].serialize(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn malus() {
        let h = Jones::horizontal();
        assert!((h.projection(&Jones::horizontal()) - 1.0).abs() < 1e-15);
        assert!((h.projection(&Jones::diagonal()) - 0.5).abs() < 1e-15);
        assert!(h.projection(&Jones::vertical()).abs() < 1e-15);
        assert!((h.projection(&Jones::right()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn circular_has_no_two_photon_coupling() {
        assert!(Jones::right().two_photon_factor() < 1e-15);
        assert!(Jones::left().two_photon_factor() < 1e-15);
        for k in 0..12 {
            let lin = Jones::linear(k as f64 * 0.3);
            assert!((lin.two_photon_factor() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stokes_axes() {
        assert_eq!(Jones::horizontal().stokes(), [1.0, 0.0, 0.0]);
        let d = Jones::diagonal().stokes();
        assert!((d[1] - 1.0).abs() < 1e-12);
        let r = Jones::right().stokes();
        assert!((r[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parses_labels_and_components() {
        let j: Jones = serde_json::from_str("\"d\"").unwrap();
        assert_eq!(j, Jones::diagonal());
        let j: Jones = serde_json::from_str(r#"{"h": [0.0, 0.0], "v": [1.0, 0.0]}"#).unwrap();
        assert_eq!(j, Jones::vertical());
        let j: Jones = serde_json::from_str(r#"{"linear_deg": 90.0}"#).unwrap();
        assert!((j.projection(&Jones::vertical()) - 1.0).abs() < 1e-12);
        let back: Jones = serde_json::from_str(&serde_json::to_string(&Jones::right()).unwrap()).unwrap();
        assert_eq!(back, Jones::right());
        assert!(serde_json::from_str::<Jones>("\"Q\"").is_err());
    }

    #[test]
    fn waveplate_doubles_angle() {
        let a = Jones::half_waveplate_analyzer(std::f64::consts::FRAC_PI_8);
        assert!((a.projection(&Jones::diagonal()) - 1.0).abs() < 1e-12);
    }
}
