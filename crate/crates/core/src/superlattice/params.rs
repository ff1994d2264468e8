use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vacuum permittivity, F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.8541878128e-12;
/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602176634e-19;

const PER_CM2: f64 = 1e4; // cm⁻² → m⁻²
const CM_PER_KV: f64 = 1e-5; // cm/kV → m/V
const KV_PER_CM: f64 = 1e5; // kV/cm → V/m
const NM: f64 = 1e-9;

/// Superlattice constants in SI units (m, s, C, V, A).
///
/// Areal densities are in m⁻², fields in V/m, `c2` in m/V, `g` in (Ω·m)⁻¹.
#[derive(Clone, Debug, PartialEq)]
pub struct SlParameters {
    /// Number of wells `N`.
    pub n_wells: usize,
    pub doping: f64,
    pub c1: f64,
    pub c2: f64,
    pub v_m: f64,
    pub f_max: f64,
    /// Contact conductivity.
    pub g: f64,
    /// Period length.
    pub ell: f64,
    pub epsilon: f64,
    pub charge: f64,
    /// Cross-sectional area; enters only through `η = 1/(e·a)`.
    pub area: f64,
    /// Total bias `V`.
    pub bias: f64,
}

impl Default for SlParameters {
    fn default() -> Self {
        SlParameterFile::default().to_si().expect("default parameters are valid")
    }
}

impl SlParameters {
    pub fn validate(&self) -> Result<()> {
        if self.n_wells < 2 {
            return Err(Error::InvalidParameter(format!("N must be at least 2, got {}", self.n_wells)));
        }
        let positive = [
            ("N_D", self.doping),
            ("c1", self.c1),
            ("c2", self.c2),
            ("v_M", self.v_m),
            ("F_max", self.f_max),
            ("g", self.g),
            ("ell", self.ell),
            ("epsilon", self.epsilon),
            ("e", self.charge),
            ("area", self.area),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !self.bias.is_finite() {
            return Err(Error::InvalidParameter("bias must be finite".into()));
        }
        Ok(())
    }

    pub fn with_bias(&self, bias: f64) -> Self {
        SlParameters { bias, ..self.clone() }
    }

    /// Noise strength `η = 1/(e·a)`, C⁻¹m⁻².
    pub fn eta(&self) -> f64 {
        1.0 / (self.charge * self.area)
    }

    /// Current density scale `e·v_M·N_D/ℓ`, A/m².
    pub fn current_scale(&self) -> f64 {
        self.charge * self.v_m * self.doping / self.ell
    }

    pub fn to_file(&self) -> SlParameterFile {
        SlParameterFile {
            n: self.n_wells,
            n_d_per_cm2: self.doping / PER_CM2,
            c1_per_cm2: self.c1 / PER_CM2,
            c2_cm_per_kv: self.c2 / CM_PER_KV,
            v_m_m_per_s: self.v_m,
            f_max_kv_per_cm: self.f_max / KV_PER_CM,
            g_per_ohm_m: self.g,
            ell_nm: self.ell / NM,
            epsilon_f_per_m: self.epsilon,
            e_c: self.charge,
            area_m2: self.area,
            bias_v: self.bias,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SlParameterFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.to_si()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// The on-disk parameter document: laboratory units, unit-suffixed keys.
/// Missing keys take their defaults; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlParameterFile {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "N_D_per_cm2")]
    pub n_d_per_cm2: f64,
    pub c1_per_cm2: f64,
    #[serde(rename = "c2_cm_per_kV")]
    pub c2_cm_per_kv: f64,
    #[serde(rename = "v_M_m_per_s")]
    pub v_m_m_per_s: f64,
    #[serde(rename = "F_max_kV_per_cm")]
    pub f_max_kv_per_cm: f64,
    pub g_per_ohm_m: f64,
    pub ell_nm: f64,
    #[serde(rename = "epsilon_F_per_m")]
    pub epsilon_f_per_m: f64,
    #[serde(rename = "e_C")]
    pub e_c: f64,
    pub area_m2: f64,
    #[serde(rename = "bias_V")]
    pub bias_v: f64,
}

impl Default for SlParameterFile {
    fn default() -> Self {
        SlParameterFile {
            n: 40,
            n_d_per_cm2: 1.5e11,
            c1_per_cm2: 1.68e10,
            c2_cm_per_kv: 3.0145,
            v_m_m_per_s: 1.691,
            f_max_kv_per_cm: 3.945,
            g_per_ohm_m: 0.08,
            ell_nm: 12.67,
            epsilon_f_per_m: 12.85 * VACUUM_PERMITTIVITY,
            e_c: ELEMENTARY_CHARGE,
            area_m2: 1e-9,
            bias_v: 0.52,
        }
    }
}

impl SlParameterFile {
    pub fn to_si(&self) -> Result<SlParameters> {
        let p = SlParameters {
            n_wells: self.n,
            doping: self.n_d_per_cm2 * PER_CM2,
            c1: self.c1_per_cm2 * PER_CM2,
            c2: self.c2_cm_per_kv * CM_PER_KV,
            v_m: self.v_m_m_per_s,
            f_max: self.f_max_kv_per_cm * KV_PER_CM,
            g: self.g_per_ohm_m,
            ell: self.ell_nm * NM,
            epsilon: self.epsilon_f_per_m,
            charge: self.e_c,
            area: self.area_m2,
            bias: self.bias_v,
        };
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_in_si() {
        let p = SlParameters::default();
        assert_eq!(p.n_wells, 40);
        assert_eq!(p.doping, 1.5e15);
        assert_eq!(p.c1, 1.68e14);
        assert!((p.c2 - 3.0145e-5).abs() < 1e-18);
        assert_eq!(p.f_max, 3.945e5);
        assert!((p.ell - 12.67e-9).abs() < 1e-24);
        assert_eq!(p.bias, 0.52);
    }

    #[test]
    fn json_roundtrip_and_unknown_keys() {
        let p = SlParameters::default();
        let text = serde_json::to_string(&p.to_file()).unwrap();
        assert!(text.contains("\"N_D_per_cm2\""));
        assert!(text.contains("\"ell_nm\""));
        let q = SlParameters::from_json(&text).unwrap();
        assert!((q.doping - p.doping).abs() <= 1e-16 * p.doping);
        let partial = SlParameters::from_json(r#"{"N": 10, "bias_V": 0.3}"#).unwrap();
        assert_eq!(partial.n_wells, 10);
        assert_eq!(partial.bias, 0.3);
        let err = SlParameters::from_json(r#"{"N_D": 1.0}"#).unwrap_err();
        assert!(err.to_string().contains("N_D"), "{err}");
    }

    #[test]
    fn rejects_bad_values() {
        assert!(SlParameters::from_json(r#"{"N": 1}"#).is_err());
        assert!(SlParameters::from_json(r#"{"g_per_ohm_m": 0.0}"#).is_err());
        assert!(SlParameters::from_json(r#"{"ell_nm": -13.0}"#).is_err());
    }

    #[test]
    fn eta_scales_inversely_with_area() {
        let p = SlParameters::default();
        let q = SlParameters { area: 2.0 * p.area, ..p.clone() };
        assert!((p.eta() / q.eta() - 2.0).abs() < 1e-15);
    }
}
