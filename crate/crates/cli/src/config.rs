//! Run configuration. Every section rejects unknown keys; numbers carry their
//! unit in the key name where they have one.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use gmam_core::equilibria::ContinuationSettings;
use gmam_core::models::{MaierStein, NormalFormFamily};
use gmam_core::scaling::DEFAULT_LEADING_V_MAX;
use gmam_core::superlattice::{SlParameterFile, Superlattice};
use gmam_core::GmamSettings;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Superlattice,
    DoubleWell,
    MaierStein,
    SaddleNodeNormalForm,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    /// Model constants; the accepted keys depend on `model`.
    #[serde(default)]
    pub model_params: serde_json::Value,
    #[serde(default)]
    pub gmam: GmamSettings,
    #[serde(default)]
    pub continuation: ContinuationSettings,
    #[serde(default)]
    pub equilibria: EquilibriaSettings,
    #[serde(default)]
    pub sweep: SweepGrid,
    #[serde(default)]
    pub mincurve: MincurveSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriaSettings {
    /// Superlattice: high-field periods of the upper of the two branches.
    pub high_field_periods: usize,
    /// Superlattice: how far branches are continued either side of the bias.
    #[serde(rename = "branch_span_V")]
    pub branch_span_v: f64,
    /// Fixtures: Newton is started from a grid on `[−w, w]^d`.
    pub search_half_width: f64,
    pub search_points: usize,
}

impl Default for EquilibriaSettings {
    fn default() -> Self {
        EquilibriaSettings { high_field_periods: 5, branch_span_v: 0.1, search_half_width: 2.0, search_points: 9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MincurveSettings {
    /// Fixtures in two or more dimensions start from the straight segment
    /// bowed sideways by this fraction of its length, so that a minimizer
    /// off a symmetry axis can be reached.
    pub initial_bend: f64,
}

impl Default for MincurveSettings {
    fn default() -> Self {
        MincurveSettings { initial_bend: 0.1 }
    }
}

/// Bias grid of a sweep, in the reduced distance `v = |V_th − V|/V_th`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub v_min: f64,
    /// Defaults to the reduced distance of the configured bias.
    pub v_max: Option<f64>,
    pub points: usize,
    /// Upper end of the window of the leading power-law fit.
    pub leading_fit_v_max: f64,
    pub warm_start: bool,
    /// The fold is searched by continuing the attractor this far upwards.
    #[serde(rename = "fold_search_span_V")]
    pub fold_search_span_v: f64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            v_min: 1e-4,
            v_max: None,
            points: 30,
            leading_fit_v_max: DEFAULT_LEADING_V_MAX,
            warm_start: true,
            fold_search_span_v: 0.2,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct MaierSteinParams {
    beta: f64,
}

impl Default for MaierSteinParams {
    fn default() -> Self {
        MaierSteinParams { beta: MaierStein::default().beta }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct NormalFormParams {
    v_th: f64,
    bias: f64,
}

impl Default for NormalFormParams {
    fn default() -> Self {
        NormalFormParams { v_th: 1.0, bias: 0.9 }
    }
}

/// A model ready to run.
pub enum Model {
    DoubleWell,
    MaierStein(MaierStein),
    /// `b = (V_th − V) − x²` at bias `V`.
    NormalForm { family: NormalFormFamily, bias: f64 },
    Superlattice(Superlattice),
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::DoubleWell => "double_well",
            Model::MaierStein(_) => "maier_stein",
            Model::NormalForm { .. } => "saddle_node_normal_form",
            Model::Superlattice(_) => "superlattice",
        }
    }

    pub fn bias(&self) -> Option<f64> {
        match self {
            Model::NormalForm { bias, .. } => Some(*bias),
            Model::Superlattice(sl) => Some(sl.params().bias),
            _ => None,
        }
    }

    pub fn with_bias(self, bias: f64) -> Result<Model, String> {
        match self {
            Model::NormalForm { family, .. } => Ok(Model::NormalForm { family, bias }),
            Model::Superlattice(sl) => Ok(Model::Superlattice(sl.with_bias(bias))),
            other => Err(format!("model {} has no bias parameter", other.name())),
        }
    }
}

/// Deserialize `T`, reporting the path of the offending key on failure.
fn parse_value<T: DeserializeOwned>(value: serde_json::Value, section: &str) -> Result<T, String> {
    let value = if value.is_null() { serde_json::Value::Object(Default::default()) } else { value };
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            format!("{section}: {}", e.inner())
        } else {
            format!("{section}.{path}: {}", e.inner())
        }
    })
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                e.inner().to_string()
            } else {
                format!("{path}: {}", e.inner())
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn model(&self) -> Result<Model, String> {
        let params = self.model_params.clone();
        let model = match self.model {
            ModelKind::DoubleWell => {
                parse_value::<NoParams>(params, "model_params")?;
                Model::DoubleWell
            }
            ModelKind::MaierStein => {
                let p: MaierSteinParams = parse_value(params, "model_params")?;
                Model::MaierStein(MaierStein { beta: p.beta })
            }
            ModelKind::SaddleNodeNormalForm => {
                let p: NormalFormParams = parse_value(params, "model_params")?;
                if !(p.v_th > 0.0) {
                    return Err("model_params.v_th: must be positive".into());
                }
                Model::NormalForm { family: NormalFormFamily { v_th: p.v_th }, bias: p.bias }
            }
            ModelKind::Superlattice => {
                let file: SlParameterFile = parse_value(params, "model_params")?;
                let sl = file.to_si().and_then(Superlattice::new).map_err(|e| format!("model_params: {e}"))?;
                Model::Superlattice(sl)
            }
        };
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.gmam.validate().map_err(|e| format!("gmam: {e}"))?;
        let s = &self.sweep;
        if !(s.v_min > 0.0) {
            return Err("sweep.v_min: must be positive".into());
        }
        if let Some(v_max) = s.v_max {
            if !(v_max > s.v_min) {
                return Err("sweep.v_max: must exceed sweep.v_min".into());
            }
        }
        if s.points < 2 {
            return Err(format!("sweep.points: need at least 2 grid points, got {}", s.points));
        }
        if !(s.leading_fit_v_max > 0.0) {
            return Err("sweep.leading_fit_v_max: must be positive".into());
        }
        if self.equilibria.search_points < 1 || !(self.equilibria.search_half_width > 0.0) {
            return Err("equilibria: search grid must be non-empty".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = RunConfig::from_json(r#"{"model": "double_well"}"#).unwrap();
        assert_eq!(c.model, ModelKind::DoubleWell);
        assert_eq!(c.gmam, GmamSettings::default());
        assert_eq!(c.output_dir, PathBuf::from("output"));
        assert!(c.validate().is_ok());
        assert!(matches!(c.model().unwrap(), Model::DoubleWell));
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = RunConfig::from_json(r#"{"model": "double_well", "gmam": {"time_stp": 1.0}}"#).unwrap_err();
        assert!(e.contains("time_stp"), "{e}");
        let e = RunConfig::from_json(r#"{"model": "double_well", "colour": 1}"#).unwrap_err();
        assert!(e.contains("colour"), "{e}");
        let c = RunConfig::from_json(r#"{"model": "superlattice", "model_params": {"ell_m": 1e-8}}"#).unwrap();
        let e = c.model().err().unwrap();
        assert!(e.contains("ell_m"), "{e}");
    }

    #[test]
    fn type_errors_name_the_path() {
        let e = RunConfig::from_json(r#"{"model": "double_well", "sweep": {"points": "many"}}"#).unwrap_err();
        assert!(e.starts_with("sweep.points"), "{e}");
        let c = RunConfig::from_json(r#"{"model": "maier_stein", "model_params": {"beta": "x"}}"#).unwrap();
        assert!(c.model().err().unwrap().starts_with("model_params.beta"));
    }

    #[test]
    fn empty_grid_is_rejected() {
        let c = RunConfig::from_json(r#"{"model": "saddle_node_normal_form", "sweep": {"points": 0}}"#).unwrap();
        assert!(c.validate().unwrap_err().starts_with("sweep.points"));
    }

    #[test]
    fn bias_override() {
        let c = RunConfig::from_json(r#"{"model": "saddle_node_normal_form", "model_params": {"bias": 0.8}}"#).unwrap();
        let m = c.model().unwrap();
        assert_eq!(m.bias(), Some(0.8));
        assert_eq!(m.with_bias(0.95).unwrap().bias(), Some(0.95));
        assert!(Model::DoubleWell.with_bias(0.1).is_err());
    }
}
