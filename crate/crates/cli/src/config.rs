//! Layered run configuration: defaults, then a config file, then flags.
//!
//! Layers are merged as JSON trees and deserialized once at the end, so a
//! partial file or a single `--set` only touches the keys it names. A report
//! written by this tool can be passed back as a config file; its `config`
//! object is used.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use tubetopo::edm::{EdmConfig, Representative};
use tubetopo::heads::LossWeights;
use tubetopo::metrics::{EvalSpec, HausdorffMode, PatchSpec};
use tubetopo::skeleton::ThinningParams;
use tubetopo::synth::{CutPlan, TubeNetworkSpec};
use tubetopo::Shape;

use crate::CliError;

/// Mining options as written in config files. Unset window and eps follow
/// the volume shape.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdmSettings {
    pub window: Option<[usize; 3]>,
    pub dbscan_eps: Option<f64>,
    pub dbscan_min_pts: Option<usize>,
    pub representative: Representative,
    pub std_multiplier: Option<f64>,
}

impl EdmSettings {
    pub fn resolve(&self, shape: Shape, seed: u64) -> EdmConfig {
        let mut cfg = match self.window {
            Some(w) => EdmConfig::with_window(w),
            None => EdmConfig::for_patch(shape),
        };
        if let Some(eps) = self.dbscan_eps {
            cfg.dbscan_eps = eps;
        }
        if let Some(m) = self.dbscan_min_pts {
            cfg.dbscan_min_pts = m;
        }
        if let Some(m) = self.std_multiplier {
            cfg.std_multiplier = m;
        }
        cfg.representative = self.representative;
        cfg.rng_seed = seed;
        cfg
    }

    /// Fully specified settings equal to `cfg`.
    pub fn pinned(cfg: &EdmConfig) -> Self {
        EdmSettings {
            window: Some(cfg.window),
            dbscan_eps: Some(cfg.dbscan_eps),
            dbscan_min_pts: Some(cfg.dbscan_min_pts),
            representative: cfg.representative,
            std_multiplier: Some(cfg.std_multiplier),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSettings {
    /// Float inputs hold logits rather than probabilities.
    pub logits: bool,
    /// The endpoint input is already a skeleton.
    pub is_skeleton: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSettings {
    /// Foreground labels to score; unset uses every label present.
    pub classes: Option<Vec<u32>>,
    pub patch: PatchSpec,
    pub hausdorff: HausdorffMode,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DarSettings {
    /// Inline channel maps `{in, out, weight, bias}`; random maps are drawn
    /// from the seed when absent.
    pub hr: Option<Value>,
    pub hc: Option<Value>,
    /// Width of the lifted features for random maps; 0 means twice the
    /// segmentation channels.
    pub hidden: usize,
    /// Output channels for random maps; 0 means the segmentation channels.
    pub out_channels: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub network: TubeNetworkSpec,
    pub cuts: CutPlan,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    /// Worker threads; never echoed since it cannot change any output.
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    pub input: InputSettings,
    pub thinning: ThinningParams,
    pub edm: EdmSettings,
    pub metrics: MetricsSettings,
    pub loss: LossWeights,
    pub dar: DarSettings,
    pub synth: SynthSettings,
}

/// Recursive object merge; `over` wins on scalars and arrays.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Reads a TOML or JSON config file. A report's `config` object is unwrapped.
pub fn load_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let value: Value = if is_json {
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?
    };
    match value {
        Value::Object(mut map) if map.contains_key("schema_version") && map.contains_key("config") => {
            Ok(map.remove("config").unwrap_or(Value::Object(Map::new())))
        }
        v @ Value::Object(_) => Ok(v),
        _ => Err(CliError::Usage(format!("config {} must be a table", path.display()))),
    }
}

/// Parses `a.b.c=value`; the value is read as TOML, falling back to a string.
pub fn parse_assignment(text: &str) -> Result<Value, CliError> {
    let (key, raw) =
        text.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {text:?}")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Usage(format!("bad key in --set {text:?}")));
    }
    let value: Value = match toml::from_str::<Map<String, Value>>(&format!("v = {}", raw.trim())) {
        Ok(mut m) => m.remove("v").unwrap_or(Value::Null),
        Err(_) => Value::String(raw.trim().to_string()),
    };
    Ok(at(key, value))
}

/// Builds a nested override from a dotted path.
pub fn at(path: &str, value: Value) -> Value {
    path.rsplit('.').fold(value, |inner, k| {
        let mut m = Map::new();
        m.insert(k.to_string(), inner);
        Value::Object(m)
    })
}

pub fn resolve(layers: Vec<Value>) -> Result<Settings, CliError> {
    let mut tree = serde_json::to_value(Settings::default()).expect("settings serialize");
    for layer in layers {
        merge(&mut tree, layer);
    }
    serde_json::from_value(tree).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}

/// Only the parts of `Settings` a command reads, with `edm` pinned.
pub fn echo(settings: &Settings, sections: &[&str], edm: Option<&EdmConfig>) -> Value {
    let mut full = serde_json::to_value(settings).expect("settings serialize");
    if let Some(cfg) = edm {
        full["edm"] = serde_json::to_value(EdmSettings::pinned(cfg)).expect("edm serialize");
    }
    let mut out = Map::new();
    out.insert("seed".into(), full["seed"].take());
    for s in sections {
        out.insert((*s).into(), full[*s].take());
    }
    Value::Object(out)
}

impl Settings {
    pub fn eval_spec(&self) -> EvalSpec {
        EvalSpec {
            classes: self.metrics.classes.clone(),
            patch: self.metrics.patch,
            hausdorff: self.metrics.hausdorff,
            thinning: self.thinning,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn later_layers_win() {
        let s = resolve(vec![
            json!({"seed": 3, "edm": {"window": [4, 4, 4]}}),
            parse_assignment("edm.dbscan_eps=2.5").unwrap(),
            parse_assignment("seed=9").unwrap(),
        ])
        .unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.edm.window, Some([4, 4, 4]));
        assert_eq!(s.edm.dbscan_eps, Some(2.5));
        assert_eq!(s.thinning, ThinningParams::default());
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        assert!(matches!(resolve(vec![json!({"edm": {"windw": 3}})]), Err(CliError::Usage(_))));
        assert!(parse_assignment("novalue").is_err());
    }

    #[test]
    fn string_fallback() {
        assert_eq!(
            parse_assignment("edm.representative=medoid").unwrap(),
            json!({"edm": {"representative": "medoid"}})
        );
    }

    #[test]
    fn echo_round_trips() {
        let s = resolve(vec![json!({"seed": 5, "thinning": {"iterations": 4}})]).unwrap();
        let cfg = s.edm.resolve(Shape::new_3d(32, 32, 32), s.seed);
        let echoed = echo(&s, &["thinning", "edm"], Some(&cfg));
        let again = resolve(vec![echoed]).unwrap();
        assert_eq!(again.edm.resolve(Shape::new_3d(8, 8, 8), again.seed), cfg);
        assert_eq!(again.thinning.iterations, 4);
    }
}
