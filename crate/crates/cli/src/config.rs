//! Run configuration: defaults, overlaid by an optional JSON file, overlaid
//! by command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Recursively overlays `patch` onto `base`; objects merge key by key, any
/// other value replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, p) => *slot = p,
    }
}

/// Builds a nested patch from dotted paths, e.g. `spec.gamma`.
#[derive(Clone, Debug, Default)]
pub struct Overrides(Value);

impl Overrides {
    pub fn new() -> Self {
        Overrides(Value::Object(Map::new()))
    }

    pub fn set<V: Serialize>(&mut self, path: &str, value: Option<V>) -> &mut Self {
        if let Some(v) = value {
            let v = serde_json::to_value(v).expect("flag values serialize");
            let mut patch = v;
            for key in path.rsplit('.') {
                let mut m = Map::new();
                m.insert(key.to_string(), patch);
                patch = Value::Object(m);
            }
            merge(&mut self.0, patch);
        }
        self
    }

    pub fn into_value(self) -> Value {
        self.0
    }
}

/// Defaults of `P`, then the JSON file at `file`, then `overrides`.
pub fn resolve<P: Default + Serialize + DeserializeOwned>(
    file: Option<&Path>,
    overrides: Overrides,
) -> Result<P, CliError> {
    let mut value = serde_json::to_value(P::default()).expect("defaults serialize");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        let patch: Value =
            serde_json::from_str(&text).map_err(|e| CliError::input(format!("config {}: {e}", path.display())))?;
        if !patch.is_object() {
            return Err(CliError::input(format!("config {} must hold a JSON object", path.display())));
        }
        merge(&mut value, patch);
    }
    merge(&mut value, overrides.into_value());
    serde_json::from_value(value).map_err(|e| CliError::input(format!("invalid configuration: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use thinline::pipelines::EdgeParams;

    #[test]
    fn merge_is_recursive() {
        let mut base = json!({"a": {"b": 1, "c": 2}, "d": [1]});
        merge(&mut base, json!({"a": {"c": 3}, "d": [2, 3], "e": true}));
        assert_eq!(base, json!({"a": {"b": 1, "c": 3}, "d": [2, 3], "e": true}));
    }

    #[test]
    fn flags_override_file_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"spec": {"gamma": 0.5, "beta": 0.1}, "scale": 3}"#).unwrap();
        let mut o = Overrides::new();
        o.set("spec.gamma", Some(0.0)).set("q_min", None::<f64>);
        let p: EdgeParams<f64> = resolve(Some(&path), o).unwrap();
        assert_eq!(p.spec.gamma, 0.0);
        assert_eq!(p.spec.beta, 0.1);
        assert_eq!(p.scale, 3);
        assert_eq!(p.q_min, 0.0);
    }

    #[test]
    fn bad_config_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"scale": "big"}"#).unwrap();
        let err = resolve::<EdgeParams<f64>>(Some(&path), Overrides::new()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(resolve::<EdgeParams<f64>>(Some(&dir.path().join("none.json")), Overrides::new()).is_err());
    }
}
