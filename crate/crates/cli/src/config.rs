//! Layered configuration: struct defaults, then a JSON file, then
//! `--set key=value` overrides addressed by dotted paths.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Config problems the user can fix on the command line (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn merge(base: &mut Map<String, Value>, layer: Map<String, Value>, prefix: &str) -> Result<()> {
    for (key, value) in layer {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match base.get_mut(&key) {
            None => return Err(UsageError(format!("unknown config key `{path}`")).into()),
            Some(Value::Object(inner)) if value.is_object() => {
                let Value::Object(layer) = value else { unreachable!() };
                merge(inner, layer, &path)?;
            }
            Some(slot) => *slot = value,
        }
    }
    Ok(())
}

fn set(base: &mut Map<String, Value>, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| UsageError(format!("override `{assignment}` is not of the form key=value")))?;
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().unwrap_or_default();
    let mut map = base;
    for p in &parts {
        map = match map.get_mut(*p) {
            Some(Value::Object(m)) => m,
            _ => return Err(UsageError(format!("unknown config key `{key}`")).into()),
        };
    }
    let slot = map
        .get_mut(last)
        .ok_or_else(|| UsageError(format!("unknown config key `{key}`")))?;
    *slot = match slot {
        Value::String(_) => Value::String(raw.to_string()),
        _ => serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string())),
    };
    Ok(())
}

/// Resolves `T` from its defaults, an optional JSON file and overrides.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(file: Option<&Path>, overrides: &[String]) -> Result<T> {
    let Value::Object(mut base) = serde_json::to_value(T::default())? else {
        anyhow::bail!("config defaults are not a JSON object");
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let layer: Value = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("config {} is not valid JSON: {e}", path.display())))?;
        let Value::Object(layer) = layer else {
            return Err(UsageError(format!("config {} must be a JSON object", path.display())).into());
        };
        merge(&mut base, layer, "")?;
    }
    for o in overrides {
        set(&mut base, o)?;
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| UsageError(format!("invalid config: {e}")).into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Inner {
        width: usize,
    }

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Cfg {
        lr: f64,
        name: String,
        path: Option<String>,
        inner: Inner,
    }

    #[test]
    fn overrides_apply_by_path() {
        let c: Cfg = resolve(
            None,
            &["lr=0.5".into(), "name=12".into(), "path=/tmp/x".into(), "inner.width=3".into()],
        )
        .unwrap();
        assert_eq!(c, Cfg { lr: 0.5, name: "12".into(), path: Some("/tmp/x".into()), inner: Inner { width: 3 } });
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        for bad in ["learning_rate=1", "inner.height=2", "lr.x=1", "noequals"] {
            let err = resolve::<Cfg>(None, &[bad.into()]).unwrap_err();
            assert!(err.downcast_ref::<UsageError>().is_some(), "{bad}");
        }
    }

    #[test]
    fn file_layer_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"inner": {"width": 9}, "lr": 2}"#).unwrap();
        let c: Cfg = resolve(Some(&p), &["lr=3".into()]).unwrap();
        assert_eq!((c.lr, c.inner.width), (3.0, 9));
        std::fs::write(&p, r#"{"inner": {"depth": 9}}"#).unwrap();
        let err = resolve::<Cfg>(Some(&p), &[]).unwrap_err();
        assert!(err.to_string().contains("inner.depth"));
    }
}
