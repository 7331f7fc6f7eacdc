//! Dotted `key=value` overrides applied to any serializable configuration.

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::Value;

use super::ScenarioError;

fn err(key: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Override { key: key.to_owned(), message: message.into() }
}

/// Splits `key=value`.
pub fn parse_override(raw: &str) -> Result<(String, String), ScenarioError> {
    match raw.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_owned(), v.trim().to_owned())),
        _ => Err(err(raw, "expected key=value")),
    }
}

/// Reads `raw` as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_owned()))
}

fn set(root: &mut Value, key: &str, value: Value) -> Result<(), ScenarioError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        node = match node {
            Value::Table(t) => {
                if last {
                    let value = match (t.get(*part), value) {
                        (Some(Value::Float(_)), Value::Integer(i)) => Value::Float(i as f64),
                        (_, v) => v,
                    };
                    // absent keys are allowed (optional fields); unknown ones are
                    // rejected when the tree is deserialized again
                    t.insert((*part).to_owned(), value);
                    return Ok(());
                }
                t.get_mut(*part).ok_or_else(|| err(key, format!("no section `{part}`")))?
            }
            Value::Array(a) => {
                let i: usize = part.parse().map_err(|_| err(key, format!("`{part}` is not an array index")))?;
                let len = a.len();
                let slot = a.get_mut(i).ok_or_else(|| err(key, format!("index {i} out of range (length {len})")))?;
                if last {
                    *slot = match (&*slot, value) {
                        (Value::Float(_), Value::Integer(n)) => Value::Float(n as f64),
                        (_, v) => v,
                    };
                    return Ok(());
                }
                slot
            }
            _ => return Err(err(key, format!("`{part}` is not a section"))),
        };
    }
    unreachable!("loop returns on the last segment")
}

/// Applies overrides in order and re-validates the result against the schema.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(
    value: &T,
    overrides: &[(String, String)],
) -> Result<T, ScenarioError> {
    let mut tree = Value::try_from(value).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    for (k, v) in overrides {
        set(&mut tree, k, parse_value(v))?;
    }
    tree.try_into().map_err(|e: toml::de::Error| {
        let keys: Vec<&str> = overrides.iter().map(|(k, _)| k.as_str()).collect();
        err(&keys.join(", "), e.to_string().trim().to_owned())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Inner {
        rate: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cap: Option<usize>,
    }

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Outer {
        name: String,
        pair: [f64; 2],
        inner: Inner,
    }

    fn base() -> Outer {
        Outer { name: "a".into(), pair: [1.0, 2.0], inner: Inner { rate: 0.5, cap: None } }
    }

    fn kv(k: &str, v: &str) -> (String, String) {
        (k.into(), v.into())
    }

    #[test]
    fn sets_nested_values() {
        let out = apply_overrides(&base(), &[kv("inner.rate", "2"), kv("pair.1", "7.5"), kv("name", "bob")]).unwrap();
        assert_eq!(out.inner.rate, 2.0);
        assert_eq!(out.pair, [1.0, 7.5]);
        assert_eq!(out.name, "bob");
        let out = apply_overrides(&base(), &[kv("inner.cap", "3")]).unwrap();
        assert_eq!(out.inner.cap, Some(3));
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(apply_overrides(&base(), &[kv("inner.typo", "1")]).is_err());
        assert!(apply_overrides(&base(), &[kv("missing.rate", "1")]).is_err());
        assert!(apply_overrides(&base(), &[kv("pair.5", "1")]).is_err());
        assert!(apply_overrides(&base(), &[kv("inner.rate", "fast")]).is_err());
    }

    #[test]
    fn parses_pairs() {
        assert_eq!(parse_override("a.b = 3").unwrap(), kv("a.b", "3"));
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("=3").is_err());
    }
}
