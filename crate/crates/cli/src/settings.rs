//! Layered settings: command-line flag, then config file, then default.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::Failure;

/// Keys accepted in a config file. Underscores and dashes are interchangeable.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "protocol",
    "label-column",
    "missing-token",
    "impute-neighbors",
    "trees",
    "max-depth",
    "subsample",
    "eta",
    "lambda",
    "gamma",
    "pop",
    "gens",
    "cx-prob",
    "mut-prob",
    "tournament",
    "elitism",
    "restarts",
    "fitness-folds",
    "knn-k",
    "cv-k",
    "cv-rounds",
    "classifiers",
];

#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|m| Failure::invalid(format!("{}: {m}", path.display())))
    }

    /// A JSON object, or `key = value` lines with `#` comments.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        if text.trim_start().starts_with('{') {
            let obj: serde_json::Map<String, serde_json::Value> =
                serde_json::from_str(text).map_err(|e| format!("invalid JSON config: {e}"))?;
            for (k, v) in obj {
                let v = match v {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Array(items) => items
                        .iter()
                        .map(|i| i.as_str().map(str::to_string).unwrap_or_else(|| i.to_string()))
                        .collect::<Vec<_>>()
                        .join(","),
                    other => other.to_string(),
                };
                values.insert(normalize(&k), v);
            }
        } else {
            for (n, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
                values.insert(normalize(k.trim()), v.trim().to_string());
            }
        }
        if let Some(bad) = values.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(format!("unknown config key `{bad}`"));
        }
        Ok(ConfigFile { values })
    }

    /// The flag value if given, else the parsed config value, else `None`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, Failure>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "unregistered key {key}");
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| Failure::invalid(format!("config `{key}` = `{raw}`: {e}"))),
        }
    }

    /// Like [`pick`](Self::pick), assigning into `slot` when a value exists.
    pub fn apply<T>(&self, slot: &mut T, flag: Option<T>, key: &str) -> Result<(), Failure>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.pick(flag, key)? {
            *slot = v;
        }
        Ok(())
    }
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_value_and_json_agree() {
        let kv = ConfigFile::parse("trees = 20\n# comment\ncx_prob=0.9\nclassifiers = knn,nb\n").unwrap();
        let js = ConfigFile::parse(r#"{"trees": 20, "cx-prob": 0.9, "classifiers": ["knn", "nb"]}"#).unwrap();
        assert_eq!(kv.values, js.values);
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let cfg = ConfigFile::parse("trees = 20").unwrap();
        assert_eq!(cfg.pick(Some(5usize), "trees").unwrap(), Some(5));
        assert_eq!(cfg.pick(None::<usize>, "trees").unwrap(), Some(20));
        assert_eq!(cfg.pick(None::<usize>, "gens").unwrap(), None);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ConfigFile::parse("colour = red").is_err());
        assert!(ConfigFile::parse("trees").is_err());
        let cfg = ConfigFile::parse("trees = many").unwrap();
        assert!(cfg.pick(None::<usize>, "trees").is_err());
    }
}
