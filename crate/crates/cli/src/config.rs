//! Layered run configuration: flags > config file section > config file `[common]` > defaults.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use std::collections::BTreeMap;
use std::path::Path;
use wnkdv::{SpectralPoint, TorusGrid};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Compute(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Compute(m) => write!(f, "compute error: {m}"),
        }
    }
}

impl From<wnkdv::LabError> for CliError {
    fn from(e: wnkdv::LabError) -> Self {
        use wnkdv::LabError::*;
        match e {
            InvalidInput(_) | GridMismatch | NonCommensurate { .. } => CliError::Config(e.to_string()),
            other => CliError::Compute(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Compute(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn config_err<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}

fn normalize(map: Map<String, Value>) -> Map<String, Value> {
    map.into_iter().map(|(k, v)| (k.replace('_', "-"), v)).collect()
}

pub struct Resolver {
    layers: Vec<Map<String, Value>>,
    resolved: BTreeMap<String, Value>,
}

impl Resolver {
    /// `defaults` holds JSON literals; `flags` is any serializable struct whose `None` fields are unset.
    pub fn new(
        subcommand: &str,
        flags: &impl Serialize,
        config: Option<&Path>,
        defaults: &[(&str, &str)],
    ) -> CliResult<Self> {
        let flags = match serde_json::to_value(flags).map_err(|e| CliError::Config(e.to_string()))? {
            Value::Object(m) => normalize(m.into_iter().filter(|(_, v)| !v.is_null()).collect()),
            _ => Map::new(),
        };
        let mut layers = vec![flags];
        if let Some(path) = config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let table: toml::Table =
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            for section in [subcommand, "common"] {
                if let Some(v) = table.get(section) {
                    let json = serde_json::to_value(v).map_err(|e| CliError::Config(e.to_string()))?;
                    match json {
                        Value::Object(m) => layers.push(normalize(m)),
                        _ => return config_err(format!("section [{section}] must be a table")),
                    }
                }
            }
        }
        let mut d = Map::new();
        for (k, lit) in defaults {
            let v = serde_json::from_str(lit).expect("default literals are valid JSON");
            d.insert(k.to_string(), v);
        }
        layers.push(d);
        Ok(Self { layers, resolved: BTreeMap::new() })
    }

    fn lookup(&self, key: &str) -> Option<Value> {
        self.layers.iter().find_map(|l| l.get(key).cloned())
    }

    pub fn opt<T: DeserializeOwned>(&mut self, key: &str) -> CliResult<Option<T>> {
        let Some(v) = self.lookup(key) else { return Ok(None) };
        let t = serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("{key}: {e}")))?;
        self.resolved.insert(key.to_string(), v);
        Ok(Some(t))
    }

    pub fn get<T: DeserializeOwned>(&mut self, key: &str) -> CliResult<T> {
        self.opt(key)?.ok_or_else(|| CliError::Config(format!("missing value for {key}")))
    }

    pub fn positive(&mut self, key: &str) -> CliResult<f64> {
        let v: f64 = self.get(key)?;
        if !(v > 0.0 && v.is_finite()) {
            return config_err(format!("{key} must be positive, got {v}"));
        }
        Ok(v)
    }

    pub fn count(&mut self, key: &str) -> CliResult<usize> {
        let v: usize = self.get(key)?;
        if v < 1 {
            return config_err(format!("{key} must be at least 1"));
        }
        Ok(v)
    }

    pub fn grid(&mut self) -> CliResult<TorusGrid> {
        let n: usize = self.get("modes")?;
        let l0 = self.positive("half-period")?;
        if n < 4 || n % 2 != 0 {
            return config_err(format!("modes must be even and at least 4, got {n}"));
        }
        Ok(TorusGrid::new(l0, n)?)
    }

    /// Spectral point from `<prefix>-re/-im` if either is set, else `<prefix>-mod/-arg`.
    pub fn point(&mut self, prefix: &str, strict: bool) -> CliResult<SpectralPoint> {
        let re: Option<f64> = self.opt(&format!("{prefix}-re"))?;
        let im: Option<f64> = self.opt(&format!("{prefix}-im"))?;
        let p = match (re, im) {
            (None, None) => {
                let m = self.positive(&format!("{prefix}-mod"))?;
                let a: f64 = self.get(&format!("{prefix}-arg"))?;
                SpectralPoint::from_polar(m, a)?
            }
            (re, im) => SpectralPoint::new(num_complex::Complex64::new(re.unwrap_or(0.0), im.unwrap_or(0.0)))?,
        };
        let ok = if strict { p.is_strictly_admissible() } else { p.is_admissible() };
        if !ok {
            let kind = if strict { "strictly admissible" } else { "admissible" };
            return config_err(format!("{prefix} = {} is not {kind}", p.k()));
        }
        Ok(p)
    }

    /// Every value consulted so far, for the manifest.
    pub fn resolved(&self) -> &BTreeMap<String, Value> {
        &self.resolved
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Flags {
        modes: Option<usize>,
        half_period: Option<f64>,
    }

    #[test]
    fn precedence_is_flags_then_section_then_common_then_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[common]\nmodes = 32\nseed = 5\n[green]\nhalf_period = 2.0\nmodes = 16\n").unwrap();
        let defaults = [("modes", "64"), ("half-period", "8.0"), ("seed", "0"), ("samples", "10")];
        let flags = Flags { modes: Some(128), half_period: None };
        let mut r = Resolver::new("green", &flags, Some(&path), &defaults).unwrap();
        assert_eq!(r.get::<usize>("modes").unwrap(), 128);
        assert_eq!(r.get::<f64>("half-period").unwrap(), 2.0);
        assert_eq!(r.get::<u64>("seed").unwrap(), 5);
        assert_eq!(r.get::<usize>("samples").unwrap(), 10);
        assert_eq!(r.resolved().len(), 4);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let flags = Flags { modes: Some(7), half_period: None };
        let mut r = Resolver::new("green", &flags, None, &[("half-period", "8.0")]).unwrap();
        assert!(matches!(r.grid(), Err(CliError::Config(_))));
        let mut r = Resolver::new("green", &flags, None, &[("k-mod", "2.0"), ("k-arg", "1.0")]).unwrap();
        assert!(matches!(r.point("k", false), Err(CliError::Config(_))));
    }
}
