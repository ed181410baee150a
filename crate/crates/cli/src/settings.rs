//! Merges flags, an optional `key=value` config file and defaults, and
//! records the resolved value of every setting for echoing.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use avsal_core::data::Domain;
use avsal_core::model::FusionMode;
use avsal_core::train::{parse_key_values, DaMode};

use crate::commands::PitchRange;
use crate::Failure;

/// Text form of a resolved value in the config echo.
pub trait Shown {
    fn shown(&self) -> String;
}

macro_rules! shown_via_display {
    ($($t:ty),*) => {$(
        impl Shown for $t {
            fn shown(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

shown_via_display!(usize, u64, f64, bool, String, DaMode, FusionMode, Domain, PitchRange);

impl Shown for PathBuf {
    fn shown(&self) -> String {
        self.display().to_string()
    }
}

pub struct Settings {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: Vec<(String, String)>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let file = match path {
            None => BTreeMap::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
                parse_key_values(&text)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
                    .into_iter()
                    .map(|(k, v)| (k.replace('-', "_"), v))
                    .collect()
            }
        };
        Ok(Settings {
            file,
            used: BTreeSet::new(),
            resolved: Vec::new(),
        })
    }

    fn lookup<T: FromStr>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, Failure> {
        self.used.insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Failure::Usage(format!("config: bad value {raw:?} for {key}"))),
        }
    }

    fn record(&mut self, key: &str, value: String) {
        self.resolved.push((key.to_string(), value));
    }

    /// Flag, else config file, else `default`.
    pub fn get<T: FromStr + Shown>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, Failure> {
        let v = self.lookup(key, flag)?.unwrap_or(default);
        self.record(key, v.shown());
        Ok(v)
    }

    /// Flag, else config file; missing is a usage error.
    pub fn require<T: FromStr + Shown>(&mut self, key: &str, flag: Option<T>) -> Result<T, Failure> {
        let v = self
            .lookup(key, flag)?
            .ok_or_else(|| Failure::Usage(format!("missing required setting --{}", key.replace('_', "-"))))?;
        self.record(key, v.shown());
        Ok(v)
    }

    pub fn optional<T: FromStr + Shown>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, Failure> {
        let v = self.lookup(key, flag)?;
        self.record(key, v.as_ref().map_or_else(|| "none".to_string(), T::shown));
        Ok(v)
    }

    /// Records a value computed from other settings.
    pub fn derived(&mut self, key: &str, value: impl std::fmt::Display) {
        self.record(key, value.to_string());
    }

    /// Rejects config-file keys that no setting consumed.
    pub fn finish(&self, command: &str) -> Result<(), Failure> {
        let unknown: Vec<&str> = self.file.keys().filter(|k| !self.used.contains(*k)).map(String::as_str).collect();
        if !unknown.is_empty() {
            return Err(Failure::Usage(format!("config: unknown key(s) for {command}: {}", unknown.join(", "))));
        }
        Ok(())
    }

    pub fn echo(&self, command: &str) {
        println!("avsal {command}: resolved config");
        for (k, v) in &self.resolved {
            println!("  {k} = {v}");
        }
    }
}
