//! Name-keyed registries of interchangeable strategies.
//!
//! Each registry maps a name to a factory taking numeric parameters, so runs
//! can select drivers, terminal conditions and basis families from config.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{BsdeError, Result};

/// Numeric parameters of a registry entry, keyed by name.
pub type Params = BTreeMap<String, f64>;

type Factory<T> = Box<dyn Fn(&Params) -> Result<Box<T>> + Send + Sync>;

struct Entry<T: ?Sized> {
    params: &'static [&'static str],
    summary: &'static str,
    build: Factory<T>,
}

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Entry<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Register (or replace) `name`. `params` lists the accepted parameter keys.
    pub fn register<F>(&mut self, name: &str, params: &'static [&'static str], summary: &'static str, build: F)
    where
        F: Fn(&Params) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.entries.insert(
            name.to_string(),
            Entry {
                params,
                summary,
                build: Box::new(build),
            },
        );
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }

    pub fn summary(&self, name: &str) -> Option<&'static str> {
        self.entries.get(name).map(|e| e.summary)
    }

    pub fn build(&self, name: &str, params: &Params) -> Result<Box<T>> {
        let entry = self.entries.get(name).ok_or_else(|| BsdeError::UnknownName {
            kind: self.kind,
            name: name.to_string(),
        })?;
        if let Some(bad) = params.keys().find(|k| !entry.params.contains(&k.as_str())) {
            return Err(BsdeError::Config(format!(
                "{} `{name}` has no parameter `{bad}` (accepted: {})",
                self.kind,
                entry.params.join(", ")
            )));
        }
        if let Some((k, v)) = params.iter().find(|(_, v)| !v.is_finite()) {
            return Err(BsdeError::Config(format!("parameter `{k}` of `{name}` is not finite: {v}")));
        }
        (entry.build)(params)
    }
}

impl<T: ?Sized> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("names", &self.entries.keys().collect::<Vec<_>>())
            .finish()
    }
}

/// Parameter lookup with a default.
pub fn param(params: &Params, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

/// Build a [`Params`] map from pairs.
pub fn params<const N: usize>(pairs: [(&str, f64); N]) -> Params {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}
