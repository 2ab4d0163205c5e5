//! Name-keyed factories for interchangeable algorithm variants.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

type Factory<T, P> = Box<dyn Fn(&P) -> Result<Box<T>> + Send + Sync>;

/// Maps a variant name to a constructor taking shared parameters `P`.
pub struct Registry<T: ?Sized, P> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Factory<T, P>>,
}

impl<T: ?Sized, P> Registry<T, P> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Registers (or replaces) a factory under `name`.
    pub fn register<F>(&mut self, name: &'static str, factory: F) -> &mut Self
    where
        F: Fn(&P) -> Result<Box<T>> + Send + Sync + 'static,
    {
        self.entries.insert(name, Box::new(factory));
        self
    }

    pub fn create(&self, name: &str, params: &P) -> Result<Box<T>> {
        let factory = self.entries.get(name).ok_or_else(|| Error::UnknownStrategy {
            kind: self.kind,
            name: name.to_string(),
            available: self.names().join(", "),
        })?;
        factory(params)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }
}
