// Copyright 2026 cavmem contributors
// SPDX-License-Identifier: Apache-2.0

//! Run manifests: enough metadata to rerun a command and check its outputs.

use crate::config::{file_hash, RunConfig};
use crate::error::Result;
use serde_json::{json, Map, Value};
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug)]
pub struct Manifest {
    fields: Map<String, Value>,
    outputs: Map<String, Value>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        let mut fields = Map::new();
        fields.insert("command".into(), json!(command));
        fields.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        fields.insert("config_hash".into(), json!(config.hash()));
        fields.insert("config".into(), serde_json::to_value(config).expect("config serializes"));
        fields.insert("parallel".into(), json!(crate::par::is_parallel()));
        fields.insert("rng".into(), json!(crate::noise::RNG_ALGORITHM));
        Self { fields, outputs: Map::new() }
    }

    pub fn set(&mut self, key: &str, value: Value) -> &mut Self {
        self.fields.insert(key.into(), value);
        self
    }

    /// Records an output file by name and content hash.
    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.outputs.insert(name, json!(file_hash(path)?));
        Ok(self)
    }

    pub fn to_value(&self) -> Value {
        let mut m = self.fields.clone();
        m.insert("outputs".into(), Value::Object(self.outputs.clone()));
        Value::Object(m)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_value()).expect("manifest serializes");
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }
}
