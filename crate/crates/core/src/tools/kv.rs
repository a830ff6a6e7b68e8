//! File-backed key to text lookup, standing in for outside data sources such
//! as regulations, equipment specifications or price lists.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde_json::Value;

use super::{ErrorCode, ParamType, ToolError, ToolHandler, ToolSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvStore {
    entries: BTreeMap<String, String>,
}

impl KvStore {
    pub fn new(entries: BTreeMap<String, String>) -> Self {
        Self { entries }
    }

    /// Reads a flat JSON object of string values.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries = serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Spec and handler for the `kv_lookup` tool over `store`.
pub fn kv_lookup_tool(store: KvStore) -> (ToolSpec, ToolHandler) {
    let spec = ToolSpec::new("kv_lookup", "Look up reference text (regulations, specifications, prices) by key.")
        .param("key", ParamType::String, true, "entry key");
    let store = Arc::new(store);
    let handler: ToolHandler = Arc::new(move |_, args| {
        let key = args["key"].as_str().unwrap_or_default();
        store
            .get(key)
            .map(|v| Value::String(v.to_string()))
            .ok_or_else(|| ToolError::new(ErrorCode::NotFound, format!("no entry for key `{key}`")))
    });
    (spec, handler)
}
